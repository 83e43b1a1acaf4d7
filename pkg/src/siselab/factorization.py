"""Co-inner-outer factorization ``T = T_o T_i`` of the input-to-output map and
the estimation pipeline built on it.

``T(z) = H + C (zI - A)^-1 G`` is factored with an outer factor that keeps
``A`` and ``C`` and only changes the input matrices, and an inner (stable,
all-pass) factor ``T_i``. For zero feedthrough the biproper map ``z T(z)``
is factored instead, which keeps ``T_o`` strictly proper with the same
one-step delay as the plant.

The outer factor comes from the stabilizing solution of the filtering
Riccati equation of the spectral factorization, computed with the same RDE
kernel used for the stability analysis.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la

from . import _linalg as la_
from .errors import ConvergenceError, MarginalError, ShapeError, SiseError
from .model import LinearSystem
from .sise import DIFFUSE_P0, Estimates, ft_init, run_filter, zf_init
from .stability import iterate_rde, riccati_closed_loop

GRID_SIZE = 256
EDGE_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class Realization:
    """State-space realization ``(A, B, C, D)`` of a discrete-time system."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def freqresp(self, z):
        n = self.A.shape[0]
        return self.D + self.C @ np.linalg.solve(z * np.eye(n) - self.A, self.B)

    def to_system(self):
        """Realization as a :class:`LinearSystem` (``Q = 0``, ``R = I``)."""
        return LinearSystem(A=self.A, G=self.B, C=self.C, H=self.D,
                            Q=np.zeros_like(self.A), R=np.eye(self.C.shape[0]))


@dataclass(frozen=True, eq=False)
class Factorization:
    """Outer and inner factors of a plant's input-to-output map.

    ``outer`` shares ``A``, ``C``, ``Q``, ``R`` (and any known-input
    matrices) with the plant. ``inner`` is an ``n``-state realization whose
    state ``e`` satisfies ``x = x_outer + e`` for the same input history.
    """

    outer: LinearSystem
    inner: Realization
    shifted: bool
    X: np.ndarray
    iterations: int
    diagnostics: dict = field(default_factory=dict)


def _frequency_grid(size):
    return np.exp(1j * np.linspace(0.0, np.pi, size))


def transfer(sys, z):
    """``H + C (zI - A)^-1 G`` at the complex point ``z``."""
    return sys.H + sys.C @ np.linalg.solve(z * np.eye(sys.n) - sys.A, sys.G)


def allpass_deviation(realization, grid_size=GRID_SIZE):
    """``max_w |T(e^jw)^* T(e^jw) - I|_2`` over a frequency grid on ``[0, pi]``."""
    if isinstance(realization, LinearSystem):
        realization = Realization(realization.A, realization.G, realization.C,
                                  realization.H)
    m = realization.D.shape[1]
    worst = 0.0
    for z in _frequency_grid(grid_size):
        T = realization.freqresp(z)
        worst = max(worst, np.linalg.norm(T.conj().T @ T - np.eye(m), 2))
    return float(worst)


def _spectral_data(sys):
    """Biproper ``(C', D')`` realization of the map being factored."""
    if sys.zero_feedthrough:
        Cp, Dp, shifted = sys.C @ sys.A, sys.C @ sys.G, True
    else:
        Cp, Dp, shifted = sys.C, sys.H, False
    if la_.numerical_rank(Dp) < sys.m:
        raise ShapeError("factorization needs H or CG of full column rank m")
    return Cp, Dp, shifted


def _sqrtm_psd(S):
    w, V = np.linalg.eigh(la_.symmetrize(S))
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def inner_outer(sys, tol=1e-13, max_iter=100_000, grid_size=GRID_SIZE):
    """Co-inner-outer factorization of a square plant's input-to-output map.

    Returns:
        Factorization whose diagnostics hold the grid product mismatch, the
        inner all-pass deviation and the outer transmission zeros.

    Raises:
        MarginalError: the map has zeros on the unit circle.
        ConvergenceError: the Riccati iteration did not reach a stabilizing limit.
    """
    if sys.p != sys.m:
        raise ShapeError("inner-outer factorization is implemented for p == m")
    if not la_.is_schur(sys.A):
        raise ShapeError("inner-outer factorization needs a Schur-stable A")
    A, G, C = sys.A, sys.G, sys.C
    n, m = sys.n, sys.m
    Cp, Dp, shifted = _spectral_data(sys)
    R = Dp @ Dp.T
    Abar = A - G @ np.linalg.solve(Dp, Cp)
    zeros = np.linalg.eigvals(Abar)
    if np.any(np.abs(np.abs(zeros) - 1.0) <= la_.SCHUR_MARGIN):
        raise MarginalError("the map has transmission zeros on the unit circle")

    # Q term of the cross-term-free Riccati equation vanishes for square maps.
    res = iterate_rde(Abar, np.zeros((n, n)), Cp, R, X0=np.eye(n), tol=tol,
                      max_iter=max_iter)
    cl = riccati_closed_loop(res.X, Abar, Cp, R)
    if res.diverged or la_.spectral_radius(cl) >= 1.0 - la_.SCHUR_MARGIN:
        raise ConvergenceError(
            f"factorization Riccati iteration failed after {res.iterations} steps")
    X = res.X

    Re = la_.symmetrize(Cp @ X @ Cp.T + R)
    Hw = _sqrtm_psd(Re)
    Kp = np.linalg.solve(Re, (A @ X @ Cp.T + G @ Dp.T).T).T
    Gc = Kp @ Hw
    Hc = np.zeros((m, m)) if shifted else Hw
    outer = sys.replace(G=Gc, H=Hc)

    K = np.linalg.solve(Hw.T, Gc.T).T
    Hw_inv = np.linalg.inv(Hw)
    inner = Realization(A=A - K @ Cp, B=G - K @ Dp, C=Hw_inv @ Cp, D=Hw_inv @ Dp)

    if shifted:
        outer_zero_matrix = (np.eye(n) - Gc @ np.linalg.solve(C @ Gc, C)) @ A
    else:
        outer_zero_matrix = A - Gc @ np.linalg.solve(Hc, C)
    outer_zeros = np.linalg.eigvals(outer_zero_matrix)

    mismatch = 0.0
    for z in _frequency_grid(grid_size):
        prod = transfer(outer, z) @ inner.freqresp(z)
        mismatch = max(mismatch, float(np.max(np.abs(transfer(sys, z) - prod))))
    diagnostics = {
        "product_mismatch": mismatch,
        "allpass_deviation": allpass_deviation(inner, grid_size),
        "outer_zeros": [[float(z.real), float(z.imag)] for z in outer_zeros],
        "max_outer_zero_modulus": float(np.max(np.abs(outer_zeros))) if n else 0.0,
        "plant_zeros": [[float(z.real), float(z.imag)] for z in zeros],
        "inner_spectral_radius": la_.spectral_radius(inner.A),
        "riccati_iterations": res.iterations,
        "factored_map": "z T(z)" if shifted else "T(z)",
        "grid_size": grid_size,
    }
    return Factorization(outer=outer, inner=inner, shifted=shifted, X=X,
                         iterations=res.iterations, diagnostics=diagnostics)


def _inverse_realization(inner):
    Dinv = np.linalg.inv(inner.D)
    return Realization(A=inner.A - inner.B @ Dinv @ inner.C, B=inner.B @ Dinv,
                       C=-Dinv @ inner.C, D=Dinv)


def recover_d(dcheck, inner, mode="fixed_interval"):
    """Invert the inner factor over a whole recorded interval.

    The inverse of ``T_i`` is split into a causal part (poles inside the
    unit circle) run forward and an anti-causal part run backward from a
    zero terminal state.

    Args:
        dcheck: ``N x m`` estimates of the inner factor's output.
        inner: inner realization from :func:`inner_outer`.
        mode: only ``"fixed_interval"`` is supported.

    Returns:
        ``(d_hat, edge)`` where ``edge`` is the number of trailing samples
        affected by the terminal condition beyond ``1e-8`` relative.
    """
    if mode != "fixed_interval":
        raise NotImplementedError(
            f"mode {mode!r} is not supported; disturbance recovery is offline only")
    dcheck = np.asarray(dcheck, dtype=float)
    if dcheck.ndim == 1:
        dcheck = dcheck.reshape(-1, 1)
    inv = _inverse_realization(inner)
    n = inv.A.shape[0]
    N = len(dcheck)
    out = dcheck @ inv.D.T
    if n == 0:
        return out, 0
    T, Z, k = la.schur(inv.A, output="real", sort="iuc")
    mods = np.abs(np.linalg.eigvals(inv.A))
    if np.any(np.abs(mods - 1.0) <= la_.SCHUR_MARGIN):
        raise MarginalError("inner inverse has poles on the unit circle")
    T11, T12, T22 = T[:k, :k], T[:k, k:], T[k:, k:]
    Y = la.solve_sylvester(T11, -T22, -T12) if 0 < k < n else np.zeros((k, n - k))
    # block-diagonalizing similarity  W = Z [[I, Y], [0, I]]
    W = Z @ np.block([[np.eye(k), Y], [np.zeros((n - k, k)), np.eye(n - k)]])
    Winv = np.linalg.inv(W)
    Bm = Winv @ inv.B
    Cm = inv.C @ W
    edge = 0
    if k:
        A1, B1, C1 = T11, Bm[:k], Cm[:, :k]
        xi = np.zeros(k)
        for t in range(N):
            out[t] += C1 @ xi
            xi = A1 @ xi + B1 @ dcheck[t]
    if k < n:
        A2, B2, C2 = T22, Bm[k:], Cm[:, k:]
        A2inv = np.linalg.inv(A2)
        xi = np.zeros(n - k)
        for t in range(N - 1, -1, -1):
            xi = A2inv @ (xi - B2 @ dcheck[t])
            out[t] += C2 @ xi
        rho = la_.spectral_radius(A2inv)
        edge = int(np.ceil(np.log(EDGE_TOL) / np.log(rho))) if rho > 0 else 1
        edge = min(edge, N)
    return out, edge


@dataclass(frozen=True, eq=False)
class OuterEstimates:
    """Result of the outer-factor estimation pipeline.

    ``outer`` holds the causal SISE estimates of the outer factor's state and
    of the inner factor's output ``dcheck``. ``xhat`` and ``dhat`` are the
    offline plant-state and plant-input reconstructions (``None`` when the
    pipeline ran online only); their last ``edge`` samples carry the
    terminal-condition transient.
    """

    factorization: Factorization
    outer: object
    t: np.ndarray
    xhat_outer: np.ndarray
    dcheck: np.ndarray
    xhat: np.ndarray = None
    dhat: np.ndarray = None
    edge: int = None

    def as_estimates(self):
        """The reconstructed plant estimates (or the outer ones when online)
        in the common :class:`~siselab.sise.Estimates` layout."""
        est = self.outer
        offline = self.xhat is not None
        return Estimates(
            variant="outer-pipeline", t=est.t,
            xhat=self.xhat if offline else self.xhat_outer,
            dhat=self.dhat if offline else self.dcheck,
            P=est.P, innovations=est.innovations, K=est.K, M=est.M, X=est.X,
            P_min_eig=est.P_min_eig, d_offset=est.d_offset)


def estimate_via_outer(sys, ys, init=None, offline=True, factorization=None):
    """Stable input and state estimation through the outer factor.

    SISE is run on the outer factor, which is stably invertible by
    construction. With ``offline=True`` the inner factor is then inverted
    over the whole interval to reconstruct ``d`` and the inner state ``e``,
    giving the plant state as ``x = x_outer + e``.

    Args:
        sys: plant (square, Schur-stable ``A``).
        ys: measurements ``y[0..N]``.
        init: ``(x0, P0)`` for the outer SISE; zero mean and ``1e3 I`` by default.
        offline: also reconstruct ``d`` and the plant state.
        factorization: reuse a precomputed factorization.
    """
    fac = inner_outer(sys) if factorization is None else factorization
    outer = fac.outer
    x0, P0 = (None, None) if init is None else init
    x0 = np.zeros(sys.n) if x0 is None else np.asarray(x0, dtype=float)
    P0 = DIFFUSE_P0 * np.eye(sys.n) if P0 is None else P0
    try:
        if fac.shifted:
            est = run_filter(outer, ys, init=zf_init(outer, x0, P0))
        else:
            est = run_filter(outer, ys, init=ft_init(outer, x0, P0))
    except SiseError as exc:
        raise SiseError(f"no SISE engine applies to the outer factor: {exc}") from exc
    dcheck = est.dhat
    result = dict(factorization=fac, outer=est, t=est.t, xhat_outer=est.xhat,
                  dcheck=dcheck)
    if not offline:
        return OuterEstimates(**result)

    dhat, edge = recover_d(dcheck, fac.inner)
    # Inner state e is driven by d; x = x_outer + e. For the shifted case
    # dhat[k] is the input at time t[k] - 1, so e at t[k] follows it.
    Ai, Bi = fac.inner.A, fac.inner.B
    e = np.zeros(sys.n)
    E = np.empty_like(est.xhat)
    for k in range(len(dhat)):
        if fac.shifted:
            e = Ai @ e + Bi @ dhat[k]
            E[k] = e
        else:
            E[k] = e
            e = Ai @ e + Bi @ dhat[k]
    return OuterEstimates(xhat=est.xhat + E, dhat=dhat, edge=edge, **result)
