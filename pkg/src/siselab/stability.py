"""A priori stability analysis for the SISE variants.

Square configurations are decided by the transmission zeros of the
input-to-output map (the SISE system matrix carries them as eigenvalues).
Non-square configurations are decided by detectability of a reduced pair and
by iterating the Riccati difference equation that the SISE covariance obeys.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _linalg as la_
from .errors import AssumptionViolation, ShapeError, SingularityError
from .model import transform_feedthrough, transform_zero_feedthrough
from .sise import _zf_covariance

DIVERGENCE_NORM = 1e12
MAX_ITER = 100_000
RDE_TOL = 1e-12


def sise_matrix_square_zf(sys):
    """``(I - G (CG)^-1 C) A`` for the square zero-feedthrough case."""
    if sys.p != sys.m:
        raise ShapeError(f"square case needs p == m, got p={sys.p}, m={sys.m}")
    CG = sys.C @ sys.G
    if la_.numerical_rank(CG) < sys.m:
        raise SingularityError("CG is singular", condition=la_.condition_number(CG))
    Pi = sys.G @ np.linalg.solve(CG, sys.C)
    return (np.eye(sys.n) - Pi) @ sys.A


def sise_matrix_square_ft(sys):
    """``A - G H^-1 C`` for the square full-rank feedthrough case."""
    if sys.p != sys.m:
        raise ShapeError(f"square case needs p == m, got p={sys.p}, m={sys.m}")
    if la_.numerical_rank(sys.H) < sys.m:
        raise SingularityError("H is singular", condition=la_.condition_number(sys.H))
    return sys.A - sys.G @ np.linalg.solve(sys.H, sys.C)


def transmission_zeros_square(sys):
    """Transmission zeros of ``zC(zI-A)^-1 G`` (``H = 0``) or of
    ``H + C(zI-A)^-1 G`` (``H`` invertible), as eigenvalues of the matching
    SISE system matrix.
    """
    if sys.p != sys.m:
        raise ShapeError("transmission zeros are computed for square systems only")
    M = sise_matrix_square_zf(sys) if sys.zero_feedthrough else sise_matrix_square_ft(sys)
    return _sorted(np.linalg.eigvals(M))


def _sorted(z):
    z = np.asarray(z, dtype=complex)
    return z[np.lexsort((z.imag, z.real))]


@dataclass(frozen=True)
class Detectability:
    detectable: bool
    failing_modes: list

    def __bool__(self):
        return self.detectable


def detectable(A, C):
    """PBH detectability of ``[A, C]``: every eigenvalue with modulus at least
    one must keep ``[A - lam I; C]`` at full column rank. ``C`` may have zero rows.
    """
    A = np.asarray(A, dtype=float)
    C = np.asarray(C, dtype=float).reshape(-1, A.shape[0])
    failing = la_.pbh_failing_modes(A, C, kind="observe", region="unstable")
    return Detectability(not failing, failing)


def stabilizable(A, B):
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    failing = la_.pbh_failing_modes(A, B, kind="reach", region="unstable")
    return Detectability(not failing, failing)


@dataclass(frozen=True, eq=False)
class RdeResult:
    """Outcome of a Riccati difference equation iteration.

    ``converged`` requires both contraction below ``tol`` and a Schur
    closed-loop matrix at the limit; ``diverged`` is set when the iterate
    norm passes the divergence threshold.
    """

    X: np.ndarray
    iterations: int
    converged: bool
    diverged: bool
    closed_loop: np.ndarray
    closed_loop_radius: float
    step_size: float


def riccati_step(X, Abar, Qbar, C2, R2):
    """``Abar X Abar' - Abar X C2' (C2 X C2' + R2)^-1 C2 X Abar' + Qbar``.

    Evaluated as ``Abar P Abar' + Qbar`` with the Joseph-form update
    ``P = (I - K C2) X (I - K C2)' + K R2 K'``; this avoids the cancellation
    between the two large terms when ``Abar`` has strongly unstable modes.
    """
    if not C2.shape[0]:
        return la_.symmetrize(Abar @ X @ Abar.T + Qbar)
    S = la_.symmetrize(C2 @ X @ C2.T + R2)
    cS = la_.cholesky(S, "C2 X C2' + R2")
    K = la_.cho_solve(cS, C2 @ X).T
    E = np.eye(X.shape[0]) - K @ C2
    P = la_.symmetrize(E @ X @ E.T + K @ R2 @ K.T)
    return la_.symmetrize(Abar @ P @ Abar.T + Qbar)


def riccati_closed_loop(X, Abar, C2, R2):
    if not C2.shape[0]:
        return Abar.copy()
    S = C2 @ X @ C2.T + R2
    L = Abar @ X @ C2.T @ np.linalg.inv(S)
    return Abar - L @ C2


def iterate_rde(Abar, Qbar, C2, R2, X0=None, tol=RDE_TOL, max_iter=MAX_ITER,
                divergence=DIVERGENCE_NORM):
    """Iterate the RDE from ``X0`` until contraction or divergence.

    Contraction is measured as ``max|X[k+1] - X[k]| < tol * max(1, max|X[k+1]|)``.
    """
    n = Abar.shape[0]
    X = np.zeros((n, n)) if X0 is None else la_.check_psd(la_.as_matrix(X0), "X0")
    if X.shape != (n, n):
        raise ShapeError(f"X0 must be {n}x{n}")
    C2 = np.asarray(C2, dtype=float).reshape(-1, n)
    R2 = np.asarray(R2, dtype=float).reshape(C2.shape[0], C2.shape[0])
    diverged = False
    delta = np.inf
    k = 0
    for k in range(1, max_iter + 1):
        nxt = riccati_step(X, Abar, Qbar, C2, R2)
        scale = float(np.max(np.abs(nxt))) if n else 0.0
        delta = float(np.max(np.abs(nxt - X))) if n else 0.0
        X = nxt
        if not np.isfinite(scale) or scale > divergence:
            diverged = True
            break
        if delta < tol * max(1.0, scale):
            break
    cl = riccati_closed_loop(X, Abar, C2, R2) if not diverged else Abar.copy()
    rho = la_.spectral_radius(cl) if n else 0.0
    contracted = delta < tol * max(1.0, float(np.max(np.abs(X))) if n else 1.0)
    converged = bool(not diverged and contracted and rho < 1.0 - la_.SCHUR_MARGIN)
    return RdeResult(X=X, iterations=k, converged=converged, diverged=diverged,
                     closed_loop=cl, closed_loop_radius=rho, step_size=delta)


def zf_riccati_data(sys, ts=None):
    """``(Abar, Qbar, C2, R2)`` of the zero-feedthrough RDE.

    ``Abar = A (I - G (C1 G)^-1 C1)`` and
    ``Qbar = A G (C1 G)^-1 R1 (G (C1 G)^-1)' A' + Q``.
    """
    ts = transform_zero_feedthrough(sys) if ts is None else ts
    return _zf_data(sys.A, sys.G, ts.C1, ts.C2, ts.R1, ts.R2, sys.Q)


def _zf_data(A, G, C1, C2, R1, R2, Q):
    n = A.shape[0]
    GZ = G @ np.linalg.inv(C1 @ G)
    Abar = A @ (np.eye(n) - GZ @ C1)
    AGZ = A @ GZ
    Qbar = la_.symmetrize(AGZ @ R1 @ AGZ.T + Q)
    return Abar, Qbar, C2, R2


def _ft_data(A, G1, Hbar, C1, C2, R1, R2, Q):
    GH = G1 @ np.linalg.inv(Hbar)
    Ahat = A - GH @ C1
    Qhat = la_.symmetrize(Q + GH @ R1 @ GH.T)
    return Ahat, Qhat, C2, R2


def ft_riccati_data(sys, ts=None):
    """``(Ahat, Qhat, C2bar, R2bar)`` of the full-rank feedthrough RDE.

    ``Ahat = A - G Hbar^-1 C1bar`` and ``Qhat = Q + G Hbar^-1 R1bar Hbar^-T G'``,
    with ``G`` expressed in the rotated input coordinates.
    """
    ts = transform_feedthrough(sys) if ts is None else ts
    if ts.r < sys.m:
        raise AssumptionViolation(f"rank H = {ts.r} < m = {sys.m}", assumption=3)
    return _ft_data(sys.A, ts.G1, ts.Hbar, ts.C1, ts.C2, ts.R1, ts.R2, sys.Q)


def rde_zf(sys, X0=None, tol=RDE_TOL, max_iter=MAX_ITER, ts=None):
    """Iterate the zero-feedthrough RDE; see :func:`iterate_rde`."""
    return iterate_rde(*zf_riccati_data(sys, ts), X0=X0, tol=tol, max_iter=max_iter)


def rde_ft(sys, X0=None, tol=RDE_TOL, max_iter=MAX_ITER, ts=None):
    """Iterate the full-rank feedthrough RDE; see :func:`iterate_rde`."""
    return iterate_rde(*ft_riccati_data(sys, ts), X0=X0, tol=tol, max_iter=max_iter)


def rde_tv_step(X, A, G, C1, C2, R1, R2, Q, Hbar=None):
    """One time-varying RDE step.

    Zero feedthrough (``Hbar`` omitted): ``A`` is ``A[t]``, ``G`` is
    ``G[t-1]`` and ``C1, C2, R1, R2`` come from the output transform at time
    ``t``. Feedthrough: all matrices belong to time ``t`` and ``G`` is the
    rotated ``G1[t]``.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    C2 = np.asarray(C2, dtype=float).reshape(-1, n)
    R2 = np.asarray(R2, dtype=float).reshape(C2.shape[0], C2.shape[0])
    if Hbar is None:
        C1G = C1 @ G
        if la_.numerical_rank(C1G) < C1G.shape[0]:
            raise SingularityError("C1 G is singular", condition=la_.condition_number(C1G))
        data = _zf_data(A, G, C1, C2, R1, R2, Q)
    else:
        if la_.numerical_rank(Hbar) < Hbar.shape[0]:
            raise SingularityError("Hbar is singular", condition=la_.condition_number(Hbar))
        data = _ft_data(A, G, Hbar, C1, C2, R1, R2, Q)
    return riccati_step(X, *data)


def zf_gains_from_X(sys, X):
    """Gains ``K, M`` and covariance ``P`` implied by a predicted covariance ``X``."""
    C, G, R = sys.C, sys.G, sys.R
    S = C @ X @ C.T + R
    F = C @ G
    SiF = np.linalg.solve(S, F)
    M = np.linalg.solve(F.T @ SiF, SiF.T)
    K = np.linalg.solve(S, C @ X).T
    return K, M, _zf_covariance(G, C, R, X, K, M)


def zf_closed_loop(sys, X):
    """Limiting SISE matrix ``(I - K C)(I - G M C) A`` at predicted covariance ``X``."""
    K, M, _ = zf_gains_from_X(sys, X)
    I = np.eye(sys.n)
    return (I - K @ sys.C) @ (I - sys.G @ M @ sys.C) @ sys.A


def ft_closed_loop(sys, X):
    """Limiting feedthrough prediction matrix ``A - L C`` with
    ``L = A K - A K H M + G M`` at predicted covariance ``X``.
    """
    C, H, R = sys.C, sys.H, sys.R
    Rt = C @ X @ C.T + R
    RiH = np.linalg.solve(Rt, H)
    M = np.linalg.solve(H.T @ RiH, RiH.T)
    K = np.linalg.solve(Rt, C @ X).T
    L = sys.A @ K - sys.A @ K @ H @ M + sys.G @ M
    return sys.A - L @ C


@dataclass(frozen=True, eq=False)
class StabilityReport:
    """A priori stability verdict for one plant."""

    variant: str
    verdict: str
    sise_system_matrix: np.ndarray
    eigenvalues: np.ndarray
    transmission_zeros: np.ndarray = None
    detectability_pair: tuple = None
    detectable: bool = None
    undetectable_modes: list = field(default_factory=list)
    rde_limit: np.ndarray = None
    rde_iterations: int = None
    rde_converged: bool = None
    stabilizability_transfer: bool = None
    notes: list = field(default_factory=list)

    @property
    def stable(self):
        return self.verdict == "stable"

    def to_dict(self):
        def pairs(z):
            return None if z is None else [[float(np.real(v)), float(np.imag(v))] for v in z]

        def mat(M):
            return None if M is None else np.asarray(M).tolist()

        return {
            "variant": self.variant,
            "verdict": self.verdict,
            "sise_system_matrix": mat(self.sise_system_matrix),
            "eigenvalues": pairs(self.eigenvalues),
            "transmission_zeros": pairs(self.transmission_zeros),
            "detectability_pair": None if self.detectability_pair is None
            else [mat(M) for M in self.detectability_pair],
            "detectable": self.detectable,
            "undetectable_modes": pairs(self.undetectable_modes),
            "rde_limit": mat(self.rde_limit),
            "rde_iterations": self.rde_iterations,
            "rde_converged": self.rde_converged,
            "stabilizability_transfer": self.stabilizability_transfer,
            "notes": list(self.notes),
        }


def classify(eigenvalues, margin=la_.SCHUR_MARGIN):
    """``stable`` / ``marginal`` / ``unstable`` from a list of poles."""
    mods = np.abs(np.asarray(eigenvalues, dtype=complex))
    if not mods.size or np.all(mods < 1.0 - margin):
        return "stable"
    if np.any(mods > 1.0 + margin):
        return "unstable"
    return "marginal"


def verdict(sys, tol=RDE_TOL, max_iter=MAX_ITER):
    """Decide stability of whichever SISE variant applies to ``sys``.

    Square plants are decided by transmission zeros; non-square plants by
    detectability of the reduced pair and RDE convergence; plants with
    ``0 < rank H < m`` by the detectability test alone (no filter for that
    case is provided here).
    """
    m, p = sys.m, sys.p
    zero_ft = sys.zero_feedthrough
    rank_H = la_.numerical_rank(sys.H)
    if zero_ft:
        if la_.numerical_rank(sys.C @ sys.G) < m:
            raise AssumptionViolation("no applicable SISE variant: H = 0 and rank CG < m",
                                      assumption=2)
        if p == m:
            M = sise_matrix_square_zf(sys)
            z = _sorted(np.linalg.eigvals(M))
            return StabilityReport(variant="zf_square", verdict=classify(z),
                                   sise_system_matrix=M, eigenvalues=z,
                                   transmission_zeros=z)
        ts = transform_zero_feedthrough(sys)
        data = zf_riccati_data(sys, ts)
        return _nonsquare_report("zf", sys, data, tol, max_iter, zf_closed_loop)
    if rank_H == m:
        if p == m:
            M = sise_matrix_square_ft(sys)
            z = _sorted(np.linalg.eigvals(M))
            return StabilityReport(variant="ft_square", verdict=classify(z),
                                   sise_system_matrix=M, eigenvalues=z,
                                   transmission_zeros=z)
        data = ft_riccati_data(sys)
        return _nonsquare_report("ft", sys, data, tol, max_iter, ft_closed_loop)

    ts = transform_feedthrough(sys)
    C2G2 = ts.C2 @ ts.G2
    if la_.numerical_rank(C2G2) != m - ts.r:
        raise AssumptionViolation(
            "no applicable SISE variant: 0 < rank H < m and Assumption 4 fails",
            assumption=4)
    Ared = sys.A - ts.G1 @ np.linalg.solve(ts.Hbar, ts.C1)
    det = detectable(Ared, ts.C2)
    eig = _sorted(np.linalg.eigvals(Ared))
    if det.detectable:
        v = "stable"
    else:
        v = classify(det.failing_modes)
        v = "marginal" if v == "stable" else v
    return StabilityReport(
        variant="ulise_prediction", verdict=v, sise_system_matrix=Ared, eigenvalues=eig,
        detectability_pair=(Ared, ts.C2), detectable=det.detectable,
        undetectable_modes=det.failing_modes,
        notes=["rank-deficient feedthrough: verdict is a prediction for the general "
               "feedthrough recursion, which this package does not implement"])


def _nonsquare_report(variant, sys, data, tol, max_iter, closed_loop_fn):
    Abar, Qbar, C2, R2 = data
    det = detectable(Abar, C2)
    notes = []
    try:
        res = iterate_rde(Abar, Qbar, C2, R2, tol=tol, max_iter=max_iter)
    except SingularityError as exc:
        res = None
        notes.append(f"RDE iteration failed: {exc}")
    transfer = None
    if variant == "zf":
        reach = stabilizable(sys.A, la_.psd_factor(sys.Q)).detectable
        transfer = (not reach) or stabilizable(Abar, la_.psd_factor(Qbar)).detectable
    if res is not None and res.converged:
        M = closed_loop_fn(sys, res.X)
        eig = _sorted(np.linalg.eigvals(M))
        v = classify(eig)
    else:
        M = Abar
        eig = _sorted(np.linalg.eigvals(Abar))
        if det.failing_modes:
            v = classify(det.failing_modes)
            v = "marginal" if v == "stable" else v
        else:
            v = "marginal" if res is not None and not res.diverged else "unstable"
            notes.append("pair is detectable but the RDE did not converge")
    return StabilityReport(
        variant=variant, verdict=v, sise_system_matrix=M, eigenvalues=eig,
        detectability_pair=(Abar, C2), detectable=det.detectable,
        undetectable_modes=det.failing_modes,
        rde_limit=None if res is None else res.X,
        rde_iterations=None if res is None else res.iterations,
        rde_converged=None if res is None else res.converged,
        stabilizability_transfer=transfer, notes=notes)
