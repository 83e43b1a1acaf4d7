"""Plant representation, structural assumption checks, output transforms
and trajectory simulation.

The plant is

    x[t+1] = A x[t] + B u[t] + G d[t] + w[t]
    y[t]   = C x[t] + D u[t] + H d[t] + v[t]

with unknown input ``d``, optional known input ``u``, ``cov(w) = Q`` and
``cov(v) = R``.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _linalg as la_
from .errors import AssumptionViolation, ShapeError


@dataclass(frozen=True, eq=False)
class LinearSystem:
    """Discrete-time linear plant with an unknown input channel.

    Attributes:
        A: n x n state matrix.
        G: n x m unknown-input matrix.
        C: p x n output matrix.
        H: p x m unknown-input feedthrough (zeros allowed).
        Q: n x n process-noise covariance.
        R: p x p measurement-noise covariance.
        B: optional n x q known-input matrix.
        D: optional p x q known-input feedthrough.
    """

    A: np.ndarray
    G: np.ndarray
    C: np.ndarray
    H: np.ndarray = None
    Q: np.ndarray = None
    R: np.ndarray = None
    B: np.ndarray = None
    D: np.ndarray = None

    def __post_init__(self):
        A = la_.as_matrix(self.A, name="A")
        n = A.shape[0]
        if A.shape != (n, n):
            raise ShapeError(f"A must be square, got {A.shape}")
        G = la_.as_matrix(self.G, cols=1 if np.ndim(self.G) == 1 else None, name="G")
        C = la_.as_matrix(self.C, name="C")
        m, p = G.shape[1], C.shape[0]
        if G.shape[0] != n:
            raise ShapeError(f"G must have {n} rows, got {G.shape}")
        if C.shape[1] != n:
            raise ShapeError(f"C must have {n} columns, got {C.shape}")
        H = np.zeros((p, m)) if self.H is None else la_.as_matrix(self.H, name="H")
        if H.shape != (p, m):
            raise ShapeError(f"H must be {p}x{m}, got {H.shape}")
        Q = np.zeros((n, n)) if self.Q is None else la_.as_matrix(self.Q, name="Q")
        if Q.shape != (n, n):
            raise ShapeError(f"Q must be {n}x{n}, got {Q.shape}")
        R = np.eye(p) if self.R is None else la_.as_matrix(self.R, name="R")
        if R.shape != (p, p):
            raise ShapeError(f"R must be {p}x{p}, got {R.shape}")
        B, D = self.B, self.D
        if B is not None or D is not None:
            if B is None or D is None:
                raise ShapeError("known-input matrices B and D must be given together")
            B = la_.as_matrix(B, cols=1 if np.ndim(B) == 1 else None, name="B")
            D = la_.as_matrix(D, name="D")
            q = B.shape[1]
            if B.shape[0] != n or D.shape != (p, q):
                raise ShapeError(f"B must be {n}xq and D {p}xq, got {B.shape}, {D.shape}")
        for name, value in zip("AGCHQRBD", (A, G, C, H, Q, R, B, D)):
            if value is not None:
                value = value.copy()
                value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.G.shape[1]

    @property
    def p(self):
        return self.C.shape[0]

    @property
    def q(self):
        return 0 if self.B is None else self.B.shape[1]

    @property
    def zero_feedthrough(self):
        return la_.numerical_rank(self.H) == 0

    def replace(self, **changes):
        fields = {k: getattr(self, k) for k in "AGCHQRBD"}
        fields.update(changes)
        return LinearSystem(**fields)

    def to_dict(self):
        out = {k: getattr(self, k).tolist() for k in "AGCHQR"}
        if self.B is not None:
            out["B"] = self.B.tolist()
            out["D"] = self.D.tolist()
        return out


@dataclass(frozen=True, eq=False)
class TransformedSystem:
    """Output coordinates that split the measurement into a channel carrying
    the unknown input and a channel free of it.

    ``T @ y`` has rows ``[y1; y2]`` with ``y1 = C1 x + Hbar d1 + v1`` and
    ``y2 = C2 x + v2``; ``cov([v1; v2]) = diag(R1, R2)``. For the
    zero-feedthrough transform ``Hbar`` is empty and ``C1 @ G`` is invertible.
    For the feedthrough transform the input is rotated, ``d = V @ [d1; d2]``,
    so that ``G @ V = [G1, G2]``.
    """

    T: np.ndarray
    C1: np.ndarray
    C2: np.ndarray
    R1: np.ndarray
    R2: np.ndarray
    r: int
    G1: np.ndarray = None
    G2: np.ndarray = None
    Hbar: np.ndarray = None
    V: np.ndarray = None
    noise_cov: np.ndarray = field(default=None, repr=False)

    @property
    def cross_covariance(self):
        """Off-diagonal block of the transformed noise covariance."""
        return self.noise_cov[: self.r, self.r:]


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Sample path of the plant.

    ``states[t]`` and ``measurements[t]`` are indexed ``t = 0..horizon``;
    ``disturbances[t]`` is the input applied at time ``t``.
    """

    horizon: int
    states: np.ndarray
    disturbances: np.ndarray
    measurements: np.ndarray
    seed: int = None
    known_inputs: np.ndarray = None

    def __post_init__(self):
        N = self.horizon + 1
        if len(self.states) != N or len(self.measurements) != N:
            raise ShapeError("states and measurements need horizon + 1 rows")
        if len(self.disturbances) != N:
            raise ShapeError("disturbances need horizon + 1 rows")


@dataclass(frozen=True)
class AssumptionReport:
    """Verdicts for the four structural assumptions, with the numbers behind them."""

    n: int
    m: int
    p: int
    observable: bool
    unobservable_modes: list
    rank_G: int
    reachable: bool
    unreachable_modes: list
    R_min_eig: float
    assumption1: bool
    rank_CG: int
    cond_CG: float
    assumption2: bool
    rank_H: int
    cond_H: float
    assumption3: bool
    rank_C2G2: int
    assumption4: bool
    near_singular: list
    invertibility: dict

    def to_dict(self):
        out = dict(self.__dict__)
        for key in ("unobservable_modes", "unreachable_modes"):
            out[key] = [[z.real, z.imag] for z in out[key]]
        for key in ("cond_CG", "cond_H"):
            if not np.isfinite(out[key]):
                out[key] = None
        return out


NEAR_SINGULAR_COND = 1e8


def _rank_and_cond(M):
    r = la_.numerical_rank(M)
    return r, la_.condition_number(M) if r == min(M.shape) else np.inf


def validate(sys):
    """Check Assumptions 1-4 for ``sys``. Failed assumptions are reported,
    never raised.
    """
    n, m, p = sys.n, sys.m, sys.p
    unobs = la_.pbh_failing_modes(sys.A, sys.C, kind="observe")
    unreach = la_.pbh_failing_modes(sys.A, sys.Q, kind="reach")
    rank_G = la_.numerical_rank(sys.G)
    r_min = float(np.min(np.linalg.eigvalsh(la_.symmetrize(sys.R))))
    r_sym = np.allclose(sys.R, sys.R.T)
    a1 = not unobs and rank_G == m and not unreach and r_sym and r_min > 0

    CG = sys.C @ sys.G
    rank_CG, cond_CG = _rank_and_cond(CG)
    rank_H, cond_H = _rank_and_cond(sys.H)
    a2 = rank_CG == m
    a3 = rank_H == m

    # C2bar does not depend on R, so Assumption 4 is checked even when R is bad.
    U, _, Vt, r = la_.orthonormal_split(sys.H)
    C2G2 = U[:, r:].T @ sys.C @ sys.G @ Vt[r:].T
    rank_c2g2 = la_.numerical_rank(C2G2) if C2G2.size else 0
    a4 = rank_c2g2 == m - rank_H

    near = []
    if a2 and cond_CG > NEAR_SINGULAR_COND:
        near.append(f"CG counted full rank but condition number is {cond_CG:.2e}")
    if a3 and cond_H > NEAR_SINGULAR_COND:
        near.append(f"H counted full rank but condition number is {cond_H:.2e}")

    invert = {
        "assumption2": "left invertible with delay one (C(zI-A)^-1 G)" if a2 else None,
        "assumption3": "left invertible with delay zero (H + C(zI-A)^-1 G)" if a3 else None,
        "assumption4": "left invertible with delay one (H + C(zI-A)^-1 G)" if a4 else None,
    }
    return AssumptionReport(
        n=n, m=m, p=p,
        observable=not unobs, unobservable_modes=unobs,
        rank_G=rank_G, reachable=not unreach, unreachable_modes=unreach,
        R_min_eig=r_min, assumption1=bool(a1),
        rank_CG=rank_CG, cond_CG=cond_CG, assumption2=a2,
        rank_H=rank_H, cond_H=cond_H, assumption3=a3,
        rank_C2G2=rank_c2g2, assumption4=bool(a4),
        near_singular=near, invertibility=invert,
    )


def _transform_matrix(U, r, R):
    Ur, Uc = U[:, :r], U[:, r:]
    if Uc.shape[1]:
        RUc = R @ Uc
        top = Ur.T - Ur.T @ RUc @ np.linalg.solve(Uc.T @ RUc, Uc.T)
    else:
        top = Ur.T
    return np.vstack([top, Uc.T])


def transform_zero_feedthrough(sys):
    """Split the output so one channel sees ``d`` through ``C1 G`` and the
    other channel does not see ``d`` at all (``C2 G = 0``).
    """
    if sys.p < sys.m:
        raise ShapeError(f"need p >= m, got p={sys.p}, m={sys.m}")
    CG = sys.C @ sys.G
    U, _, _, r = la_.orthonormal_split(CG)
    if r < sys.m:
        raise AssumptionViolation(f"rank CG = {r} < m = {sys.m}", assumption=2)
    T = _transform_matrix(U, r, sys.R)
    TC = T @ sys.C
    cov = T @ sys.R @ T.T
    return TransformedSystem(
        T=T, C1=TC[:r], C2=TC[r:], R1=la_.symmetrize(cov[:r, :r]),
        R2=la_.symmetrize(cov[r:, r:]), r=r, noise_cov=cov,
    )


def transform_feedthrough(sys):
    """Split the output and rotate the input so the feedthrough becomes
    ``[[Hbar, 0], [0, 0]]`` with ``Hbar`` invertible of size ``rank H``.
    """
    U, s, Vt, r = la_.orthonormal_split(sys.H)
    if r == 0:
        raise AssumptionViolation("H is zero; use the zero-feedthrough transform",
                                  assumption=3)
    T = _transform_matrix(U, r, sys.R)
    TC = T @ sys.C
    cov = T @ sys.R @ T.T
    V = Vt.T
    GV = sys.G @ V
    return TransformedSystem(
        T=T, C1=TC[:r], C2=TC[r:], R1=la_.symmetrize(cov[:r, :r]),
        R2=la_.symmetrize(cov[r:, r:]), r=r, G1=GV[:, :r], G2=GV[:, r:],
        Hbar=np.diag(s[:r]), V=V, noise_cov=cov,
    )


def _sequence(values, length, width, name):
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1) if width == 1 else arr.reshape(1, -1)
    if arr.ndim != 2 or arr.shape[1] != width:
        raise ShapeError(f"{name} must have {width} columns")
    if len(arr) < length:
        raise ShapeError(f"{name} needs at least {length} rows, got {len(arr)}")
    return arr


def simulate(sys, d, x0=None, horizon=None, seed=0, noise_on=True, u=None):
    """Generate a sample path of the plant.

    Args:
        sys: the plant.
        d: disturbance sequence, at least ``horizon`` rows of length ``m``.
            When exactly ``horizon`` rows are given the input at the final
            time is taken as zero (it only reaches ``y[horizon]`` through H).
        x0: initial state, zeros by default.
        horizon: number of transitions; defaults to ``len(d)``.
        seed: seed for the Gaussian noise generator.
        noise_on: when false, ``w = v = 0`` exactly.
        u: optional known-input sequence (``horizon + 1`` rows).

    Returns:
        Trajectory with ``horizon + 1`` states and measurements.
    """
    n, m, p = sys.n, sys.m, sys.p
    if horizon is None:
        horizon = len(np.atleast_1d(d))
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    d = _sequence(d, horizon, m, "d")[: horizon + 1]
    if len(d) == horizon:
        d = np.vstack([d, np.zeros((1, m))])
    x0 = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).reshape(n)
    N = horizon + 1
    if u is not None:
        if sys.B is None:
            raise ShapeError("known input given but the system has no B, D")
        u = _sequence(u, N, sys.q, "u")[:N]

    if noise_on:
        rng = np.random.default_rng(seed)
        W = rng.standard_normal((N, n)) @ la_.psd_factor(sys.Q).T
        V = rng.standard_normal((N, p)) @ np.linalg.cholesky(la_.symmetrize(sys.R)).T
    else:
        W = np.zeros((N, n))
        V = np.zeros((N, p))

    X = np.empty((N, n))
    Y = np.empty((N, p))
    X[0] = x0
    for t in range(N):
        Y[t] = sys.C @ X[t] + sys.H @ d[t] + V[t]
        if u is not None:
            Y[t] += sys.D @ u[t]
        if t + 1 < N:
            X[t + 1] = sys.A @ X[t] + sys.G @ d[t] + W[t]
            if u is not None:
                X[t + 1] += sys.B @ u[t]
    return Trajectory(horizon=horizon, states=X, disturbances=d, measurements=Y,
                      seed=seed, known_inputs=u)
