"""Simultaneous input and state estimation (SISE) filters.

Two families are provided:

* zero feedthrough (``H = 0``, ``rank CG = m``): each step consumes ``y[t]``
  and emits the filtered state ``xhat[t|t]`` together with the smoothed
  input ``dhat[t-1|t]``;
* full-rank feedthrough (``rank H = m``): each step consumes ``y[t]`` and
  emits ``xhat[t|t]`` and ``dhat[t|t]``.

Every step accepts one measurement vector of length ``p`` or a ``p x B``
block of ``B`` independent measurement columns; gains and covariances do not
depend on the data, so a batch shares them.
"""

from dataclasses import dataclass

import numpy as np

from . import _linalg as la_
from .errors import AssumptionViolation, ShapeError, SingularityError, SiseError
from .model import LinearSystem

DIFFUSE_P0 = 1e3


@dataclass(frozen=True, eq=False)
class ZfFilterState:
    """Zero-feedthrough filter state after processing ``y[t]``."""

    xhat: np.ndarray
    P: np.ndarray
    t: int = 0
    X: np.ndarray = None
    K: np.ndarray = None
    M: np.ndarray = None
    dhat: np.ndarray = None
    innovation: np.ndarray = None


@dataclass(frozen=True, eq=False)
class FtFilterState:
    """Feedthrough filter state after processing ``y[t-1]``.

    ``xhat_pred``/``Px_pred`` hold the prediction for the next measurement;
    ``xhat``, ``dhat`` and the ``P*`` blocks are the filtered quantities of
    the last processed measurement.
    """

    xhat_pred: np.ndarray
    Px_pred: np.ndarray
    xhat: np.ndarray
    dhat: np.ndarray
    Px: np.ndarray
    Pd: np.ndarray
    Pxd: np.ndarray
    t: int = 0
    Rtilde: np.ndarray = None
    K: np.ndarray = None
    M: np.ndarray = None
    innovation: np.ndarray = None


def _vector(x, n, name):
    x = np.asarray(x, dtype=float)
    if x.shape[0] != n:
        raise ShapeError(f"{name} must have leading dimension {n}, got {x.shape}")
    return x


def _known_input(sys, u, which):
    if u is None:
        return 0.0
    if sys.B is None:
        raise ShapeError("known input given but the system has no B, D")
    u = np.asarray(u, dtype=float)
    return (sys.B if which == "B" else sys.D) @ u


def zf_init(sys, x0=None, P0=None):
    """Initial zero-feedthrough state ``xhat[0|0] = x0``, ``P[0] = P0``.

    Defaults are ``x0 = 0`` and the diffuse ``P0 = 1e3 I``.
    """
    n = sys.n
    x0 = np.zeros(n) if x0 is None else _vector(x0, n, "x0")
    P0 = DIFFUSE_P0 * np.eye(n) if P0 is None else la_.as_matrix(P0, name="P0")
    if P0.shape != (n, n):
        raise ShapeError(f"P0 must be {n}x{n}")
    la_.check_psd(P0, "P0")
    if la_.numerical_rank(sys.C @ sys.G) < sys.m:
        raise AssumptionViolation("rank CG < m", assumption=2)
    return ZfFilterState(xhat=x0.copy(), P=la_.symmetrize(P0), t=0)


def _zf_gains(sys, out, P, step):
    A, G, Q = sys.A, sys.G, sys.Q
    C, R = out.C, out.R
    X = la_.symmetrize(A @ P @ A.T + Q)
    S = C @ X @ C.T + R
    cS = la_.cholesky(S, "C X C' + R", step=step)
    F = C @ G
    SiF = la_.cho_solve(cS, F)
    N = F.T @ SiF
    try:
        cN = la_.cholesky(la_.symmetrize(N), "G'C'(CXC'+R)^-1 CG", step=step)
    except SingularityError as exc:
        raise SingularityError("G'C'(CXC'+R)^-1 CG is singular (Assumption 2 fails)",
                               condition=exc.condition, step=step) from None
    if la_.condition_number(N) > 1e14:
        raise SingularityError("G'C'(CXC'+R)^-1 CG is singular (Assumption 2 fails)",
                               condition=la_.condition_number(N), step=step)
    M = la_.cho_solve(cN, SiF.T)
    K = la_.cho_solve(cS, C @ X).T
    return X, K, M


def _zf_covariance(G, C, R, X, K, M):
    n = X.shape[0]
    I = np.eye(n)
    E = I - G @ M @ C
    GM = G @ M
    P = (I - K @ C) @ (E @ X @ E.T + GM @ R @ GM.T) + K @ R @ GM.T
    return la_.symmetrize(P)


def zf_step(state, sys, y, out=None, u_prev=None, u=None):
    """One zero-feedthrough SISE step on measurement ``y[t]``.

    Args:
        state: filter state holding ``xhat[t-1|t-1]`` and ``P[t-1]``.
        sys: system supplying ``A, G, Q`` (and ``B``) for the transition
            ``t-1 -> t``.
        y: measurement ``y[t]`` (length p, or p x B batch).
        out: system supplying ``C, R`` (and ``D``) at time ``t``;
            defaults to ``sys``.
        u_prev, u: known inputs ``u[t-1]`` and ``u[t]``.

    Returns:
        ZfFilterState with ``xhat[t|t]``, ``dhat[t-1|t]``, ``P[t]`` and the
        gains ``K[t]``, ``M[t]``.
    """
    out = sys if out is None else out
    step = state.t + 1
    X, K, M = _zf_gains(sys, out, state.P, step)
    C, G = out.C, sys.G
    y = _vector(y, out.p, "y")
    pred = sys.A @ state.xhat
    if u_prev is not None:
        pred = pred + _known_input(sys, u_prev, "B")
    resid = y - C @ pred
    if u is not None:
        resid = resid - _known_input(out, u, "D")
    dhat = M @ resid
    innov = resid - (C @ G) @ dhat
    xhat = pred + G @ dhat + K @ innov
    P = _zf_covariance(G, C, out.R, X, K, M)
    return ZfFilterState(xhat=xhat, P=P, t=step, X=X, K=K, M=M, dhat=dhat,
                         innovation=innov)


def zf_square_step(state, sys, y, out=None, u_prev=None, u=None):
    """Square (``p = m``) zero-feedthrough step.

    The estimate is ``dhat = (CG)^-1 (y - CA xhat)`` followed by the plant
    simulation ``xhat = A xhat + G dhat``; the innovation is zero by
    construction. ``P`` is still propagated for reporting.
    """
    out = sys if out is None else out
    if out.p != sys.m:
        raise ShapeError(f"square step needs p == m, got p={out.p}, m={sys.m}")
    step = state.t + 1
    CG = out.C @ sys.G
    if la_.numerical_rank(CG) < sys.m:
        raise SingularityError("CG is singular (Assumption 2 fails)",
                               condition=la_.condition_number(CG), step=step)
    y = _vector(y, out.p, "y")
    pred = sys.A @ state.xhat
    if u_prev is not None:
        pred = pred + _known_input(sys, u_prev, "B")
    resid = y - out.C @ pred
    if u is not None:
        resid = resid - _known_input(out, u, "D")
    dhat = np.linalg.solve(CG, resid)
    xhat = pred + sys.G @ dhat
    innov = resid - CG @ dhat

    X = la_.symmetrize(sys.A @ state.P @ sys.A.T + sys.Q)
    cS = la_.cholesky(out.C @ X @ out.C.T + out.R, "C X C' + R", step=step)
    K = la_.cho_solve(cS, out.C @ X).T
    M = np.linalg.inv(CG)
    P = _zf_covariance(sys.G, out.C, out.R, X, K, M)
    return ZfFilterState(xhat=xhat, P=P, t=step, X=X, K=K, M=M, dhat=dhat,
                         innovation=innov)


def ft_init(sys, x0=None, P0=None, d0=None, Pd0=None):
    """Initial feedthrough state.

    ``x0``/``P0`` are the prior mean and covariance of ``x[0]`` (the
    prediction used for ``y[0]``). ``d0``/``Pd0`` seed the reported
    disturbance estimate before any measurement arrives.
    """
    n, m = sys.n, sys.m
    x0 = np.zeros(n) if x0 is None else _vector(x0, n, "x0")
    d0 = np.zeros(m) if d0 is None else _vector(d0, m, "d0")
    P0 = DIFFUSE_P0 * np.eye(n) if P0 is None else la_.as_matrix(P0, name="P0")
    Pd0 = DIFFUSE_P0 * np.eye(m) if Pd0 is None else la_.as_matrix(Pd0, name="Pd0")
    if P0.shape != (n, n) or Pd0.shape != (m, m):
        raise ShapeError("P0 must be n x n and Pd0 m x m")
    la_.check_psd(P0, "P0")
    la_.check_psd(Pd0, "Pd0")
    if la_.numerical_rank(sys.H) < m:
        raise AssumptionViolation("rank H < m", assumption=3)
    P0 = la_.symmetrize(P0)
    return FtFilterState(xhat_pred=x0.copy(), Px_pred=P0, xhat=x0.copy(), dhat=d0.copy(),
                         Px=P0, Pd=la_.symmetrize(Pd0), Pxd=np.zeros((n, m)), t=0)


def _ft_update(state, sys, y, u, square):
    step = state.t
    C, H, R = sys.C, sys.H, sys.R
    Pp = state.Px_pred
    Rt = la_.symmetrize(C @ Pp @ C.T + R)
    cR = la_.cholesky(Rt, "C P C' + R", step=step)
    RiH = la_.cho_solve(cR, H)
    N = la_.symmetrize(H.T @ RiH)
    try:
        cN = la_.cholesky(N, "H' Rtilde^-1 H", step=step)
    except SingularityError as exc:
        raise SingularityError("H' Rtilde^-1 H is singular (Assumption 3 fails)",
                               condition=exc.condition, step=step) from None
    Pd = la_.symmetrize(la_.cho_solve(cN, np.eye(sys.m)))
    K = la_.cho_solve(cR, C @ Pp).T
    y = _vector(y, sys.p, "y")
    resid = y - C @ state.xhat_pred
    if u is not None:
        resid = resid - _known_input(sys, u, "D")
    if square:
        M = np.linalg.inv(H)
        dhat = np.linalg.solve(H, resid)
        xhat = state.xhat_pred.copy()
        innov = resid - H @ dhat
    else:
        M = Pd @ RiH.T
        dhat = M @ resid
        innov = resid - H @ dhat
        xhat = state.xhat_pred + K @ innov
    Px = la_.symmetrize(Pp - K @ (Rt - H @ Pd @ H.T) @ K.T)
    Pxd = -K @ H @ Pd
    return xhat, dhat, Px, Pd, Pxd, Rt, K, M, innov


def _ft_predict(sys, xhat, dhat, Px, Pd, Pxd, u):
    xpred = sys.A @ xhat + sys.G @ dhat
    if u is not None:
        xpred = xpred + _known_input(sys, u, "B")
    AG = np.hstack([sys.A, sys.G])
    J = np.block([[Px, Pxd], [Pxd.T, Pd]])
    Pp = la_.symmetrize(AG @ J @ AG.T + sys.Q)
    return xpred, Pp


def ft_step(state, sys, y, u=None):
    """One full-rank-feedthrough SISE step on measurement ``y[t]``.

    Args:
        state: state whose prediction ``xhat[t|t-1]`` matches ``y``.
        sys: system at time ``t``: ``C, H, R`` for the update and
            ``A, G, Q`` for the prediction of ``x[t+1]``.
        y: measurement ``y[t]``.
        u: known input ``u[t]``.
    """
    if la_.numerical_rank(sys.H) < sys.m:
        raise AssumptionViolation("rank H < m", assumption=3, step=state.t)
    return _ft(state, sys, y, u, square=False)


def ft_square_step(state, sys, y, u=None):
    """Square (``p = m``) feedthrough step: ``dhat = H^-1 (y - C xhat_pred)``
    and ``xhat[t|t] = xhat[t|t-1]``.
    """
    if sys.p != sys.m:
        raise ShapeError(f"square step needs p == m, got p={sys.p}, m={sys.m}")
    if la_.numerical_rank(sys.H) < sys.m:
        raise SingularityError("H is singular", condition=la_.condition_number(sys.H),
                               step=state.t)
    return _ft(state, sys, y, u, square=True)


def _ft(state, sys, y, u, square):
    xhat, dhat, Px, Pd, Pxd, Rt, K, M, innov = _ft_update(state, sys, y, u, square)
    xpred, Pp = _ft_predict(sys, xhat, dhat, Px, Pd, Pxd, u)
    return FtFilterState(xhat_pred=xpred, Px_pred=Pp, xhat=xhat, dhat=dhat, Px=Px,
                         Pd=Pd, Pxd=Pxd, t=state.t + 1, Rtilde=Rt, K=K, M=M,
                         innovation=innov)


@dataclass(frozen=True, eq=False)
class Estimates:
    """Estimate history produced by :func:`run_filter`.

    ``t[k]`` is the time of ``xhat[k]``. ``dhat[k]`` is the input at time
    ``t[k] + d_offset`` (``-1`` for the zero-feedthrough variants, ``0``
    otherwise).
    """

    variant: str
    t: np.ndarray
    xhat: np.ndarray
    dhat: np.ndarray
    P: np.ndarray
    innovations: np.ndarray
    K: np.ndarray = None
    M: np.ndarray = None
    X: np.ndarray = None
    P_min_eig: np.ndarray = None
    d_offset: int = 0

    @property
    def trP(self):
        return np.trace(self.P, axis1=1, axis2=2)


VARIANTS = ("zf", "zf_square", "ft", "ft_square")


def select_variant(sys):
    """Pick the SISE variant the structural assumptions allow."""
    if sys.zero_feedthrough:
        if la_.numerical_rank(sys.C @ sys.G) < sys.m:
            raise AssumptionViolation("H = 0 and rank CG < m: Assumption 2 fails",
                                      assumption=2)
        return "zf_square" if sys.p == sys.m else "zf"
    if la_.numerical_rank(sys.H) < sys.m:
        raise AssumptionViolation(
            "0 < rank H < m: only the stability test applies to this case, "
            "no filter recursion is provided", assumption=3)
    return "ft_square" if sys.p == sys.m else "ft"


def _provider(system):
    if isinstance(system, LinearSystem):
        return lambda t: system
    if callable(system):
        return system
    seq = list(system)
    return lambda t: seq[t]


def run_filter(system, ys, init=None, variant=None, us=None):
    """Run a SISE variant over a measurement sequence.

    Args:
        system: a LinearSystem, a callable ``t -> LinearSystem`` or a
            sequence indexed by time, giving the plant matrices at each
            time (transition ``t -> t+1`` and output at ``t``).
        ys: measurements ``y[0..N]`` as an ``(N+1) x p`` array.
        init: initial filter state (``zf_init``/``ft_init``); defaults to a
            zero mean with diffuse covariance.
        variant: one of ``VARIANTS``; chosen from the time-0 system if omitted.
        us: optional known inputs ``u[0..N]``.

    Zero-feedthrough variants treat ``init`` as ``xhat[0|0]`` and consume
    ``y[1..N]``; feedthrough variants treat it as the prior on ``x[0]`` and
    consume ``y[0..N]``.
    """
    get = _provider(system)
    sys0 = get(0)
    variant = variant or select_variant(sys0)
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    ys = np.asarray(ys, dtype=float)
    if ys.ndim == 1:
        ys = ys.reshape(-1, 1)
    rows = []
    zero_ft = variant.startswith("zf")
    if zero_ft:
        state = init if init is not None else zf_init(sys0)
        step = zf_square_step if variant == "zf_square" else zf_step
        times = range(1, len(ys))
    else:
        state = init if init is not None else ft_init(sys0)
        step = ft_square_step if variant == "ft_square" else ft_step
        times = range(len(ys))
    for t in times:
        try:
            if zero_ft:
                sys_prev, sys_t = get(t - 1), get(t)
                state = step(state, sys_prev, ys[t], out=sys_t,
                             u_prev=None if us is None else us[t - 1],
                             u=None if us is None else us[t])
                P = state.P
            else:
                sys_t = get(t)
                state = step(state, sys_t, ys[t], u=None if us is None else us[t])
                P = state.Px
        except SiseError as exc:
            if getattr(exc, "step", None) is None:
                exc.args = (f"step {t}: {exc.args[0]}",) + exc.args[1:]
                exc.step = t
            raise
        rows.append((t, state.xhat, state.dhat, P, state.innovation, state.K, state.M,
                     state.X if zero_ft else state.Px_pred))
    if not rows:
        raise ValueError("not enough measurements to run the filter")
    t, xh, dh, P, inn, K, M, X = (np.array(c) for c in zip(*rows))
    return Estimates(variant=variant, t=t, xhat=xh, dhat=dh, P=P, innovations=inn,
                     K=K, M=M, X=X, P_min_eig=np.linalg.eigvalsh(P)[:, 0],
                     d_offset=-1 if zero_ft else 0)

