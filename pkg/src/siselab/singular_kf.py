"""Kalman filtering on the disturbance-augmented model.

The unknown input is modelled as white noise of large variance ``D``:

    [x; d][t+1] = [[A, G], [0, 0]] [x; d][t] + [w; delta][t],  cov(delta) = D I
    y[t]        = [C, H] [x; d][t] + v[t]

As ``D`` grows the filter's state estimate approaches the SISE estimate
whenever SISE is stable.
"""

from dataclasses import dataclass

import numpy as np

from . import _linalg as la_
from .errors import NumericalLimitError, ShapeError, UnstableEstimatorError
from .sise import DIFFUSE_P0, Estimates, run_filter, zf_init, ft_init
from .stability import verdict

BLOWUP_FACTOR = 1e14


@dataclass(frozen=True, eq=False)
class AugmentedModel:
    F: np.ndarray
    Qa: np.ndarray
    Ca: np.ndarray
    R: np.ndarray
    D: float
    n: int
    m: int
    Ba: np.ndarray = None
    Da: np.ndarray = None


@dataclass(frozen=True, eq=False)
class AkfState:
    z: np.ndarray
    P: np.ndarray
    t: int = 0
    K: np.ndarray = None
    innovation: np.ndarray = None

    def x(self, n):
        return self.z[:n]


def augment(sys, D=1e8, factorization=None):
    """Build the augmented model for ``sys`` or, when a factorization is
    given, for its outer factor (same ``A``, ``C``; new input matrices).
    """
    if D < 0:
        raise ValueError("pseudo-variance D must be non-negative")
    if factorization is not None:
        sys = factorization.outer
    n, m = sys.n, sys.m
    F = np.block([[sys.A, sys.G], [np.zeros((m, n)), np.zeros((m, m))]])
    Qa = np.block([[sys.Q, np.zeros((n, m))], [np.zeros((m, n)), D * np.eye(m)]])
    Ca = np.hstack([sys.C, sys.H])
    Ba = Da = None
    if sys.B is not None:
        Ba = np.vstack([sys.B, np.zeros((m, sys.q))])
        Da = sys.D
    return AugmentedModel(F=F, Qa=Qa, Ca=Ca, R=sys.R.copy(), D=float(D), n=n, m=m,
                          Ba=Ba, Da=Da)


def akf_init(model, x0=None, P0=None, d0=None, Pd0=None):
    """Filtered estimate at time 0; the disturbance block defaults to ``D I``."""
    n, m = model.n, model.m
    x0 = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float)
    d0 = np.zeros(m) if d0 is None else np.asarray(d0, dtype=float)
    P0 = DIFFUSE_P0 * np.eye(n) if P0 is None else np.asarray(P0, dtype=float)
    Pd0 = model.D * np.eye(m) if Pd0 is None else np.asarray(Pd0, dtype=float)
    la_.check_psd(P0, "P0")
    P = np.block([[P0, np.zeros((n, m))], [np.zeros((m, n)), Pd0]])
    return AkfState(z=np.concatenate([x0, d0]), P=P, t=0)


def akf_predict(state, model, u=None):
    z = model.F @ state.z
    if u is not None:
        z = z + model.Ba @ np.asarray(u, dtype=float)
    P = la_.symmetrize(model.F @ state.P @ model.F.T + model.Qa)
    return z, P


def akf_update(z, P, model, y, t, u=None):
    Ca, R = model.Ca, model.R
    S = la_.symmetrize(Ca @ P @ Ca.T + R)
    cS = la_.cholesky(S, "innovation covariance", step=t)
    K = la_.cho_solve(cS, Ca @ P).T
    innov = np.asarray(y, dtype=float) - Ca @ z
    if u is not None:
        innov = innov - model.Da @ np.asarray(u, dtype=float)
    z = z + K @ innov
    I_KC = np.eye(len(z)) - K @ Ca
    P = la_.symmetrize(I_KC @ P @ I_KC.T + K @ R @ K.T)
    limit = BLOWUP_FACTOR * max(model.D, 1.0)
    if not np.all(np.isfinite(P)) or np.max(np.abs(np.diag(P))) > limit:
        raise NumericalLimitError(
            f"step {t}: augmented covariance exceeded {limit:.1e}; "
            "use the SISE engine for the unbounded-variance limit")
    return z, P, K, innov


def akf_step(state, model, y, u_prev=None, u=None):
    """Predict from ``t-1`` to ``t`` and update with ``y[t]`` (Joseph form)."""
    z, P = akf_predict(state, model, u_prev)
    z, P, K, innov = akf_update(z, P, model, y, state.t + 1, u)
    return AkfState(z=z, P=P, t=state.t + 1, K=K, innovation=innov)


def run_akf(model, ys, init=None, us=None):
    """Filter ``y[1..N]`` starting from ``init`` (filtered estimate at ``t = 0``).

    Returns an :class:`Estimates` whose ``dhat`` rows are the filtered
    augmented-input estimates at the same time as ``xhat``.
    """
    ys = np.asarray(ys, dtype=float)
    if ys.ndim == 1:
        ys = ys.reshape(-1, 1)
    if ys.shape[1] != model.Ca.shape[0]:
        raise ShapeError("measurement width does not match the model")
    state = init if init is not None else akf_init(model)
    n = model.n
    rows = []
    for t in range(1, len(ys)):
        state = akf_step(state, model, ys[t],
                         u_prev=None if us is None else us[t - 1],
                         u=None if us is None else us[t])
        rows.append((t, state.z[:n], state.z[n:], state.P[:n, :n], state.innovation,
                     state.K))
    t, xh, dh, P, inn, K = (np.array(c) for c in zip(*rows))
    return Estimates(variant="akf", t=t, xhat=xh, dhat=dh, P=P, innovations=inn, K=K,
                     P_min_eig=np.linalg.eigvalsh(P)[:, 0], d_offset=0)


def akf_filter(sys, ys, D=1e8, x0=None, P0=None, us=None):
    """Augmented KF aligned with SISE's conventions for ``sys``.

    ``x0``/``P0`` play the same role as in :func:`siselab.sise.run_filter`:
    the filtered estimate at ``t = 0`` for zero feedthrough, the prior on
    ``x[0]`` otherwise. In the feedthrough case ``y[0]`` is absorbed by an
    initial update and the returned history starts at ``t = 0``.
    """
    ys = np.asarray(ys, dtype=float)
    if ys.ndim == 1:
        ys = ys.reshape(-1, 1)
    x0 = np.zeros(sys.n) if x0 is None else np.asarray(x0, dtype=float)
    P0 = DIFFUSE_P0 * np.eye(sys.n) if P0 is None else np.asarray(P0, dtype=float)
    model = augment(sys, D)
    init = akf_init(model, x0, P0)
    if sys.zero_feedthrough:
        return run_akf(model, ys, init=init, us=us)
    z, P, K, innov = akf_update(init.z, init.P, model, ys[0], 0,
                               None if us is None else us[0])
    rest = run_akf(model, ys, init=AkfState(z=z, P=P, t=0), us=us)
    n = sys.n
    return Estimates(
        variant="akf", t=np.concatenate([[0], rest.t]),
        xhat=np.vstack([z[:n], rest.xhat]), dhat=np.vstack([z[n:], rest.dhat]),
        P=np.concatenate([P[None, :n, :n], rest.P]),
        innovations=np.vstack([innov, rest.innovations]),
        K=np.concatenate([K[None], rest.K]),
        P_min_eig=np.concatenate([[np.linalg.eigvalsh(P[:n, :n])[0]], rest.P_min_eig]),
        d_offset=0)


def equivalence_gap(sys, trajectory, D=1e8, horizon=None, burn_in=50, x0=None, P0=None):
    """Largest relative gap between SISE and augmented-KF state estimates.

    ``max_t |xhat_sise - xhat_akf|_inf / (1 + |xhat_sise|_inf)`` over
    ``burn_in <= t <= horizon``. Both filters start from the same filtered
    estimate ``x0``/``P0`` at ``t = 0`` and consume ``y[1..horizon]``.

    Raises:
        UnstableEstimatorError: SISE is not predicted stable for ``sys``.
    """
    rep = verdict(sys)
    if not rep.stable:
        raise UnstableEstimatorError(
            f"SISE is {rep.verdict} for this plant; the equivalence only holds for "
            "stable SISE. Use siselab.factorization.estimate_via_outer instead.")
    ys = np.asarray(trajectory.measurements if hasattr(trajectory, "measurements")
                    else trajectory, dtype=float)
    if horizon is not None:
        ys = ys[: horizon + 1]
    x0 = np.zeros(sys.n) if x0 is None else np.asarray(x0, dtype=float)
    P0 = DIFFUSE_P0 * np.eye(sys.n) if P0 is None else P0
    init = zf_init(sys, x0, P0) if sys.zero_feedthrough else ft_init(sys, x0, P0)
    sise = run_filter(sys, ys, init=init)
    akf = akf_filter(sys, ys, D, x0, P0)
    xs, xa, t = sise.xhat, akf.xhat, sise.t
    keep = t >= burn_in
    if not np.any(keep):
        raise ValueError("burn-in leaves no samples to compare")
    diff = np.max(np.abs(xs[keep] - xa[keep]), axis=1)
    scale = 1.0 + np.max(np.abs(xs[keep]), axis=1)
    return float(np.max(diff / scale))
