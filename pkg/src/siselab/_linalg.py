"""Small numerical kernels: numerical rank, PBH tests, Cholesky solves."""

import numpy as np
import scipy.linalg as la

from .errors import NotPositiveSemidefinite, SingularityError

RANK_RTOL = 1e-12
SCHUR_MARGIN = 1e-9


def as_matrix(value, rows=None, cols=None, name="matrix"):
    """Coerce scalars, vectors and nested lists to a 2-D float array."""
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1) if cols == 1 else arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be two-dimensional")
    return arr


def rank_tolerance(M):
    s = np.linalg.svd(M, compute_uv=False) if M.size else np.zeros(0)
    smax = s[0] if s.size else 0.0
    return max(M.shape) * smax * RANK_RTOL, s


def numerical_rank(M):
    """Count singular values above ``max(shape) * sigma_max * 1e-12``."""
    M = np.asarray(M)
    if M.size == 0:
        return 0
    tol, s = rank_tolerance(M)
    return int(np.sum(s > tol))


def condition_number(M):
    if M.size == 0:
        return 1.0
    s = np.linalg.svd(M, compute_uv=False)
    if s[-1] == 0.0:
        return np.inf
    return float(s[0] / s[-1])


def symmetrize(P):
    return 0.5 * (P + P.T)


def spectral_radius(M):
    if M.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(M))))


def is_schur(M, margin=SCHUR_MARGIN):
    return spectral_radius(M) < 1.0 - margin


def check_psd(P, name="P", atol=1e-12):
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise NotPositiveSemidefinite(f"{name} must be square")
    scale = max(1.0, float(np.max(np.abs(P)))) if P.size else 1.0
    if not np.allclose(P, P.T, atol=atol * scale, rtol=0):
        raise NotPositiveSemidefinite(f"{name} is not symmetric")
    if P.size and np.min(np.linalg.eigvalsh(symmetrize(P))) < -atol * scale:
        raise NotPositiveSemidefinite(f"{name} has a negative eigenvalue")
    return P


def psd_factor(Q):
    """Return ``L`` with ``L @ L.T == Q`` for a possibly singular PSD ``Q``."""
    w, V = np.linalg.eigh(symmetrize(Q))
    w = np.clip(w, 0.0, None)
    return V * np.sqrt(w)


def cholesky(S, what="matrix", step=None):
    """Cholesky factor for use with :func:`scipy.linalg.cho_solve`."""
    try:
        return la.cho_factor(S, lower=True, check_finite=False)
    except la.LinAlgError:
        raise SingularityError(f"{what} is not positive definite",
                               condition=condition_number(S), step=step) from None


def cho_solve(factor, B):
    return la.cho_solve(factor, B, check_finite=False)


def pbh_failing_modes(A, other, kind="observe", region="all"):
    """Eigenvalues at which the PBH rank test fails.

    Args:
        A: n x n state matrix.
        other: output matrix (``kind="observe"``, stacked below ``A - lam I``)
            or input matrix (``kind="reach"``, placed beside it).
        kind: ``"observe"`` or ``"reach"``.
        region: ``"all"`` checks every eigenvalue; ``"unstable"`` only those
            with modulus at least ``1 - SCHUR_MARGIN``.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    other = np.asarray(other, dtype=float)
    failing = []
    for lam in np.linalg.eigvals(A) if n else []:
        if region == "unstable" and abs(lam) < 1.0 - SCHUR_MARGIN:
            continue
        shifted = A - lam * np.eye(n)
        if kind == "observe":
            other_ = other.reshape(-1, n)
            M = np.vstack([shifted, other_])
        else:
            other_ = other.reshape(n, -1)
            M = np.hstack([shifted, other_])
        if numerical_rank(M) < n:
            if not any(abs(lam - f) < 1e-9 * max(1.0, abs(lam)) for f in failing):
                failing.append(complex(lam))
    return failing


def orthonormal_split(F):
    """Full SVD of ``F`` with sign-normalized left singular vectors.

    Returns ``(U, s, Vt, r)`` where ``r`` is the numerical rank. Each column
    of ``U`` has its first entry of non-negligible magnitude made positive;
    the matching rows of ``Vt`` are flipped alongside.
    """
    F = np.asarray(F, dtype=float)
    p, m = F.shape
    U, s, Vt = np.linalg.svd(F, full_matrices=True)
    r = numerical_rank(F)
    for j in range(p):
        col = U[:, j]
        idx = np.flatnonzero(np.abs(col) > 1e-12)
        if idx.size and col[idx[0]] < 0:
            U[:, j] = -col
            if j < min(p, m):
                Vt[j, :] = -Vt[j, :]
    return U, s, Vt, r
