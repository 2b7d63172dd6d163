"""Simultaneous (block-)triangularization by iterated common-eigenvector deflation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numkernel import check_square, cluster_values, norm2, to_float
from .system import SystemSpec

RANK_TOL = 1e-10


@dataclass
class FlagResult:
    """Outcome of a triangularization attempt.

    On success ``C`` is unitary and ``C @ B @ C^{-1}`` is upper triangular (or
    of k-block form) for every input ``B``; ``flag_dims`` lists the dimensions of
    the invariant flag.  On failure ``failure_stage`` is the number of completed
    deflations and ``certificate`` the deflated matrices with no common
    eigenvector.
    """

    success: bool
    C: np.ndarray | None
    flag_dims: list = field(default_factory=list)
    failure_stage: int | None = None
    certificate: list | None = None
    eigenvalues: list = field(default_factory=list)  # per stage, one tuple per matrix

    @property
    def C_inv(self):
        return None if self.C is None else self.C.conj().T


def _prepare(mats):
    if not mats:
        raise ValueError("need at least one matrix")
    arrs = [to_float(m) for m in mats]
    p = check_square(arrs[0])
    for a in arrs:
        if check_square(a) != p:
            raise ValueError("all matrices must have the same size")
    return arrs, p


def _candidates(B, tol, scale):
    """Eigenvalue candidates: loose cluster means first, then tight means, deterministic."""
    if norm2(B) <= tol * scale:
        return [0j]
    eigs = np.linalg.eigvals(B)
    out = [v for v, _ in cluster_values(eigs, np.sqrt(tol) * scale)]
    for v, _ in cluster_values(eigs, tol * scale):
        if all(abs(v - w) > tol * scale for w in out):
            out.append(v)
    return out


def _search(arrs, norms, tol, rank_tol, i, Q):
    if i == len(arrs):
        return Q[:, 0]
    B = arrs[i]
    if norms[i] == 0.0 or norm2(B) <= rank_tol * norms[i]:
        return _search(arrs, norms, tol, rank_tol, i + 1, Q)
    for lam in _candidates(B, tol, norms[i]):
        A = (B - lam * np.eye(B.shape[0])) @ Q
        _, s, vh = np.linalg.svd(A)
        s_full = np.concatenate([s, np.zeros(Q.shape[1] - s.size)])
        null = vh[s_full <= rank_tol * norms[i]].conj().T
        if null.shape[1] == 0:
            continue
        Qn, _ = np.linalg.qr(Q @ null)
        found = _search(arrs, norms, tol, rank_tol, i + 1, Qn)
        if found is not None:
            return found
    return None


def common_eigenvector(mats, tol: float = 1e-9, rank_tol: float = RANK_TOL, scales=None):
    """A unit vector that is an eigenvector of every matrix, with its eigenvalues, or None.

    Eigenvalue tuples are searched depth first over the clustered spectra,
    intersecting kernels of ``B_i - lambda_i I`` as we go; empty intersections
    prune the search.  ``scales`` overrides the norms that tolerances are
    relative to (deflated blocks keep the scale of the original matrices).
    """
    arrs, p = _prepare(mats)
    norms = [norm2(a) for a in arrs] if scales is None else list(scales)
    v = _search(arrs, norms, tol, rank_tol, 0, np.eye(p, dtype=complex))
    if v is None:
        return None
    v = v / np.linalg.norm(v)
    lams = tuple(complex(v.conj() @ a @ v) for a in arrs)
    for a, lam, nrm in zip(arrs, lams, norms):
        if np.linalg.norm(a @ v - lam * v) > tol * max(nrm, 1e-300) and nrm > 0:
            return None
    return v, lams


def _complete(v):
    """Unitary matrix whose first column is ``v``."""
    p = v.size
    Q, _ = np.linalg.qr(np.column_stack([v, np.eye(p, dtype=complex)]))
    Q = Q[:, :p]
    phase = (Q[:, 0].conj() @ v)
    Q[:, 0] *= phase / abs(phase)
    return Q


def _deflate(mats, depth, tol, rank_tol):
    arrs, p = _prepare(mats)
    scales = [norm2(a) for a in arrs]
    U = np.eye(p, dtype=complex)
    blocks = arrs
    lam_stages = []
    for stage in range(depth):
        if p - stage == 1:
            lam_stages.append(tuple(complex(b[0, 0]) for b in blocks))
            return U, stage + 1, None, lam_stages
        found = common_eigenvector(blocks, tol, rank_tol, scales)
        if found is None:
            return U, stage, blocks, lam_stages
        v, lams = found
        lam_stages.append(lams)
        Q = _complete(v)
        full = np.eye(p, dtype=complex)
        full[stage:, stage:] = Q
        U = U @ full
        blocks = [(Q.conj().T @ b @ Q)[1:, 1:] for b in blocks]
    return U, depth, None, lam_stages


def _fix_phases(C):
    """Rotate each row so its diagonal entry is real and nonnegative (C stays unitary)."""
    C = C.copy()
    for i in range(C.shape[0]):
        d = C[i, i]
        if abs(d) > 1e-14:
            C[i] *= abs(d) / d
    return C


def simultaneous_triangularize(mats, tol: float = 1e-9, rank_tol: float = RANK_TOL) -> FlagResult:
    arrs, p = _prepare(mats)
    U, reached, cert, lams = _deflate(arrs, p, tol, rank_tol)
    if cert is not None:
        return FlagResult(False, None, list(range(1, reached + 1)), reached, cert, lams)
    return FlagResult(True, _fix_phases(U.conj().T), list(range(1, p + 1)), None, None, lams)


def block_form(mats, k: int, tol: float = 1e-9, rank_tol: float = RANK_TOL) -> FlagResult:
    """Conjugation making the top-left k x k block upper triangular and the block below it zero."""
    arrs, p = _prepare(mats)
    if not 1 <= k <= p - 1:
        raise ValueError(f"k must lie in 1..{p - 1}, got {k}")
    U, reached, cert, lams = _deflate(arrs, k, tol, rank_tol)
    if cert is not None:
        return FlagResult(False, None, list(range(1, reached + 1)), reached, cert, lams)
    return FlagResult(True, _fix_phases(U.conj().T), list(range(1, k + 1)), None, None, lams)


def below_diagonal_residual(mats, C, depth: int | None = None) -> float:
    """Largest ``|entry| / ||B||`` strictly below the diagonal in the first ``depth`` columns."""
    C = np.asarray(C)
    Ci = np.linalg.inv(C)
    worst = 0.0
    for m in mats:
        B = to_float(m)
        nrm = norm2(B)
        if nrm == 0.0:
            continue
        T = C @ B @ Ci
        p = T.shape[0]
        cols = p if depth is None else depth
        mask = np.tril(np.ones((p, p), bool), -1)
        mask[:, cols:] = False
        if mask.any():
            worst = max(worst, float(np.max(np.abs(T[mask]))) / nrm)
    return worst


def apply_to_system(spec: SystemSpec, result: FlagResult) -> SystemSpec:
    if not result.success:
        raise ValueError("cannot apply a failed triangularization")
    return spec.conjugate(result.C, result.C_inv)
