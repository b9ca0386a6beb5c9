"""Levenberg-Marquardt over a :class:`~dualgraph.graph.Graph`."""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.linalg import lapack
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .exceptions import ConfigError
from .graph import Graph, Problem

# below this many free blocks a dense Cholesky is cheaper than the sparse path
DENSE_BLOCK_LIMIT = 50
MAX_CONSECUTIVE_FAILURES = 10


class NotPositiveDefinite(np.linalg.LinAlgError):
    pass


@dataclass
class SolverConfig:
    max_iterations: int = 15
    lambda_init: float = 1e-4
    lambda_up: float = 10.0
    lambda_down: float = 0.5
    chi2_rel_tol: float = 1e-9
    step_norm_tol: float = 1e-10

    def __post_init__(self):
        if int(self.max_iterations) != self.max_iterations or self.max_iterations < 1:
            raise ConfigError("max_iterations must be an integer >= 1")
        self.max_iterations = int(self.max_iterations)
        for name in ("lambda_init", "lambda_up", "lambda_down", "chi2_rel_tol", "step_norm_tol"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")


@dataclass
class OptReport:
    iterations: int
    initial_chi2: float
    final_chi2: float
    reason: str  # converged | budget | stalled
    wall_time_ms: float
    chi2_history: list = field(default_factory=list, repr=False)

    def to_dict(self):
        d = asdict(self)
        d.pop("chi2_history")
        return d


def _n_blocks(n, dims):
    return len(dims) if dims is not None else n // 6


# the border path is used while the pose block stays within this bandwidth
MAX_BAND = 48


def _banded_border_solve(A, rhs, m):
    """Solve with ``A`` split as a banded ``m x m`` block plus a dense border.

    Returns ``None`` when the leading block is not narrow enough.
    """
    n = A.shape[0]
    indptr, indices, data = A.indptr, A.indices, A.data
    cols = np.repeat(np.arange(n), np.diff(indptr))
    inner = (cols < m) & (indices < m) & (indices >= cols)
    off = indices[inner] - cols[inner]
    bw = int(off.max()) if off.size else 0
    if bw > MAX_BAND:
        return None
    ab = np.zeros((bw + 1, m))
    ab[off, cols[inner]] = data[inner]
    lower = (cols < m) & (indices >= m)
    Bm = np.zeros((n - m, m))
    Bm[indices[lower] - m, cols[lower]] = data[lower]
    corner = (cols >= m) & (indices >= m)
    C = np.zeros((n - m, n - m))
    C[indices[corner] - m, cols[corner] - m] = data[corner]
    try:
        cb = sla.cholesky_banded(ab, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite("banded Cholesky failed") from None
    rhs = np.asarray(rhs, dtype=float)
    vec = rhs.ndim == 1
    r = rhs.reshape(n, -1)
    k = r.shape[1]
    # one forward substitution for the right-hand side and the border together
    W, info = lapack.dtbtrs(cb, np.hstack([r[:m], Bm.T]), uplo="L", trans="N")
    if info != 0:
        raise NotPositiveDefinite("banded triangular solve failed")
    z, W = W[:, :k], W[:, k:]
    if n > m:
        S = C - W.T @ W
        try:
            c = sla.cho_factor(S, lower=True, check_finite=False)
        except (np.linalg.LinAlgError, ValueError):
            raise NotPositiveDefinite("Schur complement not positive definite") from None
        y = sla.cho_solve(c, r[m:] - W.T @ z, check_finite=False)
        z = z - W @ y
    x, info = lapack.dtbtrs(cb, z, uplo="L", trans="T")
    if info != 0:
        raise NotPositiveDefinite("banded triangular solve failed")
    out = np.vstack([x, y]) if n > m else x
    return out[:, 0] if vec else out


def cholesky_solve(A, rhs, n_blocks=None, border_start=None):
    """Solve ``A x = rhs`` for symmetric positive-definite ``A``.

    Small systems use a dense Cholesky.  When ``border_start`` splits off a
    leading block of narrow bandwidth (a keyframe chain) a banded Cholesky
    plus a Schur complement on the trailing rows is used.  Otherwise SuperLU with a
    minimum-degree ordering on ``A + A^T`` and diagonal pivoting only, which
    for an SPD matrix is an LDL^T factorization; a non-positive pivot is
    reported as :class:`NotPositiveDefinite`.
    """
    n = A.shape[0]
    if n_blocks is None:
        n_blocks = n // 6
    if n_blocks < DENSE_BLOCK_LIMIT or n <= 6:
        dense = A.toarray() if sp.issparse(A) else np.asarray(A)
        try:
            c = sla.cho_factor(dense, lower=True, check_finite=False)
        except (np.linalg.LinAlgError, ValueError):
            raise NotPositiveDefinite("dense Cholesky failed") from None
        return sla.cho_solve(c, rhs, check_finite=False)
    A = sp.csc_matrix(A)
    A.sum_duplicates()
    if border_start is not None and border_start > 0:
        x = _banded_border_solve(A, rhs, border_start)
        if x is not None:
            return x
    try:
        lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                       options={"SymmetricMode": True})
    except RuntimeError:
        raise NotPositiveDefinite("sparse factorization failed") from None
    if not np.array_equal(lu.perm_r, lu.perm_c) or np.any(lu.U.diagonal() <= 0):
        raise NotPositiveDefinite("non-positive pivot")
    return lu.solve(np.asarray(rhs, dtype=float))


def _damped(lin, lam):
    """``H + lam * diag(H)`` (diagonal floored at 1e-12)."""
    H = lin.H
    if lin.diag_index is not None:
        A = H.copy()
        d = A.data[lin.diag_index]
        A.data[lin.diag_index] = d + lam * np.where(d > 0, d, 1e-12)
        return A
    d = H.diagonal()
    return (H + sp.diags(lam * np.where(d > 0, d, 1e-12), format="csc")).tocsc()


def optimize(graph: Graph, config: SolverConfig | None = None) -> OptReport:
    """Run LM in place on ``graph``.

    Estimates end at the best accepted state.  Raises
    :class:`~dualgraph.exceptions.GaugeError` when free nodes are not anchored.
    """
    config = config or SolverConfig()
    start = time.perf_counter()
    prob = Problem(graph)
    prob.check_gauge()
    lin = prob.linearize()
    chi2 = initial = lin.chi2
    history = [chi2]
    if prob.size == 0 or chi2 == 0.0:
        return OptReport(0, initial, chi2, "converged", (time.perf_counter() - start) * 1e3, history)

    n_blocks = len(prob.order)
    lam = config.lambda_init
    failures = 0
    reason = "budget"
    it = 0
    while it < config.max_iterations:
        it += 1
        A = _damped(lin, lam)
        try:
            dx = cholesky_solve(A, -lin.b, n_blocks, lin.border_start)
        except NotPositiveDefinite:
            lam *= config.lambda_up
            failures += 1
            if failures >= MAX_CONSECUTIVE_FAILURES:
                reason = "stalled"
                break
            continue
        step = float(np.linalg.norm(dx))
        state = prob.retracted(dx)
        cand_chi2 = prob.chi2(state)
        if cand_chi2 < chi2:
            rel = (chi2 - cand_chi2) / chi2
            prob.set_state(state)
            chi2 = cand_chi2
            history.append(chi2)
            lam = max(lam * config.lambda_down, 1e-12)
            failures = 0
            if chi2 == 0.0 or rel < config.chi2_rel_tol or step < config.step_norm_tol:
                reason = "converged"
                break
            if it < config.max_iterations:
                lin = prob.linearize()
        else:
            lam *= config.lambda_up
            failures += 1
            if step < config.step_norm_tol:
                reason = "converged"
                break
            if failures >= MAX_CONSECUTIVE_FAILURES:
                reason = "stalled"
                break
    prob.write_back()
    return OptReport(it, initial, chi2, reason, (time.perf_counter() - start) * 1e3, history)


def marginal_information(graph: Graph, landmark: int, fixed=None) -> np.ndarray:
    """Information left on ``landmark`` after eliminating every other free variable.

    This is the Schur complement ``H_ll - H_lx H_xx^-1 H_xl`` evaluated at
    the current estimates, obtained as the inverse of the landmark block of
    ``H^-1``.  ``fixed`` optionally overrides which nodes define the gauge.
    """
    prob = Problem(graph, fixed=fixed)
    prob.check_gauge()
    if landmark not in prob.offsets:
        raise ValueError(f"node {landmark} is not a free variable")
    lin = prob.linearize()
    sl = lin.block(landmark)
    d = sl.stop - sl.start
    E = np.zeros((prob.size, d))
    E[sl, :] = np.eye(d)
    X = cholesky_solve(lin.H, E, len(prob.order), lin.border_start)
    cov = X[sl, :]
    cov = 0.5 * (cov + cov.T)
    info = np.linalg.inv(cov)
    return 0.5 * (info + info.T)
