"""AMG-preconditioned flexible GMRES for the reduced Poisson system.

The preconditioner is a smoothed-aggregation multigrid V-cycle: plain greedy
aggregation over a strength-of-connection graph, tentative piecewise-constant
prolongation smoothed by one damped Jacobi step, Galerkin coarse operators,
damped point-Jacobi smoothing on every level, and a dense factorization at
the coarsest level.  The Krylov wrapper is right-preconditioned FGMRES with
true-residual re-evaluation at every restart and at acceptance, so the
reported residual is always the actual system residual.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lu_factor, lu_solve, solve_triangular
from scipy.sparse import csr_matrix, diags

from ._kernels import plain_aggregation
from .errors import SolverError


@dataclass
class SolveConfig:
    """Solver parameters; the defaults target a 1e-12 relative residual."""

    rel_tol: float = 1e-12
    max_iters: int = 1000
    restart: int = 30
    pre_sweeps: int = 1
    post_sweeps: int = 1
    jacobi_damping: float = 2.0 / 3.0
    strength_threshold: float = 0.08
    coarse_cap: int = 500
    max_levels: int = 20
    threads: int | None = None
    # optional text stream receiving one "iter k rel_resid r" line per iteration
    trace: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not self.rel_tol > 0.0:
            raise ValueError("rel_tol must be positive")
        if self.restart < 1:
            raise ValueError("restart must be >= 1")
        if not 0.0 < self.jacobi_damping <= 1.0:
            raise ValueError("jacobi_damping must be in (0, 1]")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.coarse_cap < 1 or self.max_levels < 1:
            raise ValueError("coarse_cap and max_levels must be >= 1")


@dataclass
class AmgLevel:
    matrix: csr_matrix
    dinv: np.ndarray
    prolongation: csr_matrix | None = None
    restriction: csr_matrix | None = None


@dataclass
class AmgHierarchy:
    levels: list
    coarse_lu: tuple
    level_sizes: list
    setup_seconds: float
    pre_sweeps: int
    post_sweeps: int
    damping: float

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    def operator_complexity(self) -> float:
        fine = self.levels[0].matrix.nnz
        return sum(lv.matrix.nnz for lv in self.levels) / max(fine, 1)

    def matrix_memory_bytes(self) -> int:
        total = 0
        for lv in self.levels:
            for m in (lv.matrix, lv.prolongation, lv.restriction):
                if m is not None:
                    total += m.data.nbytes + m.indices.nbytes + m.indptr.nbytes
        total += self.level_sizes[-1] ** 2 * 8  # dense coarsest factorization
        return total


@dataclass
class SolveReport:
    """Observables of one solve: iterations, residual, wall time, memory."""

    iterations: int
    rel_residual: float
    converged: bool
    setup_seconds: float
    solve_seconds: float
    level_sizes: list
    peak_matrix_memory_bytes: int
    threads: int | None = None


def _strength_graph(a: csr_matrix, theta: float):
    """CSR (indptr, indices, |a_ij|) of off-diagonal strong connections."""
    n = a.shape[0]
    sd = np.sqrt(np.abs(a.diagonal()))
    rows = np.repeat(np.arange(n, dtype=np.int64), np.diff(a.indptr))
    cols = a.indices.astype(np.int64)
    vals = np.abs(a.data)
    strong = (rows != cols) & (vals >= theta * sd[rows] * sd[cols])
    indptr = np.concatenate(
        [[0], np.cumsum(np.bincount(rows[strong], minlength=n))]
    ).astype(np.int64)
    return indptr, cols[strong], vals[strong]


def amg_setup(a: csr_matrix, cfg: SolveConfig | None = None) -> AmgHierarchy:
    """Build the smoothed-aggregation hierarchy for an SPD matrix.

    The strength threshold is halved on every level; coarsening stops at
    ``coarse_cap`` unknowns, after ``max_levels`` levels, or when aggregation
    stagnates (coarse size not smaller than fine size), in which case the
    current level is factorized directly.
    """
    cfg = cfg or SolveConfig()
    t0 = time.perf_counter()
    a = a.tocsr()
    a.sort_indices()
    levels = [AmgLevel(a, _jacobi_dinv(a))]
    level = 0
    while levels[-1].matrix.shape[0] > cfg.coarse_cap and len(levels) < cfg.max_levels:
        fine = levels[-1].matrix
        n = fine.shape[0]
        theta = cfg.strength_threshold * 0.5 ** level
        indptr, indices, strengths = _strength_graph(fine, theta)
        agg, n_agg = plain_aggregation(indptr, indices, strengths, n)
        if n_agg >= n:
            break  # stagnation: solve this level directly
        tentative = csr_matrix(
            (np.ones(n), agg.astype(np.int64), np.arange(n + 1, dtype=np.int64)),
            shape=(n, n_agg),
        )
        smoothed = fine @ tentative
        scale = cfg.jacobi_damping * levels[-1].dinv
        smoothed.data *= np.repeat(scale, np.diff(smoothed.indptr))
        prolong = (tentative - smoothed).tocsr()
        prolong.sort_indices()
        restrict = prolong.T.tocsr()
        restrict.sort_indices()
        coarse = (restrict @ (fine @ prolong)).tocsr()
        coarse.sort_indices()
        levels[-1].prolongation = prolong
        levels[-1].restriction = restrict
        levels.append(AmgLevel(coarse, _jacobi_dinv(coarse)))
        level += 1
    coarse_lu = lu_factor(levels[-1].matrix.toarray())
    sizes = [lv.matrix.shape[0] for lv in levels]
    return AmgHierarchy(
        levels=levels,
        coarse_lu=coarse_lu,
        level_sizes=sizes,
        setup_seconds=time.perf_counter() - t0,
        pre_sweeps=cfg.pre_sweeps,
        post_sweeps=cfg.post_sweeps,
        damping=cfg.jacobi_damping,
    )


def _jacobi_dinv(a: csr_matrix) -> np.ndarray:
    d = a.diagonal()
    if np.any(d <= 0.0):
        raise SolverError("matrix has a non-positive diagonal entry")
    return 1.0 / d


def v_cycle(hierarchy: AmgHierarchy, residual: np.ndarray) -> np.ndarray:
    """One V(pre, post) multigrid cycle applied to a residual (linear in it)."""
    return _cycle(hierarchy, 0, np.asarray(residual, dtype=np.float64))


def _cycle(h: AmgHierarchy, l: int, r: np.ndarray) -> np.ndarray:
    if l == len(h.levels) - 1:
        return lu_solve(h.coarse_lu, r)
    lv = h.levels[l]
    a = lv.matrix
    omega_dinv = h.damping * lv.dinv
    x = omega_dinv * r
    for _ in range(h.pre_sweeps - 1):
        x += omega_dinv * (r - a @ x)
    defect = r - a @ x
    x += lv.prolongation @ _cycle(h, l + 1, lv.restriction @ defect)
    for _ in range(h.post_sweeps):
        x += omega_dinv * (r - a @ x)
    return x


def fgmres_solve(
    a: csr_matrix,
    rhs: np.ndarray,
    hierarchy: AmgHierarchy,
    cfg: SolveConfig | None = None,
):
    """Right-preconditioned flexible GMRES with one V-cycle per iteration.

    Returns ``(solution, SolveReport)``.  On reaching ``max_iters`` the best
    iterate is returned with the report flagged non-converged (no exception);
    non-finite input or Arnoldi breakdown raises :class:`SolverError`.
    """
    cfg = cfg or SolveConfig()
    t0 = time.perf_counter()
    rhs = np.asarray(rhs, dtype=np.float64)
    n = a.shape[0]
    if rhs.shape != (n,):
        raise ValueError(f"rhs has length {rhs.size}, expected {n}")
    if not np.all(np.isfinite(rhs)):
        raise SolverError("rhs contains non-finite values")

    def report(iters, rel, conv):
        return SolveReport(
            iterations=iters,
            rel_residual=rel,
            converged=conv,
            setup_seconds=hierarchy.setup_seconds,
            solve_seconds=time.perf_counter() - t0,
            level_sizes=list(hierarchy.level_sizes),
            peak_matrix_memory_bytes=hierarchy.matrix_memory_bytes()
            + (2 * cfg.restart + 1) * n * 8,
            threads=cfg.threads,
        )

    x = np.zeros(n, dtype=np.float64)
    rhs_norm = float(np.linalg.norm(rhs))
    if rhs_norm == 0.0:
        return x, report(0, 0.0, True)

    m = cfg.restart
    trace = cfg.trace
    iterations = 0
    rel = math.inf
    while iterations < cfg.max_iters:
        r = rhs - a @ x
        r_norm = float(np.linalg.norm(r))  # true residual, each restart
        rel = r_norm / rhs_norm
        if rel <= cfg.rel_tol:
            return x, report(iterations, rel, True)
        basis = np.empty((m + 1, n))
        precond = np.empty((m, n))
        hess = np.zeros((m + 1, m))
        cs = np.empty(m)
        sn = np.empty(m)
        g = np.zeros(m + 1)
        g[0] = r_norm
        basis[0] = r / r_norm
        j = 0
        while j < m and iterations < cfg.max_iters:
            z = _cycle(hierarchy, 0, basis[j])
            precond[j] = z
            w = a @ z
            for i in range(j + 1):
                hij = float(basis[i] @ w)
                hess[i, j] = hij
                w -= hij * basis[i]
            hnorm = float(np.linalg.norm(w))
            if not math.isfinite(hnorm):
                raise SolverError("non-finite value in Arnoldi recurrence")
            for i in range(j):
                t1 = cs[i] * hess[i, j] + sn[i] * hess[i + 1, j]
                t2 = -sn[i] * hess[i, j] + cs[i] * hess[i + 1, j]
                hess[i, j], hess[i + 1, j] = t1, t2
            denom = math.hypot(hess[j, j], hnorm)
            if denom == 0.0:
                cs[j], sn[j] = 1.0, 0.0
            else:
                cs[j], sn[j] = hess[j, j] / denom, hnorm / denom
            hess[j, j] = cs[j] * hess[j, j] + sn[j] * hnorm
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            iterations += 1
            j += 1
            estimate = abs(g[j]) / rhs_norm
            if trace is not None:
                trace.write(f"iter {iterations} rel_resid {estimate:.6e}\n")
            if hnorm == 0.0 or estimate <= cfg.rel_tol:
                break
            if j < m:
                basis[j] = w / hnorm
        if j > 0:
            y = solve_triangular(hess[:j, :j], g[:j], lower=False)
            x = x + precond[:j].T @ y
        if not np.all(np.isfinite(x)):
            raise SolverError("non-finite iterate")

    r = rhs - a @ x
    rel = float(np.linalg.norm(r)) / rhs_norm
    return x, report(iterations, rel, rel <= cfg.rel_tol)
