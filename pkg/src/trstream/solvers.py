"""Batch TR-ALS solvers.

Both solvers sweep the modes ``n = 1..N`` and replace core ``n`` by the exact
least-squares minimizer with every other core fixed. :func:`tr_als` builds the
subchain matrix explicitly and takes its Gram product; :func:`tr_als_ne`
keeps the per-core Gram tensors and obtains the same normal equations from a
short chain of small contractions.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NumericError
from .tr_algebra import (
    TRCores,
    core_from_matrix,
    gram_chain,
    gram_core,
    gram_matrix,
    relative_error,
    subchain_matrix,
    unfolding_times_subchain,
)

log = logging.getLogger(__name__)

# Below this relative error the cheap normal-equation residual loses too many
# digits to cancellation, so the error is recomputed from a reconstruction.
_EXACT_ERROR_BELOW = 1e-5


@dataclass(frozen=True)
class SolveOptions:
    """Stopping rule and numerical knobs shared by all batch solvers.

    ``tol`` bounds the change in relative error between two consecutive
    sweeps; the solver stops once the change drops below it or after
    ``max_iters`` sweeps.
    """

    max_iters: int = 50
    tol: float = 1e-10
    seed: int = 0
    pinv_rcond: float = 1e-12

    def __post_init__(self):
        if int(self.max_iters) < 1:
            raise DomainError(f"max_iters must be at least 1, got {self.max_iters}")
        if self.tol < 0:
            raise DomainError(f"tol must be nonnegative, got {self.tol}")
        if self.pinv_rcond < 0:
            raise DomainError(f"pinv_rcond must be nonnegative, got {self.pinv_rcond}")


def solve_normal(q: np.ndarray, p: np.ndarray, rcond: float = 1e-12) -> np.ndarray:
    """Return ``P @ pinv(Q)`` for a symmetric ``Q``.

    Eigenvalues of magnitude below ``rcond * max|eig|`` are dropped, which
    gives the minimum-norm solution when ``Q`` is singular.
    """
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
        raise NumericError("solve_normal received non-finite entries")
    if q.ndim != 2 or q.shape[0] != q.shape[1]:
        raise DomainError(f"Q must be square, got {q.shape}")
    if p.ndim != 2 or p.shape[1] != q.shape[0]:
        raise DomainError(f"P of shape {p.shape} does not match Q of shape {q.shape}")
    scale = np.abs(q).max()
    if scale == 0.0:
        return np.zeros_like(p)
    if np.abs(q - q.T).max() > 1e-10 * scale:
        raise DomainError("Q is not symmetric")
    w, v = np.linalg.eigh(0.5 * (q + q.T))
    keep = np.abs(w) > rcond * np.abs(w).max()
    v = v[:, keep]
    return ((p @ v) / w[keep]) @ v.T


def check_init(x: np.ndarray, ranks, init: TRCores) -> TRCores:
    """Validate that ``init`` matches the data shape and requested ranks."""
    if not isinstance(init, TRCores):
        init = TRCores(init)
    if init.shape != tuple(x.shape):
        raise DomainError(f"initial cores describe shape {init.shape}, data has {x.shape}")
    if ranks is not None:
        if np.isscalar(ranks):
            ranks = (int(ranks),) * init.order
        if tuple(int(r) for r in ranks) != init.ranks:
            raise DomainError(f"initial cores have ranks {init.ranks}, expected {tuple(ranks)}")
    return init


def residual_error(xnorm_sq: float, g: np.ndarray, m: np.ndarray, q: np.ndarray) -> float:
    """Relative residual of ``X_[n] ~ G S^T`` from ``M = X_[n] S`` and ``Q = S^T S``."""
    sq = xnorm_sq - 2.0 * np.vdot(g, m).real + np.vdot(g @ q, g).real
    return float(np.sqrt(max(sq, 0.0) / xnorm_sq))


def _sweep_error(x, cores, xnorm_sq, g, m, q):
    err = residual_error(xnorm_sq, g, m, q)
    if err < _EXACT_ERROR_BELOW:
        err = relative_error(x, cores)
    return err


def _run_sweeps(x, init: TRCores, opts: SolveOptions, update_mode, name: str):
    """Shared sweep loop.

    ``update_mode(cores, n)`` returns ``(new_core_matrix, M, Q)`` for 1-based
    mode ``n`` where ``M``/``Q`` are the right-hand side and Gram matrix of the
    normal equations just solved.
    """
    cores = list(init.copy().cores)
    xnorm_sq = float(np.vdot(x, x).real)
    if xnorm_sq == 0.0:
        raise DomainError("cannot decompose a zero tensor")
    errors: list[float] = []
    order = len(cores)
    for it in range(int(opts.max_iters)):
        for n in range(1, order + 1):
            g, m, q = update_mode(cores, n)
            r0, _, r1 = cores[n - 1].shape
            cores[n - 1] = core_from_matrix(g, r0, r1)
        errors.append(_sweep_error(x, cores, xnorm_sq, g, m, q))
        log.debug("%s sweep %d: relative error %.3e", name, it + 1, errors[-1])
        if len(errors) > 1 and abs(errors[-2] - errors[-1]) < opts.tol:
            break
    return TRCores(cores), errors


def tr_als(x: np.ndarray, ranks, init: TRCores, opts: SolveOptions = SolveOptions()):
    """Plain TR-ALS.

    Each subproblem materializes the subchain matrix ``S = G^{!=n}_[2]`` and
    solves ``G_n(2) (S^T S) = X_[n] S``.

    Returns
    -------
    cores : TRCores
    errors : list of float
        Relative error after every sweep.
    """
    init = check_init(x, ranks, init)

    def update(cores, n):
        s = subchain_matrix(cores, n)
        q = s.T @ s
        m = unfolding_times_subchain(x, cores, n)
        return solve_normal(q, m, opts.pinv_rcond), m, q

    return _run_sweeps(x, init, opts, update, "tr_als")


def tr_als_ne(x: np.ndarray, ranks, init: TRCores, opts: SolveOptions = SolveOptions()):
    """TR-ALS with structured normal equations.

    The Gram matrix of each subproblem comes from the chain of per-core Gram
    tensors ``Z_j``; only ``Z_n`` is refreshed after core ``n`` changes.
    Produces the same iterates as :func:`tr_als`.
    """
    init = check_init(x, ranks, init)
    grams = [gram_core(c) for c in init]

    def update(cores, n):
        q = gram_matrix(gram_chain(grams, n))
        m = unfolding_times_subchain(x, cores, n)
        g = solve_normal(q, m, opts.pinv_rcond)
        r0, _, r1 = cores[n - 1].shape
        grams[n - 1] = gram_core(core_from_matrix(g, r0, r1))
        return g, m, q

    return _run_sweeps(x, init, opts, update, "tr_als_ne")


def extend_temporal(x: np.ndarray, cores: TRCores, rcond: float = 1e-12) -> TRCores:
    """Grow the last core of ``cores`` to cover the trailing slices of ``x``.

    Rows already present are kept; rows for the new slices are the
    least-squares fit against the fixed non-temporal cores. Used to warm-start
    batch solvers on a tensor that has grown along its last mode.
    """
    t_old = cores.shape[-1]
    t = x.shape[-1]
    if t < t_old:
        raise DomainError(f"cannot shrink the temporal core from {t_old} to {t}")
    if t == t_old:
        return cores.copy()
    n = cores.order
    q = gram_matrix(gram_chain([gram_core(c) for c in cores.cores[:-1]] + [None], n))
    m = unfolding_times_subchain(x[..., t_old:], list(cores.cores[:-1]) + [None], n)
    g_new = solve_normal(q, m, rcond)
    r0, _, r1 = cores[-1].shape
    last = np.concatenate([cores[-1], core_from_matrix(g_new, r0, r1)], axis=1)
    return TRCores(list(cores.cores[:-1]) + [last], copy=True)

