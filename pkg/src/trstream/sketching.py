"""Randomized sketches for the TR-ALS subproblems.

Three sketches are supported: uniform row sampling, leverage-score sampling
with per-core distributions, and the Kronecker sub-sampled randomized Fourier
transform (KSRFT). All of them are applied through the cores: a sampled row of
the subchain matrix is a product of one lateral slice per core, so the full
coefficient matrix is never formed.

Sample tables store 0-based indices internally; :meth:`SampleIndexTable.one_based`
gives the 1-based view. Sampled rows are not rescaled. For uniform sampling
every row carries the same weight, so the solution is unchanged; for leverage
sampling the per-row weights are dropped as well, which the sketch-size
guarantees in :func:`suggested_sketch_size` do not strictly cover.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .solvers import SolveOptions, check_init, solve_normal
from .tr_algebra import (
    TRCores,
    core_from_matrix,
    core_matrix,
    mode2_matrix,
    relative_error,
    slices_hadamard,
)


class SketchKind(enum.Enum):
    UNIFORM = "uniform"
    LEVERAGE = "leverage"
    KSRFT = "ksrft"


@dataclass(frozen=True)
class SketchConfig:
    """Sketch family plus sketch size ``m``.

    With ``exhaustive`` the random draws are replaced by a full enumeration of
    every index combination, which turns each sketched subproblem back into the
    exact one (up to a uniform row multiplicity). Used to check the sketched
    code paths against their deterministic counterparts.
    """

    kind: SketchKind
    m: int
    exhaustive: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kind", SketchKind(self.kind))
        if int(self.m) < 1:
            raise DomainError(f"sketch size must be at least 1, got {self.m}")


@dataclass
class SampleIndexTable:
    """``m`` sampled multi-indices, one column per mode (0-based).

    A column may be unused (filled with -1) for the mode being solved.
    """

    idxs: np.ndarray
    dists: list = field(default_factory=list)

    @property
    def m(self) -> int:
        return self.idxs.shape[0]

    def one_based(self) -> np.ndarray:
        out = self.idxs + 1
        out[self.idxs < 0] = 0
        return out


@dataclass
class KsrftOperator:
    """Per-mode sign flips plus a uniform sample table in the mixed domain."""

    signs: list
    table: SampleIndexTable

    @property
    def m(self) -> int:
        return self.table.m


# --------------------------------------------------------------------------
# leverage scores and sampling
# --------------------------------------------------------------------------


def leverage_scores(a: np.ndarray, rcond: float = 1e-12) -> np.ndarray:
    """Squared row norms of an orthonormal basis for the column space of ``a``.

    The basis comes from a thin SVD truncated at ``rcond * sigma_max``, so the
    scores sum to the numerical rank.
    """
    a = np.asarray(a)
    if a.size == 0:
        return np.zeros(a.shape[0])
    u, s, _ = np.linalg.svd(a, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros(a.shape[0])
    u = u[:, s > rcond * s[0]]
    return np.einsum("ij,ij->i", u.conj(), u).real


def core_distribution(core: np.ndarray, rcond: float = 1e-12) -> np.ndarray:
    """Leverage-based sampling distribution over the slices of one core."""
    scores = leverage_scores(core_matrix(core), rcond)
    total = scores.sum()
    if total == 0.0:
        raise DomainError("a zero core has no leverage distribution")
    return scores / total


def sample_mode(dist, m: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``m`` 0-based indices with replacement.

    ``dist`` is either a dimension (uniform draw) or a probability vector.
    """
    if np.isscalar(dist):
        dim = int(dist)
        if dim < 1:
            raise DomainError(f"cannot sample from an empty mode of size {dim}")
        return rng.integers(0, dim, size=m)
    p = np.asarray(dist, dtype=float)
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise DomainError("sampling distribution has negative or non-finite mass")
    total = p.sum()
    if total <= 0:
        raise DomainError("sampling distribution has no mass")
    return rng.choice(p.size, size=m, replace=True, p=p / total)


def sample_indices(dists, m: int, rng: np.random.Generator) -> SampleIndexTable:
    """Independent draws for each mode.

    ``dists[k]`` is a dimension (uniform), a probability vector, or ``None``
    for a mode that is not sampled.
    """
    if int(m) < 1:
        raise DomainError(f"sketch size must be at least 1, got {m}")
    cols = []
    for d in dists:
        cols.append(np.full(m, -1, dtype=np.int64) if d is None else sample_mode(d, m, rng))
    return SampleIndexTable(np.stack(cols, axis=1).astype(np.int64), list(dists))


def exhaustive_table(dims) -> SampleIndexTable:
    """Every multi-index of ``dims`` once, first mode fastest."""
    dims = [int(d) for d in dims]
    grids = np.indices(dims).reshape(len(dims), -1, order="F")
    return SampleIndexTable(np.ascontiguousarray(grids.T).astype(np.int64), list(dims))


# --------------------------------------------------------------------------
# sampled subchain and input tensors
# --------------------------------------------------------------------------


def ring_modes(n: int, order: int) -> list[int]:
    """0-based modes in the ring order ``n+1, ..., N, 1, ..., n-1`` (``n`` 1-based)."""
    return [(n - 1 + s) % order for s in range(1, order)]


def sampled_chain(sampled_cores, n: int) -> np.ndarray:
    """Slices-Hadamard chain of pre-sampled cores, skipping mode ``n``.

    ``sampled_cores[k]`` has shape ``(R_k, m, R_{k+1})``. The result has shape
    ``(R_{n+1}, m, R_n)``.
    """
    order = len(sampled_cores)
    modes = ring_modes(n, order)
    first = sampled_cores[modes[0]]
    out = first
    for k in modes[1:]:
        out = slices_hadamard(out, sampled_cores[k])
    return out


def sample_fibers(x: np.ndarray, n: int, table: SampleIndexTable) -> np.ndarray:
    """Mode-``n`` fibers of ``x`` at the sampled indices, shape ``(I_n, m)``."""
    k = n - 1
    index = [slice(None)]
    for j in range(x.ndim):
        if j == k:
            continue
        col = table.idxs[:, j]
        if col.size and (col.min() < 0 or col.max() >= x.shape[j]):
            raise DomainError(f"sample index out of range for mode {j + 1} of size {x.shape[j]}")
        index.append(col)
    return np.moveaxis(x, k, 0)[tuple(index)]


def sample_core(core: np.ndarray, idx: np.ndarray) -> np.ndarray:
    if idx.size and (idx.min() < 0 or idx.max() >= core.shape[1]):
        raise DomainError(f"sample index out of range for a core with {core.shape[1]} slices")
    return core[:, idx, :]


def ssit(cores, x: np.ndarray, n: int, table: SampleIndexTable):
    """Sampled subchain and input tensors for mode ``n``.

    Returns ``(G_S, X_S)`` where ``G_S`` has shape ``(R_{n+1}, m, R_n)`` and its
    slice ``j`` is the subchain slice at the ``j``-th sampled multi-index, and
    ``X_S`` is the ``I_n x m`` matrix of matching mode-``n`` fibers.
    """
    cores = list(cores)
    order = len(cores)
    sampled = [None] * order
    for k in ring_modes(n, order):
        sampled[k] = sample_core(cores[k], table.idxs[:, k])
    return sampled_chain(sampled, n), sample_fibers(x, n, table)


# --------------------------------------------------------------------------
# KSRFT
# --------------------------------------------------------------------------


def random_signs(dims, rng: np.random.Generator) -> list:
    return [rng.choice(np.array([-1.0, 1.0]), size=int(d)) for d in dims]


def mix_mode(x: np.ndarray, axis: int, signs: np.ndarray) -> np.ndarray:
    """Apply ``F D`` along ``axis``: sign flips followed by a unitary DFT."""
    shape = [1] * x.ndim
    shape[axis] = -1
    return np.fft.fft(x * signs.reshape(shape), axis=axis, norm="ortho")


def unmix_rows(a: np.ndarray, signs: np.ndarray) -> np.ndarray:
    """Apply ``D F^*`` to the rows of a matrix (inverse of :func:`mix_mode` on axis 0)."""
    return np.fft.ifft(a, axis=0, norm="ortho") * signs[:, None]


def mix_tensor(x: np.ndarray, signs) -> np.ndarray:
    out = x
    for axis, d in enumerate(signs):
        out = mix_mode(out, axis, d)
    return out


def ksrft_mix_cores(cores, signs, modes=None) -> list:
    """Mix the lateral-slice mode of the selected cores (0-based ``modes``).

    Unselected cores come back unchanged.
    """
    cores = list(cores)
    modes = range(len(cores)) if modes is None else modes
    out = list(cores)
    for k in modes:
        if signs[k].shape[0] != cores[k].shape[1]:
            raise DomainError(f"sign vector for mode {k + 1} has the wrong length")
        out[k] = mix_mode(cores[k], 1, signs[k])
    return out


def make_ksrft_operator(dims, m: int, n: int, rng: np.random.Generator, exhaustive=False):
    """Fresh sign flips for every mode plus a uniform table for the modes other than ``n``."""
    signs = random_signs(dims, rng)
    if exhaustive:
        table = exhaustive_table(dims)
    else:
        table = sample_indices([None if k == n - 1 else d for k, d in enumerate(dims)], m, rng)
    return KsrftOperator(signs, table)


def sketch_from_mixed(mixed_cores, mixed_x, n: int, signs_n: np.ndarray, table: SampleIndexTable):
    """KSRFT sketch given already-mixed cores and tensor."""
    g_s, x_s = ssit(mixed_cores, mixed_x, n, table)
    return g_s, unmix_rows(x_s, signs_n)


def ksrft_sketch(cores, x: np.ndarray, n: int, op: KsrftOperator):
    """KSRFT-sketched subchain and input for mode ``n``.

    Mixes every mode of ``x`` and every core but ``n``, samples uniformly in
    the mixed domain, then undoes the mixing along mode ``n`` of the sampled
    unfolding.
    """
    cores = list(cores)
    mixed = ksrft_mix_cores(cores, op.signs, [k for k in range(len(cores)) if k != n - 1])
    return sketch_from_mixed(mixed, mix_tensor(x, op.signs), n, op.signs[n - 1], op.table)


def sketched_normal(g_s: np.ndarray, x_s: np.ndarray):
    """Real normal equations ``(P, Q)`` of a (possibly complex) sketched subproblem."""
    a = mode2_matrix(g_s)
    if np.iscomplexobj(a) or np.iscomplexobj(x_s):
        p = (x_s @ a.conj()).real
        q = (a.T @ a.conj()).real
    else:
        p = x_s @ a
        q = a.T @ a
    return p, q


# --------------------------------------------------------------------------
# randomized batch solvers
# --------------------------------------------------------------------------


def _sampling_dists(kind: SketchKind, cores, rcond):
    if kind is SketchKind.LEVERAGE:
        return [core_distribution(c, rcond) for c in cores]
    return [c.shape[1] for c in cores]


def tr_als_sampled(
    x: np.ndarray,
    ranks,
    init: TRCores,
    kind,
    m: int,
    opts: SolveOptions = SolveOptions(),
    exhaustive: bool = False,
):
    """TR-ALS where every subproblem is replaced by a row-sampled one.

    ``kind`` is :attr:`SketchKind.UNIFORM` or :attr:`SketchKind.LEVERAGE`. A
    fresh table is drawn for every subproblem; with leverage sampling the
    distribution of a core is recomputed right after that core is updated.
    """
    kind = SketchKind(kind)
    if kind is SketchKind.KSRFT:
        raise DomainError("use tr_ksrft_als for KSRFT sketches")
    init = check_init(x, ranks, init)
    rng = np.random.default_rng(opts.seed)
    cores = list(init.copy().cores)
    order = len(cores)
    dists = _sampling_dists(kind, cores, opts.pinv_rcond)
    full = exhaustive_table(x.shape) if exhaustive else None
    errors: list[float] = []
    for _ in range(int(opts.max_iters)):
        for n in range(1, order + 1):
            if full is not None:
                table = full
            else:
                table = sample_indices([None if k == n - 1 else d for k, d in enumerate(dists)], m, rng)
            g_s, x_s = ssit(cores, x, n, table)
            p, q = sketched_normal(g_s, x_s)
            r0, _, r1 = cores[n - 1].shape
            cores[n - 1] = core_from_matrix(solve_normal(q, p, opts.pinv_rcond), r0, r1)
            if kind is SketchKind.LEVERAGE:
                dists[n - 1] = core_distribution(cores[n - 1], opts.pinv_rcond)
        errors.append(relative_error(x, cores))
        if len(errors) > 1 and abs(errors[-2] - errors[-1]) < opts.tol:
            break
    return TRCores(cores), errors


def tr_ksrft_als(
    x: np.ndarray,
    ranks,
    init: TRCores,
    m: int,
    opts: SolveOptions = SolveOptions(),
    exhaustive: bool = False,
):
    """TR-ALS with KSRFT-sketched subproblems.

    The tensor is mixed once; cores are re-mixed as they change. Each complex
    sketched subproblem is solved for a real core through the real part of its
    normal equations.
    """
    init = check_init(x, ranks, init)
    rng = np.random.default_rng(opts.seed)
    cores = list(init.copy().cores)
    order = len(cores)
    signs = random_signs(x.shape, rng)
    mixed_x = mix_tensor(x, signs)
    mixed = ksrft_mix_cores(cores, signs)
    full = exhaustive_table(x.shape) if exhaustive else None
    errors: list[float] = []
    for _ in range(int(opts.max_iters)):
        for n in range(1, order + 1):
            if full is not None:
                table = full
            else:
                table = sample_indices(
                    [None if k == n - 1 else d for k, d in enumerate(x.shape)], m, rng
                )
            g_s, x_s = sketch_from_mixed(mixed, mixed_x, n, signs[n - 1], table)
            p, q = sketched_normal(g_s, x_s)
            r0, _, r1 = cores[n - 1].shape
            cores[n - 1] = core_from_matrix(solve_normal(q, p, opts.pinv_rcond), r0, r1)
            mixed[n - 1] = mix_mode(cores[n - 1], 1, signs[n - 1])
        errors.append(relative_error(x, cores))
        if len(errors) > 1 and abs(errors[-2] - errors[-1]) < opts.tol:
            break
    return TRCores(cores), errors


# --------------------------------------------------------------------------
# sketch-size guidance
# --------------------------------------------------------------------------


def suggested_sketch_size(kind, ranks, n: int, eps: float, delta: float, gamma: float = 2.0, dims=None) -> int:
    """Sufficient sketch size for a ``(1 + eps)`` relative-error solve of mode ``n``.

    Advisory only; nothing in the package enforces it.

    * uniform: ``(2 g R_n R_{n+1} / eps) * max(48/eps * ln(96 g R_n R_{n+1} / (eps^2 sqrt(delta))), 1/delta)``
      where ``g = gamma > 1`` bounds the coherence of the subchain matrix;
    * leverage: ``prod_j R_j^2 * max(16 / (3 (sqrt2 - 1)^2) ln(4 R_n R_{n+1} / delta), 4 / (eps delta))``;
    * ksrft: the simplified order bound
      ``eps^-1 (R_n R_{n+1})^(2(N-1)) log^(2N-3)(R_n R_{n+1}/eps)
      log^4(R_n R_{n+1}/eps log(R_n R_{n+1}/eps)) log(prod_{j!=n} I_j)``
      with unit constant (needs ``dims``); treat it as an order of magnitude.
    """
    kind = SketchKind(kind)
    ranks = tuple(int(r) for r in ranks)
    order = len(ranks)
    if not (0 < eps < 1 and 0 < delta < 1):
        raise DomainError("eps and delta must lie in (0, 1)")
    rr = ranks[n - 1] * ranks[n % order]
    if kind is SketchKind.UNIFORM:
        if gamma <= 1:
            raise DomainError("gamma must exceed 1")
        first = 48.0 / eps * math.log(96.0 * gamma * rr / (eps**2 * math.sqrt(delta)))
        return math.ceil(2.0 * gamma * rr / eps * max(first, 1.0 / delta))
    if kind is SketchKind.LEVERAGE:
        prod = math.prod(r * r for r in ranks)
        first = 16.0 / (3.0 * (math.sqrt(2.0) - 1.0) ** 2) * math.log(4.0 * rr / delta)
        return math.floor(prod * max(first, 4.0 / (eps * delta))) + 1
    if dims is None:
        raise DomainError("the KSRFT bound needs the tensor dimensions")
    j = math.prod(int(d) for k, d in enumerate(dims) if k != n - 1)
    base = rr / eps
    value = (
        rr ** (2 * (order - 1)) / eps
        * math.log(base) ** (2 * order - 3)
        * math.log(base * math.log(base)) ** 4
        * math.log(j)
    )
    return math.ceil(value)
