"""Streaming TR decomposition along the last (temporal) mode.

The tracker keeps, for every non-temporal mode ``n``, the accumulated normal
equations ``G_n(2) Q_n = P_n`` of the subproblem over all data seen so far.
When a block of ``t_new`` temporal slices arrives:

1. the new rows of the temporal core are fitted against the current
   non-temporal cores and appended;
2. each non-temporal mode adds the contribution of the new block only to
   ``P_n`` and ``Q_n`` and re-solves for its core.

Old data is never revisited, so the cost of a step does not grow with the
length of the stream. :func:`str_init`/:func:`str_update` use the exact Gram
structure; :func:`rstr_init`/:func:`rstr_update` sketch every subproblem with
uniform sampling, leverage-score sampling or KSRFT.

Updates return a new :class:`StreamState`; the previous state stays valid.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DomainError
from .sketching import (
    SampleIndexTable,
    SketchConfig,
    SketchKind,
    core_distribution,
    exhaustive_table,
    mix_mode,
    mix_tensor,
    random_signs,
    sample_core,
    sample_fibers,
    sample_mode,
    sampled_chain,
    sketched_normal,
    unmix_rows,
)
from .solvers import solve_normal
from .tr_algebra import (
    TRCores,
    contract_chain,
    core_from_matrix,
    gram_chain,
    gram_core,
    gram_matrix,
    unfolding_times_subchain,
)


@dataclass
class SketchState:
    """Randomness and per-mode caches carried by a randomized tracker.

    ``table.idxs[:, k]`` holds the current sample of mode ``k`` and
    ``sampled[k]`` the matching slices of core ``k`` (mixed for KSRFT).
    For the temporal mode both refer to the latest block only.
    """

    config: SketchConfig
    table: SampleIndexTable
    sampled: list
    signs: list | None = None


@dataclass
class StreamState:
    """Everything a tracker needs between time steps.

    ``P[n]`` has shape ``(I_n, R_n R_{n+1})`` and ``Q[n]`` is square of size
    ``R_n R_{n+1}``, both with the ``R_n`` index fastest (the column order of
    the classical mode-2 unfolding of core ``n``). ``grams`` is only kept by
    the exact tracker.
    """

    cores: TRCores
    P: list
    Q: list
    t_processed: int
    grams: list | None = None
    sketch: SketchState | None = None
    rcond: float = 1e-12
    steps: int = 0

    @property
    def order(self) -> int:
        return self.cores.order


def _check_stream_input(x: np.ndarray, cores: TRCores, what: str):
    if x.ndim != cores.order:
        raise DomainError(f"{what} has order {x.ndim}, the cores have order {cores.order}")
    if tuple(x.shape[:-1]) != cores.shape[:-1]:
        raise DomainError(
            f"{what} has non-temporal dims {x.shape[:-1]}, expected {cores.shape[:-1]}"
        )
    if x.shape[-1] < 1:
        raise DomainError(f"{what} has no temporal slices")


def _to_cores(cores) -> TRCores:
    return cores.copy() if isinstance(cores, TRCores) else TRCores(cores, copy=True)


def _check_ranks(cores: TRCores, ranks):
    if ranks is None:
        return
    if np.isscalar(ranks):
        ranks = (int(ranks),) * cores.order
    if tuple(int(r) for r in ranks) != cores.ranks:
        raise DomainError(f"initial cores have ranks {cores.ranks}, expected {tuple(ranks)}")


# --------------------------------------------------------------------------
# exact streaming
# --------------------------------------------------------------------------


def str_init(x_init: np.ndarray, ranks, init_cores, rcond: float = 1e-12) -> StreamState:
    """Build the complementary matrices of the exact tracker from an initial decomposition."""
    cores = _to_cores(init_cores)
    _check_ranks(cores, ranks)
    _check_stream_input(x_init, cores, "initial tensor")
    if x_init.shape[-1] != cores.shape[-1]:
        raise DomainError(
            f"initial tensor has {x_init.shape[-1]} temporal slices, the temporal core has {cores.shape[-1]}"
        )
    order = cores.order
    grams = [gram_core(c) for c in cores]
    P, Q = [], []
    for n in range(1, order):
        P.append(unfolding_times_subchain(x_init, cores, n))
        Q.append(gram_matrix(gram_chain(grams, n)))
    return StreamState(cores, P, Q, int(x_init.shape[-1]), grams=grams, rcond=rcond)


def _temporal_rows(state: StreamState, x_new: np.ndarray) -> np.ndarray:
    """Least-squares rows of the temporal core for a new block."""
    order = state.order
    h = gram_matrix(gram_chain(state.grams, order))
    cores = list(state.cores.cores[:-1]) + [None]
    m = unfolding_times_subchain(x_new, cores, order)
    return solve_normal(h, m, state.rcond)


def str_update(state: StreamState, x_new: np.ndarray) -> StreamState:
    """Absorb a block of new temporal slices with the exact tracker."""
    if state.grams is None:
        raise DomainError("str_update needs a state built by str_init")
    _check_stream_input(x_new, state.cores, "new block")
    order = state.order
    cores = list(state.cores.cores)
    grams = list(state.grams)
    P, Q = list(state.P), list(state.Q)

    r_t, _, r_1 = cores[-1].shape
    g_new = core_from_matrix(_temporal_rows(state, x_new), r_t, r_1)
    cores[-1] = np.concatenate([cores[-1], g_new], axis=1)
    grams[-1] = gram_core(cores[-1])
    z_new = gram_core(g_new)

    for n in range(1, order):
        k = n - 1
        with_new = cores[:-1] + [g_new]
        P[k] = P[k] + unfolding_times_subchain(x_new, with_new, n)
        # n-1, ..., 1, N(new), N-1, ..., n+1
        seq = [grams[j] for j in range(k - 1, -1, -1)] + [z_new]
        seq += [grams[j] for j in range(order - 2, k, -1)]
        Q[k] = Q[k] + gram_matrix(contract_chain(seq))
        r0, _, r1 = cores[k].shape
        cores[k] = core_from_matrix(solve_normal(Q[k], P[k], state.rcond), r0, r1)
        grams[k] = gram_core(cores[k])

    return replace(
        state,
        cores=TRCores(cores),
        P=P,
        Q=Q,
        grams=grams,
        t_processed=state.t_processed + int(x_new.shape[-1]),
        steps=state.steps + 1,
    )


# --------------------------------------------------------------------------
# randomized streaming
# --------------------------------------------------------------------------


def _draw(sk: SketchState, k: int, core: np.ndarray, dim: int, rng, rcond) -> np.ndarray:
    """New sample column for mode ``k`` (0-based) after its core changed."""
    cfg = sk.config
    if cfg.exhaustive:
        return sk.table.idxs[:, k]
    if cfg.kind is SketchKind.LEVERAGE:
        return sample_mode(core_distribution(core, rcond), cfg.m, rng)
    return sample_mode(dim, cfg.m, rng)


def _cache(sk: SketchState, k: int, core: np.ndarray) -> np.ndarray:
    if sk.config.kind is SketchKind.KSRFT:
        core = mix_mode(core, 1, sk.signs[k])
    return sample_core(core, sk.table.idxs[:, k])


def _mode_sketch(sk: SketchState, x: np.ndarray, mixed_x, n: int):
    """Sketched normal equations ``(P, Q)`` of mode ``n`` against block ``x``.

    An exhaustive table enumerates mode ``n`` too; only the rows with
    ``i_n = 1`` are used so every combination of the other modes appears
    once and the result equals the exact normal equations.
    """
    table, sampled = sk.table, sk.sampled
    if sk.config.exhaustive:
        rows = table.idxs[:, n - 1] == 0
        table = SampleIndexTable(table.idxs[rows])
        # mode n's own cache is unused here and may be stale
        sampled = [c if k == n - 1 else c[:, rows, :] for k, c in enumerate(sampled)]
    g_s = sampled_chain(sampled, n)
    if sk.config.kind is SketchKind.KSRFT:
        x_s = unmix_rows(sample_fibers(mixed_x, n, table), sk.signs[n - 1])
    else:
        x_s = sample_fibers(x, n, table)
    return sketched_normal(g_s, x_s)


def rstr_init(
    x_init: np.ndarray,
    ranks,
    init_cores,
    sketch,
    rng: np.random.Generator,
    rcond: float = 1e-12,
    m: int | None = None,
) -> StreamState:
    """Build the sketched complementary matrices of a randomized tracker.

    ``sketch`` is a :class:`SketchConfig`, or a :class:`SketchKind` together
    with the sketch size ``m``. One multi-index table with a column per mode is
    drawn up front; the sampled (and, for KSRFT, mixed) slices of every core
    are cached so cores that do not change are never sampled again.
    """
    if not isinstance(sketch, SketchConfig):
        if m is None:
            raise DomainError("a sketch kind needs a sketch size m")
        sketch = SketchConfig(SketchKind(sketch), m)
    cores = _to_cores(init_cores)
    _check_ranks(cores, ranks)
    _check_stream_input(x_init, cores, "initial tensor")
    if x_init.shape[-1] != cores.shape[-1]:
        raise DomainError(
            f"initial tensor has {x_init.shape[-1]} temporal slices, the temporal core has {cores.shape[-1]}"
        )
    order = cores.order
    need = cores.ranks[-1] * cores.ranks[0]
    if not sketch.exhaustive and sketch.m < need:
        raise DomainError(
            f"sketch size {sketch.m} is below R_N R_1 = {need}; the temporal solve would be underdetermined"
        )
    dims = x_init.shape
    kind = sketch.kind
    if sketch.exhaustive:
        table = exhaustive_table(dims)
    else:
        cols = []
        for k, dim in enumerate(dims):
            dist = core_distribution(cores[k], rcond) if kind is SketchKind.LEVERAGE else dim
            cols.append(sample_mode(dist, sketch.m, rng))
        table = SampleIndexTable(np.stack(cols, axis=1).astype(np.int64))
    signs = random_signs(dims, rng) if kind is SketchKind.KSRFT else None
    sk = SketchState(sketch, table, [None] * order, signs)
    sk.sampled = [_cache(sk, k, cores[k]) for k in range(order)]
    mixed_x = mix_tensor(x_init, signs) if kind is SketchKind.KSRFT else None

    P, Q = [], []
    for n in range(1, order):
        p, q = _mode_sketch(sk, x_init, mixed_x, n)
        P.append(p)
        Q.append(q)
    return StreamState(cores, P, Q, int(dims[-1]), sketch=sk, rcond=rcond)


def rstr_update(state: StreamState, x_new: np.ndarray, rng: np.random.Generator) -> StreamState:
    """Absorb a block of new temporal slices with a randomized tracker."""
    if state.sketch is None:
        raise DomainError("rstr_update needs a state built by rstr_init")
    _check_stream_input(x_new, state.cores, "new block")
    old = state.sketch
    kind = old.config.kind
    order = state.order
    dims = x_new.shape
    t_new = int(dims[-1])
    cores = list(state.cores.cores)
    P, Q = list(state.P), list(state.Q)

    table = old.table
    if old.config.exhaustive:
        table = exhaustive_table(dims)
    sk = SketchState(old.config, SampleIndexTable(table.idxs.copy()), list(old.sampled), old.signs)
    mixed_x = None
    if kind is SketchKind.KSRFT:
        sk.signs = random_signs(dims, rng)
        mixed_x = mix_tensor(x_new, sk.signs)
    if kind is SketchKind.KSRFT or old.config.exhaustive:
        for k in range(order - 1):
            sk.sampled[k] = _cache(sk, k, cores[k])

    # temporal mode
    p, q = _mode_sketch(sk, x_new, mixed_x, order)
    r_t, _, r_1 = cores[-1].shape
    g_new = core_from_matrix(solve_normal(q, p, state.rcond), r_t, r_1)
    cores[-1] = np.concatenate([cores[-1], g_new], axis=1)
    sk.table.idxs[:, -1] = _draw(sk, order - 1, g_new, t_new, rng, state.rcond)
    sk.sampled[-1] = _cache(sk, order - 1, g_new)

    # non-temporal modes
    for n in range(1, order):
        k = n - 1
        p, q = _mode_sketch(sk, x_new, mixed_x, n)
        P[k] = P[k] + p
        Q[k] = Q[k] + q
        r0, _, r1 = cores[k].shape
        cores[k] = core_from_matrix(solve_normal(Q[k], P[k], state.rcond), r0, r1)
        sk.table.idxs[:, k] = _draw(sk, k, cores[k], dims[k], rng, state.rcond)
        sk.sampled[k] = _cache(sk, k, cores[k])

    return replace(
        state,
        cores=TRCores(cores),
        P=P,
        Q=Q,
        sketch=sk,
        t_processed=state.t_processed + t_new,
        steps=state.steps + 1,
    )


# --------------------------------------------------------------------------
# memory accounting
# --------------------------------------------------------------------------


@dataclass
class MemoryFootprint:
    """Stored scalars of a tracker, grouped like the standard memory estimate.

    ``new_block`` is the incoming data, ``factors`` the non-temporal cores plus
    ``P_n`` (``2 (N-1) I R^2`` for equal sizes), ``temporal`` the temporal core
    (``t_old R^2``), ``gram`` the ``Q_n`` (``(N-1) R^4``). Gram tensors ``Z_n``
    and sample caches are scratch that the estimate leaves out; they are
    reported in ``workspace``.
    """

    new_block: int
    factors: int
    temporal: int
    gram: int
    workspace: int = 0
    detail: dict = field(default_factory=dict)

    @property
    def total(self) -> int:
        return self.new_block + self.factors + self.temporal + self.gram


def memory_footprint(state: StreamState, t_new: int) -> MemoryFootprint:
    """Count stored scalars of ``state`` when a block of ``t_new`` slices arrives."""
    cores = state.cores
    non_temporal = sum(c.size for c in cores.cores[:-1])
    p = sum(a.size for a in state.P)
    q = sum(a.size for a in state.Q)
    workspace = 0
    if state.grams is not None:
        workspace += sum(z.size for z in state.grams)
    if state.sketch is not None:
        workspace += sum(s.size for s in state.sketch.sampled) + state.sketch.table.idxs.size
    block = int(np.prod(cores.shape[:-1])) * int(t_new)
    return MemoryFootprint(
        new_block=block,
        factors=non_temporal + p,
        temporal=cores[-1].size,
        gram=q,
        workspace=workspace,
        detail={"cores": non_temporal, "P": p, "Q": q},
    )


def memory_estimate(order: int, dim: int, rank: int, t_old: int, t_new: int) -> dict:
    """Term-by-term ``I^{N-1} t_new + (2 (N-1) I + t_old) R^2 + (N-1) R^4``."""
    n1 = order - 1
    return {
        "new_block": dim**n1 * t_new,
        "factors": 2 * n1 * dim * rank**2,
        "temporal": t_old * rank**2,
        "gram": n1 * rank**4,
    }
