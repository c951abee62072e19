"""Tensor-ring cores and the products built on them.

A TR decomposition of an ``I_1 x ... x I_N`` tensor is a ring of third-order
cores ``G_n`` of shape ``(R_n, I_n, R_{n+1})`` with ``R_{N+1} = R_1``; entry
``(i_1, ..., i_N)`` equals ``trace(G_1(i_1) ... G_N(i_N))`` where
``G_n(i) = G_n[:, i, :]`` is a lateral slice.

Column conventions (pinned by the Gram-identity tests):

* ``core_matrix(G_n)`` is the classical mode-2 unfolding ``G_n(2)`` of shape
  ``(I_n, R_n R_{n+1})``; column ``a + b R_n`` holds ``G_n[a, :, b]``.
* ``subchain_matrix(cores, n)`` is the mode-2 unfolding of the subchain tensor
  ``G^{!=n}`` of shape ``(prod_{j!=n} I_j, R_n R_{n+1})`` with the same column
  order (the ``R_n`` index runs fastest), so that
  ``X_[n] = G_n(2) @ subchain_matrix(cores, n).T``.
* A Gram tensor ``Z`` of shape ``(R_{n+1}, R_n, R_{n+1}, R_n)`` is used through
  its prefix-2 unfolding, which has the same row/column order.
"""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from .errors import DomainError
from .tensor_core import frobenius_norm


class TRCores:
    """A ring of third-order cores.

    Core ``n`` (0-based in the list) has shape ``(R_n, I_n, R_{n+1})`` and the
    last core closes the ring back to ``R_1``.
    """

    __slots__ = ("cores",)

    def __init__(self, cores: Sequence[np.ndarray], copy: bool = False):
        cores = [np.array(c, copy=True) if copy else np.asarray(c) for c in cores]
        if len(cores) < 2:
            raise DomainError(f"a tensor ring needs at least 2 cores, got {len(cores)}")
        for k, c in enumerate(cores):
            if c.ndim != 3:
                raise DomainError(f"core {k + 1} has order {c.ndim}, expected 3")
            if min(c.shape) < 1:
                raise DomainError(f"core {k + 1} has an empty dimension: {c.shape}")
        for k, c in enumerate(cores):
            nxt = cores[(k + 1) % len(cores)]
            if c.shape[2] != nxt.shape[0]:
                raise DomainError(
                    f"rank chain broken between core {k + 1} (right rank {c.shape[2]}) "
                    f"and core {(k + 1) % len(cores) + 1} (left rank {nxt.shape[0]})"
                )
        self.cores = cores

    def __len__(self):
        return len(self.cores)

    def __getitem__(self, k):
        return self.cores[k]

    def __iter__(self):
        return iter(self.cores)

    @property
    def order(self) -> int:
        return len(self.cores)

    @property
    def ranks(self) -> tuple[int, ...]:
        """``(R_1, ..., R_N)``."""
        return tuple(c.shape[0] for c in self.cores)

    @property
    def shape(self) -> tuple[int, ...]:
        """Shape ``(I_1, ..., I_N)`` of the represented tensor."""
        return tuple(c.shape[1] for c in self.cores)

    def replace(self, k: int, core: np.ndarray) -> "TRCores":
        """Return a new ring with core ``k`` (0-based) swapped out."""
        cores = list(self.cores)
        cores[k] = core
        return TRCores(cores)

    def copy(self) -> "TRCores":
        return TRCores(self.cores, copy=True)

    def __repr__(self):
        return f"TRCores(shape={self.shape}, ranks={self.ranks})"


def random_cores(shape, ranks, rng: np.random.Generator, scale: bool = True) -> TRCores:
    """Cores with standard normal entries.

    With ``scale`` each core is divided by ``sqrt(R_n R_{n+1})`` so the
    reconstruction has entries of order one regardless of the ranks.
    """
    shape = tuple(int(s) for s in shape)
    ranks = normalize_ranks(ranks, len(shape))
    cores = []
    for k, dim in enumerate(shape):
        r0, r1 = ranks[k], ranks[(k + 1) % len(shape)]
        core = rng.standard_normal((r0, dim, r1))
        if scale:
            core /= np.sqrt(r0 * r1)
        cores.append(core)
    return TRCores(cores)


def normalize_ranks(ranks, order: int) -> tuple[int, ...]:
    """Expand a scalar rank to a tuple and validate a rank tuple."""
    if np.isscalar(ranks):
        ranks = (int(ranks),) * order
    ranks = tuple(int(r) for r in ranks)
    if len(ranks) != order:
        raise DomainError(f"expected {order} ranks, got {len(ranks)}")
    if any(r < 1 for r in ranks):
        raise DomainError(f"ranks must be positive, got {ranks}")
    return ranks


def core_matrix(core: np.ndarray) -> np.ndarray:
    """Classical mode-2 unfolding ``G(2)`` of a core, shape ``(I, R_0 R_1)``."""
    r0, dim, r1 = core.shape
    return core.transpose(1, 2, 0).reshape(dim, r0 * r1)


def core_from_matrix(matrix: np.ndarray, r0: int, r1: int) -> np.ndarray:
    """Inverse of :func:`core_matrix`."""
    return np.ascontiguousarray(matrix.reshape(matrix.shape[0], r1, r0).transpose(2, 0, 1))


def mode2_matrix(t: np.ndarray) -> np.ndarray:
    """Mode-2 unfolding ``T_[2]`` of a third-order tensor (third index fastest)."""
    return t.transpose(1, 0, 2).reshape(t.shape[1], -1)


def outer_product(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Outer product; the result has shape ``a.shape + b.shape``."""
    return np.multiply.outer(np.asarray(a), np.asarray(b))


def contracted_product(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``C(i1, i2, r1, r2) = sum_{j,k} A(i1, j, r1, k) B(j, i2, k, r2)``."""
    if a.ndim != 4 or b.ndim != 4:
        raise DomainError("contracted_product needs two fourth-order tensors")
    if a.shape[1] != b.shape[0] or a.shape[3] != b.shape[2]:
        raise DomainError(
            f"contraction dims mismatch: A {a.shape} against B {b.shape}"
        )
    i1, j, r1, k = a.shape
    _, i2, _, r2 = b.shape
    left = a.transpose(0, 2, 1, 3).reshape(i1 * r1, j * k)
    right = b.transpose(0, 2, 1, 3).reshape(j * k, i2 * r2)
    return (left @ right).reshape(i1, r1, i2, r2).transpose(0, 2, 1, 3)


def subchain_product(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Mode-2 subchain product: slice ``j1 + J1*j2`` of the result is ``A(j1) @ B(j2)``."""
    if a.ndim != 3 or b.ndim != 3:
        raise DomainError("subchain_product needs two third-order tensors")
    if a.shape[2] != b.shape[0]:
        raise DomainError(f"inner dims mismatch: A {a.shape} against B {b.shape}")
    i1, j1, k = a.shape
    _, j2, i2 = b.shape
    prod = a.reshape(i1 * j1, k) @ b.reshape(k, j2 * i2)
    # prod[(a, j1), (j2, c)] -> (a, j1, j2, c) -> merge (j1, j2) with j1 fastest
    return prod.reshape(i1, j1, j2, i2).reshape(i1, j1 * j2, i2, order="F")


def slices_hadamard(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Mode-2 slices-Hadamard product: slice ``j`` of the result is ``A(j) @ B(j)``."""
    if a.ndim != 3 or b.ndim != 3:
        raise DomainError("slices_hadamard needs two third-order tensors")
    if a.shape[1] != b.shape[1]:
        raise DomainError(f"mode-2 lengths differ: {a.shape[1]} vs {b.shape[1]}")
    if a.shape[2] != b.shape[0]:
        raise DomainError(f"inner dims mismatch: A {a.shape} against B {b.shape}")
    out = np.matmul(a.transpose(1, 0, 2), b.transpose(1, 0, 2))
    return out.transpose(1, 0, 2)


def _ring_order(n: int, order: int) -> list[int]:
    """0-based modes ``n+1, ..., N, 1, ..., n-1`` for 1-based ``n``."""
    return [(n - 1 + s) % order for s in range(1, order)]


def chain(cores: Sequence[np.ndarray]) -> np.ndarray:
    """Subchain product of a sequence of cores, left to right."""
    out = cores[0]
    for c in cores[1:]:
        out = subchain_product(out, c)
    return out


def subchain(cores, n: int) -> np.ndarray:
    """Subchain tensor ``G^{!=n}`` of shape ``(R_{n+1}, prod_{j!=n} I_j, R_n)``."""
    cores = list(cores)
    if not 1 <= n <= len(cores):
        raise DomainError(f"mode {n} is not in [1, {len(cores)}]")
    return chain([cores[k] for k in _ring_order(n, len(cores))])


def subchain_matrix(cores, n: int) -> np.ndarray:
    """Mode-2 unfolding of :func:`subchain`, shape ``(prod_{j!=n} I_j, R_n R_{n+1})``."""
    return mode2_matrix(subchain(cores, n))


def _contract_leading_modes(x: np.ndarray, cores) -> np.ndarray:
    """``X_[N] @ subchain_matrix`` for the last mode, one core at a time.

    Avoids building the ``prod_{j<N} I_j x R_N R_1`` subchain: the first core
    is applied with a single GEMM on the data and each later core shrinks the
    running tensor by its dimension.
    """
    first = cores[0]
    r_1, i_1, r_2 = first.shape
    rest = x.size // i_1
    # t[a, b, rest] with the remaining data indices first-fastest in ``rest``
    fmat = first.transpose(0, 2, 1).reshape(r_1 * r_2, i_1)
    t = (fmat @ x.reshape(i_1, rest, order="F")).reshape(r_1, r_2, rest)
    for core in cores[1:]:
        r_j, i_j, r_next = core.shape
        rest //= i_j
        t = t.reshape(r_1, r_j, rest, i_j)
        t = np.tensordot(t, core, axes=([1, 3], [0, 1])).transpose(0, 2, 1)
    # t is (R_1, R_N, I_N); columns of the result run R_N fastest
    return np.ascontiguousarray(t.transpose(2, 0, 1)).reshape(t.shape[2], -1)


def unfolding_times_subchain(x: np.ndarray, cores, n: int) -> np.ndarray:
    """``X_[n] @ subchain_matrix(cores, n)`` without permuting ``x``.

    Core ``n`` itself is never read and may be ``None``. The product is formed
    by contracting the modes before ``n`` first (a single GEMM on the
    Fortran-ordered data) and the modes after ``n`` second, so the only large
    temporary is a factor ``R^2 / prod_{j<n} I_j`` of the input size.
    """
    cores = list(cores)
    order = len(cores)
    k = n - 1
    dims = x.shape
    if len(dims) != order:
        raise DomainError(f"tensor of order {len(dims)} against {order} cores")
    for j, c in enumerate(cores):
        if j != k and c.shape[1] != dims[j]:
            raise DomainError(f"core {j + 1} has {c.shape[1]} slices, mode {j + 1} has {dims[j]}")
    r_n = cores[(k - 1) % order].shape[2]
    r_next = cores[(k + 1) % order].shape[0]
    i_n = dims[k]

    if k == 0:
        right = chain(cores[1:])  # (R_2, K_r, R_1)
        xm = x.reshape(i_n, -1, order="F")
        return xm @ mode2_matrix(right)
    if k == order - 1:
        return _contract_leading_modes(x, cores[:k])
    left = chain(cores[:k])  # (R_1, K_l, R_n)
    k_left = left.shape[1]

    r_1 = left.shape[0]
    right = chain(cores[k + 1 :])  # (R_{n+1}, K_r, R_1)
    k_right = right.shape[1]
    xm = x.reshape(k_left, i_n * k_right, order="F")
    lmat = left.transpose(1, 0, 2).reshape(k_left, r_1 * r_n)
    w = (lmat.T @ xm).reshape(r_1, r_n, k_right, i_n)
    # M[i, a, b] = sum_{c, s} W[c, a, s, i] * right[b, s, c]
    m = np.tensordot(w, right, axes=([0, 2], [2, 1]))  # (a, i, b)
    return m.transpose(1, 2, 0).reshape(i_n, r_n * r_next)


def tr_reconstruct(cores) -> np.ndarray:
    """Full tensor ``X(i_1..i_N) = trace(G_1(i_1) ... G_N(i_N))`` (Fortran-ordered)."""
    cores = list(cores)
    shape = tuple(c.shape[1] for c in cores)
    left = mode2_matrix(chain(cores[:-1]))  # (prod I_<N, R_N R_1)
    # (I_N x K) in C order is (K x I_N) in F order: the result is F-contiguous
    flat = (core_matrix(cores[-1]) @ left.T).T
    return flat.reshape(shape, order="F")


def gram_core(core: np.ndarray) -> np.ndarray:
    """Gram tensor ``Z = sum_i G(i)^T o G(i)^T`` of shape ``(R_1, R_0, R_1, R_0)``."""
    r0, _, r1 = core.shape
    m = mode2_matrix(core)
    return (m.T @ m).reshape(r1, r0, r1, r0, order="F")


def gram_matrix(z: np.ndarray) -> np.ndarray:
    """Prefix-2 unfolding of a fourth-order Gram tensor."""
    d0, d1, d2, d3 = z.shape
    return z.reshape(d0 * d1, d2 * d3, order="F")


def contract_chain(grams: Sequence[np.ndarray]) -> np.ndarray:
    """Left-to-right contracted product ``Z_a x Z_b x ...``."""
    out = grams[0]
    for z in grams[1:]:
        out = contracted_product(out, z)
    return out


def gram_chain(grams: Sequence[np.ndarray], n: int) -> np.ndarray:
    """Contracted Gram chain ``H^{!=n}`` in the order ``n-1, ..., 1, N, ..., n+1``.

    ``grams`` holds ``Z_1..Z_N``; entry ``n`` is not read and may be ``None``.
    The prefix-2 unfolding of the result equals ``G^{!=n}_[2]^T G^{!=n}_[2]``.
    """
    grams = list(grams)
    order = len(grams)
    if not 1 <= n <= order:
        raise DomainError(f"mode {n} is not in [1, {order}]")
    seq = [grams[(n - 1 - s) % order] for s in range(1, order)]
    for a, b in zip(seq, seq[1:]):
        if a.shape[1] != b.shape[0] or a.shape[3] != b.shape[2]:
            raise DomainError(f"rank chain mismatch between Gram tensors {a.shape} and {b.shape}")
    return contract_chain(seq)


def relative_error(x: np.ndarray, cores, chunk: int = 1 << 24) -> float:
    """``||X - TR(cores)||_F / ||X||_F``.

    The reconstruction is produced in blocks along the last mode so the full
    approximation is never held in memory at once.
    """
    cores = list(cores)
    shape = tuple(c.shape[1] for c in cores)
    if tuple(x.shape) != shape:
        raise DomainError(f"tensor shape {x.shape} does not match cores {shape}")
    xnorm = frobenius_norm(x)
    if xnorm == 0.0:
        raise DomainError("relative error is undefined for a zero tensor")
    left = mode2_matrix(chain(cores[:-1]))
    gl = core_matrix(cores[-1])
    k = left.shape[0]
    step = max(1, chunk // k)
    sq = 0.0
    for t0 in range(0, shape[-1], step):
        t1 = min(shape[-1], t0 + step)
        block = x[..., t0:t1].reshape(k, t1 - t0, order="F")
        diff = block - left @ gl[t0:t1].T
        sq += float(np.vdot(diff, diff).real)
    return float(np.sqrt(sq)) / xnorm
