import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trstream.errors import DomainError
from trstream.sketching import (
    SampleIndexTable,
    SketchConfig,
    SketchKind,
    core_distribution,
    exhaustive_table,
    ksrft_mix_cores,
    ksrft_sketch,
    leverage_scores,
    make_ksrft_operator,
    mix_mode,
    mix_tensor,
    random_signs,
    sample_indices,
    sampled_chain,
    sample_core,
    sketched_normal,
    ssit,
    suggested_sketch_size,
    tr_als_sampled,
    tr_ksrft_als,
    unmix_rows,
)
from trstream.solvers import SolveOptions, solve_normal, tr_als
from trstream.tensor_core import UnfoldKind, linear_index, unfold
from trstream.tr_algebra import (
    TRCores,
    core_matrix,
    mode2_matrix,
    random_cores,
    subchain,
    subchain_matrix,
    tr_reconstruct,
)


class TestLeverage:
    def test_orthonormal_rows(self):
        np.testing.assert_allclose(leverage_scores(np.array([[1.0, 0], [0, 1], [0, 0]])), [1, 1, 0], atol=1e-15)

    def test_invertible_square(self):
        a = np.random.default_rng(0).standard_normal((4, 4))
        np.testing.assert_allclose(leverage_scores(a), 1.0, atol=1e-12)

    def test_basis_independent(self):
        a = np.random.default_rng(1).standard_normal((8, 3))
        ell = leverage_scores(a)
        assert ell.sum() == pytest.approx(3.0, abs=1e-12)
        q, _ = np.linalg.qr(a)
        np.testing.assert_allclose(ell, np.sum(q**2, axis=1), atol=1e-12)

    def test_rank_deficient_sums_to_rank(self):
        rng = np.random.default_rng(2)
        a = rng.standard_normal((7, 2)) @ rng.standard_normal((2, 4))
        assert leverage_scores(a).sum() == pytest.approx(2.0, abs=1e-10)


class TestCoreDistribution:
    def test_identical_slices_uniform(self):
        core = np.repeat(np.random.default_rng(0).standard_normal((2, 1, 3)), 5, axis=1)
        np.testing.assert_allclose(core_distribution(core), 0.2, atol=1e-12)

    def test_single_nonzero_row(self):
        core = np.zeros((2, 4, 2))
        core[:, 2, :] = np.random.default_rng(1).standard_normal((2, 2))
        np.testing.assert_allclose(core_distribution(core), [0, 0, 1, 0], atol=1e-12)

    def test_brute_force(self):
        core = np.random.default_rng(2).standard_normal((2, 9, 2))
        m = core_matrix(core)
        u, s, _ = np.linalg.svd(m, full_matrices=False)
        r = np.linalg.matrix_rank(m)
        expected = np.sum(u[:, :r] ** 2, axis=1) / r
        p = core_distribution(core)
        np.testing.assert_allclose(p, expected, atol=1e-12)
        assert p.sum() == pytest.approx(1.0, abs=1e-12) and (p >= 0).all()

    def test_zero_core(self):
        with pytest.raises(DomainError):
            core_distribution(np.zeros((2, 3, 2)))


class TestSampleIndices:
    def test_point_mass(self):
        t = sample_indices([np.array([1.0, 0, 0])], 20, np.random.default_rng(0))
        assert (t.one_based() == 1).all()

    def test_deterministic(self):
        a = sample_indices([4, np.array([0.2, 0.8])], 30, np.random.default_rng(5))
        b = sample_indices([4, np.array([0.2, 0.8])], 30, np.random.default_rng(5))
        assert np.array_equal(a.idxs, b.idxs)

    def test_uniform_frequencies(self):
        t = sample_indices([4], 40000, np.random.default_rng(1))
        freq = np.bincount(t.idxs[:, 0], minlength=4) / 40000
        assert np.all(np.abs(freq - 0.25) <= 0.02)

    def test_bad_distribution(self):
        with pytest.raises(DomainError):
            sample_indices([np.array([0.5, -0.1, 0.6])], 3, np.random.default_rng(0))
        with pytest.raises(DomainError):
            sample_indices([np.array([np.nan, 1.0])], 3, np.random.default_rng(0))

    def test_unsampled_mode_marked(self):
        t = sample_indices([3, None, 2], 5, np.random.default_rng(0))
        assert (t.idxs[:, 1] == -1).all() and t.m == 5

    def test_sketch_size_positive(self):
        with pytest.raises(DomainError):
            sample_indices([3], 0, np.random.default_rng(0))
        with pytest.raises(DomainError):
            SketchConfig(SketchKind.UNIFORM, 0)


class TestSSIT:
    def test_single_all_ones_sample(self):
        cores = random_cores((2, 3, 4), 2, np.random.default_rng(0))
        x = np.random.default_rng(1).standard_normal((2, 3, 4))
        table = SampleIndexTable(np.zeros((1, 3), dtype=np.int64))
        g_s, x_s = ssit(cores, x, 2, table)
        np.testing.assert_allclose(g_s[:, 0, :], subchain(cores, 2)[:, 0, :], atol=1e-14)
        np.testing.assert_array_equal(x_s[:, 0], x[0, :, 0])

    def test_identity_slices(self):
        cores = TRCores([np.repeat(np.eye(2)[:, None, :], d, axis=1) for d in (2, 3, 4)])
        table = sample_indices([2, 3, 4], 6, np.random.default_rng(0))
        g_s, _ = ssit(cores, np.zeros((2, 3, 4)), 1, table)
        for j in range(6):
            np.testing.assert_array_equal(g_s[:, j, :], np.eye(2))

    @pytest.mark.parametrize("n", [1, 2, 3, 4])
    def test_exhaustive_reproduces_full(self, n):
        shape = (2, 3, 2, 3)
        cores = random_cores(shape, (2, 1, 2, 3), np.random.default_rng(2))
        x = np.random.default_rng(3).standard_normal(shape)
        others = [d if k != n - 1 else 1 for k, d in enumerate(shape)]
        table = exhaustive_table(others)
        g_s, x_s = ssit(cores, x, n, table)
        full = subchain(cores, n)
        xn = unfold(x, UnfoldKind.MODE, n)
        ring = [(n - 1 + s) % 4 for s in range(1, 4)]
        for j, row in enumerate(table.idxs):
            col = linear_index([row[k] + 1 for k in ring], [shape[k] for k in ring]) - 1
            np.testing.assert_allclose(g_s[:, j, :], full[:, col, :], atol=1e-14)
            np.testing.assert_array_equal(x_s[:, j], xn[:, col])

    def test_out_of_range(self):
        cores = random_cores((2, 3), 1, np.random.default_rng(0))
        table = SampleIndexTable(np.array([[0, 5]]))
        with pytest.raises(DomainError):
            ssit(cores, np.zeros((2, 3)), 1, table)


class TestKSRFT:
    def test_unit_dim_is_sign_flip(self):
        core = np.random.default_rng(0).standard_normal((2, 1, 3))
        out = ksrft_mix_cores([core], [np.array([-1.0])])[0]
        np.testing.assert_allclose(out, -core, atol=1e-15)

    def test_zero_core(self):
        signs = random_signs([4], np.random.default_rng(0))
        assert not np.any(ksrft_mix_cores([np.zeros((2, 4, 2))], signs)[0])

    @given(st.integers(1, 9), st.integers(0, 2**31))
    def test_norm_preserved(self, dim, seed):
        rng = np.random.default_rng(seed)
        core = rng.standard_normal((2, dim, 3))
        signs = random_signs([dim], rng)
        mixed = ksrft_mix_cores([core], signs)[0]
        assert np.linalg.norm(mixed) == pytest.approx(np.linalg.norm(core), rel=1e-12)
        np.testing.assert_allclose(unmix_rows(mix_mode(core[0], 0, signs[0]), signs[0]).real, core[0], atol=1e-13)

    def test_signs_are_unit(self):
        for s in random_signs([5, 7], np.random.default_rng(0)):
            assert set(np.abs(s)) == {1.0}

    def test_scalar_pipeline(self):
        cores = TRCores([np.full((1, 1, 1), 2.0), np.full((1, 1, 1), 3.0), np.full((1, 1, 1), 0.5)])
        x = np.full((1, 1, 1), 7.0)
        for seed in range(4):
            op = make_ksrft_operator(x.shape, 4, 2, np.random.default_rng(seed))
            g_s, x_s = ksrft_sketch(cores, x, 2, op)
            # the other modes' sign flips hit both sides alike
            flips = op.signs[0][0] * op.signs[2][0]
            np.testing.assert_allclose(x_s, 7.0 * flips, atol=1e-15)
            np.testing.assert_allclose(g_s, 1.0 * flips, atol=1e-15)
            p, q = sketched_normal(g_s, x_s)
            assert solve_normal(q, p).item() == pytest.approx(7.0, rel=1e-15)

    def test_full_sketch_reproduces_ls(self):
        rng = np.random.default_rng(4)
        shape = (3, 4, 5)
        cores = random_cores(shape, (2, 3, 2), rng)
        x = rng.standard_normal(shape)
        for n in (1, 2, 3):
            op = make_ksrft_operator(shape, 1, n, rng, exhaustive=True)
            g_s, x_s = ksrft_sketch(cores, x, n, op)
            p, q = sketched_normal(g_s, x_s)
            s = subchain_matrix(cores, n)
            xn = unfold(x, UnfoldKind.MODE, n)
            exact = np.linalg.lstsq(s, xn.T, rcond=None)[0].T
            sketched = solve_normal(q, p)
            np.testing.assert_allclose(sketched, exact, rtol=0, atol=1e-10 * np.abs(exact).max())

    def test_pipeline_oracle(self):
        rng = np.random.default_rng(5)
        shape = (3, 4, 2)
        cores = random_cores(shape, 2, rng)
        x = rng.standard_normal(shape)
        n = 2
        op = make_ksrft_operator(shape, 6, n, rng)
        g_s, x_s = ksrft_sketch(cores, x, n, op)
        mixed = mix_tensor(x, op.signs)
        for j, row in enumerate(op.table.idxs):
            fiber = mixed[row[0], :, row[2]]
            np.testing.assert_allclose(x_s[:, j], unmix_rows(fiber[:, None], op.signs[1])[:, 0], atol=1e-14)
            assert np.linalg.norm(x_s[:, j]) == pytest.approx(np.linalg.norm(fiber), rel=1e-12)


class TestSketchedNormal:
    def test_psd(self):
        rng = np.random.default_rng(0)
        for complex_ in (False, True):
            g_s = rng.standard_normal((2, 20, 3))
            if complex_:
                g_s = g_s + 1j * rng.standard_normal(g_s.shape)
            x_s = rng.standard_normal((4, 20))
            _, q = sketched_normal(g_s, x_s)
            assert np.isrealobj(q)
            assert np.linalg.eigvalsh(q).min() >= -1e-10 * np.trace(q)

    def test_global_rescaling_invariance(self):
        rng = np.random.default_rng(1)
        g_s = rng.standard_normal((2, 30, 2))
        x_s = rng.standard_normal((3, 30))
        p, q = sketched_normal(g_s, x_s)
        p2, q2 = sketched_normal(3.7 * g_s, 3.7 * x_s)
        # scaling rows by a common factor c multiplies P and Q by c^2
        np.testing.assert_allclose(p2, 3.7**2 * p, rtol=1e-12)
        np.testing.assert_allclose(solve_normal(q2, p2), solve_normal(q, p), rtol=1e-10)


def _brute_leverage_bound(cores, n):
    order = cores.order
    s = subchain_matrix(cores, n)
    rank_s = np.linalg.matrix_rank(s)
    lev = leverage_scores(s)
    p_full = lev / rank_s
    ring = [(n - 1 + t) % order for t in range(1, order)]
    q = np.ones(1)
    for k in ring:
        # the ring index runs first-fastest, so each later mode multiplies on the left
        q = np.multiply.outer(core_distribution(cores[k]), q).ravel()
    ranks = cores.ranks
    r_n, r_next = ranks[n - 1], ranks[n % order]
    denom = r_n * r_next * np.prod([ranks[m] ** 2 for m in range(order) if m not in (n - 1, n % order)])
    beta = 1.0 / denom
    return q, p_full, beta


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 4), st.data())
def test_leverage_product_bound(order, data):
    shape = tuple(data.draw(st.integers(1, 4)) for _ in range(order))
    ranks = tuple(data.draw(st.integers(1, 3)) for _ in range(order))
    cores = random_cores(shape, ranks, np.random.default_rng(data.draw(st.integers(0, 2**31))))
    for n in range(1, order + 1):
        q, p, beta = _brute_leverage_bound(cores, n)
        assert q.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(q >= beta * p - 1e-12)


def _exhaustive_variants(x, init, opts):
    yield tr_als_sampled(x, None, init, SketchKind.UNIFORM, 1, opts, exhaustive=True)
    yield tr_als_sampled(x, None, init, SketchKind.LEVERAGE, 1, opts, exhaustive=True)
    yield tr_ksrft_als(x, None, init, 1, opts, exhaustive=True)


def test_exhaustive_sampling_matches_als():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((4, 5, 3))
    init = random_cores(x.shape, (2, 2, 3), rng)
    opts = SolveOptions(max_iters=4, tol=0.0)
    ref_cores, ref_err = tr_als(x, None, init, opts)
    for cores, err in _exhaustive_variants(x, init, opts):
        np.testing.assert_allclose(err, ref_err, rtol=1e-8)
        for a, b in zip(cores, ref_cores):
            np.testing.assert_allclose(a, b, rtol=0, atol=1e-8 * np.abs(b).max())


def test_leverage_small_instance():
    hits = 0
    m = 25 * 4
    for seed in range(10):
        rng = np.random.default_rng(seed)
        true = random_cores((10, 10, 10), 2, rng)
        x = tr_reconstruct(true)
        _, err = tr_als_sampled(x, 2, true, SketchKind.LEVERAGE, m, SolveOptions(max_iters=10, seed=seed, tol=0.0))
        hits += err[-1] <= 1e-3
    assert hits >= 8


@pytest.mark.parametrize("make", ["uniform", "leverage", "ksrft"])
def test_randomized_solvers_deterministic(make):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((5, 4, 6))
    init = random_cores(x.shape, 2, rng)
    opts = SolveOptions(max_iters=3, seed=11, tol=0.0)

    def run():
        if make == "ksrft":
            return tr_ksrft_als(x, 2, init, 30, opts)
        return tr_als_sampled(x, 2, init, make, 30, opts)

    a, b = run(), run()
    assert a[1] == b[1]
    assert all(np.array_equal(p, q) for p, q in zip(a[0], b[0]))


def test_ksrft_all_unit_dims():
    x = np.full((1, 1, 1), 3.0)
    init = TRCores([np.full((1, 1, 1), v) for v in (1.0, 2.0, 0.5)])
    cores, err = tr_ksrft_als(x, 1, init, 5, SolveOptions(max_iters=2))
    assert all(np.isrealobj(c) for c in cores)
    assert err[-1] <= 1e-14


def test_sampled_rejects_ksrft_kind():
    x = np.ones((2, 2, 2))
    with pytest.raises(DomainError):
        tr_als_sampled(x, 1, random_cores(x.shape, 1, np.random.default_rng(0)), SketchKind.KSRFT, 4)


def test_sampled_chain_matches_ssit():
    rng = np.random.default_rng(3)
    cores = random_cores((3, 4, 5), (2, 3, 2), rng)
    table = sample_indices([3, 4, 5], 7, rng)
    sampled = [sample_core(c, table.idxs[:, k]) for k, c in enumerate(cores)]
    g_ref, _ = ssit(cores, np.zeros((3, 4, 5)), 3, table)
    np.testing.assert_array_equal(sampled_chain(sampled, 3), g_ref)


class TestSuggestedSize:
    def test_monotone_in_eps(self):
        for kind in ("uniform", "leverage"):
            a = suggested_sketch_size(kind, (2, 2, 2), 1, 0.1, 0.1)
            b = suggested_sketch_size(kind, (2, 2, 2), 1, 0.05, 0.1)
            assert b > a > 0

    def test_ksrft_needs_dims(self):
        with pytest.raises(DomainError):
            suggested_sketch_size("ksrft", (2, 2, 2), 1, 0.1, 0.1)
        assert suggested_sketch_size("ksrft", (2, 2, 2), 1, 0.1, 0.1, dims=(5, 5, 5)) > 0

    def test_bad_eps(self):
        with pytest.raises(DomainError):
            suggested_sketch_size("uniform", (2, 2), 1, 1.5, 0.1)


def test_exhaustive_table_enumerates_once():
    t = exhaustive_table((2, 3))
    rows = {tuple(r) for r in t.idxs}
    assert rows == set(itertools.product(range(2), range(3))) and t.m == 6
    np.testing.assert_array_equal(t.idxs[1], [1, 0])  # first mode fastest


def test_mode2_column_order_for_sampled_rows():
    # a sampled subchain slice sits in the same column order as core_matrix
    cores = random_cores((2, 3), (2, 3), np.random.default_rng(0))
    table = SampleIndexTable(np.array([[0, 2]]))
    g_s, _ = ssit(cores, np.zeros((2, 3)), 1, table)
    np.testing.assert_array_equal(mode2_matrix(g_s)[0], mode2_matrix(cores[1][:, 2:3, :])[0])
