import numpy as np
import pytest

from scratchnet.errors import ShapeError
from scratchnet.tensor import (SeededRng, add_broadcast, derive_seed,
                               elementwise, im2col_pool, matmul, reshape,
                               scatter_accumulate, transpose)

MASK64 = (1 << 64) - 1


def splitmix64_reference(seed, n):
    """Scalar reference for the documented generator."""
    out = []
    state = seed & MASK64
    for _ in range(n):
        state = (state + 0x9E3779B97F4A7C15) & MASK64
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        out.append(z ^ (z >> 31))
    return out


def naive_matmul(a, b):
    m, k = a.shape
    k2, n = b.shape
    out = np.zeros((m, n), dtype=np.float64)
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for t in range(k):
                acc += float(a[i, t]) * float(b[t, j])
            out[i, j] = acc
    return out


class TestMatmul:
    def test_identity(self):
        assert np.array_equal(matmul(np.eye(2), np.array([[3.0], [4.0]])),
                              np.array([[3.0], [4.0]]))

    def test_direct_arithmetic(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        b = np.array([[1.0], [1.0]])
        assert np.array_equal(matmul(a, b), np.array([[3.0], [7.0]]))

    def test_against_triple_loop_oracle(self):
        rng = SeededRng(11)
        a = rng.normal((5, 7))
        b = rng.normal((7, 3))
        assert np.allclose(matmul(a, b), naive_matmul(a, b), rtol=1e-12, atol=1e-12)

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
            matmul(np.zeros((2, 3)), np.zeros((2, 2)))

    def test_associativity_within_tolerance(self):
        rng = SeededRng(3)
        for _ in range(10):
            a, b, c = (rng.normal((4, 4)) for _ in range(3))
            left = matmul(matmul(a, b), c)
            right = matmul(a, matmul(b, c))
            assert np.abs(left - right).max() < 1e-6


class TestIm2colPool:
    def test_single_window_covers_all(self):
        x = np.arange(4, dtype=np.float32).reshape(2, 2, 1, 1)
        cols, idx = im2col_pool(x, (2, 2), (2, 2))
        assert cols.shape == (4, 1)
        assert np.array_equal(cols[:, 0], [0, 1, 2, 3])
        assert np.array_equal(idx[:, 0], [0, 1, 2, 3])

    def test_matches_exhaustive_enumeration(self):
        x = np.arange(9, dtype=np.float64).reshape(3, 3, 1, 1)
        cols, idx = im2col_pool(x, (2, 2), (1, 1))
        assert cols.shape == (4, 4)
        # windows in (row, col) output order, elements window row-major
        expect = []
        for i in range(2):
            for j in range(2):
                expect.append([x[i + a, j + b, 0, 0]
                               for a in range(2) for b in range(2)])
        assert np.array_equal(cols, np.array(expect).T)
        assert np.array_equal(idx, (np.array(expect).T).astype(np.int64))

    def test_padding_cells_are_sentinels(self):
        x = np.ones((2, 2, 1, 1), dtype=np.float32)
        cols, idx = im2col_pool(x, (2, 2), (2, 2), pad=(2, 0, 2, 0), pad_value=-1.5)
        # first window sits fully in padding
        assert np.all(idx[:, 0] == -1)
        assert np.all(cols[:, 0] == -1.5)

    def test_window_larger_than_padded_input(self):
        x = np.ones((2, 2, 1, 1), dtype=np.float32)
        with pytest.raises(ShapeError):
            im2col_pool(x, (4, 4), (1, 1))

    def test_channel_batch_flat_indices_round_trip(self):
        rng = SeededRng(9)
        x = rng.normal((4, 5, 3, 2), dtype=np.float32)
        cols, idx = im2col_pool(x, (2, 3), (2, 1), pad=(1, 0, 0, 1))
        real = idx != -1
        assert np.array_equal(cols[real], x.reshape(-1)[idx[real]])


class TestScatterAccumulate:
    def test_duplicate_accumulation(self):
        out = scatter_accumulate((2,), np.array([0, 0]), np.array([1.0, 2.0]))
        assert np.array_equal(out, [3.0, 0.0])

    def test_distinct_is_plain_scatter(self):
        out = scatter_accumulate((4,), np.array([2, 0, 3]), np.array([5.0, 1.0, 7.0]))
        assert np.array_equal(out, [1.0, 0.0, 5.0, 7.0])

    def test_sentinels_dropped(self):
        out = scatter_accumulate((3,), np.array([-1, 1, -1]), np.array([9.0, 2.0, 9.0]))
        assert np.array_equal(out, [0.0, 2.0, 0.0])

    def test_matches_loop_oracle(self):
        rng = SeededRng(21)
        idx = rng.integers(50, 12)
        vals = rng.normal((50,))
        expect = np.zeros(12)
        for i, v in zip(idx, vals):
            expect[int(i)] += v
        out = scatter_accumulate((12,), idx, vals)
        assert np.allclose(out, expect, rtol=0, atol=1e-12)

    def test_out_of_range_raises(self):
        with pytest.raises(IndexError, match="7"):
            scatter_accumulate((4,), np.array([0, 7]), np.array([1.0, 1.0]))


class TestElementwiseAndBroadcast:
    def test_scalar_map(self):
        out = elementwise(lambda v: 2 * v, np.array([1.0, 2.0]))
        assert np.array_equal(out, [2.0, 4.0])

    def test_bias_broadcast(self):
        out = add_broadcast(np.zeros((2, 2)), np.array([1.0]))
        assert np.array_equal(out, np.ones((2, 2)))

    def test_column_bias(self):
        x = np.zeros((3, 2))
        out = add_broadcast(x, np.array([[1.0], [2.0], [3.0]]))
        assert np.array_equal(out[:, 0], [1.0, 2.0, 3.0])
        assert np.array_equal(out[:, 1], [1.0, 2.0, 3.0])

    def test_non_broadcastable(self):
        with pytest.raises(ShapeError):
            add_broadcast(np.zeros((2, 3)), np.zeros((2, 2)))

    def test_transpose_involution(self):
        rng = SeededRng(2)
        x = rng.normal((3, 4, 2))
        assert np.array_equal(transpose(transpose(x, (2, 0, 1)), (1, 2, 0)), x)

    def test_reshape_round_trip_bitwise(self):
        rng = SeededRng(6)
        x = rng.normal((3, 5, 2), dtype=np.float32)
        again = reshape(reshape(x, (30,)), (3, 5, 2))
        assert again.tobytes() == x.tobytes()

    def test_reshape_element_count_guard(self):
        with pytest.raises(ShapeError):
            reshape(np.zeros((2, 3)), (7,))


class TestCoverageProperty:
    def test_im2col_scatter_counts_window_coverage(self):
        # ones through gather+scatter give each cell its window-coverage count
        rng = SeededRng(4)
        for _ in range(5):
            h = int(rng.integers(1, 5)[0]) + 3
            w = int(rng.integers(1, 5)[0]) + 3
            x = np.ones((h, w, 1, 1), dtype=np.float64)
            cols, idx = im2col_pool(x, (2, 2), (1, 1))
            got = scatter_accumulate(x.shape, idx, np.ones_like(cols))
            expect = np.zeros((h, w))
            for i in range(h - 1):
                for j in range(w - 1):
                    expect[i:i + 2, j:j + 2] += 1
            assert np.array_equal(got[:, :, 0, 0], expect)


class TestSeededRng:
    def test_matches_scalar_reference(self):
        got = [int(v) for v in SeededRng(42).raw(8)]
        assert got == splitmix64_reference(42, 8)

    def test_identical_seeds_identical_sequences(self):
        a, b = SeededRng(123), SeededRng(123)
        assert np.array_equal(a.normal((10,)), b.normal((10,)))
        assert np.array_equal(a.permutation(20), b.permutation(20))

    def test_draw_splitting_matches_single_draw(self):
        a, b = SeededRng(7), SeededRng(7)
        joined = np.concatenate([a.raw(3), a.raw(4)])
        assert np.array_equal(joined, b.raw(7))

    def test_state_round_trip(self):
        rng = SeededRng(5)
        rng.raw(13)
        saved = rng.get_state()
        first = rng.raw(4)
        rng.set_state(saved)
        assert np.array_equal(rng.raw(4), first)

    def test_uniform_range_and_integers_bound(self):
        rng = SeededRng(8)
        u = rng.uniform((1000,))
        assert u.min() >= 0.0 and u.max() < 1.0
        ints = rng.integers(1000, 7)
        assert ints.min() >= 0 and ints.max() <= 6

    def test_permutation_is_a_permutation(self):
        perm = SeededRng(10).permutation(100)
        assert np.array_equal(np.sort(perm), np.arange(100))

    def test_derive_seed_distinct_streams(self):
        seeds = {derive_seed(1, k) for k in range(32)}
        assert len(seeds) == 32
