import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from btdmp.dtw import WarpPath, dtw_distance, dtw_exact, fastdtw, fastdtw_distance
from oracles import all_paths, enumerate_dtw, euclid

seqs = st.integers(1, 3).flatmap(
    lambda d: st.tuples(
        arrays(np.float64, st.tuples(st.integers(1, 9), st.just(d)), elements=st.floats(-5, 5)),
        arrays(np.float64, st.tuples(st.integers(1, 9), st.just(d)), elements=st.floats(-5, 5)),
    )
)


class TestExact:
    def test_identical(self):
        a = np.random.default_rng(1).normal(size=(7, 2))
        d, path = dtw_exact(a, a)
        assert d == 0.0
        assert path.pairs == tuple((i, i) for i in range(7))

    def test_single_pair(self):
        d, path = dtw_exact([0.0], [3.0])
        assert d == 3.0 and path.pairs == ((0, 0),)

    def test_small_enumeration(self):
        a, b = np.array([0.0, 1.0, 2.0]), np.array([0.0, 2.0])
        costs = [sum(abs(a[i] - b[j]) for i, j in p) for p in all_paths(3, 2)]
        assert dtw_exact(a, b)[0] == pytest.approx(min(costs), abs=0)
        assert min(costs) == 1.0

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            dtw_exact(np.zeros((3, 2)), np.zeros((3, 3)))

    def test_empty(self):
        with pytest.raises(ValueError):
            dtw_exact(np.zeros((0, 1)), np.zeros((2, 1)))

    @settings(max_examples=100, deadline=None)
    @given(seqs)
    def test_matches_enumeration_and_path_cost(self, pair):
        a, b = pair
        d, path = dtw_exact(a, b)
        assert d == enumerate_dtw(a, b)
        assert path.is_valid(len(a), len(b))
        acc = 0.0
        for i, j in path:
            acc = euclid(a[i], b[j]) + acc
        assert acc == pytest.approx(d, rel=1e-12, abs=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(seqs)
    def test_symmetric(self, pair):
        a, b = pair
        assert dtw_distance(a, b) == pytest.approx(dtw_distance(b, a), rel=1e-12, abs=1e-12)


class TestWarpPath:
    def test_validity_rules(self):
        assert WarpPath(((0, 0), (1, 1), (1, 2))).is_valid(2, 3)
        assert not WarpPath(((0, 0), (2, 1))).is_valid(3, 2)  # jump
        assert not WarpPath(((0, 0), (1, 1))).is_valid(3, 2)  # wrong end
        assert not WarpPath(((0, 0), (1, 0), (0, 1), (1, 1))).is_valid(2, 2)  # not monotone


class TestFast:
    def test_full_radius_equals_exact(self):
        rng = np.random.default_rng(5)
        a, b = rng.normal(size=(40, 2)), rng.normal(size=(33, 2))
        assert fastdtw(a, b, radius=40)[0] == dtw_exact(a, b)[0]

    def test_identical(self):
        a = np.random.default_rng(2).normal(size=(300, 3))
        assert fastdtw_distance(a, a) == 0.0

    def test_sine_within_five_percent(self):
        t = np.linspace(0, 4 * np.pi, 500)
        a, b = np.sin(t), np.sin(t + 0.5)
        exact = dtw_exact(a, b)[0]
        approx, path = fastdtw(a, b, radius=1)
        assert path.is_valid(500, 500)
        assert approx <= exact * 1.05

    def test_negative_radius(self):
        with pytest.raises(ValueError):
            fastdtw([0.0, 1.0], [0.0], radius=-1)

    @settings(max_examples=40, deadline=None)
    @given(seqs, st.integers(0, 3))
    def test_never_below_exact_and_valid(self, pair, radius):
        a, b = pair
        d, path = fastdtw(a, b, radius)
        assert path.is_valid(len(a), len(b))
        assert d >= dtw_exact(a, b)[0] - 1e-9
