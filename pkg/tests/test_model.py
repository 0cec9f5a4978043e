import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rbmcf.errors import CapacityError, ShapeError
from rbmcf.model import (
    Gradients,
    HiddenState,
    RbmParams,
    VisibleState,
    energy,
    exact_nll,
    hidden_conditional,
    log_f_exact,
    log_f_factorized,
    log_f_gradient_exact,
    visible_conditional,
)

from conftest import random_params, random_visible

LN2 = math.log(2.0)


def hidden(values, binary=True):
    return HiddenState(np.asarray(values, dtype=float), binary=binary)


def finite_difference_gradient(v, p, step=1e-6):
    """Central differences of log_f_exact over every parameter entry."""
    out = []
    for name in ("W", "b", "c"):
        arr = getattr(p, name)
        grad = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            hi, lo = p.copy(), p.copy()
            getattr(hi, name)[idx] += step
            getattr(lo, name)[idx] -= step
            grad[idx] = (log_f_exact(v, hi) - log_f_exact(v, lo)) / (2 * step)
        out.append(grad)
    return Gradients(*out)


def assert_gradients_close(g, fd):
    for a, b in ((g.dW, fd.dW), (g.db, fd.db), (g.dc, fd.dc)):
        small = np.abs(b) < 1e-3
        assert np.all(np.abs(a - b)[small] <= 1e-8)
        rel = np.abs(a - b)[~small] / np.abs(b)[~small]
        assert np.all(rel <= 1e-5)


class TestParams:
    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            RbmParams(np.zeros((2, 3, 4)), np.zeros((2, 5)), np.zeros(3))
        with pytest.raises(ShapeError):
            RbmParams(np.zeros((2, 3, 4)), np.zeros((2, 4)), np.zeros(2))

    def test_dimensions(self):
        p = RbmParams.zeros(4, 3, 5)
        assert (p.m, p.F, p.K) == (4, 3, 5)

    def test_visible_state_one_hot(self):
        v = VisibleState.from_dict({3: 2, 1: 5})
        assert v.items.tolist() == [1, 3]
        oh = v.one_hot(5, 5)
        assert oh.sum(axis=1).tolist() == [0, 1, 0, 1, 0]

    def test_visible_state_rejects_duplicates(self):
        with pytest.raises(ShapeError):
            VisibleState([2, 2], [1, 1])

    def test_binary_hidden_state_checked(self):
        with pytest.raises(ShapeError):
            HiddenState(np.array([0.5]), binary=True)


class TestEnergy:
    def test_zero_params(self):
        p = RbmParams.zeros(3, 2, 4)
        assert energy(VisibleState.from_dict({0: 1, 2: 4}), hidden([1, 0]), p) == 0.0

    def test_single_unit(self):
        p = RbmParams(np.full((1, 1, 1), 2.0), np.full((1, 1), 3.0), np.full(1, 5.0))
        assert energy(VisibleState.from_dict({0: 1}), hidden([1]), p) == -10.0

    def test_unmasked_item_excluded(self):
        W = np.zeros((2, 1, 2))
        b = np.zeros((2, 2))
        W[0, 0, 1] = 1.0
        b[0, 1] = 1.0
        W[1] = 7.0
        b[1] = 7.0
        p = RbmParams(W, b, np.ones(1))
        assert energy(VisibleState.from_dict({0: 2}), hidden([1]), p) == -3.0

    def test_empty_mask_zero_hidden(self):
        p = random_params(0, 3, 4, 3)
        assert energy(VisibleState.empty(), hidden(np.zeros(4)), p) == 0.0

    def test_dimension_mismatch(self):
        p = RbmParams.zeros(2, 3, 2)
        with pytest.raises(ShapeError):
            energy(VisibleState.from_dict({5: 1}), hidden([0, 0, 0]), p)
        with pytest.raises(ShapeError):
            energy(VisibleState.from_dict({0: 1}), hidden([0, 0]), p)


class TestVisibleConditional:
    def test_uniform(self):
        p = RbmParams.zeros(1, 3, 5)
        np.testing.assert_allclose(visible_conditional(hidden([0, 1, 1]), p, 0), [0.2] * 5, atol=1e-15)

    def test_bias_log2(self):
        p = RbmParams(np.zeros((1, 2, 2)), np.array([[LN2, 0.0]]), np.zeros(2))
        np.testing.assert_allclose(visible_conditional(hidden([0, 0]), p, 0), [2 / 3, 1 / 3], atol=1e-15)

    def test_shift_invariance(self):
        p = RbmParams(np.ones((1, 1, 3)), np.zeros((1, 3)), np.zeros(1))
        np.testing.assert_allclose(visible_conditional(hidden([1]), p, 0), [1 / 3] * 3, atol=1e-15)

    def test_accepts_probabilities(self):
        p = random_params(1, 2, 3, 4)
        out = visible_conditional(hidden([0.2, 0.7, 0.1], binary=False), p, 1)
        assert abs(out.sum() - 1) < 1e-12

    def test_index_error(self):
        with pytest.raises(IndexError):
            visible_conditional(hidden([0]), RbmParams.zeros(2, 1, 2), 2)


class TestHiddenConditional:
    def test_zero_params(self):
        out = hidden_conditional(VisibleState.from_dict({0: 1}), RbmParams.zeros(2, 4, 3))
        np.testing.assert_array_equal(out, [0.5] * 4)

    def test_single_weight(self):
        W = np.zeros((1, 1, 3))
        W[0, 0, 1] = 0.5
        out = hidden_conditional(VisibleState.from_dict({0: 2}), RbmParams(W, np.zeros((1, 3)), np.zeros(1)))
        assert out[0] == pytest.approx(0.622459, abs=1e-6)
        assert out[0] == pytest.approx(1 / (1 + math.exp(-0.5)), abs=1e-15)

    def test_exact_cancellation(self):
        p = random_params(3, 3, 2, 3)
        v = VisibleState.from_dict({0: 1, 2: 3})
        drive = p.W[0, :, 0] + p.W[2, :, 2]
        p2 = RbmParams(p.W, p.b, -drive)
        np.testing.assert_allclose(hidden_conditional(v, p2), [0.5, 0.5], atol=1e-15)


class TestLogF:
    def test_zero_single_hidden(self):
        p = RbmParams.zeros(2, 1, 3)
        assert log_f_exact(VisibleState.from_dict({1: 2}), p) == pytest.approx(LN2, abs=1e-15)

    def test_zero_three_hidden(self):
        p = RbmParams.zeros(2, 3, 3)
        assert log_f_exact(VisibleState.from_dict({1: 2}), p) == pytest.approx(3 * LN2, abs=1e-14)

    def test_seeded_instance_frozen(self):
        # value from a pure-python sum of exp(-E) over all four hidden states
        p = random_params(7, 2, 2, 2)
        v = VisibleState.from_dict({0: 2, 1: 1})
        assert log_f_exact(v, p) == pytest.approx(0.696193239336716, abs=1e-12)
        assert log_f_factorized(v, p) == pytest.approx(0.696193239336716, abs=1e-12)

    def test_enumeration_matches_energy_loop(self):
        p = random_params(11, 3, 4, 3)
        v = VisibleState.from_dict({0: 3, 2: 1})
        terms = [-energy(v, hidden(h), p) for h in itertools.product((0, 1), repeat=4)]
        expected = math.log(sum(math.exp(t) for t in terms))
        assert log_f_exact(v, p) == pytest.approx(expected, abs=1e-12)

    def test_capacity_guard(self):
        p = RbmParams.zeros(1, 21, 2)
        with pytest.raises(CapacityError):
            log_f_exact(VisibleState.from_dict({0: 1}), p)
        with pytest.raises(CapacityError):
            log_f_gradient_exact(VisibleState.from_dict({0: 1}), p)

    def test_large_weights_do_not_overflow(self):
        p = random_params(2, 3, 4, 3, scale=400.0)
        v = VisibleState.from_dict({0: 1, 1: 2, 2: 3})
        assert math.isfinite(log_f_exact(v, p))
        assert log_f_exact(v, p) == pytest.approx(log_f_factorized(v, p), rel=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 10_000), m=st.integers(1, 4), F=st.integers(1, 12), K=st.integers(1, 5))
    def test_enumeration_equals_factorized(self, seed, m, F, K):
        p = random_params(seed, m, F, K)
        v = random_visible(seed + 1, m, K)
        assert abs(log_f_exact(v, p) - log_f_factorized(v, p)) <= 1e-10


class TestLogFGradient:
    def test_zero_params_hidden(self):
        g = log_f_gradient_exact(VisibleState.from_dict({0: 2}), RbmParams.zeros(2, 3, 2))
        np.testing.assert_array_equal(g.dc, [0.5] * 3)

    def test_visible_bias_one_hot(self):
        p = random_params(4, 3, 2, 4)
        v = VisibleState.from_dict({0: 4, 2: 1})
        g = log_f_gradient_exact(v, p)
        np.testing.assert_array_equal(g.db, v.one_hot(3, 4))
        assert not g.dW[1].any()

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_matches_finite_differences(self, seed):
        p = random_params(seed, 3, 3, 3)
        v = random_visible(seed + 100, 3, 3)
        assert_gradients_close(log_f_gradient_exact(v, p), finite_difference_gradient(v, p))


class TestExactNll:
    def test_uniform_single_item(self):
        data = [VisibleState.from_dict({0: 1}), VisibleState.from_dict({0: 2})]
        assert exact_nll(data, RbmParams.zeros(1, 3, 2)) == pytest.approx(LN2, abs=1e-14)

    def test_uniform_two_items(self):
        data = [VisibleState.from_dict({0: 1, 1: 2})]
        assert exact_nll(data, RbmParams.zeros(2, 2, 2)) == pytest.approx(2 * LN2, abs=1e-14)

    def test_seeded_instance_frozen(self):
        # brute-force Z over the K^m = 4 visible configurations, pure python
        p = random_params(7, 2, 2, 2)
        data = [VisibleState.from_dict(d) for d in ({0: 1, 1: 1}, {0: 2, 1: 1}, {0: 2, 1: 2}, {0: 2, 1: 1})]
        assert exact_nll(data, p) == pytest.approx(1.4632213247070955, abs=1e-12)

    def test_requires_full_mask(self):
        with pytest.raises(ShapeError):
            exact_nll([VisibleState.from_dict({0: 1})], RbmParams.zeros(2, 1, 2))

    def test_capacity_guard(self):
        with pytest.raises(CapacityError):
            exact_nll([VisibleState(np.arange(7), np.ones(7))], RbmParams.zeros(7, 1, 4))

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 10_000), delta=st.floats(-5, 5))
    def test_bias_shift_invariance(self, seed, delta):
        p = random_params(seed, 3, 2, 3)
        data = [random_visible(seed + n, 3, 3, full=True) for n in range(5)]
        b = p.b.copy()
        b[1] += delta
        shifted = RbmParams(p.W, b, p.c)
        assert abs(exact_nll(data, p) - exact_nll(data, shifted)) <= 1e-9


class TestNormalization:
    @settings(max_examples=100, deadline=None)
    @given(seed=st.integers(0, 100_000), F=st.integers(1, 8), K=st.integers(1, 6))
    def test_visible_conditional_is_distribution(self, seed, F, K):
        p = random_params(seed, 2, F, K, scale=3.0)
        h = np.random.default_rng(seed).random(F)
        out = visible_conditional(hidden(h, binary=False), p, 1)
        assert np.all(out >= 0)
        assert abs(out.sum() - 1) <= 1e-12

    @settings(max_examples=100, deadline=None)
    @given(seed=st.integers(0, 100_000), F=st.integers(1, 8))
    def test_hidden_conditional_open_interval(self, seed, F):
        p = random_params(seed, 3, F, 3, scale=3.0)
        out = hidden_conditional(random_visible(seed, 3, 3), p)
        assert np.all((out > 0) & (out < 1))
