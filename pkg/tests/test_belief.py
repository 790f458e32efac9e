import math

import mpmath
import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as npst

from beliefshift.belief import (
    BeliefState,
    SurpriseScore,
    distribution_from_nll,
    distribution_from_yes_probs,
    jsd,
    kl_divergence,
    surprise,
)
from beliefshift.errors import InvalidInputError, InvalidParameterError, ShapeError


def mp_softmax_of_nll(nlls, tau):
    """Arbitrary-precision reference softmax, no max-shift needed."""
    with mpmath.workdps(60):
        w = [mpmath.exp(-mpmath.mpf(x) / tau) for x in nlls]
        z = sum(w)
        return [float(x / z) for x in w]


def mp_jsd(p, q):
    with mpmath.workdps(50):
        p = [mpmath.mpf(x) for x in p]
        q = [mpmath.mpf(x) for x in q]
        m = [(a + b) / 2 for a, b in zip(p, q)]

        def kl2(a, b):
            return sum(x * mpmath.log(x / y, 2) for x, y in zip(a, b) if x > 0)

        return float(kl2(p, m) / 2 + kl2(q, m) / 2)


nll_vectors = npst.arrays(
    np.float64,
    st.integers(2, 12),
    elements=st.floats(0, 50, allow_nan=False, allow_infinity=False),
)


@st.composite
def dist_pairs(draw):
    n = draw(st.integers(2, 10))
    elems = st.floats(1e-6, 1.0)
    p = np.array(draw(st.lists(elems, min_size=n, max_size=n)))
    q = np.array(draw(st.lists(elems, min_size=n, max_size=n)))
    return p / p.sum(), q / q.sum()


class TestDistributionFromNll:
    def test_hand_value(self):
        out = distribution_from_nll([math.log(2), math.log(4), math.log(4)], 1.0)
        np.testing.assert_allclose(out, [0.5, 0.25, 0.25], atol=1e-12)

    @pytest.mark.parametrize("c", [0.0, 3.3, 400.0])
    def test_constant_nlls_are_uniform(self, c):
        np.testing.assert_allclose(distribution_from_nll([c, c, c]), [1 / 3] * 3, atol=1e-15)

    def test_sharp_temperature_matches_high_precision(self):
        out = distribution_from_nll([0.0, 10.0], 0.1)
        ref = mp_softmax_of_nll([0.0, 10.0], mpmath.mpf("0.1"))
        assert out[0] == pytest.approx(1.0, abs=1e-15)
        assert out[1] == pytest.approx(ref[1], rel=1e-9)
        assert out[1] == pytest.approx(3.72e-44, rel=1e-2)

    def test_large_spread_does_not_overflow(self):
        out = distribution_from_nll([0.0, 5000.0, 10000.0], 1.0)
        assert np.all(np.isfinite(out)) and out[0] == 1.0

    @pytest.mark.parametrize("bad", [[1.0, np.nan], [np.inf, 1.0]])
    def test_non_finite_rejected(self, bad):
        with pytest.raises(InvalidInputError):
            distribution_from_nll(bad)

    @pytest.mark.parametrize("tau", [0.0, -1.0])
    def test_bad_temperature(self, tau):
        with pytest.raises(InvalidParameterError):
            distribution_from_nll([1.0, 2.0], tau)

    def test_needs_two_hypotheses(self):
        with pytest.raises(InvalidInputError):
            distribution_from_nll([1.0])

    @given(nll_vectors, st.floats(0.05, 20))
    def test_matches_mpmath_and_sums_to_one(self, nlls, tau):
        out = distribution_from_nll(nlls, tau)
        assert abs(out.sum() - 1) <= 1e-9
        np.testing.assert_allclose(out, mp_softmax_of_nll(nlls, tau), rtol=1e-9, atol=1e-300)

    @given(nll_vectors, st.floats(-100, 100), st.floats(0.05, 20))
    def test_shift_invariance(self, nlls, c, tau):
        np.testing.assert_allclose(
            distribution_from_nll(nlls, tau), distribution_from_nll(nlls + c, tau), atol=1e-9
        )

    @given(nll_vectors, st.floats(0.1, 5), st.floats(1.05, 3))
    def test_lower_temperature_favours_best_hypothesis(self, nlls, tau, factor):
        best = int(np.argmin(nlls))
        assume(np.sum(nlls == nlls[best]) == 1)
        assume(np.min(np.delete(nlls, best)) - nlls[best] > 1e-3)
        hot = distribution_from_nll(nlls, tau * factor)[best]
        cold = distribution_from_nll(nlls, tau)[best]
        assume(hot < 1.0)  # both saturated at 1.0 in float64
        assert cold > hot


class TestKl:
    def test_identical(self):
        assert kl_divergence([0.5, 0.5], [0.5, 0.5]) == 0.0

    def test_hand_value(self):
        expected = 0.5 * math.log(2) + 0.5 * math.log(2 / 3)
        assert kl_divergence([0.5, 0.5], [0.25, 0.75]) == pytest.approx(expected, abs=1e-15)
        assert expected == pytest.approx(0.14384, abs=1e-5)

    def test_single_term(self):
        assert kl_divergence([1.0, 0.0], [0.5, 0.5]) == pytest.approx(math.log(2))

    def test_zero_prior_is_floored(self):
        assert math.isfinite(kl_divergence([0.5, 0.5], [1.0, 0.0]))

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            kl_divergence([0.5, 0.5], [1 / 3] * 3)

    @given(dist_pairs())
    def test_nonnegative_and_pinsker(self, pq):
        p, q = pq
        value = kl_divergence(p, q)
        tv = 0.5 * np.abs(p - q).sum()
        assert value >= 0
        assert value >= 2 * tv**2 - 1e-12

    @given(dist_pairs())
    def test_zero_on_self(self, pq):
        p, _ = pq
        assert kl_divergence(p, p.copy()) <= 1e-9


class TestJsd:
    def test_identical(self):
        assert jsd([0.3, 0.7], [0.3, 0.7]) == 0.0

    def test_disjoint_is_one(self):
        assert jsd([1.0, 0.0], [0.0, 1.0]) == pytest.approx(1.0, abs=1e-15)

    def test_matches_direct_formula(self):
        assert jsd([0.5, 0.5], [0.25, 0.75]) == pytest.approx(mp_jsd([0.5, 0.5], [0.25, 0.75]), abs=1e-14)

    @given(dist_pairs())
    def test_symmetric_bounded_and_matches_oracle(self, pq):
        p, q = pq
        a, b = jsd(p, q), jsd(q, p)
        assert 0 <= a <= 1
        assert a == pytest.approx(b, abs=1e-12)
        assert a == pytest.approx(mp_jsd(p, q), abs=1e-12)


class TestSurprise:
    @given(nll_vectors, st.floats(0.05, 10), st.sampled_from(["kl", "jsd"]))
    def test_no_update_no_surprise(self, nlls, tau, mode):
        assert surprise(nlls, nlls, tau, mode).value == 0.0

    def test_composes_softmax_and_kl(self):
        prior, post = [math.log(2), math.log(2)], [0.0001, 9.21]
        expected = kl_divergence(distribution_from_nll(post), distribution_from_nll(prior))
        got = surprise(prior, post, 1.0, "kl")
        assert got.value == pytest.approx(expected, abs=1e-15)
        assert got.mode == "kl"
        assert got.value > 0.6

    @settings(max_examples=200)
    @given(nll_vectors, st.data())
    def test_jsd_mode_in_unit_interval(self, prior, data):
        post = data.draw(npst.arrays(np.float64, prior.shape, elements=st.floats(0, 50)))
        assert 0 <= surprise(prior, post, 1.0, "jsd").value <= 1

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            surprise([1.0, 2.0], [1.0, 2.0, 3.0])

    def test_score_validation(self):
        with pytest.raises(InvalidInputError):
            SurpriseScore(1.5, "jsd")
        with pytest.raises(InvalidInputError):
            SurpriseScore(-0.1, "kl")


def test_yes_probs_normalize():
    np.testing.assert_allclose(distribution_from_yes_probs([0.95, 0.05]), [0.95, 0.05])
    np.testing.assert_allclose(distribution_from_yes_probs([0.0, 0.0, 0.0]), [1 / 3] * 3)
    with pytest.raises(InvalidInputError):
        distribution_from_yes_probs([1.2, 0.1])


def test_belief_state_roundtrip_and_validation():
    b = BeliefState(["a", "b"], [0.5, 0.5], [0.9, 0.1], 2.0)
    assert BeliefState.from_dict(b.to_dict()).to_dict() == b.to_dict()
    with pytest.raises(ShapeError):
        BeliefState(["a", "b", "c"], [0.5, 0.5], [0.9, 0.1], 2.0)
    with pytest.raises(InvalidInputError):
        BeliefState(["a", "b"], [0.5, 0.6], [0.9, 0.1], 2.0)
