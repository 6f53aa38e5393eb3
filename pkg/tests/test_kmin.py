"""Tests for the minimum discrimination power solvers."""

import math

import pytest

from popdyn.core import ConfigError
from popdyn.kmin import (
    KminQuery,
    critical_condition_with_rep,
    gap_function_F,
    kdist_condition,
    kmin_exact_enumeration,
    kmin_with_naive,
    kmin_with_rep,
    kmin_with_rep_limit,
    kmin_without_rep_approx,
    zeta_normalizer,
)
from popdyn.winprob import rank_power_normalizer


def margin_by_direct_summation(n, alpha, p_k):
    """Oracle for the distributional test: sum the fixed-K brackets."""
    g = rank_power_normalizer(n, alpha)
    total = 0.0
    for k, p in p_k.items():
        lhs = 2 * (1 - 2**-alpha / g) ** k
        rhs = 1 + (1 - 1 / g - 2**-alpha / g) ** k
        total += p * (lhs - rhs)
    return total


class TestCriticalCondition:
    @pytest.mark.parametrize("n", [2, 10, 100, 10_000])
    def test_alpha_zero_k2_always_destabilizes(self, n):
        assert critical_condition_with_rep(n, 0.0, 2)
        assert not critical_condition_with_rep(n, 0.0, 1)

    def test_n10_alpha1_boundary(self):
        assert not critical_condition_with_rep(10, 1.0, 3)
        assert critical_condition_with_rep(10, 1.0, 4)

    @pytest.mark.parametrize("alpha", [0.25, 1.0, 3.0])
    def test_k1_never_destabilizes(self, alpha):
        for n in (2, 5, 40):
            assert not critical_condition_with_rep(n, alpha, 1)


class TestKminWithRep:
    @pytest.mark.parametrize("n", [2, 10, 1000])
    def test_alpha_zero_always_two(self, n):
        assert kmin_with_rep(KminQuery(n, 0.0)) == 2

    def test_n10_values(self):
        assert kmin_with_rep(KminQuery(10, 0.5)) == 3
        assert kmin_with_rep(KminQuery(10, 1.0)) == 4
        assert kmin_with_rep(KminQuery(10, 2.0)) == 4

    def test_nondecreasing_in_n(self):
        values = [kmin_with_rep(KminQuery(n, 1.0)) for n in (5, 10, 20, 50, 100)]
        assert values == sorted(values)

    def test_mild_bias_diverges_with_n(self):
        assert kmin_with_rep(KminQuery(10_000, 0.5)) > kmin_with_rep(
            KminQuery(100, 0.5)
        )

    def test_strong_bias_stabilizes_with_n(self):
        assert kmin_with_rep(KminQuery(1000, 2.0)) == kmin_with_rep(
            KminQuery(10_000, 2.0)
        )

    def test_kmin_grows_with_large_alpha(self):
        assert kmin_with_rep(KminQuery(10, 20.0)) >= kmin_with_rep(KminQuery(10, 5.0))

    def test_rejects_naive_or_distributional_queries(self):
        with pytest.raises(ConfigError):
            kmin_with_rep(KminQuery(10, 1.0, naive_fraction=0.1))
        with pytest.raises(ConfigError):
            kmin_with_rep(KminQuery(10, 1.0, k_distribution={2: 1.0}))


class TestKminWithoutRepApprox:
    def test_n50_alpha1(self):
        assert kmin_without_rep_approx(KminQuery(50, 1.0, "without-repetition")) == 4

    def test_strong_bias_returns_to_two(self):
        assert kmin_without_rep_approx(KminQuery(100, 10.0, "without-repetition")) == 2

    def test_small_catalogs_need_few_inspections(self):
        for n in range(2, 20):
            assert (
                kmin_without_rep_approx(KminQuery(n, 1.0, "without-repetition")) <= 4
            )

    @pytest.mark.parametrize("alpha", [0.25, 0.5, 1.0, 1.5, 2.0])
    def test_at_most_with_rep_value(self, alpha):
        for n in (5, 10, 20, 50):
            without = kmin_without_rep_approx(
                KminQuery(n, alpha, "without-repetition")
            )
            assert without <= kmin_with_rep(KminQuery(n, alpha))


class TestKminExactEnumeration:
    @pytest.mark.parametrize("alpha", [0.0, 0.5, 1.0, 2.0])
    @pytest.mark.parametrize("n", [4, 6, 8, 10])
    def test_with_rep_matches_closed_form(self, alpha, n):
        q = KminQuery(n, alpha)
        closed = kmin_with_rep(q)
        if closed <= n:
            assert kmin_exact_enumeration(q) == closed

    def test_full_enumeration_agrees_with_critical_shortcut(self):
        for alpha in (0.0, 1.0):
            for n in (4, 5):
                q = KminQuery(n, alpha)
                assert kmin_exact_enumeration(q, method="full") == (
                    kmin_exact_enumeration(q, method="critical")
                )

    def test_without_rep_n10_alpha1(self):
        q = KminQuery(10, 1.0, "without-repetition")
        assert kmin_exact_enumeration(q) == 3

    def test_cap_errors(self):
        with pytest.raises(ConfigError, match="cap"):
            kmin_exact_enumeration(KminQuery(40, 1.0))


class TestKminWithNaive:
    def test_zero_fraction_reduces(self):
        assert kmin_with_naive(KminQuery(10, 1.0)) == kmin_with_rep(KminQuery(10, 1.0))

    def test_half_or_more_has_no_answer(self):
        assert kmin_with_naive(KminQuery(10, 1.0, naive_fraction=0.5)) is None
        assert kmin_with_naive(KminQuery(10, 1.0, naive_fraction=0.8)) is None

    def test_nondecreasing_in_naive_fraction(self):
        values = [
            kmin_with_naive(KminQuery(10, 1.0, naive_fraction=f))
            for f in (0.0, 0.1, 0.2, 0.3, 0.4)
        ]
        assert all(v is not None for v in values)
        assert values == sorted(values)


class TestKdistCondition:
    def test_degenerate_matches_fixed_k(self):
        n, alpha = 10, 1.0
        kmin = kmin_with_rep(KminQuery(n, alpha))
        assert kdist_condition(n, alpha, {kmin: 1.0})
        assert not kdist_condition(n, alpha, {kmin - 1: 1.0})

    def test_uniform_distribution_sign_matches_oracle(self):
        n, alpha = 10, 1.0
        p_k = {k: 0.1 for k in range(1, 11)}
        assert kdist_condition(n, alpha, p_k) == (
            margin_by_direct_summation(n, alpha, p_k) < 0
        )

    def test_all_mass_on_one_never_destabilizes(self):
        for alpha in (0.25, 1.0, 4.0):
            assert not kdist_condition(10, alpha, {1: 1.0})

    def test_rejects_unnormalized(self):
        with pytest.raises(ConfigError):
            kdist_condition(10, 1.0, {2: 0.5, 3: 0.4})


class TestGapFunction:
    def test_single_draw_always_positive(self):
        n, alpha = 10, 1.0
        for delta in range(1, n):
            for v in range(delta + 1, n + 1):
                assert gap_function_F(delta, v, 1, n, alpha) > 0

    def test_sign_change_matches_critical_condition(self):
        n, alpha = 10, 1.0
        kmin = kmin_with_rep(KminQuery(n, alpha))
        assert gap_function_F(1, 2, kmin - 1, n, alpha) > 0
        assert gap_function_F(1, 2, kmin, n, alpha) < 0

    def test_argmax_at_minimal_displacement(self):
        n, alpha, k = 10, 1.0, 2
        best = None
        for delta in range(1, n):
            for v in range(delta + 1, n + 1):
                val = gap_function_F(delta, v, k, n, alpha)
                if val > 0 and (best is None or val > best[0]):
                    best = (val, delta, v)
        assert best is not None
        assert (best[1], best[2]) == (1, 2)

    def test_domain_errors(self):
        with pytest.raises(ConfigError):
            gap_function_F(0, 2, 2, 10, 1.0)
        with pytest.raises(ConfigError):
            gap_function_F(3, 3, 2, 10, 1.0)


class TestLimits:
    def test_zeta_normalizer_known_value(self):
        assert zeta_normalizer(2.0) == pytest.approx(math.pi**2 / 6, abs=1e-12)
        assert zeta_normalizer(4.0) == pytest.approx(math.pi**4 / 90, abs=1e-12)

    def test_limit_matches_large_n(self):
        for alpha in (1.5, 2.0, 3.0):
            assert kmin_with_rep_limit(alpha) == kmin_with_rep(
                KminQuery(100_000, alpha)
            )

    def test_zeta_rejects_divergent(self):
        with pytest.raises(ConfigError):
            zeta_normalizer(1.0)
