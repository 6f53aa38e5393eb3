"""Minimum user discrimination power K_min.

K_min is the smallest inspection-set size K for which the natural
popularity ordering (popularity aligned with quality) is the only stable
ordering.  Its computation reduces to the stability of the critical
ordering, the natural one with the top two items swapped: the gap function
of that configuration is the last one to change sign as K grows.

With independent draws (with repetition) the test is a closed form in the
power-law normalizer G = sum(i ** -alpha).  Without repetition an accurate
approximation treats the top two items as drawn without repetition and
everything below as drawn with repetition.  Exact answers for small N come
from the equilibrium engines.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

from .core import (
    WITH_REPETITION,
    ConfigError,
    MarketConfig,
    Permutation,
    normalize_repetition_mode,
)
from .winprob import rank_power_normalizer

# Closed-form scans are bracketed geometrically; a K beyond this bound
# means the monotone sign change was missed, which indicates a bug.
SCAN_LIMIT = 10**7


@dataclass(frozen=True)
class KminQuery:
    """Parameters of one K_min question."""

    n_items: int
    alpha: float
    repetition_mode: str = WITH_REPETITION
    naive_fraction: float = 0.0
    k_distribution: Mapping[int, float] | None = None

    def __post_init__(self):
        object.__setattr__(self, "repetition_mode", normalize_repetition_mode(self.repetition_mode))
        if self.n_items < 1:
            raise ConfigError("n_items must be positive")
        if self.alpha < 0:
            raise ConfigError("alpha must be non-negative")
        if not 0.0 <= self.naive_fraction <= 1.0:
            raise ConfigError("naive_fraction must lie in [0, 1]")


def _xpow(base: float, k: int) -> float:
    """base ** k evaluated in log space; stable when base is near 0 or 1."""
    if base <= 0.0:
        return 0.0 if k > 0 else 1.0
    return math.exp(k * math.log(base))


def _critical_margin_with_rep(n: int, alpha: float, k: int, f_m: float = 0.0) -> float:
    """Left side minus right side of the instability test at the critical
    ordering: negative means the swapped top pair cannot persist.

    The margin is f_m + (1-f_m) * (2(1 - G^-1 2^-a)^K - 1 - (1 - G^-1 - G^-1 2^-a)^K).
    """
    g_inv = 1.0 / rank_power_normalizer(n, alpha)
    top = g_inv * 2.0**-alpha  # selection probability of the item at rank 2
    runner = g_inv  # selection probability of the item at rank 1
    bracket = 2.0 * _xpow(1.0 - top, k) - 1.0 - _xpow(1.0 - runner - top, k)
    return f_m + (1.0 - f_m) * bracket


def critical_condition_with_rep(n: int, alpha: float, k: int) -> bool:
    """True iff K destabilizes the critical ordering under independent
    draws: 2(1 - G^-1 2^-a)^K < 1 + (1 - G^-1 - G^-1 2^-a)^K (strictly;
    equality, reached only at alpha=0 with K=1, leaves the swap in place)."""
    if n < 2:
        return True
    if k < 1:
        raise ConfigError("K must be at least 1")
    return _critical_margin_with_rep(n, alpha, k) < 0.0


def _critical_margin_without_rep(n: int, alpha: float, k: int) -> float:
    """Margin of the no-repetition approximation: the top two items are
    drawn without repetition, everything below with repetition."""
    g_inv = 1.0 / rank_power_normalizer(n, alpha)
    p_top = g_inv * 2.0**-alpha
    p_runner = g_inv
    p_rest = 1.0 - p_top - p_runner  # mass below the top two
    lhs = 2.0 * _xpow(p_rest / (1.0 - p_runner), k - 1)
    rhs_num = 1.0 - _xpow(p_rest, k)
    rhs_den = 1.0 - _xpow(1.0 - p_runner, k)
    return lhs - rhs_num / rhs_den


def _scan_smallest_k(margin) -> int:
    """Smallest integer K >= 1 with margin(K) < 0, assuming one sign change."""
    k = 1
    while margin(k) >= 0.0:
        if k > SCAN_LIMIT:
            raise RuntimeError(
                "no destabilizing K found below the scan limit; "
                "the margin function should change sign exactly once"
            )
        k *= 2
    if k == 1:
        return 1
    lo, hi = k // 2, k  # margin(lo) >= 0 > margin(hi)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if margin(mid) < 0.0:
            hi = mid
        else:
            lo = mid
    return hi


def kmin_with_rep(q: KminQuery) -> int:
    """Smallest K for which only the natural ordering is stable, with
    independent draws.  Finite for every (N, alpha); may exceed N, since
    draws repeat."""
    if q.naive_fraction != 0.0:
        raise ConfigError("use kmin_with_naive for naive_fraction > 0")
    if q.k_distribution is not None:
        raise ConfigError("use kdist_condition for a distributional K")
    if q.n_items < 2:
        return 1
    return _scan_smallest_k(
        lambda k: _critical_margin_with_rep(q.n_items, q.alpha, k)
    )


def kmin_without_rep_approx(q: KminQuery) -> int:
    """Approximate K_min for distinct-item pre-selection.

    Accurate except near the jumps of the exact curve; tends to 2 as alpha
    grows (the top two items then always face each other directly)."""
    if q.naive_fraction != 0.0:
        raise ConfigError("the approximation covers naive_fraction = 0 only")
    if q.n_items < 2:
        return 1
    return _scan_smallest_k(
        lambda k: _critical_margin_without_rep(q.n_items, q.alpha, k)
    )


def kmin_with_naive(q: KminQuery) -> int | None:
    """K_min with a fraction f_m of users who always pick the current most
    popular item (independent draws).  Returns None when f_m >= 1/2: the
    bracketed term tends to -1, so no K can overcome the naive mass."""
    if q.naive_fraction >= 0.5:
        return None
    if q.n_items < 2:
        return 1
    return _scan_smallest_k(
        lambda k: _critical_margin_with_rep(
            q.n_items, q.alpha, k, f_m=q.naive_fraction
        )
    )


def kdist_condition(n: int, alpha: float, p_k: Mapping[int, float]) -> bool:
    """True iff a distribution of K destabilizes the critical ordering:
    the p_k-average of the fixed-K margins is negative."""
    total = math.fsum(p_k.values())
    if abs(total - 1.0) > 1e-9:
        raise ConfigError(f"K distribution sums to {total}, not 1")
    avg = math.fsum(
        p * _critical_margin_with_rep(n, alpha, k) for k, p in p_k.items()
    )
    return avg < 0.0


def kmin_exact_enumeration(
    q: KminQuery, n_cap: int | None = None, method: str = "critical"
) -> int:
    """Exact K_min via the equilibrium engines.

    ``method='critical'`` (default) checks only the critical ordering's
    stability per K, which is sufficient: among all single-block disorders
    the top-pair swap is the last to destabilize.  ``method='full'``
    enumerates every ordering exhaustively.  Caps: N <= 10 for full
    enumeration, N <= 30 for the critical-only check.
    """
    from .equilibrium import enumerate_stable_points, is_stable

    if q.naive_fraction != 0.0 or q.k_distribution is not None:
        raise ConfigError("exact enumeration covers the fixed-K, f_m=0 case")
    cap = n_cap if n_cap is not None else (10 if method == "full" else 30)
    n = q.n_items
    if n > cap:
        raise ConfigError(f"N={n} exceeds the enumeration cap {cap}")
    if n < 2:
        return 1
    natural = Permutation.natural(n)
    critical = Permutation(tuple(range(1, n - 1)) + (n, n - 1))
    for k in range(1, n + 1):
        cfg = MarketConfig(
            n_items=n, alpha=q.alpha, discrimination=k,
            repetition_mode=q.repetition_mode,
        )
        if method == "full":
            points = enumerate_stable_points(cfg, strategy="exhaustive", n_cap=cap)
            if [p.perm.order for p in points.points] == [natural.order]:
                return k
        else:
            if is_stable(natural, cfg) and not is_stable(critical, cfg):
                return k
    raise RuntimeError(
        f"no K <= N={n} leaves only the natural ordering stable "
        f"(alpha={q.alpha}, mode={q.repetition_mode})"
    )


def gap_function_F(delta: int, v: int, k: int, n: int, alpha: float) -> float:
    """Stability margin of the ordering where the item of quality rank v
    (v-th best) is lifted by delta popularity positions and everything
    above quality rank v keeps its natural place.

    Positive means that misordering persists (the lifted item keeps
    out-earning the better item just below it); the margin is largest at
    delta=1, v=2, which is why the top-pair swap decides K_min.
    """
    if not 1 <= delta <= n - 1:
        raise ConfigError(f"delta must lie in 1..{n - 1}, got {delta}")
    if not delta + 1 <= v <= n:
        raise ConfigError(f"v must lie in {delta + 1}..{n}, got {v}")
    if k < 1:
        raise ConfigError("K must be at least 1")
    g = rank_power_normalizer(n, alpha)
    s_star = math.fsum(1.0 / (i**alpha * g) for i in range(v + 1, n + 1))
    lifted = 1.0 / ((v - delta) ** alpha * g)
    displaced = 1.0 / ((v - delta + 1) ** alpha * g)
    return (
        2.0 * _xpow(s_star + lifted, k)
        - _xpow(s_star, k)
        - _xpow(s_star + lifted + displaced, k)
    )


def zeta_normalizer(alpha: float, tol: float = 1e-12) -> float:
    """Limit of the power-law normalizer as N grows, for alpha > 1.

    Partial series plus an integral tail correction (Euler-Maclaurin),
    truncated once the correction's own error term drops below tol.
    """
    if alpha <= 1.0:
        raise ConfigError("the normalizer diverges for alpha <= 1")
    total = 0.0
    m = 16
    while True:
        total = math.fsum(i**-alpha for i in range(1, m + 1))
        tail = m ** (1.0 - alpha) / (alpha - 1.0) - 0.5 * m**-alpha
        tail += alpha / 12.0 * m ** (-alpha - 1.0)
        # next Euler-Maclaurin term bounds the truncation error
        err = abs(alpha * (alpha + 1) * (alpha + 2) / 720.0) * m ** (-alpha - 3.0)
        if err < tol:
            return total + tail
        m *= 2


def kmin_with_rep_limit(alpha: float) -> int:
    """Large-N limit of K_min for alpha > 1 (independent draws), obtained
    by replacing the normalizer with its convergent limit."""
    zeta = zeta_normalizer(alpha)

    def margin(k: int) -> float:
        g_inv = 1.0 / zeta
        top = g_inv * 2.0**-alpha
        return 2.0 * _xpow(1.0 - top, k) - 1.0 - _xpow(1.0 - g_inv - top, k)

    return _scan_smallest_k(margin)
