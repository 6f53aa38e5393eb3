"""Per-round selection probabilities and per-item winning probabilities.

Selection law: at a strict popularity ordering, item i is drawn with
probability proportional to r_i ** -alpha, where r_i is its popularity rank
and alpha >= 0 the popularity-bias exponent.  A user inspects K drawn items
(with or without repetition) and the highest-quality inspected item wins
the round.

All winning-probability vectors are indexed by item id, which coincides
with the quality order; rank enters only through the selection
probabilities.
"""

from __future__ import annotations

import functools
import math
import os
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .core import (
    WITH_REPETITION,
    WITHOUT_REPETITION,
    ConfigError,
    MarketConfig,
    Permutation,
    RankVector,
    WinProbVector,
    validate_config,
)

DEFAULT_ENUM_BUDGET = 10**8


class EnumerationBudgetError(RuntimeError):
    """The exact no-repetition computation would exceed its work budget."""

    def __init__(self, required: int, budget: int):
        super().__init__(
            f"exact enumeration needs {required} sequence terms, "
            f"budget is {budget} (raise POPDYN_MAX_ENUM to override)"
        )
        self.required = required
        self.budget = budget


def enumeration_budget(max_enum: int | None = None) -> int:
    """Resolve the enumeration budget (POPDYN_MAX_ENUM overrides the default)."""
    if max_enum is not None:
        return int(max_enum)
    env = os.environ.get("POPDYN_MAX_ENUM")
    return int(env) if env else DEFAULT_ENUM_BUDGET


@functools.lru_cache(maxsize=4096)
def rank_power_normalizer(n: int, alpha: float) -> float:
    """Normalizer of the rank power law: sum of i ** -alpha for i = 1..n.

    Accumulated with exact compensated summation; cached so that K scans
    sharing one (n, alpha) pay for the sum once.
    """
    return math.fsum(i ** -alpha for i in range(1, n + 1))


@dataclass(frozen=True)
class SelectionProbVector:
    """Item selection probabilities p_i with their quality-order cumulants.

    ``cumulants[i-1]`` is the probability of drawing an item of quality
    index <= i in one draw; ``normalizer`` is the power-law constant
    sum(r ** -alpha).
    """

    probs: tuple[float, ...]
    cumulants: tuple[float, ...]
    normalizer: float

    @property
    def n(self) -> int:
        return len(self.probs)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.probs, dtype=float)


def _selection_array(perm: Permutation, alpha: float) -> np.ndarray:
    """Selection probabilities indexed by item id for a strict ordering."""
    ranks = np.asarray(perm.ranks(), dtype=float)
    weights = ranks**-alpha
    return weights / weights.sum()


def selection_probs(perm: Permutation, alpha: float) -> SelectionProbVector:
    """Selection law p_i = r_i ** -alpha / sum_j r_j ** -alpha.

    ``perm`` must be a strict ordering; alpha = 0 degenerates to the
    uniform law 1/N.
    """
    if alpha < 0:
        raise ConfigError(f"alpha must be non-negative, got {alpha}")
    p = _selection_array(perm, alpha)
    return SelectionProbVector(
        probs=tuple(p.tolist()),
        cumulants=tuple(np.cumsum(p).tolist()),
        normalizer=rank_power_normalizer(perm.n, alpha),
    )


def _uniform_array(n: int, k: int) -> np.ndarray:
    """Winning probabilities under uniform pre-selection of k distinct items."""
    b = np.zeros(n)
    denom = math.comb(n, k)
    for i in range(k, n + 1):
        b[i - 1] = math.comb(i - 1, k - 1) / denom
    return b


def win_probs_uniform(n: int, k: int) -> WinProbVector:
    """Uniform pre-selection: item i wins iff it tops a uniformly random
    k-subset, so b_i = C(i-1, k-1) / C(n, k) for i >= k and 0 below."""
    if not 1 <= k <= n:
        raise ConfigError(f"K must satisfy 1 <= K <= N, got K={k}, N={n}")
    return WinProbVector(tuple(_uniform_array(n, k).tolist()))


def _with_rep_from_selection(q: np.ndarray, k: int) -> np.ndarray:
    """Winning probabilities from per-draw selection probabilities, when the
    k draws are independent: b_i = s_i**k - s_{i-1}**k on the cumulants."""
    s = np.cumsum(q)
    s[-1] = 1.0
    powed = s**k
    b = np.empty_like(powed)
    b[0] = powed[0]
    b[1:] = np.diff(powed)
    return b


def _without_rep_transition_count(n: int, k: int) -> int:
    return sum(math.comb(n, j) * (n - j) for j in range(k))


def _without_rep_from_selection(
    q: np.ndarray, k: int, max_enum: int | None = None
) -> np.ndarray:
    """Exact winning probabilities when the k draws are renormalized over the
    not-yet-drawn items.

    Sums the probabilities of all ordered k-sequences of distinct items,
    merging sequences that share the same drawn set (the remaining draw law
    depends on the set only).  Each set-extension step counts against the
    enumeration budget.
    """
    n = len(q)
    if not 1 <= k <= n:
        raise ConfigError(f"K must satisfy 1 <= K <= N, got K={k}, N={n}")
    budget = enumeration_budget(max_enum)
    required = _without_rep_transition_count(n, k)
    if required > budget:
        raise EnumerationBudgetError(required, budget)

    w = [float(x) for x in q]
    total = math.fsum(w)
    bits = [1 << j for j in range(n)]
    level: dict[int, float] = {0: 0.0}
    probs: dict[int, float] = {0: 1.0}
    for _ in range(k):
        nxt_prob: dict[int, float] = {}
        nxt_sum: dict[int, float] = {}
        for mask, prob in probs.items():
            remaining = total - level[mask]
            for j in range(n):
                bit = bits[j]
                if mask & bit:
                    continue
                new = mask | bit
                contrib = prob * w[j] / remaining
                if new in nxt_prob:
                    nxt_prob[new] += contrib
                else:
                    nxt_prob[new] = contrib
                    nxt_sum[new] = level[mask] + w[j]
        probs = nxt_prob
        level = nxt_sum

    b = np.zeros(n)
    for mask, prob in probs.items():
        b[mask.bit_length() - 1] += prob
    return b


def win_probs_with_rep(perm: Permutation, alpha: float, k: int) -> WinProbVector:
    """Winning probabilities when the K inspected items are independent
    draws (repeats allowed) under the rank power law."""
    if k < 1:
        raise ConfigError(f"K must be at least 1, got {k}")
    q = _selection_array(perm, alpha)
    return WinProbVector(tuple(_with_rep_from_selection(q, k).tolist()))


def win_probs_without_rep(
    perm: Permutation, alpha: float, k: int, max_enum: int | None = None
) -> WinProbVector:
    """Winning probabilities when the K inspected items are distinct,
    drawn successively with renormalization over the remaining items."""
    q = _selection_array(perm, alpha)
    return WinProbVector(
        tuple(_without_rep_from_selection(q, k, max_enum).tolist())
    )


def preselection_sequence_prob(
    ranks: RankVector | Sequence[int], sequence: Sequence[int], alpha: float
) -> float:
    """Probability that the system presents exactly this ordered sequence of
    items, drawing without repetition under the rank power law."""
    r = ranks.ranks if isinstance(ranks, RankVector) else tuple(ranks)
    if len(set(sequence)) != len(sequence):
        raise ConfigError("sequence must contain distinct item ids")
    weights = [float(ri) ** -alpha for ri in r]
    remaining = math.fsum(weights)
    prob = 1.0
    for item in sequence:
        prob *= weights[item - 1] / remaining
        remaining -= weights[item - 1]
    return prob


def blend_naive(
    b: WinProbVector | np.ndarray, current_top: int, f_m: float
) -> WinProbVector:
    """Mix in a fraction f_m of users who always pick the current most
    popular item: b_i <- f_m * [i == top] + (1 - f_m) * b_i."""
    if not 0.0 <= f_m <= 1.0:
        raise ConfigError(f"naive fraction must lie in [0, 1], got {f_m}")
    arr = b.as_array() if isinstance(b, WinProbVector) else np.asarray(b, dtype=float)
    out = (1.0 - f_m) * arr
    out[current_top - 1] += f_m
    return WinProbVector(tuple(out.tolist()))


def blend_k_distribution(
    per_k_probs: Mapping[int, WinProbVector | np.ndarray],
    p_k: Mapping[int, float],
) -> WinProbVector:
    """Average winning probabilities over a distribution of the
    discrimination power K: b_i = sum_k p_k * b_i(k)."""
    if set(per_k_probs) != set(p_k):
        raise ConfigError(
            f"mismatched support: probabilities for K={sorted(per_k_probs)} "
            f"but distribution over K={sorted(p_k)}"
        )
    out = None
    for k, weight in p_k.items():
        b = per_k_probs[k]
        arr = b.as_array() if isinstance(b, WinProbVector) else np.asarray(b, float)
        out = weight * arr if out is None else out + weight * arr
    return WinProbVector(tuple(out.tolist()))


def _engine_from_selection(
    q: np.ndarray, k: int, mode: str, max_enum: int | None
) -> np.ndarray:
    if mode == WITH_REPETITION:
        return _with_rep_from_selection(q, k)
    return _without_rep_from_selection(q, k, max_enum)


def _k_blended_from_selection(
    q: np.ndarray, cfg: MarketConfig, max_enum: int | None
) -> np.ndarray:
    """Winning probabilities for one selection law, averaged over K."""
    if cfg.fixed_k is not None:
        return _engine_from_selection(q, cfg.fixed_k, cfg.repetition_mode, max_enum)
    out = np.zeros(cfg.n_items)
    for k, p in cfg.discrimination.items():
        if p == 0.0:
            continue
        out += p * _engine_from_selection(q, k, cfg.repetition_mode, max_enum)
    return out


def class_conditional_win_probs(
    perm: Permutation, cfg: MarketConfig, max_enum: int | None = None
) -> np.ndarray:
    """Winning probabilities per user class, indexed by perceived quality.

    Row c gives the probability that a class-c user's chosen item is their
    i-th quality item (K-distribution already averaged, naive users not
    included).
    """
    p_item = _selection_array(perm, cfg.alpha)
    classes = cfg.effective_classes()
    out = np.empty((len(classes), cfg.n_items))
    for ci, cls in enumerate(classes):
        relabeled = p_item[np.asarray(cls.quality_order) - 1]
        out[ci] = _k_blended_from_selection(relabeled, cfg, max_enum)
    return out


def win_probs_multiclass(
    perm: Permutation, cfg: MarketConfig, max_enum: int | None = None
) -> WinProbVector:
    """Per-item winning probabilities with heterogeneous quality perception.

    For each class the selection probabilities are relabeled through the
    class quality order, the class-conditional winning probabilities are
    computed, and the contributions f_c * b_{i,c} are accumulated back onto
    the item ids.  Naive users are not blended here.
    """
    validate_config(cfg)
    per_class = class_conditional_win_probs(perm, cfg, max_enum)
    out = np.zeros(cfg.n_items)
    for cls, b_c in zip(cfg.effective_classes(), per_class):
        order = np.asarray(cls.quality_order) - 1
        np.add.at(out, order, cls.class_probability * b_c)
    return WinProbVector(tuple(out.tolist()))


def win_probs_array_for_config(
    perm: Permutation, cfg: MarketConfig, max_enum: int | None = None
) -> np.ndarray:
    """Array-valued variant of win_probs_for_config, for iteration loops."""
    per_class = class_conditional_win_probs(perm, cfg, max_enum)
    out = np.zeros(cfg.n_items)
    for cls, b_c in zip(cfg.effective_classes(), per_class):
        order = np.asarray(cls.quality_order) - 1
        np.add.at(out, order, cls.class_probability * b_c)
    f_m = cfg.naive_fraction
    if f_m > 0.0:
        out *= 1.0 - f_m
        out[perm.most_popular_first[0] - 1] += f_m
    return out


def win_probs_for_config(
    perm: Permutation, cfg: MarketConfig, max_enum: int | None = None
) -> WinProbVector:
    """Full dispatch: classes, K distribution, then the naive-user blend.

    Naive users deterministically pick the most popular item of ``perm``;
    they are composed after class blending.
    """
    b = win_probs_multiclass(perm, cfg, max_enum)
    if cfg.naive_fraction > 0.0:
        b = blend_naive(b, perm.most_popular_first[0], cfg.naive_fraction)
    return b
