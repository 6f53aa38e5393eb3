"""Shared domain types, configuration validation, and rank computation.

Conventions used throughout the package:

* Items carry ids 1..N, indexed in increasing order of intrinsic quality:
  item 1 is the worst, item N the best.  All probability vectors returned
  by the engines are indexed by item id (quality order), never by rank.
* A popularity rank r_i of item i is the number of items, including i
  itself, whose weight is at least as large as item i's weight.  Rank 1 is
  the most popular item; tied items share the same (largest) rank.
* A ``Permutation`` stores item ids in increasing order of popularity:
  position j (1-based) holds the item of popularity rank N - j + 1, so the
  last entry is the most popular item.  The natural permutation
  (1, 2, ..., N) is the state where popularity agrees with quality.
* Whenever a strict total order is required (iterating the ranking map,
  forming selection probabilities at round 0), weight ties are broken by
  ascending item id: among equally weighted items, the one with the
  smaller id is treated as more popular.  This is a modeling choice, kept
  deterministic for reproducibility.

Probability vectors are checked to sum to 1 within 1e-9; normalized weight
vectors within 1e-12.  These tolerances are safe for N up to 1e4 in double
precision.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

WITH_REPETITION = "with-repetition"
WITHOUT_REPETITION = "without-repetition"
REPETITION_MODES = (WITH_REPETITION, WITHOUT_REPETITION)

PROB_SUM_TOL = 1e-9
NORM_SUM_TOL = 1e-12


class ConfigError(ValueError):
    """A market configuration violates one of its invariants."""


def normalize_repetition_mode(mode: str) -> str:
    """Normalize a repetition-mode spelling ('with-rep' is accepted)."""
    aliases = {
        "with-rep": WITH_REPETITION,
        "without-rep": WITHOUT_REPETITION,
        WITH_REPETITION: WITH_REPETITION,
        WITHOUT_REPETITION: WITHOUT_REPETITION,
    }
    try:
        return aliases[mode]
    except KeyError:
        raise ConfigError(f"unknown repetition mode {mode!r}") from None


@dataclass(frozen=True)
class UserClass:
    """One user class: its draw probability and its perceived quality order.

    ``quality_order`` lists item ids from the worst to the best as perceived
    by users of this class; the identity order (1, ..., N) is the base case.
    """

    class_probability: float
    quality_order: tuple[int, ...]

    @staticmethod
    def identity(n_items: int, probability: float = 1.0) -> "UserClass":
        return UserClass(probability, tuple(range(1, n_items + 1)))


@dataclass(frozen=True)
class MarketConfig:
    """Full parameterization of one market experiment.

    ``discrimination`` is either a fixed integer K (number of items a user
    inspects) or a mapping {k: p_k} giving a discrete distribution of K.
    ``classes`` defaults to a single identity class.  ``initial_weights``
    defaults to all ones.
    """

    n_items: int
    alpha: float
    discrimination: int | Mapping[int, float]
    repetition_mode: str = WITH_REPETITION
    naive_fraction: float = 0.0
    classes: tuple[UserClass, ...] | None = None
    initial_weights: tuple[int, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "repetition_mode", normalize_repetition_mode(self.repetition_mode))
        if self.classes is not None:
            object.__setattr__(
                self,
                "classes",
                tuple(
                    c if isinstance(c, UserClass) else UserClass(c[0], tuple(c[1]))
                    for c in self.classes
                ),
            )
        if self.initial_weights is not None:
            object.__setattr__(self, "initial_weights", tuple(self.initial_weights))
        if isinstance(self.discrimination, Mapping):
            object.__setattr__(
                self,
                "discrimination",
                {int(k): float(p) for k, p in self.discrimination.items()},
            )

    # -- derived views -------------------------------------------------

    @property
    def fixed_k(self) -> int | None:
        """The fixed K, or None when K is distributional."""
        return self.discrimination if isinstance(self.discrimination, int) else None

    @property
    def k_distribution(self) -> dict[int, float] | None:
        if isinstance(self.discrimination, Mapping):
            return dict(self.discrimination)
        return None

    @property
    def max_k(self) -> int:
        if self.fixed_k is not None:
            return self.fixed_k
        return max(self.discrimination)

    def effective_classes(self) -> tuple[UserClass, ...]:
        if self.classes is None:
            return (UserClass.identity(self.n_items),)
        return self.classes

    def effective_initial_weights(self) -> tuple[int, ...]:
        if self.initial_weights is None:
            return (1,) * self.n_items
        return self.initial_weights

    def is_single_identity_class(self) -> bool:
        cls = self.effective_classes()
        return len(cls) == 1 and cls[0].quality_order == tuple(
            range(1, self.n_items + 1)
        )

    # -- JSON contract ---------------------------------------------------

    def to_json_dict(self) -> dict:
        d = {
            "n_items": self.n_items,
            "alpha": self.alpha,
            "discrimination": (
                self.fixed_k
                if self.fixed_k is not None
                else {str(k): p for k, p in self.discrimination.items()}
            ),
            "repetition_mode": self.repetition_mode,
            "naive_fraction": self.naive_fraction,
        }
        if self.classes is not None:
            d["classes"] = [
                {
                    "class_probability": c.class_probability,
                    "quality_order": list(c.quality_order),
                }
                for c in self.classes
            ]
        if self.initial_weights is not None:
            d["initial_weights"] = list(self.initial_weights)
        return d

    @staticmethod
    def from_json_dict(d: Mapping) -> "MarketConfig":
        discrimination = d["discrimination"]
        if isinstance(discrimination, Mapping):
            discrimination = {int(k): float(p) for k, p in discrimination.items()}
        classes = None
        if d.get("classes") is not None:
            classes = tuple(
                UserClass(c["class_probability"], tuple(c["quality_order"]))
                for c in d["classes"]
            )
        initial = d.get("initial_weights")
        return MarketConfig(
            n_items=int(d["n_items"]),
            alpha=float(d["alpha"]),
            discrimination=discrimination,
            repetition_mode=d.get("repetition_mode", WITH_REPETITION),
            naive_fraction=float(d.get("naive_fraction", 0.0)),
            classes=classes,
            initial_weights=tuple(initial) if initial is not None else None,
        )

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_json_dict(), **kwargs)

    @staticmethod
    def from_json(text: str) -> "MarketConfig":
        return MarketConfig.from_json_dict(json.loads(text))


def validate_config(cfg: MarketConfig) -> MarketConfig:
    """Check every MarketConfig invariant; return cfg unchanged if valid.

    Raises ConfigError naming the first violated invariant.
    """
    n = cfg.n_items
    if not isinstance(n, int) or n < 1:
        raise ConfigError(f"n_items must be a positive integer, got {n!r}")
    if not (cfg.alpha >= 0):
        raise ConfigError(f"alpha must be non-negative, got {cfg.alpha!r}")
    if cfg.repetition_mode not in REPETITION_MODES:
        raise ConfigError(f"unknown repetition mode {cfg.repetition_mode!r}")
    if cfg.fixed_k is not None:
        k = cfg.fixed_k
        if k < 1:
            raise ConfigError(f"K must be at least 1, got {k}")
        if k > n:
            raise ConfigError(f"K exceeds N ({k} > {n})")
    else:
        dist = cfg.discrimination
        if not dist:
            raise ConfigError("K distribution is empty")
        for k, p in dist.items():
            if k < 1 or k > n:
                raise ConfigError(f"K distribution support value {k} outside 1..{n}")
            if p < 0:
                raise ConfigError(f"K distribution has negative probability p[{k}]={p}")
        total = sum(dist.values())
        if abs(total - 1.0) > PROB_SUM_TOL:
            raise ConfigError(f"K distribution probabilities sum to {total}, not 1")
    if not (0.0 <= cfg.naive_fraction <= 1.0):
        raise ConfigError(f"naive_fraction must lie in [0, 1], got {cfg.naive_fraction}")
    classes = cfg.effective_classes()
    if len(classes) == 0:
        raise ConfigError("classes must be a non-empty list")
    ftotal = sum(c.class_probability for c in classes)
    if abs(ftotal - 1.0) > PROB_SUM_TOL:
        raise ConfigError(f"class probabilities sum ≠ 1 (got {ftotal})")
    for idx, c in enumerate(classes):
        if c.class_probability < 0:
            raise ConfigError(f"class {idx + 1} has negative probability")
        if sorted(c.quality_order) != list(range(1, n + 1)):
            raise ConfigError(
                f"class {idx + 1} quality_order is not a permutation of 1..{n}"
            )
    weights = cfg.effective_initial_weights()
    if len(weights) != n:
        raise ConfigError(
            f"initial_weights has length {len(weights)}, expected {n}"
        )
    if any(w <= 0 for w in weights):
        raise ConfigError("initial_weights must all be positive")
    return cfg


@dataclass(frozen=True)
class Permutation:
    """A strict popularity ordering of the N items.

    ``order`` lists item ids in increasing popularity: the item at 0-based
    position j has popularity rank N - j, i.e. the last entry is the most
    popular item.
    """

    order: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "order", tuple(int(i) for i in self.order))
        n = len(self.order)
        if sorted(self.order) != list(range(1, n + 1)):
            raise ConfigError(
                f"permutation {self.order} is not a rearrangement of 1..{n}"
            )

    @staticmethod
    def natural(n: int) -> "Permutation":
        """The ordering where popularity agrees with quality (item N on top)."""
        return Permutation(tuple(range(1, n + 1)))

    @staticmethod
    def from_ranks(ranks: Sequence[int]) -> "Permutation":
        """Build a strict ordering from a rank vector (must have no ties)."""
        n = len(ranks)
        if sorted(ranks) != list(range(1, n + 1)):
            raise ConfigError(f"ranks {tuple(ranks)} are not strict")
        order = [0] * n
        for item, r in enumerate(ranks, start=1):
            order[n - r] = item
        return Permutation(tuple(order))

    @property
    def n(self) -> int:
        return len(self.order)

    @property
    def most_popular_first(self) -> tuple[int, ...]:
        return tuple(reversed(self.order))

    def ranks(self) -> tuple[int, ...]:
        """Popularity rank of each item, indexed by item id (rank 1 = top)."""
        n = self.n
        r = [0] * n
        for pos, item in enumerate(self.order):
            r[item - 1] = n - pos
        return tuple(r)

    def __iter__(self):
        return iter(self.order)


@dataclass(frozen=True)
class WeightVector:
    """Popularity weights per item after a given round.

    Raw counts must be positive; a normalized vector must sum to 1 within
    1e-12.
    """

    weights: tuple[float, ...]
    round: int = 0
    normalized: bool = False

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if self.round < 0:
            raise ConfigError("round must be non-negative")
        if any(w <= 0 for w in self.weights):
            raise ConfigError("weights must all be positive")
        if self.normalized:
            total = sum(self.weights)
            if abs(total - 1.0) > NORM_SUM_TOL:
                raise ConfigError(
                    f"normalized weights sum to {total}, outside 1 +/- 1e-12"
                )

    @property
    def n(self) -> int:
        return len(self.weights)

    def normalize(self) -> "WeightVector":
        total = sum(self.weights)
        return WeightVector(
            tuple(w / total for w in self.weights), self.round, normalized=True
        )


@dataclass(frozen=True)
class RankVector:
    """Popularity rank of each item (1 = most popular, ties share a rank)."""

    ranks: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "ranks", tuple(int(r) for r in self.ranks))
        n = len(self.ranks)
        if any(r < 1 or r > n for r in self.ranks):
            raise ConfigError("ranks must lie in 1..N")

    @property
    def n(self) -> int:
        return len(self.ranks)


@dataclass(frozen=True)
class WinProbVector:
    """Per-item winning probabilities, a stochastic vector over items 1..N."""

    probs: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "probs", tuple(float(p) for p in self.probs))
        if any(p < 0 for p in self.probs):
            raise ConfigError("winning probabilities must be non-negative")
        total = sum(self.probs)
        if abs(total - 1.0) > PROB_SUM_TOL:
            raise ConfigError(
                f"winning probabilities sum to {total}, outside 1 +/- 1e-9"
            )

    @property
    def n(self) -> int:
        return len(self.probs)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.probs, dtype=float)


def compute_ranks(w: WeightVector | Sequence[float]) -> RankVector:
    """Popularity ranks: r_i counts the items whose weight is >= item i's.

    Tied items share the same (largest) rank; with all weights equal every
    rank is N.  Invariant under positive rescaling of the weights.
    """
    weights = w.weights if isinstance(w, WeightVector) else tuple(w)
    arr = np.asarray(weights, dtype=float)
    ranks = (arr[None, :] >= arr[:, None]).sum(axis=1)
    return RankVector(tuple(int(r) for r in ranks))


def rank_with_tiebreak(w: WeightVector | Sequence[float]) -> Permutation:
    """Strict popularity order by descending weight, ties by ascending id.

    Used wherever the dynamics require a total order (selection
    probabilities, ranking-map iteration).  With all-distinct weights it
    agrees with compute_ranks.
    """
    weights = w.weights if isinstance(w, WeightVector) else tuple(w)
    n = len(weights)
    most_popular_first = sorted(range(1, n + 1), key=lambda i: (-weights[i - 1], i))
    return Permutation(tuple(reversed(most_popular_first)))


def strict_ranks(w: WeightVector | Sequence[float]) -> tuple[int, ...]:
    """Tie-broken rank of each item, indexed by item id (rank 1 = top)."""
    return rank_with_tiebreak(w).ranks()
