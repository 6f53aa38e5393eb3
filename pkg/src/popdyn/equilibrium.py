"""Fixed points of the popularity-feedback map B and their basins.

B takes an assumed strict popularity ordering, computes the winning
probabilities it induces, and returns the ordering of those probabilities.
An ordering that maps to itself with all winning probabilities pairwise
distinct is a stable point: the urn dynamics can settle there.  The
ordering whose popularity agrees with quality is the desired stable point;
any other is spurious.

The permutation graph has one node per ordering and one edge to its
B-image; it is a functional graph whose only cycles are the self-loops on
fixed points, so every weak component owns exactly one fixed point.  The
attractiveness of a fixed point is its component's share of all N!
orderings, a proxy for how likely the dynamics are to end there.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .core import (
    WITH_REPETITION,
    ConfigError,
    MarketConfig,
    Permutation,
    WinProbVector,
    rank_with_tiebreak,
    validate_config,
)
from .winprob import win_probs_array_for_config

TIE_TOL = 1e-12
EXHAUSTIVE_CAP = 10
GENERAL_GRAPH_CAP = 8  # full graphs beyond this need the vectorized path
DEFAULT_MAX_ITER_FACTOR = 10  # iteration cap per trial: 10 * N**2


@dataclass(frozen=True)
class BMapResult:
    """One application of B: input ordering, induced probabilities, output."""

    input_perm: Permutation
    b: WinProbVector
    output_perm: Permutation
    has_tie: bool


@dataclass(frozen=True)
class StablePoint:
    """A stable ordering with its winning probabilities.

    ``attractiveness`` is filled when the full permutation graph was built;
    ``quality`` when a quality report attached it.
    """

    perm: Permutation
    b: WinProbVector
    attractiveness: float | None = None
    quality: float | None = None

    def to_json_dict(self) -> dict:
        d = {
            "permutation": list(self.perm.order),
            "win_probs": list(self.b.probs),
        }
        if self.attractiveness is not None:
            d["attractiveness"] = self.attractiveness
        if self.quality is not None:
            d["quality"] = self.quality
        return d


@dataclass(frozen=True)
class StablePointSet:
    """All stable points found for a configuration, with search metadata."""

    points: tuple[StablePoint, ...]
    strategy: str
    exact: bool
    trials: int | None = None
    basin_hits: tuple[int, ...] | None = None
    non_converged: int = 0
    tie_rejections: int = 0

    def __len__(self) -> int:
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    def perms(self) -> list[tuple[int, ...]]:
        return [p.perm.order for p in self.points]

    def to_json_dict(self) -> dict:
        d = {
            "strategy": self.strategy,
            "exact": self.exact,
            "stable_points": [p.to_json_dict() for p in self.points],
        }
        if self.trials is not None:
            d["trials"] = self.trials
            d["basin_hits"] = list(self.basin_hits or ())
            d["non_converged"] = self.non_converged
            d["tie_rejections"] = self.tie_rejections
        return d


@dataclass(frozen=True)
class FixedPointInfo:
    """A self-loop node of the permutation graph."""

    perm: Permutation
    b: WinProbVector
    has_tie: bool
    component_size: int
    attractiveness: float
    node_index: int


@dataclass(frozen=True)
class PermutationGraph:
    """Functional graph of B over orderings.

    For scope='full' the nodes are all N! orderings indexed by their
    lexicographic rank and decoded on demand; edge_targets[i] is the node
    index of B(ordering i), terminal[i] the fixed point its path reaches,
    so terminal doubles as a component id.
    """

    cfg: MarketConfig
    n_items: int
    node_count: int
    edge_targets: np.ndarray
    terminal: np.ndarray
    fixed_points: tuple[FixedPointInfo, ...]
    scope: str = "full"
    node_perms: tuple[tuple[int, ...], ...] | None = None  # component scope only

    def perm_at(self, index: int) -> Permutation:
        if self.node_perms is not None:
            return Permutation(self.node_perms[index])
        return Permutation(unrank_permutation(index, self.n_items))

    def index_of(self, perm: Permutation) -> int:
        if self.node_perms is not None:
            try:
                return self.node_perms.index(perm.order)
            except ValueError:
                raise KeyError(f"{perm.order} is not a node of this graph") from None
        return lexicographic_rank(perm.order)

    def component_sizes(self) -> dict[int, int]:
        counts = np.bincount(self.terminal, minlength=self.node_count)
        return {f.node_index: int(counts[f.node_index]) for f in self.fixed_points}

    def stable_points(self) -> StablePointSet:
        pts = []
        for f in self.fixed_points:
            arr = f.b.as_array()
            if _is_stable_order(f.perm.order, arr):
                canon = canonical_stable_order(f.perm.order, arr)
                pts.append(
                    StablePoint(
                        Permutation(canon), f.b, attractiveness=f.attractiveness
                    )
                )
        pts.sort(key=lambda p: p.perm.order)
        return StablePointSet(
            points=tuple(pts), strategy="graph", exact=self.scope == "full"
        )


def lexicographic_rank(order: Sequence[int]) -> int:
    """Rank of a permutation of 1..n in lexicographic enumeration order."""
    n = len(order)
    rank = 0
    fact = math.factorial(n - 1)
    remaining = list(order)
    for j in range(n - 1):
        smaller = sum(1 for x in remaining[j + 1 :] if x < remaining[j])
        rank += smaller * fact
        if n - 1 - j > 0:
            fact //= max(n - 1 - j, 1)
    return rank


def unrank_permutation(rank: int, n: int) -> tuple[int, ...]:
    """Inverse of lexicographic_rank."""
    items = list(range(1, n + 1))
    out = []
    fact = math.factorial(n - 1)
    for j in range(n - 1, -1, -1):
        idx, rank = divmod(rank, fact) if fact else (0, rank)
        out.append(items.pop(idx))
        if j > 0:
            fact //= max(j, 1)
    return tuple(out)


def apply_B(
    perm: Permutation, cfg: MarketConfig, max_enum: int | None = None
) -> BMapResult:
    """Apply the popularity-feedback map once.

    Computes the winning probabilities induced by ``perm`` under the
    configured engine (mode, naive fraction, K distribution, classes) and
    ranks them with the deterministic tie-break.
    """
    validate_config(cfg)
    arr = win_probs_array_for_config(perm, cfg, max_enum)
    return _bmap_from_array(perm, arr)


def _bmap_from_array(perm: Permutation, arr: np.ndarray) -> BMapResult:
    output = rank_with_tiebreak(arr)
    sorted_b = np.sort(arr)
    has_tie = bool(np.any(np.diff(sorted_b) <= TIE_TOL))
    return BMapResult(
        input_perm=perm,
        b=WinProbVector(tuple(arr.tolist())),
        output_perm=output,
        has_tie=has_tie,
    )


def _is_stable_order(order: tuple[int, ...], arr: np.ndarray) -> bool:
    """Stability of an ordering given the probabilities it induces.

    The items with zero winning probability must sit at the bottom of the
    ordering, in any internal order: they never win, so their weights
    freeze and their relative order is inert rather than unstable.  Above
    them the probabilities must strictly increase along the ordering with
    gaps larger than the tie tolerance; a tie between entries that can win
    leaves the order on a knife edge and disqualifies the point.
    """
    zero_items = {i + 1 for i, v in enumerate(arr) if v <= 0.0}
    nz = len(zero_items)
    if set(order[:nz]) != zero_items:
        return False
    vals = [arr[i - 1] for i in order[nz:]]
    return all(b - a > TIE_TOL for a, b in zip(vals, vals[1:]))


def canonical_stable_order(order: tuple[int, ...], arr: np.ndarray) -> tuple[int, ...]:
    """Representative of a stable class: never-winning items in ascending id
    at the bottom, the rest ordered by their probabilities."""
    zero_items = sorted(i + 1 for i, v in enumerate(arr) if v <= 0.0)
    nz = len(zero_items)
    return tuple(zero_items) + tuple(order[nz:])


def is_stable(
    perm: Permutation, cfg: MarketConfig, max_enum: int | None = None
) -> bool:
    """True iff the ordering persists under B: its winning probabilities
    reproduce it, with no tie among the entries that can win."""
    validate_config(cfg)
    arr = win_probs_array_for_config(perm, cfg, max_enum)
    return _is_stable_order(perm.order, arr)


def steps_to_fixed_point(
    perm: Permutation, cfg: MarketConfig, max_iter: int | None = None
) -> int:
    """Number of B applications needed to reach a fixed ordering."""
    limit = max_iter or DEFAULT_MAX_ITER_FACTOR * cfg.n_items**2
    current = perm
    for step in range(1, limit + 1):
        nxt = apply_B(current, cfg).output_perm
        if nxt.order == current.order:
            return step - 1
        current = nxt
    raise RuntimeError(f"no fixed point reached within {limit} iterations")


# ---------------------------------------------------------------------------
# vectorized whole-space scan (independent-draws engine only)
# ---------------------------------------------------------------------------


def _supports_vectorized(cfg: MarketConfig) -> bool:
    return cfg.repetition_mode == WITH_REPETITION


def _k_weights(cfg: MarketConfig) -> list[tuple[int, float]]:
    if cfg.fixed_k is not None:
        return [(cfg.fixed_k, 1.0)]
    return [(k, p) for k, p in cfg.discrimination.items() if p > 0.0]


def _vectorized_b_for_orders(orders: np.ndarray, cfg: MarketConfig) -> np.ndarray:
    """Winning probabilities for a batch of orderings (independent draws).

    ``orders`` has one ordering per row, item ids in increasing popularity.
    """
    n = cfg.n_items
    pos = np.argsort(orders, axis=1)  # pos[:, i] = row position of item i+1
    ranks = (n - pos).astype(float)
    p = ranks**-cfg.alpha
    p /= p.sum(axis=1, keepdims=True)

    b = np.zeros_like(p)
    for cls in cfg.effective_classes():
        cols = np.asarray(cls.quality_order) - 1
        q = p[:, cols]
        s = np.cumsum(q, axis=1)
        s[:, -1] = 1.0
        bc = np.zeros_like(q)
        for k, weight in _k_weights(cfg):
            powed = s**k
            bc[:, 0] += weight * powed[:, 0]
            bc[:, 1:] += weight * np.diff(powed, axis=1)
        b[:, cols] += cls.class_probability * bc
    f_m = cfg.naive_fraction
    if f_m > 0.0:
        b *= 1.0 - f_m
        b[np.arange(len(orders)), orders[:, -1] - 1] += f_m
    return b


def _rank_rows_with_tiebreak(b: np.ndarray) -> np.ndarray:
    """Row-wise strict ordering of probabilities, ascending, ties broken so
    that the smaller item id lands in the more popular (later) slot."""
    n = b.shape[1]
    ids = np.broadcast_to(np.arange(n), b.shape)
    mpf = np.lexsort((ids, -b), axis=-1)
    return np.flip(mpf, axis=1) + 1


def _lexicographic_rank_rows(orders: np.ndarray) -> np.ndarray:
    n = orders.shape[1]
    later_smaller = (orders[:, :, None] > orders[:, None, :]).astype(np.int64)
    upper = np.triu(np.ones((n, n), dtype=np.int64), k=1)
    digits = np.einsum("rjk,jk->rj", later_smaller, upper)
    facts = np.array([math.factorial(n - 1 - j) for j in range(n)], dtype=np.int64)
    return digits @ facts


def _vectorized_edges(cfg: MarketConfig, chunk: int = 200_000):
    """Edge targets and tie flags for the full graph, chunked over nodes."""
    n = cfg.n_items
    total = math.factorial(n)
    edges = np.empty(total, dtype=np.int64)
    fixed_mask = np.zeros(total, dtype=bool)
    tie_mask = np.zeros(total, dtype=bool)
    offset = 0
    perm_iter = itertools.permutations(range(1, n + 1))
    while True:
        block = list(itertools.islice(perm_iter, chunk))
        if not block:
            break
        orders = np.array(block, dtype=np.int64)
        b = _vectorized_b_for_orders(orders, cfg)
        out_orders = _rank_rows_with_tiebreak(b)
        idx = _lexicographic_rank_rows(out_orders)
        rows = slice(offset, offset + len(block))
        edges[rows] = idx
        fixed_mask[rows] = (out_orders == orders).all(axis=1)
        sorted_b = np.sort(b, axis=1)
        tie_mask[rows] = (np.diff(sorted_b, axis=1) <= TIE_TOL).any(axis=1)
        offset += len(block)
    return edges, fixed_mask, tie_mask


def _terminals(edges: np.ndarray) -> np.ndarray:
    """Endpoint of the B-iteration from every node, by pointer doubling.

    Converges only because all cycles are self-loops; a surviving longer
    cycle is reported, which doubles as the no-cycle assertion.
    """
    term = edges.copy()
    for _ in range(64):
        nxt = term[term]
        if np.array_equal(nxt, term):
            break
        term = nxt
    else:
        raise RuntimeError("B-iteration did not stabilize: cycle longer than 1")
    if not np.array_equal(edges[term], term):
        raise RuntimeError("permutation graph has a cycle of length >= 2")
    return term


def build_permutation_graph(cfg: MarketConfig, n_cap: int = EXHAUSTIVE_CAP):
    """Build the full permutation graph: B-edges, components, fixed points.

    Requires N <= n_cap (default 10).  Configurations with distinct-item
    pre-selection fall back to a per-node loop and are capped at N <= 8;
    independent-draw configurations of any shape use a vectorized scan.
    """
    validate_config(cfg)
    n = cfg.n_items
    if n > n_cap:
        raise ConfigError(f"full graph needs N <= {n_cap}, got N={n}")
    if _supports_vectorized(cfg):
        edges, fixed_mask, tie_mask = _vectorized_edges(cfg)
    else:
        if n > GENERAL_GRAPH_CAP:
            raise ConfigError(
                "full graph for distinct-item pre-selection is capped at "
                f"N <= {GENERAL_GRAPH_CAP}, got N={n}"
            )
        total = math.factorial(n)
        edges = np.empty(total, dtype=np.int64)
        fixed_mask = np.zeros(total, dtype=bool)
        tie_mask = np.zeros(total, dtype=bool)
        for i, order in enumerate(itertools.permutations(range(1, n + 1))):
            perm = Permutation(order)
            result = _bmap_from_array(
                perm, win_probs_array_for_config(perm, cfg)
            )
            edges[i] = lexicographic_rank(result.output_perm.order)
            fixed_mask[i] = result.output_perm.order == order
            tie_mask[i] = result.has_tie

    terminal = _terminals(edges)
    total = len(edges)
    counts = np.bincount(terminal, minlength=total)
    fixed_indices = np.flatnonzero(fixed_mask)
    if not np.array_equal(np.sort(np.unique(terminal)), np.sort(fixed_indices)):
        raise RuntimeError("every component must end in exactly one fixed point")

    fixed_points = []
    for idx in fixed_indices:
        perm = Permutation(unrank_permutation(int(idx), n))
        arr = win_probs_array_for_config(perm, cfg)
        fixed_points.append(
            FixedPointInfo(
                perm=perm,
                b=WinProbVector(tuple(arr.tolist())),
                has_tie=bool(tie_mask[idx]),
                component_size=int(counts[idx]),
                attractiveness=float(counts[idx] / total),
                node_index=int(idx),
            )
        )
    return PermutationGraph(
        cfg=cfg,
        n_items=n,
        node_count=total,
        edge_targets=edges,
        terminal=terminal,
        fixed_points=tuple(fixed_points),
    )


def build_component_graph(
    cfg: MarketConfig, seeds: Iterable[Permutation]
) -> PermutationGraph:
    """Partial graph: only the forward B-orbits of the given seed orderings.

    Attractiveness is not defined on a partial graph, so fixed points carry
    their in-scope component sizes but attractiveness NaN.
    """
    validate_config(cfg)
    n = cfg.n_items
    index: dict[tuple[int, ...], int] = {}
    perms: list[tuple[int, ...]] = []
    targets: list[int] = []
    ties: list[bool] = []

    def node_id(order: tuple[int, ...]) -> int:
        if order not in index:
            index[order] = len(perms)
            perms.append(order)
            targets.append(-1)
            ties.append(False)
        return index[order]

    frontier = [node_id(p.order) for p in seeds]
    while frontier:
        i = frontier.pop()
        if targets[i] >= 0:
            continue
        perm = Permutation(perms[i])
        result = _bmap_from_array(perm, win_probs_array_for_config(perm, cfg))
        j = node_id(result.output_perm.order)
        targets[i] = j
        ties[i] = result.has_tie
        if targets[j] < 0:
            frontier.append(j)

    edges = np.asarray(targets, dtype=np.int64)
    terminal = _terminals(edges)
    counts = np.bincount(terminal, minlength=len(perms))
    fixed_points = []
    for idx in np.flatnonzero(edges == np.arange(len(perms))):
        perm = Permutation(perms[int(idx)])
        arr = win_probs_array_for_config(perm, cfg)
        fixed_points.append(
            FixedPointInfo(
                perm=perm,
                b=WinProbVector(tuple(arr.tolist())),
                has_tie=ties[int(idx)],
                component_size=int(counts[idx]),
                attractiveness=float("nan"),
                node_index=int(idx),
            )
        )
    return PermutationGraph(
        cfg=cfg,
        n_items=n,
        node_count=len(perms),
        edge_targets=edges,
        terminal=terminal,
        fixed_points=tuple(fixed_points),
        scope="component",
        node_perms=tuple(perms),
    )


def attractiveness(graph: PermutationGraph, perm: Permutation) -> float:
    """Share of all orderings whose B-iteration ends at this fixed point."""
    for f in graph.fixed_points:
        if f.perm.order == perm.order:
            return f.attractiveness
    raise ConfigError(f"{perm.order} is not a fixed point of this graph")


def export_edge_list(graph: PermutationGraph, stream) -> None:
    """Write one 'from to' pair per line, orderings as comma-joined ids."""
    for i in range(graph.node_count):
        src = graph.perm_at(i).order
        dst = graph.perm_at(int(graph.edge_targets[i])).order
        stream.write(
            ",".join(map(str, src)) + " " + ",".join(map(str, dst)) + "\n"
        )


# ---------------------------------------------------------------------------
# stable-point enumeration
# ---------------------------------------------------------------------------


def _stable_points_from_candidates(
    cfg: MarketConfig, candidates: Iterable[tuple[int, ...]], max_enum=None
) -> list[StablePoint]:
    found = []
    for order in candidates:
        perm = Permutation(order)
        result = _bmap_from_array(
            perm, win_probs_array_for_config(perm, cfg, max_enum)
        )
        if result.output_perm.order == order and not result.has_tie:
            found.append(StablePoint(perm=perm, b=result.b))
    found.sort(key=lambda p: p.perm.order)
    return found


def _pruned_candidates(n: int, m: int):
    """Orderings that keep the bottom n-m-1 items in natural positions."""
    head = tuple(range(1, n - m))
    for tail in itertools.permutations(range(n - m, n + 1)):
        yield head + tail


def enumerate_stable_points(
    cfg: MarketConfig,
    strategy: str = "exhaustive",
    m: int | None = None,
    trials: int = 1000,
    seed: int = 0,
    n_cap: int = EXHAUSTIVE_CAP,
    max_enum: int | None = None,
) -> StablePointSet:
    """Find stable orderings.

    strategy='exhaustive' tests all N! orderings (N <= n_cap) and is exact.
    strategy='pruned' tests orderings that rearrange only the top M+1
    items; with m=None, M grows from 2 until a whole level finds nothing
    new, the stopping rule under which the result is reported as exact.
    strategy='randomized' reports only the points discovered by seeded
    B-iteration from random starting weights.
    """
    validate_config(cfg)
    n = cfg.n_items
    if strategy == "exhaustive":
        if n > n_cap:
            raise ConfigError(f"exhaustive enumeration needs N <= {n_cap}")
        if _supports_vectorized(cfg) and n > 7:
            return _exhaustive_vectorized(cfg)
        points = _stable_points_from_candidates(
            cfg, itertools.permutations(range(1, n + 1)), max_enum
        )
        return StablePointSet(tuple(points), strategy="exhaustive", exact=True)
    if strategy == "pruned":
        if m is not None:
            points = _stable_points_from_candidates(
                cfg, _pruned_candidates(n, min(m, n - 1)), max_enum
            )
            return StablePointSet(
                tuple(points), strategy=f"pruned({m})", exact=False
            )
        level = 2
        prev = _stable_points_from_candidates(
            cfg, _pruned_candidates(n, min(2, n - 1)), max_enum
        )
        while level < n - 1:
            level += 1
            cur = _stable_points_from_candidates(
                cfg, _pruned_candidates(n, level), max_enum
            )
            if [p.perm.order for p in cur] == [p.perm.order for p in prev]:
                return StablePointSet(
                    tuple(cur), strategy=f"pruned(adaptive,M={level})", exact=True
                )
            prev = cur
        return StablePointSet(
            tuple(prev), strategy="pruned(adaptive,exhausted)", exact=True
        )
    if strategy == "randomized":
        return randomized_search(cfg, trials=trials, seed=seed, max_enum=max_enum)
    raise ConfigError(f"unknown strategy {strategy!r}")


def _exhaustive_vectorized(cfg: MarketConfig) -> StablePointSet:
    n = cfg.n_items
    points = []
    perm_iter = itertools.permutations(range(1, n + 1))
    while True:
        block = list(itertools.islice(perm_iter, 200_000))
        if not block:
            break
        orders = np.array(block, dtype=np.int64)
        b = _vectorized_b_for_orders(orders, cfg)
        out_orders = _rank_rows_with_tiebreak(b)
        fixed = (out_orders == orders).all(axis=1)
        no_tie = ~(np.diff(np.sort(b, axis=1), axis=1) <= TIE_TOL).any(axis=1)
        for row in np.flatnonzero(fixed & no_tie):
            points.append(
                StablePoint(
                    perm=Permutation(tuple(int(x) for x in orders[row])),
                    b=WinProbVector(tuple(b[row].tolist())),
                )
            )
    points.sort(key=lambda p: p.perm.order)
    return StablePointSet(tuple(points), strategy="exhaustive", exact=True)


def randomized_search(
    cfg: MarketConfig,
    trials: int,
    seed: int,
    max_iter: int | None = None,
    max_enum: int | None = None,
) -> StablePointSet:
    """Seeded random-restart B-iteration.

    Each trial draws a random positive stochastic weight vector from its
    own substream, iterates B until the induced ordering repeats, and
    keeps the endpoint if its probabilities are tie-free.  Fixed points
    with ties are rejected; trials hitting the iteration cap are counted
    as non-converged.  Deterministic for a given seed.
    """
    validate_config(cfg)
    if trials < 1:
        raise ConfigError("trials must be at least 1")
    n = cfg.n_items
    limit = max_iter or DEFAULT_MAX_ITER_FACTOR * n * n
    memo: dict[tuple[int, ...], BMapResult] = {}

    def step(perm: Permutation) -> BMapResult:
        cached = memo.get(perm.order)
        if cached is None:
            cached = _bmap_from_array(
                perm, win_probs_array_for_config(perm, cfg, max_enum)
            )
            memo[perm.order] = cached
        return cached

    found: dict[tuple[int, ...], StablePoint] = {}
    hits: dict[tuple[int, ...], int] = {}
    non_converged = 0
    tie_rejections = 0
    for t in range(trials):
        rng = np.random.Generator(
            np.random.Philox(np.random.SeedSequence(entropy=seed, spawn_key=(t,)))
        )
        w = rng.random(n) + 1e-12
        w /= w.sum()
        perm = rank_with_tiebreak(w)
        for _ in range(limit):
            result = step(perm)
            if result.output_perm.order == perm.order:
                if result.has_tie:
                    tie_rejections += 1
                else:
                    if perm.order not in found:
                        found[perm.order] = StablePoint(perm=perm, b=result.b)
                    hits[perm.order] = hits.get(perm.order, 0) + 1
                break
            perm = result.output_perm
        else:
            non_converged += 1

    ordered = sorted(found.values(), key=lambda p: p.perm.order)
    return StablePointSet(
        points=tuple(ordered),
        strategy="randomized",
        exact=False,
        trials=trials,
        basin_hits=tuple(hits[p.perm.order] for p in ordered),
        non_converged=non_converged,
        tie_rejections=tie_rejections,
    )
