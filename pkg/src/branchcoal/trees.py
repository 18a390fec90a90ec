"""Planar Galton-Watson trees encoded by their depth-first Lukasiewicz walk.

A tree visited in depth-first order gives the walk ``W_{n+1} = W_n + xi_n - 1``
(``xi_n`` children of the n-th vertex), started at 0 and killed at -1.  Heights
are recovered from the walk by counting the records of its future minimum,
which a stack computes in amortised linear time.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from .errors import HorizonError, ParameterError, RejectionBudgetExceeded
from .offspring import IteratedPgfTable, OffspringDistribution, iterate_pgf

DEFAULT_MAX_STEPS = 10_000_000


class _OffspringStream:
    """Serve single offspring draws out of vectorised blocks."""

    def __init__(self, dist: OffspringDistribution, rng: np.random.Generator, block: int = 64):
        self.dist, self.rng, self.block = dist, rng, block
        self._buf: list[int] = []
        self._pos = 0

    def __call__(self) -> int:
        if self._pos == len(self._buf):
            self._buf = self.dist.sample(self.rng, self.block).tolist()
            self.block = min(2 * self.block, 1 << 16)
            self._pos = 0
        self._pos += 1
        return self._buf[self._pos - 1]


@dataclass(frozen=True, eq=False)
class LukasiewiczWalk:
    """Depth-first walk of a planar tree.

    ``values[n]`` is ``W_n`` for each visited vertex; a killed walk ends with
    the value -1.  ``truncated`` marks a walk cut by the step budget and
    ``stopped`` one deliberately halted at its first visit of ``height_cap``
    (or of a requested height).  ``height_cap`` records that vertices at that
    depth were given no children.
    """

    values: np.ndarray
    truncated: bool = False
    stopped: bool = False
    height_cap: Optional[int] = None

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=np.int64)
        if vals.size == 0 or vals[0] != 0:
            raise ParameterError("a walk starts at 0")
        steps = np.diff(vals)
        if np.any(steps < -1):
            raise ParameterError("walk increments must be at least -1")
        neg = np.nonzero(vals < 0)[0]
        if neg.size and (neg[0] != vals.size - 1 or vals[-1] != -1):
            raise ParameterError("the first visit of -1 must end the walk")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def killed(self) -> bool:
        return bool(self.values[-1] == -1)

    @property
    def n_vertices(self) -> int:
        """Number of visited vertices."""
        return self.values.size - 1 if self.killed else self.values.size

    @property
    def visit_count(self) -> int:
        return self.n_vertices

    def offspring_counts(self) -> np.ndarray:
        """Children of each vertex whose count is determined by the walk."""
        return np.diff(self.values) + 1


@dataclass(frozen=True, eq=False)
class HeightSequence:
    heights: np.ndarray

    def __len__(self) -> int:
        return self.heights.size

    def __getitem__(self, n):
        return self.heights[n]


@dataclass(frozen=True)
class SpineDecomposition:
    """Siblings of the ancestors of the first vertex at height ``h``.

    ``record_times[k]`` is ``t_k`` (``t_0 = sigma``).  ``alpha[k-1]`` and
    ``rho[k-1]`` count the older and younger siblings of the ancestor ``k``
    generations above that vertex, so the pairs are indexed k = 1..h.
    """

    h: int
    sigma: int
    record_times: tuple[int, ...]
    alpha: tuple[int, ...]
    rho: tuple[int, ...]

    @property
    def pairs(self) -> tuple[tuple[int, int], ...]:
        return tuple(zip(self.alpha, self.rho))

    @property
    def jumps(self) -> tuple[int, ...]:
        return tuple(a + r for a, r in zip(self.alpha, self.rho))


@dataclass(frozen=True, eq=False)
class ForestCoalescentSample:
    """Branch lengths of a standing population built from conditioned trees.

    ``values[i]`` is ``min(A_{i+1}, h)`` and ``censored[i]`` flags
    ``A_{i+1} > h``, which happens exactly between consecutive trees.
    """

    h: int
    n_standing: int
    values: np.ndarray
    censored: np.ndarray
    n_trees: int = 0
    n_rejected: int = 0

    def extended(self) -> list:
        """Branch lengths with censored entries mapped to ``inf``."""
        return [math.inf if c else int(v) for v, c in zip(self.values, self.censored)]


# -- walks -------------------------------------------------------------------------

def sample_walk(dist: OffspringDistribution, rng: np.random.Generator,
                max_steps: int = DEFAULT_MAX_STEPS, max_height: Optional[int] = None,
                stop_height: Optional[int] = None, _stream=None) -> LukasiewiczWalk:
    """Simulate the walk of one tree until it hits -1 or ``max_steps`` vertices.

    With ``max_height`` the tree is cut at that generation (those vertices
    get no children).  With ``stop_height`` the walk halts at the first visit
    of that height.
    """
    if max_steps < 1:
        raise ParameterError("max_steps must be at least 1")
    draw = _stream or _OffspringStream(dist, rng)
    track = max_height is not None or stop_height is not None
    vals = [0]
    stack: list[int] = []
    w = 0
    truncated = stopped = False
    n = 0
    while True:
        if track:
            while stack and vals[stack[-1]] > w:
                stack.pop()
            h_n = len(stack)
            stack.append(n)
            if stop_height is not None and h_n == stop_height:
                stopped = True
                break
            xi = 0 if (max_height is not None and h_n >= max_height) else draw()
        else:
            xi = draw()
        w += xi - 1
        vals.append(w)
        n += 1
        if w < 0:
            break
        if n >= max_steps:
            truncated = True
            break
    return LukasiewiczWalk(np.array(vals, dtype=np.int64), truncated, stopped, max_height)


def heights(walk: LukasiewiczWalk) -> HeightSequence:
    """Generation of every visited vertex, via records of the future minimum."""
    vals = walk.values[: walk.n_vertices].tolist()
    out = np.empty(len(vals), dtype=np.int64)
    stack: list[int] = []
    for n, w in enumerate(vals):
        while stack and vals[stack[-1]] > w:
            stack.pop()
        out[n] = len(stack)
        stack.append(n)
    out.setflags(write=False)
    return HeightSequence(out)


def first_survivor_time(hs: HeightSequence, h: int) -> Optional[int]:
    """First visit index at height ``h``, or ``None`` if the tree never reaches it."""
    if h < 1:
        raise ParameterError("h must be at least 1")
    idx = np.nonzero(hs.heights == h)[0]
    return int(idx[0]) if idx.size else None


def sample_conditioned_walk(dist: OffspringDistribution, h: int, rng: np.random.Generator,
                            max_tries: int = 1_000_000, cut: bool = True,
                            max_steps: int = DEFAULT_MAX_STEPS,
                            table: Optional[IteratedPgfTable] = None,
                            spine_threshold: float = 1e-3, _stream=None) -> LukasiewiczWalk:
    """Walk of a tree conditioned to have vertices at generation ``h``.

    Plain rejection by default.  The tree is cut at generation ``h`` when
    ``cut`` is true (this does not affect the event conditioned on); otherwise
    the walk is stopped at its first visit of height ``h``.  When a pgf table
    is supplied and ``p_h`` is below ``spine_threshold`` the spine-first
    construction is used instead of rejection.
    """
    if h < 1:
        raise ParameterError("h must be at least 1")
    if table is not None and table.n_max >= h and table.survival[h] < spine_threshold:
        tree = sample_spine_tree(dist, table, h, rng, _stream=_stream)
        walk = tree.walk(height_cap=h)
        return walk if cut else _stop_at_height(walk, h)
    stream = _stream or _OffspringStream(dist, rng)
    for _ in range(max_tries):
        if cut:
            walk = sample_walk(dist, rng, max_steps, max_height=h, _stream=stream)
            if walk.truncated:
                continue
            if first_survivor_time(heights(walk), h) is not None:
                return walk
        else:
            walk = sample_walk(dist, rng, max_steps, stop_height=h, _stream=stream)
            if walk.stopped:
                return walk
    raise RejectionBudgetExceeded(
        f"no tree reached height {h} in {max_tries} attempts; use sample_spine_tree")


def _stop_at_height(walk: LukasiewiczWalk, h: int) -> LukasiewiczWalk:
    sigma = first_survivor_time(heights(walk), h)
    return LukasiewiczWalk(walk.values[: sigma + 1], stopped=True, height_cap=walk.height_cap)


def _future_minimum(vals: np.ndarray) -> np.ndarray:
    return np.minimum.accumulate(vals[::-1])[::-1]


def spine_decomposition(walk: LukasiewiczWalk, h: int) -> SpineDecomposition:
    """Older/younger sibling counts along the ancestry of the first height-``h`` vertex."""
    sigma = first_survivor_time(heights(walk), h)
    if sigma is None:
        raise HorizonError(f"walk does not reach height {h}")
    w = walk.values[: sigma + 1]
    inf = _future_minimum(w)
    records = np.nonzero(w == inf)[0][::-1]
    times = tuple(int(t) for t in records[: h + 1])
    if len(times) != h + 1 or times[0] != sigma:
        raise HorizonError("record structure inconsistent with the height count")
    alpha, rho = [], []
    for k in range(1, h + 1):
        tk, tprev = times[k], times[k - 1]
        alpha.append(int(w[tk + 1] - w[tprev]))
        rho.append(int(w[tprev] - w[tk]))
    return SpineDecomposition(h, sigma, times, tuple(alpha), tuple(rho))


def great_aunt_functional(walk: LukasiewiczWalk, h: int,
                          f: Union[Callable[[int], float], Mapping[int, float]]):
    """Sum over visits before the first height-``h`` vertex of the future-minimum
    increments weighted by ``f(h - height)``.
    """
    if isinstance(f, Mapping):
        bad = [k for k, v in f.items() if v and not 1 <= k <= h]
        if bad:
            raise ParameterError(f"f is supported outside 1..{h}: {bad}")
        weights = {k: f.get(k, 0) for k in range(1, h + 1)}
        fn = weights.__getitem__
    else:
        fn = f
    hs = heights(walk)
    sigma = first_survivor_time(hs, h)
    if sigma is None:
        raise HorizonError(f"walk does not reach height {h}")
    inf = _future_minimum(walk.values[: sigma + 1]).tolist()
    hts = hs.heights.tolist()
    total = 0
    for j in range(sigma):
        d = inf[j + 1] - inf[j]
        if d:
            total += d * fn(h - hts[j])
    return total


# -- explicit trees ------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PlanarTree:
    """Planar rooted tree stored as child counts in depth-first order."""

    counts: tuple[int, ...]

    def __post_init__(self) -> None:
        c = tuple(int(x) for x in self.counts)
        if not c or any(x < 0 for x in c):
            raise ParameterError("child counts must be nonnegative and nonempty")
        if sum(c) != len(c) - 1:
            raise ParameterError("child counts do not describe a finite tree")
        object.__setattr__(self, "counts", c)

    @classmethod
    def from_nested(cls, nested) -> "PlanarTree":
        """Build from nested lists where a vertex is the list of its children."""
        counts: list[int] = []
        stack = [nested]
        while stack:
            node = stack.pop()
            counts.append(len(node))
            stack.extend(reversed(node))
        return cls(tuple(counts))

    @classmethod
    def from_walk(cls, walk: LukasiewiczWalk) -> "PlanarTree":
        if not walk.killed:
            raise ParameterError("only complete (killed) walks encode a whole tree")
        return cls(tuple(walk.offspring_counts().tolist()))

    @property
    def size(self) -> int:
        return len(self.counts)

    def _structure(self):
        parent = [-1] * self.size
        depth = [0] * self.size
        stack: list[list[int]] = []
        for v, c in enumerate(self.counts):
            if v:
                while stack[-1][1] == 0:
                    stack.pop()
                p = stack[-1][0]
                stack[-1][1] -= 1
                parent[v] = p
                depth[v] = depth[p] + 1
            stack.append([v, c])
        return parent, depth

    @property
    def parents(self) -> list[int]:
        return self._structure()[0]

    @property
    def depths(self) -> list[int]:
        return self._structure()[1]

    def children(self) -> list[list[int]]:
        kids: list[list[int]] = [[] for _ in range(self.size)]
        for v, p in enumerate(self.parents):
            if p >= 0:
                kids[p].append(v)
        return kids

    def labels(self) -> list[tuple[int, ...]]:
        """Ulam-Harris words (root is the empty word, children numbered from 1)."""
        kids = self.children()
        lab: list[tuple[int, ...]] = [()] * self.size
        for v in range(self.size):
            for i, c in enumerate(kids[v], start=1):
                lab[c] = lab[v] + (i,)
        return lab

    def walk(self, height_cap: Optional[int] = None) -> LukasiewiczWalk:
        vals = np.concatenate(([0], np.cumsum(np.asarray(self.counts) - 1)))
        return LukasiewiczWalk(vals, height_cap=height_cap)

    def to_nested(self):
        kids = self.children()
        nodes = [[] for _ in range(self.size)]
        for v in range(self.size - 1, -1, -1):
            nodes[v] = [nodes[c] for c in kids[v]]
        return nodes[0]

    def newick(self) -> str:
        """Bracket form: a leaf is empty, an internal vertex is ``(c1,...,ck)``."""
        kids = self.children()
        text = [""] * self.size
        for v in range(self.size - 1, -1, -1):
            if kids[v]:
                text[v] = "(" + ",".join(text[c] for c in kids[v]) + ")"
        return text[0] + ";"

    def generation_size(self, h: int) -> int:
        return sum(1 for d in self.depths if d == h)


def tree_from_newick(text: str) -> PlanarTree:
    """Inverse of :meth:`PlanarTree.newick`."""
    text = text.strip().rstrip(";")
    root: list = []
    stack = [root]
    pending_leaf = True
    for ch in text:
        if ch == "(":
            node: list = []
            stack[-1].append(node)
            stack.append(node)
            pending_leaf = True
        elif ch == ",":
            if pending_leaf:
                stack[-1].append([])
            pending_leaf = True
        elif ch == ")":
            if pending_leaf:
                stack[-1].append([])
            stack.pop()
            pending_leaf = False
        elif not ch.isspace():
            raise ParameterError(f"unexpected character {ch!r} in bracket form")
    if not root:
        return PlanarTree((0,))
    return PlanarTree.from_nested(root[0])


def standing_ancestry(tree: PlanarTree, h: int):
    """Branch lengths and offshoot counts of the vertices at depth ``h``.

    Returns ``(A, D)`` where ``A[i]`` is the coalescence level of standing
    vertices ``i`` and ``i + 1`` (``inf`` after the last one) and ``D[i]`` maps
    each level ``n = 1..h`` to the number of younger children of the level-n
    ancestor of ``i`` that have descendants at depth ``h``.
    """
    parent, depth = tree._structure()
    kids = tree.children()
    alive = [False] * tree.size
    for v in range(tree.size - 1, -1, -1):
        alive[v] = depth[v] == h or any(alive[c] for c in kids[v])
    standing = [v for v in range(tree.size) if depth[v] == h]
    A: list = []
    D: list[dict[int, int]] = []
    for i, v in enumerate(standing):
        counts = {}
        child, anc = v, parent[v]
        for n in range(1, h + 1):
            sibs = kids[anc]
            pos = sibs.index(child)
            counts[n] = sum(1 for c in sibs[pos + 1:] if alive[c])
            child, anc = anc, parent[anc]
        D.append(counts)
        nxt = next((n for n in range(1, h + 1) if counts[n]), None)
        A.append(nxt if nxt is not None else math.inf)
    return A, D


# -- spine-first construction --------------------------------------------------------

def spine_pair_pmf(dist: OffspringDistribution, table: IteratedPgfTable, n: int,
                   j: int, k: int, form: str = "normalized") -> float:
    """Probability that the level-n ancestor has ``j`` older and ``k`` younger siblings.

    ``form="normalized"`` gives ``P(xi = j+k+1) (1-p_{n-1})^j p_{n-1} / p_n``;
    ``form="alternative"`` evaluates ``P(xi = k+1) (p_{n-1}/p_n) (1-p_{n-1})^j``
    restricted to ``k >= j``.  It also sums to one but is not the law of the
    pair; it is kept only for comparison.
    """
    table.check_level(n)
    if n < 1:
        raise ParameterError("spine levels start at 1")
    if j < 0 or k < 0:
        return 0.0
    p_prev, p_n = float(table.survival[n - 1]), float(table.survival[n])
    if form == "normalized":
        return float(dist.pmf(j + k + 1)) * (1.0 - p_prev) ** j * p_prev / p_n
    if form == "alternative":
        if k < j:
            return 0.0
        return float(dist.pmf(k + 1)) * (p_prev / p_n) * (1.0 - p_prev) ** j
    raise ParameterError(f"unknown form {form!r}")


def sample_spine_pair(dist: OffspringDistribution, table: IteratedPgfTable, n: int,
                      rng: np.random.Generator) -> tuple[int, int]:
    """Exact draw of (older, younger) sibling counts at spine level ``n``."""
    p = float(table.survival[n - 1])
    p_n = float(table.survival[n])
    u = rng.random() * p_n
    cum, m, last = 0.0, 0, 0
    q = 1.0 - p
    while cum < u:
        m += 1
        term = float(dist.pmf(m)) * (-math.expm1(m * math.log1p(-p)) if p < 1 else 1.0)
        cum += term
        if term > 0:
            last = m
        elif m > last + 1000 and m > dist.max_offspring:
            m = last  # rounding left u just above the summed mass
            break
        if m > 10_000_000:
            raise HorizonError("offspring law tail too heavy for spine sampling")
    if p >= 1.0:
        return 0, m - 1
    # position of the first surviving child among m, a truncated geometric
    top = -math.expm1(m * math.log1p(-p))
    j = int(math.floor(math.log1p(-rng.random() * top) / math.log(q)))
    j = min(max(j, 0), m - 1)
    return j, m - 1 - j


def _subtree_counts(draw, depth0: int, cap: int, fail_at_cap: bool):
    """DFS child counts of a subtree rooted at ``depth0`` and cut at ``cap``.

    Returns ``None`` when ``fail_at_cap`` is set and the subtree reaches ``cap``.
    """
    counts: list[int] = []
    stack = [depth0]
    while stack:
        d = stack.pop()
        if d >= cap:
            if fail_at_cap:
                return None
            counts.append(0)
            continue
        c = draw()
        counts.append(c)
        stack.extend([d + 1] * c)
    return counts


def sample_spine_tree(dist: OffspringDistribution, table: IteratedPgfTable, h: int,
                      rng: np.random.Generator, max_tries: int = 1_000_000,
                      _stream=None) -> PlanarTree:
    """Tree conditioned to reach generation ``h``, cut there, built spine first.

    Along the ancestry of the first vertex at generation ``h``, each ancestor
    gets independent (older, younger) sibling counts; older siblings carry
    subtrees conditioned to die out before generation ``h`` and younger ones
    carry free subtrees.
    """
    if h < 1:
        raise ParameterError("h must be at least 1")
    table.check_level(h)
    if table.survival[h] <= 0:
        raise ParameterError(f"generation {h} is unreachable")
    draw = _stream or _OffspringStream(dist, rng)
    counts: list[int] = []
    # walk down from the root; the vertex at depth h - n sits on spine level n
    pending_younger: list[tuple[int, int]] = []  # (depth, number) appended after the spine
    for n in range(h, 0, -1):
        j, k = sample_spine_pair(dist, table, n, rng)
        depth = h - n + 1
        counts.append(j + k + 1)
        for _ in range(j):
            for _ in range(max_tries):
                sub = _subtree_counts(draw, depth, h, fail_at_cap=True)
                if sub is not None:
                    break
            else:
                raise RejectionBudgetExceeded("older sibling subtree kept reaching the horizon")
            counts.extend(sub)
        pending_younger.append((depth, k))
    counts.append(0)
    # younger subtrees close in reverse order: deepest ancestor first
    for depth, k in reversed(pending_younger):
        for _ in range(k):
            counts.extend(_subtree_counts(draw, depth, h, fail_at_cap=False))
    return PlanarTree(tuple(counts))


# -- standing population -------------------------------------------------------------

def _tree_branch_lengths(walk: LukasiewiczWalk, h: int) -> list[int]:
    hts = heights(walk).heights.tolist()
    out: list[int] = []
    last = None
    running = h
    for n, x in enumerate(hts):
        if last is not None:
            running = min(running, x)
        if x == h:
            if last is not None:
                out.append(h - running + 1)
            last, running = n, h
    return out


def forest_coalescent(dist: OffspringDistribution, h: int, n_individuals: int,
                      rng: np.random.Generator, table: Optional[IteratedPgfTable] = None,
                      max_tries: int = 1_000_000, _stream=None) -> ForestCoalescentSample:
    """Branch lengths ``min(A_i, h)`` of the first ``n_individuals`` standing individuals.

    Independent trees conditioned to reach generation ``h`` are laid left to
    right; within a tree the coalescence level of consecutive standing
    vertices is one plus ``h`` minus the lowest height visited between them.
    """
    if n_individuals < 2:
        raise ParameterError("need at least two individuals")
    need = n_individuals - 1
    vals: list[int] = []
    cens: list[bool] = []
    n_trees = 0
    stream = _stream or _OffspringStream(dist, rng)
    while len(vals) < need:
        walk = sample_conditioned_walk(dist, h, rng, max_tries=max_tries, table=table,
                                       _stream=stream)
        n_trees += 1
        within = _tree_branch_lengths(walk, h)
        vals.extend(within)
        cens.extend([False] * len(within))
        vals.append(h)
        cens.append(True)
    return ForestCoalescentSample(h, n_individuals, np.array(vals[:need], dtype=np.int64),
                                  np.array(cens[:need], dtype=bool), n_trees)


def first_pair_samples(dist: OffspringDistribution, h: int, n_samples: int,
                       rng: np.random.Generator, n_values: int = 2) -> np.ndarray:
    """``n_samples`` independent rows of ``(min(A_1, h), ..., min(A_k, h))``.

    A censored branch length is reported as ``h + 1``.
    """
    out = np.empty((n_samples, n_values), dtype=np.int64)
    stream = _OffspringStream(dist, rng)
    for r in range(n_samples):
        fc = forest_coalescent(dist, h, n_values + 1, rng, _stream=stream)
        out[r] = np.where(fc.censored, h + 1, fc.values)
    return out


# -- export ------------------------------------------------------------------------

def write_walk_csv(walk: LukasiewiczWalk, path) -> None:
    hs = heights(walk).heights
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["visit", "W", "H"])
        for n in range(walk.values.size):
            wr.writerow([n, int(walk.values[n]), int(hs[n]) if n < hs.size else ""])
