"""Two interchangeable tree engines: vectorized BFS and streaming DFS.

Both engines draw every increment through the node-addressed generator, so
for a fixed (seed, replicate) they build the *same* tree bit for bit; the
BFS engine materializes whole generations (memory 2^n), the DFS engine
keeps one root-to-leaf path alive (memory n).  Conditioned runs confine the
increment of every vertex at generation n-k to band k, matching the
lower-bound tilting event; extensions beyond the conditioning horizon are
always free.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _kernels, _rng
from .errors import BudgetExceeded, DomainError
from .model import Band, ModelParams, band, band_mass

#: BFS materializes generations up to here (128 MiB of positions); beyond,
#: callers should stream with the DFS engine.
BFS_MAX_GENERATION = 24


@dataclass(frozen=True)
class BandSchedule:
    """Band-conditioning of the first `n` generations.

    Vertex depth d in 1..n draws from band(n-d): the tightest band sits at
    the final conditioned generation.  Construction precomputes the CDF
    endpoints of every band once, shared by both engines.
    """

    params: ModelParams
    n: int
    bands: tuple[Band, ...] = field(init=False)
    cdf_lo: tuple[float, ...] = field(init=False)
    cdf_hi: tuple[float, ...] = field(init=False)

    def __post_init__(self):
        if self.n < 1:
            raise DomainError("conditioning horizon must be >= 1")
        bands = tuple(band(k, self.params) for k in range(self.n))
        masses = [band_mass(b) for b in bands]
        object.__setattr__(self, "bands", bands)
        object.__setattr__(self, "cdf_lo", tuple(m[0] for m in masses))
        object.__setattr__(self, "cdf_hi", tuple(m[1] for m in masses))

    def band_for_depth(self, depth: int) -> Optional[Band]:
        if 1 <= depth <= self.n:
            return self.bands[self.n - depth]
        return None


@dataclass(frozen=True)
class SimSpec:
    """One realization request: parameters, horizon, stream, conditioning."""

    params: ModelParams
    n: int
    x: float = 0.0
    seed: int = 0
    replicate: int = 0
    conditioning: Optional[BandSchedule] = None

    def __post_init__(self):
        if not 0 <= self.n <= _rng.MAX_DEPTH:
            raise DomainError(f"generation must lie in [0, {_rng.MAX_DEPTH}]")
        if self.conditioning is not None and self.conditioning.n > self.n:
            raise DomainError("conditioning horizon exceeds the run horizon")


@dataclass(frozen=True)
class Generation:
    """Positions x + S_u of one generation, heap order (2^n entries)."""

    n: int
    positions: np.ndarray

    def __post_init__(self):
        if self.positions.shape != (1 << self.n,):
            raise DomainError("generation must hold exactly 2^n positions")


class LeafVisitor:
    """Streaming accumulator for the DFS engine.

    on_node fires for every vertex (root included, depth 0..n); on_leaf
    additionally fires at depth n.  Visitors whose results are insensitive
    to subtree order may implement spawn()/combine() to opt into parallel
    subtree traversal; results must then be independent of the thread count.
    """

    def on_node(self, depth: int, position: float) -> None:
        pass

    def on_leaf(self, position: float) -> None:
        pass

    def final(self):
        return None

    def spawn(self) -> "LeafVisitor":
        raise NotImplementedError

    def combine(self, other: "LeafVisitor") -> None:
        raise NotImplementedError


class LeafCollector(LeafVisitor):
    """Collects the leaf positions in left-to-right order."""

    def __init__(self):
        self.leaves: list[float] = []

    def on_leaf(self, position: float) -> None:
        self.leaves.append(position)

    def final(self) -> np.ndarray:
        return np.asarray(self.leaves)

    def spawn(self) -> "LeafCollector":
        return LeafCollector()

    def combine(self, other: "LeafCollector") -> None:
        self.leaves.extend(other.leaves)


class LeafCounter(LeafVisitor):
    def __init__(self):
        self.count = 0

    def on_leaf(self, position: float) -> None:
        self.count += 1

    def final(self) -> int:
        return self.count

    def spawn(self) -> "LeafCounter":
        return LeafCounter()

    def combine(self, other: "LeafCounter") -> None:
        self.count += other.count


def _schedule_arrays(spec: SimSpec, depth: int):
    """Per-depth truncation tables for the kernels (index = vertex depth)."""
    trunc = np.zeros(depth + 1, dtype=np.uint8)
    lo = np.zeros(depth + 1)
    hi = np.zeros(depth + 1)
    flo = np.zeros(depth + 1)
    fhi = np.zeros(depth + 1)
    sched = spec.conditioning
    if sched is not None:
        for d in range(1, min(sched.n, depth) + 1):
            b = sched.bands[sched.n - d]
            trunc[d] = 1
            lo[d] = b.lo
            hi[d] = b.hi
            flo[d] = sched.cdf_lo[sched.n - d]
            fhi[d] = sched.cdf_hi[sched.n - d]
    return trunc, lo, hi, flo, fhi


def _seed_u64(spec: SimSpec) -> np.uint64:
    return np.uint64(spec.seed & _rng.MASK64)


def _rep_u64(spec: SimSpec) -> np.uint64:
    return np.uint64(spec.replicate & _rng.MASK64)


def _bfs_step(spec: SimSpec, parent: np.ndarray, depth: int,
              trunc, lo, hi, flo, fhi) -> np.ndarray:
    size = 1 << depth
    idx = np.arange(size, 2 * size, dtype=np.int64)
    xi = np.empty(size)
    if depth < trunc.shape[0] and trunc[depth]:
        _kernels.draw_batch_truncated(
            _seed_u64(spec), _rep_u64(spec), idx,
            lo[depth], hi[depth], flo[depth], fhi[depth], xi,
        )
    else:
        _kernels.draw_batch(_seed_u64(spec), _rep_u64(spec), idx, xi)
    return np.repeat(parent, 2) + xi


def run_bfs(spec: SimSpec, max_generation: int = BFS_MAX_GENERATION) -> list[Generation]:
    """Materialize generations 0..n; raises BudgetExceeded past the budget."""
    if spec.n > max_generation:
        raise BudgetExceeded(
            f"BFS at n={spec.n} exceeds the {max_generation}-generation budget; "
            "use the DFS engine"
        )
    trunc, lo, hi, flo, fhi = _schedule_arrays(spec, spec.n)
    gens = [Generation(0, np.array([spec.x]))]
    pos = gens[0].positions
    for d in range(1, spec.n + 1):
        pos = _bfs_step(spec, pos, d, trunc, lo, hi, flo, fhi)
        gens.append(Generation(d, pos))
    return gens


def extend(spec: SimSpec, base: Generation, extra: int,
           max_generation: int = BFS_MAX_GENERATION) -> Generation:
    """Grow a generation by `extra` free steps under the same stream.

    Children of heap node i are 2i and 2i+1, so extension draws are the
    ones any engine would use past the base generation; conditioning never
    applies here.  extend(extend(g, a), b) == extend(g, a+b) bit for bit.
    """
    if extra < 0:
        raise DomainError("extension length must be >= 0")
    if base.n + extra > max_generation:
        raise BudgetExceeded(
            f"extension to n={base.n + extra} exceeds the budget"
        )
    pos = base.positions
    for d in range(base.n + 1, base.n + extra + 1):
        size = 1 << d
        idx = np.arange(size, 2 * size, dtype=np.int64)
        xi = np.empty(size)
        _kernels.draw_batch(_seed_u64(spec), _rep_u64(spec), idx, xi)
        pos = np.repeat(pos, 2) + xi
    return Generation(base.n + extra, pos)


def _draw_python(spec: SimSpec, idx: int, depth: int, sched_tables) -> float:
    trunc, lo, hi, flo, fhi = sched_tables
    seed = spec.seed & _rng.MASK64
    rep = spec.replicate & _rng.MASK64
    if depth < len(trunc) and trunc[depth]:
        return _rng.truncated_node_gaussian(
            seed, rep, idx, lo[depth], hi[depth], flo[depth], fhi[depth]
        )
    return _rng.node_gaussian(seed, rep, idx)


def _walk_subtree(spec: SimSpec, visitors, root_idx: int, root_depth: int,
                  root_pos: float, sched_tables) -> None:
    """Preorder walk below (and including) one subtree root."""
    n = spec.n
    stack = [(root_idx, root_depth, root_pos)]
    while stack:
        idx, depth, pos = stack.pop()
        for v in visitors:
            v.on_node(depth, pos)
        if depth == n:
            for v in visitors:
                v.on_leaf(pos)
            continue
        d = depth + 1
        left = 2 * idx
        lpos = pos + _draw_python(spec, left, d, sched_tables)
        rpos = pos + _draw_python(spec, left + 1, d, sched_tables)
        # push right first so the left child is visited first
        stack.append((left + 1, d, rpos))
        stack.append((left, d, lpos))


def run_dfs(spec: SimSpec, visitors: Sequence[LeafVisitor], threads: int = 1) -> list:
    """Stream the tree through the visitors; memory O(n) plus accumulators.

    With threads > 1 and visitors that implement spawn/combine, disjoint
    depth-3 subtrees run on a worker pool and partial results merge in
    fixed left-to-right order, so outputs never depend on the schedule.
    """
    sched_tables = _schedule_arrays(spec, spec.n)
    parallel = threads > 1 and spec.n >= 4
    if parallel:
        try:
            [v.spawn() for v in visitors]
        except NotImplementedError:
            parallel = False
    if not parallel:
        _walk_subtree(spec, visitors, 1, 0, spec.x, sched_tables)
        return [v.final() for v in visitors]

    split = 3
    # visit the prefix (depths 0..split-1) sequentially, collecting the cut
    prefix: list[tuple[int, float]] = [(1, spec.x)]
    for v in visitors:
        v.on_node(0, spec.x)
    cut = prefix
    for d in range(1, split + 1):
        nxt = []
        for idx, pos in cut:
            left = 2 * idx
            lpos = pos + _draw_python(spec, left, d, sched_tables)
            rpos = pos + _draw_python(spec, left + 1, d, sched_tables)
            nxt.append((left, lpos))
            nxt.append((left + 1, rpos))
        if d < split:
            for _, pos in nxt:
                for v in visitors:
                    v.on_node(d, pos)
        cut = nxt

    def job(args):
        idx, pos = args
        subs = [v.spawn() for v in visitors]
        _walk_subtree(spec, subs, idx, split, pos, sched_tables)
        return subs

    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(job, cut))
    for subs in parts:  # fixed left-to-right combination order
        for v, s in zip(visitors, subs):
            v.combine(s)
    return [v.final() for v in visitors]


def dfs_leaf_positions(spec: SimSpec) -> np.ndarray:
    """Leaf positions in left-to-right order via the compiled DFS kernel."""
    trunc, lo, hi, flo, fhi = _schedule_arrays(spec, spec.n)
    out = np.empty(1 << spec.n)
    _kernels.dfs_leaves(
        _seed_u64(spec), _rep_u64(spec), spec.n, spec.x,
        trunc, lo, hi, flo, fhi, out,
    )
    return out


def dump_generations(path, gens: Sequence[Generation], replicate: int) -> None:
    """Raw-generation CSV dump: (replicate, generation, heap_index, position)."""
    from .io_utils import format_float, atomic_writer

    with atomic_writer(path) as fh:
        fh.write("replicate,generation,heap_index,position\n")
        for g in gens:
            base = 1 << g.n
            for i, p in enumerate(g.positions):
                fh.write(f"{replicate},{g.n},{base + i},{format_float(p)}\n")
