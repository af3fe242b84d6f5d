"""Static scratch-arena planning: liveness analysis plus greedy placement.

Every non-constant tensor gets a byte offset in one shared arena so peak
activation memory is known before anything executes. Liveness is
measured on an event axis: event 0 is graph entry (inputs appear), and
the layer at topological position k executes at event k+1, where its
inputs are still live and its output comes alive. Graph outputs stay
live through the final event. Constants live in ROM and are excluded.

Optimal packing is NP-hard, so placement is greedy; a single greedy pass
can land noticeably off optimal on some lifetime patterns, so the
planner runs a small fixed portfolio of deterministic greedy strategies
(decreasing-size and execution-order sweeps with best-fit and
lowest-offset placement, plus an alternating two-level layout for
path-shaped conflict graphs, the common chain case) and keeps the
smallest peak. Offsets are aligned to 16 bytes. All strategies are pure
functions of the interval set, so plans are reproducible everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import RegolithError
from .model import ModelGraph, validate

ALIGNMENT = 16


class ArenaError(RegolithError):
    pass


@dataclass(frozen=True)
class LivenessInterval:
    """Tensor lifetime on the event axis, inclusive on both ends."""

    tensor: int
    first: int
    last: int
    size: int


@dataclass(frozen=True)
class ArenaPlan:
    offsets: dict[int, int]
    peak_bytes: int
    intervals: tuple[LivenessInterval, ...]


def _align_up(value: int, alignment: int) -> int:
    return -(-value // alignment) * alignment


def liveness(g: ModelGraph) -> list[LivenessInterval]:
    """One interval per non-constant tensor, in tensor id order."""
    if g.topo_order is None:
        validate(g)
    position = {layer_index: k + 1 for k, layer_index in enumerate(g.topo_order)}
    horizon = len(g.layers)

    first: dict[int, int] = {}
    last: dict[int, int] = {}
    for tid in g.inputs:
        first[tid] = 0
        last[tid] = 0
    for i, layer in enumerate(g.layers):
        event = position[i]
        first.setdefault(layer.output, event)
        last[layer.output] = max(last.get(layer.output, event), event)
        for tid in layer.inputs:
            if g.tensors[tid].is_constant:
                continue
            last[tid] = max(last.get(tid, event), event)
    for tid in g.outputs:
        last[tid] = max(last.get(tid, 0), horizon)

    return [
        LivenessInterval(tid, first[tid], last[tid], g.tensors[tid].nbytes)
        for tid in sorted(first)
    ]


def _overlaps(a: LivenessInterval, b: LivenessInterval) -> bool:
    return a.first <= b.last and b.first <= a.last


def _greedy_sweep(
    intervals: list[LivenessInterval], order, fit: str, alignment: int
) -> dict[int, int]:
    """One greedy pass: place tensors in ``order`` into conflict-free offsets.

    ``best`` fit takes the tightest aligned gap among time-overlapping
    placed tensors; ``first`` fit takes the lowest aligned offset that
    fits. Both fall back to just past the highest conflicting byte.
    """
    placed: list[tuple[LivenessInterval, int]] = []
    offsets: dict[int, int] = {}
    for interval in order:
        busy = sorted(
            (off, off + other.size)
            for other, off in placed
            if _overlaps(interval, other)
        )
        best = None  # (gap capacity, offset)
        cursor = 0
        for lo, hi in busy:
            if lo > cursor:
                start = _align_up(cursor, alignment)
                capacity = lo - start
                if capacity >= interval.size:
                    if fit == "first":
                        best = (capacity, start)
                        break
                    if best is None or capacity < best[0]:
                        best = (capacity, start)
            cursor = max(cursor, hi)
        offset = best[1] if best else _align_up(cursor, alignment)
        offsets[interval.tensor] = offset
        placed.append((interval, offset))
    return offsets


def _path_components(intervals: list[LivenessInterval]):
    """Connected components of the conflict graph, or None if any is not a path."""
    n = len(intervals)
    adj: list[list[int]] = [[] for _ in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            if _overlaps(intervals[i], intervals[j]):
                adj[i].append(j)
                adj[j].append(i)
    if any(len(a) > 2 for a in adj):
        return None
    seen = [False] * n
    components = []
    for start in range(n):
        if seen[start]:
            continue
        # walk to one end of the path (or detect a cycle)
        node, previous = start, -1
        steps = 0
        while True:
            following = [k for k in adj[node] if k != previous]
            if not following:
                break
            previous, node = node, following[0]
            steps += 1
            if steps > n:
                return None  # cycle
        # traverse the path from that endpoint
        component = []
        previous = -1
        while node != -1:
            component.append(node)
            seen[node] = True
            following = [k for k in adj[node] if k != previous and not seen[k]]
            previous, node = node, (following[0] if following else -1)
        components.append(component)
    return components


def _parity_offsets(
    intervals: list[LivenessInterval], alignment: int
) -> dict[int, int] | None:
    """Two-level layout for path-shaped conflict graphs.

    Along each path, alternate tensors sit at offset 0 and the others
    just above their tallest neighbor; both parities are tried per
    component and the shorter one kept. None when the conflict graph is
    not a union of paths.
    """
    components = _path_components(intervals)
    if components is None:
        return None
    offsets: dict[int, int] = {}
    for component in components:
        best = None
        for parity in (0, 1):
            local: dict[int, int] = {}
            peak = 0
            for pos, index in enumerate(component):
                iv = intervals[index]
                if pos % 2 == parity:
                    offset = 0
                else:
                    tallest = max(
                        (intervals[component[k]].size
                         for k in (pos - 1, pos + 1)
                         if 0 <= k < len(component)),
                        default=0,
                    )
                    offset = _align_up(tallest, alignment)
                local[iv.tensor] = offset
                peak = max(peak, offset + iv.size)
            if best is None or peak < best[0]:
                best = (peak, local)
        offsets.update(best[1])
    return offsets


def place_intervals(
    intervals: list[LivenessInterval], alignment: int = ALIGNMENT
) -> dict[int, int]:
    """Deterministic greedy offsets for a set of liveness intervals.

    Runs the strategy portfolio and returns the placement with the
    smallest peak (ties broken toward the earlier strategy).
    """
    intervals = list(intervals)
    orders = [
        sorted(intervals, key=lambda iv: (-iv.size, iv.tensor)),
        sorted(intervals, key=lambda iv: (iv.first, -iv.size, iv.tensor)),
        sorted(intervals, key=lambda iv: (-(iv.last - iv.first + 1) * iv.size, iv.tensor)),
        sorted(intervals, key=lambda iv: (-iv.last, -iv.size, iv.tensor)),
    ]
    # tensors alive at the highest-pressure event first: stacking that
    # clique tightly lets everything else pack around it
    events = sorted({iv.first for iv in intervals} | {iv.last for iv in intervals})
    if events:
        peak_event = max(
            events,
            key=lambda e: sum(iv.size for iv in intervals if iv.first <= e <= iv.last),
        )
        hot = lambda iv: iv.first <= peak_event <= iv.last  # noqa: E731
        orders.append(
            sorted(intervals, key=lambda iv: (not hot(iv), -iv.size, iv.tensor))
        )
    candidates = [
        _greedy_sweep(intervals, order, fit, alignment)
        for order in orders
        for fit in ("best", "first")
    ]
    parity = _parity_offsets(intervals, alignment)
    if parity is not None:
        candidates.append(parity)

    def peak_of(offsets: dict[int, int]) -> int:
        return max((offsets[iv.tensor] + iv.size for iv in intervals), default=0)

    best = min(candidates, key=peak_of)
    return best


def plan_arena(g: ModelGraph, alignment: int = ALIGNMENT) -> ArenaPlan:
    """Compute a valid, deterministic arena plan for a graph."""
    intervals = liveness(g)
    offsets = place_intervals(intervals, alignment)
    peak = max((offsets[iv.tensor] + iv.size for iv in intervals), default=0)
    return ArenaPlan(offsets, peak, tuple(intervals))


def check_plan(plan: ArenaPlan) -> None:
    """Raise ArenaError if any two live-overlapping tensors share bytes."""
    intervals = plan.intervals
    for i, a in enumerate(intervals):
        for b in intervals[i + 1 :]:
            if not _overlaps(a, b):
                continue
            a0, a1 = plan.offsets[a.tensor], plan.offsets[a.tensor] + a.size
            b0, b1 = plan.offsets[b.tensor], plan.offsets[b.tensor] + b.size
            if a0 < b1 and b0 < a1:
                raise ArenaError(
                    f"tensors {a.tensor} and {b.tensor} overlap in time and in bytes "
                    f"([{a0}, {a1}) vs [{b0}, {b1}))"
                )


def concurrent_peak(intervals: list[LivenessInterval]) -> int:
    """Sum-of-live-sizes lower bound on any plan's peak."""
    events = {iv.first for iv in intervals} | {iv.last for iv in intervals}
    return max(
        (
            sum(iv.size for iv in intervals if iv.first <= e <= iv.last)
            for e in events
        ),
        default=0,
    )


def plan_table(plan: ArenaPlan) -> str:
    """Human-readable placement dump: one row per tensor."""
    lines = ["tensor  offset    size      live"]
    for iv in plan.intervals:
        lines.append(
            f"{iv.tensor:>6}  {plan.offsets[iv.tensor]:>8}  {iv.size:>8}  "
            f"[{iv.first}, {iv.last}]"
        )
    lines.append(f"peak bytes: {plan.peak_bytes}")
    return "\n".join(lines)
