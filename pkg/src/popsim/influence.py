"""Causal-influence tracking over recorded or live interaction sequences.

For an execution with schedule entries g_0, g_1, ..., the influencer set of
agent v after t steps is the set of agents whose initial state could have
affected v's state by then.  It starts as {v} and, whenever v participates in
an interaction, becomes the union of the two participants' sets.

Indexing convention used throughout this module: entry j of a log is the
interaction applied between tracker steps j and j+1.  So a table at step t
has absorbed exactly entries 0..t-1, and the layered graph puts entry j's
cross edges between layers j and j+1.

Three independent routes compute the same sets and are cross-checked by the
test suite:

* forward, incremental union during a run (:class:`InfluencerTable`);
* backward, one queried column at a time (:func:`backward_sets`): the set at
  layer i is the layer-(i+1) set, plus both participants of entry i whenever
  that entry touches the layer-(i+1) set;
* explicit layered-graph reachability (:func:`build_graph`).

Sets are represented as arbitrary-precision integers used as bit vectors
(bit u set means agent u belongs), so a union is one word-parallel ``|`` and
a size is one ``bit_count()``.  Memory is n*n/8 bytes per table; tables are
capped at n <= 2**17, which keeps exactness instead of trading it for scale.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Union

from .core import Interaction, Protocol, TrialRecord, run_trial

MAX_TRACKED_AGENTS = 1 << 17

INFLUENCER_EVENT = "influencer_threshold"

# Six-interaction worked example over five agents (0..4, letters A..E in the
# docs).  Replaying it leaves agent 0 with influencers {0, 2, 3, 4} and
# backward set sizes 1,1,2,2,2,3,4 from layer 6 down to layer 0; several
# regression tests and the CLI demo are pinned to it.
DEMO_SCHEDULE_N5: tuple[Interaction, ...] = (
    Interaction(4, 2),
    Interaction(2, 3),
    Interaction(1, 4),
    Interaction(1, 2),
    Interaction(0, 3),
    Interaction(1, 2),
)


@dataclass
class InteractionLog:
    """A recorded schedule: entry j is the j-th interaction of the run."""

    n: int
    entries: list[Interaction] = field(default_factory=list)

    def append(self, e: Interaction) -> None:
        if not (0 <= e.initiator < self.n and 0 <= e.responder < self.n):
            raise ValueError(f"interaction {e} out of range for n={self.n}")
        if e.initiator == e.responder:
            raise ValueError("initiator and responder must be distinct")
        self.entries.append(e)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, j: int) -> Interaction:
        return self.entries[j]

    def save(self, path: Union[str, Path]) -> None:
        """Write the log as text: first line is the decimal population size,
        then one ``initiator<SP>responder`` line per entry, LF-terminated."""
        lines = [str(self.n)]
        lines.extend(f"{e.initiator} {e.responder}" for e in self.entries)
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "InteractionLog":
        text = Path(path).read_text()
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise ValueError(f"{path}: empty interaction log")
        try:
            n = int(lines[0])
        except ValueError:
            raise ValueError(f"{path}: first line must be the population size") from None
        log = cls(n)
        for ln in lines[1:]:
            parts = ln.split()
            if len(parts) != 2:
                raise ValueError(f"{path}: malformed entry {ln!r}")
            log.append(Interaction(int(parts[0]), int(parts[1])))
        return log


def demo_log() -> InteractionLog:
    return InteractionLog(5, list(DEMO_SCHEDULE_N5))


class InfluencerTable:
    """Forward influencer sets for every agent, updated incrementally.

    Invariants: agent v always belongs to its own set, and each set only ever
    grows (an update replaces the two participants' sets by their union).
    """

    __slots__ = ("n", "step", "masks")

    def __init__(self, n: int):
        if n < 1:
            raise ValueError("population size must be >= 1")
        if n > MAX_TRACKED_AGENTS:
            raise ValueError(f"influencer tracking is capped at n <= {MAX_TRACKED_AGENTS}")
        self.n = n
        self.step = 0
        self.masks: list[int] = [1 << v for v in range(n)]

    def update(self, e: Interaction) -> None:
        """Absorb the next log entry; both participants get the merged set."""
        masks = self.masks
        merged = masks[e.initiator] | masks[e.responder]
        masks[e.initiator] = merged
        masks[e.responder] = merged
        self.step += 1

    def size(self, v: int) -> int:
        return self.masks[v].bit_count()

    def members(self, v: int) -> frozenset[int]:
        mask = self.masks[v]
        return frozenset(u for u in range(self.n) if (mask >> u) & 1)

    def max_size(self) -> int:
        return max(m.bit_count() for m in self.masks)


def forward_sets(log: InteractionLog, t: Optional[int] = None) -> InfluencerTable:
    """Replay the first ``t`` entries of a log (all of them by default)."""
    if t is None:
        t = len(log)
    if not 0 <= t <= len(log):
        raise ValueError(f"step {t} exceeds log length {len(log)}")
    table = InfluencerTable(log.n)
    for j in range(t):
        table.update(log[j])
    return table


def backward_step(members: frozenset[int], e: Interaction) -> frozenset[int]:
    """One layer of the backward recurrence (from layer i+1 to layer i,
    where ``e`` is log entry i)."""
    if e.initiator in members or e.responder in members:
        return members | {e.initiator, e.responder}
    return members


def backward_sets(log: InteractionLog, v: int, t: int) -> list[frozenset[int]]:
    """Backward influence sets of ``(v, t)``, from layer t down to layer 0.

    Element k of the result is the layer-(t-k) set: the agents at that layer
    from which ``(v, t)`` is reachable in the layered graph.  The last
    element (layer 0) equals the forward influencer set of v after t steps.
    Only the queried column is materialized.
    """
    if not 0 <= v < log.n:
        raise ValueError(f"agent {v} out of range for n={log.n}")
    if not 0 <= t <= len(log):
        raise ValueError(f"step {t} exceeds log length {len(log)}")
    current = frozenset([v])
    layers = [current]
    for i in range(t - 1, -1, -1):
        current = backward_step(current, log[i])
        layers.append(current)
    return layers


@dataclass
class LayeredGraph:
    """Explicit layered digraph over nodes ``(agent, layer)``, layers 0..depth.

    Every node except those at the top layer has a vertical edge to the same
    agent one layer up; log entry i additionally contributes the two cross
    edges between its participants at layers i and i+1.
    """

    n: int
    depth: int
    edges: list[tuple[tuple[int, int], tuple[int, int]]]

    def num_nodes(self) -> int:
        return self.n * (self.depth + 1)

    def out_degree(self, node: tuple[int, int]) -> int:
        return sum(1 for src, _ in self.edges if src == node)

    def sources_reaching(self, v: int) -> frozenset[int]:
        """Layer-0 agents from which ``(v, depth)`` is reachable.

        Walks the stored edges backwards; deliberately independent of the
        union recurrences above so the two routes can be checked against
        each other.
        """
        if not 0 <= v < self.n:
            raise ValueError(f"agent {v} out of range for n={self.n}")
        incoming: dict[tuple[int, int], list[tuple[int, int]]] = {}
        for src, dst in self.edges:
            incoming.setdefault(dst, []).append(src)
        target = (v, self.depth)
        seen = {target}
        frontier = [target]
        while frontier:
            node = frontier.pop()
            for src in incoming.get(node, ()):
                if src not in seen:
                    seen.add(src)
                    frontier.append(src)
        return frozenset(u for (u, layer) in seen if layer == 0)

    def to_edge_text(self) -> str:
        """One ``u,i -> w,j`` line per edge, in construction order."""
        return "\n".join(
            f"{src[0]},{src[1]} -> {dst[0]},{dst[1]}" for src, dst in self.edges
        )

    def to_dot(self) -> str:
        """Graphviz rendering of the layered graph."""
        lines = ["digraph influence {", "  rankdir=BT;"]
        for layer in range(self.depth + 1):
            same = " ".join(f'"{u},{layer}"' for u in range(self.n))
            lines.append(f"  {{ rank=same; {same} }}")
        for src, dst in self.edges:
            lines.append(f'  "{src[0]},{src[1]}" -> "{dst[0]},{dst[1]}";')
        lines.append("}")
        return "\n".join(lines)


def build_graph(log: InteractionLog, t: int) -> LayeredGraph:
    """Materialize the layered graph for the first ``t`` entries of a log."""
    if not 0 <= t <= len(log):
        raise ValueError(f"step {t} exceeds log length {len(log)}")
    edges: list[tuple[tuple[int, int], tuple[int, int]]] = []
    for i in range(t):
        for u in range(log.n):
            edges.append(((u, i), (u, i + 1)))
        e = log[i]
        edges.append(((e.initiator, i), (e.responder, i + 1)))
        edges.append(((e.responder, i), (e.initiator, i + 1)))
    return LayeredGraph(n=log.n, depth=t, edges=edges)


class ScheduleRecorder:
    """Observer that records the interaction sequence of a run."""

    def __init__(self, n: int):
        self.log = InteractionLog(n)

    def notify(self, trial, e: Interaction, old, new) -> None:
        self.log.entries.append(e)


class InfluencerObserver:
    """Observer that maintains an :class:`InfluencerTable` during a run.

    With a ``threshold``, records the first step at which a tracked agent's
    set size strictly exceeds it.  Only the two participants' sets change at
    a step, and they share the merged set, so one popcount per step decides
    the crossing.  ``agent`` restricts the crossing check to one fixed agent
    (the whole table is still maintained).  ``track_series`` accumulates
    ``(step, max_size, participant_size)`` rows for CSV export.
    """

    def __init__(
        self,
        n: int,
        threshold: Optional[float] = None,
        agent: Optional[int] = None,
        track_series: bool = False,
    ):
        if threshold is not None and threshold < 1:
            raise ValueError("threshold must be >= 1")
        if agent is not None and not 0 <= agent < n:
            raise ValueError(f"agent {agent} out of range for n={n}")
        self.table = InfluencerTable(n)
        self.threshold = threshold
        self.agent = agent
        self.first_exceed_step: Optional[int] = None
        self.series: Optional[list[tuple[int, int, int]]] = [] if track_series else None
        self._running_max = 1

    def notify(self, trial, e: Interaction, old, new) -> None:
        table = self.table
        table.update(e)
        merged_size = table.masks[e.initiator].bit_count()
        if merged_size > self._running_max:
            self._running_max = merged_size
        if (
            self.threshold is not None
            and self.first_exceed_step is None
            and merged_size > self.threshold
            and (self.agent is None or self.agent in (e.initiator, e.responder))
        ):
            self.first_exceed_step = table.step
        if self.series is not None:
            self.series.append((table.step, self._running_max, merged_size))

    def events(self) -> dict[str, Optional[int]]:
        return {INFLUENCER_EVENT: self.first_exceed_step}


def first_exceed_time(
    protocol: Protocol,
    n: int,
    seed: int,
    threshold: float,
    *,
    max_steps: Optional[int] = None,
    agent: Optional[int] = None,
    extra_observers: Iterable = (),
) -> TrialRecord:
    """Run a trial until some influencer set size strictly exceeds ``threshold``.

    The crossing step lands in ``event_steps["influencer_threshold"]``; a
    missing key with ``truncated=True`` means the step budget ran out first
    (a legitimate outcome, not an error).  ``agent`` switches from
    first-crossing-by-anyone to first crossing by that one agent.
    """
    obs = InfluencerObserver(n, threshold=threshold, agent=agent)
    observers = [obs, *extra_observers]
    return run_trial(
        protocol,
        n,
        seed,
        max_steps=max_steps,
        stop=lambda trial: obs.first_exceed_step is not None,
        observers=observers,
    )


def write_size_series(observer: InfluencerObserver, path: Union[str, Path]) -> None:
    """Dump a tracked size time series as CSV (step, max_size, participant_size).

    The two participants of a step share the merged set, so one column covers
    both of their sizes.
    """
    if observer.series is None:
        raise ValueError("observer was not created with track_series=True")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "max_size", "participant_size"])
        writer.writerows(observer.series)
