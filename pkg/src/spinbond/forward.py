"""Forward dynamics: spins copy neighbors through signed, refreshing edges.

Each site carries a sign and wakes at rate 1; on waking it picks a neighbor
from the adoption kernel and adopts that neighbor's sign multiplied by the
sign of the connecting edge. Each edge independently resamples its sign at
rate ``v``, choosing +1 with probability ``p``. The joint process is
simulated event by event with one exponential clock per site and per edge.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graphs import AdoptionKernel, Graph
from .rng import as_generator


@dataclass(frozen=True)
class ModelParams:
    """Edge dynamics parameters.

    Parameters
    ----------
    p : float
        Probability that a refreshed edge takes sign +1. Values 0 and 1 are
        legal for the dynamics but make the chain non-ergodic.
    v : float
        Refresh rate per edge; 0 freezes the edge configuration.
    """

    p: float
    v: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"p must lie in [0, 1], got {self.p}")
        if self.v < 0.0:
            raise ValueError(f"v must be >= 0, got {self.v}")


@dataclass
class SpinBondState:
    """Joint configuration: one sign per site and one per edge, all +-1."""

    site_signs: np.ndarray
    edge_signs: np.ndarray

    def copy(self) -> "SpinBondState":
        return SpinBondState(self.site_signs.copy(), self.edge_signs.copy())

    def validate(self, g: Graph) -> None:
        if self.site_signs.shape != (g.vertex_count,):
            raise ValueError(
                f"site_signs has shape {self.site_signs.shape}, graph has {g.vertex_count} vertices"
            )
        if self.edge_signs.shape != (g.edge_count,):
            raise ValueError(
                f"edge_signs has shape {self.edge_signs.shape}, graph has {g.edge_count} edges"
            )
        for arr, label in ((self.site_signs, "site"), (self.edge_signs, "edge")):
            bad = np.nonzero(np.abs(arr) != 1)[0]
            if bad.size:
                raise ValueError(f"{label} signs must be +-1, found {arr[bad[0]]} at index {bad[0]}")

    @staticmethod
    def constant(g: Graph, site_sign: int = 1, edge_sign: int = 1) -> "SpinBondState":
        return SpinBondState(
            site_signs=np.full(g.vertex_count, site_sign, dtype=np.int8),
            edge_signs=np.full(g.edge_count, edge_sign, dtype=np.int8),
        )


def sample_product_state(
    g: Graph,
    rng,
    site_plus_prob: float = 0.5,
    edge_plus_prob: float = 0.5,
) -> SpinBondState:
    """Draw sites and edges independently, +1 with the given probabilities."""
    gen = as_generator(rng)
    sites = np.where(gen.random(g.vertex_count) < site_plus_prob, 1, -1).astype(np.int8)
    edges = np.where(gen.random(g.edge_count) < edge_plus_prob, 1, -1).astype(np.int8)
    return SpinBondState(sites, edges)


def adoption_update(state: SpinBondState, x: int, y: int, g: Graph) -> None:
    """Site x adopts the sign of neighbor y times the sign of edge {x, y}."""
    e = g.edge_id(x, y)
    state.site_signs[x] = state.site_signs[y] * state.edge_signs[e]


def edge_flip_rate(edge_sign: int, params: ModelParams) -> float:
    """Rate at which an edge with the given sign changes to the other sign.

    The simulator redraws each edge at rate v, landing on +1 with
    probability p, so actual sign changes occur at rate v*p from -1 and
    v*(1-p) from +1.
    """
    if edge_sign not in (-1, 1):
        raise ValueError(f"edge sign must be +-1, got {edge_sign}")
    return params.v * params.p if edge_sign == -1 else params.v * (1.0 - params.p)


class NeighborSampler:
    """Cached cumulative-weight tables for drawing neighbors from a kernel.

    Rows are short (one entry per neighbor), so a linear scan beats binary
    search here; this sits on the hot path of every simulation event.
    """

    def __init__(self, g: Graph, kernel: AdoptionKernel) -> None:
        self.neighbors: list[tuple[int, ...]] = []
        self.cumulative: list[tuple[float, ...]] = []
        for x in range(g.vertex_count):
            row = kernel.rows[x]
            total = 0.0
            cum = []
            for _, q in row:
                total += q
                cum.append(total)
            self.neighbors.append(tuple(y for y, _ in row))
            self.cumulative.append(tuple(cum))

    def draw(self, x: int, gen: np.random.Generator) -> int:
        cum = self.cumulative[x]
        u = gen.random() * cum[-1]
        for i, threshold in enumerate(cum):
            if u < threshold:
                return self.neighbors[x][i]
        return self.neighbors[x][-1]


@dataclass
class ForwardTrajectory:
    final_state: SpinBondState
    elapsed: float
    event_count: int
    edge_flip_counts: np.ndarray
    checkpoint_rows: list[tuple[float, str, float]]


def simulate_forward(
    g: Graph,
    kernel: AdoptionKernel | NeighborSampler,
    params: ModelParams,
    initial: SpinBondState,
    t_max: float,
    rng,
    checkpoint_times=(),
    observables=(),
    record_events: list | None = None,
) -> ForwardTrajectory:
    """Run the joint spin-bond process on [0, t_max] from a copy of ``initial``.

    ``observables`` are cylinder events evaluated at each checkpoint time;
    rows come back as (time, observable label, 0.0 or 1.0). ``record_events``
    collects ("site", t, x, y, old, new) and ("edge", t, e, old, new) tuples
    when a list is supplied.

    Clocks are per-object exponentials kept in a priority queue; entries are
    ordered by (time, channel, index) so simultaneous floats resolve by
    object index and reruns with the same generator state are reproducible.
    """
    gen = as_generator(rng)
    sampler = kernel if isinstance(kernel, NeighborSampler) else NeighborSampler(g, kernel)
    state = initial.copy()
    state.validate(g)
    if t_max < 0:
        raise ValueError(f"t_max must be >= 0, got {t_max}")

    checkpoints = sorted(checkpoint_times)
    if checkpoints and checkpoints[-1] > t_max:
        raise ValueError(f"checkpoint {checkpoints[-1]} lies beyond t_max={t_max}")
    rows: list[tuple[float, str, float]] = []
    next_cp = 0

    def flush_checkpoints(up_to: float) -> None:
        nonlocal next_cp
        while next_cp < len(checkpoints) and checkpoints[next_cp] <= up_to:
            tc = checkpoints[next_cp]
            for obs in observables:
                hit = obs.matches(state.site_signs, state.edge_signs)
                rows.append((tc, obs.label(), 1.0 if hit else 0.0))
            next_cp += 1

    n, m = g.vertex_count, g.edge_count
    heap: list[tuple[float, int, int]] = []
    for x in range(n):
        heap.append((gen.exponential(1.0), 0, x))
    if params.v > 0.0:
        scale = 1.0 / params.v
        for e in range(m):
            heap.append((gen.exponential(scale), 1, e))
    heapq.heapify(heap)

    flip_counts = np.zeros(m, dtype=np.int64)
    events = 0
    while heap:
        t_event, channel, idx = heap[0]
        if t_event > t_max:
            break
        heapq.heappop(heap)
        flush_checkpoints(t_event)
        events += 1
        if channel == 0:
            x = idx
            y = sampler.draw(x, gen)
            old = int(state.site_signs[x])
            adoption_update(state, x, y, g)
            if record_events is not None:
                record_events.append(("site", t_event, x, y, old, int(state.site_signs[x])))
            heapq.heappush(heap, (t_event + gen.exponential(1.0), 0, x))
        else:
            e = idx
            old = int(state.edge_signs[e])
            new = 1 if gen.random() < params.p else -1
            state.edge_signs[e] = new
            if new != old:
                flip_counts[e] += 1
            if record_events is not None:
                record_events.append(("edge", t_event, e, old, new))
            heapq.heappush(heap, (t_event + gen.exponential(1.0 / params.v), 1, e))

    flush_checkpoints(t_max)
    return ForwardTrajectory(
        final_state=state,
        elapsed=t_max,
        event_count=events,
        edge_flip_counts=flip_counts,
        checkpoint_rows=rows,
    )


def _signs_to_text(arr: np.ndarray) -> str:
    return "".join("+" if s > 0 else "-" for s in arr)


def _signs_from_text(text: str, count: int, label: str) -> np.ndarray:
    if len(text) != count:
        raise ValueError(f"{label} line has {len(text)} signs, expected {count}")
    out = np.empty(count, dtype=np.int8)
    for i, ch in enumerate(text):
        if ch == "+":
            out[i] = 1
        elif ch == "-":
            out[i] = -1
        else:
            raise ValueError(f"{label} line contains {ch!r}, expected '+' or '-'")
    return out


def write_state_file(state: SpinBondState, path) -> None:
    """Two-line text format: site signs then edge signs, as '+'/'-' strings."""
    Path(path).write_text(
        _signs_to_text(state.site_signs) + "\n" + _signs_to_text(state.edge_signs) + "\n"
    )


def read_state_file(g: Graph, path) -> SpinBondState:
    lines = [
        ln.strip()
        for ln in Path(path).read_text().splitlines()
        if ln.strip() and not ln.strip().startswith("#")
    ]
    if len(lines) != 2:
        raise ValueError(f"state file {path} must hold exactly two sign lines, found {len(lines)}")
    return SpinBondState(
        site_signs=_signs_from_text(lines[0], g.vertex_count, "site"),
        edge_signs=_signs_from_text(lines[1], g.edge_count, "edge"),
    )
