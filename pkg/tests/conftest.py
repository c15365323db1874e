"""Shared fixtures and random-instance builders for the test suite."""
from __future__ import annotations

import math
import random

from blockmatch.model import BOUNDARY, Edge, MatchingGraph


def random_instance(rng: random.Random, max_nodes: int = 30, max_events: int = 14):
    """A connected random weighted graph with boundary edges, plus events.

    Weights are uniform in [0.1, 10], so exact ties are vanishingly rare.
    Every node can reach a boundary edge, which keeps odd parities solvable.
    """
    n = rng.randint(2, max_nodes)
    nodes = list(range(n))
    rng.shuffle(nodes)
    edges: list[Edge] = []
    seen: set[tuple[int, int]] = set()

    def add(u: int, v: int) -> None:
        key = (u, BOUNDARY) if v == BOUNDARY else (min(u, v), max(u, v))
        if key in seen:
            return
        seen.add(key)
        w = rng.uniform(0.1, 10.0)
        obs = rng.getrandbits(2)
        edges.append(Edge(len(edges), key[0], key[1], 0.1, w, obs))

    for i in range(1, n):
        add(nodes[i], nodes[rng.randrange(i)])
    for _ in range(rng.randint(0, 2 * n)):
        u, v = rng.sample(range(n), 2) if n > 1 else (0, 0)
        if u != v:
            add(u, v)
    for _ in range(rng.randint(1, max(1, n // 4))):
        add(rng.randrange(n), BOUNDARY)

    k = rng.randint(0, min(max_events, n))
    events = sorted(rng.sample(range(n), k))
    graph = MatchingGraph(num_nodes=n, num_observables=2, edges=edges)
    return graph, events


def chain_model(cycles: int, p: float = 0.1):
    """Single-detector-per-cycle model with only time-like edges.

    Has no graph-boundary edges at all, so every lone event must lean on a
    block cut; handy for forcing heralds.
    """
    from blockmatch.model import ErrorMechanism, NoiseModel, Part

    mechs = [
        ErrorMechanism(p, (Part((t, t + 1)),)) for t in range(cycles - 1)
    ]
    return NoiseModel(
        detectors_per_cycle=1,
        num_observables=0,
        mechanisms=mechs,
        period=1,
        prologue_cycles=0,
        epilogue_cycles=1,
    )


def weight_for(p: float) -> float:
    return math.log((1.0 - p) / p)
