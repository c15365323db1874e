"""Exact minimum-weight matching of detection events on a graph region.

Events can match one another, the graph boundary, or (in block-scoped
decoding) an open block boundary.  The solver derives a metric from
shortest paths, prunes pairs that can never beat matching both events to
their cheapest sink, splits the survivors into connected components, and
solves each component exactly.  Components of up to 16 events go through a
bitmask DP with a lexicographic tie-break; anything larger falls back to a
general blossom matcher.

Fusion re-solves the union of two adjacent results.  Records whose
endpoints leave the fused window are frozen as-is; a frozen record that
still points at a block boundary after all fuses is what the caller reports
as a heralded error.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import bellman_ford, dijkstra

from .model import BOUNDARY, MatchingGraph, NoiseModel

GRAPH_BOUNDARY = ("graph",)
BLOCK_LEADING = ("block", "leading")
BLOCK_TRAILING = ("block", "trailing")

# Components above this size leave the DP and use the blossom fallback,
# where the lexicographic tie-break is not guaranteed.
_DP_LIMIT = 16

# All-source distance tables are cached for regions up to this many nodes.
_STATIC_TABLE_LIMIT = 4096

_NO_PRED = -9999


class EngineError(RuntimeError):
    """Contract violation inside the matching engine."""


def target_ordinal(target) -> tuple:
    if target[0] == "event":
        return (0, target[1])
    if target == GRAPH_BOUNDARY:
        return (1, 0)
    if target == BLOCK_LEADING:
        return (2, 0)
    if target == BLOCK_TRAILING:
        return (3, 0)
    raise EngineError(f"unknown target {target!r}")


@dataclass(frozen=True)
class MatchRecord:
    """One matched event: its target, realized path weight and observables."""

    event: int
    target: tuple
    weight: float
    observables: int

    @property
    def is_pair(self) -> bool:
        return self.target[0] == "event"

    @property
    def is_block_boundary(self) -> bool:
        return self.target[0] == "block"

    def endpoints(self):
        if self.is_pair:
            return (self.event, self.target[1])
        return (self.event,)


@dataclass
class Matching:
    records: list[MatchRecord]
    total_weight: float
    observable_mask: int

    @property
    def pairs(self) -> list[tuple[int, tuple]]:
        return [(r.event, r.target) for r in self.records]


def combine_records(records) -> Matching:
    total = 0.0
    mask = 0
    recs = sorted(records, key=lambda r: (r.event, target_ordinal(r.target)))
    for r in recs:
        total += r.weight
        mask ^= r.observables
    return Matching(recs, total, mask)


# ---------------------------------------------------------------------------
# Graph regions


@dataclass
class GraphRegion:
    """A contiguous slab of the matching graph in region-local coordinates.

    ``edge_v == -1`` marks a graph-boundary edge.  ``lead_nodes`` and
    ``trail_nodes`` are the in-region endpoints of edges that cross the
    leading/trailing cut; reaching them reaches the block boundary for free.
    """

    n_local: int
    edge_u: np.ndarray
    edge_v: np.ndarray
    base_p: np.ndarray
    base_w: np.ndarray
    obs: list[int]
    lead_nodes: list[int]
    trail_nodes: list[int]
    correlations: dict[int, list[tuple[int, float]]]
    kind: tuple = ("anon",)

    _by_endpoints: dict[tuple[int, int], int] = field(default_factory=dict, repr=False)
    _adjacency: list[list[tuple[int, int]]] | None = field(default=None, repr=False)
    _clean_csr: csr_matrix | None = field(default=None, repr=False)
    _edge_map: dict[tuple[int, int], tuple[int, int]] | None = field(default=None, repr=False)
    _static: tuple[np.ndarray, np.ndarray] | None = field(default=None, repr=False)

    def __post_init__(self):
        if not self._by_endpoints:
            for i in range(len(self.edge_u)):
                self._by_endpoints[self._key(int(self.edge_u[i]), int(self.edge_v[i]))] = i

    @staticmethod
    def _key(u: int, v: int) -> tuple[int, int]:
        return (u, BOUNDARY) if v == BOUNDARY else (min(u, v), max(u, v))

    def edge_index(self, u: int, v: int) -> int | None:
        return self._by_endpoints.get(self._key(u, v))

    @property
    def num_edges(self) -> int:
        return len(self.edge_u)

    @property
    def has_graph_boundary(self) -> bool:
        return bool(np.any(self.edge_v == BOUNDARY))

    # sink node indices in the solver graph
    @property
    def sink_boundary(self) -> int:
        return self.n_local

    @property
    def sink_lead(self) -> int:
        return self.n_local + 1

    @property
    def sink_trail(self) -> int:
        return self.n_local + 2

    def adjacency(self):
        """Per-node list of (edge index, other endpoint or BOUNDARY)."""
        if self._adjacency is None:
            adj: list[list[tuple[int, int]]] = [[] for _ in range(self.n_local)]
            for i in range(self.num_edges):
                u, v = int(self.edge_u[i]), int(self.edge_v[i])
                adj[u].append((i, v))
                if v != BOUNDARY:
                    adj[v].append((i, u))
            self._adjacency = adj
        return self._adjacency

    def _build_csr(self, weights: np.ndarray) -> csr_matrix:
        # Directed: real edges go both ways; sink edges only point into the
        # sink, so paths can end at a boundary/cut but never pass through it
        # as a free hub between its adjacent nodes.
        n = self.n_local + 3
        rows: list[int] = []
        cols: list[int] = []
        data: list[float] = []
        for i in range(self.num_edges):
            u = int(self.edge_u[i])
            v = int(self.edge_v[i])
            w = float(weights[i])
            if v == BOUNDARY:
                rows.append(u)
                cols.append(self.sink_boundary)
                data.append(w)
            else:
                rows.extend((u, v))
                cols.extend((v, u))
                data.extend((w, w))
        for u in self.lead_nodes:
            rows.append(u)
            cols.append(self.sink_lead)
            data.append(0.0)
        for u in self.trail_nodes:
            rows.append(u)
            cols.append(self.sink_trail)
            data.append(0.0)
        return csr_matrix(
            (np.asarray(data, dtype=np.float64), (np.asarray(rows), np.asarray(cols))),
            shape=(n, n),
        )

    def clean_csr(self) -> csr_matrix:
        if self._clean_csr is None:
            self._clean_csr = self._build_csr(self.base_w)
        return self._clean_csr

    def edge_map(self):
        """(a, b) node pair -> (weight edge index or -1, observables)."""
        if self._edge_map is None:
            m: dict[tuple[int, int], tuple[int, int]] = {}
            for i in range(self.num_edges):
                u, v = int(self.edge_u[i]), int(self.edge_v[i])
                if v == BOUNDARY:
                    v = self.sink_boundary
                m[(min(u, v), max(u, v))] = (i, self.obs[i])
            for u in self.lead_nodes:
                m[(min(u, self.sink_lead), max(u, self.sink_lead))] = (-1, 0)
            for u in self.trail_nodes:
                m[(min(u, self.sink_trail), max(u, self.sink_trail))] = (-1, 0)
            self._edge_map = m
        return self._edge_map

    def static_table(self):
        """Cached all-source (distances, predecessors) for clean weights."""
        if self.n_local + 3 > _STATIC_TABLE_LIMIT:
            return None
        if self._static is None:
            dist, pred = dijkstra(
                self.clean_csr(), directed=True, return_predecessors=True
            )
            self._static = (dist, pred)
        return self._static

    def structural_bytes(self) -> int:
        total = self.edge_u.nbytes + self.edge_v.nbytes + self.base_p.nbytes + self.base_w.nbytes
        if self._clean_csr is not None:
            total += self._clean_csr.data.nbytes + self._clean_csr.indices.nbytes + self._clean_csr.indptr.nbytes
        if self._static is not None:
            total += self._static[0].nbytes + self._static[1].nbytes
        return total


def region_from_matching_graph(graph: MatchingGraph) -> GraphRegion:
    n = len(graph.edges)
    return GraphRegion(
        n_local=graph.num_nodes,
        edge_u=np.array([e.u for e in graph.edges], dtype=np.int64).reshape(n),
        edge_v=np.array([e.v for e in graph.edges], dtype=np.int64).reshape(n),
        base_p=np.array([e.probability for e in graph.edges], dtype=np.float64),
        base_w=np.array([e.weight for e in graph.edges], dtype=np.float64),
        obs=[e.observables for e in graph.edges],
        lead_nodes=[],
        trail_nodes=[],
        correlations={k: list(v) for k, v in graph.correlations.items()},
        kind=("monolithic", graph.num_nodes),
    )


@dataclass
class RegionView:
    """A region placed at a global node offset, with a sparse weight overlay.

    ``overrides`` maps region-local edge index to the current weight.  Clean
    views (empty overrides) share the region's cached solver structures.
    """

    region: GraphRegion
    node_offset: int
    cycle_lo: int
    cycle_hi: int
    has_lead_cut: bool = False
    has_trail_cut: bool = False
    overrides: dict[int, float] = field(default_factory=dict)

    @property
    def is_clean(self) -> bool:
        return not self.overrides

    def current_weight(self, edge_idx: int) -> float:
        return self.overrides.get(edge_idx, float(self.region.base_w[edge_idx]))

    def to_local(self, node: int) -> int:
        local = node - self.node_offset
        if not 0 <= local < self.region.n_local:
            raise EngineError(f"node {node} outside view [{self.node_offset}, {self.node_offset + self.region.n_local})")
        return local

    def contains(self, node: int) -> bool:
        return 0 <= node - self.node_offset < self.region.n_local


def view_from_matching_graph(graph: MatchingGraph) -> RegionView:
    """Whole-graph view used for monolithic decoding (no block cuts)."""
    region = getattr(graph, "_region", None)
    if region is None:
        region = region_from_matching_graph(graph)
        graph._region = region
    return RegionView(region=region, node_offset=0, cycle_lo=0, cycle_hi=0)


# ---------------------------------------------------------------------------
# Region factory: instantiates cycle ranges of a periodic model, with kind
# keyed caching so bulk blocks and bulk fusion windows share one structure.


class RegionFactory:
    """Builds views onto cycle ranges of one experiment.

    ``total_cycles=None`` starts the factory in open-ended (streaming) mode;
    ``announce_total`` pins the experiment length once the stream ends, after
    which end-of-experiment ranges are built correctly.  Bulk regions cached
    before the announcement stay valid because their structure does not
    depend on the total.
    """

    def __init__(self, model: NoiseModel, total_cycles: int | None):
        if total_cycles is not None and total_cycles < model.prologue_cycles + model.period + model.epilogue_cycles:
            raise EngineError("experiment shorter than prologue+period+epilogue")
        self.model = model
        self.total_cycles = total_cycles
        self._prologue, self._template, self._epilogue = model.mechanism_groups()
        groups = self._prologue + self._template + self._epilogue
        dpc = model.detectors_per_cycle
        self._span = max((m.max_cycle(dpc) - m.min_cycle(dpc) for m in groups), default=0)
        self._cache: dict[tuple, GraphRegion] = {}
        self._lock = threading.Lock()

    @property
    def span(self) -> int:
        return self._span

    @property
    def tail_influence_cycles(self) -> int:
        """How far before the end a region's structure can depend on the end."""
        return self.model.epilogue_cycles + self._span

    def announce_total(self, total_cycles: int | None) -> None:
        # Re-announcing (a new shot with a different length) is fine: cached
        # end-affected regions are keyed by the total they were built for.
        if total_cycles is None:
            self.total_cycles = None
            return
        if total_cycles < self.model.prologue_cycles + self.model.period + self.model.epilogue_cycles:
            raise EngineError("experiment shorter than prologue+period+epilogue")
        self.total_cycles = total_cycles

    def _mechanisms_in(self, cycle_lo: int, cycle_hi: int):
        """Concrete mechanisms whose earliest cycle falls in the given range,
        widened by the maximum mechanism extent so cut-crossing edges appear."""
        dpc = self.model.detectors_per_cycle
        a = self.model.prologue_cycles
        z = self.model.epilogue_cycles
        p = self.model.period
        total = self.total_cycles
        lo = max(0, cycle_lo - self._span)
        out = []
        for m in self._prologue:
            if lo <= m.min_cycle(dpc) < cycle_hi:
                out.append(m)
        first_anchor = a + ((max(lo, a) - a + p - 1) // p) * p
        anchor_hi = cycle_hi if total is None else min(cycle_hi, total - z)
        for anchor in range(first_anchor, anchor_hi, p):
            for m in self._template:
                shifted = m.translated(anchor * dpc)
                if total is None or shifted.max_cycle(dpc) < total:
                    out.append(shifted)
        if total is not None:
            for m in self._epilogue:
                shifted = m.translated((total - z) * dpc)
                if lo <= shifted.min_cycle(dpc) < cycle_hi:
                    out.append(shifted)
        return out

    def _kind(self, cycle_lo: int, cycle_hi: int) -> tuple:
        a = self.model.prologue_cycles
        z = self.model.epilogue_cycles
        p = self.model.period
        total = self.total_cycles
        clear_of_tail = total is None or cycle_hi <= total - z - self._span
        if cycle_lo - self._span >= a and clear_of_tail:
            return ("bulk", (cycle_lo - a) % p, cycle_hi - cycle_lo)
        return ("edge", cycle_lo, cycle_hi, total)

    def view(self, cycle_lo: int, cycle_hi: int) -> RegionView:
        total = self.total_cycles
        if not 0 <= cycle_lo < cycle_hi or (total is not None and cycle_hi > total):
            raise EngineError(f"bad cycle range [{cycle_lo}, {cycle_hi})")
        kind = self._kind(cycle_lo, cycle_hi)
        with self._lock:
            region = self._cache.get(kind)
        if region is None:
            region = self._build_region(cycle_lo, cycle_hi, kind)
            with self._lock:
                region = self._cache.setdefault(kind, region)
        return RegionView(
            region=region,
            node_offset=cycle_lo * self.model.detectors_per_cycle,
            cycle_lo=cycle_lo,
            cycle_hi=cycle_hi,
            has_lead_cut=cycle_lo > 0,
            has_trail_cut=total is None or cycle_hi < total,
        )

    def monolithic_view(self) -> RegionView:
        if self.total_cycles is None:
            raise EngineError("monolithic view needs a known total cycle count")
        return self.view(0, self.total_cycles)

    def _build_region(self, cycle_lo: int, cycle_hi: int, kind: tuple) -> GraphRegion:
        from .model import _MAX_EDGE_P, DemError, merge_probabilities, weight_from_probability

        dpc = self.model.detectors_per_cycle
        off = cycle_lo * dpc
        n_local = (cycle_hi - cycle_lo) * dpc
        probs: dict[tuple[int, int], float] = {}
        obs: dict[tuple[int, int], int] = {}
        order: list[tuple[int, int]] = []
        lead_nodes: set[int] = set()
        trail_nodes: set[int] = set()
        pair_corr: dict[tuple, float] = {}

        def classify(part):
            """Return an interior edge key, or record cut adjacency and return None."""
            dets = [d - off for d in part.detectors]
            if len(dets) == 1:
                return (dets[0], BOUNDARY) if 0 <= dets[0] < n_local else None
            a, b = sorted(dets)
            a_in = 0 <= a < n_local
            b_in = 0 <= b < n_local
            if a_in and b_in:
                return (a, b)
            if a_in and b >= n_local:
                trail_nodes.add(a)
            elif b_in and a < 0:
                lead_nodes.add(b)
            return None

        for m in self._mechanisms_in(cycle_lo, cycle_hi):
            if m.probability > _MAX_EDGE_P:
                raise DemError(f"mechanism probability {m.probability} exceeds {_MAX_EDGE_P}")
            keys = []
            for part in m.parts:
                key = classify(part)
                keys.append(key)
                if key is None:
                    continue
                if key not in probs:
                    probs[key] = 0.0
                    obs[key] = part.observables
                    order.append(key)
                probs[key] = merge_probabilities(probs[key], m.probability)
            interior = [k for k in keys if k is not None]
            if len(set(interior)) != len(interior):
                raise DemError("degenerate hyperedge: two parts map to the same edge")
            for i in range(len(interior)):
                for j in range(i + 1, len(interior)):
                    pk = tuple(sorted((interior[i], interior[j])))
                    prev = pair_corr.get(pk, 0.0)
                    pair_corr[pk] = merge_probabilities(prev, m.probability) if prev else m.probability

        index = {key: i for i, key in enumerate(order)}
        p_arr = np.array([min(probs[k], _MAX_EDGE_P) for k in order], dtype=np.float64)
        w_arr = np.array([weight_from_probability(p) for p in p_arr], dtype=np.float64)
        correlations: dict[int, list[tuple[int, float]]] = {}
        for (ka, kb), ph in pair_corr.items():
            ia, ib = index[ka], index[kb]
            correlations.setdefault(ia, []).append((ib, ph))
            correlations.setdefault(ib, []).append((ia, ph))
        for lst in correlations.values():
            lst.sort()

        return GraphRegion(
            n_local=n_local,
            edge_u=np.array([k[0] for k in order], dtype=np.int64).reshape(len(order)),
            edge_v=np.array([k[1] for k in order], dtype=np.int64).reshape(len(order)),
            base_p=p_arr,
            base_w=w_arr,
            obs=[obs[k] for k in order],
            lead_nodes=sorted(lead_nodes),
            trail_nodes=sorted(trail_nodes),
            correlations=correlations,
            kind=kind,
        )

    def structural_bytes(self) -> int:
        return sum(r.structural_bytes() for r in self._cache.values())

    def warm_tables(self) -> None:
        """Force every cached region's lazy solver structures into being.

        Useful before comparing structural footprints, which otherwise
        depend on which regions happened to see clean decodes.
        """
        with self._lock:
            regions = list(self._cache.values())
        for region in regions:
            region.static_table()


# ---------------------------------------------------------------------------
# Distance computation


def _distances(view: RegionView, sources_local: list[int]):
    """(dist rows, predecessor rows) from each source to every node/sink."""
    region = view.region
    if view.is_clean:
        table = region.static_table()
        if table is not None:
            dist, pred = table
            idx = np.asarray(sources_local)
            return dist[idx], pred[idx]
        graph = region.clean_csr()
        negative = False
    else:
        weights = region.base_w.copy()
        for i, w in view.overrides.items():
            weights[i] = w
        graph = region._build_csr(weights)
        negative = bool(np.any(weights < 0))
    solver = bellman_ford if negative else dijkstra
    return solver(
        graph, directed=True, indices=sources_local, return_predecessors=True
    )


def _walk_path(region: GraphRegion, pred_row, source_local: int, target_node: int):
    """Observable mask accumulated along the recorded shortest path."""
    emap = region.edge_map()
    mask = 0
    node = target_node
    while node != source_local:
        prev = int(pred_row[node])
        if prev == _NO_PRED:
            raise EngineError("no path recorded to target")
        entry = emap.get((min(node, prev), max(node, prev)))
        if entry is None:
            raise EngineError(f"path step ({prev}, {node}) not an edge")
        mask ^= entry[1]
        node = prev
    return mask


# ---------------------------------------------------------------------------
# Exact matcher on the derived metric


class _DSU:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, x):
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def _solve_component(comp, pair_cost, solo_cost):
    """Exact matching of one component; returns [(i, j)] pairs and [i] solos
    as indices into the event list, lexicographically tie-broken."""
    n = len(comp)
    if n <= _DP_LIMIT:
        return _solve_dp(comp, pair_cost, solo_cost)
    return _solve_blossom(comp, pair_cost, solo_cost)


def _solve_dp(comp, pair_cost, solo_cost):
    n = len(comp)
    full = (1 << n) - 1
    solo = [solo_cost[e] for e in comp]
    # Neighbor lists (ascending j) replace tuple-keyed dict probes in the
    # recursion; the candidate order is unchanged.
    nbrs = [[] for _ in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            c = pair_cost.get((comp[i], comp[j]))
            if c is not None:
                nbrs[i].append((1 << j, c))
    memo = {0: 0.0}

    def f(mask):
        val = memo.get(mask)
        if val is not None:
            return val
        low = mask & -mask
        i = low.bit_length() - 1
        rest = mask ^ low
        best = solo[i] + f(rest)
        for jbit, c in nbrs[i]:
            if rest & jbit:
                cand = c + f(rest ^ jbit)
                if cand < best:
                    best = cand
        memo[mask] = best
        return best

    total = f(full)
    if math.isinf(total):
        raise EngineError("odd parity unresolvable: no boundary reachable")

    pairs, solos = [], []
    mask = full
    while mask:
        low = mask & -mask
        i = low.bit_length() - 1
        best = f(mask)
        chosen = None
        rest = mask ^ low
        for jbit, c in nbrs[i]:
            if rest & jbit and c + f(rest ^ jbit) == best:
                chosen = jbit.bit_length() - 1
                break
        if chosen is not None:
            pairs.append((comp[i], comp[chosen]))
            mask ^= low | (1 << chosen)
        else:
            solos.append(comp[i])
            mask ^= low
    return pairs, solos


def _solve_blossom(comp, pair_cost, solo_cost):
    # Oversized component: general max-weight matching via networkx.  When
    # every event can reach a sink the problem reduces to a non-perfect
    # matching over the events alone, maximizing the gain of each pairing
    # over sending both endpoints to their sinks; unmatched events go solo.
    import networkx as nx

    if all(math.isfinite(solo_cost[e]) for e in comp):
        g = nx.Graph()
        g.add_nodes_from(comp)
        in_comp = set(comp)
        for (a, b), c in pair_cost.items():
            if a in in_comp and b in in_comp:
                gain = solo_cost[a] + solo_cost[b] - c
                if gain >= 0.0:
                    g.add_edge(a, b, weight=gain)
        mate = nx.max_weight_matching(g)
        matched = {e for edge in mate for e in edge}
        pairs = sorted((min(a, b), max(a, b)) for a, b in mate)
        solos = sorted(e for e in comp if e not in matched)
        return pairs, solos

    n = len(comp)
    g = nx.Graph()
    g.add_nodes_from(range(2 * n))
    for a in range(n):
        for b in range(a + 1, n):
            c = pair_cost.get((comp[a], comp[b]))
            if c is not None and math.isfinite(c):
                g.add_edge(a, b, weight=-c)
        if math.isfinite(solo_cost[comp[a]]):
            g.add_edge(a, n + a, weight=-solo_cost[comp[a]])
    for a in range(n):
        for b in range(a + 1, n):
            g.add_edge(n + a, n + b, weight=0.0)
    mate = nx.max_weight_matching(g, maxcardinality=True)
    matched = {}
    for a, b in mate:
        matched[a] = b
        matched[b] = a
    pairs, solos = [], []
    for a in range(n):
        if a not in matched:
            raise EngineError("odd parity unresolvable: no boundary reachable")
        b = matched[a]
        if b < n:
            if a < b:
                pairs.append((comp[a], comp[b]))
        elif b == n + a:
            solos.append(comp[a])
        else:
            raise EngineError("matcher returned inconsistent twin pairing")
    return pairs, solos


def match_events(
    view: RegionView,
    events: list[int],
    lead_open: bool = False,
    trail_open: bool = False,
) -> list[MatchRecord]:
    """Exact minimum-weight matching of the given events inside the view.

    Events are global detector ids; records come back in global ids too.
    """
    region = view.region
    locals_ = sorted({view.to_local(e) for e in events})
    if not locals_:
        return []
    lead_open = lead_open and view.has_lead_cut
    trail_open = trail_open and view.has_trail_cut

    dist, pred = _distances(view, locals_)
    n = len(locals_)

    solo_cost = {}
    solo_target = {}
    sink_options = [(region.sink_boundary, GRAPH_BOUNDARY)]
    if lead_open:
        sink_options.append((region.sink_lead, BLOCK_LEADING))
    if trail_open:
        sink_options.append((region.sink_trail, BLOCK_TRAILING))
    # Pull the needed columns out as plain floats once; per-element numpy
    # scalar access is the hot cost at these sizes.
    dist = np.asarray(dist)
    sink_cols = dist[:, [node for node, _ in sink_options]].tolist()
    for i, ev in enumerate(locals_):
        best = math.inf
        best_t = None
        best_node = None
        for k, (node, tgt) in enumerate(sink_options):
            c = sink_cols[i][k]
            if c < best or (c == best and best_t is not None and target_ordinal(tgt) < target_ordinal(best_t)):
                best, best_t, best_node = c, tgt, node
        solo_cost[ev] = best
        solo_target[ev] = (best_t, best_node)

    pair_cost = {}
    dsu = _DSU(n)
    d_ev = dist[:, locals_].tolist()
    for i in range(n):
        row = d_ev[i]
        cap_i = solo_cost[locals_[i]]
        for j in range(i + 1, n):
            c = row[j]
            if not math.isfinite(c):
                continue
            if c <= cap_i + solo_cost[locals_[j]]:
                pair_cost[(locals_[i], locals_[j])] = c
                dsu.union(i, j)

    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(dsu.find(i), []).append(i)

    records: list[MatchRecord] = []
    row_of = {ev: i for i, ev in enumerate(locals_)}
    for root in sorted(groups):
        comp = [locals_[i] for i in sorted(groups[root])]
        if len(comp) == 1 and not math.isfinite(solo_cost[comp[0]]):
            raise EngineError("odd parity unresolvable: no boundary reachable")
        pairs, solos = _solve_component(comp, pair_cost, solo_cost)
        for a, b in pairs:
            mask = _walk_path(region, pred[row_of[a]], a, b)
            records.append(
                MatchRecord(
                    event=a + view.node_offset,
                    target=("event", b + view.node_offset),
                    weight=pair_cost[(a, b)],
                    observables=mask,
                )
            )
        for a in solos:
            tgt, node = solo_target[a]
            mask = _walk_path(region, pred[row_of[a]], a, node)
            records.append(
                MatchRecord(
                    event=a + view.node_offset,
                    target=tgt,
                    weight=solo_cost[a],
                    observables=mask,
                )
            )
    records.sort(key=lambda r: (r.event, target_ordinal(r.target)))
    return records


# ---------------------------------------------------------------------------
# Public operations


def decode_exact(graph_or_view, events) -> Matching:
    """Minimum-weight matching of events to events or the graph boundary."""
    if isinstance(graph_or_view, MatchingGraph):
        view = view_from_matching_graph(graph_or_view)
    else:
        view = graph_or_view
    events = sorted(set(events))
    if len(events) % 2 == 1 and not view.region.has_graph_boundary:
        raise EngineError("odd event count on a graph without boundary edges")
    records = match_events(view, events, lead_open=False, trail_open=False)
    return combine_records(records)


@dataclass
class BlockResult:
    """Matching outcome for a contiguous run of blocks [block_lo, block_hi)."""

    block_lo: int
    block_hi: int
    records: list[MatchRecord]
    view: RegionView | None = None

    @property
    def block_index(self) -> int:
        return self.block_lo

    @property
    def matching(self) -> Matching:
        return combine_records(self.records)

    @property
    def open_regions(self) -> list[MatchRecord]:
        return [r for r in self.records if r.is_block_boundary]


def decode_block(
    view: RegionView,
    events,
    bounds: tuple[bool, bool],
    block_index: int = 0,
) -> BlockResult:
    """Decode one block; open bounds admit zero-penalty block-boundary sinks."""
    lead_open, trail_open = bounds
    records = match_events(view, sorted(set(events)), lead_open=lead_open, trail_open=trail_open)
    return BlockResult(block_index, block_index + 1, records, view=view)


def resolve_window(
    view: RegionView,
    records: list[MatchRecord],
    lead_open: bool,
    trail_open: bool,
    focus: tuple[int, int] | None = None,
) -> tuple[list[MatchRecord], list[MatchRecord]]:
    """Re-solve records inside the view, optionally only near a boundary.

    Returns (new records, frozen records).  A record is re-opened when all
    its endpoints lie inside the window and, if ``focus`` (a global node
    range) is given, it touches that range or targets a block boundary;
    everything else is kept verbatim.  A frozen record targeting a block
    boundary can only be cleared by a later fuse whose window reaches it.
    """
    reopened, frozen = [], []
    for r in records:
        eligible = all(view.contains(e) for e in r.endpoints())
        if eligible and focus is not None and not r.is_block_boundary:
            eligible = any(focus[0] <= e < focus[1] for e in r.endpoints())
        if eligible:
            reopened.append(r)
        else:
            frozen.append(r)
    events = sorted({e for r in reopened for e in r.endpoints()})
    new_records = match_events(view, events, lead_open=lead_open, trail_open=trail_open)
    return new_records, frozen


def fuse(a: BlockResult, b: BlockResult, joined_view: RegionView) -> BlockResult:
    """Fuse two adjacent results by re-solving across their shared boundary."""
    if a.block_hi != b.block_lo:
        raise EngineError(f"blocks [{a.block_lo},{a.block_hi}) and [{b.block_lo},{b.block_hi}) are not adjacent")
    new_records, frozen = resolve_window(
        joined_view,
        a.records + b.records,
        lead_open=joined_view.has_lead_cut,
        trail_open=joined_view.has_trail_cut,
    )
    merged = sorted(new_records + frozen, key=lambda r: (r.event, target_ordinal(r.target)))
    return BlockResult(a.block_lo, b.block_hi, merged, view=joined_view)
