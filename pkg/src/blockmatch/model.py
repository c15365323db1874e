"""Detector-noise-model files and the weighted matching graph built from them.

The text format is line oriented: a few integer headers followed by one
``error`` line per independent mechanism.  A mechanism is a probability plus
one or more *parts*; each part fires one or two detectors and may flip logical
observables.  Multi-part mechanisms are hyperedges: every part becomes an
ordinary graph edge and the joint probability is recorded in the correlation
table so the reweighting pass can condition on it later.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

BOUNDARY = -1

# Merged probabilities are capped just below 1/2 so edge weights stay finite
# and non-negative; inputs above 1/2 are rejected outright.
_MAX_EDGE_P = 0.5


class DemError(ValueError):
    """Malformed noise-model input."""

    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        loc = ""
        if line is not None:
            loc = f"line {line}"
            if col is not None:
                loc += f", col {col}"
            loc += ": "
        super().__init__(loc + message)
        self.line = line
        self.col = col


@dataclass(frozen=True)
class Part:
    """One graphlike piece of a mechanism: 1-2 detectors plus observables."""

    detectors: tuple[int, ...]
    observables: int = 0

    def __post_init__(self):
        if not 1 <= len(self.detectors) <= 2:
            raise DemError(f"part must have 1 or 2 detectors, got {len(self.detectors)}")
        if len(self.detectors) == 2 and self.detectors[0] == self.detectors[1]:
            raise DemError(f"part repeats detector D{self.detectors[0]}")
        if any(d < 0 for d in self.detectors):
            raise DemError("negative detector index")


@dataclass(frozen=True)
class ErrorMechanism:
    probability: float
    parts: tuple[Part, ...]

    def __post_init__(self):
        if not 0.0 < self.probability < 1.0:
            raise DemError(f"probability {self.probability} outside (0, 1)")
        if not self.parts:
            raise DemError("mechanism has no parts")

    @property
    def is_hyperedge(self) -> bool:
        return len(self.parts) > 1

    def min_cycle(self, dpc: int) -> int:
        return min(d for p in self.parts for d in p.detectors) // dpc

    def max_cycle(self, dpc: int) -> int:
        return max(d for p in self.parts for d in p.detectors) // dpc

    def translated(self, delta_detectors: int) -> "ErrorMechanism":
        return ErrorMechanism(
            self.probability,
            tuple(
                Part(tuple(d + delta_detectors for d in p.detectors), p.observables)
                for p in self.parts
            ),
        )

    def sort_key(self):
        dets = sorted(d for p in self.parts for d in p.detectors)
        first = dets[0]
        second = dets[1] if len(dets) > 1 else -1
        return (first, second, self.probability, tuple((p.detectors, p.observables) for p in self.parts))


@dataclass
class NoiseModel:
    detectors_per_cycle: int
    num_observables: int
    mechanisms: list[ErrorMechanism]
    period: int = 1
    prologue_cycles: int = 0
    epilogue_cycles: int = 0

    def __post_init__(self):
        if self.detectors_per_cycle <= 0:
            raise DemError("detectors_per_cycle must be positive")
        if self.num_observables < 0:
            raise DemError("observables must be non-negative")
        if self.period <= 0:
            raise DemError("period must be positive")
        for m in self.mechanisms:
            for p in m.parts:
                if p.observables >> self.num_observables:
                    raise DemError(
                        f"observable index exceeds declared count {self.num_observables}"
                    )

    # ---- basic geometry -------------------------------------------------

    @property
    def total_cycles(self) -> int:
        if not self.mechanisms:
            return 0
        top = max(d for m in self.mechanisms for p in m.parts for d in p.detectors)
        return top // self.detectors_per_cycle + 1

    @property
    def num_detectors(self) -> int:
        return self.total_cycles * self.detectors_per_cycle

    # ---- canonical text form -------------------------------------------

    def serialize(self) -> str:
        lines = [
            f"detectors_per_cycle {self.detectors_per_cycle}",
            f"observables {self.num_observables}",
            f"period {self.period}",
            f"prologue {self.prologue_cycles}",
            f"epilogue {self.epilogue_cycles}",
        ]
        for m in sorted(self.mechanisms, key=ErrorMechanism.sort_key):
            toks = [f"error {m.probability!r}"]
            for i, p in enumerate(m.parts):
                if i:
                    toks.append("^")
                toks.extend(f"D{d}" for d in p.detectors)
                toks.extend(f"L{b}" for b in _mask_bits(p.observables))
            lines.append(" ".join(toks))
        return "\n".join(lines) + "\n"

    # ---- streaming template --------------------------------------------
    #
    # The bulk of a long experiment repeats every `period` cycles, so the
    # mechanism list splits into a prologue (absolute cycles), a repeating
    # template (anchored at the first bulk cycle) and an epilogue (anchored
    # at the end).  `instantiate` rebuilds a concrete mechanism list for an
    # arbitrary cycle count from those three groups.

    def mechanism_groups(self):
        dpc = self.detectors_per_cycle
        total = self.total_cycles
        a, z, p = self.prologue_cycles, self.epilogue_cycles, self.period
        prologue, template, epilogue = [], [], []
        for m in self.mechanisms:
            c = m.min_cycle(dpc)
            if c < a:
                prologue.append(m)
            elif c >= total - z:
                epilogue.append(m.translated(-(total - z) * dpc))
            elif a <= c < a + p:
                template.append(m.translated(-a * dpc))
        return prologue, template, epilogue

    def instantiate(self, cycles: int | None = None) -> list[ErrorMechanism]:
        """Concrete mechanism list for a `cycles`-cycle experiment."""
        if cycles is None:
            cycles = self.total_cycles
        a, z, p = self.prologue_cycles, self.epilogue_cycles, self.period
        if cycles == self.total_cycles:
            return list(self.mechanisms)
        if cycles < a + p + z:
            raise DemError(f"cannot instantiate {cycles} cycles: shorter than prologue+period+epilogue")
        prologue, template, epilogue = self.mechanism_groups()
        dpc = self.detectors_per_cycle
        out = list(prologue)
        for anchor in range(a, cycles - z, p):
            for m in template:
                shifted = m.translated(anchor * dpc)
                if shifted.max_cycle(dpc) < cycles:
                    out.append(shifted)
        for m in epilogue:
            out.append(m.translated((cycles - z) * dpc))
        return out

    def is_streamable(self) -> bool:
        """True when the declared periodicity actually reproduces the file."""
        try:
            rebuilt = self._mech_multiset(self._reinstantiate_self())
        except DemError:
            return False
        return rebuilt == self._mech_multiset(self.mechanisms)

    def _reinstantiate_self(self) -> list[ErrorMechanism]:
        a, z, p = self.prologue_cycles, self.epilogue_cycles, self.period
        cycles = self.total_cycles
        if cycles < a + p + z:
            raise DemError("model shorter than prologue+period+epilogue")
        prologue, template, epilogue = self.mechanism_groups()
        dpc = self.detectors_per_cycle
        out = list(prologue)
        for anchor in range(a, cycles - z, p):
            for m in template:
                shifted = m.translated(anchor * dpc)
                if shifted.max_cycle(dpc) < cycles:
                    out.append(shifted)
        for m in epilogue:
            out.append(m.translated((cycles - z) * dpc))
        return out

    @staticmethod
    def _mech_multiset(mechs):
        return sorted(
            (m.probability, tuple((p.detectors, p.observables) for p in m.parts))
            for m in mechs
        )

    def __eq__(self, other):
        if not isinstance(other, NoiseModel):
            return NotImplemented
        return (
            self.detectors_per_cycle == other.detectors_per_cycle
            and self.num_observables == other.num_observables
            and self.period == other.period
            and self.prologue_cycles == other.prologue_cycles
            and self.epilogue_cycles == other.epilogue_cycles
            and self._mech_multiset(self.mechanisms) == self._mech_multiset(other.mechanisms)
        )


def _mask_bits(mask: int):
    i = 0
    while mask:
        if mask & 1:
            yield i
        mask >>= 1
        i += 1


# ---------------------------------------------------------------------------
# Parsing


_HEADERS = {
    "detectors_per_cycle": "detectors_per_cycle",
    "observables": "num_observables",
    "period": "period",
    "prologue": "prologue_cycles",
    "epilogue": "epilogue_cycles",
}


def parse_dem(text: str) -> NoiseModel:
    """Parse noise-model text into a :class:`NoiseModel`.

    Raises :class:`DemError` with line/column information on malformed input.
    """
    headers: dict[str, int] = {}
    mechanisms: list[ErrorMechanism] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        toks = line.split()
        key = toks[0]
        if key in _HEADERS:
            if mechanisms:
                raise DemError("header after first mechanism line", lineno)
            if len(toks) != 2:
                raise DemError(f"header '{key}' takes exactly one integer", lineno)
            try:
                headers[_HEADERS[key]] = int(toks[1])
            except ValueError:
                raise DemError(f"bad integer {toks[1]!r}", lineno, raw.find(toks[1]) + 1)
        elif key == "error":
            mechanisms.append(_parse_error_line(toks, raw, lineno))
        else:
            raise DemError(f"unknown directive {key!r}", lineno, raw.find(key) + 1)
    for required in ("detectors_per_cycle", "num_observables"):
        if required not in headers:
            raise DemError(f"missing required header for {required}")
    try:
        return NoiseModel(mechanisms=mechanisms, **headers)
    except DemError:
        raise
    except ValueError as exc:
        raise DemError(str(exc))


def _parse_error_line(toks, raw, lineno) -> ErrorMechanism:
    def err(msg, tok=None):
        col = raw.find(tok) + 1 if tok else None
        return DemError(msg, lineno, col)

    if len(toks) < 3:
        raise err("error line needs a probability and at least one part")
    try:
        p = float(toks[1])
    except ValueError:
        raise err(f"bad probability {toks[1]!r}", toks[1])
    if not 0.0 < p < 1.0:
        raise err(f"probability {p} outside (0, 1)", toks[1])
    parts: list[Part] = []
    dets: list[int] = []
    obs = 0
    seen_obs = False

    def flush(tok):
        nonlocal dets, obs, seen_obs
        if not dets:
            raise err("empty part", tok)
        if len(dets) > 2:
            raise err(f"part has {len(dets)} detectors (max 2)", tok)
        if len(dets) == 2 and dets[0] == dets[1]:
            raise err(f"part repeats detector D{dets[0]}", tok)
        parts.append(Part(tuple(dets), obs))
        dets, obs, seen_obs = [], 0, False

    for tok in toks[2:]:
        if tok == "^":
            flush(tok)
        elif tok.startswith("D"):
            if seen_obs:
                raise err("detector token after observable token in a part", tok)
            try:
                dets.append(int(tok[1:]))
            except ValueError:
                raise err(f"bad detector token {tok!r}", tok)
            if dets[-1] < 0:
                raise err(f"negative detector index {tok!r}", tok)
        elif tok.startswith("L"):
            try:
                bit = int(tok[1:])
            except ValueError:
                raise err(f"bad observable token {tok!r}", tok)
            if bit < 0:
                raise err(f"negative observable index {tok!r}", tok)
            obs ^= 1 << bit
            seen_obs = True
        else:
            raise err(f"unexpected token {tok!r}", tok)
    flush(toks[-1])
    return ErrorMechanism(p, tuple(parts))


# ---------------------------------------------------------------------------
# Matching graph


def merge_probabilities(p1: float, p2: float) -> float:
    """Probability that exactly one of two independent flips occurred."""
    return p1 * (1.0 - p2) + p2 * (1.0 - p1)


def weight_from_probability(p: float) -> float:
    return math.log((1.0 - p) / p)


@dataclass
class Edge:
    id: int
    u: int
    v: int  # BOUNDARY for boundary edges
    probability: float
    weight: float
    observables: int

    @property
    def is_boundary(self) -> bool:
        return self.v == BOUNDARY


@dataclass
class MatchingGraph:
    num_nodes: int
    num_observables: int
    edges: list[Edge]
    # edge id -> [(partner edge id, joint probability), ...]; symmetric
    correlations: dict[int, list[tuple[int, float]]] = field(default_factory=dict)

    _by_endpoints: dict[tuple[int, int], int] = field(default_factory=dict, repr=False)
    _adjacency: list[list[int]] | None = field(default=None, repr=False)

    def edge_between(self, a: int, b: int) -> Edge | None:
        key = (min(a, b), max(a, b)) if b != BOUNDARY else (a, BOUNDARY)
        idx = self._by_endpoints.get(key)
        return self.edges[idx] if idx is not None else None

    def neighbors(self, node: int) -> list[int]:
        """Nodes sharing an edge with `node` (boundary edges excluded)."""
        if self._adjacency is None:
            adj: list[list[int]] = [[] for _ in range(self.num_nodes)]
            for e in self.edges:
                if not e.is_boundary:
                    adj[e.u].append(e.v)
                    adj[e.v].append(e.u)
            self._adjacency = adj
        return self._adjacency[node]

    def incident_edges(self, node: int) -> list[Edge]:
        return [e for e in self.edges if e.u == node or e.v == node]

    @property
    def has_boundary(self) -> bool:
        return any(e.is_boundary for e in self.edges)


def build_matching_graph(
    model: NoiseModel, cycles: int | None = None
) -> MatchingGraph:
    """Decompose mechanisms into merged graphlike edges plus correlations."""
    mechanisms = model.instantiate(cycles)
    num_nodes = (cycles or model.total_cycles) * model.detectors_per_cycle

    probs: dict[tuple[int, int], float] = {}
    obs: dict[tuple[int, int], int] = {}
    order: list[tuple[int, int]] = []
    pair_corr: dict[tuple[tuple[int, int], tuple[int, int]], float] = {}

    for m in mechanisms:
        if m.probability > _MAX_EDGE_P:
            raise DemError(
                f"mechanism probability {m.probability} exceeds {_MAX_EDGE_P}"
            )
        keys = []
        for part in m.parts:
            if len(part.detectors) == 2:
                a, b = part.detectors
                key = (min(a, b), max(a, b))
            else:
                key = (part.detectors[0], BOUNDARY)
            if key not in probs:
                probs[key] = 0.0
                obs[key] = part.observables
                order.append(key)
            else:
                if obs[key] != part.observables:
                    raise DemError(
                        f"conflicting observables for edge {key}: mechanisms on the "
                        "same endpoints must flip the same observables"
                    )
            probs[key] = merge_probabilities(probs[key], m.probability)
            keys.append(key)
        if len(set(keys)) != len(keys):
            raise DemError("degenerate hyperedge: two parts map to the same edge")
        for i in range(len(keys)):
            for j in range(i + 1, len(keys)):
                pk = tuple(sorted((keys[i], keys[j])))
                prev = pair_corr.get(pk, 0.0)
                pair_corr[pk] = merge_probabilities(prev, m.probability) if prev else m.probability

    edges: list[Edge] = []
    index: dict[tuple[int, int], int] = {}
    for key in order:
        p = min(probs[key], _MAX_EDGE_P)
        u, v = key
        if u >= num_nodes or (v != BOUNDARY and v >= num_nodes):
            raise DemError(f"detector index {max(u, v)} outside {num_nodes} nodes")
        index[key] = len(edges)
        edges.append(Edge(len(edges), u, v, p, weight_from_probability(p), obs[key]))

    correlations: dict[int, list[tuple[int, float]]] = {}
    for (ka, kb), ph in pair_corr.items():
        ia, ib = index[ka], index[kb]
        correlations.setdefault(ia, []).append((ib, ph))
        correlations.setdefault(ib, []).append((ia, ph))
    for lst in correlations.values():
        lst.sort()

    return MatchingGraph(
        num_nodes=num_nodes,
        num_observables=model.num_observables,
        edges=edges,
        correlations=correlations,
        _by_endpoints=index,
    )
