"""Monte-Carlo sampling, a brute-force decoding oracle, and the
error-per-cycle / suppression-factor statistics pipeline.

Sampling uses the counter-based Philox generator keyed by (seed, shot), so
every shot's noise is reproducible independently of execution order or
platform.  The oracle shares nothing with the matching engine beyond the
graph itself: it computes all-pairs shortest paths by Floyd-Warshall and
enumerates every pairing of events to events or the boundary.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .engine import GRAPH_BOUNDARY, MatchRecord, Matching, combine_records
from .model import BOUNDARY, MatchingGraph, NoiseModel

_ORACLE_EVENT_LIMIT = 14


class HarnessError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Sampling


@dataclass(frozen=True)
class ShotSample:
    shot_index: int
    cycles: int
    detectors_per_cycle: int
    fired_detectors: np.ndarray  # sorted global detector ids
    true_observables: int

    def events(self) -> list[int]:
        return self.fired_detectors.tolist()

    def per_cycle(self):
        """Cycle-local fired indices, one list per cycle (streaming shape)."""
        dpc = self.detectors_per_cycle
        by_cycle = {}
        for d in self.fired_detectors.tolist():
            by_cycle.setdefault(d // dpc, []).append(d % dpc)
        for t in range(self.cycles):
            yield by_cycle.get(t, [])


class _SamplerTables:
    """Flattened mechanism tables for vectorized per-shot sampling."""

    def __init__(self, model: NoiseModel, cycles: int):
        concrete = model.instantiate(cycles)
        probs = []
        det_concat = []
        det_counts = []
        obs_masks = []
        for m in concrete:
            dets = []
            obs = 0
            for part in m.parts:
                dets.extend(part.detectors)
                obs ^= part.observables
            probs.append(m.probability)
            det_concat.extend(dets)
            det_counts.append(len(dets))
            obs_masks.append(obs)
        self.num_detectors = cycles * model.detectors_per_cycle
        self.probs = np.asarray(probs, dtype=np.float64)
        self.det_concat = np.asarray(det_concat, dtype=np.int64)
        self.det_counts = np.asarray(det_counts, dtype=np.int64)
        self.obs_masks = np.asarray(obs_masks, dtype=np.uint64)


def sample_shots(model: NoiseModel, shots: int, cycles: int, seed: int):
    """Generator of ShotSample; each mechanism fires independently."""
    tables = _SamplerTables(model, cycles)
    dpc = model.detectors_per_cycle
    for shot in range(shots):
        yield _sample_one(tables, dpc, cycles, seed, shot)


def _sample_one(tables: _SamplerTables, dpc: int, cycles: int, seed: int, shot: int) -> ShotSample:
    rng = np.random.Generator(np.random.Philox(key=[seed, shot]))
    fired = rng.random(tables.probs.size) < tables.probs
    hit = tables.det_concat[np.repeat(fired, tables.det_counts)]
    parity = np.bincount(hit, minlength=tables.num_detectors) & 1
    detections = np.nonzero(parity)[0]
    masks = tables.obs_masks[fired]
    true_obs = int(np.bitwise_xor.reduce(masks)) if masks.size else 0
    return ShotSample(shot, cycles, dpc, detections, true_obs)


def detection_fraction(samples) -> float:
    """Fired detector slots over all detector slots across the samples."""
    fired = 0
    slots = 0
    for s in samples:
        fired += int(s.fired_detectors.size)
        slots += s.cycles * s.detectors_per_cycle
    if slots == 0:
        raise HarnessError("detection_fraction of an empty sample set")
    return fired / slots


# ---------------------------------------------------------------------------
# Statistics


@dataclass(frozen=True)
class FitResult:
    epsilon: float
    sigma: float
    label: str = ""


@dataclass(frozen=True)
class LambdaResult:
    lam: float
    delta: float
    slope: float
    slope_error: float


def logical_error_probability(epsilon: float, t: int) -> float:
    """Chance of an odd number of per-cycle logical flips over t cycles."""
    return 0.5 * (1.0 - (1.0 - 2.0 * epsilon) ** t)


def one_point_epsilon(p_l: float, t: int) -> float:
    if not 0.0 <= p_l < 0.5:
        raise HarnessError(f"p_L = {p_l} outside [0, 0.5)")
    if t < 1:
        raise HarnessError("t must be >= 1")
    return 0.5 * (1.0 - (1.0 - 2.0 * p_l) ** (1.0 / t))


def _point_variance(p_l: float, n_shots: int) -> float:
    # Variance of y = ln(1 - 2 p_L) from binomial counting error, with a
    # rule-of-succession floor so p_L = 0 points keep finite weight.
    pe = (p_l * n_shots + 1.0) / (n_shots + 2.0)
    return 4.0 * pe * (1.0 - pe) / (n_shots * (1.0 - 2.0 * p_l) ** 2)


def fit_epsilon(points, label: str = "") -> FitResult:
    """Weighted fit of ln(1-2p_L) versus t; epsilon from the slope.

    ``points`` is a list of (t, p_L, n_shots).  A single point degenerates
    to the one-point formula (line through the origin).  The slope variance
    is inflated by the reduced chi-square when the residuals exceed the
    counting errors.
    """
    usable = [(t, p, n) for t, p, n in points if p < 0.5]
    if not usable:
        raise HarnessError("no usable points (all p_L >= 0.5)")
    if len(usable) > 1 and len({t for t, _, _ in usable}) == 1:
        raise HarnessError("all points at the same t")
    ts = np.array([t for t, _, _ in usable], dtype=np.float64)
    ys = np.array([math.log(1.0 - 2.0 * p) for _, p, _ in usable])
    var = np.array([_point_variance(p, n) for _, p, n in usable])
    w = 1.0 / var

    if len(usable) == 1:
        t, p, n = usable[0]
        slope = ys[0] / t
        var_slope = var[0] / t**2
    else:
        sw = w.sum()
        tbar = (w * ts).sum() / sw
        ybar = (w * ys).sum() / sw
        sxx = (w * (ts - tbar) ** 2).sum()
        if sxx == 0:
            raise HarnessError("all points at the same t")
        slope = (w * (ts - tbar) * (ys - ybar)).sum() / sxx
        var_slope = 1.0 / sxx
        dof = len(usable) - 2
        if dof > 0:
            resid = ys - (ybar + slope * (ts - tbar))
            chi2 = float((w * resid**2).sum())
            var_slope *= max(1.0, chi2 / dof)

    epsilon = 0.5 * (1.0 - math.exp(slope))
    sigma = 0.5 * math.exp(slope) * math.sqrt(var_slope)
    return FitResult(epsilon, sigma, label)


def compute_lambda(fits) -> LambdaResult:
    """Error-suppression factor from a regression of ln(eps) on (d+1)/2."""
    if len({d for d, _ in fits}) < 2:
        raise HarnessError("need fits at >= 2 distinct distances")
    xs = np.array([(d + 1) / 2 for d, _ in fits], dtype=np.float64)
    ys = np.array([math.log(f.epsilon) for _, f in fits])
    rel = np.array([(f.sigma / f.epsilon) ** 2 for _, f in fits])
    if np.all(rel == 0):
        w = np.ones_like(rel)
        exact = True
    else:
        floor = rel[rel > 0].min()
        w = 1.0 / np.maximum(rel, floor * 1e-6)
        exact = False

    sw = w.sum()
    xbar = (w * xs).sum() / sw
    ybar = (w * ys).sum() / sw
    sxx = (w * (xs - xbar) ** 2).sum()
    slope = (w * (xs - xbar) * (ys - ybar)).sum() / sxx
    resid = ys - (ybar + slope * (xs - xbar))
    if exact:
        dof = len(fits) - 2
        var_slope = float((w * resid**2).sum()) / (dof * sxx) if dof > 0 else 0.0
    else:
        var_slope = 1.0 / sxx
        dof = len(fits) - 2
        if dof > 0:
            chi2 = float((w * resid**2).sum())
            var_slope *= max(1.0, chi2 / dof)
    dm = math.sqrt(var_slope)
    lam = math.exp(-slope)
    return LambdaResult(lam, lam * dm, slope, dm)


# ---------------------------------------------------------------------------
# Enumeration oracle


def _oracle_paths(graph: MatchingGraph):
    """All-pairs shortest paths by Floyd-Warshall, with observable masks.

    Node n is the boundary.  Deliberately independent of the engine's
    scipy-based distance machinery.
    """
    n = graph.num_nodes
    size = n + 1
    inf = math.inf
    dist = [[inf] * size for _ in range(size)]
    mask = [[0] * size for _ in range(size)]
    for i in range(size):
        dist[i][i] = 0.0
    for e in graph.edges:
        u = e.u
        v = n if e.v == BOUNDARY else e.v
        if e.weight < dist[u][v]:
            dist[u][v] = dist[v][u] = e.weight
            mask[u][v] = mask[v][u] = e.observables
    for k in range(size):
        dk = dist[k]
        mk = mask[k]
        for i in range(size):
            dik = dist[i][k]
            if dik == inf:
                continue
            di = dist[i]
            mi = mask[i]
            for j in range(size):
                alt = dik + dk[j]
                if alt < di[j]:
                    di[j] = alt
                    mi[j] = mi[k] ^ mk[j]
    return dist, mask


def oracle_decode(graph: MatchingGraph, events) -> Matching:
    """Exhaustive minimum over all pairings of events to events/boundary.

    Same tie-break as the engine: for the lowest unmatched event, prefer
    the lowest-indexed partner achieving the optimum, then the boundary.
    """
    events = sorted(set(events))
    if len(events) > _ORACLE_EVENT_LIMIT:
        raise HarnessError(f"{len(events)} events exceeds the enumeration bound")
    for e in events:
        if not 0 <= e < graph.num_nodes:
            raise HarnessError(f"event {e} outside the graph")
    dist, mask = _oracle_paths(graph)
    n_b = graph.num_nodes

    k = len(events)
    best_cache: dict[int, float] = {0: 0.0}

    def best(rem: int) -> float:
        val = best_cache.get(rem)
        if val is not None:
            return val
        i = (rem & -rem).bit_length() - 1
        out = dist[events[i]][n_b] + best(rem ^ (1 << i))
        m = rem ^ (1 << i)
        while m:
            j = (m & -m).bit_length() - 1
            m &= m - 1
            out = min(out, dist[events[i]][events[j]] + best(rem ^ (1 << i) ^ (1 << j)))
        best_cache[rem] = out
        return out

    total = best((1 << k) - 1)
    if math.isinf(total):
        raise HarnessError("odd parity unresolvable: no boundary reachable")

    records: list[MatchRecord] = []
    rem = (1 << k) - 1
    while rem:
        i = (rem & -rem).bit_length() - 1
        target_total = best(rem)
        chosen = None
        m = rem ^ (1 << i)
        while m:
            j = (m & -m).bit_length() - 1
            m &= m - 1
            cand = dist[events[i]][events[j]] + best(rem ^ (1 << i) ^ (1 << j))
            if cand == target_total:
                chosen = j
                break
        if chosen is not None:
            records.append(
                MatchRecord(
                    event=events[i],
                    target=("event", events[chosen]),
                    weight=dist[events[i]][events[chosen]],
                    observables=mask[events[i]][events[chosen]],
                )
            )
            rem ^= (1 << i) | (1 << chosen)
        else:
            records.append(
                MatchRecord(
                    event=events[i],
                    target=GRAPH_BOUNDARY,
                    weight=dist[events[i]][n_b],
                    observables=mask[events[i]][n_b],
                )
            )
            rem ^= 1 << i
    return combine_records(records)
