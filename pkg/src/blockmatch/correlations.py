"""Correlation-aware edge reweighting applied before a block is matched.

Seed edges are picked from the detection pattern alone: an edge whose two
endpoints both fired, or a boundary edge whose fired endpoint has no fired
neighbour.  Assuming a seed's mechanism occurred, partner edges sharing a
joint mechanism get their failure probability raised and their weight
lowered.  The whole pass is logged so it can be undone bit-exactly once the
block's result is finalized, because buffer slots are reused.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from .engine import RegionView
from .model import BOUNDARY

# Posterior probabilities are clamped just below 1 so reweighted edges keep
# a finite weight.
_P_CLAMP = 1.0 - 2.0**-24


class ReweightError(RuntimeError):
    """Apply/undo protocol violation."""


@dataclass(frozen=True)
class SeedEdgeSet:
    edges: frozenset[int]  # region-local edge indices

    def __iter__(self):
        return iter(sorted(self.edges))

    def __len__(self):
        return len(self.edges)

    def __contains__(self, idx):
        return idx in self.edges


@dataclass
class ReweightLog:
    # (edge index, original weight, new weight); one entry per edge
    entries: list[tuple[int, float, float]] = field(default_factory=list)
    applied: bool = False
    undone: bool = False


def select_seed_edges(view: RegionView, events) -> SeedEdgeSet:
    """Edges the detection pattern directly implicates.

    Condition 1: both endpoints fired.  Condition 2: boundary edge whose
    fired endpoint has no fired neighbour, where adjacency runs over the
    view's own edges (neighbours beyond a block cut are not visible and do
    not count).
    """
    region = view.region
    fired = {view.to_local(e) for e in events}
    adj = region.adjacency()
    chosen: set[int] = set()
    for u in fired:
        for edge_idx, other in adj[u]:
            if other == BOUNDARY:
                if not any(nb in fired for _, nb in adj[u] if nb != BOUNDARY):
                    chosen.add(edge_idx)
            elif other in fired:
                chosen.add(edge_idx)
    return SeedEdgeSet(frozenset(chosen))


def apply_preweights(
    view: RegionView,
    seeds: SeedEdgeSet,
    table: dict[int, list[tuple[int, float]]] | None = None,
) -> ReweightLog:
    """Condition on each seed's mechanism and lower partner edge weights.

    For a partner with joint probability ``p_h``, the fraction of the seed's
    probability explained by the joint mechanism is ``q = p_h / p(seed)``;
    the partner's probability is composed as ``p' = q + p - 2qp``.  Seeds
    are processed in ascending edge order so repeated updates compose
    deterministically.
    """
    region = view.region
    if table is None:
        table = region.correlations
    current: dict[int, float] = {}
    for seed in seeds:
        p_seed = float(region.base_p[seed])
        if p_seed <= 0.0:
            raise ReweightError(f"seed edge {seed} has zero probability")
        for partner, p_joint in table.get(seed, []):
            q = p_joint / p_seed
            p = current.get(partner, float(region.base_p[partner]))
            current[partner] = q + p - 2.0 * q * p

    log = ReweightLog()
    for edge_idx in sorted(current):
        clamped = min(current[edge_idx], _P_CLAMP)
        new_w = math.log((1.0 - clamped) / clamped)
        orig_w = view.current_weight(edge_idx)
        view.overrides[edge_idx] = new_w
        log.entries.append((edge_idx, orig_w, new_w))
    log.applied = True
    return log


def undo_reweights(view: RegionView, log: ReweightLog) -> None:
    """Restore every reweighted edge to its pre-apply weight, bit-exactly."""
    if log.undone:
        raise ReweightError("reweight log already undone")
    if not log.applied:
        raise ReweightError("reweight log was never applied")
    for edge_idx, orig_w, new_w in log.entries:
        cur = view.overrides.get(edge_idx)
        if cur is None or cur != new_w:
            raise ReweightError(f"edge {edge_idx} was modified since apply; cannot undo")
        if orig_w == float(view.region.base_w[edge_idx]):
            del view.overrides[edge_idx]
        else:
            view.overrides[edge_idx] = orig_w
    log.undone = True
