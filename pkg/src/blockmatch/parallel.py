"""Block-parallel decoding with two-layer fusion.

A shot is cut into M-cycle blocks.  Each block is matched independently on
a worker pool with its block boundaries open, then results are stitched
back together in two layers of pairwise fuses: layer 1 joins blocks
(0,1), (2,3), ...; layer 2 joins the remaining odd boundaries.  A layer-2
fuse re-solves a window of up to four blocks so chains crossing its
boundary see both neighbouring layer-1 results; anything the window cannot
reach stays frozen, and a frozen record still pointing at a block boundary
when its block retires marks the shot as heralded.

The coordinator runs every fuse itself in one canonical order, so outputs
are identical for any worker count.  Block decodes are pure functions of
their slot view and events, which keeps pool scheduling irrelevant.
"""
from __future__ import annotations

import time
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field

from .buffer import DEFAULT_CAPACITY, GraphBuffer
from .correlations import apply_preweights, select_seed_edges, undo_reweights
from .engine import (
    EngineError,
    MatchRecord,
    RegionView,
    decode_block,
    resolve_window,
    target_ordinal,
)
from .model import BOUNDARY, NoiseModel

_BLOCK_PRESETS = {
    "surface_d3": 10,
    "surface_d5": 10,
    "repetition_d29": 90,
}


def choose_block_size(selector) -> int:
    """Block length in cycles for a named preset or an explicit integer."""
    if isinstance(selector, str):
        if selector in _BLOCK_PRESETS:
            return _BLOCK_PRESETS[selector]
        try:
            selector = int(selector)
        except ValueError:
            raise ValueError(
                f"unknown block-size preset {selector!r}; known: {sorted(_BLOCK_PRESETS)}"
            ) from None
    m = int(selector)
    if m < 2:
        raise ValueError("block size must be at least 2 cycles")
    return m


@dataclass(frozen=True)
class BlockPlan:
    """Which block pairs fuse in each layer, for a fixed number of blocks."""

    num_blocks: int
    layer1: tuple[tuple[int, int], ...]
    layer2: tuple[tuple[int, int], ...]


def plan_fusion(num_blocks: int) -> BlockPlan:
    if num_blocks < 1:
        raise ValueError("need at least one block")
    layer1 = tuple((b, b + 1) for b in range(0, num_blocks - 1, 2))
    layer2 = tuple((b, b + 1) for b in range(1, num_blocks - 1, 2))
    return BlockPlan(num_blocks, layer1, layer2)


@dataclass(frozen=True)
class Prediction:
    """Final verdict for one shot."""

    shot_index: int
    observables: int
    heralded: bool
    total_weight: float
    num_blocks: int


@dataclass
class _ShotState:
    events: dict[int, list[int]] = field(default_factory=dict)
    futures: dict[int, Future] = field(default_factory=dict)
    decoded: dict[int, tuple] = field(default_factory=dict)  # b -> (view, log, result)
    records: dict[int, list[MatchRecord]] = field(default_factory=dict)
    fused: set[int] = field(default_factory=set)
    acquired_ns: dict[int, int] = field(default_factory=dict)
    decoded_ns: dict[int, int] = field(default_factory=dict)
    next_even: int = 0
    next_odd: int = 1
    next_final: int = 0
    mask: int = 0
    weight: float = 0.0
    heralded: bool = False
    frontier_cycle: int = 0
    num_blocks: int | None = None


class _InlineExecutor:
    """Runs submissions on the caller's thread; results are identical to the
    pool's, so a single-worker pipeline skips the thread handoff cost."""

    def submit(self, fn, *args):
        fut = Future()
        try:
            fut.set_result(fn(*args))
        except BaseException as exc:
            fut.set_exception(exc)
        return fut

    def shutdown(self, wait=True):
        pass


class PipelineDecoder:
    """Streaming block decoder over one noise model.

    One instance owns a worker pool and a sliding graph buffer and decodes
    shots one after another; regions built for earlier shots are reused.
    ``total_cycles=None`` leaves shot lengths open until each shot's event
    iterator runs out.
    """

    def __init__(
        self,
        model: NoiseModel,
        block_cycles,
        total_cycles: int | None = None,
        workers: int = 1,
        use_preweights: bool = True,
        buffer_capacity: int = DEFAULT_CAPACITY,
        threaded_buffer: bool = True,
        clock=time.monotonic_ns,
    ):
        self.model = model
        self.block_cycles = choose_block_size(block_cycles)
        self.total_cycles = total_cycles
        self.use_preweights = use_preweights
        self.clock = clock
        self.buffer = GraphBuffer(
            model,
            self.block_cycles,
            total_cycles,
            capacity=buffer_capacity,
            threaded=threaded_buffer,
        )
        if workers <= 1:
            self._pool = _InlineExecutor()
        else:
            self._pool = ThreadPoolExecutor(max_workers=workers, thread_name_prefix="block")
        self._shots_decoded = 0

    def close(self):
        self._pool.shutdown(wait=True)
        self.buffer.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False

    @property
    def peak_structural_bytes(self) -> int:
        return self.buffer.peak_structural_bytes

    # ---- per-block work (runs on the pool) ------------------------------

    def _decode_one(self, b: int, events: list[int], is_last: bool):
        view = self.buffer.ensure_window(b)
        log = None
        if self.use_preweights:
            seeds = select_seed_edges(view, events)
            log = apply_preweights(view, seeds)
        result = decode_block(view, events, bounds=(b > 0, not is_last), block_index=b)
        return view, log, result

    # ---- coordinator ----------------------------------------------------

    def decode_shot(self, cycles_events, shot_index: int = 0, on_block=None) -> Prediction:
        """Decode one shot from an iterable of per-cycle detector-index lists.

        Detector indices are cycle-local (0 .. detectors_per_cycle-1).  If
        the decoder was built without a total cycle count, the shot ends when
        the iterable does.  ``on_block`` receives a timing dict as each block
        retires.
        """
        if self._shots_decoded:
            self.buffer.reset(self.total_cycles)
        self._shots_decoded += 1
        dpc = self.model.detectors_per_cycle
        M = self.block_cycles
        st = _ShotState()
        bounded = self.total_cycles is not None
        if bounded:
            st.num_blocks = -(-self.total_cycles // M)

        t = 0
        for cyc in cycles_events:
            block = t // M
            if cyc:
                lst = st.events.setdefault(block, [])
                for j in cyc:
                    lst.append(t * dpc + j)
            t += 1
            st.frontier_cycle = t
            if t % M == 0:
                st.acquired_ns[block] = self.clock()
            self._submit_ready(st)
            self._pump(st, on_block, wait=False)

        if not bounded:
            floor = self.model.prologue_cycles + self.model.period + self.model.epilogue_cycles
            if t < floor:
                raise EngineError(f"shot too short ({t} cycles, need >= {floor})")
            self.buffer.announce_total(t)
            st.num_blocks = -(-t // M)
        elif t != self.total_cycles:
            raise EngineError(f"shot has {t} cycles, expected {self.total_cycles}")
        last = st.num_blocks - 1
        st.acquired_ns.setdefault(last, self.clock())

        while st.next_final <= last:
            marker = (len(st.futures) + st.next_final, st.next_even, st.next_odd, len(st.fused))
            self._submit_ready(st, flush=True)
            self._pump(st, on_block, wait=True)
            if st.next_odd >= st.num_blocks - 1 and st.next_even >= st.num_blocks - 1:
                for b in range(st.next_final, last + 1):
                    self._block_done(st, b, wait=True)
                self._finalize_through(st, last, on_block)
            if st.next_final <= last and marker == (
                len(st.futures) + st.next_final,
                st.next_even,
                st.next_odd,
                len(st.fused),
            ):
                raise EngineError("pipeline stalled before finishing the shot")
        return Prediction(shot_index, st.mask, st.heralded, st.weight, st.num_blocks)

    def _submit_ready(self, st: _ShotState, flush: bool = False):
        M = self.block_cycles
        lookahead = self.buffer.factory.tail_influence_cycles
        while True:
            b = st.next_final + len(st.futures)
            if st.num_blocks is not None and b >= st.num_blocks:
                return
            if flush:
                ready = True
            elif st.num_blocks is not None:
                ready = st.frontier_cycle >= (b + 1) * M
            else:
                # Open-ended stream: hold a block back until enough later
                # cycles exist that its structure cannot depend on the end.
                ready = st.frontier_cycle >= (b + 1) * M + lookahead
            # Keep the submission frontier inside the buffer window.
            if not ready or b - st.next_final >= self.buffer.capacity - 2:
                return
            is_last = st.num_blocks is not None and b == st.num_blocks - 1
            st.futures[b] = self._pool.submit(self._decode_one, b, st.events.pop(b, []), is_last)

    def _block_done(self, st: _ShotState, b: int, wait: bool) -> bool:
        if b in st.decoded:
            return True
        fut = st.futures.get(b)
        if fut is None or (not wait and not fut.done()):
            return False
        view, log, result = fut.result()
        st.decoded[b] = (view, log, result)
        st.decoded_ns[b] = self.clock()
        st.records[b] = list(result.records)
        return True

    def _cut_exists(self, st: _ShotState, c: int) -> bool | None:
        """True/False when known; None while an open-ended stream is ahead."""
        if c < 0:
            return False
        if st.num_blocks is not None:
            return c < st.num_blocks - 1
        if st.frontier_cycle > (c + 1) * self.block_cycles:
            return True
        return None

    def _pump(self, st: _ShotState, on_block, wait: bool):
        """Run every fuse whose prerequisites are met, in canonical order.

        Layer-1 fuses (even cuts) run as soon as both operand blocks are
        decoded; a layer-2 fuse (odd cut c) runs once the layer-1 fuses on
        either side are done, over the window [c-1, min(c+2, last)].
        """
        progressed = True
        while progressed:
            progressed = False
            e = st.next_even
            if (
                self._cut_exists(st, e) is True
                and self._block_done(st, e, wait)
                and self._block_done(st, e + 1, wait)
            ):
                self._fuse_cut(st, e, e, e + 1)
                st.next_even += 2
                progressed = True
            c = st.next_odd
            exists = self._cut_exists(st, c)
            if exists is True and (c - 1) in st.fused:
                nxt = self._cut_exists(st, c + 1)
                fused_now = False
                if nxt is True and (c + 1) in st.fused:
                    self._fuse_cut(st, c, c - 1, c + 2)
                    fused_now = True
                elif nxt is False and self._block_done(st, c + 1, wait):
                    self._fuse_cut(st, c, c - 1, c + 1)
                    fused_now = True
                if fused_now:
                    st.next_odd += 2
                    self._finalize_through(st, c, on_block)
                    progressed = True

    def _window_view(self, st: _ShotState, blo: int, bhi: int) -> RegionView:
        """Factory view over blocks [blo, bhi] carrying their reweights."""
        clo = blo * self.block_cycles
        chi = (bhi + 1) * self.block_cycles
        if self.buffer.total_cycles is not None:
            chi = min(chi, self.buffer.total_cycles)
        wv = self.buffer.factory.view(clo, chi)
        for b in range(blo, bhi + 1):
            bv = st.decoded[b][0]
            region = bv.region
            for eidx, w in bv.overrides.items():
                gu = int(region.edge_u[eidx]) + bv.node_offset
                v = int(region.edge_v[eidx])
                lu = gu - wv.node_offset
                lv = BOUNDARY if v == BOUNDARY else v + bv.node_offset - wv.node_offset
                widx = wv.region.edge_index(lu, lv)
                if widx is None:
                    raise EngineError(
                        f"reweighted edge {eidx} of block {b} missing from fuse window"
                    )
                wv.overrides[widx] = w
        return wv

    def _fuse_cut(self, st: _ShotState, cut: int, blo: int, bhi: int):
        if st.num_blocks is not None:
            bhi = min(bhi, st.num_blocks - 1)
        wv = self._window_view(st, blo, bhi)
        collected = [r for b in range(blo, bhi + 1) for r in st.records.get(b, ())]
        lead_open = wv.has_lead_cut and (blo - 1) not in st.fused
        trail_open = wv.has_trail_cut and bhi not in st.fused
        focus = None
        if bhi - blo > 1:
            # Wide (layer-2) window: only records touching the two blocks
            # around the cut are re-opened; the outer blocks were already
            # optimally fused and just provide room for chains to settle.
            nodes_per_block = self.block_cycles * self.model.detectors_per_cycle
            focus = (cut * nodes_per_block, (cut + 2) * nodes_per_block)
        new, frozen = resolve_window(wv, collected, lead_open, trail_open, focus=focus)
        nodes_per_block = self.block_cycles * self.model.detectors_per_cycle
        for b in range(blo, bhi + 1):
            st.records[b] = []
        for r in new + frozen:
            st.records[r.event // nodes_per_block].append(r)
        for b in range(blo, bhi + 1):
            st.records[b].sort(key=lambda r: (r.event, target_ordinal(r.target)))
        st.fused.add(cut)

    def _finalize_through(self, st: _ShotState, hi: int, on_block):
        while st.next_final <= hi:
            b = st.next_final
            for r in st.records.pop(b, []):
                st.weight += r.weight
                st.mask ^= r.observables
                if r.is_block_boundary:
                    st.heralded = True
            view, log, _ = st.decoded.pop(b)
            if log is not None:
                undo_reweights(view, log)
            self.buffer.release_view(b)
            del st.futures[b]
            now = self.clock()
            if on_block is not None:
                on_block(
                    {
                        "block": b,
                        "t_acquired_ns": st.acquired_ns.pop(b, now),
                        "t_decoded_ns": st.decoded_ns.pop(b, now),
                        "t_finalized_ns": now,
                        "queue_depth": len(st.futures) - len(st.decoded),
                    }
                )
            st.next_final += 1
