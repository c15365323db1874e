"""Sliding-window buffer of per-block graph views.

A fixed number of slots covers a contiguous run of blocks.  A dedicated
grapher thread owns slot construction and window advancement; decoder
threads only acquire and release published views.  Bulk slots share one
immutable region structure (built once per repeating pattern), so steady
state requires no structural work and memory stays constant regardless of
how many cycles stream through.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field

from .engine import RegionFactory, RegionView
from .model import NoiseModel

DEFAULT_CAPACITY = 128


class BufferError(RuntimeError):
    """Window/reader protocol violation."""


@dataclass
class _Slot:
    block_index: int
    view: RegionView
    readers: int = 0
    retired: bool = False


class GraphBuffer:
    """Blocks [lo, lo + capacity) of an M-cycle-block decomposition.

    ``ensure_window`` blocks until the requested slot is published; slots
    are evicted once retired with zero readers.  ``threaded=False`` runs the
    grapher inline in the caller, which is handy for deterministic batch
    decoding; the protocol is identical either way.
    """

    def __init__(
        self,
        model: NoiseModel,
        block_cycles: int,
        total_cycles: int | None,
        capacity: int = DEFAULT_CAPACITY,
        threaded: bool = True,
        debug_checks: bool = True,
    ):
        if capacity < 8 or capacity & (capacity - 1):
            raise BufferError("capacity must be a power of two >= 8")
        if block_cycles < 1:
            raise BufferError("block_cycles must be >= 1")
        self.model = model
        self.block_cycles = block_cycles
        self.total_cycles = total_cycles
        self.capacity = capacity
        self.debug_checks = debug_checks
        self.factory = RegionFactory(model, total_cycles)
        self.num_blocks = None if total_cycles is None else -(-total_cycles // block_cycles)

        self._lock = threading.Condition()
        self._slots: dict[int, _Slot] = {}
        self._lo = 0
        self._pending: list[int] = []
        self._closed = False
        self._thread: threading.Thread | None = None
        self._peak_bytes = 0
        if threaded:
            self._thread = threading.Thread(target=self._grapher_loop, name="grapher", daemon=True)
            self._thread.start()

    # ---- decoder-facing protocol ---------------------------------------

    def announce_total(self, total_cycles: int) -> None:
        """Pin the experiment length once an open-ended stream terminates."""
        with self._lock:
            self.factory.announce_total(total_cycles)
            self.total_cycles = total_cycles
            self.num_blocks = -(-total_cycles // self.block_cycles)

    def reset(self, total_cycles: int | None = None) -> None:
        """Rewind to block 0 for a new shot, keeping cached region structure."""
        with self._lock:
            held = [s.block_index for s in self._slots.values() if s.readers > 0]
            if held:
                raise BufferError(f"cannot reset while blocks {held} are held")
            if self._pending:
                raise BufferError("cannot reset with slot requests pending")
            self._slots.clear()
            self._lo = 0
            self.factory.announce_total(total_cycles)
            self.total_cycles = total_cycles
            self.num_blocks = (
                None if total_cycles is None else -(-total_cycles // self.block_cycles)
            )
            self._lock.notify_all()

    def block_range(self, block_index: int) -> tuple[int, int]:
        lo = block_index * self.block_cycles
        hi = lo + self.block_cycles
        if self.total_cycles is not None:
            hi = min(hi, self.total_cycles)
        return lo, hi

    def ensure_window(self, block_index: int, timeout: float = 30.0) -> RegionView:
        """Published view for the block, advancing the window as needed."""
        if block_index < 0 or (self.num_blocks is not None and block_index >= self.num_blocks):
            raise BufferError(f"block {block_index} outside [0, {self.num_blocks})")
        with self._lock:
            if block_index < self._lo:
                raise BufferError(f"rewind to block {block_index} (window starts at {self._lo})")
            if block_index >= self._lo + self.capacity:
                # The window cannot reach this block until old slots retire.
                held = [s.block_index for s in self._slots.values() if s.readers > 0 and s.block_index < block_index - self.capacity + 1]
                if held and self._no_progress_possible(block_index):
                    raise BufferError(
                        f"window deadlock: block {block_index} needs eviction but blocks {held} are still held"
                    )
            slot = self._slots.get(block_index)
            if slot is None:
                if self._thread is None:
                    self._advance_and_build(block_index)
                    slot = self._slots[block_index]
                else:
                    if block_index not in self._pending:
                        self._pending.append(block_index)
                        self._lock.notify_all()
                    deadline = timeout
                    while self._slots.get(block_index) is None:
                        if not self._lock.wait(timeout=deadline):
                            raise BufferError(f"timed out waiting for block {block_index}")
                        if self._closed:
                            raise BufferError("buffer closed")
                    slot = self._slots[block_index]
            slot.readers += 1
            return slot.view

    def release_view(self, block_index: int, retire: bool = True) -> None:
        with self._lock:
            slot = self._slots.get(block_index)
            if slot is None or slot.readers <= 0:
                raise BufferError(f"release of block {block_index} without a hold")
            if self.debug_checks and slot.view.overrides:
                raise BufferError(
                    f"release of block {block_index} with reweights still applied"
                )
            slot.readers -= 1
            if retire:
                slot.retired = True
            self._lock.notify_all()

    def structural_bytes(self) -> int:
        per_slot = sum(len(s.view.overrides) * 16 for s in self._slots.values())
        total = self.factory.structural_bytes() + per_slot
        self._peak_bytes = max(self._peak_bytes, total)
        return total

    @property
    def peak_structural_bytes(self) -> int:
        self.structural_bytes()
        return self._peak_bytes

    @property
    def window(self) -> tuple[int, int]:
        with self._lock:
            hi = max(self._slots, default=self._lo - 1) + 1
            return self._lo, hi

    def close(self):
        with self._lock:
            self._closed = True
            self._lock.notify_all()
        if self._thread is not None:
            self._thread.join(timeout=5.0)
            self._thread = None

    # ---- grapher role ---------------------------------------------------

    def _no_progress_possible(self, block_index: int) -> bool:
        evictable = sum(
            1
            for s in self._slots.values()
            if s.retired and s.readers == 0 and s.block_index < block_index - self.capacity + 1
        )
        needed = (block_index - self.capacity + 1) - self._lo
        return evictable < needed

    def _advance_and_build(self, block_index: int) -> None:
        # Caller holds the lock.  Evict retired slots below the new window
        # start, then build and publish the requested slot.
        new_lo = max(self._lo, block_index - self.capacity + 1)
        while self._lo < new_lo:
            slot = self._slots.get(self._lo)
            if slot is not None:
                if slot.readers > 0 or not slot.retired:
                    raise BufferError(
                        f"cannot advance window past held block {self._lo}"
                    )
                del self._slots[self._lo]
            self._lo += 1
        lo, hi = self.block_range(block_index)
        # Build outside the lock so readers of other slots are never blocked
        # on construction; publish-before-visible keeps reads untorn.
        self._lock.release()
        try:
            view = self.factory.view(lo, hi)
        finally:
            self._lock.acquire()
        # A concurrent caller may have published the slot while the lock was
        # dropped; keep the first publication so reader counts stay coherent.
        if block_index not in self._slots:
            self._slots[block_index] = _Slot(block_index, view)
        self.structural_bytes()
        self._lock.notify_all()

    def _grapher_loop(self):
        with self._lock:
            while True:
                while not self._pending and not self._closed:
                    self._lock.wait()
                if self._closed:
                    return
                block_index = self._pending.pop(0)
                if block_index in self._slots or block_index < self._lo:
                    continue
                try:
                    self._advance_and_build(block_index)
                except BufferError:
                    # Window cannot advance yet: requeue and wait for releases.
                    self._pending.insert(0, block_index)
                    self._lock.wait(timeout=0.05)
