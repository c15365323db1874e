"""Built-in noise-model generators used by the harness and the test suite.

Two families are provided: a phenomenological repetition code (graphlike
only) and a small two-strip toy code whose correlated two-part mechanisms
exercise the reweighting pass the way Y-type errors would in a CSS code.
"""
from __future__ import annotations

from .model import ErrorMechanism, NoiseModel, Part


def repetition_code_model(
    distance: int,
    cycles: int,
    p_data: float,
    p_meas: float | None = None,
) -> NoiseModel:
    """Phenomenological repetition code.

    One detector per internal data-qubit pair per cycle.  Data errors make
    space-like edges (qubit 0 carries the logical observable), measurement
    errors make time-like edges between consecutive cycles.
    """
    if distance < 2:
        raise ValueError("distance must be >= 2")
    if cycles < 2:
        raise ValueError("cycles must be >= 2")
    if p_meas is None:
        p_meas = p_data
    dpc = distance - 1
    mechs: list[ErrorMechanism] = []

    def det(t: int, j: int) -> int:
        return t * dpc + j

    for t in range(cycles):
        for q in range(distance):
            obs = 1 if q == 0 else 0
            if q == 0:
                dets = (det(t, 0),)
            elif q == distance - 1:
                dets = (det(t, dpc - 1),)
            else:
                dets = (det(t, q - 1), det(t, q))
            mechs.append(ErrorMechanism(p_data, (Part(dets, obs),)))
        if t + 1 < cycles:
            for j in range(dpc):
                mechs.append(
                    ErrorMechanism(p_meas, (Part((det(t, j), det(t + 1, j)), 0),))
                )
    return NoiseModel(
        detectors_per_cycle=dpc,
        num_observables=1,
        mechanisms=mechs,
        period=1,
        prologue_cycles=0,
        epilogue_cycles=1,
    )


def two_strip_code_model(
    cycles: int,
    p_single: float,
    p_joint: float,
    p_meas: float | None = None,
    distance: int = 3,
    p_left: float | None = None,
) -> NoiseModel:
    """Two independent repetition strips coupled by joint two-part mechanisms.

    Strip A (locals ``0..d-2``) detects one error species, strip B (locals
    ``d-1..2d-3``) the other.  A joint mechanism fires one edge in each strip
    at the same qubit/cycle, mimicking a Y error decomposed into its X and Z
    parts; its probability lands in the correlation table.  Observable 0 is
    carried by strip A's left boundary, observable 1 by strip B's.

    ``p_left`` sets the standalone rate of the observable-carrying left
    boundary edges.  Making it much smaller than ``p_single`` leaves a lone
    left-corner event cheaper to explain as a chain out the right side, so
    only the correlation hint from the other strip recovers the flip; that
    asymmetry is what makes the reweighting pass measurably useful.
    """
    if distance < 2:
        raise ValueError("distance must be >= 2")
    if cycles < 2:
        raise ValueError("cycles must be >= 2")
    if p_meas is None:
        p_meas = p_single
    if p_left is None:
        p_left = p_single
    half = distance - 1
    dpc = 2 * half
    mechs: list[ErrorMechanism] = []

    def det(t: int, strip: int, j: int) -> int:
        return t * dpc + strip * half + j

    def strip_part(t: int, strip: int, q: int) -> Part:
        obs = (1 << strip) if q == 0 else 0
        if q == 0:
            dets = (det(t, strip, 0),)
        elif q == distance - 1:
            dets = (det(t, strip, half - 1),)
        else:
            dets = (det(t, strip, q - 1), det(t, strip, q))
        return Part(dets, obs)

    for t in range(cycles):
        for q in range(distance):
            p_q = p_left if q == 0 else p_single
            mechs.append(ErrorMechanism(p_q, (strip_part(t, 0, q),)))
            mechs.append(ErrorMechanism(p_q, (strip_part(t, 1, q),)))
        # Joint mechanisms pair an interior edge of one strip with the other
        # strip's observable corner, like a Y error splitting into its X and
        # Z halves on neighbouring qubits.
        mechs.append(ErrorMechanism(p_joint, (strip_part(t, 0, 1), strip_part(t, 1, 0))))
        mechs.append(ErrorMechanism(p_joint, (strip_part(t, 1, 1), strip_part(t, 0, 0))))
        if t + 1 < cycles:
            for strip in (0, 1):
                for j in range(half):
                    d0, d1 = det(t, strip, j), det(t + 1, strip, j)
                    mechs.append(ErrorMechanism(p_meas, (Part((d0, d1), 0),)))
    return NoiseModel(
        detectors_per_cycle=dpc,
        num_observables=2,
        mechanisms=mechs,
        period=1,
        prologue_cycles=0,
        epilogue_cycles=1,
    )
