"""Command-line front end: decode, stream, sample, replay, fit, lambda, bench.

Exit codes: 0 success, 1 usage error, 2 malformed input format, 3 contract
violation (internal protocol breach such as a buffer rewind or double undo).
"""
from __future__ import annotations

import argparse
import json
import socket
import sys
import time

import numpy as np

from .buffer import BufferError
from .correlations import ReweightError, apply_preweights, select_seed_edges, undo_reweights
from .engine import EngineError, RegionFactory, decode_exact
from .harness import (
    FitResult,
    HarnessError,
    LambdaResult,
    compute_lambda,
    fit_epsilon,
    sample_shots,
)
from .model import DemError, NoiseModel, parse_dem
from .parallel import PipelineDecoder
from .stream import (
    LatencyRecord,
    MetricsSink,
    StreamFormatError,
    StreamHeader,
    StreamReader,
    StreamWriter,
    emit_prediction,
    replay,
    summarize_shot_latency,
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _load_model(path: str) -> NoiseModel:
    with open(path, "r", encoding="utf-8") as f:
        return parse_dem(f.read())


def _parse_addr(addr: str) -> tuple[str, int]:
    host, sep, port = addr.rpartition(":")
    if not sep or not port.isdigit():
        raise DemError(f"address {addr!r} is not host:port")
    return host or "127.0.0.1", int(port)


# ---------------------------------------------------------------------------
# decode: offline, deterministic output (latency fields null)


def _cmd_decode(args) -> int:
    model = _load_model(args.dem)
    with open(args.shots, "rb") as f:
        reader = StreamReader(f)
        header = reader.header
        if header.detectors_per_cycle != model.detectors_per_cycle:
            raise StreamFormatError(
                f"stream has {header.detectors_per_cycle} detectors per cycle, "
                f"model has {model.detectors_per_cycle}"
            )
        out = open(args.out, "w", encoding="utf-8") if args.out != "-" else sys.stdout
        try:
            if args.exact:
                _decode_exact_stream(model, reader, out, args.preweights)
            else:
                total = header.cycles_per_shot or None
                with PipelineDecoder(
                    model,
                    args.blocks,
                    total_cycles=total,
                    workers=args.workers,
                    use_preweights=args.preweights,
                ) as dec:
                    for i, shot in enumerate(reader):
                        pred = dec.decode_shot(shot, shot_index=i)
                        out.write(emit_prediction(pred) + "\n")
        finally:
            if out is not sys.stdout:
                out.close()
    return 0


def _decode_exact_stream(model, reader, out, use_preweights):
    from .parallel import Prediction

    dpc = model.detectors_per_cycle
    factory = None
    for i, shot in enumerate(reader):
        cycles = []
        events = []
        for t, fired in enumerate(shot):
            cycles.append(fired)
            events.extend(t * dpc + j for j in fired)
        total = len(cycles)
        if factory is None or factory.total_cycles != total:
            factory = RegionFactory(model, total)
        view = factory.monolithic_view()
        log = None
        if use_preweights:
            log = apply_preweights(view, select_seed_edges(view, events))
        try:
            matching = decode_exact(view, events)
        finally:
            if log is not None:
                undo_reweights(view, log)
        pred = Prediction(i, matching.observable_mask, False, matching.total_weight, 1)
        out.write(emit_prediction(pred) + "\n")


# ---------------------------------------------------------------------------
# stream: online decoding with latency metrics


def _cmd_stream(args) -> int:
    model = _load_model(args.dem)
    if args.stdin:
        f = sys.stdin.buffer
        conn = server = None
    else:
        host, port = _parse_addr(args.listen)
        server = socket.create_server((host, port))
        conn, _ = server.accept()
        f = conn.makefile("rb")
    metrics_f = open(args.metrics, "w", encoding="utf-8") if args.metrics else None
    out = open(args.out, "w", encoding="utf-8") if args.out != "-" else sys.stdout
    try:
        reader = StreamReader(f)
        header = reader.header
        if header.detectors_per_cycle != model.detectors_per_cycle:
            raise StreamFormatError(
                f"stream has {header.detectors_per_cycle} detectors per cycle, "
                f"model has {model.detectors_per_cycle}"
            )
        sink = MetricsSink(metrics_f) if metrics_f else None
        total = header.cycles_per_shot or None
        with PipelineDecoder(
            model,
            args.blocks,
            total_cycles=total,
            workers=args.workers,
            use_preweights=args.preweights,
        ) as dec:
            for i, shot in enumerate(reader):
                latencies = []
                last_frame_ns = [0]

                def timed(gen, _last=last_frame_ns):
                    for fired in gen:
                        yield fired
                        _last[0] = time.monotonic_ns()

                def on_block(info, _i=i, _lat=latencies):
                    rec = LatencyRecord(
                        _i,
                        info["block"],
                        info["t_acquired_ns"],
                        info["t_finalized_ns"],
                        info["queue_depth"],
                    )
                    _lat.append(rec.sub_shot_latency_ns)
                    if sink is not None:
                        sink.record(rec)

                pred = dec.decode_shot(timed(shot), shot_index=i, on_block=on_block)
                end_ns = time.monotonic_ns() - last_frame_ns[0]
                shot_lat = summarize_shot_latency(i, latencies, end_ns)
                out.write(emit_prediction(pred, shot_lat) + "\n")
                out.flush()
    finally:
        if out is not sys.stdout:
            out.close()
        if metrics_f:
            metrics_f.close()
        if not args.stdin:
            f.close()
            conn.close()
            server.close()
    return 0


# ---------------------------------------------------------------------------
# sample


def _cmd_sample(args) -> int:
    model = _load_model(args.dem)
    header = StreamHeader(model.detectors_per_cycle, model.num_observables, args.cycles)
    truth_f = open(args.truth, "w", encoding="utf-8") if args.truth else None
    with open(args.out, "wb") as f:
        writer = StreamWriter(f, header)
        for sample in sample_shots(model, args.shots, args.cycles, args.seed):
            writer.write_shot(sample.per_cycle())
            if truth_f:
                truth_f.write(
                    json.dumps(
                        {
                            "shot": sample.shot_index,
                            "observables": hex(sample.true_observables),
                            "cycles": args.cycles,
                        },
                        separators=(",", ":"),
                    )
                    + "\n"
                )
    if truth_f:
        truth_f.close()
    return 0


# ---------------------------------------------------------------------------
# replay


def _cmd_replay(args) -> int:
    host, port = _parse_addr(args.to)
    with open(args.infile, "rb") as f:
        with socket.create_connection((host, port)) as sock:
            out = sock.makefile("wb")
            replay(f, out, args.rate)
            out.flush()
            out.close()
    return 0


# ---------------------------------------------------------------------------
# fit / lambda


def _read_jsonl(path: str):
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                yield json.loads(line)


def _cmd_fit(args) -> int:
    truth = {rec["shot"]: rec for rec in _read_jsonl(args.truth)}
    groups: dict[int, list[tuple[bool, bool]]] = {}
    heralded_total = 0
    for rec in _read_jsonl(args.predictions):
        t_rec = truth.get(rec["shot"])
        if t_rec is None:
            raise StreamFormatError(f"prediction for shot {rec['shot']} has no truth record")
        t = int(t_rec.get("cycles", 0))
        wrong = int(rec["observables"], 16) != int(t_rec["observables"], 16)
        heralded = bool(rec.get("heralded", False))
        heralded_total += heralded
        groups.setdefault(t, []).append((wrong, heralded))
    points = []
    for t, outcomes in sorted(groups.items()):
        if args.min_cycles and t < args.min_cycles:
            continue
        if args.herald_as_error:
            used = [(wrong or heralded) for wrong, heralded in outcomes]
        else:
            used = [wrong for wrong, heralded in outcomes if not heralded]
        if not used:
            continue
        points.append((t, sum(used) / len(used), len(used)))
    if not points:
        raise HarnessError("no usable fit points after filtering")
    fit = fit_epsilon(points)
    print(
        json.dumps(
            {
                "epsilon": fit.epsilon,
                "sigma": fit.sigma,
                "points": [{"t": t, "p_l": p, "n": n} for t, p, n in points],
                "heralded": heralded_total,
            }
        )
    )
    return 0


def _cmd_lambda(args) -> int:
    with open(args.fits, "r", encoding="utf-8") as f:
        entries = json.load(f)
    fits = [(e["d"], FitResult(e["epsilon"], e.get("sigma", 0.0))) for e in entries]
    res: LambdaResult = compute_lambda(fits)
    print(
        json.dumps(
            {
                "lambda": res.lam,
                "delta": res.delta,
                "slope": res.slope,
                "slope_error": res.slope_error,
            }
        )
    )
    return 0


# ---------------------------------------------------------------------------
# bench


def _cmd_bench(args) -> int:
    lat = []
    depth = []
    for rec in _read_jsonl(args.metrics):
        lat.append(rec["sub_shot_latency_ns"])
        depth.append(rec.get("queue_depth", 0))
    if not lat:
        raise HarnessError("metrics file has no latency records")
    arr = np.asarray(lat, dtype=np.float64) / 1000.0  # microseconds
    tenth = max(1, len(arr) // 10)
    first = float(np.median(arr[:tenth]))
    last = float(np.median(arr[-tenth:]))
    deciles = [float(np.percentile(arr, q)) for q in range(10, 100, 10)]
    d = np.asarray(depth)
    half = len(d) // 2
    backlog = bool(half and d[half:].mean() > d[:half].mean() + 1.0 and d[-1] >= d.max() - 1)
    print(
        json.dumps(
            {
                "blocks": len(arr),
                "median_us": float(np.median(arr)),
                "p99_us": float(np.percentile(arr, 99)),
                "deciles_us": deciles,
                "first_decile_median_us": first,
                "last_decile_median_us": last,
                "max_queue_depth": int(d.max()),
                "backlog_alarm": backlog,
            }
        )
    )
    return 0


# ---------------------------------------------------------------------------


def _build_parser() -> _Parser:
    p = _Parser(prog="blockmatch", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("decode", help="decode a recorded stream offline")
    d.add_argument("--dem", required=True)
    d.add_argument("--shots", required=True)
    d.add_argument("--exact", action="store_true", help="monolithic whole-shot decoding")
    d.add_argument("--blocks", default=10, help="cycles per block or preset name")
    d.add_argument("--workers", type=int, default=1)
    d.add_argument("--out", default="-")
    d.add_argument("--preweights", action=argparse.BooleanOptionalAction, default=True)
    d.set_defaults(func=_cmd_decode)

    s = sub.add_parser("stream", help="decode a live stream with latency metrics")
    s.add_argument("--dem", required=True)
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--listen", help="host:port to accept one stream connection")
    src.add_argument("--stdin", action="store_true")
    s.add_argument("--blocks", default=10)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--metrics", default=None)
    s.add_argument("--out", default="-")
    s.add_argument("--preweights", action=argparse.BooleanOptionalAction, default=True)
    s.set_defaults(func=_cmd_stream)

    m = sub.add_parser("sample", help="draw shots from a model into a stream file")
    m.add_argument("--dem", required=True)
    m.add_argument("--shots", type=int, required=True)
    m.add_argument("--cycles", type=int, required=True)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out", required=True)
    m.add_argument("--truth", default=None)
    m.set_defaults(func=_cmd_sample)

    r = sub.add_parser("replay", help="re-send a recorded stream at a fixed cycle rate")
    r.add_argument("--in", dest="infile", required=True)
    r.add_argument("--rate", type=float, required=True, help="cycles per second")
    r.add_argument("--to", required=True, help="host:port")
    r.set_defaults(func=_cmd_replay)

    f = sub.add_parser("fit", help="logical error per cycle from predictions vs truth")
    f.add_argument("--predictions", required=True)
    f.add_argument("--truth", required=True)
    f.add_argument("--min-cycles", type=int, default=0)
    f.add_argument("--herald-as-error", action="store_true")
    f.set_defaults(func=_cmd_fit)

    l = sub.add_parser("lambda", help="error-suppression factor from per-distance fits")
    l.add_argument("--fits", required=True)
    l.set_defaults(func=_cmd_lambda)

    b = sub.add_parser("bench", help="latency summary from a metrics file")
    b.add_argument("--metrics", required=True)
    b.set_defaults(func=_cmd_bench)
    return p


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (DemError, StreamFormatError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (EngineError, BufferError, ReweightError, HarnessError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
