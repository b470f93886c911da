"""Command-line entry point: ``pstream <subcommand> ...``.

Every subcommand takes ``--seed`` (the only source of randomness) and
``--deterministic`` (no wall-clock values in any output file; sequential
execution for pipelines). Usage errors exit with status 2, runtime failures
with status 1.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .. import rfid, timeseries
from ..errors import PStreamError
from ..tuples import write_jsonl
from . import bench, runner
from .graph import build_graph

log = logging.getLogger("pstream")


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()] if text else []


def _dump_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_world(path: str | None, seed: int, scans: int | None = None) -> rfid.WorldConfig:
    if path is None:
        return rfid.reference_warehouse(seed=seed, scans=scans or 200)
    obj = json.loads(Path(path).read_text())
    if "scenario" in obj:
        scenario = dict(obj["scenario"])
        scenario["seed"] = seed
        if scans:
            scenario["scans"] = scans
        return rfid.reference_warehouse(**scenario)
    world = rfid.WorldConfig.from_dict(obj)
    world.seed = seed
    return world


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_simulate_rfid(args) -> int:
    world = _load_world(args.config, args.seed, args.scans)
    sim = rfid.simulate(world)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rfid.write_readings_csv(out / "readings.csv", sim.cycles)
    rfid.write_truth_csv(out / "truth.csv", sim)
    _dump_json(out / "world.json", world.to_dict())
    log.info("wrote %d read cycles for %d objects to %s", len(sim.cycles), world.n_objects, out)
    return 0


def cmd_infer_rfid(args) -> int:
    world = _load_world(args.config, args.seed)
    cycles = rfid.read_readings_csv(args.readings, [s.id for s in world.shelves])
    pf = rfid.PFConfig(n_particles=args.particles, n_max=max(4096, args.particles), compress=args.compress,
                       seed=args.seed)
    tracker = rfid.Tracker(world, pf)
    emitter = rfid.LocationEmitter("gmm_bic" if args.policy == "gmm" else "gaussian", args.k_max)
    truth = rfid.read_truth_csv(args.truth) if args.truth else None
    ref = tracker.reference_truth()
    rows = []
    tuples = []
    for scan, cycle in enumerate(cycles):
        tracker.step(cycle)
        tuples.extend(emitter.emit(tracker.filters, cycle.time, scan, world.object_ids))
        row = {"scan": scan, "time": cycle.time}
        if ref:
            row["reference_rmse"] = rfid.measure_accuracy(tracker.filters, ref)
        if truth is not None:
            known = truth.get(cycle.time)
            if known is None:
                raise PStreamError(f"truth file has no rows for time {cycle.time!r}")
            row["rmse"] = rfid.measure_accuracy(tracker.filters, known)
        rows.append(row)
    write_jsonl(args.out, tuples)
    if args.report:
        report = {"scans": len(cycles), "particles": args.particles, "policy": args.policy, "per_scan": rows}
        if truth is not None:
            report["mean_rmse"] = float(np.mean([r["rmse"] for r in rows]))
        if not args.deterministic:
            report["seconds_per_scan"] = tracker.step_seconds / max(tracker.steps, 1)
        _dump_json(Path(args.report), report)
    log.info("wrote %d location tuples to %s", len(tuples), args.out)
    return 0


def cmd_gen_series(args) -> int:
    rng = np.random.default_rng(args.seed)
    rows = []
    for gate in range(args.gates):
        x = timeseries.generate_arma(args.n, _floats(args.ar), _floats(args.ma), const=args.const,
                                     noise_sd=args.noise_sd, rng=rng)
        rows.extend((i * args.period, gate, float(v)) for i, v in enumerate(x))
    rows.sort(key=lambda r: (r[0], r[1]))
    if args.format == "bin":
        timeseries.write_series_bin(args.out, rows)
    else:
        timeseries.write_series_csv(args.out, rows)
    return 0


def _read_series(path: str, period: float):
    if str(path).endswith(".bin"):
        return timeseries.read_series_bin(path, period)
    return timeseries.read_series_csv(path)


def cmd_acf(args) -> int:
    rows = _read_series(args.input, args.period)
    by_gate: dict[int, list[float]] = {}
    for _, g, v in rows:
        by_gate.setdefault(g, []).append(v)
    result = {}
    for g in sorted(by_gate):
        values = np.array(by_gate[g])
        acf = timeseries.sample_acf(values, args.max_lag)
        max_order = args.max_lag - 2 if args.max_order is None else args.max_order
        model = timeseries.identify_ma_order(acf, max_order, joint=not args.pointwise)
        entry = {"n": acf.n, "mean": acf.mean, "gamma": acf.gamma.tolist(), "rho": acf.rho.tolist(),
                 "band": acf.band, "q": model.q, "accepted": model.accepted}
        if model.accepted:
            d = timeseries.clt_mean_distribution(values, model, acf)
            entry["mean_distribution"] = {"mean": d.mean, "var": d.var}
        result[str(g)] = entry
    text = json.dumps(result, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return 0


def cmd_block_average(args) -> int:
    rows = _read_series(args.input, args.period)
    windows = timeseries.rows_to_windows(rows)
    cfg = timeseries.BlockConfig(block=args.block, max_lag=args.max_lag, joint=not args.pointwise)
    from ..tuples import ProbTuple

    tuples = []
    for res in timeseries.block_average(windows, cfg):
        tuples.append(ProbTuple(f"g{res.gate}@{res.time!r}", res.time,
                                {"gate": res.gate, "value": res.value, "rejected": res.rejected,
                                 "q": -1 if res.q is None else res.q}))
    tuples.sort(key=lambda t: (t.ts, t.attrs["gate"]))
    write_jsonl(args.out, tuples)
    return 0


def cmd_run(args) -> int:
    graph = build_graph(args.pipeline)
    bindings = {}
    for b in args.bind or []:
        if "=" not in b:
            raise SystemExit(f"--bind expects BOX=PATH, got {b!r}")
        k, v = b.split("=", 1)
        bindings[k] = v
    try:
        outputs, metrics = runner.run(graph, bindings, deterministic=args.deterministic, seed=args.seed,
                                      capacity=args.capacity)
    except runner.RunError as exc:
        if args.metrics:
            _dump_json(Path(args.metrics), exc.metrics.to_dict(timings=not args.deterministic))
        raise
    if args.metrics:
        _dump_json(Path(args.metrics), metrics.to_dict(timings=not args.deterministic))
    for bid, m in sorted(metrics.boxes.items()):
        log.info(runner.box_metrics_line(bid, m))
    return 0


def cmd_bench_sum(args) -> int:
    cfg = bench.BenchConfig(window=args.window, windows=args.windows, seed=args.seed, fit_k=args.fit_k,
                            hist_bins=args.hist_bins, hist_samples=args.hist_samples)
    rows = bench.bench_sum_methods(cfg)
    csv_path, json_path = bench.write_report(rows, args.out, cfg, timings=not args.deterministic)
    for r in rows:
        # Timings are the one nondeterministic output; --deterministic hides them.
        tps = "n/a" if args.deterministic else f"{r.throughput_tps:.1f}"
        print(f"{r.method:12s} throughput_tps={tps:>10s} variance_distance={r.variance_distance:.5f}")
    log.info("wrote %s and %s", csv_path, json_path)
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pstream", description="Probabilistic stream processing toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def common(sp):
        sp.add_argument("--seed", type=int, default=0, help="seed for every random choice (default 0)")
        sp.add_argument("--deterministic", action="store_true",
                        help="byte-stable outputs: no timings in files, sequential execution")
        sp.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS,
                        help="log progress to stderr")

    sp = sub.add_parser("simulate-rfid", help="simulate a warehouse RFID trace")
    sp.add_argument("--config", help="world config JSON (default: the reference 10x10 m warehouse)")
    sp.add_argument("--scans", type=int, help="number of read cycles (reference scenario only)")
    sp.add_argument("--out", required=True, help="output directory for readings.csv, truth.csv, world.json")
    common(sp)
    sp.set_defaults(func=cmd_simulate_rfid)

    sp = sub.add_parser("infer-rfid", help="particle-filter a readings trace into location tuples")
    sp.add_argument("--readings", required=True, help="readings CSV")
    sp.add_argument("--config", required=True, help="world config JSON (as written by simulate-rfid)")
    sp.add_argument("--policy", choices=["gaussian", "gmm"], default="gaussian",
                    help="location summary: one 3-D Gaussian, or per-axis mixtures chosen by BIC")
    sp.add_argument("--k-max", type=int, default=3, help="largest mixture size for --policy gmm")
    sp.add_argument("--particles", type=int, default=128, help="particles per object")
    sp.add_argument("--compress", action="store_true", help="shrink settled particle clouds")
    sp.add_argument("--out", required=True, help="output JSONL of location tuples")
    sp.add_argument("--truth", help="ground-truth CSV; adds per-scan RMSE to the report")
    sp.add_argument("--report", help="JSON report path")
    common(sp)
    sp.set_defaults(func=cmd_infer_rfid)

    sp = sub.add_parser("gen-series", help="generate ARMA series for one or more gates")
    sp.add_argument("--out", required=True, help="output file (.csv, or binary with --format bin)")
    sp.add_argument("--gates", type=int, default=1, help="number of independent gates (series)")
    sp.add_argument("--n", type=int, default=5000, help="values per gate")
    sp.add_argument("--ar", default="", help="comma-separated AR coefficients")
    sp.add_argument("--ma", default="", help="comma-separated MA coefficients")
    sp.add_argument("--const", type=float, default=0.0, help="constant term C")
    sp.add_argument("--noise-sd", type=float, default=1.0, help="standard deviation of the Gaussian noise e_t")
    sp.add_argument("--period", type=float, default=1.0, help="seconds between values")
    sp.add_argument("--format", choices=["csv", "bin"], default="csv",
                    help="csv rows or bin records (uint32 gate, float32 value)")
    common(sp)
    sp.set_defaults(func=cmd_gen_series)

    sp = sub.add_parser("acf", help="sample autocorrelation and MA order per gate")
    sp.add_argument("--in", dest="input", required=True, help="series CSV or .bin")
    sp.add_argument("--max-lag", type=int, default=timeseries.DEFAULT_MAX_LAG, help="largest autocorrelation lag")
    sp.add_argument("--max-order", type=int, help="largest MA order tried (default max-lag - 2)")
    sp.add_argument("--pointwise", action="store_true", help="use the fixed 1.96/sqrt(n) band at every lag")
    sp.add_argument("--period", type=float, default=1.0, help="seconds between values in .bin input")
    sp.add_argument("--out", help="JSON output (default: stdout)")
    common(sp)
    sp.set_defaults(func=cmd_acf)

    sp = sub.add_parser("block-average", help="summarize each gate's blocks as mean-value tuples")
    sp.add_argument("--in", dest="input", required=True, help="series CSV or .bin")
    sp.add_argument("--block", type=int, default=100, help="values per output tuple")
    sp.add_argument("--max-lag", type=int, default=timeseries.DEFAULT_MAX_LAG, help="largest autocorrelation lag")
    sp.add_argument("--pointwise", action="store_true", help="use the fixed 1.96/sqrt(n) band at every lag")
    sp.add_argument("--period", type=float, default=1.0, help="seconds between values in .bin input")
    sp.add_argument("--out", required=True, help="output JSONL")
    common(sp)
    sp.set_defaults(func=cmd_block_average)

    sp = sub.add_parser("run", help="execute a pipeline file")
    sp.add_argument("--pipeline", required=True, help="pipeline JSON")
    sp.add_argument("--bind", action="append", metavar="BOX=PATH", help="override a source or sink path")
    sp.add_argument("--metrics", help="write run metrics JSON here")
    sp.add_argument("--capacity", type=int, default=runner.QUEUE_CAPACITY, help="queue capacity per box")
    common(sp)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("bench-sum", help="compare sum methods over tumbling windows")
    sp.add_argument("--window", type=int, default=100, help="tuples per window")
    sp.add_argument("--windows", type=int, default=50, help="number of windows")
    sp.add_argument("--fit-k", type=int, default=3, help="mixture size for CF_FIT")
    sp.add_argument("--hist-bins", type=int, default=bench.BenchConfig.hist_bins,
                    help="histogram cells per input for HIST_SAMPLE")
    sp.add_argument("--hist-samples", type=int, default=bench.BenchConfig.hist_samples,
                    help="joint draws per window for HIST_SAMPLE")
    sp.add_argument("--out", required=True, help="report stem; writes STEM.csv and STEM.json")
    common(sp)
    sp.set_defaults(func=cmd_bench_sum)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (PStreamError, OSError, ValueError, KeyError) as exc:
        print(f"pstream {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
