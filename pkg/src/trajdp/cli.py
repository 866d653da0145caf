"""Command-line front end.

Every command prints its effective configuration (seed included) as one JSON
line prefixed with ``config:``.  Failures exit non-zero and write a JSON
object ``{"error": <category>, "message": ...}`` to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import histogram as hist
from .errors import TrajDPError, ValidationError
from .evaluation import (
    DEFAULT_QUERY_COUNT,
    ExperimentConfig,
    QuerySet,
    avg_l1_error,
    dqam_publish,
    gen_queries,
    kld,
    run_experiment,
    summarize,
    write_reports,
    write_summary,
)
from .synthesis import DEFAULT_ITERATIONS
from .trajectories import GridSpec, gen_skewed, gen_uniform, ingest, parse_csv, write_csv

EXIT_CODES = {
    "validation": 2,
    "dimension": 2,
    "parse": 3,
    "rasterize": 4,
    "solver": 5,
    "budget": 6,
    "io": 7,
    "error": 1,
}
DEFAULT_BBOX = "0,0,1,1"


def _echo(command: str, **cfg) -> None:
    print("config: " + json.dumps({"command": command, **cfg}, sort_keys=True, default=str))


def _grid(args) -> GridSpec:
    return GridSpec.parse_bbox(args.bbox, args.resolution)


def _positive_eps(eps: float) -> float:
    if not eps > 0:
        raise ValidationError(f"--epsilon must be positive, got {eps}")
    return eps


def cmd_ingest(args) -> None:
    g = _grid(args)
    _echo("ingest", input=args.input, bbox=args.bbox, resolution=args.resolution, out=args.out)
    with open(args.input, newline="") as fh:
        trajs = parse_csv(fh)
    h, rejected = ingest(trajs, g)
    for tid, reason in rejected:
        print(f"rejected: {reason}", file=sys.stderr)
    hist.save(h, args.out)
    print(json.dumps({"n": int(h.n), "rejected": len(rejected), "k_max": h.k_max}))


def cmd_gen_data(args) -> None:
    g = _grid(args)
    _echo("gen-data", model=args.model, n=args.n, len=args.len, seed=args.seed, bbox=args.bbox,
          resolution=args.resolution, concentration=args.concentration, hotspot=args.hotspot, out=args.out)
    if args.model == "uniform":
        trajs = gen_uniform(args.n, args.len, g, args.seed)
    else:
        hotspot = None
        if args.hotspot:
            lat, lon = (float(v) for v in args.hotspot.split(","))
            hotspot = (lat, lon)
        trajs = gen_skewed(args.n, args.len, g, hotspot, args.concentration, args.seed)
    with open(args.out, "w", newline="") as fh:
        write_csv(trajs, fh)
    print(json.dumps({"trajectories": len(trajs)}))


def cmd_gen_queries(args) -> None:
    if args.hist:
        h = hist.load(args.hist)
        rows, cols = h.rows, h.cols
    else:
        rows = cols = 2 ** args.resolution
    _echo("gen-queries", count=args.count, seed=args.seed, rows=rows, cols=cols, out=args.out)
    qs = gen_queries(rows, cols, args.count, args.seed)
    qs.save(args.out)
    print(json.dumps({"queries": len(qs)}))


def cmd_synthesize(args) -> None:
    eps = _positive_eps(args.epsilon)
    h = hist.load(args.hist)
    qs = QuerySet.load(args.queries)
    if (qs.rows, qs.cols) != h.shape:
        raise ValidationError(f"query set is for {qs.rows}x{qs.cols}, histogram is {h.rows}x{h.cols}")
    _echo("synthesize", hist=args.hist, queries=args.queries, epsilon=eps, iterations=args.iterations,
          seed=args.seed, delta=args.delta, renormalize=args.renormalize, out=args.out)
    res = dqam_publish(h, qs.queries, eps, args.iterations, args.seed, delta=args.delta,
                       renormalize=args.renormalize)
    hist.save(res.histogram, args.out)
    if args.trace:
        Path(args.trace).write_text(res.trace.to_jsonl())
    if args.partition_out:
        res.partition.save(args.partition_out)
    print(json.dumps({
        "regions": len(res.partition.regions),
        "repairs": sum(s.repaired for s in res.trace.steps),
        "epsilon_spent": res.accountant.spent,
    }))


def cmd_evaluate(args) -> None:
    h_true = hist.load(args.true)
    h_pub = hist.load(args.published)
    qs = QuerySet.load(args.queries)
    _echo("evaluate", true=args.true, published=args.published, queries=args.queries, out=args.out)
    row = {
        "avg_l1": avg_l1_error(h_true, h_pub, qs.queries),
        "kld": kld(h_true, h_pub),
        "violations": len(hist.check_consistency(h_pub)),
        "queries": len(qs),
    }
    text = "avg_l1,kld,violations,queries\n" + f"{row['avg_l1']!r},{row['kld']!r},{row['violations']},{row['queries']}\n"
    if args.out:
        Path(args.out).write_text(text)
    print(json.dumps(row))


def cmd_experiment(args) -> None:
    try:
        doc = json.loads(Path(args.config).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config is not valid JSON: {exc}") from exc
    cfg = ExperimentConfig.from_dict(doc)
    _echo("experiment", **cfg.echo(), out=args.out, summary=args.summary)
    reports = run_experiment(cfg)
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        write_reports(reports, out)
    finally:
        if args.out:
            out.close()
    if args.summary:
        with open(args.summary, "w", newline="") as fh:
            write_summary(summarize(reports), fh)
    failed = [r for r in reports if r.error]
    for r in failed:
        print(f"cell failed: {r.mechanism} eps={r.epsilon} {r.dataset} seed={r.seed}: {r.error}", file=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="trajdp", description="Private spatial histograms of trajectories")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", help="CSV trajectories -> histogram JSON")
    s.add_argument("--input", required=True)
    s.add_argument("--bbox", required=True, help="min_lat,min_lon,max_lat,max_lon")
    s.add_argument("--resolution", type=int, required=True, help="grid is 2^k x 2^k")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("gen-data", help="write a synthetic trajectory CSV")
    s.add_argument("--model", choices=("uniform", "skewed"), required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--len", type=float, default=10.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--bbox", default=DEFAULT_BBOX)
    s.add_argument("--resolution", type=int, default=4)
    s.add_argument("--concentration", type=float, default=1.0)
    s.add_argument("--hotspot", default=None, help="lat,lon; default bbox centre")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("gen-queries", help="write a random rectangle workload")
    s.add_argument("--count", type=int, default=DEFAULT_QUERY_COUNT)
    s.add_argument("--seed", type=int, default=0)
    grid = s.add_mutually_exclusive_group(required=True)
    grid.add_argument("--hist", help="take grid dimensions from this histogram")
    grid.add_argument("--resolution", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_queries)

    s = sub.add_parser("synthesize", help="publish a private histogram")
    s.add_argument("--hist", required=True)
    s.add_argument("--queries", required=True)
    s.add_argument("--epsilon", type=float, required=True)
    s.add_argument("--iterations", type=int, default=DEFAULT_ITERATIONS)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--delta", type=float, default=None, help="partition threshold; default 4/eps1^2")
    s.add_argument("--renormalize", action="store_true", help="hold the face total fixed during updates")
    s.add_argument("--trace", default=None, help="write the per-iteration trace as JSON lines")
    s.add_argument("--partition-out", default=None, help="write the stage-1 partition as JSON")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synthesize)

    s = sub.add_parser("evaluate", help="error of a published histogram")
    s.add_argument("--true", required=True)
    s.add_argument("--published", required=True)
    s.add_argument("--queries", required=True)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("experiment", help="run a mechanism x epsilon x dataset x seed grid")
    s.add_argument("--config", required=True)
    s.add_argument("--out", default=None, help="per-run CSV; stdout if omitted")
    s.add_argument("--summary", default=None, help="mean/std CSV per mechanism, epsilon and dataset")
    s.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
        return 0
    except TrajDPError as exc:
        category, message = exc.category, str(exc)
    except OSError as exc:
        category, message = "io", str(exc)
    print(json.dumps({"error": category, "message": message}), file=sys.stderr)
    return EXIT_CODES.get(category, 1)


if __name__ == "__main__":
    sys.exit(main())
