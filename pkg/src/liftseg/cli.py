"""Command-line entry points: gen, run, oracle, eval, bench.

Exit codes: 0 on success, 2 for configuration or input validation
problems, 3 for runtime stage failures.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import bench, fileio, lossmetrics, pipeline
from .config import load_config
from .errors import ConfigError, FixtureIOError, LiftSegError, StageError
from .fixtures import SyntheticSceneSpec, gen_fixtures

EXIT_CONFIG = 2
EXIT_STAGE = 3


def _parse_targets(raw: str) -> tuple:
    if raw.strip().lower() in ("none", ""):
        return ()
    return tuple(int(x) for x in raw.split(","))


def _add_run_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", required=True, help="pipeline config JSON")
    sub.add_argument("--out", required=True, help="output directory")
    sub.add_argument("--seed", type=int, default=None, help="override rng seed")
    sub.add_argument("--toggle-vsd", choices=("on", "off"), default=None,
                     help="instance branch on/off")
    sub.add_argument("--toggle-mlf", choices=("on", "off"), default=None,
                     help="gated fusion on/off (off = element-wise addition)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="liftseg",
        description="Multi-view feature lifting and language-guided "
                    "superpoint segmentation")
    subs = parser.add_subparsers(dest="command", required=True)

    gen = subs.add_parser("gen", help="generate a synthetic fixture directory")
    gen.add_argument("--out", required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--objects", type=int, default=4)
    gen.add_argument("--points-per-object", type=int, default=800)
    gen.add_argument("--extent", type=float, default=0.3)
    gen.add_argument("--dim", type=int, default=64)
    gen.add_argument("--views", type=int, default=3)
    gen.add_argument("--image-size", type=int, default=32)
    gen.add_argument("--noise", type=float, default=0.05)
    gen.add_argument("--targets", default="0",
                     help="comma-separated object ids, or 'none' for zero-target")
    gen.add_argument("--fragments", type=int, default=4,
                     help="superpoints per object")

    _add_run_flags(subs.add_parser("run", help="run the pipeline on a fixture"))
    _add_run_flags(subs.add_parser(
        "oracle", help="run the brute-force reference pipeline"))

    ev = subs.add_parser("eval", help="aggregate metrics from saved run records")
    ev.add_argument("records", nargs="+", help="record.json files from runs")
    ev.add_argument("--out", default=None, help="where to write the report JSON")
    ev.add_argument("--thresholds", default="0.25,0.5")

    bn = subs.add_parser("bench", help="time indexed vs. brute-force radius queries")
    bn.add_argument("--points", type=int, default=200_000)
    bn.add_argument("--queries", type=int, default=1_000)
    bn.add_argument("--radius", type=float, default=0.1)
    bn.add_argument("--seed", type=int, default=0)
    bn.add_argument("--out", default=None)
    return parser


def _configured(args) -> "tuple":
    config = load_config(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["rng_seed"] = args.seed
    if args.toggle_vsd is not None:
        overrides["enable_vsd"] = args.toggle_vsd == "on"
    if args.toggle_mlf is not None:
        overrides["enable_mlf"] = args.toggle_mlf == "on"
    if overrides:
        config = config.replace(**overrides)
    config.validate()
    return config


def cmd_gen(args) -> int:
    spec = SyntheticSceneSpec(
        n_objects=args.objects,
        points_per_object=args.points_per_object,
        extent=args.extent,
        feature_dim=args.dim,
        n_views=args.views,
        image_size=args.image_size,
        noise=args.noise,
        target_ids=_parse_targets(args.targets),
        fragments_per_object=args.fragments,
    )
    manifest = gen_fixtures(spec, args.seed, args.out)
    print(json.dumps(manifest, indent=2, sort_keys=True))
    return 0


def cmd_run(args, oracle_mode: bool = False) -> int:
    config = _configured(args)
    runner = pipeline.run_oracle if oracle_mode else pipeline.run_pipeline
    report = runner(config, args.out)
    print(json.dumps({
        "out": str(Path(args.out)),
        "miou": report["metrics"]["miou"],
        "acc": report["metrics"]["acc"],
        "predicted_points": report["summary"]["predicted_points"],
    }, indent=2, sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    records = [pipeline.load_record(p) for p in args.records]
    thresholds = tuple(float(x) for x in args.thresholds.split(","))
    report = lossmetrics.evaluate(records, thresholds)
    if args.out:
        fileio.write_json(args.out, report)
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def cmd_bench(args) -> int:
    report = bench.bench_index(args.points, args.queries, args.radius, args.seed)
    if args.out:
        fileio.write_json(args.out, report)
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "gen":
            return cmd_gen(args)
        if args.command == "run":
            return cmd_run(args)
        if args.command == "oracle":
            return cmd_run(args, oracle_mode=True)
        if args.command == "eval":
            return cmd_eval(args)
        if args.command == "bench":
            return cmd_bench(args)
        raise ConfigError(f"unknown command {args.command}")
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except (ConfigError, FixtureIOError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except LiftSegError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
