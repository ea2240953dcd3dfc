"""Command-line entry points.

Subcommands: run-once, run-batch, validate-spec, emit-plotdata. Exit
codes: 0 success, 1 validation/usage error, 2 internal invariant
violation.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import Config, ConfigError, VARIANTS
from .harness import batch_csv, run_batch, run_episode, write_trace
from .scenes import ScenarioSpec, SpecValidationError, UnknownTemplate, generate_scene


def _load_config(path: str | None, variant: str | None) -> Config:
    cfg = Config.from_file(path) if path else Config()
    if variant:
        from dataclasses import replace

        cfg = replace(cfg, variant=variant)
    return cfg


def _load_spec(args) -> ScenarioSpec:
    if args.spec:
        spec = ScenarioSpec.load(args.spec)
        spec.validate()
        return spec
    return generate_scene(args.template, seed=args.scene_seed, n_exo=args.n_exo)


def cmd_run_once(args) -> int:
    spec = _load_spec(args)
    cfg = _load_config(args.config, args.variant)
    metrics, trace = run_episode(spec, cfg, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_trace(trace, out / f"{spec.name}-s{args.seed}-{cfg.variant}.trace.jsonl")
    with open(out / f"{spec.name}-s{args.seed}-{cfg.variant}.metrics.json", "w") as fh:
        json.dump(metrics.to_dict(), fh, indent=2, sort_keys=True)
    print(json.dumps(metrics.to_dict(), sort_keys=True))
    return 0


def cmd_run_batch(args) -> int:
    variants = args.variants.split(",")
    for v in variants:
        if v not in VARIANTS:
            raise ConfigError(f"unknown variant {v!r}")
    seeds = [int(s) for s in args.seeds.split(",")]
    cfg = _load_config(args.config, None)
    specs = [
        generate_scene(args.template, seed=i, n_exo=args.n_exo) for i in range(args.count)
    ]
    rows = run_batch(specs, variants, seeds, cfg)
    csv_text = batch_csv(rows)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{args.template}-batch.csv").write_text(csv_text)
    print(csv_text, end="")
    return 0


def cmd_validate_spec(args) -> int:
    spec = ScenarioSpec.load(args.spec)
    spec.validate()
    print(f"{args.spec}: ok ({len(spec.lanes)} lanes, {len(spec.exos)} agents)")
    return 0


def cmd_emit_plotdata(args) -> int:
    rows = ["t,x,y,heading,speed,accel,lane,action,reward,collided"]
    with open(args.trace) as fh:
        for line in fh:
            rec = json.loads(line)
            if rec.get("record") != "tick":
                continue
            ego = rec["ego"]
            rows.append(
                f'{rec["t"]},{ego["x"]},{ego["y"]},{ego["heading"]},{ego["speed"]},'
                f'{ego["accel"]},{ego["lane"]},{rec["planner"]["action"]},'
                f'{rec["reward"]},{int(rec["collided"])}'
            )
    text = "\n".join(rows) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="driveplan")
    sub = p.add_subparsers(dest="command", required=True)

    def add_scene_args(sp):
        sp.add_argument("--spec", help="scenario spec file (JSON)")
        sp.add_argument("--template", default="merge", help="scene template")
        sp.add_argument("--scene-seed", type=int, default=0)
        sp.add_argument("--n-exo", type=int, default=None)

    once = sub.add_parser("run-once", help="run one episode")
    add_scene_args(once)
    once.add_argument("--seed", type=int, default=0)
    once.add_argument("--variant", choices=VARIANTS, default=None)
    once.add_argument("--config", help="config file (JSON)")
    once.add_argument("--out", default="out")
    once.set_defaults(fn=cmd_run_once)

    batch = sub.add_parser("run-batch", help="run a suite across variants")
    batch.add_argument("--template", default="merge")
    batch.add_argument("--count", type=int, default=10)
    batch.add_argument("--n-exo", type=int, default=None)
    batch.add_argument("--variants", default="full")
    batch.add_argument("--seeds", default="0")
    batch.add_argument("--config", help="config file (JSON)")
    batch.add_argument("--out", default="out")
    batch.set_defaults(fn=cmd_run_batch)

    val = sub.add_parser("validate-spec", help="validate a scenario spec file")
    val.add_argument("--spec", required=True)
    val.set_defaults(fn=cmd_validate_spec)

    plot = sub.add_parser("emit-plotdata", help="extract per-tick series from a trace")
    plot.add_argument("--trace", required=True)
    plot.add_argument("--out", default=None)
    plot.set_defaults(fn=cmd_emit_plotdata)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (SpecValidationError, UnknownTemplate, ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except AssertionError as exc:
        print(f"internal invariant violation: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
