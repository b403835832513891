"""Command-line entry point: ``crglab --experiment {demo,validate,sweep,audit,timing}``.

Exit codes: 0 success, 1 runtime or IO failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import SCHEMA_VERSION, __version__
from .errors import ConfigError, CrgError, InputError
from .reports import write_json

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _layers(text: str) -> tuple[int, int]:
    try:
        a, b = text.split(":")
        return int(a), int(b)
    except ValueError:
        raise argparse.ArgumentTypeError(f"--layers expects A:B, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    from .harness.experiments import EXPERIMENTS

    p = argparse.ArgumentParser(prog="crglab", description="Causal route gating lab.")
    p.add_argument("--config", type=Path, help="JSON run config (or a previous manifest.json)")
    p.add_argument("--experiment", choices=EXPERIMENTS)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--k", type=int, help="heads selected per conflict set")
    p.add_argument("--gamma", type=float, help="rank-to-gate exponent")
    p.add_argument("--layers", type=_layers, metavar="A:B", help="inclusive 0-indexed layer window")
    p.add_argument("--topk-scope", choices=("global", "per-layer"))
    p.add_argument("--version", action="version",
                   version=f"crglab {__version__} (report schema {SCHEMA_VERSION})")
    return p


def resolve(args) -> "RunConfig":  # noqa: F821
    from .harness.experiments import RunConfig

    base: dict = {}
    if args.config is not None:
        try:
            base = json.loads(args.config.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise FileNotFoundError(f"config file not found: {args.config}") from None
        except json.JSONDecodeError as exc:
            raise InputError(f"config file {args.config} is not valid JSON: {exc}") from None
        base = dict(base.get("config", base))
    for key in ("experiment", "seed"):
        if getattr(args, key) is not None:
            base[key] = getattr(args, key)
    if args.out is not None:
        base["out"] = str(args.out)
    policy = dict(base.get("policy", {}))
    if args.k is not None:
        policy["k"] = args.k
    if args.gamma is not None:
        policy["gamma"] = args.gamma
    if args.layers is not None:
        policy["layer_start"], policy["layer_end"] = args.layers
    if args.topk_scope is not None:
        policy["topk_scope"] = args.topk_scope
    base["policy"] = policy
    if base.get("experiment") == "sweep":
        # a policy flag pins its sweep axis to one value
        grid = dict(base.get("grid", {}))
        if args.k is not None:
            grid["k"] = [args.k]
        if args.gamma is not None:
            grid["gamma"] = [args.gamma]
        if args.layers is not None:
            grid["windows"] = [list(args.layers)]
        base["grid"] = grid
    try:
        return RunConfig.from_dict(base)
    except (ConfigError, TypeError) as exc:
        raise UsageError(str(exc)) from None


def main(argv=None) -> int:
    from .harness.experiments import run

    parser = build_parser()
    args = parser.parse_args(argv)  # argparse exits with 2 on usage errors
    try:
        cfg = resolve(args)
        cfg.policy_obj()
        written, lines = run(cfg)
    except UsageError as exc:
        print(f"crglab: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"crglab: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"crglab: io error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (CrgError, ValueError, RuntimeError) as exc:
        print(f"crglab: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    out = Path(cfg.out)
    manifest = {
        "tool": "crglab",
        "version": __version__,
        "seed": cfg.seed,
        "experiment": cfg.experiment,
        "config": cfg.to_dict(),
        "outputs": written + ["summary.txt"],
    }
    try:
        write_json(out / "manifest.json", manifest)
        header = f"crglab {__version__} | schema {SCHEMA_VERSION} | experiment {cfg.experiment} | seed {cfg.seed}"
        text = "\n".join([header, *lines]) + "\n"
        (out / "summary.txt").write_text(text, encoding="utf-8")
    except OSError as exc:
        print(f"crglab: io error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    sys.stdout.write(text)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
