"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 training divergence.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .envcore import PRESETS
from .errors import ConfigError, TrainingDivergence
from .harness import compare, evaluate, gradcheck_all, load_agent, load_config, run_dir, train

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGENCE = 0, 2, 3


def _parse_seeds(text: str) -> list[int]:
    seeds = []
    for part in text.replace(",", " ").split():
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(part))
    if not seeds:
        raise ConfigError("--seeds is empty")
    return seeds


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.out is not None:
        changes["output_dir"] = args.out
    cfg = dataclasses.replace(cfg, **changes)
    _, rows = train(cfg, persist=True)
    out = run_dir(cfg)
    print(f"wrote {out / 'metrics.csv'} ({len(rows)} rows)")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    agent = load_agent(cfg, args.params)
    summary = evaluate(agent, cfg.env_kind, cfg.env, args.episodes, cfg.seed)
    print(json.dumps({m: {"mean": mu, "std": sd} for m, (mu, sd) in summary.items()}, indent=2))
    return EXIT_OK


def cmd_compare(args) -> int:
    configs = [load_config(p) for p in args.configs]
    try:
        result = compare(configs, _parse_seeds(args.seeds), args.out)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    for algo, by_seed in result["summary"].items():
        for seed, metrics in by_seed.items():
            vals = " ".join(f"{m}={v:.4f}" for m, v in metrics.items())
            print(f"{algo:15s} seed={seed} {vals}")
    print(f"wrote {Path(args.out) / 'comparison.csv'}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    report = gradcheck_all(draws=args.draws, h=args.h)
    for name, err in report.items():
        print(f"{name:22s} {err:.3e}")
    ok = report["max"] <= args.tol
    print("PASS" if ok else "FAIL", f"max relative error {report['max']:.3e} (tolerance {args.tol:g})")
    return EXIT_OK if ok else 1


def cmd_presets(args) -> int:
    for name, p in PRESETS.items():
        q = p.qos
        print(f"{name}: {p.description}")
        print(f"  pixels_per_scene={q.pixels_per_scene:g} target_fps={q.target_fps:g} "
              f"mtp_limit_ms={q.mtp_limit_ms:g} haptic_limit_ms={q.haptic_limit_ms:g} "
              f"render_rate_bps={q.render_rate_bps:g}")
        print(f"  scene_scale={p.scene_scale:g} downlink_bits={p.downlink_bits:g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="uutmec", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one agent and write metrics.csv, params.npz, config.json")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory (overrides output_dir)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="greedy evaluation of saved parameters")
    p.add_argument("--params", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--episodes", type=int, default=10)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="run several configs over a shared seed list")
    p.add_argument("--configs", nargs="+", required=True)
    p.add_argument("--seeds", required=True, help="e.g. '0,1,2' or '0-4'")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("gradcheck", help="finite-difference check of every architecture")
    p.add_argument("--draws", type=int, default=3)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("presets", help="list environment presets")
    p.set_defaults(func=cmd_presets)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDivergence as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE


if __name__ == "__main__":
    sys.exit(main())
