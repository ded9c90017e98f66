"""Command-line front end: train, eval, propagate, sweep-mte, describe.

All quantities read or written here are in physical units (km, km/s, kg,
days); nondimensionalization stays inside the library.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import policy as pol
from .astro import NondimMission
from .config import RunConfig, load_config, write_config
from .env import control_violation, max_dv, write_trace_csv
from .errors import HeliosError
from .evaluate import (
    extract_reference_trajectory,
    mte_sweep,
    read_schedule_csv,
    replay_schedule,
    report_dict,
    run_campaign,
    summarize,
    write_episodes_csv,
    write_reference,
    write_summary_json,
    write_sweep_csv,
)
from .ppo import train
from .uncertainty import MODES


def worker_count() -> int:
    raw = os.environ.get("HELIOS_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise HeliosError(f"HELIOS_THREADS must be an integer, got {raw!r}") from None


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace(seed=args.seed)
    if getattr(args, "mode", None) is not None:
        cfg = cfg.replace(uncertainty=cfg.uncertainty.with_mode(args.mode))
    if getattr(args, "out", None) is not None:
        cfg = cfg.replace(output_dir=str(args.out))
    return cfg


def _checkpoint(args, cfg: RunConfig) -> pol.PolicyParams:
    return pol.load_params(args.checkpoint, expected_spec=cfg.network)


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def cmd_train(args) -> int:
    cfg = _config(args)
    run_dir = Path(cfg.output_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    write_config(run_dir / "config.json", cfg)
    result = train(cfg.mission, cfg.uncertainty, cfg.hyper, cfg.seed, cfg.network, run_dir)
    ref = extract_reference_trajectory(result.best_params, cfg.mission)
    write_reference(run_dir, ref, cfg.mission)
    print(json.dumps(report_dict(ref), sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    cfg = _config(args)
    params = _checkpoint(args, cfg)
    records = run_campaign(
        params, cfg.uncertainty, args.episodes, cfg.seed, cfg.mission,
        stochastic=args.stochastic, workers=worker_count(),
    )
    out = Path(cfg.output_dir) / f"{cfg.uncertainty.mode}_seed{cfg.seed}"
    out.mkdir(parents=True, exist_ok=True)
    write_config(out / "config.json", cfg)
    summary = summarize(records)
    write_episodes_csv(out / "episodes.csv", records)
    write_summary_json(out / "summary.json", summary, {"mode": cfg.uncertainty.mode, "seed": cfg.seed})
    print(json.dumps(summary.to_dict(), sort_keys=True))
    return 0


def cmd_propagate(args) -> int:
    cfg = _config(args)
    nd = NondimMission.from_config(cfg.mission)
    commands = read_schedule_csv(args.schedule, nd)
    rec = replay_schedule(commands, nd)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_trace_csv(out / "trajectory.csv", rec.trace(nd))
    doc = report_dict(rec)
    doc["dv_violations_kms"] = [
        control_violation(u, max_dv(m, nd)) * nd.scales.v_ref for u, m in zip(rec.controls, rec.states[:, 6])
    ]
    _write_json(out / "report.json", doc)
    print(json.dumps(report_dict(rec), sort_keys=True))
    return 0


def cmd_sweep_mte(args) -> int:
    cfg = _config(args)
    params = _checkpoint(args, cfg)
    rows = mte_sweep(params, cfg.mission)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_sweep_csv(out / "mte_sweep.csv", rows)
    print(f"wrote {len(rows)} rows to {out / 'mte_sweep.csv'}")
    return 0


def cmd_describe(args) -> int:
    print(pol.describe(pol.load_params(args.checkpoint)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="helios", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, mode=False):
        p.add_argument("--config", type=Path, help="run configuration JSON (defaults if omitted)")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--out", type=Path, help="output directory (overrides output_dir)")
        if mode:
            p.add_argument("--mode", choices=MODES, help="uncertainty model")

    p = sub.add_parser("train", help="train a policy with PPO")
    common(p, mode=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="Monte Carlo campaign of a checkpoint")
    common(p, mode=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--episodes", type=int, default=500)
    p.add_argument("--stochastic", action="store_true", help="sample the policy instead of using its mode")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("propagate", help="replay an impulse schedule (km/s CSV) open loop")
    common(p)
    p.add_argument("schedule", type=Path)
    p.set_defaults(func=cmd_propagate)

    p = sub.add_parser("sweep-mte", help="force one missed-thrust event at every segment")
    common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.set_defaults(func=cmd_sweep_mte)

    p = sub.add_parser("describe", help="print a checkpoint's architecture")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.set_defaults(func=cmd_describe)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if getattr(args, "episodes", 1) < 1:
        parser.error("--episodes must be >= 1")
    for name in ("config", "checkpoint", "schedule"):
        path = getattr(args, name, None)
        if path is not None and not path.is_file():
            parser.error(f"{name} file not found: {path}")
    try:
        return args.func(args)
    except (HeliosError, OSError) as exc:
        print(f"helios: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
