"""Command-line entry point.

Exit codes: 0 success, 1 check failure, 2 usage or configuration error,
3 numeric abort.  Precedence is total: dataclass defaults < ``--config`` file
< ``--set section.key=value`` < dedicated flags (``--seed``, ``--num_envs``...).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import torch

from quietgait import acoustics, evaluation
from quietgait.config import ConfigError, RunConfig, load_run_config
from quietgait.trainer import TrainConfig

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _common(p):
    p.add_argument("--config", help="sectioned key-value config file")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config field (repeatable)")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--out", default="results", help="output directory")
    p.add_argument("--jobs", type=int, default=None, help="torch threads (default: logical cores)")
    p.add_argument("--leq", action="store_true", help="report energy-mean Leq instead of arithmetic-mean MNL")


def _controller_args(p, beta_default=1.0, many=False):
    p.add_argument("--checkpoint", help="trained policy checkpoint")
    p.add_argument("--baseline", choices=["trot"], help="use the scripted trot baseline")
    if many:
        p.add_argument("--betas", type=_floats, default=None, help="quiet factors of the policy controllers")
    else:
        p.add_argument("--beta", type=float, default=beta_default)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="quietgait", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a policy with PPO")
    _common(p)
    p.add_argument("--paper_scale", action="store_true", help="4096 environments, 6000 iterations")
    p.add_argument("--smoke", action="store_true", help="tiny profile for pipeline checks")
    p.add_argument("--desk", action="store_true", help="5000 iterations, the profile of the shipped checkpoint")
    for f in dataclasses.fields(TrainConfig):
        if f.name == "seed":
            continue
        kind = type(f.default)
        if kind is tuple:
            p.add_argument(f"--{f.name}", type=_floats, default=None)
        elif kind in (int, float, str):
            p.add_argument(f"--{f.name}", type=kind, default=None)

    p = sub.add_parser("eval", help="run an evaluation experiment")
    esub = p.add_subparsers(dest="experiment", required=True)
    e = esub.add_parser("surface", help="trials on one surface")
    _common(e)
    _controller_args(e, beta_default=0.0)
    e.add_argument("--surface", default="wood")
    e.add_argument("--speed", type=float, default=0.5)
    e.add_argument("--trials", type=int, default=5)
    e.add_argument("--duration", type=float, default=10.0)
    e = esub.add_parser("sweep-speed", help="noise against commanded speed")
    _common(e)
    _controller_args(e, many=True)
    e.add_argument("--speeds", type=_floats, default=[0.4, 0.6, 0.8, 1.0])
    e.add_argument("--surface", default="wood")
    e.add_argument("--trials", type=int, default=5)
    e.add_argument("--duration", type=float, default=10.0)
    e = esub.add_parser("sweep-beta", help="noise and tracking against the quiet factor")
    _common(e)
    e.add_argument("--checkpoint", required=False)
    e.add_argument("--betas", type=_floats, default=[0.0, 0.25, 0.5, 0.75, 1.0])
    e.add_argument("--speed", type=float, default=0.8)
    e.add_argument("--surface", default="wood")
    e.add_argument("--trials", type=int, default=5)
    e.add_argument("--duration", type=float, default=10.0)
    e = esub.add_parser("longwalk", help="mixed-surface route")
    _common(e)
    _controller_args(e, beta_default=1.0)
    e.add_argument("--speed", type=float, default=0.36)
    e.add_argument("--listener_distance", type=float, default=1.0)

    p = sub.add_parser("check", help="run the numerical property suite")
    _common(p)
    p = sub.add_parser("calibrate", help="fit acoustic gains to the baseline anchors")
    _common(p)
    _controller_args(p)
    p.add_argument("--speed", type=float, default=0.5)
    p.add_argument("--trials", type=int, default=5)
    p = sub.add_parser("report", help="summarize a results directory into CSV files")
    _common(p)
    p.add_argument("--results", help="results directory (default: --out)")
    return parser


def _run_config(args) -> RunConfig:
    cfg = load_run_config(args.config, args.set)
    if args.seed is not None:
        cfg.set_value("run", "seed", args.seed)
    if getattr(args, "jobs", None) is not None:
        cfg.set_value("run", "jobs", args.jobs)
    if getattr(args, "leq", False):
        cfg.set_value("run", "leq", True)
    return cfg


def _controller(args):
    if getattr(args, "baseline", None) == "trot":
        return "trot"
    if not args.checkpoint:
        raise UsageError("give --checkpoint PATH or --baseline trot")
    if not Path(args.checkpoint).exists():
        raise UsageError(f"checkpoint not found: {args.checkpoint}")
    return args.checkpoint


def cmd_train(args) -> int:
    cfg = _run_config(args)
    profiles = {"paper_scale": TrainConfig.paper_scale, "smoke": TrainConfig.smoke, "desk": TrainConfig.desk}
    chosen = [name for name in profiles if getattr(args, name)]
    if len(chosen) > 1:
        raise UsageError("choose at most one of --paper_scale, --smoke, --desk")
    base = profiles[chosen[0]]() if chosen else None
    if base is not None:
        for f in dataclasses.fields(TrainConfig):
            if f.name not in cfg.values["train"] and getattr(base, f.name) != f.default:
                cfg.set_value("train", f.name, getattr(base, f.name))
    for f in dataclasses.fields(TrainConfig):
        v = getattr(args, f.name, None)
        if v is not None and f.name != "seed":
            cfg.set_value("train", f.name, tuple(v) if isinstance(v, list) else v)
    cfg.set_value("train", "seed", cfg.seed)
    train_cfg = cfg.build("train")
    out = Path(args.out)
    cfg.write(out)
    from quietgait import trainer

    def progress(rec):
        if rec["iteration"] % 10 == 0:
            print(f"iter {rec['iteration']:5d} reward {rec['reward']:+.3f} task {rec['r_task']:.3f} "
                  f"level {rec['level']} kl {rec['kl']:.4f}", flush=True)

    try:
        final = trainer.train(train_cfg, out, cfg.build("sim"), cfg.build("reward"), cfg.build("loss"), progress)
    except FloatingPointError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"wrote {final}")
    return EXIT_OK


def _gained(cfg: RunConfig) -> acoustics.AcousticConfig:
    return cfg.build("acoustic")


def _experiment_dir(args, name) -> Path:
    return Path(args.out) / "runs" / name


def _label(controller, beta):
    return "trot" if controller == "trot" else f"policy_b{beta:g}"


def cmd_eval(args) -> int:
    cfg = _run_config(args)
    seed = cfg.seed
    acoustic = _gained(cfg)
    sim_cfg = cfg.build("sim")
    trot = cfg.build("trot")
    leq = bool(cfg.values["run"].get("leq", False))
    out = Path(args.out)
    cfg.write(out)
    if args.experiment in ("surface", "sweep-speed", "sweep-beta") and args.surface not in acoustic.gains:
        raise UsageError(f"unknown surface {args.surface!r}")
    if args.experiment == "surface":
        ctrl = _controller(args)
        spec = evaluation.TrialSpec(args.surface, args.speed, args.duration, args.trials, args.beta, ctrl, seed)
        res = evaluation.run_surface_trials(spec, acoustic, sim_cfg, leq=leq, trot_params=trot)
        d = evaluation.write_trial_result(res, _experiment_dir(args, f"surface_{_label(ctrl, args.beta)}_{args.surface}"))
        print(f"{res.method} on {args.surface}: MNL {res.mnl_mean:.2f} +- {res.mnl_std:.2f}  "
              f"PNL {res.pnl_mean:.2f} +- {res.pnl_std:.2f}  failed {res.failed}  -> {d}")
    elif args.experiment == "sweep-speed":
        controllers = []
        if args.checkpoint:
            if not Path(args.checkpoint).exists():
                raise UsageError(f"checkpoint not found: {args.checkpoint}")
            controllers += [(args.checkpoint, b) for b in (args.betas or [1.0])]
        if args.baseline == "trot":
            controllers.append(("trot", 0.0))
        if not controllers:
            raise UsageError("give --checkpoint and/or --baseline trot")
        for res in evaluation.speed_sweep(args.speeds, controllers, args.surface, acoustic, sim_cfg, args.trials,
                                          args.duration, seed, leq, trot_params=trot):
            summary = res.summary()
            summary["sweep"] = "speed"
            name = f"speed_{_label(res.spec.controller, res.spec.beta)}_v{res.spec.speed:g}"
            d = evaluation.write_trial_result(res, _experiment_dir(args, name))
            (d / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
            print(f"{res.method} v={res.spec.speed:g}: MNL {res.mnl_mean:.2f} PNL {res.pnl_mean:.2f}")
    elif args.experiment == "sweep-beta":
        if not args.checkpoint or not Path(args.checkpoint).exists():
            raise UsageError(f"checkpoint not found: {args.checkpoint}")
        for res in evaluation.beta_sweep(args.betas, args.speed, args.checkpoint, args.surface, acoustic, sim_cfg,
                                         args.trials, args.duration, seed, leq):
            summary = res.summary()
            summary["sweep"] = "beta"
            d = evaluation.write_trial_result(res, _experiment_dir(args, f"beta_b{res.spec.beta:g}"))
            (d / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
            err = sum(res.tracking_error) / max(len(res.tracking_error), 1)
            print(f"beta={res.spec.beta:g}: MNL {res.mnl_mean:.2f} PNL {res.pnl_mean:.2f} tracking {err:.4f}")
    elif args.experiment == "longwalk":
        ctrl = _controller(args)
        res = evaluation.long_walk(ctrl, speed_cmd=args.speed, beta=args.beta, acoustic=acoustic, sim_cfg=sim_cfg,
                                   seed=seed, listener_distance=args.listener_distance, leq=leq, trot_params=trot)
        d = evaluation.write_long_walk(res, _experiment_dir(args, "longwalk"))
        verdict = "below" if res.safe else "ABOVE"
        print(f"long walk: completed={res.completed} MNL {res.mnl:.2f} PNL {res.pnl:.2f} dBA "
              f"({verdict} the {evaluation.SAFE_LEVEL:g} dBA threshold), avg speed {res.average_speed:.2f} m/s -> {d}")
    return EXIT_OK


def cmd_check(args) -> int:
    from quietgait import checks

    cfg = _run_config(args)
    results = checks.run_all(cfg.build("reward"), seed=cfg.seed)
    failed = [r for r in results if not r.passed]
    for r in results:
        print(r.line())
    if failed:
        print("failing checks: " + ", ".join(r.name for r in failed))
        return EXIT_CHECK
    return EXIT_OK


def cmd_calibrate(args) -> int:
    cfg = _run_config(args)
    ctrl = _controller(args)
    try:
        gains = evaluation.calibrate_gains(ctrl, speed=args.speed, trials=args.trials, seed=cfg.seed,
                                           acoustic=_gained(cfg), sim_cfg=cfg.build("sim"),
                                           trot_params=cfg.build("trot"))
    except evaluation.CalibrationError as exc:
        print(f"calibration failed: {exc}", file=sys.stderr)
        return EXIT_CHECK
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["[gains]"] + [f"{k} = {v!r}" for k, v in sorted(gains.items())]
    (out / "gains.ini").write_text("\n".join(lines) + "\n")
    for k, v in sorted(gains.items()):
        print(f"{k:9s} {v:.6f}")
    print(f"wrote {out / 'gains.ini'} (concrete is the wood/tiles midpoint, uncalibrated)")
    return EXIT_OK


def cmd_report(args) -> int:
    results = Path(args.results or args.out)
    written, errors = evaluation.report(results, args.out)
    for p in written:
        print(f"wrote {p}")
    if errors:
        print("errors:", file=sys.stderr)
        for e in errors:
            print(f"  {e}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "check": cmd_check, "calibrate": cmd_calibrate,
            "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    jobs = getattr(args, "jobs", None) or os.cpu_count() or 1
    torch.set_num_threads(max(1, jobs))
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, UsageError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FloatingPointError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
