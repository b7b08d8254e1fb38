"""Command-line front end.

Exit codes: 0 success, 1 runtime failure or violated tolerance, 2 config error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import nn, toy
from .data import make_blobs
from .diagnostics import confusion_mass, diagnostics_report, write_matrix_csv
from .experiment import ConfigError, build_datasets, compare, dump_json, load_config, train_seeds
from .trainer import evaluate

log = logging.getLogger("ptrlab")


def _apply_overrides(cfg, args):
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seeds=(args.seed,))
    if getattr(args, "out", None):
        cfg = replace(cfg, output_dir=args.out)
    if getattr(args, "no_weight_decay", False):
        cfg = replace(cfg, optimizer=replace(cfg.optimizer, weight_decay=0.0))
    return cfg


def _echo(obj):
    print(json.dumps(obj, indent=2, sort_keys=True))


def cmd_train(args):
    cfg = _apply_overrides(load_config(args.config), args)
    if args.dry_run:
        _echo(cfg.to_dict())
        return 0
    reports = train_seeds(cfg)
    _echo([{"seed": r.seed, "final": asdict(r.epochs[-1]) if r.epochs else None} for r in reports])
    return 0


def cmd_compare(args):
    cfg = _apply_overrides(load_config(args.config), args)
    if args.dry_run:
        _echo(cfg.to_dict())
        return 0
    report = compare(cfg)
    _echo({k: v for k, v in report.items() if k not in ("config", "per_seed")})
    return 0


def _checkpoint_for(cfg, args):
    if args.checkpoint:
        return Path(args.checkpoint)
    return Path(cfg.output_dir) / f"seed_{cfg.seeds[0]}" / "checkpoint.bin"


def cmd_eval(args):
    cfg = _apply_overrides(load_config(args.config), args)
    _, val = build_datasets(cfg.data)
    state = nn.load_checkpoint(_checkpoint_for(cfg, args), cfg.network)
    acc, probs = evaluate(state, cfg.network, val)
    out = {"accuracy": acc, "n_samples": len(val), "checkpoint": str(_checkpoint_for(cfg, args))}
    out.update({k: v for k, v in diagnostics_report(probs, val.y).items() if k in ("S", "S_prime", "mean_entropy_bits")})
    dump_json(Path(cfg.output_dir) / "eval.json", out)
    _echo(out)
    return 0


def cmd_diagnose(args):
    cfg = _apply_overrides(load_config(args.config), args)
    _, val = build_datasets(cfg.data)
    state = nn.load_checkpoint(_checkpoint_for(cfg, args), cfg.network)
    _, probs = evaluate(state, cfg.network, val)
    base_probs = None
    if args.baseline_checkpoint:
        base_state = nn.load_checkpoint(args.baseline_checkpoint, cfg.network)
        _, base_probs = evaluate(base_state, cfg.network, val)
    report = diagnostics_report(probs, val.y, baseline_probs=base_probs)
    Path(cfg.output_dir).mkdir(parents=True, exist_ok=True)
    dump_json(Path(cfg.output_dir) / "diagnostics.json", report)
    if args.matrix_csv:
        write_matrix_csv(args.matrix_csv, confusion_mass(probs, val.y, cfg.network.n_classes))
    _echo(report)
    return 0


def default_gradcheck_problem(seed=0):
    rng = np.random.default_rng(seed)
    spec = nn.mlp_spec(6, [8], 5, 3)
    state = nn.init_state(spec, rng)
    X = make_blobs(3, 3, 6, 2.0, 1.0, seed=seed).X
    y = np.repeat(np.arange(3), 3)
    return spec, state, X, y


def cmd_gradcheck(args):
    if args.config:
        cfg = load_config(args.config)
        spec = cfg.network
        rng = np.random.default_rng(args.seed or 0)
        state = nn.init_state(spec, rng)
        X = rng.standard_normal((args.batch,) + spec.input_shape)
        y = rng.integers(0, spec.n_classes, size=args.batch)
    else:
        spec, state, X, y = default_gradcheck_problem(args.seed or 0)
    err = nn.finite_difference_check(spec, state, X, y, epsilon=args.epsilon)
    result = {"max_relative_error": err, "tolerance": args.tolerance, "passed": err < args.tolerance}
    _echo(result)
    return 0 if result["passed"] else 1


def cmd_toy(args):
    f_s = toy.parse_sampler(args.f_sampler)
    t_s = toy.parse_sampler(args.t_sampler)
    res = toy.variance_experiment(f_s, t_s, n=args.n, x=args.x, seed=args.seed or 0)
    out = asdict(res)
    out["tolerance"] = args.tolerance
    out["passed"] = res.relative_gap < args.tolerance or res.predicted_var == res.empirical_var
    if args.m is not None:
        var_fnp, var_ptr = toy.fnp_vs_ptr_variance(f_s, args.m, n=args.n, seed=args.seed or 0)
        out["fnp_vs_ptr"] = {"m": args.m, "var_fnp": var_fnp, "var_ptr": var_ptr, "gap": var_ptr - var_fnp, "predicted_gap": args.m**2 / 3}
    _echo(out)
    return 0 if out["passed"] else 1


def build_parser():
    p = argparse.ArgumentParser(prog="ptrlab", description="Pseudo-task regularization experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="experiment JSON config")
        sp.add_argument("--seed", type=int, help="run only this seed")
        sp.add_argument("--out", help="override output_dir")
        sp.add_argument("--no-weight-decay", action="store_true", help="train without weight decay")

    for name, fn in (("train", cmd_train), ("compare", cmd_compare)):
        sp = sub.add_parser(name)
        common(sp)
        sp.add_argument("--dry-run", action="store_true", help="validate and echo the config only")
        sp.set_defaults(func=fn)

    sp = sub.add_parser("eval")
    common(sp)
    sp.add_argument("--checkpoint", help="default: <output_dir>/seed_<first seed>/checkpoint.bin")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("diagnose")
    common(sp)
    sp.add_argument("--checkpoint")
    sp.add_argument("--baseline-checkpoint")
    sp.add_argument("--matrix-csv", help="also dump the confusion-mass matrix")
    sp.set_defaults(func=cmd_diagnose)

    sp = sub.add_parser("gradcheck")
    common(sp, config_required=False)
    sp.add_argument("--epsilon", type=float, default=1e-6)
    sp.add_argument("--tolerance", type=float, default=1e-4)
    sp.add_argument("--batch", type=int, default=4)
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("toy")
    sp.add_argument("--f-sampler", default="uniform:0:1")
    sp.add_argument("--t-sampler", default="uniform:0:2")
    sp.add_argument("--n", type=int, default=1_000_000)
    sp.add_argument("--x", type=float, default=1.0)
    sp.add_argument("--m", type=float)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--tolerance", type=float, default=0.03)
    sp.set_defaults(func=cmd_toy)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.debug("failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
