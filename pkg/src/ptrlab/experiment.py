"""Experiment configs and multi-seed runners (train, paired compare)."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import nn
from .data import AugmentPolicy, load_csv, load_idx, make_blobs, split_train_val
from .diagnostics import diagnostics_report, error_rate_reduction
from .regularizer import PtrConfig
from .trainer import OptimizerConfig, RunStreams, run_training

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Malformed experiment config; the message names the offending field."""


REQUIRED = ("network", "optimizer", "data", "seeds", "output_dir")
DATA_KEYS = {
    "blobs": {
        "required": ("n_classes", "n_per_class", "dim", "class_separation", "noise_sigma"),
        "optional": ("seed", "n_val_per_class", "val_fraction", "split_seed"),
    },
    "idx": {"required": ("images", "labels"), "optional": ("n_classes", "val_fraction", "split_seed")},
    "csv": {"required": ("path",), "optional": ("n_classes", "val_fraction", "split_seed")},
}


@dataclass(frozen=True)
class ExperimentConfig:
    network: nn.NetworkSpec
    optimizer: OptimizerConfig
    ptr: PtrConfig
    data: dict
    augment: AugmentPolicy = AugmentPolicy()
    seeds: tuple = (0,)
    output_dir: str = "runs"

    def to_dict(self):
        opt = self.optimizer.to_dict()
        opt.pop("seed")
        return {
            "network": self.network.to_dict(),
            "optimizer": opt,
            "ptr": self.ptr.to_dict(),
            "data": dict(self.data),
            "augment": {"flip_horizontal": self.augment.flip_horizontal, "max_shift_pixels": self.augment.max_shift_pixels},
            "seeds": list(self.seeds),
            "output_dir": self.output_dir,
        }

    def for_seed(self, seed):
        return replace(self.optimizer, seed=seed)


def _section(d, key, path):
    val = d[key]
    if not isinstance(val, dict):
        raise ConfigError(f"{path}{key}: expected an object")
    return val


def parse_config(d):
    """Validate a config dict; raise :class:`ConfigError` naming the bad field."""
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    for key in REQUIRED:
        if key not in d:
            raise ConfigError(f"missing required key: {key}")
    unknown = set(d) - set(REQUIRED) - {"ptr", "augment"}
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    try:
        network = nn.NetworkSpec.from_dict(_section(d, "network", ""))
    except KeyError as exc:
        raise ConfigError(f"missing required key: network.{exc.args[0]}") from None
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"network: {exc}") from None

    opt_d = dict(_section(d, "optimizer", ""))
    opt_d.pop("seed", None)
    try:
        optimizer = OptimizerConfig(**opt_d)
    except TypeError as exc:
        raise ConfigError(f"optimizer: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"optimizer: {exc}") from None

    ptr_d = d.get("ptr")
    try:
        ptr = PtrConfig(loss_kind=None) if ptr_d is None else PtrConfig.from_dict({"loss_kind": None, **ptr_d})
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"ptr: {exc}") from None

    data = dict(_section(d, "data", ""))
    source = data.get("source")
    if source is None:
        raise ConfigError("missing required key: data.source")
    if source not in DATA_KEYS:
        raise ConfigError(f"data.source: must be one of {sorted(DATA_KEYS)}, got {source!r}")
    spec = DATA_KEYS[source]
    for key in spec["required"]:
        if key not in data:
            raise ConfigError(f"missing required key: data.{key}")
    unknown = set(data) - {"source"} - set(spec["required"]) - set(spec["optional"])
    if unknown:
        raise ConfigError(f"data: unknown keys {sorted(unknown)}")

    aug_d = d.get("augment") or {}
    try:
        augment = AugmentPolicy(**aug_d)
    except TypeError as exc:
        raise ConfigError(f"augment: {exc}") from None

    seeds = d["seeds"]
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) and s >= 0 for s in seeds):
        raise ConfigError("seeds: expected a non-empty list of non-negative integers")
    if not isinstance(d["output_dir"], str) or not d["output_dir"]:
        raise ConfigError("output_dir: expected a non-empty path string")
    return ExperimentConfig(network, optimizer, ptr, data, augment, tuple(seeds), d["output_dir"])


def load_config(path):
    try:
        with open(path) as f:
            raw = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    return parse_config(raw)


def build_datasets(data):
    """Train and validation splits for a data descriptor."""
    source = data["source"]
    val_fraction = data.get("val_fraction", 0.1)
    split_seed = data.get("split_seed", 0)
    if source == "blobs":
        args = [data[k] for k in ("n_classes", "n_per_class", "dim", "class_separation", "noise_sigma")]
        seed = data.get("seed", 0)
        full = make_blobs(*args, seed=seed)
        if data.get("n_val_per_class"):
            val_args = list(args)
            val_args[1] = data["n_val_per_class"]
            val = make_blobs(*val_args, seed=seed, sample_seed=seed + 1, split="val")
            return full, val
        return split_train_val(full, val_fraction, split_seed)
    if source == "idx":
        full = load_idx(data["images"], data["labels"], data.get("n_classes"))
    else:
        full = load_csv(data["path"], data.get("n_classes"))
    return split_train_val(full, val_fraction, split_seed)


def dump_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_run(run_dir, report):
    run_dir.mkdir(parents=True, exist_ok=True)
    dump_json(run_dir / "report.json", report.metrics())
    report.write_csv(run_dir / "epochs.csv")
    dump_json(run_dir / "timing.json", {"wall_clock_seconds": report.wall_clock_seconds})


def train_seeds(cfg, datasets=None):
    """One run per seed under ``output_dir/seed_<k>/``; returns the reports."""
    train, val = datasets or build_datasets(cfg.data)
    out = Path(cfg.output_dir)
    reports = []
    for seed in cfg.seeds:
        run_dir = out / f"seed_{seed}"
        run_dir.mkdir(parents=True, exist_ok=True)
        report = run_training(
            train, val, cfg.network, cfg.ptr, cfg.for_seed(seed),
            augment_policy=cfg.augment, checkpoint_path=run_dir / "checkpoint.bin", config_echo=cfg.to_dict(),
        )
        _write_run(run_dir, report)
        reports.append(report)
    return reports


def _mean_std(xs):
    xs = np.asarray(xs, dtype=np.float64)
    return float(xs.mean()), float(xs.std(ddof=1)) if len(xs) > 1 else 0.0


def compare(cfg, datasets=None, write=True):
    """Paired baseline-vs-PtR runs per seed, with diagnostics and aggregates.

    Both arms of a seed share initial weights, shuffle order, dropout masks
    and augmentation draws; only the pseudo-task differs.
    """
    train, val = datasets or build_datasets(cfg.data)
    if val is None or len(val) == 0:
        raise ConfigError("data: compare needs a non-empty validation split")
    out = Path(cfg.output_dir)
    baseline_ptr = PtrConfig(cfg.ptr.R, cfg.ptr.m, cfg.ptr.T, None, cfg.ptr.epsilon_norm)
    per_seed = []
    for seed in cfg.seeds:
        opt = cfg.for_seed(seed)
        init = nn.init_state(cfg.network, RunStreams.from_seed(seed).init)
        runs = {}
        for arm, ptr in (("baseline", baseline_ptr), ("ptr", cfg.ptr)):
            run_dir = out / f"seed_{seed}" / arm
            if write:
                run_dir.mkdir(parents=True, exist_ok=True)
            runs[arm] = run_training(
                train, val, cfg.network, ptr, opt, init=init, augment_policy=cfg.augment,
                checkpoint_path=(run_dir / "checkpoint.bin") if write else None, config_echo=cfg.to_dict(),
            )
            if write:
                _write_run(run_dir, runs[arm])
        diag = diagnostics_report(runs["ptr"].val_probs, val.y, baseline_probs=runs["baseline"].val_probs)
        if write:
            dump_json(out / f"seed_{seed}" / "diagnostics.json", diag)
        per_seed.append(
            {
                "seed": seed,
                "baseline_accuracy": diag["baseline"]["accuracy"],
                "ptr_accuracy": diag["accuracy"],
                "baseline_entropy_bits": diag["baseline"]["mean_entropy_bits"],
                "ptr_entropy_bits": diag["mean_entropy_bits"],
                "entropy_delta_bits": diag["mean_entropy_bits"] - diag["baseline"]["mean_entropy_bits"],
                "S_baseline": diag["baseline"]["S"],
                "S_ptr": diag["S"],
                "rectification": diag["rectification"]["counts"],
                "epoch0_ce": [runs["baseline"].epochs[0].mean_ce, runs["ptr"].epochs[0].mean_ce] if runs["ptr"].epochs else None,
            }
        )
    report = summarize(per_seed, cfg)
    if write:
        dump_json(out / "comparison.json", report)
    return report


def summarize(per_seed, cfg=None):
    base_mean, base_std = _mean_std([p["baseline_accuracy"] for p in per_seed])
    ptr_mean, ptr_std = _mean_std([p["ptr_accuracy"] for p in per_seed])
    gain = ptr_mean - base_mean
    return {
        "config": None if cfg is None else cfg.to_dict(),
        "per_seed": per_seed,
        "baseline_mean": base_mean,
        "baseline_std": base_std,
        "ptr_mean": ptr_mean,
        "ptr_std": ptr_std,
        "accuracy_gain": gain,
        "error_rate_reduction": error_rate_reduction(base_mean, ptr_mean) if base_mean < 1 else 0.0,
        "mean_entropy_delta_bits": float(np.mean([p["entropy_delta_bits"] for p in per_seed])),
        "seeds_with_entropy_decrease": int(sum(p["entropy_delta_bits"] <= 0 for p in per_seed)),
    }
