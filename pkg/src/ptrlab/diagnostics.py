"""Prediction analysis: confusion-mass matrices, entropy, rectification sets."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class ConfusionMass:
    """``C[y]`` accumulates the predicted probability rows of samples labelled ``y``."""

    C: np.ndarray
    n_samples: int


@dataclass
class RectificationReport:
    true_rectified: list
    false_rectified: list
    both_correct: list
    both_wrong: list

    def counts(self):
        return {k: len(v) for k, v in self.__dict__.items()}


def _check_probs(probs, tol=1e-9):
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2:
        raise ValueError(f"probabilities must be an (N, D) matrix, got shape {probs.shape}")
    sums = probs.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums - 1.0) > tol)
    if bad.size:
        raise ValueError(f"probability row {bad[0]} sums to {sums[bad[0]]!r}, not 1")
    if (probs < 0).any():
        raise ValueError("probabilities must be non-negative")
    return probs


def confusion_mass(probs, labels, n_classes=None):
    probs = _check_probs(probs)
    labels = np.asarray(labels, dtype=np.int64)
    d = probs.shape[1] if n_classes is None else n_classes
    C = np.zeros((d, d))
    np.add.at(C, labels, probs)
    return ConfusionMass(C, len(labels))


def diag_mass(cm):
    """Total probability mass on the correct class (diagonal sum)."""
    C = cm.C if isinstance(cm, ConfusionMass) else np.asarray(cm)
    return float(np.trace(C))


def offdiag_mass(cm):
    C = cm.C if isinstance(cm, ConfusionMass) else np.asarray(cm)
    return float(C.sum() - np.trace(C))


def entropy_bits(probs):
    """Per-row entropy in bits with ``0 log 0 = 0``."""
    p = np.asarray(probs, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log2(p), 0.0)
    return -terms.sum(axis=1)


def mean_entropy_bits(probs):
    return float(entropy_bits(probs).mean())


def predictions(probs):
    # np.argmax breaks ties toward the lowest class index
    return np.argmax(np.asarray(probs), axis=1)


def rectification(probs_a, probs_b, labels):
    """Compare regularized model ``a`` against baseline ``b`` sample by sample.

    True rectification: ``a`` right where ``b`` is wrong; false rectification
    is the reverse.
    """
    probs_a, probs_b = np.asarray(probs_a), np.asarray(probs_b)
    if probs_a.shape != probs_b.shape:
        raise ValueError(f"shape mismatch {probs_a.shape} vs {probs_b.shape}")
    labels = np.asarray(labels)
    ok_a = predictions(probs_a) == labels
    ok_b = predictions(probs_b) == labels
    idx = lambda m: np.flatnonzero(m).tolist()  # noqa: E731
    return RectificationReport(
        true_rectified=idx(ok_a & ~ok_b),
        false_rectified=idx(~ok_a & ok_b),
        both_correct=idx(ok_a & ok_b),
        both_wrong=idx(~ok_a & ~ok_b),
    )


def error_rate_reduction(baseline_accuracy, regularized_accuracy):
    """Accuracy gain as a fraction of the baseline error rate."""
    return (regularized_accuracy - baseline_accuracy) / (1.0 - baseline_accuracy)


def diagnostics_report(probs, labels, baseline_probs=None):
    """JSON-ready summary of one model, optionally against a baseline."""
    cm = confusion_mass(probs, labels)
    report = {
        "S": diag_mass(cm),
        "S_prime": offdiag_mass(cm),
        "mean_entropy_bits": mean_entropy_bits(probs),
        "accuracy": float(np.mean(predictions(probs) == np.asarray(labels))),
        "n_samples": cm.n_samples,
    }
    if baseline_probs is not None:
        base_cm = confusion_mass(baseline_probs, labels)
        rect = rectification(probs, baseline_probs, labels)
        report["baseline"] = {
            "S": diag_mass(base_cm),
            "S_prime": offdiag_mass(base_cm),
            "mean_entropy_bits": mean_entropy_bits(baseline_probs),
            "accuracy": float(np.mean(predictions(baseline_probs) == np.asarray(labels))),
        }
        report["rectification"] = {"counts": rect.counts(), "indices": rect.__dict__}
    return report


def write_matrix_csv(path, cm):
    C = cm.C if isinstance(cm, ConfusionMass) else np.asarray(cm)
    np.savetxt(path, C, delimiter=",", fmt="%.17g")
