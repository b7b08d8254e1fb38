"""Training loop: cross-entropy plus the gated, balanced pseudo-task.

One step:

1. forward pass, per-instance cross-entropy and logits gradient;
2. classifier-head gradients from the cross-entropy path only;
3. if the gate is open, draw fresh pseudo-targets, compute the regression
   gradient at the representation and the balance weight ``w``;
4. inject ``mean(dCE/drep) + w * mean(dPtR/drep)`` at the representation and
   back-propagate through the backbone;
5. SGD with momentum, weight decay folded into the gradient.
"""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from .data import AugmentPolicy, augment_batch
from .diagnostics import mean_entropy_bits
from .regularizer import PtrConfig, balance, gate, generate_pseudo_targets, grad_ce_at_rep, regression_loss

log = logging.getLogger(__name__)

EVAL_CHUNK = 256


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    lr_milestones: tuple | None = None
    lr_decay_factor: float = 0.1
    epochs: int = 30
    batch_size: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be non-negative, got {self.weight_decay}")
        if not 0 < self.lr_decay_factor < 1:
            raise ValueError(f"lr_decay_factor must lie in (0, 1), got {self.lr_decay_factor}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.lr_milestones is not None:
            ms = tuple(int(m) for m in self.lr_milestones)
            if any(b <= a for a, b in zip(ms, ms[1:])):
                raise ValueError(f"lr_milestones must be strictly increasing, got {ms}")
            if ms and (ms[0] < 1 or ms[-1] > max(self.epochs, 1)):
                raise ValueError(f"lr_milestones must lie in [1, epochs], got {ms}")
            object.__setattr__(self, "lr_milestones", ms)

    @property
    def milestones(self):
        if self.lr_milestones is not None:
            return self.lr_milestones
        if self.epochs < 2:
            return ()
        ms = sorted({max(1, round(0.6 * self.epochs)), max(1, round(0.85 * self.epochs))})
        return tuple(m for m in ms if m <= self.epochs)

    def lr_at(self, epoch):
        """Learning rate for 0-based ``epoch``: decayed once per milestone reached."""
        drops = sum(1 for m in self.milestones if epoch >= m)
        return self.lr * self.lr_decay_factor**drops

    def to_dict(self):
        d = asdict(self)
        d["lr_milestones"] = None if self.lr_milestones is None else list(self.lr_milestones)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class BatchStats:
    mean_ce: float
    sum_ce: float
    mean_ptr_loss: float
    n_correct: int
    n: int
    targets: np.ndarray | None = field(default=None, repr=False)


@dataclass
class EpochStats:
    epoch: int
    mean_ce: float
    mean_ptr_loss: float
    mean_w: float
    train_accuracy: float
    val_accuracy: float | None
    val_mean_entropy_bits: float | None
    lr: float
    gate_on: bool


@dataclass
class TrainReport:
    config: dict
    epochs: list
    checkpoint_path: str | None
    wall_clock_seconds: float
    seed: int
    final_state: list = field(default=None, repr=False)
    val_probs: np.ndarray | None = field(default=None, repr=False)

    def metrics(self):
        """Deterministic part of the report (no timing)."""
        return {
            "seed": self.seed,
            "config": self.config,
            "checkpoint_path": self.checkpoint_path,
            "epochs": [asdict(e) for e in self.epochs],
        }

    def write_csv(self, path):
        cols = list(EpochStats.__dataclass_fields__)
        lines = [",".join(cols)]
        for e in self.epochs:
            row = asdict(e)
            lines.append(",".join("" if row[c] is None else repr(row[c]) if isinstance(row[c], float) else str(row[c]) for c in cols))
        with open(path, "w") as f:
            f.write("\n".join(lines) + "\n")


def sgd_update(params, grads, lr, momentum, weight_decay):
    """``v <- mu*v + g + wd*theta``; ``theta <- theta - lr*v`` (in place)."""
    dw, db = grads
    params.vel_w *= momentum
    params.vel_w += dw + weight_decay * params.weights
    params.vel_b *= momentum
    params.vel_b += db + weight_decay * params.biases
    params.weights -= lr * params.vel_w
    params.biases -= lr * params.vel_b


def compute_gradients(spec, state, batch, labels, ptr_config, gate_on, rng, target_rng=None, batch_index=0):
    """Gradients of one step without touching parameters.

    Returns ``(grads, trace, stats, record)``; ``grads`` is aligned with
    ``spec.layers`` and already batch-mean scaled.
    """
    target_rng = rng if target_rng is None else target_rng
    labels = np.asarray(labels)
    trace = nn.forward(spec, state, batch, train_mode=True, rng=rng)
    ce, g_logits = nn.softmax_cross_entropy(trace.logits, labels)
    if not np.all(np.isfinite(ce)):
        raise TrainingError(f"non-finite cross-entropy loss at batch {batch_index}")
    n = len(labels)
    head = state[-1]

    g_rep_ce = grad_ce_at_rep(head.weights, g_logits)
    use_ptr = ptr_config.enabled and gate_on
    targets = None
    ptr_mean = 0.0
    if use_ptr:
        targets = generate_pseudo_targets(n, spec.rep_dim, ptr_config.m, target_rng)
        ptr_loss, g_rep_ptr = regression_loss(trace.rep, targets, ptr_config.loss_kind)
        record = balance(g_rep_ce, g_rep_ptr, ptr_config, gated_on=True)
        if not np.all(np.isfinite(ptr_loss)):
            raise TrainingError(f"non-finite pseudo-task loss at batch {batch_index}")
        ptr_mean = float(ptr_loss.mean())
    else:
        g_rep_ptr = np.zeros_like(g_rep_ce)
        record = balance(g_rep_ce, g_rep_ptr, ptr_config, gated_on=False)

    grad_at_rep = g_rep_ce / n
    if record.gated_on:
        grad_at_rep = grad_at_rep + record.w * (g_rep_ptr / n)
    grads = nn.backward_from_rep(spec, state, trace, grad_at_rep)
    grads[-1] = nn.head_gradients(trace, g_logits / n)

    correct = int(np.sum(np.argmax(trace.logits, axis=1) == labels))
    stats = BatchStats(float(ce.mean()), float(ce.sum()), ptr_mean, correct, n, targets)
    return grads, trace, stats, record


def train_batch(spec, state, batch, labels, ptr_config, opt_config, gate_on, rng, lr=None, target_rng=None, batch_index=0):
    """One optimisation step; ``state`` is updated in place and returned."""
    grads, _, stats, record = compute_gradients(
        spec, state, batch, labels, ptr_config, gate_on, rng, target_rng, batch_index
    )
    lr = opt_config.lr if lr is None else lr
    for params, g in zip(state, grads):
        if params is not None:
            sgd_update(params, g, lr, opt_config.momentum, opt_config.weight_decay)
    return state, stats, record


def _eval_threads():
    try:
        return max(1, int(os.environ.get("PTRLAB_THREADS", "1")))
    except ValueError:
        return 1


def predict_proba(state, spec, X):
    """Eval-mode softmax probabilities, in fixed-size chunks.

    Chunks are fixed regardless of thread count, so results are bit-identical
    for any ``PTRLAB_THREADS``.
    """
    X = np.asarray(X, dtype=np.float64)
    if len(X) == 0:
        return np.zeros((0, spec.n_classes))
    chunks = [X[i : i + EVAL_CHUNK] for i in range(0, len(X), EVAL_CHUNK)]
    run = lambda xb: nn.softmax(nn.forward(spec, state, xb, train_mode=False).logits)  # noqa: E731
    threads = min(_eval_threads(), len(chunks))
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(c) for c in chunks]
    return np.concatenate(parts)


def evaluate(state, spec, dataset):
    """Argmax accuracy and the per-sample probability matrix."""
    probs = predict_proba(state, spec, dataset.X)
    if len(dataset) == 0:
        return 0.0, probs
    return float(np.mean(np.argmax(probs, axis=1) == dataset.y)), probs


@dataclass
class RunStreams:
    """Independent random streams so paired runs share init, order and dropout."""

    init: np.random.Generator
    shuffle: np.random.Generator
    dropout: np.random.Generator
    targets: np.random.Generator
    augment: np.random.Generator

    @classmethod
    def from_seed(cls, seed):
        return cls(*(np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(5)))


def run_training(
    train,
    val,
    spec,
    ptr_config=None,
    opt_config=None,
    init=None,
    augment_policy=None,
    checkpoint_path=None,
    config_echo=None,
):
    """Run every epoch and return a :class:`TrainReport`.

    The gate opens once a previous epoch's mean training CE falls below
    ``ptr_config.T`` and stays open. The final checkpoint is the last-epoch
    state.
    """
    ptr_config = ptr_config or PtrConfig(loss_kind=None)
    opt_config = opt_config or OptimizerConfig()
    augment_policy = augment_policy or AugmentPolicy()
    if len(train) == 0:
        raise ValueError("training set is empty")
    if train.sample_shape != spec.input_shape:
        raise nn.ShapeError(f"data sample shape {train.sample_shape} != network input {spec.input_shape}")
    streams = RunStreams.from_seed(opt_config.seed)
    state = nn.init_state(spec, streams.init) if init is None else nn.copy_state(init)
    nn.check_state(spec, state)

    t0 = time.perf_counter()
    epochs = []
    prev_ce, latched = None, False
    bs = opt_config.batch_size
    val_probs = None
    for epoch in range(opt_config.epochs):
        latched = gate(prev_ce, ptr_config.T, latched) if ptr_config.enabled else False
        lr = opt_config.lr_at(epoch)
        order = streams.shuffle.permutation(len(train))
        sum_ce, n_seen, n_correct, ptr_losses, ws = 0.0, 0, 0, [], []
        for b, start in enumerate(range(0, len(order), bs)):
            idx = order[start : start + bs]
            xb = augment_batch(train.X[idx], augment_policy, streams.augment)
            _, stats, record = train_batch(
                spec, state, xb, train.y[idx], ptr_config, opt_config, latched,
                streams.dropout, lr=lr, target_rng=streams.targets, batch_index=b,
            )
            sum_ce += stats.sum_ce
            n_seen += stats.n
            n_correct += stats.n_correct
            ws.append(record.w)
            if record.gated_on:
                ptr_losses.append(stats.mean_ptr_loss)
        mean_ce = sum_ce / n_seen
        val_acc = val_ent = None
        if val is not None and len(val):
            val_acc, val_probs = evaluate(state, spec, val)
            val_ent = mean_entropy_bits(val_probs)
        epochs.append(
            EpochStats(
                epoch=epoch,
                mean_ce=mean_ce,
                mean_ptr_loss=float(np.mean(ptr_losses)) if ptr_losses else 0.0,
                mean_w=float(np.mean(ws)),
                train_accuracy=n_correct / n_seen,
                val_accuracy=val_acc,
                val_mean_entropy_bits=val_ent,
                lr=lr,
                gate_on=latched,
            )
        )
        log.info("epoch %d ce=%.4f train_acc=%.3f val_acc=%s gate=%s", epoch, mean_ce, n_correct / n_seen, val_acc, latched)
        prev_ce = mean_ce

    if val is not None and len(val) and val_probs is None:
        _, val_probs = evaluate(state, spec, val)
    if checkpoint_path is not None:
        nn.save_checkpoint(checkpoint_path, state)
    echo = config_echo if config_echo is not None else {
        "network": spec.to_dict(), "optimizer": opt_config.to_dict(), "ptr": ptr_config.to_dict(),
    }
    return TrainReport(
        config=echo,
        epochs=epochs,
        checkpoint_path=None if checkpoint_path is None else str(checkpoint_path),
        wall_clock_seconds=time.perf_counter() - t0,
        seed=opt_config.seed,
        final_state=state,
        val_probs=val_probs,
    )
