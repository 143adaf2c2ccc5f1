"""Mini-batch training with SGD-momentum or ADAM, early stopping on val loss,
and test-set evaluation.

Every train() call is sequential and owns its params, optimizer state and RNG,
so several calls may run concurrently on shared read-only data. Execution is
always deterministic in (arch, data, cfg); there is no non-reference mode.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .dataio import WindowSet
from .netcore import (
    ArchConfig,
    ModelParams,
    init_params,
    mean_bce,
    model_backward,
    model_forward,
    predict,
)

OPTIMIZERS = ("sgd", "adam")
DATASET_VARIANTS = ("complete", "cleaned")


class TrainingError(RuntimeError):
    """Training aborted (e.g. non-finite gradients); grid runs mark the member failed."""


@dataclass
class TrainConfig:
    optimizer: str = "sgd"
    learning_rate: float = 0.01  # values in [0.007, 0.015] behave similarly
    momentum: float = 0.8
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 0.01
    batch_size: int = 512
    max_epochs: int = 100
    patience: int = 10
    dropout_enabled: bool = False
    dataset_variant: str = "complete"
    seed: int = 0

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if self.dataset_variant not in DATASET_VARIANTS:
            raise ValueError(f"dataset_variant must be one of {DATASET_VARIANTS}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class SgdState:
    velocity: dict = field(default_factory=dict)  # name -> float64 buffer

    @classmethod
    def init(cls, params: ModelParams) -> "SgdState":
        return cls({n: np.zeros(t.shape, dtype=np.float64) for n, t in params.tensors().items()})


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0

    @classmethod
    def init(cls, params: ModelParams) -> "AdamState":
        zeros = lambda: {n: np.zeros(t.shape, dtype=np.float64) for n, t in params.tensors().items()}
        return cls(m=zeros(), v=zeros(), t=0)


def _check_finite(grads: dict, context: str):
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise TrainingError(f"non-finite gradient in {name} ({context})")


def sgd_step(params: ModelParams, grads: dict, state: SgdState,
             lr: float, momentum: float):
    """v <- momentum*v + g;  p <- p - lr*v  (in place)."""
    _check_finite(grads, "sgd_step")
    for name, tensor in params.tensors().items():
        v = state.velocity[name]
        v *= momentum
        v += grads[name]
        np.subtract(tensor, lr * v, out=tensor, casting="same_kind")


def adam_step(params: ModelParams, grads: dict, state: AdamState,
              lr: float, beta1: float, beta2: float, eps: float):
    """Standard ADAM with bias correction; epsilon added outside the sqrt."""
    _check_finite(grads, "adam_step")
    state.t += 1
    t = state.t
    for name, tensor in params.tensors().items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        np.subtract(tensor, lr * m_hat / (np.sqrt(v_hat) + eps), out=tensor,
                    casting="same_kind")


def epoch_batches(rng: np.random.Generator, n: int, batch_size: int):
    """Seeded permutation of [0, n) cut into batches; the short tail batch is kept,
    so every epoch visits each sample exactly once."""
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start : start + batch_size]


@dataclass
class TrainRecord:
    train_losses: list = field(default_factory=list)
    val_losses: list = field(default_factory=list)
    val_accuracies: list = field(default_factory=list)  # None per epoch when stubbed
    best_epoch: int = 0  # 1-based
    stop_reason: str = ""  # "patience" | "max_epochs"

    @property
    def epochs_run(self) -> int:
        return len(self.val_losses)

    def to_json(self) -> dict:
        return {
            "train_losses": self.train_losses,
            "val_losses": self.val_losses,
            "val_accuracies": self.val_accuracies,
            "best_epoch": self.best_epoch,
            "best_val_loss": min(self.val_losses) if self.val_losses else None,
            "stop_reason": self.stop_reason,
            "epochs_run": self.epochs_run,
        }


def train(
    arch: ArchConfig,
    train_set: WindowSet,
    val_set: WindowSet,
    cfg: TrainConfig,
    eval_hook: Optional[Callable[[ModelParams, int], float]] = None,
) -> tuple[ModelParams, TrainRecord]:
    """Train one model; returns the best-val-loss snapshot, never the last epoch.

    The train set is expected to be augmented already; the val set untouched.
    Stops after ``cfg.patience`` consecutive epochs without a strictly lower
    val loss, or at ``cfg.max_epochs``. ``eval_hook(params, epoch)`` replaces
    the real val-loss computation in tests.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("empty train or val split")
    if arch.dropout_enabled != cfg.dropout_enabled:
        raise ValueError("arch.dropout_enabled and cfg.dropout_enabled disagree")

    seed_seq = np.random.SeedSequence(cfg.seed)
    init_ss, shuffle_ss, dropout_ss = seed_seq.spawn(3)
    params = init_params(arch, init_ss)
    shuffle_rng = np.random.default_rng(shuffle_ss)
    dropout_rng = np.random.default_rng(dropout_ss)

    if cfg.optimizer == "sgd":
        state: SgdState | AdamState = SgdState.init(params)
    else:
        state = AdamState.init(params)

    x_train = train_set.values
    y_train = train_set.y()
    x_val = val_set.values
    y_val = val_set.y()
    n = len(x_train)

    record = TrainRecord()
    best_loss = np.inf
    best_params = params.copy()
    stall = 0

    for epoch in range(1, cfg.max_epochs + 1):
        loss_sum = 0.0
        for idx in epoch_batches(shuffle_rng, n, cfg.batch_size):
            xb, yb = x_train[idx], y_train[idx]
            p, cache = model_forward(params, xb, mode="train", rng=dropout_rng)
            grads = model_backward(params, cache, yb)
            if cfg.optimizer == "sgd":
                sgd_step(params, grads, state, cfg.learning_rate, cfg.momentum)
            else:
                adam_step(params, grads, state, cfg.learning_rate,
                          cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon)
            loss_sum += mean_bce(p, yb) * len(idx)
        record.train_losses.append(loss_sum / n)

        if eval_hook is not None:
            val_loss = float(eval_hook(params, epoch))
            val_acc = None
        else:
            p_val = predict(params, x_val)
            val_loss = mean_bce(p_val, y_val)
            val_acc = float(np.mean((p_val >= 0.5) == (y_val == 1.0)))
        record.val_losses.append(val_loss)
        record.val_accuracies.append(val_acc)

        if val_loss < best_loss:  # "improving" = strictly lower, no min-delta
            best_loss = val_loss
            best_params = params.copy()
            record.best_epoch = epoch
            stall = 0
        else:
            stall += 1
            if stall >= cfg.patience:
                record.stop_reason = "patience"
                return best_params, record

    record.stop_reason = "max_epochs"
    return best_params, record


@dataclass
class EvalResult:
    accuracy: float
    confusion: np.ndarray  # 2x2 ints; rows true, cols predicted; index 0=Up, 1=Down
    predictions: np.ndarray

    def to_json(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "confusion": self.confusion.tolist(),
            "n": int(self.confusion.sum()),
        }


def evaluate(params: ModelParams, window_set: WindowSet) -> EvalResult:
    """Eval-mode accuracy and confusion matrix; p >= 0.5 classifies as Up."""
    if len(window_set) == 0:
        raise ValueError("cannot evaluate an empty set")
    y = window_set.y()  # also rejects undecidable labels
    p = predict(params, window_set.values)
    pred_up = p >= 0.5
    true_up = y == 1.0
    confusion = np.zeros((2, 2), dtype=np.int64)
    confusion[0, 0] = np.sum(true_up & pred_up)
    confusion[0, 1] = np.sum(true_up & ~pred_up)
    confusion[1, 0] = np.sum(~true_up & pred_up)
    confusion[1, 1] = np.sum(~true_up & ~pred_up)
    accuracy = float((confusion[0, 0] + confusion[1, 1]) / len(y))
    return EvalResult(accuracy=accuracy, confusion=confusion, predictions=p)


def mean_accuracy(accuracies) -> tuple[float, float]:
    """Arithmetic mean and sample (n-1) standard deviation."""
    accs = [float(a) for a in accuracies]
    if len(accs) < 2:
        raise ValueError("need at least 2 accuracies for mean +/- std")
    mean = float(np.mean(accs))
    std = float(np.std(accs, ddof=1))
    return mean, std
