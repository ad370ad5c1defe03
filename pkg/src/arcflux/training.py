"""Adam training loop: loss, gradients, schedule, and checkpointed fit.

The loop is deterministic for a fixed TrainConfig.seed: batch order,
dropout masks, and therefore every parameter update replay exactly.
Validation runs once per epoch in eval mode, and the best parameters by
validation accuracy (ties broken by lower validation loss) are snapshot
in memory and, when a path is given, written as a checkpoint.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, NumericalError
from .fas import FasFeatures
from .model import ModelParams, _assemble, forward_batch, save_checkpoint

__all__ = [
    "TrainConfig",
    "TrainState",
    "EpochRecord",
    "cross_entropy",
    "backward",
    "grad_global_norm",
    "clip_grads_",
    "adam_step",
    "lr_at",
    "init_state",
    "clone_params",
    "cast_params_",
    "evaluate",
    "fit",
    "history_table",
]

LR_SCHEDULES = ("cosine-decay", "constant")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 128
    lr: float = 1e-4
    lr_min: float = 1e-6
    lr_schedule: str = "cosine-decay"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip: float = 1.0
    seed: int = 0
    dtype: str = "float64"      # "float32" halves memory traffic on this CPU

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if self.lr < 0 or self.lr_min < 0:
            raise ConfigError("learning rates must be non-negative")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ConfigError(f"lr_schedule must be one of {LR_SCHEDULES}")
        if not 0.0 <= self.beta1 < 1.0 or not 0.0 <= self.beta2 < 1.0:
            raise ConfigError("betas must lie in [0, 1)")
        if self.eps <= 0:
            raise ConfigError("eps must be positive")
        if self.grad_clip <= 0:
            raise ConfigError("grad_clip must be positive")
        if self.dtype not in ("float64", "float32"):
            raise ConfigError("dtype must be float64 or float32")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in sorted(self.__dataclass_fields__)}


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_acc: float
    lr: float
    wall_ms: float


@dataclass
class TrainState:
    params: ModelParams
    adam_m: dict[str, np.ndarray]
    adam_v: dict[str, np.ndarray]
    step: int = 0
    rng_state: dict | None = None
    history: list[EpochRecord] = field(default_factory=list)
    best_params: ModelParams | None = None
    best_epoch: int = 0
    best_val_acc: float = -1.0
    best_val_loss: float = math.inf


def cross_entropy(logits, label: int) -> float:
    """Softmax cross-entropy of one logit pair against a hard label.

    Evaluated through log-sum-exp, so a 20-logit margin still returns the
    true ~2e-9 loss instead of rounding to zero.
    """
    z = np.asarray(logits, dtype=np.float64)
    if z.shape != (2,):
        raise ValueError(f"expected a logit pair, got shape {z.shape}")
    if label not in (0, 1):
        raise ValueError("label must be 0 or 1")
    return float(np.logaddexp(z[0], z[1]) - z[label])


def _as_matrix(batch) -> np.ndarray:
    if isinstance(batch, np.ndarray):
        return batch
    return np.stack([b.values if isinstance(b, FasFeatures) else np.asarray(b) for b in batch])


def backward(
    params: ModelParams,
    batch,
    labels,
    *,
    dropout_rng: np.random.Generator | None = None,
    reuse_buffers: bool = False,
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean batch loss plus gradients keyed like ModelParams.named_tensors().

    The returned arrays are the parameters' live .grad buffers; they stay
    valid until the next zero_grad / backward call on the same params.
    """
    x = _as_matrix(batch)
    y = np.asarray(labels, dtype=np.int64)
    if y.shape != (x.shape[0],):
        raise ConfigError(f"labels shape {y.shape} does not match batch of {x.shape[0]}")
    params.zero_grad()
    logits = forward_batch(
        params,
        x,
        train=dropout_rng is not None,
        dropout_rng=dropout_rng,
        reuse_buffers=reuse_buffers,
    )
    loss = ad.softmax_cross_entropy(logits, y)
    loss.backward()
    grads = {name: t.grad for name, t in params.named_tensors()}
    return float(loss.data), grads


def grad_global_norm(grads: dict[str, np.ndarray]) -> float:
    total = 0.0
    for g in grads.values():
        total += float(np.dot(g.ravel(), g.ravel()))
    return math.sqrt(total)


def clip_grads_(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients in place onto the max_norm ball; returns the raw norm."""
    norm = grad_global_norm(grads)
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def lr_at(cfg: TrainConfig, step: int, total_steps: int) -> float:
    """Learning rate for optimizer step `step` (0-based) of a total_steps run."""
    if cfg.lr_schedule == "constant":
        return cfg.lr
    if total_steps <= 1:
        return cfg.lr
    progress = min(max(step, 0), total_steps - 1) / (total_steps - 1)
    return cfg.lr_min + 0.5 * (cfg.lr - cfg.lr_min) * (1.0 + math.cos(math.pi * progress))


def init_state(params: ModelParams, cfg: TrainConfig | None = None) -> TrainState:
    adam_m = {name: np.zeros_like(t.data) for name, t in params.named_tensors()}
    adam_v = {name: np.zeros_like(t.data) for name, t in params.named_tensors()}
    return TrainState(params=params, adam_m=adam_m, adam_v=adam_v)


def adam_step(state: TrainState, grads: dict[str, np.ndarray], lr: float, cfg: TrainConfig) -> None:
    """One bias-corrected Adam update at learning rate lr; bumps state.step."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - cfg.beta1 ** t
    bc2 = 1.0 - cfg.beta2 ** t
    for name, tensor in state.params.named_tensors():
        if name not in grads:
            raise ConfigError(f"gradient dict missing entry for {name}")
        g = grads[name]
        if g.shape != tensor.data.shape:
            raise ConfigError(f"gradient for {name} has shape {g.shape}, param {tensor.data.shape}")
        m = state.adam_m[name]
        v = state.adam_v[name]
        np.multiply(m, cfg.beta1, out=m)
        m += (1.0 - cfg.beta1) * g
        np.multiply(v, cfg.beta2, out=v)
        v += (1.0 - cfg.beta2) * np.square(g)
        tensor.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)


def clone_params(params: ModelParams) -> ModelParams:
    tensors = {
        name: Tensor(t.data.copy(), requires_grad=True) for name, t in params.named_tensors()
    }
    return _assemble(params.config, tensors)


def cast_params_(params: ModelParams, dtype) -> None:
    """Re-type every parameter tensor in place (checkpoints stay 64-bit)."""
    dtype = np.dtype(dtype)
    for _, t in params.named_tensors():
        t.data = np.ascontiguousarray(t.data, dtype=dtype)


def evaluate(
    params: ModelParams, x, labels, batch_size: int = 128
) -> tuple[float, float]:
    """(mean loss, accuracy) over a labeled set in eval mode."""
    x = _as_matrix(x)
    y = np.asarray(labels, dtype=np.int64)
    n = x.shape[0]
    if n == 0:
        raise ConfigError("cannot evaluate on an empty set")
    loss_sum = 0.0
    hits = 0
    with ad.no_grad():
        for lo in range(0, n, batch_size):
            xb = x[lo:lo + batch_size]
            yb = y[lo:lo + batch_size]
            logits = forward_batch(params, xb)
            loss = ad.softmax_cross_entropy(logits, yb)
            loss_sum += float(loss.data) * xb.shape[0]
            hits += int(np.sum(np.argmax(logits.data, axis=1) == yb))
    return loss_sum / n, hits / n


def fit(
    params: ModelParams,
    train_x,
    train_y,
    val_x,
    val_y,
    cfg: TrainConfig,
    *,
    checkpoint_path=None,
    log=None,
) -> TrainState:
    """Train params in place; returns the state with history and best snapshot.

    log, when given, is called with one formatted line per epoch.
    """
    x = _as_matrix(train_x)
    y = np.asarray(train_y, dtype=np.int64)
    if x.shape[0] != y.shape[0] or x.shape[0] == 0:
        raise ConfigError("training set is empty or mislabeled")
    cast_params_(params, cfg.dtype)
    state = init_state(params, cfg)
    n = x.shape[0]
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    rng = np.random.default_rng(cfg.seed)
    needs_dropout = params.config.head_kind == "linear-dropout"
    dropout_rng = np.random.default_rng(cfg.seed + 1) if needs_dropout else None
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        epoch_lr = lr_at(cfg, state.step, total_steps)
        loss_sum = 0.0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            lr = lr_at(cfg, state.step, total_steps)
            loss, grads = backward(
                params, x[idx], y[idx], dropout_rng=dropout_rng, reuse_buffers=True
            )
            if not math.isfinite(loss):
                raise NumericalError(
                    f"non-finite training loss at optimizer step {state.step}"
                )
            clip_grads_(grads, cfg.grad_clip)
            adam_step(state, grads, lr, cfg)
            loss_sum += loss * idx.size
        val_loss, val_acc = evaluate(params, val_x, val_y, cfg.batch_size)
        wall_ms = (time.perf_counter() - t0) * 1000.0
        record = EpochRecord(
            epoch=epoch,
            train_loss=loss_sum / n,
            val_loss=val_loss,
            val_acc=val_acc,
            lr=epoch_lr,
            wall_ms=wall_ms,
        )
        state.history.append(record)
        state.rng_state = rng.bit_generator.state
        if val_acc > state.best_val_acc or (
            val_acc == state.best_val_acc and val_loss < state.best_val_loss
        ):
            state.best_val_acc = val_acc
            state.best_val_loss = val_loss
            state.best_epoch = epoch
            state.best_params = clone_params(params)
            if checkpoint_path is not None:
                save_checkpoint(checkpoint_path, state.best_params)
        if log is not None:
            log(
                f"epoch {epoch:3d}  train_loss {record.train_loss:.6f}  "
                f"val_loss {val_loss:.6f}  val_acc {val_acc:.4f}  "
                f"lr {epoch_lr:.3e}  wall_ms {wall_ms:.1f}"
            )
    return state


def history_table(history: list[EpochRecord]) -> str:
    """Tab-separated history with a header row, one line per epoch."""
    lines = ["epoch\ttrain_loss\tval_loss\tval_acc\tlr\twall_ms"]
    for r in history:
        lines.append(
            f"{r.epoch}\t{r.train_loss:.8f}\t{r.val_loss:.8f}"
            f"\t{r.val_acc:.6f}\t{r.lr:.8e}\t{r.wall_ms:.2f}"
        )
    return "\n".join(lines) + "\n"
