"""SGD training: spatial-contrasting pretraining and supervised fine-tuning.

Each epoch draws its shuffle, augmentation, sampler and dropout streams from
``(seed, name, epoch)``, so a run resumed from an epoch-boundary checkpoint
sees exactly the draws the uninterrupted run would have seen.
"""

from __future__ import annotations

import dataclasses
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_io
from .data import AugmentConfig, Dataset, augment, batch_iter
from .errors import ConfigError, DimensionError
from .losses import sc_batch_loss
from .models import ModelSpec, forward_full, forward_taps
from .ops import log_softmax_cross_entropy
from .rng import make_rng
from .sampler import SampleConfig, build_distance_matrix
from .tensor import Tensor, no_grad

PHASES = ("pretrain", "finetune", "scratch")


@dataclass
class TrainConfig:
    phase: str = "pretrain"
    batch_size: int = 32
    initial_lr: float = 0.1
    lr_decay_factor: float = 10.0  # the learning rate is divided by this
    plateau_patience: int = 3
    rel_tol: float = 1e-3
    min_lr: float = 1e-5
    momentum: float = 0.9
    max_epochs: int = 10
    seed: int = 0
    eval_every: int = 1
    max_translate: int = 0
    mirror: bool = False

    def __post_init__(self):
        if self.phase not in PHASES:
            raise ConfigError(f"phase must be one of {PHASES}, got {self.phase!r}")
        if not self.lr_decay_factor > 1:
            raise ConfigError(f"lr_decay_factor divides the learning rate and must exceed 1, got {self.lr_decay_factor}")
        if self.plateau_patience < 1:
            raise ConfigError(f"plateau_patience must be >= 1, got {self.plateau_patience}")
        if self.batch_size < 1 or self.max_epochs < 0:
            raise ConfigError("batch_size must be positive and max_epochs non-negative")
        if not 0 < self.min_lr <= self.initial_lr:
            raise ConfigError(f"need 0 < min_lr <= initial_lr, got {self.min_lr} and {self.initial_lr}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")

    @classmethod
    def for_phase(cls, phase: str, **overrides) -> "TrainConfig":
        """Defaults: lr 0.1 for pretraining, 0.01 for supervised runs."""
        base = {"phase": phase, "initial_lr": 0.1 if phase == "pretrain" else 0.01}
        base.update(overrides)
        return cls(**base)

    @property
    def augment(self) -> AugmentConfig:
        return AugmentConfig(self.max_translate, self.mirror, self.seed)


@dataclass
class TrainState:
    epoch: int = 0
    step: int = 0
    current_lr: float = 0.1
    best_loss: float = math.inf
    epochs_since_improvement: int = 0
    converged: bool = False
    history: list = field(default_factory=list)

    def to_meta(self) -> dict:
        d = dataclasses.asdict(self)
        d["best_loss"] = None if math.isinf(self.best_loss) else self.best_loss
        return d

    @classmethod
    def from_meta(cls, d: dict) -> "TrainState":
        d = dict(d)
        if d.get("best_loss") is None:
            d["best_loss"] = math.inf
        return cls(**d)


# -- optimizer and schedule ------------------------------------------------


def sgd_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], lr: float, momentum: float, velocity: dict[str, np.ndarray]) -> None:
    """v <- momentum * v + g;  p <- p - lr * v.  Missing gradients count as zero."""
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        v = velocity.get(name)
        v = g.astype(p.dtype) if v is None else momentum * v + g
        velocity[name] = v.astype(p.dtype, copy=False)
        p.data = (p.data - lr * velocity[name]).astype(p.dtype, copy=False)


def plateau_schedule(state: TrainState, epoch_loss: float, cfg: TrainConfig) -> float:
    """Divide the learning rate after ``plateau_patience`` epochs without improvement.

    An epoch improves when its loss falls below ``best - rel_tol * |best|``.
    A plateau hit while already at ``min_lr`` marks the run converged.
    """
    if epoch_loss < state.best_loss - cfg.rel_tol * abs(state.best_loss) or math.isinf(state.best_loss):
        state.best_loss = epoch_loss
        state.epochs_since_improvement = 0
        return state.current_lr
    state.epochs_since_improvement += 1
    if state.epochs_since_improvement >= cfg.plateau_patience:
        state.epochs_since_improvement = 0
        if state.current_lr <= cfg.min_lr:
            state.converged = True
        else:
            state.current_lr = max(state.current_lr / cfg.lr_decay_factor, cfg.min_lr)
    return state.current_lr


# -- metrics log -----------------------------------------------------------

FIELDS = ("phase", "epoch", "lr", "train_loss", "test_acc", "wall_ms")


class MetricsLog:
    """Append-only ``key=value`` lines, one per epoch."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self.records: list[dict] = []

    def write(self, **record) -> None:
        self.records.append(record)
        if self.path is None:
            return
        parts = []
        for key in FIELDS:
            v = record.get(key)
            parts.append(f"{key}={'' if v is None else (repr(v) if isinstance(v, float) else v)}")
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with self.path.open("a") as fh:
            fh.write(" ".join(parts) + "\n")


def read_metrics(path: str | Path) -> list[dict]:
    rows = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        row = {}
        for token in line.split():
            key, _, value = token.partition("=")
            if value == "":
                row[key] = None
            elif key in ("phase",):
                row[key] = value
            elif key in ("epoch", "wall_ms"):
                row[key] = int(value)
            else:
                row[key] = float(value)
        rows.append(row)
    return rows


# -- training loops --------------------------------------------------------


@dataclass
class RunResult:
    checkpoint: ckpt_io.Checkpoint
    state: TrainState
    test_accuracy: float | None = None
    test_loss: float | None = None


def _grads(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    return {k: p.grad for k, p in params.items() if p.grad is not None}


def sc_loss(model: ModelSpec, images: np.ndarray, sample_cfg: SampleConfig, rng: np.random.Generator) -> Tensor:
    """Spatial-contrasting loss of one batch; several taps add up."""
    if len(images) < 2:
        raise DimensionError(f"spatial contrasting needs at least 2 images per batch, got {len(images)}")
    total = None
    for fmap in forward_taps(model, Tensor(images)):
        loss = sc_batch_loss(build_distance_matrix(fmap, sample_cfg, rng).values)
        total = loss if total is None else total + loss
    return total


def _epoch_streams(seed: int, epoch: int) -> dict[str, np.random.Generator]:
    return {name: make_rng(seed, name, epoch) for name in ("shuffle", "augment", "sampler", "dropout")}


def _finish_epoch(state, cfg, log, phase, losses, t0, test_acc=None):
    mean_loss = float(np.mean(losses))
    lr_used = state.current_lr
    plateau_schedule(state, mean_loss, cfg)
    record = {
        "phase": phase,
        "epoch": state.epoch,
        "lr": lr_used,
        "train_loss": mean_loss,
        "test_acc": test_acc,
        "wall_ms": int((time.perf_counter() - t0) * 1000),
    }
    state.history.append({k: v for k, v in record.items() if k != "wall_ms"})
    if log is not None:
        log.write(**record)
    return mean_loss


def pretrain(
    model: ModelSpec,
    unlabeled: Dataset,
    cfg: TrainConfig,
    sample_cfg: SampleConfig | None = None,
    log: MetricsLog | None = None,
    checkpoint_path: str | Path | None = None,
) -> RunResult:
    """Optimize the trunk with the spatial-contrasting loss.

    Only parameters before the tap are updated; the head is never run and
    never touched. Stops after ``max_epochs`` or on a plateau at ``min_lr``.
    """
    sample_cfg = sample_cfg or SampleConfig(seed=cfg.seed)
    if cfg.batch_size < 2:
        raise DimensionError(f"pretraining batch size must be >= 2 to form contrasts, got {cfg.batch_size}")
    if len(unlabeled) < cfg.batch_size:
        raise DimensionError(f"{len(unlabeled)} images cannot fill one batch of {cfg.batch_size}")
    trunk = model.parameters("trunk")
    velocity: dict[str, np.ndarray] = {}
    state = TrainState(current_lr=cfg.initial_lr)
    model.train()
    while state.epoch < cfg.max_epochs and not state.converged:
        state.epoch += 1
        t0 = time.perf_counter()
        rngs = _epoch_streams(cfg.seed, state.epoch)
        model.dropout_rng = rngs["dropout"]
        losses = []
        for idx in batch_iter(unlabeled, cfg.batch_size, True, rngs["shuffle"], drop_last=True):
            batch = augment(unlabeled.images[idx], cfg.augment, rngs["augment"])
            model.zero_grad()
            loss = sc_loss(model, batch, sample_cfg, rngs["sampler"])
            loss.backward()
            sgd_step(trunk, _grads(trunk), state.current_lr, cfg.momentum, velocity)
            losses.append(loss.item())
            state.step += 1
        _finish_epoch(state, cfg, log, "pretrain", losses, t0)
    model.zero_grad()
    ck = ckpt_io.from_model(model, velocity, {"phase": "pretrain", "train_state": state.to_meta()})
    if checkpoint_path is not None:
        ckpt_io.save(checkpoint_path, ck)
    return RunResult(ck, state)


def evaluate(model: ModelSpec, ds: Dataset, batch_size: int = 256) -> tuple[float, float]:
    """Eval-mode accuracy and mean cross-entropy; argmax ties go to the lowest class."""
    if len(ds) == 0:
        raise DimensionError("cannot evaluate on an empty dataset")
    if ds.labels is None:
        raise DimensionError(f"dataset split {ds.split!r} has no labels to evaluate against")
    was_training = model.training
    model.eval()
    correct, loss_sum = 0, 0.0
    try:
        with no_grad():
            for start in range(0, len(ds), batch_size):
                x = ds.images[start : start + batch_size]
                y = ds.labels[start : start + batch_size]
                logits = forward_full(model, Tensor(x))
                loss_sum += log_softmax_cross_entropy(logits, y).item() * len(x)
                correct += int((logits.data.argmax(axis=1) == y).sum())
    finally:
        model.training = was_training
    return correct / len(ds), loss_sum / len(ds)


def prepare_finetune(model: ModelSpec, init: ckpt_io.Checkpoint | None, seed: int) -> None:
    """Load the trunk from ``init`` (when given) and freshly initialize the head.

    The head always comes from the same seeded stream, so a scratch run and
    a pretrained run with equal seeds differ only in their trunk weights.
    """
    if init is not None:
        ckpt_io.restore(model, init, part="trunk")
    model.init_parameters(make_rng(seed, "head-init"), model.head_layers())


def finetune(
    model: ModelSpec,
    labeled: Dataset,
    cfg: TrainConfig,
    init: ckpt_io.Checkpoint | None = None,
    test: Dataset | None = None,
    log: MetricsLog | None = None,
    checkpoint_path: str | Path | None = None,
    resume: ckpt_io.Checkpoint | None = None,
) -> RunResult:
    """Supervised cross-entropy training of every layer.

    ``init`` supplies a pretrained trunk; ``resume`` continues a run of this
    same function from its own checkpoint (parameters, BN moments, velocity
    and schedule state).
    """
    if labeled.labels is None:
        raise DimensionError(f"dataset split {labeled.split!r} has no labels")
    if resume is not None:
        ckpt_io.restore(model, resume, part="all")
        velocity = {k: v.copy() for k, v in ckpt_io.velocity_of(resume).items()}
        state = TrainState.from_meta(resume.meta["train_state"])
    else:
        prepare_finetune(model, init, cfg.seed)
        velocity = {}
        state = TrainState(current_lr=cfg.initial_lr)
    # head init replaces parameter tensors, so collect them only now
    params = model.parameters("all")
    phase = cfg.phase if cfg.phase != "pretrain" else "finetune"
    acc = None
    while state.epoch < cfg.max_epochs and not state.converged:
        state.epoch += 1
        t0 = time.perf_counter()
        rngs = _epoch_streams(cfg.seed, state.epoch)
        model.train()
        model.dropout_rng = rngs["dropout"]
        losses = []
        for idx in batch_iter(labeled, cfg.batch_size, True, rngs["shuffle"]):
            batch = augment(labeled.images[idx], cfg.augment, rngs["augment"])
            model.zero_grad()
            loss = log_softmax_cross_entropy(forward_full(model, Tensor(batch)), labeled.labels[idx])
            loss.backward()
            sgd_step(params, _grads(params), state.current_lr, cfg.momentum, velocity)
            losses.append(loss.item())
            state.step += 1
        acc = None
        if test is not None and cfg.eval_every and state.epoch % cfg.eval_every == 0:
            acc, _ = evaluate(model, test)
        _finish_epoch(state, cfg, log, phase, losses, t0, acc)
    model.zero_grad()
    result = RunResult(None, state)
    if test is not None:
        result.test_accuracy, result.test_loss = evaluate(model, test)
    meta = {"phase": phase, "train_state": state.to_meta()}
    if result.test_accuracy is not None:
        meta["test_accuracy"] = result.test_accuracy
    result.checkpoint = ckpt_io.from_model(model, velocity, meta)
    if checkpoint_path is not None:
        ckpt_io.save(checkpoint_path, result.checkpoint)
    return result
