"""Optimization loop, losses, and trace logging.

The loss is computed on the summed prediction p_total = p_left + p_right
against the total score, reduced by SUM over the batch (per-lung supervision
is deliberately not used even when the data provides it). The per-epoch
trace logs the per-sample mean so runs with different batch sizes stay
comparable.

All randomness (batch order, flip coins, cutmix boxes, mixup blends, offline
expansion) comes from streams derived from TrainConfig.seed, so a run is
reproducible end to end with single-threaded execution.
"""

import time
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .augment import CutMixParams, expand_dataset, hflip, score_cutmix, score_mixup
from .data import CxrSample, PreprocessConfig, preprocess_batch
from .errors import (
    ArgumentError,
    ConfigurationError,
    TrainingError,
    UndefinedCorrelationError,
)
from .evaluation import mae, pearson
from .model import VitRegressor
from .seeding import ROLE_BATCH_ORDER, ROLE_CUTMIX, ROLE_HFLIP, ROLE_MIXUP, rng_for

LOSSES = ("l1", "mse", "smooth_l1", "huber")
OPTIMIZERS = ("sgd", "adam", "adamw", "adadelta", "rmsprop")


def _as_1d_tensors(pred, truth, op: str) -> tuple[torch.Tensor, torch.Tensor]:
    p = pred if isinstance(pred, torch.Tensor) else torch.as_tensor(pred, dtype=torch.float64)
    t = truth if isinstance(truth, torch.Tensor) else torch.as_tensor(truth, dtype=torch.float64)
    if p.ndim != 1 or t.ndim != 1:
        raise ArgumentError(f"{op}: inputs must be 1-D, got shapes {tuple(p.shape)}, {tuple(t.shape)}")
    if p.shape[0] != t.shape[0]:
        raise ArgumentError(f"{op}: length mismatch, {p.shape[0]} vs {t.shape[0]}")
    if p.shape[0] == 0:
        raise ArgumentError(f"{op}: inputs must be non-empty")
    return p, t


def l1_loss(pred, truth) -> torch.Tensor:
    """Sum of absolute residuals over the batch (not the mean)."""
    p, t = _as_1d_tensors(pred, truth, "l1_loss")
    return F.l1_loss(p, t, reduction="sum")


def mse_loss(pred, truth) -> torch.Tensor:
    """Sum of squared residuals over the batch."""
    p, t = _as_1d_tensors(pred, truth, "mse_loss")
    return F.mse_loss(p, t, reduction="sum")


def smooth_l1_loss(pred, truth, beta: float = 1.0) -> torch.Tensor:
    """Sum-reduced smooth L1: 0.5 r^2 / beta below the knee, |r| - beta/2 above."""
    if beta <= 0:
        raise ArgumentError(f"smooth_l1 beta must be > 0, got {beta}")
    p, t = _as_1d_tensors(pred, truth, "smooth_l1_loss")
    return F.smooth_l1_loss(p, t, reduction="sum", beta=beta)


def huber_loss(pred, truth, delta: float = 1.0) -> torch.Tensor:
    """Sum-reduced Huber: 0.5 r^2 below delta, delta (|r| - delta/2) above."""
    if delta <= 0:
        raise ArgumentError(f"huber delta must be > 0, got {delta}")
    p, t = _as_1d_tensors(pred, truth, "huber_loss")
    return F.huber_loss(p, t, reduction="sum", delta=delta)


@dataclass
class TrainConfig:
    """Everything the optimization loop needs besides the data and model."""

    loss: str = "l1"
    optimizer: str = "sgd"
    learning_rate: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 0.0
    batch_size: int = 32
    epochs: int = 60
    seed: int = 0
    huber_delta: float = 1.0
    smooth_l1_beta: float = 1.0
    offline_replacement: bool = False
    online_cutmix: bool = False
    online_cutmix_prob: float = 0.5
    cutmix_lambda_min: float = 0.5
    cutmix_lambda_max: float = 0.9
    online_hflip: bool = False
    online_mixup: bool = False
    shuffle: bool = True

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ConfigurationError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigurationError(
                f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}"
            )
        if self.learning_rate < 0:
            raise ConfigurationError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if self.seed < 0:
            raise ConfigurationError(f"seed must be non-negative, got {self.seed}")
        if self.huber_delta <= 0 or self.smooth_l1_beta <= 0:
            raise ConfigurationError("huber_delta and smooth_l1_beta must be > 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigurationError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigurationError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if not 0.0 <= self.online_cutmix_prob <= 1.0:
            raise ConfigurationError(
                f"online_cutmix_prob must be in [0, 1], got {self.online_cutmix_prob}"
            )
        try:
            CutMixParams(self.cutmix_lambda_min, self.cutmix_lambda_max)
        except ArgumentError as exc:
            raise ConfigurationError(str(exc)) from None

    @property
    def cutmix_params(self) -> CutMixParams:
        return CutMixParams(self.cutmix_lambda_min, self.cutmix_lambda_max, self.seed)


@dataclass
class TraceRow:
    epoch: int
    train_loss: float
    val_mae: float
    val_pc: float
    seconds: float


@dataclass
class TrainTrace:
    rows: list[TraceRow] = field(default_factory=list)

    def write_csv(self, path: str, zero_seconds: bool = False) -> None:
        """Write `epoch,train_loss,val_mae,val_pc,seconds`.

        zero_seconds replaces wall time with 0.0 so that traces of identical
        runs compare byte for byte.
        """
        with open(path, "w", newline="") as fh:
            fh.write("epoch,train_loss,val_mae,val_pc,seconds\n")
            for r in self.rows:
                seconds = 0.0 if zero_seconds else r.seconds
                fh.write(
                    f"{r.epoch},{r.train_loss!r},{r.val_mae!r},{r.val_pc!r},{seconds:.3f}\n"
                )


@dataclass
class TrainResult:
    trace: TrainTrace
    best_epoch: int
    best_val_mae: float
    best_state: dict


def batch_loss(cfg: TrainConfig, pred: torch.Tensor, truth: torch.Tensor) -> torch.Tensor:
    if cfg.loss == "l1":
        return l1_loss(pred, truth)
    if cfg.loss == "mse":
        return mse_loss(pred, truth)
    if cfg.loss == "smooth_l1":
        return smooth_l1_loss(pred, truth, beta=cfg.smooth_l1_beta)
    return huber_loss(pred, truth, delta=cfg.huber_delta)


def build_optimizer(params, cfg: TrainConfig) -> torch.optim.Optimizer:
    lr, wd = cfg.learning_rate, cfg.weight_decay
    if cfg.optimizer == "sgd":
        return torch.optim.SGD(params, lr=lr, momentum=cfg.momentum, weight_decay=wd)
    if cfg.optimizer == "adam":
        return torch.optim.Adam(params, lr=lr, weight_decay=wd)
    if cfg.optimizer == "adamw":
        return torch.optim.AdamW(params, lr=lr, weight_decay=wd)
    if cfg.optimizer == "adadelta":
        return torch.optim.Adadelta(params, lr=lr, weight_decay=wd)
    return torch.optim.RMSprop(params, lr=lr, weight_decay=wd)


def _augment_batch(
    batch: list[CxrSample],
    cfg: TrainConfig,
    rng_flip: np.random.Generator,
    rng_cut: np.random.Generator,
    rng_mix: np.random.Generator,
) -> list[CxrSample]:
    if cfg.online_hflip:
        batch = [hflip(s) if rng_flip.random() < 0.5 else s for s in batch]
    if cfg.online_cutmix:
        base = list(batch)
        partners = rng_cut.permutation(len(base))
        params = cfg.cutmix_params
        batch = [
            score_cutmix(base[i], base[partners[i]], params, rng_cut)
            if rng_cut.random() < cfg.online_cutmix_prob
            else base[i]
            for i in range(len(base))
        ]
    if cfg.online_mixup:
        base = list(batch)
        partners = rng_mix.permutation(len(base))
        batch = [
            score_mixup(base[i], base[partners[i]], float(rng_mix.uniform(0.0, 1.0)))
            for i in range(len(base))
        ]
    return batch


def _validate_in_chunks(
    model: VitRegressor,
    images: torch.Tensor,
    truths: np.ndarray,
    batch_size: int,
) -> tuple[float, float]:
    preds = []
    with torch.no_grad():
        for start in range(0, images.shape[0], batch_size):
            out = model(images[start : start + batch_size])
            preds.append((out[:, 0] + out[:, 1]).numpy())
    totals = np.concatenate(preds).astype(np.float64)
    val_mae = mae(totals.tolist(), truths.tolist())
    try:
        val_pc = pearson(totals.tolist(), truths.tolist())
    except (UndefinedCorrelationError, ArgumentError):
        val_pc = float("nan")
    return val_mae, val_pc


def train(
    model: VitRegressor,
    train_set: list[CxrSample],
    val_set: list[CxrSample],
    cfg: TrainConfig,
    pre_cfg: PreprocessConfig | None = None,
) -> TrainResult:
    """Optimize the model in place; returns the trace and the best weights.

    Runs epochs x ceil(n / batch_size) optimizer steps. Online augmentations
    are applied per batch in the order flip, cutmix, mixup, each against the
    unmixed batch snapshot. Validation MAE picks the retained best state
    (epoch of first minimum). A non-finite loss aborts with diagnostics.
    """
    if not train_set:
        raise ArgumentError("train: training set is empty")
    pre_cfg = pre_cfg or PreprocessConfig(
        target_height=model.config.image_height, target_width=model.config.image_width
    )
    if cfg.offline_replacement:
        train_set = expand_dataset(train_set, cfg.seed)
    rng_order = rng_for(cfg.seed, ROLE_BATCH_ORDER)
    rng_flip = rng_for(cfg.seed, ROLE_HFLIP)
    rng_cut = rng_for(cfg.seed, ROLE_CUTMIX)
    rng_mix = rng_for(cfg.seed, ROLE_MIXUP)
    optimizer = build_optimizer(model.parameters(), cfg)
    n = len(train_set)
    val_images = preprocess_batch(val_set, pre_cfg) if val_set else None
    val_truths = np.array([s.score_total for s in val_set], dtype=np.float64)
    trace = TrainTrace()
    best_epoch, best_val_mae = 0, float("inf")
    best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
    for epoch in range(1, cfg.epochs + 1):
        started = time.perf_counter()
        order = rng_order.permutation(n) if cfg.shuffle else np.arange(n)
        loss_sum = 0.0
        for batch_index, start in enumerate(range(0, n, cfg.batch_size)):
            batch = [train_set[i] for i in order[start : start + cfg.batch_size]]
            batch = _augment_batch(batch, cfg, rng_flip, rng_cut, rng_mix)
            images = preprocess_batch(batch, pre_cfg)
            truths = torch.tensor([s.score_total for s in batch], dtype=torch.float32)
            out = model(images)
            loss = batch_loss(cfg, out[:, 0] + out[:, 1], truths)
            if not torch.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch {batch_index}, "
                    f"lr {cfg.learning_rate}"
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            loss_sum += float(loss.detach())
        if val_images is not None:
            val_mae, val_pc = _validate_in_chunks(model, val_images, val_truths, cfg.batch_size)
        else:
            val_mae, val_pc = float("nan"), float("nan")
        trace.rows.append(
            TraceRow(
                epoch=epoch,
                train_loss=loss_sum / n,
                val_mae=val_mae,
                val_pc=val_pc,
                seconds=time.perf_counter() - started,
            )
        )
        if val_images is not None and val_mae < best_val_mae:
            best_val_mae = val_mae
            best_epoch = epoch
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
    if val_images is None:
        # no validation signal: the final weights are the best we know
        best_epoch = cfg.epochs
        best_val_mae = float("nan")
        best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
    return TrainResult(
        trace=trace, best_epoch=best_epoch, best_val_mae=best_val_mae, best_state=best_state
    )


__all__ = [
    "LOSSES",
    "OPTIMIZERS",
    "TraceRow",
    "TrainConfig",
    "TrainResult",
    "TrainTrace",
    "batch_loss",
    "build_optimizer",
    "huber_loss",
    "l1_loss",
    "mse_loss",
    "smooth_l1_loss",
    "train",
]
