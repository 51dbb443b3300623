"""Supervised training on simulated permeability targets.

Targets are min-max normalized with statistics from the training split only;
every reported metric is mapped back to physical millidarcy first. The loop
is plain full-precision Adam over shuffled mini-batches with best-validation
checkpointing, and every random choice derives from the training seed, so a
rerun reproduces the same trajectory bit for bit.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .checkpoint import load_arrays, save_arrays
from .dataset import DatasetManifest, SampleRecord, encode_voxels
from .errors import ConfigError, DataError, DegenerateFieldError, ShapeError, StateError
from .modelbase import RegressionModel
from .rng import stream
from .vim import ViMConfig, ViMModel

__all__ = [
    "NormStats",
    "TrainConfig",
    "MetricsReport",
    "TrainResult",
    "AdamState",
    "mse_loss",
    "adam_step",
    "train",
    "evaluate",
    "ablate",
    "ABLATION_GRIDS",
]


@dataclass(frozen=True)
class NormStats:
    """Min-max target range, computed on the training split only."""

    k_min: float
    k_max: float

    def __post_init__(self) -> None:
        if not self.k_max > self.k_min:
            raise DegenerateFieldError(
                f"target range [{self.k_min}, {self.k_max}] is degenerate")

    @classmethod
    def from_values(cls, values: np.ndarray) -> "NormStats":
        values = np.asarray(values, dtype=float)
        if values.size == 0:
            raise DataError("cannot compute target statistics of an empty split")
        return cls(float(values.min()), float(values.max()))

    def normalize(self, k):
        return (np.asarray(k, dtype=float) - self.k_min) / (self.k_max - self.k_min)

    def denormalize(self, k_norm):
        return np.asarray(k_norm, dtype=float) * (self.k_max - self.k_min) + self.k_min


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 128
    max_epochs: int = 300
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    patience: int = 50
    seed: int = 0

    def validate(self) -> None:
        # Zero is allowed so a frozen-parameter run stays expressible.
        if self.learning_rate < 0:
            raise ConfigError(
                f"learning rate must be nonnegative, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be at least 1, got {self.batch_size}")
        if self.max_epochs < 1:
            raise ConfigError(f"max epochs must be at least 1, got {self.max_epochs}")
        for name in ("beta1", "beta2"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must be in [0, 1), got {getattr(self, name)}")
        if self.eps <= 0:
            raise ConfigError(f"eps must be positive, got {self.eps}")
        if self.patience < 1:
            raise ConfigError(f"patience must be at least 1, got {self.patience}")


@dataclass(frozen=True)
class MetricsReport:
    r2: float
    rmse_mD: float
    min_rel_err: float
    max_rel_err: float
    pairs: tuple[tuple[float, float], ...]
    zero_targets_skipped: int

    def to_dict(self) -> dict:
        return {
            "r2": self.r2,
            "rmse_mD": self.rmse_mD,
            "min_rel_err": self.min_rel_err,
            "max_rel_err": self.max_rel_err,
            "zero_targets_skipped": self.zero_targets_skipped,
            "pairs": [list(p) for p in self.pairs],
        }


@dataclass(frozen=True)
class TrainResult:
    best_epoch: int
    best_valid_mse: float
    epochs_run: int
    history: tuple[dict, ...]
    checkpoint: Path
    log: Path
    stats: NormStats


def mse_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    """Mean squared error between (B, 1) predictions and B targets."""
    target = np.asarray(target, dtype=float).reshape(-1, 1)
    if target.size == 0:
        raise ConfigError("loss over an empty batch is undefined")
    if pred.data.shape != target.shape:
        raise ShapeError(
            f"predictions {pred.data.shape} do not match targets {target.shape}")
    diff = ad.sub(pred, ad.constant(target))
    return ad.scale(ad.tensor_sum(ad.mul(diff, diff)), 1.0 / target.shape[0])


class AdamState:
    """First and second moment accumulators keyed by parameter name."""

    def __init__(self) -> None:
        self.step_count = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def ensure(self, named_params: list[tuple[str, Tensor]]) -> None:
        for name, tensor in named_params:
            if name not in self.m:
                self.m[name] = np.zeros_like(tensor.data)
                self.v[name] = np.zeros_like(tensor.data)


def adam_step(named_params: list[tuple[str, Tensor]], state: AdamState,
              config: TrainConfig) -> None:
    """One in-place Adam update from the gradients on the tensors."""
    state.ensure(named_params)
    state.step_count += 1
    t = state.step_count
    bias1 = 1.0 - config.beta1 ** t
    bias2 = 1.0 - config.beta2 ** t
    for name, tensor in named_params:
        grad = tensor.grad
        if grad is None:
            raise StateError(f"parameter {name} has no gradient")
        if grad.shape != state.m[name].shape:
            raise ShapeError(
                f"gradient shape {grad.shape} does not match state for {name}")
        m = state.m[name]
        v = state.v[name]
        m *= config.beta1
        m += (1.0 - config.beta1) * grad
        v *= config.beta2
        v += (1.0 - config.beta2) * grad * grad
        m_hat = m / bias1
        v_hat = v / bias2
        tensor.data[...] -= config.learning_rate * m_hat / (np.sqrt(v_hat) + config.eps)


def _split_targets(records: list[SampleRecord], split: str) -> np.ndarray:
    missing = [r.id for r in records if r.permeability_mD is None]
    if missing:
        raise DataError(
            f"{split} samples missing permeability targets: {missing[:8]}"
            + ("..." if len(missing) > 8 else ""))
    return np.array([r.permeability_mD for r in records], dtype=float)


def _load_split(manifest: DatasetManifest, root: str | Path,
                split: str) -> tuple[np.ndarray, np.ndarray]:
    records = manifest.split(split)
    if not records:
        raise DataError(f"manifest has no {split} samples")
    targets = _split_targets(records, split)
    grids = [manifest.load_grid(r, root) for r in records]
    return encode_voxels(grids), targets


def _batch_indices(count: int, batch_size: int, rng: np.random.Generator,
                   merge_singleton: bool) -> list[np.ndarray]:
    order = rng.permutation(count)
    batches = [order[i:i + batch_size] for i in range(0, count, batch_size)]
    # Batch statistics need at least two samples, so a trailing singleton is
    # folded into the previous batch for models that normalize over the batch.
    if merge_singleton and len(batches) > 1 and len(batches[-1]) == 1:
        batches[-2] = np.concatenate([batches[-2], batches[-1]])
        batches.pop()
    return batches


def _mean_squared_error(model: RegressionModel, x: np.ndarray,
                        y_norm: np.ndarray, batch_size: int) -> float:
    sse = 0.0
    for i in range(0, len(y_norm), batch_size):
        pred = model.predict(x[i:i + batch_size])
        sse += float(np.sum((pred - y_norm[i:i + batch_size]) ** 2))
    return sse / len(y_norm)


def train(model: RegressionModel, manifest: DatasetManifest, root: str | Path,
          config: TrainConfig, workdir: str | Path,
          on_epoch=None) -> TrainResult:
    """Fit the model and retain the checkpoint with minimum validation MSE.

    Stops at ``max_epochs`` or once validation MSE has not improved for
    ``patience`` consecutive epochs; the best checkpoint is reloaded into the
    model before returning. ``on_epoch(row)`` fires after each epoch.
    """
    config.validate()
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    x_train, y_train = _load_split(manifest, root, "train")
    x_valid, y_valid = _load_split(manifest, root, "valid")
    stats = NormStats.from_values(y_train)
    y_train_n = stats.normalize(y_train)
    y_valid_n = stats.normalize(y_valid)

    named_params = model.named_parameters()
    needs_whole_batches = bool(model.named_buffers())
    adam = AdamState()
    checkpoint_path = workdir / "model_best.ckpt"
    log_path = workdir / "training_log.csv"
    history: list[dict] = []
    best_valid = np.inf
    best_epoch = 0
    stale_epochs = 0
    started = time.perf_counter()

    for epoch in range(1, config.max_epochs + 1):
        shuffle_rng = stream(config.seed, "shuffle", epoch)
        batches = _batch_indices(len(y_train_n), config.batch_size, shuffle_rng,
                                 needs_whole_batches)
        epoch_sse = 0.0
        for batch_index, idx in enumerate(batches):
            for _, tensor in named_params:
                tensor.zero_grad()
            drop_rng = stream(config.seed, "dropout",
                              epoch * 1_000_000 + batch_index)
            with ad.Tape() as tape:
                pred = model.forward(ad.constant(x_train[idx]), train=True,
                                     rng=drop_rng)
                loss = mse_loss(pred, y_train_n[idx])
            tape.backward(loss)
            adam_step(named_params, adam, config)
            epoch_sse += loss.item() * len(idx)

        valid_mse = _mean_squared_error(model, x_valid, y_valid_n,
                                        config.batch_size)
        row = {
            "epoch": epoch,
            "train_mse": epoch_sse / len(y_train_n),
            "valid_mse": valid_mse,
            "lr": config.learning_rate,
            "wall_seconds": time.perf_counter() - started,
        }
        history.append(row)
        if on_epoch is not None:
            on_epoch(row)

        if valid_mse < best_valid:
            best_valid = valid_mse
            best_epoch = epoch
            stale_epochs = 0
            save_arrays(checkpoint_path, model.state_dict())
        else:
            stale_epochs += 1
            if stale_epochs >= config.patience:
                break

    model.load_state(load_arrays(checkpoint_path))
    with open(log_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["epoch", "train_mse", "valid_mse", "lr", "wall_seconds"])
        writer.writeheader()
        writer.writerows(history)
    return TrainResult(best_epoch=best_epoch, best_valid_mse=float(best_valid),
                       epochs_run=len(history), history=tuple(history),
                       checkpoint=checkpoint_path, log=log_path, stats=stats)


def evaluate(model: RegressionModel, manifest: DatasetManifest,
             root: str | Path, split: str, stats: NormStats,
             batch_size: int = 128) -> MetricsReport:
    """Score a split in physical units.

    Relative errors skip exactly-zero targets (no flow path means no finite
    relative scale); the skip count is reported alongside.
    """
    x, y_true = _load_split(manifest, root, split)
    preds = []
    for i in range(0, len(y_true), batch_size):
        preds.append(model.predict(x[i:i + batch_size]))
    y_pred = stats.denormalize(np.concatenate(preds))

    residual = y_true - y_pred
    sst = float(np.sum((y_true - y_true.mean()) ** 2))
    if sst == 0.0:
        raise DataError(f"all {split} targets are equal; R^2 is undefined")
    r2 = 1.0 - float(np.sum(residual ** 2)) / sst
    rmse = float(np.sqrt(np.mean(residual ** 2)))
    nonzero = y_true != 0.0
    rel = np.abs(residual[nonzero]) / np.abs(y_true[nonzero])
    return MetricsReport(
        r2=r2,
        rmse_mD=rmse,
        min_rel_err=float(rel.min()) if rel.size else 0.0,
        max_rel_err=float(rel.max()) if rel.size else 0.0,
        pairs=tuple((float(t), float(p)) for t, p in zip(y_true, y_pred)),
        zero_targets_skipped=int(np.count_nonzero(~nonzero)),
    )


ABLATION_GRIDS = {
    "blocks": (1, 2, 3, 4, 5),
    "patch": (4, 8, 16, 32, 64),
    "scan": ("all", "x", "y", "z"),
    "batch": (4, 16, 32, 128, 256),
}


def _ablation_point(grid: str, value, model_config: ViMConfig,
                    train_config: TrainConfig) -> tuple[ViMConfig, TrainConfig]:
    if grid == "blocks":
        model_config = replace(model_config, blocks=value)
    elif grid == "patch":
        model_config = replace(model_config, patch=value)
    elif grid == "scan":
        axes = ("x", "y", "z") if value == "all" else (value,)
        model_config = replace(model_config, scan_axes=axes)
    elif grid == "batch":
        train_config = replace(train_config, batch_size=value)
    else:
        raise ConfigError(
            f"unknown ablation grid {grid!r}, expected one of {sorted(ABLATION_GRIDS)}")
    model_config.validate()
    train_config.validate()
    return model_config, train_config


def ablate(grid: str, manifest: DatasetManifest, root: str | Path,
           model_config: ViMConfig, train_config: TrainConfig,
           workdir: str | Path, on_point=None) -> list[dict]:
    """Sweep one ablation grid, training a fresh model per point.

    Invalid points (for example a patch larger than the volume) are skipped
    with the reason recorded in the output row. Rows are written to
    ``ablation_<grid>.csv`` in the workdir.
    """
    if grid not in ABLATION_GRIDS:
        raise ConfigError(
            f"unknown ablation grid {grid!r}, expected one of {sorted(ABLATION_GRIDS)}")
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    rows = []
    for value in ABLATION_GRIDS[grid]:
        row = {"grid": grid, "value": value, "params": "", "epochs": "",
               "r2": "", "rmse_mD": "", "min_rel_err": "", "max_rel_err": "",
               "skipped": ""}
        try:
            point_model_cfg, point_train_cfg = _ablation_point(
                grid, value, model_config, train_config)
        except ConfigError as err:
            row["skipped"] = str(err)
            rows.append(row)
            if on_point is not None:
                on_point(row)
            continue
        model = ViMModel.initialize(point_model_cfg, point_train_cfg.seed)
        result = train(model, manifest, root, point_train_cfg,
                       workdir / f"{grid}_{value}")
        report = evaluate(model, manifest, root, "test", result.stats,
                          point_train_cfg.batch_size)
        row.update(params=model.parameter_count(), epochs=result.epochs_run,
                   r2=report.r2, rmse_mD=report.rmse_mD,
                   min_rel_err=report.min_rel_err,
                   max_rel_err=report.max_rel_err)
        rows.append(row)
        if on_point is not None:
            on_point(row)
    with open(workdir / f"ablation_{grid}.csv", "w", newline="",
              encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    return rows
