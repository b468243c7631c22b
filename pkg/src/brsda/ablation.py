"""Lambda x U ablation grid and feature export for external embedding tools."""

from __future__ import annotations

import copy
import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from . import core
from .config import ExperimentConfig
from .data import LabeledDataset, Splits
from .errors import BrsdaError, ConfigError, ShapeError
from .nets import BrsdaNets, estimate_log_variance
from .training import TrainResult, train_run

log = logging.getLogger(__name__)

ABLATION_COLUMNS = (
    "lambda", "U", "seeds", "mean_auc", "mean_acc", "baseline_auc", "baseline_acc",
    "delta_auc", "delta_acc", "status", "config_digest",
)


@dataclass
class CellResult:
    lam: float
    U: int
    seeds: int
    aucs: list[float] = field(default_factory=list)
    accs: list[float] = field(default_factory=list)
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None

    @property
    def mean_auc(self) -> float:
        return float(np.mean(self.aucs)) if self.ok else math.nan

    @property
    def mean_acc(self) -> float:
        return float(np.mean(self.accs)) if self.ok else math.nan


@dataclass
class AblationGrid:
    lambda_values: list[float]
    u_values: list[int]
    seeds: list[int]
    cells: dict[tuple[float, int], CellResult]
    baseline_aucs: list[float]
    baseline_accs: list[float]
    config_digest: str
    runs: int = 0

    @property
    def baseline_auc(self) -> float:
        return float(np.mean(self.baseline_aucs))

    @property
    def baseline_acc(self) -> float:
        return float(np.mean(self.baseline_accs))

    def rows(self) -> list[dict]:
        out = []
        for lam in self.lambda_values:
            for u in self.u_values:
                cell = self.cells[(lam, u)]
                out.append({
                    "lambda": lam, "U": u, "seeds": cell.seeds,
                    "mean_auc": cell.mean_auc, "mean_acc": cell.mean_acc,
                    "baseline_auc": self.baseline_auc, "baseline_acc": self.baseline_acc,
                    "delta_auc": cell.mean_auc - self.baseline_auc,
                    "delta_acc": cell.mean_acc - self.baseline_acc,
                    "status": "ok" if cell.ok else f"failed: {cell.error}",
                    "config_digest": self.config_digest,
                })
        return out

    def write_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(ABLATION_COLUMNS))
            writer.writeheader()
            for row in self.rows():
                writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
        return path


def _score(result: TrainResult) -> tuple[float, float]:
    return result.best_test["auc"], result.best_test["acc"]


def _variant(base: ExperimentConfig, seed: int, lam: float | None = None,
             u: int | None = None) -> ExperimentConfig:
    cfg = copy.deepcopy(base)
    cfg.seed = seed
    if lam is None:
        cfg.augmentation.U = 0
    else:
        cfg.augmentation.lam = lam
        cfg.augmentation.U = u
    return cfg.validate()


def run_ablation(splits: Splits, base: ExperimentConfig, lambda_values: Sequence[float],
                 u_values: Sequence[int], seeds: Sequence[int],
                 train_fn: Callable[[Splits, ExperimentConfig], TrainResult] = train_run,
                 csv_path=None) -> AblationGrid:
    """Train every (lambda, U, seed) cell plus an augmentation-free baseline per seed.

    Cells are scored by test AUC/ACC of their best-by-validation weights and
    reported against the baseline mean over the same seeds. A failing cell is
    recorded and the sweep carries on; a failing baseline aborts.
    """
    lambda_values = [float(v) for v in lambda_values]
    u_values = [int(v) for v in u_values]
    seeds = [int(s) for s in seeds]
    if not lambda_values or not u_values:
        raise ConfigError("ablation grid needs at least one lambda and one U value")
    if not seeds:
        raise ConfigError("ablation needs at least one seed")
    if any(u < 1 for u in u_values):
        raise ConfigError("ablation U values must be >= 1")
    base.validate()
    runs = 0

    base_aucs, base_accs = [], []
    for seed in seeds:
        auc, acc = _score(train_fn(splits, _variant(base, seed)))
        runs += 1
        base_aucs.append(auc)
        base_accs.append(acc)

    cells = {}
    for lam in lambda_values:
        for u in u_values:
            cell = CellResult(lam, u, len(seeds))
            for seed in seeds:
                try:
                    auc, acc = _score(train_fn(splits, _variant(base, seed, lam, u)))
                except (BrsdaError, RuntimeError) as exc:
                    log.warning("cell lambda=%s U=%s seed=%s failed: %s", lam, u, seed, exc)
                    cell.error = str(exc).replace("\n", " ")
                    break
                finally:
                    runs += 1
                cell.aucs.append(auc)
                cell.accs.append(acc)
            cells[(lam, u)] = cell

    grid = AblationGrid(lambda_values, u_values, seeds, cells, base_aucs, base_accs,
                        base.digest, runs)
    if csv_path is not None:
        grid.write_csv(csv_path)
    return grid


def export_features(nets: BrsdaNets, dataset: LabeledDataset, cfg: ExperimentConfig,
                    generator: torch.Generator | None = None, batch_size: int = 256,
                    feature_dim: int | None = None) -> list[dict]:
    """Original and augmented features for every sample, one row each.

    The augmented copy uses one mask/magnitude draw with the checkpoint's
    lambda; the estimator runs in evaluation mode. Rows carry
    ``sample_id, label, kind, f0..f{k-1}``.
    """
    k = nets.feature_dim
    if feature_dim is not None and feature_dim != k:
        raise ShapeError(f"config feature_dim {feature_dim} does not match checkpoint k={k}")
    if cfg.backbone.feature_dim != k and cfg.backbone.name in ("cnn", "mlp"):
        raise ShapeError(f"config feature_dim {cfg.backbone.feature_dim} does not match checkpoint k={k}")
    nets.eval()
    x, _ = dataset.tensors()
    originals, augmented = [], []
    with torch.no_grad():
        for xb in torch.split(x, batch_size):
            a = nets.backbone(xb)
            log_var = estimate_log_variance(a, nets.estimator)
            mask = core.sample_direction_mask(a, cfg.augmentation.lam, generator)
            sample = core.sample_magnitudes(log_var, generator)
            originals.append(a)
            augmented.append(core.augment(a, mask, sample))
    originals = torch.cat(originals).double().numpy()
    augmented = torch.cat(augmented).double().numpy()

    rows = []
    for kind, feats in (("original", originals), ("augmented", augmented)):
        for i, (label, vec) in enumerate(zip(dataset.labels, feats)):
            row = {"sample_id": i, "label": int(label), "kind": kind}
            row.update({f"f{j}": float(v) for j, v in enumerate(vec)})
            rows.append(row)
    return rows


def write_feature_csv(path, rows: list[dict], config_digest: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = [*rows[0].keys(), "config_digest"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for row in rows:
            writer.writerow({**{k: repr(v) if isinstance(v, float) else v for k, v in row.items()},
                             "config_digest": config_digest})
    return path
