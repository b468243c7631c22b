"""Joint training of the classifier and the augmentation networks.

One optimisation step follows the mini-batch loop: extract features, classify
them, estimate the magnitude log-variance, draw ``U`` augmented copies of the
features, classify and reconstruct those, and minimise::

    task_orig + alpha * (kl + recon + task_aug)

with ``alpha`` ramped up over the first epochs.
"""

from __future__ import annotations

import copy
import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from . import core
from .config import AugmentationConfig, ExperimentConfig, TrainSchedule
from .data import LabeledDataset, Splits, generate_synthetic, load_archive
from .errors import ConfigError, DataError, InvalidDistributionError, NumericalError, ShapeError
from .metrics import accuracy, auc_macro, per_class_auc
from .nets import BrsdaNets, build_backbone, estimate_log_variance, reconstruct

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = 1
METRICS_COLUMNS = (
    "epoch", "lr", "alpha", "train_loss", "kl", "recon", "task_orig", "task_aug",
    "train_acc", "val_auc", "val_acc", "config_digest",
)
STEP_COLUMNS = ("epoch", "step", "lr", "alpha", "total", "task_orig", "kl", "recon", "task_aug",
                "config_digest")


@dataclass
class BrsdaLossBreakdown:
    kl_term: float
    recon_term: float
    task_original: float
    task_augmented: float
    alpha: float
    total: float

    def recomposed_total(self) -> float:
        return self.task_original + self.alpha * (
            self.kl_term + self.recon_term + self.task_augmented
        )


def alpha_at(epoch: int, aug: AugmentationConfig, schedule: TrainSchedule) -> float:
    """Weight of the augmentation terms at ``epoch``.

    Rises linearly from 0 to ``alpha_final`` over the first
    ``alpha_ramp_fraction * total_epochs`` epochs and stays there.
    """
    if not 0 <= epoch < schedule.total_epochs:
        raise ConfigError(f"epoch {epoch} outside [0, {schedule.total_epochs})")
    if not aug.enabled:
        return 0.0
    ramp = aug.alpha_ramp_fraction * schedule.total_epochs
    return aug.alpha_final * min(1.0, epoch / ramp)


def lr_at(step: int, schedule: TrainSchedule, steps_per_epoch: int) -> float:
    """Linear warm-up to ``base_lr`` then cosine decay towards 0 at the last step."""
    warm = schedule.warmup_epochs * steps_per_epoch
    total = schedule.total_epochs * steps_per_epoch
    if step < warm:
        return schedule.base_lr * step / warm
    progress = (step - warm) / max(1, total - 1 - warm)
    return 0.5 * schedule.base_lr * (1.0 + math.cos(math.pi * min(1.0, progress)))


def augmentation_terms(features, labels, nets: BrsdaNets, aug: AugmentationConfig,
                       generator: torch.Generator | None):
    """Return ``(kl, recon, task_aug)`` averaged over ``aug.U`` draws.

    The draws are stacked along the batch axis (draw ``u`` occupies rows
    ``u*B:(u+1)*B``) so the classifier and reconstructor run once.
    """
    log_var = estimate_log_variance(features, nets.estimator)
    kl = core.kl_loss(log_var)
    a = features.repeat(aug.U, 1)
    mask = core.sample_direction_mask(a, aug.lam, generator)
    sample = core.sample_magnitudes(log_var.repeat(aug.U, 1), generator)
    augmented = core.augment(a, mask, sample)
    task_aug = F.cross_entropy(nets.classifier(augmented), labels.repeat(aug.U))
    recon_in = mask * sample.magnitudes if aug.recon_input == "masked" else sample.magnitudes
    recon = core.recon_loss(reconstruct(recon_in, nets.reconstructor), a)
    return kl, recon, task_aug


def compute_loss(x, y, nets: BrsdaNets, aug: AugmentationConfig, alpha: float,
                 generator: torch.Generator | None = None):
    """Forward pass; returns the differentiable total and a float breakdown.

    At ``alpha == 0`` the augmentation terms are still evaluated for logging,
    but outside the graph, so the gradient is exactly that of plain ERM.
    """
    features, logits = nets(x)
    task_orig = F.cross_entropy(logits, y)
    if not aug.U:
        zero = task_orig.new_zeros(())
        kl = recon = task_aug = zero
        total = task_orig
    elif alpha == 0:
        with torch.no_grad():
            kl, recon, task_aug = augmentation_terms(features, y, nets, aug, generator)
        total = task_orig
    else:
        kl, recon, task_aug = augmentation_terms(features, y, nets, aug, generator)
        total = task_orig + alpha * (kl + recon + task_aug)
    breakdown = BrsdaLossBreakdown(
        kl_term=kl.item(), recon_term=recon.item(), task_original=task_orig.item(),
        task_augmented=task_aug.item(), alpha=alpha, total=total.item(),
    )
    return total, breakdown


def make_optimizer(nets: BrsdaNets, schedule: TrainSchedule) -> torch.optim.Optimizer:
    return torch.optim.AdamW(nets.parameters(), lr=schedule.base_lr,
                             weight_decay=schedule.weight_decay, foreach=True)


def train_step(batch, nets: BrsdaNets, optimizer: torch.optim.Optimizer,
               aug: AugmentationConfig, alpha: float, generator: torch.Generator | None = None,
               grad_clip: float | None = 5.0, lr: float | None = None) -> BrsdaLossBreakdown:
    """One joint update of the backbone, classifier, estimator and reconstructor."""
    x, y = batch
    if len(y) == 0:
        raise DataError("empty batch")
    nets.train()
    if lr is not None:
        for group in optimizer.param_groups:
            group["lr"] = lr
    optimizer.zero_grad(set_to_none=True)
    try:
        total, breakdown = compute_loss(x, y, nets, aug, alpha, generator)
    except InvalidDistributionError as exc:
        raise NumericalError(f"magnitude distribution broke down: {exc}") from exc
    if not math.isfinite(breakdown.total):
        raise NumericalError(f"non-finite loss: {breakdown}", breakdown)
    total.backward()
    if grad_clip is not None:
        torch.nn.utils.clip_grad_norm_(nets.parameters(), grad_clip, foreach=True)
    optimizer.step()
    return breakdown


def batch_indices(n: int, batch_size: int, generator: torch.Generator) -> list[torch.Tensor]:
    """Shuffled mini-batch indices; a trailing batch of one sample is dropped (BatchNorm)."""
    perm = torch.randperm(n, generator=generator)
    batches = list(torch.split(perm, batch_size))
    if len(batches) > 1 and len(batches[-1]) == 1:
        batches.pop()
    return batches


def steps_per_epoch(n: int, batch_size: int) -> int:
    full, rest = divmod(n, batch_size)
    return full + (1 if rest > 1 or (rest == 1 and full == 0) else 0)


@torch.no_grad()
def predict(nets: BrsdaNets, dataset: LabeledDataset, batch_size: int = 256,
            dtype=torch.float32) -> np.ndarray:
    """Class probabilities for ``dataset`` in evaluation mode, without augmentation."""
    nets.eval()
    x, _ = dataset.tensors(dtype)
    probs = [torch.softmax(nets(xb)[1], dim=1) for xb in torch.split(x, batch_size)]
    return torch.cat(probs).double().numpy()


def evaluate(nets: BrsdaNets, dataset: LabeledDataset, batch_size: int = 256) -> dict:
    if dataset.labels.max() >= nets.num_classes:
        raise ShapeError(
            f"{dataset.split} labels reach {dataset.labels.max()} but the model has "
            f"{nets.num_classes} classes"
        )
    probs = predict(nets, dataset, batch_size)
    probs = probs / probs.sum(axis=1, keepdims=True)
    return {
        "auc": auc_macro(probs, dataset.labels),
        "acc": accuracy(probs, dataset.labels),
        "per_class_auc": per_class_auc(probs, dataset.labels),
    }


def build_nets(cfg: ExperimentConfig, input_shape, num_classes: int) -> BrsdaNets:
    torch.manual_seed(cfg.seed)
    bb = cfg.backbone
    backbone = build_backbone(bb.name, input_shape, bb.feature_dim, bb.widths)
    return BrsdaNets(backbone, num_classes, bb.hidden_dim)


def load_dataset(cfg: ExperimentConfig) -> Splits:
    ds = cfg.dataset
    if ds.kind == "synthetic":
        return generate_synthetic(ds.synthetic)
    if not ds.path:
        raise ConfigError("dataset.path: required when dataset.kind is 'archive'")
    return load_archive(ds.path, ds.layout, ds.num_classes)


def check_splits(splits: Splits) -> None:
    for ds in splits:
        if not np.isfinite(ds.images).all():
            raise DataError(f"{ds.split} split contains non-finite pixels")
        if ds.labels.min() < 0 or ds.labels.max() >= splits.num_classes:
            raise DataError(f"{ds.split} labels outside [0, {splits.num_classes})")
    if len(np.unique(splits.val.labels)) < 2:
        raise DataError("validation split needs at least two classes for AUC")
    if len(splits.train) < 2:
        raise DataError("training split needs at least two samples")


@dataclass
class TrainResult:
    config: ExperimentConfig
    nets: BrsdaNets
    history: list[dict] = field(default_factory=list)
    steps: list[dict] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)
    best_epoch: int = -1
    best_val_auc: float = -math.inf
    best_state: dict | None = None
    final_test: dict | None = None
    best_test: dict | None = None
    output_dir: Path | None = None

    @property
    def final(self) -> dict:
        return self.history[-1]

    def best_nets(self) -> BrsdaNets:
        nets = copy.deepcopy(self.nets)
        nets.load_state_dict(self.best_state)
        return nets


def _seeds(seed: int) -> tuple[int, int]:
    data_seed, aug_seed = np.random.SeedSequence(seed).generate_state(2)
    return int(data_seed), int(aug_seed)


def train_run(splits: Splits, cfg: ExperimentConfig, output_dir=None) -> TrainResult:
    """Train for ``total_epochs`` and keep the best-by-validation-AUC weights.

    With ``output_dir`` set, writes ``metrics.csv``, ``steps.csv``,
    ``timing.csv``, ``best.pt`` and ``last.pt`` there.
    """
    cfg.validate()
    check_splits(splits)
    sch, aug = cfg.schedule, cfg.augmentation
    digest = cfg.digest
    nets = build_nets(cfg, splits.train.sample_shape, splits.num_classes)
    optimizer = make_optimizer(nets, sch)
    data_seed, aug_seed = _seeds(cfg.seed)
    data_gen = torch.Generator().manual_seed(data_seed)
    aug_gen = torch.Generator().manual_seed(aug_seed)

    x_train, y_train = splits.train.tensors()
    n_steps = steps_per_epoch(len(y_train), sch.batch_size)
    result = TrainResult(cfg, nets)
    out = Path(output_dir) if output_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        result.output_dir = out

    step = 0
    for epoch in range(sch.total_epochs):
        t0 = time.perf_counter()
        alpha = alpha_at(epoch, aug, sch)
        rows = []
        for idx in batch_indices(len(y_train), sch.batch_size, data_gen):
            lr = lr_at(step, sch, n_steps)
            try:
                b = train_step((x_train[idx], y_train[idx]), nets, optimizer, aug, alpha,
                               aug_gen, sch.grad_clip, lr)
            except NumericalError as exc:
                exc.args = (f"epoch {epoch} step {step}: {exc.args[0]}",)
                raise
            rows.append({"epoch": epoch, "step": step, "lr": lr, "alpha": alpha,
                         "total": b.total, "task_orig": b.task_original, "kl": b.kl_term,
                         "recon": b.recon_term, "task_aug": b.task_augmented,
                         "config_digest": digest})
            step += 1
        result.steps.extend(rows)

        val = evaluate(nets, splits.val)
        train_acc = accuracy(predict(nets, splits.train), splits.train.labels)
        mean = {k: float(np.mean([r[k] for r in rows])) for k in ("total", "kl", "recon",
                                                                   "task_orig", "task_aug")}
        result.history.append({
            "epoch": epoch, "lr": rows[-1]["lr"], "alpha": alpha, "train_loss": mean["total"],
            "kl": mean["kl"], "recon": mean["recon"], "task_orig": mean["task_orig"],
            "task_aug": mean["task_aug"], "train_acc": train_acc, "val_auc": val["auc"],
            "val_acc": val["acc"], "config_digest": digest,
        })
        if val["auc"] > result.best_val_auc:
            result.best_val_auc = val["auc"]
            result.best_epoch = epoch
            result.best_state = copy.deepcopy(nets.state_dict())
            if out is not None:
                save_checkpoint(out / "best.pt", nets, cfg, splits, epoch=epoch)
        result.epoch_seconds.append(time.perf_counter() - t0)
        log.info("epoch %d alpha=%.3f loss=%.4f val_auc=%.4f val_acc=%.4f", epoch, alpha,
                 mean["total"], val["auc"], val["acc"])

    result.final_test = evaluate(nets, splits.test)
    result.best_test = evaluate(result.best_nets(), splits.test)
    if out is not None:
        save_checkpoint(out / "last.pt", nets, cfg, splits, epoch=sch.total_epochs - 1)
        write_csv(out / "metrics.csv", METRICS_COLUMNS, result.history)
        write_csv(out / "steps.csv", STEP_COLUMNS, result.steps)
        write_csv(out / "timing.csv", ("epoch", "wall_seconds", "config_digest"),
                  [{"epoch": i, "wall_seconds": s, "config_digest": digest}
                   for i, s in enumerate(result.epoch_seconds)])
    return result


def write_csv(path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def save_checkpoint(path, nets: BrsdaNets, cfg: ExperimentConfig, splits: Splits | None = None,
                    **meta) -> None:
    """Write a single-file checkpoint.

    Keys: ``format``, ``config`` (nested dict), ``config_digest``,
    ``input_shape``, ``num_classes``, ``feature_dim``, ``backbone``,
    ``classifier``, ``estimator``, ``reconstructor`` (state dicts) and any
    extra ``meta`` entries such as ``epoch``.
    """
    input_shape = list(splits.train.sample_shape) if splits is not None else meta.pop("input_shape")
    payload = {
        "format": CHECKPOINT_FORMAT,
        "config": cfg.to_dict(),
        "config_digest": cfg.digest,
        "input_shape": input_shape,
        "num_classes": nets.num_classes,
        "feature_dim": nets.feature_dim,
        "backbone": nets.backbone.state_dict(),
        "classifier": nets.classifier.state_dict(),
        "estimator": nets.estimator.state_dict(),
        "reconstructor": nets.reconstructor.state_dict(),
        **meta,
    }
    torch.save(payload, path)


def load_checkpoint(path) -> tuple[BrsdaNets, ExperimentConfig, dict]:
    from .config import build_config

    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except (OSError, RuntimeError) as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise DataError(f"{path}: unsupported checkpoint format {payload.get('format')!r}")
    cfg = build_config(payload["config"])
    nets = build_nets(cfg, payload["input_shape"], payload["num_classes"])
    for part in ("backbone", "classifier", "estimator", "reconstructor"):
        getattr(nets, part).load_state_dict(payload[part])
    nets.eval()
    return nets, cfg, payload
