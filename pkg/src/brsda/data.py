"""Synthetic desk-scale datasets and MedMNIST-style ``.npz`` archives.

Images are stored channels-last with values in ``[0, 1]``: ``N x H x W x C``
for 2D, ``N x D x H x W x C`` for volumes and ``N x D`` for vector data.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .errors import ConfigError, DataError

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
ARCHIVE_KEYS = tuple(f"{s}_{part}" for s in SPLITS for part in ("images", "labels"))


@dataclass(frozen=True)
class LabeledDataset:
    images: np.ndarray
    labels: np.ndarray
    split: str

    def __post_init__(self):
        if self.split not in SPLITS:
            raise DataError(f"unknown split name {self.split!r}")
        if len(self.images) == 0:
            raise DataError(f"{self.split} split is empty")
        if len(self.images) != len(self.labels):
            raise DataError(
                f"{self.split}: {len(self.images)} images but {len(self.labels)} labels"
            )

    def __len__(self):
        return len(self.labels)

    @property
    def sample_shape(self) -> tuple[int, ...]:
        """Per-sample shape in channels-first order, as the backbones expect."""
        s = self.images.shape[1:]
        return s if len(s) == 1 else (s[-1], *s[:-1])

    def tensors(self, dtype=torch.float32) -> tuple[torch.Tensor, torch.Tensor]:
        x = torch.as_tensor(self.images, dtype=dtype)
        if x.dim() > 2:
            x = x.movedim(-1, 1).contiguous()
        return x, torch.as_tensor(self.labels, dtype=torch.long)


@dataclass(frozen=True)
class Splits:
    train: LabeledDataset
    val: LabeledDataset
    test: LabeledDataset
    num_classes: int

    def __iter__(self):
        return iter((self.train, self.val, self.test))

    def __getitem__(self, name: str) -> LabeledDataset:
        if name not in SPLITS:
            raise DataError(f"unknown split {name!r}")
        return getattr(self, name)


@dataclass(frozen=True)
class SyntheticSpec:
    """Class-dependent low-frequency gratings plus Gaussian pixel noise.

    Each class owns a base orientation and spatial frequency; every sample jitters
    the orientation, phase and contrast, so within-class images differ even with
    ``noise_sigma = 0``.
    """

    classes: int = 4
    samples_per_class: int = 100
    image_side: int = 16
    channels: int = 1
    noise_sigma: float = 0.25
    orientation_jitter: float = 0.4
    phase_jitter: float = 1.2
    contrast_range: tuple[float, float] = (0.1, 0.2)
    base_frequency: float = 1.5
    split_ratios: tuple[float, float, float] = (0.7, 0.15, 0.15)
    seed: int = 0


def stratified_counts(n: int, ratios) -> list[int]:
    """Split ``n`` items by ``ratios`` with largest-remainder rounding."""
    exact = [n * r for r in ratios]
    counts = [math.floor(e) for e in exact]
    order = sorted(range(len(ratios)), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return counts


def _class_patterns(spec: SyntheticSpec, rng: np.random.Generator):
    base_theta = np.pi * np.arange(spec.classes) / spec.classes
    freq = spec.base_frequency * (1.0 + 0.5 * (np.arange(spec.classes) % 2))
    color = rng.uniform(0.6, 1.0, size=(spec.classes, spec.channels))
    return base_theta, freq, color


def generate_synthetic(spec: SyntheticSpec) -> Splits:
    """Generate three stratified splits; identical specs give identical arrays."""
    if spec.classes < 2:
        raise ConfigError(f"synthetic.classes must be >= 2, got {spec.classes}")
    if spec.samples_per_class < 1:
        raise ConfigError("synthetic.samples_per_class must be >= 1")
    if spec.image_side < 2 or spec.channels < 1:
        raise ConfigError("synthetic.image_side must be >= 2 and channels >= 1")
    if spec.noise_sigma < 0:
        raise ConfigError("synthetic.noise_sigma must be >= 0")
    ratios = tuple(spec.split_ratios)
    if len(ratios) != 3 or min(ratios) <= 0 or not math.isclose(sum(ratios), 1.0):
        raise ConfigError(f"synthetic.split_ratios must be 3 positive numbers summing to 1, got {ratios}")

    rng = np.random.default_rng(spec.seed)
    base_theta, freq, color = _class_patterns(spec, rng)
    side = spec.image_side
    grid = (np.arange(side) + 0.5) / side - 0.5
    yy, xx = np.meshgrid(grid, grid, indexing="ij")

    n = spec.samples_per_class
    parts = {s: ([], []) for s in SPLITS}
    for c in range(spec.classes):
        theta = base_theta[c] + rng.uniform(-1, 1, n) * spec.orientation_jitter
        phase = rng.uniform(-1, 1, n) * spec.phase_jitter
        contrast = rng.uniform(*spec.contrast_range, n)
        proj = np.cos(theta)[:, None, None] * xx + np.sin(theta)[:, None, None] * yy
        wave = np.cos(2 * np.pi * freq[c] * proj + phase[:, None, None])
        img = 0.5 + contrast[:, None, None] * wave
        img = img[..., None] * color[c]
        img = img + spec.noise_sigma * rng.standard_normal(img.shape)
        img = np.clip(img, 0.0, 1.0).astype(np.float32)

        order = rng.permutation(n)
        bounds = np.cumsum([0, *stratified_counts(n, ratios)])
        for s, lo, hi in zip(SPLITS, bounds[:-1], bounds[1:]):
            parts[s][0].append(img[order[lo:hi]])
            parts[s][1].append(np.full(hi - lo, c, dtype=np.int64))

    out = {}
    for s in SPLITS:
        images = np.concatenate(parts[s][0])
        labels = np.concatenate(parts[s][1])
        perm = rng.permutation(len(labels))
        out[s] = LabeledDataset(images[perm], labels[perm], s)
    return Splits(out["train"], out["val"], out["test"], spec.classes)


def save_archive(path, splits: Splits) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {}
    for ds in splits:
        arrays[f"{ds.split}_images"] = ds.images
        arrays[f"{ds.split}_labels"] = ds.labels
    with open(path, "wb") as fh:
        np.savez_compressed(fh, **arrays)
    return path


_RANK_BY_LAYOUT = {"vector": 2, "nhwc": 4, "ndhwc": 5}


def _coerce_images(key: str, images: np.ndarray, layout: str | None) -> np.ndarray:
    if layout in ("medmnist2d", "medmnist3d"):
        want = 3 if layout == "medmnist2d" else 4
        if images.ndim == want:
            log.info("%s: appending channel axis to shape %s", key, images.shape)
            images = images[..., None]
        elif images.ndim != want + 1:
            raise DataError(f"{key}: rank {images.ndim} does not fit layout {layout}")
    elif layout is None:
        if images.ndim not in (2, 4, 5):
            raise DataError(
                f"{key}: expected rank 2, 4 or 5 (channels last), got shape {images.shape}; "
                "pass a medmnist layout for channel-less arrays"
            )
    elif layout in _RANK_BY_LAYOUT:
        if images.ndim != _RANK_BY_LAYOUT[layout]:
            raise DataError(f"{key}: rank {images.ndim} does not fit layout {layout}")
    else:
        raise ConfigError(f"unknown archive layout {layout!r}")

    if np.issubdtype(images.dtype, np.integer):
        info = np.iinfo(images.dtype)
        if images.min() < 0:
            raise DataError(f"{key}: negative integer pixel values")
        log.info("%s: rescaling %s pixels by 1/%d", key, images.dtype, info.max)
        return (images.astype(np.float64) / info.max).astype(np.float32)
    if np.issubdtype(images.dtype, np.floating):
        if not np.isfinite(images).all():
            raise DataError(f"{key}: contains NaN or Inf pixels")
        if images.min() < 0 or images.max() > 1:
            raise DataError(
                f"{key}: floating pixels outside [0, 1] (range {images.min()}..{images.max()})"
            )
        if images.dtype != np.float32:
            log.info("%s: casting %s to float32", key, images.dtype)
        return images.astype(np.float32, copy=False)
    raise DataError(f"{key}: unsupported dtype {images.dtype}")


def _coerce_labels(key: str, labels: np.ndarray, n: int) -> np.ndarray:
    if labels.ndim == 2 and labels.shape[1] == 1:
        log.info("%s: flattening labels of shape %s", key, labels.shape)
        labels = labels[:, 0]
    if labels.ndim != 1 or len(labels) != n:
        raise DataError(f"{key}: expected shape ({n},) or ({n}, 1), got {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise DataError(f"{key}: labels must be integers, got {labels.dtype}")
    if labels.dtype != np.int64:
        log.info("%s: casting labels %s to int64", key, labels.dtype)
    return labels.astype(np.int64, copy=False)


def load_archive(path, layout: str | None = None, num_classes: int | None = None) -> Splits:
    """Load and validate a six-array ``.npz`` archive.

    Args:
        path: archive with ``{train,val,test}_{images,labels}``.
        layout: ``None`` accepts channels-last rank 2/4/5 arrays as-is;
            ``"vector"``, ``"nhwc"``, ``"ndhwc"`` pin the rank;
            ``"medmnist2d"`` / ``"medmnist3d"`` also accept arrays without a
            channel axis, as distributed by MedMNIST.
        num_classes: label bound; inferred as ``max(label) + 1`` when omitted.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"archive not found: {path}")
    try:
        archive = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read archive {path}: {exc}") from exc
    with archive:
        missing = [k for k in ARCHIVE_KEYS if k not in archive.files]
        if missing:
            raise DataError(f"archive {path} is missing key(s): {', '.join(missing)}")
        raw = {k: archive[k] for k in ARCHIVE_KEYS}

    images, labels = {}, {}
    for s in SPLITS:
        ik, lk = f"{s}_images", f"{s}_labels"
        images[s] = _coerce_images(ik, raw[ik], layout)
        labels[s] = _coerce_labels(lk, raw[lk], len(images[s]))
    shapes = {images[s].shape[1:] for s in SPLITS}
    if len(shapes) != 1:
        raise DataError(f"per-sample shapes differ across splits: {sorted(shapes)}")

    if num_classes is None:
        num_classes = int(max(labels[s].max() for s in SPLITS)) + 1
    for s in SPLITS:
        lk = f"{s}_labels"
        bad = (labels[s] < 0) | (labels[s] >= num_classes)
        if bad.any():
            raise DataError(
                f"{lk}: label {labels[s][bad][0]} outside [0, {num_classes})"
            )
    if num_classes < 2:
        raise DataError("archive labels contain fewer than 2 classes")
    return Splits(
        *(LabeledDataset(images[s], labels[s], s) for s in SPLITS), num_classes=num_classes
    )
