"""Feature-space semantic augmentation with variationally estimated magnitudes."""

from .core import (
    MagnitudeSample,
    augment,
    brsda_loss,
    kl_loss,
    recon_loss,
    sample_direction_mask,
    sample_magnitudes,
)
from .config import AugmentationConfig, ExperimentConfig, TrainSchedule, load_config
from .data import LabeledDataset, Splits, SyntheticSpec, generate_synthetic, load_archive, save_archive
from .metrics import accuracy, auc_binary, auc_macro
from .nets import BrsdaNets, build_backbone, estimate_log_variance, reconstruct
from .training import BrsdaLossBreakdown, alpha_at, lr_at, train_run, train_step

__version__ = "0.1.0"
