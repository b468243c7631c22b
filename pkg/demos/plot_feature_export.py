"""
Exporting original and augmented features for an embedding plot
================================================================

Trains briefly, exports the test-split features with one augmented copy per
sample, and projects both with PCA so the augmented cloud can be compared with
the original one. Any external t-SNE or UMAP tool can read the same CSV.
"""

import numpy as np
import torch

from brsda.ablation import export_features, write_feature_csv
from brsda.config import load_config
from brsda.training import load_dataset, train_run

torch.set_num_threads(1)
cfg = load_config("desk-synthetic", ["schedule.total_epochs=10", "schedule.warmup_epochs=2"])
splits = load_dataset(cfg)
result = train_run(splits, cfg)

rows = export_features(result.nets, splits.test, cfg, torch.Generator().manual_seed(0))
write_feature_csv("features.csv", rows, cfg.digest)

k = result.nets.feature_dim
x = np.array([[r[f"f{j}"] for j in range(k)] for r in rows])
kind = np.array([r["kind"] for r in rows])
centred = x - x[kind == "original"].mean(0)
_, _, vt = np.linalg.svd(centred[kind == "original"], full_matrices=False)
proj = centred @ vt[:2].T
for name in ("original", "augmented"):
    p = proj[kind == name]
    print(f"{name:9s} spread along PC1/PC2: {p.std(0).round(3)}")
print(f"wrote {len(rows)} rows to features.csv")
