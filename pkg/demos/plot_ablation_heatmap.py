"""
Lambda x U ablation as a text heatmap
=====================================

Runs a small grid on a shortened desk configuration and prints the AUC change
relative to the augmentation-free baseline for every cell. The same grid is
available from the command line as ``brsda ablate``.
"""

import torch

from brsda.ablation import run_ablation
from brsda.config import load_config
from brsda.training import load_dataset

torch.set_num_threads(1)
cfg = load_config("desk-synthetic", ["schedule.total_epochs=10", "schedule.warmup_epochs=2"])
lambdas, us = [0.2, 0.6, 1.0], [1, 4]
grid = run_ablation(load_dataset(cfg), cfg, lambdas, us, seeds=[0], csv_path="ablation.csv")

print("delta AUC vs baseline (%.4f)" % grid.baseline_auc)
print("lambda \\ U " + "".join(f"{u:>9d}" for u in us))
for row in range(len(lambdas)):
    cells = grid.rows()[row * len(us):(row + 1) * len(us)]
    print(f"{lambdas[row]:>10.1f} " + "".join(f"{c['delta_auc']:>+9.4f}" for c in cells))
print("written to ablation.csv")
