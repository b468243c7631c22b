"""
Baseline against BRSDA on the desk-scale synthetic task
=======================================================

Trains the compact CNN twice per seed, once without augmentation and once with
the default augmentation settings, and prints validation AUC and the
train-validation accuracy gap. Takes a few minutes on one CPU core.
"""

import sys

import numpy as np
import torch

from brsda.config import load_config
from brsda.training import load_dataset, train_run

torch.set_num_threads(1)
seeds = range(int(sys.argv[1]) if len(sys.argv) > 1 else 3)

rows = []
for seed in seeds:
    over = [f"seed={seed}", f"dataset.synthetic.seed={seed}"]
    splits = load_dataset(load_config("desk-synthetic", over))
    base = train_run(splits, load_config("desk-synthetic", over + ["augmentation.U=0"])).final
    aug = train_run(splits, load_config("desk-synthetic", over)).final
    rows.append([base["val_auc"], aug["val_auc"],
                 base["train_acc"] - base["val_acc"], aug["train_acc"] - aug["val_acc"]])
    print(f"seed {seed}: val auc {rows[-1][0]:.4f} -> {rows[-1][1]:.4f}, "
          f"gap {rows[-1][2]:.3f} -> {rows[-1][3]:.3f}")

rows = np.array(rows)
print("mean val auc  base %.4f  brsda %.4f" % tuple(rows[:, :2].mean(0)))
print("mean acc gap  base %.3f   brsda %.3f" % tuple(rows[:, 2:].mean(0)))
