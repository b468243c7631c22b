"""
What one augmentation draw does to a feature batch
==================================================

A small walk through the sampling primitives: the direction mask, the
reparameterized magnitudes and the augmented features they produce.
"""

import torch

from brsda import core

g = torch.Generator().manual_seed(0)

# Post-ReLU style features: some coordinates are exactly zero.
a = torch.relu(torch.randn(4, 6, generator=g))
print("features\n", a)

# Each coordinate is kept with probability 1 - lambda, and never where a == 0.
mask = core.sample_direction_mask(a, lam=0.5, generator=g)
print("mask\n", mask)

# Magnitudes from a zero-mean Gaussian with per-coordinate variance exp(lv).
log_var = torch.full_like(a, -2.0)
sample = core.sample_magnitudes(log_var, g)
augmented = core.augment(a, mask, sample)
print("augmented\n", augmented)
print("zeros untouched:", torch.equal(augmented[a == 0], a[a == 0]))

# The two regularisers: KL to N(0, 1) and half squared reconstruction error.
kl, recon = core.brsda_loss(log_var, torch.zeros_like(a), a)
print(f"kl={kl.item():.4f} recon={recon.item():.4f}")

# lambda = 1 drops every direction, so the features come back unchanged.
same = core.augment(a, core.sample_direction_mask(a, 1.0, g), sample)
print("lambda=1 identity:", torch.equal(same, a))
