"""Acceptance checks, one test per criterion, each reporting a PASS/FAIL line.

Run ``pytest tests/test_acceptance.py -v`` (the lines appear in the terminal
summary) or ``python tests/test_acceptance.py`` to print them directly.
The desk-scale experiments (criteria 7 to 10) take several minutes on one CPU.
"""

from __future__ import annotations

import csv
import itertools
import math
import statistics
import sys
import time
from pathlib import Path

import numpy as np
import pytest
import torch
import torch.nn.functional as F

sys.path.insert(0, str(Path(__file__).parent))

from brsda import core
from brsda.ablation import ABLATION_COLUMNS, run_ablation
from brsda.cli import main as cli_main
from brsda.config import load_config
from brsda.metrics import auc_binary, auc_macro
from brsda.nets import FeatureMLP, build_backbone
from brsda.training import (
    build_nets,
    compute_loss,
    load_dataset,
    make_optimizer,
    train_run,
    train_step,
)

RESULTS: list[str] = []


def report(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {number:>2}: {title} | {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def desk(*overrides):
    return load_config("desk-synthetic", list(overrides))


# 1 -------------------------------------------------------------------------

def test_c01_augmentation_exactness():
    t0 = time.perf_counter()
    g = torch.Generator().manual_seed(1)
    zeros_ok = identity_ok = True
    n_batches = 1000
    for i in range(n_batches):
        b, k = int(torch.randint(1, 33, (1,), generator=g)), int(torch.randint(1, 65, (1,), generator=g))
        dtype = torch.float64 if i % 2 else torch.float32
        a = torch.randn(b, k, generator=g, dtype=dtype)
        a = torch.relu(a) if i % 3 == 0 else a.masked_fill(torch.rand(b, k, generator=g) < 0.3, 0.0)
        lv = 4 * torch.rand(b, k, generator=g, dtype=dtype) - 2
        sample = core.sample_magnitudes(lv, g)
        lam = float(torch.rand((), generator=g))
        out = core.augment(a, core.sample_direction_mask(a, lam, g), sample)
        zero = a == 0
        bits = torch.int64 if dtype == torch.float64 else torch.int32
        zeros_ok &= torch.equal(out[zero].view(bits), a[zero].view(bits))
        ident = core.augment(a, core.sample_direction_mask(a, 1.0, g), sample)
        identity_ok &= torch.equal(ident, a)
    elapsed = time.perf_counter() - t0
    report(1, "zero coordinates preserved and lambda=1 identity", zeros_ok and identity_ok and elapsed < 5,
           f"{n_batches} batches, zeros_ok={zeros_ok}, identity_ok={identity_ok}, {elapsed:.2f}s")


# 2 -------------------------------------------------------------------------

def test_c02_mask_statistics():
    t0 = time.perf_counter()
    n = 100_000
    worst = 0.0
    lines = []
    for i, lam in enumerate((0.2, 0.5, 0.8)):
        feats = torch.ones(1000, 100)
        mask = core.sample_direction_mask(feats, lam, torch.Generator().manual_seed(10 + i))
        drop = 1.0 - mask.mean().item()
        se = math.sqrt(lam * (1 - lam) / n)
        z = abs(drop - lam) / se
        worst = max(worst, z)
        lines.append(f"lam={lam}: drop={drop:.4f} z={z:.2f}")
    elapsed = time.perf_counter() - t0
    report(2, "mask drop rate within 3 standard errors", worst <= 3 and elapsed < 5,
           "; ".join(lines) + f"; {elapsed:.2f}s")


# 3 -------------------------------------------------------------------------

def test_c03_kl_and_gradient():
    torch.manual_seed(0)
    kl_unit = core.kl_loss(torch.zeros(4, 3, dtype=torch.float64)).item()
    kl_e = core.kl_loss(torch.ones(1, 1, dtype=torch.float64)).item()
    e_err = abs(kl_e - (math.e - 2) / 2)

    b, k, h = 4, 6, 1e-4
    rec = FeatureMLP(k).double().train()
    g = torch.Generator().manual_seed(3)
    worst = 0.0
    for _ in range(100):
        a = torch.randn(b, k, generator=g, dtype=torch.float64)
        eps = torch.randn(b, k, generator=g, dtype=torch.float64)
        mask = core.sample_direction_mask(a, 0.5, g)
        lv0 = 4 * torch.rand(b, k, generator=g, dtype=torch.float64) - 2

        def objective(lv):
            sample = core.sample_magnitudes(lv, noise=eps)
            kl, recon = core.brsda_loss(lv, rec(mask * sample.magnitudes), a)
            return kl + recon

        lv = lv0.clone().requires_grad_(True)
        (grad,) = torch.autograd.grad(objective(lv), lv)
        fd = torch.zeros_like(lv0)
        with torch.no_grad():
            for idx in itertools.product(range(b), range(k)):
                up, down = lv0.clone(), lv0.clone()
                up[idx] += h
                down[idx] -= h
                fd[idx] = (objective(up) - objective(down)) / (2 * h)
        rel = ((grad - fd).norm() / max(grad.norm(), fd.norm())).item()
        worst = max(worst, rel)
    ok = kl_unit == 0.0 and e_err < 1e-9 and worst < 1e-4
    report(3, "KL closed form and finite-difference gradient", ok,
           f"kl(1)={kl_unit}, |kl(e)-(e-2)/2|={e_err:.1e}, worst rel err={worst:.2e} over 100 points")


# 4 -------------------------------------------------------------------------

def test_c04_end_to_end_gradient_flow():
    cfg = desk("augmentation.U=3", "augmentation.lambda=0.5", "backbone.widths=[4]",
               "backbone.feature_dim=8", "dataset.synthetic.image_side=8")
    torch.manual_seed(0)
    nets = build_nets(cfg, (1, 8, 8), 4).double().train()
    x = torch.rand(4, 1, 8, 8, generator=torch.Generator().manual_seed(1), dtype=torch.float64)
    y = torch.tensor([0, 1, 2, 3])

    def loss():
        gen = torch.Generator().manual_seed(7)
        total, _ = compute_loss(x, y, nets, cfg.augmentation, 0.5, gen)
        return total

    nets.zero_grad()
    loss().backward()
    groups = {"theta": nets.task_parameters(), "phi_m": list(nets.estimator.parameters()),
              "phi_a": list(nets.reconstructor.parameters())}
    norms = {n: sum(float(p.grad.abs().sum()) for p in ps) for n, ps in groups.items()}

    rng = np.random.default_rng(0)
    picks = []
    for name, params in groups.items():
        flat = [(p, i) for p in params for i in range(p.numel())]
        count = {"theta": 8, "phi_m": 6, "phi_a": 6}[name]
        picks += [flat[j] for j in rng.choice(len(flat), count, replace=False)]
    worst, h = 0.0, 1e-6
    with torch.no_grad():
        for p, i in picks:
            analytic = p.grad.view(-1)[i].item()
            orig = p.view(-1)[i].item()
            p.view(-1)[i] = orig + h
            up = loss().item()
            p.view(-1)[i] = orig - h
            down = loss().item()
            p.view(-1)[i] = orig
            fd = (up - down) / (2 * h)
            rel = abs(analytic - fd) / max(abs(analytic), abs(fd), 1e-6)
            worst = max(worst, rel)
    ok = all(v > 0 for v in norms.values()) and worst < 1e-3
    report(4, "gradients reach all three parameter groups; finite differences agree", ok,
           ", ".join(f"|grad {n}|={v:.3g}" for n, v in norms.items())
           + f", worst rel err={worst:.2e} over {len(picks)} parameters")


# 5 -------------------------------------------------------------------------

def erm_reference(splits, cfg):
    """Plain ERM written out by hand: same init, batches and schedule, no augmentation code."""
    sch = cfg.schedule
    torch.manual_seed(cfg.seed)
    backbone = build_backbone(cfg.backbone.name, splits.train.sample_shape,
                              cfg.backbone.feature_dim, cfg.backbone.widths)
    head = torch.nn.Linear(backbone.feature_dim, splits.num_classes)
    params = [*backbone.parameters(), *head.parameters()]
    opt = torch.optim.AdamW(params, lr=sch.base_lr, weight_decay=sch.weight_decay, foreach=True)
    data_seed = int(np.random.SeedSequence(cfg.seed).generate_state(2)[0])
    gen = torch.Generator().manual_seed(data_seed)
    x, y = splits.train.tensors()
    n = len(y)
    per_epoch = n // sch.batch_size + (1 if n % sch.batch_size > 1 else 0)
    warm, total = sch.warmup_epochs * per_epoch, sch.total_epochs * per_epoch
    losses, step = [], 0
    for _ in range(sch.total_epochs):
        backbone.train()
        head.train()
        batches = list(torch.split(torch.randperm(n, generator=gen), sch.batch_size))
        if len(batches[-1]) == 1:
            batches.pop()
        for idx in batches:
            if step < warm:
                lr = sch.base_lr * step / warm
            else:
                lr = 0.5 * sch.base_lr * (1 + math.cos(math.pi * min(1.0, (step - warm) / (total - 1 - warm))))
            for group in opt.param_groups:
                group["lr"] = lr
            opt.zero_grad(set_to_none=True)
            loss = F.cross_entropy(head(backbone(x[idx])), y[idx])
            loss.backward()
            torch.nn.utils.clip_grad_norm_(params, sch.grad_clip, foreach=True)
            opt.step()
            losses.append(loss.item())
            step += 1
        # the library evaluates between epochs; evaluation never touches the data stream
    return losses


def test_c05_loss_decomposition_and_erm_equivalence():
    cfg = desk("schedule.total_epochs=8", "schedule.warmup_epochs=2")
    splits = load_dataset(cfg)
    result = train_run(splits, cfg)
    worst = 0.0
    for s in result.steps:
        recomposed = s["task_orig"] + s["alpha"] * (s["kl"] + s["recon"] + s["task_aug"])
        worst = max(worst, abs(s["total"] - recomposed) / max(abs(s["total"]), 1e-12))

    zero = desk("schedule.total_epochs=8", "schedule.warmup_epochs=2", "augmentation.alpha_final=0")
    lib = [s["total"] for s in train_run(splits, zero).steps]
    ref = erm_reference(splits, zero)
    identical = lib == ref
    ok = worst < 1e-6 and identical and len(result.steps) > 0
    report(5, "total = task_orig + alpha(kl + recon + task_aug); alpha=0 matches plain ERM", ok,
           f"{len(result.steps)} steps, worst rel err={worst:.1e}; alpha=0 vs ERM: {len(lib)} losses, "
           f"bit-identical={identical}")


# 6 -------------------------------------------------------------------------

def brute_auc(scores, labels):
    pos = [s for s, l in zip(scores, labels) if l == 1]
    neg = [s for s, l in zip(scores, labels) if l == 0]
    hits = sum(1.0 if p > q else 0.5 if p == q else 0.0 for p in pos for q in neg)
    return hits / (len(pos) * len(neg))


def brute_macro(probs, labels):
    if probs.shape[1] == 2:
        return brute_auc(list(probs[:, 1]), labels)
    per = []
    for c in range(probs.shape[1]):
        target = [int(l == c) for l in labels]
        if 0 < sum(target) < len(target):
            per.append(brute_auc(list(probs[:, c]), target))
    return sum(per) / len(per)


def test_c06_auc_oracle():
    rng = np.random.default_rng(6)
    mismatches = ties = 0
    for i in range(200):
        n, c = int(rng.integers(4, 51)), int(rng.integers(2, 5))
        labels = rng.integers(0, c, n)
        labels[:2] = [0, 1]
        raw = rng.integers(0, 4, (n, c)).astype(float) if i % 2 else rng.normal(size=(n, c))
        probs = np.exp(raw) / np.exp(raw).sum(1, keepdims=True)
        binary = (labels == 1).astype(int)
        ties += len(np.unique(probs[:, 1])) < n
        if auc_binary(probs[:, 1], binary) != brute_auc(list(probs[:, 1]), list(binary)):
            mismatches += 1
        if auc_macro(probs, labels) != brute_macro(probs, list(labels)):
            mismatches += 1
    report(6, "AUC equals exhaustive pairwise count exactly", mismatches == 0,
           f"200 instances ({ties} with tied scores), {mismatches} mismatches")


# 7 -------------------------------------------------------------------------

def desk_pair(seed):
    over = [f"seed={seed}", f"dataset.synthetic.seed={seed}"]
    base_cfg = desk(*over, "augmentation.U=0")
    brsda_cfg = desk(*over)
    splits = load_dataset(brsda_cfg)
    return train_run(splits, base_cfg).final, train_run(splits, brsda_cfg).final


@pytest.mark.slow
def test_c07_regularization_effect():
    t0 = time.perf_counter()
    cfg = desk()
    assert len(load_dataset(cfg).train) == 200 and cfg.schedule.total_epochs == 30
    pairs = [desk_pair(seed) for seed in range(5)]
    base_auc = [b["val_auc"] for b, _ in pairs]
    aug_auc = [a["val_auc"] for _, a in pairs]
    diffs = [a - b for a, b in zip(aug_auc, base_auc)]
    base_gap = np.mean([b["train_acc"] - b["val_acc"] for b, _ in pairs])
    aug_gap = np.mean([a["train_acc"] - a["val_acc"] for _, a in pairs])
    elapsed = time.perf_counter() - t0
    ok = (np.mean(aug_auc) >= np.mean(base_auc) - 0.005 and statistics.median(diffs) >= 0
          and aug_gap <= base_gap and elapsed < 15 * 60)
    report(7, "desk-scale regularization effect", ok,
           f"val AUC base={np.mean(base_auc):.4f} brsda={np.mean(aug_auc):.4f}, "
           f"median diff={statistics.median(diffs):+.4f}, gap base={base_gap:.3f} brsda={aug_gap:.3f}, "
           f"{elapsed:.0f}s")


# 8 -------------------------------------------------------------------------

def step_times(nets, opt, cfg, alpha, batches, gen):
    out = []
    for batch in batches:
        t = time.perf_counter()
        train_step(batch, nets, opt, cfg.augmentation, alpha, gen, cfg.schedule.grad_clip)
        out.append(time.perf_counter() - t)
    return out


@pytest.mark.slow
def test_c08_overhead():
    base_cfg, aug_cfg = desk("augmentation.U=0"), desk()
    splits = load_dataset(aug_cfg)
    x, y = splits.train.tensors()
    bs = aug_cfg.schedule.batch_size
    g = torch.Generator().manual_seed(0)
    batches = [(x[i], y[i]) for i in (torch.randperm(len(y), generator=g)[:bs] for _ in range(10))]
    runners = {}
    for name, cfg, alpha in (("base", base_cfg, 0.0), ("brsda", aug_cfg, aug_cfg.augmentation.alpha_final)):
        nets = build_nets(cfg, splits.train.sample_shape, splits.num_classes)
        runners[name] = (nets, make_optimizer(nets, cfg.schedule), cfg, alpha, torch.Generator().manual_seed(1))
    for r in runners.values():
        step_times(*r[:4], batches[:3], r[4])
    times = {"base": [], "brsda": []}
    for _ in range(15):  # interleave to cancel drift in machine load
        for name, r in runners.items():
            times[name] += step_times(*r[:4], batches, r[4])
    base, aug = statistics.median(times["base"]), statistics.median(times["brsda"])
    overhead = aug / base - 1
    report(8, "BRSDA step overhead below 10%", overhead < 0.10 and len(times["base"]) >= 100,
           f"{len(times['base'])} steps each, median base={base * 1e3:.2f}ms brsda={aug * 1e3:.2f}ms, "
           f"overhead={overhead * 100:.1f}%")


# 9 -------------------------------------------------------------------------

@pytest.mark.slow
def test_c09_ablation_grid(tmp_path):
    t0 = time.perf_counter()
    cfg = desk()
    path = tmp_path / "grid.csv"
    grid = run_ablation(load_dataset(cfg), cfg, [0.2, 0.6, 1.0], [1, 4], [0, 1], csv_path=path)
    with open(path) as fh:
        reader = csv.DictReader(fh)
        header, rows = tuple(reader.fieldnames), list(reader)
    schema_ok = header == ABLATION_COLUMNS and len(rows) == 6 and all(r["status"] == "ok" for r in rows)
    ident = [float(r["delta_auc"]) for r in rows if float(r["lambda"]) == 1.0]
    elapsed = time.perf_counter() - t0
    ok = schema_ok and all(abs(d) < 0.02 for d in ident) and elapsed < 30 * 60
    report(9, "3x2 ablation grid, lambda=1 cells match baseline", ok,
           f"{grid.runs} runs, schema_ok={schema_ok}, lambda=1 delta_auc={[round(d, 4) for d in ident]}, "
           f"{elapsed:.0f}s")


# 10 ------------------------------------------------------------------------

@pytest.mark.slow
def test_c10_determinism(tmp_path, capsys):
    dirs = []
    for i in range(2):
        assert cli_main(["train", "desk-synthetic", "--output-root", str(tmp_path / f"r{i}")]) == 0
        dirs.append(Path(capsys.readouterr().out.strip()))
    a, b = ((d / "metrics.csv").read_bytes() for d in dirs)
    report(10, "identical metrics CSVs from two train runs", a == b and len(a) > 0,
           f"{len(a)} bytes vs {len(b)} bytes, identical={a == b}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
