"""Scratch harness: sweep synthetic-task settings and report the oracle
quantities (2-view mean error, variance ratio). Not part of the package."""
import itertools
import sys
import time

import numpy as np

sys.path.insert(0, "src")

from mvbigan.data import SyntheticSpec, TaskSpec
from mvbigan.evaluation import synthetic_report
from mvbigan.training import TrainConfig, default_arch_for_task, train


def assess(ckpt, seed=0):
    model = ckpt.build_model()
    model.eval()
    report = synthetic_report(model, SyntheticSpec(), num_samples=1024, seed=seed)
    worst_mean = 0.0
    worst_ratio = np.inf
    for cond in report["conditions"]:
        mean_err = np.abs(
            np.array(cond["two_view_mean"]) - np.array(cond["analytic_two_view_mean"])
        ).max()
        worst_mean = max(worst_mean, mean_err)
        # orthogonal dim under one view is dim 1; aligned is dim 0
        ratio = cond["one_view_var"][1] / max(cond["two_view_var"][1], 1e-12)
        worst_ratio = min(worst_ratio, ratio)
    return worst_mean, worst_ratio, report


def run(lr, lam, epochs, batch, n_items, seed, update_mode="alternating", **arch_kw):
    task = TaskSpec.synthetic()
    arch = default_arch_for_task(task)
    if arch_kw:
        import dataclasses

        arch = dataclasses.replace(arch, **arch_kw)
    cfg = TrainConfig(
        task=task,
        arch=arch,
        lam=lam,
        learning_rate=lr,
        batch_size=batch,
        epochs=epochs,
        seed=seed,
        out_dir=f"/tmp/syn-{lr}-{lam}-{epochs}-{seed}",
        checkpoint_interval=10_000,
        n_items=n_items,
        synthetic=SyntheticSpec(),
    )
    t0 = time.time()
    ckpt, _ = train(cfg, log=lambda *_: None)
    wall = time.time() - t0
    worst_mean, worst_ratio, _ = assess(ckpt)
    print(
        f"lr={lr:g} lam={lam:g} ep={epochs} bs={batch} n={n_items} seed={seed} "
        f"{arch_kw} -> mean_err={worst_mean:.3f} ratio={worst_ratio:.1f} "
        f"({wall:.0f}s)",
        flush=True,
    )
    return worst_mean, worst_ratio


if __name__ == "__main__":
    for lr, lam in itertools.product((1e-4, 3e-4), (1e-5, 1e-3, 1e-2)):
        run(lr, lam, epochs=100, batch=128, n_items=5000, seed=7)
