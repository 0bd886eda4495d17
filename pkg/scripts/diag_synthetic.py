"""Scratch diagnostics for the synthetic task. Not part of the package."""
import sys
import time

import numpy as np
import torch

sys.path.insert(0, "src")

from mvbigan.core import SubsetMask, ViewSet
from mvbigan.data import SyntheticSpec, TaskSpec
from mvbigan.evaluation import sample_conditional, synthetic_report
from mvbigan.networks import PriorSpec, encode_views, generate
from mvbigan.training import TrainConfig, default_arch_for_task, train


def diagnose(ckpt, label):
    model = ckpt.build_model()
    model.eval()
    rng = np.random.default_rng(0)
    z = PriorSpec(model.cfg.latent_dim).sample(rng, 4000)
    with torch.no_grad():
        y = generate(model, z).numpy()
    print(f"[{label}] G(prior): mean {y.mean(0).round(3)} var {y.var(0).round(3)}")
    # mode coverage: fraction of samples in each quadrant
    quad = (y[:, 0] > 0).astype(int) * 2 + (y[:, 1] > 0).astype(int)
    print(f"[{label}] quadrant fractions {np.bincount(quad, minlength=4) / len(y)}")
    for mask, name in (((1, 1), "both"), ((1, 0), "v0"), ((0, 1), "v1")):
        vs = ViewSet(SubsetMask(mask), (np.array([1.0], np.float32),
                                        np.array([-1.0], np.float32)))
        g = encode_views(model, vs)
        sig = np.exp(0.5 * g.log_var.detach().numpy())
        samples = sample_conditional(model, vs, 1024, np.random.default_rng(1))
        print(
            f"[{label}] H({name}): |mu| {np.abs(g.mu.detach().numpy()).mean():.3f} "
            f"sigma mean {sig.mean():.3f} | out mean {samples.mean(0).round(3)} "
            f"var {samples.var(0).round(3)}"
        )


def run(label, **kw):
    task = TaskSpec.synthetic()
    arch = default_arch_for_task(task)
    import dataclasses

    arch_kw = kw.pop("arch_kw", {})
    if arch_kw:
        arch = dataclasses.replace(arch, **arch_kw)
    cfg = TrainConfig(
        task=task, arch=arch, out_dir=f"/tmp/diag-{label}", n_items=5000,
        checkpoint_interval=100_000, synthetic=SyntheticSpec(), **kw,
    )
    t0 = time.time()
    ckpt, metrics = train(cfg, log=lambda *_: None)
    tail = metrics[-1]
    print(
        f"[{label}] {time.time()-t0:.0f}s last-epoch d1 {tail['d1_loss']:.3f} "
        f"d2 {tail['d2_loss']:.3f} gen {tail['gen_adv_loss']:.3f} "
        f"enc {tail['enc_adv_loss']:.3f} kl {tail['kl_penalty']:.3f}",
        flush=True,
    )
    diagnose(ckpt, label)
    return ckpt


if __name__ == "__main__":
    import itertools

    run("long-mid", lam=1e-3, learning_rate=1e-4, epochs=400, batch_size=128, seed=7)
    run("big-net", lam=1e-3, learning_rate=1e-4, epochs=300, batch_size=128, seed=7,
        arch_kw=dict(agg_dim=64, gen_hidden=128, enc_hidden=128, disc_hidden=128,
                     latent_dim=4))
    run("small-eps", lam=1e-3, learning_rate=1e-4, epochs=300, batch_size=128,
        seed=7, adam_eps=1e-8)
