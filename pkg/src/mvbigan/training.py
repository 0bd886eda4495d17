"""Training loop: discriminator updates, label-swapped generator and encoder
updates, the nested-sequence KL penalty, Adam configuration, checkpointing,
and per-epoch metrics logging.

Every stochastic choice (batch order, view sequences, latent noise) is drawn
from one numpy generator owned by the run, so a fixed seed gives a
bit-reproducible run in single-threaded mode, and checkpoints can resume a
run exactly by restoring that generator's state.
"""
from __future__ import annotations

import dataclasses
import os
import time
from dataclasses import dataclass

import numpy as np
import torch

from . import checkpoint as ckpt_io
from .core import LatentGaussian
from .data import (
    SyntheticSpec,
    TaskSpec,
    ViewDataset,
    build_hetero_dataset,
    build_quarters_dataset,
    build_stream_dataset,
    make_batches,
    sample_synthetic,
    sample_view_sequence,
)
from .errors import InvalidConfig, NonFiniteLoss
from .losses import (
    LossBreakdown,
    assemble_losses,
    d1_objective,
    d2_objective,
    sequence_kl_penalty,
)
from .networks import ArchConfig, ModelBundle, init_model

METRICS_FILE = "metrics.tsv"
METRICS_COLUMNS = (
    "epoch", "d1_loss", "d2_loss", "gen_adv", "enc_adv", "kl_penalty", "wall_seconds",
)


def default_arch_for_task(task: TaskSpec) -> ArchConfig:
    """Architecture defaults keyed by task kind."""
    if task.kind == "synthetic":
        return ArchConfig(
            latent_dim=8,
            output_size=task.output_size,
            view_sizes=task.view_sizes,
            agg_dim=32,
            gen_hidden=64,
            enc_hidden=64,
            disc_hidden=64,
            gen_output="linear",
        )
    return ArchConfig(
        output_size=task.output_size,
        view_sizes=task.view_sizes,
    )


@dataclass(frozen=True)
class TrainConfig:
    """Run settings; defaults mirror the dense digit setup."""

    task: TaskSpec
    arch: ArchConfig
    lam: float = 1e-5
    learning_rate: float = 2e-5
    beta1: float = 0.5
    beta2: float = 0.999
    adam_eps: float = 1e-3
    batch_size: int = 128
    epochs: int = 300
    seed: int = 0
    update_mode: str = "alternating"  # alternating | onepass
    checkpoint_interval: int = 50
    out_dir: str = "runs/default"
    seq_len: "int | None" = None
    n_items: "int | None" = None
    data_dir: "str | None" = None
    synthetic: "SyntheticSpec | None" = None
    threads: int = 1

    def validate(self) -> "TrainConfig":
        if self.lam < 0:
            raise InvalidConfig(f"lambda must be >= 0, got {self.lam}")
        if not self.learning_rate > 0:
            raise InvalidConfig(f"learning rate must be > 0, got {self.learning_rate}")
        for name in ("beta1", "beta2"):
            b = getattr(self, name)
            if not 0 <= b < 1:
                raise InvalidConfig(f"{name} must be in [0, 1), got {b}")
        if not self.adam_eps > 0:
            raise InvalidConfig(f"adam_eps must be > 0, got {self.adam_eps}")
        if self.batch_size < 1:
            raise InvalidConfig(f"batch size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise InvalidConfig(f"epochs must be >= 0, got {self.epochs}")
        if self.update_mode not in ("alternating", "onepass"):
            raise InvalidConfig(f"unknown update mode '{self.update_mode}'")
        if self.checkpoint_interval < 1:
            raise InvalidConfig("checkpoint interval must be >= 1")
        if self.threads < 1:
            raise InvalidConfig("threads must be >= 1")
        L = self.effective_seq_len
        if not 1 <= L <= self.task.num_views:
            raise InvalidConfig(
                f"sequence length {L} out of range 1..{self.task.num_views}"
            )
        self.arch.validate()
        if tuple(self.arch.view_sizes) != tuple(self.task.view_sizes):
            raise InvalidConfig("arch view sizes do not match the task")
        if self.arch.output_size != self.task.output_size:
            raise InvalidConfig("arch output size does not match the task")
        return self

    @property
    def effective_seq_len(self) -> int:
        return self.task.seq_len if self.seq_len is None else self.seq_len

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["task"] = self.task.to_dict()
        d["arch"] = self.arch.to_dict()
        d["synthetic"] = None if self.synthetic is None else self.synthetic.to_dict()
        return d

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        d = dict(d)
        d["task"] = TaskSpec.from_dict(d["task"])
        d["arch"] = ArchConfig.from_dict(d["arch"])
        if d.get("synthetic") is not None:
            d["synthetic"] = SyntheticSpec.from_dict(d["synthetic"])
        return TrainConfig(**d).validate()


@dataclass
class OptimizerState:
    """The two Adam optimizers: discriminators and generator side."""

    opt_d: torch.optim.Adam
    opt_g: torch.optim.Adam


def make_optimizers(model: ModelBundle, config: TrainConfig) -> OptimizerState:
    kwargs = dict(
        lr=config.learning_rate,
        betas=(config.beta1, config.beta2),
        eps=config.adam_eps,
    )
    return OptimizerState(
        opt_d=torch.optim.Adam(model.discriminator_side(), **kwargs),
        opt_g=torch.optim.Adam(model.generator_side(), **kwargs),
    )


@dataclass
class TrainBatch:
    """One minibatch: targets, shared view columns, per-item sequence masks."""

    targets: torch.Tensor  # (B, n)
    views: list  # V tensors (B, n_k)
    seq_masks: torch.Tensor  # (B, L, V) float

    @property
    def size(self) -> int:
        return self.targets.shape[0]

    @property
    def seq_len(self) -> int:
        return self.seq_masks.shape[1]


@dataclass
class StepNoise:
    """Latent noise for one loss evaluation."""

    eps_target: torch.Tensor  # (B, Z) for z_E
    eps_views: torch.Tensor  # (B, L, Z) for z_H
    z_prior: torch.Tensor  # (B, Z)


def draw_noise(rng: np.random.Generator, b: int, l: int, z: int) -> StepNoise:
    def normal(*shape):
        return torch.from_numpy(rng.standard_normal(shape).astype(np.float32))

    return StepNoise(normal(b, z), normal(b, l, z), normal(b, z))


def assemble_batch(
    dataset: ViewDataset, indices: np.ndarray, seq_len: int, rng: np.random.Generator
) -> TrainBatch:
    """Slice dataset columns and draw one nested view sequence per item."""
    task = dataset.task
    targets = torch.from_numpy(dataset.targets[indices])
    views = [torch.from_numpy(col[indices]) for col in dataset.views]
    masks = np.empty((len(indices), seq_len, task.num_views), dtype=np.float32)
    for i in range(len(indices)):
        seq = sample_view_sequence(
            task.num_views, seq_len, rng, ordered=task.ordered_sequences
        )
        masks[i] = seq.as_matrix()
    return TrainBatch(targets, views, torch.from_numpy(masks))


@dataclass
class ForwardScores:
    d1_real: torch.Tensor
    d1_fake: torch.Tensor
    d2_real: torch.Tensor
    d2_fake: torch.Tensor
    view_gaussians: "tuple[torch.Tensor, torch.Tensor]"  # mu_h, lv_h: (B, L, Z)


def forward_scores(
    model: ModelBundle, batch: TrainBatch, noise: StepNoise, detach_gen_side: bool
) -> ForwardScores:
    """One full forward pass producing all four discriminator score sets.

    With `detach_gen_side` the sampled latents and generated targets are
    detached, so a backward pass reaches only D1 and D2 (the discriminator
    update); otherwise gradients flow to G, E, and H.
    """
    mu_e, lv_e = model.E(batch.targets)
    z_e = mu_e + torch.exp(0.5 * lv_e) * noise.eps_target
    mu_h, lv_h = model.H(batch.views, batch.seq_masks)
    z_h = mu_h + torch.exp(0.5 * lv_h) * noise.eps_views
    y_fake = model.G(noise.z_prior)
    if detach_gen_side:
        z_e, z_h, y_fake = z_e.detach(), z_h.detach(), y_fake.detach()

    d1_real = model.D1(batch.targets, z_e)
    d1_fake = model.D1(y_fake, noise.z_prior)
    z_e_rep = z_e.unsqueeze(1).expand_as(z_h)
    d2_real = model.D2(batch.views, batch.seq_masks, z_e_rep)
    d2_fake = model.D2(batch.views, batch.seq_masks, z_h)
    return ForwardScores(d1_real, d1_fake, d2_real, d2_fake, (mu_h, lv_h))


def kl_penalty_from_gaussians(mu_h: torch.Tensor, lv_h: torch.Tensor) -> torch.Tensor:
    """Mean over items of the consecutive-pair KL along each sequence."""
    seq_len = mu_h.shape[1]
    latents = [
        LatentGaussian(mu_h[:, t], lv_h[:, t]) for t in range(seq_len)
    ]
    return torch.mean(sequence_kl_penalty(latents))


def discriminator_loss(model: ModelBundle, batch: TrainBatch, noise: StepNoise):
    """(d1_loss, d2_loss) with gradients confined to D1 and D2."""
    scores = forward_scores(model, batch, noise, detach_gen_side=True)
    return (
        d1_objective(scores.d1_real, scores.d1_fake),
        d2_objective(scores.d2_real, scores.d2_fake),
    )


def generator_loss(
    model: ModelBundle, batch: TrainBatch, noise: StepNoise, lam: float
):
    """(total, gen_adv, enc_adv, kl) for the label-swapped generator side."""
    scores = forward_scores(model, batch, noise, detach_gen_side=False)
    # label swap: each discriminator objective re-evaluated with its score
    # arguments exchanged, so G/E/H descend rather than ascend
    gen_adv = d1_objective(scores.d1_fake, scores.d1_real)
    enc_adv = d2_objective(scores.d2_fake, scores.d2_real)
    mu_h, lv_h = scores.view_gaussians
    if lam > 0:
        kl = kl_penalty_from_gaussians(mu_h, lv_h)
        total = gen_adv + enc_adv + lam * kl
    else:
        with torch.no_grad():
            kl = kl_penalty_from_gaussians(mu_h, lv_h)
        total = gen_adv + enc_adv
    return total, gen_adv, enc_adv, kl


def train_step(
    model: ModelBundle,
    opt_state: OptimizerState,
    batch: TrainBatch,
    config: TrainConfig,
    rng: np.random.Generator,
) -> LossBreakdown:
    """One optimization step on one batch.

    Alternating mode first steps D1/D2 on the discriminator objectives,
    then steps G/E/H on the label-swapped objectives plus the KL penalty.
    One-pass mode evaluates both objectives from a single shared forward
    pass at the same parameter point before applying either update.
    """
    z_dim = model.cfg.latent_dim
    model.train(True)
    try:
        if config.update_mode == "alternating":
            noise_d = draw_noise(rng, batch.size, batch.seq_len, z_dim)
            d1_loss, d2_loss = discriminator_loss(model, batch, noise_d)
            opt_state.opt_d.zero_grad(set_to_none=True)
            (d1_loss + d2_loss).backward()
            opt_state.opt_d.step()

            noise_g = draw_noise(rng, batch.size, batch.seq_len, z_dim)
            total, gen_adv, enc_adv, kl = generator_loss(
                model, batch, noise_g, config.lam
            )
            opt_state.opt_g.zero_grad(set_to_none=True)
            opt_state.opt_d.zero_grad(set_to_none=True)  # absorb spillover grads
            total.backward()
            opt_state.opt_g.step()
        else:
            noise = draw_noise(rng, batch.size, batch.seq_len, z_dim)
            scores_d = forward_scores(model, batch, noise, detach_gen_side=True)
            d1_loss = d1_objective(scores_d.d1_real, scores_d.d1_fake)
            d2_loss = d2_objective(scores_d.d2_real, scores_d.d2_fake)
            total, gen_adv, enc_adv, kl = generator_loss(
                model, batch, noise, config.lam
            )
            opt_state.opt_g.zero_grad(set_to_none=True)
            opt_state.opt_d.zero_grad(set_to_none=True)
            total.backward()
            opt_state.opt_g.step()
            opt_state.opt_d.zero_grad(set_to_none=True)  # drop swapped-label grads
            (d1_loss + d2_loss).backward()
            opt_state.opt_d.step()
    finally:
        model.train(False)
    return assemble_losses(
        d1_loss.item(), d2_loss.item(), gen_adv.item(), enc_adv.item(), kl.item(),
        config.lam,
    )


@dataclass
class Checkpoint:
    """Everything needed to rebuild and resume a run."""

    arch: ArchConfig
    train_config: TrainConfig
    epoch: int
    records: dict
    rng_state: dict

    def build_model(self) -> ModelBundle:
        model = ModelBundle(self.arch)
        _restore_model(model, self.records)
        return model


def _model_records(model: ModelBundle) -> dict:
    rec = {}
    for name, p in model.named_parameters():
        rec[f"model.{name}"] = p.detach().cpu().numpy().copy()
    for name, b in model.named_buffers():
        rec[f"model.{name}"] = b.detach().cpu().numpy().copy()
    return rec


def _optimizer_records(label: str, opt: torch.optim.Adam) -> dict:
    rec = {}
    for pidx, state in opt.state_dict()["state"].items():
        for key, val in state.items():
            rec[f"{label}.{pidx}.{key}"] = val.detach().cpu().numpy().copy()
    return rec


def snapshot(
    model: ModelBundle,
    opt_state: OptimizerState,
    config: TrainConfig,
    epoch: int,
    rng: np.random.Generator,
) -> Checkpoint:
    records = _model_records(model)
    records.update(_optimizer_records("opt_d", opt_state.opt_d))
    records.update(_optimizer_records("opt_g", opt_state.opt_g))
    return Checkpoint(
        arch=config.arch,
        train_config=config,
        epoch=epoch,
        records=records,
        rng_state=rng.bit_generator.state,
    )


def _restore_model(model: ModelBundle, records: dict) -> None:
    with torch.no_grad():
        for name, p in model.named_parameters():
            p.copy_(torch.from_numpy(records[f"model.{name}"]))
        for name, b in model.named_buffers():
            b.copy_(torch.from_numpy(records[f"model.{name}"]))


def _restore_optimizer(label: str, opt: torch.optim.Adam, records: dict) -> None:
    state: dict = {}
    prefix = f"{label}."
    for name, arr in records.items():
        if not name.startswith(prefix):
            continue
        _, pidx, key = name.split(".", 2)
        state.setdefault(int(pidx), {})[key] = torch.from_numpy(arr.copy())
    if state:
        opt.load_state_dict(
            {"state": state, "param_groups": opt.state_dict()["param_groups"]}
        )


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Serialize to the binary container; bit-exact round trip."""
    meta = {
        "epoch": int(ckpt.epoch),
        "train_config": ckpt.train_config.to_dict(),
        "rng_state": _jsonable_rng(ckpt.rng_state),
    }
    ckpt_io.save_container(path, meta, ckpt.records)


def load_checkpoint(path) -> Checkpoint:
    meta, records = ckpt_io.load_container(path)
    config = TrainConfig.from_dict(meta["train_config"])
    return Checkpoint(
        arch=config.arch,
        train_config=config,
        epoch=int(meta["epoch"]),
        records=records,
        rng_state=_rng_from_jsonable(meta["rng_state"]),
    )


def _jsonable_rng(state: dict) -> dict:
    out = dict(state)
    out["state"] = {k: int(v) for k, v in state["state"].items()}
    return out


def _rng_from_jsonable(state: dict) -> dict:
    return {
        "bit_generator": state["bit_generator"],
        "state": {k: int(v) for k, v in state["state"].items()},
        "has_uint32": int(state["has_uint32"]),
        "uinteger": int(state["uinteger"]),
    }


def build_dataset(config: TrainConfig) -> ViewDataset:
    """Materialize the configured task's dataset.

    Digit tasks load IDX files from config.data_dir (or the
    MVBIGAN_DATA_DIR environment variable), falling back to the rendered
    glyph corpus; the synthetic task draws from its mixture spec.
    """
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0xDA7A]))
    task = config.task
    if task.kind == "synthetic":
        spec = config.synthetic or SyntheticSpec()
        return sample_synthetic(spec, config.n_items or 5000, rng)

    from .digits import load_digit_corpus

    images, labels, _ = load_digit_corpus(
        data_dir=config.data_dir, limit=config.n_items or 10000, seed=config.seed
    )
    if task.kind == "quarters":
        return build_quarters_dataset(images)
    if task.kind == "stream":
        return build_stream_dataset(images, task, rng)
    if task.kind == "hetero":
        return build_hetero_dataset(images, labels, rng)
    raise InvalidConfig(f"unknown task kind '{task.kind}'")


def _metrics_line(epoch: int, mean: dict, wall: float) -> str:
    return "\t".join(
        [
            str(epoch),
            f"{mean['d1_loss']:.6f}",
            f"{mean['d2_loss']:.6f}",
            f"{mean['gen_adv_loss']:.6f}",
            f"{mean['enc_adv_loss']:.6f}",
            f"{mean['kl_penalty']:.6f}",
            f"{wall:.3f}",
        ]
    )


def train(
    config: TrainConfig,
    dataset: "ViewDataset | None" = None,
    resume_from=None,
    log=print,
) -> "tuple[Checkpoint, list]":
    """Run the full training loop; returns the final checkpoint and metrics.

    Writes `metrics.tsv` (one tab-separated line per epoch: epoch, d1, d2,
    gen_adv, enc_adv, kl_penalty, wall_seconds) and periodic checkpoints
    under config.out_dir. With `resume_from`, continues a saved run; the
    combined run reproduces an uninterrupted one with the same seed.
    """
    config.validate()
    torch.set_num_threads(config.threads)
    os.makedirs(config.out_dir, exist_ok=True)
    if dataset is None:
        dataset = build_dataset(config)

    model = init_model(config.arch, config.seed)
    opt_state = make_optimizers(model, config)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x7121]))
    start_epoch = 0
    mode = "w"
    if resume_from is not None:
        ckpt = load_checkpoint(resume_from)
        if ckpt.train_config.arch != config.arch:
            raise InvalidConfig("checkpoint architecture does not match the run")
        _restore_model(model, ckpt.records)
        _restore_optimizer("opt_d", opt_state.opt_d, ckpt.records)
        _restore_optimizer("opt_g", opt_state.opt_g, ckpt.records)
        rng.bit_generator.state = ckpt.rng_state
        start_epoch = ckpt.epoch
        mode = "a"

    metrics_path = os.path.join(config.out_dir, METRICS_FILE)
    metrics_rows = []
    seq_len = config.effective_seq_len
    with open(metrics_path, mode, encoding="utf-8") as metrics_fh:
        for epoch in range(start_epoch, config.epochs):
            t0 = time.monotonic()
            sums = {name: 0.0 for name in LossBreakdown.FIELDS}
            batches = make_batches(dataset, config.batch_size, rng)
            # parameter-free batch norm is undefined on a single row, so a
            # trailing singleton batch is skipped (never hit at batch 128)
            batches = [b for b in batches if len(b) > 1]
            if not batches:
                raise InvalidConfig("dataset leaves no batch with at least 2 items")
            for batch_idx, indices in enumerate(batches):
                batch = assemble_batch(dataset, indices, seq_len, rng)
                try:
                    breakdown = train_step(model, opt_state, batch, config, rng)
                except NonFiniteLoss:
                    raise
                except FloatingPointError as exc:
                    raise NonFiniteLoss(
                        f"epoch {epoch} batch {batch_idx}: {exc}"
                    ) from exc
                for name in sums:
                    sums[name] += getattr(breakdown, name)
            mean = {name: sums[name] / len(batches) for name in sums}
            wall = time.monotonic() - t0
            metrics_fh.write(_metrics_line(epoch, mean, wall) + "\n")
            metrics_fh.flush()
            metrics_rows.append({"epoch": epoch, **mean, "wall_seconds": wall})
            log(
                f"epoch {epoch}: d1 {mean['d1_loss']:.4f} d2 {mean['d2_loss']:.4f} "
                f"gen {mean['gen_adv_loss']:.4f} enc {mean['enc_adv_loss']:.4f} "
                f"kl {mean['kl_penalty']:.4f} ({wall:.1f}s)"
            )
            done = epoch + 1
            if done % config.checkpoint_interval == 0 and done < config.epochs:
                ck = snapshot(model, opt_state, config, done, rng)
                save_checkpoint(
                    ck, os.path.join(config.out_dir, f"checkpoint-{done:04d}.bin")
                )

    final = snapshot(model, opt_state, config, config.epochs, rng)
    save_checkpoint(final, os.path.join(config.out_dir, "checkpoint-final.bin"))
    return final, metrics_rows
