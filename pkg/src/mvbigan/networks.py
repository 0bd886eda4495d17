"""Network definitions and forward evaluations.

Holds the architecture configuration, the parameter bundle for the five
networks (target encoder E, generator G, view encoder H, pair discriminator
D1, view-pair discriminator D2), and the masked-sum view aggregation with
per-view embeddings. H and D2 each own an independent embedding set.

Dense MLP stacks are the default; an alternate convolutional configuration
for 64x64 RGB targets is provided for shape checking.
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass, asdict
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .core import LatentGaussian, ViewSet
from .errors import InvalidConfig, NonFiniteActivation, ShapeMismatch

CONV_CHANNELS = (64, 128, 256, 512)
CONV_IMAGE_HW = 64


def nelu(x: torch.Tensor) -> torch.Tensor:
    """Negative exponential linear unit: x for x < 0, 1 - exp(-x) for x >= 0.

    Bounded above by 1, so a log-variance head capped by nelu keeps
    sigma^2 < e early in training.
    """
    return -F.elu(-x)


def _bn1d(dim: int) -> nn.BatchNorm1d:
    # Parameter-free batch normalization: no learned affine; running
    # statistics keep 0.9 of their previous value per batch.
    return nn.BatchNorm1d(dim, affine=False, momentum=0.1)


def _bn2d(dim: int) -> nn.BatchNorm2d:
    return nn.BatchNorm2d(dim, affine=False, momentum=0.1)


@dataclass(frozen=True)
class ArchConfig:
    """Sizes and switches for all five networks.

    Defaults match the dense four-quarter digit setup: latent size 128,
    hidden and aggregation sizes 1500.
    """

    latent_dim: int = 128
    output_size: int = 784
    view_sizes: tuple = (196, 196, 196, 196)
    agg_dim: int = 1500
    gen_hidden: int = 1500
    enc_hidden: int = 1500
    disc_hidden: int = 1500
    gen_output: str = "sigmoid"  # sigmoid | tanh | linear
    leaky_slope: float = 0.2
    conv_mode: bool = False
    conv_image_shape: tuple = (3, 64, 64)
    # conv mode only: which views are images (run through the conv stack)
    # versus flat vectors (linear embedding).
    conv_view_kinds: tuple = ()

    @property
    def num_views(self) -> int:
        return len(self.view_sizes)

    def validate(self) -> "ArchConfig":
        positive = {
            "latent_dim": self.latent_dim,
            "output_size": self.output_size,
            "agg_dim": self.agg_dim,
            "gen_hidden": self.gen_hidden,
            "enc_hidden": self.enc_hidden,
            "disc_hidden": self.disc_hidden,
        }
        for name, value in positive.items():
            if int(value) <= 0:
                raise InvalidConfig(f"{name} must be positive, got {value}")
        if not self.view_sizes or any(int(n) <= 0 for n in self.view_sizes):
            raise InvalidConfig(f"bad view sizes {self.view_sizes}")
        if self.gen_output not in ("sigmoid", "tanh", "linear"):
            raise InvalidConfig(f"unknown generator output '{self.gen_output}'")
        if self.leaky_slope < 0:
            raise InvalidConfig(f"leaky slope must be >= 0, got {self.leaky_slope}")
        if self.conv_mode:
            c, h, w = self.conv_image_shape
            if h != CONV_IMAGE_HW or w != CONV_IMAGE_HW:
                raise InvalidConfig(f"conv mode expects {CONV_IMAGE_HW}x{CONV_IMAGE_HW} images")
            if len(self.conv_view_kinds) != self.num_views:
                raise InvalidConfig("conv_view_kinds must tag every view")
            if self.output_size != c * h * w:
                raise InvalidConfig("conv mode output_size must equal C*H*W")
            for kind, n_k in zip(self.conv_view_kinds, self.view_sizes):
                if kind not in ("image", "vector"):
                    raise InvalidConfig(f"unknown view kind '{kind}'")
                if kind == "image" and n_k != c * h * w:
                    raise InvalidConfig("image views must have size C*H*W")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "ArchConfig":
        d = dict(d)
        for key in ("view_sizes", "conv_image_shape", "conv_view_kinds"):
            if key in d:
                d[key] = tuple(d[key])
        return ArchConfig(**d).validate()


@dataclass(frozen=True)
class PriorSpec:
    """Latent prior, fixed to a standard normal of dimension Z."""

    latent_dim: int

    def sample(self, rng: np.random.Generator, batch: int) -> torch.Tensor:
        z = rng.standard_normal((batch, self.latent_dim)).astype(np.float32)
        return torch.from_numpy(z)


class ConvFeatures(nn.Module):
    """Strided conv stack mapping a 64x64 image to a flat feature vector."""

    def __init__(self, in_channels: int, out_dim: int):
        super().__init__()
        chans = CONV_CHANNELS
        self.conv1 = nn.Conv2d(in_channels, chans[0], 4, stride=2, padding=1)
        self.conv2 = nn.Conv2d(chans[0], chans[1], 4, stride=2, padding=1)
        self.bn2 = _bn2d(chans[1])
        self.conv3 = nn.Conv2d(chans[1], chans[2], 4, stride=2, padding=1)
        self.bn3 = _bn2d(chans[2])
        self.conv4 = nn.Conv2d(chans[2], chans[3], 4, stride=2, padding=1)
        self.bn4 = _bn2d(chans[3])
        self.conv5 = nn.Conv2d(chans[3], out_dim, 4, stride=1, padding=0)
        self.in_channels = in_channels
        self.out_dim = out_dim

    def forward(self, x: torch.Tensor, slope: float) -> torch.Tensor:
        hw = CONV_IMAGE_HW
        x = x.reshape(x.shape[0], self.in_channels, hw, hw)
        x = F.leaky_relu(self.conv1(x), slope)
        x = F.leaky_relu(self.bn2(self.conv2(x)), slope)
        x = F.leaky_relu(self.bn3(self.conv3(x)), slope)
        x = F.leaky_relu(self.bn4(self.conv4(x)), slope)
        return self.conv5(x).reshape(x.shape[0], self.out_dim)


class DeconvStack(nn.Module):
    """Fractionally-strided conv stack mapping z to a 64x64 image, tanh output."""

    def __init__(self, latent_dim: int, out_channels: int):
        super().__init__()
        chans = CONV_CHANNELS
        self.up1 = nn.ConvTranspose2d(latent_dim, chans[3], 4, stride=1, padding=0)
        self.bn1 = _bn2d(chans[3])
        self.up2 = nn.ConvTranspose2d(chans[3], chans[2], 4, stride=2, padding=1)
        self.bn2 = _bn2d(chans[2])
        self.up3 = nn.ConvTranspose2d(chans[2], chans[1], 4, stride=2, padding=1)
        self.bn3 = _bn2d(chans[1])
        self.up4 = nn.ConvTranspose2d(chans[1], chans[0], 4, stride=2, padding=1)
        self.bn4 = _bn2d(chans[0])
        self.up5 = nn.ConvTranspose2d(chans[0], out_channels, 4, stride=2, padding=1)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        x = z.reshape(z.shape[0], z.shape[1], 1, 1)
        x = F.relu(self.bn1(self.up1(x)))
        x = F.relu(self.bn2(self.up2(x)))
        x = F.relu(self.bn3(self.up3(x)))
        x = F.relu(self.bn4(self.up4(x)))
        x = torch.tanh(self.up5(x))
        return x.reshape(x.shape[0], -1)


class Aggregator(nn.Module):
    """Masked sum of per-view embeddings into the aggregation space.

    Output for mask s and views x~ is sum_k s_k * phi_k(x~_k); views with
    mask bit 0 therefore contribute exactly zero regardless of content.
    """

    def __init__(self, cfg: ArchConfig):
        super().__init__()
        embeds = []
        for k, n_k in enumerate(cfg.view_sizes):
            if cfg.conv_mode and cfg.conv_view_kinds[k] == "image":
                embeds.append(ConvFeatures(cfg.conv_image_shape[0], cfg.agg_dim))
            else:
                embeds.append(nn.Linear(n_k, cfg.agg_dim, bias=False))
        self.embed = nn.ModuleList(embeds)
        self.leaky_slope = cfg.leaky_slope

    def embed_views(self, views: Sequence[torch.Tensor]) -> torch.Tensor:
        """Per-view embeddings, stacked to (B, V, A)."""
        cols = []
        for k, phi in enumerate(self.embed):
            v = views[k]
            if isinstance(phi, ConvFeatures):
                cols.append(phi(v, self.leaky_slope))
            else:
                cols.append(phi(v))
        return torch.stack(cols, dim=1)

    def forward(self, views: Sequence[torch.Tensor], mask: torch.Tensor) -> torch.Tensor:
        """Aggregate views under `mask` of shape (B, V) or (B, L, V).

        Returns (B, A) or (B, L, A) accordingly.
        """
        emb = self.embed_views(views)
        if mask.dim() == 2:
            return torch.einsum("bv,bva->ba", mask, emb)
        if mask.dim() == 3:
            return torch.einsum("blv,bva->bla", mask, emb)
        raise ShapeMismatch(f"mask must be (B,V) or (B,L,V), got {tuple(mask.shape)}")


class GaussianTrunk(nn.Module):
    """Shared encoder tail: hidden layers over the aggregation space, then
    a tanh head for mu and a nelu-capped head for log sigma^2."""

    def __init__(self, cfg: ArchConfig, leaky: bool):
        super().__init__()
        h = cfg.enc_hidden
        self.two_layers = not cfg.conv_mode
        if self.two_layers:
            self.fc1 = nn.Linear(cfg.agg_dim, h)
            self.fc2 = nn.Linear(h, h)
            self.bn = _bn1d(h)
        else:
            self.fc1 = nn.Linear(cfg.agg_dim, h)
            self.bn = _bn1d(h)
        self.mu_head = nn.Linear(h, cfg.latent_dim)
        self.lv_head = nn.Linear(h, cfg.latent_dim)
        self.leaky = leaky
        self.slope = cfg.leaky_slope

    def _act(self, x: torch.Tensor) -> torch.Tensor:
        return F.leaky_relu(x, self.slope) if self.leaky else F.relu(x)

    def hidden(self, agg: torch.Tensor) -> torch.Tensor:
        flat = agg.reshape(-1, agg.shape[-1])
        if self.two_layers:
            h1 = self._act(self.fc1(flat))
            h2 = self._act(self.bn(self.fc2(h1)))
        else:
            h2 = self._act(self.bn(self.fc1(flat)))
        return h2.reshape(*agg.shape[:-1], -1)

    def forward(self, agg: torch.Tensor):
        h = self.hidden(agg)
        return torch.tanh(self.mu_head(h)), nelu(self.lv_head(h))


class TargetEncoder(nn.Module):
    """E: maps a target y to a latent diagonal Gaussian."""

    def __init__(self, cfg: ArchConfig):
        super().__init__()
        if cfg.conv_mode:
            self.embed = ConvFeatures(cfg.conv_image_shape[0], cfg.agg_dim)
        else:
            self.embed = nn.Linear(cfg.output_size, cfg.agg_dim, bias=False)
        self.trunk = GaussianTrunk(cfg, leaky=False)
        self.slope = cfg.leaky_slope

    def forward(self, y: torch.Tensor):
        if isinstance(self.embed, ConvFeatures):
            a = self.embed(y, self.slope)
        else:
            a = self.embed(y)
        return self.trunk(a)


class ViewEncoder(nn.Module):
    """H: maps any subset of views to a latent diagonal Gaussian."""

    def __init__(self, cfg: ArchConfig):
        super().__init__()
        self.agg = Aggregator(cfg)
        self.trunk = GaussianTrunk(cfg, leaky=False)

    def forward(self, views: Sequence[torch.Tensor], mask: torch.Tensor):
        return self.trunk(self.agg(views, mask))


class Generator(nn.Module):
    """G: deterministic map from latent z to an output array."""

    def __init__(self, cfg: ArchConfig):
        super().__init__()
        self.conv_mode = cfg.conv_mode
        if cfg.conv_mode:
            self.deconv = DeconvStack(cfg.latent_dim, cfg.conv_image_shape[0])
        else:
            h = cfg.gen_hidden
            self.fc1 = nn.Linear(cfg.latent_dim, h)
            self.fc2 = nn.Linear(h, h)
            self.bn2 = _bn1d(h)
            self.fc3 = nn.Linear(h, cfg.output_size)
            self.bn3 = _bn1d(cfg.output_size)
        self.gen_output = cfg.gen_output

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        if self.conv_mode:
            return self.deconv(z)
        x = F.relu(self.fc1(z))
        x = F.relu(self.bn2(self.fc2(x)))
        x = self.bn3(self.fc3(x))
        if self.gen_output == "sigmoid":
            return torch.sigmoid(x)
        if self.gen_output == "tanh":
            return torch.tanh(x)
        return x


class PairDiscriminator(nn.Module):
    """D1: probability that a (target, latent) pair comes from the encoder
    joint rather than the generator joint. z joins at the second layer."""

    def __init__(self, cfg: ArchConfig):
        super().__init__()
        h = cfg.disc_hidden
        self.conv_mode = cfg.conv_mode
        if cfg.conv_mode:
            self.features = ConvFeatures(cfg.conv_image_shape[0], cfg.agg_dim)
            self.fc1 = nn.Linear(cfg.agg_dim + cfg.latent_dim, h)
            self.out = nn.Linear(h, 1)
        else:
            self.fc1 = nn.Linear(cfg.output_size, h)
            self.fc2 = nn.Linear(h + cfg.latent_dim, h)
            self.fc3 = nn.Linear(h, h)
            self.bn3 = _bn1d(h)
            self.out = nn.Linear(h, 1)
        self.slope = cfg.leaky_slope

    def forward(self, y: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
        s = self.slope
        if self.conv_mode:
            feat = self.features(y, s)
            x = F.leaky_relu(self.fc1(torch.cat([feat, z], dim=-1)), s)
            return torch.sigmoid(self.out(x)).squeeze(-1)
        x = F.leaky_relu(self.fc1(y), s)
        x = F.leaky_relu(self.fc2(torch.cat([x, z], dim=-1)), s)
        x = F.leaky_relu(self.bn3(self.fc3(x)), s)
        return torch.sigmoid(self.out(x)).squeeze(-1)


class ViewPairDiscriminator(nn.Module):
    """D2: probability that a (views, latent) pair comes from the target
    encoder joint rather than the view encoder joint. Owns its own
    per-view embeddings; z is concatenated to the aggregation vector."""

    def __init__(self, cfg: ArchConfig):
        super().__init__()
        h = cfg.enc_hidden
        self.agg = Aggregator(cfg)
        self.two_layers = not cfg.conv_mode
        self.fc1 = nn.Linear(cfg.agg_dim + cfg.latent_dim, h)
        if self.two_layers:
            self.fc2 = nn.Linear(h, h)
        self.bn = _bn1d(h)
        self.out = nn.Linear(h, 1)
        self.slope = cfg.leaky_slope

    def forward(
        self, views: Sequence[torch.Tensor], mask: torch.Tensor, z: torch.Tensor
    ) -> torch.Tensor:
        a = self.agg(views, mask)
        x = torch.cat([a, z], dim=-1)
        flat = x.reshape(-1, x.shape[-1])
        s = self.slope
        if self.two_layers:
            h1 = F.leaky_relu(self.fc1(flat), s)
            h2 = F.leaky_relu(self.bn(self.fc2(h1)), s)
        else:
            h2 = F.leaky_relu(self.bn(self.fc1(flat)), s)
        score = torch.sigmoid(self.out(h2)).squeeze(-1)
        return score.reshape(x.shape[:-1])


class ModelBundle(nn.Module):
    """All five networks plus the configuration they were built from."""

    def __init__(self, cfg: ArchConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.E = TargetEncoder(cfg)
        self.G = Generator(cfg)
        self.H = ViewEncoder(cfg)
        self.D1 = PairDiscriminator(cfg)
        self.D2 = ViewPairDiscriminator(cfg)

    @property
    def prior(self) -> PriorSpec:
        return PriorSpec(self.cfg.latent_dim)

    def generator_side(self) -> list:
        """Parameters updated by the generator/encoder step (G, E, H)."""
        mods = [self.G, self.E, self.H]
        return [p for m in mods for p in m.parameters()]

    def discriminator_side(self) -> list:
        """Parameters updated by the discriminator step (D1, D2)."""
        mods = [self.D1, self.D2]
        return [p for m in mods for p in m.parameters()]


def init_model(arch: ArchConfig, seed: int) -> ModelBundle:
    """Build a ModelBundle with fan-in scaled uniform weights, zero biases.

    Deterministic: the same (arch, seed) always yields bit-identical
    parameters, independent of global RNG state.
    """
    bundle = ModelBundle(arch)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    with torch.no_grad():
        for name, param in bundle.named_parameters():
            if param.dim() == 1:  # biases
                param.zero_()
                continue
            fan_in = int(np.prod(param.shape[1:]))
            bound = 1.0 / np.sqrt(fan_in)
            values = rng.uniform(-bound, bound, size=tuple(param.shape))
            param.copy_(torch.from_numpy(values.astype(np.float32)))
    return bundle


@contextlib.contextmanager
def _mode(module: nn.Module, train_mode: bool):
    prev = module.training
    module.train(train_mode)
    try:
        yield
    finally:
        module.train(prev)


def _as_model_tensor(model: ModelBundle, x) -> torch.Tensor:
    dtype = next(model.parameters()).dtype
    if isinstance(x, torch.Tensor):
        return x.to(dtype) if x.dtype != dtype else x
    return torch.as_tensor(np.asarray(x), dtype=dtype)


def _check_activation(t: torch.Tensor, what: str) -> torch.Tensor:
    if not torch.isfinite(t).all():
        raise NonFiniteActivation(f"{what} produced non-finite values")
    return t


def _batched(x: torch.Tensor, feature_dim: int, what: str):
    if x.dim() == 1:
        if x.shape[0] != feature_dim:
            raise ShapeMismatch(f"{what} has size {x.shape[0]}, expected {feature_dim}")
        return x.unsqueeze(0), True
    if x.dim() == 2:
        if x.shape[1] != feature_dim:
            raise ShapeMismatch(
                f"{what} has size {x.shape[1]} per row, expected {feature_dim}"
            )
        return x, False
    raise ShapeMismatch(f"{what} must be 1-D or 2-D, got shape {tuple(x.shape)}")


def view_batch(
    model: ModelBundle, viewset: "ViewSet | Sequence[ViewSet]"
) -> tuple[list, torch.Tensor, bool]:
    """Stack one ViewSet or a sequence of them into tensors.

    Returns (views, mask, single) where views[k] is (B, n_k), mask is
    (B, V) float, and single marks a non-batched input.
    """
    cfg = model.cfg
    single = isinstance(viewset, ViewSet)
    viewsets = [viewset] if single else list(viewset)
    if not viewsets:
        raise ShapeMismatch("empty batch of view sets")
    for vs in viewsets:
        if vs.view_sizes() != tuple(cfg.view_sizes):
            raise ShapeMismatch(
                f"view sizes {vs.view_sizes()} do not match {tuple(cfg.view_sizes)}"
            )
    views = [
        _as_model_tensor(model, np.stack([vs.views[k] for vs in viewsets]))
        for k in range(cfg.num_views)
    ]
    mask = _as_model_tensor(model, np.stack([vs.mask.as_float() for vs in viewsets]))
    return views, mask, single


def encode_target(model: ModelBundle, y, train_mode: bool = False) -> LatentGaussian:
    """E(y): latent diagonal Gaussian for a target (or batch of targets)."""
    t = _as_model_tensor(model, y)
    t, single = _batched(t, model.cfg.output_size, "target")
    with _mode(model.E, train_mode):
        mu, lv = model.E(t)
    _check_activation(mu, "target encoder mu")
    _check_activation(lv, "target encoder log_var")
    if single:
        mu, lv = mu.squeeze(0), lv.squeeze(0)
    return LatentGaussian(mu, lv)


def encode_views(
    model: ModelBundle, viewset, train_mode: bool = False
) -> LatentGaussian:
    """H(v(s, x)): latent Gaussian conditioned on the available views."""
    views, mask, single = view_batch(model, viewset)
    with _mode(model.H, train_mode):
        mu, lv = model.H(views, mask)
    _check_activation(mu, "view encoder mu")
    _check_activation(lv, "view encoder log_var")
    if single:
        mu, lv = mu.squeeze(0), lv.squeeze(0)
    return LatentGaussian(mu, lv)


def generate(model: ModelBundle, z, train_mode: bool = False) -> torch.Tensor:
    """G(z): deterministic output for latent z (or batch of latents)."""
    t = _as_model_tensor(model, z)
    t, single = _batched(t, model.cfg.latent_dim, "latent")
    with _mode(model.G, train_mode):
        y = model.G(t)
    _check_activation(y, "generator output")
    return y.squeeze(0) if single else y


def aggregate(agg: Aggregator, viewset) -> torch.Tensor:
    """Masked sum of per-view embeddings for one ViewSet or a batch.

    `agg` is an embedding set owned by H or by D2; the two are independent.
    """
    dtype = next(agg.parameters()).dtype
    single = isinstance(viewset, ViewSet)
    viewsets = [viewset] if single else list(viewset)
    if not viewsets:
        raise ShapeMismatch("empty batch of view sets")
    expected = tuple(
        phi.in_channels * CONV_IMAGE_HW * CONV_IMAGE_HW
        if isinstance(phi, ConvFeatures)
        else phi.in_features
        for phi in agg.embed
    )
    for vs in viewsets:
        if vs.view_sizes() != expected:
            raise ShapeMismatch(
                f"view sizes {vs.view_sizes()} do not match {expected}"
            )
    views = [
        torch.as_tensor(np.stack([vs.views[k] for vs in viewsets]), dtype=dtype)
        for k in range(len(expected))
    ]
    mask = torch.as_tensor(
        np.stack([vs.mask.as_float() for vs in viewsets]), dtype=dtype
    )
    out = agg(views, mask)
    return out.squeeze(0) if single else out


def discriminate_pair(
    model: ModelBundle, y, z, train_mode: bool = False
) -> torch.Tensor:
    """D1(y, z): probability in (0, 1) that the pair is encoder-sampled."""
    ty = _as_model_tensor(model, y)
    tz = _as_model_tensor(model, z)
    ty, single_y = _batched(ty, model.cfg.output_size, "target")
    tz, single_z = _batched(tz, model.cfg.latent_dim, "latent")
    if ty.shape[0] != tz.shape[0]:
        raise ShapeMismatch(
            f"batch sizes differ: {ty.shape[0]} targets vs {tz.shape[0]} latents"
        )
    with _mode(model.D1, train_mode):
        score = model.D1(ty, tz)
    _check_activation(score, "pair discriminator")
    return score.squeeze(0) if (single_y and single_z) else score


def discriminate_view_pair(
    model: ModelBundle, viewset, z, train_mode: bool = False
) -> torch.Tensor:
    """D2(v(s, x), z): probability in (0, 1), using D2's own embeddings."""
    views, mask, single_v = view_batch(model, viewset)
    tz = _as_model_tensor(model, z)
    tz, single_z = _batched(tz, model.cfg.latent_dim, "latent")
    if mask.shape[0] != tz.shape[0]:
        raise ShapeMismatch(
            f"batch sizes differ: {mask.shape[0]} view sets vs {tz.shape[0]} latents"
        )
    with _mode(model.D2, train_mode):
        score = model.D2(views, mask, tz)
    _check_activation(score, "view-pair discriminator")
    return score.squeeze(0) if (single_v and single_z) else score


def sample_latent(g: LatentGaussian, noise) -> torch.Tensor:
    """Pathwise sample mu + exp(log_var / 2) * noise.

    Differentiable in (mu, log_var) when they are torch tensors.
    """
    mu = torch.as_tensor(g.mu)
    lv = torch.as_tensor(g.log_var)
    eps = torch.as_tensor(noise, dtype=mu.dtype)
    if eps.shape != mu.shape:
        raise ShapeMismatch(
            f"noise shape {tuple(eps.shape)} != latent shape {tuple(mu.shape)}"
        )
    return mu + torch.exp(0.5 * lv) * eps
