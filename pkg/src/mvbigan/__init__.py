"""Multi-view bidirectional GAN: conditional density estimation from any
subset of views, with a KL constraint that shrinks predictive uncertainty
as views accumulate."""

from .core import (
    Example,
    LatentGaussian,
    SubsetMask,
    ViewSequence,
    ViewSet,
    is_nested,
    validate_mask,
)
from .losses import (
    LossBreakdown,
    assemble_losses,
    d1_objective,
    d2_objective,
    generator_objective,
    kl_diag_gaussian,
    sequence_kl_penalty,
)
from .networks import (
    ArchConfig,
    ModelBundle,
    PriorSpec,
    aggregate,
    discriminate_pair,
    discriminate_view_pair,
    encode_target,
    encode_views,
    generate,
    init_model,
    sample_latent,
)
from .training import TrainConfig, load_checkpoint, save_checkpoint, train, train_step

__all__ = [
    "ArchConfig",
    "Example",
    "LatentGaussian",
    "LossBreakdown",
    "ModelBundle",
    "PriorSpec",
    "SubsetMask",
    "TrainConfig",
    "ViewSequence",
    "ViewSet",
    "aggregate",
    "assemble_losses",
    "d1_objective",
    "d2_objective",
    "discriminate_pair",
    "discriminate_view_pair",
    "encode_target",
    "encode_views",
    "generate",
    "generator_objective",
    "init_model",
    "is_nested",
    "kl_diag_gaussian",
    "load_checkpoint",
    "sample_latent",
    "save_checkpoint",
    "sequence_kl_penalty",
    "train",
    "train_step",
    "validate_mask",
]

__version__ = "0.1.0"
