import numpy as np
import pytest
import torch

from mvbigan.data import TaskSpec, ViewDataset
from mvbigan.networks import ArchConfig, init_model

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def tiny_arch() -> ArchConfig:
    # distinct sizes everywhere so transposed shapes cannot slip through
    return ArchConfig(
        latent_dim=6,
        output_size=12,
        view_sizes=(3, 5, 4),
        agg_dim=10,
        gen_hidden=9,
        enc_hidden=8,
        disc_hidden=7,
        gen_output="sigmoid",
    )


@pytest.fixture()
def tiny_model(tiny_arch):
    return init_model(tiny_arch, seed=123)


@pytest.fixture(scope="session")
def tiny_task() -> TaskSpec:
    return TaskSpec(
        kind="quarters", num_views=3, view_sizes=(3, 5, 4), output_size=12, seq_len=3
    )


def make_toy_dataset(task: TaskSpec, n_items: int, seed: int = 0) -> ViewDataset:
    rng = np.random.default_rng(seed)
    targets = rng.random((n_items, task.output_size), dtype=np.float32)
    views = [
        rng.random((n_items, nk), dtype=np.float32) for nk in task.view_sizes
    ]
    return ViewDataset(task, targets, views)


@pytest.fixture()
def toy_dataset(tiny_task):
    return make_toy_dataset(tiny_task, n_items=12, seed=5)
