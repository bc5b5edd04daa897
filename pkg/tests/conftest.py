import numpy as np
import pytest

from maxmatch.matching import GroupSample
from maxmatch.model import ModelParams
from maxmatch.tasks import TaskSpec

TASK_KINDS = ("mil", "pll", "rs")


def random_problem(task: str, K: int, rng: np.random.Generator, scale: float = 1.0):
    """Random ``(spec, params, sample, pool)`` for one task kind and group size."""
    pool = None
    if task == "mil":
        spec = TaskSpec.mil(n_features=4, n_classes=3)
        sample = GroupSample(rng.normal(size=(K, 4)), int(rng.integers(3)))
    elif task == "pll":
        spec = TaskSpec.pll(n_classes=max(6, K), n_features=3, dim=3)
        pool = rng.normal(size=(5, 3))
        row = int(rng.integers(5))
        sample = GroupSample(rng.choice(spec.spec_f.in_dim, size=K, replace=False),
                             pool[row], target_index=row)
    else:
        spec = TaskSpec.rs(n_items=8, dim=3)
        sample = GroupSample(rng.integers(8, size=K), int(rng.integers(8)))
    params = ModelParams(spec.spec_f, spec.spec_g)
    for _, arr in params.blocks():
        arr[...] = scale * rng.normal(size=arr.shape)
    return spec, params, sample, pool


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
