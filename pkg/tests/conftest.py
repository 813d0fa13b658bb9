import numpy as np
import pytest
import torch


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def unit_rows(rng, rows, dim):
    x = rng.normal(size=(rows, dim))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def to_t(array, dtype=torch.float64, requires_grad=False):
    t = torch.as_tensor(np.asarray(array), dtype=dtype)
    if requires_grad:
        t.requires_grad_(True)
    return t
