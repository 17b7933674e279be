"""Shared fixtures: an untrained two-step generator and a small detector,
cheap enough for exact finite-difference checks."""

from __future__ import annotations

import numpy as np
import pytest

from omatlab import tensor as T
from omatlab.detector.model import init_detector
from omatlab.diffusion.generator import skeleton
from omatlab.rng import Rng


@pytest.fixture
def tiny_gen():
    """Random denoiser on a two-step linear schedule (T_train=2, 2 DDIM steps)."""
    return skeleton("tiny", 11, widths=(16,), T_train=2, inference_steps=2)


@pytest.fixture
def tiny_det():
    """Small trainable-MLP detector with a random (non-zero) head."""
    d = init_detector("tiny-det", Rng(5), "mlp", (64, 12, 6))
    params = {k: T.Tensor(v.data.copy()) for k, v in d.params.items()}
    params["head.0.weight"] = T.Tensor(Rng(6).normal((6, 1), std=0.5))
    params["head.0.bias"] = T.Tensor(np.array([0.1]))
    return d.with_params(params)

