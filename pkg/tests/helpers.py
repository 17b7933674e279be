"""Hand-built detectors with known logits and input gradients."""

from __future__ import annotations

import numpy as np

from omatlab import tensor as T
from omatlab.detector.model import Detector, PreprocessSpec, init_detector
from omatlab.rng import Rng


def constant_detector(logit: float, widths=(64, 8)) -> Detector:
    """Detector whose output is ``logit`` for every input and whose input gradient is zero."""
    d = init_detector(f"const{logit:g}", Rng(1), "frozen_backbone", widths)
    params = {k: T.Tensor(v.data.copy()) for k, v in d.params.items()}
    params["head.0.weight"] = T.Tensor(np.zeros((widths[-1], 1)))
    params["head.0.bias"] = T.Tensor(np.array([float(logit)]))
    return d.with_params(params)


def linear_pixel_detector(w: float = 1.0) -> Detector:
    """Logit ``w * sum(preprocessed pixels)`` with no quantization: a constant positive input gradient."""
    n = 64
    eye = np.eye(n)
    params = {
        "backbone.0.weight": T.Tensor(np.concatenate([eye, -eye], axis=1)),
        "backbone.0.bias": T.Tensor(np.zeros(2 * n)),
        "head.0.weight": T.Tensor(np.concatenate([np.full(n, w), np.full(n, -w)])[:, None]),
        "head.0.bias": T.Tensor(np.zeros(1)),
    }
    return Detector("linear", "mlp", params, (n, 2 * n), PreprocessSpec(quantize=False))
