"""Fixed linear decoders from the 4x4 latent grid to 8x8 pixels.

A decoder is a (64, 16) matrix ``D``; generated images are ``tanh(D z)``.
``encode`` inverts the whole path on real images: ``pinv(D) @ atanh(x)``.
"""

from __future__ import annotations

import numpy as np

_EDGE = 0.995


def _interp_1d(n_in: int, n_out: int) -> np.ndarray:
    """Linear interpolation weights with half-pixel centres, edge-clamped."""
    m = np.zeros((n_out, n_in))
    ratio = n_in / n_out
    for o in range(n_out):
        src = (o + 0.5) * ratio - 0.5
        src = min(max(src, 0.0), n_in - 1.0)
        lo = int(np.floor(src))
        hi = min(lo + 1, n_in - 1)
        frac = src - lo
        m[o, lo] += 1.0 - frac
        m[o, hi] += frac
    return m


def bilinear_matrix(latent_hw=(4, 4), image_hw=(8, 8)) -> np.ndarray:
    return np.kron(_interp_1d(latent_hw[0], image_hw[0]), _interp_1d(latent_hw[1], image_hw[1]))


def nearest_matrix(latent_hw=(4, 4), image_hw=(8, 8)) -> np.ndarray:
    def nn1(n_in, n_out):
        m = np.zeros((n_out, n_in))
        for o in range(n_out):
            m[o, min(int((o + 0.5) * n_in / n_out), n_in - 1)] = 1.0
        return m

    return np.kron(nn1(latent_hw[0], image_hw[0]), nn1(latent_hw[1], image_hw[1]))


def decoder_matrix(kind: str, latent_hw=(4, 4), image_hw=(8, 8)) -> np.ndarray:
    if kind == "bilinear":
        return bilinear_matrix(latent_hw, image_hw)
    if kind == "nearest":
        return nearest_matrix(latent_hw, image_hw)
    raise ValueError(f"unknown decoder kind {kind!r}")


def encode(decoder: np.ndarray, images: np.ndarray) -> np.ndarray:
    """Flattened images (N, 64) or (N, 1, 8, 8) -> latents (N, 16)."""
    flat = np.asarray(images, dtype=np.float64).reshape(len(images), -1)
    pre = np.arctanh(np.clip(flat, -_EDGE, _EDGE))
    return pre @ np.linalg.pinv(decoder).T


def decode_linear(decoder: np.ndarray, latents: np.ndarray) -> np.ndarray:
    return np.asarray(latents).reshape(len(latents), -1) @ decoder.T


def project_latent(decoder: np.ndarray, pre_images: np.ndarray) -> np.ndarray:
    """Linear left inverse: ``pinv(D) @ v`` for pre-squash vectors."""
    return np.asarray(pre_images).reshape(len(pre_images), -1) @ np.linalg.pinv(decoder).T
