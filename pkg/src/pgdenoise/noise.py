"""Poisson-Gaussian noise: ``y = a * Poisson(x / a) + N(0, b)``.

Synthesis uses exact Poisson draws; likelihoods elsewhere use the Gaussian
approximation ``y ~ N(x, a x + b)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DomainError
from .rng import RngState, mix64, name_hash


@dataclass(frozen=True)
class NoiseParams:
    """Poisson gain ``a`` and Gaussian variance ``b`` (intensity^2).

    Fitted ``b`` may be negative (a pedestal offset); synthesis requires
    ``a >= 0`` and ``b >= 0``.
    """

    a: float
    b: float

    def to_dict(self) -> dict:
        return {"a": self.a, "b": self.b}


@dataclass(frozen=True)
class SyntheticNoiseSpec:
    """Noise levels of the synthetic benchmark: Poisson ``lam`` and Gaussian
    ``sigma`` on the 0-255 scale.  Zero disables a component."""

    lam: float
    sigma: float

    def __post_init__(self):
        if self.lam < 0 or self.sigma < 0:
            raise ValueError(f"noise levels must be non-negative, got lambda={self.lam}, sigma={self.sigma}")


def spec_to_params(spec: SyntheticNoiseSpec) -> NoiseParams:
    a = 1.0 / spec.lam if spec.lam > 0 else 0.0
    b = (spec.sigma / 255.0) ** 2
    return NoiseParams(a, b)


def noise_variance(params: NoiseParams, x):
    """``a x + b``; raises ``DomainError`` if any value is negative."""
    v = params.a * np.asarray(x, dtype=np.float64) + params.b
    if np.any(v < 0):
        raise DomainError(f"negative noise variance for a={params.a}, b={params.b}")
    return float(v) if v.ndim == 0 else v


def _check_synthesis(params: NoiseParams):
    if not (params.a >= 0 and params.b >= 0):
        raise DomainError(f"synthesis needs a >= 0 and b >= 0, got a={params.a}, b={params.b}")


def _keys(rng: RngState) -> tuple[int, int]:
    base = rng.next_key()
    return mix64(base ^ name_hash("poisson")), mix64(base ^ name_hash("gauss"))


def _sample_blocks(flat, params, key_p, key_g, exact, block_size):
    if block_size is None or block_size >= flat.size:
        return kernels.pg_sample(flat, params.a, params.b, key_p, key_g, exact, 0)
    parts = [
        kernels.pg_sample(flat[s:s + block_size], params.a, params.b, key_p, key_g, exact, s)
        for s in range(0, flat.size, block_size)
    ]
    return np.concatenate(parts)


def pg_corrupt(img: np.ndarray, params: NoiseParams, rng: RngState,
               block_size: int | None = None) -> np.ndarray:
    """Corrupt ``img`` with exact Poisson-Gaussian noise.

    Each call consumes one draw from ``rng``; the pixel samples come from
    per-pixel substreams of that draw, so the result does not depend on how
    the image is split into ``block_size``-pixel blocks for processing.
    """
    _check_synthesis(params)
    img = np.asarray(img, dtype=np.float64)
    if params.a > 0 and np.any(img < 0):
        raise DomainError("negative clean intensity under Poisson noise")
    key_p, key_g = _keys(rng)
    if params.a == 0 and params.b == 0:
        return img.copy()
    out = _sample_blocks(img.ravel(), params, key_p, key_g, True, block_size)
    return out.reshape(img.shape)


def gaussian_approx_corrupt(img: np.ndarray, params: NoiseParams, rng: RngState) -> np.ndarray:
    """Draw ``y ~ N(x, a x + b)`` per pixel (the likelihood's own model)."""
    img = np.asarray(img, dtype=np.float64)
    noise_variance(params, img)
    key_p, key_g = _keys(rng)
    out = _sample_blocks(img.ravel(), params, key_p, key_g, False, None)
    return out.reshape(img.shape)
