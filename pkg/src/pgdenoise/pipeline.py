"""Test-time denoising: predict, fit noise, recover prior variance, and take
the posterior mean."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .blindspot import BlindspotPredictor, PriorPrediction, predict_image
from .errors import DomainError
from .fit import FitConfig, FitResult, fit_pg, pg_nll
from .image import save_image
from .noise import NoiseParams

PRIOR_VARIANCE_FLOOR = 1e-4


def posterior_mean(y, mu, sigma2_prior, params: NoiseParams):
    """``(y s2 + n mu) / (n + s2)`` with noise variance ``n = a mu + b``.

    Evaluated as ``(1 - w) mu + w y`` with ``w = s2 / (n + s2)``, which gives
    exactly ``mu`` when ``s2 = 0`` and exactly ``y`` when ``n = 0``.  Raises
    ``DomainError`` if ``n < 0`` or the denominator is not positive anywhere.
    Broadcasts over arrays.
    """
    n, denom = _posterior_terms(mu, sigma2_prior, params)
    if np.any(n < 0) or np.any(denom <= 0):
        raise DomainError("posterior mean undefined: negative noise variance or zero total variance")
    w = np.asarray(sigma2_prior, dtype=np.float64) / denom
    out = (1.0 - w) * np.asarray(mu, dtype=np.float64) + w * np.asarray(y, dtype=np.float64)
    return out if np.ndim(out) else float(out)


def _posterior_terms(mu, sigma2_prior, params):
    n = params.a * np.asarray(mu, dtype=np.float64) + params.b
    return n, n + sigma2_prior


def recover_prior_variance(total_var, mu, params: NoiseParams, floor: float = PRIOR_VARIANCE_FLOOR):
    """``max(floor, total - a mu - b)``."""
    out = np.maximum(floor, np.asarray(total_var, dtype=np.float64) - params.a * np.asarray(mu) - params.b)
    return out if np.ndim(out) else float(out)


@dataclass
class DenoiseReport:
    denoised: np.ndarray
    pseudo_clean: np.ndarray
    fitted: FitResult
    floored_pixel_count: int
    fallback_pixel_count: int
    source: str  # "fitted", "supplied" or "learned"

    def to_dict(self) -> dict:
        return {
            "params": self.fitted.to_dict(),
            "source": self.source,
            "floored_pixel_count": self.floored_pixel_count,
            "fallback_pixel_count": self.fallback_pixel_count,
        }

    def save(self, out_dir, stem: str = "image", clamp_output: bool = False) -> dict:
        """Write ``<stem>_denoised.pfm``, ``<stem>_pseudo_clean.pfm`` and
        ``<stem>_params.json``; returns the written paths."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        den = np.clip(self.denoised, 0.0, 1.0) if clamp_output else self.denoised
        paths = {
            "denoised": out_dir / f"{stem}_denoised.pfm",
            "pseudo_clean": out_dir / f"{stem}_pseudo_clean.pfm",
            "params": out_dir / f"{stem}_params.json",
        }
        save_image(den, paths["denoised"])
        save_image(self.pseudo_clean, paths["pseudo_clean"])
        paths["params"].write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return paths


def _combine(y, pred: PriorPrediction, params: NoiseParams, sigma2: np.ndarray, floored: int,
             fitted: FitResult, source: str) -> DenoiseReport:
    n, denom = _posterior_terms(pred.mu, sigma2, params)
    bad = (n < 0) | (denom <= 0)
    w = sigma2 / np.where(bad, 1.0, denom)
    x_hat = np.where(bad, pred.mu, (1.0 - w) * pred.mu + w * y)
    return DenoiseReport(x_hat, pred.mu, fitted, floored, int(bad.sum()), source)


def _from_total_variance(y, pred: PriorPrediction, params: NoiseParams, fitted: FitResult,
                         source: str, floor: float) -> DenoiseReport:
    raw = pred.var - params.a * pred.mu - params.b
    sigma2 = np.maximum(floor, raw)
    return _combine(y, pred, params, sigma2, int(np.sum(raw < floor)), fitted, source)


def denoise_image(model: BlindspotPredictor, y: np.ndarray, fit_config: FitConfig | None = None,
                  floor: float = PRIOR_VARIANCE_FLOOR) -> DenoiseReport:
    """Denoise one image with an uncalibrated model, fitting ``(a, b)`` to it.

    Pixels where the posterior is undefined (``a mu + b < 0`` from a negative
    fitted ``b`` at dark ``mu``) keep the prior mean and are counted in
    ``fallback_pixel_count``.
    """
    y = np.asarray(y, dtype=np.float64)
    if model.calibrated:
        raise ValueError(f"denoise_image needs an uncalibrated model, got {model.loss_kind!r}")
    pred = predict_image(model, y)
    fitted = fit_pg(y, pred.mu, fit_config)
    return _from_total_variance(y, pred, fitted.params, fitted, "fitted", floor)


def denoise_with_known_params(model: BlindspotPredictor, y: np.ndarray, params: NoiseParams,
                              floor: float = PRIOR_VARIANCE_FLOOR) -> DenoiseReport:
    """As ``denoise_image`` with ``(a, b)`` supplied instead of fitted."""
    y = np.asarray(y, dtype=np.float64)
    if model.calibrated:
        raise ValueError(f"needs an uncalibrated model, got {model.loss_kind!r}")
    pred = predict_image(model, y)
    fitted = _supplied_result(y, pred.mu, params)
    return _from_total_variance(y, pred, params, fitted, "supplied", floor)


def denoise_calibrated(model: BlindspotPredictor, y: np.ndarray) -> DenoiseReport:
    """Posterior mean for a model trained with a Poisson-Gaussian loss, using
    its learned prior variance and global ``(a, b)``."""
    y = np.asarray(y, dtype=np.float64)
    if not model.calibrated or model.noise is None:
        raise ValueError("denoise_calibrated needs a model trained with a Poisson-Gaussian loss")
    pred = predict_image(model, y)
    fitted = _supplied_result(y, pred.mu, model.noise)
    return _combine(y, pred, model.noise, pred.var, 0, fitted, "learned")


def denoise(model: BlindspotPredictor, y: np.ndarray, fit_config: FitConfig | None = None,
            params: NoiseParams | None = None) -> DenoiseReport:
    if model.calibrated:
        return denoise_calibrated(model, y)
    if params is not None:
        return denoise_with_known_params(model, y, params)
    return denoise_image(model, y, fit_config)


def _supplied_result(y, mu, params: NoiseParams) -> FitResult:
    return FitResult(params, pg_nll(y, mu, params), 0, True, int(np.size(y)))
