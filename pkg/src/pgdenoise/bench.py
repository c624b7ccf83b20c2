"""PSNR and the synthetic lambda x sigma benchmark.

Each grid cell corrupts a clean texture set at one noise level, trains its
own uncalibrated model on the noisy training images, and denoises the noisy
test images twice: with per-image fitted ``(a, b)`` and with the true ones.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .blindspot import TrainConfig, train
from .fit import FitConfig
from .noise import NoiseParams, SyntheticNoiseSpec, pg_corrupt, spec_to_params
from .pipeline import denoise_calibrated, denoise_image, denoise_with_known_params
from .rng import RngState
from .textures import texture_set

log = logging.getLogger(__name__)

DESK_GRID = [SyntheticNoiseSpec(0, 0)] + [
    SyntheticNoiseSpec(lam, sig) for lam in (10, 30, 50) for sig in (10, 30, 50)
]
PAPER_GRID = [
    SyntheticNoiseSpec(lam, sig) for lam in (0, 10, 20, 30, 40, 50) for sig in (0, 10, 20, 30, 40, 50)
]
REG_LAMBDAS = (0.1, 1.0, 10.0)


def psnr(reference, test, peak: float = 1.0) -> float:
    """``10 log10(peak^2 / MSE)`` in dB; ``inf`` for identical images."""
    reference = np.asarray(reference, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    if reference.shape != test.shape:
        raise ValueError(f"shape mismatch {reference.shape} vs {test.shape}")
    if not peak > 0:
        raise ValueError("peak must be positive")
    mse = float(np.mean((reference - test) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def desk_train_config(**overrides) -> TrainConfig:
    """Training settings sized for minutes-per-cell runs on one CPU core."""
    base = dict(epochs=30, batches_per_epoch=20, batch_size=8, crop_size=32,
                hidden_sizes=(64, 64), lr=1e-3, patch_radius=4)
    base.update(overrides)
    return TrainConfig(**base)


@dataclass
class DeskDataset:
    train: list
    test: list

    @classmethod
    def generate(cls, seed: int = 0, n_train: int = 8, n_test: int = 4, size: int = 64) -> "DeskDataset":
        rng = RngState(seed).split("textures")
        imgs = texture_set(n_train + n_test, size, rng)
        return cls(imgs[:n_train], imgs[n_train:])


@dataclass
class BenchRow:
    lam: float
    sigma: float
    true_a: float
    true_b: float
    est_a: float = math.nan
    est_b: float = math.nan
    psnr_noisy: float = math.nan
    psnr_pseudo: float = math.nan
    psnr_uncalibrated: float = math.nan
    psnr_ground_truth_params: float = math.nan
    n_test: int = 0
    error: str = ""


_ROW_FIELDS = [f.name for f in fields(BenchRow)]


def write_rows_csv(rows: Sequence[BenchRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_ROW_FIELDS)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in (getattr(r, k) for k in _ROW_FIELDS)])


def read_rows_csv(path) -> list[BenchRow]:
    out = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            kw = {}
            for f in fields(BenchRow):
                raw = rec[f.name]
                kw[f.name] = int(raw) if f.type in ("int", int) else raw if f.type in ("str", str) else float(raw)
            out.append(BenchRow(**kw))
    return out


def cell_rng(seed: int, spec: SyntheticNoiseSpec) -> RngState:
    return RngState(seed).split(f"cell:{spec.lam:g}:{spec.sigma:g}")


def run_cell(spec: SyntheticNoiseSpec, dataset: DeskDataset, train_config: TrainConfig,
             fit_config: FitConfig | None, seed: int, peak: float = 1.0) -> BenchRow:
    params = spec_to_params(spec)
    row = BenchRow(spec.lam, spec.sigma, params.a, params.b, n_test=len(dataset.test))
    t0 = time.perf_counter()
    try:
        rng = cell_rng(seed, spec)
        noise_rng = rng.split("noise")
        noisy_train = [pg_corrupt(x, params, noise_rng) for x in dataset.train]
        noisy_test = [pg_corrupt(x, params, noise_rng) for x in dataset.test]
        model, _ = train(noisy_train, train_config, rng.split("train"))
        vals = []
        for x, y in zip(dataset.test, noisy_test):
            unc = denoise_image(model, y, fit_config)
            known = denoise_with_known_params(model, y, params)
            vals.append((unc.fitted.params.a, unc.fitted.params.b, psnr(x, y, peak),
                         psnr(x, unc.pseudo_clean, peak), psnr(x, unc.denoised, peak),
                         psnr(x, known.denoised, peak)))
        m = np.mean(np.array(vals), axis=0)
        (row.est_a, row.est_b, row.psnr_noisy, row.psnr_pseudo,
         row.psnr_uncalibrated, row.psnr_ground_truth_params) = (float(v) for v in m)
    except Exception as exc:  # recorded in the row; the grid keeps going
        log.exception("cell (%g, %g) failed", spec.lam, spec.sigma)
        row.error = _one_line(exc)
    log.info("cell (%g, %g) done in %.1f s", spec.lam, spec.sigma, time.perf_counter() - t0)
    return row


def _one_line(exc: BaseException) -> str:
    return " ".join(f"{type(exc).__name__}: {exc}".split())


def _run_cell_star(args):
    return run_cell(*args)


def run_benchmark(grid: Sequence[SyntheticNoiseSpec], dataset: DeskDataset,
                  train_config: TrainConfig | None = None, fit_config: FitConfig | None = None,
                  seed: int = 0, jobs: int = 1, peak: float = 1.0) -> list[BenchRow]:
    """One row per grid cell, in grid order.  Cells draw from seeds derived
    from ``seed`` and the cell's noise level, so ``jobs`` does not change
    the result."""
    train_config = train_config or desk_train_config()
    tasks = [(spec, dataset, train_config, fit_config, seed, peak) for spec in grid]
    if jobs <= 1:
        return [run_cell(*t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_cell_star, tasks))


def bench_summary(rows: Sequence[BenchRow], **meta) -> dict:
    ok = [r for r in rows if not r.error]
    return {
        **meta,
        "cells": len(rows),
        "failed_cells": [{"lambda": r.lam, "sigma": r.sigma, "error": r.error} for r in rows if r.error],
        "n_test_images_per_cell": rows[0].n_test if rows else 0,
        "mean_psnr_gain_uncalibrated_over_pseudo": _finite_mean(
            [r.psnr_uncalibrated - r.psnr_pseudo for r in ok]),
    }


def _finite_mean(vals):
    vals = [v for v in vals if math.isfinite(v)]
    return float(np.mean(vals)) if vals else None


def write_summary(summary: dict, path) -> None:
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(o):
    if isinstance(o, (SyntheticNoiseSpec, NoiseParams)):
        return asdict(o)
    if hasattr(o, "to_dict"):
        return o.to_dict()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


@dataclass
class SweepRow:
    method: str
    lambda_reg: float
    psnr: float
    psnr_pseudo: float
    a: float
    b: float
    error: str = ""


def regularization_sweep(dataset: DeskDataset, lambdas: Sequence[float],
                         train_config: TrainConfig | None = None,
                         spec: SyntheticNoiseSpec = SyntheticNoiseSpec(30, 30),
                         fit_config: FitConfig | None = None, seed: int = 0,
                         peak: float = 1.0) -> list[SweepRow]:
    """Uncalibrated training versus regularized Poisson-Gaussian training at
    each ``lambda`` on one noise level; test PSNR per row (uncalibrated first)."""
    if not lambdas:
        raise ValueError("need at least one lambda")
    train_config = train_config or desk_train_config()
    params = spec_to_params(spec)
    rng = cell_rng(seed, spec)
    noise_rng = rng.split("noise")
    noisy_train = [pg_corrupt(x, params, noise_rng) for x in dataset.train]
    noisy_test = [pg_corrupt(x, params, noise_rng) for x in dataset.test]

    runs = [("uncalibrated", math.nan)] + [("regularized", float(lam)) for lam in lambdas]
    rows = []
    for method, lam in runs:
        try:
            if method == "uncalibrated":
                cfg = replace(train_config, loss_kind="uncalibrated", lambda_reg=0.0)
            else:
                cfg = replace(train_config, loss_kind="pg-regularized", lambda_reg=lam,
                              learn_noise_params=True)
            model, _ = train(noisy_train, cfg, rng.split("train"))
            vals = []
            for x, y in zip(dataset.test, noisy_test):
                rep = denoise_image(model, y, fit_config) if method == "uncalibrated" else denoise_calibrated(model, y)
                vals.append((psnr(x, rep.denoised, peak), psnr(x, rep.pseudo_clean, peak),
                             rep.fitted.params.a, rep.fitted.params.b))
            m = np.mean(np.array(vals), axis=0)
            rows.append(SweepRow(method, lam, *(float(v) for v in m)))
        except Exception as exc:
            log.exception("sweep row %s lambda=%s failed", method, lam)
            rows.append(SweepRow(method, lam, math.nan, math.nan, math.nan, math.nan, _one_line(exc)))
    return rows


def write_sweep_csv(rows: Sequence[SweepRow], path) -> None:
    names = [f.name for f in fields(SweepRow)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in (getattr(r, k) for k in names)])
