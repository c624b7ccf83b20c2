"""Per-image estimation of the noise parameters ``(a, b)``.

The objective is the average Gaussian-approximation NLL

    (1/N) sum_i (y_i - x_i)^2 / (a x_i + b) + log(a x_i + b)

over pixels surviving a dynamic-range clip, minimised with a derivative-free
Nelder-Mead simplex.  ``x`` is either a clean reference or the pseudo-clean
prior mean of a blindspot model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .errors import DegenerateMaskError, InfeasibleStartError
from .noise import NoiseParams

MODES = ("pg", "gaussian", "poisson")
COLLAPSE_RTOL = 1e-15


@dataclass
class FitConfig:
    init: NoiseParams = field(default_factory=lambda: NoiseParams(0.01, 0.0))
    mode: str = "pg"
    clip_low_frac: float = 0.02
    clip_high_frac: float = 0.03
    tol: float = 1e-8
    max_iter: int = 500

    def __post_init__(self):
        if isinstance(self.init, dict):
            self.init = NoiseParams(**self.init)
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.clip_low_frac < 0 or self.clip_high_frac < 0:
            raise ValueError("clip fractions must be non-negative")
        if self.clip_low_frac + self.clip_high_frac >= 1:
            raise ValueError("clip fractions must sum to less than 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass
class FitResult:
    params: NoiseParams
    final_nll: float
    iterations: int
    converged: bool
    included_pixels: int

    def to_dict(self) -> dict:
        return {
            "a": self.params.a,
            "b": self.params.b,
            "nll": self.final_nll if math.isfinite(self.final_nll) else None,
            "iterations": self.iterations,
            "converged": self.converged,
            "included_pixels": self.included_pixels,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        nll = math.inf if d["nll"] is None else d["nll"]
        return cls(NoiseParams(d["a"], d["b"]), nll, d["iterations"], d["converged"],
                   d["included_pixels"])


@dataclass
class SimplexResult:
    x: np.ndarray
    fun: float
    iterations: int
    converged: bool
    evaluations: int


def clip_thresholds(y: np.ndarray, clip_low_frac: float, clip_high_frac: float) -> tuple[float, float]:
    lo, hi = float(np.min(y)), float(np.max(y))
    r = hi - lo
    return lo + clip_low_frac * r, hi - clip_high_frac * r


def clip_mask(y: np.ndarray, clip_low_frac: float = 0.02, clip_high_frac: float = 0.03) -> np.ndarray:
    """Keep pixels inside the noisy image's range minus the given fractions of
    it at the bottom and top.  Fractions are of ``max - min``, not quantiles."""
    y = np.asarray(y, dtype=np.float64)
    if clip_low_frac == 0 and clip_high_frac == 0:
        return np.ones(y.shape, dtype=bool)
    if np.ptp(y) == 0:
        raise DegenerateMaskError("constant image: clipping by range excludes every pixel")
    t_lo, t_hi = clip_thresholds(y, clip_low_frac, clip_high_frac)
    mask = (y >= t_lo) & (y <= t_hi)
    if not mask.any():
        raise DegenerateMaskError("clipping excluded every pixel")
    return mask


def pg_nll(y: np.ndarray, x: np.ndarray, params: NoiseParams, mask=None) -> float:
    """Masked mean NLL; ``inf`` if some included pixel has ``a x + b <= 0``."""
    y = np.asarray(y, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if y.shape != x.shape:
        raise ValueError(f"shape mismatch {y.shape} vs {x.shape}")
    if mask is None:
        mask = np.ones(y.shape, dtype=bool)
    total, count = kernels.masked_nll(y, x, mask, float(params.a), float(params.b))
    if count == 0:
        raise DegenerateMaskError("no pixels included")
    return total / count


def initial_simplex(x0: np.ndarray) -> np.ndarray:
    """``x0`` plus one vertex per coordinate, offset by max(5% of |coord|, 0.005)."""
    n = x0.size
    simplex = np.tile(x0, (n + 1, 1))
    for i in range(n):
        simplex[i + 1, i] += max(0.05 * abs(x0[i]), 0.005)
    return simplex


def nelder_mead(fun: Callable[[np.ndarray], float], x0: Sequence[float], tol: float = 1e-8,
                max_iter: int = 500, simplex: np.ndarray | None = None,
                alpha: float = 1.0, gamma: float = 2.0, rho: float = 0.5,
                sigma: float = 0.5) -> SimplexResult:
    """Minimise ``fun`` with the Nelder-Mead simplex method.

    ``fun`` may return ``inf`` to mark an infeasible point; such points are
    never accepted over a finite vertex.  Stops when the spread of objective
    values over the simplex falls below ``tol``.  A simplex whose vertices
    have all collapsed onto the best one (to rounding) has zero spread and
    also counts as converged.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=np.float64))
    f_init = fun(x0)
    if not math.isfinite(f_init):
        raise InfeasibleStartError(f"objective is not finite at the initial point {x0.tolist()}")
    pts = initial_simplex(x0) if simplex is None else np.array(simplex, dtype=np.float64)
    n = x0.size
    vals = np.empty(n + 1)
    vals[0] = f_init
    for i in range(1, n + 1):
        vals[i] = fun(pts[i])
    nfev = n + 1

    def spread():
        scale = np.maximum(1.0, np.abs(pts[0]))
        if np.all(np.abs(pts[1:] - pts[0]) <= COLLAPSE_RTOL * scale):
            return 0.0
        return vals[-1] - vals[0]

    converged = False
    it = 0
    while True:
        # stable sort keeps the older vertex first on ties
        order = np.argsort(vals, kind="stable")
        pts, vals = pts[order], vals[order]
        if spread() < tol:
            converged = True
            break
        if it >= max_iter:
            break
        it += 1

        centroid = pts[:-1].mean(axis=0)
        worst = pts[-1]
        xr = centroid + alpha * (centroid - worst)
        fr = fun(xr)
        nfev += 1
        if vals[0] <= fr < vals[-2]:
            pts[-1], vals[-1] = xr, fr
            continue
        if fr < vals[0]:
            xe = centroid + gamma * (xr - centroid)
            fe = fun(xe)
            nfev += 1
            if fe < fr:
                pts[-1], vals[-1] = xe, fe
            else:
                pts[-1], vals[-1] = xr, fr
            continue
        if fr < vals[-1]:
            xc = centroid + rho * (xr - centroid)
            fc = fun(xc)
            nfev += 1
            if fc <= fr:
                pts[-1], vals[-1] = xc, fc
                continue
        else:
            xc = centroid + rho * (worst - centroid)
            fc = fun(xc)
            nfev += 1
            if fc < vals[-1]:
                pts[-1], vals[-1] = xc, fc
                continue
        # shrink toward the best vertex
        for i in range(1, n + 1):
            pts[i] = pts[0] + sigma * (pts[i] - pts[0])
            vals[i] = fun(pts[i])
        nfev += n

    return SimplexResult(pts[0].copy(), float(vals[0]), it, converged, nfev)


def _repair_start(a0: float, b0: float, x: np.ndarray, mode: str) -> tuple[float, float]:
    """Raise ``b`` just enough that every included pixel has positive variance."""
    v_min = float(np.min(a0 * x + b0))
    if v_min > 0 or mode == "poisson":
        return a0, b0
    margin = max(1e-6, 1e-3 * float(np.var(x)))
    return a0, b0 - v_min + margin


def fit_pg(y: np.ndarray, x_pseudo: np.ndarray, config: FitConfig | None = None) -> FitResult:
    """Fit ``(a, b)`` by minimising the clipped average NLL of ``y`` around
    ``x_pseudo``.  ``gaussian`` mode pins ``a = 0``; ``poisson`` pins ``b = 0``.

    A default start that is infeasible for the data (dark or negative
    ``x_pseudo`` with ``b = 0``) has ``b`` lifted to the feasibility boundary
    plus a small margin.
    """
    config = config or FitConfig()
    y = np.asarray(y, dtype=np.float64)
    x = np.asarray(x_pseudo, dtype=np.float64)
    if y.shape != x.shape:
        raise ValueError(f"shape mismatch {y.shape} vs {x.shape}")
    mask = clip_mask(y, config.clip_low_frac, config.clip_high_frac)
    included = int(mask.sum())
    a0, b0 = config.init.a, config.init.b

    if config.mode == "gaussian":
        a0 = 0.0
    elif config.mode == "poisson":
        b0 = 0.0
    a0, b0 = _repair_start(a0, b0, x[mask], config.mode)

    if config.mode == "pg":
        def objective(p):
            return pg_nll(y, x, NoiseParams(p[0], p[1]), mask)
        start = [a0, b0]
    elif config.mode == "gaussian":
        def objective(p):
            return pg_nll(y, x, NoiseParams(0.0, p[0]), mask)
        start = [b0]
    else:
        def objective(p):
            return pg_nll(y, x, NoiseParams(p[0], 0.0), mask)
        start = [a0]

    res = nelder_mead(objective, start, tol=config.tol, max_iter=config.max_iter)
    if config.mode == "pg":
        params = NoiseParams(float(res.x[0]), float(res.x[1]))
    elif config.mode == "gaussian":
        params = NoiseParams(0.0, float(res.x[0]))
    else:
        params = NoiseParams(float(res.x[0]), 0.0)
    return FitResult(params, res.fun, res.iterations, res.converged, included)
