"""Blindspot predictor, training losses with exact gradients, and training.

The predictor is a fully connected tanh network whose input is the
``(2r+1)^2 - 1`` pixels around a site, the site itself being left out of the
input vector.  Two scalar heads give the prior mean and a log-variance.  The
log-variance is the total uncertainty for the ``uncalibrated`` loss and the
prior variance for the calibrated Poisson-Gaussian losses.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import CheckpointNotFoundError, ConfigError, TrainingDivergedError
from .image import AugmentOp, augment, random_crop
from .noise import NoiseParams
from .rng import RngState

log = logging.getLogger(__name__)

LOSS_KINDS = ("uncalibrated", "pg-marginal", "gaussian", "poisson", "pg-regularized")
CALIBRATED_KINDS = LOSS_KINDS[1:]
CHECKPOINT_FORMAT = "pgdenoise-checkpoint"
CHECKPOINT_VERSION = 1
HEAD_INIT_SCALE = 0.1


# ---------------------------------------------------------------------------
# patches


@lru_cache(maxsize=32)
def patch_index(height: int, width: int, radius: int) -> np.ndarray:
    """Flat source indices, shape ``(H*W, (2r+1)^2 - 1)``, of each site's
    neighbourhood under reflection padding.

    Near a border a reflected neighbour can land on the site itself; such
    entries take the mirrored offset instead, so no site ever sees its own
    value.
    """
    if height < 2 * radius + 1 or width < 2 * radius + 1:
        raise ValueError(f"image {height}x{width} smaller than patch size {2 * radius + 1}")
    k = 2 * radius + 1
    idx = np.arange(height * width).reshape(height, width)
    padded = np.pad(idx, radius, mode="reflect")
    win = np.lib.stride_tricks.sliding_window_view(padded, (k, k)).reshape(height * width, k * k)
    src = win.copy()
    own = idx.reshape(-1, 1)
    center = (k * k) // 2
    clash = src == own
    clash[:, center] = False
    if clash.any():
        rows, cols = np.nonzero(clash)
        # offset (dy, dx) -> (-dy, -dx) is column k*k-1-j
        src[rows, cols] = src[rows, k * k - 1 - cols]
        remaining = src == own
        remaining[:, center] = False
        if remaining.any():
            raise ValueError("image too small to keep the blind spot under reflection padding")
    src = np.delete(src, center, axis=1)
    src.setflags(write=False)
    return src


def extract_patches(img: np.ndarray, radius: int) -> np.ndarray:
    """Neighbourhood matrix of ``img`` (one row per pixel, centre excluded)."""
    h, w = img.shape
    return np.ascontiguousarray(img, dtype=np.float64).ravel()[patch_index(h, w, radius)]


# ---------------------------------------------------------------------------
# model


class BlindspotPredictor:
    """Masked-patch regressor with mean and log-variance heads.

    All trainable parameters live in one flat ``weights`` vector; ``noise``
    holds the global ``(a, b)`` of calibrated models.
    """

    def __init__(self, patch_radius: int = 4, hidden_sizes: Sequence[int] = (128, 128),
                 weights: np.ndarray | None = None, loss_kind: str = "uncalibrated",
                 noise: NoiseParams | None = None):
        self.patch_radius = int(patch_radius)
        self.hidden_sizes = tuple(int(h) for h in hidden_sizes)
        self.loss_kind = loss_kind
        self.noise = noise
        self.n_inputs = (2 * self.patch_radius + 1) ** 2 - 1
        sizes = (self.n_inputs,) + self.hidden_sizes
        self._shapes = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            self._shapes += [(fan_in, fan_out), (fan_out,)]
        self._shapes += [(sizes[-1], 2), (2,)]
        self.n_params = sum(int(np.prod(s)) for s in self._shapes)
        if weights is None:
            weights = np.zeros(self.n_params)
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} weights, got {weights.shape}")
        self.weights = weights.copy()

    @property
    def calibrated(self) -> bool:
        return self.loss_kind != "uncalibrated"

    def copy(self) -> "BlindspotPredictor":
        return BlindspotPredictor(self.patch_radius, self.hidden_sizes, self.weights,
                                  self.loss_kind, self.noise)

    def unpack(self, weights: np.ndarray | None = None) -> list[np.ndarray]:
        """Views into the flat vector: ``[W1, b1, ..., W_head, b_head]``."""
        flat = self.weights if weights is None else weights
        out, pos = [], 0
        for shape in self._shapes:
            size = int(np.prod(shape))
            out.append(flat[pos:pos + size].reshape(shape))
            pos += size
        return out

    def init_weights(self, rng: RngState) -> None:
        """Uniform(+-sqrt(3 / fan_in)) weights, heads scaled by 0.1, zero biases."""
        params = self.unpack()
        n_layers = len(params) // 2
        for layer in range(n_layers):
            W = params[2 * layer]
            limit = math.sqrt(3.0 / W.shape[0])
            if layer == n_layers - 1:
                limit *= HEAD_INIT_SCALE
            W[...] = (2.0 * rng.uniform(W.size) - 1.0).reshape(W.shape) * limit
            params[2 * layer + 1][...] = 0.0

    def set_head_bias(self, mu: float, log_var: float) -> None:
        self.unpack()[-1][...] = (mu, log_var)

    def forward(self, X: np.ndarray, weights: np.ndarray | None = None, cache: bool = False):
        """Heads for a batch of neighbourhood rows; returns ``(mu, log_var)``."""
        params = self.unpack(weights)
        acts = [X]
        h = X
        for layer in range(len(params) // 2 - 1):
            h = np.tanh(h @ params[2 * layer] + params[2 * layer + 1])
            acts.append(h)
        out = h @ params[-2] + params[-1]
        mu, log_var = out[:, 0], out[:, 1]
        if cache:
            return mu, log_var, acts
        return mu, log_var

    def forward_patch(self, patch: np.ndarray):
        """Heads for a single ``(2r+1, 2r+1)`` patch; its centre is ignored."""
        k = 2 * self.patch_radius + 1
        patch = np.asarray(patch, dtype=np.float64)
        if patch.shape != (k, k):
            raise ValueError(f"expected a {k}x{k} patch, got {patch.shape}")
        row = np.delete(patch.ravel(), (k * k) // 2)[None, :]
        mu, lv = self.forward(row)
        return float(mu[0]), float(lv[0])

    def backward(self, acts: list[np.ndarray], d_mu: np.ndarray, d_lv: np.ndarray,
                 weights: np.ndarray | None = None) -> np.ndarray:
        """Flat gradient given per-row head gradients ``d_mu``, ``d_lv``."""
        params = self.unpack(weights)
        grads = [None] * len(params)
        d_out = np.stack([d_mu, d_lv], axis=1)
        h = acts[-1]
        grads[-2] = h.T @ d_out
        grads[-1] = d_out.sum(axis=0)
        d_h = d_out @ params[-2].T
        for layer in range(len(params) // 2 - 2, -1, -1):
            h = acts[layer + 1]
            d_z = d_h * (1.0 - h * h)
            grads[2 * layer] = acts[layer].T @ d_z
            grads[2 * layer + 1] = d_z.sum(axis=0)
            if layer:
                d_h = d_z @ params[2 * layer].T
        return np.concatenate([g.ravel() for g in grads])

    # -- persistence ---------------------------------------------------------

    def to_dict(self, config: "TrainConfig | None" = None) -> dict:
        cfg = config.to_dict() if config is not None else None
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "patch_radius": self.patch_radius,
            "hidden_sizes": list(self.hidden_sizes),
            "activation": "tanh",
            "loss_kind": self.loss_kind,
            "noise": None if self.noise is None else self.noise.to_dict(),
            "config_hash": config_hash(cfg) if cfg is not None else None,
            "config": cfg,
            "weights": self.weights.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BlindspotPredictor":
        if d.get("format") != CHECKPOINT_FORMAT:
            raise ConfigError("not a pgdenoise checkpoint")
        if d.get("version") != CHECKPOINT_VERSION:
            raise ConfigError(f"unsupported checkpoint version {d.get('version')}")
        noise = None if d["noise"] is None else NoiseParams(**d["noise"])
        return cls(d["patch_radius"], d["hidden_sizes"], np.array(d["weights"], dtype=np.float64),
                   d["loss_kind"], noise)

    def save(self, path, config: "TrainConfig | None" = None) -> None:
        Path(path).write_text(json.dumps(self.to_dict(config)))

    @classmethod
    def load(cls, path) -> "BlindspotPredictor":
        path = Path(path)
        if not path.is_file():
            raise CheckpointNotFoundError(f"checkpoint not found: {path}")
        return cls.from_dict(json.loads(path.read_text()))


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


# ---------------------------------------------------------------------------
# losses (per pixel; inputs broadcast)


def loss_uncalibrated(y, mu, log_var):
    """``(y - mu)^2 / s + log s`` with ``s = exp(log_var)``."""
    r = np.asarray(y) - mu
    return r * r * np.exp(-log_var) + log_var


def _total_variance(mu, log_var_prior, a, b):
    return a * mu + b + np.exp(log_var_prior)


def loss_pg_marginal(y, mu, log_var_prior, a, b):
    """``(y - mu)^2 / v + log v`` with ``v = a mu + b + sigma^2``; ``inf`` where ``v <= 0``."""
    v = _total_variance(mu, log_var_prior, a, b)
    r = np.asarray(y) - mu
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(v > 0, r * r / v + np.log(np.where(v > 0, v, 1.0)), np.inf)
    return out if np.ndim(out) else float(out)


def loss_gaussian(y, mu, log_var_prior, noise_var):
    return loss_pg_marginal(y, mu, log_var_prior, 0.0, noise_var)


def loss_poisson(y, mu, log_var_prior, a):
    return loss_pg_marginal(y, mu, log_var_prior, a, 0.0)


def loss_pg_regularized(marginal_losses, log_var_prior, lambda_reg: float):
    """Mean marginal loss plus ``lambda`` times the mean prior std ``|sigma|``.

    Both terms are averaged over the batch the same way.
    """
    if lambda_reg < 0:
        raise ValueError("lambda_reg must be non-negative")
    sigma = np.exp(0.5 * np.asarray(log_var_prior))
    return float(np.mean(marginal_losses) + lambda_reg * np.mean(np.abs(sigma)))


def effective_noise(kind: str, noise: NoiseParams | None) -> tuple[float, float]:
    if kind == "uncalibrated":
        return 0.0, 0.0
    a, b = (noise.a, noise.b) if noise is not None else (0.0, 0.0)
    if kind == "gaussian":
        a = 0.0
    elif kind == "poisson":
        b = 0.0
    return a, b


def head_loss_grads(y, mu, lv, kind: str, a: float = 0.0, b: float = 0.0,
                    lambda_reg: float = 0.0):
    """Mean loss over rows and its gradients.

    Returns ``(loss, d_mu, d_lv, d_a, d_b)``; ``d_mu``/``d_lv`` are per row and
    already include the ``1/N`` of the mean.
    """
    n = y.shape[0]
    r = y - mu
    if kind == "uncalibrated":
        inv = np.exp(-lv)
        per = r * r * inv + lv
        d_mu = -2.0 * r * inv
        d_lv = 1.0 - r * r * inv
        return float(per.mean()), d_mu / n, d_lv / n, 0.0, 0.0

    s2 = np.exp(lv)
    v = a * mu + b + s2
    if np.any(v <= 0):
        return math.inf, None, None, None, None
    inv = 1.0 / v
    per = r * r * inv + np.log(v)
    dv = inv - r * r * inv * inv
    d_mu = -2.0 * r * inv + a * dv
    d_lv = dv * s2
    d_a = float(np.dot(dv, mu)) / n
    d_b = float(dv.sum()) / n
    loss = float(per.mean())
    if kind == "pg-regularized" and lambda_reg:
        sigma = np.exp(0.5 * lv)
        loss += lambda_reg * float(sigma.mean())
        d_lv = d_lv + 0.5 * lambda_reg * sigma
    if kind == "gaussian":
        d_a = 0.0
    elif kind == "poisson":
        d_b = 0.0
    return loss, d_mu / n, d_lv / n, d_a, d_b


def loss_and_grad(model: BlindspotPredictor, X: np.ndarray, y: np.ndarray, kind: str,
                  noise: NoiseParams | None = None, lambda_reg: float = 0.0,
                  weights: np.ndarray | None = None):
    """Mean batch loss and the gradient w.r.t. weights and ``(a, b)``.

    Returns ``(loss, grad_weights, grad_noise)``; ``grad_noise`` has two
    entries and is zero for coordinates a loss kind pins.
    """
    a, b = effective_noise(kind, noise)
    mu, lv, acts = model.forward(X, weights, cache=True)
    loss, d_mu, d_lv, d_a, d_b = head_loss_grads(y, mu, lv, kind, a, b, lambda_reg)
    if not math.isfinite(loss):
        return loss, None, None
    g = model.backward(acts, d_mu, d_lv, weights)
    return loss, g, np.array([d_a, d_b])


def batch_loss(model: BlindspotPredictor, X, y, kind, noise=None, lambda_reg=0.0, weights=None) -> float:
    a, b = effective_noise(kind, noise)
    mu, lv = model.forward(X, weights)
    return head_loss_grads(y, mu, lv, kind, a, b, lambda_reg)[0]


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    loss_kind: str = "uncalibrated"
    lambda_reg: float = 0.0
    learn_noise_params: bool = True
    noise_init: NoiseParams = field(default_factory=lambda: NoiseParams(0.01, 0.0))
    patch_radius: int = 4
    hidden_sizes: tuple = (128, 128)
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 300
    batches_per_epoch: int = 50
    batch_size: int = 4
    crop_size: int = 128
    lr_halving_patience: int = 10
    val_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.noise_init, dict):
            self.noise_init = NoiseParams(**self.noise_init)
        self.hidden_sizes = tuple(self.hidden_sizes)
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"loss_kind must be one of {LOSS_KINDS}, got {self.loss_kind!r}")
        if self.lambda_reg < 0:
            raise ValueError("lambda_reg must be non-negative")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.crop_size < 2 * self.patch_radius + 1:
            raise ValueError("crop_size must be at least 2 * patch_radius + 1")
        if self.epochs < 0 or self.batches_per_epoch < 1 or self.batch_size < 1:
            raise ValueError("epochs >= 0, batches_per_epoch >= 1 and batch_size >= 1 required")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_sizes"] = list(self.hidden_sizes)
        return d


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float


@dataclass
class TrainLog:
    initial_loss: float = math.nan
    records: list[EpochRecord] = field(default_factory=list)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_loss", "lr"])
            for r in self.records:
                w.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss), repr(r.lr)])


class Adam:
    def __init__(self, size: int, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> None:
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        params -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def split_dataset(images: list, val_fraction: float) -> tuple[list, list]:
    """Hold out the last ``val_fraction`` of images (at least one if there are two or more)."""
    n = len(images)
    if n < 2 or val_fraction <= 0:
        return list(images), []
    n_val = min(n - 1, max(1, int(round(val_fraction * n))))
    return list(images[:n - n_val]), list(images[n - n_val:])


def _local_residual_var(images) -> float:
    """Mean squared difference between pixels and their 4-neighbour mean."""
    acc, count = 0.0, 0
    for img in images:
        p = np.pad(img, 1, mode="reflect")
        nb = 0.25 * (p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:])
        d = img - nb
        acc += float(np.sum(d * d))
        count += img.size
    return acc / count


def _dataset_loss(model, images, kind, noise, lambda_reg) -> float:
    total, count = 0.0, 0
    for img in images:
        X = extract_patches(img, model.patch_radius)
        total += batch_loss(model, X, img.ravel(), kind, noise, lambda_reg) * img.size
        count += img.size
    return total / count


def sample_batch(images, config: TrainConfig, rng: RngState):
    """Random augmented crops stacked into ``(X, y)`` rows."""
    Xs, ys = [], []
    for _ in range(config.batch_size):
        img = images[rng.integers(len(images))]
        crop = random_crop(img, config.crop_size, rng)
        crop = augment(crop, AugmentOp.random(rng))
        Xs.append(extract_patches(crop, config.patch_radius))
        ys.append(crop.ravel())
    return np.concatenate(Xs), np.concatenate(ys)


def init_model(images, config: TrainConfig, rng: RngState) -> BlindspotPredictor:
    """Fresh model: random trunk, head biases set from data statistics."""
    kind = config.loss_kind
    noise = config.noise_init if kind in CALIBRATED_KINDS else None
    if noise is not None:
        a, b = effective_noise(kind, noise)
        noise = NoiseParams(a, b)
    model = BlindspotPredictor(config.patch_radius, config.hidden_sizes, loss_kind=kind, noise=noise)
    model.init_weights(rng.split("init"))
    if images:
        mean = float(np.mean([img.mean() for img in images]))
        # 1.25 undoes the shrinkage of differencing against a 4-neighbour mean
        resid = max(_local_residual_var(images) / 1.25, 1e-8)
        if kind != "uncalibrated":
            a, b = effective_noise(kind, noise)
            resid = max(resid - (a * mean + b), 0.1 * resid)
        model.set_head_bias(mean, math.log(resid))
    return model


def train(images: Sequence[np.ndarray], config: TrainConfig, rng: RngState | None = None,
          dump_path=None):
    """Fit a blindspot model to noisy ``images`` with Adam.

    The last ``val_fraction`` of the images is held out; the learning rate is
    halved once the held-out loss has not reached a new minimum for
    ``lr_halving_patience`` epochs.  Returns ``(model, TrainLog)``.

    Raises ``TrainingDivergedError`` if the loss or gradient stops being
    finite; the error's ``state`` (also written to ``dump_path`` if given)
    records where it happened.
    """
    if not images:
        raise ValueError("empty dataset")
    images = [np.asarray(img, dtype=np.float64) for img in images]
    for img in images:
        if min(img.shape) < config.crop_size:
            raise ValueError(f"image {img.shape} smaller than crop_size {config.crop_size}")
    rng = rng if rng is not None else RngState(config.seed)
    kind = config.loss_kind
    train_imgs, val_imgs = split_dataset(images, config.val_fraction)

    model = init_model(train_imgs, config, rng)
    tlog = TrainLog()
    if config.epochs == 0:
        return model, tlog

    learn = kind in CALIBRATED_KINDS and config.learn_noise_params
    free = {"pg-marginal": [0, 1], "pg-regularized": [0, 1], "gaussian": [1], "poisson": [0]}.get(kind, [])
    free = free if learn else []
    noise_vec = np.array(effective_noise(kind, model.noise))
    opt = Adam(model.n_params + len(free), config.lr, config.beta1, config.beta2, config.eps)
    theta = np.concatenate([model.weights, noise_vec[free]])
    batch_rng = rng.split("batches")

    best_val = math.inf
    since_best = 0
    for epoch in range(1, config.epochs + 1):
        losses = []
        for step in range(config.batches_per_epoch):
            X, y = sample_batch(train_imgs, config, batch_rng)
            noise_vec[free] = theta[model.n_params:]
            noise = NoiseParams(*noise_vec) if model.noise is not None else None
            loss, g_w, g_n = loss_and_grad(model, X, y, kind, noise, config.lambda_reg,
                                           weights=theta[:model.n_params])
            if not math.isfinite(loss) or g_w is None or not np.all(np.isfinite(g_w)):
                state = {
                    "epoch": epoch, "step": step, "loss": loss, "lr": opt.lr,
                    "adam_t": opt.t, "noise": noise_vec.tolist(),
                    "weight_norm": float(np.linalg.norm(theta[:model.n_params])),
                    "max_abs_weight": float(np.max(np.abs(theta[:model.n_params]))),
                }
                if dump_path is not None:
                    Path(dump_path).write_text(json.dumps(state, indent=2))
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, step {step}", state)
            if epoch == 1 and step == 0:
                tlog.initial_loss = loss
            opt.step(theta, np.concatenate([g_w, g_n[free]]))
            losses.append(loss)

        model.weights = theta[:model.n_params].copy()
        if model.noise is not None:
            noise_vec[free] = theta[model.n_params:]
            model.noise = NoiseParams(float(noise_vec[0]), float(noise_vec[1]))
        train_loss = float(np.mean(losses))
        if val_imgs:
            val_loss = _dataset_loss(model, val_imgs, kind, model.noise, config.lambda_reg)
        else:
            val_loss = train_loss
        tlog.records.append(EpochRecord(epoch, train_loss, val_loss, opt.lr))
        log.debug("epoch %d train %.5f val %.5f lr %.2e", epoch, train_loss, val_loss, opt.lr)
        if val_loss < best_val:
            best_val = val_loss
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.lr_halving_patience:
                opt.lr *= 0.5
                since_best = 0
    return model, tlog


# ---------------------------------------------------------------------------
# inference


@dataclass
class PriorPrediction:
    """Per-pixel prior mean and variance.

    ``var`` is the prior variance for calibrated models and the total
    (prior + noise) uncertainty for uncalibrated ones.
    """

    mu: np.ndarray
    var: np.ndarray
    calibrated: bool


def predict_image(model: BlindspotPredictor, y: np.ndarray, chunk: int = 16384) -> PriorPrediction:
    y = np.asarray(y, dtype=np.float64)
    h, w = y.shape
    idx = patch_index(h, w, model.patch_radius)
    flat = y.ravel()
    mu = np.empty(h * w)
    lv = np.empty(h * w)
    for s in range(0, h * w, chunk):
        m, v = model.forward(flat[idx[s:s + chunk]])
        mu[s:s + chunk] = m
        lv[s:s + chunk] = v
    return PriorPrediction(mu.reshape(h, w), np.exp(lv).reshape(h, w), model.calibrated)
