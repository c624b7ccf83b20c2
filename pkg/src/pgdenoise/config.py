"""JSON run configuration shared by the command-line subcommands.

A config document has optional sections ``train``, ``fit``, ``noise`` and
``bench`` plus top-level ``seed`` and ``jobs``.  Every key is checked; an
unknown key is an error rather than being silently ignored.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .blindspot import TrainConfig
from .errors import ConfigError
from .fit import FitConfig
from .noise import NoiseParams


@dataclass
class NoiseSection:
    """Either a (``lam``, ``sigma``) synthetic level or explicit ``a``/``b``;
    explicit values take precedence."""

    lam: float = 0.0
    sigma: float = 0.0
    a: float | None = None
    b: float | None = None


@dataclass
class BenchSection:
    grid: str = "desk"  # "desk" or "paper"
    n_train: int = 8
    n_test: int = 4
    image_size: int = 64
    dataset_seed: int = 0
    reg_lambdas: list = field(default_factory=lambda: [0.1, 1.0, 10.0])
    reg_lam: float = 30.0
    reg_sigma: float = 30.0
    peak: float = 1.0
    desk_training: bool = True

    def __post_init__(self):
        if self.grid not in ("desk", "paper"):
            raise ConfigError(f"bench.grid must be 'desk' or 'paper', got {self.grid!r}")
        if self.n_train < 1 or self.n_test < 1 or self.image_size < 16:
            raise ConfigError("bench needs n_train >= 1, n_test >= 1 and image_size >= 16")


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    fit: FitConfig = field(default_factory=FitConfig)
    noise: NoiseSection = field(default_factory=NoiseSection)
    bench: BenchSection = field(default_factory=BenchSection)
    seed: int = 0
    jobs: int = 1
    # keys given explicitly in the train section; bench layers them over
    # its desk-scale defaults
    train_overrides: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "train": self.train.to_dict(),
            "fit": asdict(self.fit),
            "noise": asdict(self.noise),
            "bench": asdict(self.bench),
            "seed": self.seed,
            "jobs": self.jobs,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("config document must be a JSON object")
        _check_keys("config", d, {"train", "fit", "noise", "bench", "seed", "jobs"})
        try:
            train = _section(TrainConfig, "train", d.get("train", {}), {"noise_init": _params})
            return cls(
                train=train,
                fit=_section(FitConfig, "fit", d.get("fit", {}), {"init": _params}),
                noise=_section(NoiseSection, "noise", d.get("noise", {})),
                bench=_section(BenchSection, "bench", d.get("bench", {})),
                seed=int(d.get("seed", 0)),
                jobs=int(d.get("jobs", 1)),
                train_overrides={k: getattr(train, k) for k in d.get("train", {})},
            )
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None


def _check_keys(where: str, d: dict, allowed) -> None:
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")


def _params(v):
    if isinstance(v, (list, tuple)) and len(v) == 2:
        return NoiseParams(float(v[0]), float(v[1]))
    if isinstance(v, dict):
        _check_keys("noise parameters", v, {"a", "b"})
        return NoiseParams(float(v["a"]), float(v["b"]))
    raise ConfigError(f"noise parameters must be [a, b] or {{'a':..,'b':..}}, got {v!r}")


def _section(cls, where: str, d, converters=None):
    if not isinstance(d, dict):
        raise ConfigError(f"section {where!r} must be an object")
    names = {f.name for f in fields(cls)}
    _check_keys(where, d, names)
    converters = converters or {}
    kw = {k: converters[k](v) if k in converters else v for k, v in d.items()}
    return cls(**kw)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from None
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from None
    return RunConfig.from_dict(d)
