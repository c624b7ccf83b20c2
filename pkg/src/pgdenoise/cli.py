"""``pgdenoise`` command line.

Subcommands are thin wrappers over the library; every failure prints a single
``error: <category>: <message>`` line on stderr and exits 1.  Bad usage exits
2 via argparse.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

from . import bench as benchmod
from .blindspot import LOSS_KINDS, BlindspotPredictor, train
from .config import RunConfig, load_config
from .errors import PGDenoiseError
from .fit import MODES, fit_pg, pg_nll
from .image import load_image, list_images, save_image
from .noise import NoiseParams, SyntheticNoiseSpec, pg_corrupt, spec_to_params
from .pipeline import denoise
from .rng import RngState

log = logging.getLogger("pgdenoise")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON run configuration")
    p.add_argument("--seed", type=int, help="master random seed")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def _add_noise(p):
    p.add_argument("--lambda", dest="lam", type=float, help="Poisson level on the 0-255 scale (a = 1/lambda)")
    p.add_argument("--sigma", type=float, help="Gaussian std on the 0-255 scale (b = (sigma/255)^2)")
    p.add_argument("--a", type=float, help="Poisson gain a (overrides --lambda)")
    p.add_argument("--b", type=float, help="Gaussian variance b (overrides --sigma)")


def _add_fit(p):
    p.add_argument("--mode", choices=MODES, help="which noise parameters to fit")
    p.add_argument("--clip-low", type=float, help="fraction of the dynamic range dropped at the bottom")
    p.add_argument("--clip-high", type=float, help="fraction of the dynamic range dropped at the top")


def _add_train(p):
    p.add_argument("--loss", choices=LOSS_KINDS, help="training loss")
    p.add_argument("--lambda-reg", type=float, help="regularization weight for pg-regularized")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pgdenoise", description="Self-supervised Poisson-Gaussian denoising.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("corrupt", help="add synthetic Poisson-Gaussian noise to a clean image")
    p.add_argument("input", type=Path)
    p.add_argument("output", type=Path)
    _add_noise(p)
    _add_common(p)

    p = sub.add_parser("train", help="train a blindspot model on noisy images")
    p.add_argument("data", type=Path, help="image file or directory of .pfm/.pgm images")
    p.add_argument("checkpoint", type=Path)
    p.add_argument("--log", type=Path, help="training log CSV (default: <checkpoint>.log.csv)")
    p.add_argument("--epochs", type=int)
    _add_train(p)
    _add_common(p)

    p = sub.add_parser("fit-noise", help="fit (a, b) to a noisy image given a clean or pseudo-clean one")
    p.add_argument("noisy", type=Path)
    p.add_argument("reference", type=Path)
    p.add_argument("--out", type=Path, help="write the result JSON here instead of stdout")
    _add_fit(p)
    _add_common(p)

    p = sub.add_parser("denoise", help="denoise an image with a trained checkpoint")
    p.add_argument("checkpoint", type=Path)
    p.add_argument("noisy", type=Path)
    p.add_argument("out_dir", type=Path)
    p.add_argument("--clamp-output", action="store_true", help="clamp the denoised image to [0, 1]")
    p.add_argument("--a", type=float, help="use this a instead of fitting")
    p.add_argument("--b", type=float, help="use this b instead of fitting")
    _add_fit(p)
    _add_common(p)

    p = sub.add_parser("eval", help="PSNR of a test image against a reference (and NLL if a, b given)")
    p.add_argument("reference", type=Path)
    p.add_argument("test", type=Path)
    p.add_argument("--peak", type=float, default=1.0)
    p.add_argument("--a", type=float)
    p.add_argument("--b", type=float)
    p.add_argument("--out", type=Path)
    _add_common(p)

    p = sub.add_parser("bench", help="run the synthetic lambda x sigma benchmark")
    p.add_argument("out_dir", type=Path)
    p.add_argument("--grid", choices=("desk", "paper"))
    p.add_argument("--jobs", type=int, help="worker processes")
    _add_fit(p)
    _add_common(p)

    p = sub.add_parser("reg-sweep", help="uncalibrated vs regularized training over lambda_reg values")
    p.add_argument("out_dir", type=Path)
    p.add_argument("--lambdas", type=lambda s: [float(v) for v in s.split(",")],
                   help="comma-separated regularization weights")
    _add_noise(p)
    _add_common(p)
    return parser


def _resolve(args) -> RunConfig:
    """Config file (or defaults) with command-line flags applied on top."""
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "jobs", None) is not None:
        cfg.jobs = args.jobs
    fit_kw = {k: v for k, v in (("mode", getattr(args, "mode", None)),
                                ("clip_low_frac", getattr(args, "clip_low", None)),
                                ("clip_high_frac", getattr(args, "clip_high", None))) if v is not None}
    if fit_kw:
        cfg.fit = replace(cfg.fit, **fit_kw)
    train_kw = {k: v for k, v in (("loss_kind", getattr(args, "loss", None)),
                                  ("lambda_reg", getattr(args, "lambda_reg", None)),
                                  ("epochs", getattr(args, "epochs", None))) if v is not None}
    if train_kw:
        cfg.train = replace(cfg.train, **train_kw)
        cfg.train_overrides.update(train_kw)
    for flag, key in (("lam", "lam"), ("sigma", "sigma"), ("a", "a"), ("b", "b")):
        v = getattr(args, flag, None)
        if v is not None:
            setattr(cfg.noise, key, v)
    if getattr(args, "grid", None):
        cfg.bench = replace(cfg.bench, grid=args.grid)
    return cfg


def _noise_params(cfg: RunConfig) -> NoiseParams:
    spec = spec_to_params(SyntheticNoiseSpec(cfg.noise.lam, cfg.noise.sigma))
    a = spec.a if cfg.noise.a is None else cfg.noise.a
    b = spec.b if cfg.noise.b is None else cfg.noise.b
    return NoiseParams(a, b)


def _write_json(obj, path: Path | None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        path.write_text(text)


def cmd_corrupt(args, cfg):
    params = _noise_params(cfg)
    noisy = pg_corrupt(load_image(args.input), params, RngState(cfg.seed).split("corrupt"))
    save_image(noisy, args.output)
    log.info("wrote %s with a=%g b=%g", args.output, params.a, params.b)


def cmd_train(args, cfg):
    images = [load_image(p) for p in list_images(args.data)]
    if not images:
        raise PGDenoiseError(f"no .pfm/.pgm images in {args.data}")
    # --seed wins, then an explicit train.seed, then the top-level seed
    seed = cfg.train.seed if args.seed is None and "seed" in cfg.train_overrides else cfg.seed
    tcfg = replace(cfg.train, seed=seed)
    dump = args.checkpoint.with_name(args.checkpoint.name + ".diverged.json")
    model, tlog = train(images, tcfg, dump_path=dump)
    model.save(args.checkpoint, tcfg)
    tlog.write_csv(args.log or args.checkpoint.with_name(args.checkpoint.name + ".log.csv"))


def cmd_fit_noise(args, cfg):
    res = fit_pg(load_image(args.noisy), load_image(args.reference), cfg.fit)
    _write_json(res.to_dict(), args.out)


def cmd_denoise(args, cfg):
    model = BlindspotPredictor.load(args.checkpoint)
    y = load_image(args.noisy)
    params = None
    if args.a is not None or args.b is not None:
        params = NoiseParams(args.a or 0.0, args.b or 0.0)
    report = denoise(model, y, cfg.fit, params)
    report.save(args.out_dir, args.noisy.stem, clamp_output=args.clamp_output)


def cmd_eval(args, cfg):
    ref, test = load_image(args.reference), load_image(args.test)
    value = benchmod.psnr(ref, test, args.peak)
    out = {"psnr": value if math.isfinite(value) else None, "psnr_infinite": math.isinf(value)}
    if args.a is not None or args.b is not None:
        nll = pg_nll(test, ref, NoiseParams(args.a or 0.0, args.b or 0.0))
        out["nll"] = nll if math.isfinite(nll) else None
    _write_json(out, args.out)


def _bench_train_config(cfg: RunConfig):
    if cfg.bench.desk_training:
        return benchmod.desk_train_config(**cfg.train_overrides)
    return cfg.train


def _dataset(cfg: RunConfig):
    b = cfg.bench
    return benchmod.DeskDataset.generate(b.dataset_seed, b.n_train, b.n_test, b.image_size)


def cmd_bench(args, cfg):
    grid = benchmod.DESK_GRID if cfg.bench.grid == "desk" else benchmod.PAPER_GRID
    tcfg = _bench_train_config(cfg)
    rows = benchmod.run_benchmark(grid, _dataset(cfg), tcfg, cfg.fit, cfg.seed, cfg.jobs, cfg.bench.peak)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    benchmod.write_rows_csv(rows, args.out_dir / "bench.csv")
    summary = benchmod.bench_summary(rows, grid=cfg.bench.grid, seed=cfg.seed, train_config=tcfg.to_dict())
    benchmod.write_summary(summary, args.out_dir / "summary.json")
    if summary["failed_cells"]:
        log.warning("%d cell(s) failed; see summary.json", len(summary["failed_cells"]))


def cmd_reg_sweep(args, cfg):
    lambdas = args.lambdas or cfg.bench.reg_lambdas
    lam = cfg.noise.lam if args.lam is not None else cfg.bench.reg_lam
    sigma = cfg.noise.sigma if args.sigma is not None else cfg.bench.reg_sigma
    tcfg = _bench_train_config(cfg)
    rows = benchmod.regularization_sweep(_dataset(cfg), lambdas, tcfg, SyntheticNoiseSpec(lam, sigma),
                                         cfg.fit, cfg.seed, cfg.bench.peak)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    benchmod.write_sweep_csv(rows, args.out_dir / "reg_sweep.csv")


COMMANDS = {
    "corrupt": cmd_corrupt,
    "train": cmd_train,
    "fit-noise": cmd_fit_noise,
    "denoise": cmd_denoise,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "reg-sweep": cmd_reg_sweep,
}


def _category(exc: BaseException) -> str:
    if isinstance(exc, PGDenoiseError):
        return exc.category
    if isinstance(exc, ValueError):
        return "invalid-value"
    if isinstance(exc, OSError):
        return "io"
    return "internal"


def cli_dispatch(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _resolve(args)
        COMMANDS[args.command](args, cfg)
    except Exception as exc:
        msg = " ".join(str(exc).split())
        print(f"error: {_category(exc)}: {msg}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(cli_dispatch())


if __name__ == "__main__":
    main()
