"""Acceptance criteria, one test per criterion.

Each test records a one-line PASS/FAIL verdict (printed, and repeated in the
terminal summary).  Tolerances and runtime limits are pinned here exactly as
the criteria state them.  Criterion 9 is informational: it reports its
verdict but never fails the run.
"""

import json
import math
import time

import numpy as np
import pytest

from pgdenoise.bench import DESK_GRID, REG_LAMBDAS, DeskDataset, desk_train_config, regularization_sweep, run_benchmark
from pgdenoise.blindspot import LOSS_KINDS, BlindspotPredictor, loss_and_grad, predict_image
from pgdenoise.cli import cli_dispatch
from pgdenoise.fit import FitConfig, clip_mask, fit_pg
from pgdenoise.image import save_image
from pgdenoise.noise import NoiseParams, SyntheticNoiseSpec, gaussian_approx_corrupt, pg_corrupt, spec_to_params
from pgdenoise.pipeline import posterior_mean
from pgdenoise.rng import RngState
from pgdenoise.textures import synthetic_texture, texture_set

# ---------------------------------------------------------------------------
# 1. moments of the Poisson-Gaussian sampler


def test_01_moment_fidelity(acceptance_report):
    a, b, x0, n = 0.02, 0.0015, 0.5, 10**6
    t0 = time.perf_counter()
    y = pg_corrupt(np.full(n, x0), NoiseParams(a, b), RngState(1))
    dt = time.perf_counter() - t0
    mean_err = abs(y.mean() - x0)
    var_rel = abs(y.var() / (a * x0 + b) - 1)
    ok = mean_err <= 0.001 and var_rel <= 0.02 and dt < 5
    acceptance_report(1, ok, f"mean err {mean_err:.2e} (<=1e-3), var rel err {var_rel:.2%} (<=2%), "
                             f"{dt:.2f} s (<5 s)")
    assert ok


# ---------------------------------------------------------------------------
# 2. oracle recovery of (a, b) with clean images as x

ORACLE_GRID = [(0.02, 0.00153), (0.0333, 0.0138), (0.1, 0.0384)]


def test_02_oracle_parameter_recovery(acceptance_report):
    t0 = time.perf_counter()
    x = synthetic_texture(256, RngState(2))
    rng = RngState(3)
    worst, parts = 0.0, []
    for a, b in ORACLE_GRID:
        y = gaussian_approx_corrupt(x, NoiseParams(a, b), rng)
        res = fit_pg(y, x)
        ea, eb = res.params.a / a - 1, res.params.b / b - 1
        worst = max(worst, abs(ea), abs(eb))
        parts.append(f"({a:g},{b:g}): {ea:+.1%}/{eb:+.1%}")
    dt = time.perf_counter() - t0
    ok = worst <= 0.10 and dt < 30
    acceptance_report(2, ok, f"worst rel err {worst:.1%} (<=10%), {dt:.1f} s (<30 s); " + "; ".join(parts))
    assert ok


# ---------------------------------------------------------------------------
# 3. single-component fits


def test_03_special_case_fits(acceptance_report):
    x = synthetic_texture(256, RngState(4))
    y = x + 0.04 * RngState(5).normal(x.size).reshape(x.shape)
    g = fit_pg(y, x, FitConfig(mode="gaussian"))
    mask = clip_mask(y, 0.02, 0.03)
    b_star = float(np.mean((y - x)[mask] ** 2))
    g_err = abs(g.params.b / b_star - 1)

    yp = pg_corrupt(x, spec_to_params(SyntheticNoiseSpec(10, 0)), RngState(6))
    p = fit_pg(yp, x, FitConfig(mode="poisson"))
    p_err = abs(p.params.a / 0.100 - 1)
    ok = g.params.a == 0 and g_err <= 0.01 and p.params.b == 0 and p_err <= 0.05
    acceptance_report(3, ok, f"gaussian-only b rel err vs closed form {g_err:.2e} (<=1%); "
                             f"poisson-only a={p.params.a:.4f} rel err {p_err:.1%} (<=5%)")
    assert ok


# ---------------------------------------------------------------------------
# 4. posterior mean against brute-force quadrature


def _quadrature_posterior_mean(y, mu, s2, n, points=20001):
    spread = 12.0 * math.sqrt(max(s2, n))
    grid = np.linspace(min(y, mu) - spread, max(y, mu) + spread, points)
    log_w = -0.5 * (grid - mu) ** 2 / s2 - 0.5 * (y - grid) ** 2 / n
    w = np.exp(log_w - log_w.max())
    return np.trapezoid(grid * w, grid) / np.trapezoid(w, grid)


def test_04_posterior_mean_quadrature(acceptance_report):
    rng = RngState(7)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        mu, s2, a, b = rng.uniform(4) * np.array([1.0, 0.05, 0.1, 0.01])
        s2, b = s2 + 1e-5, b + 1e-6
        n = a * mu + b
        y = mu + math.sqrt(s2 + n) * float(rng.normal(1)[0])
        ref = _quadrature_posterior_mean(y, mu, s2, n)
        worst = max(worst, abs(posterior_mean(y, mu, s2, NoiseParams(a, b)) - ref))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-6 and dt < 10
    acceptance_report(4, ok, f"max |closed form - quadrature| {worst:.1e} over 1000 draws (<=1e-6), "
                             f"{dt:.1f} s (<10 s)")
    assert ok


# ---------------------------------------------------------------------------
# 5. analytic gradients against central differences


def _random_config(rng: RngState, kind: str):
    """Random model, batch and noise level with a finite loss (draws with a
    non-finite loss, e.g. a non-positive Poisson mean, are redrawn)."""
    while True:
        cfg = _draw_config(rng, kind)
        model, X, y, noise, lam = cfg
        if math.isfinite(loss_and_grad(model, X, y, kind, noise, lam)[0]):
            return cfg


def _draw_config(rng: RngState, kind: str):
    radius = 1 + rng.integers(2)
    hidden = tuple(3 + rng.integers(5) for _ in range(1 + rng.integers(2)))
    noise = NoiseParams(0.005 + 0.1 * float(rng.uniform(1)[0]), 1e-4 + 0.01 * float(rng.uniform(1)[0]))
    model = BlindspotPredictor(radius, hidden, loss_kind=kind, noise=noise)
    model.init_weights(rng)
    model.weights += 0.3 * rng.normal(model.n_params)
    model.set_head_bias(0.5, math.log(0.005 + 0.05 * float(rng.uniform(1)[0])))
    rows = 16 + rng.integers(32)
    X = rng.uniform(rows * model.n_inputs).reshape(rows, model.n_inputs)
    y = rng.uniform(rows)
    lam = 0.05 + 2.0 * float(rng.uniform(1)[0]) if kind == "pg-regularized" else 0.0
    return model, X, y, noise, lam


def _free_noise(kind):
    return {"pg-marginal": [0, 1], "pg-regularized": [0, 1], "gaussian": [1], "poisson": [0]}.get(kind, [])


def _gradient_rel_error(model, X, y, kind, noise, lam):
    """Norm-wise relative error of the full analytic gradient (weights plus
    every free noise parameter) against central differences."""
    _, g_w, g_n = loss_and_grad(model, X, y, kind, noise, lam)
    free = _free_noise(kind)
    analytic = np.concatenate([g_w, g_n[free]])

    def f(theta):
        p = np.array([noise.a, noise.b])
        p[free] = theta[model.n_params:]
        return loss_and_grad(model, X, y, kind, NoiseParams(*p), lam, weights=theta[:model.n_params])[0]

    theta0 = np.concatenate([model.weights, np.array([noise.a, noise.b])[free]])
    fd = np.empty_like(theta0)
    for i in range(theta0.size):
        h = 1e-6 * max(1.0, abs(theta0[i])) if i < model.n_params else 1e-7
        tp, tm = theta0.copy(), theta0.copy()
        tp[i] += h
        tm[i] -= h
        fd[i] = (f(tp) - f(tm)) / (2 * h)
    return float(np.linalg.norm(analytic - fd) / max(np.linalg.norm(fd), 1e-300))


def test_05_gradient_suite(acceptance_report):
    rng = RngState(8)
    t0 = time.perf_counter()
    worst = {k: 0.0 for k in LOSS_KINDS}
    for i in range(100):
        kind = LOSS_KINDS[i % len(LOSS_KINDS)]
        model, X, y, noise, lam = _random_config(rng, kind)
        worst[kind] = max(worst[kind], _gradient_rel_error(model, X, y, kind, noise, lam))
    dt = time.perf_counter() - t0
    ok = max(worst.values()) < 1e-4 and dt < 60
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    acceptance_report(5, ok, f"max rel err per loss over 100 configs (<1e-4): {detail}; {dt:.1f} s (<60 s)")
    assert ok


# ---------------------------------------------------------------------------
# 6. blind-spot invariance


def test_06_blindspot_invariance(acceptance_report):
    rng = RngState(9)
    trials, mismatches = 10_000, 0
    per_model = 1000
    for start in range(0, trials, per_model):
        model = BlindspotPredictor(2, (16, 16))
        model.init_weights(rng)
        model.weights += 0.5 * rng.normal(model.n_params)
        img = rng.uniform(144).reshape(12, 12)
        base = predict_image(model, img)
        sites = rng.integers(144, size=per_model)
        values = 10.0 * rng.normal(per_model)
        for site, value in zip(sites, values):
            r, c = divmod(int(site), 12)
            pert = img.copy()
            pert[r, c] = value
            out = predict_image(model, pert)
            same = (out.mu[r, c].tobytes() == base.mu[r, c].tobytes()
                    and out.var[r, c].tobytes() == base.var[r, c].tobytes())
            mismatches += not same
    ok = mismatches == 0
    acceptance_report(6, ok, f"{trials} centre perturbations (border sites included), {mismatches} mismatches")
    assert ok


# ---------------------------------------------------------------------------
# 7 and 9. desk-grid benchmark


@pytest.fixture(scope="module")
def desk_rows():
    t0 = time.perf_counter()
    rows = run_benchmark(DESK_GRID, DeskDataset.generate(seed=0), desk_train_config(), seed=0)
    return rows, time.perf_counter() - t0


def _chain(row):
    """Check noisy + 3 <= pseudo <= unc + 0.05 <= gt + 0.10 for one cell.

    The noise-free cell has infinite noisy PSNR, so its first link is
    replaced by the infinity flag.
    """
    if row.lam == 0 and row.sigma == 0:
        first = math.isinf(row.psnr_noisy)
    else:
        first = row.psnr_noisy + 3 <= row.psnr_pseudo
    return (not row.error and first and row.psnr_pseudo <= row.psnr_uncalibrated + 0.05
            and row.psnr_uncalibrated + 0.05 <= row.psnr_ground_truth_params + 0.10)


@pytest.mark.slow
def test_07_desk_psnr_ordering(desk_rows, acceptance_report):
    rows, dt = desk_rows
    bad = []
    for r in rows:
        line = (f"  ({r.lam:g},{r.sigma:g}) noisy {r.psnr_noisy:.2f} pseudo {r.psnr_pseudo:.2f} "
                f"unc {r.psnr_uncalibrated:.2f} gt {r.psnr_ground_truth_params:.2f} {r.error}")
        print(line)
        if not _chain(r):
            bad.append(f"({r.lam:g},{r.sigma:g})")
    ok = not bad and dt < 30 * 60
    acceptance_report(7, ok, f"ordering chain holds in {len(rows) - len(bad)}/{len(rows)} cells"
                             f"{' (fails: ' + ', '.join(bad) + ')' if bad else ''}; {dt / 60:.1f} min (<30 min)")
    assert ok


@pytest.mark.slow
def test_09_bias_direction_report(desk_rows, acceptance_report):
    rows, _ = desk_rows
    good = [r for r in rows if not r.error and r.true_a > 0 and r.psnr_pseudo > 30]
    if not good:
        acceptance_report(9, False, "reported only: no cell reached 30 dB pseudo-clean PSNR")
        return
    a_err = float(np.median([r.est_a - r.true_a for r in good]))
    b_rel = [r.est_b / r.true_b - 1 for r in good]
    b_ok = all(abs(v) <= 0.2 for v in b_rel)
    ok = a_err >= 0 and b_ok
    cells = ", ".join(f"({r.lam:g},{r.sigma:g})" for r in good)
    acceptance_report(9, ok, f"reported only: cells {cells}; median signed est_a error {a_err:+.4f} (>=0); "
                             f"est_b rel err {', '.join(f'{v:+.0%}' for v in b_rel)} (within 20%)")


# ---------------------------------------------------------------------------
# 8. regularization sweep


@pytest.mark.slow
def test_08_regularization_ordering(acceptance_report):
    t0 = time.perf_counter()
    rows = regularization_sweep(DeskDataset.generate(seed=0), list(REG_LAMBDAS), desk_train_config(), seed=0)
    dt = time.perf_counter() - t0
    unc = rows[0].psnr
    best_reg = max(r.psnr for r in rows[1:])
    ok = all(not r.error for r in rows) and unc >= best_reg - 0.2 and dt < 20 * 60
    detail = ", ".join(f"lambda {r.lambda_reg:g}: {r.psnr:.2f}" for r in rows[1:])
    acceptance_report(8, ok, f"uncalibrated {unc:.2f} dB vs regularized {detail} (margin 0.2 dB); "
                             f"{dt / 60:.1f} min (<20 min)")
    assert ok


# ---------------------------------------------------------------------------
# 10. CLI determinism


def _cli_session(root):
    root.mkdir()
    clean = root / "clean"
    clean.mkdir()
    for i, img in enumerate(texture_set(3, 24, RngState(10))):
        save_image(img, clean / f"c{i}.pfm")
    noisy = root / "noisy"
    noisy.mkdir()
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps({
        "train": {"epochs": 2, "batches_per_epoch": 2, "batch_size": 2, "crop_size": 12,
                  "hidden_sizes": [6], "patch_radius": 2},
        "bench": {"n_train": 2, "n_test": 1, "image_size": 24, "reg_lambdas": [1.0]},
    }))
    commands = [
        *[["corrupt", "--lambda", "30", "--sigma", "30", "--seed", "11", clean / f"c{i}.pfm", noisy / f"n{i}.pfm"]
          for i in range(3)],
        ["train", "--config", cfg, "--seed", "12", noisy, root / "model.json"],
        ["denoise", root / "model.json", noisy / "n0.pfm", root / "den"],
        ["fit-noise", "--out", root / "fit.json", noisy / "n0.pfm", root / "den" / "n0_pseudo_clean.pfm"],
        ["eval", "--a", "0.03", "--b", "0.01", "--out", root / "eval.json", clean / "c0.pfm", noisy / "n0.pfm"],
        ["bench", "--config", cfg, "--seed", "13", root / "bench"],
        ["reg-sweep", "--config", cfg, "--seed", "14", root / "sweep"],
    ]
    for cmd in commands:
        code = cli_dispatch([str(c) for c in cmd])
        if code != 0:
            raise AssertionError(f"command failed: {cmd[0]}")
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.mark.slow
def test_10_cli_determinism(tmp_path, acceptance_report):
    first = _cli_session(tmp_path / "run1")
    second = _cli_session(tmp_path / "run2")
    differing = sorted(str(k) for k in first if first[k] != second.get(k))
    kinds = sorted({k.suffix for k in first})
    ok = first.keys() == second.keys() and not differing
    acceptance_report(10, ok, f"{len(first)} artifacts ({', '.join(kinds)}) byte-identical across two runs"
                              f"{'; differing: ' + ', '.join(differing) if differing else ''}")
    assert ok
