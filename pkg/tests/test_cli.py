import json
import math
import subprocess
import sys

import numpy as np
import pytest

from pgdenoise.bench import psnr
from pgdenoise.cli import cli_dispatch
from pgdenoise.fit import FitConfig, fit_pg
from pgdenoise.image import load_image, save_image
from pgdenoise.noise import NoiseParams, pg_corrupt
from pgdenoise.rng import RngState
from pgdenoise.textures import texture_set


@pytest.fixture
def work(tmp_path):
    (tmp_path / "clean").mkdir()
    for i, img in enumerate(texture_set(3, 24, RngState(70))):
        save_image(img, tmp_path / "clean" / f"c{i}.pfm")
    return tmp_path


def run(argv, capsys):
    code = cli_dispatch([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_corrupt_matches_library(work, capsys):
    code, _, _ = run(["corrupt", "--lambda", 50, "--sigma", 10, "--seed", 4,
                      work / "clean/c0.pfm", work / "n.pfm"], capsys)
    assert code == 0
    clean = load_image(work / "clean/c0.pfm")
    direct = pg_corrupt(clean, NoiseParams(0.02, (10 / 255) ** 2), RngState(4).split("corrupt"))
    assert np.array_equal(load_image(work / "n.pfm"), direct.astype(np.float32).astype(np.float64))


def test_corrupt_explicit_params_override(work, capsys):
    run(["corrupt", "--lambda", 50, "--a", 0.1, "--b", 0.0, work / "clean/c0.pfm", work / "n.pfm"], capsys)
    direct = pg_corrupt(load_image(work / "clean/c0.pfm"), NoiseParams(0.1, 0.0), RngState(0).split("corrupt"))
    assert np.array_equal(load_image(work / "n.pfm"), direct.astype(np.float32).astype(np.float64))


def test_eval_identical_flags_infinity(work, capsys):
    code, out, _ = run(["eval", work / "clean/c0.pfm", work / "clean/c0.pfm"], capsys)
    assert code == 0
    assert json.loads(out) == {"psnr": None, "psnr_infinite": True}


def test_eval_matches_library(work, capsys):
    a, b = load_image(work / "clean/c0.pfm"), load_image(work / "clean/c1.pfm")
    _, out, _ = run(["eval", work / "clean/c0.pfm", work / "clean/c1.pfm"], capsys)
    assert json.loads(out)["psnr"] == psnr(a, b)


def test_fit_noise_matches_library(work, capsys):
    run(["corrupt", "--lambda", 30, "--sigma", 30, work / "clean/c0.pfm", work / "n.pfm"], capsys)
    code, out, _ = run(["fit-noise", "--clip-low", 0.01, work / "n.pfm", work / "clean/c0.pfm"], capsys)
    direct = fit_pg(load_image(work / "n.pfm"), load_image(work / "clean/c0.pfm"), FitConfig(clip_low_frac=0.01))
    assert code == 0 and json.loads(out) == direct.to_dict()


def test_train_and_denoise(work, capsys):
    cfg = {"train": {"epochs": 2, "batches_per_epoch": 2, "hidden_sizes": [6], "crop_size": 12,
                     "patch_radius": 2, "batch_size": 2}}
    (work / "cfg.json").write_text(json.dumps(cfg))
    code, _, err = run(["train", "--config", work / "cfg.json", "--seed", 2, work / "clean", work / "m.json"],
                       capsys)
    assert code == 0, err
    assert (work / "m.json").exists() and (work / "m.json.log.csv").exists()
    code, _, err = run(["denoise", "--clamp-output", work / "m.json", work / "clean/c0.pfm", work / "out"], capsys)
    assert code == 0, err
    assert {p.name for p in (work / "out").iterdir()} == {"c0_denoised.pfm", "c0_pseudo_clean.pfm", "c0_params.json"}
    code, _, _ = run(["denoise", "--a", 0, "--b", 0, work / "m.json", work / "clean/c0.pfm", work / "out2"], capsys)
    assert json.loads((work / "out2/c0_params.json").read_text())["source"] == "supplied"


def test_missing_checkpoint(work, capsys):
    code, _, err = run(["denoise", work / "none.json", work / "clean/c0.pfm", work / "out"], capsys)
    assert code == 1
    assert err.startswith("error: checkpoint-not-found:") and err.count("\n") == 1


def test_missing_image(work, capsys):
    code, _, err = run(["eval", work / "nope.pfm", work / "clean/c0.pfm"], capsys)
    assert code == 1 and err.startswith("error: image-io:")


def test_bad_config_key(work, capsys):
    (work / "bad.json").write_text('{"fit": {"tolerance": 1}}')
    code, _, err = run(["fit-noise", "--config", work / "bad.json", work / "clean/c0.pfm", work / "clean/c0.pfm"],
                       capsys)
    assert code == 1 and err.startswith("error: config:")


def test_usage_error_exit_2(capsys):
    with pytest.raises(SystemExit) as info:
        cli_dispatch(["fit-noise", "--mode", "laplace", "a", "b"])
    assert info.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_entry_point_subprocess(work):
    res = subprocess.run([sys.executable, "-m", "pgdenoise.cli", "eval", str(work / "clean/c0.pfm"),
                          str(work / "clean/c1.pfm")], capture_output=True, text=True)
    assert res.returncode == 0 and math.isfinite(json.loads(res.stdout)["psnr"])
