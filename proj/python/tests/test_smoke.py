import math

import pytest

import vamp


def test_harmonic_mean():
    assert vamp.harmonic_mean(85.68, 77.16) == pytest.approx(81.20, abs=0.01)


def test_kl_matches_closed_form():
    kl = vamp.kl_diag_gaussians([1.0], [math.log(0.25)], [0.0], [0.0])
    assert kl == pytest.approx(0.5 * (0.25 + 1.0 - 1.0 - math.log(0.25)))
    assert vamp.kl_diag_gaussians([0.3, -1.0], [0.1, 0.2], [0.3, -1.0], [0.1, 0.2]) == 0.0


def test_dataset_sizes():
    assert vamp.dataset_sizes() == {"base_train": 96, "base_test": 150, "novel_test": 100}


def test_cli_usage_and_datagen(tmp_path):
    code, _, _ = vamp.run_cli(["no-such-command"])
    assert code == 1
    out = tmp_path / "data.bin"
    code, _, err = vamp.run_cli(["datagen", "--out", str(out)])
    assert code == 0, err
    assert out.stat().st_size > 0
    code, _, _ = vamp.run_cli(["eval", "--ckpt", str(tmp_path / "missing.ckpt"), "--data", str(out)])
    assert code == 2
