"""Command-line interface: subcommand wiring and exit codes."""

import numpy as np
import pytest
from PIL import Image

from desksplat.cli import main

SHORT_CFG = """
total_iters = 30
densify_start_iter = 10
densify_interval = 10
densify_end_iter = 20
prune_start_iter = 10
opacity_reset_start_iter = 30
opacity_reset_interval = 30
eval_interval = 10
low_res_edge = 28
high_res_edge = 56
"""


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("data") / "ds"
    rc = main(["gen", "--out", str(out), "--seed", "1", "--views", "8",
               "--size", "56"])
    assert rc == 0
    return out


@pytest.fixture(scope="module")
def cfg_file(tmp_path_factory):
    p = tmp_path_factory.mktemp("cfg") / "short.cfg"
    p.write_text(SHORT_CFG)
    return p


@pytest.fixture(scope="module")
def run_dir(dataset, cfg_file, tmp_path_factory):
    out = tmp_path_factory.mktemp("run") / "r"
    rc = main(["train", "--data", str(dataset), "--out", str(out),
               "--config", str(cfg_file), "--seed", "0"])
    assert rc == 0
    return out


class TestGen:
    def test_layout(self, dataset):
        assert (dataset / "cameras.txt").is_file()
        assert (dataset / "points.txt").is_file()
        assert len(list((dataset / "train").glob("*.png"))) == 8
        assert len(list((dataset / "train_mask").glob("*.png"))) == 8


class TestTrain:
    def test_outputs(self, run_dir):
        assert (run_dir / "metrics.csv").is_file()
        assert (run_dir / "final.rspl").is_file()

    def test_bad_flags_exit_2(self, dataset, cfg_file, tmp_path):
        rc = main(["train", "--data", str(dataset), "--out",
                   str(tmp_path / "x"), "--config", str(cfg_file),
                   "--flags", "bogus"])
        assert rc == 2

    def test_missing_data_exit_nonzero(self, cfg_file, tmp_path):
        rc = main(["train", "--data", str(tmp_path / "absent"), "--out",
                   str(tmp_path / "y"), "--config", str(cfg_file)])
        assert rc != 0

    def test_bad_config_exit_2(self, dataset, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("not_a_key = 1\n")
        rc = main(["train", "--data", str(dataset), "--out",
                   str(tmp_path / "z"), "--config", str(bad)])
        assert rc == 2


class TestEvalRender:
    def test_eval_runs(self, dataset, cfg_file, run_dir, capsys):
        rc = main(["eval", "--checkpoint", str(run_dir / "final.rspl"),
                   "--data", str(dataset), "--config", str(cfg_file)])
        assert rc == 0
        out = capsys.readouterr().out
        assert "psnr=" in out and "mask_iou=" in out

    def test_render_writes_test_views(self, dataset, cfg_file, run_dir,
                                      tmp_path):
        out = tmp_path / "renders"
        rc = main(["render", "--checkpoint", str(run_dir / "final.rspl"),
                   "--data", str(dataset), "--out", str(out),
                   "--config", str(cfg_file)])
        assert rc == 0
        pngs = sorted(out.glob("*.png"))
        assert len(pngs) == 8  # default test view count
        arr = np.asarray(Image.open(pngs[0]))
        assert arr.shape == (56, 56, 3)


def test_usage_error_exit_2():
    assert main(["train"]) == 2
