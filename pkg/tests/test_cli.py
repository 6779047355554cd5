"""End-to-end smoke tests for the command-line pipeline.

Each test drives ``main(argv)`` in-process on miniature runs; the goal
is wiring (flags, files, exit codes), not training quality.
"""

import hashlib
import os

import numpy as np
import pytest

from bevlab.cli import main
from bevlab.dataset import read_dataset
from bevlab.targets import voxelize


def file_hashes(directory):
    out = {}
    for name in sorted(os.listdir(directory)):
        with open(os.path.join(directory, name), "rb") as fh:
            out[name] = hashlib.sha256(fh.read()).hexdigest()
    return out


@pytest.fixture(scope="session")
def gen_dir(tmp_path_factory):
    """A 3-sample generated dataset with targets, shared by CLI tests."""
    path = str(tmp_path_factory.mktemp("cli") / "ds")
    assert main(["gen", "--seed", "3", "--n", "3", "--out", path]) == 0
    assert main(["targets", "--data", path]) == 0
    return path


@pytest.fixture(scope="session")
def run_cfg(tmp_path_factory, gen_dir):
    """Config file sized for second-scale training runs."""
    path = str(tmp_path_factory.mktemp("cli-cfg") / "run.cfg")
    with open(path, "w") as fh:
        fh.write(f"data = {gen_dir}\n")
        fh.write("epochs = 1\nfinetune_epochs = 2\nbatch_size = 2\n"
                 "val_count = 1\nn_i = 4\nn_b = 4\n")
    return path


@pytest.fixture(scope="session")
def ckpt_dir(tmp_path_factory, run_cfg):
    path = str(tmp_path_factory.mktemp("cli-ckpt") / "ck")
    assert main(["pretrain", "--config", run_cfg, "--out", path]) == 0
    return path


class TestGen:
    def test_same_seed_same_bytes(self, tmp_path):
        a, b = str(tmp_path / "a"), str(tmp_path / "b")
        assert main(["gen", "--seed", "5", "--n", "2", "--out", a]) == 0
        assert main(["gen", "--seed", "5", "--n", "2", "--out", b]) == 0
        assert file_hashes(a) == file_hashes(b)

    def test_different_seed_different_bytes(self, tmp_path):
        a, b = str(tmp_path / "a"), str(tmp_path / "b")
        main(["gen", "--seed", "5", "--n", "2", "--out", a])
        main(["gen", "--seed", "6", "--n", "2", "--out", b])
        ha, hb = file_hashes(a), file_hashes(b)
        assert set(ha) == set(hb)          # same layout
        assert any(ha[k] != hb[k] for k in ha if k.endswith(".oft"))

    def test_layout(self, gen_dir):
        ds = read_dataset(gen_dir)
        assert len(ds.ids) == 3
        assert ds.ids[0] == "000000"
        for sid in ds.ids:
            for suffix in ("points.oft", "labels.oft", "rig.txt"):
                assert os.path.exists(os.path.join(gen_dir, f"{sid}.{suffix}"))

    def test_n_required(self):
        with pytest.raises(SystemExit):
            main(["gen", "--out", "/tmp/never"])


class TestTargets:
    def test_target_files_written(self, gen_dir):
        ds = read_dataset(gen_dir)
        for sid in ds.ids:
            for suffix in ("occ", "ytgt", "ymask"):
                assert os.path.exists(os.path.join(gen_dir, f"{sid}.{suffix}.oft"))

    def test_idempotent(self, gen_dir):
        before = file_hashes(gen_dir)
        assert main(["targets", "--data", gen_dir]) == 0
        assert file_hashes(gen_dir) == before


class TestPretrain:
    def test_checkpoint_contents(self, ckpt_dir):
        for name in ("config.txt", "manifest.txt", "log.csv"):
            assert os.path.exists(os.path.join(ckpt_dir, name))
        with open(os.path.join(ckpt_dir, "log.csv")) as fh:
            header = fh.readline().strip()
        assert header == "step,l_occ,l_feat,total,n_valid"

    def test_stdout_reports_losses(self, run_cfg, tmp_path, capsys):
        out = str(tmp_path / "ck2")
        assert main(["pretrain", "--config", run_cfg, "--out", out,
                     "--arms", "occ"]) == 0
        text = capsys.readouterr().out
        assert "arms=occ" in text
        assert "final losses" in text


class TestFinetune:
    def test_report_file(self, run_cfg, ckpt_dir, tmp_path, capsys):
        report = str(tmp_path / "iou.txt")
        assert main(["finetune", "--config", run_cfg, "--ckpt", ckpt_dir,
                     "--out", report]) == 0
        text = capsys.readouterr().out
        assert "iou_vehicle" in text and "miou" in text
        with open(report) as fh:
            pairs = dict(line.strip().split(" = ") for line in fh)
        assert 0.0 <= float(pairs["iou_vehicle"]) <= 1.0
        assert 0.0 <= float(pairs["miou"]) <= 1.0

    def test_from_scratch_baseline(self, run_cfg, capsys):
        assert main(["finetune", "--config", run_cfg]) == 0
        assert "iou_background" in capsys.readouterr().out


class TestAblate:
    def test_csv_written(self, run_cfg, tmp_path, capsys):
        out = str(tmp_path / "table.csv")
        assert main(["ablate", "--config", run_cfg, "--seeds", "0,1,2",
                     "--lambdas", "0,0.01", "--out", out]) == 0
        with open(out) as fh:
            lines = fh.read().splitlines()
        assert lines[0] == "kind,name,seed,iou_vehicle,iou_background,miou"
        # 4 arms + 2 lambdas per seed, plus 6 median rows
        assert len(lines) == 1 + 3 * 6 + 6
        assert "median" in capsys.readouterr().out


class TestGradcheck:
    def test_smoke(self, capsys):
        assert main(["gradcheck", "--seeds", "1", "--skip-student"]) == 0
        text = capsys.readouterr().out
        assert "gradient suite: PASS" in text


class TestViz:
    def test_pca_image(self, gen_dir, ckpt_dir, tmp_path):
        out = str(tmp_path / "pca.ppm")
        assert main(["viz-pca", "--ckpt", ckpt_dir, "--data", gen_dir,
                     "--scene", "000000", "--out", out]) == 0
        with open(out, "rb") as fh:
            assert fh.read(3) == b"P6\n"

    def test_corr_image(self, gen_dir, ckpt_dir, tmp_path):
        ds = read_dataset(gen_dir)
        occ = voxelize(ds.load_sample("000000").point_cloud, ds.grid)
        k, i, j = np.argwhere(occ.data > 0)[0]
        out = str(tmp_path / "corr.ppm")
        assert main(["viz-corr", "--ckpt", ckpt_dir, "--data", gen_dir,
                     "--scene", "000000", "--query", f"{k},{i},{j}",
                     "--out", out]) == 0
        with open(out, "rb") as fh:
            assert fh.read(3) == b"P6\n"

    def test_bad_query_rejected(self, gen_dir, ckpt_dir, tmp_path):
        with pytest.raises(SystemExit):
            main(["viz-corr", "--ckpt", ckpt_dir, "--data", gen_dir,
                  "--scene", "000000", "--query", "1,2",
                  "--out", str(tmp_path / "x.ppm")])


def test_unknown_subcommand():
    with pytest.raises(SystemExit):
        main(["frobnicate"])
