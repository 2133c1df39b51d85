import json
import time

import numpy as np
import pytest

from spatialcontrast import cli, data, ops
from spatialcontrast import checkpoint as ckpt_io
from spatialcontrast.export import read_pnm
from spatialcontrast.models import build_cifar10_model
from spatialcontrast.rng import make_rng


def write_mnist(directory, n_train=64, n_test=32):
    directory.mkdir(parents=True, exist_ok=True)
    rng = make_rng(0, "cli-data")
    for split, n in (("train", n_train), ("test", n_test)):
        labels = np.arange(n) % 2
        images = (rng.random((n, 28, 28)) * 40).astype(np.uint8)
        images[labels == 0, :14] += 200
        images[labels == 1, 14:] += 200
        img_name, lbl_name = data.MNIST_FILES[split]
        (directory / img_name).write_bytes(data.encode_idx_images(images))
        (directory / lbl_name).write_bytes(data.encode_idx_labels(labels))
    return directory


@pytest.fixture
def workspace(tmp_path):
    data_dir = write_mnist(tmp_path / "mnist")
    config = tmp_path / "tiny.ini"
    config.write_text(
        f"[run]\ndata_dir = {data_dir}\nout_dir = {tmp_path / 'out'}\n\n"
        "[pretrain]\nbatch_size = 16\nmax_epochs = 1\n\n"
        "[finetune]\nbatch_size = 16\nmax_epochs = 2\ninitial_lr = 0.05\n"
    )
    return tmp_path, config


def run(*argv):
    return cli.main([str(a) for a in argv])


class TestPretrainCommand:
    def test_tiny_smoke_run(self, workspace, capsys):
        tmp, config = workspace
        t0 = time.perf_counter()
        assert run("--config", config, "pretrain") == 0
        assert time.perf_counter() - t0 < 60
        out = tmp / "out"
        m = json.loads((out / "pretrain.manifest.json").read_text())
        assert set(m["outputs"]) == {str(out / "pretrain.ckpt"), str(out / "pretrain.metrics")}
        assert m["finished"] and len(m["inputs"]) == 4
        assert "sc_loss" in capsys.readouterr().out

    def test_seed_flag_overrides_config(self, workspace):
        tmp, config = workspace
        config.write_text(config.read_text().replace("[run]\n", "[run]\nseed = 3\n"))
        assert run("pretrain", "--config", config, "--seed", 5) == 0
        m = json.loads((tmp / "out" / "pretrain.manifest.json").read_text())
        assert m["seed"] == 5 and m["config"]["run"]["seed"] == 5
        assert m["config"]["pretrain"]["seed"] == 5

    def test_out_dir_flag(self, workspace):
        tmp, config = workspace
        assert run("--config", config, "--out-dir", tmp / "elsewhere", "--quiet", "pretrain") == 0
        assert (tmp / "elsewhere" / "pretrain.ckpt").exists()

    def test_rerun_is_a_no_op(self, workspace, capsys):
        tmp, config = workspace
        assert run("--config", config, "pretrain") == 0
        ck = tmp / "out" / "pretrain.ckpt"
        stamp = ck.stat().st_mtime_ns
        capsys.readouterr()
        assert run("--config", config, "pretrain") == 0
        assert "up to date" in capsys.readouterr().out
        assert ck.stat().st_mtime_ns == stamp

    def test_changed_config_reruns(self, workspace, capsys):
        tmp, config = workspace
        assert run("--config", config, "pretrain") == 0
        capsys.readouterr()
        assert run("--config", config, "--seed", 1, "pretrain") == 0
        assert "up to date" not in capsys.readouterr().out

    def test_deterministic_metrics(self, workspace):
        tmp, config = workspace
        logs = []
        for k in range(2):
            assert run("--config", config, "--out-dir", tmp / f"r{k}", "pretrain") == 0
            lines = (tmp / f"r{k}" / "pretrain.metrics").read_text().splitlines()
            logs.append([line.rsplit(" wall_ms=", 1)[0] for line in lines])
        assert logs[0] == logs[1]

    def test_missing_dataset_dir(self, tmp_path, capsys):
        missing = tmp_path / "nowhere"
        assert run("--set", f"run.data_dir={missing}", "pretrain") == 2
        assert str(missing) in capsys.readouterr().err

    def test_no_dataset_dir_configured(self, monkeypatch, capsys):
        monkeypatch.delenv(cli.DATA_ENV, raising=False)
        assert run("pretrain") == 2
        assert cli.DATA_ENV in capsys.readouterr().err

    def test_env_fallback(self, workspace, monkeypatch):
        tmp, config = workspace
        monkeypatch.setenv(cli.DATA_ENV, str(tmp))
        config.write_text("\n".join(line for line in config.read_text().splitlines() if not line.startswith("data_dir")))
        assert run("--config", config, "pretrain") == 0


class TestFinetuneCommand:
    def test_scratch_and_init(self, workspace):
        tmp, config = workspace
        assert run("--config", config, "pretrain") == 0
        assert run("--config", config, "finetune") == 0
        out = tmp / "out"
        assert run("--config", config, "finetune", "--init", out / "pretrain.ckpt") == 0
        scratch = ckpt_io.load(out / "scratch.ckpt")
        warm = ckpt_io.load(out / "finetune.ckpt")
        assert scratch.meta["phase"] == "scratch" and warm.meta["phase"] == "finetune"
        assert 0 <= warm.meta["test_accuracy"] <= 1

    def test_resume(self, workspace):
        tmp, config = workspace
        out = tmp / "out"
        assert run("--config", config, "--set", "finetune.max_epochs=1", "finetune") == 0
        assert run("--config", config, "finetune", "--resume", out / "scratch.ckpt") == 0
        rows = (out / "finetune.metrics").read_text().splitlines()
        assert [r.split()[1] for r in rows] == ["epoch=2"]
        assert ckpt_io.load(out / "finetune.ckpt").meta["train_state"]["epoch"] == 2

    def test_mismatched_checkpoint_rejected(self, workspace, capsys):
        tmp, config = workspace
        foreign = ckpt_io.save(tmp / "cifar.ckpt", ckpt_io.from_model(build_cifar10_model()))
        assert run("--config", config, "finetune", "--init", foreign) == 2
        assert "fingerprint" in capsys.readouterr().err

    def test_corrupted_checkpoint_rejected(self, workspace, capsys):
        tmp, config = workspace
        (tmp / "bad.ckpt").write_bytes(b"SCCK\x01\x00")
        assert run("--config", config, "finetune", "--init", tmp / "bad.ckpt") == 2

    def test_eval(self, workspace, capsys):
        tmp, config = workspace
        assert run("--config", config, "finetune") == 0
        capsys.readouterr()
        assert run("--config", config, "eval", "--checkpoint", tmp / "out" / "scratch.ckpt") == 0
        assert "accuracy=" in capsys.readouterr().out


class TestGradcheckCommand:
    def test_clean_build_passes(self, capsys):
        assert run("gradcheck", "--module", "losses", "--trials", 2) == 0
        report = capsys.readouterr().out
        from spatialcontrast.gradcheck import CASES

        for case in CASES:
            expected = 1 if case.group == "losses" else 0
            assert sum(line.split()[0] == case.name for line in report.splitlines()[1:] if line.strip()) == expected

    def test_broken_gradient_fails(self, monkeypatch, capsys):
        original = ops.Affine.backward

        def wrong(self, g):
            dx, dw, db = original(self, g)
            return dx, 1.01 * dw, db

        monkeypatch.setattr(ops.Affine, "backward", wrong)
        assert run("gradcheck", "--module", "layers", "--trials", 2) == 1
        out = capsys.readouterr().out
        assert "affine" in out.split("gradient check failed for:")[1]


class TestExportCommand:
    def test_filter_grid(self, workspace):
        tmp, config = workspace
        assert run("--config", config, "pretrain") == 0
        target = tmp / "filters.pgm"
        assert run("export-filters", "--checkpoint", tmp / "out" / "pretrain.ckpt", "--out", target, "--scale", 2) == 0
        # 32 MNIST filters of 5x5 at scale 2: six 10-pixel cells and seven separators
        assert read_pnm(target).shape == (67, 67)


class TestArguments:
    def test_bad_set(self, capsys):
        assert run("--set", "noequals", "gradcheck") == 2

    def test_unknown_key(self, capsys):
        assert run("--set", "run.colour=red", "gradcheck") == 2
        assert "[config]" in capsys.readouterr().err

    def test_unknown_command(self, capsys):
        assert run("train") == 2

    def test_help(self, capsys):
        assert run("--help") == 0
