import json

import pytest

from spatialcontrast.config import AUGMENT_DEFAULTS, dump_config, load_config
from spatialcontrast.errors import ConfigError


def ini(tmp_path, text, name="run.ini"):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestPrecedence:
    # (section, key, default, file value, cli value)
    FIELDS = [
        ("run", "seed", 0, "5", "7"),
        ("run", "out_dir", "runs/default", "from_file", "from_cli"),
        ("run", "unlabeled_limit", 0, "100", "50"),
        ("sampler", "patch_rows", 1, "2", "3"),
        ("sampler", "normalize", False, "true", "false"),
        ("pretrain", "batch_size", 32, "16", "8"),
        ("pretrain", "initial_lr", 0.1, "0.05", "0.02"),
        ("pretrain", "max_epochs", 10, "3", "1"),
        ("finetune", "initial_lr", 0.01, "0.005", "0.001"),
        ("finetune", "plateau_patience", 3, "4", "5"),
        ("finetune", "momentum", 0.9, "0.5", "0.0"),
    ]

    @pytest.mark.parametrize("section,key,default,file_value,cli_value", FIELDS)
    def test_default_then_file_then_cli(self, tmp_path, section, key, default, file_value, cli_value):
        assert getattr(getattr(load_config(), section), key) == default
        path = ini(tmp_path, f"[{section}]\n{key} = {file_value}\n")
        from_file = getattr(getattr(load_config(path), section), key)
        assert from_file != default
        from_cli = getattr(getattr(load_config(path, {f"{section}.{key}": cli_value}), section), key)
        assert from_cli != from_file
        assert str(from_cli).lower() == cli_value.lower() or from_cli == type(default)(cli_value)

    def test_untouched_fields_keep_file_values(self, tmp_path):
        path = ini(tmp_path, "[pretrain]\nbatch_size = 16\nmax_epochs = 3\n")
        cfg = load_config(path, {"pretrain.batch_size": "8"})
        assert cfg.pretrain.batch_size == 8 and cfg.pretrain.max_epochs == 3


class TestSeeds:
    def test_run_seed_reaches_every_stream(self):
        cfg = load_config(overrides={"run.seed": "11"})
        assert cfg.sampler.seed == cfg.pretrain.seed == cfg.finetune.seed == 11

    @pytest.mark.parametrize("section", ["sampler", "pretrain", "finetune"])
    def test_section_seed_rejected(self, tmp_path, section):
        with pytest.raises(ConfigError, match="run"):
            load_config(ini(tmp_path, f"[{section}]\nseed = 3\n"))


class TestAugmentDefaults:
    @pytest.mark.parametrize("dataset", sorted(AUGMENT_DEFAULTS))
    def test_by_dataset(self, dataset):
        cfg = load_config(overrides={"run.dataset": dataset, "run.model": dataset})
        assert (cfg.pretrain.max_translate, cfg.pretrain.mirror) == AUGMENT_DEFAULTS[dataset]
        assert (cfg.finetune.max_translate, cfg.finetune.mirror) == AUGMENT_DEFAULTS[dataset]

    def test_explicit_value_wins(self):
        cfg = load_config(overrides={"run.dataset": "cifar10", "run.model": "cifar10", "pretrain.mirror": "false"})
        assert cfg.pretrain.mirror is False and cfg.finetune.mirror is True


class TestErrors:
    @pytest.mark.parametrize(
        "text",
        [
            "[bogus]\nx = 1\n",
            "[run]\ncolour = red\n",
            "[pretrain]\nbatch_size = many\n",
            "[run]\ndataset = imagenet\n",
            "[run]\nlabeled_limit = -1\n",
            "[pretrain]\nlr_decay_factor = 0.5\n",
            "[pretrain]\nphase = finetune\n",
            "[sampler]\npatch_rows = 0\n",
            "[sampler]\nnormalize = maybe\n",
        ],
    )
    def test_rejected(self, tmp_path, text):
        with pytest.raises(ConfigError):
            load_config(ini(tmp_path, text))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="does not exist"):
            load_config(tmp_path / "nope.ini")

    def test_malformed_override(self):
        with pytest.raises(ConfigError):
            load_config(overrides={"seed": "1"})


class TestRoundTrip:
    def test_dump_reloads_identically(self, tmp_path):
        cfg = load_config(overrides={"run.seed": "4", "sampler.patch_cols": "2", "finetune.phase": "scratch"})
        again = load_config(ini(tmp_path, dump_config(cfg)))
        assert again.snapshot() == cfg.snapshot()

    def test_manifest_snapshot_reloads(self, tmp_path):
        cfg = load_config(overrides={"run.seed": "9", "pretrain.max_epochs": "2"})
        path = tmp_path / "m.json"
        path.write_text(json.dumps({"config": cfg.snapshot()}))
        assert load_config(path).snapshot() == cfg.snapshot()
