"""Run configuration: INI sections with typed fields.

Precedence is CLI flag > config file > built-in default, resolved field by
field. ``docs/config.md`` lists every key.

``[run] seed`` is the master seed: model init, the sampler and both training
phases all derive their streams from it.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .sampler import SampleConfig
from .trainer import TrainConfig


@dataclass
class RunSection:
    model: str = "mnist"
    dataset: str = "mnist"
    data_dir: str = ""
    out_dir: str = "runs/default"
    seed: int = 0
    unlabeled_limit: int = 0  # 0 means "use every image"
    labeled_limit: int = 0
    test_limit: int = 0


@dataclass
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    sampler: SampleConfig = field(default_factory=SampleConfig)
    pretrain: TrainConfig = field(default_factory=lambda: TrainConfig.for_phase("pretrain"))
    finetune: TrainConfig = field(default_factory=lambda: TrainConfig.for_phase("finetune"))

    def snapshot(self) -> dict:
        return {name: dataclasses.asdict(getattr(self, name)) for name in SECTIONS}

    def digest_source(self) -> str:
        return json.dumps(self.snapshot(), sort_keys=True)


SECTIONS = ("run", "sampler", "pretrain", "finetune")
DATASETS = ("mnist", "cifar10", "stl10")
# (max_translate, mirror) when the config leaves them unset; digits are
# chiral, so MNIST gets no mirroring
AUGMENT_DEFAULTS = {"mnist": (2, False), "cifar10": (2, True), "stl10": (4, True)}
_BOOL = {"1": True, "true": True, "yes": True, "on": True, "0": False, "false": False, "no": False, "off": False}


def _coerce(section: str, key: str, raw: str, current):
    try:
        if isinstance(current, bool):
            return _BOOL[raw.strip().lower()]
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        return raw.strip()
    except (KeyError, ValueError):
        raise ConfigError(f"[{section}] {key} = {raw!r}: expected {type(current).__name__}") from None


def _apply(cfg: RunConfig, section: str, key: str, raw: str, explicit: set) -> None:
    if section not in SECTIONS:
        raise ConfigError(f"unknown section [{section}]; expected one of {', '.join(SECTIONS)}")
    obj = getattr(cfg, section)
    names = {f.name for f in dataclasses.fields(obj)}
    if key not in names:
        raise ConfigError(f"unknown key {key!r} in [{section}]; expected one of {', '.join(sorted(names))}")
    if section != "run" and key == "seed":
        raise ConfigError(f"[{section}] seed is derived from [run] seed; set that instead")
    setattr(obj, key, _coerce(section, key, raw, getattr(obj, key)))
    explicit.add((section, key))


def _validate(cfg: RunConfig, explicit: set) -> RunConfig:
    if cfg.run.dataset not in DATASETS:
        raise ConfigError(f"[run] dataset {cfg.run.dataset!r} is not one of {', '.join(DATASETS)}")
    if cfg.run.model not in DATASETS:
        raise ConfigError(f"[run] model {cfg.run.model!r} is not one of {', '.join(DATASETS)}")
    for name in ("unlabeled_limit", "labeled_limit", "test_limit"):
        if getattr(cfg.run, name) < 0:
            raise ConfigError(f"[run] {name} must be >= 0")
    translate, mirror = AUGMENT_DEFAULTS[cfg.run.dataset]
    for phase in ("pretrain", "finetune"):
        tc = getattr(cfg, phase)
        if (phase, "max_translate") not in explicit:
            tc.max_translate = translate
        if (phase, "mirror") not in explicit:
            tc.mirror = mirror
        tc.seed = cfg.run.seed
    cfg.sampler.seed = cfg.run.seed
    # dataclass __post_init__ checks run again on the final values
    try:
        cfg.sampler = SampleConfig(**dataclasses.asdict(cfg.sampler))
        cfg.pretrain = TrainConfig(**dataclasses.asdict(cfg.pretrain))
        cfg.finetune = TrainConfig(**dataclasses.asdict(cfg.finetune))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if cfg.pretrain.phase != "pretrain":
        raise ConfigError("[pretrain] phase must stay 'pretrain'")
    if cfg.finetune.phase == "pretrain":
        raise ConfigError("[finetune] phase must be 'finetune' or 'scratch'")
    return cfg


def load_config(path: str | Path | None = None, overrides: dict[str, str] | None = None) -> RunConfig:
    """Defaults, then the file (INI, or a manifest's JSON snapshot), then ``overrides``.

    ``overrides`` maps ``"section.key"`` to raw string values.
    """
    cfg = RunConfig()
    explicit: set = set()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        if path.suffix == ".json":
            try:
                snap = json.loads(path.read_text()).get("config", {})
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from None
            for section, values in snap.items():
                for key, value in values.items():
                    if section != "run" and key == "seed":
                        continue
                    raw = value if isinstance(value, str) else json.dumps(value)
                    _apply(cfg, section, key, raw, explicit)
        else:
            parser = configparser.ConfigParser()
            try:
                parser.read(path)
            except configparser.Error as exc:
                raise ConfigError(f"{path}: {exc}") from None
            for section in parser.sections():
                for key, raw in parser.items(section):
                    _apply(cfg, section, key, raw, explicit)
    for dotted, raw in (overrides or {}).items():
        section, _, key = dotted.partition(".")
        if not key:
            raise ConfigError(f"override {dotted!r} must look like section.key")
        _apply(cfg, section, key, raw, explicit)
    return _validate(cfg, explicit)


def dump_config(cfg: RunConfig) -> str:
    parser = configparser.ConfigParser()
    for name, values in cfg.snapshot().items():
        if name != "run":
            values = {k: v for k, v in values.items() if k != "seed"}
        parser[name] = {k: str(v).lower() if isinstance(v, bool) else str(v) for k, v in values.items()}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()
