"""Command-line entry point.

Exit codes: 0 success, 1 numeric failure (NaN/Inf, failed gradient check),
2 input, data or config error.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import checkpoint as ckpt_io
from . import data, export, fetch, gradcheck, manifest
from .config import RunConfig, load_config
from .errors import ConfigError, SCError
from .models import build_model
from .trainer import MetricsLog, evaluate, finetune, pretrain

EXIT_OK, EXIT_NUMERIC, EXIT_INPUT = 0, 1, 2
DATA_ENV = "SC_DATA_DIR"


class Console:
    def __init__(self, quiet: bool):
        self.quiet = quiet

    def __call__(self, *args) -> None:
        if not self.quiet:
            print(*args, flush=True)


# -- dataset plumbing --------------------------------------------------------


def data_dir(cfg: RunConfig) -> Path:
    """``[run] data_dir``, else ``$SC_DATA_DIR/<dataset>``; must exist."""
    if cfg.run.data_dir:
        path = Path(cfg.run.data_dir)
    elif os.environ.get(DATA_ENV):
        path = Path(os.environ[DATA_ENV]) / cfg.run.dataset
    else:
        raise FileNotFoundError(f"no dataset directory: set [run] data_dir or ${DATA_ENV}")
    if not path.is_dir():
        raise FileNotFoundError(f"dataset directory {path} does not exist")
    return path


def source_files(dataset: str, directory: Path) -> list[Path]:
    names = {
        "mnist": [n for pair in data.MNIST_FILES.values() for n in pair],
        "cifar10": data.CIFAR_FILES["train"] + data.CIFAR_FILES["test"],
        "stl10": [n for pair in data.STL_FILES.values() for n in pair if n],
    }[dataset]
    out = []
    for n in names:
        p = directory / n
        gz = p.with_name(n + ".gz")
        if p.exists():
            out.append(p)
        elif gz.exists():
            out.append(gz)
    return out


def _limit(ds: data.Dataset, n: int) -> data.Dataset:
    return ds.take(n or None)


def unlabeled_split(cfg: RunConfig, directory: Path) -> data.Dataset:
    split = "pretrain" if cfg.run.dataset == "stl10" else "train"
    ds = data.LOADERS[cfg.run.dataset](directory, split)
    return _limit(data.Dataset(ds.images, None, split), cfg.run.unlabeled_limit)


def labeled_split(cfg: RunConfig, directory: Path) -> data.Dataset:
    return _limit(data.LOADERS[cfg.run.dataset](directory, "train"), cfg.run.labeled_limit)


def test_split(cfg: RunConfig, directory: Path) -> data.Dataset:
    return _limit(data.LOADERS[cfg.run.dataset](directory, "test"), cfg.run.test_limit)


def _begin(name: str, cfg: RunConfig, inputs: list[Path], say) -> tuple[Path, manifest.RunManifest | None]:
    """Return the manifest path and a fresh manifest, or None when already done."""
    out = Path(cfg.run.out_dir)
    path = out / f"{name}.manifest.json"
    m = manifest.RunManifest(name, cfg.snapshot(), cfg.run.seed, manifest.hash_inputs(inputs))
    if manifest.is_complete(path, m.input_key):
        say(f"{name}: up to date ({path})")
        return path, None
    out.mkdir(parents=True, exist_ok=True)
    return path, m


# -- commands ---------------------------------------------------------------


def cmd_fetch(args, cfg: RunConfig, say) -> int:
    name = args.dataset or cfg.run.dataset
    target = args.dir or cfg.run.data_dir or (Path(os.environ[DATA_ENV]) / name if os.environ.get(DATA_ENV) else None)
    if target is None:
        raise FileNotFoundError(f"no target directory: pass --dir, set [run] data_dir or ${DATA_ENV}")
    files = fetch.fetch(name, target, log=say)
    say(f"{name}: {len(files)} verified files in {target}")
    return EXIT_OK


def cmd_pretrain(args, cfg: RunConfig, say) -> int:
    directory = data_dir(cfg)
    mpath, m = _begin("pretrain", cfg, source_files(cfg.run.dataset, directory), say)
    if m is None:
        return EXIT_OK
    out = Path(cfg.run.out_dir)
    unlabeled = unlabeled_split(cfg, directory)
    model = build_model(cfg.run.model, cfg.run.seed)
    log_path, ck_path = out / "pretrain.metrics", out / "pretrain.ckpt"
    log_path.unlink(missing_ok=True)
    say(f"pretrain: {len(unlabeled)} images, model {model.name} ({model.parameter_count()} parameters)")
    result = pretrain(model, unlabeled, cfg.pretrain, cfg.sampler, MetricsLog(log_path), ck_path)
    for row in result.state.history:
        say(f"  epoch {row['epoch']}: lr {row['lr']:g} sc_loss {row['train_loss']:.6f}")
    for p in (ck_path, log_path):
        m.record_output(p)
    m.save(mpath)
    say(f"pretrain: wrote {ck_path}")
    return EXIT_OK


def cmd_finetune(args, cfg: RunConfig, say) -> int:
    directory = data_dir(cfg)
    inputs = source_files(cfg.run.dataset, directory)
    inputs += [Path(p) for p in (args.init, args.resume) if p]
    tag = "finetune" if args.init or args.resume else "scratch"
    cfg.finetune.phase = "finetune" if tag == "finetune" else "scratch"
    mpath, m = _begin(tag, cfg, inputs, say)
    if m is None:
        return EXIT_OK
    model = build_model(cfg.run.model, cfg.run.seed)
    init = ckpt_io.load(args.init) if args.init else None
    resume = ckpt_io.load(args.resume) if args.resume else None
    for ck in (init, resume):
        if ck is not None:
            ckpt_io.check_fingerprint(model, ck)
    out = Path(cfg.run.out_dir)
    log_path, ck_path = out / f"{tag}.metrics", out / f"{tag}.ckpt"
    if resume is None:
        log_path.unlink(missing_ok=True)
    labeled, test = labeled_split(cfg, directory), test_split(cfg, directory)
    say(f"{tag}: {len(labeled)} labeled, {len(test)} test images")
    result = finetune(model, labeled, cfg.finetune, init, test, MetricsLog(log_path), ck_path, resume)
    for p in (ck_path, log_path):
        m.record_output(p)
    m.save(mpath)
    say(f"{tag}: test accuracy {result.test_accuracy:.4f} (error {100 * (1 - result.test_accuracy):.2f}%)")
    return EXIT_OK


def cmd_eval(args, cfg: RunConfig, say) -> int:
    ck = ckpt_io.load(args.checkpoint)
    model = build_model(ck.meta.get("model", cfg.run.model), cfg.run.seed)
    ckpt_io.restore(model, ck)
    ds = _limit(data.LOADERS[cfg.run.dataset](data_dir(cfg), args.split), cfg.run.test_limit)
    acc, loss = evaluate(model, ds)
    print(f"split={args.split} n={len(ds)} accuracy={acc!r} loss={loss!r}")
    return EXIT_OK


def cmd_gradcheck(args, cfg: RunConfig, say) -> int:
    results = gradcheck.run_suite(args.module, trials=args.trials, seed=cfg.run.seed)
    print(gradcheck.format_report(results))
    failed = [r.name for r in results if not r.ok]
    if failed:
        print(f"gradient check failed for: {', '.join(failed)}")
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_export_filters(args, cfg: RunConfig, say) -> int:
    ck = ckpt_io.load(args.checkpoint)
    grid = export.filter_grid(export.first_conv_weight(ck.params), scale=args.scale)
    path = export.write_pnm(args.out, grid)
    say(f"export-filters: wrote {path} ({grid.shape[1]}x{grid.shape[0]})")
    return EXIT_OK


COMMANDS = {
    "fetch": cmd_fetch,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "export-filters": cmd_export_filters,
}


# -- argument parsing -------------------------------------------------------


def _globals(suppress: bool) -> argparse.ArgumentParser:
    # the same flags work before or after the subcommand
    d = {"default": argparse.SUPPRESS} if suppress else {}
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="INI config file (or a run manifest)", **({"default": None} | d))
    p.add_argument("--seed", type=int, help="overrides [run] seed", **({"default": None} | d))
    p.add_argument("--out-dir", help="overrides [run] out_dir", **({"default": None} | d))
    p.add_argument("--quiet", action="store_true", help="only print results and errors", **({"default": False} | d))
    p.add_argument(
        "--set", action="append", metavar="SECTION.KEY=VALUE", help="override any config field (repeatable)", **({"default": []} | d)
    )
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spatialcontrast", description="Spatial-contrasting pretraining toolkit", parents=[_globals(False)])
    sub = parser.add_subparsers(dest="command", required=True)
    common = [_globals(True)]

    p = sub.add_parser("fetch", parents=common, help="download and verify a dataset")
    p.add_argument("dataset", nargs="?", choices=sorted(fetch.SOURCES))
    p.add_argument("--dir", help="target directory")

    sub.add_parser("pretrain", parents=common, help="spatial-contrasting pretraining")

    p = sub.add_parser("finetune", parents=common, help="supervised training, optionally from a pretrained trunk")
    p.add_argument("--init", help="pretraining checkpoint to initialize the trunk from")
    p.add_argument("--resume", help="continue a run from its own checkpoint")

    p = sub.add_parser("eval", parents=common, help="accuracy of a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=["train", "test"])

    p = sub.add_parser("gradcheck", parents=common, help="finite-difference gradient suite")
    p.add_argument("--module", default="all", choices=["all", "losses", "layers"])
    p.add_argument("--trials", type=int, default=20)

    p = sub.add_parser("export-filters", parents=common, help="first-layer filters as a PGM/PPM grid")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="output .pgm/.ppm path")
    p.add_argument("--scale", type=int, default=1, help="pixel repetition factor")
    return parser


def resolve_config(args) -> RunConfig:
    overrides = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set {item!r} must look like section.key=value")
        overrides[key.strip()] = value.strip()
    if args.seed is not None:
        overrides["run.seed"] = str(args.seed)
    if args.out_dir is not None:
        overrides["run.out_dir"] = args.out_dir
    return load_config(args.config, overrides)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    say = Console(args.quiet)
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](args, cfg, say)
    except SCError as exc:
        print(f"error [{exc.category}]: {exc}", file=sys.stderr)
        return EXIT_NUMERIC if exc.category == "numeric" else EXIT_INPUT
    except (FileNotFoundError, NotADirectoryError) as exc:
        print(f"error [data]: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
