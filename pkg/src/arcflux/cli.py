"""Operator surface: generate, train, eval, sweep, and bench subcommands.

One declarative JSON config drives every command; flags override file
values.  Unknown keys anywhere in the config are an error so a typo
cannot silently fall back to a default.

Exit codes: 0 success, 2 configuration errors, 3 data/file-format
errors, 4 numerical failures (non-finite loss).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .bench import bench_inference, stats_row, stats_text, STATS_ROW_HEADER
from .data import (
    GenConfig,
    generate,
    load_dataset,
    save_dataset,
    split,
    windows_to_arrays,
)
from .errors import ArcfluxError, ConfigError, DataFormatError, NumericalError
from .fas import amplify_batch
from .metrics import SWEEP_ROW_HEADER, confusion, report, report_text, sweep_row
from .model import (
    HEAD_KINDS,
    ModelConfig,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from .training import TrainConfig, evaluate, fit, history_table

__all__ = ["RunConfig", "PathsConfig", "SweepConfig", "main"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4

_SPLIT_NAMES = ("train", "val", "test")


@dataclass(frozen=True)
class PathsConfig:
    dataset_dir: str = "data"
    checkpoint: str = "runs/model.ckpt"
    report_dir: str = "reports"


@dataclass(frozen=True)
class SweepConfig:
    axis: str = "k"
    k_grid: tuple = (128, 256, 512)
    blocks_grid: tuple = (2, 4, 8, 16)
    head_grid: tuple = HEAD_KINDS
    out: str = "sweep.tsv"

    def __post_init__(self):
        if self.axis not in ("k", "blocks", "head"):
            raise ConfigError("sweep axis must be one of k, blocks, head")
        object.__setattr__(self, "k_grid", tuple(self.k_grid))
        object.__setattr__(self, "blocks_grid", tuple(self.blocks_grid))
        object.__setattr__(self, "head_grid", tuple(self.head_grid))

    def cells(self) -> list[tuple[str, object]]:
        grid = {"k": self.k_grid, "blocks": self.blocks_grid, "head": self.head_grid}[self.axis]
        return [(f"{self.axis}={value}", value) for value in grid]


@dataclass(frozen=True)
class RunConfig:
    gen: GenConfig = field(default_factory=lambda: GenConfig(n_per_class=2000, window_len=256))
    model: ModelConfig = field(default_factory=lambda: ModelConfig(k_fas=32))
    train: TrainConfig = field(default_factory=TrainConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    apply_fas: bool = True
    split_ratio: float = 0.7


_SECTIONS = {
    "gen": GenConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "paths": PathsConfig,
    "sweep": SweepConfig,
}
_TOP_KEYS = set(_SECTIONS) | {"apply_fas", "split_ratio"}


def _build_section(name: str, cls, given: dict, defaults):
    allowed = {f.name for f in fields(cls)}
    for key in given:
        if key not in allowed:
            raise ConfigError(f"unknown key '{key}' in config section '{name}'")
    base = {f.name: getattr(defaults, f.name) for f in fields(cls)}
    base.update(given)
    return cls(**base)


def load_run_config(path: str | None) -> RunConfig:
    """Parse the declarative config document; unknown keys are errors."""
    doc: dict = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}")
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    for key in doc:
        if key not in _TOP_KEYS:
            raise ConfigError(f"unknown key '{key}' in config")
    default = RunConfig()
    sections = {}
    for name, cls in _SECTIONS.items():
        given = doc.get(name, {})
        if not isinstance(given, dict):
            raise ConfigError(f"config section '{name}' must be an object")
        sections[name] = _build_section(name, cls, given, getattr(default, name))
    apply_fas = doc.get("apply_fas", default.apply_fas)
    split_ratio = doc.get("split_ratio", default.split_ratio)
    if not isinstance(apply_fas, bool):
        raise ConfigError("apply_fas must be true or false")
    return RunConfig(apply_fas=apply_fas, split_ratio=float(split_ratio), **sections)


def _override(cfg, **updates):
    updates = {k: v for k, v in updates.items() if v is not None}
    return replace(cfg, **updates) if updates else cfg


def _apply_flags(run: RunConfig, args) -> RunConfig:
    gen = _override(
        run.gen,
        seed=getattr(args, "seed", None),
        n_per_class=getattr(args, "n_per_class", None),
        window_len=getattr(args, "window_len", None),
    )
    train = _override(
        run.train,
        seed=getattr(args, "seed", None),
        epochs=getattr(args, "epochs", None),
        batch_size=getattr(args, "batch_size", None),
        lr=getattr(args, "lr", None),
        lr_schedule=getattr(args, "lr_schedule", None),
        dtype=getattr(args, "dtype", None),
    )
    model = _override(
        run.model,
        k_fas=getattr(args, "k", None),
        n_blocks=getattr(args, "blocks", None),
        head_kind=getattr(args, "head", None),
    )
    paths = _override(
        run.paths,
        dataset_dir=getattr(args, "dataset_dir", None),
        checkpoint=getattr(args, "checkpoint", None),
        report_dir=getattr(args, "report_dir", None),
    )
    sweep = _override(
        run.sweep,
        axis=getattr(args, "axis", None),
        out=getattr(args, "out", None),
    )
    apply_fas = run.apply_fas
    if getattr(args, "raw", False):
        apply_fas = False
    return RunConfig(
        gen=gen, model=model, train=train, paths=paths, sweep=sweep,
        apply_fas=apply_fas, split_ratio=run.split_ratio,
    )


# ---------------------------------------------------------------------------
# dataset plumbing shared by train/eval/sweep


def _dataset_paths(dataset_dir: str) -> dict[str, Path]:
    root = Path(dataset_dir)
    return {name: root / f"{name}.ds" for name in _SPLIT_NAMES}


def _load_split_arrays(dataset_dir: str, name: str):
    manifest, windows = load_dataset(_dataset_paths(dataset_dir)[name])
    x, y = windows_to_arrays(windows)
    return manifest, x, y


def _featurize(x: np.ndarray, run: RunConfig, model_cfg: ModelConfig) -> np.ndarray:
    if run.apply_fas:
        return amplify_batch(x, model_cfg.k_fas)
    return x


def _model_config_for(run: RunConfig, window_len: int) -> ModelConfig:
    if run.apply_fas:
        k = run.model.k_fas
        if 2 * k > window_len:
            raise ConfigError(
                f"model K={k} needs windows of at least {2 * k} samples, "
                f"dataset has {window_len}"
            )
        return run.model
    if window_len % 2:
        raise ConfigError("raw-window mode needs an even window length")
    return replace(run.model, k_fas=window_len // 2)


def _summary_path(checkpoint: str) -> Path:
    return Path(checkpoint).with_suffix(".summary.json")


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate(run: RunConfig, out=None) -> int:
    out = out if out is not None else sys.stdout
    windows = generate(run.gen)
    ds = split(windows, ratio_train=run.split_ratio, seed=run.gen.seed)
    root = Path(run.paths.dataset_dir)
    root.mkdir(parents=True, exist_ok=True)
    paths = _dataset_paths(run.paths.dataset_dir)
    for name in _SPLIT_NAMES:
        manifest = save_dataset(
            paths[name], getattr(ds, name), split_name=name, generator=run.gen
        )
        counts = ", ".join(f"class {k}: {v}" for k, v in sorted(manifest.counts.items()))
        print(
            f"{name}: {manifest.n_windows()} windows ({counts})  "
            f"sha256 {manifest.checksum[:16]}...  -> {paths[name]}",
            file=out,
        )
    return EXIT_OK


def cmd_train(run: RunConfig, force: bool = False, out=None) -> int:
    out = out if out is not None else sys.stdout
    ckpt = Path(run.paths.checkpoint)
    if ckpt.exists() and not force:
        raise ConfigError(
            f"checkpoint {ckpt} already exists; pass --force to overwrite"
        )
    _, x_train, y_train = _load_split_arrays(run.paths.dataset_dir, "train")
    _, x_val, y_val = _load_split_arrays(run.paths.dataset_dir, "val")
    model_cfg = _model_config_for(run, x_train.shape[1])
    f_train = _featurize(x_train, run, model_cfg)
    f_val = _featurize(x_val, run, model_cfg)
    params = init_params(model_cfg, run.train.seed)
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    state = fit(
        params, f_train, y_train, f_val, y_val, run.train,
        checkpoint_path=ckpt, log=lambda line: print(line, file=out),
    )
    report_dir = Path(run.paths.report_dir)
    report_dir.mkdir(parents=True, exist_ok=True)
    (report_dir / "history.tsv").write_text(history_table(state.history))
    _, x_test, y_test = _load_split_arrays(run.paths.dataset_dir, "test")
    feats_test = _featurize(x_test, run, model_cfg)
    # same prediction path as cmd_eval so the recorded accuracy reproduces
    test_rep = report(confusion(_predict(state.best_params, feats_test), y_test))
    test_loss, _ = evaluate(state.best_params, feats_test, y_test, run.train.batch_size)
    test_acc = test_rep.accuracy
    summary = {
        "apply_fas": run.apply_fas,
        "best_epoch": state.best_epoch,
        "best_val_acc": state.best_val_acc,
        "best_val_loss": state.best_val_loss,
        "epochs": run.train.epochs,
        "model": model_cfg.to_dict(),
        "test_accuracy": test_acc,
        "test_loss": test_loss,
        "train": run.train.to_dict(),
    }
    _summary_path(run.paths.checkpoint).write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n"
    )
    print(
        f"best epoch {state.best_epoch}: val_acc {state.best_val_acc:.4f}  "
        f"test_acc {test_acc:.4f}  checkpoint -> {ckpt}",
        file=out,
    )
    return EXIT_OK


def _predict(params, feats: np.ndarray, batch_size: int = 256) -> np.ndarray:
    from . import autodiff as ad
    from .model import forward_batch

    preds = np.empty(feats.shape[0], dtype=np.int64)
    with ad.no_grad():
        for lo in range(0, feats.shape[0], batch_size):
            logits = forward_batch(params, feats[lo:lo + batch_size])
            preds[lo:lo + batch_size] = np.argmax(logits.data, axis=1)
    return preds


def cmd_eval(run: RunConfig, with_latency: bool = False, out=None) -> int:
    out = out if out is not None else sys.stdout
    params = load_checkpoint(run.paths.checkpoint)
    model_cfg = params.config
    summary_path = _summary_path(run.paths.checkpoint)
    apply_fas = run.apply_fas
    if summary_path.exists():
        apply_fas = json.loads(summary_path.read_text()).get("apply_fas", apply_fas)
    manifest, x_test, y_test = _load_split_arrays(run.paths.dataset_dir, "test")
    if apply_fas:
        if 2 * model_cfg.k_fas > manifest.window_len:
            raise ConfigError(
                f"model K={model_cfg.k_fas} needs windows of at least "
                f"{2 * model_cfg.k_fas} samples, dataset has {manifest.window_len}"
            )
        feats = amplify_batch(x_test, model_cfg.k_fas)
    else:
        if manifest.window_len != model_cfg.seq_len:
            raise ConfigError(
                f"raw-mode model expects length {model_cfg.seq_len}, "
                f"dataset windows have {manifest.window_len}"
            )
        feats = x_test
    preds = _predict(params, feats)
    cm = confusion(preds, y_test)
    latency = None
    if with_latency:
        latency = bench_inference(params, iters=200, warmup=20, window=x_test[0])
    rep = report(cm, latency=latency)
    report_dir = Path(run.paths.report_dir)
    report_dir.mkdir(parents=True, exist_ok=True)
    (report_dir / "eval.json").write_text(report_text(rep))
    print("confusion matrix (rows true normal/arc, cols predicted):", file=out)
    print(f"  [[{cm.tn:6d} {cm.fp:6d}]", file=out)
    print(f"   [{cm.fn:6d} {cm.tp:6d}]]", file=out)
    print(
        f"accuracy {rep.accuracy:.6f}  precision {rep.precision:.6f}  "
        f"recall {rep.recall:.6f}  f1 {rep.f1:.6f}",
        file=out,
    )
    if summary_path.exists():
        recorded = json.loads(summary_path.read_text()).get("test_accuracy")
        if recorded is not None and recorded != rep.accuracy:
            print(
                f"note: accuracy differs from the one recorded at train time "
                f"({recorded!r}); dataset or checkpoint changed",
                file=out,
            )
    return EXIT_OK


def cmd_sweep(run: RunConfig, out=None) -> int:
    """Train/eval once per grid cell; completed cells are skipped."""
    out = out if out is not None else sys.stdout
    report_dir = Path(run.paths.report_dir)
    cell_dir = report_dir / "sweep_cells"
    cell_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for label, value in run.sweep.cells():
        cell_file = cell_dir / f"{label}.json"
        if cell_file.exists():
            doc = json.loads(cell_file.read_text())
            print(f"{label}: already done, skipping", file=out)
        else:
            cell_run = run
            if run.sweep.axis == "k":
                cell_run = replace(run, model=replace(run.model, k_fas=int(value)))
            elif run.sweep.axis == "blocks":
                cell_run = replace(run, model=replace(run.model, n_blocks=int(value)))
            else:
                cell_run = replace(run, model=replace(run.model, head_kind=str(value)))
            doc = _run_sweep_cell(cell_run, label)
            cell_file.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
            print(
                f"{label}: acc {doc['accuracy']:.4f}  p50 {doc['p50_ms']:.3f} ms",
                file=out,
            )
        rows.append(doc)
    table = [SWEEP_ROW_HEADER]
    for doc in rows:
        table.append(
            f"{doc['cell']}\t{doc['accuracy']:.6f}\t{doc['precision']:.6f}"
            f"\t{doc['recall']:.6f}\t{doc['f1']:.6f}\t{doc['p50_ms']:.4f}"
        )
    out_path = report_dir / run.sweep.out
    out_path.write_text("\n".join(table) + "\n")
    print(f"sweep table -> {out_path}", file=out)
    return EXIT_OK


def _run_sweep_cell(run: RunConfig, label: str) -> dict:
    _, x_train, y_train = _load_split_arrays(run.paths.dataset_dir, "train")
    _, x_val, y_val = _load_split_arrays(run.paths.dataset_dir, "val")
    _, x_test, y_test = _load_split_arrays(run.paths.dataset_dir, "test")
    model_cfg = _model_config_for(run, x_train.shape[1])
    params = init_params(model_cfg, run.train.seed)
    state = fit(
        params,
        _featurize(x_train, run, model_cfg), y_train,
        _featurize(x_val, run, model_cfg), y_val,
        run.train,
    )
    feats_test = _featurize(x_test, run, model_cfg)
    preds = _predict(state.best_params, feats_test)
    rep = report(confusion(preds, y_test))
    stats = bench_inference(state.best_params, iters=200, warmup=20, window=x_test[0])
    return {
        "cell": label,
        "accuracy": rep.accuracy,
        "precision": rep.precision,
        "recall": rep.recall,
        "f1": rep.f1,
        "p50_ms": stats.p50,
        "best_epoch": state.best_epoch,
        "best_val_acc": state.best_val_acc,
    }


def cmd_bench(
    run: RunConfig,
    iters: int,
    warmup: int,
    float32: bool,
    out=None,
) -> int:
    out = out if out is not None else sys.stdout
    ckpt = Path(run.paths.checkpoint)
    if ckpt.exists():
        params = load_checkpoint(ckpt)
        source = str(ckpt)
    else:
        params = init_params(run.model, run.train.seed)
        source = "fresh init (no checkpoint found)"
    stats = bench_inference(params, iters=iters, warmup=warmup, float32=float32)
    report_dir = Path(run.paths.report_dir)
    report_dir.mkdir(parents=True, exist_ok=True)
    (report_dir / "latency.json").write_text(stats_text(stats))
    (report_dir / "latency.tsv").write_text(
        STATS_ROW_HEADER + "\n" + stats_row(f"blocks={params.config.n_blocks}", stats) + "\n"
    )
    print(f"model: {source}", file=out)
    print(
        f"p50 {stats.p50:.3f} ms  p95 {stats.p95:.3f} ms  mean {stats.mean:.3f} ms  "
        f"({stats.n_iters} iters, {stats.dtype}, {stats.threads} thread)",
        file=out,
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing and dispatch


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="arcflux",
        description="Selective state-space classifier for arc-fault-like current windows.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="declarative JSON config file")
        p.add_argument("--seed", type=int, help="override generator and training seeds")
        p.add_argument("--dataset-dir", help="dataset directory")
        p.add_argument("--report-dir", help="directory for reports and tables")

    g = sub.add_parser("generate", help="create a synthetic labeled dataset")
    common(g)
    g.add_argument("--n-per-class", type=int, help="windows per class")
    g.add_argument("--window-len", type=int, help="samples per window")

    t = sub.add_parser("train", help="train a classifier on a generated dataset")
    common(t)
    t.add_argument("--checkpoint", help="checkpoint output path")
    t.add_argument("--force", action="store_true", help="overwrite an existing checkpoint")
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int, dest="batch_size")
    t.add_argument("--lr", type=float)
    t.add_argument("--lr-schedule", dest="lr_schedule", choices=("cosine-decay", "constant"))
    t.add_argument("--dtype", choices=("float64", "float32"))
    t.add_argument("--k", type=int, help="FAS K (model sequence length is 2K)")
    t.add_argument("--blocks", type=int, help="number of model blocks")
    t.add_argument("--head", choices=HEAD_KINDS, help="classification head variant")
    t.add_argument("--raw", action="store_true", help="feed raw windows, skip FAS")

    e = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    common(e)
    e.add_argument("--checkpoint", help="checkpoint to evaluate")
    e.add_argument("--raw", action="store_true", help="dataset feeds the model raw")
    e.add_argument("--with-latency", action="store_true", help="attach latency stats")

    s = sub.add_parser("sweep", help="train/eval across an ablation grid")
    common(s)
    s.add_argument("--axis", choices=("k", "blocks", "head"))
    s.add_argument("--out", help="sweep table filename (within report dir)")
    s.add_argument("--epochs", type=int)
    s.add_argument("--batch-size", type=int, dest="batch_size")
    s.add_argument("--lr", type=float)
    s.add_argument("--dtype", choices=("float64", "float32"))

    b = sub.add_parser("bench", help="measure single-window inference latency")
    common(b)
    b.add_argument("--checkpoint", help="checkpoint to time (fresh init if absent)")
    b.add_argument("--iters", type=int, default=1000)
    b.add_argument("--warmup", type=int, default=100)
    b.add_argument("--float32", action="store_true", help="benchmark-mode 32-bit arithmetic")
    b.add_argument("--blocks", type=int, help="blocks for the fresh-init model")
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        run = _apply_flags(load_run_config(args.config), args)
        if args.command == "generate":
            return cmd_generate(run)
        if args.command == "train":
            return cmd_train(run, force=args.force)
        if args.command == "eval":
            return cmd_eval(run, with_latency=args.with_latency)
        if args.command == "sweep":
            return cmd_sweep(run)
        return cmd_bench(run, iters=args.iters, warmup=args.warmup, float32=args.float32)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataFormatError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ArcfluxError as exc:                      # pragma: no cover
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
