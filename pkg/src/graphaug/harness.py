"""Multi-seed supervised experiments, benchmark grids and result tables.

A cell of the benchmark table is one (model, augmentation, dataset)
triple trained over ``num_seeds`` consecutive seeds. Test accuracy (in
percent) at the best-validation checkpoint is the per-seed sample; cells
report ``mean±std`` with the sample standard deviation (``n - 1``).
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import augment as aug
from .errors import ConfigError, IoError, ValidationError
from .graph import load_graph, synthetic_sbm
from .models import ModelConfig, TrainConfig, evaluate, train_supervised
from .tensor import save_params

__all__ = [
    "DatasetSpec", "ModelSpec", "ExperimentConfig", "ExperimentReport", "GridConfig",
    "parse_config", "parse_grid", "run_experiment", "benchmark_grid", "emit_table",
    "render_table", "aggregate",
]

_SYNTH_DEFAULTS = {"n": 200, "classes": 2, "p_in": 0.1, "p_out": 0.01,
                   "feat_dim": 8, "noise": 0.5, "seed": 0}
_DEFAULT_HIDDEN = {"GCN": [16], "GraphSAGE": [16], "GAT": [8], "GIN": [32]}


def _check_type(value, default, key):
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, list):
        ok = isinstance(value, list)
    else:
        ok = True
    if not ok:
        raise ConfigError(f"expected {type(default).__name__}, got {type(value).__name__}", key)
    return float(value) if isinstance(default, float) else value


def _strict(obj, defaults, prefix):
    """Merge ``obj`` over ``defaults`` rejecting unknown keys and type mismatches."""
    if not isinstance(obj, dict):
        raise ConfigError("expected an object", prefix or None)
    out = dict(defaults)
    for k, v in obj.items():
        key = f"{prefix}.{k}" if prefix else k
        if k not in defaults:
            raise ConfigError("unknown key", key)
        out[k] = v if defaults[k] is None else _check_type(v, defaults[k], key)
    return out


@dataclass(frozen=True)
class DatasetSpec:
    """A graph file or synthetic SBM parameters."""

    name: str = "sbm"
    path: str | None = None
    format: str | None = None
    features_path: str | None = None
    expected: str | None = None
    synthetic: dict | None = None

    @classmethod
    def from_dict(cls, obj, prefix="dataset"):
        d = _strict(obj, {f.name: None for f in dataclasses.fields(cls)}, prefix)
        if d["name"] is None:
            d["name"] = "sbm" if d["path"] is None else Path(d["path"]).stem
        if d["path"] is None:
            d["synthetic"] = _strict(d["synthetic"] or {}, _SYNTH_DEFAULTS, f"{prefix}.synthetic")
        elif d["synthetic"] is not None:
            raise ConfigError("give either 'path' or 'synthetic', not both", prefix)
        elif not Path(d["path"]).exists():
            raise ConfigError(f"dataset file {d['path']!r} not found", f"{prefix}.path")
        if d["format"] not in (None, "graph-json", "edge-list+csv"):
            raise ConfigError(f"unknown format {d['format']!r}", f"{prefix}.format")
        return cls(**d)

    def to_dict(self):
        return dataclasses.asdict(self)

    def load(self):
        if self.path is None:
            return synthetic_sbm(**self.synthetic)
        return load_graph(self.path, self.format, features_path=self.features_path,
                          expected=self.expected)


@dataclass(frozen=True)
class ModelSpec:
    """Architecture knobs; layer widths are completed from the dataset at run time."""

    arch: str = "GCN"
    hidden: tuple = ()
    sage_k: int = 10
    sage_aggregator: str = "mean"
    gat_heads: int = 8
    gat_out_heads: int = 1
    gat_slope: float = 0.2
    gin_eps: float = 0.0
    dropout: float = 0.5

    @classmethod
    def from_dict(cls, obj, prefix="model"):
        defaults = {f.name: f.default for f in dataclasses.fields(cls)}
        defaults["hidden"] = []
        d = _strict(obj, defaults, prefix)
        if d["arch"] not in _DEFAULT_HIDDEN:
            raise ConfigError(f"unknown architecture {d['arch']!r}", f"{prefix}.arch")
        if not all(isinstance(h, int) and h > 0 for h in d["hidden"]):
            raise ConfigError("hidden widths must be positive integers", f"{prefix}.hidden")
        d["hidden"] = tuple(d["hidden"] or _DEFAULT_HIDDEN[d["arch"]])
        return cls(**d)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    def build(self, num_features, num_classes):
        kw = self.to_dict()
        kw.pop("hidden")
        return ModelConfig(layer_dims=[num_features, *self.hidden, num_classes], **kw)


def _train_from_dict(obj, prefix="train"):
    defaults = {f.name: f.default for f in dataclasses.fields(TrainConfig)}
    try:
        return TrainConfig(**_strict(obj, defaults, prefix))
    except ValidationError as exc:
        raise ConfigError(str(exc), prefix) from exc


def _aug_from_dict(obj, prefix="augmentation"):
    try:
        return aug.AugmenterSpec.from_dict(obj)
    except ValidationError as exc:
        raise ConfigError(str(exc), prefix) from exc


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSpec
    model: ModelSpec
    augmentation: aug.AugmenterSpec = aug.AugmenterSpec("identity")
    train: TrainConfig = field(default_factory=TrainConfig)
    num_seeds: int = 10
    base_seed: int = 0
    output: str = "out"

    def to_dict(self):
        return {
            "dataset": self.dataset.to_dict(),
            "model": self.model.to_dict(),
            "augmentation": self.augmentation.to_dict(),
            "train": dataclasses.asdict(self.train),
            "num_seeds": self.num_seeds,
            "base_seed": self.base_seed,
            "output": self.output,
        }

    @classmethod
    def from_dict(cls, obj):
        top = {"dataset": None, "model": None, "augmentation": None, "train": None,
               "num_seeds": 10, "base_seed": 0, "output": "out"}
        d = _strict(obj, top, "")
        if d["dataset"] is None:
            raise ConfigError("missing required key", "dataset")
        if d["num_seeds"] < 1:
            raise ConfigError("must be >= 1", "num_seeds")
        return cls(
            dataset=DatasetSpec.from_dict(d["dataset"]),
            model=ModelSpec.from_dict(d["model"] or {}),
            augmentation=_aug_from_dict(d["augmentation"] or {"kind": "identity"}),
            train=_train_from_dict(d["train"] or {}),
            num_seeds=d["num_seeds"],
            base_seed=d["base_seed"],
            output=d["output"],
        )

    def config_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _read_json(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno}: {exc.msg}") from exc


def parse_config(path_or_obj):
    """Strictly parse an experiment config (JSON file path or already-loaded dict)."""
    obj = path_or_obj if isinstance(path_or_obj, dict) else _read_json(path_or_obj)
    return ExperimentConfig.from_dict(obj)


# ------------------------------------------------------------------ reports

def aggregate(samples):
    """Mean and sample standard deviation (``0.0`` for a single sample)."""
    a = np.asarray(samples, dtype=np.float64)
    if a.size == 0:
        return float("nan"), float("nan")
    return float(a.mean()), float(a.std(ddof=1)) if a.size > 1 else 0.0


@dataclass
class ExperimentReport:
    model: str
    method: str
    dataset: str
    seeds: list
    samples: list
    f1_samples: list
    mean: float
    std: float
    partial: bool = False
    errors: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def to_dict(self):
        return dataclasses.asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, obj):
        return cls(**obj)

    @property
    def cell(self):
        return f"{self.mean:.2f}±{self.std:.2f}"

    @property
    def slug(self):
        return f"{self.model}_{self.method}_{self.dataset}".replace("/", "-")


def _run_seed(args):
    graph, model_cfg, train_cfg, spec, seed = args
    try:
        model, trace = train_supervised(graph, model_cfg, train_cfg, spec, seed)
        acc, f1 = evaluate(model, graph, graph.test_mask)
        return {"seed": seed, "acc": 100.0 * acc, "f1": 100.0 * f1, "trace": trace,
                "params": model.params, "best_epoch": model.best_epoch}
    except Exception as exc:  # noqa: BLE001  per-seed failures become partial reports
        return {"seed": seed, "error": f"{type(exc).__name__}: {exc}"}


def _protocol(spec):
    if spec.kind == "identity":
        return "none"
    return "resampled each epoch" if spec.stochastic else "applied once before training"


def run_experiment(cfg, jobs=1, artifacts_dir=None, graph=None):
    """Train ``cfg.num_seeds`` seeds and aggregate test accuracy (percent).

    Seeds may run in worker processes; results are folded in seed order so
    the report does not depend on scheduling. With ``artifacts_dir`` each
    seed's metric trace (CSV) and best checkpoint (JSON) are written there.
    """
    t0 = time.perf_counter()
    g = cfg.dataset.load() if graph is None else graph
    model_cfg = cfg.model.build(g.num_features, g.num_classes)
    seeds = list(range(cfg.base_seed, cfg.base_seed + cfg.num_seeds))
    tasks = [(g, model_cfg, cfg.train, cfg.augmentation, s) for s in seeds]
    if jobs > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_seed, tasks))
    else:
        results = [_run_seed(t) for t in tasks]

    ok = [r for r in results if "error" not in r]
    errors = [{"seed": r["seed"], "error": r["error"]} for r in results if "error" in r]
    samples = [r["acc"] for r in ok]
    mean, std = aggregate(samples)
    report = ExperimentReport(
        model=cfg.model.arch,
        method=cfg.augmentation.label,
        dataset=cfg.dataset.name,
        seeds=[r["seed"] for r in ok],
        samples=samples,
        f1_samples=[r["f1"] for r in ok],
        mean=mean,
        std=std,
        partial=bool(errors),
        errors=errors,
        metadata={
            "config": cfg.to_dict(),
            "config_hash": cfg.config_hash(),
            "metric": "test accuracy (%) at best validation epoch",
            "std_estimator": "sample standard deviation (n-1)",
            "augmentation_protocol": _protocol(cfg.augmentation),
            "best_epochs": [r["best_epoch"] for r in ok],
            "versions": {"graphaug": __version__, "numpy": np.__version__,
                         "python": platform.python_version()},
            "wall_time_s": round(time.perf_counter() - t0, 3),
        },
    )
    if artifacts_dir is not None:
        _write_artifacts(Path(artifacts_dir), report, model_cfg, ok)
    return report


def _write_artifacts(root, report, model_cfg, results):
    try:
        (root / "traces").mkdir(parents=True, exist_ok=True)
        (root / "checkpoints").mkdir(parents=True, exist_ok=True)
        for r in results:
            name = f"{report.slug}_seed{r['seed']}"
            with open(root / "traces" / f"{name}.csv", "w", encoding="utf-8", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["epoch", "train_loss", "val_acc"])
                for epoch, loss, acc in r["trace"]:
                    w.writerow([epoch, repr(loss), repr(acc)])
            save_params(r["params"], root / "checkpoints" / f"{name}.json",
                        extra={"model": model_cfg.to_dict(), "best_epoch": r["best_epoch"]})
    except OSError as exc:
        raise IoError(f"cannot write artifacts under {root}: {exc}") from exc


# ------------------------------------------------------------------ grids

@dataclass(frozen=True)
class GridConfig:
    datasets: list
    models: list
    augmentations: list
    train: TrainConfig = field(default_factory=TrainConfig)
    num_seeds: int = 10
    base_seed: int = 0
    output: str = "out"

    def cells(self):
        for m in self.models:
            for a in self.augmentations:
                for d in self.datasets:
                    yield ExperimentConfig(d, m, a, self.train, self.num_seeds,
                                           self.base_seed, self.output)


def parse_grid(path_or_obj):
    obj = path_or_obj if isinstance(path_or_obj, dict) else _read_json(path_or_obj)
    top = {"datasets": None, "models": None, "augmentations": None, "train": None,
           "num_seeds": 10, "base_seed": 0, "output": "out"}
    d = _strict(obj, top, "")
    for key in ("datasets", "models", "augmentations"):
        if not isinstance(d[key], list) or not d[key]:
            raise ConfigError("must be a nonempty list", key)
    if d["num_seeds"] < 1:
        raise ConfigError("must be >= 1", "num_seeds")
    return GridConfig(
        datasets=[DatasetSpec.from_dict(x, f"datasets[{i}]") for i, x in enumerate(d["datasets"])],
        models=[ModelSpec.from_dict(x, f"models[{i}]") for i, x in enumerate(d["models"])],
        augmentations=[_aug_from_dict(x, f"augmentations[{i}]")
                       for i, x in enumerate(d["augmentations"])],
        train=_train_from_dict(d["train"] or {}),
        num_seeds=d["num_seeds"],
        base_seed=d["base_seed"],
        output=d["output"],
    )


def benchmark_grid(grid, jobs=1, artifacts_dir=None):
    """Run every (model, augmentation, dataset) cell with the grid's shared base seed."""
    graphs = {}
    reports = []
    for cfg in grid.cells():
        key = json.dumps(cfg.dataset.to_dict(), sort_keys=True)
        try:
            if key not in graphs:
                graphs[key] = cfg.dataset.load()
            reports.append(run_experiment(cfg, jobs, artifacts_dir, graphs[key]))
        except Exception as exc:  # noqa: BLE001  a broken cell must not sink the grid
            reports.append(ExperimentReport(
                cfg.model.arch, cfg.augmentation.label, cfg.dataset.name, [], [], [],
                float("nan"), float("nan"), partial=True,
                errors=[{"seed": None, "error": f"{type(exc).__name__}: {exc}"}],
                metadata={"config": cfg.to_dict(), "config_hash": cfg.config_hash()}))
    return reports


# ------------------------------------------------------------------ tables

def _grid(reports):
    rows, cols, cells = [], [], {}
    for r in reports:
        key = (r.model, r.method)
        if key not in rows:
            rows.append(key)
        if r.dataset not in cols:
            cols.append(r.dataset)
        cells[key, r.dataset] = r
    top2 = {key: [] for key in rows}
    for c in cols:
        ranked = sorted((k for k in rows if (k, c) in cells and np.isfinite(cells[k, c].mean)),
                        key=lambda k: -cells[k, c].mean)
        for k in ranked[:2]:
            top2[k].append(c)
    return rows, cols, cells, top2


def render_table(reports, format="markdown"):
    """Render reports as a (model, method) x dataset grid of ``mean±std`` cells.

    The ``top2`` column lists the datasets for which the row is among the
    two best means. ``json`` keeps the full-precision samples.
    """
    if not reports:
        raise ValidationError("no reports to tabulate")
    rows, cols, cells, top2 = _grid(reports)

    def text(k, c):
        r = cells.get((k, c))
        return "" if r is None else r.cell

    if format == "json":
        out = {"columns": cols, "rows": []}
        for k in rows:
            out["rows"].append({
                "model": k[0], "method": k[1], "top2": top2[k],
                "cells": {c: {"text": text(k, c), "mean": cells[k, c].mean, "std": cells[k, c].std,
                              "samples": cells[k, c].samples}
                          for c in cols if (k, c) in cells},
            })
        return json.dumps(out, indent=2, sort_keys=True) + "\n"
    if format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", "method", *cols, "top2"])
        for k in rows:
            w.writerow([k[0], k[1], *(text(k, c) for c in cols), ";".join(top2[k])])
        return buf.getvalue()
    if format == "markdown":
        lines = ["| model | method | " + " | ".join(cols) + " | top2 |",
                 "|---|---|" + "---|" * len(cols) + "---|"]
        for k in rows:
            lines.append(f"| {k[0]} | {k[1]} | " + " | ".join(text(k, c) for c in cols)
                         + f" | {', '.join(top2[k])} |")
        return "\n".join(lines) + "\n"
    raise ValidationError(f"unknown table format {format!r}")


def emit_table(reports, format="markdown", path=None):
    """Render and, if ``path`` is given, write the table; returns the text."""
    text = render_table(reports, format)
    if path is not None:
        try:
            Path(path).write_text(text, encoding="utf-8")
        except OSError as exc:
            raise IoError(f"cannot write {path}: {exc}") from exc
    return text
