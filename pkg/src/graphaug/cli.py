"""Command line entry point: ``graphaug <command> [options]``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 partial grid.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path

from . import augment as aug
from . import contrastive as cl
from . import harness
from .errors import ConfigError, FormatError, GraphAugError, IoError, ValidationError
from .graph import load_graph, save_graph, synthetic_sbm

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_PARTIAL = 0, 2, 3, 4


def _global_flags():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int, help="override the base seed")
    p.add_argument("--out", help="output directory (a file for augment/gen-synthetic)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for seeds")
    return p


def build_parser():
    common = _global_flags()
    parser = argparse.ArgumentParser(prog="graphaug", parents=[common],
                                     description="Graph data augmentation experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("augment", parents=[common], help="apply one augmentation to a graph file")
    p.add_argument("--in", dest="inp", required=True, help="input graph-json")
    p.add_argument("--spec", required=True, help="augmentation spec JSON file")

    p = sub.add_parser("gen-synthetic", parents=[common], help="write a stochastic block model graph")
    p.add_argument("--n", type=int)
    p.add_argument("--classes", type=int)
    p.add_argument("--p-in", type=float)
    p.add_argument("--p-out", type=float)
    p.add_argument("--feat-dim", type=int)
    p.add_argument("--noise", type=float)

    sub.add_parser("train", parents=[common], help="multi-seed supervised experiment")
    sub.add_parser("benchmark", parents=[common], help="models x augmentations x datasets grid")
    sub.add_parser("contrastive", parents=[common], help="contrastive pretraining + linear eval")

    p = sub.add_parser("report", parents=[common], help="render reports/*.json as a table")
    p.add_argument("--in", dest="inp", help="reports directory (default <out>/reports)")
    p.add_argument("--format", choices=["markdown", "csv", "json"], default="markdown")
    return parser


def _require_config(args):
    if not args.config:
        raise ConfigError("this command needs --config")
    return args.config


def _write_reports(reports, out):
    rdir = Path(out) / "reports"
    try:
        rdir.mkdir(parents=True, exist_ok=True)
        for r in reports:
            (rdir / f"{r.slug}.json").write_text(r.to_json(), encoding="utf-8")
    except OSError as exc:
        raise IoError(str(exc)) from exc
    harness.emit_table(reports, "markdown", Path(out) / "table.md")
    harness.emit_table(reports, "csv", Path(out) / "table.csv")


def _out_file(args, default):
    path = Path(args.out or default)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(str(exc)) from exc
    return path


def cmd_augment(args):
    g = load_graph(args.inp, "graph-json")
    try:
        spec = aug.AugmenterSpec.from_json(Path(args.spec).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError, ValidationError) as exc:
        raise ConfigError(f"bad augmentation spec: {exc}", "spec") from exc
    out = aug.apply(spec, g, seed=args.seed)
    save_graph(out, _out_file(args, "augmented.json"), "graph-json")
    return EXIT_OK


def cmd_gen_synthetic(args):
    params = dict(harness._SYNTH_DEFAULTS)
    if args.config:
        params = harness._strict(harness._read_json(args.config), params, "synthetic")
    for flag in ("n", "classes", "p_in", "p_out", "feat_dim", "noise", "seed"):
        v = getattr(args, flag)
        if v is not None:
            params[flag] = v
    save_graph(synthetic_sbm(**params), _out_file(args, "synthetic.json"), "graph-json")
    return EXIT_OK


def cmd_train(args):
    cfg = harness.parse_config(_require_config(args))
    cfg = _override(cfg, args)
    report = harness.run_experiment(cfg, jobs=args.jobs, artifacts_dir=cfg.output)
    _write_reports([report], cfg.output)
    print(harness.render_table([report], "markdown"), end="")
    return EXIT_PARTIAL if report.partial else EXIT_OK


def _override(cfg, args):
    changes = {}
    if args.seed is not None:
        changes["base_seed"] = args.seed
    if args.out:
        changes["output"] = args.out
    return dataclasses.replace(cfg, **changes) if changes else cfg


def cmd_benchmark(args):
    grid = harness.parse_grid(_require_config(args))
    grid = _override(grid, args)
    reports = harness.benchmark_grid(grid, jobs=args.jobs)
    _write_reports(reports, grid.output)
    print(harness.render_table(reports, "markdown"), end="")
    return EXIT_PARTIAL if any(r.partial for r in reports) else EXIT_OK


_CONTRASTIVE_KEYS = {f for f in cl.ContrastiveConfig.__dataclass_fields__}


def _contrastive_dataset(spec, base):
    if not isinstance(spec, dict):
        raise ConfigError("expected an object", "dataset")
    if "dir" in spec:
        extra = set(spec) - {"dir"}
        if extra:
            raise ConfigError("unknown key", f"dataset.{sorted(extra)[0]}")
        d = Path(spec["dir"])
        if not d.is_absolute():
            d = base / d
        files = sorted(p for p in d.glob("*.json") if p.name != "labels.json")
        if not files:
            raise ConfigError(f"no graph-json files in {d}", "dataset.dir")
        graphs = [load_graph(p, "graph-json") for p in files]
        labels = None
        if (d / "labels.json").exists():
            mapping = json.loads((d / "labels.json").read_text(encoding="utf-8"))
            labels = [mapping[p.stem] for p in files]
        return cl.GraphBatch(graphs, labels)
    defaults = {"num_graphs": 200, "seed": 0, "n_range": [12, 20], "p_in": [0.2, 0.5],
                "p_out": 0.05, "feat_dim": 8, "noise": 0.5}
    params = harness._strict(spec.get("synthetic", {}), defaults, "dataset.synthetic")
    if set(spec) - {"synthetic"}:
        raise ConfigError("unknown key", f"dataset.{sorted(set(spec) - {'synthetic'})[0]}")
    params["n_range"] = tuple(params["n_range"])
    params["p_in"] = tuple(params["p_in"])
    return cl.synthetic_graph_dataset(**params)


def cmd_contrastive(args):
    path = _require_config(args)
    obj = harness._read_json(path)
    if not isinstance(obj, dict):
        raise ConfigError("expected an object")
    unknown = set(obj) - _CONTRASTIVE_KEYS - {"dataset", "output"}
    if unknown:
        raise ConfigError("unknown key", sorted(unknown)[0])
    kw = {k: v for k, v in obj.items() if k in _CONTRASTIVE_KEYS}
    if args.seed is not None:
        kw["seed"] = args.seed
    try:
        cfg = cl.ContrastiveConfig(**kw)
    except (TypeError, ValidationError) as exc:
        raise ConfigError(str(exc)) from exc
    dataset = _contrastive_dataset(obj.get("dataset", {}), Path(path).parent)
    out = Path(args.out or obj.get("output", "out"))
    encoder, trace = cl.train_contrastive(dataset, cfg)
    f1 = cl.linear_eval_f1(encoder, dataset, cfg.seed) if dataset.labels is not None else None
    kinds = [s.kind for s in cfg.pool]
    result = {"f1": f1, "pair": kinds if len(kinds) != 1 else kinds * 2, "seed": cfg.seed,
              "loss_first": trace[0], "loss_last": trace[-1]}
    try:
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "loss_trace.csv", "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "loss"])
            for e, loss in enumerate(trace):
                w.writerow([e, repr(loss)])
        (out / "result.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n",
                                         encoding="utf-8")
    except OSError as exc:
        raise IoError(str(exc)) from exc
    print(json.dumps(result, sort_keys=True))
    return EXIT_OK


def cmd_report(args):
    rdir = Path(args.inp) if args.inp else Path(args.out or "out") / "reports"
    files = sorted(rdir.glob("*.json"))
    if not files:
        raise ConfigError(f"no reports found in {rdir}", "in")
    reports = [harness.ExperimentReport.from_dict(json.loads(p.read_text(encoding="utf-8")))
               for p in files]
    ext = {"markdown": "md", "csv": "csv", "json": "json"}[args.format]
    target = Path(args.out) / f"table.{ext}" if args.out else None
    if target is not None:
        target.parent.mkdir(parents=True, exist_ok=True)
    print(harness.emit_table(reports, args.format, target), end="")
    return EXIT_OK


COMMANDS = {
    "augment": cmd_augment,
    "gen-synthetic": cmd_gen_synthetic,
    "train": cmd_train,
    "benchmark": cmd_benchmark,
    "contrastive": cmd_contrastive,
    "report": cmd_report,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, ValidationError, IoError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except GraphAugError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
