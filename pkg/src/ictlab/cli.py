"""Command-line entry point.

Settings resolve as defaults <- ``--config`` file section <- flags. The
config file is INI with one section per subcommand, e.g.::

    [train]
    method = ict
    w_max = 100
"""
from __future__ import annotations

import argparse
import configparser
import json
import sys
from pathlib import Path

from .data import CsvSchema, SchemaError, export_csv, ingest_csv
from .evaluate import GridSpec, aggregate_trials, config_fingerprint, error_rate, export_boundary
from .ict import METHODS, NumericalError
from .nn import ShapeError, load_network
from .runs import default_output_dir, generate_dataset, load_manifest, run_training

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_int(text):
    return None if text in (None, "", "none", "None") else int(text)


def _hidden(text):
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    return [int(v) for v in str(text).split(",") if v.strip()]


# name -> (parser, default, help)
DATA_OPTIONS = {
    "generator": (str, "two_moons", "dataset generator: two_moons or gaussian_clusters"),
    "n": (int, 2506, "two_moons: number of points"),
    "noise": (float, 0.1, "two_moons: Gaussian noise sd"),
    "centers": (str, None, "gaussian_clusters: 'x,y;x,y;...'"),
    "classes": (str, None, "gaussian_clusters: class per cluster, '0,1,...'"),
    "per_cluster": (int, None, "gaussian_clusters: points per cluster"),
    "sd": (float, None, "gaussian_clusters: cluster sd"),
    "data_seed": (_opt_int, None, "generator seed (defaults to --seed)"),
}

TRAIN_OPTIONS = {
    "method": (str, "ict", f"one of {', '.join(METHODS)}"),
    "data": (str, None, "labeled CSV to split instead of generating data"),
    "class_count": (_opt_int, None, "class count for --data (default: max label + 1)"),
    **DATA_OPTIONS,
    "labels_per_class": (int, 3, "labeled examples per class"),
    "unlabeled": (int, 1000, "unlabeled pool size"),
    "validation": (int, 500, "validation set size"),
    "test": (int, 1000, "test set size"),
    "include_labeled": (_bool, True, "also put labeled inputs in the unlabeled pool"),
    "split_seed": (_opt_int, None, "split seed (defaults to --seed)"),
    "standardize": (_bool, False, "standardize inputs with unlabeled-pool statistics"),
    "epochs": (int, 100, "epochs (passes over the unlabeled pool)"),
    "steps": (_opt_int, None, "stop after this many updates"),
    "beta_alpha": (float, 1.0, "Beta(alpha, alpha) shape for the mixing coefficient"),
    "w_max": (float, 1.0, "maximum consistency weight"),
    "ramp_fraction": (float, 0.25, "fraction of training over which the weight ramps up"),
    "ema_decay": (float, 0.999, "teacher moving-average decay"),
    "labeled_batch": (int, 100, "labeled minibatch size"),
    "unlabeled_batch": (int, 100, "unlabeled minibatch size"),
    "supervised_mode": (str, None, "vanilla or mixup (default set by --method)"),
    "lr": (float, 0.1, "initial learning rate"),
    "momentum": (float, 0.9, "Nesterov momentum"),
    "l2": (float, 1e-4, "L2 coefficient"),
    "hidden": (_hidden, [20, 20, 20], "hidden layer widths, comma separated"),
    "ema_after_step": (_bool, False, "update the teacher after the optimizer step"),
    "pairing": (str, "independent", "independent or shuffled unlabeled pairing"),
    "eval_network": (str, "teacher", "network used for reported errors"),
    "seed": (int, 0, "training seed"),
    "checkpoint_every": (int, 0, "save snapshots every N updates (0: off)"),
    "log_interval": (int, 1, "write a trace record every N updates"),
}

EXPERIMENT_OPTIONS = {**TRAIN_OPTIONS, "trials": (int, 3, "number of trials")}

GENERATE_OPTIONS = {**DATA_OPTIONS, "seed": (int, None, "generator seed")}
GENERATE_REQUIRED = {
    "two_moons": ("n", "seed"),
    "gaussian_clusters": ("centers", "classes", "per_cluster", "sd", "seed"),
}

BOUNDARY_OPTIONS = {
    "x_range": (str, "-1.5,2.5", "x range 'lo,hi'"),
    "y_range": (str, "-1.0,1.5", "y range 'lo,hi'"),
    "resolution": (str, "100,100", "cells per axis 'nx,ny'"),
}


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _add_options(p: argparse.ArgumentParser, options: dict, skip=()):
    for name, (_, default, help_) in options.items():
        if name in skip:
            continue
        shown = f" (default: {default})" if default not in (None, "") else ""
        p.add_argument(_flag(name), dest=name, default=None, help=help_ + shown)


def resolve(options: dict, section: str, args: argparse.Namespace, config_path=None, base=None):
    """Merge defaults, config-file section and flags; record where each value came from."""
    values = {k: spec[1] for k, spec in options.items()}
    sources = {k: "default" for k in options}
    if base:
        for k, v in base.items():
            if k in options:
                values[k], sources[k] = v, "manifest"
    if config_path:
        cp = configparser.ConfigParser()
        if not cp.read(config_path):
            raise ConfigError(f"cannot read config file {config_path}")
        if cp.has_section(section):
            for raw_key, raw in cp.items(section):
                key = raw_key.replace("-", "_")
                if key not in options:
                    raise ConfigError(f"{config_path}: unknown key {raw_key!r} in [{section}]")
                values[key], sources[key] = raw, "config"
    for k in options:
        v = getattr(args, k, None)
        if v is not None:
            values[k], sources[k] = v, "flag"
    for k, (conv, _, _) in options.items():
        if values[k] is not None and sources[k] in ("config", "flag"):
            try:
                values[k] = conv(values[k])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {_flag(k)}: {exc}") from None
    return values, sources


def _pair(text, conv=float):
    parts = [conv(v) for v in str(text).split(",")]
    if len(parts) != 2:
        raise ConfigError(f"expected two comma-separated values, got {text!r}")
    return tuple(parts)


# -- commands -----------------------------------------------------------

def cmd_generate(args) -> int:
    if args.generator not in GENERATE_REQUIRED:
        raise ConfigError(f"unknown generator {args.generator!r}; choose two_moons or gaussian_clusters")
    cfg, _ = resolve(GENERATE_OPTIONS, "generate", args, args.config)
    cfg["generator"] = args.generator
    missing = [_flag(k) for k in GENERATE_REQUIRED[args.generator] if cfg.get(k) is None]
    if missing:
        raise ConfigError(f"generate {args.generator}: missing required parameter(s): {', '.join(missing)}")
    ds = generate_dataset(cfg)
    out = Path(args.out) if args.out else default_output_dir() / f"{args.generator}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    export_csv(ds, out)
    sidecar = {"provenance": ds.provenance, "rows": len(ds), "class_count": ds.class_count, "fingerprint": ds.fingerprint()}
    Path(str(out) + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(ds)} rows to {out}")
    return EXIT_OK


def _train_out(args, name) -> Path:
    return Path(args.out) if args.out else default_output_dir() / name


def cmd_train(args) -> int:
    base = None
    if args.manifest:
        base = load_manifest(args.manifest)["config"]
    cfg, sources = resolve(TRAIN_OPTIONS, "train", args, args.config, base)
    out = _train_out(args, f"{cfg['method']}_seed{cfg['seed']}")
    manifest = run_training(cfg, out, sources)
    res = manifest["results"]
    print(f"trained {res['steps']} steps; wrote {out}")
    print(f"final_test_error_percent={res['final_test_error_percent']:.2f}")
    if "selected" in res:
        print(f"selected_test_error_percent={res['selected']['test_error_percent']:.2f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    net = load_network(args.checkpoint)
    ds = ingest_csv(args.data, CsvSchema(has_label=True, class_count=net.num_classes))
    if ds.dim != net.in_dim:
        raise ShapeError(f"dataset has {ds.dim} features, checkpoint expects {net.in_dim}")
    err = error_rate(net, ds)
    print(f"test error: {err:.2f}%")
    print(f"test_error_percent={err:.2f}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg, sources = resolve(EXPERIMENT_OPTIONS, "experiment", args, args.config)
    trials = int(cfg.pop("trials"))
    if trials < 1:
        raise ConfigError("--trials must be >= 1")
    out = _train_out(args, f"experiment_{cfg['method']}")
    out.mkdir(parents=True, exist_ok=True)
    base_seed = cfg["seed"]
    errors, seeds, finals, failures = [], [], [], []
    status = EXIT_OK
    for i in range(trials):
        seed = base_seed + i
        trial_cfg = dict(cfg, seed=seed)
        try:
            manifest = run_training(trial_cfg, out / f"trial_{i}", sources, command="experiment")
        except NumericalError as exc:
            failures.append({"trial": i, "seed": seed, "error": str(exc)})
            status = EXIT_NUMERIC
            continue
        res = manifest["results"]
        chosen = res.get("selected", {}).get("test_error_percent", res["final_test_error_percent"])
        errors.append(chosen)
        finals.append(res["final_test_error_percent"])
        seeds.append(seed)
    fp = config_fingerprint({k: v for k, v in cfg.items() if k != "seed"})
    if errors:
        report = aggregate_trials(errors, seeds, fp)
    else:
        report = aggregate_trials([float("nan")], [], fp)
        report.trials, report.mean, report.sd = [], float("nan"), float("nan")
    report.extra = {
        "selection": "test error at the best-validation epoch",
        "final_test_error_percent": finals,
        "failures": failures,
        "base_seed": base_seed,
    }
    (out / "report.json").write_text(report.to_json())
    print(f"{len(errors)}/{trials} trials ok; test error {report.mean:.2f} +- {report.sd:.2f}; wrote {out / 'report.json'}")
    return status


def cmd_export_boundary(args) -> int:
    cfg, _ = resolve(BOUNDARY_OPTIONS, "export-boundary", args, args.config)
    net = load_network(args.checkpoint)
    res = _pair(cfg["resolution"], int)
    spec = GridSpec(_pair(cfg["x_range"]), _pair(cfg["y_range"]), res)
    out = Path(args.out) if args.out else default_output_dir() / "boundary.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    grid = export_boundary(net, spec, out)
    print(f"wrote {len(grid.points)} grid cells to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ictlab", description="Interpolation consistency training experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic dataset CSV")
    p.add_argument("generator", help="two_moons or gaussian_clusters")
    _add_options(p, GENERATE_OPTIONS, skip=("generator",))
    p.add_argument("--out", help="output CSV path")
    p.add_argument("--config")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train one model")
    _add_options(p, TRAIN_OPTIONS)
    p.add_argument("--manifest", help="re-run from a manifest (file or run directory)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--config")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="error rate of a checkpoint on a labeled CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("experiment", help="several seeded trials, mean and sd")
    _add_options(p, EXPERIMENT_OPTIONS)
    p.add_argument("--out", help="output directory")
    p.add_argument("--config")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("export-boundary", help="class probabilities on a 2-D grid")
    p.add_argument("--checkpoint", required=True)
    _add_options(p, BOUNDARY_OPTIONS)
    p.add_argument("--out", help="output CSV path")
    p.add_argument("--config")
    p.set_defaults(func=cmd_export_boundary)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"error: numeric failure at step {exc.step}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ShapeError, SchemaError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
