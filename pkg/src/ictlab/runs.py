"""Training runs on disk: data preparation, checkpoints, manifests, traces."""
from __future__ import annotations

import json
import os
from pathlib import Path

from . import __version__
from .data import CsvSchema, Dataset, SplitSpec, export_csv, gaussian_clusters, ingest_csv, split, standardize, two_moons
from .evaluate import error_rate
from .ict import IctConfig, effective_eval_network, method_config, train
from .nn import save_network

MANIFEST_FORMAT = "ictlab-manifest v1"

# keys of the resolved train config that map onto IctConfig fields
ICT_KEYS = {
    "beta_alpha": "beta_alpha", "w_max": "w_max", "ramp_fraction": "ramp_fraction",
    "ema_decay": "ema_decay", "labeled_batch": "labeled_batch", "unlabeled_batch": "unlabeled_batch",
    "epochs": "total_epochs", "steps": "total_steps", "lr": "lr", "momentum": "momentum", "l2": "l2",
    "hidden": "hidden", "ema_after_step": "ema_after_step", "pairing": "pairing",
    "eval_network": "eval_network", "seed": "seed", "supervised_mode": "supervised_mode",
}


def default_output_dir() -> Path:
    return Path(os.environ.get("ICTLAB_OUTPUT_DIR", "runs"))


def parse_centers(text: str) -> list[list[float]]:
    return [[float(v) for v in pt.split(",")] for pt in text.split(";") if pt.strip()]


def parse_ints(text: str) -> list[int]:
    return [int(v) for v in str(text).split(",") if v.strip()]


def generate_dataset(cfg: dict) -> Dataset:
    gen = cfg["generator"]
    seed = cfg["data_seed"] if cfg.get("data_seed") is not None else cfg["seed"]
    if gen == "two_moons":
        return two_moons(int(cfg["n"]), float(cfg["noise"]), seed=seed)
    if gen == "gaussian_clusters":
        return gaussian_clusters(
            parse_centers(cfg["centers"]), int(cfg["per_cluster"]), float(cfg["sd"]),
            parse_ints(cfg["classes"]), seed=seed,
        )
    raise ValueError(f"unknown generator {gen!r}")


def prepare_data(cfg: dict) -> dict:
    """Load or generate the dataset, split it, optionally standardize."""
    if cfg.get("data"):
        ds = ingest_csv(cfg["data"], CsvSchema(has_label=True, class_count=cfg.get("class_count")))
    else:
        ds = generate_dataset(cfg)
    split_seed = cfg["split_seed"] if cfg.get("split_seed") is not None else cfg["seed"]
    spec = SplitSpec(
        labels_per_class=int(cfg["labels_per_class"]), unlabeled_count=int(cfg["unlabeled"]),
        validation_count=int(cfg["validation"]), test_count=int(cfg["test"]),
        include_labeled_in_unlabeled=bool(cfg["include_labeled"]), seed=split_seed,
    )
    parts = split(ds, spec)
    sets = {"labeled": parts.labeled, "unlabeled": parts.unlabeled, "validation": parts.validation, "test": parts.test}
    if cfg.get("standardize"):
        source = parts.unlabeled
        sets = {k: standardize(source, v) for k, v in sets.items()}
    return {"dataset": ds, "sets": sets}


def ict_config_from(cfg: dict) -> IctConfig:
    overrides = {field: cfg[key] for key, field in ICT_KEYS.items() if cfg.get(key) is not None}
    return method_config(cfg["method"], **overrides)


def _write_trace(path: Path, trace, log_interval: int) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in trace:
            if rec.val_error is not None or rec.step % log_interval == 0:
                fh.write(json.dumps(rec.as_dict()) + "\n")


def run_training(cfg: dict, out_dir, sources: dict | None = None, command: str = "train") -> dict:
    """Train per the resolved config and write every artifact under ``out_dir``.

    Returns the manifest dict. Raises ``NumericalError`` on a non-finite loss.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    prepared = prepare_data(cfg)
    sets = prepared["sets"]
    config = ict_config_from(cfg)

    split_dir = out / "splits"
    split_dir.mkdir(exist_ok=True)
    for name, ds in sets.items():
        export_csv(ds, split_dir / f"{name}.csv")

    every = int(cfg.get("checkpoint_every") or 0)
    snap_dir = out / "snapshots"

    def on_step(step, student, teacher):
        if every and step % every == 0:
            snap_dir.mkdir(exist_ok=True)
            save_network(student, snap_dir / f"step_{step:06d}_student.ckpt")
            save_network(teacher, snap_dir / f"step_{step:06d}_teacher.ckpt")

    result = train(config, sets["labeled"], sets["unlabeled"], sets["validation"], on_step=on_step)

    save_network(result.student, out / "student.ckpt")
    save_network(result.teacher, out / "teacher.ckpt")
    which = effective_eval_network(config)
    results = {
        "eval_network": which,
        "eval_checkpoint": f"{which}.ckpt",
        "steps": result.state.step,
        "final_test_error_percent": error_rate(result.eval_net(), sets["test"]),
        "final_validation_error_percent": error_rate(result.eval_net(), sets["validation"]),
    }
    if result.best:
        best_net = result.best[which]
        save_network(result.best["student"], out / "best_student.ckpt")
        save_network(result.best["teacher"], out / "best_teacher.ckpt")
        results["selected"] = {
            "epoch": result.best["epoch"], "step": result.best["step"],
            "validation_error_percent": result.best["val_error"],
            "test_error_percent": error_rate(best_net, sets["test"]),
            "checkpoint": f"best_{which}.ckpt",
        }
    _write_trace(out / "trace.jsonl", result.state.loss_trace, int(cfg.get("log_interval") or 1))

    manifest = {
        "format": MANIFEST_FORMAT,
        "command": command,
        "code_version": __version__,
        "seed": config.seed,
        "config": cfg,
        "config_sources": sources or {},
        "ict_config": config.to_dict(),
        "consistency_loss": "mse on softmax probabilities, squared distance averaged over classes and rows",
        "datasets": {
            "source": {"fingerprint": prepared["dataset"].fingerprint(), "provenance": prepared["dataset"].provenance},
            **{k: {"rows": len(v), "fingerprint": v.fingerprint()} for k, v in sets.items()},
        },
        "results": results,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def load_manifest(path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    manifest = json.loads(path.read_text())
    if manifest.get("format") != MANIFEST_FORMAT:
        raise ValueError(f"{path}: not an ictlab manifest")
    return manifest
