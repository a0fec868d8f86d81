"""Synthetic datasets, CSV I/O, splitting and minibatch iteration."""
from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np


class SchemaError(ValueError):
    pass


@dataclass
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray | None = None
    class_count: int = 2
    name: str = "dataset"
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        if self.inputs.ndim != 2 or self.inputs.shape[0] < 1 or self.inputs.shape[1] < 1:
            raise ValueError(f"inputs must be a non-empty n x d matrix, got shape {self.inputs.shape}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
            if self.labels.shape[0] != self.inputs.shape[0]:
                raise ValueError("labels and inputs have different row counts")
            bad = (self.labels < 0) | (self.labels >= self.class_count)
            if bad.any():
                raise SchemaError(f"label {self.labels[bad][0]} outside [0, {self.class_count})")

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def one_hot(self) -> np.ndarray:
        if self.labels is None:
            raise ValueError(f"{self.name} has no labels")
        return np.eye(self.class_count)[self.labels]

    def subset(self, idx, name=None, keep_labels=True) -> Dataset:
        idx = np.asarray(idx, dtype=np.int64)
        labels = self.labels[idx] if keep_labels and self.labels is not None else None
        return Dataset(self.inputs[idx], labels, self.class_count, name or self.name, dict(self.provenance))

    def fingerprint(self) -> str:
        """64-bit content hash of inputs and labels."""
        h = hashlib.blake2b(digest_size=8)
        h.update(np.ascontiguousarray(self.inputs).tobytes())
        if self.labels is not None:
            h.update(self.labels.astype("<i8").tobytes())
        return h.hexdigest()


def moon_point(phi: float, moon: int) -> tuple[float, float]:
    if moon == 0:
        return math.cos(phi), math.sin(phi)
    return 1.0 - math.cos(phi), 0.5 - math.sin(phi)


def two_moons(n: int, noise_sd: float = 0.1, seed: int = 0) -> Dataset:
    """Two interleaved half circles, ``ceil(n/2)`` points on the upper moon.

    Angles are evenly spaced on [0, pi]; rows are shuffled, then Gaussian
    noise is added.
    """
    if n < 2:
        raise ValueError("two_moons needs n >= 2")
    rng = np.random.default_rng(seed)
    n0 = (n + 1) // 2
    n1 = n - n0
    phi0 = np.linspace(0.0, np.pi, n0)
    phi1 = np.linspace(0.0, np.pi, n1)
    upper = np.column_stack([np.cos(phi0), np.sin(phi0)])
    lower = np.column_stack([1.0 - np.cos(phi1), 0.5 - np.sin(phi1)])
    x = np.vstack([upper, lower])
    y = np.concatenate([np.zeros(n0, dtype=np.int64), np.ones(n1, dtype=np.int64)])
    order = rng.permutation(n)
    x, y = x[order], y[order]
    if noise_sd > 0:
        x = x + rng.normal(0.0, noise_sd, size=x.shape)
    return Dataset(x, y, 2, "two_moons", {"generator": "two_moons", "n": n, "noise_sd": noise_sd, "seed": seed})


def gaussian_clusters(centers, per_cluster: int, sd: float, class_of_cluster, seed: int = 0) -> Dataset:
    centers = np.asarray(centers, dtype=np.float64)
    if centers.ndim != 2 or centers.shape[0] < 2:
        raise ValueError("need at least two cluster centers")
    classes = np.asarray(list(class_of_cluster), dtype=np.int64)
    if classes.shape[0] != centers.shape[0]:
        raise ValueError(f"{centers.shape[0]} centers but {classes.shape[0]} class assignments")
    if classes.min() < 0:
        raise ValueError("class indices must be non-negative")
    class_count = int(classes.max()) + 1
    missing = sorted(set(range(class_count)) - set(classes.tolist()))
    if missing:
        raise ValueError(f"classes {missing} have no cluster")
    rng = np.random.default_rng(seed)
    x = np.repeat(centers, per_cluster, axis=0)
    y = np.repeat(classes, per_cluster)
    if sd > 0:
        x = x + rng.normal(0.0, sd, size=x.shape)
    order = rng.permutation(len(y))
    prov = {
        "generator": "gaussian_clusters",
        "centers": centers.tolist(),
        "per_cluster": per_cluster,
        "sd": sd,
        "classes": classes.tolist(),
        "seed": seed,
    }
    return Dataset(x[order], y[order], class_count, "gaussian_clusters", prov)


@dataclass
class SplitSpec:
    labels_per_class: int = 3
    unlabeled_count: int = 1000
    validation_count: int = 500
    test_count: int = 1000
    include_labeled_in_unlabeled: bool = True
    seed: int = 0


@dataclass
class Splits:
    labeled: Dataset
    unlabeled: Dataset
    validation: Dataset
    test: Dataset
    indices: dict = field(default_factory=dict)


def split(ds: Dataset, spec: SplitSpec) -> Splits:
    """Stratified labeled set plus disjoint unlabeled/validation/test sets.

    With ``include_labeled_in_unlabeled`` the labeled inputs are appended
    to the unlabeled pool on top of ``unlabeled_count`` fresh rows.
    """
    if ds.labels is None:
        raise ValueError("split needs a labeled dataset")
    rng = np.random.default_rng(spec.seed)
    order = rng.permutation(len(ds))
    labels = ds.labels[order]

    shortfall = []
    labeled_idx = []
    for c in range(ds.class_count):
        rows = order[labels == c][: spec.labels_per_class]
        if len(rows) < spec.labels_per_class:
            shortfall.append(f"class {c}: need {spec.labels_per_class} labeled rows, have {len(rows)}")
        labeled_idx.extend(rows.tolist())
    taken = set(labeled_idx)
    rest = np.array([i for i in order if i not in taken], dtype=np.int64)
    need = spec.unlabeled_count + spec.validation_count + spec.test_count
    if need > len(rest):
        shortfall.append(
            f"unlabeled+validation+test need {need} rows, only {len(rest)} remain after the labeled split"
        )
    if shortfall:
        raise ValueError("infeasible split: " + "; ".join(shortfall))

    labeled_idx = np.array(labeled_idx, dtype=np.int64)
    a, b = spec.unlabeled_count, spec.unlabeled_count + spec.validation_count
    unl_idx, val_idx, test_idx = rest[:a], rest[a:b], rest[b:need]
    pool_idx = np.concatenate([unl_idx, labeled_idx]) if spec.include_labeled_in_unlabeled else unl_idx

    return Splits(
        labeled=ds.subset(labeled_idx, "labeled"),
        unlabeled=ds.subset(pool_idx, "unlabeled", keep_labels=False),
        validation=ds.subset(val_idx, "validation"),
        test=ds.subset(test_idx, "test"),
        indices={"labeled": labeled_idx, "unlabeled": pool_idx, "validation": val_idx, "test": test_idx},
    )


def standardize(train_stats_from: Dataset, apply_to: Dataset) -> Dataset:
    mean = train_stats_from.inputs.mean(axis=0)
    sd = np.maximum(train_stats_from.inputs.std(axis=0), 1e-8)
    out = Dataset((apply_to.inputs - mean) / sd, apply_to.labels, apply_to.class_count, apply_to.name, dict(apply_to.provenance))
    out.provenance["standardized_with"] = {"mean": mean.tolist(), "sd": sd.tolist()}
    return out


def batches(ds: Dataset, batch_size: int, seed: int, epoch: int) -> Iterator[np.ndarray]:
    """Row-index batches for one epoch, shuffled from ``(seed, epoch)``."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.random.default_rng([seed, epoch]).permutation(len(ds))
    for start in range(0, len(order), batch_size):
        yield order[start : start + batch_size]


def cycle_batches(ds: Dataset, batch_size: int, seed: int) -> Iterator[np.ndarray]:
    """Endless batches, reshuffling at every pass over ``ds``."""
    epoch = 0
    while True:
        yield from batches(ds, batch_size, seed, epoch)
        epoch += 1


# -- CSV -----------------------------------------------------------------

@dataclass
class CsvSchema:
    has_label: bool = True
    class_count: int | None = None


def file_fingerprint(path) -> str:
    return hashlib.blake2b(Path(path).read_bytes(), digest_size=8).hexdigest()


def export_csv(ds: Dataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = [f"f{i}" for i in range(ds.dim)]
        if ds.labels is not None:
            header.append("label")
        w.writerow(header)
        for i in range(len(ds)):
            row = [format(v, ".17g") for v in ds.inputs[i]]
            if ds.labels is not None:
                row.append(str(int(ds.labels[i])))
            w.writerow(row)


def ingest_csv(path, schema: CsvSchema | None = None) -> Dataset:
    schema = schema or CsvSchema()
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file, header row required") from None
        has_label_col = bool(header) and header[-1] == "label"
        if schema.has_label and not has_label_col:
            raise SchemaError(f"{path}: expected a 'label' column, header is {header}")
        nfeat = len(header) - (1 if has_label_col else 0)
        expected = [f"f{i}" for i in range(nfeat)]
        if header[:nfeat] != expected:
            raise SchemaError(f"{path}: feature columns must be named {expected}, got {header[:nfeat]}")
        xs, ys = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise SchemaError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                xs.append([float(v) for v in row[:nfeat]])
                if has_label_col:
                    ys.append(int(row[-1]))
            except ValueError as exc:
                raise SchemaError(f"{path}:{lineno}: {exc}") from None
            if not all(math.isfinite(v) for v in xs[-1]):
                raise SchemaError(f"{path}:{lineno}: non-finite value")
    if not xs:
        raise SchemaError(f"{path}: no data rows")
    labels = np.array(ys, dtype=np.int64) if has_label_col and schema.has_label else None
    if labels is not None:
        class_count = schema.class_count if schema.class_count is not None else int(labels.max()) + 1
        bad = np.flatnonzero((labels < 0) | (labels >= class_count))
        if bad.size:
            raise SchemaError(f"{path}:{bad[0] + 2}: label {labels[bad[0]]} outside [0, {class_count})")
    else:
        class_count = schema.class_count or 2
    return Dataset(
        np.array(xs), labels, class_count, path.stem,
        {"source": str(path), "file_fingerprint": file_fingerprint(path)},
    )
