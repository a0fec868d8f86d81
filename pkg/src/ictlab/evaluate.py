"""Error rates, trial aggregation and decision-boundary export."""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import Dataset
from .nn import Network, ShapeError, forward


def predict(net: Network, x) -> np.ndarray:
    # np.argmax returns the first maximum, so ties go to the lowest class
    return np.argmax(forward(net, x), axis=1)


def error_rate(net: Network, ds: Dataset) -> float:
    """Percentage of rows whose argmax prediction differs from the label."""
    if ds.labels is None:
        raise ValueError(f"dataset {ds.name!r} has no labels")
    wrong = np.count_nonzero(predict(net, ds.inputs) != ds.labels)
    return 100.0 * wrong / len(ds)


@dataclass
class TrialReport:
    trials: list[float]
    mean: float
    sd: float
    seeds: list[int] = field(default_factory=list)
    config_fingerprint: str = ""
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


def aggregate_trials(errors, seeds=(), config_fingerprint="") -> TrialReport:
    errors = [float(e) for e in errors]
    if not errors:
        raise ValueError("need at least one trial")
    arr = np.array(errors)
    sd = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
    return TrialReport(errors, float(arr.mean()), sd, list(seeds), config_fingerprint)


def config_fingerprint(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.blake2b(blob, digest_size=8).hexdigest()


@dataclass
class GridSpec:
    x_range: tuple[float, float] = (-1.5, 2.5)
    y_range: tuple[float, float] = (-1.0, 1.5)
    resolution: tuple[int, int] = (100, 100)


@dataclass
class BoundaryGrid:
    spec: GridSpec
    points: np.ndarray  # (nx*ny, 2), y-major: x varies fastest
    probs: np.ndarray  # (nx*ny, classes)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x", "y"] + [f"p{c}" for c in range(self.probs.shape[1])])
            for pt, p in zip(self.points, self.probs):
                w.writerow([format(v, ".17g") for v in pt] + [format(v, ".17g") for v in p])


def export_boundary(net: Network, spec: GridSpec | None = None, path=None) -> BoundaryGrid:
    spec = spec or GridSpec()
    if net.in_dim != 2:
        raise ShapeError(f"boundary export needs a 2-D input model, this one takes {net.in_dim} inputs")
    nx, ny = spec.resolution
    if nx < 1 or ny < 1:
        raise ValueError("grid resolution must be positive")
    xs = np.linspace(spec.x_range[0], spec.x_range[1], nx)
    ys = np.linspace(spec.y_range[0], spec.y_range[1], ny)
    gx, gy = np.meshgrid(xs, ys)
    points = np.column_stack([gx.ravel(), gy.ravel()])
    grid = BoundaryGrid(spec, points, forward(net, points))
    if path is not None:
        grid.write_csv(path)
    return grid
