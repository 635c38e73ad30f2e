"""Synthetic 2D distributions and CSV point-set ingestion."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .rng import make_stream

KINDS = ("eight_gaussians", "two_moons", "swiss_roll_2d", "checkerboard", "file")


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "eight_gaussians"
    sigma: float = 0.1
    radius: float = 1.0
    rotation_deg: float = 0.0
    noise: float = 0.05
    seed: int = 0
    path: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DatasetError(f"unknown dataset kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "file" and not self.path:
            raise DatasetError("dataset kind 'file' needs a path")


def eight_centers(radius: float = 1.0, rotation_deg: float = 0.0) -> np.ndarray:
    angles = np.arange(8) * (2 * math.pi / 8) + math.radians(rotation_deg)
    return radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)


def mode_centers(spec: DatasetSpec) -> np.ndarray:
    if spec.kind != "eight_gaussians":
        raise DatasetError(f"dataset {spec.kind!r} has no mode centers")
    return eight_centers(spec.radius, spec.rotation_deg)


def _rotate(points: np.ndarray, deg: float) -> np.ndarray:
    if deg == 0.0:
        return points
    c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
    return points @ np.array([[c, s], [-s, c]])


def sample(spec: DatasetSpec, n: int, stream: str = "data") -> tuple[np.ndarray, np.ndarray | None]:
    """Draw ``n`` i.i.d. points (and labels where the kind has them)."""
    if n < 1:
        raise DatasetError(f"n must be >= 1, got {n}")
    rng = make_stream(spec.seed, stream)
    if spec.kind == "eight_gaussians":
        labels = rng.integers(0, 8, size=n)
        centers = eight_centers(spec.radius, spec.rotation_deg)
        pts = centers[labels] + spec.sigma * rng.standard_normal((n, 2))
        return pts, labels
    if spec.kind == "two_moons":
        labels = rng.integers(0, 2, size=n)
        theta = rng.uniform(0.0, math.pi, size=n)
        upper = np.stack([np.cos(theta), np.sin(theta)], axis=1)
        lower = np.stack([1.0 - np.cos(theta), 0.5 - np.sin(theta)], axis=1)
        pts = np.where(labels[:, None] == 0, upper, lower) + spec.noise * rng.standard_normal((n, 2))
        pts = (pts - np.array([0.5, 0.25])) * 0.8
        return _rotate(pts, spec.rotation_deg), labels
    if spec.kind == "swiss_roll_2d":
        u = rng.uniform(0.0, 1.0, size=n)
        theta = 1.5 * math.pi * (1.0 + 2.0 * u)
        pts = np.stack([theta * np.cos(theta), theta * np.sin(theta)], axis=1) / (4.5 * math.pi)
        pts = pts + spec.noise * rng.standard_normal((n, 2))
        return _rotate(pts, spec.rotation_deg), None
    if spec.kind == "checkerboard":
        col = rng.integers(0, 4, size=n)
        row = 2 * rng.integers(0, 2, size=n) + (col % 2)
        pts = np.stack([col + rng.uniform(size=n), row + rng.uniform(size=n)], axis=1) / 2.0 - 1.0
        return _rotate(pts, spec.rotation_deg), 2 * col + row // 2 % 2
    pts, labels = load_file(spec.path)
    idx = rng.integers(0, len(pts), size=n)
    return pts[idx], None if labels is None else labels[idx]


def load_file(path: str | Path) -> tuple[np.ndarray, np.ndarray | None]:
    """Parse a CSV point set: one sample per line, optional final integer label.

    Lines starting with ``#`` are comments. The width of the first data row
    fixes the layout; a row of a different width is an error. When every
    row's final field is an integer and there are at least two fields, that
    column is read as labels.
    """
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"dataset file not found: {path}")
    rows: list[list[str]] = []
    lines: list[int] = []
    width = None
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = [f.strip() for f in line.split(",")]
        if width is None:
            width = len(fields)
        elif len(fields) != width:
            raise DatasetError(f"line {lineno}: expected {width} fields, got {len(fields)} (ragged row)")
        rows.append(fields)
        lines.append(lineno)
    if not rows:
        raise DatasetError(f"no data rows in {path}")
    values = np.empty((len(rows), width))
    for r, (fields, lineno) in enumerate(zip(rows, lines)):
        for c, f in enumerate(fields):
            try:
                values[r, c] = float(f)
            except ValueError:
                raise DatasetError(f"line {lineno}: non-numeric field {f!r}") from None
    if not np.isfinite(values).all():
        bad = lines[int(np.argwhere(~np.isfinite(values))[0, 0])]
        raise DatasetError(f"line {bad}: non-finite value")
    if width >= 2 and all(_is_int(fields[-1]) for fields in rows):
        return values[:, :-1].copy(), values[:, -1].astype(np.int64)
    return values, None


def _is_int(field: str) -> bool:
    try:
        int(field)
    except ValueError:
        return False
    return True


def format_float(x: float) -> str:
    return f"{x:.17g}"


def write_points(path: str | Path, points: np.ndarray, labels: np.ndarray | None = None) -> None:
    """Write one sample per line with 17 significant digits."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    with open(path, "w") as fh:
        for i, row in enumerate(points):
            fields = [format_float(v) for v in row]
            if labels is not None:
                fields.append(str(int(labels[i])))
            fh.write(",".join(fields) + "\n")


def target_spec(name: str, seed: int = 0) -> DatasetSpec:
    """Fine-tuning targets paired with the eight-Gaussians source."""
    if name == "rotated_eight_gaussians":
        return DatasetSpec(kind="eight_gaussians", rotation_deg=22.5, seed=seed)
    if name == "two_moons":
        return DatasetSpec(kind="two_moons", seed=seed)
    raise DatasetError(f"unknown fine-tuning target {name!r}")
