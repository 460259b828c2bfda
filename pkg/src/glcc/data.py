"""Multi-view datasets: file I/O, labeled/unlabeled splits and synthetic generators."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError

UNLABELED = "?"


@dataclass(frozen=True)
class FeatureView:
    name: str
    X: np.ndarray

    @property
    def dim(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class MultiFeatureDataset:
    """Aligned feature views with a partial one-hot label matrix.

    ``Y`` is ``n x c``; labeled rows are one-hot and unlabeled rows are zero.
    ``truth`` optionally holds the full ground-truth class index of every
    row (kept aside by :func:`apply_split` for evaluation).
    """

    views: tuple[FeatureView, ...]
    Y: np.ndarray
    labeled_mask: np.ndarray
    class_names: tuple[str, ...]
    truth: np.ndarray | None = field(default=None)

    def __post_init__(self):
        if not self.views:
            raise DataError("a dataset needs at least one view")
        n = self.views[0].X.shape[0]
        for v in self.views:
            if v.X.ndim != 2 or v.X.shape[0] != n:
                raise DataError(f"view '{v.name}' has shape {v.X.shape}, expected {n} rows")
        c = len(self.class_names)
        if self.Y.shape != (n, c):
            raise DataError(f"label matrix has shape {self.Y.shape}, expected {(n, c)}")
        if self.labeled_mask.shape != (n,):
            raise DataError(f"labeled mask has shape {self.labeled_mask.shape}, expected {(n,)}")
        sums = self.Y.sum(axis=1)
        if not (np.all(sums[self.labeled_mask] == 1) and np.all(sums[~self.labeled_mask] == 0)):
            raise DataError("labeled rows of Y must be one-hot and unlabeled rows all zero")
        if self.truth is not None and (self.truth.shape != (n,) or np.any((self.truth < 0) | (self.truth >= c))):
            raise DataError("ground truth must hold one class index in [0, c) per sample")

    @property
    def n(self) -> int:
        return self.views[0].X.shape[0]

    @property
    def m(self) -> int:
        return len(self.views)

    @property
    def c(self) -> int:
        return len(self.class_names)

    @property
    def dims(self) -> list[int]:
        return [v.dim for v in self.views]

    @property
    def view_names(self) -> list[str]:
        return [v.name for v in self.views]

    @property
    def Xs(self) -> list[np.ndarray]:
        return [v.X for v in self.views]

    @property
    def labels(self) -> np.ndarray:
        """Class index per row, -1 where unlabeled."""
        out = np.argmax(self.Y, axis=1)
        out[~self.labeled_mask] = -1
        return out

    @property
    def fully_labeled(self) -> bool:
        return bool(self.labeled_mask.all())

    def ground_truth(self) -> np.ndarray:
        if self.truth is not None:
            return self.truth
        if self.fully_labeled:
            return self.labels
        raise DataError("dataset has unlabeled rows and no ground truth")

    def subset(self, rows) -> "MultiFeatureDataset":
        rows = np.asarray(rows)
        return MultiFeatureDataset(
            views=tuple(FeatureView(v.name, v.X[rows]) for v in self.views),
            Y=self.Y[rows],
            labeled_mask=self.labeled_mask[rows],
            class_names=self.class_names,
            truth=None if self.truth is None else self.truth[rows],
        )


def one_hot(labels: np.ndarray, c: int) -> np.ndarray:
    """Rows for negative labels stay zero."""
    labels = np.asarray(labels)
    Y = np.zeros((labels.size, c))
    mask = labels >= 0
    Y[np.flatnonzero(mask), labels[mask]] = 1.0
    return Y


def from_labels(Xs: Sequence[np.ndarray], labels, class_names: Sequence[str], view_names: Sequence[str] | None = None, truth=None) -> MultiFeatureDataset:
    """Dataset from raw matrices and integer labels (-1 marks unlabeled)."""
    labels = np.asarray(labels, dtype=np.int64)
    if view_names is None:
        view_names = [f"view{i}" for i in range(len(Xs))]
    return MultiFeatureDataset(
        views=tuple(FeatureView(name, np.asarray(X, dtype=np.float64)) for name, X in zip(view_names, Xs)),
        Y=one_hot(labels, len(class_names)),
        labeled_mask=labels >= 0,
        class_names=tuple(class_names),
        truth=None if truth is None else np.asarray(truth, dtype=np.int64),
    )


# ---------------------------------------------------------------- file I/O


def read_matrix(path, delimiter: str = ",", header: bool = False) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"view file not found: {path}")
    rows = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        if header:
            next(reader, None)
        for lineno, row in enumerate(reader, start=2 if header else 1):
            if not row or all(not cell.strip() for cell in row):
                continue
            values = []
            for col, cell in enumerate(row, start=1):
                try:
                    values.append(float(cell))
                except ValueError:
                    raise DataError(f"{path}: non-numeric value {cell!r} at row {lineno}, column {col}") from None
            if rows and len(values) != len(rows[0]):
                raise DataError(f"{path}: row {lineno} has {len(values)} columns, expected {len(rows[0])}")
            rows.append(values)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return np.array(rows, dtype=np.float64)


def write_matrix(path, X: np.ndarray, delimiter: str = ",") -> None:
    # %.17g round-trips float64 exactly
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, X, delimiter=delimiter, fmt="%.17g")


def read_label_rows(path, n: int, delimiter: str = ",", header: bool = False) -> list[tuple[int, str]]:
    """``(index, token)`` pairs in file order, checked to cover ``0..n-1`` exactly once."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"label file not found: {path}")
    rows: list[tuple[int, str]] = []
    seen = np.zeros(n, dtype=bool)
    with path.open(newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        if header:
            next(reader, None)
        for lineno, row in enumerate(reader, start=2 if header else 1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 2:
                raise DataError(f"{path}: row {lineno} must have 2 columns (index, class), got {len(row)}")
            try:
                idx = int(row[0])
            except ValueError:
                raise DataError(f"{path}: bad sample index {row[0]!r} at row {lineno}") from None
            if not 0 <= idx < n:
                raise DataError(f"{path}: sample index {idx} at row {lineno} outside [0, {n})")
            if seen[idx]:
                raise DataError(f"{path}: sample index {idx} listed twice")
            seen[idx] = True
            rows.append((idx, row[1].strip()))
    missing = np.flatnonzero(~seen)
    if missing.size:
        raise DataError(f"{path}: no label entry for {missing.size} sample(s), first {missing[:5].tolist()}")
    return rows


def read_label_tokens(path, n: int, delimiter: str = ",", header: bool = False) -> list[str]:
    """Class token of every sample, by sample index."""
    tokens = [""] * n
    for idx, token in read_label_rows(path, n, delimiter, header):
        tokens[idx] = token
    return tokens


def class_order(tokens: Sequence[str]) -> tuple[str, ...]:
    names: list[str] = []
    for t in tokens:
        if t != UNLABELED and t not in names:
            names.append(t)
    return tuple(names)


def encode_tokens(tokens: Sequence[str], class_names: Sequence[str] | None = None) -> tuple[np.ndarray, tuple[str, ...]]:
    """Map class tokens to indices; new classes are numbered by first appearance."""
    if class_names is None:
        names = list(class_order(tokens))
    else:
        names = list(class_names)
        unknown = sorted({t for t in tokens if t != UNLABELED and t not in names})
        if unknown:
            raise DataError(f"unknown class token(s): {', '.join(unknown)}")
    lookup = {name: i for i, name in enumerate(names)}
    labels = np.array([lookup.get(t, -1) if t != UNLABELED else -1 for t in tokens], dtype=np.int64)
    return labels, tuple(names)


def load_dataset(
    view_paths: Sequence,
    label_path,
    delimiter: str = ",",
    header: bool = False,
    class_names: Sequence[str] | None = None,
    truth_path=None,
) -> MultiFeatureDataset:
    """Read delimited view files and an ``index,class`` label file ("?" = unlabeled)."""
    if not view_paths:
        raise DataError("no view files given")
    Xs = [read_matrix(p, delimiter, header) for p in view_paths]
    counts = [X.shape[0] for X in Xs]
    if len(set(counts)) > 1:
        listing = ", ".join(f"{p} ({c} rows)" for p, c in zip(view_paths, counts))
        raise DataError(f"views disagree on the number of samples: {listing}")
    rows = read_label_rows(label_path, counts[0], delimiter, header)
    tokens = [""] * counts[0]
    for idx, token in rows:
        tokens[idx] = token
    # classes are numbered by first appearance in the file, not by sample index
    labels, names = encode_tokens(tokens, class_names or class_order([t for _, t in rows]))
    truth = None
    if truth_path is not None:
        truth_tokens = read_label_tokens(truth_path, counts[0], delimiter, header)
        truth, _ = encode_tokens(truth_tokens, names)
        if np.any(truth < 0):
            raise DataError(f"{truth_path}: ground truth must label every sample")
    view_names = [Path(p).stem for p in view_paths]
    if len(set(view_names)) != len(view_names):
        view_names = [f"view{i}" for i in range(len(view_paths))]
    return from_labels(Xs, labels, names, view_names, truth)


def write_labels(path, labels: np.ndarray, class_names: Sequence[str], delimiter: str = ",") -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        for i, lab in enumerate(labels):
            writer.writerow([i, class_names[lab] if lab >= 0 else UNLABELED])


def save_dataset(dataset: MultiFeatureDataset, out_dir, prefix: str = "", delimiter: str = ",") -> dict:
    """Write views, labels and (if present) ground truth; returns the written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {"views": [], "labels": str(out_dir / f"{prefix}labels.csv")}
    for i, v in enumerate(dataset.views):
        p = out_dir / f"{prefix}view{i}.csv"
        write_matrix(p, v.X, delimiter)
        paths["views"].append(str(p))
    write_labels(paths["labels"], dataset.labels, dataset.class_names, delimiter)
    if dataset.truth is not None:
        paths["truth"] = str(out_dir / f"{prefix}truth.csv")
        write_labels(paths["truth"], dataset.truth, dataset.class_names, delimiter)
    return paths


# ---------------------------------------------------------------- splits


@dataclass(frozen=True)
class SplitSpec:
    labeled_fraction: float
    stratified: bool = True
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.labeled_fraction <= 1:
            raise ConfigError(f"labeled_fraction must be in (0, 1], got {self.labeled_fraction}")


def apply_split(dataset: MultiFeatureDataset, spec: SplitSpec) -> MultiFeatureDataset:
    """Hide the labels of a random subset of rows.

    Stratified splits keep ``ceil(fraction * n_class)`` labels per class,
    otherwise ``ceil(fraction * n)`` labels overall.  The full labels are
    kept in ``truth``.
    """
    if not dataset.fully_labeled:
        raise DataError("apply_split needs a fully labeled dataset")
    truth = dataset.labels
    rng = np.random.default_rng(spec.seed)
    if spec.stratified:
        keep = []
        for k, name in enumerate(dataset.class_names):
            members = np.flatnonzero(truth == k)
            count = math.ceil(spec.labeled_fraction * members.size)
            if count == 0:
                raise DataError(f"class '{name}' has no samples, so a stratified split cannot label it")
            keep.append(rng.permutation(members)[:count])
        keep = np.concatenate(keep)
    else:
        keep = rng.permutation(dataset.n)[: math.ceil(spec.labeled_fraction * dataset.n)]
    mask = np.zeros(dataset.n, dtype=bool)
    mask[keep] = True
    Y = dataset.Y.copy()
    Y[~mask] = 0.0
    return replace(dataset, Y=Y, labeled_mask=mask, truth=truth.copy())


# ---------------------------------------------------------------- synthetic data


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for :func:`generate_synthetic`.

    ``manifold`` is ``"gaussian"`` (well separated clusters) or ``"arcs"``
    (interleaved half circles, two-moons style for ``c=2``).  ``noise`` is
    either one per-view noise standard deviation or a list of ``m`` of them;
    ``dims`` defaults to ``8 + 4 * i`` for view ``i``.
    """

    n: int = 200
    m: int = 2
    c: int = 2
    noise: float | tuple = 0.1
    manifold: str = "arcs"
    dims: tuple | None = None
    seed: int = 0

    def __post_init__(self):
        if self.c < 2:
            raise ConfigError(f"need at least 2 classes, got c={self.c}")
        if self.m < 1:
            raise ConfigError(f"need at least one view, got m={self.m}")
        if self.n < 4 * self.c:
            raise ConfigError(f"need n >= 4c samples (n={self.n}, c={self.c})")
        if self.manifold not in ("gaussian", "arcs"):
            raise ConfigError(f"unknown manifold type {self.manifold!r}")
        if self.dims is not None and len(self.dims) != self.m:
            raise ConfigError(f"dims lists {len(self.dims)} entries for m={self.m} views")
        if self.dims is not None and min(self.dims) < 2:
            raise ConfigError("every view needs at least 2 dimensions")
        if len(self.noise_levels()) != self.m or min(self.noise_levels()) < 0:
            raise ConfigError("noise must be one non-negative value or one per view")

    def noise_levels(self) -> list[float]:
        if isinstance(self.noise, (int, float)):
            return [float(self.noise)] * self.m
        return [float(x) for x in self.noise]

    def view_dims(self) -> list[int]:
        return list(self.dims) if self.dims is not None else [8 + 4 * i for i in range(self.m)]

    @classmethod
    def from_dict(cls, data: dict) -> "SyntheticSpec":
        known = {"n", "m", "c", "noise", "manifold", "dims", "seed"}
        kwargs = {k: v for k, v in data.items() if k in known}
        if isinstance(kwargs.get("noise"), list):
            kwargs["noise"] = tuple(kwargs["noise"])
        if isinstance(kwargs.get("dims"), list):
            kwargs["dims"] = tuple(kwargs["dims"])
        return cls(**kwargs)


def _latent_gaussian(labels: np.ndarray, c: int, rng) -> np.ndarray:
    # unit-variance clusters clipped at radius 3, centers 24 apart on a circle
    radius = 12.0 / np.sin(np.pi / c)
    angles = 2 * np.pi * np.arange(c) / c
    centers = radius * np.column_stack([np.cos(angles), np.sin(angles)])
    offsets = rng.normal(size=(labels.size, 2))
    norms = np.linalg.norm(offsets, axis=1, keepdims=True)
    offsets *= np.minimum(1.0, 3.0 / np.maximum(norms, 1e-300))
    return centers[labels] + offsets


def _latent_arcs(labels: np.ndarray, rng) -> np.ndarray:
    theta = rng.uniform(0.0, np.pi, size=labels.size)
    odd = labels % 2 == 1
    x = np.where(odd, labels - np.cos(theta), labels + np.cos(theta))
    y = np.where(odd, 0.5 - np.sin(theta), np.sin(theta))
    return np.column_stack([x, y])


def _embedding(dim: int, rng) -> np.ndarray:
    """Random ``dim x 2`` map with singular values in [1, 2]."""
    Q, _ = np.linalg.qr(rng.normal(size=(dim, 2)))
    angle = rng.uniform(0, 2 * np.pi)
    R = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
    return Q @ np.diag(rng.uniform(1.0, 2.0, size=2)) @ R.T


def generate_synthetic(spec: SyntheticSpec) -> MultiFeatureDataset:
    """Fully labeled multi-view dataset built from a 2-D latent class structure.

    Each view is an independent random linear embedding of the latent points
    plus an offset and independent Gaussian noise.
    """
    rng = np.random.default_rng(spec.seed)
    labels = rng.permutation(np.arange(spec.n) % spec.c)
    if spec.manifold == "gaussian":
        Z = _latent_gaussian(labels, spec.c, rng)
    else:
        Z = _latent_arcs(labels, rng)
    Xs = []
    for dim, sigma in zip(spec.view_dims(), spec.noise_levels()):
        A = _embedding(dim, rng)
        offset = rng.normal(size=dim)
        Xs.append(Z @ A.T + offset + sigma * rng.normal(size=(spec.n, dim)))
    names = [f"class{k}" for k in range(spec.c)]
    return from_labels(Xs, labels, names, [f"view{i}" for i in range(spec.m)], truth=labels)
