"""Accuracy / MAP scoring, labeled-fraction sweeps and lambda-gamma grid searches."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .config import TrainConfig
from .container import write_container
from .data import MultiFeatureDataset, SplitSpec, apply_split
from .errors import DataError, GLCCError
from .graphs import GraphSet, build_graphs
from .model import ConvergenceTrace, predict_batch, train
from .parallel import ordered_map

log = logging.getLogger(__name__)

DEFAULT_GRID = (1e-4, 1e-2, 1.0, 1e2, 1e4)
DEFAULT_FRACTIONS = (0.1, 0.3, 0.5, 0.7, 0.9)
SUMMARY_FORMAT = "glcc-summary"


@dataclass
class EvalReport:
    accuracy: float
    map: float
    per_class_ap: np.ndarray
    confusion: np.ndarray
    n_test: int

    def check(self) -> None:
        """Assert the internal consistency relations between the fields."""
        assert self.confusion.sum() == self.n_test
        assert np.isclose(self.accuracy, np.trace(self.confusion) / self.n_test, rtol=0, atol=1e-12)
        defined = self.per_class_ap[~np.isnan(self.per_class_ap)]
        assert np.all((defined >= 0) & (defined <= 1))
        assert np.isclose(self.map, defined.mean(), rtol=0, atol=1e-12)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "map": self.map,
            "per_class_ap": self.per_class_ap.tolist(),
            "confusion": self.confusion.tolist(),
            "n_test": self.n_test,
        }


def average_precision(scores: np.ndarray, relevant: np.ndarray) -> float:
    """Non-interpolated ranking AP; equal scores are ranked by sample index.

    Returns NaN when nothing is relevant.
    """
    scores = np.asarray(scores, dtype=np.float64)
    relevant = np.asarray(relevant, dtype=bool)
    order = np.lexsort((np.arange(scores.size), -scores))
    hits = relevant[order]
    if not hits.any():
        return float("nan")
    ranks = np.flatnonzero(hits) + 1
    return float(np.mean(np.arange(1, ranks.size + 1) / ranks))


def score(labels: np.ndarray, scores: np.ndarray, truth: np.ndarray) -> EvalReport:
    """Accuracy, per-class AP and MAP (macro mean over classes that occur in ``truth``)."""
    labels = np.asarray(labels, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.int64)
    if truth.size == 0:
        raise DataError("cannot score an empty test set")
    if labels.shape != truth.shape or scores.shape[0] != truth.size:
        raise DataError(
            f"prediction/truth length mismatch: {labels.size} labels, {scores.shape[0]} score rows, {truth.size} truths"
        )
    c = scores.shape[1]
    if truth.min() < 0 or truth.max() >= c:
        raise DataError("truth must hold a class index in [0, c) for every test sample")
    confusion = np.zeros((c, c), dtype=np.int64)
    np.add.at(confusion, (truth, labels), 1)
    ap = np.array([average_precision(scores[:, k], truth == k) for k in range(c)])
    return EvalReport(
        accuracy=float(np.mean(labels == truth)),
        map=float(np.nanmean(ap)),
        per_class_ap=ap,
        confusion=confusion,
        n_test=int(truth.size),
    )


# ---------------------------------------------------------------- supervised baseline


def fit_ridge(X: np.ndarray, Y: np.ndarray, gamma: float) -> tuple[np.ndarray, np.ndarray]:
    """Ridge regression with an unpenalized bias."""
    mu, y_mu = X.mean(axis=0), Y.mean(axis=0)
    Xc = X - mu
    gram = Xc.T @ Xc
    gram[np.diag_indices_from(gram)] += gamma
    P = np.linalg.solve(gram, Xc.T @ (Y - y_mu))
    return P, y_mu - mu @ P


def ridge_baseline(train_set: MultiFeatureDataset, test_views: Sequence[np.ndarray], truth: np.ndarray, gamma: float) -> EvalReport:
    """Best single-view ridge classifier trained on the labeled rows only (best by accuracy, then MAP)."""
    mask = train_set.labeled_mask
    best = None
    for X, Z in zip(train_set.Xs, test_views):
        P, B = fit_ridge(X[mask], train_set.Y[mask], gamma)
        s = Z @ P + B
        report = score(np.argmax(s, axis=1), s, truth)
        if best is None or (report.accuracy, report.map) > (best.accuracy, best.map):
            best = report
    return best


# ---------------------------------------------------------------- sweeps


@dataclass
class SweepRun:
    fraction: float
    repeat: int
    method: str
    report: EvalReport
    trace: ConvergenceTrace | None = None


@dataclass
class SweepTable:
    fractions: list
    methods: list
    runs: list = field(default_factory=list)

    def stats(self, method: str, fraction: float, metric: str = "accuracy") -> tuple[float, float]:
        values = [getattr(r.report, metric) for r in self.runs if r.method == method and r.fraction == fraction]
        return float(np.mean(values)), float(np.std(values))

    def rows(self) -> list[list]:
        out = []
        for method in self.methods:
            for f in self.fractions:
                acc = self.stats(method, f, "accuracy")
                mp = self.stats(method, f, "map")
                n = sum(1 for r in self.runs if r.method == method and r.fraction == f)
                out.append([method, f, n, acc[0], acc[1], mp[0], mp[1]])
        return out

    def to_text(self, delimiter: str = ",") -> str:
        header = ["method", "fraction", "repeats", "accuracy_mean", "accuracy_std", "map_mean", "map_std"]
        lines = [delimiter.join(header)]
        for row in self.rows():
            lines.append(delimiter.join(repr(v) if isinstance(v, float) else str(v) for v in row))
        return "\n".join(lines) + "\n"


def _split_seed(seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1)[0])


def sweep_labeled_fraction(
    dataset: MultiFeatureDataset,
    fractions: Sequence[float],
    config: TrainConfig,
    repeats: int = 1,
    seed: int = 0,
    graphs: GraphSet | None = None,
    methods: Sequence[str] = ("glcc",),
) -> SweepTable:
    """Train on random labeled subsets of each size and score on the rows left unlabeled.

    ``methods`` may include ``"glcc"`` and ``"ridge"`` (best single-view
    supervised ridge).  All methods see the same splits.  Graphs depend only
    on the features, so they are built once.
    """
    if not dataset.fully_labeled:
        raise DataError("a labeled-fraction sweep needs a fully labeled dataset")
    fractions = [float(f) for f in fractions]
    if not fractions or any(not 0 < f < 1 for f in fractions):
        raise DataError(f"fractions must lie strictly between 0 and 1, got {fractions}")
    if repeats < 1:
        raise DataError("repeats must be >= 1")
    unknown = set(methods) - {"glcc", "ridge"}
    if unknown:
        raise DataError(f"unknown method(s): {', '.join(sorted(unknown))}")
    if graphs is None and "glcc" in methods:
        graphs = build_graphs(dataset.Xs, config, dataset.view_names)

    def job(key):
        fi, rep = key
        f = fractions[fi]
        split = apply_split(dataset, SplitSpec(f, stratified=True, seed=_split_seed(seed, fi, rep)))
        held = ~split.labeled_mask
        test_views = [X[held] for X in split.Xs]
        truth = split.truth[held]
        runs = []
        for method in methods:
            try:
                if method == "glcc":
                    params, trace = train(split, graphs, config)
                    labels, s = predict_batch(params, test_views)
                    runs.append(SweepRun(f, rep, method, score(labels, s, truth), trace))
                else:
                    runs.append(SweepRun(f, rep, method, ridge_baseline(split, test_views, truth, config.gamma)))
            except GLCCError as exc:
                raise type(exc)(f"fraction {f}, repeat {rep}, method {method}: {exc}") from exc
        return runs

    keys = [(fi, rep) for fi in range(len(fractions)) for rep in range(repeats)]
    table = SweepTable(fractions=fractions, methods=list(methods))
    for runs in ordered_map(job, keys):
        table.runs.extend(runs)
    return table


# ---------------------------------------------------------------- grid search


@dataclass
class GridResult:
    lambdas: list
    gammas: list
    cells: np.ndarray  # metric value, shape (len(lambdas), len(gammas))
    metric: str
    best: tuple = ()

    def to_text(self, delimiter: str = ",") -> str:
        lines = [delimiter.join(["lambda", "gamma", self.metric])]
        for i, lam in enumerate(self.lambdas):
            for j, gam in enumerate(self.gammas):
                lines.append(delimiter.join([repr(float(lam)), repr(float(gam)), repr(float(self.cells[i, j]))]))
        return "\n".join(lines) + "\n"


def _best_cell(lambdas, gammas, cells) -> tuple[float, float, float]:
    best = None
    for i in sorted(range(len(lambdas)), key=lambda i: lambdas[i]):
        for j in sorted(range(len(gammas)), key=lambda j: gammas[j]):
            if best is None or cells[i, j] > best[2]:
                best = (float(lambdas[i]), float(gammas[j]), float(cells[i, j]))
    return best


def grid_search(
    dataset: MultiFeatureDataset,
    lambda_set: Sequence[float] = DEFAULT_GRID,
    gamma_set: Sequence[float] = DEFAULT_GRID,
    config: TrainConfig | None = None,
    seed: int = 0,
    labeled_fraction: float = 0.3,
    metric: str = "accuracy",
    graphs: GraphSet | None = None,
    cell_order: Sequence[int] | None = None,
) -> GridResult:
    """Score every (lambda, gamma) pair on one fixed split.

    A fully labeled dataset is split with ``labeled_fraction``; a partially
    labeled one with ground truth is used as is.  Scores come from the rows
    without labels.  ``best`` is ``(lambda, gamma, value)``, ties going to the
    smallest lambda and then the smallest gamma.  ``cell_order`` only changes
    the evaluation order (cells are flattened row-major over lambda x gamma).
    """
    config = config or TrainConfig()
    lambdas, gammas = [float(x) for x in lambda_set], [float(x) for x in gamma_set]
    if not lambdas or not gammas:
        raise DataError("grid axes must be non-empty")
    if metric not in ("accuracy", "map"):
        raise DataError(f"unknown metric {metric!r}")
    if dataset.fully_labeled:
        split = apply_split(dataset, SplitSpec(labeled_fraction, stratified=True, seed=seed))
    elif dataset.truth is not None:
        split = dataset
    else:
        raise DataError("grid search needs ground truth for the unlabeled rows")
    held = ~split.labeled_mask
    if not held.any():
        raise DataError("grid search needs at least one unlabeled row to score")
    if graphs is None:
        graphs = build_graphs(split.Xs, config, split.view_names)
    test_views = [X[held] for X in split.Xs]
    truth = split.truth[held]
    cells = [(i, j) for i in range(len(lambdas)) for j in range(len(gammas))]
    if cell_order is not None:
        if sorted(cell_order) != list(range(len(cells))):
            raise DataError("cell_order must be a permutation of the cell indices")
        cells = [cells[k] for k in cell_order]

    def job(cell):
        i, j = cell
        cfg = config.replace(lam=lambdas[i], gamma=gammas[j])
        try:
            params, _ = train(split, graphs, cfg)
        except GLCCError as exc:
            raise type(exc)(f"cell lambda={lambdas[i]}, gamma={gammas[j]}: {exc}") from exc
        labels, s = predict_batch(params, test_views)
        return getattr(score(labels, s, truth), metric)

    values = np.full((len(lambdas), len(gammas)), np.nan)
    for (i, j), v in zip(cells, ordered_map(job, cells)):
        values[i, j] = v
    return GridResult(lambdas, gammas, values, metric, _best_cell(lambdas, gammas, values))


def write_summary(path, kind: str, payload: dict, arrays: dict | None = None) -> None:
    """Structured result summary in the shared container format."""
    write_container(path, {"format": SUMMARY_FORMAT, "version": 1, "kind": kind, **payload}, arrays or {})
