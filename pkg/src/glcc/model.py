"""Objective, closed-form block updates, alternating trainer and joint predictor.

The trained quantity is

    J = sum_i ||F - X_i P_i - 1 B_i||^2 + gamma sum_i ||P_i||^2
        + tr((F - Y)^T W (F - Y)) + lambda tr(F^T G F),

    G = sum_i alpha_i^r L_i + sum_i beta_i^r Omega_i,

with ``alpha`` and ``beta`` on the probability simplex.  Every block update
below is the exact minimizer of ``J`` over its block, so ``J`` never
increases during training.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .config import TrainConfig
from .container import read_container, write_container
from .data import FeatureView, MultiFeatureDataset
from .errors import ConfigError, DataError, NumericalError
from .graphs import GraphSet
from .parallel import ordered_map

log = logging.getLogger(__name__)

TRACE_EPS = 1e-12
DESCENT_SLACK = 1e-8
REFINE_STEPS = 2
MODEL_FORMAT = "glcc-model"
MODEL_VERSION = 1

__all__ = [
    "TrainConfig",
    "ModelParams",
    "ConvergenceTrace",
    "selection_weights",
    "group_graph",
    "objective",
    "objective_terms",
    "init_F",
    "update_P",
    "update_B",
    "update_F",
    "update_weights",
    "train",
    "predict",
    "predict_batch",
    "save_model",
    "load_model",
]


@dataclass
class ModelParams:
    """Per-view sub-classifiers ``P[i]`` (d_i x c) and biases ``B[i]`` (c,), graph weights, and the training-time label matrix ``F``."""

    P: list
    B: list
    alpha: np.ndarray
    beta: np.ndarray
    F: np.ndarray | None = None
    view_names: tuple = ()
    class_names: tuple = ()

    @property
    def m(self) -> int:
        return len(self.P)

    @property
    def c(self) -> int:
        return self.P[0].shape[1]

    @property
    def dims(self) -> list[int]:
        return [P.shape[0] for P in self.P]


@dataclass
class ConvergenceTrace:
    """Objective after initialization and after every iteration, plus step-level detail.

    ``objectives[0]`` is the value at initialization; ``objectives[t]`` the
    value after iteration ``t``.  ``steps[t-1]`` lists the objective after the
    P, B, F and weight updates of iteration ``t``.  ``delta_P[t-1]`` is
    ``sum_i ||P_i^t - P_i^{t-1}||_F`` with ``P^0 = 0``.
    """

    objectives: list = field(default_factory=list)
    delta_P: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self) -> int:
        return len(self.delta_P)

    def relative_changes(self) -> list[float]:
        J = self.objectives
        return [abs(J[t] - J[t - 1]) / max(abs(J[t - 1]), TRACE_EPS) for t in range(1, len(J))]

    def to_text(self, delimiter: str = ",") -> str:
        lines = [delimiter.join(["iteration", "objective", "delta_P"])]
        lines.append(delimiter.join(["0", repr(float(self.objectives[0])), "nan"]))
        for t, (J, d) in enumerate(zip(self.objectives[1:], self.delta_P), start=1):
            lines.append(delimiter.join([str(t), repr(float(J)), repr(float(d))]))
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- building blocks


def selection_weights(labeled_mask, w_large: float) -> np.ndarray:
    """Diagonal of the selection matrix: ``w_large`` on labeled rows, 0 elsewhere."""
    return np.where(np.asarray(labeled_mask, dtype=bool), float(w_large), 0.0)


def group_graph(graphs: GraphSet, alpha, beta, r: float) -> sp.csr_matrix:
    G = sp.csr_matrix((graphs.n, graphs.n))
    for a, L in zip(alpha, graphs.laplacians):
        G = G + (a**r) * L
    for b, O in zip(beta, graphs.hessians):
        G = G + (b**r) * O
    return G.tocsr()


def _trace_form(M, F: np.ndarray) -> float:
    return float(np.sum(F * (M @ F)))


def objective_terms(dataset: MultiFeatureDataset, graphs: GraphSet, params: ModelParams, config: TrainConfig) -> dict:
    """The four summands of the objective, keyed ``fit``, ``ridge``, ``loss``, ``graph``."""
    F = params.F
    W = selection_weights(dataset.labeled_mask, config.w_large)
    fit = sum(float(np.sum((F - X @ P - B) ** 2)) for X, P, B in zip(dataset.Xs, params.P, params.B))
    ridge = config.gamma * sum(float(np.sum(P**2)) for P in params.P)
    loss = float(np.sum(W[:, None] * (F - dataset.Y) ** 2))
    G = group_graph(graphs, params.alpha, params.beta, config.r)
    graph = config.lam * _trace_form(G, F)
    terms = {"fit": fit, "ridge": ridge, "loss": loss, "graph": graph}
    bad = [name for name, value in terms.items() if not np.isfinite(value)]
    if bad:
        raise NumericalError(f"non-finite objective term(s): {', '.join(bad)}")
    return terms


def objective(dataset: MultiFeatureDataset, graphs: GraphSet, params: ModelParams, config: TrainConfig) -> float:
    return float(sum(objective_terms(dataset, graphs, params, config).values()))


def _spd_solve(M: sp.spmatrix, rhs: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(rhs)):
        raise NumericalError(f"non-finite right-hand side in the {what} system")
    try:
        M = sp.csc_matrix(M)
        lu = splu(M, permc_spec="MMD_AT_PLUS_A")
    except RuntimeError as exc:
        raise NumericalError(f"{what} system is singular: {exc}") from exc
    out = lu.solve(np.asfortranarray(rhs))
    # refinement recovers the digits lost to the large selection weights
    for _ in range(REFINE_STEPS):
        out += lu.solve(np.asfortranarray(rhs - M @ out))
    if not np.all(np.isfinite(out)):
        raise NumericalError(f"{what} solve produced non-finite values")
    return out


def init_F(graphs: GraphSet, Y: np.ndarray, W: np.ndarray, config: TrainConfig) -> np.ndarray:
    """Label propagation start: solve ``(W + lambda G) F = W Y`` with uniform graph weights."""
    W = np.asarray(W, dtype=np.float64)
    if not np.any(W > 0):
        raise DataError("no supervision: at least one labeled sample is required")
    uniform = np.full(graphs.m, 1.0 / graphs.m)
    G = group_graph(graphs, uniform, uniform, config.r)
    M = sp.diags(W) + config.lam * G
    return _spd_solve(M, W[:, None] * Y, "initial label")


def update_P(X: np.ndarray, F: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    """Ridge step ``P = (X^T X + gamma I)^{-1} X^T (F - 1 B)``."""
    gram = X.T @ X
    gram[np.diag_indices_from(gram)] += gamma
    return la.solve(gram, X.T @ (F - B), assume_a="pos")


def update_B(X: np.ndarray, F: np.ndarray, P: np.ndarray) -> np.ndarray:
    """Column mean of the residual ``F - X P``."""
    return (F - X @ P).mean(axis=0)


def update_F(
    dataset: MultiFeatureDataset,
    graphs: GraphSet,
    params: ModelParams,
    W: np.ndarray,
    Y: np.ndarray,
    config: TrainConfig,
) -> np.ndarray:
    """Solve ``(m I + W + lambda G) F = sum_i (X_i P_i + 1 B_i) + W Y``."""
    m = len(params.P)
    G = group_graph(graphs, params.alpha, params.beta, config.r)
    M = sp.diags(m + np.asarray(W, dtype=np.float64)) + config.lam * G
    rhs = W[:, None] * Y
    for X, P, B in zip(dataset.Xs, params.P, params.B):
        rhs = rhs + X @ P + B
    return _spd_solve(M, rhs, "label")


def _simplex_weights(traces: np.ndarray, r: float, eps: float) -> np.ndarray:
    if np.all(traces <= eps):
        log.info("all graph energies vanish; using uniform weights")
        return np.full(traces.size, 1.0 / traces.size)
    # w_i proportional to t_i^(-1/(r-1)), evaluated in log space
    logw = -np.log(np.maximum(traces, eps)) / (r - 1.0)
    w = np.exp(logw - logw.max())
    return w / w.sum()


def update_weights(F: np.ndarray, graphs: GraphSet, r: float, eps: float = TRACE_EPS) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form simplex minimizers of ``sum alpha_i^r tr(F^T L_i F)`` and the Hessian analogue."""
    if r <= 1:
        raise ConfigError(f"r must exceed 1, got {r}")
    t = np.array([_trace_form(L, F) for L in graphs.laplacians])
    s = np.array([_trace_form(O, F) for O in graphs.hessians])
    return _simplex_weights(t, r, eps), _simplex_weights(s, r, eps)


# ---------------------------------------------------------------- training


class _RidgeSolver:
    """Per-view Cholesky factors of ``X^T X + gamma I``, reused across iterations."""

    def __init__(self, X: np.ndarray, gamma: float):
        self.X = X
        gram = X.T @ X
        gram[np.diag_indices_from(gram)] += gamma
        self.factor = la.cho_factor(gram)

    def __call__(self, F: np.ndarray, B: np.ndarray) -> np.ndarray:
        return la.cho_solve(self.factor, self.X.T @ (F - B))


def _check_compatible(dataset: MultiFeatureDataset, graphs: GraphSet) -> None:
    if graphs.m != dataset.m:
        raise DataError(f"graph set has {graphs.m} views but the dataset has {dataset.m}")
    if graphs.n != dataset.n:
        raise DataError(f"graphs are {graphs.n}x{graphs.n} but the dataset has {dataset.n} samples")


def train(dataset: MultiFeatureDataset, graphs: GraphSet, config: TrainConfig) -> tuple[ModelParams, ConvergenceTrace]:
    """Alternate P, B, F and weight updates until the relative objective change drops below ``tol``.

    Raises :class:`NumericalError` if any update increases the objective by
    more than a relative ``1e-8``, since that can only come from a bug or a
    failed solve.
    """
    _check_compatible(dataset, graphs)
    m, c = dataset.m, dataset.c
    W = selection_weights(dataset.labeled_mask, config.w_large)
    Y = dataset.Y
    params = ModelParams(
        P=[np.zeros((d, c)) for d in dataset.dims],
        B=[np.zeros(c) for _ in range(m)],
        alpha=np.full(m, 1.0 / m),
        beta=np.full(m, 1.0 / m),
        F=init_F(graphs, Y, W, config),
        view_names=tuple(dataset.view_names),
        class_names=tuple(dataset.class_names),
    )
    # Work on centered views: X P + 1 B == (X - mu) P + 1 (B + mu P), so the
    # objective is unchanged, but centered columns decouple the P and B blocks.
    means = [X.mean(axis=0) for X in dataset.Xs]
    centered = replace(
        dataset, views=tuple(FeatureView(v.name, v.X - mu) for v, mu in zip(dataset.views, means))
    )
    solvers = ordered_map(lambda X: _RidgeSolver(X, config.gamma), centered.Xs)
    trace = ConvergenceTrace(objectives=[objective(centered, graphs, params, config)])

    def checked(previous: float, step: str, t: int) -> float:
        value = objective(centered, graphs, params, config)
        if value > previous + DESCENT_SLACK * abs(previous) + 1e-300:
            raise NumericalError(
                f"objective increased in the {step} update of iteration {t}: {previous!r} -> {value!r}"
            )
        return value

    for t in range(1, config.max_iter + 1):
        previous_P = params.P
        J = trace.objectives[-1]
        params.P = ordered_map(lambda i: solvers[i](params.F, params.B[i]), range(m))
        J_P = checked(J, "P", t)
        params.B = [update_B(X, params.F, P) for X, P in zip(centered.Xs, params.P)]
        J_B = checked(J_P, "B", t)
        params.F = update_F(centered, graphs, params, W, Y, config)
        J_F = checked(J_B, "F", t)
        params.alpha, params.beta = update_weights(params.F, graphs, config.r)
        J_w = checked(J_F, "weight", t)

        trace.steps.append([J_P, J_B, J_F, J_w])
        trace.objectives.append(J_w)
        trace.delta_P.append(float(sum(np.linalg.norm(a - b) for a, b in zip(params.P, previous_P))))
        change = abs(J_w - J) / max(abs(J), TRACE_EPS)
        log.debug("iteration %d: objective %.10g (relative change %.3g)", t, J_w, change)
        if change < config.tol:
            trace.converged = True
            break
    params.B = [B - mu @ P for B, P, mu in zip(params.B, params.P, means)]
    return params, trace


# ---------------------------------------------------------------- prediction


def predict_batch(params: ModelParams, Zs: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Labels and ``(n_test, c)`` scores ``sum_i (Z_i P_i + B_i)``; ties go to the lowest class."""
    if len(Zs) != params.m:
        raise DataError(f"expected {params.m} views, got {len(Zs)}")
    scores = None
    for i, (Z, P, B) in enumerate(zip(Zs, params.P, params.B)):
        Z = np.asarray(Z, dtype=np.float64)
        if Z.ndim == 1:
            Z = Z[None, :]
        name = params.view_names[i] if i < len(params.view_names) else str(i)
        if Z.shape[1] != P.shape[0]:
            raise DataError(f"view {i} ('{name}') has {Z.shape[1]} features, the model expects {P.shape[0]}")
        if scores is not None and Z.shape[0] != scores.shape[0]:
            raise DataError(f"view {i} ('{name}') has {Z.shape[0]} samples, expected {scores.shape[0]}")
        part = Z @ P + B
        scores = part if scores is None else scores + part
    return np.argmax(scores, axis=1), scores


def predict(params: ModelParams, z: Sequence[np.ndarray]) -> tuple[int, np.ndarray]:
    """Single-sample prediction from one feature vector per view."""
    labels, scores = predict_batch(params, [np.asarray(v, dtype=np.float64).reshape(1, -1) for v in z])
    return int(labels[0]), scores[0]


# ---------------------------------------------------------------- model file


def save_model(path, params: ModelParams, config: TrainConfig) -> None:
    """Write a versioned model container.

    ``meta.json`` holds ``c``, ``m``, view names and dimensions, class names,
    ``alpha``, ``beta`` and the training config; the arrays ``P{i}``,
    ``B{i}``, ``alpha`` and ``beta`` are stored bit-exactly.
    """
    meta = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "c": params.c,
        "m": params.m,
        "view_names": list(params.view_names),
        "dims": params.dims,
        "class_names": list(params.class_names),
        "alpha": params.alpha,
        "beta": params.beta,
        "config": config.to_dict(),
    }
    arrays = {}
    for i, (P, B) in enumerate(zip(params.P, params.B)):
        arrays[f"P{i}"] = P
        arrays[f"B{i}"] = B
    arrays["alpha"] = params.alpha
    arrays["beta"] = params.beta
    write_container(path, meta, arrays)


def load_model(path) -> tuple[ModelParams, TrainConfig]:
    meta, arrays = read_container(path, MODEL_FORMAT)
    if meta.get("version") != MODEL_VERSION:
        raise DataError(f"{path}: unsupported model version {meta.get('version')}")
    m = int(meta["m"])
    params = ModelParams(
        P=[arrays[f"P{i}"] for i in range(m)],
        B=[arrays[f"B{i}"] for i in range(m)],
        alpha=arrays["alpha"],
        beta=arrays["beta"],
        view_names=tuple(meta["view_names"]),
        class_names=tuple(meta["class_names"]),
    )
    return params, TrainConfig.from_dict(meta["config"])
