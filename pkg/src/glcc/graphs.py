"""k-NN adjacency, graph Laplacian and Hessian energy matrices.

All matrices are returned as canonical ``scipy.sparse.csr_matrix`` objects:
float64, duplicates summed, explicit zeros removed and column indices sorted.
Neighbor searches are exact (brute force) and break distance ties by the
lower sample index, so every builder is deterministic.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.spatial.distance import cdist

from .config import SUPPORTED_METRICS, TrainConfig, min_hessian_neighbors
from .container import read_container, write_container
from .errors import ConfigError, DataError, ParameterError
from .parallel import ordered_map

log = logging.getLogger(__name__)

_CHUNK_ELEMENTS = 1 << 22
CACHE_FORMAT = "glcc-graph-cache"
CACHE_VERSION = 1


def _check_features(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise DataError(f"feature matrix must be 2-D, got shape {X.shape}")
    bad = ~np.isfinite(X).all(axis=1)
    if bad.any():
        rows = np.flatnonzero(bad)
        shown = ", ".join(str(r) for r in rows[:10])
        raise DataError(f"non-finite feature values in row(s) {shown}" + (" ..." if rows.size > 10 else ""))
    return X


def zscore(X: np.ndarray) -> np.ndarray:
    """Column-wise standardization; constant columns are only centered."""
    std = X.std(axis=0)
    std[std == 0] = 1.0
    return (X - X.mean(axis=0)) / std


def canonical(M) -> sp.csr_matrix:
    M = sp.csr_matrix(M, dtype=np.float64)
    M.sum_duplicates()
    M.eliminate_zeros()
    M.sort_indices()
    return M


def nearest_neighbors(X, k: int, metric: str = "euclidean") -> np.ndarray:
    """Indices of the ``k`` nearest other samples of every row, closest first.

    Distances are computed exactly in row chunks; ties go to the lower index.
    """
    X = _check_features(X)
    n = X.shape[0]
    if metric not in SUPPORTED_METRICS:
        raise ParameterError(f"unsupported metric {metric!r}")
    if not 1 <= k <= n - 1:
        raise ParameterError(f"neighbor count k={k} out of range [1, {n - 1}] for n={n}")
    out = np.empty((n, k), dtype=np.int64)
    step = max(1, _CHUNK_ELEMENTS // max(n, 1))
    for start in range(0, n, step):
        stop = min(n, start + step)
        D = cdist(X[start:stop], X, metric=metric)
        D[np.arange(stop - start), np.arange(start, stop)] = np.inf
        # stable sort keeps ascending index order among equal distances
        out[start:stop] = np.argsort(D, axis=1, kind="stable")[:, :k]
    return out


def build_adjacency(X, k: int = 10, metric: str = "euclidean", normalize: bool = False) -> sp.csr_matrix:
    """Symmetrized binary k-NN graph: ``A[i, j] = 1`` if either point is among the other's k nearest."""
    X = _check_features(X)
    n = X.shape[0]
    if n < 2:
        raise ParameterError(f"need at least 2 samples to build a graph, got {n}")
    if normalize:
        X = zscore(X)
    nbrs = nearest_neighbors(X, k, metric)
    rows = np.repeat(np.arange(n), k)
    directed = sp.csr_matrix((np.ones(n * k), (rows, nbrs.ravel())), shape=(n, n))
    A = directed.maximum(directed.T)
    return canonical(A)


def build_laplacian(A) -> sp.csr_matrix:
    """Unnormalized Laplacian ``L = D - A``."""
    A = sp.csr_matrix(A, dtype=np.float64)
    if A.shape[0] != A.shape[1]:
        raise DataError(f"adjacency must be square, got {A.shape}")
    degree = np.asarray(A.sum(axis=1)).ravel()
    return canonical(sp.diags(degree) - A)


def _quadratic_pairs(dim: int) -> list[tuple[int, int]]:
    return [(r, s) for r in range(dim) for s in range(r, dim)]


def local_hessian(neighborhood: np.ndarray, intrinsic_dim: int, rel_tol: float = 1e-8) -> np.ndarray:
    """Second-derivative estimator for the first row of ``neighborhood``.

    Returns an array ``H`` of shape ``(p(p+1)/2, k)`` with one row per
    unordered coordinate pair ``(r, s)``, ``r <= s``, in row-major order.
    For function values ``f`` on the neighborhood, ``H @ f`` holds the
    entries of the Hessian in local tangent coordinates, with off-diagonal
    rows scaled by ``sqrt(2)`` so that ``||H @ f||**2`` equals the full
    Frobenius norm of the symmetric Hessian.

    Tangent directions come from PCA of the centered neighborhood.  If fewer
    than ``intrinsic_dim`` directions have non-negligible variance only the
    available ones are used and the remaining rows are zero.
    """
    k = neighborhood.shape[0]
    pairs = _quadratic_pairs(intrinsic_dim)
    H = np.zeros((len(pairs), k))
    centered = neighborhood - neighborhood.mean(axis=0)
    _, svals, Vt = np.linalg.svd(centered, full_matrices=False)
    if svals.size == 0 or svals[0] <= 0:
        return H
    q = min(intrinsic_dim, int(np.sum(svals > rel_tol * svals[0])))
    U = (neighborhood - neighborhood[0]) @ Vt[:q].T
    scale = np.abs(U).max()
    U = U / scale
    sub_pairs = _quadratic_pairs(q)
    design = np.empty((k, 1 + q + len(sub_pairs)))
    design[:, 0] = 1.0
    design[:, 1 : 1 + q] = U
    for col, (r, s) in enumerate(sub_pairs, start=1 + q):
        design[:, col] = U[:, r] * U[:, s]
    coef = np.linalg.pinv(design)
    row_of = {pair: i for i, pair in enumerate(pairs)}
    for col, (r, s) in enumerate(sub_pairs, start=1 + q):
        # u_r^2 carries H_rr / 2; u_r u_s (r < s) carries H_rs, counted twice in the Frobenius sum
        factor = 2.0 if r == s else np.sqrt(2.0)
        H[row_of[(r, s)]] = factor * coef[col] / scale**2
    return H


def hessian_neighborhoods(X, k_hess: int, metric: str = "euclidean") -> np.ndarray:
    """``(n, k_hess)`` index array: each point followed by its ``k_hess - 1`` nearest neighbors."""
    X = _check_features(X)
    n = X.shape[0]
    if k_hess < 2 or n <= k_hess:
        raise ParameterError(f"k_hess={k_hess} requires 2 <= k_hess < n (n={n})")
    others = nearest_neighbors(X, k_hess - 1, metric)
    return np.hstack([np.arange(n)[:, None], others])


def hessian_operators(X, k_hess: int, intrinsic_dim: int, metric: str = "euclidean") -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield ``(neighborhood indices, H)`` for every sample in order."""
    X = _check_features(X)
    _check_hessian_params(X.shape[0], k_hess, intrinsic_dim)
    hoods = hessian_neighborhoods(X, k_hess, metric)
    for idx in hoods:
        yield idx, local_hessian(X[idx], intrinsic_dim)


def _check_hessian_params(n: int, k_hess: int, intrinsic_dim: int) -> None:
    if intrinsic_dim < 1:
        raise ParameterError(f"intrinsic_dim must be >= 1, got {intrinsic_dim}")
    need = min_hessian_neighbors(intrinsic_dim)
    if k_hess < need:
        raise ParameterError(
            f"k_hess={k_hess} too small to fit a quadratic in {intrinsic_dim} dimensions (need >= {need})"
        )
    if n <= k_hess:
        raise ParameterError(f"need more samples than k_hess (n={n}, k_hess={k_hess})")


def estimate_hessian_energy(
    X, k_hess: int = 10, intrinsic_dim: int = 2, metric: str = "euclidean", normalize: bool = False
) -> sp.csr_matrix:
    """Sparse PSD matrix whose quadratic form sums squared local Hessian norms over all samples."""
    X = _check_features(X)
    if normalize:
        X = zscore(X)
    _check_hessian_params(X.shape[0], k_hess, intrinsic_dim)
    n = X.shape[0]
    hoods = hessian_neighborhoods(X, k_hess, metric)
    blocks = np.empty((n, k_hess, k_hess))
    degenerate = 0
    for i, idx in enumerate(hoods):
        H = local_hessian(X[idx], intrinsic_dim)
        block = H.T @ H
        blocks[i] = 0.5 * (block + block.T)
        if not H.any():
            degenerate += 1
    if degenerate:
        log.warning("%d of %d Hessian neighborhoods were degenerate and contribute nothing", degenerate, n)
    rows = np.repeat(hoods, k_hess, axis=1).ravel()
    cols = np.tile(hoods, (1, k_hess)).ravel()
    return _accumulate(rows, cols, blocks.ravel(), n)


def _accumulate(rows: np.ndarray, cols: np.ndarray, vals: np.ndarray, n: int) -> sp.csr_matrix:
    """Sum duplicate entries in their original order.

    Entries (a, b) and (b, a) then receive identical summands in identical
    order, so a sum of symmetric blocks stays exactly symmetric.
    """
    order = np.lexsort((cols, rows))
    rows, cols, vals = rows[order], cols[order], vals[order]
    start = np.flatnonzero(np.r_[True, (np.diff(rows) != 0) | (np.diff(cols) != 0)])
    summed = np.add.reduceat(vals, start)
    M = sp.csr_matrix((summed, (rows[start], cols[start])), shape=(n, n))
    return canonical(M)


@dataclass(frozen=True)
class GraphSet:
    """Per-view Laplacians and Hessian energies plus the settings that produced them."""

    laplacians: tuple
    hessians: tuple
    view_names: tuple
    k_graph: int
    k_hess: int
    intrinsic_dim: int
    metric: str
    normalize: bool
    fingerprint: str = ""

    @property
    def m(self) -> int:
        return len(self.laplacians)

    @property
    def n(self) -> int:
        return self.laplacians[0].shape[0]

    def settings(self) -> dict:
        return {
            "k_graph": self.k_graph,
            "k_hess": self.k_hess,
            "intrinsic_dim": self.intrinsic_dim,
            "metric": self.metric,
            "normalize": self.normalize,
        }


def fingerprint_views(views: Sequence[np.ndarray]) -> str:
    h = hashlib.sha256()
    for X in views:
        X = np.ascontiguousarray(X, dtype=np.float64)
        h.update(str(X.shape).encode())
        h.update(X.tobytes())
    return h.hexdigest()


def build_graphs(views: Sequence[np.ndarray], config: TrainConfig, view_names: Sequence[str] | None = None) -> GraphSet:
    """Laplacian and Hessian energy for every view; views may build in parallel."""
    views = [_check_features(X) for X in views]
    if not views:
        raise DataError("need at least one view")
    n = views[0].shape[0]
    for i, X in enumerate(views):
        if X.shape[0] != n:
            raise DataError(f"view {i} has {X.shape[0]} rows, expected {n}")
    if view_names is None:
        view_names = [f"view{i}" for i in range(len(views))]

    def one(X):
        L = build_laplacian(build_adjacency(X, config.k_graph, config.metric, config.normalize))
        omega = estimate_hessian_energy(X, config.k_hess, config.intrinsic_dim, config.metric, config.normalize)
        return L, omega

    built = ordered_map(one, views)
    return GraphSet(
        laplacians=tuple(L for L, _ in built),
        hessians=tuple(O for _, O in built),
        view_names=tuple(view_names),
        fingerprint=fingerprint_views(views),
        **config.graph_settings(),
    )


def _triplets(M: sp.csr_matrix) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    coo = canonical(M).tocoo()
    order = np.lexsort((coo.col, coo.row))
    return coo.row[order].astype(np.int64), coo.col[order].astype(np.int64), coo.data[order]


def save_graph_cache(path, graphs: GraphSet) -> None:
    """Write the per-view triplet lists of L and Omega to a graph cache container.

    Members per view ``i``: ``L{i}_row``, ``L{i}_col``, ``L{i}_val`` and the
    same for ``H{i}`` (the Hessian energy).  ``meta.json`` records ``n``,
    ``m``, the view names, the graph settings and a SHA-256 fingerprint of the
    feature matrices.
    """
    arrays = {}
    for i, (L, omega) in enumerate(zip(graphs.laplacians, graphs.hessians)):
        for tag, M in (("L", L), ("H", omega)):
            r, c, v = _triplets(M)
            arrays[f"{tag}{i}_row"] = r
            arrays[f"{tag}{i}_col"] = c
            arrays[f"{tag}{i}_val"] = v
    meta = {
        "format": CACHE_FORMAT,
        "version": CACHE_VERSION,
        "n": graphs.n,
        "m": graphs.m,
        "view_names": list(graphs.view_names),
        "settings": graphs.settings(),
        "fingerprint": graphs.fingerprint,
    }
    write_container(path, meta, arrays)


def load_graph_cache(path, config: TrainConfig | None = None, views: Sequence[np.ndarray] | None = None) -> GraphSet:
    """Read a graph cache, refusing it if its settings or data differ from the request."""
    meta, arrays = read_container(path, CACHE_FORMAT)
    if meta.get("version") != CACHE_VERSION:
        raise DataError(f"{path}: unsupported graph cache version {meta.get('version')}")
    settings = meta["settings"]
    if config is not None:
        wanted = config.graph_settings()
        diff = [f"{k}: cache={settings.get(k)!r} requested={v!r}" for k, v in wanted.items() if settings.get(k) != v]
        if diff:
            raise ConfigError(f"graph cache {path} was built with different settings ({'; '.join(diff)})")
    if views is not None and meta.get("fingerprint") and fingerprint_views(views) != meta["fingerprint"]:
        raise ConfigError(f"graph cache {path} was built from different feature data")
    n, m = int(meta["n"]), int(meta["m"])

    def matrix(tag, i):
        r, c, v = arrays[f"{tag}{i}_row"], arrays[f"{tag}{i}_col"], arrays[f"{tag}{i}_val"]
        return canonical(sp.coo_matrix((v, (r, c)), shape=(n, n)))

    return GraphSet(
        laplacians=tuple(matrix("L", i) for i in range(m)),
        hessians=tuple(matrix("H", i) for i in range(m)),
        view_names=tuple(meta["view_names"]),
        fingerprint=meta.get("fingerprint", ""),
        k_graph=settings["k_graph"],
        k_hess=settings["k_hess"],
        intrinsic_dim=settings["intrinsic_dim"],
        metric=settings["metric"],
        normalize=settings["normalize"],
    )
