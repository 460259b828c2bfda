"""Training configuration."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, fields
from typing import Any, Mapping

from .errors import ConfigError

SUPPORTED_METRICS = ("euclidean", "cityblock", "cosine", "chebyshev")

# Graph-construction fields; a graph cache is reusable iff these agree.
GRAPH_FIELDS = ("k_graph", "k_hess", "intrinsic_dim", "metric", "normalize")


def quadratic_terms(dim: int) -> int:
    return dim * (dim + 1) // 2


def min_hessian_neighbors(intrinsic_dim: int) -> int:
    """Smallest neighborhood (self included) that can fit a full quadratic."""
    return 1 + intrinsic_dim + quadratic_terms(intrinsic_dim)


@dataclass(frozen=True)
class TrainConfig:
    """Hyper-parameters for graph construction and alternating training.

    ``lam`` is the graph-regularizer weight (serialized as ``"lambda"``),
    ``gamma`` the ridge weight on each sub-classifier and ``r`` the exponent
    applied to the graph weights.  ``tol`` is the relative objective change
    below which training stops early; ``tol=0`` always runs ``max_iter``
    iterations.
    """

    lam: float = 1.0
    gamma: float = 1e-2
    r: float = 2.0
    k_graph: int = 10
    k_hess: int = 10
    intrinsic_dim: int = 2
    w_large: float = 1e10
    max_iter: int = 5
    tol: float = 1e-4
    seed: int = 0
    metric: str = "euclidean"
    normalize: bool = False

    def __post_init__(self):
        for name in ("lam", "gamma", "r", "w_large", "tol"):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or isinstance(value, bool) or not math.isfinite(value):
                raise ConfigError(f"{self._key(name)} must be a finite number, got {value!r}")
        for name in ("k_graph", "k_hess", "intrinsic_dim", "max_iter", "seed"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool):
                raise ConfigError(f"{name} must be an integer, got {value!r}")
        if self.lam < 0:
            raise ConfigError(f"lambda must be non-negative, got {self.lam}")
        if self.gamma <= 0:
            raise ConfigError(f"gamma must be positive, got {self.gamma}")
        if self.r <= 1:
            raise ConfigError(f"r must exceed 1, got {self.r}")
        if self.w_large <= 0:
            raise ConfigError(f"w_large must be positive, got {self.w_large}")
        if self.max_iter < 1:
            raise ConfigError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.tol < 0:
            raise ConfigError(f"tol must be >= 0, got {self.tol}")
        if self.k_graph < 1:
            raise ConfigError(f"k_graph must be >= 1, got {self.k_graph}")
        if self.intrinsic_dim < 1:
            raise ConfigError(f"intrinsic_dim must be >= 1, got {self.intrinsic_dim}")
        need = min_hessian_neighbors(self.intrinsic_dim)
        if self.k_hess < need:
            raise ConfigError(
                f"k_hess={self.k_hess} cannot fit a quadratic in {self.intrinsic_dim} dimensions; need >= {need}"
            )
        if self.metric not in SUPPORTED_METRICS:
            raise ConfigError(f"unsupported metric {self.metric!r}; choose from {', '.join(SUPPORTED_METRICS)}")
        if not isinstance(self.normalize, bool):
            raise ConfigError(f"normalize must be a boolean, got {self.normalize!r}")

    @staticmethod
    def _key(name: str) -> str:
        return "lambda" if name == "lam" else name

    def to_dict(self) -> dict[str, Any]:
        return {self._key(f.name): getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], strict: bool = False) -> "TrainConfig":
        """Build from a mapping using the serialized key names.

        Unknown keys are ignored unless ``strict``; integers given for float
        fields are accepted.
        """
        names = {cls._key(f.name): f for f in fields(cls)}
        unknown = sorted(set(data) - set(names))
        if strict and unknown:
            raise ConfigError(f"unknown training config keys: {', '.join(unknown)}")
        kwargs = {}
        for key, f in names.items():
            if key not in data:
                continue
            value = data[key]
            if f.type in ("float", float) and isinstance(value, int) and not isinstance(value, bool):
                value = float(value)
            kwargs[f.name] = value
        return cls(**kwargs)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def graph_settings(self) -> dict[str, Any]:
        return {name: getattr(self, name) for name in GRAPH_FIELDS}
