"""The random instance suite shared by the property and acceptance tests."""

from __future__ import annotations

import numpy as np

from glcc.config import TrainConfig
from glcc.data import SplitSpec, SyntheticSpec, apply_split, generate_synthetic

PARAM_GRID = (1e-4, 1e-2, 1.0, 1e2, 1e4)
LABELED_FRACTIONS = (0.1, 0.3, 0.5, 0.7, 0.9)
SUITE_SEED = 20150801


def random_instance(index: int, seed: int = SUITE_SEED, **overrides):
    """Instance ``index`` of the suite: n in [20, 200], m in [1, 3], c in [2, 5], lambda/gamma from the grid."""
    rng = np.random.default_rng([seed, index])
    c = int(rng.integers(2, 6))
    n = max(int(rng.integers(20, 201)), 4 * c)
    m = int(rng.integers(1, 4))
    spec = SyntheticSpec(
        n=n,
        m=m,
        c=c,
        noise=float(rng.uniform(0.05, 0.3)),
        manifold=("gaussian", "arcs")[index % 2],
        seed=int(rng.integers(2**31)),
    )
    split = SplitSpec(float(rng.choice(LABELED_FRACTIONS)), stratified=True, seed=int(rng.integers(2**31)))
    dataset = apply_split(generate_synthetic(spec), split)
    params = {"lam": float(rng.choice(PARAM_GRID)), "gamma": float(rng.choice(PARAM_GRID))}
    config = TrainConfig(**{**params, **overrides})
    return dataset, config
