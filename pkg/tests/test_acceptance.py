"""Acceptance criteria, each at its stated tolerance.

Every test records one pass/fail line; the lines are repeated in the
"acceptance criteria" section of the pytest terminal summary.
"""

import json
import time
from pathlib import Path

import numpy as np
import pytest

from glcc.cli import main as cli_main
from glcc.config import TrainConfig
from glcc.data import SplitSpec, SyntheticSpec, apply_split, from_labels, generate_synthetic
from glcc.evaluation import ridge_baseline, score, sweep_labeled_fraction
from glcc.graphs import build_adjacency, build_graphs, build_laplacian, estimate_hessian_energy, hessian_operators
from glcc.model import predict_batch, train, update_weights

from _instances import random_instance

SUITE_SIZE = 50


@pytest.fixture(scope="module")
def suite_runs():
    """Train every suite instance for exactly 5 iterations, keeping step-level traces."""
    runs = []
    start = time.perf_counter()
    for index in range(SUITE_SIZE):
        ds, cfg = random_instance(index, tol=0.0, max_iter=5)
        graphs = build_graphs(ds.Xs, cfg)
        _, trace = train(ds, graphs, cfg)
        runs.append(trace)
    return runs, time.perf_counter() - start


# ---------------------------------------------------------------- 1


def test_criterion_1_monotone_objective(suite_runs, report_criterion):
    runs, seconds = suite_runs
    violations = 0
    for trace in runs:
        values = [trace.objectives[0]] + [v for step in trace.steps for v in step]
        violations += sum(after > before + 1e-8 * abs(before) for before, after in zip(values, values[1:]))
    steps = sum(4 * len(t.steps) for t in runs)
    passed = violations == 0 and seconds < 120
    report_criterion(1, "objective non-increasing after every update", passed,
                     f"{violations} increases over {steps} steps on {len(runs)} instances, {seconds:.1f}s")
    assert violations == 0
    assert seconds < 120


# ---------------------------------------------------------------- 2


def delta_P_decreasing(delta_P):
    # delta_P[t-1] belongs to iteration t; require it to shrink from iteration 2 on
    return all(delta_P[t + 1] <= delta_P[t] for t in range(1, len(delta_P) - 1))


def test_criterion_2_convergence_speed(suite_runs, report_criterion):
    runs, _ = suite_runs
    fast = sum(min(trace.relative_changes()[:5]) < 1e-3 for trace in runs)
    shrinking = sum(delta_P_decreasing(trace.delta_P) for trace in runs)
    need = int(np.ceil(0.9 * len(runs)))
    passed = fast >= need and shrinking >= need
    report_criterion(2, "relative change < 1e-3 within 5 iterations and decreasing delta_P in >= 90% of instances", passed,
                     f"{fast}/{len(runs)} reach 1e-3, {shrinking}/{len(runs)} have decreasing delta_P, need {need}")
    assert fast >= need, f"only {fast}/{len(runs)} instances reach a relative change below 1e-3 within 5 iterations"
    assert shrinking >= need, f"only {shrinking}/{len(runs)} instances have delta_P decreasing from iteration 2"


# ---------------------------------------------------------------- 3


def project_to_simplex(z, metric):
    """Projection onto the probability simplex in the norm sum_i metric_i x_i^2.

    The solution is max(z - theta / metric, 0) with theta fixed by bisection.
    """
    mass = lambda theta: np.sum(np.maximum(z - theta / metric, 0.0))
    lo, hi = -1.0, 1.0
    while mass(lo) < 1:
        lo *= 2
    while mass(hi) > 1:
        hi *= 2
    for _ in range(200):
        mid = (lo + hi) / 2
        lo, hi = (mid, hi) if mass(mid) > 1 else (lo, mid)
    x = np.maximum(z - hi / metric, 0.0)
    return x / x.sum()


def projected_gradient_weights(traces, r, iters=500):
    """Minimize sum_i w_i^r t_i over the simplex by scaled projected gradient.

    The step is scaled by the diagonal second derivative, which for this
    separable objective is exact, and accepted by Armijo backtracking. Every
    optimal weight is positive for r > 1, so steps stop short of the boundary.
    """
    t = traces / traces.max()
    f = lambda w: np.sum(w**r * t)
    w = np.full(t.size, 1.0 / t.size)
    for _ in range(iters):
        safe = np.maximum(w, 1e-300)
        grad = r * safe ** (r - 1) * t
        metric = np.clip(r * (r - 1) * safe ** (r - 2) * t, 1e-300, 1e300)
        direction = project_to_simplex(w - grad / metric, metric) - w
        if np.max(np.abs(direction)) < 1e-15:
            break
        shrinking = direction < 0
        step = min(1.0, 0.99 * np.min(w[shrinking] / -direction[shrinking]))
        slope = grad @ direction
        while f(w + step * direction) > f(w) + 1e-4 * step * slope and step > 1e-20:
            step /= 2
        w = w + step * direction
    return w


def test_criterion_3_weight_closed_form(report_criterion):
    worst = 0.0
    for index in range(20):
        rng = np.random.default_rng([3, index])
        m = int(rng.integers(2, 6))
        n = int(rng.integers(30, 80))
        r = (1.5, 2.0, 4.0)[index % 3]
        views = [rng.normal(size=(n, int(rng.integers(2, 8)))) * rng.uniform(0.5, 3) for _ in range(m)]
        graphs = build_graphs(views, TrainConfig(k_graph=5, k_hess=8))
        F = rng.normal(size=(n, int(rng.integers(2, 5))))
        alpha, beta = update_weights(F, graphs, r)
        t = np.array([np.sum(F * (L @ F)) for L in graphs.laplacians])
        s = np.array([np.sum(F * (O @ F)) for O in graphs.hessians])
        worst = max(worst, np.max(np.abs(alpha - projected_gradient_weights(t, r))))
        worst = max(worst, np.max(np.abs(beta - projected_gradient_weights(s, r))))
    # symmetric case: every view carries the same graph
    X = np.random.default_rng(0).normal(size=(40, 3))
    same = build_graphs([X] * 5, TrainConfig(k_graph=5, k_hess=8))
    alpha, beta = update_weights(np.random.default_rng(1).normal(size=(40, 2)), same, 2.0)
    uniform = bool(np.all(alpha == 0.2) and np.all(beta == 0.2))
    passed = worst <= 1e-6 and uniform
    report_criterion(3, "closed-form weights match projected gradient; symmetric case uniform", passed,
                     f"max coordinate gap {worst:.2e}, symmetric case exactly uniform: {uniform}")
    assert worst <= 1e-6
    assert uniform


# ---------------------------------------------------------------- 4


def test_criterion_4_ridge_equivalence(report_criterion):
    worst = 0.0
    for index in range(10):
        rng = np.random.default_rng([4, index])
        n, d, c = int(rng.integers(20, 201)), int(rng.integers(2, 16)), int(rng.integers(2, 6))
        X = rng.normal(size=(n, d)) * rng.uniform(0.5, 2, size=d) + rng.normal(size=d) * 3
        labels = rng.integers(0, c, size=n)
        labels[:c] = np.arange(c)
        gamma = float(rng.choice([1e-2, 1.0, 1e2]))
        ds = from_labels([X], labels, [str(k) for k in range(c)])
        cfg = TrainConfig(lam=0.0, gamma=gamma, w_large=1e10)
        params, _ = train(ds, build_graphs([X], cfg), cfg)
        # independent oracle: least squares on [X 1; sqrt(gamma) I 0]
        A = np.block([[X, np.ones((n, 1))], [np.sqrt(gamma) * np.eye(d), np.zeros((d, 1))]])
        sol = np.linalg.lstsq(A, np.vstack([ds.Y, np.zeros((d, c))]), rcond=None)[0]
        worst = max(
            worst,
            np.linalg.norm(params.P[0] - sol[:d]) / np.linalg.norm(sol[:d]),
            np.linalg.norm(params.B[0] - sol[d]) / np.linalg.norm(sol[d]),
        )
    passed = worst <= 1e-6
    report_criterion(4, "single view, lambda=0, all labeled equals ridge with bias", passed, f"max relative error {worst:.2e}")
    assert passed


# ---------------------------------------------------------------- 5


def test_criterion_5_laplacian_identity(report_criterion):
    worst = 0.0
    for index in range(100):
        rng = np.random.default_rng([5, index])
        n = int(rng.integers(3, 80))
        A = build_adjacency(rng.normal(size=(n, int(rng.integers(1, 6)))), int(rng.integers(1, min(10, n - 1) + 1)))
        L = build_laplacian(A)
        F = rng.normal(size=(n, int(rng.integers(1, 6))))
        coo = A.tocoo()
        pairwise = sum(w * np.sum((F[i] - F[j]) ** 2) for i, j, w in zip(coo.row, coo.col, coo.data))
        worst = max(worst, abs(2 * np.trace(F.T @ (L @ F)) - pairwise) / pairwise)
    passed = worst <= 1e-10
    report_criterion(5, "2 tr(F'LF) equals the pairwise sum", passed, f"max relative gap {worst:.2e} over 100 graphs")
    assert passed


# ---------------------------------------------------------------- 6


def test_criterion_6_hessian_null_space(report_criterion):
    rng = np.random.default_rng(6)
    basis, _ = np.linalg.qr(rng.normal(size=(5, 2)))
    T = rng.uniform(-1, 1, size=(50, 2))
    X = rng.normal(size=5) + T @ basis.T
    omega = estimate_hessian_energy(X, k_hess=10, intrinsic_dim=2)
    f = T @ rng.normal(size=2) + rng.normal()
    q = T[:, 0] ** 2 - 0.5 * T[:, 0] * T[:, 1] + T[:, 1] ** 2
    ratio = float(f @ (omega @ f)) / float(q @ (omega @ q))

    x = np.arange(51) / 50
    fx = x**2
    h = 1 / 50
    fd = ((x + h) ** 2 - 2 * x**2 + (x - h) ** 2) / h**2
    est = np.array([(H @ fx[idx])[0] for idx, H in hessian_operators(x[:, None], k_hess=7, intrinsic_dim=1)])
    interior = slice(3, -3)
    rel = float(np.max(np.abs(est[interior] - fd[interior]) / np.abs(fd[interior])))
    passed = ratio <= 1e-6 and rel <= 0.05
    report_criterion(6, "affine functions have no Hessian energy; x^2 curvature matches finite differences", passed,
                     f"energy ratio {ratio:.2e}, max curvature error {rel:.2%}")
    assert ratio <= 1e-6
    assert rel <= 0.05


# ---------------------------------------------------------------- 7

ARCS_NOISE = 0.2


def test_criterion_7_semi_supervised_gain(report_criterion):
    cfg = TrainConfig()
    wins, lines = 0, []
    for seed in range(10):
        full = generate_synthetic(SyntheticSpec(n=400, m=2, c=2, noise=ARCS_NOISE, manifold="arcs", seed=seed))
        train_set = apply_split(full.subset(np.arange(200)), SplitSpec(0.1, stratified=True, seed=seed))
        test_set = full.subset(np.arange(200, 400))
        params, _ = train(train_set, build_graphs(train_set.Xs, cfg), cfg)
        labels, scores = predict_batch(params, test_set.Xs)
        ours = score(labels, scores, test_set.truth).accuracy
        base = ridge_baseline(train_set, test_set.Xs, test_set.truth, cfg.gamma).accuracy
        wins += ours > base
        lines.append(f"{ours:.3f}/{base:.3f}")

    sweep_ok = True
    pool = generate_synthetic(SyntheticSpec(n=200, m=2, c=2, noise=ARCS_NOISE, manifold="arcs", seed=100))
    table = sweep_labeled_fraction(pool, [0.1, 0.9], cfg, repeats=10, seed=0, methods=("glcc", "ridge"))
    sweep_notes = []
    for method in table.methods:
        (lo, s_lo), (hi, s_hi) = table.stats(method, 0.1), table.stats(method, 0.9)
        pooled = np.sqrt((s_lo**2 + s_hi**2) / 2)
        sweep_ok &= hi >= lo - pooled
        sweep_notes.append(f"{method} {lo:.3f}->{hi:.3f}")
    passed = wins >= 8 and sweep_ok
    report_criterion(7, "beats the best single-view ridge on >= 8/10 seeds; more labels never hurt", passed,
                     f"{wins}/10 wins [{' '.join(lines)}]; sweep {', '.join(sweep_notes)}")
    assert wins >= 8
    assert sweep_ok


# ---------------------------------------------------------------- 8


def pipeline(root: Path) -> None:
    train_dir, test_dir = root / "data" / "train", root / "data" / "test"
    steps = [
        ["synth", "--out-dir", root / "data", "--n", "120", "--n-test", "40", "--m", "2", "--c", "3", "--seed", "11"],
        ["build-graphs", "--out-dir", root / "graphs", "--views", train_dir / "view0.csv", train_dir / "view1.csv"],
        ["train", "--out-dir", root / "model", "--views", train_dir / "view0.csv", train_dir / "view1.csv",
         "--labels", train_dir / "labels.csv", "--graphs", root / "graphs" / "graphs.glcc"],
        ["predict", "--out-dir", root / "pred", "--model", root / "model" / "model.glcc",
         "--views", test_dir / "view0.csv", test_dir / "view1.csv"],
        ["eval", "--out-dir", root / "eval", "--predictions", root / "pred" / "predictions.csv", "--truth", test_dir / "truth.csv"],
        ["sweep", "--out-dir", root / "sweep", "--views", train_dir / "view0.csv", train_dir / "view1.csv",
         "--labels", train_dir / "truth.csv", "--fractions", "0.1,0.5", "--repeats", "2"],
        ["grid", "--out-dir", root / "grid", "--views", train_dir / "view0.csv", train_dir / "view1.csv",
         "--labels", train_dir / "truth.csv", "--lambdas", "0.01,1,100", "--gammas", "0.01,1"],
    ]
    for argv in steps:
        assert cli_main([str(a) for a in argv]) == 0, argv


def test_criterion_8_determinism(tmp_path, report_criterion, capsys):
    pipeline(tmp_path / "a")
    pipeline(tmp_path / "b")
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    differing = []
    for rel in files:
        a, b = (tmp_path / "a" / rel).read_bytes(), (tmp_path / "b" / rel).read_bytes()
        if rel.name == "config.resolved.json":
            # the echo records the output paths, which differ by construction
            a, b = (json.dumps({k: v for k, v in json.loads(x).items() if k not in ("inputs", "outputs")}) for x in (a, b))
        if a != b:
            differing.append(str(rel))
    watched = [f for f in files if f.suffix in (".glcc", ".csv")]
    passed = not differing and any(f.name == "model.glcc" for f in watched) and any(f.name == "graphs.glcc" for f in watched)
    capsys.readouterr()
    report_criterion(8, "identical config and seed give byte-identical outputs", passed,
                     f"{len(files)} files compared, {len(differing)} differ" + (f": {differing}" if differing else ""))
    assert passed


# ---------------------------------------------------------------- 9


def test_criterion_9_scaling_smoke(report_criterion):
    cfg = TrainConfig()
    timings = {}
    for n in (250, 500, 1000):
        start = time.perf_counter()
        full = generate_synthetic(SyntheticSpec(n=n + 200, m=3, c=3, dims=(50, 50, 50), noise=0.1, seed=n))
        ds = apply_split(full.subset(np.arange(n)), SplitSpec(0.1, seed=0))
        t0 = time.perf_counter()
        graphs = build_graphs(ds.Xs, cfg)
        t1 = time.perf_counter()
        params, _ = train(ds, graphs, cfg)
        t2 = time.perf_counter()
        labels, scores = predict_batch(params, [X[n:] for X in full.Xs])
        score(labels, scores, full.truth[n:])
        timings[n] = (t1 - t0, t2 - t1, time.perf_counter() - start)
    total = timings[1000][2]
    passed = total < 300
    log = ", ".join(f"n={n}: graphs {g:.2f}s train {t:.2f}s" for n, (g, t, _) in timings.items())
    report_criterion(9, "n=1000, m=3, d=50 pipeline under 5 minutes", passed, f"{total:.1f}s end to end; {log}")
    assert passed
