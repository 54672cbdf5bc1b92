"""Self-verification harness behind the ``selftest`` CLI subcommand.

Each check runs a randomized invariant suite and returns the measured
worst-case error together with its tolerance, so the CLI can print one
pass/fail line per property and the test suite can assert the same
numbers at acceptance scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model as mdl
from .geometry import (
    ManifoldPoint,
    TangentVector,
    dist_c,
    euclidean,
    exp_map,
    log_map,
    mobius_add,
    origin,
    poincare_ball,
    project_to_ball,
)
from .optim import OptimizerConfig, riemannian_grad, rsgd_step
from .trainer import auc


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def _result(name: str, measured: float, tolerance: float) -> CheckResult:
    return CheckResult(
        name=name,
        passed=bool(measured <= tolerance),
        detail=f"measured {measured:.3e} <= tolerance {tolerance:.3e}",
    )


def _ball_samples(rng, n: int, dim: int, c: float, max_frac: float) -> np.ndarray:
    g = rng.standard_normal((n, dim))
    g /= np.maximum(np.linalg.norm(g, axis=1, keepdims=True), 1e-30)
    radii = max_frac * rng.random((n, 1)) ** (1.0 / dim) / np.sqrt(c)
    return g * radii

def check_mobius_identities(seed: int = 0, n: int = 1000, c: float = 1.0) -> CheckResult:
    """x (+) 0 = x and 0 (+) x = x, exact floating-point equality."""
    rng = np.random.default_rng(seed)
    spec = poincare_ball(4, c)
    zero = origin(spec)
    worst = 0.0
    for row in _ball_samples(rng, n, 4, c, 0.9):
        x = ManifoldPoint(row, spec)
        right = mobius_add(x, zero).coords
        left = mobius_add(zero, x).coords
        worst = max(
            worst,
            float(np.abs(right - row).max()),
            float(np.abs(left - row).max()),
        )
    return _result("mobius_identity", worst, 1e-15)


def check_left_cancellation(seed: int = 1, n: int = 1000, c: float = 1.0) -> CheckResult:
    """(-x) (+) (x (+) y) = y within 1e-9."""
    rng = np.random.default_rng(seed)
    spec = poincare_ball(4, c)
    xs = _ball_samples(rng, n, 4, c, 0.7)
    ys = _ball_samples(rng, n, 4, c, 0.7)
    worst = 0.0
    for xr, yr in zip(xs, ys):
        x, y = ManifoldPoint(xr, spec), ManifoldPoint(yr, spec)
        back = mobius_add(-x, mobius_add(x, y)).coords
        worst = max(worst, float(np.abs(back - yr).max()))
    return _result("left_cancellation", worst, 1e-9)


def check_exp_log_inversion(seed: int = 2, n: int = 1000, c: float = 1.0) -> CheckResult:
    """|log_x(exp_x(v)) - v| <= 1e-8 + 1e-6 |v|."""
    rng = np.random.default_rng(seed)
    spec = poincare_ball(4, c)
    xs = _ball_samples(rng, n, 4, c, 0.7)
    worst = 0.0
    for xr in xs:
        x = ManifoldPoint(xr, spec)
        vr = rng.standard_normal(4)
        vr *= rng.random() / np.linalg.norm(vr)
        v = TangentVector(vr, x)
        w = log_map(x, exp_map(x, v)).coords
        err = float(np.linalg.norm(w - vr))
        budget = 1e-8 + 1e-6 * float(np.linalg.norm(vr))
        worst = max(worst, err / budget)
    return _result("exp_log_inversion", worst, 1.0)


def check_metric_axioms(seed: int = 3, n: int = 10_000, c: float = 1.0) -> CheckResult:
    """Symmetry within 1e-12 and triangle inequality within 1e-9 on sampled triples."""
    rng = np.random.default_rng(seed)
    xs = _ball_samples(rng, n, 4, c, 0.9)
    ys = _ball_samples(rng, n, 4, c, 0.9)
    zs = _ball_samples(rng, n, 4, c, 0.9)
    dxy = dist_c(xs, ys, c)
    dyx = dist_c(ys, xs, c)
    dxz = dist_c(xs, zs, c)
    dyz = dist_c(ys, zs, c)
    sym = float(np.abs(dxy - dyx).max())
    tri = float((dxz - dxy - dyz).max())
    worst = max(sym / 1e-12, tri / 1e-9)
    return _result("metric_axioms", worst, 1.0)


def check_flat_limit(seed: int = 4, n: int = 2000) -> CheckResult:
    """Distance at c = 1e-8 degenerates to twice the Euclidean distance within 1e-4."""
    rng = np.random.default_rng(seed)
    c = 1e-8
    xs = _ball_samples(rng, n, 4, 1.0, 0.5)  # norms <= 0.5
    ys = _ball_samples(rng, n, 4, 1.0, 0.5)
    d = dist_c(xs, ys, c)
    ref = 2.0 * np.linalg.norm(xs - ys, axis=1)
    return _result("flat_limit", float(np.abs(d - ref).max()), 1e-4)


def check_ball_feasibility(
    seed: int = 5, steps: int = 10_000, c: float = 1.0, lr: float = 0.1
) -> CheckResult:
    """RSGD iterates with adversarial gradients never reach the boundary."""
    rng = np.random.default_rng(seed)
    spec = poincare_ball(4, c)
    cfg = OptimizerConfig(learning_rate=lr, ball_eps=1e-5)
    x = origin(spec)
    worst = 0.0
    for _ in range(steps):
        g = rng.standard_normal(4)
        g *= rng.uniform(0, 10) / np.linalg.norm(g)
        x = rsgd_step(x, g, cfg)
        if not np.all(np.isfinite(x.coords)):
            return CheckResult("ball_feasibility", False, "non-finite iterate")
        worst = max(worst, c * float(x.coords @ x.coords))
    # one ulp of slack: the projection rescale rounds at the margin
    return _result("ball_feasibility", worst, (1.0 - 1e-5) ** 2 + 1e-12)


def check_riemannian_scale(seed: int = 6, n: int = 500, c: float = 1.3) -> CheckResult:
    """Metric rescaling is a scalar in (0, 1/4], exactly 1/4 at the origin."""
    rng = np.random.default_rng(seed)
    spec = poincare_ball(3, c)
    at_origin = riemannian_grad(origin(spec), np.ones(3)).coords
    if not np.allclose(at_origin, 0.25):
        return CheckResult("riemannian_scale", False, "scale at origin is not 1/4")
    worst = 0.0
    for row in _ball_samples(rng, n, 3, c, 0.999):
        x = ManifoldPoint(row, spec)
        g = rng.standard_normal(3)
        rg = riemannian_grad(x, g).coords
        ratios = rg[g != 0] / g[g != 0]
        if ratios.size and (ratios.min() <= 0 or ratios.max() > 0.25):
            return CheckResult("riemannian_scale", False, f"scale {ratios} outside (0, 1/4]")
        worst = max(worst, float(ratios.max()) if ratios.size else 0.0)
    return _result("riemannian_scale", worst, 0.25)


def _random_state(seed: int, n_entities: int = 6):
    cfg = mdl.ModelConfig(
        manifolds=(poincare_ball(3, 1.0), euclidean(3)),
        negatives_per_positive=1,
        init_scale=0.05,
        seed=seed,
    )
    state = mdl.init_embeddings(cfg, n_entities, n_entities)
    rng = np.random.default_rng([seed, 99])
    # move away from the neutral fusion init so gradients are non-trivial
    fp = state.fusion
    fp.manifold_bias = rng.normal(0, 0.3, fp.manifold_bias.shape).astype(np.float32)
    fp.manifold_scale = (1 + rng.random(fp.manifold_scale.shape)).astype(np.float32)
    fp.attention_weights = rng.normal(0, 0.5, fp.attention_weights.shape).astype(np.float32)
    fp.global_bias = np.float32(rng.normal(0, 0.3))
    for tables in (state.user_tables, state.ad_tables):
        for t in tables:
            scale = 0.5 / np.sqrt(max(t.spec.curvature, 1.0))
            t.rows = (rng.random(t.rows.shape) - 0.5).astype(np.float32) * np.float32(scale)
    return state


def model_gradient_max_errors(seed: int = 7, instances: int = 64, h: float = 1e-5):
    """Worst |fd - analytic| over (1e-8 + 1e-4 |analytic|) for the full loss.

    Checks every touched embedding coordinate on both manifolds and every
    fusion parameter, on `instances` random (user, ad, label) batches.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in range(instances):
        state = _random_state(seed * 1000 + i)
        b = int(rng.integers(1, 4))
        users = rng.integers(0, state.num_users, b)
        ads = rng.integers(0, state.num_ads, b)
        labels = rng.integers(0, 2, b).astype(np.float64)
        res = mdl.backward(state, users, ads, labels)

        def loss_fn() -> float:
            return mdl.backward(state, users, ads, labels).loss

        def fd_vs(analytic: float, arr: np.ndarray, index) -> float:
            old = arr[index]
            arr[index] = old + h
            up = loss_fn()
            arr[index] = old - h
            down = loss_fn()
            arr[index] = old
            fd = (up - down) / (2 * h)
            return abs(fd - analytic) / (1e-8 + 1e-4 * abs(analytic))

        for m in range(state.config.num_manifolds):
            for tables, grads in (
                (state.user_tables, res.user_grads),
                (state.ad_tables, res.ad_grads),
            ):
                rows_idx, g = grads[m]
                rows64 = tables[m].rows.astype(np.float64)
                tables[m].rows = rows64  # float64 staging for clean differences
                for r, row in enumerate(rows_idx):
                    for dcoord in range(g.shape[1]):
                        worst = max(worst, fd_vs(g[r, dcoord], rows64, (row, dcoord)))
                tables[m].rows = rows64.astype(np.float32)
        fp = state.fusion
        fp64 = [
            fp.manifold_bias.astype(np.float64),
            fp.manifold_scale.astype(np.float64),
            fp.attention_weights.astype(np.float64),
            np.array(float(fp.global_bias)),
        ]
        fp.manifold_bias, fp.manifold_scale, fp.attention_weights, fp.global_bias = fp64
        fg = res.fusion
        for j in range(fp64[0].shape[0]):
            worst = max(worst, fd_vs(fg.manifold_bias[j], fp64[0], j))
            worst = max(worst, fd_vs(fg.manifold_scale[j], fp64[1], j))
        for j in range(fp64[2].shape[0]):
            for l in range(fp64[2].shape[1]):
                worst = max(worst, fd_vs(fg.attention_weights[j, l], fp64[2], (j, l)))
        worst = max(worst, fd_vs(fg.global_bias, fp64[3], ()))
    return worst


def check_model_gradients(seed: int = 7, instances: int = 16) -> CheckResult:
    """Analytic loss gradients match central finite differences."""
    worst = model_gradient_max_errors(seed, instances)
    return _result("model_gradients", worst, 1.0)


def check_auc_oracle(seed: int = 8, trials: int = 200) -> CheckResult:
    """Rank-statistic AUC equals the exhaustive pair count with ties 0.5."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(2, 60))
        labels = rng.integers(0, 2, n)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        scores = np.round(rng.normal(size=n), int(rng.integers(0, 3)))
        fast = auc(scores, labels)
        pos = scores[labels == 1]
        neg = scores[labels == 0]
        wins = (pos[:, None] > neg[None, :]).sum() + 0.5 * (pos[:, None] == neg[None, :]).sum()
        brute = wins / (len(pos) * len(neg))
        worst = max(worst, abs(fast - brute))
    return _result("auc_pair_oracle", worst, 1e-12)


def check_projection(seed: int = 9) -> CheckResult:
    """Projection rescales only out-of-ball vectors, preserving direction."""
    rng = np.random.default_rng(seed)
    spec = poincare_ball(4, 2.0)
    worst = 0.0
    for _ in range(200):
        raw = rng.normal(0, 2, 4)
        p = project_to_ball(raw, spec, eps=1e-5)
        cn = 2.0 * float(p.coords @ p.coords)
        if cn >= 1.0:
            return CheckResult("ball_projection", False, "projected point not interior")
        cos = float(raw @ p.coords)
        if np.linalg.norm(raw) > 0 and np.linalg.norm(p.coords) > 0 and cos <= 0:
            return CheckResult("ball_projection", False, "direction flipped")
        worst = max(worst, cn)
    return _result("ball_projection", worst, (1 - 1e-5) ** 2 + 1e-12)


def run_all(seed: int = 42) -> list:
    """The full invariant suite; every entry prints a pass/fail line upstream."""
    return [
        check_mobius_identities(seed),
        check_left_cancellation(seed + 1),
        check_exp_log_inversion(seed + 2),
        check_metric_axioms(seed + 3),
        check_flat_limit(seed + 4),
        check_ball_feasibility(seed + 5, steps=2000),
        check_riemannian_scale(seed + 6),
        check_model_gradients(seed + 7, instances=8),
        check_auc_oracle(seed + 8),
        check_projection(seed + 9),
    ]
