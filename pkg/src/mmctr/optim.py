"""Riemannian first-order updates and a finite-difference gradient checker.

Ambient gradients are rescaled by the inverse metric ((1 - c|x|^2)^2 / 4 on
the ball, identity on Euclidean space) and applied through the exponential
map, followed by projection back into the open ball.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np

from .errors import ConfigError, DomainError
from .geometry import (
    DEFAULT_BALL_EPS,
    ManifoldPoint,
    ManifoldSpec,
    TangentVector,
    expmap0_c,
    expmap0_jacobian_apply_c,
    expmap_c,
    logmap0_c,
    project_c,
)


class UpdateMode(str, Enum):
    RIEMANNIAN = "riemannian"
    TANGENT_ORIGIN = "tangent_origin"


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float
    ball_eps: float = DEFAULT_BALL_EPS
    grad_clip: float | None = None

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0 < self.ball_eps <= 1e-2:
            raise ConfigError(f"ball_eps must be in (0, 1e-2], got {self.ball_eps}")
        if self.grad_clip is not None and not self.grad_clip > 0:
            raise ConfigError(f"grad_clip must be > 0, got {self.grad_clip}")


def _require_finite(g: np.ndarray):
    if not np.all(np.isfinite(g)):
        raise DomainError("gradient must be finite")


def riemannian_grad(x: ManifoldPoint, ambient_grad) -> TangentVector:
    """Inverse-metric rescaling: ((1 - c|x|^2)^2 / 4) * g on the ball, g unchanged otherwise."""
    g = np.asarray(ambient_grad, dtype=np.float64)
    if g.shape != (x.spec.dim,):
        raise DomainError(f"gradient shape {g.shape} does not match dim {x.spec.dim}")
    _require_finite(g)
    if not x.spec.is_ball:
        return TangentVector(g, x)
    c = x.spec.curvature
    scale = (1.0 - c * float(x.coords @ x.coords)) ** 2 / 4.0
    return TangentVector(scale * g, x)


def _clip_rows(g: np.ndarray, clip: float | None) -> np.ndarray:
    if clip is None:
        return g
    n = np.sqrt(np.sum(g * g, axis=-1, keepdims=True))
    factor = np.where(n > clip, clip / np.where(n > 0, n, 1.0), 1.0)
    return g * factor


def step_rows(
    rows: np.ndarray,
    ambient_grads: np.ndarray,
    spec: ManifoldSpec,
    cfg: OptimizerConfig,
    mode: UpdateMode = UpdateMode.RIEMANNIAN,
) -> np.ndarray:
    """Vectorized update of (n, dim) rows; returns new float64 rows.

    Rows whose step is exactly zero are returned unchanged (no projection),
    so a zero gradient is a true no-op.
    """
    x = np.asarray(rows, dtype=np.float64)
    g = np.asarray(ambient_grads, dtype=np.float64)
    _require_finite(g)
    lr = cfg.learning_rate
    if not spec.is_ball:
        return x - lr * _clip_rows(g, cfg.grad_clip)
    c = spec.curvature
    if mode == UpdateMode.RIEMANNIAN:
        scale = (1.0 - c * np.sum(x * x, axis=-1, keepdims=True)) ** 2 / 4.0
        v = -lr * _clip_rows(scale * g, cfg.grad_clip)
        out = project_c(expmap_c(x, v, c), c, cfg.ball_eps)
    else:
        w = logmap0_c(x, c)
        gw = _clip_rows(expmap0_jacobian_apply_c(w, g, c), cfg.grad_clip)
        v = -lr * gw
        out = project_c(expmap0_c(w + v, c), c, cfg.ball_eps)
    moved = np.sum(v * v, axis=-1, keepdims=True) > 0
    return np.where(moved, out, x)


def rsgd_step(x: ManifoldPoint, ambient_grad, cfg: OptimizerConfig) -> ManifoldPoint:
    """One Riemannian SGD step: x <- project(exp_x(-lr * rgrad))."""
    g = np.asarray(ambient_grad, dtype=np.float64)
    if g.shape != (x.spec.dim,):
        raise DomainError(f"gradient shape {g.shape} does not match dim {x.spec.dim}")
    out = step_rows(x.coords[None, :], g[None, :], x.spec, cfg)
    return ManifoldPoint(out[0], x.spec)


@dataclass
class GradientCheckReport:
    max_rel_err: float
    max_abs_err: float
    per_coordinate: np.ndarray = field(repr=False)  # relative error per coordinate
    fd_grad: np.ndarray = field(repr=False)
    analytic_grad: np.ndarray = field(repr=False)


def gradient_check(
    scalar_fn: Callable[[ManifoldPoint], float],
    x: ManifoldPoint,
    analytic_grad,
    h: float = 1e-5,
    rel_floor: float = 1e-8,
) -> GradientCheckReport:
    """Compare central finite differences of scalar_fn against an analytic gradient.

    Differences are taken in ambient coordinates. If a perturbed point would
    leave the ball, h is shrunk once; if it still leaves, DomainError.
    """
    if not 1e-7 <= h <= 1e-3:
        raise DomainError(f"h must be in [1e-7, 1e-3], got {h}")
    g = np.asarray(analytic_grad, dtype=np.float64)
    if g.shape != (x.spec.dim,):
        raise DomainError(f"analytic gradient shape {g.shape} does not match dim")
    _require_finite(g)

    def feasible(step: float) -> bool:
        if not x.spec.is_ball:
            return True
        c = x.spec.curvature
        worst = np.linalg.norm(x.coords) + step
        return c * worst * worst < 1.0

    if not feasible(h):
        h = h / 10.0
        if not feasible(h):
            raise DomainError("perturbed points leave the ball even after shrinking h")

    dim = x.spec.dim
    fd = np.empty(dim)
    for i in range(dim):
        plus = x.coords.copy()
        minus = x.coords.copy()
        plus[i] += h
        minus[i] -= h
        fd[i] = (
            scalar_fn(ManifoldPoint(plus, x.spec))
            - scalar_fn(ManifoldPoint(minus, x.spec))
        ) / (2.0 * h)

    abs_err = np.abs(fd - g)
    rel = abs_err / np.maximum(np.abs(g), rel_floor)
    return GradientCheckReport(
        max_rel_err=float(rel.max()),
        max_abs_err=float(abs_err.max()),
        per_coordinate=rel,
        fd_grad=fd,
        analytic_grad=g,
    )
