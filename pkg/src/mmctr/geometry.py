"""Euclidean and Poincare-ball manifold kernels.

Convention: curvature is stored as a magnitude c > 0; the sectional
curvature of the ball is -c and points live in the open ball of radius
1/sqrt(c). All kernels compute in float64 regardless of how embeddings
are stored.

Two layers:

* array kernels (``*_c`` suffix) operate on raw ndarrays with shape
  (..., dim) and a scalar curvature, broadcasting over leading axes;
  the model and optimizer hot paths use these.
* typed operations (``conformal_factor``, ``mobius_add``, ``distance``,
  ``exp_map``, ``log_map``, ``project_to_ball``) validate their operands
  and carry the manifold spec along.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigError, DomainError, SpecMismatchError

# Removable-singularity guard: below this norm, tanh/artanh quotients are
# replaced by their analytic limits.
ZERO_NORM = 1e-15
# Denominators smaller than this indicate numerically collapsed inputs.
MIN_DENOM = 1e-15
# artanh argument is kept strictly below 1 by this float-level margin.
ATANH_MAX = 1.0 - 1e-15
# Default margin used when projecting iterates back into the open ball.
DEFAULT_BALL_EPS = 1e-5


class ManifoldKind(str, Enum):
    EUCLIDEAN = "euclidean"
    POINCARE_BALL = "poincare_ball"


@dataclass(frozen=True)
class ManifoldSpec:
    """Geometry descriptor: kind, embedding dimension, curvature magnitude."""

    kind: ManifoldKind
    dim: int
    curvature: float = 0.0

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigError(f"dim must be >= 1, got {self.dim}")
        if self.kind == ManifoldKind.POINCARE_BALL and not self.curvature > 0:
            raise ConfigError(
                f"poincare_ball requires curvature > 0, got {self.curvature}"
            )
        if self.kind == ManifoldKind.EUCLIDEAN and self.curvature != 0:
            raise ConfigError(
                f"euclidean requires curvature = 0, got {self.curvature}"
            )

    @property
    def is_ball(self) -> bool:
        return self.kind == ManifoldKind.POINCARE_BALL


def euclidean(dim: int) -> ManifoldSpec:
    return ManifoldSpec(ManifoldKind.EUCLIDEAN, dim, 0.0)


def poincare_ball(dim: int, curvature: float = 1.0) -> ManifoldSpec:
    return ManifoldSpec(ManifoldKind.POINCARE_BALL, dim, curvature)


def _as_vector(coords, dim: int) -> np.ndarray:
    x = np.asarray(coords, dtype=np.float64)
    if x.shape != (dim,):
        raise DomainError(f"expected a vector of shape ({dim},), got {x.shape}")
    return x


@dataclass(frozen=True)
class ManifoldPoint:
    """A coordinate vector constrained to its manifold's valid region."""

    coords: np.ndarray
    spec: ManifoldSpec

    def __post_init__(self):
        x = _as_vector(self.coords, self.spec.dim)
        object.__setattr__(self, "coords", x)
        if not np.all(np.isfinite(x)):
            raise DomainError("point coordinates must be finite")
        if self.spec.is_ball:
            cn2 = self.spec.curvature * float(x @ x)
            if cn2 >= 1.0:
                raise DomainError(
                    f"point outside the open ball: c*|x|^2 = {cn2} >= 1"
                )

    def __neg__(self) -> "ManifoldPoint":
        return ManifoldPoint(-self.coords, self.spec)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, ManifoldPoint)
            and self.spec == other.spec
            and np.array_equal(self.coords, other.coords)
        )


def origin(spec: ManifoldSpec) -> ManifoldPoint:
    return ManifoldPoint(np.zeros(spec.dim), spec)


@dataclass(frozen=True)
class TangentVector:
    """A vector attached to the tangent space at ``base``."""

    coords: np.ndarray
    base: ManifoldPoint

    def __post_init__(self):
        v = _as_vector(self.coords, self.base.spec.dim)
        object.__setattr__(self, "coords", v)
        if not np.all(np.isfinite(v)):
            raise DomainError("tangent coordinates must be finite")


def _check_same_spec(a: ManifoldSpec, b: ManifoldSpec):
    if a != b:
        raise SpecMismatchError(f"manifold specs differ: {a} vs {b}")


# ---------------------------------------------------------------------------
# Array kernels (Poincare ball, curvature magnitude c > 0)
# ---------------------------------------------------------------------------


def _sqnorm(x: np.ndarray) -> np.ndarray:
    return np.sum(x * x, axis=-1, keepdims=True)


def lambda_c(x: np.ndarray, c: float) -> np.ndarray:
    """Conformal factor 2 / (1 - c|x|^2), shape (..., 1)."""
    denom = 1.0 - c * _sqnorm(x)
    if np.any(denom <= 0):
        raise DomainError("conformal factor undefined: c*|x|^2 >= 1")
    return 2.0 / denom


def mobius_add_c(x: np.ndarray, y: np.ndarray, c: float) -> np.ndarray:
    """Mobius addition x (+)_c y.

    [(1 + 2c<x,y> + c|y|^2) x + (1 - c|x|^2) y] / (1 + 2c<x,y> + c^2 |x|^2 |y|^2)
    """
    x2 = _sqnorm(x)
    y2 = _sqnorm(y)
    xy = np.sum(x * y, axis=-1, keepdims=True)
    num = (1.0 + 2.0 * c * xy + c * y2) * x + (1.0 - c * x2) * y
    den = 1.0 + 2.0 * c * xy + c * c * (x2 * y2)
    if np.any(np.abs(den) <= MIN_DENOM):
        raise DomainError("mobius_add denominator numerically collapsed")
    return num / den


def mobius_sqnorm_c(x: np.ndarray, y: np.ndarray, c: float) -> np.ndarray:
    """|(-x) (+)_c y|^2 via the rational identity |x-y|^2 / (1 - 2c<x,y> + c^2 |x|^2 |y|^2).

    Algebraically equal to the squared norm of the Mobius sum but exactly
    symmetric under x <-> y in floating point.
    """
    d2 = _sqnorm(x - y)
    den = 1.0 - 2.0 * c * np.sum(x * y, axis=-1, keepdims=True) + c * c * (
        _sqnorm(x) * _sqnorm(y)
    )
    if np.any(den <= MIN_DENOM):
        raise DomainError("mobius norm denominator numerically collapsed")
    return d2 / den


def dist_c(x: np.ndarray, y: np.ndarray, c: float) -> np.ndarray:
    """Geodesic distance (2/sqrt(c)) artanh(sqrt(c) |(-x) (+)_c y|), shape (...,)."""
    sq = mobius_sqnorm_c(x, y, c)
    arg = np.sqrt(np.maximum(c * sq, 0.0))
    if np.any(~np.isfinite(arg)):
        raise DomainError("non-finite distance argument")
    arg = np.minimum(arg, ATANH_MAX)
    return (2.0 / np.sqrt(c)) * np.arctanh(arg)[..., 0]


def dist_grad_c(x: np.ndarray, y: np.ndarray, c: float):
    """Ambient gradients (d dist/dx, d dist/dy) of the geodesic distance.

    Derived from the equivalent form dist = arccosh(gamma)/sqrt(c) with
    gamma = 1 + 2c|x-y|^2 / ((1-c|x|^2)(1-c|y|^2)). At x = y the distance
    has no gradient; the zero subgradient is returned.
    """
    diff = x - y
    d2 = _sqnorm(diff)
    a = 1.0 - c * _sqnorm(x)
    b = 1.0 - c * _sqnorm(y)
    ab = a * b
    gamma = 1.0 + 2.0 * c * d2 / ab
    # sqrt(gamma^2 - 1) ~ 2 sqrt(c d2 / ab) near d2 = 0; guard the quotient
    root = np.sqrt(np.maximum(gamma * gamma - 1.0, 0.0))
    safe = root > ZERO_NORM
    inv = np.where(safe, 1.0 / np.where(safe, root, 1.0), 0.0) / np.sqrt(c)
    gx = inv * ((4.0 * c / ab) * diff + (4.0 * c * c * d2 / (a * ab)) * x)
    gy = inv * ((4.0 * c / ab) * (-diff) + (4.0 * c * c * d2 / (b * ab)) * y)
    return gx, gy


def expmap_c(x: np.ndarray, v: np.ndarray, c: float) -> np.ndarray:
    """exp_x(v) = x (+)_c tanh(sqrt(c) lambda_x |v| / 2) v / (sqrt(c)|v|)."""
    vn = np.sqrt(_sqnorm(v))
    lam = lambda_c(x, c)
    sc = np.sqrt(c)
    t = np.tanh(sc * lam * vn / 2.0)
    small = vn <= ZERO_NORM
    # v/|v| with the |v| -> 0 limit exp_x(0) = x handled exactly
    direction = np.where(small, 0.0, v / np.where(small, 1.0, vn))
    second = t * direction / sc
    out = mobius_add_c(x, second, c)
    return np.where(small, x, out)


def logmap_c(x: np.ndarray, y: np.ndarray, c: float) -> np.ndarray:
    """log_x(y) = (2 / (sqrt(c) lambda_x)) artanh(sqrt(c)|m|) m / |m|, m = (-x) (+)_c y."""
    m = mobius_add_c(-x, y, c)
    mn = np.sqrt(_sqnorm(m))
    lam = lambda_c(x, c)
    sc = np.sqrt(c)
    small = mn <= ZERO_NORM
    arg = np.minimum(sc * mn, ATANH_MAX)
    coef = (2.0 / (sc * lam)) * np.arctanh(arg) / np.where(small, 1.0, mn)
    return np.where(small, 0.0, coef * m)


def expmap0_c(v: np.ndarray, c: float) -> np.ndarray:
    """exp at the origin: tanh(sqrt(c)|v|) v / (sqrt(c)|v|)."""
    vn = np.sqrt(_sqnorm(v))
    sc = np.sqrt(c)
    small = vn <= ZERO_NORM
    coef = np.tanh(sc * vn) / (sc * np.where(small, 1.0, vn))
    return np.where(small, v, coef * v)


def logmap0_c(x: np.ndarray, c: float) -> np.ndarray:
    """log at the origin: artanh(sqrt(c)|x|) x / (sqrt(c)|x|)."""
    xn = np.sqrt(_sqnorm(x))
    sc = np.sqrt(c)
    small = xn <= ZERO_NORM
    arg = np.minimum(sc * xn, ATANH_MAX)
    coef = np.arctanh(arg) / (sc * np.where(small, 1.0, xn))
    return np.where(small, x, coef * x)


def expmap0_jacobian_apply_c(w: np.ndarray, g: np.ndarray, c: float) -> np.ndarray:
    """Apply the (symmetric) Jacobian of exp_0 at w to an ambient gradient g.

    J = u I + (sech^2(sqrt(c) r) - u) w_hat w_hat^T with u = tanh(sqrt(c) r)/(sqrt(c) r),
    r = |w|; J -> I as r -> 0.
    """
    r = np.sqrt(_sqnorm(w))
    sc = np.sqrt(c)
    small = r <= ZERO_NORM
    rs = np.where(small, 1.0, r)
    th = np.tanh(sc * r)
    u = th / (sc * rs)
    fprime = 1.0 - th * th
    what = w / rs
    radial = np.sum(what * g, axis=-1, keepdims=True)
    out = u * g + (fprime - u) * radial * what
    return np.where(small, g, out)


def project_c(x: np.ndarray, c: float, eps: float = DEFAULT_BALL_EPS) -> np.ndarray:
    """Rescale rows with |x| >= (1-eps)/sqrt(c) to that norm, direction preserved."""
    if not np.all(np.isfinite(x)):
        raise DomainError("cannot project non-finite coordinates")
    xn = np.sqrt(_sqnorm(x))
    max_norm = (1.0 - eps) / np.sqrt(c)
    needs = xn >= max_norm
    scale = np.where(needs, max_norm / np.where(xn > 0, xn, 1.0), 1.0)
    return x * scale


# ---------------------------------------------------------------------------
# Typed operations
# ---------------------------------------------------------------------------


def conformal_factor(x: ManifoldPoint) -> float:
    """Metric scaling at x: 2/(1 - c|x|^2) on the ball, 1 on Euclidean space."""
    if not x.spec.is_ball:
        return 1.0
    return float(lambda_c(x.coords, x.spec.curvature)[0])


def mobius_add(x: ManifoldPoint, y: ManifoldPoint) -> ManifoldPoint:
    _check_same_spec(x.spec, y.spec)
    if not x.spec.is_ball:
        raise DomainError("mobius_add is defined on the Poincare ball only")
    c = x.spec.curvature
    out = mobius_add_c(x.coords, y.coords, c)
    # float-level guard: results can round onto the boundary for inputs
    # that are themselves within one ulp of it
    if c * float(out @ out) >= 1.0:
        out = project_c(out, c, eps=1e-12)
    return ManifoldPoint(out, x.spec)


def distance(x: ManifoldPoint, y: ManifoldPoint) -> float:
    """Geodesic distance; Euclidean |x - y|, ball (2/sqrt(c)) artanh(...)."""
    _check_same_spec(x.spec, y.spec)
    if not x.spec.is_ball:
        return float(np.linalg.norm(x.coords - y.coords))
    return float(dist_c(x.coords, y.coords, x.spec.curvature))


def exp_map(x: ManifoldPoint, v: TangentVector) -> ManifoldPoint:
    """Map tangent vector v at x to the manifold; exp_x(0) = x exactly."""
    if v.base != x:
        raise SpecMismatchError("tangent vector is not based at x")
    if not x.spec.is_ball:
        return ManifoldPoint(x.coords + v.coords, x.spec)
    c = x.spec.curvature
    out = expmap_c(x.coords, v.coords, c)
    if c * float(out @ out) >= 1.0:
        out = project_c(out, c, eps=1e-12)
    return ManifoldPoint(out, x.spec)


def log_map(x: ManifoldPoint, y: ManifoldPoint) -> TangentVector:
    """Inverse of exp_map: tangent vector at x pointing to y; zero when x = y."""
    _check_same_spec(x.spec, y.spec)
    if not x.spec.is_ball:
        return TangentVector(y.coords - x.coords, x)
    return TangentVector(logmap_c(x.coords, y.coords, x.spec.curvature), x)


def project_to_ball(
    coords, spec: ManifoldSpec, eps: float = DEFAULT_BALL_EPS
) -> ManifoldPoint:
    """Pull a raw vector into the open ball with margin eps; Euclidean passes through."""
    x = _as_vector(coords, spec.dim)
    if not np.all(np.isfinite(x)):
        raise DomainError("cannot project non-finite coordinates")
    if not spec.is_ball:
        return ManifoldPoint(x, spec)
    return ManifoldPoint(project_c(x, spec.curvature, eps), spec)
