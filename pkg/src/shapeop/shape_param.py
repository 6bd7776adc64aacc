"""Affine-parametric shape families on a fixed reference domain.

A shape atlas represents the deformation field

    V_y(x) = V_0(x) + sum_k w_k * phi_k(x) * y_k,    y in [-1, 1]^K,

together with everything derived from it: Jacobians and their singular
values, the gamma sequence gamma_k = w_k * ||phi_k||_C1 whose sum c_gamma < 1
guarantees that every V_y is an orientation-preserving diffeomorphism,
uniformity diagnostics, the coordinate scaling map, and parameter sampling.

All atlases are immutable after construction and every operation here is a
pure function of its inputs, so concurrent reads are safe.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import AtlasError, ConfigError, DomainError

__all__ = [
    "Domain",
    "SQUARE",
    "DISK",
    "ShapeFeature",
    "SineFeature",
    "PolyBubbleFeature",
    "ConstantFeature",
    "LinearFeature",
    "ZeroFeature",
    "CallableFeature",
    "WeightSequence",
    "ShapeAtlas",
    "ParamPoint",
    "JacobianSample",
    "GammaReport",
    "UniformityReport",
    "make_atlas",
    "sine_feature_catalog",
    "bubble_feature_catalog",
    "evaluate_field",
    "jacobian",
    "jacobian_matrices",
    "gamma_sequence",
    "check_uniformity",
    "scaling_map",
    "scaled_atlas",
    "sample_cube",
    "sample_cube_batch",
]

_C1_SAFETY = 1.05
_C1_GRID = 64


# ---------------------------------------------------------------------------
# reference domains
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Domain:
    """Reference domain descriptor: the unit square (0,1)^2 or the unit disk."""

    name: str

    def __post_init__(self):
        if self.name not in ("square", "disk"):
            raise DomainError(f"unsupported reference domain {self.name!r}")

    def contains(self, pts: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        if self.name == "square":
            return np.all((pts >= -tol) & (pts <= 1.0 + tol), axis=-1)
        r2 = np.sum(pts * pts, axis=-1)
        return r2 <= 1.0 + tol

    def sample_grid(self, n: int = _C1_GRID) -> np.ndarray:
        """Tensor grid used for sup-norm estimates (masked to the disk)."""
        if self.name == "square":
            t = np.linspace(0.0, 1.0, n)
        else:
            t = np.linspace(-1.0, 1.0, n)
        xx, yy = np.meshgrid(t, t, indexing="ij")
        pts = np.column_stack([xx.ravel(), yy.ravel()])
        if self.name == "disk":
            pts = pts[self.contains(pts)]
            theta = np.linspace(0.0, 2.0 * np.pi, 4 * n, endpoint=False)
            ring = np.column_stack([np.cos(theta), np.sin(theta)])
            pts = np.vstack([pts, ring])
        return pts


SQUARE = Domain("square")
DISK = Domain("disk")


# ---------------------------------------------------------------------------
# shape features
# ---------------------------------------------------------------------------

class ShapeFeature:
    """A displacement field on the reference domain with analytic gradient.

    ``value`` maps points of shape (..., 2) to displacement vectors (..., 2);
    ``gradient`` returns the Jacobian d(value_i)/d(x_j) with shape (..., 2, 2).
    Subclasses must keep the gradient the exact analytic derivative of value;
    this is enforced against central finite differences in the test suite.
    """

    def value(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def gradient(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def c1_norm_estimate(self, domain: Domain, n: int = _C1_GRID,
                         safety: float = _C1_SAFETY) -> float:
        """Sample-grid sup of |value| + opnorm(gradient), times a safety factor."""
        pts = domain.sample_grid(n)
        v = np.linalg.norm(self.value(pts), axis=-1)
        g = np.linalg.norm(self.gradient(pts), ord=2, axis=(-2, -1))
        return safety * float(np.max(v + g))


def _axis_vector(values: np.ndarray, axis: int) -> np.ndarray:
    out = np.zeros(values.shape + (2,))
    out[..., axis] = values
    return out


class SineFeature(ShapeFeature):
    """phi(x) = sin(pi*k1*x1) * sin(pi*k2*x2) * e_axis."""

    def __init__(self, k1: int, k2: int, axis: int):
        if k1 < 1 or k2 < 1 or axis not in (0, 1):
            raise ConfigError("SineFeature needs k1, k2 >= 1 and axis in {0, 1}")
        self.k1, self.k2, self.axis = int(k1), int(k2), int(axis)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        s = np.sin(np.pi * self.k1 * x[..., 0]) * np.sin(np.pi * self.k2 * x[..., 1])
        return _axis_vector(s, self.axis)

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        s1 = np.sin(np.pi * self.k1 * x[..., 0])
        c1 = np.cos(np.pi * self.k1 * x[..., 0])
        s2 = np.sin(np.pi * self.k2 * x[..., 1])
        c2 = np.cos(np.pi * self.k2 * x[..., 1])
        g = np.zeros(x.shape[:-1] + (2, 2))
        g[..., self.axis, 0] = np.pi * self.k1 * c1 * s2
        g[..., self.axis, 1] = np.pi * self.k2 * s1 * c2
        return g

    def __repr__(self):
        return f"SineFeature(k1={self.k1}, k2={self.k2}, axis={self.axis})"


class PolyBubbleFeature(ShapeFeature):
    """phi(x) = (x1*(1-x1))^p1 * (x2*(1-x2))^p2 * e_axis, p1 + p2 >= 1."""

    def __init__(self, p1: int, p2: int, axis: int):
        if p1 < 0 or p2 < 0 or p1 + p2 < 1 or axis not in (0, 1):
            raise ConfigError("PolyBubbleFeature needs p1, p2 >= 0, p1+p2 >= 1")
        self.p1, self.p2, self.axis = int(p1), int(p2), int(axis)

    @staticmethod
    def _b(t, p):
        return (t * (1.0 - t)) ** p if p > 0 else np.ones_like(t)

    @staticmethod
    def _db(t, p):
        if p == 0:
            return np.zeros_like(t)
        return p * (t * (1.0 - t)) ** (p - 1) * (1.0 - 2.0 * t)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        v = self._b(x[..., 0], self.p1) * self._b(x[..., 1], self.p2)
        return _axis_vector(v, self.axis)

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        g = np.zeros(x.shape[:-1] + (2, 2))
        g[..., self.axis, 0] = self._db(x[..., 0], self.p1) * self._b(x[..., 1], self.p2)
        g[..., self.axis, 1] = self._b(x[..., 0], self.p1) * self._db(x[..., 1], self.p2)
        return g

    def __repr__(self):
        return f"PolyBubbleFeature(p1={self.p1}, p2={self.p2}, axis={self.axis})"


class ConstantFeature(ShapeFeature):
    """Constant displacement (a translation direction)."""

    def __init__(self, vec: Sequence[float]):
        self.vec = np.asarray(vec, dtype=float).reshape(2)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self.vec, x.shape).copy()

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (2, 2))


class LinearFeature(ShapeFeature):
    """phi(x) = M @ x with a constant 2x2 matrix M."""

    def __init__(self, matrix: Sequence[Sequence[float]]):
        self.matrix = np.asarray(matrix, dtype=float).reshape(2, 2)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return x @ self.matrix.T

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self.matrix, x.shape[:-1] + (2, 2)).copy()


class ZeroFeature(ShapeFeature):
    """Identically zero displacement (an inactive parameter slot)."""

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape)

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (2, 2))


class CallableFeature(ShapeFeature):
    """Wraps user-supplied (value, gradient) callables on point arrays."""

    def __init__(self, value_fn: Callable, gradient_fn: Callable):
        self._value, self._gradient = value_fn, gradient_fn

    def value(self, x):
        return np.asarray(self._value(np.asarray(x, dtype=float)), dtype=float)

    def gradient(self, x):
        return np.asarray(self._gradient(np.asarray(x, dtype=float)), dtype=float)


class IdentityField(ShapeFeature):
    """Nominal field V_0(x) = x."""

    def value(self, x):
        return np.asarray(x, dtype=float).copy()

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.eye(2), x.shape[:-1] + (2, 2)).copy()


class AffineField(ShapeFeature):
    """Nominal field V_0(x) = M @ x + b."""

    def __init__(self, matrix, offset=(0.0, 0.0)):
        self.matrix = np.asarray(matrix, dtype=float).reshape(2, 2)
        self.offset = np.asarray(offset, dtype=float).reshape(2)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return x @ self.matrix.T + self.offset

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self.matrix, x.shape[:-1] + (2, 2)).copy()


def sine_feature_catalog(count: int) -> list[ShapeFeature]:
    """First ``count`` tensorized sine bumps in the fixed diagonal enumeration.

    Pairs (k1, k2) are ordered by (k1 + k2, k1), each emitted once per axis.
    """
    feats: list[ShapeFeature] = []
    total = 2
    while len(feats) < count:
        for k1 in range(1, total):
            k2 = total - k1
            for axis in (0, 1):
                feats.append(SineFeature(k1, k2, axis))
                if len(feats) == count:
                    return feats
        total += 1
    return feats


def bubble_feature_catalog(count: int) -> list[ShapeFeature]:
    """First ``count`` polynomial bubbles, ordered by (p1 + p2, p1), per axis."""
    feats: list[ShapeFeature] = []
    total = 1
    while len(feats) < count:
        for p1 in range(0, total + 1):
            p2 = total - p1
            for axis in (0, 1):
                feats.append(PolyBubbleFeature(p1, p2, axis))
                if len(feats) == count:
                    return feats
        total += 1
    return feats


# ---------------------------------------------------------------------------
# weights, atlas, parameter points
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WeightSequence:
    """Positive, non-increasing weights w_1 >= w_2 >= ... > 0.

    ``generator`` optionally records the closed-form rule ("power", c, beta)
    with w_k = c * k^(-beta); beta > 1 is required so that the extended
    sequence decays faster than 1/k and stays summable after any 1+eps power.
    """

    values: tuple[float, ...]
    generator: Optional[tuple] = None

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.size == 0:
            raise ConfigError("weight sequence must be nonempty")
        if np.any(vals <= 0.0):
            raise ConfigError("weights must be strictly positive")
        if np.any(np.diff(vals) > 1e-15):
            raise ConfigError("weights must be non-increasing")
        if self.generator is not None:
            kind, _, beta = self.generator
            if kind != "power":
                raise ConfigError(f"unknown weight generator {kind!r}")
            if beta <= 1.0:
                raise ConfigError("power-law weights need beta > 1 (summability)")
        object.__setattr__(self, "values", tuple(float(v) for v in vals))

    @classmethod
    def power(cls, c: float, beta: float, count: int) -> "WeightSequence":
        ks = np.arange(1, count + 1, dtype=float)
        return cls(tuple(c * ks ** (-beta)), generator=("power", float(c), float(beta)))

    def extend(self, count: int) -> np.ndarray:
        """Weights w_1..w_count, using the generator beyond the stored prefix."""
        if count <= len(self.values):
            return np.asarray(self.values[:count])
        if self.generator is None:
            raise ConfigError("cannot extend weights without a generator rule")
        _, c, beta = self.generator
        ks = np.arange(1, count + 1, dtype=float)
        out = c * ks ** (-beta)
        out[: len(self.values)] = self.values
        return out

    def __len__(self):
        return len(self.values)

    def array(self) -> np.ndarray:
        return np.asarray(self.values)


@dataclass(frozen=True, eq=False)
class ParamPoint:
    """Truncated parameter point y in [-1, 1]^K."""

    coords: np.ndarray

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.coords, dtype=float))
        if c.ndim != 1:
            raise ConfigError("parameter point must be a flat sequence")
        if np.any(np.abs(c) > 1.0 + 1e-12):
            raise ConfigError("parameter coordinates must lie in [-1, 1]")
        object.__setattr__(self, "coords", c)

    def __len__(self):
        return self.coords.size


@dataclass(frozen=True, eq=False)
class JacobianSample:
    """Jacobian of V_y at one reference point."""

    matrix: np.ndarray
    det: float
    singular_values: tuple[float, float]  # (sigma_min, sigma_max)


@dataclass(frozen=True, eq=False)
class GammaReport:
    gamma: np.ndarray
    c_gamma: float
    valid: bool  # c_gamma < 1


@dataclass(frozen=True, eq=False)
class UniformityReport:
    sigma_min: float
    sigma_max: float
    v_c1_max: float                # max over sampled y of sup(|V_y| + ||J_y||)
    inverse_c1_estimate: float     # sup(|x| + 1/sigma_min(J_y(x))) over samples


@dataclass(frozen=True, eq=False)
class ShapeAtlas:
    """Immutable affine-parametric shape family over a fixed feature basis."""

    reference_domain: Domain
    nominal: ShapeFeature
    features: tuple[ShapeFeature, ...]
    weights: WeightSequence
    truncation_dim: int
    c1_norms: tuple[float, ...]

    def __post_init__(self):
        if self.truncation_dim < 0:
            raise ConfigError("truncation_dim must be >= 0")
        if len(self.features) < self.truncation_dim:
            raise AtlasError("need at least truncation_dim features")
        if len(self.c1_norms) != len(self.features):
            raise AtlasError("one C1-norm estimate per feature required")

    @property
    def active_weights(self) -> np.ndarray:
        return self.weights.extend(self.truncation_dim)

    def gamma(self) -> GammaReport:
        return gamma_sequence(self)


def identity_atlas(domain: Domain | str = SQUARE) -> ShapeAtlas:
    """Featureless atlas with V_y = x for every y (the trivial family)."""
    if isinstance(domain, str):
        domain = Domain(domain)
    return ShapeAtlas(domain, IdentityField(), (), WeightSequence((1.0,)), 0, ())


def make_atlas(domain: Domain | str, nominal: ShapeFeature,
               features: Sequence[ShapeFeature], weights: WeightSequence,
               truncation_dim: Optional[int] = None,
               grid_n: int = _C1_GRID) -> ShapeAtlas:
    """Build an atlas, estimating the C1 norm of every feature on a sample grid."""
    if isinstance(domain, str):
        domain = Domain(domain)
    feats = tuple(features)
    if truncation_dim is None:
        truncation_dim = len(feats)
    norms = tuple(f.c1_norm_estimate(domain, grid_n) for f in feats)
    return ShapeAtlas(domain, nominal, feats, weights, truncation_dim, norms)


# ---------------------------------------------------------------------------
# field and Jacobian evaluation
# ---------------------------------------------------------------------------

def _check_point_args(atlas: ShapeAtlas, y: ParamPoint, x: np.ndarray) -> np.ndarray:
    if len(y) != atlas.truncation_dim:
        raise ConfigError(
            f"parameter point has dim {len(y)}, atlas truncation is {atlas.truncation_dim}")
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != 2:
        raise DomainError("reference points must have 2 coordinates")
    if not np.all(atlas.reference_domain.contains(x)):
        raise DomainError("point outside the closure of the reference domain")
    return x


def _field_unchecked(atlas: ShapeAtlas, y: ParamPoint, x: np.ndarray) -> np.ndarray:
    out = atlas.nominal.value(x)
    w = atlas.active_weights
    for k in range(atlas.truncation_dim):
        c = w[k] * y.coords[k]
        if c != 0.0:
            out = out + c * atlas.features[k].value(x)
    return out


def _jacobian_unchecked(atlas: ShapeAtlas, y: ParamPoint, x: np.ndarray) -> np.ndarray:
    out = atlas.nominal.gradient(x)
    w = atlas.active_weights
    for k in range(atlas.truncation_dim):
        c = w[k] * y.coords[k]
        if c != 0.0:
            out = out + c * atlas.features[k].gradient(x)
    return out


def evaluate_field(atlas: ShapeAtlas, y: ParamPoint, x: np.ndarray) -> np.ndarray:
    """V_y(x) = V_0(x) + sum_k w_k * phi_k(x) * y_k."""
    x = _check_point_args(atlas, y, x)
    return _field_unchecked(atlas, y, x)


def jacobian_matrices(atlas: ShapeAtlas, y: ParamPoint, x: np.ndarray) -> np.ndarray:
    """Jacobians J_y(x) for a batch of reference points, shape (..., 2, 2)."""
    x = _check_point_args(atlas, y, x)
    return _jacobian_unchecked(atlas, y, x)


def jacobian(atlas: ShapeAtlas, y: ParamPoint, x: np.ndarray) -> JacobianSample:
    """Jacobian sample at a single reference point, with det and singular values."""
    m = jacobian_matrices(atlas, y, np.asarray(x, dtype=float).reshape(2))
    det = float(m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0])
    sv = np.linalg.svd(m, compute_uv=False)
    return JacobianSample(matrix=m, det=det,
                          singular_values=(float(sv[-1]), float(sv[0])))


def gamma_sequence(atlas: ShapeAtlas) -> GammaReport:
    """gamma_k = w_k * ||phi_k||_C1 (sample-grid estimate) and c_gamma = sum."""
    if len(atlas.features) == 0:
        raise AtlasError("atlas has no features")
    n = len(atlas.features)
    w = atlas.weights.extend(n)
    gamma = w * np.asarray(atlas.c1_norms)
    c_gamma = float(np.sum(gamma))
    return GammaReport(gamma=gamma, c_gamma=c_gamma, valid=c_gamma < 1.0)


def _corner_params(K: int, n_extra: int = 0, seed: int = 0) -> list[np.ndarray]:
    """Zero, all one-hot +-1 corners, and optionally random full sign corners."""
    pts = [np.zeros(K)]
    for k in range(K):
        for s in (1.0, -1.0):
            e = np.zeros(K)
            e[k] = s
            pts.append(e)
    if n_extra > 0:
        rng = np.random.default_rng(seed)
        for _ in range(n_extra):
            pts.append(rng.choice([-1.0, 1.0], size=K))
    return pts


def check_uniformity(atlas: ShapeAtlas, n_param_samples: Optional[int] = None,
                     n_space_samples: int = 17) -> UniformityReport:
    """Sampled singular-value range of J_y(x) over the parameter/space grid.

    Samples the zero parameter and all +-1 one-hot corners (2K+1 points,
    corners extremize affine maps), plus random full sign corners when
    n_param_samples exceeds 2K+1. Rejects the atlas on any non-positive
    determinant or when c_gamma >= 1.
    """
    if len(atlas.features) > 0:
        report = gamma_sequence(atlas)
        if not report.valid:
            raise AtlasError(f"atlas invalid: c_gamma = {report.c_gamma:.6g} >= 1")
    K = atlas.truncation_dim
    n_extra = 0
    if n_param_samples is not None and n_param_samples > 2 * K + 1:
        n_extra = n_param_samples - (2 * K + 1)
    pts = atlas.reference_domain.sample_grid(n_space_samples)
    smin, smax = np.inf, 0.0
    c1max, invmax = 0.0, 0.0
    for yv in _corner_params(K, n_extra):
        y = ParamPoint(yv)
        J = jacobian_matrices(atlas, y, pts)
        det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
        if np.any(det <= 0.0):
            raise AtlasError(f"non-positive Jacobian determinant sampled at y={yv}")
        sv = np.linalg.svd(J, compute_uv=False)
        smin = min(smin, float(np.min(sv[..., -1])))
        smax = max(smax, float(np.max(sv[..., 0])))
        vnorm = np.linalg.norm(evaluate_field(atlas, y, pts), axis=-1)
        opn = sv[..., 0]
        c1max = max(c1max, float(np.max(vnorm + opn)))
        invmax = max(invmax, float(np.max(np.linalg.norm(pts, axis=-1) + 1.0 / sv[..., -1])))
    return UniformityReport(sigma_min=smin, sigma_max=smax,
                            v_c1_max=c1max, inverse_c1_estimate=invmax)


# ---------------------------------------------------------------------------
# scaling map and sampling
# ---------------------------------------------------------------------------

def scaling_map(atlas: ShapeAtlas, r: float, s: float, y: ParamPoint) -> np.ndarray:
    """Coefficients (r * w_j^s * y_j) of the scaled field against the features.

    s > 1/2 is required for the map to land in the shape space for infinite
    parameter sequences; r must be positive.
    """
    if s <= 0.5:
        raise ConfigError("scaling map requires s > 1/2")
    if r <= 0.0:
        raise ConfigError("scaling map requires r > 0")
    if len(y) != atlas.truncation_dim:
        raise ConfigError("parameter dim does not match atlas truncation")
    w = atlas.active_weights
    return r * w ** s * y.coords


def scaled_atlas(atlas: ShapeAtlas, r: float, s: float) -> ShapeAtlas:
    """Atlas of the cube-set family: same features, weights r * w^s.

    The deformations of the returned atlas are exactly V_0 + sigma_r^s(y),
    i.e. shape coordinates r * w_j^s * y_j against the original features.
    """
    if s <= 0.5:
        raise ConfigError("cube-set scaling requires s > 1/2")
    if r <= 0.0:
        raise ConfigError("cube-set scaling requires r > 0")
    w = atlas.weights.extend(len(atlas.features))
    scaled = tuple(float(r * wk ** s) for wk in w)
    gen = None
    if atlas.weights.generator is not None:
        _, c, beta = atlas.weights.generator
        gen = ("power", float(r * c ** s), float(beta * s))
    return ShapeAtlas(atlas.reference_domain, atlas.nominal, atlas.features,
                      WeightSequence(scaled, generator=gen),
                      atlas.truncation_dim, atlas.c1_norms)


def sample_cube(rng_seed: int, K: int) -> ParamPoint:
    """One uniform draw from [-1, 1]^K; deterministic for a fixed seed."""
    if K < 1:
        raise ConfigError("K must be >= 1")
    rng = np.random.default_rng(rng_seed)
    return ParamPoint(rng.uniform(-1.0, 1.0, size=K))


def sample_cube_batch(rng_seed: int, K: int, count: int) -> np.ndarray:
    """``count`` i.i.d. uniform draws from [-1, 1]^K as rows of an array."""
    if K < 1 or count < 1:
        raise ConfigError("K and count must be >= 1")
    rng = np.random.default_rng(rng_seed)
    return rng.uniform(-1.0, 1.0, size=(count, K))
