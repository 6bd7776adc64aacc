"""Pullback of physical-domain PDE data to the reference domain.

For the Poisson problem -Lap(u) = f on the deformed domain V_y(D_ref), the
pulled-back coefficient and right-hand side are

    A_ref(x) = (J_y(x)^T J_y(x))^(-1) * det J_y(x),
    f_ref(x) = f(V_y(x)) * det J_y(x).

For heterogeneous media the diffusion matrix enters either in Eulerian form
(defined on the hold-all, composed with V_y) or in Lagrangian form (defined
directly on D_ref, covering piecewise-constant interface coefficients):

    A_ref(x) = J^(-1) * A(V_y(x) or x) * J^(-T) * det J.

This is the symmetric form; it reduces to the Poisson coefficient at A = I.
All objects here are picklable and pure, so solves can run in worker
processes during benchmarking.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, PullbackError, TransportError
from .shape_param import (
    ParamPoint,
    ShapeAtlas,
    _field_unchecked,
    _jacobian_unchecked,
    evaluate_field,
    jacobian_matrices,
)

__all__ = [
    "SourceField",
    "ConstantSource",
    "TrigSource",
    "ManufacturedSineSource",
    "DiffusionField",
    "ConstantDiffusion",
    "TrigDiffusion",
    "PiecewiseConstantDiffusion",
    "PulledBackProblem",
    "pullback_poisson",
    "pullback_diffusion_eulerian",
    "pullback_diffusion_lagrangian",
    "transport_solution",
    "invert_field",
]


# ---------------------------------------------------------------------------
# source fields (defined on the hold-all)
# ---------------------------------------------------------------------------

class SourceField:
    """Scalar load, evaluable on the hold-all covering every V_y(D_ref)."""

    smoothness = "analytic"

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class ConstantSource(SourceField):
    def __init__(self, c: float = 1.0):
        self.c = float(c)

    def __call__(self, pts):
        pts = np.asarray(pts, dtype=float)
        return np.full(pts.shape[:-1], self.c)


class TrigSource(SourceField):
    """f(x) = a * sin(kx * x1 + px) * sin(ky * x2 + py) + offset."""

    def __init__(self, a=1.0, kx=np.pi, ky=np.pi, px=0.0, py=0.0, offset=0.0):
        self.a, self.kx, self.ky = float(a), float(kx), float(ky)
        self.px, self.py, self.offset = float(px), float(py), float(offset)

    def __call__(self, pts):
        pts = np.asarray(pts, dtype=float)
        return (self.a * np.sin(self.kx * pts[..., 0] + self.px)
                * np.sin(self.ky * pts[..., 1] + self.py) + self.offset)


class ManufacturedSineSource(SourceField):
    """f = 2*pi^2*sin(pi x1)*sin(pi x2), the load of u = sin(pi x1) sin(pi x2)."""

    def __call__(self, pts):
        pts = np.asarray(pts, dtype=float)
        return (2.0 * np.pi ** 2 * np.sin(np.pi * pts[..., 0])
                * np.sin(np.pi * pts[..., 1]))


# ---------------------------------------------------------------------------
# diffusion fields
# ---------------------------------------------------------------------------

class DiffusionField:
    """SPD matrix field with a frame-of-reference tag.

    ``frame_of_reference`` is "eulerian" (defined on the hold-all, transported
    along with the material) or "lagrangian" (defined on D_ref; piecewise
    constants over reference subdomains model interface problems).
    ``ellipticity`` holds the (a_minus, a_plus) bounds.
    """

    frame_of_reference = "eulerian"
    ellipticity = (1.0, 1.0)

    def matrix(self, pts: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class ConstantDiffusion(DiffusionField):
    def __init__(self, matrix, frame_of_reference="eulerian"):
        m = np.asarray(matrix, dtype=float)
        if m.shape == ():
            m = float(m) * np.eye(2)
        if m.shape != (2, 2) or not np.allclose(m, m.T):
            raise ConfigError("diffusion matrix must be symmetric 2x2")
        ev = np.linalg.eigvalsh(m)
        if ev[0] <= 0:
            raise ConfigError("diffusion matrix must be positive definite")
        self._m = m
        self.frame_of_reference = frame_of_reference
        self.ellipticity = (float(ev[0]), float(ev[-1]))

    def matrix(self, pts):
        pts = np.asarray(pts, dtype=float)
        return np.broadcast_to(self._m, pts.shape[:-1] + (2, 2)).copy()


class TrigDiffusion(DiffusionField):
    """A(x) = (base + amp * sin(kx*x1) * sin(ky*x2)) * I, smooth and isotropic."""

    def __init__(self, base=2.0, amp=0.5, kx=np.pi, ky=np.pi,
                 frame_of_reference="eulerian"):
        if abs(amp) >= base:
            raise ConfigError("need |amp| < base for uniform ellipticity")
        self.base, self.amp, self.kx, self.ky = map(float, (base, amp, kx, ky))
        self.frame_of_reference = frame_of_reference
        self.ellipticity = (self.base - abs(self.amp), self.base + abs(self.amp))

    def matrix(self, pts):
        pts = np.asarray(pts, dtype=float)
        s = self.base + self.amp * np.sin(self.kx * pts[..., 0]) * np.sin(self.ky * pts[..., 1])
        out = np.zeros(pts.shape[:-1] + (2, 2))
        out[..., 0, 0] = s
        out[..., 1, 1] = s
        return out


class PiecewiseConstantDiffusion(DiffusionField):
    """alpha_i * I on reference subdomains, Lagrangian frame.

    Regions are half-planes ("halfplane", axis, threshold, "below"/"above")
    or axis-aligned boxes ("box", x0, x1, y0, y1); the first matching region
    wins and ``default`` applies elsewhere. Interface problems are covered by
    aligning thresholds with mesh lines.
    """

    smoothness = "piecewise"
    frame_of_reference = "lagrangian"

    def __init__(self, regions: Sequence[tuple], default: float = 1.0):
        self.regions = [tuple(r) for r in regions]
        self.default = float(default)
        alphas = [float(r[-1]) for r in self.regions] + [self.default]
        if min(alphas) <= 0:
            raise ConfigError("piecewise diffusion values must be positive")
        self.ellipticity = (min(alphas), max(alphas))

    def scalar(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        out = np.full(pts.shape[:-1], self.default)
        assigned = np.zeros(pts.shape[:-1], dtype=bool)
        for region in self.regions:
            kind = region[0]
            if kind == "halfplane":
                _, axis, threshold, side, alpha = region
                mask = (pts[..., axis] <= threshold) if side == "below" \
                    else (pts[..., axis] > threshold)
            elif kind == "box":
                _, x0, x1, y0, y1, alpha = region
                mask = ((pts[..., 0] >= x0) & (pts[..., 0] <= x1)
                        & (pts[..., 1] >= y0) & (pts[..., 1] <= y1))
            else:
                raise ConfigError(f"unknown region kind {kind!r}")
            take = mask & ~assigned
            out[take] = alpha
            assigned |= mask
        return out

    def matrix(self, pts):
        s = self.scalar(pts)
        out = np.zeros(s.shape + (2, 2))
        out[..., 0, 0] = s
        out[..., 1, 1] = s
        return out


# ---------------------------------------------------------------------------
# pulled-back problem
# ---------------------------------------------------------------------------

def _det2(J):
    return J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]


def _inv2(J, det):
    inv = np.empty_like(J)
    inv[..., 0, 0] = J[..., 1, 1]
    inv[..., 1, 1] = J[..., 0, 0]
    inv[..., 0, 1] = -J[..., 0, 1]
    inv[..., 1, 0] = -J[..., 1, 0]
    return inv / det[..., None, None]


class PulledBackProblem:
    """Reference-domain coefficient A_ref_y and load f_ref_y for one (atlas, y).

    ``variant`` selects the model: "poisson", "diffusion_eulerian", or
    "diffusion_lagrangian". All evaluations recompute from the immutable
    inputs, so instances are picklable and safe for concurrent assembly.
    """

    def __init__(self, atlas: ShapeAtlas, y: ParamPoint, source: SourceField,
                 diffusion: Optional[DiffusionField] = None,
                 variant: str = "poisson"):
        if variant not in ("poisson", "diffusion_eulerian", "diffusion_lagrangian"):
            raise ConfigError(f"unknown pullback variant {variant!r}")
        if variant != "poisson" and diffusion is None:
            raise ConfigError("diffusion variants need a DiffusionField")
        self.atlas = atlas
        self.y = y
        self.source = source
        self.diffusion = diffusion
        self.variant = variant

    @property
    def provenance(self) -> dict:
        return {"variant": self.variant, "y": self.y.coords.tolist(),
                "domain": self.atlas.reference_domain.name}

    def _jacobians(self, pts):
        J = jacobian_matrices(self.atlas, self.y, pts)
        det = _det2(J)
        if np.any(det <= 0.0):
            raise PullbackError("non-positive Jacobian determinant in pullback")
        return J, det

    def coefficient(self, pts: np.ndarray) -> np.ndarray:
        """A_ref_y at reference points, shape (..., 2, 2)."""
        pts = np.asarray(pts, dtype=float)
        J, det = self._jacobians(pts)
        Jinv = _inv2(J, det)
        if self.variant == "poisson":
            mid = np.broadcast_to(np.eye(2), J.shape)
        elif self.variant == "diffusion_eulerian":
            mapped = evaluate_field(self.atlas, self.y, pts)
            mid = self.diffusion.matrix(mapped)
            self._check_spd(mid)
        else:
            mid = self.diffusion.matrix(pts)
            self._check_spd(mid)
        out = np.einsum("...ij,...jk,...lk->...il", Jinv, mid, Jinv)
        return out * det[..., None, None]

    def rhs(self, pts: np.ndarray) -> np.ndarray:
        """f_ref_y(x) = f(V_y(x)) * det J_y(x)."""
        pts = np.asarray(pts, dtype=float)
        J, det = self._jacobians(pts)
        mapped = evaluate_field(self.atlas, self.y, pts)
        return self.source(mapped) * det

    @staticmethod
    def _check_spd(m):
        if np.max(np.abs(m - np.swapaxes(m, -1, -2))) > 1e-12:
            raise PullbackError("diffusion matrix not symmetric at a sampled point")
        # 2x2 SPD test: positive trace and determinant
        tr = m[..., 0, 0] + m[..., 1, 1]
        det = _det2(m)
        if np.any(tr <= 0.0) or np.any(det <= 0.0):
            raise PullbackError("diffusion matrix not positive definite at a sampled point")


def pullback_poisson(atlas: ShapeAtlas, y: ParamPoint,
                     f: SourceField) -> PulledBackProblem:
    """Pullback of -Lap(u) = f on V_y(D_ref): A_ref = (J^T J)^(-1) det J."""
    return PulledBackProblem(atlas, y, f, variant="poisson")


def pullback_diffusion_eulerian(atlas: ShapeAtlas, y: ParamPoint,
                                A: DiffusionField,
                                f: SourceField) -> PulledBackProblem:
    """Pullback with Eulerian diffusion: A_ref = J^(-1) A(V_y(x)) J^(-T) det J."""
    if A.frame_of_reference != "eulerian":
        raise ConfigError("diffusion field is not tagged Eulerian")
    return PulledBackProblem(atlas, y, f, diffusion=A, variant="diffusion_eulerian")


def pullback_diffusion_lagrangian(atlas: ShapeAtlas, y: ParamPoint,
                                  A: DiffusionField,
                                  f: SourceField) -> PulledBackProblem:
    """Pullback with Lagrangian diffusion: A_ref = J^(-1) A(x) J^(-T) det J.

    A lives on D_ref and is *not* composed with V_y; piecewise-constant A over
    reference subdomains yields interface problems.
    """
    if A.frame_of_reference != "lagrangian":
        raise ConfigError("diffusion field is not tagged Lagrangian")
    return PulledBackProblem(atlas, y, f, diffusion=A, variant="diffusion_lagrangian")


# ---------------------------------------------------------------------------
# solution transport
# ---------------------------------------------------------------------------

def invert_field(atlas: ShapeAtlas, y: ParamPoint, p: np.ndarray,
                 tol: float = 1e-12, maxit: int = 50) -> np.ndarray:
    """Solve V_y(x) = p for x by damped Newton, initial guess x = p.

    V_y is a small perturbation of the nominal map (c_gamma < 1), so Newton
    from the physical point converges; each step is halved until the residual
    decreases.
    """
    p = np.asarray(p, dtype=float)
    single = p.ndim == 1
    pts = p.reshape(-1, 2).copy()
    out = np.empty_like(pts)
    # iterates may leave D_ref transiently; the field is evaluable globally
    for i, target in enumerate(pts):
        x = target.copy()
        r = _field_unchecked(atlas, y, x) - target
        rn = np.linalg.norm(r)
        it = 0
        while rn > tol:
            if it >= maxit:
                raise TransportError(
                    f"Newton inversion did not converge at p={target} (residual {rn:.2e})")
            J = _jacobian_unchecked(atlas, y, x)
            try:
                step = np.linalg.solve(J, r)
            except np.linalg.LinAlgError as exc:
                raise TransportError(
                    f"singular Jacobian during inversion at p={target}") from exc
            alpha = 1.0
            for _ in range(30):
                cand = x - alpha * step
                rc = _field_unchecked(atlas, y, cand) - target
                rcn = np.linalg.norm(rc)
                if rcn < rn:
                    break
                alpha *= 0.5
            else:
                raise TransportError(
                    f"Newton damping failed at p={target} (residual {rn:.2e})")
            x, r, rn = cand, rc, rcn
            it += 1
        out[i] = x
    return out[0] if single else out


class _ForwardTransport:
    """(u_hat o V_y^(-1)) evaluated by Newton inversion of V_y."""

    def __init__(self, atlas, y, u):
        self.atlas, self.y, self.u = atlas, y, u

    def __call__(self, p):
        x = invert_field(self.atlas, self.y, p)
        return self.u(x)


class _BackwardTransport:
    """(u o V_y) on the reference domain."""

    def __init__(self, atlas, y, u):
        self.atlas, self.y, self.u = atlas, y, u

    def __call__(self, x):
        return self.u(evaluate_field(self.atlas, self.y, np.asarray(x, dtype=float)))


def transport_solution(atlas: ShapeAtlas, y: ParamPoint, u, direction: str):
    """Transport a function between D_ref and the deformed domain.

    direction="forward" carries a reference-domain function u_hat to the
    physical domain as u_hat o V_y^(-1) (pointwise Newton inversion);
    direction="backward" pulls a physical-domain function back as u o V_y.
    """
    if direction == "forward":
        return _ForwardTransport(atlas, y, u)
    if direction == "backward":
        return _BackwardTransport(atlas, y, u)
    raise ConfigError("direction must be 'forward' or 'backward'")
