"""Frame, Riesz-basis, and ONB algebra with encoder/decoder pairs.

A frame is an indexed function family on the unit square whose analysis
operator v -> (<v, psi_j>)_j is boundedly invertible onto its range; the
frame bounds (lambda, Lambda) quantify the conditioning, the canonical dual
frame inverts synthesis in the minimal-norm sense, and all dual-frame
computations happen on the leading n x n Gram block (finite sections of the
infinite-dimensional operators; extension by zero padding connects the two).

Inner products are computed by tensor Gauss quadrature on a 128 x 128 panel
grid (6 Gauss points per panel and axis), which resolves catalog members up
to frequency ~40 at the 1e-10 level. Members that factor as
fx(x1) * fy(x2) * e_component use per-axis tables throughout, so Gram blocks
and coefficient computations never touch the full 2-D grid more than once.

Two inner products are supported: plain L2, and the H1_0 form <grad u, grad v>
for catalogs of (-Laplace) eigenfunctions, where <v, eta_j>_H1 =
sqrt(lambda_j) <v, psi_j>_L2 holds exactly for any v vanishing on the
boundary.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import FrameError
from .fem import Mesh, P1Function
from .shape_param import (
    ParamPoint,
    PolyBubbleFeature,
    ShapeAtlas,
    SineFeature,
    WeightSequence,
)

__all__ = [
    "QUAD_PANELS",
    "MAX_RESOLVED_FREQUENCY",
    "TensorMember",
    "CallableMember",
    "Frame",
    "FemNodalFrame",
    "SynthFunction",
    "SmoothnessScale",
    "Encoder",
    "Decoder",
    "sine_frame",
    "duplicate_frame",
    "scaled_union_frame",
    "feature_frame",
    "fem_nodal_frame",
    "sine_eigenvalue",
    "sine_enumeration",
    "analyze",
    "synthesize",
    "dual_analyze",
    "frame_bounds_estimate",
    "weighted_norm",
    "restrict",
    "pad",
    "make_encoder_decoder",
    "P1CoefficientMap",
    "write_coeffs_csv",
    "read_coeffs_csv",
    "frame_descriptor",
    "frame_from_descriptor",
]

QUAD_PANELS = 128
_GAUSS_PER_PANEL = 6
MAX_RESOLVED_FREQUENCY = 42
_RANK_CUTOFF = 1e-12


def _axis_rule() -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss nodes and weights on [0, 1]."""
    gx, gw = np.polynomial.legendre.leggauss(_GAUSS_PER_PANEL)
    edges = np.linspace(0.0, 1.0, QUAD_PANELS + 1)
    a, b = edges[:-1], edges[1:]
    half = 0.5 * (b - a)
    nodes = (a[:, None] + half[:, None] * (gx[None, :] + 1.0)).ravel()
    weights = (half[:, None] * gw[None, :]).ravel()
    return nodes, weights


_AXIS_NODES, _AXIS_WEIGHTS = _axis_rule()
_GRID_2D: Optional[np.ndarray] = None


def _grid_2d() -> np.ndarray:
    global _GRID_2D
    if _GRID_2D is None:
        xx, yy = np.meshgrid(_AXIS_NODES, _AXIS_NODES, indexing="ij")
        _GRID_2D = np.column_stack([xx.ravel(), yy.ravel()])
    return _GRID_2D


# ---------------------------------------------------------------------------
# members
# ---------------------------------------------------------------------------

class TensorMember:
    """Member of the form fx(x1) * fy(x2) * e_component.

    ``component`` is None for scalar families and 0/1 for displacement
    families. ``dfx``/``dfy`` are needed for H1 Gram blocks; ``eigenvalue``
    marks (-Laplace) eigenfunctions and enables the exact H1 analysis rule.
    """

    def __init__(self, fx: Callable, fy: Callable, component: Optional[int] = None,
                 max_frequency: int = 0, dfx: Optional[Callable] = None,
                 dfy: Optional[Callable] = None, eigenvalue: Optional[float] = None,
                 label: str = ""):
        self.fx, self.fy = fx, fy
        self.dfx, self.dfy = dfx, dfy
        self.component = component
        self.max_frequency = max_frequency
        self.eigenvalue = eigenvalue
        self.label = label

    @property
    def components(self) -> int:
        return 1 if self.component is None else 2

    def scalar_values(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        return self.fx(pts[..., 0]) * self.fy(pts[..., 1])

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        s = self.scalar_values(pts)
        if self.component is None:
            return s
        out = np.zeros(s.shape + (2,))
        out[..., self.component] = s
        return out


class CallableMember:
    """Generic member: a callable on point arrays, scalar or vector valued."""

    def __init__(self, fn: Callable, components: int = 1, max_frequency: int = 0,
                 label: str = ""):
        self.fn = fn
        self.components = components
        self.component = None
        self.max_frequency = max_frequency
        self.eigenvalue = None
        self.label = label

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        return np.asarray(self.fn(np.asarray(pts, dtype=float)), dtype=float)


def sine_enumeration(count: int) -> list[tuple[int, int]]:
    """Diagonal enumeration of frequency pairs: ordered by (k1 + k2, k1)."""
    out = []
    total = 2
    while len(out) < count:
        for k1 in range(1, total):
            out.append((k1, total - k1))
            if len(out) == count:
                return out
        total += 1
    return out


def sine_eigenvalue(k1: int, k2: int) -> float:
    """(-Laplace) eigenvalue of sin(k1 pi x1) sin(k2 pi x2) on the unit square."""
    return np.pi ** 2 * (k1 ** 2 + k2 ** 2)


class _Sin1D:
    """t -> s * sin(pi k t); picklable axis factor."""

    def __init__(self, k, s=1.0):
        self.k, self.s = int(k), float(s)

    def __call__(self, t):
        return self.s * np.sin(np.pi * self.k * np.asarray(t, dtype=float))


class _DSin1D:
    """Derivative of _Sin1D: t -> s * pi k * cos(pi k t)."""

    def __init__(self, k, s=1.0):
        self.k, self.s = int(k), float(s)

    def __call__(self, t):
        kpi = np.pi * self.k
        return self.s * kpi * np.cos(kpi * np.asarray(t, dtype=float))


class _Bubble1D:
    """t -> (t (1 - t))^p, with the p = 0 convention of a constant 1."""

    def __init__(self, p):
        self.p = int(p)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return (t * (1.0 - t)) ** self.p if self.p > 0 else np.ones_like(t)


class _Scaled1D:
    def __init__(self, f, s):
        self.f, self.s = f, float(s)

    def __call__(self, t):
        return self.s * self.f(t)


def _sine_member(k1: int, k2: int, inner: str) -> TensorMember:
    lam = sine_eigenvalue(k1, k2)
    scale = 1.0 if inner == "l2" else 1.0 / np.sqrt(lam)
    sq2 = np.sqrt(2.0)
    return TensorMember(
        fx=_Sin1D(k1, sq2 * scale), fy=_Sin1D(k2, sq2),
        dfx=_DSin1D(k1, sq2 * scale), dfy=_DSin1D(k2, sq2),
        max_frequency=max(k1, k2), eigenvalue=lam,
        label=f"sine({k1},{k2})")


# ---------------------------------------------------------------------------
# frames
# ---------------------------------------------------------------------------

class Frame:
    """Indexed function family on the unit square with Gram-based dual algebra.

    ``kind`` tags the family: "ONB" (Gram = identity), "Riesz"
    (Gram uniformly positive definite on the block), or "frame" (possibly
    redundant; dual coefficients are the minimal-norm pseudo-inverse ones).
    ``gram_truncation`` is the default block size for dual computations.
    """

    def __init__(self, members: Sequence, kind: str = "frame",
                 inner: str = "l2", gram_truncation: Optional[int] = None,
                 name: str = ""):
        if kind not in ("ONB", "Riesz", "frame"):
            raise FrameError(f"unknown frame kind {kind!r}")
        if inner not in ("l2", "h1"):
            raise FrameError(f"unknown inner product {inner!r}")
        self.members = list(members)
        if not self.members:
            raise FrameError("frame needs at least one member")
        self.kind = kind
        self.inner = inner
        self.gram_truncation = gram_truncation or len(self.members)
        self.name = name
        comps = {m.components for m in self.members}
        if len(comps) != 1:
            raise FrameError("all members must have the same component count")
        self.components = comps.pop()
        if inner == "h1" and any(m.eigenvalue is None for m in self.members):
            raise FrameError("H1 inner product needs eigenfunction members")
        self._gram_cache: dict[int, np.ndarray] = {}
        self._eig_cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    # -- quadrature helpers -------------------------------------------------

    def _check_resolved(self, n: int):
        worst = max(m.max_frequency for m in self.members[:n])
        if worst > MAX_RESOLVED_FREQUENCY:
            raise FrameError(
                f"member frequency {worst} exceeds the quadrature resolution "
                f"({MAX_RESOLVED_FREQUENCY}); refine the panel grid")

    def _all_tensor(self, n: int) -> bool:
        return all(isinstance(m, TensorMember) for m in self.members[:n])

    def _axis_tables(self, n: int, derivative: bool = False):
        fx = np.empty((n, _AXIS_NODES.size))
        fy = np.empty((n, _AXIS_NODES.size))
        for a, m in enumerate(self.members[:n]):
            if derivative:
                if m.dfx is None or m.dfy is None:
                    raise FrameError("H1 Gram needs member derivatives")
                fx[a] = m.dfx(_AXIS_NODES)
                fy[a] = m.dfy(_AXIS_NODES)
            else:
                fx[a] = m.fx(_AXIS_NODES)
                fy[a] = m.fy(_AXIS_NODES)
        return fx, fy

    def _component_mask(self, n: int) -> Optional[np.ndarray]:
        if self.components == 1:
            return None
        comp = np.array([m.component for m in self.members[:n]])
        return (comp[:, None] == comp[None, :]).astype(float)

    # -- Gram ---------------------------------------------------------------

    def gram(self, n: Optional[int] = None) -> np.ndarray:
        """Leading n x n Gram block in the frame's inner product."""
        n = n or self.gram_truncation
        if n > len(self.members):
            raise FrameError(f"frame has {len(self.members)} members, asked for {n}")
        if n in self._gram_cache:
            return self._gram_cache[n]
        self._check_resolved(n)
        if self._all_tensor(n):
            fx, fy = self._axis_tables(n)
            gx = (fx * _AXIS_WEIGHTS) @ fx.T
            gy = (fy * _AXIS_WEIGHTS) @ fy.T
            if self.inner == "l2":
                G = gx * gy
            else:
                dfx, dfy = self._axis_tables(n, derivative=True)
                gdx = (dfx * _AXIS_WEIGHTS) @ dfx.T
                gdy = (dfy * _AXIS_WEIGHTS) @ dfy.T
                G = gdx * gy + gx * gdy
            mask = self._component_mask(n)
            if mask is not None:
                G = G * mask
        else:
            if self.inner == "h1":
                raise FrameError("H1 Gram requires tensor members")
            G = self._generic_gram(n)
        G = 0.5 * (G + G.T)
        self._gram_cache[n] = G
        return G

    def _generic_gram(self, n: int) -> np.ndarray:
        pts = _grid_2d()
        w2 = np.outer(_AXIS_WEIGHTS, _AXIS_WEIGHTS).ravel()
        G = np.empty((n, n))
        chunk = 8
        blocks = []
        for a0 in range(0, n, chunk):
            vals = np.stack([np.asarray(self.members[a](pts), dtype=float)
                             for a in range(a0, min(a0 + chunk, n))])
            blocks.append(vals)
        for i, va in enumerate(blocks):
            for j, vb in enumerate(blocks):
                if self.components == 1:
                    sub = np.einsum("ap,bp,p->ab", va, vb, w2)
                else:
                    sub = np.einsum("apc,bpc,p->ab", va, vb, w2)
                G[i * chunk:i * chunk + va.shape[0],
                  j * chunk:j * chunk + vb.shape[0]] = sub
        return G

    def _gram_eig(self, n: int):
        if n not in self._eig_cache:
            evals, evecs = np.linalg.eigh(self.gram(n))
            self._eig_cache[n] = (evals, evecs)
        return self._eig_cache[n]

    def effective_rank(self, n: Optional[int] = None) -> int:
        n = n or self.gram_truncation
        evals, _ = self._gram_eig(n)
        return int(np.sum(evals > _RANK_CUTOFF * max(evals[-1], 0.0)))

    # -- analysis and synthesis ----------------------------------------------

    def _field_on_grid(self, v) -> np.ndarray:
        pts = _grid_2d()
        vals = np.asarray(v(pts), dtype=float)
        if self.components == 1:
            if vals.shape != (pts.shape[0],):
                raise FrameError("scalar frame needs a scalar-valued function")
            return vals.reshape(_AXIS_NODES.size, _AXIS_NODES.size)
        if vals.shape != (pts.shape[0], 2):
            raise FrameError("displacement frame needs a vector-valued function")
        return vals.reshape(_AXIS_NODES.size, _AXIS_NODES.size, 2)

    def analyze(self, v, n: Optional[int] = None) -> np.ndarray:
        """Coefficients (<v, psi_j>)_{j<=n} by quadrature on the panel grid.

        For the H1 inner product v must vanish on the boundary of the square
        (true for FEM solutions and in-span synthesized functions); the exact
        eigenfunction identity <v, eta_j>_H1 = lambda_j <v, eta_j>_L2 is used.
        """
        n = n or self.gram_truncation
        self._check_resolved(n)
        V = self._field_on_grid(v)
        return self._analyze_grid(V, n)

    def _analyze_grid(self, V: np.ndarray, n: int) -> np.ndarray:
        if self._all_tensor(n):
            fx, fy = self._axis_tables(n)
            out = np.empty(n)
            if self.components == 1:
                Vw = (V * _AXIS_WEIGHTS[None, :]) * _AXIS_WEIGHTS[:, None]
                T = fx @ Vw
                out = np.sum(T * fy, axis=1)
            else:
                for c in (0, 1):
                    sel = [a for a in range(n) if self.members[a].component == c]
                    if not sel:
                        continue
                    Vw = (V[..., c] * _AXIS_WEIGHTS[None, :]) * _AXIS_WEIGHTS[:, None]
                    T = fx[sel] @ Vw
                    out[sel] = np.sum(T * fy[sel], axis=1)
        else:
            pts = _grid_2d()
            w2 = np.outer(_AXIS_WEIGHTS, _AXIS_WEIGHTS).ravel()
            flat = V.reshape((pts.shape[0],) if self.components == 1
                             else (pts.shape[0], 2))
            out = np.empty(n)
            for a in range(n):
                mv = np.asarray(self.members[a](pts), dtype=float)
                out[a] = np.sum(w2 * mv * flat) if self.components == 1 \
                    else np.sum(w2[:, None] * mv * flat)
        if self.inner == "h1":
            lam = np.array([m.eigenvalue for m in self.members[:n]])
            out = out * lam
        return out

    def dual_analyze(self, v, n: Optional[int] = None) -> np.ndarray:
        """Canonical-dual coefficients: Gram solve of the analysis output.

        Rank-deficient blocks (redundant frames) fall back to the minimal-norm
        pseudo-inverse representative with relative cutoff 1e-12.
        """
        n = n or self.gram_truncation
        return self._dual_from_raw(self.analyze(v, n), n)

    def _dual_from_raw(self, raw: np.ndarray, n: int) -> np.ndarray:
        evals, evecs = self._gram_eig(n)
        cutoff = _RANK_CUTOFF * max(evals[-1], 0.0)
        inv = np.where(evals > cutoff, 1.0 / np.where(evals > cutoff, evals, 1.0), 0.0)
        return evecs @ (inv * (evecs.T @ raw))

    def synthesize(self, coeffs: np.ndarray) -> "SynthFunction":
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.size > len(self.members):
            raise FrameError("more coefficients than frame members")
        return SynthFunction(self, coeffs)

    def frame_bounds_estimate(self, n: Optional[int] = None) -> tuple[float, float]:
        """(lambda, Lambda) from the Gram block restricted to its range."""
        n = n or self.gram_truncation
        evals, _ = self._gram_eig(n)
        cutoff = _RANK_CUTOFF * max(evals[-1], 0.0)
        positive = evals[evals > cutoff]
        if positive.size == 0:
            raise FrameError("Gram block is numerically zero")
        return float(np.sqrt(positive[0])), float(np.sqrt(evals[-1]))

    def coeff_span_norm(self, coeffs: np.ndarray) -> float:
        """Norm of sum c_j psi_j computed exactly through the Gram block."""
        c = np.asarray(coeffs, dtype=float)
        G = self.gram(c.size)
        return float(np.sqrt(max(c @ G @ c, 0.0)))


class SynthFunction:
    """sum_j c_j psi_j, evaluable pointwise; picklable if members are."""

    def __init__(self, frame: Frame, coeffs: np.ndarray):
        self.frame = frame
        self.coeffs = np.asarray(coeffs, dtype=float)

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        if self.frame.components == 1:
            out = np.zeros(pts.shape[:-1])
        else:
            out = np.zeros(pts.shape[:-1] + (2,))
        for c, m in zip(self.coeffs, self.frame.members):
            if c != 0.0:
                out = out + c * m(pts)
        return out

    def norm(self) -> float:
        return self.frame.coeff_span_norm(self.coeffs)


# ---------------------------------------------------------------------------
# catalog constructors
# ---------------------------------------------------------------------------

def sine_frame(count: int, inner: str = "l2") -> Frame:
    """Tensor sine ONB on the unit square (eigenfunctions of -Laplace).

    inner="l2" normalizes members in L2; inner="h1" in the H1_0 seminorm,
    which is the natural decoder space for Dirichlet solutions.
    """
    members = [_sine_member(k1, k2, inner) for k1, k2 in sine_enumeration(count)]
    return Frame(members, kind="ONB", inner=inner, name=f"sine_{inner}")


class _ScaledMember:
    def __init__(self, base, scale):
        self.base, self.scale = base, scale
        self.components = base.components
        self.component = base.component
        self.max_frequency = base.max_frequency
        self.eigenvalue = base.eigenvalue
        self.label = f"{scale}*{base.label}"

    def __call__(self, pts):
        return self.scale * self.base(pts)


def _scaled_tensor(base: TensorMember, scale: float) -> TensorMember:
    return TensorMember(_Scaled1D(base.fx, scale), base.fy, component=base.component,
                        max_frequency=base.max_frequency,
                        dfx=_Scaled1D(base.dfx, scale) if base.dfx else None,
                        dfy=base.dfy, eigenvalue=base.eigenvalue,
                        label=f"{scale}*{base.label}")


def duplicate_frame(base: Frame) -> Frame:
    """Every member listed twice: the canonical redundant frame."""
    return Frame(list(base.members) + list(base.members), kind="frame",
                 inner=base.inner, name=base.name + "_x2")


def scaled_union_frame(base: Frame, scale: float) -> Frame:
    """Union of a frame with a scaled copy of itself."""
    extra = [_scaled_tensor(m, scale) if isinstance(m, TensorMember)
             else _ScaledMember(m, scale) for m in base.members]
    return Frame(list(base.members) + extra, kind="frame", inner=base.inner,
                 name=base.name + f"_union{scale}")


def _feature_member(feat, index: int):
    if isinstance(feat, SineFeature):
        k1, k2, axis = feat.k1, feat.k2, feat.axis
        return TensorMember(_Sin1D(k1), _Sin1D(k2), component=axis,
                            max_frequency=max(k1, k2),
                            label=f"phi{index}:sine({k1},{k2},{axis})")
    if isinstance(feat, PolyBubbleFeature):
        return TensorMember(_Bubble1D(feat.p1), _Bubble1D(feat.p2),
                            component=feat.axis, max_frequency=0,
                            label=f"phi{index}:bubble({feat.p1},{feat.p2},{feat.axis})")
    return CallableMember(feat.value, components=2, label=f"phi{index}")


def feature_frame(atlas: ShapeAtlas, count: Optional[int] = None) -> Frame:
    """The atlas feature family as a displacement-field frame on the square."""
    if atlas.reference_domain.name != "square":
        raise FrameError("feature frames require the unit-square reference domain")
    count = count or atlas.truncation_dim
    members = [_feature_member(f, i) for i, f in enumerate(atlas.features[:count])]
    return Frame(members, kind="Riesz", inner="l2", name="features")


class FemNodalFrame:
    """P1 nodal hat functions as a Riesz frame in L2, Gram = mass matrix.

    The natural numerical frame tied to a mesh: analysis integrates against
    hat functions with the edge-midpoint rule, the dual analysis is the L2
    projection (mass-matrix solve), synthesis returns a P1 function.
    """

    kind = "Riesz"
    inner = "l2"
    components = 1

    def __init__(self, mesh: Mesh, gram_truncation: Optional[int] = None):
        self.mesh = mesh
        self.gram_truncation = gram_truncation or mesh.n_nodes
        self.name = "fem_nodal"
        self._mass = None
        self._eig_cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def _mass_matrix(self) -> np.ndarray:
        if self._mass is None:
            m = self.mesh
            M = np.zeros((m.n_nodes, m.n_nodes))
            local = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0
            for t, tri in enumerate(m.triangles):
                M[np.ix_(tri, tri)] += m.areas[t] * local
            self._mass = M
        return self._mass

    def gram(self, n: Optional[int] = None) -> np.ndarray:
        n = n or self.gram_truncation
        return self._mass_matrix()[:n, :n]

    def _gram_eig(self, n):
        if n not in self._eig_cache:
            self._eig_cache[n] = np.linalg.eigh(self.gram(n))
        return self._eig_cache[n]

    def analyze(self, v, n: Optional[int] = None) -> np.ndarray:
        """<v, hat_i> via the per-triangle edge-midpoint rule."""
        n = n or self.gram_truncation
        m = self.mesh
        if isinstance(v, P1Function) and v.mesh is m:
            return (self._mass_matrix() @ v.nodal_values)[:n]
        fv = np.asarray(v(m.edge_midpoints), dtype=float)
        bloc = np.empty_like(fv)
        bloc[:, 0] = fv[:, 0] + fv[:, 2]
        bloc[:, 1] = fv[:, 0] + fv[:, 1]
        bloc[:, 2] = fv[:, 1] + fv[:, 2]
        bloc *= m.areas[:, None] / 6.0
        b = np.zeros(m.n_nodes)
        np.add.at(b, m.triangles.ravel(), bloc.ravel())
        return b[:n]

    def dual_analyze(self, v, n: Optional[int] = None) -> np.ndarray:
        n = n or self.gram_truncation
        raw = self.analyze(v, n)
        evals, evecs = self._gram_eig(n)
        cutoff = _RANK_CUTOFF * max(evals[-1], 0.0)
        inv = np.where(evals > cutoff, 1.0 / np.where(evals > cutoff, evals, 1.0), 0.0)
        return evecs @ (inv * (evecs.T @ raw))

    def synthesize(self, coeffs: np.ndarray) -> P1Function:
        coeffs = np.asarray(coeffs, dtype=float)
        nodal = np.zeros(self.mesh.n_nodes)
        nodal[: coeffs.size] = coeffs
        return P1Function(self.mesh, nodal)

    def frame_bounds_estimate(self, n: Optional[int] = None) -> tuple[float, float]:
        n = n or self.gram_truncation
        evals, _ = self._gram_eig(n)
        cutoff = _RANK_CUTOFF * max(evals[-1], 0.0)
        positive = evals[evals > cutoff]
        return float(np.sqrt(positive[0])), float(np.sqrt(evals[-1]))

    def effective_rank(self, n: Optional[int] = None) -> int:
        n = n or self.gram_truncation
        evals, _ = self._gram_eig(n)
        return int(np.sum(evals > _RANK_CUTOFF * max(evals[-1], 0.0)))

    def coeff_span_norm(self, coeffs: np.ndarray) -> float:
        c = np.asarray(coeffs, dtype=float)
        G = self.gram(c.size)
        return float(np.sqrt(max(c @ G @ c, 0.0)))


def fem_nodal_frame(mesh: Mesh, gram_truncation: Optional[int] = None) -> FemNodalFrame:
    return FemNodalFrame(mesh, gram_truncation)


# ---------------------------------------------------------------------------
# module-level operations
# ---------------------------------------------------------------------------

def analyze(frame, v, n: Optional[int] = None) -> np.ndarray:
    return frame.analyze(v, n)


def synthesize(frame, coeffs: np.ndarray):
    return frame.synthesize(coeffs)


def dual_analyze(frame, v, n: Optional[int] = None) -> np.ndarray:
    return frame.dual_analyze(v, n)


def frame_bounds_estimate(frame, n: Optional[int] = None) -> tuple[float, float]:
    return frame.frame_bounds_estimate(n)


@dataclass(frozen=True)
class SmoothnessScale:
    """Weighted coefficient-decay norm: ||c||^2 = sum c_j^2 w_j^(-2s)."""

    weights: WeightSequence
    exponent: float


def weighted_norm(scale: SmoothnessScale, coeffs: np.ndarray) -> float:
    c = np.asarray(coeffs, dtype=float)
    w = scale.weights.extend(c.size)
    return float(np.sqrt(np.sum(c * c * w ** (-2.0 * scale.exponent))))


def restrict(coeffs: np.ndarray, n: int) -> np.ndarray:
    """Truncation to the first n entries."""
    c = np.asarray(coeffs, dtype=float)
    return c[:n].copy()


def pad(coeffs: np.ndarray, length: int) -> np.ndarray:
    """Extension by zero to the requested length."""
    c = np.asarray(coeffs, dtype=float)
    if c.size >= length:
        return c[:length].copy()
    out = np.zeros(length)
    out[: c.size] = c
    return out


# ---------------------------------------------------------------------------
# encoder / decoder
# ---------------------------------------------------------------------------

class Encoder:
    """Shape encoder: canonical-dual analysis against the feature family.

    For atlas-generated fields V_y - V_0 the output is exactly (w_j y_j);
    a ParamPoint shortcut computes those coefficients without field
    evaluation (requires the bound atlas).
    """

    def __init__(self, frame, n: int, atlas: Optional[ShapeAtlas] = None):
        self.frame = frame
        self.n = n
        self.atlas = atlas

    def __call__(self, field) -> np.ndarray:
        if isinstance(field, ParamPoint):
            if self.atlas is None:
                raise FrameError("encoder has no atlas bound; cannot encode ParamPoint")
            w = self.atlas.active_weights
            return pad(w * field.coords, self.n)
        return self.frame.dual_analyze(field, self.n)


class Decoder:
    """Solution decoder: synthesis over the leading members of a frame."""

    def __init__(self, frame, m: int):
        self.frame = frame
        self.m = m

    def __call__(self, coeffs: np.ndarray):
        return self.frame.synthesize(restrict(np.asarray(coeffs, dtype=float), self.m))

    def coeff_norm(self, coeffs: np.ndarray) -> float:
        """Norm of the decoded function; plain l2 for ONB decoders."""
        if getattr(self.frame, "kind", "") == "ONB":
            return float(np.linalg.norm(restrict(coeffs, self.m)))
        return self.frame.coeff_span_norm(restrict(coeffs, self.m))


def make_encoder_decoder(shape_frame, solution_frame,
                         atlas: Optional[ShapeAtlas] = None) -> tuple[Encoder, Decoder]:
    """Encoder/decoder pair: dual analysis on shapes, synthesis on solutions."""
    return (Encoder(shape_frame, shape_frame.gram_truncation, atlas=atlas),
            Decoder(solution_frame, solution_frame.gram_truncation))


# ---------------------------------------------------------------------------
# fast analysis of P1 functions
# ---------------------------------------------------------------------------

class P1CoefficientMap:
    """Precomputed <hat_i, psi_a> inner products for one (mesh, frame) pair.

    Analysis of a P1 function then reduces to a single matrix-vector product
    with machine-accurate per-triangle quadrature (tensor Gauss on the Duffy
    transform of each triangle), avoiding panel-grid kink errors entirely.
    """

    def __init__(self, mesh: Mesh, frame: Frame, n: Optional[int] = None,
                 quad_order: int = 10):
        if frame.components != 1:
            raise FrameError("P1 analysis needs a scalar frame")
        n = n or frame.gram_truncation
        worst = max(m.max_frequency for m in frame.members[:n])
        if worst * mesh.h > 1.0:
            raise FrameError(
                f"member frequency {worst} unresolvable by the per-triangle "
                f"rule at h = {mesh.h:g} (need frequency * h <= 1)")
        self.frame = frame
        self.n = n
        self.mesh = mesh
        gx, gw = np.polynomial.legendre.leggauss(quad_order)
        t = 0.5 * (gx + 1.0)
        wt = 0.5 * gw
        U, V = np.meshgrid(t, t, indexing="ij")
        WU, WV = np.meshgrid(wt, wt, indexing="ij")
        xi = U.ravel()
        eta = (V * (1.0 - U)).ravel()
        wq = (WU * WV * (1.0 - U)).ravel()          # Duffy Jacobian
        bary = np.column_stack([1.0 - xi - eta, xi, eta])   # (q, 3)

        p = mesh.nodes[mesh.triangles]                      # (m, 3, 2)
        pts = (p[:, None, 0, :]
               + xi[None, :, None] * (p[:, None, 1, :] - p[:, None, 0, :])
               + eta[None, :, None] * (p[:, None, 2, :] - p[:, None, 0, :]))
        flat = pts.reshape(-1, 2)
        wb = wq[:, None] * bary                              # (q, 3)
        lam = None
        if frame.inner == "h1":
            lam = np.array([m.eigenvalue for m in frame.members[:n]])
        M = np.zeros((mesh.n_nodes, n))
        scale = 2.0 * mesh.areas                             # affine Jacobian
        for a in range(n):
            vals = frame.members[a].scalar_values(flat).reshape(len(mesh.triangles), -1)
            contrib = (vals @ wb) * scale[:, None]           # (m, 3)
            np.add.at(M[:, a], mesh.triangles.ravel(), contrib.ravel())
        if lam is not None:
            M *= lam[None, :]
        self.matrix = M

    def __call__(self, u: P1Function) -> np.ndarray:
        if u.mesh is not self.mesh and not np.array_equal(u.mesh.nodes, self.mesh.nodes):
            raise FrameError("P1 coefficient map built for a different mesh")
        return u.nodal_values @ self.matrix


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def write_coeffs_csv(coeffs: np.ndarray, path: str):
    with open(path, "w") as fh:
        fh.write("index,value\n")
        for i, v in enumerate(np.asarray(coeffs, dtype=float)):
            fh.write(f"{i},{float(v)!r}\n")


def read_coeffs_csv(path: str) -> np.ndarray:
    vals = []
    with open(path) as fh:
        if fh.readline().strip() != "index,value":
            raise FrameError(f"bad coefficient header in {path}")
        for line in fh:
            _, v = line.split(",")
            vals.append(float(v))
    return np.asarray(vals)


def frame_descriptor(frame) -> dict:
    """Self-describing catalog reference used in surrogate files."""
    if isinstance(frame, Frame) and frame.name.startswith("sine_"):
        return {"catalog": "sine", "inner": frame.inner,
                "count": len(frame.members)}
    raise FrameError(f"frame {frame.name!r} has no serializable descriptor")


def frame_from_descriptor(desc: dict):
    if desc.get("catalog") == "sine":
        return sine_frame(int(desc["count"]), inner=desc.get("inner", "l2"))
    raise FrameError(f"unknown frame descriptor {desc!r}")
