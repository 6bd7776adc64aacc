"""P1 finite elements on the reference domain and on mapped meshes.

The high-fidelity solver discretizes the pulled-back variational problem

    int <A_ref grad(u), grad(v)> dx = int f_ref v dx,   u, v in H^1_0,

with piecewise-linear elements, homogeneous Dirichlet data, one-point
(barycenter) quadrature for the stiffness coefficient and the 3-point
edge-midpoint rule for the load. A physical-domain solve on the mapped
reference mesh serves as the oracle for the pullback equivalence check.
"""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DomainError, FemError
from .pullback import PulledBackProblem, SourceField, pullback_poisson
from .shape_param import Domain, ParamPoint, ShapeAtlas, evaluate_field

__all__ = [
    "Mesh",
    "P1Function",
    "FemSolution",
    "build_mesh",
    "assemble_and_solve",
    "solve_physical",
    "h1_seminorm",
    "l2_norm",
    "h1_diff",
    "h1_error_against",
    "l2_error_against",
    "fd_param_derivative",
    "pullback_gap",
    "nodal_interpolant",
    "write_mesh",
    "read_mesh",
    "write_solution_csv",
]

_RESIDUAL_TOL = 1e-10


class Mesh:
    """Conforming triangulation with cached per-triangle geometry.

    ``boundary_nodes`` are exactly the nodes on the domain boundary; ``h`` is
    the mesh-size parameter; ``structured_n`` is set for tensor meshes of the
    unit square and enables O(1) point location.
    """

    def __init__(self, nodes: np.ndarray, triangles: np.ndarray,
                 boundary_nodes: np.ndarray, h: float, domain: str = "custom",
                 structured_n: Optional[int] = None):
        self.nodes = np.asarray(nodes, dtype=float)
        self.triangles = np.asarray(triangles, dtype=np.int64)
        self.boundary_nodes = np.unique(np.asarray(boundary_nodes, dtype=np.int64))
        self.h = float(h)
        self.domain = domain
        self.structured_n = structured_n

        p = self.nodes[self.triangles]                      # (m, 3, 2)
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        if np.any(det <= 0.0):
            raise FemError("triangulation contains non-positively oriented triangles")
        self.areas = 0.5 * det
        # grad(lambda_i) = (y_j - y_k, x_k - x_j) / det, (i, j, k) cyclic
        g = np.empty((len(det), 3, 2))
        for i in range(3):
            j, k = (i + 1) % 3, (i + 2) % 3
            g[:, i, 0] = p[:, j, 1] - p[:, k, 1]
            g[:, i, 1] = p[:, k, 0] - p[:, j, 0]
        self.grads = g / det[:, None, None]
        self.barycenters = p.mean(axis=1)
        self.edge_midpoints = 0.5 * (p + np.roll(p, -1, axis=1))  # (m, 3, 2)

        mask = np.ones(len(self.nodes), dtype=bool)
        mask[self.boundary_nodes] = False
        self.interior_nodes = np.nonzero(mask)[0]
        self._trifinder = None

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def map_nodes(self, mapper: Callable[[np.ndarray], np.ndarray], h: float,
                  domain: str = "mapped") -> "Mesh":
        """Same connectivity with nodes pushed through ``mapper``."""
        return Mesh(mapper(self.nodes), self.triangles, self.boundary_nodes,
                    h, domain=domain, structured_n=None)

    def locate(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Triangle index and barycentric coordinates for each query point."""
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        if self.structured_n is not None:
            n = self.structured_n
            xi = np.clip(pts[:, 0] * n, 0.0, n * (1.0 - 1e-15))
            eta = np.clip(pts[:, 1] * n, 0.0, n * (1.0 - 1e-15))
            ci = np.floor(xi).astype(np.int64)
            cj = np.floor(eta).astype(np.int64)
            fx = xi - ci
            fy = eta - cj
            lower = fx >= fy  # triangle (ll, lr, ur) below the cell diagonal
            tri_idx = 2 * (ci * n + cj) + np.where(lower, 0, 1)
        else:
            if self._trifinder is None:
                from matplotlib.tri import Triangulation
                t = Triangulation(self.nodes[:, 0], self.nodes[:, 1], self.triangles)
                self._trifinder = t.get_trifinder()
            tri_idx = np.asarray(self._trifinder(pts[:, 0], pts[:, 1]), dtype=np.int64)
            if np.any(tri_idx < 0):
                raise DomainError("point outside the meshed domain")
        p0 = self.nodes[self.triangles[tri_idx, 0]]
        g = self.grads[tri_idx]                    # (q, 3, 2)
        d = pts - p0
        lam1 = np.einsum("qi,qi->q", g[:, 1], d)
        lam2 = np.einsum("qi,qi->q", g[:, 2], d)
        lam = np.column_stack([1.0 - lam1 - lam2, lam1, lam2])
        return tri_idx, lam


class P1Function:
    """Continuous piecewise-linear function given by nodal values."""

    def __init__(self, mesh: Mesh, nodal_values: np.ndarray):
        nodal_values = np.asarray(nodal_values, dtype=float)
        if nodal_values.shape != (mesh.n_nodes,):
            raise FemError("nodal value vector does not match the mesh")
        self.mesh = mesh
        self.nodal_values = nodal_values

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        single = pts.ndim == 1
        tri_idx, lam = self.mesh.locate(pts)
        vals = np.einsum("qi,qi->q", lam,
                         self.nodal_values[self.mesh.triangles[tri_idx]])
        return vals[0] if single else vals.reshape(pts.shape[:-1])

    def triangle_gradients(self) -> np.ndarray:
        """Constant gradient per triangle, shape (m, 2)."""
        u = self.nodal_values[self.mesh.triangles]       # (m, 3)
        return np.einsum("ti,tij->tj", u, self.mesh.grads)


class FemSolution(P1Function):
    """Galerkin solution: interior dof values, zero on the boundary."""

    def __init__(self, mesh: Mesh, dof_values: np.ndarray, provenance: dict):
        dof_values = np.asarray(dof_values, dtype=float)
        if dof_values.shape != (len(mesh.interior_nodes),):
            raise FemError("dof vector does not match the interior node count")
        nodal = np.zeros(mesh.n_nodes)
        nodal[mesh.interior_nodes] = dof_values
        super().__init__(mesh, nodal)
        self.dof_values = dof_values
        self.provenance = provenance


def nodal_interpolant(mesh: Mesh, fn: Callable[[np.ndarray], np.ndarray]) -> P1Function:
    """P1 interpolant of a pointwise-evaluable function."""
    return P1Function(mesh, np.asarray(fn(mesh.nodes), dtype=float))


# ---------------------------------------------------------------------------
# meshing
# ---------------------------------------------------------------------------

def _square_mesh(n: int, h: float) -> Mesh:
    t = np.linspace(0.0, 1.0, n + 1)
    xx, yy = np.meshgrid(t, t, indexing="ij")
    nodes = np.column_stack([xx.ravel(), yy.ravel()])

    def nid(i, j):
        return i * (n + 1) + j

    tris = np.empty((2 * n * n, 3), dtype=np.int64)
    idx = 0
    for i in range(n):
        for j in range(n):
            ll, lr = nid(i, j), nid(i + 1, j)
            ul, ur = nid(i, j + 1), nid(i + 1, j + 1)
            tris[idx] = (ll, lr, ur)       # below the diagonal ll-ur
            tris[idx + 1] = (ll, ur, ul)
            idx += 2
    onb = (np.isclose(nodes[:, 0], 0.0) | np.isclose(nodes[:, 0], 1.0)
           | np.isclose(nodes[:, 1], 0.0) | np.isclose(nodes[:, 1], 1.0))
    return Mesh(nodes, tris, np.nonzero(onb)[0], h, domain="square", structured_n=n)


def _disk_mesh(h: float) -> Mesh:
    # map a structured mesh of [-1,1]^2 onto the unit disk with the smooth
    # area-preserving-ish elliptical mapping; refine until max edge <= h
    n = max(4, int(np.ceil(2.0 / h)))
    while True:
        t = np.linspace(-1.0, 1.0, n + 1)
        xx, yy = np.meshgrid(t, t, indexing="ij")
        sq = np.column_stack([xx.ravel(), yy.ravel()])
        mapped = np.column_stack([
            sq[:, 0] * np.sqrt(1.0 - 0.5 * sq[:, 1] ** 2),
            sq[:, 1] * np.sqrt(1.0 - 0.5 * sq[:, 0] ** 2),
        ])

        def nid(i, j):
            return i * (n + 1) + j

        tris = np.empty((2 * n * n, 3), dtype=np.int64)
        idx = 0
        for i in range(n):
            for j in range(n):
                ll, lr = nid(i, j), nid(i + 1, j)
                ul, ur = nid(i, j + 1), nid(i + 1, j + 1)
                tris[idx] = (ll, lr, ur)
                tris[idx + 1] = (ll, ur, ul)
                idx += 2
        onb = (np.isclose(np.abs(sq[:, 0]), 1.0) | np.isclose(np.abs(sq[:, 1]), 1.0))
        p = mapped[tris]
        edges = np.linalg.norm(p - np.roll(p, -1, axis=1), axis=2)
        if np.max(edges) <= h:
            return Mesh(mapped, tris, np.nonzero(onb)[0], h, domain="disk")
        n *= 2


def build_mesh(domain: Domain | str, h: float) -> Mesh:
    """Triangulate the unit square (two triangles per cell) or the unit disk.

    The square requires h = 1/n for integer n; the benchmark range is
    h in {1/8, ..., 1/128}. Disk meshes keep every edge below h.
    """
    name = domain.name if isinstance(domain, Domain) else domain
    if name == "square":
        n = round(1.0 / h)
        if n < 1 or abs(1.0 / h - n) > 1e-9:
            raise DomainError(f"square mesh needs h = 1/n, got h = {h}")
        return _square_mesh(n, h)
    if name == "disk":
        return _disk_mesh(h)
    raise DomainError(f"unsupported mesh domain {name!r}")


# ---------------------------------------------------------------------------
# assembly and solve
# ---------------------------------------------------------------------------

def _check_spd(C: np.ndarray):
    if np.max(np.abs(C - np.swapaxes(C, -1, -2))) > 1e-10 * max(1.0, np.max(np.abs(C))):
        raise FemError("coefficient not symmetric at quadrature points")
    tr = C[..., 0, 0] + C[..., 1, 1]
    det = C[..., 0, 0] * C[..., 1, 1] - C[..., 0, 1] * C[..., 1, 0]
    if np.any(tr <= 0.0) or np.any(det <= 0.0):
        raise FemError("coefficient not positive definite at quadrature points")


def _assemble(mesh: Mesh, coefficient: Callable, rhs: Callable):
    C = np.asarray(coefficient(mesh.barycenters), dtype=float)
    _check_spd(C)
    Kloc = np.einsum("tia,tab,tjb->tij", mesh.grads, C, mesh.grads)
    Kloc *= mesh.areas[:, None, None]
    tri = mesh.triangles
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    K = sp.coo_matrix((Kloc.ravel(), (rows, cols)),
                      shape=(mesh.n_nodes, mesh.n_nodes)).tocsr()

    fv = np.asarray(rhs(mesh.edge_midpoints), dtype=float)   # (m, 3)
    scale = mesh.areas[:, None] / 6.0
    bloc = np.empty_like(fv)
    bloc[:, 0] = fv[:, 0] + fv[:, 2]
    bloc[:, 1] = fv[:, 0] + fv[:, 1]
    bloc[:, 2] = fv[:, 1] + fv[:, 2]
    bloc *= scale
    b = np.zeros(mesh.n_nodes)
    np.add.at(b, tri.ravel(), bloc.ravel())
    return K, b


def _solve_dirichlet(mesh: Mesh, K: sp.csr_matrix, b: np.ndarray,
                     provenance: dict) -> FemSolution:
    idx = mesh.interior_nodes
    Kii = K[idx][:, idx].tocsc()
    bi = b[idx]
    bnorm = np.linalg.norm(bi)
    if bnorm == 0.0:
        return FemSolution(mesh, np.zeros(len(idx)), provenance)
    try:
        u = spla.splu(Kii).solve(bi)
    except RuntimeError as exc:
        raise FemError(f"sparse factorization failed: {exc}") from exc
    res = np.linalg.norm(Kii @ u - bi)
    if res > _RESIDUAL_TOL * bnorm:
        # diagonal-preconditioned CG fallback
        M = sp.diags(1.0 / Kii.diagonal())
        u, info = spla.cg(Kii, bi, x0=u, rtol=1e-12, atol=0.0, M=M, maxiter=10_000)
        res = np.linalg.norm(Kii @ u - bi)
        if info != 0 or res > _RESIDUAL_TOL * bnorm:
            raise FemError(
                f"linear solve residual {res:.3e} exceeds {_RESIDUAL_TOL:g} * ||b||; "
                "system may be indefinite (broken ellipticity)")
    return FemSolution(mesh, u, provenance)


def assemble_and_solve(mesh: Mesh, problem: PulledBackProblem) -> FemSolution:
    """Galerkin solution of the pulled-back problem with zero Dirichlet data."""
    K, b = _assemble(mesh, problem.coefficient, problem.rhs)
    return _solve_dirichlet(mesh, K, b, dict(problem.provenance))


def solve_physical(atlas: ShapeAtlas, y: ParamPoint, f: SourceField,
                   h: float) -> FemSolution:
    """Oracle solve of -Lap(u) = f on the mapped triangulation V_y(mesh).

    Maps every node of the reference mesh through V_y and assembles plain P1
    Poisson on the resulting (straight-edged) triangulation. Inverted mapped
    triangles raise FemError.
    """
    ref = build_mesh(atlas.reference_domain, h)
    mapped = ref.map_nodes(lambda p: evaluate_field(atlas, y, p), h)

    def identity_coeff(pts):
        return np.broadcast_to(np.eye(2), pts.shape[:-1] + (2, 2))

    K, b = _assemble(mapped, identity_coeff, f)
    return _solve_dirichlet(mapped, K, b,
                            {"variant": "physical", "y": y.coords.tolist()})


# ---------------------------------------------------------------------------
# norms and errors
# ---------------------------------------------------------------------------

def h1_seminorm(u: P1Function) -> float:
    """||grad u||_L2, exact for P1 (piecewise-constant gradients)."""
    g = u.triangle_gradients()
    return float(np.sqrt(np.sum(u.mesh.areas * np.sum(g * g, axis=1))))


def l2_norm(u: P1Function) -> float:
    """||u||_L2 via the edge-midpoint rule (exact for squared P1 functions)."""
    vals = u.nodal_values[u.mesh.triangles]                     # (m, 3)
    mids = 0.5 * (vals + np.roll(vals, -1, axis=1))
    return float(np.sqrt(np.sum(u.mesh.areas / 3.0 * np.sum(mids * mids, axis=1))))


def _same_mesh(a: Mesh, b: Mesh) -> bool:
    return a is b or (a.nodes.shape == b.nodes.shape
                      and np.array_equal(a.triangles, b.triangles)
                      and np.allclose(a.nodes, b.nodes))


def h1_diff(a: P1Function, b: P1Function) -> float:
    if not _same_mesh(a.mesh, b.mesh):
        raise FemError("h1_diff requires both functions on the same mesh")
    return h1_seminorm(P1Function(a.mesh, a.nodal_values - b.nodal_values))


def h1_error_against(u: P1Function, grad_exact: Callable) -> float:
    """H1-seminorm distance to an exact solution with known gradient."""
    g = u.triangle_gradients()[:, None, :]                       # (m, 1, 2)
    ge = np.asarray(grad_exact(u.mesh.edge_midpoints), dtype=float)
    d = g - ge
    return float(np.sqrt(np.sum(u.mesh.areas / 3.0 * np.sum(d * d, axis=(1, 2)))))


def l2_error_against(u: P1Function, exact: Callable) -> float:
    vals = u.nodal_values[u.mesh.triangles]
    mids = 0.5 * (vals + np.roll(vals, -1, axis=1))
    ue = np.asarray(exact(u.mesh.edge_midpoints), dtype=float)
    d = mids - ue
    return float(np.sqrt(np.sum(u.mesh.areas / 3.0 * np.sum(d * d, axis=1))))


# ---------------------------------------------------------------------------
# parametric finite differences and pullback equivalence
# ---------------------------------------------------------------------------

def fd_param_derivative(atlas: ShapeAtlas, y: ParamPoint, k: int, eps: float,
                        f: SourceField, h: float,
                        problem_factory: Optional[Callable] = None) -> float:
    """H1-seminorm of the central difference (u_{y+eps e_k} - u_{y-eps e_k}) / (2 eps).

    Both solves run on the same reference mesh. ``problem_factory(atlas, y)``
    defaults to the Poisson pullback with source ``f``.
    """
    if not 0 <= k < atlas.truncation_dim:
        raise DomainError(f"parameter index {k} out of range")
    if abs(y.coords[k]) + eps > 1.0 + 1e-12:
        raise DomainError("y +- eps e_k leaves the parameter cube")
    if problem_factory is None:
        problem_factory = lambda a, yy: pullback_poisson(a, yy, f)
    mesh = build_mesh(atlas.reference_domain, h)
    yp = y.coords.copy()
    ym = y.coords.copy()
    yp[k] += eps
    ym[k] -= eps
    up = assemble_and_solve(mesh, problem_factory(atlas, ParamPoint(yp)))
    um = assemble_and_solve(mesh, problem_factory(atlas, ParamPoint(ym)))
    diff = P1Function(mesh, (up.nodal_values - um.nodal_values) / (2.0 * eps))
    return h1_seminorm(diff)


def pullback_gap(atlas: ShapeAtlas, y: ParamPoint, f: SourceField, h: float,
                 problem_factory: Optional[Callable] = None) -> float:
    """Relative nodal H1 gap between the transported pullback solve and the
    physical-domain oracle solve on the mapped mesh.

    Forward transport is nodal: the mapped node V_y(x_i) carries the reference
    value u_hat(x_i), so no field inversion is needed.
    """
    if problem_factory is None:
        problem_factory = lambda a, yy: pullback_poisson(a, yy, f)
    mesh = build_mesh(atlas.reference_domain, h)
    u_ref = assemble_and_solve(mesh, problem_factory(atlas, y))
    u_phys = solve_physical(atlas, y, f, h)
    transported = P1Function(u_phys.mesh, u_ref.nodal_values)
    denom = h1_seminorm(u_phys)
    if denom == 0.0:
        raise FemError("physical solution vanishes; relative gap undefined")
    return h1_diff(transported, u_phys) / denom


# ---------------------------------------------------------------------------
# mesh and solution I/O
# ---------------------------------------------------------------------------

def write_mesh(mesh: Mesh, path: str):
    """Plain-text mesh format: header, nodes, triangles, boundary index list."""
    with open(path, "w") as fh:
        fh.write(f"nodes {mesh.n_nodes} triangles {mesh.n_triangles}\n")
        for x, yv in mesh.nodes:
            fh.write(f"{float(x)!r} {float(yv)!r}\n")
        for i, j, k in mesh.triangles:
            fh.write(f"{i} {j} {k}\n")
        fh.write("boundary\n")
        fh.write(" ".join(str(i) for i in mesh.boundary_nodes) + "\n")


def read_mesh(path: str) -> Mesh:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 4 or header[0] != "nodes" or header[2] != "triangles":
            raise FemError(f"bad mesh header in {path}")
        n, m = int(header[1]), int(header[3])
        nodes = np.array([[float(v) for v in fh.readline().split()] for _ in range(n)])
        tris = np.array([[int(v) for v in fh.readline().split()] for _ in range(m)],
                        dtype=np.int64)
        if fh.readline().strip() != "boundary":
            raise FemError(f"missing boundary section in {path}")
        rest = fh.read().split()
        boundary = np.array([int(v) for v in rest], dtype=np.int64)
    p = nodes[tris]
    edges = np.linalg.norm(p - np.roll(p, -1, axis=1), axis=2)
    return Mesh(nodes, tris, boundary, h=float(np.max(edges)), domain="custom")


def write_solution_csv(u: P1Function, path: str):
    """CSV export ``node_index,value`` over all nodes (boundary zeros included)."""
    with open(path, "w") as fh:
        fh.write("node_index,value\n")
        for i, v in enumerate(u.nodal_values):
            fh.write(f"{i},{float(v)!r}\n")


def read_solution_csv(path: str) -> np.ndarray:
    vals = []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "node_index,value":
            raise FemError(f"bad solution header in {path}")
        for line in fh:
            _, v = line.split(",")
            vals.append(float(v))
    return np.asarray(vals)
