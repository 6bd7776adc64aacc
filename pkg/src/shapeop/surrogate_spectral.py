"""Sparse polynomial interpolation surrogates over the parameter cube.

The surrogate interpolates an oracle y -> coefficient vector on a sparse
grid of nested Leja points indexed by a downward-closed multi-index set.
The set collects the indices with the largest product weights gamma^nu
(gamma is the atlas decay sequence; ties broken by smaller total degree,
then lexicographically), which is the standard quasi-optimal choice for
derivative bounds of the factorial-times-gamma^alpha type.

With nested points and the hierarchical Newton basis

    H_nu(y) = prod_j h_{nu_j}(y_j),    h_l(t) = prod_{i<l} (t - x_i)/(x_l - x_i),

the collocation system is unit triangular in any linear extension of the
componentwise order, so interpolation is exact at every grid point, any
polynomial supported in the index set is reproduced exactly, and fitting
requires exactly one oracle evaluation per index.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import SurrogateError
from .shape_param import ParamPoint

__all__ = [
    "MultiIndex",
    "IndexSet",
    "SpectralSurrogate",
    "leja_points",
    "build_index_set",
    "fit",
    "evaluate",
    "evaluate_decoded",
    "save_surrogate",
    "load_surrogate",
]

MultiIndex = tuple[int, ...]


def total_degree(nu: MultiIndex) -> int:
    return sum(nu)


@dataclass(frozen=True)
class IndexSet:
    """Ordered downward-closed set of multi-indices.

    The order is the greedy selection order (a linear extension of the
    componentwise partial order), which the fit relies on.
    """

    indices: tuple[MultiIndex, ...]
    dim: int

    def __len__(self):
        return len(self.indices)

    def __contains__(self, nu):
        return tuple(nu) in set(self.indices)

    def max_levels(self) -> np.ndarray:
        """Highest level used per dimension."""
        arr = np.array(self.indices, dtype=int).reshape(len(self.indices), self.dim)
        return arr.max(axis=0)

    def is_downward_closed(self) -> bool:
        have = set(self.indices)
        for nu in self.indices:
            for j in range(self.dim):
                if nu[j] > 0:
                    parent = nu[:j] + (nu[j] - 1,) + nu[j + 1:]
                    if parent not in have:
                        return False
        return True


def build_index_set(gamma: Sequence[float], budget: int) -> IndexSet:
    """Greedy downward-closed set of the ``budget`` largest gamma^nu weights.

    A candidate becomes admissible once all its parents are selected, which
    keeps the set downward closed by construction; for gamma < 1 the result
    coincides with the global budget-largest weights under the tie-break
    (larger weight, then smaller |nu|, then lexicographic).
    """
    gamma = np.asarray(gamma, dtype=float)
    if gamma.size == 0:
        raise SurrogateError("gamma sequence is empty")
    if np.any(gamma <= 0.0):
        raise SurrogateError("gamma entries must be positive")
    if budget < 1:
        raise SurrogateError("index-set budget must be >= 1")
    dim = gamma.size
    root = (0,) * dim
    # heap entries: (-weight, degree, index)
    heap: list[tuple[float, int, MultiIndex]] = [(-1.0, 0, root)]
    selected: list[MultiIndex] = []
    chosen: set[MultiIndex] = set()
    seen: set[MultiIndex] = {root}
    while heap and len(selected) < budget:
        negw, _, nu = heapq.heappop(heap)
        selected.append(nu)
        chosen.add(nu)
        for j in range(dim):
            child = nu[:j] + (nu[j] + 1,) + nu[j + 1:]
            if child in seen:
                continue
            admissible = True
            for i in range(dim):
                if child[i] > 0:
                    parent = child[:i] + (child[i] - 1,) + child[i + 1:]
                    if parent not in chosen:
                        admissible = False
                        break
            if admissible:
                w = float(np.prod(gamma ** np.asarray(child)))
                heapq.heappush(heap, (-w, total_degree(child), child))
                seen.add(child)
    return IndexSet(tuple(selected), dim)


# ---------------------------------------------------------------------------
# nested Leja points and the hierarchical 1-D basis
# ---------------------------------------------------------------------------

_LEJA_GRID = 200_001


@lru_cache(maxsize=None)
def leja_points(count: int) -> tuple[float, ...]:
    """Nested Leja sequence on [-1, 1], seeded with 0, 1, -1.

    Subsequent points maximize prod |x - x_i| over a fixed fine grid, which
    makes the sequence deterministic and reproducible.
    """
    seed = [0.0, 1.0, -1.0]
    if count <= 3:
        return tuple(seed[:count])
    grid = np.linspace(-1.0, 1.0, _LEJA_GRID)
    logprod = np.zeros(_LEJA_GRID)
    with np.errstate(divide="ignore"):
        for x in seed:
            logprod += np.log(np.abs(grid - x))
    pts = list(seed)
    while len(pts) < count:
        nxt = float(grid[int(np.argmax(logprod))])
        pts.append(nxt)
        with np.errstate(divide="ignore"):
            logprod += np.log(np.abs(grid - nxt))
    return tuple(pts)


def _newton_basis_1d(ts: np.ndarray, nodes: Sequence[float],
                     max_level: int) -> np.ndarray:
    """h_l(t) for l = 0..max_level; h_l vanishes at nodes 0..l-1, is 1 at node l."""
    ts = np.asarray(ts, dtype=float)
    out = np.empty((max_level + 1,) + ts.shape)
    out[0] = 1.0
    run = np.ones_like(ts)
    for l in range(1, max_level + 1):
        run = run * (ts - nodes[l - 1])
        denom = np.prod([nodes[l] - nodes[i] for i in range(l)])
        out[l] = run / denom
    return out


# ---------------------------------------------------------------------------
# surrogate
# ---------------------------------------------------------------------------

class SpectralSurrogate:
    """Interpolation polynomial over a downward-closed set, per output coord.

    ``coeffs`` holds the hierarchical surpluses, one row per multi-index and
    one column per output coefficient; ``nodes`` is the shared nested Leja
    sequence; ``gamma`` the weight sequence the index set was built from.
    """

    def __init__(self, index_set: IndexSet, nodes: Sequence[float],
                 coeffs: np.ndarray, gamma: np.ndarray,
                 output_descriptor: Optional[dict] = None,
                 oracle_evals: int = 0):
        self.index_set = index_set
        self.nodes = tuple(float(t) for t in nodes)
        self.coeffs = np.asarray(coeffs, dtype=float)
        self.gamma = np.asarray(gamma, dtype=float)
        self.output_descriptor = output_descriptor
        self.oracle_evals = int(oracle_evals)
        self._indices_arr = np.array(self.index_set.indices, dtype=int).reshape(
            len(self.index_set), self.index_set.dim)

    @property
    def dim(self) -> int:
        return self.index_set.dim

    @property
    def m_out(self) -> int:
        return self.coeffs.shape[1]

    @property
    def dof_count(self) -> int:
        return len(self.index_set) * self.m_out

    def grid_point(self, nu: MultiIndex) -> np.ndarray:
        return np.array([self.nodes[l] for l in nu])

    def grid_points(self) -> np.ndarray:
        return np.array([self.grid_point(nu) for nu in self.index_set.indices])

    def evaluate(self, y) -> np.ndarray:
        coords = y.coords if isinstance(y, ParamPoint) else np.asarray(y, dtype=float)
        if coords.size != self.dim:
            raise SurrogateError(
                f"parameter has dim {coords.size}, surrogate expects {self.dim}")
        if np.any(np.abs(coords) > 1.0 + 1e-12):
            raise SurrogateError("parameter outside [-1, 1]^K")
        levels = self._indices_arr.max(axis=0)
        H = self._basis_rows(coords.reshape(1, -1), levels)[0]
        return H @ self.coeffs

    def evaluate_batch(self, ys: np.ndarray) -> np.ndarray:
        ys = np.asarray(ys, dtype=float)
        if np.any(np.abs(ys) > 1.0 + 1e-12):
            raise SurrogateError("parameter outside [-1, 1]^K")
        levels = self._indices_arr.max(axis=0)
        H = self._basis_rows(ys, levels)
        return H @ self.coeffs

    def _basis_rows(self, ys: np.ndarray, levels: np.ndarray) -> np.ndarray:
        """H[q, a] = prod_j h_{nu_a_j}(y_q_j)."""
        per_dim = [
            _newton_basis_1d(ys[:, j], self.nodes, int(levels[j]))
            for j in range(self.dim)
        ]
        n_idx = len(self.index_set)
        H = np.ones((ys.shape[0], n_idx))
        for a, nu in enumerate(self.index_set.indices):
            for j, l in enumerate(nu):
                if l > 0:
                    H[:, a] *= per_dim[j][l]
        return H


def fit(oracle: Callable, gamma: Sequence[float], budget: int, m_out: int,
        cache: Optional[dict] = None,
        output_descriptor: Optional[dict] = None) -> SpectralSurrogate:
    """Sparse interpolation of ``oracle`` with ~budget scalar degrees of freedom.

    The index set holds ceil(budget / m_out) indices (m_out is clamped to the
    budget so the scalar count |set| * m_out never exceeds it when m_out
    divides the budget); each index contributes exactly one new oracle call
    thanks to nestedness. ``cache`` maps parameter tuples to previously
    computed oracle vectors and is updated in place.
    """
    if budget < 1:
        raise SurrogateError("budget must be >= 1")
    m_out = min(int(m_out), budget)
    if m_out < 1:
        raise SurrogateError("m_out must be >= 1")
    n_idx = int(np.ceil(budget / m_out))
    index_set = build_index_set(gamma, n_idx)
    levels = index_set.max_levels()
    nodes = leja_points(int(levels.max()) + 1)
    dim = index_set.dim

    if cache is None:
        cache = {}
    values = np.empty((len(index_set), m_out))
    new_evals = 0
    for a, nu in enumerate(index_set.indices):
        pt = tuple(nodes[l] for l in nu)
        if pt not in cache:
            try:
                cache[pt] = np.asarray(oracle(np.array(pt)), dtype=float)
            except Exception as exc:
                raise SurrogateError(f"oracle failed at y={pt}: {exc}") from exc
            new_evals += 1
        full = cache[pt]
        if full.size < m_out:
            raise SurrogateError(
                f"oracle returned {full.size} coefficients, need {m_out}")
        values[a] = full[:m_out]

    # hierarchical surpluses by forward substitution in selection order
    surr = SpectralSurrogate(index_set, nodes, np.zeros((len(index_set), m_out)),
                             np.asarray(gamma, dtype=float),
                             output_descriptor=output_descriptor,
                             oracle_evals=new_evals)
    pts = surr.grid_points().reshape(len(index_set), dim)
    H = surr._basis_rows(pts, levels)
    coeffs = np.empty_like(values)
    for a in range(len(index_set)):
        coeffs[a] = values[a] - H[a, :a] @ coeffs[:a]
    surr.coeffs = coeffs
    return surr


def evaluate(surrogate: SpectralSurrogate, y) -> np.ndarray:
    return surrogate.evaluate(y)


def evaluate_decoded(surrogate: SpectralSurrogate, y, decoder=None):
    """Decoded surrogate output: a function on the reference domain."""
    coeffs = surrogate.evaluate(y)
    if decoder is None:
        if surrogate.output_descriptor is None:
            raise SurrogateError("surrogate has no output frame descriptor")
        from .frames import Decoder, frame_from_descriptor
        frame = frame_from_descriptor(surrogate.output_descriptor)
        decoder = Decoder(frame, min(surrogate.m_out, len(frame.members)))
    return decoder(coeffs)


# ---------------------------------------------------------------------------
# serialization (bit-exact: floats round-trip through repr)
# ---------------------------------------------------------------------------

def save_surrogate(surrogate: SpectralSurrogate, path: str):
    doc = {
        "format": "shapeop-spectral-surrogate-v1",
        "dim": surrogate.dim,
        "gamma": surrogate.gamma.tolist(),
        "indices": [list(nu) for nu in surrogate.index_set.indices],
        "nodes": list(surrogate.nodes),
        "coeffs": surrogate.coeffs.tolist(),
        "output_descriptor": surrogate.output_descriptor,
        "oracle_evals": surrogate.oracle_evals,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_surrogate(path: str) -> SpectralSurrogate:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != "shapeop-spectral-surrogate-v1":
        raise SurrogateError(f"not a spectral surrogate file: {path}")
    index_set = IndexSet(tuple(tuple(nu) for nu in doc["indices"]), int(doc["dim"]))
    return SpectralSurrogate(index_set, doc["nodes"],
                             np.asarray(doc["coeffs"], dtype=float),
                             np.asarray(doc["gamma"], dtype=float),
                             output_descriptor=doc.get("output_descriptor"),
                             oracle_evals=int(doc.get("oracle_evals", 0)))
