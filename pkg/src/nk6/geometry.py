"""Almost Hermitian six-manifold backends: points, metric, J, charts, frames.

Three concrete backends are provided:

* ``backend_s6(radius)``: the sphere of the given radius in R^7, with the
  round induced metric and the almost complex structure J_p(v) = p_hat x v
  coming from the seven-dimensional cross product (octonion multiplication).
  Carries exact closed-form derivative data for J.
* ``backend_flat_kahler()``: R^6 with the identity metric and the constant
  model structure J0; the Kahler control case where every derivative of the
  structure vanishes.
* ``backend_perturbed(delta)``: the unit sphere carrying the metric induced
  by the ellipsoid embedding diag(1+delta, 1, ..., 1), with the octonionic J
  corrected pointwise by a polar factor so that it stays metric-orthogonal
  with J^2 = -id.  Almost Hermitian but not nearly Kahler; used as the
  negative control.

Charts are orthogonal-projection charts: six coordinates in the tangent
space at the centre, mapped to normalize(p + sum x_i v_i) on sphere-like
backends and to p + x on the flat one.  Chart frames and their derivatives
are closed-form, so Christoffel symbols downstream need no differencing of
the metric.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from typing import Callable, Optional

import numpy as np

from .exterior6 import J0_MATRIX

# ---------------------------------------------------------------------------
# Octonion multiplication / seven-dimensional cross product

# Oriented Fano lines (1-based imaginary units): eps_a * eps_b = eps_c for each
# cyclic rotation of a listed triple.  This is the Cayley-Dickson table built
# from the quaternions: eps1*eps2 = eps3, eps1*eps4 = eps5, eps2*eps4 = eps6,
# eps3*eps4 = eps7, eps2*eps5 = eps7, eps1*eps7 = eps6, eps3*eps6 = eps5.
FANO_TRIPLES = ((1, 2, 3), (1, 4, 5), (2, 4, 6), (3, 4, 7), (2, 5, 7), (1, 7, 6), (3, 6, 5))


def _cross_tensor() -> np.ndarray:
    t = np.zeros((7, 7, 7))
    for a, b, c in FANO_TRIPLES:
        for i, j, k in ((a, b, c), (b, c, a), (c, a, b)):
            t[i - 1, j - 1, k - 1] = 1.0
            t[j - 1, i - 1, k - 1] = -1.0
    return t


CROSS_TENSOR = _cross_tensor()


def cross7(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Cross product on R^7 = Im(O) for the table above."""
    return np.einsum("abc,a,b->c", CROSS_TENSOR, u, v)


def octonion_table() -> list:
    """7x7 table of signed 1-based indices: entry [i][j] = s*k iff eps_i x eps_j = s*eps_k."""
    table = [[0] * 7 for _ in range(7)]
    for i in range(7):
        for j in range(7):
            if i == j:
                continue
            k = int(np.argmax(np.abs(CROSS_TENSOR[i, j])))
            table[i][j] = int(CROSS_TENSOR[i, j, k]) * (k + 1)
    return table


def write_octonion_table(path) -> None:
    """Write the octonion cross-product table as JSON for external audit."""
    payload = {
        "description": "7-dimensional cross product table; entry [i][j] = s*k "
        "means eps_{i+1} x eps_{j+1} = s * eps_k (1-based k, s in {-1,+1}), 0 on the diagonal",
        "fano_triples": [list(t) for t in FANO_TRIPLES],
        "table": octonion_table(),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def load_octonion_table() -> dict:
    """Load the packaged JSON copy of the multiplication table."""
    with resources.files("nk6").joinpath("data/octonion_table.json").open() as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# Points, tangent vectors, frames

@dataclass(frozen=True)
class ManifoldPoint:
    """A point given by ambient coordinates plus the owning backend's tag."""

    coords: np.ndarray
    backend: str


@dataclass(frozen=True)
class TangentVector:
    """Ambient components of a tangent vector at a base point."""

    components: np.ndarray
    point: ManifoldPoint


@dataclass(frozen=True)
class AdaptedFrame:
    """Orthonormal frame E1, JE1, E2, JE2, E3, JE3 stored as rows of ``vectors``."""

    vectors: np.ndarray  # shape (6, ambient_dim)
    point: ManifoldPoint
    orientation: int

    def __getitem__(self, i: int) -> np.ndarray:
        return self.vectors[i]


def _coords(p) -> np.ndarray:
    return np.asarray(getattr(p, "coords", p), dtype=float)


def _householder_basis(unit: np.ndarray) -> np.ndarray:
    """Deterministic orthonormal basis of the hyperplane orthogonal to ``unit``.

    Columns of the result span unit^perp; built from the Householder
    reflection exchanging unit with a coordinate axis.
    """
    n = unit.shape[0]
    s = 1.0 if unit[0] >= 0.0 else -1.0
    w = unit.copy()
    w[0] += s
    h = np.eye(n) - 2.0 * np.outer(w, w) / np.dot(w, w)
    return h[:, 1:]


# ---------------------------------------------------------------------------
# Charts

class SphereChart:
    """Projection chart on the radius-r sphere: x -> r*(p + B x)/|p + B x|."""

    def __init__(self, center: np.ndarray, radius: float):
        self.center = center
        self.radius = radius
        self.basis = _householder_basis(center / radius)  # (amb, 6)

    def point(self, x: np.ndarray) -> np.ndarray:
        u = self.center + self.basis @ x
        return self.radius * u / np.linalg.norm(u)

    def frame(self, x: np.ndarray) -> np.ndarray:
        """Pushforward of the coordinate frame; columns are d(chart)/dx_i."""
        b = self.basis
        u = self.center + b @ x
        nu = np.linalg.norm(u)
        ub = u @ b  # (6,)
        return self.radius * (b / nu - np.outer(u, ub) / nu**3)

    def frame_deriv(self, x: np.ndarray) -> np.ndarray:
        """d^2(chart)/dx_i dx_j, shape (amb, 6, 6)."""
        b = self.basis
        u = self.center + b @ x
        nu = np.linalg.norm(u)
        ub = u @ b
        bb = b.T @ b  # identity for an orthonormal basis, kept for clarity
        out = (
            -np.einsum("ai,j->aij", b, ub) / nu**3
            - np.einsum("aj,i->aij", b, ub) / nu**3
            - np.einsum("a,ij->aij", u, bb) / nu**3
            + 3.0 * np.einsum("a,i,j->aij", u, ub, ub) / nu**5
        )
        return self.radius * out


class FlatChart:
    """Translation chart on R^6."""

    def __init__(self, center: np.ndarray):
        self.center = center
        self.basis = np.eye(6)

    def point(self, x: np.ndarray) -> np.ndarray:
        return self.center + x

    def frame(self, x: np.ndarray) -> np.ndarray:
        return np.eye(6)

    def frame_deriv(self, x: np.ndarray) -> np.ndarray:
        return np.zeros((6, 6, 6))


# ---------------------------------------------------------------------------
# Backends

@dataclass(frozen=True)
class ExactOps:
    """Closed-form derivative data a backend can supply.

    ``gauss`` flags that the Levi-Civita connection is the tangential part of
    the ambient flat derivative (Euclidean ambient metric), so fields with
    exact ambient jets can be differentiated without finite differences.
    """

    gauss: bool
    nabla_j: Callable  # (p, u, v) -> ambient vector
    nabla2_j: Callable  # (p, w, x, y) -> ambient vector


class AlmostHermitianBackend:
    """Base class: sampled manifold with metric, J, charts and tangent helpers."""

    name: str
    ambient_dim: int
    metric_form: np.ndarray  # constant ambient bilinear form
    exact: Optional[ExactOps] = None

    def g(self, p, u, v) -> float:
        return float(u @ self.metric_form @ v)

    def metric(self, p):
        """Metric evaluator at a point: returns the bilinear function g_p."""
        m = self.metric_form
        return lambda u, v: float(u @ m @ v)

    def g_norm(self, p, u) -> float:
        return float(np.sqrt(max(self.g(p, u, u), 0.0)))

    def j_apply(self, p, v) -> np.ndarray:
        raise NotImplementedError

    def project_tangent(self, p, v) -> np.ndarray:
        raise NotImplementedError

    def random_point(self, rng) -> ManifoldPoint:
        raise NotImplementedError

    def chart(self, p):
        raise NotImplementedError

    def tangent_basis(self, p) -> np.ndarray:
        """Deterministic ambient basis of the tangent space (columns)."""
        return self.chart(p).basis

    def random_tangent(self, p, rng, unit: bool = True) -> np.ndarray:
        pc = _coords(p)
        for _ in range(100):
            v = self.project_tangent(pc, rng.standard_normal(self.ambient_dim))
            n = self.g_norm(pc, v)
            if n > 1e-8:
                return v / n if unit else v
        raise RuntimeError("degenerate tangent draws")


class SphereBackend(AlmostHermitianBackend):
    """Round sphere of given radius in R^7 with the octonionic structure."""

    def __init__(self, radius: float = 1.0):
        if radius <= 0:
            raise ValueError("radius must be positive")
        self.name = "s6" if radius == 1.0 else f"s6(r={radius:g})"
        self.ambient_dim = 7
        self.radius = radius
        self.metric_form = np.eye(7)
        self.exact = ExactOps(
            gauss=True, nabla_j=self._nabla_j, nabla2_j=self._nabla2_j
        )

    def j_apply(self, p, v) -> np.ndarray:
        pc = _coords(p)
        return cross7(pc / self.radius, np.asarray(v, dtype=float))

    def project_tangent(self, p, v) -> np.ndarray:
        pc = _coords(p)
        v = np.asarray(v, dtype=float)
        return v - (pc @ v) * pc / self.radius**2

    def random_point(self, rng) -> ManifoldPoint:
        v = rng.standard_normal(7)
        while np.linalg.norm(v) < 1e-8:
            v = rng.standard_normal(7)
        return ManifoldPoint(self.radius * v / np.linalg.norm(v), self.name)

    def chart(self, p) -> SphereChart:
        return SphereChart(_coords(p), self.radius)

    # closed-form derivatives of J along the Levi-Civita connection
    def _nabla_j(self, p, u, v) -> np.ndarray:
        pc = _coords(p)
        return self.project_tangent(pc, cross7(u, v)) / self.radius

    def _nabla2_j(self, p, w, x, y) -> np.ndarray:
        pc = _coords(p)
        jy = self.j_apply(pc, y)
        jx = self.j_apply(pc, x)
        sigma_xy = float(jx @ y)
        r2 = self.radius**2
        return (-(w @ x) * jy + (w @ y) * jx - sigma_xy * w) / r2


class FlatBackend(AlmostHermitianBackend):
    """R^6 with the identity metric and the constant model structure J0."""

    def __init__(self):
        self.name = "c3"
        self.ambient_dim = 6
        self.metric_form = np.eye(6)
        self.exact = ExactOps(
            gauss=True,
            nabla_j=lambda p, u, v: np.zeros(6),
            nabla2_j=lambda p, w, x, y: np.zeros(6),
        )

    def j_apply(self, p, v) -> np.ndarray:
        return J0_MATRIX @ np.asarray(v, dtype=float)

    def project_tangent(self, p, v) -> np.ndarray:
        return np.asarray(v, dtype=float)

    def random_point(self, rng) -> ManifoldPoint:
        return ManifoldPoint(rng.standard_normal(6), self.name)

    def chart(self, p) -> FlatChart:
        return FlatChart(_coords(p))


class PerturbedBackend(AlmostHermitianBackend):
    """Unit sphere with the ellipsoid-induced metric and polar-corrected J.

    The metric is the pullback of the Euclidean metric under v -> N v with
    N = diag(1+delta, 1, ..., 1).  The octonionic J is replaced by the
    orthogonal polar factor of the endomorphism A defined by
    g(Au, v) = <p x u, v>; A is g-skew, so the factor squares to -id and is
    g-orthogonal.  The result is almost Hermitian but not nearly Kahler.
    """

    def __init__(self, delta: float):
        if not 0.0 < delta < 0.5:
            raise ValueError("perturbation amplitude must lie in (0, 0.5)")
        self.name = f"perturbed(d={delta:g})"
        self.ambient_dim = 7
        self.delta = delta
        self._n = np.diag([1.0 + delta] + [1.0] * 6)
        self._n_inv = np.diag([1.0 / (1.0 + delta)] + [1.0] * 6)
        self.metric_form = self._n @ self._n

    def j_apply(self, p, v) -> np.ndarray:
        pc = _coords(p)
        q = self._n_inv @ pc
        q = q / np.linalg.norm(q)
        piq = np.eye(7) - np.outer(q, q)
        jo = np.einsum("abc,a->bc", CROSS_TENSOR, pc).T  # column action: jo @ v = p x v
        a_hat = piq @ self._n_inv @ jo @ self._n_inv @ piq
        s_hat = -a_hat @ a_hat
        w, vecs = np.linalg.eigh(s_hat)
        inv_sqrt = np.where(w > 1e-10, 1.0 / np.sqrt(np.where(w > 1e-10, w, 1.0)), 0.0)
        j_hat = a_hat @ (vecs * inv_sqrt) @ vecs.T
        return self._n_inv @ (j_hat @ (self._n @ np.asarray(v, dtype=float)))

    def project_tangent(self, p, v) -> np.ndarray:
        pc = _coords(p)
        v = np.asarray(v, dtype=float)
        return v - (pc @ v) * pc / (pc @ pc)

    def random_point(self, rng) -> ManifoldPoint:
        v = rng.standard_normal(7)
        while np.linalg.norm(v) < 1e-8:
            v = rng.standard_normal(7)
        return ManifoldPoint(v / np.linalg.norm(v), self.name)

    def chart(self, p) -> SphereChart:
        return SphereChart(_coords(p), 1.0)


def backend_s6(radius: float = 1.0) -> SphereBackend:
    """The round sphere with the octonionic almost complex structure."""
    return SphereBackend(radius)


def backend_flat_kahler() -> FlatBackend:
    """Flat R^6 with the constant model structure (Kahler control case)."""
    return FlatBackend()


def backend_perturbed(delta: float = 0.1) -> PerturbedBackend:
    """Almost Hermitian but non nearly Kahler control backend."""
    return PerturbedBackend(delta)


# ---------------------------------------------------------------------------
# Adapted frames

def adapted_frame(backend: AlmostHermitianBackend, p, seed) -> AdaptedFrame:
    """Draw a deterministic g-orthonormal frame E1, JE1, E2, JE2, E3, JE3.

    Gram-Schmidt over the J-invariant complements: each E_k is a random unit
    vector g-orthogonal to the span of the previous pairs, and the J-partner
    slots are J applied to it.  Degenerate draws are retried; after 100
    failures a RuntimeError is raised.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    pc = _coords(p)
    point = p if isinstance(p, ManifoldPoint) else ManifoldPoint(pc, backend.name)
    rows = []
    for _ in range(3):
        for attempt in range(101):
            if attempt == 100:
                raise RuntimeError("adapted_frame: degenerate draws")
            v = backend.project_tangent(pc, rng.standard_normal(backend.ambient_dim))
            for w in rows:
                v = v - backend.g(pc, v, w) * w
            n = backend.g_norm(pc, v)
            if n > 1e-8:
                v = v / n
                break
        rows.append(v)
        rows.append(backend.j_apply(pc, v))
    vectors = np.array(rows)
    basis = backend.tangent_basis(pc)
    orientation = 1 if np.linalg.det(vectors @ basis) > 0 else -1
    return AdaptedFrame(vectors=vectors, point=point, orientation=orientation)


# ---------------------------------------------------------------------------
# Finite differences in charts

FD_STEP_ORDER12 = 1e-3
FD_STEP_ORDER3 = 3e-3


def central_diff(f, x: np.ndarray, direction: np.ndarray, h: float, richardson: bool = False):
    """Central first difference of f along ``direction`` at x; O(h^2).

    With ``richardson`` the h and h/2 stencils are combined to O(h^4).
    """
    d1 = (f(x + h * direction) - f(x - h * direction)) / (2.0 * h)
    if not richardson:
        return d1
    h2 = 0.5 * h
    d2 = (f(x + h2 * direction) - f(x - h2 * direction)) / (2.0 * h2)
    return (4.0 * d2 - d1) / 3.0


def derivative_oracle(backend, field, p, directions, order: int, h: float = None,
                      richardson: bool = False):
    """Iterated directional derivative of a chart-expressed field at the centre.

    ``field`` maps chart coordinates (shape (6,)) to an arbitrary array;
    ``directions`` is a sequence of ``order`` chart direction vectors.
    Central differences, error O(h^2); mixed derivatives are computed by
    nesting.  Orders 1..3 only.
    """
    if order not in (1, 2, 3):
        raise ValueError("derivative order must be 1, 2 or 3")
    directions = [np.asarray(d, dtype=float) for d in directions]
    if len(directions) != order:
        raise ValueError(f"need {order} directions, got {len(directions)}")
    if h is None:
        h = FD_STEP_ORDER12 if order <= 2 else FD_STEP_ORDER3

    def deriv(fn, dirs, x):
        if len(dirs) == 1:
            return central_diff(fn, x, dirs[0], h, richardson)
        inner = lambda y: deriv(fn, dirs[1:], y)
        return central_diff(inner, x, dirs[0], h, richardson)

    x0 = np.zeros(6)
    return deriv(field, directions, x0)
