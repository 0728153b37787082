"""Connection and curvature computations at a point of a backend.

Everything is organised around :class:`PointCalculus`, which fixes a backend,
a point and the projection chart centred there.  Christoffel symbols come
from the closed-form chart jets (frame and frame derivative), so only the
genuinely analytic data of each backend is differenced:

* on the sphere and the flat backend, J and its covariant derivatives have
  closed forms supplied by the backend (the exact connection path);
* on the perturbed backend the J matrix is differenced in the chart.

Curvature is assembled by central differences of the exact Christoffel
symbols; the exterior derivative differences pulled-back form components and
never touches the connection, which keeps the two routes to d(sigma)
independent.

Sign conventions: R(X,Y)Z = nabla_X nabla_Y Z - nabla_Y nabla_X Z -
nabla_{[X,Y]} Z, R(W,X,Y,Z) = g(R(W,X)Y, Z), sigma = g(J., .),
Ric(X,Y) = sum_i R(X,E_i,E_i,Y), Ric*(X,Y) = sum_i R(X,E_i,JE_i,JY).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from itertools import combinations
from typing import Callable

import numpy as np

from . import exterior6 as e6
from .geometry import (
    FD_STEP_ORDER12,
    FD_STEP_ORDER3,
    AdaptedFrame,
    AlmostHermitianBackend,
    central_diff,
    cross7,
    _coords,
)


class CurvatureError(RuntimeError):
    """Raised when curvature symmetry residuals signal a broken derivative path."""


@dataclass
class CurvatureRecord:
    """Riemann (4,0) values over an adapted frame plus derived traces.

    ``r4[a,b,c,d]`` is R(E_a, E_b, E_c, E_d); ``ric`` and ``ric_star`` are the
    frame matrices of the Ricci and Ricci-star endomorphisms; ``rhat`` is the
    curvature of the canonical Hermitian connection, filled from its closed
    expression in R and J.
    """

    r4: np.ndarray
    ric: np.ndarray
    ric_star: np.ndarray
    rhat: np.ndarray
    frame: AdaptedFrame

    def scalar_curvature(self) -> float:
        return float(np.trace(self.ric))


class VectorField:
    """A vector field germ near a chart centre.

    ``coeffs`` maps chart coordinates to the six frame coefficients.  Fields
    may additionally carry exact ambient closures (``value`` and directional
    derivative ``dirderiv``), which Gauss-formula backends use instead of
    finite differences.
    """

    __slots__ = ("coeffs", "value", "dirderiv")

    def __init__(self, coeffs, value=None, dirderiv=None):
        self.coeffs = coeffs
        self.value = value
        self.dirderiv = dirderiv

    @property
    def has_jet(self) -> bool:
        return self.value is not None and self.dirderiv is not None


class PointCalculus:
    """Tensor calculus in the chart centred at one point of a backend."""

    def __init__(self, backend: AlmostHermitianBackend, p, fd_step: float = None,
                 fd_step3: float = None, richardson: bool = True):
        self.backend = backend
        self.p = _coords(p)
        self.chart = backend.chart(self.p)
        self.h = FD_STEP_ORDER12 if fd_step is None else fd_step
        self.h3 = FD_STEP_ORDER3 if fd_step3 is None else fd_step3
        self.richardson = richardson
        self.frame0 = self.chart.frame(np.zeros(6))  # (amb, 6)
        self._gram0 = self.frame0.T @ backend.metric_form @ self.frame0
        self._pinv0 = np.linalg.pinv(self.frame0)

    # -- basic chart data ---------------------------------------------------

    def metric_chart(self, x) -> np.ndarray:
        f = self.chart.frame(x)
        return f.T @ self.backend.metric_form @ f

    def jmat_chart(self, x) -> np.ndarray:
        """J as a matrix on chart coefficients at chart coordinates x."""
        f = self.chart.frame(x)
        q = self.chart.point(x)
        jcols = np.column_stack([self.backend.j_apply(q, f[:, j]) for j in range(6)])
        return np.linalg.lstsq(f, jcols, rcond=None)[0]

    def sigma_chart(self, x) -> np.ndarray:
        """Components sigma(d_i, d_j) of the fundamental two-form in the chart."""
        f = self.chart.frame(x)
        q = self.chart.point(x)
        jf = np.column_stack([self.backend.j_apply(q, f[:, j]) for j in range(6)])
        return jf.T @ self.backend.metric_form @ f

    def coords_of(self, v) -> np.ndarray:
        """Chart-frame coefficients of an ambient tangent vector at the centre."""
        return self._pinv0 @ np.asarray(v, dtype=float)

    def from_coords(self, c) -> np.ndarray:
        return self.frame0 @ np.asarray(c, dtype=float)

    # -- Christoffel symbols --------------------------------------------------

    def gamma(self, x) -> np.ndarray:
        """Levi-Civita Christoffel symbols Gamma[l, i, j] from exact chart jets."""
        f = self.chart.frame(x)
        df = self.chart.frame_deriv(x)  # (amb, i, k) = d(frame col i)/dx_k
        m = self.backend.metric_form
        g = f.T @ m @ f
        mf = m @ f
        # dg[k, i, j] = d_k g_{ij}
        dg = np.einsum("aik,aj->kij", df, mf) + np.einsum("ai,ajk->kij", mf, df)
        ginv = np.linalg.inv(g)
        # S[i, j, m] = d_i g_{jm} + d_j g_{im} - d_m g_{ij}
        s = dg + dg.transpose(1, 0, 2) - dg.transpose(1, 2, 0)
        return 0.5 * np.einsum("lm,ijm->lij", ginv, s)

    def gamma_fd(self, x, h: float = None, richardson: bool = False) -> np.ndarray:
        """Christoffel symbols with the metric differenced in the chart (cross-check)."""
        h = self.h if h is None else h
        eye = np.eye(6)
        x = np.asarray(x, dtype=float)
        dg = np.stack([
            central_diff(self.metric_chart, x, eye[k], h, richardson) for k in range(6)
        ])
        ginv = np.linalg.inv(self.metric_chart(x))
        s = dg + dg.transpose(1, 0, 2) - dg.transpose(1, 2, 0)
        return 0.5 * np.einsum("lm,ijm->lij", ginv, s)

    @cached_property
    def gamma0(self) -> np.ndarray:
        return self.gamma(np.zeros(6))

    def _gamma_dir(self, wc: np.ndarray) -> np.ndarray:
        """Matrix Gamma^a_{w b} for a direction given in chart coefficients."""
        return np.einsum("aib,i->ab", self.gamma0, wc)

    # -- vector fields ----------------------------------------------------------

    def extend(self, v) -> VectorField:
        """Standard extension of a tangent vector at the centre to a field germ.

        Gauss backends get the ambient projection extension (with its exact
        jet); otherwise the chart coefficients are held constant.
        """
        v = np.asarray(v, dtype=float)
        b = self.backend
        if b.exact is not None and b.exact.gauss:
            if b.ambient_dim == 6:
                return VectorField(lambda x: v.copy(), lambda q: v,
                                   lambda q, u: np.zeros(6))
            r2 = b.radius**2
            value = lambda q: v - (q @ v) * q / r2
            dirderiv = lambda q, u: -((u @ v) * q + (q @ v) * u) / r2
            coeffs = lambda x: np.linalg.lstsq(
                self.chart.frame(x), value(self.chart.point(x)), rcond=None
            )[0]
            return VectorField(coeffs, value, dirderiv)
        c0 = self.coords_of(v)
        return VectorField(lambda x: c0.copy())

    def field_from_coeffs(self, coeff_fn: Callable) -> VectorField:
        return VectorField(coeff_fn)

    def j_compose(self, field: VectorField) -> VectorField:
        """The field q -> J_q(field(q))."""
        b = self.backend
        coeffs = lambda x: self.jmat_chart(x) @ field.coeffs(x)
        if field.has_jet and b.exact is not None and b.exact.gauss:
            if b.ambient_dim == 6:
                return VectorField(coeffs,
                                   lambda q: b.j_apply(q, field.value(q)),
                                   lambda q, u: b.j_apply(q, field.dirderiv(q, u)))
            r = b.radius
            value = lambda q: cross7(q / r, field.value(q))
            dirderiv = lambda q, u: (cross7(u, field.value(q))
                                     + cross7(q, field.dirderiv(q, u))) / r
            return VectorField(coeffs, value, dirderiv)
        return VectorField(coeffs)

    def lincomb(self, fields, weights) -> VectorField:
        """Pointwise linear combination of fields with constant weights."""
        fs = list(fields)
        ws = [float(w) for w in weights]
        coeffs = lambda x: sum(w * f.coeffs(x) for f, w in zip(fs, ws))
        if all(f.has_jet for f in fs):
            value = lambda q: sum(w * f.value(q) for f, w in zip(fs, ws))
            dirderiv = lambda q, u: sum(w * f.dirderiv(q, u) for f, w in zip(fs, ws))
            return VectorField(coeffs, value, dirderiv)
        return VectorField(coeffs)

    def field_value(self, field: VectorField) -> np.ndarray:
        if field.value is not None:
            return field.value(self.p)
        return self.from_coords(field.coeffs(np.zeros(6)))

    def _as_field(self, y) -> VectorField:
        return y if isinstance(y, VectorField) else self.extend(y)

    def _coeff_dirderiv(self, field: VectorField, dir_coords: np.ndarray) -> np.ndarray:
        return central_diff(field.coeffs, np.zeros(6), dir_coords, self.h, self.richardson)

    # -- brackets and the Levi-Civita connection ---------------------------------

    def bracket(self, X, Y) -> np.ndarray:
        """Lie bracket [X, Y] at the centre (ambient components)."""
        X, Y = self._as_field(X), self._as_field(Y)
        b = self.backend
        if X.has_jet and Y.has_jet and b.exact is not None and b.exact.gauss:
            xv, yv = X.value(self.p), Y.value(self.p)
            return b.project_tangent(
                self.p, Y.dirderiv(self.p, xv) - X.dirderiv(self.p, yv)
            )
        xc = X.coeffs(np.zeros(6))
        yc = Y.coeffs(np.zeros(6))
        return self.from_coords(self._coeff_dirderiv(Y, xc) - self._coeff_dirderiv(X, yc))

    def nabla(self, X, Y) -> np.ndarray:
        """Levi-Civita derivative nabla_X Y at the centre (ambient components).

        X may be an ambient tangent vector or a field (only its centre value
        enters); Y must be a field germ or a vector to be auto-extended.
        """
        Y = self._as_field(Y)
        xv = self.field_value(X) if isinstance(X, VectorField) else np.asarray(X, dtype=float)
        b = self.backend
        if Y.has_jet and b.exact is not None and b.exact.gauss:
            return b.project_tangent(self.p, Y.dirderiv(self.p, xv))
        xc = self.coords_of(xv)
        yc = Y.coeffs(np.zeros(6))
        dy = self._coeff_dirderiv(Y, xc)
        return self.from_coords(dy + np.einsum("lij,i,j->l", self.gamma0, xc, yc))

    def scalar_deriv(self, fn: Callable, xvec) -> float:
        """Derivative of a scalar chart function along a tangent vector at the centre."""
        xc = self.coords_of(xvec)
        return float(central_diff(lambda x: float(fn(x)), np.zeros(6), xc,
                                  self.h, self.richardson))

    def g_pair_deriv(self, xvec, Y: VectorField, Z: VectorField) -> float:
        """X(g(Y, Z)) at the centre, exact when both fields carry jets."""
        b = self.backend
        xv = np.asarray(xvec, dtype=float)
        if Y.has_jet and Z.has_jet and b.exact is not None and b.exact.gauss:
            m = b.metric_form
            yv, zv = Y.value(self.p), Z.value(self.p)
            return float(Y.dirderiv(self.p, xv) @ m @ zv + yv @ m @ Z.dirderiv(self.p, xv))
        fn = lambda x: float(Y.coeffs(x) @ self.metric_chart(x) @ Z.coeffs(x))
        return self.scalar_deriv(fn, xv)

    # -- derivatives of J and sigma -------------------------------------------

    def nabla_j_tensor(self, x, h: float = None, richardson: bool = None,
                       fd_gamma: bool = False) -> np.ndarray:
        """Components (nabla J)[k, i, j] = ((nabla_{d_i} J) d_j)^k at chart coordinates x."""
        h = self.h if h is None else h
        richardson = self.richardson if richardson is None else richardson
        x = np.asarray(x, dtype=float)
        eye = np.eye(6)
        dj = np.stack([
            central_diff(self.jmat_chart, x, eye[i], h, richardson) for i in range(6)
        ])  # dj[i, k, j] = d_i J^k_j
        gam = self.gamma_fd(x, h, richardson) if fd_gamma else self.gamma(x)
        j = self.jmat_chart(x)
        out = dj.transpose(1, 0, 2)  # (k, i, j)
        return out + np.einsum("kim,mj->kij", gam, j) - np.einsum("km,mij->kij", j, gam)

    def nabla_j(self, u, v) -> np.ndarray:
        """(nabla_u J) v at the centre; closed form on exact backends."""
        b = self.backend
        if b.exact is not None:
            return b.exact.nabla_j(self.p, np.asarray(u, dtype=float),
                                   np.asarray(v, dtype=float))
        t = self.nabla_j_tensor(np.zeros(6))
        return self.from_coords(
            np.einsum("kij,i,j->k", t, self.coords_of(u), self.coords_of(v))
        )

    def nabla_j_fd(self, u, v, h: float = None, richardson: bool = False) -> np.ndarray:
        """(nabla_u J) v through the all-finite-difference path (cross-check)."""
        t = self.nabla_j_tensor(np.zeros(6), h=h, richardson=richardson, fd_gamma=True)
        return self.from_coords(
            np.einsum("kij,i,j->k", t, self.coords_of(u), self.coords_of(v))
        )

    def nabla_sigma(self, x, y, z) -> float:
        """nabla sigma (x, y, z) = g((nabla_x J) y, z)."""
        return self.backend.g(self.p, self.nabla_j(x, y), np.asarray(z, dtype=float))

    def nabla2_j(self, w, x, y) -> np.ndarray:
        """Second covariant derivative (nabla^2_{w,x} J) y at the centre."""
        b = self.backend
        if b.exact is not None:
            return b.exact.nabla2_j(self.p, np.asarray(w, dtype=float),
                                    np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        wc = self.coords_of(w)
        t = self.nabla_j_tensor(np.zeros(6))
        dt = central_diff(lambda xx: self.nabla_j_tensor(xx), np.zeros(6), wc,
                          self.h, self.richardson)
        gw = self._gamma_dir(wc)
        cov = (
            dt
            + np.einsum("km,mij->kij", gw, t)
            - np.einsum("mi,kmj->kij", gw, t)
            - np.einsum("mj,kim->kij", gw, t)
        )
        return self.from_coords(
            np.einsum("kij,i,j->k", cov, self.coords_of(x), self.coords_of(y))
        )

    def nabla2_sigma(self, w, x, y, z) -> float:
        """Second covariant derivative of sigma: g((nabla^2_{w,x} J) y, z)."""
        return self.backend.g(self.p, self.nabla2_j(w, x, y), np.asarray(z, dtype=float))

    def nabla_sigma_chart(self, x) -> np.ndarray:
        """Components (nabla sigma)(d_i; d_j, d_k) at chart coordinates x."""
        b = self.backend
        if b.exact is not None:
            f = self.chart.frame(x)
            q = self.chart.point(x)
            m = b.metric_form
            out = np.zeros((6, 6, 6))
            for i in range(6):
                for j in range(6):
                    nj = b.exact.nabla_j(q, f[:, i], f[:, j])
                    out[i, j] = nj @ m @ f
            return out
        t = self.nabla_j_tensor(np.asarray(x, dtype=float))
        g = self.metric_chart(x)
        return np.einsum("mij,mk->ijk", t, g)

    # -- curvature ---------------------------------------------------------------

    def riemann(self, frame: AdaptedFrame, check_tol: float = 1e-4) -> CurvatureRecord:
        """Full curvature record over an adapted frame.

        Raises :class:`CurvatureError` when the algebraic symmetry residuals
        exceed ten times ``check_tol``.
        """
        eye = np.eye(6)
        dgamma = np.stack([
            central_diff(self.gamma, np.zeros(6), eye[k], self.h, self.richardson)
            for k in range(6)
        ])  # dgamma[k, l, i, j] = d_k Gamma^l_{ij}
        gam = self.gamma0
        # riem[k, i, j, l]: R(d_i, d_j) d_l = riem[k, i, j, l] d_k
        riem = (
            dgamma.transpose(1, 0, 2, 3)
            - dgamma.transpose(1, 2, 0, 3)
            + np.einsum("kim,mjl->kijl", gam, gam)
            - np.einsum("kjm,mil->kijl", gam, gam)
        )
        c = np.column_stack([self.coords_of(frame[a]) for a in range(6)])
        r4 = np.einsum("kijl,ia,jb,lc,km,md->abcd", riem, c, c, c, self._gram0, c,
                       optimize=True)
        anti1 = np.max(np.abs(r4 + r4.transpose(1, 0, 2, 3)))
        anti2 = np.max(np.abs(r4 + r4.transpose(0, 1, 3, 2)))
        pair = np.max(np.abs(r4 - r4.transpose(2, 3, 0, 1)))
        bianchi = np.max(np.abs(r4 + r4.transpose(1, 2, 0, 3) + r4.transpose(2, 0, 1, 3)))
        scale = max(1.0, float(np.max(np.abs(r4))))
        if max(anti1, anti2, pair, bianchi) > 10.0 * check_tol * scale:
            raise CurvatureError(
                "curvature symmetry residuals too large: "
                f"antisym={max(anti1, anti2):.2e} pair={pair:.2e} bianchi={bianchi:.2e}"
            )
        j0 = e6.J0_MATRIX
        ric = np.einsum("aiib->ab", r4)
        ric_star = np.einsum("aikl,ki,lb->ab", r4, j0, j0)
        rhat = 0.25 * (
            3.0 * r4
            + 2.0 * np.einsum("abkl,kc,ld->abcd", r4, j0, j0)
            + np.einsum("adkl,kb,lc->abcd", r4, j0, j0)
            + np.einsum("ackl,kd,lb->abcd", r4, j0, j0)
        )
        return CurvatureRecord(r4=r4, ric=ric, ric_star=ric_star, rhat=rhat, frame=frame)

    # -- exterior derivative --------------------------------------------------------

    def exterior_derivative(self, form_field: Callable, degree: int,
                            at: np.ndarray = None, h: float = None) -> e6.KForm:
        """Coordinate exterior derivative of a chart-expressed form field.

        ``form_field`` maps chart coordinates to the C(6, degree) increasing-
        tuple components over the chart coordinate frame.  The result is the
        (degree+1)-form at ``at`` (default the centre) over the same frame.
        Never touches the connection machinery.
        """
        x0 = np.zeros(6) if at is None else np.asarray(at, dtype=float)
        h = self.h if h is None else h
        eye = np.eye(6)
        dcomp = np.stack([
            central_diff(lambda x: np.asarray(form_field(x), dtype=float), x0, eye[d],
                         h, self.richardson)
            for d in range(6)
        ])  # (direction, component)
        pos = e6.INDEX_POS[degree]
        out = e6.KForm(degree + 1)
        for jpos, jtup in enumerate(e6.INDEX_TUPLES[degree + 1]):
            total = 0.0
            for m in range(degree + 1):
                rest = jtup[:m] + jtup[m + 1:]
                total += (-1.0) ** m * dcomp[jtup[m], pos[rest]]
            out.coeffs[jpos] = total
        return out

    def sigma_coeff_field(self) -> Callable:
        """Components of sigma over increasing index pairs, as a chart function."""
        pairs = e6.INDEX_TUPLES[2]

        def field(x):
            s = self.sigma_chart(x)
            return np.array([s[i, j] for i, j in pairs])

        return field

    def form_to_frame(self, form: e6.KForm, frame: AdaptedFrame) -> e6.KForm:
        """Re-express a chart-frame form over an adapted frame."""
        c = np.column_stack([self.coords_of(frame[a]) for a in range(6)])
        return e6.pullback(form, c)

    # -- Nijenhuis tensor and the canonical Hermitian connection ---------------------

    def nijenhuis(self, x, y) -> np.ndarray:
        """N(x, y) from brackets of chart-extended fields (not from nabla J)."""
        X, Y = self._as_field(x), self._as_field(y)
        jx, jy = self.j_compose(X), self.j_compose(Y)
        jp = lambda v: self.backend.j_apply(self.p, v)
        return 0.25 * (
            self.bracket(X, Y)
            - self.bracket(jx, jy)
            + jp(self.bracket(jx, Y))
            + jp(self.bracket(X, jy))
        )

    def hat_nabla(self, x, Y) -> np.ndarray:
        """Canonical Hermitian connection: nabla_x Y - (1/2) J (nabla_x J) Y."""
        Y = self._as_field(Y)
        yv = self.field_value(Y)
        xv = np.asarray(x, dtype=float)
        corr = self.backend.j_apply(self.p, self.nabla_j(xv, yv))
        return self.nabla(xv, Y) - 0.5 * corr

    def nabla_j_components0(self) -> np.ndarray:
        """(nabla J)[k, i, j] at the centre, via the exact closure when present."""
        if self.backend.exact is None:
            return self.nabla_j_tensor(np.zeros(6))
        out = np.zeros((6, 6, 6))
        for i in range(6):
            for j in range(6):
                v = self.nabla_j(self.frame0[:, i], self.frame0[:, j])
                out[:, i, j] = self.coords_of(v)
        return out

    def hat_gamma0(self) -> np.ndarray:
        """Christoffel symbols of the canonical Hermitian connection at the centre."""
        t = self.nabla_j_components0()
        j = self.jmat_chart(np.zeros(6))
        return self.gamma0 - 0.5 * np.einsum("km,mij->kij", j, t)


# ---------------------------------------------------------------------------
# Free-function API mirroring the operation contracts

def nabla_vector(backend, p, X, Y) -> np.ndarray:
    return PointCalculus(backend, p).nabla(X, Y)


def nabla_j(backend, p, x, y) -> np.ndarray:
    return PointCalculus(backend, p).nabla_j(x, y)


def nabla_sigma(backend, p, x, y, z) -> float:
    return PointCalculus(backend, p).nabla_sigma(x, y, z)


def nabla2_sigma(backend, p, w, x, y, z) -> float:
    return PointCalculus(backend, p).nabla2_sigma(w, x, y, z)


def riemann(backend, p, frame: AdaptedFrame, check_tol: float = 1e-4) -> CurvatureRecord:
    return PointCalculus(backend, p).riemann(frame, check_tol=check_tol)


def exterior_derivative(backend, p, form_field, degree: int) -> e6.KForm:
    return PointCalculus(backend, p).exterior_derivative(form_field, degree)


def nijenhuis(backend, p, x, y) -> np.ndarray:
    return PointCalculus(backend, p).nijenhuis(x, y)


def hat_nabla(backend, p, x, Y) -> np.ndarray:
    return PointCalculus(backend, p).hat_nabla(x, Y)
