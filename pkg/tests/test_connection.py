"""Connection-level tests: Koszul, torsion, curvature, derivatives of sigma, d, N."""

import numpy as np
import pytest

from nk6 import exterior6 as e6
from nk6 import geometry as geo
from nk6.connection import CurvatureError, PointCalculus

S6 = geo.backend_s6()
FLAT = geo.backend_flat_kahler()
PERT = geo.backend_perturbed(0.1)


def poly_field(pc, rng, scale=1.0):
    """Random quadratic coefficient field in the chart."""
    c0 = scale * rng.standard_normal(6)
    lin = scale * rng.standard_normal((6, 6))
    quad = scale * 0.5 * rng.standard_normal((6, 6, 6))
    return pc.field_from_coeffs(
        lambda x, c0=c0, lin=lin, quad=quad: c0 + lin @ x + np.einsum("kij,i,j->k", quad, x, x)
    )


def koszul_residual(pc, X, Y, Z):
    b = pc.backend
    p = pc.p
    xv, yv, zv = (pc.field_value(f) for f in (X, Y, Z))
    lhs = 2.0 * b.g(p, pc.nabla(X, Y), zv)
    rhs = (
        pc.g_pair_deriv(xv, Y, Z)
        + pc.g_pair_deriv(yv, X, Z)
        - pc.g_pair_deriv(zv, X, Y)
        + b.g(p, pc.bracket(X, Y), zv)
        - b.g(p, pc.bracket(X, Z), yv)
        - b.g(p, pc.bracket(Y, Z), xv)
    )
    return abs(lhs - rhs)


# ---------------------------------------------------------------------------
# Levi-Civita basics

@pytest.mark.parametrize("backend", [S6, FLAT, PERT], ids=lambda b: b.name)
def test_koszul_residual_chart_fields(backend):
    rng = np.random.default_rng(20)
    p = backend.random_point(rng)
    pc = PointCalculus(backend, p)
    for _ in range(5):
        X, Y, Z = (poly_field(pc, rng) for _ in range(3))
        assert koszul_residual(pc, X, Y, Z) < 1e-6


@pytest.mark.parametrize("backend", [S6, FLAT], ids=lambda b: b.name)
def test_koszul_residual_exact_path(backend):
    rng = np.random.default_rng(21)
    p = backend.random_point(rng)
    pc = PointCalculus(backend, p)
    for _ in range(5):
        X, Y, Z = (
            pc.extend(backend.random_tangent(p.coords, rng)) for _ in range(3)
        )
        assert koszul_residual(pc, X, Y, Z) < 1e-10


@pytest.mark.parametrize("backend", [S6, FLAT, PERT], ids=lambda b: b.name)
def test_torsion_residual(backend):
    rng = np.random.default_rng(22)
    p = backend.random_point(rng)
    pc = PointCalculus(backend, p)
    for _ in range(50):
        X, Y = poly_field(pc, rng), poly_field(pc, rng)
        res = pc.nabla(X, Y) - pc.nabla(Y, X) - pc.bracket(X, Y)
        assert np.linalg.norm(res) < 1e-6


def test_flat_constant_fields_parallel():
    rng = np.random.default_rng(23)
    p = FLAT.random_point(rng)
    pc = PointCalculus(FLAT, p)
    v, w = rng.standard_normal(6), rng.standard_normal(6)
    assert np.linalg.norm(pc.nabla(v, pc.extend(w))) < 1e-12


def test_s6_great_circle_velocity_is_geodesic():
    # the tangential extension of a unit vector has vanishing nabla_v at the centre,
    # i.e. great circles are geodesics; checked against the Gauss-formula value
    rng = np.random.default_rng(24)
    p = S6.random_point(rng)
    pc = PointCalculus(S6, p)
    v = S6.random_tangent(p.coords, rng)
    field = pc.extend(v)
    got = pc.nabla(v, field)
    assert np.linalg.norm(got) < 1e-12
    gauss = S6.project_tangent(p.coords, field.dirderiv(p.coords, v))
    assert np.allclose(got, gauss, atol=1e-14)


def test_nabla_agrees_with_chart_route_on_s6():
    rng = np.random.default_rng(25)
    p = S6.random_point(rng)
    pc = PointCalculus(S6, p)
    v = S6.random_tangent(p.coords, rng)
    w = S6.random_tangent(p.coords, rng)
    exact = pc.nabla(v, pc.extend(w))
    jetless = pc.field_from_coeffs(pc.extend(w).coeffs)
    chart = pc.nabla(v, jetless)
    assert np.linalg.norm(exact - chart) < 1e-9


# ---------------------------------------------------------------------------
# FD-vs-exact cross-check and convergence order

def test_nabla_sigma_fd_vs_exact_convergence():
    rng = np.random.default_rng(26)
    ratios = []
    for trial in range(5):
        p = S6.random_point(rng)
        pc = PointCalculus(S6, p)
        u, v, w = (S6.random_tangent(p.coords, rng) for _ in range(3))
        exact = pc.nabla_j(u, v)
        errs = [
            np.linalg.norm(pc.nabla_j_fd(u, v, h=h) - exact) for h in (4e-3, 2e-3, 1e-3)
        ]
        ratios.append(errs[0] / errs[1])
        ratios.append(errs[1] / errs[2])
    ratio = float(np.median(ratios))
    assert 3.0 < ratio < 5.0


def test_gamma_fd_matches_exact():
    rng = np.random.default_rng(27)
    for backend in (S6, PERT):
        p = backend.random_point(rng)
        pc = PointCalculus(backend, p)
        x = 0.01 * rng.standard_normal(6)
        diff = np.max(np.abs(pc.gamma(x) - pc.gamma_fd(x, richardson=True)))
        assert diff < 1e-9


# ---------------------------------------------------------------------------
# curvature

def test_flat_curvature_zero():
    rng = np.random.default_rng(28)
    p = FLAT.random_point(rng)
    fr = geo.adapted_frame(FLAT, p, 1)
    rec = PointCalculus(FLAT, p).riemann(fr)
    assert np.max(np.abs(rec.r4)) < 1e-10
    assert np.max(np.abs(rec.ric)) < 1e-10


def test_s6_constant_curvature_oracle():
    # independent oracle: R(X,Y,Z,W) = g(Y,Z)g(X,W) - g(X,Z)g(Y,W) on the unit sphere
    rng = np.random.default_rng(29)
    p = S6.random_point(rng)
    fr = geo.adapted_frame(S6, p, 2)
    rec = PointCalculus(S6, p).riemann(fr)
    eye = np.eye(6)
    oracle = np.einsum("bc,ad->abcd", eye, eye) - np.einsum("ac,bd->abcd", eye, eye)
    assert np.max(np.abs(rec.r4 - oracle)) < 1e-10
    assert np.max(np.abs(rec.ric - 5.0 * eye)) < 1e-10
    assert abs(rec.scalar_curvature() - 30.0) < 1e-9


def test_s6_sectional_curvature_one():
    rng = np.random.default_rng(30)
    p = S6.random_point(rng)
    fr = geo.adapted_frame(S6, p, 3)
    rec = PointCalculus(S6, p).riemann(fr)
    for a, b in ((0, 2), (1, 4), (3, 5)):
        assert abs(rec.r4[a, b, b, a] - 1.0) < 1e-10


@pytest.mark.parametrize("backend", [S6, PERT], ids=lambda b: b.name)
def test_curvature_symmetries(backend):
    rng = np.random.default_rng(31)
    p = backend.random_point(rng)
    fr = geo.adapted_frame(backend, p, 4)
    rec = PointCalculus(backend, p).riemann(fr)
    r4 = rec.r4
    assert np.max(np.abs(r4 + r4.transpose(1, 0, 2, 3))) < 1e-9
    assert np.max(np.abs(r4 + r4.transpose(0, 1, 3, 2))) < 1e-9
    assert np.max(np.abs(r4 - r4.transpose(2, 3, 0, 1))) < 1e-9
    bianchi = r4 + r4.transpose(1, 2, 0, 3) + r4.transpose(2, 0, 1, 3)
    assert np.max(np.abs(bianchi)) < 1e-9
    assert np.max(np.abs(rec.ric - rec.ric.T)) < 1e-9


def test_curvature_gate_raises():
    rng = np.random.default_rng(32)
    p = PERT.random_point(rng)
    fr = geo.adapted_frame(PERT, p, 5)
    with pytest.raises(CurvatureError):
        PointCalculus(PERT, p).riemann(fr, check_tol=1e-16)


def test_radius_two_sphere_curvature():
    b2 = geo.backend_s6(radius=2.0)
    rng = np.random.default_rng(33)
    p = b2.random_point(rng)
    fr = geo.adapted_frame(b2, p, 6)
    rec = PointCalculus(b2, p).riemann(fr)
    assert np.max(np.abs(rec.ric - 1.25 * np.eye(6))) < 1e-10


# ---------------------------------------------------------------------------
# nabla sigma and nabla^2 sigma

def test_nabla_sigma_flat_zero():
    rng = np.random.default_rng(34)
    p = FLAT.random_point(rng)
    pc = PointCalculus(FLAT, p)
    x, y, z = rng.standard_normal((3, 6))
    assert abs(pc.nabla_sigma(x, y, z)) < 1e-12


def test_nabla_sigma_nearly_kahler_property():
    rng = np.random.default_rng(35)
    p = S6.random_point(rng)
    pc = PointCalculus(S6, p)
    for _ in range(10):
        x, y = (S6.random_tangent(p.coords, rng) for _ in range(2))
        assert abs(pc.nabla_sigma(x, x, y)) < 1e-12


def test_nabla_sigma_moves_j():
    rng = np.random.default_rng(36)
    p = S6.random_point(rng)
    pc = PointCalculus(S6, p)
    x, y, z = (S6.random_tangent(p.coords, rng) for _ in range(3))
    jx, jy, jz = (S6.j_apply(p, v) for v in (x, y, z))
    a = pc.nabla_sigma(jx, y, z)
    b = pc.nabla_sigma(x, jy, z)
    c = pc.nabla_sigma(x, y, jz)
    assert abs(a - b) < 1e-12 and abs(b - c) < 1e-12


def test_nabla_sigma_matches_covariant_tensor_route():
    # independent oracle: covariant derivative of the sigma components in the chart
    rng = np.random.default_rng(37)
    for backend in (S6, PERT):
        p = backend.random_point(rng)
        pc = PointCalculus(backend, p)
        gam = pc.gamma0
        s0 = pc.sigma_chart(np.zeros(6))
        eye = np.eye(6)
        ds = np.stack([
            geo.central_diff(pc.sigma_chart, np.zeros(6), eye[k], pc.h, True)
            for k in range(6)
        ])
        covs = (
            ds
            - np.einsum("mki,mj->kij", gam, s0)
            - np.einsum("mkj,im->kij", gam, s0)
        )
        u, v, w = (backend.random_tangent(p.coords, rng) for _ in range(3))
        uc, vc, wc = (pc.coords_of(a) for a in (u, v, w))
        oracle = float(np.einsum("kij,k,i,j->", covs, uc, vc, wc))
        assert abs(pc.nabla_sigma(u, v, w) - oracle) < 1e-8


def test_nabla2_sigma_flat_zero():
    rng = np.random.default_rng(38)
    p = FLAT.random_point(rng)
    pc = PointCalculus(FLAT, p)
    w, x, y, z = rng.standard_normal((4, 6))
    assert abs(pc.nabla2_sigma(w, x, y, z)) < 1e-12


def test_nabla2_sigma_norm_identity_s6():
    rng = np.random.default_rng(39)
    p = S6.random_point(rng)
    pc = PointCalculus(S6, p)
    for _ in range(5):
        x, y = (S6.random_tangent(p.coords, rng) for _ in range(2))
        jy = S6.j_apply(p, y)
        lhs = pc.nabla2_sigma(x, x, jy, y)
        nj = pc.nabla_j(x, y)
        rhs = S6.g(p.coords, nj, nj)
        assert abs(lhs - rhs) < 1e-10


def test_nabla2_sigma_swap_vs_curvature_s6():
    rng = np.random.default_rng(40)
    p = S6.random_point(rng)
    pc = PointCalculus(S6, p)
    fr = geo.adapted_frame(S6, p, 7)
    rec = pc.riemann(fr)
    coords = lambda v: np.array([S6.g(p.coords, v, fr[a]) for a in range(6)])
    for _ in range(5):
        w, x, y, z = (S6.random_tangent(p.coords, rng) for _ in range(4))
        lhs = pc.nabla2_sigma(w, x, y, z) - pc.nabla2_sigma(x, w, y, z)
        cw, cx, cy, cz = (coords(v) for v in (w, x, y, z))
        rxw_y = np.einsum("abcd,a,b,c->d", rec.r4, cx, cw, cy)  # frame coords of R(x,w)y
        rxw_z = np.einsum("abcd,a,b,c->d", rec.r4, cx, cw, cz)
        sig = lambda cu, cv: float(
            np.einsum("a,ab,b->", cu, np.array([
                [S6.g(p.coords, S6.j_apply(p, fr[i]), fr[j]) for j in range(6)]
                for i in range(6)
            ]), cv)
        )
        rhs = sig(rxw_y, cz) + sig(cy, rxw_z)
        assert abs(lhs - rhs) < 1e-8


def test_nabla2_j_chart_route_matches_closed_form():
    rng = np.random.default_rng(41)
    p = S6.random_point(rng)
    pc = PointCalculus(S6, p)
    w, x, y = (S6.random_tangent(p.coords, rng) for _ in range(3))
    exact = pc.nabla2_j(w, x, y)
    t = pc.nabla_j_tensor(np.zeros(6))
    wc = pc.coords_of(w)
    dt = geo.central_diff(lambda xx: pc.nabla_j_tensor(xx), np.zeros(6), wc, pc.h, True)
    gw = pc._gamma_dir(wc)
    cov = (
        dt
        + np.einsum("km,mij->kij", gw, t)
        - np.einsum("mi,kmj->kij", gw, t)
        - np.einsum("mj,kim->kij", gw, t)
    )
    chart = pc.from_coords(np.einsum("kij,i,j->k", cov, pc.coords_of(x), pc.coords_of(y)))
    assert np.linalg.norm(exact - chart) < 1e-7


# ---------------------------------------------------------------------------
# exterior derivative

def test_d_of_constant_form_flat():
    rng = np.random.default_rng(42)
    p = FLAT.random_point(rng)
    pc = PointCalculus(FLAT, p)
    coeffs = rng.standard_normal(15)
    d = pc.exterior_derivative(lambda x: coeffs, 2)
    assert d.norm() < 1e-14


def test_dsigma_is_three_nabla_sigma_s6():
    rng = np.random.default_rng(43)
    p = S6.random_point(rng)
    pc = PointCalculus(S6, p)
    fr = geo.adapted_frame(S6, p, 8)
    dsig = pc.form_to_frame(pc.exterior_derivative(pc.sigma_coeff_field(), 2), fr)
    t = np.zeros((6, 6, 6))
    for i in range(6):
        for j in range(6):
            nj = pc.nabla_j(fr[i], fr[j])
            t[i, j] = [S6.g(p.coords, nj, fr[k]) for k in range(6)]
    nabla_sigma_form = e6.from_tensor(t)
    assert (dsig - 3.0 * nabla_sigma_form).norm() < 1e-9


def test_d_squared_sigma_vanishes():
    rng = np.random.default_rng(44)
    p = S6.random_point(rng)
    pc = PointCalculus(S6, p)
    sigma_field = pc.sigma_coeff_field()
    dsig_field = lambda x: pc.exterior_derivative(sigma_field, 2, at=x).coeffs
    dd = pc.exterior_derivative(dsig_field, 3, h=pc.h3)
    assert dd.norm() < 1e-4


# ---------------------------------------------------------------------------
# Nijenhuis tensor and the canonical Hermitian connection

def test_nijenhuis_flat_zero():
    rng = np.random.default_rng(45)
    p = FLAT.random_point(rng)
    pc = PointCalculus(FLAT, p)
    x, y = rng.standard_normal((2, 6))
    assert np.linalg.norm(pc.nijenhuis(x, y)) < 1e-12


def test_nijenhuis_antisymmetric():
    rng = np.random.default_rng(46)
    p = S6.random_point(rng)
    pc = PointCalculus(S6, p)
    x, y = (S6.random_tangent(p.coords, rng) for _ in range(2))
    assert np.linalg.norm(pc.nijenhuis(x, y) + pc.nijenhuis(y, x)) < 1e-8


def test_nijenhuis_equals_j_nabla_j_s6():
    rng = np.random.default_rng(47)
    p = S6.random_point(rng)
    pc = PointCalculus(S6, p)
    for _ in range(5):
        x, y = (S6.random_tangent(p.coords, rng) for _ in range(2))
        lhs = pc.nijenhuis(x, y)
        rhs = S6.j_apply(p, pc.nabla_j(x, y))
        assert np.linalg.norm(lhs - rhs) < 1e-9


def test_hat_nabla_flat_coincides_with_nabla():
    rng = np.random.default_rng(48)
    p = FLAT.random_point(rng)
    pc = PointCalculus(FLAT, p)
    x = rng.standard_normal(6)
    Y = poly_field(pc, rng)
    assert np.linalg.norm(pc.hat_nabla(x, Y) - pc.nabla(x, Y)) < 1e-12


def test_hat_nabla_metric_and_j_parallel_s6():
    rng = np.random.default_rng(49)
    p = S6.random_point(rng)
    pc = PointCalculus(S6, p)
    for _ in range(5):
        x, y, z = (S6.random_tangent(p.coords, rng) for _ in range(3))
        Y, Z = pc.extend(y), pc.extend(z)
        # hat-nabla g
        lhs = pc.g_pair_deriv(x, Y, Z)
        rhs = S6.g(p.coords, pc.hat_nabla(x, Y), z) + S6.g(p.coords, y, pc.hat_nabla(x, Z))
        assert abs(lhs - rhs) < 1e-10
        # hat-nabla J: hat_nabla_x (J Y) - J hat_nabla_x Y
        jy_field = pc.j_compose(Y)
        res = pc.hat_nabla(x, jy_field) - S6.j_apply(p, pc.hat_nabla(x, Y))
        assert np.linalg.norm(res) < 1e-10
