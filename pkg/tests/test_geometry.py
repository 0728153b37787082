"""Backend tests: octonion table, sphere/flat/perturbed invariants, frames, charts."""

import json
from pathlib import Path

import numpy as np
import pytest

from nk6 import geometry as geo

RNG = lambda s: np.random.default_rng(s)


# ---------------------------------------------------------------------------
# octonion cross product

def test_cross_table_entry():
    e = np.eye(7)
    assert np.allclose(geo.cross7(e[0], e[1]), e[2])  # eps1 x eps2 = eps3
    assert np.allclose(geo.cross7(e[0], e[3]), e[4])  # eps1 x eps4 = eps5
    assert np.allclose(geo.cross7(e[1], e[3]), e[5])
    assert np.allclose(geo.cross7(e[2], e[3]), e[6])
    assert np.allclose(geo.cross7(e[1], e[4]), e[6])  # eps2 x eps5 = eps7


def test_cross_norm_identity():
    rng = RNG(0)
    for _ in range(50):
        u, v = rng.standard_normal(7), rng.standard_normal(7)
        c = geo.cross7(u, v)
        want = np.dot(u, u) * np.dot(v, v) - np.dot(u, v) ** 2
        assert abs(np.dot(c, c) - want) < 1e-10
        assert abs(np.dot(c, u)) < 1e-12 and abs(np.dot(c, v)) < 1e-12


def test_cross_double_product():
    rng = RNG(1)
    u, v = rng.standard_normal(7), rng.standard_normal(7)
    got = geo.cross7(u, geo.cross7(u, v))
    want = np.dot(u, v) * u - np.dot(u, u) * v
    assert np.allclose(got, want, atol=1e-12)


def test_cross_triple_antisymmetric():
    rng = RNG(2)
    u, v, w = rng.standard_normal((3, 7))
    phi = lambda a, b, c: np.dot(geo.cross7(a, b), c)
    assert abs(phi(u, v, w) + phi(v, u, w)) < 1e-12
    assert abs(phi(u, v, w) + phi(u, w, v)) < 1e-12


def test_octonion_json_matches_code():
    path = Path(__file__).resolve().parents[1] / "src" / "nk6" / "data" / "octonion_table.json"
    with open(path) as fh:
        shipped = json.load(fh)
    assert shipped["table"] == geo.octonion_table()
    assert shipped == geo.load_octonion_table()


def test_octonion_table_roundtrip(tmp_path):
    out = tmp_path / "table.json"
    geo.write_octonion_table(out)
    with open(out) as fh:
        data = json.load(fh)
    assert data["table"][0][1] == 3  # eps1 x eps2 = +eps3
    assert data["table"][1][0] == -3


# ---------------------------------------------------------------------------
# shared backend invariants

BACKENDS = [geo.backend_s6(), geo.backend_flat_kahler(), geo.backend_perturbed(0.1)]


@pytest.mark.parametrize("backend", BACKENDS, ids=lambda b: b.name)
def test_backend_invariants_at_100_points(backend):
    rng = RNG(3)
    for _ in range(100):
        p = backend.random_point(rng)
        basis = backend.tangent_basis(p.coords)
        gmat = basis.T @ backend.metric_form @ basis
        assert np.min(np.linalg.eigvalsh(gmat)) > 0.0
        u = backend.random_tangent(p.coords, rng)
        v = backend.random_tangent(p.coords, rng)
        ju, jv = backend.j_apply(p, u), backend.j_apply(p, v)
        assert np.max(np.abs(backend.j_apply(p, ju) + u)) < 1e-10
        assert abs(backend.g(p.coords, ju, jv) - backend.g(p.coords, u, v)) < 1e-10


def test_s6_points_on_sphere_and_tangency():
    b = geo.backend_s6()
    rng = RNG(4)
    for _ in range(50):
        p = b.random_point(rng)
        assert abs(np.linalg.norm(p.coords) - 1.0) < 1e-14
        v = b.random_tangent(p.coords, rng)
        assert abs(np.dot(p.coords, v)) < 1e-12
        assert abs(np.dot(p.coords, b.j_apply(p, v))) < 1e-12


def test_s6_radius_scaling():
    b = geo.backend_s6(radius=2.0)
    rng = RNG(5)
    p = b.random_point(rng)
    assert abs(np.linalg.norm(p.coords) - 2.0) < 1e-13
    v = b.random_tangent(p.coords, rng)
    assert np.max(np.abs(b.j_apply(p, b.j_apply(p, v)) + v)) < 1e-12


def test_perturbed_delta_range():
    with pytest.raises(ValueError):
        geo.backend_perturbed(0.0)
    with pytest.raises(ValueError):
        geo.backend_perturbed(0.6)


def test_perturbed_matches_s6_at_small_delta():
    rng = RNG(6)
    b0 = geo.backend_s6()
    b1 = geo.backend_perturbed(1e-7)
    p = b1.random_point(rng)
    v = b1.random_tangent(p.coords, rng)
    assert np.max(np.abs(b1.j_apply(p, v) - b0.j_apply(p, v))) < 1e-5


# ---------------------------------------------------------------------------
# adapted frames

@pytest.mark.parametrize("backend", BACKENDS, ids=lambda b: b.name)
def test_adapted_frame_gram_and_structure(backend):
    rng = RNG(7)
    p = backend.random_point(rng)
    fr = geo.adapted_frame(backend, p, seed=42)
    gram = np.array([
        [backend.g(p.coords, fr[i], fr[j]) for j in range(6)] for i in range(6)
    ])
    assert np.max(np.abs(gram - np.eye(6))) < 1e-10
    for k in (0, 2, 4):
        assert np.max(np.abs(backend.j_apply(p, fr[k]) - fr[k + 1])) < 1e-12
    assert fr.orientation in (-1, 1)


def test_adapted_frame_deterministic():
    b = geo.backend_s6()
    p = b.random_point(RNG(8))
    f1 = geo.adapted_frame(b, p, seed=123)
    f2 = geo.adapted_frame(b, p, seed=123)
    assert np.array_equal(f1.vectors, f2.vectors)
    f3 = geo.adapted_frame(b, p, seed=124)
    assert not np.array_equal(f1.vectors, f3.vectors)


def test_nabla_j_orthogonal_to_four_span():
    # on the sphere, (nabla_{E1} J) E2 is orthogonal to E1, JE1, E2, JE2
    b = geo.backend_s6()
    rng = RNG(9)
    p = b.random_point(rng)
    fr = geo.adapted_frame(b, p, seed=1)
    w = b.exact.nabla_j(p.coords, fr[0], fr[2])
    for i in (0, 1, 2, 3):
        assert abs(b.g(p.coords, w, fr[i])) < 1e-12


# ---------------------------------------------------------------------------
# charts and the derivative oracle

@pytest.mark.parametrize("backend", BACKENDS, ids=lambda b: b.name)
def test_chart_full_rank_at_center(backend):
    p = backend.random_point(RNG(10))
    f = backend.chart(p.coords).frame(np.zeros(6))
    s = np.linalg.svd(f, compute_uv=False)
    assert s[-1] > 0.0 and s[0] / s[-1] < 1e3


def test_chart_point_consistency():
    b = geo.backend_s6()
    p = b.random_point(RNG(11))
    ch = b.chart(p.coords)
    assert np.allclose(ch.point(np.zeros(6)), p.coords, atol=1e-15)
    x = 0.05 * RNG(12).standard_normal(6)
    assert abs(np.linalg.norm(ch.point(x)) - 1.0) < 1e-14


def test_derivative_oracle_constant_metric_flat():
    b = geo.backend_flat_kahler()
    p = b.random_point(RNG(13))
    pc = b.chart(p.coords)
    field = lambda x: pc.frame(x).T @ b.metric_form @ pc.frame(x)
    d = geo.derivative_oracle(b, field, p.coords, [np.eye(6)[0]], order=1)
    assert np.max(np.abs(d)) < 1e-12


def test_derivative_oracle_orders_and_errors():
    b = geo.backend_s6()
    p = b.random_point(RNG(14))
    ch = b.chart(p.coords)
    field = lambda x: ch.point(x)
    e0 = np.eye(6)[0]
    with pytest.raises(ValueError):
        geo.derivative_oracle(b, field, p.coords, [e0] * 4, order=4)
    with pytest.raises(ValueError):
        geo.derivative_oracle(b, field, p.coords, [e0], order=2)
    d1 = geo.derivative_oracle(b, field, p.coords, [e0], order=1)
    assert np.allclose(d1, ch.frame(np.zeros(6))[:, 0], atol=1e-7)
    d2 = geo.derivative_oracle(b, field, p.coords, [e0, e0], order=2)
    assert np.allclose(d2, ch.frame_deriv(np.zeros(6))[:, 0, 0], atol=1e-6)
    d3 = geo.derivative_oracle(b, field, p.coords, [e0, e0, e0], order=3)
    assert np.all(np.isfinite(d3))


def test_derivative_oracle_convergence_order():
    # halving h reduces the first-order FD error by 4 within 25 percent
    b = geo.backend_s6()
    rng = RNG(15)
    p = b.random_point(rng)
    ch = b.chart(p.coords)
    direction = rng.standard_normal(6)
    field = lambda x: np.sin(np.linalg.norm(ch.point(x) - ch.point(np.ones(6) * 0.3)) ** 2)
    exact_h = 1e-6
    ref = geo.central_diff(field, np.zeros(6), direction, exact_h, richardson=True)
    errs = []
    for h in (1e-3, 5e-4):
        d = geo.derivative_oracle(b, field, p.coords, [direction], order=1, h=h)
        errs.append(abs(d - ref))
    ratio = errs[0] / errs[1]
    assert 3.0 < ratio < 5.0
