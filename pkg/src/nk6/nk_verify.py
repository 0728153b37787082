"""Structure verification suite: mu and lambda estimators, SU(3) frames,
the PDE and Einstein checks, the W1 classifier, and the identity registry.

Residuals are normalised as |LHS - RHS| / max(1, |LHS|, |RHS|), so identities
whose sides vanish are measured absolutely and large-valued ones relatively.
Tolerance tiers: 1 for first-order identities (1e-6), 2 for curvature-level
identities (1e-5), 3 for third-order ones (1e-3).
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import permutations
from typing import Callable, Optional

import numpy as np

from . import exterior6 as e6
from .connection import PointCalculus, CurvatureRecord
from .geometry import AdaptedFrame, adapted_frame, central_diff

TIER_TOL = {1: 1e-6, 2: 1e-5, 3: 1e-3}

# Derived random-stream domains: one master seed, per-purpose spawn keys so
# that adding identities never perturbs existing streams.
_DOM_POINTS = 0
_DOM_FRAME = 1
_DOM_DRAW = 2
_DOM_MU = 3
_DOM_LAMBDA = 4
_DOM_CLASSIFY = 5
_DOM_PDE = 6
_DOM_EINSTEIN = 7

DEGENERATE_BRACKET = 1e-6


def substream(seed: int, *key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key)))


def sample_points(backend, n: int, seed: int) -> list:
    return [backend.random_point(substream(seed, _DOM_POINTS, i)) for i in range(n)]


def _nres(lhs, rhs) -> float:
    """Normalised residual |lhs - rhs| / max(1, |lhs|, |rhs|)."""
    l = np.atleast_1d(np.asarray(lhs, dtype=float))
    r = np.atleast_1d(np.asarray(rhs, dtype=float))
    nl, nr = np.linalg.norm(l), np.linalg.norm(r)
    return float(np.linalg.norm(l - r) / max(1.0, nl, nr))


# ---------------------------------------------------------------------------
# Estimators and frames

@dataclass(frozen=True)
class MuEstimate:
    """Constant-type estimate: mean of per-sample values and their spread."""

    value: float
    spread: float
    samples: int


@dataclass(frozen=True)
class LambdaEstimate:
    """Best-fit torsion constant of the (1,0)-coframe, with structure misfit."""

    value: complex
    misfit: float
    spread: float = 0.0


@dataclass(frozen=True)
class SU3Frame:
    """Adapted frame aligned with the torsion, plus the induced model forms.

    ``psi_plus`` and ``psi_minus`` are the real and imaginary parts of
    2*sqrt(2) f^1^f^2^f^3 for the coframe f^k = (e^k + i Je^k)/sqrt(2),
    expressed over the frame; ``sigma`` is the fundamental two-form over the
    frame, computed from g and J rather than assumed.
    """

    frame: AdaptedFrame
    sigma: e6.KForm
    psi_plus: e6.KForm
    psi_minus: e6.KForm


@dataclass(frozen=True)
class IdentityReport:
    identity: str
    samples: int
    max_residual: float
    mean_residual: float
    tolerance: float
    passed: bool
    details: Optional[dict] = None


def estimate_mu(backend, points, seed, n_pairs: int = 10,
                engines: dict = None) -> MuEstimate:
    """Estimate the constant-type function from |(nabla_X J)Y|^2 quotients.

    Pairs whose quadratic factor |X|^2|Y|^2 - g(X,Y)^2 - sigma(X,Y)^2 falls
    below 1e-6 are skipped as degenerate; if every pair degenerates a
    RuntimeError is raised.
    """
    if not points:
        raise ValueError("estimate_mu needs at least one point")
    values = []
    for idx, point in enumerate(points):
        eng = (engines or {}).get(idx) or PointCalculus(backend, point)
        rng = substream(seed, _DOM_MU, idx)
        p = eng.p
        for _ in range(n_pairs):
            x = backend.random_tangent(p, rng, unit=False)
            y = backend.random_tangent(p, rng, unit=False)
            sigma_xy = backend.g(p, backend.j_apply(p, x), y)
            bracket = (backend.g(p, x, x) * backend.g(p, y, y)
                       - backend.g(p, x, y) ** 2 - sigma_xy**2)
            if bracket < DEGENERATE_BRACKET:
                continue
            nj = eng.nabla_j(x, y)
            values.append(float(np.sqrt(max(backend.g(p, nj, nj), 0.0) / bracket)))
    if not values:
        raise RuntimeError("estimate_mu: all sampled pairs were degenerate")
    arr = np.asarray(values)
    return MuEstimate(value=float(arr.mean()), spread=float(arr.max() - arr.min()),
                      samples=len(values))


def _validate_adapted(backend, p, frame: AdaptedFrame, tol: float = 1e-8) -> None:
    gram = np.array([[backend.g(p, frame[i], frame[j]) for j in range(6)] for i in range(6)])
    if np.max(np.abs(gram - np.eye(6))) > tol:
        raise ValueError("frame is not g-orthonormal")
    for k in (0, 2, 4):
        if np.max(np.abs(backend.j_apply(p, frame[k]) - frame[k + 1])) > tol:
            raise ValueError("frame slots 2,4,6 must be J of slots 1,3,5")


def build_su3_frame(backend, p, frame: AdaptedFrame, eng: PointCalculus = None) -> SU3Frame:
    """Align E3 with (nabla_{E1} J) E2 and build the SU(3) model forms.

    The alignment fixes the torsion sign convention: after it,
    g((nabla_{E1} J) E2, E3) >= 0 and the lambda/mu relation is sharp.  When
    the aligned direction degenerates (the Kahler case) the incoming E3 is
    kept.
    """
    eng = eng or PointCalculus(backend, p)
    pc = eng.p
    _validate_adapted(backend, pc, frame)
    w = eng.nabla_j(frame[0], frame[2])
    for i in range(4):
        w = w - backend.g(pc, w, frame[i]) * frame[i]
    n = backend.g_norm(pc, w)
    if n > 1e-8:
        e3 = w / n
        vectors = np.array([frame[0], frame[1], frame[2], frame[3], e3,
                            backend.j_apply(pc, e3)])
        frame = AdaptedFrame(vectors=vectors, point=frame.point,
                             orientation=frame.orientation)
    # sigma over the frame, from g and J directly
    sig = np.zeros((6, 6))
    for a in range(6):
        ja = backend.j_apply(pc, frame[a])
        for b in range(6):
            sig[a, b] = backend.g(pc, ja, frame[b])
    sigma = e6.from_tensor(sig)
    # psi_C = 2 sqrt(2) f^1 ^ f^2 ^ f^3 with f^k = (e^k + i Je^k)/sqrt(2):
    # expand the complex product over the frame coframe
    re = {}
    im = {}
    for k in range(3):
        re[k] = e6.KForm.basis((2 * k,))
        im[k] = e6.KForm.basis((2 * k + 1,))
    w12_re = e6.wedge(re[0], re[1]) - e6.wedge(im[0], im[1])
    w12_im = e6.wedge(re[0], im[1]) + e6.wedge(im[0], re[1])
    psi_plus = e6.wedge(w12_re, re[2]) - e6.wedge(w12_im, im[2])
    psi_minus = e6.wedge(w12_re, im[2]) + e6.wedge(w12_im, re[2])
    return SU3Frame(frame=frame, sigma=sigma, psi_plus=psi_plus, psi_minus=psi_minus)


def _complex_frame_fields(eng: PointCalculus, frame: AdaptedFrame, conj: bool):
    """Real/imaginary part fields of F_k = (E_k - i JE_k)/sqrt(2) (or conjugates)."""
    s = 1.0 if conj else -1.0
    out = []
    inv_sqrt2 = 1.0 / np.sqrt(2.0)
    for k in range(3):
        ek = eng.extend(frame[2 * k])
        jek = eng.j_compose(ek)
        out.append((eng.lincomb([ek], [inv_sqrt2]), eng.lincomb([jek], [s * inv_sqrt2])))
    return out


def _cnabla(eng, backend, p, u_re, u_im, y_re, y_im):
    """Complex nabla_{u_re + i u_im} (Y_re + i Y_im) as a complex ambient vector."""
    a = eng.nabla(u_re, y_re) - eng.nabla(u_im, y_im)
    b = eng.nabla(u_re, y_im) + eng.nabla(u_im, y_re)
    return a + 1j * b


def _cg(backend, p, u, v) -> complex:
    """Complex-bilinear extension of the metric."""
    m = backend.metric_form
    return complex(np.real(u) @ m @ np.real(v) - np.imag(u) @ m @ np.imag(v)
                   + 1j * (np.real(u) @ m @ np.imag(v) + np.imag(u) @ m @ np.real(v)))


def estimate_lambda(backend, p, su3: SU3Frame, eng: PointCalculus = None) -> LambdaEstimate:
    """Extract lambda from 2 g(nabla_{Fbar_i} Fbar_j, Fbar_k) = -eps_{ijk} lambda.

    All six permutations of (1,2,3) are used; on a nearly Kahler backend they
    agree and the misfit is tiny, otherwise the best-fit mean and the spread
    over permutations are reported.
    """
    eng = eng or PointCalculus(backend, p)
    pc = eng.p
    frame = su3.frame
    fbar = _complex_frame_fields(eng, frame, conj=True)
    fbar_vecs = [
        (frame[2 * k] + 1j * frame[2 * k + 1]) / np.sqrt(2.0) for k in range(3)
    ]
    estimates = []
    for (i, j, k) in permutations(range(3)):
        eps = np.sign(np.linalg.det(np.eye(3)[[i, j, k]]))
        u_re, u_im = (eng.field_value(fbar[i][0]), eng.field_value(fbar[i][1]))
        grad = _cnabla(eng, backend, pc, u_re, u_im, fbar[j][0], fbar[j][1])
        estimates.append(-2.0 * _cg(backend, pc, grad, fbar_vecs[k]) / eps)
    arr = np.asarray(estimates, dtype=complex)
    value = complex(arr.mean())
    misfit = float(np.max(np.abs(arr - value)))
    return LambdaEstimate(value=value, misfit=misfit)


def estimate_lambda_global(backend, points, seed, mu: MuEstimate = None,
                           contexts: dict = None) -> LambdaEstimate:
    """Lambda estimate aggregated over points: mean value, max misfit, spread."""
    values, misfits = [], []
    for idx, point in enumerate(points):
        ctx = (contexts or {}).get(idx)
        if ctx is None:
            eng = PointCalculus(backend, point)
            fr = adapted_frame(backend, point, substream(seed, _DOM_FRAME, idx))
            su3 = build_su3_frame(backend, point, fr, eng)
        else:
            eng, su3 = ctx.eng, ctx.su3()
        est = estimate_lambda(backend, point, su3, eng)
        values.append(est.value)
        misfits.append(est.misfit)
    arr = np.asarray(values, dtype=complex)
    value = complex(arr.mean())
    spread = float(np.max(np.abs(arr - value))) if len(points) > 1 else 0.0
    return LambdaEstimate(value=value, misfit=float(np.max(misfits)), spread=spread)


# ---------------------------------------------------------------------------
# Per-point verification context

class PointContext:
    """Shared per-point state for identity runs: engine, frame, cached records."""

    def __init__(self, backend, point, frame_seed, mu: MuEstimate,
                 fd_step=None, fd_step3=None):
        self.backend = backend
        self.point = point
        self.eng = PointCalculus(backend, point, fd_step=fd_step, fd_step3=fd_step3)
        self.p = self.eng.p
        self.frame = adapted_frame(backend, point, frame_seed)
        self.mu = mu
        self._record = None
        self._su3 = None
        self._lambda = None

    def record(self) -> CurvatureRecord:
        if self._record is None:
            self._record = self.eng.riemann(self.frame)
        return self._record

    def su3(self) -> SU3Frame:
        if self._su3 is None:
            self._su3 = build_su3_frame(self.backend, self.point, self.frame, self.eng)
        return self._su3

    def lam(self) -> LambdaEstimate:
        if self._lambda is None:
            self._lambda = estimate_lambda(self.backend, self.point, self.su3(), self.eng)
        return self._lambda

    # small helpers
    def g(self, u, v) -> float:
        return self.backend.g(self.p, u, v)

    def j(self, v) -> np.ndarray:
        return self.backend.j_apply(self.p, v)

    def sigma(self, u, v) -> float:
        return self.g(self.j(u), v)

    def draw(self, rng) -> np.ndarray:
        return self.backend.random_tangent(self.p, rng)

    def fcoords(self, v) -> np.ndarray:
        return np.array([self.g(v, self.frame[a]) for a in range(6)])

    def nabla_sigma_tensor(self) -> np.ndarray:
        t = np.zeros((6, 6, 6))
        for i in range(6):
            for j in range(6):
                nj = self.eng.nabla_j(self.frame[i], self.frame[j])
                t[i, j] = [self.g(nj, self.frame[k]) for k in range(6)]
        return t

    def psi_minus_field(self) -> Callable:
        """Chart components of psi_minus = (1/mu) nabla sigma (J., J., J.)."""
        mu = self.mu.value
        eng = self.eng
        triples = e6.INDEX_TUPLES[3]

        def field(x):
            t = eng.nabla_sigma_chart(x)
            jm = eng.jmat_chart(x)
            pm = np.einsum("mnl,mi,nj,lk->ijk", t, jm, jm, jm)
            if mu > 1e-8:
                pm = pm / mu
            return np.array([pm[i] for i in triples])

        return field

    def dsigma_frame(self) -> e6.KForm:
        d = self.eng.exterior_derivative(self.eng.sigma_coeff_field(), 2)
        return self.eng.form_to_frame(d, self.su3().frame)

    def dpsi_minus_frame(self) -> e6.KForm:
        d = self.eng.exterior_derivative(self.psi_minus_field(), 3)
        return self.eng.form_to_frame(d, self.su3().frame)


def _skew3(t: np.ndarray) -> np.ndarray:
    out = np.zeros_like(t)
    for perm in permutations(range(3)):
        sign = np.sign(np.linalg.det(np.eye(3)[list(perm)]))
        out += sign * np.transpose(t, perm)
    return out / 6.0


# ---------------------------------------------------------------------------
# Identity implementations (ctx, rng, n_draws) -> list of residuals

def _i1(ctx, rng, n):
    out = []
    for _ in range(n):
        x, y = ctx.draw(rng), ctx.draw(rng)
        lhs = ctx.eng.nabla_j(ctx.j(x), y)
        rhs = -ctx.j(ctx.eng.nabla_j(x, y))
        out.append(_nres(lhs, rhs))
    return out


def _i2(ctx, rng, n):
    out = []
    for _ in range(n):
        x, y, z = (ctx.draw(rng) for _ in range(3))
        a = ctx.eng.nabla_sigma(ctx.j(x), y, z)
        b = ctx.eng.nabla_sigma(x, ctx.j(y), z)
        c = ctx.eng.nabla_sigma(x, y, ctx.j(z))
        out.extend([_nres(a, b), _nres(b, c)])
    return out


def _i3(ctx, rng, n):
    out = []
    for _ in range(n):
        x, y, z = (ctx.draw(rng) for _ in range(3))
        s = ctx.eng.nabla_sigma(x, y, z)
        out.append(_nres(ctx.eng.nabla_sigma(y, x, z), -s))
        out.append(_nres(ctx.eng.nabla_sigma(x, z, y), -s))
    return out


def _i4(ctx, rng, n):
    t = _skew3(ctx.nabla_sigma_tensor())
    form = e6.from_tensor(t)
    return [_nres(e6.j_action(form).coeffs, -3.0 * form.coeffs)]


def _i5(ctx, rng, n):
    # compared on raw vector triples: antisymmetrising nabla sigma first
    # would hide the failure mode of non nearly Kahler structures
    dsig = ctx.eng.form_to_frame(
        ctx.eng.exterior_derivative(ctx.eng.sigma_coeff_field(), 2), ctx.frame
    )
    out = []
    for _ in range(n):
        x, y, z = (ctx.draw(rng) for _ in range(3))
        lhs = e6.evaluate(dsig, [ctx.fcoords(x), ctx.fcoords(y), ctx.fcoords(z)])
        out.append(_nres(lhs, 3.0 * ctx.eng.nabla_sigma(x, y, z)))
    return out


def _r4_contract(ctx, rec, *vecs):
    cs = [ctx.fcoords(v) for v in vecs]
    return float(np.einsum("abcd,a,b,c,d->", rec.r4, *cs))


def _r_vector(ctx, rec, x, w, y):
    """R(x, w) y as an ambient vector from the frame record."""
    cx, cw, cy = ctx.fcoords(x), ctx.fcoords(w), ctx.fcoords(y)
    coords = np.einsum("abcd,a,b,c->d", rec.r4, cx, cw, cy)
    return ctx.frame.vectors.T @ coords


def _i6(ctx, rng, n):
    rec = ctx.record()
    out = []
    for _ in range(n):
        w, x, y, z = (ctx.draw(rng) for _ in range(4))
        lhs = ctx.eng.nabla2_sigma(w, x, y, z) - ctx.eng.nabla2_sigma(x, w, y, z)
        rhs = ctx.sigma(_r_vector(ctx, rec, x, w, y), z) + ctx.sigma(y, _r_vector(ctx, rec, x, w, z))
        out.append(_nres(lhs, rhs))
    return out


def _i7(ctx, rng, n):
    out = []
    for _ in range(n):
        x, y = ctx.draw(rng), ctx.draw(rng)
        lhs = ctx.eng.nabla2_sigma(x, x, ctx.j(y), y)
        nj = ctx.eng.nabla_j(x, y)
        out.append(_nres(lhs, ctx.g(nj, nj)))
    return out


def _i8(ctx, rng, n):
    rec = ctx.record()
    out = []
    for _ in range(n):
        x, y = ctx.draw(rng), ctx.draw(rng)
        nj = ctx.eng.nabla_j(x, y)
        rhs = _r4_contract(ctx, rec, x, y, ctx.j(x), ctx.j(y)) - _r4_contract(ctx, rec, x, y, x, y)
        out.append(_nres(ctx.g(nj, nj), rhs))
    return out


def _i9(ctx, rng, n):
    rec = ctx.record()
    out = []
    for _ in range(n):
        w, x, y, z = (ctx.draw(rng) for _ in range(4))
        lhs = _r4_contract(ctx, rec, ctx.j(w), ctx.j(x), ctx.j(y), ctx.j(z))
        out.append(_nres(lhs, _r4_contract(ctx, rec, w, x, y, z)))
    return out


def _i10(ctx, rng, n):
    rec = ctx.record()
    out = []
    for _ in range(n):
        w, x, y, z = (ctx.draw(rng) for _ in range(4))
        lhs = ctx.g(ctx.eng.nabla_j(w, x), ctx.eng.nabla_j(y, z))
        rhs = _r4_contract(ctx, rec, w, x, ctx.j(y), ctx.j(z)) - _r4_contract(ctx, rec, w, x, y, z)
        out.append(_nres(lhs, rhs))
    return out


def _i11(ctx, rng, n):
    out = []
    for _ in range(n):
        w, x, y, z = (ctx.draw(rng) for _ in range(4))
        lhs = 2.0 * ctx.eng.nabla2_sigma(w, x, y, z)
        nj = ctx.eng.nabla_j
        rhs = -(
            ctx.g(nj(w, x), nj(y, ctx.j(z)))
            + ctx.g(nj(w, y), nj(z, ctx.j(x)))
            + ctx.g(nj(w, z), nj(x, ctx.j(y)))
        )
        out.append(_nres(lhs, rhs))
    return out


def _i12(ctx, rng, n):
    rec = ctx.record()
    amat = rec.ric - rec.ric_star
    out = []
    for _ in range(n):
        x, y = ctx.draw(rng), ctx.draw(rng)
        cx, cy = ctx.fcoords(x), ctx.fcoords(y)
        lhs = float(cx @ amat @ cy)
        rhs = sum(
            ctx.g(ctx.eng.nabla_j(x, ctx.frame[i]), ctx.eng.nabla_j(y, ctx.frame[i]))
            for i in range(6)
        )
        out.append(_nres(lhs, rhs))
    return out


def _i13(ctx, rng, n):
    rec = ctx.record()
    amat = rec.ric - rec.ric_star
    j0 = e6.J0_MATRIX
    scale = max(1.0, float(np.max(np.abs(amat))))
    return [
        float(np.max(np.abs(amat - amat.T)) / scale),
        float(np.max(np.abs(j0 @ amat - amat @ j0)) / scale),
    ]


def _endo_field_a(ctx):
    """Chart components of the Ric - Ric* endomorphism as a function of x."""
    eng = ctx.eng
    backend = ctx.backend

    def comp(x):
        q = eng.chart.point(x)
        sub = PointCalculus(backend, q, fd_step=eng.h, fd_step3=eng.h3,
                           richardson=eng.richardson)
        fr = adapted_frame(backend, q, 0)
        rec = sub.riemann(fr)
        amat = rec.ric - rec.ric_star
        # ambient endomorphism: A v = sum_ab g(v, E_a) amat[a,b] E_b
        e = fr.vectors  # rows
        m = backend.metric_form
        a_amb = e.T @ amat.T @ (e @ m)
        f = eng.chart.frame(x)
        return np.linalg.lstsq(f, a_amb @ f, rcond=None)[0]

    return comp


def _i14(ctx, rng, n):
    rec = ctx.record()
    amat = rec.ric - rec.ric_star
    afun = _endo_field_a(ctx)
    a0 = afun(np.zeros(6))
    gam = ctx.eng.gamma0
    out = []
    for _ in range(max(1, n // 2)):
        z, x, y = (ctx.draw(rng) for _ in range(3))
        zc = ctx.eng.coords_of(z)
        da = central_diff(afun, np.zeros(6), zc, ctx.eng.h3, False)
        gz = np.einsum("aib,i->ab", gam, zc)
        cov = da + gz @ a0 - a0 @ gz
        xc, yc = ctx.eng.coords_of(x), ctx.eng.coords_of(y)
        glow = ctx.eng.metric_chart(np.zeros(6))
        lhs = 2.0 * float((cov @ xc) @ glow @ yc)
        av = lambda v: ctx.frame.vectors.T @ (amat.T @ ctx.fcoords(v))
        rhs = ctx.g(av(ctx.j(x)), ctx.eng.nabla_j(z, y)) + ctx.g(av(ctx.j(y)), ctx.eng.nabla_j(z, x))
        out.append(_nres(lhs, rhs))
    return out


def _i15(ctx, rng, n):
    rec = ctx.record()
    amat = rec.ric - rec.ric_star
    mu2 = ctx.mu.value**2
    return [_nres(amat, 4.0 * mu2 * np.eye(6))]


def _i16(ctx, rng, n):
    b, p = ctx.backend, ctx.p
    values = []
    for _ in range(max(10, n)):
        x = b.random_tangent(p, rng, unit=False)
        y = b.random_tangent(p, rng, unit=False)
        bracket = (b.g(p, x, x) * b.g(p, y, y) - b.g(p, x, y) ** 2
                   - ctx.sigma(x, y) ** 2)
        if bracket < DEGENERATE_BRACKET:
            continue
        nj = ctx.eng.nabla_j(x, y)
        values.append(float(np.sqrt(max(ctx.g(nj, nj), 0.0) / bracket)))
    if not values:
        return [0.0]
    return [max(abs(v - ctx.mu.value) for v in values)]


def _i17(ctx, rng, n):
    out = []
    for _ in range(n):
        x, y = ctx.draw(rng), ctx.draw(rng)
        lhs = ctx.eng.nijenhuis(x, y)
        rhs = ctx.j(ctx.eng.nabla_j(x, y))
        out.append(_nres(lhs, rhs))
    return out


def _i18(ctx, rng, n):
    out = []
    for _ in range(n):
        x, y, z = (ctx.draw(rng) for _ in range(3))
        yf, zf = ctx.eng.extend(y), ctx.eng.extend(z)
        dg = ctx.eng.g_pair_deriv(x, yf, zf)
        lhs = dg - ctx.g(ctx.eng.hat_nabla(x, yf), z) - ctx.g(y, ctx.eng.hat_nabla(x, zf))
        out.append(_nres(lhs, 0.0))
        jyf = ctx.eng.j_compose(yf)
        res = ctx.eng.hat_nabla(x, jyf) - ctx.j(ctx.eng.hat_nabla(x, yf))
        out.append(_nres(res, np.zeros_like(res)))
    return out


def _nabla_j_frame(ctx) -> np.ndarray:
    """(nabla_{E_a} J) E_b as ambient vectors, shape (6, 6, amb)."""
    nj = np.zeros((6, 6, ctx.backend.ambient_dim))
    for a in range(6):
        for b in range(6):
            nj[a, b] = ctx.eng.nabla_j(ctx.frame[a], ctx.frame[b])
    return nj


def _i19(ctx, rng, n):
    rec = ctx.record()
    nj = _nabla_j_frame(ctx)
    m = ctx.backend.metric_form
    pr = np.einsum("abx,xy,cdy->abcd", nj, m, nj)
    lhs = rec.r4 + 0.5 * pr + 0.25 * (pr.transpose(2, 0, 1, 3) - pr.transpose(0, 2, 1, 3))
    scale = max(1.0, float(np.max(np.abs(rec.rhat))))
    return [float(np.max(np.abs(lhs - rec.rhat)) / scale)]


def _i20(ctx, rng, n):
    rec = ctx.record()
    j0 = e6.J0_MATRIX
    twisted = np.einsum("abkl,kc,ld->abcd", rec.rhat, j0, j0)
    scale = max(1.0, float(np.max(np.abs(rec.rhat))))
    return [float(np.max(np.abs(twisted - rec.rhat)) / scale)]


def _i21(ctx, rng, n):
    rec = ctx.record()
    scale = max(1.0, float(np.max(np.abs(rec.rhat))))
    return [float(np.max(np.abs(rec.rhat - rec.rhat.transpose(2, 3, 0, 1))) / scale)]


def _i22(ctx, rng, n):
    rec = ctx.record()
    amat = rec.ric - rec.ric_star
    out = []
    for _ in range(max(1, n // 2)):
        y = ctx.draw(rng)
        lhs = sum(ctx.eng.nabla2_j(ctx.frame[j], ctx.frame[j], y) for j in range(6))
        rhs = -(ctx.frame.vectors.T @ (amat.T @ ctx.fcoords(ctx.j(y))))
        out.append(_nres(lhs, rhs))
    return out


def _i23(ctx, rng, n):
    rec = ctx.record()
    amat = rec.ric - rec.ric_star
    j0 = e6.J0_MATRIX
    out = []
    for _ in range(n):
        w, x = ctx.draw(rng), ctx.draw(rng)
        cw, cx = ctx.fcoords(w), ctx.fcoords(x)
        t1 = np.einsum("aijd,a,d->ij", rec.r4, cw, cx)
        t2 = np.einsum("aikd,a,kj,d->ij", rec.r4, cw, j0, j0 @ cx)
        s = float(np.sum(amat * (t1 - 5.0 * t2)))
        out.append(_nres(s, 0.0))
    return out


def _i24(ctx, rng, n):
    rec = ctx.record()
    mu2 = ctx.mu.value**2
    return [
        _nres(rec.ric, 5.0 * rec.ric_star),
        _nres(rec.ric, 5.0 * mu2 * np.eye(6)),
    ]


def _complex_combo(ctx, fields, coeffs):
    """Linear combination sum_k coeffs[k] * (re_k + i im_k) as (re_field, im_field)."""
    res, ims = zip(*fields)
    re = ctx.eng.lincomb(list(res) + list(ims), list(np.real(coeffs)) + list(-np.imag(coeffs)))
    im = ctx.eng.lincomb(list(ims) + list(res), list(np.real(coeffs)) + list(np.imag(coeffs)))
    return re, im


def _i25(ctx, rng, n):
    su3 = ctx.su3()
    f10 = _complex_frame_fields(ctx.eng, su3.frame, conj=False)
    out = []
    for _ in range(max(1, n // 2)):
        a = rng.standard_normal(3) + 1j * rng.standard_normal(3)
        b = rng.standard_normal(3) + 1j * rng.standard_normal(3)
        a /= np.linalg.norm(a)
        b /= np.linalg.norm(b)
        yre, yim = _complex_combo(ctx, f10, b)
        xre, xim = _complex_combo(ctx, f10, a)
        # direction Xbar: conjugate of the (1,0) combination
        u_re = ctx.eng.field_value(xre)
        u_im = -ctx.eng.field_value(xim)
        grad = _cnabla(ctx.eng, ctx.backend, ctx.p, u_re, u_im, yre, yim)
        # (0,1) part of a complex vector v: (v + i J v)/2
        gr, gi = np.real(grad), np.imag(grad)
        p01 = 0.5 * ((gr - ctx.j(gi)) + 1j * (gi + ctx.j(gr)))
        out.append(float(np.linalg.norm(p01) / max(1.0, np.linalg.norm(grad))))
    return out


def _i26(ctx, rng, n):
    su3 = ctx.su3()
    lam = ctx.lam().value
    f10 = _complex_frame_fields(ctx.eng, su3.frame, conj=False)
    fr = su3.frame
    fbar_vec = [(fr[2 * k] + 1j * fr[2 * k + 1]) / np.sqrt(2.0) for k in range(3)]
    out = []
    for (i, j, k) in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
        xre, xim = f10[i]
        yre, yim = f10[j]
        br_rr = ctx.eng.bracket(xre, yre)
        br_ii = ctx.eng.bracket(xim, yim)
        br_ri = ctx.eng.bracket(xre, yim)
        br_ir = ctx.eng.bracket(xim, yre)
        br = (br_rr - br_ii) + 1j * (br_ri + br_ir)
        gr, gi = np.real(br), np.imag(br)
        p01 = 0.5 * ((gr - ctx.j(gi)) + 1j * (gi + ctx.j(gr)))
        rhs = -np.conj(lam) * fbar_vec[k]
        out.append(
            float(np.linalg.norm(p01 - rhs)
                  / max(1.0, np.linalg.norm(p01), np.linalg.norm(rhs)))
        )
    return out


def _i27(ctx, rng, n):
    lam = ctx.lam().value
    want = -1j * np.sqrt(2.0) * ctx.mu.value
    return [float(abs(lam - want) / max(1.0, abs(lam), abs(want)))]


def _pde_residuals(ctx):
    su3 = ctx.su3()
    mu = ctx.mu.value
    dsig = ctx.dsigma_frame()
    r1 = _nres(dsig.coeffs, 3.0 * mu * su3.psi_plus.coeffs)
    dpm = ctx.dpsi_minus_frame()
    sig2 = e6.wedge(su3.sigma, su3.sigma)
    if mu > 1e-8:
        r2 = _nres(dpm.coeffs, -2.0 * mu * sig2.coeffs)
    else:
        # degenerate (Kahler) case: the field carried mu*psi_minus instead
        r2 = _nres(dpm.coeffs, -2.0 * mu**2 * sig2.coeffs)
    return r1, r2


def _i28(ctx, rng, n):
    return list(_pde_residuals(ctx))


def _i29(ctx, rng, n):
    su3 = ctx.su3()
    r1 = _nres(su3.psi_minus.coeffs, -e6.j_slot(su3.psi_plus, 2).coeffs)
    r2 = _nres(su3.psi_minus.coeffs, e6.j_all_slots(su3.psi_plus).coeffs)
    return [r1, r2]


def _i30(ctx, rng, n):
    su3 = ctx.su3()
    vol = e6.vol()
    pp, pm, sig = su3.psi_plus, su3.psi_minus, su3.sigma
    sig3 = e6.wedge(e6.wedge(sig, sig), sig)
    return [
        _nres(e6.wedge(pp, pm).coeffs, 4.0 * vol.coeffs),
        _nres(e6.wedge(pp, pm).coeffs, (2.0 / 3.0) * sig3.coeffs),
        _nres(e6.wedge(sig, pp).coeffs, 0.0 * e6.KForm(5).coeffs),
        _nres(e6.wedge(sig, pm).coeffs, 0.0 * e6.KForm(5).coeffs),
        _nres(e6.hodge_star(pp).coeffs, pm.coeffs),
        _nres(e6.inner(pp, pp), 4.0),
    ]


def _hat_cov_3form(ctx, tensor_fn, w, vecs):
    """(hat-nabla_w T)(x, y, z) for a chart 3-tensor field T."""
    eng = ctx.eng
    fields = [eng.extend(v) for v in vecs]

    def contracted(x):
        t = tensor_fn(x)
        cs = [f.coeffs(x) for f in fields]
        return float(np.einsum("ijk,i,j,k->", t, *cs))

    lead = eng.scalar_deriv(contracted, w)
    t0 = tensor_fn(np.zeros(6))
    corr = 0.0
    cs0 = [eng.coords_of(v) for v in vecs]
    for slot in range(3):
        args = list(cs0)
        args[slot] = eng.coords_of(eng.hat_nabla(w, fields[slot]))
        corr += float(np.einsum("ijk,i,j,k->", t0, *args))
    return lead - corr


def _i31(ctx, rng, n):
    eng = ctx.eng
    su3 = ctx.su3()
    mu = ctx.mu.value
    out = []
    # mu psi_+ = nabla sigma over the aligned frame
    t = np.zeros((6, 6, 6))
    fr = su3.frame
    for i in range(6):
        for j in range(6):
            nj = eng.nabla_j(fr[i], fr[j])
            t[i, j] = [ctx.g(nj, fr[k]) for k in range(6)]
    ns_form = e6.from_tensor(t)
    out.append(_nres(ns_form.coeffs, mu * su3.psi_plus.coeffs))
    # hat-nabla of nabla sigma and of the psi_minus field
    pm_field = ctx.psi_minus_field()
    triples = e6.INDEX_TUPLES[3]

    def pm_tensor(x):
        vals = pm_field(x)
        full = np.zeros((6, 6, 6))
        for pos, (i, j, k) in enumerate(triples):
            v = vals[pos]
            full[i, j, k] = full[j, k, i] = full[k, i, j] = v
            full[j, i, k] = full[i, k, j] = full[k, j, i] = -v
        return full

    for _ in range(max(1, n // 3)):
        w, x, y, z = (ctx.draw(rng) for _ in range(4))
        r_ns = _hat_cov_3form(ctx, eng.nabla_sigma_chart, w, (x, y, z))
        out.append(_nres(r_ns, 0.0))
        r_pm = _hat_cov_3form(ctx, pm_tensor, w, (x, y, z))
        out.append(_nres(r_pm, 0.0))
    return out


def _i32(ctx, rng, n):
    mu = ctx.mu.value
    r1, r2 = _pde_residuals(ctx)
    su3 = ctx.su3()
    dsig = ctx.dsigma_frame()
    scale1 = max(1.0, mu**2 * dsig.norm(), 3.0 * mu**3 * su3.psi_plus.norm())
    dpm = ctx.dpsi_minus_frame()
    sig2 = e6.wedge(su3.sigma, su3.sigma)
    out1 = float(np.linalg.norm(mu**2 * dsig.coeffs - 3.0 * mu**3 * su3.psi_plus.coeffs) / scale1)
    if mu > 1e-8:
        lhs2 = mu**3 * dpm.coeffs
    else:
        lhs2 = mu**2 * dpm.coeffs
    rhs2 = -2.0 * mu**4 * sig2.coeffs
    out2 = float(np.linalg.norm(lhs2 - rhs2) / max(1.0, np.linalg.norm(lhs2), np.linalg.norm(rhs2)))
    return [out1, out2]


@dataclass(frozen=True)
class IdentityDef:
    key: str
    statement: str
    tier: int
    fn: Callable


REGISTRY = {
    d.key: d
    for d in [
        IdentityDef("I1", "(nabla_{JX} J)Y = -J (nabla_X J)Y", 1, _i1),
        IdentityDef("I2", "nabla sigma(JX,Y,Z) = nabla sigma(X,JY,Z) = nabla sigma(X,Y,JZ)", 1, _i2),
        IdentityDef("I3", "nabla sigma is totally skew", 1, _i3),
        IdentityDef("I4", "J acting on nabla sigma has eigenvalue -3", 1, _i4),
        IdentityDef("I5", "d sigma = 3 nabla sigma", 1, _i5),
        IdentityDef("I6", "nabla^2 sigma swap equals the curvature action on sigma", 2, _i6),
        IdentityDef("I7", "nabla^2 sigma(X,X,JY,Y) = |(nabla_X J)Y|^2", 2, _i7),
        IdentityDef("I8", "|(nabla_X J)Y|^2 = R(X,Y,JX,JY) - R(X,Y,X,Y)", 2, _i8),
        IdentityDef("I9", "R(JW,JX,JY,JZ) = R(W,X,Y,Z)", 2, _i9),
        IdentityDef("I10", "g((nabla_W J)X,(nabla_Y J)Z) = R(W,X,JY,JZ) - R(W,X,Y,Z)", 2, _i10),
        IdentityDef("I11", "2 nabla^2 sigma(W,X,Y,Z) = -cyclic_{X,Y,Z} g((nabla_W J)X,(nabla_Y J)JZ)", 2, _i11),
        IdentityDef("I12", "g((Ric-Ric*)X,Y) = sum_i g((nabla_X J)E_i,(nabla_Y J)E_i)", 2, _i12),
        IdentityDef("I13", "Ric-Ric* is self-adjoint and commutes with J", 2, _i13),
        IdentityDef("I14", "2 g((nabla_Z(Ric-Ric*))X,Y) equals its torsion expression", 3, _i14),
        IdentityDef("I15", "Ric - Ric* = 4 mu^2 id", 2, _i15),
        IdentityDef("I16", "mu is constant over points and directions", 2, _i16),
        IdentityDef("I17", "N(X,Y) = J (nabla_X J)Y", 1, _i17),
        IdentityDef("I18", "hat-nabla g = 0 and hat-nabla J = 0", 1, _i18),
        IdentityDef("I19", "hat-R assembled from nabla J equals its closed expression in R", 2, _i19),
        IdentityDef("I20", "hat-R(W,X,JY,JZ) = hat-R(W,X,Y,Z)", 2, _i20),
        IdentityDef("I21", "hat-R(W,X,Y,Z) = hat-R(Y,Z,W,X)", 2, _i21),
        IdentityDef("I22", "sum_j (nabla^2_{E_j,E_j} J)Y = -(Ric-Ric*)JY", 2, _i22),
        IdentityDef("I23", "A-weighted sum of R(W,E_i,E_j,X) - 5R(W,E_i,JE_j,JX) vanishes", 2, _i23),
        IdentityDef("I24", "Ric = 5 Ric* and Ric = 5 mu^2 g", 2, _i24),
        IdentityDef("I25", "nabla_{Xbar} Y stays in T^{1,0}", 1, _i25),
        IdentityDef("I26", "[F_i,F_j]^{0,1} = -conj(lambda) Fbar_k", 1, _i26),
        IdentityDef("I27", "lambda = -i sqrt(2) mu", 2, _i27),
        IdentityDef("I28", "d sigma = 3 mu psi_+ and d psi_- = -2 mu sigma^2", 2, _i28),
        IdentityDef("I29", "psi_- = -J psi_+ and psi_- = -psi_+(.,.,J.)", 1, _i29),
        IdentityDef("I30", "psi_+ ^ psi_- = 4 vol = (2/3) sigma^3, sigma ^ psi_+- = 0, *psi_+ = psi_-", 1, _i30),
        IdentityDef("I31", "hat-nabla (nabla sigma) = 0 and hat-nabla psi_C = 0", 2, _i31),
        IdentityDef("I32", "rescaled pair: d(mu^2 sigma) = 3 mu^3 psi_+, d(mu^3 psi_-) = -2 mu^4 sigma^2", 2, _i32),
    ]
}


def identity_keys() -> list:
    return [f"I{i}" for i in range(1, 33)]


def _ident_num(key: str) -> int:
    return int(key[1:])


def build_contexts(backend, points, seed, mu=None, fd_step=None, fd_step3=None) -> dict:
    mu = mu or estimate_mu(backend, points, seed)
    return {
        idx: PointContext(backend, point, substream(seed, _DOM_FRAME, idx), mu,
                          fd_step=fd_step, fd_step3=fd_step3)
        for idx, point in enumerate(points)
    }


def run_identity(key: str, backend, points, seed, n_draws: int = 10,
                 tolerance: float = None, contexts: dict = None) -> IdentityReport:
    """Evaluate one registry identity over sampled points and report residuals."""
    if key not in REGISTRY:
        raise KeyError(f"unknown identity key: {key!r}")
    ident = REGISTRY[key]
    tol = TIER_TOL[ident.tier] if tolerance is None else tolerance
    contexts = contexts if contexts is not None else build_contexts(backend, points, seed)
    residuals = []
    for idx in sorted(contexts):
        rng = substream(seed, _DOM_DRAW, _ident_num(key), idx)
        residuals.extend(ident.fn(contexts[idx], rng, n_draws))
    arr = np.asarray(residuals)
    return IdentityReport(
        identity=key,
        samples=len(residuals),
        max_residual=float(arr.max()),
        mean_residual=float(arr.mean()),
        tolerance=tol,
        passed=bool(arr.max() < tol),
    )


def run_identities(keys, backend, points, seed, n_draws: int = 10,
                   tolerances: dict = None, contexts: dict = None) -> list:
    contexts = contexts if contexts is not None else build_contexts(backend, points, seed)
    tolerances = tolerances or {}
    return [
        run_identity(k, backend, points, seed, n_draws=n_draws,
                     tolerance=tolerances.get(k), contexts=contexts)
        for k in keys
    ]


# ---------------------------------------------------------------------------
# Aggregate checks

def check_pde_pair(backend, points, seed=0, tolerance: float = None,
                   contexts: dict = None):
    """Residual reports for d sigma = 3 mu psi_+ and d psi_- = -2 mu sigma^2."""
    tol = TIER_TOL[2] if tolerance is None else tolerance
    contexts = contexts if contexts is not None else build_contexts(backend, points, seed)
    r1s, r2s = [], []
    for idx in sorted(contexts):
        r1, r2 = _pde_residuals(contexts[idx])
        r1s.append(r1)
        r2s.append(r2)
    mk = lambda name, rs: IdentityReport(
        identity=name, samples=len(rs), max_residual=float(np.max(rs)),
        mean_residual=float(np.mean(rs)), tolerance=tol,
        passed=bool(np.max(rs) < tol),
    )
    return mk("pde_dsigma", r1s), mk("pde_dpsi_minus", r2s)


def check_einstein(backend, points, seed=0, tolerance: float = None,
                   contexts: dict = None) -> IdentityReport:
    """Einstein condition: Ric - Ric* = 4 mu^2 id, Ric = 5 Ric*, Ric = 5 mu^2 g."""
    tol = TIER_TOL[2] if tolerance is None else tolerance
    contexts = contexts if contexts is not None else build_contexts(backend, points, seed)
    residuals, scalars = [], []
    for idx in sorted(contexts):
        ctx = contexts[idx]
        rec = ctx.record()
        mu2 = ctx.mu.value**2
        amat = rec.ric - rec.ric_star
        residuals.append(_nres(amat, 4.0 * mu2 * np.eye(6)))
        residuals.append(_nres(rec.ric, 5.0 * rec.ric_star))
        residuals.append(_nres(rec.ric, 5.0 * mu2 * np.eye(6)))
        scalars.append(rec.scalar_curvature())
    arr = np.asarray(residuals)
    return IdentityReport(
        identity="einstein", samples=len(residuals),
        max_residual=float(arr.max()), mean_residual=float(arr.mean()),
        tolerance=tol, passed=bool(arr.max() < tol),
        details={"scalar_curvature_mean": float(np.mean(scalars))},
    )


def classify_gray_hervella_w1(backend, points, seed=0, contexts: dict = None,
                              kahler_tol: float = 1e-8, skew_tol: float = 1e-4) -> str:
    """Classify the structure from the shape of nabla sigma.

    "Kahler" when nabla sigma vanishes, "nearly Kahler" when it is totally
    skew (its complement residual is below ``skew_tol`` relative to its
    size), "other" otherwise.  The membership of nabla sigma in the
    J-anti-invariant two-form slot is asserted as a machinery sanity check.
    """
    contexts = contexts if contexts is not None else build_contexts(backend, points, seed)
    max_norm, max_rel_complement, max_membership = 0.0, 0.0, 0.0
    for idx in sorted(contexts):
        ctx = contexts[idx]
        t = ctx.nabla_sigma_tensor()
        norm = float(np.max(np.abs(t)))
        max_norm = max(max_norm, norm)
        if norm > kahler_tol:
            skew = _skew3(t)
            max_rel_complement = max(max_rel_complement,
                                     float(np.max(np.abs(t - skew)) / norm))
        # nabla sigma (U, JV, JZ) = -nabla sigma (U, V, Z): true on any
        # almost Hermitian structure, so a failure flags broken machinery
        j0 = e6.J0_MATRIX
        twisted = np.einsum("ukl,kj,lm->ujm", t, j0, j0)
        max_membership = max(max_membership,
                             float(np.max(np.abs(twisted + t)) / max(1.0, norm)))
    if max_membership > 1e-4:
        raise RuntimeError("nabla sigma left the J-anti-invariant slot; "
                           "derivative machinery is inconsistent")
    if max_norm <= kahler_tol:
        return "Kahler"
    if max_rel_complement < skew_tol:
        return "nearly Kahler"
    return "other"
