"""Exterior algebra on the six-dimensional model space (R^6, g0, J0).

The model basis is ordered e1, Je1, e2, Je2, e3, Je3 (indices 0..5) and is
orthonormal for g0.  The complex structure J0 sends e_k to Je_k and Je_k to
-e_k.  The orientation is fixed by vol = e1^Je1^e2^Je2^e3^Je3.

Forms are stored by their values on strictly increasing index tuples, in
lexicographic order.  All operations on small-integer inputs (the model
SU(3) forms in particular) are exact: wedge, star and the J actions only
combine coefficients with signs, and the type projections divide by powers
of two, so float64 arithmetic commits no rounding on them.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from math import comb

import numpy as np

DIM = 6

# J0 on basis vectors: e_i -> J0_SIGN[i] * e_{J0_PERM[i]}
J0_PERM = (1, 0, 3, 2, 5, 4)
J0_SIGN = (1, -1, 1, -1, 1, -1)

INDEX_TUPLES = {k: list(combinations(range(DIM), k)) for k in range(DIM + 1)}
INDEX_POS = {k: {t: i for i, t in enumerate(INDEX_TUPLES[k])} for k in range(DIM + 1)}


def j0_apply(v: np.ndarray) -> np.ndarray:
    """Apply the model complex structure J0 to a vector."""
    v = np.asarray(v, dtype=float)
    out = np.empty(DIM)
    for i in range(DIM):
        out[J0_PERM[i]] = J0_SIGN[i] * v[i]
    return out


J0_MATRIX = np.column_stack([j0_apply(e) for e in np.eye(DIM)])


def _merge_sign(a: tuple, b: tuple):
    """Merge two disjoint increasing tuples; return (merged, sign) or None on overlap."""
    if set(a) & set(b):
        return None
    merged = a + b
    inversions = sum(
        1 for i in range(len(merged)) for j in range(i + 1, len(merged)) if merged[i] > merged[j]
    )
    return tuple(sorted(merged)), (-1) ** inversions


def _sort_with_sign(idx: tuple):
    """Sort an index tuple, tracking the permutation sign; None on repeats."""
    if len(set(idx)) != len(idx):
        return None
    inversions = sum(
        1 for i in range(len(idx)) for j in range(i + 1, len(idx)) if idx[i] > idx[j]
    )
    return tuple(sorted(idx)), (-1) ** inversions


class KForm:
    """A degree-k alternating form with coefficients over increasing index tuples."""

    __slots__ = ("degree", "coeffs")

    def __init__(self, degree: int, coeffs=None):
        if not 0 <= degree <= DIM:
            raise ValueError(f"degree must be in 0..{DIM}, got {degree}")
        n = comb(DIM, degree)
        if coeffs is None:
            coeffs = np.zeros(n)
        else:
            coeffs = np.asarray(coeffs, dtype=float).copy()
            if coeffs.shape != (n,):
                raise ValueError(f"degree {degree} needs {n} coefficients, got {coeffs.shape}")
        self.degree = degree
        self.coeffs = coeffs

    @classmethod
    def basis(cls, idx: tuple) -> "KForm":
        """The basis form e^{i1} ^ ... ^ e^{ik} for an increasing tuple."""
        k = len(idx)
        out = cls(k)
        out.coeffs[INDEX_POS[k][tuple(idx)]] = 1.0
        return out

    def __add__(self, other: "KForm") -> "KForm":
        if self.degree != other.degree:
            raise ValueError("cannot add forms of different degree")
        return KForm(self.degree, self.coeffs + other.coeffs)

    def __sub__(self, other: "KForm") -> "KForm":
        if self.degree != other.degree:
            raise ValueError("cannot subtract forms of different degree")
        return KForm(self.degree, self.coeffs - other.coeffs)

    def __mul__(self, s: float) -> "KForm":
        return KForm(self.degree, self.coeffs * s)

    __rmul__ = __mul__

    def __neg__(self) -> "KForm":
        return KForm(self.degree, -self.coeffs)

    def __getitem__(self, idx: tuple) -> float:
        return float(self.coeffs[INDEX_POS[self.degree][tuple(idx)]])

    def norm(self) -> float:
        return float(np.sqrt(np.dot(self.coeffs, self.coeffs)))

    def __repr__(self):
        terms = [
            f"{c:+g}*e{''.join(str(i + 1) for i in t)}"
            for t, c in zip(INDEX_TUPLES[self.degree], self.coeffs)
            if c != 0.0
        ]
        return f"KForm({self.degree}: {' '.join(terms) or '0'})"


def zero(degree: int) -> KForm:
    return KForm(degree)


def wedge(a: KForm, b: KForm) -> KForm:
    """Wedge product, graded anticommutative in the determinant convention."""
    k = a.degree + b.degree
    if k > DIM:
        raise ValueError(f"wedge degree overflow: {a.degree} + {b.degree} > {DIM}")
    out = KForm(k)
    pos = INDEX_POS[k]
    for i, ta in enumerate(INDEX_TUPLES[a.degree]):
        ca = a.coeffs[i]
        if ca == 0.0:
            continue
        for j, tb in enumerate(INDEX_TUPLES[b.degree]):
            cb = b.coeffs[j]
            if cb == 0.0:
                continue
            merged = _merge_sign(ta, tb)
            if merged is None:
                continue
            t, sign = merged
            out.coeffs[pos[t]] += sign * ca * cb
    return out


def inner(a: KForm, b: KForm) -> float:
    """Induced inner product: coefficient sum over the orthonormal index basis."""
    if a.degree != b.degree:
        raise ValueError("inner product needs equal degrees")
    return float(np.dot(a.coeffs, b.coeffs))


def hodge_star(a: KForm) -> KForm:
    """Hodge star for the orientation vol = e1^Je1^e2^Je2^e3^Je3.

    Satisfies a ^ star(b) = inner(a, b) * vol for forms of equal degree.
    """
    k = a.degree
    out = KForm(DIM - k)
    full = set(range(DIM))
    pos = INDEX_POS[DIM - k]
    for i, t in enumerate(INDEX_TUPLES[k]):
        c = a.coeffs[i]
        if c == 0.0:
            continue
        rest = tuple(sorted(full - set(t)))
        seq = t + rest
        inversions = sum(
            1 for x in range(DIM) for y in range(x + 1, DIM) if seq[x] > seq[y]
        )
        out.coeffs[pos[rest]] += ((-1) ** inversions) * c
    return out


def _two_slot_j_value(a: KForm, idx: tuple, slots: tuple) -> float:
    """Evaluate a on basis vectors at idx with J0 inserted in the given slots."""
    new = list(idx)
    sign = 1.0
    for s in slots:
        sign *= J0_SIGN[new[s]]
        new[s] = J0_PERM[new[s]]
    sorted_ = _sort_with_sign(tuple(new))
    if sorted_ is None:
        return 0.0
    t, psign = sorted_
    return sign * psign * a.coeffs[INDEX_POS[a.degree][t]]


def j_action(a: KForm) -> KForm:
    """The J action on 2- and 3-forms.

    Degree 2: (J a)(X, Y) = a(JX, JY), eigenvalues +1 and -1.
    Degree 3: (J a)(X, Y, Z) = a(JX, JY, Z) + a(X, JY, JZ) + a(JX, Y, JZ),
    eigenvalues -3 and +1.
    """
    if a.degree == 2:
        slot_sets = [(0, 1)]
    elif a.degree == 3:
        slot_sets = [(0, 1), (1, 2), (0, 2)]
    else:
        raise ValueError(f"j_action supports degrees 2 and 3, got {a.degree}")
    out = KForm(a.degree)
    for i, idx in enumerate(INDEX_TUPLES[a.degree]):
        out.coeffs[i] = sum(_two_slot_j_value(a, idx, s) for s in slot_sets)
    return out


def j_slot(a: KForm, slot: int) -> KForm:
    """Insert J0 in a single argument slot: a(..., J .,...)."""
    if not 0 <= slot < a.degree:
        raise ValueError("slot out of range")
    out = KForm(a.degree)
    for i, idx in enumerate(INDEX_TUPLES[a.degree]):
        out.coeffs[i] = _two_slot_j_value(a, idx, (slot,))
    return out


def j_all_slots(a: KForm) -> KForm:
    """Insert J0 in every argument slot: a(J ., ..., J .)."""
    out = KForm(a.degree)
    for i, idx in enumerate(INDEX_TUPLES[a.degree]):
        out.coeffs[i] = _two_slot_j_value(a, idx, tuple(range(a.degree)))
    return out


@dataclass(frozen=True)
class TypeSplit2:
    """Splitting of a 2-form into its J-eigenparts (+1 and -1)."""

    part_11: KForm
    part_20: KForm


@dataclass(frozen=True)
class TypeSplit3:
    """Splitting of a 3-form into its J-eigenparts (-3 and +1)."""

    part_30: KForm
    part_21: KForm


def split2(a: KForm) -> TypeSplit2:
    """Eigenprojection of a 2-form: +1 part (dimension 9), -1 part (dimension 6)."""
    ja = j_action(a)
    return TypeSplit2(part_11=0.5 * (a + ja), part_20=0.5 * (a - ja))


def split3(a: KForm) -> TypeSplit3:
    """Eigenprojection of a 3-form: -3 part (dimension 2), +1 part (dimension 18)."""
    ja = j_action(a)
    return TypeSplit3(part_30=0.25 * (a - ja), part_21=0.25 * (3.0 * a + ja))


def evaluate(a: KForm, vectors) -> float:
    """Evaluate the form on a sequence of degree-many vectors."""
    vs = np.asarray(vectors, dtype=float)
    if vs.shape != (a.degree, DIM):
        raise ValueError(f"need {a.degree} vectors of length {DIM}")
    total = 0.0
    for i, idx in enumerate(INDEX_TUPLES[a.degree]):
        c = a.coeffs[i]
        if c == 0.0:
            continue
        total += c * np.linalg.det(vs[:, list(idx)])
    return float(total)


def pullback(a: KForm, m: np.ndarray) -> KForm:
    """Pull back along the linear map with matrix m: (m* a)(v, ...) = a(m v, ...)."""
    m = np.asarray(m, dtype=float)
    k = a.degree
    out = KForm(k)
    if k == 0:
        out.coeffs = a.coeffs.copy()
        return out
    for j, tj in enumerate(INDEX_TUPLES[k]):
        cols = m[:, list(tj)]
        val = 0.0
        for i, ti in enumerate(INDEX_TUPLES[k]):
            c = a.coeffs[i]
            if c == 0.0:
                continue
            val += c * np.linalg.det(cols[list(ti), :])
        out.coeffs[j] = val
    return out


def from_tensor(t: np.ndarray) -> KForm:
    """Build a form from a fully antisymmetric array of values on basis tuples."""
    t = np.asarray(t, dtype=float)
    k = t.ndim
    out = KForm(k)
    for i, idx in enumerate(INDEX_TUPLES[k]):
        out.coeffs[i] = t[idx]
    return out


def vol() -> KForm:
    return KForm.basis((0, 1, 2, 3, 4, 5))


def model_su3_forms():
    """The model SU(3) forms (sigma0, psi_plus0, psi_minus0, vol0).

    sigma0    = e1^Je1 + e2^Je2 + e3^Je3
    psi_plus0 = e1^e2^e3 - Je1^Je2^e3 - e1^Je2^Je3 - Je1^e2^Je3
    psi_minus0= e1^e2^Je3 - Je1^Je2^Je3 + e1^Je2^e3 + Je1^e2^e3
    """
    sigma0 = KForm.basis((0, 1)) + KForm.basis((2, 3)) + KForm.basis((4, 5))
    psi_plus0 = (
        KForm.basis((0, 2, 4))
        - KForm.basis((1, 3, 4))
        - KForm.basis((0, 3, 5))
        - KForm.basis((1, 2, 5))
    )
    psi_minus0 = (
        KForm.basis((0, 2, 5))
        - KForm.basis((1, 3, 5))
        + KForm.basis((0, 3, 4))
        + KForm.basis((1, 2, 4))
    )
    return sigma0, psi_plus0, psi_minus0, vol()
