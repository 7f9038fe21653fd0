"""Pointwise exterior algebra and G2-structure algebra on a 7-dimensional
tangent space.

Forms are stored by strictly increasing multi-index in lexicographic order,
so a k-form carries binomial(7, k) components.  Every kernel in this module
accepts arrays with arbitrary leading (batch) axes and a trailing component
axis; the grid modules reuse the same kernels on whole fields.

Index conventions: tensor indices run 0..6 internally, 1..7 in
documentation.  The inner product of k-forms follows the k-tensor
convention (full contraction over all k slots, so |phi|^2 = 42 for the
standard 3-form).
"""

import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations, permutations

import numpy as np

from .errors import DegreeError, NotPositive

DIM = 7

# ---------------------------------------------------------------------------
# multi-index tables
# ---------------------------------------------------------------------------

INC = {k: tuple(combinations(range(DIM), k)) for k in range(DIM + 1)}
POS = {k: {idx: n for n, idx in enumerate(INC[k])} for k in range(DIM + 1)}
NCOMP = {k: len(INC[k]) for k in range(DIM + 1)}  # 1,7,21,35,35,21,7,1


def perm_sign(seq):
    """Sign of the permutation sorting ``seq``; 0 if any index repeats."""
    seq = list(seq)
    if len(set(seq)) != len(seq):
        return 0
    sign = 1
    for i in range(len(seq)):
        for j in range(i + 1, len(seq)):
            if seq[i] > seq[j]:
                sign = -sign
    return sign


def sort_with_sign(seq):
    """Return (sorted tuple, permutation sign); sign 0 on repeats."""
    s = perm_sign(seq)
    return tuple(sorted(seq)), s


@lru_cache(maxsize=None)
def complement_table(k):
    """For each I in INC[k]: (position of complement in INC[7-k], sign(I, Ic)).

    sign(I, Ic) is the sign of the permutation (I, Ic) of (0..6); it equals
    sign(Ic, I) because k(7-k) is even for every k.
    """
    idx = np.empty(NCOMP[k], dtype=np.intp)
    sgn = np.empty(NCOMP[k], dtype=np.float64)
    for n, I in enumerate(INC[k]):
        Ic = tuple(sorted(set(range(DIM)) - set(I)))
        idx[n] = POS[DIM - k][Ic]
        sgn[n] = perm_sign(I + Ic)
    return idx, sgn


@lru_cache(maxsize=None)
def wedge_table(p, q):
    """Sparse term list for the wedge of a p-form with a q-form.

    Returns integer arrays (ia, ib, iout) and float signs such that
    (a ^ b)[iout] += sign * a[ia] * b[ib], plus a scatter matrix used to
    accumulate the per-term products into output components.
    """
    k = p + q
    ia, ib, iout, sg = [], [], [], []
    for n_out, K in enumerate(INC[k]):
        for sub in combinations(range(k), p):
            I = tuple(K[m] for m in sub)
            J = tuple(K[m] for m in range(k) if m not in sub)
            s = perm_sign(I + J)
            ia.append(POS[p][I])
            ib.append(POS[q][J])
            iout.append(n_out)
            sg.append(float(s))
    ia = np.asarray(ia, dtype=np.intp)
    ib = np.asarray(ib, dtype=np.intp)
    iout = np.asarray(iout, dtype=np.intp)
    sg = np.asarray(sg, dtype=np.float64)
    scatter = np.zeros((len(iout), NCOMP[k]))
    scatter[np.arange(len(iout)), iout] = 1.0
    return ia, ib, sg, scatter


@lru_cache(maxsize=None)
def interior_table(k):
    """Term list for v -| a with a of degree k: arrays (m, iin, iout, sign)."""
    ms, iin, iout, sg = [], [], [], []
    for n_out, J in enumerate(INC[k - 1]):
        for m in range(DIM):
            if m in J:
                continue
            I, s = sort_with_sign((m,) + J)
            ms.append(m)
            iin.append(POS[k][I])
            iout.append(n_out)
            sg.append(float(s))
    ms = np.asarray(ms, dtype=np.intp)
    iin = np.asarray(iin, dtype=np.intp)
    iout = np.asarray(iout, dtype=np.intp)
    sg = np.asarray(sg, dtype=np.float64)
    scatter = np.zeros((len(iout), NCOMP[k - 1]))
    scatter[np.arange(len(iout)), iout] = 1.0
    return ms, iin, sg, scatter


@lru_cache(maxsize=None)
def dense_table(k):
    """Scatter data mapping increasing components to the dense 7^k array."""
    flat_idx, src, sg = [], [], []
    for n, I in enumerate(INC[k]):
        for p in permutations(range(k)):
            J = tuple(I[m] for m in p)
            s = perm_sign(p)
            f = 0
            for j in J:
                f = f * DIM + j
            flat_idx.append(f)
            src.append(n)
            sg.append(float(s))
    inc_flat = []
    for I in INC[k]:
        f = 0
        for j in I:
            f = f * DIM + j
        inc_flat.append(f)
    return (np.asarray(flat_idx, dtype=np.intp),
            np.asarray(src, dtype=np.intp),
            np.asarray(sg, dtype=np.float64),
            np.asarray(inc_flat, dtype=np.intp))


@lru_cache(maxsize=None)
def basis_interior_table(k):
    """Gather table for e_m -| a over all m at once: (idx, sign) of shape
    (7, binomial(7, k-1)); idx points into the k-form components, entries
    with m in J are flagged by sign 0 (idx 0)."""
    idx = np.zeros((DIM, NCOMP[k - 1]), dtype=np.intp)
    sgn = np.zeros((DIM, NCOMP[k - 1]))
    for m in range(DIM):
        for n_out, J in enumerate(INC[k - 1]):
            if m in J:
                continue
            I, s = sort_with_sign((m,) + J)
            idx[m, n_out] = POS[k][I]
            sgn[m, n_out] = s
    return idx, sgn


@lru_cache(maxsize=None)
def volume_partition_table():
    """All 210 disjoint (pair, pair, triple) partitions of {0..6} with the
    sign of the concatenated permutation.  Drives the bilinear form of a
    3-form: a 2-form, a 2-form and a 3-form wedge to the volume form."""
    pa, pb, pt, sg = [], [], [], []
    for A in INC[2]:
        rest = tuple(sorted(set(range(DIM)) - set(A)))
        for B in combinations(rest, 2):
            T = tuple(sorted(set(rest) - set(B)))
            pa.append(POS[2][A])
            pb.append(POS[2][B])
            pt.append(POS[3][T])
            sg.append(float(perm_sign(A + B + T)))
    return (np.asarray(pa, dtype=np.intp), np.asarray(pb, dtype=np.intp),
            np.asarray(pt, dtype=np.intp), np.asarray(sg))


# ---------------------------------------------------------------------------
# batched kernels (trailing component axis, arbitrary leading axes)
# ---------------------------------------------------------------------------

def wedge_comps(p, q, a, b):
    """Wedge product on raw component arrays."""
    if p + q > DIM:
        raise DegreeError(f"wedge degree overflow: {p} + {q} > {DIM}")
    if p == 0:
        return a[..., 0, None] * b if b.ndim else a * b
    if q == 0:
        return a * b[..., 0, None]
    ia, ib, sg, scatter = wedge_table(p, q)
    terms = a[..., ia] * b[..., ib] * sg
    return terms @ scatter


def interior_comps(k, v, a):
    """Interior product v -| a on raw component arrays (v has 7 entries)."""
    if k < 1:
        raise DegreeError("interior product requires degree >= 1")
    ms, iin, sg, scatter = interior_table(k)
    terms = v[..., ms] * a[..., iin] * sg
    return terms @ scatter


def form_to_dense(k, a):
    """Expand increasing components into the dense antisymmetric 7^k array."""
    flat_idx, src, sg, _ = dense_table(k)
    out = np.zeros(a.shape[:-1] + (DIM ** k,))
    out[..., flat_idx] = a[..., src] * sg
    return out.reshape(a.shape[:-1] + (DIM,) * k)


def dense_to_form(k, dense):
    """Read increasing components off a dense antisymmetric array."""
    _, _, _, inc_flat = dense_table(k)
    flat = dense.reshape(dense.shape[:-k] + (DIM ** k,))
    return flat[..., inc_flat].copy()


@lru_cache(maxsize=None)
def _compound_gather(k):
    """Flat gather indices (nk, nk, k, k) into a flattened 7x7 matrix for
    assembling all k x k minors at once."""
    rows = np.asarray(INC[k], dtype=np.intp)
    flat = (rows[:, None, :, None] * DIM + rows[None, :, None, :])
    return flat


def compound_matrix(A, k):
    """k-th compound of a batched 7x7 matrix: determinants of k x k minors
    indexed by increasing row/column multi-indices.  Used to move k-form
    indices up or down with g or its inverse.  Only orders up to 3 occur
    (higher-degree stars run through the dual route)."""
    if k == 0:
        return np.ones(A.shape[:-2] + (1, 1))
    if k == 1:
        return A
    flat = _compound_gather(k)
    G = A.reshape(A.shape[:-2] + (DIM * DIM,))[..., flat]
    if k == 2:
        return (G[..., 0, 0] * G[..., 1, 1] - G[..., 0, 1] * G[..., 1, 0])
    if k == 3:
        return (G[..., 0, 0] * (G[..., 1, 1] * G[..., 2, 2]
                                - G[..., 1, 2] * G[..., 2, 1])
                - G[..., 0, 1] * (G[..., 1, 0] * G[..., 2, 2]
                                  - G[..., 1, 2] * G[..., 2, 0])
                + G[..., 0, 2] * (G[..., 1, 0] * G[..., 2, 1]
                                  - G[..., 1, 1] * G[..., 2, 0]))
    out = np.zeros(A.shape[:-2] + (NCOMP[k], NCOMP[k]))
    for p in permutations(range(k)):
        s = perm_sign(p)
        term = G[..., 0, p[0]]
        for m in range(1, k):
            term = term * G[..., m, p[m]]
        out += s * term
    return out


def apply_compound(C, x):
    """Batched matrix action of a compound on component vectors."""
    return np.matmul(C, x[..., None])[..., 0]


def move_indices_dense(k, comps, mat):
    """Act with ``mat`` on every slot of a k-form (k <= 3): raise all
    indices when mat is the inverse metric, lower when it is the metric.
    Runs through the dense representation with one batched matmul per
    slot, which beats materializing the order-k compound matrix."""
    if k == 0:
        return comps.copy()
    if k == 1:
        return np.matmul(mat, comps[..., None])[..., 0]
    d = form_to_dense(k, comps)
    sh = d.shape
    batch = sh[:-k]
    if k == 2:
        d = np.matmul(mat, d)
        d = np.matmul(d, np.swapaxes(mat, -1, -2))
    else:
        d = np.matmul(mat, d.reshape(batch + (DIM, DIM * DIM))).reshape(sh)
        d = np.moveaxis(np.matmul(mat, np.moveaxis(d, -2, -3).reshape(
            batch + (DIM, DIM * DIM))).reshape(sh), -3, -2)
        d = np.matmul(d.reshape(batch + (DIM * DIM, DIM)),
                      np.swapaxes(mat, -1, -2)).reshape(sh)
    return dense_to_form(k, d)


def form_inner_comps(k, a, b, ginv):
    """Tensor inner product of two k-forms (includes the k! multiplicity).
    Degrees above 3 are routed through complements to keep minor
    determinants at order <= 3."""
    if k == 0:
        return a[..., 0] * b[..., 0]
    if k > 3:
        # Jacobi complementary-minor identity: the order-k compound of
        # g^{-1} equals det(g^{-1}) times the signed order-(7-k) compound
        # of g on complements, so the pairing never needs minors above 3.
        idx, sg = complement_table(k)
        kc = DIM - k
        ac = np.zeros(a.shape[:-1] + (NCOMP[kc],))
        bc = np.zeros(b.shape[:-1] + (NCOMP[kc],))
        ac[..., idx] = a * sg
        bc[..., idx] = b * sg
        g = np.linalg.inv(ginv)
        det_ginv = np.linalg.det(ginv)
        fact = float(math.factorial(k))
        inner_c = np.sum(ac * move_indices_dense(kc, bc, g), axis=-1)
        return fact * det_ginv * inner_c
    br = move_indices_dense(k, b, ginv)
    fact = float(math.factorial(k))
    return fact * np.sum(a * br, axis=-1)


def star_comps(k, a, g, ginv, vol, orientation):
    """Hodge star on raw components.

    For k <= 3 the input indices are raised with the k-th compound of
    g^{-1}; for k >= 4 the dual route is used (permute first, lower the
    (7-k)-form indices with the compound of g) so only compounds of order
    <= 3 ever appear.
    """
    signed_vol = vol * orientation
    if k <= 3:
        raised = move_indices_dense(k, a, ginv)
        idx, sg = complement_table(k)
        out = np.zeros(a.shape[:-1] + (NCOMP[DIM - k],))
        out[..., idx] = raised * sg * signed_vol[..., None]
        return out
    kc = DIM - k
    idx, sg = complement_table(k)
    tmp = np.zeros(a.shape[:-1] + (NCOMP[kc],))
    tmp[..., idx] = a * sg / signed_vol[..., None]
    if kc == 0:
        return tmp
    return move_indices_dense(kc, tmp, g)


def bilinear_form_comps(phi3):
    """Volume-form coefficient of (1/6)(e_i -| phi)^(e_j -| phi)^phi.

    Returns a batched symmetric 7x7 array measured against dx^1...dx^7.
    The sum runs over the 210 disjoint (pair, pair, triple) partitions of
    the index set, batched as one matrix product.
    """
    idx, sgn = basis_interior_table(3)
    iphi = phi3[..., idx] * sgn                      # (..., 7, 21)
    pa, pb, pt, sg = volume_partition_table()
    left = iphi[..., pa] * (phi3[..., pt] * sg)[..., None, :]
    right = np.ascontiguousarray(np.swapaxes(iphi[..., pb], -1, -2))
    return np.matmul(left, right) / 6.0


def metric_data_from_phi(phi3):
    """Batched metric data (g, g_inv, det_g, vol, orientation) from a
    positive 3-form.  Raises NotPositive with the first offending flat
    index when the bilinear form is not definite."""
    B = bilinear_form_comps(phi3)
    detB = np.linalg.det(B)
    s0 = np.sign(detB)
    if np.any(s0 == 0.0):
        bad = int(np.argmin(np.abs(detB).reshape(-1)))
        raise NotPositive("bilinear form is singular", point=bad)
    Bt = s0[..., None, None] * B
    try:
        np.linalg.cholesky(Bt)
    except np.linalg.LinAlgError:
        ev = np.linalg.eigvalsh(Bt)[..., 0]
        bad = int(np.argmin(ev.reshape(-1)))
        raise NotPositive("3-form is not positive (bilinear form indefinite)",
                          point=bad)
    detBt = np.abs(detB)
    scale = detBt ** (-1.0 / 9.0)
    g = scale[..., None, None] * Bt
    ginv = np.linalg.inv(g)
    detg = detBt ** (2.0 / 9.0)
    vol = detBt ** (1.0 / 9.0)
    return g, ginv, detg, vol, s0


# ---------------------------------------------------------------------------
# pointwise public types and operations
# ---------------------------------------------------------------------------

class FormK:
    """Antisymmetric k-tensor at a point, stored by increasing multi-index.

    Component access accepts any index tuple and returns the signed value,
    e.g. f[(1, 0, 2)] == -f[(0, 1, 2)].
    """

    __slots__ = ("degree", "comps")

    def __init__(self, degree, comps=None):
        if not 0 <= degree <= DIM:
            raise DegreeError(f"degree must be in 0..{DIM}, got {degree}")
        if comps is None:
            comps = np.zeros(NCOMP[degree])
        comps = np.asarray(comps, dtype=np.float64)
        if comps.shape != (NCOMP[degree],):
            raise ValueError(f"expected {NCOMP[degree]} components for "
                             f"degree {degree}, got shape {comps.shape}")
        object.__setattr__(self, "degree", degree)
        object.__setattr__(self, "comps", comps)
        self.comps.setflags(write=False)

    def __setattr__(self, name, value):
        raise AttributeError("FormK is immutable")

    def __getitem__(self, idx):
        if self.degree == 0:
            return float(self.comps[0])
        if isinstance(idx, int):
            idx = (idx,)
        key, s = sort_with_sign(tuple(idx))
        if s == 0:
            return 0.0
        return s * float(self.comps[POS[self.degree][key]])

    def to_dense(self):
        return form_to_dense(self.degree, self.comps)

    @classmethod
    def from_dense(cls, degree, dense):
        return cls(degree, dense_to_form(degree, np.asarray(dense, dtype=np.float64)))

    def __add__(self, other):
        self._check(other)
        return FormK(self.degree, self.comps + other.comps)

    def __sub__(self, other):
        self._check(other)
        return FormK(self.degree, self.comps - other.comps)

    def __mul__(self, c):
        return FormK(self.degree, self.comps * float(c))

    __rmul__ = __mul__

    def _check(self, other):
        if self.degree != other.degree:
            raise DegreeError("degree mismatch")

    def __repr__(self):
        return f"FormK(degree={self.degree})"


@dataclass(frozen=True)
class MetricPoint:
    """Metric data induced by a positive 3-form at a point.

    ``orientation`` is +1 when the induced volume form is positively
    oriented against dx^1...dx^7 and -1 otherwise; vol_coeff stays
    positive either way.
    """
    g: np.ndarray
    g_inv: np.ndarray
    det_g: float
    vol_coeff: float
    orientation: float = 1.0


@dataclass(frozen=True)
class Decomposition2:
    """Splitting of a 2-form into the 7- and 14-dimensional types."""
    pi7: FormK
    pi14: FormK


@dataclass(frozen=True)
class Decomposition3:
    """Splitting of a 3-form into the 1-, 7- and 27-dimensional types."""
    pi1: FormK
    pi7: FormK
    pi27: FormK


def standard_phi():
    """The flat-model positive 3-form: e123 + e145 + e167 + e246 - e257
    - e347 - e356."""
    comps = np.zeros(NCOMP[3])
    for I, s in (((0, 1, 2), 1), ((0, 3, 4), 1), ((0, 5, 6), 1),
                 ((1, 3, 5), 1), ((1, 4, 6), -1), ((2, 3, 6), -1),
                 ((2, 4, 5), -1)):
        comps[POS[3][I]] = s
    return FormK(3, comps)


def standard_psi():
    """Hodge dual of the standard 3-form in the flat metric."""
    phi = standard_phi()
    m = metric_from_phi(phi)
    return hodge_star(phi, m)


def wedge(a, b):
    """Exterior product of two forms at a point."""
    return FormK(a.degree + b.degree,
                 wedge_comps(a.degree, b.degree, a.comps, b.comps))


def interior(v, a):
    """Interior product v -| a; contracts v into the first slot of a."""
    v = np.asarray(v, dtype=np.float64)
    return FormK(a.degree - 1, interior_comps(a.degree, v, a.comps))


def bilinear_form_B(phi):
    """Symmetric 7x7 coefficient array of the volume-valued bilinear form
    of a 3-form.  For the standard 3-form this is the identity matrix."""
    return bilinear_form_comps(phi.comps)


def metric_from_phi(phi):
    """Metric, inverse, determinant, volume coefficient and orientation
    induced by a positive 3-form.  Raises NotPositive otherwise."""
    g, ginv, detg, vol, orient = metric_data_from_phi(phi.comps[None, :])
    return MetricPoint(g=g[0], g_inv=ginv[0], det_g=float(detg[0]),
                       vol_coeff=float(vol[0]), orientation=float(orient[0]))


def hodge_star(a, m):
    """Hodge star of a form with respect to a MetricPoint."""
    out = star_comps(a.degree, a.comps[None, :], m.g[None, ...],
                     m.g_inv[None, ...], np.asarray([m.vol_coeff]),
                     np.asarray([m.orientation]))
    return FormK(DIM - a.degree, out[0])


def form_inner(a, b, m):
    """Tensor inner product of two k-forms (full index contraction)."""
    if a.degree != b.degree:
        raise DegreeError("degree mismatch in inner product")
    return float(form_inner_comps(a.degree, a.comps[None, :],
                                  b.comps[None, :], m.g_inv[None, ...])[0])


def decompose_2form(beta, phi, psi, m):
    """Type components of a 2-form: pi7 = (beta + *(phi^beta))/3 and
    pi14 = (2 beta - *(phi^beta))/3."""
    w = hodge_star(wedge(phi, beta), m)
    pi7 = FormK(2, (beta.comps + w.comps) / 3.0)
    pi14 = FormK(2, (2.0 * beta.comps - w.comps) / 3.0)
    return Decomposition2(pi7=pi7, pi14=pi14)


def decompose_3form(eta, phi, psi, m):
    """Type components of a 3-form via orthogonal projection.

    The 1-part is the projection onto the span of phi; the 7-part is
    X -| psi with X recovered through the 24 g(X, Y) contraction identity;
    the 27-part is the remainder.
    """
    n_phi = form_inner(phi, phi, m)
    pi1 = FormK(3, (form_inner(eta, phi, m) / n_phi) * phi.comps)
    idx, sgn = basis_interior_table(4)
    ipsi = psi.comps[idx] * sgn                       # (7, 35) rows e_a -| psi
    M = np.array([form_inner_comps(3, eta.comps[None, :], ipsi[a][None, :],
                                   m.g_inv[None, ...])[0] for a in range(DIM)])
    X = m.g_inv @ M / 24.0
    pi7 = interior(X, psi)
    pi27 = FormK(3, eta.comps - pi1.comps - pi7.comps)
    return Decomposition3(pi1=pi1, pi7=pi7, pi27=pi27)


def contraction_residuals(phi):
    """Max-norm residuals of the four contraction identities tying a
    positive 3-form, its dual 4-form and the induced metric:

      phi_ijk phi_abc g^kc           = g_ia g_jb - g_ib g_ja + psi_ijab
      phi_ijk phi_abc g^jb g^kc      = 6 g_ia
      psi_ijkl psi_abcd g^jb g^kc g^ld = 24 g_ia
      phi_ijq psi_abkl g^ia g^jb     = 4 phi_qkl

    Returns a dict with keys 'phiphi_psi', 'phiphi_6g', 'psipsi_24g',
    'phipsi_4phi'.
    """
    m = metric_from_phi(phi)
    psi = hodge_star(phi, m)
    P = phi.to_dense()
    Q = psi.to_dense()
    gi = m.g_inv
    g = m.g
    lhs1 = np.einsum('ijk,abc,kc->ijab', P, P, gi, optimize=True)
    rhs1 = (np.einsum('ia,jb->ijab', g, g)
            - np.einsum('ib,ja->ijab', g, g) + Q)
    lhs2 = np.einsum('ijk,abc,jb,kc->ia', P, P, gi, gi, optimize=True)
    lhs3 = np.einsum('ijkl,abcd,jb,kc,ld->ia', Q, Q, gi, gi, gi,
                     optimize=True)
    lhs4 = np.einsum('ijq,abkl,ia,jb->qkl', P, Q, gi, gi, optimize=True)
    return {
        'phiphi_psi': float(np.max(np.abs(lhs1 - rhs1))),
        'phiphi_6g': float(np.max(np.abs(lhs2 - 6.0 * g))),
        'psipsi_24g': float(np.max(np.abs(lhs3 - 24.0 * g))),
        'phipsi_4phi': float(np.max(np.abs(lhs4 - 4.0 * P))),
    }


def verify_contraction_identities(phi):
    """Residual report for the four contraction identities (see
    contraction_residuals); kept as the operation-level entry point."""
    return contraction_residuals(phi)


def pullback_3form(u, phi):
    """Pullback of a 3-form by the linear map u: (u* phi)_abc =
    u^i_a u^j_b u^k_c phi_ijk."""
    P = phi.to_dense()
    out = np.einsum('ia,jb,kc,ijk->abc', u, u, u, P, optimize=True)
    return FormK.from_dense(3, out)
