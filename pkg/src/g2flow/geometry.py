"""Discrete Riemannian geometry of a G2-structure field on the periodic
grid: induced metric, Levi-Civita connection, curvature, Hodge operators
and the full torsion of a (not necessarily closed) positive 3-form field.

Tensor fields are dense numpy arrays with the 7 grid axes leading and the
tensor slots trailing.  All second derivatives are compositions of the same
first-order covariant derivative, so contraction bookkeeping downstream can
rely on a single consistent discretization.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from . import algebra as al
from .algebra import DIM
from .errors import DegreeError, NotPositive
from .grid import FormField, GridSpec, integrate_scalar, partial_derivative

_SLOT = "ijklmn"  # einsum letters for tensor slots


# ---------------------------------------------------------------------------
# metric field
# ---------------------------------------------------------------------------

class MetricField:
    """Grid-sampled metric with inverse, determinant, volume density and
    orientation, plus a lazily built Christoffel cache."""

    def __init__(self, spec, g, ginv, det_g, vol, orientation):
        self.spec = spec
        self.g = g
        self.ginv = ginv
        self.det_g = det_g
        self.vol = vol
        self.orientation = orientation
        self._christoffel = None
        self._gamma_flat = None

    @classmethod
    def from_phi(cls, phi):
        """Pointwise metric of a positive 3-form field.

        The orientation must be uniform across the grid; a sign change in
        the volume form inside a connected field is a data error.
        """
        g, ginv, detg, vol, orient = al.metric_data_from_phi(phi.values)
        if np.any(orient != orient.flat[0]):
            raise NotPositive("orientation flips across the grid")
        return cls(phi.spec, g, ginv, detg, vol, orient)

    @classmethod
    def flat(cls, spec):
        eye = np.broadcast_to(np.eye(DIM), spec.shape + (DIM, DIM)).copy()
        one = np.ones(spec.shape)
        return cls(spec, eye, eye.copy(), one.copy(), one.copy(), one.copy())

    @property
    def christoffel(self):
        """Gamma^k_ij with index order [k, i, j], from central differences
        of the metric; built on first use and cached."""
        if self._christoffel is None:
            dg = np.stack([partial_derivative(self.g, self.spec, a)
                           for a in range(DIM)], axis=DIM)  # (.., a, i, j)
            A = (np.einsum('...ijl->...lij', dg)
                 + np.einsum('...jil->...lij', dg)
                 - dg)
            sh = A.shape
            flatA = A.reshape(sh[:-3] + (DIM, DIM * DIM))
            self._christoffel = 0.5 * np.matmul(self.ginv, flatA).reshape(sh)
        return self._christoffel

    @property
    def gamma_flat(self):
        """Christoffel symbols reshaped to ((a, i) pairs, p) for the
        batched matrix products in covariant derivatives."""
        if self._gamma_flat is None:
            gam = self.christoffel                       # (.., p, a, i)
            sh = gam.shape
            flat = np.moveaxis(gam, -3, -1)              # (.., a, i, p)
            self._gamma_flat = np.ascontiguousarray(
                flat.reshape(sh[:-3] + (DIM * DIM, DIM)))
        return self._gamma_flat



def christoffel(m):
    """Connection coefficients of a MetricField (operation-level alias)."""
    return m.christoffel


# ---------------------------------------------------------------------------
# covariant calculus on dense tensor fields
# ---------------------------------------------------------------------------

def partial_stack(T, spec):
    """Stack of coordinate partials along every axis, new axis first after
    the grid: shape (*grid, 7, *slots).  Inactive axes contribute exact
    zeros without being computed."""
    out = np.zeros(T.shape[:DIM] + (DIM,) + T.shape[DIM:])
    idx = [slice(None)] * DIM
    for a in spec.active_axes:
        out[tuple(idx) + (a,)] = partial_derivative(T, spec, a)
    return out


def slot_apply(T, mat, rank, slot):
    """Contract ``mat`` (batched 7x7) against one tensor slot:
    out[.., i_slot', ..] = mat[i_slot', p] T[.., p, ..].  Runs as one
    batched matrix product with the slot moved last."""
    nbatch = T.ndim - rank
    moved = np.moveaxis(T, nbatch + slot, -1)
    sh = moved.shape
    flat = moved.reshape(sh[:nbatch] + (-1, DIM))
    res = np.matmul(flat, np.swapaxes(mat, -1, -2))
    return np.moveaxis(res.reshape(sh), -1, nbatch + slot)


def covariant_derivative(T, m, rank):
    """Levi-Civita covariant derivative of a (0, rank)-tensor field.

    Returns a (0, rank+1)-tensor with the derivative slot first:
    out[a, i1..ik] = d_a T - sum_m Gamma^p_{a i_m} T[.. p ..].
    """
    spec = m.spec
    out = partial_stack(T, spec)
    if rank == 0:
        return out
    gf = m.gamma_flat                                    # (.., a*i, p)
    nbatch = T.ndim - rank
    bshape = T.shape[:nbatch]
    for s in range(rank):
        moved = np.moveaxis(T, nbatch + s, -1)           # slot s last
        other = moved.shape[nbatch:-1]
        flat = np.ascontiguousarray(moved).reshape(bshape + (-1, DIM))
        corr = np.matmul(flat, np.swapaxes(gf, -1, -2))  # (.., M, a*i)
        corr = corr.reshape(bshape + other + (DIM, DIM))  # (.., other, a, i)
        corr = np.moveaxis(corr, -2, nbatch)             # a to front
        corr = np.moveaxis(corr, -1, nbatch + 1 + s)     # i back to slot s
        out -= corr
    return out


def second_covariant(T, m, rank):
    """Two nested covariant derivatives; slots (a, b, i1..ik)."""
    return covariant_derivative(covariant_derivative(T, m, rank), m, rank + 1)


def scalar_laplacian(u, m):
    """g^{ab} (d_a d_b u - Gamma^p_ab d_p u) for a scalar field."""
    hess = second_covariant(u, m, 0)
    return np.einsum('...ab,...ab->...', m.ginv, hess, optimize=True)


def tensor_norm2(T, m, rank):
    """Pointwise squared norm of a (0, rank)-tensor: full contraction with
    the inverse metric on every slot."""
    if rank == 0:
        return T * T
    raised = T
    for s in range(rank):
        raised = slot_apply(raised, m.ginv, rank, s)
    axes = tuple(range(-rank, 0))
    return np.sum(T * raised, axis=axes)


def raise_index(T, m, rank, slot):
    """Raise one slot of a (0, rank)-tensor with the inverse metric."""
    return slot_apply(T, m.ginv, rank, slot)


def raise_all(T, m, rank):
    """Raise every slot of a (0, rank)-tensor."""
    out = T
    for s in range(rank):
        out = slot_apply(out, m.ginv, rank, s)
    return out


# ---------------------------------------------------------------------------
# curvature
# ---------------------------------------------------------------------------

@dataclass
class CurvatureBundle:
    """Curvature data of a metric field.

    Rm carries the full algebraic curvature symmetries exactly: the raw
    finite-difference tensor is projected onto the space of algebraic
    curvature tensors, and the size of that projection (an order h^4
    quantity) is kept in ``symmetry_defect`` as a discretization
    diagnostic.  Torsion-dependent members (That, S, T_norm2) are attached
    by ``attach_torsion``.
    """
    m: MetricField
    Rm: np.ndarray
    Ric: np.ndarray
    R: np.ndarray
    E: np.ndarray
    symmetry_defect: float
    W: np.ndarray = None
    W_printed: np.ndarray = None
    That: np.ndarray = None
    S: np.ndarray = None
    T_norm2: np.ndarray = None
    T: np.ndarray = None


def _curvature_project(A):
    """Orthogonal projection onto algebraic curvature tensors: antisymmetry
    in both pairs, pair symmetry, and the first Bianchi identity."""
    A = 0.5 * (A - np.einsum('...ijkl->...jikl', A))
    A = 0.5 * (A - np.einsum('...ijkl->...ijlk', A))
    A = 0.5 * (A + np.einsum('...ijkl->...klij', A))
    b = (A + np.einsum('...ijkl->...jkil', A)
         + np.einsum('...ijkl->...kijl', A)) / 3.0
    return A - b


def riemann(m):
    """Curvature bundle of a metric field.

    Index conventions are pinned by the tests: the Ricci identity holds as
    (nabla_i nabla_j - nabla_j nabla_i) alpha_k = -R_{ijk}^m alpha_m, and
    Ric_jk = g^{il} R_{ijkl}, so the scalar curvature of a closed
    G2-structure comes out nonpositive.
    """
    spec = m.spec
    gam = m.christoffel
    dgam = partial_stack(gam, spec)                 # (.., a, l, i, j)
    # Gamma^l_{ip} Gamma^p_{jk} as one batched matmul over p
    li_p = gam.reshape(gam.shape[:-3] + (49, DIM))
    p_jk = gam.reshape(gam.shape[:-3] + (DIM, 49))
    gg = np.matmul(li_p, p_jk).reshape(gam.shape[:-3] + (DIM,) * 4)  # (l,i,j,k)
    gg = np.einsum('...lijk->...ijkl', gg)
    rup = (np.einsum('...iljk->...ijkl', dgam)
           - np.einsum('...jlik->...ijkl', dgam)
           + gg - np.einsum('...jikl->...ijkl', gg))
    raw = slot_apply(rup, m.g, 4, 3)
    Rm = _curvature_project(raw)
    defect = float(np.max(np.abs(Rm - raw)))
    Ric = np.einsum('...il,...ijkl->...jk', m.ginv, Rm, optimize=True)
    R = np.einsum('...jk,...jk->...', m.ginv, Ric, optimize=True)
    E = Ric - (R[..., None, None] / 7.0) * m.g
    return CurvatureBundle(m=m, Rm=Rm, Ric=Ric, R=R, E=E,
                           symmetry_defect=defect)


def ricci_identity_residual(alpha, m, bundle):
    """Max-norm residual of the commutator identity on a 1-form field:
    (nabla_i nabla_j - nabla_j nabla_i) alpha_k + R_{ijk}^m alpha_m."""
    dd = second_covariant(alpha, m, 1)
    comm = dd - np.einsum('...abk->...bak', dd)
    rup = np.einsum('...ijkl,...lm->...ijkm', bundle.Rm, m.ginv,
                    optimize=True)
    term = np.einsum('...ijkm,...m->...ijk', rup, alpha, optimize=True)
    return float(np.max(np.abs(comm + term)))


# ---------------------------------------------------------------------------
# Hodge star, codifferential, Laplacian on fields
# ---------------------------------------------------------------------------

def hodge_star_field(a, m):
    """Hodge star of a FormField under a MetricField (compound-matrix
    kernels shared with the pointwise implementation)."""
    out = al.star_comps(a.degree, a.values, m.g, m.ginv, m.vol,
                        m.orientation)
    return FormField(DIM - a.degree, a.spec, out)


def codifferential(a, m):
    """d* = (-1)^k  star d star  on a k-form field; the sign makes the
    operator L2-adjoint to d on the periodic grid up to discretization
    error (pinned by the adjointness test)."""
    from .grid import exterior_derivative
    k = a.degree
    if k < 1:
        raise DegreeError("codifferential requires degree >= 1")
    sgn = -1.0 if k % 2 else 1.0
    out = hodge_star_field(exterior_derivative(hodge_star_field(a, m)), m)
    return FormField(k - 1, a.spec, sgn * out.values)


def hodge_laplacian_closed(phi, m, closed_tol=1e-9):
    """d(d* phi) for a closed 3-form field.

    For closed structures this is the full Hodge Laplacian; a warning is
    emitted when the closedness residual exceeds ``closed_tol``.
    """
    from .grid import exterior_derivative
    dphi = exterior_derivative(phi)
    if dphi.max_abs() > closed_tol:
        warnings.warn(f"||d phi|| = {dphi.max_abs():.3e} exceeds "
                      f"{closed_tol:.1e}; result is d d* phi only",
                      stacklevel=2)
    return exterior_derivative(codifferential(phi, m))


def form_inner_field(a, b, m):
    """Pointwise tensor inner product of two k-form fields."""
    return al.form_inner_comps(a.degree, a.values, b.values, m.ginv)


def l2_form_inner(a, b, m):
    """Global L2 pairing of k-form fields in the k!-normalized (form)
    convention, the one in which d and the codifferential are mutually
    adjoint; the k-tensor convention differs by the multiplicity k!."""
    import math
    v = form_inner_field(a, b, m) / float(math.factorial(a.degree))
    return integrate_scalar(v, a.spec, weight=m.vol)


# ---------------------------------------------------------------------------
# torsion of a G2-structure field
# ---------------------------------------------------------------------------

# universal constant: |alpha ^ phi|^2 = _WEDGE7_NORM * |alpha|^2 for 1-forms
# against any compatible (phi, g); evaluated once on the standard model.
_WEDGE7_NORM = None


def _wedge7_norm():
    global _WEDGE7_NORM
    if _WEDGE7_NORM is None:
        phi = al.standard_phi()
        m = al.metric_from_phi(phi)
        e1 = al.FormK(1, np.eye(DIM)[0])
        w = al.wedge(e1, phi)
        _WEDGE7_NORM = al.form_inner(w, w, m)
    return _WEDGE7_NORM


@dataclass
class TorsionField:
    """Full torsion 2-tensor and intrinsic torsion forms of a 3-form field.

    ``T`` is the raw contraction (1/24) nabla_i phi psi^{j...}; for closed
    structures it is skew to discretization error, and ``T_skew`` is its
    exact skew part, which all evolution formulas use.
    """
    spec: GridSpec
    T: np.ndarray
    T_skew: np.ndarray
    T_mixed: np.ndarray
    tau0: np.ndarray
    tau1: FormField
    tau2: FormField
    tau3: FormField
    nabla_phi: np.ndarray


def torsion_norm2(t, m):
    """|T|^2 of the skew part, pointwise."""
    return tensor_norm2(t.T_skew, m, 2)


def torsion_from_phi(phi, m, psi):
    """Full torsion tensor and intrinsic torsion forms.

    The 2-tensor comes from the contraction of nabla phi with the dual
    4-form; the intrinsic forms come from the type decomposition of d phi
    and d psi.  For a closed field only tau2 is populated beyond
    discretization error.
    """
    from .grid import exterior_derivative
    spec = phi.spec
    phid = al.form_to_dense(3, phi.values)
    psid = al.form_to_dense(4, psi.values)
    npsi = raise_all(psid, m, 4)
    nphi = covariant_derivative(phid, m, 3)
    nbatch = nphi.ndim - 4
    bshape = nphi.shape[:nbatch]
    lhs = nphi.reshape(bshape + (DIM, DIM ** 3))
    rhs = npsi.reshape(bshape + (DIM, DIM ** 3))
    T_mixed = np.matmul(lhs, np.swapaxes(rhs, -1, -2)) / 24.0
    T = np.einsum('...ij,...jk->...ik', T_mixed, m.g, optimize=True)
    T_skew = 0.5 * (T - np.einsum('...ij->...ji', T))

    dphi = exterior_derivative(phi)
    dpsi = exterior_derivative(psi)
    # scalar torsion: coefficient of psi in d phi.  <d phi, psi> = 4 <*d
    # phi, phi> and |psi|^2 = 168 exactly for a compatible pair, so the
    # pairing runs through the cheap degree-3 inner product.
    sdphi = hodge_star_field(dphi, m)
    tau0 = form_inner_field(sdphi, phi, m) / 42.0

    # vector torsion: <d phi, dx^a ^ phi> = 3 c tau1^a with the universal
    # c = |alpha ^ phi|^2 / |alpha|^2; the pairing is evaluated through the
    # wedge/interior adjointness to stay on cheap degree-3 inner products
    c = _wedge7_norm()
    idx, sgn = al.basis_interior_table(4)
    w = dphi.values[..., idx] * sgn                      # (.., 7, 35) e_m -| dphi
    phir = al.move_indices_dense(3, phi.values, m.ginv)
    inner_m = 24.0 * np.matmul(w, phir[..., None])[..., 0]
    M = np.einsum('...am,...m->...a', m.ginv, inner_m)   # <dphi, dx^a ^ phi>
    tau1_up = M / (3.0 * c)
    tau1 = FormField(1, spec, np.einsum('...ab,...b->...a', m.g, tau1_up))

    tau1_wedge_phi = tau1.wedge(phi)
    rem = FormField(4, spec,
                    dphi.values - tau0[..., None] * psi.values
                    - 3.0 * tau1_wedge_phi.values)
    tau3 = hodge_star_field(rem, m)

    sdpsi = hodge_star_field(dpsi, m)                    # 2-form
    wstar = hodge_star_field(FormField(5, spec,
                                       al.wedge_comps(3, 2, phi.values,
                                                      sdpsi.values)), m)
    pi14 = (2.0 * sdpsi.values - wstar.values) / 3.0
    tau2 = FormField(2, spec, -pi14)

    return TorsionField(spec=spec, T=T, T_skew=T_skew, T_mixed=T_mixed,
                        tau0=tau0, tau1=tau1, tau2=tau2, tau3=tau3,
                        nabla_phi=nphi)


def attach_torsion(bundle, torsion):
    """Fill the torsion-dependent members of a curvature bundle: the
    squared torsion T_hat, |T|^2 and the flow tensor S = Ric + |T|^2 g / 3
    + 2 T_hat, all built from the exact skew part so S is symmetric to
    rounding."""
    m = bundle.m
    Ts = torsion.T_skew
    T_up = raise_index(Ts, m, 2, 1)                       # T_i^k
    That = np.einsum('...ik,...kj->...ij', T_up, Ts, optimize=True)
    Tn2 = tensor_norm2(Ts, m, 2)
    bundle.That = That
    bundle.T_norm2 = Tn2
    bundle.T = Ts
    bundle.S = bundle.Ric + (Tn2[..., None, None] / 3.0) * m.g + 2.0 * That
    return bundle


# ---------------------------------------------------------------------------
# identity residuals (Section 2 of the underlying theory)
# ---------------------------------------------------------------------------

def nabla_phi_residual(torsion, phi, psi, m):
    """Residual of nabla_i phi_jkl = T_i^m psi_mjkl."""
    psid = al.form_to_dense(4, psi.values)
    pred = np.einsum('...im,...mjkl->...ijkl', torsion.T_mixed, psid,
                     optimize=True)
    return float(np.max(np.abs(torsion.nabla_phi - pred)))


def nabla_psi_residual(phi, psi, torsion, m):
    """Residual of the four-term formula for nabla_m psi_ijkl in terms of
    the torsion and phi."""
    phid = al.form_to_dense(3, phi.values)
    psid = al.form_to_dense(4, psi.values)
    npsi = covariant_derivative(psid, m, 4)
    T = torsion.T
    pred = -(np.einsum('...mi,...jkl->...mijkl', T, phid)
             - np.einsum('...mj,...ikl->...mijkl', T, phid)
             - np.einsum('...mk,...jil->...mijkl', T, phid)
             - np.einsum('...ml,...jki->...mijkl', T, phid))
    return float(np.max(np.abs(npsi - pred)))


def bianchi_type_residual(torsion, bundle, phi, m):
    """Residual of the Bianchi-type identity
    nabla_i T_jk - nabla_j T_ik = -(R_ijmn/2 + T_im T_jn) phi_k^{mn}."""
    phid = al.form_to_dense(3, phi.values)
    phi_up = raise_index(raise_index(phid, m, 3, 1), m, 3, 2)
    T = torsion.T
    nT = covariant_derivative(T, m, 2)
    lhs = nT - np.einsum('...ijk->...jik', nT)
    quad = np.einsum('...im,...jn->...ijmn', T, T)
    rhs = -np.einsum('...ijmn,...kmn->...ijk',
                     0.5 * bundle.Rm + quad, phi_up, optimize=True)
    return float(np.max(np.abs(lhs - rhs)))


def torsion_gradient_residual(torsion, bundle, phi, m):
    """Residual of the six-term closed-structure formula expressing
    nabla_i T_jk through curvature and torsion squares."""
    phid = al.form_to_dense(3, phi.values)
    phi_up = raise_index(raise_index(phid, m, 3, 1), m, 3, 2)
    T = torsion.T
    Rm = bundle.Rm
    nT = covariant_derivative(T, m, 2)
    quad = np.einsum('...am,...bn->...abmn', T, T)
    rhs = (-0.25 * np.einsum('...ijmn,...kmn->...ijk', Rm, phi_up, optimize=True)
           - 0.25 * np.einsum('...kjmn,...imn->...ijk', Rm, phi_up, optimize=True)
           + 0.25 * np.einsum('...ikmn,...jmn->...ijk', Rm, phi_up, optimize=True)
           - 0.5 * np.einsum('...ijmn,...kmn->...ijk', quad, phi_up, optimize=True)
           - 0.5 * np.einsum('...kjmn,...imn->...ijk', quad, phi_up, optimize=True)
           + 0.5 * np.einsum('...ikmn,...jmn->...ijk', quad, phi_up, optimize=True))
    return float(np.max(np.abs(nT - rhs)))


def ricci_from_torsion(torsion, phi, m):
    """Ricci curvature of a closed structure from its torsion:
    R_jk = -(nabla_i T_jm) phi_k^{im} - T_j^i T_ik."""
    phid = al.form_to_dense(3, phi.values)
    phi_up = raise_index(raise_index(phid, m, 3, 1), m, 3, 2)
    T = torsion.T
    nT = covariant_derivative(T, m, 2)
    term1 = -np.einsum('...ijm,...kim->...jk', nT, phi_up, optimize=True)
    T_up = raise_index(T, m, 2, 1)                       # T_j^i
    term2 = -np.einsum('...ja,...ak->...jk', T_up, T, optimize=True)
    return term1 + term2


def divergence_residual(beta, m):
    """Max norm of nabla^i beta_ij for a 2-form field (divergence-free
    check for the Lie-algebra torsion of a closed structure)."""
    nb = covariant_derivative(al.form_to_dense(2, beta.values), m, 2)
    div = np.einsum('...ai,...aij->...j', m.ginv, nb, optimize=True)
    return float(np.max(np.abs(div)))
