"""Time integration of the closed Laplacian flow d phi/dt = d(d* phi).

The integrator is classical four-stage Runge-Kutta.  Every stage derivative
is an exact discrete differential, so closedness and the de Rham class of
the evolving 3-form are preserved to rounding no matter the step size; the
step controller only guards positivity and the parabolic scale.
"""

import binascii
import json
import os
import struct
from dataclasses import dataclass

import numpy as np

from . import algebra as al
from .errors import NotPositive, PositivityLost, SnapshotError, Stalled
from .geometry import (MetricField, attach_torsion, hodge_laplacian_closed,
                       codifferential, hodge_star_field, riemann,
                       tensor_norm2, torsion_from_phi)
from .grid import FormField, GridSpec, exterior_derivative, integrate_scalar

CLOSED_TOL = 1e-12


@dataclass(frozen=True)
class StepPolicy:
    """Step-size control: dt = safety * h_min^2 / (1 + max(|T|^2 + |Rm|)),
    clipped to [dt_floor, max_dt]; positivity failures halve and retry."""
    safety: float = 0.5
    dt_floor: float = 1e-9
    max_dt: float = 1.0
    max_retries: int = 8

    def __post_init__(self):
        if not 0.0 < self.safety <= 1.0:
            raise ValueError("safety must be in (0, 1]")
        if self.dt_floor <= 0 or self.max_dt < self.dt_floor:
            raise ValueError("need 0 < dt_floor <= max_dt")


class FlowState:
    """Flow snapshot: time, the closed 3-form, and lazily derived geometry.

    Derived data (dual 4-form, metric, torsion, curvature) is computed on
    first access and cached; the 3-form array is frozen so caches can never
    go stale.
    """

    def __init__(self, t, phi, step_index=0):
        self.t = float(t)
        self.phi = phi
        self.step_index = int(step_index)
        self._cache = {}

    @property
    def spec(self):
        return self.phi.spec

    def closedness(self):
        if 'closedness' not in self._cache:
            self._cache['closedness'] = exterior_derivative(self.phi).max_abs()
        return self._cache['closedness']

    @property
    def metric(self):
        if 'metric' not in self._cache:
            self._cache['metric'] = MetricField.from_phi(self.phi)
        return self._cache['metric']

    @property
    def psi(self):
        if 'psi' not in self._cache:
            self._cache['psi'] = hodge_star_field(self.phi, self.metric)
        return self._cache['psi']

    @property
    def torsion(self):
        if 'torsion' not in self._cache:
            self._cache['torsion'] = torsion_from_phi(self.phi, self.metric,
                                                      self.psi)
        return self._cache['torsion']

    @property
    def bundle(self):
        """Curvature bundle with the torsion-dependent members attached."""
        if 'bundle' not in self._cache:
            b = riemann(self.metric)
            self._cache['bundle'] = attach_torsion(b, self.torsion)
        return self._cache['bundle']

    def volume(self):
        """Total volume of the induced metric (the functional whose
        gradient flow this is)."""
        if 'volume' not in self._cache:
            self._cache['volume'] = integrate_scalar(self.metric.vol,
                                                     self.spec)
        return self._cache['volume']


def flow_state(phi, t=0.0, step_index=0):
    return FlowState(t, phi, step_index)


def rhs(state):
    """d(d* phi) at a state; exact in the image of d.

    Positivity failure at any point surfaces as PositivityLost carrying the
    state time and the flat index of the first bad point.
    """
    try:
        m = state.metric
    except NotPositive as e:
        raise PositivityLost("3-form left the positive cone",
                             t=state.t, point=e.point) from e
    return hodge_laplacian_closed(state.phi, m, closed_tol=1e-9)


def _rhs_raw(phi):
    """Stage-level derivative on a bare FormField (exceptions bubble as
    NotPositive for the step controller to translate)."""
    m = MetricField.from_phi(phi)
    return exterior_derivative(codifferential(phi, m))


def suggest_dt(state, policy):
    """Parabolic step from the current curvature and torsion scales."""
    h = state.spec.min_active_spacing()
    if h is None:
        return policy.max_dt
    b = state.bundle
    rm_norm = np.sqrt(tensor_norm2(b.Rm, state.metric, 4))
    crowd = float(np.max(b.T_norm2 + rm_norm))
    dt = policy.safety * h * h / (1.0 + crowd)
    return min(dt, policy.max_dt)


def _rk4(phi, dt):
    k1 = _rhs_raw(phi)
    k2 = _rhs_raw(FormField(3, phi.spec, phi.values + 0.5 * dt * k1.values))
    k3 = _rhs_raw(FormField(3, phi.spec, phi.values + 0.5 * dt * k2.values))
    k4 = _rhs_raw(FormField(3, phi.spec, phi.values + dt * k3.values))
    upd = (k1.values + 2.0 * k2.values + 2.0 * k3.values + k4.values) * (dt / 6.0)
    return FormField(3, phi.spec, phi.values + upd)


def step(state, policy=StepPolicy()):
    """Advance one accepted step; returns the new FlowState.

    The step is rejected and halved when any stage leaves the positive
    cone; Stalled is raised if control falls below dt_floor, and
    PositivityLost if the retry budget is exhausted.
    """
    dt = suggest_dt(state, policy)
    if dt < policy.dt_floor:
        raise Stalled(f"suggested dt {dt:.3e} below floor", dt=dt)
    history = []
    last_err = None
    for _ in range(policy.max_retries + 1):
        history.append(dt)
        try:
            phi_new = _rk4(state.phi, dt)
            new = FlowState(state.t + dt, phi_new, state.step_index + 1)
            new.metric  # force the positivity check of the accepted state
            return new
        except NotPositive as e:
            last_err = e
            dt *= 0.5
            if dt < policy.dt_floor:
                raise Stalled("positivity retries drove dt below floor",
                              dt=dt, dt_history=history) from e
    raise PositivityLost("positivity failed after retries", t=state.t,
                         point=getattr(last_err, 'point', None),
                         dt_history=history)


def step_fixed(state, dt):
    """One RK4 step at a prescribed dt (verification trajectories); no
    retry logic, positivity failure raises immediately."""
    try:
        phi_new = _rk4(state.phi, dt)
        new = FlowState(state.t + dt, phi_new, state.step_index + 1)
        new.metric
        return new
    except NotPositive as e:
        raise PositivityLost("positivity lost at fixed dt", t=state.t,
                             point=e.point, dt_history=(dt,)) from e


def metric_evolution_crosscheck(state_prev, state_next):
    """Compare the finite-difference metric velocity between two states
    against -2 S at the averaged midpoint 3-form.

    Returns a dict with the max absolute and relative residuals, the exact
    trace identity tr S = R + |T|^2/3 (algebraic, rounding-level) and the
    discretization-level residual tr S - (2/3) R.
    """
    dt = state_next.t - state_prev.t
    fd = (state_next.metric.g - state_prev.metric.g) / dt
    mid = FlowState(0.5 * (state_prev.t + state_next.t),
                    FormField(3, state_prev.spec,
                              0.5 * (state_prev.phi.values
                                     + state_next.phi.values)))
    b = mid.bundle
    rhs_mid = -2.0 * b.S
    resid = np.max(np.abs(fd - rhs_mid))
    scale = max(float(np.max(np.abs(rhs_mid))), 1e-30)
    m = mid.metric
    trS = np.einsum('...ij,...ij->...', m.ginv, b.S)
    exact_tr = np.max(np.abs(trS - (b.R + b.T_norm2 / 3.0)))
    paper_tr = np.max(np.abs(trS - (2.0 / 3.0) * b.R))
    return {
        'residual_max': float(resid),
        'residual_rel': float(resid / scale),
        'trace_algebraic': float(exact_tr),
        'trace_vs_scalar': float(paper_tr),
    }


# ---------------------------------------------------------------------------
# binary snapshots
# ---------------------------------------------------------------------------

MAGIC = b"G2SNAP01"
SNAP_VERSION = 1


def snapshot(state, path, aux=None):
    """Write a FlowState to a binary snapshot (atomic: temp then rename).

    Layout: magic, version, degree, shape, periods, active-axis mask, t,
    step index, CRC32 of the payload, auxiliary JSON (small run bookkeeping
    scalars), then the component array as little-endian float64.
    """
    spec = state.spec
    aux_bytes = json.dumps(aux or {}, sort_keys=True,
                           separators=(",", ":")).encode()
    payload = np.ascontiguousarray(state.phi.values, dtype='<f8').tobytes()
    mask = 0
    for a in spec.active_axes:
        mask |= 1 << a
    header = struct.pack(
        '<8sII7I7dIdQII', MAGIC, SNAP_VERSION, state.phi.degree,
        *spec.shape, *spec.periods, mask, state.t, state.step_index,
        binascii.crc32(payload), len(aux_bytes))
    tmp = str(path) + ".tmp"
    with open(tmp, 'wb') as f:
        f.write(header)
        f.write(aux_bytes)
        f.write(payload)
    os.replace(tmp, path)


def restore(path, closed_tol=1e-9):
    """Read a snapshot back; returns (FlowState, aux dict).

    Fails loudly (SnapshotError) on a bad magic, unknown version, size or
    CRC mismatch, or a 3-form that is not closed.
    """
    head_fmt = '<8sII7I7dIdQII'
    head_len = struct.calcsize(head_fmt)
    with open(path, 'rb') as f:
        raw = f.read()
    if len(raw) < head_len:
        raise SnapshotError("snapshot truncated inside header")
    fields = struct.unpack(head_fmt, raw[:head_len])
    magic, version, degree = fields[0], fields[1], fields[2]
    if magic != MAGIC:
        raise SnapshotError("bad magic; not a snapshot file")
    if version != SNAP_VERSION:
        raise SnapshotError(f"unsupported snapshot version {version}")
    shape = fields[3:10]
    periods = fields[10:17]
    t = fields[18]
    step_index = fields[19]
    crc = fields[20]
    aux_len = fields[21]
    spec = GridSpec(shape, periods)
    ncomp = al.NCOMP[degree]
    want = spec.npoints * ncomp * 8
    aux_end = head_len + aux_len
    if len(raw) != aux_end + want:
        raise SnapshotError(
            f"snapshot size mismatch: have {len(raw)}, want {aux_end + want}")
    try:
        aux = json.loads(raw[head_len:aux_end].decode())
    except ValueError as e:
        raise SnapshotError("corrupt auxiliary block") from e
    payload = raw[aux_end:]
    if binascii.crc32(payload) != crc:
        raise SnapshotError("payload CRC mismatch")
    values = np.frombuffer(payload, dtype='<f8').astype(np.float64)
    values = values.reshape(spec.shape + (ncomp,))
    phi = FormField(degree, spec, values)
    if degree == 3:
        resid = exterior_derivative(phi).max_abs()
        if resid > closed_tol:
            raise SnapshotError(
                f"restored form is not closed (||d phi|| = {resid:.3e})")
    return FlowState(t, phi, step_index), aux
