"""Periodic grids over the flat 7-torus and grid-sampled differential forms.

Fields keep the full 7-axis grid shape (inactive axes have a single point),
followed by component axes.  All derivative operators are 4th-order central
differences built from periodic shifts; along distinct axes they commute
exactly, which is what makes the discrete d o d vanish to rounding.
"""

from dataclasses import dataclass, field

import numpy as np

from .algebra import DIM, INC, NCOMP, POS, interior_comps, wedge_comps
from .errors import DegreeError

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class GridSpec:
    """Discretization of the 7-torus.

    shape: points per axis (inactive axes have one point).
    periods: coordinate period per axis.
    active_axes: axes along which fields may vary; must be exactly the axes
    with more than one point.
    """
    shape: tuple
    periods: tuple = (TWO_PI,) * DIM
    active_axes: tuple = field(default=None)

    def __post_init__(self):
        shape = tuple(int(n) for n in self.shape)
        periods = tuple(float(p) for p in self.periods)
        if len(shape) != DIM or len(periods) != DIM:
            raise ValueError("shape and periods must have 7 entries")
        if any(n < 1 for n in shape):
            raise ValueError("axis sizes must be positive")
        if any(p <= 0 for p in periods):
            raise ValueError("periods must be positive")
        derived = tuple(a for a in range(DIM) if shape[a] > 1)
        active = self.active_axes
        if active is None:
            active = derived
        else:
            active = tuple(sorted(int(a) for a in active))
            if active != derived:
                raise ValueError(
                    f"active_axes {active} inconsistent with shape "
                    f"(axes with N>1 are {derived})")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "periods", periods)
        object.__setattr__(self, "active_axes", active)

    @classmethod
    def from_active(cls, n, active_axes, period=TWO_PI):
        """Uniform grid: n points along each listed axis, one elsewhere."""
        shape = [1] * DIM
        for a in active_axes:
            shape[a] = int(n)
        return cls(tuple(shape), (float(period),) * DIM)

    @property
    def spacing(self):
        return tuple(self.periods[a] / self.shape[a] for a in range(DIM))

    @property
    def npoints(self):
        return int(np.prod(self.shape))

    @property
    def cell_volume(self):
        """Coordinate volume per grid cell (product over all 7 periods)."""
        v = 1.0
        for a in range(DIM):
            v *= self.spacing[a] if self.shape[a] > 1 else self.periods[a]
        return v

    def min_active_spacing(self):
        if not self.active_axes:
            return None
        return min(self.spacing[a] for a in self.active_axes)

    def coordinates(self, axis):
        """Sample coordinates along one axis, broadcastable to grid shape."""
        n = self.shape[axis]
        x = np.arange(n) * (self.periods[axis] / n)
        newshape = [1] * DIM
        newshape[axis] = n
        return x.reshape(newshape)

    def zeros(self, trailing=()):
        return np.zeros(self.shape + tuple(trailing))


def partial_derivative(values, spec, axis):
    """4th-order central difference along one axis of a grid-shaped array.

    Component axes trail the 7 grid axes and are untouched.  Inactive axes
    produce an exact zero.
    """
    if spec.shape[axis] == 1:
        return np.zeros_like(values)
    h = spec.spacing[axis]
    f1 = np.roll(values, -1, axis=axis)
    b1 = np.roll(values, 1, axis=axis)
    f2 = np.roll(values, -2, axis=axis)
    b2 = np.roll(values, 2, axis=axis)
    return (8.0 * (f1 - b1) - (f2 - b2)) / (12.0 * h)


def gradient(values, spec):
    """Stack of partials along every axis; shape (*grid, 7, *compshape)."""
    parts = [partial_derivative(values, spec, a) for a in range(DIM)]
    return np.stack(parts, axis=DIM)


class FormField:
    """Grid-sampled k-form: components (canonical increasing order) per point."""

    __slots__ = ("degree", "spec", "values")

    def __init__(self, degree, spec, values):
        if not 0 <= degree <= DIM:
            raise DegreeError(f"degree must be in 0..{DIM}")
        values = np.asarray(values, dtype=np.float64)
        want = spec.shape + (NCOMP[degree],)
        if values.shape != want:
            raise ValueError(f"expected value shape {want}, got {values.shape}")
        self.degree = degree
        self.spec = spec
        self.values = values
        self.values.setflags(write=False)

    @classmethod
    def zero(cls, degree, spec):
        return cls(degree, spec, spec.zeros((NCOMP[degree],)))

    @classmethod
    def constant(cls, form, spec):
        """Broadcast a pointwise FormK over the whole grid."""
        vals = np.broadcast_to(form.comps, spec.shape + form.comps.shape).copy()
        return cls(form.degree, spec, vals)

    def copy(self):
        return FormField(self.degree, self.spec, self.values.copy())

    def __add__(self, other):
        self._check(other)
        return FormField(self.degree, self.spec, self.values + other.values)

    def __sub__(self, other):
        self._check(other)
        return FormField(self.degree, self.spec, self.values - other.values)

    def __mul__(self, c):
        return FormField(self.degree, self.spec, self.values * float(c))

    __rmul__ = __mul__

    def _check(self, other):
        if self.degree != other.degree or self.spec is not other.spec and \
                (self.spec.shape != other.spec.shape or self.spec.periods != other.spec.periods):
            raise DegreeError("incompatible form fields")

    def max_abs(self):
        return float(np.max(np.abs(self.values)))

    def wedge(self, other):
        return FormField(self.degree + other.degree, self.spec,
                         wedge_comps(self.degree, other.degree,
                                     self.values, other.values))

    def interior(self, vec_field):
        """Interior product with a vector field of shape (*grid, 7)."""
        return FormField(self.degree - 1, self.spec,
                         interior_comps(self.degree, vec_field, self.values))


def exterior_derivative(a):
    """Discrete exterior derivative of a FormField.

    (d a)_{i0..ik} = sum_m (-1)^m d_{i_m} a_{i0..^i_m..ik}; built from the
    shared central-difference operator so d(d a) cancels to rounding.
    """
    k = a.degree
    if k >= DIM:
        raise DegreeError("cannot raise degree past 7")
    spec = a.spec
    out = spec.zeros((NCOMP[k + 1],))
    # derivative of every component along every active axis, gathered once
    partials = {ax: partial_derivative(a.values, spec, ax)
                for ax in spec.active_axes}
    for n_out, K in enumerate(INC[k + 1]):
        acc = None
        for m in range(k + 1):
            ax = K[m]
            if ax not in partials:
                continue
            J = K[:m] + K[m + 1:]
            term = partials[ax][..., POS[k][J]]
            if m % 2:
                term = -term
            acc = term if acc is None else acc + term
        if acc is not None:
            out[..., n_out] = acc
    return FormField(k + 1, spec, out)


def integrate_scalar(values, spec, weight=None):
    """Integral of a scalar sample over the torus (sum times cell volume).

    ``weight`` multiplies pointwise (e.g. a volume density).  The reduction
    is a plain fixed-order numpy sum, so results are reproducible bit for
    bit for a fixed configuration.
    """
    w = values if weight is None else values * weight
    return float(np.sum(w)) * spec.cell_volume


def period_integrals(a):
    """Integrals of a 3-form field over every coordinate 3-cycle spanned by
    active-axis-aligned planes, averaged over the transverse positions.

    For a closed field these are the de Rham periods; an exact-form update
    leaves them untouched, so they pin the cohomology class along a flow.
    """
    spec = a.spec
    out = {}
    for n, K in enumerate(INC[3]):
        comp = a.values[..., n]
        cell = 1.0
        for ax in K:
            cell *= spec.spacing[ax] if spec.shape[ax] > 1 else spec.periods[ax]
        # sum over the cycle axes, average over the rest
        total = comp
        for ax in K:
            total = total.sum(axis=ax, keepdims=True)
        out[K] = float(np.mean(total) * cell)
    return out
