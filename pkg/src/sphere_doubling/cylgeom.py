"""Flat-cylinder geometry and the special functions everything else consumes.

The round sphere minus its poles is conformal to the flat cylinder
``R x S^1`` with coordinates ``(s, theta)``: the latitude x and the cylinder
coordinate s are linked by ``sin x = tanh s``, and the round metric is
``sech^2(s) (ds^2 + dtheta^2)``.  The linearized operator on rotationally
invariant functions reduces to the ODE

    u'' + 2 sech^2(s) u = 0,

whose solution space is spanned by ``phi_even(s) = 1 - s tanh s`` and
``phi_odd(s) = tanh s`` (Wronskian identically 1).  This module provides
those solutions, the coordinate maps, a concrete smooth cutoff, and series
evaluations of the Bessel functions J0 / Y0 needed by the cylinder Green's
function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import DomainError

EULER_GAMMA = 0.5772156649015328606

#: positive root of phi_even, i.e. the unique s > 0 with s*tanh(s) = 1
S_ROOT = brentq(lambda s: 1.0 - s * math.tanh(s), 1.0, 1.5, xtol=1e-15, rtol=8.9e-16)


# ---------------------------------------------------------------------------
# coordinates and conformal factor
# ---------------------------------------------------------------------------

def s_from_x(x):
    """Cylinder coordinate of latitude x, via sin x = tanh s; equals
    log((1 + sin x)/cos x), computed as asinh(tan x) which avoids the
    cancellation in 1 + sin x near the south pole."""
    x = np.asarray(x, dtype=float)
    if np.any(np.abs(x) >= np.pi / 2):
        raise DomainError("latitude must satisfy |x| < pi/2")
    out = np.arcsinh(np.tan(x))
    return out if out.ndim else float(out)


def x_from_s(s):
    """Latitude of cylinder coordinate s: x = arcsin(tanh s), computed as
    arctan(sinh s) which stays fully accurate near the poles."""
    s = np.asarray(s, dtype=float)
    safe = np.clip(s, -700.0, 700.0)
    out = np.arctan(np.sinh(safe))
    return out if out.ndim else float(out)


def conformal_factor(s):
    """sech^2(s), the conformal factor of the round metric over the flat one."""
    s = np.asarray(s, dtype=float)
    out = 1.0 / np.cosh(np.clip(s, -350.0, 350.0)) ** 2
    return out if out.ndim else float(out)


def sech(s):
    s = np.asarray(s, dtype=float)
    out = 1.0 / np.cosh(np.clip(s, -700.0, 700.0))
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class CylPoint:
    """A point on the cylinder; theta stored reduced to [0, 2*pi)."""

    s: float
    theta: float

    def __post_init__(self):
        if not math.isfinite(self.s):
            raise DomainError("s must be finite")
        object.__setattr__(self, "theta", float(self.theta) % (2.0 * math.pi))

    def chi_dist(self, other: "CylPoint") -> float:
        """Flat distance on the cylinder (shorter way around in theta)."""
        dth = abs(self.theta - other.theta) % (2.0 * math.pi)
        dth = min(dth, 2.0 * math.pi - dth)
        return math.hypot(self.s - other.s, dth)


# ---------------------------------------------------------------------------
# rotationally invariant solutions of u'' + 2 sech^2 u = 0
# ---------------------------------------------------------------------------

def phi_even(s):
    """(value, d/ds) of 1 - s tanh s."""
    s = np.asarray(s, dtype=float)
    t = np.tanh(s)
    c2 = conformal_factor(s)
    v = 1.0 - s * t
    dv = -t - s * c2
    if v.ndim:
        return v, dv
    return float(v), float(dv)


def phi_odd(s):
    """(value, d/ds) of tanh s."""
    s = np.asarray(s, dtype=float)
    v = np.tanh(s)
    dv = conformal_factor(s)
    if v.ndim:
        return v, dv
    return float(v), float(dv)


def pair_eval(A, B, s):
    """Value of A*phi_even + B*phi_odd at s."""
    ev, _ = phi_even(s)
    ov, _ = phi_odd(s)
    return A * ev + B * ov


def pair_deriv(A, B, s):
    """d/ds of A*phi_even + B*phi_odd at s."""
    _, ed = phi_even(s)
    _, od = phi_odd(s)
    return A * ed + B * od


def pair_from_data(value, slope, s_center):
    """Coefficients (A, B) of the kernel solution with u(s_center) = value,
    u'(s_center) = slope.  Uses the unit Wronskian, so no linear solve."""
    ev, ed = phi_even(s_center)
    ov, od = phi_odd(s_center)
    A = value * od - slope * ov
    B = slope * ev - value * ed
    return A, B


# ---------------------------------------------------------------------------
# cutoffs
# ---------------------------------------------------------------------------

def _bump(x):
    x = np.asarray(x, dtype=float)
    safe = np.where(x > 0, x, 1.0)
    return np.where(x > 0, np.exp(-1.0 / safe), 0.0)


def cutoff(t):
    """Smooth nondecreasing step: 0 on (-inf,-1], 1 on [1,inf), with
    cutoff(t) + cutoff(-t) = 1 exactly."""
    t = np.asarray(t, dtype=float)
    a = _bump(t + 1.0)
    b = _bump(1.0 - t)
    with np.errstate(invalid="ignore"):
        out = np.where(t <= -1.0, 0.0, np.where(t >= 1.0, 1.0, a / (a + b)))
    return out if out.ndim else float(out)


def psi_cut(a, b, t):
    """Transition 0 near a -> 1 near b; constant outside the middle third.

    Composition of `cutoff` with the affine map sending a -> -3, b -> 3, so
    the transition is confined to the middle third of [a, b].
    """
    if a == b:
        raise DomainError("cutoff endpoints must differ")
    return cutoff((np.asarray(t, dtype=float) - 0.5 * (a + b)) * (6.0 / (b - a)))


def blend(a, b, d, f0, f1):
    """psi_cut[b,a](d) * f0 + psi_cut[a,b](d) * f1: equals f0 where d is in
    the first third of [a,b] (measured from a), f1 in the last third; linear
    in (f0, f1)."""
    w1 = psi_cut(a, b, d)
    return (1.0 - w1) * f0 + w1 * f1


@dataclass(frozen=True)
class CutoffSpec:
    a: float
    b: float

    def __post_init__(self):
        if self.a == self.b:
            raise DomainError("cutoff endpoints must differ")

    def __call__(self, t):
        return psi_cut(self.a, self.b, t)


# ---------------------------------------------------------------------------
# Bessel J0 / Y0 by direct power series (arguments stay below ~12)
# ---------------------------------------------------------------------------

def bessel_j0(x):
    """J0 by its power series, summed until terms fall below 1e-17 relative."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise DomainError("J0 series evaluated for x >= 0 only")
    q = 0.25 * x * x
    term = np.ones_like(q)
    total = np.ones_like(q)
    for j in range(1, 200):
        term = term * (-q) / (j * j)
        total = total + term
        if np.all(np.abs(term) <= 1e-17 * (np.abs(total) + 1e-300)):
            break
    return total if total.ndim else float(total)


def bessel_y0(x):
    """Y0 by the log + power series companion to J0 (x > 0)."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise DomainError("Y0 requires x > 0")
    q = 0.25 * x * x
    term = np.ones_like(q)
    harmonic = 0.0
    total = np.zeros_like(q)
    for j in range(1, 200):
        term = term * (-q) / (j * j)
        harmonic += 1.0 / j
        contrib = -term * harmonic  # (-1)^(j+1) * H_j * q^j / (j!)^2
        total = total + contrib
        if np.all(np.abs(contrib) <= 1e-17 * (np.abs(total) + 1e-300)):
            break
    j0 = bessel_j0(x)
    out = (2.0 / np.pi) * ((np.log(0.5 * x) + EULER_GAMMA) * j0 + total)
    return out if out.ndim else float(out)


def bessel_j0_deriv(x):
    """d/dx J0(x) = -J1(x), by the series for J1."""
    x = np.asarray(x, dtype=float)
    q = 0.25 * x * x
    term = np.full_like(q, 0.5)
    total = np.full_like(q, 0.5)
    for j in range(1, 200):
        term = term * (-q) / (j * (j + 1.0))
        total = total + term
        if np.all(np.abs(term) <= 1e-17 * (np.abs(total) + 1e-300)):
            break
    out = -x * total
    return out if out.ndim else float(out)


def bessel_y0_deriv(x):
    """d/dx Y0(x), differentiating the series representation."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise DomainError("Y0' requires x > 0")
    q = 0.25 * x * x
    # d/dx of sum (-1)^(j+1) H_j q^j/(j!)^2 = sum (-1)^(j+1) H_j j q^(j-1)/(j!)^2 * x/2
    term = np.ones_like(q)
    harmonic = 0.0
    total = np.zeros_like(q)
    for j in range(1, 200):
        harmonic += 1.0 / j
        contrib = term * harmonic * j / (j * j)  # H_j * q^(j-1) j / (j!)^2 via running term
        total = total + (-1.0) ** (j + 1) * contrib
        term = term * q / (j * j)
        if j > 3 and np.all(np.abs(contrib) <= 1e-17 * (np.abs(total) + 1e-300)):
            break
    j0 = bessel_j0(x)
    dj0 = bessel_j0_deriv(x)
    out = (2.0 / np.pi) * (j0 / x + (np.log(0.5 * x) + EULER_GAMMA) * dj0 + 0.5 * x * total)
    return out if out.ndim else float(out)
