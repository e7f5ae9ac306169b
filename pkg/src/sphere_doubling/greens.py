"""Green's functions: the round-sphere closed form, the cylinder-adapted
Green's function with its disc correction, and the per-mode kernel of the
oscillatory solver.

The cylinder Green's function centered at latitude s0 is assembled as

    G = G'(r) + w(r, theta) + (kernel correction),

where G'(r) combines Y0 and J0 of argument sqrt(2) sech(s0) r and solves the
constant-coefficient problem with a log r singularity, and w solves the
Dirichlet problem

    (Laplace + 2 sech^2 s) w = 2 (sech^2 s0 - sech^2 s) G'(r)

on the flat disc of radius 1/2, so that the total solves the full equation.
The kernel correction (a combination of the rotationally invariant kernel
solutions) kills the value and s-slope of w at the center, which pins down
the normalization used by the matching equations.

The disc solve diagonalizes in the polar angle: an FFT in theta plus one
tridiagonal radial factorization per mode, with an outer Picard iteration on
the variable part of the potential (contraction ~ 0.09 on this disc), run on
two radial grids and Richardson-extrapolated pointwise through quintic
splines of the Fourier modes.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.interpolate import make_interp_spline

from . import cylgeom as cg
from .errors import DomainError, SolverError

SQRT2 = math.sqrt(2.0)
DISC_RADIUS = 0.5


# ---------------------------------------------------------------------------
# round-sphere Green's function
# ---------------------------------------------------------------------------

def green_sphere(r):
    """G(r) = 1 + cos r (−1 + log(2 sin r/(1+cos r))) on (0, pi)."""
    r = np.asarray(r, dtype=float)
    if np.any((r <= 0) | (r >= np.pi)):
        raise DomainError("sphere Green's function defined on (0, pi)")
    out = 1.0 + np.cos(r) * (-1.0 + np.log(2.0 * np.sin(r) / (1.0 + np.cos(r))))
    return out if out.ndim else float(out)


def green_sphere_deriv(r):
    r = np.asarray(r, dtype=float)
    if np.any((r <= 0) | (r >= np.pi)):
        raise DomainError("sphere Green's function defined on (0, pi)")
    out = (-np.sin(r) * np.log(2.0 * np.sin(r) / (1.0 + np.cos(r)))
           + 1.0 / np.sin(r) + np.sin(r) * np.cos(r) / (1.0 + np.cos(r)))
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# per-mode kernel for (d^2/ds^2 - n^2 + 2 sech^2 s)
# ---------------------------------------------------------------------------

def mode_kernel(n, s, xi):
    """Decaying kernel with unit derivative jump at s = xi (n >= 2)."""
    if n < 2:
        raise DomainError("mode kernel requires n >= 2")
    pref = 1.0 / (2.0 * n * (1.0 - n * n))
    if s <= xi:
        return pref * math.exp(n * (s - xi)) * (n + math.tanh(xi)) * (n - math.tanh(s))
    return pref * math.exp(n * (xi - s)) * (n - math.tanh(xi)) * (n + math.tanh(s))


def mode_kernel_ds(n, s, xi, side="auto"):
    """d/ds of the mode kernel; at s = xi the side must be specified."""
    if n < 2:
        raise DomainError("mode kernel requires n >= 2")
    pref = 1.0 / (2.0 * n * (1.0 - n * n))
    t = math.tanh(s)
    c2 = cg.conformal_factor(s)
    left = s < xi or (s == xi and side == "minus")
    if left:
        return pref * math.exp(n * (s - xi)) * (n + math.tanh(xi)) * (n * (n - t) - c2)
    return pref * math.exp(n * (xi - s)) * (n - math.tanh(xi)) * (-n * (n + t) + c2)


def mode_kernel_array(n, s, xi_grid):
    """Vectorized kernel over a grid of source points at fixed s."""
    xi_grid = np.asarray(xi_grid, dtype=float)
    pref = 1.0 / (2.0 * n * (1.0 - n * n))
    t_s = math.tanh(s)
    t_xi = np.tanh(xi_grid)
    left = s <= xi_grid
    out = np.where(
        left,
        np.exp(np.minimum(n * (s - xi_grid), 0.0)) * (n + t_xi) * (n - t_s),
        np.exp(np.minimum(n * (xi_grid - s), 0.0)) * (n - t_xi) * (n + t_s),
    )
    return pref * out


def mode_kernel_ds_array(n, s, xi_grid):
    """Vectorized d/ds of the kernel (s not equal to any grid point left/right
    handling is per element, with the s-side chosen by the sign of s - xi)."""
    xi_grid = np.asarray(xi_grid, dtype=float)
    pref = 1.0 / (2.0 * n * (1.0 - n * n))
    t_s = math.tanh(s)
    c2 = cg.conformal_factor(s)
    t_xi = np.tanh(xi_grid)
    left = s <= xi_grid
    out = np.where(
        left,
        np.exp(np.minimum(n * (s - xi_grid), 0.0)) * (n + t_xi) * (n * (n - t_s) - c2),
        np.exp(np.minimum(n * (xi_grid - s), 0.0)) * (n - t_xi) * (-n * (n + t_s) + c2),
    )
    return pref * out


# ---------------------------------------------------------------------------
# the disc correction solve
# ---------------------------------------------------------------------------

def _tridiag_factor(n_modes_grid, r, h):
    """Prefactored tridiagonal radial operators for every Fourier mode.

    Row i of the operator (cell-centered grid, parity ghost at the center,
    face-Dirichlet at r = R):  (1/h^2 ± 1/(2 r_i h)) off-diagonals and
    -2/h^2 - n^2/r_i^2 diagonal, modified in the first and last rows.
    """
    n_r = r.size
    lower = np.empty((n_modes_grid.size, n_r))
    diag = np.empty((n_modes_grid.size, n_r))
    upper = np.empty((n_modes_grid.size, n_r))
    inv_h2 = 1.0 / (h * h)
    for j, n in enumerate(n_modes_grid):
        a = inv_h2 - 1.0 / (2.0 * r * h)   # coefficient of w_{i-1}
        c = inv_h2 + 1.0 / (2.0 * r * h)   # coefficient of w_{i+1}
        b = -2.0 * inv_h2 - (n * n) / (r * r)
        # center: ghost w_{-1} = (-1)^n w_0
        b0 = b[0] + ((-1.0) ** n) * a[0]
        # boundary: face value zero -> ghost w_{N} = -w_{N-1}
        bN = b[-1] - c[-1]
        diag[j] = b
        diag[j, 0] = b0
        diag[j, -1] = bN
        lower[j] = a
        upper[j] = c
    return lower, diag, upper


def _thomas_solve(lower, diag, upper, rhs):
    """Vectorized Thomas algorithm across the leading (mode) axis."""
    n = rhs.shape[1]
    cp = np.empty_like(rhs)
    dp = np.empty_like(rhs)
    cp[:, 0] = upper[:, 0] / diag[:, 0]
    dp[:, 0] = rhs[:, 0] / diag[:, 0]
    for i in range(1, n):
        denom = diag[:, i] - lower[:, i] * cp[:, i - 1]
        cp[:, i] = upper[:, i] / denom
        dp[:, i] = (rhs[:, i] - lower[:, i] * dp[:, i - 1]) / denom
    x = np.empty_like(rhs)
    x[:, -1] = dp[:, -1]
    for i in range(n - 2, -1, -1):
        x[:, i] = dp[:, i] - cp[:, i] * x[:, i + 1]
    return x


def _solve_disc(s_center, n_r, n_theta, tol=1e-13, max_iter=60):
    """Solve the Dirichlet problem for w on the radius-1/2 disc; returns the
    (real) Fourier-mode samples W[n, i] with w = W[0] + 2 sum_n W[n] cos(n th)."""
    h = DISC_RADIUS / n_r
    r = (np.arange(n_r) + 0.5) * h
    theta = 2.0 * np.pi * np.arange(n_theta) / n_theta
    s_grid = s_center + np.outer(r, np.cos(theta))           # (n_r, n_theta)
    sech2_c = cg.conformal_factor(s_center)
    g_prime = _g_prime_radial(s_center, r)                   # (n_r,)
    rhs_full = 2.0 * (sech2_c - cg.conformal_factor(s_grid)) * g_prime[:, None]
    pot = 2.0 * cg.conformal_factor(s_grid)                  # variable potential

    modes = np.arange(n_theta // 2 + 1)
    lower, diag, upper = _tridiag_factor(modes, r, h)

    w = np.zeros((n_r, n_theta))
    for it in range(max_iter):
        # Laplace w_new = rhs - pot * w   (mode by mode)
        rhs = rhs_full - pot * w
        rhat = np.fft.rfft(rhs, axis=1, norm="forward").real  # even in theta
        w_modes = _thomas_solve(lower, diag, upper, rhat.T)
        w_new = np.fft.irfft(
            w_modes.T.astype(complex), n=n_theta, axis=1, norm="forward")
        delta = float(np.max(np.abs(w_new - w)))
        w = w_new
        if delta < tol * max(1.0, float(np.max(np.abs(w)))):
            break
    else:
        raise SolverError("disc correction iteration did not converge",
                          history=[delta])
    w_modes = np.fft.rfft(w, axis=1, norm="forward").real
    return r, w_modes.T  # (n_modes, n_r)


def _g_prime_radial(s_center, r):
    """Radial closed-form part: (pi/2) Y0(a r) − (γ + log(sech(s0)/√2)) J0(a r),
    a = sqrt(2) sech(s0); behaves like log r + O(r^2 log r)."""
    a = SQRT2 * cg.sech(s_center)
    r = np.asarray(r, dtype=float)
    const = cg.EULER_GAMMA + math.log(cg.sech(s_center) / SQRT2)
    return 0.5 * np.pi * cg.bessel_y0(a * r) - const * cg.bessel_j0(a * r)


def _g_prime_radial_deriv(s_center, r):
    a = SQRT2 * cg.sech(s_center)
    r = np.asarray(r, dtype=float)
    const = cg.EULER_GAMMA + math.log(cg.sech(s_center) / SQRT2)
    return a * (0.5 * np.pi * cg.bessel_y0_deriv(a * r)
                - const * cg.bessel_j0_deriv(a * r))


class GreensFn:
    """Cylinder Green's function centered at (s_center, 0), valid on the flat
    disc of radius 1/2 around the center.

    Evaluation takes offsets (ds, dtheta) from the center.  The object keeps
    quintic splines of the Richardson-extrapolated correction modes, so
    values, s-derivatives and the operator residual are all cheap.
    """

    def __init__(self, s_center, n_r=192, n_theta=64, n_modes_keep=24):
        self.s_center = float(s_center)
        r_f, modes_f = _solve_disc(self.s_center, n_r, n_theta)
        r_c, modes_c = _solve_disc(self.s_center, n_r // 2, n_theta)
        self.n_modes = min(n_modes_keep, modes_f.shape[0])

        # quintic splines on symmetric extensions (parity (-1)^n), Richardson
        # combination 4/3 fine - 1/3 coarse done pointwise on evaluation
        self._spl_f = self._mode_splines(r_f, modes_f[: self.n_modes])
        self._spl_c = self._mode_splines(r_c, modes_c[: self.n_modes])

        # center data from modes 0 and 1 of the combined solution
        w0 = self._combined(0, 1e-9)
        dw = 2.0 * self._combined_deriv(1, 1e-9)
        A, B = cg.pair_from_data(-w0, -dw, self.s_center)
        self._corr = (A, B)
        self.center_value = w0
        self.center_slope = dw

    @staticmethod
    def _mode_splines(r, modes):
        spl = []
        for n in range(modes.shape[0]):
            sign = -1.0 if n % 2 else 1.0
            rr = np.concatenate((-r[::-1], r))
            vv = np.concatenate((sign * modes[n][::-1], modes[n]))
            spl.append(make_interp_spline(rr, vv, k=5))
        return spl

    def _combined(self, n, r, nu=0):
        return (4.0 * self._spl_f[n](r, nu) - self._spl_c[n](r, nu)) / 3.0

    def _combined_deriv(self, n, r):
        return self._combined(n, r, nu=1)

    # -- the correction field w' --------------------------------------------

    def w_prime(self, ds, dtheta):
        """Correction w' = w + kernel part: vanishes with its s-gradient at
        the center."""
        ds = np.asarray(ds, dtype=float)
        dtheta = np.asarray(dtheta, dtype=float)
        r = np.hypot(ds, dtheta)
        w = self._combined(0, r)
        if self.n_modes > 1:
            with np.errstate(invalid="ignore", divide="ignore"):
                cos_t = np.where(r > 0, ds / np.where(r > 0, r, 1.0), 1.0)
            ct = np.clip(cos_t, -1.0, 1.0)
            tn_prev = np.ones_like(ct)
            tn = ct.copy()
            for n in range(1, self.n_modes):
                w = w + 2.0 * self._combined(n, r) * tn
                tn, tn_prev = 2.0 * ct * tn - tn_prev, tn  # Chebyshev recursion
        A, B = self._corr
        out = w + cg.pair_eval(A, B, self.s_center + ds)
        return out if np.ndim(out) else float(out)

    def w_prime_grad_s(self, ds, dtheta):
        """d/ds of w' at offset (ds, dtheta)."""
        ds = float(ds)
        dtheta = float(dtheta)
        r = math.hypot(ds, dtheta)
        if r == 0.0:
            return 0.0
        ct = ds / r
        st = dtheta / r
        # d/ds = cos(t) d/dr - sin(t)/r d/dt acting on sum 2 W_n(r) cos(n t)
        out = self._combined_deriv(0, r) * ct
        if self.n_modes > 1:
            t = math.atan2(st, ct)
            for n in range(1, self.n_modes):
                Wn = self._combined(n, r)
                dWn = self._combined_deriv(n, r)
                out += 2.0 * (dWn * math.cos(n * t) * ct
                              + Wn * n * math.sin(n * t) * st / r)
        A, B = self._corr
        return float(out + cg.pair_deriv(A, B, self.s_center + ds))

    def w_fields(self, ds, theta):
        """Vectorized correction fields along a fixed-ds profile: returns
        (w', dw'/ds, dw'/drho) at offsets (ds, theta[j]).  Used by the
        localized-singular-part quadratures."""
        theta = np.asarray(theta, dtype=float)
        ds_arr = np.broadcast_to(np.asarray(ds, dtype=float), theta.shape)
        r = np.hypot(ds_arr, theta)
        t = np.arctan2(theta, ds_arr)
        ct, st = np.cos(t), np.sin(t)
        w = self._combined(0, r)
        dw_dr = self._combined(0, r, nu=1)
        dw_dt = np.zeros_like(r)
        for n in range(1, self.n_modes):
            Wn = self._combined(n, r)
            dWn = self._combined(n, r, nu=1)
            cn, sn = np.cos(n * t), np.sin(n * t)
            w = w + 2.0 * Wn * cn
            dw_dr = dw_dr + 2.0 * dWn * cn
            dw_dt = dw_dt - 2.0 * Wn * n * sn
        with np.errstate(divide="ignore", invalid="ignore"):
            inv_r = np.where(r > 0, 1.0 / np.where(r > 0, r, 1.0), 0.0)
        dw_ds = ct * dw_dr - st * inv_r * dw_dt
        A, B = self._corr
        s_abs = self.s_center + ds_arr
        w = w + cg.pair_eval(A, B, s_abs)
        corr_d = cg.pair_deriv(A, B, s_abs)
        dw_ds = dw_ds + corr_d
        dw_dr = dw_dr + ct * corr_d
        return w, dw_ds, dw_dr

    # -- the Green's function itself ------------------------------------------

    def radial_part(self, r):
        return _g_prime_radial(self.s_center, r)

    def radial_part_deriv(self, r):
        return _g_prime_radial_deriv(self.s_center, r)

    def value(self, ds, dtheta):
        r = np.hypot(np.asarray(ds, dtype=float), np.asarray(dtheta, dtype=float))
        out = self.radial_part(r) + self.w_prime(ds, dtheta)
        return out if np.ndim(out) else float(out)

    def grad_s(self, ds, dtheta):
        """d/ds of the Green's function at offset (ds, dtheta) != 0."""
        r = math.hypot(float(ds), float(dtheta))
        if r == 0.0:
            raise DomainError("gradient undefined at the singular center")
        return (self.radial_part_deriv(r) * float(ds) / r
                + self.w_prime_grad_s(ds, dtheta))

    def operator_residual(self, ds, dtheta):
        """(Laplace + 2 sech^2 s) G at the offset, which would vanish exactly
        for the true Green's function; measures the disc-solve error."""
        ds = float(ds)
        dtheta = float(dtheta)
        r = math.hypot(ds, dtheta)
        t = math.atan2(dtheta, ds)
        s = self.s_center + ds
        # closed-form part: (Lap + 2 sech^2 s0) G' = 0, so its residual under
        # the full operator is the potential difference times G'
        res = 2.0 * (cg.conformal_factor(s) - cg.conformal_factor(self.s_center)) \
            * self.radial_part(r)
        # kernel correction solves the full rotationally invariant equation
        # w part: Laplacian through the mode splines
        lap = 0.0
        val = 0.0
        for n in range(self.n_modes):
            W = self._combined(n, r)
            dW = self._combined(n, r, nu=1)
            ddW = self._combined(n, r, nu=2)
            factor = 1.0 if n == 0 else 2.0 * math.cos(n * t)
            lap += (ddW + dW / r - (n * n) * W / (r * r)) * factor
            val += W * factor
        res += lap + 2.0 * cg.conformal_factor(s) * val
        return float(res)


def green_cyl(s_center, n_r=192, n_theta=64):
    """Green's function for the cylinder operator centered at latitude
    s_center (theta fixed to 0 by rotational symmetry of the construction)."""
    return GreensFn(s_center, n_r=n_r, n_theta=n_theta)


def green_diff_at_center(gp: GreensFn, h=2e-3):
    """Value and s-derivative at the center of (G - G_sphere(geodesic dist)),
    whose singularities cancel; Richardson in the probe offset h."""

    def u(ds):
        dg = abs(2.0 * (math.atan(math.exp(gp.s_center + ds))
                        - math.atan(math.exp(gp.s_center))))
        return gp.value(ds, 0.0) - green_sphere(dg)

    def even_odd(hh):
        up, um = u(hh), u(-hh)
        return 0.5 * (up + um), 0.5 * (up - um) / hh

    e1, o1 = even_odd(h)
    e2, o2 = even_odd(0.5 * h)
    return (4.0 * e2 - e1) / 3.0, (4.0 * o2 - o1) / 3.0
