"""Singular solutions with prescribed logarithmic coefficients on the orbit
lattice, and their decomposition into a singular part, a rotationally
invariant part, and a small remainder.

Given a rotationally invariant solution phi-hat with k jump latitudes and a
meridian count m, the normalized singular solution has logarithm
coefficients tau'_i with tau' = 1 at the normalization site, fixed by
vertical balancing m tau'_i = phi(s_i) F_i.  The solution splits as

    Phi = Ghat + Phihat + Phi',

where Ghat localizes tau'_i G_{p_i} minus a kernel correction near each
lattice point, Phihat is rotationally invariant, and Phi' is the remainder.
The average of Phi' has a closed form; the oscillatory part solves, mode by
mode in theta (modes n = m q only, by symmetry),

    u_n'' + (2 sech^2 s - n^2) u_n = S_n,
    S = -(Laplace + 2 sech^2 s)(Ghat + Phihat),

which is evaluated both by quadrature against the decaying kernel (the
production definition of the mode data) and by the exact subtraction formula

    u_n(s) = 2 m tau'_i [K_n(s, s_i) + K_n(s, -s_i)] - Ghat_n(s),

the two being equal by integrating the kernel identity by parts.  At the
lattice points everything collapses further: subtracting the periodized
logarithm log|2 sinh(m z / 2)| (whose theta-modes are known exactly) from
both the point-source sum and Ghat leaves rapidly convergent closed sums for
Phi'(p_i) and its s-derivative, because the Green's-function correction
vanishes to first order at its center.  Those closed forms are what the
matching equations consume; no disc solve is needed on that path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BarycentricInterpolator

from . import cylgeom as cg
from .errors import ConfigurationError
from .greens import GreensFn, green_cyl, mode_kernel, mode_kernel_ds, \
    mode_kernel_array
from .rld import RldSolution

MODE_CAP = 64           # default mode cutoff (n = m q, q <= MODE_CAP)
MODE_SUP_TOL = 1e-12    # stop adding modes once their sup falls below this

_GL24 = np.polynomial.legendre.leggauss(24)
_GL32 = np.polynomial.legendre.leggauss(32)
_GL48 = np.polynomial.legendre.leggauss(48)
_GL96 = np.polynomial.legendre.leggauss(96)


def _delta(m):
    return 1.0 / (9.0 * m)


# ---------------------------------------------------------------------------
# gates
# ---------------------------------------------------------------------------

def check_gates(rld_sol: RldSolution, m: int):
    """Meridian-count gates: largeness and disjointness of the annuli."""
    k = rld_sol.k
    if m < max(64, 16 * k):
        raise ConfigurationError(f"m = {m} below the largeness gate for k = {k}")
    s = rld_sol.jumps
    gaps = list(np.diff(s))
    if rld_sol.equatorial:
        gaps.append(float(s[0]))          # equator circle to first latitude
    else:
        gaps.append(2.0 * float(s[0]))    # first latitude to its mirror
    if min(gaps) <= 9.0 / m:
        raise ConfigurationError(
            f"jump-latitude spacing {min(gaps):.4g} too small for m = {m}")


# ---------------------------------------------------------------------------
# the normalized singular solution
# ---------------------------------------------------------------------------

@dataclass
class LdSolution:
    """Normalized singular-solution data over an RldSolution at meridian
    count m.  tau_primes are indexed like the flux table (equator first for
    the equatorial variants)."""

    rld: RldSolution
    m: int
    scale_c: float
    tau_primes: np.ndarray
    tau_prime_pol: float | None = None
    mode_data: dict | None = field(default=None, repr=False)

    @property
    def delta(self):
        return _delta(self.m)

    def phi(self, s):
        """The rotationally invariant part (the average of the solution)."""
        return self.scale_c * self.rld.value(s)

    def phi_deriv(self, s):
        return self.scale_c * self.rld.deriv(s)

    def site_latitudes(self):
        return self.rld.flux_sites()

    def tau_prime_at_jumps(self):
        return self.tau_primes[1:] if self.rld.equatorial else self.tau_primes


def ld_from_rld(rld_sol: RldSolution, m: int) -> LdSolution:
    """Vertical balancing: tau'_i = phi(s_i) F_i / m with tau' = 1 at the
    normalization site; cross-checked against the ratio formula."""
    check_gates(rld_sol, m)
    sites = rld_sol.flux_sites()
    n = rld_sol.n_flux_sites
    F_tot = np.array([rld_sol.total_flux(i) for i in range(n)])
    vals = rld_sol.value(sites)
    scale_c = m / (vals[0] * F_tot[0])
    tau = scale_c * vals * F_tot / m
    ratio = vals / vals[0] * (F_tot / F_tot[0])
    if np.max(np.abs(tau - ratio)) > 1e-12 * np.max(np.abs(tau)):
        raise ConfigurationError("vertical balancing inconsistency")
    tau_pol = None
    if rld_sol.variant in ("with_poles", "with_equator_and_poles") \
            and rld_sol.pole_coefficient > 0:
        tau_pol = scale_c * rld_sol.pole_coefficient
    return LdSolution(rld=rld_sol, m=m, scale_c=scale_c, tau_primes=tau,
                      tau_prime_pol=tau_pol)


# ---------------------------------------------------------------------------
# rotationally invariant auxiliary pieces
# ---------------------------------------------------------------------------

class _JPiece:
    """Even-kink kernel solution: value 0 at the center latitude, one-sided
    s-slopes +/- (m tau'_i / 2)."""

    def __init__(self, s_center, m, tau_prime):
        slope = 0.5 * m * tau_prime
        self.s_center = s_center
        self.right = cg.pair_from_data(0.0, slope, s_center)
        self.left = cg.pair_from_data(0.0, -slope, s_center)

    def _coeffs(self, s):
        use_r = np.asarray(s) >= self.s_center
        A = np.where(use_r, self.right[0], self.left[0])
        B = np.where(use_r, self.right[1], self.left[1])
        return A, B

    def value(self, s):
        s = np.asarray(s, dtype=float)
        A, B = self._coeffs(s)
        out = cg.pair_eval(A, B, s)
        return out if out.ndim else float(out)

    def deriv(self, s):
        s = np.asarray(s, dtype=float)
        A, B = self._coeffs(s)
        out = cg.pair_deriv(A, B, s)
        return out if out.ndim else float(out)


def _phibar_piece(ld: LdSolution, i_site: int):
    """Coefficients of the smooth local model (value phi(s_i), mean slope)."""
    s_i = float(ld.site_latitudes()[i_site])
    val = ld.phi(s_i)
    if s_i == 0.0:
        slope = 0.0
    else:
        idx_right = int(np.searchsorted(ld.rld.jumps, s_i, side="right"))
        idx_left = int(np.searchsorted(ld.rld.jumps, s_i, side="left"))
        dr = ld.scale_c * cg.pair_deriv(*ld.rld.pieces[idx_right], s_i)
        dl = ld.scale_c * cg.pair_deriv(*ld.rld.pieces[idx_left], s_i)
        slope = 0.5 * (dr + dl)
    return cg.pair_from_data(val, slope, s_i)


# ---------------------------------------------------------------------------
# closed-form matching data at the lattice points
# ---------------------------------------------------------------------------

def _mean_kernel_ds(n, xi):
    """Symmetric (mean of one-sided) d/ds of the mode kernel at s = xi."""
    t = math.tanh(xi)
    c2 = cg.conformal_factor(xi)
    return -t * c2 / (2.0 * n * (1.0 - n * n))


def matching_point_data(ld: LdSolution, q_cap=MODE_CAP):
    """Phi'(p_i) and d/ds Phi'(p_i) at every lattice site, in closed form."""
    m = ld.m
    sites = ld.site_latitudes()
    taus = ld.tau_primes
    n_sites = len(sites)
    values = np.zeros(n_sites)
    derivs = np.zeros(n_sites)
    for j in range(n_sites):
        s_j = float(sites[j])
        tau_j = float(taus[j])
        own_double = s_j > 0.0  # own mirror circle at -s_j
        val = tau_j * math.log(1.0 / 9.0)
        der = 0.0
        if own_double:
            x = 2.0 * m * s_j
            val += tau_j * (math.log1p(-math.exp(-x)) if x < 700 else 0.0)
            der += tau_j * 0.5 * m * (1.0 / math.tanh(m * s_j) - 1.0)
        for q in range(1, q_cap + 1):
            n = m * q
            dv = tau_j * (2.0 * m * mode_kernel(n, s_j, s_j) + 1.0 / q)
            dd = tau_j * 2.0 * m * _mean_kernel_ds(n, s_j)
            if own_double:
                e2 = math.exp(-2.0 * n * s_j) if 2.0 * n * s_j < 700 else 0.0
                dv += tau_j * (2.0 * m * mode_kernel(n, s_j, -s_j) + e2 / q)
                dd += tau_j * (2.0 * m * mode_kernel_ds(n, s_j, -s_j) - m * e2)
            for i in range(n_sites):
                if i == j:
                    continue
                s_i = float(sites[i])
                tau_i = float(taus[i])
                dv += 2.0 * m * tau_i * mode_kernel(n, s_j, s_i)
                dd += 2.0 * m * tau_i * mode_kernel_ds(n, s_j, s_i)
                if s_i > 0.0:
                    dv += 2.0 * m * tau_i * mode_kernel(n, s_j, -s_i)
                    dd += 2.0 * m * tau_i * mode_kernel_ds(n, s_j, -s_i)
            val += dv
            der += dd
            if q >= 4 and abs(dv) < 1e-16 * max(1.0, abs(val)) \
                    and abs(dd) < 1e-16 * max(1.0, abs(der)):
                break
        values[j] = val
        derivs[j] = der
    return values, derivs


# ---------------------------------------------------------------------------
# cutoff derivative chain
# ---------------------------------------------------------------------------

def _cutoff_d1(t):
    t = np.clip(np.asarray(t, dtype=float), -1.0 + 1e-14, 1.0 - 1e-14)
    u = 1.0 / (1.0 + t)
    v = 1.0 / (1.0 - t)
    a = np.exp(-u)
    b = np.exp(-v)
    return a * b * (u * u + v * v) / (a + b) ** 2


def _cutoff_d2(t):
    t = np.clip(np.asarray(t, dtype=float), -1.0 + 1e-14, 1.0 - 1e-14)
    u = 1.0 / (1.0 + t)
    v = 1.0 / (1.0 - t)
    a = np.exp(-u)
    b = np.exp(-v)
    da = u * u * a
    db = -v * v * b
    N = da * b - a * db
    dN = a * b * ((u ** 4 - 2.0 * u ** 3) - (v ** 4 - 2.0 * v ** 3))
    D = (a + b) ** 2
    return (dN * D - N * 2.0 * (a + b) * (da + db)) / D ** 2


class _RadialCutoff:
    """psi(rho) = psi_cut[3 delta, 2 delta](rho) with derivatives; the
    transition lives in the middle third of [2 delta, 3 delta]."""

    def __init__(self, delta):
        self.delta = delta
        self.slope = 6.0 / (2.0 * delta - 3.0 * delta)
        self.mid = 2.5 * delta
        self.inner = 2.0 * delta + delta / 3.0
        self.outer = 3.0 * delta - delta / 3.0

    def val(self, rho):
        return cg.cutoff((np.asarray(rho, dtype=float) - self.mid) * self.slope)

    def d1(self, rho):
        t = (np.asarray(rho, dtype=float) - self.mid) * self.slope
        return _cutoff_d1(t) * self.slope

    def d2(self, rho):
        t = (np.asarray(rho, dtype=float) - self.mid) * self.slope
        return _cutoff_d2(t) * self.slope ** 2


# ---------------------------------------------------------------------------
# localized singular part: profiles and integrals
# ---------------------------------------------------------------------------

class _SiteGeometry:
    """Bundles the localized singular part around one lattice site."""

    def __init__(self, ld: LdSolution, i_site: int, gp: GreensFn):
        self.ld = ld
        self.m = ld.m
        self.delta = ld.delta
        self.s_i = float(ld.site_latitudes()[i_site])
        self.tau = float(ld.tau_primes[i_site])
        self.gp = gp
        self.A_log = self.tau * math.log(self.delta)
        self.phibar_A = cg.pair_from_data(self.A_log, 0.0, self.s_i)
        self.psi = _RadialCutoff(self.delta)
        self._source_cache = None

    # -- pointwise fields -----------------------------------------------------

    def f_and_radial(self, ds, theta):
        """(f, df/ds, df/drho) along a fixed-ds theta-profile, where
        f = tau G_p - kernel model; vectorized in theta."""
        theta = np.asarray(theta, dtype=float)
        rho = np.hypot(ds, theta)
        w, dw_ds, dw_dr = self.gp.w_fields(ds, theta)
        gpr = self.gp.radial_part(rho)
        gprd = self.gp.radial_part_deriv(rho)
        with np.errstate(divide="ignore", invalid="ignore"):
            ct = np.where(rho > 0, ds / np.where(rho > 0, rho, 1.0), 1.0)
        s_here = self.s_i + ds
        pa = cg.pair_eval(*self.phibar_A, s_here)
        pad = cg.pair_deriv(*self.phibar_A, s_here)
        f = self.tau * (gpr + w) - pa
        df_ds = self.tau * (gprd * ct + dw_ds) - pad
        df_dr = self.tau * (gprd + dw_dr) - ct * pad
        return f, df_ds, df_dr

    def ghat_profile(self, ds, theta):
        rho = np.hypot(ds, np.asarray(theta, dtype=float))
        f, _, _ = self.f_and_radial(ds, theta)
        return np.where(rho < 3.0 * self.delta, self.psi.val(rho) * f, 0.0)

    def source_profile(self, ds, theta):
        """S = -(Lap + 2 sech^2 s)(Ghat) on a theta-profile (vectorized)."""
        theta = np.asarray(theta, dtype=float)
        rho = np.hypot(ds, theta)
        f, _, df_dr = self.f_and_radial(ds, theta)
        p1 = self.psi.d1(rho)
        p2 = self.psi.d2(rho)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv_rho = np.where(rho > 0, 1.0 / np.where(rho > 0, rho, 1.0), 0.0)
        out = -((p2 + p1 * inv_rho) * f + 2.0 * p1 * df_dr)
        live = (rho > self.psi.inner) & (rho < self.psi.outer)
        return np.where(live, out, 0.0)

    # -- theta integrals of Ghat -----------------------------------------------

    def _theta_panels(self, ds, w3):
        """Panel edges on [0, w3]: geometric refinement toward the log
        singularity, plus splits where the radial cutoff transition seams
        cross the profile."""
        seams = []
        for c in (self.psi.inner, self.psi.mid, self.psi.outer):
            t_sq = c * c - ds * ds
            if t_sq > 0.0:
                t = math.sqrt(t_sq)
                if 1e-14 < t < w3 * (1.0 - 1e-14):
                    seams.append(t)
        first = min(seams) if seams else w3
        eps = max(abs(ds) * 0.5, first / 512.0)
        edges = [0.0]
        e = eps
        while e < first * (1.0 - 1e-12):
            edges.append(e)
            e *= 4.0
        edges.extend(seams)
        edges.append(w3)
        return sorted(set(edges))

    def ghat_integrals(self, ds, n_list, deriv=False):
        """Integral over theta in [0, w3] of Ghat (or its s-derivative)
        against cos(n theta), for each n in n_list."""
        w3sq = (3.0 * self.delta) ** 2 - ds * ds
        if w3sq <= 0.0:
            return np.zeros(len(n_list))
        w3 = math.sqrt(w3sq)
        edges = self._theta_panels(ds, w3)
        gx, gw = _GL32
        nodes, weights = [], []
        for lo, hi in zip(edges[:-1], edges[1:]):
            nodes.append(0.5 * (hi - lo) * gx + 0.5 * (hi + lo))
            weights.append(0.5 * (hi - lo) * gw)
        th = np.concatenate(nodes)
        wq = np.concatenate(weights)
        rho = np.hypot(ds, th)
        if not deriv:
            vals = self.psi.val(rho) * self.f_and_radial(ds, th)[0]
        else:
            f, df_ds, _ = self.f_and_radial(ds, th)
            with np.errstate(divide="ignore", invalid="ignore"):
                ct = np.where(rho > 0, ds / np.where(rho > 0, rho, 1.0), 1.0)
            vals = self.psi.d1(rho) * ct * f + self.psi.val(rho) * df_ds
        vals = np.where(rho < 3.0 * self.delta, vals, 0.0)
        out = np.empty(len(n_list))
        for b, n in enumerate(n_list):
            out[b] = float(np.sum(wq * vals * np.cos(n * th)))
        return out

    def ghat_avg(self, s):
        """theta-average over the full circle of the localized part."""
        return self.m / math.pi * float(self.ghat_integrals(s - self.s_i, [0])[0])

    def ghat_mode(self, n, s, deriv=False):
        return 2.0 * self.m / math.pi * float(
            self.ghat_integrals(s - self.s_i, [n], deriv=deriv)[0])

    # -- source cache for the kernel-quadrature mode solve ----------------------

    def _build_source_cache(self):
        # panels aligned with the support seams of the radial cutoff and the
        # center (kernel kinks get their own split at evaluation time)
        edges = [self.s_i - self.psi.outer, self.s_i - self.psi.inner,
                 self.s_i, self.s_i + self.psi.inner, self.s_i + self.psi.outer]
        gx, gw = _GL48
        tx, tw = _GL96
        panels = []
        for lo, hi in zip(edges[:-1], edges[1:]):
            xi = 0.5 * (hi - lo) * gx + 0.5 * (hi + lo)
            wq = 0.5 * (hi - lo) * gw
            rows = []
            for x in xi:
                ds = x - self.s_i
                lo_sq = self.psi.inner ** 2 - ds * ds
                hi_sq = self.psi.outer ** 2 - ds * ds
                if hi_sq <= 0.0:
                    rows.append(None)
                    continue
                tlo = math.sqrt(lo_sq) if lo_sq > 0.0 else 0.0
                thi = math.sqrt(hi_sq)
                th = 0.5 * (thi - tlo) * tx + 0.5 * (thi + tlo)
                w_th = 0.5 * (thi - tlo) * tw
                rows.append((th, w_th, self.source_profile(ds, th)))
            panels.append({"lo": lo, "hi": hi, "xi": xi, "w": wq,
                           "rows": rows, "proj": {}})
        self._source_cache = panels

    def source_mode_nodes(self, n):
        """Projected source S_n at the cached Gauss nodes, per panel, with a
        barycentric interpolant for in-panel evaluation."""
        if self._source_cache is None:
            self._build_source_cache()
        out = []
        for panel in self._source_cache:
            if n not in panel["proj"]:
                vals = np.zeros(len(panel["xi"]))
                for a, row in enumerate(panel["rows"]):
                    if row is None:
                        continue
                    th, w_th, sv = row
                    vals[a] = 2.0 * self.m / math.pi * float(
                        np.sum(w_th * sv * np.cos(n * th)))
                panel["proj"][n] = (vals,
                                    BarycentricInterpolator(panel["xi"], vals))
            out.append(panel["proj"][n])
        return out

    def source_mode_at(self, n, s):
        """S_n(s) by in-panel barycentric evaluation (0 outside the support)."""
        if self._source_cache is None:
            self._build_source_cache()
        self.source_mode_nodes(n)
        for panel in self._source_cache:
            if panel["lo"] <= s <= panel["hi"]:
                return float(panel["proj"][n][1](s))
        return 0.0


def solve_osc_mode(geo: _SiteGeometry, n, s_eval):
    """Production mode solve: u_n(s) as the integral of the decaying kernel
    against the projected source (both mirror circles), with Gauss panels
    split at the kernel kink; in-panel values of S_n come from barycentric
    interpolation of the cached Gauss samples."""
    proj = geo.source_mode_nodes(n)
    gx, gw = _GL48
    s_eval = np.atleast_1d(np.asarray(s_eval, dtype=float))
    out = np.zeros(s_eval.shape)
    mirror = geo.s_i > 0.0
    for j, s in enumerate(s_eval):
        total = 0.0
        for panel, (vals, interp) in zip(geo._source_cache, proj):
            cuts = [panel["lo"], panel["hi"]]
            if panel["lo"] < s < panel["hi"]:
                cuts = [panel["lo"], float(s), panel["hi"]]
            for lo, hi in zip(cuts[:-1], cuts[1:]):
                xi = 0.5 * (hi - lo) * gx + 0.5 * (hi + lo)
                wq = 0.5 * (hi - lo) * gw
                Sn = interp(xi)
                kern = mode_kernel_array(n, s, xi)
                if mirror:
                    kern = kern + mode_kernel_array(n, s, -xi)
                total += float(np.sum(wq * kern * Sn))
        out[j] = total
    return out if out.size > 1 else float(out[0])


def mode_solution_closed(ld: LdSolution, geo: _SiteGeometry, n, s, deriv=False):
    """Subtraction form of the oscillatory mode: point-source kernels minus
    the projected singular part (exact counterpart of the kernel route)."""
    m = ld.m
    tau = geo.tau
    s_i = geo.s_i
    if not deriv:
        val = 2.0 * m * tau * mode_kernel(n, s, s_i)
        if s_i > 0.0:
            val += 2.0 * m * tau * mode_kernel(n, s, -s_i)
        return val - geo.ghat_mode(n, s)
    val = 2.0 * m * tau * (mode_kernel_ds(n, s, s_i) if s != s_i
                           else _mean_kernel_ds(n, s_i))
    if s_i > 0.0:
        val += 2.0 * m * tau * mode_kernel_ds(n, s, -s_i)
    return val - geo.ghat_mode(n, s, deriv=True)


# ---------------------------------------------------------------------------
# the assembled decomposition
# ---------------------------------------------------------------------------

def _fold_theta(theta, m):
    """Reduce theta to the fundamental half-period [0, pi/m]."""
    period = 2.0 * math.pi / m
    t = float(theta) % period
    return min(t, period - t)


class Decomposition:
    """Field-level evaluators for the three-part splitting, plus the mode
    table.  Construction solves one disc correction per distinct latitude."""

    def __init__(self, ld: LdSolution, q_cap=MODE_CAP, n_r=192, n_theta=64):
        check_gates(ld.rld, ld.m)
        self.ld = ld
        self.m = ld.m
        self.delta = ld.delta
        self.sites = ld.site_latitudes()
        self.greens = [green_cyl(float(s), n_r=n_r, n_theta=n_theta)
                       for s in self.sites]
        self.geos = [_SiteGeometry(ld, i, self.greens[i])
                     for i in range(len(self.sites))]
        self.jpieces = [_JPiece(float(s), ld.m, float(t))
                        for s, t in zip(self.sites, ld.tau_primes)]
        self.phibars = [_phibar_piece(ld, i) for i in range(len(self.sites))]
        self.q_cap = self._choose_q_cap(q_cap)
        self.mode_data = None

    def _choose_q_cap(self, q_cap):
        m = self.m
        for q in range(1, q_cap + 1):
            sup = max(abs(mode_solution_closed(self.ld, geo, m * q, geo.s_i))
                      for geo in self.geos)
            if sup < MODE_SUP_TOL:
                return q
        return q_cap

    # -- rotationally invariant pieces ---------------------------------------

    def phi_hat(self, s):
        s = np.atleast_1d(np.asarray(s, dtype=float))
        out = self.ld.phi(s)
        a = np.abs(s)
        for jp, s_i in zip(self.jpieces, self.sites):
            band = np.abs(a - s_i) < 3.0 / self.m
            if np.any(band):
                w = cg.psi_cut(3.0 / self.m, 2.0 / self.m, np.abs(a[band] - s_i))
                out[band] -= w * jp.value(a[band])
        return out if out.size > 1 else float(out[0])

    def phi_prime_avg(self, s):
        s = np.atleast_1d(np.asarray(s, dtype=float))
        out = np.zeros_like(s)
        a = np.abs(s)
        for geo, jp, s_i in zip(self.geos, self.jpieces, self.sites):
            band = np.abs(a - s_i) < 3.0 / self.m
            if not np.any(band):
                continue
            inner = band & (np.abs(a - s_i) <= 2.0 / self.m)
            ring = band & ~inner
            if np.any(ring):
                w = cg.psi_cut(3.0 / self.m, 2.0 / self.m, np.abs(a[ring] - s_i))
                out[ring] += w * jp.value(a[ring])
            if np.any(inner):
                vals = np.array([geo.ghat_avg(float(x)) for x in a[inner]])
                out[inner] += jp.value(a[inner]) - vals
        return out if out.size > 1 else float(out[0])

    def g_hat_avg(self, s):
        s = float(abs(s))
        return sum(geo.ghat_avg(s) for geo in self.geos
                   if abs(s - geo.s_i) < 3.0 * self.delta)

    # -- singular part ----------------------------------------------------------

    def g_hat(self, s, theta):
        a = abs(float(s))
        th = _fold_theta(theta, self.m)
        total = 0.0
        for geo in self.geos:
            ds = a - geo.s_i
            if abs(ds) < 3.0 * self.delta and math.hypot(ds, th) < 3.0 * self.delta:
                total += float(geo.ghat_profile(ds, np.array([th]))[0])
        return total

    def e_prime(self, s, theta):
        """E' = -(m^-2-scaled operator)(Ghat + Phihat) at (s, theta)."""
        a = abs(float(s))
        th = _fold_theta(theta, self.m)
        total = 0.0
        for geo, jp, s_i in zip(self.geos, self.jpieces, self.sites):
            ds = a - geo.s_i
            if math.hypot(ds, th) < 3.0 * self.delta:
                total += float(geo.source_profile(ds, np.array([th]))[0])
            if 2.0 / self.m < abs(ds) < 3.0 / self.m:
                x = abs(ds)
                slope = 6.0 / (2.0 / self.m - 3.0 / self.m)
                mid = 2.5 / self.m
                t = (x - mid) * slope
                p1 = float(_cutoff_d1(t)) * slope
                p2 = float(_cutoff_d2(t)) * slope * slope
                total -= p2 * jp.value(a) + 2.0 * p1 * jp.deriv(a) * np.sign(ds)
        return total / (self.m * self.m)

    # -- oscillatory part --------------------------------------------------------

    def mode_coefficients(self, s, route="closed"):
        """All mode coefficients u_{mq}(s), q = 1..q_cap, summed over the
        lattice circles; one profile quadrature per circle serves every mode
        on the closed route."""
        a = abs(float(s))
        n_list = [self.m * q for q in range(1, self.q_cap + 1)]
        coefs = np.zeros(len(n_list))
        for geo in self.geos:
            if route == "kernel":
                coefs += np.array([float(solve_osc_mode(geo, n, a))
                                   for n in n_list])
                continue
            point = np.array([
                2.0 * self.m * geo.tau * (
                    mode_kernel(n, a, geo.s_i)
                    + (mode_kernel(n, a, -geo.s_i) if geo.s_i > 0 else 0.0))
                for n in n_list])
            ghat = 2.0 * self.m / math.pi * geo.ghat_integrals(a - geo.s_i,
                                                               n_list)
            coefs += point - ghat
        return coefs

    def phi_prime_osc(self, s, theta, route="closed"):
        """Mode sum of the oscillatory remainder at (s, theta); route is
        'closed' (subtraction form) or 'kernel' (quadrature against the
        decaying kernel, the production mode definition)."""
        coefs = self.mode_coefficients(s, route=route)
        n = self.m * np.arange(1, self.q_cap + 1)
        return float(np.sum(coefs * np.cos(n * float(theta))))

    def phi_prime(self, s, theta):
        return float(self.phi_prime_avg(s)) + self.phi_prime_osc(s, theta)

    def phi_total(self, s, theta):
        return (self.g_hat(s, theta) + float(self.phi_hat(s))
                + self.phi_prime(s, theta))

    # -- mode table ----------------------------------------------------------------

    def sample_modes(self, n_s=17):
        """Sample the kernel-quadrature mode solutions on local grids around
        each latitude; stores and returns the table (grid in s x mode q)."""
        data = {}
        for idx, geo in enumerate(self.geos):
            span = 3.0 * self.delta
            grid = np.linspace(geo.s_i - span, geo.s_i + span, n_s)
            if geo.s_i == 0.0:
                grid = grid[grid >= 0.0]
            rows = {}
            for q in range(1, self.q_cap + 1):
                rows[q] = solve_osc_mode(geo, self.m * q, grid)
            data[idx] = {"s": grid, "modes": rows}
        self.mode_data = data
        self.ld.mode_data = data
        return data


def assemble_decomposition(ld: LdSolution, q_cap=MODE_CAP, n_r=192,
                           n_theta=64) -> Decomposition:
    return Decomposition(ld, q_cap=q_cap, n_r=n_r, n_theta=n_theta)


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------

def decomposition_diagnostics(dec: Decomposition, n_s=16, n_th=8):
    """Sup norms of the remainder, its antisymmetrized part about each
    latitude, and the source, per latitude band.  One batched mode
    evaluation per sampled latitude keeps this cheap."""
    m = dec.m
    modes_n = m * np.arange(1, dec.q_cap + 1)
    ths = np.linspace(0.0, math.pi / m, n_th)
    cos_table = np.cos(np.outer(modes_n, ths))      # (q, n_th)
    out = {"sup_phi_prime": 0.0, "sup_A_phi_prime": 0.0, "sup_e_prime": 0.0,
           "per_site": []}
    for geo in dec.geos:
        s_i = geo.s_i
        span = 3.0 * dec.delta
        ss = np.linspace(s_i - span, s_i + span, n_s)
        sup_p = sup_a = sup_e = 0.0
        for s in ss:
            if s < 0:
                continue
            vals = (float(dec.phi_prime_avg(s))
                    + dec.mode_coefficients(s) @ cos_table)
            sup_p = max(sup_p, float(np.max(np.abs(vals))))
            sup_e = max(sup_e, max(abs(dec.e_prime(s, th)) for th in ths))
            ds = s - s_i
            if ds > 0 and s_i - ds >= 0:
                ref = (float(dec.phi_prime_avg(s_i - ds))
                       + dec.mode_coefficients(s_i - ds) @ cos_table)
                sup_a = max(sup_a, float(np.max(np.abs(vals - ref))))
        out["per_site"].append({"s": s_i, "sup_phi_prime": sup_p,
                                "sup_A_phi_prime": sup_a, "sup_e_prime": sup_e})
        out["sup_phi_prime"] = max(out["sup_phi_prime"], sup_p)
        out["sup_A_phi_prime"] = max(out["sup_A_phi_prime"], sup_a)
        out["sup_e_prime"] = max(out["sup_e_prime"], sup_e)
    return out
