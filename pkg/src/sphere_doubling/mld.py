"""The finite-dimensional matching system and its solvers.

An unbalancing parameter vector zeta = (zeta_1, sigma, xi[, zeta_pol]) fixes
a rotationally invariant solution, its normalized singular solution, and the
overall bridge scale

    tau_1 = (1/m) e^{zeta_1} e^{-m / F_1}.

Matching (vanishing of the constant and gradient of the regular part of the
solution at every lattice point, adjusted by tau log(tau/2)) is equivalent
to the system

    0 = (m/F_1)(e^{-sum sigma} - 1) + Phi'(p_i)/tau'_i + mu_i + zeta_1
        + log((9/2) tau'_i) - log sech s_i,
    0 = (1/tau'_i) d_s Phi'(p_i) + (m/2) xi_i + mu'_i + (1/2) tanh s_i,

plus, when the poles carry bridges,

    0 = (F_1/m) mu_pol - 1 + (F_1/m)(zeta_1 + log(tau'_pol/(4m)) + 1)
        + (F_1/m) B_k / tau-tilde.

The system is affine in (mu, mu', mu_pol) with identity coefficient, so one
can either read off mu at given zeta or solve for the zeta that makes all
mu vanish.  The production solver is a damped Newton iteration with a
frozen finite-difference Jacobian on zeta; the parameter fixed-point map
(zeta_1 += mu_1, sigma -= (F_1/m) D mu, xi += (2/m) mu', zeta_pol -=
(F_1/m) mu_pol) is kept as an independent cross-check.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import cylgeom as cg
from .errors import ConfigurationError, ParameterError, SolverError
from .ld import LdSolution, ld_from_rld, matching_point_data, MODE_CAP
from .rld import (FluxRatios, RldSolution, build_rld_eq, build_rld_pole,
                  build_rld_smooth, _fmt17)
from .tolerances import C1_BAR, DEFAULTS

VARIANT_NAMES = ("plain", "with_poles", "with_equator",
                 "with_equator_and_poles")


# ---------------------------------------------------------------------------
# parameter vectors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ZetaParams:
    """Continuous unbalancing parameters.  For the equatorial variants the
    leading entry plays the role of zeta_0 and sigma has length k."""

    zeta1: float
    sigma: tuple
    xi: tuple
    zeta_pol: float | None = None
    variant: str = "plain"

    def __post_init__(self):
        object.__setattr__(self, "sigma", tuple(float(v) for v in self.sigma))
        object.__setattr__(self, "xi", tuple(float(v) for v in self.xi))

    @property
    def k(self):
        return len(self.xi)

    def to_vector(self):
        vec = [self.zeta1, *self.sigma, *self.xi]
        if self.zeta_pol is not None:
            vec.append(self.zeta_pol)
        return np.array(vec)

    @staticmethod
    def from_vector(x, k, variant):
        n_sigma = k if variant in ("with_equator", "with_equator_and_poles") \
            else k - 1
        has_pol = variant in ("with_poles", "with_equator_and_poles")
        expect = 1 + n_sigma + k + (1 if has_pol else 0)
        if len(x) != expect:
            raise ParameterError(f"parameter vector length {len(x)} != {expect}")
        return ZetaParams(float(x[0]), tuple(x[1:1 + n_sigma]),
                          tuple(x[1 + n_sigma:1 + n_sigma + k]),
                          float(x[-1]) if has_pol else None, variant)

    @staticmethod
    def zero(k, variant):
        n_sigma = k if variant in ("with_equator", "with_equator_and_poles") \
            else k - 1
        has_pol = variant in ("with_poles", "with_equator_and_poles")
        return ZetaParams(0.0, (0.0,) * n_sigma, (0.0,) * k,
                          0.0 if has_pol else None, variant)

    def window_violations(self, m, c1_bar=C1_BAR):
        """Names of the window bounds this vector violates."""
        bad = []
        if abs(self.zeta1) > c1_bar:
            bad.append("zeta1")
        if self.sigma and max(map(abs, self.sigma)) > c1_bar / m:
            bad.append("sigma")
        if self.xi and max(map(abs, self.xi)) > c1_bar / m:
            bad.append("xi")
        if self.zeta_pol is not None and \
                abs(self.zeta_pol) > c1_bar * math.log(m) / m:
            bad.append("zeta_pol")
        return bad


# ---------------------------------------------------------------------------
# the pipeline: zeta -> rotationally invariant solution -> matching data
# ---------------------------------------------------------------------------

def _build_variant(k, m, zeta: ZetaParams, hint=None, check_window=True):
    """Rebuild the full chain for the given parameters; returns the
    LdSolution plus the pole bookkeeping for the extra equation.  The hint
    dict carries the previous smooth-at-poles threshold to warm-start the
    root finds in solver loops."""
    variant = zeta.variant
    equatorial = variant in ("with_equator", "with_equator_and_poles")
    ratios = FluxRatios(zeta.sigma, zeta.xi)
    pole = variant in ("with_poles", "with_equator_and_poles")
    extras = {}
    h = hint.get("threshold") if hint else None
    if not pole:
        sol = build_rld_eq(k, ratios, hint=h) if equatorial \
            else build_rld_smooth(k, ratios, hint=h)
        if hint is not None:
            hint["threshold"] = float(sol.first_parameter)
    else:
        smooth = build_rld_eq(k, ratios, tau_tilde=None, hint=h) if equatorial \
            else build_rld_smooth(k, ratios, hint=h)
        if hint is not None:
            hint["threshold"] = float(smooth.first_parameter)
        F_first = smooth.total_flux(0)
        B_k0 = float(smooth.pieces[-1][1])
        tau_tilde = math.exp(zeta.zeta_pol) * (F_first / m) * B_k0
        sol = build_rld_eq(k, ratios, tau_tilde, hint=hint.get("threshold")
                           if hint else None, check_window=check_window) \
            if equatorial else \
            build_rld_pole(k, ratios, tau_tilde, hint=hint.get("threshold")
                           if hint else None, check_window=check_window)
        extras["tau_tilde"] = tau_tilde
        extras["B_k_tau"] = float(sol.pieces[-1][1])
    ld = ld_from_rld(sol, m)
    return ld, extras


def matching_residuals(ld: LdSolution, phi_vals, phi_ders, zeta: ZetaParams,
                       mu=None, mu_prime=None, mu_pol=0.0, extras=None):
    """Residuals of the matching system; affine in (mu, mu', mu_pol) with
    identity coefficient."""
    m = ld.m
    sol = ld.rld
    sites = sol.flux_sites()
    n_sites = len(sites)
    k = sol.k
    mu = np.zeros(n_sites) if mu is None else np.asarray(mu, dtype=float)
    mu_prime = np.zeros(k) if mu_prime is None else np.asarray(mu_prime,
                                                               dtype=float)
    F_first = sol.total_flux(0)
    R = np.empty(n_sites)
    sig_acc = 0.0
    sigma = zeta.sigma
    for i in range(n_sites):
        if i > 0:
            sig_acc += sigma[i - 1]
        tau_i = float(ld.tau_primes[i])
        s_i = float(sites[i])
        R[i] = ((m / F_first) * math.expm1(-sig_acc)
                + phi_vals[i] / tau_i + mu[i] + zeta.zeta1
                + math.log(4.5 * tau_i) - math.log(cg.sech(s_i)))
    Rp = np.empty(k)
    off = 1 if sol.equatorial else 0
    for j in range(k):
        i = j + off
        tau_i = float(ld.tau_primes[i])
        s_i = float(sites[i])
        Rp[j] = (phi_ders[i] / tau_i + 0.5 * m * zeta.xi[j] + mu_prime[j]
                 + 0.5 * math.tanh(s_i))
    out = {"vertical": R, "horizontal": Rp}
    if zeta.zeta_pol is not None:
        tau_tilde = extras["tau_tilde"]
        B_k = extras["B_k_tau"]
        tau_pol = ld.tau_prime_pol
        out["pole"] = ((F_first / m) * mu_pol - 1.0
                       + (F_first / m) * (zeta.zeta1
                                          + math.log(tau_pol / (4.0 * m)) + 1.0)
                       + (F_first / m) * (B_k / tau_tilde))
    return out


def _residual_vector(k, m, zeta: ZetaParams, q_cap=MODE_CAP, hint=None,
                     check_window=True):
    ld, extras = _build_variant(k, m, zeta, hint=hint,
                                check_window=check_window)
    vals, ders = matching_point_data(ld, q_cap=q_cap)
    res = matching_residuals(ld, vals, ders, zeta, extras=extras)
    vec = np.concatenate((res["vertical"], res["horizontal"],
                          [res["pole"]] if "pole" in res else []))
    return vec, ld, extras, (vals, ders)


# ---------------------------------------------------------------------------
# solved states
# ---------------------------------------------------------------------------

@dataclass
class MatchState:
    zeta: ZetaParams
    k: int
    m: int
    variant: str
    F_first: float
    log_tau1: float
    tau_primes: np.ndarray
    tau_prime_pol: float | None
    residuals: np.ndarray
    mu: np.ndarray
    mu_prime: np.ndarray
    mu_pol: float | None
    iterations: int
    residual_history: list = field(default_factory=list)
    ld: LdSolution | None = field(default=None, repr=False)

    @property
    def tau1(self):
        return math.exp(self.log_tau1) if self.log_tau1 > -700 else 0.0

    @property
    def log_taus(self):
        return self.log_tau1 + np.log(self.tau_primes)

    @property
    def log_tau_pol(self):
        if self.tau_prime_pol is None:
            return None
        return self.log_tau1 + math.log(self.tau_prime_pol)

    def tau_ratio(self):
        """tau_max / tau_min over the lattice (log-safe)."""
        logs = list(self.log_taus)
        if self.log_tau_pol is not None:
            logs.append(self.log_tau_pol)
        return math.exp(max(logs) - min(logs))

    def to_json_dict(self):
        d = {
            "k": self.k, "m": self.m, "variant": self.variant,
            "zeta1": _fmt17(self.zeta.zeta1),
            "sigma": [_fmt17(v) for v in self.zeta.sigma],
            "xi": [_fmt17(v) for v in self.zeta.xi],
            "F_first": _fmt17(self.F_first),
            "tau1": _fmt17(self.tau1),
            "log_tau1": _fmt17(self.log_tau1),
            "tau_primes": [_fmt17(v) for v in self.tau_primes],
            "residuals": [_fmt17(v) for v in self.residuals],
            "mu": [_fmt17(v) for v in self.mu],
            "mu_prime": [_fmt17(v) for v in self.mu_prime],
            "iterations": self.iterations,
            "residual_history": [_fmt17(v) for v in self.residual_history],
        }
        if self.zeta.zeta_pol is not None:
            d["zeta_pol"] = _fmt17(self.zeta.zeta_pol)
            d["tau_prime_pol"] = _fmt17(self.tau_prime_pol)
            d["mu_pol"] = _fmt17(self.mu_pol if self.mu_pol is not None else 0.0)
        return d

    def to_json(self, **kw):
        return json.dumps(self.to_json_dict(), **kw)


def _make_state(zeta, k, m, ld, vec, iters, history):
    sol = ld.rld
    F_first = sol.total_flux(0)
    log_tau1 = zeta.zeta1 - math.log(m) - m / F_first
    n_sites = sol.n_flux_sites
    return MatchState(
        zeta=zeta, k=k, m=m, variant=zeta.variant, F_first=F_first,
        log_tau1=log_tau1, tau_primes=ld.tau_primes.copy(),
        tau_prime_pol=ld.tau_prime_pol,
        residuals=vec.copy(), mu=np.zeros(n_sites), mu_prime=np.zeros(sol.k),
        mu_pol=0.0 if zeta.zeta_pol is not None else None,
        iterations=iters, residual_history=history, ld=ld,
    )


# ---------------------------------------------------------------------------
# solvers
# ---------------------------------------------------------------------------

def _fd_jacobian(k, m, zeta: ZetaParams, q_cap, hint=None, step_rel=None):
    step_rel = DEFAULTS["fd_step_rel"] if step_rel is None else step_rel
    x0 = zeta.to_vector()
    n = len(x0)
    scales = np.ones(n)
    n_sigma = len(zeta.sigma)
    scales[1:1 + n_sigma + k] = 1.0 / m
    if zeta.zeta_pol is not None:
        scales[-1] = math.log(m) / m
    J = np.zeros((n, n))
    for j in range(n):
        h = step_rel * max(scales[j], abs(x0[j]))
        xp = x0.copy()
        xp[j] += h
        xm = x0.copy()
        xm[j] -= h
        rp, *_ = _residual_vector(
            k, m, ZetaParams.from_vector(xp, k, zeta.variant), q_cap,
            hint=hint, check_window=False)
        rm, *_ = _residual_vector(
            k, m, ZetaParams.from_vector(xm, k, zeta.variant), q_cap,
            hint=hint, check_window=False)
        J[:, j] = (rp - rm) / (2.0 * h)
    return J


def solve_matching(k, m, variant="plain", tol=None, max_iter=None,
                   q_cap=MODE_CAP, c1_bar=C1_BAR, enforce_window=True):
    """Damped Newton (frozen finite-difference Jacobian) on the unbalancing
    parameters, driving the matching residuals to zero with all mu = 0."""
    tol = DEFAULTS["newton_tol"] if tol is None else tol
    max_iter = DEFAULTS["newton_max_iter"] if max_iter is None else max_iter
    if variant not in VARIANT_NAMES:
        raise ConfigurationError(f"unknown variant {variant!r}")
    zeta = ZetaParams.zero(k, variant)
    hint = {}
    # the first evaluation validates the configuration gates and the pole
    # window; the solver loop then reuses warm-started root brackets
    vec, ld, extras, _ = _residual_vector(k, m, zeta, q_cap, hint=hint,
                                          check_window=True)
    history = [float(np.max(np.abs(vec)))]
    J = _fd_jacobian(k, m, zeta, q_cap, hint=hint)
    stale = 0
    iters = 0
    while history[-1] > tol and iters < max_iter:
        iters += 1
        try:
            dx = np.linalg.solve(J, -vec)
        except np.linalg.LinAlgError as exc:
            raise SolverError("singular matching Jacobian", history) from exc
        lam = 1.0
        base = history[-1]
        x0 = zeta.to_vector()
        while lam > 1.0 / 64.0:
            trial = ZetaParams.from_vector(x0 + lam * dx, k, variant)
            try:
                vec_t, ld_t, extras_t, _ = _residual_vector(
                    k, m, trial, q_cap, hint=hint, check_window=False)
            except (ParameterError, ConfigurationError):
                lam *= 0.5
                continue
            if np.max(np.abs(vec_t)) < base * (1.0 - 0.1 * lam) or \
                    np.max(np.abs(vec_t)) < tol:
                zeta, vec, ld, extras = trial, vec_t, ld_t, extras_t
                break
            lam *= 0.5
        else:
            stale += 1
            if stale > 2:
                raise SolverError("matching iteration stalled", history)
            J = _fd_jacobian(k, m, zeta, q_cap, hint=hint)
            continue
        history.append(float(np.max(np.abs(vec))))
        if lam < 0.25:
            stale += 1
            if stale >= 2:
                J = _fd_jacobian(k, m, zeta, q_cap, hint=hint)
                stale = 0
    if history[-1] > tol:
        raise SolverError(
            f"matching did not reach {tol:g} in {max_iter} iterations",
            history)
    if enforce_window:
        bad = zeta.window_violations(m, c1_bar)
        if bad:
            raise SolverError(
                f"solved parameters violate the window bounds: {bad}", history)
    return _make_state(zeta, k, m, ld, vec, iters, history)


def parameter_map_step(k, m, zeta: ZetaParams, q_cap=MODE_CAP, hint=None):
    """One step of the parameter fixed-point map; mu-tilde are the values
    the affine system assigns at the current zeta (mu = -residual)."""
    vec, ld, extras, _ = _residual_vector(k, m, zeta, q_cap, hint=hint,
                                          check_window=hint is None)
    sol = ld.rld
    n_sites = sol.n_flux_sites
    k_pos = sol.k
    mu_t = -vec[:n_sites]
    mu_p = -vec[n_sites:n_sites + k_pos]
    F_first = sol.total_flux(0)
    zeta1 = zeta.zeta1 + mu_t[0]
    sigma = np.array(zeta.sigma) - (F_first / m) * np.diff(mu_t)
    xi = np.array(zeta.xi) + (2.0 / m) * mu_p
    zeta_pol = None
    if zeta.zeta_pol is not None:
        mu_pol = -vec[-1] * (m / F_first)
        zeta_pol = zeta.zeta_pol - (F_first / m) * mu_pol
    return ZetaParams(zeta1, tuple(sigma), tuple(xi), zeta_pol,
                      zeta.variant), float(np.max(np.abs(vec)))


def solve_matching_fixed_point(k, m, variant="plain", tol=1e-10,
                               max_iter=400, q_cap=MODE_CAP):
    """The parameter fixed-point iteration, kept as a cross-check of the
    Newton solution."""
    zeta = ZetaParams.zero(k, variant)
    history = []
    hint = {}
    for it in range(max_iter):
        zeta, norm = parameter_map_step(k, m, zeta, q_cap,
                                        hint=hint if it else None)
        history.append(norm)
        if norm < tol:
            vec, ld, extras, _ = _residual_vector(k, m, zeta, q_cap,
                                                  hint=hint,
                                                  check_window=False)
            return _make_state(zeta, k, m, ld, vec, it + 1, history)
    raise SolverError(f"fixed-point map did not reach {tol:g}", history)


# ---------------------------------------------------------------------------
# kernel basis and pairing
# ---------------------------------------------------------------------------

class KernelBasis:
    """Cutoff-localized kernel elements V_i (unit value) and V'_i (unit
    s-slope) at each lattice point, plus the polar element when present.
    Supports are pairwise disjoint under the configuration gates."""

    def __init__(self, ld: LdSolution):
        self.ld = ld
        self.m = ld.m
        self.delta = ld.delta
        self.sites = ld.site_latitudes()
        self.v_coeffs = [cg.pair_from_data(1.0, 0.0, float(s))
                         for s in self.sites]
        self.vp_coeffs = [cg.pair_from_data(0.0, 1.0, float(s))
                          for s in self.sites]
        self.has_pole = ld.rld.variant in ("with_poles",
                                           "with_equator_and_poles")

    def _weight(self, i, s, theta):
        s_i = float(self.sites[i])
        ds = abs(float(s)) - s_i
        period = 2.0 * math.pi / self.m
        th = float(theta) % period
        th = min(th, period - th)
        d = math.hypot(ds, th)
        return float(cg.psi_cut(2.0 * self.delta, self.delta, d))

    def v(self, i, s, theta):
        return self._weight(i, s, theta) * float(
            cg.pair_eval(*self.v_coeffs[i], abs(float(s))))

    def v_prime(self, i, s, theta):
        return self._weight(i, s, theta) * float(
            cg.pair_eval(*self.vp_coeffs[i], abs(float(s))))

    def v_pol(self, s, theta):
        """Polar element: supported in a geodesic disc of radius 2 delta
        around each pole; the geodesic distance from the north pole is
        pi/2 - x(s)."""
        d_g = math.pi / 2.0 - cg.x_from_s(abs(float(s)))
        return float(cg.psi_cut(2.0 * self.delta, self.delta, d_g) *
                     math.cos(d_g))

    def pairing_matrix(self, h=1e-6):
        """E_L applied to the basis: rows are (value at p_i, s-slope at p_i),
        columns the basis elements; identity when the supports are disjoint."""
        n = len(self.sites)
        M = np.zeros((2 * n, 2 * n))
        for i in range(n):
            s_i = float(self.sites[i])
            for j in range(n):
                M[2 * i, 2 * j] = self.v(j, s_i, 0.0)
                M[2 * i, 2 * j + 1] = self.v_prime(j, s_i, 0.0)
                M[2 * i + 1, 2 * j] = (self.v(j, s_i + h, 0.0)
                                       - self.v(j, s_i - h, 0.0)) / (2 * h)
                M[2 * i + 1, 2 * j + 1] = (self.v_prime(j, s_i + h, 0.0)
                                           - self.v_prime(j, s_i - h, 0.0)) / (2 * h)
        return M

    def combination(self, a, b, s, theta):
        """sum a_i V_i + b_i V'_i at (s, theta)."""
        return sum(a[i] * self.v(i, s, theta) + b[i] * self.v_prime(i, s, theta)
                   for i in range(len(self.sites)))


def kernel_basis(ld: LdSolution) -> KernelBasis:
    return KernelBasis(ld)


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

def tau_report(state: MatchState):
    """Bridge-scale table: tau_1, all tau_i (log-safe), the polar scale when
    present, and the max/min ratio."""
    rows = []
    sites = [0.0] * 0
    sol_sites = list(state.ld.site_latitudes()) if state.ld is not None else []
    for i, tp in enumerate(state.tau_primes):
        rows.append({
            "site": i,
            "s": float(sol_sites[i]) if sol_sites else None,
            "tau_prime": float(tp),
            "log_tau": float(state.log_tau1 + math.log(tp)),
        })
    report = {
        "k": state.k, "m": state.m, "variant": state.variant,
        "log_tau1": state.log_tau1, "tau1": state.tau1, "rows": rows,
        "tau_ratio": state.tau_ratio(),
    }
    if state.tau_prime_pol is not None:
        report["tau_prime_pol"] = float(state.tau_prime_pol)
        report["log_tau_pol"] = float(state.log_tau_pol)
        report["tau_pol_over_tau1"] = float(state.tau_prime_pol)
    return report
