"""Rotationally invariant solutions with positive one-sided flux jumps.

A solution is represented exactly: on each annulus between consecutive jump
latitudes ``0 < s_1 < ... < s_k`` it is a combination
``A_i phi_even + B_i phi_odd``, and the scale invariant flux

    F_-(s) = -phi'(s)/phi(s),   F_+(s) = phi'(s)/phi(s)

obeys the Riccati equation dF_-/ds = 2 sech^2 s + F_-^2, which makes F_-
strictly increasing between jumps and every continuation step a bracketed
scalar root find.  Prescribing the flux-ratio data (sigma, xi) and either
the first jump latitude, or for the equatorial family the flux at s = 0,
determines the solution uniquely; the coefficient recursion across a jump is

    A_i = A_{i-1} - phi(s_i) (F_{i+} + F_{i-}) phi_odd(s_i),
    B_i = B_{i-1} + phi(s_i) (F_{i+} + F_{i-}) phi_even(s_i).

No ODE integration happens here; the independent Runge-Kutta oracle lives in
`oracle.py` and is used only by the tests.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from . import cylgeom as cg
from .errors import DomainError, ExtensionDivergesError, ParameterError

_BRENTQ_KW = dict(xtol=1e-14, rtol=8.9e-16, maxiter=200)

VARIANTS = ("plain", "with_poles", "with_equator", "with_equator_and_poles")


def _fmt17(x):
    return f"{float(x):.17g}"


# ---------------------------------------------------------------------------
# flux-ratio data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FluxRatios:
    """Unbalancing data (sigma, xi).

    sigma[j] is the log of the ratio of consecutive total fluxes, xi[i] the
    normalized one-sided asymmetry at jump i.  For the equatorial family
    sigma is indexed from the equator (length k), otherwise from the first
    positive latitude (length k-1).
    """

    sigma: tuple
    xi: tuple

    def __post_init__(self):
        object.__setattr__(self, "sigma", tuple(float(v) for v in self.sigma))
        object.__setattr__(self, "xi", tuple(float(v) for v in self.xi))
        if self.xi and max(abs(v) for v in self.xi) >= 0.1:
            raise ParameterError("need |xi|_inf < 1/10")

    @staticmethod
    def balanced(k: int, equatorial: bool = False) -> "FluxRatios":
        n_sigma = k if equatorial else max(k - 1, 0)
        return FluxRatios((0.0,) * n_sigma, (0.0,) * k)

    def l1_sigma(self):
        return float(sum(abs(v) for v in self.sigma))

    def linf_xi(self):
        return float(max((abs(v) for v in self.xi), default=0.0))


def _sigma_entry(ratios, j, equatorial):
    """sigma between total fluxes j and j+1 (j >= 1 plain, j >= 0 equatorial)."""
    idx = j if equatorial else j - 1
    if idx < 0 or idx >= len(ratios.sigma):
        raise ParameterError(
            f"flux-ratio vector sigma too short: need entry {j}")
    return ratios.sigma[idx]


def _xi_entry(ratios, i):
    if i - 1 >= len(ratios.xi):
        raise ParameterError(f"flux-ratio vector xi too short: need entry {i}")
    return ratios.xi[i - 1]


# ---------------------------------------------------------------------------
# flux table
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FluxTable:
    """One-sided fluxes at the jump latitudes (index 0 = equator if present)."""

    F_minus: tuple
    F_plus: tuple
    F_avg: float

    def __post_init__(self):
        if any(v <= 0 for v in self.F_minus) or any(v <= 0 for v in self.F_plus):
            raise ParameterError("all one-sided fluxes must be positive")

    def to_json_dict(self):
        return {
            "F_minus": [_fmt17(v) for v in self.F_minus],
            "F_plus": [_fmt17(v) for v in self.F_plus],
            "F_avg": _fmt17(self.F_avg),
        }

    @staticmethod
    def from_json_dict(d):
        return FluxTable(
            tuple(float(v) for v in d["F_minus"]),
            tuple(float(v) for v in d["F_plus"]),
            float(d["F_avg"]),
        )


# ---------------------------------------------------------------------------
# the solution object
# ---------------------------------------------------------------------------

@dataclass
class RldSolution:
    k: int
    jumps: np.ndarray              # positive jump latitudes s_1..s_k
    pieces: np.ndarray             # (k+1, 2) coefficients (A_i, B_i)
    variant: str
    ratios: FluxRatios
    F_minus: np.ndarray            # at s_1..s_k (prepended equator entry if present)
    F_plus: np.ndarray
    pole_coefficient: float = 0.0  # A_k on the last annulus
    s_tilde_k: float | None = None
    f_equator: float | None = None  # F_{0+} = F_{0-} for equatorial variants
    first_parameter: float = 0.0    # s_1 (plain) or F_{0+} (equatorial)

    def __post_init__(self):
        self.jumps = np.asarray(self.jumps, dtype=float)
        self.pieces = np.asarray(self.pieces, dtype=float)
        if self.variant not in VARIANTS:
            raise DomainError(f"unknown variant {self.variant!r}")
        self._check_consistency()

    # -- evaluation ---------------------------------------------------------

    def _piece_index(self, s_abs, side="right"):
        return np.searchsorted(self.jumps, s_abs, side=side)

    def value(self, s):
        s = np.asarray(s, dtype=float)
        a = np.abs(s)
        idx = self._piece_index(a)
        A = self.pieces[idx, 0]
        B = self.pieces[idx, 1]
        out = cg.pair_eval(A, B, a)
        return out if out.ndim else float(out)

    def deriv(self, s):
        """d phi/ds, odd-extended to s < 0; at a jump, the right-hand piece."""
        s = np.asarray(s, dtype=float)
        a = np.abs(s)
        idx = self._piece_index(a)
        A = self.pieces[idx, 0]
        B = self.pieces[idx, 1]
        out = np.sign(s + (s == 0)) * cg.pair_deriv(A, B, a)
        return out if out.ndim else float(out)

    def second_deriv(self, s):
        """Analytic second derivative of the closed-form pieces (|s| fold)."""
        s = np.asarray(s, dtype=float)
        a = np.abs(s)
        idx = self._piece_index(a)
        A = self.pieces[idx, 0]
        B = self.pieces[idx, 1]
        t = np.tanh(a)
        c2 = cg.conformal_factor(a)
        even_dd = -2.0 * c2 + 2.0 * a * c2 * t
        odd_dd = -2.0 * c2 * t
        out = A * even_dd + B * odd_dd
        return out if out.ndim else float(out)

    def flux(self, s, side):
        """Scale invariant one-sided flux at s >= 0 (side in {'plus','minus'})."""
        s = float(s)
        if s < 0:
            raise DomainError("fluxes are reported on s >= 0")
        val = self.value(s)
        if val == 0.0:
            raise DomainError("flux undefined where the solution vanishes")
        if side == "plus":
            idx = self._piece_index(s, side="right")
            return float(cg.pair_deriv(*self.pieces[idx], s) / val)
        if side == "minus":
            idx = self._piece_index(s, side="left")
            return float(-cg.pair_deriv(*self.pieces[idx], s) / val)
        raise DomainError("side must be 'plus' or 'minus'")

    # -- bookkeeping ---------------------------------------------------------

    @property
    def equatorial(self):
        return self.variant in ("with_equator", "with_equator_and_poles")

    @property
    def n_flux_sites(self):
        return self.k + 1 if self.equatorial else self.k

    def flux_sites(self):
        """Latitudes carrying flux jumps (equator included for those variants)."""
        if self.equatorial:
            return np.concatenate(([0.0], self.jumps))
        return self.jumps.copy()

    def total_flux(self, i):
        """F_i = F_{i+} + F_{i-} with i counted as in the flux table."""
        return float(self.F_plus[i] + self.F_minus[i])

    def flux_table(self):
        n = self.n_flux_sites
        f_avg = float((np.sum(self.F_minus) + np.sum(self.F_plus)) / (2 * n))
        return FluxTable(tuple(self.F_minus), tuple(self.F_plus), f_avg)

    def riccati_residual(self, s):
        """dF_-/ds - 2 sech^2 s - F_-^2 with the analytic derivative; zero in
        exact arithmetic, so this measures rounding in the closed forms."""
        s = float(s)
        if np.any(np.isclose(abs(s), self.jumps, rtol=0, atol=1e-13)):
            raise DomainError("Riccati residual undefined at a jump latitude")
        if self.equatorial and s == 0.0:
            raise DomainError("Riccati residual undefined at a jump latitude")
        v = self.value(s)
        dv = self.deriv(s)
        ddv = self.second_deriv(s)
        dFm = -ddv / v + (dv / v) ** 2
        return float(dFm - 2.0 * cg.conformal_factor(s) - (dv / v) ** 2)

    def _check_consistency(self, tol=1e-9):
        # continuity across jumps and positive one-sided fluxes
        for i, s_i in enumerate(self.jumps):
            left = cg.pair_eval(*self.pieces[i], s_i)
            right = cg.pair_eval(*self.pieces[i + 1], s_i)
            if abs(left - right) > tol * max(1.0, abs(left)):
                raise ParameterError("pieces discontinuous at a jump latitude")
        # positivity on a dense grid through s_k + 5
        s_hi = (self.jumps[-1] if self.k else 1.0) + 5.0
        grid = np.linspace(0.0, s_hi, 10001)
        if not np.all(self.value(grid) > 0):
            raise ParameterError("solution not positive on the verification grid")

    # -- serialization -------------------------------------------------------

    def to_json_dict(self):
        d = {
            "k": self.k,
            "variant": self.variant,
            "jumps": [_fmt17(v) for v in self.jumps],
            "pieces": [[_fmt17(a), _fmt17(b)] for a, b in self.pieces],
            "sigma": [_fmt17(v) for v in self.ratios.sigma],
            "xi": [_fmt17(v) for v in self.ratios.xi],
            "F_minus": [_fmt17(v) for v in self.F_minus],
            "F_plus": [_fmt17(v) for v in self.F_plus],
            "pole_coefficient": _fmt17(self.pole_coefficient),
            "first_parameter": _fmt17(self.first_parameter),
        }
        if self.s_tilde_k is not None:
            d["s_tilde_k"] = _fmt17(self.s_tilde_k)
        if self.f_equator is not None:
            d["f_equator"] = _fmt17(self.f_equator)
        return d

    def to_json(self, **kw):
        return json.dumps(self.to_json_dict(), **kw)

    @staticmethod
    def from_json_dict(d):
        return RldSolution(
            k=int(d["k"]),
            jumps=np.array([float(v) for v in d["jumps"]]),
            pieces=np.array([[float(a), float(b)] for a, b in d["pieces"]]),
            variant=d["variant"],
            ratios=FluxRatios(tuple(float(v) for v in d["sigma"]),
                              tuple(float(v) for v in d["xi"])),
            F_minus=np.array([float(v) for v in d["F_minus"]]),
            F_plus=np.array([float(v) for v in d["F_plus"]]),
            pole_coefficient=float(d["pole_coefficient"]),
            s_tilde_k=float(d["s_tilde_k"]) if "s_tilde_k" in d else None,
            f_equator=float(d["f_equator"]) if "f_equator" in d else None,
            first_parameter=float(d.get("first_parameter", 0.0)),
        )

    @staticmethod
    def from_json(s):
        return RldSolution.from_json_dict(json.loads(s))


# ---------------------------------------------------------------------------
# elementary flux solutions
# ---------------------------------------------------------------------------

def h_solution(F, s_center, sign="plus"):
    """Coefficients (A, B) of the kernel solution H with H(s_center) = 1 and
    one-sided flux F on the given side.  Closed form via the unit Wronskian:
    H^+ and H^- coincide after F -> -F."""
    sgn = {"plus": 1.0, "minus": -1.0}[sign]
    ev, ed = cg.phi_even(s_center)
    ov, od = cg.phi_odd(s_center)
    A = od - sgn * F * ov
    B = sgn * F * ev - ed
    return A, B


def _phi_zero_after(A, B, s_from):
    """First zero of A*phi_even + B*phi_odd beyond s_from (exists iff A > 0)."""
    f = lambda s: cg.pair_eval(A, B, s)
    step = 0.5
    hi = s_from + step
    for _ in range(200):
        if f(hi) < 0.0:
            break
        step *= 2.0
        hi += step
    else:
        raise ExtensionDivergesError("no zero of the extension found")
    return brentq(f, s_from, hi, **_BRENTQ_KW)


def _next_latitude(A, B, s_from, target):
    """First s > s_from where F_- of A*phi_even + B*phi_odd reaches target.

    Works on g(s) = -phi'(s) - target*phi(s), which crosses zero exactly once
    before the zero of phi (flux monotonicity); requires A > 0, else the flux
    stays below any positive target and the extension diverges.
    """
    if target <= 0:
        raise DomainError("flux targets are positive")
    if A <= 0.0:
        raise ExtensionDivergesError(
            "extension stays positive for all s; no further jump latitude")
    s_zero = _phi_zero_after(A, B, s_from)
    g = lambda s: -cg.pair_deriv(A, B, s) - target * cg.pair_eval(A, B, s)
    g_from = g(s_from)
    if g_from >= 0.0:
        raise ExtensionDivergesError("flux already above target at the jump")
    # g -> -phi'(s_zero) > 0 as s -> s_zero; shrink from s_zero until positive
    hi = s_zero
    for _ in range(100):
        if g(hi) > 0.0:
            break
        hi = s_from + 0.9 * (hi - s_from)
    return brentq(g, s_from, hi, **_BRENTQ_KW)


def next_jump(s_i, F_out, F_in_target):
    """Next jump latitude of the extension H^+[F_out; s_i], i.e. the unique
    s > s_i where its F_- has risen to F_in_target."""
    A, B = h_solution(F_out, s_i, "plus")
    return _next_latitude(A, B, s_i, F_in_target)


# ---------------------------------------------------------------------------
# construction by continuation
# ---------------------------------------------------------------------------

def _chain(first_total_flux, ratios, equatorial):
    """Iterator of (F_total_i, F_minus_i, F_plus_i) from the ratio data,
    starting at the first positive jump latitude."""
    def f_total(i):
        # i = 1, 2, ... counts positive jump latitudes
        acc = 0.0
        first = 0 if equatorial else 1
        for j in range(first, i):
            acc += _sigma_entry(ratios, j, equatorial)
        return first_total_flux * math.exp(acc)

    def sides(i):
        F = f_total(i)
        xi = _xi_entry(ratios, i)
        return F, 0.5 * (1.0 - xi) * F, 0.5 * (1.0 + xi) * F

    return sides


def _run_continuation(pieces, jumps, F_minus, F_plus, sides, start_s, k_stop):
    """Extend the last piece jump by jump until the even coefficient drops to
    (or below) zero or k_stop jumps are reached.  Mutates the lists."""
    s_prev = start_s
    while True:
        i = len(jumps) + 1
        if k_stop is not None and i > k_stop:
            return "capped"
        A, B = pieces[-1]
        if A <= 0.0:
            return "terminated"
        F_tot, F_m, F_p = sides(i)
        try:
            s_i = _next_latitude(A, B, s_prev, F_m)
        except ExtensionDivergesError:
            return "terminated"
        val = cg.pair_eval(A, B, s_i)
        jump_total = val * (F_m + F_p)
        ov, _ = cg.phi_odd(s_i)
        ev, _ = cg.phi_even(s_i)
        pieces.append((A - jump_total * ov, B + jump_total * ev))
        jumps.append(s_i)
        F_minus.append(F_m)
        F_plus.append(F_p)
        s_prev = s_i


def _start_plain(s1, ratios):
    if not (1e-8 < s1 < cg.S_ROOT):
        raise DomainError(
            f"first jump latitude must lie in (1e-8, {cg.S_ROOT:.6f})")
    ev, ed = cg.phi_even(s1)
    F1_minus = -ed / ev
    xi1 = _xi_entry(ratios, 1)
    F1 = 2.0 * F1_minus / (1.0 - xi1)
    F1_plus = 0.5 * (1.0 + xi1) * F1
    jump_total = ev * (F1_minus + F1_plus)
    ov, _ = cg.phi_odd(s1)
    pieces = [(1.0, 0.0), (1.0 - jump_total * ov, 0.0 + jump_total * ev)]
    return pieces, [s1], [F1_minus], [F1_plus], F1


def _build(first_param, ratios, equatorial, k_stop=None):
    """Shared continuation driver; returns raw build data."""
    if equatorial:
        F0_side = first_param
        if F0_side <= 0:
            raise DomainError("equator flux must be positive")
        pieces = [(1.0, F0_side)]
        jumps, F_minus, F_plus = [], [], []
        sides = _chain(2.0 * F0_side, ratios, True)
        status = _run_continuation(pieces, jumps, F_minus, F_plus, sides, 0.0, k_stop)
    else:
        pieces, jumps, F_minus, F_plus, F1 = _start_plain(first_param, ratios)
        if k_stop is not None and len(jumps) >= k_stop:
            status = "capped"
        else:
            sides = _chain(F1, ratios, False)
            status = _run_continuation(pieces, jumps, F_minus, F_plus, sides,
                                       jumps[-1], k_stop)
    return pieces, jumps, F_minus, F_plus, status


def count_jumps(param, ratios=None, equatorial=False):
    """Number of positive jump latitudes of the solution with the given first
    jump latitude (plain) or equator flux; nonincreasing in the parameter."""
    if ratios is None:
        ratios = FluxRatios.balanced(64, equatorial)
    pieces, jumps, *_rest, status = _build(param, ratios, equatorial)
    if status != "terminated":
        raise ParameterError("jump count exceeded the available flux ratios")
    return len(jumps)


def build_rld(s1, ratios=None, k_stop=None) -> RldSolution:
    """Unit solution with prescribed first jump latitude and flux ratios;
    continues until the extension is globally positive (finitely many jumps).
    A jump-count cap k_stop may be given for derivative probing near the
    smooth-at-the-poles boundary, where the count changes."""
    if ratios is None:
        ratios = FluxRatios.balanced(256)
    pieces, jumps, F_minus, F_plus, status = _build(s1, ratios, False,
                                                    k_stop=k_stop)
    if status != "terminated" and k_stop is None:
        raise ParameterError("jump count exceeded the available flux ratios")
    k = len(jumps)
    trimmed = FluxRatios(ratios.sigma[:max(k - 1, 0)], ratios.xi[:k])
    return RldSolution(
        k=k, jumps=np.array(jumps), pieces=np.array(pieces), variant="plain",
        ratios=trimmed, F_minus=np.array(F_minus), F_plus=np.array(F_plus),
        pole_coefficient=float(pieces[-1][0]), first_parameter=float(s1),
    )


def _last_even_coeff(param, ratios, k, equatorial):
    """A_k after exactly k jumps, or None if fewer than k jumps exist."""
    pieces, jumps, _fm, _fp, status = _build(param, ratios, equatorial, k_stop=k)
    if len(jumps) < k:
        return None, len(jumps)
    return pieces[-1][0], len(jumps)


def smooth_at_poles_threshold(k, ratios=None, equatorial=False, hint=None):
    """The parameter (first jump latitude, or equator flux for the equatorial
    family) at which the k-jump solution extends smoothly across the poles.

    The even coefficient after k jumps is positive exactly for parameters
    below the threshold and negative above it (where the build realizes
    fewer than k jumps we report a negative sentinel, which keeps the sign
    structure: the jump count is nonincreasing in the parameter), so a single
    bracketed root find suffices.  A hint (a previous threshold for nearby
    ratios) tightens the bracket and saves most of the builds inside solver
    loops.
    """
    if k < 1:
        raise DomainError("k must be >= 1")
    if ratios is None:
        ratios = FluxRatios.balanced(k, equatorial)

    def f(p):
        a, _n = _last_even_coeff(p, ratios, k, equatorial)
        return a if a is not None else -1.0

    if hint is not None:
        eps = max(1e-4 * hint, 1e-7)
        for _ in range(30):
            lo, hi = hint - eps, hint + eps
            if lo > 0 and f(lo) > 0.0 >= f(hi):
                return brentq(f, lo, hi, **_BRENTQ_KW)
            eps *= 8.0
            if eps > max(1.0, hint):
                break
    if equatorial:
        lo = 1.0
        for _ in range(120):
            if f(lo) > 0.0:
                break
            lo *= 0.5
        else:
            raise ParameterError("no admissible equator flux with k jumps")
        hi = max(2.0 * lo, 2.0)
        for _ in range(120):
            if f(hi) <= 0.0:
                break
            hi *= 2.0
        else:
            raise ParameterError("threshold bracket not found")
    else:
        hi = cg.S_ROOT * (1.0 - 1e-12)
        lo = 0.5 * hi
        for _ in range(120):
            if f(lo) > 0.0:
                break
            lo *= 0.5
            if lo < 1e-9:
                raise ParameterError("no admissible first latitude with k jumps")
    return brentq(f, lo, hi, **_BRENTQ_KW)


def _finish_prescribed(param, ratios, k, equatorial, variant, pole=False):
    pieces, jumps, F_minus, F_plus, _status = _build(param, ratios, equatorial,
                                                     k_stop=k)
    if len(jumps) != k:
        raise ParameterError("build did not realize the requested jump count")
    A_k = float(pieces[-1][0])
    s_tilde = None
    if pole and A_k > 0.0:
        # unique maximum of the last piece beyond s_k (root of phi')
        A, B = pieces[-1]
        dphi = lambda s: cg.pair_deriv(A, B, s)
        hi = jumps[-1] + 1.0
        for _ in range(200):
            if dphi(hi) < 0.0:
                break
            hi += 1.0
        s_tilde = brentq(dphi, jumps[-1], hi, **_BRENTQ_KW)
    n_sigma = k if equatorial else max(k - 1, 0)
    trimmed = FluxRatios(ratios.sigma[:n_sigma], ratios.xi[:k])
    if equatorial:
        F0 = float(pieces[0][1])
        F_minus = [F0] + list(F_minus)
        F_plus = [F0] + list(F_plus)
    return RldSolution(
        k=k, jumps=np.array(jumps), pieces=np.array(pieces), variant=variant,
        ratios=trimmed, F_minus=np.array(F_minus), F_plus=np.array(F_plus),
        pole_coefficient=A_k, s_tilde_k=s_tilde,
        f_equator=float(pieces[0][1]) if equatorial else None,
        first_parameter=float(param),
    )


def build_rld_smooth(k, ratios=None, hint=None) -> RldSolution:
    """Smooth-at-the-poles solution with k jumps and given flux ratios."""
    if ratios is None:
        ratios = FluxRatios.balanced(k)
    a_k = smooth_at_poles_threshold(k, ratios, hint=hint)
    return _finish_prescribed(a_k, ratios, k, False, "plain")


def pole_parameter_window(k, ratios=None, equatorial=False):
    """Calibrated upper bound for the last even coefficient in the pole
    variant: the largest value for which (a) A_k is monotone in the parameter
    on the sampled window below the smooth threshold and (b) the solution
    stays positive on the verification grid through s_k + 5."""
    if ratios is None:
        ratios = FluxRatios.balanced(k, equatorial)
    a_k = smooth_at_poles_threshold(k, ratios, equatorial)
    smooth = _finish_prescribed(a_k, ratios, k, equatorial,
                                "with_equator" if equatorial else "plain")
    # positivity bound: the last piece A phi_even + B phi_odd is minimized at
    # the far end of the verification grid once phi_even has turned negative
    s_far = smooth.jumps[-1] + 5.0
    ev, _ = cg.phi_even(s_far)
    ov, _ = cg.phi_odd(s_far)
    pos_bound = 0.95 * float(smooth.pieces[-1][1]) * ov / (-ev)

    width = 0.5 / k**2 if not equatorial else 0.5 * a_k / k
    for _ in range(60):
        left = a_k - width
        vals = []
        ok = left > 0
        if ok:
            for p in np.linspace(left, a_k, 17):
                a, _ = _last_even_coeff(p, ratios, k, equatorial)
                if a is None:
                    ok = False
                    break
                vals.append(a)
        if ok and all(vals[i] > vals[i + 1] for i in range(len(vals) - 1)) \
                and vals[0] <= pos_bound:
            return float(vals[0]), float(left), float(a_k)
        width *= 0.5
    raise ParameterError("no monotone window found for the pole coefficient")


def _pole_coeff_root(k, ratios, tau_tilde, equatorial, a_k):
    """Parameter at which the last even coefficient equals tau_tilde, seeded
    just below the smooth threshold a_k (slope there is of order -k)."""

    def f(p):
        a, _ = _last_even_coeff(p, ratios, k, equatorial)
        return (a if a is not None else -1.0) - tau_tilde

    eps = max(4.0 * tau_tilde / k, 1e-9 * max(a_k, 1.0))
    for _ in range(60):
        lo = a_k - eps
        if lo > 0 and f(lo) > 0.0:
            return brentq(f, lo, a_k, **_BRENTQ_KW)
        eps *= 4.0
        if eps > a_k:
            break
    raise ParameterError("pole coefficient root not bracketed")


def build_rld_pole(k, ratios=None, tau_tilde=0.0, hint=None,
                   check_window=True) -> RldSolution:
    """k-jump solution whose last piece carries even coefficient tau_tilde
    (log-singular at the poles once converted to an LD solution)."""
    if ratios is None:
        ratios = FluxRatios.balanced(k)
    if tau_tilde < 0:
        raise ParameterError("tau_tilde must be >= 0")
    if tau_tilde == 0.0:
        sol = build_rld_smooth(k, ratios, hint=hint)
        sol.variant = "with_poles"
        return sol
    if check_window:
        tau_max, _lo, a_k = pole_parameter_window(k, ratios)
        if tau_tilde >= tau_max:
            raise ParameterError(
                f"tau_tilde {tau_tilde:g} outside the monotone window "
                f"[0, {tau_max:g})")
    else:
        a_k = smooth_at_poles_threshold(k, ratios, hint=hint)
    s1 = _pole_coeff_root(k, ratios, tau_tilde, False, a_k)
    return _finish_prescribed(s1, ratios, k, False, "with_poles", pole=True)


def build_rld_eq(k, ratios=None, tau_tilde=None, hint=None,
                 check_window=True) -> RldSolution:
    """Equatorial-family solution with k positive jump latitudes plus the
    equator jump; smooth at the poles unless tau_tilde > 0 is given."""
    if ratios is None:
        ratios = FluxRatios.balanced(k, equatorial=True)
    if tau_tilde is None or tau_tilde == 0.0:
        b_k = smooth_at_poles_threshold(k, ratios, equatorial=True, hint=hint)
        variant = "with_equator" if tau_tilde is None else "with_equator_and_poles"
        return _finish_prescribed(b_k, ratios, k, True, variant)
    if check_window:
        tau_max, _lo, b_k = pole_parameter_window(k, ratios, equatorial=True)
        if tau_tilde >= tau_max:
            raise ParameterError(
                f"tau_tilde {tau_tilde:g} outside the monotone window "
                f"[0, {tau_max:g})")
    else:
        b_k = smooth_at_poles_threshold(k, ratios, equatorial=True, hint=hint)
    F0 = _pole_coeff_root(k, ratios, tau_tilde, True, b_k)
    return _finish_prescribed(F0, ratios, k, True, "with_equator_and_poles",
                              pole=True)


def build_rld_eq_from_flux(F, ratios=None) -> RldSolution:
    """Equatorial solution with prescribed one-sided equator flux F (the jump
    count falls out of the continuation)."""
    if ratios is None:
        ratios = FluxRatios.balanced(256, equatorial=True)
    pieces, jumps, F_minus, F_plus, status = _build(F, ratios, True)
    if status != "terminated":
        raise ParameterError("jump count exceeded the available flux ratios")
    k = len(jumps)
    trimmed = FluxRatios(ratios.sigma[:k], ratios.xi[:k])
    return RldSolution(
        k=k, jumps=np.array(jumps), pieces=np.array(pieces),
        variant="with_equator", ratios=trimmed,
        F_minus=np.array([F] + F_minus), F_plus=np.array([F] + F_plus),
        pole_coefficient=float(pieces[-1][0]), f_equator=float(F),
        first_parameter=float(F),
    )


# ---------------------------------------------------------------------------
# derivatives of the jump latitudes (recursions + finite differences)
# ---------------------------------------------------------------------------

def jump_derivatives(sol: RldSolution):
    """d s_i / d F_1, d s_i / d sigma_j, d s_i / d xi_j via the exact
    recursions (plain variant).  Returns a dict of arrays."""
    if sol.equatorial:
        raise DomainError("jump derivative recursions implemented for the "
                          "plain/pole families only")
    k = sol.k
    s = sol.jumps
    xi = np.array([_xi_entry(sol.ratios, i) for i in range(1, k + 1)])
    sig = np.array([_sigma_entry(sol.ratios, j, False) for j in range(1, k)])
    F1 = sol.total_flux(0)
    vals = sol.value(s)
    c2 = 1.0 / np.cosh(s) ** 2
    br_minus = 2.0 * c2 + sol.F_minus**2
    br_plus = 2.0 * c2 + sol.F_plus**2
    E = np.concatenate(([1.0], np.exp(np.cumsum(sig))))  # E[j] = exp(sum_{l<=j} sigma_l)

    ds_dF1 = np.zeros(k)
    ds_dxi = np.zeros((k, k))
    ds_dsig = np.zeros((k, max(k - 1, 0)))

    P = 0.5 * (1.0 - xi[0])
    ds_dF1[0] = P / br_minus[0]
    X = np.zeros(k)
    X[0] = -0.5 * F1
    ds_dxi[0] = X / br_minus[0]
    S = np.zeros(max(k - 1, 0))
    for i in range(1, k):
        Q = (vals[i - 1] / vals[i]) ** 2
        R = br_plus[i - 1] / br_minus[i - 1]
        P = R * Q * (P) + Q * 0.5 * (1.0 + xi[i - 1]) * E[i - 1] + \
            0.5 * (1.0 - xi[i]) * E[i]
        ds_dF1[i] = P / br_minus[i]

        Xn = R * Q * X.copy()
        Xn[i - 1] += Q * 0.5 * E[i - 1] * F1
        Xn[i] -= 0.5 * E[i] * F1
        X = Xn
        ds_dxi[i] = X / br_minus[i]

        Sn = R * Q * S.copy()
        for j in range(1, k):
            # d/d sigma_j of exp(sum_{l<=n} sigma_l) is the same exponential
            # when j <= n and zero otherwise; both source terms enter with a
            # plus sign since raising sigma_j raises both flux targets
            term1 = Q * 0.5 * F1 * (1.0 + xi[i - 1]) * E[i - 1] if j <= i - 1 else 0.0
            term2 = 0.5 * F1 * (1.0 - xi[i]) * E[i] if j <= i else 0.0
            Sn[j - 1] += term1 + term2
        S = Sn
        ds_dsig[i] = S / br_minus[i]

    return {"ds_dF1": ds_dF1, "ds_dsigma": ds_dsig, "ds_dxi": ds_dxi,
            "bracket_minus": br_minus, "bracket_plus": br_plus}


def build_from_first_flux(F1, ratios, k_stop=None):
    """Plain build parametrized by the first total flux, used by the
    finite-difference cross-check of the derivative recursions."""
    xi1 = _xi_entry(ratios, 1)

    def g(s):
        ev, ed = cg.phi_even(s)
        return -ed / ev - 0.5 * (1.0 - xi1) * F1

    s1 = brentq(g, 1e-10, cg.S_ROOT * (1 - 1e-13), **_BRENTQ_KW)
    return build_rld(s1, ratios, k_stop=k_stop)


# ---------------------------------------------------------------------------
# flux statistics and stability reports
# ---------------------------------------------------------------------------

def flux_stats(sol: RldSolution):
    """Flux table, per-annulus integral-identity residuals, and spacing data.

    The identity integrates the Riccati equation over an annulus [a, b]:
    F_-(b) + F_+(a) = 2 (tanh b - tanh a) + int_a^b F_-^2 ds.
    """
    table = sol.flux_table()
    residuals = []
    bounds = np.concatenate(([0.0], sol.jumps))
    for i in range(len(bounds) - 1):
        a, b = bounds[i], bounds[i + 1]
        A, B = sol.pieces[i]  # piece i covers [s_i, s_{i+1}] with s_0 = 0
        Fm = lambda s: -cg.pair_deriv(A, B, s) / cg.pair_eval(A, B, s)
        integral, _err = quad(lambda s: Fm(s) ** 2, a, b, epsabs=1e-12,
                              epsrel=1e-12, limit=200)
        F_minus_b = -cg.pair_deriv(A, B, b) / cg.pair_eval(A, B, b)
        F_plus_a = cg.pair_deriv(A, B, a) / cg.pair_eval(A, B, a)
        res = F_minus_b + F_plus_a - 2.0 * (math.tanh(b) - math.tanh(a)) - integral
        residuals.append(res)
    sin_x = np.tanh(sol.jumps)
    return {
        "table": table,
        "integral_identity_residuals": np.array(residuals),
        "sin_x": sin_x,
        "spacing": np.diff(np.concatenate(([0.0], sin_x))),
    }


def perturbation_stability(ratios_a: FluxRatios, ratios_b: FluxRatios, k: int,
                           tau_tilde_a=0.0, tau_tilde_b=0.0):
    """Rebuild the smooth (or pole) solutions at two nearby ratio vectors and
    report the flux-table and latitude drifts together with the size of the
    perturbation, for the Lipschitz-stability checks."""
    build = (lambda r, t: build_rld_pole(k, r, t)) \
        if (tau_tilde_a or tau_tilde_b) else (lambda r, t: build_rld_smooth(k, r))
    sol_a = build(ratios_a, tau_tilde_a)
    sol_b = build(ratios_b, tau_tilde_b)
    dF = max(np.max(np.abs(sol_a.F_minus - sol_b.F_minus)),
             np.max(np.abs(sol_a.F_plus - sol_b.F_plus)))
    ds = float(np.max(np.abs(np.tanh(sol_a.jumps) - np.tanh(sol_b.jumps))))
    size = (np.sum(np.abs(np.array(ratios_a.sigma) - np.array(ratios_b.sigma)))
            + np.max(np.abs(np.array(ratios_a.xi) - np.array(ratios_b.xi)))
            + abs(tau_tilde_a - tau_tilde_b))
    return {"dF_inf": float(dF), "d_tanh_s_inf": ds,
            "perturbation_size": float(size),
            "solution_a": sol_a, "solution_b": sol_b}
