"""Independent numerical oracles.

Everything in the main modules is closed-form; the checks here go the other
way around: adaptive Runge-Kutta integration of u'' + 2 sech^2(s) u = 0 for
the kernel solutions, and a point-source mode-sum representation of the
singular solutions used to cross-check the assembled decomposition.  Nothing
in the construction path imports this module.
"""

from __future__ import annotations

import numpy as np
from scipy.integrate import solve_ivp

from . import cylgeom as cg
from .errors import SolverError


def oracle_integrate(value, slope, s0, s1, rtol=1e-12, atol=1e-13):
    """Integrate u'' = -2 sech^2(s) u from s0 to s1 with Dormand-Prince 4(5);
    returns (u, u') at s1."""

    def rhs(s, y):
        return [y[1], -2.0 * cg.conformal_factor(s) * y[0]]

    if s1 == s0:
        return float(value), float(slope)
    res = solve_ivp(rhs, (s0, s1), [value, slope], method="RK45",
                    rtol=rtol, atol=atol, dense_output=False)
    if not res.success:
        raise SolverError(f"kernel ODE integration failed: {res.message}")
    return float(res.y[0, -1]), float(res.y[1, -1])


def oracle_rld_probe(sol, s_points, rng=None):
    """Evaluate an RldSolution by integrating each smooth piece from its left
    endpoint data; returns oracle values at the probe points."""
    s_points = np.asarray(s_points, dtype=float)
    out = np.empty_like(s_points)
    bounds = np.concatenate(([0.0], sol.jumps, [np.inf]))
    for j, s in enumerate(s_points):
        a = np.abs(s)
        idx = int(np.searchsorted(sol.jumps, a, side="right"))
        s_left = bounds[idx]
        A, B = sol.pieces[idx]
        v0 = cg.pair_eval(A, B, s_left)
        d0 = cg.pair_deriv(A, B, s_left)
        v, _d = oracle_integrate(v0, d0, s_left, a)
        out[j] = v
    return out


def mode_sum_ld_oracle(sol_rld, scale_c, tau_primes, m, s, theta, q_max=400):
    """Independent representation of the normalized singular solution:
    rotationally invariant part (the scaled closed form) plus the mode sum of
    point-source kernels 2 m tau'_i [G_n(s, s_i) + G_n(s, -s_i)] cos(n theta),
    n = m q.  Valid away from the singular latitudes."""
    from .greens import mode_kernel

    total = scale_c * sol_rld.value(s)
    for q in range(1, q_max + 1):
        n = m * q
        term = 0.0
        for tau_i, s_i in zip(tau_primes, sol_rld.jumps):
            term += 2.0 * m * tau_i * (mode_kernel(n, s, s_i)
                                       + mode_kernel(n, s, -s_i))
        contrib = term * np.cos(n * theta)
        total += contrib
        if abs(term) < 1e-14 * max(1.0, abs(total)) and q > 2:
            break
    return total
