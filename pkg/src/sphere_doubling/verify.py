"""The verification suite: every module-level identity and estimate gets a
report row with the computed value, the independent oracle value, and the
tolerance; the suite is deterministic and a row's pass flag is exactly
|computed - oracle| <= tolerance (absolute or relative as declared).

Check names are stable identifiers; each row also carries the anchor tag of
the statement it validates (the same tags used throughout the project
notes), so reports can be grepped by anchor.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import cylgeom as cg
from . import greens, ld, mesh, mld, rld
from .oracle import oracle_integrate, oracle_rld_probe
from .tolerances import DEFAULTS


@dataclass
class OracleReport:
    check: str
    anchor: str
    computed: float
    oracle: float
    tolerance: float
    mode: str = "abs"          # "abs" or "rel"

    @property
    def passed(self):
        err = abs(self.computed - self.oracle)
        if self.mode == "rel":
            err /= max(abs(self.oracle), 1e-300)
        return bool(err <= self.tolerance)

    def row(self):
        return {"check": self.check, "anchor": self.anchor,
                "computed": f"{self.computed:.17g}",
                "oracle": f"{self.oracle:.17g}",
                "tolerance": f"{self.tolerance:.17g}",
                "mode": self.mode, "passed": self.passed}


@dataclass
class RunConfig:
    command: str = "verify"
    k: int = 2
    m: int = 64
    variant: str = "plain"
    sigma: tuple = ()
    xi: tuple = ()
    tau_tilde: float | None = None
    tolerances: dict = field(default_factory=lambda: dict(DEFAULTS))
    output_dir: str = "."
    inject_bug: str | None = None
    suite: str = "default"


def _grid_sup(f, grid):
    return float(np.max(np.abs(f(grid))))


def verify_suite(config: RunConfig | None = None):
    """Run every invariant; returns the list of OracleReports (deterministic
    order).  config.inject_bug names a check whose computed value is
    deliberately perturbed, as a negative control of the harness itself."""
    cfg = config or RunConfig()
    tol = cfg.tolerances
    bug = cfg.inject_bug
    reports = []

    def add(check, anchor, computed, oracle, tolerance, mode="abs"):
        if bug == check:
            computed = computed + 1e3 * max(tolerance, 1e-14)
        reports.append(OracleReport(check, anchor, float(computed),
                                    float(oracle), float(tolerance), mode))

    grid = np.linspace(-5.0, 5.0, 1001)

    # --- identities ---------------------------------------------------------
    ev, ed = cg.phi_even(grid)
    ov, od = cg.phi_odd(grid)
    add("wronskian_identity", "Lphie",
        float(np.max(np.abs(ev * od - ed * ov - 1.0))), 0.0, tol["wronskian"])

    t = np.tanh(grid)
    c2 = cg.conformal_factor(grid)
    even_dd = -2.0 * c2 + 2.0 * grid * c2 * t
    odd_dd = -2.0 * c2 * t
    res = max(float(np.max(np.abs(even_dd + 2.0 * c2 * ev))),
              float(np.max(np.abs(odd_dd + 2.0 * c2 * ov))))
    add("kernel_ode_identity", "ELchirot", res, 0.0, tol["kernel_ode_grid"])

    rng = np.random.default_rng(20240817)
    ab = rng.uniform(-2.0, 2.0, size=(8, 2))
    worst = 0.0
    for a, b in ab:
        if a == b:
            continue
        ts = np.linspace(min(a, b) - 1.0, max(a, b) + 1.0, 101)
        worst = max(worst, float(np.max(np.abs(
            cg.psi_cut(a, b, ts) + cg.psi_cut(b, a, ts) - 1.0))))
    add("cutoff_partition", "Epsiab", worst, 0.0, tol["cutoff_partition"])

    xs = np.linspace(-math.pi / 2 + 1e-6, math.pi / 2 - 1e-6, 301)
    add("coordinate_roundtrip", "Exs",
        float(np.max(np.abs(cg.x_from_s(cg.s_from_x(xs)) - xs))), 0.0,
        tol["coordinate_roundtrip"])

    from scipy.optimize import brentq
    j0_root = brentq(cg.bessel_j0, 2.0, 3.0, xtol=1e-14)
    add("bessel_j0_root", "Ebessel", j0_root, 2.4048255576957728, 1e-10)

    # --- flux calculus --------------------------------------------------------
    worst_ric = 0.0
    worst_int = 0.0
    worst_rec = 0.0
    for k in (3, 10):
        sol = rld.build_rld_smooth(k)
        bounds = np.concatenate(([0.0], sol.jumps, [sol.jumps[-1] + 1.0]))
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            ss = np.linspace(lo + 1e-3 * (hi - lo), hi - 1e-3 * (hi - lo), 9)
            worst_ric = max(worst_ric, max(abs(sol.riccati_residual(s))
                                           for s in ss))
        st = rld.flux_stats(sol)
        worst_int = max(worst_int,
                        float(np.max(np.abs(st["integral_identity_residuals"]))))
        F1 = sol.total_flux(0)
        sig = np.concatenate(([0.0], np.cumsum(sol.ratios.sigma)))
        for i in range(k):
            F_i = F1 * math.exp(sig[i])
            xi_i = sol.ratios.xi[i]
            worst_rec = max(worst_rec,
                            abs(sol.F_minus[i] - 0.5 * (1 - xi_i) * F_i),
                            abs(sol.F_plus[i] - 0.5 * (1 + xi_i) * F_i))
    add("riccati_residual", "LFmono", worst_ric, 0.0, tol["riccati_residual"])
    add("integral_identity", "Lintid", worst_int, 0.0, tol["integral_identity"])
    add("flux_reconstruction", "EFxi", worst_rec, 0.0, tol["flux_reconstruction"])

    sol3 = rld.build_rld_smooth(3)
    add("smooth_pole_coefficient", "existence",
        abs(sol3.pole_coefficient), 0.0, 1e-12)

    probes = np.linspace(0.05, sol3.jumps[-1] + 1.0, 25)
    add("rld_oracle_probe", "oracle",
        float(np.max(np.abs(oracle_rld_probe(sol3, probes)
                            - sol3.value(probes)))), 0.0,
        tol["oracle_rld_probe"])

    u_o, du_o = oracle_integrate(1.0, 0.0, 0.0, 0.8)
    ev8, _ = cg.phi_even(0.8)
    add("kernel_rk_even", "dphie", u_o, ev8, 1e-10)

    # --- derivative recursions --------------------------------------------------
    ratios = rld.FluxRatios((0.01, -0.005, 0.0, 0.002),
                            (0.004, -0.002, 0.0, 0.001, -0.003))
    sol5 = rld.build_rld_smooth(5, ratios)
    der = rld.jump_derivatives(sol5)
    F1 = sol5.total_flux(0)
    h = 1e-6 * F1
    sp = rld.build_from_first_flux(F1 + h, ratios, k_stop=5)
    sm = rld.build_from_first_flux(F1 - h, ratios, k_stop=5)
    fd = (sp.jumps - sm.jumps) / (2 * h)
    add("jump_derivative_fd", "Lsderiv",
        float(np.max(np.abs(fd - der["ds_dF1"]) / np.abs(fd))), 0.0,
        tol["jump_derivative_rel"])

    # --- Green's functions --------------------------------------------------------
    gp = greens.green_cyl(1.0)
    rr = np.linspace(0.06, 0.44, 7)
    worst_g = max(abs(gp.operator_residual(r * math.cos(a), r * math.sin(a)))
                  for r in rr for a in np.linspace(0, math.pi, 5))
    add("green_operator_residual", "Lgreen", worst_g, 0.0,
        tol["green_residual"])
    v_c, d_c = greens.green_diff_at_center(gp)
    add("green_center_value", "Lgdiff", v_c, -math.log(cg.sech(1.0)),
        tol["green_center_diff"])
    add("green_center_slope", "Lgdiff", d_c, 0.5 * math.tanh(1.0),
        tol["green_center_diff"])

    rng = np.random.default_rng(7)
    worst_j = 0.0
    for _ in range(10):
        n = int(rng.integers(2, 400))
        xi = float(rng.uniform(-2.5, 2.5))
        jump = (greens.mode_kernel_ds(n, xi, xi, "plus")
                - greens.mode_kernel_ds(n, xi, xi, "minus"))
        worst_j = max(worst_j, abs(jump - 1.0))
    add("mode_kernel_jump", "EGreen", worst_j, 0.0, tol["mode_kernel_jump"])

    # --- singular solutions ----------------------------------------------------------
    lds = ld.ld_from_rld(sol3, 64)
    sites = lds.site_latitudes()
    F_tot = np.array([sol3.total_flux(i) for i in range(sol3.n_flux_sites)])
    worst_vb = float(np.max(np.abs(64.0 * lds.tau_primes
                                   - lds.phi(sites) * F_tot)))
    add("vertical_balancing", "Evbal", worst_vb, 0.0,
        tol["vertical_balancing"])

    lds128 = ld.ld_from_rld(sol3, 128)
    add("tau_prime_m_independence", "Lphiavg",
        float(np.max(np.abs(lds.tau_primes - lds128.tau_primes))), 0.0,
        tol["tau_prime_consistency"])

    dec = ld.assemble_decomposition(lds)
    geo = dec.geos[0]
    worst_mode = 0.0
    for q in (1, 3):
        n = 64 * q
        for s in (geo.s_i, geo.s_i + 1.7 * dec.delta):
            a = ld.solve_osc_mode(geo, n, s)
            b = ld.mode_solution_closed(lds, geo, n, s)
            worst_mode = max(worst_mode, abs(a - b))
    add("mode_dual_route", "Lsol", worst_mode, 0.0, tol["mode_dual_route"])

    # --- matching ------------------------------------------------------------------
    st = mld.solve_matching(2, 64)
    add("matching_residual", "Lmatching",
        float(np.max(np.abs(st.residuals))), 0.0, tol["matching_residual"])
    st_fp = mld.solve_matching_fixed_point(2, 64)
    add("newton_vs_fixed_point", "EJcal",
        float(np.max(np.abs(st.zeta.to_vector() - st_fp.zeta.to_vector()))),
        0.0, 1e-9)
    st1 = mld.solve_matching(1, 64)
    tau1_direct = (1.0 / 64.0) * math.exp(st1.zeta.zeta1) \
        * math.exp(-64.0 / st1.F_first)
    add("tau1_identity", "Etau1", st1.tau1, tau1_direct,
        tol["tau1_identity"], mode="rel")

    # --- mesh ---------------------------------------------------------------------
    sphere = mesh.sphere_test_mesh()
    add("sphere_mesh_area", "mesh", sphere.area(), 4.0 * math.pi,
        tol["sphere_area_rel"], mode="rel")
    msh = mesh.build_initial_surface(st1, mesh.MeshResolution.coarse())
    add("mesh_genus", "Tmain", msh.metadata["genus"],
        mesh.GENUS_BY_VARIANT["plain"](1, 64), 0.0)
    add("mesh_watertight", "Tmain", 1.0 if msh.is_watertight() else 0.0,
        1.0, 0.0)
    add("mesh_mirror_symmetry", "Esphsym", msh.mirror_distance(), 0.0,
        tol["mirror_symmetry"])

    # --- serialization ---------------------------------------------------------------
    back = rld.RldSolution.from_json(sol3.to_json())
    add("serialization_roundtrip", "plumbing",
        float(np.max(np.abs(back.pieces - sol3.pieces))), 0.0, 0.0)

    return reports


def reports_to_json(reports):
    return json.dumps({"rows": [r.row() for r in reports],
                       "passed": all(r.passed for r in reports)}, indent=1)


def reports_from_json(text):
    data = json.loads(text)
    out = []
    for row in data["rows"]:
        out.append(OracleReport(row["check"], row["anchor"],
                                float(row["computed"]), float(row["oracle"]),
                                float(row["tolerance"]), row["mode"]))
    return out


def print_reports(reports, stream=None):
    import sys
    stream = stream or sys.stdout
    for r in reports:
        flag = "PASS" if r.passed else "FAIL"
        stream.write(f"[{flag}] {r.check:32s} anchor={r.anchor:12s} "
                     f"computed={r.computed:.6g} oracle={r.oracle:.6g} "
                     f"tol={r.tolerance:.2g} ({r.mode})\n")
    n_bad = sum(not r.passed for r in reports)
    stream.write(f"{len(reports) - n_bad}/{len(reports)} checks passed\n")
    return n_bad == 0
