"""Parameter sweeps over (k, m, variant) cells with trend fits.

Cells that fail the configuration gates are recorded as skipped; solver
failures are recorded and the sweep continues.  Output is plot-ready CSV
with deterministic ordering and 17-significant-digit floats.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import mesh, mld, rld
from .errors import ConfigurationError, ParameterError, SolverError
from .ld import check_gates

CSV_FIELDS = [
    "k", "m", "variant", "status", "F_avg", "k_F_avg_minus_1", "sin_x1",
    "two_k_sin_x1_minus_1", "zeta1", "sigma_inf_times_m", "xi_inf_times_m",
    "zeta_pol_scaled", "log_tau1", "tau_ratio_minus_1", "iterations",
    "residual",
]


def _fmt(x):
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    if isinstance(x, float):
        return f"{x:.17g}"
    return str(x)


def run_cell(args):
    """One (k, m, variant) cell: solve the matching system and collect the
    quantitative summaries."""
    k, m, variant = args
    row = {"k": k, "m": m, "variant": variant, "status": "ok"}
    try:
        sol = rld.build_rld_eq(k) if variant.startswith("with_equator") \
            else rld.build_rld_smooth(k)
        check_gates(sol, m)
    except (ConfigurationError, ParameterError) as exc:
        row["status"] = f"skipped_gate: {exc}"
        return row
    try:
        st = mld.solve_matching(k, m, variant)
    except SolverError as exc:
        row["status"] = f"solver_error: {exc}"
        return row
    stats = rld.flux_stats(st.ld.rld)
    table = stats["table"]
    row["F_avg"] = table.F_avg
    row["k_F_avg_minus_1"] = k * table.F_avg - 1.0
    sin_x1 = float(np.tanh(st.ld.rld.jumps[0]))
    row["sin_x1"] = sin_x1
    row["two_k_sin_x1_minus_1"] = 2.0 * k * sin_x1 - 1.0
    row["zeta1"] = st.zeta.zeta1
    row["sigma_inf_times_m"] = (max(map(abs, st.zeta.sigma)) * m
                                if st.zeta.sigma else 0.0)
    row["xi_inf_times_m"] = max(map(abs, st.zeta.xi)) * m
    if st.zeta.zeta_pol is not None:
        row["zeta_pol_scaled"] = abs(st.zeta.zeta_pol) * m / math.log(m)
    row["log_tau1"] = st.log_tau1
    row["tau_ratio_minus_1"] = st.tau_ratio() - 1.0
    row["iterations"] = st.iterations
    row["residual"] = float(np.max(np.abs(st.residuals)))
    return row


def sweep(k_list, m_list, variant="plain", max_workers=1):
    """Sweep the grid; returns (rows, fits).  Cells are dispatched to a
    worker pool and re-assembled in deterministic (k, m) order."""
    cells = [(k, m, variant) for k in k_list for m in m_list]
    if not cells:
        return [], {}
    if max_workers > 1:
        with ProcessPoolExecutor(max_workers=max_workers) as pool:
            rows = list(pool.map(run_cell, cells))
    else:
        rows = [run_cell(c) for c in cells]
    rows.sort(key=lambda r: (r["k"], r["m"]))
    return rows, fit_trends(rows)


def loglog_slope(xs, ys):
    """Least-squares slope of log|y| against log x (positive entries only)."""
    xs = np.asarray(xs, dtype=float)
    ys = np.abs(np.asarray(ys, dtype=float))
    good = (xs > 0) & (ys > 0)
    if np.sum(good) < 2:
        return None
    lx, ly = np.log(xs[good]), np.log(ys[good])
    return float(np.polyfit(lx, ly, 1)[0])


def fit_trends(rows):
    """Decay-exponent fits across k at the largest m with data."""
    ok = [r for r in rows if r["status"] == "ok"]
    if not ok:
        return {}
    m_big = max(r["m"] for r in ok)
    sel = sorted((r for r in ok if r["m"] == m_big), key=lambda r: r["k"])
    ks = [r["k"] for r in sel]
    fits = {"m": m_big}
    if len(ks) >= 2:
        fits["kF_avg_slope"] = loglog_slope(ks, [r["k_F_avg_minus_1"]
                                                 for r in sel])
        fits["spacing_slope"] = loglog_slope(ks, [r["two_k_sin_x1_minus_1"]
                                                  for r in sel])
        fits["tau_ratio_slope"] = loglog_slope(ks, [r["tau_ratio_minus_1"]
                                                    for r in sel])
    return fits


def rows_to_csv(rows):
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_FIELDS, extrasaction="ignore",
                            lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _fmt(row.get(k)) for k in CSV_FIELDS})
    return buf.getvalue()


def tau_table_csv(state):
    """tau table for one solved state as CSV."""
    rep = mld.tau_report(state)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["site", "s", "tau_prime", "log_tau"])
    for r in rep["rows"]:
        writer.writerow([r["site"], _fmt(r["s"]), _fmt(r["tau_prime"]),
                         _fmt(r["log_tau"])])
    if "tau_prime_pol" in rep:
        writer.writerow(["pole", "", _fmt(rep["tau_prime_pol"]),
                         _fmt(rep["log_tau_pol"])])
    return buf.getvalue()
