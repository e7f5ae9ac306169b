"""Command-line front end.

Subcommands: rld, ld, match, mesh, sweep, verify.  Exit codes: 0 on
success, 1 on a failed check or solve, 2 on usage errors (argparse).  The
output directory can be overridden with the SPHERE_DOUBLING_OUTDIR
environment variable.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import ld, mesh, mld, rld, sweep as sweep_mod
from .errors import SolverError
from .tolerances import load_overrides
from .verify import RunConfig, print_reports, reports_to_json, verify_suite


def _floats(text):
    return tuple(float(v) for v in text.split(",")) if text else ()


def _ints(text):
    return [int(v) for v in text.split(",")] if text else []


def _outdir(args):
    out = os.environ.get("SPHERE_DOUBLING_OUTDIR", getattr(args, "out", "."))
    os.makedirs(out, exist_ok=True)
    return out


def _build_rld(args):
    ratios = None
    if args.sigma or args.xi:
        equatorial = args.variant.startswith("with_equator")
        n_sigma = args.k if equatorial else args.k - 1
        sigma = args.sigma or (0.0,) * n_sigma
        xi = args.xi or (0.0,) * args.k
        ratios = rld.FluxRatios(sigma, xi)
    if args.s1 is not None:
        return rld.build_rld(args.s1, ratios)
    if args.variant.startswith("with_equator"):
        return rld.build_rld_eq(args.k, ratios, args.tau_tilde)
    if args.variant == "with_poles":
        return rld.build_rld_pole(args.k, ratios, args.tau_tilde or 0.0)
    return rld.build_rld_smooth(args.k, ratios)


def cmd_rld(args):
    sol = _build_rld(args)
    out = _outdir(args)
    with open(os.path.join(out, "rld.json"), "w") as fh:
        fh.write(sol.to_json(indent=1))
    stats = rld.flux_stats(sol)
    report = {
        "k": sol.k, "variant": sol.variant,
        "jumps": [f"{v:.17g}" for v in sol.jumps],
        "flux_table": stats["table"].to_json_dict(),
        "sin_x": [f"{v:.17g}" for v in stats["sin_x"]],
        "integral_identity_residuals":
            [f"{v:.17g}" for v in stats["integral_identity_residuals"]],
    }
    with open(os.path.join(out, "rld_report.json"), "w") as fh:
        json.dump(report, fh, indent=1)
    print(f"wrote rld.json and rld_report.json to {out}")
    return 0


def cmd_ld(args):
    sol = _build_rld(args)
    lds = ld.ld_from_rld(sol, args.m)
    vals, ders = ld.matching_point_data(lds)
    out = _outdir(args)
    report = {
        "k": sol.k, "m": args.m, "variant": sol.variant,
        "scale_c": f"{lds.scale_c:.17g}",
        "tau_primes": [f"{v:.17g}" for v in lds.tau_primes],
        "phi_prime_at_sites": [f"{v:.17g}" for v in vals],
        "d_phi_prime_at_sites": [f"{v:.17g}" for v in ders],
    }
    if lds.tau_prime_pol is not None:
        report["tau_prime_pol"] = f"{lds.tau_prime_pol:.17g}"
    with open(os.path.join(out, "ld_report.json"), "w") as fh:
        json.dump(report, fh, indent=1)
    if args.fields:
        dec = ld.assemble_decomposition(lds)
        rows = ["s,theta,phi_hat,phi_prime"]
        for s_i in lds.site_latitudes():
            ss = np.linspace(max(s_i - 3.0 / args.m, 0.0), s_i + 3.0 / args.m, 13)
            ths = np.linspace(0.0, math.pi / args.m, 5)
            for s in ss:
                for th in ths:
                    rows.append(f"{s:.17g},{th:.17g},"
                                f"{float(dec.phi_hat(s)):.17g},"
                                f"{dec.phi_prime(s, th):.17g}")
        with open(os.path.join(out, "ld_fields.csv"), "w") as fh:
            fh.write("\n".join(rows) + "\n")
    print(f"wrote ld_report.json to {out}")
    return 0


def cmd_match(args):
    try:
        st = mld.solve_matching(args.k, args.m, args.variant)
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 1
    out = _outdir(args)
    with open(os.path.join(out, "match.json"), "w") as fh:
        fh.write(st.to_json(indent=1))
    with open(os.path.join(out, "tau_table.csv"), "w") as fh:
        fh.write(sweep_mod.tau_table_csv(st))
    print(f"solved in {st.iterations} iterations; "
          f"residual {float(np.max(np.abs(st.residuals))):.3g}; "
          f"wrote match.json, tau_table.csv to {out}")
    return 0


def cmd_mesh(args):
    try:
        st = mld.solve_matching(args.k, args.m, args.variant)
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 1
    res = mesh.MeshResolution.coarse() if args.coarse else mesh.MeshResolution()
    msh = mesh.build_initial_surface(st, res)
    out = _outdir(args)
    obj_path = os.path.join(out, args.obj)
    msh.export_obj(obj_path)
    if args.ply:
        msh.export_ply(obj_path.rsplit(".", 1)[0] + ".ply")
    msh.write_metadata(obj_path.rsplit(".", 1)[0] + ".meta.json")
    print(f"mesh: V={len(msh.vertices)} F={len(msh.faces)} "
          f"genus={msh.metadata['genus']} area={msh.metadata['area']:.6f}; "
          f"wrote {obj_path}")
    return 0


def cmd_sweep(args):
    rows, fits = sweep_mod.sweep(args.k_list, args.m_list, args.variant,
                                 max_workers=args.workers)
    out = _outdir(args)
    path = os.path.join(out, f"sweep_{args.variant}.csv")
    with open(path, "w") as fh:
        fh.write(sweep_mod.rows_to_csv(rows))
    with open(os.path.join(out, f"sweep_{args.variant}_fits.json"), "w") as fh:
        json.dump({k: (f"{v:.17g}" if isinstance(v, float) else v)
                   for k, v in fits.items()}, fh, indent=1)
    n_ok = sum(r["status"] == "ok" for r in rows)
    print(f"swept {len(rows)} cells ({n_ok} ok); wrote {path}")
    return 0


def cmd_verify(args):
    cfg = RunConfig(suite=args.suite, inject_bug=args.inject_bug)
    if args.tolerances:
        cfg.tolerances = load_overrides(args.tolerances)
    reports = verify_suite(cfg)
    ok = print_reports(reports)
    out = _outdir(args)
    with open(os.path.join(out, "verify_report.json"), "w") as fh:
        fh.write(reports_to_json(reports))
    return 0 if ok else 1


def make_parser():
    p = argparse.ArgumentParser(
        prog="sphere-doubling",
        description="Doubled-sphere initial surfaces with catenoidal "
                    "bridges: builders, matching solver, meshes, checks.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, with_m=True):
        sp.add_argument("--k", type=int, default=2)
        if with_m:
            sp.add_argument("--m", type=int, default=64)
        sp.add_argument("--variant", default="plain",
                        choices=list(mld.VARIANT_NAMES))
        sp.add_argument("--out", default=".")

    sp = sub.add_parser("rld", help="build a rotationally invariant solution")
    common(sp, with_m=False)
    sp.add_argument("--sigma", type=_floats, default=())
    sp.add_argument("--xi", type=_floats, default=())
    sp.add_argument("--s1", type=float, default=None,
                    help="first jump latitude (otherwise smooth at the poles)")
    sp.add_argument("--tau-tilde", type=float, default=None)
    sp.set_defaults(func=cmd_rld)

    sp = sub.add_parser("ld", help="normalize to a singular solution")
    common(sp)
    sp.add_argument("--sigma", type=_floats, default=())
    sp.add_argument("--xi", type=_floats, default=())
    sp.add_argument("--s1", type=float, default=None)
    sp.add_argument("--tau-tilde", type=float, default=None)
    sp.add_argument("--fields", action="store_true",
                    help="also dump field grids to CSV")
    sp.set_defaults(func=cmd_ld)

    sp = sub.add_parser("match", help="solve the matching equations")
    common(sp)
    sp.set_defaults(func=cmd_match)

    sp = sub.add_parser("mesh", help="build and export an initial surface")
    common(sp)
    sp.add_argument("--obj", default="surface.obj")
    sp.add_argument("--ply", action="store_true")
    sp.add_argument("--coarse", action="store_true")
    sp.set_defaults(func=cmd_mesh)

    sp = sub.add_parser("sweep", help="sweep (k, m) cells to CSV")
    sp.add_argument("--k-list", type=_ints, default=[1, 2, 3])
    sp.add_argument("--m-list", type=_ints, default=[64])
    sp.add_argument("--variant", default="plain",
                    choices=list(mld.VARIANT_NAMES))
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--out", default=".")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("verify", help="run the verification suite")
    sp.add_argument("--suite", default="default")
    sp.add_argument("--inject-bug", default=None,
                    help="perturb the named check (negative control)")
    sp.add_argument("--tolerances", default=None,
                    help="JSON file overriding tolerance defaults")
    sp.add_argument("--out", default=".")
    sp.set_defaults(func=cmd_verify)
    return p


def main(argv=None):
    parser = make_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
