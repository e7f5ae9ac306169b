"""Doubled-sphere initial surfaces with catenoidal bridges.

The pipeline: rotationally invariant solutions with prescribed flux jumps
(`rld`) are normalized into singular solutions on the orbit lattice (`ld`),
the finite-dimensional matching equations fix the unbalancing parameters and
bridge scales (`mld`), and the result is meshed as two near-spherical sheets
joined by catenoidal bridges (`mesh`).  `verify` and `sweep` provide the
oracle-checked report machinery; `cli` the command-line front end.
"""

from .cylgeom import (CylPoint, CutoffSpec, S_ROOT, bessel_j0, bessel_y0,
                      blend, conformal_factor, cutoff, phi_even, phi_odd,
                      psi_cut, s_from_x, x_from_s)
from .rld import (FluxRatios, FluxTable, RldSolution, build_rld, build_rld_eq,
                  build_rld_pole, build_rld_smooth, count_jumps, flux_stats,
                  h_solution, jump_derivatives, next_jump,
                  perturbation_stability, smooth_at_poles_threshold)
from .greens import GreensFn, green_cyl, green_sphere, mode_kernel
from .ld import (Decomposition, LdSolution, assemble_decomposition,
                 decomposition_diagnostics, ld_from_rld, matching_point_data,
                 solve_osc_mode)
from .mld import (KernelBasis, MatchState, ZetaParams, kernel_basis,
                  matching_residuals, solve_matching,
                  solve_matching_fixed_point, tau_report)
from .mesh import (MeshResolution, SurfaceMesh, area_and_genus,
                   build_initial_surface, catenoid_bridge, sphere_test_mesh)
from .oracle import oracle_integrate
from .sweep import sweep
from .verify import OracleReport, RunConfig, verify_suite

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
