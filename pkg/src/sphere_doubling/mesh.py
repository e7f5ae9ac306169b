"""Triangulated initial surfaces: two near-spherical graphs joined by small
catenoidal bridges at the lattice points.

The surface is the union of the graphs of +/-H over the unit two-sphere
inside the unit three-sphere (a point at latitude x, longitude y, height z
sits at (P(x, y) cos z, sin z) in R^4 with P the two-sphere point), where

    H = tau_1 Phi                       away from the bridges,
    H = tau_p arccosh(d / tau_p)        near a bridge point p (d = geodesic
                                        distance to p): a catenoid of waist
                                        tau_p in normal coordinates,

blended over an annulus around each p.  Bridge scales are carried in log
space: tau_1 = e^{zeta_1 - m/F_1}/m underflows float64 already at moderate
(k, m), in which case waist circles collapse to points numerically while the
combinatorics (genus, watertightness) stay exact.

Connectivity: a structured latitude/longitude quad grid with one hole cell
per lattice point, a polar-coordinate ring stack descending to the waist
circle per bridge, a triangle "zipper" joining each hole boundary to its
ring stack, polar caps (fans, or polar bridges for the pole variants), and
an x4-mirrored copy of everything sharing the waist circles.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import cylgeom as cg
from .errors import EmbeddingError, GluingError, TopologyError
from .mld import MatchState

GENUS_BY_VARIANT = {
    # two spheres joined by B bridges have genus B - 1
    "plain": lambda k, m: 2 * k * m - 1,
    "with_poles": lambda k, m: 2 * k * m + 1,
    "with_equator": lambda k, m: (2 * k + 1) * m - 1,
    "with_equator_and_poles": lambda k, m: (2 * k + 1) * m + 1,
}

BRIDGE_COUNT = {
    "plain": lambda k, m: 2 * k * m,
    "with_poles": lambda k, m: 2 * k * m + 2,
    "with_equator": lambda k, m: (2 * k + 1) * m,
    "with_equator_and_poles": lambda k, m: (2 * k + 1) * m + 2,
}

GLUE_ALPHA = 0.05


# ---------------------------------------------------------------------------
# mesh container
# ---------------------------------------------------------------------------

@dataclass
class SurfaceMesh:
    vertices: np.ndarray          # (V, 4), on the unit three-sphere
    faces: np.ndarray             # (F, 3) vertex indices, outward-oriented
    tau_map: dict = field(default_factory=dict)   # orbit label -> log tau
    metadata: dict = field(default_factory=dict)

    def edge_array(self):
        f = self.faces
        return np.concatenate((f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]))

    def is_watertight(self):
        e = np.sort(self.edge_array(), axis=1)
        _u, counts = np.unique(e, axis=0, return_counts=True)
        return bool(np.all(counts == 2))

    def is_orientable(self):
        e = self.edge_array()
        key = e[:, 0].astype(np.int64) * len(self.vertices) + e[:, 1]
        _u, counts = np.unique(key, return_counts=True)
        return bool(np.all(counts == 1))

    def is_connected(self):
        n = len(self.vertices)
        parent = np.arange(n)

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for tri in self.faces:
            r0 = find(tri[0])
            for v in tri[1:]:
                rv = find(v)
                if rv != r0:
                    parent[rv] = r0
        used = np.unique(self.faces)
        roots = {find(i) for i in used}
        return len(roots) == 1

    def euler_characteristic(self):
        e = np.sort(self.edge_array(), axis=1)
        n_edges = len(np.unique(e, axis=0))
        return len(self.vertices) - n_edges + len(self.faces)

    def genus(self):
        if not self.is_watertight():
            raise TopologyError("mesh is not watertight")
        if not self.is_connected():
            raise TopologyError("mesh is disconnected")
        chi = self.euler_characteristic()
        if chi % 2 != 0:
            raise TopologyError(f"odd Euler characteristic {chi}")
        return (2 - chi) // 2

    def area(self):
        """Flat-chord triangle area sum (in R^4)."""
        v = self.vertices
        a = v[self.faces[:, 1]] - v[self.faces[:, 0]]
        b = v[self.faces[:, 2]] - v[self.faces[:, 0]]
        aa = np.einsum("ij,ij->i", a, a)
        bb = np.einsum("ij,ij->i", b, b)
        ab = np.einsum("ij,ij->i", a, b)
        return float(0.5 * np.sum(np.sqrt(np.maximum(aa * bb - ab * ab, 0.0))))

    def mirror_distance(self):
        """Max distance from the x4-mirrored vertex set to the vertex set
        (zero for the symmetric construction)."""
        from scipy.spatial import cKDTree
        w = self.vertices.copy()
        w[:, 3] = -w[:, 3]
        d, _ = cKDTree(self.vertices).query(w, k=1)
        return float(np.max(d))

    def export_obj(self, path):
        """ASCII OBJ; positions are stereographic projections to R^3 from the
        three-sphere point (0,0,0,1): p = (x1,x2,x3)/(1-x4)."""
        v = self.vertices
        proj = v[:, :3] / (1.0 - v[:, 3])[:, None]
        with open(path, "w") as fh:
            fh.write("# doubled-sphere initial surface\n")
            fh.write("# positions: stereographic projection of S^3 from "
                     "(0,0,0,1): p = (x1,x2,x3)/(1-x4)\n")
            fh.write(f"# k {self.metadata.get('k')} m {self.metadata.get('m')}"
                     f" variant {self.metadata.get('variant')}"
                     f" genus {self.metadata.get('genus')}\n")
            for p in proj:
                fh.write(f"v {p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n")
            for tri in self.faces:
                fh.write(f"f {tri[0] + 1} {tri[1] + 1} {tri[2] + 1}\n")

    def export_ply(self, path):
        """Binary little-endian PLY (stereographic xyz plus the raw x4)."""
        v = self.vertices
        proj = v[:, :3] / (1.0 - v[:, 3])[:, None]
        with open(path, "wb") as fh:
            fh.write((
                "ply\nformat binary_little_endian 1.0\n"
                f"element vertex {len(v)}\n"
                "property double x\nproperty double y\nproperty double z\n"
                "property double w\n"
                f"element face {len(self.faces)}\n"
                "property list uchar int vertex_indices\nend_header\n"
            ).encode())
            for p, x4 in zip(proj, v[:, 3]):
                fh.write(struct.pack("<dddd", p[0], p[1], p[2], x4))
            for tri in self.faces:
                fh.write(struct.pack("<Biii", 3, int(tri[0]), int(tri[1]),
                                     int(tri[2])))

    def write_metadata(self, path):
        with open(path, "w") as fh:
            json.dump(self.metadata, fh, indent=1, default=float)


def area_and_genus(mesh: SurfaceMesh):
    """(area, genus) with the watertightness/connectivity gates applied."""
    return mesh.area(), mesh.genus()


# ---------------------------------------------------------------------------
# embedding maps
# ---------------------------------------------------------------------------

def _sphere_point(x, y):
    cx = np.cos(x)
    return np.stack((cx * np.cos(y), cx * np.sin(y), np.sin(x)), axis=-1)


def _embed(x, y, z):
    p = _sphere_point(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    z = np.asarray(z, dtype=float)
    return np.concatenate((p * np.cos(z)[..., None],
                           np.sin(z)[..., None]), axis=-1)


def _normal_frame(x0, y0):
    p = np.array([math.cos(x0) * math.cos(y0),
                  math.cos(x0) * math.sin(y0), math.sin(x0)])
    e_x = np.array([-math.sin(x0) * math.cos(y0),
                    -math.sin(x0) * math.sin(y0), math.cos(x0)])
    e_y = np.array([-math.sin(y0), math.cos(y0), 0.0])
    return p, e_x, e_y


def _normal_coordinates(x0, y0, r, beta):
    """Geodesic polar coordinates on the two-sphere around (x0, y0)."""
    p, e_x, e_y = _normal_frame(x0, y0)
    r = np.asarray(r, dtype=float)[..., None]
    beta = np.asarray(beta, dtype=float)[..., None]
    return np.cos(r) * p + np.sin(r) * (np.cos(beta) * e_x + np.sin(beta) * e_y)


def _embed_normal(x0, y0, r, beta, z):
    q = _normal_coordinates(x0, y0, r, beta)
    z = np.asarray(z, dtype=float)
    return np.concatenate((q * np.cos(z)[..., None],
                           np.sin(z)[..., None]), axis=-1)


# ---------------------------------------------------------------------------
# height field
# ---------------------------------------------------------------------------

class HeightField:
    """Graph height tau_1 Phi (point-source representation) and bridge
    heights, in log-tau arithmetic."""

    def __init__(self, state: MatchState, q_far=12):
        self.state = state
        self.ld = state.ld
        self.m = state.m
        self.log_tau1 = state.log_tau1
        self.tau1 = state.tau1
        self.sites_s = self.ld.rld.flux_sites()
        self.sites_x = np.atleast_1d(cg.x_from_s(self.sites_s))
        self.tau_primes = np.asarray(state.tau_primes, dtype=float)
        self.q_far = q_far

    def phi_graph(self, s, theta, q_cap=None):
        """tau_1 times the point-source representation, vectorized."""
        s = np.asarray(s, dtype=float)
        theta = np.asarray(theta, dtype=float)
        total = self.ld.phi(s) + 0.0
        m = self.m
        for q in range(1, (q_cap or self.q_far) + 1):
            n = m * q
            coef = np.zeros_like(total)
            for tau_p, s_i in zip(self.tau_primes, self.sites_s):
                term = _kernel_vec(n, s, s_i)
                if s_i > 0:
                    term = term + _kernel_vec(n, s, -s_i)
                coef += 2.0 * m * tau_p * term
            add = coef * np.cos(n * theta)
            total = total + add
            if np.max(np.abs(add)) < 1e-14 * max(np.max(np.abs(total)), 1.0):
                break
        return self.tau1 * total

    def bridge_height(self, log_tau, d):
        """tau arccosh(d / tau), stable for astronomically large d/tau."""
        d = np.asarray(d, dtype=float)
        tau = math.exp(log_tau) if log_tau > -700 else 0.0
        if tau == 0.0:
            return np.zeros_like(d)
        ratio = d / tau
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            out = np.where(
                ratio > 1e8,
                tau * (np.log(2.0 * np.maximum(d, 1e-300)) - log_tau),
                tau * np.arccosh(np.maximum(ratio, 1.0)))
        return out


def _kernel_vec(n, s, xi):
    s = np.asarray(s, dtype=float)
    pref = 1.0 / (2.0 * n * (1.0 - n * n))
    t_s = np.tanh(s)
    t_xi = math.tanh(xi)
    left = s <= xi
    out = np.where(left,
                   np.exp(np.minimum(n * (s - xi), 0.0)) * (n + t_xi) * (n - t_s),
                   np.exp(np.minimum(n * (xi - s), 0.0)) * (n - t_xi) * (n + t_s))
    return pref * out


# ---------------------------------------------------------------------------
# standalone bridge patch + analytic area oracle
# ---------------------------------------------------------------------------

def catenoid_bridge(tau, x0, y0, r_outer, n_ring=64, n_rad=8):
    """Open bridge patch: both catenoid halves meeting at the waist circle,
    truncated at geodesic radius r_outer around (x0, y0) on the sphere.

    Returns (vertices, faces); the two boundary rings are the last n_ring
    vertices of each half.  Raises GluingError on a bad waist/radius order.
    """
    if tau <= 0:
        raise GluingError("waist scale must be positive")
    if not (tau < r_outer):
        raise GluingError(
            f"waist {tau:g} must lie below the truncation radius {r_outer:g}")
    radii = np.exp(np.linspace(math.log(tau), math.log(r_outer), n_rad + 1))
    radii[0] = tau
    beta = 2.0 * np.pi * np.arange(n_ring) / n_ring
    verts = [_embed_normal(x0, y0, np.full(n_ring, tau), beta, np.zeros(n_ring))]
    for r in radii[1:]:
        z = tau * np.arccosh(max(r / tau, 1.0)) * np.ones(n_ring)
        verts.append(_embed_normal(x0, y0, np.full(n_ring, r), beta, z))
    top_rings = len(verts)
    for r in radii[1:]:
        z = -tau * np.arccosh(max(r / tau, 1.0)) * np.ones(n_ring)
        verts.append(_embed_normal(x0, y0, np.full(n_ring, r), beta, z))
    V = np.concatenate(verts)

    def ring(i):
        return np.arange(n_ring) + i * n_ring

    faces = []
    for a in range(top_rings - 1):
        faces.extend(_annulus(ring(a), ring(a + 1)))
    bot = [0] + list(range(top_rings, top_rings + n_rad))
    for a, b in zip(bot[:-1], bot[1:]):
        faces.extend(_annulus(ring(b), ring(a)))
    return V, np.array(faces, dtype=int)


def _annulus(inner, outer):
    n = len(inner)
    out = []
    for j in range(n):
        jn = (j + 1) % n
        out.append((inner[j], outer[j], outer[jn]))
        out.append((inner[j], outer[jn], inner[jn]))
    return out


def catenoid_area_exact(tau, r_outer):
    """Area of both halves of a Euclidean catenoid of waist tau truncated at
    axial radius r_outer."""
    t = math.acosh(r_outer / tau)
    return 2.0 * math.pi * tau * tau * (t + math.sinh(t) * math.cosh(t))


# ---------------------------------------------------------------------------
# zipper between two closed loops
# ---------------------------------------------------------------------------

def _loop_sense(pos, normal):
    """Winding sign of a closed 3D loop about its centroid, projected on the
    given normal direction."""
    c = pos.mean(axis=0)
    d = pos - c
    cross = np.cross(d[:, :3], np.roll(d[:, :3], -1, axis=0))
    return 1.0 if float(np.dot(cross.sum(axis=0), normal)) >= 0 else -1.0


def _zipper(loop_a, pos_a, loop_b, pos_b):
    """Triangle band between two closed loops traversed in the same sense,
    loop_a outer and loop_b inner; emitted triangles wind like the loops."""
    na, nb = len(loop_a), len(loop_b)
    d = np.linalg.norm(pos_b - pos_a[0], axis=1)
    shift = int(np.argmin(d))
    loop_b = np.roll(loop_b, -shift)
    pos_b = np.roll(pos_b, -shift, axis=0)
    faces = []
    ia = ib = 0
    while ia < na or ib < nb:
        a0 = loop_a[ia % na]
        b0 = loop_b[ib % nb]
        if ia >= na:
            advance_b = True
        elif ib >= nb:
            advance_b = False
        else:
            da = np.linalg.norm(pos_a[(ia + 1) % na] - pos_b[ib % nb])
            db = np.linalg.norm(pos_b[(ib + 1) % nb] - pos_a[ia % na])
            advance_b = db <= da
        if advance_b:
            faces.append((a0, loop_b[(ib + 1) % nb], b0))
            ib += 1
        else:
            faces.append((a0, loop_a[(ia + 1) % na], b0))
            ia += 1
    return faces


# ---------------------------------------------------------------------------
# the initial surface builder
# ---------------------------------------------------------------------------

@dataclass
class MeshResolution:
    n_theta_per_m: int = 4
    n_rows_base: int = 96
    n_ring: int = 64
    n_rad: int = 6
    q_far: int = 12

    @staticmethod
    def coarse():
        return MeshResolution(n_theta_per_m=2, n_rows_base=48, n_ring=8,
                              n_rad=3, q_far=4)


class _Builder:
    def __init__(self):
        self.vertices = []
        self.faces = []
        self.waists = {}

    def add_vertices(self, arr):
        arr = np.atleast_2d(arr)
        base = len(self.vertices)
        self.vertices.extend(arr)
        return base + np.arange(arr.shape[0])

    def add_faces(self, faces):
        for tri in faces:
            self.faces.append((int(tri[0]), int(tri[1]), int(tri[2])))

    def pos(self, idx):
        return np.array([self.vertices[i] for i in np.atleast_1d(idx)])


def build_initial_surface(state: MatchState, resolution: MeshResolution = None,
                          embed_check=True) -> SurfaceMesh:
    """Doubled sphere with catenoidal bridges from a solved matching state."""
    res = resolution or MeshResolution()
    m, k, variant = state.m, state.k, state.variant
    hf = HeightField(state, q_far=res.q_far)
    has_pole = variant in ("with_poles", "with_equator_and_poles")

    circles = []                  # (latitude x, log tau), both hemispheres
    for x_i, tp in zip(hf.sites_x, state.tau_primes):
        lt = state.log_tau1 + math.log(tp)
        circles.append((float(x_i), lt))
        if x_i > 0:
            circles.append((-float(x_i), lt))
    log_tau_pol = state.log_tau_pol if has_pole else None

    n_theta = res.n_theta_per_m * m
    # gluing radii: 3 delta'_p = 3 tau_p^alpha, capped so the blend zone stays
    # inside one grid cell around the lattice point
    theta_half = math.pi / n_theta * min(math.cos(x) for x, _ in circles)
    xs_sorted = sorted(x for x, _ in circles)
    gaps = [b - a for a, b in zip(xs_sorted[:-1], xs_sorted[1:])]
    if has_pole:
        gaps.append(math.pi / 2 - xs_sorted[-1])
    sep = min([2.0 * math.pi / m * min(math.cos(x) for x, _ in circles)] + gaps)

    rows_range = math.pi - 0.5 if not has_pole else math.pi - 0.2
    n_rows = max(res.n_rows_base, 8 * len(circles))
    h_row = rows_range / n_rows

    def glue_radius(lt):
        tau = math.exp(lt) if lt > -700 else 0.0
        r3 = 3.0 * math.exp(GLUE_ALPHA * lt)
        r = min(r3, 0.3 * sep, 0.6 * theta_half, 0.3 * h_row)
        if tau >= r:
            raise GluingError("waist scale exceeds the gluing radius")
        return r

    r_glue = {x: glue_radius(lt) for x, lt in circles}
    if has_pole:
        r_glue["pole"] = min(3.0 * math.exp(GLUE_ALPHA * log_tau_pol),
                             0.3 * sep, 0.2)

    x_cap = math.pi / 2 - (max(2.0 * r_glue["pole"], 0.12) if has_pole
                           else 0.25)
    base = np.linspace(-x_cap, x_cap, n_rows)
    h_row = base[1] - base[0]
    guard = {x: max(1.3 * r_glue[x], 0.35 * h_row) for x, _ in circles}
    rows = [x for x in base
            if all(abs(x - xc) > guard[xc] + 0.45 * h_row for xc, _ in circles)]
    for xc, _ in circles:
        rows.extend([xc - guard[xc], xc + guard[xc]])
    rows = np.array(sorted(rows))
    thetas = 2.0 * math.pi * (np.arange(n_theta) + 0.5) / n_theta

    builder = _Builder()
    for sheet in (+1, -1):
        _build_sheet(builder, state, hf, rows, thetas, circles, r_glue,
                     log_tau_pol, res, sheet)

    mesh = SurfaceMesh(
        vertices=np.array(builder.vertices),
        faces=np.array(builder.faces, dtype=int),
        tau_map={f"circle_{i}": lt for i, (_x, lt) in enumerate(circles)},
        metadata={"k": k, "m": m, "variant": variant,
                  "log_tau1": state.log_tau1,
                  "bridge_count": BRIDGE_COUNT[variant](k, m),
                  "genus_formula": GENUS_BY_VARIANT[variant](k, m)},
    )
    if has_pole:
        mesh.tau_map["pole"] = log_tau_pol
    mesh.vertices /= np.linalg.norm(mesh.vertices, axis=1)[:, None]
    mesh.metadata["genus"] = mesh.genus()
    mesh.metadata["area"] = mesh.area()
    if embed_check:
        _embedding_heuristic(state, hf, circles, r_glue)
    return mesh


def _build_sheet(builder, state, hf, rows, thetas, circles, r_glue,
                 log_tau_pol, res, sheet):
    m = state.m
    n_theta = len(thetas)
    n_rows = len(rows)
    X, T = np.meshgrid(rows, thetas, indexing="ij")
    S = cg.s_from_x(X)
    Z = sheet * hf.phi_graph(S.ravel(), T.ravel()).reshape(X.shape)
    grid_idx = builder.add_vertices(
        _embed(X, T, Z).reshape(-1, 4)).reshape(X.shape)

    hole = np.zeros((n_rows - 1, n_theta), dtype=bool)
    hole_centers = {}
    for x_c, lt in circles:
        i_row = int(np.searchsorted(rows, x_c)) - 1
        for j in range(m):
            th_c = 2.0 * math.pi * j / m
            j_col = (int(np.searchsorted(thetas, th_c)) - 1) % n_theta
            hole[i_row, j_col] = True
            hole_centers[(i_row, j_col)] = (x_c, th_c, lt)

    faces = []
    for i in range(n_rows - 1):
        for j in range(n_theta):
            if hole[i, j]:
                continue
            jn = (j + 1) % n_theta
            a, b = grid_idx[i, j], grid_idx[i + 1, j]
            c, d = grid_idx[i + 1, jn], grid_idx[i, jn]
            if sheet > 0:
                faces.extend([(a, b, c), (a, c, d)])
            else:
                faces.extend([(a, c, b), (a, d, c)])
    builder.add_faces(faces)

    # bridge holes: boundary cycles counterclockwise in the (x, theta) chart
    for (i_row, j_col), (x_c, th_c, lt) in hole_centers.items():
        jn = (j_col + 1) % n_theta
        loop = np.array([grid_idx[i_row, j_col], grid_idx[i_row + 1, j_col],
                         grid_idx[i_row + 1, jn], grid_idx[i_row, jn]])
        _attach_bridge(builder, state, hf, x_c, th_c, lt, r_glue[x_c],
                       loop, res, sheet, waist_key=(x_c, th_c))

    # polar caps / polar bridges: the cap plays the role of a missing face,
    # so its boundary is traversed opposite to the adjacent grid quads
    # (theta-decreasing at the north cap, theta-increasing at the south)
    ring_top = grid_idx[-1, :]
    ring_bot = grid_idx[0, :]
    for ring, x_pole in ((ring_top, math.pi / 2), (ring_bot, -math.pi / 2)):
        loop = np.array(ring)[::-1] if x_pole > 0 else np.array(ring)
        if log_tau_pol is None:
            s_pole = 40.0 if x_pole > 0 else -40.0
            z = sheet * float(hf.ld.phi(s_pole)) * hf.tau1
            pv = builder.add_vertices(_embed(x_pole, 0.0, z).reshape(1, 4))[0]
            cap = []
            for j in range(n_theta):
                jn = (j + 1) % n_theta
                cap.append((loop[j], loop[jn], pv))
            if sheet < 0:
                cap = [(t[0], t[2], t[1]) for t in cap]
            builder.add_faces(cap)
        else:
            _attach_bridge(builder, state, hf, x_pole, 0.0, log_tau_pol,
                           r_glue["pole"], loop, res, sheet,
                           waist_key=("pole", x_pole), polar=True)


def _attach_bridge(builder, state, hf, x_c, th_c, log_tau, r_g, hole_loop,
                   res, sheet, waist_key, polar=False):
    """Ring stack from the waist out to just inside the hole boundary, then
    a zipper to the hole boundary.  The waist ring is shared between sheets
    via the builder cache."""
    n_ring = res.n_ring
    hole_pos = builder.pos(hole_loop)
    center3 = _normal_coordinates(x_c, th_c, 0.0, 0.0)
    # stay inside the hole: distances to corners and edge midpoints
    probe = np.concatenate((hole_pos[:, :3],
                            0.5 * (hole_pos[:, :3]
                                   + np.roll(hole_pos[:, :3], -1, axis=0))))
    probe = probe / np.linalg.norm(probe, axis=1)[:, None]
    chord = np.linalg.norm(probe - center3, axis=1)
    r_outer = 0.75 * float(np.min(2.0 * np.arcsin(np.clip(chord / 2.0, 0, 1))))

    tau = math.exp(log_tau) if log_tau > -700 else 0.0
    n_rad = res.n_rad
    if tau > 0.0:
        log_hi = math.log(r_outer)
        radii = np.exp(np.linspace(log_tau, log_hi, n_rad + 1))
        radii[0] = tau
    else:
        radii = np.concatenate(
            ([0.0], np.exp(np.linspace(math.log(r_outer) - 6.0,
                                       math.log(r_outer), n_rad))))
    beta = 2.0 * np.pi * np.arange(n_ring) / n_ring

    rings = []
    for idx_r, r in enumerate(radii):
        rr = np.full(n_ring, r)
        if polar:
            z = sheet * _polar_zone_height(hf, log_tau, rr, r_g)
        else:
            z = sheet * _bridge_zone_height(state, hf, x_c, th_c, log_tau,
                                            rr, beta, r_g)
        pos = _embed_normal(x_c, th_c, rr, beta, z)
        if idx_r == 0:
            if waist_key in builder.waists:
                ring_idx = builder.waists[waist_key]
            else:
                ring_idx = builder.add_vertices(pos)
                builder.waists[waist_key] = ring_idx
        else:
            ring_idx = builder.add_vertices(pos)
        rings.append(np.asarray(ring_idx))

    # match the ring winding to the hole-boundary winding (both measured
    # about the outward sphere normal at the bridge point)
    normal = center3.reshape(3)
    outer_pos = builder.pos(rings[-1])
    if _loop_sense(outer_pos, normal) != _loop_sense(hole_pos, normal):
        rings = [r[::-1] for r in rings]
        outer_pos = outer_pos[::-1]

    faces = []
    for a, b in zip(rings[:-1], rings[1:]):
        faces.extend(_annulus(a, b))
    faces.extend(_zipper(np.asarray(hole_loop, dtype=int), hole_pos,
                         np.asarray(rings[-1], dtype=int), outer_pos))
    if sheet < 0:
        faces = [(t[0], t[2], t[1]) for t in faces]
    builder.add_faces(faces)


def _bridge_zone_height(state, hf, x_c, th_c, log_tau, r, beta, r_g):
    bridge = hf.bridge_height(log_tau, r)
    q = _normal_coordinates(x_c, th_c, r, beta)
    x = np.arcsin(np.clip(q[..., 2], -1.0, 1.0))
    y = np.arctan2(q[..., 1], q[..., 0])
    s = cg.s_from_x(np.clip(x, -1.55, 1.55))
    graph = hf.phi_graph(s, y)
    w = cg.psi_cut(2.0 * r_g / 3.0, r_g, r)
    return (1.0 - w) * bridge + w * graph


def _polar_zone_height(hf, log_tau, r, r_g):
    bridge = hf.bridge_height(log_tau, r)
    graph = np.full_like(np.asarray(r, dtype=float),
                         float(hf.ld.phi(40.0)) * hf.tau1)
    w = cg.psi_cut(2.0 * r_g / 3.0, r_g, r)
    return (1.0 - w) * bridge + w * graph


def _embedding_heuristic(state, hf, circles, r_glue):
    """Waist-versus-graph ordering: inside the glue radius the two sheets
    must be separated by at least the bridge profile, which fails only if
    the graph height dips below the waist-circle scale."""
    for x_c, lt in circles:
        r_g = r_glue[x_c]
        s_c = cg.s_from_x(x_c) if abs(x_c) < 1.55 else 40.0
        graph = float(hf.phi_graph(np.array([s_c + 3.0 * r_g]),
                                   np.array([math.pi / state.m]))[0])
        bridge_top = float(hf.bridge_height(lt, np.array([r_g]))[0])
        if graph < 0 or (bridge_top > 0 and graph > 0
                         and bridge_top > 1e3 * graph):
            raise EmbeddingError(
                f"bridge at latitude {x_c:.3f} incompatible with the graph "
                "sheets")


# ---------------------------------------------------------------------------
# reference meshes and reports
# ---------------------------------------------------------------------------

def sphere_test_mesh(n_lat=60, n_lon=120):
    """Round unit two-sphere (embedded at x4 = 0) as a closed lat-long mesh."""
    xs = np.linspace(-math.pi / 2, math.pi / 2, n_lat + 1)[1:-1]
    ths = 2.0 * math.pi * np.arange(n_lon) / n_lon
    X, T = np.meshgrid(xs, ths, indexing="ij")
    V = _embed(X, T, np.zeros_like(X)).reshape(-1, 4)
    idx = np.arange(V.shape[0]).reshape(X.shape)
    faces = []
    for i in range(len(xs) - 1):
        for j in range(n_lon):
            jn = (j + 1) % n_lon
            a, b, c, d = idx[i, j], idx[i + 1, j], idx[i + 1, jn], idx[i, jn]
            faces.extend([(a, b, c), (a, c, d)])
    south = V.shape[0]
    north = V.shape[0] + 1
    V = np.concatenate((V, _embed(-math.pi / 2, 0.0, 0.0).reshape(1, 4),
                        _embed(math.pi / 2, 0.0, 0.0).reshape(1, 4)))
    for j in range(n_lon):
        jn = (j + 1) % n_lon
        faces.append((idx[0, j], idx[0, jn], south))
        faces.append((idx[-1, jn], idx[-1, j], north))
    return SurfaceMesh(V, np.array(faces, dtype=int),
                       metadata={"reference": "unit sphere"})


def two_spheres_mesh():
    """Disjoint union of two small spheres (negative control for the
    connectivity gate)."""
    a = sphere_test_mesh(16, 32)
    b = sphere_test_mesh(16, 32)
    shift = a.vertices.shape[0]
    verts = np.concatenate((a.vertices, b.vertices))
    faces = np.concatenate((a.faces, b.faces + shift))
    return SurfaceMesh(verts, faces, metadata={"reference": "two spheres"})


def bridge_gap_report(state: MatchState, q_cap=512):
    """C0 gap between the catenoid height and the graph at the gluing radius
    delta'_p = tau_p^alpha, reported relative to tau_p^{1 - alpha/9}."""
    hf = HeightField(state)
    out = []
    for x_i, tp in zip(hf.sites_x, state.tau_primes):
        lt = state.log_tau1 + math.log(tp)
        tau = math.exp(lt) if lt > -700 else 0.0
        if tau == 0.0:
            out.append({"x": float(x_i), "gap": 0.0, "bound": 0.0,
                        "ratio": 0.0})
            continue
        d = math.exp(GLUE_ALPHA * lt)
        s_c = cg.s_from_x(x_i)
        bridge = float(hf.bridge_height(lt, np.array([d]))[0])
        # graph height at geodesic distance d from the point, theta direction
        d_chi = d / cg.sech(s_c)
        graph = float(hf.phi_graph(np.array([s_c]),
                                   np.array([d_chi]), q_cap=q_cap)[0])
        gap = abs(bridge - graph)
        bound = math.exp((1.0 - GLUE_ALPHA / 9.0) * lt)
        out.append({"x": float(x_i), "gap": gap, "bound": bound,
                    "ratio": gap / bound})
    return out
