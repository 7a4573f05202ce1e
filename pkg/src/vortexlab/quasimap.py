"""Holomorphic-pair data for abelian toric targets and the component-wise
correspondence onto vortices.

A quasimap is presented by per-coordinate zero positions (in component-local
cylinder coordinates), per-end asymptotic values, and gluing parameters: on
genus-zero cylinder components every holomorphic pair is complex-gauge
equivalent to such a normal form.  Seeds pair a product of elementary factors
prod_m (e^{-z} - e^{-z_m}) with the end twists forced by the degrees, and a
radial real rescale putting the boundary rings on the moment-map zero level;
the correspondence solves each connected piece and checks that the limit
orbits on the two sides of every kept node agree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .fields import GaugedField, lambda_integral, limit_orbit
from .modgraph import ModularGraph
from .solver import SolveConfig, newton_solve
from .surface import GluedSurface, SurfaceError
from .target import (
    TargetSpace,
    fingerprint,
    fingerprint_distance,
    is_semistable,
    kempf_ness_shift,
)

__all__ = [
    "QuasimapError",
    "QuasimapData",
    "StableVortexFamily",
    "base_points",
    "is_stable_quasimap",
    "build_seed",
    "correspondence",
    "MAX_DEGREE",
]

MAX_DEGREE = 4


class QuasimapError(ValueError):
    """Invalid quasimap data (unstable, out-of-range zeros, bad degrees)."""


@dataclass
class QuasimapData:
    """Zeros + asymptotics presentation of a holomorphic pair on a
    pre-stable curve.

    ``zeros`` maps vertex -> tuple over coordinates of complex zero positions
    in the component's local cylinder coordinate; degrees are the zero counts.
    ``asymptotics`` maps end anchors (("leg", j) or ("node", edge)) to values
    in C^n; missing anchors default to the all-ones direction.
    ``deltas`` maps edge id -> gluing parameter (0 keeps the node).
    """

    graph: ModularGraph
    target: TargetSpace
    zeros: dict
    asymptotics: dict = field(default_factory=dict)
    deltas: dict = field(default_factory=dict)

    def degrees(self, vertex) -> tuple:
        zs = self.zeros.get(vertex, ())
        if not zs:
            return tuple(0 for _ in range(self.target.n))
        return tuple(len(z) for z in zs)

    def total_degree(self) -> tuple:
        tot = np.zeros(self.target.n, dtype=int)
        for v in self.graph.vertex_ids():
            tot += np.asarray(self.degrees(v))
        return tuple(int(x) for x in tot)

    def asymptotic(self, anchor) -> np.ndarray:
        key = tuple(anchor)
        if key in self.asymptotics:
            return np.asarray(self.asymptotics[key], dtype=complex)
        if key[:2] == ("node",) or (key and key[0] == "node"):
            short = ("node", key[1])
            if short in self.asymptotics:
                return np.asarray(self.asymptotics[short], dtype=complex)
        return np.ones(self.target.n, dtype=complex)


def base_points(q: QuasimapData) -> dict:
    """Common zeros of all coordinates per vertex (the common-vanishing locus
    of the seed section), within a grid-scale tolerance."""
    out = {}
    for v in q.graph.vertex_ids():
        zs = q.zeros.get(v)
        if not zs or len(zs) < q.target.n:
            out[v] = ()
            continue
        lists = [list(map(complex, z)) for z in zs]
        if any(len(z) == 0 for z in lists):
            out[v] = ()
            continue
        common = []
        for z0 in lists[0]:
            if all(any(abs(z0 - z) < 1e-9 for z in zl) for zl in lists[1:]):
                common.append(z0)
        out[v] = tuple(sorted(common, key=lambda z: (z.real, z.imag)))
    return out


def _ends_of_vertex(q: QuasimapData, v, broken) -> list:
    ends = [("leg", idx) for idx in q.graph.legs_at(v)]
    for eid, (a, b) in enumerate(q.graph.edges):
        if eid in broken:
            if a == v:
                ends.append(("node", eid))
            if b == v:
                ends.append(("node", eid))
    return ends


def is_stable_quasimap(q: QuasimapData, components: Optional[dict] = None,
                       margin: float = 0.5, pin_marked_cylinders: bool = False,
                       broken_edges=None) -> bool:
    """Stability: the graph is pre-stable, base points stay away from special
    points, and every two-ended genus-zero vertex of the NODAL structure is
    non-constant (positive degree or distinct declared end asymptotics).

    Edges with nonzero gluing parameter are smoothed, so they impose no
    per-vertex constraint (the vertices are charts of one smooth component);
    ``broken_edges`` overrides which edges count as kept nodes (default: the
    edges whose delta is 0).  With meshes supplied, zero positions must stay
    inside the meshed interior (markings live at the truncated ends).
    ``pin_marked_cylinders`` relaxes the non-constancy rule for a cylinder
    both of whose special points are markings: its translation automorphism
    is pinned by the mesh, so constant data is a legitimate desk-scale input.
    """
    if broken_edges is None:
        broken_edges = {eid for eid in range(len(q.graph.edges))
                        if q.deltas.get(eid, 0) == 0}
    broken_edges = set(broken_edges)
    for v in q.graph.vertex_ids():
        g, s = q.graph.genus[v], q.graph.special_points(v)
        if (g == 0 and s < 2) or (g == 1 and s < 1):
            return False  # not pre-stable
    for v in q.graph.vertex_ids():
        degs = q.degrees(v)
        if any(d > MAX_DEGREE for d in degs):
            raise QuasimapError(f"degree cap {MAX_DEGREE} exceeded on vertex {v!r}")
        if components and v in components:
            mesh = components[v]
            for zl in q.zeros.get(v, ()):
                for z in zl:
                    z = complex(z)
                    if mesh.left.kind == "truncation" and z.real < mesh.r_min + margin:
                        return False
                    if mesh.right.kind == "truncation" and z.real > mesh.r_max - margin:
                        return False
        glued_incident = any(
            eid not in broken_edges and v in q.graph.edges[eid]
            for eid in range(len(q.graph.edges))
        )
        if glued_incident:
            continue  # chart of a smooth glued component
        if q.graph.genus[v] == 0 and q.graph.special_points(v) == 2:
            if sum(degs) > 0:
                continue
            if pin_marked_cylinders and len(q.graph.legs_at(v)) == 2:
                continue
            ends = _ends_of_vertex(q, v, broken_edges)
            vals = [q.asymptotic(e) for e in ends]
            if len(vals) >= 2:
                fps = []
                for val in vals:
                    if not is_semistable(q.target, val):
                        return False
                    s, _ = kempf_ness_shift(q.target, val)
                    w = q.target.weights.astype(float)
                    fps.append(fingerprint(q.target, np.exp(w.T @ s) * val))
                if all(fingerprint_distance(fps[0], fp) < 1e-9 for fp in fps[1:]):
                    return False  # constant on a two-pointed sphere
            else:
                return False
    return True


# -- seed construction --------------------------------------------------------

def _left_twist(target: TargetSpace, degrees) -> np.ndarray:
    """Integer end twist at the far left end forced by the zero counts."""
    degrees = np.asarray(degrees, dtype=float)
    if np.all(degrees == 0):
        return np.zeros(target.k)
    if target.k != 1:
        raise QuasimapError("positive-degree seeds are supported for rank-1 torus only")
    w = target.weights[0].astype(float)
    if np.any(w <= 0):
        raise QuasimapError("positive-degree seeds need positive weights")
    slopes = degrees / w
    lam = float(np.max(slopes))
    if abs(lam - round(lam)) > 1e-12:
        raise QuasimapError(
            f"maximal degree/weight slope {lam} is not an integer twist"
        )
    return np.array([round(lam)])


def _piece_zeros_global(q: QuasimapData, surface: GluedSurface, piece_index: int):
    piece = surface.pieces[piece_index]
    per_coord = [[] for _ in range(q.target.n)]
    for strip in piece.strips:
        zs = q.zeros.get(strip.vertex, ())
        for j, zl in enumerate(zs):
            for z in zl:
                per_coord[j].append(piece.local_z_to_global(strip.vertex, complex(z)))
    return per_coord


def build_seed(
    q: QuasimapData,
    surface: GluedSurface,
    piece_index: int = 0,
    margin: float = 0.5,
) -> GaugedField:
    """Holomorphic seed on one piece: section from elementary factors with the
    degree-forced end twists and a radial rescale pinning the boundary rings
    to the moment-map zero level.  The dbar residual is O(h^2)."""
    piece = surface.pieces[piece_index]
    t = q.target
    zeros = _piece_zeros_global(q, surface, piece_index)
    degrees = [len(z) for z in zeros]
    r_lo, r_hi = piece.r[0], piece.r[-1]
    for zl in zeros:
        for z in zl:
            if not (r_lo + margin <= z.real <= r_hi - margin):
                raise QuasimapError(f"zero at {z} outside the meshed interior")

    lam_left = _left_twist(t, degrees)
    lam_right = np.zeros(t.k)
    x_right_dir = q.asymptotic(piece.right.anchor)
    if not is_semistable(t, x_right_dir):
        raise QuasimapError("right-end asymptotic direction is unstable")
    s_r, _ = kempf_ness_shift(t, x_right_dir)
    w = t.weights.astype(float)
    x_right = np.exp(w.T @ s_r) * x_right_dir

    # section assembled in log space: log c_j + sum_m Log(e^{-z} - e^{-z_m})
    r = piece.r[:, None]
    theta = piece.h_theta * np.arange(piece.n_theta)[None, :]
    z = r + 1j * theta
    log_u = np.zeros((piece.n_r, piece.n_theta, t.n), dtype=complex)
    dead = np.zeros(t.n, dtype=bool)
    with np.errstate(divide="ignore"):  # a zero may land exactly on a site
        for j in range(t.n):
            tail = complex(0)
            for zm in zeros[j]:
                log_u[:, :, j] += np.log(np.exp(-z) - np.exp(-complex(zm)))
                tail += np.log(-np.exp(-complex(zm)))
            if abs(x_right[j]) == 0.0:
                if degrees[j] > 0:
                    raise QuasimapError(
                        f"coordinate {j}: zero right asymptotic but positive degree"
                    )
                dead[j] = True
                continue
            log_u[:, :, j] += np.log(x_right[j]) - tail

    # twist factor: the ramp is confined to a window around the zeros so the
    # far rings see exactly constant twists (no profile junk in the tails)
    all_zeros = [z for zl in zeros for z in zl]
    span = r_hi - r_lo
    width = min(8.0, max(span - 4.0, 2 * piece.h_r))
    center = float(np.mean([z.real for z in all_zeros])) if all_zeros else 0.5 * (r_lo + r_hi)
    center = float(np.clip(center, r_lo + 2.0 + width / 2, r_hi - 2.0 - width / 2))
    probe = GaugedField(
        surface, piece_index, t,
        a_r=np.zeros((piece.n_r, piece.n_theta, t.k)),
        a_theta=np.zeros((piece.n_r, piece.n_theta, t.k)),
        u=np.zeros((piece.n_r, piece.n_theta, t.n), dtype=complex),
        lam_left=lam_left, lam_right=lam_right,
        twist_center=center, twist_width=width,
    )
    I_lam = lambda_integral(probe)  # (n_r, k)
    log_u += np.einsum("aj,xa->xj", w, I_lam)[:, None, :]

    # per-ring real rescale onto the moment-map zero level: a radial complex
    # gauge guess that keeps holomorphy and localizes the residual
    s_prof = np.zeros((piece.n_r, t.k))
    for i in range(piece.n_r):
        vals = np.where(dead[None, :], 0.0, np.exp(log_u[i].real))
        moduli = np.sqrt(np.mean(vals**2, axis=0))
        if not is_semistable(t, moduli):
            raise QuasimapError(f"ring {i} is not semistable")
        s, _ = kempf_ness_shift(t, moduli)
        s_prof[i] = -s  # u e^{-(w xi)} with xi = -s sits on the zero level
    log_u -= np.einsum("aj,xa->xj", w, s_prof)[:, None, :]
    ds_prof = np.empty_like(s_prof)
    ds_prof[1:-1] = (s_prof[2:] - s_prof[:-2]) / (2.0 * piece.h_r)
    ds_prof[0] = (-3 * s_prof[0] + 4 * s_prof[1] - s_prof[2]) / (2.0 * piece.h_r)
    ds_prof[-1] = (3 * s_prof[-1] - 4 * s_prof[-2] + s_prof[-3]) / (2.0 * piece.h_r)

    u = np.where(dead[None, None, :], 0.0, np.exp(log_u))
    a_theta = np.broadcast_to(-ds_prof[:, None, :],
                              (piece.n_r, piece.n_theta, t.k)).copy()
    return GaugedField(
        surface, piece_index, t,
        a_r=np.zeros((piece.n_r, piece.n_theta, t.k)),
        a_theta=a_theta,
        u=u,
        lam_left=lam_left,
        lam_right=lam_right,
        twist_center=center,
        twist_width=width,
    )


# -- correspondence -----------------------------------------------------------

@dataclass
class StableVortexFamily:
    fields: dict          # piece index -> converged GaugedField
    reports: dict         # piece index -> SolveReport
    connect_gaps: dict    # edge id -> measured fingerprint gap
    tol_connect: float
    evaluations: dict     # marking index -> Fingerprint

    @property
    def total_energy(self) -> float:
        return sum(rep.final_energy for rep in self.reports.values())

    def connected(self) -> bool:
        return all(g <= self.tol_connect for g in self.connect_gaps.values())


def _find_end(surface: GluedSurface, anchor: tuple):
    for pi, piece in enumerate(surface.pieces):
        if tuple(piece.left.anchor) == tuple(anchor):
            return pi, "left"
        if tuple(piece.right.anchor) == tuple(anchor):
            return pi, "right"
    raise SurfaceError(f"no piece end with anchor {anchor}")


def _decay_rate_estimate(f: GaugedField, end: str) -> float:
    """Crude log-slope of the ring energy density toward an end (positive)."""
    from .fields import energy_density

    p = f.piece
    dens = energy_density(f).sum(axis=1) * p.h_theta
    n = p.n_r
    lo, hi = (int(0.55 * n), int(0.9 * n)) if end == "right" else (int(0.1 * n), int(0.45 * n))
    vals = np.maximum(dens[lo:hi], 1e-300)
    r = p.r[lo:hi]
    slope = np.polyfit(r, np.log(vals), 1)[0]
    rate = -slope if end == "right" else slope
    return max(rate, 0.1)


def default_tol_connect(surface: GluedSurface, gamma_hat: float) -> float:
    piece = surface.pieces[0]
    h = max(piece.h_r, piece.h_theta)
    return 10.0 * (h**2 + math.exp(-gamma_hat * surface.break_radius))


def correspondence(
    q: QuasimapData,
    surface: GluedSurface,
    cfg: Optional[SolveConfig] = None,
    tol_connect: Optional[float] = None,
) -> StableVortexFamily:
    """Solve every meshed piece and verify the kept nodes connect.

    Each piece gets its seed from the quasimap data and its own Newton solve;
    for every broken edge the limit orbits computed independently on the two
    sides must agree within tol_connect (measured gaps are reported either
    way).  Marking evaluations are collected from the leg-anchored ends.
    """
    cfg = cfg or SolveConfig()
    if not is_stable_quasimap(q, surface.components, pin_marked_cylinders=True,
                              broken_edges=surface.broken_edges):
        raise QuasimapError("quasimap data is not stable")
    fields_out, reports = {}, {}
    for pi in range(len(surface.pieces)):
        seed = build_seed(q, surface, pi)
        solved, _, report = newton_solve(seed, cfg)
        fields_out[pi] = solved
        reports[pi] = report

    gammas = []
    for pi, fsol in fields_out.items():
        gammas.append(_decay_rate_estimate(fsol, "right"))
    gamma_hat = float(np.median(gammas)) if gammas else 1.0
    tol = tol_connect if tol_connect is not None else default_tol_connect(surface, gamma_hat)

    gaps = {}
    for eid in surface.broken_edges:
        pi_p, end_p = _find_end(surface, ("node", eid, "+"))
        pi_m, end_m = _find_end(surface, ("node", eid, "-"))
        fp_p = limit_orbit(fields_out[pi_p], end_p)
        fp_m = limit_orbit(fields_out[pi_m], end_m)
        gaps[eid] = fingerprint_distance(fp_p, fp_m)

    evaluations = {}
    for idx, v in q.graph.legs:
        try:
            pi, side = _find_end(surface, ("leg", idx))
        except SurfaceError:
            continue  # marking on an unmeshed component
        evaluations[idx] = limit_orbit(fields_out[pi], side)

    fam = StableVortexFamily(fields_out, reports, gaps, tol, evaluations)
    bad = {e: g for e, g in gaps.items() if g > tol}
    if bad:
        raise QuasimapError(
            f"connectedness violated beyond tolerance {tol:.3e}: gaps {bad} "
            "(discretization too coarse or mismatched node data)"
        )
    return fam
