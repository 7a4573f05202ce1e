"""Newton solve transforming holomorphic pairs into vortices.

The unknown is a real moment-direction gauge parameter xi on grid sites
(Dirichlet zero at truncation rings).  Each Newton step solves the exact
positive Jacobian of the discrete gauge step (composed-centered Laplacian +
Gram(u)) by conjugate gradients, optionally preconditioned by the core/sleeve
patched inverse assembled from per-component factorizations on the broken
surface; a backtracking line search guards the large-residual regime.  The
five-point operator of the continuum linearization is exposed separately
(linearized_apply) and is the default system solved by cg_solve.  Local
gauge-fixing diagnostics (flat complex gauge on a patch, Coulomb gauge) share
the same stencils.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fields import (
    FieldError,
    GaugedField,
    apply_complex_gauge,
    curvature,
    energy,
    gram_field,
    limit_orbit,
    vortex_residual,
)
from .surface import CoreSleeve, core_sleeve
from .target import TargetError

__all__ = [
    "SolverError",
    "SolveConfig",
    "SolveReport",
    "graph_laplacian",
    "linearized_apply",
    "moment_functional",
    "cg_solve",
    "gauge_step_jacobian_apply",
    "gauge_update",
    "newton_solve",
    "flat_gauge_fix",
    "coulomb_gauge_local",
    "PatchedPreconditioner",
    "patched_preconditioner",
    "operator_defect",
]


class SolverError(RuntimeError):
    """Divergence, SPD violation, or an unstable seed."""


@dataclass
class SolveConfig:
    newton_tol: float = 1e-8
    max_newton: int = 30
    cg_tol: float = 1e-10
    max_cg: int = 20000
    damping: bool = True
    preconditioner: str = "none"  # "none" | "patched"

    def __post_init__(self):
        if self.newton_tol <= 0 or self.cg_tol <= 0:
            raise SolverError("tolerances must be positive")
        if self.max_newton < 1 or self.max_cg < 1:
            raise SolverError("iteration caps must be at least 1")
        if self.preconditioner not in ("none", "patched"):
            raise SolverError(f"unknown preconditioner {self.preconditioner!r}")


@dataclass
class SolveReport:
    residual_sup: list = field(default_factory=list)
    residual_l2: list = field(default_factory=list)
    cg_iterations: list = field(default_factory=list)
    step_sizes: list = field(default_factory=list)
    final_energy: float = float("nan")
    xi_norm: float = 0.0
    converged: bool = False

    @property
    def newton_iterations(self) -> int:
        return len(self.cg_iterations)

    def as_dict(self) -> dict:
        return {
            "residual_sup": self.residual_sup,
            "residual_l2": self.residual_l2,
            "cg_iterations": self.cg_iterations,
            "step_sizes": self.step_sizes,
            "final_energy": self.final_energy,
            "xi_norm": self.xi_norm,
            "converged": self.converged,
            "newton_iterations": self.newton_iterations,
        }


# -- discrete operators -------------------------------------------------------

def _zero_boundary(piece, arr: np.ndarray) -> np.ndarray:
    out = arr.copy()
    out[0] = 0.0
    out[-1] = 0.0
    return out


def graph_laplacian(piece, xi: np.ndarray) -> np.ndarray:
    """Positive five-point Laplacian, Dirichlet at the boundary rings,
    periodic in theta (twists are absorbed into the grid layout)."""
    h2r = piece.h_r**2
    h2t = piece.h_theta**2
    xi = _zero_boundary(piece, xi)
    out = (2.0 / h2r + 2.0 / h2t) * xi
    out[1:-1] -= (xi[2:] + xi[:-2]) / h2r
    out -= (np.roll(xi, 1, axis=1) + np.roll(xi, -1, axis=1)) / h2t
    return _zero_boundary(piece, out)


def linearized_apply(f: GaugedField, xi: np.ndarray) -> np.ndarray:
    """Laplacian plus the pointwise Gram operator of the torus action at u."""
    out = graph_laplacian(f.piece, xi)
    out += np.einsum("xyab,xyb->xya", gram_field(f), _zero_boundary(f.piece, xi))
    return _zero_boundary(f.piece, out)


def moment_functional(f: GaugedField, xi) -> np.ndarray:
    """Vortex residual of the complex-gauged field; equals
    *F(a) + Lap(xi) - Phi(e^{-w xi} u) up to the stencil's O(h^2)."""
    p = f.piece
    xi = np.asarray(xi, dtype=float)
    if xi.shape == (f.target.k,):
        xi = np.broadcast_to(xi, (p.n_r, p.n_theta, f.target.k)).copy()
    return vortex_residual(apply_complex_gauge(f, xi))


def _centered_r_dirichlet(piece, xi: np.ndarray) -> np.ndarray:
    """Centered radial derivative of a Dirichlet parameter; the boundary rows
    of the output are zero (the boundary data is never touched)."""
    h = piece.h_r
    xi = _zero_boundary(piece, xi)
    out = np.zeros_like(xi)
    out[1:-1] = (xi[2:] - xi[:-2]) / (2.0 * h)
    return out


def gauge_update(f: GaugedField, xi: np.ndarray) -> GaugedField:
    """Complex gauge step used inside Newton: identical to
    apply_complex_gauge except that the connection shift of the Dirichlet
    parameter leaves the boundary rings untouched, which makes the composed
    residual exactly quadratic around the iterate."""
    p = f.piece
    xi = _zero_boundary(p, xi)
    w = f.target.weights.astype(float)
    u = f.u * np.exp(-np.einsum("aj,xya->xyj", w, xi))
    dth = (np.roll(xi, -1, axis=1) - np.roll(xi, 1, axis=1)) / (2.0 * p.h_theta)
    return f.with_fields(
        a_r=f.a_r + _zero_boundary(p, dth),
        a_theta=f.a_theta - _centered_r_dirichlet(p, xi),
        u=u,
    )


def gauge_step_jacobian_apply(f: GaugedField, xi: np.ndarray) -> np.ndarray:
    """Exact Jacobian of xi -> vortex_residual(gauge_update(f, xi)) at 0.

    The curvature response of the centered shift is the composed-centered
    (wide) Laplacian, symmetric positive here because the centered Dirichlet
    derivative is skew; the five-point operator would overdamp the
    grid-frequency components and stall the Newton tail.
    """
    p = f.piece
    xi = _zero_boundary(p, xi)
    out = -_centered_r_dirichlet(p, _centered_r_dirichlet(p, xi))
    h2t4 = 4.0 * p.h_theta**2
    out += (2.0 * xi - np.roll(xi, 2, axis=1) - np.roll(xi, -2, axis=1)) / h2t4
    out += np.einsum("xyab,xyb->xya", gram_field(f), xi)
    return _zero_boundary(p, out)


def _dot(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.sum(a * b))


def cg_solve(
    f: GaugedField,
    rhs: np.ndarray,
    cfg: SolveConfig,
    preconditioner: Optional[Callable] = None,
    operator: Optional[Callable] = None,
):
    """Conjugate gradients for (Laplacian + Gram) xi = rhs on interior sites.

    Stops at relative residual cfg.cg_tol; raises on loss of positivity
    (a misconfigured operator) or when cfg.max_cg is exceeded.
    Returns (xi, iterations).
    """
    p = f.piece
    apply_op = operator if operator is not None else (lambda x: linearized_apply(f, x))
    rhs = _zero_boundary(p, rhs)
    xi = np.zeros_like(rhs)
    r = rhs.copy()
    rhs_norm = np.sqrt(_dot(rhs, rhs))
    if rhs_norm == 0.0:
        return xi, 0
    M = preconditioner if preconditioner is not None else (lambda x: x)
    z = M(r)
    d = z.copy()
    rz = _dot(r, z)
    for it in range(1, cfg.max_cg + 1):
        Ad = apply_op(d)
        dAd = _dot(d, Ad)
        if dAd <= 0.0:
            raise SolverError("operator lost positivity; misconfigured system")
        alpha = rz / dAd
        xi += alpha * d
        r -= alpha * Ad
        if np.sqrt(_dot(r, r)) <= cfg.cg_tol * rhs_norm:
            return xi, it
        z = M(r)
        rz_new = _dot(r, z)
        d = z + (rz_new / rz) * d
        rz = rz_new
    raise SolverError(f"conjugate gradients exceeded {cfg.max_cg} iterations")


# -- Newton solve -------------------------------------------------------------

def _interior_norms(piece, res: np.ndarray):
    inner = res[1:-1]
    sup = float(np.max(np.abs(inner)))
    l2 = float(np.sqrt(np.sum(inner**2) * piece.h_r * piece.h_theta))
    return sup, l2


def _check_seed(f: GaugedField):
    if float(np.max(np.abs(f.u))) == 0.0 and np.any(f.target.tau != 0):
        raise SolverError("unstable seed: u vanishes identically")
    for end in ("left", "right"):
        try:
            limit_orbit(f, end)
        except (FieldError, TargetError) as exc:
            raise SolverError(
                f"unstable seed: {end} end has no semistable limit"
            ) from exc


def newton_solve(f: GaugedField, cfg: Optional[SolveConfig] = None,
                 preconditioner: Optional[Callable] = None,
                 snapshot_callback: Optional[Callable] = None):
    """Drive the vortex residual to cfg.newton_tol within the complex gauge
    orbit of f.  Returns (field, xi_total, SolveReport).

    cfg.preconditioner = "patched" assembles the core/sleeve approximate
    inverse from the seed and applies its symmetric form inside every inner
    solve.  ``snapshot_callback(iteration, field)`` is invoked on the seed
    and after every accepted step."""
    cfg = cfg or SolveConfig()
    _check_seed(f)
    if preconditioner is None and cfg.preconditioner == "patched":
        preconditioner = PatchedPreconditioner(f, flavor="gauge_step").apply_symmetric
    p = f.piece
    report = SolveReport()
    xi_total = np.zeros((p.n_r, p.n_theta, f.target.k))
    cur = f
    res = vortex_residual(cur)
    sup, l2 = _interior_norms(p, res)
    report.residual_sup.append(sup)
    report.residual_l2.append(l2)
    if snapshot_callback is not None:
        snapshot_callback(0, cur)
    for it in range(cfg.max_newton):
        if sup <= cfg.newton_tol:
            report.converged = True
            break
        rhs = -res
        rhs[0] = 0.0
        rhs[-1] = 0.0
        step, cg_iters = cg_solve(
            cur, rhs, cfg, preconditioner,
            operator=lambda x, fld=cur: gauge_step_jacobian_apply(fld, x),
        )
        alpha = 1.0
        accepted = None
        for _ in range(20):
            trial = gauge_update(cur, alpha * step)
            t_res = vortex_residual(trial)
            t_sup, t_l2 = _interior_norms(p, t_res)
            if t_l2 <= (1.0 - 1e-4 * alpha) * l2 or not cfg.damping:
                accepted = (trial, t_res, t_sup, t_l2)
                break
            alpha *= 0.5
        if accepted is None:
            raise SolverError(
                "line search failed: seed outside the basin "
                "(section may vanish on an end)"
            )
        cur, res, sup, l2 = accepted
        xi_total += alpha * step
        report.residual_sup.append(sup)
        report.residual_l2.append(l2)
        report.cg_iterations.append(cg_iters)
        report.step_sizes.append(alpha)
        if snapshot_callback is not None:
            snapshot_callback(it + 1, cur)
    else:
        report.converged = sup <= cfg.newton_tol
    report.final_energy = energy(cur).total
    report.xi_norm = float(np.sqrt(np.sum(xi_total**2) * p.h_r * p.h_theta))
    if not report.converged:
        raise SolverError(
            f"Newton did not reach tol {cfg.newton_tol}: sup residual {sup:.3e}"
        )
    return cur, xi_total, report


# -- local gauge fixing -------------------------------------------------------

def flat_gauge_fix(f: GaugedField, rows: tuple, theta_range: Optional[tuple] = None,
                   cfg: Optional[SolveConfig] = None):
    """Complex gauge parameter xi, zero on the patch boundary, flattening the
    curvature on the patch to the stencil's O(h^2).

    The patch is rows [i0, i1] (a finite cylinder), optionally restricted to
    the angular window [j0, j1] (a rectangle).  Returns (xi, fixed_field).
    """
    cfg = cfg or SolveConfig()
    p = f.piece
    i0, i1 = rows
    if not (0 <= i0 < i1 < p.n_r):
        raise SolverError(f"bad patch rows {rows}")
    curv = curvature(f)
    mask = np.zeros((p.n_r, p.n_theta), dtype=bool)
    if theta_range is None:
        mask[i0 + 1 : i1, :] = True
    else:
        j0, j1 = theta_range
        mask[i0 + 1 : i1, j0 + 1 : j1] = True

    h2r, h2t = p.h_r**2, p.h_theta**2

    def lap(xi):
        xi = np.where(mask[:, :, None], xi, 0.0)
        out = (2.0 / h2r + 2.0 / h2t) * xi
        out[1:-1] -= (xi[2:] + xi[:-2]) / h2r
        out -= (np.roll(xi, 1, axis=1) + np.roll(xi, -1, axis=1)) / h2t
        return np.where(mask[:, :, None], out, 0.0)

    rhs = np.where(mask[:, :, None], -curv, 0.0)
    xi = _masked_cg(lap, rhs, cfg)
    return xi, apply_complex_gauge(f, xi)


def _masked_cg(op, rhs, cfg):
    xi = np.zeros_like(rhs)
    r = rhs - op(xi)
    d = r.copy()
    rn0 = np.sqrt(_dot(r, r))
    if rn0 == 0.0:
        return xi
    rr = _dot(r, r)
    for _ in range(cfg.max_cg):
        Ad = op(d)
        dAd = _dot(d, Ad)
        if dAd <= 0:
            raise SolverError("operator lost positivity on patch")
        alpha = rr / dAd
        xi += alpha * d
        r -= alpha * Ad
        rr_new = _dot(r, r)
        if np.sqrt(rr_new) <= cfg.cg_tol * rn0:
            return xi
        d = r + (rr_new / rr) * d
        rr = rr_new
    raise SolverError("patch solve did not converge")


def adjoint_divergence(piece, a_r: np.ndarray, a_theta: np.ndarray, rows: tuple):
    """Discrete d* paired with the forward-difference gradient on the patch:
    the divergence for which the Coulomb fix below is exact."""
    i0, i1 = rows
    m = i1 - i0 + 1
    ar = a_r[i0 : i1 + 1]
    at = a_theta[i0 : i1 + 1]
    div = np.zeros_like(ar)
    # radial part: -G_r^T with zero-flux outside the patch
    div[1:] += ar[:-1] / piece.h_r
    div[:-1] -= ar[:-1] / piece.h_r
    # angular part: periodic backward difference of forward links
    div += (np.roll(at, 1, axis=1) - at) / piece.h_theta
    return div


def coulomb_gauge_local(f: GaugedField, rows: tuple, kappa: float = 1.0,
                        cfg: Optional[SolveConfig] = None):
    """Local Coulomb gauge diagnostic on rows [i0, i1].

    Requires sup|*F| <= kappa on the patch.  Minimizes |a - grad(phi)|^2 over
    the patch with the forward-difference gradient, so the paired divergence
    of the output vanishes to solver tolerance.  Returns (fixed a_r, fixed
    a_theta, diagnostics dict).
    """
    cfg = cfg or SolveConfig()
    p = f.piece
    i0, i1 = rows
    curv = curvature(f)[i0 : i1 + 1]
    if float(np.max(np.abs(curv))) > kappa:
        raise SolverError(f"curvature above threshold {kappa} on patch")
    m = i1 - i0 + 1
    ar = f.a_r[i0 : i1 + 1].copy()
    at = f.a_theta[i0 : i1 + 1].copy()

    def grad(phi):
        gr = np.zeros_like(phi)
        gr[:-1] = (phi[1:] - phi[:-1]) / p.h_r  # zero-flux ghost at the far ring
        gt = (np.roll(phi, -1, axis=1) - phi) / p.h_theta
        return gr, gt

    def div(br, bt):
        out = np.zeros_like(br)
        out[1:] -= br[:-1] / p.h_r
        out[:-1] += br[:-1] / p.h_r
        out += (bt - np.roll(bt, 1, axis=1)) / p.h_theta
        return out

    rhs = -div(ar, at)
    rhs -= rhs.mean(axis=(0, 1), keepdims=True)  # Neumann compatibility

    def op(phi):  # -div(grad(.)) is the positive Neumann Laplacian here
        phi = phi - phi.mean(axis=(0, 1), keepdims=True)
        gr, gt = grad(phi)
        out = -div(gr, gt)
        return out - out.mean(axis=(0, 1), keepdims=True)

    phi = _masked_cg(op, rhs, cfg)
    gr, gt = grad(phi - phi.mean(axis=(0, 1), keepdims=True))
    ar -= gr
    at -= gt
    residual_div = float(np.max(np.abs(div(ar, at))))
    norm_ratio = float(
        np.sqrt(np.sum(ar**2 + at**2)) / max(np.sqrt(np.sum(curv**2)), 1e-300)
    )
    return ar, at, {"div_sup": residual_div, "norm_ratio": norm_ratio}


# -- patched approximate inverse ---------------------------------------------

def _assemble_domain_matrix(f: GaugedField, rows: tuple,
                            flavor: str = "five_point") -> sp.csc_matrix:
    """Sparse (Laplacian + Gram) on domain rows [a, b], Dirichlet at the
    domain's own boundary rings, periodic in theta.

    flavor "five_point" matches linearized_apply; "gauge_step" matches the
    composed-centered operator solved inside Newton."""
    p = f.piece
    k = f.target.k
    a, b = rows
    m = b - a + 1
    nth = p.n_theta
    inner = m - 2  # Dirichlet at local rows 0 and m-1
    if inner < 1:
        raise SolverError("preconditioner domain too thin")
    N = inner * nth * k
    if flavor == "five_point":
        lap_r = sp.diags(
            [np.full(inner, 2.0 / p.h_r**2), np.full(inner - 1, -1.0 / p.h_r**2),
             np.full(inner - 1, -1.0 / p.h_r**2)],
            [0, 1, -1], format="csr",
        )
        lap_t = sp.lil_matrix((nth, nth))
        for j in range(nth):
            lap_t[j, j] = 2.0 / p.h_theta**2
            lap_t[j, (j + 1) % nth] = -1.0 / p.h_theta**2
            lap_t[j, (j - 1) % nth] = -1.0 / p.h_theta**2
    elif flavor == "gauge_step":
        d_r = sp.diags(
            [np.full(inner - 1, 0.5 / p.h_r), np.full(inner - 1, -0.5 / p.h_r)],
            [1, -1], format="csr",
        )
        lap_r = (d_r.T @ d_r).tocsr()
        lap_t = sp.lil_matrix((nth, nth))
        for j in range(nth):
            lap_t[j, j] = 0.5 / p.h_theta**2
            lap_t[j, (j + 2) % nth] = -0.25 / p.h_theta**2
            lap_t[j, (j - 2) % nth] = -0.25 / p.h_theta**2
    else:
        raise SolverError(f"unknown operator flavor {flavor!r}")
    lap = sp.kron(lap_r, sp.identity(nth), format="csr") + sp.kron(
        sp.identity(inner), lap_t.tocsr(), format="csr"
    )
    A = sp.kron(lap, sp.identity(k), format="csr")
    gram = gram_field(f)[a + 1 : b]  # (inner, nth, k, k)
    rowsI, colsI, vals = [], [], []
    for c1 in range(k):
        for c2 in range(k):
            g = gram[:, :, c1, c2].ravel()
            base = np.arange(inner * nth) * k
            rowsI.append(base + c1)
            colsI.append(base + c2)
            vals.append(g)
    G = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rowsI), np.concatenate(colsI))),
        shape=(N, N),
    )
    return (A + G.tocsr()).tocsc()


@dataclass
class _Domain:
    rows: tuple
    cover: tuple  # cover chunk rows [a, b]
    phi: np.ndarray
    lu: object


class PatchedPreconditioner:
    """Approximate inverse glued from per-component reference solves.

    The literal pipeline lifts a section to the core/sleeve cover, applies the
    factorized broken-surface inverse per component, multiplies by the cutoff
    weights and pushes forward (apply).  apply_symmetric splits the cutoff as
    sqrt(phi) on both sides, which keeps the map positive for use inside CG.
    """

    def __init__(self, f: GaugedField, decomposition: Optional[CoreSleeve] = None,
                 flavor: str = "five_point"):
        self.piece = f.piece
        self.k = f.target.k
        decomposition = decomposition or core_sleeve(f.surface)
        pi = f.piece_index
        self.domains = []
        necks = f.piece.necks
        covers = [c for c in decomposition.covers if c.piece_index == pi]
        for ci, cover in enumerate(covers):
            left = 0 if ci == 0 else necks[ci - 1].i_plus
            right = f.piece.n_r - 1 if ci == len(covers) - 1 else necks[ci].i_minus
            lu = spla.splu(_assemble_domain_matrix(f, (left, right), flavor))
            self.domains.append(
                _Domain((left, right), (cover.a, cover.b), cover.phi.copy(), lu)
            )

    def _solve_domain(self, dom: _Domain, eta_chunk: np.ndarray) -> np.ndarray:
        a, b = dom.rows
        m = b - a + 1
        nth, k = self.piece.n_theta, self.k
        full = np.zeros((m, nth, k))
        ca, cb = dom.cover
        full[ca - a : cb - a + 1] = eta_chunk
        rhs = full[1:-1].ravel()
        sol = dom.lu.solve(rhs)
        out = np.zeros((m, nth, k))
        out[1:-1] = sol.reshape(m - 2, nth, k)
        return out[ca - a : cb - a + 1]

    def _apply(self, eta: np.ndarray, split_weights: bool) -> np.ndarray:
        out = np.zeros_like(eta)
        for dom in self.domains:
            ca, cb = dom.cover
            w = dom.phi[:, None, None]
            chunk = eta[ca : cb + 1]
            pre = np.sqrt(w) if split_weights else 1.0
            post = np.sqrt(w) if split_weights else w
            sol = self._solve_domain(dom, chunk * pre)
            out[ca : cb + 1] += post * sol
        out[0] = 0.0
        out[-1] = 0.0
        return out

    def apply(self, eta: np.ndarray) -> np.ndarray:
        """Literal lift -> solve -> cutoff -> push-forward pipeline."""
        return self._apply(eta, split_weights=False)

    def apply_symmetric(self, eta: np.ndarray) -> np.ndarray:
        """Symmetrized cutoff placement; positive, usable inside CG."""
        return self._apply(eta, split_weights=True)


def patched_preconditioner(f: GaugedField,
                           decomposition: Optional[CoreSleeve] = None) -> PatchedPreconditioner:
    return PatchedPreconditioner(f, decomposition)


def operator_defect(f: GaugedField, pre: PatchedPreconditioner,
                    n_probes: int = 10, seed: int = 0) -> list:
    """Measured |DF(Q eta) - eta| / |eta| on random probes."""
    p = f.piece
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_probes):
        eta = rng.normal(size=(p.n_r, p.n_theta, f.target.k))
        eta[0] = 0.0
        eta[-1] = 0.0
        image = linearized_apply(f, pre.apply(eta))
        out.append(float(np.linalg.norm(image - eta) / np.linalg.norm(eta)))
    return out
