"""Solvers for the inhomogeneous Cauchy-Riemann equation dbar v = alpha.

Dimension 1 uses the Cauchy-Pompeiu transform

    v(z) = -(1/pi) integral over G_tilde of alpha(w) / (w - z) dA(w)

discretized by midpoint quadrature over square cells.  Cells straddling the
region boundary are weighted by their sampled inside-area fraction, and cells
in a small window around the evaluation point are integrated exactly: the
moments

    I = int_cell dA/(w-z),   J = int_cell conj(w-z)/(w-z) dA

have closed forms from Green's theorem (one log per edge), which also covers
the singular cell containing z.  With the closed-form first derivatives of
alpha the window uses first-order product integration, so the scheme's
dbar-defect at z is the local Taylor error of alpha rather than O(|alpha|).

Dimension >= 2 expands v in monomials z^a zbar^b of bounded total degree and
matches dbar v = alpha at collocation nodes in the least-squares sense; the
residual is reported honestly and certification is by explicit tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

TWO_I = 2.0j


def fd_dbar(func: Callable[[np.ndarray], np.ndarray], Z: np.ndarray, step: float) -> np.ndarray:
    """Central-difference Wirtinger dbar of a C^n -> C function, shape (m, n)."""
    Z = np.atleast_2d(np.asarray(Z, dtype=np.complex128))
    m, n = Z.shape
    out = np.empty((m, n), dtype=np.complex128)
    for j in range(n):
        e = np.zeros(n, dtype=np.complex128)
        e[j] = 1.0
        fr = (func(Z + step * e) - func(Z - step * e)) / (2.0 * step)
        fi = (func(Z + 1j * step * e) - func(Z - 1j * step * e)) / (2.0 * step)
        out[:, j] = 0.5 * (fr + 1j * fi)
    return out


@dataclass
class DbarProblem:
    """A dbar problem on one inflated domain G_tilde."""

    dimension: int
    membership: Callable[[np.ndarray], np.ndarray]
    alpha: Callable[[np.ndarray], np.ndarray]
    bbox_lo: np.ndarray
    bbox_hi: np.ndarray
    quadrature_cells: int = 256
    collocation_degree: int = 8
    collocation_nodes: int = 3000
    residual_tol: float = 0.05
    alpha_derivs: Optional[Callable[[np.ndarray], tuple]] = None
    grid_rotation: float = 0.0
    nodes: Optional[np.ndarray] = None
    sup_points: Optional[np.ndarray] = None
    test_points: Optional[np.ndarray] = None
    test_points_near: Optional[np.ndarray] = None
    seed: int = 0
    near_window: int = 2
    near_order: int = 1

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("dimension must be >= 1")
        if self.dimension > 1 and abs(self.grid_rotation) > 0:
            raise ValueError("grid_rotation is a dimension-1 feature")


@dataclass
class DbarSolution:
    """Evaluator for v with its sup-norm (C4 candidate) and residual report."""

    v: Callable[[np.ndarray], np.ndarray]
    sup_norm: float
    residual_stats: Dict[str, float]
    backend: str
    certified: bool
    meta: Dict[str, object] = field(default_factory=dict)


def solve_dbar(problem: DbarProblem) -> DbarSolution:
    if problem.dimension == 1:
        return _solve_pompeiu(problem)
    return _solve_collocation(problem)


# ----------------------------------------------------------------------
# exact cell moments
# ----------------------------------------------------------------------

def cell_moments(z: np.ndarray, cx: np.ndarray, cy: np.ndarray, h: float, want_J: bool = True):
    """Exact I = int dA/(w-z) and J = int conj(w-z)/(w-z) dA over squares.

    z (complex) and cx, cy (real cell centers) must be broadcast-compatible
    arrays; h is the cell side.  Valid for z inside or outside the cells
    (z must not lie exactly on an edge segment; callers nudge).  The
    dbar-derivative of I in z is -pi inside the cell and 0 outside, which is
    what makes the singular-cell correction exact.
    """
    u0 = cx - 0.5 * h
    u1 = cx + 0.5 * h
    v0 = cy - 0.5 * h
    v1 = cy + 0.5 * h

    A = u0 + 1j * v0
    B = u1 + 1j * v0
    C = u1 + 1j * v1
    D = u0 + 1j * v1

    I = np.zeros(np.broadcast_shapes(z.shape, A.shape), dtype=np.complex128)
    J = np.zeros_like(I) if want_J else None

    # (start, end, is_horizontal, edge coordinate)
    for ws, we, horiz, coord in (
        (A, B, True, v0),
        (B, C, False, u1),
        (C, D, True, v1),
        (D, A, False, u0),
    ):
        as_ = ws - z
        ae = we - z
        L = np.log(ae / as_)
        dlt = we - ws
        if horiz:
            beta = z - np.conj(z) - TWO_I * coord
            I += dlt + beta * L
            if want_J:
                J += (ae**2 - as_**2) / 4.0 + beta * dlt + 0.5 * beta**2 * L
        else:
            gamma = 2.0 * coord - z - np.conj(z)
            I += -dlt + gamma * L
            if want_J:
                J += (ae**2 - as_**2) / 4.0 - gamma * dlt + 0.5 * gamma**2 * L
    if want_J:
        return I / TWO_I, J / TWO_I
    return I / TWO_I, None


# ----------------------------------------------------------------------
# dimension 1: Cauchy-Pompeiu over cells
# ----------------------------------------------------------------------

class _Mesh:
    """Square-cell cover of {membership} inside the bounding box."""

    def __init__(self, problem: DbarProblem):
        lo, hi = np.asarray(problem.bbox_lo, float), np.asarray(problem.bbox_hi, float)
        wx, wy = hi[0] - lo[0], hi[1] - lo[1]
        K = int(problem.quadrature_cells)
        if K < 4:
            raise ValueError("quadrature_cells must be >= 4")
        self.h = max(wx, wy) / K
        self.x0, self.y0 = float(lo[0]), float(lo[1])
        self.nx = int(np.ceil(wx / self.h))
        self.ny = int(np.ceil(wy / self.h))

        ix, iy = np.meshgrid(np.arange(self.nx), np.arange(self.ny), indexing="ij")
        cx = self.x0 + (ix + 0.5) * self.h
        cy = self.y0 + (iy + 0.5) * self.h
        self.cx, self.cy = cx, cy

        member = problem.membership
        centers = (cx + 1j * cy).reshape(-1, 1)
        c_in = member(centers).reshape(self.nx, self.ny)

        gx = self.x0 + np.arange(self.nx + 1) * self.h
        gy = self.y0 + np.arange(self.ny + 1) * self.h
        GX, GY = np.meshgrid(gx, gy, indexing="ij")
        corners = member((GX + 1j * GY).reshape(-1, 1)).reshape(self.nx + 1, self.ny + 1)
        all_corners = (
            corners[:-1, :-1] & corners[1:, :-1] & corners[:-1, 1:] & corners[1:, 1:]
        )
        any_corner = (
            corners[:-1, :-1] | corners[1:, :-1] | corners[:-1, 1:] | corners[1:, 1:]
        )
        interior = all_corners & c_in
        mixed = (any_corner | c_in) & ~interior

        frac = np.zeros((self.nx, self.ny))
        frac[interior] = 1.0
        alpha_at = np.zeros((self.nx, self.ny), dtype=np.complex128)

        mix_idx = np.argwhere(mixed)
        if mix_idx.size:
            s = 6
            offs = (np.arange(s) + 0.5) / s
            ox, oy = np.meshgrid(offs, offs, indexing="ij")
            sub = np.stack([ox.ravel(), oy.ravel()], axis=1)  # (s*s, 2)
            base_x = self.x0 + mix_idx[:, 0] * self.h
            base_y = self.y0 + mix_idx[:, 1] * self.h
            px = base_x[:, None] + sub[None, :, 0] * self.h
            py = base_y[:, None] + sub[None, :, 1] * self.h
            pts = (px + 1j * py).reshape(-1, 1)
            inside = member(pts).reshape(len(mix_idx), s * s)
            f = inside.mean(axis=1)
            frac[mix_idx[:, 0], mix_idx[:, 1]] = f
            # evaluate alpha at the inside-centroid of each nonempty mixed cell
            keep = f > 0
            if np.any(keep):
                w = inside[keep].astype(float)
                w /= w.sum(axis=1)[:, None]
                centx = (px[keep] * w).sum(axis=1)
                centy = (py[keep] * w).sum(axis=1)
                cent = (centx + 1j * centy).reshape(-1, 1)
                vals = problem.alpha(cent)[:, 0]
                kept = mix_idx[keep]
                alpha_at[kept[:, 0], kept[:, 1]] = vals

        if np.any(interior):
            ci = np.argwhere(interior)
            pts = (cx[interior] + 1j * cy[interior]).reshape(-1, 1)
            alpha_at[ci[:, 0], ci[:, 1]] = problem.alpha(pts)[:, 0]

        self.interior = interior
        self.frac = frac
        self.alpha = alpha_at
        self.weights = frac * self.h**2

        self.aw = np.zeros_like(alpha_at)
        self.awb = np.zeros_like(alpha_at)
        if problem.near_order >= 1 and problem.alpha_derivs is not None and np.any(interior):
            pts = (cx[interior] + 1j * cy[interior]).reshape(-1, 1)
            a, aw, awb = problem.alpha_derivs(pts)
            ci = np.argwhere(interior)
            self.aw[ci[:, 0], ci[:, 1]] = aw
            self.awb[ci[:, 0], ci[:, 1]] = awb

        active = self.weights.ravel() > 0
        self.flat_centers = (cx + 1j * cy).ravel()[active]
        self.flat_walpha = (self.weights * self.alpha).ravel()[active]


def _solve_pompeiu(problem: DbarProblem) -> DbarSolution:
    if abs(problem.grid_rotation) > 0:
        return _solve_pompeiu_rotated(problem)

    mesh = _Mesh(problem)
    h = mesh.h
    W = problem.near_window
    use_taylor = problem.near_order >= 1 and problem.alpha_derivs is not None

    centers = mesh.flat_centers
    walpha = mesh.flat_walpha

    def v(Z: np.ndarray) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(Z, dtype=np.complex128))
        z_all = Z[:, 0]
        out = np.empty(z_all.shape[0], dtype=np.complex128)
        chunk = 192
        for s0 in range(0, z_all.shape[0], chunk):
            z = z_all[s0 : s0 + chunk]
            # nudge points sitting exactly on grid lines
            fx = (z.real - mesh.x0) / h
            fy = (z.imag - mesh.y0) / h
            bad = (np.abs(fx - np.round(fx)) < 1e-9) | (
                np.abs(fy - np.round(fy)) < 1e-9
            )
            z = np.where(bad, z + (3e-8 + 3e-8j) * h, z)

            diff = centers[None, :] - z[:, None]
            near_zero = np.abs(diff) < 1e-12
            with np.errstate(divide="ignore", invalid="ignore"):
                kern = walpha[None, :] / diff
            kern[near_zero] = 0.0
            total = kern.sum(axis=1)

            # near-field: replace midpoint by the exact kernel integral on a
            # window of interior cells around z; first-order product
            # integration on the containing cell only (its moments are the
            # only ones whose dbar in z is nonzero, so they alone set the
            # dbar-defect at z; neighbor corrections improve the value)
            ix = np.clip(np.floor(fx).astype(int), 0, mesh.nx - 1)
            iy = np.clip(np.floor(fy).astype(int), 0, mesh.ny - 1)
            offs = np.arange(-W, W + 1)
            ox, oy = np.meshgrid(offs, offs, indexing="ij")
            wx = ix[:, None] + ox.ravel()[None, :]
            wy = iy[:, None] + oy.ravel()[None, :]
            valid = (wx >= 0) & (wx < mesh.nx) & (wy >= 0) & (wy < mesh.ny)
            wxc = np.clip(wx, 0, mesh.nx - 1)
            wyc = np.clip(wy, 0, mesh.ny - 1)
            is_int = mesh.interior[wxc, wyc] & valid
            if np.any(is_int):
                ccx = mesh.cx[wxc, wyc]
                ccy = mesh.cy[wxc, wyc]
                av = mesh.alpha[wxc, wyc]
                cc = ccx + 1j * ccy
                diff_n = cc - z[:, None]
                with np.errstate(divide="ignore", invalid="ignore"):
                    mid = h**2 * av / diff_n
                mid[np.abs(diff_n) < 1e-12] = 0.0
                Ivals, _ = cell_moments(z[:, None], ccx, ccy, h, want_J=False)
                total = total + np.where(is_int, av * Ivals - mid, 0.0).sum(axis=1)

            own_int = mesh.interior[ix, iy]
            if use_taylor and np.any(own_int):
                c0x = mesh.cx[ix, iy]
                c0y = mesh.cy[ix, iy]
                c0 = c0x + 1j * c0y
                I0, J0 = cell_moments(z, c0x, c0y, h, want_J=True)
                M10 = h**2 + (z - c0) * I0
                M01 = J0 + np.conj(z - c0) * I0
                tay = mesh.aw[ix, iy] * M10 + mesh.awb[ix, iy] * M01
                total = total + np.where(own_int, tay, 0.0)
            out[s0 : s0 + chunk] = -total / np.pi
        return out

    rng = np.random.default_rng([problem.seed, 0x5E1])
    sup_pts = problem.sup_points
    if sup_pts is None:
        sup_pts = _rejection_points(problem, rng, 800)
    sup_norm = float(np.max(np.abs(v(sup_pts))))

    stats = _residual_stats_fd(problem, v, rng)
    certified = stats["max"] <= problem.residual_tol
    return DbarSolution(
        v=v,
        sup_norm=sup_norm,
        residual_stats=stats,
        backend="cauchy-pompeiu",
        certified=certified,
        meta={
            "cells": problem.quadrature_cells,
            "cell_size": h,
            "active_cells": int(centers.shape[0]),
            "near_window": W,
            "near_order": problem.near_order if use_taylor else 0,
        },
    )


def _solve_pompeiu_rotated(problem: DbarProblem) -> DbarSolution:
    """Solve with the quadrature grid rotated by grid_rotation radians.

    Transform u(w) := v(rot w) with rot = e^{i theta}; then dbar u = conj(rot)
    alpha(rot w), solved on the standard grid, and v(z) = u(conj(rot) z).
    """
    rot = np.exp(1j * problem.grid_rotation)

    def membership_r(Wpts):
        return problem.membership(rot * Wpts)

    def alpha_r(Wpts):
        return np.conj(rot) * problem.alpha(rot * Wpts)

    def derivs_r(Wpts):
        a, aw, awb = problem.alpha_derivs(rot * Wpts)
        return np.conj(rot) * a, np.conj(rot) * aw * rot, np.conj(rot) * awb * np.conj(rot)

    corners = []
    lo, hi = problem.bbox_lo, problem.bbox_hi
    for x in (lo[0], hi[0]):
        for y in (lo[1], hi[1]):
            corners.append(np.conj(rot) * (x + 1j * y))
    corners = np.array(corners)
    lo_r = np.array([corners.real.min(), corners.imag.min()])
    hi_r = np.array([corners.real.max(), corners.imag.max()])

    def tx(P):
        return None if P is None else np.conj(rot) * np.atleast_2d(P)

    sub = DbarProblem(
        dimension=1,
        membership=membership_r,
        alpha=alpha_r,
        bbox_lo=lo_r,
        bbox_hi=hi_r,
        quadrature_cells=problem.quadrature_cells,
        residual_tol=problem.residual_tol,
        alpha_derivs=None if problem.alpha_derivs is None else derivs_r,
        sup_points=tx(problem.sup_points),
        test_points=tx(problem.test_points),
        test_points_near=tx(problem.test_points_near),
        seed=problem.seed,
        near_window=problem.near_window,
        near_order=problem.near_order,
    )
    inner = _solve_pompeiu(sub)

    def v(Z):
        Z = np.atleast_2d(np.asarray(Z, dtype=np.complex128))
        return inner.v(np.conj(rot) * Z)

    meta = dict(inner.meta)
    meta["grid_rotation"] = problem.grid_rotation
    return DbarSolution(
        v=v,
        sup_norm=inner.sup_norm,
        residual_stats=inner.residual_stats,
        backend=inner.backend,
        certified=inner.certified,
        meta=meta,
    )


def _rejection_points(problem, rng, count, margin_fn=None):
    lo, hi = problem.bbox_lo, problem.bbox_hi
    n = problem.dimension
    picked = []
    have = 0
    for _ in range(400):
        raw = rng.uniform(lo, hi, size=(max(4 * count, 256), 2 * n))
        pts = raw[:, :n] + 1j * raw[:, n:]
        keep = problem.membership(pts)
        if margin_fn is not None:
            keep = keep & margin_fn(pts)
        picked.append(pts[keep])
        have += int(keep.sum())
        if have >= count:
            break
    pts = np.concatenate(picked)
    if pts.shape[0] < count:
        raise RuntimeError("could not sample enough points in the region")
    return pts[:count]


def _residual_stats_fd(problem, v, rng, fd_step: float = 1e-3) -> Dict[str, float]:
    """|dbar v - alpha| by central differences at held-out test points."""
    pts = problem.test_points
    if pts is None:
        pts = _rejection_points(problem, rng, 160)
    res = np.abs(fd_dbar(v, pts, fd_step) - problem.alpha(pts))
    stats = {
        "max": float(res.max()),
        "mean": float(res.mean()),
        "count": int(pts.shape[0]),
    }
    if problem.test_points_near is not None and problem.test_points_near.shape[0]:
        near = np.abs(
            fd_dbar(v, problem.test_points_near, fd_step)
            - problem.alpha(problem.test_points_near)
        )
        stats["near_max"] = float(near.max())
        stats["near_count"] = int(problem.test_points_near.shape[0])
    return stats


# ----------------------------------------------------------------------
# dimension >= 2: least-squares collocation in monomials z^a zbar^b
# ----------------------------------------------------------------------

def _multi_indices(n: int, degree: int) -> List[tuple]:
    """All (a, b) with |a| + |b| <= degree and |b| >= 1."""
    def compositions(total, slots):
        if slots == 1:
            yield (total,)
            return
        for first in range(total + 1):
            for rest in compositions(total - first, slots - 1):
                yield (first,) + rest

    out = []
    for deg in range(1, degree + 1):
        for da in range(deg + 1):
            db = deg - da
            if db < 1:
                continue
            for a in compositions(da, n):
                for b in compositions(db, n):
                    out.append((a, b))
    return out


def _monomials(U: np.ndarray, indices) -> np.ndarray:
    """Columns u^a conj(u)^b for each (a, b), shape (m, len(indices))."""
    m, n = U.shape
    cols = np.empty((m, len(indices)), dtype=np.complex128)
    Ubar = np.conj(U)
    for c, (a, b) in enumerate(indices):
        col = np.ones(m, dtype=np.complex128)
        for j in range(n):
            if a[j]:
                col = col * U[:, j] ** a[j]
            if b[j]:
                col = col * Ubar[:, j] ** b[j]
        cols[:, c] = col
    return cols


def _dbar_columns(U: np.ndarray, indices, j: int, scale: float) -> np.ndarray:
    """d/d conj(u_j) of each monomial, mapped back to z-derivatives."""
    m, n = U.shape
    cols = np.zeros((m, len(indices)), dtype=np.complex128)
    Ubar = np.conj(U)
    for c, (a, b) in enumerate(indices):
        if b[j] == 0:
            continue
        col = np.full(m, b[j], dtype=np.complex128)
        for k in range(n):
            if a[k]:
                col = col * U[:, k] ** a[k]
            bk = b[k] - (1 if k == j else 0)
            if bk:
                col = col * Ubar[:, k] ** bk
        cols[:, c] = col / scale
    return cols


def _solve_collocation(problem: DbarProblem) -> DbarSolution:
    rng = np.random.default_rng([problem.seed, 0xC0110])
    n = problem.dimension
    nodes = problem.nodes
    if nodes is None:
        nodes = _rejection_points(problem, rng, problem.collocation_nodes)
    indices = _multi_indices(n, problem.collocation_degree)
    ncols = len(indices)
    if n * nodes.shape[0] < ncols:
        raise ValueError(
            f"underdetermined collocation system ({n * nodes.shape[0]} equations, "
            f"{ncols} unknowns): increase nodes or lower degree"
        )
    scale = float(np.max(np.linalg.norm(nodes, axis=1))) * 1.02
    U = nodes / scale
    rows = [_dbar_columns(U, indices, j, scale) for j in range(n)]
    A = np.concatenate(rows, axis=0)
    alpha_nodes = problem.alpha(nodes)
    rhs = np.concatenate([alpha_nodes[:, j] for j in range(n)])
    coef, _, rank, _ = np.linalg.lstsq(A, rhs, rcond=None)
    if rank < ncols:
        # null directions are harmless (min-norm solution); record in meta
        pass

    def v(Z: np.ndarray) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(Z, dtype=np.complex128))
        return _monomials(Z / scale, indices) @ coef

    def dbar_v(Z: np.ndarray) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(Z, dtype=np.complex128))
        U = Z / scale
        out = np.empty((Z.shape[0], n), dtype=np.complex128)
        for j in range(n):
            out[:, j] = _dbar_columns(U, indices, j, scale) @ coef
        return out

    sup_pts = problem.sup_points
    if sup_pts is None:
        sup_pts = _rejection_points(problem, rng, 1500)
    sup_norm = float(np.max(np.abs(v(sup_pts))))

    test_pts = problem.test_points
    if test_pts is None:
        test_pts = _rejection_points(problem, rng, 400)
    res = np.abs(dbar_v(test_pts) - problem.alpha(test_pts))
    stats = {
        "max": float(res.max()),
        "mean": float(res.mean()),
        "count": int(test_pts.shape[0]),
    }
    certified = stats["max"] <= problem.residual_tol
    return DbarSolution(
        v=v,
        sup_norm=sup_norm,
        residual_stats=stats,
        backend="ls-collocation",
        certified=certified,
        meta={
            "degree": problem.collocation_degree,
            "basis_size": ncols,
            "nodes": int(nodes.shape[0]),
            "rank": int(rank),
            "scale": scale,
            "dbar_v": dbar_v,
        },
    )


def quadrature_convergence_test(problem: DbarProblem, resolutions) -> List[Dict[str, float]]:
    """Residual vs resolution table (cells per axis for n=1, degree for n>=2).

    Test points are held fixed across resolutions; reports the estimated
    order between consecutive rows.
    """
    resolutions = list(resolutions)
    if len(resolutions) < 2:
        raise ValueError("need at least two resolutions")
    rng = np.random.default_rng([problem.seed, 0xC043])
    pts = problem.test_points
    if pts is None:
        pts = _rejection_points(problem, rng, 160)
    rows = []
    prev = None
    for res in resolutions:
        kwargs = dict(problem.__dict__)
        kwargs["test_points"] = pts
        if problem.dimension == 1:
            kwargs["quadrature_cells"] = int(res)
        else:
            kwargs["collocation_degree"] = int(res)
        sol = solve_dbar(DbarProblem(**kwargs))
        row = {
            "resolution": int(res),
            "residual_max": sol.residual_stats["max"],
            "residual_mean": sol.residual_stats["mean"],
        }
        if prev is not None and row["residual_max"] > 0:
            row["reduction_factor"] = prev / row["residual_max"]
        prev = row["residual_max"]
        rows.append(row)
    return rows
