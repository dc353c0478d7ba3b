"""Levi forms, Levi polynomials and grid estimation of the uniform constants.

Constants are certified by grid minimization/maximization with declared
safety factors (0.95 for minima, 1.05 for maxima) rather than interval
arithmetic; the verification module re-tests every inequality on fresh
samples.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np

from .families import BandRegion, FamilySpec, evaluate_defining, unit_sphere_directions
from .validation import as_complex_points

MIN_SAFETY = 0.95
MAX_SAFETY = 1.05
C1_CAP = 0.99
C2_FLOOR = 1e-3


@dataclass
class UniformConstantEstimate:
    """A grid-certified constant with its margin to constraint violation."""

    value: float
    margin: float
    grid: Dict[str, float] = field(default_factory=dict)
    note: str = ""

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise ValueError("constant estimate must be finite")
        if self.margin < 0:
            raise ValueError("constant estimate accepted with negative margin")


@dataclass
class LeviPolynomial:
    """Holomorphic quadratic P(z; zeta) built from exact derivatives at zeta.

    P(z) = -sum_j a_j (z_j - zeta_j) - 1/2 sum_ij b_ij (z_i - zeta_i)(z_j - zeta_j)
    with a = dr/dz(zeta) and b = d^2 r/dz dz(zeta); P(zeta) = 0 and P depends
    on z only (never on conj z).
    """

    base: np.ndarray
    linear: np.ndarray
    quadratic: np.ndarray

    def __call__(self, Z: np.ndarray) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(Z, dtype=np.complex128))
        d = Z - self.base[None, :]
        lin = d @ self.linear
        quad = np.einsum("ij,mi,mj->m", self.quadratic, d, d)
        return -lin - 0.5 * quad

    def z_derivative(self, Z: np.ndarray) -> np.ndarray:
        """dP/dz_j, shape (m, n)."""
        Z = np.atleast_2d(np.asarray(Z, dtype=np.complex128))
        d = Z - self.base[None, :]
        return -self.linear[None, :] - d @ self.quadratic.T


def levi_form(sample, X) -> float:
    """Hermitian Levi form L(X) = sum_ij levi[i,j] X_i conj(X_j).

    This is the index placement fixed by the second-order Taylor expansion of
    r; it is real for any Hermitian Levi matrix.
    """
    X = np.asarray(X, dtype=np.complex128).reshape(-1)
    levi = sample.levi
    if levi.shape[0] != X.shape[0]:
        raise ValueError(
            f"dimension mismatch: Levi matrix is {levi.shape[0]}, X is {X.shape[0]}"
        )
    val = np.einsum("ij,i,j->", levi, X, np.conj(X))
    return float(np.real(val))


def levi_form_batch(levi: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Levi form of (m,n,n) matrices against (k,n) directions -> (m,k) reals."""
    return np.real(np.einsum("mij,ki,kj->mk", levi, X, np.conj(X)))


def levi_polynomial(family: FamilySpec, t, zeta) -> LeviPolynomial:
    zeta = as_complex_points(zeta, family.dimension)[0]
    sample = evaluate_defining(family, t, zeta)
    return LeviPolynomial(
        base=zeta, linear=sample.grad_z.copy(), quadratic=sample.hess_zz.copy()
    )


def taylor_residual(family: FamilySpec, t, zeta, z) -> float:
    """Second-order Taylor remainder r(z) - [-2 Re P(z;zeta) + L(zeta; z-zeta)].

    zeta must lie on the boundary (|r_t(zeta)| <= 1e-10); the remainder decays
    like ||z - zeta||^3 and vanishes identically for quadratic families.
    """
    n = family.dimension
    zeta = as_complex_points(zeta, n)[0]
    sample = evaluate_defining(family, t, zeta)
    if abs(sample.r) > 1e-10:
        raise ValueError(f"zeta is not a boundary point: r(zeta) = {sample.r:.3e}")
    Z = as_complex_points(z, n)
    poly = LeviPolynomial(base=zeta, linear=sample.grad_z, quadratic=sample.hess_zz)
    d = Z - zeta[None, :]
    levi_term = np.real(np.einsum("ij,mi,mj->m", sample.levi, d, np.conj(d)))
    model = -2.0 * np.real(poly(Z)) + levi_term
    res = family.value(t, Z) - model
    return float(res[0]) if Z.shape[0] == 1 else res


def estimate_C1(
    family: FamilySpec, band: BandRegion, direction_count: int = 64
) -> UniformConstantEstimate:
    """Uniform lower Levi bound: min of the Levi form over band samples and
    unit directions, with 0.95 safety, capped at 0.99 when the raw minimum
    reaches 1 (the bound is used as a constant strictly below 1)."""
    if direction_count < 1:
        raise ValueError("direction_count must be >= 1")
    n = family.dimension
    dirs_real = unit_sphere_directions(2 * n, direction_count)
    X = dirs_real[:, :n] + 1j * dirs_real[:, n:]
    X = X / np.linalg.norm(X, axis=1)[:, None]
    raw = np.inf
    total = 0
    for t in band.t_grid:
        t = float(t)
        pts = band.samples[t]
        levi = family.levi_matrix(t, pts)
        vals = levi_form_batch(levi, X)
        raw = min(raw, float(vals.min()))
        total += pts.shape[0]
    if raw <= 0.0:
        raise ValueError(
            f"Levi form not strictly positive on the band (min {raw:.3e}); "
            "family is not strictly plurisubharmonic there"
        )
    value = C1_CAP if raw >= 1.0 - 1e-9 else MIN_SAFETY * raw
    return UniformConstantEstimate(
        value=value,
        margin=value,
        grid={
            "band_samples": total,
            "directions": direction_count,
            "raw_min": raw,
        },
        note="min Levi form over band x directions; safety 0.95; capped below 1",
    )


def _quadratic_bound_margin(
    family: FamilySpec,
    band: BandRegion,
    c2: float,
    eps2: float,
    offsets: np.ndarray,
) -> float:
    """Min over sampled (t, zeta, z) with ||z-zeta|| < eps2 of
    r(z) + 2 Re P(z;zeta) - c2 ||z-zeta||^2."""
    margin = np.inf
    for t in band.t_grid:
        t = float(t)
        zetas = band.boundary[t]
        grads = family.grad_z(t, zetas)
        hess = family.hess_zz(t, zetas)
        for k in range(zetas.shape[0]):
            d = offsets * eps2
            Z = zetas[k][None, :] + d
            x2 = np.sum(np.abs(d) ** 2, axis=1)
            lin = d @ grads[k]
            quad = np.einsum("ij,mi,mj->m", hess[k], d, d)
            two_re_p = -2.0 * np.real(lin + 0.5 * quad)
            vals = family.value(t, Z) + two_re_p - c2 * x2
            margin = min(margin, float(vals.min()))
    return margin


def _ball_offsets(dimension: int, dirs: int, radii: int) -> np.ndarray:
    """Deterministic offsets filling the unit ball: directions x radii."""
    g = unit_sphere_directions(2 * dimension, dirs)
    u = g[:, :dimension] + 1j * g[:, dimension:]
    u = u / np.linalg.norm(u, axis=1)[:, None]
    rr = np.linspace(0.15, 0.999, radii)
    return (rr[:, None, None] * u[None, :, :]).reshape(-1, dimension)


def estimate_C2_eps2(
    family: FamilySpec,
    band: BandRegion,
    C1: float,
    dirs_per_zeta: int = 12,
    radii_per_zeta: int = 10,
) -> Tuple[UniformConstantEstimate, UniformConstantEstimate]:
    """Largest grid-validated (C2, eps2) for the quadratic lower bound
    r(z) >= -2 Re P(z;zeta) + C2 ||z-zeta||^2 on ||z-zeta|| < eps2.

    The search keeps eps2 as large as possible (shrinking C2 first, then
    eps2), enforces 0 < C2 < C1, and floors C2 at 1e-3.
    """
    if C1 <= 0:
        raise ValueError("C1 must be positive")
    offsets = _ball_offsets(family.dimension, dirs_per_zeta, radii_per_zeta)
    eps2_start = 0.95 * band.eps1
    c2_start = 0.99 * C1
    eps2 = eps2_start
    for _ in range(8):
        c2 = c2_start
        while c2 >= C2_FLOOR:
            margin = _quadratic_bound_margin(family, band, c2, eps2, offsets)
            if margin >= 0.0:
                grid = {
                    "zeta_count": sum(b.shape[0] for b in band.boundary.values()),
                    "z_per_zeta": offsets.shape[0],
                }
                return (
                    UniformConstantEstimate(
                        value=c2,
                        margin=margin,
                        grid=grid,
                        note="quadratic lower bound coefficient; C2 < C1 enforced",
                    ),
                    UniformConstantEstimate(
                        value=eps2,
                        margin=band.eps1 - eps2,
                        grid=grid,
                        note="validity radius of the quadratic lower bound",
                    ),
                )
            c2 *= 0.9
        eps2 *= 0.5
    raise ValueError(
        "no valid (C2, eps2) pair above the C2 floor; family too degenerate"
    )


def estimate_C5(family: FamilySpec, band: BandRegion) -> UniformConstantEstimate:
    """Linear bound |P(z;zeta)| <= C5 ||z-zeta||: grid max of the ratio over
    boundary zeta and band z, times 1.05."""
    raw = 0.0
    total = 0
    for t in band.t_grid:
        t = float(t)
        zetas = band.boundary[t]
        pts = band.samples[t]
        grads = family.grad_z(t, zetas)
        hess = family.hess_zz(t, zetas)
        for k in range(zetas.shape[0]):
            d = pts - zetas[k][None, :]
            x = np.linalg.norm(d, axis=1)
            keep = x > 1e-9
            if not np.any(keep):
                continue
            lin = d[keep] @ grads[k]
            quad = np.einsum("ij,mi,mj->m", hess[k], d[keep], d[keep])
            p = -(lin + 0.5 * quad)
            raw = max(raw, float(np.max(np.abs(p) / x[keep])))
            total += int(keep.sum())
    value = MAX_SAFETY * raw
    return UniformConstantEstimate(
        value=value,
        margin=value - raw,
        grid={"pairs": total, "raw_max": raw},
        note="max |P|/||z-zeta|| over boundary zeta x band z; safety 1.05",
    )
