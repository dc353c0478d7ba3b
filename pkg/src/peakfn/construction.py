"""Cutoff, the glued function phi, the (0,1)-form alpha, and domain inflation.

phi_t(z; zeta) = chi(||z-zeta||) P_t(z; zeta) + (1 - chi(||z-zeta||)) ||z-zeta||^2

glues the Levi polynomial near zeta to the plain distance square far away.
The form alpha has coefficients 0 inside B(zeta, eta1/2) and
-(dphi/dzbar_j)/phi^2 outside; its closed-form first derivatives (dimension 1)
feed the product-integration rule of the dbar solver.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from .families import BandRegion, FamilySpec
from .levi import LeviPolynomial, levi_polynomial
from .validation import as_complex_points, check_positive

CUTOFF_KINDS = ("quintic-smoothstep", "exp-mollifier")
PHI_FLOOR = 1e-14


class ConstructionError(RuntimeError):
    """A certified inequality failed on the construction grids."""


@dataclass(frozen=True)
class CutoffProfile:
    """Radial cutoff: 1 on [0, eta1/2], 0 on [eta1, inf), monotone, C^1+."""

    eta1: float
    kind: str = "quintic-smoothstep"

    def __post_init__(self):
        check_positive("eta1", self.eta1)
        if self.kind not in CUTOFF_KINDS:
            raise ValueError(f"cutoff kind must be one of {CUTOFF_KINDS}")

    @property
    def inner(self) -> float:
        return 0.5 * self.eta1

    def value(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if np.any(x < 0):
            raise ValueError("cutoff argument must be nonnegative")
        a, b = self.inner, self.eta1
        out = np.ones_like(x)
        out[x >= b] = 0.0
        mid = (x > a) & (x < b)
        if np.any(mid):
            if self.kind == "quintic-smoothstep":
                u = (x[mid] - a) / (b - a)
                s = u**3 * (6.0 * u**2 - 15.0 * u + 10.0)
                out[mid] = 1.0 - s
            else:
                p = _bump(b - x[mid])
                q = _bump(x[mid] - a)
                out[mid] = p / (p + q)
        return out

    def derivative(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        a, b = self.inner, self.eta1
        out = np.zeros_like(x)
        mid = (x > a) & (x < b)
        if np.any(mid):
            if self.kind == "quintic-smoothstep":
                u = (x[mid] - a) / (b - a)
                out[mid] = -30.0 * u**2 * (u - 1.0) ** 2 / (b - a)
            else:
                p = _bump(b - x[mid])
                q = _bump(x[mid] - a)
                dp = -_bump_d(b - x[mid])
                dq = _bump_d(x[mid] - a)
                out[mid] = (dp * q - p * dq) / (p + q) ** 2
        return out

    def second_derivative(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        a, b = self.inner, self.eta1
        out = np.zeros_like(x)
        mid = (x > a) & (x < b)
        if np.any(mid):
            if self.kind == "quintic-smoothstep":
                u = (x[mid] - a) / (b - a)
                out[mid] = -60.0 * u * (u - 1.0) * (2.0 * u - 1.0) / (b - a) ** 2
            else:
                p = _bump(b - x[mid])
                q = _bump(x[mid] - a)
                dp = -_bump_d(b - x[mid])
                dq = _bump_d(x[mid] - a)
                d2p = _bump_d2(b - x[mid])
                d2q = _bump_d2(x[mid] - a)
                N = dp * q - p * dq
                D = p + q
                out[mid] = ((d2p * q - p * d2q) * D - 2.0 * N * (dp + dq)) / D**3
        return out


def _bump(y: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", over="ignore", under="ignore"):
        return np.where(y > 0, np.exp(-1.0 / np.maximum(y, 1e-300)), 0.0)


def _bump_d(y: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", over="ignore", under="ignore"):
        return np.where(y > 0, _bump(y) / np.maximum(y, 1e-300) ** 2, 0.0)


def _bump_d2(y: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", over="ignore", under="ignore"):
        y_ = np.maximum(y, 1e-300)
        return np.where(y > 0, _bump(y) * (1.0 - 2.0 * y_) / y_**4, 0.0)


def cutoff(profile: CutoffProfile, s) -> np.ndarray:
    """chi-hat(s); chi(z; zeta) = cutoff(||z - zeta||)."""
    return profile.value(s)


class PhiEvaluator:
    """phi_t(.; zeta) with closed-form Wirtinger derivatives."""

    def __init__(self, family: FamilySpec, t, zeta, profile: CutoffProfile):
        self.family = family
        self.t = family.check_parameter(t)
        self.zeta = as_complex_points(zeta, family.dimension)[0]
        self.profile = profile
        self.poly: LeviPolynomial = levi_polynomial(family, t, self.zeta)

    def _parts(self, Z: np.ndarray):
        d = Z - self.zeta[None, :]
        x = np.linalg.norm(d, axis=1)
        p = self.poly(Z)
        chi = self.profile.value(x)
        return d, x, p, chi

    def value(self, Z) -> np.ndarray:
        Z = as_complex_points(Z, self.family.dimension)
        d, x, p, chi = self._parts(Z)
        return chi * p + (1.0 - chi) * x**2

    def dbar(self, Z) -> np.ndarray:
        """dphi/dzbar_j, shape (m, n); vanishes for x <= eta1/2 and x >= eta1
        up to the (1-chi) d_j term."""
        Z = as_complex_points(Z, self.family.dimension)
        d, x, p, chi = self._parts(Z)
        dchi = self.profile.derivative(x)
        xs = np.where(x > 0, x, 1.0)
        rad = dchi * (p - x**2) / (2.0 * xs)
        return rad[:, None] * d + (1.0 - chi)[:, None] * d

    def with_derivs(self, Z) -> Dict[str, np.ndarray]:
        """phi and first/second Wirtinger derivatives (dimension 1 only)."""
        if self.family.dimension != 1:
            raise ValueError("with_derivs is implemented for dimension 1")
        Z = as_complex_points(Z, 1)
        d, x, p, chi = self._parts(Z)
        D = d[:, 0]
        dchi = self.profile.derivative(x)
        d2chi = self.profile.second_derivative(x)
        pz = self.poly.z_derivative(Z)[:, 0]
        xs = np.where(x > 0, x, 1.0)
        q = p - x**2

        phi = chi * p + (1.0 - chi) * x**2
        phi_zbar = dchi * D * q / (2.0 * xs) + (1.0 - chi) * D
        phi_z = dchi * np.conj(D) * q / (2.0 * xs) + chi * pz + (1.0 - chi) * np.conj(D)
        phi_zbar_zbar = (
            d2chi * D**2 * q / (4.0 * xs**2)
            - dchi * D**2 * q / (4.0 * xs**3)
            - dchi * D**2 / xs
        )
        phi_zbar_z = (
            d2chi * q / 4.0
            + dchi * q / (4.0 * xs)
            + dchi * D * (pz - np.conj(D)) / (2.0 * xs)
            - dchi * xs / 2.0
            + (1.0 - chi)
        )
        return {
            "phi": phi,
            "phi_z": phi_z,
            "phi_zbar": phi_zbar,
            "phi_zbar_z": phi_zbar_z,
            "phi_zbar_zbar": phi_zbar_zbar,
            "x": x,
        }


def phi(family: FamilySpec, t, zeta, z, profile: CutoffProfile):
    """Convenience wrapper; returns a scalar for a single point."""
    ev = PhiEvaluator(family, t, zeta, profile)
    vals = ev.value(z)
    return complex(vals[0]) if vals.shape[0] == 1 else vals


class AlphaField:
    """Coefficients alpha_{t,j}(.; zeta) of the dbar-closed (0,1)-form."""

    def __init__(self, phi_ev: PhiEvaluator):
        self.phi_ev = phi_ev
        self.eta1 = phi_ev.profile.eta1
        self.zeta = phi_ev.zeta
        self.dimension = phi_ev.family.dimension

    def coefficients(self, Z) -> np.ndarray:
        Z = as_complex_points(Z, self.dimension)
        x = np.linalg.norm(Z - self.zeta[None, :], axis=1)
        inner = x < 0.5 * self.eta1
        out = np.zeros((Z.shape[0], self.dimension), dtype=np.complex128)
        if np.all(inner):
            return out
        rest = ~inner
        phi_vals = self.phi_ev.value(Z[rest])
        if np.any(np.abs(phi_vals) < PHI_FLOOR):
            raise ConstructionError(
                "phi vanished outside B(zeta, eta1/2): certified lower bound breached"
            )
        dbar = self.phi_ev.dbar(Z[rest])
        out[rest] = -dbar / (phi_vals**2)[:, None]
        return out

    def coefficients_and_derivs(self, Z):
        """alpha, dalpha/dw, dalpha/dwbar for dimension 1 (product integration)."""
        Z = as_complex_points(Z, 1)
        x = np.linalg.norm(Z - self.zeta[None, :], axis=1)
        inner = x < 0.5 * self.eta1
        a = np.zeros(Z.shape[0], dtype=np.complex128)
        aw = np.zeros_like(a)
        awb = np.zeros_like(a)
        rest = ~inner
        if np.any(rest):
            d = self.phi_ev.with_derivs(Z[rest])
            f = d["phi"]
            if np.any(np.abs(f) < PHI_FLOOR):
                raise ConstructionError(
                    "phi vanished outside B(zeta, eta1/2): certified lower bound breached"
                )
            fz, fzb = d["phi_z"], d["phi_zbar"]
            fzbz, fzbzb = d["phi_zbar_z"], d["phi_zbar_zbar"]
            a[rest] = -fzb / f**2
            aw[rest] = -fzbz / f**2 + 2.0 * fzb * fz / f**3
            awb[rest] = -fzbzb / f**2 + 2.0 * fzb**2 / f**3
        return a, aw, awb


def alpha_form(family: FamilySpec, t, zeta, z, profile: CutoffProfile) -> np.ndarray:
    """alpha coefficients at z; returns shape (n,) for a single point."""
    field = AlphaField(PhiEvaluator(family, t, zeta, profile))
    coeffs = field.coefficients(z)
    return coeffs[0] if coeffs.shape[0] == 1 else coeffs


def check_phi_lower_bound(
    family: FamilySpec,
    band: BandRegion,
    profile: CutoffProfile,
    c2: float,
    rng: np.random.Generator,
    zeta_per_t: int = 16,
    samples_per_zeta: int = 200,
) -> Dict[str, float]:
    """Verify 2 Re phi >= C2 eta1^2 / 8 on sampled (t, zeta, z) with
    ||z - zeta|| >= eta1/2 and r_t(z) below the threshold.

    Raises ConstructionError with the worst sample if the margin is negative.
    """
    eta1 = profile.eta1
    threshold = c2 * eta1**2 / 8.0
    min_margin = np.inf
    worst = None
    total = 0
    for t in band.t_grid:
        t = float(t)
        zetas = band.boundary[t]
        step = max(1, zetas.shape[0] // zeta_per_t)
        zsub = zetas[::step]
        pool = _threshold_pool(family, band, t, threshold, rng, 4 * samples_per_zeta)
        for k in range(zsub.shape[0]):
            ev = PhiEvaluator(family, t, zsub[k], profile)
            x = np.linalg.norm(pool - zsub[k][None, :], axis=1)
            keep = x >= 0.5 * eta1
            if not np.any(keep):
                continue
            vals = 2.0 * np.real(ev.value(pool[keep])) - threshold
            total += int(keep.sum())
            i = int(np.argmin(vals))
            if vals[i] < min_margin:
                min_margin = float(vals[i])
                worst = {"t": t, "zeta": zsub[k].tolist(), "z": pool[keep][i].tolist()}
    report = {
        "threshold": threshold,
        "min_margin": float(min_margin),
        "samples": total,
        "worst": worst,
    }
    if min_margin < 0:
        raise ConstructionError(
            f"2 Re phi lower bound failed (margin {min_margin:.3e}) at {worst}"
        )
    return report


def _threshold_pool(family, band, t, threshold, rng, count):
    """Points with r_t < threshold: interior + band rejection samples."""
    lo, hi = band.bbox_lo, band.bbox_hi
    n = family.dimension
    picked = []
    have = 0
    for _ in range(200):
        raw = rng.uniform(lo, hi, size=(4 * count, 2 * n))
        pts = raw[:, :n] + 1j * raw[:, n:]
        keep = family.value(t, pts) < threshold
        picked.append(pts[keep])
        have += int(keep.sum())
        if have >= count:
            break
    pool = np.concatenate(picked)[:count]
    if pool.shape[0] == 0:
        raise ConstructionError("no samples below the phi-bound threshold")
    return pool


@dataclass
class InflatedDomains:
    """Sublevel inflations G ⊂ G_hat ⊂ G_tilde at levels 0 < eta_hat < eta."""

    family: FamilySpec
    band: BandRegion
    eta: float
    eta_hat: float

    def in_domain(self, t, Z) -> np.ndarray:
        return self.family.value(t, Z) < 0.0

    def in_closure(self, t, Z, tol: float = 1e-12) -> np.ndarray:
        return self.family.value(t, Z) <= tol

    def in_hat(self, t, Z) -> np.ndarray:
        return self.family.value(t, Z) < self.eta_hat

    def in_tilde(self, t, Z) -> np.ndarray:
        return self.family.value(t, Z) < self.eta

    def sample(
        self, t, count: int, rng: np.random.Generator, level: Optional[float] = None
    ) -> np.ndarray:
        """Rejection samples of {r_t < level} (default: the domain itself)."""
        level = 0.0 if level is None else level
        lo, hi = self.band.bbox_lo, self.band.bbox_hi
        n = self.family.dimension
        out = []
        have = 0
        for _ in range(400):
            raw = rng.uniform(lo, hi, size=(max(4 * count, 256), 2 * n))
            pts = raw[:, :n] + 1j * raw[:, n:]
            keep = self.family.value(t, pts) < level
            out.append(pts[keep])
            have += int(keep.sum())
            if have >= count:
                break
        pts = np.concatenate(out)
        if pts.shape[0] < count:
            raise ConstructionError("rejection sampling failed to fill the region")
        return pts[:count]

    def boundary_radius(self, t, directions: np.ndarray, level: float) -> np.ndarray:
        """Radial distance from the origin to {r_t = level} along unit rays."""
        k = directions.shape[0]
        lo_s = np.zeros(k)
        hi_s = np.ones(k)
        for _ in range(80):
            vals = self.family.value(t, hi_s[:, None] * directions)
            grow = vals <= level
            if not np.any(grow):
                break
            hi_s[grow] *= 1.5
        for _ in range(90):
            mid = 0.5 * (lo_s + hi_s)
            inside = self.family.value(t, mid[:, None] * directions) < level
            lo_s = np.where(inside, mid, lo_s)
            hi_s = np.where(inside, hi_s, mid)
        return 0.5 * (lo_s + hi_s)

    def connectivity_check(
        self, t, rng: np.random.Generator, count: int = 64, subdivisions: int = 32
    ) -> float:
        """Fraction of sampled G_tilde points whose segment to the origin stays
        inside G_tilde (diagnostic; 1.0 for star-shaped sublevel sets)."""
        pts = self.sample(t, count, rng, level=self.eta)
        fracs = np.linspace(0.0, 1.0, subdivisions)
        ok = 0
        for z in pts:
            seg = fracs[:, None] * z[None, :]
            if np.all(self.family.value(t, seg) < self.eta):
                ok += 1
        return ok / count


def inflate_domains(
    family: FamilySpec, band: BandRegion, c2: float, eta1: float
) -> InflatedDomains:
    """eta = half the upper bound C2 eta1^2 / 8; eta_hat = eta / 2."""
    check_positive("c2", c2)
    check_positive("eta1", eta1)
    bound = c2 * eta1**2 / 8.0
    eta = 0.5 * bound
    return InflatedDomains(family=family, band=band, eta=eta, eta_hat=0.5 * eta)


def estimate_C3(
    fields,
    region: InflatedDomains,
    rng: np.random.Generator,
    samples_per_field: int = 600,
    annulus_per_field: int = 400,
) -> Dict[str, float]:
    """Grid bound C3 on max_j |alpha_{t,j}| over G_tilde, with 1.05 safety.

    Samples each field on G_tilde plus a dense annulus around its base point
    where the cutoff varies.
    """
    raw = 0.0
    total = 0
    for field in fields:
        t = field.phi_ev.t
        zeta = field.zeta
        pts = region.sample(t, samples_per_field, rng, level=region.eta)
        n = field.dimension
        dirs = rng.normal(size=(annulus_per_field, 2 * n))
        dirs /= np.linalg.norm(dirs, axis=1)[:, None]
        cdirs = dirs[:, :n] + 1j * dirs[:, n:]
        cdirs /= np.linalg.norm(cdirs, axis=1)[:, None]
        radii = rng.uniform(0.5 * field.eta1, 1.2 * field.eta1, annulus_per_field)
        ring = zeta[None, :] + radii[:, None] * cdirs
        ring = ring[region.in_tilde(t, ring)]
        allpts = np.concatenate([pts, ring]) if ring.size else pts
        coeffs = field.coefficients(allpts)
        raw = max(raw, float(np.max(np.abs(coeffs), initial=0.0)))
        total += allpts.shape[0]
    return {"C3": 1.05 * raw, "raw_max": raw, "samples": total}
