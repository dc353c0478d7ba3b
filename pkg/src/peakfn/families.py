"""Parametric families of strictly pseudoconvex domains with exact derivatives.

Every built-in family is given by a closed-form defining function

    r_t(z) = sum_j a_j |z_j|^2 - 1 + c * Re(t) * Re(z_1^3),

so values, Wirtinger gradients, holomorphic Hessians and Levi matrices are
exact (no numerical differentiation at the core).  The conventions follow the
real-variable calculus on C^n ~ R^{2n}:

    grad_z[j]    = dr/dz_j            (holomorphic derivative)
    grad_zbar[j] = dr/dz conj_j       (= conj(grad_z[j]) for real r)
    hess_zz[i,j] = d^2 r/dz_i dz_j    (symmetric)
    levi[i,j]    = d^2 r/dz_i dzbar_j (Hermitian)

The real gradient of r, seen as a complex n-vector, is 2*grad_zbar; Newton
projection onto the zero level set moves along that direction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np
from scipy.special import ndtri
from scipy.stats import qmc

from .validation import as_complex_points, as_parameter, check_positive

_T_RANGE_TOL = 1e-9


@dataclass(frozen=True)
class FamilySpec:
    """A built-in family (G_t) of bounded domains over a real parameter interval."""

    name: str
    params: Tuple[float, ...] = ()
    t_range: Tuple[float, float] = (0.0, 0.0)
    t_points: int = 1
    dimension: int = 1

    def __post_init__(self):
        if self.name not in _BUILTINS:
            raise ValueError(
                f"unknown family {self.name!r}; built-ins: {sorted(_BUILTINS)}"
            )
        if self.dimension < 1:
            raise ValueError("dimension must be >= 1")
        lo, hi = self.t_range
        if not (np.isfinite(lo) and np.isfinite(hi) and lo <= hi):
            raise ValueError(f"invalid t_range {self.t_range}")
        if self.t_points < 1:
            raise ValueError("t_points must be >= 1")
        _BUILTINS[self.name].validate(self)
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        object.__setattr__(self, "t_range", (float(lo), float(hi)))

    @property
    def t_grid(self) -> np.ndarray:
        """Ordered real parameter grid inside t_range."""
        lo, hi = self.t_range
        if self.t_points == 1:
            return np.array([0.5 * (lo + hi)])
        return np.linspace(lo, hi, self.t_points)

    def check_parameter(self, t) -> float:
        t = as_parameter(t)
        lo, hi = self.t_range
        span = max(hi - lo, 1.0)
        if abs(t.imag) > _T_RANGE_TOL * span:
            raise ValueError(f"parameter t={t} must be real for family {self.name!r}")
        if not (lo - _T_RANGE_TOL * span <= t.real <= hi + _T_RANGE_TOL * span):
            raise ValueError(f"parameter t={t.real} outside t_range {self.t_range}")
        return float(t.real)

    # ------------------------------------------------------------------
    # vectorized closed-form evaluation, Z of shape (m, n)
    # ------------------------------------------------------------------
    def value(self, t, Z: np.ndarray) -> np.ndarray:
        t = self.check_parameter(t)
        return _BUILTINS[self.name].value(self, t, Z)

    def grad_z(self, t, Z: np.ndarray) -> np.ndarray:
        t = self.check_parameter(t)
        return _BUILTINS[self.name].grad_z(self, t, Z)

    def hess_zz(self, t, Z: np.ndarray) -> np.ndarray:
        t = self.check_parameter(t)
        return _BUILTINS[self.name].hess_zz(self, t, Z)

    def levi_matrix(self, t, Z: np.ndarray) -> np.ndarray:
        t = self.check_parameter(t)
        return _BUILTINS[self.name].levi(self, t, Z)


class _QuadraticCubicFamily:
    """r_t(z) = sum a_j |z_j|^2 - 1 + bump * Re(t) * Re(z_1^3)."""

    bump = 0.0

    @classmethod
    def validate(cls, spec: FamilySpec) -> None:
        if spec.params:
            raise ValueError(f"family {spec.name!r} takes no params")

    @classmethod
    def weights(cls, spec: FamilySpec) -> np.ndarray:
        return np.ones(spec.dimension)

    @classmethod
    def value(cls, spec, t, Z):
        a = cls.weights(spec)
        r = (np.abs(Z) ** 2 @ a) - 1.0
        if cls.bump:
            r = r + cls.bump * t * np.real(Z[:, 0] ** 3)
        return r

    @classmethod
    def grad_z(cls, spec, t, Z):
        a = cls.weights(spec)
        g = np.conj(Z) * a
        if cls.bump:
            g = g.copy()
            g[:, 0] += cls.bump * t * 1.5 * Z[:, 0] ** 2
        return g

    @classmethod
    def hess_zz(cls, spec, t, Z):
        m, n = Z.shape
        h = np.zeros((m, n, n), dtype=np.complex128)
        if cls.bump:
            h[:, 0, 0] = cls.bump * t * 3.0 * Z[:, 0]
        return h

    @classmethod
    def levi(cls, spec, t, Z):
        a = cls.weights(spec)
        m, n = Z.shape
        return np.broadcast_to(np.diag(a).astype(np.complex128), (m, n, n)).copy()


class _Disc(_QuadraticCubicFamily):
    @classmethod
    def validate(cls, spec):
        super().validate(spec)
        if spec.dimension != 1:
            raise ValueError("disc family is one-dimensional")


class _Ball(_QuadraticCubicFamily):
    pass


class _Ellipsoid(_QuadraticCubicFamily):
    @classmethod
    def validate(cls, spec):
        if len(spec.params) != spec.dimension:
            raise ValueError("ellipsoid needs one positive axis weight per dimension")
        if any(p <= 0 for p in spec.params):
            raise ValueError("ellipsoid axis weights must be positive")

    @classmethod
    def weights(cls, spec):
        return np.asarray(spec.params, dtype=float)


class _PerturbedBall(_QuadraticCubicFamily):
    bump = 1.0


_BUILTINS: Dict[str, type] = {
    "disc": _Disc,
    "ball": _Ball,
    "ellipsoid": _Ellipsoid,
    "perturbed_ball": _PerturbedBall,
}


@dataclass
class DefiningSample:
    """Value and exact derivative blocks of r_t at one point."""

    r: float
    grad_z: np.ndarray
    grad_zbar: np.ndarray
    hess_zz: np.ndarray
    levi: np.ndarray

    def structural_residuals(self) -> Dict[str, float]:
        """Hermitian/symmetry/conjugacy defects; all ~1e-16 by construction."""
        return {
            "levi_hermitian": float(
                np.max(np.abs(self.levi - self.levi.conj().T), initial=0.0)
            ),
            "hess_symmetric": float(
                np.max(np.abs(self.hess_zz - self.hess_zz.T), initial=0.0)
            ),
            "grad_conjugate": float(
                np.max(np.abs(self.grad_zbar - np.conj(self.grad_z)), initial=0.0)
            ),
        }


def evaluate_defining(family: FamilySpec, t, z) -> DefiningSample:
    """Exact closed-form value and derivatives of r_t at a single point z."""
    Z = as_complex_points(z, family.dimension)
    if Z.shape[0] != 1:
        raise ValueError("evaluate_defining takes a single point")
    r = family.value(t, Z)[0]
    grad = family.grad_z(t, Z)[0]
    return DefiningSample(
        r=float(r),
        grad_z=grad,
        grad_zbar=np.conj(grad),
        hess_zz=family.hess_zz(t, Z)[0],
        levi=family.levi_matrix(t, Z)[0],
    )


# ----------------------------------------------------------------------
# finite-difference self test
# ----------------------------------------------------------------------

def _fd_real_gradient(f, x0: np.ndarray, h: float) -> np.ndarray:
    g = np.zeros_like(x0)
    for k in range(x0.size):
        xp = x0.copy()
        xm = x0.copy()
        xp[k] += h
        xm[k] -= h
        g[k] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def _fd_real_hessian(f, x0: np.ndarray, h: float) -> np.ndarray:
    d = x0.size
    H = np.zeros((d, d))
    f0 = f(x0)
    for i in range(d):
        xp = x0.copy()
        xm = x0.copy()
        xp[i] += h
        xm[i] -= h
        H[i, i] = (f(xp) - 2.0 * f0 + f(xm)) / h**2
    for i in range(d):
        for j in range(i + 1, d):
            vals = []
            for si, sj in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
                x = x0.copy()
                x[i] += si * h
                x[j] += sj * h
                vals.append(si * sj * f(x))
            H[i, j] = H[j, i] = sum(vals) / (4.0 * h**2)
    return H


def derivative_selftest(family: FamilySpec, t, z, step: float) -> Dict[str, float]:
    """Check the closed-form derivative blocks against central differences of r.

    Returns the max absolute deviation per block.  First derivatives use
    ``step``; second derivatives use an internally enlarged step
    (max(step, 5e-4)) since the built-in defining functions are at most cubic
    in the real coordinates, so second differences carry no truncation error
    and the larger step suppresses rounding noise.
    """
    if not (0.0 < step <= 1e-2):
        raise ValueError(f"step must lie in (0, 1e-2], got {step}")
    n = family.dimension
    z0 = as_complex_points(z, n)[0]
    sample = evaluate_defining(family, t, z0)
    x0 = np.concatenate([z0.real, z0.imag])

    def f(x):
        pt = (x[:n] + 1j * x[n:]).reshape(1, n)
        return float(family.value(t, pt)[0])

    g = _fd_real_gradient(f, x0, step)
    grad_z_fd = 0.5 * (g[:n] - 1j * g[n:])

    h2 = max(step, 5e-4)
    H = _fd_real_hessian(f, x0, h2)
    Hxx = H[:n, :n]
    Hxy = H[:n, n:]
    Hyx = H[n:, :n]
    Hyy = H[n:, n:]
    hess_fd = 0.25 * (Hxx - Hyy - 1j * (Hxy + Hyx))
    levi_fd = 0.25 * (Hxx + Hyy + 1j * (Hxy - Hyx))

    return {
        "grad_z": float(np.max(np.abs(grad_z_fd - sample.grad_z))),
        "grad_zbar": float(np.max(np.abs(np.conj(grad_z_fd) - sample.grad_zbar))),
        "hess_zz": float(np.max(np.abs(hess_fd - sample.hess_zz))),
        "levi": float(np.max(np.abs(levi_fd - sample.levi))),
    }


# ----------------------------------------------------------------------
# boundary projection and sampling
# ----------------------------------------------------------------------

_PROJECTION_TOL = 1e-13
_MAX_NEWTON = 80


def project_to_boundary(
    family: FamilySpec,
    t,
    z,
    max_iter: int = _MAX_NEWTON,
    check_uniqueness: bool = False,
) -> np.ndarray:
    """Newton projection of z onto {r_t = 0} along the real gradient flow.

    With ``check_uniqueness`` the projection is restarted from 8 perturbed
    seeds; disagreement beyond 1e-8 signals that z left the uniqueness band.
    """
    z0 = as_complex_points(z, family.dimension)[0]
    zeta = _newton_project(family, t, z0, max_iter)
    if check_uniqueness:
        scale = 1e-3 * (1.0 + np.linalg.norm(z0))
        for k in range(8):
            offset = np.zeros(family.dimension, dtype=np.complex128)
            j = k % family.dimension
            phase = np.exp(1j * np.pi * k / 4.0)
            offset[j] = scale * phase
            other = _newton_project(family, t, z0 + offset, max_iter)
            if np.linalg.norm(other - zeta) > 1e-8:
                raise RuntimeError(
                    "projection seeds disagree: point outside the uniqueness band"
                )
    return zeta


def _newton_project(family, t, z0: np.ndarray, max_iter: int) -> np.ndarray:
    zeta = z0.copy().reshape(1, -1)
    for _ in range(max_iter):
        r = family.value(t, zeta)[0]
        if abs(r) <= _PROJECTION_TOL:
            return zeta[0]
        g = 2.0 * np.conj(family.grad_z(t, zeta)[0])
        gnorm2 = float(np.sum(np.abs(g) ** 2))
        if gnorm2 < 1e-24:
            raise RuntimeError("vanishing gradient during boundary projection")
        zeta = zeta - (r / gnorm2) * g.reshape(1, -1)
    raise RuntimeError(
        f"boundary projection did not converge after {max_iter} iterations"
    )


def _radial_boundary_point(family, t, direction: np.ndarray) -> np.ndarray:
    """Root of s -> r_t(s * direction) on the outward ray from the origin."""
    d = direction / np.linalg.norm(direction)

    def f(s):
        return float(family.value(t, (s * d).reshape(1, -1))[0])

    if f(0.0) >= 0.0:
        raise RuntimeError("domain does not contain the origin; cannot seed rays")
    s_hi = 1.0
    for _ in range(80):
        if f(s_hi) > 0.0:
            break
        s_hi *= 1.5
    else:
        raise RuntimeError("no boundary crossing found along ray")
    s_lo = 0.0
    for _ in range(200):
        mid = 0.5 * (s_lo + s_hi)
        if f(mid) < 0.0:
            s_lo = mid
        else:
            s_hi = mid
        if s_hi - s_lo < 1e-15 * s_hi:
            break
    s = 0.5 * (s_lo + s_hi)
    return _newton_project(family, t, s * d, _MAX_NEWTON)


def unit_sphere_directions(dim_real: int, count: int) -> np.ndarray:
    """Deterministic quasi-uniform directions on S^{dim_real-1} (Halton + probit)."""
    eng = qmc.Halton(d=dim_real, scramble=False)
    eng.fast_forward(1)  # the first Halton point maps to the origin-prone corner
    pts = eng.random(count)
    g = ndtri(np.clip(pts, 1e-12, 1.0 - 1e-12))
    norms = np.linalg.norm(g, axis=1)
    norms[norms < 1e-12] = 1.0
    return g / norms[:, None]


def sample_boundary(family: FamilySpec, t, count: int) -> np.ndarray:
    """Quasi-uniform samples of the boundary of G_t, shape (count, n).

    Dimension 1 uses an exact angle grid; higher dimensions project a
    quasi-uniform sphere grid along rays from the origin.
    """
    if count < 4:
        raise ValueError(f"count must be >= 4, got {count}")
    n = family.dimension
    if n == 1:
        angles = 2.0 * np.pi * np.arange(count) / count
        dirs = np.stack([np.cos(angles) + 1j * np.sin(angles)], axis=1)
    else:
        g = unit_sphere_directions(2 * n, count)
        dirs = g[:, :n] + 1j * g[:, n:]
    out = np.empty((count, n), dtype=np.complex128)
    for k in range(count):
        out[k] = _radial_boundary_point(family, t, dirs[k])
    return out


# ----------------------------------------------------------------------
# the band neighborhood U'
# ----------------------------------------------------------------------

@dataclass
class BandRegion:
    """Sublevel-band surrogate for the boundary neighborhood U'.

    Membership (per t) is ``|r_t(z)| < level``; samples are stored per
    parameter value for downstream constant estimation.
    """

    family: FamilySpec
    eps1: float
    level: float
    boundary: Dict[float, np.ndarray] = field(repr=False)
    samples: Dict[float, np.ndarray] = field(repr=False)
    bbox_lo: np.ndarray = field(repr=False)
    bbox_hi: np.ndarray = field(repr=False)
    diameter: float = 0.0
    min_levi_eig: float = 0.0
    grad_norm_range: Tuple[float, float] = (0.0, 0.0)

    def contains(self, t, Z: np.ndarray) -> np.ndarray:
        return np.abs(self.family.value(t, Z)) < self.level

    @property
    def t_grid(self) -> np.ndarray:
        return self.family.t_grid


def build_band(
    family: FamilySpec,
    eps1: float,
    boundary_count: int = 64,
    radial_count: int = 9,
) -> BandRegion:
    """Build the band {|r_t| < level} with level calibrated so the band is
    roughly an eps1-neighborhood of the boundaries, and verify the Levi form
    stays positive definite on its samples."""
    check_positive("eps1", eps1)
    boundary: Dict[float, np.ndarray] = {}
    samples: Dict[float, np.ndarray] = {}
    grad_norms = []
    all_points = []
    outer_points = []

    for t in family.t_grid:
        t = float(t)
        zeta = sample_boundary(family, t, boundary_count)
        boundary[t] = zeta
        grad = family.grad_z(t, zeta)
        gn = np.linalg.norm(grad, axis=1)
        grad_norms.append(gn)
        gdir = 2.0 * np.conj(grad)
        gdir = gdir / np.linalg.norm(gdir, axis=1)[:, None]
        offsets = np.linspace(-eps1, eps1, radial_count)
        pts = (zeta[None, :, :] + offsets[:, None, None] * gdir[None, :, :]).reshape(
            -1, family.dimension
        )
        samples[t] = pts
        all_points.append(pts)
        outer = zeta + eps1 * gdir
        outer_points.append(outer)

    grad_norms = np.concatenate(grad_norms)
    gscale = 2.0 * float(np.min(grad_norms))
    level = eps1 * gscale

    # every sampled boundary point must lie inside the band
    for t, zeta in boundary.items():
        rb = np.abs(family.value(t, zeta))
        if np.max(rb) >= level:
            raise RuntimeError("boundary samples escaped the band level set")

    stacked = np.concatenate(all_points)
    min_eig = np.inf
    for t in family.t_grid:
        t = float(t)
        levi = family.levi_matrix(t, samples[t])
        eigs = np.linalg.eigvalsh(levi)
        min_eig = min(min_eig, float(np.min(eigs)))
    if min_eig <= 0.0:
        raise ValueError(
            f"eps1={eps1} too large: Levi form not positive definite on the band "
            f"(min eigenvalue {min_eig:.3e})"
        )

    outer = np.concatenate(outer_points)
    diameter = _sample_diameter(outer)

    reals = np.concatenate([stacked.real, stacked.imag], axis=1)
    pad = 0.01 * (reals.max(axis=0) - reals.min(axis=0) + 1e-12)
    bbox_lo = reals.min(axis=0) - pad
    bbox_hi = reals.max(axis=0) + pad

    return BandRegion(
        family=family,
        eps1=float(eps1),
        level=float(level),
        boundary=boundary,
        samples=samples,
        bbox_lo=bbox_lo,
        bbox_hi=bbox_hi,
        diameter=diameter,
        min_levi_eig=min_eig,
        grad_norm_range=(float(np.min(grad_norms)), float(np.max(grad_norms))),
    )


def _sample_diameter(points: np.ndarray) -> float:
    """Euclidean diameter of a point cloud (chunked pairwise max)."""
    m = points.shape[0]
    best = 0.0
    chunk = 512
    for i in range(0, m, chunk):
        block = points[i : i + chunk]
        d = np.linalg.norm(block[:, None, :] - points[None, :, :], axis=2)
        best = max(best, float(d.max()))
    return best
