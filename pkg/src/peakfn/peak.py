"""Assembly of f, g, h = exp(-g) and the downstream uniform constants.

Both branches of g are evaluated in cleared form,

    near (||z-zeta|| < eta2):  g = P / (1 - P (v - C4))
    far:                       g = phi / (1 + (C4 - v) phi),

algebraically identical to 1/f with f = 1/phi + C4 - v; the cleared forms
stay finite across the zero set of phi, which realizes the removable
singularity numerically.  For ||z-zeta|| <= eta1/2 the cutoff is exactly 1,
so phi == P and the two branches agree bitwise on the overlap.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from .construction import CutoffProfile, InflatedDomains, PhiEvaluator
from .dbar import DbarSolution
from .families import FamilySpec
from .validation import as_complex_points, check_positive

VERSION = "0.1.0"


def derive_downstream_constants(
    eta1: float, C4: float, C5: float, diam_U: float
) -> Dict[str, float]:
    """eta2, C6, C7, C8, d1, d2 from the closed-form choices.

    eta2 is half its strict upper bound min(eta1/2, 1/(4 C4 C5)); then
    2 C4 C5 eta2 <= 1/4 keeps the C6 denominator away from 0, C7 is the
    sharp constant with |e^lambda - 1| <= C7 |lambda| on |lambda| <= C6 eta2,
    and d2 = exp(-C8) < 1.
    """
    for name, val in (("eta1", eta1), ("C4", C4), ("C5", C5), ("diam_U", diam_U)):
        check_positive(name, val)
    eta2 = 0.5 * min(0.5 * eta1, 1.0 / (4.0 * C4 * C5))
    C6 = C5 / (1.0 - 2.0 * C4 * C5 * eta2)
    lam = C6 * eta2
    C7 = math.expm1(lam) / lam if lam > 0 else 1.0
    d1 = C6 * C7
    C8 = eta1**2 / (1.0 + 2.0 * diam_U**2 * C4) ** 2
    d2 = math.exp(-C8)
    return {"eta2": eta2, "C6": C6, "C7": C7, "C8": C8, "d1": d1, "d2": d2}


@dataclass
class ConstantsCertificate:
    """All uniform constants of one construction run, with provenance."""

    eps1: float
    eps2: float
    eta1: float
    eta2: float
    eta: float
    eta_hat: float
    C1: float
    C2: float
    C3: float
    C4: float
    C5: float
    C6: float
    C7: float
    C8: float
    d1: float
    d2: float
    diam_U: float
    cutoff_kind: str = "quintic-smoothstep"
    safety_factors: Dict[str, float] = field(default_factory=dict)
    grids: Dict[str, object] = field(default_factory=dict)
    provenance: Dict[str, str] = field(default_factory=dict)
    solver: Dict[str, object] = field(default_factory=dict)
    family: Dict[str, object] = field(default_factory=dict)
    seed: int = 0
    version: str = VERSION

    def validate(self) -> None:
        """Internal consistency of a freshly built certificate."""
        if not (0.0 < self.C2 < self.C1 < 1.0):
            raise ValueError("need 0 < C2 < C1 < 1")
        if not (0.0 < self.eta < self.C2 * self.eta1**2 / 8.0):
            raise ValueError("need 0 < eta < C2 eta1^2 / 8")
        if not (0.0 < self.eta_hat < self.eta):
            raise ValueError("need 0 < eta_hat < eta")
        if not (
            0.0 < self.eta2 < min(0.5 * self.eta1, 1.0 / (4.0 * self.C4 * self.C5))
        ):
            raise ValueError("need 0 < eta2 < min(eta1/2, 1/(4 C4 C5))")
        if not (self.eta1 < self.eps2):
            raise ValueError("need eta1 < eps2")
        if abs(self.d2 - math.exp(-self.C8)) > 1e-12:
            raise ValueError("d2 must equal exp(-C8)")
        if abs(self.d1 - self.C6 * self.C7) > 1e-12 or self.d1 <= 0:
            raise ValueError("d1 must equal C6 C7 > 0")

    def to_json_dict(self) -> dict:
        out = {}
        for k, v in self.__dict__.items():
            if isinstance(v, np.floating):
                v = float(v)
            out[k] = v
        return out

    @classmethod
    def from_json_dict(cls, data: dict) -> "ConstantsCertificate":
        return cls(**data)

    def canonical_bytes(self) -> bytes:
        return json.dumps(self.to_json_dict(), sort_keys=True).encode()

    def sha256(self) -> str:
        return hashlib.sha256(self.canonical_bytes()).hexdigest()


class PeakEvaluator:
    """Branch-aware evaluator of f, g, h for one (t, zeta)."""

    def __init__(
        self,
        family: FamilySpec,
        t,
        zeta,
        certificate: ConstantsCertificate,
        dbar_solution: DbarSolution,
        region: Optional[InflatedDomains] = None,
    ):
        self.family = family
        self.t = family.check_parameter(t)
        self.zeta = as_complex_points(zeta, family.dimension)[0]
        self.certificate = certificate
        self.dbar = dbar_solution
        self.region = region
        profile = CutoffProfile(eta1=certificate.eta1, kind=certificate.cutoff_kind)
        self.phi_ev = PhiEvaluator(family, t, self.zeta, profile)
        self.poly = self.phi_ev.poly
        h0 = complex(self.eval_h(self.zeta.reshape(1, -1), check_domain=False)[0])
        if abs(h0 - 1.0) > 1e-8:
            raise RuntimeError(f"peak normalization failed: h(zeta;zeta) = {h0}")

    def _check_domain(self, Z):
        r = self.family.value(self.t, Z)
        if np.any(r >= self.certificate.eta_hat + 1e-12):
            worst = float(np.max(r))
            raise ValueError(
                f"evaluation outside the inflated domain (r = {worst:.3e} "
                f">= eta_hat = {self.certificate.eta_hat:.3e})"
            )

    def eval_g(self, Z, check_domain: bool = True) -> np.ndarray:
        Z = as_complex_points(Z, self.family.dimension)
        if check_domain:
            self._check_domain(Z)
        cert = self.certificate
        x = np.linalg.norm(Z - self.zeta[None, :], axis=1)
        v = self.dbar.v(Z)
        g = np.empty(Z.shape[0], dtype=np.complex128)

        near = x < cert.eta2
        if np.any(near):
            p = self.poly(Z[near])
            den = 1.0 - p * (v[near] - cert.C4)
            _guard_denominator(den)
            g[near] = p / den
        far = ~near
        if np.any(far):
            ph = self.phi_ev.value(Z[far])
            den = 1.0 + (cert.C4 - v[far]) * ph
            _guard_denominator(den)
            g[far] = ph / den
        return g

    def eval_h(self, Z, check_domain: bool = True) -> np.ndarray:
        return np.exp(-self.eval_g(Z, check_domain=check_domain))

    def eval_f(self, Z, check_domain: bool = True) -> np.ndarray:
        """f = 1/phi + C4 - v where |phi| is bounded away from 0."""
        Z = as_complex_points(Z, self.family.dimension)
        if check_domain:
            self._check_domain(Z)
        ph = self.phi_ev.value(Z)
        if np.any(np.abs(ph) < 1e-12):
            raise ValueError("f requested at a zero of phi; use eval_g there")
        return 1.0 / ph + self.certificate.C4 - self.dbar.v(Z)

    def branch_agreement(self, count: int = 64) -> float:
        """Max |g_near - g_far| over the overlap annulus (eta2/2, eta2)."""
        cert = self.certificate
        n = self.family.dimension
        k = np.arange(count)
        radii = cert.eta2 * (0.5 + 0.5 * (k + 0.5) / count)
        ang = 2.0 * np.pi * k / count
        dirs = np.zeros((count, n), dtype=np.complex128)
        dirs[:, 0] = np.cos(ang) + 1j * np.sin(ang)
        if n > 1:
            dirs[:, 1 % n] += 0.3j * np.sin(2 * ang)
            dirs /= np.linalg.norm(dirs, axis=1)[:, None]
        Z = self.zeta[None, :] + radii[:, None] * dirs
        v = self.dbar.v(Z)
        p = self.poly(Z)
        ph = self.phi_ev.value(Z)
        keep = np.abs(ph) > 1e-8
        g_near = p[keep] / (1.0 - p[keep] * (v[keep] - cert.C4))
        g_far = ph[keep] / (1.0 + (cert.C4 - v[keep]) * ph[keep])
        return float(np.max(np.abs(g_near - g_far), initial=0.0))


def _guard_denominator(den: np.ndarray) -> None:
    if np.any(np.abs(den) < 1e-12):
        raise RuntimeError(
            "certificate breach: f vanished (denominator of g ~ 0); "
            "Re f > 0 should hold on the certified region"
        )


def make_peak_evaluator(
    family: FamilySpec,
    t,
    zeta,
    certificate: ConstantsCertificate,
    dbar_solution: DbarSolution,
    region: Optional[InflatedDomains] = None,
) -> PeakEvaluator:
    return PeakEvaluator(family, t, zeta, certificate, dbar_solution, region)


def eval_h(evaluator: PeakEvaluator, z) -> complex:
    """h at a single point of the inflated domain."""
    vals = evaluator.eval_h(z)
    return complex(vals[0])
