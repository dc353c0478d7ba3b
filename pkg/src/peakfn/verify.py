"""Independent verification of the peak-function bounds on fresh samples.

Everything here re-tests inequalities the construction already certified,
using a seeded generator distinct from the construction grids.  Negative
margins produce FAIL rows, never exceptions; the CLI exit code carries the
status.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .construction import InflatedDomains
from .dbar import fd_dbar
from .families import FamilySpec, project_to_boundary
from .peak import ConstantsCertificate, PeakEvaluator


@dataclass
class PropertyResult:
    name: str
    margin: float
    samples: int
    passed: bool
    details: Dict[str, float] = field(default_factory=dict)

    def row(self) -> dict:
        return {
            "name": self.name,
            "margin": self.margin,
            "samples": self.samples,
            "pass": bool(self.passed),
            "details": self.details,
        }


def verify_holomorphy(
    func: Callable[[np.ndarray], np.ndarray],
    grid: np.ndarray,
    step: float = 1e-3,
) -> Dict[str, float]:
    """Cauchy-Riemann residual stats of a C^n -> C evaluator on a grid."""
    res = np.abs(fd_dbar(func, grid, step))
    return {
        "max": float(res.max()),
        "mean": float(res.mean()),
        "count": int(grid.shape[0]),
        "step": step,
    }


def _boundary_points(
    family: FamilySpec, t, count: int, rng: np.random.Generator
) -> np.ndarray:
    """Random boundary points by vectorized radial bisection from the origin."""
    n = family.dimension
    raw = rng.normal(size=(count, 2 * n))
    raw /= np.linalg.norm(raw, axis=1)[:, None]
    dirs = raw[:, :n] + 1j * raw[:, n:]
    dirs /= np.linalg.norm(dirs, axis=1)[:, None]
    lo = np.zeros(count)
    hi = np.ones(count)
    for _ in range(60):
        vals = family.value(t, hi[:, None] * dirs)
        grow = vals <= 0.0
        if not np.any(grow):
            break
        hi[grow] *= 1.5
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        inside = family.value(t, mid[:, None] * dirs) < 0.0
        lo = np.where(inside, mid, lo)
        hi = np.where(inside, hi, mid)
    return 0.5 * (lo + hi)[:, None] * dirs


def _closure_samples(
    family: FamilySpec,
    region: InflatedDomains,
    t,
    count: int,
    rng: np.random.Generator,
) -> np.ndarray:
    interior = region.sample(t, max(1, int(0.8 * count)), rng, level=0.0)
    boundary = _boundary_points(family, t, count - interior.shape[0], rng)
    return np.concatenate([interior, boundary])


def verify_theorem_bounds(
    family: FamilySpec,
    certificate: ConstantsCertificate,
    evaluators: Dict,
    region: InflatedDomains,
    rng: np.random.Generator,
    sample_budget: int = 2000,
    exclusion_radius: float = 1e-2,
    near_budget: int = 1000,
) -> List[PropertyResult]:
    """Conclusions (a)-(c) on fresh random samples, margins reported."""
    cert = certificate
    a_gap = np.inf
    a_peak_dev = 0.0
    a_count = 0
    gap_margin = np.inf
    b_margin = np.inf
    b_count = 0
    c_margin = np.inf
    c_count = 0

    for (t, _), ev in evaluators.items():
        zeta = ev.zeta
        closure = _closure_samples(family, region, t, sample_budget, rng)
        x = np.linalg.norm(closure - zeta[None, :], axis=1)
        keep = x > exclusion_radius
        h = ev.eval_h(closure[keep], check_domain=False)
        a_gap = min(a_gap, float(1.0 - np.max(np.abs(h))))
        a_count += int(keep.sum())
        a_peak_dev = max(
            a_peak_dev, abs(complex(ev.eval_h(zeta.reshape(1, -1))[0]) - 1.0)
        )

        hb = np.abs(h[np.abs(family.value(t, closure[keep])) <= 1e-9])
        if hb.shape[0] >= 2:
            second = float(np.sort(hb)[-2])
            gap_margin = min(gap_margin, 1.0 - second)

        near = _ball_samples(zeta, cert.eta2, near_budget, family.dimension, rng)
        near = near[region.in_hat(t, near)]
        if near.shape[0]:
            xn = np.linalg.norm(near - zeta[None, :], axis=1)
            hn = ev.eval_h(near, check_domain=False)
            b_margin = min(b_margin, float(np.min(cert.d1 * xn - np.abs(1.0 - hn))))
            b_count += near.shape[0]

        far = closure[x >= cert.eta1]
        if far.shape[0]:
            hf = ev.eval_h(far, check_domain=False)
            c_margin = min(c_margin, float(np.min(cert.d2 - np.abs(hf))))
            c_count += far.shape[0]

    return [
        PropertyResult(
            name="peak_a",
            margin=a_gap,
            samples=a_count,
            passed=bool(a_gap > 0 and a_peak_dev <= 1e-8),
            details={"max_peak_deviation": a_peak_dev},
        ),
        PropertyResult(
            name="peak_gap",
            margin=float(gap_margin if np.isfinite(gap_margin) else a_gap),
            samples=a_count,
            passed=bool(gap_margin > 0 or not np.isfinite(gap_margin)),
            details={},
        ),
        PropertyResult(
            name="lipschitz_b",
            margin=float(b_margin),
            samples=b_count,
            passed=bool(b_margin >= 0),
            details={"d1": cert.d1, "eta2": cert.eta2},
        ),
        PropertyResult(
            name="away_c",
            margin=float(c_margin),
            samples=c_count,
            passed=bool(c_margin >= 0),
            details={"d2": cert.d2, "eta1": cert.eta1},
        ),
    ]


def _ball_samples(center, radius, count, n, rng) -> np.ndarray:
    raw = rng.normal(size=(count, 2 * n))
    raw /= np.linalg.norm(raw, axis=1)[:, None]
    dirs = raw[:, :n] + 1j * raw[:, n:]
    dirs /= np.linalg.norm(dirs, axis=1)[:, None]
    radii = radius * rng.uniform(0.0, 1.0, count) ** (1.0 / (2 * n))
    return center[None, :] + radii[:, None] * dirs


def replay_certificate(
    family: FamilySpec,
    certificate: ConstantsCertificate,
    evaluators: Dict,
    region: InflatedDomains,
    rng: np.random.Generator,
    pairs: int = 2000,
) -> List[PropertyResult]:
    """Replay every certified inequality on fresh random samples."""
    cert = certificate
    results: List[PropertyResult] = []
    t_list = sorted({t for (t, _) in evaluators})
    per_t = max(8, pairs // max(1, len(t_list)))

    # Eq (2): r >= -2 Re P + C2 x^2 for x < eps2, zeta on the boundary
    eq2 = np.inf
    n_eq2 = 0
    for t in t_list:
        zetas = _boundary_points(family, t, 12, rng)
        for k in range(zetas.shape[0]):
            Z = _ball_samples(zetas[k], cert.eps2 * 0.999, per_t // 12 + 4,
                              family.dimension, rng)
            d = Z - zetas[k][None, :]
            x2 = np.sum(np.abs(d) ** 2, axis=1)
            g = family.grad_z(t, zetas[k].reshape(1, -1))[0]
            hszz = family.hess_zz(t, zetas[k].reshape(1, -1))[0]
            p = -(d @ g + 0.5 * np.einsum("ij,mi,mj->m", hszz, d, d))
            vals = family.value(t, Z) + 2.0 * np.real(p) - cert.C2 * x2
            eq2 = min(eq2, float(vals.min()))
            n_eq2 += Z.shape[0]
    results.append(
        PropertyResult("replay_eq2", eq2, n_eq2, eq2 >= 0, {"C2": cert.C2})
    )

    threshold = cert.C2 * cert.eta1**2 / 8.0
    eq3 = np.inf
    n_eq3 = 0
    c5_m = np.inf
    c4_m = np.inf
    ref_m = np.inf
    near_g = np.inf
    farg = np.inf
    eq4 = np.inf
    for (t, _), ev in evaluators.items():
        zeta = ev.zeta
        pool = region.sample(t, per_t, rng, level=threshold)
        x = np.linalg.norm(pool - zeta[None, :], axis=1)

        sel = x >= 0.5 * cert.eta1
        if np.any(sel):
            vals = 2.0 * np.real(ev.phi_ev.value(pool[sel])) - threshold
            eq3 = min(eq3, float(vals.min()))
            n_eq3 += int(sel.sum())

        keep = x > 1e-9
        p = ev.poly(pool[keep])
        c5_m = min(c5_m, float(np.min(cert.C5 * x[keep] - np.abs(p))))

        tilde = region.sample(t, per_t, rng, level=region.eta)
        c4_m = min(c4_m, float(cert.C4 - np.max(np.abs(ev.dbar.v(tilde)))))

        # Re f > 0 on (G_tilde minus the half ball) and on the closure
        xt = np.linalg.norm(tilde - zeta[None, :], axis=1)
        ft = tilde[xt >= 0.5 * cert.eta1]
        closure = _closure_samples(family, region, t, per_t, rng)
        xc = np.linalg.norm(closure - zeta[None, :], axis=1)
        fc = closure[(xc > 1e-6) & (xc < 0.5 * cert.eta1)]
        for pts in (ft, fc):
            if pts.shape[0]:
                phiv = ev.phi_ev.value(pts)
                ok = np.abs(phiv) > 1e-12
                if np.any(ok):
                    fv = 1.0 / phiv[ok] + cert.C4 - ev.dbar.v(pts[ok])
                    ref_m = min(ref_m, float(np.min(np.real(fv))))

        near = _ball_samples(zeta, cert.eta2 * 0.999, per_t // 2,
                             family.dimension, rng)
        near = near[region.in_hat(t, near)]
        if near.shape[0]:
            xn = np.linalg.norm(near - zeta[None, :], axis=1)
            gn = ev.eval_g(near, check_domain=False)
            near_g = min(near_g, float(np.min(cert.C6 * xn - np.abs(gn))))

        farpts = closure[xc >= cert.eta1]
        if farpts.shape[0]:
            gf = ev.eval_g(farpts, check_domain=False)
            farg = min(farg, float(np.min(np.real(gf) - cert.C8)))
            eq4 = min(eq4, float(np.min(cert.d2 - np.exp(-np.real(gf)))))

    results.extend(
        [
            PropertyResult("replay_eq3", eq3, n_eq3, eq3 >= 0,
                           {"threshold": threshold}),
            PropertyResult("replay_C5", c5_m, per_t, c5_m >= 0, {"C5": cert.C5}),
            PropertyResult("replay_C4", c4_m, per_t, c4_m >= 0, {"C4": cert.C4}),
            PropertyResult("replay_re_f", ref_m, per_t, ref_m > 0, {}),
            PropertyResult("replay_near_g", near_g, per_t, near_g >= 0,
                           {"C6": cert.C6}),
            PropertyResult("replay_far_re_g", farg, per_t, farg >= 0,
                           {"C8": cert.C8}),
            PropertyResult("replay_eq4", eq4, per_t, eq4 >= 0, {"d2": cert.d2}),
        ]
    )
    return results


@dataclass
class ContinuityTable:
    rows: List[Dict[str, float]]
    alpha_target: float
    passed: bool

    def to_json(self) -> List[dict]:
        return self.rows


def continuity_modulus(
    family: FamilySpec,
    base_triple,
    make_evaluator: Callable,
    delta_list: Sequence[float],
    triples_per_delta: int,
    rng: np.random.Generator,
    region: InflatedDomains,
    alpha_target: float = 0.05,
    pairs_per_delta: int = 8,
) -> ContinuityTable:
    """Empirical modulus omega(delta) = max |h_{t0}(z0;zeta0) - h_s(w;xi)|
    over sampled triples within delta of the base triple.

    Sample sets are nested cumulatively across deltas so omega is
    nondecreasing in delta by construction.
    """
    t0, zeta0, z0 = base_triple
    zeta0 = np.asarray(zeta0, dtype=np.complex128).reshape(-1)
    z0 = np.asarray(z0, dtype=np.complex128).reshape(-1)
    base_ev = make_evaluator(t0, zeta0)
    h0 = complex(base_ev.eval_h(z0.reshape(1, -1), check_domain=False)[0])

    lo, hi = family.t_range
    deltas_sorted = sorted(float(d) for d in delta_list)
    omega_cum = 0.0
    omega_at: Dict[float, float] = {}
    counts: Dict[float, int] = {}
    for delta in deltas_sorted:
        best = 0.0
        used = 0
        n_pairs = max(2, pairs_per_delta)
        w_per_pair = max(1, triples_per_delta // n_pairs)
        for _ in range(n_pairs):
            s = float(np.clip(t0 + rng.uniform(-delta, delta), lo, hi))
            xi = None
            for _ in range(20):
                seed_pt = zeta0 + delta * 0.5 * _unit_vec(family.dimension, rng)
                cand = project_to_boundary(family, s, seed_pt)
                if np.linalg.norm(cand - zeta0) < delta:
                    xi = cand
                    break
            if xi is None:
                continue
            ev = make_evaluator(s, xi)
            ws = []
            for _ in range(200):
                w = z0 + delta * 0.999 * rng.uniform(0, 1) ** 0.5 * _unit_vec(
                    family.dimension, rng
                )
                if bool(region.in_hat(s, w.reshape(1, -1))[0]):
                    ws.append(w)
                if len(ws) >= w_per_pair:
                    break
            if not ws:
                continue
            hw = ev.eval_h(np.array(ws), check_domain=False)
            best = max(best, float(np.max(np.abs(h0 - hw))))
            used += len(ws)
        omega_cum = max(omega_cum, best)
        omega_at[delta] = omega_cum
        counts[delta] = used

    rows = [
        {"delta": float(d), "omega": omega_at[float(d)], "count": counts[float(d)]}
        for d in delta_list
        if float(d) in omega_at
    ]
    passed = bool(omega_at[deltas_sorted[0]] <= alpha_target) if rows else False
    return ContinuityTable(rows=rows, alpha_target=alpha_target, passed=passed)


def _unit_vec(n: int, rng: np.random.Generator) -> np.ndarray:
    raw = rng.normal(size=2 * n)
    raw /= np.linalg.norm(raw)
    v = raw[:n] + 1j * raw[n:]
    return v / np.linalg.norm(v)


def holomorphy_grid(
    region: InflatedDomains,
    family: FamilySpec,
    t,
    count: int,
    rng: np.random.Generator,
    interior_distance: float = 0.05,
) -> np.ndarray:
    """Points of G_hat at (gradient-scaled) distance >= 0.05 from its boundary."""
    gmin = region.band.grad_norm_range[0]
    level = region.eta_hat - interior_distance * 2.0 * gmin
    return region.sample(t, count, rng, level=level)


def verify_holomorphy_all(
    evaluators: Dict,
    region: InflatedDomains,
    family: FamilySpec,
    rng: np.random.Generator,
    tol: float,
    grid_count: int = 160,
    step: float = 1e-3,
) -> PropertyResult:
    worst = 0.0
    mean_acc = 0.0
    total = 0
    for (t, _), ev in evaluators.items():
        grid = holomorphy_grid(region, family, t, grid_count, rng)
        stats = verify_holomorphy(
            lambda Z, _ev=ev: _ev.eval_h(Z, check_domain=False), grid, step
        )
        worst = max(worst, stats["max"])
        mean_acc += stats["mean"] * stats["count"]
        total += stats["count"]
    return PropertyResult(
        name="holomorphy",
        margin=float(tol - worst),
        samples=total,
        passed=bool(worst <= tol),
        details={"max": worst, "mean": mean_acc / max(total, 1), "tol": tol,
                 "step": step},
    )
