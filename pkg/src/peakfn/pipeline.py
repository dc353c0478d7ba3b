"""Pipeline orchestration: certify -> construct -> verify -> report.

Stage order is fixed: C1 -> (C2, eps2) -> eta1 check -> phi lower bound ->
inflation (eta, G_tilde, G_hat) -> alpha and C3 -> dbar solves and C4 -> C5
-> downstream constants -> evaluators -> verification.  Any stage abort
raises PipelineError carrying the failing stage's name.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from .config import RunConfig
from .construction import (
    AlphaField,
    ConstructionError,
    CutoffProfile,
    InflatedDomains,
    PhiEvaluator,
    check_phi_lower_bound,
    estimate_C3,
    inflate_domains,
)
from .dbar import DbarProblem, DbarSolution, solve_dbar
from .families import BandRegion, FamilySpec, build_band, sample_boundary, project_to_boundary, unit_sphere_directions
from .levi import estimate_C1, estimate_C2_eps2, estimate_C5
from .peak import ConstantsCertificate, PeakEvaluator, VERSION, derive_downstream_constants
from . import verify as verify_mod


class PipelineError(RuntimeError):
    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"[{stage}] {message}")


@dataclass
class ConstructionState:
    config: RunConfig
    family: FamilySpec
    band: BandRegion
    profile: CutoffProfile
    region: InflatedDomains
    zeta_grid: Dict[float, np.ndarray] = field(default_factory=dict)
    fields: Dict[Tuple[float, int], AlphaField] = field(default_factory=dict)
    solutions: Dict[Tuple[float, int], DbarSolution] = field(default_factory=dict)
    evaluators: Dict[Tuple[float, int], PeakEvaluator] = field(default_factory=dict)
    diagnostics: Dict[str, object] = field(default_factory=dict)


def _stage(name: str):
    def deco(fn):
        def wrapped(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except PipelineError:
                raise
            except Exception as exc:
                raise PipelineError(name, str(exc)) from exc
        return wrapped
    return deco


def _interior_level(region: InflatedDomains, level: float, distance: float) -> float:
    gmin = region.band.grad_norm_range[0]
    return level - distance * 2.0 * gmin


def solve_pair(
    config: RunConfig,
    family: FamilySpec,
    region: InflatedDomains,
    profile: CutoffProfile,
    t: float,
    zeta: np.ndarray,
    seed_tag: Tuple[int, ...],
    grid_rotation: float = 0.0,
) -> Tuple[AlphaField, DbarSolution]:
    """Build alpha for (t, zeta) and solve dbar v = alpha on G_tilde_t."""
    phi_ev = PhiEvaluator(family, t, zeta, profile)
    fld = AlphaField(phi_ev)
    sol_cfg = config.solver
    n = family.dimension
    rng = np.random.default_rng([config.seed, *seed_tag, 0xD8A4])

    sup_level = region.eta
    sup_pts = region.sample(t, 700 if n == 1 else 1400, rng, level=sup_level)
    ring_dirs = _unit_dirs(n, 160, rng)
    ring_radii = rng.uniform(0.3 * profile.eta1, 1.3 * profile.eta1, 160)
    ring = zeta[None, :] + ring_radii[:, None] * ring_dirs
    ring = ring[region.in_tilde(t, ring)]
    sup_pts = np.concatenate([sup_pts, ring]) if ring.size else sup_pts

    interior = _interior_level(region, region.eta, 0.05)
    test_pts = region.sample(t, 160, rng, level=interior)
    near_pool = region.sample(t, 400, rng, level=region.eta)
    rvals = family.value(t, near_pool)
    near_pts = near_pool[rvals >= interior][:80]

    if n == 1:
        problem = DbarProblem(
            dimension=1,
            membership=lambda Z, _t=t: region.in_tilde(_t, Z),
            alpha=fld.coefficients,
            bbox_lo=region.band.bbox_lo,
            bbox_hi=region.band.bbox_hi,
            quadrature_cells=sol_cfg["quadrature_cells"],
            residual_tol=sol_cfg["residual_tol"],
            alpha_derivs=fld.coefficients_and_derivs,
            grid_rotation=grid_rotation,
            sup_points=sup_pts,
            test_points=test_pts,
            test_points_near=near_pts,
            seed=config.seed,
        )
    else:
        ndirs = max(64, sol_cfg["collocation_nodes"] // 8)
        dirs_r = unit_sphere_directions(2 * n, ndirs)
        dirs = dirs_r[:, :n] + 1j * dirs_r[:, n:]
        dirs /= np.linalg.norm(dirs, axis=1)[:, None]
        radius = region.boundary_radius(t, dirs, region.eta) * 0.999
        fracs = ((np.arange(8) + 0.5) / 8.0) ** (1.0 / (2 * n))
        nodes = (radius[:, None] * fracs[None, :])[:, :, None] * dirs[:, None, :]
        nodes = nodes.reshape(-1, n)
        ring_n = _unit_dirs(n, sol_cfg["collocation_nodes"] // 4, rng)
        ring_r = rng.uniform(0.3 * profile.eta1, 1.3 * profile.eta1, ring_n.shape[0])
        extra = zeta[None, :] + ring_r[:, None] * ring_n
        extra = extra[region.in_tilde(t, extra)]
        nodes = np.concatenate([nodes, extra]) if extra.size else nodes
        problem = DbarProblem(
            dimension=n,
            membership=lambda Z, _t=t: region.in_tilde(_t, Z),
            alpha=fld.coefficients,
            bbox_lo=region.band.bbox_lo,
            bbox_hi=region.band.bbox_hi,
            collocation_degree=sol_cfg["collocation_degree"],
            collocation_nodes=sol_cfg["collocation_nodes"],
            residual_tol=sol_cfg["residual_tol"],
            nodes=nodes,
            sup_points=sup_pts,
            test_points=test_pts,
            seed=config.seed,
        )
    return fld, solve_dbar(problem)


def _unit_dirs(n: int, count: int, rng: np.random.Generator) -> np.ndarray:
    raw = rng.normal(size=(count, 2 * n))
    raw /= np.linalg.norm(raw, axis=1)[:, None]
    dirs = raw[:, :n] + 1j * raw[:, n:]
    return dirs / np.linalg.norm(dirs, axis=1)[:, None]


def certify(config: RunConfig) -> Tuple[ConstantsCertificate, ConstructionState]:
    family = config.make_family()
    con = config.construction

    band = _stage("band")(build_band)(
        family,
        con["eps1"],
        boundary_count=con["boundary_samples"],
        radial_count=con["band_samples"],
    )
    c1 = _stage("C1")(estimate_C1)(family, band)
    c2, eps2 = _stage("C2_eps2")(estimate_C2_eps2)(family, band, c1.value)

    if not con["eta1"] < eps2.value:
        raise PipelineError(
            "eta1_check",
            f"eta1 = {con['eta1']} must be < eps2 = {eps2.value:.6g}",
        )
    profile = CutoffProfile(eta1=con["eta1"], kind=con["cutoff_kind"])

    rng_phi = np.random.default_rng([config.seed, 0x981])
    phi_report = _stage("phi_lower_bound")(check_phi_lower_bound)(
        family, band, profile, c2.value, rng_phi
    )

    region = _stage("inflate")(inflate_domains)(family, band, c2.value, con["eta1"])
    rng_conn = np.random.default_rng([config.seed, 0x1F7])
    connectivity = {
        float(t): _stage("inflate")(region.connectivity_check)(float(t), rng_conn)
        for t in family.t_grid
    }

    state = ConstructionState(
        config=config, family=family, band=band, profile=profile, region=region
    )
    state.diagnostics["phi_lower_bound"] = phi_report
    state.diagnostics["connectivity"] = connectivity
    state.diagnostics["grad_norm_range"] = band.grad_norm_range

    zeta_count = config.solver["zeta_count"]
    for t in family.t_grid:
        t = float(t)
        state.zeta_grid[t] = _stage("alpha_C3")(sample_boundary)(
            family, t, zeta_count
        )

    rng_c3 = np.random.default_rng([config.seed, 0xC3])
    all_fields = []
    for ti, t in enumerate(family.t_grid):
        t = float(t)
        for zi in range(zeta_count):
            phi_ev = PhiEvaluator(family, t, state.zeta_grid[t][zi], profile)
            fld = AlphaField(phi_ev)
            state.fields[(t, zi)] = fld
            all_fields.append(fld)
    c3_report = _stage("alpha_C3")(estimate_C3)(all_fields, region, rng_c3)

    sup_norms = []
    res_max = 0.0
    res_mean = []
    for ti, t in enumerate(family.t_grid):
        t = float(t)
        for zi in range(zeta_count):
            fld, sol = _stage("dbar_C4")(solve_pair)(
                config, family, region, profile, t, state.zeta_grid[t][zi],
                seed_tag=(ti, zi),
            )
            state.fields[(t, zi)] = fld
            state.solutions[(t, zi)] = sol
            sup_norms.append(sol.sup_norm)
            res_max = max(res_max, sol.residual_stats["max"])
            res_mean.append(sol.residual_stats["mean"])
    c4_value = 1.05 * max(sup_norms)
    certified_all = all(s.certified for s in state.solutions.values())

    c5 = _stage("C5")(estimate_C5)(family, band)

    diam_u = 1.05 * band.diameter
    downstream = _stage("downstream")(derive_downstream_constants)(
        con["eta1"], c4_value, c5.value, diam_u
    )

    certificate = ConstantsCertificate(
        eps1=con["eps1"],
        eps2=eps2.value,
        eta1=con["eta1"],
        eta2=downstream["eta2"],
        eta=region.eta,
        eta_hat=region.eta_hat,
        C1=c1.value,
        C2=c2.value,
        C3=c3_report["C3"],
        C4=c4_value,
        C5=c5.value,
        C6=downstream["C6"],
        C7=downstream["C7"],
        C8=downstream["C8"],
        d1=downstream["d1"],
        d2=downstream["d2"],
        diam_U=diam_u,
        cutoff_kind=con["cutoff_kind"],
        safety_factors={"minima": 0.95, "maxima": 1.05, "C1_cap": 0.99},
        grids={
            "t_points": int(family.t_points),
            "boundary_samples": con["boundary_samples"],
            "band_samples": con["band_samples"],
            "zeta_count": zeta_count,
            "C1": c1.grid,
            "C2_margin": c2.margin,
            "eps2_margin": eps2.margin,
            "C3_raw": c3_report["raw_max"],
            "C5": c5.grid,
            "phi_bound_margin": phi_report["min_margin"],
            "band_diameter": band.diameter,
        },
        provenance={
            "C1": "min Levi form over band samples x unit directions; "
                  "safety 0.95; capped at 0.99 when the raw min reaches 1",
            "C2,eps2": "largest grid-validated pair for the quadratic lower "
                       "bound; eps2 preferred over C2",
            "C3": "1.05 x grid max |alpha| over the inflated domains",
            "C4": "1.05 x max over (t, zeta) solves of sup |v|",
            "C5": "1.05 x grid max |P(z;zeta)| / ||z-zeta||",
            "eta": "0.5 x C2 eta1^2 / 8",
            "eta_hat": "eta / 2",
            "eta2": "0.5 x min(eta1/2, 1/(4 C4 C5))",
            "C6": "C5 / (1 - 2 C4 C5 eta2)",
            "C7": "(e^(C6 eta2) - 1) / (C6 eta2), sharp on the interval",
            "C8": "eta1^2 / (1 + 2 diam_U^2 C4)^2",
            "d1": "C6 C7",
            "d2": "exp(-C8)",
            "diam_U": "1.05 x Euclidean diameter of the sampled outer band",
        },
        solver={
            "backend": "cauchy-pompeiu" if family.dimension == 1 else "ls-collocation",
            "quadrature_cells": config.solver["quadrature_cells"],
            "collocation_degree": config.solver["collocation_degree"],
            "collocation_nodes": config.solver["collocation_nodes"],
            "residual_tol": config.solver["residual_tol"],
            "residual_max": res_max,
            "residual_mean": float(np.mean(res_mean)),
            "certified": bool(certified_all),
        },
        family=dict(config.family),
        seed=config.seed,
        version=VERSION,
    )
    try:
        certificate.validate()
    except ValueError as exc:
        raise PipelineError("downstream", str(exc)) from exc

    for key in list(state.solutions):
        t, zi = key
        state.evaluators[key] = _stage("evaluators")(PeakEvaluator)(
            family, t, state.zeta_grid[t][zi], certificate,
            state.solutions[key], region,
        )
    return certificate, state


def build_state(config: RunConfig, certificate: ConstantsCertificate) -> ConstructionState:
    """Reconstruct evaluators deterministically from config + certificate."""
    family = config.make_family()
    con = config.construction
    band = build_band(
        family,
        certificate.eps1,
        boundary_count=con["boundary_samples"],
        radial_count=con["band_samples"],
    )
    profile = CutoffProfile(eta1=certificate.eta1, kind=certificate.cutoff_kind)
    region = InflatedDomains(
        family=family, band=band, eta=certificate.eta, eta_hat=certificate.eta_hat
    )
    state = ConstructionState(
        config=config, family=family, band=band, profile=profile, region=region
    )
    zeta_count = config.verification["zeta_count"]
    for ti, t in enumerate(family.t_grid):
        t = float(t)
        state.zeta_grid[t] = sample_boundary(family, t, zeta_count)
        for zi in range(zeta_count):
            fld, sol = solve_pair(
                config, family, region, profile, t, state.zeta_grid[t][zi],
                seed_tag=(ti, zi),
            )
            state.fields[(t, zi)] = fld
            state.solutions[(t, zi)] = sol
            state.evaluators[(t, zi)] = PeakEvaluator(
                family, t, state.zeta_grid[t][zi], certificate, sol, region
            )
    return state


def evaluator_factory(
    config: RunConfig,
    certificate: ConstantsCertificate,
    state: ConstructionState,
):
    """Closure building a PeakEvaluator for an arbitrary (s, xi) pair."""

    def make(s, xi, grid_rotation: float = 0.0) -> PeakEvaluator:
        xi = np.asarray(xi, dtype=np.complex128).reshape(-1)
        tag = (
            int(1e6 * float(np.real(s))) & 0x7FFFFFFF,
            hash(tuple(np.round(xi.view(float), 9))) & 0x7FFFFFFF,
        )
        fld, sol = solve_pair(
            config, state.family, state.region, state.profile, float(np.real(s)),
            xi, seed_tag=tag, grid_rotation=grid_rotation,
        )
        return PeakEvaluator(
            state.family, float(np.real(s)), xi, certificate, sol, state.region
        )

    return make


def run_verification(
    config: RunConfig,
    certificate: ConstantsCertificate,
    state: Optional[ConstructionState] = None,
) -> dict:
    """Build (or reuse) the evaluators and produce the verification report."""
    if state is None:
        state = build_state(config, certificate)
    family = state.family
    ver = config.verification
    rng = np.random.default_rng([config.seed, 0xF4E5])

    properties = verify_mod.verify_theorem_bounds(
        family,
        certificate,
        state.evaluators,
        state.region,
        rng,
        sample_budget=ver["sample_budget"],
        exclusion_radius=ver["exclusion_radius"],
    )
    properties.append(
        verify_mod.verify_holomorphy_all(
            state.evaluators,
            state.region,
            family,
            rng,
            tol=ver["holomorphy_tol"],
            grid_count=ver["holomorphy_grid"],
            step=ver["holomorphy_step"],
        )
    )
    properties.extend(
        verify_mod.replay_certificate(
            family, certificate, state.evaluators, state.region, rng,
            pairs=ver["replay_pairs"],
        )
    )

    continuity_rows = []
    if ver["continuity"]:
        t_grid = family.t_grid
        t0 = float(t_grid[len(t_grid) // 2])
        e1 = np.zeros(family.dimension, dtype=np.complex128)
        e1[0] = 1.0
        zeta0 = project_to_boundary(family, t0, e1)
        z0 = np.zeros(family.dimension, dtype=np.complex128)
        make = evaluator_factory(config, certificate, state)
        table = verify_mod.continuity_modulus(
            family,
            (t0, zeta0, z0),
            make,
            ver["delta_list"],
            ver["triples_per_delta"],
            np.random.default_rng([config.seed, 0xC047]),
            state.region,
            alpha_target=ver["alpha_target"],
        )
        continuity_rows = table.rows
        omegas = [r["omega"] for r in table.rows]
        nonincreasing = all(
            omegas[i] >= omegas[i + 1] - 1e-15 for i in range(len(omegas) - 1)
        ) if sorted(ver["delta_list"], reverse=True) == list(ver["delta_list"]) else True
        properties.append(
            verify_mod.PropertyResult(
                name="continuity",
                margin=float(ver["alpha_target"] - omegas[-1]) if omegas else -1.0,
                samples=int(sum(r["count"] for r in table.rows)),
                passed=bool(table.passed and nonincreasing),
                details={"alpha_target": ver["alpha_target"]},
            )
        )

    res_max = max(s.residual_stats["max"] for s in state.solutions.values())
    res_mean = float(
        np.mean([s.residual_stats["mean"] for s in state.solutions.values()])
    )
    solver_block = {
        "backend": next(iter(state.solutions.values())).backend,
        "residual_max": res_max,
        "residual_mean": res_mean,
        "residual_tol": config.solver["residual_tol"],
        "certified": bool(all(s.certified for s in state.solutions.values())),
        "pairs": len(state.solutions),
    }

    passed = bool(all(p.passed for p in properties) and solver_block["certified"])

    report = {
        "pass": passed,
        "failing": [p.name for p in properties if not p.passed]
        + ([] if solver_block["certified"] else ["solver_residual"]),
        "certificate": certificate.to_json_dict(),
        "certificate_sha256": certificate.sha256(),
        "properties": [p.row() for p in properties],
        "continuity": continuity_rows,
        "solver": solver_block,
        "seed": config.seed,
        "version": VERSION,
        "eval_samples": _eval_sample_rows(state, certificate, rng),
        "levelset": _levelset_grid(state, certificate),
    }
    return report


def _eval_sample_rows(state: ConstructionState, certificate, rng, cap: int = 800):
    (t, zi), ev = next(iter(state.evaluators.items()))
    pts = state.region.sample(t, cap, rng, level=0.0)
    h = ev.eval_h(pts, check_domain=False)
    n = state.family.dimension
    cols = (
        ["t"]
        + [f"zeta_{j}_{p}" for j in range(n) for p in ("re", "im")]
        + [f"z_{j}_{p}" for j in range(n) for p in ("re", "im")]
        + ["h_re", "h_im", "h_abs"]
    )
    rows = []
    for k in range(pts.shape[0]):
        row = [t]
        for j in range(n):
            row += [float(ev.zeta[j].real), float(ev.zeta[j].imag)]
        for j in range(n):
            row += [float(pts[k, j].real), float(pts[k, j].imag)]
        row += [float(h[k].real), float(h[k].imag), float(abs(h[k]))]
        rows.append(row)
    return {"columns": cols, "rows": rows}


def _levelset_grid(state: ConstructionState, certificate, nx: int = 81):
    (t, zi), ev = next(iter(state.evaluators.items()))
    lo, hi = state.band.bbox_lo, state.band.bbox_hi
    xs = np.linspace(lo[0], hi[0], nx)
    n = state.family.dimension
    ys = np.linspace(lo[1], hi[1], nx) if n == 1 else np.linspace(
        lo[n], hi[n], nx
    )
    if n == 1:
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        pts = (X + 1j * Y).reshape(-1, 1)
    else:
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        pts = np.zeros((nx * nx, n), dtype=np.complex128)
        pts[:, 0] = (X + 1j * Y).ravel()
    mask = state.region.in_hat(t, pts)
    vals = np.full(pts.shape[0], np.nan)
    if np.any(mask):
        vals[mask] = np.abs(ev.eval_h(pts[mask], check_domain=False))
    return {
        "t": t,
        "x": [float(xs[0]), float(xs[-1])],
        "y": [float(ys[0]), float(ys[-1])],
        "nx": nx,
        "ny": nx,
        "slice": "z" if n == 1 else "z1 (other coordinates 0)",
        "abs_h": [None if math.isnan(v) else float(v) for v in vals],
    }


def evaluate_point(
    config: RunConfig,
    certificate: ConstantsCertificate,
    t,
    zeta_seed,
    z,
) -> complex:
    """h_t(z; zeta) for zeta = boundary projection of zeta_seed."""
    family = config.make_family()
    con = config.construction
    band = build_band(
        family, certificate.eps1,
        boundary_count=con["boundary_samples"], radial_count=con["band_samples"],
    )
    profile = CutoffProfile(eta1=certificate.eta1, kind=certificate.cutoff_kind)
    region = InflatedDomains(
        family=family, band=band, eta=certificate.eta, eta_hat=certificate.eta_hat
    )
    state = ConstructionState(
        config=config, family=family, band=band, profile=profile, region=region
    )
    t = family.check_parameter(t)
    zeta = project_to_boundary(family, t, zeta_seed)
    fld, sol = solve_pair(config, family, region, profile, t, zeta, seed_tag=(0, 0))
    ev = PeakEvaluator(family, t, zeta, certificate, sol, region)
    vals = ev.eval_h(z)
    return complex(vals[0])
