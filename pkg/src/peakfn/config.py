"""Run configuration: JSON parsing, defaults, strict validation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict

from .families import FamilySpec

_FAMILY_DEFAULTS: Dict[str, dict] = {
    "disc": {"dimension": 1, "eta1": 0.5, "eps1": 0.7},
    "ball": {"dimension": 2, "eta1": 0.5, "eps1": 0.7},
    "ellipsoid": {"dimension": 2, "eta1": 0.5, "eps1": 0.7},
    "perturbed_ball": {"dimension": 2, "eta1": 0.25, "eps1": 0.35},
}

_FAMILY_KEYS = {"name", "params", "t_range", "t_points", "dimension"}
_CONSTRUCTION_KEYS = {"eta1", "cutoff_kind", "eps1", "boundary_samples", "band_samples"}
_SOLVER_KEYS = {
    "quadrature_cells",
    "collocation_degree",
    "collocation_nodes",
    "residual_tol",
    "zeta_count",
}
_VERIFICATION_KEYS = {
    "sample_budget",
    "delta_list",
    "alpha_target",
    "zeta_count",
    "holomorphy_tol",
    "holomorphy_step",
    "holomorphy_grid",
    "exclusion_radius",
    "triples_per_delta",
    "continuity",
    "replay_pairs",
}
_OUTPUT_KEYS = {"certificate", "report", "csv", "svg"}
_TOP_KEYS = {"family", "construction", "solver", "verification", "output", "seed"}


@dataclass
class RunConfig:
    family: dict
    construction: dict
    solver: dict
    verification: dict
    output: dict
    seed: int

    def to_json_dict(self) -> dict:
        return {
            "family": self.family,
            "construction": self.construction,
            "solver": self.solver,
            "verification": self.verification,
            "output": self.output,
            "seed": self.seed,
        }

    def make_family(self) -> FamilySpec:
        f = self.family
        return FamilySpec(
            name=f["name"],
            params=tuple(f["params"]),
            t_range=tuple(f["t_range"]),
            t_points=int(f["t_points"]),
            dimension=int(f["dimension"]),
        )


def serialize_config(config: RunConfig) -> str:
    return json.dumps(config.to_json_dict(), sort_keys=True, indent=2)


def _reject_unknown(block: dict, allowed: set, where: str) -> None:
    unknown = set(block) - allowed
    if unknown:
        raise ValueError(f"unknown key(s) in {where}: {sorted(unknown)}")


def parse_config(text: str) -> RunConfig:
    """Parse and validate a JSON config, filling documented defaults.

    Accepts the compact form {"family": "disc", "eta1": 0.5, "seed": 7}:
    a bare family name and top-level eta1 are canonicalized into their blocks.
    Unknown keys are rejected anywhere.
    """
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"malformed JSON config: {exc}") from exc
    if not isinstance(raw, dict):
        raise ValueError("config must be a JSON object")

    raw = dict(raw)
    if isinstance(raw.get("family"), str):
        raw["family"] = {"name": raw["family"]}
    construction = dict(raw.pop("construction", {}))
    if "eta1" in raw:
        construction.setdefault("eta1", raw.pop("eta1"))
    raw["construction"] = construction

    _reject_unknown(raw, _TOP_KEYS, "config")
    if "seed" not in raw:
        raise ValueError("config must set a seed (reproducibility is mandatory)")
    seed = raw["seed"]
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ValueError("seed must be an integer")

    fam_in = dict(raw.get("family", {}))
    _reject_unknown(fam_in, _FAMILY_KEYS, "family block")
    name = fam_in.get("name")
    if name not in _FAMILY_DEFAULTS:
        raise ValueError(
            f"unknown family {name!r}; built-ins: {sorted(_FAMILY_DEFAULTS)}"
        )
    fdef = _FAMILY_DEFAULTS[name]
    family = {
        "name": name,
        "params": list(fam_in.get("params", [])),
        "t_range": list(fam_in.get("t_range", [0.0, 0.0])),
        "t_points": int(fam_in.get("t_points", 1)),
        "dimension": int(fam_in.get("dimension", fdef["dimension"])),
    }

    con_in = dict(raw.get("construction", {}))
    _reject_unknown(con_in, _CONSTRUCTION_KEYS, "construction block")
    construction = {
        "eta1": float(con_in.get("eta1", fdef["eta1"])),
        "cutoff_kind": con_in.get("cutoff_kind", "quintic-smoothstep"),
        "eps1": float(con_in.get("eps1", fdef["eps1"])),
        "boundary_samples": int(con_in.get("boundary_samples", 48)),
        "band_samples": int(con_in.get("band_samples", 9)),
    }

    sol_in = dict(raw.get("solver", {}))
    _reject_unknown(sol_in, _SOLVER_KEYS, "solver block")
    dim = family["dimension"]
    solver = {
        "quadrature_cells": int(sol_in.get("quadrature_cells", 256)),
        "collocation_degree": int(sol_in.get("collocation_degree", 8)),
        "collocation_nodes": int(sol_in.get("collocation_nodes", 2600)),
        "residual_tol": float(
            sol_in.get("residual_tol", 0.05 if dim == 1 else 60.0)
        ),
        "zeta_count": int(sol_in.get("zeta_count", 8)),
    }

    ver_in = dict(raw.get("verification", {}))
    _reject_unknown(ver_in, _VERIFICATION_KEYS, "verification block")
    verification = {
        "sample_budget": int(ver_in.get("sample_budget", 2000)),
        "delta_list": [float(d) for d in ver_in.get("delta_list",
                                                    [0.1, 0.05, 0.025, 0.0125])],
        "alpha_target": float(ver_in.get("alpha_target", 0.05)),
        "zeta_count": int(ver_in.get("zeta_count", solver["zeta_count"])),
        "holomorphy_tol": float(
            ver_in.get(
                "holomorphy_tol",
                1e-3 if dim == 1 else 10.0 * solver["residual_tol"],
            )
        ),
        "holomorphy_step": float(ver_in.get("holomorphy_step", 1e-3)),
        "holomorphy_grid": int(ver_in.get("holomorphy_grid", 160)),
        "exclusion_radius": float(ver_in.get("exclusion_radius", 1e-2)),
        "triples_per_delta": int(ver_in.get("triples_per_delta", 24)),
        "continuity": bool(ver_in.get("continuity", True)),
        "replay_pairs": int(ver_in.get("replay_pairs", 2000)),
    }

    out_in = dict(raw.get("output", {}))
    _reject_unknown(out_in, _OUTPUT_KEYS, "output block")
    output = {k: out_in.get(k) for k in sorted(_OUTPUT_KEYS)}

    config = RunConfig(
        family=family,
        construction=construction,
        solver=solver,
        verification=verification,
        output=output,
        seed=seed,
    )
    _validate(config)
    return config


def _validate(config: RunConfig) -> None:
    con = config.construction
    if con["eta1"] <= 0:
        raise ValueError("eta1 must be positive")
    if con["eps1"] <= 0:
        raise ValueError("eps1 must be positive")
    if con["eta1"] >= con["eps1"]:
        raise ValueError(
            f"eta1 = {con['eta1']} must be smaller than eps1 = {con['eps1']} "
            "(eta1 < eps2 < eps1 is required downstream)"
        )
    if con["cutoff_kind"] not in ("quintic-smoothstep", "exp-mollifier"):
        raise ValueError(f"unknown cutoff kind {con['cutoff_kind']!r}")
    for key in ("boundary_samples", "band_samples"):
        if con[key] < 4:
            raise ValueError(f"{key} must be >= 4")
    sol = config.solver
    for key in ("quadrature_cells", "collocation_degree", "collocation_nodes",
                "zeta_count"):
        if sol[key] < 1:
            raise ValueError(f"{key} must be positive")
    if sol["residual_tol"] <= 0:
        raise ValueError("residual_tol must be positive")
    ver = config.verification
    for key in ("sample_budget", "zeta_count", "holomorphy_grid",
                "triples_per_delta", "replay_pairs"):
        if ver[key] < 1:
            raise ValueError(f"{key} must be positive")
    if any(d <= 0 for d in ver["delta_list"]):
        raise ValueError("delta_list entries must be positive")
    if ver["alpha_target"] <= 0 or ver["holomorphy_tol"] <= 0:
        raise ValueError("alpha_target and holomorphy_tol must be positive")
    lo, hi = config.family["t_range"]
    if not (lo <= hi):
        raise ValueError("t_range must be a nondecreasing interval")
    config.make_family()  # family-level validation (dimension, params)
