"""YAML experiment configuration: schema, loading and object builders.

A config file has four blocks; every default matches the package-wide
choices so a file pins a run completely:

    name: flagship1d
    seed: 42
    space:
      model: torus            # torus | checkerboard
      d: 1
      L: 8
      materials:              # list of {r, a, b}
        - {r: 1.0, a: 1.0, b: 1.0}
        - {r: 1.0, a: 4.0, b: 3.0}
      assignment: alternating # alternating | cells: [explicit indices]
      probabilities: [0.5, 0.5]   # checkerboard only
      realizations: 16            # checkerboard only
    integrand:
      v: quadratic            # quadratic | p_power
      f: double_well          # double_well | quadratic
      p: 2.0
      c: 4.0
    experiment:
      epsilons: [0.125, 0.0625, 0.03125]
      n: 256
      tau: 0.001
      horizon: 0.1
      observe: [0.05, 0.1]
      initial: {kind: sin, amplitude: 0.25}
      mode: plain             # plain | well_prepared
      reference_refine: 4

Optional blocks ``flow`` (single-run subcommand: epsilon, tau, horizon,
newton_tol, checkpoint_stride, dirichlet), ``cell`` (n_c, axis {min, max,
points}) and ``unfold`` (epsilons, n, n_fields) configure the other CLI
subcommands.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import yaml

from .integrands import IntegrandSpec, make_spec
from .lab import ExperimentSpec
from .probability import MaterialParams, ShiftSpace


def load_config(path) -> dict:
    path = Path(path)
    with open(path) as fh:
        cfg = yaml.safe_load(fh)
    if not isinstance(cfg, dict):
        raise ValueError(f"config {path} did not parse to a mapping")
    return cfg


def _material(entry: dict) -> MaterialParams:
    a = entry["a"]
    if isinstance(a, list):
        a = np.asarray(a, dtype=float)
    return MaterialParams(r=float(entry["r"]), a=a, b=float(entry["b"]))


def build_space(block: dict) -> ShiftSpace:
    model = block.get("model", "torus")
    d = int(block.get("d", 1))
    L = int(block["L"])
    materials = [_material(m) for m in block["materials"]]
    if model == "torus":
        ncells = L**d
        if "cells" in block:
            idx = list(block["cells"])
            if len(idx) != ncells:
                raise ValueError(f"cells needs {ncells} entries")
        else:  # alternating assignment
            idx = [i % len(materials) for i in range(ncells)]
        pattern = tuple(materials[i] for i in idx)
        return ShiftSpace(model="torus", d=d, L=L, pattern=pattern)
    return ShiftSpace(
        model="checkerboard", d=d, L=L,
        values=tuple(materials),
        probabilities=tuple(float(p) for p in block["probabilities"]),
        realizations=int(block.get("realizations", 16)),
    )


def build_spec(block: dict, space: ShiftSpace) -> IntegrandSpec:
    return make_spec(
        v_kind=block.get("v", "quadratic"),
        f_kind=block.get("f", "double_well"),
        p=float(block.get("p", 2.0)),
        c=float(block.get("c", 4.0)),
        space=space,
        delta_reg=float(block.get("delta_reg", 1e-8)),
    )


def build_experiment(cfg: dict, seed_override: int | None = None) -> ExperimentSpec:
    space = build_space(cfg["space"])
    spec = build_spec(cfg.get("integrand", {}), space)
    exp = cfg["experiment"]
    seed = int(cfg.get("seed", 0)) if seed_override is None else seed_override
    return ExperimentSpec(
        name=str(cfg.get("name", "experiment")),
        space=space,
        spec=spec,
        epsilons=tuple(float(e) for e in exp["epsilons"]),
        n=int(exp["n"]),
        tau=float(exp["tau"]),
        horizon=float(exp["horizon"]),
        observe=tuple(float(t) for t in exp["observe"]),
        initial=exp.get("initial", {"kind": "sin", "amplitude": 0.25}),
        mode=exp.get("mode", "plain"),
        seed=seed,
        reference_refine=int(exp.get("reference_refine", 4)),
        margin_factor=float(exp.get("margin_factor", 2.0)),
        f_axis_points=int(exp.get("f_axis_points", 33)),
        f_margin=float(exp.get("f_margin", 0.5)),
        table_n_c=int(exp.get("table_n_c", 8)),
    )
