"""JSON run configuration: schema, defaults, validation, object construction.

A config file has fixed sections (problem, discretization, initial_law, noise,
network, training, output); unknown sections or keys anywhere fail fast with
the offending path in the message. Defaults depend on the problem name and are
materialized into the resolved config that runs and manifests record.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import replace

from .errors import ConfigurationError
from .features import fourier_basis, polynomial_basis
from .model import (InitialLaw, NoiseLaw, empirical, gaussian_diag, point_mass,
                    two_cluster_torus, uniform_torus)
from .network import AdamParams, NetSpec
from .problems import (KuramotoParams, LqParams, SystemicParams, make_kuramoto,
                       make_lq, make_systemic)
from .training import TrainConfig

_PROBLEM_DEFAULTS = {
    "lq": {
        "problem": {"name": "lq", "kappa": 1.0, "sigma": 1.0, "beta": 1.0},
        "discretization": {"dt": 0.05, "t_model": 20.0},
        "initial_law": {"kind": "gaussian_diag", "mean": [0.0], "var": [2.25]},
        "network": {"hidden": [32, 32]},
        "training": {"n_particles": 2000},
        "basis": {"kind": "polynomial", "max_degree": 10},
    },
    "kuramoto": {
        "problem": {"name": "kuramoto", "kappa": 2.5, "sigma": 1.0, "beta": 1.0},
        "discretization": {"dt": 0.05, "t_model": 20.0},
        "initial_law": {"kind": "two_cluster_torus", "centers": [0.0, 3.141592653589793],
                        "concentration": 10.0},
        "network": {"hidden": [32, 32]},
        "training": {"n_particles": 3000},
        "basis": {"kind": "fourier", "modes": [1, -1, 2, -2, 3, -3, 4, -4, 5, -5]},
    },
    "systemic": {
        "problem": {"name": "systemic", "kappa": 0.6, "sigma": 1.0, "q": 0.8,
                    "eta": 2.0, "c": 2.0},
        "discretization": {"dt": 0.2, "t_model": 0.2},
        "initial_law": {"kind": "gaussian_diag", "mean": [0.0], "var": [1.0]},
        "network": {"hidden": [20, 20]},
        "training": {"n_particles": 2000},
        "basis": {"kind": "polynomial", "max_degree": 10},
    },
}

_BASE_DEFAULTS = {
    "noise": {"seed": 0, "law": "gaussian", "truncate_k": None, "bound": 1.0},
    "network": {
        "hidden": [32, 32], "activation": "relu", "clamp": None, "clamp_hard": False,
        "weight_seed": 2, "final_layer_zero": True,
        "basis": None,  # filled from the problem defaults unless given
    },
    "training": {
        "iterations": 6000, "n_particles": 2000, "lr": 1e-3, "lr_schedule": "step",
        "adam": {"beta1": 0.9, "beta2": 0.999, "eps": 1e-8},
        "init_seed": 1, "weight_decay": 0.0, "log_every": 100,
        "checkpoint_every": 0,
    },
    "output": {"heatmap_bins": 100, "save_trajectory": False, "log_features": False},
}

_SECTION_KEYS = {
    "problem": {"name", "kappa", "sigma", "beta", "q", "eta", "c"},
    "discretization": {"dt", "t_model"},
    "initial_law": {"kind", "mean", "var", "point", "centers", "concentration", "path"},
    "noise": {"seed", "law", "truncate_k", "bound"},
    "network": {"hidden", "activation", "clamp", "clamp_hard", "weight_seed",
                "final_layer_zero", "basis"},
    "training": {"iterations", "n_particles", "lr", "lr_schedule", "adam",
                 "init_seed", "weight_decay", "log_every", "checkpoint_every"},
    "output": {"heatmap_bins", "save_trajectory", "log_features"},
}

_BASIS_KEYS = {"kind", "max_degree", "cross_moments", "modes"}
_ADAM_KEYS = {"beta1", "beta2", "eps"}

_PROBLEM_PARAM_KEYS = {
    "lq": {"name", "kappa", "sigma", "beta"},
    "kuramoto": {"name", "kappa", "sigma", "beta"},
    "systemic": {"name", "kappa", "sigma", "q", "eta", "c"},
}


def load_config(path):
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}")
    except json.JSONDecodeError as err:
        raise ConfigurationError(f"config file {path} is not valid JSON: {err}")
    return resolve_config(raw)


def resolve_config(raw: dict) -> dict:
    """Validate a raw config dict and materialize every default."""
    if not isinstance(raw, dict):
        raise ConfigurationError("config root must be a JSON object")
    unknown = set(raw) - set(_SECTION_KEYS)
    if unknown:
        raise ConfigurationError(f"{sorted(unknown)[0]}: unknown config section")
    problem = raw.get("problem", {})
    if not isinstance(problem, dict) or "name" not in problem:
        raise ConfigurationError("problem.name: required")
    name = problem["name"]
    if name not in _PROBLEM_DEFAULTS:
        raise ConfigurationError(f"problem.name: unknown problem {name!r}")

    resolved = copy.deepcopy(_BASE_DEFAULTS)
    for section, block in _PROBLEM_DEFAULTS[name].items():
        if section == "basis":
            resolved["network"]["basis"] = copy.deepcopy(block)
        else:
            resolved.setdefault(section, {})
            resolved[section].update(copy.deepcopy(block))

    for section, block in raw.items():
        if not isinstance(block, dict):
            raise ConfigurationError(f"{section}: must be an object")
        _check_keys(block, _SECTION_KEYS[section], section)
        if section == "initial_law":
            # switching kind replaces the block; same kind merges per key
            if block.get("kind", resolved["initial_law"]["kind"]) != resolved["initial_law"]["kind"]:
                resolved["initial_law"] = dict(block)
            else:
                resolved["initial_law"].update(block)
            continue
        for key, value in block.items():
            if section == "training" and key == "adam":
                _check_keys(value, _ADAM_KEYS, "training.adam")
                resolved["training"]["adam"].update(value)
            elif section == "network" and key == "basis":
                _check_keys(value, _BASIS_KEYS, "network.basis")
                resolved["network"]["basis"] = dict(value)
            else:
                resolved[section][key] = value

    _check_keys(resolved["problem"], _PROBLEM_PARAM_KEYS[name], "problem")
    if resolved["network"]["activation"] not in ("relu", "tanh"):
        raise ConfigurationError("network.activation: must be 'relu' or 'tanh'")
    if resolved["noise"]["law"] not in ("gaussian", "uniform"):
        raise ConfigurationError("noise.law: must be 'gaussian' or 'uniform'")
    return resolved


def _check_keys(block, allowed, path):
    if not isinstance(block, dict):
        raise ConfigurationError(f"{path}: must be an object")
    for key in block:
        if key not in allowed:
            raise ConfigurationError(f"{path}.{key}: unknown key")


def config_hash(resolved: dict) -> str:
    """Hash of the canonical serialization; stable under key reordering."""
    blob = json.dumps(resolved, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


# ---------------------------------------------------------------------------
# object construction from a resolved config
# ---------------------------------------------------------------------------

def build_problem(resolved: dict):
    p = resolved["problem"]
    disc = resolved["discretization"]
    name = p["name"]
    if name == "lq":
        prob = make_lq(LqParams(kappa=p["kappa"], sigma=p["sigma"], beta=p["beta"]),
                       dt=disc["dt"], t_model=disc["t_model"])
    elif name == "kuramoto":
        prob = make_kuramoto(KuramotoParams(kappa=p["kappa"], sigma=p["sigma"], beta=p["beta"]),
                             dt=disc["dt"], t_model=disc["t_model"])
    else:
        prob = make_systemic(SystemicParams(kappa=p["kappa"], sigma=p["sigma"], q=p["q"],
                                            eta=p["eta"], c=p["c"], t_model=disc["t_model"]),
                             dt=disc["dt"])
    noise = resolved["noise"]
    law = prob.noise_law
    if noise["law"] == "uniform":
        law = NoiseLaw(kind="uniform", bound=noise["bound"])
    elif noise["truncate_k"] is not None:
        law = replace(law, truncate_k=float(noise["truncate_k"]))
    if law != prob.noise_law:
        prob.noise_law = law
    return prob


def build_initial_law(resolved: dict) -> InitialLaw:
    block = resolved["initial_law"]
    kind = block.get("kind")
    if kind == "gaussian_diag":
        return gaussian_diag(block["mean"], block["var"])
    if kind == "point_mass":
        return point_mass(block["point"])
    if kind == "uniform_torus":
        return uniform_torus()
    if kind == "two_cluster_torus":
        return two_cluster_torus(tuple(block.get("centers", (0.0, 3.141592653589793))),
                                 block.get("concentration", 10.0))
    if kind == "empirical":
        return empirical(block["path"])
    raise ConfigurationError(f"initial_law.kind: unknown kind {kind!r}")


def build_basis(resolved: dict):
    block = resolved["network"]["basis"]
    if block["kind"] == "polynomial":
        return polynomial_basis(block.get("max_degree", 10),
                                block.get("cross_moments", False))
    if block["kind"] == "fourier":
        modes = [tuple(m) if isinstance(m, list) else int(m) for m in block["modes"]]
        return fourier_basis(tuple(modes))
    raise ConfigurationError(f"network.basis.kind: unknown kind {block['kind']!r}")


def build_net_spec(resolved: dict) -> NetSpec:
    net = resolved["network"]
    return NetSpec(hidden=tuple(int(h) for h in net["hidden"]),
                   activation=net["activation"],
                   clamp=net["clamp"], clamp_hard=net["clamp_hard"],
                   weight_seed=int(net["weight_seed"]),
                   final_layer_zero=net["final_layer_zero"])


def build_train_config(resolved: dict) -> TrainConfig:
    tr = resolved["training"]
    adam = tr["adam"]
    return TrainConfig(
        initial_law=build_initial_law(resolved),
        iterations=int(tr["iterations"]), n_particles=int(tr["n_particles"]),
        lr=float(tr["lr"]), lr_schedule=tr["lr_schedule"],
        adam=AdamParams(lr=float(tr["lr"]), beta1=float(adam["beta1"]),
                        beta2=float(adam["beta2"]), eps=float(adam["eps"])),
        noise_seed=int(resolved["noise"]["seed"]), init_seed=int(tr["init_seed"]),
        weight_seed=int(resolved["network"]["weight_seed"]),
        weight_decay=float(tr["weight_decay"]), log_every=int(tr["log_every"]),
        checkpoint_every=int(tr["checkpoint_every"]))


def build_all(resolved: dict):
    """(problem, basis, net_spec, train_config) from one resolved config."""
    return (build_problem(resolved), build_basis(resolved),
            build_net_spec(resolved), build_train_config(resolved))
