#!/usr/bin/env python3
"""Theory diagnostics on the LQ model: propagation-of-chaos W1 decay,
Rademacher complexity trend, and value convergence in N.

Usage: python scripts/run_diagnostics.py [outdir]
"""

import json
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from mfc.cli import main

CONFIG = {
    "problem": {"name": "lq"},
    "discretization": {"dt": 0.05, "t_model": 20.0},
    "initial_law": {"kind": "gaussian_diag", "mean": [0.0], "var": [2.25]},
    "noise": {"seed": 41},
    "network": {"hidden": [32, 32], "clamp": 1.0, "weight_seed": 41},
    "training": {"iterations": 400, "n_particles": 500, "init_seed": 42,
                 "log_every": 0},
}

SHORT = dict(CONFIG, discretization={"dt": 0.05, "t_model": 0.5},
             network={"hidden": [], "clamp": 1.0, "weight_seed": 41,
                      "final_layer_zero": False},
             initial_law={"kind": "gaussian_diag", "mean": [0.0], "var": [1.0]})


def run(outdir):
    os.makedirs(outdir, exist_ok=True)
    cfg = os.path.join(outdir, "config.json")
    with open(cfg, "w") as fh:
        json.dump(CONFIG, fh, indent=2)
    cfg_short = os.path.join(outdir, "config_short.json")
    with open(cfg_short, "w") as fh:
        json.dump(SHORT, fh, indent=2)

    rc = main(["poc-study", "--config", cfg, "--out", os.path.join(outdir, "poc"),
               "--n-list", "100,200,400,800,1600,3200", "--replications", "8"])
    if rc != 0:
        return rc
    rc = main(["rademacher", "--config", cfg_short,
               "--out", os.path.join(outdir, "rademacher"),
               "--n-list", "100,400,1600", "--sigma-draws", "20",
               "--inner-iters", "150", "--starts", "3"])
    if rc != 0:
        return rc
    # small-budget convergence study: same hyperparameters per N
    conv_cfg = dict(CONFIG)
    conv_cfg["discretization"] = {"dt": 0.1, "t_model": 2.0}
    conv_cfg["network"] = {"hidden": [8], "clamp": 25.0, "weight_seed": 41}
    conv_cfg["training"] = {"iterations": 300, "n_particles": 250,
                            "init_seed": 42, "lr": 3e-3, "log_every": 0}
    cfg_conv = os.path.join(outdir, "config_conv.json")
    with open(cfg_conv, "w") as fh:
        json.dump(conv_cfg, fh, indent=2)
    return main(["convergence", "--config", cfg_conv,
                 "--out", os.path.join(outdir, "convergence"),
                 "--n-list", "50,250,1000", "--slack", "0.2"])


if __name__ == "__main__":
    sys.exit(run(sys.argv[1] if len(sys.argv) > 1 else "runs/diagnostics"))
