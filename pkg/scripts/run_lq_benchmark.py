#!/usr/bin/env python3
"""LQ benchmark: train at the reported settings, then evaluate on fresh noise.

Usage: python scripts/run_lq_benchmark.py [outdir]
"""

import json
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from mfc.cli import main
from mfc.problems import LqParams, lq_stationary_variance, lq_value_oracle

CONFIG = {
    "problem": {"name": "lq", "kappa": 1.0, "sigma": 1.0, "beta": 1.0},
    "discretization": {"dt": 0.05, "t_model": 20.0},
    "initial_law": {"kind": "gaussian_diag", "mean": [0.0], "var": [2.25]},
    "noise": {"seed": 101},
    "network": {"hidden": [32, 32], "activation": "relu", "clamp": 25.0,
                "weight_seed": 103},
    "training": {"iterations": 6000, "n_particles": 2000, "init_seed": 102,
                 "log_every": 200},
}


def run(outdir):
    os.makedirs(outdir, exist_ok=True)
    cfg_path = os.path.join(outdir, "config.json")
    with open(cfg_path, "w") as fh:
        json.dump(CONFIG, fh, indent=2)
    train_dir = os.path.join(outdir, "train")
    rc = main(["train", "--config", cfg_path, "--out", train_dir])
    if rc != 0:
        return rc
    rc = main(["evaluate", "--config", cfg_path,
               "--checkpoint", os.path.join(train_dir, "checkpoint.bin"),
               "--out", os.path.join(outdir, "eval"),
               "--replications", "10", "--fresh-noise-seed", "4242"])
    if rc != 0:
        return rc
    with open(os.path.join(train_dir, "report.json")) as fh:
        trained = json.load(fh)["final_loss"]
    oracle = lq_value_oracle(LqParams(), 2.25)
    print(f"trained value           {trained:.4f}")
    print(f"analytic value          {oracle:.4f}  (a Var + b with a=b=0.5)")
    print(f"relative gap            {abs(trained - oracle) / oracle * 100:.2f}%")
    print(f"stationary variance     {lq_stationary_variance(LqParams()):.3f}")
    return 0


if __name__ == "__main__":
    sys.exit(run(sys.argv[1] if len(sys.argv) > 1 else "runs/lq"))
