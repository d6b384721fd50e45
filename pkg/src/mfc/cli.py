"""Command-line surface and all file emission.

Exit codes: 0 success, 1 domain failure (divergence, oracle failure,
checkpoint mismatch), 2 configuration errors. Every subcommand writes only
under --out and leaves a manifest.json there recording the resolved config,
seeds, artifact paths, and the config hash.

MFC_THREADS controls BLAS parallelism: 0 or unset pins the canonical
single-threaded mode; k > 0 allows k threads. It must be applied before numpy
loads, which is why this module sets the environment at import time.
"""

import os

_threads = os.environ.get("MFC_THREADS", "0")
_n = "1" if _threads in ("", "0") else _threads
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, _n)

import argparse
import csv
import json
import sys
import time

import numpy as np

from . import __version__
from . import autodiff as ad
from .config import (build_all, build_basis, build_initial_law, build_net_spec,
                     build_problem, build_train_config, config_hash, load_config)
from .diagnostics import poc_study, rademacher_study, value_convergence_study
from .errors import (CheckpointError, ConfigurationError, DivergenceError,
                     NumericalStateError, TrainingError)
from .features import FeatureBasis
from .model import TWO_PI, gaussian_diag, sample_initial, generate_noise
from .network import NetSpec, make_network
from .problems import lq_value_oracle, LqParams, systemic_value_oracle, SystemicParams
from .rollout import grad_check, simulate
from .training import checkpoint_load, checkpoint_save, evaluate, train


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigurationError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return 2
    except (DivergenceError, TrainingError, CheckpointError, NumericalStateError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


def _build_parser():
    p = argparse.ArgumentParser(prog="mfc", description="mean-field control solver")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, needs_out=True, needs_config=True):
        q = sub.add_parser(name)
        if needs_config:
            q.add_argument("--config", required=True)
        if needs_out:
            q.add_argument("--out", required=True)
        q.set_defaults(fn=fn)
        return q

    q = add("train", _cmd_train)
    _seed_flags(q)

    q = add("evaluate", _cmd_evaluate)
    q.add_argument("--checkpoint", required=True)
    q.add_argument("--replications", type=int, default=10)
    q.add_argument("--n-eval", type=int, default=None)
    q.add_argument("--fresh-noise-seed", type=int, default=10_000)
    q.add_argument("--initial-law", default=None,
                   help="JSON object overriding the config's initial law")
    q.add_argument("--force", action="store_true",
                   help="load the checkpoint even if its config hash mismatches")

    q = add("simulate", _cmd_simulate)
    q.add_argument("--checkpoint", default=None)
    q.add_argument("--force", action="store_true")
    _seed_flags(q)

    q = add("poc-study", _cmd_poc)
    q.add_argument("--n-list", default="100,200,400,800,1600,3200")
    q.add_argument("--n-ref", type=int, default=None)
    q.add_argument("--replications", type=int, default=8)
    q.add_argument("--policy-seed", type=int, default=0)
    q.add_argument("--seed", type=int, default=0)

    q = add("rademacher", _cmd_rademacher)
    q.add_argument("--n-list", default="100,1600")
    q.add_argument("--sigma-draws", type=int, default=20)
    q.add_argument("--inner-iters", type=int, default=200)
    q.add_argument("--starts", type=int, default=5)
    q.add_argument("--n-ref", type=int, default=None)
    q.add_argument("--seed", type=int, default=0)

    q = add("convergence", _cmd_convergence)
    q.add_argument("--n-list", default="250,1000,4000")
    q.add_argument("--slack", type=float, default=0.0)

    q = add("export-heatmap", _cmd_heatmap, needs_config=False)
    q.add_argument("--trajectory", required=True)
    q.add_argument("--bins", type=int, default=100)

    q = add("grad-check", _cmd_gradcheck, needs_out=False)
    q.add_argument("--n", type=int, default=8)
    q.add_argument("--steps", type=int, default=3)
    q.add_argument("--threshold", type=float, default=1e-4)
    return p


def _seed_flags(q):
    q.add_argument("--seed-noise", type=int, default=None)
    q.add_argument("--seed-init", type=int, default=None)
    q.add_argument("--seed-weights", type=int, default=None)


def _load(args):
    resolved = load_config(args.config)
    for flag, path in (("seed_noise", ("noise", "seed")),
                       ("seed_init", ("training", "init_seed")),
                       ("seed_weights", ("network", "weight_seed"))):
        v = getattr(args, flag, None)
        if v is not None:
            resolved[path[0]][path[1]] = v
    return resolved


def _outdir(args):
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _write_json(path, payload):
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def _write_csv(path, header, rows):
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    os.replace(tmp, path)


def _manifest(out, command, resolved, artifacts, t0, extra=None):
    seeds = None
    if "noise" in resolved:
        seeds = {"noise": resolved["noise"]["seed"],
                 "init": resolved["training"]["init_seed"],
                 "weights": resolved["network"]["weight_seed"]}
    payload = {
        "command": command,
        "resolved_config": resolved,
        "config_hash": config_hash(resolved),
        "seeds": seeds,
        "artifacts": artifacts,
        "tool_version": __version__,
        "mfc_threads": os.environ.get("MFC_THREADS", "0"),
        "wallclock_s": time.perf_counter() - t0,
    }
    if extra:
        payload.update(extra)
    _write_json(os.path.join(out, "manifest.json"), payload)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_train(args):
    t0 = time.perf_counter()
    resolved = _load(args)
    out = _outdir(args)
    problem, basis, spec, tcfg = build_all(resolved)
    chash = config_hash(resolved)
    ckpt_path = os.path.join(out, "checkpoint.bin")

    def log(i, loss):
        print(f"iter {i:6d}  loss {loss:.6f}", flush=True)

    def periodic_checkpoint(i, theta):
        checkpoint_save(ckpt_path, theta,
                        _ckpt_meta(resolved, chash, problem, basis, i))

    try:
        report, net = train(problem, basis, spec, tcfg, log=log,
                            checkpoint_cb=periodic_checkpoint)
    except TrainingError as err:
        if err.best_theta is not None:
            checkpoint_save(ckpt_path, err.best_theta,
                            _ckpt_meta(resolved, chash, problem, basis,
                                       err.iteration))
            print(f"aborted; last good checkpoint written to {ckpt_path}",
                  file=sys.stderr)
        raise
    checkpoint_save(ckpt_path, net.theta,
                    _ckpt_meta(resolved, chash, problem, basis, report.best_iteration))
    _write_json(os.path.join(out, "report.json"), report.to_dict())
    _write_csv(os.path.join(out, "loss.csv"), ["iteration", "loss"],
               [(i, repr(float(l))) for i, l in enumerate(report.losses)])
    _write_json(os.path.join(out, "resolved_config.json"), resolved)
    _manifest(out, "train", resolved,
              {"report": "report.json", "loss_curve": "loss.csv",
               "checkpoint": "checkpoint.bin", "resolved_config": "resolved_config.json"},
              t0, extra={"final_loss": report.final_loss,
                         "noise_sha256": report.noise_sha256})
    print(f"final loss {report.final_loss:.6f} (best iteration {report.best_iteration})")
    return 0


def _ckpt_meta(resolved, chash, problem, basis, iteration):
    return {
        "config_hash": chash,
        "problem_sha256": problem.sha256(),
        "basis": basis.describe(),
        "network": resolved["network"],
        "seeds": {"noise": resolved["noise"]["seed"],
                  "init": resolved["training"]["init_seed"],
                  "weights": resolved["network"]["weight_seed"]},
        "iteration": iteration,
        "tool_version": __version__,
    }


def _restore_net(resolved, problem, basis, path, force):
    theta, meta = checkpoint_load(path, expect_config_hash=config_hash(resolved),
                                  force=force)
    spec = build_net_spec(resolved)
    net = make_network(spec, problem.space, basis.n_features(problem.space.dim),
                       problem.control_dim, problem.horizon_steps)
    net.set_theta(theta)
    return net, meta


def _cmd_evaluate(args):
    t0 = time.perf_counter()
    resolved = _load(args)
    out = _outdir(args)
    problem = build_problem(resolved)
    basis = build_basis(resolved)
    net, _ = _restore_net(resolved, problem, basis, args.checkpoint, args.force)
    law = build_initial_law(resolved)
    if args.initial_law:
        law_cfg = json.loads(json.dumps(resolved))
        law_cfg["initial_law"] = json.loads(args.initial_law)
        law = build_initial_law(law_cfg)
    n_eval = args.n_eval or resolved["training"]["n_particles"]
    rep = evaluate(problem, basis, net, law, n_eval, replications=args.replications,
                   fresh_noise_seed=args.fresh_noise_seed)
    _write_json(os.path.join(out, "evaluation.json"), rep.to_dict())
    _manifest(out, "evaluate", resolved, {"evaluation": "evaluation.json"}, t0,
              extra={"mean_cost": rep.mean_cost, "std_cost": rep.std_cost})
    print(f"mean cost {rep.mean_cost:.6f} (std {rep.std_cost:.6f}, "
          f"R={args.replications})")
    return 0


def _cmd_simulate(args):
    t0 = time.perf_counter()
    resolved = _load(args)
    out = _outdir(args)
    problem, basis, spec, tcfg = build_all(resolved)
    if args.checkpoint:
        net, _ = _restore_net(resolved, problem, basis, args.checkpoint, args.force)
        policy = net
    else:
        policy = None  # zero control
    ens0 = sample_initial(tcfg.initial_law, tcfg.n_particles, tcfg.init_seed,
                          problem.space)
    bank = generate_noise(tcfg.n_particles, problem.horizon_steps, problem.noise_dim,
                          problem.noise_law, tcfg.noise_seed)
    traj = simulate(problem, policy, basis, ens0, bank)
    traj_path = os.path.join(out, "trajectory.csv")
    write_trajectory_csv(traj_path, traj)
    bins = resolved["output"]["heatmap_bins"]
    rows = histogram_rows([s for s in traj.states], bins, problem.space)
    _write_csv(os.path.join(out, "density.csv"), ["step", "bin_center", "mass"], rows)
    artifacts = {"trajectory": "trajectory.csv", "density": "density.csv",
                 "cost": "cost.json"}
    if resolved["output"]["log_features"]:
        feat_rows = [(j, k, repr(float(v)))
                     for j, st in enumerate(traj.stats)
                     for k, v in enumerate(np.asarray(st.features))]
        _write_csv(os.path.join(out, "features.csv"),
                   ["step", "feature_index", "value"], feat_rows)
        artifacts["features"] = "features.csv"
    _write_json(os.path.join(out, "cost.json"),
                {"pathwise_cost": traj.cost,
                 "terminal_order_parameter":
                     traj.stats[-1].order_parameter() if problem.space.is_torus else None})
    _manifest(out, "simulate", resolved, artifacts, t0)
    print(f"pathwise cost {traj.cost:.6f}")
    return 0


def _cmd_poc(args):
    t0 = time.perf_counter()
    resolved = _load(args)
    out = _outdir(args)
    problem = build_problem(resolved)
    basis = build_basis(resolved)
    law = build_initial_law(resolved)
    n_values = _parse_n_list(args.n_list)
    # fixed random bounded policy: the theorem quantifies over a bounded class
    spec = build_net_spec(resolved)
    from dataclasses import replace as _rp
    spec = _rp(spec, clamp=spec.clamp if spec.clamp is not None else 1.0,
               final_layer_zero=False, weight_seed=args.policy_seed)
    policy = make_network(spec, problem.space, basis.n_features(problem.space.dim),
                          problem.control_dim, problem.horizon_steps)
    report = poc_study(problem, policy, basis, law, n_values, n_ref=args.n_ref,
                       n_replications=args.replications, seed=args.seed)
    _write_json(os.path.join(out, "poc.json"), report.to_dict())
    _write_csv(os.path.join(out, "poc.csv"), ["n", "mean_sup_w1", "cost_gap"],
               [(n, repr(w), repr(g)) for n, w, g in
                zip(report.n_values, report.mean_sup_w1, report.cost_gaps)])
    _manifest(out, "poc-study", resolved, {"report": "poc.json", "table": "poc.csv"},
              t0, extra={"slope": report.slope})
    print(f"fitted log-log slope {report.slope:.4f}")
    return 0


def _cmd_rademacher(args):
    t0 = time.perf_counter()
    resolved = _load(args)
    out = _outdir(args)
    problem = build_problem(resolved)
    basis = build_basis(resolved)
    law = build_initial_law(resolved)
    spec = build_net_spec(resolved)
    n_values = _parse_n_list(args.n_list)
    report = rademacher_study(problem, basis, spec, law, n_values,
                              n_sigma_draws=args.sigma_draws,
                              inner_iters=args.inner_iters, n_starts=args.starts,
                              n_ref=args.n_ref, seed=args.seed)
    _write_json(os.path.join(out, "rademacher.json"), report.to_dict())
    _write_csv(os.path.join(out, "rademacher.csv"), ["n", "estimate"],
               [(n, repr(e)) for n, e in zip(report.n_values, report.estimates)])
    _manifest(out, "rademacher", resolved,
              {"report": "rademacher.json", "table": "rademacher.csv"}, t0)
    for n, e in zip(report.n_values, report.estimates):
        print(f"N={n:6d}  estimate {e:.6f}")
    return 0


def _cmd_convergence(args):
    t0 = time.perf_counter()
    resolved = _load(args)
    out = _outdir(args)
    problem, basis, spec, tcfg = build_all(resolved)
    name = resolved["problem"]["name"]
    law = tcfg.initial_law
    if name == "lq":
        var0 = float(np.sum(law.var))
        oracle = lq_value_oracle(LqParams(kappa=resolved["problem"]["kappa"],
                                          sigma=resolved["problem"]["sigma"],
                                          beta=resolved["problem"]["beta"]), var0)
    elif name == "systemic":
        var0 = float(np.sum(law.var))
        oracle = systemic_value_oracle(
            SystemicParams(kappa=resolved["problem"]["kappa"],
                           sigma=resolved["problem"]["sigma"],
                           q=resolved["problem"]["q"], eta=resolved["problem"]["eta"],
                           c=resolved["problem"]["c"],
                           t_model=resolved["discretization"]["t_model"]), var0)
    else:
        raise ConfigurationError("convergence study needs a problem with a value "
                                 "oracle (lq or systemic)")
    n_values = _parse_n_list(args.n_list)
    report = value_convergence_study(problem, basis, spec, n_values, tcfg, oracle,
                                     slack=args.slack)
    _write_json(os.path.join(out, "convergence.json"), report.to_dict())
    _write_csv(os.path.join(out, "convergence.csv"),
               ["n", "trained_value", "oracle_value", "gap"],
               [(n, repr(v), repr(report.oracle_value), repr(g)) for n, v, g in
                zip(report.n_values, report.trained_values, report.gaps)])
    _manifest(out, "convergence", resolved,
              {"report": "convergence.json", "table": "convergence.csv"}, t0,
              extra={"trend_ok": report.trend_ok})
    print(f"gaps {['%.4f' % g for g in report.gaps]} trend_ok={report.trend_ok}")
    return 0


def _cmd_heatmap(args):
    t0 = time.perf_counter()
    out = _outdir(args)
    if args.bins < 2:
        raise ConfigurationError("--bins: need at least 2 bins")
    steps, states = read_trajectory_states(args.trajectory)
    space_kind = "torus" if all(
        (s >= 0).all() and (s < TWO_PI).all() for s in states) else "euclidean"
    from .model import StateSpace
    rows = histogram_rows(states, args.bins, StateSpace(space_kind, states[0].shape[1]))
    path = os.path.join(out, "heatmap.csv")
    _write_csv(path, ["step", "bin_center", "mass"], rows)
    _manifest(out, "export-heatmap", {"trajectory": args.trajectory, "bins": args.bins},
              {"heatmap": "heatmap.csv"}, t0)
    print(f"wrote {path}")
    return 0


def _cmd_gradcheck(args):
    resolved = _load(args)
    problem, basis, spec, tcfg = build_all(resolved)
    from dataclasses import replace as _rp
    import dataclasses
    problem = dataclasses.replace(problem, horizon_steps=args.steps)
    # tanh keeps the probe smooth; relu nets are checked off kinks in tests
    spec = _rp(spec, activation="tanh", final_layer_zero=False)
    net = make_network(spec, problem.space, basis.n_features(problem.space.dim),
                       problem.control_dim, problem.horizon_steps)
    ens0 = sample_initial(tcfg.initial_law, args.n, tcfg.init_seed, problem.space)
    bank = generate_noise(args.n, problem.horizon_steps, problem.noise_dim,
                          problem.noise_law, tcfg.noise_seed)
    err = grad_check(problem, net, basis, ens0, bank)
    print(f"max relative gradient error: {err:.3e}")
    return 0 if err < args.threshold else 1


def _parse_n_list(text):
    try:
        values = [int(tok) for tok in str(text).split(",") if tok.strip()]
    except ValueError:
        raise ConfigurationError(f"--n-list: expected comma-separated integers, got {text!r}")
    if not values:
        raise ConfigurationError("--n-list: empty")
    return values


# ---------------------------------------------------------------------------
# trajectory / histogram I/O
# ---------------------------------------------------------------------------

def write_trajectory_csv(path, traj):
    """Long format: one row per (step, particle); empty controls at step T."""
    d = traj.states[0].shape[1]
    cdim = traj.controls[0].shape[1] if traj.controls else 1
    header = (["step", "particle_id"] + [f"x{k}" for k in range(d)]
              + [f"a{k}" for k in range(cdim)])
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for j, states in enumerate(traj.states):
            controls = traj.controls[j] if j < len(traj.controls) else None
            for i in range(states.shape[0]):
                row = [j, i] + [repr(float(v)) for v in states[i]]
                if controls is None:
                    row += [""] * cdim
                else:
                    row += [repr(float(v)) for v in controls[i]]
                w.writerow(row)
    os.replace(tmp, path)


def read_trajectory_states(path):
    """Read back the states of a long-format trajectory CSV (first coordinate block)."""
    steps = {}
    try:
        with open(path, newline="") as fh:
            r = csv.reader(fh)
            header = next(r)
            xcols = [i for i, name in enumerate(header) if name.startswith("x")]
            if not xcols or header[0] != "step":
                raise ConfigurationError(f"{path}: not a trajectory CSV")
            for row in r:
                j = int(row[0])
                steps.setdefault(j, []).append([float(row[i]) for i in xcols])
    except FileNotFoundError:
        raise ConfigurationError(f"trajectory file not found: {path}")
    ordered = sorted(steps)
    if ordered != list(range(len(ordered))):
        raise ConfigurationError(f"{path}: missing steps in trajectory")
    return ordered, [np.asarray(steps[j]) for j in ordered]


def histogram_rows(states_per_step, bins, space):
    """(step, bin_center, mass) rows; masses at each step sum to one."""
    if space.dim != 1:
        raise ConfigurationError("heatmap export supports one-dimensional states")
    if space.is_torus:
        lo, hi = 0.0, TWO_PI
    else:
        lo = min(float(s.min()) for s in states_per_step)
        hi = max(float(s.max()) for s in states_per_step)
        pad = 0.05 * max(hi - lo, 1e-12)
        lo, hi = lo - pad, hi + pad
    edges = np.linspace(lo, hi, bins + 1)
    centers = 0.5 * (edges[:-1] + edges[1:])
    rows = []
    for j, s in enumerate(states_per_step):
        counts, _ = np.histogram(s.ravel(), bins=edges)
        mass = counts / s.shape[0]
        rows.extend((j, repr(float(c)), repr(float(m))) for c, m in zip(centers, mass))
    return rows


if __name__ == "__main__":
    sys.exit(main())
