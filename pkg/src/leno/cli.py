"""Command-line front end: ``leno eig|gen|project|train|eval|predict|transfer|repro``."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

from .errors import LenoError, ValidationError

EXIT_FAILURE = 2


def _set_threads(n):
    if n:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS"):
            os.environ[var] = str(n)


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment configuration (JSON)")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int, default=0, help="cap on worker threads")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--problem")
    common.add_argument("--P", type=int)
    common.add_argument("--hidden", help="comma-separated hidden widths")
    common.add_argument("--epochs", type=int)
    common.add_argument("--lr", type=float)
    common.add_argument("--mode", choices=("combined", "data-only", "residual-only"))
    common.add_argument("--dtype", choices=("float32", "float64"))
    common.add_argument("--M", type=int)
    common.add_argument("--n-train", type=int)
    common.add_argument("--n-eval", type=int)
    common.add_argument("--resolution", type=int)
    common.add_argument("--basis", help="basis container path")
    common.add_argument("--traj", help="trajectory container path")
    common.add_argument("--dataset", help="dataset container path")
    common.add_argument("--model", help="model container path")

    p = argparse.ArgumentParser(prog="leno", description="Laplacian-eigenfunction neural operators")
    sub = p.add_subparsers(dest="cmd", required=True)
    sub.add_parser("eig", parents=[common], help="build and save the eigenbasis")
    g = sub.add_parser("gen", parents=[common], help="generate reference trajectories")
    g.add_argument("--dt", type=float, help="solver step (default: largest stable substep)")
    g.add_argument("--force-dt", action="store_true", help="skip the explicit stability check")
    sub.add_parser("project", parents=[common], help="project trajectories onto the basis")
    t = sub.add_parser("train", parents=[common], help="train a coefficient network")
    t.add_argument("--log-every", type=int, default=0)
    t.add_argument("--checkpoint-every", type=int, default=0)
    e = sub.add_parser("eval", parents=[common], help="error metrics of a trained model")
    e.add_argument("--horizon", type=int, help="evaluate over this many steps (default: training horizon)")
    pr = sub.add_parser("predict", parents=[common], help="roll a trained model forward")
    pr.add_argument("--horizon", type=int, required=True)
    pr.add_argument("--sample", type=int, default=0)
    pr.add_argument("--svg", action="store_true", help="also write an SVG plot of the norm curves")
    tr = sub.add_parser("transfer", parents=[common], help="retrain the output layer and time scale")
    tr.add_argument("--base", required=True, help="trained model container")
    tr.add_argument("--alpha0", type=float, default=1.0)
    tr.add_argument("--fit-diffusion", action="store_true")
    tr.add_argument("--transfer-epochs", type=int, default=1000)
    r = sub.add_parser("repro", parents=[common], help="run a named reproduction experiment")
    r.add_argument("name")
    r.add_argument("--log-every", type=int, default=0)
    return p


def _config(args):
    from .experiments import ExperimentConfig

    cfg = ExperimentConfig.from_json(args.config) if args.config else ExperimentConfig()
    d = cfg.to_dict()
    for key, attr in (("problem", "problem"), ("P", "P"), ("epochs", "epochs"), ("lr", "lr"), ("mode", "mode"),
                      ("dtype", "dtype"), ("M", "M"), ("n_train", "n_train"), ("n_eval", "n_eval"),
                      ("seed", "seed")):
        v = getattr(args, attr, None)
        if v is not None:
            d[key] = v
    if args.hidden:
        d["hidden"] = [int(h) for h in args.hidden.split(",") if h]
    if args.resolution:
        d["overrides"] = {**d["overrides"], "resolution": args.resolution}
    for key in ("basis", "traj", "dataset", "model"):
        v = getattr(args, key, None)
        if v:
            d["paths"] = {**d["paths"], key: v}
    return ExperimentConfig.from_dict(d)


def _path(cfg, args, key, default):
    return cfg.paths.get(key) or os.path.join(args.out, default)


def _basis_paths(path, c):
    root, ext = os.path.splitext(path)
    return [path] + [f"{root}.v{v}{ext}" for v in range(1, c)]


def _need(path):
    if not os.path.exists(path):
        raise FileNotFoundError(f"missing input {path}")
    return path


def _load_bases(cfg, args, c):
    from .container import load

    return [load(_need(p), "basis") for p in _basis_paths(_path(cfg, args, "basis", "basis.leno"), c)]


def cmd_eig(cfg, args):
    from .container import save
    from .experiments import bases_for

    problem = cfg.build_problem()
    bases = bases_for(problem, cfg.P)
    for b, p in zip(bases, _basis_paths(_path(cfg, args, "basis", "basis.leno"), problem.c)):
        h = save(b, p, meta={"config": cfg.to_dict()})
        print(f"{p}: P={b.P} lambda[0:4]={b.lambdas[:4].round(6).tolist()} hash={h}")
    return 0


def cmd_gen(cfg, args):
    from .container import save
    from .experiments import lift_for
    from .pde_lab import generate

    if args.seed is None:
        raise ValidationError("gen requires --seed")
    problem = cfg.build_problem()
    _, n_eval = cfg.horizons(problem)
    lift = lift_for(problem) if problem.bc.kind == "inhomogeneous-dirichlet" else None
    traj = generate(problem, cfg.M, args.seed, n_eval, cfg.tau, cfg.max_dt, cfg.grf_modes, lift=lift,
                    dt=args.dt, force=args.force_dt, scheme=cfg.scheme)
    path = _path(cfg, args, "traj", "traj.leno")
    h = save(traj, path, meta={"config": cfg.to_dict()})
    print(f"{path}: M={traj.M} N={traj.N} substeps/record={traj.meta['substeps']} hash={h}")
    return 0


def cmd_project(cfg, args):
    from .container import load, save
    from .dataset import project_trajectories
    from .experiments import lift_for

    problem = cfg.build_problem()
    traj = load(_need(_path(cfg, args, "traj", "traj.leno")), "traj")
    bases = _load_bases(cfg, args, problem.c)
    ds = project_trajectories(traj, bases, lift_for(problem))
    path = _path(cfg, args, "dataset", "dataset.leno")
    h = save(ds, path, meta={"config": cfg.to_dict()})
    print(f"{path}: M={ds.M} N={ds.N} width={ds.width} residual identity error={ds.residual_error():.2e} hash={h}")
    return 0


def cmd_train(cfg, args):
    from .container import load, save
    from .leno import train
    from .neuralnet import CoeffNet

    if args.seed is None:
        raise ValidationError("train requires --seed")
    problem = cfg.build_problem()
    n_train, _ = cfg.horizons(problem)
    ds = load(_need(_path(cfg, args, "dataset", "dataset.leno")), "dataset")
    ds = ds.truncate(min(n_train, ds.N))
    net = CoeffNet.init([ds.width] + cfg.hidden + [ds.width], cfg.seed)
    model_path = _path(cfg, args, "model", "model.leno")
    hist_path = os.path.join(args.out, "history.csv")
    tc = cfg.train_config(history_path=hist_path, log_every=args.log_every,
                          checkpoint_every=args.checkpoint_every, checkpoint_path=model_path + ".ckpt")
    net, history = train(net, ds, tc)
    # output locations and timings stay out of the container so reruns elsewhere are byte-identical
    tmeta = {k: v for k, v in tc.to_dict().items() if not k.endswith("_path")}
    h = save(net, model_path, meta={"config": cfg.to_dict(), "train": tmeta,
                                    "final": {k: history[-1][k] for k in ("epoch", "L", "L_D", "L_R")}})
    last = history[-1]
    print(f"{model_path}: epochs={len(history)} L={last['L']:.4e} L_D={last['L_D']:.4e} "
          f"L_R={last['L_R']:.4e} hash={h}")
    return 0


def cmd_eval(cfg, args):
    from .container import load
    from .experiments import lift_for
    from .metrics import evaluate

    problem = cfg.build_problem()
    n_train, _ = cfg.horizons(problem)
    horizon = args.horizon or n_train
    net = load(_need(_path(cfg, args, "model", "model.leno")), "model")
    ds = load(_need(_path(cfg, args, "dataset", "dataset.leno")), "dataset")
    ds = ds.truncate(min(horizon, ds.N))
    bases = _load_bases(cfg, args, problem.c)
    tpath = _path(cfg, args, "traj", "traj.leno")
    traj = load(tpath, "traj").truncate(ds.N) if os.path.exists(tpath) else None
    rep = evaluate(net, ds, bases, problem.F if problem.name != "custom" else None, traj, lift_for(problem))
    path = os.path.join(args.out, "report.csv")
    rep.to_csv(path)
    print(rep.table())
    bad = rep.violations(cfg.thresholds)
    for name in bad:
        print(f"FAIL  {name} above threshold {cfg.thresholds[name]}")
    return EXIT_FAILURE if bad else 0


def cmd_predict(cfg, args):
    import numpy as np

    from .container import load
    from .experiments import lift_for
    from .leno import predict

    problem = cfg.build_problem()
    net = load(_need(_path(cfg, args, "model", "model.leno")), "model")
    traj = load(_need(_path(cfg, args, "traj", "traj.leno")), "traj")
    bases = _load_bases(cfg, args, problem.c)
    if not 0 <= args.sample < traj.M:
        raise ValidationError(f"sample index {args.sample} out of range")
    tau = traj.times[1] - traj.times[0]
    pred = predict(net, bases, traj.samples[args.sample, 0], args.horizon, tau, problem, lift_for(problem))
    norms = pred.meta["norms"][0]
    ref = None
    if traj.N >= args.horizon:
        ref = np.stack([bases[0].norm(traj.samples[args.sample, :args.horizon + 1, v]) for v in range(problem.c)],
                       axis=-1)
    path = os.path.join(args.out, "predict.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        head = ["step", "time"] + [f"norm_{v}" for v in problem.variables]
        if ref is not None:
            head += [f"ref_norm_{v}" for v in problem.variables]
        w.writerow(head)
        for n in range(args.horizon + 1):
            row = [n, repr(float(pred.times[n]))] + [repr(float(x)) for x in norms[n]]
            if ref is not None:
                row += [repr(float(x)) for x in ref[n]]
            w.writerow(row)
    if args.svg:
        from .plotting import line_plot_svg

        series = {f"predicted {v}": (pred.times, norms[:, i]) for i, v in enumerate(problem.variables)}
        if ref is not None:
            series.update({f"reference {v}": (pred.times, ref[:, i]) for i, v in enumerate(problem.variables)})
        line_plot_svg(series, os.path.join(args.out, "predict.svg"), "L2 norm", "t", "||u||")
    print(f"{path}: {args.horizon + 1} rows")
    return 0


def cmd_transfer(cfg, args):
    from .container import load, save
    from .transfer import TransferConfig, transfer_train

    problem = cfg.build_problem()
    base = load(_need(args.base), "model")
    ds = load(_need(_path(cfg, args, "dataset", "dataset.leno")), "dataset")
    bases = _load_bases(cfg, args, problem.c)
    tc = TransferConfig(alpha0=args.alpha0, train_diffusion=args.fit_diffusion, epochs=args.transfer_epochs,
                        lr=cfg.lr)
    res = transfer_train(base, ds, tc)
    acc = res.accuracy(ds, bases)
    path = _path(cfg, args, "model", "transfer.leno")
    save(res.net, path, meta={"alpha": res.alpha, "d_scale": res.d_scale, "transfer": tc.to_dict()})
    table = os.path.join(args.out, "transfer.csv")
    with open(table, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["alpha", "D_scale"] + list(acc))
        w.writerow([repr(res.alpha), repr(res.d_scale)] + [repr(v) for v in acc.values()])
    print(f"alpha={res.alpha:.4f} D_scale={res.d_scale:.4f} " + " ".join(f"{k}={v:.4f}" for k, v in acc.items()))
    return 0


def cmd_repro(cfg, args):
    from .experiments import format_checks, run_repro

    checks, info = run_repro(args.name, args.log_every)
    for line in format_checks(args.name, checks):
        print(line)
    budget = info.get("budget")
    note = f" (budget {budget:.0f} s)" if budget else ""
    print(f"wall time {info['seconds']:.0f} s{note}")
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, f"repro-{args.name}.json"), "w") as fh:
        json.dump({"checks": checks, "seconds": info["seconds"]}, fh, indent=2)
    return 0 if all(c["ok"] for c in checks) else EXIT_FAILURE


COMMANDS = {"eig": cmd_eig, "gen": cmd_gen, "project": cmd_project, "train": cmd_train, "eval": cmd_eval,
            "predict": cmd_predict, "transfer": cmd_transfer, "repro": cmd_repro}


def main(argv=None):
    args = _parser().parse_args(argv)
    _set_threads(args.threads)
    try:
        cfg = _config(args)
        os.makedirs(args.out, exist_ok=True)
        return COMMANDS[args.cmd](cfg, args)
    except (LenoError, FileNotFoundError) as exc:
        print(f"leno {args.cmd}: error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
