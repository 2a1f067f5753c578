"""Command-line interface.

``--config file.json`` is accepted before or after the subcommand; keys in
the file (either ``n-tot`` or ``n_tot`` spelling) override the corresponding
flags. A config given after the subcommand wins over a global one.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .asymptotics import asymptotic_report
from .family import ALL_KINDS, parse_kind
from .harness import (
    NOISE_POLICIES,
    TrialConfig,
    generate_data,
    make_ground_truth,
    sweep_gamma,
    sweep_sample_size,
    theory_aux,
    write_results,
)
from .models import IcaGroundTruth, IcaModel, ica_true_c, pack_theta
from .noise import fit_gaussian
from .objective import EstimationProblem
from .optimizer import OptimizerConfig, maximize

KIND_TOKENS = [k.value for k in ALL_KINDS]


def _floats(text):
    return [float(t) for t in str(text).split(",") if t.strip()]


def _ints(text):
    return [int(float(t)) for t in str(text).split(",") if t.strip()]


def _kinds(text):
    return [str(parse_kind(t.strip())) for t in str(text).split(",") if t.strip()]


def _write_json(obj, path):
    text = json.dumps(obj, indent=2)
    if path in (None, "-"):
        print(text)
    else:
        Path(path).write_text(text + "\n")


def _truth_path(data_path: Path) -> Path:
    return data_path.with_name(data_path.stem + ".truth.json")


def cmd_verify(args) -> int:
    from .checks import run_all

    results = run_all(args.mc)
    for r in results:
        print(r.line())
    ok = all(r.passed for r in results)
    print("all checks passed" if ok else "some checks FAILED")
    return 0 if ok else 1


def cmd_gen_data(args) -> int:
    root = np.random.SeedSequence(args.seed)
    truth = make_ground_truth(args.dim, args.alpha, args.seed if args.truth_seed is None else args.truth_seed)
    data = generate_data(truth, args.n, root.spawn(1)[0])
    out = Path(args.out)
    header = ",".join(f"x{i}" for i in range(truth.dim))
    with open(out, "w", newline="") as fh:
        fh.write(header + "\n")
        for row in data:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    truth_file = Path(args.truth_out) if args.truth_out else _truth_path(out)
    _write_json(truth.to_json(), truth_file)
    print(f"wrote {args.n} samples to {out} and ground truth to {truth_file}")
    return 0


def cmd_estimate(args) -> int:
    data_path = Path(args.data)
    data = np.loadtxt(data_path, delimiter=",", skiprows=1, ndmin=2)
    truth = None
    truth_file = Path(args.truth) if args.truth else _truth_path(data_path)
    if truth_file.exists():
        truth = IcaGroundTruth.from_json(json.loads(truth_file.read_text()))
    alpha = args.alpha if args.alpha is not None else (truth.alpha if truth else 1.0)
    n_d, dim = data.shape
    n_n = max(1, int(round(n_d / args.gamma)))
    _, noise_ss, init_ss = np.random.SeedSequence(args.seed).spawn(3)

    model = IcaModel(dim, alpha)
    if args.noise == "gengauss-truth":
        if truth is None:
            raise SystemExit("--noise gengauss-truth needs a ground-truth file")
        aux = theory_aux(truth, "gengauss-truth")
    else:
        aux = fit_gaussian(data)
    noise = aux.sample(n_n, noise_ss)
    problem = EstimationProblem.build(model, args.kind, data, noise, aux)

    rng = np.random.default_rng(init_ss)
    if truth is not None:
        theta0 = truth.theta_star + args.init_scale * rng.standard_normal(model.dim_theta)
    else:
        # whitening start: rows of B0 decorrelate the data
        B0 = np.linalg.inv(np.linalg.cholesky(np.cov(data.T, bias=True).reshape(dim, dim)))
        theta0 = pack_theta(B0, ica_true_c(B0, alpha))
    cfg = OptimizerConfig(max_iters=args.max_iters)
    theta_hat, trace = maximize(problem, theta0, cfg)
    result = {
        "kind": str(problem.kind),
        "alpha": alpha,
        "dim": dim,
        "N_d": n_d,
        "N_n": n_n,
        "gamma": n_d / n_n,
        "seed": args.seed,
        "theta_hat": theta_hat.tolist(),
        "B_hat": theta_hat[:-1].reshape(dim, dim).tolist(),
        "c_hat": float(theta_hat[-1]),
        "status": str(trace.status),
        "iterations": trace.iterations,
        "objective": trace.objective[-1],
        "noise": aux.to_json(),
    }
    if truth is not None:
        err = theta_hat - truth.theta_star
        result.update(theta_star=truth.theta_star.tolist(), c_star=truth.c_star, sq_error=float(err @ err))
    _write_json(result, args.out)
    if args.trace_out:
        trace.to_csv(args.trace_out)
    return 0


def _truth_for(args) -> IcaGroundTruth:
    return make_ground_truth(args.dim, args.alpha, args.truth_seed)


def cmd_predict(args) -> int:
    truth = _truth_for(args)
    aux = theory_aux(truth, args.noise)
    report = asymptotic_report(truth.model, truth.theta_star, aux, args.kind, gamma=args.gamma, n_mc=args.mc,
                               seed=args.seed, divergence_mc=args.divergence_mc)
    out = report.to_json()
    out.update(ground_truth=truth.to_json(), noise=aux.to_json(), predicted_mse_per_Nd=out["trace_sigma"])
    _write_json(out, args.out)
    return 0


def cmd_gamma_opt(args) -> int:
    truth = _truth_for(args)
    aux = theory_aux(truth, args.noise)
    report = asymptotic_report(truth.model, truth.theta_star, aux, args.kind, n_mc=args.mc, seed=args.seed,
                               divergence_mc=args.divergence_mc)
    if report.gamma_hat is None:
        print("nan (asymptotic covariance diverges for this kind)")
        return 1
    print(repr(report.gamma_hat))
    return 0


def _base_config(args) -> TrialConfig:
    return TrialConfig(alpha=args.alpha, dim=args.dim, truth_seed=args.truth_seed, noise_policy=args.noise,
                       init_scale=args.init_scale, optimizer=OptimizerConfig(max_iters=args.max_iters))


def cmd_sweep_n(args) -> int:
    res = sweep_sample_size(_base_config(args), _ints(args.ns), _kinds(args.kinds), trials=args.trials,
                            root_seed=args.seed, theory_mc=args.mc, divergence_mc=args.divergence_mc,
                            workers=args.workers)
    write_results(res, args.out)
    print(f"wrote {len(res.rows)} rows to {args.out}")
    return 0


def cmd_sweep_gamma(args) -> int:
    res = sweep_gamma(_base_config(args), args.n_tot, _floats(args.gammas), _kinds(args.kinds), trials=args.trials,
                      root_seed=args.seed, theory_mc=args.mc, divergence_mc=args.divergence_mc,
                      workers=args.workers)
    write_results(res, args.out)
    for kind, info in res.metadata["theory"].items():
        print(f"{kind}: gamma_hat={info['gamma_hat']} diverged={info['diverged']}")
    print(f"wrote {len(res.rows)} rows to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="unnormest", description="Fit unnormalized models by contrasting data with noise, and predict their accuracy.", formatter_class=fmt)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", dest="global_config", default=None, metavar="FILE",
                        help="JSON file whose keys override the subcommand's flags")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text, formatter_class=fmt)
        p.add_argument("--config", metavar="FILE", help="JSON file whose keys override the flags")
        p.set_defaults(func=func)
        return p

    def model_flags(p, mc_default=1_000_000):
        p.add_argument("--alpha", type=float, default=1.0, help="generalized-Gaussian shape of the sources")
        p.add_argument("--dim", type=int, default=2, help="data dimension")
        p.add_argument("--truth-seed", type=int, default=0, help="seed of the random mixing matrix")
        p.add_argument("--noise", choices=NOISE_POLICIES, default="fit-gaussian", help="noise distribution")
        p.add_argument("--mc", type=int, default=mc_default, help="Monte-Carlo samples for theory integrals")
        p.add_argument("--divergence-mc", type=int, default=20_000, help="base sample size of the divergence test")
        p.add_argument("--seed", type=int, default=0, help="root seed")

    p = add("verify", cmd_verify, "run the fast invariant checks; exit status 1 on failure")
    p.add_argument("--mc", type=int, default=100_000, help="Monte-Carlo samples for the covariance check")

    p = add("gen-data", cmd_gen_data, "sample ICA data and write it as CSV with a ground-truth JSON")
    p.add_argument("--alpha", type=float, default=1.0, help="generalized-Gaussian shape of the sources")
    p.add_argument("--dim", type=int, default=2, help="data dimension")
    p.add_argument("--n", type=int, default=1000, help="number of samples")
    p.add_argument("--seed", type=int, default=0, help="root seed")
    p.add_argument("--truth-seed", type=int, default=None, help="defaults to --seed")
    p.add_argument("--out", default="data.csv", help="output CSV")
    p.add_argument("--truth-out", default=None, help="defaults to <out stem>.truth.json")

    p = add("estimate", cmd_estimate, "fit the ICA model to a data CSV")
    p.add_argument("--kind", choices=KIND_TOKENS, default="nc", help="nonlinearity pair")
    p.add_argument("--data", default="data.csv", help="input CSV with a header row")
    p.add_argument("--truth", default=None, help="ground-truth JSON; defaults to <data stem>.truth.json if present")
    p.add_argument("--alpha", type=float, default=None, help="defaults to the ground truth's alpha, else 1")
    p.add_argument("--gamma", type=float, default=1.0, help="ratio N_d / N_n")
    p.add_argument("--noise", choices=NOISE_POLICIES, default="fit-gaussian", help="noise distribution")
    p.add_argument("--init-scale", type=float, default=0.1, help="std of the start perturbation around the truth")
    p.add_argument("--max-iters", type=int, default=500, help="optimizer iteration cap")
    p.add_argument("--seed", type=int, default=0, help="root seed")
    p.add_argument("--out", default="-", help="output JSON ('-' for stdout)")
    p.add_argument("--trace-out", default=None, help="optional optimizer trace CSV")

    p = add("predict", cmd_predict, "asymptotic covariance report for one nonlinearity")
    p.add_argument("--kind", choices=KIND_TOKENS, default="nc", help="nonlinearity pair")
    p.add_argument("--gamma", type=float, default=1.0, help="ratio N_d / N_n")
    model_flags(p)
    p.add_argument("--out", default="-", help="output JSON ('-' for stdout)")

    p = add("gamma-opt", cmd_gamma_opt, "print the optimal ratio N_d / N_n")
    p.add_argument("--kind", choices=KIND_TOKENS, default="nc", help="nonlinearity pair")
    model_flags(p)

    for name, func, text in (
        ("sweep-n", cmd_sweep_n, "MSE against sample size with N_n = N_d"),
        ("sweep-gamma", cmd_sweep_gamma, "MSE against gamma at a fixed total sample budget"),
    ):
        p = add(name, func, text)
        p.add_argument("--kinds", default="nc,invis,invpo,is,po", help="comma-separated nonlinearities")
        p.add_argument("--trials", type=int, default=20, help="trials per cell")
        p.add_argument("--init-scale", type=float, default=0.1, help="std of the start perturbation around the truth")
        p.add_argument("--max-iters", type=int, default=500, help="optimizer iteration cap")
        p.add_argument("--workers", type=int, default=1, help="worker processes")
        p.add_argument("--out", default="results.csv", help="output CSV; metadata goes to the sibling .json")
        model_flags(p)
        if name == "sweep-n":
            p.add_argument("--ns", default="500,2000,8000", help="comma-separated N_d values")
        else:
            p.add_argument("--n-tot", type=int, default=8000, help="total budget N_d + N_n")
            p.add_argument("--gammas", default="0.125,0.25,0.5,1,2,4,8", help="comma-separated ratios N_d / N_n")
    return parser


def _apply_config(parser, args):
    path = args.config or args.global_config
    if not path:
        return args
    overrides = json.loads(Path(path).read_text())
    known = vars(args)
    for key, value in overrides.items():
        dest = key.replace("-", "_")
        if dest not in known or dest in ("func", "command", "config", "global_config"):
            parser.error(f"unknown key {key!r} in {path}")
        setattr(args, dest, value)
    return args


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args = _apply_config(parser, args)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
