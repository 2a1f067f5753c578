"""Simulation harness for the ICA experiments.

Every trial derives its random streams from ``(root_seed, cell, trial)``.
The cell index is the position of the sample size (or ratio) in the sweep
list and does not involve the nonlinearity, so all kinds in a sweep see
the same data, noise and starting points. This makes comparisons between
kinds paired.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .asymptotics import SingularMatrixError, divergence_check, estimate_building_blocks
from .family import parse_kind
from .models import IcaGroundTruth
from .noise import GaussianAux, GenGaussAux, fit_gaussian
from .objective import EstimationProblem
from .optimizer import OptimizerConfig, Status, maximize

__all__ = [
    "TrialConfig",
    "TrialResult",
    "SweepRow",
    "SweepResult",
    "make_ground_truth",
    "generate_data",
    "run_trial",
    "theory_aux",
    "sweep_sample_size",
    "sweep_gamma",
    "write_results",
    "read_results",
    "CSV_HEADER",
]

NOISE_POLICIES = ("fit-gaussian", "gengauss-truth")
CSV_HEADER = ["kind", "N_d", "N_n", "gamma", "trials", "median_mse", "mean_mse", "theory_mse", "diverged",
              "failed_trials"]


def make_ground_truth(dim: int, alpha: float, seed: int, max_cond: float = 20.0,
                      max_attempts: int = 100) -> IcaGroundTruth:
    """Random mixing matrix with standard-normal entries and bounded conditioning."""
    if dim < 1:
        raise ValueError("dim must be at least 1")
    rng = np.random.default_rng(seed)
    for _ in range(max_attempts):
        A = rng.standard_normal((dim, dim))
        if np.linalg.cond(A) <= max_cond:
            return IcaGroundTruth.from_mixing(A, alpha, seed=seed)
    raise RuntimeError(f"no mixing matrix with condition number <= {max_cond} in {max_attempts} draws")


def generate_data(truth: IcaGroundTruth, n: int, seed) -> np.ndarray:
    """``n`` rows of ``x = A s``."""
    return truth.sample(n, seed)


def theory_aux(truth: IcaGroundTruth, policy: str):
    """Population version of the noise distribution used in trials."""
    if policy == "fit-gaussian":
        return GaussianAux(np.zeros(truth.dim), truth.A @ truth.A.T)
    if policy == "gengauss-truth":
        return GenGaussAux(truth.alpha, truth.B_star)
    raise ValueError(f"unknown noise policy {policy!r}; expected one of {NOISE_POLICIES}")


@dataclass(frozen=True)
class TrialConfig:
    alpha: float = 1.0
    dim: int = 2
    truth_seed: int = 0
    kind: str = "nc"
    n_data: int = 1000
    n_noise: int = 1000
    noise_policy: str = "fit-gaussian"
    init_scale: float = 0.1
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    seed: tuple = (0,)

    def __post_init__(self):
        if self.n_data < 1 or self.n_noise < 1:
            raise ValueError("n_data and n_noise must be at least 1")
        if self.noise_policy not in NOISE_POLICIES:
            raise ValueError(f"unknown noise policy {self.noise_policy!r}")
        object.__setattr__(self, "kind", str(parse_kind(self.kind)))
        seed = self.seed if isinstance(self.seed, (tuple, list)) else (self.seed,)
        object.__setattr__(self, "seed", tuple(int(s) for s in seed))

    def to_json(self) -> dict:
        out = dataclasses.asdict(self)
        out["seed"] = list(self.seed)
        return out


@dataclass
class TrialResult:
    theta_hat: np.ndarray
    sq_error: float
    c_error: float
    status: Status
    iterations: int
    wall_time: float
    seed: tuple

    @property
    def failed(self) -> bool:
        return self.status is not Status.CONVERGED


def run_trial(config: TrialConfig, truth: IcaGroundTruth | None = None) -> TrialResult:
    """Generate data and noise, fit by CG ascent from near the truth, score the fit."""
    t0 = time.perf_counter()
    if truth is None:
        truth = make_ground_truth(config.dim, config.alpha, config.truth_seed)
    data_ss, noise_ss, init_ss = np.random.SeedSequence(list(config.seed)).spawn(3)
    data = generate_data(truth, config.n_data, data_ss)
    if config.noise_policy == "fit-gaussian":
        aux = fit_gaussian(data)
    else:
        aux = GenGaussAux(truth.alpha, truth.B_star)
    noise = aux.sample(config.n_noise, noise_ss)
    problem = EstimationProblem.build(truth.model, config.kind, data, noise, aux)

    theta_star = truth.theta_star
    rng = np.random.default_rng(init_ss)
    theta0 = theta_star + config.init_scale * rng.standard_normal(theta_star.size)
    try:
        theta_hat, trace = maximize(problem, theta0, config.optimizer)
        status, iterations = trace.status, trace.iterations
    except ValueError:
        # objective not finite at the start: nothing to optimize
        theta_hat, status, iterations = theta0, Status.DIVERGED, 0
    err = theta_hat - theta_star
    return TrialResult(
        theta_hat=theta_hat,
        sq_error=float(err @ err),
        c_error=float(err[-1]),
        status=status,
        iterations=iterations,
        wall_time=time.perf_counter() - t0,
        seed=config.seed,
    )


def _run_all(configs, truth, workers: int):
    if workers <= 1:
        return [run_trial(c, truth) for c in configs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run_trial, configs, [truth] * len(configs)))


@dataclass(frozen=True)
class SweepRow:
    kind: str
    N_d: int
    N_n: int
    gamma: float
    trials: int
    median_mse: float
    mean_mse: float
    theory_mse: float | None
    diverged: bool
    failed_trials: int

    def sort_key(self):
        return (self.kind, self.N_d, self.gamma)


@dataclass
class SweepResult:
    rows: list
    trials: dict = field(default_factory=dict)  # (kind, N_d, N_n) -> list[TrialResult]
    metadata: dict = field(default_factory=dict)

    def row(self, kind, n_data) -> SweepRow:
        kind = str(parse_kind(kind))
        for r in self.rows:
            if r.kind == kind and r.N_d == n_data:
                return r
        raise KeyError((kind, n_data))


def _aggregate(kind, n_d, n_n, results, theory_mse, diverged) -> SweepRow:
    errs = np.array([r.sq_error for r in results])
    return SweepRow(
        kind=kind,
        N_d=n_d,
        N_n=n_n,
        gamma=n_d / n_n,
        trials=len(results),
        median_mse=float(np.median(errs)),
        mean_mse=float(np.mean(errs)),
        theory_mse=theory_mse,
        diverged=diverged,
        failed_trials=sum(r.failed for r in results),
    )


def _theory(truth, policy, kind, n_mc, seed, divergence_mc):
    """Building blocks and divergence flag for one kind (None blocks if flagged)."""
    aux = theory_aux(truth, policy)
    model, theta_star = truth.model, truth.theta_star
    if divergence_check(model, theta_star, aux, kind, divergence_mc, seed + 1):
        return None, True
    return estimate_building_blocks(model, theta_star, aux, kind, n_mc, seed), False


def _base_metadata(base: TrialConfig, truth, root_seed, trials, theory_mc):
    import scipy

    return {
        "package_version": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
        "root_seed": root_seed,
        "trials_per_cell": trials,
        "theory_mc": theory_mc,
        "base_config": base.to_json(),
        "ground_truth": truth.to_json(),
        "c_star": truth.c_star,
        "seed_scheme": "SeedSequence([root_seed, cell_index, trial_index]) -> (data, noise, init)",
    }


def sweep_sample_size(base: TrialConfig, n_list, kinds, trials: int = 20, root_seed: int = 0,
                      theory_mc: int = 1_000_000, divergence_mc: int = 20_000, workers: int = 1) -> SweepResult:
    """Empirical MSE against ``N_d`` with ``N_n = N_d``, plus the theory line."""
    truth = make_ground_truth(base.dim, base.alpha, base.truth_seed)
    kinds = [str(parse_kind(k)) for k in kinds]
    rows, all_trials, theory_meta = [], {}, {}
    for kind in kinds:
        blocks, diverged = _theory(truth, base.noise_policy, kind, theory_mc, root_seed, divergence_mc)
        trace_sigma = None
        if blocks is not None:
            try:
                trace_sigma = float(np.trace(blocks.sigma(1.0)))
            except SingularMatrixError:
                diverged = True
        theory_meta[kind] = {"trace_sigma": trace_sigma, "diverged": diverged}
        for cell, n in enumerate(n_list):
            configs = [
                dataclasses.replace(base, kind=kind, n_data=int(n), n_noise=int(n), seed=(root_seed, cell, t))
                for t in range(trials)
            ]
            results = _run_all(configs, truth, workers)
            all_trials[(kind, int(n), int(n))] = results
            theory = None if trace_sigma is None else trace_sigma / n
            rows.append(_aggregate(kind, int(n), int(n), results, theory, diverged))
    rows.sort(key=SweepRow.sort_key)
    meta = _base_metadata(base, truth, root_seed, trials, theory_mc)
    meta.update(sweep="sample_size", n_list=[int(n) for n in n_list], kinds=kinds, theory=theory_meta)
    return SweepResult(rows, all_trials, meta)


def gamma_split(n_tot: int, gamma: float) -> tuple[int, int]:
    n_d = int(round(n_tot * gamma / (1.0 + gamma)))
    return n_d, n_tot - n_d


def sweep_gamma(base: TrialConfig, n_tot: int, gammas, kinds, trials: int = 20, root_seed: int = 0,
                theory_mc: int = 1_000_000, divergence_mc: int = 20_000, workers: int = 1) -> SweepResult:
    """Empirical MSE against ``gamma = N_d / N_n`` at a fixed budget ``N_d + N_n``.

    Theory per cell is ``tr(Sigma(gamma)) / N_d``, which equals
    ``(1 + 1/gamma) tr(Sigma(gamma)) / N_tot``. The closed-form optimal ratio
    for each kind is stored in the metadata.
    """
    truth = make_ground_truth(base.dim, base.alpha, base.truth_seed)
    kinds = [str(parse_kind(k)) for k in kinds]
    rows, all_trials, theory_meta, skipped = [], {}, {}, []
    for kind in kinds:
        blocks, diverged = _theory(truth, base.noise_policy, kind, theory_mc, root_seed, divergence_mc)
        gamma_hat = None
        if blocks is not None:
            g = blocks.gamma_hat()
            gamma_hat = g if math.isfinite(g) else None
        theory_meta[kind] = {"gamma_hat": gamma_hat, "diverged": diverged}
        for cell, gamma in enumerate(gammas):
            n_d, n_n = gamma_split(n_tot, gamma)
            if n_d < 10 or n_n < 10:
                skipped.append({"kind": kind, "gamma": gamma, "reason": "N_d or N_n below 10"})
                continue
            configs = [
                dataclasses.replace(base, kind=kind, n_data=n_d, n_noise=n_n, seed=(root_seed, cell, t))
                for t in range(trials)
            ]
            results = _run_all(configs, truth, workers)
            all_trials[(kind, n_d, n_n)] = results
            theory = None
            if blocks is not None:
                try:
                    theory = float(np.trace(blocks.sigma(n_d / n_n))) / n_d
                except SingularMatrixError:
                    diverged = True
            rows.append(_aggregate(kind, n_d, n_n, results, theory, diverged))
    rows.sort(key=SweepRow.sort_key)
    meta = _base_metadata(base, truth, root_seed, trials, theory_mc)
    meta.update(sweep="gamma", n_tot=n_tot, gammas=list(gammas), kinds=kinds, theory=theory_meta, skipped=skipped)
    return SweepResult(rows, all_trials, meta)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def results_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in sorted(rows, key=SweepRow.sort_key):
        writer.writerow([_fmt(getattr(r, name)) for name in CSV_HEADER])
    return buf.getvalue()


def write_results(table, path) -> Path:
    """Write sweep rows as CSV and the metadata as a sibling ``.json`` file.

    ``table`` is a :class:`SweepResult` or a plain list of rows.
    """
    path = Path(path)
    rows = table.rows if isinstance(table, SweepResult) else list(table)
    meta = table.metadata if isinstance(table, SweepResult) else {}
    try:
        path.write_text(results_csv(rows), newline="")
        path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True, default=str))
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc
    return path


def read_results(path) -> list:
    """Parse a CSV written by :func:`write_results` back into rows."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        rows = []
        for rec in reader:
            rows.append(
                SweepRow(
                    kind=rec["kind"],
                    N_d=int(rec["N_d"]),
                    N_n=int(rec["N_n"]),
                    gamma=float(rec["gamma"]),
                    trials=int(rec["trials"]),
                    median_mse=float(rec["median_mse"]),
                    mean_mse=float(rec["mean_mse"]),
                    theory_mse=float(rec["theory_mse"]) if rec["theory_mse"] else None,
                    diverged=rec["diverged"] == "true",
                    failed_trials=int(rec["failed_trials"]),
                )
            )
    return rows
