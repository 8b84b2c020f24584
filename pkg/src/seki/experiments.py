"""Config-driven benchmark experiments: computed tomography with total
variation and compressed sensing with an l1 penalty, at a configurable
fraction of the full problem sizes.

A single experiment run builds the (seeded) problem, computes or loads a
cached reference solution, runs each configured solver, and writes one
trace CSV per solver plus a summary CSV. `reproduce_figures` additionally
sweeps the compressed-sensing correlation grid and emits per-figure CSV
series (with rendered PNGs alongside).
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .ensemble import Ensemble, compute_stats, gaussian_ensemble
from .errors import ConfigError
from .models import (
    LinearModel, build_augmented, build_correlated_sensing, build_radon,
    generate_sparse_truth, load_vector, observe, save_vector,
)
from .regularizers import L1, Sum, TV2D, Tikhonov
from .solvers import SolverConfig, StepSchedule, run_hybrid, run_ista, run_subgd
from .trace import RunTrace

DEFAULTS = {
    "experiment": "cs",
    "seed": 42,
    "scale": 1.0,
    "out": "runs",
    "timing": "off",          # "wall" records a monotonic clock; "off" is
    "trace_stride": 10,       # byte-reproducible (wall_time_s = 0)
    "solvers": ["seki_f", "subgd"],
    "cs": {
        "d": 512, "K": 160, "s": 20, "rho": 0.0,
        "rho_grid": [0.0, 0.95, 0.98],
        "sigma": 0.02, "alpha": 0.05, "J": 1500, "p": 0.6,
        "kb_grid": [500, 1000, 4000], "total_iters": 500000,
        "h0": "auto", "budget_matched_subgd": True,
    },
    "ct": {
        "n": 32, "angles": 50, "bins": 32, "sigma": 0.01,
        "alpha1": 0.01, "alpha2": 0.1, "J": 1200, "p": 1.0,
        "kb_grid": [50, 1000, 2000, 5000], "total_iters": 500000,
        "h0": "auto", "misfit": "normalized", "tikhonov_mode": "augmented",
        "budget_matched_subgd": False,
    },
}

KNOWN_SOLVERS = ("seki_f", "seki", "seki_particlewise", "subgd", "ista")


def default_config() -> dict:
    return copy.deepcopy(DEFAULTS)


def merge_config(base: dict, override: dict, prefix="") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        path = f"{prefix}{key}"
        if key not in out:
            raise ConfigError(f"unknown config field '{path}'")
        if isinstance(out[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"field '{path}' must be a mapping")
            out[key] = merge_config(out[key], value, prefix=f"{path}.")
        else:
            out[key] = value
    return out


def set_override(config: dict, dotted_key: str, raw_value: str) -> None:
    """Apply a 'section.key=value' CLI override; values parse as JSON
    where possible and fall back to strings."""
    try:
        value = json.loads(raw_value)
    except json.JSONDecodeError:
        value = raw_value
    node = config
    parts = dotted_key.split(".")
    for part in parts[:-1]:
        if part not in node or not isinstance(node[part], dict):
            raise ConfigError(f"unknown config field '{dotted_key}'")
        node = node[part]
    if parts[-1] not in node:
        raise ConfigError(f"unknown config field '{dotted_key}'")
    node[parts[-1]] = value


def _require(cond: bool, field_name: str, message: str) -> None:
    if not cond:
        raise ConfigError(f"field '{field_name}': {message}")


def validate_config(config: dict) -> None:
    _require(config["experiment"] in ("cs", "ct", "validate"),
             "experiment", f"must be cs, ct or validate, got {config['experiment']!r}")
    _require(isinstance(config["seed"], int) and config["seed"] >= 0,
             "seed", "must be a nonnegative integer")
    _require(0.0 < float(config["scale"]) <= 1.0, "scale", "must lie in (0, 1]")
    _require(config["timing"] in ("off", "wall"), "timing", "must be off or wall")
    _require(int(config["trace_stride"]) >= 1, "trace_stride", "must be >= 1")
    for name in config["solvers"]:
        _require(name in KNOWN_SOLVERS, "solvers", f"unknown solver {name!r}")
    cs, ct = config["cs"], config["ct"]
    _require(0.0 <= float(cs["rho"]) < 1.0, "cs.rho", "must lie in [0, 1)")
    for r in cs["rho_grid"]:
        _require(0.0 <= float(r) < 1.0, "cs.rho_grid", "entries must lie in [0, 1)")
    _require(1 <= int(cs["s"]) <= int(cs["d"]), "cs.s", "must satisfy 1 <= s <= d")
    _require(float(cs["sigma"]) >= 0, "cs.sigma", "must be >= 0")
    _require(float(ct["sigma"]) >= 0, "ct.sigma", "must be >= 0")
    _require(float(ct["alpha1"]) > 0, "ct.alpha1", "must be > 0")
    _require(ct["misfit"] in ("normalized", "noise_weighted"),
             "ct.misfit", "must be normalized or noise_weighted")
    _require(ct["tikhonov_mode"] in ("augmented", "summand"),
             "ct.tikhonov_mode", "must be augmented or summand")
    for section in ("cs", "ct"):
        sec = config[section]
        _require(int(sec["total_iters"]) >= 1, f"{section}.total_iters", "must be >= 1")
        for kb in sec["kb_grid"]:
            _require(0 < int(kb) <= int(sec["total_iters"]), f"{section}.kb_grid",
                     "entries must lie in (0, total_iters]")
        if not isinstance(sec["h0"], (int, float)):
            _require(sec["h0"] in ("auto", "paper-literal"), f"{section}.h0",
                     "must be a number, 'auto' or 'paper-literal'")


def load_config(path=None, overrides=()) -> dict:
    config = default_config()
    if path is not None:
        try:
            with open(path) as fh:
                file_cfg = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from None
        config = merge_config(config, file_cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, _, value = item.partition("=")
        set_override(config, key.strip(), value.strip())
    validate_config(config)
    return config


# ---------------------------------------------------------------------------
# Problem construction
# ---------------------------------------------------------------------------

def shepp_free_phantom(n: int) -> np.ndarray:
    """Deterministic piecewise-constant test image: a disk with a flat
    rectangular inset and a small bright disk."""
    img = np.zeros((n, n))
    yy, xx = np.mgrid[0:n, 0:n]
    c = (n - 1) / 2.0
    img[(yy - c) ** 2 + (xx - c) ** 2 <= (0.42 * n) ** 2] = 1.0
    img[int(0.30 * n):int(0.50 * n), int(0.35 * n):int(0.65 * n)] = 0.5
    img[(yy - 0.62 * n) ** 2 + (xx - 0.38 * n) ** 2 <= (0.10 * n) ** 2] = 1.5
    return img.ravel()


@dataclass
class Problem:
    name: str
    model: LinearModel
    reg: object
    x_true: np.ndarray
    ens0: Ensemble
    base_A: np.ndarray
    alpha1: float
    h0_spec: object
    p: float
    kb_grid: list
    total_iters: int
    budget_matched_subgd: bool
    lam_c0_max: float = field(init=False)

    def __post_init__(self):
        cov = compute_stats(self.ens0).covariance
        self.lam_c0_max = float(np.linalg.eigvalsh(cov)[-1])

    @property
    def x0(self) -> np.ndarray:
        return self.ens0.particles.mean(axis=0)

    def h0_for(self, mode: str) -> float:
        if isinstance(self.h0_spec, (int, float)):
            return float(self.h0_spec)
        L = self.model.normal_eigs()[1]
        if self.h0_spec == "auto":
            if mode.startswith("seki"):
                return 0.9 / (self.lam_c0_max * L)
            if mode == "ista":
                return 0.99 / L
            return 0.9 / L
        # 'paper-literal': 0.9 * lambda_max(A^T A + alpha1 I); diverges for
        # any operator with lambda_max >> 1 and is provided for inspection.
        lam = float(np.linalg.eigvalsh(self.base_A.T @ self.base_A)[-1])
        return 0.9 * (lam + self.alpha1)


def _spawn_rngs(seed: int, n: int = 4):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def _scaled(value, factor, minimum):
    return max(minimum, int(round(value * factor)))


def build_cs_problem(config: dict, rho=None) -> Problem:
    cs = config["cs"]
    scale = float(config["scale"])
    rho = float(cs["rho"] if rho is None else rho)
    d = _scaled(cs["d"], scale, 4)
    K = _scaled(cs["K"], scale, 2)
    s = min(d, _scaled(cs["s"], scale, 1))
    J = max(d + 2, _scaled(cs["J"], scale, 4))
    rng_mat, rng_truth, rng_noise, rng_init = _spawn_rngs(int(config["seed"]))
    A = build_correlated_sensing(K, d, rho, rng_mat)
    x_true = generate_sparse_truth(d, s, rng_truth)
    y = observe(A, x_true, float(cs["sigma"]), rng_noise)
    model = LinearModel(A, np.eye(K), y)
    reg = L1(float(cs["alpha"]))
    ens0 = gaussian_ensemble(J, d, rng_init, scale=0.1)
    return Problem(
        name=f"cs_rho{rho:g}", model=model, reg=reg, x_true=x_true, ens0=ens0,
        base_A=A, alpha1=0.0, h0_spec=cs["h0"], p=float(cs["p"]),
        kb_grid=[min(_scaled(kb, scale, 1), _scaled(cs["total_iters"], scale, 1))
                 for kb in cs["kb_grid"]],
        total_iters=_scaled(cs["total_iters"], scale, 1),
        budget_matched_subgd=bool(cs["budget_matched_subgd"]),
    )


def build_ct_problem(config: dict) -> Problem:
    ct = config["ct"]
    scale = float(config["scale"])
    side_factor = np.sqrt(scale)
    n = _scaled(ct["n"], side_factor, 2)
    angles = _scaled(ct["angles"], side_factor, 1)
    bins = _scaled(ct["bins"], side_factor, 1)
    d = n * n
    J = max(d + 2, _scaled(ct["J"], scale, 4))
    _, _, rng_noise, rng_init = _spawn_rngs(int(config["seed"]))
    A = build_radon(n, angles, bins)
    x_true = shepp_free_phantom(n)
    y = observe(A, x_true, float(ct["sigma"]), rng_noise)
    alpha1, alpha2 = float(ct["alpha1"]), float(ct["alpha2"])
    if ct["misfit"] == "normalized":
        # Unit spectral norm keeps the alpha weights meaningful relative to
        # the misfit; dividing y by the same factor preserves the SNR.
        norm = float(np.sqrt(np.linalg.eigvalsh(A.T @ A)[-1]))
        A_op, y_op, gamma = A / norm, y / norm, np.eye(angles * bins)
    else:
        A_op, y_op = A, y
        gamma = float(ct["sigma"]) ** 2 * np.eye(angles * bins)
    base = LinearModel(A_op, gamma, y_op)
    tv = TV2D(alpha2, n, n)
    if ct["tikhonov_mode"] == "augmented":
        model = build_augmented(base, (1.0 / alpha1) * np.eye(d))
        reg = tv
    else:
        model = base
        reg = Sum([Tikhonov(alpha1), tv])
    ens0 = gaussian_ensemble(J, d, rng_init, scale=0.1)
    return Problem(
        name="ct", model=model, reg=reg, x_true=x_true, ens0=ens0,
        base_A=A_op, alpha1=alpha1, h0_spec=ct["h0"], p=float(ct["p"]),
        kb_grid=[min(_scaled(kb, scale, 1), _scaled(ct["total_iters"], scale, 1))
                 for kb in ct["kb_grid"]],
        total_iters=_scaled(ct["total_iters"], scale, 1),
        budget_matched_subgd=bool(ct["budget_matched_subgd"]),
    )


def build_problem(config: dict) -> Problem:
    if config["experiment"] == "cs":
        return build_cs_problem(config)
    if config["experiment"] == "ct":
        return build_ct_problem(config)
    raise ConfigError(f"experiment '{config['experiment']}' has no problem builder")


# ---------------------------------------------------------------------------
# Reference solutions
# ---------------------------------------------------------------------------

@dataclass
class ReferenceSolution:
    x_star: np.ndarray
    method: str
    diagnostics: dict
    converged: bool
    cache_path: str = ""


def _reference_key(problem: Problem, method: str, params: dict) -> str:
    h = hashlib.sha256()
    h.update(problem.model.A.tobytes())
    h.update(problem.model.gamma.tobytes())
    h.update(problem.model.y.tobytes())
    h.update(problem.reg.describe().encode())
    h.update(method.encode())
    h.update(json.dumps(params, sort_keys=True).encode())
    return h.hexdigest()[:16]


def _ista_fixed_point_residual(problem: Problem, x: np.ndarray, h: float) -> float:
    step = problem.reg.prox(x - h * problem.model.misfit_gradient(x), h)
    return float(np.linalg.norm(x - step))


def compute_reference(problem: Problem, method: str, out_dir,
                      residual_tol: float = 1e-10,
                      max_iters: int = 200000) -> ReferenceSolution:
    """High-accuracy minimizer: ISTA to a fixed-point residual (l1-type
    problems) or a 10x-budget subgradient descent run (TV). Cached on
    disk keyed by a content hash of (model, regularizer, method)."""
    model, reg = problem.model, problem.reg
    if method == "ista":
        h = problem.h0_for("ista")
        params = {"h": h, "tol": residual_tol, "max_iters": max_iters}
    elif method == "subgd":
        h = problem.h0_for("subgd")
        params = {"h0": h, "p": problem.p, "iters": 10 * problem.total_iters}
    else:
        raise ConfigError(f"unknown reference method '{method}'")
    key = _reference_key(problem, method, params)
    cache_path = os.path.join(out_dir, f"reference_{key}.bin")

    if os.path.exists(cache_path):
        x = load_vector(cache_path)
        diag = {"cache": "hit"}
        converged = True
        if method == "ista":
            res = _ista_fixed_point_residual(problem, x, params["h"])
            diag["fixed_point_residual"] = res
            converged = res <= 1e-8 * (1.0 + float(np.linalg.norm(x)))
        return ReferenceSolution(x, method, diag, converged, cache_path)

    if method == "ista":
        x = np.zeros(model.d)
        converged = False
        for it in range(max_iters):
            x_new = reg.prox(x - params["h"] * model.misfit_gradient(x), params["h"])
            moved = float(np.linalg.norm(x_new - x))
            x = x_new
            if moved <= residual_tol:
                converged = True
                break
        res = _ista_fixed_point_residual(problem, x, params["h"])
        diag = {"iterations": it + 1, "fixed_point_residual": res}
        if not converged:
            diag["warning"] = "iteration cap reached before residual tolerance"
    else:
        x = problem.x0.copy()
        iters = params["iters"]
        for k in range(iters):
            hk = params["h0"] / (k + 1) ** problem.p
            x = x - hk * (model.misfit_gradient(x) + reg.subgradient(x))
        diag = {"iterations": iters,
                "final_step_norm": float(hk * np.linalg.norm(
                    model.misfit_gradient(x) + reg.subgradient(x)))}
        converged = True
    os.makedirs(out_dir, exist_ok=True)
    save_vector(cache_path, x)
    return ReferenceSolution(x, method, diag, converged, cache_path)


# ---------------------------------------------------------------------------
# Experiment driver
# ---------------------------------------------------------------------------

def _seki_budget(kb: int, J: int, total: int) -> int:
    return kb * J + (total - kb)


def _solver_runs(problem: Problem, solvers) -> list[dict]:
    """Expand solver names into concrete run descriptions."""
    runs = []
    budgets = [_seki_budget(kb, problem.ens0.J, problem.total_iters)
               for kb in problem.kb_grid]
    for name in solvers:
        if name in ("seki_f", "seki_particlewise"):
            mode = ("seki_mean_subgradient" if name == "seki_f"
                    else "seki_particlewise")
            for kb in problem.kb_grid:
                runs.append({"solver": name, "mode": mode, "kb": kb,
                             "freeze": True, "iters": problem.total_iters})
        elif name == "seki":
            runs.append({"solver": name, "mode": "seki_mean_subgradient",
                         "kb": 0, "freeze": False, "iters": problem.total_iters})
        elif name == "subgd":
            iters = (max(budgets) if problem.budget_matched_subgd and budgets
                     else problem.total_iters)
            runs.append({"solver": name, "mode": "subgd", "kb": 0,
                         "freeze": False, "iters": iters})
        elif name == "ista":
            runs.append({"solver": name, "mode": "ista", "kb": 0,
                         "freeze": False, "iters": problem.total_iters})
    return runs


def execute_run(problem: Problem, run: dict, config: dict, x_ref) -> RunTrace:
    mode = run["mode"]
    h0 = problem.h0_for(mode)
    if mode.startswith("seki") and run["freeze"]:
        schedule = StepSchedule.hybrid(h0, problem.p, run["kb"])
    elif mode == "ista":
        schedule = StepSchedule.constant(h0)
    elif mode.startswith("seki"):
        schedule = StepSchedule.constant(h0)
    else:
        schedule = StepSchedule.polynomial(h0, problem.p)
    solver_config = SolverConfig(
        mode=mode, schedule=schedule, total_iters=run["iters"],
        burn_in=run["kb"], freeze=run["freeze"], seed=int(config["seed"]),
        trace_stride=int(config["trace_stride"]), timing=config["timing"],
    )
    if mode.startswith("seki"):
        trace = run_hybrid(solver_config, problem.ens0, problem.model,
                           problem.reg, x_ref=x_ref)
    elif mode == "subgd":
        trace = run_subgd(solver_config, problem.x0, problem.model,
                          problem.reg, x_ref=x_ref)
    else:
        trace = run_ista(solver_config, problem.x0, problem.model,
                         problem.reg, x_ref=x_ref)
    trace.header["problem"] = problem.name
    trace.header["solver"] = run["solver"]
    return trace


def run_experiment(config: dict, out_dir=None, problem: Problem | None = None) -> dict:
    """Run every configured solver on one experiment instance; writes
    trace_<solver>_<kb>.csv files and summary.csv, returns the artifacts."""
    out_dir = out_dir or config["out"]
    os.makedirs(out_dir, exist_ok=True)
    if problem is None:
        problem = build_problem(config)
    method = "subgd" if config["experiment"] == "ct" else "ista"
    reference = compute_reference(problem, method, out_dir)
    runs = _solver_runs(problem, config["solvers"])
    traces = {}
    summary_rows = []
    for run in runs:
        trace = execute_run(problem, run, config, reference.x_star)
        trace.header["reference"] = (
            f"{reference.method}(converged={reference.converged})")
        name = f"trace_{run['solver']}_{run['kb']}.csv"
        trace.save(os.path.join(out_dir, name))
        traces[(run["solver"], run["kb"])] = trace
        summary_rows.append([
            run["solver"], run["kb"],
            "%.17g" % trace.final["objective"],
            "%.17g" % trace.final["objective_gap"],
            "%.17g" % trace.final["rel_error"],
            trace.final["forward_evals"],
            "%.17g" % trace.final["wall_time_s"],
        ])
    summary_path = os.path.join(out_dir, "summary.csv")
    with open(summary_path, "w") as fh:
        fh.write("solver,k_b,final_objective,final_objective_gap,"
                 "final_rel_error,forward_evals,wall_time_s\n")
        for row in summary_rows:
            fh.write(",".join(str(v) for v in row) + "\n")
    return {"problem": problem, "reference": reference, "traces": traces,
            "summary_path": summary_path, "out_dir": out_dir}


# ---------------------------------------------------------------------------
# Figure data
# ---------------------------------------------------------------------------

FIG_METRICS = ("gap", "rel_error")
_METRIC_COLUMN = {"gap": "objective_gap", "rel_error": "rel_error"}
_AXIS_COLUMN = {"iteration": "k", "forward_evals": "forward_evals",
                "wall_time": "wall_time_s"}


def _downsample(idx_count: int, limit: int = 1500) -> np.ndarray:
    if idx_count <= limit:
        return np.arange(idx_count)
    pts = np.unique(np.geomspace(1, idx_count, limit).astype(int) - 1)
    return pts


def write_figure_csv(path, traces: dict, metric: str, axis: str) -> None:
    with open(path, "w") as fh:
        fh.write("solver,k_b,x,y\n")
        for (solver, kb), trace in sorted(traces.items()):
            xs = trace.column(_AXIS_COLUMN[axis])
            ys = trace.column(_METRIC_COLUMN[metric])
            for i in _downsample(len(xs)):
                fh.write(f"{solver},{kb},{'%.17g' % xs[i]},{'%.17g' % ys[i]}\n")


def reproduce_figures(config: dict, experiments=("cs", "ct"),
                      render: bool = True) -> list[str]:
    """Emit the per-figure CSV series (metric x axis per experiment
    variant) underlying the benchmark plots, rendering a PNG alongside
    each CSV when `render` is set. The compressed-sensing experiment is
    swept over its correlation grid."""
    out_dir = config["out"]
    os.makedirs(out_dir, exist_ok=True)
    axes = ["iteration", "forward_evals"]
    if config["timing"] == "wall":
        axes.append("wall_time")
    variants = []
    if "cs" in experiments:
        for rho in config["cs"]["rho_grid"]:
            cfg = copy.deepcopy(config)
            cfg["experiment"] = "cs"
            cfg["cs"]["rho"] = rho
            variants.append(cfg)
    if "ct" in experiments:
        cfg = copy.deepcopy(config)
        cfg["experiment"] = "ct"
        variants.append(cfg)
    written = []
    for cfg in variants:
        problem = build_problem(cfg)
        sub_dir = os.path.join(out_dir, problem.name)
        result = run_experiment(cfg, out_dir=sub_dir, problem=problem)
        for metric in FIG_METRICS:
            for axis in axes:
                path = os.path.join(out_dir,
                                    f"fig_{problem.name}_{metric}_{axis}.csv")
                write_figure_csv(path, result["traces"], metric, axis)
                written.append(path)
                if render:
                    from .figures import render_series_csv
                    render_series_csv(path, path[:-4] + ".png",
                                      xlabel=axis, ylabel=metric)
                    written.append(path[:-4] + ".png")
    return written
