"""Numerical validation suite: covariance decay, collapse rates, Yosida
scaling, contraction, and the prox/subgradient oracles, each reported as
a pass/fail row. The CLI's `validate` experiment and the acceptance
tests both run these checks.

All instance sizes and horizons are implementation choices; they are
fixed here (with a `scale` knob for quick runs) and seeded, so the suite
is bit-reproducible.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .ensemble import Ensemble, compute_stats, gaussian_ensemble
from .flow import (
    CovarianceLaw, cauchy_scaling_check, collapse_rate_fit,
    covariance_closed_form_check, energy_decay_violation,
    integrate_yosida_flow, mean_contraction_check, moreau_gap_along_flow,
)
from .models import LinearModel, build_augmented
from .regularizers import L1, TV2D, Tikhonov
from .solvers import (
    SolverConfig, StepSchedule, certified_step_sizes, ergodic_certificate,
    run_hybrid, run_ista, seki_step,
)


@dataclass
class CheckResult:
    check_name: str
    metric: str
    value: float
    threshold: float
    passed: bool

    def row(self) -> list:
        return [self.check_name, self.metric, "%.17g" % self.value,
                "%.17g" % self.threshold, "true" if self.passed else "false"]


def write_report(results: list[CheckResult], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["check_name", "metric", "value", "threshold", "pass"])
        for r in results:
            writer.writerow(r.row())


def _random_augmented(rng, d, J, spread=1.0, c0_scale=1.0):
    K = d + int(rng.integers(0, 3))
    A = rng.normal(size=(K, d))
    base = LinearModel(A, np.eye(K), rng.normal(size=K))
    model = build_augmented(base, c0_scale * np.eye(d))
    ens = Ensemble(rng.normal(size=(J, d)) * spread)
    return model, ens


def check_covariance_closed_form(seed=3) -> CheckResult:
    """Integrated empirical covariance against (C(0)^-1 + 2tS)^-1;
    d=3, J=8, T=5, RK4 dt=1e-3."""
    rng = np.random.default_rng(seed)
    d, J = 3, 8
    A = rng.normal(size=(5, d))
    model = build_augmented(LinearModel(A, np.eye(5), rng.normal(size=5)), np.eye(d))
    ens0 = Ensemble(rng.normal(size=(J, d)) * 0.5)
    traj = integrate_yosida_flow(ens0, model, L1(0.5), tau=1.0, T=5.0, dt=1e-3)
    err = covariance_closed_form_check(traj, CovarianceLaw.from_initial(ens0, model))
    return CheckResult("covariance_closed_form", "max_rel_frobenius_error",
                       err, 1e-5, err <= 1e-5)


def check_discrete_sandwich(seed=7, instances=50, iters=1000) -> CheckResult:
    """sigma_l/(k+1) <= lambda_min(C_k), lambda_max(C_k) <= min(sigma_u/(k+1), E0)
    for the certified step size; eigenvalue comparisons use a 1e-12
    relative epsilon for floating point."""
    rng = np.random.default_rng(seed)
    violations = 0
    for _ in range(instances):
        d = int(rng.integers(2, 7))
        J = d + 1 + int(rng.integers(1, 10))
        model, ens = _random_augmented(rng, d, J)
        cert = certified_step_sizes(model, ens)
        h = cert.h_collapse
        su, sl, E0 = cert.sigma_u(h), cert.sigma_l(h), cert.E0
        reg = L1(0.3)
        x = ens
        for k in range(iters + 1):
            w = np.linalg.eigvalsh(compute_stats(x).covariance)
            lo, hi = sl / (k + 1), min(su / (k + 1), E0)
            if w[0] < lo - 1e-12 * max(1.0, lo):
                violations += 1
            if w[-1] > hi + 1e-12 * max(1.0, hi):
                violations += 1
            if k < iters:
                x = seki_step(x, model, reg, h)
    return CheckResult("discrete_covariance_sandwich", "violations",
                       violations, 0.0, violations == 0)


def _collapse_instance(seed=11):
    rng = np.random.default_rng(seed)
    d, J = 3, 8
    A = rng.normal(size=(6, d)) * 0.5
    base = LinearModel(A, np.eye(6), rng.normal(size=6) * 0.1)
    model = build_augmented(base, np.eye(d))
    return model, rng


def check_collapse_rate_discrete(seed=11, iters=2000) -> CheckResult:
    model, rng = _collapse_instance(seed)
    ens = Ensemble(rng.normal(size=(8, 3)) * 0.1)
    cert = certified_step_sizes(model, ens)
    lam = []
    x = ens
    for _ in range(iters + 1):
        lam.append(np.linalg.eigvalsh(compute_stats(x).covariance)[-1])
        x = seki_step(x, model, L1(0.3), cert.h_collapse)
    slope = collapse_rate_fit(np.arange(iters + 1), np.array(lam))
    return CheckResult("collapse_rate_discrete", "loglog_slope",
                       slope, -1.0, -1.15 <= slope <= -0.85)


def check_collapse_rate_flow(seed=11) -> CheckResult:
    model, rng = _collapse_instance(seed)
    ens = Ensemble(rng.normal(size=(8, 3)))
    traj = integrate_yosida_flow(ens, model, L1(0.3), tau=1.0, T=50.0,
                                 dt=1e-3, n_samples=512)
    ts = np.array([s.t for s in traj])
    lam = np.array([np.linalg.eigvalsh(compute_stats(s.ensemble).covariance)[-1]
                    for s in traj])
    slope = collapse_rate_fit(ts, lam)
    return CheckResult("collapse_rate_flow", "loglog_slope",
                       slope, -1.0, -1.15 <= slope <= -0.85)


def _cauchy_instance(seed=5):
    # coordinate 0 crosses zero on its way to the minimizer at (-1, 1)
    base = LinearModel(np.eye(2), np.eye(2), np.array([-3.0, 3.0]))
    model = build_augmented(base, np.eye(2))
    rng = np.random.default_rng(seed)
    ens = Ensemble(np.array([0.2, 0.8]) + rng.normal(size=(4, 2)) * 0.12)
    return model, ens


def check_cauchy_scaling_l1(seed=5) -> CheckResult:
    model, ens = _cauchy_instance(seed)
    fit = cauchy_scaling_check(ens, model, L1(1.0), [1e-1, 1e-2, 1e-3], T=30.0)
    return CheckResult("cauchy_scaling_l1", "fitted_exponent",
                       fit.exponent, 0.4, fit.exponent >= 0.4)


def check_cauchy_scaling_smooth(seed=5) -> CheckResult:
    model, ens = _cauchy_instance(seed)
    fit = cauchy_scaling_check(ens, model, Tikhonov(1.0), [1e-1, 1e-2, 1e-3], T=10.0)
    return CheckResult("cauchy_scaling_smooth", "fitted_exponent",
                       fit.exponent, 0.9, fit.exponent >= 0.9)


def check_mean_contraction(seed=5) -> CheckResult:
    model, ens = _cauchy_instance(seed)
    worst = mean_contraction_check(ens, np.array([2.0, -1.5]), model, L1(1.0),
                                   tau=1e-2, T=3.0)
    return CheckResult("mean_contraction_flow", "max_violation",
                       worst, 1e-6, worst <= 1e-6)


def check_energy_decay(seed=3) -> CheckResult:
    rng = np.random.default_rng(seed)
    d, J = 3, 8
    A = rng.normal(size=(5, d))
    model = build_augmented(LinearModel(A, np.eye(5), rng.normal(size=5)), np.eye(d))
    ens0 = Ensemble(rng.normal(size=(J, d)) * 0.5)
    reg = L1(0.5)
    traj = integrate_yosida_flow(ens0, model, reg, tau=1.0, T=5.0, dt=1e-3)
    e0 = model.misfit_value(traj[0].ensemble.particles.mean(axis=0)) \
        + reg.moreau_envelope(traj[0].ensemble.particles.mean(axis=0), 1.0)
    slack = 1e-8 * (1.0 + abs(e0))
    worst = energy_decay_violation(traj, model, reg, tau=1.0)
    gap = moreau_gap_along_flow(traj, reg, tau=1.0)
    ok = worst <= slack and gap <= 1e-12
    return CheckResult("flow_energy_decay", "max_energy_increase", worst, slack, ok)


def check_ergodic_certificate(seed=13) -> CheckResult:
    """Running average of 2h(gap) + mu^2/(16L^2)||x-x*||^2 scaled by
    (K-k0)/log((K+1)/(k0+1)) stays within 3x of its value at K=1e3."""
    rng = np.random.default_rng(seed)
    d, J = 4, 16
    A = rng.normal(size=(6, d))
    model = build_augmented(LinearModel(A, np.eye(6), rng.normal(size=6)),
                            4.0 * np.eye(d))
    reg = L1(0.4)
    ens0 = Ensemble(rng.normal(size=(J, d)) * 0.5)
    cert = certified_step_sizes(model, ens0)
    L = cert.L
    cfg = SolverConfig(mode="ista", schedule=StepSchedule.constant(0.99 / L),
                       total_iters=3000)
    x_star = run_ista(cfg, np.zeros(d), model, reg).final["x"]
    K = 100000
    cfg = SolverConfig(mode="seki_mean_subgradient",
                       schedule=StepSchedule.constant(cert.h_converge),
                       total_iters=K, burn_in=K, freeze=True, trace_stride=1000)
    trace = run_hybrid(cfg, ens0, model, reg, x_ref=x_star)
    k0 = 100
    avgs = ergodic_certificate(trace, model, reg, x_star, k0)
    Ks = np.arange(k0 + 1, len(trace) + 1)
    scaled = avgs * (Ks - k0) / np.log((Ks + 1) / (k0 + 1))
    ratio = float(np.max(scaled) / scaled[np.searchsorted(Ks, 1000)])
    return CheckResult("ergodic_certificate_bounded", "max_to_1e3_ratio",
                       ratio, 3.0, ratio <= 3.0)


def check_prox_grid_search() -> CheckResult:
    """1-d prox values against a brute-force grid minimizer (step 1e-4)."""
    cases = [
        (L1(1.0), 2.0, 0.5),
        (L1(0.05), -1.3, 2.0),
        (Tikhonov(1.0), 2.0, 1.0),
        (Tikhonov(2.5), -1.7, 0.3),
    ]
    grid = np.arange(-4.0, 4.0, 1e-4)
    worst = 0.0
    for reg, x, tau in cases:
        vals = np.array([reg.value(np.array([z])) for z in grid])
        objective = vals + (grid - x) ** 2 / (2.0 * tau)
        z_star = grid[np.argmin(objective)]
        p = reg.prox(np.array([x]), tau)[0]
        worst = max(worst, abs(p - z_star))
    return CheckResult("prox_grid_search", "max_abs_error", worst, 1e-3, worst <= 1e-3)


def check_envelope_gradient(seed=17) -> CheckResult:
    """grad of the Moreau envelope (finite differences) against the
    Yosida map, l1 instances in d=8."""
    rng = np.random.default_rng(seed)
    reg = L1(0.7)
    worst = 0.0
    eps = 1e-6
    for _ in range(20):
        x = rng.normal(size=8) * 2.0
        tau = float(rng.uniform(0.2, 1.5))
        a = reg.yosida(x, tau)
        fd = np.zeros(8)
        for i in range(8):
            e = np.zeros(8)
            e[i] = eps
            fd[i] = (reg.moreau_envelope(x + e, tau)
                     - reg.moreau_envelope(x - e, tau)) / (2 * eps)
        worst = max(worst, float(np.max(np.abs(fd - a))))
    return CheckResult("moreau_envelope_gradient", "max_abs_error",
                       worst, 1e-5, worst <= 1e-5)


def check_subgradient_inequality(seed=19, pairs=500) -> CheckResult:
    """R(z) >= R(x) + <g, z - x> with slack >= -1e-10 for every kind."""
    rng = np.random.default_rng(seed)
    regs = [L1(0.8), Tikhonov(1.3), TV2D(0.5, 4, 4)]
    worst = 0.0
    for reg in regs:
        d = 16
        for _ in range(pairs):
            x = rng.normal(size=d) * 2.0
            z = rng.normal(size=d) * 2.0
            g = reg.subgradient(x)
            slack = reg.value(z) - reg.value(x) - g @ (z - x)
            worst = min(worst, float(slack))
    return CheckResult("subgradient_inequality", "min_slack",
                       worst, -1e-10, worst >= -1e-10)


ALL_CHECKS = [
    check_covariance_closed_form,
    check_discrete_sandwich,
    check_collapse_rate_discrete,
    check_collapse_rate_flow,
    check_cauchy_scaling_l1,
    check_cauchy_scaling_smooth,
    check_mean_contraction,
    check_energy_decay,
    check_ergodic_certificate,
    check_prox_grid_search,
    check_envelope_gradient,
    check_subgradient_inequality,
]


def run_validation_suite(checks=None) -> list[CheckResult]:
    results = []
    for fn in (checks or ALL_CHECKS):
        results.append(fn())
    return results
