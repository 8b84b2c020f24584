"""Continuous-time checks: covariance decay law, Yosida-regularized flow
integration, Cauchy scaling in the smoothing parameter, and mean
contraction.

The non-smooth mean inclusion is never integrated directly; only its
Yosida regularizations are, which have a Lipschitz right-hand side. The
integrator is classical fixed-step RK4 with states recorded on a uniform
sample grid, so runs are bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ensemble import Ensemble, compute_stats


@dataclass
class FlowState:
    ensemble: Ensemble
    t: float
    dt: float


@dataclass
class CovarianceLaw:
    """Closed-form covariance evolution (C(0)^-1 + 2t S~)^-1."""

    c0_inv: np.ndarray
    s_tilde: np.ndarray

    @classmethod
    def from_initial(cls, ens0: Ensemble, model) -> "CovarianceLaw":
        c0 = compute_stats(ens0).covariance
        eigs = np.linalg.eigvalsh(c0)
        if eigs[0] <= 0:
            raise ValueError(
                "initial covariance is singular (need J - 1 >= d); "
                f"lambda_min = {eigs[0]:.3e}"
            )
        return cls(c0_inv=np.linalg.inv(c0), s_tilde=model.S)

    def closed_form(self, t: float) -> np.ndarray:
        c = np.linalg.inv(self.c0_inv + 2.0 * t * self.s_tilde)
        return 0.5 * (c + c.T)


def stable_dt(ens0: Ensemble, model, tau: float, safety: float = 0.05) -> float:
    """Step size satisfying the explicit-integrator stability bound for
    both stiffness sources: the (1/tau)-Lipschitz Yosida term and the
    L-Lipschitz misfit gradient, each premultiplied by C(0)."""
    lam0 = float(np.linalg.eigvalsh(compute_stats(ens0).covariance)[-1])
    L = model.normal_eigs()[1]
    return safety / (lam0 * (1.0 / tau + L))


def integrate_yosida_flow(ens0: Ensemble, model, reg, tau: float, T: float,
                          dt: float, n_samples: int = 512) -> list[FlowState]:
    """RK4 integration of the regularized particle system

        dx_j/dt = -C(t) grad_Phi(x_j) - C(t) A_tau(mean),

    equivalent to the mean/deviation split with the Yosida map A_tau.
    Returns states on a uniform grid of `n_samples` times over [0, T];
    the requested dt is an upper bound on the internal step, refined so
    every sample time is hit exactly.
    """
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    if dt <= 0 or T <= 0:
        raise ValueError(f"need positive T and dt, got T={T}, dt={dt}")
    if n_samples < 2:
        raise ValueError(f"need at least 2 sample times, got {n_samples}")
    lam0 = float(np.linalg.eigvalsh(compute_stats(ens0).covariance)[-1])
    if dt * (1.0 / tau) * lam0 > 0.1:
        raise ValueError(
            f"dt={dt:g} violates the stability bound for tau={tau:g}; "
            f"need dt <= {0.1 * tau / lam0:g}"
        )

    S, b = model.S, model.b
    J = ens0.J

    def rhs(X):
        mean = X.mean(axis=0)
        dev = X - mean
        W = (X @ S - b) + reg.yosida(mean, tau)
        if J < X.shape[1]:
            return -((W @ dev.T) @ dev) / J
        return -W @ (dev.T @ dev / J)

    sample_times = np.linspace(0.0, T, n_samples)
    X = ens0.particles.copy()
    states = [FlowState(Ensemble(X.copy()), 0.0, dt)]
    for i in range(1, n_samples):
        span = sample_times[i] - sample_times[i - 1]
        n_sub = max(1, int(np.ceil(span / dt - 1e-12)))
        h = span / n_sub
        for _ in range(n_sub):
            k1 = rhs(X)
            k2 = rhs(X + 0.5 * h * k1)
            k3 = rhs(X + 0.5 * h * k2)
            k4 = rhs(X + h * k3)
            X = X + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        states.append(FlowState(Ensemble(X.copy()), float(sample_times[i]), h))
    return states


def covariance_closed_form_check(trajectory: list[FlowState],
                                 law: CovarianceLaw) -> float:
    """Max over sample times of the relative Frobenius error between the
    empirical covariance and the closed form."""
    worst = 0.0
    for state in trajectory:
        c_emp = compute_stats(state.ensemble).covariance
        c_law = law.closed_form(state.t)
        err = np.linalg.norm(c_emp - c_law) / np.linalg.norm(c_law)
        worst = max(worst, float(err))
    return worst


@dataclass
class ScalingFit:
    exponent: float
    taus: np.ndarray
    discrepancies: np.ndarray


def cauchy_scaling_check(ens0: Ensemble, model, reg, tau_list, T: float,
                         n_samples: int = 256, dt_safety: float = 0.05) -> ScalingFit:
    """Fit of log sup_t ||mean_tau(t) - mean_{tau/2}(t)|| against log tau.

    Each tau in the (strictly decreasing, >= 3 entries) list is paired
    with tau/2; both flows use a stability-certified dt. An exponent of
    +inf is returned when all discrepancies vanish (tau-independent flow).
    """
    taus = np.asarray(list(tau_list), dtype=float)
    if taus.size < 3:
        raise ValueError(f"need at least 3 tau values, got {taus.size}")
    if np.any(taus <= 0) or np.any(np.diff(taus) >= 0):
        raise ValueError("tau_list must be strictly decreasing and positive")

    def means(tau, dt):
        traj = integrate_yosida_flow(ens0, model, reg, tau, T, dt, n_samples)
        return np.stack([s.ensemble.particles.mean(axis=0) for s in traj])

    disc = np.empty(taus.size)
    for i, tau in enumerate(taus):
        # a shared dt per pair keeps the pair difference free of
        # integrator-step noise (exactly zero for tau-independent flows)
        dt = stable_dt(ens0, model, tau / 2.0, safety=dt_safety)
        diff = means(tau, dt) - means(tau / 2.0, dt)
        disc[i] = float(np.max(np.linalg.norm(diff, axis=1)))
    if np.all(disc < 1e-14):
        return ScalingFit(exponent=np.inf, taus=taus, discrepancies=disc)
    slope = np.polyfit(np.log(taus), np.log(np.maximum(disc, 1e-300)), 1)[0]
    return ScalingFit(exponent=float(slope), taus=taus, discrepancies=disc)


def mean_contraction_check(ens0: Ensemble, mean_shift, model, reg, tau: float,
                           T: float, n_samples: int = 256,
                           dt_safety: float = 0.05) -> float:
    """Max over sample times of ||mean_x - mean_z||_{C(t)} minus its
    initial value, for two flows whose ensembles share their deviations
    and differ by `mean_shift` in the mean. Nonpositive up to integrator
    error when the contraction estimate holds."""
    shift = np.asarray(mean_shift, dtype=float)
    if shift.shape != (ens0.d,):
        raise ValueError(f"mean_shift must have shape ({ens0.d},), got {shift.shape}")
    stats = compute_stats(ens0)
    if np.linalg.eigvalsh(stats.covariance)[0] <= 0:
        raise ValueError("initial covariance is singular (need J - 1 >= d)")
    ens_z = ens0.shifted(shift)
    dt = stable_dt(ens0, model, tau, safety=dt_safety)
    traj_x = integrate_yosida_flow(ens0, model, reg, tau, T, dt, n_samples)
    traj_z = integrate_yosida_flow(ens_z, model, reg, tau, T, dt, n_samples)

    def dist(state_x, state_z):
        c = compute_stats(state_x.ensemble).covariance
        delta = (state_x.ensemble.particles.mean(axis=0)
                 - state_z.ensemble.particles.mean(axis=0))
        return float(np.sqrt(delta @ np.linalg.solve(c, delta)))

    d0 = dist(traj_x[0], traj_z[0])
    worst = -np.inf
    for sx, sz in zip(traj_x, traj_z):
        worst = max(worst, dist(sx, sz) - d0)
    return worst


def collapse_rate_fit(steps, lam_max) -> float:
    """Least-squares slope of log lambda_max against log(k+1) (or
    log(t+1)) over the tail half of the finite samples. NaN entries
    (untraced iterations) are dropped; at least 100 samples required."""
    steps = np.asarray(steps, dtype=float)
    lam = np.asarray(lam_max, dtype=float)
    mask = np.isfinite(lam) & (lam > 0) & np.isfinite(steps)
    steps, lam = steps[mask], lam[mask]
    if steps.size < 100:
        raise ValueError(f"need at least 100 samples, got {steps.size}")
    half = steps.size // 2
    x = np.log(steps[half:] + 1.0)
    y = np.log(lam[half:])
    return float(np.polyfit(x, y, 1)[0])


def energy_decay_violation(trajectory: list[FlowState], model, reg,
                           tau: float) -> float:
    """Max increase of Phi(mean) + R_tau(mean) between consecutive
    samples; <= ~0 since the flow descends this energy."""
    energies = [
        model.misfit_value(s.ensemble.particles.mean(axis=0))
        + reg.moreau_envelope(s.ensemble.particles.mean(axis=0), tau)
        for s in trajectory
    ]
    return float(np.max(np.diff(energies))) if len(energies) > 1 else 0.0


def moreau_gap_along_flow(trajectory: list[FlowState], reg, tau: float) -> float:
    """Max over samples of R_tau(mean) - R(mean); <= 0 by definition of
    the envelope."""
    worst = -np.inf
    for s in trajectory:
        mean = s.ensemble.particles.mean(axis=0)
        worst = max(worst, reg.moreau_envelope(mean, tau) - reg.value(mean))
    return float(worst)
