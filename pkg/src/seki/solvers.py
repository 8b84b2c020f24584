"""Discrete solvers: the subgradient ensemble Kalman update, the hybrid
covariance-freezing scheme, baseline subgradient descent, and ISTA.

All runs emit a `RunTrace` with identical schema (see trace.py) and are
deterministic given their inputs; no randomness is drawn inside solvers.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .ensemble import Ensemble, compute_stats, cross_covariance
from .errors import ConfigError, NumericalError
from .trace import RunTrace

SEKI_MODES = ("seki_mean_subgradient", "seki_particlewise")
ALL_MODES = SEKI_MODES + ("subgd", "ista")


@dataclass
class StepSchedule:
    """h_k rules: constant h0; polynomial h0/(k+1)^p; hybrid, which is
    constant for k < k_b and scale*h0/(k+1)^p afterwards. The hybrid
    scale is lambda_max(C_{k_b-1}) * k_b, filled in at freeze time by the
    solver rather than configured."""

    kind: str
    h0: float
    p: float = 1.0
    k_b: int = 0
    scale: float | None = None

    def __post_init__(self):
        if self.kind not in ("constant", "polynomial", "hybrid"):
            raise ConfigError(f"unknown schedule kind '{self.kind}'")
        if self.h0 <= 0:
            raise ConfigError(f"h0 must be positive, got {self.h0}")

    @classmethod
    def constant(cls, h0: float) -> "StepSchedule":
        return cls(kind="constant", h0=h0)

    @classmethod
    def polynomial(cls, h0: float, p: float) -> "StepSchedule":
        return cls(kind="polynomial", h0=h0, p=p)

    @classmethod
    def hybrid(cls, h0: float, p: float, k_b: int) -> "StepSchedule":
        return cls(kind="hybrid", h0=h0, p=p, k_b=k_b)

    def step(self, k: int) -> float:
        if self.kind == "constant":
            return self.h0
        if self.kind == "polynomial":
            return self.h0 / (k + 1) ** self.p
        if k < self.k_b:
            return self.h0
        if self.scale is None:
            raise ConfigError("hybrid schedule used past burn-in before freeze")
        return self.scale * self.h0 / (k + 1) ** self.p

    def describe(self) -> str:
        if self.kind == "constant":
            return f"constant(h0={self.h0:.17g})"
        if self.kind == "polynomial":
            return f"polynomial(h0={self.h0:.17g}, p={self.p:g})"
        scale = "unset" if self.scale is None else f"{self.scale:.17g}"
        return (f"hybrid(h0={self.h0:.17g}, p={self.p:g}, "
                f"k_b={self.k_b}, scale={scale})")


@dataclass
class SolverConfig:
    mode: str
    schedule: StepSchedule
    total_iters: int
    burn_in: int = 0
    freeze: bool = False
    seed: int = 0
    trace_stride: int = 10
    timing: str = "off"   # "off" writes 0.0 wall times (byte-reproducible)

    def __post_init__(self):
        if self.mode not in ALL_MODES:
            raise ConfigError(f"unknown solver mode '{self.mode}'")
        if self.total_iters < 0:
            raise ConfigError(f"total_iters must be >= 0, got {self.total_iters}")
        if self.burn_in < 0 or self.burn_in > self.total_iters:
            raise ConfigError(
                f"burn_in must lie in [0, total_iters], got {self.burn_in}"
            )
        if self.trace_stride < 1:
            raise ConfigError(f"trace_stride must be >= 1, got {self.trace_stride}")
        if self.timing not in ("off", "wall"):
            raise ConfigError(f"timing must be 'off' or 'wall', got '{self.timing}'")


@dataclass
class FrozenPreconditioner:
    c_hat: np.ndarray      # (d, d) covariance at the freeze iteration
    c_hat_xA: np.ndarray   # (d, K) empirical state/output cross-covariance


@dataclass
class CertifiedSteps:
    """Step-size bounds certified by the collapse/convergence analysis."""

    mu: float
    L: float
    J: int
    E0: float
    sigma0: float
    lam_c0_max: float
    h_collapse: float = field(init=False)
    h_converge: float = field(init=False)

    def __post_init__(self):
        self.h_collapse = min(
            self.mu / (self.J * self.L ** 2),
            self.J / self.mu,
            1.0 / (2.0 * self.L),
        ) / self.E0
        self.h_converge = self.mu / (4.0 * self.L ** 2 * self.lam_c0_max)

    def sigma_u(self, h: float) -> float:
        return self.J / (h * self.mu)

    def sigma_l(self, h: float) -> float:
        return self.sigma0 / (1.0 + 2.0 * h * self.L * self.sigma0)


def certified_step_sizes(model, ens0: Ensemble) -> CertifiedSteps:
    sb = model.spectral_bounds()
    stats = compute_stats(ens0)
    if stats.spread <= 0:
        raise ValueError("initial ensemble is collapsed (zero spread)")
    eigs = np.linalg.eigvalsh(stats.covariance)
    return CertifiedSteps(
        mu=sb.mu, L=sb.L, J=ens0.J, E0=stats.spread,
        sigma0=float(eigs[0]), lam_c0_max=float(eigs[-1]),
    )


def _cov_apply(dev: np.ndarray, J: int, W: np.ndarray) -> np.ndarray:
    """Rows of W multiplied by C = dev.T @ dev / J.

    Uses the deviation factorization when J < d (O(J^2 d)) and the
    explicit matrix otherwise (O(J d^2))."""
    if J < dev.shape[1]:
        return (W @ dev.T) @ dev / J
    return W @ (dev.T @ dev / J)


def seki_step(ens: Ensemble, model, reg, h: float, particlewise: bool = False,
              _dev: np.ndarray | None = None) -> Ensemble:
    """One explicit update x_j <- x_j - h C grad_Phi(x_j) - h C g.

    The subgradient g is evaluated at the ensemble mean (default) or at
    each particle (`particlewise`, an experimental mode without the
    deviation-decoupling guarantees). h = 0 returns the ensemble unchanged.
    """
    if h < 0:
        raise ValueError(f"step size must be >= 0, got {h}")
    X = ens.particles
    if model.d != ens.d:
        raise ValueError(f"model dimension {model.d} != ensemble dimension {ens.d}")
    dev = X - X.mean(axis=0) if _dev is None else _dev
    W = model.misfit_gradient_batch(X)
    if particlewise:
        G = np.stack([reg.subgradient(X[j]) for j in range(ens.J)])
        W = W + G
    else:
        W = W + reg.subgradient(X.mean(axis=0))
    return Ensemble(X - h * _cov_apply(dev, ens.J, W))


def spread_recursion_check(ens: Ensemble, model, h: float) -> np.ndarray:
    """Predicted deviations e_j - h C S e_j of the next iterate.

    The subgradient term cancels in deviations, so this must match the
    centered output of `seki_step` for any regularizer."""
    if h < 0:
        raise ValueError(f"step size must be >= 0, got {h}")
    X = ens.particles
    dev = X - X.mean(axis=0)
    return dev - h * _cov_apply(dev, ens.J, dev @ model.S)


def _objective(model, reg, x: np.ndarray) -> float:
    return model.misfit_value(x) + reg.value(x)


def _row_metrics(obj: float, x: np.ndarray, x_ref, obj_ref) -> tuple[float, float]:
    if x_ref is None:
        return np.nan, np.nan
    gap = obj - obj_ref
    rel = float(np.linalg.norm(x - x_ref) / np.linalg.norm(x_ref))
    return gap, rel


class _Clock:
    def __init__(self, timing: str):
        self.enabled = timing == "wall"
        self._t0 = time.monotonic()

    def read(self) -> float:
        return time.monotonic() - self._t0 if self.enabled else 0.0


def _base_header(config: SolverConfig, model, reg, x_ref) -> dict:
    return {
        "seed": config.seed,
        "mode": config.mode,
        "h0": "%.17g" % config.schedule.h0,
        "schedule": config.schedule.describe(),
        "total_iters": config.total_iters,
        "burn_in": config.burn_in,
        "freeze": config.freeze,
        "model": model.descriptor(),
        "reg": reg.describe(),
        "reference": "none" if x_ref is None else "supplied",
        "timing": config.timing,
    }


def _check_finite(obj: float, k: int) -> None:
    if not np.isfinite(obj):
        raise NumericalError(f"objective became non-finite at iteration {k}")


def run_hybrid(config: SolverConfig, ens0: Ensemble, model, reg,
               x_ref=None, initial_cov=None) -> RunTrace:
    """Burn-in with the full ensemble update, then freeze the covariance
    and cross-covariance and iterate only the mean.

    With freeze=False (or burn_in == total_iters) this is a pure ensemble
    run. burn_in == 0 requires `initial_cov`, giving a statically
    preconditioned subgradient method from the start.
    """
    if config.mode not in SEKI_MODES:
        raise ConfigError(f"run_hybrid requires a seki mode, got '{config.mode}'")
    particlewise = config.mode == "seki_particlewise"
    K = config.total_iters
    k_b = config.burn_in if config.freeze else K
    if config.freeze and k_b == 0 and initial_cov is None:
        raise ConfigError("burn_in = 0 requires an explicit initial covariance")
    if config.schedule.kind == "hybrid" and config.schedule.k_b != k_b:
        raise ConfigError(
            f"hybrid schedule k_b={config.schedule.k_b} does not match "
            f"the effective burn-in {k_b}"
        )
    if model.d != ens0.d:
        raise ValueError(f"model dimension {model.d} != ensemble dimension {ens0.d}")

    trace = RunTrace(_base_header(config, model, reg, x_ref))
    trace.header["J"] = ens0.J
    obj_ref = None if x_ref is None else _objective(model, reg, x_ref)
    clock = _Clock(config.timing)

    ens = ens0.copy()
    J = ens.J
    fevals = 0
    lam_prev = np.nan  # lambda_max(C_{k-1}), needed for the hybrid scale

    for k in range(k_b):
        X = ens.particles
        mean = X.mean(axis=0)
        dev = X - mean
        spread = float(np.sum(dev * dev) / J)
        need_eigs = (k % config.trace_stride == 0) or (k == k_b - 1)
        if need_eigs:
            eigs = np.linalg.eigvalsh(dev.T @ dev / J)
            lam_min, lam_max = float(eigs[0]), float(eigs[-1])
        else:
            lam_min, lam_max = np.nan, np.nan
        obj = _objective(model, reg, mean)
        _check_finite(obj, k)
        gap, rel = _row_metrics(obj, mean, x_ref, obj_ref)
        trace.append(k=k, objective=obj, objective_gap=gap, rel_error=rel,
                     lambda_min=lam_min, lambda_max=lam_max, spread=spread,
                     forward_evals=fevals, wall_time_s=clock.read())
        if k == k_b - 1:
            lam_prev = lam_max
        ens = seki_step(ens, model, reg, config.schedule.step(k),
                        particlewise=particlewise, _dev=dev)
        fevals += J

    # Freeze: empirical covariance and cross-covariance of the current state.
    stats = compute_stats(ens)
    if config.freeze and k_b > 0:
        frozen = FrozenPreconditioner(
            c_hat=stats.covariance,
            c_hat_xA=cross_covariance(ens, model.forward_batch(ens.particles)).matrix,
        )
    elif config.freeze:
        c_hat = np.asarray(initial_cov, dtype=float)
        frozen = FrozenPreconditioner(c_hat=c_hat, c_hat_xA=c_hat @ model.A.T)
    else:
        frozen = None

    if config.schedule.kind == "hybrid" and config.schedule.scale is None:
        if not np.isfinite(lam_prev):
            raise ConfigError(
                "hybrid schedule needs burn_in >= 1 to set its scale"
            )
        config.schedule.scale = lam_prev * k_b
        trace.header["schedule"] = config.schedule.describe()

    mean = stats.mean
    if frozen is not None and k_b < K:
        eigs = np.linalg.eigvalsh(0.5 * (frozen.c_hat + frozen.c_hat.T))
        lam_min_f, lam_max_f = float(eigs[0]), float(eigs[-1])
        spread_f = float(np.trace(frozen.c_hat))
        P = frozen.c_hat_xA @ model.apply_gamma_inv(model.A)
        q = frozen.c_hat_xA @ model.apply_gamma_inv(model.y)
        for k in range(k_b, K):
            obj = _objective(model, reg, mean)
            _check_finite(obj, k)
            gap, rel = _row_metrics(obj, mean, x_ref, obj_ref)
            trace.append(k=k, objective=obj, objective_gap=gap, rel_error=rel,
                         lambda_min=lam_min_f, lambda_max=lam_max_f,
                         spread=spread_f, forward_evals=fevals,
                         wall_time_s=clock.read())
            h = config.schedule.step(k)
            mean = mean - h * (P @ mean - q) - h * (frozen.c_hat @ reg.subgradient(mean))
            fevals += 1

    obj = _objective(model, reg, mean)
    _check_finite(obj, K)
    gap, rel = _row_metrics(obj, mean, x_ref, obj_ref)
    trace.final = {
        "x": mean, "objective": obj, "objective_gap": gap, "rel_error": rel,
        "forward_evals": fevals, "wall_time_s": clock.read(),
    }
    if frozen is not None:
        trace.final["frozen"] = frozen
    return trace


def _run_mean_method(config: SolverConfig, x0, model, reg, x_ref, update):
    trace = RunTrace(_base_header(config, model, reg, x_ref))
    obj_ref = None if x_ref is None else _objective(model, reg, x_ref)
    clock = _Clock(config.timing)
    x = np.asarray(x0, dtype=float).copy()
    if x.shape != (model.d,):
        raise ValueError(f"x0 must have shape ({model.d},), got {x.shape}")
    prev_obj = None
    for k in range(config.total_iters):
        obj = _objective(model, reg, x)
        _check_finite(obj, k)
        gap, rel = _row_metrics(obj, x, x_ref, obj_ref)
        trace.append(k=k, objective=obj, objective_gap=gap, rel_error=rel,
                     lambda_min=np.nan, lambda_max=np.nan, spread=np.nan,
                     forward_evals=k, wall_time_s=clock.read())
        x, prev_obj = update(k, x, obj, prev_obj)
    obj = _objective(model, reg, x)
    _check_finite(obj, config.total_iters)
    gap, rel = _row_metrics(obj, x, x_ref, obj_ref)
    trace.final = {
        "x": x, "objective": obj, "objective_gap": gap, "rel_error": rel,
        "forward_evals": config.total_iters, "wall_time_s": clock.read(),
    }
    return trace


def run_subgd(config: SolverConfig, x0, model, reg, x_ref=None) -> RunTrace:
    """Baseline subgradient descent x <- x - h_k (grad_Phi(x) + g_x)."""
    if config.mode != "subgd":
        raise ConfigError(f"run_subgd requires mode 'subgd', got '{config.mode}'")

    def update(k, x, obj, prev):
        h = config.schedule.step(k)
        return x - h * (model.misfit_gradient(x) + reg.subgradient(x)), obj

    return _run_mean_method(config, x0, model, reg, x_ref, update)


def run_ista(config: SolverConfig, x0, model, reg, x_ref=None) -> RunTrace:
    """Proximal gradient x <- prox_{hR}(x - h grad_Phi(x)), constant h <= 1/L.

    The composite objective must be non-increasing along the iterates;
    a violation beyond roundoff aborts the run."""
    if config.mode != "ista":
        raise ConfigError(f"run_ista requires mode 'ista', got '{config.mode}'")
    if config.schedule.kind != "constant":
        raise ConfigError("ista requires a constant step schedule")
    L = model.normal_eigs()[1]
    h = config.schedule.h0
    if h > 1.0 / L * (1.0 + 1e-12):
        raise ConfigError(f"ista step {h:g} exceeds 1/L = {1.0 / L:g}")

    def update(k, x, obj, prev):
        if prev is not None and obj > prev + 1e-12 * max(1.0, abs(prev)):
            raise NumericalError(
                f"ista objective increased at iteration {k}: {prev} -> {obj}"
            )
        return reg.prox(x - h * model.misfit_gradient(x), h), obj

    return _run_mean_method(config, x0, model, reg, x_ref, update)


def ergodic_certificate(trace: RunTrace, model, reg, x_star, k0: int) -> np.ndarray:
    """Running averages (1/(K-k0)) sum_{k=k0}^{K-1} of
    2h (Phi_R(x_k) - Phi_R(x*)) + mu^2/(16 L^2) ||x_k - x*||^2,
    one entry per K = k0+1 .. len(trace).

    Requires a constant-step trace recorded with x_ref = x_star."""
    n = len(trace)
    if k0 < 0 or k0 >= n:
        raise ValueError(f"k0 must lie in [0, {n - 1}], got {k0}")
    sb = model.spectral_bounds()
    h = float(trace.header["h0"])
    x_star = np.asarray(x_star, dtype=float)
    obj_star = _objective(model, reg, x_star)
    gaps = trace.column("objective") - obj_star
    dist2 = (trace.column("rel_error") * np.linalg.norm(x_star)) ** 2
    terms = 2.0 * h * gaps + sb.mu ** 2 / (16.0 * sb.L ** 2) * dist2
    tail = terms[k0:]
    return np.cumsum(tail) / np.arange(1, tail.size + 1)
