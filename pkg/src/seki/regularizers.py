"""Convex regularization functionals.

Each regularizer exposes a value, a deterministic subgradient selection,
the proximal map prox_{tau R}, and the derived Moreau envelope / Yosida
map. Selections at non-differentiable points follow a fixed sign-based
rule (0 on ties) so that solver runs are reproducible.
"""

from __future__ import annotations

import numpy as np


def _check_tau(tau: float) -> float:
    tau = float(tau)
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    return tau


class Regularizer:
    """Base class; subclasses implement value/subgradient/prox."""

    kind = "abstract"

    def value(self, x) -> float:
        raise NotImplementedError

    def subgradient(self, x) -> np.ndarray:
        raise NotImplementedError

    def prox(self, x, tau: float) -> np.ndarray:
        raise NotImplementedError(f"prox not available for kind '{self.kind}'")

    def moreau_envelope(self, x, tau: float) -> float:
        tau = _check_tau(tau)
        x = np.asarray(x, dtype=float)
        p = self.prox(x, tau)
        return self.value(p) + float(np.sum((x - p) ** 2)) / (2.0 * tau)

    def yosida(self, x, tau: float) -> np.ndarray:
        """(x - prox_{tau R}(x)) / tau; single-valued, (1/tau)-Lipschitz."""
        tau = _check_tau(tau)
        x = np.asarray(x, dtype=float)
        return (x - self.prox(x, tau)) / tau

    def subgradient_bound(self, dim: int) -> float:
        """Uniform bound on ||g|| over all subgradient selections, or inf."""
        raise NotImplementedError

    def describe(self) -> str:
        raise NotImplementedError


class Tikhonov(Regularizer):
    """(weight/2) ||x||^2. weight=0 gives the zero regularizer."""

    kind = "tikhonov"

    def __init__(self, weight: float):
        weight = float(weight)
        if weight < 0:
            raise ValueError(f"weight must be >= 0, got {weight}")
        self.weight = weight

    def value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return 0.5 * self.weight * float(np.sum(x * x))

    def subgradient(self, x) -> np.ndarray:
        return self.weight * np.asarray(x, dtype=float)

    def prox(self, x, tau: float) -> np.ndarray:
        tau = _check_tau(tau)
        return np.asarray(x, dtype=float) / (1.0 + tau * self.weight)

    def subgradient_bound(self, dim: int) -> float:
        return 0.0 if self.weight == 0.0 else np.inf

    def describe(self) -> str:
        return f"tikhonov(weight={self.weight:g})"


class L1(Regularizer):
    """alpha ||x||_1 with the component-wise sign selection (0 at 0)."""

    kind = "l1"

    def __init__(self, alpha: float):
        alpha = float(alpha)
        if alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {alpha}")
        self.alpha = alpha

    def value(self, x) -> float:
        return self.alpha * float(np.sum(np.abs(np.asarray(x, dtype=float))))

    def subgradient(self, x) -> np.ndarray:
        return self.alpha * np.sign(np.asarray(x, dtype=float))

    def prox(self, x, tau: float) -> np.ndarray:
        tau = _check_tau(tau)
        x = np.asarray(x, dtype=float)
        return np.sign(x) * np.maximum(np.abs(x) - tau * self.alpha, 0.0)

    def subgradient_bound(self, dim: int) -> float:
        return self.alpha * np.sqrt(dim)

    def describe(self) -> str:
        return f"l1(alpha={self.alpha:g})"


class TV2D(Regularizer):
    """Anisotropic total variation of a rows x cols image (row-major vector).

    Forward differences are taken only where both indices are in range
    (no wraparound), which keeps the functional convex and >= 0. Ties
    (zero differences) contribute 0 to the subgradient selection.
    """

    kind = "tv2d"

    def __init__(self, alpha: float, rows: int, cols: int,
                 prox_max_iter: int = 200, prox_gap_tol: float = 1e-8):
        alpha = float(alpha)
        if alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {alpha}")
        if rows < 1 or cols < 1:
            raise ValueError(f"invalid image shape ({rows}, {cols})")
        self.alpha = alpha
        self.rows = int(rows)
        self.cols = int(cols)
        self.prox_max_iter = int(prox_max_iter)
        self.prox_gap_tol = float(prox_gap_tol)

    def _image(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.size != self.rows * self.cols:
            raise ValueError(
                f"expected {self.rows * self.cols} entries for a "
                f"{self.rows}x{self.cols} image, got {x.size}"
            )
        return x.reshape(self.rows, self.cols)

    def _diffs(self, img):
        dv = img[1:, :] - img[:-1, :]   # x_{i+1,j} - x_{i,j}
        dh = img[:, 1:] - img[:, :-1]   # x_{i,j+1} - x_{i,j}
        return dv, dh

    @staticmethod
    def _diffs_adjoint(dv, dh, rows, cols):
        # D^T applied to stacked difference fields (negative divergence).
        out = np.zeros((rows, cols))
        out[1:, :] += dv
        out[:-1, :] -= dv
        out[:, 1:] += dh
        out[:, :-1] -= dh
        return out

    def value(self, x) -> float:
        dv, dh = self._diffs(self._image(x))
        return self.alpha * float(np.sum(np.abs(dv)) + np.sum(np.abs(dh)))

    def subgradient(self, x) -> np.ndarray:
        img = self._image(x)
        dv, dh = self._diffs(img)
        g = self._diffs_adjoint(np.sign(dv), np.sign(dh), self.rows, self.cols)
        return self.alpha * g.ravel()

    def prox(self, x, tau: float) -> np.ndarray:
        """Dual projected gradient on max_{|p|<=alpha} -0.5||x - tau D^T p||^2.

        Stops at duality gap <= prox_gap_tol or after prox_max_iter steps;
        the result is x - tau D^T p with certified primal error
        <= sqrt(2 tau gap).
        """
        tau = _check_tau(tau)
        img = self._image(x)
        if self.alpha == 0.0:
            return img.ravel().copy()
        pv = np.zeros((self.rows - 1, self.cols))
        ph = np.zeros((self.rows, self.cols - 1))
        step = 1.0 / (8.0 * tau)
        z = img
        for _ in range(self.prox_max_iter):
            z = img - tau * self._diffs_adjoint(pv, ph, self.rows, self.cols)
            gv, gh = self._diffs(z)
            pv = np.clip(pv + step * gv, -self.alpha, self.alpha)
            ph = np.clip(ph + step * gh, -self.alpha, self.alpha)
            z = img - tau * self._diffs_adjoint(pv, ph, self.rows, self.cols)
            dv, dh = self._diffs(z)
            gap = (self.alpha * (np.sum(np.abs(dv)) + np.sum(np.abs(dh)))
                   - np.sum(pv * dv) - np.sum(ph * dh))
            if gap <= self.prox_gap_tol:
                break
        return z.ravel()

    def prox_error_bound(self, tau: float) -> float:
        """Worst-case distance of the inexact prox to the exact minimizer."""
        return float(np.sqrt(2.0 * tau * self.prox_gap_tol))

    def subgradient_bound(self, dim: int) -> float:
        # Each pixel appears in at most 4 difference terms of weight alpha.
        return 4.0 * self.alpha * np.sqrt(self.rows * self.cols)

    def describe(self) -> str:
        return f"tv2d(alpha={self.alpha:g}, rows={self.rows}, cols={self.cols})"


class Sum(Regularizer):
    """Sum of regularizers; value and subgradient are additive.

    The prox is available only when at most one summand is non-quadratic:
    Tikhonov parts merge into a scaling, prox_{tau(f + w/2||.||^2)}(x)
    = prox_{tau' f}(x / (1 + tau w)) with tau' = tau / (1 + tau w).
    """

    kind = "sum"

    def __init__(self, parts):
        parts = list(parts)
        if not parts:
            raise ValueError("sum regularizer needs at least one part")
        self.parts = parts

    def value(self, x) -> float:
        return sum(p.value(x) for p in self.parts)

    def subgradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        g = np.zeros_like(x)
        for p in self.parts:
            g = g + p.subgradient(x)
        return g

    def prox(self, x, tau: float) -> np.ndarray:
        tau = _check_tau(tau)
        x = np.asarray(x, dtype=float)
        weight = 0.0
        others = []
        for p in self.parts:
            if isinstance(p, Tikhonov):
                weight += p.weight
            else:
                others.append(p)
        if len(others) > 1:
            raise NotImplementedError(
                "prox of a sum with more than one non-quadratic part"
            )
        scaled = x / (1.0 + tau * weight)
        if not others:
            return scaled
        return others[0].prox(scaled, tau / (1.0 + tau * weight))

    def subgradient_bound(self, dim: int) -> float:
        return float(sum(p.subgradient_bound(dim) for p in self.parts))

    def describe(self) -> str:
        return "sum(" + ", ".join(p.describe() for p in self.parts) + ")"


ZERO = Tikhonov(0.0)
