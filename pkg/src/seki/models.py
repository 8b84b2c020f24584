"""Linear forward models, Tikhonov augmentation, and benchmark operators.

Models are immutable after construction; the weighted normal matrix
S = A^T Gamma^-1 A (plus C0^-1 in the augmented case) and the shift
b = A^T Gamma^-1 y are precomputed so solver steps cost O(d^2) instead
of touching the K-dimensional data space every iteration.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np


@dataclass
class SpectralBounds:
    """Extreme eigenvalues of S; mu > 0 certifies strong convexity."""

    mu: float
    L: float


def _check_spd(m: np.ndarray, name: str) -> None:
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be square, got shape {m.shape}")
    if not np.allclose(m, m.T, rtol=0.0, atol=1e-10 * max(1.0, float(np.abs(m).max()))):
        raise ValueError(f"{name} must be symmetric")
    try:
        np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        raise ValueError(f"{name} must be positive definite") from None


class LinearModel:
    """Forward matrix A (K x d), SPD noise covariance gamma, data y."""

    def __init__(self, A, gamma, y):
        A = np.asarray(A, dtype=float)
        gamma = np.asarray(gamma, dtype=float)
        y = np.asarray(y, dtype=float)
        if A.ndim != 2:
            raise ValueError(f"A must be a matrix, got shape {A.shape}")
        K, d = A.shape
        if gamma.shape != (K, K):
            raise ValueError(f"gamma must be ({K}, {K}), got {gamma.shape}")
        if y.shape != (K,):
            raise ValueError(f"y must have length {K}, got shape {y.shape}")
        _check_spd(gamma, "gamma")
        self.A = A
        self.gamma = gamma
        self.y = y
        diag = np.diag(gamma)
        if np.count_nonzero(gamma - np.diag(diag)) == 0:
            self._gamma_inv_diag = 1.0 / diag
            self._gamma_inv = None
        else:
            self._gamma_inv_diag = None
            self._gamma_inv = np.linalg.inv(gamma)
        ginv_A = self.apply_gamma_inv(A)
        S = A.T @ ginv_A
        self.S = 0.5 * (S + S.T)
        self.b = A.T @ self.apply_gamma_inv(y)
        self._eigs = None

    @property
    def K(self) -> int:
        return self.A.shape[0]

    @property
    def d(self) -> int:
        return self.A.shape[1]

    def apply_gamma_inv(self, v: np.ndarray) -> np.ndarray:
        if self._gamma_inv_diag is not None:
            if v.ndim == 1:
                return self._gamma_inv_diag * v
            return self._gamma_inv_diag[:, None] * v
        return self._gamma_inv @ v

    def forward(self, x: np.ndarray) -> np.ndarray:
        """A x for a single state; use `forward_batch` for (J, d) stacks."""
        return self.A @ x

    def forward_batch(self, X: np.ndarray) -> np.ndarray:
        return X @ self.A.T

    def misfit_value(self, x) -> float:
        """0.5 ||A x - y||^2_Gamma, evaluated through the residual."""
        r = self.A @ np.asarray(x, dtype=float) - self.y
        return 0.5 * float(r @ self.apply_gamma_inv(r))

    def misfit_gradient(self, x) -> np.ndarray:
        """A^T Gamma^-1 (A x - y) = S x - b."""
        return self.S @ np.asarray(x, dtype=float) - self.b

    def misfit_gradient_batch(self, X: np.ndarray) -> np.ndarray:
        return X @ self.S - self.b

    def normal_eigs(self) -> tuple[float, float]:
        if self._eigs is None:
            w = np.linalg.eigvalsh(self.S)
            self._eigs = (float(w[0]), float(w[-1]))
        return self._eigs

    def spectral_bounds(self) -> SpectralBounds:
        mu, L = self.normal_eigs()
        if mu <= 0:
            raise ValueError(
                f"misfit is not strongly convex (lambda_min(S) = {mu:.3e})"
            )
        return SpectralBounds(mu=mu, L=L)

    def descriptor(self) -> str:
        return f"linear(K={self.K}, d={self.d})"


class AugmentedModel(LinearModel):
    """Tikhonov prior folded into the misfit via the stacked system
    [A; I] with block noise covariance diag(gamma, c0) and data [y; 0]."""

    def __init__(self, base: LinearModel, c0):
        c0 = np.asarray(c0, dtype=float)
        if c0.shape != (base.d, base.d):
            raise ValueError(f"c0 must be ({base.d}, {base.d}), got {c0.shape}")
        _check_spd(c0, "c0")
        K, d = base.K, base.d
        A_aug = np.vstack([base.A, np.eye(d)])
        gamma_aug = np.zeros((K + d, K + d))
        gamma_aug[:K, :K] = base.gamma
        gamma_aug[K:, K:] = c0
        y_aug = np.concatenate([base.y, np.zeros(d)])
        super().__init__(A_aug, gamma_aug, y_aug)
        self.base = base
        self.c0 = c0

    def descriptor(self) -> str:
        return f"augmented(K={self.base.K}, d={self.d})"


def build_augmented(base: LinearModel, c0) -> AugmentedModel:
    return AugmentedModel(base, c0)


# ---------------------------------------------------------------------------
# Radon transform
# ---------------------------------------------------------------------------

def _clip_ray(p0u, p0v, du, dv, n):
    """Liang-Barsky clip of the line p0 + t*(du, dv) against [0, n]^2.

    Returns (t_enter, t_exit) or None when the ray misses the square.
    """
    t0, t1 = -np.inf, np.inf
    for p, dd in ((p0u, du), (p0v, dv)):
        if abs(dd) < 1e-14:
            if p < 0.0 or p > n:
                return None
        else:
            ta = (0.0 - p) / dd
            tb = (n - p) / dd
            if ta > tb:
                ta, tb = tb, ta
            t0 = max(t0, ta)
            t1 = min(t1, tb)
    if t0 >= t1:
        return None
    return t0, t1


def build_radon(n: int, angles: int, bins: int) -> np.ndarray:
    """Dense discrete Radon matrix via pixel line-length (Siddon) weighting.

    Rays are parallel per angle, angles uniform over [0, pi), detector
    offsets uniform over the image diagonal. Row (a, b) holds the exact
    intersection lengths of ray b at angle a with each unit pixel of the
    n x n image (row-major vectorization). All entries are nonnegative and
    row sums equal the chord length of the ray through the image square.
    """
    if n < 1 or angles < 1 or bins < 1:
        raise ValueError(f"n, angles, bins must be >= 1, got {(n, angles, bins)}")
    d = n * n
    K = angles * bins
    A = np.zeros((K, d))
    diag = np.sqrt(2.0) * n
    offsets = -0.5 * diag + (np.arange(bins) + 0.5) * (diag / bins)
    center = 0.5 * n
    for a in range(angles):
        theta = np.pi * a / angles
        ct, st = np.cos(theta), np.sin(theta)
        for b, s in enumerate(offsets):
            # ray: (u, v)(t) = center + s*(ct, st) + t*(-st, ct)
            p0u = center + s * ct
            p0v = center + s * st
            clipped = _clip_ray(p0u, p0v, -st, ct, n)
            if clipped is None:
                continue
            t0, t1 = clipped
            ts = [t0, t1]
            if abs(st) >= 1e-14:
                tu = (p0u - np.arange(1, n)) / st
                ts.extend(tu[(tu > t0) & (tu < t1)])
            if abs(ct) >= 1e-14:
                tv = (np.arange(1, n) - p0v) / ct
                ts.extend(tv[(tv > t0) & (tv < t1)])
            ts = np.sort(np.asarray(ts))
            lengths = np.diff(ts)
            tm = 0.5 * (ts[:-1] + ts[1:])
            uu = np.clip((p0u - tm * st).astype(int), 0, n - 1)
            vv = np.clip((p0v + tm * ct).astype(int), 0, n - 1)
            row = a * bins + b
            np.add.at(A[row], vv * n + uu, lengths)
    return A


# ---------------------------------------------------------------------------
# Compressed sensing operators
# ---------------------------------------------------------------------------

def correlation_matrix(d: int, rho: float) -> np.ndarray:
    """Toeplitz column-correlation matrix with entries rho^|i-j|."""
    if not 0.0 <= rho < 1.0:
        raise ValueError(f"rho must be in [0, 1), got {rho}")
    idx = np.arange(d)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def matrix_sqrt_psd(m: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition."""
    w, v = np.linalg.eigh(m)
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.T


def build_correlated_sensing(K: int, d: int, rho: float,
                             rng: np.random.Generator) -> np.ndarray:
    """A = B Sigma^{1/2} with B_ij ~ N(0, 1/K) and Sigma_ij = rho^|i-j|."""
    sigma_half = matrix_sqrt_psd(correlation_matrix(d, rho))
    B = rng.normal(size=(K, d)) / np.sqrt(K)
    return B @ sigma_half


def generate_sparse_truth(d: int, s: int, rng: np.random.Generator) -> np.ndarray:
    """Exactly s nonzero entries with N(0, 1) amplitudes, support uniform."""
    if not 1 <= s <= d:
        raise ValueError(f"sparsity s must satisfy 1 <= s <= d, got s={s}, d={d}")
    x = np.zeros(d)
    support = rng.choice(d, size=s, replace=False)
    x[support] = rng.normal(size=s)
    return x


def observe(model, x_true, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """y = A x_true + eta with eta ~ N(0, sigma^2 I)."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    A = model.A if hasattr(model, "A") else np.asarray(model, dtype=float)
    y = A @ np.asarray(x_true, dtype=float)
    if sigma > 0:
        y = y + sigma * rng.normal(size=y.shape)
    return y


# ---------------------------------------------------------------------------
# Flat binary export (row-major little-endian float64, two int64 dims first)
# ---------------------------------------------------------------------------

def save_matrix(path, m: np.ndarray) -> None:
    m = np.ascontiguousarray(np.atleast_2d(np.asarray(m, dtype=float)))
    with open(path, "wb") as fh:
        fh.write(struct.pack("<qq", m.shape[0], m.shape[1]))
        fh.write(m.astype("<f8").tobytes())


def load_matrix(path) -> np.ndarray:
    with open(path, "rb") as fh:
        rows, cols = struct.unpack("<qq", fh.read(16))
        data = np.frombuffer(fh.read(rows * cols * 8), dtype="<f8")
    return data.reshape(rows, cols).astype(float)


def save_vector(path, v: np.ndarray) -> None:
    save_matrix(path, np.asarray(v, dtype=float).reshape(-1, 1))


def load_vector(path) -> np.ndarray:
    return load_matrix(path).ravel()
