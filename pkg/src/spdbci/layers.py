"""Differentiable layers on SPD batches: BiMap, ReEig, Riemannian batch
normalization, and LogEig.

All gradients are derived analytically.  Eigenvalue-function backward
passes use the Daleckii-Krein divided-difference form; eigenvalue pairs
closer than 1e-12 fall back to the diagonal limit f'(lambda).  Weights
constrained to the Stiefel manifold are updated by projecting the
Euclidean gradient onto the tangent space and retracting with a QR
factorization, so orthonormality is preserved to round-off.

Batches are arrays of shape (B, n, n); layers cache their forward pass
and raise :class:`MissingForwardCache` if backward is called first.
"""

from __future__ import annotations

import numpy as np

from .errors import (
    KarcherDivergence,
    MissingForwardCache,
    NotPositiveDefinite,
    RankDeficientWeight,
)
from .spd import inv_sqrtm, spd_exp, spd_log, spd_power, sym

DEGENERATE_EIG_TOL = 1e-12


# ---------------------------------------------------------------------------
# Stiefel manifold helpers (matrices with orthonormal columns)
# ---------------------------------------------------------------------------

def stiefel_project(q: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Project a Euclidean gradient ``z`` onto the tangent space of the
    Stiefel manifold at ``q`` (``q^T q = I``)."""
    return z - q @ sym(q.T @ z)


def stiefel_retract(q: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """QR retraction of ``q + delta`` back onto the Stiefel manifold.

    The sign of each R diagonal is fixed so the retraction is a
    deterministic, continuous map.
    """
    qn, r = np.linalg.qr(q + delta)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return qn * signs


def random_stiefel(rng: np.random.Generator, n: int, p: int) -> np.ndarray:
    """Random n x p matrix with orthonormal columns (QR of a Gaussian)."""
    return stiefel_retract(np.zeros((n, p)), rng.standard_normal((n, p)))


# ---------------------------------------------------------------------------
# Eigenvalue-function machinery shared by ReEig / LogEig
# ---------------------------------------------------------------------------

def _eig_fn_forward(batch: np.ndarray, fn) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    w, u = np.linalg.eigh(sym(batch))
    ut = np.swapaxes(u, -1, -2)
    out = (u * fn(w)[..., None, :]) @ ut
    return out, w, u


def _eig_fn_backward(grad: np.ndarray, w: np.ndarray, u: np.ndarray, fn, dfn) -> np.ndarray:
    """Daleckii-Krein backward: grad_X = U (K o (U^T sym(G) U)) U^T with
    K_ij = (f(w_i) - f(w_j)) / (w_i - w_j) and K_ii = f'(w_i)."""
    fw = fn(w)
    diff = w[..., :, None] - w[..., None, :]
    near = np.abs(diff) < DEGENERATE_EIG_TOL
    denom = np.where(near, 1.0, diff)
    k = np.where(near, dfn(w)[..., :, None] * np.ones_like(diff),
                 (fw[..., :, None] - fw[..., None, :]) / denom)
    ut = np.swapaxes(u, -1, -2)
    inner = ut @ sym(grad) @ u
    return u @ (k * inner) @ ut


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------

class BiMapLayer:
    """Bilinear map X -> W X W^T with an optional orthonormal-row constraint."""

    def __init__(self, weight: np.ndarray, enforce_orthonormal: bool = True):
        weight = np.asarray(weight, dtype=np.float64)
        m_out, m_in = weight.shape
        if m_out > m_in:
            raise RankDeficientWeight("BiMap requires m_out <= m_in")
        sv = np.linalg.svd(weight, compute_uv=False)
        if sv[-1] <= 1e-12 * sv[0]:
            raise RankDeficientWeight("BiMap weight is rank deficient")
        self.weight = weight
        self.enforce_orthonormal = enforce_orthonormal
        self.grad_weight: np.ndarray | None = None
        self._cache: np.ndarray | None = None

    @property
    def m_out(self) -> int:
        return self.weight.shape[0]

    @property
    def m_in(self) -> int:
        return self.weight.shape[1]

    def forward(self, batch: np.ndarray, training: bool = True) -> np.ndarray:
        if batch.shape[-1] != self.m_in:
            raise RankDeficientWeight(
                f"batch dim {batch.shape[-1]} != m_in {self.m_in}"
            )
        if training:
            self._cache = batch
        w = self.weight
        return w @ batch @ w.T

    def backward(self, grad: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise MissingForwardCache("BiMap backward before forward")
        x = self._cache
        w = self.weight
        gsym = grad + np.swapaxes(grad, -1, -2)
        # dL/dW = (G + G^T) W X  summed over the batch (X symmetric)
        self.grad_weight = (gsym @ (w @ x)).sum(axis=0)
        return w.T @ grad @ w

    def step(self, lr: float) -> None:
        if self.grad_weight is None:
            return
        if self.enforce_orthonormal:
            q = self.weight.T  # columns orthonormal
            g = self.grad_weight.T
            self.weight = stiefel_retract(q, -lr * stiefel_project(q, g)).T
        else:
            self.weight = self.weight - lr * self.grad_weight
        self.grad_weight = None


class ReEigLayer:
    """Eigenvalue rectification X -> U diag(max(w, eps)) U^T."""

    def __init__(self, epsilon: float = 1e-4):
        if epsilon <= 0:
            raise ValueError("epsilon must be positive")
        self.epsilon = epsilon
        self._cache: tuple[np.ndarray, np.ndarray] | None = None

    def forward(self, batch: np.ndarray, training: bool = True) -> np.ndarray:
        out, w, u = _eig_fn_forward(batch, lambda v: np.maximum(v, self.epsilon))
        if training:
            self._cache = (w, u)
        return out

    def backward(self, grad: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise MissingForwardCache("ReEig backward before forward")
        w, u = self._cache
        eps = self.epsilon
        # subgradient 0 at clamped eigenvalues, matching ReLU at the kink
        return _eig_fn_backward(
            grad, w, u,
            lambda v: np.maximum(v, eps),
            lambda v: (v > eps).astype(np.float64),
        )

    def step(self, lr: float) -> None:  # no parameters
        pass


class LogEigLayer:
    """Matrix logarithm mapping an SPD batch into its tangent space."""

    def __init__(self):
        self._cache: tuple[np.ndarray, np.ndarray] | None = None

    def forward(self, batch: np.ndarray, training: bool = True) -> np.ndarray:
        w, u = np.linalg.eigh(sym(batch))
        if np.any(w[..., 0] <= 0):
            raise NotPositiveDefinite("LogEig input is not positive definite")
        if training:
            self._cache = (w, u)
        return (u * np.log(w)[..., None, :]) @ np.swapaxes(u, -1, -2)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise MissingForwardCache("LogEig backward before forward")
        w, u = self._cache
        return _eig_fn_backward(grad, w, u, np.log, lambda v: 1.0 / v)

    def step(self, lr: float) -> None:
        pass


def karcher_mean(
    batch: np.ndarray,
    iterations: int = 10,
    step: float = 1.0,
    tol: float = 1e-9,
) -> np.ndarray:
    """Karcher (Frechet) mean of an SPD batch under the affine-invariant
    metric, by fixed-point iteration from the arithmetic mean.

    Convergence is declared when the tangent-space gradient norm drops
    below ``tol``; a residual that grows between iterations raises
    :class:`KarcherDivergence`.
    """
    mean = sym(batch.mean(axis=0))
    prev_res = np.inf
    for _ in range(iterations):
        w, u = np.linalg.eigh(mean)
        if w[0] <= 0:
            raise KarcherDivergence("iterate lost positive definiteness")
        sq = np.sqrt(w)
        rm = (u / sq) @ u.T
        logs = spd_log(sym(rm @ batch @ rm))
        tangent = logs.mean(axis=0)
        res = float(np.linalg.norm(tangent))
        if res < tol:
            break
        if res > prev_res * (1.0 + 1e-8):
            raise KarcherDivergence(
                f"Karcher residual increased from {prev_res:.3e} to {res:.3e}"
            )
        prev_res = res
        half = (u * sq) @ u.T
        mean = sym(half @ spd_exp(step * tangent) @ half)
    return mean


def spd_geodesic(a: np.ndarray, b: np.ndarray, t: float) -> np.ndarray:
    """Point at parameter ``t`` on the AIRM geodesic from ``a`` to ``b``."""
    half = spd_power(a, 0.5)
    rm = inv_sqrtm(a)
    inner = spd_power(sym(rm @ b @ rm), t)
    return sym(half @ inner @ half)


class RbnLayer:
    """Riemannian batch normalization: re-center a batch so its Karcher
    mean is the identity.

    Training mode whitens with the batch mean and updates the running
    mean by geodesic interpolation; inference mode whitens with the
    running mean.  The backward pass treats the whitening matrix as a
    statistic (no gradient flows through the mean), analogous to frozen
    batch-norm statistics.
    """

    def __init__(self, dim: int, karcher_iterations: int = 10, momentum: float = 0.9):
        if not (0.0 <= momentum < 1.0):
            raise ValueError("momentum must lie in [0, 1)")
        if karcher_iterations < 1:
            raise ValueError("karcher_iterations must be positive")
        self.dim = dim
        self.karcher_iterations = karcher_iterations
        self.momentum = momentum
        self.running_mean = np.eye(dim)
        self._whitener: np.ndarray | None = None

    def forward(self, batch: np.ndarray, training: bool = True) -> np.ndarray:
        if training:
            mean = karcher_mean(batch, self.karcher_iterations)
            self.running_mean = spd_geodesic(
                self.running_mean, mean, 1.0 - self.momentum
            )
        else:
            mean = self.running_mean
        r = inv_sqrtm(mean)
        self._whitener = r
        return sym(r @ batch @ r)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        if self._whitener is None:
            raise MissingForwardCache("RBN backward before forward")
        r = self._whitener
        return r @ sym(grad) @ r

    def step(self, lr: float) -> None:
        pass
