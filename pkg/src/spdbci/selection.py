"""Geometry-aware channel selection.

Learns an orthonormal transform W (channels x m) that makes tangent-space
Euclidean distances between transformed samples track the geodesic
distances on the SPD manifold.  The trace-maximization update alternates
between assembling the coupling matrix L from the double-centered
geodesic Gram matrix and taking the top-m eigenvectors of L.  Channel
scores come from the rows of the retained eigenvector stack.

Also houses the multi-bilinear transform: K parallel orthonormal heads
whose tangent-space outputs are stacked along a new leading axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceFailure, DimensionMismatch, MissingForwardCache
from .layers import random_stiefel, stiefel_project, stiefel_retract
from .spd import airm_distance, double_center, spd_log, sym


def geodesic_matrix(samples: np.ndarray) -> np.ndarray:
    """Pairwise AIRM distance matrix of a stack of SPD matrices."""
    samples = np.asarray(samples, dtype=np.float64)
    n = samples.shape[0]
    if n < 2:
        raise DimensionMismatch("need at least two samples")
    g = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            g[i, j] = g[j, i] = airm_distance(samples[i], samples[j])
    return g


def tangent_distance_matrix(samples: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Pairwise distances ||W^T (log X_i - log X_j) W||_F."""
    logs = spd_log(np.asarray(samples, dtype=np.float64))
    proj = np.einsum("ji,bjk,kl->bil", w, logs, w)
    diff = proj[:, None] - proj[None, :]
    return np.linalg.norm(diff, axis=(-2, -1))


def gamma(dist: np.ndarray) -> np.ndarray:
    """Centered inner-product matrix ``-1/2 H D^2 H`` (entrywise square)."""
    dist = np.asarray(dist, dtype=np.float64)
    return double_center(dist**2)


def assemble_L(log_samples: np.ndarray, gamma_g: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Coupling matrix ``L = -sum_ij (gamma_G)_ij D_ij W W^T D_ij`` with
    ``D_ij = log X_i - log X_j`` (symmetric).

    The leading minus and the ``D_ij ... D_ij`` ordering follow the
    trace-maximization derivation; L is symmetric by construction.
    """
    logs = np.asarray(log_samples, dtype=np.float64)
    n = logs.shape[0]
    if gamma_g.shape != (n, n):
        raise DimensionMismatch("gamma_G size disagrees with sample count")
    p = w @ w.T
    # Expand the pairwise sum: sum_ij c_ij (L_i - L_j) P (L_i - L_j)
    #   = 2 sum_i r_i L_i P L_i - 2 sum_ij c_ij L_i P L_j   (c symmetric)
    # with r_i = sum_j c_ij.
    c = gamma_g
    r = c.sum(axis=1)
    lp = np.einsum("bij,jk->bik", logs, p)
    term1 = np.einsum("b,bij,bjk->ik", r, lp, logs)
    term2 = np.einsum("ab,aij,bjk->ik", c, lp, logs)
    return sym(-(2.0 * term1 - 2.0 * term2))


def assemble_L_loop(log_samples: np.ndarray, gamma_g: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Literal double-loop form of :func:`assemble_L` (reference oracle)."""
    logs = np.asarray(log_samples, dtype=np.float64)
    n, m, _ = logs.shape
    p = w @ w.T
    out = np.zeros((m, m))
    for i in range(n):
        for j in range(n):
            d = logs[i] - logs[j]
            out -= gamma_g[i, j] * (d @ p @ d)
    return sym(out)


def update_W(l_matrix: np.ndarray, m: int) -> np.ndarray:
    """Top-m eigenvectors of a symmetric L; maximizes tr(W^T L W) over
    orthonormal W (Rayleigh quotient)."""
    l_matrix = sym(np.asarray(l_matrix, dtype=np.float64))
    w_eig, u = np.linalg.eigh(l_matrix)
    return u[:, ::-1][:, :m]


@dataclass
class SelectionTransform:
    """Learned orthonormal transform plus the channel subset it implies."""

    W_hat: np.ndarray
    selected_channels: list[int]
    L_matrix: np.ndarray
    iterations_run: int
    objective_trace: list[float]


def score_channels(w: np.ndarray, m: int, rule: str = "row-norm") -> list[int]:
    """Rank channels by participation in the retained eigenvector stack.

    ``row-norm`` scores channel r by the l2 norm of row r of W and keeps
    the m largest; ``argmax`` takes the largest-magnitude entry of each
    eigenvector instead.
    """
    if rule == "row-norm":
        scores = np.linalg.norm(w, axis=1)
        picked = np.argsort(scores)[::-1][:m]
    elif rule == "argmax":
        picked = []
        for col in range(w.shape[1]):
            order = np.argsort(np.abs(w[:, col]))[::-1]
            for idx in order:
                if idx not in picked:
                    picked.append(idx)
                    break
        picked = np.asarray(picked[:m])
    else:
        raise ValueError(f"unknown scoring rule {rule!r}")
    return sorted(int(i) for i in picked)


def fit_selection(
    samples: np.ndarray,
    m: int,
    labels=None,
    max_iters: int = 20,
    tol: float = 1e-6,
    scoring: str = "row-norm",
) -> SelectionTransform:
    """Alternate L-assembly and eigenvector updates until the retained
    subspace stabilizes.

    When ``labels`` are given, samples are first collapsed to one Karcher
    representative per label, so the distance structure reflects
    between-group geometry rather than within-group noise.
    """
    from .layers import karcher_mean  # local import to avoid cycle at module load

    samples = np.asarray(samples, dtype=np.float64)
    n, big_m = samples.shape[0], samples.shape[1]
    if not (1 <= m <= big_m):
        raise DimensionMismatch(f"m={m} must lie in 1..{big_m}")
    if labels is not None:
        labels = np.asarray(labels)
        groups = sorted(set(labels.tolist()))
        samples = np.stack(
            [karcher_mean(samples[labels == g]) for g in groups]
        )
        n = samples.shape[0]
    if n < 2:
        raise DimensionMismatch("need at least two samples")

    logs = spd_log(samples)
    gamma_g = gamma(geodesic_matrix(samples))

    w = np.eye(big_m)[:, :m]
    trace: list[float] = []
    l_matrix = assemble_L(logs, gamma_g, w)
    iterations = 0
    for iterations in range(1, max_iters + 1):
        w_new = update_W(l_matrix, m)
        objective = float(np.trace(w_new.T @ l_matrix @ w_new))
        if trace and objective < trace[-1] - 1e-9 * max(1.0, abs(trace[-1])):
            raise ConvergenceFailure(
                f"objective decreased: {trace[-1]:.12e} -> {objective:.12e}"
            )
        trace.append(objective)
        drift = np.linalg.norm(w_new @ w_new.T - w @ w.T)
        w = w_new
        if drift < tol:
            break
        l_matrix = assemble_L(logs, gamma_g, w)

    return SelectionTransform(
        W_hat=w,
        selected_channels=score_channels(w, m, scoring),
        L_matrix=l_matrix,
        iterations_run=iterations,
        objective_trace=trace,
    )


# ---------------------------------------------------------------------------
# Multi-bilinear transform heads
# ---------------------------------------------------------------------------

@dataclass
class MbtHeads:
    """K orthonormal maps applied in parallel to tangent vectors.

    ``head_k(V) = W_k^T V W_k`` with ``W_k`` of shape (channels, m).  The
    first head carries the fitted selection transform and stays fixed;
    the remaining heads are trained by the downstream loss with Stiefel
    retraction steps.
    """

    weights: list[np.ndarray]
    grads: list[np.ndarray | None] = field(default_factory=list)
    _cache: np.ndarray | None = None

    @property
    def K(self) -> int:
        return len(self.weights)

    @classmethod
    def initialize(cls, w_hat: np.ndarray, k: int, rng: np.random.Generator) -> "MbtHeads":
        big_m, m = w_hat.shape
        weights = [w_hat.copy()]
        weights += [random_stiefel(rng, big_m, m) for _ in range(k - 1)]
        return cls(weights=weights, grads=[None] * k)

    def forward(self, batch: np.ndarray, training: bool = True) -> np.ndarray:
        """(B, M, M) tangent batch -> (B, K, m, m) stacked head outputs."""
        if training:
            self._cache = batch
        outs = [w.T @ batch @ w for w in self.weights]
        return np.stack(outs, axis=1)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        """grad: (B, K, m, m) -> input gradient (B, M, M); head gradients
        are accumulated on ``grads`` (head 0 excluded: it is frozen)."""
        if self._cache is None:
            raise MissingForwardCache("MBT backward before forward")
        v = self._cache
        grad_in = np.zeros_like(v)
        for k, w in enumerate(self.weights):
            g = grad[:, k]
            grad_in += np.einsum("ij,bjk,lk->bil", w, g, w)
            if k > 0:
                gsym = g + np.swapaxes(g, -1, -2)
                self.grads[k] = np.einsum("bij,jk,bkl->il", v, w, gsym)
        return grad_in

    def step(self, lr: float) -> None:
        for k in range(1, self.K):
            if self.grads[k] is None:
                continue
            q = self.weights[k]
            self.weights[k] = stiefel_retract(
                q, -lr * stiefel_project(q, self.grads[k])
            )
            self.grads[k] = None


def mbt_apply(heads: MbtHeads, batch: np.ndarray) -> np.ndarray:
    """Apply every head to a tangent batch and stack along a new axis."""
    return heads.forward(np.asarray(batch, dtype=np.float64), training=False)
