"""Monte Carlo validation of solved strategies.

Trajectories replay the closed-loop system exactly as the players execute
it: both apply their open-loop mean input plus feedback on the shared
auxiliary deviation process (which sees the same noise as the plant but no
control). Randomness uses one counter-based Philox stream per trajectory,
keyed by ``seed XOR trajectory_index``, so a batch is bit-identical no
matter how trajectories are partitioned across workers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import CostWeights, GaussianBoundary, StageSystem

EIG_TOL = 1e-10


@dataclass
class RolloutBatch:
    """Sampled closed-loop trajectories.

    ``states``: (samples, N+1, n); ``controls_u``: (samples, N, m);
    ``controls_v``: (samples, N, l); ``aux``: the control-free deviation
    process the gains act on, (samples, N+1, n).
    """

    states: np.ndarray
    controls_u: np.ndarray
    controls_v: np.ndarray
    aux: np.ndarray
    seed: int


@dataclass
class EmpiricalMoments:
    """Per-step sample moments with standard errors."""

    mean: np.ndarray          # (N+1, n)
    cov: np.ndarray           # (N+1, n, n), unbiased
    stderr_mean: np.ndarray   # (N+1, n)
    stderr_cov: np.ndarray    # (N+1, n, n)
    samples: int
    cost_estimate: float | None = None
    cost_stderr: float | None = None


def _sigma0_factor(Sigma0: np.ndarray) -> np.ndarray:
    """Factor T with T T' = Sigma0; Cholesky, else eigenvalue square root."""
    try:
        return np.linalg.cholesky(Sigma0)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(0.5 * (Sigma0 + Sigma0.T))
        scale = max(1.0, float(vals[-1]) if vals.size else 1.0)
        if vals[0] < -EIG_TOL * scale:
            raise ValueError("Sigma0 is not positive semidefinite") from None
        return vecs * np.sqrt(np.clip(vals, 0.0, None))


def rollout(sys: StageSystem, b: GaussianBoundary, Ubar, Vbar, K, L,
            samples: int, seed: int) -> RolloutBatch:
    """Simulate closed-loop trajectories of both players' strategies.

    ``Ubar``/``Vbar`` are the stacked mean inputs; ``K``/``L`` supply
    per-step feedback blocks (GainProfile or anything with ``.blocks``).
    Each trajectory draws its initial-state and process noise from its own
    Philox stream (key = seed XOR index), in that fixed order.
    """
    if samples < 1:
        raise ValueError("samples must be positive")
    if seed < 0:
        raise ValueError("seed must be a non-negative integer")
    N, n, m, l, r = sys.N, sys.n, sys.m, sys.l, sys.r
    if b.n != n:
        raise ValueError(f"boundary dimension {b.n} does not match system state {n}")
    Ub = np.asarray(Ubar, dtype=float).reshape(N, m)
    Vb = np.asarray(Vbar, dtype=float).reshape(N, l)
    Kblocks = [np.asarray(Bk, dtype=float) for Bk in K.blocks]
    Lblocks = [np.asarray(Bk, dtype=float) for Bk in L.blocks]
    if len(Kblocks) != N or Kblocks[0].shape != (m, n):
        raise ValueError("K blocks do not match the system dimensions")
    if len(Lblocks) != N or Lblocks[0].shape != (l, n):
        raise ValueError("L blocks do not match the system dimensions")

    T0 = _sigma0_factor(b.Sigma0)
    draws = np.empty((samples, n + N * r))
    key = np.uint64(seed)
    for i in range(samples):
        gen = np.random.Generator(np.random.Philox(key=key ^ np.uint64(i)))
        draws[i] = gen.standard_normal(n + N * r)
    Z0 = draws[:, :n]
    W = draws[:, n:].reshape(samples, N, r)

    X = np.empty((samples, N + 1, n))
    Y = np.empty((samples, N + 1, n))
    U = np.empty((samples, N, m))
    V = np.empty((samples, N, l))
    X[:, 0] = b.mu0 + Z0 @ T0.T
    Y[:, 0] = X[:, 0] - b.mu0
    for k in range(N):
        U[:, k] = Ub[k] + Y[:, k] @ Kblocks[k].T
        V[:, k] = Vb[k] + Y[:, k] @ Lblocks[k].T
        noise = W[:, k] @ sys.D[k].T
        X[:, k + 1] = X[:, k] @ sys.A[k].T + U[:, k] @ sys.B[k].T \
            + V[:, k] @ sys.C[k].T + noise
        Y[:, k + 1] = Y[:, k] @ sys.A[k].T + noise
    return RolloutBatch(states=X, controls_u=U, controls_v=V, aux=Y, seed=seed)


def empirical_moments(batch: RolloutBatch, w: CostWeights | None = None) -> EmpiricalMoments:
    """Sample mean/covariance per step, with standard errors.

    Covariance standard errors are distribution-free: the standard deviation
    of the centered products over the batch. With weights given, also
    estimates the running cost sum_k x'Q_k x + u'R_k u - v'S_k v.
    """
    X = batch.states
    S, Np1, n = X.shape
    if S < 2:
        raise ValueError("need at least two samples for moments")
    mean = X.mean(axis=0)
    c = X - mean
    cov = np.einsum("ski,skj->kij", c, c) / (S - 1)
    stderr_mean = np.sqrt(np.einsum("kii->ki", cov) / S)
    stderr_cov = np.empty_like(cov)
    for k in range(Np1):
        P = c[:, k, :, None] * c[:, k, None, :]
        stderr_cov[k] = P.std(axis=0, ddof=1) / np.sqrt(S)

    cost_estimate = cost_stderr = None
    if w is not None:
        N = Np1 - 1
        costs = np.zeros(S)
        for k in range(N):
            costs += np.einsum("si,ij,sj->s", X[:, k], w.Q[k], X[:, k])
            costs += np.einsum("si,ij,sj->s", batch.controls_u[:, k], w.R[k],
                               batch.controls_u[:, k])
            costs -= np.einsum("si,ij,sj->s", batch.controls_v[:, k], w.S[k],
                               batch.controls_v[:, k])
        cost_estimate = float(costs.mean())
        cost_stderr = float(costs.std(ddof=1) / np.sqrt(S))
    return EmpiricalMoments(mean=mean, cov=cov, stderr_mean=stderr_mean,
                            stderr_cov=stderr_cov, samples=S,
                            cost_estimate=cost_estimate, cost_stderr=cost_stderr)


def ellipse_points(mean: np.ndarray, cov: np.ndarray, dims: tuple[int, int] = (0, 1),
                   nsigma: float = 3.0, npoints: int = 100) -> np.ndarray:
    """Boundary of the nsigma ellipse of a 2-D marginal, (npoints, 2).

    The marginal covariance over ``dims`` is eigendecomposed; points trace
    mean + nsigma * V sqrt(diag(vals)) [cos t; sin t].
    """
    mean = np.asarray(mean, dtype=float).reshape(-1)
    cov = np.asarray(cov, dtype=float)
    i, j = dims
    m2 = np.array([mean[i], mean[j]])
    c2 = np.array([[cov[i, i], cov[i, j]], [cov[j, i], cov[j, j]]])
    vals, vecs = np.linalg.eigh(0.5 * (c2 + c2.T))
    if vals[0] < -EIG_TOL * max(1.0, vals[-1]):
        raise ValueError("marginal covariance is not positive semidefinite")
    vals = np.clip(vals, 0.0, None)
    t = np.linspace(0.0, 2.0 * np.pi, npoints, endpoint=True)
    circle = np.stack([np.cos(t), np.sin(t)])
    pts = (vecs @ (np.sqrt(vals)[:, None] * circle)) * nsigma
    return m2 + pts.T
