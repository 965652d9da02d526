"""Interior-point solvers for quadratics over a spectral-norm ball.

Both problems below involve a matrix-valued affine map of a parameter
vector k whose coefficient matrices are rank one:

    F(k) = F0 + sum_i k_i * (column p_i of Umat) (row q_i of Sh)^T,

an n x M matrix with n <= M. The feasible set ||F(k)||_2 <= 1 is a slice of
the PSD cone through the Schur complement identity

    ||F||_2 <= 1   <=>   [[I_n, F], [F^T, I_M]] >= 0   <=>   I_n - F F^T >= 0,

so the natural barrier is phi(k) = -log det(I_n - F F^T), an n x n log-det
no matter how wide F is. The rank-one structure collapses every gradient and
Hessian entry to products of a few small Gram matrices, assembled here with
fancy indexing rather than Kronecker products.

Solvers:

- :func:`minimize_quadratic_on_ball`: min 0.5 k'Hk + g'k s.t. ||F(k)||_2 <= 1
  by path-following on t*(quadratic) + phi with damped Newton centering.
- :func:`minimize_norm`: min_k ||F(k)||_2 through the joint epigraph barrier
  -log det(s^2 I - F F^T) - (M - n) log s, used to find strictly feasible
  starting points and to certify infeasibility of the unit ball.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

_RIDGE0 = 1e-13
_ALPHA_MIN = 1e-15


@dataclass
class NormBallGeometry:
    """Affine map k -> F(k) with rank-one coefficients.

    ``F0``: n x M offset. ``Umat``: n x P left factors. ``Sh``: M x M
    symmetric factor whose rows are the right factors; ``Sigma`` must equal
    ``Sh @ Sh``. Variable i contributes k_i * Umat[:, p_idx[i]] Sh[q_idx[i], :].
    """

    F0: np.ndarray
    Umat: np.ndarray
    Sh: np.ndarray
    Sigma: np.ndarray
    p_idx: np.ndarray
    q_idx: np.ndarray

    def __post_init__(self):
        self.p_idx = np.asarray(self.p_idx, dtype=int)
        self.q_idx = np.asarray(self.q_idx, dtype=int)

    @property
    def nvars(self) -> int:
        return self.p_idx.size

    def F(self, k: np.ndarray) -> np.ndarray:
        scatter = np.zeros((self.Umat.shape[1], self.Sh.shape[0]))
        scatter[self.p_idx, self.q_idx] = k
        return self.F0 + self.Umat @ (scatter @ self.Sh)

    def norm(self, k: np.ndarray) -> float:
        return float(np.linalg.norm(self.F(k), 2))


@dataclass
class BallSolveResult:
    k: np.ndarray
    norm: float
    gap: float
    newton_steps: int
    converged: bool


@dataclass
class NormMinResult:
    k: np.ndarray
    min_norm: float
    gap: float
    newton_steps: int
    converged: bool


def _chol_logdet(G: np.ndarray):
    """Cholesky factor and log det of a symmetric matrix, or None if not PD."""
    try:
        c, low = cho_factor(0.5 * (G + G.T), check_finite=False)
    except np.linalg.LinAlgError:
        return None, np.inf
    return (c, low), 2.0 * float(np.sum(np.log(np.diag(c))))


def _ball_barrier_parts(geom: NormBallGeometry, F: np.ndarray):
    """Z = (I - FF')^{-1} plus the Gram matrices behind grad/Hessian entries."""
    n = F.shape[0]
    G = np.eye(n) - F @ F.T
    fac, logdet = _chol_logdet(G)
    if fac is None:
        return None
    Z = cho_solve(fac, np.eye(n), check_finite=False)
    Z = 0.5 * (Z + Z.T)
    return Z, -logdet


def _grad_hess_in_k(geom: NormBallGeometry, F: np.ndarray, Z: np.ndarray):
    """Barrier gradient and Hessian over the k variables for a given Z.

    Valid for both barriers: Z is the inverse of the current slack matrix
    (I - FF' or s^2 I - FF'). Returns (grad, hess, ZF) with
    grad_i = 2 (U' Z F Sh)[p_i, q_i] and
    hess_ij = 2 [ (U'ZU)[p_i,p_j] ((Sigma + Sh F'ZF Sh)[q_i,q_j])
                  + T[p_i,q_j] T[p_j,q_i] ],  T = U' Z F Sh.
    """
    U, Sh = geom.Umat, geom.Sh
    p, q = geom.p_idx, geom.q_idx
    ZF = Z @ F
    T = U.T @ ZF @ Sh
    A1 = U.T @ Z @ U
    W2 = Sh @ (F.T @ ZF) @ Sh
    grad = 2.0 * T[p, q]
    Tpq = T[np.ix_(p, q)]
    hess = 2.0 * (A1[np.ix_(p, p)] * (geom.Sigma + W2)[np.ix_(q, q)] + Tpq * Tpq.T)
    return grad, hess, ZF


def _newton_solve(hess: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Solve hess dk = -grad with an escalating ridge if Cholesky fails."""
    nv = hess.shape[0]
    ridge = _RIDGE0 * max(1.0, float(np.trace(hess)) / max(nv, 1))
    for _ in range(12):
        try:
            fac = cho_factor(hess + ridge * np.eye(nv), check_finite=False)
            return cho_solve(fac, -grad, check_finite=False)
        except np.linalg.LinAlgError:
            ridge *= 100.0
    return np.linalg.lstsq(hess, -grad, rcond=None)[0]


def minimize_quadratic_on_ball(
    H: np.ndarray,
    g: np.ndarray,
    geom: NormBallGeometry,
    k0: np.ndarray,
    gap_tol: float = 1e-11,
    t0: float = 1.0,
    t_mult: float = 30.0,
    t_max: float = 1e16,
    max_newton: int = 400,
) -> BallSolveResult:
    """Path-following solve of min 0.5 k'Hk + g'k s.t. ||F(k)||_2 <= 1.

    ``k0`` must be strictly feasible. The duality gap of the barrier
    subproblem at parameter t is n/t (n = row count of F); iteration stops
    once that falls below ``gap_tol``. Deterministic for fixed inputs.
    """
    k = np.asarray(k0, dtype=float).copy()
    # -log det(I - FF') equals -log det of the full (n+M) Schur LMI, so the
    # central-path gap bound uses nu = n + M.
    nu = geom.F0.shape[0] + geom.F0.shape[1]

    def quad(kv):
        return 0.5 * float(kv @ H @ kv) + float(g @ kv)

    def barrier_value(kv):
        F = geom.F(kv)
        sv = np.linalg.svd(F, compute_uv=False)
        if sv[0] >= 1.0:
            return np.inf, F
        parts = _ball_barrier_parts(geom, F)
        if parts is None:
            return np.inf, F
        return parts[1], F

    b0, _ = barrier_value(k)
    if not np.isfinite(b0):
        raise ValueError("starting point is not strictly inside the norm ball")

    t = float(t0)
    steps = 0
    while True:
        for _ in range(max_newton):
            F = geom.F(k)
            parts = _ball_barrier_parts(geom, F)
            if parts is None:
                raise RuntimeError("iterate left the ball interior")
            Z, phi = parts
            bgrad, bhess, _ = _grad_hess_in_k(geom, F, Z)
            grad = t * (H @ k + g) + bgrad
            hess = t * H + bhess
            dk = _newton_solve(hess, grad)
            dec2 = float(-grad @ dk)
            steps += 1
            if dec2 <= 1e-18 * (1.0 + abs(t * quad(k))):
                break
            # Backtrack into the interior with an Armijo test.
            psi0 = t * quad(k) + phi
            slope = float(grad @ dk)
            alpha = 1.0
            while alpha > _ALPHA_MIN:
                trial = k + alpha * dk
                btrial, _ = barrier_value(trial)
                if np.isfinite(btrial) and t * quad(trial) + btrial <= psi0 + 0.25 * alpha * slope:
                    break
                alpha *= 0.5
            if alpha <= _ALPHA_MIN:
                break
            k = k + alpha * dk
        gap = nu / t
        if gap <= gap_tol or t >= t_max:
            return BallSolveResult(
                k=k, norm=geom.norm(k), gap=gap, newton_steps=steps,
                converged=gap <= gap_tol,
            )
        t = min(t * t_mult, t_max * 1.0000001)


def minimize_norm(
    geom: NormBallGeometry,
    k0: np.ndarray | None = None,
    gap_tol: float = 1e-9,
    t0: float = 1.0,
    t_mult: float = 30.0,
    t_max: float = 1e15,
    max_newton: int = 400,
) -> NormMinResult:
    """Minimize ||F(k)||_2 via the joint epigraph barrier in (k, s).

    Any k0 works (default zero): s starts above the current norm, making the
    pair strictly feasible for s^2 I - F F' > 0. The barrier parameter is
    nu = n + M, so the gap at t is (n + M)/t.
    """
    nv = geom.nvars
    k = np.zeros(nv) if k0 is None else np.asarray(k0, dtype=float).copy()
    n, M = geom.F0.shape
    nu = n + M
    s = max(geom.norm(k) * 1.2, geom.norm(k) + 0.1, 0.1)

    def slack_parts(kv, sv):
        F = geom.F(kv)
        G = sv * sv * np.eye(n) - F @ F.T
        fac, logdet = _chol_logdet(G)
        if fac is None or sv <= 0:
            return None
        Z = cho_solve(fac, np.eye(n), check_finite=False)
        Z = 0.5 * (Z + Z.T)
        phi = -logdet - (M - n) * np.log(sv)
        return F, Z, phi

    t = float(t0)
    steps = 0
    while True:
        for _ in range(max_newton):
            parts = slack_parts(k, s)
            if parts is None:
                raise RuntimeError("iterate left the epigraph interior")
            F, Z, phi = parts
            gk, hkk, ZF = _grad_hess_in_k(geom, F, Z)
            trZ = float(np.trace(Z))
            Z2 = Z @ Z
            T2 = geom.Umat.T @ (Z2 @ F) @ geom.Sh
            gs = t - 2.0 * s * trZ - (M - n) / s
            hks = -4.0 * s * T2[geom.p_idx, geom.q_idx]
            hss = -2.0 * trZ + 4.0 * s * s * float(np.trace(Z2)) + (M - n) / (s * s)
            grad = np.concatenate([gk, [gs]])
            hess = np.zeros((nv + 1, nv + 1))
            hess[:nv, :nv] = hkk
            hess[:nv, nv] = hks
            hess[nv, :nv] = hks
            hess[nv, nv] = hss
            dz = _newton_solve(hess, grad)
            dec2 = float(-grad @ dz)
            steps += 1
            if dec2 <= 1e-16 * (1.0 + t * s):
                break
            psi0 = t * s + phi
            slope = float(grad @ dz)
            alpha = 1.0
            while alpha > _ALPHA_MIN:
                kt = k + alpha * dz[:nv]
                st = s + alpha * dz[nv]
                trial = slack_parts(kt, st) if st > 0 else None
                if trial is not None and t * st + trial[2] <= psi0 + 0.25 * alpha * slope:
                    break
                alpha *= 0.5
            if alpha <= _ALPHA_MIN:
                break
            k = k + alpha * dz[:nv]
            s = s + alpha * dz[nv]
        gap = nu / t
        if gap <= gap_tol or t >= t_max:
            return NormMinResult(
                k=k, min_norm=geom.norm(k), gap=gap, newton_steps=steps,
                converged=gap <= gap_tol,
            )
        t = min(t * t_mult, t_max * 1.0000001)
