"""Problem data and lifted dynamics for two-player LQ steering games.

The plant is a discrete-time linear system driven by a minimizing control,
a maximizing control, and white Gaussian noise

    x_{k+1} = A_k x_k + B_k u_k + C_k v_k + D_k w_k,   k = 0..N-1,

with a Gaussian initial state. Stacking the state over all steps 0..N turns
the dynamics into a single affine map

    X = A x_0 + B U + C V + D W

where the lifted ``A`` carries the state-transition products (block row 0 is
the identity) and the lifted input maps are block lower triangular with a
zero leading block row. All solver modules work on this lifted form; this
module builds it and evaluates the game payoff.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import block_diag

# Definiteness margin for weight and covariance eigenvalue checks.
EIG_TOL = 1e-10
# Relative asymmetry allowed in covariance inputs before they are rejected.
SYM_TOL = 1e-12


class DimensionError(ValueError):
    """A stage matrix has an inconsistent shape."""


def _as_float_array(M, name: str) -> np.ndarray:
    arr = np.asarray(M, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def _check_symmetric(M: np.ndarray, name: str) -> np.ndarray:
    """Reject matrices with relative asymmetry above SYM_TOL, then symmetrize."""
    scale = max(1.0, np.abs(M).max()) if M.size else 1.0
    gap = np.abs(M - M.T).max() if M.size else 0.0
    if gap > SYM_TOL * scale:
        raise ValueError(f"{name} is not symmetric (relative asymmetry {gap / scale:.3e})")
    return 0.5 * (M + M.T)


def _min_eig(M: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(M)[0]) if M.size else 0.0


@dataclass
class StageSystem:
    """Per-step matrices of the two-input plant.

    Each field is a length-N list: ``A[k]`` is n x n, ``B[k]`` n x m,
    ``C[k]`` n x l, ``D[k]`` n x r. Time-invariant problems just repeat
    the same matrix (see :meth:`from_lti`).
    """

    A: list
    B: list
    C: list
    D: list

    def __post_init__(self):
        if len(self.A) == 0:
            raise DimensionError("horizon must contain at least one step")
        if not (len(self.A) == len(self.B) == len(self.C) == len(self.D)):
            raise DimensionError(
                "stage lists disagree on horizon length: "
                f"A has {len(self.A)}, B {len(self.B)}, C {len(self.C)}, D {len(self.D)}"
            )
        n = np.asarray(self.A[0]).shape[0]
        for seq, name, cols in (
            (self.A, "A", None),
            (self.B, "B", None),
            (self.C, "C", None),
            (self.D, "D", None),
        ):
            for k, M in enumerate(seq):
                arr = _as_float_array(M, f"{name}[{k}]")
                if arr.ndim != 2:
                    raise DimensionError(f"{name}[{k}] must be a matrix")
                if arr.shape[0] != n:
                    raise DimensionError(
                        f"{name}[{k}] has {arr.shape[0]} rows, expected {n}"
                    )
                seq[k] = arr
        for k, M in enumerate(self.A):
            if M.shape[1] != n:
                raise DimensionError(f"A[{k}] must be square, got {M.shape}")
        for name, seq in (("B", self.B), ("C", self.C), ("D", self.D)):
            w = seq[0].shape[1]
            for k, M in enumerate(seq):
                if M.shape[1] != w:
                    raise DimensionError(
                        f"{name}[{k}] has {M.shape[1]} columns, expected {w}"
                    )

    @classmethod
    def from_lti(cls, A, B, C, D, N: int) -> "StageSystem":
        """Repeat constant matrices over an N-step horizon."""
        if N < 1:
            raise DimensionError("horizon must contain at least one step")
        A = _as_float_array(A, "A")
        B = _as_float_array(B, "B")
        C = _as_float_array(C, "C")
        D = _as_float_array(D, "D")
        return cls([A.copy() for _ in range(N)],
                   [B.copy() for _ in range(N)],
                   [C.copy() for _ in range(N)],
                   [D.copy() for _ in range(N)])

    @property
    def N(self) -> int:
        return len(self.A)

    @property
    def n(self) -> int:
        return self.A[0].shape[0]

    @property
    def m(self) -> int:
        return self.B[0].shape[1]

    @property
    def l(self) -> int:
        return self.C[0].shape[1]

    @property
    def r(self) -> int:
        return self.D[0].shape[1]


@dataclass
class LiftedSystem:
    """Stacked-over-time form of a :class:`StageSystem`.

    ``A`` is (N+1)n x n, ``B`` (N+1)n x Nm, ``C`` (N+1)n x Nl,
    ``D`` (N+1)n x Nr. ``E0`` and ``EN`` select the first and last
    state blocks of a stacked state vector.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    n: int
    m: int
    l: int
    r: int
    N: int
    E0: np.ndarray = field(init=False)
    EN: np.ndarray = field(init=False)

    def __post_init__(self):
        big = (self.N + 1) * self.n
        self.E0 = np.zeros((self.n, big))
        self.E0[:, : self.n] = np.eye(self.n)
        self.EN = np.zeros((self.n, big))
        self.EN[:, big - self.n:] = np.eye(self.n)

    def selector(self, k: int) -> np.ndarray:
        """Matrix picking the step-k state block out of the stacked state."""
        if not 0 <= k <= self.N:
            raise IndexError(f"step {k} outside 0..{self.N}")
        E = np.zeros((self.n, (self.N + 1) * self.n))
        E[:, k * self.n: (k + 1) * self.n] = np.eye(self.n)
        return E

    def _row(self, M: np.ndarray, k: int) -> np.ndarray:
        if not 0 <= k <= self.N:
            raise IndexError(f"step {k} outside 0..{self.N}")
        return M[k * self.n: (k + 1) * self.n]

    def A_bar(self, k: int) -> np.ndarray:
        """Map from the initial state to the step-k state."""
        return self._row(self.A, k)

    def B_bar(self, k: int) -> np.ndarray:
        """Map from the stacked minimizer input to the step-k state."""
        return self._row(self.B, k)

    def C_bar(self, k: int) -> np.ndarray:
        """Map from the stacked maximizer input to the step-k state."""
        return self._row(self.C, k)

    def D_bar(self, k: int) -> np.ndarray:
        """Map from the stacked noise to the step-k state."""
        return self._row(self.D, k)


def lift(sys: StageSystem) -> LiftedSystem:
    """Build the stacked affine dynamics X = A x0 + B U + C V + D W.

    Block row k of the returned ``A`` is the transition product
    A_{k-1} ... A_0 (identity for k = 0). Block (k, j) of ``B`` is
    A_{k-1} ... A_{j+1} B_j for j < k and zero otherwise; ``C`` and ``D``
    follow the same pattern with their own column widths.
    """
    N, n, m, l, r = sys.N, sys.n, sys.m, sys.l, sys.r
    big = (N + 1) * n
    calA = np.zeros((big, n))
    calB = np.zeros((big, N * m))
    calC = np.zeros((big, N * l))
    calD = np.zeros((big, N * r))

    calA[:n] = np.eye(n)
    for k in range(1, N + 1):
        rows = slice(k * n, (k + 1) * n)
        prev = slice((k - 1) * n, k * n)
        Ak = sys.A[k - 1]
        calA[rows] = Ak @ calA[prev]
        calB[rows] = Ak @ calB[prev]
        calC[rows] = Ak @ calC[prev]
        calD[rows] = Ak @ calD[prev]
        calB[rows, (k - 1) * m: k * m] = sys.B[k - 1]
        calC[rows, (k - 1) * l: k * l] = sys.C[k - 1]
        calD[rows, (k - 1) * r: k * r] = sys.D[k - 1]

    return LiftedSystem(calA, calB, calC, calD, n=n, m=m, l=l, r=r, N=N)


@dataclass
class CostWeights:
    """Stage cost weights and their block-diagonal lifted forms.

    The running cost is sum_{k<N} x_k' Q_k x_k + u_k' R_k u_k - v_k' S_k v_k;
    the terminal state is priced only through the steering constraints, so the
    stored Q list always ends in a zero block. Requires Q_k PSD and R_k, S_k
    PD (margin EIG_TOL).
    """

    Q: list
    R: list
    S: list
    Qbar: np.ndarray = field(init=False)
    Rbar: np.ndarray = field(init=False)
    Sbar: np.ndarray = field(init=False)

    def __post_init__(self):
        N = len(self.R)
        if len(self.S) != N:
            raise DimensionError(f"R has {N} stages but S has {len(self.S)}")
        if len(self.Q) == N:
            self.Q = list(self.Q) + [np.zeros_like(np.asarray(self.Q[0], dtype=float))]
        elif len(self.Q) == N + 1:
            self.Q = list(self.Q)
        else:
            raise DimensionError(
                f"Q needs {N} or {N + 1} stages to match R/S with {N}, got {len(self.Q)}"
            )
        for k in range(N + 1):
            Qk = _check_symmetric(_as_float_array(self.Q[k], f"Q[{k}]"), f"Q[{k}]")
            if _min_eig(Qk) < -EIG_TOL:
                raise ValueError(f"Q[{k}] is not positive semidefinite")
            self.Q[k] = Qk
        self.Q[N] = np.zeros_like(self.Q[N])
        for name, seq in (("R", self.R), ("S", self.S)):
            for k in range(N):
                Mk = _check_symmetric(_as_float_array(seq[k], f"{name}[{k}]"), f"{name}[{k}]")
                if _min_eig(Mk) <= EIG_TOL:
                    raise ValueError(f"{name}[{k}] is not positive definite")
                seq[k] = Mk
        self.Qbar = block_diag(*self.Q)
        self.Rbar = block_diag(*self.R)
        self.Sbar = block_diag(*self.S)

    @property
    def N(self) -> int:
        return len(self.R)


def lift_weights(Q, R, S, N: int | None = None) -> CostWeights:
    """Assemble CostWeights from per-stage sequences or constant matrices.

    A single 2-D matrix is repeated over the horizon (N must then be given).
    Sequences may supply Q for N or N+1 stages; the terminal block is forced
    to zero either way.
    """
    return CostWeights(Q=_stage_list(Q, N), R=_stage_list(R, N), S=_stage_list(S, N))


def _stage_list(M, N: int | None) -> list:
    """Normalize a weight spec (one matrix or a sequence of them) to a list."""
    if isinstance(M, np.ndarray) and M.ndim == 3:
        return [np.array(Mk, dtype=float) for Mk in M]
    if isinstance(M, (list, tuple)):
        if np.asarray(M[0], dtype=float).ndim == 2:
            return [np.asarray(Mk, dtype=float) for Mk in M]
        M = np.asarray(M, dtype=float)
    else:
        M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise DimensionError("weight spec must be a matrix or a sequence of matrices")
    if N is None:
        raise DimensionError("N is required when weights are constant matrices")
    return [M.copy() for _ in range(N)]


@dataclass
class GaussianBoundary:
    """Initial Gaussian (mu0, Sigma0) and steering target (muN, SigmaN).

    Sigma0 must be PSD, SigmaN strictly PD (its inverse square root scales
    the covariance steering constraint). Both are symmetrized after an
    asymmetry check at SYM_TOL relative.
    """

    mu0: np.ndarray
    Sigma0: np.ndarray
    muN: np.ndarray
    SigmaN: np.ndarray

    def __post_init__(self):
        self.mu0 = _as_float_array(self.mu0, "mu0").reshape(-1)
        self.muN = _as_float_array(self.muN, "muN").reshape(-1)
        n = self.mu0.size
        if self.muN.size != n:
            raise DimensionError(f"muN has size {self.muN.size}, expected {n}")
        self.Sigma0 = _check_symmetric(_as_float_array(self.Sigma0, "Sigma0"), "Sigma0")
        self.SigmaN = _check_symmetric(_as_float_array(self.SigmaN, "SigmaN"), "SigmaN")
        if self.Sigma0.shape != (n, n):
            raise DimensionError(f"Sigma0 has shape {self.Sigma0.shape}, expected {(n, n)}")
        if self.SigmaN.shape != (n, n):
            raise DimensionError(f"SigmaN has shape {self.SigmaN.shape}, expected {(n, n)}")
        scale0 = max(1.0, float(np.abs(self.Sigma0).max()))
        if _min_eig(self.Sigma0) < -EIG_TOL * scale0:
            raise ValueError("Sigma0 is not positive semidefinite")
        if _min_eig(self.SigmaN) <= EIG_TOL:
            raise ValueError("SigmaN must be strictly positive definite")

    @property
    def n(self) -> int:
        return self.mu0.size


@dataclass
class MeanTrajectory:
    """Deterministic mean path under open-loop mean inputs.

    ``states`` is (N+1, n); ``Ubar``/``Vbar`` are the stacked mean inputs.
    Feedback gains act on the zero-mean deviation only, so they never appear
    here.
    """

    states: np.ndarray
    Ubar: np.ndarray
    Vbar: np.ndarray


def mean_trajectory(sys: LiftedSystem, mu0: np.ndarray, Ubar, Vbar) -> MeanTrajectory:
    """Propagate the mean through the lifted dynamics."""
    mu0 = np.asarray(mu0, dtype=float).reshape(-1)
    Ubar = np.asarray(Ubar, dtype=float).reshape(-1)
    Vbar = np.asarray(Vbar, dtype=float).reshape(-1)
    if mu0.size != sys.n:
        raise DimensionError(f"mu0 has size {mu0.size}, expected {sys.n}")
    if Ubar.size != sys.N * sys.m:
        raise DimensionError(f"Ubar has size {Ubar.size}, expected {sys.N * sys.m}")
    if Vbar.size != sys.N * sys.l:
        raise DimensionError(f"Vbar has size {Vbar.size}, expected {sys.N * sys.l}")
    X = sys.A @ mu0 + sys.B @ Ubar + sys.C @ Vbar
    return MeanTrajectory(states=X.reshape(sys.N + 1, sys.n), Ubar=Ubar, Vbar=Vbar)


def _lifted_gain(K, rows: int, cols: int, name: str) -> np.ndarray:
    """Accept a lifted gain matrix or any object exposing one via .lifted."""
    K = getattr(K, "lifted", K)
    K = np.asarray(K, dtype=float)
    if K.shape != (rows, cols):
        raise DimensionError(f"{name} has shape {K.shape}, expected {(rows, cols)}")
    return K


def noise_state_cov(sys: LiftedSystem, Sigma0: np.ndarray) -> np.ndarray:
    """Covariance of the gain-free stacked deviation: A Sigma0 A' + D D'."""
    Sigma0 = np.asarray(Sigma0, dtype=float)
    S = sys.A @ Sigma0 @ sys.A.T + sys.D @ sys.D.T
    return 0.5 * (S + S.T)


def payoff(sys: LiftedSystem, w: CostWeights, b: GaussianBoundary,
           Ubar, Vbar, K, L) -> tuple[float, float, float]:
    """Expected game cost split into mean and covariance parts.

    Returns (J_total, J_mu, J_sigma) where J_mu prices the mean path under
    the open-loop inputs, J_sigma prices the zero-mean deviation under the
    feedback gains, and J_total = J_mu + J_sigma exactly (the cross terms
    vanish because the deviation has zero mean).
    """
    N, n = sys.N, sys.n
    big = (N + 1) * n
    Ubar = np.asarray(Ubar, dtype=float).reshape(-1)
    Vbar = np.asarray(Vbar, dtype=float).reshape(-1)
    Kl = _lifted_gain(K, N * sys.m, big, "K")
    Ll = _lifted_gain(L, N * sys.l, big, "L")

    X = sys.A @ b.mu0 + sys.B @ Ubar + sys.C @ Vbar
    J_mu = float(X @ w.Qbar @ X + Ubar @ w.Rbar @ Ubar - Vbar @ w.Sbar @ Vbar)

    Sigma_s = noise_state_cov(sys, b.Sigma0)
    P = np.eye(big) + sys.B @ Kl + sys.C @ Ll
    inner = P.T @ w.Qbar @ P + Kl.T @ w.Rbar @ Kl - Ll.T @ w.Sbar @ Ll
    J_sigma = float(np.trace(inner @ Sigma_s))

    return J_mu + J_sigma, J_mu, J_sigma
