"""Open-loop saddle of the mean subgame, free and with a terminal pin.

In the lifted coordinates the mean path costs

    J_mu(U, V) = X' Qbar X + U' Rbar U - V' Sbar V,   X = A mu0 + B U + C V,

which is convex in the minimizer's U and, whenever Sbar - C' Qbar C is
positive definite, strictly concave in the maximizer's V. The unconstrained
saddle then solves one symmetric two-block linear system. Pinning the
terminal mean adds a linear equality constraint that only the minimizer must
honor; the constrained solve eliminates the maximizer through its best
response and handles the pin with a Lagrange multiplier.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .model import CostWeights, LiftedSystem

# Definiteness margin when testing concavity in the maximizer.
EIG_TOL = 1e-10
# Relative threshold on singular values for numerical rank decisions.
RANK_TOL = 1e-9
# Stationarity residual bound, scaled by (1 + |mu0| + |muN|).
KKT_TOL = 1e-8
# Condition number of the multiplier system above which a warning is attached.
COND_WARN = 1e12


class MeanConcavityError(ValueError):
    """The maximizer's problem is not strictly concave.

    Raised when Sbar - C' Qbar C has an eigenvalue at or below EIG_TOL; run
    check_mean_concavity for the offending eigenvalue.
    """


class RankConditionError(ValueError):
    """The terminal mean target is unreachable for the minimizer.

    Raised when the relative controllability test fails; run
    check_rank_condition / relative_controllability for diagnostics.
    """


@dataclass
class MeanSaddle:
    """Unconstrained saddle point of the mean subgame."""

    Ubar: np.ndarray
    Vbar: np.ndarray
    value: float
    grad_norms: tuple[float, float]


@dataclass
class RelativeControllability:
    """Terminal-mean reachability once the maximizer plays its best response.

    ``G`` maps the minimizer's stacked input to the terminal mean after the
    maximizer's anticipated reaction is folded in; ``rank`` and ``singvals``
    come from its SVD with threshold RANK_TOL relative to the largest
    singular value.
    """

    G: np.ndarray
    rank: int
    singvals: np.ndarray


@dataclass
class ConstrainedMeanSolution:
    """Minimizer input meeting the terminal-mean pin against a reacting maximizer."""

    Ubar_c: np.ndarray
    Vbar_c: np.ndarray
    multiplier: np.ndarray
    response_hessian: np.ndarray
    response_linear: np.ndarray
    terminal_mean: np.ndarray
    warnings: list[str] = field(default_factory=list)


class _MeanBlocks:
    """Shared quadratic-form blocks of J_mu in (U, V)."""

    def __init__(self, sys: LiftedSystem, w: CostWeights):
        QB = w.Qbar @ sys.B
        QC = w.Qbar @ sys.C
        self.Huu = sys.B.T @ QB + w.Rbar
        self.Huv = sys.B.T @ QC
        self.Hvv = sys.C.T @ QC - w.Sbar
        self.BtQA = QB.T @ sys.A
        self.CtQA = QC.T @ sys.A
        # Factor the negated maximizer block; it must be PD for a saddle.
        neg_Hvv = -self.Hvv
        eigmin = float(np.linalg.eigvalsh(neg_Hvv)[0])
        if eigmin <= EIG_TOL:
            raise MeanConcavityError(
                "maximizer block Sbar - C'QbarC is not positive definite "
                f"(min eigenvalue {eigmin:.3e}); see check_mean_concavity"
            )
        self.neg_Hvv_fac = cho_factor(neg_Hvv)

    def solve_vblock(self, rhs: np.ndarray) -> np.ndarray:
        """Apply Hvv^{-1} (note Hvv is negative definite)."""
        return -cho_solve(self.neg_Hvv_fac, rhs)

    def response_hessian(self) -> np.ndarray:
        """Huu - Huv Hvv^{-1} Huv': curvature in U after the maximizer reacts."""
        H = self.Huu - self.Huv @ self.solve_vblock(self.Huv.T)
        return 0.5 * (H + H.T)


def check_mean_concavity(sys: LiftedSystem, w: CostWeights) -> tuple[bool, float]:
    """Whether Sbar - C' Qbar C is PD; returns (verdict, min eigenvalue)."""
    M = w.Sbar - sys.C.T @ w.Qbar @ sys.C
    eigmin = float(np.linalg.eigvalsh(0.5 * (M + M.T))[0])
    return eigmin > EIG_TOL, eigmin


def mean_cost(sys: LiftedSystem, w: CostWeights, mu0, Ubar, Vbar) -> float:
    """Evaluate J_mu at stacked open-loop inputs."""
    mu0 = np.asarray(mu0, dtype=float).reshape(-1)
    Ubar = np.asarray(Ubar, dtype=float).reshape(-1)
    Vbar = np.asarray(Vbar, dtype=float).reshape(-1)
    X = sys.A @ mu0 + sys.B @ Ubar + sys.C @ Vbar
    return float(X @ w.Qbar @ X + Ubar @ w.Rbar @ Ubar - Vbar @ w.Sbar @ Vbar)


def mean_gradients(sys: LiftedSystem, w: CostWeights, mu0, Ubar, Vbar
                   ) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of J_mu with respect to the stacked inputs."""
    mu0 = np.asarray(mu0, dtype=float).reshape(-1)
    Ubar = np.asarray(Ubar, dtype=float).reshape(-1)
    Vbar = np.asarray(Vbar, dtype=float).reshape(-1)
    blk = _MeanBlocksNoCheck(sys, w)
    gU = 2.0 * (blk.Huu @ Ubar + blk.Huv @ Vbar + blk.BtQA @ mu0)
    gV = 2.0 * (blk.Hvv @ Vbar + blk.Huv.T @ Ubar + blk.CtQA @ mu0)
    return gU, gV


class _MeanBlocksNoCheck:
    """Quadratic-form blocks without the concavity gate (for evaluation only)."""

    def __init__(self, sys: LiftedSystem, w: CostWeights):
        QB = w.Qbar @ sys.B
        QC = w.Qbar @ sys.C
        self.Huu = sys.B.T @ QB + w.Rbar
        self.Huv = sys.B.T @ QC
        self.Hvv = sys.C.T @ QC - w.Sbar
        self.BtQA = QB.T @ sys.A
        self.CtQA = QC.T @ sys.A


def solve_umsg(sys: LiftedSystem, w: CostWeights, mu0) -> MeanSaddle:
    """Closed-form saddle of the unconstrained mean subgame.

    Solves the stationarity system in (U, V) by eliminating the maximizer
    block through its Cholesky factor, with one pass of iterative refinement.
    """
    mu0 = np.asarray(mu0, dtype=float).reshape(-1)
    blk = _MeanBlocks(sys, w)
    bu = blk.BtQA @ mu0
    bv = blk.CtQA @ mu0

    R_fac = cho_factor(blk.response_hessian())

    def schur_solve(ru: np.ndarray, rv: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        # [Huu Huv; Huv' Hvv] [u; v] = [ru; rv]
        u = cho_solve(R_fac, ru - blk.Huv @ blk.solve_vblock(rv))
        v = blk.solve_vblock(rv - blk.Huv.T @ u)
        return u, v

    U, V = schur_solve(-bu, -bv)
    # One refinement pass keeps the stationarity residual near roundoff.
    ru = -(bu + blk.Huu @ U + blk.Huv @ V)
    rv = -(bv + blk.Huv.T @ U + blk.Hvv @ V)
    dU, dV = schur_solve(ru, rv)
    U, V = U + dU, V + dV

    gU, gV = mean_gradients(sys, w, mu0, U, V)
    value = mean_cost(sys, w, mu0, U, V)
    return MeanSaddle(Ubar=U, Vbar=V, value=value,
                      grad_norms=(float(np.linalg.norm(gU)), float(np.linalg.norm(gV))))


def best_response_controller(sys: LiftedSystem, w: CostWeights, mu0, Vbar) -> np.ndarray:
    """Minimizer's optimal stacked input against a fixed maximizer input."""
    mu0 = np.asarray(mu0, dtype=float).reshape(-1)
    Vbar = np.asarray(Vbar, dtype=float).reshape(-1)
    blk = _MeanBlocksNoCheck(sys, w)
    fac = cho_factor(0.5 * (blk.Huu + blk.Huu.T))
    return -cho_solve(fac, blk.Huv @ Vbar + blk.BtQA @ mu0)


def best_response_stopper(sys: LiftedSystem, w: CostWeights, mu0, Ubar) -> np.ndarray:
    """Maximizer's optimal stacked input against a fixed minimizer input."""
    mu0 = np.asarray(mu0, dtype=float).reshape(-1)
    Ubar = np.asarray(Ubar, dtype=float).reshape(-1)
    blk = _MeanBlocks(sys, w)
    return blk.solve_vblock(-(blk.Huv.T @ Ubar + blk.CtQA @ mu0))


def relative_controllability(sys: LiftedSystem, w: CostWeights) -> RelativeControllability:
    """Reachability of the terminal mean through the maximizer's reaction."""
    blk = _MeanBlocks(sys, w)
    CN = sys.C_bar(sys.N)
    G = sys.B_bar(sys.N) - CN @ blk.solve_vblock(blk.Huv.T)
    singvals = np.linalg.svd(G, compute_uv=False)
    smax = singvals[0] if singvals.size else 0.0
    rank = int(np.sum(singvals > RANK_TOL * max(smax, 1e-300)))
    return RelativeControllability(G=G, rank=rank, singvals=singvals)


def _rank_data(sys: LiftedSystem, w: CostWeights, mu0, muN):
    """G, the constraint offset, and the reachability residual target."""
    mu0 = np.asarray(mu0, dtype=float).reshape(-1)
    muN = np.asarray(muN, dtype=float).reshape(-1)
    blk = _MeanBlocks(sys, w)
    CN = sys.C_bar(sys.N)
    G = sys.B_bar(sys.N) - CN @ blk.solve_vblock(blk.Huv.T)
    # Terminal mean with U = 0 once the maximizer reacts:
    free_terminal = sys.A_bar(sys.N) @ mu0 + CN @ blk.solve_vblock(-blk.CtQA @ mu0)
    target = muN - free_terminal
    return blk, G, target


def check_rank_condition(sys: LiftedSystem, w: CostWeights, mu0, muN) -> bool:
    """True when the pinned terminal mean lies in the reachable set.

    Compares the numerical rank of G with the rank of [G | residual target];
    both use the RANK_TOL threshold relative to the larger matrix's leading
    singular value.
    """
    _, G, target = _rank_data(sys, w, mu0, muN)
    sv_G = np.linalg.svd(G, compute_uv=False)
    sv_aug = np.linalg.svd(np.hstack([G, target[:, None]]), compute_uv=False)
    thresh = RANK_TOL * max(sv_aug[0], 1e-300)
    return int(np.sum(sv_G > thresh)) == int(np.sum(sv_aug > thresh))


def solve_cmsg_upper(sys: LiftedSystem, w: CostWeights, b) -> ConstrainedMeanSolution:
    """Upper game with the terminal mean pinned to b.muN.

    The maximizer is eliminated by its best response; the minimizer solves
    an equality-constrained quadratic program whose multiplier system is the
    n x n matrix G R^{-1} G'. One refinement pass is applied to the KKT
    system. Raises RankConditionError when the pin is unreachable.
    """
    mu0 = np.asarray(b.mu0, dtype=float).reshape(-1)
    muN = np.asarray(b.muN, dtype=float).reshape(-1)
    rc = relative_controllability(sys, w)
    if rc.rank < sys.n:
        raise RankConditionError(
            f"relative controllability rank {rc.rank} < {sys.n}; the "
            "multiplier system is singular (singular values "
            f"{np.array2string(rc.singvals, precision=3)})"
        )
    if not check_rank_condition(sys, w, mu0, muN):
        raise RankConditionError(
            "terminal mean target is outside the reachable set; "
            "see check_rank_condition and relative_controllability"
        )
    blk, G, target = _rank_data(sys, w, mu0, muN)
    bu = blk.BtQA @ mu0
    bv = blk.CtQA @ mu0

    R = blk.response_hessian()
    R_fac = cho_factor(R)
    # Linear term of the maximizer-eliminated objective (negated).
    Mvec = blk.Huv @ blk.solve_vblock(bv) - bu

    Rinv_Gt = cho_solve(R_fac, G.T)
    GRG = G @ Rinv_Gt
    GRG = 0.5 * (GRG + GRG.T)
    warnings = []
    cond = float(np.linalg.cond(GRG))
    if cond > COND_WARN:
        warnings.append(
            f"multiplier system is ill conditioned (cond {cond:.3e}); "
            "terminal-mean accuracy may degrade"
        )
    GRG_fac = cho_factor(GRG)

    def kkt_solve(r_stat: np.ndarray, r_con: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        # R dU - G' dnu = r_stat ; G dU = r_con
        t1 = cho_solve(R_fac, r_stat)
        dnu = cho_solve(GRG_fac, r_con - G @ t1)
        dU = cho_solve(R_fac, r_stat + G.T @ dnu)
        return dU, dnu

    U, nu = kkt_solve(Mvec, target)
    r_stat = Mvec + G.T @ nu - R @ U
    r_con = target - G @ U
    dU, dnu = kkt_solve(r_stat, r_con)
    U, nu = U + dU, nu + dnu

    V = blk.solve_vblock(-(blk.Huv.T @ U + bv))
    terminal = sys.A_bar(sys.N) @ mu0 + sys.B_bar(sys.N) @ U + sys.C_bar(sys.N) @ V
    return ConstrainedMeanSolution(
        Ubar_c=U,
        Vbar_c=V,
        multiplier=2.0 * nu,
        response_hessian=R,
        response_linear=Mvec,
        terminal_mean=terminal,
        warnings=warnings,
    )
