"""Barrier solvers for quadratics over a spectral-norm ball."""

import numpy as np
from scipy.optimize import minimize

from steergame.specnorm import (NormBallGeometry, _ball_barrier_parts,
                                _grad_hess_in_k, minimize_norm,
                                minimize_quadratic_on_ball)

import _oracles


def random_geometry(rng, n=2, M=3, nvars=4, offset_scale=0.4):
    """Small random affine map with rank-one coefficient structure."""
    Sh = rng.standard_normal((M, M))
    Sh = Sh @ Sh.T / M + 0.3 * np.eye(M)
    vals, vecs = np.linalg.eigh(Sh)
    Sh = (vecs * np.sqrt(vals)) @ vecs.T  # symmetric PSD square root target
    Sigma = Sh @ Sh
    Umat = rng.standard_normal((n, max(2, nvars // 2)))
    F0 = rng.standard_normal((n, M))
    F0 *= offset_scale / np.linalg.norm(F0, 2)  # pin the offset's norm
    # Distinct (column, row) slots per variable, as a gain pattern gives.
    cols = Umat.shape[1]
    flat = rng.choice(cols * M, size=nvars, replace=False)
    p, q = flat // M, flat % M
    return NormBallGeometry(F0=F0, Umat=Umat, Sh=Sh, Sigma=Sigma,
                            p_idx=p, q_idx=q)


def test_barrier_gradient_and_hessian_match_finite_differences():
    rng = np.random.default_rng(101)
    for _ in range(5):
        geom = random_geometry(rng)
        # Scale a random point until strictly inside the unit ball.
        k = 0.2 * rng.standard_normal(geom.nvars)
        while geom.norm(k) >= 0.9:
            k *= 0.5

        def phi(kv):
            F = geom.F(kv)
            n = F.shape[0]
            sign, logdet = np.linalg.slogdet(np.eye(n) - F @ F.T)
            assert sign > 0
            return -logdet

        def agrad(kv):
            F = geom.F(kv)
            Z, _ = _ball_barrier_parts(geom, F)
            return _grad_hess_in_k(geom, F, Z)[0]

        F = geom.F(k)
        Z, _ = _ball_barrier_parts(geom, F)
        grad, hess, _ = _grad_hess_in_k(geom, F, Z)
        fd_grad = _oracles.central_diff(phi, k, step=1e-6)
        assert np.linalg.norm(grad - fd_grad) <= 1e-5 * max(1.0, np.linalg.norm(grad))
        # Hessian against differences of the (already validated) gradient.
        for i in range(geom.nvars):
            e = np.zeros(geom.nvars)
            e[i] = 1e-6
            fd_row = (agrad(k + e) - agrad(k - e)) / 2e-6
            assert np.linalg.norm(hess[i] - fd_row) <= 1e-6 * max(1.0, np.linalg.norm(hess[i]))


def test_ball_solve_feasible_and_beats_random_feasible_probes():
    rng = np.random.default_rng(102)
    geom = random_geometry(rng)
    nv = geom.nvars
    Hroot = rng.standard_normal((nv, nv))
    H = Hroot @ Hroot.T + nv * np.eye(nv)
    g = 3.0 * rng.standard_normal(nv)

    start = minimize_norm(geom).k
    assert geom.norm(start) < 1.0
    res = minimize_quadratic_on_ball(H, g, geom, k0=start, gap_tol=1e-11)
    assert res.converged
    assert geom.norm(res.k) <= 1.0 + 1e-9

    def qval(k):
        return 0.5 * k @ H @ k + g @ k

    best = qval(res.k)
    for _ in range(200):
        probe = res.k + 0.5 * rng.standard_normal(nv)
        # Pull the probe back inside the ball along the segment to res.k.
        lo, hi = 0.0, 1.0
        if geom.norm(probe) > 1.0:
            for _ in range(50):
                mid = 0.5 * (lo + hi)
                if geom.norm(res.k + mid * (probe - res.k)) <= 1.0:
                    lo = mid
                else:
                    hi = mid
            probe = res.k + lo * (probe - res.k)
        assert qval(probe) >= best - 1e-7 * max(1.0, abs(best))


def test_ball_solve_reduces_to_unconstrained_minimum_when_interior():
    rng = np.random.default_rng(103)
    geom = random_geometry(rng, offset_scale=0.05)
    nv = geom.nvars
    H = 4.0 * np.eye(nv)
    k_free = 0.02 * rng.standard_normal(nv)
    g = -H @ k_free  # unconstrained minimizer k_free, far inside the ball
    assert geom.norm(k_free) < 0.8
    res = minimize_quadratic_on_ball(H, g, geom, k0=np.zeros(nv), gap_tol=1e-12)
    assert np.linalg.norm(res.k - k_free) <= 1e-5


def test_norm_minimizer_matches_direct_search():
    rng = np.random.default_rng(104)
    for _ in range(3):
        geom = random_geometry(rng, nvars=3, offset_scale=1.2)
        res = minimize_norm(geom, gap_tol=1e-11)
        direct = minimize(geom.norm, res.k, method="Nelder-Mead",
                          options={"xatol": 1e-12, "fatol": 1e-14,
                                   "maxiter": 20000, "maxfev": 20000})
        assert res.min_norm <= direct.fun + 1e-6
        assert abs(res.min_norm - direct.fun) <= 1e-5 * max(1.0, direct.fun)


def test_norm_minimizer_finds_uncancellable_offset():
    # One variable scales Umat[:,0] Sh[0,:]; the offset keeps a second row
    # no variable can touch, so the best norm is that row's norm.
    Sh = np.eye(2)
    geom = NormBallGeometry(
        F0=np.array([[2.0, 0.0], [0.0, 1.5]]),
        Umat=np.array([[1.0], [0.0]]),
        Sh=Sh, Sigma=Sh @ Sh,
        p_idx=np.array([0]), q_idx=np.array([0]),
    )
    res = minimize_norm(geom, gap_tol=1e-12)
    assert abs(res.min_norm - 1.5) <= 1e-5
    assert abs(res.k[0] - (-2.0)) <= 1e-4
