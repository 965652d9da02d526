import time

import numpy as np
import pytest

from steergame import cli, cov_game, mean_game, model

ACCEPTANCE_LINES = []


def record_criterion(num, label, ok, detail=""):
    """Collect one pass/fail line per acceptance criterion.

    The lines are echoed immediately (visible with -s or on failure) and
    again in the terminal summary, which capture cannot swallow.
    """
    verdict = "PASS" if ok else "FAIL"
    line = f"[{verdict}] criterion {num} ({label})"
    if detail:
        line += f": {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def scalar_game():
    """Two-step scalar instance small enough to expand by hand.

    A = B = C = 1, D = 0, Q = 1, R = 2, S = 4, mu0 = 1, Sigma0 = 1,
    terminal target (0, 0.5). The noise-free stacked covariance is the
    all-ones matrix (singular on purpose: the structured curvature still
    holds while the full-space verdicts do not).
    """
    sys = model.StageSystem.from_lti([[1.0]], [[1.0]], [[1.0]], [[0.0]], N=2)
    lifted = model.lift(sys)
    w = model.lift_weights(np.array([[1.0]]), np.array([[2.0]]),
                           np.array([[4.0]]), N=2)
    b = model.GaussianBoundary(mu0=[1.0], Sigma0=[[1.0]], muN=[0.0],
                               SigmaN=[[0.5]])
    return sys, lifted, w, b


@pytest.fixture(scope="session")
def noisy_scalar_game():
    """Scalar variant with unit process noise, so Sigma_s is nonsingular."""
    sys = model.StageSystem.from_lti([[1.0]], [[1.0]], [[1.0]], [[1.0]], N=2)
    lifted = model.lift(sys)
    w = model.lift_weights(np.array([[1.0]]), np.array([[2.0]]),
                           np.array([[4.0]]), N=2)
    b = model.GaussianBoundary(mu0=[1.0], Sigma0=[[1.0]], muN=[0.0],
                               SigmaN=[[4.0]])
    return sys, lifted, w, b


@pytest.fixture(scope="session")
def reference_scenario():
    sc = cli.parse_scenario(cli.bundled_scenarios()["test_example"])
    lifted = model.lift(sc.system)
    Sigma_s = model.noise_state_cov(lifted, sc.boundary.Sigma0)
    return sc, lifted, Sigma_s


@pytest.fixture(scope="session")
def reference_solution(reference_scenario):
    """Full solve of the bundled test_example scenario, timed once."""
    sc, lifted, Sigma_s = reference_scenario
    t0 = time.perf_counter()
    relc = mean_game.relative_controllability(lifted, sc.weights)
    cmsg = mean_game.solve_cmsg_upper(lifted, sc.weights, sc.boundary)
    trace = cov_game.jacobi_solve(lifted, sc.weights, sc.boundary,
                                  eps=sc.epsilon, max_iter=sc.max_iter,
                                  Sigma_s=Sigma_s)
    elapsed = time.perf_counter() - t0
    return {"scenario": sc, "lifted": lifted, "Sigma_s": Sigma_s,
            "relc": relc, "cmsg": cmsg, "trace": trace, "elapsed": elapsed}


@pytest.fixture(scope="session")
def infeasible_scenario():
    sc = cli.parse_scenario(cli.bundled_scenarios()["test_example_D01"])
    lifted = model.lift(sc.system)
    Sigma_s = model.noise_state_cov(lifted, sc.boundary.Sigma0)
    return sc, lifted, Sigma_s


@pytest.fixture(scope="session")
def missile_scenario():
    sc = cli.parse_scenario(cli.bundled_scenarios()["missile_endgame"])
    lifted = model.lift(sc.system)
    Sigma_s = model.noise_state_cov(lifted, sc.boundary.Sigma0)
    return sc, lifted, Sigma_s
