import numpy as np
import pytest

from corrfilt.experiment import ScenarioConfig, build_model, build_signal
from corrfilt.model import (AttackNoiseModel, BernoulliSchedule, MarkovNoiseModel, Model,
                            ar1_factorization, constant, linear_observation)
from corrfilt.simulator import AR2Params, RngStream, ar2_factorization, simulate_run

NOISE_RUNS = 100_000
NOISE_STEPS = 10


def scalar_linear_model(gamma_bar=1.0, lambda_bar=0.0, rho=None, sigma_u=0.0, sigma_v0=0.0,
                        D=0.5, sigma_w=1.0):
    """``h(x) = x``; ``A = B = 1`` when ``rho`` is None, AR(1) otherwise."""
    if rho is None:
        from corrfilt.model import CovarianceFactorization
        cov = CovarianceFactorization(A=constant(1.0), B=constant(1.0), n_x=1, p=1)
    else:
        cov = ar1_factorization(rho, 1.0)
    return Model(cov=cov, obs=linear_observation(constant(1.0)),
                 noise=MarkovNoiseModel(D=constant(D), Sigma_u=constant(sigma_u),
                                        Sigma_v0=np.array([[sigma_v0]])),
                 schedule=BernoulliSchedule.constant(gamma_bar, lambda_bar),
                 attack=AttackNoiseModel(constant(sigma_w)))


def carrier_linear_model(gamma_bar=0.7, lambda_bar=0.3):
    """Default scenario with the carrier replaced by its linearization at 0."""
    cfg = ScenarioConfig()
    omega = 2 * np.pi * cfg.f_p * cfg.delta
    obs = linear_observation(lambda k: np.array([[-cfg.m_a * np.sin(omega * k)]]),
                             lambda k: np.array([np.cos(omega * k)]))
    base = build_model(cfg)
    return Model(cov=ar2_factorization(AR2Params(cfg.b1, cfg.b2, cfg.sigma2)), obs=obs,
                 noise=base.noise, schedule=BernoulliSchedule.constant(gamma_bar, lambda_bar),
                 attack=base.attack)


@pytest.fixture(scope="session")
def default_model():
    return build_model(ScenarioConfig())


@pytest.fixture(scope="session")
def noise_samples():
    """``v_1..v_10`` from ``NOISE_RUNS`` independent default-scenario replications."""
    cfg = ScenarioConfig()
    model, signal = build_model(cfg), build_signal(cfg)
    v = np.empty((NOISE_RUNS, NOISE_STEPS))
    for r in range(NOISE_RUNS):
        v[r] = simulate_run(model, NOISE_STEPS, RngStream(99, r), signal).v[:, 0]
    return v


def empirical_cov_check(samples: np.ndarray, expected, n_se: float = 3.0):
    """Largest ``|sample cov - expected| / SE`` over all ``s <= k`` pairs."""
    n, K = samples.shape
    centered = samples - samples.mean(axis=0)
    worst = 0.0
    for k in range(K):
        for s in range(k + 1):
            prod = centered[:, k] * centered[:, s]
            se = prod.std(ddof=1) / np.sqrt(n)
            worst = max(worst, abs(prod.mean() - expected(k + 1, s + 1)) / se)
    return worst


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
