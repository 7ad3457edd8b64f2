"""Brute-force references used to verify the recursive estimators.

Nothing here shares code paths with the recursions it checks: the noise
cross-covariances are propagated directly from ``D_k`` and ``Sigma_u``
(not through the ``E_k / F_k`` factors), the projection is one dense SPD
solve over the stacked observations, and :func:`kalman_reference` is a
textbook augmented-state Kalman filter.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import linalg

from .errors import OracleFailure
from .model import (AttackNoiseModel, BernoulliSchedule, CovarianceFactorization,
                    MarkovNoiseModel, Model, constant, constant_prob,
                    latent_factorization, linear_observation)

MAX_HORIZON = 25


@dataclass(frozen=True)
class MomentModel:
    """First and second moments of the stacked observations ``y_1..y_L``.

    ``cross[k - 1]`` is ``Cov[x_k, Y]`` with ``Y`` the stacked observations.
    """

    mean_y: np.ndarray   # (L, n_z)
    gram: np.ndarray     # (L n_z, L n_z)
    cross: np.ndarray    # (L, n_x, L n_z)

    @property
    def horizon(self) -> int:
        return self.mean_y.shape[0]

    @property
    def n_z(self) -> int:
        return self.mean_y.shape[1]

    def cov_y(self, j: int, i: int) -> np.ndarray:
        n = self.n_z
        return self.gram[(j - 1) * n:j * n, (i - 1) * n:i * n]

    def cov_x_y(self, k: int, j: int) -> np.ndarray:
        n = self.n_z
        return self.cross[k - 1][:, (j - 1) * n:j * n]


def noise_covariances(noise: MarkovNoiseModel, horizon: int) -> np.ndarray:
    """``Cov[v_j, v_i]`` for ``1 <= i, j <= horizon`` by direct propagation."""
    n = noise.n_z
    var = [np.asarray(noise.Sigma_v0, dtype=float)]
    for s in range(1, horizon + 1):
        D = np.atleast_2d(noise.D(s - 1))
        var.append(D @ var[-1] @ D.T + noise.Sigma_u(s - 1))
    out = np.zeros((horizon, horizon, n, n))
    for i in range(1, horizon + 1):
        blk = var[i]
        out[i - 1, i - 1] = blk
        for j in range(i + 1, horizon + 1):
            blk = np.atleast_2d(noise.D(j - 1)) @ blk
            out[j - 1, i - 1] = blk
            out[i - 1, j - 1] = blk.T
    return out


def build_moments(cov: CovarianceFactorization, noise: MarkovNoiseModel,
                  schedule: BernoulliSchedule, attack: AttackNoiseModel,
                  H: Sequence[np.ndarray], C: Sequence[np.ndarray],
                  max_horizon: int = MAX_HORIZON) -> MomentModel:
    """Moments of ``y_j = (1-l_j)(g_j (H_j x_j + C_j) + v_j) + l_j w_j``, ``j = 1..L``."""
    L = len(H)
    if L > max_horizon:
        raise ValueError(f"oracle horizon {L} exceeds the cap of {max_horizon}")
    H = [np.atleast_2d(h) for h in H]
    C = [np.asarray(c, dtype=float).reshape(-1) for c in C]
    n_z, n_x = H[0].shape
    g = np.array([schedule.gamma_bar(j) for j in range(1, L + 1)])
    lam = np.array([schedule.lambda_bar(j) for j in range(1, L + 1)])
    keep = 1.0 - lam
    Sv = noise_covariances(noise, L)

    mean = np.array([keep[j] * g[j] * C[j] for j in range(L)])
    gram = np.zeros((L * n_z, L * n_z))
    for j in range(L):
        for i in range(j + 1):
            sig = cov.exact(j + 1, i + 1)
            if i == j:
                second = (g[j] * (H[j] @ sig @ H[j].T + np.outer(C[j], C[j])) + Sv[j, j])
                blk = (keep[j] * second + lam[j] * attack.Sigma_w(j + 1)
                       - np.outer(mean[j], mean[j]))
                blk = 0.5 * (blk + blk.T)
            else:
                blk = keep[j] * keep[i] * (g[j] * g[i] * H[j] @ sig @ H[i].T + Sv[j, i])
            gram[j * n_z:(j + 1) * n_z, i * n_z:(i + 1) * n_z] = blk
            gram[i * n_z:(i + 1) * n_z, j * n_z:(j + 1) * n_z] = blk.T

    cross = np.zeros((L, n_x, L * n_z))
    for k in range(L):
        for j in range(L):
            cross[k, :, j * n_z:(j + 1) * n_z] = (
                keep[j] * g[j] * cov.exact(k + 1, j + 1) @ H[j].T)
    return MomentModel(mean_y=mean, gram=gram, cross=cross)


def batch_affine_estimate(moments: MomentModel, y: np.ndarray, k: int,
                          L: int | None = None) -> np.ndarray:
    """Affine LS estimate of ``x_k`` from ``y_1..y_L`` (default: all observations)."""
    L = moments.horizon if L is None else L
    n = moments.n_z
    G = moments.gram[:L * n, :L * n]
    resid = (np.asarray(y, dtype=float)[:L] - moments.mean_y[:L]).reshape(-1)
    rhs = moments.cross[k - 1][:, :L * n]
    try:
        fac = linalg.cho_factor(G, lower=True)
    except linalg.LinAlgError:
        tr = float(np.trace(G))
        try:
            fac = linalg.cho_factor(G + 1e-12 * tr * np.eye(G.shape[0]), lower=True)
        except linalg.LinAlgError as exc:
            raise OracleFailure(f"Gram matrix of order {G.shape[0]} is singular") from exc
    return rhs @ linalg.cho_solve(fac, resid)


def kalman_reference(rho: float, var_x: float, D: np.ndarray, Sigma_u: np.ndarray,
                     Sigma_v0: np.ndarray, H: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Augmented-state Kalman filter for ``y_k = H x_k + v_k`` with scalar AR(1) ``x``.

    State ``s_k = [x_k, v_k]``; there is no separate measurement noise.
    Returns ``x_{k/k}`` for every row of ``y``.
    """
    D = np.atleast_2d(D)
    n_z = D.shape[0]
    H = np.asarray(H, dtype=float).reshape(n_z, 1)
    Phi = linalg.block_diag([[rho]], D)
    Q = linalg.block_diag([[var_x * (1.0 - rho ** 2)]], np.atleast_2d(Sigma_u))
    M = np.hstack([H, np.eye(n_z)])
    s = np.zeros(1 + n_z)
    P = linalg.block_diag([[var_x]], np.atleast_2d(Sigma_v0))
    out = []
    for yk in np.asarray(y, dtype=float).reshape(-1, n_z):
        s = Phi @ s
        P = Phi @ P @ Phi.T + Q
        S = M @ P @ M.T
        K = linalg.solve(S, M @ P, assume_a="pos").T
        s = s + K @ (yk - M @ s)
        J = np.eye(1 + n_z) - K @ M
        P = J @ P @ J.T
        P = 0.5 * (P + P.T)
        out.append(s[0])
    return np.array(out)


@dataclass(frozen=True)
class LinearInstance:
    """A random exactly-linear scenario for oracle comparisons."""

    model: Model
    H: list
    C: list
    horizon: int
    gamma_bar: float
    lambda_bar: float


def _random_spd(rng: np.random.Generator, n: int, scale: float = 1.0) -> np.ndarray:
    M = rng.standard_normal((n, n))
    return scale * (M @ M.T / n + 0.2 * np.eye(n))


def random_linear_instance(rng: np.random.Generator,
                           probs: Sequence[float] = (0.0, 0.3, 0.7, 1.0)) -> LinearInstance:
    """Draw dimensions, a stationary latent covariance, Markov noise and ``H_k, C_k``."""
    n_x, n_z, p = (int(rng.integers(1, 3)) for _ in range(3))
    horizon = int(rng.integers(2, 21))
    gb, lb = float(rng.choice(probs)), float(rng.choice(probs))

    # Round-off in the factor products grows like (max|eig| / min|eig|)^k, so the
    # latent spectrum is kept narrow enough for 1e-8 agreement over 20 steps.
    eig = rng.uniform(0.7, 0.95, p) * rng.choice([-1.0, 1.0], p)
    Q, _ = np.linalg.qr(rng.standard_normal((p, p)))
    Phi = Q @ np.diag(eig) @ Q.T
    W = _random_spd(rng, p)
    P = linalg.solve_discrete_lyapunov(Phi, W)
    G = rng.standard_normal((n_x, p))
    cov = latent_factorization(G, Phi, 0.5 * (P + P.T))

    # singular values of D bounded away from 0: cond(E_k) grows like cond(D)^k
    U, _ = np.linalg.qr(rng.standard_normal((n_z, n_z)))
    V, _ = np.linalg.qr(rng.standard_normal((n_z, n_z)))
    D = U @ np.diag(rng.uniform(0.6, 0.95, n_z)) @ V.T
    noise = MarkovNoiseModel(D=constant(D), Sigma_u=constant(_random_spd(rng, n_z, 0.2)),
                             Sigma_v0=_random_spd(rng, n_z, 0.3))
    Hs = [rng.standard_normal((n_z, n_x)) for _ in range(horizon)]
    Cs = [rng.standard_normal(n_z) for _ in range(horizon)]
    obs = linear_observation(lambda k: Hs[k - 1], lambda k: Cs[k - 1], n_x=n_x, n_z=n_z)
    model = Model(cov=cov, obs=obs, noise=noise,
                  schedule=BernoulliSchedule(constant_prob(gb), constant_prob(lb)),
                  attack=AttackNoiseModel(constant(_random_spd(rng, n_z))))
    return LinearInstance(model=model, H=Hs, C=Cs, horizon=horizon,
                          gamma_bar=gb, lambda_bar=lb)


def scaled_deviation(a: np.ndarray, b: np.ndarray, floor: float = 1e-2) -> float:
    """``|a - b| / max(|b|, floor)``: the comparison is ``<= 1e-8`` exactly when
    ``|a - b| <= max(1e-8 |b|, 1e-8 floor)``."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(float(np.max(np.abs(b))), floor))


@dataclass
class OracleReport:
    instances: int
    comparisons: int
    max_filter_deviation: float
    max_smoother_deviation: float
    max_kalman_deviation: float

    @property
    def max_deviation(self) -> float:
        return max(self.max_filter_deviation, self.max_smoother_deviation)


def check_instance(inst: LinearInstance, rng: np.random.Generator,
                   mode: str = "theorem") -> tuple[float, float, int]:
    """Compare filter and smoother with the batch projection on one instance.

    The observations are drawn from the instance's own linear model.
    Returns ``(max filter deviation, max smoother deviation, comparisons)``.
    """
    from .estimator import FixedNominal, fixed_point_estimates, run_filter
    from .simulator import GaussianSignal, RngStream, simulate_run

    m = inst.model
    seed = int(rng.integers(0, 2 ** 63))
    traj = simulate_run(m, inst.horizon, RngStream(seed), GaussianSignal(m.cov))
    nominal = FixedNominal(lambda k: np.zeros(m.cov.n_x))
    run = run_filter(traj.y, m, nominal, mode=mode)
    moments = build_moments(m.cov, m.noise, m.schedule, m.attack, inst.H, inst.C)
    dev_f = dev_s = 0.0
    n = 0
    for k in range(1, inst.horizon + 1):
        ref = batch_affine_estimate(moments, traj.y, k, L=k)
        dev_f = max(dev_f, scaled_deviation(run.outputs[k - 1].x_filt, ref))
        smooth = fixed_point_estimates(run, k, m.cov)
        for L in range(k + 1, inst.horizon + 1):
            ref = batch_affine_estimate(moments, traj.y, k, L=L)
            dev_s = max(dev_s, scaled_deviation(smooth[L - k], ref))
            n += 1
        n += 1
    return dev_f, dev_s, n


def kalman_instance(rho: float = 0.8, var_x: float = 1.0,
                    D: float = 0.75, sigma_u: float = 0.01, sigma_v0: float = 0.1):
    """Clean linear scenario (no missing data, no attacks) shared with the Kalman check."""
    from .model import ar1_factorization
    obs = linear_observation(lambda k: np.array([[1.0]]))
    noise = MarkovNoiseModel(D=constant(D), Sigma_u=constant(sigma_u),
                             Sigma_v0=np.array([[sigma_v0]]))
    return Model(cov=ar1_factorization(rho, var_x), obs=obs, noise=noise,
                 schedule=BernoulliSchedule.constant(1.0, 0.0),
                 attack=AttackNoiseModel(constant(1.0)))


def kalman_three_way(steps: int = 30, seed: int = 0, **params) -> tuple[float, float, float]:
    """Max pairwise deviations (estimator-Kalman, oracle-Kalman, estimator-oracle)."""
    from .estimator import FixedNominal, run_filter
    from .simulator import GaussianSignal, RngStream, simulate_run

    rho = params.get("rho", 0.8)
    var_x = params.get("var_x", 1.0)
    m = kalman_instance(**params)
    traj = simulate_run(m, steps, RngStream(seed), GaussianSignal(m.cov))
    est = run_filter(traj.y, m, FixedNominal(lambda k: np.zeros(1)), mode="theorem").x_filt[:, 0]
    kal = kalman_reference(rho, var_x, m.noise.D(0), m.noise.Sigma_u(0), m.noise.Sigma_v0,
                           np.ones(1), traj.y)
    moments = build_moments(m.cov, m.noise, m.schedule, m.attack, [np.eye(1)] * steps,
                            [np.zeros(1)] * steps, max_horizon=steps)
    bat = np.array([batch_affine_estimate(moments, traj.y, k, L=k)[0]
                    for k in range(1, steps + 1)])
    return (float(np.max(np.abs(est - kal))), float(np.max(np.abs(bat - kal))),
            float(np.max(np.abs(est - bat))))


def run_oracle_suite(instances: int = 50, seed: int = 0, mode: str = "theorem") -> OracleReport:
    rng = np.random.default_rng(seed)
    dev_f = dev_s = 0.0
    n = 0
    for _ in range(instances):
        inst = random_linear_instance(rng)
        f, s, c = check_instance(inst, rng, mode)
        dev_f, dev_s, n = max(dev_f, f), max(dev_s, s), n + c
    kal = max(kalman_three_way(seed=seed))
    return OracleReport(instances=instances, comparisons=n, max_filter_deviation=dev_f,
                        max_smoother_deviation=dev_s, max_kalman_deviation=kal)
