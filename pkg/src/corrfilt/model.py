"""Stochastic model ingredients.

Everything the estimator needs to know about the observation model lives
here: the factorized signal covariance, the (possibly nonlinear)
observation function and its linearization, the first-order Markov noise
together with the running factors of its covariance, and the Bernoulli
probabilities of missing measurements and deception attacks.

Time-varying quantities are plain callables of the integer time index.
Use :func:`constant` to wrap a fixed array.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import (EvaluationError, ModelValidationError,
                     NonsingularityError, NumericalFailure, SequencingError,
                     ShapeError)

MatrixFn = Callable[[int], np.ndarray]

#: D_k condition numbers above this are treated as singular.
MAX_CONDITION = 1e12
#: Longest horizon for which the E_k / E_k^{-1} factors are maintained.
MAX_HORIZON = 10_000
#: Factor entries beyond this magnitude are reported as overflow.
_OVERFLOW = 1e300
_PSD_TOL = 1e-10


def constant(value) -> MatrixFn:
    """Return a time-invariant schedule ``k -> value`` (as a 2-D array)."""
    arr = np.atleast_2d(np.asarray(value, dtype=float))
    arr.setflags(write=False)
    return lambda k: arr


def constant_prob(value: float) -> Callable[[int], float]:
    value = float(value)
    return lambda k: value


def symmetrize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


def check_psd(m: np.ndarray, name: str, tol: float = _PSD_TOL) -> np.ndarray:
    """Validate that ``m`` is square, symmetric and positive semidefinite."""
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ModelValidationError(f"{name} must be a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ModelValidationError(f"{name} has non-finite entries")
    scale = max(1.0, float(np.abs(m).max(initial=0.0)))
    if not np.allclose(m, m.T, rtol=0.0, atol=1e-12 * scale):
        raise ModelValidationError(f"{name} is not symmetric")
    if m.size and np.linalg.eigvalsh(symmetrize(m)).min() < -tol * scale:
        raise ModelValidationError(f"{name} is not positive semidefinite")
    return m


@dataclass(frozen=True)
class Dims:
    n_x: int
    n_z: int
    p: int

    def __post_init__(self):
        for name in ("n_x", "n_z", "p"):
            if int(getattr(self, name)) <= 0:
                raise ModelValidationError(f"{name} must be a positive integer")


@dataclass(frozen=True)
class CovarianceFactorization:
    """Separable signal covariance ``Cov[x_k, x_s] = A_k B_s^T`` for ``s <= k``.

    ``A`` and ``B`` map a time index to an ``(n_x, p)`` matrix.
    """

    A: MatrixFn
    B: MatrixFn
    n_x: int
    p: int
    #: optional closed-form ``(k, s) -> Cov[x_k, x_s]`` that avoids the
    #: factor products; the verification oracle prefers it when present
    kernel: Optional[Callable[[int, int], np.ndarray]] = None

    def cross(self, k: int, s: int) -> np.ndarray:
        """``Cov[x_k, x_s]`` from the factors, for any ordering of ``k`` and ``s``."""
        if s <= k:
            return self.A(k) @ self.B(s).T
        return self.B(k) @ self.A(s).T

    def exact(self, k: int, s: int) -> np.ndarray:
        if self.kernel is None:
            return self.cross(k, s)
        return np.atleast_2d(self.kernel(k, s))

    def variance(self, k: int) -> np.ndarray:
        return symmetrize(self.A(k) @ self.B(k).T)


def ar1_factorization(rho: float, variance: float) -> CovarianceFactorization:
    """Stationary scalar AR(1): ``Cov[x_k, x_s] = variance * rho**(k-s)``."""
    if not 0.0 < abs(rho) < 1.0:
        raise ModelValidationError("AR(1) coefficient must satisfy 0 < |rho| < 1")
    if variance <= 0:
        raise ModelValidationError("AR(1) variance must be positive")
    return CovarianceFactorization(
        A=lambda k: np.array([[variance * rho ** k]]),
        B=lambda k: np.array([[rho ** (-k)]]),
        n_x=1, p=1,
        kernel=lambda k, s: np.array([[variance * rho ** abs(k - s)]]))


def latent_factorization(G: np.ndarray, Phi: np.ndarray,
                         P: np.ndarray) -> CovarianceFactorization:
    """Factorization of ``x_k = G xi_k`` for a stationary latent VAR(1) ``xi``.

    With ``xi_k = Phi xi_{k-1} + noise`` and stationary covariance ``P``,
    ``Cov[x_k, x_s] = G Phi^{k-s} P G^T`` which splits as
    ``A_k = G Phi^k`` and ``B_s = G P Phi^{-s T}``.
    """
    G = np.atleast_2d(np.asarray(G, dtype=float))
    Phi = np.atleast_2d(np.asarray(Phi, dtype=float))
    P = check_psd(P, "P")
    n_x, p = G.shape
    if Phi.shape != (p, p) or P.shape != (p, p):
        raise ShapeError("Phi and P must be (p, p) with p = G.shape[1]")
    Phi_inv = np.linalg.inv(Phi)

    def A(k):
        return G @ np.linalg.matrix_power(Phi, k)

    def B(k):
        return G @ P @ np.linalg.matrix_power(Phi_inv, k).T

    def kernel(k, s):
        if s <= k:
            return G @ np.linalg.matrix_power(Phi, k - s) @ P @ G.T
        return G @ P @ np.linalg.matrix_power(Phi, s - k).T @ G.T

    return CovarianceFactorization(A=A, B=B, n_x=n_x, p=p, kernel=kernel)


@dataclass(frozen=True)
class ObservationFunction:
    """Observation map ``h_k`` with an optional analytic Jacobian."""

    eval: Callable[[int, np.ndarray], np.ndarray]
    n_x: int
    n_z: int
    jacobian: Optional[Callable[[int, np.ndarray], np.ndarray]] = None

    def __call__(self, k: int, x: np.ndarray) -> np.ndarray:
        return np.asarray(self.eval(k, x), dtype=float).reshape(self.n_z)


def carrier_observation(f_p: float = 10.0, delta: float = 0.01,
                        m_a: float = 2.0) -> ObservationFunction:
    """Phase-modulated carrier ``cos(2 pi f_p k delta + m_a x)`` (scalar signal)."""
    omega = 2.0 * np.pi * f_p * delta

    def h(k, x):
        return np.cos(omega * k + m_a * np.asarray(x, dtype=float).reshape(1))

    def jac(k, x):
        phase = omega * k + m_a * float(np.asarray(x).reshape(-1)[0])
        return np.array([[-m_a * np.sin(phase)]])

    return ObservationFunction(eval=h, n_x=1, n_z=1, jacobian=jac)


def linear_observation(H: MatrixFn, C: Optional[Callable[[int], np.ndarray]] = None,
                       n_x: Optional[int] = None, n_z: Optional[int] = None
                       ) -> ObservationFunction:
    """``h_k(x) = H_k x + C_k`` with exact Jacobian ``H_k``."""
    H1 = np.atleast_2d(H(1))
    n_z = n_z or H1.shape[0]
    n_x = n_x or H1.shape[1]
    zero = np.zeros(n_z)

    def h(k, x):
        c = zero if C is None else np.asarray(C(k), dtype=float).reshape(n_z)
        return H(k) @ np.asarray(x, dtype=float).reshape(n_x) + c

    return ObservationFunction(eval=h, n_x=n_x, n_z=n_z,
                               jacobian=lambda k, x: np.atleast_2d(H(k)))


@dataclass(frozen=True)
class MarkovNoiseModel:
    """First-order Markov additive noise ``v_k = D_{k-1} v_{k-1} + u_{k-1}``."""

    D: MatrixFn
    Sigma_u: MatrixFn
    Sigma_v0: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "Sigma_v0", check_psd(self.Sigma_v0, "Sigma_v0"))

    @property
    def n_z(self) -> int:
        return self.Sigma_v0.shape[0]


@dataclass(frozen=True)
class NoiseFactors:
    """Running factors of ``Cov[v_k, v_s] = E_k F_s^T`` at index ``k``."""

    k: int
    E: np.ndarray
    E_inv: np.ndarray
    F: np.ndarray
    Sigma_v: np.ndarray


@dataclass(frozen=True)
class BernoulliSchedule:
    """Success probabilities of the signal-presence and attack indicators."""

    gamma_bar: Callable[[int], float]
    lambda_bar: Callable[[int], float]

    @classmethod
    def constant(cls, gamma_bar: float, lambda_bar: float) -> "BernoulliSchedule":
        for name, val in (("gamma_bar", gamma_bar), ("lambda_bar", lambda_bar)):
            if not 0.0 <= val <= 1.0:
                raise ModelValidationError(f"{name}={val} is not a probability in [0, 1]")
        return cls(constant_prob(gamma_bar), constant_prob(lambda_bar))


@dataclass(frozen=True)
class AttackNoiseModel:
    Sigma_w: MatrixFn


@dataclass(frozen=True)
class LinearizedObservation:
    k: int
    H: np.ndarray
    C: np.ndarray
    x0: np.ndarray


@dataclass(frozen=True)
class GammaDelta:
    Gamma_x: np.ndarray
    Gamma_v: np.ndarray
    Delta_x: np.ndarray
    Delta_v: np.ndarray


@dataclass(frozen=True)
class Model:
    """Everything the filter needs besides the observations themselves."""

    cov: CovarianceFactorization
    obs: ObservationFunction
    noise: MarkovNoiseModel
    schedule: BernoulliSchedule
    attack: AttackNoiseModel

    def __post_init__(self):
        if self.cov.n_x != self.obs.n_x:
            raise ShapeError("signal dimension differs between covariance and observation")
        if self.noise.n_z != self.obs.n_z:
            raise ShapeError("noise dimension differs from observation dimension")

    @property
    def dims(self) -> Dims:
        return Dims(self.cov.n_x, self.obs.n_z, self.cov.p)


def noise_factors_init(model: MarkovNoiseModel) -> NoiseFactors:
    """Index-0 factors: ``E_0 = I`` and ``F_0 = Sigma_v0``."""
    Sv0 = check_psd(model.Sigma_v0, "Sigma_v0")
    eye = np.eye(Sv0.shape[0])
    return NoiseFactors(k=0, E=eye, E_inv=eye.copy(), F=Sv0.copy(), Sigma_v=Sv0.copy())


def noise_factors_step(state: NoiseFactors, model: MarkovNoiseModel) -> NoiseFactors:
    """Advance the noise factors from ``k-1`` to ``k``."""
    k = state.k + 1
    if k > MAX_HORIZON:
        raise NumericalFailure(f"horizon exceeds the supported {MAX_HORIZON} steps", k=k)
    D = np.atleast_2d(model.D(k - 1))
    if D.shape != state.E.shape:
        raise ShapeError(f"D_{k - 1} has shape {D.shape}, expected {state.E.shape}")
    if D.shape == (1, 1):
        if D[0, 0] == 0.0:
            raise NonsingularityError(f"D_{k - 1} is singular", k=k - 1)
    elif np.linalg.cond(D) > MAX_CONDITION:
        raise NonsingularityError(f"D_{k - 1} is numerically singular", k=k - 1)
    Sigma_v = symmetrize(D @ state.Sigma_v @ D.T + model.Sigma_u(k - 1))
    E = D @ state.E
    E_inv = np.linalg.solve(D.T, state.E_inv.T).T
    if not (np.all(np.isfinite(E_inv)) and np.abs(E_inv).max() < _OVERFLOW):
        raise NumericalFailure("noise factor E_k^{-1} overflowed", k=k)
    F = Sigma_v @ E_inv.T
    return NoiseFactors(k=k, E=E, E_inv=E_inv, F=F, Sigma_v=Sigma_v)


def noise_factor_track(model: MarkovNoiseModel, steps: int) -> list[NoiseFactors]:
    """Factors for ``k = 0..steps`` (they do not depend on the data)."""
    track = [noise_factors_init(model)]
    for _ in range(steps):
        track.append(noise_factors_step(track[-1], model))
    return track


def cov_v(k: int, s: int, factors_k: NoiseFactors, factors_s: NoiseFactors) -> np.ndarray:
    """``Cov[v_k, v_s] = E_k F_s^T`` for ``s <= k``."""
    if s > k:
        raise SequencingError(f"cov_v expects s <= k, got k={k}, s={s}")
    if factors_k.k != k or factors_s.k != s:
        raise SequencingError("noise factor indices do not match the requested (k, s)")
    return factors_k.E @ factors_s.F.T


def linearize(obs: ObservationFunction, k: int, x0: np.ndarray) -> LinearizedObservation:
    """First-order expansion of ``h_k`` about the nominal point ``x0``."""
    x0 = np.asarray(x0, dtype=float).reshape(obs.n_x)
    h0 = obs(k, x0)
    if not np.all(np.isfinite(h0)):
        raise EvaluationError(f"h_{k} returned a non-finite value", k=k)
    if obs.jacobian is not None:
        H = np.atleast_2d(np.asarray(obs.jacobian(k, x0), dtype=float))
        if H.shape != (obs.n_z, obs.n_x):
            raise ShapeError(f"jacobian at k={k} has shape {H.shape}")
    else:
        H = central_difference(lambda x: obs(k, x), x0)
        if not np.all(np.isfinite(H)):
            raise EvaluationError(f"h_{k} returned a non-finite value", k=k)
    return LinearizedObservation(k=k, H=H, C=h0 - H @ x0, x0=x0)


def central_difference(f: Callable[[np.ndarray], np.ndarray], x0: np.ndarray) -> np.ndarray:
    """Central-difference Jacobian with per-coordinate step ``cbrt(eps) * max(1, |x_i|)``."""
    x0 = np.asarray(x0, dtype=float)
    steps = np.cbrt(np.finfo(float).eps) * np.maximum(1.0, np.abs(x0))
    cols = []
    for i, h in enumerate(steps):
        xp, xm = x0.copy(), x0.copy()
        xp[i] += h
        xm[i] -= h
        # use the representable step actually taken
        cols.append((np.asarray(f(xp)) - np.asarray(f(xm))) / (xp[i] - xm[i]))
    return np.column_stack(cols)


def gamma_delta(k: int, H: np.ndarray, cov: CovarianceFactorization,
                factors: NoiseFactors, gamma_bar_k: float) -> GammaDelta:
    if factors.k != k:
        raise SequencingError(f"noise factors at index {factors.k}, expected {k}")
    A, B = cov.A(k), cov.B(k)
    H = np.atleast_2d(H)
    if H.shape[1] != A.shape[0] or H.shape[0] != factors.E.shape[0]:
        raise ShapeError(f"H_{k} shape {H.shape} is incompatible with the model")
    return GammaDelta(Gamma_x=gamma_bar_k * (H @ B), Gamma_v=factors.F,
                      Delta_x=gamma_bar_k * (H @ A), Delta_v=factors.E)
