"""Recursive least-squares filter and fixed-point smoother.

The filter never uses a state-space model of the signal. It propagates the
vectors ``e^x_k, e^v_k`` and the matrices ``T^{ab}_k = E[e^a_k e^b_k^T]``
so that

    x_{k/k}   = A_k e^x_k
    x_{k/k-1} = A_k e^x_{k-1}
    v_{k/k-1} = E_k e^v_{k-1}

Two forms of the innovation covariance are available. The *theorem* form
uses the expectation of the prediction outer product; the *ekf* form uses
the realized one-step prediction and the prediction-error covariances.
Every ``(Sigma^eta)^{-1}`` application goes through one Cholesky factor per
step, shared by the filter and all live smoothers.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Literal, Optional, Sequence

import numpy as np
from scipy.linalg import cho_solve

from .errors import NumericalFailure, SequencingError, ShapeError
from .model import (CovarianceFactorization, GammaDelta, LinearizedObservation,
                    Model, NoiseFactors, gamma_delta, linearize,
                    noise_factors_init, noise_factors_step, symmetrize)

Mode = Literal["theorem", "ekf"]

#: Jitter (relative to the trace) used to repair a non-SPD innovation covariance.
JITTER = 1e-12
#: Smallest eigenvalue (relative to the trace) still considered repairable.
REPAIR_LIMIT = -1e-6


@dataclass(frozen=True)
class EkfPrediction:
    """Linearize about the one-step prediction ``A_k e^x_{k-1}``."""


@dataclass(frozen=True)
class FixedNominal:
    """Linearize about a known nominal trajectory ``k -> x^0_k``."""

    trajectory: Callable[[int], np.ndarray]


LinearizationPolicy = EkfPrediction | FixedNominal


def default_mode(policy: LinearizationPolicy) -> Mode:
    return "ekf" if isinstance(policy, EkfPrediction) else "theorem"


@dataclass(frozen=True)
class FilterState:
    k: int
    e_x: np.ndarray
    e_v: np.ndarray
    T_xx: np.ndarray
    T_xv: np.ndarray
    T_vv: np.ndarray
    noise_factors: NoiseFactors
    n_jitter: int = 0


@dataclass(frozen=True)
class InnovationRecord:
    """Per-step quantities reused by the fixed-point smoother.

    ``w_eta``, ``w_psi_x`` and ``w_psi_v`` hold ``Sigma_eta^{-1} eta``,
    ``Sigma_eta^{-1} Psi_x^T`` and ``Sigma_eta^{-1} Psi_v^T``.
    """

    k: int
    eta: np.ndarray
    Sigma_eta: np.ndarray
    Psi_x: np.ndarray
    Psi_v: np.ndarray
    Delta_x: np.ndarray
    Delta_v: np.ndarray
    z_pred: np.ndarray
    lambda_bar: float
    w_eta: np.ndarray
    w_psi_x: np.ndarray
    w_psi_v: np.ndarray
    jittered: bool = False


@dataclass(frozen=True)
class FilterOutput:
    k: int
    x_filt: np.ndarray
    x_pred: np.ndarray
    v_pred: np.ndarray
    err_cov_x_pred: np.ndarray
    err_cov_v_pred: np.ndarray
    err_cov_z_pred: np.ndarray


def filter_init(model: Model) -> FilterState:
    p, n_z = model.cov.p, model.obs.n_z
    return FilterState(k=0, e_x=np.zeros(p), e_v=np.zeros(n_z),
                       T_xx=np.zeros((p, p)), T_xv=np.zeros((p, n_z)),
                       T_vv=np.zeros((n_z, n_z)),
                       noise_factors=noise_factors_init(model.noise))


def predict(state: FilterState, cov: CovarianceFactorization,
            lin: LinearizedObservation, gamma_bar_k: float,
            factors_k: NoiseFactors) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One-step predictions ``(x_{k/k-1}, v_{k/k-1}, z_{k/k-1})``."""
    k = state.k + 1
    if lin.k != k or factors_k.k != k:
        raise SequencingError(f"state at k={state.k} cannot be combined with "
                              f"linearization at {lin.k} / noise factors at {factors_k.k}")
    x_pred = cov.A(k) @ state.e_x
    v_pred = factors_k.E @ state.e_v
    z_pred = gamma_bar_k * (lin.H @ x_pred + lin.C) + v_pred
    return x_pred, v_pred, z_pred


def innovation(y_k: np.ndarray, z_pred: np.ndarray, lambda_bar_k: float) -> np.ndarray:
    return np.asarray(y_k, dtype=float) - (1.0 - lambda_bar_k) * z_pred


def psi(gd: GammaDelta, state: FilterState,
        lambda_bar_k: float) -> tuple[np.ndarray, np.ndarray]:
    """``Psi^a = (1 - lambda_bar)(Gamma^a - Delta^x T^{xa} - Delta^v T^{va})^T``."""
    if gd.Delta_x.shape[1] != state.T_xx.shape[0] or gd.Delta_v.shape[1] != state.T_vv.shape[0]:
        raise ShapeError("GammaDelta and filter state dimensions disagree")
    scale = 1.0 - lambda_bar_k
    Psi_x = scale * (gd.Gamma_x - gd.Delta_x @ state.T_xx - gd.Delta_v @ state.T_xv.T).T
    Psi_v = scale * (gd.Gamma_v - gd.Delta_x @ state.T_xv - gd.Delta_v @ state.T_vv).T
    return Psi_x, Psi_v


def predicted_second_moment(gd: GammaDelta, state: FilterState, C: np.ndarray,
                            gamma_bar_k: float) -> np.ndarray:
    """``E[z_{k/k-1} z_{k/k-1}^T]`` from the ``T`` matrices at ``k-1``."""
    DxTxv = gd.Delta_x @ state.T_xv @ gd.Delta_v.T
    return symmetrize(gd.Delta_x @ state.T_xx @ gd.Delta_x.T + DxTxv + DxTxv.T
                      + gd.Delta_v @ state.T_vv @ gd.Delta_v.T
                      + gamma_bar_k ** 2 * np.outer(C, C))


def innovation_covariance_theorem(state: FilterState, gd: GammaDelta,
                                  lin: LinearizedObservation,
                                  cov: CovarianceFactorization, factors_k: NoiseFactors,
                                  gamma_bar_k: float, lambda_bar_k: float,
                                  Sigma_w_k: np.ndarray) -> np.ndarray:
    """Expectation-form ``Sigma^eta_k`` (returned symmetrized, not yet regularized)."""
    k = state.k + 1
    H, C = lin.H, lin.C
    Sigma_z = (gamma_bar_k * (H @ cov.A(k) @ cov.B(k).T @ H.T + np.outer(C, C))
               + factors_k.E @ factors_k.F.T)
    Sigma_y = (1.0 - lambda_bar_k) * Sigma_z + lambda_bar_k * Sigma_w_k
    zz = predicted_second_moment(gd, state, C, gamma_bar_k)
    return symmetrize(Sigma_y - (1.0 - lambda_bar_k) ** 2 * zz)


def prediction_error_covariances(state: FilterState, lin: LinearizedObservation,
                                 cov: CovarianceFactorization, factors_k: NoiseFactors,
                                 gamma_bar_k: float, x_pred: np.ndarray,
                                 cross_terms: bool = True,
                                 expected_outer: Optional[np.ndarray] = None):
    """Prediction-error covariances of ``x``, ``v`` and ``z`` at time ``k``.

    The observation term uses the realized ``(H x_pred + C)`` outer product,
    which equals ``h_k(x_pred) h_k(x_pred)^T`` under EKF linearization;
    pass ``expected_outer`` to substitute its expectation instead.

    With ``cross_terms`` the ``-gamma_bar (H A T^{xv} E^T + transpose)``
    contribution of ``E[x~ v~^T] = -A T^{xv} E^T`` is included; without it
    the covariance of ``z~`` is exact only while ``T^{xv} = 0``.
    """
    k = state.k + 1
    A, E, H = cov.A(k), factors_k.E, lin.H
    err_x = symmetrize(A @ cov.B(k).T - A @ state.T_xx @ A.T)
    err_v = symmetrize(E @ factors_k.F.T - E @ state.T_vv @ E.T)
    if expected_outer is None:
        m = H @ x_pred + lin.C
        expected_outer = np.outer(m, m)
    err_z = (gamma_bar_k * H @ err_x @ H.T
             + gamma_bar_k * (1.0 - gamma_bar_k) * expected_outer + err_v)
    if cross_terms:
        cross = H @ A @ state.T_xv @ E.T
        err_z = err_z - gamma_bar_k * (cross + cross.T)
    return err_x, err_v, symmetrize(err_z)


def innovation_covariance_ekf(z_pred: np.ndarray, err_cov_z_pred: np.ndarray,
                              lambda_bar_k: float, Sigma_w_k: np.ndarray,
                              zz: Optional[np.ndarray] = None) -> np.ndarray:
    """Realized-prediction form of ``Sigma^eta_k``.

    ``zz`` replaces the realized ``z_pred z_pred^T`` when given.
    """
    if zz is None:
        zz = np.outer(z_pred, z_pred)
    lb = lambda_bar_k
    return symmetrize((1.0 - lb) * err_cov_z_pred + lb * (1.0 - lb) * zz + lb * Sigma_w_k)


def factor_spd(S: np.ndarray, k: int | None = None) -> tuple[np.ndarray, np.ndarray, bool]:
    """Cholesky factor of a symmetric matrix, repairing tiny indefiniteness.

    Returns ``(L, S_used, jittered)``. If the plain factorization fails and
    the smallest eigenvalue is above ``REPAIR_LIMIT * trace``, the diagonal
    is lifted so the smallest eigenvalue becomes ``JITTER * trace``.
    """
    S = symmetrize(S)
    tr = float(np.trace(S))
    if not np.all(np.isfinite(S)) or tr <= 0.0:
        raise NumericalFailure("innovation covariance is zero or non-finite", k=k)
    try:
        return np.linalg.cholesky(S), S, False
    except np.linalg.LinAlgError:
        pass
    lam = float(np.linalg.eigvalsh(S).min())
    if lam < REPAIR_LIMIT * tr:
        raise NumericalFailure(
            f"innovation covariance is indefinite (min eigenvalue {lam:.3e}, trace {tr:.3e})", k=k)
    S = S + (JITTER * tr - min(lam, 0.0)) * np.eye(S.shape[0])
    try:
        return np.linalg.cholesky(S), S, True
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure("innovation covariance could not be repaired", k=k) from exc


def filter_step(state: FilterState, y_k, model: Model,
                policy: LinearizationPolicy = EkfPrediction(),
                mode: Optional[Mode] = None, cross_terms: bool = True,
                factors_k: Optional[NoiseFactors] = None
                ) -> tuple[FilterState, InnovationRecord, FilterOutput]:
    """Advance the filter from ``k-1`` to ``k`` with observation ``y_k``.

    ``factors_k`` may carry precomputed noise factors for index ``k``
    (they are data independent); otherwise they are advanced here.
    """
    k = state.k + 1
    mode = mode or default_mode(policy)
    n_z = model.obs.n_z
    y_k = np.asarray(y_k, dtype=float).reshape(-1)
    if y_k.shape != (n_z,):
        raise ShapeError(f"y_{k} has {y_k.size} entries, expected {n_z}")
    if factors_k is None:
        factors_k = noise_factors_step(state.noise_factors, model.noise)
    elif factors_k.k != k:
        raise SequencingError(f"noise factors at index {factors_k.k}, expected {k}")

    gb = float(model.schedule.gamma_bar(k))
    lb = float(model.schedule.lambda_bar(k))
    cov = model.cov
    A = cov.A(k)
    x_prior = A @ state.e_x
    x0 = x_prior if isinstance(policy, EkfPrediction) else policy.trajectory(k)
    lin = linearize(model.obs, k, x0)
    gd = gamma_delta(k, lin.H, cov, factors_k, gb)
    Psi_x, Psi_v = psi(gd, state, lb)
    x_pred, v_pred, z_pred = predict(state, cov, lin, gb, factors_k)
    if isinstance(policy, EkfPrediction):
        # exact at the expansion point; avoids the H x0 + C round trip
        z_pred = gb * model.obs(k, x0) + v_pred
    eta = innovation(y_k, z_pred, lb)

    Sigma_w = model.attack.Sigma_w(k)
    err_x, err_v, err_z = prediction_error_covariances(
        state, lin, cov, factors_k, gb, x_pred, cross_terms=cross_terms)
    if mode == "ekf":
        Sigma_eta = innovation_covariance_ekf(z_pred, err_z, lb, Sigma_w)
    elif mode == "theorem":
        Sigma_eta = innovation_covariance_theorem(state, gd, lin, cov, factors_k, gb, lb, Sigma_w)
    else:
        raise ValueError(f"unknown mode {mode!r}")

    L, Sigma_eta, jittered = factor_spd(Sigma_eta, k)
    p = Psi_x.shape[0]
    solved = cho_solve((L, True), np.column_stack([eta, Psi_x.T, Psi_v.T]),
                       check_finite=False)
    w_eta, w_psi_x, w_psi_v = solved[:, 0], solved[:, 1:1 + p], solved[:, 1 + p:]

    e_x = state.e_x + Psi_x @ w_eta
    e_v = state.e_v + Psi_v @ w_eta
    T_xx = symmetrize(state.T_xx + Psi_x @ w_psi_x)
    T_xv = state.T_xv + Psi_x @ w_psi_v
    T_vv = symmetrize(state.T_vv + Psi_v @ w_psi_v)
    if not (np.all(np.isfinite(e_x)) and np.all(np.isfinite(T_xx))):
        raise NumericalFailure("filter recursion produced non-finite values", k=k)

    new_state = FilterState(k=k, e_x=e_x, e_v=e_v, T_xx=T_xx, T_xv=T_xv, T_vv=T_vv,
                            noise_factors=factors_k,
                            n_jitter=state.n_jitter + int(jittered))
    record = InnovationRecord(k=k, eta=eta, Sigma_eta=Sigma_eta, Psi_x=Psi_x, Psi_v=Psi_v,
                              Delta_x=gd.Delta_x, Delta_v=gd.Delta_v, z_pred=z_pred,
                              lambda_bar=lb, w_eta=w_eta, w_psi_x=w_psi_x,
                              w_psi_v=w_psi_v, jittered=jittered)
    output = FilterOutput(k=k, x_filt=A @ e_x, x_pred=x_pred, v_pred=v_pred,
                          err_cov_x_pred=err_x, err_cov_v_pred=err_v, err_cov_z_pred=err_z)
    return new_state, record, output


@dataclass
class FixedPointSmoother:
    """Running estimate ``x_{k/L}`` of the signal at the fixed time ``k_fixed``."""

    k_fixed: int
    L: int
    x_smooth: np.ndarray
    M_x: np.ndarray
    M_v: np.ndarray
    B_k: np.ndarray
    A_k: np.ndarray


def smoother_init(k: int, state: FilterState, x_filt: np.ndarray,
                  cov: CovarianceFactorization) -> FixedPointSmoother:
    if state.k != k:
        raise SequencingError(f"filter state is at k={state.k}, smoother fixed point is {k}")
    A = cov.A(k)
    return FixedPointSmoother(k_fixed=k, L=k, x_smooth=np.array(x_filt, dtype=float),
                              M_x=A @ state.T_xx, M_v=A @ state.T_xv, B_k=cov.B(k), A_k=A)


def smoother_gain(sm: FixedPointSmoother, rec: InnovationRecord) -> np.ndarray:
    """``S^x_{k,L} = E[x_k eta_L^T]`` for ``L > k``."""
    return (1.0 - rec.lambda_bar) * ((sm.B_k - sm.M_x) @ rec.Delta_x.T - sm.M_v @ rec.Delta_v.T)


def smoother_update(sm: FixedPointSmoother, rec: InnovationRecord) -> FixedPointSmoother:
    """Fold the innovation at ``L = sm.L + 1`` into the fixed-point estimate."""
    if rec.k != sm.L + 1:
        raise SequencingError(f"smoother at L={sm.L} received the record for k={rec.k}")
    S = smoother_gain(sm, rec)
    return FixedPointSmoother(k_fixed=sm.k_fixed, L=rec.k,
                              x_smooth=sm.x_smooth + S @ rec.w_eta,
                              M_x=sm.M_x + S @ rec.w_psi_x,
                              M_v=sm.M_v + S @ rec.w_psi_v,
                              B_k=sm.B_k, A_k=sm.A_k)


class FixedLagDriver:
    """Turns a stream of filter steps into fixed-lag estimates ``x_{k/k+h}``.

    At most ``h + 1`` fixed-point smoothers are alive at any time. ``push``
    returns the estimates that became final with the step just supplied.
    """

    def __init__(self, lag: int, cov: CovarianceFactorization):
        if lag < 0:
            raise ValueError("lag must be non-negative")
        self.lag = lag
        self.cov = cov
        self._live: OrderedDict[int, FixedPointSmoother] = OrderedDict()

    def push(self, state: FilterState, record: InnovationRecord,
             output: FilterOutput) -> list[tuple[int, np.ndarray]]:
        if self.lag == 0:
            return [(output.k, output.x_filt)]
        done = []
        for k in list(self._live):
            sm = smoother_update(self._live[k], record)
            if sm.L - k >= self.lag:
                done.append((k, sm.x_smooth))
                del self._live[k]
            else:
                self._live[k] = sm
        self._live[state.k] = smoother_init(state.k, state, output.x_filt, self.cov)
        return done

    def pending(self) -> list[tuple[int, int, np.ndarray]]:
        """``(k, L, x_{k/L})`` for times still short of the full lag."""
        return [(k, sm.L, sm.x_smooth) for k, sm in self._live.items()]


def fixed_lag_driver(lag: int, steps: Iterable[tuple[FilterState, InnovationRecord, FilterOutput]],
                     cov: CovarianceFactorization) -> Iterator[tuple[int, np.ndarray]]:
    driver = FixedLagDriver(lag, cov)
    for step in steps:
        yield from driver.push(*step)


@dataclass
class FilterRun:
    states: list[FilterState] = field(default_factory=list)
    records: list[InnovationRecord] = field(default_factory=list)
    outputs: list[FilterOutput] = field(default_factory=list)

    @property
    def x_filt(self) -> np.ndarray:
        return np.array([o.x_filt for o in self.outputs])

    @property
    def x_pred(self) -> np.ndarray:
        return np.array([o.x_pred for o in self.outputs])


def iter_filter(ys: Sequence, model: Model, policy: LinearizationPolicy = EkfPrediction(),
                mode: Optional[Mode] = None, cross_terms: bool = True,
                noise_track: Optional[Sequence[NoiseFactors]] = None
                ) -> Iterator[tuple[FilterState, InnovationRecord, FilterOutput]]:
    """Yield ``(state, record, output)`` for each observation in ``ys``."""
    state = filter_init(model) if noise_track is None else _init_from_track(model, noise_track)
    for i, y in enumerate(ys):
        factors = None if noise_track is None else noise_track[i + 1]
        state, rec, out = filter_step(state, y, model, policy, mode, cross_terms, factors)
        yield state, rec, out


def _init_from_track(model: Model, track: Sequence[NoiseFactors]) -> FilterState:
    state = filter_init(model)
    return FilterState(k=0, e_x=state.e_x, e_v=state.e_v, T_xx=state.T_xx, T_xv=state.T_xv,
                       T_vv=state.T_vv, noise_factors=track[0])


def run_filter(ys: Sequence, model: Model, policy: LinearizationPolicy = EkfPrediction(),
               mode: Optional[Mode] = None, cross_terms: bool = True) -> FilterRun:
    run = FilterRun()
    for state, rec, out in iter_filter(ys, model, policy, mode, cross_terms):
        run.states.append(state)
        run.records.append(rec)
        run.outputs.append(out)
    return run


def fixed_point_estimates(run: FilterRun, k: int, cov: CovarianceFactorization) -> np.ndarray:
    """``x_{k/L}`` for ``L = k .. len(run)`` from a completed filter run."""
    sm = smoother_init(k, run.states[k - 1], run.outputs[k - 1].x_filt, cov)
    out = [sm.x_smooth]
    for rec in run.records[k:]:
        sm = smoother_update(sm, rec)
        out.append(sm.x_smooth)
    return np.array(out)
