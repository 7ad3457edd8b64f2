"""Monte Carlo RMSE harness for the phase-demodulation scenario.

A *cell* is one ``(gamma_bar, lambda_bar)`` setting simulated ``runs``
times. Every replication owns its random streams, so results do not
depend on how replications are spread over worker processes; per-run
errors land in preallocated slots and are reduced in run order.
"""

from __future__ import annotations

import csv
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from . import __version__
from .errors import ConfigError, NumericalFailure
from .estimator import EkfPrediction, FixedLagDriver, FixedNominal, iter_filter
from .model import (AttackNoiseModel, BernoulliSchedule, MarkovNoiseModel, Model,
                    carrier_observation, constant, noise_factor_track)
from .simulator import AR2Params, AR2Signal, RngStream, ar2_factorization, simulate_run

DEFAULT_SEED = 20240319
THREADS_ENV = "CORRFILT_THREADS"
MAX_STEPS = 10_000

GRID = tuple(i / 10 for i in range(1, 10))
FIGURE_GRIDS = {
    2: {"gamma": (0.7, 0.9), "lambda": GRID},
    3: {"gamma": GRID, "lambda": (0.1, 0.3)},
}


@dataclass(frozen=True)
class ScenarioConfig:
    # signal
    b1: float = 0.1
    b2: float = -0.5
    sigma2: float = 0.25
    init: str = "stationary"
    q_form: str = "stationary"
    # observation
    f_p: float = 10.0
    delta: float = 0.01
    m_a: float = 2.0
    # noise
    D: float = 0.75
    sigma_u: float = 0.01
    sigma_v0: float = 0.1
    dist: str = "gaussian"
    # attacks
    sigma_w: float = 1.0
    # experiment
    steps: int = 50
    runs: int = 1000
    gamma_bar: float = 0.7
    lambda_bar: float = 0.3
    lag: int = 2
    seed: int = DEFAULT_SEED
    mode: Optional[str] = None
    policy: str = "ekf"
    nominal: float = 0.0
    tail: str = "extend"
    cross_terms: bool = True
    cell_seeds: str = "independent"

    def validate(self) -> "ScenarioConfig":
        def need(cond, key, msg):
            if not cond:
                raise ConfigError(f"{key}: {msg}", key=key)

        need(1 <= self.steps <= MAX_STEPS, "steps", f"must be in [1, {MAX_STEPS}]")
        need(self.runs >= 1, "runs", "must be at least 1")
        need(self.lag >= 0, "lag", "must be non-negative")
        need(self.steps + self.lag <= MAX_STEPS, "lag", "steps + lag exceeds the horizon cap")
        for key in ("gamma_bar", "lambda_bar"):
            val = getattr(self, key)
            need(0.0 <= val <= 1.0, key, f"{val} is not a probability in [0, 1]")
        for key in ("sigma2", "sigma_w"):
            need(getattr(self, key) > 0, key, "must be positive")
        for key in ("sigma_u", "sigma_v0"):
            need(getattr(self, key) >= 0, key, "must be non-negative")
        need(self.D != 0, "D", "the noise transition must be nonsingular")
        need(0 <= self.seed < 2 ** 64, "seed", "must be an unsigned 64-bit integer")
        need(self.init in ("stationary", "paper-transient"), "init",
             "must be 'stationary' or 'paper-transient'")
        need(self.q_form in ("stationary", "paper"), "q_form", "must be 'stationary' or 'paper'")
        need(self.dist in ("gaussian", "uniform"), "dist", "must be 'gaussian' or 'uniform'")
        need(self.mode in (None, "theorem", "ekf"), "mode", "must be 'theorem' or 'ekf'")
        need(self.policy in ("ekf", "fixed"), "policy", "must be 'ekf' or 'fixed'")
        need(self.tail in ("extend", "truncate"), "tail", "must be 'extend' or 'truncate'")
        need(self.cell_seeds in ("independent", "common"), "cell_seeds",
             "must be 'independent' or 'common'")
        try:
            AR2Params(self.b1, self.b2, self.sigma2)
        except ValueError as exc:
            raise ConfigError(f"b1/b2: {exc}", key="b1") from exc
        return self

    @property
    def resolved_mode(self) -> str:
        return self.mode or ("ekf" if self.policy == "ekf" else "theorem")

    @property
    def sim_steps(self) -> int:
        return self.steps + self.lag if self.tail == "extend" else self.steps


def build_model(cfg: ScenarioConfig) -> Model:
    params = AR2Params(cfg.b1, cfg.b2, cfg.sigma2)
    return Model(cov=ar2_factorization(params, cfg.q_form),
                 obs=carrier_observation(cfg.f_p, cfg.delta, cfg.m_a),
                 noise=MarkovNoiseModel(D=constant(cfg.D), Sigma_u=constant(cfg.sigma_u),
                                        Sigma_v0=np.array([[cfg.sigma_v0]])),
                 schedule=BernoulliSchedule.constant(cfg.gamma_bar, cfg.lambda_bar),
                 attack=AttackNoiseModel(constant(cfg.sigma_w)))


def build_signal(cfg: ScenarioConfig) -> AR2Signal:
    return AR2Signal(AR2Params(cfg.b1, cfg.b2, cfg.sigma2), init=cfg.init)


def build_policy(cfg: ScenarioConfig):
    if cfg.policy == "ekf":
        return EkfPrediction()
    nominal = np.array([cfg.nominal])
    return FixedNominal(lambda k: nominal)


@dataclass(frozen=True)
class RmseSeries:
    label: str
    k: np.ndarray
    values: np.ndarray

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))


def rmse(errors: np.ndarray, label: str = "", k: Optional[Sequence[int]] = None) -> RmseSeries:
    """Per-time RMSE over runs; ``errors`` has shape ``(runs, K)`` (or ``(runs, K, n_x)``)."""
    errors = np.asarray(errors, dtype=float)
    if errors.ndim == 1:
        errors = errors[None, :]
    if errors.shape[0] < 1:
        raise ValueError("at least one run is required")
    sq = errors ** 2
    if sq.ndim == 3:
        sq = sq.sum(axis=2)
    values = np.sqrt(sq.mean(axis=0))
    k = np.arange(1, values.size + 1) if k is None else np.asarray(k)
    return RmseSeries(label=label, k=k, values=values)


@dataclass(frozen=True)
class CellResult:
    filter: RmseSeries
    smoother: RmseSeries
    lag: int
    gamma_bar: float
    lambda_bar: float


def replicate(cfg: ScenarioConfig, run: int, model: Optional[Model] = None,
              track=None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One replication: ``(x, x_filt, x_smooth)`` for the scored times.

    ``x_smooth`` holds ``x_{k/k+lag}``; with ``tail == "truncate"`` it only
    covers ``k <= steps - lag``.
    """
    model = model or build_model(cfg)
    K = cfg.sim_steps
    if track is None:
        track = noise_factor_track(model.noise, K)
    traj = simulate_run(model, K, RngStream(cfg.seed, run), build_signal(cfg), cfg.dist)
    driver = FixedLagDriver(cfg.lag, model.cov)
    x_filt = np.empty(K)
    x_smooth = np.full(K, np.nan)
    try:
        for state, rec, out in iter_filter(traj.y, model, build_policy(cfg), cfg.resolved_mode,
                                           cfg.cross_terms, noise_track=track):
            x_filt[state.k - 1] = out.x_filt[0]
            for k, est in driver.push(state, rec, out):
                x_smooth[k - 1] = est[0]
    except NumericalFailure as exc:
        exc.run, exc.seed = run, cfg.seed
        raise
    n_s = cfg.steps if cfg.tail == "extend" else cfg.steps - cfg.lag
    return traj.x[:cfg.steps, 0], x_filt[:cfg.steps], x_smooth[:max(n_s, 0)]


def _replicate_block(cfg: ScenarioConfig, runs: range):
    model = build_model(cfg)
    track = noise_factor_track(model.noise, cfg.sim_steps)
    return [replicate(cfg, r, model, track) for r in runs]


def worker_count() -> int:
    raw = os.environ.get(THREADS_ENV, "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"{THREADS_ENV} must be an integer", key=THREADS_ENV) from exc
    if n < 0:
        raise ConfigError(f"{THREADS_ENV} must be non-negative", key=THREADS_ENV)
    return n or (os.cpu_count() or 1)


def run_cell(cfg: ScenarioConfig, workers: Optional[int] = None) -> CellResult:
    """Simulate ``cfg.runs`` replications and reduce them to RMSE series."""
    cfg.validate()
    workers = worker_count() if workers is None else workers
    S = cfg.runs
    if workers <= 1 or S < 2:
        blocks = [_replicate_block(cfg, range(S))]
    else:
        n_blocks = min(S, 4 * workers)
        edges = np.linspace(0, S, n_blocks + 1).astype(int)
        ranges = [range(a, b) for a, b in zip(edges[:-1], edges[1:]) if b > a]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            blocks = list(pool.map(_replicate_block, [cfg] * len(ranges), ranges))
    results = [r for block in blocks for r in block]
    x = np.array([r[0] for r in results])
    ef = x - np.array([r[1] for r in results])
    n_s = results[0][2].size
    es = x[:, :n_s] - np.array([r[2] for r in results])
    return CellResult(filter=rmse(ef, "filter"),
                      smoother=rmse(es, f"smoother_h{cfg.lag}"),
                      lag=cfg.lag, gamma_bar=cfg.gamma_bar, lambda_bar=cfg.lambda_bar)


def derive_seed(base_seed: int, *indices: int) -> int:
    """Independent, reproducible per-cell seed from the base seed and grid indices."""
    state = np.random.SeedSequence([int(base_seed)] + [int(i) for i in indices])
    return int(state.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class SweepRow:
    gamma_bar: float
    lambda_bar: float
    mean_rmse_filter: float
    mean_rmse_smoother: float


def run_sweep(cfg: ScenarioConfig, gammas: Iterable[float], lambdas: Iterable[float],
              workers: Optional[int] = None) -> list[SweepRow]:
    """One cell per grid point, ordered by ``gamma_bar`` then ``lambda_bar``.

    With ``cell_seeds == "common"`` every cell reuses the base seed, so the
    Bernoulli draws are coupled monotonically across the grid (a larger
    probability only adds events) and cell differences have low variance.
    """
    gammas, lambdas = list(gammas), list(lambdas)
    if not gammas or not lambdas:
        raise ConfigError("sweep grid is empty", key="grid")
    rows = []
    for gi, g in enumerate(gammas):
        for li, lb in enumerate(lambdas):
            seed = cfg.seed if cfg.cell_seeds == "common" else derive_seed(cfg.seed, gi, li)
            cell_cfg = replace(cfg, gamma_bar=g, lambda_bar=lb, seed=seed)
            res = run_cell(cell_cfg, workers)
            rows.append(SweepRow(g, lb, res.filter.mean, res.smoother.mean))
    return rows


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> int:
    n = 0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
            n += 1
    return n


def figure1_table(res: CellResult) -> tuple[list[str], list[tuple]]:
    header = ["k", "rmse_filter", f"rmse_smoother_h{res.lag}"]
    n = res.smoother.values.size
    rows = [(int(k), f, res.smoother.values[i] if i < n else float("nan"))
            for i, (k, f) in enumerate(zip(res.filter.k, res.filter.values))]
    return header, rows


def sweep_table(rows: Sequence[SweepRow], lag: int, x_axis: str) -> tuple[list[str], list[tuple]]:
    """Tidy sweep table with ``x_axis`` ("lambda_bar" or "gamma_bar") first."""
    other = "gamma_bar" if x_axis == "lambda_bar" else "lambda_bar"
    header = [x_axis, other, "mean_rmse_filter", f"mean_rmse_smoother_h{lag}"]
    ordered = sorted(rows, key=lambda r: (getattr(r, other), getattr(r, x_axis)))
    return header, [(getattr(r, x_axis), getattr(r, other), r.mean_rmse_filter,
                     r.mean_rmse_smoother) for r in ordered]


def reproduce_figure(figure: int, cfg: ScenarioConfig,
                     workers: Optional[int] = None) -> tuple[list[str], list[tuple]]:
    if figure == 1:
        return figure1_table(run_cell(cfg, workers))
    if figure not in FIGURE_GRIDS:
        raise ConfigError(f"figure must be 1, 2 or 3, got {figure}", key="figure")
    grid = FIGURE_GRIDS[figure]
    rows = run_sweep(cfg, grid["gamma"], grid["lambda"], workers)
    return sweep_table(rows, cfg.lag, "lambda_bar" if figure == 2 else "gamma_bar")


def config_dict(cfg: ScenarioConfig) -> dict:
    return {f.name: getattr(cfg, f.name) for f in fields(cfg)}


def write_manifest(path, cfg: ScenarioConfig, command: str, wall_time: float,
                   outputs: Sequence[str]) -> None:
    manifest = {
        "command": command,
        "config": config_dict(cfg),
        "seed": cfg.seed,
        "resolved_mode": cfg.resolved_mode,
        "wall_time_s": round(wall_time, 3),
        "library_version": __version__,
        "numpy_version": np.__version__,
        "outputs": list(outputs),
    }
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


class Timer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start
        return False


__all__ = ["ScenarioConfig", "RmseSeries", "CellResult", "SweepRow", "rmse", "run_cell",
           "run_sweep", "reproduce_figure", "build_model", "build_signal", "replicate",
           "derive_seed", "write_csv", "write_manifest", "asdict"]
