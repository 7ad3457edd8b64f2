"""Acceptance gate: one PASS/FAIL line per criterion.

Run under pytest (lines are repeated in the terminal summary) or directly
with ``python tests/test_acceptance.py``.
"""

import os
import subprocess
import sys
import tempfile
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from corrfilt.estimator import (EkfPrediction, FilterState, FixedLagDriver, FixedNominal,
                                fixed_point_estimates, innovation_covariance_ekf,
                                innovation_covariance_theorem, iter_filter,
                                predicted_second_moment, prediction_error_covariances,
                                run_filter)
from corrfilt.experiment import (FIGURE_GRIDS, ScenarioConfig, build_model, build_signal,
                                 run_cell, run_sweep)
from corrfilt.model import (BernoulliSchedule, carrier_observation, central_difference, cov_v, gamma_delta,
                            linearize, noise_factor_track)
from corrfilt.oracle import kalman_three_way, random_linear_instance, run_oracle_suite
from corrfilt.simulator import GaussianSignal, RngStream, simulate_run

sys.path.insert(0, str(Path(__file__).parent))
from conftest import (ACCEPTANCE_LINES, NOISE_STEPS, carrier_linear_model,  # noqa: E402
                      empirical_cov_check)

SLACK = 0.005


def record(n: int, ok: bool, detail: str) -> bool:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def criterion_1():
    t = time.perf_counter()
    rep = run_oracle_suite(instances=50, seed=0, mode="theorem")
    dt = time.perf_counter() - t
    ok = rep.max_deviation <= 1e-8 and dt < 10
    return record(1, ok, f"oracle equivalence over {rep.instances} instances / {rep.comparisons} "
                         f"comparisons, max scaled deviation filter {rep.max_filter_deviation:.2e} "
                         f"smoother {rep.max_smoother_deviation:.2e} (<= 1e-8), {dt:.1f}s (< 10s)")


def criterion_2():
    t = time.perf_counter()
    devs = kalman_three_way(steps=30, seed=0)
    dt = time.perf_counter() - t
    ok = max(devs) <= 1e-6 and dt < 1
    return record(2, ok, "Kalman three-way max deviations est-kal {:.1e}, oracle-kal {:.1e}, "
                         "est-oracle {:.1e} (<= 1e-6), {:.2f}s (< 1s)".format(*devs, dt))


def _all_estimates(model, policy, steps, seed):
    traj = simulate_run(model, steps, RngStream(seed), GaussianSignal(model.cov))
    run = run_filter(traj.y, model, policy)
    out = [run.x_filt]
    for k in range(1, steps + 1):
        out.append(fixed_point_estimates(run, k, model.cov))
    driver = FixedLagDriver(2, model.cov)
    for state, rec, o in zip(run.states, run.records, run.outputs):
        out.extend(est for _, est in driver.push(state, rec, o))
    return np.concatenate([np.ravel(a) for a in out])


def criterion_3():
    zero = FixedNominal(lambda k: np.zeros(1))
    nonzero = 0
    checked = 0
    for lb, gb in ((1.0, 0.7), (1.0, 0.0), (0.3, 0.0), (0.0, 0.0)):
        model = build_model(ScenarioConfig(gamma_bar=gb, lambda_bar=lb, sigma_u=0.01))
        for policy in (EkfPrediction(), zero):
            est = _all_estimates(model, policy, 25, seed=int(10 * lb + gb * 100))
            nonzero += int(np.count_nonzero(est))
            checked += est.size
    rng = np.random.default_rng(5)
    for i in range(20):
        inst = random_linear_instance(rng)
        m = inst.model
        gb, lb = (0.0, float(rng.choice([0.0, 0.3, 0.7]))) if i % 2 else (0.7, 1.0)
        m = replace(m, schedule=BernoulliSchedule.constant(gb, lb))
        est = _all_estimates(m, FixedNominal(lambda k, n=m.cov.n_x: np.zeros(n)),
                             inst.horizon, seed=i)
        nonzero += int(np.count_nonzero(est))
        checked += est.size
    return record(3, nonzero == 0, f"degenerate collapses (lambda_bar=1, gamma_bar=0): "
                                   f"{nonzero} nonzero of {checked} filter/smoother values")


def criterion_4():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        inst = random_linear_instance(rng)
        m = inst.model
        k = int(rng.integers(1, inst.horizon + 1))
        gb, lb = rng.uniform(0, 1, 2)
        track = noise_factor_track(m.noise, k)
        p, n_z = m.cov.p, m.obs.n_z
        Z = rng.standard_normal((p + n_z, p + n_z))
        T = 0.1 * Z @ Z.T
        state = FilterState(k=k - 1, e_x=rng.standard_normal(p), e_v=rng.standard_normal(n_z),
                            T_xx=T[:p, :p], T_xv=T[:p, p:], T_vv=T[p:, p:],
                            noise_factors=track[k - 1])
        lin = linearize(m.obs, k, rng.standard_normal(m.cov.n_x))
        gd = gamma_delta(k, lin.H, m.cov, track[k], gb)
        Sw = m.attack.Sigma_w(k)
        theo = innovation_covariance_theorem(state, gd, lin, m.cov, track[k], gb, lb, Sw)
        A = m.cov.A(k)
        outer = lin.H @ A @ state.T_xx @ A.T @ lin.H.T + np.outer(lin.C, lin.C)
        _, _, err_z = prediction_error_covariances(state, lin, m.cov, track[k], gb,
                                                   A @ state.e_x, expected_outer=outer)
        ekf = innovation_covariance_ekf(None, err_z, lb, Sw,
                                        zz=predicted_second_moment(gd, state, lin.C, gb))
        worst = max(worst, np.abs(ekf - theo).max() / max(np.abs(theo).max(), 1e-300))
    return record(4, worst <= 1e-10, f"theorem/EKF innovation-covariance bridge on 100 random "
                                     f"states, max relative deviation {worst:.2e} (<= 1e-10)")


def criterion_5(noise_samples=None):
    model = build_model(ScenarioConfig())
    track = noise_factor_track(model.noise, 50)
    D, Su, Sv0 = 0.75, 0.01, 0.1
    var = [Sv0]
    for _ in range(50):
        var.append(D * var[-1] * D + Su)
    worst_id = 0.0
    for k in range(51):
        for s in range(k + 1):
            ref = D ** (k - s) * var[s]
            worst_id = max(worst_id, abs(cov_v(k, s, track[k], track[s])[0, 0] - ref) / ref)
    if noise_samples is None:
        from conftest import NOISE_RUNS
        sig = build_signal(ScenarioConfig())
        noise_samples = np.array([simulate_run(model, NOISE_STEPS, RngStream(99, r), sig).v[:, 0]
                                  for r in range(NOISE_RUNS)])
    worst_se = empirical_cov_check(noise_samples,
                                   lambda k, s: cov_v(k, s, track[k], track[s])[0, 0])
    ok = worst_id <= 1e-10 and worst_se <= 3.0
    return record(5, ok, f"noise factorization identity over s<=k<=50 max rel err {worst_id:.1e} "
                         f"(<= 1e-10); empirical Cov(v_k,v_s) over {noise_samples.shape[0]} runs, "
                         f"worst {worst_se:.2f} SE (<= 3)")


def criterion_6():
    t = time.perf_counter()
    res = run_cell(ScenarioConfig())
    dt = time.perf_counter() - t
    excess = float(np.max(res.smoother.values - res.filter.values))
    ok = excess <= 0.01 and res.smoother.mean < res.filter.mean and dt < 60
    return record(6, ok, f"Figure 1 cell (S=1000, K=50): max_k(smoother-filter) {excess:+.4f} "
                         f"(<= 0.01), mean smoother {res.smoother.mean:.4f} < filter "
                         f"{res.filter.mean:.4f}, {dt:.1f}s (< 60s)")


def _trend_violations(rows, along, group, sign):
    """Worst slack violation of a monotone trend; sign=+1 non-decreasing, -1 non-increasing."""
    worst = []
    for g in sorted({getattr(r, group) for r in rows}):
        curve = sorted((r for r in rows if getattr(r, group) == g), key=lambda r: getattr(r, along))
        for est in ("mean_rmse_filter", "mean_rmse_smoother"):
            vals = np.array([getattr(r, est) for r in curve])
            steps = sign * np.diff(vals)
            i = int(np.argmin(steps))
            worst.append((float(steps[i]), f"{est.split('_')[-1]} {group}={g} "
                                           f"{along} {getattr(curve[i], along)}->"
                                           f"{getattr(curve[i + 1], along)}"))
    return min(worst)


def criterion_7():
    cfg = ScenarioConfig(runs=200)
    t = time.perf_counter()
    fig2 = run_sweep(cfg, FIGURE_GRIDS[2]["gamma"], FIGURE_GRIDS[2]["lambda"])
    fig3 = run_sweep(cfg, FIGURE_GRIDS[3]["gamma"], FIGURE_GRIDS[3]["lambda"])
    dt = time.perf_counter() - t
    d_lam, where_lam = _trend_violations(fig2, "lambda_bar", "gamma_bar", +1)
    d_gam, where_gam = _trend_violations(fig3, "gamma_bar", "lambda_bar", -1)
    by = {(r.gamma_bar, r.lambda_bar): r for r in fig2}
    dom = [(by[(0.9, lb)].mean_rmse_filter < by[(0.7, lb)].mean_rmse_filter
            and by[(0.9, lb)].mean_rmse_smoother < by[(0.7, lb)].mean_rmse_smoother)
           for lb in FIGURE_GRIDS[2]["lambda"] if lb <= 0.5]
    ok = d_lam >= -SLACK and d_gam >= -SLACK and all(dom) and dt < 300
    return record(7, ok, f"sweep trends (S=200): worst lambda step {d_lam:+.4f} at {where_lam}; "
                         f"worst gamma step {d_gam:+.4f} at {where_gam} (each >= -{SLACK}); "
                         f"gamma 0.9 below 0.7 at {sum(dom)}/{len(dom)} lambda<=0.5; {dt:.0f}s")


def criterion_8():
    obs = carrier_observation()
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(100):
        k, x = int(rng.integers(1, 10_000)), rng.uniform(-2 * np.pi, 2 * np.pi, 1)
        J = obs.jacobian(k, x)
        fd = central_difference(lambda u: obs(k, u), x)
        worst = max(worst, float(np.abs(J - fd).max() / max(1.0, np.abs(J).max())))
    return record(8, worst < 1e-6, f"carrier Jacobian vs central differences at 100 points, "
                                   f"max relative error {worst:.1e} (< 1e-6)")


def criterion_9():
    outputs = []
    with tempfile.TemporaryDirectory() as tmp:
        for i, threads in enumerate(("1", "1", "2")):
            out = Path(tmp) / f"run{i}"
            env = dict(os.environ, CORRFILT_THREADS=threads)
            proc = subprocess.run([sys.executable, "-m", "corrfilt", "reproduce", "--figure", "1",
                                   "--seed", "7", "--out-dir", str(out)],
                                  capture_output=True, env=env)
            if proc.returncode != 0:
                return record(9, False, f"reproduce exited {proc.returncode}: "
                                        f"{proc.stderr.decode().strip()}")
            outputs.append((out / "figure1.csv").read_bytes())
    rows = outputs[0].count(b"\n") - 1
    ok = len(set(outputs)) == 1 and rows == 50
    return record(9, ok, f"reproduce --figure 1 --seed 7 at threads 1,1,2: "
                         f"{len(set(outputs))} distinct CSV(s), {rows} data rows")


def criterion_10():
    runs, steps = 10_000, 10
    model = carrier_linear_model()
    signal = build_signal(ScenarioConfig())
    track = noise_factor_track(model.noise, steps)
    zero = FixedNominal(lambda k: np.zeros(1))
    eta = np.empty((runs, steps))
    for r in range(runs):
        traj = simulate_run(model, steps, RngStream(10, r), signal)
        for state, rec, _ in iter_filter(traj.y, model, zero, "theorem", noise_track=track):
            eta[r, state.k - 1] = rec.eta[0]
    corr = np.corrcoef(eta, rowvar=False)
    off = float(np.max(np.abs(corr - np.diag(np.diag(corr)))))
    z = np.abs(eta.mean(axis=0)) / (eta.std(axis=0, ddof=1) / np.sqrt(runs))
    ok = off <= 0.05 and float(z.max()) <= 4
    return record(10, ok, f"innovation whiteness over {runs} runs: max |corr(eta_j, eta_k)| "
                          f"{off:.3f} (<= 0.05), max |mean|/SE {z.max():.2f} (<= 4)")


def test_criterion_1_oracle_equivalence():
    assert criterion_1()


def test_criterion_2_kalman_agreement():
    assert criterion_2()


def test_criterion_3_degenerate_collapses():
    assert criterion_3()


def test_criterion_4_form_bridge():
    assert criterion_4()


def test_criterion_5_noise_factorization(noise_samples):
    assert criterion_5(noise_samples)


def test_criterion_6_figure1_protocol():
    assert criterion_6()


def test_criterion_7_sweep_trends():
    assert criterion_7()


def test_criterion_8_jacobian():
    assert criterion_8()


def test_criterion_9_cli_determinism():
    assert criterion_9()


def test_criterion_10_innovation_whiteness():
    assert criterion_10()


if __name__ == "__main__":
    checks = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6,
              criterion_7, criterion_8, criterion_9, criterion_10]
    passed = sum(bool(c()) for c in checks)
    print(f"{passed}/{len(checks)} criteria passed")
    sys.exit(0 if passed == len(checks) else 1)
