"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s`` to see the summary lines.
"""

import math
import time

import numpy as np

import oracles
from arekf_sim.cli import EXIT_DIVERGED, EXIT_OK, main
from arekf_sim.config import ScenarioConfig, apply_overrides, load_config, parse_config, render_config
from arekf_sim.control import settling_bound
from arekf_sim.dynamics import DEFAULT_PARAMS, PlanarElbow, inertia_bounds
from arekf_sim.estimation import (
    AdaptiveRobustEKF,
    ArekfTuning,
    ExtendedKalmanFilter,
    GaussianBelief,
    InnovationStats,
    NonlinearModel,
    numeric_jacobian,
    update_innovation_stats,
)
from arekf_sim.simulation import build_filter_model, lyapunov_decrease_margins, run_scenario

P = DEFAULT_PARAMS


def verdict(number, title, ok, detail):
    print(f"\n{'PASS' if ok else 'FAIL'} criterion {number}: {title} | {detail}")
    assert ok, detail


def true_feedback_runs(count, duration=1.0):
    """Seeded runs with true-state feedback, no noise and a disturbance of norm at most 1.5."""
    base = ScenarioConfig(
        controller_source="true",
        process_noise_true=0.0,
        measurement_noise_true=0.0,
        filter="ekf",
        duration=duration,
    )
    for s in range(count):
        rng = np.random.default_rng(1000 + s)
        d = rng.normal(size=2)
        d *= rng.uniform(0.0, base.delta) / np.linalg.norm(d)
        x0 = rng.uniform(-1.0, 1.0, 4)
        cfg = apply_overrides(
            base,
            {
                "seed": s,
                "disturbance": [float(v) for v in d],
                "disturbance_profile": "constant" if s % 2 == 0 else "sine",
                "x0": [float(v) for v in x0],
            },
        )
        yield cfg, run_scenario(cfg)


def test_dynamics_match_lagrangian_oracles():
    model = PlanarElbow(P)
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst = dict(D=0.0, C=0.0, G=0.0, skew=0.0)
    h = 1e-5
    for _ in range(1000):
        q = rng.uniform(-np.pi, np.pi, 2)
        dq = rng.uniform(-3.0, 3.0, 2)
        s = rng.normal(size=2)
        pairs = {
            "D": (model.mass_matrix(q), oracles.mass_matrix(P, q)),
            "G": (model.gravity_vector(q), oracles.gravity(P, q)),
            "C": (model.coriolis_matrix(q, dq) @ dq, oracles.coriolis_torque(P, q, dq)),
        }
        for key, (got, ref) in pairs.items():
            worst[key] = max(worst[key], np.linalg.norm(got - ref) / max(np.linalg.norm(ref), 1e-12))
        D_dot = (oracles.mass_matrix(P, q + h * dq) - oracles.mass_matrix(P, q - h * dq)) / (2 * h)
        N = D_dot - 2 * model.coriolis_matrix(q, dq)
        worst["skew"] = max(worst["skew"], abs(s @ N @ s) / (s @ s))
    elapsed = time.perf_counter() - start
    ok = max(worst["D"], worst["C"], worst["G"]) <= 1e-6 and worst["skew"] <= 1e-9 and elapsed < 5.0
    detail = ", ".join(f"{k} {v:.2e}" for k, v in worst.items()) + f", {elapsed:.2f} s"
    verdict(1, "dynamics oracle equivalence", ok, detail)


def _random_linear_system(rng):
    n = 4
    A = rng.normal(size=(n, n))
    A *= 0.9 / max(abs(np.linalg.eigvals(A)))
    B = rng.normal(size=(n, 2))
    H = rng.normal(size=(3, n))
    Lq = rng.normal(size=(n, n))
    Lr = rng.normal(size=(3, 3))
    Q = 0.01 * (Lq @ Lq.T + np.eye(n))
    R = 0.1 * (Lr @ Lr.T + np.eye(3))
    return A, B, H, Q, R


def test_filters_exact_on_linear_gaussian_system():
    rng = np.random.default_rng(77)
    A, B, H, Q, R = _random_linear_system(rng)
    model = NonlinearModel(lambda x, u: A @ x + B @ u, lambda x: H @ x, Q, R, lambda x, u: A, lambda x: H)
    steps = 1000
    x = rng.normal(size=4)
    us = rng.normal(size=(steps, 2))
    ys = []
    for u in us:
        x = A @ x + B @ u + np.linalg.cholesky(Q) @ rng.normal(size=4)
        ys.append(H @ x + np.linalg.cholesky(R) @ rng.normal(size=3))
    x0, P0 = np.zeros(4), np.eye(4)
    ref_means, ref_covs = oracles.kalman_filter(A, B, H, Q, R, x0, P0, us, ys)

    ekf = ExtendedKalmanFilter(model, GaussianBelief(x0, P0))
    kf_err = 0.0
    for k, (u, y) in enumerate(zip(us, ys)):
        b = ekf.step(u, y)
        kf_err = max(kf_err, np.max(np.abs(b.mean - ref_means[k])), np.max(np.abs(b.cov - ref_covs[k])))

    arekf = AdaptiveRobustEKF(model, GaussianBelief(x0, P0), ArekfTuning(alpha=math.inf))
    ekf2 = ExtendedKalmanFilter(model, GaussianBelief(x0, P0))
    ar_err = 0.0
    for u, y in zip(us, ys):
        a, e = arekf.step(u, y), ekf2.step(u, y)
        ar_err = max(ar_err, np.max(np.abs(a.mean - e.mean)), np.max(np.abs(a.cov - e.cov)))
    ok = kf_err <= 1e-10 and ar_err <= 1e-9 and arekf.robust_steps == 0
    verdict(2, "filter exactness", ok, f"EKF vs KF {kf_err:.2e}, AREKF(alpha=inf) vs EKF {ar_err:.2e}")


def test_innovation_covariance_recursion():
    step = update_innovation_stats(InnovationStats(np.array([[1.0]]), 1), [math.sqrt(3.0)], 0.98)
    seeded = update_innovation_stats(InnovationStats(), [2.0, -3.0], 0.98)
    got = float(step.pbar_y[0, 0])
    ok = got == 3.98 / 1.98 and np.array_equal(seeded.pbar_y, [[4.0, -6.0], [-6.0, 9.0]])
    verdict(3, "innovation covariance recursion", ok, f"scalar {got!r} vs {3.98 / 1.98!r}, seed {seeded.pbar_y.tolist()}")


def test_arekf_beats_ekf_under_covariance_mismatch():
    start = time.perf_counter()
    base = ScenarioConfig()
    reports = [run_scenario(apply_overrides(base, {"seed": s}))[1] for s in range(20)]
    elapsed = time.perf_counter() - start
    rmse = {n: np.mean([r.filters[n].rmse for r in reports], axis=0) for n in ("ekf", "arekf")}
    nees = {n: float(np.mean([r.filters[n].nees for r in reports])) for n in ("ekf", "arekf")}
    diverged = sum(r.diverged for r in reports)
    ok = (
        diverged == 0
        and bool(np.all(rmse["arekf"] < rmse["ekf"]))
        and abs(nees["arekf"] - 4) < abs(nees["ekf"] - 4)
        and elapsed < 60.0
    )
    detail = (
        f"RMSE EKF {np.array2string(rmse['ekf'], precision=3)}, AREKF {np.array2string(rmse['arekf'], precision=3)}; "
        f"NEES EKF {nees['ekf']:.3g}, AREKF {nees['arekf']:.3g}; {elapsed:.1f} s"
    )
    verdict(4, "AREKF vs EKF under covariance mismatch", ok, detail)


def test_lyapunov_decrease_outside_layer():
    margins = []
    for cfg, (trace, report) in true_feedback_runs(10):
        assert not report.diverged
        margins.append(lyapunov_decrease_margins(trace, cfg.ts, cfg.kd - cfg.delta, cfg.epsilon))
    m = np.concatenate(margins)
    frac = float(np.mean(m >= -1e-3)) if m.size else 0.0
    ok = m.size > 0 and frac >= 0.99
    verdict(5, "Lyapunov decrease", ok, f"{frac:.4f} of {m.size} outside-layer steps, min slack {m.min():.3g}")


def test_settling_bound_twenty_runs():
    lam_max = inertia_bounds(P).lambda_max
    hits, worst = 0, -math.inf
    for cfg, (trace, report) in true_feedback_runs(20):
        bound = settling_bound(cfg.gains(), cfg.delta, lam_max, report.sigma0_norm)
        if report.reach_time is not None and report.reach_time <= bound:
            hits += 1
        ratio = math.inf if report.reach_time is None else report.reach_time / max(bound, 1e-300)
        worst = max(worst, ratio)
    verdict(6, "settling bound", hits == 20, f"{hits}/20 within bound, worst reach/bound {worst:.3f}")


def test_determinism_round_trip_and_exit_codes(tmp_path):
    args = ["run", "--set", "seed=5", "--set", "duration=1.0", "--no-figures"]
    codes = [main(args + ["--out", str(tmp_path / name)]) for name in ("a", "b")]
    same = (tmp_path / "a" / "trace.csv").read_bytes() == (tmp_path / "b" / "trace.csv").read_bytes()

    cfg = ScenarioConfig(seed=11, kd=12.0, disturbance_profile="sine", alpha=math.inf)
    path = tmp_path / "cfg.yaml"
    path.write_text(render_config(cfg))
    round_trip = load_config(path) == cfg and parse_config(render_config(ScenarioConfig())) == ScenarioConfig()

    diverge = ["run", "--out", str(tmp_path / "div"), "--no-figures", "--set", "kd=0.5", "--set", "delta=0.1",
               "--set", "disturbance=[500, 500]"]
    div_code = main(diverge)
    partial = (tmp_path / "div" / "trace.csv").is_file()
    ok = codes == [EXIT_OK, EXIT_OK] and same and round_trip and div_code == EXIT_DIVERGED and partial
    detail = f"exit codes {codes}, identical trace {same}, round trip {round_trip}, divergence exit {div_code}"
    verdict(7, "determinism and interfaces", ok, detail)


def test_analytic_filter_jacobians():
    model = build_filter_model(ScenarioConfig())
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(100):
        x = np.concatenate([rng.uniform(-np.pi, np.pi, 2), rng.uniform(-3, 3, 2)])
        u = rng.uniform(-10, 10, 2)
        for analytic, fd in (
            (model.F(x, u), numeric_jacobian(lambda z: model.f(z, u), x)),
            (model.G(x), numeric_jacobian(model.g, x)),
        ):
            worst = max(worst, float(np.max(np.abs(analytic - fd) / np.maximum(np.abs(fd), 1.0))))
    verdict(8, "analytic Jacobians", worst <= 1e-5, f"worst relative gap {worst:.2e} over 100 states")
