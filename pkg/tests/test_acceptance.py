"""Acceptance criteria, one test each.  Every test prints a PASS/FAIL line and the
full list is repeated in the terminal summary."""
import itertools
import time

import numpy as np
import pytest

from roughlyap.attractor import (deterministic_attractor_oracle, dyadic_experiment, hausdorff_semi,
                                 linear_decay_rate, local_stability_experiment, pullback_attractor,
                                 semicontinuity_experiment, stepsize_experiment)
from roughlyap.greedy import GreedyConfig, count_bound_report, greedy_times
from roughlyap.lyapnet import (NetParams, SamplePlan, TrainConfig, covering_centers, covering_success,
                               empirical_risk, sample_size, train, verify_accuracy)
from roughlyap.lyapunov import (Box, PerturbationSampler, check_strong_condition, derive_cert_lipschitz2,
                                pendulum_K, pendulum_lyapunov)
from roughlyap.models import attach_diffusion, make_fhn, make_linear_dissipative, make_pendulum
from roughlyap.rough_core import (Grid, NoiseConfig, NormParams, PathSample, chen_combine, dyadic_approx,
                                  fbm_rough_path, generate_fbm, interval_costs, lift_piecewise_linear,
                                  p_var_norm, sample_seed)
from roughlyap.solver import explicit_euler, rough_euler, verify_decay_bound

pytestmark = pytest.mark.slow

FHN_BOX = ((-3.0, -3.0), (3.0, 3.0))


@pytest.fixture(scope="module")
def fhn_oracle():
    return deterministic_attractor_oracle(make_fhn().drift, *FHN_BOX, n_grid=9, T=150.0, dt=0.01)


def _fbm_grid(n=1024):
    return Grid(0.0, 1.0 / n, n)


# 1 -----------------------------------------------------------------------------
def test_01_chen_relation(record_acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = 0.0
    for k in range(100):
        rp = fbm_rough_path(0.4, 2, _fbm_grid(), sample_seed(1, k))
        for _ in range(10):
            s, u, t = np.sort(rng.integers(0, 1025, 3))
            x1, X1 = chen_combine(rp, s, u)
            x2, X2 = chen_combine(rp, u, t)
            x, X = chen_combine(rp, s, t)
            worst = max(worst, np.abs(x - x1 - x2).max(), np.abs(X - X1 - X2 - np.outer(x1, x2)).max())
    dt = time.perf_counter() - t0
    ok = worst <= 1e-12 and dt < 10
    record_acceptance(1, "Chen relation", ok, f"max residual {worst:.2e}, {dt:.1f}s")
    assert ok


# 2 -----------------------------------------------------------------------------
def _exhaustive(rp, params):
    n = rp.grid.n_steps
    cx, cX = interval_costs(rp, 0, n, params)
    bx = bX = -1.0
    for r in range(n):
        for inner in itertools.combinations(range(1, n), r):
            nodes = (0,) + inner + (n,)
            sx = sX = 0.0
            for a, b in zip(nodes, nodes[1:]):
                sx += cx[a, b]
                sX += cX[a, b]
            bx, bX = max(bx, sx), max(bX, sX)
    return float((np.array([bx + bX]) ** (1.0 / params.p))[0])


def test_02_pvar_oracle_equivalence(record_acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    params = NormParams.from_hurst(0.4)
    mism = 0
    for _ in range(500):
        n = int(rng.integers(1, 10))
        vals = np.concatenate([[0.0], np.cumsum(rng.standard_normal(n) * rng.uniform(0.01, 3))])
        rp = lift_piecewise_linear(PathSample(Grid(0, 1.0 / n, n), vals))
        mism += p_var_norm(rp, 0, n, params) != _exhaustive(rp, params)
    dt = time.perf_counter() - t0
    ok = mism == 0 and dt < 10
    record_acceptance(2, "p-variation DP equals exhaustive enumeration", ok, f"{mism} mismatches, {dt:.1f}s")
    assert ok


# 3 -----------------------------------------------------------------------------
def test_03_fbm_moment_scaling(record_acceptance):
    t0 = time.perf_counter()
    grid = _fbm_grid()
    lags = 2 ** np.arange(11)
    t = lags * grid.dt
    slopes = {}
    for H in (0.35, 0.40, 0.45):
        acc = np.zeros(len(lags))
        for k in range(10_000):
            v = generate_fbm(H, 1, grid, sample_seed(3, k)).values[:, 0]
            acc += v[lags] ** 2
        slopes[H] = float(np.polyfit(np.log(t), np.log(acc / 10_000), 1)[0])
    dt = time.perf_counter() - t0
    ok = all(abs(s - 2 * H) <= 0.04 for H, s in slopes.items()) and dt < 60
    detail = ", ".join(f"H={H}: {s:.4f}" for H, s in slopes.items())
    record_acceptance(3, "fBm moment scaling", ok, f"{detail}, {dt:.1f}s")
    assert ok


# 4 -----------------------------------------------------------------------------
def test_04_dyadic_domination(record_acceptance):
    params = NormParams.from_hurst(0.4)
    factor = 3 ** (1 - 1 / params.p)
    viol, worst = 0, 0.0
    for k in range(100):
        rp = fbm_rough_path(0.4, 1, _fbm_grid(), sample_seed(4, k))
        full = p_var_norm(rp, 0, 1024, params)
        for n in range(2, 9):
            r = p_var_norm(dyadic_approx(rp, n), 0, 1024, params) / (factor * full)
            worst = max(worst, r)
            viol += r > 1
    ok = viol == 0
    record_acceptance(4, "dyadic approximation domination", ok, f"{viol} violations, max ratio {worst:.3f}")
    assert ok


# 5 -----------------------------------------------------------------------------
def test_05_greedy_count_bound(record_acceptance):
    params = NormParams.from_hurst(0.4)
    cfg = GreedyConfig(0.5, 0.05, params, C_p=4.0)
    viol, worst = 0, 0.0
    for k in range(100):
        rp = fbm_rough_path(0.4, 2, _fbm_grid(), sample_seed(5, k))
        part = greedy_times(rp, (0, 1024), cfg)
        rep = count_bound_report(part, rp, (0, 1024), cfg)
        viol += not rep["ok"]
        worst = max(worst, rep["N"] / rep["bound"])
    ok = viol == 0
    record_acceptance(5, "greedy count bound", ok, f"{viol} violations, max N/bound {worst:.3f}")
    assert ok


# 6 -----------------------------------------------------------------------------
def test_06_fhn_certificate(record_acceptance, fhn_cert):
    t0 = time.perf_counter()
    lyap, cert = fhn_cert
    eps, mu = 0.08, 0.8
    D = 1.0 / (12.0 * cert.lam)
    assert cert.delta == pytest.approx(eps * mu / (12 * (2 + eps * mu)))
    sampler = PerturbationSampler(cert.lam, 64, 64, seed=6)
    rep = check_strong_condition(lyap, make_fhn().drift, Box(*FHN_BOX, 200), cert, sampler)
    dt = time.perf_counter() - t0
    ok = rep.passed and rep.worst_margin >= 0 and dt < 300
    record_acceptance(6, "FHN strong condition", ok,
                      f"D={D:.2f} C_lambda={cert.C_lambda:.4f} worst margin {rep.worst_margin:.4f}, {dt:.1f}s")
    assert ok


# 7 -----------------------------------------------------------------------------
def test_07_pendulum_certificate(record_acceptance):
    sigma, mu = 1.0, 0.5
    spec = make_pendulum(sigma, mu)
    lyap = pendulum_lyapunov(sigma, mu)
    d1, d2 = lyap.classical
    cert = derive_cert_lipschitz2(d1, d2, lyap.L_V, spec.drift.lipschitz, pendulum_K(sigma, mu), 0.0, 0.05)
    rep = check_strong_condition(lyap, spec.drift, Box((-6, -6), (6, 6), 200), cert,
                                 PerturbationSampler(cert.lam, 64, 64, seed=7))
    fails = int(np.sum(rep.margins < 0))
    ok = rep.passed and fails == 0
    record_acceptance(7, "pendulum certificate", ok,
                      f"lambda={cert.lam} delta={cert.delta:.4f} failures {fails}, worst {rep.worst_margin:.4f}")
    assert ok


# 8 -----------------------------------------------------------------------------
def test_08_decay_envelope(record_acceptance, fhn_cert):
    t0 = time.perf_counter()
    lyap, cert = fhn_cert
    C_g = 0.05
    system = attach_diffusion(make_fhn(), "linear-bump", C_g)
    nc = NoiseConfig(0.4, 1e-3, 0.0, 10.0)
    params = NormParams.from_hurst(0.4)
    y0 = np.array([[0.0, 0.0], [2.5, 2.5], [-2.5, 1.0], [1.0, -2.0], [-0.8, -0.1]])
    viol, excess = 0, -np.inf
    for k in range(100):
        noise = nc.sample(2, sample_seed(8, k))
        tr = rough_euler(system, noise, y0)
        r = verify_decay_bound(tr, lyap, cert, noise, lyap.L_V, 4.0, C_g, params)
        viol += r["violations"]
        excess = max(excess, r["max_excess"])
    dt = time.perf_counter() - t0
    ok = viol == 0 and dt < 300
    record_acceptance(8, "decay envelope", ok, f"{viol} violations, max V - bound {excess:.3e}, {dt:.1f}s")
    assert ok


# 9 -----------------------------------------------------------------------------
def test_09_rough_euler_degeneracy(record_acceptance):
    fhn = make_fhn()
    nc = NoiseConfig(0.4, 1e-3, 0.0, 5.0)
    y0 = np.array([1.0, -1.0])
    same = True
    worst = 0.0
    for k in range(10):
        noise = nc.sample(2, sample_seed(9, k))
        for s in (fhn, attach_diffusion(fhn, "linear-bump", 0.0)):
            tr = rough_euler(s, noise, y0)
            same &= np.array_equal(tr.states, explicit_euler(fhn.drift, y0, nc.dt, noise.grid.n_steps))
        add = attach_diffusion(fhn, "constant", 0.2)
        tr = rough_euler(add, noise, y0)
        rhs = y0 + np.cumsum(fhn.drift.f(tr.states[:-1]) * nc.dt, axis=0) + 0.2 * (noise.values[1:] - noise.values[0])
        worst = max(worst, float(np.abs(tr.states[1:] - rhs).max()))
    ok = bool(same) and worst <= 1e-12
    record_acceptance(9, "rough Euler degeneracy", ok, f"bitwise equal {bool(same)}, telescoping residual {worst:.2e}")
    assert ok


# 10 ----------------------------------------------------------------------------
def test_10_deterministic_pullback(record_acceptance, fhn_cert, fhn_oracle):
    lyap, cert = fhn_cert
    est = pullback_attractor(make_fhn(), lyap, cert, NoiseConfig(0.4, 0.01, 80.0, 0.0), [20, 40, 60, 80],
                             init_resolution=96, radius_cap=3.0)
    dH = hausdorff_semi(est.cloud, fhn_oracle)
    hist = est.convergence_history
    ok = dH <= 0.05 and hist[-1] <= hist[0]
    record_acceptance(10, "pullback attractor, deterministic limit", ok,
                      f"d_H={dH:.4f}, history {[round(h, 4) for h in hist]}")
    assert ok


# 11 ----------------------------------------------------------------------------
def test_11_semicontinuity(record_acceptance, fhn_cert, fhn_oracle):
    t0 = time.perf_counter()
    lyap, cert = fhn_cert
    rows = semicontinuity_experiment(make_fhn(), lyap, cert, NoiseConfig(0.4, 0.01, 60.0, 0.0),
                                     [0.2, 0.1, 0.05, 0.01], 60, 20, fhn_oracle, master_seed=11, radius_cap=3.0)
    m = [r["mean_dH"] for r in rows]
    se = [r["stderr"] for r in rows]
    trend = all(m[k + 1] <= m[k] + max(se[k], se[k + 1]) for k in range(3))
    dt = time.perf_counter() - t0
    ok = m[-1] < m[0] and trend and dt < 900
    record_acceptance(11, "semicontinuity in C_g", ok,
                      f"means {[round(x, 4) for x in m]}, stderr {[round(x, 4) for x in se]}, {dt:.0f}s")
    assert ok


# 12 ----------------------------------------------------------------------------
def test_12_stepsize_convergence(record_acceptance, fhn_cert):
    lyap, cert = fhn_cert
    system = attach_diffusion(make_fhn(), "linear-bump", 0.05)
    rows = stepsize_experiment(system, NoiseConfig(0.4, 0.00625, 40.0, 0.0), [0.1, 0.025, 0.00625], 40, 10,
                               lyap, cert, master_seed=12, radius_cap=3.0)
    m = [r["mean_dH"] for r in rows]
    ok = m[0] > m[1] > m[2]
    record_acceptance(12, "step-size self-convergence", ok, f"means {[round(x, 4) for x in m]}")
    assert ok


# 13 ----------------------------------------------------------------------------
def test_13_dyadic_attractor(record_acceptance, fhn_cert):
    lyap, cert = fhn_cert
    system = attach_diffusion(make_fhn(), "linear-bump", 0.05)
    rows = dyadic_experiment(system, lyap, cert, NoiseConfig(0.4, 2 ** -10, 20.0, 0.0), [4, 6, 8], 20, 10,
                             master_seed=13, radius_cap=3.0, init_resolution=24)
    m = [r["mean_dH"] for r in rows]
    ok = m[0] > m[1] > m[2]
    record_acceptance(13, "dyadic attractor convergence", ok, f"means {[round(x, 5) for x in m]}")
    assert ok


# 14 ----------------------------------------------------------------------------
def test_14_local_stability(record_acceptance):
    pend = make_pendulum(1.0, 0.5)
    rows = local_stability_experiment(pend, [0.0, 0.05, 0.01], [0.05, 0.1], 20.0, 5,
                                      NoiseConfig(0.4, 1e-3, 0.0, 20.0), master_seed=14,
                                      in_domain=lambda y: np.linalg.norm(y, axis=-1) < 1.0)
    slopes = {r["parameter"]: r["mean_slope"] for r in rows}
    rate = linear_decay_rate(pend.drift, 2)
    ok = slopes[0.05] < 0 and slopes[0.01] < 0 and abs(slopes[0.0] - rate) <= 0.1 * abs(rate)
    record_acceptance(14, "local stability", ok,
                      f"slopes {({k: round(v, 4) for k, v in slopes.items()})}, linear rate {rate}")
    assert ok


# 15 ----------------------------------------------------------------------------
def test_15_lyapunov_net(record_acceptance):
    t0 = time.perf_counter()
    lin = make_linear_dissipative(1.0)
    box = Box((-2, -2), (2, 2), 200)
    cfg = TrainConfig(0.5, 0.1, 0.05, max_iter=5000, tol=1e-6)
    data = SamplePlan(box.lower, box.upper, eps0=0.1, rho=0.05, m_psi=8, m_eta=8, seed=15).draw(lin.drift.f, cfg.lam)
    theta0 = NetParams.random(2, 64, 15)
    # parameter-gradient check at the initial weights
    _, _, g = empirical_risk(theta0, data, cfg, with_grad=True)
    v = theta0.flat()
    fd = np.empty_like(v)
    for i in range(len(v)):
        e = np.zeros_like(v)
        e[i] = 1e-6
        fd[i] = (empirical_risk(theta0.with_flat(v + e), data, cfg)[0]
                 - empirical_risk(theta0.with_flat(v - e), data, cfg)[0]) / 2e-6
    fd_err = float(np.linalg.norm(g - fd) / np.linalg.norm(fd))
    theta, hist = train(theta0, data, cfg)
    rep = verify_accuracy(theta, lin.drift, box, cfg.lam, cfg, 0.01)
    dt = time.perf_counter() - t0
    ok = hist[-1] <= 1e-6 and len(hist) - 1 <= 5000 and rep.pass_rate >= 0.99 and fd_err <= 1e-4 and dt < 600
    record_acceptance(15, "Lyapunov-Net training", ok,
                      f"m_z={len(data.z)} loss {hist[-1]:.2e} after {len(hist) - 1} it, pass rate {rep.pass_rate:.4f}, "
                      f"grad rel err {fd_err:.1e}, {dt:.1f}s")
    assert ok


# 16 ----------------------------------------------------------------------------
def test_16_covering_sample_size(record_acceptance):
    box = Box((0.0, 0.0), (1.0, 1.0))
    m = sample_size(box, 0.1, 0.05)
    centers = covering_centers(box, 0.1)
    rng = np.random.default_rng(16)
    hits = sum(covering_success(rng.uniform(size=(m, 2)), centers, 0.1) for _ in range(200))
    ok = hits >= 190
    record_acceptance(16, "covering sample size", ok, f"m={m}, {hits}/200 covered")
    assert ok
