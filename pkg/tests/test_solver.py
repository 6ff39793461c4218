import numpy as np
import pytest

from roughlyap.lyapunov import StrongCert, fhn_certificate, sqrt_lyapunov
from roughlyap.models import DriftField, SystemSpec, attach_diffusion, make_fhn, make_linear_dissipative
from roughlyap.rough_core import Grid, NoiseConfig, NormParams, PathSample, lift_piecewise_linear
from roughlyap.solver import ensemble, explicit_euler, ode_solve, rough_euler, verify_decay_bound

NC = NoiseConfig(0.4, 1e-3, 0.0, 2.0)


@pytest.mark.parametrize("with_zero_diffusion", [False, True])
def test_zero_diffusion_is_explicit_euler(with_zero_diffusion):
    s = make_fhn()
    if with_zero_diffusion:
        s = attach_diffusion(s, "linear-bump", 0.0)
    noise = NC.sample(2, 3)
    y0 = np.array([1.2, -0.4])
    tr = rough_euler(s, noise, y0)
    ref = explicit_euler(s.drift, y0, noise.grid.dt, noise.grid.n_steps)
    assert np.array_equal(tr.states, ref)


def test_additive_noise_telescopes():
    s = attach_diffusion(make_fhn(), "constant", 0.3)
    noise = NC.sample(2, 5)
    y0 = np.array([0.5, 0.5])
    tr = rough_euler(s, noise, y0)
    drift_sum = np.cumsum(s.drift.f(tr.states[:-1]) * noise.grid.dt, axis=0)
    G = 0.3 * np.eye(2)
    rhs = y0 + drift_sum + (noise.values[1:] - noise.values[0]) @ G.T
    assert np.abs(tr.states[1:] - rhs).max() <= 1e-12


def test_one_step_by_hand():
    # d = m = 1, g(y) = C (1 + tanh y)/2: y1 = y0 + f dt + g dx + g' g X
    s = attach_diffusion(make_linear_dissipative(1.0, (0.0,)), "linear-bump", 0.4)
    path = lift_piecewise_linear(PathSample(Grid(0, 0.1, 1), [[0.0], [0.3]]))
    y0 = 0.2
    tr = rough_euler(s, path, np.array([y0]))
    g = 0.4 * 0.5 * (1 + np.tanh(y0))
    dg = 0.4 * 0.5 * (1 - np.tanh(y0) ** 2)
    want = y0 - y0 * 0.1 + g * 0.3 + dg * g * 0.5 * 0.09
    assert tr.states[-1, 0] == pytest.approx(want, rel=1e-14)


def test_batch_equals_single_runs():
    s = attach_diffusion(make_fhn(), "linear-bump", 0.1)
    noise = NC.sample(2, 8)
    Y0 = np.array([[0.1, 0.2], [-1.0, 1.5], [2.0, -2.0]])
    batch = rough_euler(s, noise, Y0, save_every=50)
    for k in range(3):
        one = rough_euler(s, noise, Y0[k], save_every=50)
        assert np.allclose(batch.states[:, k], one.states, rtol=0, atol=1e-14)
    last = rough_euler(s, noise, Y0, save_every=0)
    assert last.states.shape == (1, 3, 2)
    assert np.allclose(last.states[0], batch.states[-1], atol=1e-14)


def test_blowup_flagged_and_truncated():
    s = SystemSpec(DriftField(1, lambda y: y ** 3))
    noise = NoiseConfig(0.4, 0.1, 0, 5).sample(1, 0)
    tr = rough_euler(s, noise, np.array([3.0]))
    assert tr.blowup >= 0
    assert np.all(np.isfinite(tr.states))
    batch = rough_euler(s, noise, np.array([[3.0], [0.01]]))
    assert batch.blowup[0] >= 0 and batch.blowup[1] == -1


def test_interval_and_dimension_checks():
    s = attach_diffusion(make_fhn(), "constant", 0.1)
    with pytest.raises(ValueError):
        rough_euler(s, NC.sample(1, 0), np.zeros(2))
    with pytest.raises(ValueError):
        rough_euler(s, NC.sample(2, 0), np.zeros(2), (5, 5))


def test_rk4_linear_accuracy():
    d = make_linear_dissipative(1.0).drift
    tr = ode_solve(d, np.array([[1.0, 2.0]]), (0.0, 2.0), 0.01)
    assert np.allclose(tr.states[-1, 0], np.array([1.0, 2.0]) * np.exp(-2.0), rtol=1e-9)


def test_decay_bound_holds_and_detects_false_cert():
    lyap, cert = fhn_certificate()
    s = attach_diffusion(make_fhn(), "linear-bump", 0.05)
    noise = NoiseConfig(0.4, 1e-3, 0, 2).sample(2, 1)
    tr = rough_euler(s, noise, np.array([[2.0, 1.0], [-1.5, -0.5]]))
    pr = NormParams.from_hurst(0.4)
    ok = verify_decay_bound(tr, lyap, cert, noise, lyap.L_V, 4.0, 0.05, pr)
    assert ok["violations"] == 0 and ok["n_checked"] == tr.states.shape[0] * 2
    # with the noise term switched off, a far faster claimed decay must be violated
    fake = StrongCert(cert.lam, 1e-6, 5.0)
    bad = verify_decay_bound(tr, lyap, fake, noise, lyap.L_V, 4.0, 0.0, pr)
    assert bad["violations"] > 0


def test_ensemble_reproducible():
    s = attach_diffusion(make_linear_dissipative(), "linear-bump", 0.1)
    lyap = sqrt_lyapunov()
    nc = NoiseConfig(0.4, 1e-2, 0, 1)
    a = ensemble(s, nc, [[1.0, 1.0]], (0.0, 1.0), 3, 11, lyap=lyap, save_every=5)
    b = ensemble(s, nc, [[1.0, 1.0]], (0.0, 1.0), 3, 11, lyap=lyap, save_every=5)
    assert a.config_hash == b.config_hash
    assert np.array_equal(a.final_V, b.final_V)
    q = a.summary()["V_quantiles"]
    assert set(q) == {"p05", "p50", "p95"} and len(q["p50"]) == 21
    c = ensemble(s, nc, [[1.0, 1.0]], (0.0, 1.0), 3, 12, lyap=lyap, save_every=5)
    assert not np.array_equal(a.final_V, c.final_V)
