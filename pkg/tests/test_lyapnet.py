import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from roughlyap.lyapnet import (NetParams, SamplePlan, TrainConfig, TrainingAborted, TrainingSet,
                               checkpoint_json, covering_centers, covering_success, default_targets,
                               empirical_risk, net_eval, p_min_box, sample_size, train, verify_accuracy)
from roughlyap.lyapunov import Box, StrongCert
from roughlyap.models import make_linear_dissipative

LIN = make_linear_dissipative(1.0)
CFG = TrainConfig(0.5, 0.1, 0.05, max_iter=300)


def _zero_net(width=8, alpha_bar=0.1):
    return NetParams(np.zeros((width, 2)), np.zeros(width), np.zeros(width), 0.0, 2, alpha_bar)


def _data(seed=0, m=200):
    return SamplePlan((-2, -2), (2, 2), m_z=m, m_psi=4, m_eta=4, seed=seed).draw(LIN.drift.f, CFG.lam)


@given(st.integers(0, 10 ** 6))
def test_lower_bound_by_construction(seed):
    th = NetParams.random(2, 16, seed)
    z = np.random.default_rng(seed).uniform(-5, 5, (200, 2))
    V, _ = net_eval(th, z)
    assert np.all(V >= th.alpha_bar * np.linalg.norm(z, axis=1))


def test_value_at_origin():
    th = NetParams.random(2, 16, 3)
    V, G = net_eval(th, np.zeros((1, 2)))
    N0 = (np.maximum(th.b1, 0) ** 2) @ th.W2 + th.b2
    assert V[0] == pytest.approx(abs(N0))


def test_gradient_matches_fd():
    rng = np.random.default_rng(0)
    errs = []
    for k in range(1000):
        th = NetParams.random(2, 8, k)
        z = rng.uniform(-2, 2, (1, 2))
        V, G = net_eval(th, z)
        h = 1e-6
        fd = np.array([(net_eval(th, z + h * e)[0] - net_eval(th, z - h * e)[0])[0] / (2 * h)
                       for e in np.eye(2)])
        if abs(V[0] - th.alpha_bar * np.linalg.norm(z)) < 1e-3:
            continue  # too close to the |N| = 0 kink
        errs.append(np.linalg.norm(G[0] - fd) / max(np.linalg.norm(fd), 1e-12))
    assert len(errs) > 900
    assert max(errs) <= 1e-4


def test_risk_parameter_gradient_matches_fd():
    th = NetParams.random(2, 16, 1)
    data = _data(1)
    _, _, g = empirical_risk(th, data, CFG, with_grad=True)
    v = th.flat()
    fd = np.empty_like(v)
    h = 1e-6
    for i in range(len(v)):
        e = np.zeros_like(v)
        e[i] = h
        fd[i] = (empirical_risk(th.with_flat(v + e), data, CFG)[0]
                 - empirical_risk(th.with_flat(v - e), data, CFG)[0]) / (2 * h)
    assert np.linalg.norm(g - fd) / np.linalg.norm(fd) <= 1e-4


def test_negative_brackets_give_zero_loss():
    loss, bracket = empirical_risk(_zero_net(), _data(), CFG)
    assert loss == 0.0 and np.all(bracket < 0)


def test_single_point_by_hand():
    th = _zero_net(alpha_bar=0.3)
    z = np.array([[1.0, 2.0]])
    data = TrainingSet(z, LIN.drift.f(z)[:, None, :])
    cfg = TrainConfig(0.5, 0.05, 0.0)
    _, bracket = empirical_risk(th, data, cfg)
    r = math.sqrt(5.0)
    # grad V = 0.3 z / |z|, so <grad V, -z> = -0.3 |z|
    assert bracket[0] == pytest.approx(-0.3 * r + 0.5 * 0.3 * r - 0.05)


def test_train_stops_at_minimiser_and_is_deterministic():
    th = _zero_net()
    out, hist = train(th, _data(), CFG)
    assert hist == [0.0] and np.array_equal(out.flat(), th.flat())
    data = _data(0, 1000)
    a = train(NetParams.random(2, 64, 0), data, CFG)[1]
    b = train(NetParams.random(2, 64, 0), data, CFG)[1]
    assert a == b
    assert all(y <= x for x, y in zip(a, a[1:]))


def test_weights_stay_clamped():
    th, _ = train(NetParams.random(2, 16, 4, scale=1.0), _data(), TrainConfig(0.5, 0.1, 0.05, lr=5.0, max_iter=50))
    assert np.abs(th.flat()).max() <= 1.0


def test_training_abort_reports_history():
    cfg = TrainConfig(0.5, 0.01, 0.05, lr=1e3, min_lr=1e2, grow=1.0)
    with pytest.raises(TrainingAborted) as e:
        train(NetParams.random(2, 16, 4), _data(), cfg)
    assert len(e.value.history) >= 1


def test_config_invariants():
    with pytest.raises(ValueError):
        TrainConfig(1.0, 0.1, 0.0)
    with pytest.raises(ValueError):
        TrainConfig(0.5, 0.0, 0.0)
    with pytest.raises(ValueError):
        NetParams(np.zeros((2, 2)), np.zeros(2), np.zeros(2), 0.0, 2, 0.0)
    assert default_targets(StrongCert(0.1, 2.0, 0.4), 0.01) == (0.2, 2.01)


def test_sample_size_formula_cases():
    box = Box((0, 0), (0.1, 0.1))
    assert len(covering_centers(box, 0.1)) == 1
    p = 0.3
    assert sample_size(box, 0.1, 0.05, p) == math.ceil(math.log(1 / 0.05) / -math.log(1 - p))
    assert sample_size(Box((0, 0), (1, 1)), 0.1, 0.999, 0.5) >= 1
    with pytest.raises(ValueError):
        sample_size(Box((0, 0), (1, 1)), 0.1, 1.5)


def test_cover_cells_fit_in_balls():
    box = Box((0, 0), (1, 1))
    c = covering_centers(box, 0.1)
    cell = np.array([1.0, 1.0]) / np.sqrt(len(c))
    assert np.linalg.norm(cell / 2) <= 0.1 + 1e-12
    assert 0 < p_min_box(box, 0.1) < 1
    assert covering_success(c, c, 0.1)
    assert not covering_success(np.array([[0.0, 0.0]]), c, 0.1)


def test_verify_classical_case_and_eps_monotone():
    th = _zero_net(alpha_bar=0.5)
    cfg = TrainConfig(0.5, 0.05, 0.0)
    box = Box((-2, -2), (2, 2), 41)
    rep = verify_accuracy(th, LIN.drift, box, 0.0, cfg, 0.0)
    assert rep.pass_rate == 1.0
    tight = TrainConfig(0.5, 0.01, 0.1)
    th2 = NetParams.random(2, 16, 2)
    r1 = verify_accuracy(th2, LIN.drift, box, 0.1, tight, 0.01)
    r2 = verify_accuracy(th2, LIN.drift, box, 0.1, tight, 0.02)
    assert r2.pass_rate >= r1.pass_rate
    assert np.all((r1.margins >= 0) <= (r2.margins >= 0))


def test_checkpoint_round_trip():
    th = NetParams.random(2, 8, 0)
    d = json.loads(checkpoint_json(th, CFG, [1.0, 0.5]))
    back = NetParams.from_dict(d)
    assert np.array_equal(back.flat(), th.flat())
    assert d["train_config"]["delta_bar"] == 0.5 and d["loss_history"] == [1.0, 0.5]
