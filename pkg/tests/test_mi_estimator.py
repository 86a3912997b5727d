import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from musicrl import env, nn_core
from musicrl import mi_estimator as mi
from musicrl.errors import DimensionError, NonFiniteError
from musicrl.replay import TrajectoryRecord

from .conftest import FIXTURES
from .helpers import as_float64, central_difference, max_relative_error

finite = st.floats(-50, 50, allow_nan=False)


def constant_network(c=0.7, surrounding_dim=2, other_dim=2):
    spec = nn_core.mlp_spec(surrounding_dim + other_dim, (4,), 1)
    params = nn_core.zeros_like(nn_core.init_params(spec, np.random.default_rng(0)))
    params["b1"][:] = c
    return mi.StatisticsNetwork(spec, params, 1.0, 0.99, surrounding_dim)


# -- dv_bound -------------------------------------------------------------------


@given(st.floats(-80, 80), st.integers(1, 20), st.integers(1, 20))
def test_constant_statistic_gives_zero(c, nj, nm):
    assert mi.dv_bound([c] * nj, [c] * nm).value_nats == pytest.approx(0.0, abs=1e-9)


def test_dv_hand_cases():
    assert mi.dv_bound([1, 1], [0, 0]).value_nats == pytest.approx(1.0, abs=1e-12)
    assert mi.dv_bound([0, 2], [0, 0]).value_nats == pytest.approx(1.0, abs=1e-12)
    # 0.5 - log((1 + e) / 2)
    assert mi.dv_bound([0.5], [0, 1]).value_nats == pytest.approx(0.5 - math.log((1 + math.e) / 2))


def test_dv_counts():
    est = mi.dv_bound([1, 2, 3], [0, 0, 0])
    assert (est.n_joint_samples, est.n_marginal_samples) == (3, 3)


def test_dv_errors():
    with pytest.raises(ValueError):
        mi.dv_bound([], [1.0])
    with pytest.raises(NonFiniteError):
        mi.dv_bound([np.nan], [0.0])
    with pytest.raises(NonFiniteError):
        mi.dv_bound([0.0], [np.inf])


@given(arrays(np.float64, st.integers(1, 12), elements=finite),
       arrays(np.float64, st.integers(1, 12), elements=finite), st.randoms())
def test_dv_order_invariant(tj, tm, r):
    a = mi.dv_bound(tj, tm).value_nats
    pj, pm = list(tj), list(tm)
    r.shuffle(pj)
    r.shuffle(pm)
    assert mi.dv_bound(pj, pm).value_nats == pytest.approx(a, abs=1e-9)


def test_dv_stable_for_large_statistics():
    est = mi.dv_bound([80.0, 79.0], [80.0, 80.0, 78.0])
    assert math.isfinite(est.value_nats)
    assert est.value_nats == pytest.approx(79.5 - (80 + math.log((2 + math.exp(-2)) / 3)))


# -- shuffle ---------------------------------------------------------------------


def test_shuffle_single_element():
    out = mi.marginal_shuffle(np.array([[3.0, 4.0]]), np.random.default_rng(0))
    assert np.array_equal(out, [[3.0, 4.0]])


@given(arrays(np.int64, st.integers(1, 30), elements=st.integers(-5, 5)), st.integers(0, 2 ** 32 - 1))
def test_shuffle_is_permutation(x, seed):
    out = mi.marginal_shuffle(x, np.random.default_rng(seed))
    assert sorted(out.tolist()) == sorted(x.tolist())


def test_shuffle_seed_fixture():
    fixture = json.loads((FIXTURES / "shuffle_seed42.json").read_text())
    out = mi.marginal_shuffle(np.array(fixture["input"]), np.random.default_rng(fixture["seed"]))
    assert out.tolist() == fixture["output"]


def test_shuffle_uniform_over_permutations():
    rng = np.random.default_rng(3)
    counts = {}
    for _ in range(6000):
        key = tuple(mi.marginal_shuffle(np.arange(3), rng))
        counts[key] = counts.get(key, 0) + 1
    assert len(counts) == 6
    from scipy.stats import chisquare
    assert chisquare(list(counts.values())).pvalue > 0.01


# -- analytic MI ------------------------------------------------------------------


def test_analytic_gaussian_mi():
    assert mi.analytic_gaussian_mi(0.0, 3) == 0.0
    assert mi.analytic_gaussian_mi(0.9) == pytest.approx(0.830366, abs=1e-6)
    assert mi.analytic_gaussian_mi(0.5) == pytest.approx(0.143841, abs=1e-6)
    assert mi.analytic_gaussian_mi(0.5, 2) == pytest.approx(2 * 0.143841, abs=1e-6)
    with pytest.raises(ValueError):
        mi.analytic_gaussian_mi(1.0)
    with pytest.raises(ValueError):
        mi.analytic_gaussian_mi(-1.2)


# -- pair reward -------------------------------------------------------------------


def test_constant_network_reward_zero():
    phi = constant_network()
    s0 = np.array([0.1, 0.2, 0.3, 0.4, 0.0, 0.0])
    s1 = np.array([0.15, 0.2, 0.35, 0.4, 0.05, 0.0])
    assert mi.transition_reward(phi, s0, s1, env.DEFAULT_SPLIT, mi.MiConfig()) == 0.0


def test_pair_hand_arithmetic_joints_one_cross_zero():
    # T = s + a
    spec = nn_core.MlpSpec((2, 1))
    phi = mi.StatisticsNetwork(spec, {"W0": np.array([[1.0], [1.0]], np.float32),
                                      "b0": np.array([0.0], np.float32)}, 1.0, 0.99, 1)
    # s+a: joints (0.5+0.5, -0.5+1.5) = (1, 1); crosses (0.5+1.5, -0.5+0.5) = (2, 0)
    raw = mi.pair_bound(phi, [[0.5]], [[0.5]], [[-0.5]], [[1.5]])[0]
    assert raw == pytest.approx(1.0 - math.log((math.exp(2) + 1) / 2), abs=1e-6)

    # joints {1,1}, crosses {0,0}: T = s * a with s,a in {-1, 1}
    spec2 = nn_core.MlpSpec((2, 2, 1), "relu")
    w = {"W0": np.array([[1, -1], [1, -1]], np.float32), "b0": np.array([-1, -1], np.float32),
         "W1": np.array([[1], [1]], np.float32), "b1": np.array([0], np.float32)}
    phi2 = mi.StatisticsNetwork(spec2, w, 1.0, 0.99, 1)
    # relu(s + a - 1) + relu(-s - a - 1): joints (1,1)->1, (-1,-1)->1; crosses (1,-1),(-1,1)->0
    t = mi.statistics(phi2, [[1], [-1], [1], [-1]], [[1], [-1], [-1], [1]])
    np.testing.assert_allclose(t, [1, 1, 0, 0])
    split = env.StateSplit((0,), (1,))
    cfg = mi.MiConfig(reward_scale=1.0)
    obs_t, obs_t1 = np.array([1.0, 1.0]), np.array([-1.0, -1.0])
    assert mi.transition_reward(phi2, obs_t, obs_t1, split, cfg) == pytest.approx(1.0, abs=1e-6)
    pre, post = mi.transition_rewards(phi2, obs_t, obs_t1, split, cfg)
    assert pre[0] == pytest.approx(1.0, abs=1e-6) and post[0] == pytest.approx(1.0, abs=1e-6)


def test_clip_cases():
    cfg = mi.MiConfig(reward_scale=10.0)
    scaled, clipped = mi.scale_and_clip(np.array([-0.2, 0.05, 0.3]), cfg)
    np.testing.assert_allclose(scaled, [-2.0, 0.5, 3.0])
    np.testing.assert_allclose(clipped, [0.0, 0.5, 1.0], atol=1e-12)
    _, c = mi.scale_and_clip(-0.2, mi.MiConfig(reward_scale=0.001))
    assert c == 0.0


def test_config_validation():
    with pytest.raises(ValueError):
        mi.MiConfig(reward_scale=0)
    with pytest.raises(ValueError):
        mi.MiConfig(clip_low=1, clip_high=1)
    assert mi.MiConfig().clip_low == 0 and mi.MiConfig().clip_high == 1


@given(arrays(np.float64, (5, 6), elements=st.floats(-3, 3)),
       arrays(np.float64, (5, 6), elements=st.floats(-3, 3)), st.floats(1e-3, 1e5))
def test_rewards_always_in_clip_range(o0, o1, scale):
    phi = mi.make_statistics_network(2, 2, np.random.default_rng(0), (8,))
    cfg = mi.MiConfig(reward_scale=scale)
    _, r = mi.transition_rewards(phi, o0, o1, env.DEFAULT_SPLIT, cfg)
    assert np.all((r >= cfg.clip_low) & (r <= cfg.clip_high))


def test_transition_reward_dimension_error():
    phi = constant_network()
    with pytest.raises(DimensionError):
        mi.transition_reward(phi, np.zeros(6), np.zeros(5), env.DEFAULT_SPLIT, mi.MiConfig())
    with pytest.raises(DimensionError):
        mi.statistics(phi, np.zeros((2, 3)), np.zeros((2, 2)))


def test_pair_bound_symmetric_in_time():
    rng = np.random.default_rng(5)
    phi = mi.make_statistics_network(2, 2, rng, (8, 8))
    s0, a0, s1, a1 = (rng.normal(size=(4, 2)) for _ in range(4))
    np.testing.assert_allclose(mi.pair_bound(phi, s0, a0, s1, a1),
                               mi.pair_bound(phi, s1, a1, s0, a0), atol=1e-6)


# -- training ----------------------------------------------------------------------


def test_objective_gradient_matches_finite_difference():
    rng = np.random.default_rng(11)
    spec = nn_core.mlp_spec(3, (6, 5), 1)
    params = as_float64(nn_core.init_params(spec, rng))
    s = rng.normal(size=(7, 1))
    o = rng.normal(size=(7, 2))
    shuffled = o[rng.permutation(7)]
    # with ema_decay -> 0 the corrected gradient is the exact bound gradient
    phi = mi.StatisticsNetwork(spec, params, 1.0, 1e-12, 1)
    _, grads, _ = mi.estimator_objective(phi, s, o, shuffled)

    def negative_bound(p):
        x_j = np.concatenate([s, o], axis=1)
        x_m = np.concatenate([s, shuffled], axis=1)
        tj = nn_core.mlp_forward(spec, p, x_j)[:, 0]
        tm = nn_core.mlp_forward(spec, p, x_m)[:, 0]
        return -mi.dv_bound(tj, tm).value_nats

    numeric = central_difference(negative_bound, {k: v.copy() for k, v in params.items()}, 1e-5)
    assert max_relative_error(grads, numeric) < 1e-3


def test_ema_updated_before_gradient_and_bias_corrected():
    rng = np.random.default_rng(2)
    spec = nn_core.mlp_spec(2, (4,), 1)
    params = as_float64(nn_core.init_params(spec, rng))
    phi = mi.StatisticsNetwork(spec, params, 2.0, 0.99, 1)
    s, o = rng.normal(size=(5, 1)), rng.normal(size=(5, 1))
    sh = o[::-1].copy()
    est, grads, ema = mi.estimator_objective(phi, s, o, sh)
    tm = nn_core.mlp_forward(spec, params, np.concatenate([s, sh], axis=1))[:, 0]
    assert ema == pytest.approx(0.99 * 2.0 + 0.01 * np.mean(np.exp(tm)))
    # the reported estimate is the plain bound, unaffected by the running average
    tj = nn_core.mlp_forward(spec, params, np.concatenate([s, o], axis=1))[:, 0]
    assert est.value_nats == pytest.approx(mi.dv_bound(tj, tm).value_nats)
    # gradient equals -mean grad Tj + mean(e^Tm grad Tm) / ema
    x = np.concatenate([np.concatenate([s, o], 1), np.concatenate([s, sh], 1)])
    _, cache = nn_core.mlp_forward(spec, params, x, keep=True)
    up = np.concatenate([np.full(5, -1 / 5), np.exp(tm) / ema / 5])[:, None]
    expected, _ = nn_core.mlp_backward(spec, params, cache, up)
    for k in grads:
        np.testing.assert_allclose(grads[k], expected[k], rtol=1e-10)


def test_single_transition_trajectory_rejected(rng):
    phi = mi.make_statistics_network(2, 2, rng)
    opt = nn_core.adam_init(phi.params)
    traj = TrajectoryRecord(np.zeros((2, 6)), np.zeros((1, 2)), np.zeros(2), np.zeros(1))
    with pytest.raises(mi.PreconditionError):
        mi.train_estimator_step(phi, traj, env.DEFAULT_SPLIT, opt, rng)


def _synthetic_trajectory(rng, n, rho):
    agent = rng.standard_normal((n, 2))
    surr = rho * agent + math.sqrt(1 - rho * rho) * rng.standard_normal((n, 2))
    obs = np.concatenate([agent, surr, np.zeros((n, 2))], axis=1)
    return TrajectoryRecord(obs, np.zeros((n - 1, 2)), np.zeros(2), np.zeros(n - 1))


def test_training_independent_noise_stays_near_zero():
    rng = np.random.default_rng(21)
    phi = mi.make_statistics_network(2, 2, rng)
    opt = nn_core.adam_init(phi.params)
    bounds = []
    for _ in range(2000):
        obs = np.concatenate([rng.uniform(size=(256, 4)), np.zeros((256, 2))], axis=1)
        traj = TrajectoryRecord(obs, np.zeros((255, 2)), np.zeros(2), np.zeros(255))
        phi, opt, b = mi.train_estimator_step(phi, traj, env.DEFAULT_SPLIT, opt, rng)
        bounds.append(b)
    assert abs(np.mean(bounds[-200:])) <= 0.1
    obs = rng.uniform(size=(20000, 4))
    assert abs(mi.trajectory_bound(phi, obs[:, 2:], obs[:, :2], rng)) <= 0.1
    assert phi.ema_denominator > 0


def test_training_correlated_gaussian_reaches_point_six():
    rng = np.random.default_rng(22)
    spec_rho = 0.9
    phi = mi.make_statistics_network(1, 1, rng)
    opt = nn_core.adam_init(phi.params)
    bounds = []
    split = env.StateSplit((0,), (1,))
    for _ in range(2000):
        x = rng.standard_normal(256)
        y = spec_rho * x + math.sqrt(1 - spec_rho ** 2) * rng.standard_normal(256)
        obs = np.stack([x, y], axis=1)
        traj = TrajectoryRecord(obs, np.zeros((255, 2)), np.zeros(2), np.zeros(255))
        phi, opt, b = mi.train_estimator_step(phi, traj, split, opt, rng)
        bounds.append(b)
    assert np.mean(bounds[-100:]) >= 0.6
    x = rng.standard_normal(20000)
    y = spec_rho * x + math.sqrt(1 - spec_rho ** 2) * rng.standard_normal(20000)
    held_out = mi.trajectory_bound(phi, y[:, None], x[:, None], rng)
    # cannot meaningfully exceed the truth
    assert 0.6 <= held_out <= mi.analytic_gaussian_mi(spec_rho) + 0.1


def test_checkpoint_roundtrip(tmp_path, rng):
    phi = mi.make_statistics_network(2, 3, rng, (5,), ema_decay=0.9)
    phi = mi.StatisticsNetwork(phi.spec, phi.params, 1.75, 0.9, 2)
    nn_core.save_checkpoint(mi.to_arrays(phi, "est"), tmp_path / "phi.ckpt")
    back = mi.from_arrays(nn_core.load_checkpoint(tmp_path / "phi.ckpt"), "est")
    assert back.spec == phi.spec and back.surrounding_dim == 2 and back.other_dim == 3
    assert back.ema_denominator == pytest.approx(1.75)
    for k in phi.params:
        assert np.array_equal(back.params[k], phi.params[k])
    with pytest.raises(KeyError):
        mi.from_arrays(nn_core.load_checkpoint(tmp_path / "phi.ckpt"), "missing")


def test_network_invariants(rng):
    phi = mi.make_statistics_network(2, 2, rng)
    assert phi.spec.output_size == 1
    with pytest.raises(ValueError):
        mi.StatisticsNetwork(phi.spec, phi.params, 0.0, 0.99, 2)
    with pytest.raises(ValueError):
        mi.StatisticsNetwork(phi.spec, phi.params, 1.0, 0.99, 4)


def test_mean_pair_bound_matches_manual(rng):
    phi = mi.make_statistics_network(2, 2, rng, (8,))
    s, o = rng.normal(size=(6, 2)), rng.normal(size=(6, 2))
    manual = np.mean([mi.pair_bound(phi, s[i], o[i], s[i + 1], o[i + 1])[0] for i in range(5)])
    assert mi.mean_pair_bound(phi, s, o) == pytest.approx(manual, abs=1e-6)
