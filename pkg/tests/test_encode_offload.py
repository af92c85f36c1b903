import math
from dataclasses import replace

import numpy as np
import pytest

from gensemcom.encode_offload import (ACTIONS, EncoderEnv, EncoderProfile, EnvConfig, Layer, OffloadState,
                                      QLearningConfig, QTable, encode_latency, evaluate_policy,
                                      exhaustive_best_split, feasibility_gate, feature_distortion,
                                      frozen_start_states, frozen_training, gaussian_kl, greedy_rollout,
                                      random_profile, static_policy, step_env, train_policy)
from gensemcom.errors import ValidationError

PROFILE = EncoderProfile((Layer(2.0, 50.0), Layer(4.0, 20.0), Layer(1.0, 5.0)), 100.0)


def test_gaussian_kl_closed_form():
    assert abs(gaussian_kl(1.0, 1.0, 0.0, 1.0) - 0.5) <= 1e-9
    assert gaussian_kl(0.3, 2.0, 0.3, 2.0) == 0.0
    # KL(N(0,4) || N(0,1)) = 0.5 (4 - 1 - ln 4)
    assert gaussian_kl(0.0, 4.0, 0.0, 1.0) == pytest.approx(0.5 * (3 - math.log(4)))


def test_feature_distortion_properties():
    x = np.random.default_rng(0).standard_normal(1000)
    assert feature_distortion(x, x) == pytest.approx(0.0, abs=1e-12)
    assert feature_distortion(x, x + 1.0) == pytest.approx(0.5 / x.var(), rel=1e-9)
    assert feature_distortion(np.zeros(5), np.zeros(5)) == 0.0
    with pytest.raises(ValidationError):
        feature_distortion(np.zeros(3), np.zeros(4))


def test_gate():
    assert feasibility_gate(0.05, 0.05) and not feasibility_gate(0.051, 0.05)
    with pytest.raises(ValidationError):
        feasibility_gate(-1.0, 0.1)


def test_latency_breakdown_by_hand():
    st = OffloadState(1, 10.0, 2.0, 4.0)
    lat = encode_latency(PROFILE, 1, st, link_rate=5.0)
    assert lat == {"local_ms": 1.0, "tx_ms": 10.0, "edge_ms": 1.25, "total_ms": 12.25}
    edge_only = encode_latency(PROFILE, 0, st, 5.0, data_scale=2.0)
    assert edge_only["local_ms"] == 0.0 and edge_only["tx_ms"] == 40.0
    with pytest.raises(ValidationError):
        encode_latency(PROFILE, 4, st, 5.0)
    with pytest.raises(ValidationError):
        EncoderProfile((), 1.0)


def test_link_rate_and_buckets():
    cfg = EnvConfig(PROFILE)
    assert cfg.link_rate(0.0) == pytest.approx(1.0)
    assert cfg.snr_bucket(12.0) == 1 and cfg.edge_bucket(100.0) == 2


def test_step_clamps_and_rewards():
    env = EncoderEnv(EnvConfig(PROFILE))
    rng = np.random.default_rng(0)
    s = OffloadState(0, 20.0, 1.0, 5.0)
    nxt, r = step_env(env, s, -1, rng)
    assert nxt.split_point == 0
    top, _ = env.step(replace(s, split_point=3), 1, rng)
    assert top.split_point == 3
    assert r == env.reward(nxt)
    with pytest.raises(ValidationError):
        env.step(s, 2, rng)


def test_reward_penalizes_failed_gate():
    cfg = EnvConfig(PROFILE, kl_threshold=0.0, kappa=3.0)
    env = EncoderEnv(cfg)
    s = OffloadState(1, 0.0, 1.0, 5.0)
    assert env.distortion(s) > 0
    assert env.reward(s) == pytest.approx(-env.latency(s)["total_ms"] / cfg.latency_scale - 3.0)
    full = replace(s, split_point=3)
    assert env.distortion(full) == 0.0
    assert env.effective_latency(s) == env.latency(full)["total_ms"]


def test_distortion_decreases_with_snr():
    env = EncoderEnv(EnvConfig(PROFILE))
    d = [env.distortion(OffloadState(0, snr, 1.0, 5.0)) for snr in (0.0, 10.0, 20.0)]
    assert d[0] > d[1] > d[2] > 0


def test_frozen_env_does_not_drift():
    env = EncoderEnv(EnvConfig(PROFILE))
    s = OffloadState(1, 10.0, 1.0, 5.0)
    assert env.drift(s, np.random.default_rng(0)) == s


def test_drift_changes_conditions():
    env = EncoderEnv(EnvConfig(PROFILE, persistence=0.0))
    rng = np.random.default_rng(0)
    seen = {env.drift(OffloadState(1, 10.0, 1.0, 5.0), rng).snr_db for _ in range(50)}
    assert seen == {0.0, 10.0, 20.0}


def test_qtable_defaults_ties_and_csv(tmp_path):
    q = QTable()
    key = (1, 0, 0, 0, 0)
    assert q.get(key, 1) == 0.0 and q.best_action(key) == 0
    q.values[(key, -1)] = 0.5
    q.values[(key, 1)] = 0.5
    assert q.best_action(key) == -1
    q.to_csv(tmp_path / "q.csv")
    assert QTable.from_csv(tmp_path / "q.csv").values == q.values


def test_frozen_q_learning_small_profile():
    env = EncoderEnv(EnvConfig(PROFILE))
    cond = OffloadState(0, 10.0, 1.0, 5.0)
    q, episodes = frozen_training(PROFILE.L)
    table = train_policy(env, episodes, np.random.default_rng(0), q, frozen_start_states(env, cond))
    best = exhaustive_best_split(env, cond)
    for start in frozen_start_states(env, cond):
        assert greedy_rollout(env, table, start, 8)[-1].split_point == best


def test_train_policy_accepts_config_and_is_deterministic():
    cfg = EnvConfig(PROFILE, persistence=0.9)
    a = train_policy(cfg, 20, np.random.default_rng(3), QLearningConfig(episode_length=5))
    b = train_policy(cfg, 20, np.random.default_rng(3), QLearningConfig(episode_length=5))
    assert a.values == b.values and len(a) > 0
    with pytest.raises(ValidationError):
        train_policy(cfg, -1, np.random.default_rng(0))


def test_static_policy_walks_to_target():
    env = EncoderEnv(EnvConfig(PROFILE))
    pol = static_policy(env, 3)
    assert [pol(OffloadState(k, 0.0, 1.0, 2.0)) for k in range(4)] == [1, 1, 1, 0]
    cost = evaluate_policy(env, pol, OffloadState(3, 0.0, 1.0, 2.0), 10, 0)
    assert cost == env.effective_latency(OffloadState(3, 0.0, 1.0, 2.0))


def test_random_profile_shape():
    p = random_profile(np.random.default_rng(0), 5)
    assert p.L == 5 and all(l.output_size > 0 for l in p.layers)
    assert set(ACTIONS) == {-1, 0, 1}
