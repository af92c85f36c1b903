import csv
import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gensemcom.diffusion import Denoiser, DenoiserArch, make_schedule
from gensemcom.errors import ValidationError
from gensemcom.federated import (AggregationPolicy, ClientUpdate, ClusterState, FLClient, Weighting, aggregate,
                                 client_weights, clip_delta, fl_round, general_phase_range,
                                 hierarchical_aggregate, write_history_csv)

SCHED = make_schedule()


def _updates(rng, n=4, d=7):
    return [ClientUpdate(f"c{i}", rng.standard_normal(d), int(rng.integers(1, 50)), float(rng.uniform(0.1, 2)))
            for i in range(n)]


def test_uniform_is_arithmetic_mean():
    ups = _updates(np.random.default_rng(0))
    ordered = sorted(ups, key=lambda u: u.client_id)
    expected = sum(u.params for u in ordered) / len(ordered)
    assert np.array_equal(aggregate(ups), expected)


def test_sample_size_and_inverse_loss_weights():
    ups = [ClientUpdate("a", np.zeros(2), 1, 1.0), ClientUpdate("b", np.ones(2), 3, 0.5)]
    assert client_weights(ups, AggregationPolicy(Weighting.SAMPLE_SIZE)).tolist() == [0.25, 0.75]
    w = client_weights(ups, AggregationPolicy("adaptive_inverse_loss"))
    assert w == pytest.approx([1 / 3, 2 / 3])
    zero = [ClientUpdate("a", np.zeros(2), 1, 0.0), ClientUpdate("b", np.ones(2), 1, 1.0)]
    assert np.isfinite(client_weights(zero, AggregationPolicy("adaptive_inverse_loss"))).all()


def test_aggregate_is_order_independent():
    ups = _updates(np.random.default_rng(1))
    assert np.array_equal(aggregate(ups), aggregate(ups[::-1]))


@settings(max_examples=40)
@given(st.floats(0.01, 5.0), st.integers(0, 1000))
def test_clipping_bound(clip, seed):
    rng = np.random.default_rng(seed)
    ref = rng.standard_normal(6)
    ups = [ClientUpdate(i, ref + rng.standard_normal(6) * rng.uniform(0.01, 10)) for i in range(3)]
    for u in ups:
        assert np.linalg.norm(clip_delta(u.params - ref, clip)) <= clip * (1 + 1e-12)
    out = aggregate(ups, AggregationPolicy(clip_norm=clip), reference=ref)
    assert np.linalg.norm(out - ref) <= clip * (1 + 1e-12)


def test_clipping_needs_reference_and_validation():
    ups = _updates(np.random.default_rng(2))
    with pytest.raises(ValidationError):
        aggregate(ups, AggregationPolicy(clip_norm=1.0))
    with pytest.raises(ValidationError):
        AggregationPolicy(clip_norm=0.0)
    with pytest.raises(ValidationError):
        aggregate([])
    with pytest.raises(ValidationError):
        aggregate([ClientUpdate("a", np.zeros(2)), ClientUpdate("b", np.zeros(3))])
    with pytest.raises(ValidationError):
        ClientUpdate("a", np.zeros(2), num_samples=0)


def test_hierarchical_single_cluster_is_flat():
    ups = _updates(np.random.default_rng(3))
    for policy in (AggregationPolicy(), AggregationPolicy("sample_size"), AggregationPolicy(clip_norm=0.5)):
        ref = np.zeros(7)
        _, h = hierarchical_aggregate(ups, {u.client_id: "k" for u in ups}, policy, ref)
        assert np.array_equal(h, aggregate(ups, policy, ref))


def test_hierarchical_two_clusters_weighted_by_samples():
    ups = [ClientUpdate("a", np.array([0.0]), 1), ClientUpdate("b", np.array([2.0]), 1),
           ClientUpdate("c", np.array([10.0]), 6)]
    per, out = hierarchical_aggregate(ups, {"a": 1, "b": 1, "c": 2, "d": 3})
    assert per[1].tolist() == [1.0] and per[2].tolist() == [10.0]
    assert out.tolist() == [pytest.approx(0.25 * 1.0 + 0.75 * 10.0)]
    with pytest.raises(ValidationError):
        hierarchical_aggregate(ups, {"a": 1})


def _clients(arch, seed, n=2):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        x = rng.uniform(-1, 1, (12, arch.dim))
        c = np.zeros((12, arch.cond_dim))
        out.append(FLClient(f"u{i}", x, c, Denoiser(arch, seed=i)))
    return out


def test_fl_round_deterministic_and_records_history(tmp_path):
    arch = DenoiserArch(height=4, width=4, time_dim=4, k_max=1, hidden=8, hidden2=8)
    runs = []
    for _ in range(2):
        clients = _clients(arch, 0)
        cluster = ClusterState(Denoiser(arch, seed=9).params)
        ev = (clients[0].x0, clients[0].cond)
        for _ in range(2):
            fl_round(clients, cluster, AggregationPolicy(), 3, np.random.default_rng(1), SCHED, eval_set=ev)
        runs.append(cluster)
    assert np.array_equal(runs[0].params, runs[1].params)
    assert runs[0].history == runs[1].history
    assert runs[0].round == 2 and len(runs[0].loss_history) == 2
    assert [w for _, w, _ in runs[0].history[:3]] == ["u0", "u1", "cluster"]
    write_history_csv(runs[0].history, tmp_path / "h.csv")
    rows = list(csv.DictReader(open(tmp_path / "h.csv")))
    assert len(rows) == 6 and rows[0]["client_id"] == "u0"


def test_fl_round_excludes_diverging_client(caplog):
    arch = DenoiserArch(height=4, width=4, time_dim=4, k_max=1, hidden=8, hidden2=8)
    clients = _clients(arch, 1)
    clients[1].personalized.params[:] = 1e300
    cluster = ClusterState(Denoiser(arch, seed=9).params)
    with caplog.at_level(logging.WARNING), np.errstate(all="ignore"):
        fl_round(clients, cluster, AggregationPolicy(), 2, np.random.default_rng(0), SCHED)
    assert cluster.excluded == [(1, "u1")]
    assert "excluded" in caplog.text
    assert np.all(np.isfinite(cluster.params))


def test_general_phase_range():
    assert general_phase_range(SCHED) == (351, 1000)
    assert general_phase_range(make_schedule(100)) == (1, 100)
