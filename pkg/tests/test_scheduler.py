import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gensemcom.errors import SearchSpaceError, ValidationError
from gensemcom.scheduler import (BatchLatencyModel, OffloadRequest, TradeoffMetric, batch_latency,
                                 brute_force_assign, random_instance, read_instance_csv, relative_gap,
                                 sequential_assign, utility, write_instance_csv)

BM = BatchLatencyModel(10.0, 2.0)


def test_batch_latency_affine():
    assert batch_latency(BM, 0) == 0.0
    assert batch_latency(BM, 4) == 18.0
    diffs = {batch_latency(BM, b + 1) - batch_latency(BM, b) for b in range(1, 50)}
    assert diffs == {2.0}
    with pytest.raises(ValidationError):
        batch_latency(BM, -1)
    with pytest.raises(ValidationError):
        BatchLatencyModel(-1.0, 1.0)


def test_request_validation():
    with pytest.raises(ValidationError):
        OffloadRequest("u", {350: 0.5}, 1.0, 0.1)
    with pytest.raises(ValidationError):
        OffloadRequest("u", {0: 0.5, 700: 0.4}, 1.0, 0.1)
    with pytest.raises(ValidationError):
        OffloadRequest("u", {0: 1.5}, 1.0, 0.1)
    with pytest.raises(ValidationError):
        TradeoffMetric(-0.1)


def _req(uid, q, local=1.0, edge=0.1):
    return OffloadRequest(uid, q, local, edge)


def test_utility_all_local():
    reqs = [_req("a", {0: 0.9, 350: 0.8}), _req("b", {0: 0.7, 350: 0.6}, local=2.0)]
    m = TradeoffMetric(0.01)
    assert utility({"a": 0, "b": 0}, reqs, BM, m) == pytest.approx(1.6 - 0.01 * (1000 * 1.0 + 1000 * 2.0))
    with pytest.raises(ValidationError):
        utility({"a": 650, "b": 0}, reqs, BM, m)


def test_second_admission_shifts_first_user_by_per_item():
    reqs = [_req("a", {0: 0.9, 350: 0.8}), _req("b", {0: 0.7, 350: 0.6})]
    m = TradeoffMetric(1.0)
    one = utility({"a": 350, "b": 0}, reqs, BM, m)
    two = utility({"a": 350, "b": 350}, reqs, BM, m)
    # b's own change: quality -0.1, latency (10 + 2*2 + 35) - 350 local saved; a pays +2 ms
    b_delta = (0.6 - 0.7) - ((10 + 4 + 35) + 650 - 1000)
    assert two - one == pytest.approx(b_delta - 2.0)


def test_brute_force_two_users_hand_table():
    reqs = [_req("a", {0: 0.9, 350: 0.85, 650: 0.5}), _req("b", {0: 0.8, 350: 0.7, 650: 0.65}, local=0.5)]
    m = TradeoffMetric(0.0005)
    table = {}
    for ka, kb in itertools.product((0, 350, 650), repeat=2):
        b = (ka > 0) + (kb > 0)
        lat_a = (10 + 2 * b + 0.1 * ka if ka else 0) + (1000 - ka) * 1.0
        lat_b = (10 + 2 * b + 0.1 * kb if kb else 0) + (1000 - kb) * 0.5
        table[(ka, kb)] = reqs[0].quality[ka] + reqs[1].quality[kb] - 0.0005 * (lat_a + lat_b)
    best = max(table, key=lambda k: (table[k], [-v for v in k]))
    a, u = brute_force_assign(reqs, m, BM)
    assert (a["a"], a["b"]) == best
    assert u == pytest.approx(table[best])


def test_brute_force_tie_break_is_lexicographic():
    reqs = [_req("a", {0: 0.5, 350: 0.5}), _req("b", {0: 0.5, 350: 0.5})]
    a, _ = brute_force_assign(reqs, TradeoffMetric(0.0), BM)
    assert a == {"a": 0, "b": 0}


def test_lambda_zero_gives_max_quality():
    reqs = random_instance(np.random.default_rng(4), 3)
    a, _ = brute_force_assign(reqs, TradeoffMetric(0.0), BM)
    for r in reqs:
        assert r.quality[a[r.user_id]] == max(r.quality.values())


def test_cap_refusal():
    reqs = random_instance(np.random.default_rng(0), 5)
    with pytest.raises(SearchSpaceError):
        brute_force_assign(reqs, TradeoffMetric(0.001), BM, cap=100)
    assert brute_force_assign([], TradeoffMetric(0.0), BM) == ({}, 0.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 0.003))
def test_sequential_never_below_baselines(seed, lam):
    reqs = random_instance(np.random.default_rng(seed), 3)
    m = TradeoffMetric(lam)
    _, u = sequential_assign(reqs, m, BM)
    zero = {r.user_id: 0 for r in reqs}
    assert u >= utility(zero, reqs, BM, m) - 1e-12
    for r in reqs:
        for k in r.options:
            single = dict(zero)
            single[r.user_id] = k
            assert u >= utility(single, reqs, BM, m) - 1e-12
    _, best = brute_force_assign(reqs, m, BM)
    assert u <= best + 1e-12


@pytest.mark.parametrize("seed", range(5))
def test_sequential_exact_for_single_user_and_zero_lambda(seed):
    rng = np.random.default_rng(seed)
    one = random_instance(rng, 1)
    m = TradeoffMetric(float(rng.uniform(0, 0.003)))
    assert sequential_assign(one, m, BM) == brute_force_assign(one, m, BM)
    three = random_instance(rng, 3)
    assert sequential_assign(three, TradeoffMetric(0.0), BM)[1] == brute_force_assign(three, TradeoffMetric(0.0),
                                                                                        BM)[1]


def test_utility_permutation_symmetry():
    reqs = random_instance(np.random.default_rng(9), 3)
    a = {r.user_id: k for r, k in zip(reqs, (0, 350, 650))}
    m = TradeoffMetric(0.001)
    assert utility(a, reqs, BM, m) == pytest.approx(utility(a, reqs[::-1], BM, m))


def test_relative_gap():
    assert relative_gap(2.0, 2.0) == 0.0
    assert relative_gap(2.0, 1.9) == pytest.approx(0.05)
    assert relative_gap(-2.0, -2.1) == pytest.approx(0.05)


def test_instance_csv_round_trip(tmp_path):
    reqs = random_instance(np.random.default_rng(2), 3)
    write_instance_csv(reqs, tmp_path / "i.csv")
    assert read_instance_csv(tmp_path / "i.csv") == reqs
