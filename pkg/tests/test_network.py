import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rspgame.network import (InstanceFormatError, Network, build_separable_instance,
                             build_single_pair_instance, build_two_cluster_instance,
                             instance_from_dict, relabel_nodes, validate_instance)

qs = st.floats(min_value=0.01, max_value=0.5)


@given(n=st.integers(2, 6), q=qs,
       profile=st.lists(st.floats(0, 100), min_size=1, max_size=4))
def test_outgoing_demand_matches_profile(n, q, profile):
    inst = build_two_cluster_instance(n=n, q=q, demand_profile=profile)
    assert validate_instance(inst) == []
    out = np.zeros((2 * n, len(profile)))
    np.add.at(out, inst.origins, inst.demand)
    np.testing.assert_allclose(out, np.broadcast_to(profile, out.shape), rtol=1e-12, atol=1e-9)


@given(n=st.integers(2, 6), q=qs, cap=st.floats(0, 1000, allow_subnormal=False))
def test_placement_sums_to_capacity(n, q, cap):
    inst = build_two_cluster_instance(n=n, q=q, capacity=cap)
    np.testing.assert_allclose(inst.initial_placement.sum(axis=1), [cap, cap], rtol=1e-12)


def test_balanced_mix_entries():
    inst = build_two_cluster_instance(n=10, q=0.5, capacity=200)
    D = 40.0
    intra = inst.demand[inst.edges.index((0, 1)), 0]
    inter = inst.demand[inst.edges.index((0, 10)), 0]
    assert intra == pytest.approx(0.5 * D / 9)
    assert inter == pytest.approx(0.5 * D / 10)
    np.testing.assert_allclose(inst.initial_placement, 10.0)


def test_small_generator_by_hand():
    inst = build_two_cluster_instance(n=2, q=0.1, demand_profile=(10,))
    assert inst.n_nodes == 4 and inst.horizon == 1
    assert inst.demand[inst.edges.index((0, 1)), 0] == pytest.approx(9.0)
    assert inst.demand[inst.edges.index((0, 2)), 0] == pytest.approx(0.5)
    assert inst.demand[inst.edges.index((0, 3)), 0] == pytest.approx(0.5)
    assert inst.travel_time[inst.edges.index((0, 1)), 0] == 1
    assert inst.travel_time[inst.edges.index((1, 3)), 0] == 2


def test_generator_costs():
    inst = build_two_cluster_instance(n=3)
    e_in, e_out = inst.edges.index((0, 2)), inst.edges.index((0, 3))
    assert inst.ride_cost[e_in, 0] == 0.1 and inst.reroute_cost[e_in, 0] == 0.05
    assert inst.ride_cost[e_out, 0] == 0.2 and inst.reroute_cost[e_out, 0] == 0.1


@pytest.mark.parametrize("kw", [dict(q=0.0), dict(q=0.51), dict(n=1)])
def test_generator_rejects(kw):
    with pytest.raises(ValueError):
        build_two_cluster_instance(**kw)


def test_travel_time_zero_is_reported():
    inst = build_single_pair_instance(horizon=2)
    tt = inst.travel_time.copy()
    tt[0, 0] = 0
    problems = validate_instance(inst.replace(travel_time=tt))
    assert any(p.startswith("travel_time:") and "travel time must be >= 1" in p for p in problems)


def test_disconnected_cliques_are_reported():
    base = build_two_cluster_instance(n=2, q=0.2, demand_profile=(10,))
    keep = [k for k, (j, l) in enumerate(base.edges) if j // 2 == l // 2]
    edges = tuple(base.edges[k] for k in keep)
    inst = base.replace(network=Network(4, edges), travel_time=base.travel_time[keep],
                        demand=base.demand[keep], ride_cost=base.ride_cost[keep],
                        reroute_cost=base.reroute_cost[keep])
    assert "network: graph is not strongly connected" in validate_instance(inst)


def test_placement_mismatch_and_negative_entries():
    inst = build_single_pair_instance()
    bad = inst.replace(initial_placement=inst.initial_placement * 0.5,
                       demand=-inst.demand)
    problems = validate_instance(bad)
    assert any(p.startswith("fleets.initial_placement") for p in problems)
    assert "demand: entries must be nonnegative" in problems


def test_indicator_has_one_entry_per_departure(small_cluster):
    A = small_cluster.travel_indicator()
    assert A.sum(axis=-1).min() == 1 and A.sum(axis=-1).max() == 1


@given(scale=st.floats(1e-6, 1e6), seed=st.integers(0, 2**31 - 1))
def test_json_round_trip_is_lossless(scale, seed):
    inst = build_two_cluster_instance(n=2, q=0.3, demand_profile=(5, 7))
    rng = np.random.default_rng(seed)
    inst = inst.replace(demand=rng.random(inst.demand.shape) * scale)
    back = instance_from_dict(json.loads(inst.to_json()))
    assert back.to_dict() == inst.to_dict()
    np.testing.assert_array_equal(back.demand, inst.demand)


def test_json_rejects_self_loops():
    doc = build_single_pair_instance().to_dict()
    doc["demand"]["0,0,1"] = 1.0
    with pytest.raises(InstanceFormatError, match="self-loop"):
        instance_from_dict(doc)


def test_instances_are_immutable(pair):
    with pytest.raises(ValueError):
        pair.demand[0, 0] = 1.0


def test_separable_instance_shape():
    inst = build_separable_instance()
    assert validate_instance(inst) == []
    cross = [k for k, (j, l) in enumerate(inst.edges) if j // 2 != l // 2]
    assert np.all(inst.demand[cross] == 0)
    assert np.all(inst.travel_time[cross] > inst.horizon)


def test_relabel_keeps_validity(small_cluster):
    perm = np.random.default_rng(0).permutation(small_cluster.n_nodes)
    assert validate_instance(relabel_nodes(small_cluster, perm)) == []
