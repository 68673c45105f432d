import numpy as np
import pytest

from rspgame.admm import SolverSettings
from rspgame.equilibrium import (OWN, SHARED, InfeasibleProfile, SolverFailure, StrategyProfile,
                                 check_symmetry, deterrence_gap, duopoly_demands,
                                 monopoly_duopoly_equivalence, profit, propagate_states,
                                 solve_gne, solve_monopoly, solve_stochastic_gne, verify_gne)
from rspgame.experiments import conservation_error
from rspgame.network import (build_separable_instance, build_single_pair_instance,
                             build_two_cluster_instance, relabel_nodes)
from rspgame.programs import ScenarioSet


@pytest.mark.parametrize("c, price", [(0.0, 1 / 3), (0.1, 0.4)])
def test_single_pair_duopoly_price(c, price):
    gne = solve_gne(build_single_pair_instance(ride_cost=c))
    assert np.abs(gne.prices - price).max() <= 1e-4
    assert gne.is_gne


def test_single_pair_monopoly_price(pair):
    mono = solve_monopoly(pair)
    assert np.abs(mono.prices - 0.55).max() <= 1e-4
    # d = D (1 - p), profit = (p - c) d on both edges
    assert mono.profit == pytest.approx(2 * 0.45 * 40 * 0.45, rel=1e-4)


def test_zero_demand_means_idle_fleets_at_top_price():
    inst = build_single_pair_instance(demand=0.0, capacity=10.0, reroute_cost=0.05)
    gne = solve_gne(inst)
    assert abs(gne.potential) <= 1e-9
    assert np.abs(gne.routing).max() <= 1e-7
    assert np.all(gne.prices == inst.p_max)
    assert deterrence_gap(inst, gne.prices, gne.demand) == 0.0


def test_verify_rejects_a_perturbed_price(pair):
    gne = solve_gne(pair)
    bumped = StrategyProfile(gne.prices + np.array([0.1, 0.0])[:, None, None], gne.routing)
    v = verify_gne(pair, bumped)
    assert not v.is_gne
    assert v.relative_gains[0] > 1e-3


def test_verify_rejects_top_prices(pair):
    prices = np.full((2,) + pair.demand.shape, pair.p_max)
    v = verify_gne(pair, StrategyProfile(prices, np.zeros_like(prices)))
    # undercutting from p_max wins customers at a positive margin
    assert np.all(v.gains > 1.0)


def test_infeasible_profile_raises(pair):
    prices = np.full((2,) + pair.demand.shape, 0.5)
    with pytest.raises(InfeasibleProfile):
        verify_gne(pair, StrategyProfile(prices, -np.ones_like(prices)))


def test_iteration_cap_raises_solver_failure(small_cluster):
    with pytest.raises(SolverFailure, match="max_iterations"):
        solve_gne(small_cluster, SolverSettings(max_iterations=1))


def test_small_cluster_is_an_equilibrium(small_cluster_gne):
    g = small_cluster_gne
    assert g.residuals["status"] == "optimal"
    assert g.residuals["primal"] <= 1e-6 and g.residuals["kkt"] <= 1e-6
    assert np.all(g.relative_gain <= 1e-4)
    assert np.all(g.shared_relative_gain <= 1e-4)


def test_profits_and_potential_are_consistent(small_cluster_gne):
    g = small_cluster_gne
    inst = g.instance
    for i in range(2):
        assert g.profits[i] == pytest.approx(profit(inst, g.prices, g.routing, i), rel=1e-12)
    # both players at the same profile: the potential is below the total profit
    assert g.potential < g.profits.sum()


def test_fleet_is_conserved(small_cluster_gne):
    g = small_cluster_gne
    assert conservation_error(g.instance, g.demand, g.routing, g.state) <= 1e-6
    assert min(g.state.min(), g.routing.min(), g.demand.min()) >= -1e-7
    for i in range(2):
        x = propagate_states(g.instance, g.demand[i], g.routing[i], g.instance.initial_placement[i])
        assert np.abs(x - g.state[i]).max() <= 1e-5 * g.instance.capacity[i]


def test_deterrence_rule_holds(small_cluster_gne):
    g = small_cluster_gne
    assert deterrence_gap(g.instance, g.prices, g.demand) <= 1e-6


def test_deterrence_gap_measures_the_offset(pair):
    prices = np.full((2,) + pair.demand.shape, 0.4)
    prices[1, 0, 0] = 0.7       # idle: its deterrence price is 0.5 + 0.2
    demand = duopoly_demands(pair, prices)
    assert demand[1, 0, 0] == pytest.approx(0.0, abs=1e-12)
    assert deterrence_gap(pair, prices, demand) == pytest.approx(0.0, abs=1e-12)
    prices[1, 0, 0] = 0.9
    demand = np.maximum(duopoly_demands(pair, prices, clip=False), 0)
    assert deterrence_gap(pair, prices, demand) == pytest.approx(0.2)


def test_symmetric_split_gives_equal_prices():
    gne = solve_gne(build_two_cluster_instance(n=3, q=0.5), verify=False)
    rep = check_symmetry(gne.instance, gne)
    assert rep.preconditions_hold
    assert rep.symmetric
    assert rep.max_price_gap <= 1e-3


def test_symmetry_check_names_unequal_capacities():
    inst = build_two_cluster_instance(n=3, q=0.5, capacity=[60.0, 120.0])
    rep = check_symmetry(inst, solve_gne(inst, verify=False))
    assert not rep.preconditions_hold
    assert rep.failed_precondition == "capacities differ"
    assert rep.symmetric is None


def test_symmetry_check_names_one_sided_service(pair):
    gne = solve_gne(pair, verify=False)
    gne.demand = gne.demand.copy()
    gne.demand[1, 0, 0] = 0.0
    rep = check_symmetry(pair, gne)
    assert rep.failed_precondition == "one-sided service"


def test_symmetry_check_names_unequal_placements():
    inst = build_separable_instance()
    rep = check_symmetry(inst, solve_gne(inst, verify=False))
    assert rep.failed_precondition == "initial placements differ"


def test_demand_scale_does_not_move_uncapacitated_prices():
    base = solve_gne(build_single_pair_instance(demand=40.0, ride_cost=0.1), verify=False)
    big = solve_gne(build_single_pair_instance(demand=400.0, ride_cost=0.1), verify=False)
    assert np.abs(base.prices - big.prices).max() <= 1e-4


def test_relabelling_nodes_permutes_the_solution(small_cluster, small_cluster_gne):
    perm = [3, 4, 5, 0, 1, 2]
    inst = relabel_nodes(small_cluster, perm)
    moved = solve_gne(inst, verify=False)
    # map each original edge to its position in the relabelled instance
    pos = {e: k for k, e in enumerate(inst.edges)}
    order = [pos[(perm[j], perm[l])] for j, l in small_cluster.edges]
    assert np.abs(moved.prices[:, order] - small_cluster_gne.prices).max() <= 1e-5
    assert moved.potential == pytest.approx(small_cluster_gne.potential, rel=1e-7)


def test_single_scenario_matches_deterministic(small_cluster, small_cluster_gne):
    sto = solve_stochastic_gne(small_cluster, ScenarioSet.single(small_cluster.demand),
                               verify=False)
    assert np.abs(sto.prices - small_cluster_gne.prices).max() <= 1e-5
    assert sto.potential == pytest.approx(small_cluster_gne.potential, rel=1e-8)


def test_two_scenario_game_is_an_equilibrium(small_cluster):
    scen = ScenarioSet.scaled(small_cluster.demand, [0.8, 1.2], [0.5, 0.5])
    sto = solve_stochastic_gne(small_cluster, scen)
    assert sto.scenario_states.shape == (2, 2) + sto.state.shape[1:]
    assert np.all(sto.relative_gain <= 1e-4)
    assert np.all(sto.shared_relative_gain <= 1e-4)


def test_unilateral_gains_at_lopsided_split():
    # with most of each fleet at home, a deviator that may ignore the rival's
    # fleet limits can profit; one that must respect them cannot
    gne = solve_gne(build_two_cluster_instance(n=3, q=0.05))
    assert gne.relative_gain.max() == pytest.approx(0.0213, abs=1e-3)
    assert np.all(gne.shared_relative_gain <= 1e-6)


def test_shared_gain_of_a_perturbed_profile_is_positive(small_cluster, small_cluster_gne):
    g = small_cluster_gne
    prices = g.prices.copy()
    prices[0] = np.clip(prices[0] - 0.02, 0, 1)
    profile = StrategyProfile(prices, g.routing)
    try:
        v = verify_gne(small_cluster, profile, coupling=SHARED)
    except InfeasibleProfile:
        pytest.skip("perturbation leaves the joint set")
    assert v.gains[0] > 0


@pytest.mark.parametrize("make, verdict", [
    (lambda: build_separable_instance(), True),
    (lambda: build_separable_instance(capacity=[40.0, 0.0]), True),
    (lambda: build_two_cluster_instance(n=3, q=0.5), False),
    (lambda: build_single_pair_instance(ride_cost=0.1), False),
])
def test_equivalence_verdicts(make, verdict):
    rep = monopoly_duopoly_equivalence(make())
    assert rep.verdict is verdict
    if verdict:
        assert rep.partition_condition_holds
        assert np.all(rep.deviation_gain <= 1e-4 * max(1.0, rep.monopoly.profit))


def test_equivalence_profile_is_a_duopoly_equilibrium():
    inst = build_separable_instance()
    rep = monopoly_duopoly_equivalence(inst)
    v = verify_gne(inst, rep.profile, coupling=OWN)
    assert v.is_gne
    # the potential maximizer is a different equilibrium, and no duopoly
    # outcome beats the merged operator
    gne = solve_gne(inst)
    assert gne.profits.sum() < rep.monopoly.profit
