import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rspgame.equilibrium import propagate_states
from rspgame.kkt import constraint_violations
from rspgame.network import (build_separable_instance, build_single_pair_instance,
                             build_two_cluster_instance)
from rspgame.programs import (KNOWN_TAGS, ScenarioSet, assemble_best_response,
                              assemble_flow_constraints, assemble_monopoly,
                              assemble_partitioned_monopoly, assemble_potential_game,
                              assemble_stochastic_game, feasibility_witness)

SMALL = build_two_cluster_instance(n=3, q=0.25)


def all_games(inst):
    rival = np.full(inst.demand.shape, 0.5 * inst.p_max)
    return [assemble_potential_game(inst),
            assemble_stochastic_game(inst, ScenarioSet.scaled(inst.demand, [0.5, 1.5], [0.4, 0.6])),
            assemble_best_response(inst, 0, rival), assemble_best_response(inst, 1, rival),
            assemble_monopoly(inst, merged=True), assemble_monopoly(inst, merged=False),
            assemble_partitioned_monopoly(inst)]


@pytest.mark.parametrize("inst", [SMALL, build_separable_instance(), build_single_pair_instance()],
                         ids=["cluster", "separable", "pair"])
def test_programs_are_concave_tagged_and_feasible(inst):
    for game in all_games(inst):
        prog = game.program
        assert prog.validate() == [], game.formulation
        tags = set(prog.eq_tags) | set(prog.in_tags) | (set(prog.bound_tags) - {"free"})
        assert tags <= KNOWN_TAGS, tags - KNOWN_TAGS
        worst, per_tag = constraint_violations(prog, feasibility_witness(game))
        assert worst <= 1e-12, (game.formulation, per_tag)


def test_potential_hessian_blocks():
    game = assemble_potential_game(SMALL)
    Q = game.program.Q.toarray()
    p = game.index.cols("p")
    a = SMALL.demand / SMALL.p_max
    for e in range(SMALL.n_edges):
        for t in range(SMALL.horizon):
            i1, i2 = p[0, e, t], p[1, e, t]
            assert Q[i1, i1] == pytest.approx(-2 * a[e, t])
            assert Q[i1, i2] == pytest.approx(a[e, t] / 2)
            assert Q[i2, i1] == pytest.approx(a[e, t] / 2)
    u, x = game.index.cols("u"), game.index.cols("x")
    assert not Q[np.ix_(u.ravel(), u.ravel())].any()
    assert not Q[np.ix_(x.ravel(), x.ravel())].any()


def _profit(inst, p_own, p_rival, u_own):
    d = inst.demand * (0.5 - p_own / inst.p_max + p_rival / (2 * inst.p_max))
    return float(np.sum((p_own - inst.ride_cost) * d - inst.reroute_cost * u_own))


@given(seed=st.integers(0, 2**31 - 1), rsp=st.sampled_from([0, 1]))
def test_best_response_objective_is_linear_demand_profit(seed, rsp):
    rng = np.random.default_rng(seed)
    rival = rng.uniform(0, 1, SMALL.demand.shape)
    game = assemble_best_response(SMALL, rsp, rival)
    z = rng.uniform(0, 1, game.program.n)
    p, u = game.index.take("p", z), game.index.take("u", z)
    assert game.program.objective(z) == pytest.approx(_profit(SMALL, p, rival, u), rel=1e-12)


@given(seed=st.integers(0, 2**31 - 1), rsp=st.sampled_from([0, 1]))
def test_potential_tracks_unilateral_profit_changes(seed, rsp):
    rng = np.random.default_rng(seed)
    game = assemble_potential_game(SMALL)
    prog, idx = game.program, game.index
    z = rng.uniform(0, 1, prog.n)
    z2 = z.copy()
    z2[idx.cols("p")[rsp]] = rng.uniform(0, 1, SMALL.demand.shape)
    z2[idx.cols("u")[rsp]] = rng.uniform(0, 5, SMALL.demand.shape)
    P, P2 = idx.take("p", z), idx.take("p", z2)
    U, U2 = idx.take("u", z), idx.take("u", z2)
    k = 1 - rsp
    dF = _profit(SMALL, P2[rsp], P2[k], U2[rsp]) - _profit(SMALL, P[rsp], P[k], U[rsp])
    dPhi = prog.objective(z2) - prog.objective(z)
    assert dPhi == pytest.approx(dF, abs=1e-9 * max(1, abs(prog.objective(z))))


def test_potential_constant_is_minus_half_ride_cost_mass():
    game = assemble_potential_game(SMALL)
    assert game.program.constant == pytest.approx(-np.sum(SMALL.ride_cost * SMALL.demand))


@pytest.mark.parametrize("maker", [assemble_potential_game, assemble_monopoly,
                                   assemble_partitioned_monopoly])
def test_gradient_matches_finite_differences(maker, rng):
    prog = maker(SMALL).program
    z = rng.uniform(0, 1, prog.n)
    g = prog.gradient(z)
    h = 1e-6
    for k in rng.choice(prog.n, 25, replace=False):
        e = np.zeros(prog.n)
        e[k] = h
        fd = (prog.objective(z + e) - prog.objective(z - e)) / (2 * h)
        assert fd == pytest.approx(g[k], abs=1e-5 * max(1, abs(g[k])))


def test_monopoly_objective_matches_formula(rng):
    game = assemble_monopoly(SMALL)
    z = rng.uniform(0, 1, game.program.n)
    p, u = game.index.take("p", z), game.index.take("u", z)
    d = SMALL.demand * (1 - p / SMALL.p_max)
    expected = np.sum((p - SMALL.ride_cost) * d - SMALL.reroute_cost * u)
    assert game.program.objective(z) == pytest.approx(expected, rel=1e-12)


def test_flow_rows_by_hand():
    # two nodes, one edge each way, T=3, travel time 2 on (0,1) and 1 on (1,0)
    inst = build_single_pair_instance(horizon=3)
    tt = np.array([[2, 2, 2], [1, 1, 1]])
    inst = inst.replace(travel_time=tt)
    E, T, N = 2, 3, 2
    d_cols = np.arange(E * T).reshape(E, T, 1)
    u_cols = E * T + np.arange(E * T).reshape(E, T)
    x_cols = 2 * E * T + np.arange(N * T).reshape(N, T)
    rows, cols, vals, rhs = assemble_flow_constraints(inst, d_cols, np.ones((E, T, 1)),
                                                      np.zeros((E, T)), u_cols, x_cols, [7.0, 3.0])
    A = np.zeros((N * T, 2 * E * T + N * T))
    np.add.at(A, (rows, cols), vals)
    # node 1 at slot 3 (row 1*T + 2): x(1,3) - x(1,2) + d(1,0,3) + u(1,0,3)
    #   - d(0,1,1) - u(0,1,1) [departed slot 1, 2 slots] = 0
    row = A[1 * T + 2]
    expect = {x_cols[1, 2]: 1, x_cols[1, 1]: -1, d_cols[1, 2, 0]: 1, u_cols[1, 2]: 1,
              d_cols[0, 0, 0]: -1, u_cols[0, 0]: -1}
    assert {int(c): v for c, v in enumerate(row) if v} == expect
    assert rhs[0] == 7.0 and rhs[T] == 3.0 and rhs[1] == 0.0


@given(seed=st.integers(0, 2**31 - 1))
def test_flow_rows_agree_with_forward_simulation(seed):
    rng = np.random.default_rng(seed)
    inst = SMALL
    game = assemble_best_response(inst, 0, rng.uniform(0, 1, inst.demand.shape))
    prog, idx = game.program, game.index
    z = np.zeros(prog.n)
    p = rng.uniform(0, 1, inst.demand.shape)
    u = rng.uniform(0, 2, inst.demand.shape)
    rival = game.metadata["rival_prices"]
    d = inst.demand * (0.5 - p / inst.p_max + rival / (2 * inst.p_max))
    z[idx.cols("p")] = p
    z[idx.cols("u")] = u
    z[idx.cols("x")] = propagate_states(inst, d, u, inst.initial_placement[0])
    resid = prog.A_eq @ z - prog.b_eq
    assert np.abs(resid).max() <= 1e-10 * max(1, np.abs(prog.b_eq).max())


def test_single_scenario_matches_deterministic_program():
    det = assemble_potential_game(SMALL).program
    sto = assemble_stochastic_game(SMALL, ScenarioSet.single(SMALL.demand)).program
    assert det.n == sto.n
    assert abs(det.Q - sto.Q).max() == 0
    np.testing.assert_array_equal(det.q, sto.q)
    assert abs(det.A_eq - sto.A_eq).max() == 0 and abs(det.A_in - sto.A_in).max() == 0
    assert det.constant == sto.constant


def test_variable_names_and_positions():
    game = assemble_potential_game(build_single_pair_instance(horizon=2))
    names = game.program.variable_names
    assert names[0] == "p(1,0,1,1)"
    assert names[1] == "p(1,0,1,2)"
    assert game.index.position("u(2,1,0,2)") == game.index.cols("u")[1, 1, 1]
    assert game.index.position("x(1,1,2)") == game.index.cols("x")[0, 1, 1]
    assert len(set(names)) == len(names)


def test_demand_split_row():
    inst = build_separable_instance()
    game = assemble_partitioned_monopoly(inst)
    prog, idx = game.program, game.index
    split = [r for r, t in enumerate(prog.eq_tags) if t == "demand_split"]
    assert len(split) == inst.n_edges * inst.horizon
    e = inst.edges.index((0, 1))
    r = split[e * inst.horizon]
    row = prog.A_eq[r].toarray().ravel()
    cols = np.flatnonzero(row)
    expected = sorted([idx.cols("p")[e, 0], idx.cols("dhat")[0, e, 0], idx.cols("dhat")[1, e, 0]])
    assert sorted(cols) == expected
    assert prog.b_eq[r] == inst.demand[e, 0]


def test_rival_prices_checked():
    with pytest.raises(ValueError):
        assemble_best_response(SMALL, 0, np.full(SMALL.demand.shape, 1.5))
    with pytest.raises(ValueError):
        assemble_best_response(SMALL, 2, np.zeros(SMALL.demand.shape))


def test_scenario_weights_validated():
    with pytest.raises(ValueError):
        ScenarioSet(np.array([0.5, 0.6]), np.ones((2, 1, 1)))
