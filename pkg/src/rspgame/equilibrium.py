"""Equilibria, monopoly benchmark and the runtime equilibrium checks.

Prices, routings and demands are ``(2, E, T)`` arrays (RSP, edge, slot);
states are ``(2, N, T)`` with the initial placement kept on the instance.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .admm import QpSolution, SolverSettings, solve_qp
from .demand import linear_demand
from .kkt import constraint_violations
from .qp import fix_variables
from .network import N_RSP, ProblemInstance
from .programs import (FLEET_NONNEG, FLOW, PRICE_BOUNDS, ScenarioSet, assemble_best_response,
                       assemble_monopoly, assemble_partitioned_monopoly, assemble_potential_game,
                       assemble_stochastic_game)


class SolverFailure(RuntimeError):
    def __init__(self, what: str, sol: QpSolution):
        super().__init__(f"{what}: solver status {sol.status} after {sol.iterations} iterations "
                         f"(primal {sol.primal_residual:.2e}, kkt {sol.stationarity_residual:.2e})")
        self.solution = sol


class InfeasibleProfile(ValueError):
    pass


@dataclass
class StrategyProfile:
    prices: np.ndarray
    routing: np.ndarray


@dataclass
class GneSolution:
    instance: ProblemInstance
    prices: np.ndarray
    routing: np.ndarray
    demand: np.ndarray
    state: np.ndarray
    profits: np.ndarray
    potential: float
    residuals: dict
    deviation_gain: np.ndarray | None = None
    relative_gain: np.ndarray | None = None
    shared_gain: np.ndarray | None = None
    shared_relative_gain: np.ndarray | None = None
    scenario_states: np.ndarray | None = None
    scenario_demands: np.ndarray | None = None

    @property
    def is_gne(self) -> bool | None:
        return None if self.relative_gain is None else bool(np.all(self.relative_gain <= 1e-4))


@dataclass
class Partition:
    demand: np.ndarray
    routing: np.ndarray
    state: np.ndarray


@dataclass
class MonopolySolution:
    instance: ProblemInstance
    prices: np.ndarray
    routing: np.ndarray
    demand: np.ndarray
    state: np.ndarray
    profit: float
    residuals: dict
    merged: bool = True
    partition: Partition | None = None


@dataclass
class Verification:
    best_response_values: np.ndarray
    profits: np.ndarray
    gains: np.ndarray
    relative_gains: np.ndarray
    tol: float

    @property
    def is_gne(self) -> bool:
        return bool(np.all(self.relative_gains <= self.tol))


@dataclass
class SymmetryReport:
    preconditions_hold: bool
    failed_precondition: str | None
    max_price_gap: float
    max_demand_gap: float
    symmetric: bool | None


@dataclass
class EquivalenceReport:
    partition_condition_holds: bool
    max_product: float
    max_min_share: float
    profile: StrategyProfile | None
    deviation_gain: np.ndarray | None
    verdict: bool
    monopoly: MonopolySolution
    notes: list[str] = field(default_factory=list)


def default_eps_zero(instance: ProblemInstance) -> float:
    return 1e-6 * max(float(instance.demand.max(initial=0.0)), 1e-300)


def _residuals(sol: QpSolution) -> dict:
    return {"status": sol.status, "iterations": sol.iterations, "polished": sol.polished,
            "primal": sol.primal_residual, "kkt": sol.stationarity_residual}


def _require(sol: QpSolution, what: str):
    if not sol.optimal:
        raise SolverFailure(what, sol)


def duopoly_demands(instance: ProblemInstance, prices, clip: bool = True, base=None) -> np.ndarray:
    base = instance.demand if base is None else base
    d = np.stack([linear_demand(base, prices[i], prices[1 - i], instance.p_max)
                  for i in range(N_RSP)])
    return np.maximum(d, 0.0) if clip else d


def propagate_states(instance: ProblemInstance, demand, routing, x0) -> np.ndarray:
    """Roll the vehicle balance forward; returns ``(N, T)`` end-of-slot counts."""
    N, T = instance.n_nodes, instance.horizon
    flows = np.asarray(demand) + np.asarray(routing)
    delta = np.zeros((N, T))
    e_idx, t_idx = np.indices(flows.shape)
    np.add.at(delta, (instance.origins[e_idx], t_idx), -flows)
    arr = t_idx + instance.travel_time
    ok = arr < T
    np.add.at(delta, (instance.destinations[e_idx][ok], arr[ok]), flows[ok])
    return np.asarray(x0, dtype=float)[:, None] + np.cumsum(delta, axis=1)


def in_transit(instance: ProblemInstance, demand, routing) -> np.ndarray:
    """Vehicles on the road at the end of each slot, shape ``(T,)``."""
    T = instance.horizon
    flows = np.asarray(demand) + np.asarray(routing)
    dep = np.arange(T)[None, :]
    arrival = dep + instance.travel_time
    slots = np.arange(T)[:, None, None]
    moving = (dep[None] <= slots) & (arrival[None] > slots)
    return (moving * flows[None]).sum(axis=(1, 2))


def fleet_accounting(instance: ProblemInstance, demand, routing, state) -> np.ndarray:
    """Parked plus in-transit vehicles per slot; equals the capacity when balanced."""
    return np.asarray(state).sum(axis=0) + in_transit(instance, demand, routing)


def deterrence_gap(instance: ProblemInstance, prices, demand, eps_zero: float | None = None) -> float:
    """Largest price deviation from the deterrence rule, relative to ``p_max``.

    An RSP with (numerically) zero demand on a pair where someone wants to
    travel must sit exactly at the deterrence price ``p_max/2 + p_rival/2``;
    when both are out of the market that forces both prices to ``p_max``.
    """
    eps = default_eps_zero(instance) if eps_zero is None else eps_zero
    prices, demand = np.asarray(prices, float), np.asarray(demand, float)
    pmax = instance.p_max
    gap = 0.0
    active = instance.demand > 0
    for i in range(N_RSP):
        idle = active & (demand[i] <= eps)
        target = pmax / 2 + prices[1 - i] / 2
        gap = max(gap, float(np.abs(prices[i] - target)[idle].max(initial=0.0)))
    both = (demand[0] <= eps) & (demand[1] <= eps)
    gap = max(gap, float(np.abs(prices - pmax)[:, both].max(initial=0.0)))
    return gap / pmax


def profit(instance: ProblemInstance, prices, routing, rsp: int, base=None) -> float:
    """Profit with clipped demand, i.e. the RSP's original objective."""
    d = duopoly_demands(instance, prices, clip=True, base=base)[rsp]
    return float(np.sum((prices[rsp] - instance.ride_cost) * d
                        - instance.reroute_cost * routing[rsp]))


def profile_violations(instance: ProblemInstance, prices, routing, state=None,
                       tol: float = 1e-6, scenarios: ScenarioSet | None = None) -> list[tuple[str, str]]:
    """Constraint families a (price, routing) profile breaks, as ``(tag, message)``."""
    prices, routing = np.asarray(prices, float), np.asarray(routing, float)
    out = []
    shape = (N_RSP,) + instance.demand.shape
    if prices.shape != shape or routing.shape != shape:
        return [("shape", f"profile tables must have shape {shape}")]
    pmax = instance.p_max
    if (prices < -tol * pmax).any() or (prices > pmax * (1 + tol)).any():
        worst = max(float(-prices.min()), float(prices.max() - pmax))
        out.append((PRICE_BOUNDS, f"price outside [0, p_max] by {worst:.3g}"))
    if (routing < -tol).any():
        out.append((FLEET_NONNEG, f"negative rerouting flow {routing.min():.3g}"))
    bases = scenarios.demands if scenarios is not None else instance.demand[None]
    for base in bases:
        d = duopoly_demands(instance, prices, base=base)
        for i in range(N_RSP):
            scale = max(1.0, float(instance.capacity[i]))
            x = propagate_states(instance, d[i], routing[i], instance.initial_placement[i])
            if (x < -tol * scale).any():
                out.append((FLEET_NONNEG, f"RSP {i + 1} parks {x.min():.3g} vehicles somewhere"))
            if state is not None and scenarios is None:
                gap = np.abs(np.asarray(state)[i] - x).max()
                if gap > tol * scale:
                    out.append((FLOW, f"RSP {i + 1} state table off the vehicle balance by {gap:.3g}"))
    return out


OWN, SHARED = "own", "shared"


def verify_gne(instance: ProblemInstance, profile, tol: float = 1e-4,
               settings: SolverSettings | None = None, scenarios: ScenarioSet | None = None,
               feas_tol: float = 1e-6, coupling: str = OWN) -> Verification:
    """Best-response gains of each RSP against the profile.

    A profile is an equilibrium when neither RSP can raise its profit by more
    than ``tol * max(1, |profit|)``.  With ``coupling="own"`` a deviating RSP
    only has to respect its own price, demand and fleet constraints.  With
    ``coupling="shared"`` it must also keep the rival's fleet and demand
    feasible, which is the joint constraint set the potential game is built
    on; the gain is then the potential increase with the rival frozen.
    """
    if coupling not in (OWN, SHARED):
        raise ValueError(f"coupling must be {OWN!r} or {SHARED!r}, got {coupling!r}")
    prices, routing = np.asarray(profile.prices, float), np.asarray(profile.routing, float)
    bad = profile_violations(instance, prices, routing, tol=feas_tol, scenarios=scenarios)
    if bad:
        raise InfeasibleProfile("; ".join(f"{tag}: {msg}" for tag, msg in bad))
    prices = np.clip(prices, 0.0, instance.p_max)
    routing = np.maximum(routing, 0.0)
    bases = scenarios.demands if scenarios is not None else instance.demand[None]
    weights = scenarios.weights if scenarios is not None else np.ones(1)
    own = np.array([sum(w * profit(instance, prices, routing, i, base=b)
                        for w, b in zip(weights, bases)) for i in range(N_RSP)])
    if coupling == SHARED:
        gains = _shared_gains(instance, prices, routing, scenarios, settings, feas_tol)
        br = own + gains
    else:
        br = np.zeros(N_RSP)
        for i in range(N_RSP):
            game = assemble_best_response(instance, i, prices[1 - i], scenarios)
            sol = solve_qp(game.program, settings)
            _require(sol, f"best response of RSP {i + 1}")
            br[i] = sol.objective
        gains = br - own
    return Verification(br, own, gains, gains / np.maximum(1.0, np.abs(own)), tol)


def _shared_gains(instance, prices, routing, scenarios, settings, feas_tol):
    game = (assemble_stochastic_game(instance, scenarios) if scenarios is not None
            else assemble_potential_game(instance))
    prog, idx = game.program, game.index
    bases = scenarios.demands if scenarios is not None else instance.demand[None]
    z = np.zeros(prog.n)
    z[idx.cols("p")] = prices
    z[idx.cols("u")] = routing
    xs = np.stack([np.stack([propagate_states(instance, d[i], routing[i],
                                              instance.initial_placement[i])
                             for i in range(N_RSP)])
                   for d in (duopoly_demands(instance, prices, clip=False, base=b) for b in bases)],
                  axis=-1)
    z[idx.cols("x")] = xs if scenarios is not None else xs[..., 0]
    viol, per_tag = constraint_violations(prog, z)
    # vehicle counts are judged relative to fleet size, as in profile_violations
    if viol > feas_tol * max(1.0, float(np.max(instance.capacity))):
        worst = max(per_tag, key=per_tag.get)
        raise InfeasibleProfile(f"{worst}: profile leaves the joint constraint set by {viol:.3g}")
    base_value = prog.objective(z)
    # the profile is feasible only to feas_tol; widen every inequality just enough
    # to contain it, or a frozen rival at a binding fleet constraint can make the
    # deviation set empty by a rounding error
    prog = copy.copy(prog)
    prog.lower = np.minimum(prog.lower, z)
    prog.upper = np.maximum(prog.upper, z)
    prog.b_in = np.maximum(prog.b_in, prog.A_in @ z)
    gains = np.zeros(N_RSP)
    for i in range(N_RSP):
        k = 1 - i
        frozen = np.concatenate([idx.cols("p")[k].ravel(), idx.cols("u")[k].ravel()])
        reduced, _ = fix_variables(prog, frozen, z[frozen])
        sol = solve_qp(reduced, settings)
        _require(sol, f"shared-constraint best response of RSP {i + 1}")
        gains[i] = sol.objective - base_value
    return gains


def _extract_duopoly(game, sol, instance):
    p = game.index.take("p", sol.x)
    u = np.maximum(game.index.take("u", sol.x), 0.0)
    p = np.clip(p, 0.0, instance.p_max)
    # any price is optimal where nobody wants to travel; report p_max
    p[:, instance.demand == 0] = instance.p_max
    return p, u


def solve_gne(instance: ProblemInstance, settings: SolverSettings | None = None,
              verify: bool = True, tol: float = 1e-4) -> GneSolution:
    """Variational equilibrium: the maximizer of the potential over the joint constraints."""
    game = assemble_potential_game(instance)
    sol = solve_qp(game.program, settings)
    _require(sol, "potential game")
    p, u = _extract_duopoly(game, sol, instance)
    d = duopoly_demands(instance, p, clip=False)
    x = np.maximum(game.index.take("x", sol.x), 0.0)
    profits = np.array([profit(instance, p, u, i) for i in range(N_RSP)])
    out = GneSolution(instance, p, u, d, x, profits, sol.objective, _residuals(sol))
    if verify:
        v = verify_gne(instance, out, tol, settings)
        out.deviation_gain, out.relative_gain = v.gains, v.relative_gains
        v = verify_gne(instance, out, tol, settings, coupling=SHARED)
        out.shared_gain, out.shared_relative_gain = v.gains, v.relative_gains
    return out


def solve_stochastic_gne(instance: ProblemInstance, scenarios: ScenarioSet,
                         settings: SolverSettings | None = None, verify: bool = True,
                         tol: float = 1e-4) -> GneSolution:
    """Scenario game; profits are expectations, states are kept per scenario."""
    game = assemble_stochastic_game(instance, scenarios)
    sol = solve_qp(game.program, settings)
    _require(sol, "stochastic potential game")
    p, u = _extract_duopoly(game, sol, instance)
    xs = np.maximum(game.index.take("x", sol.x), 0.0)          # (2, N, T, M)
    scen_states = np.moveaxis(xs, -1, 1)                        # (2, M, N, T)
    scen_demands = np.stack([duopoly_demands(instance, p, clip=False, base=b)
                             for b in scenarios.demands], axis=1)
    w = scenarios.weights
    profits = np.array([sum(wm * profit(instance, p, u, i, base=b)
                            for wm, b in zip(w, scenarios.demands)) for i in range(N_RSP)])
    out = GneSolution(instance, p, u, np.tensordot(w, np.moveaxis(scen_demands, 1, 0), axes=1),
                      np.tensordot(w, np.moveaxis(scen_states, 1, 0), axes=1), profits,
                      sol.objective, _residuals(sol), scenario_states=scen_states,
                      scenario_demands=scen_demands)
    if verify:
        v = verify_gne(instance, out, tol, settings, scenarios=scenarios)
        out.deviation_gain, out.relative_gain = v.gains, v.relative_gains
        v = verify_gne(instance, out, tol, settings, scenarios=scenarios, coupling=SHARED)
        out.shared_gain, out.shared_relative_gain = v.gains, v.relative_gains
    return out


def check_symmetry(instance: ProblemInstance, solution: GneSolution, eps_zero: float | None = None,
                   tol: float | None = None) -> SymmetryReport:
    """Check the symmetric-equilibrium property when its hypotheses hold.

    Hypotheses: equal capacities, identical initial placements, and on every
    ``(j, l, t)`` either both RSPs serve or neither does.
    """
    eps = default_eps_zero(instance) if eps_zero is None else eps_zero
    tol = 1e-3 * instance.p_max if tol is None else tol
    gap_p = float(np.abs(solution.prices[0] - solution.prices[1]).max(initial=0.0))
    gap_d = float(np.abs(solution.demand[0] - solution.demand[1]).max(initial=0.0))
    failed = None
    if not np.isclose(instance.capacity[0], instance.capacity[1], rtol=1e-12, atol=0):
        failed = "capacities differ"
    elif not np.allclose(instance.initial_placement[0], instance.initial_placement[1],
                         rtol=1e-12, atol=1e-12):
        failed = "initial placements differ"
    else:
        serves = solution.demand > eps
        if np.any(serves[0] != serves[1]):
            failed = "one-sided service"
    if failed:
        return SymmetryReport(False, failed, gap_p, gap_d, None)
    demand_tol = tol * max(1.0, float(instance.demand.max(initial=0.0))) / instance.p_max
    return SymmetryReport(True, None, gap_p, gap_d, gap_p <= tol and gap_d <= demand_tol)


def solve_monopoly(instance: ProblemInstance, merged: bool = True,
                   settings: SolverSettings | None = None) -> MonopolySolution:
    game = assemble_monopoly(instance, merged)
    sol = solve_qp(game.program, settings)
    _require(sol, "monopoly")
    p = np.clip(game.index.take("p", sol.x), 0.0, instance.p_max)
    p[instance.demand == 0] = instance.p_max
    u = np.maximum(game.index.take("u", sol.x), 0.0)
    d = instance.demand * (1 - p / instance.p_max)
    x = np.maximum(game.index.take("x", sol.x), 0.0)
    prof = float(np.sum((p - instance.ride_cost) * d - instance.reroute_cost * u))
    return MonopolySolution(instance, p, u, d, x, prof, _residuals(sol), merged)


def solve_partitioned_monopoly(instance: ProblemInstance,
                               settings: SolverSettings | None = None) -> MonopolySolution:
    game = assemble_partitioned_monopoly(instance)
    sol = solve_qp(game.program, settings)
    _require(sol, "partitioned monopoly")
    p = np.clip(game.index.take("p", sol.x), 0.0, instance.p_max)
    p[instance.demand == 0] = instance.p_max
    dhat = np.maximum(game.index.take("dhat", sol.x), 0.0)
    u_sets = np.maximum(game.index.take("u", sol.x), 0.0)
    x_sets = np.maximum(game.index.take("x", sol.x), 0.0)
    d = instance.demand * (1 - p / instance.p_max)
    u = u_sets.sum(axis=0)
    prof = float(np.sum((p - instance.ride_cost) * d - instance.reroute_cost * u))
    return MonopolySolution(instance, p, u, d, x_sets.sum(axis=0), prof, _residuals(sol), True,
                            Partition(dhat, u_sets, x_sets))


def monopoly_duopoly_equivalence(instance: ProblemInstance, eps_zero: float | None = None,
                                 tol: float = 1e-4,
                                 settings: SolverSettings | None = None) -> EquivalenceReport:
    """Test whether the partitioned monopoly optimum is also a duopoly equilibrium.

    The partition condition is read entrywise as ``min(dhat1, dhat2) <= eps_zero``,
    i.e. the product vanishes up to the zero-demand threshold.  When it holds,
    RSP ``i`` gets the monopoly price where its set serves and ``p_max``
    elsewhere, plus its set's rerouting, and the profile is checked by best
    responses.  Only the computed optimum is examined.
    """
    eps = default_eps_zero(instance) if eps_zero is None else eps_zero
    mono = solve_partitioned_monopoly(instance, settings)
    dhat = mono.partition.demand
    product = dhat[0] * dhat[1]
    min_share = np.minimum(dhat[0], dhat[1])
    holds = bool(np.all(min_share <= eps))
    report = EquivalenceReport(holds, float(product.max(initial=0.0)),
                               float(min_share.max(initial=0.0)), None, None, False, mono)
    if not holds:
        report.notes.append("both vehicle sets serve some trip in the computed optimum")
        return report
    serves = dhat > eps
    prices = np.where(serves, mono.prices[None], instance.p_max)
    profile = StrategyProfile(prices, mono.partition.routing.copy())
    report.profile = profile
    try:
        v = verify_gne(instance, profile, tol, settings)
    except InfeasibleProfile as exc:
        report.notes.append(f"constructed profile infeasible: {exc}")
        return report
    report.deviation_gain = v.gains
    report.verdict = v.is_gne
    if not v.is_gne:
        report.notes.append("an RSP gains by deviating from the constructed profile")
    return report
