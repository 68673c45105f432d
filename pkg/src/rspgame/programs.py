"""Assembly of the pricing/routing games into :class:`QuadraticProgram` objects.

Variable blocks are laid out in the order they are added, and each block is
C-ordered over its axes, so columns follow the lexicographic order of
``(kind, i, j, l, t)`` (edges are sorted, so ``(j, l)`` order is the edge
order).  RSP, partition-set, slot and scenario ids in variable names are
1-based; node ids are 0-based.

Demands never get their own columns in the duopoly and monopoly programs:
they are affine in the prices and are substituted directly into the flow
rows.  The partitioned monopoly is the exception, with one demand column
per vehicle set.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .network import N_RSP, ProblemInstance
from .qp import QuadraticProgram

FLOW = "flow_balance"
FLEET_NONNEG = "fleet_nonnegativity"
PRICE_BOUNDS = "price_bounds"
DEMAND_NONNEG = "demand_nonnegativity"
MONOPOLY_FLOW = "monopoly_flow_balance"
MONOPOLY_NONNEG = "monopoly_nonnegativity"
PARTITION_FLOW = "partition_flow_balance"
PARTITION_NONNEG = "partition_nonnegativity"
DEMAND_SPLIT = "demand_split"
SCENARIO_FLOW = "scenario_flow_balance"
SCENARIO_NONNEG = "scenario_nonnegativity"

KNOWN_TAGS = frozenset({FLOW, FLEET_NONNEG, PRICE_BOUNDS, DEMAND_NONNEG, MONOPOLY_FLOW,
                        MONOPOLY_NONNEG, PARTITION_FLOW, PARTITION_NONNEG, DEMAND_SPLIT,
                        SCENARIO_FLOW, SCENARIO_NONNEG})


@dataclass(frozen=True)
class ScenarioSet:
    """Weighted joint demand realizations; ``demands[m]`` has shape ``(E, T)``."""

    weights: np.ndarray
    demands: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        d = np.asarray(self.demands, dtype=float)
        if w.ndim != 1 or d.ndim != 3 or d.shape[0] != len(w):
            raise ValueError("need one (E, T) demand table per scenario weight")
        if (w < 0).any() or abs(w.sum() - 1) > 1e-12:
            raise ValueError(f"scenario weights must be nonnegative and sum to 1, got {w.sum()!r}")
        if (d < 0).any():
            raise ValueError("scenario demands must be nonnegative")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "demands", d)

    @property
    def size(self) -> int:
        return len(self.weights)

    @property
    def expected_demand(self) -> np.ndarray:
        return np.tensordot(self.weights, self.demands, axes=1)

    @classmethod
    def single(cls, demand) -> "ScenarioSet":
        return cls(np.ones(1), np.asarray(demand, dtype=float)[None])

    @classmethod
    def scaled(cls, demand, scales, weights) -> "ScenarioSet":
        demand = np.asarray(demand, dtype=float)
        return cls(np.asarray(weights, dtype=float),
                   np.stack([s * demand for s in scales]))


class VariableIndex:
    """Bijection between named variables and dense column positions."""

    def __init__(self, instance: ProblemInstance):
        self._instance = instance
        self.blocks: dict[str, tuple[int, tuple[int, ...], tuple[str, ...]]] = {}
        self.size = 0

    def add(self, kind: str, axes: tuple[str, ...]) -> np.ndarray:
        inst = self._instance
        extent = {"rsp": N_RSP, "set": N_RSP, "edge": inst.n_edges, "node": inst.n_nodes,
                  "slot": inst.horizon}
        shape = tuple(extent[a] if a in extent else int(a.split(":")[1]) for a in axes)
        self.blocks[kind] = (self.size, shape, axes)
        self.size += int(np.prod(shape))
        return self.cols(kind)

    def cols(self, kind: str) -> np.ndarray:
        off, shape, _ = self.blocks[kind]
        return off + np.arange(int(np.prod(shape))).reshape(shape)

    def take(self, kind: str, x) -> np.ndarray:
        return np.asarray(x)[self.cols(kind)]

    def names(self) -> list[str]:
        edges = self._instance.edges
        out: list[str] = []
        for kind, (_, shape, axes) in self.blocks.items():
            for idx in itertools.product(*(range(s) for s in shape)):
                parts = []
                for a, k in zip(axes, idx):
                    if a == "edge":
                        parts += [str(edges[k][0]), str(edges[k][1])]
                    elif a == "node":
                        parts.append(str(k))
                    else:
                        parts.append(str(k + 1))
                out.append(f"{kind}({','.join(parts)})")
        return out

    def position(self, name: str) -> int:
        return self.names().index(name)


@dataclass
class AssembledGame:
    program: QuadraticProgram
    index: VariableIndex
    formulation: str
    rsp: int | None = None
    metadata: dict = field(default_factory=dict)


class _Builder:
    def __init__(self, n: int):
        self.n = n
        self.Q_rows: list[np.ndarray] = []
        self.Q_cols: list[np.ndarray] = []
        self.Q_vals: list[np.ndarray] = []
        self.q = np.zeros(n)
        self.lower = np.full(n, -np.inf)
        self.upper = np.full(n, np.inf)
        self.bound_tags = ["free"] * n
        self.eq: list[tuple] = []
        self.ineq: list[tuple] = []

    def quad(self, rows, cols, vals):
        rows, cols = np.ravel(rows), np.ravel(cols)
        vals = np.broadcast_to(vals, np.shape(rows)).ravel() if np.ndim(vals) == 0 else np.ravel(vals)
        self.Q_rows.append(rows)
        self.Q_cols.append(cols)
        self.Q_vals.append(vals)

    def linear(self, cols, vals):
        np.add.at(self.q, np.ravel(cols), np.broadcast_to(vals, np.shape(cols)).ravel())

    def bounds(self, cols, lo, hi, tag):
        cols = np.ravel(cols)
        self.lower[cols] = np.broadcast_to(lo, np.shape(cols)).ravel() if np.ndim(lo) else lo
        self.upper[cols] = np.broadcast_to(hi, np.shape(cols)).ravel() if np.ndim(hi) else hi
        for c in cols:
            self.bound_tags[c] = tag

    def add_eq(self, rows, cols, vals, rhs, tag):
        self.eq.append((np.ravel(rows), np.ravel(cols), np.ravel(vals), np.ravel(rhs), tag))

    def add_in(self, rows, cols, vals, rhs, tag):
        self.ineq.append((np.ravel(rows), np.ravel(cols), np.ravel(vals), np.ravel(rhs), tag))

    def _stack(self, groups):
        if not groups:
            return sp.csr_matrix((0, self.n)), np.zeros(0), []
        rr, cc, vv, bb, tags = [], [], [], [], []
        off = 0
        for rows, cols, vals, rhs, tag in groups:
            rr.append(rows + off)
            cc.append(cols)
            vv.append(vals)
            bb.append(rhs)
            tags += [tag] * len(rhs)
            off += len(rhs)
        A = sp.csr_matrix((np.concatenate(vv), (np.concatenate(rr), np.concatenate(cc))),
                          shape=(off, self.n))
        A.sum_duplicates()
        return A, np.concatenate(bb), tags

    def build(self, names, constant) -> QuadraticProgram:
        if self.Q_rows:
            Q = sp.csc_matrix((np.concatenate(self.Q_vals),
                               (np.concatenate(self.Q_rows), np.concatenate(self.Q_cols))),
                              shape=(self.n, self.n))
        else:
            Q = sp.csc_matrix((self.n, self.n))
        Q.sum_duplicates()
        Q.eliminate_zeros()
        A_eq, b_eq, eq_tags = self._stack(self.eq)
        A_in, b_in, in_tags = self._stack(self.ineq)
        return QuadraticProgram(names, Q, self.q, A_eq, b_eq, A_in, b_in, self.lower,
                                self.upper, eq_tags, in_tags, self.bound_tags, float(constant))


def assemble_flow_constraints(instance: ProblemInstance, demand_cols, demand_coefs, demand_const,
                              u_cols, x_cols, x0):
    """Vehicle-balance rows for one fleet, one row per ``(node, slot)``.

    The demand served on ``(e, t)`` is the affine expression
    ``demand_const[e, t] + sum_k demand_coefs[e, t, k] * x[demand_cols[e, t, k]]``.
    Each row reads ``x(j,t) - x(j,t-1) + departures(j,t) - arrivals(j,t) = 0``
    with the constants and the initial placement moved to the right-hand side.
    Returns COO ``(rows, cols, vals, rhs)`` with row ``j * T + t``.
    """
    N, T = instance.n_nodes, instance.horizon
    origin, dest = instance.origins, instance.destinations
    E = instance.n_edges
    e_idx, t_idx = np.indices((E, T))
    dep_row = origin[e_idx] * T + t_idx
    arr_t = t_idx + instance.travel_time
    arrives = arr_t < T
    arr_row = dest[e_idx] * T + np.minimum(arr_t, T - 1)

    demand_cols = np.asarray(demand_cols).reshape(E, T, -1)
    demand_coefs = np.asarray(demand_coefs, dtype=float).reshape(E, T, -1)
    demand_const = np.asarray(demand_const, dtype=float).reshape(E, T)
    K = demand_cols.shape[2]

    rows, cols, vals = [], [], []
    rhs = np.zeros(N * T)
    # departures
    rows += [np.repeat(dep_row[..., None], K, axis=2).ravel(), dep_row.ravel()]
    cols += [demand_cols.ravel(), np.asarray(u_cols).ravel()]
    vals += [demand_coefs.ravel(), np.ones(E * T)]
    np.add.at(rhs, dep_row.ravel(), -demand_const.ravel())
    # arrivals inside the horizon
    a_rows = arr_row[arrives]
    rows += [np.repeat(a_rows[:, None], K, axis=1).ravel(), a_rows]
    cols += [demand_cols[arrives].ravel(), np.asarray(u_cols)[arrives]]
    vals += [-demand_coefs[arrives].ravel(), -np.ones(len(a_rows))]
    np.add.at(rhs, a_rows, demand_const[arrives])
    # state
    x_cols = np.asarray(x_cols).reshape(N, T)
    j_idx, s_idx = np.indices((N, T))
    rows += [(j_idx * T + s_idx).ravel(), (j_idx * T + s_idx)[:, 1:].ravel()]
    cols += [x_cols.ravel(), x_cols[:, :-1].ravel()]
    vals += [np.ones(N * T), -np.ones(N * (T - 1))]
    rhs[np.arange(N) * T] += np.asarray(x0, dtype=float)
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), rhs


def _add_flow(b: _Builder, instance, demand_cols, demand_coefs, demand_const, u_cols, x_cols,
              x0, tag):
    rows, cols, vals, rhs = assemble_flow_constraints(instance, demand_cols, demand_coefs,
                                                      demand_const, u_cols, x_cols, x0)
    b.add_eq(rows, cols, vals, rhs, tag)


def _duopoly_game(instance: ProblemInstance, scenarios: ScenarioSet, stochastic: bool):
    pmax = instance.p_max
    idx = VariableIndex(instance)
    p = idx.add("p", ("rsp", "edge", "slot"))
    u = idx.add("u", ("rsp", "edge", "slot"))
    if stochastic:
        x = idx.add("x", ("rsp", "node", "slot", f"scenario:{scenarios.size}"))
    else:
        x = idx.add("x", ("rsp", "node", "slot"))[..., None]
    b = _Builder(idx.size)

    Dbar = scenarios.expected_demand
    a = Dbar / pmax
    c, c_u = instance.ride_cost, instance.reroute_cost
    for i in range(N_RSP):
        k = 1 - i
        b.quad(p[i], p[i], -2 * a)
        b.quad(p[i], p[k], a / 2)
        b.linear(p[i], Dbar / 2 + c * a)
        b.linear(u[i], -c_u)
    constant = -N_RSP * float(np.sum(c * Dbar)) / 2

    flow_tag = SCENARIO_FLOW if stochastic else FLOW
    nonneg_tag = SCENARIO_NONNEG if stochastic else FLEET_NONNEG
    for m in range(scenarios.size):
        Dm = scenarios.demands[m]
        am = Dm / pmax
        for i in range(N_RSP):
            k = 1 - i
            _add_flow(b, instance, np.stack([p[i], p[k]], axis=-1),
                      np.stack([-am, am / 2], axis=-1), Dm / 2, u[i], x[i, :, :, m],
                      instance.initial_placement[i], flow_tag)

    # nonnegative linear demand, normalized by D; identical across scenarios
    served = (scenarios.demands > 0).any(axis=0)
    e_t = np.flatnonzero(served.ravel())
    for i in range(N_RSP):
        k = 1 - i
        r = np.arange(len(e_t))
        b.add_in(np.concatenate([r, r]),
                 np.concatenate([p[i].ravel()[e_t], p[k].ravel()[e_t]]),
                 np.concatenate([np.ones(len(e_t)), -0.5 * np.ones(len(e_t))]),
                 np.full(len(e_t), pmax / 2), DEMAND_NONNEG)

    b.bounds(p, 0.0, pmax, PRICE_BOUNDS)
    b.bounds(u, 0.0, np.inf, FLEET_NONNEG)
    b.bounds(x, 0.0, np.inf, nonneg_tag)
    program = b.build(idx.names(), constant)
    meta = {"constant": constant, "scenarios": scenarios.size}
    return AssembledGame(program, idx, "stochastic" if stochastic else "potential", None, meta)


def assemble_potential_game(instance: ProblemInstance) -> AssembledGame:
    """Joint program whose maximizer is the variational equilibrium.

    The objective is the potential: the price cross term plus each RSP's own
    quadratic revenue, linear cost and rerouting terms.  Its additive constant
    (minus half the ride cost times base demand, per RSP) is kept in
    ``program.constant``.
    """
    return _duopoly_game(instance, ScenarioSet.single(instance.demand), stochastic=False)


def assemble_stochastic_game(instance: ProblemInstance, scenarios: ScenarioSet) -> AssembledGame:
    """Scenario version: prices and rerouting shared, one state trajectory per scenario.

    All scenarios' flow constraints must hold; the objective is the
    probability-weighted potential.
    """
    if scenarios.demands.shape[1:] != instance.demand.shape:
        raise ValueError("scenario demand tables must match the instance's (E, T) layout")
    return _duopoly_game(instance, scenarios, stochastic=True)


def _check_rival(instance, rival_prices):
    rival = np.asarray(rival_prices, dtype=float)
    if rival.shape != instance.demand.shape:
        raise ValueError(f"rival prices must have shape {instance.demand.shape}")
    slack = 1e-9 * instance.p_max
    if (rival < -slack).any() or (rival > instance.p_max + slack).any():
        raise ValueError("rival prices must lie in [0, p_max]")
    return np.clip(rival, 0.0, instance.p_max)


def assemble_best_response(instance: ProblemInstance, rsp: int, rival_prices,
                           scenarios: ScenarioSet | None = None) -> AssembledGame:
    """RSP ``rsp`` (0-based) maximizing its own concave profit with the rival's prices fixed."""
    if rsp not in (0, 1):
        raise ValueError("rsp must be 0 or 1")
    rival = _check_rival(instance, rival_prices)
    stochastic = scenarios is not None
    scenarios = scenarios or ScenarioSet.single(instance.demand)
    pmax = instance.p_max
    idx = VariableIndex(instance)
    p = idx.add("p", ("edge", "slot"))
    u = idx.add("u", ("edge", "slot"))
    if stochastic:
        x = idx.add("x", ("node", "slot", f"scenario:{scenarios.size}"))
    else:
        x = idx.add("x", ("node", "slot"))[..., None]
    b = _Builder(idx.size)

    Dbar = scenarios.expected_demand
    a = Dbar / pmax
    c, c_u = instance.ride_cost, instance.reroute_cost
    b.quad(p, p, -2 * a)
    b.linear(p, Dbar / 2 + a * rival / 2 + c * a)
    b.linear(u, -c_u)
    constant = -float(np.sum(c * (Dbar / 2 + a * rival / 2)))

    flow_tag = SCENARIO_FLOW if stochastic else FLOW
    for m in range(scenarios.size):
        Dm = scenarios.demands[m]
        am = Dm / pmax
        _add_flow(b, instance, p[..., None], -am[..., None], Dm / 2 + am * rival / 2, u,
                  x[:, :, m], instance.initial_placement[rsp], flow_tag)

    e_t = np.flatnonzero((scenarios.demands > 0).any(axis=0).ravel())
    b.add_in(np.arange(len(e_t)), p.ravel()[e_t], np.ones(len(e_t)),
             pmax / 2 + rival.ravel()[e_t] / 2, DEMAND_NONNEG)
    b.bounds(p, 0.0, pmax, PRICE_BOUNDS)
    b.bounds(u, 0.0, np.inf, FLEET_NONNEG)
    b.bounds(x, 0.0, np.inf, SCENARIO_NONNEG if stochastic else FLEET_NONNEG)
    program = b.build(idx.names(), constant)
    meta = {"constant": constant, "rival_prices": rival}
    return AssembledGame(program, idx, "best_response", rsp, meta)


def assemble_monopoly(instance: ProblemInstance, merged: bool = True) -> AssembledGame:
    """Single RSP with linear demand ``D (1 - p / p_max)``.

    ``merged`` pools both fleets (capacity ``C1 + C2``); otherwise only RSP 1's
    fleet is used.
    """
    pmax = instance.p_max
    idx = VariableIndex(instance)
    p = idx.add("p", ("edge", "slot"))
    u = idx.add("u", ("edge", "slot"))
    x = idx.add("x", ("node", "slot"))
    b = _Builder(idx.size)
    D = instance.demand
    a = D / pmax
    c, c_u = instance.ride_cost, instance.reroute_cost
    b.quad(p, p, -2 * a)
    b.linear(p, D + c * a)
    b.linear(u, -c_u)
    constant = -float(np.sum(c * D))
    x0 = instance.merged_fleet()[1] if merged else instance.initial_placement[0]
    _add_flow(b, instance, p[..., None], -a[..., None], D, u, x, x0, MONOPOLY_FLOW)
    b.bounds(p, 0.0, pmax, PRICE_BOUNDS)
    b.bounds(u, 0.0, np.inf, MONOPOLY_NONNEG)
    b.bounds(x, 0.0, np.inf, MONOPOLY_NONNEG)
    program = b.build(idx.names(), constant)
    return AssembledGame(program, idx, "monopoly", None,
                         {"constant": constant, "merged": merged, "initial_placement": x0})


def assemble_partitioned_monopoly(instance: ProblemInstance) -> AssembledGame:
    """Monopoly that tracks which of two vehicle sets serves each demand unit.

    Set ``s`` starts where RSP ``s``'s fleet starts.  Demand is split as
    ``dhat(1) + dhat(2) = D (1 - p / p_max)`` with both parts nonnegative.
    """
    pmax = instance.p_max
    idx = VariableIndex(instance)
    p = idx.add("p", ("edge", "slot"))
    dhat = idx.add("dhat", ("set", "edge", "slot"))
    u = idx.add("u", ("set", "edge", "slot"))
    x = idx.add("x", ("set", "node", "slot"))
    b = _Builder(idx.size)
    D = instance.demand
    a = D / pmax
    c, c_u = instance.ride_cost, instance.reroute_cost
    b.quad(p, p, -2 * a)
    b.linear(p, D + c * a)
    for s in range(N_RSP):
        b.linear(u[s], -c_u)
    constant = -float(np.sum(c * D))

    nET = p.size
    r = np.arange(nET)
    b.add_eq(np.concatenate([r, r, r]),
             np.concatenate([dhat[0].ravel(), dhat[1].ravel(), p.ravel()]),
             np.concatenate([np.ones(nET), np.ones(nET), a.ravel()]), D.ravel(), DEMAND_SPLIT)
    for s in range(N_RSP):
        _add_flow(b, instance, dhat[s][..., None], np.ones(D.shape + (1,)), np.zeros(D.shape),
                  u[s], x[s], instance.initial_placement[s], PARTITION_FLOW)
    b.bounds(p, 0.0, pmax, PRICE_BOUNDS)
    b.bounds(dhat, 0.0, np.inf, PARTITION_NONNEG)
    b.bounds(u, 0.0, np.inf, PARTITION_NONNEG)
    b.bounds(x, 0.0, np.inf, PARTITION_NONNEG)
    program = b.build(idx.names(), constant)
    return AssembledGame(program, idx, "partitioned_monopoly", None, {"constant": constant})


def feasibility_witness(game: AssembledGame) -> np.ndarray:
    """A point every assembled game admits: nobody is served, nothing moves.

    Prices sit where demand vanishes (``p_max``, or the zero-demand threshold
    against a fixed rival), rerouting is zero and vehicles stay put.
    """
    inst = game.index._instance
    x = np.zeros(game.program.n)
    blocks = game.index.blocks
    if game.formulation == "best_response":
        rival = game.metadata["rival_prices"]
        x[game.index.cols("p")] = np.minimum(inst.p_max / 2 + rival / 2, inst.p_max)
        x0 = inst.initial_placement[game.rsp]
    else:
        x[game.index.cols("p")] = inst.p_max
        x0 = game.metadata.get("initial_placement", inst.initial_placement)
    xc = game.index.cols("x")
    _, shape, axes = blocks["x"]
    vals = np.asarray(x0, dtype=float)
    # broadcast the initial placement over slots (and scenarios)
    if axes[0] in ("rsp", "set"):
        vals = vals.reshape(N_RSP, inst.n_nodes, *([1] * (len(shape) - 2)))
    else:
        vals = vals.reshape(inst.n_nodes, *([1] * (len(shape) - 1)))
    x[xc] = np.broadcast_to(vals, shape)
    return x
