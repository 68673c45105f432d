"""Transportation network, travel times, demand field, costs and fleets.

All per-trip quantities are stored as ``(E, T)`` arrays aligned with the
instance's sorted edge list.  Slots are 0-based internally; the JSON format
uses 1-based slots and 1-based RSP ids, with 0-based node ids.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

N_RSP = 2


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Network:
    node_count: int
    edges: tuple[tuple[int, int], ...]

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    def edge_position(self) -> dict[tuple[int, int], int]:
        return {e: k for k, e in enumerate(self.edges)}

    def is_strongly_connected(self) -> bool:
        if self.node_count <= 1:
            return True
        if not self.edges:
            return False
        src, dst = np.array(self.edges, dtype=int).T
        ok = (src >= 0) & (src < self.node_count) & (dst >= 0) & (dst < self.node_count)
        adj = csr_matrix((np.ones(int(ok.sum())), (src[ok], dst[ok])),
                         shape=(self.node_count, self.node_count))
        n_comp, _ = connected_components(adj, directed=True, connection="strong")
        return n_comp == 1


@dataclass(frozen=True)
class ProblemInstance:
    """One pricing/routing game.

    ``travel_time[e, t]`` is the integer number of slots a trip on edge ``e``
    departing at slot ``t`` takes; ``demand``, ``ride_cost`` and
    ``reroute_cost`` share that layout.  ``capacity[i]`` and
    ``initial_placement[i, j]`` describe RSP ``i``'s fleet.
    """

    network: Network
    horizon: int
    p_max: float
    travel_time: np.ndarray
    demand: np.ndarray
    ride_cost: np.ndarray
    reroute_cost: np.ndarray
    capacity: np.ndarray
    initial_placement: np.ndarray
    label: str = field(default="", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "travel_time", _frozen(self.travel_time, dtype=np.int64))
        for name in ("demand", "ride_cost", "reroute_cost", "capacity", "initial_placement"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))

    @property
    def n_nodes(self) -> int:
        return self.network.node_count

    @property
    def edges(self) -> tuple[tuple[int, int], ...]:
        return self.network.edges

    @property
    def n_edges(self) -> int:
        return self.network.edge_count

    @property
    def origins(self) -> np.ndarray:
        return np.array([e[0] for e in self.edges], dtype=int)

    @property
    def destinations(self) -> np.ndarray:
        return np.array([e[1] for e in self.edges], dtype=int)

    def travel_indicator(self) -> np.ndarray:
        """0/1 tensor ``A[e, t, tau]``, one nonzero per ``(e, t)``."""
        tau_max = int(self.travel_time.max(initial=1))
        ind = np.zeros((self.n_edges, self.horizon, tau_max + 1))
        e_idx, t_idx = np.indices(self.travel_time.shape)
        ind[e_idx, t_idx, self.travel_time] = 1.0
        return ind

    def replace(self, **changes) -> "ProblemInstance":
        kw = {name: getattr(self, name) for name in self.__dataclass_fields__}
        kw.update(changes)
        return ProblemInstance(**kw)

    def merged_fleet(self) -> tuple[float, np.ndarray]:
        """Combined capacity and initial placement of both fleets."""
        return float(self.capacity.sum()), self.initial_placement.sum(axis=0)

    def to_dict(self) -> dict:
        T = self.horizon

        def table(arr, cast=float):
            return {f"{j},{l},{t + 1}": cast(arr[e, t])
                    for e, (j, l) in enumerate(self.edges) for t in range(T)}

        return {
            "node_count": self.n_nodes,
            "edges": [list(e) for e in self.edges],
            "horizon": T,
            "p_max": float(self.p_max),
            "travel_time": table(self.travel_time, int),
            "demand": table(self.demand),
            "ride_cost": table(self.ride_cost),
            "reroute_cost": table(self.reroute_cost),
            "capacity": [float(c) for c in self.capacity],
            "initial_placement": {f"{i + 1},{j}": float(self.initial_placement[i, j])
                                  for i in range(N_RSP) for j in range(self.n_nodes)},
            "label": self.label,
        }

    def to_json(self, path=None, indent=None) -> str:
        text = json.dumps(self.to_dict(), indent=indent)
        if path is not None:
            Path(path).write_text(text)
        return text


class InstanceFormatError(ValueError):
    pass


def instance_from_dict(doc: dict) -> ProblemInstance:
    """Inverse of :meth:`ProblemInstance.to_dict`.

    Keys that reference self-loops or non-edges are rejected here, since the
    array layout has nowhere to put them.
    """
    try:
        n = int(doc["node_count"])
        edges = tuple(sorted((int(j), int(l)) for j, l in doc["edges"]))
        T = int(doc["horizon"])
        p_max = float(doc["p_max"])
    except (KeyError, TypeError, ValueError) as exc:
        raise InstanceFormatError(f"malformed instance header: {exc}") from exc
    pos = {e: k for k, e in enumerate(edges)}

    def table(name, dtype=float, default=None):
        out = np.full((len(edges), T), np.nan if default is None else default)
        for key, val in doc.get(name, {}).items():
            j, l, t = (int(s) for s in key.split(","))
            if j == l:
                raise InstanceFormatError(f"{name}: self-loop entry {key!r} is not allowed")
            if (j, l) not in pos or not 1 <= t <= T:
                raise InstanceFormatError(f"{name}: entry {key!r} is not an edge/slot of the instance")
            out[pos[(j, l)], t - 1] = val
        if np.isnan(out).any():
            raise InstanceFormatError(f"{name}: missing entries")
        return out.astype(dtype)

    placement = np.zeros((N_RSP, n))
    for key, val in doc.get("initial_placement", {}).items():
        i, j = (int(s) for s in key.split(","))
        placement[i - 1, j] = val
    return ProblemInstance(
        network=Network(n, edges),
        horizon=T,
        p_max=p_max,
        travel_time=table("travel_time", dtype=np.int64),
        demand=table("demand", default=0.0),
        ride_cost=table("ride_cost", default=0.0),
        reroute_cost=table("reroute_cost", default=0.0),
        capacity=np.asarray(doc["capacity"], dtype=float),
        initial_placement=placement,
        label=doc.get("label", ""),
    )


def load_instance(path) -> ProblemInstance:
    return instance_from_dict(json.loads(Path(path).read_text()))


def validate_instance(instance: ProblemInstance) -> list[str]:
    """Return a list of ``"field: problem"`` strings; empty means valid."""
    out: list[str] = []
    net = instance.network
    E, T, N = instance.n_edges, instance.horizon, instance.n_nodes
    if N < 1:
        out.append("network.node_count: must be positive")
    if T < 1:
        out.append("horizon: must be a positive integer")
    if not instance.p_max > 0:
        out.append("p_max: must be positive")
    seen = set()
    for j, l in net.edges:
        if j == l:
            out.append(f"network.edges: self-loop ({j},{j}) is not allowed")
        if not (0 <= j < N and 0 <= l < N):
            out.append(f"network.edges: edge ({j},{l}) references an unknown node")
        if (j, l) in seen:
            out.append(f"network.edges: duplicate edge ({j},{l})")
        seen.add((j, l))
    if not net.is_strongly_connected():
        out.append("network: graph is not strongly connected")

    for name in ("travel_time", "demand", "ride_cost", "reroute_cost"):
        arr = getattr(instance, name)
        if arr.shape != (E, T):
            out.append(f"{name}: expected shape {(E, T)}, got {arr.shape}")
    if instance.travel_time.shape == (E, T):
        bad = np.argwhere(instance.travel_time < 1)
        for e, t in bad[:5]:
            j, l = net.edges[e]
            out.append(f"travel_time: travel time must be >= 1 at ({j},{l},{t + 1})")
    for name in ("demand", "ride_cost", "reroute_cost"):
        arr = getattr(instance, name)
        if not np.all(np.isfinite(arr)):
            out.append(f"{name}: entries must be finite")
        elif (arr < 0).any():
            out.append(f"{name}: entries must be nonnegative")

    cap, place = instance.capacity, instance.initial_placement
    if cap.shape != (N_RSP,):
        out.append(f"fleets.capacity: expected {N_RSP} entries")
    elif (cap < 0).any():
        out.append("fleets.capacity: must be nonnegative")
    if place.shape != (N_RSP, N):
        out.append(f"fleets.initial_placement: expected shape {(N_RSP, N)}")
    else:
        if (place < 0).any():
            out.append("fleets.initial_placement: entries must be nonnegative")
        if cap.shape == (N_RSP,):
            for i in range(N_RSP):
                if not np.isclose(place[i].sum(), cap[i], rtol=1e-12, atol=1e-12):
                    out.append(f"fleets.initial_placement: RSP {i + 1} placement sums to "
                               f"{place[i].sum():.12g}, capacity is {cap[i]:.12g}")
    return out


def _complete_edges(n_nodes: int) -> tuple[tuple[int, int], ...]:
    return tuple((j, l) for j in range(n_nodes) for l in range(n_nodes) if j != l)


def build_two_cluster_instance(
    n: int = 10,
    q: float = 0.25,
    demand_profile: Sequence[float] = (40.0, 20.0, 40.0, 40.0),
    capacity: float | Sequence[float] = 200.0,
    intra_ride_cost: float = 0.1,
    intra_reroute_cost: float = 0.05,
    inter_ride_cost: float = 0.2,
    inter_reroute_cost: float = 0.1,
    p_max: float = 1.0,
    inter_travel_time: int = 2,
) -> ProblemInstance:
    """Two ``n``-node cliques, fully cross-linked; nodes ``0..n-1`` form cluster 1.

    From every node and slot, a ``1-q`` share of ``demand_profile[t]`` is spread
    evenly over the ``n-1`` cluster mates and a ``q`` share over the ``n`` nodes
    of the other cluster.  RSP ``i`` starts with ``(1-q) C_i / n`` vehicles on
    each node of cluster ``i`` and ``q C_i / n`` on each node of the other.
    """
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    if not 0 < q <= 0.5:
        raise ValueError(f"q must lie in (0, 0.5], got {q}")
    profile = np.asarray(demand_profile, dtype=float)
    if profile.ndim != 1 or len(profile) == 0 or (profile < 0).any():
        raise ValueError("demand_profile must be a nonempty sequence of nonnegative reals")
    caps = np.broadcast_to(np.asarray(capacity, dtype=float), (N_RSP,)).copy()

    N, T = 2 * n, len(profile)
    edges = _complete_edges(N)
    cluster = np.arange(N) // n
    src = np.array([e[0] for e in edges])
    dst = np.array([e[1] for e in edges])
    same = cluster[src] == cluster[dst]

    share = np.where(same, (1 - q) / (n - 1), q / n)
    demand = share[:, None] * profile[None, :]
    travel = np.where(same, 1, inter_travel_time)[:, None].repeat(T, axis=1)
    ride = np.where(same, intra_ride_cost, inter_ride_cost)[:, None].repeat(T, axis=1)
    reroute = np.where(same, intra_reroute_cost, inter_reroute_cost)[:, None].repeat(T, axis=1)

    placement = np.empty((N_RSP, N))
    for i in range(N_RSP):
        placement[i] = np.where(cluster == i, (1 - q) * caps[i] / n, q * caps[i] / n)
    return ProblemInstance(
        network=Network(N, edges),
        horizon=T,
        p_max=float(p_max),
        travel_time=travel,
        demand=demand,
        ride_cost=ride,
        reroute_cost=reroute,
        capacity=caps,
        initial_placement=placement,
        label=f"two_cluster(n={n}, q={q})",
    )


def build_single_pair_instance(
    demand: float = 40.0,
    ride_cost: float = 0.0,
    reroute_cost: float = 0.0,
    p_max: float = 1.0,
    horizon: int = 1,
    capacity: float | Sequence[float] | None = None,
) -> ProblemInstance:
    """Two nodes, one trip type each way, identical fleets split evenly.

    With ``capacity=None`` each fleet gets enough vehicles at every node to
    serve the whole base demand of the horizon, so capacity never binds.
    """
    if capacity is None:
        capacity = 2 * 2 * demand * horizon
    caps = np.broadcast_to(np.asarray(capacity, dtype=float), (N_RSP,)).copy()
    edges = ((0, 1), (1, 0))
    shape = (2, horizon)
    return ProblemInstance(
        network=Network(2, edges),
        horizon=horizon,
        p_max=float(p_max),
        travel_time=np.ones(shape, dtype=np.int64),
        demand=np.full(shape, float(demand)),
        ride_cost=np.full(shape, float(ride_cost)),
        reroute_cost=np.full(shape, float(reroute_cost)),
        capacity=caps,
        initial_placement=np.repeat(caps[:, None] / 2, 2, axis=1),
        label="single_pair",
    )


def build_separable_instance(
    demand: float = 30.0,
    capacity: float | Sequence[float] = 40.0,
    horizon: int = 2,
    ride_cost: float = 0.1,
    reroute_cost: float = 0.05,
    p_max: float = 1.0,
) -> ProblemInstance:
    """Two 2-node clusters whose fleets cannot reach each other in time.

    Nodes 0,1 host RSP 1's fleet and nodes 2,3 host RSP 2's.  Cross-cluster
    trips take ``horizon + 1`` slots and carry no demand, so each fleet can
    only ever serve its own cluster.
    """
    caps = np.broadcast_to(np.asarray(capacity, dtype=float), (N_RSP,)).copy()
    N, T = 4, horizon
    edges = _complete_edges(N)
    cluster = np.arange(N) // 2
    same = np.array([cluster[j] == cluster[l] for j, l in edges])
    placement = np.zeros((N_RSP, N))
    for i in range(N_RSP):
        placement[i, cluster == i] = caps[i] / 2
    return ProblemInstance(
        network=Network(N, edges),
        horizon=T,
        p_max=float(p_max),
        travel_time=np.where(same, 1, T + 1)[:, None].repeat(T, axis=1),
        demand=np.where(same, demand, 0.0)[:, None].repeat(T, axis=1),
        ride_cost=np.full((len(edges), T), ride_cost),
        reroute_cost=np.full((len(edges), T), reroute_cost),
        capacity=caps,
        initial_placement=placement,
        label="separable",
    )


def relabel_nodes(instance: ProblemInstance, perm: Sequence[int]) -> ProblemInstance:
    """Rename node ``j`` to ``perm[j]``; edge-indexed arrays are re-sorted to match."""
    perm = np.asarray(perm, dtype=int)
    new_edges = [(int(perm[j]), int(perm[l])) for j, l in instance.edges]
    order = sorted(range(len(new_edges)), key=lambda k: new_edges[k])
    placement = np.empty_like(instance.initial_placement)
    placement[:, perm] = instance.initial_placement
    return instance.replace(
        network=Network(instance.n_nodes, tuple(new_edges[k] for k in order)),
        travel_time=instance.travel_time[order],
        demand=instance.demand[order],
        ride_cost=instance.ride_cost[order],
        reroute_cost=instance.reroute_cost[order],
        initial_placement=placement,
    )
