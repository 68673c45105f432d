"""JSON and flat-CSV forms of solutions.

Tables are keyed ``"i,j,l,t"`` (RSP and slot 1-based, nodes 0-based), states
``"i,j,t"``.  Every document carries the SHA-256 of the canonical instance
JSON so a solution can be matched to the instance it was computed on.
"""
from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from .equilibrium import GneSolution, MonopolySolution, StrategyProfile
from .network import N_RSP, ProblemInstance, instance_from_dict

FORMAT = "rspgame-solution"
VERSION = 1


class SolutionFormatError(ValueError):
    pass


class InstanceMismatch(ValueError):
    pass


def instance_digest(instance: ProblemInstance) -> str:
    text = json.dumps(instance.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def _edge_table(instance, arr, with_rsp=True):
    T = instance.horizon
    out = {}
    if with_rsp:
        for i in range(arr.shape[0]):
            for e, (j, l) in enumerate(instance.edges):
                for t in range(T):
                    out[f"{i + 1},{j},{l},{t + 1}"] = float(arr[i, e, t])
    else:
        for e, (j, l) in enumerate(instance.edges):
            for t in range(T):
                out[f"{j},{l},{t + 1}"] = float(arr[e, t])
    return out


def _node_table(instance, arr, with_rsp=True):
    T = instance.horizon
    if not with_rsp:
        return {f"{j},{t + 1}": float(arr[j, t]) for j in range(instance.n_nodes) for t in range(T)}
    return {f"{i + 1},{j},{t + 1}": float(arr[i, j, t])
            for i in range(arr.shape[0]) for j in range(instance.n_nodes) for t in range(T)}


def _floats(v):
    return None if v is None else [float(a) for a in np.ravel(v)]


def solution_to_dict(solution: GneSolution | MonopolySolution, metadata: dict | None = None) -> dict:
    inst = solution.instance
    doc = {"format": FORMAT, "version": VERSION, "instance_sha256": instance_digest(inst),
           "instance": inst.to_dict(), "metadata": dict(metadata or {}),
           "residuals": dict(solution.residuals)}
    if isinstance(solution, GneSolution):
        doc.update(kind="gne" if solution.scenario_states is None else "stochastic_gne",
                   prices=_edge_table(inst, solution.prices),
                   routing=_edge_table(inst, solution.routing),
                   demand=_edge_table(inst, solution.demand),
                   state=_node_table(inst, solution.state),
                   profits=_floats(solution.profits), potential=float(solution.potential),
                   deviation_gain=_floats(solution.deviation_gain),
                   relative_gain=_floats(solution.relative_gain),
                   shared_gain=_floats(solution.shared_gain),
                   shared_relative_gain=_floats(solution.shared_relative_gain))
    elif isinstance(solution, MonopolySolution):
        doc.update(kind="monopoly", merged=solution.merged,
                   prices=_edge_table(inst, solution.prices, False),
                   routing=_edge_table(inst, solution.routing, False),
                   demand=_edge_table(inst, solution.demand, False),
                   state=_node_table(inst, solution.state, False),
                   profit=float(solution.profit))
    else:
        raise TypeError(f"cannot serialize {type(solution).__name__}")
    return doc


def write_solution(solution, path, metadata: dict | None = None) -> None:
    Path(path).write_text(json.dumps(solution_to_dict(solution, metadata), indent=1))


def _read_table(doc, name, instance, node_keyed=False):
    try:
        table = doc[name]
    except KeyError:
        raise SolutionFormatError(f"missing table {name!r}") from None
    if not isinstance(table, dict):
        raise SolutionFormatError(f"{name}: expected an object keyed by index strings")
    T = instance.horizon
    if node_keyed:
        out = np.full((N_RSP, instance.n_nodes, T), np.nan)
    else:
        out = np.full((N_RSP, instance.n_edges, T), np.nan)
    edge_pos = {e: k for k, e in enumerate(instance.edges)}
    for key, value in table.items():
        try:
            parts = [int(s) for s in key.split(",")]
            if node_keyed:
                i, j, t = parts
                pos = (i - 1, j, t - 1)
                ok = 0 <= j < instance.n_nodes
            else:
                i, j, l, t = parts
                pos = (i - 1, edge_pos.get((j, l), -1), t - 1)
                ok = pos[1] >= 0
            ok = ok and 1 <= i <= N_RSP and 1 <= t <= T
            value = float(value)
        except (ValueError, TypeError):
            raise SolutionFormatError(f"{name}: bad entry {key!r}: {value!r}") from None
        if not ok:
            raise SolutionFormatError(f"{name}: key {key!r} is outside the instance")
        out[pos] = value
    if np.isnan(out).any():
        raise SolutionFormatError(f"{name}: {int(np.isnan(out).sum())} entries missing")
    return out


def load_profile(doc: dict, instance: ProblemInstance | None = None):
    """Parse a duopoly solution document.

    Returns ``(instance, profile, state, demand)``.  When ``instance`` is given
    it must match the one the document was computed on.
    """
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise SolutionFormatError("not a solution document")
    if doc.get("kind") not in ("gne", "profile"):
        raise SolutionFormatError(f"expected a duopoly solution, got kind {doc.get('kind')!r}")
    try:
        embedded = instance_from_dict(doc["instance"])
    except (KeyError, ValueError) as exc:
        raise SolutionFormatError(f"embedded instance unreadable: {exc}") from None
    if instance is not None:
        if instance_digest(instance) != doc.get("instance_sha256"):
            raise InstanceMismatch("solution was computed on a different instance")
    else:
        instance = embedded
    prices = _read_table(doc, "prices", instance)
    routing = _read_table(doc, "routing", instance)
    state = _read_table(doc, "state", instance, node_keyed=True)
    demand = _read_table(doc, "demand", instance) if "demand" in doc else None
    return instance, StrategyProfile(prices, routing), state, demand


def read_solution(path, instance: ProblemInstance | None = None):
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SolutionFormatError(f"{path}: not valid JSON ({exc})") from None
    return load_profile(doc, instance)


CSV_FIELDS = ["table", "i", "j", "l", "t", "value"]


def solution_rows(solution: GneSolution | MonopolySolution) -> list[dict]:
    """One row per table entry; ``i`` is blank for monopoly tables, ``l`` for states."""
    inst = solution.instance
    rows = []
    mono = isinstance(solution, MonopolySolution)
    for name in ("prices", "routing", "demand"):
        arr = getattr(solution, name)
        arr = arr[None] if mono else arr
        for i in range(arr.shape[0]):
            for e, (j, l) in enumerate(inst.edges):
                for t in range(inst.horizon):
                    rows.append({"table": name, "i": "" if mono else i + 1, "j": j, "l": l,
                                 "t": t + 1, "value": repr(float(arr[i, e, t]))})
    state = solution.state[None] if mono else solution.state
    for i in range(state.shape[0]):
        for j in range(inst.n_nodes):
            for t in range(inst.horizon):
                rows.append({"table": "state", "i": "" if mono else i + 1, "j": j, "l": "",
                             "t": t + 1, "value": repr(float(state[i, j, t]))})
    return rows


def write_solution_csv(solution, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerows(solution_rows(solution))
