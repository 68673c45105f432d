"""Demand response formulas for the duopoly and the monopoly.

Everything here works elementwise on scalars or numpy arrays.  The own-price
coefficient is fixed at twice the rival-price coefficient.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PricePair:
    own: float
    rival: float
    p_max: float

    def __post_init__(self):
        if not self.p_max > 0:
            raise ValueError(f"p_max must be positive, got {self.p_max}")
        for name in ("own", "rival"):
            v = getattr(self, name)
            if not 0 <= v <= self.p_max:
                raise ValueError(f"{name} price {v} outside [0, {self.p_max}]")


def _check_base(D):
    if np.any(np.asarray(D) < 0):
        raise ValueError("base demand must be nonnegative")


def linear_demand(D, p_own, p_rival, p_max):
    """Unclipped affine demand; negative when the rival is much cheaper."""
    _check_base(D)
    return D * (0.5 - p_own / p_max + p_rival / (2 * p_max))


def duopoly_demand(D, p_own, p_rival, p_max):
    return np.maximum(linear_demand(D, p_own, p_rival, p_max), 0.0)


def zero_demand_threshold(p_rival, p_max):
    """Smallest own price at which the duopoly demand vanishes."""
    return p_max / 2 + p_rival / 2


def deterrence_price(p_rival, p_max):
    """Price a zero-demand RSP posts to squeeze its rival as hard as possible.

    Numerically the same as :func:`zero_demand_threshold`.
    """
    return zero_demand_threshold(p_rival, p_max)


def total_served(D, p_own, p_rival, p_max):
    d_own = linear_demand(D, p_own, p_rival, p_max)
    d_rival = linear_demand(D, p_rival, p_own, p_max)
    if np.any(d_own <= 0) or np.any(d_rival <= 0):
        raise ValueError("total_served needs both RSPs to have positive demand")
    return D * (1 - p_own / (2 * p_max) - p_rival / (2 * p_max))


def monopoly_demand(D, p, p_max):
    _check_base(D)
    p_arr = np.asarray(p)
    if np.any(p_arr < 0) or np.any(p_arr > p_max):
        raise ValueError(f"monopoly price outside [0, {p_max}]")
    return D * (1 - p / p_max)
