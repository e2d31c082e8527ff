"""Discretisation of every axis: time, truncated log-price, controls, p-grids.

Each control ``a`` is snapped onto the lattice of values for which an
integer number of p-steps of size ``|a|*delta/sigma`` spans [0, 1]
exactly.  The snapped control then owns its private uniform p-grid,
aligned with the degeneracy direction of its diffusion operator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

__all__ = [
    "TimeGrid",
    "XGrid",
    "AdjustedControl",
    "ControlSet",
    "adjust_control",
    "paper_raw_values",
    "build_paper_control_set",
    "build_linear_case_controls",
    "build_explicit_control_set",
    "build_xgrid",
    "build_time_grid",
]

# Relative slack absorbing float rounding in integer-threshold searches, so
# that exact-integer ratios (e.g. sigma/(|a|*delta) = 15.0) resolve exactly.
_REL_TOL = 1e-12


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing nodes 0 = t_0 < ... < t_kappa = T."""

    nodes: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.nodes) < 2:
            raise ValueError("time grid needs at least two nodes")
        if self.nodes[0] != 0.0:
            raise ValueError("time grid must start at 0")
        if any(b <= a for a, b in zip(self.nodes, self.nodes[1:])):
            raise ValueError("time grid must be strictly increasing")

    @property
    def num_steps(self) -> int:
        return len(self.nodes) - 1

    @property
    def T(self) -> float:
        return self.nodes[-1]

    def step(self, k: int) -> float:
        return self.nodes[k + 1] - self.nodes[k]

    @property
    def max_step(self) -> float:
        return max(b - a for a, b in zip(self.nodes, self.nodes[1:]))

    def index_of(self, t: float) -> int:
        """Index of the node matching ``t``; raises if off-grid."""
        for j, tj in enumerate(self.nodes):
            if abs(tj - t) <= 1e-12 * max(1.0, self.T):
                return j
        raise ValueError(f"t = {t} is not a node of the time grid")


@dataclass(frozen=True)
class XGrid:
    """Uniform log-price nodes B1 + k*delta inside the truncation [B1, B2]."""

    b1: float
    b2: float
    delta: float
    num_nodes: int

    def __post_init__(self) -> None:
        if self.num_nodes < 3:
            raise ValueError("x grid needs at least 3 nodes")

    @cached_property
    def nodes(self) -> np.ndarray:
        arr = self.b1 + self.delta * np.arange(self.num_nodes)
        arr.flags.writeable = False
        return arr

    def is_boundary(self, k: int) -> bool:
        return k == 0 or k == self.num_nodes - 1


def build_time_grid(T: float, h: float) -> TimeGrid:
    """Uniform grid of step ``h`` with the last step shortened to land on T."""
    if not 0.0 < h <= T:
        raise ValueError("need 0 < h <= T")
    ratio = T / h
    kappa = int(math.ceil(ratio - _REL_TOL * max(1.0, ratio)))
    nodes = [k * h for k in range(kappa)]
    if T - nodes[-1] <= _REL_TOL * T:
        nodes = nodes[:-1]
    nodes.append(T)
    return TimeGrid(tuple(nodes))


def build_xgrid(B1: float, B2: float, delta: float) -> XGrid:
    if delta <= 0.0:
        raise ValueError("delta must be positive")
    if B1 >= B2:
        raise ValueError("need B1 < B2")
    span = (B2 - B1) / delta
    n = int(math.floor(span + _REL_TOL * max(1.0, span))) + 1
    return XGrid(B1, B2, delta, n)


@dataclass(frozen=True)
class AdjustedControl:
    """A raw control with its snapped value and per-control p-grid size.

    ``n_p`` intervals of size 1/n_p cover [0, 1]; the identity
    n_p * |snapped| * delta = sigma holds exactly up to rounding.
    """

    raw: float
    snapped: float
    n_p: int

    @property
    def sign(self) -> int:
        return 1 if self.snapped > 0 else -1

    @cached_property
    def p_nodes(self) -> np.ndarray:
        arr = np.arange(self.n_p + 1) / self.n_p
        arr.flags.writeable = False
        return arr


def adjust_control(a: float, delta: float, sigma: float) -> AdjustedControl:
    """Snap ``a`` so that an integer number of p-steps spans [0, 1] exactly.

    n_p = min{j >= 1 : j*|a|*delta/sigma >= 1}, found by integer search
    seeded by the floating division so that exact-integer ratios are not
    bumped up by rounding noise.
    """
    if a == 0.0:
        raise ValueError("the zero control is excluded from the control set")
    if delta <= 0.0 or sigma <= 0.0:
        raise ValueError("delta and sigma must be positive")
    ratio = sigma / (abs(a) * delta)
    n = max(1, int(math.floor(ratio)))
    while n * abs(a) * delta < sigma * (1.0 - _REL_TOL):
        n += 1
    snapped = math.copysign((sigma / delta) / n, a)
    return AdjustedControl(raw=a, snapped=snapped, n_p=n)


@dataclass(frozen=True)
class ControlSet:
    """Snapped controls in a stable order, duplicates merged."""

    controls: tuple[AdjustedControl, ...]
    provenance: str

    def __post_init__(self) -> None:
        if not self.controls:
            raise ValueError("control set must be non-empty")

    def __iter__(self):
        return iter(self.controls)

    def __len__(self) -> int:
        return len(self.controls)

    @property
    def max_abs_snapped(self) -> float:
        return max(abs(c.snapped) for c in self.controls)


def _dedup_snapped(controls: list[AdjustedControl]) -> tuple[AdjustedControl, ...]:
    # identical snapped values produce identical per-control solves
    seen: dict[float, AdjustedControl] = {}
    for c in controls:
        seen.setdefault(c.snapped, c)
    return tuple(seen.values())


def paper_raw_values() -> tuple[float, ...]:
    """The 22 raw controls: halves in [-2, 2] and thirds in [-3, 3], no zero."""
    raws: set[float] = set()
    for k in range(-4, 5):
        if k != 0:
            raws.add(k / 2.0)
    for k in range(-9, 10):
        if k != 0:
            raws.add(k / 3.0)
    return tuple(sorted(raws))


def build_paper_control_set(delta: float, sigma: float) -> ControlSet:
    """The 22-raw-value benchmark set, snapped and de-duplicated.

    Values snapping to the same adjusted control are merged keeping the
    first occurrence in ascending raw order.
    """
    controls = [adjust_control(a, delta, sigma) for a in paper_raw_values()]
    return ControlSet(_dedup_snapped(controls), provenance="paper22")


def build_linear_case_controls(
    n: int, sigma: float, C: float = 1.0
) -> tuple[float, ControlSet]:
    """Control ladder sigma/(m_i*delta) for the linear-driver rate study.

    ``delta`` is the largest spacing with sigma/(n*delta) >= 1/sqrt(2*pi*C*delta),
    i.e. delta = 2*pi*C*sigma^2/n^2.  Starting from m_1 = n, each next
    index is the smallest m with a gap of at least 1/n between consecutive
    control values; generation stops once a value at or below 1/n has been
    appended (the final, smallest control is kept).
    """
    if n < 2:
        raise ValueError("need n >= 2")
    if sigma <= 0.0 or C <= 0.0:
        raise ValueError("sigma and C must be positive")
    delta = 2.0 * math.pi * C * sigma * sigma / (n * n)
    q = sigma / delta
    gap = 1.0 / n
    ms = [n]
    values = [q / n]
    while values[-1] > gap:
        target = values[-1] - gap  # need q/m <= target
        m = max(ms[-1] + 1, int(math.floor(q / target)))
        while q / m > target * (1.0 + _REL_TOL):
            m += 1
        ms.append(m)
        values.append(q / m)
    controls = [adjust_control(a, delta, sigma) for a in values]
    return delta, ControlSet(_dedup_snapped(controls), provenance=f"linear_case(n={n})")


def build_explicit_control_set(values, delta: float, sigma: float) -> ControlSet:
    controls = [adjust_control(float(a), delta, sigma) for a in values]
    return ControlSet(_dedup_snapped(controls), provenance="explicit")
