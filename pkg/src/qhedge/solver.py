"""Backward induction over controls: per-control steps, min-reduction, assembly.

The surface at a time node is the pointwise minimum over controls of the
per-control fields, each extended to all p in [0, 1] by linear
interpolation on its own p-grid.  Between rounds the previous surface is
kept in this per-control form and evaluated lazily, because every
control reads it at its own drift-shifted probabilities.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .grids import AdjustedControl, ControlSet, TimeGrid, XGrid
from .model import MarketModel, Payoff, SchemeParams, check_cfl
from .stepping import (
    CflViolation,
    ControlField,
    PicardStepResult,
    picard_step_boundary,
    picard_step_interior,
)

__all__ = [
    "SuperRepCurve",
    "SurfaceLayer",
    "ValueSurface",
    "StepDiagnostics",
    "interpolate_p",
    "solve_superreplication",
    "pcpt_backward_solve",
    "min_reduce",
]

_NODE_SNAP = 1e-9  # p-values this close to a grid node evaluate exactly on it


def _interp_field_at_p(field: ControlField, p: np.ndarray) -> np.ndarray:
    """Linear interpolation of a field in p; shape (num_x, len(p))."""
    n = field.control.n_p
    t = np.asarray(p, dtype=float) * n
    r = np.rint(t)
    t = np.where(np.abs(t - r) <= _NODE_SNAP * n, r, t)
    idx = np.clip(t.astype(int), 0, n - 1)
    w = t - idx
    v = field.values
    return v[:, idx] * (1.0 - w) + v[:, idx + 1] * w


def interpolate_p(field: ControlField, k: int, p: float) -> float:
    """Field value at (x_k, p), exact on p-grid nodes, linear in between."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    return float(_interp_field_at_p(field, np.array([p]))[k, 0])


def _tie_key(control: AdjustedControl):
    # deterministic argmin tie-break: smallest |raw|, then positive first
    return (abs(control.raw), 0 if control.raw > 0 else 1)


def min_reduce(fields, k: int, p: float):
    """Minimum over per-control fields at (x_k, p) with its achieving control."""
    ordered = sorted(fields, key=lambda f: _tie_key(f.control))
    if not ordered:
        raise ValueError("min_reduce needs at least one field")
    best_val = None
    best_control = None
    for f in ordered:
        val = interpolate_p(f, k, p)
        if best_val is None or val < best_val:
            best_val = val
            best_control = f.control
    return best_val, best_control


@dataclass
class SuperRepCurve:
    """Super-replication prices on (time grid) x (x-grid), p = 1 boundary."""

    tgrid: TimeGrid
    xgrid: XGrid
    values: np.ndarray  # (num_steps + 1, num_x)
    iterations: tuple[int, ...]  # per backward step, j = 0 .. num_steps - 1

    def value(self, t: float, x: float) -> float:
        j = self.tgrid.index_of(t)
        return float(np.interp(x, self.xgrid.nodes, self.values[j]))

    @property
    def gradient(self) -> np.ndarray:
        """Central-difference x-gradient (one-sided at the truncation ends)."""
        return np.gradient(self.values, self.xgrid.delta, axis=1)


def solve_superreplication(
    model: MarketModel,
    payoff: Payoff,
    tgrid: TimeGrid,
    xgrid: XGrid,
    params: SchemeParams,
    x_boundary,
    unchecked: bool = False,
) -> SuperRepCurve:
    """Backward recursion of the one-dimensional system from the payoff.

    ``x_boundary(t, x)`` supplies the Dirichlet data at the truncation
    endpoints.
    """
    if not unchecked:
        report = check_cfl(tgrid.max_step, xgrid.delta, params, model)
        if not report.ok:
            raise CflViolation(report.violations)
    nodes = xgrid.nodes
    kappa = tgrid.num_steps
    values = np.empty((kappa + 1, xgrid.num_nodes))
    values[kappa] = payoff(nodes)
    iterations = [0] * kappa
    for j in range(kappa - 1, -1, -1):
        t_j = tgrid.nodes[j]
        res = picard_step_boundary(
            values[j + 1],
            left=float(x_boundary(t_j, xgrid.b1)),
            right=float(x_boundary(t_j, xgrid.b2)),
            t=t_j,
            h=tgrid.step(j),
            delta=xgrid.delta,
            x_nodes=nodes,
            model=model,
            params=params,
            unchecked=True,
        )
        values[j] = res.row
        iterations[j] = res.iterations
    return SuperRepCurve(tgrid, xgrid, values, tuple(iterations))


@dataclass
class SurfaceLayer:
    """All per-control fields of one time node, in tie-break order."""

    fields: tuple[ControlField, ...]

    def eval_at_p(self, p: np.ndarray) -> np.ndarray:
        """Min-reduced surface on the full x-grid at the given p-values."""
        out = None
        for f in self.fields:
            vals = _interp_field_at_p(f, p)
            out = vals if out is None else np.minimum(out, vals, out=out)
        return out

    def eval_with_argmin(self, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Values plus the index (into ``fields``) achieving the minimum."""
        stack = np.stack([_interp_field_at_p(f, p) for f in self.fields])
        idx = np.argmin(stack, axis=0)
        return np.min(stack, axis=0), idx


class _TerminalLayer:
    """Analytic terminal surface g(x) * p."""

    def __init__(self, payoff: Payoff, x_nodes: np.ndarray):
        self._g = np.asarray(payoff(x_nodes), dtype=float)

    def eval_at_p(self, p: np.ndarray) -> np.ndarray:
        return self._g[:, None] * np.asarray(p, dtype=float)[None, :]


@dataclass
class StepDiagnostics:
    """Per-backward-step solver statistics."""

    index: int
    t: float
    h: float
    seconds: float
    boundary_iterations: int
    control_iterations: tuple[tuple[float, int], ...]  # (snapped, iterations)
    max_residual: float

    @property
    def max_iterations(self) -> int:
        return max((it for _, it in self.control_iterations), default=self.boundary_iterations)

    @property
    def total_iterations(self) -> int:
        return self.boundary_iterations + sum(it for _, it in self.control_iterations)


@dataclass
class ValueSurface:
    """The assembled solution: query interface plus run diagnostics.

    ``layers`` holds the retained time nodes (all of them, or only t = 0
    when memory dictates); the terminal node is always available since it
    is analytic.
    """

    model: MarketModel
    payoff: Payoff
    tgrid: TimeGrid
    xgrid: XGrid
    controls: ControlSet
    params: SchemeParams
    superrep: SuperRepCurve
    p0_rows: np.ndarray  # (num_steps + 1, num_x)
    layers: dict[int, SurfaceLayer]
    diagnostics: tuple[StepDiagnostics, ...]
    argmin_counts: dict[float, int] = dataclass_field(default_factory=dict)

    @property
    def max_picard_iterations(self) -> int:
        return max((d.max_iterations for d in self.diagnostics), default=0)

    def retained_indices(self) -> list[int]:
        idx = sorted(self.layers)
        idx.append(self.tgrid.num_steps)
        return idx

    def _layer(self, j: int) -> SurfaceLayer:
        try:
            return self.layers[j]
        except KeyError:
            raise KeyError(f"time node {j} was not retained (keep policy)") from None

    def _x_weight(self, x: float) -> tuple[int, float]:
        nodes = self.xgrid.nodes
        if not nodes[0] - 1e-12 <= x <= nodes[-1] + 1e-12:
            raise ValueError(f"x = {x} outside the truncated domain")
        pos = (x - nodes[0]) / self.xgrid.delta
        k0 = int(np.clip(np.floor(pos), 0, self.xgrid.num_nodes - 2))
        return k0, min(max(pos - k0, 0.0), 1.0)

    def value(self, t: float, x: float, p: float) -> float:
        """Surface value at a time node, linear in x between grid nodes."""
        if not 0.0 <= p <= 1.0:
            raise ValueError("p must lie in [0, 1]")
        j = self.tgrid.index_of(t)
        if j == self.tgrid.num_steps:
            return float(self.payoff(x)) * p
        col = self._layer(j).eval_at_p(np.array([p]))[:, 0]
        k0, w = self._x_weight(x)
        return float((1.0 - w) * col[k0] + w * col[k0 + 1])

    def value_and_argmin(self, t: float, x: float, p: float):
        """Value with the control achieving the min (tie-break order)."""
        j = self.tgrid.index_of(t)
        if j == self.tgrid.num_steps:
            return float(self.payoff(x)) * p, None
        layer = self._layer(j)
        k0, w = self._x_weight(x)
        best_val = None
        best_control = None
        for f in layer.fields:
            col = _interp_field_at_p(f, np.array([p]))[:, 0]
            val = (1.0 - w) * col[k0] + w * col[k0 + 1]
            if best_val is None or val < best_val:
                best_val = float(val)
                best_control = f.control
        return best_val, best_control

    def grid_values(self, j: int, p_samples) -> tuple[np.ndarray, np.ndarray | None]:
        """(num_x, len(p_samples)) values at node j, with argmin indices."""
        p = np.asarray(p_samples, dtype=float)
        if j == self.tgrid.num_steps:
            term = _TerminalLayer(self.payoff, self.xgrid.nodes)
            return term.eval_at_p(p), None
        vals, idx = self._layer(j).eval_with_argmin(p)
        return vals, idx


def pcpt_backward_solve(
    model: MarketModel,
    payoff: Payoff,
    tgrid: TimeGrid,
    xgrid: XGrid,
    controls: ControlSet,
    params: SchemeParams,
    x_boundary,
    unchecked: bool = False,
    keep: str = "all",
    threads: int = 1,
    argmin_probe_p=(0.25, 0.5, 0.75),
) -> ValueSurface:
    """Full backward induction of the fully discrete scheme.

    ``x_boundary(t, x, p)`` supplies Dirichlet data at the truncation
    endpoints.  The p = 1 rows are shared with the super-replication
    curve (they satisfy the same one-dimensional system with the same
    data) and the p = 0 rows follow the zero boundary recursion.
    The step-size conditions are validated once for the nominal (largest)
    step; per-control solves then run unchecked.
    """
    if keep not in ("all", "initial"):
        raise ValueError("keep must be 'all' or 'initial'")
    if not unchecked:
        report = check_cfl(tgrid.max_step, xgrid.delta, params, model)
        if not report.ok:
            raise CflViolation(report.violations)

    superrep = solve_superreplication(
        model, payoff, tgrid, xgrid, params,
        lambda t, x: x_boundary(t, x, 1.0), unchecked=True,
    )

    nodes = xgrid.nodes
    kappa = tgrid.num_steps
    delta = xgrid.delta
    ordered_controls = tuple(sorted(controls, key=_tie_key))

    p0_rows = np.zeros((kappa + 1, xgrid.num_nodes))
    layers: dict[int, SurfaceLayer] = {}
    diagnostics: list[StepDiagnostics] = []
    argmin_counts = {c.snapped: 0 for c in ordered_controls}
    probe = np.asarray(argmin_probe_p, dtype=float)

    prev_eval = _TerminalLayer(payoff, nodes).eval_at_p
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for j in range(kappa - 1, -1, -1):
            t_j = tgrid.nodes[j]
            h = tgrid.step(j)
            started = time.perf_counter()

            b0 = picard_step_boundary(
                p0_rows[j + 1],
                left=float(x_boundary(t_j, xgrid.b1, 0.0)),
                right=float(x_boundary(t_j, xgrid.b2, 0.0)),
                t=t_j, h=h, delta=delta, x_nodes=nodes,
                model=model, params=params, unchecked=True,
            )
            p0_rows[j] = b0.row
            row1 = superrep.values[j]

            def solve_one(control: AdjustedControl) -> PicardStepResult:
                col_l = np.array([x_boundary(t_j, xgrid.b1, p) for p in control.p_nodes])
                col_r = np.array([x_boundary(t_j, xgrid.b2, p) for p in control.p_nodes])
                return picard_step_interior(
                    control, prev_eval, p0_rows[j], row1, col_l, col_r,
                    t=t_j, h=h, delta=delta, x_nodes=nodes,
                    model=model, params=params, unchecked=True,
                )

            if pool is not None:
                results = list(pool.map(solve_one, ordered_controls))
            else:
                results = [solve_one(c) for c in ordered_controls]

            layer = SurfaceLayer(tuple(r.field for r in results))
            if probe.size:
                _, idx = layer.eval_with_argmin(probe)
                counts = np.bincount(idx[1:-1].ravel(), minlength=len(ordered_controls))
                for c, n in zip(ordered_controls, counts):
                    argmin_counts[c.snapped] += int(n)
            diagnostics.append(
                StepDiagnostics(
                    index=j,
                    t=t_j,
                    h=h,
                    seconds=time.perf_counter() - started,
                    boundary_iterations=b0.iterations,
                    control_iterations=tuple(
                        (c.snapped, r.iterations) for c, r in zip(ordered_controls, results)
                    ),
                    max_residual=max(r.residual for r in results),
                )
            )
            if keep == "all" or j == 0:
                layers[j] = layer
            prev_eval = layer.eval_at_p
    finally:
        if pool is not None:
            pool.shutdown()

    diagnostics.reverse()
    return ValueSurface(
        model=model,
        payoff=payoff,
        tgrid=tgrid,
        xgrid=xgrid,
        controls=controls,
        params=params,
        superrep=superrep,
        p0_rows=p0_rows,
        layers=layers,
        diagnostics=tuple(diagnostics),
        argmin_counts=argmin_counts,
    )
