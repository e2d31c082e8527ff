"""One implicit backward step: diagonal stencils, numerical Hamiltonian, Picard.

Each control's field lives on the lattice (x-grid) x (its own p-grid).
All differences are taken along the diagonal direction (delta in x, one
p-interval in p), which is exactly the degeneracy direction of the
control's diffusion operator, so the implicit system couples neighbours
along diagonals only.  The system is solved by the fixed-point map that
isolates the centre value of the stencil; under the step-size conditions
this map is a sup-norm contraction.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .grids import AdjustedControl
from .model import MarketModel, SchemeParams, check_cfl, eval_driver

__all__ = [
    "ControlField",
    "StencilSample",
    "PicardStepResult",
    "PicardRowResult",
    "PicardNonConvergence",
    "CflViolation",
    "stencil_2d",
    "hamiltonian_F",
    "lax_friedrichs_hat_F",
    "contraction_factor",
    "picard_map_interior",
    "picard_step_interior",
    "picard_step_boundary",
]


class PicardNonConvergence(RuntimeError):
    """Fixed-point iteration exhausted its budget; carries the last residual."""

    def __init__(self, iterations: int, last_diff: float, context: str = ""):
        self.iterations = iterations
        self.last_diff = last_diff
        msg = f"Picard iteration did not converge after {iterations} sweeps (last diff {last_diff:g})"
        if context:
            msg += f" [{context}]"
        super().__init__(msg)


class CflViolation(ValueError):
    """Step-size conditions fail and unchecked mode was not requested."""

    def __init__(self, violations):
        self.violations = tuple(violations)
        super().__init__("step-size conditions violated: " + "; ".join(self.violations))


@dataclass
class ControlField:
    """Solution values for one control on (x-grid) x (its p-grid)."""

    control: AdjustedControl
    delta: float
    values: np.ndarray  # shape (num_x, n_p + 1)

    def __post_init__(self) -> None:
        if self.values.ndim != 2 or self.values.shape[1] != self.control.n_p + 1:
            raise ValueError("field shape must be (num_x, n_p + 1)")


@dataclass(frozen=True)
class StencilSample:
    v: float
    grad: float
    grad_up: float
    lap: float


def stencil_2d(field: ControlField, k: int, l: int, upwind: str = "forward") -> StencilSample:
    """Diagonal differences at an interior node (k, l).

    grad is the centred difference, grad_up the one-sided difference in
    the upwind direction, lap the second difference; all taken along
    (delta, sign(a) p-interval).
    """
    v = field.values
    n_x, n_cols = v.shape
    if not (0 < k < n_x - 1):
        raise IndexError("k must be interior to the x-grid")
    if not (0 < l < n_cols - 1):
        raise IndexError("l must be interior to the p-grid")
    s = field.control.sign
    d = field.delta
    vc = v[k, l]
    vp = v[k + 1, l + s]
    vm = v[k - 1, l - s]
    grad = (vp - vm) / (2.0 * d)
    if upwind == "forward":
        grad_up = (vp - vc) / d
    elif upwind == "backward":
        grad_up = (vc - vm) / d
    else:
        raise ValueError("upwind must be 'forward' or 'backward'")
    lap = (vp + vm - 2.0 * vc) / (d * d)
    return StencilSample(float(vc), float(grad), float(grad_up), float(lap))


def hamiltonian_F(t, x, y, q, A, driver):
    """Plain numerical Hamiltonian -mu*q - sigma^2/2*A - f(t, x, y, sigma*q)."""
    return (
        -driver.mu * q
        - 0.5 * driver.sigma * driver.sigma * A
        - eval_driver(driver, t, x, y, driver.sigma * q)
    )


def lax_friedrichs_hat_F(t, x, y, q, q_up, A, driver, theta: float, delta: float, h: float):
    """Stabilised Hamiltonian: upwinded advection plus theta*delta^2/h diffusion.

    Differs from :func:`hamiltonian_F` evaluated at q_up by exactly
    -theta*delta^2/h*A; the f-argument keeps the centred difference.
    """
    return (
        -driver.mu * q_up
        - (0.5 * driver.sigma * driver.sigma + theta * delta * delta / h) * A
        - eval_driver(driver, t, x, y, driver.sigma * q)
    )


def contraction_factor(
    h: float, delta: float, theta: float, mu: float, sigma: float, L: float
) -> float:
    """Sup-norm Lipschitz bound (4*theta + x)/(1 + x) of the fixed-point map.

    x = h*|mu|/delta + sigma^2*h/delta^2 + 2*theta.  The driver coupling
    h*L*(1 + 1/delta) is absorbed into 4*theta via the step-size
    conditions, which is why L enters only through that precondition.
    """
    del L
    x = h * abs(mu) / delta + sigma * sigma * h / (delta * delta) + 2.0 * theta
    return (4.0 * theta + x) / (1.0 + x)


@dataclass
class PicardStepResult:
    field: ControlField
    iterations: int
    last_diff: float
    residual: float


@dataclass
class PicardRowResult:
    row: np.ndarray
    iterations: int
    last_diff: float
    residual: float


def _iterate(sweep: Callable[[np.ndarray], np.ndarray], v0: np.ndarray,
             tol: float, max_iters: int, context: str):
    v = v0
    for it in range(1, max_iters + 1):
        v_new = sweep(v)
        diff = float(np.max(np.abs(v_new - v)))
        v = v_new
        if diff <= tol:
            return v, it, diff
    raise PicardNonConvergence(max_iters, diff, context)


def _require_cfl(h, delta, params, model, unchecked):
    if unchecked:
        return
    report = check_cfl(h, delta, params, model)
    if not report.ok:
        raise CflViolation(report.violations)


def _denominator(h: float, delta: float, model: MarketModel, params: SchemeParams) -> float:
    lam = model.sigma * model.sigma * h / (2.0 * delta * delta)
    return 1.0 + abs(model.mu) * h / delta + 2.0 * lam + 2.0 * params.theta


def picard_map_interior(
    control: AdjustedControl,
    phi: np.ndarray,
    boundary0: np.ndarray,
    boundary1: np.ndarray,
    col_left: np.ndarray,
    col_right: np.ndarray,
    t: float,
    h: float,
    delta: float,
    x_nodes: np.ndarray,
    model: MarketModel,
    params: SchemeParams,
) -> Callable[[np.ndarray], np.ndarray]:
    """The fixed-point map of the interior system with its data frozen.

    One call applies a single sweep: the centre value of every interior
    node is isolated from the stencil, the driver is read at the previous
    iterate, and the boundary rows/columns are re-pinned.
    """
    n_p = control.n_p
    s = control.sign
    driver = model.driver
    sigma = model.sigma
    lam = sigma * sigma * h / (2.0 * delta * delta)
    adv = abs(model.mu) * h / delta
    den = _denominator(h, delta, model, params)
    c_diff = lam + params.theta
    forward = model.mu >= 0.0
    phi_int = phi[1:-1, 1:n_p]
    x_int = x_nodes[1:-1, None]
    inv_2d = sigma / (2.0 * delta)

    def sweep(v: np.ndarray) -> np.ndarray:
        if s > 0:
            vp = v[2:, 2:]
            vm = v[:-2, :-2]
        else:
            vp = v[2:, :-2]
            vm = v[:-2, 2:]
        vc = v[1:-1, 1:n_p]
        z = inv_2d * (vp - vm)
        fval = eval_driver(driver, t, x_int, vc, z)
        num = phi_int + c_diff * (vp + vm) + h * fval
        num += adv * (vp if forward else vm)
        out = v.copy()
        out[1:-1, 1:n_p] = num / den
        out[:, 0] = boundary0
        out[:, n_p] = boundary1
        out[0, :] = col_left
        out[-1, :] = col_right
        return out

    return sweep


def picard_step_interior(
    control: AdjustedControl,
    prev: Callable[[np.ndarray], np.ndarray],
    boundary0: np.ndarray,
    boundary1: np.ndarray,
    col_left: np.ndarray,
    col_right: np.ndarray,
    t: float,
    h: float,
    delta: float,
    x_nodes: np.ndarray,
    model: MarketModel,
    params: SchemeParams,
    unchecked: bool = False,
) -> PicardStepResult:
    """Solve one implicit step of the interior system for one control.

    ``prev`` maps an array of p-values to the previous-step surface on
    the full x-grid, shape (num_x, len(p)); it is read once at the
    drift-shifted probabilities and held fixed during the iteration.
    Rows l = 0 / l = n_p are pinned to ``boundary0`` / ``boundary1`` and
    the x-end columns to ``col_left`` / ``col_right``.
    """
    _require_cfl(h, delta, params, model, unchecked)
    n_x = len(x_nodes)
    n_p = control.n_p
    if boundary0.shape != (n_x,) or boundary1.shape != (n_x,):
        raise ValueError("boundary rows must match the x-grid")
    if col_left.shape != (n_p + 1,) or col_right.shape != (n_p + 1,):
        raise ValueError("x-end columns must match the p-grid")

    shift = model.mu * control.snapped / model.sigma * h
    p_shifted = np.clip(control.p_nodes - shift, 0.0, 1.0)
    phi = np.asarray(prev(p_shifted), dtype=float)
    if phi.shape != (n_x, n_p + 1):
        raise ValueError("prev must return a (num_x, n_p + 1) array")

    sweep = picard_map_interior(
        control, phi, boundary0, boundary1, col_left, col_right,
        t, h, delta, x_nodes, model, params,
    )
    den = _denominator(h, delta, model, params)

    v0 = phi.copy()  # warm start: shifted previous surface, boundaries pinned
    v0[:, 0] = boundary0
    v0[:, n_p] = boundary1
    v0[0, :] = col_left
    v0[-1, :] = col_right
    v, iterations, diff = _iterate(
        sweep, v0, params.picard_tol, params.picard_max_iters,
        f"interior step, control {control.snapped:g}, t={t:g}",
    )
    residual = float(np.max(np.abs(den * (v - sweep(v))))) if n_p > 1 and n_x > 2 else 0.0
    field = ControlField(control, delta, v)
    return PicardStepResult(field, iterations, diff, residual)


def picard_step_boundary(
    prev_row: np.ndarray,
    left: float,
    right: float,
    t: float,
    h: float,
    delta: float,
    x_nodes: np.ndarray,
    model: MarketModel,
    params: SchemeParams,
    unchecked: bool = False,
) -> PicardRowResult:
    """One implicit step of the one-dimensional system along the x-grid.

    This is the p-boundary analogue of the interior step (no p-shift, 1D
    stencils); the x-endpoints are pinned to ``left`` and ``right``.
    """
    _require_cfl(h, delta, params, model, unchecked)
    u = np.asarray(prev_row, dtype=float)
    if u.shape != x_nodes.shape:
        raise ValueError("prev_row must match the x-grid")

    driver = model.driver
    sigma = model.sigma
    theta = params.theta
    lam = sigma * sigma * h / (2.0 * delta * delta)
    adv = abs(model.mu) * h / delta
    den = 1.0 + adv + 2.0 * lam + 2.0 * theta
    c_diff = lam + theta
    forward = model.mu >= 0.0
    u_int = u[1:-1]
    x_int = x_nodes[1:-1]
    inv_2d = sigma / (2.0 * delta)

    def pin(v: np.ndarray) -> np.ndarray:
        v[0] = left
        v[-1] = right
        return v

    def sweep(v: np.ndarray) -> np.ndarray:
        vp = v[2:]
        vm = v[:-2]
        vc = v[1:-1]
        z = inv_2d * (vp - vm)
        fval = eval_driver(driver, t, x_int, vc, z)
        num = u_int + c_diff * (vp + vm) + h * fval
        num += adv * (vp if forward else vm)
        out = v.copy()
        out[1:-1] = num / den
        return pin(out)

    v0 = pin(u.copy())
    v, iterations, diff = _iterate(
        sweep, v0, params.picard_tol, params.picard_max_iters, f"boundary step, t={t:g}"
    )
    residual = float(np.max(np.abs(den * (v - sweep(v)))))
    return PicardRowResult(v, iterations, diff, residual)
