"""Market model, wealth-drift non-linearities, payoffs and parameter checks.

The market is a one-dimensional Black-Scholes market written on the
log-price ``X_t = x + mu*t + sigma*W_t``.  The wealth account carries a
drift non-linearity ``f(t, x, y, z)`` that encodes market imperfections
(a borrowing spread, or distinct lending/borrowing rates).  Everything in
this module is immutable and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

__all__ = [
    "DriverKind",
    "DriverSpec",
    "MarketModel",
    "Payoff",
    "SchemeParams",
    "CheckResult",
    "AssumptionReport",
    "CflReport",
    "eval_driver",
    "driver_lipschitz",
    "driver_lipschitz_components",
    "check_assumptions",
    "check_cfl",
]


class DriverKind(Enum):
    """Available wealth-drift non-linearities."""

    LINEAR = "linear"
    BORROW_SPREAD = "borrow_spread"
    TWO_RATES = "two_rates"


@dataclass(frozen=True)
class DriverSpec:
    """A driver kind bound to the market's drift and volatility.

    ``R`` is the borrowing rate (BORROW_SPREAD, TWO_RATES) and ``r`` the
    lending rate (TWO_RATES only).  Rate-sign and monotonicity conditions
    are deliberately not enforced here so that :func:`check_assumptions`
    can report violations on concrete instances.
    """

    kind: DriverKind
    mu: float
    sigma: float
    R: float = 0.0
    r: float = 0.0

    def __post_init__(self) -> None:
        if self.sigma <= 0.0:
            raise ValueError("sigma must be positive")

    def validate(self) -> None:
        """Raise if the rate parameters violate the standing assumptions."""
        if self.kind is DriverKind.BORROW_SPREAD and self.R < 0.0:
            raise ValueError("borrow-spread driver requires R >= 0")
        if self.kind is DriverKind.TWO_RATES and not (self.R >= self.r >= 0.0):
            raise ValueError("two-rates driver requires R >= r >= 0")


@dataclass(frozen=True)
class MarketModel:
    """Drift, volatility and horizon of the log-price plus the driver."""

    mu: float
    sigma: float
    T: float
    driver: DriverSpec

    def __post_init__(self) -> None:
        if self.sigma <= 0.0:
            raise ValueError("sigma must be positive")
        if self.T <= 0.0:
            raise ValueError("T must be positive")
        if self.driver.mu != self.mu or self.driver.sigma != self.sigma:
            raise ValueError("driver must be bound to the model's mu and sigma")

    @classmethod
    def linear(cls, mu: float, sigma: float, T: float) -> "MarketModel":
        return cls(mu, sigma, T, DriverSpec(DriverKind.LINEAR, mu, sigma))

    @classmethod
    def borrow_spread(cls, mu: float, sigma: float, T: float, R: float) -> "MarketModel":
        return cls(mu, sigma, T, DriverSpec(DriverKind.BORROW_SPREAD, mu, sigma, R=R))

    @classmethod
    def two_rates(cls, mu: float, sigma: float, T: float, r: float, R: float) -> "MarketModel":
        return cls(mu, sigma, T, DriverSpec(DriverKind.TWO_RATES, mu, sigma, R=R, r=r))


@dataclass(frozen=True)
class Payoff:
    """Bounded terminal claim ``g`` as a function of the log-price.

    Either a vanilla put ``g(x) = max(K - exp(x), 0)`` or a custom claim
    given by a sample table with a declared Lipschitz constant.  Custom
    claims are evaluated by linear interpolation of the table, held
    constant outside its range.
    """

    kind: str
    K: float = 0.0
    table_x: tuple[float, ...] = field(default_factory=tuple)
    table_g: tuple[float, ...] = field(default_factory=tuple)
    lipschitz: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("put", "custom"):
            raise ValueError(f"unknown payoff kind {self.kind!r}")
        if self.kind == "custom":
            if len(self.table_x) != len(self.table_g) or len(self.table_x) < 2:
                raise ValueError("custom payoff needs a table of at least 2 samples")
            xs, gs = self.table_x, self.table_g
            if any(b <= a for a, b in zip(xs, xs[1:])):
                raise ValueError("custom payoff table must have increasing x")
            for (xa, ga), (xb, gb) in zip(zip(xs, gs), zip(xs[1:], gs[1:])):
                if abs(gb - ga) > self.lipschitz * (xb - xa) * (1.0 + 1e-12):
                    raise ValueError(
                        "declared Lipschitz constant inconsistent with samples "
                        f"between x={xa} and x={xb}"
                    )

    @classmethod
    def put(cls, K: float) -> "Payoff":
        if K < 0.0:
            raise ValueError("strike must be non-negative")
        return cls("put", K=K)

    @classmethod
    def custom(cls, table_x, table_g, lipschitz: float) -> "Payoff":
        return cls(
            "custom",
            table_x=tuple(float(x) for x in table_x),
            table_g=tuple(float(g) for g in table_g),
            lipschitz=float(lipschitz),
        )

    @property
    def bound(self) -> float:
        """sup |g|."""
        if self.kind == "put":
            return self.K
        return max(abs(g) for g in self.table_g)

    def __call__(self, x):
        if self.kind == "put":
            return np.maximum(self.K - np.exp(x), 0.0)
        return np.interp(x, self.table_x, self.table_g)


@dataclass(frozen=True)
class SchemeParams:
    """Numerical parameters of the implicit monotone scheme.

    ``theta`` is the artificial-diffusion weight, ``M`` the upper-ratio
    constant in the step-size conditions and ``lipschitz_L`` the working
    Lipschitz constant used in those conditions.
    """

    theta: float = 0.2
    M: float = 1.0
    picard_tol: float = 1e-5
    picard_max_iters: int = 50_000
    lipschitz_L: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 < self.theta < 0.25:
            raise ValueError("theta must lie in (0, 1/4)")
        if self.picard_tol <= 0.0:
            raise ValueError("picard_tol must be positive")
        if self.M <= 0.0:
            raise ValueError("M must be positive")
        if self.lipschitz_L < 0.0:
            raise ValueError("lipschitz_L must be non-negative")
        if self.picard_max_iters < 1:
            raise ValueError("picard_max_iters must be at least 1")


def eval_driver(spec: DriverSpec, t, x, y, z):
    """Evaluate the wealth drift ``f(t, x, y, z)``; accepts scalars or arrays.

    LINEAR:        -z*mu/sigma
    BORROW_SPREAD: -z*mu/sigma + R*max(z/sigma - y, 0)
    TWO_RATES:     -r*y - z*mu/sigma + (R - r)*max(z/sigma - y, 0)
    """
    del t, x  # the supported kinds are time- and price-homogeneous
    base = -np.multiply(z, spec.mu / spec.sigma)
    if spec.kind is DriverKind.LINEAR:
        return base
    short = np.maximum(np.divide(z, spec.sigma) - y, 0.0)
    if spec.kind is DriverKind.BORROW_SPREAD:
        return base + spec.R * short
    return base - spec.r * np.asarray(y, dtype=float) + (spec.R - spec.r) * short


def driver_lipschitz(spec: DriverSpec) -> float:
    """Working Lipschitz constant used by the step-size conditions.

    This is the constant used in the reference experiments (|mu| for the
    linear driver, |mu| + R with a borrowing spread, r + |mu| + (R - r)
    with two rates); it is not the sharp joint Lipschitz constant, which
    :func:`driver_lipschitz_components` provides.
    """
    if spec.kind is DriverKind.LINEAR:
        return abs(spec.mu)
    if spec.kind is DriverKind.BORROW_SPREAD:
        return abs(spec.mu) + spec.R
    return spec.r + abs(spec.mu) + (spec.R - spec.r)


def driver_lipschitz_components(spec: DriverSpec) -> tuple[float, float]:
    """Exact per-variable bounds (C_y, C_z) with |df/dy| <= C_y, |df/dz| <= C_z."""
    if spec.kind is DriverKind.LINEAR:
        return 0.0, abs(spec.mu) / spec.sigma
    if spec.kind is DriverKind.BORROW_SPREAD:
        return abs(spec.R), (abs(spec.mu) + abs(spec.R)) / spec.sigma
    cy = max(abs(spec.r), abs(spec.R))
    cz = (abs(spec.mu) + abs(spec.R - spec.r)) / spec.sigma
    return cy, cz


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str = ""
    sample: tuple[float, ...] | None = None


@dataclass(frozen=True)
class AssumptionReport:
    checks: tuple[CheckResult, ...]
    upwind: str

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list[CheckResult]:
        return [c for c in self.checks if not c.passed]


def check_assumptions(model: MarketModel, payoff: Payoff) -> AssumptionReport:
    """Sampled verification of the standing assumptions.

    Checks, on a deterministic lattice: f(t, x, 0, 0) = 0 exactly,
    f non-increasing in y, g bounded by the declared bound, and selects
    the upwind direction from the sign of mu.
    """
    spec = model.driver
    ts = np.linspace(0.0, model.T, 10)
    xs = np.linspace(0.0, 5.0, 10)
    ys = np.linspace(-2.0, 2.0, 10)
    zs = (-model.sigma, 0.0, model.sigma)
    checks: list[CheckResult] = []

    zero_fail = None
    for t in ts:
        for x in xs:
            val = float(eval_driver(spec, t, x, 0.0, 0.0))
            if val != 0.0:
                zero_fail = (t, x, val)
                break
        if zero_fail:
            break
    checks.append(
        CheckResult(
            "driver_zero_at_origin",
            zero_fail is None,
            "f(t, x, 0, 0) = 0 on the sample lattice" if zero_fail is None
            else f"f(t, x, 0, 0) = {zero_fail[2]:g} != 0",
            None if zero_fail is None else zero_fail[:2],
        )
    )

    mono_fail = None
    dy = 1e-4
    for t in ts:
        for x in xs:
            for y in ys:
                for z in zs:
                    lo = float(eval_driver(spec, t, x, y, z))
                    hi = float(eval_driver(spec, t, x, y + dy, z))
                    if hi > lo + 1e-14:
                        mono_fail = (t, x, y, z)
                        break
                if mono_fail:
                    break
            if mono_fail:
                break
        if mono_fail:
            break
    checks.append(
        CheckResult(
            "driver_monotone_in_y",
            mono_fail is None,
            "f non-increasing in y on the sample lattice" if mono_fail is None
            else "f increases in y at the recorded sample",
            mono_fail,
        )
    )

    gx = np.linspace(-1.0, 6.0, 50)
    gv = np.asarray(payoff(gx), dtype=float)
    over = np.abs(gv) > payoff.bound * (1.0 + 1e-12)
    bounded_ok = bool(np.isfinite(payoff.bound)) and not bool(over.any())
    bad = None if bounded_ok else (float(gx[int(np.argmax(over))]),)
    checks.append(
        CheckResult(
            "payoff_bounded",
            bounded_ok,
            f"|g| <= {payoff.bound:g} on the sample lattice" if bounded_ok
            else "payoff exceeds its declared bound",
            bad,
        )
    )

    upwind = "forward" if model.mu >= 0.0 else "backward"
    return AssumptionReport(tuple(checks), upwind)


@dataclass(frozen=True)
class CflReport:
    violations: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return not self.violations


def check_cfl(h: float, delta: float, params: SchemeParams, model: MarketModel) -> CflReport:
    """Verify the step-size conditions tying h, delta, theta, L, mu and M.

    Violations are returned as data, one entry per failed condition.
    """
    if h <= 0.0 or delta <= 0.0:
        raise ValueError("h and delta must be positive")
    L = params.lipschitz_L
    violations: list[str] = []
    if delta > 1.0:
        violations.append(f"delta = {delta:g} exceeds 1")
    if h * L / (2.0 * delta) > params.theta:
        violations.append(
            f"h*L/(2*delta) = {h * L / (2.0 * delta):g} exceeds theta = {params.theta:g}"
        )
    if abs(model.mu) * h > delta:
        violations.append(f"|mu|*h = {abs(model.mu) * h:g} exceeds delta = {delta:g}")
    if delta > params.M * h:
        violations.append(f"delta = {delta:g} exceeds M*h = {params.M * h:g}")
    return CflReport(tuple(violations))
