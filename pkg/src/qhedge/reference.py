"""Analytical and Monte-Carlo references for the linear-driver case.

With the linear driver the market is complete: hedging costs are plain
expectations under the measure that removes the log-price drift, and the
cheapest success event of a given probability is a half-line in the
terminal log-price (Neyman-Pearson ordering of cost against probability).
The closed forms below are Gaussian integrals over that region; they are
gated by the Monte-Carlo oracle before being used as ground truth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import DriverKind, MarketModel, Payoff

__all__ = [
    "LinearQuantileProblem",
    "OracleResult",
    "ReferenceValidation",
    "normal_cdf",
    "normal_inv",
    "driftless_put_price",
    "optimal_alpha",
    "flat_zero_threshold",
    "linear_quantile_price",
    "mc_oracle",
    "x_boundary_values",
    "validate_reference",
]

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def normal_cdf(z: float) -> float:
    """Standard normal distribution function."""
    return 0.5 * math.erfc(-z / _SQRT2)


def _normal_pdf(z: float) -> float:
    return _INV_SQRT_2PI * math.exp(-0.5 * z * z)


# Acklam's rational approximation for the inverse normal, refined below.
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)


def _normal_inv_seed(u: float) -> float:
    p_low = 0.02425
    if u < p_low:
        q = math.sqrt(-2.0 * math.log(u))
        return (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    if u > 1.0 - p_low:
        q = math.sqrt(-2.0 * math.log(1.0 - u))
        return -(((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    q = u - 0.5
    s = q * q
    return (((((_A[0] * s + _A[1]) * s + _A[2]) * s + _A[3]) * s + _A[4]) * s + _A[5]) * q / \
        (((((_B[0] * s + _B[1]) * s + _B[2]) * s + _B[3]) * s + _B[4]) * s + 1.0)


def normal_inv(u: float) -> float:
    """Inverse of :func:`normal_cdf`, accurate to ~1e-15 after refinement."""
    if not 0.0 < u < 1.0:
        raise ValueError("normal_inv requires u in (0, 1)")
    z = _normal_inv_seed(u)
    # two Halley steps against the erfc-based distribution function
    for _ in range(2):
        e = normal_cdf(z) - u
        d = _normal_pdf(z)
        if d == 0.0:
            break
        step = e / d
        z -= step / (1.0 + 0.5 * z * step)
    return z


def driftless_put_price(x: float, tau: float, sigma: float, K: float) -> float:
    """E[(K - exp(x + sigma*sqrt(tau)*Z))^+] for standard normal Z."""
    if tau < 0.0:
        raise ValueError("tau must be non-negative")
    if K <= 0.0:
        return 0.0
    if tau == 0.0:
        return max(K - math.exp(x), 0.0)
    srt = sigma * math.sqrt(tau)
    zh = (math.log(K) - x) / srt
    return K * normal_cdf(zh) - math.exp(x + 0.5 * sigma * sigma * tau) * normal_cdf(zh - srt)


def optimal_alpha(t: float, p: float, T: float) -> float:
    """Optimal success-probability volatility in the linear market.

    Extended by continuity to 0 at p in {0, 1}.
    """
    if not 0.0 <= t < T:
        raise ValueError("need 0 <= t < T")
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    if p == 0.0 or p == 1.0:
        return 0.0
    z = normal_inv(p)
    return math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi * (T - t))


@dataclass(frozen=True)
class LinearQuantileProblem:
    """A (t, x, p) query against a linear-driver market with a put payoff."""

    model: MarketModel
    payoff: Payoff
    t: float
    x: float
    p: float

    def __post_init__(self) -> None:
        if self.model.driver.kind is not DriverKind.LINEAR:
            raise ValueError("closed-form reference requires the linear driver")
        if self.payoff.kind != "put":
            raise ValueError("closed-form reference requires a put payoff")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("p must lie in [0, 1]")
        if not 0.0 <= self.t < self.model.T:
            raise ValueError("need 0 <= t < T")


def _success_cutoff(prob: LinearQuantileProblem) -> float:
    """Terminal log-price cutoff of the half-line success region.

    For mu >= 0 the region is {X_T >= d}; for mu < 0 it flips to
    {X_T <= d}.  In both cases d makes the real-world probability of the
    region equal to p.
    """
    m = prob.model
    tau = m.T - prob.t
    srt = m.sigma * math.sqrt(tau)
    if m.mu >= 0.0:
        return prob.x + m.mu * tau - srt * normal_inv(prob.p)
    return prob.x + m.mu * tau + srt * normal_inv(prob.p)


def flat_zero_threshold(model: MarketModel, K: float, t: float, x: float) -> float:
    """Largest p with a zero quantile hedging price at (t, x), for mu >= 0."""
    if model.mu < 0.0:
        raise ValueError("threshold formula applies to non-negative drift")
    tau = model.T - t
    srt = model.sigma * math.sqrt(tau)
    return normal_cdf((x + model.mu * tau - math.log(K)) / srt)


def linear_quantile_price(prob: LinearQuantileProblem) -> float:
    """Quantile hedging price of the put in the linear complete market.

    The price is the hedging cost of the payoff restricted to the
    cheapest success region of probability p: states with zero payoff are
    free, and among paying states the cost per unit of real-world
    probability decreases towards the strike, so the region is the
    half-line returned by :func:`_success_cutoff`.
    """
    m = prob.model
    K = prob.payoff.K
    if prob.p == 0.0 or K <= 0.0:
        return 0.0
    tau = m.T - prob.t
    if prob.p == 1.0:
        return driftless_put_price(prob.x, tau, m.sigma, K)
    srt = m.sigma * math.sqrt(tau)
    exp_half_var = math.exp(prob.x + 0.5 * m.sigma * m.sigma * tau)
    d = _success_cutoff(prob)
    ln_k = math.log(K)
    if m.mu >= 0.0:
        if d >= ln_k:
            return 0.0
        z_lo = (d - prob.x) / srt
        z_hi = (ln_k - prob.x) / srt
        return (
            K * (normal_cdf(z_hi) - normal_cdf(z_lo))
            - exp_half_var * (normal_cdf(z_hi - srt) - normal_cdf(z_lo - srt))
        )
    z_hi = (min(d, ln_k) - prob.x) / srt
    return K * normal_cdf(z_hi) - exp_half_var * normal_cdf(z_hi - srt)


@dataclass(frozen=True)
class OracleResult:
    estimate: float
    std_error: float
    n_paths: int
    seed: int

    def __post_init__(self) -> None:
        if self.std_error < 0.0:
            raise ValueError("std_error must be non-negative")


def mc_oracle(prob: LinearQuantileProblem, n_paths: int, seed: int) -> OracleResult:
    """Brute-force hedging-cost estimate over the same success region.

    Simulates the terminal log-price under the driftless pricing law with
    antithetic pairs; the reported standard error is that of the pair
    means.  Deterministic given the seed.
    """
    if n_paths < 10_000:
        raise ValueError("need at least 1e4 paths")
    m = prob.model
    tau = m.T - prob.t
    srt = m.sigma * math.sqrt(tau)
    rng = np.random.default_rng(seed)
    half = n_paths // 2
    z = rng.standard_normal(half)

    def _leg(zs: np.ndarray) -> np.ndarray:
        xt = prob.x + srt * zs
        pay = np.maximum(prob.payoff.K - np.exp(xt), 0.0)
        if prob.p == 0.0:
            return np.zeros_like(xt)
        if prob.p == 1.0:
            return pay
        d = _success_cutoff(prob)
        inside = xt >= d if m.mu >= 0.0 else xt <= d
        return pay * inside

    pair_means = 0.5 * (_leg(z) + _leg(-z))
    estimate = float(pair_means.mean())
    spread = float(pair_means.std(ddof=1)) if half > 1 else 0.0
    return OracleResult(estimate, spread / math.sqrt(half), 2 * half, seed)


def x_boundary_values(
    t: float, x_endpoint: float, p: float, model: MarketModel, payoff: Payoff
) -> float:
    """Dirichlet data for the truncated domain: the reference price itself.

    Evaluating at the endpoint is more accurate on a truncated domain
    than the analytic x -> +/-inf limits and coincides with them as the
    truncation widens.
    """
    return linear_quantile_price(
        LinearQuantileProblem(_as_linear(model), payoff, t, x_endpoint, p)
    )


def _as_linear(model: MarketModel) -> MarketModel:
    """The linear-driver market with the same mu, sigma, T."""
    if model.driver.kind is DriverKind.LINEAR:
        return model
    return MarketModel.linear(model.mu, model.sigma, model.T)


@dataclass(frozen=True)
class ReferenceValidation:
    """Outcome of gating the closed form against the Monte-Carlo oracle."""

    max_abs_gap: float
    max_gap_in_se: float
    entries: tuple[tuple[float, float, float, float, float], ...]  # (x, p, closed, mc, se)

    @property
    def ok(self) -> bool:
        return self.max_gap_in_se <= 3.0


def validate_reference(
    model: MarketModel,
    payoff: Payoff,
    n_paths: int = 1_000_000,
    seed: int = 20_240_901,
    t: float = 0.0,
) -> ReferenceValidation:
    """Check the closed form against the oracle on a 5x5 (x, p) lattice.

    Any disagreement beyond three standard errors marks the validation as
    failed; exact zero-zero agreements count as zero gap.
    """
    model = _as_linear(model)
    xs = np.linspace(math.log(payoff.K) - 0.8, math.log(payoff.K) + 0.6, 5)
    ps = (0.05, 0.3, 0.6, 0.8, 0.95)
    entries = []
    worst_gap = 0.0
    worst_in_se = 0.0
    for i, x in enumerate(xs):
        for j, p in enumerate(ps):
            prob = LinearQuantileProblem(model, payoff, t, float(x), float(p))
            closed = linear_quantile_price(prob)
            res = mc_oracle(prob, n_paths, seed + 97 * i + j)
            gap = abs(closed - res.estimate)
            worst_gap = max(worst_gap, gap)
            if gap > 0.0:
                in_se = gap / res.std_error if res.std_error > 0.0 else math.inf
                worst_in_se = max(worst_in_se, in_se)
            entries.append((float(x), float(p), closed, res.estimate, res.std_error))
    return ReferenceValidation(worst_gap, worst_in_se, tuple(entries))
