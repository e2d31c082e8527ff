"""Run configuration: flat ``block.key = value`` text files, JSON, overrides.

The text format is line oriented: blank lines and ``#`` comments are
ignored, everything else must read ``block.key = value``.  Lists are
comma separated; query points are ``t,x,p`` triples separated by
semicolons.  A JSON file with the same ``block.key`` layout (nested
objects) is accepted via the CLI flag.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Any

from .grids import (
    ControlSet,
    TimeGrid,
    XGrid,
    build_explicit_control_set,
    build_linear_case_controls,
    build_paper_control_set,
    build_time_grid,
    build_xgrid,
)
from .model import DriverKind, MarketModel, Payoff, SchemeParams, driver_lipschitz
from .reference import x_boundary_values

__all__ = ["ConfigError", "RunConfig", "RunSetup", "auto_step_constant"]


class ConfigError(ValueError):
    """Malformed configuration input."""


def _floats(text: str) -> tuple[float, ...]:
    items = [s.strip() for s in text.split(",") if s.strip()]
    return tuple(float(s) for s in items)


def _triples(text: str) -> tuple[tuple[float, float, float], ...]:
    out = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        parts = _floats(chunk)
        if len(parts) != 3:
            raise ConfigError(f"query point {chunk!r} is not a t,x,p triple")
        out.append(parts)
    return tuple(out)


def _bool(text: str) -> bool:
    val = text.strip().lower()
    if val in ("true", "1", "yes", "on"):
        return True
    if val in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class RunConfig:
    """Everything a run needs, defaulting to the benchmark parameters."""

    # model
    mu: float = 0.01875
    sigma: float = 0.25
    T: float = 1.0
    driver: str = "borrow_spread"
    R: float = 0.05
    r: float = 0.0
    # payoff
    payoff: str = "put"
    K: float = 30.0
    table_x: tuple[float, ...] = ()
    table_g: tuple[float, ...] = ()
    payoff_lipschitz: float = 0.0
    # domain
    B1: float = math.log(10.0)
    B2: float = math.log(45.0)
    boundary: str = "reference"  # or "terminal" (p * g at the endpoint)
    # scheme
    theta: float = 0.2
    M: float = 1.0
    picard_tol: float = 1e-5
    picard_max_iters: int = 50_000
    lipschitz_L: float | None = None  # None: use the driver's working constant
    cfl_unchecked: bool = False
    # discretisation
    delta: float = 0.05
    h: float | None = None  # None: h = C*delta with the auto rule
    # controls
    controls: str = "paper22"
    n: int = 3
    control_values: tuple[float, ...] = ()
    # output
    p_samples: tuple[float, ...] = tuple(round(0.05 * i, 2) for i in range(1, 20))
    query_points: tuple[tuple[float, float, float], ...] = (
        (0.0, math.log(30.0), 0.8),
    )
    keep: str = "auto"
    seed: int = 20_240_901

    # --- parsing -----------------------------------------------------------

    _PARSERS = {
        "model.mu": ("mu", float),
        "model.sigma": ("sigma", float),
        "model.T": ("T", float),
        "model.driver": ("driver", str.strip),
        "model.R": ("R", float),
        "model.r": ("r", float),
        "payoff.kind": ("payoff", str.strip),
        "payoff.K": ("K", float),
        "payoff.table_x": ("table_x", _floats),
        "payoff.table_g": ("table_g", _floats),
        "payoff.lipschitz": ("payoff_lipschitz", float),
        "domain.B1": ("B1", float),
        "domain.B2": ("B2", float),
        "domain.boundary": ("boundary", str.strip),
        "scheme.theta": ("theta", float),
        "scheme.M": ("M", float),
        "scheme.picard_tol": ("picard_tol", float),
        "scheme.picard_max_iters": ("picard_max_iters", int),
        "scheme.lipschitz_L": ("lipschitz_L", lambda s: None if s.strip() == "auto" else float(s)),
        "scheme.cfl_unchecked": ("cfl_unchecked", _bool),
        "discretisation.delta": ("delta", float),
        "discretisation.h": ("h", lambda s: None if s.strip() == "auto" else float(s)),
        "controls.kind": ("controls", str.strip),
        "controls.n": ("n", int),
        "controls.values": ("control_values", _floats),
        "output.p_samples": ("p_samples", _floats),
        "output.query_points": ("query_points", _triples),
        "output.keep": ("keep", str.strip),
        "output.seed": ("seed", int),
    }

    @classmethod
    def from_pairs(cls, pairs: dict[str, str]) -> "RunConfig":
        cfg = cls()
        return cfg.with_pairs(pairs)

    def with_pairs(self, pairs: dict[str, str]) -> "RunConfig":
        updates: dict[str, Any] = {}
        for key, raw in pairs.items():
            try:
                attr, parse = self._PARSERS[key]
            except KeyError:
                raise ConfigError(f"unknown configuration key {key!r}") from None
            try:
                updates[attr] = parse(raw)
            except ConfigError:
                raise
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from None
        return replace(self, **updates)

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        pairs: dict[str, str] = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"line {lineno}: expected 'block.key = value'")
            key, _, value = stripped.partition("=")
            pairs[key.strip()] = value.strip()
        return cls.from_pairs(pairs)

    @classmethod
    def from_json_text(cls, text: str) -> "RunConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON config: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("JSON config must be an object of blocks")
        pairs: dict[str, str] = {}
        for block, body in data.items():
            if not isinstance(body, dict):
                raise ConfigError(f"block {block!r} must be an object")
            for key, value in body.items():
                if isinstance(value, (list, tuple)):
                    if value and isinstance(value[0], (list, tuple)):
                        pairs[f"{block}.{key}"] = "; ".join(
                            ",".join(str(x) for x in item) for item in value
                        )
                    else:
                        pairs[f"{block}.{key}"] = ",".join(str(x) for x in value)
                else:
                    pairs[f"{block}.{key}"] = str(value)
        return cls.from_pairs(pairs)

    @classmethod
    def from_file(cls, path: str, json_format: bool = False) -> "RunConfig":
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
        if json_format or path.endswith(".json"):
            return cls.from_json_text(text)
        return cls.from_text(text)

    def echo(self) -> dict[str, Any]:
        """Nested block/key view of the configuration for metadata files."""
        out: dict[str, dict[str, Any]] = {}
        for key, (attr, _) in self._PARSERS.items():
            block, _, name = key.partition(".")
            value = getattr(self, attr)
            if isinstance(value, tuple):
                value = [list(v) if isinstance(v, tuple) else v for v in value]
            out.setdefault(block, {})[name] = value
        return out

    # --- materialisation ---------------------------------------------------

    def build_model(self) -> MarketModel:
        kind = self.driver
        if kind == "linear":
            return MarketModel.linear(self.mu, self.sigma, self.T)
        if kind == "borrow_spread":
            return MarketModel.borrow_spread(self.mu, self.sigma, self.T, self.R)
        if kind == "two_rates":
            return MarketModel.two_rates(self.mu, self.sigma, self.T, self.r, self.R)
        raise ConfigError(f"unknown driver kind {kind!r}")

    def build_payoff(self) -> Payoff:
        if self.payoff == "put":
            return Payoff.put(self.K)
        if self.payoff == "custom":
            return Payoff.custom(self.table_x, self.table_g, self.payoff_lipschitz)
        raise ConfigError(f"unknown payoff kind {self.payoff!r}")

    def working_lipschitz(self, model: MarketModel) -> float:
        if self.lipschitz_L is not None:
            return self.lipschitz_L
        return driver_lipschitz(model.driver)

    def build(self) -> "RunSetup":
        model = self.build_model()
        payoff = self.build_payoff()
        L = self.working_lipschitz(model)
        params = SchemeParams(
            theta=self.theta,
            M=self.M,
            picard_tol=self.picard_tol,
            picard_max_iters=self.picard_max_iters,
            lipschitz_L=L,
        )
        C = auto_step_constant(self.theta, L, self.sigma, self.mu)
        h = self.h if self.h is not None else C * self.delta
        tgrid = build_time_grid(self.T, h)
        xgrid = build_xgrid(self.B1, self.B2, self.delta)

        if self.controls == "paper22":
            controls = build_paper_control_set(self.delta, self.sigma)
            delta = self.delta
        elif self.controls == "linear_case":
            delta, controls = build_linear_case_controls(self.n, self.sigma, C)
            if self.h is None:
                h = C * delta
            tgrid = build_time_grid(self.T, h)
            xgrid = build_xgrid(self.B1, self.B2, delta)
        elif self.controls == "explicit":
            if not self.control_values:
                raise ConfigError("controls.values must be set for explicit control sets")
            controls = build_explicit_control_set(self.control_values, self.delta, self.sigma)
            delta = self.delta
        else:
            raise ConfigError(f"unknown controls kind {self.controls!r}")

        if self.boundary == "reference":
            if payoff.kind != "put":
                raise ConfigError("reference boundary data requires a put payoff")

            def x_boundary(t: float, x: float, p: float) -> float:
                return x_boundary_values(t, x, p, model, payoff)

        elif self.boundary == "terminal":

            def x_boundary(t: float, x: float, p: float) -> float:
                return float(payoff(x)) * p

        else:
            raise ConfigError(f"unknown boundary mode {self.boundary!r}")

        return RunSetup(
            config=self,
            model=model,
            payoff=payoff,
            params=params,
            tgrid=tgrid,
            xgrid=xgrid,
            controls=controls,
            delta=delta,
            h=h,
            C=C,
            x_boundary=x_boundary,
        )


def auto_step_constant(theta: float, L: float, sigma: float, mu: float) -> float:
    """Step-rule constant C = min(1, 2*theta/L, 1/|sigma^2 - mu|) for h = C*delta."""
    candidates = [1.0]
    if L > 0.0:
        candidates.append(2.0 * theta / L)
    gap = abs(sigma * sigma - mu)
    if gap > 0.0:
        candidates.append(1.0 / gap)
    return min(candidates)


@dataclass(frozen=True)
class RunSetup:
    """A configuration materialised into solver inputs."""

    config: RunConfig
    model: MarketModel
    payoff: Payoff
    params: SchemeParams
    tgrid: TimeGrid
    xgrid: XGrid
    controls: ControlSet
    delta: float
    h: float
    C: float
    x_boundary: Any

    def keep_policy(self) -> str:
        if self.config.keep in ("all", "initial"):
            return self.config.keep
        # "auto": retain every time node unless the field storage gets large
        per_node = self.xgrid.num_nodes * sum(c.n_p + 1 for c in self.controls)
        total_floats = per_node * (self.tgrid.num_steps + 1)
        return "all" if total_floats * 8 <= 200_000_000 else "initial"
