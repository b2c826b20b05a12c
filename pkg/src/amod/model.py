"""Domain types and validation shared by the optimization, policy, and simulation code.

All types are immutable after construction and safe to share across workers.
Configuration files are JSON with four optional sections -- ``network``,
``fleet``, ``prices``, ``sim`` -- whose keys match the dataclass field names
exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import InvalidSpec, NonNormalizedDensity

__all__ = [
    "NetworkSpec",
    "FleetSpec",
    "PriceDistribution",
    "SimConfig",
    "Config",
    "ValidationReport",
    "validate_network",
    "validate_fleet",
    "load_config",
    "save_config",
]

_ROW_SUM_TOL = 1e-9
_DENSITY_TOL = 1e-8


def _frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.asarray(values, dtype=dtype).copy()
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class ValidationReport:
    """List of invariant violations; empty means the object is valid."""

    issues: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.issues

    def __bool__(self) -> bool:  # truthy when there are problems to report
        return bool(self.issues)

    def raise_if_invalid(self) -> None:
        if self.issues:
            raise InvalidSpec("; ".join(self.issues))


@dataclass(frozen=True)
class NetworkSpec:
    """A fully connected service network of ``m`` equidistant nodes.

    prices
        Electricity price per energy unit at each node ($/unit).
    arrival_rates
        Potential rider arrivals per period at each node.
    routing
        Row-stochastic matrix; entry (i, j) is the fraction of riders at
        node i heading to node j. Diagonal must be zero.
    wtp_max
        Cap of the riders' uniform willingness-to-pay distribution ($).
    """

    m: int
    prices: np.ndarray
    arrival_rates: np.ndarray
    routing: np.ndarray
    wtp_max: float

    def __post_init__(self):
        object.__setattr__(self, "prices", _frozen_array(self.prices))
        object.__setattr__(self, "arrival_rates", _frozen_array(self.arrival_rates))
        object.__setattr__(self, "routing", _frozen_array(self.routing))
        if self.prices.shape != (self.m,):
            raise InvalidSpec(f"prices must have shape ({self.m},), got {self.prices.shape}")
        if self.arrival_rates.shape != (self.m,):
            raise InvalidSpec(
                f"arrival_rates must have shape ({self.m},), got {self.arrival_rates.shape}"
            )
        if self.routing.shape != (self.m, self.m):
            raise InvalidSpec(
                f"routing must have shape ({self.m}, {self.m}), got {self.routing.shape}"
            )

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "prices": self.prices.tolist(),
            "arrival_rates": self.arrival_rates.tolist(),
            "routing": self.routing.tolist(),
            "wtp_max": self.wtp_max,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NetworkSpec":
        return cls(
            m=int(data["m"]),
            prices=data["prices"],
            arrival_rates=data["arrival_rates"],
            routing=data["routing"],
            wtp_max=float(data["wtp_max"]),
        )


@dataclass(frozen=True)
class FleetSpec:
    """Per-vehicle cost structure and battery geometry.

    beta0
        Fixed operational cost per vehicle-period ($).
    xi
        Battery operational cost per period per unit of capacity ($).
    v_max
        Battery capacity in energy units (one unit per trip).
    tau
        Trip duration in periods.
    p_s
        Optional electricity price at the external cheap charging node.
    """

    beta0: float
    xi: float
    v_max: int
    tau: int
    p_s: float | None = None

    def __post_init__(self):
        if self.v_max < 1:
            raise InvalidSpec(f"v_max must be >= 1, got {self.v_max}")
        if self.tau < 1:
            raise InvalidSpec(f"tau must be >= 1, got {self.tau}")
        if self.beta < 0:
            raise InvalidSpec(f"beta0 + xi*v_max must be >= 0, got {self.beta}")

    @property
    def beta(self) -> float:
        """Total operational cost per vehicle-period: beta0 + xi * v_max."""
        return self.beta0 + self.xi * self.v_max

    def with_v_max(self, v_max: int) -> "FleetSpec":
        """Same cost parameters with a different battery capacity."""
        return replace(self, v_max=v_max)

    def to_dict(self) -> dict:
        d = {
            "beta0": self.beta0,
            "xi": self.xi,
            "v_max": self.v_max,
            "tau": self.tau,
        }
        if self.p_s is not None:
            d["p_s"] = self.p_s
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "FleetSpec":
        return cls(
            beta0=float(data["beta0"]),
            xi=float(data["xi"]),
            v_max=int(data["v_max"]),
            tau=int(data["tau"]),
            p_s=float(data["p_s"]) if data.get("p_s") is not None else None,
        )


@dataclass(frozen=True)
class PriceDistribution:
    """Distribution of the electricity price seen on arrival at a node.

    Two variants: ``uniform`` on [p_min, p_max], or ``tabulated`` as a
    piecewise-linear density through a grid of (price, density) pairs.
    """

    variant: str
    p_min: float
    p_max: float
    grid: np.ndarray | None = None  # shape (k, 2): price, density

    def __post_init__(self):
        if self.variant not in ("uniform", "tabulated"):
            raise InvalidSpec(f"unknown distribution variant {self.variant!r}")
        if self.p_min > self.p_max:
            raise InvalidSpec(f"p_min={self.p_min} exceeds p_max={self.p_max}")
        if self.p_min < 0:
            raise InvalidSpec(f"price support must be nonnegative, got p_min={self.p_min}")
        if self.variant == "tabulated":
            grid = _frozen_array(self.grid)
            object.__setattr__(self, "grid", grid)
            if grid.ndim != 2 or grid.shape[1] != 2 or grid.shape[0] < 2:
                raise InvalidSpec("tabulated grid must be a (k>=2, 2) array of (price, density)")
            x, f = grid[:, 0], grid[:, 1]
            if np.any(np.diff(x) <= 0):
                raise InvalidSpec("tabulated prices must be strictly increasing")
            if np.any(f < 0):
                raise InvalidSpec("tabulated densities must be nonnegative")
            total = np.trapezoid(f, x)
            if abs(total - 1.0) > _DENSITY_TOL:
                raise NonNormalizedDensity(
                    f"tabulated density integrates to {total!r}, expected 1 within {_DENSITY_TOL}"
                )

    @classmethod
    def uniform(cls, p_min: float, p_max: float) -> "PriceDistribution":
        return cls(variant="uniform", p_min=float(p_min), p_max=float(p_max))

    @classmethod
    def tabulated(cls, prices, densities) -> "PriceDistribution":
        grid = np.column_stack([np.asarray(prices, float), np.asarray(densities, float)])
        return cls(
            variant="tabulated",
            p_min=float(grid[0, 0]),
            p_max=float(grid[-1, 0]),
            grid=grid,
        )

    @property
    def spread(self) -> float:
        return self.p_max - self.p_min

    def mean(self) -> float:
        if self.variant == "uniform":
            return 0.5 * (self.p_min + self.p_max)
        x, f = self.grid[:, 0], self.grid[:, 1]
        return float(np.trapezoid(x * f, x))

    def std(self) -> float:
        if self.variant == "uniform":
            return self.spread / (2.0 * np.sqrt(3.0))
        x, f = self.grid[:, 0], self.grid[:, 1]
        mu = self.mean()
        return float(np.sqrt(max(np.trapezoid((x - mu) ** 2 * f, x), 0.0)))

    def ppf(self, u: np.ndarray) -> np.ndarray:
        """Inverse CDF, vectorized; used to map uniform draws to prices."""
        u = np.asarray(u, float)
        if self.variant == "uniform":
            return self.p_min + u * self.spread
        xs, cdf = self._cdf_grid()
        return np.interp(u, cdf, xs)

    def _cdf_grid(self, refine: int = 64):
        """Fine (price, cdf) grid for numeric inversion of a tabulated density."""
        x, f = self.grid[:, 0], self.grid[:, 1]
        xs = np.unique(np.concatenate([np.linspace(a, b, refine) for a, b in zip(x[:-1], x[1:])]))
        fs = np.interp(xs, x, f)
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (fs[1:] + fs[:-1]) * np.diff(xs))])
        cdf /= cdf[-1]
        return xs, cdf

    def expected_min_with(self, cap: float) -> float:
        """E[min(p, cap)], the expected cost of the next unit under threshold cap."""
        if self.variant != "uniform":
            raise ValueError("closed form only available for the uniform variant")
        if self.spread == 0.0:
            return min(cap, self.p_min)
        c = min(max(cap, self.p_min), self.p_max)
        below = (c * c - self.p_min**2) / (2.0 * self.spread)
        return below + min(cap, self.p_max) * (self.p_max - c) / self.spread

    def to_dict(self) -> dict:
        d = {"variant": self.variant, "p_min": self.p_min, "p_max": self.p_max}
        if self.grid is not None:
            d["grid"] = self.grid.tolist()
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "PriceDistribution":
        if data["variant"] == "uniform":
            return cls.uniform(data["p_min"], data["p_max"])
        grid = np.asarray(data["grid"], float)
        return cls.tabulated(grid[:, 0], grid[:, 1])


@dataclass(frozen=True)
class SimConfig:
    """Monte Carlo run geometry: seed, horizon in periods, replicate count, burn-in."""

    seed: int
    horizon: int
    replicates: int = 16
    burn_in: int = 0

    def __post_init__(self):
        if self.replicates < 1:
            raise InvalidSpec(f"replicates must be >= 1, got {self.replicates}")
        if not (self.horizon > self.burn_in >= 0):
            raise InvalidSpec(
                f"need horizon > burn_in >= 0, got horizon={self.horizon} burn_in={self.burn_in}"
            )

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "horizon": self.horizon,
            "replicates": self.replicates,
            "burn_in": self.burn_in,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SimConfig":
        return cls(
            seed=int(data["seed"]),
            horizon=int(data["horizon"]),
            replicates=int(data.get("replicates", 16)),
            burn_in=int(data.get("burn_in", 0)),
        )


def default_burn_in(tau: int, v_max: int) -> int:
    """Default warm-up: ten full charge-travel cycles per battery unit."""
    return 10 * (1 + tau) * v_max


def validate_network(spec: NetworkSpec) -> ValidationReport:
    """Check every NetworkSpec invariant; report each violation with its index."""
    issues: list[str] = []
    if spec.m < 2:
        issues.append(f"node count m={spec.m} is below the minimum of 2")
    for i, p in enumerate(spec.prices):
        if p < 0:
            issues.append(f"price at node {i} is negative ({p})")
    for i, th in enumerate(spec.arrival_rates):
        if th < 0:
            issues.append(f"arrival rate at node {i} is negative ({th})")
    if not spec.wtp_max > 0:
        issues.append(f"wtp_max must be positive, got {spec.wtp_max}")
    for i in range(spec.m):
        if spec.routing[i, i] != 0.0:
            issues.append(f"routing diagonal entry ({i},{i}) is {spec.routing[i, i]}, must be 0")
        row = spec.routing[i]
        if np.any(row < 0):
            j = int(np.argmin(row))
            issues.append(f"routing entry ({i},{j}) is negative ({row[j]})")
        s = float(row.sum())
        if abs(s - 1.0) > _ROW_SUM_TOL:
            issues.append(f"routing row {i} sums to {s!r}, off by {s - 1.0!r}")
    return ValidationReport(tuple(issues))


def validate_fleet(
    fleet: FleetSpec,
    network: NetworkSpec | None = None,
    distribution: PriceDistribution | None = None,
) -> ValidationReport:
    """Cross-check fleet parameters against price context (p_s <= cheapest price)."""
    issues: list[str] = []
    if fleet.p_s is not None:
        floors = []
        if network is not None:
            floors.append(float(network.prices.min()))
        if distribution is not None:
            floors.append(distribution.p_min)
        for floor in floors:
            if fleet.p_s > floor:  # equality is allowed
                issues.append(f"p_s={fleet.p_s} exceeds the cheapest regular price {floor}")
    return ValidationReport(tuple(issues))


@dataclass(frozen=True)
class Config:
    """Bundle of the optional configuration sections of one JSON file."""

    network: NetworkSpec | None = None
    fleet: FleetSpec | None = None
    prices: PriceDistribution | None = None
    sim: SimConfig | None = None
    extras: dict = field(default_factory=dict)

    def require(self, *sections: str) -> "Config":
        missing = [s for s in sections if getattr(self, s) is None]
        if missing:
            raise InvalidSpec(f"config is missing required section(s): {', '.join(missing)}")
        return self


_SECTION_TYPES = {
    "network": NetworkSpec,
    "fleet": FleetSpec,
    "prices": PriceDistribution,
    "sim": SimConfig,
}


def load_config(path: str | Path) -> Config:
    """Read a JSON config file; unknown top-level keys are preserved in extras."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise InvalidSpec(f"config root must be a JSON object, got {type(raw).__name__}")
    kwargs = {}
    extras = {}
    for key, value in raw.items():
        if key in _SECTION_TYPES:
            kwargs[key] = _SECTION_TYPES[key].from_dict(value)
        else:
            extras[key] = value
    return Config(extras=extras, **kwargs)


def save_config(path: str | Path, config: Config) -> None:
    """Write a Config back to JSON (floats keep full round-trip precision)."""
    out: dict = {}
    for key in _SECTION_TYPES:
        section = getattr(config, key)
        if section is not None:
            out[key] = section.to_dict()
    out.update(config.extras)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(out, fh, indent=2)
        fh.write("\n")
