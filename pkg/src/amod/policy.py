"""Optimal charging under random prices: thresholds, stationary analysis, sizing.

A vehicle with battery level ``v`` charges one unit iff the current price is at
most the threshold ``C_v``, the expected price of the next unit were it to
leave instead. Thresholds decrease with the battery level; level 0 always
charges (its threshold is pinned to the top of the price support).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    BatteryTooSmall,
    ConstraintViolation,
    DegenerateDistribution,
    NegativePriceSupport,
    NonNormalizedDensity,
)
from .model import FleetSpec, PriceDistribution

__all__ = [
    "ChargingPolicy",
    "StationaryDistribution",
    "RebalancingPlan",
    "BatterySizing",
    "QuadratureOpts",
    "thresholds_uniform",
    "thresholds_general",
    "threshold_drop",
    "stationary_distribution",
    "avg_cost_from_distribution",
    "avg_cost_closed",
    "optimal_battery",
    "spread_sensitivity",
    "rebalancing_b",
    "approx_rebalanced_cost",
    "approx_cost_curve",
]

DEFAULT_TRIP_PERIODS = 10


@dataclass(frozen=True)
class ChargingPolicy:
    """Threshold prices per battery level, plus the price model they came from.

    ``thresholds[v]`` is the charge-or-travel cutoff at level v. Index 0 holds
    the top of the price support as a sentinel meaning "always charge when
    empty"; index v_max is the expected price of the next unit when leaving a
    node fully charged, which is never acted on (a full vehicle cannot charge)
    but equals the long-run average price paid per unit.
    """

    thresholds: np.ndarray
    distribution: PriceDistribution
    v_max: int
    tau: int

    def __post_init__(self):
        arr = np.asarray(self.thresholds, float).copy()
        arr.flags.writeable = False
        object.__setattr__(self, "thresholds", arr)
        if arr.shape != (self.v_max + 1,):
            raise ValueError(f"need {self.v_max + 1} thresholds, got shape {arr.shape}")

    def charge_decision(self, v: int, p: float) -> bool:
        """True iff a vehicle at level v observing price p should charge one unit."""
        return v < self.v_max and p <= self.thresholds[v]


def thresholds_uniform(
    p_min: float, p_max: float, v_max: int, tau: int = DEFAULT_TRIP_PERIODS
) -> ChargingPolicy:
    """Exact thresholds for uniformly distributed prices on [p_min, p_max].

    C_1 is the mean price; each further unit of headroom shaves off
    (p_max - C_{v-1})^2 / (2 (p_max - p_min)).
    """
    if p_min > p_max:
        raise ValueError(f"p_min={p_min} exceeds p_max={p_max}")
    if v_max < 1:
        raise ValueError(f"v_max must be >= 1, got {v_max}")
    eta = 0.5 * (p_min + p_max)
    spread = p_max - p_min
    c = np.empty(v_max + 1)
    c[0] = p_max
    if spread == 0.0:
        c[1:] = eta
    else:
        c[1] = eta
        for v in range(2, v_max + 1):
            c[v] = eta - (p_max - c[v - 1]) ** 2 / (2.0 * spread)
    return ChargingPolicy(
        thresholds=c,
        distribution=PriceDistribution.uniform(p_min, p_max),
        v_max=v_max,
        tau=tau,
    )


@dataclass(frozen=True)
class QuadratureOpts:
    """Composite-midpoint settings for tabulated densities."""

    points_per_cell: int = 8
    tol: float = 1e-6
    max_doublings: int = 12


def _expected_min_tabulated(dist: PriceDistribution, cap: float, quad: QuadratureOpts) -> float:
    """E[min(p, cap)] by composite midpoint, refined until the change is < tol."""
    x, f = dist.grid[:, 0], dist.grid[:, 1]
    edges = np.asarray(x, float)
    if dist.p_min < cap < dist.p_max:
        edges = np.unique(np.append(edges, cap))  # keep the kink on a cell boundary

    def estimate(per_cell: int) -> float:
        total = 0.0
        for a, b in zip(edges[:-1], edges[1:]):
            mids = a + (np.arange(per_cell) + 0.5) * (b - a) / per_cell
            dens = np.interp(mids, x, f)
            total += float(np.sum(np.minimum(mids, cap) * dens)) * (b - a) / per_cell
        return total

    per_cell = max(2, quad.points_per_cell)
    prev = estimate(per_cell)
    for _ in range(quad.max_doublings):
        per_cell *= 2
        cur = estimate(per_cell)
        if abs(cur - prev) < quad.tol:
            return cur
        prev = cur
    return prev


def thresholds_general(
    dist: PriceDistribution,
    v_max: int,
    quad: QuadratureOpts = QuadratureOpts(),
    tau: int = DEFAULT_TRIP_PERIODS,
) -> ChargingPolicy:
    """Thresholds for an arbitrary price density via the one-step recursion.

    C_v = E[min(p, C_{v-1})] with C_0 pinned to the top of the support.
    Tabulated densities are integrated numerically; a tabulated uniform
    density reproduces thresholds_uniform to quadrature tolerance.
    """
    if v_max < 1:
        raise ValueError(f"v_max must be >= 1, got {v_max}")
    if dist.variant == "uniform":
        return thresholds_uniform(dist.p_min, dist.p_max, v_max, tau=tau)
    total = float(np.trapezoid(dist.grid[:, 1], dist.grid[:, 0]))
    if abs(total - 1.0) > 1e-8:
        raise NonNormalizedDensity(f"density integrates to {total!r}")
    c = np.empty(v_max + 1)
    c[0] = dist.p_max
    for v in range(1, v_max + 1):
        c[v] = _expected_min_tabulated(dist, c[v - 1], quad)
    return ChargingPolicy(thresholds=c, distribution=dist, v_max=v_max, tau=tau)


def threshold_drop(p_min: float, p_max: float, v: int) -> float:
    """C_v - C_{v+1} for uniform prices: the charging saved by one more unit."""
    spread = p_max - p_min
    if spread == 0.0:
        return 0.0
    c_v = thresholds_uniform(p_min, p_max, v).thresholds[v]
    return (c_v - p_min) ** 2 / (2.0 * spread)


@dataclass(frozen=True)
class StationaryDistribution:
    """Long-run piecewise-constant occupancy over (battery level, price).

    For level v >= 1 the density is ``low[v-1]`` on [p_min, C_{v-1}) and
    ``high[v-1]`` on [C_{v-1}, p_max]; level 0 sits at ``d0`` everywhere.
    These values describe states at decision epochs; a traveling state keeps a
    vehicle busy for tau periods, so time-average masses weight the
    non-charging region by tau. Charging happens in [p_min, C_v] at levels
    below capacity, which carries exactly 1/(1+tau) of the time.
    """

    d0: float
    low: np.ndarray  # d_v^1 for v = 1..v_max
    high: np.ndarray  # d_v^2 for v = 1..v_max
    policy: ChargingPolicy

    @property
    def v_max(self) -> int:
        return self.policy.v_max

    @property
    def tau(self) -> int:
        return self.policy.tau

    def _d1(self, v: int) -> float:
        return self.d0 if v == 0 else float(self.low[v - 1])

    def charging_mass(self) -> float:
        """Time fraction spent charging: sum over v < v_max of d_v^1 (C_v - p_min)."""
        c = self.policy.thresholds
        p_min = self.policy.distribution.p_min
        return float(sum(self._d1(v) * (c[v] - p_min) for v in range(self.v_max)))

    def traveling_mass(self) -> float:
        """Time fraction spent on trips (tau periods per departure)."""
        c = self.policy.thresholds
        p_min = self.policy.distribution.p_min
        p_max = self.policy.distribution.p_max
        per_epoch = 0.0
        for v in range(1, self.v_max):
            per_epoch += self.low[v - 1] * (c[v - 1] - c[v]) + self.high[v - 1] * (
                p_max - c[v - 1]
            )
        # full vehicles always travel; they only ever reach capacity at prices
        # below C_{v_max-1}, carrying the density of the level below
        per_epoch += self._d1(self.v_max - 1) * (c[self.v_max - 1] - p_min)
        return self.tau * per_epoch

    def total_mass(self) -> float:
        return self.charging_mass() + self.traveling_mass()

    def charge_level_probs(self) -> np.ndarray:
        """P(level = v | charging) for v = 0..v_max-1."""
        c = self.policy.thresholds
        p_min = self.policy.distribution.p_min
        masses = np.array([self._d1(v) * (c[v] - p_min) for v in range(self.v_max)])
        return masses / masses.sum()

    def balance_residual(self) -> float:
        """Worst violation of the epoch-to-epoch balance identity.

        At each level v < v_max the density must equal the charging inflow
        from level v-1 plus the uniform redistribution of trip arrivals from
        level v+1; both constant segments are checked.
        """
        c = self.policy.thresholds
        dist = self.policy.distribution
        p_min, p_max, spread = dist.p_min, dist.p_max, dist.spread
        f = 1.0 / spread
        worst = 0.0
        for v in range(self.v_max):
            # mass leaving level v+1 by traveling, from the stored segments
            w = v + 1
            tail = self.low[w - 1] * (c[w - 1] - c[w]) + self.high[w - 1] * (p_max - c[w - 1])
            inflow = f * tail
            d_here_low = self._d1(v)
            d_prev = 0.0 if v == 0 else self._d1(v - 1)
            worst = max(worst, abs(d_here_low - (d_prev + inflow)))
            if v >= 1:
                d_here_high = float(self.high[v - 1])
                worst = max(worst, abs(d_here_high - inflow))
        return worst


def stationary_distribution(policy: ChargingPolicy) -> StationaryDistribution:
    """Closed-form stationary densities for uniform prices.

    d_v^1 grows by the factor spread / (p_max - C_v) per level and the base
    level is normalized so that charging carries 1/(1+tau) of the time.
    """
    dist = policy.distribution
    if dist.variant != "uniform":
        raise ValueError("closed-form stationary distribution requires uniform prices")
    if dist.spread == 0.0:
        raise DegenerateDistribution("stationary densities are undefined for p_min == p_max")
    c = policy.thresholds
    v_max, tau = policy.v_max, policy.tau
    spread = dist.spread
    d0 = float(np.prod(dist.p_max - c[1:v_max])) / ((1 + tau) * spread**v_max)
    low = np.empty(v_max)
    prev = d0
    for v in range(1, v_max + 1):
        prev = prev * spread / (dist.p_max - c[v])
        low[v - 1] = prev
    high = low - np.concatenate([[d0], low[:-1]])
    return StationaryDistribution(d0=d0, low=low, high=high, policy=policy)


def avg_cost_from_distribution(d: StationaryDistribution, policy: ChargingPolicy) -> float:
    """Average price paid per unit, summed over the charging region of each level."""
    c = policy.thresholds
    p_min = policy.distribution.p_min
    total = 0.0
    for v in range(policy.v_max):
        total += d._d1(v) * (c[v] ** 2 - p_min**2) / 2.0
    return (1 + policy.tau) * total


def avg_cost_closed(policy: ChargingPolicy) -> float:
    """Average price paid per unit: the threshold at full capacity."""
    if policy.distribution.variant != "uniform":
        raise ValueError("closed-form average cost requires uniform prices")
    return float(policy.thresholds[policy.v_max])


@dataclass(frozen=True)
class BatterySizing:
    """Battery capacity choice and the charging cost it implies."""

    v_star: int
    p_avg: float  # continuous-formula average charging cost
    beta_component: float  # xi * v_star, the battery share of per-period cost


def optimal_battery(xi: float, p_min: float, p_max: float) -> BatterySizing:
    """Capacity where one more unit stops paying for itself.

    Continuous formula: p_avg = sqrt(2 xi (p_max - p_min)) + p_min, valid for
    xi <= (p_max - p_min) / 8; beyond that a single unit is already optimal
    and the cost is the mean price. The integer search returns the smallest
    v with threshold drop <= xi.
    """
    if xi <= 0:
        raise ValueError(f"xi must be positive, got {xi}")
    spread = p_max - p_min
    eta = 0.5 * (p_min + p_max)
    if xi > spread / 8.0:
        return BatterySizing(v_star=1, p_avg=eta, beta_component=xi)
    p_avg = math.sqrt(2.0 * xi * spread) + p_min
    # walk the recursion until the marginal drop (C_v - p_min)^2 / (2 spread)
    # falls to xi; same arithmetic path as threshold_drop, so exact-boundary
    # costs resolve consistently
    c = eta
    v = 1
    while (c - p_min) ** 2 / (2.0 * spread) > xi:
        c = eta - (p_max - c) ** 2 / (2.0 * spread)
        v += 1
    return BatterySizing(v_star=v, p_avg=p_avg, beta_component=xi * v)


def spread_sensitivity(eta: float, sigma_list, xi: float) -> np.ndarray:
    """Optimally-sized charging cost for uniform prices of mean eta per std sigma."""
    out = np.empty(len(sigma_list))
    for k, sigma in enumerate(sigma_list):
        half = math.sqrt(3.0) * sigma
        p_min, p_max = eta - half, eta + half
        if p_min < 0:
            raise NegativePriceSupport(
                f"sigma={sigma} puts the lower support at {p_min}, below zero"
            )
        if sigma == 0.0:
            out[k] = eta
        else:
            out[k] = optimal_battery(xi, p_min, p_max).p_avg
    return out


def rebalancing_b(fleet: FleetSpec) -> float:
    """Amortized cost per delivered unit of charging at the external cheap node.

    A detour burns two units and 2(1+tau) vehicle-periods to bring back
    v_max - 2 usable units bought at p_s.
    """
    if fleet.v_max < 3:
        raise BatteryTooSmall(f"rebalancing requires v_max >= 3, got {fleet.v_max}")
    if fleet.p_s is None:
        raise ValueError("fleet has no external-node price p_s")
    return 2.0 / (fleet.v_max - 2) * ((1 + fleet.tau) * fleet.beta + fleet.p_s) + fleet.p_s


@dataclass(frozen=True)
class RebalancingPlan:
    """Split between regular-node charging and external-node rebalancing."""

    b: float  # cost per delivered unit at the external node
    n_star: float  # optimal fraction of units still bought at regular nodes
    p_avg_r: float  # blended average cost per unit
    p_s: float | None = None
    gamma: float | None = None  # dispatch probability measured in simulation, if any


def approx_cost_curve(n, b: float, p_avg: float, p_min: float):
    """Blended cost when a fraction n of units stays at regular nodes.

    Regular-node cost is interpolated linearly between p_min (n=0) and the
    no-rebalancing average p_avg (n=1); the remainder pays b.
    """
    n = np.asarray(n, float)
    return n * (p_min + n * (p_avg - p_min)) + (1.0 - n) * b


def approx_rebalanced_cost(
    b: float, p_avg: float, p_min: float, clamp: bool = False
) -> RebalancingPlan:
    """Minimize the blended cost over the regular-node fraction n.

    Valid for p_min <= b <= 2 p_avg - p_min. Outside that interval the
    formula has no interior minimum; by default that raises, with clamp=True
    the endpoint plan is returned instead (all-rebalance below, none above).
    """
    lo, hi = p_min, 2.0 * p_avg - p_min
    if b < lo or b > hi:
        if not clamp:
            raise ConstraintViolation(
                f"b={b} outside [{lo}, {hi}]; pass clamp=True for the endpoint plan"
            )
        if b < lo:
            return RebalancingPlan(b=b, n_star=0.0, p_avg_r=b)
        return RebalancingPlan(b=b, n_star=1.0, p_avg_r=p_avg)
    if p_avg == p_min:  # degenerate: regular charging already at the floor
        return RebalancingPlan(b=b, n_star=1.0, p_avg_r=p_avg)
    n_star = (b - p_min) / (2.0 * (p_avg - p_min))
    p_avg_r = b - (b - p_min) ** 2 / (4.0 * (p_avg - p_min))
    return RebalancingPlan(b=b, n_star=n_star, p_avg_r=p_avg_r)
