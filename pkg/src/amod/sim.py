"""Seeded Monte Carlo for the (battery level, price) chain under threshold charging.

Replicates run as vectorized lanes. Each lane consumes uniform draws from a
per-replicate tape seeded by (seed, replicate, purpose) spawn keys, so results
are bit-reproducible, independent of lane processing order, and candidate
policies evaluated against the same replicate share common random numbers.

Measurement protocol: events are counted once a lane has seen its first
cost-incurring event at or after burn-in, and accumulators are snapshotted at
each completed customer trip. Estimates use the snapshot, so the measured
window always ends on a delivered trip; with degenerate prices this makes the
charging-time fraction exactly 1/(1+tau).
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations_with_replacement

import numpy as np
from scipy import stats

from .errors import BatteryTooSmall, StrandedVehicle
from .model import FleetSpec, PriceDistribution, SimConfig
from .policy import ChargingPolicy

__all__ = [
    "VehicleState",
    "SimEstimate",
    "PolicySimResult",
    "RebalanceSimResult",
    "BruteForceResult",
    "simulate_policy",
    "simulate_rebalancing",
    "evaluate_thresholds",
    "brute_force_threshold_search",
]

CONFIDENCE = 0.99


@dataclass(frozen=True)
class VehicleState:
    """Battery level and the electricity price at the current node."""

    v: int
    p: float

    def check(self, v_max: int, dist: PriceDistribution, p_s: float | None = None) -> None:
        if not 0 <= self.v <= v_max:
            raise ValueError(f"battery level {self.v} outside [0, {v_max}]")
        on_support = dist.p_min <= self.p <= dist.p_max
        if not on_support and not (p_s is not None and self.p == p_s):
            raise ValueError(f"price {self.p} outside the support [{dist.p_min}, {dist.p_max}]")


@dataclass(frozen=True)
class SimEstimate:
    """Replicate-mean estimate with a between-replicate confidence interval."""

    mean: float
    ci_half: float
    replicates: int
    periods: int
    seed: int

    @classmethod
    def from_replicates(cls, values, seed: int, periods: int) -> "SimEstimate":
        values = np.asarray(values, float)
        r = values.size
        if r > 1:
            half = float(
                stats.t.ppf(0.5 + CONFIDENCE / 2.0, r - 1) * values.std(ddof=1) / np.sqrt(r)
            )
        else:
            half = float("nan")
        return cls(
            mean=float(values.mean()),
            ci_half=half,
            replicates=int(r),
            periods=int(periods),
            seed=int(seed),
        )

    def covers(self, value: float) -> bool:
        return abs(value - self.mean) <= self.ci_half


class _UniformTape:
    """Per-stream lazily extended U(0,1) arrays with caller-held read pointers.

    Lanes sharing a stream read the same sequence (common random numbers);
    generation order is per-stream sequential, so contents never depend on
    which lane asks first.
    """

    def __init__(self, seed_seqs, chunk: int = 8192):
        self._gens = [np.random.default_rng(s) for s in seed_seqs]
        self._chunk = chunk
        self._buf = np.empty((len(self._gens), 0))

    def _grow(self, upto: int) -> None:
        old = self._buf.shape[1]
        new = max(upto, old + self._chunk)
        buf = np.empty((len(self._gens), new))
        buf[:, :old] = self._buf
        for k, g in enumerate(self._gens):
            buf[k, old:] = g.random(new - old)
        self._buf = buf

    def take(self, streams: np.ndarray, ptrs: np.ndarray) -> np.ndarray:
        if ptrs.size and int(ptrs.max()) >= self._buf.shape[1]:
            self._grow(int(ptrs.max()) + 1)
        return self._buf[streams, ptrs]


def _stream_seeds(seed: int, count: int, purpose: int):
    return [np.random.SeedSequence(entropy=seed, spawn_key=(r, purpose)) for r in range(count)]


@dataclass
class _ChainStats:
    """Per-lane accumulators snapshotted at the last measured customer trip."""

    money: np.ndarray
    units: np.ndarray  # energy units bought at regular nodes
    charge_periods: np.ndarray
    trips: np.ndarray  # customer trips completed
    s_units: np.ndarray  # delivered units from external-node detours
    detours: np.ndarray
    hist: np.ndarray  # charge events by battery level, shape (lanes, v_max)

    def measured_periods(self, tau: int, v_max: int) -> np.ndarray:
        return self.charge_periods + tau * self.trips + (2 * tau + v_max) * self.detours


def _run_chain(
    thresholds: np.ndarray,
    dist: PriceDistribution,
    v_max: int,
    tau: int,
    horizon: int,
    burn_in: int,
    stream_of_lane: np.ndarray,
    n_streams: int,
    seed: int,
    rebalance: tuple[float, float, float] | None = None,
) -> _ChainStats:
    lanes = stream_of_lane.size
    price_tape = _UniformTape(_stream_seeds(seed, n_streams, purpose=0))
    coin_tape = _UniformTape(_stream_seeds(seed, n_streams, purpose=1)) if rebalance else None

    rows = np.arange(lanes)
    v = np.full(lanes, v_max, np.int64)
    t = np.zeros(lanes, np.int64)
    pptr = np.zeros(lanes, np.int64)
    cptr = np.zeros(lanes, np.int64)
    p = dist.ppf(price_tape.take(stream_of_lane, pptr))
    pptr += 1
    started = np.zeros(lanes, bool)

    run = _ChainStats(
        money=np.zeros(lanes),
        units=np.zeros(lanes, np.int64),
        charge_periods=np.zeros(lanes, np.int64),
        trips=np.zeros(lanes, np.int64),
        s_units=np.zeros(lanes, np.int64),
        detours=np.zeros(lanes, np.int64),
        hist=np.zeros((lanes, v_max), np.int64),
    )
    snap = _ChainStats(**{k: getattr(run, k).copy() for k in vars(run)})

    def dispatch(entered: np.ndarray) -> None:
        """Coin-flip lanes that just entered level 1; winners detour to the cheap node."""
        gamma, p_s, beta = rebalance
        coins = coin_tape.take(stream_of_lane[entered], cptr[entered])
        cptr[entered] += 1
        go = np.zeros(lanes, bool)
        go[entered] = coins < gamma
        if go.any():
            started[go & (t >= burn_in)] = True
            mg = go & started
            run.money[mg] += v_max * p_s + (2 + 2 * tau) * beta
            run.s_units[mg] += v_max - 2
            run.detours[mg] += 1
            v[go] = v_max - 1
            t[go] += 2 * tau + v_max
            p[go] = dist.ppf(price_tape.take(stream_of_lane[go], pptr[go]))
            pptr[go] += 1

    while True:
        act = t < horizon
        if not act.any():
            break
        charge = act & (v < v_max) & (p <= thresholds[rows, v])
        travel = act & ~charge

        if charge.any():
            started |= charge & (t >= burn_in)
            mc = charge & started
            if mc.any():
                run.money[mc] += p[mc]
                run.units[mc] += 1
                run.charge_periods[mc] += 1
                np.add.at(run.hist, (rows[mc], v[mc]), 1)
            v[charge] += 1
            t[charge] += 1
            if rebalance is not None:
                entered = charge & (v == 1)
                if entered.any():
                    dispatch(entered)

        if travel.any():
            if (v[travel] < 1).any():
                raise StrandedVehicle("policy forbade charging at an empty battery")
            v[travel] -= 1
            t[travel] += tau
            p[travel] = dist.ppf(price_tape.take(stream_of_lane[travel], pptr[travel]))
            pptr[travel] += 1
            mt = travel & started
            if mt.any():
                run.trips[mt] += 1
                for name in vars(run):
                    getattr(snap, name)[mt] = getattr(run, name)[mt]
            if rebalance is not None:
                entered = travel & (v == 1)
                if entered.any():
                    dispatch(entered)
    return snap


@dataclass(frozen=True)
class PolicySimResult:
    """Estimates from simulating the charging chain without rebalancing."""

    p_avg: SimEstimate
    charging_fraction: SimEstimate
    soc_counts: np.ndarray  # pooled charge events per battery level
    charge_level_probs: np.ndarray  # replicate-mean P(level | charging)
    charge_level_ci: np.ndarray


def simulate_policy(policy: ChargingPolicy, cfg: SimConfig) -> PolicySimResult:
    """Estimate the average price per unit, charging-time fraction, and SoC mix."""
    r = cfg.replicates
    thr = np.broadcast_to(policy.thresholds, (r, policy.v_max + 1))
    snap = _run_chain(
        thr,
        policy.distribution,
        policy.v_max,
        policy.tau,
        cfg.horizon,
        cfg.burn_in,
        stream_of_lane=np.arange(r),
        n_streams=r,
        seed=cfg.seed,
    )
    if (snap.units == 0).any():
        raise ValueError("horizon too short: a replicate measured no charging events")
    periods = int(snap.measured_periods(policy.tau, policy.v_max).sum())
    p_avg = SimEstimate.from_replicates(snap.money / snap.units, cfg.seed, periods)
    frac = snap.charge_periods / (snap.charge_periods + policy.tau * snap.trips)
    per_rep_probs = snap.hist / snap.hist.sum(axis=1, keepdims=True)
    t_mult = stats.t.ppf(0.5 + CONFIDENCE / 2.0, r - 1) / np.sqrt(r) if r > 1 else np.nan
    return PolicySimResult(
        p_avg=p_avg,
        charging_fraction=SimEstimate.from_replicates(frac, cfg.seed, periods),
        soc_counts=snap.hist.sum(axis=0),
        charge_level_probs=per_rep_probs.mean(axis=0),
        charge_level_ci=t_mult * per_rep_probs.std(axis=0, ddof=1),
    )


@dataclass(frozen=True)
class RebalanceSimResult:
    """Estimates for the chain with probabilistic detours to the cheap node."""

    cost: SimEstimate  # energy plus detour-attributed operational cost, per unit consumed
    measured_n: SimEstimate  # fraction of usable units bought at regular nodes
    gamma: float
    detours: int
    acting_thresholds: np.ndarray | None = None  # thresholds after the dispatch adjustment


def _gamma_adjusted_thresholds(policy: ChargingPolicy, gamma: float) -> np.ndarray:
    """Self-consistent thresholds when level-1 arrivals detour with probability gamma.

    A dispatched vehicle returns full, so the expected price of the next
    regular-node unit for a vehicle at level 1 blends the forced-market mean
    with the full-battery threshold: C_1 = (1-gamma) eta + gamma C_vmax. The
    higher levels follow the usual one-step recursion; iterating to the fixed
    point ties C_vmax back to C_1. At gamma=1 every threshold collapses to
    the bottom of the support and regular-node charging stops.
    """
    dist = policy.distribution
    v_max = policy.v_max
    c = np.empty(v_max + 1)
    c[0] = dist.p_max
    if gamma >= 1.0:
        c[1:] = dist.p_min
        return c
    eta = dist.mean()
    top = float(policy.thresholds[v_max])
    for _ in range(100_000):
        c[1] = (1.0 - gamma) * eta + gamma * top
        for v in range(2, v_max + 1):
            c[v] = dist.expected_min_with(c[v - 1])
        if abs(c[v_max] - top) < 1e-13:
            break
        top = c[v_max]
    return c


def simulate_rebalancing(
    policy: ChargingPolicy,
    p_s: float,
    gamma: float,
    fleet: FleetSpec,
    cfg: SimConfig,
) -> RebalanceSimResult:
    """Simulate the policy where trip arrivals at level 1 detour with probability gamma.

    A detour travels tau periods to the external node, fills the battery at
    p_s, and travels tau periods back, burning two units; its cost carries the
    electricity bought plus (2 + 2 tau) vehicle-periods of operational cost.
    Regular-node charging uses thresholds re-solved for the dispatch
    probability, so gamma = 1 sends every purchase to the external node.
    With gamma = 0 the chain matches simulate_policy draw for draw.
    """
    if fleet.v_max < 3:
        raise BatteryTooSmall(f"rebalancing requires v_max >= 3, got {fleet.v_max}")
    if fleet.v_max != policy.v_max:
        raise ValueError(f"fleet v_max={fleet.v_max} does not match policy v_max={policy.v_max}")
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must be in [0, 1], got {gamma}")
    r = cfg.replicates
    acting = (
        policy.thresholds if gamma == 0.0 else _gamma_adjusted_thresholds(policy, gamma)
    )
    thr = np.broadcast_to(acting, (r, policy.v_max + 1))
    snap = _run_chain(
        thr,
        policy.distribution,
        policy.v_max,
        policy.tau,
        cfg.horizon,
        cfg.burn_in,
        stream_of_lane=np.arange(r),
        n_streams=r,
        seed=cfg.seed,
        rebalance=(gamma, p_s, fleet.beta),
    )
    used = snap.units + snap.s_units
    if (used == 0).any():
        raise ValueError("horizon too short: a replicate measured no energy purchases")
    periods = int(snap.measured_periods(policy.tau, policy.v_max).sum())
    return RebalanceSimResult(
        cost=SimEstimate.from_replicates(snap.money / used, cfg.seed, periods),
        measured_n=SimEstimate.from_replicates(snap.units / used, cfg.seed, periods),
        gamma=gamma,
        detours=int(snap.detours.sum()),
        acting_thresholds=np.asarray(acting, float),
    )


def evaluate_thresholds(
    candidates: np.ndarray,
    dist: PriceDistribution,
    tau: int,
    cfg: SimConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """Average-cost estimates for many threshold vectors under shared randomness.

    candidates has shape (k, v_max); row order is preserved. Returns
    (mean cost, CI half-width) per candidate. All candidates see identical
    price draws per replicate, so cost differences are directly comparable.
    """
    candidates = np.atleast_2d(np.asarray(candidates, float))
    k, v_max = candidates.shape
    r = cfg.replicates
    full = np.empty((k, v_max + 1))
    full[:, 0] = dist.p_max  # always charge when empty
    full[:, 1:] = candidates
    thr = np.repeat(full, r, axis=0)
    snap = _run_chain(
        thr,
        dist,
        v_max,
        tau,
        cfg.horizon,
        cfg.burn_in,
        stream_of_lane=np.tile(np.arange(r), k),
        n_streams=r,
        seed=cfg.seed,
    )
    if (snap.units == 0).any():
        raise ValueError("horizon too short: a lane measured no charging events")
    per_lane = (snap.money / snap.units).reshape(k, r)
    means = per_lane.mean(axis=1)
    if r > 1:
        halves = (
            stats.t.ppf(0.5 + CONFIDENCE / 2.0, r - 1) * per_lane.std(axis=1, ddof=1) / np.sqrt(r)
        )
    else:
        halves = np.full(k, np.nan)
    return means, halves


@dataclass(frozen=True)
class BruteForceResult:
    """Outcome of the exhaustive threshold-grid search."""

    thresholds: np.ndarray  # best vector including the always-charge sentinel
    cost: float
    ci_half: float
    candidates: np.ndarray
    costs: np.ndarray


def brute_force_threshold_search(
    v_max: int,
    dist: PriceDistribution,
    tau: int,
    grid,
    cfg: SimConfig,
) -> BruteForceResult:
    """Exhaustively simulate every nonincreasing threshold vector on a grid.

    Intended as an optimality oracle for small batteries (v_max <= 4); the
    candidate count grows combinatorially with level count and grid size.
    """
    if v_max > 4:
        raise ValueError(f"exhaustive search is limited to v_max <= 4, got {v_max}")
    if np.isscalar(grid):
        grid_points = np.linspace(dist.p_min, dist.p_max, int(grid))
    else:
        grid_points = np.sort(np.asarray(grid, float))
    cands = np.array(
        list(combinations_with_replacement(grid_points[::-1], v_max)), dtype=float
    )
    costs, halves = evaluate_thresholds(cands, dist, tau, cfg)
    best = int(np.argmin(costs))
    best_full = np.concatenate([[dist.p_max], cands[best]])
    return BruteForceResult(
        thresholds=best_full,
        cost=float(costs[best]),
        ci_half=float(halves[best]),
        candidates=cands,
        costs=costs,
    )
