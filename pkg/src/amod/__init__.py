"""Profit-optimal operation of an electric mobility-on-demand fleet.

Library layout:

- :mod:`amod.model` -- domain types, validation, JSON config round-trip.
- :mod:`amod.flowopt` -- the network-flow QP: build, solve, duals, prices.
- :mod:`amod.policy` -- threshold charging under random prices, closed forms.
- :mod:`amod.sim` -- seeded Monte Carlo oracles for the charging chain.
- :mod:`amod.experiments` -- random-network sweeps and CSV emission.
- :mod:`amod.plots` -- SVG rendering of the experiment CSVs.
- :mod:`amod.cli` -- the ``amod`` command.
"""

from .errors import (
    AmodError,
    BatteryTooSmall,
    ConstraintViolation,
    DegenerateDistribution,
    InvalidSpec,
    MalformedCsv,
    NegativePriceSupport,
    NonNormalizedDensity,
    NumericalFailure,
    StrandedVehicle,
)
from .model import (
    Config,
    FleetSpec,
    NetworkSpec,
    PriceDistribution,
    SimConfig,
    ValidationReport,
    load_config,
    save_config,
    validate_fleet,
    validate_network,
)
from .flowopt import (
    FlowProblem,
    FlowSolution,
    SolverTolerances,
    build_problem,
    price_upper_bound,
    prices_from_duals,
    profit_identity,
    solve,
    verify_kkt,
)
from .policy import (
    BatterySizing,
    ChargingPolicy,
    RebalancingPlan,
    StationaryDistribution,
    approx_rebalanced_cost,
    avg_cost_closed,
    avg_cost_from_distribution,
    optimal_battery,
    rebalancing_b,
    spread_sensitivity,
    stationary_distribution,
    thresholds_general,
    thresholds_uniform,
)
from .sim import (
    BruteForceResult,
    SimEstimate,
    VehicleState,
    brute_force_threshold_search,
    simulate_policy,
    simulate_rebalancing,
)

__version__ = "0.1.0"
