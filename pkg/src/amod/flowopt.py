"""Profit-maximizing pricing, routing, charging, and rebalancing as a convex QP.

Decision variables: per-node ride prices, charging headcounts per node and
battery level, and loaded/empty trip flows per origin, destination, and
departure level. Demand served at node i is theta_i (1 - ell_i / ell_max)
under uniform willingness to pay, which makes revenue concave quadratic and
everything else linear.

The solver contract is accuracy, not identity: any method returning primal
and dual vectors with KKT residuals below tolerance is acceptable. Clarabel
(interior point) is used here; duals of the demand-satisfaction rows are the
marginal cost of one ride and drive the optimal prices.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

import clarabel

from .errors import InvalidSpec, NumericalFailure
from .model import FleetSpec, NetworkSpec, validate_network

__all__ = [
    "FlowProblem",
    "FlowSolution",
    "SolverTolerances",
    "ResidualReport",
    "build_problem",
    "solve",
    "verify_kkt",
    "prices_from_duals",
    "price_upper_bound",
    "profit_identity",
    "export_solution",
]


@dataclass(frozen=True)
class SolverTolerances:
    """Acceptance threshold for KKT residuals and the solver's own targets."""

    kkt: float = 1e-6
    solver_gap: float = 1e-9
    solver_feas: float = 1e-9
    max_iter: int = 200


@dataclass
class FlowProblem:
    """Assembled QP in minimization form with named variable/row indexing.

    Variables are ordered prices, charging, loaded trips, empty trips; all
    trip variables exist for departure levels 1..v_max and i != j, charging
    for levels 0..v_max-1. Objective: min 0.5 x'Px + q'x subject to
    A_eq x = b_eq (demand rows first, then flow balance), flows >= 0 and
    0 <= price <= ell_max.
    """

    m: int
    v_max: int
    ell_max: float
    theta: np.ndarray
    alpha: np.ndarray
    node_prices: np.ndarray
    beta: float
    tau: int
    P: sp.csc_matrix = field(repr=False)
    q: np.ndarray = field(repr=False)
    A_eq: sp.csc_matrix = field(repr=False)
    b_eq: np.ndarray = field(repr=False)

    @property
    def n_var(self) -> int:
        return self.m + self.m * self.v_max + 2 * self.m * (self.m - 1) * self.v_max

    @property
    def n_flows(self) -> int:
        return self.n_var - self.m

    @property
    def n_demand_rows(self) -> int:
        return self.m * (self.m - 1)

    @property
    def n_balance_rows(self) -> int:
        return self.m * (self.v_max + 1)

    # -- variable indexing ------------------------------------------------
    def ell_index(self, i: int) -> int:
        return i

    def charge_index(self, i: int, v: int) -> int:
        if not 0 <= v < self.v_max:
            raise IndexError(f"charging level {v} outside 0..{self.v_max - 1}")
        return self.m + i * self.v_max + v

    def _pair(self, i: int, j: int) -> int:
        if i == j:
            raise IndexError("trip variables exist only for i != j")
        return i * (self.m - 1) + (j if j < i else j - 1)

    def trip_index(self, i: int, j: int, v: int) -> int:
        if not 1 <= v <= self.v_max:
            raise IndexError(f"trip level {v} outside 1..{self.v_max}")
        return self.m + self.m * self.v_max + self._pair(i, j) * self.v_max + (v - 1)

    def rebalance_index(self, i: int, j: int, v: int) -> int:
        return self.trip_index(i, j, v) + self.m * (self.m - 1) * self.v_max

    # -- row indexing ------------------------------------------------------
    def demand_row(self, i: int, j: int) -> int:
        return self._pair(i, j)

    def balance_row(self, i: int, v: int) -> int:
        return self.n_demand_rows + i * (self.v_max + 1) + v

    def objective_value(self, x: np.ndarray) -> float:
        """Profit (maximization sense) at a primal point."""
        return -float(0.5 * x @ (self.P @ x) + self.q @ x)


def build_problem(net: NetworkSpec, fleet: FleetSpec) -> FlowProblem:
    """Assemble the QP for a validated network and fleet."""
    if net.m < 2:
        raise InvalidSpec(f"need at least 2 nodes, got m={net.m}")
    if fleet.v_max < 1:
        raise InvalidSpec("v_max must be at least 1: no trip can be made otherwise")
    report = validate_network(net)
    report.raise_if_invalid()

    m, v_max = net.m, fleet.v_max
    theta, alpha = net.arrival_rates, net.routing
    ell_max, beta, tau = net.wtp_max, fleet.beta, fleet.tau

    shell = FlowProblem(
        m=m,
        v_max=v_max,
        ell_max=ell_max,
        theta=theta,
        alpha=alpha,
        node_prices=net.prices,
        beta=beta,
        tau=tau,
        P=sp.csc_matrix((0, 0)),
        q=np.empty(0),
        A_eq=sp.csc_matrix((0, 0)),
        b_eq=np.empty(0),
    )
    n = shell.n_var

    q = np.empty(n)
    p_diag = np.zeros(n)
    for i in range(m):
        p_diag[i] = 2.0 * theta[i] / ell_max
        q[i] = -theta[i]
        for v in range(v_max):
            q[shell.charge_index(i, v)] = beta + net.prices[i]
    q[m + m * v_max :] = tau * beta

    rows, cols, vals = [], [], []
    b_eq = np.zeros(shell.n_demand_rows + shell.n_balance_rows)
    # demand satisfaction: sum_v trips(i,j,v) + (theta_i alpha_ij / ell_max) ell_i
    #                      = theta_i alpha_ij   (rows kept even when alpha_ij = 0)
    for i in range(m):
        for j in range(m):
            if i == j:
                continue
            r = shell.demand_row(i, j)
            coeff = theta[i] * alpha[i, j]
            rows.append(r)
            cols.append(shell.ell_index(i))
            vals.append(coeff / ell_max)
            for v in range(1, v_max + 1):
                rows.append(r)
                cols.append(shell.trip_index(i, j, v))
                vals.append(1.0)
            b_eq[r] = coeff
    # flow balance per node and level; out-of-range levels contribute nothing
    for i in range(m):
        for v in range(v_max + 1):
            r = shell.balance_row(i, v)
            if v < v_max:
                rows.append(r)
                cols.append(shell.charge_index(i, v))
                vals.append(1.0)
            if v >= 1:
                rows.append(r)
                cols.append(shell.charge_index(i, v - 1))
                vals.append(-1.0)
                for j in range(m):
                    if j == i:
                        continue
                    rows.append(r)
                    cols.append(shell.trip_index(i, j, v))
                    vals.append(1.0)
                    rows.append(r)
                    cols.append(shell.rebalance_index(i, j, v))
                    vals.append(1.0)
            if v < v_max:
                for j in range(m):
                    if j == i:
                        continue
                    rows.append(r)
                    cols.append(shell.trip_index(j, i, v + 1))
                    vals.append(-1.0)
                    rows.append(r)
                    cols.append(shell.rebalance_index(j, i, v + 1))
                    vals.append(-1.0)

    shell.P = sp.diags(p_diag, format="csc")
    shell.q = q
    shell.A_eq = sp.csc_matrix(
        (vals, (rows, cols)), shape=(shell.n_demand_rows + shell.n_balance_rows, n)
    )
    shell.b_eq = b_eq
    return shell


@dataclass(frozen=True)
class ResidualReport:
    """Independently recomputed KKT residuals at a primal/dual pair."""

    primal_eq: float  # max row-wise |A x - b| / (1 + |b|)
    bound_violation: float  # worst flow negativity or price outside its box
    stationarity: float  # inf-norm of the Lagrangian gradient / (1 + |q|_inf)
    dual_feasibility: float  # most negative inequality multiplier, clipped to >= 0
    complementarity: float  # max |multiplier * slack| / (1 + |profit|)
    duality_gap: float  # |primal - dual objective| / (1 + |profit|)

    def max_residual(self) -> float:
        return max(
            self.primal_eq,
            self.bound_violation,
            self.stationarity,
            self.dual_feasibility,
            self.complementarity,
        )

    def ok(self, tol: float) -> bool:
        return self.max_residual() <= tol and self.duality_gap <= tol


@dataclass
class FlowSolution:
    """Primal/dual solution with named views of the flow variables."""

    prices: np.ndarray  # optimal ride price per origin node
    charging: np.ndarray  # (m, v_max): vehicles charging at node i from level v
    trips: np.ndarray  # (m, m, v_max): loaded trips i->j departing at level v+1
    rebalancing: np.ndarray  # (m, m, v_max): empty trips, same layout
    lam: np.ndarray  # (m, m) demand-constraint duals: marginal cost per ride
    nu: np.ndarray  # (m, v_max+1) flow-balance duals
    profit: float
    status: str
    residuals: ResidualReport
    duality_gap: float
    iterations: int
    solve_time: float
    x: np.ndarray = field(repr=False)
    dual_eq: np.ndarray = field(repr=False)
    dual_flow_lb: np.ndarray = field(repr=False)
    dual_ell_lb: np.ndarray = field(repr=False)
    dual_ell_ub: np.ndarray = field(repr=False)

    @property
    def total_rebalancing(self) -> float:
        return float(self.rebalancing.sum())

    @property
    def total_trips(self) -> float:
        return float(self.trips.sum())

    @property
    def dual_prices_reliable(self) -> bool:
        """True when no price box multiplier is active, so the duals pin prices."""
        return max(self.dual_ell_lb.max(), self.dual_ell_ub.max()) <= 1e-7


def _kkt_report(
    problem: FlowProblem,
    x: np.ndarray,
    y_eq: np.ndarray,
    mu_flow: np.ndarray,
    mu_ell_lo: np.ndarray,
    mu_ell_hi: np.ndarray,
    duality_gap: float,
) -> ResidualReport:
    m = problem.m
    r_eq = problem.A_eq @ x - problem.b_eq
    primal_eq = float(np.max(np.abs(r_eq) / (1.0 + np.abs(problem.b_eq))))
    ell, flows = x[:m], x[m:]
    bound = max(
        float(np.max(-flows, initial=0.0)),
        float(np.max(-ell, initial=0.0)),
        float(np.max(ell - problem.ell_max, initial=0.0)),
    )
    grad = problem.P @ x + problem.q + problem.A_eq.T @ y_eq
    grad[m:] -= mu_flow
    grad[:m] += mu_ell_hi - mu_ell_lo
    stationarity = float(np.max(np.abs(grad))) / (1.0 + float(np.max(np.abs(problem.q))))
    dual_feas = max(
        0.0,
        -float(min(mu_flow.min(initial=0.0), mu_ell_lo.min(initial=0.0), mu_ell_hi.min(initial=0.0))),
    )
    profit = problem.objective_value(x)
    comp = max(
        float(np.max(np.abs(mu_flow * flows), initial=0.0)),
        float(np.max(np.abs(mu_ell_lo * ell), initial=0.0)),
        float(np.max(np.abs(mu_ell_hi * (problem.ell_max - ell)), initial=0.0)),
    ) / (1.0 + abs(profit))
    return ResidualReport(
        primal_eq=primal_eq,
        bound_violation=bound,
        stationarity=stationarity,
        dual_feasibility=dual_feas,
        complementarity=comp,
        duality_gap=abs(duality_gap) / (1.0 + abs(profit)),
    )


def solve(problem: FlowProblem, tol: SolverTolerances = SolverTolerances()) -> FlowSolution:
    """Solve the QP and extract primal flows, prices, and constraint duals.

    Raises NumericalFailure when the solver cannot certify KKT residuals
    below ``tol.kkt`` (carrying the residual report for diagnosis).
    """
    m, n = problem.m, problem.n_var
    n_eq = problem.A_eq.shape[0]
    n_flows = problem.n_flows

    eye_flows = sp.eye(n_flows, format="csc")
    zero_pad = sp.csc_matrix((n_flows, m))
    eye_ell = sp.eye(m, format="csc")
    zero_ell = sp.csc_matrix((m, n_flows))
    a_mat = sp.vstack(
        [
            problem.A_eq,
            sp.hstack([zero_pad, -eye_flows]),  # -flows <= 0
            sp.hstack([-eye_ell, zero_ell]),  # -ell <= 0
            sp.hstack([eye_ell, zero_ell]),  # ell <= ell_max
        ],
        format="csc",
    )
    b = np.concatenate(
        [problem.b_eq, np.zeros(n_flows), np.zeros(m), np.full(m, problem.ell_max)]
    )
    cones = [clarabel.ZeroConeT(n_eq), clarabel.NonnegativeConeT(n_flows + 2 * m)]
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.tol_gap_abs = tol.solver_gap
    settings.tol_gap_rel = tol.solver_gap
    settings.tol_feas = tol.solver_feas
    settings.max_iter = tol.max_iter
    solver = clarabel.DefaultSolver(problem.P, problem.q, a_mat, b, cones, settings)
    sol = solver.solve()
    status = str(sol.status)

    x = np.asarray(sol.x)
    z = np.asarray(sol.z)
    y_eq = z[:n_eq]
    mu_flow = z[n_eq : n_eq + n_flows]
    mu_ell_lo = z[n_eq + n_flows : n_eq + n_flows + m]
    mu_ell_hi = z[n_eq + n_flows + m :]
    gap = float(sol.obj_val - sol.obj_val_dual)
    report = _kkt_report(problem, x, y_eq, mu_flow, mu_ell_lo, mu_ell_hi, gap)

    if status not in ("Solved", "AlmostSolved") or not report.ok(tol.kkt):
        raise NumericalFailure(
            f"solver finished with status {status} and max KKT residual "
            f"{report.max_residual():.3e} (gap {report.duality_gap:.3e})",
            status=status,
            residuals=report,
        )

    v_max = problem.v_max
    charging = np.empty((m, v_max))
    trips = np.zeros((m, m, v_max))
    rebalancing = np.zeros((m, m, v_max))
    lam = np.zeros((m, m))
    nu = np.empty((m, v_max + 1))
    for i in range(m):
        for v in range(v_max):
            charging[i, v] = x[problem.charge_index(i, v)]
        for v in range(v_max + 1):
            nu[i, v] = -y_eq[problem.balance_row(i, v)]
        for j in range(m):
            if i == j:
                continue
            lam[i, j] = -y_eq[problem.demand_row(i, j)]
            for v in range(1, v_max + 1):
                trips[i, j, v - 1] = x[problem.trip_index(i, j, v)]
                rebalancing[i, j, v - 1] = x[problem.rebalance_index(i, j, v)]

    return FlowSolution(
        prices=x[:m].copy(),
        charging=charging,
        trips=trips,
        rebalancing=rebalancing,
        lam=lam,
        nu=nu,
        profit=problem.objective_value(x),
        status=status,
        residuals=report,
        duality_gap=report.duality_gap,
        iterations=int(sol.iterations),
        solve_time=float(sol.solve_time),
        x=x,
        dual_eq=y_eq,
        dual_flow_lb=mu_flow,
        dual_ell_lb=mu_ell_lo,
        dual_ell_ub=mu_ell_hi,
    )


def verify_kkt(problem: FlowProblem, solution: FlowSolution) -> ResidualReport:
    """Recompute all KKT residual norms from stored vectors, independent of the solver.

    The reported gap is the difference between the primal objective and the
    Lagrangian evaluated at the primal/dual pair, which equals the dual
    objective whenever stationarity holds.
    """
    x = solution.x
    ell = x[: problem.m]
    penalty = (
        solution.dual_eq @ (problem.A_eq @ x - problem.b_eq)
        - solution.dual_flow_lb @ x[problem.m :]
        - solution.dual_ell_lb @ ell
        + solution.dual_ell_ub @ (ell - problem.ell_max)
    )
    return _kkt_report(
        problem,
        x,
        solution.dual_eq,
        solution.dual_flow_lb,
        solution.dual_ell_lb,
        solution.dual_ell_ub,
        float(-penalty),
    )


def prices_from_duals(lam: np.ndarray, net: NetworkSpec) -> np.ndarray:
    """Optimal ride prices from ride-cost duals: (ell_max + sum_j lam_ij a_ij) / 2."""
    lam = np.asarray(lam, float)
    if lam.shape != (net.m, net.m):
        raise ValueError(f"lam must be ({net.m}, {net.m}), got {lam.shape}")
    return 0.5 * (net.wtp_max + (lam * net.routing).sum(axis=1))


def price_upper_bound(net: NetworkSpec, fleet: FleetSpec) -> np.ndarray:
    """Worst-case marginal ride cost: charge and rebalance at both endpoints."""
    avg_dest_price = net.routing @ net.prices
    return 0.5 * (net.wtp_max + net.prices + avg_dest_price + (2 + 2 * fleet.tau) * fleet.beta)


def profit_identity(prices: np.ndarray, net: NetworkSpec) -> float:
    """Per-period profit implied by prices alone under uniform willingness to pay."""
    prices = np.asarray(prices, float)
    if np.any(prices < -1e-12) or np.any(prices > net.wtp_max + 1e-12):
        raise ValueError("prices must lie within [0, wtp_max]")
    return float(np.sum(net.arrival_rates / net.wtp_max * (net.wtp_max - prices) ** 2))


def export_solution(
    net: NetworkSpec,
    fleet: FleetSpec,
    solution: FlowSolution,
    out_dir: str | Path,
    stem: str = "solution",
) -> dict[str, Path]:
    """Write node CSV, flow CSV, and a JSON summary; returns the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    bounds = price_upper_bound(net, fleet)
    sum_la = (solution.lam * net.routing).sum(axis=1)

    nodes_path = out_dir / f"{stem}_nodes.csv"
    with open(nodes_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node", "ell_star", "bound", "sum_lambda_alpha"])
        for i in range(net.m):
            writer.writerow([i, repr(solution.prices[i]), repr(bounds[i]), repr(sum_la[i])])

    flows_path = out_dir / f"{stem}_flows.csv"
    with open(flows_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["i", "j", "v", "x_flow", "r_flow"])
        for i in range(net.m):
            for j in range(net.m):
                if i == j:
                    continue
                for v in range(1, fleet.v_max + 1):
                    writer.writerow(
                        [
                            i,
                            j,
                            v,
                            repr(solution.trips[i, j, v - 1]),
                            repr(solution.rebalancing[i, j, v - 1]),
                        ]
                    )

    summary_path = out_dir / f"{stem}_summary.json"
    summary = {
        "profit": solution.profit,
        "status": solution.status,
        "duality_gap": solution.duality_gap,
        "residuals": {
            "primal_eq": solution.residuals.primal_eq,
            "bound_violation": solution.residuals.bound_violation,
            "stationarity": solution.residuals.stationarity,
            "dual_feasibility": solution.residuals.dual_feasibility,
            "complementarity": solution.residuals.complementarity,
        },
        "iterations": solution.iterations,
        "solve_time": solution.solve_time,
    }
    with open(summary_path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    return {"nodes": nodes_path, "flows": flows_path, "summary": summary_path}
