"""Cost-minimal deployment MILP: LP relaxation, branch and bound, exact oracle."""

from __future__ import annotations

import heapq
import itertools
import json
import math
import time
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.optimize import linprog

from .geodata import CandidateSite, DemandNode, SiteKind

INTEGRALITY_TOL = 1e-6
COST_TOL = 1e-9


class SolveStatus(str, Enum):
    OPTIMAL = "Optimal"
    FEASIBLE = "Feasible"
    INFEASIBLE = "Infeasible"
    BUDGET_INFEASIBLE = "BudgetInfeasible"


class OptimizerError(Exception):
    pass


class ProblemInfeasibleError(OptimizerError):
    """Raised at formulation time when no plan can possibly exist."""

    def __init__(self, message, status=SolveStatus.INFEASIBLE, node_ids=()):
        super().__init__(message)
        self.status = status
        self.node_ids = tuple(node_ids)


class LPError(OptimizerError):
    """Numerical failure inside the LP solver; never silently a wrong bound."""


@dataclass(frozen=True)
class DeploymentProblem:
    nodes: tuple
    sites: tuple
    links: tuple          # feasible links only
    bandwidth_hz: float
    budget_units: float | None = None

    @property
    def site_ids(self):
        return [s.id for s in self.sites]

    def site_by_id(self, sid):
        for s in self.sites:
            if s.id == sid:
                return s
        raise KeyError(sid)


@dataclass
class SolveReport:
    lp_lower_bound: float = math.nan
    incumbent_cost: float = math.nan
    nodes_explored: int = 0
    gap: float = math.nan
    wall_time_s: float = 0.0
    timed_out: bool = False


@dataclass
class DeploymentPlan:
    status: SolveStatus
    opened_sites: list = field(default_factory=list)       # site ids
    allocations: dict = field(default_factory=dict)        # (node_id, site_id) -> Hz
    total_cost_units: float = 0.0
    claimed_rates_bps: dict = field(default_factory=dict)  # node_id -> bps
    average_claimed_rate_bps: float = 0.0
    report: SolveReport = field(default_factory=SolveReport)


def formulate(nodes, sites, links, bandwidth_hz: float,
              budget_units: float | None = None) -> DeploymentProblem:
    """Build the deployment problem from a link matrix.

    minimize   sum_j c_j y_j
    subject to sum_j se_ij b_ij >= R_i          (coverage, per node)
               sum_i b_ij <= B y_j              (capacity, per site)
               sum_j c_j y_j <= budget          (optional)
               y_j in {0,1},  b_ij >= 0 on feasible links only
    """
    if bandwidth_hz <= 0:
        raise ValueError("bandwidth must be > 0")
    nodes = tuple(nodes)
    sites = tuple(sites)
    feasible = tuple(l for l in links
                     if l.feasible and l.spectral_efficiency_bps_hz > 0)
    covered = {l.node_id for l in feasible}
    uncovered = [n.id for n in nodes if n.id not in covered]
    if uncovered:
        raise ProblemInfeasibleError(
            f"no feasible links for demand nodes {uncovered}",
            status=SolveStatus.INFEASIBLE, node_ids=uncovered)
    if budget_units is not None and sites:
        if min(s.cost_units for s in sites) > budget_units:
            raise ProblemInfeasibleError(
                f"budget {budget_units} below cheapest site cost",
                status=SolveStatus.BUDGET_INFEASIBLE)
    return DeploymentProblem(nodes=nodes, sites=sites, links=feasible,
                             bandwidth_hz=bandwidth_hz, budget_units=budget_units)


# ---------------------------------------------------------------------------
# LP machinery

def _index_problem(problem):
    node_idx = {n.id: i for i, n in enumerate(problem.nodes)}
    site_idx = {s.id: j for j, s in enumerate(problem.sites)}
    return node_idx, site_idx


def _lp_matrices(problem, fixed=None):
    """Inequality matrices for the relaxation; variables [y_0.., b_0..]."""
    node_idx, site_idx = _index_problem(problem)
    S = len(problem.sites)
    L = len(problem.links)
    nvars = S + L
    c = np.zeros(nvars)
    for j, s in enumerate(problem.sites):
        c[j] = s.cost_units

    rows = []
    rhs = []
    # coverage: -sum se b <= -R_i
    for n in problem.nodes:
        row = np.zeros(nvars)
        for k, l in enumerate(problem.links):
            if l.node_id == n.id:
                row[S + k] = -l.spectral_efficiency_bps_hz
        rows.append(row)
        rhs.append(-n.required_rate_bps)
    # capacity: sum_i b_ij - B y_j <= 0
    for s in problem.sites:
        row = np.zeros(nvars)
        row[site_idx[s.id]] = -problem.bandwidth_hz
        for k, l in enumerate(problem.links):
            if l.site_id == s.id:
                row[S + k] = 1.0
        rows.append(row)
        rhs.append(0.0)
    if problem.budget_units is not None:
        row = np.zeros(nvars)
        row[:S] = c[:S]
        rows.append(row)
        rhs.append(problem.budget_units)

    bounds = []
    for s in problem.sites:
        if fixed is not None and s.id in fixed:
            v = float(fixed[s.id])
            bounds.append((v, v))
        else:
            bounds.append((0.0, 1.0))
    bounds.extend((0.0, None) for _ in range(L))
    return c, np.array(rows), np.array(rhs), bounds


def solve_lp_relaxation(problem, fixed=None):
    """LP relaxation with optional partial fixing of the binaries.

    Returns (objective, y_by_site_id, b_by_link) or None when infeasible.
    The objective is a valid lower bound on any integer completion of `fixed`.
    """
    c, A, rhs, bounds = _lp_matrices(problem, fixed)
    res = linprog(c, A_ub=A, b_ub=rhs, bounds=bounds, method="highs")
    if res.status == 2:
        return None
    if res.status != 0:
        raise LPError(f"LP solver failure: {res.message}")
    S = len(problem.sites)
    y = {s.id: float(res.x[j]) for j, s in enumerate(problem.sites)}
    b = {(l.node_id, l.site_id): float(res.x[S + k])
         for k, l in enumerate(problem.links)}
    return float(res.fun), y, b


def _allocation_lp(problem, open_ids):
    """Bandwidth allocation over the open sites only (min total bandwidth).

    Returns {(node_id, site_id): Hz} or None when infeasible.
    """
    open_set = set(open_ids)
    links = [l for l in problem.links if l.site_id in open_set]
    covered = {l.node_id for l in links}
    if any(n.id not in covered for n in problem.nodes):
        return None
    L = len(links)
    c = np.ones(L)
    rows = []
    rhs = []
    for n in problem.nodes:
        row = np.zeros(L)
        for k, l in enumerate(links):
            if l.node_id == n.id:
                row[k] = -l.spectral_efficiency_bps_hz
        rows.append(row)
        rhs.append(-n.required_rate_bps)
    for sid in sorted(open_set):
        row = np.zeros(L)
        for k, l in enumerate(links):
            if l.site_id == sid:
                row[k] = 1.0
        rows.append(row)
        rhs.append(problem.bandwidth_hz)
    res = linprog(c, A_ub=np.array(rows), b_ub=np.array(rhs),
                  bounds=[(0.0, None)] * L, method="highs")
    if res.status == 2:
        return None
    if res.status != 0:
        raise LPError(f"LP solver failure: {res.message}")
    return {(l.node_id, l.site_id): float(res.x[k]) for k, l in enumerate(links)}


def _polish_allocations(problem, open_ids, b):
    """Repair solver-tolerance slack so constraints hold as exact arithmetic."""
    se = {(l.node_id, l.site_id): l.spectral_efficiency_bps_hz
          for l in problem.links}
    b = {k: max(0.0, v) for k, v in b.items() if v > 0.0}
    B = problem.bandwidth_hz
    # capacity first
    for sid in open_ids:
        used = sum(v for (ni, sj), v in b.items() if sj == sid)
        if used > B:
            scale = B / used
            for key in list(b):
                if key[1] == sid:
                    b[key] *= scale
    # then coverage, spending residual capacity on the best-se links
    for n in problem.nodes:
        rate = sum(v * se[k] for k, v in b.items() if k[0] == n.id)
        target = n.required_rate_bps
        if rate >= target:
            continue
        options = sorted(
            (l for l in problem.links
             if l.node_id == n.id and l.site_id in open_ids),
            key=lambda l: (-l.spectral_efficiency_bps_hz, l.site_id))
        for l in options:
            if rate >= target:
                break
            used = sum(v for (ni, sj), v in b.items() if sj == l.site_id)
            cap = B - used
            if cap <= 0:
                continue
            need = (target * (1 + 1e-12) - rate) / l.spectral_efficiency_bps_hz
            db = min(cap, need)
            key = (n.id, l.site_id)
            b[key] = b.get(key, 0.0) + db
            rate += db * l.spectral_efficiency_bps_hz
    return b


def claimed_rates(problem, open_ids, b):
    """Per-node rates from allocations plus the residual-bandwidth bonus.

    Each opened site's unallocated bandwidth is split equally among the nodes
    it already serves (b > 0 there) and converted to rate at their link se.
    """
    se = {(l.node_id, l.site_id): l.spectral_efficiency_bps_hz
          for l in problem.links}
    rates = {n.id: 0.0 for n in problem.nodes}
    for (ni, sj), v in b.items():
        rates[ni] += v * se[(ni, sj)]
    for sid in open_ids:
        served = sorted(ni for (ni, sj), v in b.items() if sj == sid and v > 0)
        if not served:
            continue
        used = sum(v for (ni, sj), v in b.items() if sj == sid)
        residual = max(0.0, problem.bandwidth_hz - used)
        share = residual / len(served)
        for ni in served:
            rates[ni] += share * se[(ni, sid)]
    return rates


def _finalize_plan(problem, open_ids, status, report):
    open_ids = sorted(open_ids)
    b = _allocation_lp(problem, open_ids)
    if b is None:
        raise LPError("final allocation LP infeasible for accepted open set")
    b = _polish_allocations(problem, open_ids, b)
    rates = claimed_rates(problem, open_ids, b)
    cost = sum(problem.site_by_id(sid).cost_units for sid in open_ids)
    avg = sum(rates.values()) / len(rates) if rates else 0.0
    return DeploymentPlan(status=status, opened_sites=open_ids,
                          allocations=b, total_cost_units=cost,
                          claimed_rates_bps=rates,
                          average_claimed_rate_bps=avg, report=report)


# ---------------------------------------------------------------------------
# heuristics

def _coverage_repair(problem, open_set):
    """Open further sites until every node has a feasible link to an open site."""
    open_set = set(open_set)
    links_by_site = {}
    for l in problem.links:
        links_by_site.setdefault(l.site_id, set()).add(l.node_id)
    while True:
        covered = set()
        for sid in open_set:
            covered |= links_by_site.get(sid, set())
        unserved = [n.id for n in problem.nodes if n.id not in covered]
        if not unserved:
            return open_set
        best = None
        for s in problem.sites:
            if s.id in open_set:
                continue
            gain = len(links_by_site.get(s.id, set()) & set(unserved))
            if gain == 0:
                continue
            key = (-gain, s.cost_units, s.id)
            if best is None or key < best[0]:
                best = (key, s.id)
        if best is None:
            return None
        open_set.add(best[1])


def _rounding_incumbent(problem, y):
    """Round y >= 0.5 up, repair coverage, then force bandwidth feasibility."""
    open_set = {sid for sid, v in y.items() if v >= 0.5}
    open_set = _coverage_repair(problem, open_set)
    if open_set is None:
        return None
    remaining = [s for s in problem.sites if s.id not in open_set]
    remaining.sort(key=lambda s: (s.cost_units, s.id))
    while True:
        if _allocation_lp(problem, open_set) is not None:
            cost = sum(problem.site_by_id(sid).cost_units for sid in open_set)
            if problem.budget_units is not None and cost > problem.budget_units:
                return None
            return cost, tuple(sorted(open_set))
        if not remaining:
            return None
        open_set.add(remaining.pop(0).id)


def greedy_plan(problem) -> DeploymentPlan:
    """Open the site with the best cost per unit of newly-servable demand.

    Baseline and incumbent seed; never the final answer when branch and bound
    succeeds.
    """
    se = {(l.node_id, l.site_id): l.spectral_efficiency_bps_hz
          for l in problem.links}
    remaining = {n.id: n.required_rate_bps for n in problem.nodes}
    open_ids = []
    allocations = {}
    B = problem.bandwidth_hz
    while any(r > 1e-9 for r in remaining.values()):
        best = None
        for s in problem.sites:
            if s.id in open_ids:
                continue
            # fill this site's bandwidth against remaining demand, best se first
            order = sorted(
                ((se[(nid, s.id)], nid) for nid in remaining
                 if remaining[nid] > 1e-9 and (nid, s.id) in se),
                key=lambda t: (-t[0], t[1]))
            cap = B
            delivered = 0.0
            fills = []
            for eff, nid in order:
                if cap <= 0:
                    break
                bw = min(cap, remaining[nid] / eff)
                fills.append((nid, bw))
                delivered += bw * eff
                cap -= bw
            if delivered <= 0:
                continue
            key = (s.cost_units / delivered, s.id)
            if best is None or key < best[0]:
                best = (key, s.id, fills)
        if best is None:
            return DeploymentPlan(status=SolveStatus.INFEASIBLE)
        _, sid, fills = best
        open_ids.append(sid)
        for nid, bw in fills:
            allocations[(nid, sid)] = allocations.get((nid, sid), 0.0) + bw
            remaining[nid] = max(0.0, remaining[nid] - bw * se[(nid, sid)])
    open_ids = sorted(open_ids)
    cost = sum(problem.site_by_id(sid).cost_units for sid in open_ids)
    if problem.budget_units is not None and cost > problem.budget_units:
        return DeploymentPlan(status=SolveStatus.INFEASIBLE)
    b = _polish_allocations(problem, open_ids, allocations)
    rates = claimed_rates(problem, open_ids, b)
    avg = sum(rates.values()) / len(rates) if rates else 0.0
    return DeploymentPlan(status=SolveStatus.FEASIBLE, opened_sites=open_ids,
                          allocations=b, total_cost_units=cost,
                          claimed_rates_bps=rates, average_claimed_rate_bps=avg)


# ---------------------------------------------------------------------------
# exact solvers

def branch_and_bound_solve(problem, tol: float = 1e-6,
                           time_limit_s: float = 300.0):
    """Best-first branch and bound on the site binaries.

    Branches on the most fractional y (ties: lowest site id); the incumbent is
    seeded by a rounding + repair heuristic and tightened by integral LP
    solutions.  Terminates Optimal when the relative gap is <= tol.
    """
    t0 = time.monotonic()
    report = SolveReport()
    root = solve_lp_relaxation(problem)
    if root is None:
        status = SolveStatus.INFEASIBLE
        if problem.budget_units is not None:
            unbudgeted = DeploymentProblem(
                nodes=problem.nodes, sites=problem.sites, links=problem.links,
                bandwidth_hz=problem.bandwidth_hz, budget_units=None)
            if solve_lp_relaxation(unbudgeted) is not None:
                status = SolveStatus.BUDGET_INFEASIBLE
        report.wall_time_s = time.monotonic() - t0
        return DeploymentPlan(status=status, report=report), report

    root_obj, root_y, _ = root
    report.lp_lower_bound = root_obj

    incumbent = _rounding_incumbent(problem, root_y)  # (cost, open_ids) or None

    def gap(bound):
        if incumbent is None:
            return math.inf
        if incumbent[0] <= 0:
            return max(0.0, incumbent[0] - bound)
        return max(0.0, (incumbent[0] - bound) / incumbent[0])

    counter = itertools.count()
    heap = [(root_obj, next(counter), {}, root_y)]
    best_bound = root_obj
    timed_out = False

    while heap:
        bound, _, fixed, y = heapq.heappop(heap)
        best_bound = bound
        if gap(bound) <= tol:
            break
        if time.monotonic() - t0 > time_limit_s:
            timed_out = True
            break
        report.nodes_explored += 1

        frac = {sid: v for sid, v in y.items()
                if INTEGRALITY_TOL < v < 1 - INTEGRALITY_TOL}
        if not frac:
            open_ids = tuple(sorted(sid for sid, v in y.items() if v > 0.5))
            cost = sum(problem.site_by_id(sid).cost_units for sid in open_ids)
            if (incumbent is None or cost < incumbent[0] - COST_TOL
                    or (abs(cost - incumbent[0]) <= COST_TOL
                        and open_ids < incumbent[1])):
                incumbent = (cost, open_ids)
            continue

        branch_sid = min(frac, key=lambda sid: (abs(frac[sid] - 0.5), sid))
        for value in (0, 1):
            child_fixed = dict(fixed)
            child_fixed[branch_sid] = value
            child = solve_lp_relaxation(problem, child_fixed)
            if child is None:
                continue
            child_obj, child_y, _ = child
            if incumbent is not None and gap(child_obj) <= tol:
                continue
            heapq.heappush(heap, (child_obj, next(counter), child_fixed, child_y))
    else:
        best_bound = incumbent[0] if incumbent is not None else best_bound

    report.wall_time_s = time.monotonic() - t0
    report.timed_out = timed_out
    if incumbent is None:
        report.gap = math.inf
        return DeploymentPlan(status=SolveStatus.INFEASIBLE, report=report), report
    report.incumbent_cost = incumbent[0]
    report.gap = gap(best_bound)
    status = SolveStatus.FEASIBLE if timed_out and report.gap > tol else SolveStatus.OPTIMAL
    plan = _finalize_plan(problem, incumbent[1], status, report)
    return plan, report


def enumerate_exact(problem, max_sites: int = 20) -> DeploymentPlan:
    """Exhaustive oracle: try every subset of sites, cheapest feasible wins.

    Ties broken by the lexicographically smallest opened-site id set.
    """
    S = len(problem.sites)
    if S > max_sites:
        raise OptimizerError(
            f"enumerate_exact refuses instances with more than {max_sites} sites "
            f"(got {S})")
    links_by_site = {}
    for l in problem.links:
        links_by_site.setdefault(l.site_id, set()).add(l.node_id)
    all_nodes = {n.id for n in problem.nodes}

    subsets = []
    for mask in range(1 << S):
        ids = tuple(problem.sites[j].id for j in range(S) if mask >> j & 1)
        cost = sum(problem.sites[j].cost_units for j in range(S) if mask >> j & 1)
        if problem.budget_units is not None and cost > problem.budget_units:
            continue
        subsets.append((cost, ids))
    subsets.sort(key=lambda t: (t[0], t[1]))

    report = SolveReport()
    for cost, ids in subsets:
        covered = set()
        for sid in ids:
            covered |= links_by_site.get(sid, set())
        if covered != all_nodes:
            continue
        if _allocation_lp(problem, ids) is not None:
            report.incumbent_cost = cost
            report.gap = 0.0
            return _finalize_plan(problem, ids, SolveStatus.OPTIMAL, report)
    return DeploymentPlan(status=SolveStatus.INFEASIBLE, report=report)


# ---------------------------------------------------------------------------
# plan serialization

def plan_to_dict(plan: DeploymentPlan, sites_by_id: dict) -> dict:
    opened = []
    for sid in plan.opened_sites:
        s = sites_by_id[sid]
        opened.append({"id": s.id, "kind": s.kind.value,
                       "lat": s.point.lat, "lon": s.point.lon,
                       "alt_m": s.point.alt_m, "cost": s.cost_units})
    return {
        "status": plan.status.value,
        "opened_sites": opened,
        "allocations": [
            {"node_id": ni, "site_id": sj, "bandwidth_hz": bw}
            for (ni, sj), bw in sorted(plan.allocations.items())],
        "total_cost_units": plan.total_cost_units,
        "claimed_rates_bps": {str(nid): r
                              for nid, r in sorted(plan.claimed_rates_bps.items())},
        "average_claimed_rate_bps": plan.average_claimed_rate_bps,
        "report": {
            "lp_bound": plan.report.lp_lower_bound,
            "gap": plan.report.gap,
            "nodes_explored": plan.report.nodes_explored,
            "wall_time_s": plan.report.wall_time_s,
        },
    }


def write_plan_json(plan: DeploymentPlan, sites, path) -> None:
    sites_by_id = {s.id: s for s in sites}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(plan_to_dict(plan, sites_by_id), fh, indent=2)
        fh.write("\n")
