"""Workspace pipeline steps shared by the CLI and the agent tools.

Every step reads its inputs from and writes its artifacts to a workspace
directory using the fixed layout demand.json / candidates.json / links.csv /
plan.json / verify.json.
"""

from __future__ import annotations

import json
import os

from . import geodata, optimizer, propagation, verifier
from .geodata import (CandidateSite, DemandNode, GeoPoint, Region, SiteKind,
                      extract_demand_nodes, generate_candidate_sites,
                      load_grid, load_towers)
from .scenario import ScenarioConfig

DEMAND_FILE = "demand.json"
CANDIDATES_FILE = "candidates.json"
LINKS_FILE = "links.csv"
PLAN_FILE = "plan.json"
VERIFY_FILE = "verify.json"
GEOJSON_FILE = "plan.geojson"
TRANSCRIPT_FILE = "transcript.jsonl"


class MissingArtifactError(Exception):
    def __init__(self, artifact, remedy):
        super().__init__(f"missing {artifact}; {remedy}")
        self.artifact = artifact
        self.remedy = remedy


def _path(workspace, name):
    return os.path.join(workspace, name)


def _require(workspace, name, remedy):
    p = _path(workspace, name)
    if not os.path.exists(p):
        raise MissingArtifactError(name, remedy)
    return p


# ---------------------------------------------------------------------------
# (de)serialization of node / site lists

def nodes_to_json(nodes):
    return [{"id": n.id, "lat": n.point.lat, "lon": n.point.lon,
             "alt_m": n.point.alt_m, "users": n.users,
             "required_rate_bps": n.required_rate_bps} for n in nodes]


def nodes_from_json(doc):
    return [DemandNode(id=d["id"],
                       point=GeoPoint(d["lat"], d["lon"], d["alt_m"]),
                       users=d["users"],
                       required_rate_bps=d["required_rate_bps"]) for d in doc]


def sites_to_json(sites):
    return [{"id": s.id, "lat": s.point.lat, "lon": s.point.lon,
             "alt_m": s.point.alt_m, "kind": s.kind.value,
             "cost_units": s.cost_units, "tx_power_dbm": s.tx_power_dbm,
             "from_existing_tower": s.from_existing_tower} for s in sites]


def sites_from_json(doc):
    return [CandidateSite(id=d["id"],
                          point=GeoPoint(d["lat"], d["lon"], d["alt_m"]),
                          kind=SiteKind(d["kind"]), cost_units=d["cost_units"],
                          tx_power_dbm=d["tx_power_dbm"],
                          from_existing_tower=d["from_existing_tower"])
            for d in doc]


def _write_json(path, doc):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def _read_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def load_workspace_nodes(workspace):
    return nodes_from_json(_read_json(
        _require(workspace, DEMAND_FILE, "run the demand step first")))


def load_workspace_sites(workspace):
    return sites_from_json(_read_json(
        _require(workspace, CANDIDATES_FILE, "run the demand step first")))


# ---------------------------------------------------------------------------
# steps

def run_demand(scenario: ScenarioConfig, workspace, region: Region | None = None):
    """Extract demand nodes and candidate sites; write demand/candidates JSON."""
    os.makedirs(workspace, exist_ok=True)
    region = region or scenario.region
    pop = load_grid(scenario.population_path)
    terrain = load_grid(scenario.terrain_path)
    towers = (load_towers(scenario.towers_path, region)
              if scenario.towers_path else [])
    nodes = extract_demand_nodes(
        pop, region,
        aggregation_factor=scenario.demand.aggregation_factor,
        min_users=scenario.demand.min_users,
        per_user_rate_bps=scenario.min_rate_bps,
        rate_exponent=scenario.demand.rate_exponent)
    sites = generate_candidate_sites(region, terrain, towers,
                                     scenario.site_generation)
    _write_json(_path(workspace, DEMAND_FILE), nodes_to_json(nodes))
    _write_json(_path(workspace, CANDIDATES_FILE), sites_to_json(sites))
    return nodes, sites


def run_links(scenario: ScenarioConfig, workspace):
    """Build the full link matrix from workspace demand/candidates; write CSV."""
    nodes = load_workspace_nodes(workspace)
    sites = load_workspace_sites(workspace)
    terrain = load_grid(scenario.terrain_path)
    cfg = scenario.radio_config()
    links = propagation.build_link_matrix(nodes, sites, terrain, cfg)
    propagation.write_link_csv(links, _path(workspace, LINKS_FILE))
    return links


def run_optimize(scenario: ScenarioConfig, workspace):
    """Solve the deployment MILP over workspace artifacts; write plan.json."""
    nodes = load_workspace_nodes(workspace)
    sites = load_workspace_sites(workspace)
    links = propagation.read_link_csv(
        _require(workspace, LINKS_FILE, "run the links step first"))
    try:
        problem = optimizer.formulate(nodes, sites, links, scenario.bandwidth_hz,
                                      budget_units=scenario.budget_units)
    except optimizer.ProblemInfeasibleError as exc:
        plan = optimizer.DeploymentPlan(status=exc.status)
        optimizer.write_plan_json(plan, sites, _path(workspace, PLAN_FILE))
        return plan
    plan, _ = optimizer.branch_and_bound_solve(
        problem, tol=scenario.gap_tol, time_limit_s=scenario.time_limit_s)
    optimizer.write_plan_json(plan, sites, _path(workspace, PLAN_FILE))
    return plan


def run_verify(scenario: ScenarioConfig, workspace, plan_path=None):
    """Verify a plan document against recomputed physics; write verify.json."""
    plan_path = plan_path or _require(
        workspace, PLAN_FILE, "run the optimize step first")
    plan_doc = _read_json(plan_path)
    nodes = load_workspace_nodes(workspace)
    terrain = load_grid(scenario.terrain_path)
    report = verifier.verify_plan(plan_doc, nodes, terrain,
                                  scenario.radio_config(),
                                  scenario.site_generation)
    verifier.write_report_json(report, _path(workspace, VERIFY_FILE))
    geo = verifier.plan_geojson(plan_doc, nodes, terrain,
                                scenario.site_generation, report)
    _write_json(_path(workspace, GEOJSON_FILE), geo)
    return report
