import json
import math
import random

import pytest

from netdeploy.geodata import (CandidateSite, DemandNode, GeoGrid, GeoPoint,
                               Region, SiteKind, write_grid)
from netdeploy.optimizer import formulate
from netdeploy.propagation import RadioConfig, build_link_matrix


def make_grid(values2d, xll=0.0, yll=0.0, cellsize=1.0, nodata=-9999.0):
    nrows = len(values2d)
    ncols = len(values2d[0])
    flat = tuple(v for row in values2d for v in row)
    return GeoGrid(ncols=ncols, nrows=nrows, xllcorner=xll, yllcorner=yll,
                   cellsize=cellsize, nodata=nodata, values=flat)


def flat_grid(n, xll, yll, cellsize, value=0.0):
    return make_grid([[value] * n for _ in range(n)],
                     xll=xll, yll=yll, cellsize=cellsize)


@pytest.fixture
def flat_terrain():
    # 0.5 x 0.5 degree window around (21.25, 43.75), all at sea level
    return flat_grid(50, xll=43.5, yll=21.0, cellsize=0.01)


def random_problem(seed, max_nodes=8, max_sites=10, bandwidth_hz=1e7,
                   budget=None):
    """Random small deployment instance over flat terrain near 21N 43.5E."""
    rng = random.Random(seed)
    terrain = flat_grid(30, xll=43.4, yll=20.9, cellsize=0.02)
    region = Region(lat_min=21.0, lat_max=21.2, lon_min=43.5, lon_max=43.7)

    n_nodes = rng.randint(3, max_nodes)
    n_sites = rng.randint(2, max_sites)
    nodes = []
    for i in range(n_nodes):
        lat = rng.uniform(region.lat_min, region.lat_max)
        lon = rng.uniform(region.lon_min, region.lon_max)
        rate = rng.uniform(2e6, 15e6)
        nodes.append(DemandNode(id=i, point=GeoPoint(lat, lon, 0.0),
                                users=rng.randint(1, 200),
                                required_rate_bps=rate))
    sites = []
    for j in range(n_sites):
        lat = rng.uniform(region.lat_min, region.lat_max)
        lon = rng.uniform(region.lon_min, region.lon_max)
        if rng.random() < 0.25:
            kind, alt, cost = SiteKind.HAP, 20_000.0, rng.choice([1000, 1200, 1500])
        else:
            kind, alt, cost = SiteKind.TBS, 30.0, rng.choice([400, 600, 800])
        sites.append(CandidateSite(id=j, point=GeoPoint(lat, lon, alt),
                                   kind=kind, cost_units=float(cost),
                                   tx_power_dbm=43.0103))
    cfg = RadioConfig(frequency_hz=5e9, bandwidth_hz=bandwidth_hz,
                      tx_power_dbm=43.0103)
    links = build_link_matrix(nodes, sites, terrain, cfg)
    return formulate(nodes, sites, links, bandwidth_hz, budget_units=budget)


def write_synthetic_scenario(tmp_path, *, terrain_values=None, pop_values=None,
                             towers=None, extra=None):
    """Flat 50x50 synthetic scenario over a 0.1 degree window; returns its path."""
    n = 50
    cellsize = 0.002
    xll, yll = 43.5, 21.0
    if terrain_values is None:
        terrain_values = [[100.0] * n for _ in range(n)]
    if pop_values is None:
        # two population clusters
        pop_values = [[0.0] * n for _ in range(n)]
        for r in range(8, 16):
            for c in range(8, 16):
                pop_values[r][c] = 40.0
        for r in range(32, 42):
            for c in range(30, 44):
                pop_values[r][c] = 25.0
    terrain = make_grid(terrain_values, xll=xll, yll=yll, cellsize=cellsize)
    pop = make_grid(pop_values, xll=xll, yll=yll, cellsize=cellsize)
    write_grid(terrain, tmp_path / "terrain.asc")
    write_grid(pop, tmp_path / "pop.asc")

    towers_path = None
    if towers:
        towers_path = tmp_path / "towers.csv"
        with open(towers_path, "w", encoding="utf-8") as fh:
            fh.write("id,lat,lon,height_m\n")
            for tid, lat, lon, h in towers:
                fh.write(f"{tid},{lat},{lon},{h}\n")

    doc = {
        "region": {"lat_min": 21.0, "lat_max": 21.1,
                   "lon_min": 43.5, "lon_max": 43.6},
        "frequency_hz": 5e9,
        "bandwidth_hz": 1e7,
        "tx_power_w": 20.0,
        "cost_hap": 1200.0,
        "cost_tbs": 600.0,
        "min_rate_bps": 2e6,
        "population_path": "pop.asc",
        "terrain_path": "terrain.asc",
        "site_generation": {"tbs_spacing_deg": 0.05, "hap_spacing_deg": 0.1,
                            "tbs_mast_m": 30.0, "hap_altitude_m": 20000.0},
        "demand": {"aggregation_factor": 10, "min_users": 1.0},
    }
    if towers_path:
        doc["towers_path"] = "towers.csv"
    if extra:
        doc.update(extra)
    path = tmp_path / "scenario.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
    return path


@pytest.fixture
def synthetic_scenario(tmp_path):
    return write_synthetic_scenario(tmp_path)


def write_script(tmp_path, replies, name="script.json"):
    path = tmp_path / name
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(replies, fh)
    return path


CANONICAL_SCRIPT = [
    {"content": "I will start by collecting geographic data for the region.",
     "tool_calls": [{"name": "geographic_data_collection", "arguments": {}}]},
    {"content": "Now I analyze signal propagation at 5 GHz with 10 MHz.",
     "tool_calls": [{"name": "network_analysis",
                     "arguments": {"frequency_hz": 5e9, "bandwidth_hz": 1e7}}]},
    {"content": "With the link matrix ready, I optimize the deployment.",
     "tool_calls": [{"name": "network_optimization",
                     "arguments": {"min_rate_bps": 2e6}}]},
    {"content": "The deployment plan is ready; see plan.json for details.",
     "tool_calls": None},
]
