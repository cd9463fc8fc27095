"""Scenario JSON: one document describing region, radio, costs, and data paths."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

from .geodata import Region, SiteGenConfig
from .propagation import RadioConfig, watts_to_dbm


class ScenarioError(Exception):
    pass


@dataclass
class DemandConfig:
    aggregation_factor: int = 1
    min_users: float = 1.0
    rate_exponent: float = 0.0


@dataclass
class AgentSettings:
    max_steps: int = 20
    endpoint_url: str | None = None
    model_name: str | None = None
    api_key_env_var: str = "NETDEPLOY_API_KEY"
    temperature: float = 0.0
    timeout_s: float = 120.0


@dataclass
class ScenarioConfig:
    region: Region
    frequency_hz: float
    bandwidth_hz: float
    tx_power_w: float
    cost_hap: float
    cost_tbs: float
    min_rate_bps: float
    population_path: str
    terrain_path: str
    towers_path: str | None = None
    budget_units: float | None = None
    site_generation: SiteGenConfig = field(default_factory=SiteGenConfig)
    demand: DemandConfig = field(default_factory=DemandConfig)
    gap_tol: float = 1e-6
    time_limit_s: float = 300.0
    radio_overrides: dict = field(default_factory=dict)
    agent: AgentSettings = field(default_factory=AgentSettings)

    def radio_config(self) -> RadioConfig:
        return RadioConfig(frequency_hz=self.frequency_hz,
                           bandwidth_hz=self.bandwidth_hz,
                           tx_power_dbm=watts_to_dbm(self.tx_power_w),
                           **self.radio_overrides)


_REQUIRED = ["region", "frequency_hz", "bandwidth_hz", "tx_power_w",
             "cost_hap", "cost_tbs", "min_rate_bps",
             "population_path", "terrain_path"]

_RADIO_KEYS = {"tx_gain_dbi", "rx_gain_dbi", "noise_figure_db",
               "atmos_margin_db_hap", "atmos_margin_db_tbs",
               "min_snr_db", "profile_step_m"}


def load_scenario(path) -> ScenarioConfig:
    """Parse and validate a scenario file; referenced data files must exist."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: invalid JSON: {exc}") from None

    missing = [k for k in _REQUIRED if k not in doc]
    if missing:
        raise ScenarioError(f"{path}: missing required keys {missing}")

    for key in ("frequency_hz", "bandwidth_hz", "tx_power_w", "min_rate_bps"):
        if not isinstance(doc[key], (int, float)) or doc[key] <= 0:
            raise ScenarioError(f"{path}: {key} must be a positive number")
    for key in ("cost_hap", "cost_tbs"):
        if not isinstance(doc[key], (int, float)) or doc[key] < 0:
            raise ScenarioError(f"{path}: {key} must be a non-negative number")

    try:
        region = Region(**doc["region"])
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{path}: bad region: {exc}") from None

    base = os.path.dirname(os.path.abspath(path))

    def resolve(p):
        return p if os.path.isabs(p) else os.path.join(base, p)

    pop = resolve(doc["population_path"])
    terr = resolve(doc["terrain_path"])
    towers = resolve(doc["towers_path"]) if doc.get("towers_path") else None
    for label, p in (("population_path", pop), ("terrain_path", terr),
                     ("towers_path", towers)):
        if p is not None and not os.path.exists(p):
            raise ScenarioError(f"{path}: {label} does not exist: {p}")

    sg = dict(doc.get("site_generation", {}))
    sg.setdefault("cost_tbs", doc["cost_tbs"])
    sg.setdefault("cost_hap", doc["cost_hap"])
    sg.setdefault("tx_power_dbm", watts_to_dbm(doc["tx_power_w"]))
    try:
        site_generation = SiteGenConfig(**sg)
    except TypeError as exc:
        raise ScenarioError(f"{path}: bad site_generation block: {exc}") from None

    radio_overrides = {k: v for k, v in doc.get("radio", {}).items()}
    unknown = set(radio_overrides) - _RADIO_KEYS
    if unknown:
        raise ScenarioError(f"{path}: unknown radio keys {sorted(unknown)}")

    try:
        demand = DemandConfig(**doc.get("demand", {}))
        agent = AgentSettings(**doc.get("agent", {}))
    except TypeError as exc:
        raise ScenarioError(f"{path}: bad demand/agent block: {exc}") from None

    return ScenarioConfig(
        region=region,
        frequency_hz=float(doc["frequency_hz"]),
        bandwidth_hz=float(doc["bandwidth_hz"]),
        tx_power_w=float(doc["tx_power_w"]),
        cost_hap=float(doc["cost_hap"]),
        cost_tbs=float(doc["cost_tbs"]),
        min_rate_bps=float(doc["min_rate_bps"]),
        population_path=pop,
        terrain_path=terr,
        towers_path=towers,
        budget_units=doc.get("budget_units"),
        site_generation=site_generation,
        demand=demand,
        gap_tol=float(doc.get("gap_tol", 1e-6)),
        time_limit_s=float(doc.get("time_limit_s", 300.0)),
        radio_overrides=radio_overrides,
        agent=agent,
    )
