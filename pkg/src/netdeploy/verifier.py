"""Independent plan verification: recompute achieved rates from physics alone."""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field

from .geodata import CandidateSite, GeoGrid, GeoPoint, SiteGenConfig, SiteKind
from .propagation import RadioConfig, link_record


class VerifierError(Exception):
    pass


@dataclass
class VerificationReport:
    per_node_rate_bps: dict = field(default_factory=dict)
    average_verified_rate_bps: float = 0.0
    coverage_fraction: float = 0.0
    total_cost_units: float = 0.0
    efficiency_bps_per_unit: float = 0.0
    violations: list = field(default_factory=list)   # (node_id, shortfall_bps)
    tbs_count: int = 0
    hap_count: int = 0

    def to_dict(self):
        return {
            "per_node_rate_bps": {str(k): v
                                  for k, v in sorted(self.per_node_rate_bps.items())},
            "average_verified_rate_bps": self.average_verified_rate_bps,
            "coverage_fraction": self.coverage_fraction,
            "total_cost_units": self.total_cost_units,
            "efficiency_bps_per_unit": self.efficiency_bps_per_unit,
            "violations": [{"node_id": n, "shortfall_bps": s}
                           for n, s in self.violations],
            "tbs_count": self.tbs_count,
            "hap_count": self.hap_count,
        }


def sites_from_plan(plan: dict, terrain: GeoGrid, site_cfg: SiteGenConfig) -> list:
    """Reconstruct opened sites from a plan document.

    Only positions and kinds are trusted; costs are recomputed from the unit
    costs and missing altitudes are rebuilt from terrain plus the standard
    mast (TBS) or platform altitude (HAP).
    """
    sites = []
    for i, entry in enumerate(plan.get("opened_sites", [])):
        try:
            kind = SiteKind(entry["kind"])
        except (KeyError, ValueError):
            raise VerifierError(
                f"opened site {i}: unknown or missing kind {entry.get('kind')!r}")
        lat, lon = float(entry["lat"]), float(entry["lon"])
        if "alt_m" in entry:
            alt = float(entry["alt_m"])
        elif kind == SiteKind.HAP:
            alt = site_cfg.hap_altitude_m
        else:
            if not terrain.covers(lat, lon):
                raise VerifierError(
                    f"opened site {i} at ({lat}, {lon}) outside terrain coverage")
            alt = terrain.elevation_at(lat, lon) + site_cfg.tbs_mast_m
        cost = site_cfg.cost_hap if kind == SiteKind.HAP else site_cfg.cost_tbs
        sites.append(CandidateSite(
            id=int(entry.get("id", i)), point=GeoPoint(lat, lon, alt),
            kind=kind, cost_units=cost, tx_power_dbm=site_cfg.tx_power_dbm))
    return sites


def verify_plan(plan: dict, nodes, terrain: GeoGrid, radio_cfg: RadioConfig,
                site_cfg: SiteGenConfig) -> VerificationReport:
    """Recompute every node's achieved rate for a plan document.

    Link physics is evaluated from scratch; claimed numbers in the plan are
    never consulted.  With allocations, rates follow the allocation plus the
    equal-split residual rule; without them (external plans), every node
    attaches to its best-se opened site and each site splits its bandwidth
    equally among attached nodes.
    """
    sites = sites_from_plan(plan, terrain, site_cfg)
    report = VerificationReport()
    report.tbs_count = sum(1 for s in sites if s.kind == SiteKind.TBS)
    report.hap_count = sum(1 for s in sites if s.kind == SiteKind.HAP)
    report.total_cost_units = sum(s.cost_units for s in sites)

    rates = {n.id: 0.0 for n in nodes}
    if sites and nodes:
        se = {}
        for n in nodes:
            for s in sites:
                rec = link_record(n, s, terrain, radio_cfg)
                se[(n.id, s.id)] = rec.spectral_efficiency_bps_hz

        B = radio_cfg.bandwidth_hz
        allocations = plan.get("allocations") or []
        if allocations:
            b = {}
            for a in allocations:
                key = (int(a["node_id"]), int(a["site_id"]))
                if key not in se:
                    raise VerifierError(
                        f"allocation references unknown pair {key}")
                b[key] = b.get(key, 0.0) + float(a["bandwidth_hz"])
            for (ni, sj), v in b.items():
                rates[ni] += v * se[(ni, sj)]
            for s in sites:
                served = sorted(ni for (ni, sj), v in b.items()
                                if sj == s.id and v > 0)
                if not served:
                    continue
                used = sum(v for (ni, sj), v in b.items() if sj == s.id)
                share = max(0.0, B - used) / len(served)
                for ni in served:
                    rates[ni] += share * se[(ni, s.id)]
        else:
            attached = {}
            for n in nodes:
                best = max(sites, key=lambda s: (se[(n.id, s.id)], -s.id))
                if se[(n.id, best.id)] > 0:
                    attached.setdefault(best.id, []).append(n.id)
            for sid, members in attached.items():
                share = B / len(members)
                for ni in members:
                    rates[ni] += share * se[(ni, sid)]

    report.per_node_rate_bps = rates
    nnodes = len(rates)
    report.average_verified_rate_bps = (sum(rates.values()) / nnodes
                                        if nnodes else 0.0)
    covered = 0
    for n in nodes:
        if rates[n.id] >= n.required_rate_bps:
            covered += 1
        else:
            report.violations.append((n.id, n.required_rate_bps - rates[n.id]))
    report.coverage_fraction = covered / nnodes if nnodes else 0.0
    report.efficiency_bps_per_unit = (
        report.average_verified_rate_bps / report.total_cost_units
        if report.total_cost_units > 0 else 0.0)
    return report


# ---------------------------------------------------------------------------
# comparison tables

COMPARISON_COLUMNS = ["label", "tbs_count", "hap_count", "claimed_rate_bps",
                      "cost_units", "verified_rate_bps", "efficiency_bps_per_unit",
                      "coverage_fraction"]


def compare_plans(entries) -> list:
    """Rows (as dicts) for a set of verified plans, best efficiency first.

    entries: iterable of (label, VerificationReport, claimed_rate_bps or None).
    """
    rows = []
    for label, report, claimed in entries:
        rows.append({
            "label": label,
            "tbs_count": report.tbs_count,
            "hap_count": report.hap_count,
            "claimed_rate_bps": claimed,
            "cost_units": report.total_cost_units,
            "verified_rate_bps": report.average_verified_rate_bps,
            "efficiency_bps_per_unit": report.efficiency_bps_per_unit,
            "coverage_fraction": report.coverage_fraction,
        })
    rows.sort(key=lambda r: -r["efficiency_bps_per_unit"])
    return rows


def comparison_csv(rows) -> str:
    out = io.StringIO()
    out.write(",".join(COMPARISON_COLUMNS) + "\n")
    for r in rows:
        out.write(",".join("" if r[c] is None else str(r[c])
                           for c in COMPARISON_COLUMNS) + "\n")
    return out.getvalue()


def comparison_text(rows) -> str:
    lines = [f"{'plan':<24}{'TBS':>5}{'HAP':>5}{'claimed Mbps':>14}"
             f"{'cost':>10}{'verified Mbps':>15}{'bps/unit':>12}"]
    for r in rows:
        claimed = ("-" if r["claimed_rate_bps"] is None
                   else f"{r['claimed_rate_bps'] / 1e6:.2f}")
        lines.append(
            f"{r['label']:<24}{r['tbs_count']:>5}{r['hap_count']:>5}"
            f"{claimed:>14}{r['cost_units']:>10.0f}"
            f"{r['verified_rate_bps'] / 1e6:>15.2f}"
            f"{r['efficiency_bps_per_unit']:>12.1f}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# GeoJSON export for external plotting

def plan_geojson(plan: dict, nodes, terrain: GeoGrid, site_cfg: SiteGenConfig,
                 report: VerificationReport | None = None) -> dict:
    features = []
    for s in sites_from_plan(plan, terrain, site_cfg):
        features.append({
            "type": "Feature",
            "geometry": {"type": "Point",
                         "coordinates": [s.point.lon, s.point.lat]},
            "properties": {"feature": "site", "id": s.id,
                           "kind": s.kind.value, "cost_units": s.cost_units},
        })
    for n in nodes:
        props = {"feature": "demand_node", "id": n.id, "users": n.users,
                 "required_rate_bps": n.required_rate_bps}
        if report is not None:
            props["verified_rate_bps"] = report.per_node_rate_bps.get(n.id, 0.0)
        features.append({
            "type": "Feature",
            "geometry": {"type": "Point",
                         "coordinates": [n.point.lon, n.point.lat]},
            "properties": props,
        })
    return {"type": "FeatureCollection", "features": features}


def write_report_json(report: VerificationReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2)
        fh.write("\n")
