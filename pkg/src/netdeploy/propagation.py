"""Link physics: free-space loss, knife-edge diffraction, SNR, spectral efficiency."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

from .geodata import (CandidateSite, DemandNode, GeoGrid, GeoPoint, SiteKind,
                      haversine_distance_m, sample_terrain_profile)

SPEED_OF_LIGHT = 299_792_458.0
EFFECTIVE_EARTH_RADIUS_M = (4.0 / 3.0) * 6_371_000.0
RX_HEIGHT_ABOVE_GROUND_M = 1.5


@dataclass(frozen=True)
class RadioConfig:
    frequency_hz: float
    bandwidth_hz: float
    tx_power_dbm: float
    tx_gain_dbi: float = 0.0
    rx_gain_dbi: float = 0.0
    noise_figure_db: float = 7.0
    atmos_margin_db_hap: float = 1.0
    atmos_margin_db_tbs: float = 0.0
    min_snr_db: float = -5.0
    profile_step_m: float = 90.0

    def __post_init__(self):
        if self.frequency_hz <= 0:
            raise ValueError("frequency must be > 0")
        if self.bandwidth_hz <= 0:
            raise ValueError("bandwidth must be > 0")
        if self.atmos_margin_db_hap < 0 or self.atmos_margin_db_tbs < 0:
            raise ValueError("margins must be >= 0")


@dataclass(frozen=True)
class LinkRecord:
    node_id: int
    site_id: int
    distance_m: float
    path_loss_db: float
    snr_db: float
    spectral_efficiency_bps_hz: float
    feasible: bool


def watts_to_dbm(p: float) -> float:
    if p <= 0:
        raise ValueError("power must be > 0 W")
    return 10.0 * math.log10(p * 1000.0)


def free_space_path_loss_db(distance_m: float, frequency_hz: float) -> float:
    """FSPL = 20 log10(d_km) + 20 log10(f_GHz) + 92.45; distance clamped to 1 m."""
    if frequency_hz <= 0:
        raise ValueError("frequency must be > 0")
    d_km = max(distance_m, 1.0) / 1000.0
    f_ghz = frequency_hz / 1e9
    return 20.0 * math.log10(d_km) + 20.0 * math.log10(f_ghz) + 92.45


def knife_edge_loss_db(v: float) -> float:
    """ITU-R P.526 single-edge approximation J(v); 0 below v = -0.78."""
    if not math.isfinite(v):
        if v == -math.inf:
            return 0.0
        raise ValueError("v must be finite or -inf")
    if v <= -0.78:
        return 0.0
    return 6.9 + 20.0 * math.log10(math.sqrt((v - 0.1) ** 2 + 1.0) + v - 0.1)


def dominant_edge_parameter(profile, tx_alt_m: float, rx_alt_m: float,
                            frequency_hz: float) -> float:
    """Maximum Fresnel-Kirchhoff parameter over interior profile samples.

    Clearance of each interior sample is measured against the straight line
    between the antenna altitudes, with an effective-Earth-curvature bulge
    d1*d2 / (2 * k * R_e), k = 4/3.  Returns -inf when the profile has no
    interior samples (nothing can obstruct).
    """
    if len(profile) < 2:
        raise ValueError("profile needs at least 2 samples")
    d_total = profile[-1][0] - profile[0][0]
    prev = profile[0][0]
    for dist, _ in profile[1:]:
        if dist <= prev:
            raise ValueError("profile distances must be strictly increasing")
        prev = dist
    if d_total <= 0:
        raise ValueError("profile must span a positive distance")
    lam = SPEED_OF_LIGHT / frequency_hz
    v_max = -math.inf
    d0 = profile[0][0]
    for dist, elev in profile[1:-1]:
        d1 = dist - d0
        d2 = d_total - d1
        bulge = d1 * d2 / (2.0 * EFFECTIVE_EARTH_RADIUS_M)
        los = tx_alt_m + (rx_alt_m - tx_alt_m) * d1 / d_total
        h = elev + bulge - los
        v = h * math.sqrt(2.0 * d_total / (lam * d1 * d2))
        if v > v_max:
            v_max = v
    return v_max


def link_loss_between(a: GeoPoint, b: GeoPoint, kind: SiteKind, terrain: GeoGrid,
                      cfg: RadioConfig) -> float:
    """Loss in dB between two antennas; symmetric in a and b by construction.

    The terrain profile is always sampled in a canonical endpoint order so
    exchanging a and b reproduces bit-identical arithmetic (reciprocity).
    """
    ground = haversine_distance_m(a, b)
    slant = math.hypot(ground, b.alt_m - a.alt_m)
    loss = free_space_path_loss_db(slant, cfg.frequency_hz)
    if kind == SiteKind.HAP:
        return loss + cfg.atmos_margin_db_hap
    lo, hi = sorted((a, b), key=lambda p: (p.lat, p.lon, p.alt_m))
    profile = sample_terrain_profile(terrain, lo, hi, cfg.profile_step_m)
    if len(profile) > 2:
        v = dominant_edge_parameter(profile, lo.alt_m, hi.alt_m, cfg.frequency_hz)
        loss += knife_edge_loss_db(v)
    return loss + cfg.atmos_margin_db_tbs


def path_loss_db(node: DemandNode, site: CandidateSite, terrain: GeoGrid,
                 cfg: RadioConfig) -> float:
    """Total link loss node<->site: FSPL on the slant path plus, for TBS links,
    the dominant knife-edge diffraction loss, plus the per-kind atmospheric margin.

    The demand-node antenna sits at terrain + 1.5 m; HAP links skip terrain
    diffraction (platform far above all terrain).
    """
    rx_alt = terrain.elevation_at(node.point.lat, node.point.lon) + RX_HEIGHT_ABOVE_GROUND_M
    rx = GeoPoint(node.point.lat, node.point.lon, rx_alt)
    return link_loss_between(rx, site.point, site.kind, terrain, cfg)


def noise_power_dbm(bandwidth_hz: float, noise_figure_db: float) -> float:
    if bandwidth_hz <= 0:
        raise ValueError("bandwidth must be > 0")
    return -174.0 + 10.0 * math.log10(bandwidth_hz) + noise_figure_db


def spectral_efficiency_bps_hz(snr_db: float) -> float:
    return math.log2(1.0 + 10.0 ** (snr_db / 10.0))


def link_record(node: DemandNode, site: CandidateSite, terrain: GeoGrid,
                cfg: RadioConfig) -> LinkRecord:
    rx_alt = terrain.elevation_at(node.point.lat, node.point.lon) + RX_HEIGHT_ABOVE_GROUND_M
    ground = haversine_distance_m(
        GeoPoint(node.point.lat, node.point.lon, rx_alt), site.point)
    slant = math.hypot(ground, site.point.alt_m - rx_alt)
    loss = path_loss_db(node, site, terrain, cfg)
    noise = noise_power_dbm(cfg.bandwidth_hz, cfg.noise_figure_db)
    snr = site.tx_power_dbm + cfg.tx_gain_dbi + cfg.rx_gain_dbi - loss - noise
    feasible = snr >= cfg.min_snr_db
    se = spectral_efficiency_bps_hz(snr) if feasible else 0.0
    return LinkRecord(node_id=node.id, site_id=site.id, distance_m=slant,
                      path_loss_db=loss, snr_db=snr,
                      spectral_efficiency_bps_hz=se, feasible=feasible)


def build_link_matrix(nodes, sites, terrain: GeoGrid, cfg: RadioConfig) -> list:
    """One LinkRecord per (node, site) pair, node-major then site-minor order."""
    if not nodes or not sites:
        raise ValueError("nodes and sites must be non-empty")
    links = []
    for node in nodes:
        for site in sites:
            try:
                links.append(link_record(node, site, terrain, cfg))
            except Exception as exc:
                raise type(exc)(
                    f"link (node {node.id}, site {site.id}): {exc}") from exc
    return links


LINK_CSV_HEADER = ["node_id", "site_id", "distance_m", "path_loss_db",
                   "snr_db", "se_bps_hz", "feasible"]


def write_link_csv(links, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LINK_CSV_HEADER)
        for l in links:
            writer.writerow([l.node_id, l.site_id, repr(l.distance_m),
                             repr(l.path_loss_db), repr(l.snr_db),
                             repr(l.spectral_efficiency_bps_hz),
                             int(l.feasible)])


def read_link_csv(path) -> list:
    links = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            links.append(LinkRecord(
                node_id=int(row["node_id"]), site_id=int(row["site_id"]),
                distance_m=float(row["distance_m"]),
                path_loss_db=float(row["path_loss_db"]),
                snr_db=float(row["snr_db"]),
                spectral_efficiency_bps_hz=float(row["se_bps_hz"]),
                feasible=bool(int(row["feasible"]))))
    return links
