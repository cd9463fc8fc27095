"""Geographic data handling: ASCII rasters, towers, demand nodes, candidate sites."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from enum import Enum

EARTH_RADIUS_M = 6_371_000.0


class GeodataError(Exception):
    pass


class GridFormatError(GeodataError):
    """Malformed raster file (bad header, bad token, wrong value count)."""


class OutOfCoverageError(GeodataError):
    """A queried point falls outside a grid's footprint."""


class NoOverlapError(GeodataError):
    """Requested region does not intersect the grid at all."""


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float
    alt_m: float = 0.0

    def __post_init__(self):
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude {self.lat} outside [-90, 90]")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"longitude {self.lon} outside [-180, 180]")
        if not math.isfinite(self.alt_m):
            raise ValueError("altitude must be finite")


@dataclass(frozen=True)
class Region:
    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float

    def __post_init__(self):
        if not self.lat_min < self.lat_max:
            raise ValueError("lat_min must be < lat_max")
        if not self.lon_min < self.lon_max:
            raise ValueError("lon_min must be < lon_max")

    def contains(self, lat: float, lon: float) -> bool:
        return (self.lat_min <= lat <= self.lat_max
                and self.lon_min <= lon <= self.lon_max)


@dataclass(frozen=True)
class GeoGrid:
    """Uniform lat/lon raster; row 0 is the northernmost row."""
    ncols: int
    nrows: int
    xllcorner: float
    yllcorner: float
    cellsize: float
    nodata: float
    values: tuple

    def __post_init__(self):
        if self.ncols < 1 or self.nrows < 1:
            raise ValueError("grid dimensions must be positive")
        if self.cellsize <= 0:
            raise ValueError("cellsize must be > 0")
        if len(self.values) != self.ncols * self.nrows:
            raise ValueError(
                f"expected {self.ncols * self.nrows} values, got {len(self.values)}")

    def value_at(self, row: int, col: int) -> float:
        return self.values[row * self.ncols + col]

    def is_nodata(self, row: int, col: int) -> bool:
        return self.value_at(row, col) == self.nodata

    def cell_center(self, row: int, col: int) -> tuple:
        """(lat, lon) of the center of cell (row, col)."""
        lon = self.xllcorner + (col + 0.5) * self.cellsize
        lat = self.yllcorner + (self.nrows - row - 0.5) * self.cellsize
        return lat, lon

    @property
    def lat_min(self) -> float:
        return self.yllcorner

    @property
    def lat_max(self) -> float:
        return self.yllcorner + self.nrows * self.cellsize

    @property
    def lon_min(self) -> float:
        return self.xllcorner

    @property
    def lon_max(self) -> float:
        return self.xllcorner + self.ncols * self.cellsize

    def covers(self, lat: float, lon: float) -> bool:
        return (self.lat_min <= lat <= self.lat_max
                and self.lon_min <= lon <= self.lon_max)

    def elevation_at(self, lat: float, lon: float) -> float:
        """Bilinear interpolation between cell centers; nodata cells count as 0.

        Queries outside the grid footprint raise OutOfCoverageError. At the
        edges the interpolation clamps to the boundary cell centers.
        """
        if not self.covers(lat, lon):
            raise OutOfCoverageError(
                f"point ({lat}, {lon}) outside grid coverage "
                f"[{self.lat_min}, {self.lat_max}] x [{self.lon_min}, {self.lon_max}]")
        # fractional cell-center coordinates
        fc = (lon - self.xllcorner) / self.cellsize - 0.5
        fr = (self.lat_max - lat) / self.cellsize - 0.5
        c0 = min(max(int(math.floor(fc)), 0), self.ncols - 1)
        r0 = min(max(int(math.floor(fr)), 0), self.nrows - 1)
        c1 = min(c0 + 1, self.ncols - 1)
        r1 = min(r0 + 1, self.nrows - 1)
        tc = min(max(fc - c0, 0.0), 1.0)
        tr = min(max(fr - r0, 0.0), 1.0)

        def val(r, c):
            v = self.value_at(r, c)
            return 0.0 if v == self.nodata else v

        top = val(r0, c0) * (1 - tc) + val(r0, c1) * tc
        bot = val(r1, c0) * (1 - tc) + val(r1, c1) * tc
        return top * (1 - tr) + bot * tr


@dataclass(frozen=True)
class TowerRecord:
    id: str
    point: GeoPoint
    height_m: float

    def __post_init__(self):
        if self.height_m < 0:
            raise ValueError("tower height must be >= 0")


@dataclass(frozen=True)
class DemandNode:
    id: int
    point: GeoPoint
    users: int
    required_rate_bps: float

    def __post_init__(self):
        if self.users < 1:
            raise ValueError("demand node must have at least one user")
        if self.required_rate_bps <= 0:
            raise ValueError("required rate must be > 0")


class SiteKind(str, Enum):
    TBS = "TBS"
    HAP = "HAP"


@dataclass(frozen=True)
class CandidateSite:
    id: int
    point: GeoPoint
    kind: SiteKind
    cost_units: float
    tx_power_dbm: float
    from_existing_tower: bool = False

    def __post_init__(self):
        if self.cost_units < 0:
            raise ValueError("site cost must be >= 0")


@dataclass(frozen=True)
class SiteGenConfig:
    tbs_spacing_deg: float = 0.05
    hap_spacing_deg: float = 0.25
    tbs_mast_m: float = 30.0
    hap_altitude_m: float = 20_000.0
    cost_tbs: float = 600.0
    cost_hap: float = 1200.0
    tx_power_dbm: float = 43.0103
    tower_cost_multiplier: float = 1.0


# ---------------------------------------------------------------------------
# raster I/O

_HEADER_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value")


def load_grid(path) -> GeoGrid:
    """Parse an ASCII grid file (6-line header, then nrows rows, north first)."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()

    header = {}
    for i, key in enumerate(_HEADER_KEYS):
        if i >= len(lines):
            raise GridFormatError(f"{path}: line {i + 1}: missing header line '{key}'")
        parts = lines[i].split()
        if len(parts) != 2 or parts[0].lower() != key:
            raise GridFormatError(
                f"{path}: line {i + 1}: expected '{key} <value>', got {lines[i]!r}")
        try:
            header[key] = float(parts[1])
        except ValueError:
            raise GridFormatError(
                f"{path}: line {i + 1}: non-numeric value {parts[1]!r}") from None

    ncols = int(header["ncols"])
    nrows = int(header["nrows"])
    if ncols != header["ncols"] or nrows != header["nrows"] or ncols < 1 or nrows < 1:
        raise GridFormatError(f"{path}: ncols/nrows must be positive integers")

    values = []
    row_count = 0
    for lineno, line in enumerate(lines[6:], start=7):
        if not line.strip():
            continue
        tokens = line.split()
        if len(tokens) != ncols:
            raise GridFormatError(
                f"{path}: line {lineno}: value count mismatch "
                f"(expected {ncols} values, got {len(tokens)})")
        for tok in tokens:
            try:
                v = float(tok)
            except ValueError:
                raise GridFormatError(
                    f"{path}: line {lineno}: non-numeric token {tok!r}") from None
            values.append(v)
        row_count += 1
    if row_count != nrows:
        raise GridFormatError(
            f"{path}: value count mismatch (expected {nrows} rows, got {row_count})")

    return GeoGrid(ncols=ncols, nrows=nrows,
                   xllcorner=header["xllcorner"], yllcorner=header["yllcorner"],
                   cellsize=header["cellsize"], nodata=header["nodata_value"],
                   values=tuple(values))


def write_grid(grid: GeoGrid, path) -> None:
    """Write an ASCII grid; load_grid(write_grid(g)) round-trips values exactly."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"NCOLS {grid.ncols}\n")
        fh.write(f"NROWS {grid.nrows}\n")
        fh.write(f"XLLCORNER {grid.xllcorner!r}\n")
        fh.write(f"YLLCORNER {grid.yllcorner!r}\n")
        fh.write(f"CELLSIZE {grid.cellsize!r}\n")
        fh.write(f"NODATA_VALUE {grid.nodata!r}\n")
        for r in range(grid.nrows):
            row = grid.values[r * grid.ncols:(r + 1) * grid.ncols]
            fh.write(" ".join(repr(v) for v in row) + "\n")


# ---------------------------------------------------------------------------
# geometry

def haversine_distance_m(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle ground distance in meters (Earth radius 6,371,000 m)."""
    lat1, lat2 = math.radians(a.lat), math.radians(b.lat)
    dlat = lat2 - lat1
    dlon = math.radians(b.lon - a.lon)
    h = math.sin(dlat / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def slant_distance_m(a: GeoPoint, b: GeoPoint) -> float:
    ground = haversine_distance_m(a, b)
    return math.hypot(ground, b.alt_m - a.alt_m)


def _interpolate_point(a: GeoPoint, b: GeoPoint, t: float) -> tuple:
    """(lat, lon) at fraction t along the great circle from a to b (slerp)."""
    la1, lo1 = math.radians(a.lat), math.radians(a.lon)
    la2, lo2 = math.radians(b.lat), math.radians(b.lon)
    v1 = (math.cos(la1) * math.cos(lo1), math.cos(la1) * math.sin(lo1), math.sin(la1))
    v2 = (math.cos(la2) * math.cos(lo2), math.cos(la2) * math.sin(lo2), math.sin(la2))
    dot = max(-1.0, min(1.0, sum(x * y for x, y in zip(v1, v2))))
    omega = math.acos(dot)
    if omega < 1e-12:
        return a.lat, a.lon
    s1 = math.sin((1 - t) * omega) / math.sin(omega)
    s2 = math.sin(t * omega) / math.sin(omega)
    x, y, z = (s1 * p + s2 * q for p, q in zip(v1, v2))
    lat = math.degrees(math.atan2(z, math.hypot(x, y)))
    lon = math.degrees(math.atan2(y, x))
    return lat, lon


def sample_terrain_profile(terrain: GeoGrid, a: GeoPoint, b: GeoPoint,
                           step_m: float) -> list:
    """Terrain elevations along the great-circle path a->b.

    Returns [(distance_m, elevation_m), ...] with samples spaced at most
    step_m apart, endpoints included, distances strictly increasing.
    """
    if step_m <= 0:
        raise ValueError("step_m must be > 0")
    for label, p in (("start", a), ("end", b)):
        if not terrain.covers(p.lat, p.lon):
            raise OutOfCoverageError(
                f"{label} point ({p.lat}, {p.lon}) outside terrain coverage")
    total = haversine_distance_m(a, b)
    if total == 0:
        return [(0.0, terrain.elevation_at(a.lat, a.lon))]
    n = max(1, math.ceil(total / step_m))
    profile = []
    for i in range(n + 1):
        t = i / n
        lat, lon = _interpolate_point(a, b, t)
        profile.append((t * total, terrain.elevation_at(lat, lon)))
    return profile


# ---------------------------------------------------------------------------
# demand extraction and candidate generation

def extract_demand_nodes(pop: GeoGrid, region: Region, aggregation_factor: int = 1,
                         min_users: float = 1.0, per_user_rate_bps: float = 2e6,
                         rate_exponent: float = 0.0) -> list:
    """Aggregate population cells inside region into demand nodes.

    Cells whose centers fall in the region are tiled into
    aggregation_factor x aggregation_factor blocks; each block with summed
    population > min_users becomes one node at the population-weighted
    centroid.  required_rate_bps = per_user_rate_bps * users**rate_exponent
    (exponent 0 keeps a flat per-node floor).
    """
    if aggregation_factor < 1:
        raise ValueError("aggregation_factor must be >= 1")
    rows = set()
    cols = set()
    for r in range(pop.nrows):
        for c in range(pop.ncols):
            lat, lon = pop.cell_center(r, c)
            if region.contains(lat, lon):
                rows.add(r)
                cols.add(c)
    if not rows:
        raise NoOverlapError("population grid does not overlap the requested region")
    r0, r1 = min(rows), max(rows)
    c0, c1 = min(cols), max(cols)

    nodes = []
    f = aggregation_factor
    for br in range(r0, r1 + 1, f):
        for bc in range(c0, c1 + 1, f):
            total = 0.0
            wlat = 0.0
            wlon = 0.0
            for r in range(br, min(br + f, r1 + 1)):
                for c in range(bc, min(bc + f, c1 + 1)):
                    lat, lon = pop.cell_center(r, c)
                    if not region.contains(lat, lon):
                        continue
                    if pop.is_nodata(r, c):
                        continue
                    p = pop.value_at(r, c)
                    if p < 0:
                        raise GeodataError(
                            f"negative population {p} at cell ({r}, {c})")
                    total += p
                    wlat += p * lat
                    wlon += p * lon
            if total > min_users:
                users = max(1, round(total))
                rate = per_user_rate_bps * users ** rate_exponent
                nodes.append(DemandNode(
                    id=len(nodes),
                    point=GeoPoint(lat=wlat / total, lon=wlon / total, alt_m=0.0),
                    users=users, required_rate_bps=rate))
    return nodes


def _grid_positions(region: Region, spacing_deg: float) -> list:
    """Cell-centered lattice over region; at least one point per axis."""
    out = []
    nlat = max(1, math.floor((region.lat_max - region.lat_min) / spacing_deg))
    nlon = max(1, math.floor((region.lon_max - region.lon_min) / spacing_deg))
    dlat = (region.lat_max - region.lat_min) / nlat
    dlon = (region.lon_max - region.lon_min) / nlon
    for i in range(nlat):
        for j in range(nlon):
            out.append((region.lat_min + (i + 0.5) * dlat,
                        region.lon_min + (j + 0.5) * dlon))
    return out


def generate_candidate_sites(region: Region, terrain: GeoGrid,
                             towers: list, cfg: SiteGenConfig) -> list:
    """Candidate sites: tower-anchored TBS first, then TBS grid, then HAP grid."""
    sites = []
    for tw in towers:
        alt = terrain.elevation_at(tw.point.lat, tw.point.lon) + tw.height_m
        sites.append(CandidateSite(
            id=len(sites),
            point=GeoPoint(tw.point.lat, tw.point.lon, alt),
            kind=SiteKind.TBS,
            cost_units=cfg.cost_tbs * cfg.tower_cost_multiplier,
            tx_power_dbm=cfg.tx_power_dbm,
            from_existing_tower=True))
    for lat, lon in _grid_positions(region, cfg.tbs_spacing_deg):
        alt = terrain.elevation_at(lat, lon) + cfg.tbs_mast_m
        sites.append(CandidateSite(
            id=len(sites), point=GeoPoint(lat, lon, alt), kind=SiteKind.TBS,
            cost_units=cfg.cost_tbs, tx_power_dbm=cfg.tx_power_dbm))
    for lat, lon in _grid_positions(region, cfg.hap_spacing_deg):
        sites.append(CandidateSite(
            id=len(sites), point=GeoPoint(lat, lon, cfg.hap_altitude_m),
            kind=SiteKind.HAP, cost_units=cfg.cost_hap,
            tx_power_dbm=cfg.tx_power_dbm))
    return sites


def load_towers(path, region: Region) -> list:
    """Read a tower CSV (id,lat,lon,height_m) and keep towers inside region."""
    towers = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        expected = {"id", "lat", "lon", "height_m"}
        if reader.fieldnames is None or not expected.issubset(reader.fieldnames):
            raise GeodataError(
                f"{path}: tower CSV must have header id,lat,lon,height_m")
        for rownum, row in enumerate(reader, start=2):
            try:
                lat = float(row["lat"])
                lon = float(row["lon"])
                height = float(row["height_m"])
                point = GeoPoint(lat=lat, lon=lon, alt_m=0.0)
                rec = TowerRecord(id=row["id"], point=point, height_m=height)
            except (TypeError, ValueError) as exc:
                raise GeodataError(f"{path}: row {rownum}: {exc}") from None
            if region.contains(lat, lon):
                towers.append(rec)
    return towers
