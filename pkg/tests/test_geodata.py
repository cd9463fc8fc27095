import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from netdeploy.geodata import (EARTH_RADIUS_M, GeoGrid, GeoPoint,
                               GridFormatError, GeodataError, NoOverlapError,
                               OutOfCoverageError, Region, SiteGenConfig,
                               SiteKind, TowerRecord, extract_demand_nodes,
                               generate_candidate_sites, haversine_distance_m,
                               load_grid, load_towers, sample_terrain_profile,
                               write_grid)

from conftest import flat_grid, make_grid


def grid_file(tmp_path, text, name="g.asc"):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestLoadGrid:
    def test_small_grid_roundtrips_values(self, tmp_path):
        p = grid_file(tmp_path, "NCOLS 2\nNROWS 2\nXLLCORNER 0\nYLLCORNER 0\n"
                                "CELLSIZE 1\nNODATA_VALUE -9999\n1 2\n3 4\n")
        g = load_grid(p)
        assert (g.ncols, g.nrows) == (2, 2)
        assert g.values == (1.0, 2.0, 3.0, 4.0)

    def test_header_keys_case_insensitive(self, tmp_path):
        p = grid_file(tmp_path, "ncols 1\nnrows 1\nxllcorner 5\nYllCorner 2\n"
                                "cellsize 0.5\nnodata_value -1\n7\n")
        g = load_grid(p)
        assert g.xllcorner == 5 and g.cellsize == 0.5

    def test_value_count_mismatch_reports_line(self, tmp_path):
        p = grid_file(tmp_path, "NCOLS 3\nNROWS 2\nXLLCORNER 0\nYLLCORNER 0\n"
                                "CELLSIZE 1\nNODATA_VALUE -9999\n1 2\n3 4\n")
        with pytest.raises(GridFormatError, match="line 7.*value count mismatch"):
            load_grid(p)

    def test_non_numeric_token_reports_line(self, tmp_path):
        p = grid_file(tmp_path, "NCOLS 2\nNROWS 1\nXLLCORNER 0\nYLLCORNER 0\n"
                                "CELLSIZE 1\nNODATA_VALUE -9999\n1 abc\n")
        with pytest.raises(GridFormatError, match="line 7.*non-numeric"):
            load_grid(p)

    def test_malformed_header_reports_line(self, tmp_path):
        p = grid_file(tmp_path, "NCOLS 2\nROWS 2\nXLLCORNER 0\nYLLCORNER 0\n"
                                "CELLSIZE 1\nNODATA_VALUE -9999\n1 2\n3 4\n")
        with pytest.raises(GridFormatError, match="line 2"):
            load_grid(p)

    def test_nodata_cell_flagged(self, tmp_path):
        p = grid_file(tmp_path, "NCOLS 2\nNROWS 1\nXLLCORNER 0\nYLLCORNER 0\n"
                                "CELLSIZE 1\nNODATA_VALUE -9999\n-9999 3\n")
        g = load_grid(p)
        assert g.is_nodata(0, 0) and not g.is_nodata(0, 1)

    @given(st.lists(st.floats(min_value=-1e6, max_value=1e6,
                              allow_nan=False, allow_infinity=False),
                    min_size=4, max_size=4))
    @settings(max_examples=30)
    def test_write_load_roundtrip(self, values):
        import tempfile, os
        g = make_grid([values[:2], values[2:]], xll=10.0, yll=20.0, cellsize=0.5)
        fd, path = tempfile.mkstemp(suffix=".asc")
        os.close(fd)
        try:
            write_grid(g, path)
            g2 = load_grid(path)
            assert g2.values == g.values
            assert (g2.xllcorner, g2.yllcorner, g2.cellsize) == (10.0, 20.0, 0.5)
        finally:
            os.unlink(path)


class TestHaversine:
    def test_identical_points(self):
        p = GeoPoint(12.5, 30.0, 0.0)
        assert haversine_distance_m(p, p) == 0.0

    def test_one_degree_longitude_at_equator(self):
        d = haversine_distance_m(GeoPoint(0, 0), GeoPoint(0, 1))
        assert d == pytest.approx(EARTH_RADIUS_M * math.pi / 180, abs=1.0)
        assert d == pytest.approx(111194.9, abs=1.0)

    def test_antipodal_half_circumference(self):
        d = haversine_distance_m(GeoPoint(0, 0), GeoPoint(0, 180))
        assert d == pytest.approx(math.pi * EARTH_RADIUS_M, abs=10.0)

    @given(st.floats(-89, 89), st.floats(-179, 179),
           st.floats(-89, 89), st.floats(-179, 179),
           st.floats(-89, 89), st.floats(-179, 179))
    @settings(max_examples=80)
    def test_symmetry_and_triangle_inequality(self, la1, lo1, la2, lo2, la3, lo3):
        a, b, c = GeoPoint(la1, lo1), GeoPoint(la2, lo2), GeoPoint(la3, lo3)
        assert haversine_distance_m(a, b) == haversine_distance_m(b, a)
        dab = haversine_distance_m(a, b)
        dbc = haversine_distance_m(b, c)
        dac = haversine_distance_m(a, c)
        assert dac <= (dab + dbc) * (1 + 1e-6) + 1e-6


class TestExtractDemand:
    def region(self):
        return Region(lat_min=0.0, lat_max=4.0, lon_min=0.0, lon_max=4.0)

    def test_all_zero_population(self):
        pop = flat_grid(4, xll=0, yll=0, cellsize=1, value=0.0)
        assert extract_demand_nodes(pop, self.region(), min_users=0) == []

    def test_single_cell(self):
        pop = make_grid([[0.0, 0.0], [10.0, 0.0]], xll=0, yll=0, cellsize=1)
        nodes = extract_demand_nodes(pop, self.region(), min_users=0,
                                     per_user_rate_bps=2e6)
        assert len(nodes) == 1
        n = nodes[0]
        assert n.users == 10
        assert (n.point.lat, n.point.lon) == (0.5, 0.5)
        assert n.required_rate_bps == 2e6

    def test_weighted_centroid_2x2_block(self):
        # pops laid out north-first: row0 = {0, 0}, row1 = {4, 12}
        pop = make_grid([[0.0, 0.0], [4.0, 12.0]], xll=0, yll=0, cellsize=1)
        nodes = extract_demand_nodes(pop, self.region(), aggregation_factor=2,
                                     min_users=0)
        assert len(nodes) == 1
        n = nodes[0]
        assert n.users == 16
        # both populated cells sit at lat 0.5; lon = (4*0.5 + 12*1.5)/16
        assert n.point.lat == pytest.approx(0.5)
        assert n.point.lon == pytest.approx((4 * 0.5 + 12 * 1.5) / 16)

    def test_no_overlap_is_distinct_error(self):
        pop = flat_grid(2, xll=100, yll=50, cellsize=1, value=5.0)
        with pytest.raises(NoOverlapError):
            extract_demand_nodes(pop, self.region())

    def test_nodata_cells_excluded(self):
        pop = make_grid([[-9999.0, 8.0]], xll=0, yll=0, cellsize=1)
        nodes = extract_demand_nodes(pop, self.region(), aggregation_factor=2,
                                     min_users=0)
        assert len(nodes) == 1 and nodes[0].users == 8

    def test_min_users_cutoff_returns_empty_list(self):
        pop = make_grid([[3.0]], xll=0, yll=0, cellsize=1)
        assert extract_demand_nodes(pop, self.region(), min_users=5) == []

    def test_rate_exponent(self):
        pop = make_grid([[9.0]], xll=0, yll=0, cellsize=1)
        nodes = extract_demand_nodes(pop, self.region(), min_users=0,
                                     per_user_rate_bps=2e6, rate_exponent=1.0)
        assert nodes[0].required_rate_bps == pytest.approx(18e6)

    @given(st.lists(st.floats(min_value=0, max_value=500), min_size=16,
                    max_size=16),
           st.sampled_from([1, 2, 4]))
    @settings(max_examples=40)
    def test_demand_conservation(self, pops, factor):
        rows = [pops[i * 4:(i + 1) * 4] for i in range(4)]
        pop = make_grid(rows, xll=0, yll=0, cellsize=1)
        nodes = extract_demand_nodes(pop, self.region(),
                                     aggregation_factor=factor, min_users=0)
        total = sum(pops)
        got = sum(n.users for n in nodes)
        assert abs(got - total) <= max(1, len(nodes))

    def test_ids_dense(self):
        pop = flat_grid(4, xll=0, yll=0, cellsize=1, value=7.0)
        nodes = extract_demand_nodes(pop, self.region(), aggregation_factor=2,
                                     min_users=0)
        assert [n.id for n in nodes] == list(range(len(nodes)))


class TestCandidateSites:
    def test_grid_counts(self):
        region = Region(lat_min=0.0, lat_max=0.5, lon_min=0.0, lon_max=0.5)
        terrain = flat_grid(10, xll=-0.1, yll=-0.1, cellsize=0.1, value=50.0)
        cfg = SiteGenConfig(tbs_spacing_deg=0.25, hap_spacing_deg=0.25)
        sites = generate_candidate_sites(region, terrain, [], cfg)
        tbs = [s for s in sites if s.kind == SiteKind.TBS]
        hap = [s for s in sites if s.kind == SiteKind.HAP]
        assert len(tbs) == 4
        assert len(hap) == 4

    def test_spacing_larger_than_extent_still_one_candidate(self):
        region = Region(lat_min=0.0, lat_max=0.1, lon_min=0.0, lon_max=0.1)
        terrain = flat_grid(5, xll=-0.1, yll=-0.1, cellsize=0.1)
        cfg = SiteGenConfig(tbs_spacing_deg=5.0, hap_spacing_deg=5.0)
        sites = generate_candidate_sites(region, terrain, [], cfg)
        tbs = [s for s in sites if s.kind == SiteKind.TBS]
        assert len(tbs) == 1
        assert tbs[0].point.lat == pytest.approx(0.05)
        assert tbs[0].point.lon == pytest.approx(0.05)

    def test_tower_candidates_come_first(self):
        region = Region(lat_min=0.0, lat_max=0.5, lon_min=0.0, lon_max=0.5)
        terrain = flat_grid(10, xll=-0.1, yll=-0.1, cellsize=0.1, value=20.0)
        tower = TowerRecord(id="t1", point=GeoPoint(0.25, 0.25), height_m=45.0)
        cfg = SiteGenConfig(tbs_spacing_deg=0.25, hap_spacing_deg=0.25)
        sites = generate_candidate_sites(region, terrain, [tower], cfg)
        assert sites[0].from_existing_tower
        assert sites[0].point.alt_m == pytest.approx(20.0 + 45.0)
        assert [s.id for s in sites] == list(range(len(sites)))

    def test_hap_altitude_from_config(self):
        region = Region(lat_min=0.0, lat_max=0.5, lon_min=0.0, lon_max=0.5)
        terrain = flat_grid(10, xll=-0.1, yll=-0.1, cellsize=0.1)
        cfg = SiteGenConfig(hap_altitude_m=20000.0)
        sites = generate_candidate_sites(region, terrain, [], cfg)
        assert all(s.point.alt_m == 20000.0
                   for s in sites if s.kind == SiteKind.HAP)

    def test_determinism(self):
        region = Region(lat_min=0.0, lat_max=0.5, lon_min=0.0, lon_max=0.5)
        terrain = flat_grid(10, xll=-0.1, yll=-0.1, cellsize=0.1, value=3.0)
        cfg = SiteGenConfig()
        a = generate_candidate_sites(region, terrain, [], cfg)
        b = generate_candidate_sites(region, terrain, [], cfg)
        assert a == b


class TestLoadTowers:
    def region(self):
        return Region(lat_min=0.0, lat_max=1.0, lon_min=0.0, lon_max=1.0)

    def tower_file(self, tmp_path, rows):
        p = tmp_path / "towers.csv"
        p.write_text("id,lat,lon,height_m\n" + "".join(r + "\n" for r in rows))
        return p

    def test_empty_file(self, tmp_path):
        assert load_towers(self.tower_file(tmp_path, []), self.region()) == []

    def test_region_filter(self, tmp_path):
        p = self.tower_file(tmp_path, ["a,0.5,0.5,30", "b,0.6,0.4,25",
                                       "c,5.0,5.0,40"])
        towers = load_towers(p, self.region())
        assert [t.id for t in towers] == ["a", "b"]

    def test_invalid_latitude(self, tmp_path):
        p = self.tower_file(tmp_path, ["a,91,0.5,30"])
        with pytest.raises(GeodataError, match="row 2"):
            load_towers(p, self.region())

    def test_malformed_row(self, tmp_path):
        p = self.tower_file(tmp_path, ["a,0.5,0.5,30", "b,xx,0.4,25"])
        with pytest.raises(GeodataError, match="row 3"):
            load_towers(p, self.region())


class TestTerrainProfile:
    def test_flat_grid_constant_elevation(self):
        terrain = flat_grid(20, xll=0, yll=0, cellsize=0.1, value=100.0)
        prof = sample_terrain_profile(terrain, GeoPoint(0.5, 0.5),
                                      GeoPoint(1.5, 1.5), step_m=500.0)
        assert all(e == pytest.approx(100.0) for _, e in prof)
        dists = [d for d, _ in prof]
        assert dists == sorted(dists)
        assert all(b - a <= 500.0 + 1e-6 for a, b in zip(dists, dists[1:]))

    def test_degenerate_path(self):
        terrain = flat_grid(5, xll=0, yll=0, cellsize=1, value=42.0)
        prof = sample_terrain_profile(terrain, GeoPoint(2, 2), GeoPoint(2, 2),
                                      step_m=100.0)
        assert prof == [(0.0, pytest.approx(42.0))]

    def test_linear_ramp_midpoint(self):
        # east-west ramp from 0 to 1000 m across 11 columns at the equator
        values = [[c * 100.0 for c in range(11)] for _ in range(11)]
        terrain = make_grid(values, xll=0, yll=-0.55, cellsize=0.1)
        a = GeoPoint(0.0, 0.05)    # center of col 0
        b = GeoPoint(0.0, 1.05)    # center of col 10
        prof = sample_terrain_profile(terrain, a, b, step_m=200.0)
        mid_d = prof[-1][0] / 2
        elev = min(prof, key=lambda p: abs(p[0] - mid_d))[1]
        assert elev == pytest.approx(500.0, abs=1.0)

    def test_out_of_coverage_names_point(self):
        terrain = flat_grid(5, xll=0, yll=0, cellsize=1)
        with pytest.raises(OutOfCoverageError, match="80"):
            sample_terrain_profile(terrain, GeoPoint(2, 2), GeoPoint(80, 2),
                                   step_m=100.0)

    def test_endpoint_fidelity(self):
        values = [[(r + c) * 10.0 for c in range(10)] for r in range(10)]
        terrain = make_grid(values, xll=0, yll=0, cellsize=0.5)
        a, b = GeoPoint(1.3, 2.2), GeoPoint(3.7, 4.1)
        prof = sample_terrain_profile(terrain, a, b, step_m=5000.0)
        assert prof[0][1] == terrain.elevation_at(a.lat, a.lon)
        assert prof[-1][1] == terrain.elevation_at(b.lat, b.lon)

    def test_nodata_treated_as_zero(self):
        g = make_grid([[-9999.0, -9999.0], [-9999.0, -9999.0]],
                      xll=0, yll=0, cellsize=1)
        assert g.elevation_at(1.0, 1.0) == 0.0


class TestBilinear:
    def test_exact_midpoint_between_cells(self):
        g = make_grid([[0.0, 1000.0]], xll=0, yll=0, cellsize=1)
        # cell centers at lon 0.5 and 1.5; midpoint lon 1.0
        assert g.elevation_at(0.5, 1.0) == pytest.approx(500.0)

    def test_out_of_coverage(self):
        g = make_grid([[1.0]], xll=0, yll=0, cellsize=1)
        with pytest.raises(OutOfCoverageError):
            g.elevation_at(5.0, 0.5)
