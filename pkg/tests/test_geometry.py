import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from urbankg.geometry import (Coordinate, InvalidGeometry, LineString, MalformedWkt, Point, Polygon,
                              UnsupportedKind, WktError, normalize, parse_wkt, segments_intersect,
                              serialize_wkt, validate)

UNIT_SQUARE = "POLYGON ((0 0, 0 1, 1 1, 1 0, 0 0))"


def test_parse_point_lon_first():
    g = parse_wkt("POINT (-73.9626 40.8075)")
    assert g == Point(Coordinate(-73.9626, 40.8075))
    assert g.point.lon == -73.9626 and g.point.lat == 40.8075


def test_parse_unit_square_and_serialize_back():
    g = parse_wkt(UNIT_SQUARE)
    assert isinstance(g, Polygon)
    assert g.vertices == ((0, 0), (0, 1), (1, 1), (1, 0))
    assert serialize_wkt(g) == UNIT_SQUARE


def test_serialize_origin():
    assert serialize_wkt(Point(Coordinate(0.0, 0.0))) == "POINT (0 0)"
    assert serialize_wkt(Point(Coordinate(-0.0, 0.0))) == "POINT (0 0)"


@pytest.mark.parametrize("text", ["point(1 2)", "  POINT   ( 1   2 )  ", "Point(1 2)", "COORDINATE (1 2)"])
def test_parse_is_case_and_whitespace_insensitive(text):
    assert parse_wkt(text) == Point(Coordinate(1, 2))


def test_out_of_range_longitude_rejected():
    with pytest.raises((MalformedWkt, InvalidGeometry)):
        parse_wkt("POINT (200 10)")
    with pytest.raises(InvalidGeometry):
        parse_wkt("POINT (10 91)")
    assert parse_wkt("POINT (180 0)").point.lon == 180
    with pytest.raises(InvalidGeometry):
        parse_wkt("POINT (-180 0)")


@pytest.mark.parametrize("text, err", [
    ("", MalformedWkt),
    ("POINT", MalformedWkt),
    ("POINT (1)", MalformedWkt),
    ("POINT (1 2", MalformedWkt),
    ("POINT (1 2) extra", MalformedWkt),
    ("CIRCLE (1 2)", MalformedWkt),
    ("MULTIPOLYGON (((0 0, 1 0, 1 1, 0 0)))", UnsupportedKind),
    ("POINT Z (1 2 3)", UnsupportedKind),
    ("POINT EMPTY", InvalidGeometry),
    ("POLYGON ((0 0, 1 0, 1 1, 0 1))", InvalidGeometry),
    ("POLYGON ((0 0, 1 0, 0 0))", InvalidGeometry),
    ("LINESTRING (0 0)", InvalidGeometry),
    ("LINESTRING (0 0, 0 0, 1 1)", InvalidGeometry),
    ("POLYGON ((0 0, 1 1, 1 0, 0 1, 0 0))", InvalidGeometry),
])
def test_parse_errors_are_typed(text, err):
    with pytest.raises(err):
        parse_wkt(text)


def test_only_exterior_ring_kept():
    g = parse_wkt("POLYGON ((0 0, 4 0, 4 4, 0 4, 0 0), (1 1, 2 1, 2 2, 1 1))")
    assert len(g.vertices) == 4


def test_swap_xy_reads_latitude_first():
    assert parse_wkt("POINT (40.8075 -73.9626)", swap_xy=True) == Point(Coordinate(-73.9626, 40.8075))


def test_validate_unit_square_clean():
    assert validate(parse_wkt(UNIT_SQUARE)).violations == []


def test_validate_bow_tie():
    bow = Polygon(tuple(Coordinate(*c) for c in [(0, 0), (1, 1), (1, 0), (0, 1), (0, 0)]))
    report = validate(bow)
    assert not report.ok
    assert any("self-intersection" in v for v in report.violations)


def test_bow_tie_matches_brute_force_segment_pairs():
    ring = [(0, 0), (1, 1), (1, 0), (0, 1), (0, 0)]
    segs = list(zip(ring[:-1], ring[1:]))
    crossing = [(i, j) for i, j in itertools.combinations(range(len(segs)), 2)
                if abs(i - j) not in (1, len(segs) - 1) and segments_intersect(*segs[i], *segs[j])]
    assert crossing == [(0, 2)]


def test_validate_two_point_ring():
    report = validate(Polygon((Coordinate(0, 0), Coordinate(1, 1))))
    assert any("too few" in v for v in report.violations)
    assert any("not closed" in v for v in report.violations)


def test_validate_collinear_fold_back():
    ring = tuple(Coordinate(*c) for c in [(0, 0), (2, 0), (1, 0), (1, 1), (0, 0)])
    assert not validate(Polygon(ring)).ok


def test_normalize_snaps_nearly_closed_ring_only():
    ring = tuple(Coordinate(*c) for c in [(0, 0), (1, 0), (1, 1), (0, 1), (1e-12, 0)])
    fixed = normalize(Polygon(ring))
    assert fixed.ring[0] == fixed.ring[-1]
    far = tuple(Coordinate(*c) for c in [(0, 0), (1, 0), (1, 1), (0, 1), (0.1, 0)])
    assert normalize(Polygon(far)).ring[-1] == Coordinate(0.1, 0)
    assert parse_wkt("POLYGON ((0 0, 1 0, 1 1, 0 1, 1e-12 0))", normalize_ring=True).ring[-1] == (0, 0)


def test_normalize_drops_repeats():
    line = LineString((Coordinate(0, 0), Coordinate(0, 0), Coordinate(1, 1)))
    assert normalize(line).path == (Coordinate(0, 0), Coordinate(1, 1))


# --------------------------------------------------------------------------
# properties

lons = st.floats(-179.999, 180, allow_nan=False, allow_infinity=False)
lats = st.floats(-90, 90, allow_nan=False, allow_infinity=False)
coords = st.builds(Coordinate, lons, lats)


@st.composite
def geometries(draw):
    kind = draw(st.sampled_from(["Point", "LineString", "Polygon"]))
    if kind == "Point":
        return Point(draw(coords))
    if kind == "LineString":
        pts = draw(st.lists(coords, min_size=2, max_size=8))
        g = normalize(LineString(tuple(pts)))
        if len(g.path) < 2:
            g = LineString((Coordinate(0, 0), Coordinate(1, 1)))
        return g
    # axis-aligned rectangle at a random place and size is always simple
    x0, y0 = draw(st.floats(-170, 170)), draw(st.floats(-80, 80))
    w, h = draw(st.floats(1e-6, 9)), draw(st.floats(1e-6, 9))
    pts = [Coordinate(x0, y0), Coordinate(x0 + w, y0), Coordinate(x0 + w, y0 + h), Coordinate(x0, y0 + h)]
    return Polygon(tuple(pts + [pts[0]]))


@settings(max_examples=300, deadline=None)
@given(geometries())
def test_round_trip_is_exact(g):
    if not validate(g).ok:
        return
    assert parse_wkt(serialize_wkt(g)) == g


@settings(max_examples=300, deadline=None)
@given(st.text(max_size=60))
def test_parser_is_total(text):
    try:
        g = parse_wkt(text)
    except WktError:
        return
    assert validate(g).ok


@settings(max_examples=200, deadline=None)
@given(st.text(alphabet="POINTLESGYC()0123456789 ,.-eE", max_size=60))
def test_parser_is_total_on_wkt_like_noise(text):
    try:
        g = parse_wkt(text)
    except WktError:
        return
    assert validate(g).ok
