"""WGS84 geometries: WKT parsing/serialization, validation, planar primitives.

Coordinates are longitude-first everywhere. Geometries are immutable values;
constructing one does not validate it, ``parse_wkt`` and ``validate`` do.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import NamedTuple, Union

__all__ = [
    "Coordinate",
    "Point",
    "LineString",
    "Polygon",
    "Geometry",
    "ValidationReport",
    "WktError",
    "MalformedWkt",
    "InvalidGeometry",
    "UnsupportedKind",
    "parse_wkt",
    "serialize_wkt",
    "validate",
    "normalize",
]

# distance below which a point counts as lying on a segment (degrees)
ON_SEGMENT_TOL = 1e-10
CLOSURE_SNAP_TOL = 1e-9


class WktError(ValueError):
    """Base class for geometry parsing failures."""


class MalformedWkt(WktError):
    pass


class InvalidGeometry(WktError):
    pass


class UnsupportedKind(WktError):
    pass


class Coordinate(NamedTuple):
    lon: float
    lat: float


@dataclass(frozen=True)
class Point:
    point: Coordinate
    kind = "Point"

    @property
    def coords(self) -> tuple[Coordinate, ...]:
        return (self.point,)


@dataclass(frozen=True)
class LineString:
    path: tuple[Coordinate, ...]
    kind = "LineString"

    @property
    def coords(self) -> tuple[Coordinate, ...]:
        return self.path


@dataclass(frozen=True)
class Polygon:
    """Single exterior ring; the ring is stored closed (first == last)."""

    ring: tuple[Coordinate, ...]
    kind = "Polygon"

    @property
    def coords(self) -> tuple[Coordinate, ...]:
        return self.ring

    @property
    def vertices(self) -> tuple[Coordinate, ...]:
        """Ring without the closing duplicate."""
        return self.ring[:-1]


Geometry = Union[Point, LineString, Polygon]


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


# --------------------------------------------------------------------------
# planar primitives

def orient(a, b, c) -> float:
    """Twice the signed area of triangle abc (> 0 when counter-clockwise)."""
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def point_segment_distance(p, a, b) -> float:
    dx, dy = b[0] - a[0], b[1] - a[1]
    seg2 = dx * dx + dy * dy
    if seg2 == 0.0:
        return math.hypot(p[0] - a[0], p[1] - a[1])
    t = ((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / seg2
    t = min(1.0, max(0.0, t))
    return math.hypot(p[0] - (a[0] + t * dx), p[1] - (a[1] + t * dy))


def on_segment(p, a, b, tol: float = ON_SEGMENT_TOL) -> bool:
    return point_segment_distance(p, a, b) <= tol


def segments_intersect(a, b, c, d, tol: float = ON_SEGMENT_TOL) -> bool:
    """True when closed segments ab and cd share at least one point."""
    if (max(a[0], b[0]) + tol < min(c[0], d[0]) or max(c[0], d[0]) + tol < min(a[0], b[0])
            or max(a[1], b[1]) + tol < min(c[1], d[1]) or max(c[1], d[1]) + tol < min(a[1], b[1])):
        return False
    o1, o2 = orient(a, b, c), orient(a, b, d)
    o3, o4 = orient(c, d, a), orient(c, d, b)
    if ((o1 > 0 > o2) or (o1 < 0 < o2)) and ((o3 > 0 > o4) or (o3 < 0 < o4)):
        return True
    return (on_segment(c, a, b, tol) or on_segment(d, a, b, tol)
            or on_segment(a, c, d, tol) or on_segment(b, c, d, tol))


def segment_split_params(a, b, c, d, tol: float = ON_SEGMENT_TOL) -> list[float]:
    """Parameters t in (0, 1) along ab where cd touches or crosses it.

    Collinear overlaps contribute the projections of the overlap endpoints.
    """
    dx, dy = b[0] - a[0], b[1] - a[1]
    seg2 = dx * dx + dy * dy
    if seg2 == 0.0 or not segments_intersect(a, b, c, d, tol):
        return []
    out = []
    for q in (c, d):
        if on_segment(q, a, b, tol):
            out.append(((q[0] - a[0]) * dx + (q[1] - a[1]) * dy) / seg2)
    ex, ey = d[0] - c[0], d[1] - c[1]
    denom = dx * ey - dy * ex
    if denom != 0.0:
        t = ((c[0] - a[0]) * ey - (c[1] - a[1]) * ex) / denom
        u = ((c[0] - a[0]) * dy - (c[1] - a[1]) * dx) / denom
        if -1e-12 <= u <= 1 + 1e-12:
            out.append(t)
    return [t for t in out if 0.0 < t < 1.0]


def ring_signed_area(vertices) -> float:
    n = len(vertices)
    s = 0.0
    for i in range(n):
        x1, y1 = vertices[i]
        x2, y2 = vertices[(i + 1) % n]
        s += x1 * y2 - x2 * y1
    return s / 2.0


def vertex_centroid(g: Geometry) -> Coordinate:
    pts = g.vertices if isinstance(g, Polygon) else g.coords
    n = len(pts)
    return Coordinate(sum(p.lon for p in pts) / n, sum(p.lat for p in pts) / n)


# --------------------------------------------------------------------------
# validation

def _coord_violations(c: Coordinate) -> list[str]:
    if not (math.isfinite(c.lon) and math.isfinite(c.lat)):
        return [f"non-finite coordinate ({c.lon} {c.lat})"]
    out = []
    if not -180.0 < c.lon <= 180.0:
        out.append(f"longitude out of range: {c.lon}")
    if not -90.0 <= c.lat <= 90.0:
        out.append(f"latitude out of range: {c.lat}")
    return out


def _ring_self_intersections(ring) -> list[tuple[int, int]]:
    segs = [(ring[i], ring[i + 1]) for i in range(len(ring) - 1)]
    n = len(segs)
    hits = []
    for i in range(n):
        for j in range(i + 1, n):
            adjacent = j == i + 1 or (i == 0 and j == n - 1)
            a, b = segs[i]
            c, d = segs[j]
            if adjacent:
                # neighbours may only share their common vertex; anything more is a fold-back
                far_i, far_j = (a, d) if j == i + 1 else (b, c)
                if on_segment(far_j, a, b) or on_segment(far_i, c, d):
                    hits.append((i, j))
            elif segments_intersect(a, b, c, d):
                hits.append((i, j))
    return hits


def validate(g: Geometry) -> ValidationReport:
    """List every invariant violation of ``g``; an empty report means valid."""
    report = ValidationReport()
    v = report.violations
    coords = g.coords
    for c in coords:
        v.extend(_coord_violations(c))
    if isinstance(g, Point):
        return report
    for i in range(len(coords) - 1):
        if coords[i] == coords[i + 1]:
            v.append(f"duplicate consecutive coordinate at index {i + 1}")
    if isinstance(g, LineString):
        if len(coords) < 2:
            v.append("too few points: a linestring needs at least 2")
        return report
    if len(coords) < 4:
        v.append("too few points: a polygon ring needs at least 4")
    if not coords or coords[0] != coords[-1]:
        v.append("ring not closed")
    if len(coords) >= 4 and coords[0] == coords[-1] and not any("non-finite" in s for s in v):
        for i, j in _ring_self_intersections(coords):
            v.append(f"self-intersection between ring segments {i} and {j}")
    return report


def normalize(g: Geometry, tol: float = CLOSURE_SNAP_TOL) -> Geometry:
    """Drop repeated consecutive vertices and snap a nearly-closed ring shut."""
    if isinstance(g, Point):
        return g
    pts = [g.coords[0]] if g.coords else []
    for c in g.coords[1:]:
        if c != pts[-1]:
            pts.append(c)
    if isinstance(g, LineString):
        return LineString(tuple(pts))
    if len(pts) >= 2:
        first, last = pts[0], pts[-1]
        if first != last and abs(first.lon - last.lon) <= tol and abs(first.lat - last.lat) <= tol:
            pts[-1] = first
    return Polygon(tuple(pts))


# --------------------------------------------------------------------------
# WKT

_TOKEN = re.compile(r"\s*(?:([A-Za-z]+)|(\()|(\))|(,)|([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?))")
_SUPPORTED = {"POINT": "Point", "COORDINATE": "Point", "LINESTRING": "LineString", "POLYGON": "Polygon"}
_KNOWN_UNSUPPORTED = {"MULTIPOINT", "MULTILINESTRING", "MULTIPOLYGON", "GEOMETRYCOLLECTION",
                      "CIRCULARSTRING", "TRIANGLE", "TIN", "POLYHEDRALSURFACE", "CURVEPOLYGON"}


def _tokenize(text: str) -> list[tuple[str, str]]:
    tokens = []
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise MalformedWkt(f"unexpected character {text[pos:pos + 1]!r} at offset {pos}")
        word, lp, rp, comma, num = m.groups()
        if word is not None:
            tokens.append(("word", word.upper()))
        elif lp:
            tokens.append(("(", lp))
        elif rp:
            tokens.append((")", rp))
        elif comma:
            tokens.append((",", comma))
        else:
            tokens.append(("num", num))
        pos = m.end()
    return tokens


class _Parser:
    def __init__(self, tokens):
        self.tokens = tokens
        self.i = 0

    def peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else (None, None)

    def expect(self, kind):
        tok = self.peek()
        if tok[0] != kind:
            raise MalformedWkt(f"expected {kind!r}, found {tok[1]!r}")
        self.i += 1
        return tok[1]

    def coordinate(self) -> Coordinate:
        x = float(self.expect("num"))
        y = float(self.expect("num"))
        if self.peek()[0] == "num":
            raise UnsupportedKind("only 2D coordinates are supported")
        return Coordinate(x, y)

    def coord_list(self) -> list[Coordinate]:
        self.expect("(")
        out = [self.coordinate()]
        while self.peek()[0] == ",":
            self.i += 1
            out.append(self.coordinate())
        self.expect(")")
        return out

    def done(self):
        if self.i != len(self.tokens):
            raise MalformedWkt(f"trailing content after geometry: {self.peek()[1]!r}")


def parse_wkt(text: str, *, normalize_ring: bool = False, swap_xy: bool = False) -> Geometry:
    """Parse a POINT, LINESTRING or POLYGON literal.

    Keywords are case-insensitive; ``COORDINATE`` is accepted as a synonym of
    POINT. Only the exterior ring of a polygon is kept. ``swap_xy`` reads
    latitude-first input. ``normalize_ring`` snaps a ring whose closing vertex
    is within 1e-9 degrees of its first vertex.
    """
    if not isinstance(text, str) or not text.strip():
        raise MalformedWkt("empty WKT text")
    tokens = _tokenize(text)
    p = _Parser(tokens)
    keyword = p.expect("word")
    if keyword in _KNOWN_UNSUPPORTED:
        raise UnsupportedKind(f"{keyword} geometries are not supported")
    if keyword not in _SUPPORTED:
        raise MalformedWkt(f"unknown geometry keyword {keyword!r}")
    if p.peek()[0] == "word":
        mod = p.peek()[1]
        if mod == "EMPTY":
            raise InvalidGeometry(f"{keyword} EMPTY has no coordinates")
        raise UnsupportedKind(f"{keyword} {mod} is not supported")
    kind = _SUPPORTED[keyword]
    if kind == "Polygon":
        p.expect("(")
        rings = [p.coord_list()]
        while p.peek()[0] == ",":
            p.i += 1
            rings.append(p.coord_list())  # interior rings are discarded
        p.expect(")")
        coords = rings[0]
    else:
        coords = p.coord_list()
    p.done()

    if swap_xy:
        coords = [Coordinate(c.lat, c.lon) for c in coords]
    if kind == "Point":
        if len(coords) != 1:
            raise InvalidGeometry(f"POINT needs exactly one coordinate, got {len(coords)}")
        g: Geometry = Point(coords[0])
    elif kind == "LineString":
        g = LineString(tuple(coords))
    else:
        g = Polygon(tuple(coords))
        if normalize_ring:
            g = normalize(g)

    report = validate(g)
    if not report.ok:
        raise InvalidGeometry("; ".join(report.violations))
    return g


def _fmt(x: float) -> str:
    s = repr(float(x))
    if s.endswith(".0"):
        s = s[:-2]
    return "0" if s == "-0" else s


def _fmt_coords(coords) -> str:
    return ", ".join(f"{_fmt(c.lon)} {_fmt(c.lat)}" for c in coords)


def serialize_wkt(g: Geometry) -> str:
    if isinstance(g, Point):
        return f"POINT ({_fmt(g.point.lon)} {_fmt(g.point.lat)})"
    if isinstance(g, LineString):
        return f"LINESTRING ({_fmt_coords(g.path)})"
    if isinstance(g, Polygon):
        return f"POLYGON (({_fmt_coords(g.ring)}))"
    raise TypeError(f"not a geometry: {g!r}")
