"""Geospatial toolkit: geohash, distance, containment/intersection predicates, RCC-5.

All predicates work in planar lon-lat space; only ``distance_km`` is spherical.
Non-point geometries are reduced to their vertex centroid for distance and
geohash.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence, Union

from .geometry import (
    Coordinate,
    Geometry,
    LineString,
    Point,
    Polygon,
    on_segment,
    orient,
    point_segment_distance,
    ring_signed_area,
    segment_split_params,
    segments_intersect,
    serialize_wkt,
    vertex_centroid,
)

EARTH_RADIUS_KM = 6371.0
GEOHASH_PRECISION = 8
DEFAULT_EPS = 1e-4
# overlap thickness (2 * area / perimeter), in units of eps, above which
# interiors count as genuinely overlapping rather than touching
PO_THICKNESS = 1.5

_BASE32 = "0123456789bcdefghjkmnpqrstuvwxyz"


class ToolName(str, enum.Enum):
    Geohash = "Geohash"
    Distance = "Distance"
    Point2Polygon = "Point2Polygon"
    Point4Linestring = "Point4Linestring"
    Linestring2Polygon = "Linestring2Polygon"
    Linestring4Polygon = "Linestring4Polygon"
    Polygon2Polygon = "Polygon2Polygon"
    Polygon4Polygon = "Polygon4Polygon"

    def __str__(self) -> str:
        return self.value


class Rcc5Relation(str, enum.Enum):
    DC = "DC"
    EC = "EC"
    PO = "PO"
    EQ = "EQ"
    IN = "IN"

    def __str__(self) -> str:
        return self.value


RCC5_NAMES = {
    Rcc5Relation.DC: "disconnected",
    Rcc5Relation.EC: "externally connected",
    Rcc5Relation.PO: "partially overlapping",
    Rcc5Relation.EQ: "equal",
    Rcc5Relation.IN: "proper part",
}

# (description, input kinds, output) in table order
TOOLKIT: dict[ToolName, tuple[str, tuple[str, ...], str]] = {
    ToolName.Geohash: ("Geohash encoding", ("Geometry",), "Geohash code (8 characters)"),
    ToolName.Distance: ("Calculate the distance between two geo entities.",
                        ("Geometry", "Geometry"), "Distance value (km)"),
    ToolName.Point2Polygon: ("Identify if a point belongs to a polygon",
                             ("Point", "Polygon"), "True/False"),
    ToolName.Point4Linestring: ("Identify if a point intersects a linestring",
                                ("Point", "LineString"), "True/False"),
    ToolName.Linestring2Polygon: ("Identify if a linestring belongs to a polygon",
                                  ("LineString", "Polygon"), "True/False"),
    ToolName.Linestring4Polygon: ("Identify if a linestring intersects a polygon",
                                  ("LineString", "Polygon"), "True/False"),
    ToolName.Polygon2Polygon: ("Identify if a polygon belongs to a polygon",
                               ("Polygon", "Polygon"), "True/False"),
    ToolName.Polygon4Polygon: ("Identify if a polygon intersects a polygon",
                               ("Polygon", "Polygon"), "True/False"),
}


class ToolError(ValueError):
    pass


class ArityMismatch(ToolError):
    pass


class KindMismatch(ToolError):
    pass


@dataclass(frozen=True)
class ToolResult:
    tool: ToolName
    inputs: tuple[Geometry, ...]
    value: Union[str, float, bool]

    def render(self) -> str:
        if isinstance(self.value, bool):
            shown = "True" if self.value else "False"
        elif isinstance(self.value, float):
            shown = f"{self.value:.3f} km"
        else:
            shown = self.value
        return f"tool({self.tool.value})={shown}"

    def to_dict(self) -> dict:
        return {"tool": self.tool.value,
                "inputs": [serialize_wkt(g) for g in self.inputs],
                "value": self.value}


# --------------------------------------------------------------------------
# geohash and distance

def _geohash_point(lon: float, lat: float, precision: int) -> str:
    lon_lo, lon_hi = -180.0, 180.0
    lat_lo, lat_hi = -90.0, 90.0
    chars = []
    bits = 0
    nbits = 0
    even = True  # even bits refine longitude
    while len(chars) < precision:
        if even:
            mid = (lon_lo + lon_hi) / 2
            if lon >= mid:
                bits = (bits << 1) | 1
                lon_lo = mid
            else:
                bits <<= 1
                lon_hi = mid
        else:
            mid = (lat_lo + lat_hi) / 2
            if lat >= mid:
                bits = (bits << 1) | 1
                lat_lo = mid
            else:
                bits <<= 1
                lat_hi = mid
        even = not even
        nbits += 1
        if nbits == 5:
            chars.append(_BASE32[bits])
            bits = nbits = 0
    return "".join(chars)


def representative_point(g: Geometry) -> Coordinate:
    return g.point if isinstance(g, Point) else vertex_centroid(g)


def geohash_encode(g: Geometry, precision: int = GEOHASH_PRECISION) -> str:
    c = representative_point(g)
    return _geohash_point(c.lon, c.lat, precision)


def haversine_km(a: Coordinate, b: Coordinate, radius: float = EARTH_RADIUS_KM) -> float:
    lon1, lat1, lon2, lat2 = map(math.radians, (a.lon, a.lat, b.lon, b.lat))
    h = (math.sin((lat2 - lat1) / 2) ** 2
         + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2) ** 2)
    return 2 * radius * math.asin(min(1.0, math.sqrt(h)))


def distance_km(a: Geometry, b: Geometry) -> float:
    return haversine_km(representative_point(a), representative_point(b))


# --------------------------------------------------------------------------
# ring machinery

_INSIDE, _BOUNDARY, _OUTSIDE = 1, 0, -1


def _locate(pt, ring) -> int:
    """Ray-casting location of ``pt`` against a closed ring, boundary first."""
    x, y = pt
    inside = False
    for i in range(len(ring) - 1):
        a, b = ring[i], ring[i + 1]
        if on_segment(pt, a, b):
            return _BOUNDARY
        if (a[1] > y) != (b[1] > y):
            xc = a[0] + (y - a[1]) * (b[0] - a[0]) / (b[1] - a[1])
            if x < xc:
                inside = not inside
    return _INSIDE if inside else _OUTSIDE


def _locate_in_rings(pt, rings) -> int:
    best = _OUTSIDE
    for ring in rings:
        loc = _locate(pt, ring)
        if loc == _INSIDE:
            return _INSIDE
        best = max(best, loc)
    return best


def _subsegments(a, b, rings):
    """Pieces of segment ab after splitting it wherever any ring edge meets it."""
    ts = {0.0, 1.0}
    for ring in rings:
        for i in range(len(ring) - 1):
            ts.update(segment_split_params(a, b, ring[i], ring[i + 1]))
    ts = sorted(ts)
    for t0, t1 in zip(ts, ts[1:]):
        if t1 - t0 <= 1e-15:
            continue
        p = (a[0] + t0 * (b[0] - a[0]), a[1] + t0 * (b[1] - a[1]))
        q = (a[0] + t1 * (b[0] - a[0]), a[1] + t1 * (b[1] - a[1]))
        yield p, q


def _path_within(path, rings) -> bool:
    """Every point of the polyline lies in the closed union of ``rings``."""
    for v in path:
        if _locate_in_rings(v, rings) == _OUTSIDE:
            return False
    for a, b in zip(path, path[1:]):
        for p, q in _subsegments(a, b, rings):
            mid = ((p[0] + q[0]) / 2, (p[1] + q[1]) / 2)
            if _locate_in_rings(mid, rings) == _OUTSIDE:
                return False
    return True


def _path_meets_ring(path, ring) -> bool:
    for v in path:
        if _locate(v, ring) != _OUTSIDE:
            return True
    for a, b in zip(path, path[1:]):
        for i in range(len(ring) - 1):
            if segments_intersect(a, b, ring[i], ring[i + 1]):
                return True
    return False


def _rings_meet(r1, r2) -> bool:
    return _path_meets_ring(r1, r2) or _locate(r2[0], r1) != _OUTSIDE


# --------------------------------------------------------------------------
# table predicates

def point_in_polygon(p: Point, poly: Polygon) -> bool:
    return _locate(p.point, poly.ring) != _OUTSIDE


def point_intersects_linestring(p: Point, line: LineString) -> bool:
    return any(on_segment(p.point, a, b) for a, b in zip(line.path, line.path[1:]))


def linestring_in_polygon(line: LineString, poly: Polygon) -> bool:
    return _path_within(line.path, [poly.ring])


def linestring_intersects_polygon(line: LineString, poly: Polygon) -> bool:
    return _path_meets_ring(line.path, poly.ring)


def polygon_in_polygon(inner: Polygon, outer: Polygon) -> bool:
    # outer has no holes, so containing inner's boundary contains inner
    return _path_within(inner.ring, [outer.ring])


def polygon_intersects_polygon(a: Polygon, b: Polygon) -> bool:
    return _rings_meet(a.ring, b.ring)


# --------------------------------------------------------------------------
# RCC-5

def _ccw(ring: Sequence) -> tuple:
    ring = tuple((float(x), float(y)) for x, y in ring)
    if ring_signed_area(ring[:-1]) < 0:
        ring = ring[::-1]
    return ring


def _square(c, eps: float) -> tuple:
    x, y = c
    return ((x - eps, y - eps), (x + eps, y - eps), (x + eps, y + eps),
            (x - eps, y + eps), (x - eps, y - eps))


def _segment_hull(a, b, eps: float) -> tuple:
    """Convex hull of the eps-squares centred on a and b (the segment's L-inf buffer)."""
    pts = set(_square(a, eps)[:-1]) | set(_square(b, eps)[:-1])
    pts = sorted(pts)
    if len(pts) <= 2:
        return _square(a, eps)

    def half(points):
        out = []
        for p in points:
            while len(out) >= 2 and orient(out[-2], out[-1], p) <= 0:
                out.pop()
            out.append(p)
        return out

    lower, upper = half(pts), half(reversed(pts))
    hull = lower[:-1] + upper[:-1]
    return tuple(hull) + (hull[0],)


def region(g: Geometry, eps: float = DEFAULT_EPS) -> list[tuple]:
    """Closed CCW rings whose union stands in for ``g`` in RCC reasoning."""
    if isinstance(g, Point):
        return [_square(g.point, eps)]
    if isinstance(g, LineString):
        return [_segment_hull(a, b, eps) for a, b in zip(g.path, g.path[1:])]
    return [_ccw(g.ring)]


def _simplified(ring) -> list:
    pts = [p for i, p in enumerate(ring[:-1]) if i == 0 or p != ring[i - 1]]
    changed = True
    while changed and len(pts) > 3:
        changed = False
        for i in range(len(pts)):
            a, b, c = pts[i - 1], pts[i], pts[(i + 1) % len(pts)]
            scale = max(abs(c[0] - a[0]), abs(c[1] - a[1]), 1e-300)
            if abs(orient(a, b, c)) <= 1e-12 * scale * scale and on_segment(b, a, c, 1e-12 * scale):
                del pts[i]
                changed = True
                break
    return pts


def _rings_match(r1, r2, eps: float) -> bool:
    p, q = _simplified(r1), _simplified(r2)
    if len(p) != len(q):
        return False
    n = len(p)
    for shift in range(n):
        if all(math.hypot(p[i][0] - q[(i + shift) % n][0], p[i][1] - q[(i + shift) % n][1]) <= eps
               for i in range(n)):
            return True
    return False


def _regions_match(A, B, eps: float) -> bool:
    if len(A) != len(B):
        return False
    unused = list(B)
    for ra in A:
        for k, rb in enumerate(unused):
            if _rings_match(ra, rb, eps):
                del unused[k]
                break
        else:
            return False
    return True


def _contains(outer, inner) -> bool:
    return all(_path_within(r, outer) for r in inner)


def _overlap_measure(P, Q) -> tuple[float, float]:
    """Area and perimeter of the intersection of two CCW simple rings.

    Green's theorem over the boundary pieces of P inside Q and of Q inside P;
    coincident pieces count once when both interiors lie on the same side.
    """
    twice_area = 0.0
    perimeter = 0.0
    for own, other, take_coincident in ((P, Q, True), (Q, P, False)):
        for i in range(len(own) - 1):
            a, b = own[i], own[i + 1]
            for p, q in _subsegments(a, b, [other]):
                mid = ((p[0] + q[0]) / 2, (p[1] + q[1]) / 2)
                loc = _locate(mid, other)
                if loc == _OUTSIDE:
                    continue
                if loc == _BOUNDARY:
                    if not take_coincident or not _same_direction(p, q, other):
                        continue
                twice_area += p[0] * q[1] - q[0] * p[1]
                perimeter += math.hypot(q[0] - p[0], q[1] - p[1])
    return max(twice_area / 2.0, 0.0), perimeter


def _same_direction(p, q, ring) -> bool:
    mid = ((p[0] + q[0]) / 2, (p[1] + q[1]) / 2)
    for i in range(len(ring) - 1):
        a, b = ring[i], ring[i + 1]
        if on_segment(mid, a, b):
            return (q[0] - p[0]) * (b[0] - a[0]) + (q[1] - p[1]) * (b[1] - a[1]) > 0
    return False


def overlap_thickness(A, B) -> float:
    """Largest 2*area/perimeter over pairwise part intersections (0 when none)."""
    best = 0.0
    for ra in A:
        for rb in B:
            area, perim = _overlap_measure(ra, rb)
            if area > 0.0 and perim > 0.0:
                best = max(best, 2.0 * area / perim)
    return best


def _ring_distance(r1, r2) -> float:
    if _rings_meet(r1, r2):
        return 0.0
    best = math.inf
    for own, other in ((r1, r2), (r2, r1)):
        for v in own[:-1]:
            for i in range(len(other) - 1):
                best = min(best, point_segment_distance(v, other[i], other[i + 1]))
    return best


def region_distance(A, B) -> float:
    return min(_ring_distance(ra, rb) for ra in A for rb in B)


def classify_rcc5(a: Geometry, b: Geometry, eps: float = DEFAULT_EPS) -> Rcc5Relation:
    """Classify the pair into exactly one RCC-5 relation.

    Points become eps-squares and each linestring segment its eps-buffer;
    the cascade is EQ, IN (either direction), PO, EC, DC. The pair is put in
    a canonical order first so the answer never depends on argument order.
    """
    if serialize_wkt(b) < serialize_wkt(a):
        a, b = b, a
    A, B = region(a, eps), region(b, eps)
    if _regions_match(A, B, eps):
        return Rcc5Relation.EQ
    if _contains(B, A) or _contains(A, B):
        return Rcc5Relation.IN
    if overlap_thickness(A, B) > PO_THICKNESS * eps:
        return Rcc5Relation.PO
    if region_distance(A, B) <= eps:
        return Rcc5Relation.EC
    return Rcc5Relation.DC


# --------------------------------------------------------------------------
# dispatch

_DISPATCH = {
    ToolName.Point2Polygon: point_in_polygon,
    ToolName.Point4Linestring: point_intersects_linestring,
    ToolName.Linestring2Polygon: linestring_in_polygon,
    ToolName.Linestring4Polygon: linestring_intersects_polygon,
    ToolName.Polygon2Polygon: polygon_in_polygon,
    ToolName.Polygon4Polygon: polygon_intersects_polygon,
}


def parse_tool_name(name: Union[str, ToolName]) -> ToolName:
    if isinstance(name, ToolName):
        return name
    for t in ToolName:
        if t.value.lower() == str(name).strip().lower():
            return t
    raise ToolError(f"unknown tool {name!r}")


def _kinds_match(expected: tuple[str, ...], args: Sequence[Geometry]) -> bool:
    return all(e == "Geometry" or g.kind == e for e, g in zip(expected, args))


def invoke_tool(name: Union[str, ToolName], args: Sequence[Geometry]) -> ToolResult:
    tool = parse_tool_name(name)
    _, kinds, _ = TOOLKIT[tool]
    args = tuple(args)
    if len(args) != len(kinds):
        raise ArityMismatch(f"{tool.value} takes {len(kinds)} geometries, got {len(args)}")
    if not _kinds_match(kinds, args):
        got = ", ".join(g.kind for g in args)
        raise KindMismatch(f"{tool.value} expects ({', '.join(kinds)}), got ({got})")
    if tool is ToolName.Geohash:
        value: Union[str, float, bool] = geohash_encode(args[0])
    elif tool is ToolName.Distance:
        value = distance_km(args[0], args[1])
    else:
        value = bool(_DISPATCH[tool](*args))
    return ToolResult(tool, args, value)


def tool_calls_for_pair(tool: ToolName, a: Geometry, b: Geometry) -> list[tuple[Geometry, ...]]:
    """Argument tuples under which ``tool`` applies to the unordered pair (a, b)."""
    _, kinds, _ = TOOLKIT[tool]
    if tool is ToolName.Geohash:
        return [(a,), (b,)]
    if tool is ToolName.Distance:
        return [(a, b)]
    calls = []
    if _kinds_match(kinds, (a, b)):
        calls.append((a, b))
    if _kinds_match(kinds, (b, a)) and (tool is ToolName.Polygon2Polygon or not calls):
        calls.append((b, a))
    return calls


def applicable_tools(a: Geometry, b: Geometry) -> list[ToolName]:
    return [t for t in ToolName if tool_calls_for_pair(t, a, b)]


def run_toolkit(a: Geometry, b: Geometry) -> dict[ToolName, list[ToolResult]]:
    """Every tool applied to the pair; inapplicable tools map to an empty list."""
    return {t: [invoke_tool(t, args) for args in tool_calls_for_pair(t, a, b)] for t in ToolName}
