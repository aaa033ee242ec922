"""Planar geometry primitives: local projection, convex clipping, containment.

All planar computation in the package runs through the equirectangular
projection defined here; polygons are plain vertex lists so the geometry
stays dependency-free.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

EARTH_RADIUS_M = 6_371_000.0
_DEG = math.pi / 180.0

Point = tuple[float, float]
Ring = list[Point]


@dataclass(frozen=True)
class Projection:
    """Local equirectangular projection about a bounding-box center.

    x = R * (lon - lon_center) * cos(lat_center), y = R * (lat - lat_center),
    angles in radians. City-scale distortion is negligible and lines of
    constant lon/lat map to vertical/horizontal lines.
    """

    lon_center: float
    lat_center: float

    @classmethod
    def for_bbox(cls, bbox: tuple[float, float, float, float]) -> "Projection":
        lon_min, lat_min, lon_max, lat_max = bbox
        return cls(0.5 * (lon_min + lon_max), 0.5 * (lat_min + lat_max))

    @property
    def meters_per_deg_lon(self) -> float:
        return EARTH_RADIUS_M * _DEG * math.cos(self.lat_center * _DEG)

    @property
    def meters_per_deg_lat(self) -> float:
        return EARTH_RADIUS_M * _DEG

    def to_xy(self, lon: float, lat: float) -> Point:
        return (
            (lon - self.lon_center) * self.meters_per_deg_lon,
            (lat - self.lat_center) * self.meters_per_deg_lat,
        )

    def to_lonlat(self, x: float, y: float) -> Point:
        return (
            x / self.meters_per_deg_lon + self.lon_center,
            y / self.meters_per_deg_lat + self.lat_center,
        )

    def bbox_xy(self, bbox: tuple[float, float, float, float]) -> tuple[float, float, float, float]:
        x0, y0 = self.to_xy(bbox[0], bbox[1])
        x1, y1 = self.to_xy(bbox[2], bbox[3])
        return (x0, y0, x1, y1)


def rect_ring(xmin: float, ymin: float, xmax: float, ymax: float) -> Ring:
    return [(xmin, ymin), (xmax, ymin), (xmax, ymax), (xmin, ymax)]


def dedupe_ring(ring: Ring, eps: float = 1e-9) -> Ring:
    """Drop consecutive (and wrap-around) vertices closer than eps."""
    out: Ring = []
    for p in ring:
        if not out or abs(p[0] - out[-1][0]) > eps or abs(p[1] - out[-1][1]) > eps:
            out.append(p)
    while len(out) > 1 and abs(out[0][0] - out[-1][0]) <= eps and abs(out[0][1] - out[-1][1]) <= eps:
        out.pop()
    return out


def clip_halfplane(ring: Ring, a: float, b: float, c: float) -> Ring:
    """Sutherland-Hodgman clip of a convex ring to the half-plane a*x + b*y <= c."""
    if not ring:
        return []
    out: Ring = []
    n = len(ring)
    for i in range(n):
        px, py = ring[i]
        qx, qy = ring[(i + 1) % n]
        fp = a * px + b * py - c
        fq = a * qx + b * qy - c
        if fp <= 0.0:
            out.append((px, py))
        if (fp < 0.0 < fq) or (fq < 0.0 < fp):
            t = fp / (fp - fq)
            out.append((px + t * (qx - px), py + t * (qy - py)))
    return dedupe_ring(out)


def bisector_halfplane(p: Point, q: Point) -> tuple[float, float, float]:
    """Half-plane of points at least as close to p as to q, as (a, b, c) with a*x + b*y <= c."""
    a = q[0] - p[0]
    b = q[1] - p[1]
    c = 0.5 * (q[0] * q[0] + q[1] * q[1] - p[0] * p[0] - p[1] * p[1])
    return a, b, c


def ring_area(ring: Ring) -> float:
    """Unsigned shoelace area."""
    n = len(ring)
    if n < 3:
        return 0.0
    acc = 0.0
    for i in range(n):
        x0, y0 = ring[i]
        x1, y1 = ring[(i + 1) % n]
        acc += x0 * y1 - x1 * y0
    return 0.5 * abs(acc)


def point_segment_distance(x: float, y: float, ax: float, ay: float, bx: float, by: float) -> float:
    dx = bx - ax
    dy = by - ay
    dd = dx * dx + dy * dy
    if dd == 0.0:
        return math.hypot(x - ax, y - ay)
    t = ((x - ax) * dx + (y - ay) * dy) / dd
    t = min(1.0, max(0.0, t))
    return math.hypot(x - (ax + t * dx), y - (ay + t * dy))


def point_in_ring(x: float, y: float, ring: Ring, boundary_tol: float = 1e-9) -> bool:
    """Even-odd containment test; points within boundary_tol of an edge count as inside."""
    n = len(ring)
    if n < 3:
        return False
    for i in range(n):
        ax, ay = ring[i]
        bx, by = ring[(i + 1) % n]
        if point_segment_distance(x, y, ax, ay, bx, by) <= boundary_tol:
            return True
    inside = False
    j = n - 1
    for i in range(n):
        xi, yi = ring[i]
        xj, yj = ring[j]
        if (yi > y) != (yj > y):
            x_cross = xi + (y - yi) * (xj - xi) / (yj - yi)
            if x < x_cross:
                inside = not inside
        j = i
    return inside


def collinear_overlap_length(
    a1: Point, a2: Point, b1: Point, b2: Point, tol: float = 1e-9
) -> float:
    """Length of the overlap of two segments, zero unless they are collinear within tol.

    tol bounds both the perpendicular offset of b's endpoints from line a and
    the minimum overlap length considered positive.
    """
    dx = a2[0] - a1[0]
    dy = a2[1] - a1[1]
    length = math.hypot(dx, dy)
    if length <= tol:
        return 0.0
    ux, uy = dx / length, dy / length
    # perpendicular offsets of b's endpoints from the line through a
    off1 = abs((b1[0] - a1[0]) * uy - (b1[1] - a1[1]) * ux)
    off2 = abs((b2[0] - a1[0]) * uy - (b2[1] - a1[1]) * ux)
    if off1 > tol or off2 > tol:
        return 0.0
    t1 = (b1[0] - a1[0]) * ux + (b1[1] - a1[1]) * uy
    t2 = (b2[0] - a1[0]) * ux + (b2[1] - a1[1]) * uy
    lo = max(0.0, min(t1, t2))
    hi = min(length, max(t1, t2))
    return max(0.0, hi - lo)
