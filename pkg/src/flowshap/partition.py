"""Spatial structure: analysis grid, intersection clusters, Voronoi regions.

Intersections are clustered with seeded k-means (k-means++ start, Lloyd
iterations), every intersection gets a Voronoi cell clipped to the bounding
box, cluster regions are the unions of their members' cells, and each grid
cell is assigned to the cluster whose region contains its centroid.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataFormatError, InputError
from .geometry import (
    Projection,
    Ring,
    bisector_halfplane,
    clip_halfplane,
    collinear_overlap_length,
    point_in_ring,
    rect_ring,
)

DEFAULT_K = 21
DEFAULT_ROWS = 20
DEFAULT_COLS = 20

ADJACENCY_TOL = 1e-9  # planar units (meters); minimum shared-border length


@dataclass(frozen=True)
class GridSpec:
    """Regular lon/lat raster over a bounding box."""

    bbox: tuple[float, float, float, float]  # lon_min, lat_min, lon_max, lat_max
    rows: int = DEFAULT_ROWS
    cols: int = DEFAULT_COLS

    def __post_init__(self):
        lon_min, lat_min, lon_max, lat_max = self.bbox
        problems = []
        if not (lon_min < lon_max):
            problems.append(f"bbox lon_min {lon_min} must be < lon_max {lon_max}")
        if not (lat_min < lat_max):
            problems.append(f"bbox lat_min {lat_min} must be < lat_max {lat_max}")
        if self.rows < 1 or self.cols < 1:
            problems.append(f"rows and cols must be >= 1, got {self.rows}x{self.cols}")
        if problems:
            raise ConfigError("invalid grid: " + "; ".join(problems), problems)

    @property
    def cell_width(self) -> float:
        return (self.bbox[2] - self.bbox[0]) / self.cols

    @property
    def cell_height(self) -> float:
        return (self.bbox[3] - self.bbox[1]) / self.rows

    def cell_center(self, row: int, col: int) -> tuple[float, float]:
        """(lon, lat) of the cell centroid."""
        return (
            self.bbox[0] + (col + 0.5) * self.cell_width,
            self.bbox[1] + (row + 0.5) * self.cell_height,
        )

    def contains(self, lon: float, lat: float) -> bool:
        return self.bbox[0] <= lon <= self.bbox[2] and self.bbox[1] <= lat <= self.bbox[3]

    def cell_of(self, lon: float, lat: float) -> tuple[int, int] | None:
        """Cell containing a point, None outside the (closed) box."""
        if not self.contains(lon, lat):
            return None
        col = min(int((lon - self.bbox[0]) / self.cell_width), self.cols - 1)
        row = min(int((lat - self.bbox[1]) / self.cell_height), self.rows - 1)
        return (row, col)


@dataclass(frozen=True)
class Intersection:
    id: str
    lon: float
    lat: float


@dataclass
class KMeansResult:
    labels: np.ndarray  # (n,) int
    centroids: np.ndarray  # (k, 2)
    inertia: float
    inertia_history: list[float] = field(default_factory=list)
    n_iter: int = 0


def parse_intersections(source, bbox: tuple[float, float, float, float] | None = None) -> list[Intersection]:
    """Read `node_id,lon,lat` lines; points outside bbox are dropped."""
    close = False
    if isinstance(source, (str, Path)):
        try:
            handle = open(source, "r", encoding="utf-8")
        except OSError as exc:
            raise InputError(f"cannot read intersections: {exc}") from exc
        close = True
    else:
        handle = source
    out: list[Intersection] = []
    try:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise DataFormatError(f"intersections line {lineno}: expected 3 fields", sample=line)
            node_id = parts[0].strip()
            try:
                lon = float(parts[1])
                lat = float(parts[2])
            except ValueError:
                if lineno == 1:
                    continue  # header
                raise DataFormatError(f"intersections line {lineno}: non-numeric coordinate", sample=line)
            if bbox is not None and not (bbox[0] <= lon <= bbox[2] and bbox[1] <= lat <= bbox[3]):
                continue
            out.append(Intersection(node_id, lon, lat))
    finally:
        if close:
            handle.close()
    return out


def kmeans(points: np.ndarray, k: int, seed: int = 0, max_iter: int = 100) -> KMeansResult:
    """Lloyd iterations from a k-means++ start, deterministic given the seed.

    Stops when assignments stop changing or at max_iter. Inertia is recorded
    after every assignment step (it is non-increasing across iterations);
    emptied clusters are repaired by re-seeding them with the farthest point
    of the largest cluster.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[1] != 2:
        raise ConfigError(f"points must be (n, 2), got {points.shape}")
    n = points.shape[0]
    if n == 0:
        raise ConfigError("kmeans needs at least one point")
    n_distinct = np.unique(points, axis=0).shape[0]
    if k > n_distinct:
        raise ConfigError(f"k={k} exceeds the {n_distinct} distinct points")
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    if max_iter < 1:
        raise ConfigError(f"max_iter must be >= 1, got {max_iter}")

    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp_init(points, k, rng)

    labels = None
    history: list[float] = []
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_labels = np.argmin(d2, axis=1)
        # repair empty clusters before measuring inertia
        for _ in range(k):
            counts = np.bincount(new_labels, minlength=k)
            empty = np.flatnonzero(counts == 0)
            if empty.size == 0:
                break
            c = int(empty[0])
            largest = int(np.argmax(counts))
            members = np.flatnonzero(new_labels == largest)
            far = members[int(np.argmax(d2[members, largest]))]
            centroids[c] = points[far]
            d2[:, c] = ((points - centroids[c]) ** 2).sum(axis=1)
            new_labels = np.argmin(d2, axis=1)
        inertia = float(d2[np.arange(n), new_labels].sum())
        history.append(inertia)
        if labels is not None and np.array_equal(new_labels, labels):
            labels = new_labels
            break
        labels = new_labels
        for c in range(k):
            members = points[labels == c]
            if members.size:
                centroids[c] = members.mean(axis=0)
    d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    inertia = float(d2[np.arange(n), labels].sum())
    return KMeansResult(labels=labels, centroids=centroids, inertia=inertia,
                        inertia_history=history, n_iter=n_iter)


def _kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centroids = np.empty((k, 2), dtype=float)
    centroids[0] = points[int(rng.integers(n))]
    d2 = ((points - centroids[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            # all mass on existing centers; pick any point not yet chosen
            remaining = np.flatnonzero(d2 >= 0)
            centroids[i] = points[int(rng.choice(remaining))]
        else:
            centroids[i] = points[int(rng.choice(n, p=d2 / total))]
        d2 = np.minimum(d2, ((points - centroids[i]) ** 2).sum(axis=1))
    return centroids


def voronoi_regions(sites: np.ndarray, rect: tuple[float, float, float, float]) -> list[Ring]:
    """Voronoi cell per site, clipped to the rectangle, by half-plane intersection.

    Returns one ring per site (aligned with the input order). Duplicate sites
    keep only the first occurrence's cell; later duplicates get an empty ring
    and a warning, so the rings still tile the rectangle.
    """
    sites = np.asarray(sites, dtype=float)
    if sites.ndim != 2 or sites.shape[1] != 2 or sites.shape[0] == 0:
        raise ConfigError("voronoi needs a non-empty (n, 2) site array")
    xmin, ymin, xmax, ymax = rect
    n = sites.shape[0]

    first_at: dict[tuple[float, float], int] = {}
    duplicate_of = np.full(n, -1, dtype=int)
    for i in range(n):
        key = (float(sites[i, 0]), float(sites[i, 1]))
        if key in first_at:
            duplicate_of[i] = first_at[key]
        else:
            first_at[key] = i
    n_dupes = int((duplicate_of >= 0).sum())
    if n_dupes:
        warnings.warn(f"{n_dupes} duplicate site(s) deduplicated in voronoi_regions")

    cells: list[Ring] = [[] for _ in range(n)]
    uniq = np.flatnonzero(duplicate_of < 0)
    for i in uniq:
        ring = rect_ring(xmin, ymin, xmax, ymax)
        px, py = float(sites[i, 0]), float(sites[i, 1])
        others = uniq[uniq != i]
        if others.size:
            d = np.hypot(sites[others, 0] - px, sites[others, 1] - py)
            order = others[np.argsort(d, kind="stable")]
            for j in order:
                if not ring:
                    break
                radius = max(math.hypot(vx - px, vy - py) for vx, vy in ring)
                if 0.5 * math.hypot(float(sites[j, 0]) - px, float(sites[j, 1]) - py) > radius:
                    break  # remaining bisectors cannot cut the cell
                a, b, c = bisector_halfplane((px, py), (float(sites[j, 0]), float(sites[j, 1])))
                ring = clip_halfplane(ring, a, b, c)
        cells[i] = ring
    return cells


def cluster_regions(labels: np.ndarray, cells: list[Ring], k: int) -> dict[int, list[Ring]]:
    """Region of each cluster as the multi-part union of its members' cells."""
    regions: dict[int, list[Ring]] = {c: [] for c in range(k)}
    for label, ring in zip(labels, cells):
        if ring:
            regions[int(label)].append(ring)
    return regions


def assign_grids(
    grid: GridSpec,
    regions: dict[int, list[Ring]],
    sites_xy: np.ndarray,
    labels: np.ndarray,
    projection: Projection,
) -> np.ndarray:
    """Cluster id per grid cell, by containment of the cell centroid.

    A centroid on a shared region boundary goes to the cluster whose nearest
    member intersection is closest, ties to the lower cluster id. A centroid
    that no region claims (float slack on borders) falls back to the nearest
    site's cluster.
    """
    assignment = np.empty((grid.rows, grid.cols), dtype=int)
    cluster_ids = sorted(regions)
    for row in range(grid.rows):
        for col in range(grid.cols):
            lon, lat = grid.cell_center(row, col)
            x, y = projection.to_xy(lon, lat)
            hits = [
                cid
                for cid in cluster_ids
                if any(point_in_ring(x, y, ring, ADJACENCY_TOL) for ring in regions[cid])
            ]
            if len(hits) == 1:
                assignment[row, col] = hits[0]
                continue
            candidates = hits if hits else cluster_ids
            best_cid = -1
            best_d = math.inf
            for cid in candidates:
                members = np.flatnonzero(labels == cid)
                if members.size == 0:
                    continue
                d = float(np.min(np.hypot(sites_xy[members, 0] - x, sites_xy[members, 1] - y)))
                if d < best_d - 1e-12 or (abs(d - best_d) <= 1e-12 and cid < best_cid):
                    best_d = d
                    best_cid = cid
            assignment[row, col] = best_cid
    return assignment


def cluster_adjacency(regions: dict[int, list[Ring]], tol: float = ADJACENCY_TOL) -> dict[int, set[int]]:
    """Symmetric, irreflexive neighbor relation: shared border longer than tol.

    Point contact contributes zero overlap length and is excluded.
    """
    edges: dict[int, list[tuple[float, float, float, float, float, float, float, float]]] = {}
    for cid, rings in regions.items():
        acc = []
        for ring in rings:
            m = len(ring)
            for i in range(m):
                ax, ay = ring[i]
                bx, by = ring[(i + 1) % m]
                acc.append((ax, ay, bx, by,
                            min(ax, bx) - tol, min(ay, by) - tol,
                            max(ax, bx) + tol, max(ay, by) + tol))
        edges[cid] = acc

    adjacency: dict[int, set[int]] = {cid: set() for cid in regions}
    ids = sorted(regions)
    for idx, ca in enumerate(ids):
        for cb in ids[idx + 1:]:
            shared = 0.0
            for ea in edges[ca]:
                for eb in edges[cb]:
                    if ea[6] < eb[4] or eb[6] < ea[4] or ea[7] < eb[5] or eb[7] < ea[5]:
                        continue
                    shared += collinear_overlap_length(
                        (ea[0], ea[1]), (ea[2], ea[3]), (eb[0], eb[1]), (eb[2], eb[3]), tol
                    )
                    if shared > tol:
                        break
                if shared > tol:
                    break
            if shared > tol:
                adjacency[ca].add(cb)
                adjacency[cb].add(ca)
    return adjacency


@dataclass
class ClusterPartition:
    """k-means clusters of intersections, their Voronoi regions, and the grid mapping."""

    k: int
    site_ids: list[str]
    sites_xy: np.ndarray  # (n, 2) planar
    labels: np.ndarray  # (n,) cluster id per site
    centroids: np.ndarray  # (k, 2) planar
    regions: dict[int, list[Ring]]
    grid_assignment: np.ndarray  # (rows, cols) cluster id
    adjacency: dict[int, set[int]]
    grid: GridSpec
    projection: Projection
    inertia: float = 0.0

    @property
    def label_by_id(self) -> dict[str, int]:
        return {sid: int(lab) for sid, lab in zip(self.site_ids, self.labels)}

    def cluster_cells(self, cid: int) -> list[tuple[int, int]]:
        rows, cols = np.nonzero(self.grid_assignment == cid)
        return list(zip(rows.tolist(), cols.tolist()))

    def neighbors(self, cid: int) -> list[int]:
        return sorted(self.adjacency.get(cid, set()))

    def to_json_doc(self) -> dict:
        return {
            "k": self.k,
            "labels": {sid: int(lab) for sid, lab in zip(self.site_ids, self.labels)},
            "centroids": [[float(x), float(y)] for x, y in self.centroids],
            "regions": {
                str(cid): [[[float(x), float(y)] for x, y in ring] for ring in rings]
                for cid, rings in sorted(self.regions.items())
            },
            "grid_assignment": self.grid_assignment.astype(int).tolist(),
            "adjacency": {str(cid): sorted(int(n) for n in nbrs) for cid, nbrs in sorted(self.adjacency.items())},
            "grid": {"bbox": list(self.grid.bbox), "rows": self.grid.rows, "cols": self.grid.cols},
            "sites": {sid: [float(x), float(y)] for sid, (x, y) in zip(self.site_ids, self.sites_xy.tolist())},
            "projection": {
                "lon_center": self.projection.lon_center,
                "lat_center": self.projection.lat_center,
                "meters_per_deg_lon": self.projection.meters_per_deg_lon,
                "meters_per_deg_lat": self.projection.meters_per_deg_lat,
            },
            "inertia": self.inertia,
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json_doc(), indent=1), encoding="utf-8")

    @classmethod
    def from_json_doc(cls, doc: dict) -> "ClusterPartition":
        grid = GridSpec(tuple(doc["grid"]["bbox"]), doc["grid"]["rows"], doc["grid"]["cols"])
        site_ids = list(doc["labels"].keys())
        labels = np.array([doc["labels"][sid] for sid in site_ids], dtype=int)
        sites_xy = np.array([doc["sites"][sid] for sid in site_ids], dtype=float)
        regions = {
            int(cid): [[(float(x), float(y)) for x, y in ring] for ring in rings]
            for cid, rings in doc["regions"].items()
        }
        adjacency = {int(cid): set(nbrs) for cid, nbrs in doc["adjacency"].items()}
        return cls(
            k=doc["k"],
            site_ids=site_ids,
            sites_xy=sites_xy,
            labels=labels,
            centroids=np.array(doc["centroids"], dtype=float),
            regions=regions,
            grid_assignment=np.array(doc["grid_assignment"], dtype=int),
            adjacency=adjacency,
            grid=grid,
            projection=Projection.for_bbox(tuple(doc["grid"]["bbox"])),
            inertia=float(doc.get("inertia", 0.0)),
        )

    @classmethod
    def load(cls, path) -> "ClusterPartition":
        return cls.from_json_doc(json.loads(Path(path).read_text(encoding="utf-8")))


def build_partition(
    intersections: list[Intersection],
    grid: GridSpec,
    k: int = DEFAULT_K,
    seed: int = 0,
    max_iter: int = 100,
) -> ClusterPartition:
    """Full spatial build: project, cluster, Voronoi, merge, assign, adjacency."""
    if not intersections:
        raise ConfigError("no intersections inside the bounding box")
    projection = Projection.for_bbox(grid.bbox)
    sites_xy = np.array([projection.to_xy(p.lon, p.lat) for p in intersections], dtype=float)
    km = kmeans(sites_xy, k, seed=seed, max_iter=max_iter)
    rect = projection.bbox_xy(grid.bbox)
    cells = voronoi_regions(sites_xy, rect)
    regions = cluster_regions(km.labels, cells, k)
    assignment = assign_grids(grid, regions, sites_xy, km.labels, projection)
    adjacency = cluster_adjacency(regions)
    return ClusterPartition(
        k=k,
        site_ids=[p.id for p in intersections],
        sites_xy=sites_xy,
        labels=km.labels,
        centroids=km.centroids,
        regions=regions,
        grid_assignment=assignment,
        adjacency=adjacency,
        grid=grid,
        projection=projection,
        inertia=km.inertia,
    )
