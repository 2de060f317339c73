"""Quadtree partitioning of lat/lon points into classification cells.

Nodes holding more than ``max_count`` points are split at their midpoints
until they fit or reach ``max_depth``. Leaves with fewer than ``min_count``
points are then folded into the class of the nearest retained leaf under the
lowest common ancestor that has one, so every point keeps a label.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional

import numpy as np

from .errors import ConfigError, OutOfRegionError

EARTH_RADIUS_KM = 6371.0
WORLD = (-90.0, 90.0, -180.0, 180.0)


class GeoPoint(NamedTuple):
    lat: float
    lon: float


def _check_range(lat, lon):
    lat = np.asarray(lat, dtype=float)
    lon = np.asarray(lon, dtype=float)
    if np.any(np.abs(lat) > 90.0) or np.any(np.abs(lon) > 180.0):
        raise OutOfRegionError("latitude must lie in [-90, 90] and longitude in [-180, 180]")
    return lat, lon


def haversine_km(a, b):
    """Great-circle distance in km. Accepts GeoPoints or (..., 2) arrays of (lat, lon)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    lat1, lon1 = np.radians(a[..., 0]), np.radians(a[..., 1])
    lat2, lon2 = np.radians(b[..., 0]), np.radians(b[..., 1])
    s = np.sin((lat2 - lat1) / 2.0) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2.0) ** 2
    d = 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(s, 0.0, 1.0)))
    return float(d) if d.ndim == 0 else d


@dataclass
class Node:
    min_lat: float
    max_lat: float
    min_lon: float
    max_lon: float
    depth: int
    count: int = 0
    children: Optional[List["Node"]] = None
    point_sum: tuple = (0.0, 0.0)
    class_id: int = -1
    retained: bool = False

    @property
    def is_leaf(self) -> bool:
        return self.children is None

    @property
    def mid(self) -> tuple:
        return (self.min_lat + self.max_lat) / 2.0, (self.min_lon + self.max_lon) / 2.0

    @property
    def center(self) -> tuple:
        if self.count:
            return self.point_sum[0] / self.count, self.point_sum[1] / self.count
        return self.mid

    def child_index(self, lat, lon):
        # boundary points go to the lower-lat, then lower-lon child
        mid_lat, mid_lon = self.mid
        return 2 * (np.asarray(lat) > mid_lat) + (np.asarray(lon) > mid_lon)

    def split(self) -> None:
        mid_lat, mid_lon = self.mid
        d = self.depth + 1
        self.children = [
            Node(self.min_lat, mid_lat, self.min_lon, mid_lon, d),
            Node(self.min_lat, mid_lat, mid_lon, self.max_lon, d),
            Node(mid_lat, self.max_lat, self.min_lon, mid_lon, d),
            Node(mid_lat, self.max_lat, mid_lon, self.max_lon, d),
        ]

    def contains(self, lat: float, lon: float) -> bool:
        return self.min_lat <= lat <= self.max_lat and self.min_lon <= lon <= self.max_lon


@dataclass
class _Group:
    leaves: list
    count: int
    lat_sum: float
    lon_sum: float
    retained: bool
    fallback: tuple

    @property
    def center(self):
        if self.count:
            return self.lat_sum / self.count, self.lon_sum / self.count
        return self.fallback


@dataclass
class CellTree:
    root: Node
    min_count: int
    max_count: int
    max_depth: int
    leaves: list = field(default_factory=list)
    centers: np.ndarray = None  # (num_cells, 2) mean of points per class
    class_counts: np.ndarray = None

    @property
    def num_cells(self) -> int:
        return len(self.class_counts)

    def leaf_for(self, lat: float, lon: float) -> Node:
        if not self.root.contains(lat, lon):
            raise OutOfRegionError(f"point ({lat}, {lon}) lies outside the root region")
        node = self.root
        while not node.is_leaf:
            node = node.children[int(node.child_index(lat, lon))]
        return node

    def assign_label(self, p) -> int:
        return self.leaf_for(float(p[0]), float(p[1])).class_id

    def assign_labels(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        return np.array([self.assign_label(p) for p in pts], dtype=np.int64)

    def to_text(self) -> str:
        lines = ["class_id,min_lat,max_lat,min_lon,max_lon,center_lat,center_lon,count"]
        for leaf in self.leaves:
            c = self.centers[leaf.class_id]
            vals = [leaf.min_lat, leaf.max_lat, leaf.min_lon, leaf.max_lon, c[0], c[1]]
            lines.append(",".join([str(leaf.class_id)] + [format(v, ".17g") for v in vals] + [str(leaf.count)]))
        return "\n".join(lines) + "\n"


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.size == 0:
        raise ConfigError("build_cells needs at least one point")
    pts = pts.reshape(-1, 2)
    _check_range(pts[:, 0], pts[:, 1])
    return pts


def build_cells(points, min_count: int, max_count: int, max_depth: int, region=WORLD) -> CellTree:
    pts = _as_points(points)
    if min_count < 1 or max_count < min_count:
        raise ConfigError(f"need 1 <= min_count <= max_count, got {min_count}, {max_count}")
    if max_depth < 0:
        raise ConfigError("max_depth must be >= 0")
    root = Node(*region, depth=0)
    lat, lon = pts[:, 0], pts[:, 1]
    inside = (lat >= root.min_lat) & (lat <= root.max_lat) & (lon >= root.min_lon) & (lon <= root.max_lon)
    if not inside.all():
        raise OutOfRegionError(f"{int((~inside).sum())} points fall outside the root region")

    def grow(node: Node, idx: np.ndarray) -> None:
        node.count = len(idx)
        node.point_sum = (float(lat[idx].sum()), float(lon[idx].sum())) if len(idx) else (0.0, 0.0)
        if node.count <= max_count or node.depth >= max_depth:
            return
        node.split()
        which = node.child_index(lat[idx], lon[idx])
        for k, child in enumerate(node.children):
            grow(child, idx[which == k])

    grow(root, np.arange(len(pts)))

    def merge(node: Node) -> list:
        if node.is_leaf:
            keep = node.count >= min_count
            node.retained = keep
            return [_Group([node], node.count, node.point_sum[0], node.point_sum[1], keep, node.mid)]
        groups = [g for child in node.children for g in merge(child)]
        kept = [g for g in groups if g.retained]
        small = [g for g in groups if not g.retained]
        if not kept:
            pooled = _Group([], 0, 0.0, 0.0, False, node.mid)
            for g in small:
                pooled.leaves += g.leaves
                pooled.count += g.count
                pooled.lat_sum += g.lat_sum
                pooled.lon_sum += g.lon_sum
            return [pooled]
        kept_centers = np.array([g.center for g in kept])
        for g in small:
            target = kept[int(np.argmin(haversine_km(np.array(g.center), kept_centers)))]
            target.leaves += g.leaves
            target.count += g.count
            target.lat_sum += g.lat_sum
            target.lon_sum += g.lon_sum
        return kept

    groups = merge(root)
    # deterministic class order: by first leaf in depth-first order
    order = {id(leaf): i for i, leaf in enumerate(_iter_leaves(root))}
    groups.sort(key=lambda g: min(order[id(leaf)] for leaf in g.leaves))
    centers, counts = [], []
    for cid, g in enumerate(groups):
        for leaf in g.leaves:
            leaf.class_id = cid
        centers.append(g.center)
        counts.append(g.count)
    tree = CellTree(root, min_count, max_count, max_depth)
    tree.leaves = list(_iter_leaves(root))
    tree.centers = np.array(centers, dtype=float)
    tree.class_counts = np.array(counts, dtype=np.int64)
    return tree


def _iter_leaves(node: Node):
    if node.is_leaf:
        yield node
        return
    for child in node.children:
        yield from _iter_leaves(child)


def assign_label(p, tree: CellTree) -> int:
    return tree.assign_label(p)


def distance_cdf(points, tree: CellTree):
    """Distances (km) from each point to its class center as a step CDF.

    Returns ``(knots, fractions)``: sorted unique distances and the fraction of
    points at or below each one.
    """
    pts = _as_points(points)
    labels = tree.assign_labels(pts)
    dist = np.sort(np.atleast_1d(haversine_km(pts, tree.centers[labels])))
    knots = np.unique(dist)
    fractions = np.searchsorted(dist, knots, side="right") / len(dist)
    return knots, fractions


def write_cdf(knots, fractions, fh) -> None:
    fh.write("distance_km,cumulative_fraction\n")
    for d, f in zip(knots, fractions):
        fh.write(f"{format(float(d), '.17g')},{format(float(f), '.17g')}\n")


def clustered_points(n: int, clusters: int = 20, spread_deg: float = 2.0, seed: int = 0) -> np.ndarray:
    """Synthetic geotags: a mixture of Gaussian blobs with Zipf-like weights."""
    rng = np.random.default_rng(seed)
    centers = np.column_stack([rng.uniform(-60, 70, clusters), rng.uniform(-180, 180, clusters)])
    weights = 1.0 / np.arange(1, clusters + 1)
    weights /= weights.sum()
    which = rng.choice(clusters, size=n, p=weights)
    pts = centers[which] + spread_deg * rng.standard_normal((n, 2))
    pts[:, 0] = np.clip(pts[:, 0], -90.0, 90.0)
    pts[:, 1] = np.clip(pts[:, 1], -180.0, 180.0)
    return pts
