import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oclkit.errors import ConfigError, OutOfRegionError
from oclkit.geocells import (GeoPoint, build_cells, clustered_points, distance_cdf, haversine_km)

UNIT = (0.0, 1.0, 0.0, 1.0)


def leaf_scan(tree, p):
    """Brute force: every leaf whose closed rectangle holds p; tie rule picks lowest lat, then lon."""
    hits = [leaf for leaf in tree.leaves
            if leaf.min_lat <= p[0] <= leaf.max_lat and leaf.min_lon <= p[1] <= leaf.max_lon]
    return min(hits, key=lambda leaf: (leaf.min_lat, leaf.min_lon)).class_id


def test_haversine_identity():
    assert haversine_km(GeoPoint(12.5, -40.0), GeoPoint(12.5, -40.0)) == 0.0


def test_haversine_antipodal():
    assert haversine_km((0, 0), (0, 180)) == pytest.approx(math.pi * 6371.0, rel=1e-6)
    assert haversine_km((0, 0), (0, 180)) == pytest.approx(20015.09, rel=1e-6)


def test_haversine_one_degree():
    assert haversine_km((0, 0), (0, 1)) == pytest.approx(math.pi / 180 * 6371.0, rel=1e-3)
    assert haversine_km((0, 0), (0, 1)) == pytest.approx(111.19, rel=1e-3)


coords = st.tuples(st.floats(-90, 90), st.floats(-180, 180))


@given(coords, coords, coords)
def test_haversine_metric_properties(a, b, c):
    dab, dba = haversine_km(a, b), haversine_km(b, a)
    assert dab == dba
    assert haversine_km(a, a) == 0.0
    assert dab <= math.pi * 6371.0 + 1e-9
    assert dab <= haversine_km(a, c) + haversine_km(c, b) + 1e-6


def test_single_coordinate_cluster_is_degenerate_leaf():
    pts = np.tile([[10.0, 20.0]], (100, 1))
    tree = build_cells(pts, min_count=1, max_count=10, max_depth=8)
    nonempty = [leaf for leaf in tree.leaves if leaf.count]
    assert len(nonempty) == 1
    assert nonempty[0].count == 100 and nonempty[0].depth == 8
    assert tree.num_cells == 1


def test_single_point_single_cell():
    tree = build_cells([[1.0, 2.0]], min_count=1, max_count=5, max_depth=4)
    assert tree.num_cells == 1
    assert tree.assign_label((1.0, 2.0)) == 0


def test_empty_points_rejected():
    with pytest.raises(ConfigError):
        build_cells([], 1, 10, 4)


def test_bad_bounds_rejected():
    with pytest.raises(ConfigError):
        build_cells([[0.0, 0.0]], 10, 5, 4)


def test_uniform_unit_square_bounds_by_recount():
    rng = np.random.default_rng(0)
    pts = rng.random((10_000, 2))
    tree = build_cells(pts, min_count=50, max_count=2500, max_depth=12, region=UNIT)
    # recount each leaf from scratch with the brute-force leaf scan
    recount = {}
    for p in pts:
        hits = [i for i, leaf in enumerate(tree.leaves)
                if leaf.min_lat <= p[0] <= leaf.max_lat and leaf.min_lon <= p[1] <= leaf.max_lon]
        i = min(hits, key=lambda i: (tree.leaves[i].min_lat, tree.leaves[i].min_lon))
        recount[i] = recount.get(i, 0) + 1
    for i, leaf in enumerate(tree.leaves):
        assert leaf.count == recount.get(i, 0)
        if leaf.retained:
            assert 50 <= leaf.count <= 2500
    assert sum(recount.values()) == 10_000
    assert sorted(set(leaf.class_id for leaf in tree.leaves)) == list(range(tree.num_cells))
    assert tree.class_counts.sum() == 10_000


def test_leaves_tile_region():
    pts = clustered_points(3000, clusters=5, seed=1)
    tree = build_cells(pts, 20, 200, 10)
    area = sum((leaf.max_lat - leaf.min_lat) * (leaf.max_lon - leaf.min_lon) for leaf in tree.leaves)
    assert area == pytest.approx(180.0 * 360.0)


def test_assign_label_matches_leaf_scan():
    pts = clustered_points(5000, clusters=8, seed=2)
    tree = build_cells(pts, 30, 300, 10)
    rng = np.random.default_rng(3)
    queries = np.column_stack([rng.uniform(-90, 90, 1000), rng.uniform(-180, 180, 1000)])
    for q in queries:
        assert tree.assign_label(q) == leaf_scan(tree, q)


def test_center_point_gets_its_class():
    pts = clustered_points(4000, clusters=6, seed=4)
    tree = build_cells(pts, 1, 400, 10)
    # with min_count=1 each class is one leaf, and a leaf's mean point lies inside it
    for cid, center in enumerate(tree.centers):
        assert tree.assign_label(center) == cid


def test_boundary_tie_rule():
    pts = np.random.default_rng(0).random((400, 2))
    tree = build_cells(pts, 1, 50, 6, region=UNIT)
    p = (0.5, 0.5)  # corner shared by the four top-level quadrants
    leaf = tree.leaf_for(*p)
    assert leaf.max_lat == 0.5 and leaf.max_lon == 0.5
    assert tree.assign_label(p) == leaf_scan(tree, p)


def test_out_of_region():
    tree = build_cells([[0.5, 0.5]], 1, 5, 3, region=UNIT)
    with pytest.raises(OutOfRegionError):
        tree.assign_label((2.0, 0.5))


def test_undersized_leaves_merge_into_nearest_retained():
    rng = np.random.default_rng(5)
    big = rng.normal([10.0, 10.0], 0.5, (300, 2))
    stray = np.array([[80.0, 170.0]])
    tree = build_cells(np.vstack([big, stray]), min_count=20, max_count=100, max_depth=10)
    stray_leaf = tree.leaf_for(80.0, 170.0)
    assert not stray_leaf.retained
    assert tree.class_counts.sum() == 301
    retained_classes = {leaf.class_id for leaf in tree.leaves if leaf.retained}
    assert stray_leaf.class_id in retained_classes


def test_cdf_all_points_at_centers():
    pts = np.array([[1.0, 1.0]] * 5 + [[50.0, 50.0]] * 7)
    tree = build_cells(pts, 1, 6, 8)
    knots, fractions = distance_cdf(pts, tree)
    assert knots[0] == pytest.approx(0.0, abs=1e-6)
    assert fractions[-1] == 1.0


def test_cdf_matches_recount():
    pts = clustered_points(1000, clusters=4, seed=6)
    tree = build_cells(pts, 10, 100, 10)
    knots, fractions = distance_cdf(pts, tree)
    assert np.all(np.diff(knots) > 0) and np.all(np.diff(fractions) > 0)
    assert fractions[-1] == 1.0
    dists = [haversine_km(p, tree.centers[tree.assign_label(p)]) for p in pts]
    for d, f in zip(knots, fractions):
        assert f == sum(x <= d for x in dists) / len(dists)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 400), st.integers(1, 30), st.integers(0, 100), st.integers(0, 8))
def test_tree_invariants_property(n, min_count, extra, depth):
    pts = np.random.default_rng(n).random((n, 2))
    tree = build_cells(pts, min_count, min_count + extra, depth, region=UNIT)
    assert sum(leaf.count for leaf in tree.leaves) == n
    for leaf in tree.leaves:
        assert leaf.count <= tree.max_count or leaf.depth == depth
        if leaf.retained:
            assert leaf.count >= min_count
    assert sorted({leaf.class_id for leaf in tree.leaves}) == list(range(tree.num_cells))
