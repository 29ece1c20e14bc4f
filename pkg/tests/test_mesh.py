import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ksafc.mesh import (
    Mesh,
    MeshError,
    RightAngleWarning,
    build_uniform_unit_square,
    check_nonobtuse,
    gamma_i,
    quality,
    read_mesh,
    write_mesh,
)
from oracles import hull_gamma, random_delaunay_mesh


def test_smallest_mesh_counts():
    m = build_uniform_unit_square(1)
    assert m.n_nodes == 4
    assert m.n_triangles == 2
    assert len(m.edges) == 5


def test_blowup_resolution_counts():
    m = build_uniform_unit_square(120)
    assert m.n_nodes == 14641
    assert m.n_triangles == 28800


def test_interior_nodes_have_six_neighbors():
    m = build_uniform_unit_square(3)
    interior = np.flatnonzero(~m.boundary)
    assert len(interior) == 4
    for i in interior:
        assert len(m.neighbors[i]) == 6


@pytest.mark.parametrize("M", [0, -2, 2.0, "3"])
def test_rejects_bad_resolution(M):
    with pytest.raises(MeshError):
        build_uniform_unit_square(M)


@given(st.integers(1, 12))
def test_counts_and_orientation(M):
    m = build_uniform_unit_square(M)
    assert m.n_nodes == (M + 1) ** 2
    assert m.n_triangles == 2 * M * M
    assert len(m.edges) == 3 * M * M + 2 * M
    assert np.all(m.areas > 0)
    assert np.isclose(m.areas.sum(), 1.0, rtol=1e-14)
    assert m.boundary.sum() == 4 * M
    # Euler: V - E + F = 1 for a disk
    assert m.n_nodes - len(m.edges) + m.n_triangles == 1


def test_quality_uniform():
    q = quality(build_uniform_unit_square(10))
    assert q.max_interior_angle == pytest.approx(math.pi / 2, abs=1e-14)
    assert q.quasiuniformity_ratio == pytest.approx(1.0, abs=1e-14)
    assert q.nonobtuse


def test_quality_single_triangle():
    m = Mesh.from_triangles([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]])
    assert quality(m).h_max == pytest.approx(math.sqrt(2), abs=1e-15)


def test_right_angles_warn():
    with pytest.warns(RightAngleWarning):
        assert check_nonobtuse(build_uniform_unit_square(2))


def test_obtuse_detected():
    m = Mesh.from_triangles([[0, 0], [1, 0], [0.5, 0.1]], [[0, 1, 2]])
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert not check_nonobtuse(m)


def test_gamma_interior_uniform_is_one():
    m = build_uniform_unit_square(6)
    for i in np.flatnonzero(~m.boundary):
        assert gamma_i(m, i) == 1.0


def test_gamma_single_triangle():
    # node at the right-angle corner; hull facets through the node are skipped
    m = Mesh.from_triangles([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]])
    g = gamma_i(m, 0)
    # reach 1, distance from origin to the hypotenuse sqrt(2)/2
    assert g == pytest.approx(math.sqrt(2), rel=1e-14)
    assert np.isfinite(g) and g > 0


def test_gamma_corner_matches_hull_oracle():
    m = build_uniform_unit_square(2)
    assert gamma_i(m, 0) == pytest.approx(hull_gamma(m, 0), rel=1e-13)


def test_gamma_boundary_nodes_match_hull_oracle():
    m = build_uniform_unit_square(4)
    for i in np.flatnonzero(m.boundary):
        assert gamma_i(m, i) == pytest.approx(hull_gamma(m, i), rel=1e-13)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(6, 25))
def test_gamma_random_meshes_match_hull_oracle(seed, n):
    m = random_delaunay_mesh(np.random.default_rng(seed), n)
    for i in range(m.n_nodes):
        if len(m.node_triangles[i]) == 0:
            continue
        g = gamma_i(m, i)
        assert g >= 1.0 - 1e-12
        # symmetric patches short-circuit to 1; otherwise the hull formula applies
        if g != 1.0:
            assert g == pytest.approx(hull_gamma(m, i), rel=1e-12)


def test_rejects_clockwise_triangle():
    with pytest.raises(MeshError):
        Mesh.from_triangles([[0, 0], [1, 0], [0, 1]], [[0, 2, 1]])


def test_rejects_nonmanifold_edge():
    # edge (0, 1) shared by three triangles
    nodes = [[0, 0], [1, 0], [0, 1], [0.5, -1], [0.5, 0.5]]
    with pytest.raises(MeshError):
        Mesh.from_triangles(nodes, [[0, 1, 2], [1, 0, 3], [0, 1, 4]])


def test_graph_pattern_contains_edges_and_diagonal():
    m = build_uniform_unit_square(3)
    g = m.graph
    assert g.nnz == m.n_nodes + 2 * len(m.edges)
    for a, b in m.edges:
        row = g.indices[g.indptr[a]:g.indptr[a + 1]]
        assert b in row
    assert np.all(g.indices[g.diagonal] == np.arange(m.n_nodes))
    # transpose slot maps (i, j) to (j, i)
    assert np.array_equal(g.rows[g.transpose], g.indices)
    assert np.array_equal(g.indices[g.transpose], g.rows)


def test_mesh_dump_round_trip(tmp_path):
    m = build_uniform_unit_square(3)
    write_mesh(m, tmp_path / "n.txt", tmp_path / "t.txt")
    back = read_mesh(tmp_path / "n.txt", tmp_path / "t.txt")
    assert np.array_equal(back.nodes, m.nodes)
    assert np.array_equal(back.triangles, m.triangles)


def test_mesh_dump_bad_path(tmp_path):
    with pytest.raises(OSError, match="missing"):
        write_mesh(build_uniform_unit_square(1), tmp_path / "missing" / "n.txt", tmp_path / "t.txt")
