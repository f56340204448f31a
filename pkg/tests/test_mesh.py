import math

import numpy as np
import pytest

from heatwave.mesh import (
    Mesh,
    MeshError,
    generate_unit_square,
    load_mesh,
    locate_point,
    refine_uniform,
    save_mesh,
)


def canonical(mesh):
    """Vertex-order-independent key: sorted coordinates and rebased cells."""
    order = np.lexsort((mesh.vertices[:, 1], mesh.vertices[:, 0]))
    rank = np.empty(len(order), dtype=int)
    rank[order] = np.arange(len(order))
    cells = rank[mesh.cells]
    rolled = []
    for cell in cells:
        k = int(np.argmin(cell))
        rolled.append(tuple(np.roll(cell, -k)))
    return mesh.vertices[order], sorted(rolled)


def test_unit_square_n1_counts():
    m = generate_unit_square(1)
    assert m.nv == 4
    assert m.nc == 2
    assert m.h == pytest.approx(math.sqrt(2.0), abs=1e-15)
    assert np.all(m.boundary)


def test_unit_square_n2_counts_and_interior():
    m = generate_unit_square(2)
    assert m.nv == 9
    assert m.nc == 8
    assert int((~m.boundary).sum()) == 1
    inner = m.vertices[~m.boundary][0]
    assert inner == pytest.approx((0.5, 0.5))


@pytest.mark.parametrize("n", [1, 2, 3, 5, 8])
def test_unit_square_tiles_exactly(n):
    m = generate_unit_square(n)
    assert m.nv == (n + 1) ** 2
    assert m.nc == 2 * n * n
    assert abs(m.areas.sum() - 1.0) < 1e-12
    assert m.h == pytest.approx(math.sqrt(2.0) / n, rel=1e-14)
    assert m.quality == pytest.approx(2.0, rel=1e-12)


def test_diagonal_orientation():
    # The split runs from (i/n, j/n) to ((i+1)/n, (j+1)/n).
    m = generate_unit_square(1)
    corners = [tuple(m.vertices[c]) for c in m.cells[0]]
    assert (0.0, 0.0) in corners and (1.0, 1.0) in corners


def test_refine_halves_h_and_quadruples_cells():
    m = generate_unit_square(2)
    r = refine_uniform(m)
    assert r.nc == 4 * m.nc
    assert r.h == pytest.approx(m.h / 2.0, rel=1e-15)
    assert abs(r.areas.sum() - 1.0) < 1e-12


def test_refine_n1_matches_generate_n2():
    a = refine_uniform(generate_unit_square(1))
    b = generate_unit_square(2)
    va, ca = canonical(a)
    vb, cb = canonical(b)
    assert np.allclose(va, vb, atol=1e-15)
    assert ca == cb


def test_refinement_ladder_stays_conforming():
    m = generate_unit_square(3)
    for _ in range(3):
        m = refine_uniform(m)
        assert abs(m.areas.sum() - 1.0) < 1e-12
        assert m.quality == pytest.approx(2.0, rel=1e-12)


def test_inverted_cell_rejected():
    vertices = [(0, 0), (1, 0), (0, 1)]
    with pytest.raises(MeshError, match="inverted"):
        Mesh(vertices, [(0, 2, 1)])


def test_nonconforming_rejected():
    # Two triangles overlapping the same directed edge.
    vertices = [(0, 0), (1, 0), (0, 1), (1, 1)]
    with pytest.raises(MeshError):
        Mesh(vertices, [(0, 1, 2), (0, 1, 3)])


def test_locate_interior_point():
    m = generate_unit_square(2)
    cell, lam = locate_point(m, (0.1, 0.05))
    assert lam.sum() == pytest.approx(1.0, abs=1e-14)
    p = lam @ m.vertices[m.cells[cell]]
    assert p == pytest.approx((0.1, 0.05), abs=1e-14)


def test_locate_edge_tie_lowest_index():
    m = generate_unit_square(2)
    # Diagonal point of the first square is shared by cells 0 and 1.
    cell, _ = locate_point(m, (0.25, 0.25))
    others = [
        c
        for c in range(m.nc)
        if np.all(m.barycentric((0.25, 0.25))[c] >= -1e-12)
    ]
    assert cell == min(others)
    assert len(others) >= 2


def test_locate_vertex_tie_lowest_index():
    m = generate_unit_square(2)
    cell, lam = locate_point(m, (0.5, 0.5))
    assert cell == 0 or cell == min(
        c for c in range(m.nc) if np.all(m.barycentric((0.5, 0.5))[c] >= -1e-12)
    )
    assert lam.max() == pytest.approx(1.0, abs=1e-14)


def test_locate_outside_raises():
    m = generate_unit_square(2)
    with pytest.raises(MeshError, match="outside"):
        locate_point(m, (1.5, 0.5))


def test_roundtrip_bit_for_bit(tmp_path):
    m = generate_unit_square(3)
    p1 = tmp_path / "a.txt"
    p2 = tmp_path / "b.txt"
    save_mesh(m, p1)
    m2 = load_mesh(p1)
    save_mesh(m2, p2)
    assert p1.read_bytes() == p2.read_bytes()
    assert np.array_equal(m.vertices, m2.vertices)
    assert np.array_equal(m.cells, m2.cells)
    assert np.array_equal(m.boundary, m2.boundary)


def test_roundtrip_irrational_coordinates(tmp_path):
    vertices = np.array(
        [(0, 0), (1, 0), (1, 1), (0, 1), (0.5 + 1 / (2 * math.pi), 0.5 + 1 / (2 * math.e))]
    )
    cells = np.array([(0, 1, 4), (1, 2, 4), (2, 3, 4), (3, 0, 4)])
    m = Mesh(vertices, cells)
    path = tmp_path / "m.txt"
    save_mesh(m, path)
    m2 = load_mesh(path)
    assert np.array_equal(m.vertices, m2.vertices)


def test_load_reports_line_numbers(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("mesh2d 3 1\nv 0 0 1\nv 1 0 1\nv 0 oops 1\nc 0 1 2\n")
    with pytest.raises(MeshError, match=r":4:"):
        load_mesh(path)


def test_load_rejects_bad_header(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("mesh 3 1\n")
    with pytest.raises(MeshError, match="header"):
        load_mesh(path)


def test_load_rejects_inconsistent_flags(tmp_path):
    m = generate_unit_square(2)
    path = tmp_path / "m.txt"
    save_mesh(m, path)
    text = path.read_text().splitlines()
    # Flip the interior vertex flag at (0.5, 0.5).
    for i, ln in enumerate(text):
        if ln.startswith("v 0.5 0.5"):
            text[i] = ln[:-1] + "1"
    path.write_text("\n".join(text) + "\n")
    with pytest.raises(MeshError, match="flags"):
        load_mesh(path)


def test_load_rejects_inverted_cell(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("mesh2d 3 1\nv 0 0 1\nv 1 0 1\nv 0 1 1\nc 0 2 1\n")
    with pytest.raises(MeshError, match="inverted"):
        load_mesh(path)
