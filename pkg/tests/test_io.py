import numpy as np
import pytest

from fracfem.io import write_csv, write_vtk
from fracfem.mesh import generate_cube_mesh
from fracfem.problem import convergence_study, cube_problem


def test_vtk_tetrahedra(tmp_path, cube3):
    u = cube3.vertices[:, 0]
    write_vtk(tmp_path / "u.vtk", cube3, {"u_h": u})
    lines = (tmp_path / "u.vtk").read_text().splitlines()
    assert lines[0] == "# vtk DataFile Version 3.0"
    assert "DATASET UNSTRUCTURED_GRID" in lines
    assert f"CELLS 384 {384 * 5}" in lines
    i = lines.index("CELL_TYPES 384")
    assert set(lines[i + 1:i + 385]) == {"10"}
    j = lines.index("SCALARS u_h double 1")
    np.testing.assert_array_equal(np.array(lines[j + 2:j + 2 + 125], dtype=float), u)


def test_vtk_triangles_padded(tmp_path):
    m = generate_cube_mesh(1, 2)
    write_vtk(tmp_path / "t.vtk", m, {"a": np.arange(4.0)})
    lines = (tmp_path / "t.vtk").read_text().splitlines()
    i = lines.index("POINTS 4 double")
    assert all(len(l.split()) == 3 and l.split()[2] == "0" for l in lines[i + 1:i + 5])
    assert lines[lines.index("CELL_TYPES 2") + 1] == "5"


def test_vtk_rejects_wrong_length(tmp_path, cube2):
    with pytest.raises(ValueError):
        write_vtk(tmp_path / "x.vtk", cube2, {"u": np.zeros(3)})


def test_convergence_writes_vtk(tmp_path):
    convergence_study(cube_problem(2, 0.6), [4], vtk_dir=tmp_path)
    text = (tmp_path / "solution_level0.vtk").read_text()
    assert "SCALARS u_h double 1" in text and "SCALARS u double 1" in text


def test_csv(tmp_path):
    write_csv(tmp_path / "a.csv", ("x", "y"), [(1, 0.5), (2, 0.25)])
    assert (tmp_path / "a.csv").read_text().splitlines() == ["x,y", "1,0.5", "2,0.25"]
