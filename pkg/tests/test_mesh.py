import numpy as np
import pytest

from maxwell_afem.mesh import (DomainSpec, Mesh, diameters, euler_characteristic, generate_structured,
                               topology_audit)
from maxwell_afem.refine import uniform_refine

from conftest import REF_TET


def test_unit_cube_single_box():
    m = generate_structured(DomainSpec.unit_cube(), (1, 1, 1))
    assert (m.n_tets, m.n_vertices) == (6, 8)
    assert abs(m.volumes.sum() - 1.0) <= 1e-14
    assert topology_audit(m)


def test_unit_cube_two_divisions(cube2):
    assert cube2.n_tets == 48
    assert abs(cube2.volumes.sum() - 1.0) <= 1e-14
    assert set(cube2.face_count.tolist()) == {1, 2}


@pytest.mark.parametrize("n", [1, 2, 3, 5])
def test_count_oracle(n):
    assert generate_structured(DomainSpec.unit_cube(), (n, n, n)).n_tets == 6 * n**3


def test_fichera_volume():
    m = generate_structured(DomainSpec.fichera(), (8, 10, 12))
    assert abs(m.volumes.sum() - 0.84) <= 1e-12 * 0.84
    assert topology_audit(m)


def test_fichera_default_hole():
    d = DomainSpec.fichera()
    assert d.bounds == ((0.0, 0.8), (0.0, 1.0), (0.0, 1.2))
    assert d.hole_bounds == ((0.0, 0.4), (0.0, 0.5), (0.0, 0.6))
    np.testing.assert_allclose(d.reentrant_corner, [0.4, 0.5, 0.6])
    assert abs(d.volume - 0.84) <= 1e-15


def test_box_volume():
    m = generate_structured(DomainSpec.box([(0, 2), (0, 1), (0, 0.5)]), (3, 2, 2))
    assert abs(m.volumes.sum() - 1.0) <= 1e-12


def test_hole_incompatible_divisions():
    with pytest.raises(ValueError, match="hole boundary"):
        generate_structured(DomainSpec.fichera(), (3, 3, 3))


def test_bad_divisions():
    with pytest.raises(ValueError):
        generate_structured(DomainSpec.unit_cube(), (0, 1, 1))


def test_domain_names():
    assert DomainSpec.from_name("cube") == DomainSpec.unit_cube()
    assert DomainSpec.from_name("fichera") == DomainSpec.fichera()
    assert DomainSpec.from_name("box:1,2,3").bounds == ((0, 1), (0, 2), (0, 3))
    for bad in ("sphere", "box:1,2", "box:1,-2,3"):
        with pytest.raises(ValueError):
            DomainSpec.from_name(bad)


def test_audit_passes_on_generated(fichera2):
    report = topology_audit(fichera2)
    assert report.ok and report.message == "ok"


def test_audit_duplicated_tet(cube2):
    m = Mesh(cube2.vertices, np.vstack([cube2.tets, cube2.tets[:1]]))
    report = topology_audit(m)
    assert not report
    assert "shared by 3 tets" in report.message


def test_audit_inverted_tet(cube2):
    t = np.array(cube2.tets)
    t[5, [2, 3]] = t[5, [3, 2]]
    report = topology_audit(Mesh(cube2.vertices, t))
    assert not report
    assert "non-positive volume" in report.message


def test_audit_hanging_vertex():
    # two tets whose shared "face" is split on one side only
    x = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [0, 0, -1], [0.5, 0, 0]])
    t = np.array([[0, 1, 2, 3], [5, 1, 2, 4], [0, 5, 2, 4]])
    from maxwell_afem.mesh import orient_positive
    report = topology_audit(Mesh(x, orient_positive(x, t)))
    assert not report and "hanging" in report.message


def test_positive_orientation(fichera2):
    assert np.all(fichera2.signed_volumes > 0)


def test_edges_sorted_and_signs(cube3):
    assert np.all(cube3.edges[:, 0] < cube3.edges[:, 1])
    from maxwell_afem.mesh import LOCAL_EDGES
    ge = cube3.edges[cube3.tet_edges]
    a = cube3.tets[:, LOCAL_EDGES[:, 0]]
    fwd = cube3.tet_edge_signs > 0
    np.testing.assert_array_equal(np.where(fwd, ge[..., 0], ge[..., 1]), a)


def test_boundary_edges_lie_on_boundary_faces(cube3):
    from maxwell_afem.mesh import edge_keys
    bf = cube3.faces[cube3.boundary_face]
    keys = {int(k) for i, j in ((0, 1), (0, 2), (1, 2)) for k in edge_keys(bf[:, i], bf[:, j])}
    flagged = {int(k) for k in edge_keys(*cube3.edges[cube3.boundary_edge].T)}
    assert keys == flagged


@pytest.mark.parametrize("name,div", [("unit_cube", (2, 2, 2)), ("fichera", (2, 2, 2)),
                                      ("unit_cube", (3, 1, 2))])
def test_interior_face_count(name, div):
    m = generate_structured(DomainSpec.from_name(name), div)
    assert 2 * len(m.interior_faces) == 4 * m.n_tets - int(m.boundary_face.sum())


def test_face_tets_adjacency(cube2):
    for f in cube2.interior_faces[:20]:
        for t in cube2.face_tets[f]:
            assert f in cube2.tet_faces[t]


def test_reference_tet_diameter(ref_tet_mesh):
    hK, hF, h = diameters(ref_tet_mesh)
    assert abs(hK[0] - np.sqrt(2)) <= 1e-15
    assert abs(h - np.sqrt(2)) <= 1e-15


def test_single_box_diameter():
    _, _, h = diameters(generate_structured(DomainSpec.unit_cube(), (1, 1, 1)))
    assert abs(h - np.sqrt(3)) <= 1e-15


def test_equilateral_face():
    s = np.sqrt(3) / 2
    x = np.array([[0, 0, 0], [1, 0, 0], [0.5, s, 0], [0.5, s / 3, 0.8]])
    m = Mesh(x, [[0, 1, 2, 3]])
    _, hF, _ = diameters(m)
    f = np.flatnonzero((m.faces == [0, 1, 2]).all(axis=1))[0]
    assert abs(hF[f] - 1.0) <= 1e-15


def test_euler_characteristic():
    for n in (1, 2, 3):
        assert euler_characteristic(generate_structured(DomainSpec.unit_cube(), (n, n, n))) == 1


def test_fichera_euler_characteristic_stable(fichera2):
    chi = euler_characteristic(fichera2)
    assert chi == 1  # the Fichera solid is contractible
    assert euler_characteristic(uniform_refine(fichera2)) == chi


def test_json_round_trip(fichera2):
    m = Mesh.from_json(fichera2.to_json())
    np.testing.assert_array_equal(m.vertices, fichera2.vertices)
    np.testing.assert_array_equal(m.tets, fichera2.tets)
    np.testing.assert_array_equal(m.order, fichera2.order)
    np.testing.assert_array_equal(m.tag, fichera2.tag)


def test_json_without_order_uses_longest_edge():
    m = Mesh.from_json('{"vertices": %s, "tets": [[0, 1, 2, 3]]}' % REF_TET.tolist())
    assert m.tag[0] == -1
    e = m.order[0]
    assert np.linalg.norm(REF_TET[e[0]] - REF_TET[e[3]]) == pytest.approx(np.sqrt(2))


def test_mesh_is_immutable(cube2):
    with pytest.raises(ValueError):
        cube2.vertices[0, 0] = 5.0
