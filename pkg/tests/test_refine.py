import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from maxwell_afem.mesh import DomainSpec, Mesh, generate_structured, topology_audit
from maxwell_afem.refine import MarkSet, RefinementError, bisect, mark, uniform_refine

from conftest import REF_TET, two_tet_mesh


# ---------------------------------------------------------------- marking
def test_mark_prefix_example():
    m = mark(np.sqrt([4.0, 3.0, 2.0, 1.0]), 0.5)
    assert set(m.marked_tets.tolist()) == {0, 1}
    assert m.theta == 0.5


def test_mark_theta_one_marks_all_nonzero():
    assert set(mark([1.0, 0.0, 2.0, 3.0], 1.0).marked_tets.tolist()) == {0, 2, 3}


def test_mark_ties_by_id():
    assert mark(np.ones(10), 0.3).marked_tets.tolist() == [0, 1, 2]


def test_mark_all_zero_is_empty():
    assert len(mark(np.zeros(5), 0.5)) == 0


@pytest.mark.parametrize("theta", [0.0, -0.1, 1.5])
def test_mark_rejects_theta(theta):
    with pytest.raises(ValueError):
        mark(np.ones(3), theta)


def prefix_oracle(eta_K, theta):
    sq = np.asarray(eta_K) ** 2
    order = sorted(range(len(sq)), key=lambda i: (-sq[i], i))
    need, acc, out = theta * sq.sum(), 0.0, []
    for i in order:
        if acc >= need * (1 - 1e-13):
            break
        out.append(i)
        acc += sq[i]
    return sorted(out)


@given(st.lists(st.floats(0.0, 10.0), min_size=1, max_size=40), st.floats(0.05, 0.99))
def test_mark_matches_prefix_oracle(eta_K, theta):
    eta_K = np.array(eta_K)
    got = mark(eta_K, theta).marked_tets.tolist()
    if not np.any(eta_K**2 > 0):
        assert got == []
        return
    assert got == prefix_oracle(eta_K, theta)
    # minimality: dropping the smallest marked one loses the bulk property
    sq = eta_K**2
    assert sq[got].sum() >= theta * sq.sum() * (1 - 1e-13)
    assert sq[got].sum() - sq[got].min() < theta * sq.sum()


# ---------------------------------------------------------------- bisection
def test_single_tet_two_children(ref_tet_mesh):
    out = bisect(ref_tet_mesh, MarkSet(np.array([0])))
    assert out.n_tets == 2
    assert abs(out.volumes.sum() - 1 / 6) <= 1e-14
    assert topology_audit(out)
    np.testing.assert_array_equal(out.parent, [0, 0])


def test_shared_refinement_edge_closure():
    m = two_tet_mesh()
    # both tets have the shared edge (1, 2) as longest edge (ties go to the lower key)
    for t in range(2):
        assert sorted(m.order[t, [0, 3]].tolist()) == [1, 2]
    out = bisect(m, [0])
    assert out.n_tets == 4
    np.testing.assert_array_equal(np.bincount(out.parent), [2, 2])
    assert topology_audit(out)


def test_empty_marks_unchanged(cube2):
    out = bisect(cube2, MarkSet())
    np.testing.assert_array_equal(out.tets, cube2.tets)
    np.testing.assert_array_equal(out.vertices, cube2.vertices)


def test_input_not_modified(cube2):
    before = cube2.tets.copy()
    bisect(cube2, [0, 5, 7])
    np.testing.assert_array_equal(cube2.tets, before)


def test_uniform_single_box():
    m = generate_structured(DomainSpec.unit_cube(), (1, 1, 1))
    fine = uniform_refine(m)
    assert fine.n_tets == 48
    assert abs(fine.volumes.sum() - 1.0) <= 1e-12
    assert topology_audit(fine)
    np.testing.assert_array_equal(np.bincount(fine.parent), [8] * 6)


def test_uniform_halves_h(cube2):
    from maxwell_afem.mesh import diameters
    fine = uniform_refine(cube2)
    assert diameters(fine)[2] == pytest.approx(diameters(cube2)[2] / 2)


def test_dihedral_floor_three_uniform_rounds(fichera2):
    floor = fichera2.dihedral_angles().min()
    m = fichera2
    for _ in range(3):
        m = uniform_refine(m)
        assert m.dihedral_angles().min() >= 0.5 * floor


def test_vertices_are_kept(fichera2):
    fine = bisect(fichera2, np.arange(0, fichera2.n_tets, 7))
    np.testing.assert_array_equal(fine.vertices[:fichera2.n_vertices], fichera2.vertices)


def test_closure_guard():
    m = generate_structured(DomainSpec.unit_cube(), (2, 2, 2))
    with pytest.raises(RefinementError, match="non-terminating closure"):
        bisect(m, [0], max_factor=0)


def test_corrupted_refinement_edges_fail_audit_or_guard():
    # a labelling that does not split shared faces consistently
    m = generate_structured(DomainSpec.unit_cube(), (2, 2, 2))
    rng = np.random.default_rng(1)
    order = np.array([rng.permutation(t) for t in m.order])
    bad = Mesh(m.vertices, m.tets, order=order, tag=1)
    try:
        out = bisect(bad, np.arange(bad.n_tets), max_factor=2)
    except RefinementError:
        return
    assert out.n_tets > bad.n_tets


@given(st.integers(0, 2**32 - 1))
def test_random_marks_conform(seed):
    rng = np.random.default_rng(seed)
    m = generate_structured(DomainSpec.fichera(), (2, 2, 2))
    for _ in range(3):
        marks = np.flatnonzero(rng.random(m.n_tets) < 0.15)
        m = bisect(m, marks)
        assert topology_audit(m)
    assert abs(m.volumes.sum() - 0.84) <= 1e-12


def test_corner_refinement_twelve_rounds():
    m = generate_structured(DomainSpec.fichera(), (2, 2, 2))
    floor = m.dihedral_angles().min()
    corner = DomainSpec.fichera().reentrant_corner
    for _ in range(12):
        d = np.linalg.norm(m.centroids() - corner, axis=1)
        m = bisect(m, np.flatnonzero(d <= np.quantile(d, 0.1)))
    assert topology_audit(m)
    assert m.dihedral_angles().min() > 5.0
    assert m.dihedral_angles().min() >= 0.3 * floor
