import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from maxwell_afem.fem import assemble
from maxwell_afem.linalg import (LanczosError, NotSPDError, SparseMatrix, assemble_from_triplets,
                                 cholesky, dense_generalized_eig, fill_reducing_ordering,
                                 lanczos_largest, symmetry_audit)
from maxwell_afem.mesh import DomainSpec, generate_structured


def random_spd(n, density, seed):
    rng = np.random.default_rng(seed)
    B = sp.random(n, n, density=density, random_state=rng)
    return SparseMatrix.from_scipy((B @ B.T + sp.identity(n)).tocsr())


# ---------------------------------------------------------------- triplets
def test_duplicates_are_summed():
    A = assemble_from_triplets(2, [(0, 0, 1.0), (0, 0, 1.0)])
    assert A.nnz == 1
    assert A.value(0, 0) == 2.0


def test_symmetric_triplets_pass_audit():
    A = assemble_from_triplets(2, [(0, 1, 3.0), (1, 0, 3.0)])
    ok, worst = symmetry_audit(A)
    assert ok and worst == 0.0


def test_asymmetric_matrix_fails_audit():
    ok, worst = symmetry_audit(assemble_from_triplets(2, [(0, 1, 3.0), (1, 0, 2.0)]))
    assert not ok and worst == 1.0


def test_empty_triplets_give_zero_matrix():
    A = assemble_from_triplets(3, [])
    assert A.nnz == 0
    np.testing.assert_array_equal(A.matvec(np.ones(3)), np.zeros(3))


def test_triplet_index_out_of_range():
    with pytest.raises(IndexError):
        assemble_from_triplets(2, [(0, 2, 1.0)])


@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 5), st.floats(-10, 10)), max_size=40))
def test_triplets_match_dense_accumulation(trip):
    A = assemble_from_triplets(6, trip)
    dense = np.zeros((6, 6))
    for i, j, v in trip:
        dense[i, j] += v
    np.testing.assert_allclose(A.toarray(), dense, atol=1e-12)
    for r in range(6):
        cols = A.col_indices[A.row_offsets[r]:A.row_offsets[r + 1]]
        assert np.all(np.diff(cols) > 0)


# ---------------------------------------------------------------- cholesky
def test_identity_solve():
    F = cholesky(SparseMatrix.from_scipy(sp.identity(5)))
    b = np.arange(5.0)
    np.testing.assert_allclose(F.solve(b), b)


def test_two_by_two_hand_elimination():
    # 4 x0 + 2 x1 = 2, 2 x0 + 3 x1 = 3  =>  x1 = 1, x0 = 0
    A = assemble_from_triplets(2, [(0, 0, 4.0), (0, 1, 2.0), (1, 0, 2.0), (1, 1, 3.0)])
    np.testing.assert_allclose(cholesky(A).solve(np.array([2.0, 3.0])), [0.0, 1.0], atol=1e-15)


def test_zero_pivot_raises_with_index():
    A = assemble_from_triplets(3, [(0, 0, 1.0), (2, 2, 1.0)])
    with pytest.raises(NotSPDError, match="not SPD") as info:
        cholesky(A, ordering="natural")
    assert info.value.pivot == 1


def test_indefinite_matrix_raises():
    A = assemble_from_triplets(2, [(0, 0, 1.0), (0, 1, 2.0), (1, 0, 2.0), (1, 1, 1.0)])
    with pytest.raises(NotSPDError):
        cholesky(A)


@pytest.mark.parametrize("ordering", ["natural", "rcm", "amd", "metis", "auto"])
def test_orderings_give_valid_factorizations(ordering):
    A = random_spd(300, 0.01, 3)
    F = cholesky(A, ordering=ordering)
    b = np.random.default_rng(0).standard_normal(300)
    x = F.solve(b)
    assert np.linalg.norm(A @ x - b) / np.linalg.norm(b) <= 1e-10


def test_ordering_is_permutation():
    A = random_spd(200, 0.02, 1)
    for method in ("amd", "metis", "rcm"):
        p = fill_reducing_ordering(A.to_scipy(), method)
        np.testing.assert_array_equal(np.sort(p), np.arange(200))


def test_unknown_ordering():
    with pytest.raises(ValueError):
        fill_reducing_ordering(sp.identity(3), "magic")


def test_factor_reconstructs_permuted_matrix():
    A = random_spd(120, 0.03, 7)
    F = cholesky(A)
    L = F.lower_factor.toarray()
    p = F.permutation
    np.testing.assert_allclose(L @ np.diag(F.diagonal) @ L.T, A.toarray()[np.ix_(p, p)], atol=1e-10)
    assert np.allclose(np.diag(L), 1.0)
    assert np.allclose(np.triu(L, 1), 0.0)


def test_fem_matrix_hundred_right_hand_sides():
    mesh = generate_structured(DomainSpec.fichera(), (4, 4, 4))
    s = assemble(mesh)
    K = SparseMatrix.from_scipy((s.A.to_scipy() + s.M.to_scipy()).tocsr())
    F = cholesky(K)
    B = np.random.default_rng(5).standard_normal((K.nrows, 100))
    X = F.solve(B)
    rel = np.linalg.norm(K.to_scipy() @ X - B, axis=0) / np.linalg.norm(B, axis=0)
    assert rel.max() <= 1e-10
    # vector and block paths agree
    np.testing.assert_allclose(F.solve(B[:, 3]), X[:, 3], rtol=1e-12, atol=1e-14)
    # the mass matrix alone is SPD as well
    cholesky(s.M)


@given(st.integers(1, 60), st.floats(0.0, 0.2), st.integers(0, 10_000))
def test_random_spd_solves(n, density, seed):
    A = random_spd(n, density, seed)
    b = np.random.default_rng(seed).standard_normal(n)
    x = cholesky(A).solve(b)
    assert np.linalg.norm(A @ x - b) <= 1e-10 * np.linalg.norm(b)


# ---------------------------------------------------------------- lanczos
def diag_op(d):
    d = np.asarray(d, dtype=float)
    return lambda x: d * x


def test_lanczos_diagonal():
    out = lanczos_largest(diag_op([1, 2, 3]), dim=3, nev=1, tol=1e-12)
    assert abs(out[0][0] - 3.0) <= 1e-10


def test_lanczos_projector_removes_dominant_mode():
    def proj(x):
        y = x.copy()
        y[2] = 0.0
        return y

    out = lanczos_largest(diag_op([1, 2, 3]), project=proj, dim=3, nev=1, tol=1e-12)
    assert abs(out[0][0] - 2.0) <= 1e-10


def test_lanczos_random_spd_matches_dense_oracle():
    rng = np.random.default_rng(11)
    B = rng.standard_normal((50, 50))
    A = B @ B.T + 50 * np.eye(50)
    w, _ = dense_generalized_eig(A, np.eye(50))
    out = lanczos_largest(lambda x: A @ x, dim=50, nev=4, tol=1e-12, seed=2)
    got = np.array([t for t, _ in out])
    np.testing.assert_allclose(got, w[::-1][:4], rtol=1e-8)


def test_lanczos_weighted_inner_product():
    # T = M^{-1} K is M-symmetric; its eigenvalues are those of K x = mu M x
    rng = np.random.default_rng(4)
    n = 80
    B = rng.standard_normal((n, n))
    K = B @ B.T + np.eye(n)
    M = np.diag(rng.uniform(1, 3, n))
    w, _ = dense_generalized_eig(K, M)
    Minv = np.linalg.inv(M)
    out = lanczos_largest(lambda x: Minv @ (K @ x), lambda x: M @ x, dim=n, nev=3, tol=1e-12,
                          keep_basis=True)
    np.testing.assert_allclose([t for t, _ in out], w[::-1][:3], rtol=1e-8)
    for theta, x in out:
        assert abs(x @ M @ x - 1.0) < 1e-10
        assert np.linalg.norm(K @ x - theta * (M @ x)) <= 1e-8 * theta
    assert out.orthogonality <= 1e-8
    V = out.basis
    assert np.abs(V @ M @ V.T - np.eye(len(V))).max() <= 1e-8


def test_lanczos_repeated_eigenvalues_recovered():
    out = lanczos_largest(diag_op([1, 5, 5, 5, 2, 3]), dim=6, nev=3, tol=1e-12)
    np.testing.assert_allclose([t for t, _ in out], [5, 5, 5], rtol=1e-10)


def test_lanczos_max_iter_exceeded():
    d = np.linspace(1, 2, 400)
    with pytest.raises(LanczosError) as info:
        lanczos_largest(diag_op(d), dim=400, nev=1, tol=1e-14, max_iter=3)
    assert info.value.residuals is not None


def test_lanczos_persistent_breakdown_errors_after_restarts():
    rng = np.random.default_rng(99)
    calls = [0]

    # every image is (nearly) parallel to its input and each fresh block beats the last
    def op(x):
        calls[0] += 1
        return (2.0 + 1e-3 * calls[0]) * x + 1e-13 * rng.standard_normal(x.size)

    with pytest.raises(LanczosError, match="restarts"):
        lanczos_largest(op, dim=50, nev=1, tol=1e-16, max_iter=100)


# ---------------------------------------------------------------- dense oracle
def test_dense_hand_example():
    w, X = dense_generalized_eig(np.diag([2.0, 8.0]), np.diag([1.0, 2.0]))
    np.testing.assert_allclose(w, [2.0, 4.0])
    np.testing.assert_allclose(X.T @ np.diag([1.0, 2.0]) @ X, np.eye(2), atol=1e-14)


def test_dense_a_equals_m():
    rng = np.random.default_rng(1)
    B = rng.standard_normal((6, 6))
    M = B @ B.T + np.eye(6)
    np.testing.assert_allclose(dense_generalized_eig(M, M)[0], np.ones(6), rtol=1e-12)


def test_dense_zero_a():
    np.testing.assert_allclose(dense_generalized_eig(np.zeros((4, 4)), np.eye(4))[0], 0.0, atol=1e-15)


def test_dense_m_not_spd():
    with pytest.raises(np.linalg.LinAlgError, match="not SPD"):
        dense_generalized_eig(np.eye(2), np.diag([1.0, -1.0]))


def test_dense_size_limit():
    with pytest.raises(ValueError):
        dense_generalized_eig(np.eye(2001), np.eye(2001))
