import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dilatio import tensor_core as tc

SX = np.array([[0, 1], [1, 0]], dtype=complex)
SZ = np.diag([1.0, -1.0]).astype(complex)


def loop_partial_trace(m, dims, keep):
    """Oracle: explicit sum over the traced multi-indices."""
    dims = list(dims)
    kept = [dims[k] for k in keep]
    dk = int(np.prod(kept)) if kept else 1
    out = np.zeros((dk, dk), dtype=complex)
    for r in np.ndindex(*dims):
        for c in np.ndindex(*dims):
            if any(r[i] != c[i] for i in range(len(dims)) if i not in keep):
                continue
            rk = np.ravel_multi_index([r[k] for k in keep], kept) if kept else 0
            ck = np.ravel_multi_index([c[k] for k in keep], kept) if kept else 0
            out[rk, ck] += m[np.ravel_multi_index(r, dims), np.ravel_multi_index(c, dims)]
    return out


def random_matrix(rng, n):
    return rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))


# ---------------------------------------------------------------- kron

def test_kron_unit_factor():
    m = np.arange(6).reshape(2, 3)
    assert np.array_equal(tc.kron(np.eye(1), m), m)


def test_kron_diagonal_projectors():
    out = tc.kron(np.diag([1, 0]), np.diag([0, 1]))
    assert np.array_equal(out, np.diag([0, 1, 0, 0]))


def test_kron_pauli_z_signs():
    assert np.array_equal(np.diag(tc.kron(SZ, SZ)).real, [1, -1, -1, 1])


def test_kron_all_matches_nested():
    a, b, c = np.eye(2), SX, SZ
    assert np.allclose(tc.kron_all([a, b, c]), np.kron(np.kron(a, b), c))
    assert tc.kron_all([]).shape == (1, 1)


# ---------------------------------------------------------------- partial trace

def test_partial_trace_product(rng):
    a, b = random_matrix(rng, 2), random_matrix(rng, 3)
    out = tc.partial_trace(np.kron(a, b), [2, 3], [0])
    assert np.allclose(out, np.trace(b) * a, atol=1e-12)


def test_partial_trace_maximally_entangled():
    omega = np.array([1, 0, 0, 1]) / np.sqrt(2)
    out = tc.partial_trace(np.outer(omega, omega), [2, 2], [0])
    assert np.allclose(out, np.eye(2) / 2, atol=1e-15)


def test_partial_trace_everything(rng):
    m = random_matrix(rng, 6)
    out = tc.partial_trace(m, [2, 3], [])
    assert out.shape == (1, 1)
    assert np.isclose(out[0, 0], np.trace(m))


def test_partial_trace_matches_loop_oracle(rng):
    dims = [2, 3, 2]
    m = random_matrix(rng, 12)
    for keep in ([0], [1], [2], [0, 2], [1, 2]):
        assert np.allclose(tc.partial_trace(m, dims, keep), loop_partial_trace(m, dims, keep), atol=1e-12)


def test_partial_trace_shape_errors(rng):
    with pytest.raises(tc.ShapeError):
        tc.partial_trace(np.eye(4), [2, 3], [0])
    with pytest.raises(tc.ShapeError):
        tc.partial_trace(np.eye(4), [2, 2], [5])


dims_strategy = st.lists(st.integers(1, 3), min_size=1, max_size=3)


@given(dims=dims_strategy, seed=st.integers(0, 2**32 - 1), data=st.data())
def test_partial_trace_preserves_trace(dims, seed, data):
    rng = np.random.default_rng(seed)
    n = int(np.prod(dims))
    m = random_matrix(rng, n)
    keep = data.draw(st.sets(st.integers(0, len(dims) - 1)))
    out = tc.partial_trace(m, dims, keep)
    assert abs(np.trace(out) - np.trace(m)) <= 1e-10 * max(1.0, abs(np.trace(m)))


@given(da=st.integers(1, 4), db=st.integers(1, 4), seed=st.integers(0, 2**32 - 1))
def test_kron_then_trace_out_second(da, db, seed):
    rng = np.random.default_rng(seed)
    a, b = random_matrix(rng, da), random_matrix(rng, db)
    out = tc.partial_trace(tc.kron(a, b), [da, db], [0])
    assert np.allclose(out, np.trace(b) * a, atol=1e-10)


def test_permute_factors_is_a_swap(rng):
    a, b = random_matrix(rng, 2), random_matrix(rng, 3)
    assert np.allclose(tc.permute_factors(np.kron(a, b), [2, 3], [1, 0]), np.kron(b, a))
    v, w = rng.standard_normal(2), rng.standard_normal(3)
    assert np.allclose(tc.permute_vector(np.kron(v, w), [2, 3], [1, 0]), np.kron(w, v))


# ---------------------------------------------------------------- eigen-decomposition

def test_herm_eig_identity():
    w, _ = tc.herm_eig(np.eye(2))
    assert np.allclose(w, [1, 1])


def test_herm_eig_pauli_x_matches_characteristic_polynomial():
    w, v = tc.herm_eig(SX)
    roots = np.sort(np.roots([1, 0, -1]).real)[::-1]
    assert np.allclose(w, roots)
    assert np.allclose(v @ np.diag(w) @ v.conj().T, SX, atol=1e-12)


def test_herm_eig_degenerate_block_is_orthonormal():
    w, v = tc.herm_eig(np.diag([3.0, 2.0, 2.0]))
    assert np.allclose(w, [3, 2, 2])
    assert np.allclose(v.conj().T @ v, np.eye(3), atol=1e-12)


def test_herm_eig_rejects_non_hermitian():
    with pytest.raises(ValueError):
        tc.herm_eig(np.array([[0, 1], [0, 0]]))


@given(n=st.integers(1, 12), seed=st.integers(0, 2**32 - 1))
def test_herm_eig_reconstructs(n, seed):
    rng = np.random.default_rng(seed)
    m = random_matrix(rng, n)
    m = m + m.conj().T
    w, v = tc.herm_eig(m)
    assert np.all(np.diff(w) <= 1e-12)
    assert np.linalg.norm(v @ np.diag(w) @ v.conj().T - m) <= 1e-8
    assert np.linalg.norm(v.conj().T @ v - np.eye(n)) <= 1e-9


# ---------------------------------------------------------------- isometry completion

def test_complete_square_unitary_is_unchanged(rng):
    u = tc.random_unitary(3, rng)
    assert np.array_equal(tc.complete_isometry(u), u)


def test_complete_basis_vector():
    u = tc.complete_isometry(np.array([[1], [0]]))
    assert np.allclose(u[:, 0], [1, 0])
    assert np.allclose(u.conj().T @ u, np.eye(2))


def test_complete_plus_vector():
    v = np.array([[1], [1]]) / np.sqrt(2)
    u = tc.complete_isometry(v)
    assert np.allclose(u[:, :1], v)
    assert np.allclose(u.conj().T @ u, np.eye(2), atol=1e-12)
    assert np.isclose(abs(np.linalg.det(u)), 1.0)


def test_complete_rejects_non_isometry():
    with pytest.raises(ValueError):
        tc.complete_isometry(np.array([[1.0], [1.0]]))


@given(rows=st.integers(1, 8), seed=st.integers(0, 2**32 - 1), data=st.data())
def test_complete_isometry_is_unitary(rows, seed, data):
    cols = data.draw(st.integers(1, rows))
    v = tc.random_isometry(rows, cols, np.random.default_rng(seed))
    u = tc.complete_isometry(v)
    assert np.allclose(u[:, :cols], v)
    assert np.linalg.norm(u.conj().T @ u - np.eye(rows)) <= 1e-9


# ---------------------------------------------------------------- helpers

def test_realify_round_trip_and_spectrum(rng):
    m = random_matrix(rng, 3)
    h = m + m.conj().T
    r = tc.realify(h)
    assert np.allclose(r, r.T)
    assert np.allclose(tc.unrealify(r), h)
    # each eigenvalue of h appears twice in its real embedding
    assert np.allclose(np.sort(np.linalg.eigvalsh(r)), np.sort(np.repeat(np.linalg.eigvalsh(h), 2)))


def test_fix_phase_makes_largest_entry_positive(rng):
    m = random_matrix(rng, 3)
    f = tc.fix_phase(m)
    k = np.argmax(np.abs(f))
    assert abs(f.flat[k].imag) < 1e-14 and f.flat[k].real > 0
    assert np.allclose(np.abs(f), np.abs(m))


def test_trace_norm_and_psd_helpers(rng):
    assert np.isclose(tc.trace_norm(SZ), 2.0)
    assert np.isclose(tc.trace_norm(np.array([[0, 2], [0, 0]])), 2.0)
    m = random_matrix(rng, 4)
    p = tc.psd_project(m + m.conj().T)
    assert np.linalg.eigvalsh(p).min() >= -1e-12
    rho = tc.random_density(3, rng)
    s = tc.psd_sqrt(rho)
    assert np.allclose(s @ s, rho, atol=1e-12)


def test_hermitian_check():
    with pytest.raises(ValueError):
        tc.hermitian([[1, 1j], [1j, 1]])
    with pytest.raises(tc.ShapeError):
        tc.hermitian(np.ones((2, 3)))
