"""Dense complex linear algebra shared by the rest of the package.

Matrices are plain ``numpy`` arrays.  Tensor-factor structure is carried
separately as a tuple of factor dimensions (a "shape"), and all factor
orderings are row-major: the first factor is the most significant index.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

HERM_TOL = 1e-10


class ShapeError(ValueError):
    pass


def as_matrix(m) -> np.ndarray:
    a = np.asarray(m, dtype=complex)
    if a.ndim != 2:
        raise ShapeError(f"expected a matrix, got ndim={a.ndim}")
    return a


def hermitian(m, tol: float = 1e-12) -> np.ndarray:
    """Return ``m`` as a complex array after checking it is Hermitian."""
    a = as_matrix(m)
    if a.shape[0] != a.shape[1]:
        raise ShapeError("Hermitian matrix must be square")
    err = np.max(np.abs(a - a.conj().T)) if a.size else 0.0
    if err > tol:
        raise ValueError(f"matrix is not Hermitian (max deviation {err:.3e})")
    return a


def kron(a, b) -> np.ndarray:
    return np.kron(as_matrix(a), as_matrix(b))


def kron_all(mats: Iterable) -> np.ndarray:
    out = np.ones((1, 1), dtype=complex)
    for m in mats:
        out = np.kron(out, as_matrix(m))
    return out


def _check_shape(m: np.ndarray, dims: Sequence[int]) -> tuple[int, ...]:
    dims = tuple(int(d) for d in dims)
    if any(d < 1 for d in dims):
        raise ShapeError(f"factor dimensions must be positive: {dims}")
    n = int(np.prod(dims)) if dims else 1
    if m.shape != (n, n):
        raise ShapeError(f"matrix of shape {m.shape} does not match factors {dims}")
    return dims


def partial_trace(m, dims: Sequence[int], keep: Iterable[int]) -> np.ndarray:
    """Trace out every factor not listed in ``keep``.

    Kept factors stay in their original relative order.
    """
    a = as_matrix(m)
    dims = _check_shape(a, dims)
    keep = sorted(set(int(k) for k in keep))
    if any(k < 0 or k >= len(dims) for k in keep):
        raise ShapeError(f"keep={keep} out of range for {len(dims)} factors")
    n = len(dims)
    t = a.reshape(dims + dims)
    letters = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ"
    if 2 * n > len(letters):
        raise ShapeError("too many tensor factors")
    row = list(letters[:n])
    col = list(letters[n:2 * n])
    for i in range(n):
        if i not in keep:
            col[i] = row[i]
    out = "".join(row[k] for k in keep) + "".join(col[k] for k in keep)
    res = np.einsum("".join(row) + "".join(col) + "->" + out, t)
    d = int(np.prod([dims[k] for k in keep])) if keep else 1
    return res.reshape(d, d)


def permute_factors(m, dims: Sequence[int], perm: Sequence[int]) -> np.ndarray:
    """Reorder tensor factors: new factor ``i`` is old factor ``perm[i]``."""
    a = as_matrix(m)
    dims = _check_shape(a, dims)
    perm = list(perm)
    if sorted(perm) != list(range(len(dims))):
        raise ShapeError(f"{perm} is not a permutation of {len(dims)} factors")
    n = len(dims)
    t = a.reshape(dims + dims).transpose(perm + [p + n for p in perm])
    return t.reshape(a.shape)


def permute_vector(v, dims: Sequence[int], perm: Sequence[int]) -> np.ndarray:
    v = np.asarray(v, dtype=complex)
    return v.reshape(tuple(dims)).transpose(list(perm)).reshape(v.shape)


def herm_eig(m, tol: float = HERM_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues in descending order and orthonormal eigenvector columns."""
    a = hermitian(m, tol)
    a = (a + a.conj().T) / 2
    w, v = np.linalg.eigh(a)
    return w[::-1].copy(), v[:, ::-1].copy()


def singular_values(m) -> np.ndarray:
    return np.linalg.svd(as_matrix(m), compute_uv=False)


def psd_sqrt(m) -> np.ndarray:
    w, v = herm_eig(m, tol=1e-8)
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.conj().T


def psd_project(m) -> np.ndarray:
    """Frobenius-nearest positive semidefinite matrix."""
    a = as_matrix(m)
    a = (a + a.conj().T) / 2
    w, v = np.linalg.eigh(a)
    w = np.clip(w, 0.0, None)
    return (v * w) @ v.conj().T


def trace_norm(m) -> float:
    a = as_matrix(m)
    if np.allclose(a, a.conj().T, atol=1e-12):
        return float(np.sum(np.abs(np.linalg.eigvalsh((a + a.conj().T) / 2))))
    return float(np.sum(singular_values(a)))


def is_isometry(v, tol: float = 1e-9) -> bool:
    a = as_matrix(v)
    if a.shape[1] > a.shape[0]:
        return False
    return bool(np.linalg.norm(a.conj().T @ a - np.eye(a.shape[1])) <= tol)


def complete_isometry(v, tol: float = 1e-9) -> np.ndarray:
    """Extend an isometry to a unitary whose leading columns are ``v``."""
    a = as_matrix(v)
    n, k = a.shape
    if k > n or not is_isometry(a, tol):
        raise ValueError("input is not an isometry")
    if k == n:
        return a.copy()
    # Orthogonal complement from a full QR of [v | I].
    q, _ = np.linalg.qr(np.hstack([a, np.eye(n, dtype=complex)]), mode="complete")
    comp = q[:, k:n]
    comp = comp - a @ (a.conj().T @ comp)
    comp, _ = np.linalg.qr(comp)
    return np.hstack([a, comp])


def realify(m) -> np.ndarray:
    """The real symmetric embedding A + iB -> [[A, -B], [B, A]]."""
    a = as_matrix(m)
    re, im = a.real, a.imag
    return np.block([[re, -im], [im, re]])


def unrealify(r) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    n = r.shape[0] // 2
    return (r[:n, :n] + r[n:, n:]) / 2 + 1j * (r[n:, :n] - r[:n, n:]) / 2


def fix_phase(m) -> np.ndarray:
    """Multiply by a phase so the largest-magnitude entry is real positive."""
    a = as_matrix(m)
    if not a.size:
        return a
    flat = a.ravel()
    k = int(np.argmax(np.abs(flat)))
    if abs(flat[k]) == 0:
        return a.copy()
    return a * (abs(flat[k]) / flat[k])


def ket(index: int, dim: int) -> np.ndarray:
    v = np.zeros(dim, dtype=complex)
    v[index] = 1.0
    return v


def proj(vec) -> np.ndarray:
    v = np.asarray(vec, dtype=complex).ravel()
    return np.outer(v, v.conj())


def random_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    z = (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    d = np.diag(r)
    return q * (d / np.abs(d))


def random_isometry(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    return random_unitary(rows, rng)[:, :cols]


def random_density(dim: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    rank = dim if rank is None else rank
    g = rng.standard_normal((dim, rank)) + 1j * rng.standard_normal((dim, rank))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real
