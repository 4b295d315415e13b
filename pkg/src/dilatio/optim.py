"""Small dense solvers: simplex LP, primal-dual SDP and CPTP least-squares fits.

Every solver returns its certificates (residuals, duality gap) alongside the
solution so that callers can report them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from . import tensor_core as tc

INFEASIBLE_RESIDUAL = 1e-5


# ====================================================================== LP

@dataclass
class LinearProgram:
    """minimize c.x subject to A_eq x = b_eq and lo <= x <= hi."""

    c: np.ndarray
    A_eq: np.ndarray
    b_eq: np.ndarray
    bounds: Sequence[tuple[float, float]] | None = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        n = self.c.size
        self.A_eq = np.asarray(self.A_eq, dtype=float).reshape(-1, n)
        self.b_eq = np.asarray(self.b_eq, dtype=float).ravel()
        if self.A_eq.shape[0] != self.b_eq.size:
            raise ValueError("A_eq and b_eq disagree")
        if not np.all(np.isfinite(self.b_eq)):
            raise ValueError("right-hand side must be finite")
        if self.bounds is None:
            self.bounds = [(0.0, np.inf)] * n
        if len(self.bounds) != n:
            raise ValueError("one (lo, hi) pair per variable")


@dataclass
class LPResult:
    status: str
    x: np.ndarray | None = None
    objective: float = np.nan
    dual: np.ndarray | None = None
    primal_residual: float = np.nan
    dual_residual: float = np.nan
    gap: float = np.nan
    cs_residual: float = np.nan
    pivots: int = 0

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"

    def certificate(self) -> dict:
        return {"status": self.status, "primal_residual": self.primal_residual,
                "dual_residual": self.dual_residual, "gap": self.gap,
                "complementary_slackness": self.cs_residual}


def _standard_form(p: LinearProgram):
    """Rewrite with u >= 0.  Returns (A, b, c, recover, shift_obj)."""
    m, n = p.A_eq.shape
    cols = []       # list of (orig var, sign)
    offset = np.zeros(n)
    extra_rows = []
    for j, (lo, hi) in enumerate(p.bounds):
        lo = -np.inf if lo is None else float(lo)
        hi = np.inf if hi is None else float(hi)
        if lo > hi:
            raise ValueError(f"empty bounds for variable {j}")
        if np.isfinite(lo):
            offset[j] = lo
            cols.append((j, 1.0))
            if np.isfinite(hi):
                extra_rows.append((len(cols) - 1, hi - lo))
        elif np.isfinite(hi):
            offset[j] = hi
            cols.append((j, -1.0))
        else:
            cols.append((j, 1.0))
            cols.append((j, -1.0))
    nu = len(cols)
    n_slack = len(extra_rows)
    A = np.zeros((m + n_slack, nu + n_slack))
    c = np.zeros(nu + n_slack)
    for k, (j, s) in enumerate(cols):
        A[:m, k] = s * p.A_eq[:, j]
        c[k] = s * p.c[j]
    b = np.concatenate([p.b_eq - p.A_eq @ offset, [r for _, r in extra_rows]])
    for r, (k, _) in enumerate(extra_rows):
        A[m + r, k] = 1.0
        A[m + r, nu + r] = 1.0

    def recover(u):
        x = offset.copy()
        for k, (j, s) in enumerate(cols):
            x[j] += s * u[k]
        return x

    return A, b, c, recover, float(p.c @ offset)


def _pivot(T, row, col):
    T[row] /= T[row, col]
    piv = T[row]
    for r in range(T.shape[0]):
        if r != row and T[r, col] != 0.0:
            T[r] -= T[r, col] * piv


def _run_simplex(T, basis, allowed, eps, max_pivots):
    """Bland's rule on tableau T whose last row holds reduced costs."""
    pivots = 0
    m = T.shape[0] - 1
    while pivots < max_pivots:
        red = T[-1, :-1]
        enter = -1
        for j in allowed:
            if red[j] < -eps:
                enter = j
                break
        if enter < 0:
            return "optimal", pivots
        colv = T[:m, enter]
        best, leave = np.inf, -1
        for r in range(m):
            if colv[r] > eps:
                ratio = T[r, -1] / colv[r]
                if ratio < best - 1e-12 or (abs(ratio - best) <= 1e-12 and basis[r] < basis[leave]):
                    best, leave = ratio, r
        if leave < 0:
            return "unbounded", pivots
        _pivot(T, leave, enter)
        basis[leave] = enter
        pivots += 1
    return "numerical", pivots


def lp_solve(p: LinearProgram, eps: float = 1e-10, max_pivots: int = 50000) -> LPResult:
    A, b, c, recover, shift = _standard_form(p)
    m, n = A.shape
    if m == 0:
        if np.any(c < -eps):
            return LPResult("unbounded")
        u = np.zeros(n)
        x = recover(u)
        return LPResult("optimal", x, float(p.c @ x), np.zeros(0), 0.0, 0.0, 0.0, 0.0)
    sign = np.where(b < 0, -1.0, 1.0)
    A1, b1 = A * sign[:, None], b * sign
    scale = max(1.0, float(np.max(np.abs(A1))), float(np.max(np.abs(b1))))
    # phase one
    T = np.zeros((m + 1, n + m + 1))
    T[:m, :n] = A1
    T[:m, n:n + m] = np.eye(m)
    T[:m, -1] = b1
    T[-1, :n] = -A1.sum(axis=0)
    T[-1, -1] = -b1.sum()
    basis = list(range(n, n + m))
    status, piv1 = _run_simplex(T, basis, range(n + m), eps * scale, max_pivots)
    if status == "numerical":
        return LPResult("numerical", pivots=piv1)
    if -T[-1, -1] > 1e-8 * scale:
        return LPResult("infeasible", pivots=piv1)
    # drive artificials out; drop redundant rows
    keep_rows = []
    for r in range(m):
        if basis[r] >= n:
            cand = [j for j in range(n) if abs(T[r, j]) > 1e-9 * scale]
            if cand:
                _pivot(T, r, cand[0])
                basis[r] = cand[0]
                keep_rows.append(r)
        else:
            keep_rows.append(r)
    rows = keep_rows
    T2 = np.zeros((len(rows) + 1, n + 1))
    T2[:-1, :n] = T[rows, :n]
    T2[:-1, -1] = T[rows, -1]
    basis2 = [basis[r] for r in rows]
    T2[-1, :n] = c
    for r, j in enumerate(basis2):
        if T2[-1, j] != 0.0:
            T2[-1] -= T2[-1, j] * T2[r]
    status, piv2 = _run_simplex(T2, basis2, range(n), eps * max(scale, float(np.max(np.abs(c), initial=1.0))),
                                max_pivots)
    pivots = piv1 + piv2
    if status != "optimal":
        return LPResult(status, pivots=pivots)
    # polish the basic solution and recover duals from the basis matrix
    B = A1[np.ix_(rows, basis2)]
    u = np.zeros(n)
    try:
        u[basis2] = np.linalg.solve(B, b1[rows])
        y_rows = np.linalg.solve(B.T, c[basis2])
    except np.linalg.LinAlgError:
        u[basis2] = T2[:-1, -1]
        y_rows = np.linalg.lstsq(B.T, c[basis2], rcond=None)[0]
    u = np.where(np.abs(u) < 1e-13, 0.0, u)
    y = np.zeros(m)
    y[rows] = y_rows
    y = y * sign
    red = c - A.T @ y
    x = recover(u)
    primal_res = float(np.max(np.abs(A @ u - b)))
    dual_res = float(max(0.0, -red.min()))
    gap = float(abs(c @ u - b @ y))
    cs = float(np.max(np.abs(u * red)))
    return LPResult("optimal", x, float(p.c @ x), y[:p.A_eq.shape[0]], primal_res, dual_res,
                    gap, cs, pivots)


def lp_feasible(A_eq, b_eq, bounds=None) -> LPResult:
    A_eq = np.asarray(A_eq, dtype=float)
    return lp_solve(LinearProgram(np.zeros(A_eq.shape[1]), A_eq, b_eq, bounds))


# ====================================================================== SDP

def hermitian_basis(n: int) -> list[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Orthonormal real basis of n x n Hermitian matrices as sparse triples
    (rows, cols, values)."""
    out = []
    s = 1 / np.sqrt(2)
    for a in range(n):
        out.append((np.array([a]), np.array([a]), np.array([1.0 + 0j])))
    for a in range(n):
        for b in range(a + 1, n):
            out.append((np.array([a, b]), np.array([b, a]), np.array([s, s], dtype=complex)))
            out.append((np.array([a, b]), np.array([b, a]), np.array([1j * s, -1j * s])))
    return out


def hermitian_coords(h: np.ndarray) -> np.ndarray:
    n = h.shape[0]
    coords = [h[a, a].real for a in range(n)]
    r2 = np.sqrt(2)
    for a in range(n):
        for b in range(a + 1, n):
            coords.append(r2 * h[a, b].real)
            coords.append(-r2 * h[a, b].imag)
    return np.array(coords)


@dataclass
class SDProgram:
    """minimize sum_b <C_b, X_b>  s.t.  sum_b <A_ib, X_b> = b_i,  X_b >= 0.

    Dual: maximize b.y  s.t.  Z_b = C_b - sum_i y_i A_ib >= 0.
    ``A[b]`` is an (m x n_b^2) matrix whose row i is the row-major vec of
    the Hermitian matrix A_ib.  Inner products are ``Re tr(A X)``.
    """

    blocks: list[int]
    C: list[np.ndarray]
    A: list
    b: np.ndarray

    def __post_init__(self):
        self.b = np.asarray(self.b, dtype=float).ravel()
        m = self.b.size
        self.C = [np.asarray(c, dtype=complex) for c in self.C]
        self.A = [sp.csr_matrix(a, dtype=complex) for a in self.A]
        for n, c, a in zip(self.blocks, self.C, self.A):
            if c.shape != (n, n) or a.shape != (m, n * n):
                raise ValueError("inconsistent SDP block dimensions")
            if np.max(np.abs(c - c.conj().T), initial=0.0) > 1e-10:
                raise ValueError("objective blocks must be Hermitian")

    @property
    def m(self) -> int:
        return self.b.size

    def op(self, X: list[np.ndarray]) -> np.ndarray:
        out = np.zeros(self.m)
        for a, x in zip(self.A, X):
            out += (a.conj() @ x.reshape(-1)).real
        return out

    def adjoint(self, y: np.ndarray) -> list[np.ndarray]:
        res = []
        for n, a in zip(self.blocks, self.A):
            v = (a.T @ y.astype(complex)).reshape(n, n)
            res.append((v + v.conj().T) / 2)
        return res

    def realified(self) -> "SDProgram":
        """Equivalent program on real 2n x 2n symmetric blocks."""
        blocks, C, A = [], [], []
        for n, c, a in zip(self.blocks, self.C, self.A):
            blocks.append(2 * n)
            C.append(tc.realify(c) / 2)
            rows = []
            dense = a.toarray()
            for i in range(self.m):
                rows.append((tc.realify(dense[i].reshape(n, n)) / 2).reshape(-1))
            A.append(np.array(rows).reshape(self.m, 4 * n * n))
        return SDProgram(blocks, C, A, self.b.copy())


@dataclass
class SDPResult:
    status: str
    X: list[np.ndarray]
    y: np.ndarray
    Z: list[np.ndarray]
    primal_objective: float
    dual_objective: float
    primal_infeasibility: float
    dual_infeasibility: float
    iterations: int
    complementarity: float = np.nan

    @property
    def gap(self) -> float:
        return abs(self.primal_objective - self.dual_objective)

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"

    def certificate(self) -> dict:
        return {"status": self.status, "primal_objective": self.primal_objective,
                "dual_objective": self.dual_objective, "gap": self.gap,
                "primal_infeasibility": self.primal_infeasibility,
                "dual_infeasibility": self.dual_infeasibility,
                "iterations": self.iterations}


def _max_step(X, dX) -> float:
    try:
        L = np.linalg.cholesky(X)
    except np.linalg.LinAlgError:
        return 0.0
    Li = sla.solve_triangular(L, np.eye(L.shape[0]), lower=True)
    S = Li @ dX @ Li.conj().T
    lam = np.linalg.eigvalsh((S + S.conj().T) / 2).min()
    return np.inf if lam >= 0 else -1.0 / lam


def _centred(X, Z, ntot, gamma=1e-3) -> bool:
    """lambda_min(XZ) >= gamma * mu over all blocks."""
    mu = sum(np.vdot(x, z).real for x, z in zip(X, Z)) / ntot
    low = min(np.linalg.eigvals(x @ z).real.min() for x, z in zip(X, Z))
    return low >= gamma * mu


def sdp_solve(p: SDProgram, tol: float = 1e-9, max_iter: int = 200) -> SDPResult:
    """Infeasible-start primal-dual path following (HKM direction) with a
    Mehrotra predictor-corrector."""
    m = p.m
    ntot = sum(p.blocks)
    normb = 1 + np.linalg.norm(p.b)
    normC = 1 + max((np.linalg.norm(c) for c in p.C), default=0.0)
    scale = max(10.0, np.sqrt(ntot), normb, normC)
    X = [scale * np.eye(n, dtype=complex) for n in p.blocks]
    Z = [scale * np.eye(n, dtype=complex) for n in p.blocks]
    y = np.zeros(m)
    status = "max_iter"
    it = 0
    for it in range(1, max_iter + 1):
        AtY = p.adjoint(y)
        rp = p.b - p.op(X)
        Rd = [c - z - a for c, z, a in zip(p.C, Z, AtY)]
        pobj = sum(np.vdot(c, x).real for c, x in zip(p.C, X))
        dobj = float(p.b @ y)
        mu = sum(np.vdot(x, z).real for x, z in zip(X, Z)) / ntot
        pinf = np.linalg.norm(rp) / normb
        dinf = max((np.linalg.norm(r) for r in Rd), default=0.0) / normC
        relgap = abs(pobj - dobj) / (1 + abs(pobj) + abs(dobj))
        if pinf < tol and dinf < tol and relgap < tol:
            status = "optimal"
            break
        if not (np.isfinite(pobj) and np.isfinite(dobj)):
            status = "numerical"
            break
        Zinv = [np.linalg.inv(z) for z in Z]
        Zinv = [(zi + zi.conj().T) / 2 for zi in Zinv]
        M = np.zeros((m, m))
        for a, x, zi in zip(p.A, X, Zinv):
            if a.nnz == 0:
                continue
            # rows of H are vec(X A_j Zinv)
            H = a @ np.kron(x.T, zi)
            M += (a.conj() @ np.ascontiguousarray(H.T)).real
        M = (M + M.T) / 2
        try:
            fac = sla.cho_factor(M + 1e-14 * np.trace(M) / max(m, 1) * np.eye(m))
            solve = lambda r: sla.cho_solve(fac, r)
        except np.linalg.LinAlgError:
            Mp = np.linalg.pinv(M, rcond=1e-13)
            solve = lambda r: Mp @ r

        def direction(R):
            # R_b: complementarity target per block, dX = R Zinv - X dZ Zinv
            t = [r @ zi - x @ rd @ zi for r, zi, x, rd in zip(R, Zinv, X, Rd)]
            rhs = rp - p.op([(v + v.conj().T) / 2 for v in t])
            dy = solve(rhs)
            for _ in range(2):
                # refine against the operator itself; M is ill-conditioned near the optimum
                Mdy = p.op([x @ a @ zi for x, a, zi in zip(X, p.adjoint(dy), Zinv)])
                dy = dy + solve(rhs - Mdy)
            dZ = [rd - a for rd, a in zip(Rd, p.adjoint(dy))]
            dX = [r @ zi - x @ dz @ zi for r, zi, x, dz in zip(R, Zinv, X, dZ)]
            dX = [(v + v.conj().T) / 2 for v in dX]
            return dX, dy, dZ

        R0 = [-x @ z for x, z in zip(X, Z)]
        dXp, dyp, dZp = direction(R0)
        ap = min(1.0, min(_max_step(x, d) for x, d in zip(X, dXp)))
        ad = min(1.0, min(_max_step(z, d) for z, d in zip(Z, dZp)))
        mu_aff = sum(np.vdot(x + ap * dx, z + ad * dz).real
                     for x, dx, z, dz in zip(X, dXp, Z, dZp)) / ntot
        sigma = min(1.0, (mu_aff / mu) ** 3) if mu > 0 else 0.0
        R = [sigma * mu * np.eye(n) - x @ z - dx @ dz
             for n, x, z, dx, dz in zip(p.blocks, X, Z, dXp, dZp)]
        dX, dy, dZ = direction(R)
        tau = 0.98 if it < 5 else 0.995
        ap = min(1.0, tau * min(_max_step(x, d) for x, d in zip(X, dX)))
        ad = min(1.0, tau * min(_max_step(z, d) for z, d in zip(Z, dZ)))
        if min(ap, ad) < 0.2:
            # off the central path the corrector can stall; recentre instead
            s = max(sigma, 0.5)
            cX, cy, cZ = direction([s * mu * np.eye(n) - x @ z for n, x, z in zip(p.blocks, X, Z)])
            cp = min(1.0, tau * min(_max_step(x, d) for x, d in zip(X, cX)))
            cd = min(1.0, tau * min(_max_step(z, d) for z, d in zip(Z, cZ)))
            if min(cp, cd) > min(ap, ad):
                dX, dy, dZ, ap, ad = cX, cy, cZ, cp, cd
        # stay in a wide neighbourhood of the central path
        for _ in range(30):
            Xn = [x + ap * d for x, d in zip(X, dX)]
            Zn = [z + ad * d for z, d in zip(Z, dZ)]
            if _centred(Xn, Zn, ntot):
                break
            ap, ad = 0.8 * ap, 0.8 * ad
        X = [(x + x.conj().T) / 2 for x in Xn]
        Z = [(z + z.conj().T) / 2 for z in Zn]
        y = y + ad * dy
        if max(np.linalg.norm(x) for x in X) > 1e12 or np.linalg.norm(y) > 1e12:
            status = "infeasible"
            break
    AtY = p.adjoint(y)
    rp = p.b - p.op(X)
    Rd = [c - z - a for c, z, a in zip(p.C, Z, AtY)]
    pobj = sum(np.vdot(c, x).real for c, x in zip(p.C, X))
    dobj = float(p.b @ y)
    comp = sum(np.vdot(x, z).real for x, z in zip(X, Z))
    return SDPResult(status, X, y, Z, float(pobj), dobj, float(np.linalg.norm(rp)),
                     float(max((np.linalg.norm(r) for r in Rd), default=0.0)), it, float(comp))


def sparse_rows(n: int, entries: list[list[tuple[int, int, complex]]]) -> sp.csr_matrix:
    """Build an (m x n^2) constraint matrix from per-row (r, c, v) lists."""
    data, ri, ci = [], [], []
    for i, row in enumerate(entries):
        for r, c, v in row:
            data.append(v)
            ri.append(i)
            ci.append(r * n + c)
    return sp.csr_matrix((np.array(data, dtype=complex), (ri, ci)), shape=(len(entries), n * n))


# ====================================================================== CPTP fits

class DenseChoiMap:
    """A linear map on Choi matrices given by a dense matrix on row-major vec(J)."""

    def __init__(self, matrix: np.ndarray, in_dim: int, out_dim: int):
        self.M = np.asarray(matrix, dtype=complex)
        self.in_dim, self.out_dim = in_dim, out_dim
        n = in_dim * out_dim
        if self.M.shape[1] != n * n:
            raise ValueError("map does not act on Choi matrices of this size")

    def apply(self, J: np.ndarray) -> np.ndarray:
        return self.M @ J.reshape(-1)

    def adjoint(self, v: np.ndarray) -> np.ndarray:
        n = self.in_dim * self.out_dim
        return (self.M.conj().T @ np.asarray(v).reshape(-1)).reshape(n, n)

    def normal_solver(self):
        n = self.in_dim * self.out_dim
        N = self.M.conj().T @ self.M + _tp_normal(self.in_dim, self.out_dim)
        w, U = np.linalg.eigh((N + N.conj().T) / 2)
        cut = 1e-11 * max(1.0, w.max())
        inv = np.where(w > cut, 1 / np.where(w > cut, w, 1), 0.0)

        def apply_pinv(V):
            return (U @ (inv * (U.conj().T @ V.reshape(-1)))).reshape(n, n)

        def apply_normal(V):
            return (N @ V.reshape(-1)).reshape(n, n)

        return apply_normal, apply_pinv


def _tp_normal(in_dim, out_dim):
    n = in_dim * out_dim
    T = np.zeros((in_dim * in_dim, n * n))
    for e in range(out_dim):
        for i in range(in_dim):
            for j in range(in_dim):
                T[i * in_dim + j, (e * in_dim + i) * n + (e * in_dim + j)] = 1.0
    return T.T @ T


class FactorChoiMap:
    """J_G -> Choi((id (x) G) o L) for G acting on one factor of L's output.

    ``L`` is a tensor ``L[r, e, s, f]``: ``r``/``s`` collect every index of
    L's Choi other than the acted-on factor (row / column copies) and
    ``e``/``f`` the acted-on factor.  The image is ``C[r, e', s, f']``.
    """

    def __init__(self, L: np.ndarray, out_dim: int):
        L = np.asarray(L, dtype=complex)
        self.L = L
        self.R, self.in_dim = L.shape[0], L.shape[1]
        self.out_dim = out_dim
        d = self.in_dim
        Lm = L.transpose(0, 2, 1, 3).reshape(self.R * self.R, d * d)
        self.gram = Lm.conj().T @ Lm           # indexed [(e, f), (e2, f2)]

    def apply(self, J: np.ndarray) -> np.ndarray:
        dp, d = self.out_dim, self.in_dim
        Jt = J.reshape(dp, d, dp, d)
        C = np.einsum("aebf,resf->rasb", Jt, self.L, optimize=True)
        return C.reshape(-1)

    def matrix(self) -> np.ndarray:
        """The map as a dense matrix on row-major vec(J)."""
        dp, R, d = self.out_dim, self.R, self.in_dim
        eye = np.eye(dp)
        M = np.einsum("resf,ac,bd->rasbcedf", self.L, eye, eye)
        return M.reshape(R * dp * R * dp, (dp * d) ** 2)

    def adjoint(self, v: np.ndarray) -> np.ndarray:
        dp, d, R = self.out_dim, self.in_dim, self.R
        C = np.asarray(v).reshape(R, dp, R, dp)
        Jt = np.einsum("resf,rasb->aebf", self.L.conj(), C, optimize=True)
        return Jt.reshape(dp * d, dp * d)

    def normal_solver(self):
        dp, d = self.out_dim, self.in_dim
        n = dp * d
        # Rearranged variable V[(a, b), (e, f)] = J[a, e, b, f].
        g, W = np.linalg.eigh((self.gram + self.gram.conj().T) / 2)
        Gt = self.gram.T
        omega = np.eye(dp).reshape(-1) / np.sqrt(dp)
        cut = 1e-11 * max(1.0, g.max())

        def to_v(J):
            return J.reshape(dp, d, dp, d).transpose(0, 2, 1, 3).reshape(dp * dp, d * d)

        def from_v(V):
            return V.reshape(dp, dp, d, d).transpose(0, 2, 1, 3).reshape(n, n)

        Wc = W.conj()

        def apply_normal(J):
            V = to_v(J)
            out = V @ Gt + np.outer(omega, omega.conj() @ V) * dp
            return from_v(out)

        def apply_pinv(J):
            V = to_v(J)
            Vp = V @ Wc                       # eigen-coordinates of Gt = Wc g Wc^H
            along = np.outer(omega, omega.conj() @ Vp)
            perp = Vp - along
            inv_perp = np.where(g > cut, 1 / np.where(g > cut, g, 1), 0.0)
            res = along / (g + dp) + perp * inv_perp
            return from_v(res @ Wc.conj().T)

        return apply_normal, apply_pinv


@dataclass
class CPFit:
    choi: np.ndarray | None
    residual: float
    iterations: int
    best: np.ndarray | None = field(default=None, repr=False)

    @property
    def found(self) -> bool:
        return self.choi is not None


def _tp_fix(J, in_dim, out_dim):
    T = np.einsum("aiaj->ij", J.reshape(out_dim, in_dim, out_dim, in_dim))
    T = (T + T.conj().T) / 2
    w, V = np.linalg.eigh(T)
    live = w > 1e-12 * max(1.0, w.max())
    S = (V[:, live] / np.sqrt(w[live])) @ V[:, live].conj().T
    K = np.kron(np.eye(out_dim), S)
    J = K @ J @ K.conj().T
    if not live.all():
        # directions the input marginal lost get the completely depolarising output
        Q = V[:, ~live] @ V[:, ~live].conj().T
        J = J + np.kron(np.eye(out_dim) / out_dim, Q)
    return (J + J.conj().T) / 2


def cp_fit(affine_map, target, in_dim: int, out_dim: int, tol: float = 1e-6,
           max_iter: int = 20000, x0: np.ndarray | None = None,
           method: str = "douglas-rachford") -> CPFit:
    """Find a CPTP Choi matrix J (out (x) in) with affine_map(J) = target.

    Splits the constraints into the positive cone and the affine set
    {A(J) = target, tr_out J = I} and iterates their projections, either by
    Douglas-Rachford (default) or by Dykstra.  Douglas-Rachford copes much
    better with solution sets on a face of the cone, which is the typical
    situation for exact recoveries.  The answer is returned iff the final
    residual ||A(J) - target||_F is at most ``tol``.
    """
    if isinstance(affine_map, np.ndarray):
        affine_map = DenseChoiMap(affine_map, in_dim, out_dim)
    if method not in ("douglas-rachford", "dykstra"):
        raise ValueError(f"unknown method {method!r}")
    target = np.asarray(target, dtype=complex).reshape(-1)
    n = in_dim * out_dim
    apply_normal, apply_pinv = affine_map.normal_solver()
    tp_rhs = np.zeros((n, n), dtype=complex)
    for e in range(out_dim):
        tp_rhs[e * in_dim:(e + 1) * in_dim, e * in_dim:(e + 1) * in_dim] = np.eye(in_dim)
    h = affine_map.adjoint(target) + tp_rhs

    def project_affine(J):
        P = J - apply_pinv(apply_normal(J) - h)
        return (P + P.conj().T) / 2

    def resid(J):
        return float(np.linalg.norm(affine_map.apply(J) - target))

    z = np.eye(n, dtype=complex) / out_dim if x0 is None else np.asarray(x0, dtype=complex)
    q = np.zeros_like(z)
    best, best_res = None, np.inf
    last_gain = 0
    goal = min(tol * 1e-3, 1e-10)
    it = 0
    for it in range(1, max_iter + 1):
        if method == "douglas-rachford":
            y = project_affine(z)
            x = tc.psd_project(2 * y - z)
            z = z + x - y
        else:
            y = project_affine(z)
            x = tc.psd_project(y + q)
            q = y + q - x
            z = x
        if it % 10 and it > 2:
            continue
        cand = _tp_fix(x, in_dim, out_dim)
        r = resid(cand)
        if r < best_res * (1 - 1e-3):
            last_gain = it
        if r < best_res:
            best, best_res = cand, r
        if best_res <= goal or it - last_gain > 500:
            break
    if best is None:
        best = _tp_fix(z, in_dim, out_dim)
        best_res = resid(best)
    ok = best_res <= tol and np.linalg.eigvalsh(best).min() >= -1e-9
    return CPFit(best if ok else None, best_res, it, best)


# ====================================================================== stochastic fits

@dataclass
class StochasticFit:
    table: np.ndarray | None
    residual: float
    lp: LPResult
    best: np.ndarray | None = field(default=None, repr=False)

    @property
    def found(self) -> bool:
        return self.table is not None


def stochastic_fit(matrix: np.ndarray, target: np.ndarray, in_dim: int, out_dim: int,
                   tol: float = 1e-9) -> StochasticFit:
    """Column-stochastic G (out x in) minimising ||M vec(G) - target||_1 by LP."""
    M = np.asarray(matrix, dtype=float)
    t = np.asarray(target, dtype=float).ravel()
    k = out_dim * in_dim
    r = t.size
    A = np.zeros((r + in_dim, k + 2 * r))
    A[:r, :k] = M
    A[:r, k:k + r] = np.eye(r)
    A[:r, k + r:] = -np.eye(r)
    for i in range(in_dim):
        A[r + i, [o * in_dim + i for o in range(out_dim)]] = 1.0
    b = np.concatenate([t, np.ones(in_dim)])
    c = np.concatenate([np.zeros(k), np.ones(2 * r)])
    res = lp_solve(LinearProgram(c, A, b))
    if not res.optimal:
        return StochasticFit(None, np.inf, res)
    G = np.clip(res.x[:k].reshape(out_dim, in_dim), 0, None)
    G = G / G.sum(axis=0, keepdims=True)
    resid = float(np.max(np.abs(M @ G.reshape(-1) - t))) if r else 0.0
    return StochasticFit(G if resid <= tol else None, resid, res, G)
