"""Distances between states and channels.

``diamond_distance`` solves the standard SDP for half the diamond norm of
the difference and pairs it with a see-saw lower bound.  Isometric
channels have closed forms in terms of the numerical range of ``S1* S2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import channels as ch
from . import optim
from . import tensor_core as tc
from .channels import ClassicalChannel, Channel, InterfaceError, QuantumChannel

GRID = 720
GOLDEN_TOL = 1e-10


# ---------------------------------------------------------------- trace distance

def _state_matrix(x) -> np.ndarray:
    if isinstance(x, QuantumChannel):
        if x.input.total != 1:
            raise InterfaceError("expected a state")
        return x.choi
    return tc.as_matrix(x)


def trace_distance(a, b) -> float:
    """Half the trace norm for states; worst-case total variation for
    classical channels (classical states are the one-input case)."""
    if isinstance(a, ClassicalChannel) or isinstance(b, ClassicalChannel):
        if not (isinstance(a, ClassicalChannel) and isinstance(b, ClassicalChannel)):
            raise InterfaceError("cannot compare a classical with a quantum object")
        if a.input != b.input or a.output != b.output:
            raise InterfaceError("interfaces differ")
        return float(0.5 * np.abs(a.table - b.table).sum(axis=0).max())
    if isinstance(a, QuantumChannel) and isinstance(b, QuantumChannel):
        if a.input != b.input or a.output != b.output:
            raise InterfaceError("interfaces differ")
    ra, rb = _state_matrix(a), _state_matrix(b)
    if ra.shape != rb.shape:
        raise InterfaceError("states of different dimension")
    return 0.5 * tc.trace_norm(ra - rb)


# ---------------------------------------------------------------- diamond distance

@dataclass
class DiamondDistance:
    value: float
    lower_bound: float
    certificate: dict = field(default_factory=dict)

    def __float__(self):
        return float(self.value)


def _herm_basis_rows(n: int):
    """Sparse (n^2 x n^2) matrix whose row i is vec(H_i) for an orthonormal
    Hermitian basis, plus the list of basis triples."""
    basis = optim.hermitian_basis(n)
    data, ri, ci = [], [], []
    for i, (r, c, v) in enumerate(basis):
        data.extend(v)
        ri.extend([i] * len(v))
        ci.extend(r * n + c)
    return sp.csr_matrix((np.array(data, dtype=complex), (ri, ci)), shape=(len(basis), n * n)), basis


def _tr_out_rows(basis, d_out: int, d_in: int):
    """Rows vec(tr_out H_i) on the d_in x d_in block."""
    data, ri, ci = [], [], []
    for i, (r, c, v) in enumerate(basis):
        for rr, cc, vv in zip(r, c, v):
            o1, i1 = divmod(int(rr), d_in)
            o2, i2 = divmod(int(cc), d_in)
            if o1 == o2:
                data.append(vv)
                ri.append(i)
                ci.append(i1 * d_in + i2)
    return sp.csr_matrix((np.array(data, dtype=complex), (ri, ci)), shape=(len(basis), d_in * d_in))


def diamond_sdp(J: np.ndarray, d_out: int, d_in: int, formulation: str = "trace") -> optim.SDProgram:
    """SDP whose optimal value is minus half the diamond norm of the map
    with Hermitian Choi matrix ``J`` (a difference of channels)."""
    n = d_out * d_in
    J = tc.as_matrix(J)
    H, basis = _herm_basis_rows(n)
    k = H.shape[0]
    T = _tr_out_rows(basis, d_out, d_in)
    zero_row = lambda size: sp.csr_matrix((1, size), dtype=complex)
    eye_in = sp.csr_matrix(np.eye(d_in, dtype=complex).reshape(1, -1))
    if formulation == "trace":
        # y = (coords of Z, t);  Z - J >= 0,  Z >= 0,  t I - tr_out Z >= 0;  max -t
        A1 = sp.vstack([-H, zero_row(n * n)])
        A2 = sp.vstack([-H, zero_row(n * n)])
        A3 = sp.vstack([T, -eye_in])
        b = np.zeros(k + 1)
        b[-1] = -1.0
        return optim.SDProgram([n, n, d_in], [-J, np.zeros((n, n)), np.zeros((d_in, d_in))],
                               [A1, A2, A3], b)
    if formulation == "block":
        # y = (coords of Y0, coords of Y1, t0, t1)
        # [[Y0, -J], [-J, Y1]] >= 0,  t_k I - tr_out Y_k >= 0;  max -(t0 + t1) / 4
        big = 2 * n
        Hd = H.tocoo()
        r0 = Hd.col // n
        c0 = Hd.col % n
        top = sp.csr_matrix((-Hd.data, (Hd.row, r0 * big + c0)), shape=(k, big * big))
        bot = sp.csr_matrix((-Hd.data, (Hd.row, (r0 + n) * big + (c0 + n))), shape=(k, big * big))
        A_big = sp.vstack([top, bot, zero_row(big * big), zero_row(big * big)])
        zt = sp.csr_matrix((k, d_in * d_in), dtype=complex)
        A_t0 = sp.vstack([T, zt, -eye_in, zero_row(d_in * d_in)])
        A_t1 = sp.vstack([zt, T, zero_row(d_in * d_in), -eye_in])
        C_big = np.zeros((big, big), dtype=complex)
        C_big[:n, n:] = -J
        C_big[n:, :n] = -J.conj().T
        b = np.zeros(2 * k + 2)
        b[-2:] = -0.25
        return optim.SDProgram([big, d_in, d_in], [C_big, np.zeros((d_in, d_in)), np.zeros((d_in, d_in))],
                               [A_big, A_t0, A_t1], b)
    raise ValueError(f"unknown formulation {formulation!r}")


def _see_saw(J: np.ndarray, d_out: int, d_in: int, rng: np.random.Generator,
             restarts: int = 3, steps: int = 60) -> float:
    Jt = J.reshape(d_out, d_in, d_out, d_in)
    best = 0.0
    for _ in range(restarts):
        phi = rng.standard_normal((d_in, d_in)) + 1j * rng.standard_normal((d_in, d_in))
        phi /= np.linalg.norm(phi)
        prev = -1.0
        for _ in range(steps):
            out = np.einsum("oipj,ir,js->orps", Jt, phi, phi.conj()).reshape(d_out * d_in, -1)
            out = (out + out.conj().T) / 2
            w, v = np.linalg.eigh(out)
            val = 0.5 * np.abs(w).sum()
            best = max(best, val)
            if val - prev < 1e-13:
                break
            prev = val
            pos = v[:, w > 0]
            P = (pos @ pos.conj().T).reshape(d_out, d_in, d_out, d_in)
            Q = np.einsum("oipj,psor->irjs", Jt, P).reshape(d_in * d_in, -1)
            Q = np.conj((Q + Q.conj().T) / 2)
            _, qv = np.linalg.eigh(Q)
            phi = qv[:, -1].reshape(d_in, d_in)
    return float(best)


def diamond_distance(a: Channel, b: Channel, tol: float = ch.SOLVER_TOL, formulation: str = "trace",
                     see_saw: bool = True, seed: int = 0, max_iter: int = 200) -> DiamondDistance:
    if a.input != b.input or a.output != b.output:
        raise InterfaceError("channels must share interfaces")
    qa, qb = ch.as_quantum(a), ch.as_quantum(b)
    J = qa.choi - qb.choi
    d_out, d_in = qa.output.total, qa.input.total
    if np.max(np.abs(J), initial=0.0) <= 1e-14:
        return DiamondDistance(0.0, 0.0, {"status": "optimal", "gap": 0.0, "primal_objective": 0.0,
                                          "dual_objective": 0.0, "primal_infeasibility": 0.0,
                                          "dual_infeasibility": 0.0, "iterations": 0})
    res = optim.sdp_solve(diamond_sdp(J, d_out, d_in, formulation), tol=min(1e-9, tol * 1e-3),
                          max_iter=max_iter)
    cert = res.certificate()
    if res.status not in ("optimal", "max_iter") or res.gap > tol:
        raise RuntimeError(f"diamond SDP failed: {cert}")
    value = -res.dual_objective
    lower = _see_saw(J, d_out, d_in, np.random.default_rng(seed)) if see_saw else 0.0
    cert["see_saw_gap"] = value - lower if see_saw else None
    return DiamondDistance(float(max(value, 0.0)), lower, cert)


# ---------------------------------------------------------------- isometric channels

@dataclass(frozen=True)
class IsoFidelities:
    F: float
    FF: float
    d_diamond: float
    d_inf: float
    theta: float
    witness: np.ndarray = field(repr=False, default=None)


def _lam_min(H1, H2, theta):
    m = np.cos(theta) * H1 - np.sin(theta) * H2
    return np.linalg.eigvalsh(m)[0]


def fake_fidelity(M: np.ndarray) -> tuple[float, float]:
    """max over theta of lambda_min(Re(e^{i theta} M)); returns (value, theta)."""
    M = tc.as_matrix(M)
    H1 = (M + M.conj().T) / 2
    H2 = (M - M.conj().T) / 2j
    thetas = np.linspace(0, 2 * np.pi, GRID, endpoint=False)
    stack = np.cos(thetas)[:, None, None] * H1 - np.sin(thetas)[:, None, None] * H2
    vals = np.linalg.eigvalsh(stack)[:, 0]
    k = int(np.argmax(vals))
    h = 2 * np.pi / GRID
    lo, hi = thetas[k] - h, thetas[k] + h
    g = (np.sqrt(5) - 1) / 2
    c, d = hi - g * (hi - lo), lo + g * (hi - lo)
    fc, fd = _lam_min(H1, H2, c), _lam_min(H1, H2, d)
    while hi - lo > GOLDEN_TOL:
        if fc > fd:
            hi, d, fd = d, c, fc
            c = hi - g * (hi - lo)
            fc = _lam_min(H1, H2, c)
        else:
            lo, c, fc = c, d, fd
            d = lo + g * (hi - lo)
            fd = _lam_min(H1, H2, d)
    theta = (lo + hi) / 2
    best = max(vals[k], _lam_min(H1, H2, theta))
    if best == vals[k]:
        theta = thetas[k]
    return float(best), float(theta)


def iso_fidelities(s1, s2, tol: float = 1e-9) -> IsoFidelities:
    s1, s2 = tc.as_matrix(s1), tc.as_matrix(s2)
    if s1.shape != s2.shape:
        raise InterfaceError("isometries of different shape")
    for s in (s1, s2):
        if not tc.is_isometry(s, tol):
            raise ValueError("input is not an isometry")
    M = s1.conj().T @ s2
    FF, theta = fake_fidelity(M)
    FF = float(np.clip(FF, -1.0, 1.0))
    F = max(0.0, FF)
    m = np.cos(theta) * (M + M.conj().T) / 2 - np.sin(theta) * (M - M.conj().T) / 2j
    _, v = np.linalg.eigh(m)
    return IsoFidelities(F, FF, float(np.sqrt(max(0.0, 1 - F * F))),
                         float(np.sqrt(max(0.0, 2 - 2 * FF))), theta, v[:, 0])


def unitary_arc(u) -> float:
    """Length of the shortest arc of the unit circle holding the spectrum of ``u``."""
    ang = np.sort(np.mod(np.angle(np.linalg.eigvals(tc.as_matrix(u))), 2 * np.pi))
    gaps = np.diff(np.concatenate([ang, [ang[0] + 2 * np.pi]]))
    return float(2 * np.pi - gaps.max())


# ---------------------------------------------------------------- states

def state_fidelity_purified(rho, sigma) -> tuple[float, float]:
    r, s = _state_matrix(rho), _state_matrix(sigma)
    for m in (r, s):
        if abs(np.trace(m) - 1) > 1e-8 or np.linalg.eigvalsh((m + m.conj().T) / 2).min() < -1e-9:
            raise ValueError("not a density matrix")
    F = float(np.sum(tc.singular_values(tc.psd_sqrt(r) @ tc.psd_sqrt(s))))
    F = min(F, 1.0)
    return F, float(np.sqrt(max(0.0, 1 - F * F)))


# ---------------------------------------------------------------- purified diamond distance

@dataclass(frozen=True)
class MetricInterval:
    lower: float
    upper: float
    methods: dict

    @property
    def width(self) -> float:
        return self.upper - self.lower


def _pad_env(S: np.ndarray, d_out: int, r: int, target: int) -> np.ndarray:
    d_in = S.shape[1]
    T = np.zeros((d_out, target, d_in), dtype=complex)
    T[:, :r, :] = S.reshape(d_out, r, d_in)
    return T


def pdiamond_interval(a: Channel, b: Channel, tol: float = ch.SOLVER_TOL, steps: int = 40,
                      seed: int = 0) -> MetricInterval:
    from .dilation import stinespring_minimal
    qa, qb = ch.as_quantum(a), ch.as_quantum(b)
    dd = diamond_distance(qa, qb, tol=tol, see_saw=False)
    lower = dd.value
    s1, s2 = stinespring_minimal(qa), stinespring_minimal(qb)
    d_out = qa.output.total
    if s1.env_dim == 1 and s2.env_dim == 1:
        iso = iso_fidelities(s1.isometry, s2.isometry)
        if abs(iso.d_diamond - lower) > max(tol, 1e-6):
            raise RuntimeError("SDP disagrees with the isometric closed form")
        return MetricInterval(iso.d_diamond, iso.d_diamond,
                              {"lower": "isometric closed form", "upper": "isometric closed form",
                               "sdp": dd.value, "certificate": dd.certificate})
    r = max(s1.env_dim, s2.env_dim)
    T1 = _pad_env(s1.isometry, d_out, s1.env_dim, r)
    T2 = _pad_env(s2.isometry, d_out, s2.env_dim, r)
    A1 = T1.reshape(d_out * r, -1)
    best = np.inf
    V = np.eye(r, dtype=complex)
    for _ in range(steps):
        A2 = np.einsum("kl,olj->okj", V, T2).reshape(d_out * r, -1)
        iso = iso_fidelities(A1, A2)
        best = min(best, iso.d_diamond)
        rho = tc.proj(iso.witness)
        # maximize Re tr(S1* (1 (x) V) S2 rho) over unitaries V
        X = np.einsum("okj,ji,oli->kl", T2, rho, T1.conj())
        U, _, Wh = np.linalg.svd(X)
        V_new = (U @ Wh).conj().T
        if np.allclose(V_new, V, atol=1e-12):
            break
        V = V_new
    root = float(np.sqrt(2 * lower))
    upper = min(root, best)
    if upper < lower:
        if lower - upper > max(tol, 1e-6):
            raise RuntimeError("upper bound fell below the diamond distance")
        upper = lower
    return MetricInterval(lower, upper, {"lower": "diamond SDP", "upper":
                                         "sqrt(2 d)" if root <= best else "stinespring search",
                                         "search": best, "certificate": dd.certificate})


# ---------------------------------------------------------------- Bures angle relation

@dataclass(frozen=True)
class BPCheck:
    beta: float
    P: float
    residual: float


def bp_check(F: float | None = None, sup_ff: float | None = None, pair=None) -> BPCheck:
    """beta from the supremal fake fidelity and P from beta.

    For an isometric pair the supremum of FF over dilation pairs is F, since
    enlarging the environment can push FF up to zero.
    """
    if pair is not None:
        F = iso_fidelities(*pair).F
    if sup_ff is None:
        if F is None:
            raise ValueError("need F, sup_ff or an isometric pair")
        sup_ff = F
    sup_ff = float(np.clip(sup_ff, 0.0, 1.0))
    beta = float(np.sqrt(max(0.0, 2 - 2 * sup_ff)))
    P = float(beta * np.sqrt(max(0.0, 1 - beta * beta / 4)))
    residual = abs(np.sqrt(max(0.0, 1 - P * P)) - (1 - beta * beta / 2))
    return BPCheck(beta, P, float(residual))
