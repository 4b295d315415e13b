import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from dilatio import channels as ch
from dilatio import optim
from dilatio import tensor_core as tc
from dilatio.metrics import diamond_sdp


def herm_rows(mats):
    return np.array([m.reshape(-1) for m in mats])


def random_herm(rng, n):
    g = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return (g + g.conj().T) / 2


def random_lp(rng):
    """A feasible, bounded LP in standard form with a known interior certificate."""
    n = int(rng.integers(2, 51))
    m = int(rng.integers(1, n + 1))
    A = rng.standard_normal((m, n))
    x0 = rng.uniform(0.1, 1.0, n)
    y0 = rng.standard_normal(m)
    c = A.T @ y0 + rng.uniform(0.0, 1.0, n)
    return optim.LinearProgram(c, A, A @ x0)


def random_sdp(rng, blocks):
    """Strictly feasible primal and dual, so the optimum is attained on both sides."""
    m = int(rng.integers(1, 2 * max(blocks) + 1))
    A, C, X0 = [], [], []
    y0 = rng.standard_normal(m)
    b = np.zeros(m)
    for n in blocks:
        mats = [random_herm(rng, n) for _ in range(m)]
        A.append(herm_rows(mats))
        x0 = tc.random_density(n, rng) + np.eye(n) / n
        X0.append(x0)
        b += np.array([np.real(np.trace(a @ x0)) for a in mats])
        z0 = tc.random_density(n, rng) + np.eye(n)
        C.append(sum(y * a for y, a in zip(y0, mats)) + z0)
    return optim.SDProgram(list(blocks), C, A, b)


# ---------------------------------------------------------------- LP

def test_lp_bounded_maximum():
    p = optim.LinearProgram([-1.0], np.zeros((0, 1)), [], bounds=[(0.0, 1.0)])
    res = optim.lp_solve(p)
    assert res.optimal and np.isclose(-res.objective, 1.0)


def test_lp_decomposes_bit_refresh():
    # the four functions on one bit: const 0, const 1, identity, flip
    funcs = [(0, 0), (1, 1), (0, 1), (1, 0)]
    cols = []
    for f in funcs:
        t = np.zeros((2, 2))
        t[list(f), [0, 1]] = 1
        cols.append(t.reshape(-1))
    res = optim.lp_feasible(np.array(cols).T, np.full(4, 0.5))
    assert res.optimal
    assert np.allclose(np.array(cols).T @ res.x, 0.5)


def test_lp_super_normalised_table_is_infeasible():
    # weights on two point masses, normalised, asked to reproduce (0.7, 0.6)
    A = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    res = optim.lp_feasible(A, [0.7, 0.6, 1.0])
    assert res.status == "infeasible"


def test_lp_unbounded():
    p = optim.LinearProgram([-1.0, 0.0], [[1.0, -1.0]], [0.0])
    assert optim.lp_solve(p).status == "unbounded"


def test_lp_rejects_malformed():
    with pytest.raises(ValueError):
        optim.LinearProgram([1.0], [[1.0]], [np.inf])
    with pytest.raises(ValueError):
        optim.LinearProgram([1.0, 1.0], [[1.0, 1.0]], [1.0, 2.0])


def test_lp_duality_on_random_programs(rng):
    for _ in range(200):
        p = random_lp(rng)
        res = optim.lp_solve(p)
        ref = linprog(p.c, A_eq=p.A_eq, b_eq=p.b_eq, bounds=p.bounds, method="highs")
        assert res.optimal and ref.status == 0
        assert abs(res.objective - ref.fun) <= 1e-7 * max(1.0, abs(ref.fun))
        assert res.primal_residual <= 1e-8
        assert res.dual_residual <= 1e-8
        assert res.gap <= 1e-7
        assert res.cs_residual <= 1e-7


def test_lp_general_bounds_match_reference(rng):
    for _ in range(20):
        n = int(rng.integers(2, 8))
        A = rng.standard_normal((2, n))
        x0 = rng.uniform(-1, 1, n)
        bounds = [(-2.0, 2.0)] * n
        c = rng.standard_normal(n)
        res = optim.lp_solve(optim.LinearProgram(c, A, A @ x0, bounds))
        ref = linprog(c, A_eq=A, b_eq=A @ x0, bounds=bounds, method="highs")
        assert res.optimal and abs(res.objective - ref.fun) <= 1e-8


# ---------------------------------------------------------------- SDP

def test_sdp_trace_above_identity():
    # X = I + S with S >= 0, minimise tr X
    basis = []
    for r, c, v in optim.hermitian_basis(2):
        h = np.zeros((2, 2), dtype=complex)
        h[r, c] = v
        basis.append(h)
    A_x = herm_rows(basis)
    b = np.array([np.real(np.trace(h)) for h in basis])
    p = optim.SDProgram([2, 2], [np.eye(2), np.zeros((2, 2))], [A_x, -A_x], b)
    res = optim.sdp_solve(p)
    assert res.optimal
    assert np.isclose(res.primal_objective, 2.0, atol=1e-7)
    assert res.gap <= 1e-6


def test_sdp_zero_difference_has_zero_diamond_norm():
    J = np.zeros((4, 4))
    res = optim.sdp_solve(diamond_sdp(J, 2, 2))
    assert res.optimal
    assert abs(res.dual_objective) <= 1e-7 and res.gap <= 1e-6


def lambda_min_sdp(H):
    """min <H, X> over density matrices, which is lambda_min(H)."""
    n = H.shape[0]
    return optim.sdp_solve(optim.SDProgram([n], [H], [np.eye(n).reshape(1, -1)], [1.0]))


def test_sdp_numerical_range_sweep_matches_eigenvalues(rng):
    A = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
    thetas = np.linspace(0, 2 * np.pi, 24, endpoint=False)
    via_sdp, via_eig = [], []
    for t in thetas:
        H = (np.exp(1j * t) * A + np.conj(np.exp(1j * t)) * A.conj().T) / 2
        res = lambda_min_sdp(H)
        assert res.gap <= 1e-6
        via_sdp.append(res.primal_objective)
        via_eig.append(tc.herm_eig(H)[0][-1])
    assert np.allclose(via_sdp, via_eig, atol=1e-6)
    assert abs(max(via_sdp) - max(via_eig)) <= 1e-6


@given(seed=st.integers(0, 2**32 - 1),
       blocks=st.lists(st.integers(1, 16), min_size=1, max_size=2))
@settings(max_examples=40, deadline=None)
def test_sdp_certificates_on_random_programs(seed, blocks):
    rng = np.random.default_rng(seed)
    p = random_sdp(rng, blocks)
    res = optim.sdp_solve(p)
    assert res.optimal
    assert res.primal_infeasibility <= 1e-6
    assert res.dual_infeasibility <= 1e-6
    assert res.gap <= 1e-6 * max(1.0, abs(res.primal_objective))
    for X, Z in zip(res.X, res.Z):
        assert np.linalg.eigvalsh(X).min() >= -1e-8
        assert np.linalg.eigvalsh(Z).min() >= -1e-8


def test_sdp_realified_program_agrees(rng):
    for _ in range(5):
        p = random_sdp(rng, [int(rng.integers(2, 5))])
        a = optim.sdp_solve(p)
        b = optim.sdp_solve(p.realified())
        assert a.optimal and b.optimal
        assert abs(a.primal_objective - b.primal_objective) <= 1e-6


def test_sdp_rejects_inconsistent_blocks():
    with pytest.raises(ValueError):
        optim.SDProgram([2], [np.eye(3)], [np.zeros((1, 4))], [1.0])
    with pytest.raises(ValueError):
        optim.SDProgram([2], [np.array([[0, 1], [0, 0]])], [np.zeros((1, 4))], [1.0])


# ---------------------------------------------------------------- CPTP fits

def identity_choi(d):
    v = np.eye(d).reshape(-1)
    return np.outer(v, v)


def test_cp_fit_reachable_by_identity():
    J = identity_choi(2)
    fit = optim.cp_fit(np.eye(16), J, 2, 2, tol=1e-9)
    assert fit.found
    assert np.linalg.norm(fit.choi - J) <= 1e-9


def test_cp_fit_parity_of_a_die(rng):
    """G on the hidden copy of a die roll with (id x G)(copy) = (roll, parity)."""
    p = rng.dirichlet(np.ones(6))
    L = np.zeros((6, 6, 6, 6), dtype=complex)   # [visible, hidden, visible, hidden]
    goal = np.zeros((6, 2, 6, 2), dtype=complex)
    for x in range(6):
        L[x, x, x, x] = p[x]
        goal[x, x % 2, x, x % 2] = p[x]
    fit = optim.cp_fit(optim.FactorChoiMap(L, 2), goal, 6, 2, tol=1e-7)
    assert fit.found
    G = ch.QuantumChannel(ch.Interface([ch.Port("e", 6, ch.QUANTUM)]),
                          ch.Interface([ch.Port("f", 2, ch.QUANTUM)]), fit.choi)
    for x in range(6):
        assert np.allclose(G(tc.proj(tc.ket(x, 6))), tc.proj(tc.ket(x % 2, 2)), atol=1e-6)


def test_stochastic_fit_parity_is_exact(rng):
    p = rng.dirichlet(np.ones(6))
    # rows (x, e'), columns vec(G)[e', e]
    M = np.zeros((12, 12))
    t = np.zeros(12)
    for x in range(6):
        for f in range(2):
            M[2 * x + f, f * 6 + x] = p[x]
        t[2 * x + x % 2] = p[x]
    fit = optim.stochastic_fit(M, t, 6, 2)
    assert fit.found
    parity = np.zeros((2, 6))
    parity[np.arange(6) % 2, np.arange(6)] = 1
    assert np.allclose(fit.table, parity)


def test_cp_fit_trace_mismatch_is_unreachable():
    fit = optim.cp_fit(np.eye(16), 2 * identity_choi(2), 2, 2, tol=1e-6)
    assert not fit.found and fit.residual > 1e-3


@given(seed=st.integers(0, 2**32 - 1), din=st.integers(1, 3), dout=st.integers(1, 3))
@settings(max_examples=15)
def test_cp_fit_output_is_a_channel(seed, din, dout):
    rng = np.random.default_rng(seed)
    n = din * dout
    M = rng.standard_normal((n * n, n * n)) + 1j * rng.standard_normal((n * n, n * n))
    target = rng.standard_normal(n * n)
    fit = optim.cp_fit(M, target, din, dout, tol=np.inf, max_iter=500)
    c = ch.QuantumChannel(ch.Interface([ch.Port("x", din, ch.QUANTUM)]),
                          ch.Interface([ch.Port("y", dout, ch.QUANTUM)]), fit.choi)
    assert ch.validate(c, tol=1e-8)


def test_cp_fit_recovers_a_random_channel(rng):
    c = ch.random_quantum(ch.Interface([ch.Port("x", 2, ch.QUANTUM)]),
                          ch.Interface([ch.Port("y", 2, ch.QUANTUM)]), rng)
    fit = optim.cp_fit(np.eye(16), c.choi, 2, 2, tol=1e-8)
    assert fit.found and np.linalg.norm(fit.choi - c.choi) <= 1e-8
