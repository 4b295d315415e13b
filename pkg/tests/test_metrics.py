import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dilatio import channels as ch
from dilatio import metrics as mt
from dilatio import tensor_core as tc
from dilatio.channels import ClassicalChannel, Interface, InterfaceError, Port
from dilatio.fixtures import bit_refresh_plain

Q = ch.QUANTUM
SZ = np.diag([1.0, -1.0]).astype(complex)


def qudit(name, d):
    return Interface([Port(name, d, Q)])


def cdit(name, d):
    return Interface([Port(name, d)])


def arc_fidelity(u):
    """Oracle: cos of half the shortest arc holding the spectrum, clipped at zero."""
    ang = np.sort(np.angle(np.linalg.eigvals(u)) % (2 * np.pi))
    gaps = np.append(np.diff(ang), ang[0] + 2 * np.pi - ang[-1])
    gamma = 2 * np.pi - gaps.max()
    return max(0.0, np.cos(gamma / 2)) if gamma < np.pi else 0.0


def sampled_range_distance(M, rng, n=4000):
    """Upper bound on the distance from 0 to the numerical range of M."""
    d = M.shape[0]
    v = rng.standard_normal((n, d)) + 1j * rng.standard_normal((n, d))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return np.abs(np.einsum("ki,ij,kj->k", v.conj(), M, v)).min()


def sampled_diamond_lower(a, b, rng, n=400):
    """Lower bound: 1/2 ||(a - b) (x) id (psi)||_1 over random pure inputs."""
    J = (a.choi - b.choi)
    do, di = a.output.total, a.input.total
    Jt = J.reshape(do, di, do, di)
    best = 0.0
    for _ in range(n):
        phi = rng.standard_normal((di, di)) + 1j * rng.standard_normal((di, di))
        phi /= np.linalg.norm(phi)
        out = np.einsum("oipj,ir,js->orps", Jt, phi, phi.conj()).reshape(do * di, -1)
        best = max(best, 0.5 * tc.trace_norm(out))
    return best


# ---------------------------------------------------------------- trace distance

def test_d1_point_masses():
    a = ch.classical_state([1, 0], cdit("x", 2))
    b = ch.classical_state([0, 1], cdit("x", 2))
    u = ch.classical_state([0.5, 0.5], cdit("x", 2))
    assert mt.trace_distance(a, b) == 1.0
    assert mt.trace_distance(a, u) == 0.5
    assert mt.trace_distance(a, a) == 0.0


def test_d1_states(rng):
    rho = tc.random_density(3, rng)
    assert mt.trace_distance(rho, rho) == pytest.approx(0.0, abs=1e-14)
    zero, one = np.diag([1.0, 0.0]), np.diag([0.0, 1.0])
    assert mt.trace_distance(zero, one) == pytest.approx(1.0)


def test_d1_of_classical_channels_is_worst_column():
    a = ClassicalChannel(cdit("x", 2), cdit("y", 2), np.eye(2))
    b = bit_refresh_plain()
    assert mt.trace_distance(a, b) == 0.5


def test_d1_rejects_mixed_kinds():
    with pytest.raises(InterfaceError):
        mt.trace_distance(ch.classical_state([1, 0], cdit("x", 2)), np.eye(2) / 2)
    with pytest.raises(InterfaceError):
        mt.trace_distance(ch.classical_state([1, 0], cdit("x", 2)), ch.classical_state([1, 0], cdit("z", 2)))


# ---------------------------------------------------------------- diamond distance

def test_diamond_of_equal_channels_is_zero(rng):
    a = ch.random_quantum(qudit("x", 2), qudit("y", 2), rng)
    assert mt.diamond_distance(a, a).value == 0.0


def test_diamond_of_bit_refresh_is_classical_d1():
    ident = ch.embed_classical(ClassicalChannel(cdit("x", 2), cdit("y", 2), np.eye(2)))
    refresh = ch.embed_classical(bit_refresh_plain())
    assert mt.diamond_distance(ident, refresh).value == pytest.approx(0.5, abs=1e-7)


def test_diamond_of_phase_flip_is_one():
    ident = ch.identity(qudit("x", 2))
    flip = ch.unitary_channel(SZ, qudit("x", 2))
    d = mt.diamond_distance(ident, flip)
    assert d.value == pytest.approx(1.0, abs=1e-7)
    assert d.certificate["gap"] <= 1e-6
    assert d.lower_bound == pytest.approx(1.0, abs=1e-7)


def test_diamond_formulations_agree(rng):
    for _ in range(5):
        a = ch.random_quantum(qudit("x", 2), qudit("y", 3), rng)
        b = ch.random_quantum(qudit("x", 2), qudit("y", 3), rng)
        t = mt.diamond_distance(a, b, formulation="trace")
        k = mt.diamond_distance(a, b, formulation="block")
        assert abs(t.value - k.value) <= 1e-6
        assert t.certificate["gap"] <= 1e-6 and k.certificate["gap"] <= 1e-6


def test_diamond_is_bracketed_by_pure_input_search(rng):
    for _ in range(5):
        a = ch.random_quantum(qudit("x", 2), qudit("y", 2), rng)
        b = ch.random_quantum(qudit("x", 2), qudit("y", 2), rng)
        d = mt.diamond_distance(a, b)
        sampled = sampled_diamond_lower(a, b, rng)
        assert sampled <= d.value + 1e-6
        assert d.lower_bound <= d.value + 1e-6
        # see-saw ascent gets close to the SDP optimum
        assert d.value - d.lower_bound <= 1e-4


def test_diamond_exceeds_trace_distance_of_outputs(rng):
    a = ch.random_quantum(qudit("x", 3), qudit("y", 2), rng)
    b = ch.random_quantum(qudit("x", 3), qudit("y", 2), rng)
    d = mt.diamond_distance(a, b).value
    for _ in range(20):
        rho = tc.random_density(3, rng)
        assert mt.trace_distance(a(rho), b(rho)) <= d + 1e-7


def test_diamond_interface_mismatch(rng):
    a = ch.random_quantum(qudit("x", 2), qudit("y", 2), rng)
    b = ch.random_quantum(qudit("x", 2), qudit("z", 2), rng)
    with pytest.raises(InterfaceError):
        mt.diamond_distance(a, b)


def test_diamond_of_embedded_classical_pairs(rng):
    for _ in range(10):
        di, do = rng.integers(1, 4, size=2)
        a = ch.random_classical(cdit("x", int(di)), cdit("y", int(do)), rng)
        b = ch.random_classical(cdit("x", int(di)), cdit("y", int(do)), rng)
        d = mt.diamond_distance(ch.embed_classical(a), ch.embed_classical(b)).value
        assert abs(d - mt.trace_distance(a, b)) <= 1e-6


# ---------------------------------------------------------------- metric properties

def random_triple(rng, d=2):
    return [ch.random_quantum(qudit("x", d), qudit("y", d), rng) for _ in range(3)]


def test_diamond_metric_axioms(rng):
    for _ in range(4):
        a, b, c = random_triple(rng)
        ab = mt.diamond_distance(a, b).value
        assert ab == pytest.approx(mt.diamond_distance(b, a).value, abs=1e-7)
        ac, bc = mt.diamond_distance(a, c).value, mt.diamond_distance(b, c).value
        assert ac <= ab + bc + 1e-7
        assert 0 <= ab <= 1 + 1e-7


@given(seed=st.integers(0, 2**32 - 1), di=st.integers(1, 4), do=st.integers(1, 4))
def test_d1_metric_axioms(seed, di, do):
    rng = np.random.default_rng(seed)
    a, b, c = (ch.random_classical(cdit("x", di), cdit("y", do), rng) for _ in range(3))
    assert mt.trace_distance(a, b) == mt.trace_distance(b, a)
    assert mt.trace_distance(a, c) <= mt.trace_distance(a, b) + mt.trace_distance(b, c) + 1e-12


def test_diamond_monotone_and_parallel_invariant(rng):
    for _ in range(4):
        a = ch.random_quantum(qudit("x", 2), qudit("y", 2), rng)
        b = ch.random_quantum(qudit("x", 2), qudit("y", 2), rng)
        post = ch.random_quantum(qudit("y", 2), qudit("z", 2), rng)
        side = ch.random_quantum(qudit("u", 2), qudit("v", 2), rng)
        base = mt.diamond_distance(a, b).value
        after = mt.diamond_distance(ch.serial(a, post), ch.serial(b, post)).value
        assert after <= base + 1e-6
        wide = mt.diamond_distance(ch.parallel(a, side), ch.parallel(b, side)).value
        assert abs(wide - base) <= 1e-6


# ---------------------------------------------------------------- isometric fidelities

def test_iso_equal():
    u = np.eye(3)
    f = mt.iso_fidelities(u, u)
    assert f.F == pytest.approx(1.0) and f.FF == pytest.approx(1.0) and f.d_diamond == pytest.approx(0.0)


def test_iso_phase_flip():
    f = mt.iso_fidelities(np.eye(2), SZ)
    assert f.F == pytest.approx(0.0, abs=1e-12)
    assert f.FF == pytest.approx(0.0, abs=1e-12)
    assert f.d_diamond == pytest.approx(1.0)


def test_iso_eighth_turn():
    u = np.diag([1, np.exp(1j * np.pi / 4)])
    f = mt.iso_fidelities(np.eye(2), u)
    assert f.F == pytest.approx(np.cos(np.pi / 8), abs=1e-10)
    assert f.F == pytest.approx(arc_fidelity(u), abs=1e-10)
    assert mt.unitary_arc(u) == pytest.approx(np.pi / 4)


def test_iso_cube_roots_have_negative_fake_fidelity():
    # the spectrum surrounds the origin, so the best half-plane still cuts a third of a turn
    u = np.diag(np.exp(2j * np.pi * np.arange(3) / 3))
    f = mt.iso_fidelities(np.eye(3), u)
    assert f.FF == pytest.approx(-0.5, abs=1e-10)
    assert f.F == 0.0
    assert f.d_inf == pytest.approx(np.sqrt(3), abs=1e-9)


def test_iso_rejects_non_isometry():
    with pytest.raises(ValueError):
        mt.iso_fidelities(np.eye(2), 2 * np.eye(2))
    with pytest.raises(InterfaceError):
        mt.iso_fidelities(np.eye(2), np.eye(3))


@given(seed=st.integers(0, 2**32 - 1), d=st.integers(2, 5))
def test_iso_fidelities_of_unitaries_match_spectral_arc(seed, d):
    rng = np.random.default_rng(seed)
    u1, u2 = tc.random_unitary(d, rng), tc.random_unitary(d, rng)
    f = mt.iso_fidelities(u1, u2)
    assert abs(f.F - max(0.0, f.FF)) <= 1e-8
    assert abs(f.F - arc_fidelity(u1.conj().T @ u2)) <= 1e-8
    assert abs(f.d_diamond - np.sqrt(1 - f.F ** 2)) <= 1e-8
    assert abs(f.d_inf - np.sqrt(2 - 2 * f.FF)) <= 1e-8


@given(seed=st.integers(0, 2**32 - 1), din=st.integers(1, 3), extra=st.integers(0, 3))
@settings(max_examples=20)
def test_iso_fidelity_is_distance_to_numerical_range(seed, din, extra):
    rng = np.random.default_rng(seed)
    dout = din + extra
    s1, s2 = tc.random_isometry(dout, din, rng), tc.random_isometry(dout, din, rng)
    f = mt.iso_fidelities(s1, s2)
    M = s1.conj().T @ s2
    assert f.F <= sampled_range_distance(M, rng) + 1e-9
    # the witness attains the supporting half-plane value
    w = f.witness
    rot = np.exp(1j * f.theta) * (w.conj() @ M @ w)
    assert rot.real == pytest.approx(f.FF, abs=1e-8)


def test_diamond_sdp_matches_isometric_closed_form(rng):
    for d in (2, 3):
        for _ in range(3):
            u1, u2 = tc.random_unitary(d, rng), tc.random_unitary(d, rng)
            a = ch.unitary_channel(u1, qudit("x", d))
            b = ch.unitary_channel(u2, qudit("x", d))
            assert abs(mt.diamond_distance(a, b).value - mt.iso_fidelities(u1, u2).d_diamond) <= 1e-6


# ---------------------------------------------------------------- states

def test_state_fidelity_examples(rng):
    rho = tc.random_density(3, rng)
    F, P = mt.state_fidelity_purified(rho, rho)
    assert F == pytest.approx(1.0, abs=1e-7) and P == pytest.approx(0.0, abs=1e-3)
    plus = np.full((2, 2), 0.5)
    F, P = mt.state_fidelity_purified(np.diag([1.0, 0.0]), plus)
    assert F == pytest.approx(1 / np.sqrt(2)) and P == pytest.approx(1 / np.sqrt(2))
    F, P = mt.state_fidelity_purified(np.diag([1.0, 0.0]), np.diag([0.0, 1.0]))
    assert F == pytest.approx(0.0) and P == pytest.approx(1.0)


def test_state_fidelity_of_pure_states_is_overlap(rng):
    for _ in range(10):
        a = tc.random_isometry(3, 1, rng)[:, 0]
        b = tc.random_isometry(3, 1, rng)[:, 0]
        F, _ = mt.state_fidelity_purified(np.outer(a, a.conj()), np.outer(b, b.conj()))
        assert F == pytest.approx(abs(np.vdot(a, b)), abs=1e-7)


def test_state_fidelity_rejects_non_states():
    with pytest.raises(ValueError):
        mt.state_fidelity_purified(np.eye(2), np.eye(2) / 2)


# ---------------------------------------------------------------- purified diamond distance

def test_pdiamond_of_isometric_pair_is_exact(rng):
    u1, u2 = tc.random_unitary(2, rng), tc.random_unitary(2, rng)
    iv = mt.pdiamond_interval(ch.unitary_channel(u1, qudit("x", 2)), ch.unitary_channel(u2, qudit("x", 2)))
    F = mt.iso_fidelities(u1, u2).F
    assert iv.width <= 1e-8
    assert iv.lower == pytest.approx(np.sqrt(1 - F ** 2), abs=1e-8)


def test_pdiamond_of_identical_channels(rng):
    a = ch.random_quantum(qudit("x", 2), qudit("y", 2), rng)
    iv = mt.pdiamond_interval(a, a)
    assert iv.lower == 0.0 and iv.upper <= 1e-6


def test_pdiamond_sandwich(rng):
    for _ in range(10):
        d = int(rng.integers(1, 4))
        a = ch.random_quantum(qudit("x", d), qudit("y", d), rng)
        b = ch.random_quantum(qudit("x", d), qudit("y", d), rng)
        iv = mt.pdiamond_interval(a, b)
        dd = mt.diamond_distance(a, b).value
        assert dd - 1e-6 <= iv.lower <= iv.upper <= np.sqrt(2 * dd) + 1e-6


# ---------------------------------------------------------------- beta and P

def test_bp_examples():
    r = mt.bp_check(F=1.0)
    assert r.beta == 0.0 and r.P == 0.0
    r = mt.bp_check(F=0.0)
    assert r.beta == pytest.approx(np.sqrt(2)) and r.P == pytest.approx(1.0)
    F = np.cos(np.pi / 8)
    r = mt.bp_check(pair=(np.eye(2), np.diag([1, np.exp(1j * np.pi / 4)])))
    assert r.beta == pytest.approx(np.sqrt(2 - 2 * F), abs=1e-9)
    assert r.P == pytest.approx(np.sqrt(1 - F ** 2), abs=1e-9)
    assert r.residual <= 1e-10


def test_bp_needs_an_input():
    with pytest.raises(ValueError):
        mt.bp_check()


@given(F=st.floats(0.0, 1.0))
def test_bp_identity(F):
    r = mt.bp_check(F=F)
    assert r.residual <= 1e-8
    assert r.P == pytest.approx(np.sqrt(1 - F ** 2), abs=1e-7)


def test_bp_small_beta_asymptotics(rng):
    for t in np.linspace(1e-3, 0.3, 25):
        u = np.diag([1, np.exp(1j * t)])
        r = mt.bp_check(pair=(np.eye(2), u))
        assert abs(r.P - r.beta) <= r.beta ** 3 / 4
