import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from dilatio import channels as ch
from dilatio import fixtures as fx
from dilatio import rigidity_cit as rc
from dilatio.channels import ClassicalChannel, Interface, InterfaceError, Port
from dilatio.selftest import behaviour_of, canonical_chsh


def iface(**dims):
    return Interface([Port(n, d) for n, d in dims.items()])


def func(f, n_out=2, x="x", y="y"):
    t = np.zeros((n_out, len(f)))
    t[list(f), range(len(f))] = 1
    return ClassicalChannel(iface(**{x: len(f)}), iface(**{y: n_out}), t)


NOT = func((1, 0))
F0, F1, ID = (0, 0), (1, 1), (0, 1)


def product(fa, fb):
    return ch.parallel(func(fa, x="xa", y="ya"), func(fb, x="xb", y="yb"))


def reconstructs(d, t, tol=1e-9):
    return abs(d.weights.sum() - 1) <= 1e-10 and np.max(np.abs(d.table() - t.table)) <= tol


def lp_spread(t):
    """Oracle: the widest interval of any atom weight, by scipy over all |Y|^|X| functions."""
    n_out, n_in = t.table.shape
    atoms = list(itertools.product(range(n_out), repeat=n_in))
    A = np.stack([_table(a, n_out).reshape(-1) for a in atoms], axis=1)
    b = t.table.reshape(-1)
    worst = 0.0
    for k in range(len(atoms)):
        c = np.zeros(len(atoms))
        c[k] = 1
        lo = linprog(c, A_eq=A, b_eq=b, method="highs").fun
        hi = -linprog(-c, A_eq=A, b_eq=b, method="highs").fun
        worst = max(worst, hi - lo)
    return worst


def _table(f, n_out):
    t = np.zeros((n_out, len(f)))
    t[list(f), range(len(f))] = 1
    return t


# ---------------------------------------------------------------- unipartite

def test_deterministic_channel_is_one_atom():
    d = rc.det_decompose(NOT)
    assert d.atoms == ((1, 0),) and np.allclose(d.weights, [1.0]) and d.proper
    assert rc.decomposition_unique(NOT)
    assert rc.unipartite_rigid(NOT).rigid


def test_bit_refresh_has_two_decompositions():
    t = fx.bit_refresh_plain()
    d = rc.det_decompose(t)
    assert d.as_dict() in ({F0: 0.5, F1: 0.5}, {ID: 0.5, (1, 0): 0.5})
    u = rc.decomposition_unique(t)
    assert not u.unique
    assert len(u.witnesses) == 2
    assert {frozenset(w.atoms) for w in u.witnesses} == {frozenset({F0, F1}), frozenset({ID, (1, 0)})}
    for w in u.witnesses:
        assert w.proper and reconstructs(w, t)


def test_bit_refresh_is_not_rigid():
    v = rc.unipartite_rigid(fx.bit_refresh_plain())
    assert not v.rigid
    assert len(v.dilations) == 2
    assert sorted(sorted(d.as_dict().items()) for d in v.decompositions) == [
        [(F0, 0.5), (F1, 0.5)], [(ID, 0.5), ((1, 0), 0.5)]]


def test_state_on_six_points_is_rigid(rng):
    p = rng.dirichlet(np.ones(6))
    t = ClassicalChannel(ch.EMPTY, iface(y=6), p.reshape(6, 1))
    d = rc.det_decompose(t)
    assert dict(d.as_dict()) == pytest.approx({(k,): p[k] for k in range(6)})
    assert rc.decomposition_unique(t) and rc.unipartite_rigid(t).rigid


def test_uniform_bit_with_button_is_rigid():
    t = ClassicalChannel(iface(b=1), iface(y=2), np.array([[0.5], [0.5]]))
    v = rc.unipartite_rigid(t)
    assert v.rigid and len(v.dilations) == 1


def test_maximal_dilation_shape():
    d = rc.det_decompose(fx.bit_refresh_plain())
    bd = rc.maximal_dilation(d)
    total = bd.total()
    assert set(total.output.names) == {"y", "xcopy", "lam0"}
    assert ch.close(ch.marginal(total, ["y"]), fx.bit_refresh_plain())
    # the copy really is a copy of the input
    xc = ch.marginal(total, ["xcopy"])
    assert np.allclose(xc.table, np.eye(2))


def test_cap_guards_enumeration():
    t = ch.random_classical(iface(x=7), iface(y=4), np.random.default_rng(0))
    with pytest.raises(rc.CapExceeded):
        rc.det_decompose(t)
    with pytest.raises(rc.CapExceeded):
        rc.extreme_decompositions(fx.bit_refresh_plain(), subset_cap=3)


def random_stochastic(rng, n_in, n_out, sparsity):
    t = rng.dirichlet(np.ones(n_out), size=n_in).T
    t[rng.random(t.shape) < sparsity] = 0
    t[rng.integers(n_out, size=n_in), range(n_in)] += 0.3
    return ClassicalChannel(iface(x=n_in), iface(y=n_out), t / t.sum(axis=0))


@given(seed=st.integers(0, 2**32 - 1), n_in=st.integers(1, 3), n_out=st.integers(2, 3),
       sparsity=st.sampled_from([0.0, 0.5, 0.8]))
@settings(max_examples=30, deadline=None)
def test_uniqueness_matches_independent_lp(seed, n_in, n_out, sparsity):
    t = random_stochastic(np.random.default_rng(seed), n_in, n_out, sparsity)
    u = rc.decomposition_unique(t)
    assert u.unique == (lp_spread(t) <= 1e-8)
    d = rc.det_decompose(t)
    assert d.proper and reconstructs(d, t)
    for w in u.witnesses:
        assert reconstructs(w, t)


@given(seed=st.integers(0, 2**32 - 1), n_in=st.integers(1, 3), sparsity=st.sampled_from([0.0, 0.6]))
@settings(max_examples=20, deadline=None)
def test_rigidity_agrees_with_pairwise_equivalence(seed, n_in, sparsity):
    t = random_stochastic(np.random.default_rng(seed), n_in, 2, sparsity)
    ext = rc.extreme_decompositions(t)
    assert ext and all(reconstructs(d, t) for d in ext)
    equivalent = all(d.as_dict().keys() == ext[0].as_dict().keys()
                     and np.allclose(sorted(d.weights), sorted(ext[0].weights)) for d in ext)
    assert rc.unipartite_rigid(t).rigid == equivalent


@given(seed=st.integers(0, 2**32 - 1))
@settings(max_examples=20, deadline=None)
def test_uniqueness_stable_under_input_relabeling(seed):
    rng = np.random.default_rng(seed)
    t = random_stochastic(rng, 3, 2, 0.5)
    perm = rng.permutation(3)
    s = ClassicalChannel(t.input, t.output, t.table[:, perm])
    assert rc.decomposition_unique(t).unique == rc.decomposition_unique(s).unique


# ---------------------------------------------------------------- bipartite

def test_swap_mixture_is_rigid():
    t = ClassicalChannel(product(ID, (1, 0)).input, product(ID, (1, 0)).output,
                         0.5 * product(ID, (1, 0)).table + 0.5 * product((1, 0), ID).table)
    v = rc.bipartite_rigid_sufficient(t)
    assert v.rigid and v.label == "sufficient"
    assert reconstructs(v.decompositions[0], t)
    assert set(v.decompositions[0].as_dict()) == {(ID, (1, 0)), ((1, 0), ID)}
    # the marginal on one site is a bit refresh, which is not rigid
    ya = ch.marginal(t, ["ya"]).tensor()[:, :, 0]
    assert not rc.unipartite_rigid(ClassicalChannel(iface(x=2), iface(y=2), ya)).rigid


def test_product_of_functions_is_trivially_unique():
    v = rc.bipartite_rigid_sufficient(product(F0, ID))
    assert v.rigid and len(v.decompositions[0].atoms) == 1


def test_pr_box_is_not_a_classical_bell_channel():
    feas = rc.bipartite_product_decompose(fx.pr_box())
    assert not feas.feasible and feas.lp.status == "infeasible"
    assert rc.bipartite_rigid_sufficient(fx.pr_box()).label == "infeasible"


def test_independent_bits_are_undecided():
    u = fx.uniform_bit("r")
    t = ch.parallel(ch.serial(ch.trash(iface(xa=2)), ch.rename(u, outputs={"r": "ya"})),
                    ch.serial(ch.trash(iface(xb=2)), ch.rename(u, outputs={"r": "yb"})))
    v = rc.bipartite_rigid_sufficient(t)
    assert not v.rigid and v.label == "undecided" and len(v.decompositions) == 2


def test_signalling_input_is_rejected():
    t = ch.function_channel(lambda v: {"ya": v["xb"], "yb": v["xa"]}, iface(xa=2, xb=2), iface(ya=2, yb=2))
    with pytest.raises(ValueError, match="signals"):
        rc.bipartite_product_decompose(t)


def test_bipartite_cap():
    with pytest.raises(rc.CapExceeded):
        rc.bipartite_product_decompose(fx.pr_box(), cap=10)


# ---------------------------------------------------------------- CHSH

def test_chsh_examples():
    assert rc.classical_chsh(product(F0, F0)) == pytest.approx(2.0)
    assert rc.classical_chsh(fx.pr_box(), exact=True) == Fraction(4)
    assert abs(rc.classical_chsh(behaviour_of(canonical_chsh())) - 2 * np.sqrt(2)) <= 1e-9


def test_chsh_rejects_shapes():
    with pytest.raises(InterfaceError):
        rc.classical_chsh(np.zeros((2, 2, 2)))
    with pytest.raises(InterfaceError):
        rc.classical_chsh(ch.identity(iface(x=2)))


def test_chsh_exact_on_fractions():
    P = np.full((2, 2, 2, 2), Fraction(1, 4), dtype=object)
    assert rc.classical_chsh(P, exact=True) == 0


@given(seed=st.integers(0, 2**32 - 1), k=st.integers(1, 6))
@settings(max_examples=40, deadline=None)
def test_local_bound_for_product_mixtures(seed, k):
    rng = np.random.default_rng(seed)
    fs = list(itertools.product(range(2), repeat=2))
    w = rng.dirichlet(np.ones(k))
    pick = rng.integers(4, size=(k, 2))
    t = sum(wi * product(fs[a], fs[b]).table for wi, (a, b) in zip(w, pick))
    c = ClassicalChannel(product(F0, F0).input, product(F0, F0).output, t)
    feas = rc.bipartite_product_decompose(c)
    assert feas.feasible and reconstructs(feas.decomposition, c)
    assert rc.classical_chsh(c) <= 2 + 1e-9


def test_decomposition_json():
    d = rc.det_decompose(fx.bit_refresh_plain())
    js = d.to_json()
    assert sorted(e["weight"] for e in js) == [0.5, 0.5]
    b = rc.bipartite_product_decompose(product(F0, ID)).decomposition
    assert b.to_json() == [{"atom": [[0, 0], [0, 1]], "weight": 1.0}]
