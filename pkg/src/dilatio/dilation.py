"""Dilations in the classical and quantum theories.

A dilation of ``base: X -> Y`` is a channel ``X + X_hid -> Y + Y_hid``
whose visible marginal is ``base`` alongside trash on the hidden inputs.
Most constructions here are one-sided (hidden outputs only).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from . import channels as ch
from . import optim
from . import tensor_core as tc
from .channels import (ClassicalChannel, Channel, Interface, InterfaceError, Port,
                       QuantumChannel)

RANK_CUTOFF = 1e-9


@dataclass(frozen=True)
class Dilation:
    base: Channel
    total: Channel
    hidden_in: frozenset = frozenset()
    hidden_out: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "hidden_in", frozenset(self.hidden_in))
        object.__setattr__(self, "hidden_out", frozenset(self.hidden_out))
        for n in self.hidden_in:
            self.total.input.port(n)
        for n in self.hidden_out:
            self.total.output.port(n)

    @property
    def visible_outputs(self) -> Interface:
        return self.total.output.without(self.hidden_out)

    @property
    def hidden_output_interface(self) -> Interface:
        return self.total.output.sub(self.hidden_out)


@dataclass(frozen=True)
class IsometricDilation:
    """Stinespring isometry ``S[(o, k), i]``: output ports first, environment last."""

    isometry: np.ndarray
    env_dim: int
    input: Interface
    output: Interface
    env: Port

    def kraus(self) -> list[np.ndarray]:
        S = self.isometry.reshape(self.output.total, self.env_dim, self.input.total)
        return [S[:, k, :] for k in range(self.env_dim)]

    def channel(self) -> QuantumChannel:
        v = self.isometry.reshape(-1)
        j = np.outer(v, v.conj())
        out = self.output.union(Interface([self.env]))
        out_axes = list(self.output.names) + [self.env.name]
        return QuantumChannel(self.input, out, ch._reorder_choi(j, out_axes, self.input.names, out, self.input))

    def base(self) -> QuantumChannel:
        return ch.from_kraus(self.kraus(), self.input, self.output)

    def dilation(self) -> Dilation:
        return Dilation(self.base(), self.channel(), frozenset(), frozenset([self.env.name]))

    @property
    def state(self) -> np.ndarray:
        """The pure state vector when the input is trivial."""
        if self.input.total != 1:
            raise InterfaceError("not a purification")
        return self.isometry[:, 0]


def fresh_name(base: str, taken: Iterable[str]) -> str:
    taken = set(taken)
    name = base
    while name in taken:
        name += "'"
    return name


def _kraus_from_choi(c: QuantumChannel, cutoff: float):
    w, v = tc.herm_eig(c.choi, tol=1e-8)
    do, di = c.output.total, c.input.total
    keep = w > cutoff
    if not np.any(keep):
        raise ValueError("Choi matrix has no eigenvalue above the rank cutoff")
    ks = []
    for lam, vec in zip(w[keep], v[:, keep].T):
        k = np.sqrt(lam) * vec.reshape(do, di)
        ks.append(tc.fix_phase(k))
    return ks


def stinespring_minimal(q: Channel, env: str = "e", cutoff: float = RANK_CUTOFF) -> IsometricDilation:
    q = ch.as_quantum(q)
    diag = ch.validate(q, tol=1e-8)
    if not diag.ok:
        raise ValueError(f"not a valid channel: {diag}")
    ks = _kraus_from_choi(q, cutoff)
    r = len(ks)
    S = np.stack(ks, axis=1).reshape(q.output.total * r, q.input.total)
    name = fresh_name(env, q.output.names)
    return IsometricDilation(S, r, q.input, q.output, Port(name, r, ch.QUANTUM))


def purify(state: Channel, env: str = "p", cutoff: float = RANK_CUTOFF) -> IsometricDilation:
    if state.input.total != 1:
        raise InterfaceError("purify expects a state")
    return stinespring_minimal(state, env=env, cutoff=cutoff)


@dataclass(frozen=True)
class Check:
    ok: bool
    residual: float

    def __bool__(self):
        return self.ok


def verify_dilation(d: Dilation, tol: float = ch.ALG_TOL) -> Check:
    vis = d.visible_outputs
    if set(vis.names) != set(d.base.output.names):
        return Check(False, np.inf)
    m = ch.marginal(d.total, vis.names)
    expected = d.base
    if d.hidden_in:
        expected = ch.parallel(d.base, ch.trash(d.total.input.sub(d.hidden_in)))
    try:
        res = ch.difference(m, expected)
    except InterfaceError:
        return Check(False, np.inf)
    return Check(res <= tol, res)


def copy_names(t: Channel) -> tuple[dict, dict]:
    return ({n: f"in:{n}" for n in t.input.names}, {n: f"out:{n}" for n in t.output.names})


def cit_complete_dilation(t: ClassicalChannel) -> Dilation:
    """Hidden outputs copy both the input and the output."""
    cin, cout = copy_names(t)
    hid_in = Interface(Port(cin[p.name], p.dim) for p in t.input)
    hid_out = Interface(Port(cout[p.name], p.dim) for p in t.output)
    out = t.output.union(hid_in).union(hid_out)
    do, di = t.output.total, t.input.total
    big = np.zeros((do, di, do, di))
    for y in range(do):
        for x in range(di):
            big[y, x, y, x] = t.table[y, x]
    # axes: y ports, copied x ports, copied y ports, then x ports
    ten = big.reshape(t.output.dims + t.input.dims + t.output.dims + t.input.dims)
    out_axes = list(t.output.names) + [cin[n] for n in t.input.names] + [cout[n] for n in t.output.names]
    total = ClassicalChannel(t.input, out, ch._reorder_table(
        ten.reshape(do * di * do, di), out_axes, t.input.names, out, t.input))
    return Dilation(t, total, frozenset(), frozenset(hid_in.names) | frozenset(hid_out.names))


def is_pure(c: Channel, cutoff: float = RANK_CUTOFF) -> bool:
    if isinstance(c, ClassicalChannel):
        if c.input.total != 1:
            return False
        return bool(np.sum(c.table > cutoff) == 1)
    w = np.linalg.eigvalsh((c.choi + c.choi.conj().T) / 2)
    return bool(np.sum(w > cutoff) == 1)


def complementary(q: Channel, env: str = "e") -> QuantumChannel:
    s = stinespring_minimal(q, env=env)
    S = s.isometry.reshape(s.output.total, s.env_dim, s.input.total)
    jc = np.einsum("oki,olj->kilj", S, S.conj()).reshape(s.env_dim * s.input.total, -1)
    # the environment port name may coincide with an output name of q; the
    # complementary channel only has the environment, so use the plain name
    port = Port(env, s.env_dim, ch.QUANTUM)
    return QuantumChannel(s.input, Interface([port]), jc)


# ---------------------------------------------------------------- environment morphisms

def _split_choi(c: QuantumChannel, hidden: Iterable[str]) -> tuple[np.ndarray, Interface, int]:
    """Choi of ``c`` as ``L[r, e, s, f]`` with the hidden outputs as ``e``/``f``.

    ``r`` runs over visible outputs then inputs, each in canonical order.
    """
    hidden = set(hidden)
    n_out = len(c.output)
    vis = [i for i, n in enumerate(c.output.names) if n not in hidden]
    hid = [i for i, n in enumerate(c.output.names) if n in hidden]
    order = vis + [n_out + i for i in range(len(c.input))] + hid
    dims = c.factor_dims
    n = len(dims)
    ten = c.choi.reshape(dims + dims) if n else c.choi.reshape(())
    ten = ten.transpose(order + [o + n for o in order]) if n else ten
    d_e = int(np.prod([dims[i] for i in hid])) if hid else 1
    R = c.choi.shape[0] // d_e
    return ten.reshape(R, d_e, R, d_e), c.output.sub(hidden), d_e


def _split_table(c: ClassicalChannel, hidden: Iterable[str]) -> tuple[np.ndarray, Interface, int]:
    """Table of ``c`` as ``L[r, e]`` (visible outputs then inputs, hidden last)."""
    hidden = set(hidden)
    n_out = len(c.output)
    vis = [i for i, n in enumerate(c.output.names) if n not in hidden]
    hid = [i for i, n in enumerate(c.output.names) if n in hidden]
    order = vis + [n_out + i for i in range(len(c.input))] + hid
    ten = c.tensor()
    ten = ten.transpose(order) if order else ten
    dims = c.output.dims + c.input.dims
    d_e = int(np.prod([dims[i] for i in hid])) if hid else 1
    return ten.reshape(-1, d_e), c.output.sub(hidden), d_e


@dataclass(frozen=True)
class Morph:
    channel: Channel | None
    residual: float

    @property
    def found(self) -> bool:
        return self.channel is not None

    def __bool__(self):
        return self.found


def _as_dilation(x) -> Dilation:
    if isinstance(x, Dilation):
        return x
    # Blackwell mode: every output of a channel counts as hidden
    return Dilation(ch.trash(x.input), x, frozenset(), frozenset(x.output.names))


def _check_compatible(l: Dilation, lp: Dilation):
    if l.hidden_in or lp.hidden_in:
        raise InterfaceError("environment morphisms are defined for one-sided dilations")
    if l.total.input != lp.total.input:
        raise InterfaceError("dilations have different inputs")
    if l.visible_outputs != lp.visible_outputs:
        raise InterfaceError("dilations have different visible outputs")


def morph_between(total: Channel, hidden: Iterable[str], target: Channel, target_hidden: Iterable[str],
                  tol: float) -> Morph:
    """Find G on the hidden outputs of ``total`` with (id (x) G) o total = target."""
    hidden, target_hidden = list(hidden), list(target_hidden)
    if isinstance(total, ClassicalChannel) and isinstance(target, ClassicalChannel):
        L, e_in, de = _split_table(total, hidden)
        Lp, e_out, dep = _split_table(target, target_hidden)
        if L.shape[0] != Lp.shape[0]:
            raise InterfaceError("visible systems differ")
        R = L.shape[0]
        # rows (r, e'), columns vec(G) with G[e', e]
        M = np.einsum("re,ab->raeb", L, np.eye(dep)).transpose(0, 1, 3, 2)
        M = M.reshape(R * dep, dep * de)
        fit = optim.stochastic_fit(M, Lp.reshape(-1), de, dep, tol=tol)
        if fit.table is None:
            return Morph(None, fit.residual)
        return Morph(ClassicalChannel(e_in, e_out, fit.table), fit.residual)
    total, target = ch.as_quantum(total), ch.as_quantum(target)
    L, e_in, de = _split_choi(total, hidden)
    Lp, e_out, dep = _split_choi(target, target_hidden)
    if L.shape[0] != Lp.shape[0]:
        raise InterfaceError("visible systems differ")
    amap = optim.FactorChoiMap(L, dep)
    fit = optim.cp_fit(amap, Lp, de, dep, tol=tol)
    if fit.choi is None:
        return Morph(None, fit.residual)
    return Morph(QuantumChannel(e_in, e_out, fit.choi), fit.residual)


def env_morph(l, lp, tol: float = ch.SOLVER_TOL) -> Morph:
    """G acting on hidden outputs with (id (x) G) o l = lp.

    Accepts one-sided dilations of a common base, or plain channels (the
    Blackwell order, where the whole output is treated as hidden).
    """
    l, lp = _as_dilation(l), _as_dilation(lp)
    _check_compatible(l, lp)
    return morph_between(l.total, l.hidden_out, lp.total, lp.hidden_out, tol)


def find_left_inverse(c: Channel, tol: float = ch.SOLVER_TOL) -> Morph:
    """R with R o c = id on the input of ``c``."""
    if isinstance(c, ClassicalChannel):
        target = ClassicalChannel(c.input, c.input, np.eye(c.input.total))
    else:
        target = ch.unitary_channel(np.eye(c.input.total), c.input)
    return morph_between(c, c.output.names, target, target.output.names, tol)


def derivation_map(d: Dilation, out_dim: int) -> optim.FactorChoiMap:
    """The linear map J_G -> Choi((id (x) G) o total) for G on the hidden outputs."""
    if d.hidden_in:
        raise InterfaceError("derivations are defined for one-sided dilations")
    L, _, _ = _split_choi(ch.as_quantum(d.total), d.hidden_out)
    return optim.FactorChoiMap(L, out_dim)


def apply_morph(d: Dilation, g: Channel) -> Dilation:
    """The derived dilation (id (x) G) o L."""
    total = ch.compose_on(d.total, g)
    return Dilation(d.base, total, d.hidden_in,
                    (d.hidden_out - set(g.input.names)) | set(g.output.names))


# ---------------------------------------------------------------- multilinear fits

def _basis_channels(tpl: Channel):
    """Unit tables or unit Choi matrices on the interfaces of ``tpl``."""
    if isinstance(tpl, ClassicalChannel):
        o, i = tpl.output.total, tpl.input.total
        for k in range(o * i):
            t = np.zeros(o * i)
            t[k] = 1.0
            yield ClassicalChannel(tpl.input, tpl.output, t.reshape(o, i))
    else:
        n = tpl.output.total * tpl.input.total
        for k in range(n * n):
            j = np.zeros(n * n, dtype=complex)
            j[k] = 1.0
            yield QuantumChannel(tpl.input, tpl.output, j.reshape(n, n))


def _flat(c: Channel) -> np.ndarray:
    return c.table.reshape(-1) if isinstance(c, ClassicalChannel) else c.choi.reshape(-1)


@dataclass
class MultiFit:
    channels: dict
    residual: float
    rounds: int

    @property
    def found(self) -> bool:
        return bool(self.channels)


def alternating_fit(build, start: dict, target: Channel, tol: float = 1e-8, rounds: int = 50,
                    inner_tol: float | None = None) -> MultiFit:
    """Fit channels entering ``build`` multilinearly so that ``build(chs) = target``.

    Each unknown is refitted in turn with the others held fixed, which is a
    linear (LP or cone) problem.  The joint problem is not convex, so a
    large final residual is inconclusive.  ``channels`` is empty unless the
    max-entry residual reaches ``tol``.
    """
    cur = dict(start)
    quantum = not all(isinstance(c, ClassicalChannel) for c in cur.values())
    if quantum:
        target = ch.as_quantum(target)
    goal = _flat(target)
    inner_tol = tol if inner_tol is None else inner_tol

    def residual(chs):
        out = build(chs)
        if quantum:
            out = ch.as_quantum(out)
        return ch.difference(out, target)

    best = residual(cur)
    r = 0
    for r in range(1, rounds + 1):
        if best <= tol:
            break
        for name, tpl in list(cur.items()):
            cols = []
            for b in _basis_channels(tpl):
                out = build({**cur, name: b})
                cols.append(_flat(ch.as_quantum(out) if quantum else out))
            M = np.stack(cols, axis=1)
            if isinstance(tpl, ClassicalChannel):
                fit = optim.stochastic_fit(M.real, goal.real, tpl.input.total, tpl.output.total, tol=inner_tol)
                if fit.best is not None:
                    cand = ClassicalChannel(tpl.input, tpl.output, fit.best)
                    if residual({**cur, name: cand}) <= best + 1e-12:
                        cur[name] = cand
            else:
                amap = optim.DenseChoiMap(M, tpl.input.total, tpl.output.total)
                fit = optim.cp_fit(amap, goal, tpl.input.total, tpl.output.total, tol=inner_tol,
                                   x0=tpl.choi, max_iter=3000)
                cand = QuantumChannel(tpl.input, tpl.output, fit.best)
                if residual({**cur, name: cand}) <= best + 1e-12:
                    cur[name] = cand
            best = residual(cur)
    return MultiFit(cur if best <= tol else {}, best, r)
