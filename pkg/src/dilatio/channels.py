"""Classical and quantum channels between named-port interfaces.

Classical channels are column-stochastic tables ``T[y, x]``.  Quantum
channels are Choi matrices with the output factor first,
``J = sum_ij Phi(|i><j|) (x) |i><j|``.  Inside an interface the ports are
laid out in lexicographic order of their names; that order fixes the
row-major multi-index of every table and Choi matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence, Union

import numpy as np

from . import tensor_core as tc

ALG_TOL = 1e-9
SOLVER_TOL = 1e-6
CLASSICAL = "classical"
QUANTUM = "quantum"


class InterfaceError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class Port:
    name: str
    dim: int
    kind: str = CLASSICAL

    def __post_init__(self):
        if not isinstance(self.name, str) or not self.name:
            raise InterfaceError("port names must be non-empty strings")
        if int(self.dim) < 1:
            raise InterfaceError(f"port {self.name!r} has dimension {self.dim}")
        if self.kind not in (CLASSICAL, QUANTUM):
            raise InterfaceError(f"unknown port kind {self.kind!r}")
        object.__setattr__(self, "dim", int(self.dim))


def _as_port(p) -> Port:
    if isinstance(p, Port):
        return p
    if isinstance(p, Mapping):
        return Port(p["name"], p["dim"], p.get("kind", CLASSICAL))
    return Port(*p)


class Interface:
    """An ordered set of ports; the layout order is lexicographic by name."""

    __slots__ = ("ports", "declared")

    def __init__(self, ports: Iterable = ()):
        given = tuple(_as_port(p) for p in ports)
        names = [p.name for p in given]
        if len(set(names)) != len(names):
            raise InterfaceError(f"duplicate port names in {names}")
        self.declared = tuple(names)
        self.ports = tuple(sorted(given, key=lambda p: p.name))

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(p.name for p in self.ports)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(p.dim for p in self.ports)

    @property
    def total(self) -> int:
        return int(np.prod(self.dims)) if self.ports else 1

    @property
    def all_classical(self) -> bool:
        return all(p.kind == CLASSICAL for p in self.ports)

    def __len__(self):
        return len(self.ports)

    def __iter__(self):
        return iter(self.ports)

    def __contains__(self, name) -> bool:
        return name in self.names

    def __eq__(self, other) -> bool:
        return isinstance(other, Interface) and self.ports == other.ports

    def __hash__(self):
        return hash(self.ports)

    def __repr__(self):
        body = ", ".join(f"{p.name}:{p.dim}{'q' if p.kind == QUANTUM else ''}" for p in self.ports)
        return f"Interface({body})"

    def port(self, name: str) -> Port:
        for p in self.ports:
            if p.name == name:
                return p
        raise InterfaceError(f"no port named {name!r} in {self!r}")

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise InterfaceError(f"no port named {name!r} in {self!r}") from None

    def sub(self, names: Iterable[str]) -> "Interface":
        names = set(names)
        for n in names:
            self.port(n)
        return Interface(p for p in self.ports if p.name in names)

    def without(self, names: Iterable[str]) -> "Interface":
        names = set(names)
        return Interface(p for p in self.ports if p.name not in names)

    def union(self, other: "Interface") -> "Interface":
        clash = set(self.names) & set(other.names)
        if clash:
            raise InterfaceError(f"port names clash: {sorted(clash)}")
        return Interface(self.ports + other.ports)

    def renamed(self, mapping: Mapping[str, str]) -> "Interface":
        return Interface(Port(mapping.get(p.name, p.name), p.dim, p.kind) for p in self.ports)

    def to_json(self) -> list:
        return [{"name": p.name, "dim": p.dim, "kind": p.kind} for p in self.ports]


def interface(*ports) -> Interface:
    """Shorthand: ``interface(("x", 2), ("y", 2, "quantum"))``."""
    return Interface(ports)


EMPTY = Interface()


@dataclass(frozen=True, eq=False)
class ClassicalChannel:
    input: Interface
    output: Interface
    table: np.ndarray = field(repr=False)

    def __post_init__(self):
        t = np.array(self.table, dtype=float)
        if t.shape != (self.output.total, self.input.total):
            raise InterfaceError(
                f"table shape {t.shape} does not match interfaces "
                f"({self.output.total}, {self.input.total})")
        t[(t < 0) & (t >= -1e-12)] = 0.0
        t.setflags(write=False)
        object.__setattr__(self, "table", t)

    kind = CLASSICAL

    def tensor(self) -> np.ndarray:
        return self.table.reshape(self.output.dims + self.input.dims)

    def column(self, x: Sequence[int] | int) -> np.ndarray:
        return self.table[:, _flat_index(x, self.input.dims)]


@dataclass(frozen=True, eq=False)
class QuantumChannel:
    input: Interface
    output: Interface
    choi: np.ndarray = field(repr=False)

    def __post_init__(self):
        j = np.array(self.choi, dtype=complex)
        n = self.output.total * self.input.total
        if j.shape != (n, n):
            raise InterfaceError(f"Choi shape {j.shape} does not match interfaces ({n}, {n})")
        j.setflags(write=False)
        object.__setattr__(self, "choi", j)

    kind = QUANTUM

    @property
    def factor_dims(self) -> tuple[int, ...]:
        return self.output.dims + self.input.dims

    def tensor(self) -> np.ndarray:
        d = self.factor_dims
        return self.choi.reshape(d + d)

    def __call__(self, rho) -> np.ndarray:
        """Apply the channel to a density matrix on the input interface."""
        rho = tc.as_matrix(rho)
        do, di = self.output.total, self.input.total
        j = self.choi.reshape(do, di, do, di)
        return np.einsum("aibj,ij->ab", j, rho)


Channel = Union[ClassicalChannel, QuantumChannel]


def _flat_index(x, dims) -> int:
    if isinstance(x, (int, np.integer)):
        return int(x)
    return int(np.ravel_multi_index(tuple(x), tuple(dims))) if dims else 0


# ---------------------------------------------------------------- layout helpers

def _reorder_table(t: np.ndarray, out_axes, in_axes, new_out: Interface, new_in: Interface):
    """Transpose a table whose axes are named ``out_axes + in_axes``."""
    names = list(out_axes) + list(in_axes)
    dims = [d for _, d in out_axes_dims(out_axes, in_axes, new_out, new_in)]
    ten = t.reshape(dims) if names else t.reshape(())
    order = [names.index(n) for n in new_out.names] + [len(out_axes) + list(in_axes).index(n) for n in new_in.names]
    return ten.transpose(order).reshape(new_out.total, new_in.total)


def out_axes_dims(out_axes, in_axes, new_out, new_in):
    lookup = {p.name: p.dim for p in new_out.ports}
    lookup_in = {p.name: p.dim for p in new_in.ports}
    return [(n, lookup[n]) for n in out_axes] + [(n, lookup_in[n]) for n in in_axes]


def _reorder_choi(j: np.ndarray, out_axes, in_axes, new_out: Interface, new_in: Interface):
    dims = [d for _, d in out_axes_dims(out_axes, in_axes, new_out, new_in)]
    n = len(dims)
    ten = j.reshape(dims + dims)
    pos = {name: i for i, name in enumerate(out_axes)}
    pos_in = {name: len(out_axes) + i for i, name in enumerate(in_axes)}
    order = [pos[x] for x in new_out.names] + [pos_in[x] for x in new_in.names]
    ten = ten.transpose(order + [o + n for o in order])
    m = new_out.total * new_in.total
    return ten.reshape(m, m)


def as_quantum(c: Channel) -> QuantumChannel:
    return c if isinstance(c, QuantumChannel) else embed_classical(c)


def _same_kind(*cs: Channel) -> bool:
    return all(isinstance(c, ClassicalChannel) for c in cs)


# ---------------------------------------------------------------- diagnostics

@dataclass(frozen=True)
class Diagnostics:
    ok: bool
    psd_margin: float
    tp_residual: float
    stochastic_residual: float

    def __bool__(self):
        return self.ok


def validate(c: Channel, tol: float = ALG_TOL) -> Diagnostics:
    if isinstance(c, ClassicalChannel):
        t = c.table
        neg = float(min(0.0, t.min())) if t.size else 0.0
        res = float(np.max(np.abs(t.sum(axis=0) - 1.0))) if t.size else 0.0
        ok = neg >= -1e-12 and res <= max(tol, 1e-10)
        return Diagnostics(ok, neg, res, res)
    j = c.choi
    herm = float(np.max(np.abs(j - j.conj().T))) if j.size else 0.0
    w = np.linalg.eigvalsh((j + j.conj().T) / 2)
    margin = float(w.min()) if w.size else 0.0
    do, di = c.output.total, c.input.total
    tr_out = np.einsum("aiaj->ij", j.reshape(do, di, do, di))
    tp = float(np.max(np.abs(tr_out - np.eye(di))))
    ok = margin >= -tol and tp <= tol and herm <= tol
    return Diagnostics(ok, margin, tp, 0.0)


# ---------------------------------------------------------------- constructors

def classical(input_ports, output_ports, table) -> ClassicalChannel:
    return ClassicalChannel(Interface(input_ports), Interface(output_ports), table)


def quantum(input_ports, output_ports, choi) -> QuantumChannel:
    return QuantumChannel(Interface(input_ports), Interface(output_ports), choi)


def function_channel(f: Callable, inp: Interface, out: Interface) -> ClassicalChannel:
    """Deterministic channel.  ``f`` maps a dict {port: value} to a dict."""
    table = np.zeros((out.total, inp.total))
    for xi, x in enumerate(np.ndindex(*inp.dims) if inp.ports else [()]):
        y = f(dict(zip(inp.names, x)))
        yi = _flat_index(tuple(int(y[n]) for n in out.names), out.dims)
        table[yi, xi] = 1.0
    return ClassicalChannel(inp, out, table)


def classical_state(p, out: Interface) -> ClassicalChannel:
    p = np.asarray(p, dtype=float).reshape(out.total, 1)
    return ClassicalChannel(EMPTY, out, p)


def quantum_state(rho, out: Interface) -> QuantumChannel:
    return QuantumChannel(EMPTY, out, tc.as_matrix(rho))


def choi_from_kraus(kraus: Sequence[np.ndarray]) -> np.ndarray:
    vecs = [np.asarray(k, dtype=complex).reshape(-1) for k in kraus]
    return sum(np.outer(v, v.conj()) for v in vecs)


def from_kraus(kraus: Sequence[np.ndarray], inp: Interface, out: Interface) -> QuantumChannel:
    return QuantumChannel(inp, out, choi_from_kraus(kraus))


def unitary_channel(u, inp: Interface, out: Interface | None = None) -> QuantumChannel:
    return from_kraus([tc.as_matrix(u)], inp, inp if out is None else out)


def primitive(kind: str, interface: Interface | None = None, **params) -> Channel:
    """Named primitive channels.

    ``identity``/``trash``/``decoherence``/``uniform`` act on ``interface``.
    ``state`` needs ``probs`` (classical) or ``rho`` (quantum).
    ``swap`` needs ``a`` and ``b``, two ports of equal dimension.
    """
    iface = EMPTY if interface is None else interface
    quantum_iface = not iface.all_classical or params.get("quantum", False)
    n = iface.total
    if kind == "identity":
        if quantum_iface:
            return unitary_channel(np.eye(n), iface)
        return ClassicalChannel(iface, iface, np.eye(n))
    if kind == "trash":
        if quantum_iface:
            return QuantumChannel(iface, EMPTY, np.eye(n))
        return ClassicalChannel(iface, EMPTY, np.ones((1, n)))
    if kind == "decoherence":
        return QuantumChannel(iface, iface, np.diag(np.eye(n).reshape(-1)))
    if kind == "uniform":
        if quantum_iface:
            return QuantumChannel(EMPTY, iface, np.eye(n) / n)
        return ClassicalChannel(EMPTY, iface, np.full((n, 1), 1.0 / n))
    if kind == "state":
        if "rho" in params:
            return quantum_state(params["rho"], iface)
        return classical_state(params["probs"], iface)
    if kind == "swap":
        a, b = params["a"], params["b"]
        a, b = _as_port(a), _as_port(b)
        if a.dim != b.dim:
            raise InterfaceError("swap needs ports of equal dimension")
        inp = Interface([a, b])
        ident = primitive("identity", inp, quantum=params.get("quantum", False))
        return rename(ident, outputs={a.name: b.name, b.name: a.name})
    raise ValueError(f"unknown primitive {kind!r}")


def identity(iface: Interface) -> Channel:
    return primitive("identity", iface)


def trash(iface: Interface) -> Channel:
    return primitive("trash", iface)


def random_classical(inp: Interface, out: Interface, rng: np.random.Generator,
                     concentration: float = 1.0) -> ClassicalChannel:
    """Columns drawn from a symmetric Dirichlet distribution."""
    t = rng.dirichlet(np.full(out.total, concentration), size=inp.total).T
    return ClassicalChannel(inp, out, t)


def random_quantum(inp: Interface, out: Interface, rng: np.random.Generator,
                   rank: int | None = None) -> QuantumChannel:
    """Kraus operators cut from a Haar-random isometry."""
    di, do = inp.total, out.total
    r = rank or di * do
    if do * r < di:
        raise ValueError(f"no channel {di} -> {do} has Kraus rank {r}")
    V = tc.random_isometry(do * r, di, rng).reshape(do, r, di)
    return from_kraus([V[:, k, :] for k in range(r)], inp, out)


# ---------------------------------------------------------------- renaming

def rename(c: Channel, inputs: Mapping[str, str] | None = None,
           outputs: Mapping[str, str] | None = None) -> Channel:
    inputs = dict(inputs or {})
    outputs = dict(outputs or {})
    new_in = c.input.renamed(inputs)
    new_out = c.output.renamed(outputs)
    out_axes = [outputs.get(n, n) for n in c.output.names]
    in_axes = [inputs.get(n, n) for n in c.input.names]
    if isinstance(c, ClassicalChannel):
        return ClassicalChannel(new_in, new_out, _reorder_table(c.table, out_axes, in_axes, new_out, new_in))
    return QuantumChannel(new_in, new_out, _reorder_choi(c.choi, out_axes, in_axes, new_out, new_in))


# ---------------------------------------------------------------- composition

def serial(t: Channel, s: Channel) -> Channel:
    """``s`` after ``t``."""
    if s.input != t.output:
        if set(s.input.names) == set(t.output.names):
            raise InterfaceError(f"port systems differ: {t.output!r} vs {s.input!r}")
        raise InterfaceError(f"cannot compose: {t.output!r} feeds {s.input!r}")
    if _same_kind(t, s):
        return ClassicalChannel(t.input, s.output, s.table @ t.table)
    t, s = as_quantum(t), as_quantum(s)
    do, dm, di = s.output.total, s.input.total, t.input.total
    js = s.choi.reshape(do, dm, do, dm)
    jt = t.choi.reshape(dm, di, dm, di)
    j = np.einsum("ambn,minj->aibj", js, jt, optimize=True)
    return QuantumChannel(t.input, s.output, j.reshape(do * di, do * di))


def serial_chain(*cs: Channel) -> Channel:
    out = cs[0]
    for c in cs[1:]:
        out = serial(out, c)
    return out


def parallel(a: Channel, b: Channel) -> Channel:
    inp = a.input.union(b.input)
    out = a.output.union(b.output)
    out_axes = list(a.output.names) + list(b.output.names)
    if _same_kind(a, b):
        t = np.einsum("yx,zw->yzxw", a.table, b.table).reshape(a.output.total * b.output.total,
                                                                a.input.total * b.input.total)
        in_axes = list(a.input.names) + list(b.input.names)
        return ClassicalChannel(inp, out, _reorder_table(t, out_axes, in_axes, out, inp))
    a, b = as_quantum(a), as_quantum(b)
    j = np.kron(a.choi, b.choi)
    # factor order of kron: a.out, a.in, b.out, b.in
    dims = list(a.output.dims) + list(a.input.dims) + list(b.output.dims) + list(b.input.dims)
    na_o, na_i, nb_o = len(a.output), len(a.input), len(b.output)
    perm = (list(range(na_o)) + list(range(na_o + na_i, na_o + na_i + nb_o))
            + list(range(na_o, na_o + na_i)) + list(range(na_o + na_i + nb_o, len(dims))))
    j = tc.permute_factors(j, dims, perm) if dims else j
    in_axes = list(a.input.names) + list(b.input.names)
    return QuantumChannel(inp, out, _reorder_choi(j, out_axes, in_axes, out, inp))


def parallel_all(cs: Iterable[Channel]) -> Channel:
    cs = list(cs)
    out = cs[0]
    for c in cs[1:]:
        out = parallel(out, c)
    return out


def marginal(c: Channel, keep_outputs: Iterable[str]) -> Channel:
    keep = set(keep_outputs)
    for n in keep:
        c.output.port(n)
    if keep == set(c.output.names):
        return c
    new_out = c.output.sub(keep)
    if isinstance(c, ClassicalChannel):
        ten = c.tensor()
        drop = tuple(i for i, n in enumerate(c.output.names) if n not in keep)
        t = ten.sum(axis=drop) if drop else ten
        return ClassicalChannel(c.input, new_out, t.reshape(new_out.total, c.input.total))
    keep_idx = [i for i, n in enumerate(c.output.names) if n in keep]
    keep_idx += [len(c.output) + i for i in range(len(c.input))]
    j = tc.partial_trace(c.choi, c.factor_dims, keep_idx) if c.factor_dims else c.choi
    return QuantumChannel(c.input, new_out, j)


def apply(c: Channel, state: Channel) -> Channel:
    if len(state.input):
        raise InterfaceError("apply expects a state (channel with trivial input)")
    return serial(state, c)


def extend(c: Channel, extra: Interface) -> Channel:
    """``c`` in parallel with the identity on ``extra``."""
    if not len(extra):
        return c
    ident = identity(extra)
    if isinstance(c, QuantumChannel):
        ident = as_quantum(ident)
    return parallel(c, ident)


def compose_on(c: Channel, g: Channel) -> Channel:
    """Post-compose ``g`` on the subset ``g.input`` of the outputs of ``c``."""
    rest = c.output.without(g.input.names)
    if _same_kind(c, g) or not len(rest):
        return serial(c, extend(g, rest))
    for n in g.input.names:
        if c.output.port(n).dim != g.input.port(n).dim:
            raise InterfaceError(f"port {n!r} has different dimensions")
    clash = set(rest.names) & set(g.output.names)
    if clash:
        raise InterfaceError(f"duplicate port names {sorted(clash)}")
    return _contract_on(as_quantum(c), as_quantum(g), rest)


def _contract_on(c: QuantumChannel, g: QuantumChannel, rest: Interface) -> QuantumChannel:
    """Choi contraction of ``g`` into ``c`` without forming ``g (x) id``."""
    co, ci, go = len(c.output), len(c.input), len(g.output)
    n = co + ci
    ids = iter(range(2 * (n + go)))
    c_row = [next(ids) for _ in range(n)]
    c_col = [next(ids) for _ in range(n)]
    g_out_row = [next(ids) for _ in range(go)]
    g_out_col = [next(ids) for _ in range(go)]
    pos = {name: k for k, name in enumerate(c.output.names)}
    g_row = g_out_row + [c_row[pos[nm]] for nm in g.input.names]
    g_col = g_out_col + [c_col[pos[nm]] for nm in g.input.names]
    out = Interface(list(rest) + list(g.output))
    label = {nm: ("g", k) for k, nm in enumerate(g.output.names)}
    label.update({nm: ("c", pos[nm]) for nm in rest.names})

    def axis(nm, row):
        src, k = label[nm]
        if src == "g":
            return (g_out_row if row else g_out_col)[k]
        return (c_row if row else c_col)[k]

    res_row = [axis(nm, True) for nm in out.names] + c_row[co:]
    res_col = [axis(nm, False) for nm in out.names] + c_col[co:]
    j = np.einsum(c.tensor(), c_row + c_col, g.tensor(), g_row + g_col, res_row + res_col, optimize=True)
    return QuantumChannel(c.input, out, j.reshape(out.total * c.input.total, -1))


def precompose_on(c: Channel, g: Channel) -> Channel:
    """Feed the outputs of ``g`` into the matching inputs of ``c``."""
    rest = c.input.without(g.output.names)
    return serial(extend(g, rest), c)


# ---------------------------------------------------------------- comparisons

def difference(a: Channel, b: Channel) -> float:
    """Max-entry distance between two channels on the same interfaces."""
    if a.input != b.input or a.output != b.output:
        raise InterfaceError(f"interfaces differ: {a.input}->{a.output} vs {b.input}->{b.output}")
    if _same_kind(a, b):
        return float(np.max(np.abs(a.table - b.table))) if a.table.size else 0.0
    qa, qb = as_quantum(a), as_quantum(b)
    return float(np.max(np.abs(qa.choi - qb.choi))) if qa.choi.size else 0.0


def frobenius_difference(a: Channel, b: Channel) -> float:
    if a.input != b.input or a.output != b.output:
        raise InterfaceError("interfaces differ")
    if _same_kind(a, b):
        return float(np.linalg.norm(a.table - b.table))
    return float(np.linalg.norm(as_quantum(a).choi - as_quantum(b).choi))


def close(a: Channel, b: Channel, tol: float = ALG_TOL) -> bool:
    try:
        return difference(a, b) <= tol
    except InterfaceError:
        return False


# ---------------------------------------------------------------- non-signalling

@dataclass(frozen=True)
class NonSignalling:
    ok: bool
    residual: float
    factored: Channel | None

    def __bool__(self):
        return self.ok


def is_nonsignalling(c: Channel, from_inputs: Iterable[str], to_outputs: Iterable[str],
                     tol: float = ALG_TOL) -> NonSignalling:
    src = set(from_inputs)
    for n in src:
        c.input.port(n)
    m = marginal(c, to_outputs)
    rest_in = m.input.without(src)
    x0 = m.input.sub(src)
    if isinstance(m, ClassicalChannel):
        ten = m.tensor()
        axes = tuple(len(m.output) + i for i, n in enumerate(m.input.names) if n in src)
        mean = ten.mean(axis=axes, keepdims=True) if axes else ten
        res = float(np.max(np.abs(ten - mean))) if ten.size else 0.0
        red = mean.reshape(m.output.total, rest_in.total)
        fact = ClassicalChannel(rest_in, m.output, red)
    else:
        dims = m.factor_dims
        n_out = len(m.output)
        keep = list(range(n_out)) + [n_out + i for i, n in enumerate(m.input.names) if n not in src]
        red = tc.partial_trace(m.choi, dims, keep) / x0.total if dims else m.choi
        fact = QuantumChannel(rest_in, m.output, red)
        rebuilt = parallel(fact, primitive("trash", x0, quantum=True))
        # trash on X0 has Choi I, so rebuilt = red (x) I_{X0} in canonical layout
        res = float(np.linalg.norm(m.choi - as_quantum(rebuilt).choi))
    ok = res <= tol
    return NonSignalling(ok, res, fact if ok else None)


# ---------------------------------------------------------------- CIT -> QIT

def embed_classical(t: ClassicalChannel) -> QuantumChannel:
    do, di = t.output.total, t.input.total
    return QuantumChannel(t.input, t.output, np.diag(t.table.reshape(do * di).astype(complex)))


def measurement_from_povm(effects: Sequence[np.ndarray], input_port: Port | tuple = ("h", None),
                          output_name: str = "y", tol: float = ALG_TOL) -> QuantumChannel:
    effects = [tc.as_matrix(e) for e in effects]
    d = effects[0].shape[0]
    total = sum(effects)
    if np.max(np.abs(total - np.eye(d))) > tol:
        raise ValueError("effects do not sum to the identity")
    for e in effects:
        if np.max(np.abs(e - e.conj().T)) > tol or np.linalg.eigvalsh((e + e.conj().T) / 2).min() < -tol:
            raise ValueError("effects must be positive semidefinite")
    name = input_port[0] if isinstance(input_port, tuple) else input_port.name
    inp = Interface([Port(name, d, QUANTUM)])
    out = Interface([Port(output_name, len(effects), CLASSICAL)])
    j = sum(np.kron(tc.proj(tc.ket(y, len(effects))), e.T) for y, e in enumerate(effects))
    return QuantumChannel(inp, out, j)
