"""Causal channels, stencils and contraction.

A causal channel pairs a channel with a causal specification: for every
output port the set of input ports that may influence it.  Stencils are
acyclic wiring diagrams whose boxes are filled with causal channels;
evaluating a stencil composes its boxes in topological order.  Contraction
joins an open output wire to an open input wire and is only ever carried
out on a stencil representation.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import channels as ch
from .channels import Channel, ClassicalChannel, Interface, InterfaceError, Port, QuantumChannel
from .dilation import Dilation, alternating_fit, fresh_name, verify_dilation

BOX, PORT = "box", "port"


class StencilError(ValueError):
    pass


class ContractionError(StencilError):
    pass


# ====================================================================== specifications

class CausalSpec:
    """Cause sets per output port; the cause set of a port set is the union."""

    __slots__ = ("causes",)

    def __init__(self, causes: Mapping[str, Iterable[str]]):
        self.causes = {k: frozenset(v) for k, v in sorted(causes.items())}

    @classmethod
    def primitive(cls, c: Channel) -> "CausalSpec":
        every = frozenset(c.input.names)
        return cls({n: every for n in c.output.names})

    @property
    def outputs(self) -> tuple[str, ...]:
        return tuple(self.causes)

    def __getitem__(self, name: str) -> frozenset:
        try:
            return self.causes[name]
        except KeyError:
            raise InterfaceError(f"no output port {name!r} in the specification") from None

    def of(self, names: Iterable[str]) -> frozenset:
        out = frozenset()
        for n in names:
            out |= self[n]
        return out

    def restrict(self, names: Iterable[str]) -> "CausalSpec":
        return CausalSpec({n: self[n] for n in names})

    def renamed(self, inputs: Mapping[str, str] | None = None,
                outputs: Mapping[str, str] | None = None) -> "CausalSpec":
        inputs, outputs = dict(inputs or {}), dict(outputs or {})
        return CausalSpec({outputs.get(y, y): {inputs.get(x, x) for x in xs}
                           for y, xs in self.causes.items()})

    def __eq__(self, other) -> bool:
        return isinstance(other, CausalSpec) and self.causes == other.causes

    def __hash__(self):
        return hash(tuple(self.causes.items()))

    def __repr__(self):
        body = ", ".join(f"{y}<-{{{','.join(sorted(xs))}}}" for y, xs in self.causes.items())
        return f"CausalSpec({body})"

    def to_json(self) -> dict:
        return {y: sorted(xs) for y, xs in self.causes.items()}


@dataclass(frozen=True, eq=False)
class CausalChannel:
    channel: Channel
    spec: CausalSpec

    def __post_init__(self):
        if set(self.spec.outputs) != set(self.channel.output.names):
            raise InterfaceError(
                f"spec covers {sorted(self.spec.outputs)}, channel outputs are {list(self.channel.output.names)}")
        inputs = set(self.channel.input.names)
        for y, xs in self.spec.causes.items():
            if not xs <= inputs:
                raise InterfaceError(f"causes of {y!r} name unknown inputs {sorted(xs - inputs)}")

    @property
    def input(self) -> Interface:
        return self.channel.input

    @property
    def output(self) -> Interface:
        return self.channel.output


def causal(channel: Channel, spec: Mapping[str, Iterable[str]] | CausalSpec | None = None) -> CausalChannel:
    """Attach a spec; ``None`` means the primitive one (everything causes everything)."""
    if spec is None:
        spec = CausalSpec.primitive(channel)
    elif not isinstance(spec, CausalSpec):
        spec = CausalSpec(spec)
    return CausalChannel(channel, spec)


@dataclass(frozen=True)
class CausalDiagnostics:
    ok: bool
    residuals: dict

    def __bool__(self):
        return self.ok

    @property
    def worst(self) -> float:
        return max(self.residuals.values(), default=0.0)


def validate_causal(cc: CausalChannel, tol: float = 1e-8, all_subsets: bool = False) -> CausalDiagnostics:
    """Non-signalling residual from the non-causes of each output.

    Singletons suffice in both concrete theories; ``all_subsets`` audits
    every non-empty output set instead.
    """
    outs = list(cc.output.names)
    if all_subsets:
        groups = [c for r in range(1, len(outs) + 1) for c in itertools.combinations(outs, r)]
    else:
        groups = [(y,) for y in outs]
    res = {}
    for g in groups:
        quiet = set(cc.input.names) - cc.spec.of(g)
        if not quiet:
            res[g if all_subsets else g[0]] = 0.0
            continue
        r = ch.is_nonsignalling(cc.channel, quiet, g, tol=tol).residual
        res[g if all_subsets else g[0]] = r
    return CausalDiagnostics(all(v <= tol for v in res.values()), res)


# ====================================================================== composition

def causal_serial(a: CausalChannel, b: CausalChannel) -> CausalChannel:
    """``b`` after ``a``."""
    c = ch.serial(a.channel, b.channel)
    return CausalChannel(c, CausalSpec({z: a.spec.of(b.spec[z]) for z in b.spec.outputs}))


def causal_parallel(a: CausalChannel, b: CausalChannel) -> CausalChannel:
    c = ch.parallel(a.channel, b.channel)
    return CausalChannel(c, CausalSpec({**a.spec.causes, **b.spec.causes}))


def causal_compose_on(a: CausalChannel, g: CausalChannel) -> CausalChannel:
    """Post-compose ``g`` on some outputs of ``a``; the rest pass through."""
    c = ch.compose_on(a.channel, g.channel)
    causes = {y: xs for y, xs in a.spec.causes.items() if y not in g.input}
    causes.update({z: a.spec.of(g.spec[z]) for z in g.spec.outputs})
    return CausalChannel(c, CausalSpec(causes))


def causal_rename(cc: CausalChannel, inputs: Mapping[str, str] | None = None,
                  outputs: Mapping[str, str] | None = None) -> CausalChannel:
    return CausalChannel(ch.rename(cc.channel, inputs, outputs), cc.spec.renamed(inputs, outputs))


def causal_marginal(cc: CausalChannel, keep: Iterable[str]) -> CausalChannel:
    keep = list(keep)
    return CausalChannel(ch.marginal(cc.channel, keep), cc.spec.restrict(keep))


def causal_identity(iface: Interface) -> CausalChannel:
    return CausalChannel(ch.identity(iface), CausalSpec({n: {n} for n in iface.names}))


def causal_trash(iface: Interface) -> CausalChannel:
    return CausalChannel(ch.trash(iface), CausalSpec({}))


def causal_close(a: CausalChannel, b: CausalChannel, tol: float = ch.ALG_TOL) -> bool:
    return a.spec == b.spec and ch.close(a.channel, b.channel, tol)


# ====================================================================== stencils

@dataclass(frozen=True)
class Wire:
    src: str
    dst: str
    dim: int
    kind: str = ch.CLASSICAL
    name: str = ""

    @property
    def port(self) -> Port:
        return Port(self.name, self.dim, self.kind)


@dataclass(frozen=True, eq=False)
class Stencil:
    """Boxes and port vertices joined by named wires.

    ``win``/``wout`` list the port vertices carrying the open input and
    output wires.  Wire names become the port names of the evaluated
    channel and of the boxes they touch.
    """

    vertices: tuple
    wires: tuple
    win: tuple
    wout: tuple

    def __post_init__(self):
        verts = tuple((str(v), str(k)) for v, k in self.vertices)
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "win", tuple(self.win))
        object.__setattr__(self, "wout", tuple(self.wout))
        kinds = dict(verts)
        if len(kinds) != len(verts):
            raise StencilError("vertex ids must be unique")
        wires = []
        for w in self.wires:
            if w.src not in kinds or w.dst not in kinds:
                raise StencilError(f"wire {w} joins unknown vertices")
            name = w.name or self._default_name(w, kinds)
            wires.append(Wire(w.src, w.dst, int(w.dim), w.kind, name))
        object.__setattr__(self, "wires", tuple(wires))
        self._check(kinds)

    @staticmethod
    def _default_name(w: Wire, kinds) -> str:
        if kinds[w.src] == PORT:
            return w.src
        if kinds[w.dst] == PORT:
            return w.dst
        return f"{w.src}>{w.dst}"

    def _check(self, kinds):
        for v, k in kinds.items():
            if k not in (BOX, PORT):
                raise StencilError(f"vertex {v!r} has unknown kind {k!r}")
        for p in self.win + self.wout:
            if kinds.get(p) != PORT:
                raise StencilError(f"{p!r} is not a port vertex")
        if set(self.win) & set(self.wout):
            raise StencilError("a port vertex cannot be both input and output")
        ins = {v: [] for v in kinds}
        outs = {v: [] for v in kinds}
        for w in self.wires:
            outs[w.src].append(w)
            ins[w.dst].append(w)
        for v, k in kinds.items():
            if not ins[v] and not outs[v]:
                raise StencilError(f"vertex {v!r} is isolated")
            if k != PORT:
                continue
            if v in self.win:
                if ins[v] or len(outs[v]) != 1:
                    raise StencilError(f"input port {v!r} must have exactly one outgoing wire")
            elif v in self.wout:
                if outs[v] or len(ins[v]) != 1:
                    raise StencilError(f"output port {v!r} must have exactly one incoming wire")
            else:
                raise StencilError(f"port vertex {v!r} is neither an input nor an output")
        if _topological(self, None) is None:
            raise StencilError("stencil has a cycle")
        win, wout = set(self.win), set(self.wout)
        in_names = [w.name for w in self.wires if w.src in win]
        out_names = [w.name for w in self.wires if w.dst in wout]
        inner = [w.name for w in self.wires if w.src not in win and w.dst not in wout]
        for group, label in ((in_names, "input"), (out_names, "output"), (inner, "internal")):
            if len(set(group)) != len(group):
                raise StencilError(f"duplicate {label} wire names: {sorted(group)}")
        if set(inner) & (set(in_names) | set(out_names)):
            raise StencilError("internal wire names must differ from open wire names")

    # -- queries

    def kind(self, v: str) -> str:
        return dict(self.vertices)[v]

    @property
    def boxes(self) -> tuple[str, ...]:
        return tuple(v for v, k in self.vertices if k == BOX)

    @property
    def input_wires(self) -> tuple[Wire, ...]:
        win = set(self.win)
        return tuple(sorted((w for w in self.wires if w.src in win), key=lambda w: w.name))

    @property
    def output_wires(self) -> tuple[Wire, ...]:
        wout = set(self.wout)
        return tuple(sorted((w for w in self.wires if w.dst in wout), key=lambda w: w.name))

    @property
    def input(self) -> Interface:
        return Interface(w.port for w in self.input_wires)

    @property
    def output(self) -> Interface:
        return Interface(w.port for w in self.output_wires)

    def wires_into(self, v: str) -> list[Wire]:
        return [w for w in self.wires if w.dst == v]

    def wires_out_of(self, v: str) -> list[Wire]:
        return [w for w in self.wires if w.src == v]

    def topological_order(self) -> list[str]:
        """Boxes in Kahn order with lexicographic tie-break."""
        return [v for v in _topological(self, None) if self.kind(v) == BOX]

    def ancestry(self) -> CausalSpec:
        """Input wires upstream of each output wire."""
        up = {}
        for v in _topological(self, None):
            got = set()
            for w in self.wires_into(v):
                got |= up[w.src] | ({w.name} if w.src in self.win else set())
            up[v] = got
        return CausalSpec({w.name: up[w.src] | ({w.name} if w.src in self.win else set())
                           for w in self.output_wires})

    # -- JSON

    def to_json(self) -> dict:
        return {
            "vertices": [{"id": v, "kind": k} for v, k in self.vertices],
            "wires": [{"from": w.src, "to": w.dst, "dim": w.dim, "kind": w.kind, "name": w.name}
                      for w in self.wires],
            "win": list(self.win),
            "wout": list(self.wout),
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "Stencil":
        try:
            verts = [(v["id"], v["kind"]) for v in data["vertices"]]
            wires = [Wire(w["from"], w["to"], int(w["dim"]), w.get("kind", ch.CLASSICAL), w.get("name", ""))
                     for w in data["wires"]]
            return cls(tuple(verts), tuple(wires), tuple(data["win"]), tuple(data["wout"]))
        except (KeyError, TypeError) as e:
            raise StencilError(f"malformed stencil JSON: {e}") from None


def _topological(g: Stencil, tie: Sequence[str] | None):
    """Kahn's algorithm; returns ``None`` on a cycle."""
    ids = [v for v, _ in g.vertices]
    rank = {v: i for i, v in enumerate(tie)} if tie is not None else None
    indeg = {v: 0 for v in ids}
    succ = {v: [] for v in ids}
    for w in g.wires:
        indeg[w.dst] += 1
        succ[w.src].append(w.dst)
    key = (lambda v: (rank.get(v, len(rank)), v)) if rank is not None else (lambda v: (0, v))
    heap = [key(v) for v in ids if indeg[v] == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        _, v = heapq.heappop(heap)
        order.append(v)
        for u in succ[v]:
            indeg[u] -= 1
            if indeg[u] == 0:
                heapq.heappush(heap, key(u))
    return order if len(order) == len(ids) else None


@dataclass(frozen=True, eq=False)
class Filling:
    boxes: Mapping[str, CausalChannel] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "boxes", dict(self.boxes))

    def __getitem__(self, b: str) -> CausalChannel:
        return self.boxes[b]


def check_filling(g: Stencil, f: Filling) -> None:
    if set(f.boxes) != set(g.boxes):
        raise StencilError(f"filling covers boxes {sorted(f.boxes)}, stencil has {sorted(g.boxes)}")
    for b in g.boxes:
        cc = f[b]
        want_in = Interface(w.port for w in g.wires_into(b))
        want_out = Interface(w.port for w in g.wires_out_of(b))
        if cc.input != want_in or cc.output != want_out:
            raise StencilError(f"box {b!r} is {cc.input}->{cc.output}, its wires are {want_in}->{want_out}")


def box_stencil(cc: CausalChannel, box: str = "T") -> tuple[Stencil, Filling]:
    """The one-box representation of a causal channel."""
    verts = [(box, BOX)]
    wires, win, wout = [], [], []
    for p in cc.input:
        v = f"{box}:in:{p.name}"
        verts.append((v, PORT))
        win.append(v)
        wires.append(Wire(v, box, p.dim, p.kind, p.name))
    for p in cc.output:
        v = f"{box}:out:{p.name}"
        verts.append((v, PORT))
        wout.append(v)
        wires.append(Wire(box, v, p.dim, p.kind, p.name))
    return Stencil(tuple(verts), tuple(wires), tuple(win), tuple(wout)), Filling({box: cc})


def stencil_parallel(a: tuple[Stencil, Filling], b: tuple[Stencil, Filling]) -> tuple[Stencil, Filling]:
    """Side-by-side union; vertex ids of ``b`` are suffixed if they clash."""
    ga, fa = a
    gb, fb = b
    taken = {v for v, _ in ga.vertices}
    ren = {}
    for v, _ in gb.vertices:
        ren[v] = fresh_name(v, taken | set(ren.values()))
    verts = ga.vertices + tuple((ren[v], k) for v, k in gb.vertices)
    wires = ga.wires + tuple(Wire(ren[w.src], ren[w.dst], w.dim, w.kind, w.name) for w in gb.wires)
    g = Stencil(verts, wires, ga.win + tuple(ren[v] for v in gb.win), ga.wout + tuple(ren[v] for v in gb.wout))
    return g, Filling({**fa.boxes, **{ren[k]: v for k, v in fb.boxes.items()}})


def stencil_rename(g: Stencil, f: Filling, inputs: Mapping[str, str] | None = None,
                   outputs: Mapping[str, str] | None = None) -> tuple[Stencil, Filling]:
    """Rename open wires, carrying the change into the boxes they touch."""
    inputs, outputs = dict(inputs or {}), dict(outputs or {})
    win, wout = set(g.win), set(g.wout)
    boxes = dict(f.boxes)
    wires = []
    for w in g.wires:
        new = w.name
        if w.src in win and w.name in inputs:
            new = inputs[w.name]
        if w.dst in wout and w.name in outputs:
            if new != w.name and outputs[w.name] != new:
                raise StencilError(f"pass-through wire {w.name!r} renamed inconsistently")
            new = outputs[w.name]
        if new != w.name:
            if w.dst in boxes:
                boxes[w.dst] = causal_rename(boxes[w.dst], inputs={w.name: new})
            if w.src in boxes:
                boxes[w.src] = causal_rename(boxes[w.src], outputs={w.name: new})
        wires.append(Wire(w.src, w.dst, w.dim, w.kind, new))
    return Stencil(g.vertices, tuple(wires), g.win, g.wout), Filling(boxes)


# ====================================================================== evaluation

def evaluate_stencil(g: Stencil, f: Filling, order: Sequence[str] | None = None) -> CausalChannel:
    """Compose the boxes in topological order.

    ``order`` is an optional preference among boxes; ties and unlisted
    boxes fall back to lexicographic order.  Wires are tracked under
    private ids so that an output wire may reuse an input wire's name.
    """
    check_filling(g, f)
    seq = _topological(g, order)
    wid = {id(w): f"#{i}" for i, w in enumerate(g.wires)}
    start = Interface(Port(wid[id(w)], w.dim, w.kind) for w in g.input_wires)
    cur = ch.identity(start)
    causes = {wid[id(w)]: frozenset([w.name]) for w in g.input_wires}
    for v in seq:
        if g.kind(v) != BOX:
            continue
        cc = f[v]
        rin = {w.name: wid[id(w)] for w in g.wires_into(v)}
        rout = {w.name: wid[id(w)] for w in g.wires_out_of(v)}
        box = ch.rename(cc.channel, rin, rout)
        if isinstance(box, QuantumChannel) and isinstance(cur, ClassicalChannel):
            cur = ch.as_quantum(cur)
        cur = ch.compose_on(cur, box)
        for name, key in rout.items():
            causes[key] = frozenset().union(*(causes[rin[x]] for x in cc.spec[name]))
        for key in rin.values():
            causes.pop(key)
    back_in = {wid[id(w)]: w.name for w in g.input_wires}
    back_out = {wid[id(w)]: w.name for w in g.output_wires}
    result = ch.rename(cur, back_in, back_out)
    return CausalChannel(result, CausalSpec({back_out[k]: causes[k] for k in back_out}))


# ====================================================================== contraction

@dataclass(frozen=True, eq=False)
class Contraction:
    stencil: Stencil
    filling: Filling
    result: CausalChannel


def contract(g: Stencil, f: Filling, pairing: Mapping[str, str]) -> Contraction:
    """Feed open output wires into open input wires, ``{output: input}``.

    Raises ``ContractionError`` if the joined wires would close a cycle,
    and ``InterfaceError`` if a pair carries different systems.
    """
    check_filling(g, f)
    verts = dict(g.vertices)
    wires = list(g.wires)
    win, wout = list(g.win), list(g.wout)
    boxes = dict(f.boxes)
    if len(set(pairing.values())) != len(pairing):
        raise ContractionError("each input wire can be contracted only once")
    for o, i in pairing.items():
        wo = next((w for w in wires if w.name == o and w.dst in wout), None)
        wi = next((w for w in wires if w.name == i and w.src in win), None)
        if wo is None:
            raise ContractionError(f"no open output wire {o!r}")
        if wi is None:
            raise ContractionError(f"no open input wire {i!r}")
        if (wo.dim, wo.kind) != (wi.dim, wi.kind):
            raise InterfaceError(f"cannot contract {o!r} ({wo.dim}, {wo.kind}) with {i!r} ({wi.dim}, {wi.kind})")
        if wo is wi:
            raise ContractionError(f"wire {o!r} would be fed into itself")
        rest = [w for w in wires if w is not wo and w is not wi]
        new = fresh_name(o, {w.name for w in rest})
        joined = Wire(wo.src, wi.dst, wo.dim, wo.kind, new)
        wires = rest + [joined]
        wout.remove(wo.dst)
        win.remove(wi.src)
        del verts[wo.dst], verts[wi.src]
        if verts[wi.dst] == BOX and new != i:
            boxes[wi.dst] = causal_rename(boxes[wi.dst], inputs={i: new})
        if verts[wo.src] == BOX and new != o:
            boxes[wo.src] = causal_rename(boxes[wo.src], outputs={o: new})
    try:
        h = Stencil(tuple(verts.items()), tuple(wires), tuple(win), tuple(wout))
    except StencilError as e:
        if "cycle" in str(e):
            raise ContractionError(f"contraction along {dict(pairing)} closes a cycle") from None
        raise
    hf = Filling(boxes)
    return Contraction(h, hf, evaluate_stencil(h, hf))


def contractible(cc: CausalChannel, pairing: Mapping[str, str]) -> bool:
    """Spec-level test: the relation "input p causes output q" on the pairs is acyclic."""
    nodes = list(pairing)
    back = {i: o for o, i in pairing.items()}
    succ = {o: [back[x] for x in cc.spec[o] if x in back] for o in nodes}
    state = {}

    def visit(u) -> bool:
        state[u] = 1
        for v in succ[u]:
            if state.get(v) == 1 or (v not in state and not visit(v)):
                return False
        state[u] = 2
        return True

    return all(u in state or visit(u) for u in nodes)


# ====================================================================== causal dilations

@dataclass(frozen=True, eq=False)
class CausalDilation:
    """A causal channel with designated hidden ports.

    ``representation`` optionally carries a stencil whose evaluation is
    ``total``; derivation checks need it to contract without cycles.
    """

    total: CausalChannel
    hidden_in: frozenset = frozenset()
    hidden_out: frozenset = frozenset()
    representation: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "hidden_in", frozenset(self.hidden_in))
        object.__setattr__(self, "hidden_out", frozenset(self.hidden_out))
        for n in self.hidden_in:
            self.total.input.port(n)
        for n in self.hidden_out:
            self.total.output.port(n)

    @classmethod
    def from_stencil(cls, g: Stencil, f: Filling, hidden_in=(), hidden_out=()) -> "CausalDilation":
        return cls(evaluate_stencil(g, f), hidden_in, hidden_out, (g, f))

    @property
    def visible_inputs(self) -> frozenset:
        return frozenset(self.total.input.names) - self.hidden_in

    @property
    def visible_outputs(self) -> frozenset:
        return frozenset(self.total.output.names) - self.hidden_out

    def stencil(self) -> tuple[Stencil, Filling]:
        return self.representation if self.representation is not None else box_stencil(self.total, "L")


@dataclass(frozen=True)
class CausalCheck:
    ok: bool
    channel_ok: bool
    spec_ok: bool
    residual: float
    mismatched: tuple = ()

    def __bool__(self):
        return self.ok


def is_causal_dilation(cd: CausalChannel | CausalDilation, base: CausalChannel, hidden_in=None,
                       hidden_out=None, tol: float = 1e-8) -> CausalCheck:
    if isinstance(cd, CausalDilation):
        hidden_in = cd.hidden_in if hidden_in is None else hidden_in
        hidden_out = cd.hidden_out if hidden_out is None else hidden_out
        cd = cd.total
    hidden_in, hidden_out = frozenset(hidden_in or ()), frozenset(hidden_out or ())
    try:
        chk = verify_dilation(Dilation(base.channel, cd.channel, hidden_in, hidden_out), tol)
    except InterfaceError:
        return CausalCheck(False, False, False, np.inf)
    vis = [y for y in cd.output.names if y not in hidden_out]
    bad = tuple(y for y in vis if y not in base.spec.causes or cd.spec[y] != base.spec[y])
    spec_ok = not bad and set(vis) == set(base.spec.outputs)
    return CausalCheck(chk.ok and spec_ok, chk.ok, spec_ok, chk.residual, bad)


def acausal_ports(cd: CausalDilation) -> frozenset:
    """Hidden outputs with no visible input among their causes."""
    vis = cd.visible_inputs
    return frozenset(e for e in cd.hidden_out if not (cd.total.spec[e] & vis))


def dilation_parallel(a: CausalDilation, b: CausalDilation) -> CausalDilation:
    rep = None
    if a.representation is not None and b.representation is not None:
        rep = stencil_parallel(a.representation, b.representation)
    return CausalDilation(causal_parallel(a.total, b.total), a.hidden_in | b.hidden_in,
                          a.hidden_out | b.hidden_out, rep)


def contract_dilation(cd: CausalDilation, pairing: Mapping[str, str]) -> CausalDilation:
    """Contract hidden output wires into hidden input wires of a dilation."""
    for o, i in pairing.items():
        if o not in cd.hidden_out or i not in cd.hidden_in:
            raise ContractionError(f"{o!r}->{i!r} is not a hidden pair")
    g, f = cd.stencil()
    c = contract(g, f, pairing)
    return CausalDilation(c.result, cd.hidden_in - set(pairing.values()), cd.hidden_out - set(pairing),
                          (c.stencil, c.filling))


@dataclass(frozen=True)
class DerivationCheck:
    ok: bool
    residual: float
    spec_ok: bool
    result: CausalChannel | None = None

    def __bool__(self):
        return self.ok


def verify_env_derivation(l: CausalDilation, lp: CausalDilation, witness: CausalChannel,
                          contracted: Iterable[str] | None = None, tol: float = 1e-8) -> DerivationCheck:
    """Check that ``witness`` derives ``lp`` from ``l``.

    The witness takes ``l``'s hidden outputs E, ``lp``'s hidden inputs D'
    and possibly extra inputs A' (which get trashed), and produces ``l``'s
    hidden inputs D and ``lp``'s hidden outputs E'.  Placing it next to
    ``l`` and contracting D and E must give ``lp`` alongside trash on A'.
    """
    D, E = l.hidden_in, l.hidden_out
    Dp, Ep = lp.hidden_in, lp.hidden_out
    w_in, w_out = set(witness.input.names), set(witness.output.names)
    if not E <= w_in or not Dp <= w_in:
        raise InterfaceError("the witness must take the hidden outputs of l and the hidden inputs of lp")
    if w_out != D | Ep:
        raise InterfaceError("the witness must output exactly the hidden inputs of l and hidden outputs of lp")
    A = frozenset(w_in - E - Dp)
    contracted = D | E if contracted is None else frozenset(contracted)
    if not contracted <= D | E:
        raise InterfaceError("only hidden ports of l can be contracted")
    # give the two ends of every contracted wire one private name
    taken = set(l.total.input.names) | set(l.total.output.names) | w_in | w_out
    tag = {}
    for n in sorted(contracted):
        tag[("E", n)] = fresh_name(f"E.{n}", taken | set(tag.values()))
        tag[("D", n)] = fresh_name(f"D.{n}", taken | set(tag.values()))
    le = {n: tag[("E", n)] for n in E & contracted}
    ld = {n: tag[("D", n)] for n in D & contracted}
    lg, lf = stencil_rename(*l.stencil(), inputs=ld, outputs=le)
    wg, wf = box_stencil(causal_rename(witness, inputs=le, outputs=ld), "G")
    g, f = stencil_parallel((lg, lf), (wg, wf))
    pairs = {**{v: v for v in le.values()}, **{v: v for v in ld.values()}}
    res = contract(g, f, pairs).result
    want = lp.total
    if A:
        want = causal_parallel(want, causal_trash(witness.input.sub(A)))
    spec_ok = res.spec == want.spec
    try:
        r = ch.difference(res.channel, want.channel)
    except InterfaceError:
        return DerivationCheck(False, np.inf, spec_ok, res)
    return DerivationCheck(spec_ok and r <= tol, r, spec_ok, res)


# ====================================================================== Bell dense form

@dataclass(frozen=True, eq=False)
class BellDilation:
    """A source ``t`` feeding local boxes ``parties[i]`` with visible outputs ``visible[i]``.

    The source outputs not consumed by any party form the acausal part E0;
    each party's non-visible outputs form its hidden interface E_i.
    """

    t: Channel
    parties: tuple
    visible: tuple

    def __post_init__(self):
        object.__setattr__(self, "parties", tuple(self.parties))
        object.__setattr__(self, "visible", tuple(frozenset(v) for v in self.visible))
        if len(self.parties) != len(self.visible):
            raise InterfaceError("one visible output set per party")
        if len(self.t.input):
            raise InterfaceError("the source of a Bell dilation must be a state")
        src = set(self.t.output.names)
        for p, vis in zip(self.parties, self.visible):
            if not vis <= set(p.output.names):
                raise InterfaceError(f"visible outputs {sorted(vis)} are not outputs of the party")
            if not set(p.input.names) & src:
                raise InterfaceError("every party must receive part of the source")

    @property
    def e0(self) -> tuple[str, ...]:
        used = set().union(*(p.input.names for p in self.parties))
        return tuple(n for n in self.t.output.names if n not in used)

    def hidden(self, i: int) -> tuple[str, ...]:
        return tuple(n for n in self.parties[i].output.names if n not in self.visible[i])

    def total(self) -> Channel:
        cur = self.t
        for p in self.parties:
            links = [n for n in p.input.names if n in cur.output.names]
            rest = p.input.without(links)
            if len(rest):
                cur = ch.parallel(cur, ch.identity(rest))
            cur = ch.compose_on(cur, p)
        return cur

    def causal(self) -> CausalChannel:
        """The total channel with the ancestry spec: each party's outputs hang on its own inputs."""
        src = set(self.t.output.names)
        causes = {n: frozenset() for n in self.e0}
        for p in self.parties:
            own = frozenset(n for n in p.input.names if n not in src)
            causes.update({y: own for y in p.output.names})
        return CausalChannel(self.total(), CausalSpec(causes))


@dataclass
class BellSearch:
    status: str
    residual: float
    source_map: Channel | None = None
    party_maps: tuple = ()

    @property
    def found(self) -> bool:
        return self.status in ("derivable", "witness-verified")


def _bell_pipeline(d1: BellDilation, d2: BellDilation):
    """Names and a builder for the left-hand side of the derivation identity."""
    n = len(d1.parties)
    if len(d2.parties) != n:
        raise InterfaceError("dilations have different numbers of parties")
    c1 = d1.total()
    hid1 = list(d1.e0) + [e for i in range(n) for e in d1.hidden(i)]
    taken = set(c1.input.names) | set(c1.output.names) | set(d2.total().output.names)
    ren = {}
    for h in hid1:
        ren[h] = fresh_name(f"old.{h}", taken | set(ren.values()))
    c1 = ch.rename(c1, outputs=ren)
    links = [fresh_name(f"link{i}", taken | set(ren.values())) for i in range(n)]
    e0_old = [ren[h] for h in d1.e0]
    e_old = [[ren[h] for h in d1.hidden(i)] for i in range(n)]

    def build(chs):
        cur = ch.compose_on(c1, chs["F"]) if e0_old or len(chs["F"].input) == 0 else c1
        if not e0_old:
            cur = ch.parallel(cur, chs["F"])
        for i in range(n):
            cur = ch.compose_on(cur, chs[f"G{i}"])
        return cur

    return build, e0_old, e_old, links


def _as_kind(c: Channel, quantum: bool) -> Channel:
    return ch.as_quantum(c) if quantum else c


def search_bell_derivation(d1: BellDilation, d2: BellDilation, link_dims: Sequence[int] | None = None,
                           max_iter: int = 30, tol: float = 1e-8, seed: int = 0,
                           restarts: int = 3) -> BellSearch:
    """Look for F on E0 and G_i on (E_i, link_i) turning ``d1`` into ``d2``.

    The identity is bilinear in (F, G), so the search alternates between
    linear fits.  A miss is reported as ``inconclusive``, never as a proof
    that no witnesses exist.
    """
    n = len(d1.parties)
    target = d2.total()
    c1 = d1.total()
    if set(target.input.names) != set(c1.input.names):
        raise InterfaceError("dilations have different inputs")
    for i in range(n):
        if d1.visible[i] != d2.visible[i]:
            raise InterfaceError("dilations have different visible outputs")
    build, e0_old, e_old, links = _bell_pipeline(d1, d2)
    quantum = isinstance(c1, QuantumChannel) or isinstance(target, QuantumChannel)
    e0_dim = int(np.prod([d1.t.output.port(h).dim for h in d1.e0])) if d1.e0 else 1
    link_dims = list(link_dims) if link_dims is not None else [e0_dim] * n
    kind = ch.QUANTUM if quantum else ch.CLASSICAL
    renamed = ch.rename(c1, outputs=dict(zip(list(d1.e0) + [e for i in range(n) for e in d1.hidden(i)],
                                             e0_old + [e for es in e_old for e in es])))
    f_in = Interface(renamed.output.port(h) for h in e0_old)
    f_out = Interface([target.output.port(h) for h in d2.e0] + [Port(links[i], link_dims[i], kind) for i in range(n)])
    g_in = [Interface([renamed.output.port(h) for h in e_old[i]] + [Port(links[i], link_dims[i], kind)])
            for i in range(n)]
    g_out = [Interface(target.output.port(h) for h in d2.hidden(i)) for i in range(n)]
    rng = np.random.default_rng(seed)

    def rand(inp, out):
        return ch.random_quantum(inp, out, rng) if quantum else ch.random_classical(inp, out, rng)

    best = None
    for _ in range(max(1, restarts)):
        start = {"F": rand(f_in, f_out), **{f"G{i}": rand(g_in[i], g_out[i]) for i in range(n)}}
        fit = alternating_fit(build, start, target, tol=tol, rounds=max_iter)
        if best is None or fit.residual < best.residual:
            best = fit
        if fit.found:
            break
    if best.found:
        gs = tuple(best.channels[f"G{i}"] for i in range(n))
        return BellSearch("derivable", best.residual, best.channels["F"], gs)
    return BellSearch("inconclusive", best.residual)


def verify_bell_derivation(d1: BellDilation, d2: BellDilation, source_map: Channel, party_maps: Sequence[Channel],
                           tol: float = 1e-8) -> BellSearch:
    """Check given witnesses; link ports must be named ``link0``, ``link1``, ..."""
    build, _, _, links = _bell_pipeline(d1, d2)
    chs = {"F": source_map, **{f"G{i}": g for i, g in enumerate(party_maps)}}
    out = build(chs)
    target = d2.total()
    try:
        r = ch.difference(out, target) if not isinstance(out, QuantumChannel) else \
            ch.difference(out, ch.as_quantum(target))
    except InterfaceError:
        return BellSearch("inconclusive", np.inf)
    status = "witness-verified" if r <= tol else "inconclusive"
    return BellSearch(status, r, source_map, tuple(party_maps))
