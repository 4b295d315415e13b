"""Small named channels and stencils used by examples, tests and the CLI."""

from __future__ import annotations

import numpy as np

from . import channels as ch
from .causal import (BOX, PORT, CausalChannel, CausalDilation, Filling, Stencil, Wire, causal,
                     causal_serial, evaluate_stencil)
from .channels import ClassicalChannel, Interface, Port


def bit(name: str) -> Port:
    return Port(name, 2)


def unit(name: str) -> Port:
    """A trivial one-level classical system, used to carry a "done" signal."""
    return Port(name, 1)


def xor(a: str, b: str, out: str) -> ClassicalChannel:
    return ch.function_channel(lambda v: {out: v[a] ^ v[b]}, Interface([bit(a), bit(b)]),
                               Interface([bit(out)]))


def copy(src: str, out1: str, out2: str, dim: int = 2) -> ClassicalChannel:
    return ch.function_channel(lambda v: {out1: v[src], out2: v[src]}, Interface([Port(src, dim)]),
                               Interface([Port(out1, dim), Port(out2, dim)]))


def shared_bits(a: str, b: str) -> ClassicalChannel:
    """Two copies of one uniform bit."""
    return ClassicalChannel(ch.EMPTY, Interface([bit(a), bit(b)]), np.array([[.5], [0], [0], [.5]]))


def uniform_bit(name: str) -> ClassicalChannel:
    return ch.primitive("uniform", Interface([bit(name)]))


def _stencil(boxes, wires, win, wout) -> Stencil:
    verts = [(b, BOX) for b in boxes] + [(p, PORT) for p in list(win) + list(wout)]
    return Stencil(tuple(verts), tuple(Wire(*w) for w in wires), tuple(win), tuple(wout))


# ---------------------------------------------------------------- Bell-type tables

def pr_box() -> ClassicalChannel:
    """Outputs with y_a XOR y_b = x_a AND x_b, each valid pair equally likely."""
    iface_in = Interface([bit("xa"), bit("xb")])
    iface_out = Interface([bit("ya"), bit("yb")])
    t = np.zeros((4, 4))
    for xa in range(2):
        for xb in range(2):
            for ya in range(2):
                for yb in range(2):
                    if ya ^ yb == xa & xb:
                        t[2 * ya + yb, 2 * xa + xb] = 0.5
    return ClassicalChannel(iface_in, iface_out, t)


def pr_box_causal() -> CausalChannel:
    return causal(pr_box(), {"ya": {"xa"}, "yb": {"xb"}})


# ---------------------------------------------------------------- one-time pad

def one_time_pad() -> tuple[Stencil, Filling]:
    """Message m, shared key bits (k1, k), ciphertext c = m XOR k1."""
    g = _stencil(["kappa", "xor"],
                 [("m", "xor", 2, ch.CLASSICAL, "m"),
                  ("kappa", "xor", 2, ch.CLASSICAL, "k1"),
                  ("kappa", "k", 2, ch.CLASSICAL, "k"),
                  ("xor", "c", 2, ch.CLASSICAL, "c")],
                 ["m"], ["c", "k"])
    f = Filling({"kappa": causal(shared_bits("k1", "k")), "xor": causal(xor("m", "k1", "c"))})
    return g, f


def one_time_pad_split() -> tuple[Stencil, Filling]:
    """Same channel, with the key drawn by one box and copied by another."""
    g = _stencil(["r", "dup", "xor"],
                 [("m", "xor", 2, ch.CLASSICAL, "m"),
                  ("r", "dup", 2, ch.CLASSICAL, "r"),
                  ("dup", "xor", 2, ch.CLASSICAL, "k1"),
                  ("dup", "k", 2, ch.CLASSICAL, "k"),
                  ("xor", "c", 2, ch.CLASSICAL, "c")],
                 ["m"], ["c", "k"])
    f = Filling({"r": causal(uniform_bit("r")), "dup": causal(copy("r", "k1", "k")),
                 "xor": causal(xor("m", "k1", "c"))})
    return g, f


# ---------------------------------------------------------------- bit refreshment

def bit_refresh() -> CausalChannel:
    """Trash the input bit, then emit a fresh uniform bit; y is caused by x."""
    tr = ClassicalChannel(Interface([bit("x")]), Interface([unit("s")]), np.ones((1, 2)))
    r = ClassicalChannel(Interface([unit("s")]), Interface([bit("y")]), np.full((2, 1), .5))
    return causal_serial(causal(tr), causal(r))


def bit_refresh_plain() -> ClassicalChannel:
    return ClassicalChannel(Interface([bit("x")]), Interface([bit("y")]), np.full((2, 2), .5))


def refresh_dilation_copy() -> CausalDilation:
    """The random bit is drawn in advance; the input is stored, a copy of the bit is hidden."""
    stall = ch.function_channel(lambda v: {"xcopy": v["x"], "s": 0}, Interface([bit("x")]),
                                Interface([bit("xcopy"), unit("s")]))
    emit = ch.function_channel(lambda v: {"y": v["ra"]}, Interface([unit("s"), bit("ra")]), Interface([bit("y")]))
    g = _stencil(["r", "dup", "stall", "emit"],
                 [("x", "stall", 2, ch.CLASSICAL, "x"),
                  ("r", "dup", 2, ch.CLASSICAL, "r"),
                  ("dup", "emit", 2, ch.CLASSICAL, "ra"),
                  ("dup", "rcopy", 2, ch.CLASSICAL, "rcopy"),
                  ("stall", "xcopy", 2, ch.CLASSICAL, "xcopy"),
                  ("stall", "emit", 1, ch.CLASSICAL, "s"),
                  ("emit", "y", 2, ch.CLASSICAL, "y")],
                 ["x"], ["y", "xcopy", "rcopy"])
    f = Filling({"r": causal(uniform_bit("r")), "dup": causal(copy("r", "ra", "rcopy")),
                 "stall": causal(stall), "emit": causal(emit)})
    return CausalDilation.from_stencil(g, f, (), ("xcopy", "rcopy"))


def refresh_dilation_flip() -> CausalDilation:
    """A hidden random bit decides whether the input is flipped; input and bit are both copied."""
    g = _stencil(["r", "dup", "keep", "xor"],
                 [("x", "keep", 2, ch.CLASSICAL, "x"),
                  ("keep", "xor", 2, ch.CLASSICAL, "xa"),
                  ("keep", "xcopy", 2, ch.CLASSICAL, "xcopy"),
                  ("r", "dup", 2, ch.CLASSICAL, "r"),
                  ("dup", "xor", 2, ch.CLASSICAL, "ra"),
                  ("dup", "rcopy", 2, ch.CLASSICAL, "rcopy"),
                  ("xor", "y", 2, ch.CLASSICAL, "y")],
                 ["x"], ["y", "xcopy", "rcopy"])
    f = Filling({"r": causal(uniform_bit("r")), "dup": causal(copy("r", "ra", "rcopy")),
                 "keep": causal(copy("x", "xa", "xcopy")), "xor": causal(xor("xa", "ra", "y"))})
    return CausalDilation.from_stencil(g, f, (), ("xcopy", "rcopy"))


def near_dilation() -> CausalDilation:
    """Bit refreshment through two XORs sharing a key; hidden input d, hidden output d."""
    g = _stencil(["kappa", "top", "bottom"],
                 [("din", "top", 2, ch.CLASSICAL, "d"),
                  ("kappa", "top", 2, ch.CLASSICAL, "k1"),
                  ("kappa", "bottom", 2, ch.CLASSICAL, "k2"),
                  ("x", "bottom", 2, ch.CLASSICAL, "x"),
                  ("top", "y", 2, ch.CLASSICAL, "y"),
                  ("bottom", "dout", 2, ch.CLASSICAL, "d")],
                 ["din", "x"], ["y", "dout"])
    f = Filling({"kappa": causal(shared_bits("k1", "k2")), "top": causal(xor("d", "k1", "y")),
                 "bottom": causal(xor("k2", "x", "d"))})
    return CausalDilation.from_stencil(g, f, ("d",), ("d",))


# ---------------------------------------------------------------- generic stencil

def generic_stencil(seed: int = 0) -> tuple[Stencil, Filling]:
    """Five boxes; y1..y3 depend on x1, x2, y4 on nothing and y5 on x3."""
    rng = np.random.default_rng(seed)
    w = ch.CLASSICAL
    g = _stencil(["T1", "T2", "T3", "T4", "T5"],
                 [("x1", "T1", 2, w, "x1"), ("x2", "T3", 2, w, "x2"), ("x3", "T5", 2, w, "x3"),
                  ("T4", "T3", 2, w, "u"), ("T4", "T2", 2, w, "v"), ("T4", "T5", 2, w, "s"),
                  ("T4", "y4", 2, w, "y4"),
                  ("T3", "T1", 2, w, "w"), ("T1", "T2", 2, w, "z"),
                  ("T1", "y1", 2, w, "y1"), ("T2", "y2", 2, w, "y2"), ("T2", "y3", 2, w, "y3"),
                  ("T5", "y5", 2, w, "y5")],
                 ["x1", "x2", "x3"], ["y1", "y2", "y3", "y4", "y5"])

    def box(ins, outs):
        return causal(ch.random_classical(Interface([bit(n) for n in ins]), Interface([bit(n) for n in outs]), rng))

    f = Filling({"T1": box(["x1", "w"], ["y1", "z"]), "T2": box(["z", "v"], ["y2", "y3"]),
                 "T3": box(["x2", "u"], ["w"]), "T4": box([], ["u", "v", "s", "y4"]),
                 "T5": box(["s", "x3"], ["y5"])})
    return g, f


def generic_channel(seed: int = 0) -> CausalChannel:
    return evaluate_stencil(*generic_stencil(seed))

