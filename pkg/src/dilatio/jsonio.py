"""JSON forms of channels, dilations, stencils, strategies and behaviours.

Floats go through ``json`` unchanged, and Python writes the shortest
string that reads back to the same double, so every round trip here is
bit-exact.  Complex entries are ``[re, im]`` pairs.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from . import channels as ch
from .causal import CausalChannel, CausalSpec, Filling, Stencil, causal
from .channels import ClassicalChannel, Interface, QuantumChannel
from .dilation import Dilation
from .selftest import Behaviour, Reduction, Strategy


class FormatError(ValueError):
    pass


# ---------------------------------------------------------------- arrays

def complex_to_json(m) -> list:
    a = np.asarray(m, dtype=complex)
    return np.stack([a.real, a.imag], axis=-1).tolist()


def complex_from_json(data) -> np.ndarray:
    a = np.asarray(data, dtype=float)
    if a.ndim == 0 or a.shape[-1] != 2:
        raise FormatError("complex entries must be [re, im] pairs")
    # assigning the parts keeps signed zeros that re + 1j * im would lose
    out = np.empty(a.shape[:-1], dtype=complex)
    out.real, out.imag = a[..., 0], a[..., 1]
    return out


# ---------------------------------------------------------------- channels

def channel_to_json(c: ch.Channel) -> dict:
    out = {"kind": c.kind, "input": c.input.to_json(), "output": c.output.to_json()}
    out["data"] = c.table.tolist() if isinstance(c, ClassicalChannel) else complex_to_json(c.choi)
    return out


def channel_from_json(data: Mapping) -> ch.Channel:
    try:
        kind = data["kind"]
        inp, out = Interface(data["input"]), Interface(data["output"])
        raw = data["data"]
    except (KeyError, TypeError) as e:
        raise FormatError(f"malformed channel JSON: {e}") from None
    if kind == ch.CLASSICAL:
        return ClassicalChannel(inp, out, np.asarray(raw, dtype=float).reshape(out.total, inp.total))
    if kind == ch.QUANTUM:
        n = out.total * inp.total
        return QuantumChannel(inp, out, complex_from_json(raw).reshape(n, n))
    raise FormatError(f"unknown channel kind {kind!r}")


def causal_to_json(cc: CausalChannel) -> dict:
    return {**channel_to_json(cc.channel), "spec": cc.spec.to_json()}


def causal_from_json(data: Mapping) -> CausalChannel:
    spec = data.get("spec")
    return causal(channel_from_json(data), None if spec is None else CausalSpec(spec))


def dilation_to_json(d: Dilation) -> dict:
    return {"base": channel_to_json(d.base), "total": channel_to_json(d.total),
            "hiddenIn": sorted(d.hidden_in), "hiddenOut": sorted(d.hidden_out)}


def dilation_from_json(data: Mapping) -> Dilation:
    return Dilation(channel_from_json(data["base"]), channel_from_json(data["total"]),
                    frozenset(data.get("hiddenIn", ())), frozenset(data.get("hiddenOut", ())))


# ---------------------------------------------------------------- stencils

def filling_to_json(f: Filling) -> dict:
    return {b: causal_to_json(cc) for b, cc in sorted(f.boxes.items())}


def filling_from_json(data: Mapping, base: Path | None = None) -> Filling:
    """Box ids map to inline channel objects or to paths of channel files."""
    boxes = {}
    for b, entry in data.items():
        if isinstance(entry, str):
            path = Path(entry) if base is None else base / entry
            entry = json.loads(path.read_text())
        boxes[b] = causal_from_json(entry)
    return Filling(boxes)


def stencil_to_json(g: Stencil, f: Filling | None = None) -> dict:
    out = g.to_json()
    if f is not None:
        out["filling"] = filling_to_json(f)
    return out


def stencil_from_json(data: Mapping, base: Path | None = None) -> tuple[Stencil, Filling | None]:
    g = Stencil.from_json(data)
    f = filling_from_json(data["filling"], base) if "filling" in data else None
    return g, f


# ---------------------------------------------------------------- strategies

def strategy_to_json(s) -> dict:
    out = {"state": complex_to_json(s.state),
           "pvms": {site: {str(x): [complex_to_json(e) for e in fam] for x, fam in enumerate(s.pvms[site])}
                    for site in ("A", "B")}}
    if s.vector is not None:
        out["vector"] = complex_to_json(s.vector)
    return out


def strategy_from_json(data: Mapping):
    try:
        pvms = {site: {x: [complex_from_json(e) for e in fam] for x, fam in data["pvms"][site].items()}
                for site in ("A", "B")}
        vec = complex_from_json(data["vector"]) if "vector" in data else None
        return Strategy(complex_from_json(data["state"]), pvms, vec)
    except (KeyError, TypeError) as e:
        raise FormatError(f"malformed strategy JSON: {e}") from None


def behaviour_to_json(b) -> dict:
    return {"behaviour": b.table.tolist()}


def behaviour_from_json(data: Mapping):
    if "behaviour" in data:
        return Behaviour(np.asarray(data["behaviour"], dtype=float))
    c = channel_from_json(data)
    if not isinstance(c, ClassicalChannel):
        raise FormatError("a behaviour channel must be classical")
    return Behaviour.from_channel(c)


def reduction_to_json(r) -> dict:
    return {"W_A": complex_to_json(r.W_A), "W_B": complex_to_json(r.W_B),
            "residual": complex_to_json(r.residual), "psi": complex_to_json(r.psi),
            "res_dims": list(r.res_dims), "purifier_dim": r.purifier_dim}


def reduction_from_json(data: Mapping):
    return Reduction(complex_from_json(data["W_A"]), complex_from_json(data["W_B"]),
                     complex_from_json(data["residual"]), complex_from_json(data["psi"]),
                     tuple(data["res_dims"]), int(data.get("purifier_dim", 1)))


# ---------------------------------------------------------------- files

def dumps(obj: Any) -> str:
    return json.dumps(obj, indent=1, sort_keys=True)


def read(path: str | Path) -> Any:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: {e}") from None


def write(path: str | Path, obj: Any) -> None:
    Path(path).write_text(dumps(obj) + "\n")
