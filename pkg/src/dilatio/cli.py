"""Command-line front end: ``dilatio <area> <verb> [--in f]... [--tol t] [--seed n] [--out f]``.

Exit codes: 0 for success and true verdicts, 1 for false or infeasible
verdicts, 2 for usage and input errors, 3 for numerical failures.  Every
JSON result echoes the seed.  ``DILATIO_TOL`` sets the default tolerance.
"""

from __future__ import annotations

import argparse
import os
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import channels as ch
from . import fixtures as fx
from . import jsonio, metrics, rigidity_cit, selftest
from .causal import ContractionError, contract, evaluate_stencil, validate_causal
from .dilation import stinespring_minimal

OK, FALSE, USAGE, NUMERICAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class Verdict(Exception):
    """Carries a result whose verdict is false."""

    def __init__(self, payload: dict):
        super().__init__("false verdict")
        self.payload = payload


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (np.floating, float)):
        return float(x)
    if isinstance(x, (complex, np.complexfloating)):
        return [float(x.real), float(x.imag)]
    if isinstance(x, Fraction):
        return str(x)
    return x


# ---------------------------------------------------------------- inputs

def _inputs(args, n: int | None = None, at_least: int | None = None) -> list:
    files = args.inputs or []
    if n is not None and len(files) != n:
        raise UsageError(f"expected {n} --in file(s), got {len(files)}")
    if at_least is not None and len(files) < at_least:
        raise UsageError(f"expected at least {at_least} --in file(s)")
    return [jsonio.read(f) for f in files]


def _channel(data):
    return jsonio.channel_from_json(data["channel"] if "channel" in data and "kind" not in data else data)


def _isometry(c):
    iso = stinespring_minimal(c)
    if iso.env_dim != 1:
        raise UsageError("channel is not isometric")
    return iso.isometry


# ---------------------------------------------------------------- metric

def cmd_metric(args) -> dict:
    verb = args.verb
    if verb == "bp" and args.F is not None:
        r = metrics.bp_check(F=args.F)
        return {"beta": r.beta, "P": r.P, "residual": r.residual}
    a, b = (_channel(d) for d in _inputs(args, 2))
    tol = args.tol if args.tol is not None else ch.SOLVER_TOL
    if verb == "d1":
        return {"value": metrics.trace_distance(a, b)}
    if verb == "diamond":
        d = metrics.diamond_distance(a, b, tol=tol, seed=args.seed)
        return {"value": d.value, "lower_bound": d.lower_bound, "certificate": d.certificate}
    if verb == "iso":
        r = metrics.iso_fidelities(_isometry(a), _isometry(b))
        return {"F": r.F, "FF": r.FF, "d_diamond": r.d_diamond, "d_inf": r.d_inf, "theta": r.theta}
    if verb == "pdiamond":
        r = metrics.pdiamond_interval(a, b, tol=tol, seed=args.seed)
        return {"interval": [r.lower, r.upper], "methods": r.methods}
    if verb == "bp":
        r = metrics.bp_check(pair=(_isometry(a), _isometry(b)))
        return {"beta": r.beta, "P": r.P, "residual": r.residual}
    raise UsageError(f"unknown metric {verb!r}")


# ---------------------------------------------------------------- stencil

def _stencil(args):
    docs = _inputs(args, at_least=1)
    g, f = jsonio.stencil_from_json(docs[0], Path(args.inputs[0]).parent)
    if f is None:
        if len(docs) < 2:
            raise UsageError("a stencil needs a filling (inline or as a second --in)")
        f = jsonio.filling_from_json(docs[1], Path(args.inputs[1]).parent)
    return g, f


def _pairing(items) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise UsageError(f"--pair expects out=in, got {item!r}")
        o, i = item.split("=", 1)
        out[o] = i
    return out


def cmd_stencil(args) -> dict:
    g, f = _stencil(args)
    tol = args.tol if args.tol is not None else 1e-8
    if args.verb == "eval":
        return jsonio.causal_to_json(evaluate_stencil(g, f))
    if args.verb == "spec":
        cc = evaluate_stencil(g, f)
        diag = validate_causal(cc, tol=tol)
        out = {"spec": cc.spec.to_json(), "valid": diag.ok, "residuals": diag.residuals}
        if not diag.ok:
            raise Verdict(out)
        return out
    if args.verb == "contract":
        pairing = _pairing(args.pair)
        if not pairing:
            raise UsageError("contract needs at least one --pair out=in")
        try:
            res = contract(g, f, pairing)
        except ContractionError as e:
            raise Verdict({"contractible": False, "reason": str(e)}) from None
        return {"contractible": True, "result": jsonio.causal_to_json(res.result),
                "stencil": jsonio.stencil_to_json(res.stencil, res.filling)}
    raise UsageError(f"unknown stencil verb {args.verb!r}")


# ---------------------------------------------------------------- rigidity

def _mix_channel():
    """Half identity (x) NOT plus half NOT (x) identity on two bits."""
    ident = np.eye(2)
    flip = ident[::-1]
    t = 0.5 * np.kron(ident, flip) + 0.5 * np.kron(flip, ident)
    iface_in = ch.Interface([fx.bit("xa"), fx.bit("xb")])
    iface_out = ch.Interface([fx.bit("ya"), fx.bit("yb")])
    return ch.ClassicalChannel(iface_in, iface_out, t)


RIGIDITY_FIXTURES = {
    "bit-refresh": fx.bit_refresh_plain,
    "pr-box": fx.pr_box,
    "id-not-mix": _mix_channel,
}


def cmd_rigidity(args) -> dict:
    if args.verb != "analyze":
        raise UsageError(f"unknown rigidity verb {args.verb!r}")
    if args.fixture:
        if args.fixture not in RIGIDITY_FIXTURES:
            raise UsageError(f"unknown fixture {args.fixture!r}")
        t = RIGIDITY_FIXTURES[args.fixture]()
    else:
        t = _channel(_inputs(args, 1)[0])
    if not isinstance(t, ch.ClassicalChannel):
        raise UsageError("rigidity analysis needs a classical channel")
    if args.bipartite:
        v = rigidity_cit.bipartite_rigid_sufficient(t)
    else:
        v = rigidity_cit.unipartite_rigid(t)
    out = {"rigid": bool(v.rigid), "decompositions": len(v.decompositions), "label": v.label,
           "details": [d.to_json() for d in v.decompositions]}
    if not v.rigid:
        raise Verdict(out)
    return out


# ---------------------------------------------------------------- selftest

def _strategy(data):
    return jsonio.strategy_from_json(data)


def _gammas(data):
    return {site: jsonio.channel_from_json(data[site]) for site in ("A", "B")}


def _decomposition(data):
    return [(p["weight"], selftest.Behaviour(np.asarray(p["behaviour"], dtype=float))) for p in data["parts"]]


def cmd_selftest(args) -> dict:
    verb = args.verb
    if verb == "chsh":
        if args.canonical:
            return {"value": selftest.chsh_value(selftest.behaviour_of(selftest.canonical_chsh()))}
        data = _inputs(args, 1)[0]
        if "pvms" in data:
            b = selftest.behaviour_of(_strategy(data))
        else:
            b = jsonio.behaviour_from_json(data)
        return {"value": selftest.chsh_value(b, exact=args.exact)}
    if verb == "behaviour":
        b = selftest.behaviour_of(_strategy(_inputs(args, 1)[0]))
        return {**jsonio.behaviour_to_json(b), "ns_residual": b.ns_residual()}
    if verb == "naimark":
        s = selftest.naimarkize(_strategy(_inputs(args, 1)[0]), force=args.force)
        return {**jsonio.strategy_to_json(s), "projective": s.is_projective()}
    if verb == "reduce":
        s, canon, red = _inputs(args, 3)
        tol = args.tol if args.tol is not None else 1e-6
        r = selftest.verify_reduction(_strategy(s), _strategy(canon), jsonio.reduction_from_json(red), tol=tol)
        out = {"ok": r.ok, "residual": r.residual, "phase": r.phase, "reason": r.reason}
        if not r.ok:
            raise Verdict(out)
        return out
    if verb == "derive":
        s, canon = (_strategy(d) for d in _inputs(args, 2))
        tol = args.tol if args.tol is not None else 1e-7
        if args.gammas:
            d = selftest.local_derivation(s, canon, "verify", _gammas(jsonio.read(args.gammas)), tol=tol)
        else:
            d = selftest.local_derivation(s, canon, "search", tol=tol, seed=args.seed)
        out = {"status": d.status, "residual": d.residual, "behaviour_gap": d.behaviour_gap}
        if d.ok and d.gammas:
            out["gammas"] = {k: jsonio.channel_to_json(v) for k, v in d.gammas.items()}
        if not d.ok:
            raise Verdict(out)
        return out
    if verb == "security":
        docs = _inputs(args, at_least=1)
        b = jsonio.behaviour_from_json(docs[0])
        if len(docs) == 1:
            v = selftest.ns_vertex(b)
            out = {"vertex": v.vertex, "spread": v.spread}
            if not v.vertex:
                raise Verdict(out)
            return out
        v = selftest.security_extremality(b, _decomposition(docs[1]))
        out = {"trivial": v.trivial, "residual": v.residual, "witness": v.witness,
               "vertex": v.vertex.vertex if v.vertex else None}
        if not v.trivial:
            raise Verdict(out)
        return out
    raise UsageError(f"unknown selftest verb {verb!r}")


# ---------------------------------------------------------------- fixtures

def _fixture(name: str, seed: int) -> dict:
    if name == "pr-box":
        return jsonio.channel_to_json(fx.pr_box())
    if name == "one-time-pad":
        return jsonio.stencil_to_json(*fx.one_time_pad())
    if name == "bit-refresh":
        return jsonio.causal_to_json(fx.bit_refresh())
    if name == "chsh-canonical":
        return jsonio.strategy_to_json(selftest.canonical_chsh())
    if name == "generic-stencil":
        return jsonio.stencil_to_json(*fx.generic_stencil(seed))
    raise UsageError(f"unknown fixture {name!r}")


FIXTURES = ("pr-box", "one-time-pad", "bit-refresh", "chsh-canonical", "generic-stencil")


# ---------------------------------------------------------------- parser

def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--in", dest="inputs", action="append", metavar="FILE", help="input JSON file (repeatable)")
    p.add_argument("--tol", type=float, default=None, help="tolerance (default: DILATIO_TOL or per command)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="write JSON here instead of stdout")
    p.add_argument("--format", choices=["json"], default="json")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="dilatio", description=__doc__.splitlines()[0])
    areas = parser.add_subparsers(dest="area", required=True)

    metric = areas.add_parser("metric", help="distances between channels")
    mv = metric.add_subparsers(dest="verb", required=True)
    for verb in ("d1", "diamond", "iso", "pdiamond"):
        mv.add_parser(verb, parents=[common])
    bp = mv.add_parser("bp", parents=[common])
    bp.add_argument("--F", type=float, default=None, help="fidelity instead of an isometric pair")

    stencil = areas.add_parser("stencil", help="causal stencils")
    sv = stencil.add_subparsers(dest="verb", required=True)
    sv.add_parser("eval", parents=[common])
    sv.add_parser("spec", parents=[common])
    con = sv.add_parser("contract", parents=[common])
    con.add_argument("--pair", action="append", metavar="OUT=IN")

    rig = areas.add_parser("rigidity", help="rigidity of classical channels")
    rv = rig.add_subparsers(dest="verb", required=True)
    an = rv.add_parser("analyze", parents=[common])
    an.add_argument("--fixture", default=None, help=f"one of {', '.join(RIGIDITY_FIXTURES)}")
    an.add_argument("--bipartite", action="store_true")

    st = areas.add_parser("selftest", help="quantum strategies and self-testing")
    tv = st.add_subparsers(dest="verb", required=True)
    tv.add_parser("behaviour", parents=[common])
    chsh = tv.add_parser("chsh", parents=[common])
    chsh.add_argument("--canonical", action="store_true")
    chsh.add_argument("--exact", action="store_true", help="rational arithmetic on a behaviour table")
    nai = tv.add_parser("naimark", parents=[common])
    nai.add_argument("--force", action="store_true", help="dilate projective sites too")
    tv.add_parser("reduce", parents=[common])
    der = tv.add_parser("derive", parents=[common])
    der.add_argument("--gammas", default=None, help="JSON {A: channel, B: channel}; search when absent")
    tv.add_parser("security", parents=[common])

    fix = areas.add_parser("fixtures", parents=[common], help="emit a named fixture")
    fix.add_argument("name", choices=FIXTURES)
    return parser


HANDLERS = {"metric": cmd_metric, "stencil": cmd_stencil, "rigidity": cmd_rigidity, "selftest": cmd_selftest}


def _emit(payload: dict, args) -> None:
    text = jsonio.dumps(_plain(payload))
    if args is not None and args.out:
        Path(args.out).write_text(text + "\n")
    else:
        sys.stdout.write(text + "\n")


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return USAGE if e.code else OK
    if args.tol is None and os.environ.get("DILATIO_TOL"):
        try:
            args.tol = float(os.environ["DILATIO_TOL"])
        except ValueError:
            sys.stderr.write("DILATIO_TOL is not a number\n")
            return USAGE
    if args.tol is not None and not args.tol > 0:
        sys.stderr.write("tolerance must be positive\n")
        return USAGE
    code = OK
    try:
        if args.area == "fixtures":
            payload = _fixture(args.name, args.seed)
        else:
            payload = HANDLERS[args.area](args)
    except Verdict as v:
        payload, code = v.payload, FALSE
    except (RuntimeError, np.linalg.LinAlgError, FloatingPointError, rigidity_cit.CapExceeded) as e:
        sys.stderr.write(f"numerical failure: {e}\n")
        return NUMERICAL
    except (UsageError, ValueError, KeyError, TypeError, OSError) as e:
        sys.stderr.write(f"error: {e}\n")
        return USAGE
    payload = dict(payload)
    payload["seed"] = args.seed
    _emit(payload, args)
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
