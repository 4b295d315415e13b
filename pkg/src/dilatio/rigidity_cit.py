"""Convex decompositions of classical channels into deterministic ones.

A unipartite classical channel is rigid when its decomposition into
deterministic functions is unique; for bipartite channels uniqueness of
the decomposition into deterministic *product* channels is a sufficient
condition.  Everything here is explicit enumeration plus linear programs,
so sizes are capped.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import channels as ch
from . import optim
from .causal import BellDilation
from .channels import ClassicalChannel, Interface, InterfaceError, Port

ATOM_CAP = 4096
SUBSET_CAP = 200_000


class CapExceeded(ValueError):
    pass


@dataclass(frozen=True)
class DetDecomposition:
    """``table = sum_k weights[k] * atom_table(atoms[k])``.

    Unipartite atoms are tuples ``f`` with ``f[x] = y`` on flat indices;
    bipartite atoms are pairs of such tuples, one per site.
    """

    atoms: tuple
    weights: np.ndarray
    input: Interface
    output: Interface
    bipartite: bool = False
    sites: tuple | None = None

    @property
    def proper(self) -> bool:
        return bool(np.all(self.weights > 0)) and len(set(self.atoms)) == len(self.atoms)

    def table(self) -> np.ndarray:
        t = np.zeros((self.output.total, self.input.total))
        for a, w in zip(self.atoms, self.weights):
            t += w * self._atom_table(a)
        return t

    def _atom_table(self, a) -> np.ndarray:
        if not self.bipartite:
            return _function_table(a, self.output.total)
        return _product_table(a, self.input, self.output, self.sites)

    def as_dict(self) -> dict:
        return {tuple(a) if not self.bipartite else tuple(map(tuple, a)): float(w)
                for a, w in zip(self.atoms, self.weights)}

    def to_json(self) -> list:
        return [{"atom": [list(x) for x in a] if self.bipartite else list(a), "weight": float(w)}
                for a, w in zip(self.atoms, self.weights)]


def _function_table(f, n_out: int) -> np.ndarray:
    t = np.zeros((n_out, len(f)))
    t[list(f), range(len(f))] = 1.0
    return t


def _proper(atoms, weights, tol=1e-12):
    merged = {}
    for a, w in zip(atoms, weights):
        if w > tol:
            merged[a] = merged.get(a, 0.0) + float(w)
    keys = sorted(merged)
    w = np.array([merged[k] for k in keys])
    return tuple(keys), w / w.sum() if len(w) else w


# ---------------------------------------------------------------- unipartite

def _allowed_functions(t: ClassicalChannel, cap: int):
    n_out, n_in = t.table.shape
    if n_out ** n_in > cap:
        raise CapExceeded(f"{n_out}^{n_in} deterministic functions exceed the cap {cap}")
    # atoms using a zero-probability transition can never carry weight
    choices = [[y for y in range(n_out) if t.table[y, x] > 1e-12] for x in range(n_in)]
    return [tuple(f) for f in itertools.product(*choices)]


def _columns(atoms, n_out) -> np.ndarray:
    return np.stack([_function_table(f, n_out).reshape(-1) for f in atoms], axis=1)


def det_decompose(t: ClassicalChannel, cap: int = ATOM_CAP) -> DetDecomposition:
    """A proper decomposition from a vertex of the weight polytope."""
    atoms = _allowed_functions(t, cap)
    A = _columns(atoms, t.output.total)
    res = optim.lp_solve(optim.LinearProgram(np.zeros(len(atoms)), A, t.table.reshape(-1)))
    if not res.optimal:
        raise ValueError("channel admits no decomposition (is it stochastic?)")
    a, w = _proper(atoms, res.x)
    return DetDecomposition(a, w, t.input, t.output)


@dataclass(frozen=True)
class Uniqueness:
    unique: bool
    ranges: dict
    witnesses: tuple = ()
    certificates: tuple = ()

    def __bool__(self):
        return self.unique


def _weight_ranges(atoms, A, b, tol):
    """Min and max weight of every atom over {w >= 0 : A w = b}."""
    ranges, sols, certs = {}, {}, []
    n = len(atoms)
    for k in range(n):
        c = np.zeros(n)
        c[k] = 1.0
        lo = optim.lp_solve(optim.LinearProgram(c, A, b))
        hi = optim.lp_solve(optim.LinearProgram(-c, A, b))
        if not (lo.optimal and hi.optimal):
            raise ValueError("decomposition polytope is empty")
        certs += [lo.certificate(), hi.certificate()]
        ranges[atoms[k]] = (float(lo.objective), float(-hi.objective))
        sols[atoms[k]] = (lo.x, hi.x)
    return ranges, sols, tuple(certs)


def _uniqueness(atoms, A, b, make, tol):
    ranges, sols, certs = _weight_ranges(atoms, A, b, tol)
    spread = {a: hi - lo for a, (lo, hi) in ranges.items()}
    worst = max(spread, key=spread.get)
    if spread[worst] <= tol:
        return Uniqueness(True, ranges, (), certs)
    lo_x, hi_x = sols[worst]
    return Uniqueness(False, ranges, (make(*_proper(atoms, lo_x)), make(*_proper(atoms, hi_x))), certs)


def decomposition_unique(t: ClassicalChannel, cap: int = ATOM_CAP, tol: float = 1e-8) -> Uniqueness:
    atoms = _allowed_functions(t, cap)
    A = _columns(atoms, t.output.total)
    return _uniqueness(atoms, A, t.table.reshape(-1),
                       lambda a, w: DetDecomposition(a, w, t.input, t.output), tol)


def extreme_decompositions(t: ClassicalChannel, cap: int = ATOM_CAP,
                           subset_cap: int = SUBSET_CAP) -> list[DetDecomposition]:
    """Vertices of the weight polytope, found by support enumeration."""
    atoms = _allowed_functions(t, cap)
    A = _columns(atoms, t.output.total)
    b = t.table.reshape(-1)
    rank = np.linalg.matrix_rank(A)
    found, seen, tried = [], set(), 0
    for size in range(1, rank + 1):
        for S in itertools.combinations(range(len(atoms)), size):
            tried += 1
            if tried > subset_cap:
                raise CapExceeded(f"more than {subset_cap} supports to examine")
            sub = A[:, S]
            if np.linalg.matrix_rank(sub) < size:
                continue
            w, *_ = np.linalg.lstsq(sub, b, rcond=None)
            if np.max(np.abs(sub @ w - b)) > 1e-9 or np.any(w <= 1e-12):
                continue
            key = tuple(atoms[i] for i in S)
            if key in seen:
                continue
            seen.add(key)
            found.append(DetDecomposition(key, w / w.sum(), t.input, t.output))
    return found


def maximal_dilation(d: DetDecomposition, x: str | None = None, label: str = "lam",
                     label_copy: str = "lam0", input_copy: str = "xcopy") -> BellDilation:
    """Source draws a label; the party applies the labelled function and keeps a copy of its input."""
    if d.bipartite:
        raise InterfaceError("maximal_dilation expects a unipartite decomposition")
    k = len(d.atoms)
    t = ClassicalChannel(ch.EMPTY, Interface([Port(label, k), Port(label_copy, k)]),
                         np.diag(d.weights).reshape(-1, 1))
    lab = Port(label, k)
    inp = d.input.union(Interface([lab]))
    copy_ports = [Port(input_copy if len(d.input) == 1 else f"{input_copy}.{p.name}", p.dim) for p in d.input]
    out = d.output.union(Interface(copy_ports))
    table = np.zeros((out.total, inp.total))
    for idx in np.ndindex(*inp.dims):
        v = dict(zip(inp.names, idx))
        xs = tuple(v[n] for n in d.input.names)
        xflat = int(np.ravel_multi_index(xs, d.input.dims)) if len(d.input) else 0
        y = d.atoms[v[label]][xflat]
        ys = np.unravel_index(y, d.output.dims) if len(d.output) else ()
        vals = dict(zip(d.output.names, ys))
        vals.update({cp.name: v[p.name] for cp, p in zip(copy_ports, d.input)})
        row = int(np.ravel_multi_index(tuple(int(vals[n]) for n in out.names), out.dims))
        col = int(np.ravel_multi_index(idx, inp.dims)) if len(inp) else 0
        table[row, col] = 1.0
    party = ClassicalChannel(inp, out, table)
    return BellDilation(t, [party], [frozenset(d.output.names)])


@dataclass(frozen=True)
class RigidityVerdict:
    rigid: bool
    decompositions: tuple
    dilations: tuple
    uniqueness: Uniqueness | None = None
    label: str = "exact"

    def __bool__(self):
        return self.rigid


def unipartite_rigid(t: ClassicalChannel, cap: int = ATOM_CAP) -> RigidityVerdict:
    u = decomposition_unique(t, cap)
    ext = extreme_decompositions(t, cap)
    dils = tuple(maximal_dilation(d) for d in ext)
    return RigidityVerdict(u.unique, tuple(ext), dils, u)


# ---------------------------------------------------------------- bipartite

def _default_sites(t: ClassicalChannel):
    if len(t.input) != 2 or len(t.output) != 2:
        raise InterfaceError("default sites need exactly two input and two output ports")
    (xa, xb), (ya, yb) = t.input.names, t.output.names
    return ((xa,), (ya,)), ((xb,), (yb,))


def _site_axes(t: ClassicalChannel, sites):
    (ia, oa), (ib, ob) = sites
    if set(ia) | set(ib) != set(t.input.names) or set(oa) | set(ob) != set(t.output.names):
        raise InterfaceError("sites must partition the ports")
    return [t.input.sub(ia), t.output.sub(oa), t.input.sub(ib), t.output.sub(ob)]


def _product_table(atom, inp: Interface, out: Interface, sites) -> np.ndarray:
    (ia, oa), (ib, ob) = sites
    fa, fb = atom
    in_a, out_a = inp.sub(ia), out.sub(oa)
    in_b, out_b = inp.sub(ib), out.sub(ob)
    ta = ClassicalChannel(in_a, out_a, _function_table(fa, out_a.total))
    tb = ClassicalChannel(in_b, out_b, _function_table(fb, out_b.total))
    return ch.parallel(ta, tb).table


def _product_atoms(t, sites, cap):
    in_a, out_a, in_b, out_b = _site_axes(t, sites)
    n = out_a.total ** in_a.total * out_b.total ** in_b.total
    if n > cap:
        raise CapExceeded(f"{n} product atoms exceed the cap {cap}")
    fas = list(itertools.product(range(out_a.total), repeat=in_a.total))
    fbs = list(itertools.product(range(out_b.total), repeat=in_b.total))
    atoms = [(fa, fb) for fa in fas for fb in fbs]
    cols = np.stack([_product_table(a, t.input, t.output, sites).reshape(-1) for a in atoms], axis=1)
    keep = [k for k in range(len(atoms)) if np.all(t.table.reshape(-1)[cols[:, k] > 0] > 1e-12)]
    if not keep:
        # nothing survives pruning; hand the LP the full set so it reports infeasibility itself
        return atoms, cols
    return [atoms[k] for k in keep], cols[:, keep]


def _check_nonsignalling(t, sites, tol=1e-9):
    (ia, oa), (ib, ob) = sites
    for src, dst in ((ia, ob), (ib, oa)):
        ns = ch.is_nonsignalling(t, src, dst, tol)
        if not ns.ok:
            raise ValueError(f"channel signals from {src} to {dst} (residual {ns.residual:.2e})")


@dataclass(frozen=True)
class ProductFeasibility:
    feasible: bool
    decomposition: DetDecomposition | None
    lp: optim.LPResult

    def __bool__(self):
        return self.feasible


def bipartite_product_decompose(t: ClassicalChannel, sites=None, cap: int = ATOM_CAP) -> ProductFeasibility:
    """Decompose into deterministic product channels; infeasible means not a classical Bell channel."""
    sites = _default_sites(t) if sites is None else sites
    _check_nonsignalling(t, sites)
    atoms, A = _product_atoms(t, sites, cap)
    b = t.table.reshape(-1)
    res = optim.lp_solve(optim.LinearProgram(np.zeros(len(atoms)), A, b))
    if not res.optimal:
        return ProductFeasibility(False, None, res)
    a, w = _proper(atoms, res.x)
    return ProductFeasibility(True, DetDecomposition(a, w, t.input, t.output, True, sites), res)


def bipartite_rigid_sufficient(t: ClassicalChannel, sites=None, cap: int = ATOM_CAP,
                               tol: float = 1e-8) -> RigidityVerdict:
    """Unique product decomposition implies rigidity; the converse is not claimed."""
    sites = _default_sites(t) if sites is None else sites
    feas = bipartite_product_decompose(t, sites, cap)
    if not feas.feasible:
        return RigidityVerdict(False, (), (), None, "infeasible")
    atoms, A = _product_atoms(t, sites, cap)
    u = _uniqueness(atoms, A, t.table.reshape(-1),
                    lambda a, w: DetDecomposition(a, w, t.input, t.output, True, sites), tol)
    decs = (feas.decomposition,) if u.unique else u.witnesses
    return RigidityVerdict(u.unique, decs, (), u, "sufficient" if u.unique else "undecided")


# ---------------------------------------------------------------- CHSH

def _behaviour_array(b) -> np.ndarray:
    """``P[ya, yb, xa, xb]`` from a channel, an array of that shape, or an object with ``.table``."""
    if isinstance(b, ClassicalChannel):
        if b.input.dims != (2, 2) or b.output.dims != (2, 2):
            raise InterfaceError("CHSH needs two binary inputs and two binary outputs")
        return b.tensor()
    arr = getattr(b, "table", b)
    arr = np.asarray(arr, dtype=object if isinstance(np.asarray(arr).flat[0], Fraction) else float)
    if arr.shape == (4, 4):
        arr = arr.reshape(2, 2, 2, 2)
    if arr.shape != (2, 2, 2, 2):
        raise InterfaceError(f"CHSH needs a 2x2x2x2 behaviour, got shape {arr.shape}")
    return arr


def classical_chsh(b, exact: bool = False):
    """sum_x (-1)^(xa xb) E_x with outcome 0 read as +1 and 1 as -1.

    ``exact=True`` converts every entry to a ``Fraction`` first, so dyadic
    tables (such as the PR box) give exact rational values.
    """
    P = _behaviour_array(b)
    total = Fraction(0) if exact else 0.0
    for xa, xb in itertools.product(range(2), repeat=2):
        e = Fraction(0) if exact else 0.0
        for ya, yb in itertools.product(range(2), repeat=2):
            p = P[ya, yb, xa, xb]
            p = Fraction(p) if exact else float(p)
            e += (1 - 2 * ya) * (1 - 2 * yb) * p
        total += -e if xa and xb else e
    return total

