"""Bipartite quantum strategies and the self-testing toolkit.

A strategy is a state on ``H_A (x) H_B`` together with, for each site and
each input, a list of effects indexed by the outcome.  Behaviours are
stored as arrays ``P[ya, yb, xa, xb]`` and convert to classical channels
with ports ``xa, xb -> ya, yb``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import channels as ch
from . import optim
from . import tensor_core as tc
from .causal import CausalDilation, causal
from .channels import ClassicalChannel, Interface, InterfaceError, Port, QuantumChannel
from .dilation import fresh_name, stinespring_minimal
from .rigidity_cit import classical_chsh

SITES = ("A", "B")
EFFECT_TOL = 1e-9
PROB_TOL = 1e-10
NS_TOL = 1e-8
RANK_TOL = 1e-9


class StrategyError(ValueError):
    pass


class RankError(ValueError):
    """The reference strategy violates the locally-full-rank hypothesis."""


# ---------------------------------------------------------------- strategies

def _effects(site) -> tuple[tuple[np.ndarray, ...], ...]:
    if isinstance(site, dict):
        site = [site[k] for k in sorted(site, key=int)]
    return tuple(tuple(tc.as_matrix(e) for e in family) for family in site)


def _check_povm(family, d: int, tol: float):
    total = np.zeros((d, d), dtype=complex)
    for e in family:
        if e.shape != (d, d):
            raise StrategyError(f"effect of shape {e.shape} on a {d}-dimensional site")
        if np.max(np.abs(e - e.conj().T)) > tol:
            raise StrategyError("effect is not Hermitian")
        if np.linalg.eigvalsh((e + e.conj().T) / 2).min() < -tol:
            raise StrategyError("effect is not positive")
        total = total + e
    if np.max(np.abs(total - np.eye(d))) > tol:
        raise StrategyError("effects do not sum to the identity")


def _projective(family, tol: float) -> bool:
    for a, e in enumerate(family):
        for b, f in enumerate(family):
            target = e if a == b else np.zeros_like(e)
            if np.max(np.abs(e @ f - target), initial=0.0) > tol:
                return False
    return True


@dataclass(frozen=True, eq=False)
class Strategy:
    """``state`` may be a density matrix or a unit vector.

    ``pvms[site][x][y]`` is the effect for outcome ``y`` on input ``x``;
    a mapping ``{x: [...]}`` is accepted as well.  General POVMs are
    allowed so that :func:`naimarkize` has something to act on;
    ``is_projective`` tells the two apart.
    """

    state: np.ndarray = field(repr=False)
    pvms: dict = field(repr=False)
    vector: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if set(self.pvms) != set(SITES):
            raise StrategyError("a strategy has exactly the sites A and B")
        pvms = {s: _effects(self.pvms[s]) for s in SITES}
        dims = []
        for s in SITES:
            if not pvms[s] or any(not fam for fam in pvms[s]):
                raise StrategyError(f"site {s} needs at least one input and one outcome")
            if len({len(fam) for fam in pvms[s]}) != 1:
                raise StrategyError(f"site {s}: every input needs the same number of outcomes")
            d = pvms[s][0][0].shape[0]
            for fam in pvms[s]:
                _check_povm(fam, d, EFFECT_TOL)
            dims.append(d)
        st = np.asarray(self.state, dtype=complex)
        vec = self.vector
        if st.ndim == 1:
            vec = st
            st = np.outer(st, st.conj())
        n = dims[0] * dims[1]
        if st.shape != (n, n):
            raise StrategyError(f"state of shape {st.shape} on sites of dimensions {dims}")
        if np.max(np.abs(st - st.conj().T)) > EFFECT_TOL:
            raise StrategyError("state is not Hermitian")
        if abs(np.trace(st) - 1) > EFFECT_TOL or np.linalg.eigvalsh((st + st.conj().T) / 2).min() < -EFFECT_TOL:
            raise StrategyError("state is not a density matrix")
        if vec is not None:
            vec = np.asarray(vec, dtype=complex).reshape(-1)
            if np.max(np.abs(np.outer(vec, vec.conj()) - st)) > EFFECT_TOL:
                raise StrategyError("vector does not represent the state")
        object.__setattr__(self, "pvms", pvms)
        object.__setattr__(self, "state", st)
        object.__setattr__(self, "vector", vec)

    @property
    def dims(self) -> tuple[int, int]:
        return tuple(self.pvms[s][0][0].shape[0] for s in SITES)

    @property
    def inputs(self) -> tuple[int, int]:
        return tuple(len(self.pvms[s]) for s in SITES)

    @property
    def outcomes(self) -> tuple[int, int]:
        return tuple(len(self.pvms[s][0]) for s in SITES)

    def is_projective(self, tol: float = EFFECT_TOL) -> bool:
        return all(_projective(fam, tol) for s in SITES for fam in self.pvms[s])

    def check(self, tol: float = EFFECT_TOL) -> None:
        """Raise unless every measurement is projective."""
        if not self.is_projective(tol):
            raise StrategyError("measurements are not projective")

    def state_vector(self) -> np.ndarray:
        if self.vector is not None:
            return self.vector
        w, v = np.linalg.eigh(self.state)
        if w[-2:].size > 1 and w[-2] > RANK_TOL:
            raise StrategyError("state is not pure")
        return tc.fix_phase(v[:, -1].reshape(-1, 1)).reshape(-1)

    def is_pure(self) -> bool:
        return bool(np.linalg.eigvalsh(self.state)[-2:][0] <= RANK_TOL) if self.state.shape[0] > 1 else True

    def effect_array(self, site: str) -> np.ndarray:
        """``E[x, y]`` as an array of shape ``(X, Y, d, d)``."""
        return np.array([[e for e in fam] for fam in self.pvms[site]])


def purification(state) -> tuple[np.ndarray, int]:
    """A vector on ``H (x) P`` whose marginal on ``H`` is ``state``."""
    rho = tc.as_matrix(state)
    w, v = np.linalg.eigh((rho + rho.conj().T) / 2)
    keep = w > RANK_TOL
    w, v = np.clip(w[keep], 0, None), v[:, keep]
    psi = (v * np.sqrt(w)).reshape(-1)
    return psi / np.linalg.norm(psi), int(keep.sum())


def marginals(s: Strategy) -> tuple[np.ndarray, np.ndarray]:
    dA, dB = s.dims
    return (tc.partial_trace(s.state, [dA, dB], [0]), tc.partial_trace(s.state, [dA, dB], [1]))


# ---------------------------------------------------------------- behaviours

@dataclass(frozen=True, eq=False)
class Behaviour:
    table: np.ndarray = field(repr=False)

    def __post_init__(self):
        t = np.array(self.table, dtype=float)
        if t.ndim != 4:
            raise InterfaceError("a behaviour is an array P[ya, yb, xa, xb]")
        t[(t < 0) & (t >= -1e-12)] = 0.0
        if t.min(initial=0.0) < 0:
            raise ValueError("negative probability")
        if np.max(np.abs(t.sum(axis=(0, 1)) - 1)) > PROB_TOL:
            raise ValueError("each P^x must sum to one")
        t.setflags(write=False)
        object.__setattr__(self, "table", t)
        if self.ns_residual() > NS_TOL:
            raise ValueError(f"behaviour signals (residual {self.ns_residual():.2e})")

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.table.shape

    def ns_residual(self) -> float:
        pa = self.table.sum(axis=1)          # [ya, xa, xb]
        pb = self.table.sum(axis=0)          # [yb, xa, xb]
        ra = np.abs(pa - pa.mean(axis=2, keepdims=True)).max(initial=0.0)
        rb = np.abs(pb - pb.mean(axis=1, keepdims=True)).max(initial=0.0)
        return float(max(ra, rb))

    def marginal(self, site: str) -> np.ndarray:
        """``P(y_i | x_i)`` as an array ``[y, x]``."""
        if site == "A":
            return self.table.sum(axis=1)[:, :, 0]
        return self.table.sum(axis=0)[:, 0, :]

    def to_channel(self) -> ClassicalChannel:
        ya, yb, xa, xb = self.shape
        return ClassicalChannel(Interface([Port("xa", xa), Port("xb", xb)]),
                                Interface([Port("ya", ya), Port("yb", yb)]),
                                self.table.reshape(ya * yb, xa * xb))

    @classmethod
    def from_channel(cls, c: ClassicalChannel) -> "Behaviour":
        if len(c.input) != 2 or len(c.output) != 2:
            raise InterfaceError("a behaviour channel has two inputs and two outputs")
        return cls(c.tensor())

    def distance(self, other: "Behaviour") -> float:
        if self.shape != other.shape:
            return np.inf
        return float(np.max(np.abs(self.table - other.table)))


def behaviour_of(s: Strategy) -> Behaviour:
    """Born rule: ``P[ya, yb, xa, xb] = tr[(E^xa_ya (x) E^xb_yb) rho]``."""
    dA, dB = s.dims
    rho = s.state.reshape(dA, dB, dA, dB)
    P = np.einsum("xyij,zwkl,jlik->ywxz", s.effect_array("A"), s.effect_array("B"), rho, optimize=True)
    return Behaviour(P.real)


def chsh_value(b, exact: bool = False):
    return classical_chsh(b.to_channel() if isinstance(b, Behaviour) else b, exact=exact)


# ---------------------------------------------------------------- CHSH

def _basis(theta: float) -> list[np.ndarray]:
    v0 = np.array([np.cos(theta), np.sin(theta)])
    v1 = np.array([-np.sin(theta), np.cos(theta)])
    return [np.outer(v0, v0).astype(complex), np.outer(v1, v1).astype(complex)]


def canonical_chsh() -> Strategy:
    """Maximally entangled pair; A measures at angles 0 and pi/4, B at +-pi/8."""
    phi = np.array([1, 0, 0, 1], dtype=complex) / np.sqrt(2)
    return Strategy(phi, {"A": [_basis(0.0), _basis(np.pi / 4)],
                          "B": [_basis(np.pi / 8), _basis(-np.pi / 8)]})


def chsh_formula() -> np.ndarray:
    """The closed-form canonical table, with outcome 0 read as +1."""
    P = np.zeros((2, 2, 2, 2))
    for ya, yb, xa, xb in itertools.product(range(2), repeat=4):
        sa, sb = 1 - 2 * ya, 1 - 2 * yb
        P[ya, yb, xa, xb] = 0.25 + sa * sb / 4 * (-1) ** (xa * xb) / np.sqrt(2)
    return P


# ---------------------------------------------------------------- Naimark

def _naimark_site(fams, force: bool):
    if not force and all(_projective(f, EFFECT_TOL) for f in fams):
        return [list(f) for f in fams], 1
    d, k = fams[0][0].shape[0], len(fams[0])
    out = []
    for fam in fams:
        V = sum(np.kron(tc.psd_sqrt(e), tc.ket(y, k).reshape(-1, 1)) for y, e in enumerate(fam))
        U = tc.complete_isometry(V)
        # V must sit on the columns h (x) |0>
        cols = [h * k for h in range(d)]
        rest = [c for c in range(d * k) if c not in cols]
        order = np.empty(d * k, dtype=int)
        order[cols] = np.arange(d)
        order[rest] = np.arange(d, d * k)
        U = U[:, order]
        out.append([U.conj().T @ np.kron(np.eye(d), tc.proj(tc.ket(y, k))) @ U for y in range(k)])
    return out, k


def naimarkize(s: Strategy, force: bool = False) -> Strategy:
    """Projective strategy on ``(H_A (x) K_A) (x) (H_B (x) K_B)`` with the
    same behaviour.  Ancillas start in ``|0>``; sites that are already
    projective keep a trivial ancilla unless ``force`` is set."""
    pa, ka = _naimark_site(s.pvms["A"], force)
    pb, kb = _naimark_site(s.pvms["B"], force)
    dA, dB = s.dims
    dims, perm = [dA, dB, ka, kb], [0, 2, 1, 3]
    anc = tc.proj(tc.ket(0, ka * kb))
    state = tc.permute_factors(np.kron(s.state, anc), dims, perm)
    vec = None
    if s.vector is not None:
        vec = tc.permute_vector(np.kron(s.vector, tc.ket(0, ka * kb)), dims, perm)
    return Strategy(state, {"A": pa, "B": pb}, vec)


# ---------------------------------------------------------------- reductions

@dataclass(frozen=True, eq=False)
class Reduction:
    """Isometries ``W_i: H_i -> H~_i (x) R_i``, a residual vector on
    ``R_A (x) R_B (x) P`` and a purification ``psi`` on ``H_A (x) H_B (x) P``."""

    W_A: np.ndarray = field(repr=False)
    W_B: np.ndarray = field(repr=False)
    residual: np.ndarray = field(repr=False)
    psi: np.ndarray = field(repr=False)
    res_dims: tuple[int, int]
    purifier_dim: int = 1

    def __post_init__(self):
        for name in ("W_A", "W_B"):
            w = tc.as_matrix(getattr(self, name))
            if not tc.is_isometry(w, EFFECT_TOL):
                raise ValueError(f"{name} is not an isometry")
            object.__setattr__(self, name, w)
        for name in ("residual", "psi"):
            v = np.asarray(getattr(self, name), dtype=complex).reshape(-1)
            if abs(np.linalg.norm(v) - 1) > EFFECT_TOL:
                raise ValueError(f"{name} is not a unit vector")
            object.__setattr__(self, name, v)
        ra, rb = self.res_dims
        if self.residual.size != ra * rb * self.purifier_dim:
            raise ValueError("residual does not live on R_A (x) R_B (x) P")
        dA, dB = self.W_A.shape[1], self.W_B.shape[1]
        if self.psi.size != dA * dB * self.purifier_dim:
            raise ValueError("psi does not live on H_A (x) H_B (x) P")
        for w, r in ((self.W_A, ra), (self.W_B, rb)):
            if w.shape[0] % r:
                raise ValueError("isometry target is not a multiple of the residual dimension")


@dataclass(frozen=True)
class ReductionCheck:
    ok: bool
    residual: float
    phase: complex
    reason: str = ""

    def __bool__(self):
        return self.ok


def identity_reduction(canon: Strategy) -> Reduction:
    dA, dB = canon.dims
    return Reduction(np.eye(dA), np.eye(dB), np.ones(1), canon.state_vector(), (1, 1), 1)


def with_auxiliary(canon: Strategy, aux, aux_dims: tuple[int, int]) -> tuple[Strategy, Reduction]:
    """``canon`` tensored with a shared pure state the measurements ignore,
    along with the reduction that peels it off again."""
    tA, tB = canon.dims
    aA, aB = aux_dims
    aux = np.asarray(aux, dtype=complex).reshape(-1)
    aux = aux / np.linalg.norm(aux)
    perm = [0, 2, 1, 3]
    vec = tc.permute_vector(np.kron(canon.state_vector(), aux), [tA, tB, aA, aB], perm)
    pvms = {"A": [[np.kron(e, np.eye(aA)) for e in fam] for fam in canon.pvms["A"]],
            "B": [[np.kron(e, np.eye(aB)) for e in fam] for fam in canon.pvms["B"]]}
    s = Strategy(vec, pvms)
    return s, Reduction(np.eye(tA * aA), np.eye(tB * aB), aux, vec, (aA, aB), 1)


def rotated(canon: Strategy, U_A, U_B) -> Strategy:
    """Apply local unitaries to both the state and the measurements."""
    U = np.kron(tc.as_matrix(U_A), tc.as_matrix(U_B))
    vec = U @ canon.state_vector()
    pvms = {s: [[u @ e @ u.conj().T for e in fam] for fam in canon.pvms[s]]
            for s, u in (("A", tc.as_matrix(U_A)), ("B", tc.as_matrix(U_B)))}
    return Strategy(vec, pvms)


def _sides(s: Strategy, canon: Strategy, r: Reduction):
    """Yield (x, y, lhs, rhs) with both sides laid out as ``(tA, rA, tB, rB, P)``."""
    dA, dB = s.dims
    tA, tB = canon.dims
    rA, rB = r.res_dims
    P = r.purifier_dim
    psi = r.psi.reshape(dA, dB, P)
    ref = canon.state_vector().reshape(tA, tB)
    res = r.residual.reshape(rA, rB, P)
    for xa, xb in itertools.product(range(s.inputs[0]), range(s.inputs[1])):
        for ya, yb in itertools.product(range(s.outcomes[0]), range(s.outcomes[1])):
            ma = r.W_A @ s.pvms["A"][xa][ya]
            mb = r.W_B @ s.pvms["B"][xb][yb]
            lhs = np.einsum("ai,bj,ijp->abp", ma, mb, psi).reshape(tA, rA, tB, rB, P)
            v = canon.pvms["A"][xa][ya] @ ref @ canon.pvms["B"][xb][yb].T
            rhs = np.einsum("ab,cdp->acbdp", v, res)
            yield (xa, xb), (ya, yb), lhs, rhs


def verify_reduction(s: Strategy, canon: Strategy, r: Reduction, tol: float = 1e-6) -> ReductionCheck:
    """Check ``[W Pi^x(y) (x) 1_P] psi = Pi~^x(y) psi~ (x) psi_res`` for all x, y.

    A single global phase is read off the first pair whose vectors are
    not negligible and then used for every pair.
    """
    if s.inputs != canon.inputs or s.outcomes != canon.outcomes:
        raise InterfaceError("strategies have different input or outcome sets")
    dA, dB = s.dims
    tA, tB = canon.dims
    rA, rB = r.res_dims
    if r.W_A.shape != (tA * rA, dA) or r.W_B.shape != (tB * rB, dB):
        raise InterfaceError("isometries do not match the site dimensions")
    if r.psi.size != dA * dB * r.purifier_dim:
        raise InterfaceError("purification has the wrong size")
    P = r.purifier_dim
    rho = tc.partial_trace(np.outer(r.psi, r.psi.conj()), [dA * dB, P], [0])
    if np.max(np.abs(rho - s.state)) > EFFECT_TOL:
        return ReductionCheck(False, float(np.max(np.abs(rho - s.state))), 1.0, "psi does not purify the state")
    phase = None
    worst = 0.0
    for _, _, lhs, rhs in _sides(s, canon, r):
        if phase is None:
            if max(np.linalg.norm(lhs), np.linalg.norm(rhs)) <= 1e-6:
                continue
            ov = np.vdot(rhs, lhs)
            phase = ov / abs(ov) if abs(ov) > 1e-12 else 1.0
        worst = max(worst, float(np.linalg.norm(lhs - phase * rhs)))
    if phase is None:
        raise ValueError("every vector is negligible; the phase is undetermined")
    return ReductionCheck(worst <= tol, worst, complex(phase))


# ---------------------------------------------------------------- causal Stinespring dilations

def _ports(s: Strategy, P: int):
    (XA, XB), (YA, YB), (dA, dB) = s.inputs, s.outcomes, s.dims
    q = ch.QUANTUM
    inp = Interface([Port("xa", XA, q), Port("xb", XB, q)])
    outs = [Port("ea", dA * XA, q), Port("eb", dB * XB, q), Port("ya", YA, q), Port("yb", YB, q)]
    if P > 1:
        outs.append(Port("e0", P, q))
    return inp, Interface(outs)


def canonical_isometry(s: Strategy) -> tuple[np.ndarray, Interface, Interface]:
    """``S = sum_{x,y} [Pi^xa(ya) (x) Pi^xb(yb) (x) 1_P] psi (x) |x> (x) |y> <x|``.

    Rows follow the output interface (``e0``, ``ea = H_A (x) X_A``,
    ``eb = H_B (x) X_B``, ``ya``, ``yb``), columns the inputs ``xa, xb``.
    """
    s.check()
    psi, P = (s.vector, 1) if s.vector is not None else purification(s.state)
    (XA, XB), (YA, YB), (dA, dB) = s.inputs, s.outcomes, s.dims
    inp, out = _ports(s, P)
    psi3 = psi.reshape(dA, dB, P)
    S = np.zeros((P, dA, XA, dB, XB, YA, YB, XA, XB), dtype=complex)
    for xa, xb, ya, yb in itertools.product(range(XA), range(XB), range(YA), range(YB)):
        v = np.einsum("ij,kl,jlp->ikp", s.pvms["A"][xa][ya], s.pvms["B"][xb][yb], psi3)
        S[:, :, xa, :, xb, ya, yb, xa, xb] = v.transpose(2, 0, 1)
    return S.reshape(out.total, inp.total), inp, out


def canonical_dilation(s: Strategy) -> CausalDilation:
    """Isometric dilation of the behaviour with hidden outputs ``ea``, ``eb``
    (post-measurement system plus a copy of the input) and, for mixed
    states, the purifying system ``e0``."""
    S, inp, out = canonical_isometry(s)
    total = ch.from_kraus([S], inp, out)
    spec = {"ya": {"xa"}, "ea": {"xa"}, "yb": {"xb"}, "eb": {"xb"}}
    hidden = {"ea", "eb"}
    if "e0" in out:
        spec["e0"] = set()
        hidden.add("e0")
    return CausalDilation(causal(total, spec), frozenset(), frozenset(hidden))


def _check_full_rank(canon: Strategy):
    if not canon.is_pure():
        raise RankError("the reference state must be pure")
    for m in marginals(canon):
        if np.linalg.eigvalsh((m + m.conj().T) / 2).min() <= RANK_TOL:
            raise RankError("the reference state is not locally full rank")


def _factor_layout(c: QuantumChannel, port: str):
    """Choi tensor of ``c`` rearranged as ``L[r, e, s, f]`` around one output port."""
    dims = list(c.factor_dims)
    n = len(dims)
    k = c.output.index(port)
    others = [i for i in range(n) if i != k]
    perm = others + [k] + [n + i for i in others] + [n + k]
    R = int(np.prod([dims[i] for i in others]))
    return c.tensor().transpose(perm).reshape(R, dims[k], R, dims[k])


@dataclass
class Derivation:
    status: str
    residual: float
    gammas: dict = field(default_factory=dict, repr=False)
    behaviour_gap: float = 0.0

    @property
    def ok(self) -> bool:
        return self.status in ("verified", "derivable")

    def __bool__(self):
        return self.ok


def _apply_gammas(L: QuantumChannel, gammas: dict) -> QuantumChannel:
    out = L
    for g in (gammas["A"], gammas["B"]):
        out = ch.compose_on(out, g)
    return out


def _gamma_template(src: Interface, port: str, dim: int):
    return Interface([src.port(port)]), Interface([Port(port, dim, ch.QUANTUM)])


def local_derivation(s: Strategy, canon: Strategy, mode: str = "verify", gammas: dict | None = None,
                     tol: float = 1e-7, rounds: int = 60, restarts: int = 3, seed: int = 0) -> Derivation:
    """Compare the canonical dilation of ``s`` (purifying system traced out),
    post-processed by local channels on ``ea`` and ``eb``, with the
    canonical dilation of ``canon``.

    ``verify`` checks the given ``gammas = {"A": G_A, "B": G_B}``;
    ``search`` alternates CPTP fits of the two unknowns, each of which
    enters linearly.  A failed search is reported as ``inconclusive``.
    """
    _check_full_rank(canon)
    gap = behaviour_of(s).distance(behaviour_of(canon))
    if gap > NS_TOL:
        return Derivation("not-derivable", float(gap), {}, float(gap))
    dl = canonical_dilation(s).total.channel
    L = ch.marginal(dl, [n for n in dl.output.names if n != "e0"])
    target = canonical_dilation(canon).total.channel
    if mode == "verify":
        if gammas is None:
            raise ValueError("verify mode needs gammas")
        res = ch.difference(_apply_gammas(L, gammas), target)
        return Derivation("verified" if res <= tol else "rejected", res, dict(gammas), float(gap))
    if mode != "search":
        raise ValueError(f"unknown mode {mode!r}")
    rng = np.random.default_rng(seed)
    dims = {"A": ("ea", target.output.port("ea").dim), "B": ("eb", target.output.port("eb").dim)}

    def start(site, attempt):
        port, d = dims[site]
        inp, out = _gamma_template(L.output, port, d)
        if attempt == 0 and inp.total == d:
            return ch.unitary_channel(np.eye(d), inp, out)
        # witnesses between pure strategies are isometric, so start on an isometry
        return ch.random_quantum(inp, out, rng, rank=-(-inp.total // d))

    best = None
    for attempt in range(restarts):
        cur = {site: start(site, attempt) for site in dims}
        res = ch.difference(_apply_gammas(L, cur), target)
        for _ in range(rounds):
            if res <= tol:
                break
            before = res
            for site, (port, d) in dims.items():
                other = "B" if site == "A" else "A"
                fixed = ch.compose_on(L, cur[other])
                fmap = optim.FactorChoiMap(_factor_layout(fixed, port), d)
                goal = _factor_layout(target, port)
                fit = optim.cp_fit(fmap, goal, fixed.output.port(port).dim, d, tol=tol,
                                   x0=cur[site].choi, max_iter=2000)
                inp, out = _gamma_template(L.output, port, d)
                cand = {**cur, site: QuantumChannel(inp, out, fit.best)}
                r = ch.difference(_apply_gammas(L, cand), target)
                if r <= res + 1e-12:
                    cur, res = cand, r
            if res > 0.99 * before:
                break
        if best is None or res < best[0]:
            best = (res, cur)
        if res <= tol:
            break
    res, cur = best
    if res <= tol:
        return Derivation("derivable", res, cur, float(gap))
    return Derivation("inconclusive", res, {}, float(gap))


def reduction_from_derivation(s: Strategy, canon: Strategy, gammas: dict, tol: float = 1e-7) -> Reduction:
    """Read input-independent isometries off Stinespring dilations of the
    witnesses: ``W_i = (1 (x) <x_i|) G^_i (1 (x) |x_i>)``.

    The reading is taken at ``x_i = 0`` and checked against every other
    input; it needs the local marginals of ``s`` to be full rank so that
    the restriction to the support is the whole space.
    """
    for m in marginals(s):
        if np.linalg.eigvalsh((m + m.conj().T) / 2).min() <= RANK_TOL:
            raise RankError("extraction needs locally full-rank marginals")
    psi, P = (s.vector, 1) if s.vector is not None else purification(s.state)
    Ws, rs = [], []
    for site, d, t, X in zip(SITES, s.dims, canon.dims, s.inputs):
        iso = stinespring_minimal(gammas[site])
        r = iso.env_dim
        S = iso.isometry.reshape(t, X, r, d, X)
        reads = [S[:, x, :, :, x].reshape(t * r, d) for x in range(X)]
        spread = max(float(np.max(np.abs(m - reads[0]))) for m in reads)
        if spread > max(tol, 1e-6):
            raise ValueError(f"site {site}: isometry depends on the input (spread {spread:.2e})")
        Ws.append(reads[0])
        rs.append(r)
    (tA, tB), (rA, rB) = canon.dims, rs
    dA, dB = s.dims
    img = np.einsum("ai,bj,ijp->abp", Ws[0], Ws[1], psi.reshape(dA, dB, P)).reshape(tA, rA, tB, rB, P)
    res = np.einsum("ac,abcdp->bdp", canon.state_vector().reshape(tA, tB).conj(), img).reshape(-1)
    res = res / np.linalg.norm(res)
    return Reduction(Ws[0], Ws[1], res, psi, (rA, rB), P)


# ---------------------------------------------------------------- security and extremality

def ns_constraints(shape: tuple[int, int, int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Equalities cutting out the no-signalling polytope (with p >= 0)."""
    YA, YB, XA, XB = shape
    idx = np.arange(YA * YB * XA * XB).reshape(shape)
    rows, rhs = [], []
    n = idx.size

    def row(pos, neg=()):
        r = np.zeros(n)
        r[np.ravel(pos)] += 1
        r[np.ravel(np.asarray(neg, dtype=int))] -= 1
        return r

    for xa, xb in itertools.product(range(XA), range(XB)):
        rows.append(row(idx[:, :, xa, xb]))
        rhs.append(1.0)
    for xa, ya in itertools.product(range(XA), range(YA)):
        for xb in range(1, XB):
            rows.append(row(idx[ya, :, xa, xb], idx[ya, :, xa, 0]))
            rhs.append(0.0)
    for xb, yb in itertools.product(range(XB), range(YB)):
        for xa in range(1, XA):
            rows.append(row(idx[:, yb, xa, xb], idx[:, yb, 0, xb]))
            rhs.append(0.0)
    return np.array(rows), np.array(rhs)


@dataclass
class VertexCheck:
    vertex: bool
    spread: float
    certificates: list = field(default_factory=list, repr=False)


def ns_vertex(b: Behaviour, tol: float = 1e-9) -> VertexCheck:
    """Is ``b`` a vertex of the no-signalling polytope?

    Pins the coordinates where ``b`` vanishes and minimises and maximises
    each remaining one by LP; ``b`` is a vertex iff none of them can move.
    """
    A, rhs = ns_constraints(b.shape)
    flat = b.table.reshape(-1)
    bounds = [(0.0, 0.0) if v <= 1e-12 else (0.0, np.inf) for v in flat]
    spread, certs = 0.0, []
    for j in np.flatnonzero(flat > 1e-12):
        vals = []
        for sign in (1.0, -1.0):
            c = np.zeros(flat.size)
            c[j] = sign
            res = optim.lp_solve(optim.LinearProgram(c, A, rhs, bounds))
            if not res.optimal:
                raise RuntimeError(f"vertex LP failed: {res.certificate()}")
            certs.append(res.certificate())
            vals.append(sign * res.objective)
        spread = max(spread, vals[1] - vals[0])
    return VertexCheck(spread <= tol, float(spread), certs)


@dataclass
class SecurityVerdict:
    trivial: bool
    residual: float
    witness: dict | None
    flagged: ClassicalChannel = field(repr=False)
    vertex: VertexCheck | None = None


def flagged_dilation(weights, parts) -> ClassicalChannel:
    """``sum_k s_k P_k (x) |k><k|`` as a channel with an extra output ``k``."""
    tables = [p.table for p in parts]
    YA, YB, XA, XB = tables[0].shape
    K = len(tables)
    T = np.stack([w * t for w, t in zip(weights, tables)])          # [k, ya, yb, xa, xb]
    return ClassicalChannel(Interface([Port("xa", XA), Port("xb", XB)]),
                            Interface([Port("k", K), Port("ya", YA), Port("yb", YB)]),
                            T.reshape(K * YA * YB, XA * XB))


def security_extremality(b: Behaviour, decomposition, tol: float = 1e-8,
                         vertex_check: bool = True) -> SecurityVerdict:
    """Does the acausal dilation flagged by a convex decomposition factor?

    ``decomposition`` is a list of ``(weight, Behaviour)``.  The flagged
    dilation factors into ``b`` times a distribution on the flag exactly
    when all parts with positive weight equal ``b``; otherwise the most
    deviating ``(k, x)`` is returned as a witness.
    """
    weights = np.array([float(w) for w, _ in decomposition])
    parts = [p if isinstance(p, Behaviour) else Behaviour(p) for _, p in decomposition]
    if weights.min() < -1e-12 or abs(weights.sum() - 1) > 1e-9:
        raise ValueError("weights must form a probability vector")
    mix = sum(w * p.table for w, p in zip(weights, parts))
    if np.max(np.abs(mix - b.table)) > 1e-9:
        raise ValueError("decomposition does not reproduce the behaviour")
    flagged = flagged_dilation(weights, parts)
    flag = ch.marginal(flagged, ["k"]).table                          # [k, x], constant in x
    YA, YB, XA, XB = b.shape
    prod = np.einsum("kx,yx->kyx", flag, b.table.reshape(YA * YB, XA * XB))
    product = ClassicalChannel(flagged.input, flagged.output, prod.reshape(-1, XA * XB))
    residual = ch.difference(flagged, product)
    witness = None
    if residual > tol:
        dev = np.array([np.abs(p.table - b.table).max(axis=(0, 1)) if w > 0 else np.zeros(b.shape[2:])
                        for w, p in zip(weights, parts)])
        k, xa, xb = np.unravel_index(int(np.argmax(dev)), dev.shape)
        witness = {"part": int(k), "x": (int(xa), int(xb)), "deviation": float(dev[k, xa, xb])}
    vertex = ns_vertex(b) if vertex_check else None
    return SecurityVerdict(residual <= tol, float(residual), witness, flagged, vertex)


# ---------------------------------------------------------------- purely non-signalling channels

@dataclass
class SplitCheck:
    ok: bool
    split: tuple | None
    residual: float
    tried: int
    note: str = ""

    def __bool__(self):
        return self.ok


def _sites(c) -> tuple:
    (xa, xb), (ya, yb) = c.input.names, c.output.names
    return (xa, ya), (xb, yb)


def _split_residual(V: np.ndarray, c: QuantumChannel, rA: int, rB: int, sites) -> float:
    """Signalling residual of the dilation ``V`` with environment ``ea (x) eb``."""
    do, di = c.output.total, c.input.total
    out_dims = list(c.output.dims) + [rA, rB]
    ea = fresh_name("ea", c.output.names)
    eb = fresh_name("eb", list(c.output.names) + [ea])
    names = list(c.output.names) + [ea, eb]
    order = sorted(range(len(names)), key=lambda i: names[i])
    T = V.reshape(out_dims + [di]).transpose(order + [len(names)]).reshape(do * rA * rB, di)
    ports = list(c.output) + [Port(ea, rA, ch.QUANTUM), Port(eb, rB, ch.QUANTUM)]
    total = ch.from_kraus([T], c.input, Interface(ports))
    (xa, ya), (xb, yb) = sites
    ra = ch.is_nonsignalling(total, [xb], [ya, ea]).residual
    rb = ch.is_nonsignalling(total, [xa], [yb, eb]).residual
    return max(ra, rb)


def purely_nonsignalling_check(candidate, split=None, *, isometry=None, cap: int = 4, samples: int = 8,
                               seed: int = 0, tol: float = 1e-7) -> SplitCheck:
    """Look for a Stinespring dilation whose environment splits as
    ``E_A (x) E_B`` with ``(E_A, y_A)`` caused by ``x_A`` alone and
    ``(E_B, y_B)`` by ``x_B`` alone.

    With ``isometry`` (shape ``(out * rA * rB, in)``, output factors first)
    and ``split = (rA, rB)`` the given dilation is checked.  Otherwise the
    minimal dilation is embedded into ``C^rA (x) C^rB`` for every split
    with factors up to ``cap``, through the identity embedding and
    ``samples`` random ones.  A failed sweep means no split was found
    within that budget; it is not a proof that none exists.
    """
    c = ch.as_quantum(candidate)
    if len(c.input) != 2 or len(c.output) != 2:
        raise InterfaceError("candidate must have two inputs and two outputs")
    sites = _sites(c)
    if isometry is not None:
        if split is None:
            raise ValueError("an explicit isometry needs its split (rA, rB)")
        rA, rB = split
        V = tc.as_matrix(isometry)
        if V.shape != (c.output.total * rA * rB, c.input.total):
            raise InterfaceError("isometry does not match the split")
        traced = ch.from_kraus(list(V.reshape(c.output.total, rA * rB, -1).transpose(1, 0, 2)),
                               c.input, c.output)
        if ch.difference(traced, c) > tol:
            raise ValueError("isometry is not a dilation of the candidate")
        r = _split_residual(V, c, rA, rB, sites)
        return SplitCheck(r <= tol, (rA, rB), r, 1)
    iso = stinespring_minimal(c)
    r0 = iso.env_dim
    S = iso.isometry.reshape(c.output.total, r0, c.input.total)
    splits = [split] if split is not None else [
        (a, b) for a in range(1, cap + 1) for b in range(1, cap + 1) if a * b >= r0]
    rng = np.random.default_rng(seed)
    best, tried = (np.inf, None), 0
    for rA, rB in splits:
        if rA * rB < r0:
            raise ValueError(f"split {rA}x{rB} is smaller than the minimal environment {r0}")
        embeds = [np.eye(rA * rB, r0)] + [tc.random_isometry(rA * rB, r0, rng) for _ in range(samples)]
        for E in embeds:
            V = np.einsum("er,orj->oej", E, S).reshape(-1, c.input.total)
            r = _split_residual(V, c, rA, rB, sites)
            tried += 1
            if r < best[0]:
                best = (r, (rA, rB))
            if r <= tol:
                return SplitCheck(True, (rA, rB), r, tried)
    note = f"no split found with factors up to {cap}" if split is None else "split fails"
    return SplitCheck(False, None, float(best[0]), tried, note)
