"""Discrete spinor observables in exact arithmetic, their Pfaffian identities,
and the exact one-step martingale check along slit domains."""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass, field

from ..partition import pfaffian_cofactor
from .cyclo import CycloNumber, X_CRIT
from .domain import DIRS, DiscreteDomain, Stub, step, turn
from .enumerate import all_edges_mask, tjoin_masks, odd_vertices, weight_polynomial

ZETA2 = CycloNumber.zeta_pow(2)  # i


class ObservableError(ValueError):
    pass


def _vedge(domain: DiscreteDomain) -> dict:
    cache = getattr(domain, "_vedge_cache", None)
    if cache is None:
        cache = {}
        for k, (u, w) in enumerate(domain.edges):
            d = DIRS.index((w[0] - u[0], w[1] - u[1]))
            cache[(u, d)] = k
            cache[(w, (d + 2) % 4)] = k
        domain._vedge_cache = cache
    return cache


def source_prefactor(d: int) -> CycloNumber:
    """i (i n)^(-1/2), principal branch, n the outward normal of direction d."""
    e = (2 + 2 * d) % 8
    if e > 4:
        e -= 8
    return CycloNumber.zeta_pow(2 - e // 2)


def normal_factor(d: int) -> CycloNumber:
    """(i n)^(-1/2), principal branch."""
    return source_prefactor(d) * CycloNumber.zeta_pow(-2)


@dataclass(frozen=True)
class Source:
    """A path origin: stub (v, d) with outward direction d, its prefactor
    (continued along a slit when the source is the interface tip) and sheet."""
    stub: Stub
    prefactor: CycloNumber
    sheet: int = 0

    @classmethod
    def boundary(cls, s: Stub) -> "Source":
        return cls(s, source_prefactor(s.d), 0)


@dataclass
class Setting:
    """Everything an observable evaluation needs besides the target."""
    domain: DiscreteDomain
    sources: tuple                       # Source for a1, plain Stubs for a2..a_{2k-1}
    allowed: int = None
    rule: str = "left"
    arcs: dict = field(default_factory=dict)   # stub -> (partner stub, quarter turns)

    def __post_init__(self):
        if self.allowed is None:
            self.allowed = all_edges_mask(self.domain)
        if self.rule not in ("left", "right"):
            raise ObservableError(f"unknown decomposition rule {self.rule!r}")
        if not self.arcs and len(self.sources) > 1:
            self.arcs = arc_table(self.domain, [s for s in self.sources[1:]])


def arc_table(domain: DiscreteDomain, marks) -> dict:
    """Artificial arcs join marks (2,3), (4,5), ... (1-based after a1)."""
    table = {}
    for a, b in zip(marks[::2], marks[1::2]):
        w = domain.arc_winding(a, b)
        table[a] = (b, w)
        table[b] = (a, -w)
    return table


def _trace(setting: Setting, mask: int, target, vedge):
    """Follow the curve from the first source; return winding in quarter turns."""
    src = setting.sources[0].stub
    stubs = {s for s in setting.sources[1:]}
    tgt_stub = target[1] if target[0] == "stub" else None
    half = target[1] if target[0] == "half" else None   # (u, d)
    v = src.v
    h = (src.d + 2) % 4
    t = 0
    used = 0
    used_stubs = set()
    left = setting.rule == "left"
    while True:
        cands = []
        for d in range(4):
            k = vedge.get((v, d))
            if k is not None:
                if mask >> k & 1 and not used >> k & 1:
                    cands.append(d)
                elif half is not None and half == (v, d) and ("half" not in used_stubs):
                    cands.append(d)
                continue
            s = Stub(v, d)
            if s == src:
                continue
            if (s in stubs or s == tgt_stub) and s not in used_stubs:
                cands.append(d)
        if len(cands) == 1:
            d = cands[0]
        elif len(cands) == 3:
            d = (h + 1) % 4 if left else (h - 1) % 4
        else:
            raise ObservableError(f"inconsistent degree at {v}: {cands}")
        t += turn(h, d)
        k = vedge.get((v, d))
        if half is not None and half == (v, d):
            return t
        if k is not None:
            used |= 1 << k
            v = step(v, d)
            h = d
            continue
        s = Stub(v, d)
        if s == tgt_stub:
            return t
        used_stubs.add(s)
        partner, w = setting.arcs[s]
        used_stubs.add(partner)
        t += w
        v = partner.v
        h = (partner.d + 2) % 4


def observable(setting: Setting, target, target_sheet: int = 0) -> CycloNumber:
    """F(a1, ..., a_{2k-1}, z) for target z given as
    ("stub", Stub) | ("edge", (u, w)) | ("self", None)."""
    dom = setting.domain
    vedge = _vedge(dom)
    src = setting.sources[0]
    marks = [src.stub] + list(setting.sources[1:])
    base_cross = sum(dom.stub_crossing(s) for s in marks) + src.sheet + target_sheet
    counts = Counter()
    if target[0] == "self":
        if len(setting.sources) != 1:
            raise ObservableError("self target needs a single source")
        for mask in tjoin_masks(dom, setting.allowed, set()):
            x = (mask & dom.cross_mask).bit_count() + src.sheet + target_sheet
            counts[(4 * (1 + x), mask.bit_count())] += 1
        return src.prefactor * weight_polynomial(counts)
    if target[0] == "stub":
        z = target[1]
        if z in marks:
            raise ObservableError("target coincides with a source")
        variants = [(("stub", z), marks + [z], [], setting.allowed, dom.stub_crossing(z))]
    elif target[0] == "edge":
        u, w = target[1]
        k = dom.edge_id(u, w)
        if k is None or not setting.allowed >> k & 1:
            raise ObservableError("target edge is not in the domain")
        allowed = setting.allowed & ~(1 << k)
        variants = []
        for a, b in ((u, w), (w, u)):
            d = DIRS.index((b[0] - a[0], b[1] - a[1]))
            variants.append((("half", (a, d)), marks, [a], allowed, dom.half_crossing(a, b)))
    else:
        raise ObservableError(f"unknown target kind {target[0]!r}")
    for tgt, stubs, halves, allowed, tcross in variants:
        odd = odd_vertices(stubs, halves)
        for mask in tjoin_masks(dom, allowed, odd):
            t = _trace(setting, mask, tgt, vedge)
            x = (mask & dom.cross_mask).bit_count() + base_cross + tcross
            counts[(-t + 4 * (1 + x), mask.bit_count())] += 1
    return src.prefactor * weight_polynomial(counts)


def discrete_observable(domain: DiscreteDomain, sources, target, cover=None, rule="left",
                        allowed=None) -> CycloNumber:
    """Multi-point observable with boundary sources a1..a_{2k-1}."""
    if cover is not None:
        domain = domain.with_branch(cover)
    sources = list(sources)
    setting = Setting(domain, (Source.boundary(sources[0]), *sources[1:]), allowed, rule)
    return observable(setting, _as_target(target))


def _as_target(target):
    if isinstance(target, Stub):
        return ("stub", target)
    if isinstance(target, tuple) and len(target) == 2 and isinstance(target[0], str):
        return target
    u, w = target
    return ("edge", (tuple(u), tuple(w)))


def all_targets(domain: DiscreteDomain, exclude=(), allowed=None, avoid_vertex=None):
    allowed = all_edges_mask(domain) if allowed is None else allowed
    out = []
    for k, e in enumerate(domain.edges):
        if allowed >> k & 1 and (avoid_vertex is None or avoid_vertex not in e):
            out.append(("edge", e))
    for s in domain.stubs:
        if s not in exclude and s.v != avoid_vertex:
            out.append(("stub", s))
    return out


# --------------------------------------------------------------- identities

def p_matrix(domain: DiscreteDomain, marks, rule="left"):
    """(P)_{mr} = F(a_m, a_r) / (i F(a_r, a_r)); real antisymmetric."""
    n = len(marks)
    diag = [ZETA2 * observable(Setting(domain, (Source.boundary(a),), rule=rule), ("self", None))
            for a in marks]
    P = [[CycloNumber() for _ in range(n)] for _ in range(n)]
    for m in range(n):
        for r in range(n):
            if m != r:
                f = observable(Setting(domain, (Source.boundary(marks[m]),), rule=rule),
                               ("stub", marks[r]))
                P[m][r] = f / diag[r]
    return P


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: dict = field(default_factory=dict)


def check_pfaffian(domain: DiscreteDomain, rule="left") -> CheckResult:
    """F(a1..a_{2k-1}, z) = +-sum_s (-1)^s Pf P[s] F(a_s, z) for every target z."""
    sources = list(domain.marks[:-1]) if len(domain.marks) % 2 == 0 else list(domain.marks)
    n = len(sources)
    if n < 1 or n % 2 == 0:
        raise ObservableError("Pfaffian identity needs an odd number of sources")
    P = p_matrix(domain, sources, rule)
    antisym = all(P[m][r] == -P[r][m] for m in range(n) for r in range(n))
    real = all(P[m][r].is_real() for m in range(n) for r in range(n))
    coef = []
    for s in range(n):
        keep = [i for i in range(n) if i != s]
        minor = [[P[a][b] for b in keep] for a in keep]
        pf = pfaffian_cofactor(minor) if minor else CycloNumber(1)
        coef.append(pf * (1 if s % 2 else -1))   # (-1)^s with s 1-based
    multi = Setting(domain, (Source.boundary(sources[0]), *sources[1:]), rule=rule)
    singles = [Setting(domain, (Source.boundary(a),), rule=rule) for a in sources]
    sign = None
    ok = antisym and real
    bad = []
    for tgt in all_targets(domain, exclude=sources):
        lhs = observable(multi, tgt)
        rhs = CycloNumber()
        for c, st in zip(coef, singles):
            if not c.is_zero():
                rhs = rhs + c * observable(st, tgt)
        if lhs == rhs:
            s = 1
        elif lhs == -rhs:
            s = -1
        else:
            ok = False
            bad.append(tgt)
            continue
        if lhs.is_zero():
            continue
        if sign is None:
            sign = s
        elif s != sign:
            ok = False
            bad.append(tgt)
    return CheckResult("pfaffian", ok, {"sign": sign, "antisymmetric": antisym, "real": real,
                                        "failures": bad[:5]})


def check_obs_z(domain: DiscreteDomain, rule="left") -> CheckResult:
    """F(a1..a_{2k-1}, a_2k) = +-(i n_{a_2k})^(-1/2) Z, configuration by configuration."""
    from .enumerate import discrete_Z
    marks = domain.marks
    if len(marks) % 2:
        raise ObservableError("needs an even number of marks")
    setting = Setting(domain, (Source.boundary(marks[0]), *marks[1:-1]), rule=rule)
    F = observable(setting, ("stub", marks[-1]))
    Z = discrete_Z(domain)
    ref = normal_factor(marks[-1].d) * Z
    if F == ref:
        sign = 1
    elif F == -ref:
        sign = -1
    else:
        sign = 0
    return CheckResult("obs_z", sign != 0 and not Z.is_zero(), {"sign": sign, "Z": complex(Z)})


def check_rule_invariance(domain: DiscreteDomain) -> CheckResult:
    sources = list(domain.marks[:-1]) if len(domain.marks) % 2 == 0 else list(domain.marks)
    a = Setting(domain, (Source.boundary(sources[0]), *sources[1:]), rule="left")
    b = Setting(domain, (Source.boundary(sources[0]), *sources[1:]), rule="right")
    bad = [t for t in all_targets(domain, exclude=sources) if observable(a, t) != observable(b, t)]
    return CheckResult("rule_invariance", not bad, {"failures": bad[:5]})


# ------------------------------------------------------- interfaces and slits

@dataclass(frozen=True)
class Prefix:
    """Initial segment of the interface from a1: vertices v0..vn, headings d1..dn."""
    vertices: tuple
    headings: tuple
    edges: tuple

    @property
    def n(self):
        return len(self.edges)

    @property
    def tip(self):
        return self.vertices[-1]


def extract_interface(domain: DiscreteDomain, mask: int, a1: Stub | None = None, rule="left",
                      marks=None):
    """Edge path from a1 to the first marked stub it reaches: (Prefix, end stub)."""
    marks = domain.marks if marks is None else tuple(marks)
    a1 = marks[0] if a1 is None else a1
    vedge = _vedge(domain)
    others = set(marks) - {a1}
    v, h = a1.v, (a1.d + 2) % 4
    used = 0
    verts, heads, edges = [v], [], []
    while True:
        cands = []
        for d in range(4):
            k = vedge.get((v, d))
            if k is not None:
                if mask >> k & 1 and not used >> k & 1:
                    cands.append(d)
            elif Stub(v, d) in others:
                cands.append(d)
        if len(cands) == 1:
            d = cands[0]
        elif len(cands) == 3:
            d = (h + 1) % 4 if rule == "left" else (h - 1) % 4
        else:
            raise ObservableError(f"inconsistent degree at {v}")
        k = vedge.get((v, d))
        if k is None:
            return Prefix(tuple(verts), tuple(heads), tuple(edges)), Stub(v, d)
        used |= 1 << k
        v = step(v, d)
        h = d
        verts.append(v)
        heads.append(d)
        edges.append(k)


def slit_mask(domain: DiscreteDomain, prefix: Prefix, a1: Stub, rule="left") -> int:
    """Edges available to continuations of `prefix`, given the decomposition rule."""
    vedge = _vedge(domain)
    allowed = all_edges_mask(domain)
    for k in prefix.edges:
        allowed &= ~(1 << k)
    tip = prefix.tip
    incoming = [(a1.d + 2) % 4] + list(prefix.headings)
    seen = set()
    for i, v in enumerate(prefix.vertices[:-1]):
        if v == tip or v in seen:
            continue
        seen.add(v)
        rest = [d for d in range(4) if (k := vedge.get((v, d))) is not None and allowed >> k & 1]
        if not rest:
            continue
        drop = True
        if len(rest) == 2:
            h, out = incoming[i], prefix.headings[i]
            pick = (h + 1) % 4 if rule == "left" else (h - 1) % 4
            drop = pick != out
        if drop:
            for d in rest:
                allowed &= ~(1 << vedge[(v, d)])
    return allowed


def tip_source(domain: DiscreteDomain, prefix: Prefix, a1: Stub) -> Source:
    """Source at the interface tip, prefactor continued along the prefix."""
    if prefix.n == 0:
        return Source.boundary(a1)
    h = (a1.d + 2) % 4
    t = 0
    for d in prefix.headings:
        t += turn(h, d)
        h = d
    sheet = domain.stub_crossing(a1)
    for k in prefix.edges[:-1]:
        sheet += domain.edge_cross[k]
    sheet += domain.half_crossing(prefix.vertices[-2], prefix.vertices[-1])
    # the second half of the last edge is the tip stub, counted with the configuration
    stub = Stub(prefix.tip, (prefix.headings[-1] + 2) % 4)
    return Source(stub, source_prefactor(a1.d) * CycloNumber.zeta_pow(-t), sheet % 2)


def _touches(domain: DiscreteDomain, v) -> set:
    out = set()
    for c in ((v[0] - 1, v[1] - 1), (v[0], v[1] - 1), (v[0] - 1, v[1]), v):
        if c not in domain.faces:
            out.add(domain.cell_component(c))
    return out


def stop_reason(domain: DiscreteDomain, prefix: Prefix, a1: Stub, marks) -> str | None:
    tip = prefix.tip
    if any(m.v == tip for m in marks if m != a1) or (prefix.n and tip == a1.v):
        return "marked-vertex"
    home = domain.stub_component(a1)
    for v in prefix.vertices[1:]:
        if _touches(domain, v) - {home}:
            return "other-component"
    return None


@dataclass
class MartingaleReport:
    ok: bool
    states: int = 0
    stopped: int = 0
    transitions: int = 0
    targets: int = 0
    failures: list = field(default_factory=list)

    def as_dict(self):
        return {"ok": self.ok, "states": self.states, "stopped": self.stopped,
                "transitions": self.transitions, "targets": self.targets,
                "failures": [str(f) for f in self.failures[:5]]}


def martingale_check(domain: DiscreteDomain, steps: int = 1, rule="left") -> MartingaleReport:
    """Exact check of the step law and the one-step martingale identity for every
    realizable, unstopped interface prefix of length < steps."""
    marks = domain.marks
    if len(marks) % 2 or not marks:
        raise ObservableError("martingale check needs 2k marks")
    a1, a2k = marks[0], marks[-1]
    mids = tuple(marks[1:-1])
    # weight of every realizable prefix, from the actual interfaces
    pref_weight = defaultdict(lambda: CycloNumber())
    sizes = defaultdict(Counter)
    for mask in tjoin_masks(domain, all_edges_mask(domain), odd_vertices(marks)):
        pre, _ = extract_interface(domain, mask, a1, rule)
        for n in range(min(steps, pre.n) + 1):
            key = Prefix(pre.vertices[:n + 1], pre.headings[:n], pre.edges[:n])
            sizes[key][mask.bit_count()] += 1
    for key, c in sizes.items():
        pref_weight[key] = weight_polynomial({(0, n): m for n, m in c.items()})
    report = MartingaleReport(True)
    vedge = _vedge(domain)
    for pre in sorted((p for p in sizes if p.n < steps), key=lambda p: (p.n, p.edges)):
        report.states += 1
        if stop_reason(domain, pre, a1, marks):
            report.stopped += 1
            continue
        allowed = slit_mask(domain, pre, a1, rule)
        src = tip_source(domain, pre, a1)
        base = Setting(domain, (src, *mids), allowed, rule)
        den = observable(base, ("stub", a2k))
        if den.is_zero():
            report.stopped += 1
            continue
        children = []
        total = CycloNumber()
        for d in range(4):
            k = vedge.get((pre.tip, d))
            if k is None or not allowed >> k & 1:
                continue
            child = Prefix(pre.vertices + (step(pre.tip, d),), pre.headings + (d,), pre.edges + (k,))
            c_allowed = slit_mask(domain, child, a1, rule)
            c_set = Setting(domain, (tip_source(domain, child, a1), *mids), c_allowed, rule)
            pe = X_CRIT * observable(c_set, ("stub", a2k)) / den
            ref = pref_weight.get(child, CycloNumber()) / pref_weight[pre]
            if pe != ref or not pe.is_real() or (not pe.is_zero() and pe.real_sign() < 0):
                report.ok = False
                report.failures.append(("p_e", pre.edges, d))
            total = total + pe
            children.append((child, c_set))
            report.transitions += 1
        if total != CycloNumber(1):
            report.ok = False
            report.failures.append(("sum", pre.edges))
        for tgt in all_targets(domain, exclude=set(marks), allowed=allowed, avoid_vertex=pre.tip):
            lhs = CycloNumber()
            for child, c_set in children:
                if tgt[0] == "edge" and not c_set.allowed >> domain.edge_id(*tgt[1]) & 1:
                    continue
                lhs = lhs + X_CRIT * observable(c_set, tgt)
            rhs = observable(base, tgt)
            report.targets += 1
            if lhs != rhs:
                report.ok = False
                report.failures.append(("martingale", pre.edges, tgt))
    return report


def martingale_terms(domain: DiscreteDomain, prefix: Prefix, target, rule="left"):
    """(M_gamma(z), [(p_e, p_e * M_{gamma+e}(z))]) with p_e * M read as
    x F(child, z) / F(parent, a_2k), which stays finite when p_e = 0."""
    marks = domain.marks
    a1, a2k, mids = marks[0], marks[-1], tuple(marks[1:-1])
    vedge = _vedge(domain)
    allowed = slit_mask(domain, prefix, a1, rule)
    base = Setting(domain, (tip_source(domain, prefix, a1), *mids), allowed, rule)
    den = observable(base, ("stub", a2k))
    M = observable(base, target) / den
    out = []
    for d in range(4):
        k = vedge.get((prefix.tip, d))
        if k is None or not allowed >> k & 1:
            continue
        child = Prefix(prefix.vertices + (step(prefix.tip, d),), prefix.headings + (d,),
                       prefix.edges + (k,))
        c_set = Setting(domain, (tip_source(domain, child, a1), *mids),
                        slit_mask(domain, child, a1, rule), rule)
        pe = X_CRIT * observable(c_set, ("stub", a2k)) / den
        out.append((pe, X_CRIT * observable(c_set, target) / den))
    return M, out
