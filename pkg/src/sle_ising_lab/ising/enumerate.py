"""Exact enumeration of even-degree edge sets with prescribed odd vertices
(T-joins over GF(2)): one particular solution plus the cycle space."""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass

from .cyclo import CycloNumber, X_CRIT
from .domain import DiscreteDomain, Stub

EDGE_CAP = 28


class EnumerationError(ValueError):
    pass


@dataclass(frozen=True)
class Configuration:
    """Edge subset S as a bitmask over domain.edges; marked stubs implied."""
    mask: int

    @property
    def size(self) -> int:
        return self.mask.bit_count()

    def edges(self, domain: DiscreteDomain):
        return [domain.edges[k] for k in range(len(domain.edges)) if self.mask >> k & 1]


def tjoin_masks(domain: DiscreteDomain, allowed: int, odd: set):
    """Yield every subset of `allowed` edges whose odd-degree vertex set is `odd`."""
    if allowed.bit_count() > EDGE_CAP:
        raise EnumerationError(
            f"{allowed.bit_count()} inner edges exceed the enumeration cap {EDGE_CAP}; use Monte Carlo")
    adj = defaultdict(list)
    for k, (u, w) in enumerate(domain.edges):
        if allowed >> k & 1:
            adj[u].append((w, k))
            adj[w].append((u, k))
    parent = {}
    order = []
    tree = 0
    for root in sorted(set(adj) | set(odd)):
        if root in parent:
            continue
        parent[root] = (None, None)
        comp = [root]
        stack = [root]
        while stack:
            v = stack.pop()
            for w, k in adj[v]:
                if w not in parent:
                    parent[w] = (v, k)
                    tree |= 1 << k
                    stack.append(w)
                    comp.append(w)
        if sum(1 for v in comp if v in odd) % 2:
            return
        order.extend(comp)
    # particular solution: tree edge above v is used iff v's subtree holds an odd count
    parity = {v: (v in odd) for v in order}
    base = 0
    for v in reversed(order):
        p, k = parent[v]
        if p is not None and parity[v]:
            base |= 1 << k
            parity[p] ^= True
    # fundamental cycles
    def path_to_root(v):
        m = 0
        while parent[v][0] is not None:
            m ^= 1 << parent[v][1]
            v = parent[v][0]
        return m

    cycles = []
    rest = allowed & ~tree
    k = 0
    while rest:
        if rest & 1:
            u, w = domain.edges[k]
            cycles.append((1 << k) ^ path_to_root(u) ^ path_to_root(w))
        rest >>= 1
        k += 1
    # Gray-code walk over the cycle space
    cur = base
    yield cur
    for i in range(1, 1 << len(cycles)):
        bit = (i & -i).bit_length() - 1
        cur ^= cycles[bit]
        yield cur


def odd_vertices(stubs=(), halves=(), interior=None) -> set:
    c = Counter()
    for s in stubs:
        c[s.v] += 1
    for u in halves:
        c[u] += 1
    if interior is not None:
        c[tuple(interior)] += 1
    return {v for v, n in c.items() if n % 2}


def all_edges_mask(domain: DiscreteDomain) -> int:
    return (1 << len(domain.edges)) - 1


def enumerate_configs(domain: DiscreteDomain, marks=None, allowed: int | None = None,
                      interior=None):
    """Configurations whose boundary edges are exactly `marks`."""
    marks = domain.marks if marks is None else tuple(marks)
    if interior is None:
        interior = domain.interior_mark
    allowed = all_edges_mask(domain) if allowed is None else allowed
    for m in tjoin_masks(domain, allowed, odd_vertices(marks, interior=interior)):
        yield Configuration(m)


def x_powers(n: int):
    out = [CycloNumber(1)]
    for _ in range(n):
        out.append(out[-1] * X_CRIT)
    return out


_XPOW = x_powers(64)


def weight_polynomial(counts: dict) -> CycloNumber:
    """sum count * zeta^phase * x^size over keys (phase mod 8, size)."""
    by_phase = defaultdict(lambda: CycloNumber())
    for (ph, n), c in counts.items():
        if c:
            by_phase[ph % 8] = by_phase[ph % 8] + _XPOW[n] * c
    out = CycloNumber()
    for ph, v in by_phase.items():
        out = out + CycloNumber.zeta_pow(ph) * v
    return out


def discrete_Z(domain: DiscreteDomain, marks=None, allowed: int | None = None,
               interior=None) -> CycloNumber:
    """Z = sum over configurations of x^|S|, |S| counting inner edges."""
    sizes = Counter(m.bit_count() for m in
                    (c.mask for c in enumerate_configs(domain, marks, allowed, interior)))
    return weight_polynomial({(0, n): c for n, c in sizes.items()})


def count_configs(domain: DiscreteDomain, marks=None) -> int:
    return sum(1 for _ in enumerate_configs(domain, marks))


def brute_force_configs(domain: DiscreteDomain, marks=None) -> set:
    """Every edge subset checked directly; oracle for small domains only."""
    marks = domain.marks if marks is None else tuple(marks)
    E = len(domain.edges)
    if E > 16:
        raise EnumerationError("brute force oracle limited to 16 edges")
    need = odd_vertices(marks)
    out = set()
    for m in range(1 << E):
        deg = Counter()
        for k in range(E):
            if m >> k & 1:
                u, w = domain.edges[k]
                deg[u] += 1
                deg[w] += 1
        if {v for v, n in deg.items() if n % 2} == need:
            out.add(m)
    return out


def symmetric_difference_configs(domain: DiscreteDomain, marks=None) -> set:
    """Conf(domain) xor a fixed set of connecting paths (the textbook construction)."""
    marks = domain.marks if marks is None else tuple(marks)
    loops = brute_force_configs(domain, ())
    adj = defaultdict(list)
    for k, (u, w) in enumerate(domain.edges):
        adj[u].append((w, k))
        adj[w].append((u, k))

    def bfs_path(a, b):
        prev = {a: None}
        queue = [a]
        for v in queue:
            if v == b:
                break
            for w, k in adj[v]:
                if w not in prev:
                    prev[w] = (v, k)
                    queue.append(w)
        m = 0
        v = b
        while prev[v] is not None:
            v, k = prev[v]
            m ^= 1 << k
        return m

    if len(marks) % 2:
        return set()
    g = 0
    for a, b in zip(marks[::2], marks[1::2]):
        g ^= bfs_path(a.v, b.v)
    return {s ^ g for s in loops}


__all__ = ["Configuration", "EnumerationError", "EDGE_CAP", "tjoin_masks", "enumerate_configs",
           "discrete_Z", "count_configs", "brute_force_configs", "symmetric_difference_configs",
           "odd_vertices", "weight_polynomial", "all_edges_mask", "Stub"]
