"""Square-lattice discrete domains: faces, vertices, inner edges, boundary
stubs, boundary components, boundary walks and branch cuts of a double cover.

Vertices are integer points; face (i, j) is the unit square [i, i+1] x [j, j+1].
Directions are indexed counterclockwise: 0=E, 1=N, 2=W, 3=S.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

DIRS = ((1, 0), (0, 1), (-1, 0), (0, -1))
DIR_NAMES = "ENWS"

# generic offsets so that no lattice point or midpoint sits on a cut
_RAY_OFFSET = (0.0137, 0.0219)
_RAY_ANGLE = 0.4321


class DomainError(ValueError):
    pass


def step(v, d):
    return (v[0] + DIRS[d][0], v[1] + DIRS[d][1])


def edge_key(u, w):
    return (u, w) if u < w else (w, u)


def edge_dir(u, w) -> int:
    return DIRS.index((w[0] - u[0], w[1] - u[1]))


def turn(h_in: int, h_out: int) -> int:
    """Quarter turns from heading h_in to h_out, in {-1, 0, 1} (2 for a U-turn)."""
    t = (h_out - h_in) % 4
    return t - 4 if t == 3 else t


@dataclass(frozen=True, order=True)
class Stub:
    """Boundary edge seen from its domain vertex v; d is the outward normal."""
    v: tuple
    d: int

    @property
    def midpoint(self):
        return (self.v[0] + 0.5 * DIRS[self.d][0], self.v[1] + 0.5 * DIRS[self.d][1])

    @property
    def normal(self) -> complex:
        return complex(*DIRS[self.d])


@dataclass
class Component:
    cid: int
    kind: str                     # "outer" or "hole"
    cells: frozenset              # exterior cells in this component (holes only)
    walk: list = field(default_factory=list)    # [(v, d_in, d_out)]
    stubs: list = field(default_factory=list)   # stubs in walk order
    tau: dict = field(default_factory=dict)     # stub -> unwrapped arc heading (quarter turns)
    total_turn: int = 0


@dataclass
class Ray:
    origin: tuple
    angle: float

    def crossings(self, p, q) -> int:
        """Parity of crossings of the segment p -> q with the ray."""
        a0 = math.atan2(p[1] - self.origin[1], p[0] - self.origin[0])
        a1 = math.atan2(q[1] - self.origin[1], q[0] - self.origin[0])
        d = math.remainder(a1 - a0, 2 * math.pi)
        # count angles angle + 2 pi j strictly between a0 and a0 + d
        lo, hi = (a0, a0 + d) if d >= 0 else (a0 + d, a0)
        j0 = math.ceil((lo - self.angle) / (2 * math.pi))
        j1 = math.floor((hi - self.angle) / (2 * math.pi))
        return max(0, j1 - j0 + 1) % 2


class DiscreteDomain:
    def __init__(self, faces, marks=(), branch=None, interior_mark=None):
        faces = frozenset((int(i), int(j)) for i, j in faces)
        if not faces:
            raise DomainError("empty face set")
        self.faces = faces
        self._check_connected()
        verts = set()
        edges = set()
        for i, j in faces:
            c = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)]
            verts.update(c)
            for a in range(4):
                edges.add(edge_key(c[a], c[(a + 1) % 4]))
        self.vertices = sorted(verts)
        self.edges = sorted(edges)
        self.edge_index = {e: k for k, e in enumerate(self.edges)}
        self.stubs = sorted(Stub(v, d) for v in self.vertices for d in range(4)
                            if edge_key(v, step(v, d)) not in self.edge_index)
        self._stubset = set(self.stubs)
        self._find_components()
        self._build_walks()
        self.marks = tuple(marks)
        for m in self.marks:
            if m not in self._stubset:
                raise DomainError(f"marked edge {m} is not a boundary edge")
        if len(set(self.marks)) != len(self.marks):
            raise DomainError("repeated marked edge")
        self.interior_mark = tuple(interior_mark) if interior_mark is not None else None
        if self.interior_mark is not None and self.interior_mark not in verts:
            raise DomainError("interior mark is not a domain vertex")
        if branch is None:
            branch = self.default_branch(self.marks)
        self.branch = frozenset(branch)
        for cid in self.branch:
            if self.components[cid].kind != "hole":
                raise DomainError("only holes can carry a branch cut")
        self.rays = self._make_rays(self.branch)
        self._crossing_cache()

    # ------------------------------------------------------------ geometry
    def _check_connected(self):
        start = next(iter(self.faces))
        seen = {start}
        q = deque([start])
        while q:
            i, j = q.popleft()
            for di, dj in DIRS:
                n = (i + di, j + dj)
                if n in self.faces and n not in seen:
                    seen.add(n)
                    q.append(n)
        if len(seen) != len(self.faces):
            raise DomainError("face set is not face-connected")

    def _find_components(self):
        xs = [i for i, _ in self.faces]
        ys = [j for _, j in self.faces]
        self.bbox = (min(xs), min(ys), max(xs) + 1, max(ys) + 1)
        x0, y0, x1, y1 = self.bbox
        cells = [(i, j) for i in range(x0 - 1, x1 + 1) for j in range(y0 - 1, y1 + 1)
                 if (i, j) not in self.faces]
        label = {}
        comps = []
        for c in cells:
            if c in label:
                continue
            cid = len(comps)
            group = {c}
            label[c] = cid
            q = deque([c])
            while q:
                i, j = q.popleft()
                for di, dj in DIRS:
                    n = (i + di, j + dj)
                    if x0 - 1 <= n[0] <= x1 and y0 - 1 <= n[1] <= y1 and n not in self.faces \
                            and n not in label:
                        label[n] = cid
                        group.add(n)
                        q.append(n)
            comps.append(group)
        outer = label[(x0 - 1, y0 - 1)]
        order = [outer] + sorted((k for k in range(len(comps)) if k != outer),
                                 key=lambda k: min(comps[k]))
        remap = {old: new for new, old in enumerate(order)}
        self._cell_comp = {c: remap[k] for c, k in label.items()}
        self.components = [Component(remap[k], "outer" if k == outer else "hole",
                                     frozenset(comps[k]) if k != outer else frozenset())
                           for k in order]

    def cell_component(self, c) -> int:
        x0, y0, x1, y1 = self.bbox
        if not (x0 - 1 <= c[0] <= x1 and y0 - 1 <= c[1] <= y1):
            return 0
        return self._cell_comp[c]

    def stub_component(self, s: Stub) -> int:
        # the two cells flanking the stub are exterior and share the stub as a side
        (vx, vy), (dx, dy) = s.v, DIRS[s.d]
        if dx:
            cell = (vx if dx > 0 else vx - 1, vy)
        else:
            cell = (vx, vy if dy > 0 else vy - 1)
        return self.cell_component(cell)

    def _build_walks(self):
        """Directed boundary edges keep the domain on the left."""
        nxt = {}
        pinched = False
        for (i, j) in self.faces:
            sides = (((i, j - 1), (i, j), (i + 1, j)),
                     ((i + 1, j), (i + 1, j), (i + 1, j + 1)),
                     ((i, j + 1), (i + 1, j + 1), (i, j + 1)),
                     ((i - 1, j), (i, j + 1), (i, j)))
            for cell, a, b in sides:
                if cell in self.faces:
                    continue
                if a in nxt:
                    pinched = True
                nxt[a] = (b, self.cell_component(cell))
        self.pinched = pinched
        if pinched:
            return
        done = set()
        for start in sorted(nxt):
            if start in done:
                continue
            cyc = []
            v = start
            while v not in done:
                done.add(v)
                w, cid = nxt[v]
                cyc.append((v, w, cid))
                v = w
            comp = self.components[cyc[0][2]]
            n = len(cyc)
            walk = []
            for k in range(n):
                v_prev, v, _ = cyc[k - 1]
                _, w, _ = cyc[k]
                walk.append((v, edge_dir(v_prev, v), edge_dir(v, w)))
            comp.walk = walk
            heading = walk[0][1]
            total = 0
            for v, d_in, d_out in walk:
                back = (d_in + 2) % 4
                here = sorted((((s - back) % 4), s) for s in range(4)
                              if Stub(v, s) in self._stubset)
                for psi, s in here:
                    st = Stub(v, s)
                    comp.stubs.append(st)
                    comp.tau[st] = heading + total + psi - 1
                total += turn(d_in, d_out)
            comp.total_turn = total

    def _make_rays(self, branch):
        rays = []
        for k, cid in enumerate(sorted(branch)):
            c = min(self.components[cid].cells)
            origin = (c[0] + 0.5 + _RAY_OFFSET[0], c[1] + 0.5 + _RAY_OFFSET[1])
            rays.append(Ray(origin, _RAY_ANGLE + 0.1 * k))
        return rays

    def _crossing_cache(self):
        self.edge_cross = [self.crossing(u, w) for u, w in self.edges]
        self.cross_mask = sum(1 << k for k, b in enumerate(self.edge_cross) if b)

    # ---------------------------------------------------------- queries
    def crossing(self, p, q) -> int:
        return sum(r.crossings(p, q) for r in self.rays) % 2

    def stub_crossing(self, s: Stub) -> int:
        return self.crossing(s.midpoint, s.v)

    def half_crossing(self, u, w) -> int:
        m = (0.5 * (u[0] + w[0]), 0.5 * (u[1] + w[1]))
        return self.crossing(u, m)

    def default_branch(self, marks) -> frozenset:
        """Holes carrying an odd number of marks."""
        counts = {}
        for m in marks:
            cid = self.stub_component(m)
            counts[cid] = counts.get(cid, 0) + 1
        return frozenset(c for c, n in counts.items() if n % 2 == 1 and self.components[c].kind == "hole")

    def with_branch(self, branch) -> "DiscreteDomain":
        return DiscreteDomain(self.faces, self.marks, branch, self.interior_mark)

    def with_marks(self, marks, branch=None) -> "DiscreteDomain":
        return DiscreteDomain(self.faces, marks, branch, self.interior_mark)

    @property
    def n_components(self) -> int:
        return len(self.components)

    def is_stub(self, v, d) -> bool:
        return Stub(v, d) in self._stubset

    def edge_id(self, u, w):
        return self.edge_index.get(edge_key(u, w))

    def arc_winding(self, a: Stub, b: Stub) -> int:
        """Winding (quarter turns) of an exterior arc that leaves the domain
        through a, runs forward along the boundary walk and re-enters through b."""
        ca, cb = self.stub_component(a), self.stub_component(b)
        if ca != cb:
            raise NotImplementedError("artificial arcs between different boundary components")
        if self.pinched:
            raise NotImplementedError("boundary walk through a pinched vertex")
        comp = self.components[ca]
        ia, ib = comp.stubs.index(a), comp.stubs.index(b)
        T = comp.tau[b] - comp.tau[a]
        if ib < ia:
            T += comp.total_turn
        return T + 2

    def describe(self) -> dict:
        return {
            "faces": len(self.faces),
            "vertices": len(self.vertices),
            "inner_edges": len(self.edges),
            "boundary_edges": len(self.stubs),
            "components": len(self.components),
            "marks": len(self.marks),
        }


def build_domain(faces, marks=(), cover=None, interior_mark=None) -> DiscreteDomain:
    """marks: Stub objects or (v, direction-name) pairs."""
    ms = []
    for m in marks:
        if isinstance(m, Stub):
            ms.append(m)
        else:
            v, d = m
            ms.append(Stub(tuple(v), DIR_NAMES.index(d) if isinstance(d, str) else int(d)))
    branch = None
    if cover is not None:
        branch = cover.get("branch_components") if isinstance(cover, dict) else cover
    return DiscreteDomain(faces, ms, branch, interior_mark)


def stub_from_json(mark) -> Stub:
    (a, b) = (tuple(mark["edge"][0]), tuple(mark["edge"][1]))
    d = DIR_NAMES.index(mark["side"])
    for v, w in ((a, b), (b, a)):
        if step(v, d) == w:
            return Stub(v, d)
    raise DomainError(f"side {mark['side']} does not match edge {mark['edge']}")


def stub_to_json(s: Stub) -> dict:
    return {"edge": [list(s.v), list(step(s.v, s.d))], "side": DIR_NAMES[s.d]}


def domain_from_dict(data: dict) -> DiscreteDomain:
    marks = [stub_from_json(m) for m in data.get("marks", [])]
    cover = data.get("cover")
    branch = cover.get("branch_components") if cover else None
    return DiscreteDomain([tuple(f) for f in data["faces"]], marks, branch, data.get("interior_mark"))


def domain_to_dict(dom: DiscreteDomain) -> dict:
    return {
        "faces": [list(f) for f in sorted(dom.faces)],
        "marks": [stub_to_json(m) for m in dom.marks],
        "cover": {"branch_components": sorted(dom.branch)},
        **({"interior_mark": list(dom.interior_mark)} if dom.interior_mark else {}),
    }


def load_domain(path) -> DiscreteDomain:
    with open(path) as fh:
        return domain_from_dict(json.load(fh))


def bundled_domains() -> dict:
    root = resources.files("sle_ising_lab") / "data" / "domains"
    out = {}
    for p in sorted(root.iterdir(), key=lambda p: p.name):
        if p.name.endswith(".json"):
            out[Path(p.name).stem] = domain_from_dict(json.loads(p.read_text()))
    return out


def rectangle(L: int, H: int | None = None, marks=()) -> DiscreteDomain:
    H = L if H is None else H
    return build_domain([(i, j) for i in range(L) for j in range(H)], marks)


def square_ring(L: int, hole: int, marks=()) -> DiscreteDomain:
    lo = (L - hole) // 2
    faces = [(i, j) for i in range(L) for j in range(L)
             if not (lo <= i < lo + hole and lo <= j < lo + hole)]
    return build_domain(faces, marks)
