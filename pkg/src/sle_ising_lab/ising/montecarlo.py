"""Heat-bath Monte Carlo for face spins with alternating boundary arcs, with
Swendsen-Wang cluster steps, and interface extraction from sampled configurations."""

from __future__ import annotations

import math
from collections import deque
from concurrent.futures import ProcessPoolExecutor

import numba
import numpy as np

from .domain import DIRS, DiscreteDomain, Stub, step
from .observable import extract_interface

BETA_C = 0.5 * math.log(1 + math.sqrt(2))


class RepresentabilityError(ValueError):
    pass


def chain_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1, np.uint32)[0])


@numba.njit(cache=True)
def _sweeps(spins, face_flat, nbr, grp_ptr, grp_cell, grp_sign, pair_ptr, pair_cell, pair_face,
            grp_state, beta, n_sweeps, seed, cluster, cell_face, cell_grp):
    if seed >= 0:
        np.random.seed(seed)
    F = face_flat.shape[0]
    G = grp_ptr.shape[0] - 1
    table = np.empty(9)
    for h in range(-4, 5):
        table[h + 4] = 1.0 / (1.0 + math.exp(-2.0 * beta * h))
    p_bond = 1.0 - math.exp(-2.0 * beta)
    for _ in range(n_sweeps):
        for f in range(F):
            h = 4
            for j in range(4):
                h += spins[nbr[f, j]]
            spins[face_flat[f]] = 1 if np.random.random() < table[h] else -1
        for g in range(G):
            # field felt by the collective sign s, cell spin = s * grp_sign
            h = 0
            for q in range(pair_ptr[g], pair_ptr[g + 1]):
                h += spins[pair_cell[q]] * spins[pair_face[q]] * grp_state[g]
            p_up = 1.0 / (1.0 + math.exp(-2.0 * beta * h))
            s = 1 if np.random.random() < p_up else -1
            grp_state[g] = s
            for q in range(grp_ptr[g], grp_ptr[g + 1]):
                spins[grp_cell[q]] = s * grp_sign[q]
        if cluster:
            _sw_step(spins, face_flat, nbr, cell_face, cell_grp, grp_ptr, grp_cell, grp_sign,
                     grp_state, p_bond)


@numba.njit(cache=True)
def _find(parent, i):
    while parent[i] != i:
        parent[i] = parent[parent[i]]
        i = parent[i]
    return i


@numba.njit(cache=True)
def _sw_step(spins, face_flat, nbr, cell_face, cell_grp, grp_ptr, grp_cell, grp_sign, grp_state,
             p_bond):
    """One Swendsen-Wang update. Nodes are the faces, one node per hole and a
    frozen node for the outer boundary cells, whose clusters never flip."""
    F = face_flat.shape[0]
    G = grp_ptr.shape[0] - 1
    frozen = F + G
    parent = np.arange(F + G + 1)
    for f in range(F):
        s = spins[face_flat[f]]
        for j in range(4):
            c = nbr[f, j]
            k = cell_face[c]
            if k >= 0:
                # each face-face edge once
                if k <= f:
                    continue
                node = k
            elif cell_grp[c] >= 0:
                node = F + cell_grp[c]
            else:
                node = frozen
            if spins[c] != s or np.random.random() >= p_bond:
                continue
            a = _find(parent, f)
            b = _find(parent, node)
            if a != b:
                parent[a] = b
    root_f = _find(parent, frozen)
    flip = np.zeros(F + G + 1, dtype=np.int64)  # 0 undecided, 1 keep, 2 flip
    flip[root_f] = 1
    for i in range(F + G):
        r = _find(parent, i)
        if flip[r] == 0:
            flip[r] = 2 if np.random.random() < 0.5 else 1
        if flip[r] == 2:
            if i < F:
                spins[face_flat[i]] = -spins[face_flat[i]]
            else:
                g = i - F
                grp_state[g] = -grp_state[g]
                for q in range(grp_ptr[g], grp_ptr[g + 1]):
                    spins[grp_cell[q]] = grp_state[g] * grp_sign[q]


class HeatBath:
    """Single-site heat bath on the faces plus one collective move per hole. With
    `cluster` (default: only when there are holes) every sweep ends with a
    Swendsen-Wang step: a hole is a single spin coupled to a whole ring of faces,
    and without cluster moves the side on which an interface passes it is
    effectively frozen."""

    def __init__(self, domain: DiscreteDomain, marks=None, beta: float = BETA_C,
                 cluster: bool | None = None):
        self.domain = domain
        self.marks = tuple(domain.marks if marks is None else marks)
        self.beta = float(beta)
        x0, y0, x1, y1 = domain.bbox
        self.origin = (x0 - 1, y0 - 1)
        self.shape = (x1 - x0 + 2, y1 - y0 + 2)
        self.spins = np.zeros(self.shape[0] * self.shape[1], dtype=np.int64)
        faces = sorted(domain.faces)
        self.face_flat = np.array([self.flat(c) for c in faces], dtype=np.int64)
        self.nbr = np.array([[self.flat((c[0] + dx, c[1] + dy)) for dx, dy in DIRS] for c in faces],
                            dtype=np.int64)
        self._boundary_spins()
        self.cluster = bool(len(self.grp_state)) if cluster is None else bool(cluster)
        self.spins[self.face_flat] = 1
        self.cell_face = np.full(self.spins.size, -1, dtype=np.int64)
        self.cell_face[self.face_flat] = np.arange(len(self.face_flat))
        self.cell_grp = np.full(self.spins.size, -1, dtype=np.int64)
        for g in range(len(self.grp_ptr) - 1):
            self.cell_grp[self.grp_cell[self.grp_ptr[g]:self.grp_ptr[g + 1]]] = g
        # edge -> flat indices of the two cells it separates
        ea, eb = [], []
        for (u, w) in domain.edges:
            if u[1] == w[1]:
                ea.append(self.flat((u[0], u[1])))
                eb.append(self.flat((u[0], u[1] - 1)))
            else:
                ea.append(self.flat((u[0], u[1])))
                eb.append(self.flat((u[0] - 1, u[1])))
        self.edge_a = np.array(ea, dtype=np.int64)
        self.edge_b = np.array(eb, dtype=np.int64)
        self._bits = [1 << k for k in range(len(domain.edges))]

    def flat(self, c) -> int:
        return (c[0] - self.origin[0]) * self.shape[1] + (c[1] - self.origin[1])

    def _boundary_spins(self):
        """Exterior cells get the sign pattern forced by the marks; every
        component other than the outer one keeps a free overall sign."""
        dom = self.domain
        marks = set(self.marks)
        x0, y0 = self.origin
        X1, Y1 = x0 + self.shape[0], y0 + self.shape[1]
        rel = {}
        for cid, comp in enumerate(dom.components):
            n = sum(1 for m in self.marks if dom.stub_component(m) == cid)
            if n % 2:
                raise RepresentabilityError(f"component {cid} carries {n} marks")
        cells = [(i, j) for i in range(x0, X1) for j in range(y0, Y1) if (i, j) not in dom.faces]
        for start in cells:
            if start in rel:
                continue
            rel[start] = 1
            q = deque([start])
            while q:
                c = q.popleft()
                for d, (dx, dy) in enumerate(DIRS):
                    n = (c[0] + dx, c[1] + dy)
                    if not (x0 <= n[0] < X1 and y0 <= n[1] < Y1) or n in dom.faces:
                        continue
                    flip = self._crossing_marks(c, d, marks) % 2
                    s = rel[c] * (-1 if flip else 1)
                    if n in rel:
                        if rel[n] != s:
                            raise RepresentabilityError("inconsistent boundary arcs")
                        continue
                    rel[n] = s
                    q.append(n)
        groups = {}
        for c, s in rel.items():
            groups.setdefault(dom.cell_component(c), []).append((c, s))
        for c, s in groups.get(0, []):
            self.spins[self.flat(c)] = s
        face_set = dom.faces
        ptr, gc, gs, pp, pc, pf = [0], [], [], [0], [], []
        for cid in sorted(k for k in groups if k != 0):
            for c, s in sorted(groups[cid]):
                gc.append(self.flat(c))
                gs.append(s)
                self.spins[self.flat(c)] = s
                for dx, dy in DIRS:
                    f = (c[0] + dx, c[1] + dy)
                    if f in face_set:
                        pc.append(self.flat(c))
                        pf.append(self.flat(f))
            ptr.append(len(gc))
            pp.append(len(pc))
        self.grp_ptr = np.array(ptr, dtype=np.int64)
        self.grp_cell = np.array(gc, dtype=np.int64)
        self.grp_sign = np.array(gs, dtype=np.int64)
        self.pair_ptr = np.array(pp, dtype=np.int64)
        self.pair_cell = np.array(pc, dtype=np.int64)
        self.pair_face = np.array(pf, dtype=np.int64)
        self.grp_state = np.ones(len(ptr) - 1, dtype=np.int64)

    def _crossing_marks(self, c, d, marks) -> int:
        """Marked stubs on the lattice edge shared by cell c and its d-neighbour."""
        i, j = c
        if d == 0:
            p, q = (i + 1, j), (i + 1, j + 1)
        elif d == 2:
            p, q = (i, j), (i, j + 1)
        elif d == 1:
            p, q = (i, j + 1), (i + 1, j + 1)
        else:
            p, q = (i, j), (i + 1, j)
        dpq = DIRS.index((q[0] - p[0], q[1] - p[1]))
        return int(Stub(p, dpq) in marks) + int(Stub(q, (dpq + 2) % 4) in marks)

    def sweep(self, n: int, seed: int = -1):
        _sweeps(self.spins, self.face_flat, self.nbr, self.grp_ptr, self.grp_cell, self.grp_sign,
                self.pair_ptr, self.pair_cell, self.pair_face, self.grp_state, self.beta,
                int(n), int(seed), self.cluster, self.cell_face, self.cell_grp)

    def randomize(self, rng: np.random.Generator):
        self.spins[self.face_flat] = rng.choice([-1, 1], size=len(self.face_flat))

    def contour_mask(self) -> int:
        diff = np.nonzero(self.spins[self.edge_a] != self.spins[self.edge_b])[0]
        m = 0
        for k in diff:
            m |= self._bits[k]
        return m

    def contour_edges(self) -> np.ndarray:
        return np.nonzero(self.spins[self.edge_a] != self.spins[self.edge_b])[0]

    def magnetization(self) -> float:
        return float(self.spins[self.face_flat].mean())


def default_sweeps(domain: DiscreteDomain):
    n = len(domain.faces)
    return 20 * n, 2 * n


def sample_configs(domain: DiscreteDomain, samples: int, seed: int = 0, chain: int = 0,
                   thermalize: int | None = None, decorrelate: int | None = None,
                   cluster: bool | None = None):
    """Contour masks from one chain; deterministic in (seed, chain)."""
    th, de = default_sweeps(domain)
    th = th if thermalize is None else thermalize
    de = de if decorrelate is None else decorrelate
    hb = HeatBath(domain, cluster=cluster)
    cs = chain_seed(seed, chain)
    hb.randomize(np.random.default_rng(cs))
    hb.sweep(th, cs)
    out = []
    for _ in range(samples):
        hb.sweep(de)
        out.append(hb.contour_mask())
    return out


def _path_points(domain, prefix, a1: Stub, end: Stub):
    pts = [a1.midpoint] + [tuple(map(float, v)) for v in prefix.vertices] + [end.midpoint]
    return [[float(x), float(y)] for x, y in pts]


def _chain_job(args):
    domain, seed, chain, n, th, de, rule = args
    out = []
    for mask in sample_configs(domain, n, seed, chain, th, de):
        pre, end = extract_interface(domain, mask, rule=rule)
        out.append({"points": _path_points(domain, pre, domain.marks[0], end),
                    "end": domain.marks.index(end), "mask": mask})
    return out


def sample_interfaces(domain: DiscreteDomain, samples: int, seed: int = 0, chains: int = 8,
                      thermalize: int | None = None, decorrelate: int | None = None,
                      rule: str = "left", jobs: int = 1):
    """Interfaces from a fixed number of chains; the result does not depend on `jobs`.
    Each record holds the polyline (stub midpoints at both ends), the index of
    the mark where it ends, and the contour mask."""
    chains = max(1, min(chains, samples))
    per = [samples // chains + (1 if c < samples % chains else 0) for c in range(chains)]
    tasks = [(domain, seed, c, per[c], thermalize, decorrelate, rule) for c in range(chains) if per[c]]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            parts = list(ex.map(_chain_job, tasks))
    else:
        parts = [_chain_job(t) for t in tasks]
    out = []
    for part in parts:
        out.extend(part)
    for i, rec in enumerate(out):
        rec["id"] = i
    return out


def sample_interface(domain: DiscreteDomain, marks=None, seed: int = 0, sweeps: int | None = None,
                     rule: str = "left"):
    """One interface after `sweeps` heat-bath sweeps from a random start."""
    if marks is not None:
        domain = domain.with_marks(tuple(marks))
    HeatBath(domain)  # representability check
    th = default_sweeps(domain)[0] if sweeps is None else sweeps
    return _chain_job((domain, seed, 0, 1, th, 0, rule))[0]


def transition_matrix(domain: DiscreteDomain, beta: float = BETA_C) -> tuple:
    """Exact random-site heat-bath kernel over face spin states (tiny domains only),
    with the Boltzmann vector it should leave invariant."""
    hb = HeatBath(domain, beta=beta)
    F = len(hb.face_flat)
    if F > 8 or len(hb.grp_state):
        raise ValueError("exact transition matrix needs <= 8 faces and no holes")
    n = 1 << F
    T = np.zeros((n, n))
    energy = np.zeros(n)
    for i in range(n):
        s = np.array([1 if (i >> f) & 1 else -1 for f in range(F)])
        hb.spins[hb.face_flat] = s
        energy[i] = hb.contour_edges().size
        for f in range(F):
            h = int(hb.spins[hb.nbr[f]].sum())
            p_up = 1.0 / (1.0 + math.exp(-2.0 * beta * h))
            T[i, i | (1 << f)] += p_up / F
            T[i, i & ~(1 << f)] += (1 - p_up) / F
    pi = np.exp(-2 * beta * energy)
    return T, pi / pi.sum()


__all__ = ["BETA_C", "HeatBath", "RepresentabilityError", "sample_configs", "sample_interfaces",
           "sample_interface", "transition_matrix", "chain_seed", "default_sweeps", "step"]
