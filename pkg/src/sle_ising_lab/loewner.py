"""Loewner chains: chordal vertical-slit composition and zipper, annulus and
radial RK4 flows, and the canonical maps used to bring lattice curves to H or A_p."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.linalg import cg

from . import specfun as sf

log = logging.getLogger(__name__)

SWALLOW_TOL = 1e-12


class LoewnerError(ValueError):
    pass


class SwallowedError(LoewnerError):
    def __init__(self, msg, time):
        super().__init__(msg)
        self.time = time


class ModulusExhaustedError(LoewnerError):
    pass


class TopologyError(LoewnerError):
    pass


class SolverError(LoewnerError):
    pass


@dataclass
class DrivingPath:
    """Samples (t_j, xi_j) with t_0 = 0; step j runs over (t_{j-1}, t_j] with driver xi_j."""
    t: np.ndarray
    xi: np.ndarray
    geometry: str = "chordal"
    stop_reason: str = "budget"
    seed: int | None = None
    dt: float | None = None
    flags: list = field(default_factory=list)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.xi = np.asarray(self.xi, dtype=float)
        if self.t.shape != self.xi.shape or self.t.ndim != 1 or self.t.size == 0:
            raise LoewnerError("t and xi must be 1-d arrays of equal length")
        if self.t[0] != 0 or np.any(np.diff(self.t) <= 0):
            raise LoewnerError("times must start at 0 and increase strictly")

    @classmethod
    def constant(cls, value: float, T: float, n: int, geometry: str = "chordal"):
        return cls(np.linspace(0, T, n + 1), np.full(n + 1, float(value)), geometry)

    @property
    def steps(self):
        return np.diff(self.t), self.xi[1:]

    def jump_flags(self, drift_bound: float = 0.0):
        """Indices of steps whose increment exceeds 10 sqrt(3 dt) + drift_bound dt."""
        dt, _ = self.steps
        jump = np.abs(np.diff(self.xi))
        return np.nonzero(jump > 10 * np.sqrt(3 * dt) + drift_bound * dt)[0]

    def value_at(self, t: float) -> float:
        """Driver at time t (piecewise constant, right-continuous steps)."""
        k = int(np.searchsorted(self.t, t, side="left"))
        return float(self.xi[min(k, self.xi.size - 1)])


@dataclass
class Crosscut:
    """Polyline in the canonical domain; the hull reaches it when one of its
    sample points is swallowed."""
    points: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=complex)

    @classmethod
    def semicircle(cls, center: float, radius: float, n: int = 64):
        ang = np.linspace(0, math.pi, n + 2)[1:-1]
        return cls(center + radius * np.exp(1j * ang))

    @classmethod
    def boundary_arc(cls, theta: float, radius: float, n: int = 64):
        """Arc of the circle |z - e^{i theta}| = radius inside the unit disc."""
        if not 0 < radius < 2:
            raise LoewnerError("boundary arc radius must lie in (0, 2)")
        a = math.acos(-radius / 2)
        phi = np.linspace(a, 2 * math.pi - a, n + 2)[1:-1]
        return cls(math.e ** (1j * theta) * (1 + radius * np.exp(1j * phi)))

    @classmethod
    def radial_segment(cls, theta: float, r0: float, r1: float = 1.0, n: int = 32):
        r = np.linspace(r0, r1, n + 2)[1:-1]
        return cls(r * np.exp(1j * theta))


# ---------------------------------------------------------------- chordal

def _slit_sqrt(w, c):
    s = np.sqrt(w * w + c)
    flip = (s.imag < 0) | ((s.imag == 0) & (s.real * w.real < 0))
    return np.where(flip, -s, s)


def slit_map(z, xi: float, dt: float):
    """Map of H minus a vertical slit at xi, of capacity time dt, onto H."""
    w = np.asarray(z, dtype=complex) - xi
    return xi + _slit_sqrt(w, 4.0 * dt)


def slit_map_inverse(w, xi: float, dt: float):
    u = np.asarray(w, dtype=complex) - xi
    s = np.sqrt(u * u - 4.0 * dt)
    flip = (s.imag < 0) | ((s.imag == 0) & (s.real * u.real < 0))
    return xi + np.where(flip, -s, s)


def chordal_evolve(path: DrivingPath, z, trajectory: bool = True):
    """g_t(z) at every sample time; points on R are carried along the real line."""
    z = np.asarray(z, dtype=complex)
    g = z.copy()
    interior = g.imag > 0
    out = [g.copy()] if trajectory else None
    dts, xis = path.steps
    for j, (dt, xi) in enumerate(zip(dts, xis)):
        g = slit_map(g, xi, dt)
        if np.any(interior & (g.imag <= SWALLOW_TOL)):
            raise SwallowedError("point reached by the hull", float(path.t[j + 1]))
        if trajectory:
            out.append(g.copy())
    return np.array(out) if trajectory else g


def reconstruct_tips(path: DrivingPath) -> np.ndarray:
    """gamma(t_j) = g_{t_j}^{-1}(xi_j) by composing inverse slit maps."""
    dts, xis = path.steps
    tips = [complex(path.xi[0])]
    for j in range(len(dts)):
        w = complex(xis[j])
        for k in range(j, -1, -1):
            w = complex(slit_map_inverse(w, xis[k], dts[k]))
        tips.append(w)
    return np.array(tips)


def extract_driver(curve, tol: float = 1e-14) -> DrivingPath:
    """Zipper: map each next curve point to R by a vertical slit map and record
    (capacity step, base point). Points that would not increase capacity are skipped."""
    pts = np.asarray(curve, dtype=complex)
    if pts.ndim != 1 or pts.size < 2:
        raise LoewnerError("curve needs at least two points")
    if abs(pts[0].imag) > 1e-9 or np.any(pts.imag < -1e-9):
        raise LoewnerError("curve must start on R and stay in the closed upper half-plane")
    t, xi = [0.0], [float(pts[0].real)]
    flags = []
    rest = pts[1:].copy()
    for j in range(rest.size):
        p = rest[j]
        if p.imag <= tol:
            flags.append(("degenerate", j + 1))
            log.info("zipper: skipping point %d with Im %.3g", j + 1, p.imag)
            continue
        x, h = float(p.real), float(p.imag)
        dt = h * h / 4.0
        if t[-1] + dt == t[-1]:
            flags.append(("degenerate", j + 1))
            continue
        t.append(t[-1] + dt)
        xi.append(x)
        if j + 1 < rest.size:
            rest[j + 1:] = slit_map(rest[j + 1:], x, dt)
    return DrivingPath(np.array(t), np.array(xi), "chordal", "budget", flags=flags)


def half_plane_capacity(path: DrivingPath) -> float:
    """hcap with g(z) = z + hcap/z + ...; the flow 2/(g - xi) gives hcap = 2 t."""
    return 2.0 * float(path.t[-1])


# ------------------------------------------------------- annulus and radial

def _rk4(f, y, t, h):
    k1 = f(t, y)
    k2 = f(t + h / 2, y + h / 2 * k1)
    k3 = f(t + h / 2, y + h / 2 * k2)
    k4 = f(t + h, y + h * k3)
    return y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def _substeps(dt: float, max_dt: float | None) -> int:
    return 1 if not max_dt else max(1, int(math.ceil(dt / max_dt - 1e-12)))


def annulus_evolve(path: DrivingPath, p: float, z, max_dt: float | None = None, trajectory=True):
    """dg/dt = V^{p-t}_{theta(t)}(g), RK4 with theta constant on each step."""
    z = np.asarray(z, dtype=complex)
    if path.t[-1] >= p:
        raise ModulusExhaustedError(f"total time {path.t[-1]} exceeds modulus {p}")
    g = z.copy()
    inner = np.abs(np.abs(z) - math.exp(-p)) < 1e-12
    out = [g.copy()] if trajectory else None
    dts, th = path.steps
    for j, (dt, theta) in enumerate(zip(dts, th)):
        n = _substeps(dt, max_dt)
        h = dt / n
        t0 = path.t[j]
        for s in range(n):
            tt = t0 + s * h
            try:
                g = _rk4(lambda t, y: sf.loewner_kernel(y, theta, p - t, strict=False), g, tt, h)
            except sf.PoleError as exc:
                raise SwallowedError("point reached the growth point", float(tt)) from exc
        r = np.abs(g)
        if np.any(~inner & (r >= 1 - 1e-10)):
            raise SwallowedError("point reached by the hull", float(path.t[j + 1]))
        if trajectory:
            out.append(g.copy())
    return np.array(out) if trajectory else g


def radial_field(g, theta):
    e = np.exp(1j * theta)
    return g * (e + g) / (e - g)


def radial_evolve(path: DrivingPath, z, max_dt: float | None = None, trajectory=True):
    """dg/dt = g (e^{i theta} + g)/(e^{i theta} - g); g_t(0) = 0, g_t'(0) = e^t."""
    z = np.asarray(z, dtype=complex)
    g = z.copy()
    out = [g.copy()] if trajectory else None
    dts, th = path.steps
    for j, (dt, theta) in enumerate(zip(dts, th)):
        n = _substeps(dt, max_dt)
        h = dt / n
        for s in range(n):
            g = _rk4(lambda t, y: radial_field(y, theta), g, 0.0, h)
        if np.any(np.abs(g) >= 1 - 1e-10):
            raise SwallowedError("point reached by the hull", float(path.t[j + 1]))
        if trajectory:
            out.append(g.copy())
    return np.array(out) if trajectory else g


# ---------------------------------------------------------- canonical maps

def rect_to_halfplane(L: float, z):
    """Conformal map of [0, L] x [0, 1] onto H: bottom midpoint -> 0, top midpoint
    -> infinity, corners -> -1, 1, 1/k, -1/k."""
    if not 0.1 <= L <= 10:
        raise LoewnerError("aspect ratio outside [0.1, 10] is unsupported")
    z = np.asarray(z, dtype=complex)
    p = 2 * math.pi / L
    w = sf.jacobi(2 * math.pi * (z - L / 2) / L, p, "sn")
    if np.ndim(w) == 0:
        w = complex(w)
        return complex(w.real, max(w.imag, 0.0))
    return w.real + 1j * np.maximum(w.imag, 0.0)


def rect_corners(L: float):
    k = sf.elliptic_params(2 * math.pi / L).k
    return (-1.0, 1.0, 1 / k, -1 / k)


@dataclass
class ModulusMap:
    p: float
    energy: float
    dual_energy: float
    vertices: list
    u: np.ndarray             # harmonic measure of the hole, per vertex
    faces: list
    conj: np.ndarray          # harmonic conjugate per face, one branch (cut along a ray)
    iterations: int

    def face_image(self):
        """Face centres mapped to A_p: exp(-p (u + i conj)), u averaged at corners."""
        idx = {v: k for k, v in enumerate(self.vertices)}
        uf = np.array([np.mean([self.u[idx[c]] for c in _corners(f)]) for f in self.faces])
        return np.exp(-self.p * (uf + 1j * self.conj))

    def angle_at(self, v) -> float:
        """Angle in A_p at a domain vertex (mean over incident faces, branch-aware)."""
        fidx = {f: k for k, f in enumerate(self.faces)}
        vals = [self.conj[fidx[f]] for f in _incident(v) if f in fidx]
        if not vals:
            raise LoewnerError(f"{v} is not a domain vertex")
        ang = [(-self.p * c) for c in vals]
        ref = ang[0]
        ang = [ref + math.remainder(a - ref, 2 * math.pi) for a in ang]
        return float(np.mean(ang)) % (2 * math.pi)


def _corners(f):
    i, j = f
    return ((i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1))


def _incident(v):
    i, j = v
    return ((i, j), (i - 1, j), (i - 1, j - 1), (i, j - 1))


def round_annulus_faces(R: float, r: float, mesh: float):
    """Faces of the mesh-`mesh` grid whose centres lie in r <= |z| <= R."""
    n = int(math.ceil(R / mesh)) + 1
    out = []
    for i in range(-n, n):
        for j in range(-n, n):
            c = math.hypot((i + 0.5) * mesh, (j + 0.5) * mesh)
            if r <= c <= R:
                out.append((i, j))
    return out


def grid_modulus_map(domain, rtol: float = 1e-12, maxiter: int = 100000) -> ModulusMap:
    """Discrete uniformization of a doubly connected lattice domain: u = 0 on the
    outer boundary, 1 on the hole, p = 2 pi / energy."""
    from .ising.domain import DiscreteDomain
    if not isinstance(domain, DiscreteDomain):
        domain = DiscreteDomain(domain)
    if domain.n_components != 2:
        raise TopologyError(f"expected exactly one hole, found {domain.n_components - 1}")
    verts = domain.vertices
    idx = {v: k for k, v in enumerate(verts)}
    n = len(verts)
    touch = np.full(n, -1)
    for k, v in enumerate(verts):
        for c in _incident(v):
            if c not in domain.faces:
                cid = domain.cell_component(c)
                if touch[k] >= 0 and touch[k] != cid:
                    raise TopologyError("a vertex touches both boundary components")
                touch[k] = cid
    fixed = touch >= 0
    val = np.where(touch == 1, 1.0, 0.0)
    E = np.array([(idx[a], idx[b]) for a, b in domain.edges])
    free = np.nonzero(~fixed)[0]
    pos = -np.ones(n, dtype=int)
    pos[free] = np.arange(free.size)
    rows, cols, data = [], [], []
    rhs = np.zeros(free.size)
    for a, b in E:
        for x, y in ((a, b), (b, a)):
            if fixed[x]:
                continue
            rows.append(pos[x])
            cols.append(pos[x])
            data.append(1.0)
            if fixed[y]:
                rhs[pos[x]] += val[y]
            else:
                rows.append(pos[x])
                cols.append(pos[y])
                data.append(-1.0)
    A = coo_matrix((data, (rows, cols)), shape=(free.size, free.size)).tocsr()
    it = [0]

    def count(_):
        it[0] += 1

    if free.size:
        x, info = cg(A, rhs, rtol=rtol, atol=0.0, maxiter=maxiter, callback=count)
        if info != 0:
            raise SolverError(f"conjugate gradient did not converge ({info})")
    else:
        x = np.zeros(0)
    u = val.copy()
    u[free] = x
    du = u[E[:, 0]] - u[E[:, 1]]
    energy = float(np.sum(du * du))
    if energy <= 0:
        raise SolverError("zero Dirichlet energy")
    p = 2 * math.pi / energy
    faces, conj, dual_energy = _harmonic_conjugate(domain, u, idx)
    return ModulusMap(p, energy, dual_energy, verts, u, faces, conj, it[0])


def _harmonic_conjugate(domain, u, idx):
    """Integrate the conjugate along dual edges, with a cut along the ray from the
    hole to the right so the single branch is well defined."""
    faces = sorted(domain.faces)
    fidx = {f: k for k, f in enumerate(faces)}
    hole = min(domain.components[1].cells)
    cut_y = hole[1]
    conj = np.full(len(faces), np.nan)
    conj[0] = 0.0
    stack = [faces[0]]
    dual_energy = 0.0
    seen_pairs = set()
    while stack:
        f = stack.pop()
        i, j = f
        # neighbours across right/left/top/bottom edges; the conjugate increases by the
        # flux of grad u through the shared edge, oriented so that u + i conj is holomorphic
        for g, a, b in (((i + 1, j), (i + 1, j), (i + 1, j + 1)),
                        ((i - 1, j), (i, j + 1), (i, j)),
                        ((i, j + 1), (i + 1, j + 1), (i, j + 1)),
                        ((i, j - 1), (i, j), (i + 1, j))):
            if g not in fidx:
                continue
            crosses_cut = b[1] == a[1] and a[1] == cut_y and min(a[0], b[0]) > hole[0]
            step_ = u[idx[a]] - u[idx[b]]
            key = (min(f, g), max(f, g))
            if key not in seen_pairs:
                seen_pairs.add(key)
                dual_energy += step_ * step_
            if crosses_cut:
                continue
            if np.isnan(conj[fidx[g]]):
                conj[fidx[g]] = conj[fidx[f]] + step_
                stack.append(g)
    return faces, conj, dual_energy


__all__ = ["DrivingPath", "Crosscut", "LoewnerError", "SwallowedError", "ModulusExhaustedError",
           "TopologyError", "SolverError", "slit_map", "slit_map_inverse", "chordal_evolve",
           "reconstruct_tips", "extract_driver", "half_plane_capacity", "annulus_evolve",
           "radial_evolve", "radial_field", "rect_to_halfplane", "rect_corners", "ModulusMap",
           "round_annulus_faces", "grid_modulus_map"]
