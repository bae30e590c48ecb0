"""Euler-Maruyama integrators for partition-function SLE(3) in the half-plane,
the annulus and the radial annulus, with stopping logic and Monte Carlo
self-consistency tests (observable martingale, connection probabilities)."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np

from . import partition as pt
from . import specfun as sf
from .loewner import Crosscut, DrivingPath

KAPPA = 3.0
EPS_GAP = 1e-3
EPS_Z = 1e-10
CROSS_TOL = 1e-2
MAX_HALVINGS = 40
TWO_PI = 2 * math.pi


class SlesimError(ValueError):
    pass


def run_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1, np.uint32)[0])


@dataclass
class SdeRun:
    """One simulated path. `flow` holds the spectators a_2..a_n at every sample
    time (angles in the annulus; for the radial annulus theta_b and rho_b)."""
    setup: object
    dt: float
    seed: int | None
    crosscut: Crosscut | None
    path: DrivingPath
    flow: np.ndarray
    stop_reason: str
    stop_time: float
    snapshots: list = field(default_factory=list)
    final: tuple = ()
    pairing: int | None = None

    def driver_rows(self, run_id: int):
        return [(run_id, float(t), float(x)) for t, x in zip(self.path.t, self.path.xi)]

    def flow_rows(self, run_id: int):
        rows = []
        for t, row in zip(self.path.t, self.flow):
            for m, a in enumerate(row):
                rows.append((run_id, float(t), m + 2, float(a)))
        return rows


# ------------------------------------------------------------ geometries

def _slit_log(x, h):
    """Exact vertical-slit step on w = xi + x: new offset and log-derivative increment."""
    r = 1 + 4.0 * h / (x * x)
    # principal root: the cut of x sqrt(r) is exactly the slit
    return x * np.sqrt(r), -0.5 * np.log(r)


def _pf4(A):
    return A[0, 1] * A[2, 3] - A[0, 2] * A[1, 3] + A[0, 3] * A[1, 2]


class _HalfPlane:
    kind = "half-plane"

    def __init__(self, n_spec, eps_z):
        self.n_spec = n_spec
        self.eps_z = eps_z

    def drift(self, t, a1, spec):
        pts = np.concatenate([[a1], spec.real])
        n = pts.size
        if n == 2:
            return 3.0 / (pts[1] - pts[0])
        d = pts[:, None] - pts[None, :]
        np.fill_diagonal(d, 1.0)
        A = 1.0 / d
        np.fill_diagonal(A, 0.0)
        scale = np.max(np.abs(A)) ** (n // 2)
        if n == 4:
            Z = _pf4(A)
            dA = np.zeros_like(A)
            dA[0, 1:] = -A[0, 1:] ** 2
            dA[1:, 0] = -dA[0, 1:]
            dZ = dA[0, 1] * A[2, 3] - dA[0, 2] * A[1, 3] + dA[0, 3] * A[1, 2]
        else:
            Z = pt.pfaffian(A)
            dZ = None
        if abs(Z) < self.eps_z * scale:
            raise pt.NearZeroError(f"|Z| = {abs(Z):.3e} below threshold")
        if dZ is None:
            dA = np.zeros_like(A)
            dA[0, 1:] = -A[0, 1:] ** 2
            dA[1:, 0] = -dA[0, 1:]
            return 1.5 * float(np.trace(np.linalg.solve(A, dA)))
        return 3.0 * dZ / Z

    def crosses(self, a1, xi, spec):
        s = spec[: self.n_spec].real
        return bool(np.any(np.sign(s - a1) != np.sign(s - xi)))

    def flow(self, t, h, xi, w, L):
        x = w - xi
        s, dl = _slit_log(x, h)
        return xi + s, L + dl

    def min_gap(self, a1, spec):
        pts = np.sort(np.concatenate([[a1], spec[: self.n_spec].real]))
        return float(np.min(np.diff(pts))) if pts.size > 1 else math.inf

    def fix(self, t, w):
        w[: self.n_spec] = w[: self.n_spec].real
        return w

    def distance_to_boundary(self, w):
        return w.imag

    def record(self, w):
        return w[: self.n_spec].real.copy()


def _strip_remainder(x, p):
    """F(x) - 2/x and F'(x) + 2/x^2 for the strip field F(x) = -i S^p(e^{ix})."""
    u = np.exp(1j * x)
    S = sf._schwarz_terms(u, p, False, strict=False)
    dS = sf._schwarz_terms(u, p, True, strict=False)
    return -1j * S - 2.0 / x, u * dS + 2.0 / (x * x)


class _Annulus:
    """Strip coordinates w = -i log z: the outer circle is R, the inner one R + i(p - t)."""
    kind = "annulus"

    def __init__(self, p, sides, eps_z, radial=False):
        self.p = p
        self.sides = tuple(sides)
        self.n_spec = len(sides) - 1 if not radial else 1
        self.eps_z = eps_z
        self.radial = radial

    def drift(self, t, a1, spec):
        q = self.p - t
        if self.radial:
            b = spec[0]
            return pt.drift_D(pt.MarkedSetup.radial(q, a1, b.real, b.imag))
        s = pt.MarkedSetup.annulus(q, [a1] + list(spec[: self.n_spec].real), self.sides)
        A, dA = pt.entry_matrix(s, with_deriv=True)
        Z = pt.pfaffian(A)
        if abs(Z) < self.eps_z * pt._entry_scale(A):
            raise pt.NearZeroError(f"|Z| = {abs(Z):.3e} below threshold")
        return 1.5 * float(np.trace(np.linalg.solve(A, dA)))

    def _outer(self, spec):
        if self.radial:
            return np.zeros(0)
        return np.array([spec[m].real for m in range(self.n_spec) if self.sides[m + 1] == "outer"])

    def crosses(self, a1, xi, spec):
        s = self._outer(spec)
        if s.size == 0:
            return False
        before = np.remainder(s - a1 + math.pi, TWO_PI) - math.pi
        after = np.remainder(s - xi + math.pi, TWO_PI) - math.pi
        return bool(np.any((np.sign(before) != np.sign(after)) & (np.abs(before) < math.pi / 2)))

    def flow(self, t, h, xi, w, L):
        # smooth part by one Euler step, then the exact slit step for the 2/x pole;
        # the 2 pi shift is fixed for the whole step so the split stays consistent near +-pi
        c = xi + TWO_PI * np.round((w.real - xi) / TWO_PI)
        r, dr = _strip_remainder(w - c, self.p - t)
        x = w + h * r - c
        s, dl = _slit_log(x, h)
        return c + s, L + h * dr + dl

    def min_gap(self, a1, spec):
        if self.radial:
            return float(spec[0].imag)
        gaps = [math.inf]
        for side in ("outer", "inner"):
            ang = [spec[m].real for m in range(self.n_spec) if self.sides[m + 1] == side]
            if side == "outer":
                ang.append(a1)
            ang = np.sort(np.remainder(ang, TWO_PI))
            if ang.size > 1:
                d = np.diff(np.concatenate([ang, [ang[0] + TWO_PI]]))
                gaps.append(float(np.min(d)))
        return min(gaps)

    def fix(self, t, w):
        if self.radial:
            return w
        for m in range(self.n_spec):
            w[m] = w[m].real + (1j * (self.p - t) if self.sides[m + 1] == "inner" else 0)
        return w

    def distance_to_boundary(self, w):
        return w.imag

    def record(self, w):
        if self.radial:
            return np.array([w[0].real, w[0].imag])
        return w[: self.n_spec].real.copy()


# ----------------------------------------------------------------- engine

def _snapshot(at, t, a1, w, L, n_spec, n_probe, stopped):
    return {"at": at, "t": t, "a1": a1, "spec": w[:n_spec].copy(), "probes": w[n_spec:n_spec + n_probe].copy(),
            "L_spec": L[:n_spec].copy(), "L_probes": L[n_spec:n_spec + n_probe].copy(),
            "stopped": stopped}


def _renumber_rescue(geom, t, a1, spec):
    """Try each spectator in the role of the last point; in the half-plane the
    Pfaffian only changes sign, so this never rescues there."""
    n = geom.n_spec
    for j in range(n - 1):
        perm = list(range(n))
        perm[j], perm[-1] = perm[-1], perm[j]
        try:
            return geom.drift(t, a1, spec[perm]), perm
        except pt.NearZeroError:
            continue
    return None, None


def _integrate(geom, a1, spec, probes, cross, dt, T, seed, kappa, drift, eps_gap,
               checkpoints=(), cross_tol=CROSS_TOL):
    rng = np.random.default_rng(seed)
    n_spec, n_probe = len(spec), len(probes)
    w = np.concatenate([np.asarray(spec, complex), np.asarray(probes, complex),
                        np.asarray(cross, complex)])
    L = np.zeros(w.size, dtype=complex)
    # a crosscut point is reached once its distance to the boundary has shrunk by cross_tol
    cross0 = geom.distance_to_boundary(w[n_spec + n_probe:])
    ck = sorted({float(c) for c in checkpoints if 0 <= c <= T})
    marks = sorted(set(ck[1:] if ck and ck[0] == 0 else ck) | {float(T)})
    snaps = []
    if ck and ck[0] == 0:
        snaps.append(_snapshot(0.0, 0.0, a1, w, L, n_spec, n_probe, False))
    t, times, xis, flow = 0.0, [0.0], [a1], [geom.record(w)]
    reason, sqk = "budget", math.sqrt(kappa)
    mi = 0
    while t < T:
        target = marks[mi]
        try:
            D = geom.drift(t, a1, w[:n_spec]) if drift else 0.0
        except pt.NearZeroError:
            D, _ = _renumber_rescue(geom, t, a1, w[:n_spec])
            if D is None:
                reason = "z-small"
                break
        h = min(dt, target - t)
        k = 0
        while abs(D) * h > 0.1 * math.sqrt(3 * h) and k < MAX_HALVINGS:
            h /= 2
            k += 1
        xi = a1 + sqk * rng.standard_normal() * math.sqrt(h) + D * h
        if geom.crosses(a1, xi, w):
            reason = "gap"
            break
        w, L = geom.flow(t, h, xi, w, L)
        t = target if target - (t + h) <= 1e-14 * max(1.0, target) else t + h
        w = geom.fix(t, w)
        a1 = xi
        times.append(t)
        xis.append(a1)
        flow.append(geom.record(w))
        if t == target:
            if target in ck:
                snaps.append(_snapshot(t, t, a1, w, L, n_spec, n_probe, False))
            mi += 1
        if geom.min_gap(a1, w) < eps_gap:
            reason = "gap"
            break
        if len(cross) and np.min(geom.distance_to_boundary(w[n_spec + n_probe:]) / cross0) < cross_tol:
            reason = "crosscut"
            break
    while len(snaps) < len(ck):
        snaps.append(_snapshot(ck[len(snaps)], t, a1, w, L, n_spec, n_probe, True))
    flow = np.array(flow) if n_spec else np.zeros((len(times), 0))
    return times, xis, flow, reason, t, snaps, (a1, w[:n_spec].copy())


# ------------------------------------------------- compiled half-plane path

@numba.njit(cache=True)
def _hp_drift(a1, spec):
    """(D, |Z| / max|A|^{n/2}) for 2 or 4 points in H."""
    if spec.size == 1:
        return 3.0 / (spec[0] - a1), 1.0
    b, c, d = spec[0], spec[1], spec[2]
    A01, A02, A03 = 1.0 / (a1 - b), 1.0 / (a1 - c), 1.0 / (a1 - d)
    A12, A13, A23 = 1.0 / (b - c), 1.0 / (b - d), 1.0 / (c - d)
    Z = A01 * A23 - A02 * A13 + A03 * A12
    dZ = -A01 * A01 * A23 + A02 * A02 * A13 - A03 * A03 * A12
    m = max(abs(A01), abs(A02), abs(A03), abs(A12), abs(A13), abs(A23))
    return 3.0 * dZ / Z, abs(Z) / (m * m)


@numba.njit(cache=True)
def _hp_kernel(a1, spec, t, T, dt, noise, kappa, use_drift, eps_gap, eps_z, out_t, out_xi, out_flow, pos):
    """Advance until a stop, the end of the noise block or a full buffer.
    Codes: 0 more needed, 1 budget, 2 gap, 3 z-small."""
    k = 0
    n = spec.size
    sqk = math.sqrt(kappa)
    while t < T:
        if k >= noise.size or pos >= out_t.size:
            return a1, t, pos, k, 0
        D = 0.0
        if use_drift:
            D, rel = _hp_drift(a1, spec)
            if rel < eps_z:
                return a1, t, pos, k, 3
        h = min(dt, T - t)
        j = 0
        while abs(D) * h > 0.1 * math.sqrt(3 * h) and j < MAX_HALVINGS:
            h /= 2
            j += 1
        xi = a1 + sqk * noise[k] * math.sqrt(h) + D * h
        k += 1
        for m in range(n):
            if np.sign(spec[m] - a1) != np.sign(spec[m] - xi):
                return a1, t, pos, k, 2
        for m in range(n):
            x = spec[m] - xi
            spec[m] = xi + x * math.sqrt(1 + 4.0 * h / (x * x))
        t = T if T - (t + h) <= 1e-14 * max(1.0, T) else t + h
        a1 = xi
        out_t[pos] = t
        out_xi[pos] = a1
        out_flow[pos, :] = spec
        pos += 1
        gap = np.inf
        for m in range(n):
            gap = min(gap, abs(spec[m] - a1))
            for r in range(m + 1, n):
                gap = min(gap, abs(spec[m] - spec[r]))
        if gap < eps_gap:
            return a1, t, pos, k, 2
    return a1, t, pos, k, 1


_CODES = {1: "budget", 2: "gap", 3: "z-small"}


def _integrate_fast(a1, spec, dt, T, seed, kappa, drift, eps_gap, eps_z):
    rng = np.random.default_rng(seed)
    spec = np.array(spec, dtype=float)
    cap = 1024
    out_t, out_xi = np.empty(cap), np.empty(cap)
    out_flow = np.empty((cap, spec.size))
    out_t[0], out_xi[0], out_flow[0] = 0.0, a1, spec
    pos, t, code = 1, 0.0, 0
    noise = np.zeros(0)
    while code == 0:
        if pos >= cap:
            cap *= 2
            out_t, out_xi = np.resize(out_t, cap), np.resize(out_xi, cap)
            out_flow = np.resize(out_flow, (cap, spec.size))
        if noise.size == 0:
            noise = rng.standard_normal(512)
        a1, t, pos, k, code = _hp_kernel(float(a1), spec, t, float(T), float(dt), noise, float(kappa),
                                         bool(drift), float(eps_gap), float(eps_z), out_t, out_xi,
                                         out_flow, pos)
        noise = noise[k:]
    return out_t[:pos].copy(), out_xi[:pos].copy(), out_flow[:pos].copy(), _CODES[code], t, (a1, spec + 0j)


# -------------------------------------------------- compiled annulus path

@numba.njit(cache=True)
def _theta_real(z, q):
    """theta_1..theta_4 at real z, same truncation as specfun._theta_all."""
    lq = math.log(q)
    N = 1
    while N < sf.THETA_MAX_TERMS and not (lq * (N + 0.5) ** 2 < -46.0):
        N += 1
    t1, t2, t3, t4 = 0.0, 0.0, 1.0, 1.0
    for n in range(N + 1):
        a = q ** ((n + 0.5) ** 2)
        m = n + 1
        b = q ** (m * m)
        sg = 1.0 if n % 2 == 0 else -1.0
        t1 += 2 * a * sg * math.sin((2 * n + 1) * z)
        t2 += 2 * a * math.cos((2 * n + 1) * z)
        c2 = math.cos(2 * m * z)
        t3 += 2 * b * c2
        t4 -= 2 * b * sg * c2
    return t1, t2, t3, t4


@numba.njit(cache=True)
def _theta_consts(q):
    _, t2, t3, t4 = _theta_real(0.0, q)
    if t4 <= 1e-6 * t3:
        n_max = max(2, int(math.ceil(math.log(sf.THETA_TOL * 1e-3) / math.log(q))))
        t4 = 1.0
        for n in range(1, n_max + 1):
            t4 *= (1 - q ** (2 * n)) * (1 - q ** (2 * n - 1)) ** 2
    return t2, t3, t4


@numba.njit(cache=True)
def _ann2_drift(u, p):
    """3 d log|ds| for two points on the outer circle, u = theta_2 - theta_1."""
    q = math.exp(-p)
    c2, c3, c4 = _theta_consts(q)
    t1, t2, t3, t4 = _theta_real(0.5 * u, q)
    sn = (c3 / c2) * t1 / t4
    cn = (c4 / c2) * t2 / t4
    dn = (c4 / c3) * t3 / t4
    return 3.0 * 0.5 * c3 * c3 * cn / (sn * dn)


@numba.njit(cache=True)
def _strip_field(x, p):
    """Re of the strip field remainder F(x) - 2/x at real x."""
    u = complex(math.cos(x), math.sin(x))
    out = (1 + u) / (1 - u)
    K = int(math.ceil((math.log(4 / -math.expm1(-2 * p)) + 2 * p + 41.5) / (2 * p)))
    K = max(1, min(K, 200000))
    for k in range(1, K + 1):
        e = math.exp(-2 * p * k)
        out += 2 * u * e / (1 - u * e) - 2 * e / (u - e)
    return (-1j * out).real - 2.0 / x


@numba.njit(cache=True)
def _ann2_kernel(a1, w, p, t, T, dt, noise, kappa, use_drift, eps_gap, out_t, out_xi, out_flow, pos):
    """Two outer points in strip coordinates; same step rule as _integrate."""
    k = 0
    sqk = math.sqrt(kappa)
    two_pi = 2 * math.pi
    while t < T:
        if k >= noise.size or pos >= out_t.size:
            return a1, w, t, pos, k, 0
        D = _ann2_drift(w - a1, p - t) if use_drift else 0.0
        h = min(dt, T - t)
        j = 0
        while abs(D) * h > 0.1 * math.sqrt(3 * h) and j < MAX_HALVINGS:
            h /= 2
            j += 1
        xi = a1 + sqk * noise[k] * math.sqrt(h) + D * h
        k += 1
        before = (w - a1 + math.pi) % two_pi - math.pi
        after = (w - xi + math.pi) % two_pi - math.pi
        if np.sign(before) != np.sign(after) and abs(before) < math.pi / 2:
            return a1, w, t, pos, k, 2
        c = xi + two_pi * np.round((w - xi) / two_pi)
        x = w + h * _strip_field(w - c, p - t) - c
        w = c + x * math.sqrt(1 + 4.0 * h / (x * x))
        t = T if T - (t + h) <= 1e-14 * max(1.0, T) else t + h
        a1 = xi
        out_t[pos] = t
        out_xi[pos] = a1
        out_flow[pos] = w
        pos += 1
        d = (w % two_pi - a1 % two_pi) % two_pi
        if min(d, two_pi - d) < eps_gap:
            return a1, w, t, pos, k, 2
    return a1, w, t, pos, k, 1


def _integrate_annulus2(a1, w, p, dt, T, seed, kappa, drift, eps_gap):
    rng = np.random.default_rng(seed)
    cap = 1024
    out_t, out_xi, out_flow = np.empty(cap), np.empty(cap), np.empty(cap)
    out_t[0], out_xi[0], out_flow[0] = 0.0, a1, w
    pos, t, code = 1, 0.0, 0
    noise = np.zeros(0)
    while code == 0:
        if pos >= cap:
            cap *= 2
            out_t, out_xi, out_flow = np.resize(out_t, cap), np.resize(out_xi, cap), np.resize(out_flow, cap)
        if noise.size == 0:
            noise = rng.standard_normal(512)
        a1, w, t, pos, k, code = _ann2_kernel(float(a1), float(w), float(p), t, float(T), float(dt), noise,
                                              float(kappa), bool(drift), float(eps_gap), out_t, out_xi,
                                              out_flow, pos)
        noise = noise[k:]
    return (out_t[:pos].copy(), out_xi[:pos].copy(), out_flow[:pos].reshape(-1, 1).copy(), _CODES[code], t,
            (a1, np.array([w + 0j])))


# --------------------------------------------------------------- chordal

def _halfplane_points(setup, start):
    pts = list(setup.points)
    if not 0 <= start < len(pts):
        raise SlesimError("start index out of range")
    return pts[start], np.array(pts[start + 1:] + pts[:start], dtype=float)


def cross_ratio(a1, a2, a3, a4) -> float:
    """(a2-a1)(a4-a3)/((a3-a1)(a4-a2)); in (0, 1) for cyclically ordered points,
    -> 0 when a1 pairs with a2 and -> 1 when a1 pairs with a4."""
    return (a2 - a1) * (a4 - a3) / ((a3 - a1) * (a4 - a2))


def simulate_chordal(setup: pt.MarkedSetup, dt: float = 1e-3, seed: int = 0, T: float = 1.0,
                     crosscut: Crosscut | None = None, probes=(), checkpoints=(), start: int = 0,
                     kappa: float = KAPPA, drift: bool = True, eps_gap: float = EPS_GAP,
                     eps_z: float = EPS_Z, fast: bool | None = None) -> SdeRun:
    """da_1 = sqrt(kappa) dB + D dt with D = 3 d log|Z| refreshed every step;
    spectators and probes follow dg = 2/(g - a_1) dt through exact slit steps.
    `start` picks which point grows the curve; the rest follow in cyclic order.
    Runs without probes, crosscut or checkpoints on 2 or 4 points use a compiled
    loop that draws the same noise stream."""
    if setup.geometry != "half-plane":
        raise SlesimError("simulate_chordal needs a half-plane setup")
    if setup.n < 2 or setup.n % 2:
        raise SlesimError("need 2k >= 2 marked points")
    probes = np.asarray(probes, dtype=complex)
    if probes.size and np.any(probes.imag <= 0):
        raise SlesimError("probes must lie in the upper half-plane")
    a1, spec = _halfplane_points(setup, start)
    if fast is None:
        fast = not probes.size and crosscut is None and not len(checkpoints) and setup.n in (2, 4)
    if fast:
        times, xis, flow, reason, t, final = _integrate_fast(a1, spec, dt, T, seed, kappa, drift,
                                                             eps_gap, eps_z)
        snaps = []
    else:
        geom = _HalfPlane(spec.size, eps_z)
        cross = crosscut.points if crosscut is not None else np.zeros(0, complex)
        times, xis, flow, reason, t, snaps, final = _integrate(
            geom, a1, spec, probes, cross, dt, T, seed, kappa, drift, eps_gap, checkpoints)
    pairing = None
    if reason == "gap" and setup.n == 4:
        a, s = final[0], final[1].real
        pairing = 1 if cross_ratio(a, *s) < 0.5 else 3
    elif reason == "gap" and setup.n == 2:
        pairing = 1
    path = DrivingPath(np.array(times), np.array(xis), "chordal", reason, seed, dt)
    return SdeRun(setup, dt, seed, crosscut, path, flow, reason, t, snaps, final, pairing)


# --------------------------------------------------------------- annulus

def simulate_annulus(setup: pt.MarkedSetup, dt: float = 1e-3, seed: int = 0, T: float | None = None,
                     crosscut: Crosscut | None = None, probes=(), checkpoints=(),
                     kappa: float = KAPPA, drift: bool = True, eps_gap: float = EPS_GAP,
                     eps_z: float = EPS_Z, fast: bool | None = None) -> SdeRun:
    """dtheta_1 = sqrt(kappa) dB + 3 d log|Z| dt in the annulus of modulus p - t;
    spectators and probes (given as points z of the annulus) follow the annulus
    Loewner flow. The first point must be on the outer circle. Two outer points
    without probes, crosscut or checkpoints use a compiled loop on the same
    noise stream."""
    if setup.geometry != "annulus":
        raise SlesimError("simulate_annulus needs an annulus setup")
    if setup.sides[0] != "outer":
        raise SlesimError("the curve grows from the outer circle")
    p = setup.p
    T = 0.5 * p if T is None else T
    if not 0 < T < p:
        raise SlesimError(f"time budget {T} must lie in (0, p = {p})")
    a1 = setup.points[0]
    spec = np.array([th + (1j * p if s == "inner" else 0) for th, s in
                     zip(setup.points[1:], setup.sides[1:])], dtype=complex)
    probes = _to_strip(probes, p)
    cross = _to_strip(crosscut.points, p) if crosscut is not None else np.zeros(0, complex)
    if fast is None:
        fast = (not probes.size and not cross.size and not len(checkpoints) and setup.n == 2
                and setup.sides[1] == "outer")
    if fast:
        times, xis, flow, reason, t, final = _integrate_annulus2(a1, spec[0].real, p, dt, T, seed, kappa,
                                                                 drift, eps_gap)
        snaps = []
    else:
        geom = _Annulus(p, setup.sides, eps_z)
        times, xis, flow, reason, t, snaps, final = _integrate(
            geom, a1, spec, probes, cross, dt, T, seed, kappa, drift, eps_gap, checkpoints)
    path = DrivingPath(np.array(times), np.array(xis), "annulus", reason, seed, dt)
    return SdeRun(setup, dt, seed, crosscut, path, flow, reason, t, snaps, final)


def _to_strip(z, p):
    z = np.asarray(z, dtype=complex)
    if z.size and np.any((np.abs(z) >= 1) | (np.abs(z) <= math.exp(-p))):
        raise SlesimError("probe points must lie inside the annulus")
    return -1j * np.log(z)


# ---------------------------------------------------------------- radial

def simulate_radial(setup, dt: float = 1e-3, seed: int = 0, T: float | None = None,
                    kappa: float = KAPPA, eps_gap: float = EPS_GAP) -> SdeRun:
    """Radial SLE(3). A number `setup` is the start angle in the disc (driftless
    case); a radial MarkedSetup gives the annulus case with drift 3 d log Z_e, the
    interior point following the annulus flow."""
    if isinstance(setup, (int, float)):
        T = 1.0 if T is None else T
        rng = np.random.default_rng(seed)
        n = int(math.ceil(T / dt - 1e-12))
        t = np.linspace(0, T, n + 1)
        xi = float(setup) + math.sqrt(kappa) * np.concatenate(
            [[0.0], np.cumsum(rng.standard_normal(n) * np.sqrt(np.diff(t)))])
        path = DrivingPath(t, xi, "radial", "budget", seed, dt)
        return SdeRun(float(setup), dt, seed, None, path, np.zeros((n + 1, 0)), "budget", T)
    if setup.geometry != "radial":
        raise SlesimError("simulate_radial needs a start angle or a radial setup")
    p = setup.p
    T = 0.5 * p if T is None else T
    if not 0 < T < p:
        raise SlesimError(f"time budget {T} must lie in (0, p = {p})")
    ta, tb, rb = setup.points
    geom = _Annulus(p, ("outer", "inner"), EPS_Z, radial=True)
    times, xis, flow, reason, t, snaps, final = _integrate(
        geom, ta, np.array([tb + 1j * rb]), np.zeros(0, complex), np.zeros(0, complex), dt, T, seed, kappa, True,
        eps_gap)
    if reason == "gap":
        reason = "target"
    path = DrivingPath(np.array(times), np.array(xis), "radial", reason, seed, dt)
    return SdeRun(setup, dt, seed, None, path, flow, reason, t, snaps, final)


# ---------------------------------------------------------------- batches

def _batch_job(args):
    fn, setup, kwargs, seed, lo, hi = args
    return [fn(setup, seed=run_seed(seed, i), **kwargs) for i in range(lo, hi)]


def simulate_many(fn, setup, samples: int, seed: int = 0, jobs: int = 1, **kwargs) -> list:
    """`samples` independent runs with seeds derived from (seed, index); the
    result does not depend on `jobs`."""
    if jobs <= 1 or samples < 2:
        return _batch_job((fn, setup, kwargs, seed, 0, samples))
    bounds = np.linspace(0, samples, min(jobs, samples) * 4 + 1).astype(int)
    tasks = [(fn, setup, kwargs, seed, int(a), int(b)) for a, b in zip(bounds, bounds[1:]) if b > a]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        parts = list(ex.map(_batch_job, tasks))
    return [r for part in parts for r in part]


# ------------------------------------------------------------- martingale

def observable_ratio(setup: pt.MarkedSetup, t, a1, spec, gz, L_z, L_last):
    """M_t(z) = g'(z)^{1/2} f(a_1..a_{2k-1}, g(z)) / (g'(a_2k)^{1/2} f(a_1..a_{2k-1}, a_2k)),
    with the log-derivatives L tracked continuously along the flow."""
    pts = [a1] + [complex(s).real for s in spec]
    if setup.geometry == "half-plane":
        ratio = _halfplane_ratio(pts, gz)
    else:
        s = pt.MarkedSetup("annulus", tuple(pts), setup.sides, setup.p - t)
        ratio = pt.martingale_ratio(s, gz)
    return np.exp(0.5 * (np.asarray(L_z) - L_last)) * ratio


def _halfplane_ratio(pts, z):
    n = len(pts)
    src = pts[:-1]
    U = np.zeros((n - 1, n - 1))
    for m in range(n - 1):
        for r in range(m + 1, n - 1):
            U[m, r] = 1.0 / (src[r] - src[m])
    B = pt.skew_from_upper(U)
    P = np.array([(-1) ** s * pt.pfaffian(pt._minor(B, s)) for s in range(n - 1)], dtype=float)
    z = np.asarray(z, dtype=complex)
    num = sum(P[s] / (z - a) for s, a in enumerate(src))
    den = sum(P[s] / (pts[-1] - a) for s, a in enumerate(src))
    return num / den


@dataclass
class MartingaleReport:
    probes: list
    checkpoints: list
    M0: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    n: int
    stopped_fraction: float
    inconclusive: bool
    verdicts: np.ndarray

    @property
    def passed(self) -> bool:
        return bool(np.all(self.verdicts)) and not self.inconclusive

    def as_dict(self):
        out = []
        for i, z in enumerate(self.probes):
            for j, c in enumerate(self.checkpoints):
                m, s = self.mean[j, i], self.stderr[j, i]
                out.append({"probe": [z.real, z.imag], "t": c,
                            "estimate": [m.real, m.imag], "stderr": [s.real, s.imag],
                            "reference": [self.M0[i].real, self.M0[i].imag],
                            "verdict": "pass" if self.verdicts[j, i] else "fail"})
        return {"n": self.n, "stopped_fraction": self.stopped_fraction,
                "inconclusive": self.inconclusive, "verdict": "pass" if self.passed else "fail",
                "metrics": out}


def martingale_values(runs, setup):
    """M_t(probe) for every run and checkpoint: array (runs, checkpoints, probes)."""
    out = []
    for r in runs:
        row = []
        for s in r.snapshots:
            row.append(observable_ratio(setup, s["t"], s["a1"], s["spec"], s["probes"],
                                        s["L_probes"], s["L_spec"][-1].real))
        out.append(row)
    return np.array(out)


def martingale_test(setup: pt.MarkedSetup, probes, n_paths: int = 2000, T: float = 0.2,
                    dt: float = 1e-3, seed: int = 0, crosscut: Crosscut | None = None,
                    kappa: float = KAPPA, jobs: int = 1, runs=None) -> MartingaleReport:
    """Check E[M_t(z)] = M_0(z) at t in {0, T/4, T/2, T}, separately for the real
    and imaginary parts, at 3 standard errors. Stopped paths keep their value at
    the stopping time."""
    probes = [complex(z) for z in probes]
    ck = [0.0, T / 4, T / 2, T]
    if runs is None:
        fn = simulate_chordal if setup.geometry == "half-plane" else simulate_annulus
        runs = simulate_many(fn, setup, n_paths, seed, jobs, dt=dt, T=T, crosscut=crosscut,
                             probes=probes, checkpoints=ck, kappa=kappa)
    M = martingale_values(runs, setup)
    n = M.shape[0]
    M0 = M[0, 0]
    mean = M.mean(axis=0)
    se = (M.real.std(axis=0, ddof=1) + 1j * M.imag.std(axis=0, ddof=1)) / math.sqrt(n)
    dev = mean - M0[None, :]
    ok = (np.abs(dev.real) <= 3 * se.real + 1e-12) & (np.abs(dev.imag) <= 3 * se.imag + 1e-12)
    stopped = sum(1 for r in runs if r.stop_reason != "budget") / n
    return MartingaleReport(probes, ck, M0, mean, se, n, stopped, stopped > 0.2, ok)


# -------------------------------------------------- connection probability

@dataclass
class ConnectionEstimate:
    estimate: float
    stderr: float
    n: int
    unresolved: int
    ambiguous: int

    def as_dict(self, reference: float | None = None, ref_stderr: float = 0.0):
        d = {"estimate": self.estimate, "stderr": self.stderr, "n": self.n,
             "unresolved": self.unresolved, "ambiguous": self.ambiguous}
        if reference is not None:
            tot = math.hypot(self.stderr, ref_stderr)
            d["reference"] = reference
            d["verdict"] = "pass" if abs(self.estimate - reference) <= 3 * tot else "fail"
        return d


def pairing_estimate(pairings) -> ConnectionEstimate:
    """Fraction of resolved runs pairing a_1 with its next neighbour, binomial stderr."""
    res = [p for p in pairings if p is not None]
    n = len(res)
    if n == 0:
        return ConnectionEstimate(float("nan"), float("nan"), 0, len(pairings), 0)
    q = sum(1 for p in res if p == 1) / n
    return ConnectionEstimate(q, math.sqrt(max(q * (1 - q), 1.0 / n) / n), n, len(pairings) - n, 0)


def connection_probability(setup: pt.MarkedSetup, n: int = 2000, seed: int = 0, dt: float = 1e-3,
                           T: float = 50.0, start: int = 0, jobs: int = 1,
                           eps_gap: float = EPS_GAP) -> ConnectionEstimate:
    """P(the curve from a_1 ends at a_2 rather than a_4), decided when a gap
    collapses by the cross-ratio of the four points at that moment."""
    if setup.geometry != "half-plane" or setup.n != 4:
        raise SlesimError("connection probabilities need a 4-point half-plane setup")
    runs = simulate_many(simulate_chordal, setup, n, seed, jobs, dt=dt, T=T, start=start,
                         eps_gap=eps_gap)
    est = pairing_estimate([r.pairing for r in runs])
    amb = 0
    for r in runs:
        if r.pairing is not None:
            chi = cross_ratio(r.final[0], *r.final[1].real)
            amb += int(0.1 < chi < 0.9)
    est.ambiguous = amb
    return est


__all__ = ["SdeRun", "SlesimError", "simulate_chordal", "simulate_annulus", "simulate_radial",
           "simulate_many", "martingale_test", "martingale_values", "MartingaleReport",
           "connection_probability", "ConnectionEstimate", "pairing_estimate", "cross_ratio",
           "observable_ratio", "run_seed", "KAPPA", "EPS_GAP", "EPS_Z"]
