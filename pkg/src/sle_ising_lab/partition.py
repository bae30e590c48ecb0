"""Continuous observables, Pfaffians, SLE(3) partition functions and drifts
in the half-plane, the annulus A_p and the annulus with an interior target."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import specfun

ZERO_TOL = 1e-10
BRANCH_TOL = 1e-8
POLE_TOL = 1e-12


class PartitionError(ValueError):
    pass


class ContractError(PartitionError):
    pass


class DegenerateError(PartitionError):
    pass


class NearZeroError(PartitionError):
    pass


class BranchError(PartitionError):
    pass


GEOMETRIES = ("half-plane", "annulus", "radial")


@dataclass(frozen=True)
class MarkedSetup:
    """Canonical geometry plus ordered marked points.

    half-plane: points are reals a_1 < ... < a_n (n = 2k, or 2k-1 for
    multipoint observables).
    annulus: points are angles, sides[i] in {"outer", "inner"}.
    radial: points = (theta_a, theta_b, rho_b) with 0 < rho_b < p.
    """
    geometry: str
    points: tuple
    sides: tuple | None = None
    p: float | None = None

    def __post_init__(self):
        if self.geometry not in GEOMETRIES:
            raise ContractError(f"unknown geometry {self.geometry!r}")
        pts = tuple(float(x) for x in self.points)
        object.__setattr__(self, "points", pts)
        if self.geometry == "half-plane":
            if any(b <= a for a, b in zip(pts, pts[1:])):
                raise ContractError("half-plane points must be strictly increasing")
            return
        if self.p is None or not self.p > 0:
            raise ContractError("annulus geometries need p > 0")
        if self.geometry == "annulus":
            sides = tuple(self.sides or ("outer",) * len(pts))
            if len(sides) != len(pts) or any(s not in ("outer", "inner") for s in sides):
                raise ContractError("sides must be 'outer' or 'inner', one per point")
            object.__setattr__(self, "sides", sides)
            for side in ("outer", "inner"):
                ang = sorted(math.remainder(t, 2 * math.pi) for t, s in zip(pts, sides) if s == side)
                for a, b in zip(ang, ang[1:] + ang[:1]):
                    if len(ang) > 1 and abs(math.remainder(b - a, 2 * math.pi)) < POLE_TOL:
                        raise ContractError("coincident angles on one boundary circle")
        else:
            if len(pts) != 3:
                raise ContractError("radial setup is (theta_a, theta_b, rho_b)")
            if not 0 < pts[2] < self.p:
                raise ContractError("radial setup needs 0 < rho_b < p")

    @classmethod
    def halfplane(cls, points: Sequence[float]) -> "MarkedSetup":
        return cls("half-plane", tuple(points))

    @classmethod
    def annulus(cls, p: float, thetas: Sequence[float], sides: Sequence[str] | None = None) -> "MarkedSetup":
        return cls("annulus", tuple(thetas), tuple(sides) if sides else None, p)

    @classmethod
    def radial(cls, p: float, theta_a: float, theta_b: float, rho_b: float) -> "MarkedSetup":
        return cls("radial", (theta_a, theta_b, rho_b), None, p)

    def replace_points(self, points, p=None) -> "MarkedSetup":
        return MarkedSetup(self.geometry, tuple(points), self.sides, self.p if p is None else p)

    @property
    def n(self) -> int:
        return len(self.points)

    def parity(self) -> str:
        """'odd' if every boundary circle carries an odd number of points."""
        no = sum(1 for s in self.sides if s == "outer")
        ni = len(self.sides) - no
        if no % 2 == 1 and ni % 2 == 1:
            return "odd"
        if no % 2 == 0 and ni % 2 == 0:
            return "even"
        raise ContractError("per-circle point counts must be all odd or all even")


# ---------------------------------------------------------------- Pfaffians

def skew_from_upper(upper: np.ndarray) -> np.ndarray:
    """Skew matrix built from the strict upper triangle only."""
    u = np.triu(np.asarray(upper), 1)
    return u - u.T


def pfaffian(A) -> float | complex:
    """Pfaffian by skew-symmetric tridiagonalization with pivoting."""
    A = np.array(A, dtype=complex if np.iscomplexobj(A) else float)
    n = A.shape[0]
    if A.ndim != 2 or A.shape[1] != n:
        raise ContractError("Pfaffian needs a square matrix")
    if n % 2:
        raise ContractError("Pfaffian of an odd-dimensional matrix")
    if n == 0:
        return 1.0
    pf = 1.0
    for k in range(0, n - 1, 2):
        kp = k + 1 + int(np.argmax(np.abs(A[k + 1:, k])))
        if kp != k + 1:
            A[[k + 1, kp], :] = A[[kp, k + 1], :]
            A[:, [k + 1, kp]] = A[:, [kp, k + 1]]
            pf = -pf
        if A[k + 1, k] == 0:
            return 0.0 * pf
        pf = pf * A[k, k + 1]
        if k + 2 < n:
            tau = A[k, k + 2:] / A[k, k + 1]
            col = A[k + 2:, k + 1].copy()
            A[k + 2:, k + 2:] += np.outer(tau, col) - np.outer(col, tau)
    return pf


def pfaffian_cofactor(A):
    """Recursive expansion along the first row; exact for object arrays."""
    n = len(A)
    if n % 2:
        raise ContractError("Pfaffian of an odd-dimensional matrix")
    if n == 0:
        return 1
    total = 0
    idx = list(range(n))
    for j in range(1, n):
        rest = [i for i in idx if i not in (0, j)]
        minor = [[A[r][c] for c in rest] for r in rest]
        term = A[0][j] * pfaffian_cofactor(minor)
        total = total + term if j % 2 == 1 else total - term
    return total


def _minor(A: np.ndarray, drop: int) -> np.ndarray:
    keep = [i for i in range(A.shape[0]) if i != drop]
    return A[np.ix_(keep, keep)]


# ------------------------------------------------------------- observables

def obs_halfplane(a: float, z: complex, n: int = 0) -> complex:
    """f^(n)(H, a, z) = (z - a)^-(n+1)."""
    d = complex(z) - a
    if abs(d) < POLE_TOL:
        raise specfun.PoleError("half-plane observable evaluated at its source")
    return d ** (-(n + 1))


def obs_strip(p: float, theta: float, w, cover: str = "trivial"):
    """Strip observable with residue 1 at w = theta.

    trivial cover: alpha*ds(w - theta|pi,p), 2pi-antiperiodic;
    nontrivial cover: alpha*cs(w - theta|pi,p), 2pi-periodic.
    """
    kind = {"trivial": "ds", "nontrivial": "cs"}.get(cover)
    if kind is None:
        raise ContractError(f"cover must be 'trivial' or 'nontrivial', got {cover!r}")
    alpha = specfun.elliptic_params(p).alpha
    return alpha * specfun.jacobi(np.asarray(w) - theta, p, kind)


def _strip_obs_deriv(p: float, theta: float, w, cover: str):
    kind = "ds" if cover == "trivial" else "cs"
    alpha = specfun.elliptic_params(p).alpha
    return alpha * specfun.jacobi_deriv(np.asarray(w) - theta, p, kind)


# ------------------------------------------------------- entry matrices

def _annulus_kinds(setup: MarkedSetup):
    par = setup.parity()
    return ("cs", "dn") if par == "odd" else ("ds", "cn")


def entry_matrix(setup: MarkedSetup, with_deriv: bool = False):
    """Skew entry matrix whose Pfaffian is Z, and optionally its derivative
    in the first marked point."""
    n = setup.n
    if n % 2:
        raise ContractError("partition function needs an even number of points")
    pts = setup.points
    U = np.zeros((n, n))
    dU = np.zeros((n, n))
    if setup.geometry == "half-plane":
        for m in range(n):
            for r in range(m + 1, n):
                d = pts[m] - pts[r]
                U[m, r] = 1.0 / d
                if m == 0:
                    dU[m, r] = -1.0 / d ** 2
    elif setup.geometry == "annulus":
        same, cross = _annulus_kinds(setup)
        iu = np.triu_indices(n, 1)
        x = np.asarray(pts)
        u = x[iu[1]] - x[iu[0]]
        kinds = [same if setup.sides[m] == setup.sides[r] else cross for m, r in zip(*iu)]
        for sh in (False, True):
            sel = np.array([(k in ("cn", "dn")) == sh for k in kinds])
            try:
                specfun._pole_check(u[sel], setup.p, sh, "entry")
            except specfun.PoleError as exc:
                raise DegenerateError("an entry sits on a pole") from exc
        sn, cn, dn, ep = specfun.jacobi_set(u, setup.p)
        sn, cn, dn = sn.real, cn.real, dn.real
        val = {"cs": cn / sn, "ds": dn / sn, "cn": cn, "dn": dn}
        der = {"cs": -dn / sn ** 2, "ds": -cn / sn ** 2, "cn": -sn * dn, "dn": -ep.k ** 2 * sn * cn}
        for j, (m, r) in enumerate(zip(*iu)):
            U[m, r] = val[kinds[j]][j]
            if m == 0:
                # d/d(point 0) of g(pts[r] - pts[0]) = -alpha g'
                dU[m, r] = -ep.alpha * der[kinds[j]][j]
    else:
        raise ContractError("radial setups have no Pfaffian entry matrix")
    A = skew_from_upper(U)
    if with_deriv:
        return A, skew_from_upper(dU)
    return A


def _radial_parts(p: float, theta_a: float, theta_b: float, rho_b: float):
    lat = specfun.WeierstrassLattice(p)
    y = math.pi + (rho_b - p) * 1j
    x = theta_b - theta_a - math.pi - 1j * p
    wy, dwy = specfun.weierstrass(y, lat)
    wx, dwx = specfun.weierstrass(x, lat)
    return -1j * dwy, wx - wy, dwx, abs(wx) + abs(wy)


def radial_Z(p: float, theta_a: float, theta_b: float, rho_b: float) -> float:
    num, den, _, scale = _radial_parts(p, theta_a, theta_b, rho_b)
    if abs(den) < POLE_TOL:
        raise DegenerateError("radial partition function has a pole here")
    # both parts are real on these lines; judge rounding against the operands, since
    # wx - wy cancels when b is close to the boundary
    if abs(num.imag) > BRANCH_TOL * abs(num) or abs(den.imag) > BRANCH_TOL * scale:
        raise BranchError(f"radial radicand is not real: {num / den}")
    R = num.real / den.real
    return math.sqrt(R) if R >= 0 else complex(np.sqrt(complex(R)))


def partition_Z(setup: MarkedSetup) -> float:
    """Signed partition function; see drift_D for the sign convention."""
    if setup.geometry == "radial":
        return radial_Z(setup.p, *setup.points)
    return float(pfaffian(entry_matrix(setup)))


def _entry_scale(A: np.ndarray) -> float:
    n = A.shape[0]
    m = np.max(np.abs(A)) if A.size else 1.0
    return m ** (n // 2)


def drift_D(setup: MarkedSetup, entry_scale: float = 1.0, check: bool = False) -> float:
    """D = 3 d/d(point 1) log|Z|, via d log Pf A = tr(A^-1 dA)/2."""
    if setup.geometry == "radial":
        p, ta, tb, rb = setup.p, *setup.points
        num, den, dwx, _ = _radial_parts(p, ta, tb, rb)
        if abs(den) < POLE_TOL:
            raise DegenerateError("radial partition function has a pole here")
        d = 1.5 * dwx / den
        out = float(d.real)
    else:
        A, dA = entry_matrix(setup, with_deriv=True)
        A = A * entry_scale
        dA = dA * entry_scale
        Z = pfaffian(A)
        if abs(Z) < ZERO_TOL * _entry_scale(A):
            raise NearZeroError(f"|Z| = {abs(Z):.3e} below threshold")
        out = 1.5 * float(np.trace(np.linalg.solve(A, dA)))
    if check:
        fd = drift_fd(setup)
        if abs(fd - out) > 1e-5 * max(1.0, abs(out)):
            raise PartitionError(f"analytic drift {out} disagrees with finite difference {fd}")
    return out


def drift_fd(setup: MarkedSetup, h: float = 1e-6) -> float:
    """Central finite difference of 3 log|Z| in the first point."""
    def logz(shift):
        pts = list(setup.points)
        pts[0] += shift
        s = setup.replace_points(pts)
        return math.log(abs(partition_Z(s)))
    return 3 * (logz(h) - logz(-h)) / (2 * h)


# --------------------------------------------------- multipoint observables

def source_matrix(setup: MarkedSetup) -> np.ndarray:
    """Entries [sqrt(i n_r) f(a_m, a_r)] for the 2k-1 sources."""
    pts = setup.points
    n = len(pts)
    U = np.zeros((n, n))
    if setup.geometry == "half-plane":
        for m in range(n):
            for r in range(m + 1, n):
                U[m, r] = 1.0 / (pts[r] - pts[m])
    elif setup.geometry == "annulus":
        _check_outer(setup)
        cover = _strip_cover(setup)
        for m in range(n):
            for r in range(m + 1, n):
                U[m, r] = float(np.real(obs_strip(setup.p, pts[m], pts[r], cover)))
    else:
        raise ContractError("multipoint observables are defined for half-plane and annulus")
    return skew_from_upper(U)


def _check_outer(setup: MarkedSetup):
    if any(s != "outer" for s in setup.sides):
        raise ContractError("annulus multipoint observables take sources on the outer circle")


def _strip_cover(setup: MarkedSetup, n_total: int | None = None) -> str:
    # all sources on the outer circle; the target decides the parity
    n_total = setup.n + 1 if n_total is None else n_total
    return "trivial" if n_total % 2 == 0 else "nontrivial"


def pfaffian_coefficients(setup: MarkedSetup) -> np.ndarray:
    """P_s = (-1)^(s+1) Pf of the source matrix with row/col s removed."""
    B = source_matrix(setup)
    n = B.shape[0]
    if n % 2 == 0:
        raise ContractError("multipoint observables take an odd number of sources")
    return np.array([(-1) ** s * pfaffian(_minor(B, s)) for s in range(n)], dtype=float)


def multipoint_observable(setup: MarkedSetup, z, coeffs: np.ndarray | None = None):
    """sum_s P_s f(., a_s, z); z in H (half-plane) or in the strip (annulus)."""
    P = pfaffian_coefficients(setup) if coeffs is None else coeffs
    z = np.asarray(z, dtype=complex)
    out = np.zeros_like(z)
    for s, a in enumerate(setup.points):
        if setup.geometry == "half-plane":
            d = z - a
            if np.any(np.abs(d) < POLE_TOL):
                raise specfun.PoleError("multipoint observable evaluated at a source")
            out = out + P[s] / d
        else:
            out = out + P[s] * obs_strip(setup.p, a, z, _strip_cover(setup))
    return complex(out) if out.ndim == 0 else out


def martingale_ratio(setup: MarkedSetup, z, scale: float = 1.0):
    """M = f(a_1..a_{2k-1}, z) / f(a_1..a_{2k-1}, a_{2k}) in canonical coordinates.

    `setup` carries all 2k points; `scale` multiplies every source-matrix
    entry (M is invariant under it).
    """
    if setup.n % 2:
        raise ContractError("martingale ratio needs 2k points")
    src = setup.replace_points(setup.points[:-1]) if setup.geometry == "half-plane" else \
        MarkedSetup("annulus", setup.points[:-1], setup.sides[:-1], setup.p)
    B = source_matrix(src) * scale
    n = B.shape[0]
    P = np.array([(-1) ** s * pfaffian(_minor(B, s)) for s in range(n)], dtype=float)
    target = setup.points[-1]
    if setup.geometry == "half-plane":
        num = multipoint_observable(src, z, P)
        den = multipoint_observable(src, target, P)
    else:
        cover = _strip_cover(src, setup.n)
        num = sum(P[s] * obs_strip(setup.p, a, z, cover) for s, a in enumerate(src.points))
        den = sum(P[s] * obs_strip(setup.p, a, target, cover) for s, a in enumerate(src.points))
    if abs(den) < POLE_TOL:
        raise NearZeroError("martingale denominator vanishes")
    return num / den
