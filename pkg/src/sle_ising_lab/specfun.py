"""Theta constants, Jacobi functions with quarter periods (pi, ip), the
Weierstrass function of the rectangular lattice (2pi, 2ip) and the annulus
Schwarz / Loewner kernels."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

THETA_TOL = 1e-17
THETA_MAX_TERMS = 200
POLE_TOL = 1e-12
KERNEL_TOL = 1e-14


class SpecfunError(ValueError):
    pass


class DomainError(SpecfunError):
    pass


class PoleError(SpecfunError):
    pass


@dataclass(frozen=True)
class Nome:
    p: float

    def __post_init__(self):
        if not self.p > 0:
            raise DomainError(f"modulus p must be positive, got {self.p}")

    @property
    def q(self) -> float:
        return math.exp(-self.p)


def _as_p(nome) -> float:
    if isinstance(nome, Nome):
        return nome.p
    return Nome(float(nome)).p


def theta_constants(q: float) -> tuple[float, float, float]:
    """Return (theta2, theta3, theta4) at z = 0 for nome q."""
    if not 0 <= q < 1:
        raise DomainError(f"nome must lie in [0, 1), got {q}")
    if q == 0:
        return 0.0, 1.0, 1.0
    # same summation as _theta_all so that quotients at z = 0 are exact
    _, t2, t3, t4 = (float(v.real) for v in _theta_all(0.0, q))
    if t4 > 1e-6 * t3:
        return t2, t3, t4
    # the alternating sum has cancelled; the product form has no cancellation
    n = np.arange(1, max(2, int(math.ceil(math.log(THETA_TOL * 1e-3) / math.log(q)))) + 1)
    t4 = float(np.prod((1 - q ** (2 * n)) * (1 - q ** (2 * n - 1)) ** 2))
    return t2, t3, t4


def _theta_all(z, q: float):
    """theta_1..theta_4 at complex z (array), nome q."""
    z = np.asarray(z, dtype=complex)
    if q == 0:
        zero = np.zeros_like(z)
        return zero, zero.copy(), np.ones_like(z), np.ones_like(z)
    # number of terms: q^{(n+1/2)^2} e^{(2n+1)|Im z|} below 1e-20 and decreasing
    lq = math.log(q)
    y = float(np.max(np.abs(z.imag), initial=0.0))
    N = 1
    while N < THETA_MAX_TERMS and not (lq * (N + 0.5) ** 2 + (2 * N + 1) * y < -46.0
                                       and (N + 0.5) * -lq > y):
        N += 1
    n = np.arange(N + 1)
    a = q ** ((n + 0.5) ** 2)
    m = n + 1
    b = q ** (m * m)
    zz = z[..., None]
    s = np.sin((2 * n + 1) * zz)
    c = np.cos((2 * n + 1) * zz)
    c2 = np.cos(2 * m * zz)
    sg = np.where(n % 2 == 0, 1.0, -1.0)
    t1 = (2 * a * sg * s).sum(axis=-1)
    t2 = (2 * a * c).sum(axis=-1)
    t3 = 1 + (2 * b * c2).sum(axis=-1)
    t4 = 1 - (2 * b * sg * c2).sum(axis=-1)
    return t1, t2, t3, t4


@dataclass(frozen=True)
class EllipticParams:
    """Classical parameters behind g(u|pi,p) = g(alpha*u; k)."""
    p: float
    k: float = field(init=False)
    kp: float = field(init=False)
    K: float = field(init=False)
    alpha: float = field(init=False)

    def __post_init__(self):
        t2, t3, t4 = theta_constants(math.exp(-self.p))
        object.__setattr__(self, "k", (t2 / t3) ** 2)
        object.__setattr__(self, "kp", (t4 / t3) ** 2)
        object.__setattr__(self, "K", 0.5 * math.pi * t3 * t3)
        # real quarter period mapped to pi: alpha*pi = K, i.e. alpha = theta3^2/2
        object.__setattr__(self, "alpha", 0.5 * t3 * t3)


def elliptic_params(nome) -> EllipticParams:
    return EllipticParams(_as_p(nome))


def agm_K(k: float, kp: float | None = None) -> float:
    """Complete elliptic integral of the first kind via the AGM.

    Pass the complementary modulus kp when k is close to 1, where
    sqrt(1 - k^2) loses digits.
    """
    if not 0 < k < 1:
        raise DomainError(f"modulus must lie in (0, 1), got {k}")
    if kp is None:
        kp = math.sqrt((1 - k) * (1 + k))
    a, b = 1.0, kp
    for _ in range(64):
        if abs(a - b) <= 1e-16 * a:
            break
        a, b = 0.5 * (a + b), math.sqrt(a * b)
    return math.pi / (2 * a)


def _pole_check(u, p: float, shifted: bool, what: str):
    # zeros of sn sit at 2*pi*m + 2ipn, poles at 2*pi*m + (2n+1)ip
    u = np.asarray(u, dtype=complex)
    off = p if shifted else 0.0
    y = (u.imag - off) / (2 * p)
    x = u.real / (2 * math.pi)
    dy = (y - np.round(y)) * 2 * p
    dx = (x - np.round(x)) * 2 * math.pi
    if np.any(np.hypot(dx, dy) < POLE_TOL):
        raise PoleError(f"{what} evaluated at a pole")


_KINDS = ("sn", "cn", "dn", "cs", "ds", "ns")


def jacobi(u, nome, kind: str):
    """Jacobi function g(u|pi,p): quarter periods pi and ip, nome exp(-p).

    Accepts scalars or arrays; returns complex values.
    """
    if kind not in _KINDS:
        raise ValueError(f"unknown Jacobi kind {kind!r}")
    p = _as_p(nome)
    q = math.exp(-p)
    scalar = np.ndim(u) == 0
    u = np.asarray(u, dtype=complex)
    if kind in ("cs", "ds", "ns"):
        _pole_check(u, p, False, kind)
    else:
        _pole_check(u, p, True, kind)
    t2, t3, t4 = theta_constants(q)
    th1, th2, th3, th4 = _theta_all(u / 2, q)
    if kind == "sn":
        out = (t3 / t2) * th1 / th4
    elif kind == "cn":
        out = (t4 / t2) * th2 / th4
    elif kind == "dn":
        out = (t4 / t3) * th3 / th4
    elif kind == "cs":
        out = (t4 / t3) * th2 / th1
    elif kind == "ds":
        out = (t2 * t4 / t3 ** 2) * th3 / th1
    else:
        out = (t2 / t3) * th4 / th1
    return complex(out) if scalar else out


def jacobi_set(u, nome):
    """(sn, cn, dn) of g(u|pi,p) from one theta evaluation, plus the parameters.
    No pole check: callers check the kinds they form."""
    ep = elliptic_params(nome)
    q = math.exp(-ep.p)
    t2, t3, t4 = theta_constants(q)
    th1, th2, th3, th4 = _theta_all(np.asarray(u, dtype=complex) / 2, q)
    return (t3 / t2) * th1 / th4, (t4 / t2) * th2 / th4, (t4 / t3) * th3 / th4, ep


def jacobi_deriv(u, nome, kind: str):
    """d/du of g(u|pi,p) (includes the factor alpha)."""
    ep = elliptic_params(nome)
    sn = jacobi(u, ep.p, "sn")
    cn = jacobi(u, ep.p, "cn")
    dn = jacobi(u, ep.p, "dn")
    if kind == "sn":
        d = cn * dn
    elif kind == "cn":
        d = -sn * dn
    elif kind == "dn":
        d = -ep.k ** 2 * sn * cn
    elif kind == "cs":
        d = -dn / sn ** 2
    elif kind == "ds":
        d = -cn / sn ** 2
    elif kind == "ns":
        d = -cn * dn / sn ** 2
    else:
        raise ValueError(f"unknown Jacobi kind {kind!r}")
    return ep.alpha * d


@dataclass(frozen=True)
class WeierstrassLattice:
    """Rectangular lattice with half-periods pi and ip."""
    p: float
    omega1: float = field(init=False, default=math.pi)
    omega2: complex = field(init=False)
    g2: float = field(init=False)
    g3: float = field(init=False)

    def __post_init__(self):
        if not self.p > 0:
            raise DomainError("lattice needs p > 0")
        object.__setattr__(self, "omega2", 1j * self.p)
        q2 = math.exp(-2 * self.p)
        s3 = s5 = 0.0
        for n in range(1, 2000):
            x = q2 ** n
            t = x / (1 - x)
            s3 += n ** 3 * t
            s5 += n ** 5 * t
            if n ** 5 * t < 1e-18 * (1 + s5):
                break
        object.__setattr__(self, "g2", (1 + 240 * s3) / 12)
        object.__setattr__(self, "g3", (1 - 504 * s5) / 216)


def weierstrass(z, lattice: WeierstrassLattice | float):
    """Return (wp(z), wp'(z)) on the lattice generated by 2pi and 2ip."""
    if not isinstance(lattice, WeierstrassLattice):
        lattice = WeierstrassLattice(float(lattice))
    p = lattice.p
    scalar = np.ndim(z) == 0
    z = np.asarray(z, dtype=complex)
    # reduce into |Re| <= pi, |Im| <= p
    x = z.real - 2 * math.pi * np.round(z.real / (2 * math.pi))
    y = z.imag - 2 * p * np.round(z.imag / (2 * p))
    if np.any(np.hypot(x, y) < POLE_TOL):
        raise PoleError("Weierstrass function evaluated at a lattice point")
    w = x + 1j * y
    q2 = math.exp(-2 * p)
    s = 1 / np.sin(w / 2)
    wp = 0.25 * s * s
    dwp = -0.25 * s * s / np.tan(w / 2)
    s1 = 0.0
    for n in range(1, 4000):
        x_n = q2 ** n
        c = n * x_n / (1 - x_n)
        s1 += c
        grow = math.exp(n * (np.max(np.abs(y), initial=0) - 2 * p))
        wp = wp - 2 * c * np.cos(n * w)
        dwp = dwp + 2 * c * n * np.sin(n * w)
        if n * n * grow < 1e-18 * (1 + np.max(np.abs(wp), initial=0)):
            break
    wp = wp - (1.0 / 12 - 2 * s1)
    if scalar:
        return complex(wp), complex(dwp)
    return wp, dwp


def _schwarz_terms(z, p: float, deriv: bool, strict: bool = True):
    z = np.asarray(z, dtype=complex)
    if np.any(np.abs(z - 1) < 1e-10):
        raise PoleError("Schwarz kernel evaluated at its pole z = 1")
    if strict and np.any(np.abs(z) < math.exp(-p) * (1 - 1e-9)) or np.any(np.abs(z) > 1 + 1e-9):
        raise DomainError("Schwarz kernel argument outside the annulus")
    if deriv:
        out = 2 / (1 - z) ** 2
    else:
        out = (1 + z) / (1 - z)
    # pair k is bounded by ~ 4 e^{2p} e^{-2pk} / (1 - e^{-2p}) for e^{-2p} < |z| < e^{2p}
    K = int(math.ceil((math.log(4 / -math.expm1(-2 * p)) + 2 * p + 41.5) / (2 * p)))
    K = max(1, min(K, 200000))
    zz = z[..., None]
    for lo in range(1, K + 1, 256):
        u = np.exp(-2 * p * np.arange(lo, min(lo + 256, K + 1)))
        if deriv:
            pair = 2 * u / (1 - zz * u) ** 2 + 2 * u / (zz - u) ** 2
        else:
            pair = 2 * zz * u / (1 - zz * u) - 2 * u / (zz - u)
        out = out + pair.sum(axis=-1)
    return out


def schwarz_kernel(z, p: float):
    """Annulus Schwarz kernel S^p(z), principal value with k, -k paired."""
    r = _schwarz_terms(z, p, False)
    return complex(r) if np.ndim(z) == 0 else r


def schwarz_kernel_deriv(z, p: float):
    r = _schwarz_terms(z, p, True)
    return complex(r) if np.ndim(z) == 0 else r


def loewner_kernel(z, theta, p: float, strict: bool = True):
    """V^p_theta(z) = z * S^p(z e^{-i theta}). With strict=False points slightly
    outside the annulus are accepted (the kernel is analytic for e^{-2p} < |z| < e^{2p})."""
    z = np.asarray(z, dtype=complex)
    rot = np.exp(-1j * np.asarray(theta, dtype=float))
    r = z * _schwarz_terms(z * rot, p, False, strict)
    return complex(r) if r.ndim == 0 else r


def loewner_kernel_deriv(z, theta, p: float, strict: bool = True):
    """d/dz V^p_theta(z)."""
    z = np.asarray(z, dtype=complex)
    rot = np.exp(-1j * np.asarray(theta, dtype=float))
    w = z * rot
    r = _schwarz_terms(w, p, False, strict) + w * _schwarz_terms(w, p, True, strict)
    return complex(r) if r.ndim == 0 else r


def probe(fn: str, p: float, z: complex, theta: float = 0.0):
    """Evaluate a named kernel; backs the hidden specfun-probe command."""
    if fn in _KINDS:
        return jacobi(z, p, fn)
    if fn == "wp":
        return weierstrass(z, p)[0]
    if fn == "dwp":
        return weierstrass(z, p)[1]
    if fn == "schwarz":
        return schwarz_kernel(z, p)
    if fn == "loewner":
        return loewner_kernel(z, theta, p)
    if fn == "theta":
        return theta_constants(math.exp(-p))
    if fn == "K":
        return elliptic_params(p).K
    raise ValueError(f"unknown function {fn!r}")
