import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sle_ising_lab import specfun as sf

# 40-term direct series at q = 0.1, summed in 40-digit arithmetic
THETA_Q01 = (1.1359306015682802058, 1.2002000020000002, 0.8001999980000002)


def rel(a, b):
    return abs(a - b) / max(1.0, abs(b))


def test_theta_q_zero():
    assert sf.theta_constants(0.0) == (0.0, 1.0, 1.0)


def test_theta_q01_frozen():
    got = sf.theta_constants(0.1)
    for g, ref in zip(got, THETA_Q01):
        assert abs(g - ref) < 1e-15


@pytest.mark.parametrize("q", [1.0, 1.5, -0.1])
def test_theta_domain(q):
    with pytest.raises(sf.DomainError):
        sf.theta_constants(q)


@given(st.floats(0.001, 0.95))
def test_jacobi_identity_thetas(q):
    t2, t3, t4 = sf.theta_constants(q)
    assert abs(t2 ** 4 + t4 ** 4 - t3 ** 4) <= 1e-12 * t3 ** 4
    assert t3 >= 1 and t2 >= 0 and t4 >= 0


@pytest.mark.parametrize("p", [0.5, 1.0, 3.0, 8.0])
def test_elliptic_params(p):
    ep = sf.elliptic_params(p)
    assert abs(ep.k ** 2 + ep.kp ** 2 - 1) < 1e-12
    assert rel(sf.agm_K(ep.k, ep.kp), ep.K) < 1e-10
    assert abs(ep.alpha * math.pi - ep.K) < 1e-12


def test_agm_limits():
    assert abs(sf.agm_K(1e-9) - math.pi / 2) < 1e-13
    s = math.sqrt(0.5)
    assert abs(sf.agm_K(s) - sf.agm_K(s, s)) < 1e-12
    with pytest.raises(sf.DomainError):
        sf.agm_K(1.0)


def test_lemniscatic_point():
    # k = k' happens at q = e^-pi, where K'/K = p/pi = 1
    ep = sf.elliptic_params(math.pi)
    assert abs(ep.k - ep.kp) < 1e-12
    assert abs(sf.agm_K(ep.k, ep.kp) - sf.agm_K(ep.kp, ep.k)) < 1e-12


@pytest.mark.parametrize("p", [0.3, 1.0, 5.0])
def test_jacobi_special_values(p):
    assert abs(sf.jacobi(0.0, p, "dn") - 1) < 1e-14
    assert abs(sf.jacobi(math.pi, p, "cs")) < 1e-14


def test_ds_degenerates_to_cosecant():
    assert abs(sf.jacobi(1.0, 20, "ds") - 1 / math.sin(0.5)) < 1e-6


@pytest.mark.parametrize("p", [0.5, 1.0, 3.0])
def test_jacobi_pythagoras(p):
    rng = np.random.default_rng(1)
    u = rng.uniform(-10, 10, 1000)
    k = sf.elliptic_params(p).k
    sn, cn, dn = (sf.jacobi(u, p, kind) for kind in ("sn", "cn", "dn"))
    assert np.max(np.abs(sn ** 2 + cn ** 2 - 1)) < 1e-12
    assert np.max(np.abs(dn ** 2 + k ** 2 * sn ** 2 - 1)) < 1e-12


@pytest.mark.parametrize("p", [0.5, 1.0, 3.0])
@pytest.mark.parametrize("kind,sign", [("dn", 1), ("cn", -1), ("cs", 1), ("ds", -1)])
def test_quarter_period_periodicity(p, kind, sign):
    rng = np.random.default_rng(2)
    u = rng.uniform(-3, 3, 50) + 1j * rng.uniform(0.05, p - 0.05, 50)
    a = sf.jacobi(u + 2 * math.pi, p, kind)
    b = sign * sf.jacobi(u, p, kind)
    assert np.max(np.abs(a - b) / np.maximum(1, np.abs(b))) < 1e-11


def test_pole_guard():
    with pytest.raises(sf.PoleError):
        sf.jacobi(0.0, 1.0, "ds")
    with pytest.raises(sf.PoleError):
        sf.jacobi(1j * 1.0, 1.0, "sn")


def test_jacobi_derivative_matches_difference():
    u, h = 0.7 + 0.2j, 1e-6
    for kind in ("sn", "cn", "dn", "cs", "ds"):
        fd = (sf.jacobi(u + h, 1.0, kind) - sf.jacobi(u - h, 1.0, kind)) / (2 * h)
        assert abs(fd - sf.jacobi_deriv(u, 1.0, kind)) < 1e-8


@pytest.mark.parametrize("p", [0.7, 1.0, 2.5])
def test_weierstrass_ode(p):
    lat = sf.WeierstrassLattice(p)
    rng = np.random.default_rng(3)
    z = rng.uniform(-math.pi, math.pi, 100) + 1j * rng.uniform(-p, p, 100)
    wp, dwp = sf.weierstrass(z, lat)
    lhs = dwp ** 2
    rhs = 4 * wp ** 3 - lat.g2 * wp - lat.g3
    assert np.max(np.abs(lhs - rhs) / np.maximum(1, np.abs(lhs))) < 1e-9


@pytest.mark.parametrize("p", [0.7, 1.0, 2.5])
def test_weierstrass_symmetries(p):
    assert abs(sf.weierstrass(math.pi, p)[1]) < 1e-12
    rng = np.random.default_rng(4)
    z = rng.uniform(-3, 3, 50) + 1j * rng.uniform(-p, p, 50)
    wp, dwp = sf.weierstrass(z, p)
    wm, dwm = sf.weierstrass(-z, p)
    assert np.max(np.abs(wp - wm) / np.maximum(1, np.abs(wp))) < 1e-11
    assert np.max(np.abs(dwp + dwm) / np.maximum(1, np.abs(dwp))) < 1e-11
    for shift in (2 * math.pi, 2j * p):
        ws, _ = sf.weierstrass(z + shift, p)
        assert np.max(np.abs(ws - wp) / np.maximum(1, np.abs(wp))) < 1e-10


def test_weierstrass_pole():
    with pytest.raises(sf.PoleError):
        sf.weierstrass(2 * math.pi + 2j, 1.0)


@pytest.mark.parametrize("p", [0.5, 1.0, 3.0])
def test_schwarz_boundary_values(p):
    assert abs(sf.schwarz_kernel(-1.0, p)) < 1e-14
    phi = np.linspace(0.1, 2 * math.pi - 0.1, 40)
    outer = sf.schwarz_kernel(np.exp(1j * phi), p)
    assert np.max(np.abs(outer.real)) < 1e-10
    inner = sf.schwarz_kernel(math.exp(-p) * np.exp(1j * phi), p)
    assert np.ptp(inner.real) < 1e-10


def test_schwarz_near_pole():
    z = np.exp(1j * 2 * math.asin(5e-4))  # |z - 1| = 1e-3 on the circle
    assert abs(abs(z - 1) - 1e-3) < 1e-12
    assert abs(sf.schwarz_kernel(z, 1.0) - (1 + z) / (1 - z)) < 1e-2
    with pytest.raises(sf.PoleError):
        sf.schwarz_kernel(1 + 1e-11, 1.0)


@settings(max_examples=50)
@given(st.floats(0.4, 0.95), st.floats(-3, 3), st.floats(0.3, 2.0))
def test_schwarz_conjugation(r, phi, p):
    z = max(r, math.exp(-p) * 1.01) * np.exp(1j * phi)
    if abs(z - 1) < 1e-3:
        return
    assert abs(sf.schwarz_kernel(z.conjugate(), p) - sf.schwarz_kernel(z, p).conjugate()) < 1e-12


@settings(max_examples=50)
@given(st.floats(0.5, 0.95), st.floats(-3, 3), st.floats(-3, 3))
def test_loewner_rotation(r, phi, theta):
    p = 1.0
    z = r * np.exp(1j * phi)
    if abs(z * np.exp(-1j * theta) - 1) < 1e-3:
        return
    a = sf.loewner_kernel(z, theta, p)
    b = np.exp(1j * theta) * sf.loewner_kernel(z * np.exp(-1j * theta), 0.0, p)
    assert abs(a - b) < 1e-12


def test_loewner_kernel_values():
    assert abs(sf.loewner_kernel(-1.0, 0.0, 1.0)) < 1e-14
    theta = 0.8
    e = np.exp(1j * theta)
    z = e * (1 - 1e-2 * np.exp(0.3j))
    lead = 2 * e * e / (e - z)
    assert abs(sf.loewner_kernel(z, theta, 1.0) / lead - 1) < 0.1


def test_loewner_derivative():
    z, h = 0.6 + 0.3j, 1e-6
    fd = (sf.loewner_kernel(z + h, 0.4, 1.0) - sf.loewner_kernel(z - h, 0.4, 1.0)) / (2 * h)
    assert abs(fd - sf.loewner_kernel_deriv(z, 0.4, 1.0)) < 1e-7


def test_probe_dispatch():
    assert sf.probe("dn", 1.0, 0.0) == sf.jacobi(0.0, 1.0, "dn")
    with pytest.raises(ValueError):
        sf.probe("nope", 1.0, 0.0)
