import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sle_ising_lab import partition as pt
from sle_ising_lab import specfun as sf

H = pt.MarkedSetup.halfplane


def random_skew(rng, n, cplx=False):
    A = rng.normal(size=(n, n))
    if cplx:
        A = A + 1j * rng.normal(size=(n, n))
    return A - A.T


def test_pfaffian_2x2():
    assert pt.pfaffian(np.array([[0, 2.5], [-2.5, 0]])) == 2.5


def test_pfaffian_odd_rejected():
    with pytest.raises(pt.ContractError):
        pt.pfaffian(np.zeros((3, 3)))
    with pytest.raises(pt.ContractError):
        pt.pfaffian_cofactor([[0]])


def test_pfaffian_exact_4x4():
    a = [Fraction(i) for i in range(4)]
    A = [[Fraction(0) if m == r else 1 / (a[m] - a[r]) for r in range(4)] for m in range(4)]
    assert pt.pfaffian_cofactor(A) == Fraction(13, 12)
    Af = np.array([[float(x) for x in row] for row in A])
    assert abs(pt.pfaffian(Af) - 13 / 12) < 1e-14


def test_pfaffian_vs_cofactor_and_det():
    rng = np.random.default_rng(5)
    for i in range(100):
        n = 2 * (1 + i % 3)
        A = random_skew(rng, n, cplx=i % 2 == 1)
        pf = pt.pfaffian(A)
        ref = pt.pfaffian_cofactor(A.tolist())
        assert abs(pf - ref) <= 1e-11 * max(1, abs(ref))
        det = np.linalg.det(A)
        assert abs(pf * pf - det) <= 1e-10 * max(1, abs(det))


@settings(max_examples=50)
@given(st.integers(0, 2 ** 31), st.integers(1, 4))
def test_pfaffian_swap_negates(seed, half):
    rng = np.random.default_rng(seed)
    n = 2 * half
    A = random_skew(rng, n)
    m, r = rng.choice(n, 2, replace=False)
    perm = np.arange(n)
    perm[[m, r]] = perm[[r, m]]
    B = A[np.ix_(perm, perm)]
    assert abs(pt.pfaffian(B) + pt.pfaffian(A)) < 1e-12 * max(1, abs(pt.pfaffian(A)))


def test_skew_from_upper_is_exact():
    U = np.arange(16.0).reshape(4, 4)
    A = pt.skew_from_upper(U)
    assert np.array_equal(A, -A.T)
    assert A[0, 1] == 1 and A[1, 0] == -1


def test_obs_halfplane():
    assert pt.obs_halfplane(0, 1j) == -1j
    assert pt.obs_halfplane(0, 2, 2) == 1 / 8
    a, z, h = 0.3, 0.4 + 0.9j, 1e-5
    fd = (pt.obs_halfplane(a + h, z) - pt.obs_halfplane(a - h, z)) / (2 * h)
    assert abs(fd - pt.obs_halfplane(a, z, 1)) < 1e-8
    with pytest.raises(sf.PoleError):
        pt.obs_halfplane(1.0, 1.0)


@pytest.mark.parametrize("cover", ["trivial", "nontrivial"])
@pytest.mark.parametrize("p", [0.5, 1.0, 3.0])
def test_obs_strip_functional_equations(cover, p):
    theta = 0.4
    d = 1e-4 * np.exp(0.7j)
    assert abs(d * pt.obs_strip(p, theta, theta + d, cover) - 1) < 1e-3
    x = np.linspace(0.6, 6.0, 20)
    assert np.max(np.abs(pt.obs_strip(p, theta, x, cover).imag)) < 1e-10
    top = pt.obs_strip(p, theta, x + 1j * p, cover)
    assert np.max(np.abs(top.real)) < 1e-10 * np.max(np.abs(top))
    w = x + 0.3j * p
    sign = -1 if cover == "trivial" else 1
    diff = pt.obs_strip(p, theta, w + 2 * math.pi, cover) - sign * pt.obs_strip(p, theta, w, cover)
    assert np.max(np.abs(diff)) < 1e-10
    swap = pt.obs_strip(p, x, theta, cover) + pt.obs_strip(p, theta, x, cover)
    assert np.max(np.abs(swap)) < 1e-10


def test_obs_strip_examples():
    assert abs(pt.obs_strip(1, 0, 0.7).imag) < 1e-12
    assert abs(pt.obs_strip(20, 0, 1) - 1 / (2 * math.sin(0.5))) < 1e-5
    with pytest.raises(pt.ContractError):
        pt.obs_strip(1, 0, 1, "other")


def test_halfplane_Z_and_drift():
    assert pt.partition_Z(H([0, 1])) == -1
    assert abs(pt.partition_Z(H([0, 1, 2, 3])) - 13 / 12) < 1e-14
    assert abs(pt.drift_D(H([0, 1])) - 3) < 1e-10
    assert abs(pt.drift_D(H([0, 1, 2, 3])) - 71 / 26) < 1e-10
    assert abs(pt.drift_fd(H([0, 1])) - 3) < 1e-5
    assert abs(pt.drift_fd(H([0, 1, 2, 3])) - 71 / 26) < 1e-5


def test_halfplane_drift_cofactor_oracle():
    # dPf/da1 = 71/72 from the exact cofactor expansion
    a = [Fraction(i) for i in range(4)]
    d = [[Fraction(0)] * 4 for _ in range(4)]
    for r in range(1, 4):
        d[0][r] = -1 / (a[0] - a[r]) ** 2
        d[r][0] = -d[0][r]
    # Pf is linear in row/column 1, so dPf = Pf with row 1 replaced by its derivative
    A = [[Fraction(0) if m == r else 1 / (a[m] - a[r]) for r in range(4)] for m in range(4)]
    B = [row[:] for row in A]
    for r in range(4):
        B[0][r] = d[0][r]
        B[r][0] = d[r][0]
    assert pt.pfaffian_cofactor(B) == Fraction(71, 72)


@settings(max_examples=40)
@given(st.lists(st.floats(-5, 5), min_size=4, max_size=4, unique=True),
       st.floats(0.1, 10), st.floats(-3, 3))
def test_halfplane_covariance(xs, lam, c):
    xs = sorted(xs)
    if min(np.diff(xs)) < 1e-2:
        return
    z0 = pt.partition_Z(H(xs))
    z1 = pt.partition_Z(H([lam * x + c for x in xs]))
    assert abs(z1 * lam ** 2 - z0) < 1e-10 * max(1, abs(z0))


def test_annulus_two_point_examples():
    s = pt.MarkedSetup.annulus(1.0, [0.0, math.pi])
    ds = sf.jacobi(math.pi, 1.0, "ds").real
    assert abs(pt.partition_Z(s) - ds) < 1e-12
    assert abs(ds - sf.elliptic_params(1.0).kp) < 1e-12
    s = pt.MarkedSetup.annulus(1.0, [0.0, math.pi], ["outer", "inner"])
    assert abs(pt.drift_D(s)) < 1e-8


@pytest.mark.parametrize("sides", [
    ("outer", "outer", "outer", "outer"),
    ("outer", "outer", "outer", "inner"),
    ("outer", "outer", "inner", "inner"),
])
def test_annulus_drift_matches_difference(sides):
    s = pt.MarkedSetup.annulus(1.0, [0.3, 2.0, 3.5, 5.0], sides)
    assert abs(pt.drift_D(s) - pt.drift_fd(s)) < 1e-5


def test_annulus_drift_reflection():
    s = pt.MarkedSetup.annulus(1.3, [0.4, 2.1], ["outer", "outer"])
    m = pt.MarkedSetup.annulus(1.3, [-0.4, -2.1], ["outer", "outer"])
    assert abs(pt.drift_D(s) + pt.drift_D(m)) < 1e-12


def test_annulus_parity_contract():
    # with an even total the two per-circle counts always share parity
    pt.partition_Z(pt.MarkedSetup.annulus(1.0, [0, 1, 2, 3], ["outer", "inner", "inner", "inner"]))
    with pytest.raises(pt.ContractError):
        pt.partition_Z(pt.MarkedSetup.annulus(1.0, [0, 1, 2]))
    with pytest.raises(pt.ContractError):
        pt.MarkedSetup.annulus(1.0, [0, 2 * math.pi])


@pytest.mark.parametrize("c", [1e-3, 0.5, 7.0])
def test_drift_scale_invariance(c):
    for s in (H([0, 1, 2, 3]), pt.MarkedSetup.annulus(1.0, [0.3, 2.0, 3.5, 5.0])):
        assert abs(pt.drift_D(s, entry_scale=c) - pt.drift_D(s)) < 1e-10


def test_near_zero_is_an_error(monkeypatch):
    A = pt.skew_from_upper(np.array([[0, 1, 1, 0], [0, 0, 0, 1], [0, 0, 0, 1], [0, 0, 0, 0.0]]))
    assert abs(pt.pfaffian(A)) < 1e-15
    monkeypatch.setattr(pt, "entry_matrix", lambda s, with_deriv=False: (A, A))
    with pytest.raises(pt.NearZeroError):
        pt.drift_D(H([0, 1, 2, 3]))


def test_radial_grid():
    for p in (1.0, 2.0):
        for d in np.linspace(0.05, 2 * math.pi - 0.05, 25):
            for rb in np.linspace(0.1 * p, 0.9 * p, 5):
                z = pt.radial_Z(p, 0.0, d, rb)
                assert isinstance(z, float) and z > 0
        s = pt.MarkedSetup.radial(p, 0.2, 0.2 + math.pi, 0.5 * p)
        assert abs(pt.drift_D(s)) < 1e-8
        s = pt.MarkedSetup.radial(p, 0.2, 1.3, 0.5 * p)
        assert abs(pt.drift_D(s) - pt.drift_fd(s)) < 1e-5


def test_radial_drift_single_sign():
    signs = set()
    for p in (1.0, 2.0):
        for d in np.linspace(0.1, math.pi - 0.1, 15):
            for rb in (0.2 * p, 0.5 * p, 0.8 * p):
                D = pt.drift_D(pt.MarkedSetup.radial(p, 0.0, d, rb))
                Dm = pt.drift_D(pt.MarkedSetup.radial(p, 0.0, -d, rb))
                assert abs(D + Dm) < 1e-9
                signs.add(np.sign(D))
    assert len(signs) == 1


def test_radial_contract():
    with pytest.raises(pt.ContractError):
        pt.MarkedSetup.radial(1.0, 0, 1, 1.5)


def test_multipoint_single_source():
    s = H([0.5])
    z = 0.2 + 0.7j
    assert abs(pt.multipoint_observable(s, z) - 1 / (z - 0.5)) < 1e-15


def test_multipoint_residues():
    s = H([0, 1, 2])
    P = pt.pfaffian_coefficients(s)
    for idx, a in enumerate(s.points):
        r = 1e-4
        ang = np.linspace(0, 2 * math.pi, 64, endpoint=False)
        zz = a + r * np.exp(1j * ang)
        res = np.mean(pt.multipoint_observable(s, zz) * r * np.exp(1j * ang))
        assert abs(res - P[idx]) < 1e-10
    z = 1e-7 + 1e-7j
    assert abs(z * pt.multipoint_observable(s, z) - P[0]) < 1e-6


def test_multipoint_last_point_recovers_Z():
    s = H([0, 1, 2])
    assert abs(pt.multipoint_observable(s, 3.0) - pt.partition_Z(H([0, 1, 2, 3]))) < 1e-13


def test_martingale_ratio_closed_form():
    z = 0.5 + 0.5j
    assert abs(pt.martingale_ratio(H([0, 1]), z) - (1 / z) / 1.0) < 1e-15


@pytest.mark.parametrize("setup", [
    H([0, 0.7, 1.5, 3.0]),
    pt.MarkedSetup.annulus(1.0, [0.0, 1.3, 2.9, 4.4]),
    pt.MarkedSetup.annulus(1.0, [0.0, 2.0]),
])
def test_martingale_ratio_homogeneous(setup):
    z = 0.4 + 0.3j
    a = pt.martingale_ratio(setup, z)
    b = pt.martingale_ratio(setup, z, scale=3.7)
    assert abs(a - b) < 1e-12 * max(1, abs(a))


def test_radial_Z_cancellation_near_boundary():
    # both parts of the radicand are ~1e-8 here; rounding must not read as a branch problem
    z = pt.radial_Z(0.5, 0.0, 0.05, 0.05)
    assert isinstance(z, float) and z > 0
    with pytest.raises(pt.BranchError):
        pt.radial_Z(1.0, 0.0, 1.0, 0.5 + 0.1j)
