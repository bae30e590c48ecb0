import math

import numpy as np
import pytest


from sle_ising_lab import loewner as lw
from sle_ising_lab.ising.domain import square_ring


def brownian_path(seed, n=200, T=1.0, kappa=3.0):
    rng = np.random.default_rng(seed)
    t = np.linspace(0, T, n + 1)
    xi = np.concatenate([[0.0], np.cumsum(rng.normal(0, math.sqrt(kappa * T / n), n))])
    return lw.DrivingPath(t, xi)


def test_driving_path_contract():
    with pytest.raises(lw.LoewnerError):
        lw.DrivingPath([0.0, 0.0], [0.0, 1.0])
    with pytest.raises(lw.LoewnerError):
        lw.DrivingPath([0.1, 0.2], [0.0, 1.0])
    p = lw.DrivingPath([0, 1, 2], [0, 100, 100])
    assert list(p.jump_flags()) == [0]


def test_chordal_identity_at_zero():
    p = lw.DrivingPath([0.0], [0.0])
    assert lw.chordal_evolve(p, 2j)[-1] == 2j


def test_chordal_slit_closed_form():
    # dg = 2/(g - xi) dt with xi = 0: g_t(z) = sqrt(z^2 + 4t)
    p = lw.DrivingPath.constant(0.0, 0.5, 7)
    assert abs(lw.chordal_evolve(p, 2j)[-1] - 1j * math.sqrt(2)) < 1e-12
    z = 0.3 + 1.1j
    assert abs(lw.chordal_evolve(p, z)[-1] - np.sqrt(z * z + 2.0)) < 1e-12


def test_chordal_semigroup():
    a = lw.chordal_evolve(lw.DrivingPath.constant(0.4, 0.3, 3), 1 + 1j)[-1]
    b = lw.chordal_evolve(lw.DrivingPath.constant(0.4, 0.5, 5), a)[-1]
    c = lw.chordal_evolve(lw.DrivingPath.constant(0.4, 0.8, 8), 1 + 1j)[-1]
    assert abs(b - c) < 1e-10


def test_chordal_monotone_and_normalized():
    path = brownian_path(1, 100, 0.5)
    traj = lw.chordal_evolve(path, np.array([0.5 + 2j, -1 + 3j]))
    assert np.all(np.diff(traj.imag, axis=0) <= 1e-15)
    far = lw.chordal_evolve(path, 1e6 + 1e6j)[-1]
    assert abs(far - (1e6 + 1e6j)) < 1e-5


def test_chordal_swallowed():
    p = lw.DrivingPath.constant(0.0, 1.0, 10)
    with pytest.raises(lw.SwallowedError) as e:
        lw.chordal_evolve(p, 1j)
    assert abs(e.value.time - 0.3) < 1e-9  # sqrt(-1 + 4t) hits R at t = 1/4, caught at the next sample


def test_zipper_vertical_segment():
    h = 1.7
    path = lw.extract_driver(np.linspace(0, h, 50) * 1j)
    assert np.all(path.xi == 0)
    assert abs(path.t[-1] - h * h / 4) < 1e-12
    assert abs(lw.half_plane_capacity(path) - h * h / 2) < 1e-12


def test_zipper_reflection():
    tips = lw.reconstruct_tips(brownian_path(2, 60))
    a = lw.extract_driver(tips)
    b = lw.extract_driver(-tips.conjugate())
    assert np.array_equal(a.xi, -b.xi) and np.array_equal(a.t, b.t)


@pytest.mark.parametrize("seed", range(3))
def test_zipper_round_trip(seed):
    path = brownian_path(seed)
    tips = lw.reconstruct_tips(path)
    assert tips.size == 201
    ex = lw.extract_driver(tips)
    assert np.max(np.abs(lw.reconstruct_tips(ex) - tips)) <= 5e-2
    assert np.all(np.diff(ex.t) > 0)


def test_zipper_smooth_driver():
    # constant drift driver xi(t) = t, sampled finely; extraction recovers it
    t = np.linspace(0, 0.5, 501)
    path = lw.DrivingPath(t, t.copy())
    ex = lw.extract_driver(lw.reconstruct_tips(path))
    assert np.max(np.abs(ex.xi - path.xi)) < 1e-3


def test_zipper_degenerate_point_skipped():
    path = lw.extract_driver(np.array([0, 1j, 2j, 1.5j + 1e-16, 3j]))
    assert path.flags and path.flags[0][0] == "degenerate"


def test_zipper_rejects_bad_curves():
    with pytest.raises(lw.LoewnerError):
        lw.extract_driver(np.array([1j, 2j]))


def test_annulus_inner_circle_preserved():
    p = 1.0
    path = lw.DrivingPath.constant(0.0, 0.4, 40, "annulus")
    z = math.exp(-p) * np.exp(1j * np.array([0.5, 2.0, 4.0]))
    traj = lw.annulus_evolve(path, p, z)
    r = np.abs(traj)
    expect = np.exp(-(p - path.t))[:, None]
    assert np.max(np.abs(r - expect)) < 1e-6


def test_annulus_rotation_equivariance():
    p = 1.2
    rng = np.random.default_rng(3)
    t = np.linspace(0, 0.2, 21)
    th = np.concatenate([[0.0], np.cumsum(rng.normal(0, 0.1, 20))])
    z = 0.6 * np.exp(2.0j)
    c = 0.7
    a = lw.annulus_evolve(lw.DrivingPath(t, th), p, z)
    b = lw.annulus_evolve(lw.DrivingPath(t, th + c), p, z * np.exp(1j * c))
    assert np.max(np.abs(b - a * np.exp(1j * c))) < 1e-10


def test_annulus_short_time_matches_chordal():
    # near e^{i theta}, w = -i log(z e^{-i theta}) sends the flow to dw = 2/w + O(w)
    p, dt = 1.0, 1e-4
    z = np.exp(0.05j) * (1 - 0.05)
    g = lw.annulus_evolve(lw.DrivingPath([0.0, dt], [0.0, 0.0]), p, z)[-1]
    w0 = -1j * np.log(z)
    w1 = -1j * np.log(g)
    chordal = np.sqrt(w0 * w0 + 4 * dt) - w0
    assert abs((w1 - w0) - chordal) / abs(chordal) < 1e-2


def test_annulus_modulus_exhausted():
    with pytest.raises(lw.ModulusExhaustedError):
        lw.annulus_evolve(lw.DrivingPath.constant(0.0, 1.0, 4), 1.0, 0.5)


def test_radial_normalization():
    rng = np.random.default_rng(5)
    t = np.linspace(0, 0.5, 51)
    th = np.concatenate([[0.0], np.cumsum(rng.normal(0, 0.1, 50))])
    path = lw.DrivingPath(t, th)
    assert np.all(lw.radial_evolve(path, 0.0) == 0)
    h = 1e-4
    g = lw.radial_evolve(path, np.array([h, -h]), max_dt=1e-3)
    deriv = (g[:, 0] - g[:, 1]) / (2 * h)
    assert np.max(np.abs(np.abs(deriv) - np.exp(t))) < 1e-8 * np.exp(t[-1]) * 10


def test_radial_tip_near_driver():
    # constant driver: the slit from 1 toward 0, points just off it get pushed to the circle
    path = lw.DrivingPath.constant(0.0, 0.05, 50)
    g = lw.radial_evolve(path, np.array([0.5, 0.3j]))
    assert np.all(np.abs(g[-1]) < 1)
    with pytest.raises(lw.SwallowedError):
        lw.radial_evolve(path, 0.999 + 1e-9j)


def test_rect_map_symmetries():
    assert lw.rect_to_halfplane(1.0, 0.5) == 0
    assert lw.rect_to_halfplane(2.0, 1.0) == 0
    # the square's diagonal symmetry: reflection across x = 1/2 is w -> -conj(w)
    z = np.array([0.2 + 0.3j, 0.1 + 0.8j, 0.45 + 0.05j])
    a = lw.rect_to_halfplane(1.0, z)
    b = lw.rect_to_halfplane(1.0, 1 - z.conjugate())
    assert np.max(np.abs(a + b.conjugate())) < 1e-8
    with pytest.raises(lw.LoewnerError):
        lw.rect_to_halfplane(20.0, 0.5)


@pytest.mark.parametrize("L", [0.5, 1.0, 3.0])
def test_rect_map_boundary(L):
    x = np.linspace(0, L, 101)
    w = lw.rect_to_halfplane(L, x)
    assert np.all(np.diff(w.real) > 0) and np.max(np.abs(w.imag)) < 1e-10
    c = lw.rect_corners(L)
    assert abs(lw.rect_to_halfplane(L, L + 1j) - c[2]) < 1e-8
    assert abs(lw.rect_to_halfplane(L, 1j) - c[3]) < 1e-8


def test_rect_map_cauchy_riemann():
    L, h = 1.5, 1e-5
    for z in (0.3 + 0.4j, 1.1 + 0.7j, 0.75 + 0.5j):
        fx = (lw.rect_to_halfplane(L, z + h) - lw.rect_to_halfplane(L, z - h)) / (2 * h)
        fy = (lw.rect_to_halfplane(L, z + 1j * h) - lw.rect_to_halfplane(L, z - 1j * h)) / (2 * h)
        assert abs(fy - 1j * fx) < 1e-6 * max(1, abs(fx))
        assert lw.rect_to_halfplane(L, z).imag > 0


def test_grid_modulus_round_annulus_convergence():
    ps = [lw.grid_modulus_map(lw.round_annulus_faces(n, n / 2, 1.0)).p for n in (16, 32, 64)]
    err = [abs(p - math.log(2)) for p in ps]
    assert err[0] > err[1] > err[2]
    assert abs(ps[2] - ps[1]) < abs(ps[1] - ps[0])


def test_grid_modulus_rotation_and_energy():
    d = square_ring(12, 4)
    m = lw.grid_modulus_map(d)
    r = lw.grid_modulus_map([(-j, i) for i, j in d.faces])
    assert abs(m.p - r.p) < 1e-12
    assert abs(m.energy - m.dual_energy) < 1e-10
    w = m.face_image()
    assert np.all(np.abs(w) <= 1) and np.all(np.abs(w) >= math.exp(-m.p))


def test_grid_modulus_conjugate_period():
    d = square_ring(10, 2)
    m = lw.grid_modulus_map(d)
    assert abs(m.p * m.energy - 2 * math.pi) < 1e-12
    a = m.angle_at((0, 0))
    b = m.angle_at((5, 0))
    assert 0 < (b - a) % (2 * math.pi) < math.pi


def test_grid_modulus_topology():
    with pytest.raises(lw.TopologyError):
        lw.grid_modulus_map([(i, j) for i in range(3) for j in range(3)])


def test_crosscut_shapes():
    c = lw.Crosscut.semicircle(0.0, 2.0, 16)
    assert np.allclose(np.abs(c.points), 2) and np.all(c.points.imag > 0)
    r = lw.Crosscut.radial_segment(1.0, 0.5)
    assert np.all(np.abs(r.points) < 1)


def test_zipper_skips_steps_below_time_resolution():
    # the second point maps to height ~1e-9: its capacity step vanishes next to t = 1/4
    path = lw.extract_driver(np.array([0, 1j, 5 + 1e-9j, 2j]))
    assert path.t.size == 3 and np.all(np.diff(path.t) > 0)
    assert ("degenerate", 2) in path.flags
