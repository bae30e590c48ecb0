import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from sle_ising_lab import loewner as lw
from sle_ising_lab import partition as pt
from sle_ising_lab import slesim as ss


def increasing(n):
    return st.lists(st.floats(-5, 5), min_size=n, max_size=n, unique=True).map(sorted).filter(
        lambda x: min(np.diff(x)) > 0.05)


@settings(max_examples=40, deadline=None)
@given(st.one_of(increasing(2), increasing(4), increasing(6)))
def test_fast_drift_matches_partition(x):
    g = ss._HalfPlane(len(x) - 1, ss.EPS_Z)
    D = g.drift(0.0, x[0], np.array(x[1:], dtype=complex))
    assert abs(D - pt.drift_D(pt.MarkedSetup.halfplane(x))) <= 1e-10 * max(1, abs(D))


def test_initial_drift_two_points():
    run = ss.simulate_chordal(pt.MarkedSetup.halfplane([0, 1]), dt=1e-6, T=1e-6, seed=0)
    assert run.stop_reason == "budget"
    assert ss._HalfPlane(1, ss.EPS_Z).drift(0, 0.0, np.array([1.0 + 0j])) == 3.0


@pytest.mark.parametrize("a,b", [(0.5, 1.0), (0.3, 2.0)])
def test_reflection_antisymmetry(a, b):
    g = ss._HalfPlane(3, ss.EPS_Z)
    left = g.drift(0, -b, np.array([-a, a, b], dtype=complex))
    right = g.drift(0, b, np.array([-b, -a, a], dtype=complex))
    assert abs(left + right) < 1e-12


def test_spectators_follow_loewner_flow():
    setup = pt.MarkedSetup.halfplane([0, 1, 2, 4])
    run = ss.simulate_chordal(setup, dt=1e-3, T=0.05, seed=4, probes=[0.5 + 1j],
                              checkpoints=[0.05])
    g = lw.chordal_evolve(run.path, np.array([1, 2, 4, 0.5 + 1j], dtype=complex))
    assert np.max(np.abs(g[:, :3].real - run.flow)) < 1e-12
    assert abs(g[-1, 3] - run.snapshots[-1]["probes"][0]) < 1e-12


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_spectator_order_preserved(seed):
    run = ss.simulate_chordal(pt.MarkedSetup.halfplane([0, 0.5, 1.5, 3]), dt=1e-3, T=0.3, seed=seed)
    x = np.column_stack([run.path.xi, run.flow])
    assert np.all(np.diff(x, axis=1) > 0)


def test_gap_stop_and_pairing():
    run = ss.simulate_chordal(pt.MarkedSetup.halfplane([0, 0.05]), dt=1e-3, T=5, seed=1)
    assert run.stop_reason == "gap" and run.pairing == 1
    assert run.path.stop_reason == "gap"
    assert run.flow[-1, 0] - run.path.xi[-1] < ss.EPS_GAP


def test_crosscut_stop_keeps_hull_inside():
    R = 0.3
    for seed in range(5):
        run = ss.simulate_chordal(pt.MarkedSetup.halfplane([0, 1e6]), dt=1e-4, T=1.0, seed=seed,
                                  crosscut=lw.Crosscut.semicircle(0, R, 128))
        assert run.stop_reason == "crosscut"
        tips = lw.reconstruct_tips(run.path)
        assert np.max(np.abs(tips)) < R * 1.1


def test_driftless_variance_law():
    runs = ss.simulate_many(ss.simulate_chordal, pt.MarkedSetup.halfplane([0, 1e6]), 1000, seed=7,
                            dt=0.025, T=0.25, drift=False)
    x = np.array([r.path.xi[-1] for r in runs])
    se = x.std(ddof=1) / math.sqrt(x.size)
    assert abs(x.mean()) <= 3 * se
    v = x * x / 0.25
    assert abs(v.mean() - 3) <= 3 * v.std(ddof=1) / math.sqrt(v.size)


def test_far_spectator_is_pure_sle3():
    runs = ss.simulate_many(ss.simulate_chordal, pt.MarkedSetup.halfplane([0, 1e6]), 2000, seed=2,
                            dt=0.02, T=0.2)
    x = np.array([r.path.xi[-1] for r in runs])
    v = x * x / 0.2
    assert abs(v.mean() - 3) <= 3 * v.std(ddof=1) / math.sqrt(v.size)


def test_adaptive_halving():
    run = ss.simulate_chordal(pt.MarkedSetup.halfplane([0, 0.02]), dt=1e-2, T=0.01, seed=0)
    dt = np.diff(run.path.t)
    assert dt[0] < 1e-4  # |D| = 150 forces dt < 0.03 / D^2
    D = 3 / 0.02
    assert D * dt[0] <= 0.1 * math.sqrt(3 * dt[0])


def test_checkpoints_hit_exactly():
    run = ss.simulate_chordal(pt.MarkedSetup.halfplane([0, 1]), dt=3e-3, T=0.1, seed=0,
                              checkpoints=[0, 0.025, 0.05, 0.1], probes=[2j])
    assert [s["at"] for s in run.snapshots] == [0, 0.025, 0.05, 0.1]
    assert all(s["t"] == s["at"] for s in run.snapshots)
    assert 0.025 in run.path.t and 0.05 in run.path.t


def test_renumbering_never_rescues_in_h():
    g = ss._HalfPlane(3, 10.0)  # threshold above every |Z|/scale
    with pytest.raises(pt.NearZeroError):
        g.drift(0, 0.0, np.array([1, 2, 3], dtype=complex))
    D, perm = ss._renumber_rescue(g, 0, 0.0, np.array([1, 2, 3], dtype=complex))
    assert D is None
    run = ss.simulate_chordal(pt.MarkedSetup.halfplane([0, 1, 2, 3]), eps_z=10.0, T=0.1)
    assert run.stop_reason == "z-small" and run.path.t.size == 1


def test_contracts():
    with pytest.raises(ss.SlesimError):
        ss.simulate_chordal(pt.MarkedSetup.annulus(1.0, [0, 1]))
    with pytest.raises(ss.SlesimError):
        ss.simulate_annulus(pt.MarkedSetup.annulus(1.0, [0, 1]), T=1.0)
    with pytest.raises(ss.SlesimError):
        ss.simulate_chordal(pt.MarkedSetup.halfplane([0, 1]), probes=[1.0])


def test_determinism_and_job_independence():
    s = pt.MarkedSetup.halfplane([0, 1])
    a = ss.simulate_many(ss.simulate_chordal, s, 6, seed=5, dt=0.01, T=0.1)
    b = ss.simulate_many(ss.simulate_chordal, s, 6, seed=5, jobs=2, dt=0.01, T=0.1)
    for x, y in zip(a, b):
        assert np.array_equal(x.path.xi, y.path.xi) and np.array_equal(x.path.t, y.path.t)


# ------------------------------------------------------------------ annulus

def test_annulus_drift_zero_at_antipode():
    g = ss._Annulus(1.3, ("outer", "inner"), ss.EPS_Z)
    assert abs(g.drift(0, 0.4, np.array([0.4 + math.pi + 1.3j]))) < 1e-8
    g = ss._Annulus(1.3, ("outer", "outer"), ss.EPS_Z)
    assert abs(g.drift(0, 0.4, np.array([0.4 + math.pi]))) < 1e-8


@pytest.mark.parametrize("th", [(0.3, 1.7), (-0.5, 2.5), (1.0, 1.2)])
def test_annulus_drift_parity(th):
    g = ss._Annulus(0.9, ("outer", "outer"), ss.EPS_Z)
    a = g.drift(0, th[0], np.array([th[1] + 0j]))
    b = g.drift(0, -th[0], np.array([-th[1] + 0j]))
    assert abs(a + b) < 1e-12 * max(1, abs(a))


def test_annulus_flow_matches_solver():
    setup = pt.MarkedSetup.annulus(1.0, [0, 2.0])
    z = np.array([0.6j, 0.5 * np.exp(-2j)])
    run = ss.simulate_annulus(setup, dt=1e-4, T=0.05, seed=3, probes=z, checkpoints=[0.05])
    g = lw.annulus_evolve(run.path, 1.0, z, max_dt=1e-5)[-1]
    got = np.exp(1j * run.snapshots[-1]["probes"])
    assert np.max(np.abs(g - got)) < 1e-4
    # boundary spectator stays on the outer circle
    assert np.all(np.isfinite(run.flow))


def test_annulus_inner_spectator_on_inner_circle():
    setup = pt.MarkedSetup.annulus(1.0, [0, 2.0], ["outer", "inner"])
    run = ss.simulate_annulus(setup, dt=1e-3, T=0.2, seed=1)
    assert run.final[1][0].imag == pytest.approx(1.0 - run.stop_time, abs=1e-12)


def test_annulus_log_derivative_matches_finite_difference():
    setup = pt.MarkedSetup.annulus(1.0, [0, 2.5])
    z0, h = 0.55 * np.exp(1.5j), 1e-6
    run = ss.simulate_annulus(setup, dt=1e-3, T=0.1, seed=8, probes=[z0, z0 * np.exp(1j * h)],
                              checkpoints=[0.1])
    s = run.snapshots[-1]
    fd = (s["probes"][1] - s["probes"][0]) / h
    assert abs(np.exp(s["L_probes"][0]) - fd) < 1e-4


def test_annulus_large_p_matches_chordal():
    # at short times and small separations the p = 20 annulus is locally the half-plane
    n, T, d = 500, 0.01, 0.5
    a = ss.simulate_many(ss.simulate_annulus, pt.MarkedSetup.annulus(20.0, [0, d]), n, seed=1,
                         dt=5e-4, T=T)
    c = ss.simulate_many(ss.simulate_chordal, pt.MarkedSetup.halfplane([0, d]), n, seed=2,
                         dt=5e-4, T=T)
    xa = [r.path.xi[-1] for r in a if r.stop_reason == "budget"]
    xc = [r.path.xi[-1] for r in c if r.stop_reason == "budget"]
    assert stats.ks_2samp(xa, xc).pvalue > 1e-3


# ------------------------------------------------------------------- radial

def test_radial_disc_driftless():
    runs = ss.simulate_many(ss.simulate_radial, 1.0, 2000, seed=3, dt=0.05, T=0.5)
    x = np.array([r.path.xi[-1] for r in runs]) - 1.0
    assert abs(x.mean()) <= 3 * x.std(ddof=1) / math.sqrt(x.size)
    v = x * x / 0.5
    assert abs(v.mean() - 3) <= 3 * v.std(ddof=1) / math.sqrt(v.size)


def test_radial_annulus_symmetric_point():
    g = ss._Annulus(1.0, ("outer", "inner"), ss.EPS_Z, radial=True)
    assert abs(g.drift(0, 0.2, np.array([0.2 + math.pi + 0.5j]))) < 1e-8


def test_radial_annulus_drift_sign():
    g = ss._Annulus(1.5, ("outer", "inner"), ss.EPS_Z, radial=True)
    signs = set()
    for d in np.linspace(0.2, math.pi - 0.2, 8):
        for rho in (0.3, 0.75, 1.2):
            signs.add(np.sign(g.drift(0, 0.0, np.array([d + 1j * rho]))))
            assert np.sign(g.drift(0, 0.0, np.array([-d + 1j * rho]))) == -np.sign(
                g.drift(0, 0.0, np.array([d + 1j * rho])))
    assert len(signs) == 1


def test_radial_annulus_runs():
    run = ss.simulate_radial(pt.MarkedSetup.radial(1.0, 0.0, 2.0, 0.5), dt=1e-3, T=0.1, seed=2)
    assert run.flow.shape[1] == 2
    assert np.all((run.flow[:, 1] > 0) & (run.flow[:, 1] < 1.0 - run.path.t + 1e-9))


# --------------------------------------------------------------- martingale

def test_martingale_k1_halfplane():
    rep = ss.martingale_test(pt.MarkedSetup.halfplane([0, 2]), [2.5 + 1.5j, -2 + 1j], n_paths=400,
                             T=0.1, dt=2e-3, seed=11, crosscut=lw.Crosscut.semicircle(0, 1.6))
    assert np.max(np.abs(rep.mean[0] - rep.M0)) < 1e-14  # t = 0 checkpoint is exact
    assert rep.passed, rep.as_dict()
    d = rep.as_dict()
    assert d["verdict"] == "pass" and len(d["metrics"]) == 8


def test_martingale_ratio_k1_closed_form():
    # M_0 = (a2 - a1)/(z - a1) for k = 1
    s = pt.MarkedSetup.halfplane([0.0, 2.0])
    M = ss.observable_ratio(s, 0, 0.0, [2.0], np.array([1 + 1j]), np.zeros(1), 0.0)
    assert abs(M[0] - 2 / (1 + 1j)) < 1e-14


# -------------------------------------------------------------- connection

def test_cross_ratio_limits():
    assert ss.cross_ratio(0, 1e-6, 1, 2) < 1e-5
    assert ss.cross_ratio(0, 1, 1 + 1e-6, 2) > 1 - 1e-5
    # cyclic order through infinity
    assert 0 < ss.cross_ratio(2, -2, -1, 1) < 1


def test_connection_fusion_limit():
    est = ss.connection_probability(pt.MarkedSetup.halfplane([0, 0.01, 1, 2]), n=100, dt=1e-2, seed=1)
    assert est.n == 100 and est.estimate > 0.95


def test_connection_mirror_symmetry():
    s = pt.MarkedSetup.halfplane([-2, -1, 1, 2])
    left = ss.connection_probability(s, n=150, dt=1e-2, seed=1)
    right = ss.connection_probability(s, n=150, dt=1e-2, seed=2, start=3)
    # from -2 the next point is -1; from 2 the mirror partner 1 is the previous point
    q = 1 - right.estimate
    assert abs(left.estimate - q) <= 3 * math.hypot(left.stderr, right.stderr)


def test_pairing_estimate_stderr():
    e = ss.pairing_estimate([1, 1, 3, None])
    assert e.n == 3 and e.unresolved == 1 and e.estimate == pytest.approx(2 / 3)
    d = e.as_dict(reference=0.5, ref_stderr=0.0)
    assert d["verdict"] == "pass"


@pytest.mark.parametrize("pts", [[0, 1], [-2, -1, 1, 2]])
def test_compiled_path_matches_python(pts):
    s = pt.MarkedSetup.halfplane(pts)
    for seed in range(3):
        a = ss.simulate_chordal(s, seed=seed, dt=1e-2, T=50, fast=True)
        b = ss.simulate_chordal(s, seed=seed, dt=1e-2, T=50, fast=False)
        assert a.stop_reason == b.stop_reason and a.pairing == b.pairing
        assert np.array_equal(a.path.t, b.path.t)
        assert np.max(np.abs(a.path.xi - b.path.xi)) < 1e-12
        assert np.max(np.abs(a.flow - b.flow)) < 1e-12


@pytest.mark.parametrize("p,th", [(0.6, [0.8, 3.4]), (2.0, [0.0, math.pi])])
def test_compiled_annulus_matches_python(p, th):
    s = pt.MarkedSetup.annulus(p, th)
    for seed in range(2):
        a = ss.simulate_annulus(s, seed=seed, dt=2e-3, T=0.95 * p, fast=True)
        b = ss.simulate_annulus(s, seed=seed, dt=2e-3, T=0.95 * p, fast=False)
        assert a.stop_reason == b.stop_reason and a.path.t.size == b.path.t.size
        assert np.max(np.abs(a.path.t - b.path.t)) < 1e-12
        assert np.max(np.abs(a.path.xi - b.path.xi)) < 1e-9
        assert np.max(np.abs(a.flow - b.flow)) < 1e-9


@pytest.mark.parametrize("u", [0.4, 2.0, 4.0])
def test_compiled_annulus_drift(u):
    for p in (0.4, 1.4):
        ref = pt.drift_D(pt.MarkedSetup.annulus(p, [0.1, 0.1 + u]))
        assert abs(ss._ann2_drift(u, p) - ref) < 1e-9 * max(1, abs(ref))
