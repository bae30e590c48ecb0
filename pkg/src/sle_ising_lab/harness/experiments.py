"""Lattice-versus-SLE experiments, the SLE self-consistency and exact suites,
and the driver-file comparison."""

from __future__ import annotations

import datetime as _dt
import math
import subprocess
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import loewner as lw
from .. import partition as pt
from .. import slesim as ss
from ..ising import domain as dm
from ..ising import montecarlo as mc
from ..ising import observable as ob
from . import io, plot
from .stats import Metric, Report, diff_metric, ks, mean_se, proportion_se, var_se, welch

KINDS = ("driver-compare", "connection-compare", "annulus-hitting", "martingale-suite", "exact-suite")
SIDES = {"E": 0, "N": 1, "W": 2, "S": 3}

_COMMON = {"kind", "seed", "out", "jobs"}
_LATTICE = {"sizes", "samples", "marks", "chains", "thermalize", "decorrelate", "rule", "save_curves"}
_KEYS = {
    "driver-compare": _COMMON | _LATTICE | {"checkpoints", "kappa"},
    "connection-compare": _COMMON | _LATTICE | {"sle_samples", "dt", "T"},
    "annulus-hitting": _COMMON | _LATTICE | {"hole", "sle_samples", "dt", "time_fraction"},
    "martingale-suite": _COMMON | {"setups", "driftless", "negative_control"},
    "exact-suite": _COMMON | {"domains", "steps"},
}
_DEFAULT_MARKS = {
    "driver-compare": [["S", 0.5], ["N", 0.5]],
    "connection-compare": [["S", 0.25], ["S", 0.75], ["N", 0.75], ["N", 0.25]],
    "annulus-hitting": [["S", 0.5], ["N", 0.75]],
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0
    out: str | None = None

    @classmethod
    def from_dict(cls, data: dict, base: Path | None = None) -> "ExperimentConfig":
        if not isinstance(data, dict) or "kind" not in data:
            raise ConfigError("config must be an object with a 'kind'")
        kind = data["kind"]
        if kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {kind!r}; expected one of {', '.join(KINDS)}")
        extra = set(data) - _KEYS[kind]
        if extra:
            raise ConfigError(f"unknown keys for {kind}: {', '.join(sorted(extra))}")
        params = {k: v for k, v in data.items() if k not in _COMMON}
        for key in ("samples", "sle_samples", "chains", "thermalize", "decorrelate", "hole", "steps"):
            if key in params and (not isinstance(params[key], int) or params[key] < 1):
                raise ConfigError(f"{key} must be a positive integer")
        if "sizes" in params:
            s = params["sizes"]
            if not isinstance(s, list) or not s or any(not isinstance(L, int) or L < 4 for L in s):
                raise ConfigError("sizes must be a non-empty list of integers >= 4")
        if "checkpoints" in params:
            c = params["checkpoints"]
            if not isinstance(c, list) or not c or any(not isinstance(x, (int, float)) or x <= 0 for x in c):
                raise ConfigError("checkpoints must be a non-empty list of positive times")
        if "marks" in params:
            for m in params["marks"]:
                if (not isinstance(m, list) or len(m) != 2 or m[0] not in SIDES
                        or not isinstance(m[1], (int, float)) or not 0 < m[1] < 1):
                    raise ConfigError(f"mark {m!r} must be [side in NESW, fraction in (0, 1)]")
        if "domains" in params:
            root = base or Path(".")
            paths = []
            for p in params["domains"]:
                q = Path(p) if Path(p).is_absolute() else root / p
                if not q.exists():
                    raise ConfigError(f"domain file {p} does not exist")
                paths.append(str(q))
            params["domains"] = paths
        seed = data.get("seed", 0)
        if not isinstance(seed, int) or seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        return cls(kind, params, seed, data.get("out"))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(io.read_json(path), Path(path).parent)


# ---------------------------------------------------------------- geometry

def box_marks(W: int, H: int, marks) -> list:
    """Stubs on the sides of the box [0, W] x [0, H]; [side, fraction] each."""
    out = []
    for side, f in marks:
        d = SIDES[side]
        if side in "SN":
            x = int(round(f * W))
            v = (x, 0 if side == "S" else H)
        else:
            y = int(round(f * H))
            v = (W if side == "E" else 0, y)
        if v in ((0, 0), (W, 0), (0, H), (W, H)):
            raise ConfigError(f"mark {side} {f} falls on a corner")
        out.append(dm.Stub(v, d))
    return out


def rect_image(z, W: float, H: float) -> np.ndarray:
    """Points of a W x H face box mapped to H. The conformal rectangle is
    [-1/2, W + 1/2] x [-1/2, H + 1/2], whose sides pass through the stub midpoints,
    so every lattice vertex is interior. The top midpoint (the pole) goes to inf."""
    z = (np.asarray(z, dtype=complex) + (0.5 + 0.5j)) / (H + 1)
    aspect = (W + 1) / (H + 1)
    top = np.abs(z - complex(aspect / 2, 1.0)) < 1e-9
    w = np.full(z.shape, np.inf, dtype=complex)
    if np.any(~top):
        with np.errstate(all="ignore"):
            w[~top] = lw.rect_to_halfplane(aspect, z[~top])
    return np.where(np.isfinite(w) & (np.abs(w) < 1e8), w, np.inf)


def curve_to_halfplane(points, W: float, H: float) -> np.ndarray:
    """Lattice polyline (starting at a marked stub midpoint) mapped to H; points
    outside the conformal rectangle or sent to infinity drop out."""
    pts = np.asarray(points, dtype=float)
    inside = ((pts[:, 0] >= -0.5) & (pts[:, 0] <= W + 0.5)
              & (pts[:, 1] >= -0.5) & (pts[:, 1] <= H + 0.5))
    w = rect_image(pts[inside, 0] + 1j * pts[inside, 1], W, H)
    return w[np.isfinite(w)]


def mark_images(stubs, W: int, H: int) -> np.ndarray:
    w = rect_image([complex(*s.midpoint) for s in stubs], W, H)
    return np.where(np.isfinite(w), w.real, np.inf)


def halfplane_drift(a1: float, spec) -> float:
    """3 d/da1 log|Pf(1/(a_m - a_r))| for points in any cyclic order."""
    pts = np.concatenate([[a1], np.asarray(spec, float)])
    n = pts.size
    diff = pts[:, None] - pts[None, :]
    np.fill_diagonal(diff, 1.0)
    A = 1.0 / diff
    np.fill_diagonal(A, 0.0)
    dA = np.zeros((n, n))
    dA[0, 1:] = -A[0, 1:] ** 2
    dA[1:, 0] = A[1:, 0] ** 2
    return 1.5 * float(np.trace(np.linalg.solve(A, dA)))


def integrated_drift(path: lw.DrivingPath, spectators, checkpoints) -> np.ndarray:
    """int_0^t D(xi_s, g_s(a_m)) ds along the path's own flow, at each checkpoint."""
    spectators = np.asarray(spectators, float)
    out = np.zeros(len(checkpoints))
    if spectators.size == 0:
        return out
    if (spectators.size + 1) % 2:
        raise ConfigError("the finite marked points must be even in number")
    flow = lw.chordal_evolve(path, spectators.astype(complex)).real
    dts, xis = path.steps
    D = np.array([halfplane_drift(xis[j], flow[j]) for j in range(dts.size)])
    cum = np.concatenate([[0.0], np.cumsum(D * dts)])
    for i, t in enumerate(checkpoints):
        k = min(int(np.searchsorted(path.t, t, side="left")), path.t.size - 1)
        out[i] = cum[k]
    return out


def winding(poly, c) -> int:
    z = np.asarray(poly, complex) - c
    z = np.concatenate([z, z[:1]])
    return int(round(float(np.sum(np.angle(z[1:] / z[:-1]))) / (2 * math.pi)))


def _perimeter_s(v, W, H) -> float:
    x, y = v
    if y == 0:
        return x
    if x == W:
        return W + y
    if y == H:
        return W + H + (W - x)
    return 2 * W + H + (H - y)


def _perimeter_point(s, W, H) -> complex:
    s %= 2 * (W + H)
    if s <= W:
        return complex(s, 0)
    if s <= W + H:
        return complex(W, s - W)
    if s <= 2 * W + H:
        return complex(W - (s - W - H), H)
    return complex(0, H - (s - 2 * W - H))


def hole_separated(points, a1: dm.Stub, a2: dm.Stub, W: int, H: int, centre: complex) -> int:
    """1 if the interface from a1 to a2 separates the hole from the ccw outer
    arc a1 -> a2, i.e. the hole is not enclosed by the interface plus that arc."""
    pts = np.asarray(points, float)[1:-1]
    curve = pts[:, 0] + 1j * pts[:, 1]
    s1, s2 = _perimeter_s(a1.v, W, H), _perimeter_s(a2.v, W, H)
    span = (s2 - s1) % (2 * (W + H))
    back = [_perimeter_point(s1 + span - u, W, H) for u in np.linspace(0, span, int(span) + 1)]
    return int(winding(np.concatenate([curve, back]), centre) == 0)


def annulus_side(run: ss.SdeRun):
    """Same statistic for an annulus SLE run: at the gap stop the collapsing arc
    is the ccw one from the tip to a2 iff the hole is separated from it."""
    if run.stop_reason != "gap":
        return None
    a1, spec = run.final
    gap = (float(spec[0].real) - a1) % (2 * math.pi)
    return int(gap < math.pi)


# ---------------------------------------------------------------- sampling

def _lattice_defaults(cfg: ExperimentConfig, L: int) -> dict:
    p = cfg.params
    return {"chains": p.get("chains", 32), "thermalize": p.get("thermalize", L * L),
            "decorrelate": p.get("decorrelate", max(1, L * L // 4)), "rule": p.get("rule", "left")}


def sample_lattice(domain, samples, seed, jobs, opts):
    return mc.sample_interfaces(domain, samples, seed=seed, chains=opts["chains"],
                                thermalize=opts["thermalize"], decorrelate=opts["decorrelate"],
                                rule=opts["rule"], jobs=jobs)


def chain_index(samples: int, chains: int):
    """Chain of each record, mirroring the split used by sample_interfaces."""
    chains = max(1, min(chains, samples))
    per = [samples // chains + (1 if c < samples % chains else 0) for c in range(chains)]
    return np.repeat(np.arange(chains), per)


def batch_se(values, chains) -> float:
    """Standard error from chain means (robust to within-chain correlation)."""
    values = np.asarray(values, float)
    ids = np.unique(chains)
    if ids.size < 4:
        return math.nan
    means = np.array([values[chains == c].mean() for c in ids])
    w = np.array([np.sum(chains == c) for c in ids], float)
    mu = np.sum(w * means) / w.sum()
    return float(math.sqrt(np.sum(w * w * (means - mu) ** 2) / (w.sum() ** 2) * ids.size / (ids.size - 1)))


def _conservative(se_iid, se_batch):
    return se_iid if not math.isfinite(se_batch) else max(se_iid, se_batch)


# ------------------------------------------------------------ experiments

def driver_compare(cfg: ExperimentConfig, out: Path | None, jobs: int = 1) -> Report:
    p = cfg.params
    sizes = p.get("sizes", [64])
    n = p.get("samples", 1000)
    ck = [float(c) for c in p.get("checkpoints", [0.05, 0.1])]
    kappa = float(p.get("kappa", 3.0))
    rep = Report("driver-compare", info={"checkpoints": ck, "samples": n, "sizes": sizes})
    for L in sizes:
        opts = _lattice_defaults(cfg, L)
        stubs = box_marks(L, L, p.get("marks", _DEFAULT_MARKS["driver-compare"]))
        if len(stubs) % 2:
            raise ConfigError("driver-compare needs an even number of marks")
        dom = dm.rectangle(L, L, stubs)
        recs = sample_lattice(dom, n, cfg.seed, jobs, opts)
        chains = chain_index(n, opts["chains"])
        imgs = mark_images(stubs, L, L)
        spectators = imgs[1:][np.isfinite(imgs[1:])]
        paths, drifts, kept, bad = {}, [], [], 0
        for rec, ch in zip(recs, chains):
            try:
                path = lw.extract_driver(curve_to_halfplane(rec["points"], L, L))
            except lw.LoewnerError:
                bad += 1
                continue
            paths[rec["id"]] = path
            drifts.append(integrated_drift(path, spectators, ck))
            kept.append(ch)
        kept = np.array(kept)
        drifts = np.array(drifts).reshape(len(paths), len(ck))
        info = {"extracted": len(paths), "failed": bad, **opts}
        for i, t in enumerate(ck):
            ids = [k for k, path in enumerate(paths.values()) if path.t[-1] >= t]
            xs = np.array([list(paths.values())[k].value_at(t) for k in ids])
            ch = kept[ids]
            v, sv = var_se(xs)
            sq = (xs - xs.mean()) ** 2
            sv = _conservative(sv, batch_se(sq, ch))
            rep.add(Metric(f"L{L}/var_over_t@{t:g}", v / t, kappa, sv / t, effect=kappa,
                           extra={"n": len(ids)}))
            resid = xs - drifts[ids, i]
            m, sm = mean_se(xs)
            _, sr = mean_se(resid)
            sr = _conservative(sr, batch_se(resid, ch))
            rep.add(Metric(f"L{L}/mean@{t:g}", m, float(drifts[ids, i].mean()), sr,
                           effect=math.sqrt(kappa * t), extra={"n": len(ids)}))
        rep.info[f"L{L}"] = info
        if out is not None:
            io.write_drivers(out / f"drivers_L{L}.csv", sorted(paths.items()))
            if p.get("save_curves", True):
                io.write_curves(out / f"curves_L{L}.json", recs)
            plot.variance_ramp(paths, out / f"variance_ramp_L{L}.svg", kappa)
            plot.driver_traces(dict(list(paths.items())[:20]), out / f"driver_traces_L{L}.svg")
            plot.lattice_curve(recs[:5], out / f"lattice_curve_L{L}.svg", sorted(dom.faces))
    return rep


def connection_compare(cfg: ExperimentConfig, out: Path | None, jobs: int = 1) -> Report:
    p = cfg.params
    sizes = p.get("sizes", [64])
    n = p.get("samples", 1000)
    rep = Report("connection-compare", info={"samples": n, "sizes": sizes})
    for L in sizes:
        opts = _lattice_defaults(cfg, L)
        stubs = box_marks(L, L, p.get("marks", _DEFAULT_MARKS["connection-compare"]))
        if len(stubs) != 4:
            raise ConfigError("connection-compare needs 4 marks")
        imgs = mark_images(stubs, L, L)
        if not np.all(np.isfinite(imgs)):
            raise ConfigError("a mark maps to infinity; move it off the top midpoint")
        order = np.argsort(imgs)
        setup = pt.MarkedSetup.halfplane(imgs[order])
        start = int(np.nonzero(order == 0)[0][0])
        if int(order[(start + 1) % 4]) != 1:
            raise ConfigError("marks must be listed in counterclockwise order")
        dom = dm.rectangle(L, L, stubs)
        recs = sample_lattice(dom, n, cfg.seed, jobs, opts)
        chains = chain_index(n, opts["chains"])
        hits = np.array([int(r["end"] == 1) for r in recs])
        q_lat, se_lat = proportion_se(int(hits.sum()), hits.size)
        se_lat = _conservative(se_lat, batch_se(hits, chains))
        est = ss.connection_probability(setup, n=p.get("sle_samples", 2000), seed=cfg.seed,
                                        dt=p.get("dt", 1e-3), T=p.get("T", 200.0), start=start, jobs=jobs)
        rep.add(Metric(f"L{L}/P(a1-a2)", q_lat, est.estimate, math.hypot(se_lat, est.stderr),
                       effect=min(est.estimate, 1 - est.estimate),
                       extra={"lattice_stderr": se_lat, "sle_stderr": est.stderr,
                              "sle": est.as_dict(), "images": imgs.tolist()}))
        if out is not None and p.get("save_curves", True):
            io.write_curves(out / f"curves_L{L}.json", recs)
            plot.lattice_curve(recs[:5], out / f"lattice_curve_L{L}.svg", sorted(dom.faces))
    return rep


def annulus_hitting(cfg: ExperimentConfig, out: Path | None, jobs: int = 1) -> Report:
    p = cfg.params
    sizes = p.get("sizes", [64])
    n = p.get("samples", 1000)
    rep = Report("annulus-hitting", info={"samples": n, "sizes": sizes})
    for L in sizes:
        opts = _lattice_defaults(cfg, L)
        hole = p.get("hole", L // 2)
        stubs = box_marks(L, L, p.get("marks", _DEFAULT_MARKS["annulus-hitting"]))
        if len(stubs) != 2:
            raise ConfigError("annulus-hitting needs 2 marks on the outer boundary")
        dom = dm.square_ring(L, hole, stubs)
        mm = lw.grid_modulus_map(dom)
        thetas = [mm.angle_at(s.v) for s in stubs]
        recs = sample_lattice(dom, n, cfg.seed, jobs, opts)
        chains = chain_index(n, opts["chains"])
        centre = complex(L / 2, L / 2)
        hits = np.array([hole_separated(r["points"], stubs[0], stubs[1], L, L, centre) for r in recs])
        q_lat, se_lat = proportion_se(int(hits.sum()), hits.size)
        se_lat = _conservative(se_lat, batch_se(hits, chains))
        setup = pt.MarkedSetup.annulus(mm.p, thetas)
        runs = ss.simulate_many(ss.simulate_annulus, setup, p.get("sle_samples", 1000), cfg.seed, jobs,
                                dt=p.get("dt", 2e-3), T=p.get("time_fraction", 0.95) * mm.p)
        sides = [annulus_side(r) for r in runs]
        res = [s for s in sides if s is not None]
        q_sle, se_sle = proportion_se(sum(res), len(res))
        rep.add(Metric(f"L{L}/P(hole separated)", q_lat, q_sle, math.hypot(se_lat, se_sle),
                       effect=min(q_sle, 1 - q_sle),
                       extra={"lattice_stderr": se_lat, "sle_stderr": se_sle, "p": mm.p,
                              "thetas": thetas, "sle_unresolved": len(sides) - len(res)}))
        if out is not None:
            io.write_drivers(out / f"sle_drivers_L{L}.csv", [(i, r.path) for i, r in enumerate(runs)])
            io.write_flows(out / f"sle_flows_L{L}.csv",
                           [row for i, r in enumerate(runs) for row in r.flow_rows(i)])
            if p.get("save_curves", True):
                io.write_curves(out / f"curves_L{L}.json", recs)
                plot.lattice_curve(recs[:5], out / f"lattice_curve_L{L}.svg", sorted(dom.faces))
    return rep


DEFAULT_MARTINGALE_SETUPS = [
    {"name": "half-plane k=1", "geometry": "half-plane", "points": [0.0, 2.0],
     "probes": [[2.5, 1.5], [-2.0, 1.0], [0.5, 2.5]], "crosscut": {"semicircle": [0.0, 1.6]}},
    {"name": "half-plane k=2", "geometry": "half-plane", "points": [0.0, 2.0, 3.0, 5.0],
     "probes": [[2.5, 1.5], [-2.0, 1.0], [0.5, 2.5]], "crosscut": {"semicircle": [0.0, 1.6]}},
    {"name": "annulus 2-point", "geometry": "annulus", "p": 2.0, "points": [0.0, math.pi],
     "probes": [[0.5, 2.0], [0.4, -2.5], [0.8, 2.8]], "probe_form": "polar", "T": 0.1,
     "crosscut": {"boundary_arc": [0.0, 0.85]}},
]


def _setup_from(spec) -> tuple:
    if spec["geometry"] == "half-plane":
        setup = pt.MarkedSetup.halfplane(spec["points"])
    elif spec["geometry"] == "annulus":
        setup = pt.MarkedSetup.annulus(spec["p"], spec["points"], spec.get("sides"))
    else:
        raise ConfigError("martingale setups are half-plane or annulus")
    if spec.get("probe_form") == "polar":
        probes = [r * complex(math.cos(a), math.sin(a)) for r, a in spec["probes"]]
    else:
        probes = [complex(x, y) for x, y in spec["probes"]]
    cc = spec.get("crosscut")
    cross = None
    if cc:
        (name, args), = cc.items()
        cross = {"semicircle": lw.Crosscut.semicircle, "boundary_arc": lw.Crosscut.boundary_arc}[name](*args)
    return setup, probes, cross


def driftless_drivers(samples, seed, t, kappa=3.0, dt=1e-3, jobs=1):
    """Driftless chordal drivers up to time t (far spectator, no drift)."""
    setup = pt.MarkedSetup.halfplane([0.0, 1e6])
    return ss.simulate_many(ss.simulate_chordal, setup, samples, seed, jobs, dt=dt, T=t,
                            kappa=kappa, drift=False)


def martingale_suite(cfg: ExperimentConfig, out: Path | None, jobs: int = 1) -> Report:
    p = cfg.params
    rep = Report("martingale-suite")
    dl = p.get("driftless", {"samples": 5000, "t": 0.25})
    if dl:
        t = float(dl.get("t", 0.25))
        runs = driftless_drivers(dl.get("samples", 5000), cfg.seed, t, jobs=jobs)
        xs = np.array([r.path.value_at(t) for r in runs])
        v, sv = var_se(xs)
        rep.add(Metric(f"driftless/var_over_t@{t:g}", v / t, 3.0, sv / t, effect=3.0))
        m, sm = mean_se(xs)
        rep.add(Metric(f"driftless/mean@{t:g}", m, 0.0, sm, effect=math.sqrt(3 * t)))
        if p.get("negative_control", True):
            neg = driftless_drivers(dl.get("samples", 5000), cfg.seed + 1, t, kappa=4.0, jobs=jobs)
            ys = np.array([r.path.value_at(t) for r in neg])
            mt = diff_metric(f"negative-control/var-diff@{t:g}", xs, ys, "var")
            mt.expect_fail = True
            rep.add(mt)
            if out is not None:
                io.write_drivers(out / "driftless_k4.csv", [(i, r.path) for i, r in enumerate(neg)])
        if out is not None:
            io.write_drivers(out / "driftless_k3.csv", [(i, r.path) for i, r in enumerate(runs)])
            plot.variance_ramp({i: r.path for i, r in enumerate(runs[:500])}, out / "variance_ramp.svg")
    for k, spec in enumerate(p.get("setups", DEFAULT_MARTINGALE_SETUPS)):
        setup, probes, cross = _setup_from(spec)
        name = spec.get("name", f"setup{k}")
        mr = ss.martingale_test(setup, probes, n_paths=spec.get("n_paths", 2000), T=spec.get("T", 0.2),
                                dt=spec.get("dt", 1e-3), seed=cfg.seed + k, crosscut=cross,
                                kappa=spec.get("kappa", 3.0), jobs=jobs)
        for j, c in enumerate(mr.checkpoints[1:], start=1):
            for i, z in enumerate(probes):
                for part in ("real", "imag"):
                    rep.add(Metric(f"{name}/M({z.real:g}{z.imag:+g}i)@{c:g}/{part}",
                                   float(getattr(mr.mean[j, i], part)), float(getattr(mr.M0[i], part)),
                                   float(getattr(mr.stderr[j, i], part)),
                                   effect=abs(mr.M0[i])))
        rep.add(Metric(f"{name}/stopped_fraction", mr.stopped_fraction, 0.0, tol=0.2))
    return rep


def exact_suite(cfg: ExperimentConfig, out: Path | None, jobs: int = 1) -> Report:
    p = cfg.params
    if "domains" in p:
        doms = {Path(f).stem: dm.load_domain(f) for f in p["domains"]}
    else:
        doms = dm.bundled_domains()
    steps = p.get("steps", 1)
    rep = Report("exact-suite", info={"domains": sorted(doms)})
    for name, d in sorted(doms.items()):
        checks = [ob.check_obs_z(d), ob.check_pfaffian(d)]
        mart = ob.martingale_check(d, steps)
        for c in checks:
            rep.add(Metric(f"{name}/{c.name}", float(c.ok), 1.0, tol=0.0))
        sums = [f for f in mart.failures if f[0] == "sum"]
        rep.add(Metric(f"{name}/sum_p_e", float(not sums), 1.0, tol=0.0))
        rep.add(Metric(f"{name}/martingale", float(mart.ok), 1.0, tol=0.0,
                       extra={"states": mart.states, "targets": mart.targets}))
    return rep


# ------------------------------------------------------------ compare/run

def driver_values(paths: dict, t: float) -> np.ndarray:
    short = [k for k, p in paths.items() if p.t[-1] < t]
    if short:
        raise ConfigError(f"{len(short)} driver(s) end before checkpoint {t}")
    return np.array([p.value_at(t) for _, p in sorted(paths.items())])


def compare_drivers(file_a, file_b, checkpoints) -> Report:
    """Per checkpoint: mean and variance differences (3 sigma), Welch t-test and
    two-sample KS test on the marginals (pass at p > 0.001)."""
    A, B = io.read_drivers(file_a), io.read_drivers(file_b)
    rep = Report("compare", info={"a": str(file_a), "b": str(file_b), "n_a": len(A), "n_b": len(B)})
    for t in checkpoints:
        a, b = driver_values(A, t), driver_values(B, t)
        rep.add(diff_metric(f"mean@{t:g}", a, b, "mean"))
        rep.add(diff_metric(f"var@{t:g}", a, b, "var"))
        tw, pw = welch(a, b)
        rep.add(Metric(f"welch_p@{t:g}", pw, 0.0, lower=1e-3, extra={"statistic": tw}))
        d, pk = ks(a, b)
        rep.add(Metric(f"ks_p@{t:g}", pk, 0.0, lower=1e-3, extra={"statistic": d}))
    return rep


RUNNERS = {"driver-compare": driver_compare, "connection-compare": connection_compare,
           "annulus-hitting": annulus_hitting, "martingale-suite": martingale_suite,
           "exact-suite": exact_suite}


def provenance(cfg: ExperimentConfig) -> dict:
    try:
        rev = subprocess.run(["git", "rev-parse", "HEAD"], capture_output=True, text=True,
                             cwd=Path(__file__).parent, timeout=10).stdout.strip() or None
    except (OSError, subprocess.SubprocessError):
        rev = None
    return {"git": rev, "seed": cfg.seed, "kind": cfg.kind,
            "started": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")}


def run(cfg: ExperimentConfig, out=None, jobs: int = 1) -> Report:
    """Run one experiment; with an output directory, write report.json (deterministic),
    provenance.json (git hash, seed, timestamp) and the experiment's artifacts."""
    out = Path(out) if out is not None else (Path(cfg.out) if cfg.out else None)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    prov = provenance(cfg)
    rep = RUNNERS[cfg.kind](cfg, out, jobs)
    rep.info.setdefault("seed", cfg.seed)
    if out is not None:
        io.write_json(out / "report.json", rep.as_dict())
        prov["finished"] = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
        io.write_json(out / "provenance.json", prov)
    return rep
