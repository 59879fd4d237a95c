"""Deterministic Komatu-Loewner evolution in standard slit domains.

The slit endpoints move by ``ds/dt = (adot/2) * b(xi, s)`` and a point of the
domain by ``dg/dt = -pi * adot * Psi_{s(t)}(g, xi(t))``.  The slit ODE is
integrated by RK4 with step doubling; the kernels solved at the RK4 stages are
recorded in a ``FlowHistory`` so that points can later be flowed forward or
backward along the same field.
"""

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np

from . import geometry
from .bmd_kernel import b_from_raw, eval_psi, solve_kernel, solve_raw
from .config import settings
from .errors import (DegenerateGeometryError, NumericalError, StepRejectedError,
                     StiffnessError, ValidationError)
from .history import FlowHistory

log = logging.getLogger(__name__)


def _two(t):
    return 2.0


@dataclass(frozen=True)
class DrivingSpec:
    """Driving function ``xi`` and capacity rate ``adot`` on ``[0, T]``."""

    xi: Callable[[float], float]
    T: float
    adot: Callable[[float], float] = _two
    label: str = "custom"

    def __post_init__(self):
        if not self.T >= 0:
            raise ValidationError("loewner: horizon T must be nonnegative")
        self.check()

    def check(self, n=1024):
        if self.T == 0:
            return
        tc = np.linspace(0.0, self.T, n + 1)
        tf = np.linspace(0.0, self.T, 4 * n + 1)
        ad = np.array([self.adot(t) for t in tf])
        if not np.all(ad > 0):
            raise ValidationError("loewner: adot must be positive on [0, T]")
        xc = np.array([self.xi(t) for t in tc])
        xf = np.array([self.xi(t) for t in tf])
        if not (np.all(np.isfinite(xf))):
            raise ValidationError("loewner: driver not finite on [0, T]")
        jc = np.max(np.abs(np.diff(xc)))
        jf = np.max(np.abs(np.diff(xf)))
        # a jump does not shrink under refinement, a continuous path does
        if jf > max(0.75 * jc, 1e-12) and jf > 1e-9 * max(1.0, np.max(np.abs(xf))):
            raise ValidationError("loewner: driver fails the sampled continuity check")

    @classmethod
    def constant(cls, xi0=0.0, T=1.0, adot=2.0):
        return cls(lambda t: xi0, T, _const(adot), f"constant({xi0})")

    @classmethod
    def linear(cls, xi0=0.0, slope=0.0, T=1.0, adot=2.0):
        return cls(lambda t: xi0 + slope * t, T, _const(adot), f"linear({xi0},{slope})")

    @classmethod
    def sqrt(cls, xi0=0.0, c=0.0, T=1.0, adot=2.0):
        return cls(lambda t: xi0 + c * np.sqrt(max(t, 0.0)), T, _const(adot), f"sqrt({xi0},{c})")

    @classmethod
    def sampled(cls, ts, xs, adot=2.0):
        ts = np.asarray(ts, dtype=float)
        xs = np.asarray(xs, dtype=float)
        if ts.ndim != 1 or ts.shape != xs.shape or len(ts) < 2 or ts[0] != 0 \
                or np.any(np.diff(ts) <= 0):
            raise ValidationError("loewner: sampled driver needs increasing times starting at 0")
        return cls(lambda t: float(np.interp(t, ts, xs)), float(ts[-1]), _const(adot), "sampled")

    def restricted(self, t0, t1):
        """Driver on ``[t0, t1]`` re-based to start at time 0."""
        xi, ad = self.xi, self.adot
        return DrivingSpec(lambda u: xi(u + t0), t1 - t0, lambda u: ad(u + t0), self.label)


def _const(v):
    v = float(v)
    if not v > 0:
        raise ValidationError("loewner: adot must be positive")
    return (lambda t: v) if v != 2.0 else _two


@dataclass
class EvolveOptions:
    rtol: float = field(default_factory=lambda: settings.slit_rtol)
    probe_rtol: float = field(default_factory=lambda: settings.flow_rtol)
    max_step: float = field(default_factory=lambda: settings.max_step)
    min_step: float = 1e-12
    absorb_eps: float = field(default_factory=lambda: settings.absorb_eps)
    height_floor_frac: float = field(default_factory=lambda: settings.height_floor_frac)
    driver_slit_eps: float = field(default_factory=lambda: settings.driver_slit_eps)
    collision_eps: float = 1e-9
    hull_eps: float = field(default_factory=lambda: settings.hull_eps)
    track_tip: bool = True
    stop_on_absorb: bool = False
    resolution: Optional[int] = None
    nodes: Optional[np.ndarray] = None   # times every step must land on


class AbsorbedAt(NamedTuple):
    t: float


@dataclass(frozen=True, eq=False)
class EvolutionTrajectory:
    s0: geometry.SlitVector
    t: np.ndarray
    s: np.ndarray            # (K+1, 3N) rows y, x, xr
    xi: np.ndarray
    a: np.ndarray
    probes: np.ndarray
    probe_values: np.ndarray  # (K+1, P), nan once absorbed
    probe_absorbed: np.ndarray  # absorption times (inf if never)
    lifetime: Optional[tuple]   # (zeta, reason) or None when T was reached
    history: FlowHistory = field(repr=False)
    tips: np.ndarray = field(repr=False)
    drv: Optional[DrivingSpec] = field(default=None, repr=False)
    opts: Optional[EvolveOptions] = field(default=None, repr=False)

    @property
    def t_end(self):
        return float(self.t[-1])

    @property
    def n_slits(self):
        return self.s0.n_slits

    def slits(self, k):
        return geometry.SlitVector.from_array(self.s[k])

    def slits_at(self, t):
        """Slit vector at time ``t`` (linear interpolation between nodes)."""
        if not 0 <= t <= self.t_end:
            raise ValidationError("loewner: time outside trajectory")
        row = np.array([np.interp(t, self.t, col) for col in self.s.T])
        return geometry.SlitVector.from_array(row) if self.n_slits else geometry.SlitVector.empty()

    def reached_end(self):
        return self.lifetime is None


# -- slit ODE -----------------------------------------------------------------

def _kernel_at(arr, n, xi, resolution):
    y, x, xr = arr[:n], arr[n:2 * n], arr[2 * n:]
    if np.any(y <= 0) or np.any(xr - x <= 0):
        raise StepRejectedError("loewner: intermediate configuration invalid (height or length <= 0)")
    try:
        return solve_raw(y, x - xi, xr - xi, 0.0, resolution, None,
                         settings.kernel_max_resolution)
    except DegenerateGeometryError as exc:
        raise StepRejectedError(f"loewner: kernel failed at an RK4 stage ({exc})") from exc


def rk4_slits(arr, n, t, h, xi3, ad3, resolution=None, raw1=None):
    """One RK4 step of ds/dt = (adot/2) b(xi, s); returns ``(new, raws at t, t+h/2, t+h)``.

    ``xi3``/``ad3`` give the driver and rate at (t, t+h/2, t+h).  The stage-3 and
    stage-4 kernels sit within O(h^3) of the true midpoint and end states and are
    the ones recorded for the flow.
    """
    if n == 0:
        return arr.copy(), (None, None, None)
    r1 = raw1 if raw1 is not None else _kernel_at(arr, n, xi3[0], resolution)
    k1 = 0.5 * ad3[0] * b_from_raw(r1)
    r2 = _kernel_at(arr + 0.5 * h * k1, n, xi3[1], resolution)
    k2 = 0.5 * ad3[1] * b_from_raw(r2)
    r3 = _kernel_at(arr + 0.5 * h * k2, n, xi3[1], resolution)
    k3 = 0.5 * ad3[1] * b_from_raw(r3)
    r4 = _kernel_at(arr + h * k3, n, xi3[2], resolution)
    k4 = 0.5 * ad3[2] * b_from_raw(r4)
    new = arr + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
    if np.any(new[:n] <= 0) or np.any(new[2 * n:] - new[n:2 * n] <= 0):
        raise StepRejectedError("loewner: step produced an invalid configuration")
    return new, (r1, r3, r4)


def step_slits(s, xi, adot, dt):
    """One explicit RK4 step of the slit ODE with the driver frozen at ``xi``."""
    geometry.require_valid(s, "loewner")
    if not dt > 0:
        raise ValidationError("loewner: dt must be positive")
    if s.n_slits == 0:
        return s
    new, _ = rk4_slits(s.as_array(), s.n_slits, 0.0, dt, (xi, xi, xi), (adot, adot, adot))
    out = geometry.SlitVector.from_array(new)
    if not geometry.is_valid(out):
        raise StepRejectedError("loewner: step produced an invalid configuration")
    return out


# -- evolution ----------------------------------------------------------------

def _degeneracy(arr, n, y_floor, xi, opts, tip, s0):
    if n == 0:
        return None
    y = arr[:n]
    if np.min(y) < y_floor:
        return "slit-height floor"
    sv = geometry.SlitVector.from_array(arr)
    if geometry.validate(sv) or geometry.min_gap(sv) < opts.collision_eps:
        return "slit collision"
    if tip is not None and np.isfinite(tip) and geometry.dist_to_slits(s0, tip) < opts.driver_slit_eps:
        return "driver-slit collision"
    return None


def trace_tip(history, t, xi, eps):
    """Image of ``xi + i*eps`` under the inverse map at time ``t`` (nan if lost)."""
    out, st, _ = history.flow([complex(xi, eps)], t, 0.0)
    return complex(out[0]) if st[0] == 0 else complex(np.nan, np.nan)


def evolve(s0, drv, probes=(), opts=None):
    """Integrate the slit ODE and the probe map ODE on ``[0, drv.T]``."""
    opts = opts or EvolveOptions()
    geometry.require_valid(s0, "loewner")
    probes = np.atleast_1d(np.asarray(probes, dtype=complex))
    for w in probes:
        if not geometry.contains(s0, w):
            raise ValidationError(f"loewner: probe {w} not in the domain")
    n = s0.n_slits
    T = float(drv.T)
    hist = FlowHistory(n)
    arr = s0.as_array().astype(float)
    y_floor = opts.height_floor_frac * (np.min(s0.y) if n else 0.0)
    nodes = np.unique(np.concatenate([np.asarray(opts.nodes if opts.nodes is not None else [],
                                                 dtype=float), [T]]))
    nodes = nodes[(nodes > 0) & (nodes <= T)]

    ts, ss, xis, As = [0.0], [arr.copy()], [float(drv.xi(0.0))], [0.0]
    pv = [probes.copy()]
    cur = probes.copy()
    alive = np.ones(len(probes), dtype=bool)
    absorbed = np.full(len(probes), np.inf)
    tips = [complex(xis[0], 0.0)]
    lifetime = None
    t, a = 0.0, 0.0
    h = opts.max_step
    raw1 = None
    while t < T and lifetime is None:
        nxt = nodes[np.searchsorted(nodes, t, side="right")] if len(nodes) else T
        h = min(h, opts.max_step, nxt - t)
        # snap to the node rather than leave a sliver below min_step
        last = h >= nxt - t - opts.min_step
        t1 = nxt if last else t + h
        h = t1 - t
        if h < opts.min_step:
            raise StiffnessError(f"loewner: step size underflow at t={t:.6g}")
        tq = (t, t + 0.25 * h, t + 0.5 * h, t + 0.75 * h, t1)
        xq = [float(drv.xi(u)) for u in tq]
        aq = [float(drv.adot(u)) for u in tq]
        try:
            if n and raw1 is None:
                raw1 = _kernel_at(arr, n, xq[0], opts.resolution)
            full, _ = rk4_slits(arr, n, t, h, xq[0::2], aq[0::2], opts.resolution, raw1)
            half, ra = rk4_slits(arr, n, t, 0.5 * h, xq[0:3], aq[0:3], opts.resolution, raw1)
            new, rb = rk4_slits(half, n, t + 0.5 * h, 0.5 * h, xq[2:5], aq[2:5], opts.resolution)
        except StepRejectedError:
            h *= 0.5
            continue
        if n:
            scale = max(np.max(np.abs(arr)), np.min(arr[:n]))
            err = np.max(np.abs(new - full)) / 15.0
            tol = opts.rtol * scale
            if err > tol:
                h *= max(0.1, 0.9 * (tol / err) ** 0.2)
                continue
        else:
            err, tol = 0.0, 1.0
        tm = t + 0.5 * h
        hist.append(t, tm, xq[0:3], aq[0:3], ra)
        hist.append(tm, t1, xq[2:5], aq[2:5], rb)
        a += h / 6.0 * (aq[0] + 4.0 * aq[2] + aq[4])
        if alive.any():
            idx = np.nonzero(alive)[0]
            vals, st, tstop = hist.flow(cur[idx], t, t1, opts.probe_rtol, opts.absorb_eps,
                                        window=(hist.size - 2, hist.size))
            cur[idx] = vals
            gone = st != 0
            absorbed[idx[gone]] = tstop[gone]
            alive[idx[gone]] = False
            cur[idx[gone]] = np.nan
        t = t1
        arr = new
        raw1 = None
        tip = trace_tip(hist, t, xq[4], opts.hull_eps) if (n and opts.track_tip) else None
        ts.append(t)
        ss.append(arr.copy())
        xis.append(xq[4])
        As.append(a)
        pv.append(cur.copy())
        tips.append(tip if tip is not None else complex(np.nan, np.nan))
        reason = _degeneracy(arr, n, y_floor, xq[4], opts, tip, s0)
        if reason is None and opts.stop_on_absorb and not alive.all():
            reason = "probe absorbed"
        if reason is not None:
            lifetime = (t, reason)
            log.info("loewner: evolution stopped at t=%.6g (%s)", t, reason)
        if err > 0:
            h *= min(4.0, 0.9 * (tol / err) ** 0.2)
        else:
            h *= 4.0
    return EvolutionTrajectory(s0, np.array(ts), np.array(ss).reshape(len(ts), 3 * n),
                               np.array(xis), np.array(As), probes,
                               np.array(pv).reshape(len(ts), len(probes)), absorbed,
                               lifetime, hist, np.array(tips), drv, opts)


# -- queries on a trajectory ---------------------------------------------------

def _check_time(traj, t):
    if not 0.0 <= t <= traj.t_end * (1 + 1e-14):
        raise ValidationError(f"loewner: time {t} outside [0, {traj.t_end}]")
    return min(float(t), traj.t_end)


def map_point(traj, z, t=None, rtol=None):
    """g_t(z), or ``AbsorbedAt(t_z)`` if the point is swallowed before ``t``."""
    t = traj.t_end if t is None else _check_time(traj, t)
    if not geometry.contains(traj.s0, z):
        raise ValidationError(f"loewner: point {z} not in the domain")
    if t == 0.0:
        return complex(z)
    out, st, tstop = traj.history.flow([z], 0.0, t, rtol)
    if st[0]:
        return AbsorbedAt(float(tstop[0]))
    return complex(out[0])


def map_points(traj, zs, t=None, rtol=None):
    """Vectorized ``map_point``; absorbed points come back as nan."""
    t = traj.t_end if t is None else _check_time(traj, t)
    out, st, _ = traj.history.flow(zs, 0.0, t, rtol)
    out[st != 0] = np.nan
    return out


def _fit_laurent(z, g, terms=6):
    # (g - z) z = c1 + c2/z + c3/z^2 + ..., real coefficients
    d = (g - z) * z
    cols = [z ** (-k) for k in range(terms)]
    A = np.vstack([np.concatenate([c.real, c.imag]) for c in cols]).T
    rhs = np.concatenate([d.real, d.imag])
    coef, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    resid = np.max(np.abs(A @ coef - rhs))
    return coef[0], resid


def hcap_farfield(traj, t=None, radii=None, n_angles=24, tol=1e-6):
    """Half-plane capacity of the hull at time ``t`` from the expansion g(z) = z + c/z + ...

    Fits ``c`` on half circles of each radius and Richardson-extrapolates in 1/R.
    """
    t = traj.t_end if t is None else _check_time(traj, t)
    if t == 0.0:
        return 0.0
    if radii is None:
        k = np.searchsorted(traj.t, t, side="right")
        tips = traj.tips[:k]
        tips = tips[np.isfinite(tips)]
        ext = max([1.0, traj.s0.extent() if traj.n_slits else 0.0, np.max(np.abs(traj.xi[:k]))]
                  + ([np.max(np.abs(tips))] if len(tips) else []) + [2 * np.sqrt(traj.a[k - 1])])
        radii = 10.0 * ext * np.array([1.0, 2.0])
    radii = np.asarray(radii, dtype=float)
    th = np.pi * (np.arange(n_angles) + 0.5) / n_angles
    cs, worst = [], 0.0
    for R in radii:
        z = R * np.exp(1j * th)
        g, st, _ = traj.history.flow(z, 0.0, t)
        if np.any(st):
            raise NumericalError("loewner: far-field probe absorbed; radii too small")
        c, resid = _fit_laurent(z, g)
        cs.append(c)
        worst = max(worst, resid)
    if worst > tol * max(1.0, abs(cs[-1])):
        warnings.warn(f"loewner: unreliable far-field fit (residual {worst:.3g})", RuntimeWarning)
    if len(cs) == 1:
        return float(cs[0])
    # truncation error of the 6-term fit decays like R^-6
    r0, r1 = radii[-2], radii[-1]
    w = (r1 / r0) ** 6
    return float((w * cs[-1] - cs[-2]) / (w - 1.0))


@dataclass(frozen=True)
class HullSample:
    t: float
    polyline: np.ndarray
    epsilon: float
    dropped: int = 0

    def radius(self, center=0.0):
        return float(np.max(np.abs(self.polyline - center))) if len(self.polyline) else 0.0


def _trace(traj, us, eps):
    out = np.full(len(us), np.nan + 0j)
    for i, u in enumerate(us):
        if u == 0.0:
            out[i] = complex(traj.history.driver(0.0) if traj.history.size else traj.xi[0], 0.0)
            continue
        xi = traj.history.driver(u)
        v, st, _ = traj.history.flow([complex(xi, eps)], u, 0.0)
        if st[0] == 0:
            out[i] = v[0]
    return out


def trace_hull(traj, t=None, epsilon=None, n_points=64, richardson=True):
    """Polyline gamma_eps(u) = g_u^{-1}(xi(u) + i eps), u on a uniform grid of [0, t]."""
    t = traj.t_end if t is None else _check_time(traj, t)
    eps = settings.hull_eps if epsilon is None else float(epsilon)
    if not eps > 0:
        raise ValidationError("loewner: hull offset epsilon must be positive")
    if t == 0.0:
        return HullSample(0.0, np.array([complex(traj.xi[0], 0.0)]), eps)
    us = t * np.arange(n_points + 1) / n_points
    pts = _trace(traj, us, eps)
    if richardson:
        # g_u^{-1} is locally quadratic at the tip preimage, so the offset error is O(eps^2)
        half = _trace(traj, us, 0.5 * eps)
        pts = (4.0 * half - pts) / 3.0
    bad = ~np.isfinite(pts)
    if bad.any():
        warnings.warn(f"loewner: {int(bad.sum())} hull points left the domain and were dropped",
                      RuntimeWarning)
    pts = pts[~bad]
    pts = pts.real + 1j * np.maximum(pts.imag, 0.0)
    return HullSample(t, pts, eps, int(bad.sum()))


def compose_check(traj, split, w, t=None):
    """|g_{t-s}^{(s)}(g_s(w)) - g_t(w)| with the second stage evolved afresh from s(split)."""
    t = traj.t_end if t is None else _check_time(traj, t)
    if traj.drv is None:
        raise ValidationError("loewner: compose_check needs a trajectory built from a DrivingSpec")
    if not 0.0 <= split <= t:
        raise ValidationError("loewner: split must lie in [0, t]")
    opts = traj.opts or EvolveOptions()
    first = evolve(traj.s0, traj.drv.restricted(0.0, split), [w], opts)
    if first.lifetime is not None or not np.isfinite(first.probe_values[-1, 0]):
        raise NumericalError("loewner: first stage of compose_check did not reach the split")
    s_mid = first.slits(len(first.t) - 1) if traj.n_slits else geometry.SlitVector.empty()
    second = evolve(s_mid, traj.drv.restricted(split, t), [first.probe_values[-1, 0]], opts)
    direct = map_point(traj, w, t)
    if isinstance(direct, AbsorbedAt):
        raise NumericalError("loewner: compose_check probe absorbed")
    return float(abs(second.probe_values[-1, 0] - direct))


def _default_probes(s, xi0):
    cands = xi0 + np.array([2j, 1.5 + 1j, -1.5 + 1j, 3j, 2.5 + 2j, -2.5 + 2j, 1j, 0.5 + 0.5j])
    if s.n_slits:
        cands = [z for z in cands if geometry.dist_to_slits(s, z) > 0.2]
    return np.array(cands[:3])


@dataclass(frozen=True)
class FirstOrderRow:
    dt: float
    probe: complex
    e: float
    r: float
    a: float
    ratio: float


def first_order_check(s, xi0, dt_list, probes=None, drift=0.0, n_nodes=160):
    """Ratios e/(r a) of the first-order map expansion error.

    ``e = |g_dt(z) - z + pi a Psi_s(z, xi0)|`` with ``a = 2 dt`` and ``r`` the hull
    radius.  The driver is ``xi0 + drift*sqrt(t)`` (``drift = 0`` keeps it constant).
    """
    geometry.require_valid(s, "loewner")
    probes = _default_probes(s, xi0) if probes is None else np.atleast_1d(np.asarray(probes, complex))
    sol = solve_kernel(s, xi0, adaptive=True)
    psi = np.atleast_1d(eval_psi(sol, probes))
    rows = []
    for dt in dt_list:
        drv = DrivingSpec.sqrt(xi0, drift, dt)
        nodes = dt * np.geomspace(1e-8, 1.0, n_nodes)
        opts = EvolveOptions(nodes=nodes, max_step=min(settings.max_step, dt), min_step=1e-11 * dt,
                             track_tip=False)
        traj = evolve(s, drv, probes, opts)
        if traj.lifetime is not None:
            raise NumericalError(f"loewner: first_order_check evolution stopped ({traj.lifetime[1]})")
        a = traj.a[-1]
        hull = trace_hull(traj, dt, epsilon=min(settings.hull_eps, 1e-2 * np.sqrt(dt)))
        r = hull.radius(xi0)
        g = traj.probe_values[-1]
        e = np.abs(g - probes + np.pi * a * psi)
        rows += [FirstOrderRow(dt, complex(z), float(ei), r, float(a), float(ei / (r * a)))
                 for z, ei in zip(probes, e)]
    return rows
