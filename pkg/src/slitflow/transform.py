"""Image of a Komatu-Loewner chain under an inclusion of slit domains.

For ``h : D(s0) -> D(s~0)`` (the target keeps a subset of the slits, possibly
none) the image chain is driven by ``xi~ = h_t(xi(t))`` with capacity rate
``adot~ = h_t'(xi(t))^2 adot``, where ``h_t = g~_t o h o g_t^{-1}``.  The jet of
``h_t`` at the driver is fitted from probe pairs ``(g_t(w), g~_t(w))``; the
image chain is advanced one step at a time with a predictor-corrector on its
driver, so the fit at the end of a step feeds back into that step.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import geometry
from .bmd_kernel import b_bmd, solve_kernel
from .config import settings
from .errors import NumericalError, ValidationError
from .history import FlowHistory
from .loewner import EvolutionTrajectory, rk4_slits, trace_tip

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConformalJet:
    h0: float
    h1: float
    h2: float
    residual: float = 0.0

    def as_tuple(self):
        return (self.h0, self.h1, self.h2)


@dataclass
class CoEvolveOptions:
    keep: tuple = ()                 # indices of source slits kept in the target
    radii: tuple = (0.2, 0.35)       # probe circles, as fractions of the slit distance
    n_angles: int = 5                # probes per half circle
    degree: int = 4                  # fit degree; the jet uses the first three coefficients
    window: float = 0.5              # probes farther than window*rho are not used
    min_probes: int = 6
    fit_tol: float = 1e-4            # residual ceiling (warning above)
    fit_growth: float = 4.0          # refresh once the residual grows this much
    refresh_floor: float = 1e-6      # ... but not while it stays below this
    h1_min: float = 1e-3
    corrector_iters: int = 8
    corrector_tol: float = 1e-12
    margin: float = 0.1              # stop distance to a removed slit, times its length
    tip_every: int = 1               # minimum steps between hull-tip checks (0 disables)
    tip_max_skip: int = 200
    a_stop: float = math.inf         # stop once the image capacity reaches this value
    hull_eps: float = field(default_factory=lambda: settings.hull_eps)
    flow_rtol: float = field(default_factory=lambda: settings.flow_rtol)


@dataclass(frozen=True, eq=False)
class CoEvolution:
    source: EvolutionTrajectory
    keep: tuple
    t: np.ndarray
    xi_img: np.ndarray
    a_img: np.ndarray
    s_img: np.ndarray
    jets: np.ndarray          # (K+1, 3) h0, h1, h2 at xi(t_k)
    residuals: np.ndarray
    T_V: float
    stop_reason: Optional[str]
    image_history: FlowHistory = field(repr=False)
    refreshes: int = 0
    probes: np.ndarray = field(repr=False, default=None)

    @property
    def xi_src(self):
        return self.source.xi[:len(self.t)]

    def jet(self, k):
        h0, h1, h2 = self.jets[k]
        return ConformalJet(h0, h1, h2, self.residuals[k])


# -- jet fitting -----------------------------------------------------------------

def _fit(u, v, degree=3):
    """Real-coefficient polynomial with P(u) ~ v; returns (coef, residual, cond)."""
    sc = float(np.max(np.abs(u)))
    x = u / sc
    cols = [x ** m for m in range(degree + 1)]
    A = np.vstack([np.concatenate([c.real, c.imag]) for c in cols]).T
    rhs = np.concatenate([v.real, v.imag])
    beta, _, _, sv = np.linalg.lstsq(A, rhs, rcond=None)
    resid = float(np.max(np.abs(A @ beta - rhs)))
    beta = beta / sc ** np.arange(degree + 1)
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else np.inf
    return beta, resid, cond


def _poly(beta, u, der=0):
    p = np.polynomial.polynomial.polyder(beta, der) if der else beta
    return np.polynomial.polynomial.polyval(u, p)


def fit_jet(p, q, center):
    """Jet of h at ``center`` from pairs ``q ~ h(p)`` (Schwarz reflections implied)."""
    beta, resid, _ = _fit(np.asarray(p) - center, np.asarray(q))
    return ConformalJet(float(beta[0]), float(beta[1]), float(2.0 * beta[2]), resid)


# -- co-evolution ----------------------------------------------------------------

def _node_segments(hist, t0, t1):
    seg = hist.arrays()[0]
    lo = int(np.searchsorted(seg[:, 1], t0, side="right"))
    hi = int(np.searchsorted(seg[:, 1], t1, side="left"))
    return lo, hi + 1   # segments lo..hi cover [t0, t1]


def _flow_masked(hist, z, t0, t1, window, rtol):
    out = np.full(len(z), np.nan + 0j)
    live = np.isfinite(z)
    if live.any():
        vals, st, _ = hist.flow(z[live], t0, t1, rtol, window=window)
        vals[st != 0] = np.nan
        out[live] = vals
    return out


class _Image:
    """Image chain in the target domain: slits, flow history and running capacity."""

    def __init__(self, s_img):
        self.n = s_img.n_slits
        self.arr = s_img.as_array().astype(float)
        self.hist = FlowHistory(self.n)

    def step(self, t0, t1, xa, xb, aa, ab):
        h = t1 - t0
        xm, am = 0.5 * (xa + xb), 0.5 * (aa + ab)
        new, raws = rk4_slits(self.arr, self.n, t0, h, (xa, xm, xb), (aa, am, ab))
        self.hist.append(t0, t1, (xa, xm, xb), (aa, am, ab), raws, quadratic=False)
        return new

    def undo(self):
        self.hist.size -= 1


def co_evolve(source, keep=None, opts=None):
    """Co-evolve the image chain of ``source`` (trajectory or SKLE path) under an inclusion."""
    opts = opts or CoEvolveOptions()
    traj = getattr(source, "traj", source)
    keep = tuple(sorted(opts.keep if keep is None else keep))
    s0 = traj.s0
    n = s0.n_slits
    if any(not 0 <= j < n for j in keep):
        raise ValidationError("transform: kept slit index out of range")
    removed = [j for j in range(n) if j not in keep]
    s_img0 = geometry.SlitVector(s0.y[list(keep)], s0.x[list(keep)], s0.xr[list(keep)])
    if not removed:
        return _identity(traj, keep)
    hist = traj.history
    times = traj.t
    img = _Image(s_img0)
    K = len(times) - 1
    xi_src = traj.xi
    seg = hist.arrays()[0]

    def left_values(t1):
        k = min(int(np.searchsorted(seg[:, 1], t1, side="left")), hist.size - 1)
        return seg[k, 4], seg[k, 7]

    def right_rate(k):
        j = min(int(np.searchsorted(seg[:, 0], times[k], side="right")) - 1, hist.size - 1)
        return seg[max(j, 0), 5]

    def rho_at(k, c):
        return geometry.dist_to_slits(traj.slits(k), complex(c, 0.0))

    def new_probes(k, c):
        rho = rho_at(k, c)
        th = math.pi * (np.arange(opts.n_angles) + 0.5) / opts.n_angles
        z = np.concatenate([c + r * rho * np.exp(1j * th) for r in opts.radii])
        if times[k] == 0.0:
            return z.copy(), z.copy(), z.copy()
        w, st, _ = hist.flow(z, times[k], 0.0, opts.flow_rtol)
        ok = st == 0
        z, w = z[ok], w[ok]
        q, st2, _ = img.hist.flow(w, 0.0, times[k], opts.flow_rtol)
        ok = st2 == 0
        return w[ok], z[ok], q[ok]

    xi0 = xi_src[0]
    w, gp, gq = new_probes(0, xi0)
    ts, xis, As, ss, jets, res = [0.0], [xi0], [0.0], [img.arr.copy()], [(xi0, 1.0, 0.0)], [0.0]
    xi_t, ad_t = xi0, right_rate(0)
    a_img = 0.0
    refreshes = 0
    reason = None
    T_V = traj.t_end
    lengths = s0.xr - s0.x

    def usable(k, c):
        rho = rho_at(k, c)
        ok = np.isfinite(gp) & (np.abs(gp - c) <= opts.window * rho)
        return ok

    base_resid = last_resid = None
    qv = np.sum(np.diff(xi_src) ** 2) / max(times[-1], 1e-300)
    speed = math.sqrt(8.0 + qv)
    next_tip = opts.tip_every
    for k in range(K):
        t0, t1 = times[k], times[k + 1]
        degraded = last_resid is not None and last_resid > min(
            opts.fit_tol, max(opts.fit_growth * base_resid, opts.refresh_floor))
        if degraded or usable(k, xi_src[k]).sum() < opts.min_probes:
            w, gp, gq = new_probes(k, xi_src[k])
            refreshes += 1
            base_resid = None
        lo, hi = _node_segments(hist, t0, t1)
        for attempt in range(2):
            gp1 = _flow_masked(hist, gp, t0, t1, (lo, hi), opts.flow_rtol)
            xe, ae = left_values(t1)
            c = xi_src[k + 1]
            window = opts.window * rho_at(k + 1, c)
            # predictor: image driver frozen over the step
            snap = img.arr.copy()
            img.step(t0, t1, xi_t, xi_t, ad_t, ad_t)
            gq1 = _flow_masked(img.hist, gq, t0, t1, (img.hist.size - 1, img.hist.size),
                               opts.flow_rtol)
            sel = np.isfinite(gp1) & np.isfinite(gq1) & (np.abs(gp1 - c) <= window)
            img.undo()
            img.arr = snap
            if sel.sum() < opts.min_probes and attempt == 0:
                w, gp, gq = new_probes(k, xi_src[k])
                refreshes += 1
                base_resid = None
                continue
            break
        if sel.sum() < 4:
            reason = "probe loss"
            T_V = t0
            break
        beta, resid, _ = _fit(gp1[sel] - c, gq1[sel], opts.degree)
        # corrector: linear image driver between the two ends of the step, iterated
        # until the end value reproduces itself through the refitted jet
        xe_img = ae_img = None
        for it in range(opts.corrector_iters):
            xn, an = _poly(beta, xe - c), _poly(beta, xe - c, 1) ** 2 * ae
            if it and abs(xn - xe_img) <= opts.corrector_tol * max(1.0, abs(xn)):
                break
            if it:
                img.undo()
                img.arr = snap
            xe_img, ae_img = xn, an
            new_arr = img.step(t0, t1, xi_t, xe_img, ad_t, ae_img)
            gq1 = _flow_masked(img.hist, gq, t0, t1, (img.hist.size - 1, img.hist.size),
                               opts.flow_rtol)
            sel = np.isfinite(gp1) & np.isfinite(gq1) & (np.abs(gp1 - c) <= window)
            if sel.sum() < 4:
                break
            beta, resid, _ = _fit(gp1[sel] - c, gq1[sel], opts.degree)
        if sel.sum() < 4:
            reason = "probe loss"
            T_V = t0
            img.undo()
            img.arr = snap
            break
        if base_resid is None:
            base_resid = max(resid, 1e-13)
        last_resid = resid
        a_img += 0.5 * (t1 - t0) * (ad_t + ae_img)
        img.arr = new_arr
        gp, gq = gp1, gq1
        h0 = float(_poly(beta, 0.0))
        h1 = float(_poly(beta, 0.0, 1))
        h2 = float(_poly(beta, 0.0, 2))
        if abs(h1) < opts.h1_min:
            raise NumericalError(f"transform: h_t'(xi) = {h1:.3g} collapsed at t={t1:.6g}")
        if resid > opts.fit_tol:
            log.warning("transform: jet fit residual %.3g at t=%.6g", resid, t1)
        xi_t, ad_t = h0, h1 * h1 * right_rate(k + 1)
        ts.append(t1)
        xis.append(h0)
        As.append(a_img)
        ss.append(img.arr.copy())
        jets.append((h0, h1, h2))
        res.append(resid)
        if a_img >= opts.a_stop:
            reason = "capacity horizon"
            T_V = t1
            break
        if opts.tip_every and k + 1 >= next_tip:
            tip = trace_tip(hist, t1, xe, opts.hull_eps)
            if np.isfinite(tip):
                gap = min(abs(_seg_dist(s0, j, tip)) - opts.margin * lengths[j] for j in removed)
                if gap <= 0:
                    reason = "hull near removed slit"
                    T_V = t1
                    break
                # the hull tip moves roughly like speed * sqrt(dt); skip checks while it cannot
                # close the remaining gap
                skip = (gap / (3.0 * speed)) ** 2 / max(t1 - t0, 1e-300)
                next_tip = k + 1 + int(np.clip(skip, opts.tip_every, opts.tip_max_skip))
            else:
                next_tip = k + 1 + opts.tip_every
    else:
        if traj.lifetime is not None:
            reason = f"source lifetime: {traj.lifetime[1]}"
    return CoEvolution(traj, keep, np.array(ts), np.array(xis), np.array(As),
                       np.array(ss).reshape(len(ts), 3 * img.n), np.array(jets), np.array(res),
                       T_V if reason else traj.t_end, reason, img.hist, refreshes,
                       np.column_stack([w, gp, gq]) if len(w) == len(gp) else None)


def _seg_dist(s, j, z):
    return geometry.dist_to_slits(geometry.SlitVector(s.y[[j]], s.x[[j]], s.xr[[j]]), z)


def _identity(traj, keep):
    K = len(traj.t)
    jets = np.column_stack([traj.xi, np.ones(K), np.zeros(K)])
    reason = f"source lifetime: {traj.lifetime[1]}" if traj.lifetime else None
    return CoEvolution(traj, keep, traj.t.copy(), traj.xi.copy(), traj.a.copy(), traj.s.copy(),
                       jets, np.zeros(K), traj.t_end, reason, traj.history)


# -- reparametrization and drift -----------------------------------------------------

@dataclass(frozen=True)
class Reparametrized:
    tc: np.ndarray        # half-plane-capacity time (a~/2)
    xi: np.ndarray        # xi~ at those times
    a: np.ndarray         # 2 * tc
    t_source: np.ndarray  # source times a~^{-1}(2 tc)

    @property
    def horizon(self):
        return float(self.tc[-1])


def reparametrize(co, grid=None):
    """Time change tc = a~(t)/2; resample xi~ on ``grid`` (default: the node times)."""
    a = np.asarray(co.a_img)
    if np.any(np.diff(a) <= 0):
        raise NumericalError("transform: image capacity is not strictly increasing")
    tc_nodes = a / 2.0
    if grid is None:
        tc = tc_nodes.copy()
    else:
        tc = np.asarray(grid, dtype=float)
        if tc.min() < 0 or tc.max() > tc_nodes[-1] * (1 + 1e-12):
            raise ValidationError("transform: reparametrization grid outside [0, a~(T_V)/2]")
    t_src = np.interp(tc, tc_nodes, co.t)
    xi = np.interp(tc, tc_nodes, co.xi_img)
    return Reparametrized(tc, xi, 2.0 * tc, t_src)


def bmd_at(xi, s):
    if s.n_slits == 0:
        return 0.0
    return b_bmd(solve_kernel(geometry.translate(s, xi), 0.0, adaptive=True))


def semimartingale_drift(jet, xi, s, xi_img, s_img, alpha=0.0, b=0.0):
    """Drift and diffusion coefficients of xi~ = h_t(xi(t)).

    ``alpha``/``b`` are the source coefficients evaluated at (xi, s).
    """
    h1, h2 = jet.h1, jet.h2
    drift = (h1 * (b + bmd_at(xi, s)) + 0.5 * h2 * (alpha ** 2 - 6.0)
             - h1 * h1 * bmd_at(xi_img, s_img))
    return float(drift), float(h1 * alpha)


# -- independent capacity oracle -------------------------------------------------------

def _vslit_map(z, x, y):
    # conformal map of H minus the vertical segment [x, x+iy] onto H, z + (y^2/2)/z + ...
    s = np.sqrt((z - x) ** 2 + y * y)
    flip = (s.imag < 0) | ((s.imag == 0) & ((z - x).real < 0))
    return x + np.where(flip, -s, s)


def hcap_polyline(points, base=None):
    """Half-plane capacity of the hull bounded by a simple polyline from the real axis.

    Zipper with vertical-slit maps: each vertex image ``w`` contributes ``Im(w)^2/2``.
    """
    pts = np.asarray(points, dtype=complex)
    if base is None:
        base, pts = pts[0].real, pts[1:]
    z = pts - base
    total = 0.0
    for j in range(len(z)):
        w = z[j]
        x, y = w.real, max(w.imag, 0.0)
        total += 0.5 * y * y
        if j + 1 < len(z):
            z[j + 1:] = _vslit_map(z[j + 1:], x, y)
    return total
