"""Stochastic Komatu-Loewner evolution SKLE_{alpha, b}.

The driver follows Euler-Maruyama, ``xi += alpha sqrt(dt) Z + b dt``, while the
slits take one RK4 step of the slit ODE with the driver frozen at its value
at the start of the step.  Each path is reproducible from its own 64-bit
seed; ensemble seeds derive from (master seed, path index).
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import geometry
from .bmd_kernel import b_bmd, solve_kernel
from .config import settings
from .errors import NumericalError, StepRejectedError, ValidationError
from .history import FlowHistory
from .loewner import EvolutionTrajectory, EvolveOptions, _degeneracy, _kernel_at, rk4_slits, trace_tip

log = logging.getLogger(__name__)


def bmd_constant(xi, s, raw=None):
    """b_BMD(xi, s), computed as b_BMD(0, s - xi); ``raw`` reuses a solve at (s, xi)."""
    if s.n_slits == 0:
        return 0.0
    if raw is not None:
        return 2.0 * math.pi * raw.h_pole.real
    return b_bmd(solve_kernel(geometry.translate(s, xi), 0.0, adaptive=True))


@dataclass(frozen=True)
class CoefficientPair:
    """Homogeneous coefficients alpha (degree 0) and b (degree -1) of (xi, s)."""

    alpha: Callable
    b: Callable
    name: str = "custom"

    @classmethod
    def sle(cls, kappa, drift="zero"):
        """alpha = sqrt(kappa) with b = 0 (``drift="zero"``) or b = -b_BMD (``"bmd"``)."""
        if kappa < 0:
            raise ValidationError("skle: kappa must be nonnegative")
        a = math.sqrt(kappa)
        alpha = _Const(a)
        if drift == "zero":
            return cls(alpha, _Const(0.0), f"alpha=sqrt({kappa}),b=0")
        if drift == "bmd":
            return cls(alpha, _NegBMD(), f"alpha=sqrt({kappa}),b=-b_BMD")
        raise ValidationError(f"skle: unknown drift choice {drift!r}")


class _Const:
    def __init__(self, v):
        self.v = float(v)

    def __call__(self, xi, s, raw=None):
        return self.v


class _NegBMD:
    def __call__(self, xi, s, raw=None):
        return -bmd_constant(xi, s, raw)


@dataclass(frozen=True, eq=False)
class SklePath:
    seed: int
    dt: float
    t: np.ndarray
    xi: np.ndarray
    s: np.ndarray
    stop_reason: Optional[str]
    traj: EvolutionTrajectory = field(repr=False)
    normals: np.ndarray = field(repr=False, default=None)
    coef: np.ndarray = field(repr=False, default=None)   # (K, 3): alpha, b, b_BMD per step

    @property
    def t_end(self):
        return float(self.t[-1])

    @property
    def increments(self):
        return np.diff(self.xi)


def _rng(seed):
    return np.random.Generator(np.random.Philox(int(seed) & 0xFFFFFFFFFFFFFFFF))


def path_seed(master, index):
    """Per-path seed from (master seed, path index); independent of scheduling."""
    ss = np.random.SeedSequence([int(master) & 0xFFFFFFFFFFFFFFFF, int(index)])
    return int(ss.generate_state(1, np.uint64)[0])


def sample_path(s0, xi0, coeffs, dt=None, T=1.0, seed=0, opts=None, tip_every=0):
    """One Euler-Maruyama path of the driver coupled to the slit ODE.

    ``tip_every > 0`` traces the hull tip every that many steps and stops on
    driver-slit proximity; otherwise only the image-space distance is used.
    """
    dt = settings.sde_dt if dt is None else float(dt)
    if not dt > 0 or not T >= 0:
        raise ValidationError("skle: dt must be positive and T nonnegative")
    if s0.n_slits:
        geometry.require_valid(s0, "skle")
    opts = opts or EvolveOptions()
    n = s0.n_slits
    K = int(math.ceil(T / dt - 1e-9))
    Z = _rng(seed).standard_normal(K)
    if n == 0 and isinstance(coeffs.alpha, _Const) and isinstance(coeffs.b, (_Const, _NegBMD)):
        return _sample_free(s0, float(xi0), coeffs, dt, T, seed, Z, opts)
    hist = FlowHistory(n)
    arr = s0.as_array().astype(float)
    y_floor = opts.height_floor_frac * (np.min(s0.y) if n else 0.0)
    xi = float(xi0)
    ts, xis, ss, tips = [0.0], [xi], [arr.copy()], [complex(xi, 0.0)]
    coef = []
    reason = None
    for k in range(K):
        t0 = k * dt
        t1 = min((k + 1) * dt, T)
        h = t1 - t0
        try:
            raw1 = _kernel_at(arr, n, xi, opts.resolution) if n else None
            sv = geometry.SlitVector.from_array(arr) if n else geometry.SlitVector.empty()
            al = coeffs.alpha(xi, sv, raw1)
            bb = coeffs.b(xi, sv, raw1)
            coef.append((al, bb, bmd_constant(xi, sv, raw1)))
            new, raws = rk4_slits(arr, n, t0, h, (xi, xi, xi), (2.0, 2.0, 2.0), opts.resolution, raw1)
        except (StepRejectedError, NumericalError) as exc:
            reason = f"kernel failure: {exc}"
            break
        hist.append(t0, t1, (xi, xi, xi), (2.0, 2.0, 2.0), raws)
        xi = xi + al * math.sqrt(h) * Z[k] + bb * h
        arr = new
        tip = None
        if n and tip_every and (k + 1) % tip_every == 0:
            tip = trace_tip(hist, t1, hist._seg[hist.size - 1, 4], opts.hull_eps)
        ts.append(t1)
        xis.append(xi)
        ss.append(arr.copy())
        tips.append(tip if tip is not None else complex(np.nan, np.nan))
        reason = _degeneracy(arr, n, y_floor, xi, opts, tip, s0)
        if reason is None and n:
            dist = geometry.dist_to_slits(geometry.SlitVector.from_array(arr), complex(xi, 0.0))
            if dist < opts.driver_slit_eps:
                reason = "driver-slit collision"
        if reason is not None:
            break
    t = np.array(ts)
    s_arr = np.array(ss).reshape(len(ts), 3 * n)
    xi_arr = np.array(xis)
    traj = EvolutionTrajectory(s0, t, s_arr, xi_arr, 2.0 * t, np.zeros(0, complex),
                               np.zeros((len(t), 0), complex), np.zeros(0),
                               (t[-1], reason) if reason else None, hist, np.array(tips), None, opts)
    return SklePath(int(seed), dt, t, xi_arr, s_arr, reason, traj, Z[:len(t) - 1],
                    np.array(coef[:len(t) - 1]).reshape(len(t) - 1, 3))


def _sample_free(s0, xi0, coeffs, dt, T, seed, Z, opts):
    # slit-free domain with constant coefficients: the whole path is a cumulative sum
    K = len(Z)
    t = np.minimum(dt * np.arange(K + 1), T)
    h = np.diff(t)
    al = coeffs.alpha(xi0, s0)
    bb = coeffs.b(xi0, s0) if isinstance(coeffs.b, _Const) else 0.0
    xi = np.empty(K + 1)
    xi[0] = xi0
    xi[1:] = xi0 + np.cumsum(al * np.sqrt(h) * Z + bb * h)
    hist = FlowHistory(0)
    hist.extend_frozen(t, xi)
    traj = EvolutionTrajectory(s0, t, np.zeros((K + 1, 0)), xi, 2.0 * t, np.zeros(0, complex),
                               np.zeros((K + 1, 0), complex), np.zeros(0), None, hist,
                               np.full(K + 1, np.nan + 0j), None, opts)
    return SklePath(int(seed), dt, t, xi, traj.s, None, traj, Z,
                    np.column_stack([np.full(K, al), np.full(K, bb), np.zeros(K)]))


@dataclass
class EnsembleConfig:
    s0: geometry.SlitVector
    xi0: float
    coeffs: CoefficientPair
    dt: float
    T: float
    tip_every: int = 0


@dataclass
class EnsembleReport:
    master_seed: int
    n_paths: int
    n_failed: int
    failures: list
    horizon: float
    mean: float
    var: float
    se_mean: float
    se_var: float
    stop_times: np.ndarray
    final_xi: np.ndarray
    qv: np.ndarray

    def as_dict(self):
        return {"master_seed": self.master_seed, "n_paths": self.n_paths, "n_failed": self.n_failed,
                "failures": self.failures, "horizon": self.horizon, "mean": self.mean,
                "var": self.var, "se_mean": self.se_mean, "se_var": self.se_var,
                "qv_mean": float(np.mean(self.qv)) if len(self.qv) else None}


def _run_one(args):
    cfg, seed, fn = args
    try:
        p = sample_path(cfg.s0, cfg.xi0, cfg.coeffs, cfg.dt, cfg.T, seed, tip_every=cfg.tip_every)
        return (fn(p) if fn is not None else p), None
    except Exception as exc:  # noqa: BLE001 - a failed path is reported, not fatal
        return None, f"{type(exc).__name__}: {exc}"


def _summary(p):
    return p.t_end, p.xi[-1] - p.xi[0], float(np.sum(np.diff(p.xi) ** 2)), p.stop_reason


def run_paths(cfg, n_paths, master_seed, fn=None, workers=1):
    """Apply ``fn`` to each sampled path; results in path-index order (None for failures)."""
    jobs = [(cfg, path_seed(master_seed, i), fn) for i in range(n_paths)]
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(_run_one, jobs, chunksize=max(1, n_paths // (8 * workers))))
    return [_run_one(j) for j in jobs]


def ensemble(cfg, n_paths, master_seed=0, workers=1):
    """Driver statistics at the common horizon over ``n_paths`` seeded paths."""
    if n_paths < 1:
        raise ValidationError("skle: ensemble needs at least one path")
    res = run_paths(cfg, n_paths, master_seed, _summary, workers)
    ok = [r for r, err in res if r is not None and r[3] is None]
    failures = [(i, err or r[3]) for i, (r, err) in enumerate(res) if r is None or r[3] is not None]
    stop = np.array([r[0] for r, _ in res if r is not None])
    d = np.array([r[1] for r in ok])
    qv = np.array([r[2] for r in ok])
    m = len(d)
    mean = float(np.mean(d)) if m else float("nan")
    var = float(np.var(d, ddof=1)) if m > 1 else float("nan")
    se_mean = math.sqrt(var / m) if m > 1 else float("nan")
    if m > 3:
        m4 = float(np.mean((d - mean) ** 4))
        se_var = math.sqrt(max(m4 - var ** 2 * (m - 3) / (m - 1), 0.0) / m)
    else:
        se_var = float("nan")
    return EnsembleReport(int(master_seed), n_paths, len(failures), failures, cfg.T, mean, var,
                          se_mean, se_var, stop, d, qv)
