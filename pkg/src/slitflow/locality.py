"""Monte Carlo check that SKLE_{sqrt6, -b_BMD} maps to SLE_6 under the inclusion into H.

Each path is sampled in the slit domain, co-evolved into the half-plane and
reparametrized by image capacity, ``tc = a~/2``.  The statistics of
``X = xi_check(min(tc, tau)) - xi_check(0)`` at a few checkpoints are compared
with the Brownian law ``N(0, kappa tc)``.

Two horizon modes:

* ``common``: every path is truncated at ``tc* = min(cap, min_i tau_i)`` with
  ``tau_i`` the capacity time at which path ``i`` stops; no path is stopped
  before a checkpoint.
* ``stopped``: checkpoints scale with ``cap`` and each path is frozen at its
  own stopping time.  Optional stopping keeps the mean at zero and makes the
  second moment ``kappa E[min(tc, tau)]``; the variance test uses the paired
  statistic ``X^2 - kappa min(tc, tau)``.

The negative control runs the same pipeline with ``b = 0``; its predicted
offset is the drift formula integrated along each sampled path.
"""

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import geometry
from .errors import ValidationError
from .skle import CoefficientPair, EnsembleConfig, run_paths
from .transform import CoEvolveOptions, co_evolve

log = logging.getLogger(__name__)

GRID_POINTS = 101


@dataclass
class LocalityConfig:
    slits: geometry.SlitVector
    xi0: float = 0.0
    kappa: float = 6.0
    drift: str = "bmd"            # "bmd" (b = -b_BMD) or "zero" (negative control)
    dt: float = 1e-4
    n_paths: int = 1000
    cap: float = 0.05             # capacity-time horizon cap
    mode: str = "common"          # "common" or "stopped"
    margin: float = 0.1           # T_V margin, times the removed slit length
    source_factor: float = 1.3    # source horizon = source_factor * cap
    checkpoints: tuple = (0.25, 0.5, 0.75, 1.0)
    n_increments: int = 20        # increments per path for the normality check
    min_survival: float = 0.8
    workers: int = 1

    def __post_init__(self):
        if self.drift not in ("bmd", "zero"):
            raise ValidationError(f"locality: unknown drift {self.drift!r}")
        if self.mode not in ("common", "stopped"):
            raise ValidationError(f"locality: unknown mode {self.mode!r}")
        if not (self.dt > 0 and self.cap > 0 and self.n_paths >= 2 and self.kappa > 0):
            raise ValidationError("locality: dt, cap, kappa must be positive and n_paths >= 2")
        if self.source_factor < 1.0 or not 0 < self.min_survival <= 1:
            raise ValidationError("locality: source_factor >= 1 and 0 < min_survival <= 1 required")
        fr = np.asarray(self.checkpoints, dtype=float)
        if fr.size == 0 or np.any(fr <= 0) or np.any(fr > 1) or np.any(np.diff(fr) <= 0):
            raise ValidationError("locality: checkpoints must be increasing fractions in (0, 1]")

    def coefficients(self):
        return CoefficientPair.sle(self.kappa, self.drift)

    def echo(self):
        d = asdict(self)
        d["slits"] = self.slits.to_json()
        d["checkpoints"] = list(self.checkpoints)
        return d


@dataclass
class PathRecord:
    """Per-path summary, small enough to ship back from a worker."""
    tau: float              # capacity time where the path stops (inf if it reached the cap)
    reason: str
    tc_end: float
    grid: np.ndarray        # xi_check on the uniform grid over [0, cap] (nan after tau)
    nodes_tc: np.ndarray = field(repr=False)
    nodes_xi: np.ndarray = field(repr=False)
    drift_int: np.ndarray = field(repr=False)   # integrated predicted drift at the nodes
    refreshes: int = 0
    max_residual: float = 0.0


def _record(path, cfg):
    co = co_evolve(path, keep=(), opts=CoEvolveOptions(margin=cfg.margin, a_stop=2.0 * cfg.cap))
    if co.stop_reason == "probe loss":
        raise RuntimeError("co-evolution lost its probes")
    tc = co.a_img / 2.0
    if np.any(np.diff(tc) <= 0):
        raise RuntimeError("image capacity not increasing")
    K = len(co.t) - 1
    # drift of xi~ in source time: h1 (b + b_BMD) + h2 (alpha^2 - 6) / 2; the target is H
    al, b, bmd = path.coef[:K].T
    h1, h2 = co.jets[:K, 1], co.jets[:K, 2]
    rate = h1 * (b + bmd) + 0.5 * h2 * (al * al - 6.0)
    drift_int = np.concatenate([[0.0], np.cumsum(rate * np.diff(co.t))])
    tau = math.inf if tc[-1] >= cfg.cap else float(tc[-1])
    grid_t = np.linspace(0.0, cfg.cap, GRID_POINTS)
    g = np.interp(grid_t, tc, co.xi_img)
    g[grid_t > tc[-1]] = np.nan
    return PathRecord(tau, co.stop_reason or "horizon", float(tc[-1]), g, tc, co.xi_img, drift_int,
                      co.refreshes, float(np.max(co.residuals)))


@dataclass
class Checkpoint:
    tc: float
    n: int
    mean: float
    var: float
    se_mean: float
    se_var: float
    target_var: float          # kappa * E[min(tc, tau)]
    second_moment_gap: float   # mean of X^2 - kappa min(tc, tau)
    se_gap: float
    predicted_offset: float
    qv_slope: float
    mean_ok: bool
    var_ok: bool


@dataclass
class LocalityReport:
    config: dict
    master_seed: int
    n_paths: int
    n_failed: int
    failures: list
    n_stopped: int
    horizon: float
    checkpoints: list
    skewness: float
    se_skewness: float
    kurtosis: float
    se_kurtosis: float
    qv_slope: float
    verdicts: dict
    grid: np.ndarray = field(repr=False, default=None)
    paths: np.ndarray = field(repr=False, default=None)

    def as_dict(self):
        return {"config": self.config, "master_seed": self.master_seed, "n_paths": self.n_paths,
                "n_failed": self.n_failed, "failures": self.failures[:50],
                "n_stopped": self.n_stopped, "horizon": self.horizon,
                "checkpoints": [asdict(c) for c in self.checkpoints],
                "skewness": self.skewness, "se_skewness": self.se_skewness,
                "kurtosis": self.kurtosis, "se_kurtosis": self.se_kurtosis,
                "qv_slope": self.qv_slope, "verdicts": self.verdicts}


def _at(rec, tc):
    """(xi_check, min(tc, tau), drift integral, realized QV) at capacity time tc."""
    t = min(tc, rec.tc_end)
    x = np.interp(t, rec.nodes_tc, rec.nodes_xi) - rec.nodes_xi[0]
    d = np.interp(t, rec.nodes_tc, rec.drift_int)
    m = rec.nodes_tc <= t
    xs = np.append(rec.nodes_xi[m], np.interp(t, rec.nodes_tc, rec.nodes_xi))
    return x, t, d, float(np.sum(np.diff(xs) ** 2))


def _se_var(d, var):
    m = len(d)
    m4 = float(np.mean((d - d.mean()) ** 4))
    return math.sqrt(max(m4 - var ** 2 * (m - 3) / (m - 1), 0.0) / m)


def aggregate(records, cfg, master_seed=0, failures=()):
    """Checkpoint statistics and verdicts from per-path records (fixed order)."""
    kappa = cfg.kappa
    n_fail = len(failures)
    ok = [r for r in records if r is not None]
    survival = len(ok) / cfg.n_paths
    taus = np.array([r.tau for r in ok]) if ok else np.zeros(0)
    if cfg.mode == "common":
        horizon = float(min(cfg.cap, taus.min())) if len(taus) else 0.0
    else:
        horizon = cfg.cap
    cps = []
    for fr in cfg.checkpoints:
        tc = fr * horizon
        vals = np.array([_at(r, tc) for r in ok]).reshape(len(ok), 4)
        X, tm, D, Q = vals.T
        m = len(X)
        mean = float(X.mean()) if m else float("nan")
        var = float(X.var(ddof=1)) if m > 1 else float("nan")
        se_mean = math.sqrt(var / m) if m > 1 else float("nan")
        se_var = _se_var(X, var) if m > 3 else float("nan")
        gap = X * X - kappa * tm
        se_gap = float(gap.std(ddof=1) / math.sqrt(m)) if m > 1 else float("nan")
        qv = float(Q.sum() / tm.sum()) if m and tm.sum() > 0 else float("nan")
        cps.append(Checkpoint(tc, m, mean, var, se_mean, se_var, float(kappa * tm.mean()) if m else 0.0,
                              float(gap.mean()) if m else float("nan"), se_gap,
                              float(D.mean()) if m else float("nan"), qv,
                              bool(abs(mean) <= 3 * se_mean), bool(abs(gap.mean()) <= 3 * se_gap)))
    # normality of standardized increments on a uniform capacity grid
    n_inc = cfg.n_increments
    edges = np.linspace(0.0, horizon, n_inc + 1)
    inc = []
    for r in ok:
        if r.tc_end < horizon:
            continue
        xs = np.interp(edges, r.nodes_tc, r.nodes_xi)
        inc.append(np.diff(xs))
    z = (np.concatenate(inc) / math.sqrt(kappa * horizon / n_inc)) if inc else np.zeros(0)
    nz = len(z)
    if nz > 8:
        zc = z - z.mean()
        s2 = float(np.mean(zc ** 2))
        skew = float(np.mean(zc ** 3) / s2 ** 1.5)
        kurt = float(np.mean(zc ** 4) / s2 ** 2 - 3.0)
    else:
        skew = kurt = float("nan")
    se_skew = math.sqrt(6.0 / nz) if nz else float("nan")
    se_kurt = math.sqrt(24.0 / nz) if nz else float("nan")
    final = cps[-1]
    variances = [c.var for c in cps]
    verdicts = {
        "conclusive": bool(survival >= cfg.min_survival and len(ok) > 3),
        "survival": survival,
        "zero_mean": all(c.mean_ok for c in cps),
        "variance": all(c.var_ok for c in cps),
        "qv_slope": bool(abs(final.qv_slope / kappa - 1.0) <= 0.05),
        "normality": bool(abs(skew) <= 3 * se_skew and abs(kurt) <= 3 * se_kurt),
        "variance_monotone": bool(np.all(np.diff(variances) >= 0)),
        "predicted_offset_z": float(abs(final.predicted_offset) / final.se_mean) if final.se_mean > 0 else 0.0,
    }
    if not verdicts["conclusive"]:
        log.warning("locality: only %d of %d paths usable; verdicts are inconclusive",
                    len(ok), cfg.n_paths)
    grid = np.linspace(0.0, cfg.cap, GRID_POINTS)
    paths = np.array([r.grid for r in ok]) if ok else np.zeros((0, GRID_POINTS))
    return LocalityReport(cfg.echo(), int(master_seed), cfg.n_paths, n_fail, list(failures),
                          int(np.sum(np.isfinite(taus))), horizon, cps, skew, se_skew, kurt, se_kurt,
                          final.qv_slope, verdicts, grid, paths)


def _path_fn(cfg):
    return _PathFn(cfg)


class _PathFn:
    # picklable closure for the process pool
    def __init__(self, cfg):
        self.cfg = cfg

    def __call__(self, path):
        return _record(path, self.cfg)


def run_locality(cfg, master_seed=0):
    """Sample, co-evolve into H and aggregate ``cfg.n_paths`` SKLE paths."""
    ens = EnsembleConfig(cfg.slits, cfg.xi0, cfg.coefficients(), cfg.dt, cfg.source_factor * cfg.cap)
    res = run_paths(ens, cfg.n_paths, master_seed, _path_fn(cfg), cfg.workers)
    records = [r for r, _ in res]
    failures = [(i, err) for i, (r, err) in enumerate(res) if r is None]
    return aggregate(records, cfg, master_seed, failures)
