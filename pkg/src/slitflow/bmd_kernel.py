"""BMD complex Poisson kernel of a standard slit domain.

The kernel is represented as

    Psi(z) = -1/(pi (z - xi0)) + H(z),
    H(z)   = sum_j int_{C_j} sigma_j(u) [i/(z-u) - i/(z-conj(u))] |du|,

with real densities ``sigma_j(u) = sum_k sigma_jk sqrt(1-t^2) U_k(t)`` in the
affine slit parameter ``t``.  The mirror term makes ``Im Psi = 0`` on the real
axis, the Cauchy form makes ``Psi`` single valued (zero flux around every
slit) and ``O(1/z^2)`` decay of ``H`` is automatic; only constancy of
``Im Psi`` on each slit is solved for.  Every basis integral has the closed
form ``i*pi*phi(zeta)^(k+1)`` with ``phi`` the inverse Joukowski map, so slit
endpoints evaluate exactly.
"""

import threading
from collections import OrderedDict
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import geometry
from ._accel import backend
from .config import settings
from .errors import (AmbiguousSideError, DegenerateGeometryError, PoleError,
                     UnconvergedError)


class RawKernel(NamedTuple):
    geo: np.ndarray
    coef: np.ndarray
    c: np.ndarray
    residual: float
    cond: float
    psi_left: np.ndarray
    psi_right: np.ndarray
    h_pole: complex
    resolution: int


def _geo(y, x, xr, xi0):
    return np.column_stack([0.5 * (x + xr) - xi0, y, 0.5 * (xr - x)])


def _scale(c):
    return max(1.0, float(np.max(np.abs(c)))) if len(c) else 1.0


def solve_raw(y, x, xr, xi0, resolution=None, tol=None, max_resolution=None,
              kernels=None):
    """Solve for one (slits, xi0) pair, doubling the resolution until converged.

    Raises ``DegenerateGeometryError`` on an ill-conditioned system and
    ``UnconvergedError`` when ``max_resolution`` does not reach ``tol``.
    """
    k = kernels or backend
    m = resolution or settings.kernel_resolution
    tol = settings.kernel_tol if tol is None else tol
    mmax = max(m, max_resolution or settings.kernel_max_resolution)
    geo = _geo(np.asarray(y, float), np.asarray(x, float), np.asarray(xr, float), xi0)
    if geo.shape[0] == 0:
        empty = np.zeros(0, dtype=complex)
        return RawKernel(geo, np.zeros((0, m)), np.zeros(0), 0.0, 1.0, empty, empty, 0j, m)
    while True:
        coef, c, resid, cond, pl, pr, hp = k.solve_density(geo, m)
        if not cond < settings.cond_limit:
            raise DegenerateGeometryError(
                f"bmd_kernel: collocation system ill-conditioned (cond={cond:.3g})")
        raw = RawKernel(geo, coef, c, float(resid), float(cond), pl, pr, complex(hp), m)
        if resid <= tol * _scale(c) or 2 * m > mmax:
            return raw
        m *= 2


@dataclass(frozen=True, eq=False)
class KernelSolution:
    s: geometry.SlitVector
    xi0: float
    raw: RawKernel
    tol: float

    @property
    def resolution(self):
        return self.raw.resolution

    @property
    def coef(self):
        return self.raw.coef

    @property
    def c(self):
        """Level constants: the value of Im Psi on each slit."""
        return self.raw.c

    @property
    def residual(self):
        return self.raw.residual

    @property
    def converged(self):
        return self.raw.residual <= self.tol * _scale(self.raw.c)


def solve_kernel(s, xi0=0.0, resolution=None, tol=None, adaptive=False, strict=False):
    """Collocation solve of the BMD complex Poisson kernel Psi_D(., xi0)."""
    geometry.require_valid(s, "bmd_kernel")
    tol = settings.kernel_tol if tol is None else tol
    m = resolution or settings.kernel_resolution
    if m < 4:
        raise ValueError("bmd_kernel: resolution must be >= 4")
    key = _cache.key(s, xi0, m) if _cache.enabled else None
    if key is not None:
        hit = _cache.get(key)
        if hit is not None:
            return hit
    raw = solve_raw(s.y, s.x, s.xr, float(xi0), m, tol,
                    settings.kernel_max_resolution if adaptive else m)
    sol = KernelSolution(s, float(xi0), raw, tol)
    if strict and not sol.converged:
        raise UnconvergedError(
            f"bmd_kernel: residual {raw.residual:.3g} above tolerance {tol:g} at M={raw.resolution}")
    if key is not None:
        _cache.put(key, sol)
    return sol


def _locate(sol, z, side):
    s = sol.s
    zs = np.atleast_1d(np.asarray(z, dtype=complex))
    own = np.full(zs.shape, -1, dtype=np.int64)
    tpar = np.zeros(zs.shape)
    sides = np.zeros(zs.shape)
    for j in range(s.n_slits):
        on = (zs.imag == s.y[j]) & (zs.real >= s.x[j]) & (zs.real <= s.xr[j])
        if not on.any():
            continue
        t = (zs.real[on] - 0.5 * (s.x[j] + s.xr[j])) / (0.5 * (s.xr[j] - s.x[j]))
        t[zs.real[on] == s.x[j]] = -1.0
        t[zs.real[on] == s.xr[j]] = 1.0
        interior = np.abs(t) < 1.0
        if interior.any() and side not in (1, -1):
            raise AmbiguousSideError(
                "bmd_kernel: point on a slit interior needs side=+1 (above) or -1 (below)")
        own[on] = j
        tpar[on] = t
        sides[on] = np.where(interior, side if side in (1, -1) else 0, 0)
    return zs, own, tpar, sides


def eval_h(sol, z, side=None):
    """Regular part H_D(z, xi0) = Psi_D(z, xi0) + 1/(pi (z - xi0)); finite at z = xi0."""
    zs, own, tpar, sides = _locate(sol, z, side)
    if sol.s.n_slits == 0:
        out = np.zeros(zs.shape, dtype=complex)
    else:
        out = backend.h_points(zs - sol.xi0, sol.raw.coef, sol.raw.geo, own, tpar, sides)
    return out if np.ndim(z) else complex(out[0])


def eval_psi(sol, z, side=None):
    """Psi_D(z, xi0), including slit endpoints and (with ``side``) slit interiors."""
    zs = np.atleast_1d(np.asarray(z, dtype=complex))
    if np.any(zs == sol.xi0):
        raise PoleError("bmd_kernel: Psi has a pole at z = xi0")
    out = np.atleast_1d(eval_h(sol, zs, side)) - 1.0 / (np.pi * (zs - sol.xi0))
    return out if np.ndim(z) else complex(out[0])


def b_bmd(sol):
    """BMD domain constant 2*pi*H_D(xi0, xi0) (zero for the half-plane)."""
    hp = sol.raw.h_pole
    if abs(hp.imag) > 1e-10 * max(1.0, abs(hp.real)):
        raise UnconvergedError(f"bmd_kernel: H(xi0) not real (Im={hp.imag:.3g})")
    return 2.0 * np.pi * hp.real


def b_from_raw(raw):
    pl, pr = raw.psi_left, raw.psi_right
    return -2.0 * np.pi * np.concatenate([pl.imag, pl.real, pr.real])


def b_vector(s, xi0=0.0, resolution=None):
    """Slit velocities b_l(xi0, s), computed as b_l(0, s - xi0)."""
    if xi0 != 0.0:
        return b_vector(geometry.translate(s, xi0), 0.0, resolution)
    if s.n_slits == 0:
        return np.zeros(0)
    return b_from_raw(solve_kernel(s, 0.0, resolution, adaptive=True).raw)


class _Cache:
    """Optional memo of solutions keyed by (s, xi0) quantized at 1e-9."""

    def __init__(self):
        self.enabled = False
        self.maxsize = 256
        self._data = OrderedDict()
        self._lock = threading.Lock()

    def key(self, s, xi0, m):
        q = np.round(np.concatenate([s.as_array(), [xi0]]) / 1e-9).astype(np.int64)
        return (m, q.tobytes())

    def get(self, key):
        with self._lock:
            sol = self._data.get(key)
            if sol is not None:
                self._data.move_to_end(key)
            return sol

    def put(self, key, sol):
        with self._lock:
            self._data[key] = sol
            while len(self._data) > self.maxsize:
                self._data.popitem(last=False)

    def clear(self):
        with self._lock:
            self._data.clear()


_cache = _Cache()


def enable_cache(maxsize=256):
    _cache.maxsize = maxsize
    _cache.enabled = True


def disable_cache():
    _cache.enabled = False
    _cache.clear()
