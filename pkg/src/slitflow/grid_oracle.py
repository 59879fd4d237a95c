"""Finite-difference oracle for Im Psi_D on a truncated rectangle.

Independent of the boundary-integral solver: the 5-point Laplacian on
``[-W, W] x [0, Y]`` with zero Dirichlet data on the outer edges is inverted
through its sine eigenbasis, and the slits enter as interior Dirichlet nodes
via a capacitance (charge) system.  ``Im H`` is assembled as

    v0 + sum_k c_k w_k,

``v0`` harmonic off the slits with value ``-Im Psi_H`` on them, ``w_k``
harmonic with value ``delta_jk`` on slit ``j``; the constants ``c`` make the
discrete flux through a contour around each slit vanish.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sfft

from . import geometry
from .config import settings
from .errors import DegenerateGeometryError, ValidationError

log = logging.getLogger(__name__)


def _poisson_h(x, y, xi0):
    return (y / ((x - xi0) ** 2 + y ** 2)) / np.pi


@dataclass
class GridKernel:
    s: geometry.SlitVector
    xi0: float
    h: float
    half_width: float
    height: float
    c: np.ndarray
    flux_matrix: np.ndarray
    charges: list = field(repr=False)
    _ops: object = field(repr=False)

    def im_psi(self, z):
        """Im Psi at grid nodes nearest to ``z`` (points must be interior nodes)."""
        zs = np.atleast_1d(np.asarray(z, dtype=complex))
        i, j = self._ops.index(zs)
        imh = self._ops.apply(i, j, self.charges[0])
        for k, ck in enumerate(self.c):
            imh = imh + ck * self._ops.apply(i, j, self.charges[k + 1])
        xs, ys = self._ops.coords(i, j)
        out = _poisson_h(xs, ys, self.xi0) + imh
        return out if np.ndim(z) else float(out[0])

    def field(self):
        """Full sampled field: (x nodes, y nodes, Im Psi array indexed [iy, ix])."""
        ops = self._ops
        f = ops.charge_grid(self.charges[0])
        for k, ck in enumerate(self.c):
            f += ck * ops.charge_grid(self.charges[k + 1])
        u = ops.solve_grid(f)
        xs = -self.half_width + self.h * np.arange(1, ops.nx + 1)
        ys = self.h * np.arange(1, ops.ny + 1)
        X, Y = np.meshgrid(xs, ys)
        return xs, ys, _poisson_h(X, Y, self.xi0) + u.T


class _Ops:
    """Green's function of the discrete Dirichlet Laplacian on the rectangle."""

    def __init__(self, h, half_width, height):
        self.h = h
        self.W = half_width
        self.Nx = int(round(2 * half_width / h))
        self.Ny = int(round(height / h))
        self.nx = self.Nx - 1
        self.ny = self.Ny - 1
        kx = np.arange(1, self.nx + 1)
        ky = np.arange(1, self.ny + 1)
        self.lam_x = (4.0 / h ** 2) * np.sin(np.pi * kx / (2 * self.Nx)) ** 2
        self.lam_y = (4.0 / h ** 2) * np.sin(np.pi * ky / (2 * self.Ny)) ** 2
        self._g = {}

    def sx(self, i):
        k = np.arange(1, self.nx + 1)
        return np.sqrt(2.0 / self.Nx) * np.sin(np.pi * np.outer(i, k) / self.Nx)

    def sy(self, j):
        ell = np.arange(1, self.ny + 1)
        return np.sqrt(2.0 / self.Ny) * np.sin(np.pi * np.outer(np.atleast_1d(j), ell) / self.Ny)

    def row_transfer(self, pairs):
        """g_k for each (row, row') pair: sum_l S_y[j,l] S_y[j',l] / lambda_kl."""
        todo = [p for p in pairs if p not in self._g and p[::-1] not in self._g]
        if todo:
            wa = self.sy([p[0] for p in todo])
            wb = self.sy([p[1] for p in todo])
            w = (wa * wb).T
            g = np.empty((self.nx, len(todo)))
            for a in range(0, self.nx, 512):
                lam = self.lam_x[a:a + 512, None] + self.lam_y[None, :]
                g[a:a + 512] = (1.0 / lam) @ w
            for n, p in enumerate(todo):
                self._g[p] = g[:, n]
        return [self._g[p] if p in self._g else self._g[p[::-1]] for p in pairs]

    def index(self, zs):
        i = np.rint((zs.real + self.W) / self.h).astype(int)
        j = np.rint(zs.imag / self.h).astype(int)
        if np.any((i < 1) | (i > self.nx) | (j < 1) | (j > self.ny)):
            raise ValidationError("bmd_kernel: grid probe outside the truncation box")
        return i, j

    def coords(self, i, j):
        return -self.W + self.h * i, self.h * j

    def greens(self, i, j, ni, nj):
        """Matrix G[(i,j) points, (ni,nj) nodes]."""
        out = np.empty((len(i), len(ni)))
        rows = sorted(set(j.tolist()))
        nrows = sorted(set(nj.tolist()))
        pairs = [(a, b) for a in rows for b in nrows]
        gs = dict(zip(pairs, self.row_transfer(pairs)))
        for a in rows:
            pm = j == a
            sxa = self.sx(i[pm])
            for b in nrows:
                nm = nj == b
                out[np.ix_(pm, nm)] = (sxa * gs[(a, b)]) @ self.sx(ni[nm]).T
        return out

    def apply(self, i, j, charge):
        ni, nj, f = charge
        return self.greens(i, j, ni, nj) @ f

    def charge_grid(self, charge):
        ni, nj, f = charge
        g = np.zeros((self.nx, self.ny))
        np.add.at(g, (ni - 1, nj - 1), f)
        return g

    def solve_grid(self, f):
        fh = sfft.dstn(f, type=1, norm="ortho")
        fh /= self.lam_x[:, None] + self.lam_y[None, :]
        return sfft.idstn(fh, type=1, norm="ortho")


def _slit_nodes(ops, s, j):
    h = ops.h
    js = int(round(s.y[j] / h))
    ia = int(round((s.x[j] + ops.W) / h))
    ib = int(round((s.xr[j] + ops.W) / h))
    snap = max(abs(js * h - s.y[j]), abs(ia * h - ops.W - s.x[j]), abs(ib * h - ops.W - s.xr[j]))
    if snap > 1e-12:
        log.warning("grid oracle: slit %d snapped to the grid (shift %.3g)", j, snap)
    if ib <= ia:
        raise DegenerateGeometryError(f"bmd_kernel: slit {j} shorter than the grid spacing")
    ni = np.arange(ia, ib + 1)
    return ni, np.full(ni.shape, js)


def grid_kernel(s, xi0=0.0, h=None, half_width=None, height=None):
    """Solve the finite-difference oracle for Im Psi_D(., xi0)."""
    geometry.require_valid(s, "bmd_kernel")
    h = settings.grid_h if h is None else h
    if half_width is None:
        # integer width keeps dyadic slit coordinates on the nodes
        half_width = float(np.ceil(max(8.0, 4.0 * s.extent(), 2.0 * abs(xi0) + 1.0)))
    height = half_width if height is None else height
    if s.n_slits and (np.abs(np.concatenate([s.x, s.xr])).max() >= half_width
                      or s.y.max() >= height):
        raise ValidationError("bmd_kernel: truncation box does not contain the slits")
    if abs(xi0) >= half_width:
        raise ValidationError("bmd_kernel: xi0 outside the truncation box")
    ops = _Ops(h, half_width, height)
    nodes = [_slit_nodes(ops, s, j) for j in range(s.n_slits)]
    if not nodes:
        return GridKernel(s, xi0, h, half_width, height, np.zeros(0), np.zeros((0, 0)),
                          [(np.zeros(0, int), np.zeros(0, int), np.zeros(0))], ops)
    ni = np.concatenate([n[0] for n in nodes])
    nj = np.concatenate([n[1] for n in nodes])
    owner = np.concatenate([np.full(len(n[0]), k) for k, n in enumerate(nodes)])
    cap = ops.greens(ni, nj, ni, nj)
    lu = np.linalg.cholesky(cap)

    def charge_for(values):
        y = np.linalg.solve(lu, values)
        return ni, nj, np.linalg.solve(lu.T, y)

    xs, ys = ops.coords(ni, nj)
    charges = [charge_for(-_poisson_h(xs, ys, xi0))]
    charges += [charge_for((owner == k).astype(float)) for k in range(s.n_slits)]

    # discrete flux sum_{edges}(u_out - u_in) over the contour around each slit
    flux = np.zeros((s.n_slits, len(charges)))
    for k, (ki, kj) in enumerate(nodes):
        inside = set(zip(ki.tolist(), kj.tolist()))
        ei, ej, oi, oj = [], [], [], []
        for a, b in inside:
            for da, db in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                if (a + da, b + db) not in inside:
                    ei.append(a), ej.append(b), oi.append(a + da), oj.append(b + db)
        ei, ej, oi, oj = map(np.array, (ei, ej, oi, oj))
        for q, ch in enumerate(charges):
            u_in = ops.apply(ei, ej, ch)
            u_out = ops.apply(oi, oj, ch) if oj.min() > 0 else _apply_with_floor(ops, oi, oj, ch)
            flux[k, q] = np.sum(u_out - u_in)
    fw = flux[:, 1:]
    if not np.linalg.cond(fw) < 1e12:
        raise DegenerateGeometryError("bmd_kernel: singular flux matrix on this grid")
    c = np.linalg.solve(fw, -flux[:, 0])
    return GridKernel(s, xi0, h, half_width, height, c, fw, charges, ops)


def _apply_with_floor(ops, i, j, ch):
    out = np.zeros(len(i))
    m = j > 0
    out[m] = ops.apply(i[m], j[m], ch)
    return out
