"""Time-piecewise description of a Komatu-Loewner vector field.

Each segment ``[t0, t1]`` stores the driver and capacity rate at three nodes
(start, midpoint, end) and, for slit domains, a kernel solution at each node.
The flow kernels interpolate quadratically between the nodes (or linearly
when the segment is flagged so), which is all ``map_point``, hull tracing and
the co-evolution probes need.
"""

import numpy as np

from ._accel import backend
from .config import settings


class FlowHistory:
    def __init__(self, n_slits, kernels=None):
        self.n = n_slits
        self.k = kernels or backend
        self.size = 0
        self._seg = np.zeros((16, 9))
        self._shift = np.zeros((16, 3))
        self._geo = np.zeros((16, 3, n_slits, 3))
        self._coef = np.zeros((16, 3, n_slits, 0 if n_slits == 0 else 4))

    def _grow(self, m):
        cap = self._seg.shape[0]
        mcur = self._coef.shape[3]
        if self.size < cap and m <= mcur:
            return
        ncap = cap * 2 if self.size >= cap else cap
        mnew = max(m, mcur)
        seg = np.zeros((ncap, 9))
        seg[:cap] = self._seg
        shift = np.zeros((ncap, 3))
        shift[:cap] = self._shift
        geo = np.zeros((ncap, 3, self.n, 3))
        geo[:cap] = self._geo
        coef = np.zeros((ncap, 3, self.n, mnew))
        coef[:cap, :, :, :mcur] = self._coef
        self._seg, self._shift, self._geo, self._coef = seg, shift, geo, coef

    def append(self, t0, t1, xi, adot, raws=None, quadratic=True):
        """Add a segment; ``xi``/``adot`` are 3-tuples at (t0, mid, t1), ``raws`` the
        kernels (``RawKernel`` solved with the pole at the origin) at the same nodes."""
        if self.size and t0 != self._seg[self.size - 1, 1]:
            raise ValueError("flow history segments must be contiguous")
        m = max((r.coef.shape[1] for r in raws if r is not None), default=0) if raws else 0
        self._grow(m if self.n else 0)
        i = self.size
        self._seg[i] = (t0, t1, xi[0], xi[1], xi[2], adot[0], adot[1], adot[2],
                        1.0 if quadratic else 0.0)
        self._shift[i] = xi
        if self.n:
            for node, raw in enumerate(raws):
                if raw is None:
                    continue
                self._geo[i, node] = raw.geo
                self._coef[i, node] = 0.0
                self._coef[i, node, :, :raw.coef.shape[1]] = raw.coef
        self.size += 1

    def extend_frozen(self, ts, xis, adot=2.0):
        """Bulk-append slit-free segments ``[ts[k], ts[k+1]]`` with driver ``xis[k]``."""
        if self.n:
            raise ValueError("bulk append is only for slit-free histories")
        ts = np.asarray(ts, dtype=float)
        k = len(ts) - 1
        if k <= 0:
            return
        while self._seg.shape[0] < self.size + k:
            self.size, cap = self.size, self._seg.shape[0]
            self._seg = np.concatenate([self._seg, np.zeros((cap, 9))])
            self._shift = np.concatenate([self._shift, np.zeros((cap, 3))])
            self._geo = np.zeros((2 * cap, 3, 0, 3))
            self._coef = np.zeros((2 * cap, 3, 0, 0))
        rows = self._seg[self.size:self.size + k]
        rows[:, 0], rows[:, 1] = ts[:-1], ts[1:]
        for c in (2, 3, 4):
            rows[:, c] = xis[:k]
        rows[:, 5:8] = adot
        rows[:, 8] = 0.0
        self._shift[self.size:self.size + k] = np.asarray(xis[:k])[:, None]
        self.size += k

    @property
    def t_start(self):
        return self._seg[0, 0] if self.size else 0.0

    @property
    def t_end(self):
        return self._seg[self.size - 1, 1] if self.size else 0.0

    @property
    def times(self):
        return np.concatenate([[self.t_start], self._seg[:self.size, 1]])

    def arrays(self, lo=0, hi=None):
        hi = self.size if hi is None else hi
        return (self._seg[lo:hi], self._shift[lo:hi], self._geo[lo:hi], self._coef[lo:hi])

    def driver(self, t):
        """Driver value used by the field at time ``t`` (right-continuous at nodes)."""
        if self.size == 0:
            raise ValueError("empty flow history")
        seg = self._seg[:self.size]
        k = int(np.clip(np.searchsorted(seg[:, 1], t, side="right"), 0, self.size - 1))
        return float(self.k._driver(float(t), k, seg))

    def flow(self, zs, t_from, t_to, rtol=None, eps_abs=None, window=None):
        """Flow points from ``t_from`` to ``t_to`` (either direction).

        Returns ``(values, status, t_stop)``; status 1 marks absorption by the driver.
        ``window=(lo, hi)`` restricts the segments handed to the kernel.
        """
        zs = np.ascontiguousarray(np.atleast_1d(np.asarray(zs, dtype=complex)))
        rtol = settings.flow_rtol if rtol is None else rtol
        eps_abs = settings.absorb_eps if eps_abs is None else eps_abs
        if self.size == 0 or t_from == t_to:
            return zs.copy(), np.zeros(len(zs), dtype=np.int64), np.full(len(zs), float(t_to))
        if window is None:
            seg = self._seg[:self.size]
            a, b = sorted((t_from, t_to))
            lo = max(0, int(np.searchsorted(seg[:, 1], a, side="right")) - 1)
            hi = min(self.size, int(np.searchsorted(seg[:, 0], b, side="left")) + 1)
            window = (lo, hi)
        arrs = self.arrays(*window)
        return self.k.flow_points(zs, float(t_from), float(t_to), *arrs, float(rtol), float(eps_abs))
