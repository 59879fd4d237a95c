"""numba-compiled hot loops: kernel collocation solve, kernel evaluation, map flows.

Every function here has a twin with the same signature in ``_kernels_numpy``.
Geometry arrays ``geo`` have rows ``(center_x, height, half_length)`` in
coordinates translated so that the pole of the kernel sits at the origin.
"""

import math

import numpy as np
from numba import njit

PI = math.pi


@njit(cache=True)
def _phi(zeta):
    # inverse Joukowski map, |phi| <= 1, cut on [-1, 1]
    s = np.sqrt(zeta - 1.0) * np.sqrt(zeta + 1.0)
    return 1.0 / (zeta + s)


@njit(cache=True)
def _h_eval(z, coef, geo, own, phi_own):
    n = coef.shape[0]
    m = coef.shape[1]
    ar = 0.0
    ai = 0.0
    for i in range(n):
        cx = geo[i, 0]
        cy = geo[i, 1]
        hl = geo[i, 2]
        if i == own:
            p = phi_own
        else:
            p = _phi(complex((z.real - cx) / hl, (z.imag - cy) / hl))
        q = _phi(complex((z.real - cx) / hl, (z.imag + cy) / hl))
        pk = p
        qk = q
        for k in range(m):
            d = pk - qk
            ar += coef[i, k] * d.real
            ai += coef[i, k] * d.imag
            pk = pk * p
            qk = qk * q
    return complex(-PI * ai, PI * ar)


@njit(cache=True)
def h_points(zs, coef, geo, own, tpar, side):
    """Regular part H at each ``zs[p]``; ``own[p] >= 0`` marks a point on that slit
    at parameter ``tpar[p]`` approached from ``side[p]`` (+1 above, -1 below)."""
    out = np.empty(zs.shape[0], dtype=np.complex128)
    for p in range(zs.shape[0]):
        t = tpar[p]
        ph = complex(t, -side[p] * math.sqrt(max(0.0, 1.0 - t * t)))
        out[p] = _h_eval(zs[p], coef, geo, own[p], ph)
    return out


@njit(cache=True)
def _lstsq(a, b):
    m, n = a.shape
    r = a.copy()
    qb = b.copy()
    for j in range(n):
        norm = 0.0
        for i in range(j, m):
            norm += r[i, j] * r[i, j]
        norm = math.sqrt(norm)
        if norm == 0.0:
            continue
        alpha = -norm if r[j, j] >= 0.0 else norm
        v = r[j:, j].copy()
        v[0] -= alpha
        vn = 0.0
        for i in range(v.shape[0]):
            vn += v[i] * v[i]
        if vn == 0.0:
            continue
        for c in range(j, n):
            s = 0.0
            for i in range(v.shape[0]):
                s += v[i] * r[j + i, c]
            s = 2.0 * s / vn
            for i in range(v.shape[0]):
                r[j + i, c] -= s * v[i]
        s = 0.0
        for i in range(v.shape[0]):
            s += v[i] * qb[j + i]
        s = 2.0 * s / vn
        for i in range(v.shape[0]):
            qb[j + i] -= s * v[i]
    x = np.zeros(n)
    dmax = 0.0
    dmin = np.inf
    for i in range(n - 1, -1, -1):
        acc = qb[i]
        for c in range(i + 1, n):
            acc -= r[i, c] * x[c]
        d = abs(r[i, i])
        dmax = max(dmax, d)
        dmin = min(dmin, d)
        x[i] = acc / r[i, i] if d > 0.0 else 0.0
    cond = dmax / dmin if dmin > 0.0 else np.inf
    return x, cond


@njit(cache=True)
def solve_density(geo, m):
    """Collocation least squares for the slit densities and level constants.

    Returns ``(coef, c, residual, cond, psi_left, psi_right, h_pole)``.
    """
    n = geo.shape[0]
    nn = 2 * m
    a = np.zeros((n * nn, n * m + n))
    b = np.zeros(n * nn)
    for j in range(n):
        cxj = geo[j, 0]
        yj = geo[j, 1]
        hlj = geo[j, 2]
        for p in range(nn):
            th = PI * (p + 0.5) / nn
            t = math.cos(th)
            zx = cxj + hlj * t
            row = j * nn + p
            b[row] = -(yj / (zx * zx + yj * yj)) / PI
            a[row, n * m + j] = -1.0
            for i in range(n):
                cx = geo[i, 0]
                cy = geo[i, 1]
                hl = geo[i, 2]
                q = _phi(complex((zx - cx) / hl, (yj + cy) / hl))
                qk = q
                if i == j:
                    for k in range(m):
                        a[row, i * m + k] = PI * (math.cos((k + 1) * th) - qk.real)
                        qk = qk * q
                else:
                    p_ = _phi(complex((zx - cx) / hl, (yj - cy) / hl))
                    pk = p_
                    for k in range(m):
                        a[row, i * m + k] = PI * (pk.real - qk.real)
                        pk = pk * p_
                        qk = qk * q
    x, cond = _lstsq(a, b)
    coef = np.empty((n, m))
    for i in range(n):
        for k in range(m):
            coef[i, k] = x[i * m + k]
    c = x[n * m:].copy()

    resid = 0.0
    for j in range(n):
        for q in range(nn + 1):
            t = math.cos(PI * q / nn)
            z = complex(geo[j, 0] + geo[j, 2] * t, geo[j, 1])
            ph = complex(t, -math.sqrt(max(0.0, 1.0 - t * t)))
            v = _h_eval(z, coef, geo, j, ph).imag + (z.imag / (z.real * z.real + z.imag * z.imag)) / PI
            resid = max(resid, abs(v - c[j]))

    psi_l = np.empty(n, dtype=np.complex128)
    psi_r = np.empty(n, dtype=np.complex128)
    for j in range(n):
        zl = complex(geo[j, 0] - geo[j, 2], geo[j, 1])
        zr = complex(geo[j, 0] + geo[j, 2], geo[j, 1])
        psi_l[j] = _h_eval(zl, coef, geo, j, complex(-1.0, 0.0)) - 1.0 / (PI * zl)
        psi_r[j] = _h_eval(zr, coef, geo, j, complex(1.0, 0.0)) - 1.0 / (PI * zr)
    h_pole = _h_eval(complex(0.0, 0.0), coef, geo, -1, complex(0.0, 0.0))
    return coef, c, resid, cond, psi_l, psi_r, h_pole


@njit(cache=True)
def _weights(tau, k, seg):
    # Lagrange weights on the nodes (t0, mid, t1); seg[k, 8] == 0 selects linear
    th = (tau - seg[k, 0]) / (seg[k, 1] - seg[k, 0])
    if seg[k, 8] != 0.0:
        return 2.0 * (th - 0.5) * (th - 1.0), -4.0 * th * (th - 1.0), 2.0 * th * (th - 0.5)
    return 1.0 - th, 0.0, th


@njit(cache=True)
def _driver(tau, k, seg):
    w0, wm, w1 = _weights(tau, k, seg)
    return w0 * seg[k, 2] + wm * seg[k, 3] + w1 * seg[k, 4]


@njit(cache=True)
def _field(z, tau, k, seg, shift, geo, coef):
    w0, wm, w1 = _weights(tau, k, seg)
    xi = w0 * seg[k, 2] + wm * seg[k, 3] + w1 * seg[k, 4]
    ad = w0 * seg[k, 5] + wm * seg[k, 6] + w1 * seg[k, 7]
    f = ad / (z - xi)
    if coef.shape[2] > 0:
        hh = w0 * _h_eval(z - shift[k, 0], coef[k, 0], geo[k, 0], -1, 0j)
        if wm != 0.0:
            hh += wm * _h_eval(z - shift[k, 1], coef[k, 1], geo[k, 1], -1, 0j)
        hh += w1 * _h_eval(z - shift[k, 2], coef[k, 2], geo[k, 2], -1, 0j)
        f -= PI * ad * hh
    return f


@njit(cache=True)
def _rk4(z, tau, h, k, seg, shift, geo, coef):
    k1 = _field(z, tau, k, seg, shift, geo, coef)
    k2 = _field(z + 0.5 * h * k1, tau + 0.5 * h, k, seg, shift, geo, coef)
    k3 = _field(z + 0.5 * h * k2, tau + 0.5 * h, k, seg, shift, geo, coef)
    k4 = _field(z + h * k3, tau + h, k, seg, shift, geo, coef)
    return z + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0


@njit(cache=True)
def _segment(z, a, b, k, seg, shift, geo, coef, rtol, eps_abs):
    # adaptive RK4 with step doubling on [a, b] inside segment k (b < a allowed)
    h = b - a
    tau = a
    span = abs(b - a)
    hmin = 1e-15 * max(abs(a), abs(b), span)
    while (b - tau) * (b - a) > 0.0:
        last = abs(h) >= abs(b - tau)
        if last:
            h = b - tau
        d = abs(z - _driver(tau, k, seg))
        if d < eps_abs:
            return z, 1, tau
        zf = _rk4(z, tau, h, k, seg, shift, geo, coef)
        zh = _rk4(z, tau, 0.5 * h, k, seg, shift, geo, coef)
        z2 = _rk4(zh, tau + 0.5 * h, 0.5 * h, k, seg, shift, geo, coef)
        err = abs(z2 - zf) / 15.0
        tol = rtol * min(max(d, eps_abs), 1.0)
        if err <= tol and z2.imag > 0.0 and zf.imag > 0.0:
            z = z2
            tau = b if last else tau + h
            h *= 4.0 if err == 0.0 else min(4.0, 0.9 * (tol / err) ** 0.2)
        else:
            if abs(h) <= hmin:
                return z, 1, tau
            if err > 0.0 and err == err and z2.imag > 0.0 and zf.imag > 0.0:
                h *= max(0.1, 0.9 * (tol / err) ** 0.2)
            else:
                h *= 0.25
            if abs(h) < hmin:
                h = hmin if h > 0 else -hmin
    return z, 0, b


@njit(cache=True)
def flow_points(zs, t_from, t_to, seg, shift, geo, coef, rtol, eps_abs):
    """Integrate dz/dt = adot/(z - xi) - pi*adot*H_t(z) for every point from ``t_from`` to ``t_to``.

    Segment rows are ``(t0, t1, xi0, xi_mid, xi1, adot0, adot_mid, adot1, quadratic)``;
    ``H_t`` is interpolated in time from the kernels stored at the three nodes.

    Status per point: 0 reached ``t_to``, 1 absorbed by the driver (time in ``tstop``).
    """
    npts = zs.shape[0]
    out = zs.copy()
    status = np.zeros(npts, dtype=np.int64)
    tstop = np.full(npts, t_to)
    nseg = seg.shape[0]
    if t_to == t_from or nseg == 0:
        return out, status, tstop
    fwd = t_to > t_from
    t1s = seg[:, 1].copy()
    for p in range(npts):
        z = zs[p]
        if fwd:
            k = np.searchsorted(t1s, t_from, side="right")
        else:
            k = np.searchsorted(t1s, t_from, side="left")
        k = min(max(k, 0), nseg - 1)
        t = t_from
        while True:
            if fwd:
                b = min(seg[k, 1], t_to)
            else:
                b = max(seg[k, 0], t_to)
            if b != t:
                z, st, ts = _segment(z, t, b, k, seg, shift, geo, coef, rtol, eps_abs)
                if st != 0:
                    status[p] = st
                    tstop[p] = ts
                    break
            t = b
            if t == t_to:
                break
            k = k + 1 if fwd else k - 1
            if k < 0 or k >= nseg:
                break
        out[p] = z
    return out, status, tstop
