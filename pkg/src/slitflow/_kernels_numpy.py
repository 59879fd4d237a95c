"""Pure-numpy implementations mirroring ``_kernels_numba`` (same signatures and results)."""

import math

import numpy as np

PI = math.pi


def _phi(zeta):
    zeta = np.asarray(zeta, dtype=complex)
    return 1.0 / (zeta + np.sqrt(zeta - 1.0) * np.sqrt(zeta + 1.0))


def _powers(p, m):
    # p[..., None] ** (1..m) by cumulative products (matches the loop kernel)
    return np.cumprod(np.repeat(p[..., None], m, axis=-1), axis=-1)


def _h_eval_many(zs, coef, geo, own=None, phi_own=None):
    n, m = coef.shape
    zs = np.asarray(zs, dtype=complex)
    if n == 0:
        return np.zeros(zs.shape, dtype=complex)
    cx, cy, hl = geo[:, 0], geo[:, 1], geo[:, 2]
    re = (zs.real[:, None] - cx) / hl
    p = _phi(re + 1j * ((zs.imag[:, None] - cy) / hl))
    q = _phi(re + 1j * ((zs.imag[:, None] + cy) / hl))
    if own is not None:
        rows = np.nonzero(own >= 0)[0]
        p[rows, own[rows]] = phi_own[rows]
    d = _powers(p, m) - _powers(q, m)
    acc = np.einsum("pnk,nk->p", d, coef)
    return -PI * acc.imag + 1j * PI * acc.real


def h_points(zs, coef, geo, own, tpar, side):
    tpar = np.asarray(tpar, dtype=float)
    ph = tpar - 1j * np.asarray(side) * np.sqrt(np.maximum(0.0, 1.0 - tpar ** 2))
    return _h_eval_many(zs, coef, geo, np.asarray(own), ph)


def solve_density(geo, m):
    n = geo.shape[0]
    nn = 2 * m
    th = PI * (np.arange(nn) + 0.5) / nn
    t = np.cos(th)
    cx, cy, hl = geo[:, 0], geo[:, 1], geo[:, 2]
    zx = (cx[:, None] + hl[:, None] * t).reshape(-1)
    zy = np.repeat(cy, nn)
    own = np.repeat(np.arange(n), nn)
    a = np.zeros((n * nn, n * m + n))
    b = -(zy / (zx ** 2 + zy ** 2)) / PI
    a[np.arange(n * nn), n * m + own] = -1.0
    re = (zx[:, None] - cx) / hl
    p = _phi(re + 1j * ((zy[:, None] - cy) / hl))
    q = _phi(re + 1j * ((zy[:, None] + cy) / hl))
    block = PI * (_powers(p, m).real - _powers(q, m).real)
    cheb = np.cos(np.outer(np.tile(th, n), np.arange(1, m + 1)))
    rows = np.arange(n * nn)
    block[rows, own, :] = PI * (cheb - _powers(q[rows, own], m).real)
    a[:, :n * m] = block.reshape(n * nn, n * m)
    x, _, _, sv = np.linalg.lstsq(a, b, rcond=None)
    cond = sv[0] / sv[-1] if sv.size and sv[-1] > 0 else np.inf
    coef = x[:n * m].reshape(n, m)
    c = x[n * m:].copy()

    tq = np.cos(PI * np.arange(nn + 1) / nn)
    zq = ((cx[:, None] + hl[:, None] * tq) + 1j * cy[:, None]).reshape(-1)
    ownq = np.repeat(np.arange(n), nn + 1)
    tt = np.tile(tq, n)
    hq = _h_eval_many(zq, coef, geo, ownq, tt - 1j * np.sqrt(np.maximum(0.0, 1.0 - tt ** 2)))
    v = hq.imag + (zq.imag / np.abs(zq) ** 2) / PI
    resid = float(np.max(np.abs(v - c[ownq]))) if n else 0.0

    zl = (cx - hl) + 1j * cy
    zr = (cx + hl) + 1j * cy
    idx = np.arange(n)
    psi_l = _h_eval_many(zl, coef, geo, idx, -np.ones(n, dtype=complex)) - 1.0 / (PI * zl)
    psi_r = _h_eval_many(zr, coef, geo, idx, np.ones(n, dtype=complex)) - 1.0 / (PI * zr)
    h_pole = complex(_h_eval_many(np.zeros(1, dtype=complex), coef, geo)[0])
    return coef, c, resid, float(cond), psi_l, psi_r, h_pole


def _weights(tau, k, seg):
    th = (tau - seg[k, 0]) / (seg[k, 1] - seg[k, 0])
    if seg[k, 8] != 0.0:
        return 2.0 * (th - 0.5) * (th - 1.0), -4.0 * th * (th - 1.0), 2.0 * th * (th - 0.5)
    return 1.0 - th, 0.0, th


def _driver(tau, k, seg):
    w = _weights(tau, k, seg)
    return w[0] * seg[k, 2] + w[1] * seg[k, 3] + w[2] * seg[k, 4]


def _field(z, tau, k, seg, shift, geo, coef):
    w = _weights(tau, k, seg)
    xi = w[0] * seg[k, 2] + w[1] * seg[k, 3] + w[2] * seg[k, 4]
    ad = w[0] * seg[k, 5] + w[1] * seg[k, 6] + w[2] * seg[k, 7]
    f = ad / (z - xi)
    if coef.shape[2] > 0:
        hh = 0j
        for node in range(3):
            if w[node] != 0.0:
                zz = np.array([z - shift[k, node]])
                hh += w[node] * _h_eval_many(zz, coef[k, node], geo[k, node])[0]
        f -= PI * ad * hh
    return f


def _rk4(z, tau, h, k, *data):
    k1 = _field(z, tau, k, *data)
    k2 = _field(z + 0.5 * h * k1, tau + 0.5 * h, k, *data)
    k3 = _field(z + 0.5 * h * k2, tau + 0.5 * h, k, *data)
    k4 = _field(z + h * k3, tau + h, k, *data)
    return z + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0


def _segment(z, a, b, k, seg, shift, geo, coef, rtol, eps_abs):
    data = (seg, shift, geo, coef)
    h = b - a
    tau = a
    hmin = 1e-15 * max(abs(a), abs(b), abs(b - a))
    while (b - tau) * (b - a) > 0.0:
        last = abs(h) >= abs(b - tau)
        if last:
            h = b - tau
        d = abs(z - _driver(tau, k, seg))
        if d < eps_abs:
            return z, 1, tau
        zf = _rk4(z, tau, h, k, *data)
        zh = _rk4(z, tau, 0.5 * h, k, *data)
        z2 = _rk4(zh, tau + 0.5 * h, 0.5 * h, k, *data)
        err = abs(z2 - zf) / 15.0
        tol = rtol * min(max(d, eps_abs), 1.0)
        inside = z2.imag > 0.0 and zf.imag > 0.0
        if err <= tol and inside:
            z = z2
            tau = b if last else tau + h
            h *= 4.0 if err == 0.0 else min(4.0, 0.9 * (tol / err) ** 0.2)
        else:
            if abs(h) <= hmin:
                return z, 1, tau
            if err > 0.0 and err == err and inside:
                h *= max(0.1, 0.9 * (tol / err) ** 0.2)
            else:
                h *= 0.25
            if abs(h) < hmin:
                h = math.copysign(hmin, h)
    return z, 0, b


def flow_points(zs, t_from, t_to, seg, shift, geo, coef, rtol, eps_abs):
    zs = np.asarray(zs, dtype=complex)
    out = zs.copy()
    status = np.zeros(len(zs), dtype=np.int64)
    tstop = np.full(len(zs), float(t_to))
    nseg = seg.shape[0]
    if t_to == t_from or nseg == 0:
        return out, status, tstop
    fwd = t_to > t_from
    for p, z in enumerate(zs):
        k = int(np.searchsorted(seg[:, 1], t_from, side="right" if fwd else "left"))
        k = min(max(k, 0), nseg - 1)
        t = t_from
        while True:
            b = min(seg[k, 1], t_to) if fwd else max(seg[k, 0], t_to)
            if b != t:
                z, st, ts = _segment(z, t, b, k, seg, shift, geo, coef, rtol, eps_abs)
                if st:
                    status[p], tstop[p] = st, ts
                    break
            t = b
            if t == t_to:
                break
            k += 1 if fwd else -1
            if not 0 <= k < nseg:
                break
        out[p] = z
    return out, status, tstop
