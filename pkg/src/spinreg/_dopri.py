"""Dormand-Prince 5(4) integrator for linear, time-dependent Liouvillians.

The generator has the form

    L(t) = L0 + c(t) M + conj(c(t)) N,
    c(t) = sum_k pi * amp_k * env_k(t) * exp(i theta_k(t)),

which covers any set of rotating-wave electron drive tones.  The state can be
a single vectorised density matrix (n x 1) or a block of columns (n x m),
the latter being used to build propagators.
"""
from __future__ import annotations

import numpy as np
from numba import njit

# Dormand-Prince tableau
_C2, _C3, _C4, _C5 = 1 / 5, 3 / 10, 4 / 5, 8 / 9
_A21 = 1 / 5
_A31, _A32 = 3 / 40, 9 / 40
_A41, _A42, _A43 = 44 / 45, -56 / 15, 32 / 9
_A51, _A52, _A53, _A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
_A61, _A62, _A63, _A64, _A65 = 9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656
_B1, _B3, _B4, _B5, _B6 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
# difference between 5th and embedded 4th order weights
_E1 = 71 / 57600
_E3 = -71 / 16695
_E4 = 71 / 1920
_E5 = -17253 / 339200
_E6 = 22 / 525
_E7 = -1 / 40

KIND_RECT, KIND_GAUSS, KIND_CHIRP = 0, 1, 2


@njit(cache=True)
def drive_coefficient(t, tones):
    """Complex drive coefficient c(t) in rad/s.

    ``tones`` rows: amp, freq, phase, chirp_rate, t_ref, kind, center, sigma.
    """
    c = 0.0 + 0.0j
    for k in range(tones.shape[0]):
        amp = tones[k, 0]
        dt = t - tones[k, 4]
        th = tones[k, 2] + 2.0 * np.pi * (tones[k, 1] * dt + 0.5 * tones[k, 3] * dt * dt)
        a = np.pi * amp
        if tones[k, 5] == KIND_GAUSS:
            x = (t - tones[k, 6]) / tones[k, 7]
            a *= np.exp(-0.5 * x * x)
        c += a * (np.cos(th) + 1j * np.sin(th))
    return c


@njit(cache=True, fastmath=True)
def _rhs(t, y, gen, tones, out):
    """out = L(t) @ y, column block by column block.

    ``y`` is flat: m stacked columns of length D.  L0 is in CSR form and the
    drive superoperators in COO form; gen = (indptr, indices, l0, mi, mj, mv,
    ni, nj, nv).
    """
    indptr, indices, l0, mi, mj, mv, ni, nj, nv = gen
    D = indptr.shape[0] - 1
    m = y.shape[0] // D
    has_drive = tones.shape[0] > 0
    c = drive_coefficient(t, tones) if has_drive else 0.0j
    cc = np.conj(c)
    for q in range(m):
        o = q * D
        for i in range(D):
            acc = 0.0 + 0.0j
            for k in range(indptr[i], indptr[i + 1]):
                acc += l0[k] * y[o + indices[k]]
            out[o + i] = acc
        if has_drive:
            for k in range(mi.shape[0]):
                out[o + mi[k]] += c * mv[k] * y[o + mj[k]]
            for k in range(ni.shape[0]):
                out[o + ni[k]] += cc * nv[k] * y[o + nj[k]]


@njit(cache=True, fastmath=True)
def _combo(y, h, ks, coefs, nk, out):
    """out = y + h * sum_s coefs[s] * ks[s] over the first nk stages."""
    out[:] = y
    for s in range(nk):
        a = h * coefs[s]
        if a != 0.0:
            ksrow = ks[s]
            for i in range(y.shape[0]):
                out[i] += a * ksrow[i]


_TAB = np.array([
    [0, 0, 0, 0, 0, 0, 0],
    [_A21, 0, 0, 0, 0, 0, 0],
    [_A31, _A32, 0, 0, 0, 0, 0],
    [_A41, _A42, _A43, 0, 0, 0, 0],
    [_A51, _A52, _A53, _A54, 0, 0, 0],
    [_A61, _A62, _A63, _A64, _A65, 0, 0],
    [_B1, 0.0, _B3, _B4, _B5, _B6, 0],
])
_CS = np.array([0.0, _C2, _C3, _C4, _C5, 1.0, 1.0])
_ERRW = np.array([_E1, 0.0, _E3, _E4, _E5, _E6, _E7])


@njit(cache=True, fastmath=True)
def _err_norm(ks, h, y0, y1, rtol, atol):
    s = 0.0
    n = y0.shape[0]
    for i in range(n):
        e = h * (_E1 * ks[0, i] + _E3 * ks[2, i] + _E4 * ks[3, i] + _E5 * ks[4, i]
                 + _E6 * ks[5, i] + _E7 * ks[6, i])
        sc = atol + rtol * max(abs(y0[i]), abs(y1[i]))
        r = abs(e) / sc
        s += r * r
    return np.sqrt(s / n)


@njit(cache=True)
def dopri5(y0, t0, t1, gen, tones, rtol, atol, h_max, h0):
    """Integrate the flat state ``y0`` from t0 to t1.

    Returns (y, h_next, n_accepted, status, t_fail, err_fail); status 0 is
    success, 1 is step-size underflow.
    """
    y = y0.copy()
    t = t0
    span = t1 - t0
    if span <= 0.0:
        return y, h0, 0, 0, t, 0.0
    h = min(h0, h_max, span)
    if h <= 0.0:
        h = min(h_max, span)
    h_min = 1e-15 * max(abs(t0), abs(t1)) + 1e-18
    ks = np.empty((7, y.shape[0]), dtype=np.complex128)
    ytmp = np.empty_like(y)
    ynew = np.empty_like(y)
    _rhs(t, y, gen, tones, ks[0])
    n_acc = 0
    h_nom = h
    while t < t1:
        last = False
        h_nom = h
        if t + h >= t1 or (t1 - t - h) < 1e-12 * h:
            h = t1 - t
            last = True
        for st in range(1, 6):
            _combo(y, h, ks, _TAB[st], st, ytmp)
            _rhs(t + _CS[st] * h, ytmp, gen, tones, ks[st])
        _combo(y, h, ks, _TAB[6], 6, ynew)
        _rhs(t + h, ynew, gen, tones, ks[6])
        en = _err_norm(ks, h, y, ynew, rtol, atol)
        if en <= 1.0:
            t = t1 if last else t + h
            y[:] = ynew
            ks[0, :] = ks[6]
            n_acc += 1
            fac = 5.0 if en == 0.0 else min(5.0, max(0.2, 0.9 * en ** -0.2))
            h = min(h * fac, h_max)
            if last:
                h = max(h, h_nom)
        else:
            h = h * max(0.2, 0.9 * en ** -0.2)
            if h < h_min:
                return y, h, n_acc, 1, t, en
    return y, h, n_acc, 0, t, 0.0


def csr_generator(L0, M, N):
    """Sparse arrays for L0 + c M + conj(c) N as used by ``_rhs``."""
    rows, cols = np.nonzero(L0)
    indptr = np.zeros(L0.shape[0] + 1, dtype=np.int64)
    np.add.at(indptr, rows + 1, 1)
    indptr = np.cumsum(indptr)
    mi, mj = np.nonzero(M)
    ni, nj = np.nonzero(N)
    return (indptr, cols.astype(np.int64), np.ascontiguousarray(L0[rows, cols]),
            mi.astype(np.int64), mj.astype(np.int64), np.ascontiguousarray(M[mi, mj]),
            ni.astype(np.int64), nj.astype(np.int64), np.ascontiguousarray(N[ni, nj]))
