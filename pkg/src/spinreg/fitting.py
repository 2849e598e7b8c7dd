"""Curve fits used to turn simulated traces into physical numbers."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import curve_fit


class FitError(RuntimeError):
    def __init__(self, msg, residual=None):
        super().__init__(msg if residual is None else f"{msg} (rms residual {residual:.3g})")
        self.residual = residual


@dataclass
class RabiFit:
    amplitude: float   # max transfer a = Omega^2 / (Omega^2 + d^2)
    frequency: float   # generalized Rabi frequency W (Hz)
    decay: float       # 1/e envelope time (s), inf if not fitted
    offset: float
    residual: float

    @property
    def rabi(self) -> float:
        """On-resonance Rabi frequency Omega = W sqrt(a)."""
        return self.frequency * np.sqrt(max(self.amplitude, 0.0))

    @property
    def detuning(self) -> float:
        """|d| = W sqrt(1 - a)."""
        return self.frequency * np.sqrt(max(1.0 - self.amplitude, 0.0))


def _fft_guess(t, y):
    t = np.asarray(t)
    y = np.asarray(y) - np.mean(y)
    n = len(t)
    dt = (t[-1] - t[0]) / (n - 1)
    pad = 16 * n
    spec = np.abs(np.fft.rfft(y, pad))
    freqs = np.fft.rfftfreq(pad, dt)
    k = np.argmax(spec[1:]) + 1
    return freqs[k]


def fit_rabi(t, p, with_decay=False, f_guess=None) -> RabiFit:
    """Fit p(t) = a/2 (1 - exp(-t/tau) cos(2 pi f t)) to a flip probability vs pulse length."""
    t = np.asarray(t, float)
    p = np.asarray(p, float)
    t_rel = t  # pulse lengths, measured from the start of the pulse
    f0 = f_guess if f_guess is not None else _fft_guess(t, p)
    a0 = min(max(2 * (np.max(p) - np.min(p)) / 2, 0.05), 1.0)

    if with_decay:
        def model(tt, a, f, g):
            return 0.5 * a * (1 - np.exp(-g * tt) * np.cos(2 * np.pi * f * tt))
        p0 = [a0, f0, 1.0 / (t_rel[-1] + 1e-30)]
        bounds = ([0, 0, 0], [1.5, np.inf, np.inf])
    else:
        def model(tt, a, f):
            return 0.5 * a * (1 - np.cos(2 * np.pi * f * tt))
        p0 = [a0, f0]
        bounds = ([0, 0], [1.5, np.inf])
    best = None
    for scale in (1.0, 0.5, 2.0):
        guess = list(p0)
        guess[1] = f0 * scale
        try:
            popt, _ = curve_fit(model, t_rel, p, p0=guess, bounds=bounds, maxfev=20000)
        except RuntimeError:
            continue
        res = np.sqrt(np.mean((model(t_rel, *popt) - p) ** 2))
        if best is None or res < best[1]:
            best = (popt, res)
    if best is None:
        raise FitError("Rabi fit did not converge")
    popt, res = best
    decay = 1.0 / popt[2] if with_decay and popt[2] > 0 else np.inf
    return RabiFit(float(popt[0]), float(popt[1]), float(decay), 0.0, float(res))


@dataclass
class CosineFit:
    amplitude: float
    frequency: float
    phase: float
    offset: float
    decay: float
    residual: float


def fit_decaying_cosine(t, y, f_guess=None, gaussian=False, fixed_frequency=None) -> CosineFit:
    """y = c + A exp(-(t/T)^n) cos(2 pi f t + phi) with n = 1 or 2."""
    t = np.asarray(t, float)
    y = np.asarray(y, float)
    n_exp = 2 if gaussian else 1
    c0 = float(np.mean(y))
    A0 = float((np.max(y) - np.min(y)) / 2) or 1e-3
    span = t[-1] - t[0]
    if fixed_frequency is not None:
        def model(tt, A, phi, c, g):
            return c + A * np.exp(-np.abs(g * tt) ** n_exp) * np.cos(2 * np.pi * fixed_frequency * tt + phi)
        starts = [[A0, ph, c0, 1 / span] for ph in (0, np.pi / 2, np.pi, -np.pi / 2)]
    else:
        f0 = f_guess if f_guess is not None else _fft_guess(t, y)

        def model(tt, A, f, phi, c, g):
            return c + A * np.exp(-np.abs(g * tt) ** n_exp) * np.cos(2 * np.pi * f * tt + phi)
        starts = [[A0, f0, ph, c0, 1 / span] for ph in (0, np.pi / 2, np.pi, -np.pi / 2)]
    best = None
    for p0 in starts:
        try:
            popt, _ = curve_fit(model, t, y, p0=p0, maxfev=20000)
        except RuntimeError:
            continue
        res = np.sqrt(np.mean((model(t, *popt) - y) ** 2))
        if best is None or res < best[1]:
            best = (popt, res)
    if best is None:
        raise FitError("cosine fit did not converge")
    popt, res = best
    if fixed_frequency is not None:
        A, phi, c, g = popt
        f = fixed_frequency
    else:
        A, f, phi, c, g = popt
    if A < 0:
        A, phi = -A, phi + np.pi
    if f < 0:
        f, phi = -f, -phi
    decay = 1.0 / abs(g) if g != 0 else np.inf
    return CosineFit(float(A), float(f), float(np.angle(np.exp(1j * phi))), float(c), float(decay), float(res))


def fit_exponential(t, y, offset=None):
    """y = c + A exp(-t/T); returns (T, A, c)."""
    t = np.asarray(t, float)
    y = np.asarray(y, float)
    if offset is None:
        def model(tt, A, T, c):
            return c + A * np.exp(-tt / T)
        p0 = [y[0] - y[-1], (t[-1] - t[0]) / 2, y[-1]]
    else:
        def model(tt, A, T):
            return offset + A * np.exp(-tt / T)
        p0 = [y[0] - offset, (t[-1] - t[0]) / 2]
    popt, _ = curve_fit(model, t, y, p0=p0, maxfev=20000)
    if offset is None:
        A, T, c = popt
    else:
        (A, T), c = popt, offset
    return float(T), float(A), float(c)


def rabi_lineshape(delta, center, rabi, duration, contrast=1.0, offset=0.0):
    """Transfer probability of a square pulse versus drive frequency."""
    d = np.asarray(delta) - center
    W = np.sqrt(rabi ** 2 + d ** 2)
    return offset + contrast * (rabi ** 2 / W ** 2) * np.sin(np.pi * W * duration) ** 2


def fit_line_center(freqs, p, duration, rabi_guess=None):
    """Fit a square-pulse Rabi line shape; returns (center, rabi, contrast)."""
    freqs = np.asarray(freqs, float)
    p = np.asarray(p, float)
    c0 = freqs[np.argmax(p)]
    r0 = rabi_guess if rabi_guess is not None else 1.0 / (2 * duration)

    def model(f, c, r, a, o):
        return rabi_lineshape(f, c, r, duration, a, o)
    popt, _ = curve_fit(model, freqs, p, p0=[c0, r0, max(p.max(), 0.1), 0.0], maxfev=20000)
    return float(popt[0]), float(abs(popt[1])), float(popt[2])


def fit_lorentzian(freqs, p):
    """Lorentzian peak fit; returns (center, fwhm, height, offset)."""
    freqs = np.asarray(freqs, float)
    p = np.asarray(p, float)

    def model(f, c, w, h, o):
        return o + h / (1 + 4 * ((f - c) / w) ** 2)
    k = np.argmax(p)
    w0 = (freqs[-1] - freqs[0]) / 10
    popt, _ = curve_fit(model, freqs, p, p0=[freqs[k], w0, p[k] - p.min(), p.min()], maxfev=20000)
    return float(popt[0]), float(abs(popt[1])), float(popt[2]), float(popt[3])


def peak_center(freqs, p):
    """Parabolic refinement of the maximum of a sampled peak."""
    freqs = np.asarray(freqs, float)
    p = np.asarray(p, float)
    k = int(np.argmax(p))
    if 0 < k < len(p) - 1:
        y0, y1, y2 = p[k - 1], p[k], p[k + 1]
        den = y0 - 2 * y1 + y2
        if den != 0:
            step = freqs[1] - freqs[0]
            return float(freqs[k] + 0.5 * step * (y0 - y2) / den)
    return float(freqs[k])
