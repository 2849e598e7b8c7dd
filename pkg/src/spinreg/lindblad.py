"""Lindblad master-equation engine for the 8-level register.

States are dense 8x8 density matrices; internally they are flattened row-major
so that vec(A rho B) = (A kron B^T) vec(rho).  Drives act on the electron only
through S-/S+ in the rotating-wave approximation:

    H_d(t) = (Omega_d/2) (S- exp(i theta(t)) + S+ exp(-i theta(t))).

Carrier frequencies are relative to the frame in which ``H0`` is written.
Phases of rectangular and gaussian tones are referenced to absolute time
t = 0 (a phase-continuous local oscillator); chirped tones start their sweep
at their own start time.

Two integration routes are available.  ``method='rk45'`` integrates the whole
window with an adaptive Dormand-Prince scheme.  ``method='auto'`` splits the
window at tone edges and uses exact matrix exponentials for static
segments, and one-period propagators (computed with the same RK scheme)
raised to integer powers for segments with two rectangular tones, which are
periodic in the frame of one of the tones.  Anything else (chirps, gaussians,
three or more carriers) falls back to direct RK integration.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import expm

from . import _dopri
from .spin_model import (SM, SP, SZ, SX, SY, TWO_PI, LEVEL_NAMES, SpinSystemParams,
                         is_hermitian, nuc_op, op3)

DIM = 8
_SZ_E = np.real(np.diag(op3(e=SZ)))


class IntegrationError(RuntimeError):
    """Step-size underflow in the adaptive integrator."""

    def __init__(self, t, local_error):
        super().__init__(f"step size underflow at t={t:.9g} s (local error norm {local_error:.3g})")
        self.t = t
        self.local_error = local_error


@dataclass
class CollapseSet:
    """Jump operators L_k = sqrt(rate_k) * op_k."""

    ops: list = field(default_factory=list)
    rates: list = field(default_factory=list)
    names: list = field(default_factory=list)

    def add(self, op, rate, name=""):
        if rate < 0:
            raise ValueError("collapse rates must be non-negative")
        op = np.asarray(op, dtype=complex)
        if op.shape != (DIM, DIM):
            raise ValueError("collapse operators must be 8x8")
        self.ops.append(op)
        self.rates.append(float(rate))
        self.names.append(name)

    def __len__(self):
        return len(self.ops)

    def rate(self, name):
        return self.rates[self.names.index(name)]

    def jump_operators(self):
        return [np.sqrt(r) * o for o, r in zip(self.ops, self.rates) if r > 0]


def collapse_ops(params: SpinSystemParams) -> CollapseSet:
    """Electron relaxation/excitation and pure dephasing channels.

    Dephasing operators are sqrt(2) * Iz (and sqrt(2) * Sz) so that the
    listed rate equals the decay rate of the transverse coherence, i.e.
    rate = 1/T2*.
    """
    cs = CollapseSet()
    g1, n = params.Gamma1_e, params.n_th
    cs.add(op3(e=SM), g1 * (n + 1), "s-")
    cs.add(op3(e=SP), g1 * n, "s+")
    for i in range(2):
        cs.add(np.sqrt(2) * nuc_op(i, SZ), params.Gammaphi_n[i], f"nphi{i + 1}")
    if params.Gammaphi_e > 0:
        cs.add(np.sqrt(2) * op3(e=SZ), params.Gammaphi_e, "ephi")
    return cs


@dataclass(frozen=True)
class DriveTone:
    """One microwave tone on the electron.

    carrier: Hz relative to the frame reference (start frequency for chirps)
    amplitude: electron Rabi frequency Omega_d in Hz
    envelope: 'rectangular', 'gaussian' (sigma = duration/6) or 'chirped'
    chirp_end: end frequency for chirped tones (Hz, same reference)
    """

    carrier: float
    amplitude: float
    phase: float = 0.0
    start: float = 0.0
    duration: float = 0.0
    envelope: str = "rectangular"
    chirp_end: float | None = None

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError("tone duration must be positive")
        if self.envelope not in ("rectangular", "gaussian", "chirped"):
            raise ValueError(f"unknown envelope {self.envelope!r}")
        if self.envelope == "chirped":
            if self.chirp_end is None or not np.isfinite(self.chirp_end):
                raise ValueError("chirped tone needs a finite chirp_end")

    @property
    def end(self) -> float:
        return self.start + self.duration

    def row(self, frame_shift: float = 0.0) -> list:
        """Numeric row for the compiled kernel, with the carrier shifted."""
        if self.envelope == "chirped":
            rate = (self.chirp_end - self.carrier) / self.duration
            phase = self.phase - TWO_PI * frame_shift * self.start
            return [self.amplitude, self.carrier - frame_shift, phase, rate, self.start,
                    _dopri.KIND_CHIRP, 0.0, 1.0]
        kind = _dopri.KIND_GAUSS if self.envelope == "gaussian" else _dopri.KIND_RECT
        return [self.amplitude, self.carrier - frame_shift, self.phase, 0.0, 0.0, kind,
                self.start + self.duration / 2, self.duration / 6]

    def max_frequency(self) -> float:
        f = abs(self.carrier)
        if self.envelope == "chirped":
            f = max(f, abs(self.chirp_end))
        return f


def tone_table(tones: Sequence[DriveTone], frame_shift: float = 0.0) -> np.ndarray:
    if not tones:
        return np.zeros((0, 8))
    return np.array([t.row(frame_shift) for t in tones], dtype=float)


# ---------------------------------------------------------------------------
# superoperators


def spre_post(A, B):
    return np.kron(A, B.T)


def commutator_super(H):
    I = np.eye(H.shape[0])
    return -1j * (np.kron(H, I) - np.kron(I, H.T))


def dissipator(L):
    I = np.eye(L.shape[0])
    LdL = L.conj().T @ L
    return np.kron(L, L.conj()) - 0.5 * np.kron(LdL, I) - 0.5 * np.kron(I, LdL.T)


def liouvillian(H, collapse: CollapseSet | None = None):
    Lv = commutator_super(H)
    if collapse is not None:
        for L in collapse.jump_operators():
            Lv = Lv + dissipator(L)
    return Lv


_M_DRIVE = commutator_super(op3(e=SM))
_N_DRIVE = commutator_super(op3(e=SP))


def frame_phase(f_hz, t):
    """Elementwise phase taking rho into a frame rotating faster by f_hz."""
    d = _SZ_E[:, None] - _SZ_E[None, :]
    return np.exp(1j * TWO_PI * f_hz * t * d).reshape(-1)


# ---------------------------------------------------------------------------
# trajectory container


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (n, 8, 8)
    info: dict = field(default_factory=dict)

    def populations(self):
        return np.real(np.diagonal(self.states, axis1=1, axis2=2))

    def nuclear_populations(self):
        p = self.populations()
        return p[:, :4] + p[:, 4:]

    def purity(self):
        return np.real(np.einsum("nij,nji->n", self.states, self.states))

    def final(self):
        return self.states[-1]

    def to_csv(self, path):
        p = self.populations()
        pur = self.purity()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time_s"] + [f"p_{n}" for n in LEVEL_NAMES] + ["purity"])
            for k, t in enumerate(self.times):
                w.writerow([repr(float(t))] + [repr(float(x)) for x in p[k]] + [repr(float(pur[k]))])


# ---------------------------------------------------------------------------
# integration


def _frequency_span(H):
    w = np.linalg.eigvalsh(0.5 * (H + H.conj().T)) / TWO_PI
    return float(w.max() - w.min())


def default_max_step(H, tones: Sequence[DriveTone], frame_shift=0.0):
    """1 / (20 f_max) with f_max the largest rotating-frame frequency."""
    f_max = _frequency_span(H)
    if tones:
        f_max += max(abs(t.max_frequency() - frame_shift) for t in tones)
        f_max += sum(t.amplitude for t in tones)
    f_max = max(f_max, 1.0)
    return 1.0 / (20.0 * f_max)


class _Integrator:
    """Holds the static generator and tolerances for one evolve call."""

    def __init__(self, H0, collapse, rtol, atol, max_step):
        self.H0 = np.asarray(H0, dtype=complex)
        self.collapse = collapse
        self.L0 = liouvillian(self.H0, collapse)
        self.rtol = rtol
        self.atol = atol
        self.max_step = max_step
        self.n_steps = 0
        self._expm_cache = {}

    def _rk(self, y, t0, t1, L0, table, h_max, rtol=None, atol=None, h0=None):
        rtol = self.rtol if rtol is None else rtol
        atol = self.atol if atol is None else atol
        h0 = h_max if h0 is None else h0
        # matrices are integrated column by column in one flat array
        flat = np.ascontiguousarray(y.T).reshape(-1) if y.ndim == 2 else np.ascontiguousarray(y)
        gen = _dopri.csr_generator(L0, _M_DRIVE, _N_DRIVE)
        out, h, n, status, tf, ef = _dopri.dopri5(flat, t0, t1, gen, table, rtol, atol, h_max, h0)
        self.n_steps += n
        if status != 0:
            raise IntegrationError(tf, ef)
        if y.ndim == 2:
            out = out.reshape(y.shape[1], y.shape[0]).T
        return out, h

    def _hmax(self, H, tones, shift=0.0):
        if self.max_step is not None:
            return self.max_step
        return default_max_step(H, tones, shift)

    # -- segment strategies; each returns states at ``times`` (all > a) and the state at b

    def seg_rk(self, v, a, b, tones, times):
        table = tone_table(tones)
        hmax = self._hmax(self.H0, tones)
        out = []
        t, h = a, hmax
        for tt in list(times) + [b]:
            if tt > t:
                v, h = self._rk(v, t, tt, self.L0, table, hmax, h0=h)
                t = tt
            out.append(v)
        return out[:-1], out[-1]

    def _expm(self, key, L, dt):
        k = (key, round(dt * 1e15))
        P = self._expm_cache.get(k)
        if P is None:
            P = expm(L * dt)
            if len(self._expm_cache) > 256:
                self._expm_cache.clear()
            self._expm_cache[k] = P
        return P

    def seg_static(self, v, a, b, tones, times):
        if tones:
            f = tones[0].carrier
            c = sum(np.pi * t.amplitude * np.exp(1j * t.phase) for t in tones)
            L = self.L0 + commutator_super(-TWO_PI * f * op3(e=SZ)) + c * _M_DRIVE + np.conj(c) * _N_DRIVE
            key = ("static", f, c)
        else:
            f, L, key = 0.0, self.L0, ("free",)
        vf = v * frame_phase(f, a)
        out = []
        t = a
        for tt in list(times) + [b]:
            if tt > t:
                vf = self._expm(key, L, tt - t) @ vf
                t = tt
            out.append(vf * np.conj(frame_phase(f, tt)))
        return out[:-1], out[-1]

    def seg_periodic(self, v, a, b, tones, times):
        tA, tB = tones
        fA = tA.carrier
        cA = np.pi * tA.amplitude * np.exp(1j * tA.phase)
        HA = self.H0 - TWO_PI * fA * op3(e=SZ)
        LA = self.L0 + commutator_super(HA - self.H0) + cA * _M_DRIVE + np.conj(cA) * _N_DRIVE
        table = tone_table([tB], frame_shift=fA)
        hmax = self._hmax(HA, [tB], fA)
        T = 1.0 / abs(tB.carrier - fA)
        n_tot = (b - a) / T
        if n_tot < 2:
            return self.seg_rk(v, a, b, tones, times)
        # one-period propagator, tighter tolerances since it is raised to powers
        P, _ = self._rk(np.eye(DIM * DIM, dtype=complex), a, a + T, LA, table, hmax,
                        rtol=min(self.rtol, 1e-10), atol=min(self.atol, 1e-12))
        powers = {}
        vf = v * frame_phase(fA, a)
        n_cur, v_strobe = 0, vf
        out = []
        for tt in list(times) + [b]:
            n = int(np.floor((tt - a) / T * (1 + 1e-13)))
            if n > n_cur:
                dn = n - n_cur
                Pn = powers.get(dn)
                if Pn is None:
                    Pn = np.linalg.matrix_power(P, dn)
                    powers[dn] = Pn
                v_strobe = Pn @ v_strobe
                n_cur = n
            ts = a + n_cur * T
            if tt - ts > 1e-15 * max(1.0, abs(tt)):
                w, _ = self._rk(v_strobe, ts, tt, LA, table, hmax)
            else:
                w = v_strobe
            out.append(w * np.conj(frame_phase(fA, tt)))
        return out[:-1], out[-1]


def _segments(tones, t0, t1):
    edges = {t0, t1}
    for tn in tones:
        for e in (tn.start, tn.end):
            if t0 < e < t1:
                edges.add(e)
    edges = sorted(edges)
    segs = []
    for a, b in zip(edges[:-1], edges[1:]):
        mid = 0.5 * (a + b)
        active = [tn for tn in tones if tn.start <= mid < tn.end]
        segs.append((a, b, active))
    return segs


def _classify(active):
    if not active:
        return "static"
    if any(t.envelope != "rectangular" for t in active):
        return "rk"
    carriers = sorted({t.carrier for t in active})
    if len(carriers) == 1:
        return "static"
    if len(carriers) == 2:
        return "periodic"
    return "rk"


def _merge_same_carrier(active):
    """Combine rectangular tones sharing a carrier into one tone."""
    by_f = {}
    for t in active:
        by_f.setdefault(t.carrier, []).append(t)
    merged = []
    for f, group in by_f.items():
        c = sum(t.amplitude * np.exp(1j * t.phase) for t in group)
        merged.append(DriveTone(f, abs(c), float(np.angle(c)), group[0].start, group[0].duration))
    merged.sort(key=lambda t: -t.amplitude)
    return merged


def evolve(rho0, H0, tones: Sequence[DriveTone], collapse: CollapseSet | None, tspan,
           t_eval=None, rtol=1e-8, atol=1e-10, max_step=None, method="auto") -> Trajectory:
    """Integrate the master equation over ``tspan`` = (t0, t1).

    Returns a Trajectory with states at ``t_eval`` (default: t0 and t1).
    """
    rho0 = np.asarray(rho0, dtype=complex)
    H0 = np.asarray(H0, dtype=complex)
    if rho0.shape != (DIM, DIM) or H0.shape != (DIM, DIM):
        raise ValueError("rho0 and H0 must be 8x8")
    if not is_hermitian(H0):
        raise ValueError("H0 is not Hermitian")
    if not is_hermitian(rho0, 1e-9):
        raise ValueError("rho0 is not Hermitian")
    if method not in ("auto", "rk45"):
        raise ValueError(f"unknown method {method!r}")
    t0, t1 = float(tspan[0]), float(tspan[1])
    if t1 < t0:
        raise ValueError("tspan must be increasing")
    tones = list(tones)
    t_eval = np.array([t0, t1] if t_eval is None else t_eval, dtype=float)
    if t_eval.size and (np.any(np.diff(t_eval) <= 0) or t_eval[0] < t0 or t_eval[-1] > t1 * (1 + 1e-12) + 1e-15):
        raise ValueError("t_eval must be strictly increasing inside tspan")

    integ = _Integrator(H0, collapse, rtol, atol, max_step)
    v = rho0.reshape(-1).copy()
    states = []
    k = 0
    while k < len(t_eval) and t_eval[k] <= t0:
        states.append(v.copy())
        k += 1
    segs = _segments(tones, t0, t1)
    for a, b, active in segs:
        if b <= a:
            continue
        j = k
        while j < len(t_eval) and t_eval[j] <= b:
            j += 1
        times = t_eval[k:j]
        if method == "rk45":
            kind = "rk"
        else:
            kind = _classify(active)
            if kind != "rk":
                active = _merge_same_carrier(active)
        if kind == "static":
            outs, v = integ.seg_static(v, a, b, active, times)
        elif kind == "periodic":
            outs, v = integ.seg_periodic(v, a, b, active, times)
        else:
            outs, v = integ.seg_rk(v, a, b, active, times)
        states.extend(outs)
        k = j
    arr = np.array(states).reshape(-1, DIM, DIM)
    arr = 0.5 * (arr + np.conj(np.transpose(arr, (0, 2, 1))))
    return Trajectory(t_eval.copy(), arr, {"n_steps": integ.n_steps, "method": method})


def propagate(rho0, H0, tones, collapse, t0, t1, **kw):
    """Final state only."""
    return evolve(rho0, H0, tones, collapse, (t0, t1), t_eval=[t1], **kw).final()


# ---------------------------------------------------------------------------
# effective nuclear-subspace model


def nuclear_ops(target: int):
    """Pauli/2 operators on the target nucleus in the 4-dim nuclear space."""
    I2 = np.eye(2)
    emb = (lambda o: np.kron(o, I2)) if target == 0 else (lambda o: np.kron(I2, o))
    return emb(SX), emb(SY), emb(SZ)


def effective_raman_hamiltonian(omega_ram, detuning, delta_2qb, target, phase=0.0,
                                spectator_shift=0.0, regime_ratio=None):
    """4x4 nuclear generator (rad/s) in the frame of the drive difference frequency.

    omega_ram   Raman Rabi rate (Hz), coefficient of the transverse spin operator
    detuning    resonance minus drive frequency for the spectator-average line (Hz)
    delta_2qb   conditional shift (Hz): the target line sits at
                detuning + delta_2qb * Iz(spectator)
    Returns (H, regime_ok) where regime_ok is False when regime_ratio < 10.
    """
    Xt, Yt, Zt = nuclear_ops(target)
    _, _, Zs = nuclear_ops(1 - target)
    # target nucleus: spin up is the lower level in the electron-down manifold
    H = omega_ram * (np.cos(phase) * Xt + np.sin(phase) * Yt)
    H = H - detuning * Zt - delta_2qb * Zt @ Zs
    H = H - spectator_shift * Zs
    regime_ok = True if regime_ratio is None else regime_ratio >= 10
    if not regime_ok:
        warnings.warn("drive amplitude is not small compared with the detuning", RuntimeWarning)
    return TWO_PI * H, regime_ok
