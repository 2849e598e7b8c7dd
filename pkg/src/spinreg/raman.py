"""Closed-form stimulated-Raman calibration formulas.

Conventions (all ordinary frequencies in Hz):

* ``Delta`` is the detuning of tone A below the electron line with both
  nuclei up, Delta = omega_e(uu) - omega_A.  Tone B sits at omega_A - delta.
* For the target nucleus t: delta0 = -omega_I,t + A_par,t/2 and
  zeta0 = -omega_I,t - A_par,t/2.
* When the spectator nucleus is down the relevant electron line moves down by
  A_par,s, so Delta is replaced by Delta - A_par,s.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import brentq

from .spin_model import SpinSystemParams

GUARD_HZ = 1e3


class SingularityError(ValueError):
    """A perturbative denominator is inside the guard band."""


def _guard(name, value, guard):
    if abs(value) < guard:
        raise SingularityError(f"{name} = {value:.6g} Hz is within {guard:g} Hz of a resonance")
    return value


def filter_factor(detuning, kappa):
    """Single-pole resonator amplitude transmission at a given detuning."""
    return 1.0 / np.sqrt(1.0 + 4.0 * (np.asarray(detuning) / kappa) ** 2)


def filtered_amplitudes(Omega_eA, Omega_eB, Delta, omega_I, kappa):
    """Amplitudes seen by the electron after the resonator filter.

    Tone A is Delta away from the resonator (tuned to the electron line) and
    tone B is Delta - omega_I away.
    """
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    return (Omega_eA * float(filter_factor(Delta, kappa)),
            Omega_eB * float(filter_factor(Delta - omega_I, kappa)))


def electron_equivalent_amplitudes(Omega_A, Omega_B, Delta, omega_I, kappa):
    """Inverse of :func:`filtered_amplitudes`."""
    return (Omega_A / float(filter_factor(Delta, kappa)),
            Omega_B / float(filter_factor(Delta - omega_I, kappa)))


@dataclass(frozen=True)
class RamanDriveCondition:
    """Two-tone drive for one target nucleus; amplitudes are filtered values."""

    Delta: float
    Omega_A: float
    Omega_B: float
    target: int = 0
    delta: float = 0.0
    Omega_eA: float | None = None
    Omega_eB: float | None = None

    def __post_init__(self):
        if self.target not in (0, 1):
            raise ValueError("target must be 0 or 1")
        if self.Omega_A < 0 or self.Omega_B < 0:
            raise ValueError("amplitudes must be non-negative")
        if self.Omega_eA is not None and self.Omega_A > self.Omega_eA * (1 + 1e-12):
            raise ValueError("filtered amplitude exceeds electron-equivalent amplitude")
        if self.Omega_eB is not None and self.Omega_B > self.Omega_eB * (1 + 1e-12):
            raise ValueError("filtered amplitude exceeds electron-equivalent amplitude")

    @classmethod
    def from_electron(cls, params: SpinSystemParams, target, Delta, Omega_eA, Omega_eB, delta=0.0):
        oa, ob = filtered_amplitudes(Omega_eA, Omega_eB, Delta, params.omega_I[target], params.kappa)
        return cls(Delta, oa, ob, target, delta, Omega_eA, Omega_eB)

    @property
    def spectator(self) -> int:
        return 1 - self.target

    @property
    def raman_regime(self) -> bool:
        return max(self.Omega_A, self.Omega_B) < abs(self.Delta) / 10

    def scaled(self, factor) -> "RamanDriveCondition":
        """Both amplitudes multiplied by ``factor``."""
        ea = None if self.Omega_eA is None else self.Omega_eA * factor
        eb = None if self.Omega_eB is None else self.Omega_eB * factor
        return replace(self, Omega_A=self.Omega_A * factor, Omega_B=self.Omega_B * factor,
                       Omega_eA=ea, Omega_eB=eb)


def delta0(params: SpinSystemParams, nucleus) -> float:
    return -params.omega_I[nucleus] + params.A_par[nucleus] / 2


def zeta0(params: SpinSystemParams, nucleus) -> float:
    return -params.omega_I[nucleus] - params.A_par[nucleus] / 2


def _effective_delta(params, cond, spectator_state):
    return cond.Delta - (0.0 if spectator_state else params.A_par[cond.spectator])


def _raman_factor(params, nucleus, cond, spectator_state, guard):
    D = _effective_delta(params, cond, spectator_state)
    z = zeta0(params, nucleus)
    _guard("Delta", D, guard)
    _guard("Delta + zeta0", D + z, guard)
    w = params.omega_I[nucleus]
    if w == 0:
        raise ValueError("omega_I must be nonzero")
    return (1.0 / (2.0 * w)) * (cond.Omega_A * cond.Omega_B / 2.0) * (1.0 / D - 1.0 / (D + z))


def raman_rabi(params: SpinSystemParams, nucleus: int, cond: RamanDriveCondition,
               spectator_state: int = 1, guard: float = GUARD_HZ) -> float:
    """Signed Raman Rabi rate Omega_Ram (Hz); pi time is 1/(2|Omega_Ram|).

    The two virtual paths go through the electron line of the current
    nuclear state (detuning Delta) and through the flipped-target line
    (detuning Delta + zeta0).
    """
    return params.A_perp[nucleus] * _raman_factor(params, nucleus, cond, spectator_state, guard)


def invert_for_aperp(omega_ram: float, params: SpinSystemParams, cond: RamanDriveCondition,
                     nucleus: int | None = None, spectator_state: int = 1,
                     guard: float = GUARD_HZ) -> float:
    """A_perp (Hz) that reproduces a measured Raman Rabi rate."""
    nucleus = cond.target if nucleus is None else nucleus
    k = _raman_factor(params, nucleus, cond, spectator_state, guard)
    if k == 0:
        raise SingularityError("Raman rate is independent of A_perp for these amplitudes")
    return omega_ram / k


@dataclass(frozen=True)
class AcZeemanResult:
    delta_ac_up: float
    delta_ac_down: float

    @property
    def delta_ac(self) -> float:
        return 0.5 * (self.delta_ac_up + self.delta_ac_down)

    @property
    def delta_2qb(self) -> float:
        return self.delta_ac_up - self.delta_ac_down


def _ac_branch(D, d0, z0, Oa, Ob, guard):
    for name, val in (("Delta", D), ("Delta + zeta0 - delta0", D + z0 - d0),
                      ("Delta + delta0", D + d0), ("Delta + zeta0", D + z0)):
        _guard(name, val, guard)
    return (Oa ** 2 / 4) * (1 / D - 1 / (D + z0 - d0)) + (Ob ** 2 / 4) * (1 / (D + d0) - 1 / (D + z0))


def ac_zeeman_shifts(params: SpinSystemParams, cond: RamanDriveCondition,
                     guard: float = GUARD_HZ) -> AcZeemanResult:
    """Drive-induced shift of the target resonance for each spectator state (Hz)."""
    t, s = cond.target, cond.spectator
    d0, z0 = delta0(params, t), zeta0(params, t)
    up = _ac_branch(cond.Delta, d0, z0, cond.Omega_A, cond.Omega_B, guard)
    down = _ac_branch(cond.Delta - params.A_par[s], d0, z0, cond.Omega_A, cond.Omega_B, guard)
    return AcZeemanResult(up, down)


def resonance_frequency(params, cond, spectator_state, guard=GUARD_HZ) -> float:
    """Analytic Raman resonance delta0 + delta_ac for one spectator state."""
    r = ac_zeeman_shifts(params, cond, guard)
    return delta0(params, cond.target) + (r.delta_ac_up if spectator_state else r.delta_ac_down)


def _cubic_coeffs(omega_I, a1, a2):
    """Coefficients of D(D-a1)(D-a1+2a2) + (D-w)^2 (D+2a2-w), highest first."""
    p1 = np.polymul(np.polymul([1, 0], [1, -a1]), [1, -a1 + 2 * a2])
    p2 = np.polymul(np.polymul([1, -omega_I], [1, -omega_I]), [1, 2 * a2 - omega_I])
    return np.polyadd(p1, p2)


def unconditional_detuning(params: SpinSystemParams, target: int = 1, exact: bool = False) -> float:
    """Delta_u where the conditional shift vanishes for equal tone amplitudes.

    By default this is the real root, nearest omega_I/2, of the first-order
    cubic, found by bisection on [omega_I + 1 Hz, -1 Hz] and one Newton polish.
    The cubic uses A_par of nucleus 1 in its first factor and of nucleus 2 in
    the second, whichever nucleus is targeted; ``target`` selects omega_I.
    With ``exact=True`` the zero of the full analytic delta_2qb is returned
    instead (it is independent of the common amplitude).
    """
    w = params.omega_I[target]
    if exact:
        def g(D):
            cond = RamanDriveCondition(D, 1e3, 1e3, target)
            return ac_zeeman_shifts(params, cond, guard=0.0).delta_2qb
        lo, hi = w + 1.0, -1.0
        xs = np.linspace(lo, hi, 4001)
        with np.errstate(divide="ignore", invalid="ignore"):
            vals = np.array([g(x) for x in xs])
        best = None
        for i in range(len(xs) - 1):
            a, b = vals[i], vals[i + 1]
            if np.isfinite(a) and np.isfinite(b) and a * b < 0 and abs(a) + abs(b) < 1e3:
                root = brentq(g, xs[i], xs[i + 1], xtol=1e-9)
                if best is None or abs(root - w / 2) < abs(best - w / 2):
                    best = root
        if best is None:
            raise RuntimeError("no zero of delta_2qb found in [omega_I, 0]")
        return best
    a1, a2 = params.A_par
    coeffs = _cubic_coeffs(w, a1, a2)
    f = lambda D: np.polyval(coeffs, D)  # noqa: E731
    lo, hi = w + 1.0, -1.0
    if f(lo) * f(hi) > 0:
        # fall back to scanning for a sign change nearest omega_I/2
        xs = np.linspace(lo, hi, 2001)
        v = f(xs)
        idx = np.nonzero(np.sign(v[:-1]) != np.sign(v[1:]))[0]
        if idx.size == 0:
            raise RuntimeError("no real root of the cubic in [omega_I, 0]")
        k = idx[np.argmin(np.abs(xs[idx] - w / 2))]
        lo, hi = xs[k], xs[k + 1]
    # bisection
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if f(lo) * f(mid) <= 0:
            hi = mid
        else:
            lo = mid
        if hi - lo < 1e-9 * max(1.0, abs(w)):
            break
    root = 0.5 * (lo + hi)
    d = np.polyval(np.polyder(coeffs), root)
    if d != 0:
        root -= f(root) / d
    return float(root)


def cubic_residual(params, root, target=1):
    """Relative residual of the first-order cubic at ``root``."""
    a1, a2 = params.A_par
    w = params.omega_I[target]
    lhs = root * (root - a1) * (root - a1 + 2 * a2)
    rhs = -(root - w) ** 2 * (root + 2 * a2 - w)
    return abs(lhs - rhs) / max(abs(lhs), abs(rhs))


def amplitude_for_rabi(params, nucleus, Delta, rabi_hz, ratio=1.0, spectator_state=1):
    """Filtered Omega_A giving |Omega_Ram| = rabi_hz with Omega_B = ratio * Omega_A."""
    unit = RamanDriveCondition(Delta, 1.0, ratio, nucleus)
    r1 = abs(raman_rabi(params, nucleus, unit, spectator_state))
    return float(np.sqrt(rabi_hz / r1))
