"""Experiment schedules as data, and their compilation to drive tones.

A :class:`Schedule` is an ordered list of :class:`GateSpec` entries played
back to back.  Durations come from the calibration table, so timing is only
fixed by :func:`compile_schedule`, which also tracks the logical frame of each
qubit.  The logical frame differs from the natural frame (interaction
picture of the static Hamiltonian) by a z rotation per qubit:

    rho_natural = Z(F) rho_logical Z(F)^dag,   Z(F) = exp(i F1 Sz) x exp(i F2 Sz)

Rotation axes are given in the logical frame and realized through the phase
of tone B relative to tone A.
"""
from __future__ import annotations

import shlex
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import lindblad as lb
from . import raman
from .gates import CalibrationTable, GateCal, zrot
from .register import raman_tone_pair
from .spin_model import NUC_LABELS, SX, SY, TWO_PI, SpinSystemParams, \
    electron_transition_frequencies, sideband_frequencies

KINDS = ("raman", "electron_pi", "chirp_pump", "wait", "readout")
READOUT_ORDER = ("uu", "du", "ud", "dd")


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class GateSpec:
    """One schedule entry.

    raman:       gate (calibration name), theta, phi
    electron_pi: line ('dd' .. 'uu', electron line of that nuclear state)
    chirp_pump:  f_start, f_stop (Hz from omega_S), duration, amplitude
    wait:        duration
    readout:     reps per line, window (integration time after each pulse)
    """

    kind: str
    gate: str = ""
    theta: float = 0.0
    phi: float = 0.0
    line: str = ""
    duration: float = 0.0
    f_start: float = 0.0
    f_stop: float = 0.0
    amplitude: float = 0.0
    reps: int = 0
    window: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ScheduleError(f"unknown gate kind {self.kind!r}")
        if self.kind == "raman":
            if not self.gate:
                raise ScheduleError("raman rotation needs a calibration name")
            if not 0.0 <= self.theta < TWO_PI:
                raise ScheduleError(f"rotation angle {self.theta} outside [0, 2 pi)")
            phi = float(np.mod(self.phi, TWO_PI))
            # mod of a tiny negative angle rounds up to 2 pi
            object.__setattr__(self, "phi", 0.0 if phi >= TWO_PI else phi)
        elif self.kind == "electron_pi":
            if self.line not in NUC_LABELS:
                raise ScheduleError(f"unknown electron line {self.line!r}")
        elif self.kind in ("wait", "chirp_pump"):
            if not self.duration > 0:
                raise ScheduleError(f"{self.kind} duration must be positive")
        elif self.kind == "readout":
            if self.reps < 1 or self.window < 0:
                raise ScheduleError("readout needs reps >= 1 and window >= 0")

    def to_text(self) -> str:
        parts = [self.kind]
        for f in fields(self)[1:]:
            v = getattr(self, f.name)
            if v != f.default:
                parts.append(f"{f.name}={v!r}" if not isinstance(v, str) else f"{f.name}={v}")
        return " ".join(parts)

    @classmethod
    def from_text(cls, line: str) -> "GateSpec":
        tok = shlex.split(line)
        kw = {}
        types = {f.name: f.type for f in fields(cls)}
        for t in tok[1:]:
            k, _, v = t.partition("=")
            if k not in types or k == "kind":
                raise ScheduleError(f"unknown gate field {k!r}")
            kw[k] = v if types[k] == "str" else (int(v) if types[k] == "int" else float(v))
        return cls(tok[0], **kw)


def raman_rotation(gate: str, theta: float, phi: float = 0.0) -> GateSpec:
    return GateSpec("raman", gate=gate, theta=float(theta), phi=float(phi))


def wait(duration: float) -> GateSpec:
    return GateSpec("wait", duration=float(duration))


def electron_pi(line: str) -> GateSpec:
    return GateSpec("electron_pi", line=line)


def chirp_pump(f_start: float, f_stop: float, duration: float, amplitude: float) -> GateSpec:
    return GateSpec("chirp_pump", f_start=float(f_start), f_stop=float(f_stop),
                    duration=float(duration), amplitude=float(amplitude))


def readout_block(reps: int = 200, window: float = 1e-3) -> GateSpec:
    return GateSpec("readout", reps=int(reps), window=float(window))


@dataclass
class Schedule:
    """Gates played back to back."""

    gates: list = field(default_factory=list)
    name: str = ""

    def __len__(self):
        return len(self.gates)

    def __iter__(self):
        return iter(self.gates)

    def then(self, *more) -> "Schedule":
        """New schedule with gates (or whole schedules) appended."""
        out = list(self.gates)
        for g in more:
            out.extend(g.gates if isinstance(g, Schedule) else [g])
        return Schedule(out, self.name)

    def to_text(self) -> str:
        head = [f"# schedule {self.name}"] if self.name else []
        return "\n".join(head + [g.to_text() for g in self.gates]) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Schedule":
        name = ""
        gates = []
        for raw in text.splitlines():
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                if line.startswith("# schedule "):
                    name = line[len("# schedule "):].strip()
                continue
            gates.append(GateSpec.from_text(line))
        return cls(gates, name)


# -- compilation

@dataclass
class Marker:
    time: float
    label: str
    duration: float = 0.0


@dataclass
class CompiledSchedule:
    tones: list
    markers: list
    duration: float
    frame: np.ndarray          # logical frame offsets (rad) of Qb1, Qb2 at the end
    timeline: list             # (start, duration, GateSpec)

    def logical_state(self, rho_natural4) -> np.ndarray:
        """Map a natural-frame nuclear state to the logical frame."""
        U = np.kron(zrot(-self.frame[0]), zrot(-self.frame[1]))
        return U @ rho_natural4 @ U.conj().T


def gate_duration(g: GateSpec, calib: CalibrationTable) -> float:
    if g.kind == "raman":
        return calib[g.gate].duration(g.theta)
    if g.kind == "electron_pi":
        return 1.0 / (2.0 * calib.electron_rabi)
    if g.kind == "readout":
        return len(READOUT_ORDER) * g.reps * (1.0 / (2.0 * calib.electron_rabi) + g.window)
    return g.duration


def _check_conditional(cal: GateCal, params: SpinSystemParams):
    cond = cal.condition()
    d2 = raman.ac_zeeman_shifts(params, cond, guard=0.0).delta_2qb
    if d2 == 0:
        raise ScheduleError(f"conditional gate {cal.name!r} has zero two-qubit shift")


def compile_schedule(schedule: Schedule, params: SpinSystemParams, calib: CalibrationTable,
                     t0: float = 0.0, frame=(0.0, 0.0), expand_readout: bool = False
                     ) -> CompiledSchedule:
    """Resolve timing and turn a schedule into drive tones.

    Readout blocks become a single marker unless ``expand_readout`` is set, in
    which case the 4 x reps electron pi pulses are emitted as tones too.
    """
    e_lines = {k: v - params.omega_S for k, v in electron_transition_frequencies(params).items()}
    t = float(t0)
    F = np.array(frame, float)
    tones, markers, timeline = [], [], []
    e_rabi = calib.electron_rabi
    t_pi_e = 1.0 / (2.0 * e_rabi)
    for g in schedule:
        dur = gate_duration(g, calib)
        timeline.append((t, dur, g))
        if g.kind == "raman":
            cal = calib[g.gate]
            if cal.spectator_state is not None:
                _check_conditional(cal, params)
            q, s = cal.target, 1 - cal.target
            slip = TWO_PI * (cal.delta - cal.nu)
            phi_nat = g.phi - F[q]
            psi = cal.phi0 - slip * t - phi_nat
            tones += raman_tone_pair(e_lines["uu"], cal.condition(), cal.delta, t, dur, psi)
            F[q] += slip * dur
            F[s] += cal.spectator_rate * dur
        elif g.kind == "electron_pi":
            tones.append(lb.DriveTone(e_lines[g.line], e_rabi, 0.0, t, t_pi_e))
        elif g.kind == "chirp_pump":
            tones.append(lb.DriveTone(g.f_start, g.amplitude, 0.0, t, dur, "chirped", g.f_stop))
        elif g.kind == "readout":
            markers.append(Marker(t, "readout", dur))
            if expand_readout:
                tp = t
                for lab in READOUT_ORDER:
                    for _ in range(g.reps):
                        tones.append(lb.DriveTone(e_lines[lab], e_rabi, 0.0, tp, t_pi_e))
                        tp += t_pi_e + g.window
        t += dur
    F = np.mod(F, TWO_PI)
    return CompiledSchedule(tones, markers, t - t0, F, timeline)


def ideal_rotation(theta: float, phi: float) -> np.ndarray:
    """exp(-i theta (cos phi Sx + sin phi Sy)) on one qubit."""
    G = np.cos(phi) * SX + np.sin(phi) * SY
    w, V = np.linalg.eigh(G)
    return (V * np.exp(-1j * theta * w)) @ V.conj().T


def ideal_unitary(schedule: Schedule, calib: CalibrationTable) -> np.ndarray:
    """4x4 logical-frame unitary of a schedule built from perfect gates.

    Raman rotations act on their target, conditional ones only in the
    spectator branch named by the calibration; waits and electron pi pulses
    are identities in the logical frame.  Pumping and readout are not
    unitary and raise.
    """
    U = np.eye(4, dtype=complex)
    P = [np.diag([1.0, 0.0]), np.diag([0.0, 1.0])]
    for g in schedule:
        if g.kind in ("wait", "electron_pi"):
            continue
        if g.kind != "raman":
            raise ScheduleError(f"{g.kind} is not a unitary gate")
        cal = calib[g.gate]
        R = ideal_rotation(g.theta, g.phi)
        t = cal.target
        if cal.spectator_state is None:
            G = np.kron(R, np.eye(2)) if t == 0 else np.kron(np.eye(2), R)
        else:
            s = cal.spectator_state
            Q = np.eye(2) - P[s]
            G = (np.kron(R, P[s]) + np.kron(np.eye(2), Q)) if t == 0 \
                else (np.kron(P[s], R) + np.kron(Q, np.eye(2)))
        U = G @ U
    return U


# -- experiment builders

def pumping_lines(params: SpinSystemParams, target_state: str = "dd") -> list:
    """Sideband lines needed to pump into |dd> or |uu> (Hz from omega_S).

    Qb1 is pumped for either state of Qb2; Qb2 is pumped once Qb1 already
    sits in the target state, so the Qb2 line with the other spectator value
    is not needed.
    """
    if target_state not in ("dd", "uu"):
        raise ScheduleError("pumping targets are 'dd' and 'uu'")
    sb = sideband_frequencies(params)
    a = 1 if target_state == "dd" else 0      # nuclear value that gets flipped away
    keep = 1 - a
    return sorted(f for (t, s, fa, fb), f in sb.items()
                  if fa == a and (t == 0 or s == keep))


def make_sideband_pump(params: SpinSystemParams, target_state: str = "dd", repeats: int = 50,
                       pulse: float = 3.5e-3, wait_time: float = 2e-3,
                       band: tuple = (760e3, 810e3), electron_rabi: float = 310e3) -> Schedule:
    """Chirped sideband pumping into |dd> or |uu>.

    ``band`` is the chirp range for |dd> (Hz above omega_S); |uu> uses the
    mirror image below omega_S.  The band must contain every line returned
    by :func:`pumping_lines`.  The amplitude is the resonator-filtered
    electron Rabi frequency at the band centre.
    """
    lines = pumping_lines(params, target_state)
    f0, f1 = (float(band[0]), float(band[1])) if target_state == "dd" \
        else (-float(band[0]), -float(band[1]))
    lo, hi = min(f0, f1), max(f0, f1)
    if lines[0] < lo or lines[-1] > hi:
        raise ScheduleError("chirp band does not cover the pumping sidebands")
    amp = electron_rabi * float(raman.filter_factor(0.5 * (f0 + f1), params.kappa))
    body = [chirp_pump(f0, f1, pulse, amp), wait(wait_time)]
    return Schedule(body * int(repeats), f"pump_{target_state}")


def unconditional_gate(target: int) -> str:
    return f"u{target + 1}"


def make_ramsey(target: int, delays, detuning: float = 0.0, gate: str | None = None) -> list:
    """One pi/2 - wait - pi/2 schedule per delay.

    Artificial detuning advances the axis of the second pulse by
    2 pi detuning delay.
    """
    gate = gate or unconditional_gate(target)
    out = []
    for d in _delays(delays):
        body = [raman_rotation(gate, np.pi / 2, 0.0)]
        if d > 0:
            body.append(wait(d))
        body.append(raman_rotation(gate, np.pi / 2, TWO_PI * detuning * d))
        out.append(Schedule(body, f"ramsey_q{target + 1}"))
    return out


def make_hahn(target: int, delays, detuning: float = 0.0, gate: str | None = None,
              partner: int | None = None) -> list:
    """pi/2 - d/2 - pi - d/2 - pi/2 per total free time d.

    With ``partner`` the other qubit gets a pi pulse right after the probe pi
    pulse (SEDOR branch).
    """
    gate = gate or unconditional_gate(target)
    out = []
    for d in _delays(delays):
        body = [raman_rotation(gate, np.pi / 2, 0.0)]
        if d > 0:
            body.append(wait(d / 2))
        body.append(raman_rotation(gate, np.pi, 0.0))
        if partner is not None:
            body.append(raman_rotation(unconditional_gate(partner), np.pi, 0.0))
        if d > 0:
            body.append(wait(d / 2))
        body.append(raman_rotation(gate, np.pi / 2, TWO_PI * detuning * d))
        out.append(Schedule(body, f"hahn_q{target + 1}"))
    return out


def make_sedor(probe: int, partner: int, delays, detuning: float = 0.0):
    """(without partner pi, with partner pi) Hahn sequences on the probe."""
    if probe == partner:
        raise ScheduleError("probe and partner must differ")
    return (make_hahn(probe, delays, detuning),
            make_hahn(probe, delays, detuning, partner=partner))


def make_bell_prep(parity: str = "odd", u1: str = "u1", c2: str = "c2", u2: str = "u2") -> Schedule:
    """pi/2 on Qb1, Qb2 pi conditioned on Qb1 down, extra pi_x on Qb2 for even parity.

    The axes (3 pi/2) give (|du> + |ud>)/sqrt2 with a + sign from |dd>.
    """
    if parity not in ("odd", "even"):
        raise ScheduleError("parity must be 'odd' or 'even'")
    g = [raman_rotation(u1, np.pi / 2, 1.5 * np.pi), raman_rotation(c2, np.pi, 1.5 * np.pi)]
    if parity == "even":
        g.append(raman_rotation(u2, np.pi, 0.0))
    return Schedule(g, f"bell_{parity}")


def bell_target(parity: str = "odd") -> np.ndarray:
    v = np.zeros(4, complex)
    if parity == "odd":
        v[1] = v[2] = 1
    else:
        v[0] = v[3] = 1
    return v / np.sqrt(2)


TOMO_SETTINGS = ("I", "X", "Y")


def tomography_prerotation(setting: tuple, calib: CalibrationTable, gates=("u1", "u2")) -> Schedule:
    """Fixed-slot pre-rotations: Qb1 slot then Qb2 slot.

    'X' and 'Y' are pi/2 rotations about x and y; 'I' idles for the same
    time so every setting ends at the same moment.
    """
    out = []
    for q, s in enumerate(setting):
        if s not in TOMO_SETTINGS:
            raise ScheduleError(f"unknown tomography setting {s!r}")
        name = gates[q]
        if s == "I":
            out.append(wait(calib[name].duration(np.pi / 2)))
        else:
            out.append(raman_rotation(name, np.pi / 2, 0.0 if s == "X" else np.pi / 2))
    return Schedule(out, "tomo_" + "".join(setting))


def _delays(delays):
    d = np.atleast_1d(np.asarray(delays, float))
    if np.any(d < 0) or np.any(np.diff(d) <= 0):
        raise ScheduleError("delays must be non-negative and ascending")
    return d
