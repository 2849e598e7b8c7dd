"""Simulation front end: preparation, measurement and Raman tones for the register.

Qubit states are defined in the dressed basis of the electron-down manifold
(eigenstates of the static Hamiltonian), and "natural frame" quantities are
taken in the interaction picture of the full static Hamiltonian.  Sideband
pumping prepares these dressed states and the fluorescence readout measures
them, so this is the basis in which populations are reported.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import lindblad as lb
from .raman import RamanDriveCondition
from .spin_model import (NUC_LABELS, TWO_PI, SpinSystemParams, build_static_hamiltonian,
                         dressed_levels, electron_transition_frequencies, nuclear_index)


@dataclass
class Tolerances:
    rtol: float = 1e-8
    atol: float = 1e-10
    max_step_s: float | None = None


class Register:
    """Static model of one register, in the frame rotating at omega_S."""

    def __init__(self, params: SpinSystemParams, tol: Tolerances | None = None, collapse=None):
        self.params = params
        self.tol = tol or Tolerances()
        self.H0 = build_static_hamiltonian(params, frame_hz=params.omega_S)
        self.collapse = lb.collapse_ops(params) if collapse is None else collapse
        E, V = dressed_levels(params)
        self.E = E - params.omega_S * np.repeat([-0.5, 0.5], 4)  # Hz, in the frame
        self.V = V
        self.e_lines = {k: v - params.omega_S for k, v in electron_transition_frequencies(params).items()}

    # -- nuclear frequencies in the electron-down manifold

    def nu(self, target: int, spectator_state: int) -> float:
        """Natural |E(t dn) - E(t up)| for a given spectator state (Hz)."""
        bits_u = [spectator_state] * 2
        bits_d = [spectator_state] * 2
        bits_u[target], bits_d[target] = 1, 0
        iu = 2 * bits_u[0] + bits_u[1]
        idd = 2 * bits_d[0] + bits_d[1]
        return float(self.E[idd] - self.E[iu])

    def nu_mean(self, target: int) -> float:
        return 0.5 * (self.nu(target, 0) + self.nu(target, 1))

    # -- states

    def prepare(self, nuclear, electron: int = 0) -> np.ndarray:
        """8x8 state from a nuclear label ('dd' ...), index, 4-vector or 4x4 matrix.

        The nuclear state is given in the dressed basis.
        """
        if isinstance(nuclear, str):
            rho4 = np.zeros((4, 4), complex)
            k = nuclear_index(nuclear)
            rho4[k, k] = 1
        else:
            a = np.asarray(nuclear, dtype=complex)
            if a.ndim == 1:
                a = a / np.linalg.norm(a)
                rho4 = np.outer(a, a.conj())
            else:
                rho4 = a
        e = np.zeros((2, 2), complex)
        e[electron, electron] = 1
        rho_d = np.kron(e, rho4)
        return self.V @ rho_d @ self.V.conj().T

    def dressed(self, rho):
        return self.V.conj().T @ rho @ self.V

    def nuclear_populations(self, rho) -> np.ndarray:
        """Dressed-basis populations of dd, du, ud, uu summed over the electron."""
        rho = np.asarray(rho)
        d = np.real(np.einsum("ji,...jk,ki->...i", self.V.conj(), rho, self.V))
        return d[..., :4] + d[..., 4:]

    def natural_frame(self, rho, t) -> np.ndarray:
        """Nuclear 4x4 state in the interaction picture of the static Hamiltonian."""
        rd = self.dressed(rho)
        ph = np.exp(1j * TWO_PI * self.E * t)
        ri = ph[:, None] * rd * ph.conj()[None, :]
        return ri[:4, :4] + ri[4:, 4:]

    def from_natural_frame(self, rho4, t, electron=0) -> np.ndarray:
        ph = np.exp(1j * TWO_PI * self.E[4 * electron:4 * electron + 4] * t)
        r = ph.conj()[:, None] * np.asarray(rho4) * ph[None, :]
        return self.prepare(r, electron)

    # -- drive

    def raman_tones(self, cond: RamanDriveCondition, drive_delta: float, start: float,
                    duration: float, psi: float = 0.0):
        """Tone pair with tone A at omega_e(uu) - Delta and tone B delta lower.

        ``psi`` is the phase of tone A relative to tone B.
        """
        return raman_tone_pair(self.e_lines["uu"], cond, drive_delta, start, duration, psi)

    def evolve(self, rho0, tones, t0, t1, t_eval=None, method="auto") -> lb.Trajectory:
        return lb.evolve(rho0, self.H0, tones, self.collapse, (t0, t1), t_eval=t_eval,
                         rtol=self.tol.rtol, atol=self.tol.atol, max_step=self.tol.max_step_s,
                         method=method)

    def propagate(self, rho0, tones, t0, t1, method="auto"):
        return self.evolve(rho0, tones, t0, t1, t_eval=[t1], method=method).final()


def raman_tone_pair(e_uu: float, cond: RamanDriveCondition, drive_delta: float, start: float,
                    duration: float, psi: float = 0.0):
    """Tone A at e_uu - Delta with phase 0, tone B drive_delta lower with phase -psi."""
    fA = e_uu - cond.Delta
    return [lb.DriveTone(fA, cond.Omega_A, 0.0, start, duration),
            lb.DriveTone(fA - drive_delta, cond.Omega_B, -psi, start, duration)]


def flip_probability(reg: Register, rho_states, target: int, initial: str,
                     conditional: bool = False) -> np.ndarray:
    """Probability that the target nucleus left its initial value.

    With ``conditional`` the probability is taken within the branch where the
    spectator kept its initial value, which removes spectator leakage.
    """
    p = reg.nuclear_populations(rho_states)
    k0 = nuclear_index(initial)
    bit = (k0 >> (1 - target)) & 1
    sbit = (k0 >> target) & 1
    mask = np.array([((k >> (1 - target)) & 1) != bit for k in range(4)])
    if not conditional:
        return p[..., mask].sum(axis=-1)
    keep = np.array([((k >> target) & 1) == sbit for k in range(4)])
    return p[..., mask & keep].sum(axis=-1) / p[..., keep].sum(axis=-1)


def label_with(target: int, target_bit: int, spectator_bit: int) -> str:
    bits = [0, 0]
    bits[target] = target_bit
    bits[1 - target] = spectator_bit
    return NUC_LABELS[2 * bits[0] + bits[1]]
