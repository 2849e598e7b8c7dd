"""Static Hamiltonian and spectroscopy of the electron + two-nucleus register.

Basis ordering (used everywhere in the package): product states |e, n1, n2>
with the electron as the slowest index and bit value 1 meaning spin up, so

    index = 4*e + 2*n1 + n2,   e, n1, n2 in {0 (down), 1 (up)}.

Index 0 is |dn, dn, dn> and index 7 is |up, up, up>.  Nuclear 4x4 operators
use index = 2*n1 + n2 with the same convention (0 = "dd", 3 = "uu").

All parameters are ordinary frequencies in Hz (rates in 1/s).  Factors of
2*pi are applied only inside the functions that build operators.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable

import numpy as np

TWO_PI = 2.0 * np.pi

# single spin-1/2 operators in the (down, up) basis
SZ = np.diag([-0.5, 0.5]).astype(complex)
SX = 0.5 * np.array([[0, 1], [1, 0]], dtype=complex)
SY = 0.5 * np.array([[0, 1j], [-1j, 0]], dtype=complex)
SP = np.array([[0, 0], [1, 0]], dtype=complex)  # raises down -> up
SM = SP.conj().T
ID2 = np.eye(2, dtype=complex)

NUC_LABELS = ("dd", "du", "ud", "uu")
_ARROW = {0: "↓", 1: "↑"}
_EARROW = {0: "⇓", 1: "⇑"}


class ParameterError(ValueError):
    """Invalid spin-system parameters."""


@dataclass(frozen=True)
class LevelLabel:
    electron: int
    nuc1: int
    nuc2: int

    @property
    def index(self) -> int:
        return 4 * self.electron + 2 * self.nuc1 + self.nuc2

    @classmethod
    def from_index(cls, index: int) -> "LevelLabel":
        if not 0 <= index < 8:
            raise ValueError(f"level index out of range: {index}")
        return cls((index >> 2) & 1, (index >> 1) & 1, index & 1)

    def __str__(self) -> str:
        return _EARROW[self.electron] + _ARROW[self.nuc1] + _ARROW[self.nuc2]


LEVEL_NAMES = tuple(str(LevelLabel.from_index(i)) for i in range(8))


def nuclear_index(label: str) -> int:
    """'dd', 'du', 'ud', 'uu' -> 0..3 (first letter is nucleus 1)."""
    try:
        return NUC_LABELS.index(label)
    except ValueError:
        raise ValueError(f"unknown nuclear state label {label!r}") from None


def op3(e=ID2, n1=ID2, n2=ID2) -> np.ndarray:
    """Kronecker product electron (x) nucleus1 (x) nucleus2."""
    return np.kron(e, np.kron(n1, n2))


def nuc_op(which: int, op: np.ndarray) -> np.ndarray:
    """Embed a single-spin operator on nucleus ``which`` (0 or 1) in 8 dims."""
    return op3(n1=op) if which == 0 else op3(n2=op)


@dataclass(frozen=True)
class SpinSystemParams:
    """Spectroscopic constants of the register (Hz and 1/s, signed)."""

    omega_S: float = 7.7e9
    omega_I: tuple = (-791e3, -801e3)
    A_par: tuple = (36e3, 19e3)
    A_perp: tuple = (71e3, 12.8e3)
    kappa: float = 640e3
    g0: float = 5.6e3
    Gamma1_e: float = 1.0 / 0.8e-3
    Gammaphi_e: float = 0.0
    Gammaphi_n: tuple = (1.0 / 0.8, 1.0 / 1.2)
    n_th: float = 0.0
    C_zz: float = 0.8

    def __post_init__(self):
        for name in ("omega_I", "A_par", "A_perp", "Gammaphi_n"):
            val = tuple(float(v) for v in np.atleast_1d(getattr(self, name)))
            if len(val) != 2:
                raise ParameterError(f"{name} needs exactly two entries, got {len(val)}")
            object.__setattr__(self, name, val)
        for f in dataclasses.fields(self):
            vals = np.atleast_1d(getattr(self, f.name)).astype(float)
            if not np.all(np.isfinite(vals)):
                raise ParameterError(f"non-finite value for {f.name}")
        if self.kappa <= 0:
            raise ParameterError("kappa must be positive")
        if self.g0 < 0:
            raise ParameterError("g0 must be non-negative")
        if min(self.Gamma1_e, self.Gammaphi_e, *self.Gammaphi_n) < 0:
            raise ParameterError("rates must be non-negative")
        if not 0 <= self.n_th < 1:
            raise ParameterError("n_th must lie in [0, 1)")
        if any(w == 0 for w in self.omega_I):
            raise ParameterError("omega_I entries must be nonzero")

    def replace(self, **changes) -> "SpinSystemParams":
        return dataclasses.replace(self, **changes)

    def swapped(self) -> "SpinSystemParams":
        """Same physical system with the nucleus labels exchanged."""
        sw = lambda t: (t[1], t[0])  # noqa: E731
        return self.replace(omega_I=sw(self.omega_I), A_par=sw(self.A_par),
                            A_perp=sw(self.A_perp), Gammaphi_n=sw(self.Gammaphi_n))

    def coherent_only(self) -> "SpinSystemParams":
        """Copy with every decay and dephasing channel switched off."""
        return self.replace(Gamma1_e=0.0, Gammaphi_e=0.0, Gammaphi_n=(0.0, 0.0), n_th=0.0)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}


# ---------------------------------------------------------------------------
# parameter files: "key = value" lines, per-nucleus values comma separated


def format_params(params: SpinSystemParams) -> str:
    lines = []
    for key, val in params.to_dict().items():
        if isinstance(val, tuple):
            lines.append(f"{key} = " + ", ".join(repr(float(v)) for v in val))
        else:
            lines.append(f"{key} = {float(val)!r}")
    return "\n".join(lines) + "\n"


def parse_params(text: str, base: SpinSystemParams | None = None) -> SpinSystemParams:
    """Parse flat key-value text; unknown keys raise, missing keys use ``base``."""
    known = {f.name for f in dataclasses.fields(SpinSystemParams)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParameterError(f"line {lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ParameterError(f"line {lineno}: unknown key {key!r}")
        nums = [float(v) for v in val.split(",")]
        values[key] = tuple(nums) if len(nums) > 1 else nums[0]
    base = base if base is not None else SpinSystemParams()
    return base.replace(**values)


def load_params(source: str | Path) -> SpinSystemParams:
    """Load a parameter file, or a bundled preset by name (e.g. 'table1')."""
    path = Path(source)
    if not path.exists():
        preset = resources.files("spinreg") / "presets" / f"{source}.params"
        if not preset.is_file():
            raise FileNotFoundError(f"no parameter file or preset named {source!r}")
        return parse_params(preset.read_text())
    return parse_params(path.read_text())


def table1() -> SpinSystemParams:
    return load_params("table1")


# ---------------------------------------------------------------------------
# Hamiltonian and derived spectroscopy


def build_static_hamiltonian(params: SpinSystemParams, frame_hz: float = 0.0,
                             include_czz: bool = True) -> np.ndarray:
    """8x8 static Hamiltonian in rad/s.

    ``frame_hz`` is subtracted from the electron Zeeman term, giving the
    Hamiltonian in a frame rotating at that frequency about Sz.
    """
    Sz = op3(e=SZ)
    H = (params.omega_S - frame_hz) * Sz
    for i in range(2):
        Iz, Ix = nuc_op(i, SZ), nuc_op(i, SX)
        H = H + params.omega_I[i] * Iz
        H = H + params.A_par[i] * Sz @ Iz + params.A_perp[i] * Sz @ Ix
    if include_czz:
        H = H + params.C_zz * nuc_op(0, SZ) @ nuc_op(1, SZ)
    return TWO_PI * H


def _manifold_eigenstates(params: SpinSystemParams, electron: int):
    """Eigen-decomposition of the 4x4 nuclear block for a fixed electron state.

    Eigenvectors are matched to product labels by largest overlap and given a
    real positive largest component.  Returns (energies in Hz, vectors 4x4).
    """
    H = build_static_hamiltonian(params) / TWO_PI
    sl = slice(4 * electron, 4 * electron + 4)
    block = H[sl, sl]
    w, v = np.linalg.eigh(block)
    order = np.argmax(np.abs(v), axis=0)
    if len(set(order)) != 4:  # strongly mixed; fall back to energy order
        order = np.arange(4)
    energies = np.empty(4)
    vecs = np.empty((4, 4), dtype=complex)
    for col, lab in enumerate(order):
        vec = v[:, col]
        k = np.argmax(np.abs(vec))
        vec = vec * np.exp(-1j * np.angle(vec[k]))
        energies[lab] = w[col]
        vecs[:, lab] = vec
    return energies, vecs


def dressed_levels(params: SpinSystemParams):
    """Energies (Hz) and eigenvectors of the static Hamiltonian.

    The Hamiltonian is block diagonal in the electron state, so eigenstates
    carry exact electron labels; nuclear labels follow the dominant product
    component.  Returns (energies[8], vectors[8, 8]) in package ordering.
    """
    E = np.empty(8)
    V = np.zeros((8, 8), dtype=complex)
    for e in (0, 1):
        w, v = _manifold_eigenstates(params, e)
        E[4 * e:4 * e + 4] = w
        V[4 * e:4 * e + 4, 4 * e:4 * e + 4] = v
    return E, V


def electron_transition_frequencies(params: SpinSystemParams) -> dict:
    """Nuclear-state-preserving electron flip frequencies (Hz), keyed 'uu'... 'dd'."""
    E, _ = dressed_levels(params)
    return {lab: float(E[4 + k] - E[k]) for k, lab in enumerate(NUC_LABELS)}


def nuclear_transition_frequencies(params: SpinSystemParams, electron: int = 0) -> dict:
    """Nuclear flip frequencies (Hz, positive) in a given electron manifold.

    Keys are (nucleus, spectator_state) with spectator_state 0/1.
    """
    E, _ = dressed_levels(params)
    out = {}
    for t in range(2):
        for s in range(2):
            up = [0, 0]
            dn = [0, 0]
            up[t], dn[t] = 1, 0
            up[1 - t] = dn[1 - t] = s
            i_up = 4 * electron + 2 * up[0] + up[1]
            i_dn = 4 * electron + 2 * dn[0] + dn[1]
            out[(t, s)] = float(abs(E[i_up] - E[i_dn]))
    return out


def natural_nuclear_frequency(params: SpinSystemParams, nucleus: int) -> float:
    """Closed-form -omega_I + A_par/2 (Hz), the first-order ground-manifold line."""
    return -params.omega_I[nucleus] + params.A_par[nucleus] / 2


def purcell_rate(g0: float, kappa: float) -> float:
    """Resonant Purcell rate 4 g0^2 / kappa in 1/s (inputs in Hz)."""
    if not kappa > 0:
        raise ParameterError("kappa must be positive")
    return 4.0 * (TWO_PI * g0) ** 2 / (TWO_PI * kappa)


def sideband_branching(params: SpinSystemParams, nucleus: int):
    """Return (A_perp/(2 omega_I), its square) for one nucleus."""
    w = params.omega_I[nucleus]
    if w == 0:
        raise ParameterError("omega_I must be nonzero")
    ratio = params.A_perp[nucleus] / (2.0 * w)
    return ratio, ratio ** 2


def sideband_frequencies(params: SpinSystemParams) -> dict:
    """Electron-nuclear flip-flop/flip-flip lines relative to omega_S (Hz).

    Keys (nucleus, spectator_state, nuc_from, nuc_to) for |dn, from> ->
    |up, to> transitions of the given nucleus.
    """
    E, _ = dressed_levels(params)
    out = {}
    for t in range(2):
        for s in range(2):
            for a in (0, 1):
                b = 1 - a
                bits_a = [s, s]
                bits_b = [s, s]
                bits_a[t], bits_b[t] = a, b
                ia = 2 * bits_a[0] + bits_a[1]
                ib = 4 + 2 * bits_b[0] + bits_b[1]
                out[(t, s, a, b)] = float(E[ib] - E[ia] - params.omega_S)
    return out


def is_hermitian(M: np.ndarray, rtol: float = 1e-12) -> bool:
    scale = max(np.max(np.abs(M)), 1.0)
    return bool(np.max(np.abs(M - M.conj().T)) <= rtol * scale)


def check_density_matrix(rho: np.ndarray, tol: float = 1e-10) -> None:
    """Raise ValueError unless ``rho`` is Hermitian, unit trace and PSD."""
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError("density matrix must be square")
    if not is_hermitian(rho, 1e-9):
        raise ValueError("density matrix is not Hermitian")
    tr = np.trace(rho).real
    if abs(tr - 1) > tol:
        raise ValueError(f"density matrix trace {tr} != 1")
    lam = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))
    if lam.min() < -tol:
        raise ValueError(f"density matrix has negative eigenvalue {lam.min():.3e}")


def product_state(electron: int, nuc1: int, nuc2: int) -> np.ndarray:
    rho = np.zeros((8, 8), dtype=complex)
    k = LevelLabel(electron, nuc1, nuc2).index
    rho[k, k] = 1.0
    return rho


def embed_nuclear(rho_n: np.ndarray, electron: int = 0) -> np.ndarray:
    """Place a 4x4 nuclear density matrix in the given electron manifold."""
    e = np.zeros((2, 2), dtype=complex)
    e[electron, electron] = 1
    return np.kron(e, rho_n)


def reduce_nuclear(rho: np.ndarray) -> np.ndarray:
    """Partial trace over the electron."""
    return rho[:4, :4] + rho[4:, 4:]


def level_populations(rho: np.ndarray) -> np.ndarray:
    return np.real(np.diagonal(rho, axis1=-2, axis2=-1))


def nuclear_populations(rho: np.ndarray) -> np.ndarray:
    """Populations of dd, du, ud, uu summed over the electron."""
    p = level_populations(rho)
    return p[..., :4] + p[..., 4:]
