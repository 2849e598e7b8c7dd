"""Two-qubit state tomography: settings, maximum likelihood, fidelity, SPAM.

Outcomes are ordered dd, du, ud, uu (Qb1 is the left label).  A setting is a
pair of pre-rotations from {I, X, Y}: X and Y are pi/2 rotations about x and
y, with R(theta, phi) = exp(-i theta (cos phi Sx + sin phi Sy)).
"""
from __future__ import annotations

import csv
import io
import itertools
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .fitting import fit_decaying_cosine
from .spin_model import NUC_LABELS, SX, SY, SZ

SETTING_LABELS = ("I", "X", "Y")
DEFAULT_SETTINGS = tuple(itertools.product(SETTING_LABELS, repeat=2))


class TomographyError(ValueError):
    pass


def rotation(theta: float, phi: float) -> np.ndarray:
    return expm(-1j * theta * (np.cos(phi) * SX + np.sin(phi) * SY))


PRE_ROTATIONS = {"I": np.eye(2, dtype=complex), "X": rotation(np.pi / 2, 0.0),
                 "Y": rotation(np.pi / 2, np.pi / 2)}


@dataclass
class TomographySetting:
    pre: tuple            # (label Qb1, label Qb2)
    counts: np.ndarray    # 4 outcomes, dd du ud uu

    def __post_init__(self):
        self.pre = tuple(self.pre)
        if len(self.pre) != 2 or any(s not in SETTING_LABELS for s in self.pre):
            raise TomographyError(f"bad setting {self.pre}")
        self.counts = np.asarray(self.counts, float)
        if self.counts.shape != (4,) or np.any(self.counts < 0):
            raise TomographyError("counts must be 4 non-negative numbers")

    def unitary(self) -> np.ndarray:
        return np.kron(PRE_ROTATIONS[self.pre[0]], PRE_ROTATIONS[self.pre[1]])

    def projectors(self) -> np.ndarray:
        """E_k = U^dag |k><k| U for the four outcomes."""
        U = self.unitary()
        return np.einsum("ki,kj->kij", U.conj(), U)


@dataclass
class TomographyResult:
    rho: np.ndarray
    loglik: float
    iterations: int
    fidelity_raw: float = float("nan")
    fidelity_spam_corrected: float = float("nan")
    loglik_trace: list = field(default_factory=list)
    converged: bool = True

    def to_json(self) -> str:
        return json.dumps({
            "rho_real": self.rho.real.tolist(), "rho_imag": self.rho.imag.tolist(),
            "fidelity_raw": self.fidelity_raw,
            "fidelity_spam_corrected": self.fidelity_spam_corrected,
            "loglik": self.loglik, "iterations": self.iterations, "converged": self.converged,
        }, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "TomographyResult":
        d = json.loads(text)
        rho = np.array(d["rho_real"]) + 1j * np.array(d["rho_imag"])
        return cls(rho, d["loglik"], d["iterations"], d["fidelity_raw"],
                   d["fidelity_spam_corrected"], converged=d.get("converged", True))

    def bar_data(self):
        """Rows (row label, column label, Re, Im) for 3D bar plots."""
        return [(NUC_LABELS[i], NUC_LABELS[j], float(self.rho[i, j].real),
                 float(self.rho[i, j].imag)) for i in range(4) for j in range(4)]


def probabilities(rho: np.ndarray, setting) -> np.ndarray:
    pre = setting.pre if isinstance(setting, TomographySetting) else tuple(setting)
    U = np.kron(PRE_ROTATIONS[pre[0]], PRE_ROTATIONS[pre[1]])
    return np.real(np.diag(U @ rho @ U.conj().T))


def exact_settings(rho: np.ndarray, shots: float = 1.0, settings=DEFAULT_SETTINGS) -> list:
    """Settings whose 'counts' are exact expected counts for rho."""
    return [TomographySetting(s, shots * np.clip(probabilities(rho, s), 0, None)) for s in settings]


def sample_settings(rho: np.ndarray, shots: int, rng, settings=DEFAULT_SETTINGS, T=None) -> list:
    out = []
    for s in settings:
        p = np.clip(probabilities(rho, s), 0, None)
        if T is not None:
            p = T @ p
        out.append(TomographySetting(s, rng.multinomial(shots, p / p.sum())))
    return out


def check_informationally_complete(settings) -> None:
    E = np.concatenate([s.projectors() for s in settings]).reshape(-1, 16)
    rank = np.linalg.matrix_rank(E, tol=1e-9)
    if rank < 16:
        raise TomographyError(f"settings are not informationally complete (rank {rank} < 16)")


def spam_correct(p, T, max_cond: float = 1e6) -> np.ndarray:
    """T^-1 p, clipped to [0, 1] and renormalized."""
    T = np.asarray(T, float)
    c = np.linalg.cond(T)
    if not np.isfinite(c) or c > max_cond:
        raise TomographyError(f"T matrix is ill-conditioned (cond = {c:.3g})")
    q = np.linalg.solve(T, np.asarray(p, float))
    q = np.clip(q, 0.0, 1.0)
    s = q.sum()
    if s <= 0:
        raise TomographyError("corrected probabilities vanish")
    return q / s


def _loglik(f, P):
    with np.errstate(divide="ignore"):
        return float(np.sum(np.where(f > 0, f * np.log(np.maximum(P, 1e-300)), 0.0)))


def mle_reconstruct(settings, T=None, spam: str = "pre", dilution: float = 0.5,
                    max_iter: int = 10_000, tol: float = 1e-10, target=None,
                    check_monotone: bool = True) -> TomographyResult:
    """Diluted R rho R maximum likelihood over PSD, unit-trace matrices.

    spam='pre' corrects each setting's frequencies with T before the fit;
    spam='model' keeps the raw counts and fits T p(rho) instead.
    The likelihood never decreases: a step that would lower it is retried
    with half the dilution.
    """
    settings = list(settings)
    if len(settings) < 9:
        raise TomographyError("need at least 9 settings")
    check_informationally_complete(settings)
    if spam not in ("pre", "model"):
        raise TomographyError("spam must be 'pre' or 'model'")
    E = np.stack([s.projectors() for s in settings])          # (S, 4, 4, 4)
    n = np.stack([s.counts for s in settings])                # (S, 4)
    tot = n.sum(axis=1, keepdims=True)
    if np.any(tot <= 0):
        raise TomographyError("a setting has no counts")
    f = n / tot
    Tm = np.eye(4)
    if T is not None:
        if spam == "pre":
            f = np.stack([spam_correct(fi, T) for fi in f])
        else:
            spam_correct(np.full(4, 0.25), T)   # condition check
            Tm = np.asarray(T, float)
    S = len(settings)

    def model(rho):
        P = np.real(np.einsum("skij,ji->sk", E, rho))
        return np.clip(P, 0.0, None) @ Tm.T

    rho = np.eye(4, dtype=complex) / 4
    L = _loglik(f, model(rho))
    trace = [L]
    eps = dilution
    it = 0
    converged = False
    for it in range(1, max_iter + 1):
        P = model(rho)
        w = np.where(f > 0, f / np.maximum(P, 1e-300), 0.0) @ Tm  # (S, 4)
        R = np.einsum("sk,skij->ij", w, E) / S
        while True:
            A = (np.eye(4) + eps * R) / (1 + eps)
            new = A @ rho @ A.conj().T
            new = 0.5 * (new + new.conj().T)
            new /= np.trace(new).real
            Ln = _loglik(f, model(new))
            if Ln >= L - 1e-13 or eps < 1e-8:
                break
            eps *= 0.5
        if check_monotone and Ln < L - 1e-9:
            raise TomographyError("likelihood decreased")
        gain = Ln - L
        rho, L = new, Ln
        trace.append(L)
        if gain < tol:
            converged = True
            break
    res = TomographyResult(rho, L, it, loglik_trace=trace, converged=converged)
    if target is not None:
        fid = fidelity(rho, target)
        if T is None:
            res.fidelity_raw = fid
        else:
            res.fidelity_spam_corrected = fid
    return res


def _psd_sqrt(rho):
    w, V = np.linalg.eigh(0.5 * (rho + rho.conj().T))
    if w.min() < -1e-8:
        raise TomographyError(f"matrix is not positive semidefinite (min eig {w.min():.3g})")
    return (V * np.sqrt(np.clip(w, 0, None))) @ V.conj().T


def as_density(x) -> np.ndarray:
    a = np.asarray(x, complex)
    if a.ndim == 1:
        a = a / np.linalg.norm(a)
        return np.outer(a, a.conj())
    return a


def fidelity(rho, target) -> float:
    """Uhlmann fidelity (Tr sqrt(sqrt(t) rho sqrt(t)))^2; vectors allowed."""
    rho = as_density(rho)
    tgt = as_density(target)
    st = _psd_sqrt(tgt)
    _psd_sqrt(rho)
    M = st @ rho @ st
    w = np.linalg.eigvalsh(0.5 * (M + M.conj().T))
    return float(np.clip(np.sum(np.sqrt(np.clip(w, 0, None))) ** 2, 0.0, 1.0))


def local_z_aligned_fidelity(rho, target, grid: int = 181):
    """max over local z rotations of F(Z rho Z^dag, target), and the angles.

    Local z rotations are the software frame freedom of each qubit.  A grid
    search is refined with a local optimizer.
    """
    from scipy.optimize import minimize

    rho = as_density(rho)
    tgt = as_density(target)
    sz = np.real(np.diag(SZ))
    d1 = np.repeat(sz, 2)
    d2 = np.tile(sz, 2)

    def f(ab):
        u = np.exp(1j * (ab[0] * d1 + ab[1] * d2))
        return -np.real(np.sum(tgt.T * (u[:, None] * rho * u.conj()[None, :])))

    g = np.linspace(0, 2 * np.pi, grid, endpoint=False)
    A, B = np.meshgrid(g, g, indexing="ij")
    vals = np.array([f((a, b)) for a, b in zip(A.ravel(), B.ravel())])
    k = int(np.argmin(vals))
    r = minimize(f, [A.ravel()[k], B.ravel()[k]], method="Nelder-Mead",
                 options={"xatol": 1e-8, "fatol": 1e-12})
    a, b = r.x
    u = np.exp(1j * (a * d1 + b * d2))
    aligned = u[:, None] * rho * u.conj()[None, :]
    return fidelity(aligned, tgt), (float(a), float(b)), aligned


# -- file formats

def settings_to_csv(settings) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["setting_q1", "setting_q2", "n_dd", "n_du", "n_ud", "n_uu"])
    for s in settings:
        w.writerow([s.pre[0], s.pre[1], *[repr(float(c)) for c in s.counts]])
    return buf.getvalue()


def settings_from_csv(text: str) -> list:
    rows = list(csv.DictReader(io.StringIO(text)))
    return [TomographySetting((r["setting_q1"], r["setting_q2"]),
                              [float(r[k]) for k in ("n_dd", "n_du", "n_ud", "n_uu")])
            for r in rows]


# -- Bell coherence

@dataclass
class CoherenceFit:
    signal: np.ndarray
    amplitude: float
    decay: float
    frequency: float
    residual: float


def parity_signal(populations) -> np.ndarray:
    """p_dd + p_uu - p_du - p_ud, the parity after pi/2 analysis pulses on both qubits."""
    p = np.asarray(populations, float)
    return p[..., 0] + p[..., 3] - p[..., 1] - p[..., 2]


def bell_coherence_observable(populations, delays, frequency=None) -> CoherenceFit:
    """Coherence amplitude and decay time of a Ramsey-on-Bell dataset.

    ``populations`` are taken after pi/2 analysis pulses on both qubits whose
    relative phase advances with the delay (artificial detuning), so the
    parity oscillates with an envelope equal to 2|rho_coh|.
    """
    y = parity_signal(populations)
    fit = fit_decaying_cosine(np.asarray(delays, float), y, f_guess=frequency)
    return CoherenceFit(y, fit.amplitude, fit.decay, fit.frequency, fit.residual)


def bell_coherence(rho4, parity: str = "odd") -> complex:
    """The off-diagonal element that carries the Bell coherence."""
    return rho4[1, 2] if parity == "odd" else rho4[0, 3]


def analysis_populations(rho4, phi1: float, phi2: float = 0.0) -> np.ndarray:
    """Populations after pi/2 pulses with axes phi1, phi2 (ideal, numerical)."""
    U = np.kron(rotation(np.pi / 2, phi1), rotation(np.pi / 2, phi2))
    return np.real(np.diag(U @ rho4 @ U.conj().T))
