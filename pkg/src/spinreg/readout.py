"""Monte Carlo model of the fluorescence readout of the nuclear register.

Each shot addresses the four electron lines in turn (``reps`` pi pulses per
line, one integration window after each).  A pulse on the line of the
current nuclear state excites the electron with probability 1 - pi_error;
the emitted photon is detected with probability eta, and each excitation
flips nucleus q with probability p_q (cross-relaxation), after which later
pulses address the new state.  Dark counts are Poisson in every window.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .spin_model import NUC_LABELS, SpinSystemParams, sideband_branching

# line order of a readout block, and count column order of a ShotRecord
LINE_ORDER = ("uu", "du", "ud", "dd")
CSV_HEADER = ("state_true", "C_uu", "C_du", "C_ud", "C_dd", "dx", "dy", "state_assigned")
CHUNK = 1000


class ClassifierError(ValueError):
    pass


@dataclass(frozen=True)
class DetectionParams:
    """Readout knobs.  eta and dark_rate are assumptions, not measured values."""

    eta: float = 0.2
    dark_rate: float = 100.0
    t_int: float = 1e-3
    n_reps: int = 200
    pi_error: float = 0.0
    xrel_scale: float = 1.0
    purcell_filter: bool = True
    prep_error: float = 0.03

    def __post_init__(self):
        for name in ("eta", "pi_error", "prep_error"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.dark_rate < 0 or self.t_int < 0 or self.xrel_scale < 0:
            raise ValueError("rates, windows and scales must be non-negative")
        if self.n_reps < 1:
            raise ValueError("n_reps must be at least 1")


def flip_probabilities(params: SpinSystemParams, det: DetectionParams) -> np.ndarray:
    """Per-excitation flip probability of each nucleus.

    The sideband branching (A_perp / 2 omega_I)^2, reduced by the resonator
    filter at the sideband detuning omega_I when ``purcell_filter`` is set.
    """
    out = np.zeros(2)
    for q in range(2):
        _, b = sideband_branching(params, q)
        if det.purcell_filter:
            b /= 1.0 + 4.0 * (params.omega_I[q] / params.kappa) ** 2
        out[q] = b * det.xrel_scale
    if out.sum() >= 1:
        raise ValueError("flip probabilities exceed 1")
    return out


@dataclass
class ShotRecord:
    counts: np.ndarray          # (n, 4) in LINE_ORDER
    true_state: np.ndarray      # (n,) index into NUC_LABELS at readout start
    prepared: np.ndarray        # (n,) nominal prepared state
    final_state: np.ndarray     # (n,) state after the readout block
    assigned: np.ndarray | None = None

    def __len__(self):
        return len(self.true_state)

    @property
    def dx(self) -> np.ndarray:
        c = self.counts
        return (c[:, 0] + c[:, 2]) - (c[:, 1] + c[:, 3])

    @property
    def dy(self) -> np.ndarray:
        c = self.counts
        return (c[:, 0] + c[:, 1]) - (c[:, 2] + c[:, 3])

    def features(self) -> np.ndarray:
        return np.column_stack([self.dx, self.dy]).astype(float)

    def subset(self, mask) -> "ShotRecord":
        a = None if self.assigned is None else self.assigned[mask]
        return ShotRecord(self.counts[mask], self.true_state[mask], self.prepared[mask],
                          self.final_state[mask], a)

    @classmethod
    def concat(cls, recs) -> "ShotRecord":
        recs = list(recs)
        a = None
        if all(r.assigned is not None for r in recs):
            a = np.concatenate([r.assigned for r in recs])
        return cls(np.concatenate([r.counts for r in recs]),
                   np.concatenate([r.true_state for r in recs]),
                   np.concatenate([r.prepared for r in recs]),
                   np.concatenate([r.final_state for r in recs]), a)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        assigned = self.assigned if self.assigned is not None else np.full(len(self), -1)
        for k in range(len(self)):
            c = self.counts[k]
            w.writerow([NUC_LABELS[self.true_state[k]], *map(int, c), int(self.dx[k]),
                        int(self.dy[k]),
                        NUC_LABELS[assigned[k]] if assigned[k] >= 0 else ""])
        return buf.getvalue()


def _line_state(label):
    return NUC_LABELS.index(label)


def _flip(state, q):
    # NUC_LABELS index = 2 n1 + n2
    return state ^ (2 if q == 0 else 1)


def _simulate_chunk(states, params, det, pflip, rng):
    n = len(states)
    st = states.copy()
    counts = np.zeros((n, 4), dtype=np.int64)
    lam = det.dark_rate * det.t_int
    e = 1.0 - det.pi_error
    cum = np.cumsum(pflip)
    for li, lab in enumerate(LINE_ORDER):
        k = _line_state(lab)
        for _ in range(det.n_reps):
            on = st == k
            exc = on & (rng.random(n) < e)
            counts[:, li] += exc & (rng.random(n) < det.eta)
            r = rng.random(n)
            f1 = exc & (r < cum[0])
            f2 = exc & (r >= cum[0]) & (r < cum[1])
            st[f1] = _flip(st[f1], 0)
            st[f2] = _flip(st[f2], 1)
        if lam > 0:
            counts[:, li] += rng.poisson(lam * det.n_reps, n)
    return counts, st


def simulate_readout(prepared, params: SpinSystemParams, det: DetectionParams,
                     seed: int | np.random.SeedSequence = 0) -> ShotRecord:
    """Shots for an array of prepared state indices (or labels).

    Shots are generated in fixed chunks, each from its own spawned seed, so
    the stream is identical whatever the chunking of the caller.
    """
    prepared = np.array([NUC_LABELS.index(s) if isinstance(s, str) else int(s)
                         for s in np.atleast_1d(prepared)], dtype=np.int64)
    pflip = flip_probabilities(params, det)
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    n = len(prepared)
    n_chunks = max(1, -(-n // CHUNK))
    children = ss.spawn(n_chunks)
    out = []
    for c in range(n_chunks):
        rng = np.random.default_rng(children[c])
        prep = prepared[c * CHUNK:(c + 1) * CHUNK]
        true = prep.copy()
        bad = rng.random(len(prep)) < det.prep_error
        if bad.any():
            # a wrong preparation is any of the other three states
            shift = rng.integers(1, 4, bad.sum())
            true[bad] = (prep[bad] + shift) % 4
        counts, final = _simulate_chunk(true, params, det, pflip, rng)
        out.append(ShotRecord(counts, true, prep, final))
    return ShotRecord.concat(out)


def simulate_readout_shot(state, params, det, rng_seed) -> ShotRecord:
    return simulate_readout([state], params, det, rng_seed)


def training_set(params, det, shots_per_state: int, seed=0) -> ShotRecord:
    prepared = np.repeat(np.arange(4), shots_per_state)
    return simulate_readout(prepared, params, det, seed)


# -- classification

@dataclass
class Classifier:
    centroids: np.ndarray       # (4, 2)
    labels: np.ndarray          # state index of each centroid

    def assign(self, records_or_xy) -> np.ndarray:
        xy = records_or_xy.features() if isinstance(records_or_xy, ShotRecord) \
            else np.atleast_2d(np.asarray(records_or_xy, float))
        d = ((xy[:, None, :] - self.centroids[None, :, :]) ** 2).sum(-1)
        return self.labels[np.argmin(d, axis=1)]


def classify(records: ShotRecord, seed: int = 0, n_init: int = 10) -> Classifier:
    """4-cluster k-means in the (dx, dy) plane; clusters named by majority vote."""
    from sklearn.cluster import KMeans

    xy = records.features()
    if len(np.unique(xy, axis=0)) < 4:
        raise ClassifierError("fewer than 4 distinct points in the training set")
    km = KMeans(n_clusters=4, n_init=n_init, random_state=seed).fit(xy)
    labels = np.empty(4, dtype=np.int64)
    for c in range(4):
        votes = np.bincount(records.prepared[km.labels_ == c], minlength=4)
        labels[c] = int(np.argmax(votes))    # argmax picks the lowest index on ties
    if len(set(labels.tolist())) < 4:
        raise ClassifierError(f"clusters do not separate the four states (labels {labels})")
    return Classifier(km.cluster_centers_.copy(), labels)


def assign(clf: Classifier, record) -> np.ndarray:
    return clf.assign(record)


def estimate_T_matrix(records: ShotRecord, clf: Classifier | None = None,
                      min_shots: int = 100) -> np.ndarray:
    """Column-stochastic T with T[i, j] = P(assigned i | prepared j)."""
    assigned = records.assigned if clf is None else clf.assign(records)
    if assigned is None:
        raise ValueError("records are not assigned and no classifier was given")
    T = np.zeros((4, 4))
    for j in range(4):
        m = records.prepared == j
        if m.sum() < min_shots:
            raise ValueError(f"state {NUC_LABELS[j]} has {m.sum()} shots (< {min_shots})")
        T[:, j] = np.bincount(assigned[m], minlength=4)
    return T / T.sum(axis=0, keepdims=True)


# -- exact oracle for the Markov model

def _count_pmf(n_trials, p, lam, size):
    """PMF of Binomial(n_trials, p) + Poisson(lam) on 0..size-1."""
    k = np.arange(size)
    b = stats.binom.pmf(k, n_trials, p) if n_trials > 0 else (k == 0).astype(float)
    if lam <= 0:
        return b
    pois = stats.poisson.pmf(k, lam)
    return np.convolve(b, pois)[:size]


def _diff_pmf(pa, pb):
    """PMF of A - B for independent A, B on 0..size-1; offset size-1."""
    return np.convolve(pa, pb[::-1])


@dataclass
class ConfusionOracle:
    T: np.ndarray               # exact column-stochastic confusion (1-flip truncation)
    truncated: np.ndarray       # probability mass of >= 2 flips per true state
    flip_after: np.ndarray      # P(state changed during the block) per true state


def exact_confusion(params, det: DetectionParams, clf: Classifier,
                    include_prep_error: bool = True) -> ConfusionOracle:
    """Confusion matrix of the Markov readout model by enumeration.

    Trajectories with no flip or exactly one flip are enumerated (flip
    nucleus and pulse index); the dropped mass (two or more flips) is
    returned so callers can bound the truncation.  Given a trajectory the
    four line counts are independent, so u = C_uu - C_dd and v = C_du - C_ud
    are independent; dx = u - v and dy = u + v, and the classifier is applied
    on the exact integer grid.
    """
    pflip = flip_probabilities(params, det)
    pf = pflip.sum()
    e = 1.0 - det.pi_error
    n = det.n_reps
    lam = det.dark_rate * det.t_int * n
    size = n + 1 + int(lam + 12 * np.sqrt(lam + 1)) + 1
    # success prob of a single pulse given that it did not flip anything
    p_det_noflip = det.eta * e * (1 - pf) / (1 - e * pf)
    stay = (1 - e * pf)

    # grid of (u, v) -> assigned state; u = C_uu - C_dd, v = C_du - C_ud
    r = np.arange(-(size - 1), size)
    U, V = np.meshgrid(r, r, indexing="ij")
    dx = U - V
    dy = U + V
    lab = clf.assign(np.column_stack([dx.ravel(), dy.ravel()])).reshape(U.shape)
    masks = [(lab == s).astype(float) for s in range(4)]
    dark = _count_pmf(0, 0.0, lam, size)

    def assigned_dist(line_pmfs):
        pu = _diff_pmf(line_pmfs["uu"], line_pmfs["dd"])
        pv = _diff_pmf(line_pmfs["du"], line_pmfs["ud"])
        return np.array([pu @ m @ pv for m in masks])

    order = {lab_: i for i, lab_ in enumerate(LINE_ORDER)}
    T = np.zeros((4, 4))
    trunc = np.zeros(4)
    changed = np.zeros(4)
    for s0 in range(4):
        l0 = NUC_LABELS[s0]
        pmfs = {lab_: dark for lab_ in LINE_ORDER}
        # no flip at all
        w0 = stay ** n
        pm = dict(pmfs)
        pm[l0] = _count_pmf(n, p_det_noflip, lam, size)
        col = w0 * assigned_dist(pm)
        mass = w0
        for q in range(2):
            s1 = _flip(s0, q)
            l1 = NUC_LABELS[s1]
            later = order[l1] > order[l0]
            # one flip at pulse j; the new line is addressed in full only if later
            w_after = stay ** n if later else 1.0
            for j in range(1, n + 1):
                w = stay ** (j - 1) * e * pflip[q] * w_after
                if w < 1e-16:
                    continue
                pm = dict(pmfs)
                b = _count_pmf(j - 1, p_det_noflip, 0.0, size)
                b = b * (1 - det.eta) + np.concatenate([[0.0], b[:-1]]) * det.eta
                pm[l0] = np.convolve(b, dark)[:size]
                if later:
                    pm[l1] = _count_pmf(n, p_det_noflip, lam, size)
                col += w * assigned_dist(pm)
                mass += w
                changed[s0] += w
        T[:, s0] = col / mass
        trunc[s0] = 1.0 - mass
    if include_prep_error and det.prep_error > 0:
        mix = np.full((4, 4), det.prep_error / 3)
        np.fill_diagonal(mix, 1 - det.prep_error)
        T = T @ mix
    return ConfusionOracle(T, trunc, changed)


def markov_final_distribution(params, det: DetectionParams, state) -> np.ndarray:
    """Exact distribution of the nuclear state after one block.

    The per-pulse transition matrix of the Markov model is applied for every
    pulse of the block in order.
    """
    s0 = NUC_LABELS.index(state) if isinstance(state, str) else int(state)
    pflip = flip_probabilities(params, det)
    e = 1.0 - det.pi_error
    p = np.zeros(4)
    p[s0] = 1.0
    for lab in LINE_ORDER:
        k = NUC_LABELS.index(lab)
        M = np.eye(4)
        for q in range(2):
            M[k, k] -= e * pflip[q]
            M[_flip(k, q), k] += e * pflip[q]
        p = np.linalg.matrix_power(M, det.n_reps) @ p
    return p


def analytic_flip_after_block(params, det: DetectionParams, state) -> float:
    """P(state at the end of the block differs from the initial one)."""
    s0 = NUC_LABELS.index(state) if isinstance(state, str) else int(state)
    return float(1.0 - markov_final_distribution(params, det, s0)[s0])


def histogram2d(records: ShotRecord, bins: int = 41):
    """(dx, dy) histogram per true state, as plot-ready arrays."""
    lim = int(np.abs(records.features()).max()) + 1
    edges = np.linspace(-lim, lim, bins + 1)
    out = {}
    for s in range(4):
        m = records.true_state == s
        h, _, _ = np.histogram2d(records.dx[m], records.dy[m], bins=[edges, edges])
        out[NUC_LABELS[s]] = h
    return edges, out


# -- frequency tracking

@dataclass
class TrackerGains:
    kp: float = 0.3
    ki: float = 0.5


@dataclass
class TrackingResult:
    times: np.ndarray
    drift: np.ndarray
    correction: np.ndarray
    residual: np.ndarray
    gains: TrackerGains = field(default_factory=TrackerGains)

    @property
    def rms(self) -> float:
        return float(np.sqrt(np.mean(self.residual ** 2)))


def ou_drift(n: int, dt: float, sigma: float, tau: float, rng) -> np.ndarray:
    """Stationary Ornstein-Uhlenbeck samples with std sigma and correlation time tau."""
    a = np.exp(-dt / tau)
    x = np.empty(n)
    x[0] = rng.normal(0.0, sigma)
    kicks = rng.normal(0.0, sigma * np.sqrt(1 - a * a), n)
    for k in range(1, n):
        x[k] = a * x[k - 1] + kicks[k]
    return x


def track_frequency(duration: float = 600.0, block: float = 20e-3, sigma: float = 5e3,
                    tau: float = 120.0, meas_noise: float = 100.0,
                    gains: TrackerGains | None = None, enabled: bool = True,
                    seed: int = 0) -> TrackingResult:
    """PI loop on Ramsey detuning estimates between measurement blocks.

    Velocity form: c[k+1] = c[k] + kp (m[k] - m[k-1]) + ki m[k], where m is the
    measured residual detuning.
    """
    gains = gains or TrackerGains()
    rng = np.random.default_rng(seed)
    n = int(round(duration / block))
    drift = ou_drift(n, block, sigma, tau, rng) if sigma > 0 else np.zeros(n)
    noise = rng.normal(0.0, meas_noise, n) if meas_noise > 0 else np.zeros(n)
    corr = np.zeros(n)
    if enabled and (sigma > 0 or meas_noise > 0):
        m_prev = 0.0
        for k in range(n - 1):
            m = drift[k] - corr[k] + noise[k]
            corr[k + 1] = corr[k] + gains.kp * (m - m_prev) + gains.ki * m
            m_prev = m
    return TrackingResult(np.arange(n) * block, drift, corr, drift - corr, gains)
