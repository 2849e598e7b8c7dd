import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spinreg import readout as ro
from spinreg import sequencer as sq
from spinreg import tomography as tm
from spinreg.experiments import dfs_decay
from spinreg.tomography import TomographyError, TomographySetting

# published confusion matrix, columns renormalized
T_PUB = np.array([[0.91, 0.02, 0.05, 0.01],
                  [0.01, 0.92, 0.00, 0.06],
                  [0.05, 0.00, 0.91, 0.03],
                  [0.00, 0.05, 0.01, 0.94]])
T_PUB = T_PUB / T_PUB.sum(axis=0)


def random_state(seed, rank=None):
    rng = np.random.default_rng(seed)
    k = rank or int(rng.integers(1, 5))
    G = rng.normal(size=(4, k)) + 1j * rng.normal(size=(4, k))
    rho = G @ G.conj().T
    return rho / np.trace(rho).real


def test_exact_counts_recover_ground_state():
    dd = np.diag([1.0, 0, 0, 0]).astype(complex)
    r = tm.mle_reconstruct(tm.exact_settings(dd), target=dd)
    assert r.fidelity_raw >= 0.999


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_exact_counts_recover_random_state(seed):
    rho = random_state(seed)
    r = tm.mle_reconstruct(tm.exact_settings(rho, 1000.0), tol=1e-13)
    assert tm.fidelity(r.rho, rho) >= 1 - 1e-3


def test_uniform_counts_give_mixed_state():
    sett = [TomographySetting(s, [25, 25, 25, 25]) for s in tm.DEFAULT_SETTINGS]
    r = tm.mle_reconstruct(sett)
    assert np.allclose(r.rho, np.eye(4) / 4, atol=1e-8)
    assert tm.fidelity(r.rho, sq.bell_target("odd")) == pytest.approx(0.25, abs=1e-6)


def test_fidelity_identities():
    rho = random_state(5)
    assert tm.fidelity(rho, rho) == pytest.approx(1.0, abs=1e-8)
    a, b = np.array([1, 0, 0, 0]), np.array([0, 1, 0, 0])
    assert tm.fidelity(a, b) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(TomographyError):
        tm.fidelity(np.diag([1.5, -0.5, 0, 0]), a)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(0, 2 ** 32 - 1))
def test_fidelity_symmetric(s1, s2):
    a, b = random_state(s1), random_state(s2)
    assert tm.fidelity(a, b) == pytest.approx(tm.fidelity(b, a), abs=1e-6)


@pytest.mark.parametrize("shots", [20, 200, 5000])
def test_noisy_reconstruction_physical_and_monotone(rng, shots):
    rho = random_state(7)
    sett = tm.sample_settings(rho, shots, rng)
    r = tm.mle_reconstruct(sett)
    assert np.trace(r.rho).real == pytest.approx(1.0, abs=1e-10)
    assert np.allclose(r.rho, r.rho.conj().T)
    assert np.linalg.eigvalsh(r.rho).min() > -1e-10
    assert np.all(np.diff(r.loglik_trace) >= -1e-9)


def test_spam_identity_and_published_inverse(rng):
    p = rng.dirichlet(np.ones(4))
    assert np.allclose(tm.spam_correct(p, np.eye(4)), p)
    assert np.allclose(tm.spam_correct(T_PUB @ p, T_PUB), p)
    assert np.allclose(tm.spam_correct(T_PUB[:, 0], T_PUB), [1, 0, 0, 0], atol=1e-12)


def test_spam_rejects_singular():
    T = T_PUB.copy()
    T[:, 1] = T[:, 0]
    with pytest.raises(TomographyError):
        tm.spam_correct(np.full(4, 0.25), T)


def test_spam_correction_monte_carlo(params):
    det = ro.DetectionParams()
    train = ro.training_set(params, det, 2500, seed=21)
    clf = ro.classify(train)
    calib = ro.training_set(params, det, 2500, seed=22)
    T = ro.estimate_T_matrix(calib, clf)
    truth = np.array([0.4, 0.1, 0.3, 0.2])
    rng = np.random.default_rng(23)
    prep = rng.choice(4, size=100_000, p=truth)
    rec = ro.simulate_readout(prep, params, det, 24)
    f = np.bincount(clf.assign(rec), minlength=4) / len(prep)
    assert np.abs(tm.spam_correct(f, T) - truth).max() < 0.01


@pytest.mark.parametrize("spam", ["pre", "model"])
def test_spam_inside_reconstruction(spam):
    target = sq.bell_target("odd")
    rho = tm.as_density(target)
    sett = [TomographySetting(s.pre, T_PUB @ s.counts) for s in tm.exact_settings(rho, 1e4)]
    raw = tm.mle_reconstruct(sett, target=target)
    fixed = tm.mle_reconstruct(sett, T=T_PUB, spam=spam, target=target)
    assert raw.fidelity_raw < 0.95
    assert fixed.fidelity_spam_corrected > 0.995


def test_informational_completeness():
    sett = [TomographySetting(("I", "I"), [1, 1, 1, 1])] * 9
    with pytest.raises(TomographyError):
        tm.mle_reconstruct(sett)
    with pytest.raises(TomographyError):
        tm.mle_reconstruct(tm.exact_settings(np.eye(4) / 4)[:8])
    tm.check_informationally_complete(tm.exact_settings(np.eye(4) / 4))


def test_setting_validation():
    with pytest.raises(TomographyError):
        TomographySetting(("I", "Z"), [1, 1, 1, 1])
    with pytest.raises(TomographyError):
        TomographySetting(("I", "X"), [1, -1, 1, 1])


def test_csv_and_json_round_trip(rng):
    sett = tm.sample_settings(random_state(3), 100, rng)
    back = tm.settings_from_csv(tm.settings_to_csv(sett))
    assert [s.pre for s in back] == [s.pre for s in sett]
    assert all(np.array_equal(a.counts, b.counts) for a, b in zip(sett, back))
    r = tm.mle_reconstruct(sett, target=sq.bell_target("odd"))
    r2 = tm.TomographyResult.from_json(r.to_json())
    assert np.array_equal(r2.rho, r.rho) and r2.fidelity_raw == r.fidelity_raw
    assert len(r.bar_data()) == 16


def test_local_z_alignment_recovers_phase():
    target = sq.bell_target("odd")
    U = np.diag(np.exp(1j * np.array([0.0, 0.7, -0.7, 0.0])))
    rotated = U @ tm.as_density(target) @ U.conj().T
    assert tm.fidelity(rotated, target) < 0.95
    f, _, _ = tm.local_z_aligned_fidelity(rotated, target)
    assert f == pytest.approx(1.0, abs=1e-8)


def test_bell_coherence_element():
    assert tm.bell_coherence(tm.as_density(sq.bell_target("odd")), "odd") == pytest.approx(0.5)
    assert tm.bell_coherence(tm.as_density(sq.bell_target("even")), "even") == pytest.approx(0.5)


def _dfs_fit(params, parity, corr, unc, T):
    delays = np.linspace(0, 2.5 * T, 61)
    _, fit = dfs_decay(params, parity, corr, unc, delays, f_art=3.0 / T)
    return fit


def test_dfs_correlated_noise_does_not_decay(params):
    fit = _dfs_fit(params, "odd", 5.0, (0.0, 0.0), 2.0)
    assert abs(fit.amplitude) == pytest.approx(1.0, abs=0.01)
    assert fit.decay > 100.0


def test_dfs_odd_parity_regime(params):
    # split the tabulated single-qubit rates into a common part and a local
    # remainder that leaves 1.7 s for the odd Bell state
    g = np.array(params.Gammaphi_n)
    local_sum = 1 / 1.7
    gc = (g.sum() - local_sum) / 2
    gl = g - gc
    fit = _dfs_fit(params, "odd", gc, tuple(gl), 1.7)
    assert fit.decay == pytest.approx(1.7, rel=0.10)
    assert fit.decay > 1 / g.min()


def test_dfs_even_parity_faster(params):
    g = np.array(params.Gammaphi_n)
    gc = 0.1
    single = 1 / (gc + g)
    fit = _dfs_fit(params, "even", gc, tuple(g), 0.5)
    assert fit.decay < single.min()
    assert fit.decay / single.mean() == pytest.approx(0.5, abs=0.1)
