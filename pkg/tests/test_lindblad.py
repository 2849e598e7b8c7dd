import numpy as np
import pytest
from scipy.linalg import expm

from spinreg import lindblad as lb
from spinreg import raman
from spinreg.fitting import fit_decaying_cosine
from spinreg.register import Register, label_with
from spinreg.spin_model import SM, SP, SZ, build_static_hamiltonian, op3, product_state

E_UP = op3(e=np.diag([0.0, 1.0]).astype(complex))


def excited_fraction(rho):
    return float(np.real(np.trace(rho @ E_UP)))


def test_collapse_rates(params):
    cs = lb.collapse_ops(params.replace(n_th=0.0))
    assert cs.rate("s+") == 0.0
    cs = lb.collapse_ops(params.replace(n_th=9.54e-3))
    assert cs.rate("s+") == pytest.approx(11.9, abs=0.05)
    assert cs.rate("nphi2") == pytest.approx(1 / 1.2)


def test_collapse_set_validation():
    cs = lb.CollapseSet()
    with pytest.raises(ValueError):
        cs.add(np.eye(8), -1.0)
    with pytest.raises(ValueError):
        cs.add(np.eye(4), 1.0)


def test_nuclear_dephasing_matches_t2star(params):
    p = params.coherent_only().replace(Gammaphi_n=(0.0, 1 / 1.2))
    reg = Register(p)
    psi = np.array([1, 1, 0, 0]) / np.sqrt(2)    # Qb2 superposition
    rho = reg.propagate(reg.prepare(psi), [], 0.0, 1.2)
    c = abs(reg.natural_frame(rho, 1.2)[0, 1])
    # dressed states are not exact Iz eigenstates, hence the small slack
    assert c == pytest.approx(0.5 / np.e, rel=1e-3)


def test_t1_decay(params):
    T1 = 0.8e-3
    cs = lb.CollapseSet()
    cs.add(op3(e=SM), 1 / T1, "s-")
    H0 = build_static_hamiltonian(params, frame_hz=params.omega_S)
    rho0 = product_state(1, 0, 0)
    rho = lb.propagate(rho0, H0, [], cs, 0.0, T1)
    assert excited_fraction(rho) == pytest.approx(np.exp(-1), abs=1e-4)


def test_electron_rabi_310khz(coh_reg):
    reg = coh_reg
    T = 20e-6
    tone = [lb.DriveTone(reg.e_lines["dd"], 310e3, 0.0, 0.0, T)]
    ts = np.linspace(0, T, 401)[1:]
    tr = reg.evolve(reg.prepare("dd"), tone, 0.0, T, t_eval=ts)
    y = [excited_fraction(r) for r in tr.states]
    fit = fit_decaying_cosine(ts, y, f_guess=310e3)
    assert fit.frequency == pytest.approx(310e3, rel=0.01)


def test_unconditional_raman_rate_matches_analytic(calib, coherent):
    for name in ("u1", "u2"):
        cal = calib[name]
        an = abs(raman.raman_rabi(coherent, cal.target, cal.condition(), 0))
        assert cal.rabi == pytest.approx(an, rel=0.02)


def _drive(reg):
    return [lb.DriveTone(reg.e_lines["dd"], 50e3, 0.0, 0.0, 30e-6),
            lb.DriveTone(reg.e_lines["du"] + 3e3, 20e3, 0.4, 10e-6, 30e-6, "gaussian")]


def test_trace_and_hermiticity(params):
    reg = Register(params.replace(n_th=0.05))
    ts = np.linspace(0, 40e-6, 41)[1:]
    tr = reg.evolve(reg.prepare("du"), _drive(reg), 0.0, 40e-6, t_eval=ts, method="rk45")
    for r in tr.states:
        assert np.trace(r).real == pytest.approx(1.0, abs=1e-9)
        assert np.allclose(r, r.conj().T, atol=1e-12)
        assert np.linalg.eigvalsh(r).min() > -1e-9


def test_unitary_purity(coh_reg):
    ts = np.linspace(0, 40e-6, 21)[1:]
    tr = coh_reg.evolve(coh_reg.prepare("du"), _drive(coh_reg), 0.0, 40e-6, t_eval=ts,
                        method="rk45")
    assert np.allclose(tr.purity(), 1.0, atol=1e-8)


def test_step_halving(coherent):
    reg = Register(coherent)
    rho0 = reg.prepare("du")
    tones = _drive(reg)
    a = lb.propagate(rho0, reg.H0, tones, reg.collapse, 0.0, 40e-6, method="rk45", max_step=2e-8)
    b = lb.propagate(rho0, reg.H0, tones, reg.collapse, 0.0, 40e-6, method="rk45", max_step=1e-8)
    assert abs(np.real(np.trace(a @ b)) - 1.0) < 1e-6


def test_auto_matches_rk45(calib, coh_reg):
    cal = calib["u1"]
    T = 2e-3
    tones = coh_reg.raman_tones(cal.condition(), cal.delta, 0.0, T)
    rho0 = coh_reg.prepare(label_with(0, 0, 1))
    a = coh_reg.propagate(rho0, tones, 0.0, T)
    # tight reference: 1e-8 rtol drifts ~3e-6 over 2 ms of carrier cycles
    b = lb.propagate(rho0, coh_reg.H0, tones, coh_reg.collapse, 0.0, T, method="rk45",
                     rtol=1e-10, atol=1e-12)
    assert np.abs(a - b).max() < 1e-6


def test_detailed_balance(params):
    n = 0.1
    Gamma = 1 / 0.8e-3
    cs = lb.CollapseSet()
    cs.add(op3(e=SM), Gamma * (n + 1), "s-")
    cs.add(op3(e=SP), Gamma * n, "s+")
    H0 = build_static_hamiltonian(params, frame_hz=params.omega_S)
    rho = lb.propagate(product_state(0, 1, 0), H0, [], cs, 0.0, 30e-3)
    assert excited_fraction(rho) == pytest.approx(n / (1 + 2 * n), abs=1e-4)


def test_effective_hamiltonian_no_zz_when_unconditional():
    Z1 = lb.nuclear_ops(0)[2]
    Z2 = lb.nuclear_ops(1)[2]
    ZZ = Z1 @ Z2
    H, ok = lb.effective_raman_hamiltonian(100.0, 5.0, 0.0, 1)
    assert ok
    assert abs(np.trace(H @ ZZ)) < 1e-12
    H, _ = lb.effective_raman_hamiltonian(100.0, 5.0, 244.0, 1)
    assert abs(np.trace(H @ ZZ)) > 1.0


def test_effective_hamiltonian_regime_warning():
    with pytest.warns(RuntimeWarning):
        _, ok = lb.effective_raman_hamiltonian(100.0, 0.0, 0.0, 0, regime_ratio=3)
    assert not ok


def test_effective_model_matches_full(calib, coherent):
    cal = calib["u1"]
    an = raman.raman_rabi(coherent, 0, cal.condition(), 0)
    H, _ = lb.effective_raman_hamiltonian(abs(an), 0.0, 0.0, 0)
    psi0 = np.array([1, 0, 0, 0], complex)
    ts = np.linspace(0, 3 / abs(an), 200)[1:]
    y = [abs((expm(-1j * H * t) @ psi0)[2]) ** 2 for t in ts]
    fit = fit_decaying_cosine(ts, y, f_guess=abs(an))
    assert fit.frequency == pytest.approx(cal.rabi, rel=0.05)


def test_conditional_gate_flips_only_in_branch(calib, coh_reg):
    cal = calib["c2"]
    assert cal.spectator_state == 0
    tones = coh_reg.raman_tones(cal.condition(), cal.delta, 0.0, cal.pi_time)
    flipped = coh_reg.nuclear_populations(
        coh_reg.propagate(coh_reg.prepare("dd"), tones, 0.0, cal.pi_time))
    kept = coh_reg.nuclear_populations(
        coh_reg.propagate(coh_reg.prepare("ud"), tones, 0.0, cal.pi_time))
    # Qb1 down: Qb2 goes up.  Qb1 up: Qb2 stays down.
    assert flipped[1] + flipped[3] > 0.85
    assert kept[2] + kept[0] > 0.9


@pytest.mark.parametrize("kw", [dict(duration=0.0), dict(duration=1.0, envelope="square"),
                                dict(duration=1.0, envelope="chirped")])
def test_drive_tone_validation(kw):
    with pytest.raises(ValueError):
        lb.DriveTone(0.0, 1.0, **kw)


def test_evolve_validation(params):
    H0 = build_static_hamiltonian(params)
    rho0 = product_state(0, 0, 0)
    with pytest.raises(ValueError):
        lb.evolve(rho0, H0 + 1j * np.triu(np.ones((8, 8)), 1), [], None, (0, 1))
    with pytest.raises(ValueError):
        lb.evolve(rho0, H0, [], None, (1, 0))
    with pytest.raises(ValueError):
        lb.evolve(rho0, H0, [], None, (0, 1), t_eval=[0.5, 0.2])
    with pytest.raises(ValueError):
        lb.evolve(rho0, H0, [], None, (0, 1), method="euler")


def test_sz_convention():
    # spin up is the second basis state
    assert SZ[1, 1].real == 0.5
    assert np.allclose(SP @ np.array([1, 0]), [0, 1])
