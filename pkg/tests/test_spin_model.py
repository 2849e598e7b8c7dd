import numpy as np
import pytest

from spinreg.spin_model import (SpinSystemParams, ParameterError, build_static_hamiltonian,
                                electron_transition_frequencies, format_params, is_hermitian,
                                load_params, parse_params, purcell_rate, sideband_branching,
                                table1)


def swap_perm():
    P = np.zeros((8, 8))
    for e in range(2):
        for a in range(2):
            for b in range(2):
                P[4 * e + 2 * b + a, 4 * e + 2 * a + b] = 1
    return P


def test_hamiltonian_hermitian(params):
    assert is_hermitian(build_static_hamiltonian(params))
    assert is_hermitian(build_static_hamiltonian(params, frame_hz=params.omega_S))


def test_no_transverse_coupling_gives_diagonal(params):
    H = build_static_hamiltonian(params.replace(A_perp=(0.0, 0.0)))
    assert np.count_nonzero(H - np.diag(np.diag(H))) == 0


def test_diagonal_eigenvalues_exact(params):
    H = build_static_hamiltonian(params.replace(A_perp=(0.0, 0.0)), frame_hz=params.omega_S)
    np.testing.assert_allclose(np.sort(np.linalg.eigvalsh(H)), np.sort(np.diag(H).real),
                               rtol=0, atol=1e-9 * np.abs(H).max())


def test_swap_symmetry(params):
    p = params.replace(omega_S=1e6)
    P = swap_perm()
    H = build_static_hamiltonian(p)
    Hs = build_static_hamiltonian(p.swapped())
    np.testing.assert_allclose(P @ H @ P.T, Hs, atol=1e-6)


def test_lines_split_by_apar_without_aperp(params):
    f = electron_transition_frequencies(params.replace(A_perp=(0.0, 0.0)))
    assert f["uu"] - f["du"] == pytest.approx(36e3, abs=1e-3)
    assert f["ud"] - f["dd"] == pytest.approx(36e3, abs=1e-3)
    assert f["uu"] - f["ud"] == pytest.approx(19e3, abs=1e-3)
    assert f["du"] - f["dd"] == pytest.approx(19e3, abs=1e-3)


def test_lines_degenerate_without_hyperfine(params):
    p = params.replace(A_perp=(0.0, 0.0), A_par=(0.0, 0.0))
    f = electron_transition_frequencies(p)
    for v in f.values():
        assert v == pytest.approx(p.omega_S, abs=1e-3)


def test_lines_full_params_near_apar(params):
    f = electron_transition_frequencies(params)
    assert abs(abs(f["uu"] - f["du"]) - 36e3) < 0.5e3
    assert abs(abs(f["ud"] - f["dd"]) - 36e3) < 0.5e3
    assert abs(abs(f["uu"] - f["ud"]) - 19e3) < 0.5e3
    assert abs(abs(f["du"] - f["dd"]) - 19e3) < 0.5e3


def test_lines_gauge_shift(params):
    f0 = electron_transition_frequencies(params)
    f1 = electron_transition_frequencies(params.replace(omega_S=params.omega_S + 1.234e6))
    for k in f0:
        assert f1[k] - f0[k] == pytest.approx(1.234e6, abs=1e-2)


def test_purcell():
    assert 1 / purcell_rate(5.6e3, 640e3) == pytest.approx(0.8e-3, rel=0.02)
    assert 1 / purcell_rate(5.6e3, 640e3) == pytest.approx(0.81e-3, rel=0.01)
    assert purcell_rate(0.0, 640e3) == 0.0
    assert purcell_rate(11.2e3, 640e3) == pytest.approx(4 * purcell_rate(5.6e3, 640e3))
    with pytest.raises(ParameterError):
        purcell_rate(5.6e3, 0.0)


def test_sideband_branching(params):
    r1, b1 = sideband_branching(params, 0)
    r2, b2 = sideband_branching(params, 1)
    assert abs(r1) == pytest.approx(0.0449, abs=1e-4)
    assert b1 == pytest.approx(2.0e-3, rel=0.02)
    assert abs(r2) == pytest.approx(7.99e-3, abs=1e-5)
    assert b2 == pytest.approx(6.4e-5, rel=0.01)
    assert sideband_branching(params.replace(A_perp=(0.0, 0.0)), 0) == (0.0, 0.0)


def test_params_text_round_trip(params):
    assert parse_params(format_params(params)) == params


def test_preset_values():
    p = load_params("table1")
    assert p == table1()
    assert p.omega_I == (-791e3, -801e3)
    assert p.A_perp == (71e3, 12.8e3)
    assert p.Gammaphi_n == pytest.approx((1 / 0.8, 1 / 1.2))


@pytest.mark.parametrize("text", ["bogus = 1", "omega_I = 1, 2, 3", "kappa", "n_th = 1.5",
                                  "kappa = -1", "omega_I = 0, 1"])
def test_params_rejected(text):
    with pytest.raises(ParameterError):
        parse_params(text)


def test_missing_preset():
    with pytest.raises(FileNotFoundError):
        load_params("no_such_preset")


def test_nonfinite_rejected():
    with pytest.raises(ParameterError):
        SpinSystemParams(kappa=float("nan"))
