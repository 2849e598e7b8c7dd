import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spinreg import sequencer as sq
from spinreg import tomography as tm
from spinreg.fitting import fit_decaying_cosine
from spinreg.experiments import _pops_target, run_schedules, tomography_pipeline
from spinreg.gates import CalibrationTable, reduce_qubit
from spinreg.register import Register
from spinreg.sequencer import GateSpec, Schedule, ScheduleError


def test_pump_defaults(params):
    s = sq.make_sideband_pump(params)
    assert len(s) == 100
    pulses = [g for g in s if g.kind == "chirp_pump"]
    waits = [g for g in s if g.kind == "wait"]
    assert len(pulses) == 50 and len(waits) == 50
    assert all(g.duration == 3.5e-3 and abs(g.f_stop - g.f_start) == 50e3 for g in pulses)
    assert all(g.duration == 2e-3 for g in waits)
    total = sum(sq.gate_duration(g, CalibrationTable()) for g in s)
    assert total == pytest.approx(0.275)


def test_pump_zero_repeats(params):
    assert len(sq.make_sideband_pump(params, repeats=0)) == 0


def test_pump_errors(params):
    with pytest.raises(ScheduleError):
        sq.make_sideband_pump(params, "du")
    with pytest.raises(ScheduleError):
        sq.make_sideband_pump(params, band=(790e3, 840e3))


@pytest.mark.parametrize("target", ["dd", "uu"])
def test_pump_reaches_target(params, target):
    reg = Register(params)
    comp = sq.compile_schedule(sq.make_sideband_pump(params, target, repeats=10), params,
                               CalibrationTable())
    rho = reg.propagate(reg.prepare(np.eye(4) / 4), comp.tones, 0.0, comp.duration)
    pops = reg.nuclear_populations(rho)
    assert pops[["dd", "du", "ud", "uu"].index(target)] >= 0.9


def test_ramsey_zero_delay_full_flip(params, calib):
    pops, _ = run_schedules(params.coherent_only(), calib, sq.make_ramsey(0, [0.0]), "dd")
    assert _pops_target(pops, 0)[0] > 0.99


def test_echo_refocuses_static_offset(coherent, calib):
    d = 0.125
    shifted = coherent.replace(omega_I=(coherent.omega_I[0] + 2.0, coherent.omega_I[1]))
    out = {}
    for name, scheds in (("ramsey", sq.make_ramsey(0, [d])), ("hahn", sq.make_hahn(0, [d]))):
        ref, _ = run_schedules(coherent, calib, scheds, "dd")
        off, _ = run_schedules(shifted, calib, scheds, "dd")
        out[name] = _pops_target(off, 0)[0] - _pops_target(ref, 0)[0]
    # 2 Hz for 0.125 s is a quarter turn of Ramsey phase; the unconditional
    # frame tracks the spectator-averaged line, so the reference is not at 1
    assert abs(out["ramsey"]) > 0.2
    assert abs(out["hahn"]) < 0.01


def _sedor_shift(coherent, calib, czz):
    p = coherent.replace(C_zz=czz)
    delays = np.linspace(0, 4.0, 25)
    freqs = []
    for seqs in sq.make_sedor(0, 1, delays, 2.0):
        pops, _ = run_schedules(p, calib, seqs, "dd")
        freqs.append(fit_decaying_cosine(delays, _pops_target(pops, 0), f_guess=2.0).frequency)
    return freqs[1] - freqs[0]


def test_sedor_without_coupling_branches_agree(coherent, calib):
    assert abs(_sedor_shift(coherent, calib, 0.0)) < 0.005


def test_sedor_measured_coupling(coherent, calib):
    assert abs(_sedor_shift(coherent, calib, 0.8)) == pytest.approx(0.4, rel=0.02)


def test_sedor_branches(calib):
    a, b = sq.make_sedor(0, 1, [0.0, 0.1])
    ua, ub = sq.ideal_unitary(a[1], calib), sq.ideal_unitary(b[1], calib)
    # partner pi only differs by a Qb2 flip
    X2 = np.kron(np.eye(2), sq.ideal_rotation(np.pi, 0.0))
    assert np.allclose(ub, X2 @ ua)
    with pytest.raises(ScheduleError):
        sq.make_sedor(1, 1, [0.0])


@pytest.mark.parametrize("parity", ["odd", "even"])
def test_ideal_bell_circuit(calib, parity):
    U = sq.ideal_unitary(sq.make_bell_prep(parity), calib)
    psi = U @ np.array([1, 0, 0, 0], complex)
    assert abs(np.vdot(sq.bell_target(parity), psi)) ** 2 == pytest.approx(1.0)


def test_ideal_unitary_rejects_nonunitary(calib):
    with pytest.raises(ScheduleError):
        sq.ideal_unitary(Schedule([sq.readout_block()]), calib)


def test_empty_schedule(params, calib):
    comp = sq.compile_schedule(Schedule(), params, calib)
    assert comp.tones == [] and comp.duration == 0.0


def test_pi_rotation_tones(params, calib):
    cal = calib["u1"]
    comp = sq.compile_schedule(Schedule([sq.raman_rotation("u1", np.pi)]), params, calib)
    assert len(comp.tones) == 2
    for t in comp.tones:
        assert t.start == 0.0
        assert t.duration == pytest.approx(1 / (2 * cal.rabi))
    assert comp.duration == pytest.approx(cal.pi_time)


def test_readout_expansion(params, calib):
    comp = sq.compile_schedule(Schedule([sq.readout_block()]), params, calib, expand_readout=True)
    assert len(comp.tones) == 800
    assert all(t.duration == pytest.approx(80e-6) for t in comp.tones)
    assert len(comp.markers) == 1
    assert comp.markers[0].duration == pytest.approx(comp.duration)


def test_timeline_sorted_and_disjoint(params, calib):
    s = sq.make_bell_prep("even").then(sq.electron_pi("dd"), sq.wait(1e-3),
                                        sq.readout_block(reps=3))
    comp = sq.compile_schedule(s, params, calib, expand_readout=True)
    ends = [t + d for t, d, _ in comp.timeline]
    starts = [t for t, _, _ in comp.timeline]
    assert starts == sorted(starts)
    assert all(e <= s2 + 1e-15 for e, s2 in zip(ends[:-1], starts[1:]))
    assert comp.duration == pytest.approx(sum(sq.gate_duration(g, calib) for g in s))
    e_tones = sorted((t for t in comp.tones if t.amplitude == calib.electron_rabi),
                     key=lambda t: t.start)
    assert all(a.start + a.duration <= b.start + 1e-15 for a, b in zip(e_tones, e_tones[1:]))


def test_two_half_pi_equal_pi(coh_reg, coherent, calib):
    a = sq.compile_schedule(Schedule([sq.raman_rotation("u1", np.pi / 2)] * 2), coherent, calib)
    b = sq.compile_schedule(Schedule([sq.raman_rotation("u1", np.pi)]), coherent, calib)
    assert a.duration == pytest.approx(b.duration)
    rho0 = coh_reg.prepare("dd")
    ra = coh_reg.propagate(rho0, a.tones, 0.0, a.duration)
    rb = coh_reg.propagate(rho0, b.tones, 0.0, b.duration)
    assert np.real(np.trace(ra @ rb)) >= 0.999


def test_phase_selects_rotation_axis(coherent, calib):
    prep = Schedule([sq.raman_rotation("u1", np.pi / 2, np.pi / 2)])
    rho = tm.mle_reconstruct(tomography_pipeline(coherent, calib, prep)).rho
    q1 = reduce_qubit(rho, 0)
    psi = sq.ideal_unitary(prep, calib) @ np.array([1, 0, 0, 0], complex)
    want = reduce_qubit(np.outer(psi, psi.conj()), 0)
    psi_x = sq.ideal_unitary(Schedule([sq.raman_rotation("u1", np.pi / 2)]), calib) \
        @ np.array([1, 0, 0, 0], complex)
    wrong = reduce_qubit(np.outer(psi_x, psi_x.conj()), 0)
    assert tm.fidelity(q1, want) > 0.98
    assert tm.fidelity(q1, wrong) < 0.6


gate_specs = st.one_of(
    st.builds(sq.raman_rotation, st.sampled_from(["u1", "u2", "c2"]),
              st.floats(0, 6.28), st.floats(-10, 10)),
    st.builds(sq.wait, st.floats(1e-9, 10)),
    st.builds(sq.electron_pi, st.sampled_from(["dd", "du", "ud", "uu"])),
    st.builds(sq.chirp_pump, st.floats(-1e6, 1e6), st.floats(-1e6, 1e6), st.floats(1e-6, 1),
              st.floats(0, 1e6)),
    st.builds(sq.readout_block, st.integers(1, 500), st.floats(0, 1e-2)),
)


@settings(max_examples=100, deadline=None)
@given(st.lists(gate_specs, max_size=12), st.sampled_from(["", "bell", "my seq"]))
def test_schedule_text_round_trip(gs, name):
    s = Schedule(gs, name)
    assert Schedule.from_text(s.to_text()) == s


@pytest.mark.parametrize("kw", [dict(kind="laser"), dict(kind="raman"),
                                dict(kind="raman", gate="u1", theta=2 * np.pi),
                                dict(kind="raman", gate="u1", theta=-0.1),
                                dict(kind="electron_pi", line="xx"),
                                dict(kind="wait"), dict(kind="readout", reps=0)])
def test_gate_validation(kw):
    with pytest.raises(ScheduleError):
        GateSpec(**kw)


def test_text_errors():
    with pytest.raises(ScheduleError):
        GateSpec.from_text("wait duration=1 speed=3")


def test_builder_errors(calib):
    with pytest.raises(ScheduleError):
        sq.make_ramsey(0, [0.2, 0.1])
    with pytest.raises(ScheduleError):
        sq.make_hahn(0, [-1.0])
    with pytest.raises(ScheduleError):
        sq.make_bell_prep("none")
    with pytest.raises(ScheduleError):
        sq.tomography_prerotation(("X", "Z"), calib)


def test_missing_calibration_named(params):
    with pytest.raises(KeyError, match="u1"):
        sq.compile_schedule(Schedule([sq.raman_rotation("u1", np.pi)]), params,
                            CalibrationTable())


def test_conditional_without_shift_rejected(params, calib):
    bad = dataclasses.replace(calib["c2"], Omega_A=0.0, Omega_B=0.0)
    table = CalibrationTable({"c2": bad})
    with pytest.raises(ScheduleError):
        sq.compile_schedule(Schedule([sq.raman_rotation("c2", np.pi)]), params, table)
