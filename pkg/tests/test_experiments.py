import math

import numpy as np
import pytest

from lzforge import experiments
from lzforge.analytic import J0_ZERO, design_diabatic_pulse
from lzforge.dynamics import LinearOscillating, TwoLevelSystem, Window, lz_probability
from lzforge.errors import DomainError, FitError
from lzforge.experiments import (
    AdiabaticSettings,
    Axis,
    ScanResult,
    accumulated_phase,
    estimate_qsl,
    fit_qsl,
    locate_jumps,
    qsl_model,
    scan_adiabatic_fidelity,
    scan_phase_sensitivity,
    scan_robustness,
    trace_trajectory,
    valley_degradation,
)

UNIT = TwoLevelSystem(1.0)
PHASES = np.linspace(0, 2 * math.pi, 64, endpoint=False)


# ScanResult ----------------------------------------------------------------


def test_scan_result_shape_checked():
    with pytest.raises(DomainError):
        ScanResult(Axis("a", "u", [1, 2]), "m", [1.0, 2.0, 3.0])
    with pytest.raises(DomainError):
        ScanResult(Axis("a", "u", [1, 2]), "m", np.ones((2, 2)), axis2=Axis("b", "u", [1, 2, 3]))


def test_scan_result_values_finite():
    with pytest.raises(DomainError):
        ScanResult(Axis("a", "u", [1, 2]), "m", [1.0, math.nan])


def test_scan_result_default_flags():
    s = ScanResult(Axis("a", "u", [1, 2]), "m", [1.0, 2.0])
    assert s.failed.shape == (2,) and not s.failed.any()


# traces --------------------------------------------------------------------


def test_trace_single_crossing():
    pulse = LinearOscillating(10.0, 0.0, 0.0)
    trace = trace_trajectory(UNIT, pulse, -50, 50)
    assert trace.events == []
    assert abs(trace.eigenframe_survival_error - lz_probability(1.0, 10.0)) < 2e-3
    pops = trace.trajectory.populations
    t = trace.trajectory.times
    # the jump happens around t = 0
    assert pops[t < -5].max() < 0.01
    assert abs(pops[t > 5].mean() - lz_probability(1.0, 10.0)) < 0.01


def test_trace_sideband_jump_times():
    pulse = LinearOscillating(10.0, 120.24, 50.0)
    trace = trace_trajectory(UNIT, pulse, -50, 50)
    found = locate_jumps(trace, pulse)
    assert {m for m, _, _ in found} >= {-2, -1, 1, 2}
    for m, predicted, measured in found:
        assert predicted == pytest.approx(-m * 5.0)
        assert abs(measured - predicted) < 0.2


def test_accumulated_phase_numeric_matches_analytic():
    t = np.linspace(-3, 3, 3001)
    plain = LinearOscillating(4.0, 7.0, 9.0, 0.3)
    windowed = LinearOscillating(4.0, 7.0, 9.0, 0.3, Window(100.0, 1.0))
    np.testing.assert_allclose(accumulated_phase(windowed, t), accumulated_phase(plain, t), atol=1e-6)
    assert accumulated_phase(plain, np.array([0.0]))[0] == 0.0


# phase scan ----------------------------------------------------------------


def test_phase_scan_designed_pulse():
    design = design_diabatic_pulse(8.0, 50.0, 2.8)
    scan = scan_phase_sensitivity(UNIT, design.pulse, PHASES)
    assert scan.values[0] < 1e-4
    assert scan.metric_name == "survival_error" and scan.axis1.name == "phi"
    fine = scan_phase_sensitivity(UNIT, design.pulse, np.linspace(0, 2 * math.pi, 128, endpoint=False))
    assert abs(fine.values.max() - scan.values.max()) < 0.01
    np.testing.assert_array_equal(fine.values[::2], scan.values)


def test_phase_scan_validation():
    pulse = LinearOscillating(8.0, 120.0, 50.0)
    with pytest.raises(DomainError):
        scan_phase_sensitivity(UNIT, pulse, PHASES)
    with pytest.raises(DomainError):
        scan_phase_sensitivity(UNIT, pulse.with_phase(0.0), PHASES[:31], t_end=5.0)


def test_phase_scan_threads_do_not_change_results():
    pulse = LinearOscillating(8.0, J0_ZERO * 50, 50.0, 0.0, Window(11.06, 2.8))
    a = scan_phase_sensitivity(UNIT, pulse, PHASES, threads=1)
    b = scan_phase_sensitivity(UNIT, pulse, PHASES, threads=3)
    np.testing.assert_array_equal(a.values, b.values)


# robustness ----------------------------------------------------------------

OPTIMUM = (9.99409, 311.631, 99.9718, 2 * math.pi * 0.387)


def test_robustness_grid():
    v = OPTIMUM[0] * np.array([0.99, 1.0, 1.01])
    om = OPTIMUM[2] * np.array([0.995, 1.0, 1.005])
    scan = scan_robustness(UNIT, OPTIMUM, 200.0, v, om)
    assert scan.values.shape == (3, 3)
    assert scan.values[1, 1] <= -5
    assert scan.values[1, 1] == scan.values.min()


def test_valley_direction():
    base, along, across = valley_degradation(UNIT, OPTIMUM, 200.0)
    assert base <= 1e-5
    assert across >= 10 * max(along, 0.0)
    assert base + along < 1e-2


# adiabatic scans -----------------------------------------------------------


def test_adiabatic_scan_small():
    eps0 = [0.08, 0.4]
    T = [60.0, 120.0]
    raw = scan_adiabatic_fidelity(0.04, eps0, T, optimize=False)
    opt = scan_adiabatic_fidelity(0.04, eps0, T, optimize=True)
    assert raw.metric_name == "phase_insensitive_fidelity"
    assert opt.metric_name == "gate_fidelity_sigma_x"
    assert np.all((raw.values >= 0) & (raw.values <= 1))
    assert np.all(opt.values[:, 1] >= 0.9999)
    assert np.all(opt.values[:, 0] < 0.9999)
    assert opt.metadata["optimize"] is True
    again = scan_adiabatic_fidelity(0.04, eps0, T, optimize=True, threads=2)
    np.testing.assert_array_equal(again.values, opt.values)


def test_adiabatic_scan_records_failures(monkeypatch):
    real = experiments.adiabatic_cell

    def flaky(delta, eps0, T, optimize, settings=AdiabaticSettings()):
        if eps0 > 0.3:
            raise FloatingPointError("boom")
        return real(delta, eps0, T, optimize, settings)

    monkeypatch.setattr(experiments, "adiabatic_cell", flaky)
    scan = scan_adiabatic_fidelity(0.04, [0.08, 0.4], [100.0])
    assert scan.failed.tolist() == [[False], [True]]
    assert scan.values[1, 0] == 0.0


def test_adiabatic_scan_defaults_and_validation():
    assert experiments.default_eps0_grid(0.04)[[0, -1]] == pytest.approx([0.08, 2.0])
    assert experiments.default_T_grid(0.04)[[0, -1]] == pytest.approx([math.pi / 0.04, 8 * math.pi / 0.04])
    with pytest.raises(DomainError):
        scan_adiabatic_fidelity(0.0, [1.0], [1.0])
    with pytest.raises(DomainError):
        scan_adiabatic_fidelity(0.04, [], [1.0])


# speed limit ---------------------------------------------------------------

PLANTED = (1.0, 5.0, 0.02)


def planted(delta, eps0, T):
    return 1.0 if T >= qsl_model(delta, *PLANTED) else 0.5


def test_estimate_qsl_planted_threshold():
    deltas = [0.05, 0.1, 0.2, 0.4]
    points = estimate_qsl(deltas, eps0_grid=[1.0, 2.0], fidelity_fn=planted)
    for pt in points:
        truth = float(qsl_model(pt.delta, *PLANTED))
        assert pt.resolved
        assert truth <= pt.t_qsl <= truth * (1 + pt.resolution) + 1e-12
        assert pt.resolution <= 0.01
    t = [pt.t_qsl for pt in points]
    assert all(a >= b for a, b in zip(t, t[1:]))


def test_estimate_qsl_unresolved():
    points = estimate_qsl([0.1], eps0_grid=[1.0], fidelity_fn=lambda d, e, T: 0.0)
    assert not points[0].resolved and math.isnan(points[0].t_qsl)


def test_estimate_qsl_coverage():
    grid = np.arange(1, 21, dtype=float)

    def mostly(delta, eps0, T):
        # eps0 = 20 never succeeds: 95 % coverage still reachable
        return 1.0 if (eps0 < 20 and T >= 40) else 0.0

    ok = estimate_qsl([0.1], eps0_grid=grid, fidelity_fn=mostly)[0]
    assert ok.resolved and 40 <= ok.t_qsl <= 40.4
    strict = estimate_qsl([0.1], eps0_grid=grid, fidelity_fn=mostly, coverage=1.0)[0]
    assert not strict.resolved


def test_estimate_qsl_validation():
    with pytest.raises(DomainError):
        estimate_qsl([0.1], fidelity_threshold=1.0, fidelity_fn=planted)
    with pytest.raises(DomainError):
        estimate_qsl([0.1], coverage=0.0, fidelity_fn=planted)


def test_fit_qsl_noiseless():
    d = np.geomspace(0.01, 0.3, 8)
    fit = fit_qsl(np.c_[d, qsl_model(d, *PLANTED)])
    assert (fit.t0, fit.c, fit.delta0) == pytest.approx(PLANTED, rel=1e-6)
    assert np.max(np.abs(fit.residuals)) < 1e-10
    assert fit.rms < 1e-10 and not fit.t0_fixed


def test_fit_qsl_fixed_t0_two_points():
    d = np.array([0.05, 0.2])
    fit = fit_qsl(np.c_[d, qsl_model(d, *PLANTED)], fix_t0=1.0)
    assert fit.t0 == 1.0 and fit.t0_fixed
    assert (fit.c, fit.delta0) == pytest.approx(PLANTED[1:], rel=1e-9)
    np.testing.assert_allclose(fit.residuals, 0.0, atol=1e-10)


@pytest.mark.parametrize("fix_t0", [1.0, None])
def test_fit_qsl_noise(fix_t0):
    rng = np.random.default_rng(3)
    d = np.geomspace(0.01, 0.3, 8)
    T = qsl_model(d, *PLANTED)
    c_err, d_err = [], []
    for _ in range(100):
        fit = fit_qsl(np.c_[d, T * (1 + 0.01 * rng.standard_normal(d.size))], fix_t0=fix_t0)
        c_err.append(abs(fit.c / PLANTED[1] - 1))
        d_err.append(abs(fit.delta0 / PLANTED[2] - 1))
    assert np.median(c_err) < 0.1 and np.median(d_err) < 0.1


def test_fit_qsl_errors():
    with pytest.raises(FitError):
        fit_qsl([(0.1, 50.0), (0.1, 60.0), (0.1, 70.0)])
    with pytest.raises(FitError):
        fit_qsl([(0.1, 50.0), (0.2, 30.0)])
    with pytest.raises(FitError):
        fit_qsl([(0.1, 50.0)], fix_t0=1.0)
    with pytest.raises(FitError):
        fit_qsl([(0.1, 50.0), (0.2, 60.0), (0.3, 70.0)])
    with pytest.raises(FitError):
        fit_qsl([(0.1, 0.5), (0.2, 0.4)], fix_t0=1.0)


def test_fit_qsl_drops_unresolved_points():
    d = np.array([0.05, 0.1, 0.2, 0.4])
    data = np.c_[np.append(d, 0.01), np.append(qsl_model(d, *PLANTED), math.nan)]
    fit = fit_qsl(data)
    assert fit.data.shape == (4, 2)
