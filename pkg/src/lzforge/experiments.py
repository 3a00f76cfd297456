"""Figure-level studies: traces, parameter scans and quantum-speed-limit fits."""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, is_dataclass, replace
from typing import Optional

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.optimize import least_squares

from .analytic import JumpModelParams, jump_events, jump_plateaus
from .dynamics import (
    SIGMA_X,
    ErfTan,
    LinearOscillating,
    TwoLevelSystem,
    phase_insensitive_fidelity,
    pixelate,
    propagate,
    propagator,
    survival_error,
    to_eigenframe,
)
from .errors import DomainError, FitError
from .optimizers import GrapeConfig, grape_optimize, oscillation_objective


def default_threads():
    """Worker count from ``LZFORGE_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("LZFORGE_THREADS", "1")))
    except ValueError:
        return 1


def _map(func, items, threads):
    threads = threads or default_threads()
    if threads <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(func, items))


def _snapshot(obj):
    if is_dataclass(obj):
        return {k: _snapshot(v) for k, v in asdict(obj).items()}
    if isinstance(obj, dict):
        return {k: _snapshot(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_snapshot(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


@dataclass(frozen=True)
class Axis:
    name: str
    unit: str
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))


@dataclass
class ScanResult:
    """Scalar metric on a 1-D or 2-D grid.

    ``values[i]`` (or ``values[i, j]``) belongs to ``axis1.values[i]``
    (and ``axis2.values[j]``).  ``failed`` marks cells whose evaluation
    raised; their value is 0.
    """

    axis1: Axis
    metric_name: str
    values: np.ndarray
    axis2: Optional[Axis] = None
    metadata: dict = field(default_factory=dict)
    failed: Optional[np.ndarray] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        shape = (self.axis1.values.size,) + (() if self.axis2 is None else (self.axis2.values.size,))
        if self.values.shape != shape:
            raise DomainError(f"values shape {self.values.shape} does not match axes {shape}")
        if not np.all(np.isfinite(self.values)):
            raise DomainError("scan values must be finite")
        if self.failed is None:
            self.failed = np.zeros(shape, dtype=bool)


# --------------------------------------------------------------------------
# trajectories and jumps
# --------------------------------------------------------------------------


@dataclass
class Trace:
    """Full propagation plus the multi-jump overlay."""

    trajectory: object
    unitary: np.ndarray
    events: list
    plateau_times: np.ndarray
    plateau_populations: np.ndarray
    survival_error: float
    eigenframe_survival_error: float
    params: Optional[JumpModelParams] = None


def trace_trajectory(system, pulse, t_start, t_end, *, samples=20001, m0=None, steps=None):
    """Propagate ``pulse`` from ``|1>`` and attach multi-jump predictions.

    The jump overlay is only computed for :class:`LinearOscillating`
    pulses; it uses the peak amplitude ``lambda_r`` and ``T = t_end - t_start``.
    The model counts every jump with ``|t_m| <= T/2`` as complete, so a
    window edge that lands on a jump time (e.g. ``T`` an even multiple of
    ``omega / v``) leaves a half-traversed jump that the overlay overstates.
    """
    u, traj = propagate(system, pulse, t_start, t_end, steps, samples=samples)
    events, times, pops, params = [], np.zeros(0), np.zeros(0), None
    if isinstance(pulse, LinearOscillating) and pulse.v > 0 and pulse.omega > 0:
        params = JumpModelParams.from_pulse(pulse, system.delta, t_end - t_start, m0)
        events = jump_events(params)
        times, pops = jump_plateaus(params)
    eig = to_eigenframe(u, system, float(pulse(t_start)), float(pulse(t_end)))
    return Trace(
        trajectory=traj,
        unitary=u,
        events=events,
        plateau_times=times,
        plateau_populations=pops,
        survival_error=survival_error(u),
        eigenframe_survival_error=survival_error(eig),
        params=params,
    )


def accumulated_phase(pulse, times):
    """``int_0^t eps`` at each of ``times`` (sorted, uniformly spaced)."""
    times = np.asarray(times, dtype=np.float64)
    if isinstance(pulse, LinearOscillating) and pulse.window is None:
        v, lam, om, phi = pulse.v, pulse.lambda_r, pulse.omega, pulse.phi
        osc = (lam / om) * (np.sin(om * times + phi) - math.sin(phi)) if om else lam * math.cos(phi) * times
        return 0.5 * v * times**2 + osc
    fine = np.linspace(times[0], times[-1], 8 * (times.size - 1) + 1)
    phase = cumulative_trapezoid(pulse(fine), fine, initial=0.0)[::8]
    zero = np.interp(0.0, times, phase) if times[0] <= 0 <= times[-1] else 0.0
    return phase - zero


def locate_jumps(trace, pulse, min_probability=1e-3):
    """Measured time of each significant photon-assisted jump.

    Works on the amplitudes in the frame co-rotating with ``eps``.  Across
    an isolated crossing the accumulated amplitude change follows a Fresnel
    integral, which reaches half its final modulus exactly at the resonance.
    The reported time is that half-way crossing, searched within half a jump
    spacing of the predicted time.

    Returns
    -------
    list of (m, predicted_time, measured_time)
    """
    traj = trace.trajectory
    t = traj.times
    phase = accumulated_phase(pulse, t)
    frame = np.exp(np.outer(phase, [0.5j, -0.5j]))
    amps = traj.states * frame
    half_gap = 0.5 * pulse.omega / pulse.v
    found = []
    for ev in trace.events:
        tm = ev.time
        if ev.transition_prob < min_probability or tm - half_gap < t[0] or tm + half_gap > t[-1]:
            continue
        ia = int(np.searchsorted(t, tm - half_gap))
        ib = int(np.searchsorted(t, tm + half_gap))
        drift = np.linalg.norm(amps[ia : ib + 1] - amps[ia], axis=1)
        level = drift - 0.5 * drift[-1]
        sign_change = np.nonzero(np.diff(np.sign(level)))[0]
        if sign_change.size == 0:
            continue
        crossings = t[ia + sign_change]
        found.append((ev.m, tm, float(crossings[np.argmin(np.abs(crossings - tm))])))
    return found


def plateau_errors(trace, spacing):
    """``|model - propagation|`` for every plateau fully inside the window.

    The propagated population is averaged over the central half of each
    plateau to suppress the Stueckelberg fringes riding on it.
    """
    traj = trace.trajectory
    t, pops = traj.times, traj.populations
    out = []
    for tj, model in zip(trace.plateau_times, trace.plateau_populations):
        mid = tj + 0.5 * spacing
        lo, hi = mid - 0.25 * spacing, mid + 0.25 * spacing
        if lo < t[0] or hi > t[-1]:
            continue
        sel = (t >= lo) & (t <= hi)
        out.append((mid, float(model), float(pops[sel].mean())))
    return out


# --------------------------------------------------------------------------
# diabatic scans
# --------------------------------------------------------------------------


def scan_phase_sensitivity(system, base_pulse, phases, *, t_start=None, t_end=None, threads=None):
    """Final survival error of ``base_pulse`` as a function of its phase.

    The window defaults to the pulse support ``+-(T + Ts)/2``; the error is
    read in the instantaneous eigenbasis at the window edges.
    """
    phases = np.asarray(phases, dtype=np.float64)
    if phases.size < 32:
        raise DomainError("need at least 32 phase samples")
    if t_end is None:
        if base_pulse.window is None:
            raise DomainError("unwindowed pulses need an explicit propagation window")
        t_end = base_pulse.window.half_extent
    if t_start is None:
        t_start = -t_end

    def cell(phi):
        pulse = base_pulse.with_phase(phi)
        u = propagator(system, pulse, t_start, t_end)
        return survival_error(to_eigenframe(u, system, float(pulse(t_start)), float(pulse(t_end))))

    values = _map(cell, phases, threads)
    return ScanResult(
        axis1=Axis("phi", "rad", phases),
        metric_name="survival_error",
        values=values,
        metadata={"pulse": _snapshot(base_pulse), "delta": system.delta, "window": [t_start, t_end]},
    )


def relative_grid(center, rel_span, n):
    """``n`` points from ``center*(1-rel_span)`` to ``center*(1+rel_span)``."""
    return center * (1.0 + np.linspace(-rel_span, rel_span, n))


def scan_robustness(system, optimal, T, v_grid, omega_grid, *, threads=None):
    """``log10`` survival error over a ``(v, omega)`` grid, ``lam`` and ``phi`` held."""
    v0, lam, omega0, phi = optimal
    objective = oscillation_objective(system, T, max_phase_step=0.05)
    cells = [(v, om) for v in v_grid for om in omega_grid]
    raw = _map(lambda c: objective((c[0], lam, c[1], phi)), cells, threads)
    values = np.log10(np.maximum(np.array(raw), 1e-300)).reshape(len(v_grid), len(omega_grid))
    return ScanResult(
        axis1=Axis("v", "delta^2", v_grid),
        axis2=Axis("omega", "delta", omega_grid),
        metric_name="log10_survival_error",
        values=values,
        metadata={"optimal": list(map(float, optimal)), "T": T, "delta": system.delta},
    )


def valley_degradation(system, optimal, T, rel=0.01):
    """Error increase for relative moves along and across ``omega^2 / v = const``.

    Along the valley ``v -> v (1+d)``, ``omega -> omega sqrt(1+d)``; across
    it ``v`` and ``omega`` move by ``d`` in opposite directions (log scale),
    for ``d = +-rel``.  Returns ``(base_error, along, across)`` with the
    worst increase of each pair.
    """
    v, lam, omega, phi = optimal
    f = oscillation_objective(system, T, max_phase_step=0.05)
    base = f(optimal)
    along, across = [], []
    for d in (rel, -rel):
        along.append(f((v * (1 + d), lam, omega * math.sqrt(1 + d), phi)) - base)
        across.append(f((v * (1 + d), lam, omega / (1 + d), phi)) - base)
    return base, max(along), max(across)


# --------------------------------------------------------------------------
# adiabatic scans and the speed limit
# --------------------------------------------------------------------------


def adiabatic_time_scale(delta):
    """One period of the gap frequency, ``2 pi / delta``."""
    return 2.0 * math.pi / delta


def default_eps0_grid(delta, n=20):
    return delta * np.geomspace(2.0, 50.0, n)


def default_T_grid(delta, n=20):
    scale = adiabatic_time_scale(delta)
    return np.linspace(0.5 * scale, 4.0 * scale, n)


@dataclass(frozen=True)
class AdiabaticSettings:
    """Knobs for the erf-tan seed and the GRAPE refinement in ``(eps0, T)`` scans.

    ``width`` is ``lambda_erf * T``; ``smoothing_pixels`` is the Gaussian
    width applied to GRAPE updates, in pixels.
    """

    width: float = 4.0
    pixel_count: int = 256
    buffer_pixels: int = 3
    smoothing_pixels: Optional[float] = 2.0
    max_iterations: int = 3000
    target_error: float = 1e-6

    def grape_config(self, dt):
        sigma = None if self.smoothing_pixels is None else self.smoothing_pixels * dt
        return GrapeConfig(
            pixel_count=self.pixel_count,
            learning_rate=1.0,
            max_iterations=self.max_iterations,
            target_error=self.target_error,
            buffer_pixels=self.buffer_pixels,
            smoothing_sigma=sigma,
        )


def adiabatic_cell(delta, eps0, T, optimize, settings=AdiabaticSettings()):
    """Fidelity of one ``(eps0, T)`` cell.

    Unoptimised cells report the phase-insensitive fidelity of the
    continuous erf-tan pulse; optimised ones the sigma_x gate fidelity after
    GRAPE on its pixelation.
    """
    system = TwoLevelSystem(delta)
    seed = ErfTan(eps0=eps0, lambda_erf=settings.width / T, T=T, delta=delta)
    if not optimize:
        u = propagator(system, seed, -0.5 * T, 0.5 * T)
        return phase_insensitive_fidelity(u)
    pix = pixelate(seed, settings.pixel_count, -0.5 * T, 0.5 * T)
    result = grape_optimize(system, pix, SIGMA_X, settings.grape_config(pix.dt))
    return 1.0 - result.best_value


def scan_adiabatic_fidelity(
    delta,
    eps0_grid=None,
    T_grid=None,
    optimize=False,
    *,
    settings=AdiabaticSettings(),
    threads=None,
):
    """Fidelity over ``(eps0, T)`` for erf-tan seeds, optionally GRAPE-refined."""
    if not delta > 0:
        raise DomainError("delta must be > 0")
    eps0_grid = default_eps0_grid(delta) if eps0_grid is None else np.asarray(eps0_grid, float)
    T_grid = default_T_grid(delta) if T_grid is None else np.asarray(T_grid, float)
    if eps0_grid.size == 0 or T_grid.size == 0:
        raise DomainError("grids must be non-empty")
    cells = [(e, T) for e in eps0_grid for T in T_grid]

    def cell(c):
        try:
            return adiabatic_cell(delta, c[0], c[1], optimize, settings), False
        except Exception:  # noqa: BLE001 - a failed cell is recorded, not fatal
            return 0.0, True

    out = _map(cell, cells, threads)
    shape = (eps0_grid.size, T_grid.size)
    return ScanResult(
        axis1=Axis("eps0", "energy", eps0_grid),
        axis2=Axis("T", "time", T_grid),
        metric_name="gate_fidelity_sigma_x" if optimize else "phase_insensitive_fidelity",
        values=np.array([v for v, _ in out]).reshape(shape),
        failed=np.array([f for _, f in out]).reshape(shape),
        metadata={"delta": delta, "optimize": optimize, "settings": _snapshot(settings)},
    )


@dataclass(frozen=True)
class QslPoint:
    delta: float
    t_qsl: float
    resolved: bool
    resolution: float
    coverage: float


def _coverage(fidelity_fn, delta, eps0_grid, T, threshold, coverage, threads):
    need = math.ceil(coverage * len(eps0_grid) - 1e-12)
    allowed_failures = len(eps0_grid) - need
    if threads and threads > 1:
        fids = _map(lambda e: fidelity_fn(delta, e, T), eps0_grid, threads)
        return float(np.mean(np.array(fids) >= threshold))
    passed = failed = 0
    for e in eps0_grid:
        if fidelity_fn(delta, e, T) >= threshold:
            passed += 1
        else:
            failed += 1
            if failed > allowed_failures:
                break
    return passed / len(eps0_grid) if failed <= allowed_failures else 0.0


def estimate_qsl(
    delta_list,
    fidelity_threshold=0.9999,
    eps0_grid=None,
    coverage=0.95,
    *,
    T_bounds=(0.25, 4.0),
    resolution=0.01,
    fidelity_fn=None,
    settings=AdiabaticSettings(),
    threads=None,
):
    """Shortest gate time at which GRAPE reaches the threshold for most ``eps0``.

    For every ``delta`` the time is bisected on ``[lo, hi] * 2 pi / delta``
    (``T_bounds``) down to a relative width ``resolution``.  A duration
    passes when at least a ``coverage`` fraction of the ``eps0`` cells reach
    ``fidelity_threshold``.  ``eps0_grid`` defaults to
    :func:`default_eps0_grid` of each ``delta``.  GRAPE stops once the error
    is half of ``1 - fidelity_threshold``.

    ``fidelity_fn(delta, eps0, T)`` replaces the GRAPE evaluation, e.g. with
    a planted-threshold oracle.
    """
    if not 0 < fidelity_threshold < 1:
        raise DomainError("fidelity threshold must lie in (0, 1)")
    if not 0 < coverage <= 1:
        raise DomainError("coverage must lie in (0, 1]")
    if eps0_grid is not None:
        eps0_grid = np.asarray(eps0_grid, dtype=np.float64)
        if eps0_grid.size == 0:
            raise DomainError("eps0_grid must be non-empty")
    if fidelity_fn is None:
        settings = replace(settings, target_error=0.5 * (1 - fidelity_threshold))

        def fidelity_fn(d, e, T):
            return adiabatic_cell(d, e, T, True, settings)

    points = []
    for delta in delta_list:
        grid = default_eps0_grid(delta) if eps0_grid is None else eps0_grid
        scale = adiabatic_time_scale(delta)
        lo, hi = T_bounds[0] * scale, T_bounds[1] * scale

        def ok(T):
            return _coverage(fidelity_fn, delta, grid, T, fidelity_threshold, coverage, threads) >= coverage

        if not ok(hi):
            points.append(QslPoint(delta, math.nan, False, resolution, coverage))
            continue
        if ok(lo):
            points.append(QslPoint(delta, lo, True, resolution, coverage))
            continue
        while hi - lo > resolution * hi:
            mid = 0.5 * (lo + hi)
            if ok(mid):
                hi = mid
            else:
                lo = mid
        points.append(QslPoint(float(delta), hi, True, (hi - lo) / hi, coverage))
    return points


@dataclass
class QslFit:
    """``T_QSL(delta) = t0 + c / (delta + delta0)`` fitted to ``data``."""

    t0: float
    c: float
    delta0: float
    residuals: np.ndarray
    data: np.ndarray
    t0_fixed: bool = False

    def predict(self, delta):
        return self.t0 + self.c / (np.asarray(delta, dtype=np.float64) + self.delta0)

    @property
    def rms(self):
        return float(np.sqrt(np.mean(self.residuals**2)))


def qsl_model(delta, t0, c, delta0):
    return t0 + c / (np.asarray(delta, dtype=np.float64) + delta0)


def _linear_start(d, T, t0):
    # 1 / (T - t0) = (delta + delta0) / c is linear in delta
    y = 1.0 / (T - t0)
    slope, intercept = np.polyfit(d, y, 1)
    if slope <= 0:
        return None
    return 1.0 / slope, intercept / slope


def fit_qsl(data, fix_t0=None):
    """Least-squares fit of ``t0 + c / (delta + delta0)``.

    With ``fix_t0`` only ``c`` and ``delta0`` are free (two points suffice
    and are interpolated exactly); otherwise all three parameters are fitted
    by Levenberg-Marquardt, started from the best of a scan over ``t0``.
    """
    data = np.asarray([(float(d), float(T)) for d, T in data if math.isfinite(T)], dtype=np.float64)
    need = 2 if fix_t0 is not None else 3
    if data.shape[0] < need:
        raise FitError(f"need at least {need} finite points, got {data.shape[0]}")
    d, T = data[:, 0], data[:, 1]
    if np.ptp(d) == 0:
        raise FitError("all delta values are equal")

    if fix_t0 is not None:
        t0 = float(fix_t0)
        if np.any(T <= t0):
            raise FitError("every T_QSL must exceed the fixed t0")
        start = _linear_start(d, T, t0)
        if start is None:
            raise FitError("data are not decreasing in delta")

        def resid(p):
            return qsl_model(d, t0, p[0], p[1]) - T

        sol = least_squares(resid, start, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15)
        c, delta0 = sol.x
        return QslFit(t0, float(c), float(delta0), resid(sol.x), data, True)

    best = None
    for t0 in np.linspace(0.0, 0.999 * T.min(), 64):
        start = _linear_start(d, T, t0)
        if start is None:
            continue
        cost = np.sum((qsl_model(d, t0, *start) - T) ** 2)
        if best is None or cost < best[0]:
            best = (cost, (t0,) + start)
    if best is None:
        raise FitError("data are not decreasing in delta")

    def resid(p):
        return qsl_model(d, *p) - T

    sol = least_squares(resid, best[1], method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15)
    t0, c, delta0 = sol.x
    return QslFit(float(t0), float(c), float(delta0), resid(sol.x), data, False)
