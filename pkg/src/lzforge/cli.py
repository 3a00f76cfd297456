"""Command-line entry point.

Every subcommand reads one JSON config, writes CSV (and optionally SVG)
files into the output directory and exits with 0 on success, 1 on invalid
input and 2 on numeric or convergence failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analytic import J0_ZERO, design_diabatic_pulse
from .dynamics import (
    MAX_PHASE_STEP,
    SIGMA_0,
    SIGMA_X,
    ErfTan,
    LinearOscillating,
    Pixelated,
    TwoLevelSystem,
    Window,
    default_steps,
    gate_fidelity,
    phase_insensitive_fidelity,
    pixelate,
    propagate,
    survival_error,
    to_eigenframe,
)
from .errors import ConfigError, DesignError, DomainError, FitError, NumericError
from .experiments import (
    AdiabaticSettings,
    default_eps0_grid,
    default_T_grid,
    estimate_qsl,
    fit_qsl,
    scan_adiabatic_fidelity,
    scan_phase_sensitivity,
    scan_robustness,
    trace_trajectory,
)
from .optimizers import GrapeConfig, SimplexConfig, grape_optimize, optimize_oscillation_params

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_NUMERIC = 2

COMMANDS = ("simulate", "design", "optimize-nm", "grape", "scan", "fit-qsl")
FORMATS = ("csv", "svg")
TARGETS = {"identity": SIGMA_0, "sigma_x": SIGMA_X}

_REQUIRED = object()


# --------------------------------------------------------------------------
# config access
# --------------------------------------------------------------------------


def _block(cfg, key, path, required=True):
    name = f"{path}.{key}" if path else key
    if key not in cfg or cfg[key] is None:
        if required:
            raise ConfigError(name, "missing")
        return {}
    value = cfg[key]
    if not isinstance(value, dict):
        raise ConfigError(name, "must be an object")
    if required and not value:
        raise ConfigError(name, "must not be empty")
    return value


def _num(cfg, key, path, default=_REQUIRED, *, positive=False, nonneg=False, integer=False):
    name = f"{path}.{key}" if path else key
    if key not in cfg or cfg[key] is None:
        if default is _REQUIRED:
            raise ConfigError(name, "missing")
        return default
    value = cfg[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(name, f"must be a number, got {value!r}")
    if integer:
        if int(value) != value:
            raise ConfigError(name, f"must be an integer, got {value!r}")
        value = int(value)
    elif not math.isfinite(value):
        raise ConfigError(name, "must be finite")
    if positive and not value > 0:
        raise ConfigError(name, f"must be > 0, got {value!r}")
    if nonneg and value < 0:
        raise ConfigError(name, f"must be >= 0, got {value!r}")
    return value


def _choice(cfg, key, path, options, default=_REQUIRED):
    name = f"{path}.{key}" if path else key
    value = cfg.get(key, default)
    if value is _REQUIRED:
        raise ConfigError(name, "missing")
    if value not in options:
        raise ConfigError(name, f"must be one of {sorted(options)}, got {value!r}")
    return value


def _grid(cfg, key, path, default=None, *, positive=False):
    """A list of numbers or ``{"min", "max", "count", "spacing": "linear"|"log"}``."""
    name = f"{path}.{key}" if path else key
    raw = cfg.get(key)
    if raw is None:
        if default is None:
            raise ConfigError(name, "missing")
        return np.asarray(default, dtype=np.float64)
    if isinstance(raw, list):
        try:
            values = np.array(raw, dtype=np.float64)
        except (TypeError, ValueError):
            raise ConfigError(name, "must be a list of numbers") from None
    elif isinstance(raw, dict):
        lo = _num(raw, "min", name)
        hi = _num(raw, "max", name)
        count = _num(raw, "count", name, positive=True, integer=True)
        spacing = _choice(raw, "spacing", name, ("linear", "log"), "linear")
        if spacing == "log":
            if not (lo > 0 and hi > 0):
                raise ConfigError(name, "log spacing needs min, max > 0")
            values = np.geomspace(lo, hi, count)
        else:
            values = np.linspace(lo, hi, count)
    else:
        raise ConfigError(name, "must be a list or a {min, max, count} object")
    if values.ndim != 1 or values.size == 0 or not np.all(np.isfinite(values)):
        raise ConfigError(name, "must be a non-empty list of finite numbers")
    if positive and np.any(values <= 0):
        raise ConfigError(name, "all values must be > 0")
    return values


def _system(cfg):
    block = cfg.get("system") or {}
    if not isinstance(block, dict):
        raise ConfigError("system", "must be an object")
    delta = _num(block, "delta", "system", 1.0, nonneg=True)
    return TwoLevelSystem(delta), {"delta": delta}


def read_table(path, field):
    """Header row and float rows of a CSV written by this tool ('#' lines skipped)."""
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(line for line in fh if not line.startswith("#")) if r]
    except OSError as exc:
        raise ConfigError(field, f"cannot read {path}: {exc}") from None
    if not rows:
        raise ConfigError(field, f"{path} is empty")
    header = [h.strip() for h in rows[0]]
    try:
        table = np.array([[float(x) for x in r] for r in rows[1:]], dtype=np.float64)
    except ValueError as exc:
        raise ConfigError(field, f"{path}: {exc}") from None
    return header, table.reshape(-1, len(header))


def _read_pulse_csv(path):
    header, table = read_table(path, "pulse.file")
    if header[:2] != ["t", "epsilon"]:
        raise ConfigError("pulse.file", f"{path} must have columns t, epsilon")
    if table.shape[0] < 2:
        raise ConfigError("pulse.file", "need at least two pixels")
    t, eps = table[:, 0], table[:, 1]
    dt = (t[-1] - t[0]) / (t.size - 1)
    return eps, dt, t[0]


def _pulse(cfg, path, system, base_dir):
    """Build a pulse from its config block; also returns the resolved block."""
    block = _block(cfg, "pulse", path)
    name = f"{path}.pulse" if path else "pulse"
    kind = _choice(block, "type", name, ("linear_oscillating", "erf_tan", "pixelated"))
    if kind == "linear_oscillating":
        resolved = {
            "type": kind,
            "v": _num(block, "v", name),
            "lambda_r": _num(block, "lambda_r", name, 0.0),
            "omega": _num(block, "omega", name, 0.0, nonneg=True),
            "phi": _num(block, "phi", name, 0.0),
        }
        window = None
        if block.get("window") is not None:
            wb = _block(block, "window", name)
            resolved["window"] = {"T": _num(wb, "T", name + ".window", positive=True),
                                  "Ts": _num(wb, "Ts", name + ".window", positive=True)}
            try:
                window = Window(**resolved["window"])
            except DomainError as exc:
                raise ConfigError(name + ".window", str(exc)) from None
        pulse = LinearOscillating(resolved["v"], resolved["lambda_r"], resolved["omega"], resolved["phi"], window)
    elif kind == "erf_tan":
        resolved = {
            "type": kind,
            "eps0": _num(block, "eps0", name, positive=True),
            "lambda_erf": _num(block, "lambda_erf", name, positive=True),
            "T": _num(block, "T", name, positive=True),
        }
        if not system.delta > 0:
            raise ConfigError("system.delta", "erf_tan pulses need delta > 0")
        pulse = ErfTan(resolved["eps0"], resolved["lambda_erf"], resolved["T"], system.delta)
    else:
        if "file" in block:
            file = Path(block["file"])
            if not file.is_absolute():
                file = base_dir / file
            values, dt, t_start = _read_pulse_csv(file)
            resolved = {"type": kind, "file": str(file), "pixels": int(values.size)}
        else:
            if not isinstance(block.get("values"), list) or not block["values"]:
                raise ConfigError(name + ".values", "must be a non-empty list")
            try:
                values = np.array(block["values"], dtype=np.float64)
            except (TypeError, ValueError):
                raise ConfigError(name + ".values", "must be numbers") from None
            dt = _num(block, "dt", name, positive=True)
            t_start = _num(block, "t_start", name, 0.0)
            resolved = {"type": kind, "values": values.tolist()}
        resolved.update(dt=dt, t_start=t_start)
        pulse = Pixelated(values, dt, t_start)
    return pulse, resolved


def _default_window(pulse):
    if isinstance(pulse, Pixelated):
        return pulse.t_start, pulse.t_end
    if isinstance(pulse, ErfTan):
        return -0.5 * pulse.T, 0.5 * pulse.T
    if pulse.window is not None:
        return -pulse.window.half_extent, pulse.window.half_extent
    return None


def _interval(cfg, path, pulse):
    default = _default_window(pulse)
    lo = _num(cfg, "t_start", path, None if default is None else default[0])
    hi = _num(cfg, "t_end", path, None if default is None else default[1])
    if lo is None or hi is None:
        raise ConfigError(f"{path}.t_start" if lo is None else f"{path}.t_end",
                          "required for pulses without a natural window")
    if not hi > lo:
        raise ConfigError(f"{path}.t_end", "must exceed t_start")
    return float(lo), float(hi)


def _readout(u, system, pulse, t_start, t_end, mode):
    if mode == "eigenframe" and system.delta > 0:
        # pixel values at the edges (avoid evaluating exactly at t_end)
        if isinstance(pulse, Pixelated):
            e0, e1 = float(pulse.values[0]), float(pulse.values[-1])
        else:
            e0, e1 = float(pulse(t_start)), float(pulse(t_end))
        return to_eigenframe(u, system, e0, e1)
    return u


# --------------------------------------------------------------------------
# output
# --------------------------------------------------------------------------


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.17g}"
    return str(x)


class Output:
    def __init__(self, directory, formats, header):
        self.directory = Path(directory)
        self.formats = formats
        self.header = header
        self.written = []
        try:
            self.directory.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise OSError(f"cannot create output directory {self.directory}: {exc}") from None

    def _comment_lines(self):
        text = json.dumps(self.header, indent=2, sort_keys=True, default=_fmt)
        return ["# " + line for line in text.splitlines()]

    def csv(self, name, columns, rows):
        if "csv" not in self.formats:
            return
        path = self.directory / name
        try:
            with open(path, "w", newline="") as fh:
                for line in self._comment_lines():
                    fh.write(line + "\n")
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(columns)
                for row in rows:
                    writer.writerow([_fmt(x) for x in row])
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc}") from None
        self.written.append(path)

    def result(self, pairs):
        self.csv("result.csv", ["key", "value"], list(pairs.items()))

    def svg(self, name, draw):
        if "svg" not in self.formats:
            return
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(7, 4.5))
        draw(fig, ax)
        fig.tight_layout()
        path = self.directory / name
        try:
            fig.savefig(path, format="svg", metadata={"Date": None})
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc}") from None
        finally:
            plt.close(fig)
        self.written.append(path)


def _write_pulse(out, pulse):
    t = pulse.t_start + np.arange(pulse.n) * pulse.dt
    out.csv("pulse.csv", ["t", "epsilon"], zip(t, pulse.values))


def _pixelate_fine(system, pulse, t_start, t_end, max_phase_step):
    n = default_steps(system, pulse, t_start, t_end, max_phase_step)
    return pixelate(pulse, n, t_start, t_end)


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_simulate(cfg, out_opts, base_dir):
    system, sys_block = _system(cfg)
    pulse, pulse_block = _pulse(cfg, "", system, base_dir)
    prop = cfg.get("propagation") or {}
    t_start, t_end = _interval(prop, "propagation", pulse)
    mps = _num(prop, "max_phase_step", "propagation", MAX_PHASE_STEP, positive=True)
    samples = _num(prop, "samples", "propagation", 2000, positive=True, integer=True)
    readout = _choice(prop, "readout", "propagation", ("eigenframe", "bare"), "eigenframe")
    resolved = {
        "system": sys_block,
        "pulse": pulse_block,
        "propagation": {"t_start": t_start, "t_end": t_end, "max_phase_step": mps,
                        "samples": samples, "readout": readout},
    }
    out = out_opts(resolved)
    steps = default_steps(system, pulse, t_start, t_end, mps)
    jump = isinstance(pulse, LinearOscillating) and pulse.v > 0 and pulse.omega > 0 and system.delta > 0
    if jump:
        trace = trace_trajectory(system, pulse, t_start, t_end, samples=samples, steps=steps)
        u, traj = trace.unitary, trace.trajectory
    else:
        u, traj = propagate(system, pulse, t_start, t_end, steps, samples=samples)
    eps = _sample_pulse(pulse, traj.times)
    out.csv(
        "trajectory.csv",
        ["t", "population_0", "population_1", "epsilon"],
        zip(traj.times, traj.populations, traj.populations_1, eps),
    )
    read = _readout(u, system, pulse, t_start, t_end, readout)
    out.result({
        "survival_error": survival_error(read),
        "bare_survival_error": survival_error(u),
        "final_population_0": traj.populations[-1],
        "identity_fidelity": gate_fidelity(read, SIGMA_0),
        "sigma_x_fidelity": gate_fidelity(read, SIGMA_X),
        "phase_insensitive_fidelity": phase_insensitive_fidelity(read),
        "steps": steps,
    })

    def draw(fig, ax):
        ax.plot(traj.times, traj.populations, lw=1, label="propagation")
        if jump and trace.plateau_times.size:
            edges = np.append(trace.plateau_times, t_end)
            ax.stairs(trace.plateau_populations, edges, color="C3", lw=1.2, label="jump model")
        ax.set_xlabel("t")
        ax.set_ylabel("population of |0>")
        ax.set_title("trajectory")
        ax.legend(loc="best")

    out.svg("trajectory.svg", draw)
    return out, True


def _sample_pulse(pulse, times):
    if isinstance(pulse, Pixelated):
        # the last sample sits on the right edge of the support
        t = np.minimum(times, pulse.t_end - 0.5 * pulse.dt)
        return pulse(t)
    if isinstance(pulse, ErfTan):
        return pulse(np.clip(times, -0.5 * pulse.T, 0.5 * pulse.T))
    return pulse(times)


def cmd_design(cfg, out_opts, base_dir):
    system, sys_block = _system(cfg)
    block = _block(cfg, "design", "")
    v = _num(block, "v", "design", positive=True)
    omega = _num(block, "omega", "design", positive=True)
    Ts = _num(block, "Ts", "design", positive=True)
    mps = _num(block, "max_phase_step", "design", MAX_PHASE_STEP, positive=True)
    resolved = {"system": sys_block, "design": {"v": v, "omega": omega, "Ts": Ts, "max_phase_step": mps}}
    try:
        design = design_diabatic_pulse(v, omega, Ts, system.delta)
    except DesignError as exc:
        raise ConfigError("design.Ts", str(exc)) from None
    out = out_opts(resolved)
    half = design.half_extent
    pix = _pixelate_fine(system, design.pulse, -half, half, mps)
    _write_pulse(out, pix)
    u, _ = propagate(system, pix, pix.t_start, pix.t_end, samples=2)
    read = _readout(u, system, pix, pix.t_start, pix.t_end, "eigenframe")
    summary = {
        "v": v, "omega": omega, "lambda_r": design.pulse.lambda_r, "phi": 0.0,
        "T": design.T, "Ts": design.Ts, "T_plus_Ts": design.T + design.Ts,
        "pixels": pix.n, "dt": pix.dt,
        "survival_error": survival_error(read),
        "bare_survival_error": survival_error(u),
    }
    for name, (lhs, rhs, ok) in design.constraints.items():
        summary[f"constraint.{name}"] = ok
    out.result(summary)

    def draw(fig, ax):
        ax.plot(pix.times(), pix.values, lw=0.8)
        ax.set_xlabel("t")
        ax.set_ylabel("epsilon")
        ax.set_title("designed pulse")

    out.svg("pulse.svg", draw)
    return out, True


def cmd_optimize_nm(cfg, out_opts, base_dir):
    system, sys_block = _system(cfg)
    block = _block(cfg, "optimize_nm", "")
    T = _num(block, "T", "optimize_nm", positive=True)
    init = _block(block, "initial", "optimize_nm")
    p = "optimize_nm.initial"
    initial = (
        _num(init, "v", p, positive=True),
        _num(init, "lambda_r", p, J0_ZERO * _num(init, "omega", p, positive=True)),
        _num(init, "omega", p, positive=True),
        _num(init, "phi", p, 0.0),
    )
    sb = block.get("simplex") or {}
    sp = "optimize_nm.simplex"
    try:
        simplex = SimplexConfig(
            initial_simplex_scale=_num(sb, "initial_simplex_scale", sp, 0.05, positive=True),
            max_iterations=_num(sb, "max_iterations", sp, 5000, positive=True, integer=True),
            target_value=_num(sb, "target_value", sp, 1e-6, positive=True),
            restarts=_num(sb, "restarts", sp, 3, nonneg=True, integer=True),
        )
    except DomainError as exc:
        raise ConfigError(sp, str(exc)) from None
    mps = _num(block, "max_phase_step", "optimize_nm", 0.2, positive=True)
    resolved = {
        "system": sys_block,
        "optimize_nm": {
            "T": T,
            "initial": dict(zip(("v", "lambda_r", "omega", "phi"), initial)),
            "simplex": {"initial_simplex_scale": simplex.initial_simplex_scale,
                        "max_iterations": simplex.max_iterations,
                        "target_value": simplex.target_value, "restarts": simplex.restarts},
            "max_phase_step": mps,
        },
    }
    out = out_opts(resolved)
    result = optimize_oscillation_params(system, T, initial, simplex, max_phase_step=mps)
    v, lam, omega, phi = result.best
    out.result({
        "v": v, "lambda_r": lam, "omega": omega, "phi": phi,
        "best_value": result.best_value,
        "iterations_used": result.iterations_used,
        "evaluations": result.evaluations,
        "converged": result.converged,
        "message": result.message,
    })
    out.csv("history.csv", ["iteration", "best_value"], enumerate(result.value_history))

    def draw(fig, ax):
        ax.semilogy(np.maximum(result.value_history, 1e-300))
        ax.set_xlabel("iteration")
        ax.set_ylabel("best survival error")
        ax.set_title("Nelder-Mead")

    out.svg("history.svg", draw)
    return out, result.converged


def cmd_grape(cfg, out_opts, base_dir):
    system, sys_block = _system(cfg)
    block = _block(cfg, "grape", "")
    g = "grape"
    target_name = _choice(block, "target", g, tuple(TARGETS), "identity")
    pulse, pulse_block = _pulse(block, g, system, base_dir)
    if isinstance(pulse, Pixelated):
        n_default = pulse.n
    else:
        n_default = 256
    try:
        config = GrapeConfig(
            pixel_count=_num(block, "pixel_count", g, n_default, positive=True, integer=True),
            learning_rate=_num(block, "learning_rate", g, 1.0, positive=True),
            max_iterations=_num(block, "max_iterations", g, 2000, nonneg=True, integer=True),
            target_error=_num(block, "target_error", g, 1e-5, positive=True),
            buffer_pixels=_num(block, "buffer_pixels", g, 3, nonneg=True, integer=True),
            smoothing_sigma=_num(block, "smoothing_sigma", g, None, positive=True),
            growth=_num(block, "growth", g, 1.1, positive=True),
            direction=_choice(block, "direction", g, ("conjugate", "gradient"), "conjugate"),
            final_smoothing=bool(block.get("final_smoothing", False)),
        )
    except DomainError as exc:
        raise ConfigError(g, str(exc)) from None
    if isinstance(pulse, Pixelated):
        if pulse.n != config.pixel_count:
            raise ConfigError("grape.pixel_count", f"pixelated pulse has {pulse.n} pixels")
        initial = pulse
    else:
        t_start, t_end = _interval(block, g, pulse)
        initial = pixelate(pulse, config.pixel_count, t_start, t_end)
    resolved = {
        "system": sys_block,
        "grape": {
            "target": target_name,
            "pulse": pulse_block,
            "t_start": initial.t_start,
            "t_end": initial.t_end,
            **{k: getattr(config, k) for k in config.__dataclass_fields__},
        },
    }
    out = out_opts(resolved)
    result = grape_optimize(system, initial, TARGETS[target_name], config)
    _write_pulse(out, result.best)
    out.result({
        "best_value": result.best_value,
        "fidelity": 1.0 - result.best_value,
        "initial_fidelity": result.value_history[0],
        "iterations_used": result.iterations_used,
        "converged": result.converged,
        "message": result.message,
    })
    out.csv("history.csv", ["iteration", "fidelity"], enumerate(result.value_history))

    def draw(fig, ax):
        t = initial.times()
        ax.plot(t, initial.values, lw=1, label="initial")
        ax.plot(t, result.best.values, lw=1, label="optimised")
        ax.plot(t, result.best.values - initial.values, lw=1, label="correction")
        ax.set_xlabel("t")
        ax.set_ylabel("epsilon")
        ax.set_title(f"GRAPE, error {result.best_value:.3g}")
        ax.legend(loc="best")

    out.svg("pulse.svg", draw)
    return out, result.converged


def _write_scan(out, scan):
    a1 = scan.axis1
    out.header["axes"] = {"axis1": {"name": a1.name, "unit": a1.unit}, "metric": scan.metric_name}
    if scan.axis2 is None:
        rows = zip(a1.values, scan.values, scan.failed)
        out.csv("scan.csv", ["axis1", "metric", "failed"], rows)
    else:
        a2 = scan.axis2
        out.header["axes"]["axis2"] = {"name": a2.name, "unit": a2.unit}
        rows = [
            (x, y, scan.values[i, j], scan.failed[i, j])
            for i, x in enumerate(a1.values)
            for j, y in enumerate(a2.values)
        ]
        out.csv("scan.csv", ["axis1", "axis2", "metric", "failed"], rows)

    def draw(fig, ax):
        if scan.axis2 is None:
            ax.plot(a1.values, scan.values, marker=".")
            ax.set_ylabel(scan.metric_name)
        else:
            mesh = ax.pcolormesh(scan.axis2.values, a1.values, scan.values, shading="nearest")
            fig.colorbar(mesh, ax=ax, label=scan.metric_name)
            ax.set_xlabel(f"{scan.axis2.name} [{scan.axis2.unit}]")
            ax.set_ylabel(f"{a1.name} [{a1.unit}]")
            return
        ax.set_xlabel(f"{a1.name} [{a1.unit}]")
        ax.set_title(scan.metric_name)

    out.svg("scan.svg", draw)


def cmd_scan(cfg, out_opts, base_dir, threads):
    system, sys_block = _system(cfg)
    block = _block(cfg, "scan", "")
    kind = _choice(block, "kind", "scan", ("phase", "robustness", "adiabatic"))
    resolved = {"system": sys_block, "scan": {"kind": kind}}
    rs = resolved["scan"]
    if kind == "phase":
        if "design" in block:
            d = _block(block, "design", "scan")
            try:
                pulse = design_diabatic_pulse(
                    _num(d, "v", "scan.design", positive=True),
                    _num(d, "omega", "scan.design", positive=True),
                    _num(d, "Ts", "scan.design", positive=True),
                    system.delta,
                ).pulse
            except DesignError as exc:
                raise ConfigError("scan.design.Ts", str(exc)) from None
            rs["design"] = {k: d[k] for k in ("v", "omega", "Ts")}
        else:
            pulse, rs["pulse"] = _pulse(block, "scan", system, base_dir)
            if not isinstance(pulse, LinearOscillating) or pulse.window is None:
                raise ConfigError("scan.pulse", "phase scans need a windowed linear_oscillating pulse")
        count = _num(block, "phase_count", "scan", 64, integer=True)
        if count < 32:
            raise ConfigError("scan.phase_count", "need at least 32 phases")
        rs["phase_count"] = count
        out = out_opts(resolved)
        phases = np.linspace(0.0, 2 * math.pi, count, endpoint=False)
        scan = scan_phase_sensitivity(system, pulse, phases, threads=threads)
        summary = {"max_over_phase": scan.values.max(),
                   "argmax_phase": phases[int(np.argmax(scan.values))],
                   "error_at_phase_0": scan.values[0]}
    elif kind == "robustness":
        o = _block(block, "optimal", "scan")
        p = "scan.optimal"
        optimal = (_num(o, "v", p, positive=True), _num(o, "lambda_r", p),
                   _num(o, "omega", p, positive=True), _num(o, "phi", p, 0.0))
        T = _num(block, "T", "scan", positive=True)
        span = _num(block, "relative_span", "scan", 0.02, positive=True)
        count = _num(block, "count", "scan", 21, positive=True, integer=True)
        v_grid = _grid(block, "v_grid", "scan", optimal[0] * (1 + np.linspace(-span, span, count)), positive=True)
        om_grid = _grid(block, "omega_grid", "scan", optimal[2] * (1 + np.linspace(-span, span, count)), positive=True)
        rs.update(optimal=dict(zip(("v", "lambda_r", "omega", "phi"), optimal)), T=T,
                  v_grid=v_grid.tolist(), omega_grid=om_grid.tolist())
        out = out_opts(resolved)
        scan = scan_robustness(system, optimal, T, v_grid, om_grid, threads=threads)
        summary = {"min_log10_error": scan.values.min(), "max_log10_error": scan.values.max()}
    else:
        if not system.delta > 0:
            raise ConfigError("system.delta", "adiabatic scans need delta > 0")
        eps0_grid = _grid(block, "eps0_grid", "scan", default_eps0_grid(system.delta), positive=True)
        T_grid = _grid(block, "T_grid", "scan", default_T_grid(system.delta), positive=True)
        optimize = bool(block.get("optimize", False))
        settings = _adiabatic_settings(block, "scan")
        rs.update(eps0_grid=eps0_grid.tolist(), T_grid=T_grid.tolist(), optimize=optimize,
                  settings=dict(settings.__dict__))
        out = out_opts(resolved)
        scan = scan_adiabatic_fidelity(system.delta, eps0_grid, T_grid, optimize,
                                       settings=settings, threads=threads)
        summary = {"failed_cells": int(scan.failed.sum()),
                   "fraction_above_0.9999": float(np.mean(scan.values >= 0.9999)),
                   "min_metric": scan.values.min(), "max_metric": scan.values.max()}
    _write_scan(out, scan)
    out.result({"metric": scan.metric_name, **summary})
    return out, True


def _adiabatic_settings(block, path):
    s = block.get("settings") or {}
    p = f"{path}.settings"
    d = AdiabaticSettings()
    try:
        return AdiabaticSettings(
            width=_num(s, "width", p, d.width, positive=True),
            pixel_count=_num(s, "pixel_count", p, d.pixel_count, positive=True, integer=True),
            buffer_pixels=_num(s, "buffer_pixels", p, d.buffer_pixels, nonneg=True, integer=True),
            smoothing_pixels=_num(s, "smoothing_pixels", p, d.smoothing_pixels, positive=True),
            max_iterations=_num(s, "max_iterations", p, d.max_iterations, nonneg=True, integer=True),
            target_error=_num(s, "target_error", p, d.target_error, positive=True),
        )
    except DomainError as exc:
        raise ConfigError(p, str(exc)) from None


def _read_qsl_csv(path):
    _, table = read_table(path, "fit_qsl.data_file")
    if table.shape[1] < 2 or table.shape[0] == 0:
        raise ConfigError("fit_qsl.data_file", "need columns delta, t_qsl")
    return table[:, :2]


def cmd_fit_qsl(cfg, out_opts, base_dir, threads):
    block = _block(cfg, "fit_qsl", "")
    f = "fit_qsl"
    fix_t0 = _num(block, "fix_t0", f, None)
    resolved = {"fit_qsl": {"fix_t0": fix_t0}}
    points = None
    if "data" in block:
        try:
            data = np.array(block["data"], dtype=np.float64)
        except (TypeError, ValueError):
            raise ConfigError("fit_qsl.data", "must be a list of [delta, t_qsl] pairs") from None
        if data.ndim != 2 or data.shape[1] != 2:
            raise ConfigError("fit_qsl.data", "must be a list of [delta, t_qsl] pairs")
        resolved[f]["data"] = data.tolist()
    elif "data_file" in block:
        path = Path(block["data_file"])
        if not path.is_absolute():
            path = base_dir / path
        data = _read_qsl_csv(path)
        resolved[f]["data_file"] = str(path)
    elif "estimate" in block:
        e = _block(block, "estimate", f)
        p = "fit_qsl.estimate"
        deltas = _grid(e, "delta_list", p, positive=True)
        threshold = _num(e, "fidelity_threshold", p, 0.9999)
        if not 0 < threshold < 1:
            raise ConfigError(p + ".fidelity_threshold", "must lie in (0, 1)")
        coverage = _num(e, "coverage", p, 0.95)
        if not 0 < coverage <= 1:
            raise ConfigError(p + ".coverage", "must lie in (0, 1]")
        resolution = _num(e, "resolution", p, 0.01, positive=True)
        eps0_grid = _grid(e, "eps0_grid", p, [], positive=True) if "eps0_grid" in e else None
        settings = _adiabatic_settings(e, p)
        resolved[f]["estimate"] = {
            "delta_list": deltas.tolist(), "fidelity_threshold": threshold, "coverage": coverage,
            "resolution": resolution, "eps0_grid": None if eps0_grid is None else eps0_grid.tolist(),
            "settings": dict(settings.__dict__),
        }
        out = out_opts(resolved)
        points = estimate_qsl(deltas, threshold, eps0_grid, coverage, resolution=resolution,
                              settings=settings, threads=threads)
        data = np.array([(pt.delta, pt.t_qsl) for pt in points])
    else:
        raise ConfigError("fit_qsl.data", "give one of data, data_file or estimate")
    if points is None:
        out = out_opts(resolved)
    fit = fit_qsl(data, fix_t0=fix_t0)
    resid = fit.predict(data[:, 0]) - data[:, 1]
    out.csv(
        "fit.csv",
        ["delta", "T_QSL", "fitted", "residual"],
        zip(data[:, 0], data[:, 1], fit.predict(data[:, 0]), resid),
    )
    summary = {"t0": fit.t0, "c": fit.c, "delta0": fit.delta0, "t0_fixed": fit.t0_fixed,
               "residual_rms": fit.rms, "points": int(fit.data.shape[0])}
    if points is not None:
        summary["unresolved"] = int(sum(not pt.resolved for pt in points))
    out.result(summary)

    def draw(fig, ax):
        ax.plot(data[:, 0], data[:, 1], "o", label="T_QSL")
        d = np.linspace(np.nanmin(data[:, 0]), np.nanmax(data[:, 0]), 200)
        ax.plot(d, fit.predict(d), label="t0 + c / (delta + delta0)")
        ax.set_xlabel("delta")
        ax.set_ylabel("T_QSL")
        ax.set_title("speed-limit fit")
        ax.legend(loc="best")

    out.svg("fit.svg", draw)
    return out, True


# --------------------------------------------------------------------------
# driver
# --------------------------------------------------------------------------


def _threads(arg):
    if arg is not None:
        return arg
    env = os.environ.get("LZFORGE_THREADS")
    if env is None:
        return 1
    try:
        value = int(env)
    except ValueError:
        raise ConfigError("LZFORGE_THREADS", f"must be an integer, got {env!r}") from None
    if value < 1:
        raise ConfigError("LZFORGE_THREADS", "must be >= 1")
    return value


def _formats(text):
    items = [x.strip() for x in text.split(",") if x.strip()]
    bad = [x for x in items if x not in FORMATS]
    if bad or not items:
        raise argparse.ArgumentTypeError(f"formats must be a subset of {','.join(FORMATS)}")
    return items


def _seed(text):
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def build_parser():
    parser = argparse.ArgumentParser(prog="lzforge", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"lzforge {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, type=Path, help="JSON config file")
        p.add_argument("--out", type=Path, default=None, help="output directory (default: output.directory or '.')")
        p.add_argument("--format", type=_formats, default=None, help="comma-separated subset of csv,svg")
        p.add_argument("--seed", type=_seed, default=None)
        p.add_argument("--threads", type=_positive_int, default=None)
    return parser


def run(argv=None):
    """Parse ``argv`` and execute one subcommand; returns the exit status."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    try:
        try:
            cfg = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise ConfigError("--config", f"cannot read {args.config}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError("--config", f"invalid JSON: {exc}") from None
        if not isinstance(cfg, dict):
            raise ConfigError("--config", "top level must be an object")
        output = cfg.get("output") or {}
        if not isinstance(output, dict):
            raise ConfigError("output", "must be an object")
        directory = args.out or Path(output.get("directory", "."))
        formats = args.format or output.get("formats", ["csv"])
        if not isinstance(formats, list) or any(f not in FORMATS for f in formats) or not formats:
            raise ConfigError("output.formats", f"must be a non-empty subset of {list(FORMATS)}")
        seed = args.seed if args.seed is not None else _num(output, "seed", "output", 0, nonneg=True, integer=True)
        threads = _threads(args.threads)
        base_dir = Path(args.config).resolve().parent

        def out_opts(resolved):
            header = {
                "command": args.command,
                "version": __version__,
                "seed": seed,
                "threads": threads,
                "config": {**resolved, "output": {"directory": str(directory), "formats": formats, "seed": seed}},
            }
            return Output(directory, formats, header)

        handler = {
            "simulate": lambda: cmd_simulate(cfg, out_opts, base_dir),
            "design": lambda: cmd_design(cfg, out_opts, base_dir),
            "optimize-nm": lambda: cmd_optimize_nm(cfg, out_opts, base_dir),
            "grape": lambda: cmd_grape(cfg, out_opts, base_dir),
            "scan": lambda: cmd_scan(cfg, out_opts, base_dir, threads),
            "fit-qsl": lambda: cmd_fit_qsl(cfg, out_opts, base_dir, threads),
        }[args.command]
        out, ok = handler()
    except ConfigError as exc:
        print(f"lzforge: invalid config: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (DomainError, DesignError) as exc:
        print(f"lzforge: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"lzforge: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (NumericError, FitError, ArithmeticError) as exc:
        print(f"lzforge: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    for path in out.written:
        print(path)
    if not ok:
        print("lzforge: optimiser did not reach its target", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
