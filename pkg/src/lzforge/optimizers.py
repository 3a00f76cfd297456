"""Pulse optimisation: Nelder-Mead over sweep parameters and GRAPE on pixels."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, List, Optional

import numpy as np

from . import kernels
from .dynamics import (
    SIGMA_0,
    LinearOscillating,
    Pixelated,
    TwoLevelSystem,
    gate_fidelity,
    propagator,
    smooth_values,
    survival_error,
)
from .errors import DomainError, LZForgeError


@dataclass(frozen=True)
class SimplexConfig:
    """Nelder-Mead hyperparameters.

    ``initial_simplex_scale`` is the fractional displacement of each vertex
    from the start point along one coordinate.
    """

    initial_simplex_scale: float = 0.05
    max_iterations: int = 5000
    target_value: float = 1e-6
    reflect: float = 1.0
    expand: float = 2.0
    contract: float = 0.5
    shrink: float = 0.5
    restarts: int = 3
    xtol: float = 1e-12

    def __post_init__(self):
        for name in ("initial_simplex_scale", "reflect", "expand", "contract", "shrink"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be > 0")
        if not self.expand > self.reflect:
            raise DomainError("expand must exceed reflect")
        if not (self.contract < 1 and self.shrink < 1):
            raise DomainError("contract and shrink must be < 1")


@dataclass(frozen=True)
class GrapeConfig:
    """GRAPE hyperparameters.

    ``learning_rate`` is the initial step; it is halved on every rejected
    step and multiplied by ``growth`` after every accepted one.
    ``smoothing_sigma`` (in time units) smooths the update direction.
    ``direction`` is ``"conjugate"`` (Polak-Ribiere with automatic restart)
    or ``"gradient"`` (plain steepest ascent).
    """

    pixel_count: int = 256
    learning_rate: float = 1.0
    max_iterations: int = 2000
    target_error: float = 1e-5
    buffer_pixels: int = 3
    smoothing_sigma: Optional[float] = None
    growth: float = 1.1
    min_learning_rate: float = 1e-12
    direction: str = "conjugate"
    final_smoothing: bool = False

    def __post_init__(self):
        if not self.pixel_count > 2 * self.buffer_pixels:
            raise DomainError("pixel_count must exceed 2 * buffer_pixels")
        if not self.learning_rate > 0:
            raise DomainError("learning_rate must be > 0")
        if self.buffer_pixels < 0:
            raise DomainError("buffer_pixels must be >= 0")
        if not self.growth >= 1:
            raise DomainError("growth must be >= 1")
        if self.smoothing_sigma is not None and not self.smoothing_sigma > 0:
            raise DomainError("smoothing_sigma must be > 0 when given")
        if self.direction not in ("conjugate", "gradient"):
            raise DomainError(f"direction must be 'conjugate' or 'gradient', got {self.direction!r}")


@dataclass
class OptimizationResult:
    best: Any
    best_value: float
    iterations_used: int
    converged: bool
    value_history: List[float] = field(default_factory=list)
    evaluations: int = 0
    message: str = ""


# --------------------------------------------------------------------------
# Nelder-Mead
# --------------------------------------------------------------------------


def _initial_simplex(x0, scale):
    n = x0.size
    simplex = np.tile(x0, (n + 1, 1))
    for i in range(n):
        step = scale * x0[i] if x0[i] != 0 else scale * 0.005
        simplex[i + 1, i] += step
    return simplex


def nelder_mead(objective, initial, config=SimplexConfig()):
    """Minimise ``objective`` with the Nelder-Mead simplex method.

    Standard reflect / expand / outside- and inside-contract / shrink moves.
    A run ends when the best value reaches ``config.target_value``, the
    simplex collapses below ``config.xtol`` (relative), or the iteration
    budget is spent.  A collapsed simplex that has not reached the target
    is re-seeded around the incumbent up to ``config.restarts`` times.
    Non-finite objective values count as ``+inf``.
    """
    x0 = np.array(initial, dtype=np.float64).ravel()
    evaluations = 0

    def f(x):
        nonlocal evaluations
        evaluations += 1
        try:
            value = float(objective(x))
        except (ArithmeticError, LZForgeError, ValueError):
            return math.inf
        return value if math.isfinite(value) else math.inf

    first = f(x0)
    if not math.isfinite(first):
        raise DomainError("objective is not finite at the initial point")

    c = config
    simplex = _initial_simplex(x0, c.initial_simplex_scale)
    values = np.array([first] + [f(x) for x in simplex[1:]])
    history = []
    restarts_left = c.restarts
    iterations = 0
    converged = False
    message = "max_iterations reached"

    while iterations < c.max_iterations:
        order = np.argsort(values, kind="stable")
        simplex, values = simplex[order], values[order]
        history.append(float(values[0]))
        if values[0] <= c.target_value:
            converged, message = True, "target reached"
            break
        size = np.max(np.abs(simplex[1:] - simplex[0]))
        if size <= c.xtol * max(1.0, np.max(np.abs(simplex[0]))):
            if restarts_left == 0:
                message = "simplex collapsed"
                break
            restarts_left -= 1
            simplex = _initial_simplex(simplex[0].copy(), c.initial_simplex_scale)
            values = np.concatenate([values[:1], [f(x) for x in simplex[1:]]])
            continue
        iterations += 1

        centroid = simplex[:-1].mean(axis=0)
        worst = simplex[-1]
        xr = centroid + c.reflect * (centroid - worst)
        fr = f(xr)
        if fr < values[0]:
            xe = centroid + c.expand * (xr - centroid)
            fe = f(xe)
            if fe < fr:
                simplex[-1], values[-1] = xe, fe
            else:
                simplex[-1], values[-1] = xr, fr
            continue
        if fr < values[-2]:
            simplex[-1], values[-1] = xr, fr
            continue
        if fr < values[-1]:
            xc = centroid + c.contract * (xr - centroid)
            fc = f(xc)
            if fc <= fr:
                simplex[-1], values[-1] = xc, fc
                continue
        else:
            xc = centroid + c.contract * (worst - centroid)
            fc = f(xc)
            if fc < values[-1]:
                simplex[-1], values[-1] = xc, fc
                continue
        simplex[1:] = simplex[0] + c.shrink * (simplex[1:] - simplex[0])
        values[1:] = [f(x) for x in simplex[1:]]
    else:
        order = np.argsort(values, kind="stable")
        simplex, values = simplex[order], values[order]
        history.append(float(values[0]))
        converged = values[0] <= c.target_value

    return OptimizationResult(
        best=simplex[0].copy(),
        best_value=float(values[0]),
        iterations_used=iterations,
        converged=bool(converged),
        value_history=history,
        evaluations=evaluations,
        message=message,
    )


def _unpack(x):
    log_v, lam, log_omega, phi = x
    return math.exp(log_v), lam, math.exp(log_omega), phi


def oscillation_objective(system, T, *, max_phase_step=0.2, steps=None):
    """Survival error over ``[-T/2, T/2]`` as a function of ``(v, lam, omega, phi)``."""

    def objective(params):
        v, lam, omega, phi = params
        pulse = LinearOscillating(v, lam, omega, phi)
        u = propagator(system, pulse, -0.5 * T, 0.5 * T, steps, max_phase_step=max_phase_step)
        return survival_error(u)

    return objective


def optimize_oscillation_params(
    system,
    T,
    initial,
    config=SimplexConfig(),
    *,
    max_phase_step=0.2,
):
    """Nelder-Mead over ``(v, lam, omega, phi)`` of ``v t + lam cos(omega t + phi)``.

    The search runs in ``(log v, lam, log omega, phi)`` so that ``v`` and
    ``omega`` stay positive; the returned ``phi`` is wrapped to ``[0, 2 pi)``.
    ``max_phase_step`` controls the propagation grid during the search;
    the best point is re-evaluated on the default (finer) grid.

    Returns
    -------
    OptimizationResult
        ``best`` is the tuple ``(v, lam, omega, phi)``.
    """
    if not T > 0:
        raise DomainError(f"T must be > 0, got {T}")
    v, lam, omega, phi = (float(p) for p in initial)
    if not (v > 0 and omega > 0):
        raise DomainError("initial v and omega must be > 0")
    physical = oscillation_objective(system, T, max_phase_step=max_phase_step)

    def objective(x):
        return physical(_unpack(x))

    x0 = np.array([math.log(v), lam, math.log(omega), phi])
    result = nelder_mead(objective, x0, config)
    v, lam, omega, phi = _unpack(result.best)
    best = (float(v), float(lam), float(omega), float(phi % (2 * math.pi)))
    final = oscillation_objective(system, T, max_phase_step=0.05)(best)
    return OptimizationResult(
        best=best,
        best_value=final,
        iterations_used=result.iterations_used,
        converged=final <= config.target_value,
        value_history=result.value_history,
        evaluations=result.evaluations,
        message=result.message,
    )


# --------------------------------------------------------------------------
# GRAPE
# --------------------------------------------------------------------------


def fidelity_and_gradient(system, pulse, target=SIGMA_0):
    """Gate overlap fidelity of a pixelated pulse and its exact pixel gradient."""
    target = np.ascontiguousarray(target, dtype=np.complex128)
    fid, grad = kernels.overlap_grad(
        np.ascontiguousarray(pulse.values), float(system.delta), float(pulse.dt), target
    )
    return float(fid), np.asarray(grad)


def grape_gradient(system, pulse, target=SIGMA_0, buffer_pixels=0):
    """Analytic gradient of ``|Tr(target^dag U)|^2 / 4`` with respect to each pixel.

    The first and last ``buffer_pixels`` entries are zeroed.
    """
    _, grad = fidelity_and_gradient(system, pulse, target)
    if buffer_pixels:
        grad = grad.copy()
        grad[:buffer_pixels] = 0.0
        grad[-buffer_pixels:] = 0.0
    return grad


def grape_optimize(system, initial, target=SIGMA_0, config=GrapeConfig()):
    """Maximise the gate fidelity over the pixel amplitudes of ``initial``.

    The search direction is the fidelity gradient, Gaussian-smoothed when
    ``config.smoothing_sigma`` is set and zero on buffer pixels.  With
    ``direction="conjugate"`` successive directions are combined by the
    Polak-Ribiere rule (smoothing acts as the preconditioner), restarting
    from the plain gradient whenever the result stops being an ascent
    direction.  Every step is a backtracking trial: a proposal that lowers
    the fidelity is rejected and the step halved; an accepted one grows the
    step by ``config.growth``.  The fidelity history is non-decreasing.

    Returns
    -------
    OptimizationResult
        ``best`` is the optimised :class:`Pixelated` pulse, ``best_value``
        its error ``1 - fidelity``; ``value_history`` holds fidelities.
    """
    c = config
    if initial.n != c.pixel_count:
        raise DomainError(f"initial pulse has {initial.n} pixels, config expects {c.pixel_count}")
    target = np.ascontiguousarray(target, dtype=np.complex128)
    values = np.array(initial.values, dtype=np.float64)
    mask = np.ones(values.size, dtype=bool)
    if c.buffer_pixels:
        mask[: c.buffer_pixels] = False
        mask[-c.buffer_pixels :] = False
    sigma_px = None if c.smoothing_sigma is None else c.smoothing_sigma / initial.dt
    conjugate = c.direction == "conjugate"

    def evaluate(vals):
        fid, grad = kernels.overlap_grad(vals, float(system.delta), float(initial.dt), target)
        grad = np.where(mask, grad, 0.0)
        pre = grad if sigma_px is None else np.where(mask, smooth_values(grad, sigma_px), 0.0)
        return float(fid), grad, pre

    fid, grad, pre = evaluate(values)
    history = [fid]
    direction = pre
    lr = c.learning_rate
    iterations = 0
    evaluations = 1
    message = "max_iterations reached"
    while iterations < c.max_iterations:
        if 1.0 - fid <= c.target_error:
            message = "target reached"
            break
        if not np.any(direction):
            message = "zero gradient"
            break
        iterations += 1
        while lr >= c.min_learning_rate:
            trial = values + lr * direction
            trial_fid, trial_grad, trial_pre = evaluate(trial)
            evaluations += 1
            if trial_fid >= fid:
                break
            lr *= 0.5
        else:
            message = "line search stalled"
            history.append(fid)
            break
        if conjugate:
            beta = max(0.0, float(trial_grad @ (trial_pre - pre)) / float(grad @ pre))
            direction = trial_pre + beta * direction
            if float(direction @ trial_grad) <= 0:
                direction = trial_pre
        else:
            direction = trial_pre
        values, fid, grad, pre = trial, trial_fid, trial_grad, trial_pre
        lr *= c.growth
        history.append(fid)

    if c.final_smoothing and sigma_px is not None:
        smoothed = np.where(mask, smooth_values(values, sigma_px), values)
        smoothed_fid = evaluate(smoothed)[0]
        evaluations += 1
        # keep the smoothed pulse only if it does not cost fidelity
        if smoothed_fid >= fid:
            values, fid = smoothed, smoothed_fid
            history.append(fid)

    best = initial.replace(values)
    error = 1.0 - fid
    return OptimizationResult(
        best=best,
        best_value=error,
        iterations_used=iterations,
        converged=error <= c.target_error,
        value_history=history,
        evaluations=evaluations,
        message=message,
    )
