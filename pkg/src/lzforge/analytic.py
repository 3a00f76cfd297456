"""Photon-assisted Landau-Zener jumps for an oscillation-augmented sweep.

For ``eps(t) = v t + lam cos(omega t + phi)`` the coupling in the frame
co-rotating with ``eps`` splits into Bessel sidebands.  Sideband ``m`` is an
ordinary Landau-Zener crossing at ``t_m = -m omega / v`` with gap
``delta J_m(lam / omega)``.  Composing the individual jump matrices in
chronological order gives a closed-form approximation to the full
propagator whenever the jumps do not overlap (``delta << omega``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import jv

from .dynamics import LinearOscillating, Window, lz_probability
from .errors import DesignError, DomainError

#: first zero of J_0
J0_ZERO = 2.404825557695773


def bessel_j(m, x):
    """Bessel function of the first kind ``J_m(x)`` for integer ``m``."""
    if int(m) != m:
        raise DomainError(f"order must be an integer, got {m}")
    return float(jv(int(m), x)) if np.ndim(x) == 0 else jv(int(m), x)


@dataclass(frozen=True)
class JumpModelParams:
    """Inputs of the multi-jump model.

    ``m0`` defaults to ``floor(v T / (2 omega))``, the largest photon order
    whose jump time still falls inside ``[-T/2, T/2]``.

    ``stokes_gap`` selects the gap in the logarithmic Stokes term:
    ``"effective"`` uses ``delta J_m`` of the jump itself, ``"bare"`` the
    undressed ``delta`` for every ``m``.  Both agree for ``lam = 0``.
    """

    delta: float
    v: float
    lam: float
    omega: float
    phi: float = 0.0
    T: float = 100.0
    m0: Optional[int] = None
    stokes_gap: str = "effective"
    non_overlapping: bool = field(init=False)
    stokes_valid: bool = field(init=False)

    def __post_init__(self):
        if not self.omega > 0:
            raise DomainError(f"omega must be > 0, got {self.omega}")
        if not self.v > 0:
            raise DomainError(f"v must be > 0, got {self.v}")
        if not self.T > 0:
            raise DomainError(f"T must be > 0, got {self.T}")
        if self.m0 is None:
            object.__setattr__(self, "m0", int(math.floor(self.v * self.T / (2 * self.omega))))
        if self.stokes_gap not in ("effective", "bare"):
            raise DomainError(f"stokes_gap must be 'effective' or 'bare', got {self.stokes_gap!r}")
        if self.m0 < 0:
            raise DomainError(f"m0 must be >= 0, got {self.m0}")
        object.__setattr__(self, "non_overlapping", self.delta <= self.omega / 10)
        object.__setattr__(self, "stokes_valid", self.delta**2 / (4 * self.v) <= 1)

    @classmethod
    def from_pulse(cls, pulse, delta, T, m0=None, stokes_gap="effective"):
        return cls(delta, pulse.v, pulse.lambda_r, pulse.omega, pulse.phi, T, m0, stokes_gap)

    def gap(self, m):
        return self.delta * bessel_j(m, self.lam / self.omega)

    def jump_time(self, m):
        return -m * self.omega / self.v


@dataclass(frozen=True)
class JumpEvent:
    m: int
    time: float
    effective_gap: float
    stokes_phase: float
    transition_prob: float
    sign_flip: bool


def stokes_phase(m, params):
    """Off-diagonal phase of jump ``m``.

    ``-(g^2/4v) ln(T^2 v/4) - pi/4 - m^2 omega^2/(2v) + m phi``, plus ``pi``
    when the effective gap ``delta J_m`` is negative.  ``g`` is the gap picked
    by ``params.stokes_gap``.  The odd-in-``m`` term enters with ``+m phi``,
    the sign carried by sideband ``m`` of the co-rotating coupling for a
    ``cos(omega t + phi)`` drive.
    """
    p = params
    if not (p.T > 0 and p.v > 0):
        raise DomainError("stokes phase needs T > 0 and v > 0")
    gap = p.gap(m)
    g = gap if p.stokes_gap == "effective" else p.delta
    phase = (
        -(g**2 / (4 * p.v)) * math.log(p.T**2 * p.v / 4)
        - 0.25 * math.pi
        - m * m * p.omega**2 / (2 * p.v)
        + m * p.phi
    )
    if gap < 0:
        phase += math.pi
    return phase


def jump_events(params):
    """One event per ``m`` in ``[-m0, m0]``, in chronological order."""
    events = []
    for m in range(params.m0, -params.m0 - 1, -1):
        gap = params.gap(m)
        events.append(
            JumpEvent(
                m=m,
                time=params.jump_time(m),
                effective_gap=gap,
                stokes_phase=stokes_phase(m, params),
                transition_prob=lz_probability(abs(gap), params.v),
                sign_flip=gap < 0,
            )
        )
    return events


def jump_matrix(event, v):
    """Single Landau-Zener jump as an SU(2) matrix.

    Diagonal ``exp(-pi g^2 / 4v)``, off-diagonals
    ``sqrt(1 - exp(-pi g^2 / 2v))`` carrying the Stokes phase.
    """
    x = math.pi * event.effective_gap**2 / (2 * v)
    stay = math.exp(-0.5 * x)
    flip = math.sqrt(-math.expm1(-x))
    rot = np.exp(1j * event.stokes_phase)
    return np.array([[stay, -rot * flip], [np.conj(rot) * flip, stay]], dtype=np.complex128)


def jump_plateaus(params, initial_state=None):
    """Population of ``|0>`` after each jump, starting from ``|1>``.

    Returns
    -------
    times : ndarray
        Jump times in chronological order.
    populations : ndarray
        Population of ``|0>`` right after the corresponding jump.
    """
    psi = np.array([0, 1], dtype=np.complex128) if initial_state is None else np.asarray(initial_state, dtype=np.complex128)
    times, pops = [], []
    for event in jump_events(params):
        psi = jump_matrix(event, params.v) @ psi
        times.append(event.time)
        pops.append(abs(psi[0]) ** 2)
    return np.array(times), np.array(pops)


def multi_jump_unitary(params):
    """Chronologically ordered product of all jump matrices (earliest rightmost)."""
    u = np.eye(2, dtype=np.complex128)
    for event in jump_events(params):
        u = jump_matrix(event, params.v) @ u
    return u


@dataclass(frozen=True)
class DiabaticDesign:
    """A windowed oscillation pulse built to leave ``|1>`` untouched."""

    pulse: LinearOscillating
    T: float
    Ts: float
    constraints: dict

    @property
    def half_extent(self):
        return 0.5 * (self.T + self.Ts)


def design_diabatic_pulse(v, omega, Ts, delta=1.0):
    """Windowed sweep that suppresses the ``m = 0`` jump and cancels ``m = +-1``.

    The amplitude sits on the first zero of ``J_0`` (``lam_r = 2.4048 omega``),
    ``phi = 0`` and ``T = 3 omega / v``, the centre of the feasible interval
    ``2 omega/v + Ts < T < 4 omega/v - Ts``.  The flat top then spans both
    ``m = +-1`` jumps while the ramps end before the ``|m| = 2`` resonances.

    Raises
    ------
    DesignError
        If ``Ts >= omega / v`` (the interval above is empty).
    """
    if not (v > 0 and omega > 0 and Ts > 0):
        raise DesignError("v, omega and Ts must all be > 0")
    T = 3.0 * omega / v
    flat = 0.5 * (T - Ts)
    reach = 0.5 * (T + Ts)
    constraints = {
        "flat_top_covers_first_jumps": (flat, omega / v, flat > omega / v),
        "ramp_ends_before_second_jumps": (reach, 2 * omega / v, reach < 2 * omega / v),
    }
    for name, (lhs, rhs, ok) in constraints.items():
        if not ok:
            raise DesignError(
                f"constraint {name} violated ({lhs:.6g} vs {rhs:.6g}); need Ts < omega/v = {omega / v:.6g}"
            )
    # informational only: the cancellation argument assumes isolated jumps
    constraints["gap_small_against_omega"] = (delta, omega / 10, delta <= omega / 10)
    pulse = LinearOscillating(v=v, lambda_r=J0_ZERO * omega, omega=omega, phi=0.0, window=Window(T, Ts))
    return DiabaticDesign(pulse=pulse, T=T, Ts=Ts, constraints=constraints)
