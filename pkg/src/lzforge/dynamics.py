"""Two-level system at an avoided crossing: pulses, propagation, fidelities.

Conventions
-----------
``H(t) = eps(t) sz / 2 + delta sx / 2`` with hbar = 1, so energies are
angular frequencies.  Basis state ``|0>`` is the upper sz eigenstate.
Unitaries are plain ``(2, 2)`` complex arrays; the initial state of every
trajectory is ``|1>`` unless another one is given.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy.special import erf

from . import kernels
from .errors import DomainError, NumericError

SIGMA_0 = np.eye(2, dtype=np.complex128)
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=np.complex128)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=np.complex128)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=np.complex128)
HADAMARD = np.array([[1, 1], [1, -1]], dtype=np.complex128) / np.sqrt(2)

KET_0 = np.array([1, 0], dtype=np.complex128)
KET_1 = np.array([0, 1], dtype=np.complex128)

#: default bound on the phase accumulated per propagation step (radians)
MAX_PHASE_STEP = 0.05
#: default number of trajectory samples
TRAJECTORY_SAMPLES = 2000


@dataclass(frozen=True)
class TwoLevelSystem:
    """Static part of the Hamiltonian: the tunnel splitting ``delta``.

    ``delta = 0`` is accepted so that the uncoupled limit can be
    simulated directly.
    """

    delta: float = 1.0

    def __post_init__(self):
        if not math.isfinite(self.delta) or self.delta < 0:
            raise DomainError(f"delta must be finite and >= 0, got {self.delta}")

    def hamiltonian(self, eps):
        return 0.5 * (eps * SIGMA_Z + self.delta * SIGMA_X)


# --------------------------------------------------------------------------
# pulse waveforms
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Window:
    """Flat-top envelope with linear ramps for the oscillation amplitude.

    The amplitude is constant for ``|t| < (T - Ts)/2``, falls linearly to
    zero at ``|t| = (T + Ts)/2`` and vanishes beyond.
    """

    T: float
    Ts: float

    def __post_init__(self):
        if not self.Ts > 0:
            raise DomainError(f"switching time Ts must be > 0, got {self.Ts}")
        if not self.T > self.Ts:
            raise DomainError(f"window needs T > Ts, got T={self.T}, Ts={self.Ts}")

    @property
    def half_extent(self):
        return 0.5 * (self.T + self.Ts)

    def envelope(self, t, peak):
        a = np.abs(np.asarray(t, dtype=np.float64))
        inner = 0.5 * (self.T - self.Ts)
        outer = 0.5 * (self.T + self.Ts)
        ramp = peak / self.Ts * (outer - a)
        return np.where(a < inner, peak, np.where(a <= outer, ramp, 0.0))


@dataclass(frozen=True)
class LinearOscillating:
    """Linear sweep plus a cosine: ``v t + lambda(t) cos(omega t + phi)``.

    Without a window ``lambda(t) = lambda_r`` at all times.
    """

    v: float
    lambda_r: float
    omega: float
    phi: float = 0.0
    window: Optional[Window] = None

    def __call__(self, t):
        t = np.asarray(t, dtype=np.float64)
        amp = self.lambda_r if self.window is None else self.window.envelope(t, self.lambda_r)
        return self.v * t + amp * np.cos(self.omega * t + self.phi)

    def max_abs(self, t_start, t_end):
        return abs(self.v) * max(abs(t_start), abs(t_end)) + abs(self.lambda_r)

    @property
    def max_frequency(self):
        return abs(self.omega)

    def with_phase(self, phi):
        return LinearOscillating(self.v, self.lambda_r, self.omega, phi, self.window)


@dataclass(frozen=True)
class ErfTan:
    """Adiabatic seed pulse sweeping from ``+eps0`` to ``-eps0``.

    ``eps(t) = -delta tan[(arctan(delta/eps0) - pi/2) / erf(-lambda_erf T/2)
    * erf(lambda_erf t)]`` on ``|t| <= T/2``; ``lambda_erf`` sets the sweep
    speed at the crossing.
    """

    eps0: float
    lambda_erf: float
    T: float
    delta: float

    def __post_init__(self):
        if not (self.eps0 > 0 and self.lambda_erf > 0 and self.T > 0 and self.delta > 0):
            raise DomainError("ErfTan needs eps0, lambda_erf, T and delta all > 0")

    def __call__(self, t):
        t = np.asarray(t, dtype=np.float64)
        half = 0.5 * self.T
        if np.any(np.abs(t) > half * (1 + 1e-12)):
            raise DomainError(f"ErfTan is defined on |t| <= {half}")
        scale = (math.atan(self.delta / self.eps0) - 0.5 * math.pi) / erf(-self.lambda_erf * half)
        return -self.delta * np.tan(scale * erf(self.lambda_erf * t))

    def max_abs(self, t_start, t_end):
        return self.eps0

    max_frequency = 0.0


@dataclass(frozen=True)
class Pixelated:
    """Piecewise-constant pulse: pixel ``k`` covers ``[t_start + k dt, t_start + (k+1) dt)``."""

    values: np.ndarray = field(compare=False)
    dt: float
    t_start: float = 0.0

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64).ravel()
        if values.size < 1:
            raise DomainError("a pixelated pulse needs at least one pixel")
        if not self.dt > 0:
            raise DomainError(f"pixel duration must be > 0, got {self.dt}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n(self):
        return self.values.size

    @property
    def duration(self):
        return self.n * self.dt

    @property
    def t_end(self):
        return self.t_start + self.duration

    def times(self):
        """Pixel midpoints."""
        return self.t_start + (np.arange(self.n) + 0.5) * self.dt

    def __call__(self, t):
        t = np.asarray(t, dtype=np.float64)
        idx = np.floor((t - self.t_start) / self.dt).astype(np.int64)
        if np.any((idx < 0) | (idx >= self.n)):
            raise DomainError(
                f"pixelated pulse is defined on [{self.t_start}, {self.t_end})"
            )
        return self.values[idx]

    def max_abs(self, t_start, t_end):
        return float(np.max(np.abs(self.values)))

    max_frequency = 0.0

    def replace(self, values):
        return Pixelated(values, self.dt, self.t_start)

    def __eq__(self, other):
        return (
            isinstance(other, Pixelated)
            and self.dt == other.dt
            and self.t_start == other.t_start
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None


PulseWaveform = Union[LinearOscillating, ErfTan, Pixelated]


def evaluate_pulse(pulse, t):
    """Evaluate ``eps(t)``; ``t`` may be a scalar or an array."""
    out = pulse(t)
    return float(out) if np.ndim(out) == 0 else out


# --------------------------------------------------------------------------
# propagation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Trajectory:
    """States sampled along a propagation (initial state included)."""

    times: np.ndarray
    states: np.ndarray

    @property
    def populations(self):
        """Population of ``|0>`` at each sample."""
        return np.abs(self.states[:, 0]) ** 2

    @property
    def populations_1(self):
        return np.abs(self.states[:, 1]) ** 2

    def population_at(self, t):
        """Population of ``|0>`` at the sample closest to ``t``."""
        k = int(np.argmin(np.abs(self.times - t)))
        return float(self.populations[k])


def default_steps(system, pulse, t_start, t_end, max_phase_step=MAX_PHASE_STEP):
    """Step count so that ``dt * max(|eps|, omega, delta) <= max_phase_step``."""
    rate = max(pulse.max_abs(t_start, t_end), pulse.max_frequency, system.delta, 1e-300)
    if not math.isfinite(rate):
        raise NumericError("pulse amplitude is not finite")
    return max(1, int(math.ceil((t_end - t_start) * rate / max_phase_step)))


def _step_grid(pulse, t_start, t_end, steps):
    if isinstance(pulse, Pixelated):
        # align with pixel edges so that every step sees a single pixel value
        if not (
            math.isclose(t_start, pulse.t_start, abs_tol=1e-12 * pulse.duration)
            and math.isclose(t_end, pulse.t_end, abs_tol=1e-12 * pulse.duration)
        ):
            raise DomainError("pixelated pulses propagate over their full support")
        sub = max(1, -(-steps // pulse.n))
        return np.repeat(pulse.values, sub), pulse.dt / sub
    dt = (t_end - t_start) / steps
    mid = t_start + (np.arange(steps) + 0.5) * dt
    return np.asarray(pulse(mid), dtype=np.float64), dt


def propagate(
    system,
    pulse,
    t_start,
    t_end,
    steps=None,
    *,
    initial_state=None,
    samples=TRAJECTORY_SAMPLES,
    max_phase_step=MAX_PHASE_STEP,
):
    """Time-ordered propagator from ``t_start`` to ``t_end``.

    Parameters
    ----------
    system : TwoLevelSystem
    pulse : PulseWaveform
    t_start, t_end : float
        Propagation window.
    steps : int, optional
        Number of midpoint steps.  Defaults to :func:`default_steps`.
        Pixelated pulses are always propagated exactly, one or more steps
        per pixel.
    initial_state : array_like, optional
        Initial state for the trajectory, ``|1>`` by default.
    samples : int
        Number of evenly spaced trajectory samples (clipped to ``steps + 1``).

    Returns
    -------
    u : ndarray, shape (2, 2)
    trajectory : Trajectory
    """
    if not t_end > t_start:
        raise DomainError(f"need t_end > t_start, got [{t_start}, {t_end}]")
    if steps is None:
        steps = default_steps(system, pulse, t_start, t_end, max_phase_step)
    if steps < 1:
        raise DomainError("steps must be >= 1")
    eps, dt = _step_grid(pulse, t_start, t_end, int(steps))
    if not np.all(np.isfinite(eps)):
        raise NumericError("pulse produced non-finite values")
    n = eps.size
    count = max(2, min(int(samples), n + 1))
    idx = np.unique(np.rint(np.linspace(0, n, count)).astype(np.int64))
    u, partial = kernels.chain(eps, float(system.delta), dt, idx)
    psi0 = KET_1 if initial_state is None else np.asarray(initial_state, dtype=np.complex128)
    psi0 = psi0 / np.linalg.norm(psi0)
    states = partial @ psi0
    return u, Trajectory(times=t_start + idx * dt, states=states)


def propagator(system, pulse, t_start, t_end, steps=None, *, max_phase_step=MAX_PHASE_STEP):
    """Just the unitary of :func:`propagate` (no trajectory bookkeeping)."""
    if not t_end > t_start:
        raise DomainError(f"need t_end > t_start, got [{t_start}, {t_end}]")
    if steps is None:
        steps = default_steps(system, pulse, t_start, t_end, max_phase_step)
    if steps < 1:
        raise DomainError("steps must be >= 1")
    eps, dt = _step_grid(pulse, t_start, t_end, int(steps))
    if not np.all(np.isfinite(eps)):
        raise NumericError("pulse produced non-finite values")
    u, _ = kernels.chain(eps, float(system.delta), dt, np.zeros(0, dtype=np.int64))
    return u


def eigenframe_rotation(delta, eps):
    """Real rotation whose columns are the eigenvectors of ``H(eps)``.

    Column ``k`` is the eigenvector that tends to ``|k>`` as
    ``delta / |eps| -> 0``, for either sign of ``eps``.
    """
    angle = math.atan2(delta, eps)
    if angle > 0.5 * math.pi:
        angle -= math.pi
    c, s = math.cos(0.5 * angle), math.sin(0.5 * angle)
    return np.array([[c, -s], [s, c]], dtype=np.complex128)


def to_eigenframe(u, system, eps_start, eps_end):
    """Express ``u`` between instantaneous eigenbases at the window edges.

    A finite propagation window switches the coupling on and off abruptly,
    which leaves fringes of relative size ``delta / |eps|`` in bare-state
    populations.  Reading the final state in the instantaneous eigenbasis
    (labelled by the bare state it connects to) removes them, so the result
    is the finite-window estimate of the asymptotic transition matrix.
    """
    r0 = eigenframe_rotation(system.delta, eps_start)
    r1 = eigenframe_rotation(system.delta, eps_end)
    return r1.T @ u @ r0


def is_unitary(u, tol=1e-10):
    u = np.asarray(u)
    return bool(np.max(np.abs(u.conj().T @ u - SIGMA_0)) < tol)


# --------------------------------------------------------------------------
# figures of merit
# --------------------------------------------------------------------------


def lz_probability(delta, v):
    """Landau-Zener transition probability ``1 - exp(-pi delta^2 / 2v)``."""
    if not v > 0:
        raise DomainError(f"sweep rate must be > 0, got {v}")
    if delta < 0:
        raise DomainError(f"delta must be >= 0, got {delta}")
    return -math.expm1(-math.pi * delta * delta / (2.0 * v))


def gate_fidelity(u, target=SIGMA_0):
    """``|Tr(target^dag u)|^2 / 4``; blind to the global phase of ``u``."""
    overlap = np.trace(np.conj(np.asarray(target)).T @ np.asarray(u))
    return float(abs(overlap) ** 2 / 4.0)


def phase_insensitive_fidelity(u):
    """Mean population transfer ``(|u01|^2 + |u10|^2) / 2``."""
    return float(0.5 * (abs(u[0, 1]) ** 2 + abs(u[1, 0]) ** 2))


def survival_error(u):
    """Population leaked from ``|1>`` into ``|0>``: ``|<0|U|1>|^2``."""
    return float(abs(u[0, 1]) ** 2)


# --------------------------------------------------------------------------
# pixel pulses
# --------------------------------------------------------------------------


def pixelate(pulse, n, t_start, t_end):
    """Sample ``pulse`` at the midpoints of ``n`` equal slices of ``[t_start, t_end]``."""
    if n < 1:
        raise DomainError("pixel count must be >= 1")
    if not t_end > t_start:
        raise DomainError(f"need t_end > t_start, got [{t_start}, {t_end}]")
    dt = (t_end - t_start) / n
    mid = t_start + (np.arange(n) + 0.5) * dt
    return Pixelated(np.asarray(pulse(mid), dtype=np.float64), dt, t_start)


def gaussian_kernel(sigma_px):
    half = int(math.ceil(4.0 * sigma_px))
    offsets = np.arange(-half, half + 1)
    kernel = np.exp(-0.5 * (offsets / sigma_px) ** 2)
    return kernel / kernel.sum()


def smooth_values(values, sigma_px):
    """Convolve with a Gaussian of width ``sigma_px`` pixels (truncated at 4 sigma).

    Near the ends the kernel is renormalised over the in-range samples, so
    constant arrays are fixed points.
    """
    values = np.asarray(values, dtype=np.float64)
    if sigma_px <= 0:
        raise DomainError(f"sigma must be > 0, got {sigma_px}")
    kernel = gaussian_kernel(sigma_px)
    lo = kernel.size // 2
    # 'full' then crop: 'same' misbehaves when the kernel outgrows the data
    num = np.convolve(values, kernel, mode="full")[lo : lo + values.size]
    den = np.convolve(np.ones_like(values), kernel, mode="full")[lo : lo + values.size]
    return num / den


def gaussian_smooth(pulse, sigma):
    """Gaussian-smoothed copy of a pixelated pulse (``sigma`` in time units)."""
    if not sigma > 0:
        raise DomainError(f"sigma must be > 0, got {sigma}")
    return pulse.replace(smooth_values(pulse.values, sigma / pulse.dt))
