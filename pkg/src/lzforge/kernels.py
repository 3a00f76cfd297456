"""Hot loops for piecewise-constant 2x2 propagation.

Every step propagator has the closed form

    exp(-i (eps sz + delta sx) dt / 2) = cos(th) 1 - i sin(th) (n . sigma),

with ``th = dt * sqrt(eps**2 + delta**2) / 2``.  The kernels below multiply
long chains of these (time-ordered, later steps on the left) and evaluate
the exact GRAPE gradient of the gate overlap ``|Tr(W^dag U)|^2 / 4``.

Each kernel exists twice: a numba version (``*_numba``) with explicit scalar
loops and a numpy version (``*_numpy``) built on vectorised step matrices
and a log-depth prefix scan.  The public names (``chain``, ``overlap_grad``)
are bound to whichever backend :mod:`lzforge._backend` selected.
"""

import numpy as np

from ._backend import BACKEND, njit

_CHUNK = 1 << 16


@njit(cache=True, nogil=True)
def _step_entries(eps, delta, dt):
    radius = 0.5 * np.sqrt(eps * eps + delta * delta)
    theta = radius * dt
    c = np.cos(theta)
    s = np.sin(theta)
    if radius > 0.0:
        nz = 0.5 * eps / radius
        nx = 0.5 * delta / radius
    else:
        nz = 0.0
        nx = 0.0
    return complex(c, -s * nz), complex(0.0, -s * nx), complex(c, s * nz)


@njit(cache=True, nogil=True)
def _step_derivative(eps, delta, dt):
    # d/d(eps) of the step propagator, entries (00, 01 == 10, 11)
    norm2 = eps * eps + delta * delta
    if norm2 == 0.0:
        return complex(0.0, -0.5 * dt), 0j, complex(0.0, 0.5 * dt)
    norm = np.sqrt(norm2)
    theta = 0.5 * norm * dt
    c = np.cos(theta)
    s = np.sin(theta)
    dtheta = 0.5 * dt * eps / norm
    nz = eps / norm
    nx = delta / norm
    dnz = delta * delta / (norm2 * norm)
    dnx = -eps * delta / (norm2 * norm)
    z = c * dtheta * nz + s * dnz
    x = c * dtheta * nx + s * dnx
    return complex(-s * dtheta, -z), complex(0.0, -x), complex(-s * dtheta, z)


@njit(cache=True, nogil=True)
def chain_numba(eps, delta, dt, sample_idx):
    """Ordered product of step propagators.

    Returns the full product and the partial products after
    ``sample_idx[j]`` steps (``sample_idx`` sorted, values in ``[0, n]``).
    """
    n = eps.shape[0]
    m = sample_idx.shape[0]
    samples = np.empty((m, 2, 2), dtype=np.complex128)
    p00 = 1.0 + 0j
    p01 = 0j
    p10 = 0j
    p11 = 1.0 + 0j
    j = 0
    while j < m and sample_idx[j] == 0:
        samples[j, 0, 0] = p00
        samples[j, 0, 1] = p01
        samples[j, 1, 0] = p10
        samples[j, 1, 1] = p11
        j += 1
    for k in range(n):
        a, b, d = _step_entries(eps[k], delta, dt)
        q00 = a * p00 + b * p10
        q01 = a * p01 + b * p11
        q10 = b * p00 + d * p10
        q11 = b * p01 + d * p11
        p00, p01, p10, p11 = q00, q01, q10, q11
        while j < m and sample_idx[j] == k + 1:
            samples[j, 0, 0] = p00
            samples[j, 0, 1] = p01
            samples[j, 1, 0] = p10
            samples[j, 1, 1] = p11
            j += 1
    total = np.empty((2, 2), dtype=np.complex128)
    total[0, 0] = p00
    total[0, 1] = p01
    total[1, 0] = p10
    total[1, 1] = p11
    return total, samples


@njit(cache=True, nogil=True)
def overlap_grad_numba(eps, delta, dt, target):
    """Gate overlap ``|Tr(W^dag U)|^2 / 4`` and its exact gradient."""
    n = eps.shape[0]
    steps = np.empty((n, 3), dtype=np.complex128)
    derivs = np.empty((n, 3), dtype=np.complex128)
    # forward[k] = U_{k-1} ... U_0
    forward = np.empty((n + 1, 4), dtype=np.complex128)
    p00 = 1.0 + 0j
    p01 = 0j
    p10 = 0j
    p11 = 1.0 + 0j
    forward[0, 0] = p00
    forward[0, 1] = p01
    forward[0, 2] = p10
    forward[0, 3] = p11
    for k in range(n):
        a, b, d = _step_entries(eps[k], delta, dt)
        steps[k, 0] = a
        steps[k, 1] = b
        steps[k, 2] = d
        da, db, dd = _step_derivative(eps[k], delta, dt)
        derivs[k, 0] = da
        derivs[k, 1] = db
        derivs[k, 2] = dd
        q00 = a * p00 + b * p10
        q01 = a * p01 + b * p11
        q10 = b * p00 + d * p10
        q11 = b * p01 + d * p11
        p00, p01, p10, p11 = q00, q01, q10, q11
        forward[k + 1, 0] = p00
        forward[k + 1, 1] = p01
        forward[k + 1, 2] = p10
        forward[k + 1, 3] = p11
    # back = W^dag U_{n-1} ... U_{k+1}, built right-to-left
    b00 = np.conj(target[0, 0])
    b01 = np.conj(target[1, 0])
    b10 = np.conj(target[0, 1])
    b11 = np.conj(target[1, 1])
    overlap = b00 * p00 + b01 * p10 + b10 * p01 + b11 * p11
    grad = np.empty(n, dtype=np.float64)
    for k in range(n - 1, -1, -1):
        da = derivs[k, 0]
        db = derivs[k, 1]
        dd = derivs[k, 2]
        f00 = forward[k, 0]
        f01 = forward[k, 1]
        f10 = forward[k, 2]
        f11 = forward[k, 3]
        # Tr(back @ dU @ forward)
        m00 = da * f00 + db * f10
        m01 = da * f01 + db * f11
        m10 = db * f00 + dd * f10
        m11 = db * f01 + dd * f11
        dg = b00 * m00 + b01 * m10 + b10 * m01 + b11 * m11
        grad[k] = 0.5 * (np.conj(overlap) * dg).real
        a = steps[k, 0]
        b = steps[k, 1]
        d = steps[k, 2]
        c00 = b00 * a + b01 * b
        c01 = b00 * b + b01 * d
        c10 = b10 * a + b11 * b
        c11 = b10 * b + b11 * d
        b00, b01, b10, b11 = c00, c01, c10, c11
    fidelity = 0.25 * (overlap.real**2 + overlap.imag**2)
    return fidelity, grad


def step_matrices(eps, delta, dt):
    """Stack of step propagators, shape ``(n, 2, 2)``."""
    eps = np.asarray(eps, dtype=np.float64)
    norm = np.hypot(eps, delta)
    theta = 0.5 * norm * dt
    c = np.cos(theta)
    s = np.sin(theta)
    safe = np.where(norm > 0.0, norm, 1.0)
    nz = np.where(norm > 0.0, eps / safe, 0.0)
    nx = np.where(norm > 0.0, delta / safe, 0.0)
    out = np.empty(eps.shape + (2, 2), dtype=np.complex128)
    out[..., 0, 0] = c - 1j * s * nz
    out[..., 1, 1] = c + 1j * s * nz
    out[..., 0, 1] = -1j * s * nx
    out[..., 1, 0] = out[..., 0, 1]
    return out


def step_derivatives(eps, delta, dt):
    """Stack of d(step)/d(eps), shape ``(n, 2, 2)``."""
    eps = np.asarray(eps, dtype=np.float64)
    norm2 = eps * eps + delta * delta
    zero = norm2 == 0.0
    norm = np.sqrt(np.where(zero, 1.0, norm2))
    theta = 0.5 * norm * dt
    c = np.cos(theta)
    s = np.sin(theta)
    dtheta = 0.5 * dt * eps / norm
    z = c * dtheta * eps / norm + s * delta * delta / (norm2 * norm + zero)
    x = c * dtheta * delta / norm - s * eps * delta / (norm2 * norm + zero)
    z = np.where(zero, 0.5 * dt, z)
    x = np.where(zero, 0.0, x)
    diag = np.where(zero, 0.0, -s * dtheta)
    out = np.empty(eps.shape + (2, 2), dtype=np.complex128)
    out[..., 0, 0] = diag - 1j * z
    out[..., 1, 1] = diag + 1j * z
    out[..., 0, 1] = -1j * x
    out[..., 1, 0] = out[..., 0, 1]
    return out


def _prefix_scan(mats):
    # out[k] = mats[k] @ ... @ mats[0]   (Hillis-Steele, log2(n) passes)
    out = mats.copy()
    shift = 1
    while shift < out.shape[0]:
        out[shift:] = out[shift:] @ out[:-shift]
        shift *= 2
    return out


def _suffix_scan(mats):
    # out[k] = mats[n-1] @ ... @ mats[k]
    out = mats[::-1].copy()
    shift = 1
    while shift < out.shape[0]:
        out[shift:] = out[:-shift] @ out[shift:]
        shift *= 2
    return out[::-1]


def chain_numpy(eps, delta, dt, sample_idx):
    """Numpy twin of :func:`chain_numba` (chunked prefix scans)."""
    eps = np.asarray(eps, dtype=np.float64)
    sample_idx = np.asarray(sample_idx, dtype=np.int64)
    n = eps.shape[0]
    samples = np.empty((sample_idx.shape[0], 2, 2), dtype=np.complex128)
    carry = np.eye(2, dtype=np.complex128)
    samples[sample_idx == 0] = carry
    for start in range(0, n, _CHUNK):
        stop = min(start + _CHUNK, n)
        partial = _prefix_scan(step_matrices(eps[start:stop], delta, dt)) @ carry
        pick = (sample_idx > start) & (sample_idx <= stop)
        if np.any(pick):
            samples[pick] = partial[sample_idx[pick] - start - 1]
        carry = partial[-1]
    return carry.copy(), samples


def overlap_grad_numpy(eps, delta, dt, target):
    """Numpy twin of :func:`overlap_grad_numba`."""
    eps = np.asarray(eps, dtype=np.float64)
    n = eps.shape[0]
    steps = step_matrices(eps, delta, dt)
    derivs = step_derivatives(eps, delta, dt)
    eye = np.eye(2, dtype=np.complex128)
    prefix = _prefix_scan(steps)
    forward = np.concatenate([eye[None], prefix[:-1]])
    back = np.concatenate([_suffix_scan(steps)[1:], eye[None]])
    back = np.conj(target).T[None] @ back
    overlap = np.trace(np.conj(target).T @ prefix[-1])
    dg = np.einsum("kij,kjl,kli->k", back, derivs, forward)
    grad = 0.5 * (np.conj(overlap) * dg).real
    return 0.25 * abs(overlap) ** 2, grad


if BACKEND == "numba":
    chain = chain_numba
    overlap_grad = overlap_grad_numba
else:
    chain = chain_numpy
    overlap_grad = overlap_grad_numpy

__all__ = [
    "BACKEND",
    "chain",
    "chain_numba",
    "chain_numpy",
    "overlap_grad",
    "overlap_grad_numba",
    "overlap_grad_numpy",
    "step_derivatives",
    "step_matrices",
]
