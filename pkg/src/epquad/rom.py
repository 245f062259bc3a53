"""POD reduction, reduced-model integration and energy diagnostics."""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .burgers2d import rk4_step
from .errors import DimensionError, UnstableModelError
from .quadop import apply_quad

__all__ = [
    "PodBasis",
    "EnergyTrace",
    "pod_reduce",
    "integrate_rom",
    "energy_trace",
    "reprojection",
]


@dataclass(frozen=True)
class PodBasis:
    V: np.ndarray
    singular_values: np.ndarray

    @property
    def r(self):
        return self.V.shape[1]


def pod_reduce(X, r, Xdot=None):
    """Leading ``r`` left singular vectors of the (uncentered) snapshot matrix.

    Each basis vector is signed so that its largest-magnitude entry is
    positive. Returns ``(basis, Xhat, Xdot_hat)``; ``Xdot_hat`` is None when
    no derivatives are given.
    """
    X = np.asarray(X, dtype=float)
    n, m = X.shape
    if not 1 <= r <= min(n, m):
        raise ValueError(f"r = {r} outside 1..min(n, m) = {min(n, m)}")
    U, s, _ = np.linalg.svd(X, full_matrices=False)
    rank = int(np.sum(s > s[0] * max(n, m) * np.finfo(float).eps)) if s[0] > 0 else 0
    if rank < r:
        warnings.warn(f"snapshot rank {rank} is below r = {r}; trailing modes "
                      "carry no snapshot energy", RuntimeWarning, stacklevel=2)
    V = U[:, :r].copy()
    pivot = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[pivot, np.arange(r)])
    signs[signs == 0] = 1.0
    V *= signs
    Xhat = V.T @ X
    Xdot_hat = None if Xdot is None else V.T @ np.asarray(Xdot, dtype=float)
    return PodBasis(V=V, singular_values=s[:r].copy()), Xhat, Xdot_hat


def reprojection(basis, X):
    """``V V^T X``."""
    V = basis.V if isinstance(basis, PodBasis) else np.asarray(basis)
    return V @ (V.T @ X)


def integrate_rom(model, x0_hat, dt, T, inputs=None, divergence_factor=1e6):
    """RK4 trajectory of the reduced model at ``t = 0, dt, ..., T``.

    Parameters
    ----------
    inputs : callable, optional
        ``u(t)`` for models with an input operator.
    divergence_factor : float
        The run counts as diverged once ``|x| > divergence_factor * max(1, |x0|)``.

    Returns
    -------
    times : (m,) ndarray
    Xhat : (r, m) ndarray

    Raises
    ------
    UnstableModelError
        On a non-finite or diverging state, carrying the failure time.
    """
    x = np.asarray(x0_hat, dtype=float).copy()
    if x.shape != (model.r,):
        raise DimensionError(f"initial state has shape {x.shape}, expected ({model.r},)")
    if not np.all(np.isfinite(x)):
        raise ValueError("initial state is not finite")
    steps = int(round(T / dt))
    times = np.arange(steps + 1) * dt
    out = np.empty((model.r, steps + 1))
    out[:, 0] = x
    limit = divergence_factor * max(1.0, np.linalg.norm(x))
    t = 0.0
    with np.errstate(over="ignore", invalid="ignore"):
        for s in range(1, steps + 1):
            if inputs is None:
                x = rk4_step(model.rhs, x, dt)
            else:
                x = _rk4_timed(model, inputs, x, t, dt)
            t = times[s]
            if not np.all(np.isfinite(x)) or np.linalg.norm(x) > limit:
                raise UnstableModelError(t, f"reduced model diverged at t = {t:.4g}")
            out[:, s] = x
    return times, out


def _rk4_timed(model, inputs, x, t, dt):
    k1 = model.rhs(x, inputs(t))
    k2 = model.rhs(x + 0.5 * dt * k1, inputs(t + 0.5 * dt))
    k3 = model.rhs(x + 0.5 * dt * k2, inputs(t + 0.5 * dt))
    k4 = model.rhs(x + dt * k3, inputs(t + dt))
    return x + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


@dataclass(frozen=True)
class EnergyTrace:
    """Contributions of each model term to ``d/dt (|x|^2 / 2)``.

    ``linear`` is ``x^T A x`` and ``quadratic`` is ``x^T H (x kron x)``; the
    ``cumulative_*`` arrays are their trapezoidal time integrals from 0.
    """

    times: np.ndarray
    linear: np.ndarray
    quadratic: np.ndarray
    constant: np.ndarray
    input: np.ndarray
    cumulative_linear: np.ndarray
    cumulative_quadratic: np.ndarray
    energy: np.ndarray

    @property
    def total(self):
        return self.linear + self.quadratic + self.constant + self.input


def energy_trace(model, times, Xhat, U=None):
    Xhat = np.asarray(Xhat, dtype=float)
    times = np.asarray(times, dtype=float)
    lin = np.einsum("is,ij,js->s", Xhat, model.A_hat, Xhat)
    quad = np.einsum("is,is->s", Xhat, apply_quad(model.H_hat, Xhat))
    const = model.c_hat @ Xhat
    if U is not None and model.B_hat.shape[1]:
        inp = np.einsum("is,is->s", Xhat, model.B_hat @ U)
    else:
        inp = np.zeros_like(lin)
    if len(times) > 1:
        cum_lin = cumulative_trapezoid(lin, times, initial=0.0)
        cum_quad = cumulative_trapezoid(quad, times, initial=0.0)
    else:
        cum_lin = np.zeros_like(lin)
        cum_quad = np.zeros_like(quad)
    return EnergyTrace(times=times, linear=lin, quadratic=quad, constant=const,
                       input=inp, cumulative_linear=cum_lin,
                       cumulative_quadratic=cum_quad,
                       energy=0.5 * np.sum(Xhat ** 2, axis=0))
