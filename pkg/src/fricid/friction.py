"""Benchmark friction models: Coulomb+viscous, Stribeck, LuGre and GMS.

Parameters are per joint; every field broadcasts against the trailing joint
axis of the velocity array.  ``sign(0) = 0`` throughout.

The Stribeck curve uses the exponential form

    tau(v) = [Fc + (Fs - Fc) exp(-|v / vs|^delta)] sign(v) + Fv v

and LuGre/GMS reuse its magnitude part ``g(v) = Fc + (Fs - Fc) exp(...)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, ParameterError


def _arr(x):
    return np.atleast_1d(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class SimpleFrictionParams:
    coulomb: np.ndarray
    viscous: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coulomb", _arr(self.coulomb))
        object.__setattr__(self, "viscous", _arr(self.viscous))
        if np.any(self.coulomb < 0) or np.any(self.viscous < 0):
            raise ParameterError("Coulomb and viscous coefficients must be non-negative")


@dataclass(frozen=True)
class StribeckParams:
    fc: np.ndarray
    fs: np.ndarray
    vs: np.ndarray
    fv: np.ndarray
    delta: np.ndarray = 2.0

    def __post_init__(self):
        for name in ("fc", "fs", "vs", "fv", "delta"):
            object.__setattr__(self, name, _arr(getattr(self, name)))
        if np.any(self.fc < 0) or np.any(self.fs < self.fc):
            raise ParameterError("Stribeck levels need Fs >= Fc >= 0")
        if np.any(self.vs <= 0) or np.any(self.delta <= 0) or np.any(self.fv < 0):
            raise ParameterError("Stribeck velocity and exponent must be positive, Fv >= 0")

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.fc, self.fs, self.vs, self.delta, self.fv])

    @classmethod
    def from_vector(cls, vec, n_joints=1):
        v = np.asarray(vec, dtype=float).reshape(5, n_joints)
        return cls(fc=v[0], fs=v[1], vs=v[2], delta=v[3], fv=v[4])


@dataclass(frozen=True)
class LuGreParams:
    """Bristle model; ``g(v)`` comes from the Stribeck magnitude, ``sigma2`` is viscous."""

    sigma0: np.ndarray
    sigma1: np.ndarray
    sigma2: np.ndarray
    fc: np.ndarray
    fs: np.ndarray
    vs: np.ndarray
    delta: np.ndarray = 2.0

    def __post_init__(self):
        for name in ("sigma0", "sigma1", "sigma2", "fc", "fs", "vs", "delta"):
            object.__setattr__(self, name, _arr(getattr(self, name)))
        if np.any(self.sigma0 <= 0) or np.any(self.sigma1 < 0) or np.any(self.sigma2 < 0):
            raise ParameterError("LuGre needs sigma0 > 0 and sigma1, sigma2 >= 0")

    @property
    def stribeck(self) -> StribeckParams:
        return StribeckParams(fc=self.fc, fs=self.fs, vs=self.vs, fv=self.sigma2, delta=self.delta)


@dataclass(frozen=True)
class GMSParams:
    """Generalized Maxwell-slip elements sharing one Stribeck curve.

    ``stiffness`` and ``weights`` have shape ``(n_elements,)`` or
    ``(n_joints, n_elements)``; weights are normalized to sum to one.
    """

    stiffness: np.ndarray
    weights: np.ndarray
    attraction: np.ndarray
    sigma2: np.ndarray
    fc: np.ndarray
    fs: np.ndarray
    vs: np.ndarray
    delta: np.ndarray = 2.0

    def __post_init__(self):
        k = np.atleast_2d(np.asarray(self.stiffness, dtype=float))
        a = np.atleast_2d(np.asarray(self.weights, dtype=float))
        if k.shape != a.shape:
            raise ParameterError("stiffness and weights must have matching shapes")
        if np.any(k <= 0) or np.any(a <= 0):
            raise ParameterError("GMS stiffness and weights must be positive")
        object.__setattr__(self, "stiffness", k)
        object.__setattr__(self, "weights", a / a.sum(axis=-1, keepdims=True))
        for name in ("attraction", "sigma2", "fc", "fs", "vs", "delta"):
            object.__setattr__(self, name, _arr(getattr(self, name)))
        if np.any(self.attraction <= 0):
            raise ParameterError("GMS attraction parameter must be positive")

    @property
    def n_elements(self) -> int:
        return self.stiffness.shape[-1]

    @property
    def stribeck(self) -> StribeckParams:
        return StribeckParams(fc=self.fc, fs=self.fs, vs=self.vs, fv=self.sigma2, delta=self.delta)


@dataclass
class GMSState:
    """Element deflections and slip directions (0 = sticking, +-1 = slipping)."""

    z: np.ndarray
    slip: np.ndarray = field(default=None)

    def __post_init__(self):
        self.z = np.atleast_2d(np.asarray(self.z, dtype=float))
        if self.slip is None:
            self.slip = np.zeros(self.z.shape, dtype=np.int8)
        self.slip = np.asarray(self.slip, dtype=np.int8)

    @classmethod
    def rest(cls, params: GMSParams, n_joints=1):
        return cls(np.zeros((n_joints, params.n_elements)))

    @property
    def sticking(self) -> np.ndarray:
        return self.slip == 0

    @property
    def slipping(self) -> np.ndarray:
        return self.slip != 0

    def copy(self):
        return GMSState(self.z.copy(), self.slip.copy())


def simple_torque(qd, params: SimpleFrictionParams):
    qd = np.asarray(qd, dtype=float)
    return params.coulomb * np.sign(qd) + params.viscous * qd


def stribeck_magnitude(qd, fc, fs, vs, delta):
    """Non-negative static level ``g(v)`` (excluding the viscous term)."""
    qd = np.asarray(qd, dtype=float)
    return fc + (fs - fc) * np.exp(-np.abs(qd / vs) ** delta)


def stribeck_torque(qd, params: StribeckParams):
    qd = np.asarray(qd, dtype=float)
    g = stribeck_magnitude(qd, params.fc, params.fs, params.vs, params.delta)
    return g * np.sign(qd) + params.fv * qd


def _lugre_g(qd, params):
    g = stribeck_magnitude(qd, params.fc, params.fs, params.vs, params.delta)
    if np.any(g <= 0):
        raise ParameterError("LuGre requires g(v) > 0 for all velocities")
    return g


def lugre_derivative(qd, z, params: LuGreParams):
    qd = np.asarray(qd, dtype=float)
    return qd - np.abs(qd) * params.sigma0 * z / _lugre_g(qd, params)


def lugre_torque(qd, z, params: LuGreParams, zdot=None):
    qd = np.asarray(qd, dtype=float)
    if zdot is None:
        zdot = lugre_derivative(qd, z, params)
    return params.sigma0 * z + params.sigma1 * zdot + params.sigma2 * qd


def lugre_steady_state(qd, params: LuGreParams):
    """Closed-form ``(z_ss, tau_ss)`` at constant velocity."""
    qd = np.asarray(qd, dtype=float)
    g = _lugre_g(qd, params)
    z = g * np.sign(qd) / params.sigma0
    return z, params.sigma0 * z + params.sigma2 * qd


def gms_step(qd, state: GMSState, params: GMSParams, dt):
    """Advance GMS elements over ``dt`` with ``qd`` held constant.

    Each regime has a closed-form solution at constant velocity, so the
    stick-to-slip event time is solved exactly and the step is split there.
    ``qd`` has one entry per joint.  Returns ``(new_state, tau_f)``.
    """
    qd = np.atleast_1d(np.asarray(qd, dtype=float))
    v = qd[:, None] * np.ones_like(state.z)
    sgn = np.sign(v).astype(np.int8)
    k = np.broadcast_to(params.stiffness, state.z.shape)
    alpha = np.broadcast_to(params.weights, state.z.shape)
    mag = stribeck_magnitude(qd, params.fc, params.fs, params.vs, params.delta)[:, None] * np.ones_like(state.z)
    c = np.broadcast_to(params.attraction[:, None], state.z.shape)
    z = state.z.copy()
    slip = state.slip.copy()
    # velocity reversal or rest ends slipping
    slip[(slip != 0) & (slip != sgn)] = 0
    remaining = np.full(z.shape, float(dt))

    stick = slip == 0
    moving = stick & (sgn != 0)
    limit = alpha * mag / k
    if np.any(moving):
        target = sgn * limit
        with np.errstate(divide="ignore", invalid="ignore"):
            t_hit = np.where(moving, (target - z) / np.where(v == 0, 1.0, v), np.inf)
        t_hit = np.where(t_hit < 0, 0.0, t_hit)
        hits = moving & (t_hit < remaining)
        z = np.where(moving & ~hits, z + v * remaining, z)
        z = np.where(hits, target, z)
        remaining = np.where(hits, remaining - t_hit, 0.0)
        slip = np.where(hits, sgn, slip).astype(np.int8)
    else:
        remaining = np.where(stick, 0.0, remaining)

    slipping = slip != 0
    if np.any(slipping):
        z_star = slip * limit
        rate = c * k / mag
        z = np.where(slipping, z_star + (z - z_star) * np.exp(-rate * remaining), z)

    new = GMSState(z, slip)
    tau = np.sum(k * z, axis=-1) + params.sigma2 * qd
    return new, tau


def gms_torque(qd, state: GMSState, params: GMSParams):
    qd = np.atleast_1d(np.asarray(qd, dtype=float))
    k = np.broadcast_to(params.stiffness, state.z.shape)
    return np.sum(k * state.z, axis=-1) + params.sigma2 * qd


def _rk4_lugre(v, z, params, dt, n):
    f = lambda zz: lugre_derivative(v, zz, params)  # noqa: E731
    for _ in range(n):
        k1 = f(z)
        k2 = f(z + 0.5 * dt * k1)
        k3 = f(z + 0.5 * dt * k2)
        k4 = f(z + dt * k3)
        z = z + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return z


def steady_state_curve(model: str, params, velocity_grid, settle_time=5.0, tol=1e-8):
    """Steady friction torque at each constant velocity of ``velocity_grid``.

    Dynamic models are simulated for ``settle_time`` seconds from rest; the
    last two samples must agree to ``tol`` or :class:`ConvergenceError` is raised.
    Returns an array of shape ``(n_grid, 2)`` with columns ``(v, tau)``.
    Single-joint parameters are assumed for the dynamic models.
    """
    v = np.asarray(velocity_grid, dtype=float).ravel()
    if model == "simple":
        tau = simple_torque(v, params)
    elif model == "stribeck":
        tau = stribeck_torque(v, params)
    elif model == "lugre":
        g = _lugre_g(v, params)
        lam = np.abs(v) * params.sigma0 / g
        dt = min(1e-3, 0.5 / max(lam.max(), 1e-12))
        n = int(np.ceil(settle_time / dt))
        z = _rk4_lugre(v, np.zeros_like(v), params, dt, n - 1)
        tau_prev = lugre_torque(v, z, params)
        z = _rk4_lugre(v, z, params, dt, 1)
        tau = lugre_torque(v, z, params)
        if np.any(np.abs(tau - tau_prev) >= tol):
            raise ConvergenceError("LuGre state did not settle within the horizon")
    elif model == "gms":
        tau = np.empty_like(v)
        for i, vi in enumerate(v):
            state = GMSState.rest(params)
            # gms_step is exact at constant velocity, so the step size is free
            dt = 1e-3
            n = int(np.ceil(settle_time / dt))
            for _ in range(n - 1):
                state, _ = gms_step([vi], state, params, dt)
            prev = gms_torque([vi], state, params)[0]
            state, cur = gms_step([vi], state, params, dt)
            cur = cur[0]
            if abs(cur - prev) >= tol:
                raise ConvergenceError(f"GMS did not settle at v={vi}")
            tau[i] = cur
    else:
        raise ParameterError(f"unknown friction model {model!r}")
    return np.column_stack([v, tau])
