"""Excitation trajectories built from a finite sum of sines and cosines.

Each joint follows

    q(t) = sum_k a_k/(k w) sin(k w t) - b_k/(k w) cos(k w t)

so ``qd = sum_k a_k cos(k w t) + b_k sin(k w t)`` and higher derivatives are
closed-form as well.  Design draws random coefficients, projects them onto
the affine subspace where position, velocity and acceleration vanish at both
ends, then shrinks them until every box limit holds on a dense grid.  The
zero trajectory is strictly feasible, so the search always terminates.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import FeasibilityError, ParameterError


@dataclass
class TrajectoryCoeffs:
    a: np.ndarray            # (n_joints, K)
    b: np.ndarray            # (n_joints, K)
    omega: float = 2 * np.pi / 5
    duration: float = 31.4

    def __post_init__(self):
        self.a = np.atleast_2d(np.asarray(self.a, dtype=float))
        self.b = np.atleast_2d(np.asarray(self.b, dtype=float))
        if self.a.shape != self.b.shape or self.a.shape[1] < 1:
            raise ParameterError("a and b must share a (n_joints, K) shape with K >= 1")
        if not (np.all(np.isfinite(self.a)) and np.all(np.isfinite(self.b))):
            raise ParameterError("coefficients must be finite")
        if self.omega <= 0 or self.duration <= 0:
            raise ParameterError("base frequency and duration must be positive")

    @property
    def n_joints(self):
        return self.a.shape[0]

    @property
    def K(self):
        return self.a.shape[1]

    @classmethod
    def zeros(cls, n_joints=1, K=20, **kw):
        return cls(np.zeros((n_joints, K)), np.zeros((n_joints, K)), **kw)

    def to_json(self) -> str:
        return json.dumps({"omega": self.omega, "duration": self.duration,
                           "a": self.a.tolist(), "b": self.b.tolist()}, indent=1)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(np.array(d["a"]), np.array(d["b"]), d["omega"], d["duration"])


@dataclass
class MotionLimits:
    q: tuple = (-np.pi / 2, np.pi / 2)
    qd: tuple = (-3.0, 3.0)
    qdd: tuple = (-20.0, 20.0)
    jerk: float | None = 500.0

    def __post_init__(self):
        for name in ("q", "qd", "qdd"):
            lo, hi = (np.asarray(v, dtype=float) for v in getattr(self, name))
            if np.any(lo >= hi):
                raise ParameterError(f"{name} limits need min < max")
        if self.jerk is not None and self.jerk <= 0:
            raise ParameterError("jerk bound must be positive")

    def boxes(self):
        out = [self.q, self.qd, self.qdd]
        if self.jerk is not None:
            out.append((-self.jerk, self.jerk))
        return [(np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)) for lo, hi in out]


@dataclass
class DesignConfig:
    K: int = 20
    omega: float = 2 * np.pi / 5
    duration: float = 31.4
    grid_dt: float = 0.004
    margin: float = 0.02          # shrink a little beyond the grid optimum
    decay: float = 1.0            # draw scale ~ k^-decay
    extra: dict = field(default_factory=dict)


def _basis(coeffs_k, omega, t):
    """Sin/cos matrices of shape (len(t), K) and the harmonic frequencies."""
    w = omega * np.arange(1, coeffs_k + 1)
    arg = np.outer(np.asarray(t, dtype=float), w)
    return np.sin(arg), np.cos(arg), w


def evaluate_trajectory(c: TrajectoryCoeffs, t):
    """Return (q, qd, qdd, jerk), each of shape (len(t), n_joints)."""
    s, co, w = _basis(c.K, c.omega, np.atleast_1d(t))
    a, b = c.a.T, c.b.T
    q = s @ (a / w[:, None]) - co @ (b / w[:, None])
    qd = co @ a + s @ b
    qdd = -s @ (a * w[:, None]) + co @ (b * w[:, None])
    jerk = -co @ (a * w[:, None] ** 2) - s @ (b * w[:, None] ** 2)
    return q, qd, qdd, jerk


def _boundary_matrix(K, omega, duration):
    """Rows map the stacked (a, b) of one joint to q, qd, qdd at t = 0 and t = T."""
    rows = []
    for t in (0.0, duration):
        s, co, w = _basis(K, omega, [t])
        s, co = s[0], co[0]
        rows.append(np.concatenate([s / w, -co / w]))
        rows.append(np.concatenate([co, s]))
        rows.append(np.concatenate([-s * w, co * w]))
    return np.array(rows)


def boundary_residuals(c: TrajectoryCoeffs):
    m = _boundary_matrix(c.K, c.omega, c.duration)
    return np.abs(np.concatenate([m @ np.concatenate([c.a[j], c.b[j]]) for j in range(c.n_joints)]))


def constraint_residuals(c: TrajectoryCoeffs, limits: MotionLimits, grid):
    """Non-negative violations on the grid followed by boundary residuals."""
    values = evaluate_trajectory(c, grid)
    parts = []
    for v, (lo, hi) in zip(values, limits.boxes()):
        parts.append(np.maximum(0.0, v - hi).ravel())
        parts.append(np.maximum(0.0, lo - v).ravel())
    parts.append(boundary_residuals(c))
    return np.concatenate(parts)


def project_boundary(c: TrajectoryCoeffs) -> TrajectoryCoeffs:
    """Orthogonal projection of each joint's (a, b) onto the boundary null space."""
    m = _boundary_matrix(c.K, c.omega, c.duration)
    _, sv, vt = np.linalg.svd(m)
    rank = int(np.sum(sv > 1e-12 * sv[0]))
    null = vt[rank:].T
    a, b = c.a.copy(), c.b.copy()
    for j in range(c.n_joints):
        x = null @ (null.T @ np.concatenate([a[j], b[j]]))
        a[j], b[j] = x[:c.K], x[c.K:]
    return TrajectoryCoeffs(a, b, c.omega, c.duration)


def feasible_scale(c: TrajectoryCoeffs, limits: MotionLimits, grid) -> float:
    """Largest s in [0, 1] such that s * trajectory satisfies the boxes on the grid."""
    s = 1.0
    for v, (lo, hi) in zip(evaluate_trajectory(c, grid), limits.boxes()):
        if np.any(lo >= 0) or np.any(hi <= 0):
            raise FeasibilityError("the zero trajectory violates the limits")
        with np.errstate(divide="ignore", invalid="ignore"):
            up = np.where(v > 0, hi / v, np.inf)
            dn = np.where(v < 0, lo / v, np.inf)
        s = min(s, float(np.min(up)), float(np.min(dn)))
    return s


def random_draw(seed, config: DesignConfig | None = None, n_joints=1) -> TrajectoryCoeffs:
    """Random coefficients projected onto the boundary conditions."""
    cfg = config or DesignConfig()
    rng = np.random.default_rng(seed)
    scale = np.arange(1, cfg.K + 1) ** -cfg.decay
    raw = TrajectoryCoeffs(rng.standard_normal((n_joints, cfg.K)) * scale,
                           rng.standard_normal((n_joints, cfg.K)) * scale, cfg.omega, cfg.duration)
    return project_boundary(raw)


def design(limits: MotionLimits, seed, config: DesignConfig | None = None, n_joints=1):
    """Random feasible excitation trajectory (empty objective)."""
    cfg = config or DesignConfig()
    c = random_draw(seed, cfg, n_joints)
    grid = design_grid(c, cfg.grid_dt)
    s = feasible_scale(c, limits, grid)
    if s >= 1.0:
        return c
    s *= 1.0 - cfg.margin
    if not s > 0:
        raise FeasibilityError("no non-trivial feasible scaling found")
    return TrajectoryCoeffs(c.a * s, c.b * s, c.omega, c.duration)


def design_grid(c: TrajectoryCoeffs, dt):
    nyq = c.K * c.omega / np.pi          # Nyquist rate of the top harmonic in Hz
    dt = min(dt, 1.0 / (4 * nyq))
    return np.linspace(0.0, c.duration, int(np.ceil(c.duration / dt)) + 1)


def sample_reference(c: TrajectoryCoeffs, dt):
    """Uniform samples ``t, q, qd, qdd`` over [0, duration]."""
    if dt <= 0:
        raise ParameterError("dt must be positive")
    n = int(np.floor(c.duration / dt + 1e-9)) + 1
    t = np.arange(n) * dt
    q, qd, qdd, _ = evaluate_trajectory(c, t)
    return t, q, qd, qdd


def normalized_xcorr(x, y):
    """Peak of the normalized cross-correlation over all lags."""
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    x = x - x.mean()
    y = y - y.mean()
    den = np.linalg.norm(x) * np.linalg.norm(y)
    if den == 0:
        return 0.0
    return float(np.max(np.abs(np.correlate(x, y, "full"))) / den)
