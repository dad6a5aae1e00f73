"""Conventional identification: filtering, differentiation, least squares, simplex.

The pipeline mirrors common practice for robot dynamics: zero-phase low-pass
the measured positions and torques, differentiate the positions twice by
central differences, stack the linear regressor over all samples, reduce it
to base parameters and solve by an orthogonal least-squares solver.
Nonlinear static friction parameters are refined afterwards with a
Nelder-Mead simplex search.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from .dynamics import BaseParamMapping, PlanarArm, base_param_reduction, sampled_regressor
from .errors import ParameterError, ShapeError
from .friction import StribeckParams, stribeck_magnitude

COND_WARN = 1e10


@dataclass(frozen=True)
class FilterSpec:
    sample_rate: float
    cutoff: float = 10.0
    order: int = 4

    def __post_init__(self):
        if not 0 < self.cutoff < self.sample_rate / 2:
            raise ParameterError("cutoff must lie strictly between 0 and the Nyquist frequency")
        if self.order < 1:
            raise ParameterError("filter order must be positive")


def zero_phase_filter(x, spec: FilterSpec, axis=0):
    """Forward-backward Butterworth filter with odd reflective edge padding."""
    x = np.asarray(x, dtype=float)
    if x.shape[axis] <= 6 * spec.order:
        raise ShapeError(f"signal of length {x.shape[axis]} is too short for order {spec.order}")
    b, a = signal.butter(spec.order, spec.cutoff, btype="low", fs=spec.sample_rate)
    return signal.filtfilt(b, a, x, axis=axis, padtype="odd", padlen=3 * spec.order)


def central_difference(x, dt, axis=0):
    """Second-order accurate derivative; one-sided stencils at both ends."""
    x = np.moveaxis(np.asarray(x, dtype=float), axis, 0)
    if len(x) < 3:
        raise ShapeError("need at least three samples")
    d = np.empty_like(x)
    d[1:-1] = (x[2:] - x[:-2]) / (2 * dt)
    d[0] = (-3 * x[0] + 4 * x[1] - x[2]) / (2 * dt)
    d[-1] = (3 * x[-1] - 4 * x[-2] + x[-3]) / (2 * dt)
    return np.moveaxis(d, 0, axis)


def preprocess(q, tau, dt, spec: FilterSpec | None = None):
    """Filtered position/torque with differentiated velocity and acceleration."""
    q = np.asarray(q, dtype=float).reshape(len(q), -1)
    tau = np.asarray(tau, dtype=float).reshape(len(tau), -1)
    if spec is not None:
        q = zero_phase_filter(q, spec)
        tau = zero_phase_filter(tau, spec)
    qd = central_difference(q, dt)
    qdd = central_difference(qd, dt)
    return q, qd, qdd, tau


@dataclass
class LSResult:
    theta: np.ndarray
    residual_norm: float
    cond: float
    mapping: BaseParamMapping
    names: list
    structure: str
    ill_conditioned: bool = False
    n_rows: int = 0
    extra: dict = field(default_factory=dict)

    def predict(self, plant: PlanarArm, q, qd, qdd):
        y = _columns(plant, q, qd, qdd, self.structure)
        return self.mapping.reduce_regressor(y) @ self.theta

    def to_lumped(self, plant: PlanarArm, n_samples=400, seed=0):
        """Lumped rigid-body vector plus (coulomb, viscous) per joint.

        Refits the base estimate onto the lumped and friction regressors at
        random states; exact whenever the base set spans them.
        """
        q, qd, qdd = plant.sample_states(n_samples, seed)
        tau = self.predict(plant, q, qd, qdd).reshape(-1)
        lump = plant.lumped_regressor(q, qd, qdd)
        n = plant.n_dof
        cols = [lump]
        if self.structure == "simple":
            fr = np.zeros(q.shape + (2 * n,))
            for j in range(n):
                fr[:, j, 2 * j] = np.sign(qd[:, j])
                fr[:, j, 2 * j + 1] = qd[:, j]
            cols.append(fr)
        a = np.concatenate(cols, axis=-1).reshape(-1, sum(c.shape[-1] for c in cols))
        sol, *_ = np.linalg.lstsq(a, tau, rcond=None)
        k = plant.n_lumped
        fr = sol[k:]
        return sol[:k], fr[0::2] if len(fr) else np.zeros(n), fr[1::2] if len(fr) else np.zeros(n)


def _columns(plant: PlanarArm, q, qd, qdd, structure):
    y = plant.regressor(q, qd, qdd)
    if structure == "none":
        return y[..., :10 * plant.n_dof]
    if structure == "simple":
        return y
    raise ParameterError(f"unknown friction structure {structure!r}")


def base_mapping(plant: PlanarArm, structure="simple", n_samples=500, seed=0):
    y = sampled_regressor(plant, n_samples, seed)
    if structure == "none":
        y = y[:, :10 * plant.n_dof]
    return base_param_reduction(y, seed=seed)


def ls_identify(plant: PlanarArm, q, qd, qdd, tau, structure="simple", mapping=None) -> LSResult:
    """Least-squares estimate of the base parameters from sampled data.

    ``q``, ``qd``, ``qdd`` and ``tau`` are (T, n) arrays that have already
    been preprocessed (see :func:`preprocess`).
    """
    mapping = mapping or base_mapping(plant, structure)
    y = mapping.reduce_regressor(_columns(plant, q, qd, qdd, structure))
    a = y.reshape(-1, y.shape[-1])
    b = np.asarray(tau, dtype=float).reshape(-1)
    if len(a) < 10 * a.shape[1]:
        raise ShapeError(f"need at least {10 * a.shape[1]} rows, got {len(a)}")
    sol, _, _, s = np.linalg.lstsq(a, b, rcond=None)
    cond = float(s[0] / s[-1]) if s[-1] > 0 else np.inf
    names = [plant.standard_names()[i] for i in mapping.independent]
    if structure == "none":
        names = names[:len(mapping.independent)]
    return LSResult(sol, float(np.linalg.norm(a @ sol - b)), cond, mapping, names, structure,
                    ill_conditioned=cond > COND_WARN, n_rows=len(a))


# -- Nelder-Mead ---------------------------------------------------------------
@dataclass
class SimplexResult:
    x: np.ndarray
    fun: float
    n_eval: int
    n_iter: int
    converged: bool
    history: list


def simplex_refine(fun, x0, bounds=None, step=None, xtol=1e-8, max_eval=10_000, restarts=2):
    """Bounded Nelder-Mead minimization (reflection 1, expansion 2, contraction 0.5, shrink 0.5).

    Points are clipped into ``bounds``.  The search stops once the simplex
    diameter falls below ``xtol`` or the evaluation budget is spent, then
    restarts from the best vertex up to ``restarts`` times while that
    improves the objective.
    """
    x0 = np.asarray(x0, dtype=float)
    n = len(x0)
    lo, hi = (np.full(n, -np.inf), np.full(n, np.inf)) if bounds is None else map(np.asarray, bounds)
    clip = lambda x: np.minimum(np.maximum(x, lo), hi)  # noqa: E731
    n_eval = 0

    def f(x):
        nonlocal n_eval
        n_eval += 1
        v = float(fun(x))
        return v if np.isfinite(v) else np.inf

    x_best = clip(x0)
    f_best = f(x_best)
    if not np.isfinite(f_best):
        raise ParameterError("objective is not finite at the initial point")
    history = [f_best]
    n_iter = 0
    converged = False
    for _ in range(restarts + 1):
        h = np.where(x_best != 0, 0.05 * np.abs(x_best), 2.5e-4) if step is None else np.broadcast_to(step, (n,))
        pts = [x_best]
        for i in range(n):
            p = x_best.copy()
            p[i] += h[i]
            p = clip(p)
            if np.array_equal(p, x_best):
                p[i] = x_best[i] - h[i]
                p = clip(p)
            pts.append(p)
        pts = np.array(pts)
        vals = np.array([f_best] + [f(p) for p in pts[1:]])
        start = f_best
        while n_eval < max_eval:
            order = np.argsort(vals, kind="stable")
            pts, vals = pts[order], vals[order]
            history.append(vals[0])
            n_iter += 1
            if np.max(np.linalg.norm(pts[1:] - pts[0], axis=1)) < xtol:
                converged = True
                break
            c = pts[:-1].mean(axis=0)
            xr = clip(c + (c - pts[-1]))
            fr = f(xr)
            if fr < vals[0]:
                xe = clip(c + 2.0 * (c - pts[-1]))
                fe = f(xe)
                pts[-1], vals[-1] = (xe, fe) if fe < fr else (xr, fr)
            elif fr < vals[-2]:
                pts[-1], vals[-1] = xr, fr
            else:
                if fr < vals[-1]:
                    xc = clip(c + 0.5 * (xr - c))
                    fc = f(xc)
                    ok = fc <= fr
                else:
                    xc = clip(c + 0.5 * (pts[-1] - c))
                    fc = f(xc)
                    ok = fc < vals[-1]
                if ok:
                    pts[-1], vals[-1] = xc, fc
                else:
                    pts[1:] = clip(pts[0] + 0.5 * (pts[1:] - pts[0]))
                    vals[1:] = [f(p) for p in pts[1:]]
        i = int(np.argmin(vals))
        x_best, f_best = pts[i].copy(), float(vals[i])
        if n_eval >= max_eval or not f_best < start:
            break
    return SimplexResult(x_best, f_best, n_eval, n_iter, converged, history)


def fit_stribeck_curve(v, tau, coulomb, viscous, delta0=2.0, vs0=None, fit_delta=True):
    """Fit (fc, fs, vs, fv, delta) to a sampled static friction curve.

    Starts from LS Coulomb/viscous values; the static level begins at the
    largest observed low-speed excess over the Coulomb line.
    """
    v = np.asarray(v, dtype=float)
    tau = np.asarray(tau, dtype=float)
    excess = np.abs(tau) - (coulomb + viscous * np.abs(v))
    fs0 = coulomb + max(float(excess.max()), 0.05 * abs(coulomb))
    vs0 = vs0 or float(np.median(np.abs(v[np.abs(v) > 0]))) * 0.5
    x0 = np.array([coulomb, fs0, vs0, viscous, delta0])
    lo = np.array([0.0, 0.0, 1e-6, 0.0, 0.5])
    hi = np.array([np.inf, np.inf, np.inf, np.inf, 5.0])
    if not fit_delta:
        lo[4] = hi[4] = delta0

    def obj(x):
        fc, fs, vs, fv, d = x
        r = stribeck_magnitude(v, fc, fs, vs, d) * np.sign(v) + fv * v - tau
        return r @ r

    res = simplex_refine(obj, x0, bounds=(lo, hi), restarts=5)
    fc, fs, vs, fv, d = res.x
    if fs < fc:
        fs = fc
    return StribeckParams(fc=fc, fs=fs, vs=vs, fv=fv, delta=d), res
