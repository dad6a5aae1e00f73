"""Probabilistic state-space model with neural friction and latent dynamics.

The extended state is ``x = (q, qd, z)``.  Its time derivative is

    qd                                     (copied)
    M(q)^-1 (tau_m - c - g - tau_f(x))     (rigid body, friction net)
    eta(x)                                 (latent net)

Transitions integrate this over one sampling interval with RK4 under a
zero-order-held torque and add Gaussian process noise ``Q``; observations
select ``q`` (optionally ``qd``) and add Gaussian noise ``R``.  Both
covariances are diagonal and stored as log-variances.

The transition density is read as ``x_t = f(x_{t-1}, u_{t-1}) + w_t``.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import neural
from .dynamics import PlanarArm, solve_mass
from .errors import DivergenceError, ShapeError

LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class ModelParams:
    """All learnable quantities of the probabilistic model."""

    lumped: np.ndarray
    friction: np.ndarray
    latent: np.ndarray
    log_q: np.ndarray
    log_r: np.ndarray
    init_mean: np.ndarray
    init_logvar: np.ndarray

    def copy(self):
        return copy.deepcopy(self)

    def blocks(self) -> dict:
        return {k: np.asarray(v, dtype=float) for k, v in self.__dict__.items()}


@dataclass
class PSSMConfig:
    n_latent: int = 2
    friction_hidden: tuple = (32, 32)
    latent_hidden: tuple = (32,)
    activation: str = "mish"
    observe_velocity: bool = False
    dt: float = 0.004
    torque_scale: float = 1.0
    latent_rate_scale: float = 1.0
    freeze_lumped: bool = False


class PSSM:
    """Neural-friction latent-variable model of a planar arm."""

    def __init__(self, plant: PlanarArm, config: PSSMConfig, params: ModelParams,
                 standardizer: neural.Standardizer | None = None):
        self.plant = plant
        self.config = config
        self.n_q = plant.n_dof
        self.n_z = config.n_latent
        self.n_x = 2 * self.n_q + self.n_z
        self.n_y = 2 * self.n_q if config.observe_velocity else self.n_q
        self.fric_spec = neural.MLPSpec(self.n_x, self.n_q, tuple(config.friction_hidden), config.activation)
        self.lat_spec = neural.MLPSpec(self.n_x, max(self.n_z, 1), tuple(config.latent_hidden),
                                       config.activation)
        self.std = standardizer or neural.Standardizer.identity(self.n_x)
        self.params = params
        self._check()

    # -- construction --------------------------------------------------
    @classmethod
    def initialize(cls, plant, config, seed, lumped=None, standardizer=None,
                   q_var=None, r_var=None):
        n_q = plant.n_dof
        n_x = 2 * n_q + config.n_latent
        n_y = 2 * n_q if config.observe_velocity else n_q
        fric = neural.MLPSpec(n_x, n_q, tuple(config.friction_hidden), config.activation)
        lat = neural.MLPSpec(n_x, max(config.n_latent, 1), tuple(config.latent_hidden), config.activation)
        seeds = np.random.SeedSequence(seed).spawn(2)
        params = ModelParams(
            lumped=np.array(plant.lumped if lumped is None else lumped, dtype=float),
            friction=neural.init_params(fric, seeds[0]),
            latent=neural.init_params(lat, seeds[1]),
            log_q=np.log(np.full(n_x, 1e-6) if q_var is None else np.asarray(q_var, dtype=float)),
            log_r=np.log(np.full(n_y, 1e-6) if r_var is None else np.asarray(r_var, dtype=float)),
            init_mean=np.zeros(n_x),
            init_logvar=np.log(np.full(n_x, 1e-2)),
        )
        return cls(plant, config, params, standardizer)

    def _check(self):
        p = self.params
        if p.friction.shape != (self.fric_spec.n_params,) or p.latent.shape != (self.lat_spec.n_params,):
            raise ShapeError("network parameter vectors do not match their specs")
        if p.log_q.shape != (self.n_x,) or p.log_r.shape != (self.n_y,):
            raise ShapeError("noise covariance dimensions do not match the state/observation")
        if p.lumped.shape != (self.plant.n_lumped,):
            raise ShapeError("lumped parameter vector has the wrong length")

    def copy(self):
        return PSSM(self.plant, self.config, self.params.copy(), self.std)

    # -- flat parameter view used by the M-step -------------------------
    def get_theta(self) -> np.ndarray:
        p = self.params
        return np.concatenate([p.lumped, p.friction, p.latent])

    def set_theta(self, theta):
        theta = np.asarray(theta, dtype=float)
        a = self.plant.n_lumped
        b = a + self.fric_spec.n_params
        self.params.lumped = theta[:a].copy()
        self.params.friction = theta[a:b].copy()
        self.params.latent = theta[b:].copy()

    @property
    def n_theta(self) -> int:
        return self.plant.n_lumped + self.fric_spec.n_params + self.lat_spec.n_params

    # -- deterministic dynamics ------------------------------------------
    def split(self, x):
        n = self.n_q
        return x[..., :n], x[..., n:2 * n], x[..., 2 * n:]

    def friction_torque(self, x):
        s = self.std.apply(x)
        return self.config.torque_scale * neural.forward(self.fric_spec, self.params.friction, s)

    def state_derivative(self, x, tau, cache=None):
        """``dx/dt`` for a batch of extended states ``(B, n_x)``."""
        p = self.params
        q, qd, _ = self.split(x)
        s = self.std.apply(x)
        fo, fc = neural.forward(self.fric_spec, p.friction, s, return_cache=True)
        tau_f = self.config.torque_scale * fo
        m = self.plant.mass_matrix(q, p.lumped)
        c, g = self.plant.bias_and_gravity(q, qd, p.lumped)
        qdd = solve_mass(m, tau - c - g - tau_f)
        parts = [qd, qdd]
        lc = None
        if self.n_z:
            lo, lc = neural.forward(self.lat_spec, p.latent, s, return_cache=True)
            parts.append(self.config.latent_rate_scale * lo)
        if cache is not None:
            cache.append((x, s, fc, lc, m, qdd))
        return np.concatenate(parts, axis=-1)

    def derivative_vjp(self, cached, upstream):
        """Pull ``upstream`` (shape ``(B, n_x)``) back through one derivative call.

        Returns ``(grad_x, grad_theta)`` with ``grad_theta`` summed over the batch.
        """
        x, s, fc, lc, m, qdd = cached
        p = self.params
        n = self.n_q
        q, qd, _ = self.split(x)
        b = solve_mass(m, upstream[..., n:2 * n])
        lump_reg = self.plant.lumped_regressor(q, qd, qdd)
        g_lumped = -np.einsum("bij,bi->j", lump_reg, b)
        jq, jqd = self.plant.inverse_dynamics_jacobians(q, qd, qdd, p.lumped)
        gx = np.zeros_like(x)
        gx[:, :n] = -np.einsum("bij,bi->bj", jq, b)
        gx[:, n:2 * n] = upstream[:, :n] - np.einsum("bij,bi->bj", jqd, b)
        g_fric, gs = neural.backward(self.fric_spec, p.friction, s,
                                     -self.config.torque_scale * b, cache=fc)
        if self.n_z:
            g_lat, gs_l = neural.backward(self.lat_spec, p.latent, s,
                                          self.config.latent_rate_scale * upstream[:, 2 * n:], cache=lc)
            gs = gs + gs_l
        else:
            g_lat = np.zeros(self.lat_spec.n_params)
        gx += gs / self.std.scale
        if self.config.freeze_lumped:
            g_lumped = np.zeros_like(g_lumped)
        return gx, np.concatenate([g_lumped, g_fric, g_lat])

    def rk4_step(self, x, tau, dt=None, check=True, cache=None):
        """Deterministic transition mean ``f(x, tau)`` over one sampling interval."""
        h = self.config.dt if dt is None else dt
        if h <= 0:
            raise ValueError("time step must be positive")
        x = np.atleast_2d(np.asarray(x, dtype=float))
        tau = np.broadcast_to(np.asarray(tau, dtype=float), x.shape[:-1] + (self.n_q,))
        ks = []
        xi = x
        for stage, w in enumerate((0.5, 0.5, 1.0, None)):
            k = self.state_derivative(xi, tau, cache)
            if check and not np.all(np.isfinite(k)):
                raise DivergenceError(f"non-finite state derivative at RK4 stage {stage + 1}",
                                      stage=stage + 1)
            ks.append(k)
            if w is not None:
                xi = x + w * h * k
        return x + h / 6.0 * (ks[0] + 2.0 * ks[1] + 2.0 * ks[2] + ks[3])

    def rk4_vjp(self, cache, upstream, dt=None):
        """Reverse pass through :meth:`rk4_step` given its stage caches."""
        h = self.config.dt if dt is None else dt
        gk = [h / 6.0 * upstream, h / 3.0 * upstream, h / 3.0 * upstream, h / 6.0 * upstream]
        gx = upstream.copy()
        gtheta = np.zeros(self.n_theta)
        weights = (0.5, 0.5, 1.0)
        for stage in (3, 2, 1, 0):
            gxi, gth = self.derivative_vjp(cache[stage], gk[stage])
            gx += gxi
            gtheta += gth
            if stage > 0:
                gk[stage - 1] = gk[stage - 1] + weights[stage - 1] * h * gxi
        return gx, gtheta

    # -- densities ---------------------------------------------------------
    @property
    def q_var(self):
        return np.exp(self.params.log_q)

    @property
    def r_var(self):
        return np.exp(self.params.log_r)

    def transition_mean(self, x, tau):
        return self.rk4_step(x, tau, check=False)

    def transition_logpdf(self, x_next, x, tau):
        mean = self.rk4_step(x, tau, check=False)
        return _diag_logpdf(np.atleast_2d(x_next), mean, self.params.log_q)

    def transition_objective(self, x_prev, tau_prev, x_next, weights=None, with_log_q=False):
        """Weighted sum of transition log-densities and its gradient.

        Gradient is w.r.t. :meth:`get_theta` (plus ``log_q`` when requested).
        """
        x_prev = np.atleast_2d(x_prev)
        x_next = np.atleast_2d(x_next)
        w = np.ones(len(x_prev)) if weights is None else np.asarray(weights, dtype=float)
        cache = []
        mean = self.rk4_step(x_prev, tau_prev, cache=cache)
        var = self.q_var
        resid = x_next - mean
        logp = -0.5 * (np.sum(LOG_2PI + self.params.log_q) + np.sum(resid * resid / var, axis=-1))
        value = float(w @ logp)
        _, g_theta = self.rk4_vjp(cache, w[:, None] * resid / var)
        if with_log_q:
            g_logq = -0.5 * (w.sum() - (w[:, None] * resid * resid).sum(axis=0) / var)
            return value, np.concatenate([g_theta, g_logq])
        return value, g_theta

    def transition_residuals(self, x_prev, tau_prev, x_next):
        return np.atleast_2d(x_next) - self.rk4_step(x_prev, tau_prev, check=False)

    def emission_mean(self, x):
        x = np.asarray(x)
        n = self.n_y
        return x[..., :n]

    def emission_logpdf(self, y, x):
        return _diag_logpdf(np.asarray(y, dtype=float), self.emission_mean(x), self.params.log_r)

    def emission_residuals(self, y, x):
        return np.asarray(y, dtype=float) - self.emission_mean(x)

    def initial_logpdf(self, x0):
        return _diag_logpdf(np.atleast_2d(x0), self.params.init_mean, self.params.init_logvar)

    def sample_initial(self, n, rng, y0=None):
        """Draw ``n`` initial states; observed coordinates may be centered on ``y0``."""
        mean = self.params.init_mean.copy()
        if y0 is not None:
            mean[:self.n_y] = y0
        sd = np.exp(0.5 * self.params.init_logvar)
        return mean + sd * rng.standard_normal((n, self.n_x))

    def sample_transition(self, x, tau, rng):
        mean = self.rk4_step(x, tau, check=False)
        return mean + np.exp(0.5 * self.params.log_q) * rng.standard_normal(mean.shape)

    def sample_emission(self, x, rng):
        mean = self.emission_mean(np.atleast_2d(x))
        return mean + np.exp(0.5 * self.params.log_r) * rng.standard_normal(mean.shape)

    # -- closed-form covariance updates -------------------------------------
    def set_noise(self, q_var=None, r_var=None, floor=1e-12):
        if q_var is not None:
            self.params.log_q = np.log(np.maximum(q_var, floor))
        if r_var is not None:
            self.params.log_r = np.log(np.maximum(r_var, floor))

    def set_initial(self, mean, var, floor=1e-12):
        self.params.init_mean = np.asarray(mean, dtype=float).copy()
        self.params.init_logvar = np.log(np.maximum(var, floor))

    def simulate(self, x0, taus):
        """Noise-free roll-out from ``x0`` under a torque sequence."""
        xs = np.empty((len(taus) + 1, self.n_x))
        xs[0] = x0
        x = np.atleast_2d(x0)
        for t, tau in enumerate(taus):
            x = self.rk4_step(x, tau)
            xs[t + 1] = x[0]
        return xs


def _diag_logpdf(x, mean, log_var):
    r = x - mean
    return -0.5 * (np.sum(LOG_2PI + log_var) + np.sum(r * r * np.exp(-log_var), axis=-1))
