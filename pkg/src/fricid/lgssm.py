"""Scalar linear-Gaussian state-space model.

    x_t = a x_{t-1} + b u_{t-1} + w_t,   w_t ~ N(0, q)
    y_t = c x_t + v_t,                   v_t ~ N(0, r)

It exposes the same interface as :class:`fricid.pssm.PSSM`, so the particle
machinery and the EM loop can be checked against exact Kalman recursions.
The observation gain ``c`` is held fixed; only ``a`` and ``b`` form theta.
"""
from __future__ import annotations

import numpy as np

from .errors import ParameterError

LOG_2PI = np.log(2.0 * np.pi)


class LGSSM:
    n_x = 1
    n_y = 1

    def __init__(self, a, q, r, c=1.0, b=0.0, m0=0.0, p0=1.0):
        if q <= 0 or r <= 0 or p0 <= 0:
            raise ParameterError("variances must be positive")
        self.a, self.b, self.c = float(a), float(b), float(c)
        self.log_q = np.log(np.array([q], dtype=float))
        self.log_r = np.log(np.array([r], dtype=float))
        self.init_mean = np.array([m0], dtype=float)
        self.init_logvar = np.log(np.array([p0], dtype=float))

    def copy(self):
        new = LGSSM(self.a, 1.0, 1.0, self.c, self.b)
        new.log_q, new.log_r = self.log_q.copy(), self.log_r.copy()
        new.init_mean, new.init_logvar = self.init_mean.copy(), self.init_logvar.copy()
        return new

    @property
    def q_var(self):
        return np.exp(self.log_q)

    @property
    def r_var(self):
        return np.exp(self.log_r)

    def get_theta(self):
        return np.array([self.a, self.b])

    def set_theta(self, theta):
        self.a, self.b = float(theta[0]), float(theta[1])

    @property
    def n_theta(self):
        return 2

    def transition_mean(self, x, tau):
        x = np.atleast_2d(x)
        tau = np.zeros((len(x), 1)) if tau is None else np.broadcast_to(np.reshape(tau, (-1, 1)), (len(x), 1))
        return self.a * x + self.b * tau

    def transition_logpdf(self, x_next, x, tau):
        return _diag_logpdf(np.atleast_2d(x_next), self.transition_mean(x, tau), self.log_q)

    def transition_objective(self, x_prev, tau_prev, x_next, weights=None, with_log_q=False):
        x_prev = np.atleast_2d(x_prev)
        w = np.ones(len(x_prev)) if weights is None else np.asarray(weights, dtype=float)
        u = np.broadcast_to(np.reshape(tau_prev, (-1, 1)), x_prev.shape) if tau_prev is not None \
            else np.zeros_like(x_prev)
        resid = np.atleast_2d(x_next) - self.transition_mean(x_prev, u)
        var = self.q_var
        logp = _diag_logpdf(np.atleast_2d(x_next), self.transition_mean(x_prev, u), self.log_q)
        s = w[:, None] * resid / var
        g = np.array([np.sum(s * x_prev), np.sum(s * u)])
        if with_log_q:
            g_logq = -0.5 * (w.sum() - (w[:, None] * resid * resid).sum(axis=0) / var)
            g = np.concatenate([g, g_logq])
        return float(w @ logp), g

    def transition_residuals(self, x_prev, tau_prev, x_next):
        return np.atleast_2d(x_next) - self.transition_mean(x_prev, tau_prev)

    def emission_mean(self, x):
        return self.c * np.asarray(x)[..., :1]

    def emission_logpdf(self, y, x):
        return _diag_logpdf(_obs(y), self.emission_mean(x), self.log_r)

    def emission_residuals(self, y, x):
        return _obs(y) - self.emission_mean(x)

    def initial_logpdf(self, x0):
        return _diag_logpdf(np.atleast_2d(x0), self.init_mean, self.init_logvar)

    def sample_initial(self, n, rng, y0=None):
        return self.init_mean + np.exp(0.5 * self.init_logvar) * rng.standard_normal((n, 1))

    def sample_transition(self, x, tau, rng):
        mean = self.transition_mean(x, tau)
        return mean + np.exp(0.5 * self.log_q) * rng.standard_normal(mean.shape)

    def sample_emission(self, x, rng):
        mean = self.emission_mean(np.atleast_2d(x))
        return mean + np.exp(0.5 * self.log_r) * rng.standard_normal(mean.shape)

    def set_noise(self, q_var=None, r_var=None, floor=1e-12):
        if q_var is not None:
            self.log_q = np.log(np.maximum(np.atleast_1d(q_var), floor))
        if r_var is not None:
            self.log_r = np.log(np.maximum(np.atleast_1d(r_var), floor))

    def set_initial(self, mean, var, floor=1e-12):
        self.init_mean = np.atleast_1d(np.asarray(mean, dtype=float)).copy()
        self.init_logvar = np.log(np.maximum(np.atleast_1d(var), floor))

    def simulate(self, n_steps, rng, u=None):
        """Draw one (x, y) sequence of length ``n_steps + 1``."""
        u = np.zeros(n_steps + 1) if u is None else np.asarray(u, dtype=float)
        xs = np.empty(n_steps + 1)
        x = self.sample_initial(1, rng)
        xs[0] = x[0, 0]
        for t in range(1, n_steps + 1):
            x = self.sample_transition(x, u[t - 1], rng)
            xs[t] = x[0, 0]
        ys = self.c * xs + np.exp(0.5 * self.log_r[0]) * rng.standard_normal(n_steps + 1)
        return xs, ys

    def kalman(self, y, u=None):
        """Exact filtered means/variances and log-likelihood (used for diagnostics)."""
        y = np.asarray(y, dtype=float)
        u = np.zeros(len(y)) if u is None else np.asarray(u, dtype=float)
        q, r = self.q_var[0], self.r_var[0]
        m, p = self.init_mean[0], np.exp(self.init_logvar[0])
        mf, pf = np.empty(len(y)), np.empty(len(y))
        ll = 0.0
        for t in range(len(y)):
            if t:
                m, p = self.a * m + self.b * u[t - 1], self.a ** 2 * p + q
            s = self.c ** 2 * p + r
            ll -= 0.5 * (np.log(2 * np.pi * s) + (y[t] - self.c * m) ** 2 / s)
            k = p * self.c / s
            m, p = m + k * (y[t] - self.c * m), (1 - k * self.c) * p
            mf[t], pf[t] = m, p
        return mf, pf, ll


def _obs(y):
    y = np.asarray(y, dtype=float)
    return y.reshape(-1, 1) if y.ndim < 2 else y


def _diag_logpdf(x, mean, log_var):
    r = x - mean
    return -0.5 * (np.sum(LOG_2PI + log_var) + np.sum(r * r * np.exp(-log_var), axis=-1))
