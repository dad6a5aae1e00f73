"""Bootstrap particle filter and trajectory smoothers.

The filter propagates particles through the model's transition sampler,
weights them by the emission density and resamples systematically when the
effective sample size falls below a fraction of the particle count.  Weights
live in log space throughout.

Randomness for step ``t`` of sequence ``stream`` comes from
``SeedSequence([seed, stream, t])`` so a pass is reproducible step by step.
"""
from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import DegeneracyError, ParameterError


def step_rng(seed, stream, t) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(stream), int(t)]))


def normalize_log_weights(logw):
    """Return (normalized weights, log normalizer)."""
    logw = np.asarray(logw, dtype=float)
    top = np.max(logw)
    if not np.isfinite(top):
        return None, -np.inf
    w = np.exp(logw - top)
    s = w.sum()
    return w / s, top + np.log(s)


def effective_sample_size(weights) -> float:
    w = np.asarray(weights, dtype=float)
    return 1.0 / np.sum(w * w)


def systematic_resample(weights, seed=None) -> np.ndarray:
    """Ancestor indices by systematic resampling (one shared uniform offset)."""
    w = np.asarray(weights, dtype=float)
    n = len(w)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    u = (rng.random() + np.arange(n)) / n
    cdf = np.cumsum(w)
    cdf[-1] = 1.0
    return np.searchsorted(cdf, u, side="right").astype(np.int64)


@dataclass
class ParticleSet:
    """Filter history.

    ``particles[t]`` are the particles after propagation to ``t`` and
    ``log_weights[t]`` their normalized log-weights.  ``ancestors[t][i]`` is the
    index at ``t-1`` that particle ``i`` at ``t`` descends from.
    """

    particles: np.ndarray      # (T+1, N, n_x)
    log_weights: np.ndarray    # (T+1, N), normalized
    ancestors: np.ndarray      # (T+1, N); row 0 is the identity
    ess: np.ndarray            # (T+1,) before any resampling at the next step
    log_increments: np.ndarray  # (T+1,)
    resampled: np.ndarray      # (T+1,) bool, resampling before propagating to t

    @property
    def n_particles(self):
        return self.particles.shape[1]

    @property
    def n_steps(self):
        return self.particles.shape[0] - 1

    @property
    def loglik(self):
        return float(self.log_increments.sum())

    def weights(self, t):
        return np.exp(self.log_weights[t])

    def filtered_mean(self):
        w = np.exp(self.log_weights)
        return np.einsum("tn,tnd->td", w, self.particles)

    def filtered_var(self):
        w = np.exp(self.log_weights)
        m = self.filtered_mean()
        return np.einsum("tn,tnd->td", w, (self.particles - m[:, None, :]) ** 2)

    def write_diagnostics(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["t", "ess", "log_increment"])
            for t in range(self.n_steps + 1):
                wr.writerow([t, repr(float(self.ess[t])), repr(float(self.log_increments[t]))])


@dataclass
class SmoothedEnsemble:
    """Weighted state trajectories approximating the smoothing posterior."""

    trajectories: np.ndarray  # (M, T+1, n_x)
    weights: np.ndarray       # (M,), sums to one
    degenerate: bool = False
    n_unique_mid: int = 0
    groups: np.ndarray | None = None   # replicate label per trajectory

    @property
    def n_groups(self):
        return 1 if self.groups is None else int(self.groups.max()) + 1

    def mean(self):
        return np.einsum("m,mtd->td", self.weights, self.trajectories)

    def var(self):
        m = self.mean()
        return np.einsum("m,mtd->td", self.weights, (self.trajectories - m) ** 2)

    def checksum(self) -> str:
        h = hashlib.sha256(self.trajectories.tobytes())
        h.update(self.weights.tobytes())
        return h.hexdigest()


def merge_ensembles(parts) -> SmoothedEnsemble:
    """Pool independent replicate ensembles with equal total weight each."""
    if len(parts) == 1:
        return parts[0]
    traj = np.concatenate([p.trajectories for p in parts])
    w = np.concatenate([p.weights / p.weights.sum() / len(parts) for p in parts])
    groups = np.concatenate([np.full(len(p.weights), r) for r, p in enumerate(parts)])
    return SmoothedEnsemble(traj, w, degenerate=any(p.degenerate for p in parts),
                            n_unique_mid=sum(p.n_unique_mid for p in parts), groups=groups)


def filter_pass(model, y, u, n_particles=200, seed=0, stream=0, ess_threshold=0.5,
                anchor_initial=False):
    """Run a bootstrap SIR filter over one sequence.

    ``y`` has shape (T+1, n_y) and ``u`` (T+1, n_u); the input at ``t-1``
    drives the transition into ``t``.  Returns the :class:`ParticleSet` and the
    log-likelihood estimate.
    """
    if n_particles < 2:
        raise ParameterError("at least two particles are required")
    y = np.asarray(y, dtype=float).reshape(len(y), -1)
    u = np.asarray(u, dtype=float).reshape(len(u), -1)
    if len(u) != len(y):
        raise ParameterError("input and output sequences differ in length")
    n, steps = n_particles, len(y) - 1
    xs = np.empty((steps + 1, n, model.n_x))
    logws = np.empty((steps + 1, n))
    anc = np.empty((steps + 1, n), dtype=np.int64)
    ess = np.empty(steps + 1)
    incr = np.empty(steps + 1)
    res = np.zeros(steps + 1, dtype=bool)

    ident = np.arange(n)
    prev_logw = np.full(n, -np.log(n))
    x = None
    for t in range(steps + 1):
        rng = step_rng(seed, stream, t)
        if t == 0:
            x = model.sample_initial(n, rng, y[0] if anchor_initial else None)
            idx = ident
        else:
            if ess[t - 1] < ess_threshold * n:
                idx = systematic_resample(np.exp(prev_logw), rng)
                prev_logw = np.full(n, -np.log(n))
                res[t] = True
            else:
                idx = ident
            x = model.sample_transition(x[idx], np.broadcast_to(u[t - 1], (n, u.shape[1])), rng)
        ll = model.emission_logpdf(y[t], x)
        ll = np.where(np.isfinite(ll), ll, -np.inf)
        w, lognorm = normalize_log_weights(prev_logw + ll)
        if w is None:
            raise DegeneracyError(f"all particle weights vanished at t={t}", t=t)
        incr[t] = lognorm
        with np.errstate(divide="ignore"):
            prev_logw = np.log(w)
        xs[t], logws[t], anc[t] = x, prev_logw, idx
        ess[t] = effective_sample_size(w)
    hist = ParticleSet(xs, logws, anc, ess, incr, res)
    return hist, hist.loglik


def smooth(history: ParticleSet, mode="genealogy", model=None, u=None, n_draws=None, seed=0,
           stream=0):
    """Smoothing posterior from a filter history.

    ``genealogy`` traces ancestral paths of the final particles;
    ``backward`` draws ``n_draws`` trajectories with backward kernels built
    from the model's Gaussian transition density (needs ``model`` and ``u``).
    """
    if mode == "genealogy":
        return _genealogy(history)
    if mode == "backward":
        if model is None or u is None:
            raise ParameterError("backward simulation needs the model and the inputs")
        return _backward_simulation(history, model, u, n_draws or history.n_particles, seed, stream)
    raise ParameterError(f"unknown smoothing mode {mode!r}")


def _genealogy(h: ParticleSet) -> SmoothedEnsemble:
    steps, n = h.n_steps, h.n_particles
    paths = np.empty((n, steps + 1, h.particles.shape[2]))
    idx = np.arange(n)
    n_mid = n
    for t in range(steps, -1, -1):
        paths[:, t] = h.particles[t, idx]
        if t == steps // 2:
            n_mid = len(np.unique(idx))
        idx = h.ancestors[t, idx]
    w = np.exp(h.log_weights[steps])
    w = w / w.sum()
    return SmoothedEnsemble(paths, w, degenerate=steps > 0 and n_mid == 1, n_unique_mid=n_mid)


def _backward_simulation(h: ParticleSet, model, u, m, seed, stream) -> SmoothedEnsemble:
    u = np.asarray(u, dtype=float).reshape(len(u), -1)
    steps, n = h.n_steps, h.n_particles
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(stream), steps + 1]))
    paths = np.empty((m, steps + 1, h.particles.shape[2]))
    w_t = np.exp(h.log_weights[steps])
    j = rng.choice(n, size=m, p=w_t / w_t.sum())
    paths[:, steps] = h.particles[steps, j]
    inv_q = 1.0 / model.q_var
    for t in range(steps - 1, -1, -1):
        mean = model.transition_mean(h.particles[t], np.broadcast_to(u[t], (n, u.shape[1])))
        d = paths[:, t + 1][:, None, :] - mean[None, :, :]
        logk = h.log_weights[t][None, :] - 0.5 * np.sum(d * d * inv_q, axis=-1)
        logk -= logk.max(axis=1, keepdims=True)
        k = np.exp(logk)
        cdf = np.cumsum(k, axis=1)
        draw = rng.random(m)[:, None] * cdf[:, -1:]
        j = np.minimum((cdf < draw).sum(axis=1), n - 1)
        paths[:, t] = h.particles[t, j]
    return SmoothedEnsemble(paths, np.full(m, 1.0 / m), degenerate=False, n_unique_mid=m)
