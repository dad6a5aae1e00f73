"""Particle expectation-maximization for state-space models.

The E-step runs a particle filter and smoother on every sequence under the
current parameters and freezes the resulting trajectory ensembles.  The
M-step raises the Monte Carlo estimate of

    Q(theta, theta*) = sum_n E[log p(x0) + sum_t log p(y_t|x_t)
                               + sum_t log p(x_t|x_{t-1}, u_{t-1})]

with Adam on the transition parameters and closed-form moment updates for
the noise covariances and the initial distribution.

Transition terms are evaluated on a random subsample of (trajectory, t)
pairs when the ensemble is large.  The E-step is repeated on independent
particle streams (``replicates``); the spread of the Q estimates across
replicates is the Monte Carlo standard error used for step acceptance and
convergence.

Any model exposing the interface of :class:`fricid.pssm.PSSM` works; the
linear-Gaussian :class:`fricid.lgssm.LGSSM` is the exact reference.
"""
from __future__ import annotations

import csv
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, DegeneracyError, NumericalError, ParameterError
from .neural import AdamState, adam_step
from .smc import SmoothedEnsemble, filter_pass, merge_ensembles, smooth

log = logging.getLogger(__name__)

CHUNK = 20000


@dataclass
class EMConfig:
    max_iter: int = 100
    tol_factor: float = 0.5       # |dQ| < tol_factor * pooled stderr
    patience: int = 3
    n_particles: int = 200
    replicates: int = 2           # independent filters per sequence; their spread gives the stderr
    smoother: str = "genealogy"
    ess_threshold: float = 0.5
    anchor_initial: bool = False
    epochs: int = 5
    batch_size: int = 256
    lr: float = 1e-3
    mstep_pairs: int | None = 20000   # training pairs per M-step (None: all)
    elbo_pairs: int | None = 20000    # evaluation pairs per E-step (None: all)
    max_retries: int = 3
    update_q: bool = True
    update_r: bool = True
    update_initial: bool = True
    var_floor: float = 1e-10
    seed: int = 0
    common_random_numbers: bool = True
    threads: int = 1
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.tol_factor <= 0 or self.lr <= 0 or self.var_floor <= 0:
            raise ParameterError("tolerances, learning rate and variance floor must be positive")
        if self.batch_size < 1 or self.epochs < 0 or self.n_particles < 2 or self.replicates < 1:
            raise ParameterError("invalid batch size, epoch count, particle or replicate count")


@dataclass
class ELBOEstimate:
    value: float
    per_sequence: np.ndarray
    stderr: float


@dataclass
class PairSet:
    """Frozen (sequence, trajectory, t) triples with importance weights."""

    seq: np.ndarray
    traj: np.ndarray
    t: np.ndarray          # index of x_t, so the transition is t-1 -> t
    weight: np.ndarray     # per-pair weight; sums to T_n within each sequence
    exact: np.ndarray = field(default=None)  # per-sequence flag: all pairs used


def _as_2d(a):
    a = np.asarray(a, dtype=float)
    return a.reshape(len(a), -1)


def _normalized(w):
    w = np.asarray(w, dtype=float)
    return w / w.sum()


# -- E-step ------------------------------------------------------------------
def iteration_seed(seed, k) -> int:
    return int(np.random.SeedSequence([int(seed), int(k)]).generate_state(1)[0])


def e_step(model, data, config: EMConfig, iteration=0):
    """Smoothed ensembles and filter log-likelihoods for every sequence."""
    if not data:
        raise ParameterError("dataset is empty")
    seed = iteration_seed(config.seed, 0 if config.common_random_numbers else iteration)
    reps = config.replicates

    def one(n):
        y, u = data[n]
        parts, lls = [], []
        for r in range(reps):
            stream = n * reps + r
            try:
                h, ll = filter_pass(model, y, u, config.n_particles, seed=seed, stream=stream,
                                    ess_threshold=config.ess_threshold, anchor_initial=config.anchor_initial)
            except DegeneracyError as err:
                raise DegeneracyError(f"sequence {n}: {err}", t=err.t, sequence=n) from err
            parts.append(smooth(h, config.smoother, model=model, u=u, seed=seed, stream=stream))
            lls.append(ll)
        ens = merge_ensembles(parts)
        if ens.degenerate:
            log.debug("sequence %d: smoothed paths share one ancestor before mid-horizon", n)
        # log of the averaged likelihood estimates
        return ens, float(np.logaddexp.reduce(lls) - np.log(reps))

    if config.threads > 1:
        with ThreadPoolExecutor(config.threads) as pool:
            out = list(pool.map(one, range(len(data))))
    else:
        out = [one(n) for n in range(len(data))]
    return [o[0] for o in out], np.array([o[1] for o in out])


def sample_pairs(ensembles, budget, rng) -> PairSet:
    """Draw transition pairs; trajectories by weight, times uniformly.

    With ``budget=None`` (or a budget covering everything) every pair is
    used with its trajectory weight.
    """
    steps = np.array([e.trajectories.shape[1] - 1 for e in ensembles])
    total = int(steps.sum())
    seqs, trajs, ts, ws, exact = [], [], [], [], []
    for n, e in enumerate(ensembles):
        m, T = len(e.weights), int(steps[n])
        if T == 0:
            exact.append(True)
            continue
        w = _normalized(e.weights)
        if budget is None or budget >= m * total:
            mm, tt = np.meshgrid(np.arange(m), np.arange(1, T + 1), indexing="ij")
            seqs.append(np.full(mm.size, n))
            trajs.append(mm.ravel())
            ts.append(tt.ravel())
            ws.append(np.repeat(w, T))
            exact.append(True)
        else:
            k = max(1, int(round(budget * T / total)))
            seqs.append(np.full(k, n))
            trajs.append(rng.choice(m, size=k, p=w))
            ts.append(rng.integers(1, T + 1, size=k))
            ws.append(np.full(k, T / k))
            exact.append(False)
    cat = (lambda xs, dt: np.concatenate(xs).astype(dt) if xs else np.zeros(0, dt))  # noqa: E731
    return PairSet(cat(seqs, np.int64), cat(trajs, np.int64), cat(ts, np.int64), cat(ws, float),
                   np.array(exact))


def _gather(ensembles, data, pairs: PairSet, idx=None):
    sel = slice(None) if idx is None else idx
    seq, traj, t = pairs.seq[sel], pairs.traj[sel], pairs.t[sel]
    n_x = ensembles[0].trajectories.shape[2]
    x_prev = np.empty((len(seq), n_x))
    x_next = np.empty((len(seq), n_x))
    n_u = _as_2d(data[0][1]).shape[1]
    u_prev = np.empty((len(seq), n_u))
    for n in np.unique(seq):
        mask = seq == n
        tr = ensembles[n].trajectories
        x_prev[mask] = tr[traj[mask], t[mask] - 1]
        x_next[mask] = tr[traj[mask], t[mask]]
        u_prev[mask] = _as_2d(data[n][1])[t[mask] - 1]
    return x_prev, u_prev, x_next


def _transition_terms(model, ensembles, data, pairs):
    out = np.empty(len(pairs.seq))
    for s in range(0, len(out), CHUNK):
        idx = np.arange(s, min(s + CHUNK, len(out)))
        xp, up, xn = _gather(ensembles, data, pairs, idx)
        out[idx] = model.transition_logpdf(xn, xp, up)
    return out


# -- ELBO --------------------------------------------------------------------
def elbo(model, ensembles, data, pairs: PairSet | None = None) -> ELBOEstimate:
    """Monte Carlo estimate of Q(theta, theta*) and its standard error."""
    if pairs is None:
        pairs = sample_pairs(ensembles, None, None)
    trans = _transition_terms(model, ensembles, data, pairs)
    bad = ~np.isfinite(trans)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise NumericalError(f"non-finite transition term at sequence {pairs.seq[i]}, "
                             f"trajectory {pairs.traj[i]}, t={pairs.t[i]}")
    per = np.zeros(len(ensembles))
    var = np.zeros(len(ensembles))
    for n, e in enumerate(ensembles):
        w = _normalized(e.weights)
        y = _as_2d(data[n][0])
        tr = e.trajectories
        l0 = model.initial_logpdf(tr[:, 0])
        le = model.emission_logpdf(y[None, :, :], tr).sum(axis=1)
        static = l0 + le
        if not np.all(np.isfinite(static)):
            m = int(np.flatnonzero(~np.isfinite(static))[0])
            raise NumericalError(f"non-finite initial/emission term at sequence {n}, trajectory {m}")
        mask = pairs.seq == n
        groups = np.zeros(len(w), np.int64) if e.groups is None else e.groups
        reps = int(groups.max()) + 1
        if pairs.exact[n]:
            per_traj = static.copy()
            np.add.at(per_traj, pairs.traj[mask], trans[mask])
            per[n] = w @ per_traj
            var[n] = np.sum(w * w * (per_traj - per[n]) ** 2)
            rep = [_normalized(w[groups == r]) @ per_traj[groups == r] for r in range(reps)]
        else:
            tv = trans[mask]
            T = tr.shape[1] - 1
            per[n] = w @ static + T * tv.mean()
            var[n] = np.sum(w * w * (static - w @ static) ** 2) + T * T * tv.var(ddof=1) / len(tv)
            pg = groups[pairs.traj[mask]]
            rep = [_normalized(w[groups == r]) @ static[groups == r] + T * tv[pg == r].mean()
                   for r in range(reps) if np.any(pg == r)]
        if reps > 1 and len(rep) == reps:
            # spread of independent replicates captures the particle-system error too
            var[n] = np.var(rep, ddof=1) / reps
    return ELBOEstimate(float(per.sum()), per, float(np.sqrt(var.sum())))


# -- M-step ------------------------------------------------------------------
def weighted_moment(residuals, weights):
    """Per-dimension weighted second moment ``sum w r^2 / sum w``."""
    r = _as_2d(residuals)
    w = np.asarray(weights, dtype=float)
    return (w[:, None] * r * r).sum(axis=0) / w.sum()


def closed_form_updates(model, ensembles, data, train: PairSet, config: EMConfig):
    floor = config.var_floor
    if config.update_q and len(train.seq):
        res = np.empty((len(train.seq), model.n_x))
        for s in range(0, len(res), CHUNK):
            idx = np.arange(s, min(s + CHUNK, len(res)))
            xp, up, xn = _gather(ensembles, data, train, idx)
            res[idx] = model.transition_residuals(xp, up, xn)
        model.set_noise(q_var=weighted_moment(res, train.weight), floor=floor)
    if config.update_r:
        num, den = 0.0, 0.0
        for n, e in enumerate(ensembles):
            w = _normalized(e.weights)
            r = model.emission_residuals(_as_2d(data[n][0])[None, :, :], e.trajectories)
            num = num + np.einsum("m,mtd->d", w, r * r)
            den += r.shape[1]
        model.set_noise(r_var=num / den, floor=floor)
    if config.update_initial:
        x0 = np.concatenate([e.trajectories[:, 0] for e in ensembles])
        w0 = np.concatenate([_normalized(e.weights) for e in ensembles])
        mean = w0 @ x0 / w0.sum()
        model.set_initial(mean, weighted_moment(x0 - mean, w0), floor=floor)


def _ascent(model, ensembles, data, train: PairSet, config, adam: AdamState, rng):
    theta = model.get_theta()
    n = len(train.seq)
    if n == 0 or config.epochs == 0:
        return adam
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for s in range(0, n, config.batch_size):
            idx = np.sort(order[s:s + config.batch_size])
            xp, up, xn = _gather(ensembles, data, train, idx)
            w = train.weight[idx]
            _, g = model.transition_objective(xp, up, xn, w / w.sum())
            theta, adam = adam_step(adam, theta, g, maximize=True)
            model.set_theta(theta)
    return adam


def m_step(model, ensembles, data, config: EMConfig, adam: AdamState | None = None,
           iteration=0, eval_pairs: PairSet | None = None):
    """One generalized M-step; returns (model, adam state, Q before, Q after).

    The model is updated in place only when the step is accepted.
    """
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, iteration, 7]))
    if eval_pairs is None:
        eval_pairs = sample_pairs(ensembles, config.elbo_pairs, rng)
    before = elbo(model, ensembles, data, eval_pairs)
    adam = adam or AdamState.zeros(model.n_theta, lr=config.lr)
    lr = adam.lr
    for attempt in range(config.max_retries + 1):
        trial = model.copy()
        train = sample_pairs(ensembles, config.mstep_pairs, rng)
        state = AdamState(adam.m.copy(), adam.v.copy(), adam.step, lr, adam.beta1, adam.beta2, adam.eps)
        try:
            state = _ascent(trial, ensembles, data, train, config, state, rng)
            closed_form_updates(trial, ensembles, data, train, config)
            after = elbo(trial, ensembles, data, eval_pairs)
        except NumericalError as err:
            log.warning("M-step attempt %d failed numerically: %s", attempt, err)
            after = None
        if after is not None and after.value >= before.value - 2.0 * before.stderr:
            _assign(model, trial)
            return model, state, before, after
        log.warning("M-step rejected (attempt %d); halving the learning rate", attempt)
        lr *= 0.5
    raise ConvergenceError(f"M-step kept decreasing Q after {config.max_retries} retries")


def _assign(dst, src):
    if hasattr(dst, "params"):
        dst.params = src.params
    else:
        dst.__dict__.update(src.__dict__)


# -- outer loop --------------------------------------------------------------
TRACE_FIELDS = ["iteration", "q_hat", "stderr", "gain", "loglik", "param_norm", "lr"]


def em_loop(model, data, config: EMConfig, trace_path=None, timing_path=None, checkpoint=None):
    """Alternate E- and M-steps until the Q estimate stops moving.

    Iteration 0 records Q(theta_0, theta_0); iteration k >= 1 records
    Q(theta_k, theta_{k-1}) and the gain Q(theta_k, theta_{k-1}) -
    Q(theta_{k-1}, theta_{k-1}) measured on the same frozen ensemble.
    Successive ensembles are drawn independently, so the gain is the
    low-noise version of the change between iterations; the loop stops once
    it stays below ``tol_factor`` pooled standard errors for ``patience``
    iterations.  The trace is written row by row so it survives failures.
    Returns ``(model, trace)``.
    """
    trace = []
    fh = open(trace_path, "w", newline="") if trace_path else None
    th = open(timing_path, "w", newline="") if timing_path else None
    wr = csv.writer(fh, lineterminator="\n") if fh else None
    tw = csv.writer(th, lineterminator="\n") if th else None
    if wr:
        wr.writerow(TRACE_FIELDS)
    if tw:
        tw.writerow(["iteration", "wall_time"])
    t0 = time.perf_counter()

    def record(k, est, gain, ll, lr):
        row = dict(iteration=k, q_hat=est.value, stderr=est.stderr, gain=gain, loglik=float(ll),
                   param_norm=float(np.linalg.norm(model.get_theta())), lr=lr)
        trace.append(row)
        if wr:
            wr.writerow([k] + [repr(float(row[f])) for f in TRACE_FIELDS[1:]])
            fh.flush()
        if tw:
            tw.writerow([k, f"{time.perf_counter() - t0:.3f}"])
            th.flush()

    try:
        adam = AdamState.zeros(model.n_theta, lr=config.lr)
        calm = 0
        for k in range(config.max_iter):
            ens, lls = e_step(model, data, config, iteration=k)
            rng = np.random.default_rng(np.random.SeedSequence([config.seed, k + 1, 11]))
            pairs = sample_pairs(ens, config.elbo_pairs, rng)
            if k == 0:
                record(0, elbo(model, ens, data, pairs), 0.0, lls.sum(), adam.lr)
            _, adam, before, after = m_step(model, ens, data, config, adam, iteration=k + 1,
                                            eval_pairs=pairs)
            gain = after.value - before.value
            record(k + 1, after, gain, lls.sum(), adam.lr)
            pooled = np.hypot(after.stderr, before.stderr)
            calm = calm + 1 if abs(gain) < config.tol_factor * pooled else 0
            if checkpoint and config.checkpoint_every and (k + 1) % config.checkpoint_every == 0:
                checkpoint(model, k + 1)
            if calm >= config.patience:
                break
    finally:
        if fh:
            fh.close()
        if th:
            th.close()
    return model, trace


def check_monotone(trace, factor=2.0, first=20):
    """Indices where Q drops by more than ``factor`` pooled standard errors."""
    rows = trace[:first + 1]
    return [i for i in range(1, len(rows))
            if rows[i]["q_hat"] < rows[i - 1]["q_hat"]
            - factor * np.hypot(rows[i]["stderr"], rows[i - 1]["stderr"])]
