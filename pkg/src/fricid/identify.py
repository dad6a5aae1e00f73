"""Fitting every benchmark model from measured sequences.

Static models come from least squares on filtered data, optionally refined
by the simplex search on the friction residual.  Dynamic friction models
(LuGre, GMS) are fit by simulation-error minimization: many short windows
start at filtered measured states and are rolled forward under the
measured torque inside the simplex objective.  Neural baselines are trained
with Adam on the friction residual; the latent-variable model is warm
started from the least-squares fit and refined by particle EM.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import neural
from .classical import FilterSpec, fit_stribeck_curve, ls_identify, preprocess, simplex_refine
from .data import Sequence
from .dynamics import PlanarArm
from .em import EMConfig, em_loop
from .errors import NumericalError, ParameterError
from .friction import GMSParams, LuGreParams, SimpleFrictionParams, StribeckParams
from .models import (GMSModel, LuGreModel, LVMModel, RNNModel, SimpleModel, StaticNNModel,
                     StribeckModel)
from .pssm import PSSM, PSSMConfig

log = logging.getLogger(__name__)

METHODS = ("simple", "stribeck", "lugre", "gms", "staticnn", "rnn", "lvm")


@dataclass
class Prepared:
    """Filtered training data with edges trimmed, one entry per sequence."""

    q: list
    qd: list
    qdd: list
    tau: list          # filtered torque
    tau_raw: list
    dt: float
    noise_var: np.ndarray   # high-frequency residual variance of q

    def stacked(self):
        return [np.concatenate(v) for v in (self.q, self.qd, self.qdd, self.tau)]


def prepare(seqs, cutoff=10.0, order=4, trim=50) -> Prepared:
    dt = seqs[0].dt
    spec = FilterSpec(1.0 / dt, cutoff, order)
    out = {k: [] for k in ("q", "qd", "qdd", "tau", "tau_raw")}
    resid = []
    for s in seqs:
        q, qd, qdd, tau = preprocess(s.q, s.tau, dt, spec)
        sl = slice(trim, len(s) - trim)
        for k, v in zip(("q", "qd", "qdd", "tau", "tau_raw"), (q, qd, qdd, tau, s.tau)):
            out[k].append(v[sl])
        resid.append((s.q - q)[sl])
    return Prepared(dt=dt, noise_var=np.var(np.concatenate(resid), axis=0), **out)


@dataclass
class LSFit:
    lumped: np.ndarray
    coulomb: np.ndarray
    viscous: np.ndarray
    cond: float
    residual: list     # friction residual tau - rigid(q, qd, qdd) per sequence


def fit_ls(plant: PlanarArm, prep: Prepared) -> LSFit:
    q, qd, qdd, tau = prep.stacked()
    res = ls_identify(plant, q, qd, qdd, tau, structure="simple")
    lumped, fc, fv = res.to_lumped(plant)
    resid = [t - plant.inverse_dynamics(a, b, c, theta=lumped)
             for a, b, c, t in zip(prep.q, prep.qd, prep.qdd, prep.tau)]
    return LSFit(lumped, np.maximum(fc, 0.0), np.maximum(fv, 0.0), res.cond, resid)


def fit_simple(plant, prep, ls: LSFit, dt):
    return SimpleModel(plant, ls.lumped, SimpleFrictionParams(ls.coulomb, ls.viscous), dt=dt)


def fit_stribeck(plant, prep, ls: LSFit, dt):
    v = np.concatenate(prep.qd)
    r = np.concatenate(ls.residual)
    parts = []
    for j in range(plant.n_dof):
        p, _ = fit_stribeck_curve(v[:, j], r[:, j], ls.coulomb[j], ls.viscous[j])
        parts.append(p)
    cat = lambda name: np.concatenate([getattr(p, name) for p in parts])  # noqa: E731
    params = StribeckParams(cat("fc"), cat("fs"), cat("vs"), cat("fv"), cat("delta"))
    return StribeckModel(plant, ls.lumped, params, dt=dt)


# -- simulation-error fitting ---------------------------------------------------
@dataclass
class Windows:
    q0: np.ndarray
    qd0: np.ndarray
    taus: np.ndarray     # (L, W, n)
    q: np.ndarray        # (L + 1, W, n)
    qd: np.ndarray
    scale_q: np.ndarray = field(default=None)
    scale_qd: np.ndarray = field(default=None)


def make_windows(prep: Prepared, seconds=1.5, n_windows=120) -> Windows:
    length = int(round(seconds / prep.dt))
    per = max(1, n_windows // len(prep.q))
    q0, qd0, taus, qs, qds = [], [], [], [], []
    for q, qd, tau in zip(prep.q, prep.qd, prep.tau_raw):
        starts = np.linspace(0, len(q) - length - 1, per).astype(int)
        for s in starts:
            q0.append(q[s])
            qd0.append(qd[s])
            taus.append(tau[s:s + length])
            qs.append(q[s:s + length + 1])
            qds.append(qd[s:s + length + 1])
    w = Windows(np.array(q0), np.array(qd0), np.stack(taus, axis=1), np.stack(qs, axis=1),
                np.stack(qds, axis=1))
    w.scale_q = np.std(np.concatenate(prep.q), axis=0)
    w.scale_qd = np.std(np.concatenate(prep.qd), axis=0)
    return w


def simulation_error(model, win: Windows) -> float:
    q, qd, div = model.rollout_batch(win.q0, win.qd0, win.taus)
    if np.any(div >= 0):
        return np.inf
    e = np.mean(((q - win.q) / win.scale_q) ** 2) + np.mean(((qd - win.qd) / win.scale_qd) ** 2)
    return float(e) if np.isfinite(e) else np.inf


def fit_lugre(plant, prep, ls: LSFit, stribeck: StribeckModel, dt, windows=None, max_eval=600):
    win = windows or make_windows(prep)
    sp = stribeck.params
    inertia = max(float(ls.lumped[0]), 1e-3)
    sigma0 = 50.0 * np.maximum(sp.fc, 1e-3)
    sigma1 = np.sqrt(sigma0 * inertia)
    x0 = np.log(np.concatenate([sigma0, sigma1, np.maximum(sp.fv, 1e-3), np.maximum(sp.fc, 1e-3),
                                np.maximum(sp.fs - sp.fc, 1e-3), sp.vs]))
    n = plant.n_dof

    def build(x):
        e = np.exp(np.asarray(x)).reshape(6, n)
        return LuGreParams(sigma0=e[0], sigma1=e[1], sigma2=e[2], fc=e[3], fs=e[3] + e[4], vs=e[5],
                           delta=sp.delta)

    def obj(x):
        return simulation_error(LuGreModel(plant, ls.lumped, build(x), dt=dt), win)

    res = simplex_refine(obj, x0, step=0.3, max_eval=max_eval, restarts=1)
    log.info("LuGre fit: %d evaluations, objective %.4g", res.n_eval, res.fun)
    return LuGreModel(plant, ls.lumped, build(res.x), dt=dt), res


def fit_gms(plant, prep, ls: LSFit, stribeck: StribeckModel, dt, n_elements=3, windows=None, max_eval=600):
    if plant.n_dof != 1:
        raise ParameterError("the GMS fit supports single-joint plants")
    win = windows or make_windows(prep)
    sp = stribeck.params
    total = 50.0 * max(float(sp.fc[0]), 1e-3)
    k0 = total * np.geomspace(0.5, 2.0, n_elements)
    x0 = np.log(np.concatenate([k0, np.ones(n_elements), [20.0], np.maximum(sp.fv, 1e-3),
                                np.maximum(sp.fc, 1e-3), np.maximum(sp.fs - sp.fc, 1e-3), sp.vs]))

    def build(x):
        e = np.exp(np.asarray(x))
        k, a = e[:n_elements], e[n_elements:2 * n_elements]
        c, fv, fc, dfs, vs = e[2 * n_elements:]
        return GMSParams(k, a, [c], [fv], [fc], [fc + dfs], [vs], sp.delta)

    def obj(x):
        return simulation_error(GMSModel(plant, ls.lumped, build(x), dt=dt), win)

    res = simplex_refine(obj, x0, step=0.3, max_eval=max_eval, restarts=1)
    log.info("GMS fit: %d evaluations, objective %.4g", res.n_eval, res.fun)
    return GMSModel(plant, ls.lumped, build(res.x), dt=dt), res


# -- neural baselines -------------------------------------------------------------
def _train_mlp(spec, params, x, y, steps, lr, batch, seed):
    rng = np.random.default_rng(seed)
    adam = neural.AdamState.zeros(spec.n_params, lr=lr)
    for _ in range(steps):
        idx = rng.integers(0, len(x), size=min(batch, len(x)))
        out, cache = neural.forward(spec, params, x[idx], return_cache=True)
        g, _ = neural.backward(spec, params, x[idx], 2.0 * (out - y[idx]) / len(idx), cache)
        params, adam = neural.adam_step(adam, params, g)
    return params


def fit_static_nn(plant, prep, ls: LSFit, dt, hidden=(32, 32), steps=3000, lr=3e-3, seed=0):
    n = plant.n_dof
    x = np.concatenate(prep.qd)
    r = np.concatenate(ls.residual)
    std = neural.Standardizer.fit(x)
    scale = float(np.std(r)) or 1.0
    spec = neural.MLPSpec(n, n, tuple(hidden), "mish")
    params = _train_mlp(spec, neural.init_params(spec, seed), std.apply(x), r / scale, steps, lr, 512, seed)
    return StaticNNModel(plant, ls.lumped, spec, params, std, scale, dt=dt)


def fit_rnn(plant, prep, ls: LSFit, dt, hidden=32, layers=3, window=64, batch=32, steps=800, lr=2e-3, seed=0):
    n = plant.n_dof
    xs = [np.concatenate([q, qd], axis=1) for q, qd in zip(prep.q, prep.qd)]
    std = neural.Standardizer.fit(np.concatenate(xs))
    scale = float(np.std(np.concatenate(ls.residual))) or 1.0
    spec = neural.RNNSpec(2 * n, n, hidden, layers, "relu")
    params = neural.rnn_init(spec, seed)
    adam = neural.AdamState.zeros(spec.n_params, lr=lr)
    rng = np.random.default_rng(seed)
    for _ in range(steps):
        seq = rng.integers(0, len(xs), size=batch)
        start = [rng.integers(0, len(xs[s]) - window) for s in seq]
        x = np.stack([std.apply(xs[s][a:a + window]) for s, a in zip(seq, start)], axis=1)
        y = np.stack([ls.residual[s][a:a + window] / scale for s, a in zip(seq, start)], axis=1)
        out, _, cache = neural.rnn_forward(spec, params, x, return_cache=True)
        g = neural.rnn_backward(spec, params, cache, 2.0 * (out - y) / out.size)
        params, adam = neural.adam_step(adam, params, g)
    return RNNModel(plant, ls.lumped, spec, params, std, scale, dt=dt)


# -- latent-variable model ---------------------------------------------------------
@dataclass
class LVMConfig:
    n_latent: int = 1
    friction_hidden: tuple = (32, 32)
    latent_hidden: tuple = (32,)
    em_steps: int = 1250          # leading samples of each sequence used by EM
    pretrain_steps: int = 3000
    latent_var: float = 1e-4
    freeze_lumped: bool = False
    em: EMConfig = field(default_factory=lambda: EMConfig(max_iter=20, anchor_initial=True, epochs=2, lr=3e-4))


def warm_start_lvm(plant, prep: Prepared, ls: LSFit, dt, cfg: LVMConfig, seed=0) -> PSSM:
    n = plant.n_dof
    pc = PSSMConfig(n_latent=cfg.n_latent, friction_hidden=tuple(cfg.friction_hidden),
                    latent_hidden=tuple(cfg.latent_hidden), dt=dt, freeze_lumped=cfg.freeze_lumped)
    q, qd = np.concatenate(prep.q), np.concatenate(prep.qd)
    r = np.concatenate(ls.residual)
    base = neural.Standardizer.fit(np.concatenate([q, qd], axis=1))
    std = neural.Standardizer(np.concatenate([base.mean, np.zeros(cfg.n_latent)]),
                              np.concatenate([base.scale, np.ones(cfg.n_latent)]))
    pc.torque_scale = float(np.std(r)) or 1.0
    model = PSSM.initialize(plant, pc, seed, lumped=ls.lumped, standardizer=std)
    # friction net reproduces the static residual at z = 0
    x = np.concatenate([q, qd, np.zeros((len(q), cfg.n_latent))], axis=1)
    model.params.friction = _train_mlp(model.fric_spec, model.params.friction, std.apply(x), r / pc.torque_scale,
                                       cfg.pretrain_steps, 3e-3, 512, seed)
    # latent dynamics start at rest
    spec = model.lat_spec
    w0, shape, b0, nb = spec.layout()[-1]
    model.params.latent[w0:w0 + shape[0] * shape[1]] = 0.0
    model.params.latent[b0:b0 + nb] = 0.0
    # noise levels from one-step residuals of the warm-started mean dynamics
    res = []
    for qq, vv, tt in zip(prep.q, prep.qd, prep.tau_raw):
        xs = np.concatenate([qq, vv, np.zeros((len(qq), cfg.n_latent))], axis=1)
        pred = model.rk4_step(xs[:-1], tt[:-1], check=False)
        res.append(xs[1:] - pred)
    qv = np.var(np.concatenate(res), axis=0)
    qv[2 * n:] = cfg.latent_var
    model.set_noise(q_var=np.maximum(qv, 1e-12), r_var=np.maximum(prep.noise_var, 1e-12))
    init_var = np.concatenate([prep.noise_var, np.full(n, 1e-4), np.full(cfg.n_latent, 1e-2)])
    model.set_initial(np.zeros(model.n_x), init_var)
    return model


def fit_lvm(plant, seqs, prep, ls: LSFit, dt, cfg: LVMConfig | None = None, seed=0, trace_path=None,
            timing_path=None, checkpoint=None):
    cfg = cfg or LVMConfig()
    model = warm_start_lvm(plant, prep, ls, dt, cfg, seed)
    data = [(s.q[:cfg.em_steps], s.tau[:cfg.em_steps]) for s in seqs]
    model, trace = em_loop(model, data, cfg.em, trace_path=trace_path, timing_path=timing_path,
                           checkpoint=checkpoint)
    return LVMModel(model), trace


@dataclass
class IdentifyOptions:
    filter_cutoff: float = 10.0
    filter_order: int = 4
    trim: int = 50
    window_seconds: float = 1.5
    windows: int = 120
    simplex_evaluations: int = 600
    gms_elements: int = 3
    nn_hidden: tuple = (32, 32)
    nn_steps: int = 3000
    nn_lr: float = 3e-3
    rnn_hidden: int = 32
    rnn_layers: int = 3
    rnn_window: int = 64
    rnn_steps: int = 800
    rnn_lr: float = 2e-3


def identify(method, plant, seqs, seed=0, options: IdentifyOptions | None = None, lvm_config=None,
             trace_path=None, timing_path=None, cache=None):
    """Fit one model by name; ``cache`` (a dict) shares intermediate fits between calls."""
    if method not in METHODS:
        raise ParameterError(f"unknown identification method {method!r}")
    o = options or IdentifyOptions()
    dt = seqs[0].dt
    cache = {} if cache is None else cache
    if "prep" not in cache:
        cache["prep"] = prepare(seqs, o.filter_cutoff, o.filter_order, o.trim)
    prep = cache["prep"]
    if "ls" not in cache:
        cache["ls"] = fit_ls(plant, prep)
    ls = cache["ls"]
    if method == "simple":
        return fit_simple(plant, prep, ls, dt)
    if method in ("stribeck", "lugre", "gms") and "stribeck" not in cache:
        cache["stribeck"] = fit_stribeck(plant, prep, ls, dt)
    if method == "stribeck":
        return cache["stribeck"]
    if method in ("lugre", "gms"):
        if "windows" not in cache:
            cache["windows"] = make_windows(prep, o.window_seconds, o.windows)
        if method == "lugre":
            return fit_lugre(plant, prep, ls, cache["stribeck"], dt, windows=cache["windows"],
                             max_eval=o.simplex_evaluations)[0]
        return fit_gms(plant, prep, ls, cache["stribeck"], dt, o.gms_elements, windows=cache["windows"],
                       max_eval=o.simplex_evaluations)[0]
    if method == "staticnn":
        return fit_static_nn(plant, prep, ls, dt, o.nn_hidden, o.nn_steps, o.nn_lr, seed)
    if method == "rnn":
        return fit_rnn(plant, prep, ls, dt, o.rnn_hidden, o.rnn_layers, o.rnn_window, steps=o.rnn_steps,
                       lr=o.rnn_lr, seed=seed)
    model, trace = fit_lvm(plant, seqs, prep, ls, dt, lvm_config, seed, trace_path, timing_path)
    if not trace:
        raise NumericalError("EM produced no iterations")
    cache["lvm_trace"] = trace
    return model
