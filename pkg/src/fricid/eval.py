"""Open-loop validation of identified models.

Every model is started at the measured initial state of a validation
sequence and driven by its measured torques with no feedback.  Errors are
pooled over the position and velocity channels of all joints, in SI units,
so magnitudes are specific to this benchmark.
"""
from __future__ import annotations

import csv
import html
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import Sequence
from .errors import ShapeError
from .models import BLOWUP, ForwardModel, LVMModel
from .smc import filter_pass


@dataclass
class Prediction:
    q: np.ndarray
    qd: np.ndarray
    diverged_at: int | None     # first sample index beyond the blow-up threshold
    dt: float

    @property
    def diverged(self):
        return self.diverged_at is not None

    @property
    def divergence_time(self):
        return None if self.diverged_at is None else self.diverged_at * self.dt

    def stacked(self):
        return np.concatenate([self.q, self.qd], axis=1)


def open_loop_simulate(model: ForwardModel, seq: Sequence, horizon=None, blowup=BLOWUP) -> Prediction:
    """Roll ``model`` forward under the measured torques for ``horizon`` samples (all by default).

    After divergence the series is truncated at the last finite sample.
    """
    n = len(seq) if horizon is None else min(int(horizon), len(seq))
    q, qd, div = model.rollout(seq.q[0], seq.qd[0], seq.tau[:n - 1], blowup=blowup)
    if div is not None:
        q, qd = q[:div], qd[:div]
    return Prediction(q, qd, div, seq.dt)


def score(predicted, measured, horizon=None):
    """``(MSE, MAE)`` over the first ``horizon`` rows, pooled over all columns."""
    p = np.asarray(predicted, dtype=float)
    m = np.asarray(measured, dtype=float)
    if p.shape != m.shape:
        raise ShapeError(f"predicted {p.shape} and measured {m.shape} series differ")
    if horizon is not None:
        p, m = p[:horizon], m[:horizon]
    e = p - m
    return float(np.mean(e * e)), float(np.mean(np.abs(e)))


def measured_channels(seq: Sequence, n=None):
    return np.concatenate([seq.q, seq.qd], axis=1)[:n]


# -- friction characteristics ---------------------------------------------------
def friction_curve(model: ForwardModel, seq: Sequence, n_particles=200, seed=0):
    """Time-ordered ``(qd, tau_f)`` along the measured motion.

    Internal friction states are driven by the measured velocity; the latent
    state of an LVM is the filtered mean from a particle filter pass.
    """
    if isinstance(model, LVMModel):
        pssm = model.pssm
        hist, _ = filter_pass(pssm, seq.q if pssm.n_y == seq.n_joints else measured_channels(seq), seq.tau,
                           n_particles=n_particles, seed=seed, anchor_initial=True)
        z = hist.filtered_mean()[:, 2 * seq.n_joints:]
        return seq.qd, model.friction_along(seq.q, seq.qd, z=z)
    return seq.qd, model.friction_along(seq.q, seq.qd, seq.dt)


def loop_area(v, tau):
    """Signed contour integral of ``tau dv`` (trapezoid rule), per column."""
    v = np.asarray(v, dtype=float)
    tau = np.asarray(tau, dtype=float)
    return np.sum(0.5 * (tau[1:] + tau[:-1]) * np.diff(v, axis=0), axis=0)


# -- report -----------------------------------------------------------------------
@dataclass
class ReportRow:
    name: str
    mse_horizon: float
    mae_horizon: float
    mse_full: float
    mae_full: float
    joint_mse: np.ndarray        # full horizon, q and qd channels of each joint pooled
    joint_mae: np.ndarray
    diverged: bool
    divergence_time: float | None
    error: str | None = None


@dataclass
class PredictionReport:
    rows: list
    horizon: int
    abs_errors: dict = field(default_factory=dict)     # name -> (T, 2n) absolute errors
    curves: dict = field(default_factory=dict)         # name -> (qd, tau_f)
    dt: float = 0.004

    def row(self, name):
        return next(r for r in self.rows if r.name == name)

    def table(self):
        head = f"{'model':10s} {'MSE 10s':>10s} {'MAE 10s':>10s} {'MSE full':>10s} {'MAE full':>10s}"
        lines = [head]
        for r in self.rows:
            lines.append(f"{r.name:10s} {r.mse_horizon:10.4g} {r.mae_horizon:10.4g} {r.mse_full:10.4g} "
                         f"{r.mae_full:10.4g}" + ("  diverged" if r.diverged else ""))
        return "\n".join(lines)


def _evaluate_one(name, model, seq, horizon, curves):
    pred = open_loop_simulate(model, seq)
    meas = measured_channels(seq)
    n = seq.n_joints
    got = pred.stacked()
    err = np.abs(got - meas[:len(got)])
    nan = float("nan")
    if pred.diverged_at is None or pred.diverged_at >= horizon:
        mse_h, mae_h = score(got[:horizon], meas[:horizon])
    else:
        mse_h = mae_h = nan
    if pred.diverged:
        mse_f = mae_f = nan
        jm = ja = np.full(n, nan)
    else:
        mse_f, mae_f = score(got, meas)
        e = got - meas
        jm = np.array([np.mean(e[:, [j, n + j]] ** 2) for j in range(n)])
        ja = np.array([np.mean(np.abs(e[:, [j, n + j]])) for j in range(n)])
    row = ReportRow(name, mse_h, mae_h, mse_f, mae_f, jm, ja, pred.diverged, pred.divergence_time)
    curve = friction_curve(model, seq) if curves else None
    return row, err, curve


def benchmark_report(models: dict, seq: Sequence, horizon_s=10.0, out_dir=None, threads=1, curves=True):
    """Score every model on ``seq``; a model that raises still gets a (flagged) row."""
    horizon = int(round(horizon_s / seq.dt)) + 1
    names = list(models)

    def run(name):
        try:
            return _evaluate_one(name, models[name], seq, horizon, curves)
        except Exception as err:  # noqa: BLE001 - reported per model
            nan = float("nan")
            n = seq.n_joints
            row = ReportRow(name, nan, nan, nan, nan, np.full(n, nan), np.full(n, nan), True, None,
                            f"{type(err).__name__}: {err}")
            return row, None, None

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(run, names))
    else:
        results = [run(n) for n in names]
    rep = PredictionReport([r[0] for r in results], horizon, dt=seq.dt)
    for name, (_, err, curve) in zip(names, results):
        if err is not None:
            rep.abs_errors[name] = err
        if curve is not None:
            rep.curves[name] = curve
    if out_dir is not None:
        write_report(rep, out_dir)
    return rep


# -- artifacts ----------------------------------------------------------------------
def write_report(rep: PredictionReport, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "mse_10s", "mae_10s", "mse_full", "mae_full", "diverged", "divergence_time", "error"])
        for r in rep.rows:
            w.writerow([r.name] + [repr(float(x)) for x in (r.mse_horizon, r.mae_horizon, r.mse_full, r.mae_full)]
                       + [int(r.diverged), "" if r.divergence_time is None else repr(r.divergence_time),
                          r.error or ""])
    with open(os.path.join(out_dir, "abs_errors.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        names = list(rep.abs_errors)
        if names:
            nc = rep.abs_errors[names[0]].shape[1]
            n = nc // 2
            labels = [f"q{j + 1}" for j in range(n)] + [f"qd{j + 1}" for j in range(n)]
            w.writerow(["t"] + [f"{m}_{c}" for m in names for c in labels])
            length = max(len(e) for e in rep.abs_errors.values())
            for k in range(length):
                row = [repr(k * rep.dt)]
                for m in names:
                    e = rep.abs_errors[m]
                    row += [repr(float(x)) for x in e[k]] if k < len(e) else [""] * nc
                w.writerow(row)
    if rep.abs_errors:
        with open(os.path.join(out_dir, "abs_errors.svg"), "w", encoding="utf-8") as fh:
            fh.write(error_svg(rep))
    if rep.curves:
        with open(os.path.join(out_dir, "friction.svg"), "w", encoding="utf-8") as fh:
            fh.write(scatter_svg(rep.curves))


PALETTE = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"]


def _panel(x0, y0, w, h, title, xr, yr, xlabel, ylabel, log_y=False):
    parts = [f'<rect x="{x0}" y="{y0}" width="{w}" height="{h}" fill="none" stroke="#444"/>',
             f'<text x="{x0 + w / 2:.1f}" y="{y0 - 6}" text-anchor="middle" font-size="12">{html.escape(title)}</text>',
             f'<text x="{x0 + w / 2:.1f}" y="{y0 + h + 28}" text-anchor="middle" font-size="11">{xlabel}</text>',
             f'<text x="{x0 - 40}" y="{y0 + h / 2:.1f}" font-size="11" transform="rotate(-90 {x0 - 40} '
             f'{y0 + h / 2:.1f})" text-anchor="middle">{ylabel}</text>']
    for frac in (0.0, 0.5, 1.0):
        xv = xr[0] + frac * (xr[1] - xr[0])
        yv = yr[0] + frac * (yr[1] - yr[0])
        ylab = f"1e{yv:.0f}" if log_y else f"{yv:.3g}"
        parts.append(f'<text x="{x0 + frac * w:.1f}" y="{y0 + h + 14}" font-size="10" text-anchor="middle">'
                     f'{xv:.3g}</text>')
        parts.append(f'<text x="{x0 - 4}" y="{y0 + h - frac * h + 3:.1f}" font-size="10" text-anchor="end">'
                     f'{ylab}</text>')
    return parts


def _map(x, y, x0, y0, w, h, xr, yr):
    px = x0 + (x - xr[0]) / (xr[1] - xr[0] or 1.0) * w
    py = y0 + h - (y - yr[0]) / (yr[1] - yr[0] or 1.0) * h
    return px, py


def error_svg(rep: PredictionReport, max_points=800) -> str:
    """Log-scale absolute errors, one panel per channel."""
    names = list(rep.abs_errors)
    nc = rep.abs_errors[names[0]].shape[1]
    n = nc // 2
    labels = [f"|e q{j + 1}| (rad)" for j in range(n)] + [f"|e qd{j + 1}| (rad/s)" for j in range(n)]
    w, h, pad = 520, 220, 70
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w + 2 * pad + 120}" height="{nc * (h + pad) + pad}">']
    for c in range(nc):
        x0, y0 = pad, pad + c * (h + pad)
        logs = [np.log10(np.maximum(e[:, c], 1e-12)) for e in rep.abs_errors.values()]
        t_end = max(len(e) for e in logs) * rep.dt
        lo = np.floor(min(np.percentile(v, 1) for v in logs))
        hi = np.ceil(max(v.max() for v in logs))
        out += _panel(x0, y0, w, h, labels[c], (0.0, t_end), (lo, hi), "t (s)", "log10 error", log_y=True)
        for i, (name, v) in enumerate(zip(names, logs)):
            step = max(1, len(v) // max_points)
            idx = np.arange(0, len(v), step)
            pts = " ".join("{:.1f},{:.1f}".format(*_map(k * rep.dt, max(v[k], lo), x0, y0, w, h, (0.0, t_end),
                                                          (lo, hi))) for k in idx)
            col = PALETTE[i % len(PALETTE)]
            out.append(f'<polyline fill="none" stroke="{col}" stroke-width="1" points="{pts}"/>')
            if c == 0:
                out.append(f'<text x="{x0 + w + 10}" y="{y0 + 14 * (i + 1)}" font-size="11" fill="{col}">'
                           f'{html.escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def scatter_svg(curves: dict, max_points=1500) -> str:
    """Friction torque against velocity, one panel per joint."""
    names = list(curves)
    n = np.atleast_2d(curves[names[0]][0].T).shape[0]
    w, h, pad = 420, 320, 70
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{n * (w + pad) + pad + 120}" height="{h + 2 * pad}">']
    for j in range(n):
        x0, y0 = pad + j * (w + pad), pad
        vs = [np.asarray(c[0])[:, j] for c in curves.values()]
        ts = [np.asarray(c[1])[:, j] for c in curves.values()]
        xr = (min(v.min() for v in vs), max(v.max() for v in vs))
        finite = [t[np.isfinite(t)] for t in ts]
        yr = (min(t.min() for t in finite if t.size), max(t.max() for t in finite if t.size))
        out += _panel(x0, y0, w, h, f"joint {j + 1}", xr, yr, "qd (rad/s)", "friction (N m)")
        for i, (name, v, t) in enumerate(zip(names, vs, ts)):
            col = PALETTE[i % len(PALETTE)]
            step = max(1, len(v) // max_points)
            for k in range(0, len(v), step):
                if np.isfinite(t[k]):
                    px, py = _map(v[k], t[k], x0, y0, w, h, xr, yr)
                    out.append(f'<circle cx="{px:.1f}" cy="{py:.1f}" r="1" fill="{col}"/>')
            if j == 0:
                out.append(f'<text x="{pad + n * (w + pad)}" y="{y0 + 14 * (i + 1)}" font-size="11" '
                           f'fill="{col}">{html.escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
