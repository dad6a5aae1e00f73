"""Synthetic measurement campaigns with known friction.

A planar arm with a ground-truth friction law tracks DoE reference
trajectories under computed-torque feed-forward plus PD feedback.  The
plant, including any internal friction state, is integrated with RK4 at a
step ten times finer than the sampling interval; the commanded torque is
held over each sample.  Gaussian noise is added to the recorded position,
velocity and torque channels only, so the controller sees the true state.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Sequence
from .doe import sample_reference, TrajectoryCoeffs
from .dynamics import PlanarArm
from .errors import ParameterError
from .friction import (GMSParams, GMSState, LuGreParams, SimpleFrictionParams, StribeckParams,
                       gms_step, gms_torque, lugre_derivative, simple_torque, stribeck_torque)


@dataclass
class NoiseLevels:
    q: float = 1e-3       # rad
    qd: float = 1e-2      # rad/s
    tau: float = 2e-2     # N m


@dataclass
class Controller:
    kp: float = 100.0
    kd: float = 6.0


def default_lugre(n_joints=1) -> LuGreParams:
    one = np.ones(n_joints)
    return LuGreParams(sigma0=20.0 * one, sigma1=1.0 * one, sigma2=0.15 * one,
                       fc=0.3 * one, fs=0.45 * one, vs=0.15 * one, delta=2.0 * one)


class TruthFriction:
    """Uniform interface over the benchmark laws for the fine-step simulator."""

    def __init__(self, kind, params, n_joints=1):
        self.kind, self.params, self.n = kind, params, n_joints
        if kind not in ("none", "simple", "stribeck", "lugre", "gms"):
            raise ParameterError(f"unknown friction law {kind!r}")

    def initial_state(self):
        if self.kind == "lugre":
            return np.zeros(self.n)
        if self.kind == "gms":
            return GMSState.rest(self.params, self.n)
        return np.zeros(0)

    def torque(self, qd, s):
        """Friction torque and the smooth-state derivative (empty if none)."""
        if self.kind == "none":
            return np.zeros_like(qd), np.zeros(0)
        if self.kind == "simple":
            return simple_torque(qd, self.params), np.zeros(0)
        if self.kind == "stribeck":
            return stribeck_torque(qd, self.params), np.zeros(0)
        if self.kind == "lugre":
            p = self.params
            zd = lugre_derivative(qd, s, p)
            return p.sigma0 * s + p.sigma1 * zd + p.sigma2 * qd, zd
        return gms_torque(qd, s, self.params), np.zeros(0)


def _fine_step(plant: PlanarArm, fr: TruthFriction, q, qd, s, tau, h):
    """One RK4 step of (q, qd, smooth friction state); GMS elements advance exactly."""
    smooth = fr.kind != "gms"

    def f(q_, qd_, s_):
        tf, sd = fr.torque(qd_, s_ if smooth else s)
        return qd_, plant.forward_dynamics(q_, qd_, tau, tf), sd

    k1 = f(q, qd, s)
    if smooth:
        k2 = f(q + 0.5 * h * k1[0], qd + 0.5 * h * k1[1], s + 0.5 * h * k1[2])
        k3 = f(q + 0.5 * h * k2[0], qd + 0.5 * h * k2[1], s + 0.5 * h * k2[2])
        k4 = f(q + h * k3[0], qd + h * k3[1], s + h * k3[2])
    else:
        k2 = f(q + 0.5 * h * k1[0], qd + 0.5 * h * k1[1], s)
        k3 = f(q + 0.5 * h * k2[0], qd + 0.5 * h * k2[1], s)
        k4 = f(q + h * k3[0], qd + h * k3[1], s)
    q_new = q + h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
    qd_new = qd + h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
    if smooth:
        s_new = s + h / 6 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
    else:
        s_new, _ = gms_step(0.5 * (qd + qd_new), s, fr.params, h)
    return q_new, qd_new, s_new


def simulate_tracking(plant: PlanarArm, friction: TruthFriction, ref, dt, substeps=10,
                      controller: Controller | None = None):
    """Closed-loop run along ``ref = (t, q_ref, qd_ref, qdd_ref)``; returns clean (q, qd, tau)."""
    ctl = controller or Controller()
    t, q_ref, qd_ref, qdd_ref = ref
    n_t, n = q_ref.shape
    q, qd = q_ref[0].copy(), qd_ref[0].copy()
    s = friction.initial_state()
    out_q, out_qd, out_tau = np.empty((n_t, n)), np.empty((n_t, n)), np.empty((n_t, n))
    h = dt / substeps
    for k in range(n_t):
        tau = (plant.inverse_dynamics(q_ref[k], qd_ref[k], qdd_ref[k])
               + ctl.kp * (q_ref[k] - q) + ctl.kd * (qd_ref[k] - qd))
        out_q[k], out_qd[k], out_tau[k] = q, qd, tau
        if k == n_t - 1:
            break
        for _ in range(substeps):
            q, qd, s = _fine_step(plant, friction, q, qd, s, tau, h)
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qd))):
            raise ParameterError(f"ground-truth simulation blew up at sample {k}")
    return out_q, out_qd, out_tau


def add_noise(clean, noise: NoiseLevels, rng):
    q, qd, tau = clean
    return (q + noise.q * rng.standard_normal(q.shape),
            qd + noise.qd * rng.standard_normal(qd.shape),
            tau + noise.tau * rng.standard_normal(tau.shape))


def synthesize_sequence(plant, friction, coeffs: TrajectoryCoeffs, dt, noise: NoiseLevels, seed,
                        substeps=10, controller=None, clean=None):
    """Simulate (or reuse ``clean``) and add measurement noise drawn from ``seed``."""
    ref = sample_reference(coeffs, dt)
    clean = clean or simulate_tracking(plant, friction, ref, dt, substeps, controller)
    q, qd, tau = add_noise(clean, noise, np.random.default_rng(seed))
    return Sequence(ref[0], q, qd, tau), clean


@dataclass
class Campaign:
    train: list
    validation: list
    clean_validation: list
    designs: list


def synthesize_campaign(plant, friction, limits, seed=0, n_designs=3, runs=2, n_validation=1, dt=0.004,
                        noise: NoiseLevels | None = None, substeps=10, controller=None, design_config=None):
    """Training runs (``n_designs`` trajectories, each executed ``runs`` times) plus validation runs.

    Design seeds and noise seeds are drawn from ``seed``; repeated runs of a
    trajectory share the clean simulation and differ in measurement noise.
    """
    from .doe import design
    noise = noise or NoiseLevels()
    ss = np.random.SeedSequence(seed)
    design_seeds = ss.generate_state(n_designs + n_validation, dtype=np.uint32)
    noise_seeds = iter(ss.spawn(n_designs * runs + n_validation))
    designs = [design(limits, int(s), design_config, plant.n_dof) for s in design_seeds]
    train, val, val_clean = [], [], []
    for i, c in enumerate(designs):
        clean = None
        reps = runs if i < n_designs else 1
        for r in range(reps):
            seq, clean = synthesize_sequence(plant, friction, c, dt, noise, next(noise_seeds), substeps,
                                             controller, clean)
            seq.meta.update(design=i, run=r)
            if i < n_designs:
                train.append(seq)
            else:
                val.append(seq)
                val_clean.append(clean)
    return Campaign(train, val, val_clean, designs)


__all__ = ["Campaign", "synthesize_campaign", "NoiseLevels", "Controller", "TruthFriction", "default_lugre", "simulate_tracking",
           "synthesize_sequence", "add_noise", "GMSParams", "SimpleFrictionParams", "StribeckParams"]
