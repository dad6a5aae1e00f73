"""Identified forward models sharing one open-loop roll-out interface.

Every model maps a measured initial state and a torque sequence to predicted
``(q, qd)``.  States are batched as ``(B, n_joints)`` so fitting code can
simulate many windows at once.  Rigid-body terms use the plant's lumped
parameter vector; friction differs per model:

* ``simple``    Coulomb plus viscous
* ``stribeck``  exponential Stribeck curve plus viscous
* ``lugre``     bristle state integrated with the rigid body
* ``gms``       Maxwell-slip elements advanced exactly over each step
* ``staticnn``  MLP on the joint velocities
* ``rnn``       recurrent friction net on ``(q, qd)`` with hidden memory
* ``lvm``       probabilistic state-space model with latent state
"""
from __future__ import annotations

import numpy as np

from . import neural
from .dynamics import PlanarArm
from .errors import ParameterError
from .friction import (GMSParams, GMSState, LuGreParams, SimpleFrictionParams, StribeckParams,
                       gms_step, gms_torque, lugre_derivative, lugre_steady_state, simple_torque,
                       stribeck_torque)
from .pssm import ModelParams, PSSM, PSSMConfig

BLOWUP = 100.0


class ForwardModel:
    kind = "base"
    static = True

    def __init__(self, plant: PlanarArm, lumped, dt=0.004, substeps=1):
        self.plant = plant
        self.lumped = np.asarray(lumped, dtype=float)
        self.dt = float(dt)
        self.substeps = int(substeps)

    @property
    def n(self):
        return self.plant.n_dof

    # -- friction hooks -------------------------------------------------
    def initial_state(self, q0, qd0):
        return np.zeros(q0.shape[:-1] + (0,))

    def friction(self, q, qd, s):
        """Return (tau_f, ds/dt) for smooth internal states."""
        raise NotImplementedError

    def advance_state(self, q, qd, q_new, qd_new, s, h):
        """Non-smooth state update after a rigid step (default: integrated with RK4)."""
        return s

    smooth_state = True

    def accel(self, q, qd, tau, tau_f):
        return self.plant.forward_dynamics(q, qd, tau, tau_f, theta=self.lumped)

    def step(self, q, qd, s, tau):
        h = self.dt / self.substeps
        for _ in range(self.substeps):
            q, qd, s = self._rk4(q, qd, s, tau, h)
        return q, qd, s

    def _rk4(self, q, qd, s, tau, h):
        sm = self.smooth_state

        def f(q_, qd_, s_):
            tf, sd = self.friction(q_, qd_, s_ if sm else s)
            return qd_, self.accel(q_, qd_, tau, tf), sd

        k1 = f(q, qd, s)
        k2 = f(q + 0.5 * h * k1[0], qd + 0.5 * h * k1[1], s + 0.5 * h * k1[2] if sm else s)
        k3 = f(q + 0.5 * h * k2[0], qd + 0.5 * h * k2[1], s + 0.5 * h * k2[2] if sm else s)
        k4 = f(q + h * k3[0], qd + h * k3[1], s + h * k3[2] if sm else s)
        q_new = q + h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        qd_new = qd + h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        if sm:
            s_new = s + h / 6 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
        else:
            s_new = self.advance_state(q, qd, q_new, qd_new, s, h)
        return q_new, qd_new, s_new

    # -- roll-outs --------------------------------------------------------
    def rollout_batch(self, q0, qd0, taus, blowup=BLOWUP):
        """Open-loop predictions for ``B`` windows.

        ``q0, qd0`` are ``(B, n)``, ``taus`` is ``(T, B, n)`` with ``taus[k]``
        held over ``[t_k, t_{k+1})``.  Returns ``q, qd`` of shape
        ``(T + 1, B, n)`` and the first diverged index per window (-1 if none).
        Diverged windows are frozen at NaN from that index on.
        """
        q = np.array(q0, dtype=float)
        qd = np.array(qd0, dtype=float)
        s = self.initial_state(q, qd)
        steps = len(taus)
        out_q = np.full((steps + 1,) + q.shape, np.nan)
        out_qd = np.full((steps + 1,) + q.shape, np.nan)
        out_q[0], out_qd[0] = q, qd
        div = np.full(q.shape[0], -1)
        alive = np.ones(q.shape[0], dtype=bool)
        with np.errstate(all="ignore"):
            for k in range(steps):
                q, qd, s = self.step(q, qd, s, taus[k])
                bad = alive & ~(np.all(np.isfinite(q), axis=-1) & np.all(np.abs(q) <= blowup, axis=-1)
                                & np.all(np.isfinite(qd), axis=-1))
                if bad.any():
                    div[bad] = k + 1
                    alive &= ~bad
                    q = np.where(alive[:, None], q, 0.0)
                    qd = np.where(alive[:, None], qd, 0.0)
                    s = self._reset_dead(s, alive)
                out_q[k + 1][alive] = q[alive]
                out_qd[k + 1][alive] = qd[alive]
                if not alive.any():
                    break
        return out_q, out_qd, div

    def _reset_dead(self, s, alive):
        if isinstance(s, np.ndarray) and s.ndim >= 1 and s.shape[0] == len(alive):
            return np.where(alive.reshape((-1,) + (1,) * (s.ndim - 1)), s, 0.0)
        return s

    def rollout(self, q0, qd0, taus, blowup=BLOWUP):
        q, qd, div = self.rollout_batch(np.atleast_2d(q0), np.atleast_2d(qd0), np.asarray(taus)[:, None, :],
                                        blowup)
        return q[:, 0], qd[:, 0], (None if div[0] < 0 else int(div[0]))

    # -- friction characteristic ------------------------------------------
    def friction_along(self, q, qd, dt=None):
        """Friction torque with internal states driven by a measured motion."""
        tf, _ = self.friction(q, qd, self.initial_state(q, qd))
        return tf

    # -- persistence -------------------------------------------------------
    def meta(self) -> dict:
        return {"kind": self.kind, "dt": self.dt, "substeps": self.substeps}

    def arrays(self) -> dict:
        return {"lumped": self.lumped}


class SimpleModel(ForwardModel):
    kind = "simple"

    def __init__(self, plant, lumped, params: SimpleFrictionParams, **kw):
        super().__init__(plant, lumped, **kw)
        self.params = params

    def friction(self, q, qd, s):
        return simple_torque(qd, self.params), s[..., :0]

    def arrays(self):
        return {"lumped": self.lumped, "coulomb": self.params.coulomb, "viscous": self.params.viscous}


class StribeckModel(ForwardModel):
    kind = "stribeck"

    def __init__(self, plant, lumped, params: StribeckParams, **kw):
        super().__init__(plant, lumped, **kw)
        self.params = params

    def friction(self, q, qd, s):
        return stribeck_torque(qd, self.params), s[..., :0]

    def arrays(self):
        p = self.params
        return {"lumped": self.lumped, "fc": p.fc, "fs": p.fs, "vs": p.vs, "fv": p.fv, "delta": p.delta}


class LuGreModel(ForwardModel):
    kind = "lugre"
    static = False

    def __init__(self, plant, lumped, params: LuGreParams, **kw):
        super().__init__(plant, lumped, **kw)
        self.params = params

    def initial_state(self, q0, qd0):
        # steady bristle deflection for the initial velocity; relaxed when starting at rest
        p = self.params
        z, _ = lugre_steady_state(qd0, p)
        return np.where(np.abs(qd0) < 1e-3 * p.vs, 0.0, z)

    def friction(self, q, qd, s):
        p = self.params
        zd = lugre_derivative(qd, s, p)
        return p.sigma0 * s + p.sigma1 * zd + p.sigma2 * qd, zd

    def friction_along(self, q, qd, dt=None):
        dt = dt or self.dt
        z = self.initial_state(q[:1], qd[:1])[0]
        out = np.empty_like(qd)
        h = dt / 10
        for k in range(len(qd)):
            out[k] = self.friction(q[k], qd[k], z)[0]
            for _ in range(10):
                k1 = lugre_derivative(qd[k], z, self.params)
                k2 = lugre_derivative(qd[k], z + 0.5 * h * k1, self.params)
                k3 = lugre_derivative(qd[k], z + 0.5 * h * k2, self.params)
                k4 = lugre_derivative(qd[k], z + h * k3, self.params)
                z = z + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        return out

    def arrays(self):
        p = self.params
        return {"lumped": self.lumped, "sigma0": p.sigma0, "sigma1": p.sigma1, "sigma2": p.sigma2,
                "fc": p.fc, "fs": p.fs, "vs": p.vs, "delta": p.delta}


class GMSModel(ForwardModel):
    """Maxwell-slip friction; batch rows are flattened into independent joints."""

    kind = "gms"
    static = False
    smooth_state = False

    def __init__(self, plant, lumped, params: GMSParams, **kw):
        super().__init__(plant, lumped, **kw)
        self.params = params
        self._tiled = {}

    def _p(self, rows):
        if rows not in self._tiled:
            p = self.params
            reps = rows // self.n
            k = np.tile(np.broadcast_to(p.stiffness, (self.n, p.n_elements)), (reps, 1))
            a = np.tile(np.broadcast_to(p.weights, (self.n, p.n_elements)), (reps, 1))
            t = lambda v: np.tile(np.broadcast_to(v, (self.n,)), reps)  # noqa: E731
            self._tiled[rows] = GMSParams(k, a, t(p.attraction), t(p.sigma2), t(p.fc), t(p.fs), t(p.vs),
                                          t(p.delta))
        return self._tiled[rows]

    def initial_state(self, q0, qd0):
        v = np.asarray(qd0, dtype=float).ravel()
        p = self._p(len(v))
        g = p.fc + (p.fs - p.fc) * np.exp(-np.abs(v / p.vs) ** p.delta)
        z = np.sign(v)[:, None] * p.weights * g[:, None] / p.stiffness
        return GMSState(z, np.sign(v)[:, None].astype(np.int8) * np.ones(z.shape, np.int8))

    def friction(self, q, qd, s):
        v = np.asarray(qd, dtype=float)
        tf = gms_torque(v.ravel(), s, self._p(v.size)).reshape(v.shape)
        return tf, None

    def advance_state(self, q, qd, q_new, qd_new, s, h):
        v = 0.5 * (qd + qd_new)
        new, _ = gms_step(v.ravel(), s, self._p(v.size), h)
        return new

    def _reset_dead(self, s, alive):
        return s

    def friction_along(self, q, qd, dt=None):
        dt = dt or self.dt
        s = self.initial_state(q[:1], qd[:1])
        out = np.empty_like(qd)
        p = self._p(self.n)
        for k in range(len(qd)):
            out[k] = gms_torque(qd[k], s, p)
            s, _ = gms_step(qd[k], s, p, dt)
        return out

    def arrays(self):
        p = self.params
        return {"lumped": self.lumped, "stiffness": p.stiffness, "weights": p.weights,
                "attraction": p.attraction, "sigma2": p.sigma2, "fc": p.fc, "fs": p.fs, "vs": p.vs,
                "delta": p.delta}


class StaticNNModel(ForwardModel):
    """Static friction curve: an MLP of the joint velocities only."""

    kind = "staticnn"

    def __init__(self, plant, lumped, spec: neural.MLPSpec, params, standardizer: neural.Standardizer,
                 torque_scale=1.0, **kw):
        super().__init__(plant, lumped, **kw)
        self.spec, self.params, self.std, self.torque_scale = spec, np.asarray(params, float), standardizer, \
            float(torque_scale)

    def friction(self, q, qd, s):
        return self.torque_scale * neural.forward(self.spec, self.params, self.std.apply(qd)), s[..., :0]

    def meta(self):
        return {**super().meta(), "spec": self.spec.to_dict(), "torque_scale": self.torque_scale}

    def arrays(self):
        return {"lumped": self.lumped, "params": self.params, "std_mean": self.std.mean,
                "std_scale": self.std.scale}


class RNNModel(ForwardModel):
    """Recurrent friction: hidden memory advances once per sample, torque held."""

    kind = "rnn"
    static = False
    smooth_state = False

    def __init__(self, plant, lumped, spec: neural.RNNSpec, params, standardizer, torque_scale=1.0, **kw):
        super().__init__(plant, lumped, **kw)
        self.spec, self.params, self.std, self.torque_scale = spec, np.asarray(params, float), standardizer, \
            float(torque_scale)

    def initial_state(self, q0, qd0):
        b = np.atleast_2d(q0).shape[0]
        return [np.zeros((b, self.spec.hidden)) for _ in range(self.spec.layers)]

    def _net(self, q, qd, h):
        x = self.std.apply(np.concatenate([q, qd], axis=-1))
        out, h = neural.rnn_forward(self.spec, self.params, x[None], h0=h)
        return self.torque_scale * out[0], h

    def step(self, q, qd, s, tau):
        tf, s_new = self._net(q, qd, s)
        h = self.dt / self.substeps
        for _ in range(self.substeps):
            q, qd = _rk4_rigid(self, q, qd, tau, tf, h)
        return q, qd, s_new

    def _reset_dead(self, s, alive):
        return [np.where(alive[:, None], h, 0.0) for h in s]

    def friction_along(self, q, qd, dt=None):
        x = self.std.apply(np.concatenate([q, qd], axis=-1))
        out, _ = neural.rnn_forward(self.spec, self.params, x[:, None, :])
        return self.torque_scale * out[:, 0]

    def meta(self):
        return {**super().meta(), "spec": self.spec.to_dict(), "torque_scale": self.torque_scale}

    def arrays(self):
        return {"lumped": self.lumped, "params": self.params, "std_mean": self.std.mean,
                "std_scale": self.std.scale}


def _rk4_rigid(model, q, qd, tau, tf, h):
    def f(q_, qd_):
        return qd_, model.accel(q_, qd_, tau, tf)

    k1 = f(q, qd)
    k2 = f(q + 0.5 * h * k1[0], qd + 0.5 * h * k1[1])
    k3 = f(q + 0.5 * h * k2[0], qd + 0.5 * h * k2[1])
    k4 = f(q + h * k3[0], qd + h * k3[1])
    return (q + h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]),
            qd + h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]))


class LVMModel(ForwardModel):
    """Open-loop view of a :class:`PSSM`: mean dynamics, latent state from its prior mean."""

    kind = "lvm"
    static = False

    def __init__(self, pssm: PSSM):
        super().__init__(pssm.plant, pssm.params.lumped, pssm.config.dt, 1)
        self.pssm = pssm

    def initial_state(self, q0, qd0):
        z0 = self.pssm.params.init_mean[2 * self.n:]
        return np.broadcast_to(z0, np.atleast_2d(q0).shape[:-1] + z0.shape).copy()

    def step(self, q, qd, s, tau):
        x = np.concatenate([q, qd, s], axis=-1)
        x = self.pssm.rk4_step(x, tau, check=False)
        return self.pssm.split(x)

    def friction_along(self, q, qd, dt=None, z=None):
        """Friction net on measured motion; ``z`` defaults to the prior mean."""
        if z is None:
            z = self.initial_state(q, qd)
        return self.pssm.friction_torque(np.concatenate([q, qd, z], axis=-1))

    def meta(self):
        c = self.pssm.config
        return {**super().meta(), "config": {k: (list(v) if isinstance(v, tuple) else v)
                                             for k, v in c.__dict__.items()}}

    def arrays(self):
        out = {f"p_{k}": v for k, v in self.pssm.params.blocks().items()}
        out["std_mean"], out["std_scale"] = self.pssm.std.mean, self.pssm.std.scale
        return out


# -- reconstruction ------------------------------------------------------------
def model_from_parts(plant: PlanarArm, meta: dict, arrays: dict) -> ForwardModel:
    kind = meta["kind"]
    kw = dict(dt=meta["dt"], substeps=meta["substeps"])
    a = arrays
    if kind == "simple":
        return SimpleModel(plant, a["lumped"], SimpleFrictionParams(a["coulomb"], a["viscous"]), **kw)
    if kind == "stribeck":
        return StribeckModel(plant, a["lumped"], StribeckParams(a["fc"], a["fs"], a["vs"], a["fv"], a["delta"]),
                             **kw)
    if kind == "lugre":
        return LuGreModel(plant, a["lumped"], LuGreParams(a["sigma0"], a["sigma1"], a["sigma2"], a["fc"],
                                                          a["fs"], a["vs"], a["delta"]), **kw)
    if kind == "gms":
        return GMSModel(plant, a["lumped"], GMSParams(a["stiffness"], a["weights"], a["attraction"],
                                                      a["sigma2"], a["fc"], a["fs"], a["vs"], a["delta"]), **kw)
    if kind == "staticnn":
        spec = neural.MLPSpec.from_dict(meta["spec"])
        return StaticNNModel(plant, a["lumped"], spec, a["params"], neural.Standardizer(a["std_mean"],
                                                                                         a["std_scale"]),
                             meta.get("torque_scale", 1.0), **kw)
    if kind == "rnn":
        spec = neural.RNNSpec(**meta["spec"])
        return RNNModel(plant, a["lumped"], spec, a["params"], neural.Standardizer(a["std_mean"], a["std_scale"]),
                        meta.get("torque_scale", 1.0), **kw)
    if kind == "lvm":
        cfg = dict(meta["config"])
        for k in ("friction_hidden", "latent_hidden"):
            cfg[k] = tuple(cfg[k])
        params = ModelParams(**{k[2:]: v for k, v in a.items() if k.startswith("p_")})
        pssm = PSSM(plant, PSSMConfig(**cfg), params, neural.Standardizer(a["std_mean"], a["std_scale"]))
        return LVMModel(pssm)
    raise ParameterError(f"unknown model kind {kind!r}")
