import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fricid import neural
from fricid.data import Sequence
from fricid.doe import DesignConfig, MotionLimits, design
from fricid.errors import ShapeError
from fricid.eval import benchmark_report, friction_curve, loop_area, open_loop_simulate, score
from fricid.friction import (GMSParams, SimpleFrictionParams, StribeckParams, simple_torque)
from fricid.models import (GMSModel, LuGreModel, LVMModel, RNNModel, SimpleModel, StaticNNModel, StribeckModel,
                           model_from_parts)
from fricid.pssm import PSSM, PSSMConfig
from fricid.synth import NoiseLevels, TruthFriction, default_lugre, synthesize_sequence

SHORT = DesignConfig(duration=2.0)
QUIET = NoiseLevels(0.0, 0.0, 0.0)


def _clean(plant, truth, seed=1):
    c = design(MotionLimits(), seed, SHORT)
    seq, _ = synthesize_sequence(plant, truth, c, 0.004, QUIET, seed=0)
    return seq


def _stribeck():
    return StribeckParams(np.array([0.3]), np.array([0.45]), np.array([0.15]), np.array([0.15]), np.array([2.0]))


class AntiDamped(SimpleModel):
    """Negative viscous friction: pumps energy in until the state blows up."""

    def __init__(self, plant, gain):
        super().__init__(plant, plant.lumped, SimpleFrictionParams(np.zeros(1), np.zeros(1)))
        self.gain = gain

    def friction(self, q, qd, s):
        return -self.gain * qd, s[..., :0]


def _zoo(plant):
    rng = np.random.default_rng(0)
    spec = neural.MLPSpec(1, 1, (8, 8), "mish")
    rspec = neural.RNNSpec(2, 1, hidden=6, layers=2)
    std = neural.Standardizer(np.zeros(1), np.ones(1))
    rstd = neural.Standardizer(np.zeros(2), np.array([0.5, 1.0]))
    gms = GMSParams([50.0, 400.0], [0.6, 0.4], [20.0], [0.15], [0.3], [0.45], [0.15], [2.0])
    pssm = PSSM.initialize(plant, PSSMConfig(n_latent=1, friction_hidden=(8,), latent_hidden=(8,)), 3,
                           q_var=np.full(3, 1e-6), r_var=[1e-6])
    return {
        "simple": SimpleModel(plant, plant.lumped, SimpleFrictionParams(np.array([0.3]), np.array([0.15]))),
        "stribeck": StribeckModel(plant, plant.lumped, _stribeck()),
        "lugre": LuGreModel(plant, plant.lumped, default_lugre()),
        "gms": GMSModel(plant, plant.lumped, gms),
        "staticnn": StaticNNModel(plant, plant.lumped, spec, 0.1 * rng.standard_normal(spec.n_params), std, 0.5),
        "rnn": RNNModel(plant, plant.lumped, rspec, neural.rnn_init(rspec, 1), rstd, 0.2),
        "lvm": LVMModel(pssm),
    }


# -- open-loop simulation ----------------------------------------------------------------
@pytest.mark.parametrize("kind", ["simple", "stribeck", "lugre"])
def test_exact_simulator_reproduces_noiseless_data(pendulum, kind):
    params = {"simple": SimpleFrictionParams(np.array([0.3]), np.array([0.15])), "stribeck": _stribeck(),
              "lugre": default_lugre()}[kind]
    seq = _clean(pendulum, TruthFriction(kind, params))
    cls = {"simple": SimpleModel, "stribeck": StribeckModel, "lugre": LuGreModel}[kind]
    pred = open_loop_simulate(cls(pendulum, pendulum.lumped, params, substeps=10), seq)
    assert not pred.diverged
    assert np.max(np.abs(pred.q - seq.q)) < 1e-8
    assert np.max(np.abs(pred.qd - seq.qd)) < 1e-8


def test_zero_torque_frictionless_pendulum_conserves_energy(pendulum):
    t = np.arange(2501) * 0.004
    seq = Sequence(t, np.full(len(t), 1.0), np.zeros(len(t)), np.zeros(len(t)))
    free = SimpleModel(pendulum, pendulum.lumped, SimpleFrictionParams(np.zeros(1), np.zeros(1)))
    pred = open_loop_simulate(free, seq)
    e = pendulum.kinetic_energy(pred.q, pred.qd) + pendulum.potential_energy(pred.q)
    scale = np.max(np.abs(e - pendulum.potential_energy(np.zeros(1))))
    assert np.max(np.abs(e - e[0])) / scale < 1e-6
    assert np.ptp(pred.q) > 1.5      # it actually swings


def test_divergence_is_flagged_and_truncated(pendulum):
    t = np.arange(400) * 0.004
    seq = Sequence(t, np.zeros(400), np.full(400, 0.1), np.zeros(400))
    unstable = AntiDamped(pendulum, 5.0)
    pred = open_loop_simulate(unstable, seq)
    assert pred.diverged
    assert len(pred.q) == pred.diverged_at
    assert np.all(np.abs(pred.q) <= 100)
    assert pred.divergence_time == pytest.approx(pred.diverged_at * 0.004)


def test_open_loop_is_deterministic(pendulum):
    seq = _clean(pendulum, TruthFriction("lugre", default_lugre()))
    for m in _zoo(pendulum).values():
        a, b = open_loop_simulate(m, seq), open_loop_simulate(m, seq)
        assert np.array_equal(a.q, b.q, equal_nan=True) and np.array_equal(a.qd, b.qd, equal_nan=True)


def test_lvm_starts_latent_at_prior_mean(pendulum):
    m = _zoo(pendulum)["lvm"]
    m.pssm.params.init_mean[2] = 0.7
    assert m.initial_state(np.zeros((4, 1)), np.zeros((4, 1)))[:, 0] == pytest.approx(np.full(4, 0.7))


def test_model_parts_round_trip(pendulum):
    seq = _clean(pendulum, TruthFriction("lugre", default_lugre()))
    for kind, m in _zoo(pendulum).items():
        back = model_from_parts(pendulum, m.meta(), m.arrays())
        assert back.kind == kind
        a, b = open_loop_simulate(m, seq), open_loop_simulate(back, seq)
        assert np.array_equal(a.q, b.q, equal_nan=True), kind


def test_batched_rollout_matches_single(pendulum):
    seq = _clean(pendulum, TruthFriction("lugre", default_lugre()))
    m = LuGreModel(pendulum, pendulum.lumped, default_lugre())
    q0 = np.stack([seq.q[0], seq.q[10]])
    qd0 = np.stack([seq.qd[0], seq.qd[10]])
    taus = np.stack([seq.tau[:100], seq.tau[10:110]], axis=1)
    qb, _, _ = m.rollout_batch(q0, qd0, taus)
    q1, _, _ = m.rollout(seq.q[10], seq.qd[10], seq.tau[10:110])
    assert np.array_equal(qb[:, 1], q1)


# -- scores ---------------------------------------------------------------------------
def test_score_identities():
    x = np.random.default_rng(1).standard_normal((100, 2))
    assert score(x, x) == (0.0, 0.0)
    mse, mae = score(x + 0.3, x)
    assert mse == pytest.approx(0.09, abs=1e-15) and mae == pytest.approx(0.3, abs=1e-15)
    with pytest.raises(ShapeError):
        score(x[:99], x)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 60))
def test_mse_at_least_mae_squared(seed, n):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((n, 2)) * rng.uniform(0.01, 10), rng.standard_normal((n, 2))
    mse, mae = score(a, b)
    assert mse >= mae ** 2 * (1 - 1e-12)


# -- friction characteristics --------------------------------------------------------------
def _cycle(n=400, amp=1.0, periods=1):
    # symmetric sampling that never hits v = 0: each velocity value is visited going up and coming back down
    phase = (np.arange(n + 1) + 0.5) * (periods * 2 * np.pi / n)
    return Sequence(np.arange(n + 1) * 0.004, -amp * np.cos(phase), amp * np.sin(phase), np.zeros(n + 1))


def test_simple_curve_lies_on_coulomb_viscous_line(pendulum):
    m = _zoo(pendulum)["simple"]
    seq = _cycle()
    v, tf = friction_curve(m, seq)
    assert np.array_equal(v, seq.qd)
    assert np.max(np.abs(tf - (0.3 * np.sign(v) + 0.15 * v))) < 1e-15
    assert np.array_equal(tf, simple_torque(v, m.params))


def test_lugre_cycle_shows_hysteresis(pendulum):
    seq = _cycle(n=2000, amp=0.05, periods=2)
    v, tf = friction_curve(LuGreModel(pendulum, pendulum.lumped, default_lugre()), seq)
    half = len(v) // 2
    area = loop_area(v[half:], tf[half:])        # second, settled cycle
    assert abs(area[0]) > 1e-4


@pytest.mark.parametrize("kind", ["simple", "stribeck", "staticnn"])
def test_static_models_have_no_loop_area(pendulum, kind):
    m = _zoo(pendulum)[kind]
    v, tf = friction_curve(m, _cycle(n=800, amp=1.3))
    assert abs(loop_area(v, tf)[0]) < 1e-9


def test_lvm_curve_uses_filtered_latent(pendulum):
    seq = _clean(pendulum, TruthFriction("lugre", default_lugre()))
    v, tf = friction_curve(_zoo(pendulum)["lvm"], seq, n_particles=20)
    assert tf.shape == v.shape and np.all(np.isfinite(tf))


# -- report ------------------------------------------------------------------------
def test_benchmark_report_rows_and_artifacts(pendulum, tmp_path):
    seq = _clean(pendulum, TruthFriction("lugre", default_lugre()))
    models = _zoo(pendulum)
    models["unstable"] = AntiDamped(pendulum, 5.0)
    rep = benchmark_report(models, seq, horizon_s=1.0, out_dir=tmp_path)
    assert [r.name for r in rep.rows] == list(models)
    meas = np.concatenate([seq.q, seq.qd], axis=1)
    for r in rep.rows:
        if r.diverged:
            continue
        pred = open_loop_simulate(models[r.name], seq).stacked()
        assert (r.mse_full, r.mae_full) == score(pred, meas)
        assert (r.mse_horizon, r.mae_horizon) == score(pred[:rep.horizon], meas[:rep.horizon])
        assert r.mse_full >= r.mae_full ** 2 and r.mse_horizon >= r.mae_horizon ** 2
        assert r.mse_full >= 0 and r.mae_full >= 0
    bad = rep.row("unstable")
    assert bad.diverged and np.isnan(bad.mse_full) and bad.divergence_time is not None
    for name in ("report.csv", "abs_errors.csv", "abs_errors.svg", "friction.svg"):
        assert os.path.getsize(tmp_path / name) > 0
    assert (tmp_path / "abs_errors.svg").read_text().startswith("<svg")
    lines = (tmp_path / "report.csv").read_text().splitlines()
    assert len(lines) == len(models) + 1


def test_report_threads_do_not_change_results(pendulum):
    seq = _clean(pendulum, TruthFriction("lugre", default_lugre()))
    models = _zoo(pendulum)
    a = benchmark_report(models, seq, horizon_s=1.0, curves=False)
    b = benchmark_report(models, seq, horizon_s=1.0, curves=False, threads=3)
    for ra, rb in zip(a.rows, b.rows):
        assert (ra.mse_full, ra.mae_full, ra.mse_horizon) == (rb.mse_full, rb.mae_full, rb.mse_horizon) or \
            (np.isnan(ra.mse_full) and np.isnan(rb.mse_full))


def test_failing_model_still_gets_a_row(pendulum):
    class Broken(SimpleModel):
        def friction(self, q, qd, s):
            raise RuntimeError("boom")

    seq = _clean(pendulum, TruthFriction("lugre", default_lugre()))
    models = {"ok": _zoo(pendulum)["simple"],
              "broken": Broken(pendulum, pendulum.lumped, SimpleFrictionParams(np.zeros(1), np.zeros(1)))}
    rep = benchmark_report(models, seq, horizon_s=1.0, curves=False)
    assert rep.row("broken").error.startswith("RuntimeError")
    assert np.isfinite(rep.row("ok").mse_full)
