import numpy as np
import pytest

from fricid.errors import DegeneracyError, ParameterError
from fricid.lgssm import LGSSM
from fricid.smc import (effective_sample_size, filter_pass, smooth, systematic_resample)

import lgbench


def test_ess_examples():
    assert effective_sample_size(np.full(8, 1 / 8)) == pytest.approx(8.0, rel=1e-14)
    assert effective_sample_size(np.eye(5)[2]) == 1.0
    assert effective_sample_size([0.5, 0.5, 0.0]) == 2.0


def test_systematic_resample_examples():
    idx = systematic_resample(np.full(10, 0.1), 3)
    assert np.array_equal(np.sort(idx), np.arange(10))
    w = np.zeros(7)
    w[4] = 1.0
    assert np.all(systematic_resample(w, 0) == 4)


def test_systematic_offspring_bound_and_mean():
    rng = np.random.default_rng(0)
    w = rng.dirichlet(np.ones(20))
    n = len(w)
    counts = np.zeros(n)
    for s in range(10_000):
        c = np.bincount(systematic_resample(w, s), minlength=n)
        assert np.all(np.abs(c - n * w) < 1.0)
        counts += c
    emp = counts / 10_000
    assert np.abs(emp - n * w).sum() / n < 0.01


def test_resampling_preserves_weighted_mean():
    rng = np.random.default_rng(1)
    x = rng.normal(size=500)
    w = rng.dirichlet(np.ones(500))
    m = w @ x
    sd = np.sqrt(w @ (x - m) ** 2)
    for s in range(50):
        assert abs(x[systematic_resample(w, s)].mean() - m) < 4 * sd / np.sqrt(500)


def test_collapse_case_log_likelihood():
    # tiny process noise and an exact prior: every particle sits on the truth
    model = LGSSM(a=0.8, q=1e-300, r=0.3, c=1.0, m0=1.0, p0=1e-300)
    y = np.array([1.1, 0.7, 0.5, 0.6])
    _, ll = filter_pass(model, y, np.zeros(4), 16, seed=0)
    x = 0.8 ** np.arange(4)
    expected = np.sum(-0.5 * (np.log(2 * np.pi * 0.3) + (y - x) ** 2 / 0.3))
    assert ll == pytest.approx(expected, rel=1e-12)


def test_weights_normalized_and_ancestry_valid():
    model, y, u = lgbench.make_sequence(30)
    h, _ = filter_pass(model, y, u, 64, seed=2)
    assert np.all(np.abs(np.exp(h.log_weights).sum(axis=1) - 1.0) < 1e-12)
    assert h.ancestors.min() >= 0 and h.ancestors.max() < 64
    assert h.resampled.any()


def test_filter_deterministic_with_seed():
    model, y, u = lgbench.make_sequence(30)
    a, la = filter_pass(model, y, u, 50, seed=9)
    b, lb = filter_pass(model, y, u, 50, seed=9)
    c, _ = filter_pass(model, y, u, 50, seed=10)
    assert la == lb and np.array_equal(a.particles, b.particles)
    assert not np.array_equal(a.particles, c.particles)


def test_filter_rejects_bad_arguments():
    model, y, u = lgbench.make_sequence(5)
    with pytest.raises(ParameterError):
        filter_pass(model, y, u, 1)
    with pytest.raises(ParameterError):
        filter_pass(model, y, u[:-1], 10)


def test_degeneracy_carries_time_index():
    model = LGSSM(a=1.0, q=1e-4, r=1e-4, m0=0.0, p0=1e-4)
    y = np.array([0.0, 0.0, 1e200])
    with pytest.raises(DegeneracyError) as err:
        filter_pass(model, y, np.zeros(3), 10)
    assert err.value.t == 2


def test_kalman_oracle_filter_and_smoother():
    zf, zs, ll_mean, ll_exact = lgbench.oracle_comparison(1000, 50, 50)
    assert zf < 3.0 and zs < 3.0
    assert abs(ll_mean - ll_exact) < 0.02 * abs(ll_exact)


def test_loglik_variance_shrinks_with_particles():
    model, y, u = lgbench.make_sequence(50)
    v = [np.var([filter_pass(model, y, u, n, seed=s)[1] for s in range(50)]) for n in (200, 2000)]
    assert v[1] < v[0]


def test_zero_length_sequence_smoother_equals_filter():
    model, y, u = lgbench.make_sequence(0)
    h, _ = filter_pass(model, y, u, 40, seed=0)
    ens = smooth(h)
    np.testing.assert_allclose(ens.mean(), h.filtered_mean(), rtol=1e-14)
    assert not ens.degenerate


def test_backward_and_genealogy_agree_on_nonlinear_model(pendulum):
    from fricid.pssm import PSSM, PSSMConfig
    m = PSSM.initialize(pendulum, PSSMConfig(n_latent=1, dt=0.02), 0,
                        q_var=[1e-4, 1e-3, 1e-3], r_var=[1e-3])
    m.set_initial([0.5, 0.0, 0.0], [1e-2, 1e-2, 1e-2])
    u = 0.2 * np.sin(np.arange(21) * 0.3)[:, None]
    xs = m.simulate(np.array([0.5, 0.0, 0.0]), u[:-1])
    y = xs[:, :1] + 0.03 * np.random.default_rng(0).standard_normal((21, 1))
    gen, bwd = [], []
    for s in range(20):
        h, _ = filter_pass(m, y, u, 300, seed=s)
        gen.append(smooth(h).mean())
        bwd.append(smooth(h, "backward", model=m, u=u, seed=s).mean())
    gen, bwd = np.array(gen), np.array(bwd)
    se = np.sqrt(gen.var(axis=0, ddof=1) / 20 + bwd.var(axis=0, ddof=1) / 20)
    diff = np.abs(gen.mean(axis=0) - bwd.mean(axis=0))
    assert np.all(diff[:, :2] < 4 * se[:, :2] + 1e-9)


def test_genealogy_flags_collapsed_paths():
    model, y, u = lgbench.make_sequence(400)
    h, _ = filter_pass(model, y, u, 5, seed=0, ess_threshold=1.01)
    ens = smooth(h)
    assert ens.degenerate and ens.n_unique_mid == 1


def test_diagnostics_csv(tmp_path):
    model, y, u = lgbench.make_sequence(5)
    h, _ = filter_pass(model, y, u, 10)
    path = tmp_path / "diag.csv"
    h.write_diagnostics(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,ess,log_increment" and len(lines) == 7
