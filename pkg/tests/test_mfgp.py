"""Two-fidelity surrogate: sequential fitting, the block covariance
inspection matrix, composed predictions against dense oracles, and
cost-aware acquisition."""

import dataclasses

import numpy as np
import pytest

from inverseflow.data import HIGH, LOW, Dataset
from inverseflow.errors import ConfigurationError, ShapeError
from inverseflow.gp import (
    GpHyper,
    GpModel,
    McmcConfig,
    build_cov,
    kernel_eval,
    mcmc_fit,
)
from inverseflow.harness.metrics import nrmse
from inverseflow.mfgp import (
    AcquisitionResult,
    MfgpModel,
    adaptive_select,
    mf_cov,
    mfgp_fit,
    mfgp_predict,
    sobol_pool,
)
from inverseflow.problems import synth_mf_pair

FAST = McmcConfig(n_steps=800, n_burn=300, n_keep=10, seed=0)


def stack(Xl, yl, Xh, yh, cost_ratio=5.0):
    X = np.vstack([Xl, Xh])
    Y = np.concatenate([yl, yh]).reshape(-1, 1)
    tags = np.array([LOW] * len(Xl) + [HIGH] * len(Xh), dtype=object)
    return Dataset(X, Y, tags, cost_ratio=cost_ratio)


def fixed_model(Xl, yl, Xh, yh, h_eta, h_delta):
    """Sequential composition with hand-picked hyperparameters, bypassing MCMC."""
    eta = GpModel.from_samples(Xl, yl, [h_eta], normalize=False)
    resid = yh - eta.predict_batch(Xh)[0]
    delta = GpModel.from_samples(Xh, resid, [h_delta], normalize=False)
    return MfgpModel(eta, delta)


def test_fit_requires_two_rows_per_fidelity():
    X = np.linspace(0, 1, 5).reshape(-1, 1)
    y = X[:, 0]
    D = Dataset(X, y, np.array([LOW] * 4 + [HIGH], dtype=object))
    with pytest.raises(ConfigurationError):
        mfgp_fit(D, config=FAST)


def test_zero_discrepancy_stays_within_noise():
    # high rows equal the low-fidelity function, so the residual stage
    # should predict zero up to its own uncertainty
    rng = np.random.default_rng(1)
    f = lambda x: np.sin(3.0 * x[:, 0])
    Xl = rng.uniform(-1, 1, (40, 1))
    Xh = rng.uniform(-1, 1, (8, 1))
    D = stack(Xl, f(Xl), Xh, f(Xh))
    m = mfgp_fit(D, config=FAST)
    Xq = np.linspace(-1, 1, 25).reshape(-1, 1)
    dm, dv = m.delta.predict_batch(Xq)
    assert np.max(np.abs(dm) / np.sqrt(dv)) <= 3.0


def test_linear_discrepancy_beats_single_fidelity():
    # 40 cheap rows pin the wiggly base shape; 8 expensive rows suffice for
    # the linear offset but not for the shape alone
    rng = np.random.default_rng(2)
    g = lambda x: np.sin(8.0 * x[:, 0]) * (1.0 + x[:, 0])
    hi = lambda x: g(x) + 2.0 * x[:, 0] + 1.0
    Xl = rng.uniform(-1, 1, (40, 1))
    Xh = rng.uniform(-1, 1, (8, 1))
    D = stack(Xl, g(Xl), Xh, hi(Xh))
    mf = mfgp_fit(D, config=FAST)
    Dh = Dataset(Xh, hi(Xh), np.array([HIGH] * 8, dtype=object))
    sf = mcmc_fit(Dh, config=FAST)
    Xq = np.linspace(-1, 1, 50).reshape(-1, 1)
    e_mf = nrmse(mf.predict_batch(Xq)[0], hi(Xq))
    e_sf = nrmse(sf.predict_batch(Xq)[0], hi(Xq))
    assert e_mf < 0.02
    assert e_mf < 0.5 * e_sf


def test_fidelity_tags_route_rows_not_positions():
    rng = np.random.default_rng(3)
    Xl = rng.uniform(-1, 1, (6, 1))
    Xh = rng.uniform(-1, 1, (3, 1))
    yl = np.sin(2.0 * Xl[:, 0])
    yh = np.sin(2.0 * Xh[:, 0]) + 0.5
    sorted_D = stack(Xl, yl, Xh, yh)
    order = [0, 6, 1, 2, 7, 3, 4, 8, 5]  # interleave, preserving relative order
    mixed_D = Dataset(sorted_D.X[order], sorted_D.Y[order], sorted_D.fidelity[order])
    a = mfgp_fit(sorted_D, config=FAST)
    b = mfgp_fit(mixed_D, config=FAST)
    Xq = np.linspace(-1, 1, 9).reshape(-1, 1)
    assert np.array_equal(a.predict_batch(Xq)[0], b.predict_batch(Xq)[0])
    assert np.array_equal(a.predict_batch(Xq)[1], b.predict_batch(Xq)[1])


def test_explicit_delta_config_matches_default_shift():
    # the residual chain runs on seed+1 when no separate config is given
    rng = np.random.default_rng(4)
    Xl = rng.uniform(-1, 1, (10, 1))
    Xh = rng.uniform(-1, 1, (4, 1))
    D = stack(Xl, np.sin(Xl[:, 0]), Xh, np.sin(Xh[:, 0]) + Xh[:, 0])
    cfg = McmcConfig(n_steps=400, n_burn=150, n_keep=5, seed=5)
    m1 = mfgp_fit(D, config=cfg)
    m2 = mfgp_fit(D, config=cfg,
                  delta_config=dataclasses.replace(cfg, seed=6))
    for ha, hb in zip(m1.delta.posterior_samples, m2.delta.posterior_samples):
        assert ha.sigma == hb.sigma and ha.lam == hb.lam
        assert np.array_equal(ha.beta, hb.beta)


def make_cov_fixture():
    rng = np.random.default_rng(5)
    Xh = rng.normal(size=(3, 2))
    Xl = rng.normal(size=(4, 2))
    yl = rng.normal(size=4)
    yh = rng.normal(size=3)
    D = stack(Xl, yl, Xh, yh)
    h_eta = GpHyper(1.2, np.array([0.7, 1.4]), 0.3)
    h_delta = GpHyper(0.6, np.array([2.0, 0.5]), 0.1)
    return D, Xh, Xl, h_eta, h_delta


def test_mf_cov_block_layout():
    D, Xh, Xl, h_eta, h_delta = make_cov_fixture()
    M = mf_cov(D, h_eta, h_delta)
    nh, nl = 3, 4
    assert M.shape == (2 * nh + nl, 2 * nh + nl)
    assert np.array_equal(M, M.T)
    # discrepancy block is independent of the base process
    assert np.all(M[:nh, nh:] == 0.0)
    assert np.all(M[nh:, :nh] == 0.0)


def test_mf_cov_blocks_match_kernel():
    D, Xh, Xl, h_eta, h_delta = make_cov_fixture()
    M = mf_cov(D, h_eta, h_delta)
    nh = 3
    for i in range(nh):
        for j in range(nh):
            assert M[i, j] == kernel_eval(Xh[i], Xh[j], h_delta,
                                          same_index=i == j)
            assert M[nh + i, nh + j] == kernel_eval(Xh[i], Xh[j], h_eta,
                                                    same_index=i == j)
    for i in range(nh):
        for j in range(4):
            assert M[nh + i, 2 * nh + j] == kernel_eval(Xh[i], Xl[j], h_eta)
    for i in range(4):
        for j in range(4):
            assert M[2 * nh + i, 2 * nh + j] == kernel_eval(
                Xl[i], Xl[j], h_eta, same_index=i == j)


def test_mf_cov_has_no_solver_jitter():
    D, Xh, Xl, h_eta, h_delta = make_cov_fixture()
    M = mf_cov(D, h_eta, h_delta)
    K_w = M[6:, 6:]
    jitter = np.eye(4) * 1e-8 * h_eta.sigma ** 2
    assert np.allclose(K_w + jitter, build_cov(Xl, h_eta), rtol=1e-12)


def test_mf_cov_low_only_dataset():
    rng = np.random.default_rng(6)
    Xl = rng.normal(size=(5, 1))
    D = Dataset(Xl, rng.normal(size=5), np.array([LOW] * 5, dtype=object))
    h = GpHyper(1.0, np.array([1.0]), 0.2)
    M = mf_cov(D, h, h)
    assert M.shape == (5, 5)
    assert M[0, 0] == kernel_eval(Xl[0], Xl[0], h, same_index=True)


def test_predict_matches_dense_two_stage_oracle():
    rng = np.random.default_rng(7)
    Xl = rng.uniform(-1, 1, (6, 2))
    Xh = rng.uniform(-1, 1, (4, 2))
    yl = np.sin(Xl[:, 0]) + Xl[:, 1]
    yh = np.sin(Xh[:, 0]) + Xh[:, 1] + 0.3 * Xh[:, 0]
    h_eta = GpHyper(1.1, np.array([0.9, 1.3]), 0.2)
    h_delta = GpHyper(0.5, np.array([1.0, 1.0]), 0.05)
    model = fixed_model(Xl, yl, Xh, yh, h_eta, h_delta)

    def dense(X, y, h, xq):
        n = len(y)
        K = np.empty((n, n))
        for i in range(n):
            for j in range(n):
                K[i, j] = kernel_eval(X[i], X[j], h, same_index=i == j)
        K[np.diag_indices_from(K)] += 1e-8 * h.sigma ** 2
        k = np.array([kernel_eval(X[i], xq, h) for i in range(n)])
        Kinv = np.linalg.inv(K)
        return k @ Kinv @ y, h.sigma ** 2 + h.lam ** 2 - k @ Kinv @ k

    xq = np.array([0.2, -0.4])
    resid = yh - np.array([dense(Xl, yl, h_eta, x)[0] for x in Xh])
    m_eta, v_eta = dense(Xl, yl, h_eta, xq)
    m_del, v_del = dense(Xh, resid, h_delta, xq)
    mean, var = mfgp_predict(model, xq)
    assert mean == pytest.approx(m_eta + m_del, abs=1e-9)
    assert var == pytest.approx(v_eta + v_del, abs=1e-9)


def test_composed_model_interpolates_high_data():
    Xl = np.linspace(-1.0, 1.0, 12).reshape(-1, 1)
    yl = np.sin(3.0 * Xl[:, 0])
    Xh = Xl[::3]
    yh = np.sin(3.0 * Xh[:, 0]) + Xh[:, 0]
    h = GpHyper(1.0, np.array([8.0]), 0.0)
    model = fixed_model(Xl, yl, Xh, yh, h, h)
    mean, _ = model.predict_batch(Xh)
    assert np.max(np.abs(mean - yh)) <= 1e-6


def test_far_query_variance_adds_stages():
    rng = np.random.default_rng(8)
    Xl = rng.uniform(-1, 1, (8, 1))
    Xh = rng.uniform(-1, 1, (3, 1))
    h_eta = GpHyper(1.2, np.array([1.0]), 0.3)
    h_delta = GpHyper(0.7, np.array([1.0]), 0.1)
    model = fixed_model(Xl, np.sin(Xl[:, 0]), Xh, np.sin(Xh[:, 0]),
                        h_eta, h_delta)
    _, var = model.predict(np.array([60.0]))
    expected = (h_eta.sigma ** 2 + h_eta.lam ** 2
                + h_delta.sigma ** 2 + h_delta.lam ** 2)
    assert var == pytest.approx(expected, abs=1e-8)


def test_stage_dimension_mismatch_rejected():
    a = GpModel.from_samples(np.zeros((2, 1)), np.zeros(2),
                             [GpHyper(1.0, np.array([1.0]), 0.1)])
    b = GpModel.from_samples(np.zeros((2, 2)), np.zeros(2),
                             [GpHyper(1.0, np.array([1.0, 1.0]), 0.1)])
    with pytest.raises(ShapeError):
        MfgpModel(a, b)


def test_serialization_roundtrip():
    rng = np.random.default_rng(9)
    Xl = rng.uniform(-1, 1, (10, 1))
    Xh = rng.uniform(-1, 1, (4, 1))
    D = stack(Xl, np.sin(Xl[:, 0]), Xh, np.sin(Xh[:, 0]) + 1.0)
    model = mfgp_fit(D, config=McmcConfig(n_steps=400, n_burn=150, n_keep=4, seed=0))
    clone = MfgpModel.loads(model.dumps())
    Xq = rng.uniform(-1, 1, (7, 1))
    assert np.array_equal(model.predict_batch(Xq)[0], clone.predict_batch(Xq)[0])
    assert np.array_equal(model.predict_batch(Xq)[1], clone.predict_batch(Xq)[1])
    doc = model.to_json_dict()
    assert set(doc) == {"schema_version", "eta", "delta", "epsilon_var"}


# ---------------------------------------------------------------------------
# Acquisition
# ---------------------------------------------------------------------------

def point_model(h_eta, h_delta):
    """Both stages trained on the single point x=0, y=0."""
    X0 = np.zeros((1, 1))
    y0 = np.zeros(1)
    eta = GpModel.from_samples(X0, y0, [h_eta], normalize=False)
    delta = GpModel.from_samples(X0, y0, [h_delta], normalize=False)
    return MfgpModel(eta, delta)


def test_select_rejects_empty_and_mismatched_pools():
    m = point_model(GpHyper(1.0, np.array([1.0]), 0.0),
                    GpHyper(1.0, np.array([1.0]), 0.0))
    with pytest.raises(ConfigurationError):
        adaptive_select(m, np.zeros((0, 1)))
    with pytest.raises(ShapeError):
        adaptive_select(m, np.zeros((3, 2)))


def test_select_far_point_cheap_when_cost_ratio_large():
    h = GpHyper(1.0, np.array([1.0]), 0.0)
    m = point_model(h, h)
    cands = np.array([[0.0], [3.0]])
    res = adaptive_select(m, cands, cost_ratio=100.0)
    assert res.fidelity == LOW
    assert res.x[0] == 3.0
    # score is the base-stage variance at the far point, computed explicitly
    k = np.exp(-9.0)
    expected = 1.0 - k * k / (1.0 + 1e-8)
    assert res.score == pytest.approx(expected, rel=1e-9)
    assert res.table.shape == (2, 2)


def test_select_expensive_when_discrepancy_dominates():
    m = point_model(GpHyper(0.01, np.array([1.0]), 0.0),
                    GpHyper(5.0, np.array([1.0]), 0.0))
    res = adaptive_select(m, np.array([[2.0]]), cost_ratio=5.0)
    assert res.fidelity == HIGH


def test_select_tie_breaks_to_lowest_index():
    # candidates at -0.5 and +0.5 have bit-identical variance around x=0
    h = GpHyper(1.0, np.array([1.0]), 0.0)
    m = point_model(h, h)
    cands = np.array([[-0.5], [0.5], [0.0]])
    res = adaptive_select(m, cands, cost_ratio=5.0)
    assert res.table[0, 0] == res.table[1, 0]
    assert res.x[0] == -0.5
    assert res.fidelity == LOW


def test_select_invariant_to_output_rescaling():
    h1 = GpHyper(1.0, np.array([1.0]), 0.0)
    h2 = GpHyper(2.0, np.array([1.0]), 0.0)
    cands = np.array([[0.3], [1.5], [-2.0]])
    r1 = adaptive_select(point_model(h1, h1), cands, cost_ratio=5.0)
    r2 = adaptive_select(point_model(h2, h2), cands, cost_ratio=5.0)
    assert r1.x[0] == r2.x[0]
    assert r1.fidelity == r2.fidelity
    assert np.allclose(r2.table, 4.0 * r1.table, rtol=1e-10)


def test_selected_score_is_table_maximum():
    h = GpHyper(1.0, np.array([1.0]), 0.1)
    m = point_model(h, h)
    res = adaptive_select(m, np.array([[0.5], [1.0], [2.5]]), cost_ratio=5.0)
    assert res.score == res.table.max()
    with pytest.raises(ValueError):
        AcquisitionResult(np.zeros(1), LOW, 0.5, np.array([[1.0, 0.2]]))


def test_equivalent_cost_mixes_fidelities():
    n_low, n_high = 249, 231
    X = np.zeros((n_low + n_high, 1))
    Y = np.zeros(n_low + n_high)
    tags = np.array([LOW] * n_low + [HIGH] * n_high, dtype=object)
    D = Dataset(X, Y, tags, cost_ratio=5.0)
    assert D.equivalent_cost() == pytest.approx(280.8, rel=1e-12)


def test_sobol_pool_shape_box_and_determinism():
    lo = np.array([-1.0, 2.0])
    hi = np.array([0.0, 5.0])
    pool = sobol_pool(2, lo, hi, seed=3, size=64)
    assert pool.shape == (64, 2)
    assert np.all(pool >= lo) and np.all(pool <= hi)
    assert np.array_equal(pool, sobol_pool(2, lo, hi, seed=3, size=64))
    assert not np.array_equal(pool, sobol_pool(2, lo, hi, seed=4, size=64))


def test_sobol_pool_default_size_scales_with_dimension():
    pool = sobol_pool(2, np.zeros(2), np.ones(2), seed=0)
    assert pool.shape == (1000, 2)


def test_acquisition_loop_reduces_holdout_error():
    """Ten adaptive rounds on the synthetic pair: the seed-averaged hold-out
    error never rises more than 10% between rounds and ends below its start."""
    grid = np.linspace(0, 1, 50).reshape(-1, 1)
    _, y_true = synth_mf_pair(grid[:, 0])
    curves = []
    for seed in range(5):
        Xl = sobol_pool(1, np.zeros(1), np.ones(1), seed=seed * 7 + 1, size=8)
        Xh = sobol_pool(1, np.zeros(1), np.ones(1), seed=seed * 7 + 2, size=3)
        yl, _ = synth_mf_pair(Xl[:, 0])
        _, yh = synth_mf_pair(Xh[:, 0])
        D = stack(Xl, yl, Xh, yh)
        curve = []
        for rnd in range(11):
            m = mfgp_fit(D, config=McmcConfig(n_steps=800, n_burn=300,
                                              n_keep=10, seed=rnd))
            curve.append(nrmse(m.predict_batch(grid)[0], y_true))
            if rnd == 10:
                break
            pool = sobol_pool(1, np.zeros(1), np.ones(1),
                              seed=1000 + seed + rnd, size=200)
            choice = adaptive_select(m, pool, cost_ratio=5.0)
            y_lo, y_hi = synth_mf_pair(choice.x[0])
            D = D.appended(choice.x,
                           [y_lo if choice.fidelity == LOW else y_hi],
                           choice.fidelity)
        curves.append(curve)
    ends_lower = sum(c[-1] < c[0] for c in curves)
    assert ends_lower >= 4, [(c[0], c[-1]) for c in curves]
    avg = np.mean(curves, axis=0)
    assert avg[-1] < avg[0]
    for a, b in zip(avg, avg[1:]):
        assert b <= 1.10 * a, (a, b)
