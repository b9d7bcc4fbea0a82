"""Conditional flow: coupling closed forms, exact invertibility, log
determinant and gradients against finite differences, seeded inversion,
and the training loop's checkpoint behavior."""

import math

import numpy as np
import pytest

from inverseflow.cinn import (
    CinnModel,
    CinnTrainConfig,
    CouplingBlock,
    DesignCandidate,
    FlowNormalization,
    InverseQuery,
    cinn_create,
    cinn_forward,
    cinn_invert,
    cinn_invert_one,
    cinn_loss,
    cinn_train,
    condition,
    coupling_forward,
    coupling_inverse,
    postprocess,
    _train_step,
)
from inverseflow.errors import ConfigurationError, ShapeError
from inverseflow.numcore import IDENTITY, DenseNet
from inverseflow.problems import ToyProblem, toy_forward, toy_sample_x


def const_net(in_dim, out_dim, bias=0.0):
    """Zero weights, so the output is the bias regardless of input."""
    return DenseNet([np.zeros((out_dim, in_dim))],
                    [np.full(out_dim, float(bias))], [IDENTITY])


def small_config(M=4, D_y=2, L=2, **kw):
    kw.setdefault("n_epochs", 1)
    kw.setdefault("batch_size", 16)
    return CinnTrainConfig(M=M, D_y=D_y, D_c=4, L=L, st_hidden=(8,),
                           cond_hidden=(6,), **kw)


def randomized(model, seed, scale=0.4):
    rng = np.random.default_rng(seed)
    for p in model.params():
        p[...] = rng.normal(0.0, scale, size=p.shape)
    return model


def test_coupling_closed_form():
    # zero-weight subnets make s and t input-independent constants
    s_bias = 2.0 * math.atanh(math.log(2.0) / 2.0)  # clamp(s) = ln 2
    block = CouplingBlock(1, const_net(2, 1, s_bias), const_net(2, 1, 0.0),
                          s_clamp=2.0)
    z, ld = coupling_forward(block, np.array([3.0, 5.0]), np.array([0.0]))
    assert z[0] == 3.0
    assert z[1] == pytest.approx(10.0, rel=1e-12)
    assert ld == pytest.approx(math.log(2.0), rel=1e-12)

    shifted = CouplingBlock(1, const_net(2, 1, s_bias), const_net(2, 1, 0.25),
                            s_clamp=2.0)
    z2, _ = coupling_forward(shifted, np.array([3.0, 5.0]), np.array([0.0]))
    assert z2[1] == pytest.approx(10.25, rel=1e-12)


def test_coupling_clamp_saturates_scale():
    up = CouplingBlock(1, const_net(2, 1, 100.0), const_net(2, 1, 0.0),
                       s_clamp=2.0)
    z, ld = coupling_forward(up, np.array([1.0, 1.0]), np.array([0.0]))
    assert ld == 2.0
    assert z[1] == math.exp(2.0)
    down = CouplingBlock(1, const_net(2, 1, -100.0), const_net(2, 1, 0.0),
                         s_clamp=2.0)
    _, ld = coupling_forward(down, np.array([1.0, 1.0]), np.array([0.0]))
    assert ld == -2.0


def random_block(seed=0, m=2, out=3, cond=3):
    rng = np.random.default_rng(seed)
    dims = [m + cond, 8, out]
    return CouplingBlock(m, DenseNet.create(dims, rng),
                         DenseNet.create(dims, rng))


def test_coupling_batch_matches_single_rows():
    block = random_block(1)
    rng = np.random.default_rng(2)
    X = rng.normal(size=(6, 5))
    C = rng.normal(size=(6, 3))
    Z, ld = coupling_forward(block, X, C)
    for i in range(6):
        zi, ldi = coupling_forward(block, X[i], C[i])
        assert np.allclose(Z[i], zi, atol=1e-12)
        assert ld[i] == pytest.approx(ldi, abs=1e-12)


def test_coupling_inverse_roundtrip():
    block = random_block(3)
    rng = np.random.default_rng(4)
    X = rng.normal(size=(50, 5))
    C = rng.normal(size=(50, 3))
    Z, _ = coupling_forward(block, X, C)
    back = coupling_inverse(block, Z, C)
    assert np.max(np.abs(back - X)) <= 1e-9
    z1, _ = coupling_forward(block, X[0], C[0])
    assert np.max(np.abs(coupling_inverse(block, z1, C[0]) - X[0])) <= 1e-9


def test_coupling_shape_validation():
    block = random_block(5)
    with pytest.raises(ShapeError):
        coupling_forward(block, np.zeros(4), np.zeros(3))
    with pytest.raises(ShapeError):
        coupling_forward(block, np.zeros(5), np.zeros(2))
    with pytest.raises(ConfigurationError):
        CouplingBlock(0, const_net(3, 2), const_net(3, 2))
    with pytest.raises(ShapeError):
        CouplingBlock(1, const_net(3, 2), const_net(3, 1))
    with pytest.raises(ConfigurationError):
        CouplingBlock(1, const_net(3, 2), const_net(3, 2), s_clamp=0.0)


def test_loss_closed_form_and_penalty():
    z = np.array([[2.0, 0.0]])
    ld = np.array([0.5])
    assert cinn_loss(z, ld) == pytest.approx(1.5, rel=1e-15)
    theta = [np.array([1.0, 3.0])]  # squared norm 10
    assert cinn_loss(z, ld, theta=theta, tau=0.01) == pytest.approx(1.6, rel=1e-12)
    dup = cinn_loss(np.vstack([z, z]), np.array([0.5, 0.5]))
    assert dup == pytest.approx(1.5, rel=1e-15)
    with pytest.raises(ShapeError):
        cinn_loss(z, np.array([0.5, 0.5]))
    with pytest.raises(ConfigurationError):
        cinn_loss(np.zeros((0, 2)), np.zeros(0))


def test_condition_passes_through_identity_net():
    cond_net = const_net(1, 1)
    cond_net.weights[0][0, 0] = 1.0
    blocks = [CouplingBlock(1, const_net(2, 1), const_net(2, 1))]
    model = CinnModel(2, cond_net, blocks, [7],
                      FlowNormalization.identity(2, 1))
    assert condition(model, np.array([0.3]))[0] == 0.3


def test_identity_initialized_flow_is_pure_permutation():
    config = small_config(M=4, D_y=2, L=3)
    model = cinn_create(config)
    x = np.array([0.3, -1.2, 2.0, 0.7])
    y = np.array([0.5, -0.4])
    z, ld = cinn_forward(model, x, y)
    expected = x.copy()
    for perm in model._perms:
        expected = expected[perm]
    assert np.array_equal(z, expected)
    assert ld == 0.0
    assert np.array_equal(cinn_invert_one(model, z, y), x)


def test_forward_inverse_roundtrip_random_weights():
    config = small_config(M=6, D_y=2, L=3)
    model = randomized(cinn_create(config), 5)
    rng = np.random.default_rng(6)
    X = rng.normal(size=(100, 6))
    Y = rng.normal(size=(100, 2))
    Z, _ = cinn_forward(model, X, Y)
    back = cinn_invert_one(model, Z, Y)
    assert np.max(np.abs(back - X)) <= 1e-8


@pytest.mark.parametrize("M,L", [(2, 1), (4, 3), (6, 3)])
def test_logdet_matches_fd_jacobian(M, L):
    config = small_config(M=M, D_y=2, L=L)
    model = randomized(cinn_create(config), 10 + M)
    rng = np.random.default_rng(20 + M)
    x0 = rng.normal(size=M)
    y0 = rng.normal(size=2)
    _, ld = cinn_forward(model, x0, y0)
    h = 1e-5
    J = np.empty((M, M))
    for j in range(M):
        e = np.zeros(M)
        e[j] = h
        zp, _ = cinn_forward(model, x0 + e, y0)
        zm, _ = cinn_forward(model, x0 - e, y0)
        J[:, j] = (zp - zm) / (2.0 * h)
    _, ld_fd = np.linalg.slogdet(J)
    assert abs(ld - ld_fd) <= 1e-4 * max(1.0, abs(ld))


def test_train_step_gradients_match_fd():
    config = CinnTrainConfig(M=4, D_y=2, D_c=4, L=2, st_hidden=(6,),
                             cond_hidden=(5,), n_epochs=1, tau=0.01)
    model = randomized(cinn_create(config), 30, scale=0.3)
    params = model.params()
    rng = np.random.default_rng(31)
    Xb = rng.normal(size=(3, 4))
    Yb = rng.normal(size=(3, 2))

    nll, grads = _train_step(model, params, Xb, Yb, config,
                             np.random.default_rng(0))

    def loss_now():
        z, ld = cinn_forward(model, Xb, Yb)
        return cinn_loss(z, ld, theta=params, tau=config.tau)

    # with zero dropout the training pass is the public inference pass
    z, ld = cinn_forward(model, Xb, Yb)
    assert nll == pytest.approx(cinn_loss(z, ld), rel=1e-12)

    h = 1e-6
    worst = 0.0
    for p, g in zip(params, grads):
        for i in range(p.size):
            orig = p.flat[i]
            p.flat[i] = orig + h
            lp = loss_now()
            p.flat[i] = orig - h
            lm = loss_now()
            p.flat[i] = orig
            worst = max(worst, abs((lp - lm) / (2.0 * h) - g.flat[i]))
    assert worst <= 1e-5, worst


def test_invert_samples_are_seeded_per_index():
    config = small_config(M=4, D_y=1)
    model = randomized(cinn_create(config), 40)
    target = np.array([0.7])
    five = cinn_invert(model, InverseQuery(target, 5, seed=9))
    three = cinn_invert(model, InverseQuery(target, 3, seed=9))
    for a, b in zip(three, five):
        assert np.array_equal(a.x_hat, b.x_hat)
        assert np.array_equal(a.latent, b.latent)
    for j, cand in enumerate(five):
        assert np.array_equal(
            cand.latent, np.random.default_rng([9, j]).standard_normal(4))


def test_query_validation():
    with pytest.raises(ConfigurationError):
        InverseQuery(np.array([1.0]), sample_count=0)
    with pytest.raises(ValueError):
        InverseQuery(np.array([np.inf]))


class StubSurrogate:
    def __init__(self, d):
        self.d = d

    def predict_batch(self, X):
        return X.sum(axis=1), np.full(X.shape[0], 0.04)


def test_postprocess_fills_forward_stats():
    config = small_config(M=3, D_y=1)
    model = randomized(cinn_create(config), 50)
    cands = cinn_invert(model, InverseQuery(np.array([0.2]), 4, seed=1))
    assert all(c.forward_mean is None for c in cands)
    filled = postprocess(cands, StubSurrogate(3))
    for before, after in zip(cands, filled):
        assert after.forward_mean == pytest.approx(before.x_hat.sum())
        assert after.forward_std[0] == pytest.approx(0.2)
    with pytest.raises(ShapeError):
        postprocess(cands, StubSurrogate(5))
    assert postprocess([], StubSurrogate(3)) == []


def test_serialization_roundtrip_bitwise():
    config = small_config(M=4, D_y=2, L=2)
    rng = np.random.default_rng(60)
    norm = FlowNormalization.from_data(rng.normal(size=(30, 4)),
                                       rng.normal(size=(30, 2)))
    model = randomized(cinn_create(config, norm), 61)
    clone = CinnModel.loads(model.dumps())
    X = rng.normal(size=(10, 4))
    Y = rng.normal(size=(10, 2))
    z0, ld0 = cinn_forward(model, X, Y)
    z1, ld1 = cinn_forward(clone, X, Y)
    assert np.array_equal(z0, z1)
    assert np.array_equal(ld0, ld1)
    for a, b in zip(model._perms, clone._perms):
        assert np.array_equal(a, b)
    doc = model.to_json_dict()
    assert set(doc) == {"schema_version", "M", "D_y", "D_c", "L",
                        "split_indices", "permutation_seeds", "s_clamp",
                        "cond_net", "blocks", "normalization"}
    assert set(doc["blocks"][0]) == {"s_net", "t_net"}
    assert clone.training_curve is None


def test_config_validation():
    with pytest.raises(ConfigurationError):
        CinnTrainConfig(M=1, D_y=1, n_epochs=1)
    with pytest.raises(ConfigurationError):
        CinnTrainConfig(M=2, D_y=1, n_epochs=1, weight_decay=0.1, tau=0.1)
    with pytest.raises(ConfigurationError):
        CinnTrainConfig(M=2, D_y=1)
    with pytest.raises(ConfigurationError):
        CinnTrainConfig(M=2, D_y=1, n_epochs=1, n_steps=1)
    with pytest.raises(ConfigurationError):
        CinnTrainConfig(M=2, D_y=1, n_epochs=1, batch_size=0)


def test_zero_epoch_training_returns_initial_model():
    rng = np.random.default_rng(70)
    X = rng.normal(size=(10, 4))
    Y = rng.normal(size=(10, 2))
    config = small_config(M=4, D_y=2, n_epochs=0)
    model = cinn_train((X, Y), config)
    ref = cinn_create(config, FlowNormalization.from_data(X, Y))
    for p, q in zip(model.params(), ref.params()):
        assert np.array_equal(p, q)
    assert model.training_curve == []


def test_short_training_reduces_nll():
    rng = np.random.default_rng(71)
    X = rng.uniform(-2.0, 2.0, size=(256, 2))
    Y = (np.sum(X ** 2, axis=1) + rng.normal(0.0, 0.5, size=256)).reshape(-1, 1)
    config = CinnTrainConfig(M=2, D_y=1, D_c=8, L=3, st_hidden=(16,),
                             cond_hidden=(8,), batch_size=64, n_epochs=10,
                             lr=3e-3, seed=1)
    model = cinn_train((X, Y), config)
    assert model.diverged_at_step is None
    assert len(model.training_curve) == 10
    assert model.training_curve[-1] < model.training_curve[0]


@pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
@pytest.mark.filterwarnings("ignore:invalid value:RuntimeWarning")
def test_divergent_training_restores_last_checkpoint():
    rng = np.random.default_rng(72)
    X = rng.normal(size=(8, 4))
    Y = rng.normal(size=(8, 2))
    config = small_config(M=4, D_y=2, n_epochs=3, batch_size=8,
                          lr=1e200, checkpoint_every=1000)
    with np.errstate(over="ignore", invalid="ignore"):
        model = cinn_train((X, Y), config)
    assert model.diverged_at_step == 1
    ref = cinn_create(config, FlowNormalization.from_data(X, Y))
    for p, q in zip(model.params(), ref.params()):
        assert np.array_equal(p, q)


def test_online_training_records_curve():
    def sampler(rng, n):
        X = rng.uniform(-1.0, 1.0, size=(n, 2))
        return X, np.sum(X ** 2, axis=1, keepdims=True)

    config = CinnTrainConfig(M=2, D_y=1, D_c=4, L=2, st_hidden=(8,),
                             cond_hidden=(4,), batch_size=32, n_steps=6,
                             curve_every=2, seed=3)
    model = cinn_train(sampler, config)
    assert len(model.training_curve) == 3
    assert np.all(model.norm.x_std > 0.0)


def test_normalization_from_data_guards_constant_columns():
    X = np.column_stack([np.linspace(0, 1, 8), np.full(8, 2.0)])
    Y = np.linspace(-1, 1, 8).reshape(-1, 1)
    norm = FlowNormalization.from_data(X, Y)
    assert norm.x_std[1] == 1.0
    xn = norm.norm_x(X)
    assert np.max(np.abs(norm.denorm_x(xn) - X)) <= 1e-12
    yn = norm.norm_y(Y)
    assert yn.min() == pytest.approx(0.0, abs=1e-12)
    assert yn.max() == pytest.approx(1.0, rel=1e-12)


def test_trained_toy_latents_are_standard_normal(toy_result):
    model = toy_result["model"]
    p = ToyProblem()
    rng = np.random.default_rng(123)
    X = toy_sample_x(p, rng, 2000)
    Y = toy_forward(p, X, rng).reshape(-1, 1)
    Z, _ = cinn_forward(model, X, Y)
    assert np.all(np.abs(Z.mean(axis=0)) <= 0.2), Z.mean(axis=0)
    assert np.all((Z.var(axis=0) >= 0.7) & (Z.var(axis=0) <= 1.3)), Z.var(axis=0)


def test_trained_toy_separates_targets(toy_result):
    model = toy_result["model"]
    r = {}
    for y0 in (0.0, 10.0):
        cands = cinn_invert(model, InverseQuery(np.array([y0]), 500, seed=77))
        Xh = np.stack([c.x_hat for c in cands])
        r[y0] = np.linalg.norm(Xh, axis=1)
    assert np.percentile(r[0.0], 75) < np.percentile(r[10.0], 25)
