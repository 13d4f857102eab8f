"""Dense net and derivative-view tests.

Central finite differences are the oracle throughout: FD of forward gates
gradient_out, FD of gradient_out gates hessian_out, and FD over flattened
parameters gates the hand-derived training gradients.
"""

import numpy as np
import pytest

from fieldlearn import nets
from fieldlearn.errors import (CapabilityError, ConfigurationError, DataError,
                               ShapeError, TrainingError)


def _random_idnn(input_dim, hidden, seed, activation="softplus"):
    return nets.make_idnn(input_dim, hidden, activation=activation, seed=seed)


def _fd_gradient(net, x, step=1e-4):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    for k in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[k] += step
        xm[k] -= step
        out[k] = (nets.forward(net, xp) - nets.forward(net, xm)) / (2 * step)
    return out


def _fd_hessian(net, x, step=1e-4):
    x = np.asarray(x, dtype=float)
    d = x.size
    out = np.zeros((d, d))
    for k in range(d):
        xp, xm = x.copy(), x.copy()
        xp[k] += step
        xm[k] -= step
        out[:, k] = (nets.gradient_out(net, xp) - nets.gradient_out(net, xm)) / (2 * step)
    return out


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------

def test_zero_net_outputs_zero():
    idnn = _random_idnn(3, [5], seed=0)
    for w in idnn.net.weights:
        w[:] = 0.0
    x = np.random.default_rng(1).standard_normal((7, 3))
    np.testing.assert_array_equal(nets.forward(idnn, x), np.zeros(7))
    np.testing.assert_array_equal(nets.gradient_out(idnn, x), np.zeros((7, 3)))


def test_single_linear_layer_is_affine():
    w = np.array([[2.0, -1.0, 0.5]])
    b = np.array([0.25])
    net = nets.DenseNet([w], [b], nets.get_activation("linear"), 3)
    x = np.array([1.0, 2.0, -4.0])
    assert nets.forward(net, x) == pytest.approx(2.0 - 2.0 - 2.0 + 0.25)
    np.testing.assert_allclose(nets.gradient_out(net, x), w[0], rtol=1e-15)
    np.testing.assert_array_equal(nets.hessian_out(net, x), np.zeros((3, 3)))


def test_two_layer_hand_computation():
    w1 = np.array([[1.0, 2.0], [0.0, 1.0]])
    b1 = np.array([0.5, -1.0])
    w2 = np.array([[1.0, -1.0]])
    b2 = np.array([2.0])
    net = nets.DenseNet([w1, w2], [b1, b2], nets.get_activation("softplus"), 2)
    x = np.array([0.3, -0.2])
    sp = lambda t: np.log1p(np.exp(t))
    expected = 2.0 + sp(0.5 + 0.3 + 2 * -0.2) - sp(-1.0 + -0.2)
    assert nets.forward(net, x) == pytest.approx(expected, rel=1e-14)


def test_forward_shape_checks():
    idnn = _random_idnn(2, [4], seed=3)
    with pytest.raises(ShapeError):
        nets.forward(idnn, np.ones((5, 3)))
    with pytest.raises(ShapeError):
        nets.DenseNet([np.ones((3, 2)), np.ones((1, 4))],
                      [np.zeros(3), np.zeros(1)],
                      nets.get_activation("softplus"), 2)


# ---------------------------------------------------------------------------
# input derivatives
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("activation", ["softplus", "tanh"])
def test_gradient_matches_finite_differences(activation):
    rng = np.random.default_rng(11)
    for seed in range(3):
        idnn = _random_idnn(3, [8, 6], seed=seed, activation=activation)
        for _ in range(5):
            x = rng.uniform(-2, 2, 3)
            analytic = nets.gradient_out(idnn, x)
            fd = _fd_gradient(idnn.net, x)
            assert np.max(np.abs(analytic - fd)) < 1e-5 * max(1.0, np.max(np.abs(fd)))


def test_hessian_matches_fd_of_gradient():
    rng = np.random.default_rng(13)
    for seed in range(3):
        idnn = _random_idnn(3, [8, 6], seed=seed)
        for _ in range(3):
            x = rng.uniform(-2, 2, 3)
            analytic = nets.hessian_out(idnn, x)
            fd = _fd_hessian(idnn.net, x)
            assert np.max(np.abs(analytic - fd)) < 1e-4 * max(1.0, np.max(np.abs(fd)))


def test_hessian_bitwise_symmetric():
    idnn = _random_idnn(4, [10, 10], seed=5)
    x = np.random.default_rng(2).uniform(-1, 1, (20, 4))
    hess = nets.hessian_out(idnn, x)
    np.testing.assert_array_equal(hess, np.swapaxes(hess, 1, 2))


def test_hessian_requires_second_derivative():
    act = nets.Activation("半smooth", np.tanh, _tanh_like := lambda z: 1 - np.tanh(z) ** 2)
    net = nets.DenseNet([np.ones((2, 1)), np.ones((1, 2))],
                        [np.zeros(2), np.zeros(1)], act, 1)
    with pytest.raises(CapabilityError, match="second"):
        nets.hessian_out(net, np.array([0.5]))


# ---------------------------------------------------------------------------
# transform layer
# ---------------------------------------------------------------------------

def test_square_transform_makes_output_exactly_even():
    idnn = nets.make_idnn(2, [10, 10],
                          transforms=[nets.take(0), nets.square(1)], seed=9)
    rng = np.random.default_rng(3)
    x = rng.uniform(-2, 2, (50, 2))
    mirrored = x.copy()
    mirrored[:, 1] = -mirrored[:, 1]
    np.testing.assert_array_equal(nets.forward(idnn, x),
                                  nets.forward(idnn, mirrored))


def test_gradient_through_square_vanishes_on_axis():
    idnn = nets.make_idnn(2, [6], transforms=[nets.take(0), nets.square(1)],
                          seed=4)
    x = np.array([[0.7, 0.0], [-0.3, 0.0]])
    grad = nets.gradient_out(idnn, x)
    np.testing.assert_array_equal(grad[:, 1], np.zeros(2))


def test_identity_transforms_match_plain_net():
    plain = nets.make_idnn(2, [7], seed=12)
    wrapped = nets.make_idnn(2, [7], transforms=[nets.take(0), nets.take(1)],
                             seed=12)
    x = np.random.default_rng(1).uniform(-1, 1, (9, 2))
    np.testing.assert_array_equal(nets.forward(plain, x),
                                  nets.forward(wrapped, x))
    np.testing.assert_array_equal(nets.gradient_out(plain, x),
                                  nets.gradient_out(wrapped, x))


def test_transform_derivatives_chain_exactly():
    # linear activation, single layer: Y = a*(x0) + c*(x1^2) + b
    w = np.array([[3.0, -1.5]])
    b = np.array([0.2])
    net = nets.DenseNet([w], [b], nets.get_activation("linear"), 2,
                        transforms=(nets.take(0), nets.square(1)))
    x = np.array([[0.4, 0.8]])
    np.testing.assert_allclose(nets.forward(net, x),
                               [3.0 * 0.4 - 1.5 * 0.64 + 0.2], rtol=1e-15)
    np.testing.assert_allclose(nets.gradient_out(net, x),
                               [[3.0, -1.5 * 2 * 0.8]], rtol=1e-15)
    expected_h = np.zeros((2, 2))
    expected_h[1, 1] = -3.0
    np.testing.assert_allclose(nets.hessian_out(net, x)[0], expected_h,
                               rtol=1e-15)


def test_transform_count_mismatch_is_shape_error():
    with pytest.raises(ShapeError):
        nets.DenseNet([np.ones((4, 3)), np.ones((1, 4))],
                      [np.zeros(4), np.zeros(1)],
                      nets.get_activation("softplus"), 2,
                      transforms=(nets.take(0), nets.square(1)))


def test_gradient_with_transforms_matches_fd():
    idnn = nets.make_idnn(2, [8, 5],
                          transforms=[nets.take(0), nets.square(1)], seed=21)
    rng = np.random.default_rng(7)
    for _ in range(5):
        x = rng.uniform(-1.5, 1.5, 2)
        fd = _fd_gradient(idnn.net, x)
        analytic = nets.gradient_out(idnn, x)
        assert np.max(np.abs(analytic - fd)) < 1e-5 * max(1.0, np.max(np.abs(fd)))
        fd_h = _fd_hessian(idnn.net, x)
        analytic_h = nets.hessian_out(idnn, x)
        assert np.max(np.abs(analytic_h - fd_h)) < 1e-4 * max(1.0, np.max(np.abs(fd_h)))


# ---------------------------------------------------------------------------
# convexity
# ---------------------------------------------------------------------------

def test_convexity_of_quadratic_nets():
    bowl = nets.DenseNet([np.array([[1.0]])], [np.zeros(1)],
                         nets.get_activation("linear"), 1,
                         transforms=(nets.square(0),))
    cap = nets.DenseNet([np.array([[-1.0]])], [np.zeros(1)],
                        nets.get_activation("linear"), 1,
                        transforms=(nets.square(0),))
    pts = np.linspace(-2, 2, 9)[:, None]
    assert nets.is_convex(bowl, pts).all()
    assert not nets.is_convex(cap, pts).any()


def test_convexity_matches_eigenvalue_check():
    idnn = _random_idnn(2, [12, 12], seed=33)
    xv, yv = np.meshgrid(np.linspace(-2, 2, 10), np.linspace(-2, 2, 10))
    pts = np.column_stack([xv.ravel(), yv.ravel()])
    flags = nets.is_convex(idnn, pts)
    hess = nets.hessian_out(idnn, pts)
    reference = np.array([np.all(np.linalg.eigvalsh(h) > 0) for h in hess])
    np.testing.assert_array_equal(flags, reference)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def _flatten(params):
    return np.concatenate([p.ravel() for p in params])


def test_parameter_gradients_match_fd():
    rng = np.random.default_rng(17)
    idnn = _random_idnn(2, [3], seed=8)
    net = idnn.net
    x = rng.uniform(-1, 1, (6, 2))
    data = nets.TrainingData(
        x,
        values=rng.standard_normal(6),
        gradients=rng.standard_normal((6, 2)),
        hessians=(lambda h: (h + np.swapaxes(h, 1, 2)) / 2)(
            rng.standard_normal((6, 2, 2))))
    config = nets.TrainConfig(function_weight=0.7, gradient_weight=1.3,
                              hessian_weight=0.4)

    def loss_value():
        loss, _ = nets._loss_and_param_grads(net, data, config)
        return loss

    _, grads = nets._loss_and_param_grads(net, data, config)
    params = net.parameters()
    flat_grad = _flatten(grads)
    fd = np.zeros_like(flat_grad)
    step = 1e-6
    offset = 0
    for p in params:
        for idx in range(p.size):
            orig = p.flat[idx]
            p.flat[idx] = orig + step
            up = loss_value()
            p.flat[idx] = orig - step
            down = loss_value()
            p.flat[idx] = orig
            fd[offset + idx] = (up - down) / (2 * step)
        offset += p.size
    scale = max(1.0, np.max(np.abs(fd)))
    assert np.max(np.abs(flat_grad - fd)) < 1e-4 * scale


def test_parameter_gradients_with_transforms_match_fd():
    rng = np.random.default_rng(19)
    idnn = nets.make_idnn(2, [3], transforms=[nets.take(0), nets.square(1)],
                          seed=2)
    net = idnn.net
    data = nets.TrainingData(rng.uniform(-1, 1, (5, 2)),
                             gradients=rng.standard_normal((5, 2)))
    config = nets.TrainConfig()
    _, grads = nets._loss_and_param_grads(net, data, config)
    flat_grad = _flatten(grads)
    params = net.parameters()
    fd = np.zeros_like(flat_grad)
    step = 1e-6
    offset = 0
    for p in params:
        for idx in range(p.size):
            orig = p.flat[idx]
            p.flat[idx] = orig + step
            up = nets._loss_and_param_grads(net, data, config)[0]
            p.flat[idx] = orig - step
            down = nets._loss_and_param_grads(net, data, config)[0]
            p.flat[idx] = orig
            fd[offset + idx] = (up - down) / (2 * step)
        offset += p.size
    assert np.max(np.abs(flat_grad - fd)) < 1e-4 * max(1.0, np.max(np.abs(fd)))


def test_training_on_zero_gradients_drives_loss_down():
    idnn = _random_idnn(1, [8], seed=1)
    x = np.linspace(-1, 1, 40)[:, None]
    data = nets.TrainingData(x, gradients=np.zeros((40, 1)))
    config = nets.TrainConfig(epochs=600, batch_size=10, seed=0)
    _, history = nets.train_idnn(idnn, data, config)
    assert history[-1] < 1e-4
    grad = nets.gradient_out(idnn, x)
    assert np.sqrt(np.mean(grad ** 2)) < 1e-2


def test_training_learns_linear_gradient():
    # gradient data 2x comes from f(x) = x^2
    rng = np.random.default_rng(0)
    x = rng.uniform(-1.0, 1.0, (200, 1))
    data = nets.TrainingData(x, gradients=2.0 * x)
    idnn = nets.make_idnn(1, [16, 16], seed=3)
    config = nets.TrainConfig(epochs=400, batch_size=20, seed=1)
    _, history = nets.train_idnn(idnn, data, config)
    # later stages at lower rates settle the stochastic wobble
    for stage, rate in enumerate((0.002, 0.0005), start=2):
        fine = nets.TrainConfig(epochs=300, batch_size=20, seed=stage,
                                learning_rate=rate)
        nets.train_idnn(idnn, data, fine)
    held_out = np.linspace(-0.9, 0.9, 37)[:, None]
    pred = nets.gradient_out(idnn, held_out)
    rmse = np.sqrt(np.mean((pred - 2.0 * held_out) ** 2))
    assert rmse < 1e-2
    assert history[-1] < history[0]


def test_training_error_reports_location():
    x = np.linspace(-1, 1, 30)[:, None]
    data = nets.TrainingData(x, gradients=2.0 * x)
    idnn = _random_idnn(1, [6], seed=0)
    config = nets.TrainConfig(learning_rate=1e12, optimizer="sgd", epochs=5)
    with pytest.raises(TrainingError, match="epoch"):
        nets.train_idnn(idnn, data, config)


def test_training_data_validation():
    with pytest.raises(DataError):
        nets.TrainingData(np.zeros((0, 2)), values=np.zeros(0))
    with pytest.raises(DataError, match="channel"):
        nets.TrainingData(np.zeros((4, 2)))
    with pytest.raises(ShapeError):
        nets.TrainingData(np.zeros((4, 2)), gradients=np.zeros((4, 3)))
    with pytest.raises(DataError, match="finite"):
        nets.TrainingData(np.zeros((4, 2)), values=np.full(4, np.nan))


def test_train_config_validation():
    with pytest.raises(ConfigurationError):
        nets.TrainConfig(learning_rate=0.0)
    with pytest.raises(ConfigurationError):
        nets.TrainConfig(optimizer="adam")
    with pytest.raises(ConfigurationError):
        nets.TrainConfig(epochs=0)


# ---------------------------------------------------------------------------
# antiderivative view
# ---------------------------------------------------------------------------

def test_antiderivative_shares_parameter_storage():
    idnn = _random_idnn(2, [6], seed=7)
    anti = nets.antiderivative(idnn)
    assert anti is idnn.net
    before = nets.forward(anti, np.array([0.3, 0.4]))
    idnn.net.biases[-1][0] += 1.0
    after = nets.forward(anti, np.array([0.3, 0.4]))
    assert after == pytest.approx(before + 1.0, rel=1e-15)


def test_antiderivative_fd_matches_gradient_view():
    idnn = _random_idnn(2, [9, 9], seed=15)
    anti = nets.antiderivative(idnn)
    x = np.array([0.25, -0.6])
    fd = _fd_gradient(anti, x)
    np.testing.assert_allclose(nets.gradient_out(idnn, x), fd,
                               rtol=1e-5, atol=1e-8)


# ---------------------------------------------------------------------------
# multi-resolution fitting
# ---------------------------------------------------------------------------

def test_multi_resolution_zero_residual_limit():
    rng = np.random.default_rng(5)
    x = rng.uniform(-1, 1, (80, 1))
    base = _random_idnn(1, [10], seed=2)
    labels = nets.forward(base, x)          # base already exact
    data = nets.TrainingData(x, values=labels)
    config = nets.TrainConfig(epochs=1500, batch_size=20, seed=0,
                              learning_rate=0.001)
    detail, _ = nets.multi_resolution_fit(base, data, config)
    residual = nets.forward(detail, x)
    # labels carry RMS ~1.6; the detail stage should add almost nothing
    assert np.sqrt(np.mean(residual ** 2)) < 1e-2


def test_multi_resolution_requires_reference_for_penalty():
    x = np.linspace(-1, 1, 20)[:, None]
    base = _random_idnn(1, [6], seed=0)
    data = nets.TrainingData(x, values=np.zeros(20))
    with pytest.raises(ConfigurationError, match="reference"):
        nets.multi_resolution_fit(base, data, nets.TrainConfig(epochs=1),
                                  penalty_beta=0.5)


def test_stacked_forward_sums_views():
    base = _random_idnn(2, [5], seed=1)
    detail = _random_idnn(2, [5], seed=2)
    x = np.random.default_rng(0).uniform(-1, 1, (6, 2))
    np.testing.assert_allclose(
        nets.stacked_forward(base, detail, x),
        nets.forward(base, x) + nets.forward(detail, x), rtol=1e-15)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def test_net_round_trips_through_csv(tmp_path):
    idnn = nets.make_idnn(2, [7, 4],
                          transforms=[nets.take(0), nets.square(1)], seed=6)
    path = nets.save_net(idnn, tmp_path / "net.csv")
    loaded = nets.load_net(path)
    for w0, w1 in zip(idnn.net.weights, loaded.weights):
        np.testing.assert_array_equal(w0, w1)
    for b0, b1 in zip(idnn.net.biases, loaded.biases):
        np.testing.assert_array_equal(b0, b1)
    x = np.random.default_rng(8).uniform(-1, 1, (5, 2))
    np.testing.assert_array_equal(nets.forward(idnn, x),
                                  nets.forward(loaded, x))
    np.testing.assert_array_equal(nets.gradient_out(idnn, x),
                                  nets.gradient_out(loaded, x))


def test_load_rejects_foreign_files(tmp_path):
    path = tmp_path / "net.csv"
    path.write_text("x_1,x_2\n1,2\n")
    with pytest.raises(DataError, match="serialized net"):
        nets.load_net(path)
    with pytest.raises(FileNotFoundError):
        nets.load_net(tmp_path / "absent.csv")
