import numpy as np
import pytest

from app.errors import ConvergenceError, DimensionError
from app.linalg import power_iteration
from app.mlp import (
    SN_MAX_ITER,
    RunningScaler,
    empirical_lipschitz,
    forward,
    forward_batch,
    init_network,
    layer_spectral_norms,
    loss_and_gradients,
    normalize_lipschitz,
    sgd_momentum_step,
    spectral_product,
    train_offline,
)
from app.schemas import TrainingHyper

CAR_LAYERS = [3, 50, 50, 50, 50, 1]


def test_init_network_shapes_and_bounds():
    """Test weights are (fan_out, fan_in) and within the He-uniform limit"""
    net = init_network(CAR_LAYERS, seed=0)
    assert net.depth == 5
    for w, (fan_in, fan_out) in zip(net.weights, zip(CAR_LAYERS[:-1], CAR_LAYERS[1:])):
        assert w.shape == (fan_out, fan_in)
        assert np.all(np.abs(w) <= np.sqrt(6.0 / fan_in))
    assert all(not np.any(b) for b in net.momentum_buffers)


def test_init_network_seeding():
    """Test equal seeds give equal weights and different seeds differ"""
    a, b, c = init_network([3, 5, 1], 1), init_network([3, 5, 1], 1), init_network([3, 5, 1], 2)
    assert all(np.array_equal(x, y) for x, y in zip(a.weights, b.weights))
    assert not np.array_equal(a.weights[0], c.weights[0])


def test_init_network_rejects_bad_sizes():
    """Test invalid layer lists are rejected"""
    with pytest.raises(ValueError):
        init_network([3], seed=0)
    with pytest.raises(ValueError):
        init_network([3, 0, 1], seed=0)


def test_forward_zero_network(zero_net):
    """Test an all-zero network outputs zero"""
    assert forward(zero_net, [1.0, -2.0, 3.0])[0] == 0.0


def _net_with(weights):
    net = init_network([w.shape[1] for w in weights] + [weights[-1].shape[0]], seed=0)
    net.weights = [np.array(w, dtype=np.float64) for w in weights]
    net.momentum_buffers = [np.zeros_like(w) for w in net.weights]
    net.sn_vectors = [None] * net.depth
    return net


def test_forward_single_linear_layer():
    """Test a [1, 1] network with weight 2 maps 3 to 6"""
    net = _net_with([np.array([[2.0]])])
    assert forward(net, [3.0])[0] == 6.0


def test_forward_relu_blocks_negative_pre_activation():
    """Test weights -1 then 5 map 2 to 0 because the ReLU kills -2"""
    net = _net_with([np.array([[-1.0]]), np.array([[5.0]])])
    assert forward(net, [2.0])[0] == 0.0


def test_forward_is_positively_homogeneous(small_net):
    """Test f(c x) = c f(x) for c > 0 (bias-free ReLU)"""
    x = np.array([0.3, -1.2, 2.0])
    np.testing.assert_allclose(forward(small_net, 2.5 * x), 2.5 * forward(small_net, x), rtol=1e-12)


def test_forward_batch_matches_rows(small_net, rng):
    """Test batch evaluation equals row-by-row evaluation"""
    xs = rng.normal(size=(6, 3))
    batch = forward_batch(small_net, xs)
    for x, y in zip(xs, batch):
        np.testing.assert_allclose(forward(small_net, x), y, rtol=1e-14)


def test_forward_wrong_width(small_net):
    """Test an input of the wrong width raises a dimension error"""
    with pytest.raises(DimensionError):
        forward(small_net, [1.0, 2.0])


def test_loss_zero_for_exact_targets(small_net, rng):
    """Test the loss vanishes when targets are the network output"""
    xs = rng.normal(size=(5, 3))
    loss, grads = loss_and_gradients(small_net, xs, forward_batch(small_net, xs))
    assert loss == 0.0
    assert all(not np.any(g) for g in grads)


def _kink_free_rows(net, xs, margin=1e-3):
    """Rows whose hidden pre-activations all stay at least margin away from the ReLU kink"""
    h = xs
    keep = np.ones(len(xs), dtype=bool)
    for w in net.weights[:-1]:
        z = h @ w.T
        keep &= np.min(np.abs(z), axis=1) >= margin
        h = np.maximum(z, 0.0)
    return xs[keep]


@pytest.mark.parametrize("seed", range(50))
def test_gradients_match_finite_differences(seed):
    """Test backprop against central finite differences away from ReLU kinks"""
    rng = np.random.default_rng(seed)
    net = init_network([3, 6, 5, 1], seed=seed)
    xs = _kink_free_rows(net, rng.normal(size=(64, 3)))[:4]
    assert len(xs) == 4
    ys = rng.normal(size=(4, 1))
    _, grads = loss_and_gradients(net, xs, ys)

    h = 1e-6
    for layer, w in enumerate(net.weights):
        numeric = np.zeros_like(w)
        for index in np.ndindex(w.shape):
            original = w[index]
            w[index] = original + h
            up, _ = loss_and_gradients(net, xs, ys)
            w[index] = original - h
            down, _ = loss_and_gradients(net, xs, ys)
            w[index] = original
            numeric[index] = (up - down) / (2.0 * h)
        scale = max(np.max(np.abs(numeric)), 1e-3)
        assert np.max(np.abs(grads[layer] - numeric)) <= 1e-5 * scale


def test_loss_rejects_mismatched_targets(small_net):
    """Test targets must match the batch"""
    with pytest.raises(DimensionError):
        loss_and_gradients(small_net, np.ones((4, 3)), np.ones((3, 1)))


def test_loss_and_gradient_of_scalar_layer():
    """Test weight 2, input 1, target 0 gives loss 4 and gradient 4"""
    net = _net_with([np.array([[2.0]])])
    loss, grads = loss_and_gradients(net, [[1.0]], [[0.0]])
    assert loss == 4.0
    np.testing.assert_array_equal(grads[0], [[4.0]])


def test_sgd_momentum_step_updates():
    """Test buffer <- m * buffer + g and w <- w - lr * buffer"""
    net = init_network([2, 2, 1], seed=0)
    hyper = TrainingHyper(learning_rate=0.1, momentum=0.5, batch_size=1)
    w0 = [w.copy() for w in net.weights]
    grads = [np.ones_like(w) for w in net.weights]
    sgd_momentum_step(net, grads, hyper)
    sgd_momentum_step(net, grads, hyper)
    for w, start in zip(net.weights, w0):
        # buffers: 1 then 1.5
        np.testing.assert_allclose(w, start - 0.1 * 1.0 - 0.1 * 1.5)


def test_sgd_momentum_step_shape_check(small_net):
    """Test gradients of the wrong shape are rejected"""
    hyper = TrainingHyper()
    with pytest.raises(DimensionError):
        sgd_momentum_step(small_net, [np.ones((1, 1))] * small_net.depth, hyper)


def test_sgd_momentum_two_identical_steps():
    """Test momentum 0.9, lr 0.1 and unit gradients take weight 0 to -0.29 in two steps"""
    net = _net_with([np.array([[0.0]])])
    hyper = TrainingHyper(learning_rate=0.1, momentum=0.9, batch_size=1)
    sgd_momentum_step(net, [np.array([[1.0]])], hyper)
    sgd_momentum_step(net, [np.array([[1.0]])], hyper)
    assert net.weights[0][0, 0] == pytest.approx(-0.29, abs=1e-12)


def test_training_progress_on_quadratic_target():
    """Test 200 momentum-SGD steps on a fixed batch at least halve the loss"""
    rng = np.random.default_rng(0)
    xs = rng.uniform(-1.0, 1.0, size=(64, 3))
    ys = np.sum(xs * xs, axis=1, keepdims=True)
    net = init_network([3, 32, 32, 1], seed=0)
    hyper = TrainingHyper(learning_rate=1e-3, momentum=0.9, batch_size=64)
    before, _ = loss_and_gradients(net, xs, ys)
    for _ in range(200):
        _, grads = loss_and_gradients(net, xs, ys)
        sgd_momentum_step(net, grads, hyper)
    after, _ = loss_and_gradients(net, xs, ys)
    assert after <= 0.5 * before


def test_normalize_bounds_product():
    """Test the spectral product is at most zeta after normalization"""
    net = init_network(CAR_LAYERS, seed=3)
    assert spectral_product(net) > 1.0
    normalize_lipschitz(net)
    assert spectral_product(net) <= 1.0 + 1e-9


def test_normalize_leaves_small_layers():
    """Test layers already within zeta^(1/L) are untouched"""
    net = init_network([3, 4, 1], seed=0, zeta=1.0)
    net.weights[0] *= 0.01 / np.linalg.svd(net.weights[0], compute_uv=False)[0]
    before = net.weights[0].copy()
    normalize_lipschitz(net)
    np.testing.assert_array_equal(net.weights[0], before)


def test_normalize_strict_rescales_every_layer():
    """Test strict mode sets every layer to exactly zeta^(1/L)"""
    net = init_network([3, 4, 4, 1], seed=0, zeta=0.5)
    net.weights[0] *= 1e-3
    normalize_lipschitz(net, strict=True)
    target = 0.5 ** (1.0 / 3.0)
    for sigma in layer_spectral_norms(net):
        assert sigma == pytest.approx(target, rel=1e-9)




def test_normalize_layer_with_sigma_three():
    """Test zeta 1 over four layers scales a layer with sigma 3 by 1/3"""
    net = init_network([2, 2, 2, 2, 1], seed=0)
    for index in range(net.depth):
        net.weights[index] = np.zeros_like(net.weights[index])
    net.weights[0] = np.diag([3.0, 1.0])
    net.weights[1] = 0.5 * np.eye(2)
    net.weights[2] = 0.5 * np.eye(2)
    net.weights[3] = np.array([[0.5, 0.0]])
    normalize_lipschitz(net)
    np.testing.assert_allclose(net.weights[0], np.diag([1.0, 1.0 / 3.0]), rtol=1e-12)
    np.testing.assert_array_equal(net.weights[1], 0.5 * np.eye(2))


def test_normalize_with_clustered_singular_values():
    """Test a layer whose top singular values nearly coincide is still normalized"""
    w = np.diag([2.0, 2.0 * (1.0 - 1e-6), 1.0, 0.5])
    with pytest.raises(ConvergenceError):
        power_iteration(w, tol=1e-13, max_iter=SN_MAX_ITER)

    net = _net_with([w, np.full((1, 4), 0.25)])
    sigmas = normalize_lipschitz(net, tol=1e-13)
    assert sigmas[0] == pytest.approx(2.0, rel=1e-12)
    assert np.linalg.norm(net.weights[0], 2) == pytest.approx(1.0, rel=1e-12)
    assert spectral_product(net) <= 1.0 + 1e-9


def test_normalize_skips_zero_layers(zero_net):
    """Test an all-zero network stays zero"""
    normalize_lipschitz(zero_net)
    assert all(not np.any(w) for w in zero_net.weights)


def test_empirical_lipschitz_within_bound():
    """Test the sampled Lipschitz estimate respects the normalized bound"""
    net = init_network(CAR_LAYERS, seed=5)
    normalize_lipschitz(net)
    estimate = empirical_lipschitz(net, [-5.0] * 3, [5.0] * 3, n_pairs=10000, seed=0)
    assert 0.0 <= estimate <= 1.0 + 1e-9


def test_empirical_lipschitz_of_linear_map():
    """Test a single linear layer with weight 2 has sampled Lipschitz constant 2"""
    net = _net_with([np.array([[2.0]])])
    assert empirical_lipschitz(net, [-5.0], [5.0], n_pairs=1000, seed=0) == pytest.approx(2.0, abs=1e-9)


def test_empirical_lipschitz_scales_with_output_layer():
    """Test scaling the output layer by 10 scales the sampled constant by 10"""
    net = init_network([3, 8, 8, 1], seed=4)
    before = empirical_lipschitz(net, [-5.0] * 3, [5.0] * 3, n_pairs=2000, seed=1)
    net.weights[-1] *= 10.0
    after = empirical_lipschitz(net, [-5.0] * 3, [5.0] * 3, n_pairs=2000, seed=1)
    assert after == pytest.approx(10.0 * before, rel=1e-12)


def test_running_scaler_moments():
    """Test the Welford mean and sample std"""
    scaler = RunningScaler(2)
    data = np.array([[1.0, 10.0], [3.0, 10.0], [5.0, 10.0]])
    for row in data:
        scaler.update(row)
    np.testing.assert_allclose(scaler.mean, [3.0, 10.0])
    np.testing.assert_allclose(scaler.std, [2.0, scaler.floor])
    np.testing.assert_allclose(scaler.transform([5.0, 10.0]), [1.0, 0.0])


def test_train_offline_reduces_loss():
    """Test offline training fits a simple linear residual"""
    rng = np.random.default_rng(0)
    xs = rng.uniform(-1, 1, size=(256, 3))
    ys = 0.3 * xs[:, :1]
    hyper = TrainingHyper(learning_rate=1e-2, momentum=0.9, batch_size=32)
    untrained = init_network([3, 16, 16, 1], seed=0)
    before, _ = loss_and_gradients(untrained, xs, ys)
    net, wall = train_offline(xs, ys, [3, 16, 16, 1], hyper, epochs=20, seed=0)
    after, _ = loss_and_gradients(net, xs, ys)
    assert after < before
    assert wall >= 0.0
    assert spectral_product(net) <= 1.0 + 1e-9


def test_train_offline_empty():
    """Test training on no data is rejected"""
    with pytest.raises(ValueError):
        train_offline(np.empty((0, 3)), np.empty((0, 1)), [3, 4, 1], TrainingHyper(), epochs=1, seed=0)
