import numpy as np
import pytest

from vvnet import nn
from vvnet.nn import Tensor, numeric_grad, rel_error
from vvnet.pointcloud import UNIT_BOX, LabeledPointCloud
from vvnet.vae import (decode_t, elbo_loss, encode, encode_grid, encode_t, init_vae,
                       kl_standard_normal, reconstruction_mse, reparameterize, train_vae)
from vvnet.voxelizer import GridSpec, voxelize


def test_kl_closed_form_examples():
    assert kl_standard_normal(np.zeros(1), np.zeros(1)) == 0.0
    assert abs(kl_standard_normal(np.ones(1), np.zeros(1)) - 0.5) < 1e-12
    # sigma = 2: 0.5 * (4 - 1 - log 4)
    assert abs(kl_standard_normal(np.zeros(1), np.log([4.0])) - 0.5 * (3 - np.log(4))) < 1e-12
    assert kl_standard_normal(np.zeros((3, 8)), np.zeros((3, 8))).tolist() == [0.0] * 3


def test_kl_tensor_matches_array_form():
    rng = np.random.default_rng(0)
    mu, lv = rng.standard_normal((4, 3)), rng.standard_normal((4, 3))
    t = kl_standard_normal(Tensor(mu), Tensor(lv))
    assert float(t.value) == pytest.approx(kl_standard_normal(mu, lv).sum(), abs=1e-12)


def test_reparameterize_moments():
    rng = np.random.default_rng(1)
    mu, lv = np.array([1.5, -2.0]), np.log([0.25, 4.0])
    z = reparameterize(mu, lv, rng.standard_normal((200_000, 2)))
    np.testing.assert_allclose(z.mean(axis=0), mu, atol=0.02)
    np.testing.assert_allclose(z.std(axis=0), [0.5, 2.0], rtol=0.01)


def test_reparameterize_zero_noise_is_mean():
    assert reparameterize(np.array([0.3]), np.array([5.0]), np.zeros(1)).tolist() == [0.3]


def _f64_vae(seed=0, k=2, l=3, hidden=5):
    vae = init_vae(k, l, hidden, seed, dtype=np.float64)
    rng = np.random.default_rng(seed + 10)
    for p in vae.params:
        p.tensor.value = p.value + 0.1 * rng.standard_normal(p.value.shape)
    return vae


@pytest.mark.parametrize("seed", range(5))
def test_elbo_gradients(seed):
    vae = _f64_vae(seed)
    rng = np.random.default_rng(seed)
    x = rng.random((4, 8))
    noise = rng.standard_normal((4, 3))
    for p in vae.params:
        p.zero_grad()
    elbo_loss(x, vae, noise).backward()
    for p in vae.params:
        def f():
            return float(elbo_loss(x, vae, noise).value)
        assert rel_error(p.grad, numeric_grad(f, p.tensor.value)) < 1e-4, p.name


@pytest.mark.parametrize("seed", range(5))
def test_encode_decode_gradients_wrt_input(seed):
    vae = _f64_vae(seed)
    rng = np.random.default_rng(seed)
    x = rng.random((3, 8))
    up_mu, up_lv = rng.standard_normal((3, 3)), rng.standard_normal((3, 3))
    xt = Tensor(x, True)
    mu, lv = encode_t(xt, vae)
    nn.add(nn.sum_all(nn.mul(mu, up_mu)), nn.sum_all(nn.mul(lv, up_lv))).backward()

    def f():
        m, v = encode_t(Tensor(x), vae)
        return float(np.sum(m.value * up_mu) + np.sum(v.value * up_lv))
    assert rel_error(xt.grad, numeric_grad(f, x)) < 1e-4

    z = rng.standard_normal((3, 3))
    up = rng.standard_normal((3, 8))
    zt = Tensor(z, True)
    nn.sum_all(nn.mul(decode_t(zt, vae), up)).backward()
    assert rel_error(zt.grad, numeric_grad(
        lambda: float(np.sum(decode_t(Tensor(z), vae).value * up)), z)) < 1e-4


def test_init_is_deterministic_and_shaped():
    a, b = init_vae(seed=3), init_vae(seed=3)
    assert all(p.value.tobytes() == q.value.tobytes() for p, q in zip(a.params, b.params))
    mu, lv = encode(np.zeros((5, 4, 4, 4)), a)
    assert mu.shape == (5, 8) and lv.shape == (5, 8)


def test_wrong_block_size_rejected():
    with pytest.raises(ValueError):
        encode(np.zeros((2, 27)), init_vae(k=4))


def test_encode_grid_shapenet_shape():
    rng = np.random.default_rng(0)
    sub = voxelize(LabeledPointCloud(rng.random((400, 3))), GridSpec.shapenet(), UNIT_BOX)
    grid = encode_grid(sub, init_vae())
    assert grid.values.shape == (16, 16, 16, 8)


def test_encode_grid_matches_per_block_encoding():
    rng = np.random.default_rng(1)
    sub = voxelize(LabeledPointCloud(rng.random((60, 3))), GridSpec(3, 3, 3, k=4), UNIT_BOX)
    vae = init_vae(seed=2)
    grid = encode_grid(sub, vae).values
    for idx in np.ndindex(3, 3, 3):
        mu, _ = encode(sub.values[idx].reshape(1, -1), vae)
        np.testing.assert_allclose(grid[idx], mu[0], rtol=1e-6, atol=1e-6)


def test_shuffling_blocks_commutes_with_encoding():
    rng = np.random.default_rng(3)
    x = rng.random((20, 64)).astype(np.float32)
    vae = init_vae(seed=0)
    perm = rng.permutation(20)
    mu, _ = encode(x, vae)
    mu_p, _ = encode(x[perm], vae)
    np.testing.assert_allclose(mu[perm], mu_p, rtol=1e-6, atol=1e-7)


def _blocks(n, seed):
    rng = np.random.default_rng(seed)
    sub = voxelize(LabeledPointCloud(rng.random((n, 3))), GridSpec(6, 6, 6, k=4), UNIT_BOX)
    b = sub.blocks()
    return b[np.any(b != 0, axis=1)]


def test_zero_lr_leaves_weights_unchanged():
    vae = init_vae(seed=0)
    before = {k: v.copy() for k, v in vae.state().items()}
    train_vae(_blocks(300, 0), epochs=1, lr=0.0, model=vae)
    for k, v in vae.state().items():
        assert v.tobytes() == before[k].tobytes()


def test_training_is_deterministic():
    blocks = _blocks(300, 1)
    a, ha = train_vae(blocks, epochs=2, seed=5)
    b, hb = train_vae(blocks, epochs=2, seed=5)
    assert ha.epoch_loss == hb.epoch_loss
    assert all(a.state()[k].tobytes() == b.state()[k].tobytes() for k in a.state())


def test_training_reduces_reconstruction_error():
    train, held = _blocks(2000, 2), _blocks(500, 3)
    model, hist = train_vae(train, epochs=5, seed=0)
    assert hist.epoch_loss[-1] < hist.epoch_loss[0]
    assert reconstruction_mse(held, model) < 0.2 * reconstruction_mse(held, init_vae(seed=0))


def test_empty_dataset_rejected():
    with pytest.raises(ValueError):
        train_vae(np.zeros((0, 64)))
