import numpy as np
import pytest

from syncpretrain.autoencoder import (Layer, StackedAutoencoder, backprop_epoch,
                                      finite_diff_grad, forward, load_autoencoder, loss,
                                      loss_and_grad, mse_per_example, save_autoencoder, unfold)
from syncpretrain.linalg import ShapeError, sigmoid

# eps=1e-5 central differences carry ~1e-11 absolute noise in float64; components
# smaller than this floor are compared absolutely rather than relatively
REL_FLOOR = 1e-6


def rel_error(analytic, numeric):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), REL_FLOOR)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def random_encoder(rng, dims, scale=1.0):
    return [Layer(rng.normal(0, scale, (o, i)), rng.normal(0, scale, o))
            for i, o in zip(dims, dims[1:])]


def test_unfold_table1_dims():
    enc = [Layer(np.zeros((o, i)), np.zeros(o))
           for i, o in zip((784, 1000, 500, 250), (1000, 500, 250, 30))]
    sae = unfold(enc)
    assert sae.dims == [784, 1000, 500, 250, 30, 250, 500, 1000, 784]
    assert len(sae.layers) == 8
    assert sae.layers[sae.code_index].out_dim == 30


def test_unfold_transposes_and_unties(rng):
    enc = random_encoder(rng, [8, 6, 4, 2])
    sae = unfold(enc, [np.full(8, 0.1), np.full(6, 0.2), np.full(4, 0.3)])
    for k in range(3):
        np.testing.assert_array_equal(sae.layers[5 - k].W, enc[k].W.T)
    np.testing.assert_array_equal(sae.layers[5].b, np.full(8, 0.1))
    sae.layers[5].W += 1.0
    np.testing.assert_array_equal(sae.layers[0].W, enc[0].W)


def test_dims_palindromic(rng):
    sae = unfold(random_encoder(rng, [9, 5, 3]))
    assert sae.dims == sae.dims[::-1]


def test_unfold_rejects_empty_and_broken_chains():
    with pytest.raises(ValueError):
        unfold([])
    with pytest.raises(ShapeError):
        unfold([Layer(np.zeros((3, 4)), np.zeros(3)), Layer(np.zeros((2, 5)), np.zeros(2))])


def test_identity_like_single_layer_round_trip():
    enc = [Layer(np.eye(3) * 4.0, np.zeros(3))]
    sae = unfold(enc)
    x = np.array([[0.2, 0.5, 0.9]])
    recon, _ = forward(sae, x)
    np.testing.assert_allclose(recon, sigmoid(sigmoid(x * 4.0) * 4.0))


def test_forward_zero_net():
    sae = unfold([Layer(np.zeros((3, 5)), np.zeros(3))])
    recon, acts = forward(sae, np.ones((2, 5)))
    assert recon.shape == (2, 5)
    assert all(np.all(a == 0.5) for a in acts[1:])


def test_forward_hand_computed():
    l1 = Layer([[1.0, -1.0]], [0.5])
    l2 = Layer([[2.0], [-3.0]], [0.0, 1.0])
    x = np.array([[1.0, 0.0]])
    h = 1.0 / (1.0 + np.exp(-1.5))
    expected = [1.0 / (1.0 + np.exp(-2.0 * h)), 1.0 / (1.0 + np.exp(3.0 * h - 1.0))]
    recon, acts = forward(StackedAutoencoder([l1, l2]), x)
    np.testing.assert_allclose(acts[1], [[h]], rtol=1e-14)
    np.testing.assert_allclose(recon, [expected], rtol=1e-14)


def test_forward_dimension_mismatch():
    with pytest.raises(ShapeError):
        forward(unfold([Layer(np.zeros((3, 5)), np.zeros(3))]), np.ones((2, 4)))


def test_mse_cases():
    x = np.random.default_rng(0).random((3, 4))
    assert mse_per_example(x, x) == 0.0
    assert mse_per_example([[0.0, 0.5]], [[1.0, 0.5]]) == 1.0
    assert mse_per_example([[0, 0], [0, 0]], [[1, 1], [0, 0]]) == 1.0
    with pytest.raises(ShapeError):
        mse_per_example(np.zeros((2, 3)), np.zeros((3, 2)))


def test_zero_learning_rate_is_evaluation_only(rng):
    sae = unfold(random_encoder(rng, [6, 4, 2]))
    before = sae.copy()
    x = rng.random((20, 6))
    err = backprop_epoch(sae, x, 0.0, 7, epoch_seed=1)
    assert sae.equals(before)
    assert err == loss(before, x)


@pytest.mark.parametrize("seed", range(5))
def test_gradient_check_8_6_4_2(seed):
    r = np.random.default_rng(seed)
    sae = unfold(random_encoder(r, [8, 6, 4, 2]), [r.normal(0, 1, d) for d in (8, 6, 4)])
    assert sae.dims == [8, 6, 4, 2, 4, 6, 8]
    x = r.random((5, 8))
    _, analytic = loss_and_grad(sae, x)
    assert rel_error(analytic, finite_diff_grad(sae, x, 1e-5)) < 1e-4


def test_finite_diff_symmetry_on_symmetric_net():
    # identical hidden units and zero input: mirrored parameters get mirrored gradients
    enc = [Layer(np.full((2, 3), 0.3), np.full(2, 0.1))]
    sae = unfold(enc, [np.array([0.2, -0.1, 0.4])])
    g = finite_diff_grad(sae, np.zeros((2, 3)), 1e-5)
    np.testing.assert_allclose(g[0][0], g[0][1], atol=1e-10)
    np.testing.assert_allclose(g[1][0], g[1][1], atol=1e-10)
    np.testing.assert_allclose(g[2][:, 0], g[2][:, 1], atol=1e-10)


def test_saturated_unit_has_no_gradient():
    W = np.array([[0.0, 0.0], [0.3, -0.2]])
    b = np.array([30.0, 0.0])  # unit 0 is pinned at +30 pre-activation
    sae = unfold([Layer(W, b)])
    x = np.random.default_rng(1).random((4, 2))
    g = finite_diff_grad(sae, x, 1e-5)
    assert np.max(np.abs(g[0][0])) < 1e-10
    assert abs(g[1][0]) < 1e-10


def test_finite_diff_rejects_bad_eps(rng):
    with pytest.raises(ValueError):
        finite_diff_grad(unfold(random_encoder(rng, [3, 2])), np.zeros((1, 3)), 0.0)


def test_ten_epochs_mostly_decrease():
    r = np.random.default_rng(3)
    sae = unfold(random_encoder(r, [10, 6, 3], scale=0.3))
    x = (r.random((200, 10)) < 0.3).astype(float)
    errs = [loss(sae, x)] + [backprop_epoch(sae, x, 0.1, 20, epoch_seed=e) for e in range(10)]
    assert sum(b <= a for a, b in zip(errs, errs[1:])) >= 8


def test_checkpoint_round_trip(tmp_path, rng):
    sae = unfold(random_encoder(rng, [5, 3, 2]))
    save_autoencoder(tmp_path / "m.npz", sae, {"seed": 4, "finetune_epochs_done": 2})
    back, meta = load_autoencoder(tmp_path / "m.npz")
    assert back.equals(sae)
    assert meta["finetune_epochs_done"] == 2
