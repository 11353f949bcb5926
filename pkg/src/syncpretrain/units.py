"""Per-layer trainable units shared by the greedy and synchronized drivers.

A unit owns one layer's parameters and its private RNG stream. Both drivers
see the same small surface: ``train_epoch``, ``transform``, ``error``,
``snapshot``/``restore`` and ``encoder_layer``.
"""
import numpy as np

from syncpretrain import rbm as rbm_ops
from syncpretrain.autoencoder import Layer, StackedAutoencoder, loss, loss_and_grad
from syncpretrain.dataset import minibatches
from syncpretrain.linalg import sigmoid


def layer_rng(seed, layer):
    """Independent generator for a 0-based layer index."""
    return np.random.default_rng(np.random.SeedSequence([seed, layer]))


class RbmUnit:
    kind = "rbm"

    def __init__(self, n_in, n_out, rng, hp, batch_size):
        self.rng = rng
        self.hp = hp
        self.batch_size = batch_size
        self.params = rbm_ops.RbmParams.init(n_in, n_out, rng)
        self.epochs_done = 0

    def train_epoch(self, data, should_stop=None):
        done = rbm_ops.train_epoch(self.params, data, self.hp, self.epochs_done, self.rng,
                                   self.batch_size, should_stop)
        if done:
            self.epochs_done += 1
        return done

    def transform(self, data):
        return rbm_ops.transform(self.params, data)

    def error(self, data):
        return rbm_ops.reconstruction_error(self.params, data)

    def snapshot(self):
        return self.params.copy(), self.rng.bit_generator.state, self.epochs_done

    def restore(self, snap):
        params, rng_state, epochs = snap
        self.params = params.copy()
        self.rng.bit_generator.state = rng_state
        self.epochs_done = epochs

    def encoder_layer(self):
        return Layer(self.params.W.copy(), self.params.c.copy())

    def decoder_bias(self):
        return self.params.b.copy()


class AutoencoderUnit:
    """One-hidden-layer autoencoder trained by plain minibatch backprop."""

    kind = "autoencoder"

    def __init__(self, n_in, n_out, rng, learning_rate, batch_size, std=0.01):
        self.rng = rng
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        W = rng.normal(0.0, std, size=(n_out, n_in))
        self.net = StackedAutoencoder([Layer(W, np.zeros(n_out)),
                                       Layer(W.T.copy(), np.zeros(n_in))])
        self.epochs_done = 0

    def train_epoch(self, data, should_stop=None):
        for batch in minibatches(data, self.batch_size, int(self.rng.integers(2**63))):
            if should_stop is not None and should_stop():
                return False
            _, grads = loss_and_grad(self.net, batch)
            for p, g in zip(self.net.params(), grads):
                p -= self.learning_rate * g
        self.epochs_done += 1
        return True

    def transform(self, data):
        enc = self.net.layers[0]
        return sigmoid(data @ enc.W.T + enc.b)

    def error(self, data):
        return loss(self.net, data)

    def snapshot(self):
        return self.net.copy(), self.rng.bit_generator.state, self.epochs_done

    def restore(self, snap):
        net, rng_state, epochs = snap
        self.net = net.copy()
        self.rng.bit_generator.state = rng_state
        self.epochs_done = epochs

    def encoder_layer(self):
        return self.net.layers[0].copy()

    def decoder_bias(self):
        return self.net.layers[1].b.copy()


def make_unit(cfg, layer):
    """Build the unit for 0-based ``layer`` with its own seeded RNG."""
    n_in, n_out = cfg.arch[layer], cfg.arch[layer + 1]
    rng = layer_rng(cfg.seed, layer)
    if cfg.unit == "rbm":
        return RbmUnit(n_in, n_out, rng, cfg.cd, cfg.batch_size)
    return AutoencoderUnit(n_in, n_out, rng, cfg.ae_learning_rate, cfg.batch_size)
