"""Stacked sigmoid autoencoder: unfolding, forward pass and MSE backpropagation."""
import json
from dataclasses import dataclass

import numpy as np

from syncpretrain.dataset import minibatches
from syncpretrain.linalg import ShapeError, as_matrix, check_cols, sigmoid


@dataclass
class Layer:
    W: np.ndarray  # (out_dim, in_dim)
    b: np.ndarray  # (out_dim,)

    def __post_init__(self):
        self.W = np.array(self.W, dtype=np.float64, ndmin=2)
        self.b = np.array(self.b, dtype=np.float64).reshape(-1)
        if self.b.shape != (self.W.shape[0],):
            raise ShapeError("Layer", self.W.shape, self.b.shape)

    @property
    def in_dim(self):
        return self.W.shape[1]

    @property
    def out_dim(self):
        return self.W.shape[0]

    def copy(self):
        return Layer(self.W.copy(), self.b.copy())

    def __call__(self, x):
        return sigmoid(x @ self.W.T + self.b)


class StackedAutoencoder:
    """Encoder layers followed by mirrored decoder layers.

    ``code_index`` is the position (in ``layers``) of the layer that emits the code.
    """

    def __init__(self, layers):
        if not layers:
            raise ValueError("StackedAutoencoder needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ShapeError("StackedAutoencoder", prev.W.shape, nxt.W.shape)
        self.layers = list(layers)

    @property
    def code_index(self):
        return len(self.layers) // 2 - 1

    @property
    def dims(self):
        return [self.layers[0].in_dim] + [l.out_dim for l in self.layers]

    def copy(self):
        return StackedAutoencoder([l.copy() for l in self.layers])

    def params(self):
        """Flat list of parameter arrays in a fixed order (W0, b0, W1, b1, ...)."""
        out = []
        for layer in self.layers:
            out.extend((layer.W, layer.b))
        return out

    def n_params(self):
        return sum(p.size for p in self.params())

    def equals(self, other):
        return len(self.layers) == len(other.layers) and all(
            np.array_equal(a, b) for a, b in zip(self.params(), other.params()))


def unfold(encoder_layers, decoder_biases=None):
    """Mirror encoder layers into a full autoencoder.

    Decoder weights start as untied copies of the transposed encoder weights.
    ``decoder_biases[k]`` (e.g. the visible bias of the k-th RBM) initialises the
    decoder layer that maps back to encoder layer k's input; zeros otherwise.
    """
    if not encoder_layers:
        raise ValueError("unfold: empty encoder")
    StackedAutoencoder(encoder_layers)  # validates the chain
    enc = [l.copy() for l in encoder_layers]
    dec = []
    for k in reversed(range(len(enc))):
        bias = np.zeros(enc[k].in_dim) if decoder_biases is None else decoder_biases[k]
        dec.append(Layer(enc[k].W.T.copy(), np.array(bias, dtype=np.float64)))
    return StackedAutoencoder(enc + dec)


def forward(sae, x):
    """Return (reconstruction, activations) with ``activations[0] == x``."""
    x = as_matrix(x)
    check_cols("forward", x, sae.layers[0].in_dim)
    acts = [x]
    for layer in sae.layers:
        acts.append(layer(acts[-1]))
    return acts[-1], acts


def mse_per_example(x, xhat):
    """Squared error summed over features, averaged over examples."""
    x = as_matrix(x)
    xhat = as_matrix(xhat)
    if x.shape != xhat.shape:
        raise ShapeError("mse_per_example", x.shape, xhat.shape)
    return float(np.sum((x - xhat) ** 2) / x.shape[0])


def loss(sae, x):
    recon, _ = forward(sae, x)
    return mse_per_example(x, recon)


def loss_and_grad(sae, x):
    """Loss and its gradient, one array per entry of ``sae.params()``."""
    recon, acts = forward(sae, x)
    n = acts[0].shape[0]
    err = mse_per_example(acts[0], recon)
    delta = 2.0 * (recon - acts[0]) / n * recon * (1.0 - recon)
    grads = [None] * (2 * len(sae.layers))
    for i in reversed(range(len(sae.layers))):
        layer = sae.layers[i]
        grads[2 * i] = delta.T @ acts[i]
        grads[2 * i + 1] = delta.sum(axis=0)
        if i:
            a = acts[i]
            delta = (delta @ layer.W) * a * (1.0 - a)
    return err, grads


def backprop_epoch(sae, data, learning_rate, batch_size, epoch_seed):
    """One pass of minibatch gradient descent; returns the post-epoch error on ``data``."""
    for batch in minibatches(data, batch_size, epoch_seed):
        _, grads = loss_and_grad(sae, batch)
        for p, g in zip(sae.params(), grads):
            p -= learning_rate * g
    return loss(sae, data)


def finite_diff_grad(sae, x, eps=1e-5):
    """Central-difference gradient of ``loss`` for every parameter."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    grads = []
    for p in sae.params():
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + eps
            up = loss(sae, x)
            p[idx] = orig - eps
            down = loss(sae, x)
            p[idx] = orig
            g[idx] = (up - down) / (2.0 * eps)
        grads.append(g)
    return grads


def save_autoencoder(path, sae, meta=None):
    arrays = {}
    for i, layer in enumerate(sae.layers):
        arrays[f"layer{i}.W"] = layer.W
        arrays[f"layer{i}.b"] = layer.b
    info = {"kind": "stacked-autoencoder", "n_layers": len(sae.layers), **(meta or {})}
    arrays["meta"] = np.frombuffer(json.dumps(info).encode(), dtype=np.uint8)
    with open(path, "wb") as f:
        np.savez(f, **arrays)


def load_autoencoder(path):
    """Return (sae, meta)."""
    with np.load(path) as z:
        meta = json.loads(z["meta"].tobytes().decode())
        if meta.get("kind") != "stacked-autoencoder":
            raise ValueError(f"{path}: not an autoencoder checkpoint")
        layers = [Layer(z[f"layer{i}.W"], z[f"layer{i}.b"]) for i in range(meta["n_layers"])]
    return StackedAutoencoder(layers), meta
