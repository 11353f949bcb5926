"""Bernoulli-Bernoulli restricted Boltzmann machine trained by contrastive divergence.

Visible intensities in [0, 1] are used directly as Bernoulli probabilities.
The module also carries brute-force enumeration routines for tiny models;
those serve as test oracles and refuse anything with more than
``MAX_ENUM_UNITS`` units in total.
"""
import itertools
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from syncpretrain.dataset import minibatches
from syncpretrain.linalg import ShapeError, as_matrix, check_cols, sigmoid

MAX_ENUM_UNITS = 20
PAPER_MOMENTUM = ((0, 0.5), (5, 0.9))


class EnumerationTooLarge(ValueError):
    pass


@dataclass
class RbmParams:
    W: np.ndarray  # (n_hidden, n_visible)
    b: np.ndarray  # visible bias
    c: np.ndarray  # hidden bias
    vel_W: np.ndarray = None
    vel_b: np.ndarray = None
    vel_c: np.ndarray = None

    def __post_init__(self):
        self.W = np.array(self.W, dtype=np.float64, ndmin=2)
        self.b = np.array(self.b, dtype=np.float64).reshape(-1)
        self.c = np.array(self.c, dtype=np.float64).reshape(-1)
        n_h, n_v = self.W.shape
        if self.b.shape != (n_v,) or self.c.shape != (n_h,):
            raise ShapeError("RbmParams", self.W.shape, self.b.shape, self.c.shape)
        if self.vel_W is None:
            self.vel_W = np.zeros_like(self.W)
        if self.vel_b is None:
            self.vel_b = np.zeros_like(self.b)
        if self.vel_c is None:
            self.vel_c = np.zeros_like(self.c)

    @property
    def n_visible(self):
        return self.W.shape[1]

    @property
    def n_hidden(self):
        return self.W.shape[0]

    @classmethod
    def zeros(cls, n_visible, n_hidden):
        return cls(np.zeros((n_hidden, n_visible)), np.zeros(n_visible), np.zeros(n_hidden))

    @classmethod
    def init(cls, n_visible, n_hidden, rng, std=0.01):
        """Small Gaussian weights, zero biases."""
        W = rng.normal(0.0, std, size=(n_hidden, n_visible))
        return cls(W, np.zeros(n_visible), np.zeros(n_hidden))

    def copy(self):
        return RbmParams(self.W.copy(), self.b.copy(), self.c.copy(),
                         self.vel_W.copy(), self.vel_b.copy(), self.vel_c.copy())

    def flipped(self):
        """Same model with the roles of visible and hidden layers swapped."""
        return RbmParams(self.W.T.copy(), self.c.copy(), self.b.copy())

    def arrays(self):
        return {"W": self.W, "b": self.b, "c": self.c,
                "vel_W": self.vel_W, "vel_b": self.vel_b, "vel_c": self.vel_c}

    def equals(self, other):
        mine, theirs = self.arrays(), other.arrays()
        return all(np.array_equal(mine[k], theirs[k]) for k in mine)


@dataclass(frozen=True)
class CdHyperparams:
    learning_rate: float = 0.1
    momentum_schedule: tuple = PAPER_MOMENTUM
    cd_steps: int = 1
    sample_hidden: bool = True

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.cd_steps < 1:
            raise ValueError("cd_steps must be >= 1")
        for _, m in self.momentum_schedule:
            if not 0.0 <= m < 1.0:
                raise ValueError(f"momentum {m} outside [0, 1)")

    def momentum(self, epoch):
        """Momentum for a 0-based epoch index: the last entry whose threshold is <= epoch."""
        value = 0.0
        for threshold, m in sorted(self.momentum_schedule):
            if epoch >= threshold:
                value = m
        return value


def energy(rbm, v, h):
    v = np.asarray(v, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if v.shape != (rbm.n_visible,) or h.shape != (rbm.n_hidden,):
        raise ShapeError("energy", v.shape, h.shape, rbm.W.shape)
    return float(-(h @ rbm.W @ v) - rbm.b @ v - rbm.c @ h)


def hidden_probs(rbm, v_batch):
    v = as_matrix(v_batch)
    check_cols("hidden_probs", v, rbm.n_visible)
    return sigmoid(v @ rbm.W.T + rbm.c)


def visible_probs(rbm, h_batch):
    h = as_matrix(h_batch)
    check_cols("visible_probs", h, rbm.n_hidden)
    return sigmoid(h @ rbm.W + rbm.b)


def transform(rbm, data):
    """Map data to the hidden layer's activation probabilities (next layer's input)."""
    return hidden_probs(rbm, data)


def cd_gradient(rbm, batch, hp, rng):
    """CD-k estimate of the log-likelihood gradient, averaged over the batch rows."""
    v0 = as_matrix(batch)
    check_cols("cd_gradient", v0, rbm.n_visible)
    if v0.shape[0] == 0:
        raise ValueError("cd_gradient: empty batch")
    ph0 = hidden_probs(rbm, v0)
    ph = ph0
    for _ in range(hp.cd_steps):
        h = (rng.random(ph.shape) < ph).astype(np.float64) if hp.sample_hidden else ph
        vk = visible_probs(rbm, h)
        ph = hidden_probs(rbm, vk)
    n = v0.shape[0]
    gW = (ph0.T @ v0 - ph.T @ vk) / n
    gb = (v0.sum(axis=0) - vk.sum(axis=0)) / n
    gc = (ph0.sum(axis=0) - ph.sum(axis=0)) / n
    return gW, gb, gc


def cd_update(rbm, batch, hp, epoch, rng):
    """One momentum CD step. Mutates and returns ``rbm``."""
    gW, gb, gc = cd_gradient(rbm, batch, hp, rng)
    mom = hp.momentum(epoch)
    lr = hp.learning_rate
    rbm.vel_W *= mom
    rbm.vel_W += lr * gW
    rbm.vel_b *= mom
    rbm.vel_b += lr * gb
    rbm.vel_c *= mom
    rbm.vel_c += lr * gc
    rbm.W += rbm.vel_W
    rbm.b += rbm.vel_b
    rbm.c += rbm.vel_c
    return rbm


def train_epoch(rbm, data, hp, epoch, rng, batch_size, should_stop=None):
    """Run CD over one shuffled pass of ``data``.

    Returns False if ``should_stop`` fired before the pass finished.
    """
    epoch_seed = int(rng.integers(2**63))
    for batch in minibatches(data, batch_size, epoch_seed):
        if should_stop is not None and should_stop():
            return False
        cd_update(rbm, batch, hp, epoch, rng)
    return True


def reconstruction_error(rbm, data):
    """Mean over rows of the squared error of the deterministic v -> h -> v round trip."""
    v = as_matrix(data)
    recon = visible_probs(rbm, hidden_probs(rbm, v))
    return float(np.mean(np.sum((v - recon) ** 2, axis=1)))


# --- exact enumeration oracles -------------------------------------------

def _check_enumerable(rbm):
    if rbm.n_visible + rbm.n_hidden > MAX_ENUM_UNITS:
        raise EnumerationTooLarge(
            f"{rbm.n_visible}+{rbm.n_hidden} units exceeds enumeration limit {MAX_ENUM_UNITS}")


def binary_states(n):
    """All 2**n binary vectors, one per row."""
    return np.array(list(itertools.product((0.0, 1.0), repeat=n))).reshape(2**n, n)


def joint_table(rbm):
    """Enumerate every (v, h) state.

    Returns (V, H, log_p) with ``log_p[i, k] = log p(V[i], H[k])`` under the Gibbs distribution.
    """
    _check_enumerable(rbm)
    V = binary_states(rbm.n_visible)
    H = binary_states(rbm.n_hidden)
    neg_e = np.empty((V.shape[0], H.shape[0]))
    for i, v in enumerate(V):
        for k, h in enumerate(H):
            neg_e[i, k] = -energy(rbm, v, h)
    return V, H, neg_e - logsumexp(neg_e)


def log_partition(rbm):
    _check_enumerable(rbm)
    V = binary_states(rbm.n_visible)
    H = binary_states(rbm.n_hidden)
    terms = [-energy(rbm, v, h) for v in V for h in H]
    return float(logsumexp(terms))


def _posterior_hidden_mean(rbm, v, H):
    neg_e = np.array([-energy(rbm, v, h) for h in H])
    w = np.exp(neg_e - logsumexp(neg_e))
    return w @ H


def exact_loglik(rbm, data):
    """Mean log p(v) over the rows of binary ``data``, by enumeration."""
    _check_enumerable(rbm)
    data = as_matrix(data)
    H = binary_states(rbm.n_hidden)
    log_z = log_partition(rbm)
    total = 0.0
    for v in data:
        total += logsumexp([-energy(rbm, v, h) for h in H]) - log_z
    return total / data.shape[0]


def exact_loglik_grad(rbm, data):
    """Exact gradient of ``exact_loglik`` w.r.t. (W, b, c)."""
    data = as_matrix(data)
    check_cols("exact_loglik_grad", data, rbm.n_visible)
    V, H, log_p = joint_table(rbm)
    p = np.exp(log_p)
    # model expectations of h v^T, v and h
    model_W = np.einsum("ik,kh,iv->hv", p, H, V)
    model_b = p.sum(axis=1) @ V
    model_c = p.sum(axis=0) @ H
    data_W = np.zeros_like(rbm.W)
    data_c = np.zeros_like(rbm.c)
    for v in data:
        eh = _posterior_hidden_mean(rbm, v, H)
        data_W += np.outer(eh, v)
        data_c += eh
    n = data.shape[0]
    return (data_W / n - model_W, data.mean(axis=0) - model_b, data_c / n - model_c)


# --- checkpoints -----------------------------------------------------------

@dataclass
class RbmCheckpoint:
    layers: list
    seed: int = 0
    epochs: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)


def save_rbms(path, rbms, seed=0, epochs=None, extra=None):
    """Write a stack of RBMs to an uncompressed ``.npz`` (bit-exact float64)."""
    arrays = {}
    for i, rbm in enumerate(rbms):
        for name, arr in rbm.arrays().items():
            arrays[f"layer{i}.{name}"] = arr
    meta = {"kind": "rbm-stack", "n_layers": len(rbms), "seed": int(seed),
            "epochs": list(epochs or []), "extra": extra or {}}
    arrays["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    with open(path, "wb") as f:
        np.savez(f, **arrays)


def load_rbms(path):
    with np.load(path) as z:
        meta = json.loads(z["meta"].tobytes().decode())
        if meta.get("kind") != "rbm-stack":
            raise ValueError(f"{path}: not an RBM stack checkpoint")
        layers = []
        for i in range(meta["n_layers"]):
            layers.append(RbmParams(**{k: z[f"layer{i}.{k}"] for k in
                                       ("W", "b", "c", "vel_W", "vel_b", "vel_c")}))
    return RbmCheckpoint(layers, meta["seed"], meta["epochs"], meta["extra"])
