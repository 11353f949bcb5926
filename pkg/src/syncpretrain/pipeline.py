"""End-to-end runs: data splits, pre-training, unfolding, fine-tuning and reports."""
import os
import time
from dataclasses import dataclass, field

import numpy as np

from syncpretrain.autoencoder import backprop_epoch, unfold
from syncpretrain.dataset import DataError, load_idx, stratified_indices
from syncpretrain.greedy import greedy_units
from syncpretrain.metrics import (FINETUNE_WORKER, RunReport, TraceSink, evaluate, now_ns,
                                  pretrain_wall_ns)
from syncpretrain.sync import sync_units

DATA_ENV = "SYNCPRETRAIN_DATA_DIR"
ALGORITHMS = ("greedy", "sync")
_FINETUNE_STREAM = 0xF1


@dataclass
class Splits:
    train: object
    valid: object
    test: object


def data_path(path):
    """Resolve a relative data path against ``$SYNCPRETRAIN_DATA_DIR`` when set."""
    if os.path.isabs(path):
        return path
    return os.path.join(os.environ.get(DATA_ENV, "."), path)


def _load(images, labels):
    ip, lp = data_path(images), data_path(labels)
    for p in (ip, lp):
        if not os.path.exists(p):
            raise DataError(f"data file not found: {p}")
    return load_idx(ip, lp)


def load_splits(cfg):
    """Build train/valid/test sets as the config prescribes.

    With separate test files the test set is that pair; otherwise
    ``data.per_class_test`` examples of every digit are carved out of the pool
    first. Validation then takes ``data.per_class_valid`` per digit and
    ``data.train_limit`` (if non-zero) caps the remaining training rows.
    """
    m = cfg.mapping()
    pool = _load(m["data.images"], m["data.labels"])
    seed = m["data.split_seed"]
    if m["data.test_images"] and m["data.test_labels"]:
        test = _load(m["data.test_images"], m["data.test_labels"])
    else:
        rest, picked = stratified_indices(pool.labels, m["data.per_class_test"], seed + 1)
        test = pool.take(picked)
        pool = pool.take(rest)
    rest, picked = stratified_indices(pool.labels, m["data.per_class_valid"], seed)
    valid = pool.take(picked)
    train = pool.take(rest)
    limit = m["data.train_limit"]
    if limit and len(train) > limit:
        keep = np.sort(np.random.default_rng(seed + 2).choice(len(train), limit, replace=False))
        train = train.take(keep)
    return Splits(train, valid, test)


def pretrain_units(algorithm, cfg, train, valid, trace):
    if algorithm == "greedy":
        return greedy_units(cfg, train, valid, trace)
    if algorithm == "sync":
        return sync_units(cfg, train, valid, trace)
    raise ValueError(f"unknown algorithm {algorithm!r}; choose from {ALGORITHMS}")


def build_autoencoder(units):
    return unfold([u.encoder_layer() for u in units], [u.decoder_bias() for u in units])


def finetune_epoch_seed(seed, epoch):
    return int(np.random.SeedSequence([seed, _FINETUNE_STREAM, epoch]).generate_state(1)[0])


def finetune(sae, cfg, train, valid, trace, start_epoch=0, epochs=None):
    """Fine-tune ``sae`` in place; returns [(train_err, valid_err)] per epoch.

    Epoch seeds depend only on (seed, absolute epoch index), so a run split
    across several calls matches a single uninterrupted one.
    """
    epochs = cfg.finetune_epochs if epochs is None else epochs
    history = []
    for epoch in range(start_epoch, start_epoch + epochs):
        t0 = now_ns()
        tr = backprop_epoch(sae, train, cfg.finetune_learning_rate, cfg.batch_size,
                            finetune_epoch_seed(cfg.seed, epoch))
        va = evaluate(sae, valid)
        trace.emit(FINETUNE_WORKER, "EPOCH", t0, epoch=epoch, train_err=tr, valid_err=va)
        history.append((tr, va))
    return history


@dataclass
class RunResult:
    algorithm: str
    units: list
    pretrained: object  # unfolded autoencoder before fine-tuning
    model: object  # after fine-tuning
    trace: TraceSink
    report: RunReport
    history: list = field(default_factory=list)


def run_experiment(algorithm, cfg, splits, trace=None):
    """Pre-train with ``algorithm``, unfold, fine-tune and evaluate."""
    trace = trace or TraceSink()
    units = pretrain_units(algorithm, cfg, splits.train.images, splits.valid.images, trace)
    pretrain_s = pretrain_wall_ns(trace.emitted()) / 1e9
    pretrained = build_autoencoder(units)
    pre_valid = evaluate(pretrained, splits.valid.images)
    model = pretrained.copy()
    t0 = time.monotonic()
    history = finetune(model, cfg, splits.train.images, splits.valid.images, trace)
    finetune_s = time.monotonic() - t0
    report = RunReport(
        algorithm=algorithm,
        pretrain_wall_s=pretrain_s,
        finetune_wall_s=finetune_s,
        train_err=evaluate(model, splits.train.images),
        test_err=evaluate(model, splits.test.images),
        config_hash=cfg.config_hash(),
        seed=cfg.seed,
        valid_err=evaluate(model, splits.valid.images),
        pretrain_valid_err=pre_valid,
    )
    return RunResult(algorithm, units, pretrained, model, trace, report, history)
