"""Baseline greedy layer-wise pre-training: one layer at a time, each to completion."""
from syncpretrain.linalg import ShapeError
from syncpretrain.metrics import now_ns
from syncpretrain.units import make_unit


def _check_data(arch, train, valid):
    for name, d in (("train", train), ("valid", valid)):
        if d.ndim != 2 or d.shape[1] != arch[0]:
            raise ShapeError(f"greedy {name} data", d.shape, ("*", arch[0]))


def greedy_units(cfg, train, valid, trace):
    """Train every layer for ``cfg.epochs_per_layer`` epochs, strictly in order.

    Worker ids in the trace are 1-based layer numbers. Layer ``l``'s input is
    the transform of layer ``l-1``'s final parameters (input version 1);
    layer 1 reads the raw data (version 0).
    """
    _check_data(cfg.arch, train, valid)
    units = []
    data_t, data_v = train, valid
    for layer in range(cfg.n_layers):
        worker = layer + 1
        version = 0 if layer == 0 else 1
        unit = make_unit(cfg, layer)
        for epoch in range(cfg.epochs_per_layer):
            t0 = now_ns()
            unit.train_epoch(data_t)
            trace.emit(worker, "EPOCH", t0, epoch=epoch, input_version=version,
                       train_err=unit.error(data_t), valid_err=unit.error(data_v))
        if layer + 1 < cfg.n_layers:
            t0 = now_ns()
            data_t, data_v = unit.transform(data_t), unit.transform(data_v)
            trace.emit(worker, "PUBLISH", t0, epoch=cfg.epochs_per_layer - 1,
                       input_version=version)
        trace.emit(worker, "DONE", now_ns(), epoch=cfg.epochs_per_layer - 1,
                   input_version=version)
        units.append(unit)
    return units


def greedy_pretrain(cfg, train, valid, trace):
    """RBM-based greedy pre-training; returns one RbmParams per layer."""
    if cfg.unit != "rbm":
        cfg = cfg.with_(unit="rbm")
    return [u.params for u in greedy_units(cfg, train, valid, trace)]


def greedy_pretrain_ae(cfg, train, valid, trace):
    """Autoencoder-based greedy pre-training; returns the encoder Layer of each unit."""
    if cfg.unit != "autoencoder":
        cfg = cfg.with_(unit="autoencoder")
    return [u.encoder_layer() for u in greedy_units(cfg, train, valid, trace)]
