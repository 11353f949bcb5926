"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 runtime failure.
"""
import argparse
import json
import logging
import os
import sys
import time

from syncpretrain import metrics
from syncpretrain.autoencoder import load_autoencoder, save_autoencoder, unfold
from syncpretrain.autoencoder import Layer
from syncpretrain.config import ConfigError, dump_config, load_config, resolve
from syncpretrain.dataset import DataError
from syncpretrain.pipeline import (ALGORITHMS, DATA_ENV, build_autoencoder, finetune,
                                   load_splits, pretrain_units, run_experiment)
from syncpretrain.rbm import load_rbms, save_rbms
from syncpretrain.sync import round_table

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4

log = logging.getLogger("syncpretrain")


def _overrides(pairs):
    out = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        out[key.strip()] = json.loads(value) if _is_json(value) else value
    return out


def _is_json(text):
    try:
        json.loads(text)
        return True
    except json.JSONDecodeError:
        return False


def _config(args):
    overrides = _overrides(args.set)
    if args.config:
        return load_config(args.config, preset=args.preset, overrides=overrides)
    return resolve(overrides, args.preset or "paper")


def _run_dir(cfg, args, label):
    run_id = args.run_id or f"{label}-{time.strftime('%Y%m%d-%H%M%S')}"
    path = os.path.join(cfg.mapping()["output.dir"], run_id)
    os.makedirs(os.path.join(path, "checkpoints"), exist_ok=True)
    with open(os.path.join(path, "config.echo"), "w") as f:
        f.write(dump_config(cfg))
    return path


def _schedule_lines(cfg):
    s = cfg.schedule
    lines = [f"arch: {'-'.join(map(str, cfg.arch))}",
             f"mode: {cfg.mode}  termination: {s.termination}  unit: {cfg.unit}"]
    for layer in range(cfg.n_layers):
        budget = s.budget(layer)
        lines.append(f"layer {layer + 1} ({cfg.arch[layer]}->{cfg.arch[layer + 1]}): "
                     f"stipulated={s.stipulated_epochs[layer]} wake={s.wake_epochs[layer]} "
                     f"extra={'unlimited' if budget is None else budget}")
    if cfg.mode == "DETERMINISTIC_ROUNDS":
        lines.append(f"rounds: {len(round_table(cfg))}")
    return lines


def cmd_pretrain(args):
    cfg = _config(args)
    if args.dry_run:
        print("\n".join(_schedule_lines(cfg)))
        return EXIT_OK
    splits = load_splits(cfg)
    out = _run_dir(cfg, args, args.algo)
    trace = metrics.TraceSink()
    units = pretrain_units(args.algo, cfg, splits.train.images, splits.valid.images, trace)
    ckpt = os.path.join(out, "checkpoints", "pretrained.npz")
    extra = {"arch": list(cfg.arch), "algorithm": args.algo, "config_hash": cfg.config_hash()}
    if cfg.unit == "rbm":
        save_rbms(ckpt, [u.params for u in units], seed=cfg.seed,
                  epochs=[u.epochs_done for u in units], extra=extra)
    else:
        save_autoencoder(ckpt, build_autoencoder(units),
                         {"seed": cfg.seed, "finetune_epochs_done": 0, **extra})
    events = trace.events()
    metrics.export_trace(events, os.path.join(out, "trace.csv"))
    metrics.export_error_curves(events, os.path.join(out, "curves.csv"))
    summary = {"algorithm": args.algo, "pretrain_wall_s": metrics.pretrain_wall_ns(events) / 1e9,
               "epochs": [u.epochs_done for u in units], "checkpoint": ckpt,
               "idle_s": {w: t.idle_ns / 1e9
                          for w, t in metrics.idle_time_report(events).items()}}
    with open(os.path.join(out, "summary"), "w") as f:
        json.dump(summary, f, indent=2)
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def _load_model(path):
    """Return (autoencoder, epochs already fine-tuned)."""
    try:
        ck = load_rbms(path)
    except ValueError:
        sae, meta = load_autoencoder(path)
        return sae, meta.get("finetune_epochs_done", 0)
    layers = [Layer(r.W.copy(), r.c.copy()) for r in ck.layers]
    return unfold(layers, [r.b.copy() for r in ck.layers]), 0


def cmd_finetune(args):
    cfg = _config(args)
    if not os.path.exists(args.checkpoint):
        raise DataError(f"checkpoint not found: {args.checkpoint}")
    sae, done = _load_model(args.checkpoint)
    splits = load_splits(cfg)
    out = _run_dir(cfg, args, "finetune")
    trace = metrics.TraceSink()
    epochs = cfg.finetune_epochs if args.epochs is None else args.epochs
    history = finetune(sae, cfg, splits.train.images, splits.valid.images, trace,
                       start_epoch=done, epochs=epochs)
    model = os.path.join(out, "checkpoints", "model.npz")
    save_autoencoder(model, sae, {"seed": cfg.seed, "finetune_epochs_done": done + epochs,
                                  "config_hash": cfg.config_hash()})
    metrics.export_error_curves(trace.events(), os.path.join(out, "curves.csv"))
    with open(os.path.join(out, "finetune_log.csv"), "w") as f:
        f.write("epoch,train_err,valid_err\n")
        for i, (tr, va) in enumerate(history):
            f.write(f"{done + i},{tr!r},{va!r}\n")
    print(json.dumps({"checkpoint": model, "epochs_done": done + epochs,
                      "valid_err": metrics.evaluate(sae, splits.valid.images)}, indent=2))
    return EXIT_OK


def cmd_eval(args):
    cfg = _config(args)
    if not os.path.exists(args.checkpoint):
        raise DataError(f"checkpoint not found: {args.checkpoint}")
    sae, _ = _load_model(args.checkpoint)
    splits = load_splits(cfg)
    result = {name: metrics.evaluate(sae, getattr(splits, name).images)
              for name in ("train", "valid", "test")}
    if args.dump:
        metrics.dump_reconstructions(sae, splits.test.images, args.dump)
    print(json.dumps(result, indent=2))
    return EXIT_OK


def format_table(reports, gain):
    head = (f"{'algorithm':<10} {'train_err':>9} {'test_err':>9} "
            f"{'pretrain_s':>11} {'finetune_s':>11}")
    rows = [head, "-" * len(head)]
    for r in reports:
        rows.append(f"{r.algorithm:<10} {r.train_err:>9.3f} {r.test_err:>9.3f} "
                    f"{r.pretrain_wall_s:>11.2f} {r.finetune_wall_s:>11.2f}")
    rows.append(f"speedup (pre-training only): {gain.pretrain:.2%}")
    rows.append(f"speedup (total time):        {gain.total:.2%}")
    return "\n".join(rows)


def cmd_compare(args):
    cfg = _config(args)
    splits = load_splits(cfg)
    out = _run_dir(cfg, args, "compare")
    reports = []
    for algo in ALGORITHMS:
        res = run_experiment(algo, cfg, splits)
        events = res.trace.events()
        metrics.export_trace(events, os.path.join(out, f"trace-{algo}.csv"))
        metrics.export_error_curves(events, os.path.join(out, f"curves-{algo}.csv"))
        with open(os.path.join(out, f"summary-{algo}.json"), "w") as f:
            f.write(res.report.to_json())
        save_autoencoder(os.path.join(out, "checkpoints", f"model-{algo}.npz"), res.model,
                         {"seed": cfg.seed, "finetune_epochs_done": cfg.finetune_epochs,
                          "algorithm": algo, "config_hash": cfg.config_hash()})
        reports.append(res.report)
    gain = metrics.speedup(*reports)
    table = format_table(reports, gain)
    with open(os.path.join(out, "summary"), "w") as f:
        f.write(table + "\n")
    print(table)
    return EXIT_OK


def cmd_trace_export(args):
    events = metrics.parse_trace(args.trace)
    metrics.export_error_curves(events, args.curves)
    report = metrics.idle_time_report(events)
    for w, t in report.items():
        print(f"worker {w}: busy {t.busy_ns / 1e9:.3f}s idle {t.idle_ns / 1e9:.3f}s "
              f"waiting {t.waiting_ns / 1e9:.3f}s")
    return EXIT_OK


def cmd_prepare_desk_data(args):
    from syncpretrain.desk_data import write_desk_idx
    target = args.out or os.environ.get(DATA_ENV, ".")
    try:
        paths = write_desk_idx(target)
    except FileNotFoundError as exc:
        raise DataError(str(exc)) from exc
    print("\n".join(paths))
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="syncpretrain",
                                description="Greedy vs synchronized layer-wise pre-training.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="dotted-key config file")
        sp.add_argument("--preset", choices=("paper", "desk"))
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config key (repeatable)")
        sp.add_argument("--run-id")

    sp = sub.add_parser("pretrain", help="run layer-wise pre-training")
    sp.add_argument("--algo", choices=ALGORITHMS, required=True)
    sp.add_argument("--dry-run", action="store_true",
                    help="validate the config and print the schedule only")
    common(sp)
    sp.set_defaults(func=cmd_pretrain)

    sp = sub.add_parser("finetune", help="fine-tune a pre-trained checkpoint by backprop")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--epochs", type=int)
    common(sp)
    sp.set_defaults(func=cmd_finetune)

    sp = sub.add_parser("eval", help="report reconstruction error of a checkpoint")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--dump", help="write 25 test digits and reconstructions as CSV rows")
    common(sp)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("compare", help="greedy and sync end-to-end, side by side")
    common(sp)
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("trace-export", help="derive error curves and idle times from a trace")
    sp.add_argument("--trace", required=True)
    sp.add_argument("--curves", required=True)
    sp.set_defaults(func=cmd_trace_export)

    sp = sub.add_parser("prepare-desk-data", help="write the 5k-digit desk pool as IDX files")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_prepare_desk_data)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - mapped to the runtime exit code
        log.debug("runtime failure", exc_info=True)
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
