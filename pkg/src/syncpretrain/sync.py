"""Synchronized layer-wise pre-training.

Every layer gets its own worker. Worker ``l`` starts once worker ``l-1`` has
finished one epoch, and after each of its own epochs it republishes its
transformed train/valid data to worker ``l+1``. Once a worker has done its
stipulated epochs it sleeps; each newer upstream publication wakes it for
``wake_epochs`` more epochs, until its post-stipulation budget runs out.

Two drivers share these rules:

* ``sync_pretrain`` with ``mode == "FREE_RUNNING"`` runs one thread per worker.
* ``run_deterministic_rounds`` runs lockstep rounds on the calling thread, so
  the schedule is a pure function of the config.
"""
import logging
import os
import threading
import time
import zlib
from dataclasses import dataclass

import numpy as np

from syncpretrain.greedy import _check_data
from syncpretrain.metrics import now_ns
from syncpretrain.units import make_unit

log = logging.getLogger(__name__)


class SyncError(RuntimeError):
    pass


class WorkerFailed(SyncError):
    def __init__(self, worker, cause):
        self.worker = worker
        self.cause = cause
        super().__init__(f"worker {worker} failed: {type(cause).__name__}: {cause}")


class DeadlockError(SyncError):
    def __init__(self, timeout_s, states):
        self.states = states
        super().__init__(f"no progress for {timeout_s:.1f}s; worker states: {states}")


def payload_checksum(payload):
    crc = 0
    for arr in payload:
        a = np.ascontiguousarray(arr)
        crc = zlib.crc32(str(a.shape).encode(), crc)
        crc = zlib.crc32(a.data, crc)
    return crc


@dataclass(frozen=True)
class Snapshot:
    payload: tuple
    version: int
    checksum: int = None

    def verify(self):
        return self.checksum is None or payload_checksum(self.payload) == self.checksum


class VersionedBuffer:
    """Single-slot, latest-value handoff of a (payload, version) pair.

    A publication replaces any unread older one. Readers always get a payload
    together with the version it was published under. Published arrays are
    frozen (made read-only) so the handoff needs no copy.
    """

    def __init__(self, payload=None, version=0, checksum=False):
        self._cond = threading.Condition()
        self._checksum = checksum
        self._closed = False
        self._snap = Snapshot(self._freeze(payload), version,
                              self._sum(payload) if payload is not None else None)

    def _sum(self, payload):
        return payload_checksum(payload) if self._checksum else None

    @staticmethod
    def _freeze(payload):
        if payload is None:
            return None
        for arr in payload:
            if isinstance(arr, np.ndarray):
                arr.flags.writeable = False
        return tuple(payload)

    def publish(self, payload):
        payload = self._freeze(payload)
        checksum = self._sum(payload)
        with self._cond:
            if self._closed:
                raise SyncError("publish on a closed buffer")
            self._snap = Snapshot(payload, self._snap.version + 1, checksum)
            self._cond.notify_all()
            return self._snap.version

    def snapshot(self):
        with self._cond:
            return self._snap

    @property
    def version(self):
        return self.snapshot().version

    def close(self):
        """Mark that no further publications will come."""
        with self._cond:
            self._closed = True
            self._cond.notify_all()

    @property
    def closed(self):
        with self._cond:
            return self._closed

    def wake_all(self):
        with self._cond:
            self._cond.notify_all()

    def wait_newer(self, than, cancelled=lambda: False, poll_s=0.05):
        """Block until a version newer than ``than`` exists.

        Returns None once the buffer is closed with nothing newer, or when
        ``cancelled()`` turns true.
        """
        with self._cond:
            while True:
                if cancelled():
                    return None
                if self._snap.version > than:
                    return self._snap
                if self._closed:
                    return None
                self._cond.wait(poll_s)


class _Run:
    """State shared by the workers of one synchronized run."""

    def __init__(self, cfg, train, valid, trace):
        _check_data(cfg.arch, train, valid)
        self.cfg = cfg
        self.schedule = cfg.schedule
        self.trace = trace
        k = cfg.n_layers
        self.units = [make_unit(cfg, layer) for layer in range(k)]
        self.buffers = [VersionedBuffer((train, valid), version=0)]
        self.buffers[0].close()  # layer 1's data never changes
        self.buffers += [VersionedBuffer() for _ in range(k)]
        self.stop = threading.Event()
        self.abort = threading.Event()
        self.publications = [0] * k
        self.consumed = [[] for _ in range(k)]
        self.beats = [0] * k
        self.states = ["init"] * k

    def halted(self):
        return self.stop.is_set() or self.abort.is_set()

    def first_layer_policy(self):
        return self.schedule.termination == "FIRST_LAYER_DONE"

    def train_one(self, layer, snap, should_stop=None):
        """Train one epoch on ``snap``.

        Returns ``(payload, t_publish_start, epoch, version)`` for the following
        publication, or None if ``should_stop`` interrupted the epoch (the
        unit is then rolled back to its state before the epoch).
        """
        unit = self.units[layer]
        worker = layer + 1
        data_t, data_v = snap.payload
        t0 = now_ns()
        backup = unit.snapshot() if should_stop is not None else None
        if not unit.train_epoch(data_t, should_stop):
            unit.restore(backup)
            return None
        epoch = unit.epochs_done - 1
        self.consumed[layer].append(snap.version)
        self.trace.emit(worker, "EPOCH", t0, epoch=epoch, input_version=snap.version,
                        train_err=unit.error(data_t), valid_err=unit.error(data_v))
        if layer == 0 and self.first_layer_policy() and \
                unit.epochs_done >= self.schedule.stipulated_epochs[0]:
            # the final first-layer publication must not reach downstream workers
            self.stop.set()
        t0 = now_ns()
        out = (unit.transform(data_t), unit.transform(data_v))
        return out, t0, epoch, snap.version

    def record_publish(self, layer, out, t0, epoch, version):
        self.buffers[layer + 1].publish(out)
        self.publications[layer] += 1
        self.trace.emit(layer + 1, "PUBLISH", t0, epoch=epoch, input_version=version)


def _pin(layer):
    if not hasattr(os, "sched_setaffinity"):
        return
    cpus = sorted(os.sched_getaffinity(0))
    os.sched_setaffinity(0, {cpus[layer % len(cpus)]})


def _free_worker(run, layer):
    sched = run.schedule
    unit = run.units[layer]
    worker = layer + 1
    inbuf = run.buffers[layer]
    stipulated = sched.stipulated_epochs[layer]
    budget = sched.budget(layer)
    wake = sched.wake_epochs[layer]
    if run.cfg.pin_workers:
        _pin(layer)

    def should_stop():
        run.beats[layer] += 1
        return run.abort.is_set() or (layer > 0 and run.stop.is_set())

    def epoch_on_latest():
        snap = inbuf.snapshot()
        res = run.train_one(layer, snap, should_stop)
        if res is None:
            return False
        run.record_publish(layer, *res)
        return True

    if layer > 0:
        run.states[layer] = "waiting"
        t0 = now_ns()
        first = inbuf.wait_newer(0, run.halted)
        run.trace.emit(worker, "WAIT", t0, epoch=-1, input_version=inbuf.version)
        if first is None:
            run.states[layer] = "done"
            return
    run.states[layer] = "stipulated"
    while unit.epochs_done < stipulated and not run.halted():
        if not epoch_on_latest():
            break
    extra_used = 0
    if unit.epochs_done >= stipulated:
        while budget is None or extra_used < budget:
            run.states[layer] = "sleeping"
            last = run.consumed[layer][-1] if run.consumed[layer] else 0
            t0 = now_ns()
            snap = inbuf.wait_newer(last, run.halted)
            run.trace.emit(worker, "SLEEP", t0, epoch=unit.epochs_done - 1,
                           input_version=last)
            if snap is None:
                break
            run.states[layer] = "awake"
            run.trace.emit(worker, "WAKE", now_ns(), epoch=unit.epochs_done - 1,
                           input_version=snap.version)
            n = wake if budget is None else min(wake, budget - extra_used)
            for _ in range(n):
                if run.halted() or not epoch_on_latest():
                    break
                extra_used += 1
            if run.halted():
                break
    run.states[layer] = "done"


def _run_free(run):
    k = len(run.units)
    errors = {}

    def target(layer):
        try:
            _free_worker(run, layer)
        except BaseException as exc:  # noqa: BLE001 - surfaced to the caller below
            errors[layer] = exc
            run.abort.set()
            log.exception("worker %d failed", layer + 1)
        finally:
            run.buffers[layer + 1].close()
            run.trace.emit(layer + 1, "DONE", now_ns(), epoch=run.units[layer].epochs_done - 1,
                           input_version=run.consumed[layer][-1] if run.consumed[layer] else -1)

    threads = [threading.Thread(target=target, args=(l,), name=f"layer-{l + 1}", daemon=True)
               for l in range(k)]
    for t in threads:
        t.start()
    last_progress = time.monotonic()
    last_mark = None
    while any(t.is_alive() for t in threads):
        next(t for t in threads if t.is_alive()).join(0.05)
        mark = (len(run.trace), tuple(run.beats))
        if mark != last_mark:
            last_mark = mark
            last_progress = time.monotonic()
        elif time.monotonic() - last_progress > run.cfg.watchdog_s:
            run.abort.set()
            for b in run.buffers:
                b.wake_all()
            for t in threads:
                t.join(1.0)
            raise DeadlockError(run.cfg.watchdog_s, list(run.states))
    for t in threads:
        t.join()
    if errors:
        layer = min(errors)
        raise WorkerFailed(layer + 1, errors[layer]) from errors[layer]


def run_deterministic_rounds(cfg, train, valid, trace):
    """Lockstep variant: each round every eligible worker runs one epoch.

    Publications produced in a round become visible at the barrier that ends
    it, applied in layer order. Returns the trained units.
    """
    if cfg.mode != "DETERMINISTIC_ROUNDS":
        raise ValueError("run_deterministic_rounds requires mode DETERMINISTIC_ROUNDS")
    run = _Run(cfg, train, valid, trace)
    _rounds(run)
    return run.units


def _rounds(run):
    sched = run.schedule
    k = len(run.units)
    pending = [0] * k
    extra_used = [0] * k
    rounds = 0
    while True:
        plan = []
        for layer in range(k):
            unit = run.units[layer]
            snap = run.buffers[layer].snapshot()
            if layer > 0 and snap.version < 1:
                continue
            if unit.epochs_done < sched.stipulated_epochs[layer]:
                plan.append((layer, snap))
                continue
            if layer == 0:
                continue
            budget = sched.budget(layer)
            left = None if budget is None else budget - extra_used[layer]
            if pending[layer] == 0 and snap.version > run.consumed[layer][-1] and \
                    (left is None or left > 0):
                n = sched.wake_epochs[layer]
                pending[layer] = n if left is None else min(n, left)
                run.trace.emit(layer + 1, "WAKE", now_ns(), epoch=unit.epochs_done - 1,
                               input_version=snap.version)
            if pending[layer] > 0:
                pending[layer] -= 1
                extra_used[layer] += 1
                plan.append((layer, snap))
        if not plan:
            break
        rounds += 1
        outputs = [(layer, run.train_one(layer, snap)) for layer, snap in plan]
        for layer, res in outputs:
            run.record_publish(layer, *res)
        if run.stop.is_set():
            break
    for layer in range(k):
        run.buffers[layer + 1].close()
        run.trace.emit(layer + 1, "DONE", now_ns(), epoch=run.units[layer].epochs_done - 1,
                       input_version=run.consumed[layer][-1] if run.consumed[layer] else -1)
    run.rounds = rounds
    return run


def sync_units(cfg, train, valid, trace):
    """Run synchronized pre-training in the configured mode; returns the trained units."""
    if cfg.mode == "DETERMINISTIC_ROUNDS":
        return run_deterministic_rounds(cfg, train, valid, trace)
    run = _Run(cfg, train, valid, trace)
    _run_free(run)
    return run.units


def sync_pretrain(cfg, train, valid, trace):
    """RBM-based synchronized pre-training; returns one RbmParams per layer."""
    if cfg.unit != "rbm":
        cfg = cfg.with_(unit="rbm")
    return [u.params for u in sync_units(cfg, train, valid, trace)]


def round_table(cfg):
    """Dry-run the deterministic schedule without training.

    Returns a list of rounds; each round lists ``(worker, input_version)``
    pairs for the epochs it runs.
    """
    sched = cfg.schedule
    k = cfg.n_layers
    versions = [0] * (k + 1)
    done = [0] * k
    consumed = [0] * k
    pending = [0] * k
    extra_used = [0] * k
    table = []
    while True:
        plan = []
        for layer in range(k):
            v = versions[layer]
            if layer > 0 and v < 1:
                continue
            if done[layer] < sched.stipulated_epochs[layer]:
                plan.append(layer)
                continue
            if layer == 0:
                continue
            budget = sched.budget(layer)
            left = None if budget is None else budget - extra_used[layer]
            if pending[layer] == 0 and v > consumed[layer] and (left is None or left > 0):
                n = sched.wake_epochs[layer]
                pending[layer] = n if left is None else min(n, left)
            if pending[layer] > 0:
                pending[layer] -= 1
                extra_used[layer] += 1
                plan.append(layer)
        if not plan:
            break
        table.append([(layer + 1, versions[layer]) for layer in plan])
        stop = False
        for layer in plan:
            consumed[layer] = versions[layer]
            done[layer] += 1
            if layer == 0 and sched.termination == "FIRST_LAYER_DONE" and \
                    done[0] >= sched.stipulated_epochs[0]:
                stop = True
        for layer in plan:
            versions[layer + 1] += 1
        if stop:
            break
    return table
