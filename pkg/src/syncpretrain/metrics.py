"""Trace events, CSV export, idle-time accounting and run summaries."""
import csv
import itertools
import json
import math
import threading
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from syncpretrain.autoencoder import forward, mse_per_example

EVENT_KINDS = ("WAIT", "EPOCH", "PUBLISH", "SLEEP", "WAKE", "DONE")
TRACE_HEADER = ["worker", "epoch", "event", "input_version", "train_err", "valid_err",
                "t_start_ns", "t_end_ns"]
CURVE_HEADER = ["phase", "worker", "epoch", "input_version", "train_err", "valid_err",
                "t_rel_s"]
BUSY_KINDS = ("EPOCH", "PUBLISH")

# fine-tuning epochs are logged under this pseudo-worker id
FINETUNE_WORKER = 0


class TraceError(ValueError):
    pass


@dataclass(frozen=True)
class TraceEvent:
    worker: int
    epoch: int
    event: str
    input_version: int
    train_err: float
    valid_err: float
    t_start_ns: int
    t_end_ns: int
    seq: int = field(default=0, compare=False)

    def __post_init__(self):
        if self.event not in EVENT_KINDS:
            raise TraceError(f"unknown event kind {self.event!r}")
        if self.t_end_ns < self.t_start_ns:
            raise TraceError(f"event ends before it starts: {self}")

    @property
    def duration_ns(self):
        return self.t_end_ns - self.t_start_ns

    def key(self):
        """Everything except timing; used to compare schedules across runs."""
        return (self.worker, self.epoch, self.event, self.input_version,
                self.train_err, self.valid_err)


def now_ns():
    return time.monotonic_ns()


class TraceSink:
    """Thread-safe event collector.

    ``on_event`` (if given) is called after every append, from the emitting thread.
    """

    def __init__(self, on_event=None):
        self._events = []
        self._lock = threading.Lock()
        self._seq = itertools.count()
        self.on_event = on_event

    def emit(self, worker, event, t_start_ns, t_end_ns=None, epoch=-1, input_version=-1,
             train_err=math.nan, valid_err=math.nan):
        if t_end_ns is None:
            t_end_ns = now_ns()
        with self._lock:
            ev = TraceEvent(worker, epoch, event, input_version, train_err, valid_err,
                            t_start_ns, t_end_ns, next(self._seq))
            self._events.append(ev)
        if self.on_event is not None:
            self.on_event(ev)
        return ev

    def extend(self, events):
        with self._lock:
            for ev in events:
                self._events.append(TraceEvent(**{**asdict(ev), "seq": next(self._seq)}))

    def emitted(self):
        """Events in emission order."""
        with self._lock:
            return list(self._events)

    def events(self):
        return sort_events(self.emitted())

    def __len__(self):
        with self._lock:
            return len(self._events)


def sort_events(events):
    return sorted(events, key=lambda e: (e.t_start_ns, e.worker, e.seq))


def _fmt(x):
    return "" if isinstance(x, float) and math.isnan(x) else repr(float(x))


def export_trace(events, path):
    """Write events as CSV in canonical (t_start, worker) order."""
    try:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(TRACE_HEADER)
            for e in sort_events(events):
                w.writerow([e.worker, e.epoch, e.event, e.input_version, _fmt(e.train_err),
                            _fmt(e.valid_err), e.t_start_ns, e.t_end_ns])
    except OSError as exc:
        raise OSError(f"cannot write trace to {path}: {exc}") from exc


def _num(s):
    return math.nan if s == "" else float(s)


def parse_trace(path):
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != TRACE_HEADER:
            raise TraceError(f"{path}: unexpected header {header}")
        out = []
        for i, row in enumerate(reader):
            if len(row) != len(TRACE_HEADER):
                raise TraceError(f"{path}:{i + 2}: expected {len(TRACE_HEADER)} fields")
            out.append(TraceEvent(int(row[0]), int(row[1]), row[2], int(row[3]),
                                  _num(row[4]), _num(row[5]), int(row[6]), int(row[7]), i))
    return out


def export_error_curves(events, path, t0_ns=None):
    """Per-epoch error rows with seconds since ``t0_ns`` (default: first event)."""
    events = sort_events(events)
    if t0_ns is None:
        t0_ns = events[0].t_start_ns if events else 0
    try:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(CURVE_HEADER)
            for e in events:
                if e.event != "EPOCH":
                    continue
                phase = "finetune" if e.worker == FINETUNE_WORKER else "pretrain"
                w.writerow([phase, e.worker, e.epoch, e.input_version, _fmt(e.train_err),
                            _fmt(e.valid_err), f"{(e.t_end_ns - t0_ns) / 1e9:.6f}"])
    except OSError as exc:
        raise OSError(f"cannot write error curves to {path}: {exc}") from exc


@dataclass(frozen=True)
class WorkerTime:
    busy_ns: int
    idle_ns: int
    waiting_ns: int

    @property
    def total_ns(self):
        return self.busy_ns + self.idle_ns + self.waiting_ns


def idle_time_report(events):
    """Split every worker's share of the run span into busy, waiting and idle time.

    Busy is time in EPOCH/PUBLISH events, waiting is time blocked on upstream
    data (WAIT), and idle is the rest of the span (sleeping, not yet started,
    already finished).
    """
    events = [e for e in events if e.worker != FINETUNE_WORKER]
    if not events:
        return {}
    for e in events:
        if e.event not in EVENT_KINDS or e.t_end_ns < e.t_start_ns:
            raise TraceError(f"malformed event {e}")
    t0 = min(e.t_start_ns for e in events)
    t1 = max(e.t_end_ns for e in events)
    span = t1 - t0
    report = {}
    for worker in sorted({e.worker for e in events}):
        mine = [e for e in events if e.worker == worker]
        busy = sum(e.duration_ns for e in mine if e.event in BUSY_KINDS)
        waiting = sum(e.duration_ns for e in mine if e.event == "WAIT")
        if busy + waiting > span:
            raise TraceError(f"worker {worker} has overlapping events")
        report[worker] = WorkerTime(busy, span - busy - waiting, waiting)
    return report


def total_idle_ns(report):
    return sum(t.idle_ns for t in report.values())


def pretrain_wall_ns(events):
    events = [e for e in events if e.worker != FINETUNE_WORKER]
    if not events:
        return 0
    return max(e.t_end_ns for e in events) - min(e.t_start_ns for e in events)


def evaluate(sae, data):
    recon, _ = forward(sae, data)
    return mse_per_example(data, recon)


def dump_reconstructions(sae, data, path, n=25):
    """Write the first ``n`` inputs and their reconstructions as pixel rows."""
    x = data[:n]
    recon, _ = forward(sae, x)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        for i, (orig, rec) in enumerate(zip(x, recon)):
            w.writerow(["original", i, *np.round(orig, 6)])
            w.writerow(["reconstruction", i, *np.round(rec, 6)])


@dataclass
class RunReport:
    algorithm: str
    pretrain_wall_s: float
    finetune_wall_s: float
    train_err: float
    test_err: float
    config_hash: str
    seed: int
    valid_err: float = math.nan
    pretrain_valid_err: float = math.nan

    def __post_init__(self):
        if self.pretrain_wall_s < 0 or self.finetune_wall_s < 0:
            raise ValueError("durations must be non-negative")

    @property
    def total_wall_s(self):
        return self.pretrain_wall_s + self.finetune_wall_s

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))


@dataclass(frozen=True)
class Speedup:
    pretrain: float
    total: float


def speedup(greedy_report, sync_report):
    """Fraction of wall time saved by sync, relative to pre-training alone and to the whole run."""
    if greedy_report.config_hash != sync_report.config_hash:
        raise ValueError(
            f"reports come from different configs: {greedy_report.config_hash} "
            f"vs {sync_report.config_hash}")

    def saved(g, s):
        return (g - s) / g if g > 0 else 0.0

    return Speedup(saved(greedy_report.pretrain_wall_s, sync_report.pretrain_wall_s),
                   saved(greedy_report.total_wall_s, sync_report.total_wall_s))
