"""Run configuration: dotted-key text files, presets and validation.

A config file holds one ``key = value`` pair per line; ``#`` starts a comment.
Values are JSON (numbers, ``true``/``false``/``null``, lists, quoted strings);
anything that is not valid JSON is taken as a bare string.
"""
import hashlib
import json
from dataclasses import dataclass, replace

from syncpretrain.rbm import CdHyperparams

MODES = ("FREE_RUNNING", "DETERMINISTIC_ROUNDS")
TERMINATIONS = ("ALL_STIPULATED", "FIRST_LAYER_DONE")
UNITS = ("rbm", "autoencoder")

DEFAULTS = {
    "model.arch": [784, 1000, 500, 250, 30],
    "data.images": "train-images-idx3-ubyte",
    "data.labels": "train-labels-idx1-ubyte",
    "data.test_images": "t10k-images-idx3-ubyte",
    "data.test_labels": "t10k-labels-idx1-ubyte",
    "data.per_class_valid": 1000,
    "data.per_class_test": 0,
    "data.train_limit": 0,
    "data.split_seed": 0,
    "train.batch_size": 100,
    "train.epochs_per_layer": 20,
    "train.seed": 0,
    "cd.learning_rate": 0.1,
    "cd.momentum": [[0, 0.5], [5, 0.9]],
    "cd.steps": 1,
    "cd.sample_hidden": True,
    "finetune.learning_rate": 0.001,
    "finetune.epochs": 10,
    "pretrain.unit": "rbm",
    "pretrain.ae_learning_rate": 0.1,
    "sync.mode": "FREE_RUNNING",
    "sync.termination": "FIRST_LAYER_DONE",
    "sync.stipulated_epochs": None,
    "sync.wake_epochs": 1,
    "sync.extra_epochs": [0, 5, 20, 40],
    "sync.watchdog_s": 600.0,
    "workers.pin": False,
    "output.dir": "out",
}

PRESETS = {
    "paper": {},
    "desk": {
        "model.arch": [784, 256, 128, 64, 16],
        "data.images": "desk-images-idx3-ubyte",
        "data.labels": "desk-labels-idx1-ubyte",
        "data.test_images": None,
        "data.test_labels": None,
        "data.per_class_valid": 100,
        "data.per_class_test": 100,
        "data.train_limit": 5000,
        "train.epochs_per_layer": 10,
        "finetune.epochs": 5,
    },
}

# keys that do not change the numerical result of a run
_UNHASHED = ("output.dir", "workers.pin", "sync.watchdog_s")


class ConfigError(Exception):
    def __init__(self, message, key=None, line=None):
        self.key = key
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key {key!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


@dataclass(frozen=True)
class WorkerSchedule:
    stipulated_epochs: tuple
    wake_epochs: tuple
    extra_epochs: tuple = None  # None: wake on every upstream publication without limit
    termination: str = "FIRST_LAYER_DONE"

    def __post_init__(self):
        k = len(self.stipulated_epochs)
        if any(n < 1 for n in self.stipulated_epochs):
            raise ConfigError("every stipulated epoch count must be >= 1",
                              "sync.stipulated_epochs")
        if len(self.wake_epochs) != k or any(n < 1 for n in self.wake_epochs):
            raise ConfigError(f"need {k} wake epoch counts, each >= 1", "sync.wake_epochs")
        if self.extra_epochs is not None and (
                len(self.extra_epochs) != k or any(n < 0 for n in self.extra_epochs)):
            raise ConfigError(f"need {k} non-negative extra epoch budgets", "sync.extra_epochs")
        if self.termination not in TERMINATIONS:
            raise ConfigError(f"must be one of {TERMINATIONS}", "sync.termination")

    @property
    def n_layers(self):
        return len(self.stipulated_epochs)

    def budget(self, layer):
        """Post-stipulation epoch budget for a 0-based layer (None = unlimited)."""
        return None if self.extra_epochs is None else self.extra_epochs[layer]


@dataclass(frozen=True)
class TrainingConfig:
    arch: tuple = (784, 1000, 500, 250, 30)
    cd: CdHyperparams = CdHyperparams()
    finetune_learning_rate: float = 0.001
    batch_size: int = 100
    epochs_per_layer: int = 20
    finetune_epochs: int = 10
    seed: int = 0
    schedule: WorkerSchedule = None
    mode: str = "FREE_RUNNING"
    unit: str = "rbm"
    ae_learning_rate: float = 0.1
    pin_workers: bool = False
    watchdog_s: float = 600.0
    values: tuple = ()  # the resolved dotted-key mapping, as sorted items

    def __post_init__(self):
        if len(self.arch) < 2 or any(d < 1 for d in self.arch):
            raise ConfigError("need >= 2 positive layer dims", "model.arch")
        if self.batch_size < 1:
            raise ConfigError("must be >= 1", "train.batch_size")
        if self.epochs_per_layer < 1:
            raise ConfigError("must be >= 1", "train.epochs_per_layer")
        if self.finetune_epochs < 0:
            raise ConfigError("must be >= 0", "finetune.epochs")
        if self.finetune_learning_rate < 0:
            raise ConfigError("must be >= 0", "finetune.learning_rate")
        if self.mode not in MODES:
            raise ConfigError(f"must be one of {MODES}", "sync.mode")
        if self.unit not in UNITS:
            raise ConfigError(f"must be one of {UNITS}", "pretrain.unit")
        if self.schedule is None:
            k = len(self.arch) - 1
            object.__setattr__(self, "schedule", WorkerSchedule(
                (self.epochs_per_layer,) * k, (1,) * k, None, "ALL_STIPULATED"))
        if self.schedule.n_layers != len(self.arch) - 1:
            raise ConfigError(f"schedule covers {self.schedule.n_layers} layers, "
                              f"arch has {len(self.arch) - 1}", "sync.stipulated_epochs")

    @property
    def n_layers(self):
        return len(self.arch) - 1

    def with_(self, **changes):
        return replace(self, **changes)

    def mapping(self):
        return dict(self.values)

    def config_hash(self):
        m = {k: v for k, v in self.mapping().items() if k not in _UNHASHED}
        return hashlib.sha256(json.dumps(m, sort_keys=True).encode()).hexdigest()[:16]


def parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_text(text):
    """Parse config text into ``{key: (value, line_no)}``."""
    out = {}
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", line=no)
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError("empty key", line=no)
        if key in out:
            raise ConfigError("duplicate key", key, no)
        out[key] = (parse_value(value), no)
    return out


def _per_layer(value, k, key):
    if isinstance(value, int) and not isinstance(value, bool):
        return (value,) * k
    if isinstance(value, list) and all(isinstance(v, int) and not isinstance(v, bool)
                                       for v in value):
        if len(value) != k:
            raise ConfigError(f"expected {k} entries, got {len(value)}", key)
        return tuple(value)
    raise ConfigError("expected an integer or a list of integers", key)


def resolve(overrides=None, preset=None, lines=None):
    """Merge defaults, a preset and overrides into a validated TrainingConfig.

    ``lines`` maps keys to source line numbers for diagnostics.
    """
    lines = lines or {}
    merged = dict(DEFAULTS)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        merged.update(PRESETS[preset])
    for key, value in (overrides or {}).items():
        if key not in DEFAULTS:
            raise ConfigError("unknown key", key, lines.get(key))
        merged[key] = value
    try:
        return _build(merged)
    except ConfigError as exc:
        if exc.line is None and exc.key in lines:
            raise ConfigError(str(exc).split(": ", 1)[-1], exc.key, lines[exc.key]) from None
        raise


def _typed(m, key, kind):
    v = m[key]
    if kind is float and isinstance(v, int) and not isinstance(v, bool):
        v = float(v)
    if kind is int and isinstance(v, bool) or not isinstance(v, kind):
        raise ConfigError(f"expected {kind.__name__}, got {v!r}", key)
    return v


def _build(m):
    arch = m["model.arch"]
    if not isinstance(arch, list) or not all(isinstance(d, int) for d in arch):
        raise ConfigError("expected a list of integers", "model.arch")
    if len(arch) < 2 or any(d < 1 for d in arch):
        raise ConfigError("need >= 2 positive layer dims", "model.arch")
    k = len(arch) - 1
    momentum = m["cd.momentum"]
    try:
        schedule = tuple((int(t), float(v)) for t, v in momentum)
    except (TypeError, ValueError):
        raise ConfigError("expected [[epoch, momentum], ...]", "cd.momentum") from None
    try:
        cd = CdHyperparams(_typed(m, "cd.learning_rate", float), schedule,
                           _typed(m, "cd.steps", int), _typed(m, "cd.sample_hidden", bool))
    except ValueError as exc:
        raise ConfigError(str(exc), "cd") from None
    epochs = _typed(m, "train.epochs_per_layer", int)
    stip = m["sync.stipulated_epochs"]
    stip = (epochs,) * k if stip is None else _per_layer(stip, k, "sync.stipulated_epochs")
    extra = m["sync.extra_epochs"]
    if extra is not None:
        extra = _per_layer(extra, k, "sync.extra_epochs")
    term = _typed(m, "sync.termination", str).upper()
    schedule = WorkerSchedule(stip, _per_layer(m["sync.wake_epochs"], k, "sync.wake_epochs"),
                              extra, term)
    for key in ("data.per_class_valid", "data.per_class_test", "data.train_limit",
                "data.split_seed"):
        if _typed(m, key, int) < 0:
            raise ConfigError("must be >= 0", key)
    for key in ("data.images", "data.labels"):
        _typed(m, key, str)
    for key in ("data.test_images", "data.test_labels"):
        if m[key] is not None:
            _typed(m, key, str)
    _typed(m, "output.dir", str)
    if _typed(m, "sync.watchdog_s", float) <= 0:
        raise ConfigError("must be > 0", "sync.watchdog_s")
    return TrainingConfig(
        arch=tuple(arch), cd=cd,
        finetune_learning_rate=_typed(m, "finetune.learning_rate", float),
        batch_size=_typed(m, "train.batch_size", int),
        epochs_per_layer=epochs,
        finetune_epochs=_typed(m, "finetune.epochs", int),
        seed=_typed(m, "train.seed", int),
        schedule=schedule,
        mode=_typed(m, "sync.mode", str).upper(),
        unit=_typed(m, "pretrain.unit", str).lower(),
        ae_learning_rate=_typed(m, "pretrain.ae_learning_rate", float),
        pin_workers=_typed(m, "workers.pin", bool),
        watchdog_s=m["sync.watchdog_s"],
        values=tuple(sorted(m.items(), key=lambda kv: kv[0])),
    )


def load_config(path, preset=None, overrides=None):
    """Read a config file; ``overrides`` (e.g. from CLI flags) win over file values."""
    try:
        with open(path) as f:
            text = f.read()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    parsed = parse_text(text)
    values = {k: v for k, (v, _) in parsed.items()}
    lines = {k: no for k, (_, no) in parsed.items()}
    if "preset" in values:
        preset = preset or values.pop("preset")
        values.pop("preset", None)
    values.update(overrides or {})
    return resolve(values, preset, lines)


def dump_config(cfg):
    """Render the fully resolved config in the same file format."""
    return "".join(f"{k} = {json.dumps(v)}\n" for k, v in cfg.values)


def paper_config(overrides=None):
    return resolve(overrides, "paper")


def desk_config(overrides=None):
    return resolve(overrides, "desk")
