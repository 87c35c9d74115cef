"""Experiment configuration: JSON <-> frozen dataclasses, unknown keys rejected."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .attacks import AttackConfig
from .cotrain import CotrainConfig
from .errors import ConfigError
from .kernels import check_descriptor
from .transfer import AEConfig, CorruptionOp

TASKS = ("train", "cotrain", "eval-robustness", "attack", "transfer-train", "transfer-eval")


def _tuple(v):
    return tuple(_tuple(x) for x in v) if isinstance(v, (list, tuple)) else v


def _plain(v):
    """Dataclasses/tuples to JSON-ready dicts/lists."""
    if dataclasses.is_dataclass(v):
        return {f.name: _plain(getattr(v, f.name)) for f in dataclasses.fields(v)}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    return v


def _build(cls, doc, where, nested=None):
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}: expected an object, got {type(doc).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    kw = {}
    for k, v in doc.items():
        if nested and k in nested:
            kw[k] = nested[k](v, f"{where}.{k}")
        else:
            kw[k] = _tuple(v)
    try:
        return cls(**kw)
    except ConfigError as exc:
        raise ConfigError(f"{where}: {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _module(cls):
    def make(doc, where):
        if doc is None:
            return cls()
        if not isinstance(doc, dict):
            raise ConfigError(f"{where}: expected an object")
        try:
            return cls.from_dict(_untuple(doc))
        except ConfigError as exc:
            raise ConfigError(f"{where}: {exc}") from None
    return make


def _untuple(doc):
    return json.loads(json.dumps(doc))


@dataclass(frozen=True)
class DatasetSpec:
    """``kind``: synthetic (two_moons | gaussian_blobs | linear_separable), glyphs, csv, idx."""

    kind: str = "synthetic"
    name: str = "two_moons"
    n: int = 400
    noise: float = 0.1
    m: int = 2
    n_classes: int | None = None
    path: str | None = None
    images: str | None = None
    labels: str | None = None
    test_path: str | None = None
    test_fraction: float = 0.5

    def __post_init__(self):
        if self.kind not in ("synthetic", "glyphs", "csv", "idx"):
            raise ConfigError(f"unknown dataset kind {self.kind!r}")
        if self.kind == "csv" and not self.path:
            raise ConfigError("csv dataset needs 'path'")
        if self.kind == "idx" and not (self.images and self.labels):
            raise ConfigError("idx dataset needs 'images' and 'labels'")
        if not 0 <= self.test_fraction < 1:
            raise ConfigError("test_fraction must be in [0, 1)")
        if self.n < 2:
            raise ConfigError("n must be >= 2")


@dataclass(frozen=True)
class ModelSpec:
    """A dense network (``kind=mlp``), a linear model, or a checkpoint path."""

    kind: str = "mlp"
    hidden: tuple = (32, 32)
    activation: str = "relu"
    checkpoint: str | None = None
    generator_hidden: tuple = (32,)

    def __post_init__(self):
        if self.kind not in ("mlp", "linear"):
            raise ConfigError(f"unknown model kind {self.kind!r}")
        if self.activation not in ("relu", "leaky_relu", "identity"):
            raise ConfigError(f"unknown activation {self.activation!r}")


@dataclass(frozen=True)
class TrainSpec:
    epochs: int = 200
    batch_size: int = 32
    optimizer: str = "adam"
    learning_rate: float = 0.01

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or not self.learning_rate > 0:
            raise ConfigError("epochs >= 0, batch_size >= 1 and learning_rate > 0 required")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")


@dataclass(frozen=True)
class ScoreSpec:
    """One robustness score: a kernel descriptor (or the uniform-epsilon family), H and G."""

    kernel: dict | None = None
    family: bool = False
    H: str = "indicator"
    G: str = "one"

    def __post_init__(self):
        if (self.kernel is None) == (not self.family):
            raise ConfigError("give exactly one of 'kernel' or 'family: true'")
        if self.kernel is not None:
            check_descriptor(self.kernel)
        if self.H not in ("indicator", "identity"):
            raise ConfigError(f"unknown H {self.H!r}")
        if self.G not in ("one", "p"):
            raise ConfigError(f"unknown G {self.G!r}")


@dataclass(frozen=True)
class RobustnessCfg:
    metric: str = "l2"
    grid_points: int = 200
    oracle: str = "auto"
    n_inner: int = 1000
    n_outer: int = 1000
    scores: tuple = ()

    def __post_init__(self):
        if self.metric not in ("l2", "linf"):
            raise ConfigError(f"unknown metric {self.metric!r}")
        if self.oracle not in ("auto", "analytic", "attack", "dense", "min"):
            raise ConfigError(f"unknown oracle {self.oracle!r}")
        if self.grid_points < 2 or self.n_inner < 1 or self.n_outer < 1:
            raise ConfigError("grid_points >= 2, n_inner >= 1, n_outer >= 1 required")


@dataclass(frozen=True)
class TransferCfg:
    corruptions: tuple = ()
    modes: tuple = ("separate", "joint")
    n_c: tuple = (0,)
    total: int = 1000
    ae: AEConfig = field(default_factory=AEConfig)
    gauss_sigma: float = 0.1

    def __post_init__(self):
        for mode in self.modes:
            if mode not in ("separate", "joint"):
                raise ConfigError(f"unknown transfer mode {mode!r}")
        if any(n < 0 for n in self.n_c):
            raise ConfigError("n_c values must be >= 0")


def _scores(doc, where):
    if not isinstance(doc, (list, tuple)):
        raise ConfigError(f"{where}: expected a list")
    return tuple(_build(ScoreSpec, d, f"{where}[{i}]") for i, d in enumerate(doc))


def _corruptions(doc, where):
    if not isinstance(doc, (list, tuple)):
        raise ConfigError(f"{where}: expected a list")
    return tuple(_module(CorruptionOp)(d, f"{where}[{i}]") for i, d in enumerate(doc))


@dataclass(frozen=True)
class ExperimentConfig:
    task: str
    seed: int = 0
    out: str | None = None
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    model: ModelSpec = field(default_factory=ModelSpec)
    train: TrainSpec = field(default_factory=TrainSpec)
    robustness: RobustnessCfg = field(default_factory=RobustnessCfg)
    attack: AttackConfig = field(default_factory=AttackConfig)
    cotrain: CotrainConfig = field(default_factory=CotrainConfig)
    transfer: TransferCfg = field(default_factory=TransferCfg)

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}; expected one of {list(TASKS)}")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")

    @classmethod
    def from_dict(cls, doc):
        nested = {
            "dataset": lambda d, w: _build(DatasetSpec, d, w),
            "model": lambda d, w: _build(ModelSpec, d, w),
            "train": lambda d, w: _build(TrainSpec, d, w),
            "robustness": lambda d, w: _build(RobustnessCfg, d, w, {"scores": _scores}),
            "attack": _module(AttackConfig),
            "cotrain": _module(CotrainConfig),
            "transfer": lambda d, w: _build(TransferCfg, d, w, {"ae": _module(AEConfig),
                                                               "corruptions": _corruptions}),
        }
        if isinstance(doc, dict) and "task" not in doc:
            raise ConfigError("config: missing required key 'task'")
        return _build(cls, doc, "config", nested)

    def to_dict(self):
        return _plain(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)


def load_config(path, task=None):
    """Read a JSON config; ``task`` fills in (or must match) the task key."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    if task is not None:
        if doc.get("task", task) != task:
            raise ConfigError(f"config task {doc['task']!r} does not match command {task!r}")
        doc = {**doc, "task": task}
    return ExperimentConfig.from_dict(doc)
