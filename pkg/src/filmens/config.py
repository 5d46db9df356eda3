"""Flat ``key = value`` run configuration files.

Keys use dotted section prefixes::

    experiment = overlap_demo
    seeds = 1,2,3
    dataset.kind = overlap_blobs
    model.M = 4
    train.epochs = 40

Lines starting with ``#`` are comments. Every key has a fixed type; unknown
keys and unparsable values raise ConfigError naming the line and field.
"""

import os
from dataclasses import dataclass, field

from .errors import ConfigError
from .models import ModelConfig
from .optim import OptimizerConfig
from .training import TrainConfig


def _bool(text):
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(text)


def _ints(text):
    return [int(t) for t in text.split(",") if t.strip()]


def _floats(text):
    return [float(t) for t in text.split(",") if t.strip()]


# key -> (parser, default)
SCHEMA = {
    "experiment": (str, "experiment"),
    "out": (str, "results"),
    "seeds": (_ints, [1, 2, 3]),
    "dataset.kind": (str, "overlap_blobs"),
    "dataset.K": (int, 4),
    "dataset.n_per_class": (int, 750),
    "dataset.dim": (int, None),  # 2 for blobs, 8 for ood_pair
    "dataset.spread": (float, None),
    "dataset.test_fraction": (float, 1 / 3),
    "dataset.seed": (int, None),
    "dataset.shift": (float, 6.0),
    "dataset.n_ood_per_class": (int, 250),
    "dataset.path": (str, None),
    "dataset.subset_size": (int, None),
    "dataset.test_subset_size": (int, None),
    "dataset.n": (int, 5000),
    "model.kind": (str, "mlp"),
    "model.M": (int, 4),
    "model.rho": (float, 2.0),
    "model.widths": (_ints, None),
    "model.dropout_rate": (float, 0.5),
    "model.dtype": (str, "float32"),
    "train.epochs": (int, 40),
    "train.batch_size": (int, 128),
    "train.lr0": (float, 0.1),
    "train.momentum": (float, 0.9),
    "train.weight_decay": (float, 0.0005),
    "train.eval_every": (int, 1),
    "train.pad_crop": (int, 0),
    "train.hflip": (_bool, False),
}

DATASET_KINDS = ("blobs", "overlap_blobs", "ood_pair", "cifar10", "genome")


@dataclass
class RunConfig:
    experiment: str
    dataset: dict
    model: dict
    train: dict
    out: str = "results"
    seeds: list = field(default_factory=lambda: [1, 2, 3])
    source: str = None

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("seeds must not be empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError(f"seeds must be distinct, got {self.seeds}")
        if self.dataset["kind"] not in DATASET_KINDS:
            raise ConfigError(f"field 'dataset.kind': unknown kind {self.dataset['kind']!r}; expected one of {DATASET_KINDS}")
        path = self.dataset.get("path")
        if path is not None and not os.path.exists(path):
            raise ConfigError(f"field 'dataset.path': {path} does not exist")
        # validate eagerly so errors surface before any training
        self.train_config(0)
        OptimizerConfig(**self._optimizer_kwargs())

    def _optimizer_kwargs(self):
        t = self.train
        return dict(lr0=t["lr0"], momentum=t["momentum"], weight_decay=t["weight_decay"],
                    epochs=t["epochs"], batch_size=t["batch_size"])

    def train_config(self, seed):
        try:
            return TrainConfig(
                optimizer=OptimizerConfig(**self._optimizer_kwargs()),
                seed=seed,
                eval_every=self.train["eval_every"],
                pad_crop=self.train["pad_crop"],
                hflip=self.train["hflip"],
            )
        except ValueError as exc:
            raise ConfigError(f"section 'train': {exc}") from None

    def model_config(self, input_shape, num_classes, M=None, rho=None):
        m = self.model
        try:
            return ModelConfig(
                kind=m["kind"], input_shape=input_shape, num_classes=num_classes,
                M=m["M"] if M is None else M, rho=m["rho"] if rho is None else rho,
                dropout_rate=m["dropout_rate"], widths=m["widths"], dtype=m["dtype"],
            )
        except ValueError as exc:
            raise ConfigError(f"section 'model': {exc}") from None


def parse_config_text(text, source="<string>"):
    values = {k: v[1] for k, v in SCHEMA.items()}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown field {key!r}")
        parser = SCHEMA[key][0]
        try:
            values[key] = parser(value)
        except ValueError:
            raise ConfigError(
                f"{source}:{lineno}: field {key!r} expects {getattr(parser, '__name__', parser).lstrip('_')}, got {value!r}"
            ) from None
    return values


def _sections(values):
    out = {"dataset": {}, "model": {}, "train": {}}
    for key, v in values.items():
        if "." in key:
            sec, name = key.split(".", 1)
            out[sec][name] = v
    return out


def build_run_config(values, source=None):
    seeds = values["seeds"]
    env_seed = os.environ.get("FILMENS_SEED")
    if env_seed:
        try:
            seeds = [int(env_seed)]
        except ValueError:
            raise ConfigError(f"FILMENS_SEED must be an integer, got {env_seed!r}") from None
    sec = _sections(values)
    return RunConfig(
        experiment=values["experiment"], dataset=sec["dataset"], model=sec["model"], train=sec["train"],
        out=values["out"], seeds=list(seeds), source=source,
    )


def load_config(path):
    """Read a config file into a RunConfig. FILMENS_SEED, when set, replaces the seed list."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"config file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return build_run_config(parse_config_text(text, source=path), source=path)


def default_config(**overrides):
    """A RunConfig with every field at its default; keys use the dotted names."""
    values = {k: v[1] for k, v in SCHEMA.items()}
    for k, v in overrides.items():
        key = k.replace("__", ".")
        if key not in SCHEMA:
            raise ConfigError(f"unknown field {key!r}")
        values[key] = v
    return build_run_config(values)
