"""Experiment cells: build data from a RunConfig, train one model, evaluate into a result row."""

import csv
import math
import os
import re
import time
from dataclasses import astuple, dataclass, fields, replace

import numpy as np

from .config import RunConfig
from .data import (gen_blobs, gen_overlap_blobs, genome_dataset, load_cifar10_binary, load_genome_text,
                   make_ood_pair, train_test_split)
from .errors import ConfigError, DimensionError
from .metrics import auroc, compute_report, uncertainty_score
from .models import build_deep_ensemble, build_model
from .training import evaluate, load_checkpoint, save_checkpoint, train

RESULT_SCHEMA_VERSION = 1
RESULT_COLUMNS = ("experiment", "seed", "M", "rho", "epoch", "accuracy", "ece", "sce", "brier",
                  "disagreement", "mean_kl", "auroc", "wall_seconds")
NULLABLE = {"disagreement", "mean_kl", "auroc"}


@dataclass
class ResultRow:
    experiment: str
    seed: int
    M: int
    rho: float
    epoch: int
    accuracy: float
    ece: float
    sce: float
    brier: float
    disagreement: float = None
    mean_kl: float = None
    auroc: float = None
    wall_seconds: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, float) and not math.isfinite(v):
                raise ValueError(f"result field {f.name} is not finite: {v}")
            if v is None and f.name not in NULLABLE:
                raise ValueError(f"result field {f.name} must not be null")

    def to_csv(self):
        return ["" if v is None else (repr(v) if isinstance(v, float) else str(v)) for v in astuple(self)]

    @classmethod
    def from_csv(cls, record):
        conv = {"experiment": str, "seed": int, "M": int, "epoch": int}
        kwargs = {}
        for name in RESULT_COLUMNS:
            raw = record[name]
            kwargs[name] = None if raw == "" else conv.get(name, float)(raw)
        return cls(**kwargs)


class ResultWriter:
    """CSV file with the fixed ResultRow header; rows are flushed as they arrive."""

    def __init__(self, path):
        self.path = path
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            csv.writer(fh).writerow(RESULT_COLUMNS)

    def write(self, row):
        with open(self.path, "a", newline="", encoding="utf-8") as fh:
            csv.writer(fh).writerow(row.to_csv())


def read_results(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != RESULT_COLUMNS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return [ResultRow.from_csv(r) for r in reader]


SUMMARY_METRICS = ("accuracy", "ece", "sce", "brier", "disagreement", "mean_kl", "auroc")


def summarize(rows, key):
    """Mean and standard deviation over seeds for each (experiment, ``key``) group."""
    groups = {}
    for r in rows:
        groups.setdefault((r.experiment, getattr(r, key)), []).append(r)
    out = []
    for (exp, k), rs in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1])):
        rec = {"experiment": exp, key: k, "n_seeds": len(rs)}
        for m in SUMMARY_METRICS:
            vals = [getattr(r, m) for r in rs if getattr(r, m) is not None]
            rec[f"{m}_mean"] = float(np.mean(vals)) if vals else ""
            rec[f"{m}_std"] = float(np.std(vals)) if vals else ""
        out.append(rec)
    return out


def write_summary(path, summary):
    if not summary:
        return
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(summary[0]))
        w.writeheader()
        w.writerows(summary)


# data ---------------------------------------------------------------------------------

@dataclass
class CellData:
    train: object
    test: object
    ood: object = None


def build_data(cfg: RunConfig, seed):
    """Train/test (and OOD for ``ood_pair``) datasets for one seed.

    Synthetic datasets are regenerated per run seed unless ``dataset.seed`` pins them.
    """
    d = cfg.dataset
    data_seed = seed if d["seed"] is None else d["seed"]
    kind = d["kind"]
    if kind in ("blobs", "overlap_blobs"):
        gen = gen_blobs if kind == "blobs" else gen_overlap_blobs
        kwargs = {} if d["spread"] is None else {"spread": d["spread"]}
        ds = gen(d["K"], d["n_per_class"], d["dim"] or 2, seed=data_seed, **kwargs)
        return CellData(*train_test_split(ds, d["test_fraction"], data_seed))
    if kind == "ood_pair":
        pair = make_ood_pair(data_seed, shift=d["shift"], K=d["K"], dim=d["dim"] or 8, n_per_class=d["n_per_class"],
                             n_ood_per_class=d["n_ood_per_class"],
                             spread=1.5 if d["spread"] is None else d["spread"])
        tr, te = train_test_split(pair.in_distribution, d["test_fraction"], data_seed)
        return CellData(tr, te, pair.out_of_distribution)
    if kind == "cifar10":
        if d["path"] is None:
            raise ConfigError("field 'dataset.path': required for dataset.kind = cifar10")
        tr, te = load_cifar10_binary(d["path"], d["subset_size"], data_seed, d["test_subset_size"])
        return CellData(tr, te)
    if kind == "genome":
        ds = load_genome_text(d["path"]) if d["path"] else genome_dataset(d["n"], data_seed)
        return CellData(*train_test_split(ds, d["test_fraction"], data_seed))
    raise ConfigError(f"field 'dataset.kind': unknown kind {kind!r}")


# cells ------------------------------------------------------------------------------

@dataclass(frozen=True)
class Cell:
    seed: int
    M: int = None
    rho: float = None
    baseline: bool = False
    experiment: str = None


def _member_seeds(seed, M):
    return [seed * 1000 + i for i in range(M)]


def _checkpoint_name(experiment, M, rho, seed):
    stem = re.sub(r"[^A-Za-z0-9_.-]+", "_", f"{experiment}_M{M}_rho{rho:g}_seed{seed}")
    return stem + ".ckpt"


def row_from_predictions(preds, experiment, seed, M, rho, epoch, wall, ood_preds=None):
    score = None
    if ood_preds is not None:
        score = auroc(uncertainty_score(preds), uncertainty_score(ood_preds))
    rep = compute_report(preds, ood_auroc=score)
    return ResultRow(experiment, int(seed), int(M), float(rho), int(epoch), rep.accuracy, rep.ece, rep.sce,
                     rep.brier, rep.disagreement, rep.mean_pairwise_kl, rep.auroc, float(wall))


def run_cell(cfg: RunConfig, cell: Cell, checkpoint_dir=None):
    """Train and evaluate one (seed, setting) cell; returns ``(ResultRow, model)``."""
    start = time.perf_counter()
    data = build_data(cfg, cell.seed)
    name = cell.experiment or cfg.experiment
    shape, K = data.train.sample_shape, data.train.num_classes
    M = cfg.model["M"] if cell.M is None else cell.M
    mconf = cfg.model_config(shape, K, M=M, rho=cell.rho)
    tconf = cfg.train_config(cell.seed)
    if cell.baseline:
        name = f"{name}:deep_ensemble"
        model = build_deep_ensemble(replace(mconf, M=1), M, _member_seeds(cell.seed, M))
    else:
        model = build_model(mconf, cell.seed)
    model, _ = train(model, data.train, tconf)
    preds = evaluate(model, data.test)
    ood_preds = evaluate(model, data.ood) if data.ood is not None else None
    epochs = tconf.optimizer.epochs
    row = row_from_predictions(preds, name, cell.seed, M, mconf.rho, epochs, time.perf_counter() - start, ood_preds)
    if checkpoint_dir is not None:
        os.makedirs(checkpoint_dir, exist_ok=True)
        meta = {"experiment": name, "seed": cell.seed, "epochs": epochs, "M": M, "rho": mconf.rho}
        save_checkpoint(model, os.path.join(checkpoint_dir, _checkpoint_name(name, M, mconf.rho, cell.seed)), meta)
    return row, model


def eval_checkpoint(cfg: RunConfig, path, seed=None, expected_M=None):
    """Evaluate a saved model on the test split its config and seed describe."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"checkpoint not found: {path}")
    model = load_checkpoint(path, expected_M=expected_M)
    meta = getattr(model, "meta", {})
    seed = meta.get("seed", cfg.seeds[0]) if seed is None else seed
    start = time.perf_counter()
    data = build_data(cfg, seed)
    if data.test.sample_shape != model.config.input_shape:
        raise DimensionError(f"checkpoint expects inputs of shape {model.config.input_shape}, "
                             f"dataset provides {data.test.sample_shape}")
    preds = evaluate(model, data.test)
    ood_preds = evaluate(model, data.ood) if data.ood is not None else None
    row = row_from_predictions(preds, meta.get("experiment", cfg.experiment), seed, model.M, model.config.rho,
                               meta.get("epochs", 0), time.perf_counter() - start, ood_preds)
    return row, compute_report(preds, ood_auroc=row.auroc)
