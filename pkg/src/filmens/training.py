"""Training loop, evaluation into prediction sets, and checkpoint files."""

import json
import logging
import struct
import warnings
import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .data import augment_image
from .errors import ConfigError, FormatError, TrainingDivergence
from .film import ensemble_average
from .metrics import accuracy, ece
from .models import DeepEnsemble, ModelConfig, build_model
from .optim import OptimizerConfig, OptimizerState, cosine_lr, sgd_step
from .rng import stream

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    seed: int = 0
    eval_every: int = 1
    pad_crop: int = 0
    hflip: bool = False
    check_finite: bool = True

    def __post_init__(self):
        if self.eval_every < 1:
            raise ConfigError(f"eval_every must be >= 1, got {self.eval_every}")
        if self.pad_crop < 0:
            raise ConfigError(f"pad_crop must be >= 0, got {self.pad_crop}")


@dataclass
class PredictionSet:
    member_probs: np.ndarray  # (M, s, K)
    ensemble_probs: np.ndarray  # (s, K)
    targets: np.ndarray  # (s,)

    @property
    def s(self):
        return len(self.targets)

    @property
    def M(self):
        return self.member_probs.shape[0]


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    eval_accuracy: float = None
    eval_ece: float = None


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)


def compute_loss(member_logits, targets):
    """Mean over members of each member's cross-entropy."""
    losses = [T.cross_entropy(logits, targets) for logits in member_logits]
    total = losses[0]
    for l in losses[1:]:
        total = total + l
    return total * (1.0 / len(losses))


def _augment_batch(x, config, rng):
    return np.stack([augment_image(img, config.pad_crop, 0.5 if config.hflip else 0.0, rng) for img in x])


def train(model, train_data, config, eval_data=None):
    """Fit ``model`` with momentum SGD and a per-epoch cosine learning rate.

    Every member sees the same shuffled mini-batches. Returns
    ``(model, history)`` with the model switched to eval mode.
    """
    if isinstance(model, DeepEnsemble):
        return _train_deep_ensemble(model, train_data, config, eval_data)
    if len(train_data) < 1:
        raise ConfigError("training data is empty")
    if train_data.sample_shape != model.config.input_shape:
        raise ConfigError(f"data shape {train_data.sample_shape} does not match model {model.config.input_shape}")
    opt = config.optimizer
    params = model.parameters()
    state = OptimizerState.for_params(params)
    history = TrainHistory()
    augment = train_data.inputs.ndim == 4 and (config.pad_crop > 0 or config.hflip)
    n = len(train_data)
    for epoch in range(opt.epochs):
        model.train()
        lr = cosine_lr(epoch, opt.epochs, opt.lr0)
        order = stream(config.seed, "shuffle", epoch).permutation(n)
        drop_rng = stream(config.seed, "dropout", epoch)
        aug_rng = stream(config.seed, "augment", epoch)
        loss_sum, seen = 0.0, 0
        for b, start in enumerate(range(0, n, opt.batch_size)):
            idx = order[start:start + opt.batch_size]
            if model.M * len(idx) < 2:
                warnings.warn(f"skipping single-row batch {b} of epoch {epoch}", stacklevel=2)
                continue
            xb = train_data.inputs[idx]
            if augment:
                xb = _augment_batch(xb, config, aug_rng)
            yb = train_data.targets[idx]
            model.zero_grad()
            loss = compute_loss(model.forward(xb, "train", drop_rng), yb)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDivergence(epoch, b, lr, value)
            T.backward(loss)
            sgd_step(params, [p.grad for p in params], state, lr, opt)
            loss_sum += value * len(idx)
            seen += len(idx)
        state.epoch = epoch + 1
        if config.check_finite and not all(np.isfinite(p.data).all() for p in params):
            raise TrainingDivergence(epoch, "end", lr, float("nan"))
        rec = EpochRecord(epoch, lr, loss_sum / max(seen, 1))
        if eval_data is not None and ((epoch + 1) % config.eval_every == 0 or epoch + 1 == opt.epochs):
            preds = evaluate(model.eval(), eval_data)
            rec.eval_accuracy = accuracy(preds)
            rec.eval_ece = ece(preds)
        log.debug("epoch %d lr=%.4g loss=%.4f", epoch, lr, rec.train_loss)
        history.records.append(rec)
    model.eval()
    return model, history


def _train_deep_ensemble(ens, train_data, config, eval_data):
    histories = [train(m, train_data, replace(config, seed=s))[1] for m, s in zip(ens.members, ens.seeds)]
    merged = TrainHistory()
    for recs in zip(*(h.records for h in histories)):
        merged.records.append(EpochRecord(recs[0].epoch, recs[0].lr, float(np.mean([r.train_loss for r in recs]))))
    if eval_data is not None and merged.records:
        preds = evaluate(ens.eval(), eval_data)
        merged.records[-1].eval_accuracy = accuracy(preds)
        merged.records[-1].eval_ece = ece(preds)
    ens.eval()
    return ens, merged


def predict_logits(model, inputs, batch_size=512):
    """Eval-mode member logits, shape (M, s, K), as float64."""
    chunks = []
    with T.no_grad():
        for start in range(0, len(inputs), batch_size):
            out = model.forward(inputs[start:start + batch_size], "eval")
            chunks.append(np.stack([o.data for o in out]).astype(np.float64))
    return np.concatenate(chunks, axis=1)


def evaluate(model, test_data, batch_size=512):
    """Softmax of every member's logits plus their average."""
    logits = predict_logits(model, test_data.inputs, batch_size)
    member = T.softmax_np(logits, axis=-1)
    return PredictionSet(member, ensemble_average(list(member)), np.asarray(test_data.targets))


# checkpoints ------------------------------------------------------------------------

MAGIC = b"FILMENS1"
FORMAT_VERSION = 1


def _model_arrays(model):
    if isinstance(model, DeepEnsemble):
        out = {}
        for i, m in enumerate(model.members):
            for k, v in _model_arrays(m).items():
                out[f"members.{i}.{k}"] = v
        return out
    out = {name: p.data for name, p in model.named_parameters().items()}
    out.update(model.named_buffers())
    return out


def save_checkpoint(model, path, meta=None):
    """Write the model to ``path``; ``meta`` is a JSON-able dict stored in the header.

    Layout: ``FILMENS1`` magic, little-endian uint64 header length, UTF-8
    JSON header (config plus a manifest of name/shape/dtype/offset per
    buffer), the raw little-endian buffers in manifest order, then a
    little-endian CRC32 of all preceding bytes.
    """
    arrays = _model_arrays(model)
    manifest, blobs, offset = [], [], 0
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<"))
        raw = a.tobytes()
        manifest.append({"name": name, "shape": list(a.shape), "dtype": a.dtype.str, "offset": offset,
                         "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = {
        "format_version": FORMAT_VERSION,
        "kind": "deep_ensemble" if isinstance(model, DeepEnsemble) else "film_ensemble",
        "config": model.config.to_dict(),
        "seeds": list(model.seeds) if isinstance(model, DeepEnsemble) else None,
        "buffers": manifest,
        "meta": dict(meta or {}),
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    body = MAGIC + struct.pack("<Q", len(hbytes)) + hbytes + b"".join(blobs)
    with open(path, "wb") as fh:
        fh.write(body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF))


def _assign(model, arrays, name_prefix=""):
    params = model.named_parameters()
    for name, p in params.items():
        key = name_prefix + name
        if key not in arrays:
            raise FormatError(f"checkpoint is missing buffer {key!r}")
        if arrays[key].shape != p.shape:
            raise FormatError(f"buffer {key!r}: expected shape {p.shape}, found {arrays[key].shape}")
        p.data = arrays[key].astype(p.dtype)
    for i, layer in enumerate(model.layers):
        bufs = layer.buffers()
        if not bufs:
            continue
        loaded = {}
        for k, current in bufs.items():
            key = f"{name_prefix}layers.{i}.{k}"
            if key not in arrays or arrays[key].shape != current.shape:
                raise FormatError(f"checkpoint buffer {key!r} is missing or has the wrong shape")
            loaded[k] = arrays[key].copy()
        layer.load_buffers(loaded)


def load_checkpoint(path, expected_M=None):
    """Read a model written by :func:`save_checkpoint`.

    Raises FormatError on a bad magic, version, checksum or manifest, and
    when ``expected_M`` is given and differs from the stored ensemble size.
    The header's ``meta`` dict is attached to the returned model as ``meta``.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC) + 12:
        raise FormatError(f"{path}: file too short ({len(blob)} bytes) to be a checkpoint")
    if blob[:8] != MAGIC:
        raise FormatError(f"{path}: expected magic {MAGIC!r}, found {blob[:8]!r}")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    actual = zlib.crc32(body) & 0xFFFFFFFF
    if crc != actual:
        raise FormatError(f"{path}: checksum mismatch, expected {crc:#010x}, found {actual:#010x}")
    (hlen,) = struct.unpack("<Q", body[8:16])
    if 16 + hlen > len(body):
        raise FormatError(f"{path}: header length {hlen} exceeds file size")
    try:
        header = json.loads(body[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable header ({exc})") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"{path}: expected format version {FORMAT_VERSION}, found {header.get('format_version')}")
    data = body[16 + hlen:]
    arrays = {}
    for entry in header["buffers"]:
        start, nbytes = entry["offset"], entry["nbytes"]
        if start + nbytes > len(data):
            raise FormatError(f"{path}: buffer {entry['name']!r} extends past end of file")
        arr = np.frombuffer(data[start:start + nbytes], dtype=np.dtype(entry["dtype"]))
        arrays[entry["name"]] = arr.reshape(entry["shape"]).astype(np.dtype(entry["dtype"]).newbyteorder("="))
    try:
        config = ModelConfig.from_dict(header["config"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: invalid model config in header ({exc})") from None
    if header["kind"] == "deep_ensemble":
        seeds = header["seeds"]
        stored_M = len(seeds)
    else:
        stored_M = config.M
    if expected_M is not None and stored_M != expected_M:
        raise FormatError(f"{path}: ensemble size mismatch, expected M={expected_M}, found M={stored_M}")
    if header["kind"] == "deep_ensemble":
        members = [build_model(config, 0) for _ in seeds]
        for i, m in enumerate(members):
            _assign(m, arrays, f"members.{i}.")
        model = DeepEnsemble(members, seeds)
    else:
        model = build_model(config, 0)
        _assign(model, arrays)
    model.meta = header.get("meta", {})
    return model.eval()


__all__ = [
    "TrainConfig", "PredictionSet", "EpochRecord", "TrainHistory", "compute_loss", "train",
    "evaluate", "predict_logits", "save_checkpoint", "load_checkpoint",
]
