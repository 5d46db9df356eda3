"""Datasets: synthetic generators, CIFAR-10 binary files, DNA sequences, OOD pairs."""

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, ParameterError, ParseError, SplitError
from .rng import stream


@dataclass
class Dataset:
    inputs: np.ndarray
    targets: np.ndarray
    num_classes: int
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.targets = np.asarray(self.targets, dtype=np.int64)
        if len(self.inputs) < 1:
            raise ParameterError("dataset must contain at least one sample")
        if len(self.inputs) != len(self.targets):
            raise ParameterError(f"{len(self.inputs)} inputs but {len(self.targets)} targets")
        if self.targets.min() < 0 or self.targets.max() >= self.num_classes:
            raise ParameterError(f"targets must lie in [0, {self.num_classes})")

    def __len__(self):
        return len(self.targets)

    @property
    def sample_shape(self):
        return tuple(self.inputs.shape[1:])

    def subset(self, idx, **meta):
        return Dataset(self.inputs[idx], self.targets[idx], self.num_classes, {**self.metadata, **meta})


@dataclass
class OodPair:
    in_distribution: Dataset
    out_of_distribution: Dataset

    def __post_init__(self):
        if self.in_distribution.sample_shape != self.out_of_distribution.sample_shape:
            raise ParameterError(
                f"in-distribution shape {self.in_distribution.sample_shape} differs from "
                f"OOD shape {self.out_of_distribution.sample_shape}"
            )


# synthetic blobs ---------------------------------------------------------------

def class_means(K, dim, radius=3.0):
    """K points evenly spaced on a circle in the first two coordinates."""
    angles = 2 * np.pi * np.arange(K) / K
    means = np.zeros((K, dim))
    means[:, 0] = radius * np.cos(angles)
    means[:, 1] = radius * np.sin(angles)
    return means


def gen_blobs(K, n_per_class, dim=2, spread=0.5, seed=0, shift=None, name="blobs"):
    """Isotropic Gaussian blobs around :func:`class_means`.

    ``shift`` (a vector of length ``dim``) translates every class mean.
    Samples are ordered class by class.
    """
    if K < 2 or dim < 2:
        raise ParameterError(f"need K >= 2 and dim >= 2, got K={K}, dim={dim}")
    if n_per_class < 1 or spread < 0:
        raise ParameterError(f"need n_per_class >= 1 and spread >= 0, got {n_per_class}, {spread}")
    means = class_means(K, dim)
    if shift is not None:
        means = means + np.asarray(shift, dtype=float)
    rng = stream(seed, "blobs", name)
    targets = np.repeat(np.arange(K), n_per_class)
    x = means[targets] + spread * rng.standard_normal((K * n_per_class, dim))
    meta = {"name": name, "source": f"synthetic seed={seed} spread={spread}"}
    return Dataset(x.astype(np.float32), targets, K, meta)


def gen_overlap_blobs(K, n_per_class, dim=2, spread=1.5, seed=0, shift=None, name="overlap_blobs"):
    """Blobs whose spread is large relative to the mean separation, so classes overlap."""
    return gen_blobs(K, n_per_class, dim, spread, seed, shift, name)


def shift_vector(dim, length):
    """Vector of norm ``length`` orthogonal to the plane of the class means.

    Spread evenly over coordinates 2..dim-1; with ``dim == 2`` there is no
    such direction and the in-plane diagonal is used instead.
    """
    v = np.zeros(dim)
    if dim > 2:
        v[2:] = 1.0
    else:
        v[:] = 1.0
    return v * (length / np.linalg.norm(v))


def make_ood_pair(seed, shift=6.0, K=4, dim=8, n_per_class=750, n_ood_per_class=250, spread=1.5):
    """In-distribution overlap blobs and a translated copy whose class means moved by ``shift``.

    The translation (see :func:`shift_vector`) leaves the in-plane class
    layout intact and moves every sample off the training support.
    """
    ind = gen_overlap_blobs(K, n_per_class, dim, spread, seed, name="ood_in")
    ood = gen_overlap_blobs(K, n_ood_per_class, dim, spread, seed, shift=shift_vector(dim, shift), name="ood_out")
    return OodPair(ind, ood)


def train_test_split(ds, test_fraction, seed):
    """Stratified, seeded split. Returns ``(train, test)``."""
    if not 0 < test_fraction < 1:
        raise ParameterError(f"test_fraction must be in (0, 1), got {test_fraction}")
    rng = stream(seed, "split")
    train_idx, test_idx = [], []
    for k in range(ds.num_classes):
        idx = np.flatnonzero(ds.targets == k)
        if idx.size == 0:
            continue
        if idx.size < 2:
            raise SplitError(f"class {k} has {idx.size} sample; need at least 2 to split")
        idx = rng.permutation(idx)
        n_test = min(max(int(round(test_fraction * idx.size)), 1), idx.size - 1)
        test_idx.append(idx[:n_test])
        train_idx.append(idx[n_test:])
    train_idx = np.sort(np.concatenate(train_idx))
    test_idx = np.sort(np.concatenate(test_idx))
    return ds.subset(train_idx, split="train"), ds.subset(test_idx, split="test")


def stratified_subset(ds, size, seed):
    """``size`` samples drawn evenly across classes (remainder to the lowest classes)."""
    K = ds.num_classes
    if size < K:
        raise ParameterError(f"subset size {size} smaller than number of classes {K}")
    rng = stream(seed, "subset")
    base, extra = divmod(size, K)
    picked = []
    for k in range(K):
        idx = np.flatnonzero(ds.targets == k)
        want = base + (1 if k < extra else 0)
        if idx.size < want:
            raise SplitError(f"class {k} has {idx.size} samples, subset needs {want}")
        picked.append(rng.choice(idx, size=want, replace=False))
    return ds.subset(np.sort(np.concatenate(picked)), subset=size)


# CIFAR-10 -------------------------------------------------------------------------

CIFAR_RECORD = 3073
CIFAR_TRAIN_FILES = [f"data_batch_{i}.bin" for i in range(1, 6)]
CIFAR_TEST_FILE = "test_batch.bin"


def read_cifar10_file(path):
    """Parse one CIFAR-10 binary batch file into (uint8 images (N,3,32,32), labels)."""
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size == 0 or raw.size % CIFAR_RECORD:
        raise FormatError(f"{path}: length {raw.size} is not a positive multiple of {CIFAR_RECORD}")
    records = raw.reshape(-1, CIFAR_RECORD)
    labels = records[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels > 9)
    if bad.size:
        raise FormatError(f"{path}: record {int(bad[0])} has label byte {labels[bad[0]]} > 9")
    images = records[:, 1:].reshape(-1, 3, 32, 32)
    return images, labels


def write_cifar10_file(path, images, labels):
    """Write images (N,3,32,32) uint8 and labels in the CIFAR-10 binary layout."""
    images = np.asarray(images, dtype=np.uint8).reshape(len(labels), -1)
    rec = np.concatenate([np.asarray(labels, dtype=np.uint8)[:, None], images], axis=1)
    rec.tofile(path)


def load_cifar10_binary(dir_path, subset_size=None, seed=0, test_subset_size=None):
    """Load the CIFAR-10 binary distribution from ``dir_path``.

    Pixels are scaled to [0, 1] and standardized per channel using the mean
    and standard deviation of the (possibly subsetted) training images.
    Returns ``(train, test)``.
    """
    train_files = [os.path.join(dir_path, f) for f in CIFAR_TRAIN_FILES]
    train_files = [f for f in train_files if os.path.exists(f)]
    test_file = os.path.join(dir_path, CIFAR_TEST_FILE)
    if not train_files or not os.path.exists(test_file):
        raise FileNotFoundError(f"{dir_path}: expected data_batch_*.bin and {CIFAR_TEST_FILE}")
    parts = [read_cifar10_file(f) for f in train_files]
    x_train = np.concatenate([p[0] for p in parts])
    y_train = np.concatenate([p[1] for p in parts])
    x_test, y_test = read_cifar10_file(test_file)
    train = Dataset(x_train, y_train, 10, {"name": "cifar10", "source": dir_path})
    test = Dataset(x_test, y_test, 10, {"name": "cifar10", "source": dir_path})
    if subset_size:
        train = stratified_subset(train, subset_size, seed)
    if test_subset_size:
        test = stratified_subset(test, test_subset_size, seed + 1)
    xtr = train.inputs.astype(np.float32) / 255.0
    mean = xtr.mean(axis=(0, 2, 3), keepdims=True)
    std = xtr.std(axis=(0, 2, 3), keepdims=True)
    train.inputs = (xtr - mean) / std
    test.inputs = (test.inputs.astype(np.float32) / 255.0 - mean) / std
    train.metadata["channel_mean"] = mean.ravel().tolist()
    train.metadata["channel_std"] = std.ravel().tolist()
    return train, test


# DNA sequences ------------------------------------------------------------------------

NUCLEOTIDES = "ACGT"
SEQ_LEN = 41
_NUC_INDEX = {c: i for i, c in enumerate(NUCLEOTIDES)}


def one_hot_sequence(seq):
    """Encode a 41-nt sequence as a channel-first (4, 41) one-hot array (rows A, C, G, T)."""
    if len(seq) != SEQ_LEN:
        raise ParseError(f"sequence length {len(seq)} != {SEQ_LEN}")
    out = np.zeros((4, SEQ_LEN), dtype=np.float32)
    for j, ch in enumerate(seq):
        i = _NUC_INDEX.get(ch)
        if i is None:
            raise ParseError(f"invalid nucleotide {ch!r} at position {j}")
        out[i, j] = 1.0
    return out


def decode_sequence(onehot):
    return "".join(NUCLEOTIDES[i] for i in np.asarray(onehot).argmax(axis=0))


def load_genome_text(path, limit=None):
    """Read ``SEQ<TAB>LABEL`` lines into a binary-labelled Dataset."""
    xs, ys = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2 or parts[1] not in ("0", "1"):
                raise ParseError(f"{path}:{lineno}: expected 'SEQ<TAB>0|1', got {line!r}")
            try:
                xs.append(one_hot_sequence(parts[0]))
            except ParseError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
            ys.append(int(parts[1]))
            if limit and len(ys) >= limit:
                break
    return Dataset(np.stack(xs), np.array(ys), 2, {"name": "genome", "source": str(path)})


MOTIF = "GAGG"


def gen_genome_sequences(n, seed=0):
    """Random sequences labelled 1 when the motif ``GAGG`` is planted around the centre.

    Half of the samples get the motif at a random offset within 3 nt of the
    central adenine, which is fixed to ``A`` in every sequence. Returns
    ``(sequences, labels)``.
    """
    rng = stream(seed, "genome")
    letters = np.array(list(NUCLEOTIDES))
    labels = np.zeros(n, dtype=np.int64)
    labels[: n // 2] = 1
    labels = rng.permutation(labels)
    seqs = []
    for lab in labels:
        s = letters[rng.integers(0, 4, SEQ_LEN)]
        s[SEQ_LEN // 2] = "A"
        if lab:
            start = SEQ_LEN // 2 + 1 + int(rng.integers(0, 4))
            s[start:start + len(MOTIF)] = list(MOTIF)
        seqs.append("".join(s))
    return seqs, labels


def genome_dataset(n, seed=0):
    seqs, labels = gen_genome_sequences(n, seed)
    return Dataset(np.stack([one_hot_sequence(s) for s in seqs]), labels, 2,
                   {"name": "genome_synthetic", "source": f"synthetic seed={seed}"})


def write_genome_text(path, seqs, labels):
    with open(path, "w", encoding="utf-8") as fh:
        for s, y in zip(seqs, labels):
            fh.write(f"{s}\t{int(y)}\n")


# augmentation --------------------------------------------------------------------------

def augment_image(x, pad, hflip_prob, rng):
    """Reflect-pad by ``pad``, random-crop back to the original size, random horizontal flip."""
    if pad < 0:
        raise ParameterError(f"pad must be >= 0, got {pad}")
    c, h, w = x.shape
    out = x
    if pad:
        padded = np.pad(x, ((0, 0), (pad, pad), (pad, pad)), mode="reflect")
        i, j = rng.integers(0, 2 * pad + 1, size=2)
        out = padded[:, i:i + h, j:j + w]
    if hflip_prob > 0 and rng.random() < hflip_prob:
        out = out[:, :, ::-1]
    return np.ascontiguousarray(out)
