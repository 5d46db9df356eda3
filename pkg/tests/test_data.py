import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from filmens.data import (NUCLEOTIDES, SEQ_LEN, Dataset, augment_image, decode_sequence, gen_blobs,
                          gen_genome_sequences, gen_overlap_blobs, genome_dataset, load_cifar10_binary,
                          load_genome_text, make_ood_pair, one_hot_sequence, read_cifar10_file, shift_vector,
                          stratified_subset, train_test_split, write_cifar10_file, write_genome_text)
from filmens.errors import FormatError, ParameterError, ParseError, SplitError


# synthetic blobs ---------------------------------------------------------------------

def test_zero_spread_samples_sit_on_means():
    ds = gen_blobs(4, 10, dim=3, spread=0.0, seed=0)
    angles = 2 * np.pi * ds.targets / 4
    np.testing.assert_allclose(ds.inputs[:, 0], 3 * np.cos(angles), atol=1e-6)
    np.testing.assert_allclose(ds.inputs[:, 1], 3 * np.sin(angles), atol=1e-6)
    assert not ds.inputs[:, 2].any()
    # nearest-mean classification is perfect
    means = np.stack([3 * np.cos(2 * np.pi * np.arange(4) / 4), 3 * np.sin(2 * np.pi * np.arange(4) / 4)], 1)
    pred = np.argmin(((ds.inputs[:, None, :2] - means[None]) ** 2).sum(-1), axis=1)
    assert (pred == ds.targets).all()


def test_blob_counts():
    ds = gen_blobs(3, 100)
    assert len(ds) == 300 and np.bincount(ds.targets).tolist() == [100, 100, 100]


def test_blobs_seeded():
    a, b = gen_blobs(3, 20, seed=4), gen_blobs(3, 20, seed=4)
    assert a.inputs.tobytes() == b.inputs.tobytes() and (a.targets == b.targets).all()
    assert a.inputs.tobytes() != gen_blobs(3, 20, seed=5).inputs.tobytes()


def test_overlap_blobs_bayes_error_positive():
    ds = gen_overlap_blobs(4, 500, seed=0)
    centres = np.stack([3 * np.cos(2 * np.pi * np.arange(4) / 4), 3 * np.sin(2 * np.pi * np.arange(4) / 4)], 1)
    # equal isotropic covariances: nearest mean is the Bayes rule
    pred = np.argmin(((ds.inputs[:, None, :2] - centres[None]) ** 2).sum(-1), axis=1)
    assert 0.6 < (pred == ds.targets).mean() < 0.99


def test_overlap_small_spread_recovers_blobs():
    a = gen_overlap_blobs(3, 10, spread=1e-9, seed=1)
    b = gen_blobs(3, 10, spread=0.0, seed=1)
    np.testing.assert_allclose(a.inputs, b.inputs, atol=1e-6)


def test_blob_validation():
    with pytest.raises(ParameterError):
        gen_blobs(1, 10)
    with pytest.raises(ParameterError):
        gen_blobs(3, 10, dim=1)


# OOD pairs -----------------------------------------------------------------------------

def test_ood_pair_shapes_and_shift():
    pair = make_ood_pair(0)
    assert pair.in_distribution.sample_shape == pair.out_of_distribution.sample_shape == (8,)
    assert np.linalg.norm(shift_vector(8, 6.0)) == pytest.approx(6.0)
    diff = pair.out_of_distribution.inputs.mean(0) - pair.in_distribution.inputs.mean(0)
    assert np.linalg.norm(diff) == pytest.approx(6.0, abs=0.4)


def test_ood_pair_zero_shift_same_distribution():
    pair = make_ood_pair(0, shift=0.0)
    a, b = pair.in_distribution.inputs, pair.out_of_distribution.inputs
    np.testing.assert_allclose(a.mean(0), b.mean(0), atol=0.25)
    np.testing.assert_allclose(a.std(0), b.std(0), rtol=0.1)


def test_ood_pair_seeded():
    a, b = make_ood_pair(3), make_ood_pair(3)
    assert a.out_of_distribution.inputs.tobytes() == b.out_of_distribution.inputs.tobytes()


# splitting ----------------------------------------------------------------------------

def test_split_counts():
    ds = gen_blobs(3, 100, seed=0)
    tr, te = train_test_split(ds, 0.3, seed=0)
    assert (len(tr), len(te)) == (210, 90)
    assert np.bincount(tr.targets).tolist() == [70] * 3 and np.bincount(te.targets).tolist() == [30] * 3


def test_split_disjoint_and_covering():
    ds = gen_blobs(3, 50, seed=2)
    tr, te = train_test_split(ds, 0.25, seed=1)
    rows = lambda d: {r.tobytes() for r in d.inputs}
    assert not rows(tr) & rows(te)
    assert rows(tr) | rows(te) == rows(ds)


def test_split_seeded():
    ds = gen_blobs(3, 50, seed=2)
    a, b = train_test_split(ds, 0.25, 7), train_test_split(ds, 0.25, 7)
    assert a[1].inputs.tobytes() == b[1].inputs.tobytes()


def test_split_errors():
    ds = Dataset(np.zeros((3, 2)), [0, 0, 1], 2)
    with pytest.raises(SplitError):
        train_test_split(ds, 0.5, 0)
    with pytest.raises(ParameterError):
        train_test_split(gen_blobs(2, 5), 1.0, 0)


def test_dataset_validation():
    with pytest.raises(ParameterError):
        Dataset(np.zeros((2, 2)), [0, 2], 2)
    with pytest.raises(ParameterError):
        Dataset(np.zeros((0, 2)), [], 2)


# CIFAR-10 binary -------------------------------------------------------------------------

def test_cifar_two_record_fixture(tmp_path):
    path = tmp_path / "data_batch_1.bin"
    rec0 = bytes([3]) + bytes(range(256)) * 12
    rec1 = bytes([9]) + bytes([7]) * 3072
    path.write_bytes(rec0 + rec1)
    x, y = read_cifar10_file(path)
    assert y.tolist() == [3, 9]
    assert x.shape == (2, 3, 32, 32)
    # first channel plane, row 0 holds bytes 0..31
    assert x[0, 0, 0].tolist() == list(range(32))
    assert x[0, 1, 0, 0] == (1024 % 256)
    assert (x[1] == 7).all()


def test_cifar_truncated(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(bytes(3072))
    with pytest.raises(FormatError):
        read_cifar10_file(path)


def test_cifar_bad_label_reports_record(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(bytes([1]) + bytes(3072) + bytes([12]) + bytes(3072))
    with pytest.raises(FormatError, match="record 1"):
        read_cifar10_file(path)


def write_fake_cifar(root, n_train=600, n_test=100, seed=0):
    r = np.random.default_rng(seed)
    for i in range(1, 3):
        labels = np.arange(n_train // 2) % 10
        write_cifar10_file(root / f"data_batch_{i}.bin", r.integers(0, 256, (n_train // 2, 3072), dtype=np.uint8),
                           labels)
    write_cifar10_file(root / "test_batch.bin", r.integers(0, 256, (n_test, 3072), dtype=np.uint8),
                       np.arange(n_test) % 10)


def test_cifar_round_trip(tmp_path):
    r = np.random.default_rng(1)
    images = r.integers(0, 256, (5, 3072), dtype=np.uint8)
    labels = np.array([0, 9, 4, 4, 1])
    write_cifar10_file(tmp_path / "x.bin", images, labels)
    x, y = read_cifar10_file(tmp_path / "x.bin")
    assert (y == labels).all() and (x.reshape(5, -1) == images).all()


def test_cifar_loader_subset_and_standardization(tmp_path):
    write_fake_cifar(tmp_path)
    train, test = load_cifar10_binary(tmp_path, subset_size=400, seed=0)
    assert len(train) == 400 and np.bincount(train.targets).tolist() == [40] * 10
    assert len(test) == 100
    np.testing.assert_allclose(train.inputs.mean(axis=(0, 2, 3)), 0, atol=1e-4)
    np.testing.assert_allclose(train.inputs.std(axis=(0, 2, 3)), 1, atol=1e-3)


def test_stratified_subset_exact():
    ds = Dataset(np.zeros((5000, 1)), np.arange(5000) % 10, 10)
    sub = stratified_subset(ds, 4000, seed=0)
    assert np.bincount(sub.targets).tolist() == [400] * 10


def test_cifar_missing_dir(tmp_path):
    with pytest.raises(FileNotFoundError, match=str(tmp_path)):
        load_cifar10_binary(tmp_path)


# genome ----------------------------------------------------------------------------------

def test_one_hot_all_a():
    x = one_hot_sequence("A" * 41)
    assert x.shape == (4, 41) and (x[0] == 1).all() and not x[1:].any()


def test_one_hot_columns_and_prefix():
    seq = "ACGT" + "G" * 37
    x = one_hot_sequence(seq)
    assert (x.sum(axis=0) == 1).all()
    np.testing.assert_array_equal(x[:, :4], np.eye(4))


@pytest.mark.parametrize("seq,pos", [("A" * 40, None), ("A" * 20 + "N" + "A" * 20, 20)])
def test_one_hot_errors(seq, pos):
    with pytest.raises(ParseError) as err:
        one_hot_sequence(seq)
    if pos is not None:
        assert f"position {pos}" in str(err.value)


@settings(max_examples=50, deadline=None)
@given(st.text(alphabet=NUCLEOTIDES, min_size=SEQ_LEN, max_size=SEQ_LEN))
def test_decode_inverts_encode(seq):
    assert decode_sequence(one_hot_sequence(seq)) == seq


def test_genome_text_round_trip(tmp_path):
    seqs, labels = gen_genome_sequences(20, seed=1)
    write_genome_text(tmp_path / "g.txt", seqs, labels)
    ds = load_genome_text(tmp_path / "g.txt")
    assert len(ds) == 20 and (ds.targets == labels).all()
    assert [decode_sequence(x) for x in ds.inputs] == seqs


def test_genome_text_bad_line(tmp_path):
    (tmp_path / "g.txt").write_text("A" * 41 + "\t1\n" + "A" * 41 + "\t2\n")
    with pytest.raises(ParseError, match=":2:"):
        load_genome_text(tmp_path / "g.txt")


def test_synthetic_genome_labels_follow_motif():
    seqs, labels = gen_genome_sequences(400, seed=0)
    has = np.array(["GAGG" in s[21:28] for s in seqs])
    assert (has[labels == 1]).all()
    assert abs(labels.mean() - 0.5) < 1e-9
    ds = genome_dataset(50, seed=3)
    assert ds.sample_shape == (4, 41) and ds.num_classes == 2


# augmentation -------------------------------------------------------------------------

def test_augment_identity():
    x = np.random.default_rng(0).standard_normal((3, 8, 8)).astype(np.float32)
    np.testing.assert_array_equal(augment_image(x, 0, 0.0, np.random.default_rng(1)), x)


def test_flip_twice_is_identity():
    x = np.random.default_rng(0).standard_normal((3, 8, 8))
    once = augment_image(x, 0, 1.0, np.random.default_rng(1))
    np.testing.assert_array_equal(once, x[:, :, ::-1])
    np.testing.assert_array_equal(augment_image(once, 0, 1.0, np.random.default_rng(2)), x)


@settings(max_examples=25, deadline=None)
@given(pad=st.integers(0, 4), p=st.floats(0, 1), seed=st.integers(0, 1000))
def test_augment_shape(pad, p, seed):
    x = np.zeros((3, 8, 6))
    assert augment_image(x, pad, p, np.random.default_rng(seed)).shape == (3, 8, 6)


def test_augment_negative_pad():
    with pytest.raises(ParameterError):
        augment_image(np.zeros((1, 4, 4)), -1, 0.0, np.random.default_rng(0))
