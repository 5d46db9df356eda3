"""Acceptance criteria AC-1 .. AC-10.

Each test records one verdict line (see the ``acceptance`` fixture) before
asserting, so a run prints a pass/fail line per criterion even when some fail.
"""

import os
import time

import numpy as np
import pytest

from filmens import tensor as T
from filmens.config import default_config
from filmens.data import genome_dataset
from filmens.errors import TrainingDivergence
from filmens.experiment import Cell, build_data, run_cell
from filmens.film import BatchNormState, FiLMParams, batch_normalize, film_apply, film_batchnorm_forward
from filmens.metrics import auroc, brier, disagreement, ece, pairwise_kl, sce, uncertainty_score
from filmens.models import ModelConfig, build_model, count_parameters, count_trainable
from filmens.optim import OptimizerConfig
from filmens.training import PredictionSet, TrainConfig, compute_loss, evaluate, load_checkpoint, save_checkpoint, train

from gradcheck import check_gradients
from oracles import (brute_auroc, brute_brier, brute_disagreement, brute_ece, brute_pairwise_kl, brute_sce,
                     randomize_running_stats, sequential_member_logits)

SEEDS = (1, 2, 3)


# AC-1 gradient correctness ----------------------------------------------------------------

def _away_from_zero(r, shape, margin=0.1):
    x = r.standard_normal(shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-300) * margin + x, x)


def _distinct(r, shape):
    # max-pool needs a unique maximum per window for the derivative to exist
    return r.permutation(int(np.prod(shape))).reshape(shape) * 0.1 + r.uniform(0, 0.01, shape)


def _bn_train(x):
    return batch_normalize(x, BatchNormState.fresh(x.shape[1], np.float64), "train")


def _bn_eval(x):
    st = BatchNormState(np.linspace(-0.5, 0.5, x.shape[1]), np.linspace(0.5, 2.0, x.shape[1]))
    return batch_normalize(x, st, "eval")


def _dropout(x):
    return T.dropout(x, 0.4, "train", np.random.default_rng(11))


# name -> (fn, instance builder(rng) -> list of arrays)
GRAD_CASES = {
    "add": (T.add, lambda r: [r.standard_normal((3, 4)), r.standard_normal((4,))]),
    "sub": (T.sub, lambda r: [r.standard_normal((3, 4)), r.standard_normal((3, 1))]),
    "mul": (T.mul, lambda r: [r.standard_normal((3, 4)), r.standard_normal((3, 4))]),
    "neg": (T.neg, lambda r: [r.standard_normal((2, 5))]),
    "exp": (T.exp, lambda r: [r.standard_normal((3, 3))]),
    "log": (T.log, lambda r: [r.uniform(0.5, 3.0, (3, 3))]),
    "relu": (T.relu, lambda r: [_away_from_zero(r, (4, 5))]),
    "sum": (lambda x: T.sum_(x, axis=1), lambda r: [r.standard_normal((3, 4, 2))]),
    "mean": (lambda x: T.mean(x, axis=(0, 2)), lambda r: [r.standard_normal((3, 4, 2))]),
    "reshape": (lambda x: T.reshape(x, (6, 2)), lambda r: [r.standard_normal((3, 4))]),
    "repeat_rows": (lambda x: T.repeat_rows(x, 3), lambda r: [r.standard_normal((2, 3))]),
    "slice_rows": (lambda x: T.slice_rows(x, 1, 3), lambda r: [r.standard_normal((4, 3))]),
    "matmul": (T.matmul, lambda r: [r.standard_normal((3, 4)), r.standard_normal((4, 2))]),
    "linear": (T.linear, lambda r: [r.standard_normal((3, 4)), r.standard_normal((4, 2)), r.standard_normal(2)]),
    "log_softmax": (T.log_softmax, lambda r: [r.standard_normal((3, 5)) * 2]),
    "cross_entropy": (lambda x: T.cross_entropy(x, np.array([0, 2, 1, 2])), lambda r: [r.standard_normal((4, 3))]),
    "dropout": (_dropout, lambda r: [r.standard_normal((4, 6))]),
    "conv2d": (lambda x, w, b: T.conv2d(x, w, b, stride=2, padding=1),
               lambda r: [r.standard_normal((2, 2, 5, 5)), r.standard_normal((3, 2, 3, 3)), r.standard_normal(3)]),
    "conv1d": (lambda x, w: T.conv1d(x, w, padding=2),
               lambda r: [r.standard_normal((2, 3, 7)), r.standard_normal((2, 3, 4))]),
    "max_pool2d": (T.max_pool2d, lambda r: [_distinct(r, (2, 2, 5, 4))]),
    "film_apply": (lambda x, g, b: film_apply(x, FiLMParams(g, b)),
                   lambda r: [r.standard_normal((6, 3, 2)), r.standard_normal((2, 3)), r.standard_normal((2, 3))]),
    "batchnorm_train": (_bn_train, lambda r: [r.standard_normal((6, 3, 2))]),
    "batchnorm_eval": (_bn_eval, lambda r: [r.standard_normal((4, 3))]),
    "film_batchnorm": (lambda x, g, b: film_batchnorm_forward(x, FiLMParams(g, b), BatchNormState.fresh(3, np.float64)),
                       lambda r: [r.standard_normal((8, 3)), r.standard_normal((2, 3)), r.standard_normal((2, 3))]),
    "compute_loss": (lambda a, b: compute_loss([a, b], np.array([1, 0, 2])),
                     lambda r: [r.standard_normal((3, 3)), r.standard_normal((3, 3))]),
}
N_INSTANCES = 10


def test_ac1_gradient_correctness(acceptance):
    start = time.perf_counter()
    worst = {}
    for name, (fn, make) in GRAD_CASES.items():
        r = np.random.default_rng(sum(map(ord, name)))
        worst[name] = max(check_gradients(fn, make(r), proj_seed=i) for i in range(N_INSTANCES))
    elapsed = time.perf_counter() - start
    bad = {k: v for k, v in worst.items() if not v < 1e-4}
    top = max(worst, key=worst.get)
    ok = not bad and elapsed < 120
    acceptance("AC-1", ok, f"{len(worst)} ops x {N_INSTANCES} instances, max rel err {worst[top]:.2e} ({top}), "
                           f"{elapsed:.1f}s (need < 1e-4, < 120s)")
    assert not bad, bad
    assert elapsed < 120


# AC-2 parallel vs sequential ----------------------------------------------------------------

BUILDERS = {"mlp": ((2,), 4), "conv2d_small": ((3, 32, 32), 10), "conv1d_genome": ((4, 41), 2)}


def test_ac2_parallel_matches_sequential(acceptance):
    worst = {}
    for kind, (shape, K) in BUILDERS.items():
        for M in (2, 4, 8):
            model = build_model(ModelConfig(kind, shape, K, M=M), seed=M)
            randomize_running_stats(model, np.random.default_rng(M))
            x = np.random.default_rng(100 + M).standard_normal((20,) + shape).astype(np.float32)
            with T.no_grad():
                par = model(x, "eval")
            err = max(float(np.abs(par[m].data - sequential_member_logits(model, x, m)).max()) for m in range(M))
            worst[(kind, M)] = err
    top = max(worst, key=worst.get)
    ok = all(v <= 1e-6 for v in worst.values())
    acceptance("AC-2", ok, f"max |parallel - sequential| {worst[top]:.2e} at {top[0]} M={top[1]} (need <= 1e-6)")
    assert ok, worst


# shared runs for AC-3 .. AC-5 ---------------------------------------------------------------

@pytest.fixture(scope="module")
def blob_runs():
    """Cached ResultRows on overlap blobs (K=4, 2000 train / 1000 test, 40 epochs)."""
    cfg = default_config(experiment="overlap", dataset__kind="overlap_blobs", dataset__K=4, dataset__n_per_class=750,
                         train__epochs=40)
    cache = {}

    def get(M, rho, seed):
        key = (M, rho, seed)
        if key not in cache:
            cache[key] = run_cell(cfg, Cell(seed=seed, M=M, rho=rho))[0]
        return cache[key]

    return get


def _mean(values):
    return float(np.mean(values))


@pytest.mark.slow
def test_ac3_gain_diversity_trend(acceptance, blob_runs):
    start = time.perf_counter()
    gains = (0.01, 1.0, 4.0)
    D = {g: _mean([blob_runs(4, g, s).disagreement for s in SEEDS]) for g in gains}
    elapsed = time.perf_counter() - start
    increasing = D[0.01] < D[1.0] < D[4.0]
    collapsed = D[0.01] < 0.01
    ok = increasing and collapsed and elapsed < 15 * 60
    acceptance("AC-3", ok, "mean D at rho 0.01/1/4 = " + "/".join(f"{D[g]:.4f}" for g in gains)
               + f"; strictly increasing={increasing}, D(0.01)<0.01={collapsed}, {elapsed:.0f}s")
    assert increasing and collapsed and elapsed < 15 * 60


@pytest.mark.slow
def test_ac4_member_count_diversity_trend(acceptance, blob_runs):
    start = time.perf_counter()
    members = (2, 4, 8)
    D = [_mean([blob_runs(M, 2.0, s).disagreement for s in SEEDS]) for M in members]
    KL = [_mean([blob_runs(M, 2.0, s).mean_kl for s in SEEDS]) for M in members]
    elapsed = time.perf_counter() - start
    d_ok = all(a <= b for a, b in zip(D, D[1:]))
    kl_ok = all(a <= b for a, b in zip(KL, KL[1:]))
    ok = d_ok and kl_ok and elapsed < 20 * 60
    acceptance("AC-4", ok, "M=2/4/8 mean D " + "/".join(f"{v:.4f}" for v in D)
               + ", mean KL " + "/".join(f"{v:.5f}" for v in KL) + f", {elapsed:.0f}s (need non-decreasing)")
    assert ok


@pytest.mark.slow
def test_ac5_ensemble_benefit(acceptance, blob_runs):
    single = [blob_runs(1, 2.0, s) for s in SEEDS]
    ens = [blob_runs(4, 2.0, s) for s in SEEDS]
    ece1, ece4 = _mean([r.ece for r in single]), _mean([r.ece for r in ens])
    acc1, acc4 = _mean([r.accuracy for r in single]), _mean([r.accuracy for r in ens])
    ok = ece4 <= ece1 and acc4 >= acc1 - 0.005
    acceptance("AC-5", ok, f"ECE M=4 {ece4:.4f} vs M=1 {ece1:.4f}; accuracy M=4 {acc4:.4f} vs M=1 {acc1:.4f} "
                           "(need ECE <=, accuracy >= single - 0.5pp)")
    assert ok


# AC-6 metric oracles -------------------------------------------------------------------------

def _random_set(r):
    M, K = int(r.integers(2, 6)), int(r.integers(2, 7))
    s = int(r.integers(20, 51))
    members = r.dirichlet(np.full(K, 0.6), size=(M, s))
    return PredictionSet(members, members.mean(axis=0), r.integers(0, K, s))


def _fixture_checks():
    def ps(m, t):
        m = np.asarray(m, dtype=float)
        m = m[None] if m.ndim == 2 else m
        return PredictionSet(m, m.mean(axis=0), np.asarray(t))

    checks = [
        ece(ps(np.eye(3)[[0, 1, 2]], [0, 1, 2])) == 0.0,
        abs(ece(ps(np.tile([0.8, 0.2], (10, 1)), [0] * 6 + [1] * 4)) - 0.2) < 1e-12,
        sce(ps(np.eye(2)[[0, 1]], [0, 1])) == 0.0,
        brier(ps(np.eye(3)[[2, 0]], [2, 0])) == 0.0,
        abs(brier(ps([[0.5, 0.5]], [0])) - 0.5) < 1e-12,
        disagreement(ps([np.eye(2)[[0, 0, 1, 1]], np.eye(2)[[0, 0, 1, 0]]], [0] * 4)) == 0.25,
        abs(pairwise_kl(ps([[[0.5, 0.5]], [[0.25, 0.75]]], [0])) - (0.5 * np.log(2) + 0.5 * np.log(2 / 3))) < 1e-12,
        auroc([0.1, 0.2], [0.5, 0.9]) == 1.0,
        auroc([0.3, 0.5, 0.5], [0.5, 0.3, 0.5]) == 0.5,
    ]
    return all(checks)


def test_ac6_metric_oracles(acceptance):
    r = np.random.default_rng(6)
    worst = {k: 0.0 for k in ("ece", "sce", "brier", "disagreement", "pairwise_kl", "auroc")}
    for _ in range(100):
        p = _random_set(r)
        conf = p.ensemble_probs.max(axis=1)
        correct = p.ensemble_probs.argmax(axis=1) == p.targets
        scores = uncertainty_score(p)
        cut = len(scores) // 2
        pairs = {
            "ece": (ece(p), brute_ece(conf, correct, 15)),
            "sce": (sce(p), brute_sce(p.ensemble_probs, p.targets, 15)),
            "brier": (brier(p), brute_brier(p.ensemble_probs, p.targets)),
            "disagreement": (disagreement(p), brute_disagreement(p.member_probs)),
            "pairwise_kl": (pairwise_kl(p), brute_pairwise_kl(p.member_probs)),
            "auroc": (auroc(scores[:cut], scores[cut:]), brute_auroc(scores[:cut], scores[cut:])),
        }
        # tie-heavy integer scores exercise the half-credit rule
        ti, to = r.integers(0, 4, 25).astype(float), r.integers(1, 5, 30).astype(float)
        tied = abs(auroc(ti, to) - brute_auroc(ti, to))
        for k, (a, b) in pairs.items():
            worst[k] = max(worst[k], abs(a - b))
        worst["auroc"] = max(worst["auroc"], tied)
    fixtures = _fixture_checks()
    ok = all(v <= 1e-12 for v in worst.values()) and fixtures
    top = max(worst, key=worst.get)
    acceptance("AC-6", ok, f"100 random sets, max |metric - oracle| {worst[top]:.1e} ({top}); hand fixtures ok={fixtures}")
    assert ok, worst


# AC-7 parameter accounting ----------------------------------------------------------------------

def test_ac7_parameter_accounting(acceptance):
    exact = True
    for kind, (shape, K) in BUILDERS.items():
        base = count_trainable(build_model(ModelConfig(kind, shape, K, M=1)))
        for M in (1, 2, 16):
            model = build_model(ModelConfig(kind, shape, K, M=M))
            dims = sum(l.D for l in model.film_layers())
            measured = count_trainable(model) - base
            exact &= measured == (M - 1) * 2 * dims == count_parameters(model).extra_vs_single
    ratio = count_parameters(build_model(ModelConfig("conv2d_small", (3, 32, 32), 10, M=16))).overhead_ratio
    ok = exact and ratio < 0.05
    acceptance("AC-7", ok, f"extra params exact for all builders and M in {{1,2,16}}: {exact}; "
                           f"conv2d_small M=16 overhead_ratio {ratio:.4f} (need < 0.05)")
    assert exact
    assert ratio < 0.05


# AC-8 OOD protocol -----------------------------------------------------------------------------

@pytest.mark.slow
def test_ac8_ood_protocol(acceptance):
    far = default_config(experiment="ood", dataset__kind="ood_pair", dataset__shift=6.0, model__M=8)
    null = default_config(experiment="ood0", dataset__kind="ood_pair", dataset__shift=0.0, model__M=8)
    a8 = _mean([run_cell(far, Cell(seed=s, M=8))[0].auroc for s in SEEDS])
    a1 = _mean([run_cell(far, Cell(seed=s, M=1))[0].auroc for s in SEEDS])
    a0 = _mean([run_cell(null, Cell(seed=s, M=8))[0].auroc for s in SEEDS])
    thresh, beats, control = a8 >= 0.70, a8 > a1, abs(a0 - 0.5) <= 0.05
    ok = thresh and beats and control
    acceptance("AC-8", ok, f"far-shift AUROC M=8 {a8:.4f} (need >= 0.70: {thresh}), M=1 {a1:.4f} (M=8 > M=1: {beats}); "
                           f"zero-shift {a0:.4f} (within 0.5 +/- 0.05: {control})")
    assert beats and control
    assert thresh


# AC-9 determinism and persistence ---------------------------------------------------------------

def test_ac9_determinism_and_persistence(acceptance, tmp_path):
    cfg = default_config(experiment="det", dataset__kind="overlap_blobs", train__epochs=10)
    row_a, model_a = run_cell(cfg, Cell(seed=5))
    row_b, model_b = run_cell(cfg, Cell(seed=5))
    params = all(p.data.tobytes() == q.data.tobytes() for p, q in zip(model_a.parameters(), model_b.parameters()))
    numerics = row_a.to_csv()[:-1] == row_b.to_csv()[:-1]  # last column is wall time

    test = build_data(cfg, 5).test
    before = evaluate(model_a, test)
    save_checkpoint(model_a, tmp_path / "a.ckpt")
    after = evaluate(load_checkpoint(tmp_path / "a.ckpt"), test)
    persisted = before.member_probs.tobytes() == after.member_probs.tobytes() and \
        before.ensemble_probs.tobytes() == after.ensemble_probs.tobytes()
    ok = params and numerics and persisted
    acceptance("AC-9", ok, f"bitwise params {params}, identical CSV numerics {numerics}, "
                           f"checkpoint round trip bitwise {persisted}")
    assert ok


# AC-10 desk smoke runs -------------------------------------------------------------------------

@pytest.mark.slow
def test_ac10_cifar_smoke(acceptance):
    root = os.environ.get("FILMENS_CIFAR_DIR")
    if not root or not os.path.isdir(root):
        acceptance("AC-10 (CIFAR-10)", None, "set FILMENS_CIFAR_DIR to the cifar-10-batches-bin directory")
        pytest.skip("CIFAR-10 binaries not available (FILMENS_CIFAR_DIR)")
    cfg = default_config(experiment="cifar", dataset__kind="cifar10", dataset__path=root, dataset__subset_size=4000,
                         model__kind="conv2d_small", model__M=4, model__rho=2.0, train__epochs=20,
                         train__batch_size=128, train__pad_crop=4, train__hflip=True)
    start = time.perf_counter()
    row, _ = run_cell(cfg, Cell(seed=1))
    elapsed = time.perf_counter() - start
    ok = row.accuracy >= 0.55 and elapsed < 45 * 60
    acceptance("AC-10 (CIFAR-10)", ok, f"test accuracy {row.accuracy:.4f} (need >= 0.55), {elapsed / 60:.1f} min (need < 45)")
    assert ok


@pytest.mark.slow
def test_ac10_genome_smoke(acceptance):
    ds = genome_dataset(5000, seed=1)
    model = build_model(ModelConfig("conv1d_genome", ds.sample_shape, 2, M=2, rho=4.0), seed=1)
    cfg = TrainConfig(OptimizerConfig(epochs=10, lr0=0.01, batch_size=128), seed=1)
    start = time.perf_counter()
    try:
        model, hist = train(model, ds, cfg)
        diverged = False
    except TrainingDivergence:
        diverged, hist = True, None
    elapsed = time.perf_counter() - start
    finite = hist is not None and all(np.isfinite(r.train_loss) for r in hist.records)
    ok = not diverged and finite and elapsed < 10 * 60
    losses = "" if hist is None else f", loss {hist.records[0].train_loss:.4f} -> {hist.records[-1].train_loss:.4f}"
    acceptance("AC-10 (genome)", ok, f"5000 sequences, 10 epochs, diverged={diverged}{losses}, "
                                     f"{elapsed / 60:.1f} min (need < 10)")
    assert ok
