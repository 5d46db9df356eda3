"""Accuracy, calibration, ensemble diversity and OOD metrics.

All functions accept a :class:`~filmens.training.PredictionSet` (anything with
``member_probs`` (M, s, K), ``ensemble_probs`` (s, K) and ``targets`` (s,)).
Argmax ties resolve to the lowest class index, which is what ``np.argmax``
does.
"""

from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import ContractError

KL_FLOOR = 1e-12


@dataclass
class BinningConfig:
    n_bins: int = 15

    def __post_init__(self):
        if self.n_bins < 1:
            raise ValueError(f"n_bins must be >= 1, got {self.n_bins}")


def _n_bins(bins):
    if bins is None:
        return BinningConfig().n_bins
    return bins.n_bins if isinstance(bins, BinningConfig) else int(bins)


def bin_index(values, n_bins):
    """Bin ``b`` covers ``(b/n, (b+1)/n]``; a value of exactly 0 goes to bin 0."""
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    return np.clip(np.searchsorted(edges, values, side="left") - 1, 0, n_bins - 1)


def accuracy(preds):
    return float(np.mean(preds.ensemble_probs.argmax(axis=1) == preds.targets))


def _calibration_gap(conf, hit, n_bins):
    idx = bin_index(conf, n_bins)
    count = np.bincount(idx, minlength=n_bins)
    conf_sum = np.bincount(idx, weights=conf, minlength=n_bins)
    hit_sum = np.bincount(idx, weights=hit.astype(float), minlength=n_bins)
    return float(np.abs(hit_sum - conf_sum).sum() / len(conf))


def ece(preds, bins=None):
    """Top-label expected calibration error with equal-width confidence bins."""
    p = preds.ensemble_probs
    conf = p.max(axis=1)
    hit = p.argmax(axis=1) == preds.targets
    return _calibration_gap(conf, hit, _n_bins(bins))


def sce(preds, bins=None):
    """Static calibration error: the binned calibration gap of every class, averaged over classes."""
    p = preds.ensemble_probs
    n_bins = _n_bins(bins)
    K = p.shape[1]
    return float(sum(_calibration_gap(p[:, k], preds.targets == k, n_bins) for k in range(K)) / K)


def brier(preds):
    p = preds.ensemble_probs
    onehot = np.eye(p.shape[1])[preds.targets]
    return float(((p - onehot) ** 2).sum(axis=1).mean())


def _require_members(preds):
    M = preds.member_probs.shape[0]
    if M < 2:
        raise ContractError(f"diversity metrics need at least 2 members, got {M}")
    return M


def disagreement(preds):
    """Fraction of samples on which two members predict different labels, averaged over pairs."""
    M = _require_members(preds)
    labels = preds.member_probs.argmax(axis=2)
    iu, ju = np.triu_indices(M, k=1)
    return float((labels[iu] != labels[ju]).mean())


def pairwise_kl(preds):
    """KL(p_i || p_j) over classes, averaged over samples and over pairs i < j (nats)."""
    M = _require_members(preds)
    logp = np.log(np.maximum(preds.member_probs, KL_FLOOR))
    p = preds.member_probs
    iu, ju = np.triu_indices(M, k=1)
    kl = (p[iu] * (logp[iu] - logp[ju])).sum(axis=2)
    return float(kl.mean())


def uncertainty_score(preds):
    """Per-sample predictive entropy of the ensemble-averaged probabilities (nats)."""
    p = preds.ensemble_probs
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(p), 0.0)
    return -terms.sum(axis=1)


def auroc(scores_in, scores_out):
    """Probability that an OOD sample scores higher than an in-distribution one; ties count 1/2."""
    scores_in = np.asarray(scores_in, dtype=float).ravel()
    scores_out = np.asarray(scores_out, dtype=float).ravel()
    if scores_in.size == 0 or scores_out.size == 0:
        raise ContractError("auroc needs non-empty in-distribution and OOD score lists")
    ranks = rankdata(np.concatenate([scores_out, scores_in]))
    n_out, n_in = scores_out.size, scores_in.size
    u = ranks[:n_out].sum() - n_out * (n_out + 1) / 2
    return float(u / (n_out * n_in))


@dataclass
class MetricsReport:
    accuracy: float
    ece: float
    sce: float
    brier: float
    disagreement: float = None
    mean_pairwise_kl: float = None
    auroc: float = None
    n_bins: int = 15

    def to_record(self):
        """Flat ``key=value`` text, one pair per line; absent fields are omitted."""
        return "\n".join(f"{k}={v}" for k, v in asdict(self).items() if v is not None)


def compute_report(preds, bins=None, ood_auroc=None):
    n_bins = _n_bins(bins)
    diverse = preds.member_probs.shape[0] >= 2
    return MetricsReport(
        accuracy=accuracy(preds),
        ece=ece(preds, n_bins),
        sce=sce(preds, n_bins),
        brier=brier(preds),
        disagreement=disagreement(preds) if diverse else None,
        mean_pairwise_kl=pairwise_kl(preds) if diverse else None,
        auroc=ood_auroc,
        n_bins=n_bins,
    )
