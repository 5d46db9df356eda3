"""Implicit deep ensembles from per-member FiLM parameters on batch-norm layers."""

from .data import Dataset, OodPair, gen_blobs, gen_overlap_blobs, make_ood_pair, train_test_split
from .film import FiLMParams, ensemble_average, film_apply, init_film, replicate_batch, split_members
from .metrics import MetricsReport, compute_report
from .models import ModelConfig, build_deep_ensemble, build_model, count_parameters
from .optim import OptimizerConfig
from .tensor import Tensor, backward, default_dtype, no_grad
from .training import PredictionSet, TrainConfig, evaluate, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"
