"""Capsule-network Siamese embeddings for ground-to-aerial image retrieval.

A from-scratch numpy engine: reverse-mode autodiff (:mod:`geocaps.tensor`),
the ResNetX backbone, PrimaryCaps/GeoCaps layers with dynamic routing, the
two-branch model, triplet losses with in-batch hard mining, training and
recall evaluation.
"""

from .backbone import BackboneConfig, build_resnetx
from .capsules import CapsuleConfig, dynamic_routing, predict_vectors
from .config import RunConfig, desk_model_config, full_model_config, load_run_config
from .data import PairDataset, SyntheticSpec, generate_synthetic_pairs, load_image_directory
from .model import GeoCapsNet, ModelConfig, build_model
from .objective import LossConfig, margin_trihard_loss, soft_trihard_loss, soft_triplet_loss
from .retrieval import RecallReport, recall_curve
from .tensor import Tensor, backward, l2_normalize, squash
from .train import Adam, TrainConfig, fit, train_epoch

__version__ = "0.1.0"
