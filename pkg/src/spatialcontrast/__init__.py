"""Spatial-contrasting unsupervised pretraining for convolutional networks, in numpy."""

from .errors import ConfigError, DigestError, DimensionError, FormatError, NumericError, SCError, StateError
from .losses import margin_triplet_loss, ratio_triplet_loss, sc_batch_loss, sc_pair_loss, sc_pair_loss_symmetric
from .models import ModelSpec, build_model, forward_full, forward_head, forward_trunk
from .rng import make_rng
from .sampler import SampleConfig, build_distance_matrix
from .tensor import Tensor, no_grad
from .trainer import TrainConfig, evaluate, finetune, pretrain

__version__ = "0.1.0"
