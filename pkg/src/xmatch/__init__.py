"""Cross-modal ID-document vs selfie verification toolkit."""
from ._accel import BACKEND
from .core import (CardFormat, Gender, ImageRecord, Modality, PairedDataset, SubsetLabel,
                   cosine_similarity, cross_modal_scores, l2_normalize, load_dataset,
                   squared_distance, write_dataset)
from .errors import (ConfigError, DataError, DimensionError, EmptyInputError,
                     InsufficientDataError, NormalizationError, ParseError, RangeError,
                     UsageError, XMatchError)
from .metrics import EvalResult, ScoreSet, d_prime, roc_points, tar_at_far, threshold_at_far
from .mining import Triplet, mine_semi_hard, sample_batch, triplet_loss
from .synth import SynthConfig, generate, subset_label
from .trainer import (EmbeddingHead, TrainConfig, TrainHistory, init_head, load_checkpoint,
                      loss_and_gradient, save_checkpoint, sgd_momentum_step, train)
from .valbuilder import ValidationSet, build_hard_validation, split_subjects, validation_tar

__version__ = "0.1.0"
