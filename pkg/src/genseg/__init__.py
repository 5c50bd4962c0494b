"""Generative temporal segmentation: reduced Fisher vectors feeding
grammar-constrained HMM decoding."""

from .decoder import ClassificationResult, classify_activity, decode
from .errors import DataError, GensegError, InvalidInputError, NoPathError, OOVError
from .evaluation import (
    ConfusionMatrix,
    activity_accuracy,
    class_mean_accuracy,
    confusion_matrix,
    frame_accuracy,
    midpoint_hit_accuracy,
)
from .fisher import FisherVector, encode_fv, l2_normalize, power_normalize, sliding_window_encode
from .gmm import DiagonalGmm, fit_gmm, log_likelihood, posteriors, sample_gmm
from .grammar import BigramModel, PathGrammar, build_bigram, build_path_grammar, sequence_log_prior
from .hmm import UnitHmm, baum_welch, init_hmm, viterbi_align
from .normality import NormalityReport, dimension_pass_report, jarque_bera, lilliefors
from .pca import PcaModel, clip_l2_per_dimension, fit_pca, project
from .sequences import FrameSequence, Segmentation, Span
from .training import DatasetSpec, LabeledSegment, UnitSpec, balance_classes, generate_dataset

__version__ = "0.1.0"
