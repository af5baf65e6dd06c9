"""Teacher-student trainer for conditional spectrogram variance models.

Pretrains a class-conditioned variational model, distills it into a unified
encoder-classifier student, and exports CAVW weight containers for the
separation engine.
"""

from .corpus import gen_training_corpus, load_corpus
from .export import export_weights
from .gumbel import gumbel_softmax_sample
from .losses import LossReport, TrainConfig, student_losses, teacher_elbo
from .train import train_student, train_teacher

__all__ = [
    "LossReport",
    "TrainConfig",
    "export_weights",
    "gen_training_corpus",
    "gumbel_softmax_sample",
    "load_corpus",
    "student_losses",
    "teacher_elbo",
    "train_student",
    "train_teacher",
]

__version__ = "0.1.0"
