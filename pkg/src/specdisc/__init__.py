"""Multi-scale time-frequency spectrogram discriminator with LS-GAN training, in numpy."""

from .data import CorpusConfig, SynthSample, batch_iter, corpus, render_sample
from .discriminators import (
    ConfigError,
    Discriminator,
    DiscriminatorConfig,
    DiscriminatorOutput,
    build,
)
from .generator import Generator, GeneratorConfig, build_generator, tts_loss
from .optim import RAdam, Lookahead, make_optimizer
from .tensor import Tensor, backward, no_grad
from .trainer import LossReport, NumericalAbort, TrainConfig, lr_at, train, train_step

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "CorpusConfig",
    "Discriminator",
    "DiscriminatorConfig",
    "DiscriminatorOutput",
    "Generator",
    "GeneratorConfig",
    "Lookahead",
    "LossReport",
    "NumericalAbort",
    "RAdam",
    "SynthSample",
    "Tensor",
    "TrainConfig",
    "backward",
    "batch_iter",
    "build",
    "build_generator",
    "corpus",
    "lr_at",
    "make_optimizer",
    "no_grad",
    "render_sample",
    "train",
    "train_step",
    "tts_loss",
]
