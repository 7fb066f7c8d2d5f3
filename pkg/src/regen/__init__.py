"""Streaming speech regeneration: decompose speech into content, prosody and
identity features, re-synthesize 24 kHz audio with a conditional
convolutional generator, train it with the multi-resolution spectral /
energy-distance / least-squares adversarial objective, and run the whole
chain causally in chunks with an audited latency budget.
"""

from .audio_io import FRAME_RATE, INPUT_RATE, OUTPUT_RATE, Waveform, read_wav, resample, write_wav
from .autodiff import Tensor, grad_check
from .discriminator import Discriminator, DiscriminatorConfig
from .features import ConditioningTrack, FeatureEncoder, assemble_conditioning
from .generator import Generator, GeneratorConfig, receptive_field
from .losses import (LossReport, generator_objective, lsgan_losses, sed_loss,
                     spec_loss_multi, spec_loss_single)
from .metrics import GaussianSummary, conditional_fdsd, frechet_distance, summarize_activations
from .pitch import PitchTrack, extract_pitch
from .trainer import ClipPair, TrainConfig, TrainState

__version__ = "0.1.0"

__all__ = [
    "FRAME_RATE", "INPUT_RATE", "OUTPUT_RATE", "Waveform", "read_wav", "resample",
    "write_wav", "Tensor", "grad_check", "Discriminator", "DiscriminatorConfig",
    "ConditioningTrack", "FeatureEncoder", "assemble_conditioning", "Generator",
    "GeneratorConfig", "receptive_field", "LossReport", "generator_objective",
    "lsgan_losses", "sed_loss", "spec_loss_multi", "spec_loss_single",
    "GaussianSummary", "conditional_fdsd", "frechet_distance",
    "summarize_activations", "PitchTrack", "extract_pitch", "ClipPair",
    "TrainConfig", "TrainState",
]
