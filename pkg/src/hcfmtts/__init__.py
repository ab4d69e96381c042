"""Hierarchical-condition flow-matching text-to-speech on a numpy autodiff core."""

from .audio import MelConfig, MelSpectrogram, estimate_f0, f0_rmse, mcd, mel_spectrogram
from .config import ModelConfig, TrainConfig, load_config
from .corpus import generate_synthetic_corpus
from .flow import OdeConfig, cfm_loss, sample_ode
from .frontend import build_hierarchical_representation
from .model import FieldModel, SynthesisRequest, synthesize
from .tensor import Tensor, backward

__version__ = "0.1.0"
