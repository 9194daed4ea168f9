"""Frequency-domain domain generalization: amplitude perturbation with
cross patchwise phase matching."""

from .config import ExperimentConfig, load_config
from .fourier import amplitude_only, fft2, from_polar, ifft2, mix_amplitude, phase_only, reconstruct_with, to_polar
from .models import EncoderSpec, PhaMaNet
from .objective import Variant, cross_contrast, ema_update, patchnce, phama_loss
from .trainer import TrainResult, train

__version__ = "0.1.0"
