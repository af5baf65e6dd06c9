"""Determined multichannel blind source separation under the local Gaussian
model, with NMF (low-rank / flat-basis) and forward-pass neural variance
models, plus synthetic mixing, SI-SDR scoring, and a benchmark harness."""

from .engine import SeparationResult, SourceModel, separate
from .metrics import EvalReport, permute_align, si_sdr
from .sigproc import ComplexSpectrogram, Waveform, istft, read_wav, stft, write_wav

__all__ = [
    "ComplexSpectrogram",
    "EvalReport",
    "SeparationResult",
    "SourceModel",
    "Waveform",
    "istft",
    "permute_align",
    "read_wav",
    "separate",
    "si_sdr",
    "stft",
    "write_wav",
]

__version__ = "0.1.0"
