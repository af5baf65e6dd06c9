"""Time-frequency transforms and WAV I/O.

Conventions used throughout the package:
    waveform samples   (n_samples, n_channels) float64
    spectrogram data   (n_freq, n_frames, n_channels) complex128, one-sided
"""

import struct
import zlib
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Waveform",
    "ComplexSpectrogram",
    "stft",
    "istft",
    "read_wav",
    "write_wav",
]

_WAV_FMT_PCM = 0x0001
_WAV_FMT_IEEE_FLOAT = 0x0003


@dataclass(frozen=True)
class Waveform:
    """Multichannel time-domain signal.

    samples: (n_samples, n_channels) float64; mono input may be 1-D and is
    reshaped to a single column.
    """

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim == 1:
            samples = samples[:, None]
        if samples.ndim != 2:
            raise ValueError(f"samples must be 1-D or 2-D, got ndim={samples.ndim}")
        if int(self.sample_rate) <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("waveform contains non-finite samples")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def n_samples(self):
        return self.samples.shape[0]

    @property
    def n_channels(self):
        return self.samples.shape[1]

    def channel(self, i):
        """Return channel *i* as a 1-D array."""
        return self.samples[:, i]


@dataclass(frozen=True)
class ComplexSpectrogram:
    """One-sided STFT tensor with its transform metadata.

    data: (n_freq, n_frames, n_channels) complex128 with n_freq = win_len//2 + 1.
    """

    data: np.ndarray
    sample_rate: int
    win_len: int
    hop: int

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.complex128)
        if data.ndim != 3:
            raise ValueError(f"spectrogram data must be 3-D (F, N, I), got ndim={data.ndim}")
        if data.shape[0] != self.win_len // 2 + 1:
            raise ValueError(
                f"n_freq={data.shape[0]} inconsistent with win_len={self.win_len} "
                f"(expected {self.win_len // 2 + 1})"
            )
        if not (0 < self.hop <= self.win_len):
            raise ValueError(f"hop must lie in (0, win_len], got {self.hop}")
        if not np.all(np.isfinite(data)):
            raise ValueError("spectrogram contains non-finite entries")
        object.__setattr__(self, "data", data)

    @property
    def n_freq(self):
        return self.data.shape[0]

    @property
    def n_frames(self):
        return self.data.shape[1]

    @property
    def n_channels(self):
        return self.data.shape[2]


def _window(win_len):
    # Symmetric Hamming; reconstruction does not require COLA because the
    # inverse normalizes by the per-sample sum of squared windows.
    return np.hamming(win_len)


def stft(w: Waveform, win_ms: float = 128.0, hop_ratio: float = 0.5) -> ComplexSpectrogram:
    """One-sided STFT with a Hamming analysis window.

    win_ms must convert to an even number of samples not exceeding the signal
    length. Frames that would run past the end of the signal are dropped, so
    n_frames = (n_samples - win_len)//hop + 1.
    """
    win_len = int(round(w.sample_rate * win_ms / 1000.0))
    if win_len < 2 or win_len % 2 != 0:
        raise ValueError(f"window of {win_ms} ms is {win_len} samples; need an even count >= 2")
    if not (0.0 < hop_ratio <= 1.0):
        raise ValueError(f"hop_ratio must lie in (0, 1], got {hop_ratio}")
    hop = int(round(win_len * hop_ratio))
    if abs(hop - win_len * hop_ratio) > 1e-9:
        raise ValueError(f"hop_ratio {hop_ratio} does not give an integer hop for win_len {win_len}")
    if w.n_samples < win_len:
        raise ValueError(
            f"signal too short: {w.n_samples} samples < one window of {win_len}"
        )
    n_frames = (w.n_samples - win_len) // hop + 1
    window = _window(win_len)
    idx = np.arange(win_len)[None, :] + hop * np.arange(n_frames)[:, None]
    # frames: (n_frames, win_len, n_channels) -> windowed -> rfft over win_len
    frames = w.samples[idx, :] * window[None, :, None]
    spec = np.fft.rfft(frames, axis=1)  # (n_frames, n_freq, n_channels)
    data = np.ascontiguousarray(np.transpose(spec, (1, 0, 2)))
    return ComplexSpectrogram(data, w.sample_rate, win_len, hop)


def istft(s: ComplexSpectrogram) -> Waveform:
    """Weighted overlap-add inverse with squared-window-sum normalization.

    The synthesis window equals the analysis window, so istft(stft(w))
    reproduces w exactly on the span covered by the analysis frames.
    """
    win_len, hop = s.win_len, s.hop
    n_frames = s.n_frames
    window = _window(win_len)
    frames = np.fft.irfft(s.data, n=win_len, axis=0)  # (win_len, n_frames, I)
    frames *= window[:, None, None]
    out_len = (n_frames - 1) * hop + win_len
    num = np.zeros((out_len, s.n_channels))
    den = np.zeros(out_len)
    wsq = window ** 2
    for m in range(n_frames):
        num[m * hop : m * hop + win_len, :] += frames[:, m, :]
        den[m * hop : m * hop + win_len] += wsq
    if den.min() <= 0.0:
        raise ValueError("zero squared-window sum in overlap-add; cannot normalize")
    return Waveform(num / den[:, None], s.sample_rate)


# ---------------------------------------------------------------------------
# RIFF/WAVE reading and writing (PCM16 and IEEE float32, little-endian)
# ---------------------------------------------------------------------------

def read_wav(path) -> Waveform:
    """Read a RIFF/WAVE file holding PCM16 or IEEE float32 samples.

    PCM16 is scaled to +-1 full scale (x / 32768); float32 is returned as-is.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 12 or raw[0:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise ValueError(f"{path}: not a RIFF/WAVE file")
    pos = 12
    fmt = None
    payload = None
    while pos + 8 <= len(raw):
        cid = raw[pos : pos + 4]
        (size,) = struct.unpack_from("<I", raw, pos + 4)
        body = raw[pos + 8 : pos + 8 + size]
        if len(body) < size:
            raise ValueError(f"{path}: truncated '{cid.decode('latin1')}' chunk")
        if cid == b"fmt ":
            if size < 16:
                raise ValueError(f"{path}: malformed fmt chunk of {size} bytes")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif cid == b"data":
            payload = body
        pos += 8 + size + (size & 1)  # chunks are word-aligned
    if fmt is None or payload is None:
        raise ValueError(f"{path}: missing fmt or data chunk")
    audio_format, n_channels, sample_rate, _, _, bits = fmt
    if audio_format == _WAV_FMT_PCM and bits == 16:
        data = np.frombuffer(payload, dtype="<i2").astype(np.float64) / 32768.0
    elif audio_format == _WAV_FMT_IEEE_FLOAT and bits == 32:
        data = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    else:
        raise ValueError(
            f"{path}: unsupported WAV codec (format tag 0x{audio_format:04x}, {bits}-bit)"
        )
    if n_channels < 1 or len(data) % n_channels:
        raise ValueError(f"{path}: data size inconsistent with {n_channels} channels")
    return Waveform(data.reshape(-1, n_channels), sample_rate)


def write_wav(path, w: Waveform, fmt: str = "float32"):
    """Write a Waveform as RIFF/WAVE. fmt is 'float32' (lossless) or 'pcm16'."""
    if fmt == "float32":
        payload = np.ascontiguousarray(w.samples, dtype="<f4").tobytes()
        audio_format, bits = _WAV_FMT_IEEE_FLOAT, 32
    elif fmt == "pcm16":
        scaled = np.clip(np.round(w.samples * 32768.0), -32768, 32767)
        payload = np.ascontiguousarray(scaled, dtype="<i2").tobytes()
        audio_format, bits = _WAV_FMT_PCM, 16
    else:
        raise ValueError(f"unsupported output format {fmt!r}; use 'float32' or 'pcm16'")
    block_align = w.n_channels * bits // 8
    byte_rate = w.sample_rate * block_align
    fmt_chunk = struct.pack(
        "<HHIIHH", audio_format, w.n_channels, w.sample_rate, byte_rate, block_align, bits
    )
    chunks = [b"fmt ", struct.pack("<I", len(fmt_chunk)), fmt_chunk]
    if audio_format == _WAV_FMT_IEEE_FLOAT:
        fact = struct.pack("<I", w.n_samples)
        chunks += [b"fact", struct.pack("<I", len(fact)), fact]
    chunks += [b"data", struct.pack("<I", len(payload)), payload]
    if len(payload) & 1:
        chunks.append(b"\x00")
    body = b"".join(chunks)
    with open(path, "wb") as fh:
        fh.write(b"RIFF" + struct.pack("<I", 4 + len(body)) + b"WAVE" + body)


def wav_checksum(path) -> int:
    """CRC32 of a file's bytes; handy for determinism tests."""
    with open(path, "rb") as fh:
        return zlib.crc32(fh.read())
