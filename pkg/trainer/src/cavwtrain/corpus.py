"""Synthetic training corpora and feature extraction.

Corpus layout (the external interface consumed by `load_corpus`):
    <root>/class_<k>/utt_<m>.wav   unit-energy float32 mono WAV
    <root>/corpus.json             classes, sample rate, duration, seed

Features are the log of the mean-power-normalized power spectrogram,
log(|S|^2 / g + eps) with g the mean power of the utterance spectrogram —
the same gain convention the separation engine applies to its inputs.
"""

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

EPS = 1e-10


@dataclass(frozen=True)
class ClassSpec:
    class_id: int
    resonances: tuple
    mod_rate_hz: float
    mod_depth: float
    branch_mod_phases: tuple = None


def load_class_specs(path):
    """Parse the class section of a mix/class spec JSON file."""
    doc = json.loads(Path(path).read_text())
    classes = []
    for k, cdoc in enumerate(doc["classes"]):
        phases = cdoc.get("branch_mod_phases")
        classes.append(
            ClassSpec(
                class_id=int(cdoc.get("class_id", k)),
                resonances=tuple(tuple(map(float, r)) for r in cdoc["resonances"]),
                mod_rate_hz=float(cdoc["mod_rate_hz"]),
                mod_depth=float(cdoc["mod_depth"]),
                branch_mod_phases=None if phases is None else tuple(map(float, phases)),
            )
        )
    return classes, int(doc.get("sample_rate", 16000)), float(doc.get("duration_s", 2.0))


def _resonator(noise, center, bw, sample_rate):
    from scipy.signal import lfilter

    r = np.exp(-np.pi * bw / sample_rate)
    theta = 2.0 * np.pi * center / sample_rate
    b = [(1.0 - r * r) * np.sin(theta)]
    a = [1.0, -2.0 * r * np.cos(theta), r * r]
    return lfilter(b, a, noise)


def synth_utterance(spec: ClassSpec, duration_s, sample_rate, rng):
    """One unit-energy utterance of the given class."""
    n = int(round(duration_s * sample_rate))
    t = np.arange(n) / sample_rate
    noise = rng.standard_normal(n)
    offsets = spec.branch_mod_phases or (0.0,) * len(spec.resonances)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    s = np.zeros(n)
    for off, (center, bw) in zip(offsets, spec.resonances):
        env = (1.0 - spec.mod_depth) + spec.mod_depth * 0.5 * (
            1.0 + np.sin(2.0 * np.pi * spec.mod_rate_hz * t + phase + off)
        )
        s += _resonator(noise, center, bw, sample_rate) * env
    return s / np.sqrt(np.dot(s, s))


def write_wav_float32(path, samples, sample_rate):
    payload = np.ascontiguousarray(samples, dtype="<f4").tobytes()
    fmt = struct.pack("<HHIIHH", 3, 1, sample_rate, sample_rate * 4, 4, 32)
    fact = struct.pack("<I", len(samples))
    body = (b"fmt " + struct.pack("<I", len(fmt)) + fmt
            + b"fact" + struct.pack("<I", len(fact)) + fact
            + b"data" + struct.pack("<I", len(payload)) + payload)
    with open(path, "wb") as fh:
        fh.write(b"RIFF" + struct.pack("<I", 4 + len(body)) + b"WAVE" + body)


def read_wav_float32(path):
    raw = Path(path).read_bytes()
    if raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise ValueError(f"{path}: not a WAV file")
    pos, fmt, payload = 12, None, None
    while pos + 8 <= len(raw):
        cid = raw[pos : pos + 4]
        (size,) = struct.unpack_from("<I", raw, pos + 4)
        if cid == b"fmt ":
            fmt = struct.unpack_from("<HHIIHH", raw, pos + 8)
        elif cid == b"data":
            payload = raw[pos + 8 : pos + 8 + size]
        pos += 8 + size + (size & 1)
    if fmt is None or payload is None:
        raise ValueError(f"{path}: missing fmt/data chunk")
    tag, _, sample_rate, _, _, bits = fmt
    if tag == 3 and bits == 32:
        data = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    elif tag == 1 and bits == 16:
        data = np.frombuffer(payload, dtype="<i2").astype(np.float64) / 32768.0
    else:
        raise ValueError(f"{path}: unsupported WAV format tag {tag}")
    return data, sample_rate


def gen_training_corpus(class_specs, n_per_class, out_dir, duration_s=2.0,
                        sample_rate=16000, seed=0):
    """Write a per-class WAV corpus, deterministic in seed."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    for spec in class_specs:
        cdir = out / f"class_{spec.class_id}"
        cdir.mkdir(exist_ok=True)
        for m in range(n_per_class):
            utt = synth_utterance(spec, duration_s, sample_rate, rng)
            write_wav_float32(cdir / f"utt_{m:03d}.wav", utt, sample_rate)
    meta = {
        "schema_version": 1,
        "sample_rate": sample_rate,
        "duration_s": duration_s,
        "seed": seed,
        "n_per_class": n_per_class,
        "classes": [
            {
                "class_id": c.class_id,
                "resonances": [list(r) for r in c.resonances],
                "mod_rate_hz": c.mod_rate_hz,
                "mod_depth": c.mod_depth,
                "branch_mod_phases": None if c.branch_mod_phases is None
                else list(c.branch_mod_phases),
            }
            for c in class_specs
        ],
    }
    (out / "corpus.json").write_text(json.dumps(meta, indent=2))
    return out


# ---------------------------------------------------------------------------
# feature extraction (matches the separation engine's conventions)
# ---------------------------------------------------------------------------

def stft_power(samples, sample_rate, win_ms=32.0):
    """Hamming one-sided STFT power, frames dropped past the signal end."""
    win = int(round(sample_rate * win_ms / 1000.0))
    hop = win // 2
    if len(samples) < win:
        raise ValueError("signal too short for one window")
    n_frames = (len(samples) - win) // hop + 1
    window = np.hamming(win)
    idx = np.arange(win)[None, :] + hop * np.arange(n_frames)[:, None]
    spec = np.fft.rfft(samples[idx] * window[None, :], axis=1)
    return np.abs(spec.T) ** 2  # (F, N)


def power_to_features(power):
    """Mean-power gain normalization then log; returns (features, gain)."""
    g = max(float(power.mean()), EPS)
    return np.log(power / g + EPS), g


@dataclass
class Dataset:
    features: np.ndarray  # (M, F, N) float32
    power: np.ndarray  # (M, F, N) float32, gain-normalized
    labels: np.ndarray  # (M, C) one-hot float32
    sample_rate: int
    win_ms: float

    @property
    def n_classes(self):
        return self.labels.shape[1]

    @property
    def freq_bins(self):
        return self.features.shape[1]


def load_corpus(root, win_ms=32.0) -> Dataset:
    """Load a per-class WAV corpus into feature/power/label tensors.

    The power kept alongside the features is the gain-normalized power (the
    quantity the decoder variance models), so g = 1 downstream.
    """
    root = Path(root)
    class_dirs = sorted(root.glob("class_*"), key=lambda p: int(p.name.split("_")[1]))
    if not class_dirs:
        raise FileNotFoundError(f"no class_* directories under {root}")
    feats, powers, labels = [], [], []
    n_classes = len(class_dirs)
    sample_rate = None
    for ci, cdir in enumerate(class_dirs):
        for wav in sorted(cdir.glob("*.wav")):
            samples, sr = read_wav_float32(wav)
            sample_rate = sr if sample_rate is None else sample_rate
            energy = np.dot(samples, samples)
            if energy > 0:
                samples = samples / np.sqrt(energy)
            power = stft_power(samples, sr, win_ms)
            feat, g = power_to_features(power)
            onehot = np.zeros(n_classes)
            onehot[ci] = 1.0
            feats.append(feat.astype(np.float32))
            powers.append((power / g).astype(np.float32))
            labels.append(onehot.astype(np.float32))
    return Dataset(
        features=np.stack(feats), power=np.stack(powers), labels=np.stack(labels),
        sample_rate=sample_rate, win_ms=win_ms,
    )
