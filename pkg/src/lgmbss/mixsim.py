"""Deterministic synthetic sources and mixing for desk-scale experiments.

Sources are resonator-filtered noise with class-specific spectral envelopes
and sinusoidal amplitude modulation, normalized to unit energy. Mixing is
instantaneous (matrix) or short-FIR convolutive.
"""

import json
from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .sigproc import Waveform

__all__ = [
    "SourceClassSpec",
    "MixSpec",
    "default_classes",
    "gen_sources",
    "mix_instantaneous",
    "mix_fir",
    "load_mix_spec",
    "DEFAULT_SAMPLE_RATE",
    "DEFAULT_DURATION_S",
]

DEFAULT_SAMPLE_RATE = 16000
DEFAULT_DURATION_S = 3.0
MAX_CONDITION = 100.0


@dataclass(frozen=True)
class SourceClassSpec:
    """Parametric source class: resonance set + temporal modulation.

    branch_mod_phases optionally offsets the modulation phase of each
    resonance branch (radians); None applies one common envelope. Offsetting
    branches makes the spectral balance, not just the loudness, move in time.
    """

    class_id: int
    resonances: tuple  # ((center_hz, bandwidth_hz), ...)
    mod_rate_hz: float
    mod_depth: float
    branch_mod_phases: tuple = None

    def __post_init__(self):
        if not (0.0 <= self.mod_depth <= 1.0):
            raise ValueError(f"mod_depth must lie in [0, 1], got {self.mod_depth}")
        if not self.resonances:
            raise ValueError("source class needs at least one resonance")
        object.__setattr__(
            self,
            "resonances",
            tuple((float(c), float(b)) for c, b in self.resonances),
        )
        if self.branch_mod_phases is not None:
            phases = tuple(float(p) for p in self.branch_mod_phases)
            if len(phases) != len(self.resonances):
                raise ValueError("branch_mod_phases must match the resonance count")
            object.__setattr__(self, "branch_mod_phases", phases)


@dataclass(frozen=True)
class MixSpec:
    """Mixing description: instantaneous matrix or FIR tap tensor."""

    mode: str  # "instantaneous" | "fir"
    matrix: np.ndarray = None  # (I, J)
    taps: np.ndarray = None  # (I, J, L)
    seed: int = 0

    def __post_init__(self):
        if self.mode == "instantaneous":
            if self.matrix is None:
                raise ValueError("instantaneous mixing requires a matrix")
            a = np.asarray(self.matrix, dtype=np.float64)
            if a.ndim != 2:
                raise ValueError("mixing matrix must be 2-D (channels x sources)")
            if np.linalg.cond(a) >= MAX_CONDITION:
                raise ValueError(
                    f"mixing matrix condition number {np.linalg.cond(a):.1f} >= {MAX_CONDITION}"
                )
            object.__setattr__(self, "matrix", a)
        elif self.mode == "fir":
            if self.taps is None:
                raise ValueError("fir mixing requires taps")
            t = np.asarray(self.taps, dtype=np.float64)
            if t.ndim != 3:
                raise ValueError("taps must be 3-D (channels x sources x taps)")
            object.__setattr__(self, "taps", t)
        else:
            raise ValueError(f"unknown mixing mode {self.mode!r}")


# Default class pair: low-formant slow modulation vs high-formant fast
# modulation; spectral centroids sit well over 500 Hz apart.
def default_classes(n=2, sample_rate=DEFAULT_SAMPLE_RATE):
    """Return *n* well-separated classes with band centers log-spaced over
    (300 Hz, 0.6*nyquist); the upper resonance stays below 0.85*nyquist."""
    if n < 1:
        raise ValueError("need at least one class")
    lo, hi = 300.0, 0.6 * (sample_rate / 2.0)
    classes = []
    for j in range(n):
        # log-spaced band centers so classes stay spectrally apart
        center = lo * (hi / lo) ** (j / max(n - 1, 1)) if n > 1 else 0.5 * (lo + hi)
        classes.append(
            SourceClassSpec(
                class_id=j,
                resonances=((0.8 * center, 0.06 * center + 40.0),
                            (1.4 * center, 0.10 * center + 60.0)),
                mod_rate_hz=2.5 + 2.0 * j,
                mod_depth=0.8,
            )
        )
    return classes


def _resonator_branches(noise, resonances, sample_rate):
    """One 2-pole resonator output per resonance, all driven by the same noise."""
    branches = []
    for center, bw in resonances:
        if center >= sample_rate / 2:
            raise ValueError(f"resonance at {center} Hz is above Nyquist ({sample_rate / 2})")
        r = np.exp(-np.pi * bw / sample_rate)
        theta = 2.0 * np.pi * center / sample_rate
        b = [(1.0 - r * r) * np.sin(theta)]
        a = [1.0, -2.0 * r * np.cos(theta), r * r]
        branches.append(lfilter(b, a, noise))
    return branches


def gen_sources(specs, duration_s=DEFAULT_DURATION_S, sample_rate=DEFAULT_SAMPLE_RATE, seed=0):
    """Generate one unit-energy Waveform per class spec, deterministic in seed."""
    if not specs:
        raise ValueError("need at least one source class spec")
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * sample_rate))
    t = np.arange(n) / sample_rate
    sources = []
    for spec in specs:
        noise = rng.standard_normal(n)
        branches = _resonator_branches(noise, spec.resonances, sample_rate)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        offsets = spec.branch_mod_phases or (0.0,) * len(branches)
        s = np.zeros(n)
        for off, branch in zip(offsets, branches):
            env = (1.0 - spec.mod_depth) + spec.mod_depth * 0.5 * (
                1.0 + np.sin(2.0 * np.pi * spec.mod_rate_hz * t + phase + off)
            )
            s += branch * env
        s /= np.sqrt(np.dot(s, s))
        sources.append(Waveform(s, sample_rate))
    return sources


def mix_instantaneous(sources, matrix) -> Waveform:
    """x_i = sum_j A[i, j] s_j; returns an I-channel Waveform."""
    a = np.asarray(matrix, dtype=np.float64)
    if a.shape[1] != len(sources):
        raise ValueError(f"matrix has {a.shape[1]} source columns for {len(sources)} sources")
    s = np.stack([src.channel(0) for src in sources], axis=1)  # (n, J)
    return Waveform(s @ a.T, sources[0].sample_rate)


def mix_fir(sources, taps) -> Waveform:
    """Convolutive mixing with per-pair FIR taps (I, J, L); tail truncated."""
    taps = np.asarray(taps, dtype=np.float64)
    n_chan, n_src, _ = taps.shape
    if n_src != len(sources):
        raise ValueError(f"taps describe {n_src} sources, got {len(sources)}")
    n = sources[0].n_samples
    out = np.zeros((n, n_chan))
    for i in range(n_chan):
        for j in range(n_src):
            out[:, i] += np.convolve(sources[j].channel(0), taps[i, j])[:n]
    return Waveform(out, sources[0].sample_rate)


# ---------------------------------------------------------------------------
# JSON mix-spec files
#
# {
#   "schema_version": 1,
#   "sample_rate": 16000, "duration_s": 3.0, "seed": 0,
#   "classes": [
#     {"class_id": 0, "resonances": [[350, 80], [700, 120]],
#      "mod_rate_hz": 2.5, "mod_depth": 0.8}, ...
#   ],
#   "mixing": {"mode": "instantaneous", "matrix": [[1.0, 0.6], [0.55, 1.0]]}
#   (or {"mode": "fir", "taps": [[[...], ...], ...]}
#    or {"mode": "fir", "n_taps": 64, "decay": 0.1})
# }
# ---------------------------------------------------------------------------

def _require(d, key, path):
    if key not in d:
        raise ValueError(f"mix spec: missing {path}.{key}")
    return d[key]


def _random_taps(rng, n_chan, n_src, n_taps, decay):
    kernel = np.exp(-decay * np.arange(n_taps))
    taps = rng.standard_normal((n_chan, n_src, n_taps)) * kernel
    taps[:, :, 0] = rng.uniform(0.5, 1.0, (n_chan, n_src)) * np.sign(
        rng.standard_normal((n_chan, n_src))
    )
    return taps


def load_mix_spec(path):
    """Parse a mix-spec JSON file.

    Returns (classes, mix_spec, sample_rate, duration_s, seed). Schema errors
    name the offending JSON path.
    """
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"mix spec {path}: invalid JSON at line {exc.lineno}: {exc.msg}")
    if not isinstance(doc, dict):
        raise ValueError("mix spec: top level must be an object")
    sample_rate = int(doc.get("sample_rate", DEFAULT_SAMPLE_RATE))
    duration_s = float(doc.get("duration_s", DEFAULT_DURATION_S))
    seed = int(doc.get("seed", 0))
    classes = []
    for k, cdoc in enumerate(_require(doc, "classes", "$")):
        try:
            phases = cdoc.get("branch_mod_phases")
            classes.append(
                SourceClassSpec(
                    class_id=int(cdoc.get("class_id", k)),
                    resonances=tuple(tuple(r) for r in _require(cdoc, "resonances", f"$.classes[{k}]")),
                    mod_rate_hz=float(_require(cdoc, "mod_rate_hz", f"$.classes[{k}]")),
                    mod_depth=float(_require(cdoc, "mod_depth", f"$.classes[{k}]")),
                    branch_mod_phases=None if phases is None else tuple(phases),
                )
            )
        except (TypeError, ValueError) as exc:
            raise ValueError(f"mix spec: bad class at $.classes[{k}]: {exc}")
    mdoc = _require(doc, "mixing", "$")
    mode = _require(mdoc, "mode", "$.mixing")
    rng = np.random.default_rng(seed)
    if mode == "instantaneous":
        spec = MixSpec(mode=mode, matrix=np.asarray(_require(mdoc, "matrix", "$.mixing")), seed=seed)
    elif mode == "fir":
        if "taps" in mdoc:
            taps = np.asarray(mdoc["taps"], dtype=np.float64)
        else:
            n_taps = int(_require(mdoc, "n_taps", "$.mixing"))
            n_chan = int(mdoc.get("n_channels", len(classes)))
            taps = _random_taps(rng, n_chan, len(classes), n_taps, float(mdoc.get("decay", 0.1)))
        spec = MixSpec(mode=mode, taps=taps, seed=seed)
    else:
        raise ValueError(f"mix spec: unknown mode {mode!r} at $.mixing.mode")
    return classes, spec, sample_rate, duration_s, seed
