"""Scale-invariant SDR and exhaustive permutation alignment for scoring."""

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .sigproc import Waveform

__all__ = ["EvalReport", "si_sdr", "permute_align"]

MAX_SOURCES = 8  # exhaustive permutation search bound


@dataclass
class EvalReport:
    """Per-source scores under the best global permutation."""

    si_sdr: list
    permutation: tuple
    input_si_sdr: list = None
    improvement: list = None
    schema_version: int = field(default=1)

    def to_dict(self):
        return {
            "schema_version": self.schema_version,
            "permutation": list(self.permutation),
            "si_sdr_db": list(self.si_sdr),
            "input_si_sdr_db": None if self.input_si_sdr is None else list(self.input_si_sdr),
            "improvement_db": None if self.improvement is None else list(self.improvement),
        }

    def to_json(self, indent=2):
        # inf is serialized as JSON "Infinity" (python round-trips it)
        return json.dumps(self.to_dict(), indent=indent)


def _as_mono(x):
    if isinstance(x, Waveform):
        if x.n_channels != 1:
            raise ValueError("si_sdr expects mono signals; pass one channel at a time")
        x = x.channel(0)
    return np.asarray(x, dtype=np.float64).ravel()


def si_sdr(est, ref) -> float:
    """Scale-invariant SDR in dB: 10 log10(|b ref|^2 / |est - b ref|^2),
    b = <est, ref>/|ref|^2. A zero residual returns +inf."""
    est = _as_mono(est)
    ref = _as_mono(ref)
    if est.shape != ref.shape:
        raise ValueError(f"length mismatch: est {est.shape[0]} vs ref {ref.shape[0]}")
    ref_energy = float(np.dot(ref, ref))
    if ref_energy <= 0.0:
        raise ValueError("reference signal is zero; SI-SDR undefined")
    beta = float(np.dot(est, ref)) / ref_energy
    target = beta * ref
    noise = est - target
    target_energy = float(np.dot(target, target))
    noise_energy = float(np.dot(noise, noise))
    if noise_energy <= 0.0:
        return math.inf
    if target_energy <= 0.0:
        return -math.inf
    return 10.0 * math.log10(target_energy / noise_energy)


def permute_align(ests, refs, mix=None):
    """Exhaustively search the permutation of estimates maximizing mean SI-SDR.

    Returns (permutation, EvalReport); permutation[k] is the estimate index
    assigned to reference k. Ties break toward the lexicographically smallest
    permutation. If *mix* (observed reference-channel signal) is given, the
    report also carries input SI-SDR and per-source improvement.
    """
    ests = [_as_mono(e) for e in ests]
    refs = [_as_mono(r) for r in refs]
    if len(ests) != len(refs):
        raise ValueError(f"count mismatch: {len(ests)} estimates vs {len(refs)} references")
    n = len(refs)
    if n > MAX_SOURCES:
        raise ValueError(
            f"{n} sources exceeds the exhaustive-search bound of {MAX_SOURCES}; "
            "Hungarian assignment is out of scope"
        )
    # pairwise[i][k] = si_sdr(est i, ref k); infs are capped for the argmax so
    # that two exact matches outrank one, and reported uncapped
    pairwise = [[si_sdr(e, r) for r in refs] for e in ests]
    cap = lambda s: min(max(s, -1e3), 1e3)
    best_perm, best_score = None, -math.inf
    for perm in itertools.permutations(range(n)):
        score = sum(cap(pairwise[perm[k]][k]) for k in range(n)) / n
        if score > best_score:
            best_perm, best_score = perm, score
    out = [pairwise[best_perm[k]][k] for k in range(n)]
    input_scores = improvement = None
    if mix is not None:
        mix = _as_mono(mix)
        input_scores = [si_sdr(mix, r) for r in refs]
        improvement = [o - i for o, i in zip(out, input_scores)]
    report = EvalReport(
        si_sdr=out, permutation=best_perm, input_si_sdr=input_scores, improvement=improvement
    )
    return best_perm, report
