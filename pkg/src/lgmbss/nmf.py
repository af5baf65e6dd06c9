"""Low-rank NMF variance model (and its flat-basis special case) plus the
oracle variance model used for testing, all implementing SourceModel.

The multiplicative updates minimize the Itakura-Saito divergence between the
separated power spectrogram p = |y|^2 and the model v = T @ V, which is the
variance part of the local-Gaussian likelihood.
"""

from dataclasses import dataclass

import numpy as np

from .engine import VAR_FLOOR, SourceModel

__all__ = [
    "NmfState",
    "nmf_init",
    "nmf_update",
    "nmf_variance",
    "is_divergence",
    "NmfSourceModel",
    "OracleSourceModel",
]


@dataclass
class NmfState:
    basis: np.ndarray  # (F, K), >= VAR_FLOOR; all-ones and frozen in flat mode
    activation: np.ndarray  # (K, N), >= VAR_FLOOR
    flat_basis: bool = False


def nmf_init(n_freq, n_frames, n_basis=2, seed=0, flat_basis=False) -> NmfState:
    """Seeded uniform(0.1, 1.0) init; flat mode forces K=1 with basis == 1."""
    if n_basis < 1:
        raise ValueError("need at least one basis")
    rng = np.random.default_rng(seed)
    if flat_basis:
        basis = np.ones((n_freq, 1))
        activation = rng.uniform(0.1, 1.0, (1, n_frames))
    else:
        basis = rng.uniform(0.1, 1.0, (n_freq, n_basis))
        activation = rng.uniform(0.1, 1.0, (n_basis, n_frames))
    return NmfState(basis, activation, flat_basis)


def nmf_variance(state: NmfState) -> np.ndarray:
    """v = T @ V, floored."""
    return np.maximum(state.basis @ state.activation, VAR_FLOOR)


def nmf_update(state: NmfState, power: np.ndarray) -> NmfState:
    """One multiplicative sweep (basis, then activations) against the power
    spectrogram. The basis stays frozen in flat mode.

    T <- T * sqrt((p v^-2 V^T) / (v^-1 V^T)); symmetric rule for V.
    """
    p = np.asarray(power, dtype=np.float64)
    t, a = state.basis, state.activation
    v = np.maximum(t @ a, VAR_FLOOR)
    if not state.flat_basis:
        num = (p / v**2) @ a.T
        den = (1.0 / v) @ a.T
        t = np.maximum(t * np.sqrt(num / np.maximum(den, VAR_FLOOR)), VAR_FLOOR)
        v = np.maximum(t @ a, VAR_FLOOR)
    num = t.T @ (p / v**2)
    den = t.T @ (1.0 / v)
    a = np.maximum(a * np.sqrt(num / np.maximum(den, VAR_FLOOR)), VAR_FLOOR)
    return NmfState(t, a, state.flat_basis)


def is_divergence(p, v) -> float:
    """Itakura-Saito divergence sum(p/v - log(p/v) - 1); inputs floored."""
    p = np.maximum(np.asarray(p, dtype=np.float64), VAR_FLOOR)
    v = np.maximum(np.asarray(v, dtype=np.float64), VAR_FLOOR)
    r = p / v
    return float(np.sum(r - np.log(r) - 1.0))


class NmfSourceModel(SourceModel):
    """One NmfState per source; update(j, y) runs one multiplicative sweep
    and returns the refreshed variance field. flat_basis=True gives the
    frequency-flat single-basis special case."""

    def __init__(self, n_sources, n_freq, n_frames, n_basis=2, seed=0, flat_basis=False):
        self.n_sources = n_sources
        self.states = [
            nmf_init(n_freq, n_frames, n_basis=n_basis, seed=seed + j, flat_basis=flat_basis)
            for j in range(n_sources)
        ]

    def update(self, j, y):
        self.states[j] = nmf_update(self.states[j], np.abs(y) ** 2)
        return nmf_variance(self.states[j])


class OracleSourceModel(SourceModel):
    """Fixed variance fields (e.g. true source powers); never updates."""

    def __init__(self, variances):
        v = np.asarray(variances, dtype=np.float64)
        if v.ndim != 3:
            raise ValueError("oracle variances must be (J, F, N)")
        self.variances = np.maximum(v, VAR_FLOOR)
        self.n_sources = v.shape[0]

    def update(self, j, y):
        return self.variances[j]
