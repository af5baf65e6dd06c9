"""Forward-pass kernels and inference for the unified encoder-classifier /
conditional decoder variance model.

Kernel conventions:
    feature maps are (channels, time) float64
    conv1d uses the cross-correlation convention with "same"-style zero
    padding; output length is ceil(N/stride)
    deconv1d is the exact adjoint of the matching conv (output length N*stride)
"""

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .engine import VAR_FLOOR, SourceModel, update_gain
from .weights import LayerWeights, ModelBundle

__all__ = [
    "silu",
    "layer_norm",
    "conv1d",
    "deconv1d",
    "encoder_forward",
    "decoder_forward",
    "infer_class",
    "infer_latent_poe",
    "neural_update",
    "NeuralSourceState",
    "NeuralVarianceModel",
]

LN_EPS = 1e-5


def silu(u):
    """Self-gated activation u * sigmoid(u)."""
    u = np.asarray(u, dtype=np.float64)
    return u / (1.0 + np.exp(-u))


def layer_norm(x, gamma, beta, eps=LN_EPS):
    """Normalize each time step over the channel axis, then affine."""
    x = np.asarray(x, dtype=np.float64)
    mean = x.mean(axis=0, keepdims=True)
    var = x.var(axis=0, keepdims=True)
    xn = (x - mean) / np.sqrt(var + eps)
    return np.asarray(gamma)[:, None] * xn + np.asarray(beta)[:, None]


def _same_pad(n, kernel, stride):
    n_out = -(-n // stride)  # ceil
    total = max((n_out - 1) * stride + kernel - n, 0)
    return n_out, total // 2, total - total // 2


def conv1d(x, layer: LayerWeights):
    """Strided cross-correlation with same-style zero padding (kernel only;
    normalization/activation are applied by the caller via the layer flags)."""
    x = np.asarray(x, dtype=np.float64)
    w, b, stride = layer.weight, layer.bias, layer.spec.stride
    kernel = w.shape[2]
    n = x.shape[1]
    n_out, pl, pr = _same_pad(n, kernel, stride)
    xp = np.pad(x, ((0, 0), (pl, pr)))
    windows = sliding_window_view(xp, kernel, axis=1)[:, ::stride, :][:, :n_out, :]
    return np.einsum("oik,itk->ot", w, windows, optimize=True) + b[:, None]


def deconv1d(y, layer: LayerWeights):
    """Adjoint of conv1d: maps (in_ch, M) to (out_ch, M*stride). With zero
    bias, <conv1d(x, L), y> == <x, deconv1d(y, L')> when L' transposes L's
    channel axes."""
    y = np.asarray(y, dtype=np.float64)
    w, b, stride = layer.weight, layer.bias, layer.spec.stride
    kernel = w.shape[2]
    m = y.shape[1]
    n = m * stride
    _, pl, _pr = _same_pad(n, kernel, stride)
    contrib = np.einsum("oik,it->okt", w, y, optimize=True)  # (out, kernel, M)
    zp = np.zeros((w.shape[0], n + max((m - 1) * stride + kernel - n, 0)))
    for u in range(kernel):
        zp[:, u : u + (m - 1) * stride + 1 : stride] += contrib[:, u, :]
    return zp[:, pl : pl + n] + b[:, None]


def _apply_layer(x, layer: LayerWeights, name_for_errors=True):
    kind = layer.spec.kind
    h = conv1d(x, layer) if kind == "conv1d" else deconv1d(x, layer)
    if layer.spec.norm:
        h = layer_norm(h, layer.gamma, layer.beta)
    if layer.spec.activation == "silu":
        h = silu(h)
    if not np.all(np.isfinite(h)):
        raise FloatingPointError(f"non-finite activations after layer '{layer.spec.name}'")
    return h


def _softmax(x):
    e = np.exp(x - x.max())
    return e / e.sum()


def encoder_forward(bundle: ModelBundle, s_norm):
    """Shared trunk, then the three heads.

    Returns (mu (D, N'), sigma_sq_z (D, N'), rho (C,)) where rho is the
    softmax of the time-averaged class logits.
    """
    h = np.asarray(s_norm, dtype=np.float64)
    if h.shape[0] != bundle.freq_bins:
        raise ValueError(f"input has {h.shape[0]} bins but model expects {bundle.freq_bins}")
    for layer in bundle.encoder_trunk:
        h = _apply_layer(h, layer)
    mu = _apply_layer(h, bundle.mu_head)
    sigma_sq_z = np.exp(_apply_layer(h, bundle.logvar_head))
    logits = _apply_layer(h, bundle.class_head)
    rho = _softmax(logits.mean(axis=1))
    return mu, sigma_sq_z, rho


def decoder_forward(bundle: ModelBundle, z, c, n_frames=None):
    """Variance decoder: exp of the network output, floored.

    The class vector is broadcast along time and concatenated to the input of
    every deconvolution stage. When n_frames is given the (stride-padded)
    output is cropped to that many frames.
    """
    z = np.asarray(z, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    if c.shape != (bundle.class_count,):
        raise ValueError(f"class vector has shape {c.shape}, expected ({bundle.class_count},)")
    h = z
    for layer in bundle.decoder:
        h = np.concatenate([h, np.tile(c[:, None], (1, h.shape[1]))], axis=0)
        h = _apply_layer(h, layer)
    if n_frames is not None:
        if h.shape[1] < n_frames:
            raise ValueError(f"decoder produced {h.shape[1]} frames, needs >= {n_frames}")
        h = h[:, :n_frames]
    return np.maximum(np.exp(h), VAR_FLOOR)


def infer_class(bundle: ModelBundle, s_norm):
    """Soft class probabilities for a normalized spectrogram (no argmax)."""
    _, _, rho = encoder_forward(bundle, s_norm)
    return rho


def infer_latent_poe(mu, sigma_sq_z, alpha=0.0):
    """Shrink the encoder mean toward the prior: z = mu / (1 + alpha*sigma^2).

    alpha = 0 returns the mean exactly.
    """
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    mu = np.asarray(mu, dtype=np.float64)
    if alpha == 0.0:
        return mu.copy()
    return mu / (1.0 + alpha * np.asarray(sigma_sq_z, dtype=np.float64))


@dataclass
class NeuralSourceState:
    z: np.ndarray  # (D, N')
    c: np.ndarray  # (C,), sums to 1
    g: float  # power gain, > 0
    sigma_sq: np.ndarray  # (F, N) decoder variance, >= VAR_FLOOR


def features(power, g, amp_norm=False):
    """log of the gain-normalized power spectrogram. amp_norm treats g as an
    amplitude divisor (power / g^2) instead of a power divisor."""
    denom = g * g if amp_norm else g
    return np.log(power / max(denom, VAR_FLOOR) + VAR_FLOOR)


def neural_update(state, bundle: ModelBundle, y, alpha=0.0, amp_norm=False):
    """One source-model refresh for a separated spectrogram y (F, N).

    Refreshes the gain against the previous variance (all-ones on the first
    call), normalizes, infers class and latent, decodes the new variance,
    re-fits the gain, and returns (new_state, v) with v = g * sigma^2.
    """
    y = np.asarray(y)
    power = np.abs(y) ** 2
    prev_sigma = state.sigma_sq if state is not None else np.ones_like(power)
    g = max(update_gain(y, prev_sigma), VAR_FLOOR)
    feat = features(power, g, amp_norm=amp_norm)
    mu, sigma_sq_z, rho = encoder_forward(bundle, feat)
    z = infer_latent_poe(mu, sigma_sq_z, alpha)
    sigma_sq = decoder_forward(bundle, z, rho, n_frames=power.shape[1])
    g = max(update_gain(y, sigma_sq), VAR_FLOOR)
    v = np.maximum(g * sigma_sq, VAR_FLOOR)
    return NeuralSourceState(z=z, c=rho, g=g, sigma_sq=sigma_sq), v


class NeuralVarianceModel(SourceModel):
    """SourceModel adapter holding one NeuralSourceState per source."""

    def __init__(self, bundle: ModelBundle, n_sources, alpha=0.0, amp_norm=False):
        self.bundle = bundle
        self.n_sources = n_sources
        self.alpha = alpha
        self.amp_norm = amp_norm
        self.states = [None] * n_sources

    def update(self, j, y):
        self.states[j], v = neural_update(
            self.states[j], self.bundle, y, alpha=self.alpha, amp_norm=self.amp_norm
        )
        return v

    def gain(self, j):
        return self.states[j].g if self.states[j] is not None else 1.0
