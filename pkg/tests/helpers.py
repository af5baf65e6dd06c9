"""Shared test utilities: independent naive-loop oracles and fixture builders.

Everything here is deliberately written as straightforward loops so the
vectorized implementations are checked against a second, independent route.
"""

import numpy as np
from scipy.ndimage import uniform_filter

from lgmbss.engine import separate
from lgmbss.metrics import permute_align
from lgmbss.sigproc import ComplexSpectrogram, Waveform, istft, stft
from lgmbss.weights import LayerSpec, LayerWeights, ModelBundle


# ---------------------------------------------------------------------------
# naive signal references
# ---------------------------------------------------------------------------

def naive_dft(frame):
    """O(n^2) one-sided DFT of a single real frame."""
    n = len(frame)
    out = np.zeros(n // 2 + 1, dtype=np.complex128)
    for k in range(n // 2 + 1):
        for t in range(n):
            out[k] += frame[t] * np.exp(-2j * np.pi * k * t / n)
    return out


# ---------------------------------------------------------------------------
# naive network kernels
# ---------------------------------------------------------------------------

def same_pad(n, kernel, stride):
    n_out = -(-n // stride)
    total = max((n_out - 1) * stride + kernel - n, 0)
    return n_out, total // 2, total - total // 2


def naive_conv1d(x, weight, bias, stride):
    c_out, c_in, kernel = weight.shape
    n = x.shape[1]
    n_out, pl, _ = same_pad(n, kernel, stride)
    xp = np.zeros((c_in, n + kernel + stride * n))
    xp[:, pl : pl + n] = x
    out = np.zeros((c_out, n_out))
    for o in range(c_out):
        for t in range(n_out):
            acc = bias[o]
            for c in range(c_in):
                for u in range(kernel):
                    acc += weight[o, c, u] * xp[c, t * stride + u]
            out[o, t] = acc
    return out


def naive_deconv1d(y, weight, bias, stride):
    c_out, c_in, kernel = weight.shape
    m = y.shape[1]
    n = m * stride
    _, pl, _ = same_pad(n, kernel, stride)
    out = np.zeros((c_out, n))
    for c in range(c_out):
        for i in range(c_in):
            for t in range(m):
                for u in range(kernel):
                    pos = t * stride + u - pl
                    if 0 <= pos < n:
                        out[c, pos] += weight[c, i, u] * y[i, t]
    return out + bias[:, None]


def naive_layer_norm(x, gamma, beta, eps=1e-5):
    c, n = x.shape
    out = np.zeros_like(x)
    for t in range(n):
        col = x[:, t]
        mu = sum(col) / c
        var = sum((v - mu) ** 2 for v in col) / c
        for i in range(c):
            out[i, t] = gamma[i] * (col[i] - mu) / np.sqrt(var + eps) + beta[i]
    return out


def naive_silu(x):
    return np.vectorize(lambda u: u * (1.0 / (1.0 + np.exp(-u))))(x)


def naive_apply(x, lw):
    kind = lw.spec.kind
    h = (naive_conv1d if kind == "conv1d" else naive_deconv1d)(
        x, lw.weight, lw.bias, lw.spec.stride
    )
    if lw.spec.norm:
        h = naive_layer_norm(h, lw.gamma, lw.beta)
    if lw.spec.activation == "silu":
        h = naive_silu(h)
    return h


def naive_encoder(bundle, s_norm):
    h = np.asarray(s_norm, dtype=np.float64)
    for lw in bundle.encoder_trunk:
        h = naive_apply(h, lw)
    mu = naive_apply(h, bundle.mu_head)
    sig = np.exp(naive_apply(h, bundle.logvar_head))
    logits = naive_apply(h, bundle.class_head)
    mean = logits.mean(axis=1)
    e = np.exp(mean - mean.max())
    return mu, sig, e / e.sum()


def naive_decoder(bundle, z, c, n_frames=None):
    h = np.asarray(z, dtype=np.float64)
    for lw in bundle.decoder:
        h = np.concatenate([h, np.tile(np.asarray(c)[:, None], (1, h.shape[1]))], axis=0)
        h = naive_apply(h, lw)
    if n_frames is not None:
        h = h[:, :n_frames]
    return np.maximum(np.exp(h), 1e-10)


# ---------------------------------------------------------------------------
# bundle and mixture builders
# ---------------------------------------------------------------------------

def make_layer(name, kind, in_ch, out_ch, kernel, stride, norm, activation, rng, scale=0.3):
    spec = LayerSpec(name, kind, in_ch, out_ch, kernel, stride, norm, activation)
    f32 = lambda a: a.astype(np.float32).astype(np.float64)
    weight = f32(rng.standard_normal((out_ch, in_ch, kernel)) * scale)
    bias = f32(rng.standard_normal(out_ch) * 0.1)
    gamma = f32(rng.uniform(0.5, 1.5, out_ch)) if norm else None
    beta = f32(rng.standard_normal(out_ch) * 0.1) if norm else None
    return LayerWeights(spec, weight, bias, gamma, beta)


def random_bundle(freq_bins=9, latent_dim=3, class_count=2, widths=(8, 6), seed=0,
                  kernel=5, strides=(1, 2, 2)):
    """Small valid bundle with float32-representable random weights."""
    rng = np.random.default_rng(seed)
    chans = [freq_bins, *widths, widths[-1]]
    trunk = [
        make_layer(f"enc{k}", "conv1d", chans[k], chans[k + 1], kernel, strides[k], True, "silu", rng)
        for k in range(3)
    ]
    width = chans[-1]
    mu = make_layer("mu", "conv1d", width, latent_dim, 1, 1, False, "none", rng)
    logvar = make_layer("logvar", "conv1d", width, latent_dim, 1, 1, False, "none", rng)
    cls = make_layer("cls", "conv1d", width, class_count, 1, 1, False, "none", rng)
    dec_chans = [latent_dim, widths[-1], widths[0], freq_bins]
    dec_strides = strides[::-1]
    decoder = [
        make_layer(
            f"dec{k}", "deconv1d", dec_chans[k] + class_count, dec_chans[k + 1], kernel,
            dec_strides[k], k < 2, "silu" if k < 2 else "none", rng,
        )
        for k in range(3)
    ]
    return ModelBundle(
        latent_dim=latent_dim, class_count=class_count, freq_bins=freq_bins,
        feature_spec="log-power, g-normalized",
        encoder_trunk=trunk, mu_head=mu, logvar_head=logvar, class_head=cls, decoder=decoder,
    )


def lgm_sources(seed, n_src=2, duration_s=3.0, sample_rate=16000, win_ms=32.0, scale=3.0):
    """Time-domain sources synthesized from nonstationary Gaussian TF fields.

    Returns (sources list of 1-D arrays, win_len, hop).
    """
    rng = np.random.default_rng(seed)
    win = int(sample_rate * win_ms / 1000)
    hop = win // 2
    n = int(sample_rate * duration_s)
    n_freq, n_frames = win // 2 + 1, (n - win) // hop + 1
    out = []
    for _ in range(n_src):
        v = np.exp(rng.standard_normal((n_freq, n_frames)) * scale)
        v = uniform_filter(v, size=(3, 3)) + 0.01
        spec = np.sqrt(v / 2) * (
            rng.standard_normal((n_freq, n_frames)) + 1j * rng.standard_normal((n_freq, n_frames))
        )
        wav = istft(ComplexSpectrogram(spec[:, :, None], sample_rate, win, hop))
        out.append(wav.channel(0))
    return out, win, hop


def random_mixing(rng, n_src, cond_limit=10.0):
    """Well-conditioned random mixing in which every source keeps a clear
    image at every channel (so reference-channel scoring is meaningful)."""
    while True:
        mag = rng.uniform(0.3, 0.9, (n_src, n_src))
        sign = np.where(rng.random((n_src, n_src)) < 0.5, -1.0, 1.0)
        a = mag * sign
        np.fill_diagonal(a, 1.0)
        if np.linalg.cond(a) < cond_limit:
            return a


def separate_and_score(sources, mixing, sample_rate, win_ms, model_factory, iters=60,
                       threads=None):
    """Mix instantaneously, separate, istft, and permutation-align the scores.

    model_factory(spec) -> SourceModel. Returns (EvalReport, neg_loglik trace).
    """
    s = np.stack(sources, axis=1)
    x = s @ np.asarray(mixing).T
    spec = stft(Waveform(x, sample_rate), win_ms)
    model = model_factory(spec)
    result = separate(spec, model, iters=iters, threads=threads)
    span = (spec.n_frames - 1) * spec.hop + spec.win_len
    ests = [
        istft(
            ComplexSpectrogram(
                result.sources.data[:, :, j : j + 1], sample_rate, spec.win_len, spec.hop
            )
        ).channel(0)
        for j in range(len(sources))
    ]
    refs = [src[:span] for src in sources]
    _, report = permute_align(ests, refs, mix=x[:span, 0])
    return report, np.asarray(result.neg_loglik)


def monotone_violations(trace, rel_slack=1e-6):
    trace = np.asarray(trace)
    if len(trace) < 2:
        return 0
    diffs = np.diff(trace)
    return int((diffs > rel_slack * np.abs(trace[:-1])).sum())
