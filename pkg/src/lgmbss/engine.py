"""Local-Gaussian-model separation core: likelihood, iterative-projection
demixing updates, gain update, back-projection, and the outer loop that
alternates per-source variance-model updates with per-frequency IP updates.

Array conventions:
    x  (F, N, I) complex  observed spectrogram
    W  (F, I, I) complex  demixing stack; column j of W[f] is w_j(f), and the
                          separation applied is y_j = w_j^H x
    v  (J, F, N) float    per-source variance fields, strictly positive
"""

import time
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .sigproc import ComplexSpectrogram

__all__ = [
    "VAR_FLOOR",
    "SourceModel",
    "SeparationResult",
    "identity_demix",
    "demix",
    "neg_loglik",
    "weighted_spatial_covariance",
    "ip_update",
    "update_gain",
    "back_project",
    "separate",
]

VAR_FLOOR = 1e-10  # floor applied to every variance field
_COND_LIMIT = 1e12  # near-singular threshold for the IP linear system
_REG_SCALE = 1e-10  # Tikhonov scale (times trace) for the one retry


class SourceModel(ABC):
    """Per-mixture variance model driven once per source per outer iteration."""

    n_sources: int

    @abstractmethod
    def update(self, j: int, y: np.ndarray) -> np.ndarray:
        """Refresh source j's parameters from its separated spectrogram
        y (F, N) and return the updated variance field (F, N), > 0."""

    def gain(self, j: int) -> float:
        """Current power gain of source j (1.0 for models without one)."""
        return 1.0


@dataclass
class SeparationResult:
    demix: np.ndarray  # (F, I, I)
    sources: ComplexSpectrogram  # back-projected, (F, N, J)
    neg_loglik: list = field(default_factory=list)  # one entry per iteration
    iter_seconds: list = field(default_factory=list)


def _spec_data(x):
    return x.data if isinstance(x, ComplexSpectrogram) else np.asarray(x)


def _like(template, data):
    if isinstance(template, ComplexSpectrogram):
        return ComplexSpectrogram(data, template.sample_rate, template.win_len, template.hop)
    return data


def identity_demix(n_freq, n_chan):
    return np.tile(np.eye(n_chan, dtype=np.complex128), (n_freq, 1, 1))


def demix(x, w):
    """Apply y_j(f, n) = w_j(f)^H x(f, n) for all sources at once."""
    data = _spec_data(x)
    w = np.asarray(w)
    if w.shape[1] != data.shape[2]:
        raise ValueError(
            f"demixing stack is {w.shape[1]}x{w.shape[2]} but input has {data.shape[2]} channels"
        )
    y = np.einsum("fij,fni->fnj", w.conj(), data)
    return _like(x, y)


def _demix_row(data, w, j):
    return np.einsum("fi,fni->fn", w[:, :, j].conj(), data)


def neg_loglik(x, w, v) -> float:
    """Negative log-likelihood up to constants:
    -2N sum_f log|det W^H(f)| + sum_{j,f,n} (log v_j + |w_j^H x|^2 / v_j).

    A singular W(f) yields +inf rather than raising.
    """
    data = _spec_data(x)
    w = np.asarray(w)
    v = np.asarray(v)
    n_frames = data.shape[1]
    _, logabsdet = np.linalg.slogdet(np.conj(np.swapaxes(w, 1, 2)))
    if not np.all(np.isfinite(logabsdet)):
        return float("inf")
    y = demix(data, w)  # (F, N, J)
    p = np.abs(y) ** 2
    vt = np.transpose(v, (1, 2, 0))  # (F, N, J)
    term = float(np.sum(np.log(vt) + p / vt))
    return -2.0 * n_frames * float(np.sum(logabsdet)) + term


def weighted_spatial_covariance(x_f, v_jf):
    """Sigma_j(f) = (1/N) sum_n x(f,n) x(f,n)^H / v_j(f,n) for one frequency.

    x_f: (N, I) complex, v_jf: (N,) positive.
    """
    x_f = np.asarray(x_f)
    v_jf = np.asarray(v_jf, dtype=np.float64)
    if np.any(v_jf <= 0.0):
        raise ValueError("variance weights must be strictly positive")
    return np.einsum("na,n,nb->ab", x_f, 1.0 / v_jf, x_f.conj()) / x_f.shape[0]


def _covariances(data, v_j):
    # batched Sigma_j over frequency: (F, I, I)
    return np.einsum("fna,fn,fnb->fab", data, 1.0 / v_j, data.conj()) / data.shape[1]


def ip_update(w_f, sigma_j, j):
    """One iterative-projection row update at a single frequency.

    Solves (W^H Sigma_j) w_j = e_j, then normalizes so w_j^H Sigma_j w_j = 1.
    A near-singular system is regularized once by (trace * 1e-10) * I.
    Returns the new column w_j(f).
    """
    w_f = np.asarray(w_f)
    sigma = np.asarray(sigma_j)
    n = w_f.shape[0]
    e = np.zeros(n, dtype=np.complex128)
    e[j] = 1.0
    for attempt in range(2):
        a = w_f.conj().T @ sigma
        try:
            bad = np.linalg.cond(a) > _COND_LIMIT
            wj = None if bad else np.linalg.solve(a, e)
        except np.linalg.LinAlgError:
            wj = None
        if wj is not None:
            denom = float(np.real(wj.conj() @ sigma @ wj))
            if np.isfinite(denom) and denom > 0.0 and np.all(np.isfinite(wj)):
                return wj / np.sqrt(denom)
        if attempt == 0:
            sigma = sigma + (_REG_SCALE * np.real(np.trace(sigma))) * np.eye(n)
    raise np.linalg.LinAlgError(f"IP system singular for source {j} even after regularization")


def _ip_update_block(w, sigmas, j, fsel=slice(None)):
    """Vectorized IP row update over a frequency slice. Mutates w in place.

    Frequencies whose batched solve comes back non-finite fall through to the
    scalar ip_update path, which carries the regularized retry.
    """
    sig = sigmas[fsel]
    n = w.shape[1]
    e = np.zeros(n, dtype=np.complex128)
    e[j] = 1.0
    a = np.matmul(np.conj(np.swapaxes(w[fsel], 1, 2)), sig)
    try:
        wj = np.linalg.solve(a, np.broadcast_to(e[:, None], (a.shape[0], n, 1)))[..., 0]
    except np.linalg.LinAlgError:
        wj = np.full((sig.shape[0], n), np.nan, dtype=np.complex128)
    with np.errstate(invalid="ignore"):
        denom = np.real(np.einsum("fi,fij,fj->f", wj.conj(), sig, wj))
        ok = np.isfinite(denom) & (denom > 0.0) & np.all(np.isfinite(wj), axis=1)
    freqs = np.arange(w.shape[0])[fsel]
    if ok.any():
        w[freqs[ok], :, j] = wj[ok] / np.sqrt(denom[ok])[:, None]
    for f in freqs[~ok]:
        w[f, :, j] = ip_update(w[f], sigmas[f], j)


def _ip_update_all(w, data, v_j, j, threads=None):
    """IP row update for source j across all frequencies; identical to the
    sequential per-frequency result regardless of thread count."""
    sigmas = _covariances(data, v_j)
    n_freq = w.shape[0]
    if threads and threads > 1 and n_freq >= 2 * threads:
        bounds = np.linspace(0, n_freq, threads + 1, dtype=int)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [
                pool.submit(_ip_update_block, w, sigmas, j, slice(int(a), int(b)))
                for a, b in zip(bounds[:-1], bounds[1:])
                if b > a
            ]
            for fut in futures:
                fut.result()
    else:
        _ip_update_block(w, sigmas, j)


def update_gain(y, sigma_sq) -> float:
    """g = (1/FN) sum_{f,n} |y|^2 / sigma^2, the closed-form gain maximizer."""
    y = np.asarray(y)
    sigma_sq = np.asarray(sigma_sq, dtype=np.float64)
    if np.any(sigma_sq <= 0.0):
        raise ValueError("sigma_sq must be strictly positive")
    return float(np.mean((np.abs(y) ** 2) / sigma_sq))


def back_project(y, w, ref_ch=0):
    """Rescale each separated source to its image at the reference channel:
    source j is multiplied by the (ref_ch, j) entry of W^{-H}(f)."""
    data = _spec_data(y)
    w = np.asarray(w)
    try:
        winv_h = np.linalg.inv(np.conj(np.swapaxes(w, 1, 2)))
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError("singular demixing matrix; cannot back-project")
    scale = winv_h[:, ref_ch, :]  # (F, J)
    return _like(y, data * scale[:, None, :])


def separate(x, model: SourceModel, iters=60, ref_ch=0, threads=None) -> SeparationResult:
    """Run the alternating separation loop.

    Per outer iteration and per source j: demix row j, ask the model for an
    updated variance field, then apply the per-frequency IP update to row j.
    W starts from identity. Records the negative log-likelihood and wall-clock
    seconds of every iteration. Raises on non-finite variances or demixing
    entries, naming the iteration and source.
    """
    data = _spec_data(x)
    n_freq, n_frames, n_chan = data.shape
    if n_chan < 2:
        raise ValueError("separation needs at least 2 channels")
    if model.n_sources != n_chan:
        raise ValueError(
            f"model handles {model.n_sources} sources but input has {n_chan} channels"
        )
    w = identity_demix(n_freq, n_chan)
    if iters == 0:
        # nothing was estimated: return the identity-demixed input as-is
        # (back-projection is degenerate for an identity stack)
        return SeparationResult(demix=w, sources=_like(x, data.copy()))
    v = np.ones((n_chan, n_freq, n_frames))
    trace, seconds = [], []
    for it in range(iters):
        t0 = time.perf_counter()
        for j in range(n_chan):
            y_j = _demix_row(data, w, j)
            v_j = model.update(j, y_j)
            if not np.all(np.isfinite(v_j)):
                raise FloatingPointError(
                    f"non-finite variance at iteration {it}, source {j}"
                )
            v[j] = np.maximum(v_j, VAR_FLOOR)
            _ip_update_all(w, data, v[j], j, threads=threads)
            if not np.all(np.isfinite(w)):
                raise FloatingPointError(
                    f"non-finite demixing matrix at iteration {it}, source {j}"
                )
        seconds.append(time.perf_counter() - t0)
        trace.append(neg_loglik(data, w, v))
    projected = back_project(demix(data, w), w, ref_ch=ref_ch)
    return SeparationResult(
        demix=w, sources=_like(x, projected), neg_loglik=trace, iter_seconds=seconds
    )
