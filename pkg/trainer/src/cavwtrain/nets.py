"""Teacher and student networks.

Convolution semantics mirror the inference engine exactly: strided
cross-correlation with ceil(N/s)-length "same" padding, and deconvolution as
the exact adjoint mapping M frames to M*stride. Layer normalization runs over
the channel axis per time step (eps 1e-5) and the activation is SiLU.
"""

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

LN_EPS = 1e-5


def _same_pad(n, kernel, stride):
    n_out = -(-n // stride)
    total = max((n_out - 1) * stride + kernel - n, 0)
    return n_out, total // 2, total - total // 2


def latent_frames(cfg, n_frames):
    """Frame count after the trunk's stride cascade."""
    for s in cfg.strides:
        n_frames = -(-n_frames // s)
    return n_frames


def conv_same(x, weight, bias, stride):
    """x (B, C, N) -> (B, C_out, ceil(N/stride)) with same-style padding."""
    n = x.shape[-1]
    _, pl, pr = _same_pad(n, weight.shape[-1], stride)
    return F.conv1d(F.pad(x, (pl, pr)), weight, bias, stride=stride)


def deconv_same(y, weight, bias, stride):
    """Adjoint of conv_same: y (B, C_in, M) -> (B, C_out, M*stride).

    weight follows the conv_transpose layout (C_in, C_out, kernel).
    """
    m = y.shape[-1]
    kernel = weight.shape[-1]
    n = m * stride
    _, pl, _ = _same_pad(n, kernel, stride)
    full = F.conv_transpose1d(y, weight, bias=None, stride=stride)
    if full.shape[-1] < pl + n:
        full = F.pad(full, (0, pl + n - full.shape[-1]))
    out = full[..., pl : pl + n]
    if bias is not None:
        out = out + bias[:, None]
    return out


class ConvBlock(nn.Module):
    """conv -> optional channel LayerNorm -> optional SiLU."""

    def __init__(self, in_ch, out_ch, kernel, stride, norm=True, act=True):
        super().__init__()
        self.conv = nn.Conv1d(in_ch, out_ch, kernel, stride=1, bias=True)
        self.stride = stride
        self.norm = nn.LayerNorm(out_ch, eps=LN_EPS) if norm else None
        self.act = act

    def forward(self, x):
        h = conv_same(x, self.conv.weight, self.conv.bias, self.stride)
        if self.norm is not None:
            h = self.norm(h.transpose(1, 2)).transpose(1, 2)
        return F.silu(h) if self.act else h


class DeconvBlock(nn.Module):
    def __init__(self, in_ch, out_ch, kernel, stride, norm=True, act=True):
        super().__init__()
        self.deconv = nn.ConvTranspose1d(in_ch, out_ch, kernel, stride=1, bias=True)
        self.stride = stride
        self.norm = nn.LayerNorm(out_ch, eps=LN_EPS) if norm else None
        self.act = act

    def forward(self, x):
        h = deconv_same(x, self.deconv.weight, self.deconv.bias, self.stride)
        if self.norm is not None:
            h = self.norm(h.transpose(1, 2)).transpose(1, 2)
        return F.silu(h) if self.act else h


@dataclass(frozen=True)
class NetConfig:
    freq_bins: int
    latent_dim: int = 8
    class_count: int = 2
    widths: tuple = (256, 128)
    kernel: int = 5
    strides: tuple = (1, 2, 2)


def _trunk(in_ch, cfg: NetConfig):
    w0, w1 = cfg.widths
    chans = [in_ch, w0, w1, w1]
    return nn.ModuleList(
        ConvBlock(chans[k], chans[k + 1], cfg.kernel, cfg.strides[k]) for k in range(3)
    )


class ConditionalDecoder(nn.Module):
    """Variance decoder; the class vector is concatenated (broadcast along
    time) to the input of every deconvolution stage. Output is log variance."""

    def __init__(self, cfg: NetConfig):
        super().__init__()
        self.cfg = cfg
        w0, w1 = cfg.widths
        d, c = cfg.latent_dim, cfg.class_count
        rev = cfg.strides[::-1]
        self.blocks = nn.ModuleList([
            DeconvBlock(d + c, w1, cfg.kernel, rev[0]),
            DeconvBlock(w1 + c, w0, cfg.kernel, rev[1]),
            DeconvBlock(w0 + c, cfg.freq_bins, cfg.kernel, rev[2], norm=False, act=False),
        ])

    def forward(self, z, c, n_frames=None):
        h = z
        for block in self.blocks:
            cexp = c[:, :, None].expand(-1, -1, h.shape[-1])
            h = block(torch.cat([h, cexp], dim=1))
        if n_frames is not None:
            h = h[..., :n_frames]
        return h  # log variance


class UnifiedEncoderClassifier(nn.Module):
    """Shared trunk with latent-statistics heads and a time-averaged class
    head (the student's encoder side)."""

    def __init__(self, cfg: NetConfig):
        super().__init__()
        self.cfg = cfg
        self.trunk = _trunk(cfg.freq_bins, cfg)
        w1 = cfg.widths[1]
        self.mu_head = nn.Conv1d(w1, cfg.latent_dim, 1)
        self.logvar_head = nn.Conv1d(w1, cfg.latent_dim, 1)
        self.class_head = nn.Conv1d(w1, cfg.class_count, 1)

    def forward(self, feat):
        h = feat
        for block in self.trunk:
            h = block(h)
        mu = self.mu_head(h)
        logvar = self.logvar_head(h)
        logits = self.class_head(h).mean(dim=-1)  # (B, C)
        return mu, logvar, logits


class ConditionedEncoder(nn.Module):
    """Teacher encoder: class one-hot is concatenated to the input features."""

    def __init__(self, cfg: NetConfig):
        super().__init__()
        self.cfg = cfg
        self.trunk = _trunk(cfg.freq_bins + cfg.class_count, cfg)
        w1 = cfg.widths[1]
        self.mu_head = nn.Conv1d(w1, cfg.latent_dim, 1)
        self.logvar_head = nn.Conv1d(w1, cfg.latent_dim, 1)

    def forward(self, feat, c):
        cexp = c[:, :, None].expand(-1, -1, feat.shape[-1])
        h = torch.cat([feat, cexp], dim=1)
        for block in self.trunk:
            h = block(h)
        return self.mu_head(h), self.logvar_head(h)


class Teacher(nn.Module):
    def __init__(self, cfg: NetConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = ConditionedEncoder(cfg)
        self.decoder = ConditionalDecoder(cfg)


class Student(nn.Module):
    def __init__(self, cfg: NetConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = UnifiedEncoderClassifier(cfg)
        self.decoder = ConditionalDecoder(cfg)

    def classify(self, feat):
        h = feat
        for block in self.encoder.trunk:
            h = block(h)
        return self.encoder.class_head(h).mean(dim=-1)
