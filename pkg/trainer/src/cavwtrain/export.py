"""CAVW weight-container export.

Container layout: magic "CAVW" | u32 version=1 | u64 manifest length | UTF-8
JSON manifest | float32-LE tensors (row-major, out-channel-major, manifest
order: encoder trunk, mu head, log-variance head, class head, decoder; per
layer weight, bias, then gamma/beta when normalized) | u32 CRC32 of the
tensor section.
"""

import json
import struct
import zlib

import numpy as np

from .nets import Student

MAGIC = b"CAVW"
VERSION = 1
FEATURE_SPEC = "log-power, g-normalized"


def _layer_record(name, kind, weight, bias, stride, gamma=None, beta=None,
                  activation="silu"):
    out_ch, in_ch, kernel = weight.shape
    spec = {
        "name": name, "kind": kind, "in_ch": int(in_ch), "out_ch": int(out_ch),
        "kernel": int(kernel), "stride": int(stride),
        "norm": gamma is not None, "activation": activation,
    }
    tensors = [weight, bias]
    if gamma is not None:
        tensors += [gamma, beta]
    return spec, tensors


def _np(t):
    return t.detach().cpu().numpy().astype(np.float32)


def _conv_block_record(name, block):
    weight = _np(block.conv.weight)  # (out, in, k)
    gamma = _np(block.norm.weight) if block.norm is not None else None
    beta = _np(block.norm.bias) if block.norm is not None else None
    return _layer_record(
        name, "conv1d", weight, _np(block.conv.bias), block.stride,
        gamma, beta, "silu" if block.act else "none",
    )


def _deconv_block_record(name, block):
    # conv_transpose stores (in, out, k); the container is out-channel-major
    weight = np.transpose(_np(block.deconv.weight), (1, 0, 2)).copy()
    gamma = _np(block.norm.weight) if block.norm is not None else None
    beta = _np(block.norm.bias) if block.norm is not None else None
    return _layer_record(
        name, "deconv1d", weight, _np(block.deconv.bias), block.stride,
        gamma, beta, "silu" if block.act else "none",
    )


def _head_record(name, conv):
    weight = _np(conv.weight)
    return _layer_record(name, "conv1d", weight, _np(conv.bias), 1, activation="none")


def export_weights(student: Student, path):
    """Serialize a trained student to a CAVW container; deterministic bytes
    for fixed weights."""
    cfg = student.cfg
    enc = student.encoder
    records = []
    for k, block in enumerate(enc.trunk):
        records.append(_conv_block_record(f"enc{k}", block))
    records.append(_head_record("mu", enc.mu_head))
    records.append(_head_record("logvar", enc.logvar_head))
    records.append(_head_record("cls", enc.class_head))
    dec_specs = []
    for k, block in enumerate(student.decoder.blocks):
        records.append(_deconv_block_record(f"dec{k}", block))
        dec_specs.append(records[-1][0])
    trunk_specs = [records[k][0] for k in range(len(enc.trunk))]
    manifest = {
        "latent_dim": cfg.latent_dim,
        "class_count": cfg.class_count,
        "freq_bins": cfg.freq_bins,
        "feature_spec": FEATURE_SPEC,
        "encoder_trunk": trunk_specs,
        "mu_head": records[len(enc.trunk)][0],
        "logvar_head": records[len(enc.trunk) + 1][0],
        "class_head": records[len(enc.trunk) + 2][0],
        "decoder": dec_specs,
    }
    payload = json.dumps(manifest, sort_keys=True).encode("utf-8")
    section = b"".join(
        np.ascontiguousarray(t, dtype="<f4").tobytes()
        for _, tensors in records for t in tensors
    )
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(payload)))
        fh.write(payload)
        fh.write(section)
        fh.write(struct.pack("<I", zlib.crc32(section)))
    return path
