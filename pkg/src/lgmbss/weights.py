"""CAVW weight-container loading, validation, and writing.

Layout: magic "CAVW" | u32 version=1 | u64 manifest length | UTF-8 JSON
manifest | float32-LE tensor section (row-major, out-channel-major, in
manifest order) | u32 CRC32 of the tensor section.

Per layer the tensor order is weight (out_ch, in_ch, kernel), bias (out_ch,),
then gamma and beta (out_ch,) when the layer is normalized. Layer traversal
order: encoder trunk, mu head, log-variance head, class head, decoder layers.
"""

import json
import struct
import zlib
from dataclasses import dataclass

import numpy as np

__all__ = ["LayerSpec", "LayerWeights", "ModelBundle", "load_model", "save_model"]

MAGIC = b"CAVW"
VERSION = 1
FEATURE_SPEC = "log-power, g-normalized"

_KINDS = ("conv1d", "deconv1d")
_ACTIVATIONS = ("silu", "none")


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str  # conv1d | deconv1d
    in_ch: int
    out_ch: int
    kernel: int
    stride: int
    norm: bool  # layer normalization after the kernel
    activation: str  # silu | none

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"layer '{self.name}': unknown kind {self.kind!r}")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"layer '{self.name}': unknown activation {self.activation!r}")
        for fieldname in ("in_ch", "out_ch", "kernel", "stride"):
            if getattr(self, fieldname) < 1:
                raise ValueError(f"layer '{self.name}': {fieldname} must be >= 1")

    def to_dict(self):
        return {
            "name": self.name,
            "kind": self.kind,
            "in_ch": self.in_ch,
            "out_ch": self.out_ch,
            "kernel": self.kernel,
            "stride": self.stride,
            "norm": self.norm,
            "activation": self.activation,
        }

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(
                name=str(d["name"]),
                kind=str(d["kind"]),
                in_ch=int(d["in_ch"]),
                out_ch=int(d["out_ch"]),
                kernel=int(d["kernel"]),
                stride=int(d["stride"]),
                norm=bool(d["norm"]),
                activation=str(d["activation"]),
            )
        except KeyError as exc:
            raise ValueError(f"layer descriptor missing field {exc.args[0]!r}")


@dataclass
class LayerWeights:
    spec: LayerSpec
    weight: np.ndarray  # (out_ch, in_ch, kernel) float64 at runtime
    bias: np.ndarray  # (out_ch,)
    gamma: np.ndarray = None  # (out_ch,) when spec.norm
    beta: np.ndarray = None

    def tensors(self):
        out = [self.weight, self.bias]
        if self.spec.norm:
            out += [self.gamma, self.beta]
        return out


@dataclass
class ModelBundle:
    """Loaded unified encoder-classifier + conditional decoder."""

    latent_dim: int
    class_count: int
    freq_bins: int
    feature_spec: str
    encoder_trunk: list
    mu_head: LayerWeights
    logvar_head: LayerWeights
    class_head: LayerWeights
    decoder: list

    def all_layers(self):
        return [*self.encoder_trunk, self.mu_head, self.logvar_head, self.class_head, *self.decoder]


def _layer_tensor_shapes(spec: LayerSpec):
    shapes = [(spec.out_ch, spec.in_ch, spec.kernel), (spec.out_ch,)]
    if spec.norm:
        shapes += [(spec.out_ch,), (spec.out_ch,)]
    return shapes


def _validate_topology(bundle: ModelBundle):
    d, c, f = bundle.latent_dim, bundle.class_count, bundle.freq_bins
    trunk = bundle.encoder_trunk
    if not trunk:
        raise ValueError("encoder trunk is empty")
    if trunk[0].spec.in_ch != f:
        raise ValueError(
            f"layer '{trunk[0].spec.name}': in_ch {trunk[0].spec.in_ch} != freq_bins {f}"
        )
    for prev, cur in zip(trunk, trunk[1:]):
        if cur.spec.in_ch != prev.spec.out_ch:
            raise ValueError(
                f"layer '{cur.spec.name}': in_ch {cur.spec.in_ch} != "
                f"'{prev.spec.name}' out_ch {prev.spec.out_ch}"
            )
    width = trunk[-1].spec.out_ch
    for head, out, what in (
        (bundle.mu_head, d, "latent_dim"),
        (bundle.logvar_head, d, "latent_dim"),
        (bundle.class_head, c, "class_count"),
    ):
        if head.spec.in_ch != width:
            raise ValueError(
                f"layer '{head.spec.name}': in_ch {head.spec.in_ch} != trunk out_ch {width}"
            )
        if head.spec.out_ch != out:
            raise ValueError(
                f"layer '{head.spec.name}': out_ch {head.spec.out_ch} != {what} {out}"
            )
    prev_out = d
    for lw in bundle.decoder:
        if lw.spec.kind != "deconv1d":
            raise ValueError(f"layer '{lw.spec.name}': decoder layers must be deconv1d")
        if lw.spec.in_ch != prev_out + c:
            raise ValueError(
                f"layer '{lw.spec.name}': in_ch {lw.spec.in_ch} != previous out "
                f"{prev_out} + class_count {c}"
            )
        prev_out = lw.spec.out_ch
    if not bundle.decoder or bundle.decoder[-1].spec.out_ch != f:
        raise ValueError("decoder must end with out_ch == freq_bins")


def _validate_tensors(bundle: ModelBundle):
    for lw in bundle.all_layers():
        expected = _layer_tensor_shapes(lw.spec)
        actual = [t.shape for t in lw.tensors()]
        if expected != actual:
            raise ValueError(
                f"layer '{lw.spec.name}': tensor shapes {actual} != expected {expected}"
            )
        for t in lw.tensors():
            if not np.all(np.isfinite(t)):
                raise ValueError(f"layer '{lw.spec.name}': non-finite weights")


def _manifest_groups(manifest):
    for key in ("latent_dim", "class_count", "freq_bins", "encoder_trunk",
                "mu_head", "logvar_head", "class_head", "decoder"):
        if key not in manifest:
            raise ValueError(f"manifest missing field {key!r}")
    trunk = [LayerSpec.from_dict(d) for d in manifest["encoder_trunk"]]
    heads = [LayerSpec.from_dict(manifest[k]) for k in ("mu_head", "logvar_head", "class_head")]
    decoder = [LayerSpec.from_dict(d) for d in manifest["decoder"]]
    return trunk, heads, decoder


def load_model(path) -> ModelBundle:
    """Load and fully validate a CAVW container."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 16 or raw[:4] != MAGIC:
        raise ValueError(f"{path}: bad magic (not a CAVW container)")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported container version {version}")
    (mlen,) = struct.unpack_from("<Q", raw, 8)
    if 16 + mlen > len(raw):
        raise ValueError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(raw[16 : 16 + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValueError(f"{path}: malformed manifest: {exc}")
    trunk_specs, head_specs, decoder_specs = _manifest_groups(manifest)
    specs = [*trunk_specs, *head_specs, *decoder_specs]
    n_bytes = sum(
        4 * int(np.prod(shape)) for s in specs for shape in _layer_tensor_shapes(s)
    )
    tensor_start = 16 + mlen
    if tensor_start + n_bytes + 4 > len(raw):
        raise ValueError(f"{path}: truncated tensor section")
    section = raw[tensor_start : tensor_start + n_bytes]
    (crc_stored,) = struct.unpack_from("<I", raw, tensor_start + n_bytes)
    if zlib.crc32(section) != crc_stored:
        raise ValueError(f"{path}: tensor checksum mismatch")
    flat = np.frombuffer(section, dtype="<f4")
    pos = 0
    layers = []
    for spec in specs:
        tensors = []
        for shape in _layer_tensor_shapes(spec):
            size = int(np.prod(shape))
            tensors.append(flat[pos : pos + size].astype(np.float64).reshape(shape))
            pos += size
        gamma, beta = (tensors[2], tensors[3]) if spec.norm else (None, None)
        layers.append(LayerWeights(spec, tensors[0], tensors[1], gamma, beta))
    n_trunk, n_dec = len(trunk_specs), len(decoder_specs)
    bundle = ModelBundle(
        latent_dim=int(manifest["latent_dim"]),
        class_count=int(manifest["class_count"]),
        freq_bins=int(manifest["freq_bins"]),
        feature_spec=str(manifest.get("feature_spec", FEATURE_SPEC)),
        encoder_trunk=layers[:n_trunk],
        mu_head=layers[n_trunk],
        logvar_head=layers[n_trunk + 1],
        class_head=layers[n_trunk + 2],
        decoder=layers[n_trunk + 3 : n_trunk + 3 + n_dec],
    )
    _validate_topology(bundle)
    _validate_tensors(bundle)
    return bundle


def manifest_dict(bundle: ModelBundle):
    return {
        "latent_dim": bundle.latent_dim,
        "class_count": bundle.class_count,
        "freq_bins": bundle.freq_bins,
        "feature_spec": bundle.feature_spec,
        "encoder_trunk": [lw.spec.to_dict() for lw in bundle.encoder_trunk],
        "mu_head": bundle.mu_head.spec.to_dict(),
        "logvar_head": bundle.logvar_head.spec.to_dict(),
        "class_head": bundle.class_head.spec.to_dict(),
        "decoder": [lw.spec.to_dict() for lw in bundle.decoder],
    }


def save_model(path, bundle: ModelBundle):
    """Serialize a bundle to a CAVW container (used for fixtures and tests)."""
    _validate_topology(bundle)
    _validate_tensors(bundle)
    manifest = json.dumps(manifest_dict(bundle), sort_keys=True).encode("utf-8")
    parts = []
    for lw in bundle.all_layers():
        for t in lw.tensors():
            parts.append(np.ascontiguousarray(t, dtype="<f4").tobytes())
    section = b"".join(parts)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(manifest)))
        fh.write(manifest)
        fh.write(section)
        fh.write(struct.pack("<I", zlib.crc32(section)))
