"""Tensor and network data model plus on-disk formats.

Feature maps are dense 3-D arrays of raw 16-bit values addressed as
``p(i, x, y)`` = channel ``i``, column ``x``, row ``y``; numpy storage is
``values[channel, row, column]``.  The canonical *stream order* walks rows
top to bottom, columns left to right within a row, and channels fastest:

    p(0,0,0), p(1,0,0), ..., p(N-1,0,0), p(0,1,0), ...

File formats (all little-endian):

``.nht`` tensor     magic ``NHT1``; u16 channels, u16 height, u16 width,
                    u8 frac_bits; then channels*H*W i16 values in canonical
                    stream order.
``.nhw`` weights    magic ``NHW1``; u16 n_out, u16 n_in, u16 k, u8 frac_bits;
                    i16 weights in [out][in][row][col] order; then n_out
                    i32 biases (already shifted to accumulator precision).
network config      JSON, schema::

                        {"layers": [{"n_in", "n_out", "k", "h", "w", "pad",
                                     "relu", "pool", "encode", "frac_in",
                                     "frac_w", "frac_out", "weights": path}],
                         "fc": [{"n_in", "n_out", "relu", "frac_in",
                                 "frac_w", "frac_out", "weights": path}]}

                    ``fc`` is optional; ``weights`` may be null for
                    descriptors used only with synthetic activations.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from .fxp import QFormat

MAX_CHANNELS = 1024
MAX_DIM = 512
MAX_KERNEL = 7
MAX_PAD = 3


class ValidationError(ValueError):
    """A descriptor or tensor violates a structural limit."""


class FileFormatError(ValueError):
    """A binary or JSON input file does not parse as expected."""


# ---------------------------------------------------------------------------
# tensors


@dataclass
class FeatureMapTensor:
    values: np.ndarray  # int16, shape (channels, height, width)
    qformat: QFormat

    def __post_init__(self):
        v = self.values
        if v.ndim != 3:
            raise ValidationError(f"tensor must be 3-D, got shape {v.shape}")
        c, h, w = v.shape
        if not 1 <= c <= MAX_CHANNELS:
            raise ValidationError(f"channels {c} outside [1, {MAX_CHANNELS}]")
        if not (1 <= h <= MAX_DIM and 1 <= w <= MAX_DIM):
            raise ValidationError(f"dims {h}x{w} outside [1, {MAX_DIM}]")
        if v.dtype != np.int16:
            self.values = v.astype(np.int16)

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]

    @property
    def pixel_count(self) -> int:
        return self.values.size


def stream_order_iter(t: FeatureMapTensor) -> Iterator[tuple[int, int, int, int]]:
    """Yield every pixel exactly once as (channel, x, y, raw) in stream order."""
    v = t.values
    for y in range(t.height):
        for x in range(t.width):
            for i in range(t.channels):
                yield (i, x, y, int(v[i, y, x]))


def stream_order_values(t: FeatureMapTensor) -> np.ndarray:
    """Flat int16 view of the tensor in canonical stream order."""
    return np.ascontiguousarray(np.transpose(t.values, (1, 2, 0))).reshape(-1)


def sparsity(t: FeatureMapTensor) -> float:
    """Fraction of zero-valued pixels, in [0, 1]."""
    if t.pixel_count == 0:
        raise ValidationError("sparsity of empty tensor is undefined")
    return float(np.count_nonzero(t.values == 0)) / t.pixel_count


def synthetic_tensor(
    channels: int,
    height: int,
    width: int,
    target_sparsity: float,
    rng: np.random.Generator,
    qformat: QFormat = QFormat(8),
    burst_mean: Optional[float] = None,
) -> FeatureMapTensor:
    """Random tensor with roughly ``target_sparsity`` zero pixels.

    With ``burst_mean`` set, zeros arrive in runs of that mean length along
    the stream order, mimicking the clustered inactivity of post-ReLU
    feature maps; otherwise zero positions are i.i.d. uniform.
    """
    n = channels * height * width
    if not 0.0 <= target_sparsity <= 1.0:
        raise ValidationError("sparsity must be in [0, 1]")
    if burst_mean is None:
        mask = rng.random(n) >= target_sparsity  # True = non-zero
    else:
        # two-state Markov chain over the flat stream: mean zero-run length
        # burst_mean, stationary zero probability target_sparsity
        p_exit_zero = min(1.0, 1.0 / burst_mean)
        s = target_sparsity
        p_enter_zero = (
            1.0 if s >= 1.0 else min(1.0, p_exit_zero * s / max(1e-12, 1.0 - s))
        )
        u = rng.random(n)
        mask = np.empty(n, dtype=bool)
        in_zero = rng.random() < s
        for j in range(n):
            mask[j] = not in_zero
            if in_zero:
                in_zero = u[j] >= p_exit_zero
            else:
                in_zero = u[j] < p_enter_zero
    vals = rng.integers(1, 1 << 12, size=n, dtype=np.int16)
    signs = rng.integers(0, 2, size=n, dtype=np.int16) * 2 - 1
    flat = np.where(mask, vals * signs, 0).astype(np.int16)
    shaped = flat.reshape(height, width, channels).transpose(2, 0, 1)
    return FeatureMapTensor(np.ascontiguousarray(shaped), qformat)


# ---------------------------------------------------------------------------
# kernels


@dataclass
class KernelSet:
    weights: np.ndarray  # int16, shape (n_out, n_in, k, k)
    bias: np.ndarray  # int32, shape (n_out,), accumulator precision
    qformat: QFormat

    def __post_init__(self):
        w = self.weights
        if w.ndim != 4 or w.shape[2] != w.shape[3]:
            raise ValidationError(f"weights must be (n_out, n_in, k, k), got {w.shape}")
        if not 1 <= w.shape[2] <= MAX_KERNEL:
            raise ValidationError(f"kernel size {w.shape[2]} outside [1, {MAX_KERNEL}]")
        if self.bias.shape != (w.shape[0],):
            raise ValidationError("bias length must equal n_out")
        if w.dtype != np.int16:
            self.weights = w.astype(np.int16)
        if self.bias.dtype != np.int32:
            self.bias = self.bias.astype(np.int32)

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def k(self) -> int:
        return self.weights.shape[2]


def quantize_kernel_set(
    weights: np.ndarray, bias: np.ndarray, frac_w: int, frac_in: int
) -> KernelSet:
    """Quantize real-valued weights/biases; biases land in accumulator format."""
    from .fxp import quantize_array

    qw = QFormat(frac_w)
    w = quantize_array(np.asarray(weights, dtype=np.float64), qw)
    acc_scale = 1 << (frac_w + frac_in)
    b = np.clip(
        np.rint(np.asarray(bias, dtype=np.float64) * acc_scale),
        -(1 << 31),
        (1 << 31) - 1,
    ).astype(np.int32)
    return KernelSet(w, b, qw)


# ---------------------------------------------------------------------------
# layer / network descriptors


@dataclass
class LayerDescriptor:
    n_in: int
    n_out: int
    h: int
    w: int
    k: int
    pad: int = 0
    relu: bool = True
    pool: bool = False
    encode: bool = True
    frac_in: int = 8
    frac_w: int = 8
    frac_out: int = 8
    weights_path: Optional[str] = None
    name: str = ""

    def __post_init__(self):
        if not 1 <= self.n_in <= MAX_CHANNELS:
            raise ValidationError(f"{self.name or 'layer'}: n_in {self.n_in} out of range")
        if not 1 <= self.n_out <= MAX_CHANNELS:
            raise ValidationError(f"{self.name or 'layer'}: n_out {self.n_out} out of range")
        if not (1 <= self.h <= MAX_DIM and 1 <= self.w <= MAX_DIM):
            raise ValidationError(f"{self.name or 'layer'}: dims {self.h}x{self.w} out of range")
        if not 1 <= self.k <= MAX_KERNEL:
            raise ValidationError(f"{self.name or 'layer'}: kernel {self.k} out of range")
        if not 0 <= self.pad <= MAX_PAD:
            raise ValidationError(f"{self.name or 'layer'}: pad {self.pad} out of range")
        if self.conv_h < 1 or self.conv_w < 1:
            raise ValidationError(f"{self.name or 'layer'}: empty convolution output")
        if self.pool and (self.conv_h < 2 or self.conv_w < 2):
            raise ValidationError(f"{self.name or 'layer'}: output too small to pool")

    # spatial dims before pooling
    @property
    def conv_h(self) -> int:
        return self.h + 2 * self.pad - self.k + 1

    @property
    def conv_w(self) -> int:
        return self.w + 2 * self.pad - self.k + 1

    # final output dims (pooling halves with floor)
    @property
    def out_h(self) -> int:
        return self.conv_h // 2 if self.pool else self.conv_h

    @property
    def out_w(self) -> int:
        return self.conv_w // 2 if self.pool else self.conv_w

    @property
    def out_shape(self) -> tuple[int, int, int]:
        return (self.n_out, self.out_h, self.out_w)

    @property
    def dense_macs(self) -> int:
        """Multiply count of the dense workload (pre-pool conv outputs)."""
        return self.n_out * self.n_in * self.k * self.k * self.conv_h * self.conv_w

    @property
    def in_qformat(self) -> QFormat:
        return QFormat(self.frac_in)

    @property
    def out_qformat(self) -> QFormat:
        return QFormat(self.frac_out)

    @property
    def acc_frac(self) -> int:
        return self.frac_in + self.frac_w


@dataclass
class DenseLayerDescriptor:
    n_in: int
    n_out: int
    relu: bool = True
    frac_in: int = 8
    frac_w: int = 8
    frac_out: int = 8
    weights_path: Optional[str] = None


@dataclass
class NetworkDescriptor:
    layers: list[LayerDescriptor]
    fc: list[DenseLayerDescriptor] = field(default_factory=list)
    name: str = ""

    def __post_init__(self):
        if not self.layers:
            raise ValidationError("network has no layers")
        for i in range(len(self.layers) - 1):
            a, b = self.layers[i], self.layers[i + 1]
            if a.out_shape != (b.n_in, b.h, b.w):
                raise ValidationError(
                    f"layer {i} output {a.out_shape} does not match "
                    f"layer {i + 1} input ({b.n_in}, {b.h}, {b.w})"
                )


_LAYER_KEYS = (
    "n_in", "n_out", "k", "h", "w", "pad",
    "relu", "pool", "encode", "frac_in", "frac_w", "frac_out",
)


def load_network(path: str) -> NetworkDescriptor:
    """Parse and fully validate a network config file."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise FileFormatError(f"cannot parse network config {path}: {e}") from e
    if not isinstance(doc, dict) or "layers" not in doc:
        raise FileFormatError(f"{path}: missing 'layers'")
    base = os.path.dirname(os.path.abspath(path))

    def resolve(p):
        if p is None:
            return None
        return p if os.path.isabs(p) else os.path.join(base, p)

    layers = []
    for idx, entry in enumerate(doc["layers"]):
        missing = [kk for kk in _LAYER_KEYS if kk not in entry]
        if missing:
            raise FileFormatError(f"{path}: layer {idx} missing keys {missing}")
        try:
            layers.append(
                LayerDescriptor(
                    n_in=int(entry["n_in"]), n_out=int(entry["n_out"]),
                    h=int(entry["h"]), w=int(entry["w"]), k=int(entry["k"]),
                    pad=int(entry["pad"]), relu=bool(entry["relu"]),
                    pool=bool(entry["pool"]), encode=bool(entry["encode"]),
                    frac_in=int(entry["frac_in"]), frac_w=int(entry["frac_w"]),
                    frac_out=int(entry["frac_out"]),
                    weights_path=resolve(entry.get("weights")),
                    name=f"conv{idx + 1}",
                )
            )
        except ValidationError as e:
            raise ValidationError(f"{path}: layer {idx}: {e}") from e
    fc = []
    for idx, entry in enumerate(doc.get("fc", []) or []):
        fc.append(
            DenseLayerDescriptor(
                n_in=int(entry["n_in"]), n_out=int(entry["n_out"]),
                relu=bool(entry.get("relu", True)),
                frac_in=int(entry.get("frac_in", 8)),
                frac_w=int(entry.get("frac_w", 8)),
                frac_out=int(entry.get("frac_out", 8)),
                weights_path=resolve(entry.get("weights")),
            )
        )
    return NetworkDescriptor(layers, fc, name=doc.get("name", ""))


def save_network(net: NetworkDescriptor, path: str) -> None:
    doc = {"name": net.name, "layers": [], "fc": []}
    for l in net.layers:
        doc["layers"].append(
            {
                "n_in": l.n_in, "n_out": l.n_out, "k": l.k, "h": l.h, "w": l.w,
                "pad": l.pad, "relu": l.relu, "pool": l.pool, "encode": l.encode,
                "frac_in": l.frac_in, "frac_w": l.frac_w, "frac_out": l.frac_out,
                "weights": l.weights_path,
            }
        )
    for d in net.fc:
        doc["fc"].append(
            {
                "n_in": d.n_in, "n_out": d.n_out, "relu": d.relu,
                "frac_in": d.frac_in, "frac_w": d.frac_w, "frac_out": d.frac_out,
                "weights": d.weights_path,
            }
        )
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2)


# ---------------------------------------------------------------------------
# binary tensor / weight files

_TENSOR_MAGIC = b"NHT1"
_WEIGHT_MAGIC = b"NHW1"


def save_tensor(t: FeatureMapTensor, path: str) -> None:
    with open(path, "wb") as f:
        f.write(_TENSOR_MAGIC)
        f.write(struct.pack("<HHHB", t.channels, t.height, t.width, t.qformat.frac_bits))
        f.write(stream_order_values(t).astype("<i2").tobytes())


def load_tensor(path: str) -> FeatureMapTensor:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != _TENSOR_MAGIC:
        raise FileFormatError(f"{path}: bad magic, not a tensor file")
    if len(blob) < 11:
        raise FileFormatError(f"{path}: truncated header")
    c, h, w, frac = struct.unpack("<HHHB", blob[4:11])
    expected = 11 + 2 * c * h * w
    if len(blob) != expected:
        raise FileFormatError(f"{path}: expected {expected} bytes, got {len(blob)}")
    flat = np.frombuffer(blob, dtype="<i2", offset=11).astype(np.int16)
    values = np.ascontiguousarray(flat.reshape(h, w, c).transpose(2, 0, 1))
    return FeatureMapTensor(values, QFormat(frac))


def save_weights(k: KernelSet, path: str) -> None:
    with open(path, "wb") as f:
        f.write(_WEIGHT_MAGIC)
        f.write(struct.pack("<HHHB", k.n_out, k.n_in, k.k, k.qformat.frac_bits))
        f.write(np.ascontiguousarray(k.weights).astype("<i2").tobytes())
        f.write(k.bias.astype("<i4").tobytes())


def load_weights(path: str) -> KernelSet:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != _WEIGHT_MAGIC:
        raise FileFormatError(f"{path}: bad magic, not a weight file")
    n_out, n_in, k, frac = struct.unpack("<HHHB", blob[4:11])
    n_w = n_out * n_in * k * k
    expected = 11 + 2 * n_w + 4 * n_out
    if len(blob) != expected:
        raise FileFormatError(f"{path}: expected {expected} bytes, got {len(blob)}")
    w = np.frombuffer(blob, dtype="<i2", offset=11, count=n_w).astype(np.int16)
    b = np.frombuffer(blob, dtype="<i4", offset=11 + 2 * n_w).astype(np.int32)
    return KernelSet(w.reshape(n_out, n_in, k, k).copy(), b.copy(), QFormat(frac))
