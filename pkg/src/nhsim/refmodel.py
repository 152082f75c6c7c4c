"""Dense golden model for one layer: convolution, bias, ReLU, 2x2 max pool.

This is the correctness oracle for the pipeline simulator.  All arithmetic
is exact integer math: products accumulate in 64-bit, and each output
pixel's accumulator (bias plus every product) is clamped once to the
32-bit range before requantization, so results are independent of
accumulation order.
"""

from __future__ import annotations

import numpy as np

from .fxp import I32_MAX, I32_MIN, requantize_array
from .netmodel import FeatureMapTensor, KernelSet, LayerDescriptor, ValidationError


def _pad_input(values: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return values.astype(np.int64)
    c, h, w = values.shape
    out = np.zeros((c, h + 2 * pad, w + 2 * pad), dtype=np.int64)
    out[:, pad : pad + h, pad : pad + w] = values
    return out


def conv2d(t: FeatureMapTensor, kern: KernelSet, pad: int = 0) -> np.ndarray:
    """Exact convolution accumulator map, int64 clamped to 32-bit range.

    Output shape (n_out, H+2*pad-k+1, W+2*pad-k+1); bias is included.
    """
    if kern.n_in != t.channels:
        raise ValidationError(
            f"kernel expects {kern.n_in} input channels, tensor has {t.channels}"
        )
    if pad < 0 or pad > 3:
        raise ValidationError(f"pad {pad} outside [0, 3]")
    k = kern.k
    out_h = t.height + 2 * pad - k + 1
    out_w = t.width + 2 * pad - k + 1
    if out_h < 1 or out_w < 1:
        raise ValidationError("kernel larger than padded input")
    padded = _pad_input(t.values, pad)
    w64 = kern.weights.astype(np.int64)
    acc = np.zeros((kern.n_out, out_h, out_w), dtype=np.int64)
    acc += kern.bias.astype(np.int64)[:, None, None]
    for dy in range(k):
        for dx in range(k):
            window = padded[:, dy : dy + out_h, dx : dx + out_w]
            acc += np.tensordot(w64[:, :, dy, dx], window, axes=([1], [0]))
    return np.clip(acc, I32_MIN, I32_MAX)


def apply_relu(acc_map: np.ndarray) -> np.ndarray:
    """max(0, x), any integer map."""
    return np.maximum(acc_map, 0)


def maxpool2x2(acc_map: np.ndarray) -> np.ndarray:
    """Non-overlapping 2x2 max, stride 2; trailing odd row/column dropped."""
    c, h, w = acc_map.shape
    h2, w2 = h // 2, w // 2
    if h2 < 1 or w2 < 1:
        raise ValidationError("map too small for 2x2 pooling")
    trimmed = acc_map[:, : 2 * h2, : 2 * w2]
    return trimmed.reshape(c, h2, 2, w2, 2).max(axis=(2, 4))


def layer_forward(
    t: FeatureMapTensor, layer: LayerDescriptor, kern: KernelSet
) -> FeatureMapTensor:
    """Full layer: conv -> requantize -> optional ReLU -> optional pool."""
    if (t.channels, t.height, t.width) != (layer.n_in, layer.h, layer.w):
        raise ValidationError(
            f"input shape {(t.channels, t.height, t.width)} does not match "
            f"layer ({layer.n_in}, {layer.h}, {layer.w})"
        )
    if kern.n_out != layer.n_out or kern.k != layer.k:
        raise ValidationError("kernel set does not match layer descriptor")
    acc = conv2d(t, kern, layer.pad)
    out = requantize_array(acc, layer.acc_frac, layer.out_qformat)
    if layer.relu:
        out = apply_relu(out).astype(np.int16)
    if layer.pool:
        out = maxpool2x2(out).astype(np.int16)
    return FeatureMapTensor(out, layer.out_qformat)


def dense_forward(
    vec: np.ndarray,
    weights: np.ndarray,
    bias: np.ndarray,
    acc_frac: int,
    out_frac: int,
    relu: bool = True,
) -> np.ndarray:
    """Fully-connected tail, exact dot products; no performance model.

    ``acc_frac`` is the accumulator's fractional length (input frac plus
    weight frac); ``bias`` must already be in that format.
    """
    vec = np.asarray(vec, dtype=np.int64).reshape(-1)
    w = np.asarray(weights, dtype=np.int64)
    if w.shape[1] != vec.size:
        raise ValidationError(
            f"weight matrix expects {w.shape[1]} inputs, vector has {vec.size}"
        )
    acc = w @ vec + np.asarray(bias, dtype=np.int64)
    acc = np.clip(acc, I32_MIN, I32_MAX)
    from .fxp import QFormat

    out = requantize_array(acc, acc_frac, QFormat(out_frac))
    if relu:
        out = np.maximum(out, 0).astype(np.int16)
    return out
