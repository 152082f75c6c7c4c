"""Shared oracles and case generators.

The naive layer oracle below is written as plain quadruple loops over
scalar fixed-point ops, on purpose: it shares no code path with either the
vectorized golden model or the pipeline simulator it cross-checks.
"""

import numpy as np
import pytest

from nhsim import fxp
from nhsim.fxp import QFormat
from nhsim.netmodel import FeatureMapTensor, KernelSet, LayerDescriptor


def naive_layer_forward(t: FeatureMapTensor, layer: LayerDescriptor, kern: KernelSet):
    """Quadruple-loop scalar reference for a full layer."""
    v = t.values.tolist()
    w = kern.weights.tolist()
    bias = kern.bias.tolist()
    k, pad = layer.k, layer.pad
    oh, ow = layer.conv_h, layer.conv_w
    out = [[[0] * ow for _ in range(oh)] for _ in range(layer.n_out)]
    for j in range(layer.n_out):
        for oy in range(oh):
            for ox in range(ow):
                acc = bias[j]
                for i in range(layer.n_in):
                    for dy in range(k):
                        for dx in range(k):
                            iy = oy + dy - pad
                            ix = ox + dx - pad
                            if 0 <= iy < layer.h and 0 <= ix < layer.w:
                                acc += w[j][i][dy][dx] * v[i][iy][ix]
                acc = fxp.saturate32(acc)
                r = fxp.requantize(acc, layer.acc_frac, layer.out_qformat)
                if layer.relu:
                    r = fxp.relu16(r)
                out[j][oy][ox] = r
    if layer.pool:
        h2, w2 = oh // 2, ow // 2
        pooled = [[[0] * w2 for _ in range(h2)] for _ in range(layer.n_out)]
        for j in range(layer.n_out):
            for py in range(h2):
                for px in range(w2):
                    pooled[j][py][px] = max(
                        out[j][2 * py][2 * px],
                        out[j][2 * py][2 * px + 1],
                        out[j][2 * py + 1][2 * px],
                        out[j][2 * py + 1][2 * px + 1],
                    )
        out = pooled
    return np.array(out, dtype=np.int16)


def random_tensor(rng, channels, h, w, sparsity=0.5, frac=8, lo=-512, hi=512):
    vals = rng.integers(lo, hi + 1, size=(channels, h, w))
    mask = rng.random((channels, h, w)) >= sparsity
    return FeatureMapTensor((vals * mask).astype(np.int16), QFormat(frac))


def random_kernels(rng, n_out, n_in, k, frac=10, wmax=256, bmax=1 << 18):
    w = rng.integers(-wmax, wmax + 1, size=(n_out, n_in, k, k)).astype(np.int16)
    b = rng.integers(-bmax, bmax, size=n_out).astype(np.int32)
    return KernelSet(w, b, QFormat(frac))


@pytest.fixture
def rng():
    return np.random.default_rng(20240831)
