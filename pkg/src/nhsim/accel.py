"""Zero-skipping accelerator pipeline: scheduling, simulation, accounting.

Functionally the simulator is bit-exact with :mod:`nhsim.refmodel`; its
timing is a transaction-level phase model, not an RTL-cycle reproduction.
Per pass over the input feature maps:

    cycles = kernel_load + prefill + max(compute, input_stream, output_drain)

* kernel_load streams two 16-bit kernel values per 32-bit bus word.
* prefill streams the input rows the first stripe needs; afterwards input
  loading overlaps with compute.
* compute charges each non-zero pixel the number of accumulator updates it
  triggers in its cluster (at most 2*k_w per stripe visit) and takes the
  maximum over clusters; a cluster with no input channels assigned stays
  idle, which is what starves small-kernel layers.  Decoding supplies at
  most k_h+1 pixels per cycle, which can bound compute for 1x1 kernels.
* output_drain follows the encoder (sparsity map plus first non-zero pixel
  in one cycle, then two pixels per cycle, 16 pixels per map segment) plus
  a log2(cluster)+1 partial-sum reduction per shifted-out column when
  clusters cooperate.

Work is split over passes when there are more output channels than MACs or
when one channel's kernels overflow a 4k-value memory bank; if compressed
input does not fit in pixel memory, multi-pass layers re-stream it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import IO, Iterator, Optional, Union

import numpy as np

from . import codec
from .codec import CompressedStream, RawPixelStream
from .fxp import I32_MAX, I32_MIN, requantize_array
from .netmodel import (
    FeatureMapTensor,
    KernelSet,
    LayerDescriptor,
    ValidationError,
)


@dataclass(frozen=True)
class HardwareConfig:
    macs: int = 128
    controllers: int = 8
    bus_bits: int = 32
    pixel_mem_bytes: int = 512 * 1024
    kernel_bank_values: int = 4096
    max_kernel: int = 7
    clock_hz: float = 500e6
    output_pixels_per_cycle: int = 2

    def __post_init__(self):
        if self.macs % self.controllers:
            raise ValidationError("controller count must divide MAC count")

    @property
    def peak_gops(self) -> float:
        """Theoretical peak at 2 ops per MAC per cycle."""
        return self.macs * self.clock_hz * 2.0 / 1e9


# ---------------------------------------------------------------------------
# scheduling


@dataclass(frozen=True)
class PassPlan:
    chan_start: int
    chan_count: int
    cluster_size: int  # MACs cooperating per output channel (v)
    bank_group: int  # banks jointly holding one channel's kernels
    active_controllers: int
    kernel_values: int  # values loaded for this pass

    @property
    def macs_used(self) -> int:
        return self.chan_count * self.cluster_size


@dataclass(frozen=True)
class LayerSchedule:
    n_in: int
    n_out: int
    k: int
    passes: tuple[PassPlan, ...]
    input_reload: bool
    values_per_bank: int

    @property
    def n_passes(self) -> int:
        return len(self.passes)


def dense_input_stream_bytes(layer: LayerDescriptor) -> int:
    """Upper bound on the compressed input size (fully dense image)."""
    row_px = layer.w * layer.n_in
    fields = layer.h * (-(-row_px // codec.SEGMENT_BITS) + row_px)
    return 4 * (-(-fields // 2))


def plan_layer(
    layer: LayerDescriptor,
    hw: HardwareConfig,
    input_stream_bytes: Optional[int] = None,
) -> LayerSchedule:
    """Derive the pass/cluster/bank plan for a layer; deterministic.

    With fewer output channels than MACs, floor(M / channels) MACs
    cooperate on each channel (one per cooperating controller, capped at
    the controller count for dispatch).  With more channels than MACs the
    channels are spread evenly over ceil(n_out / M) passes.  When one
    channel's kernels exceed a bank, banks are grouped and the channels per
    pass shrink accordingly.
    """
    if layer.k > hw.max_kernel:
        raise ValidationError(f"kernel {layer.k} exceeds hardware max {hw.max_kernel}")
    footprint = layer.n_in * layer.k * layer.k
    group = -(-footprint // hw.kernel_bank_values)
    max_chan = hw.macs // group
    if max_chan < 1:
        raise ValidationError(
            f"kernel footprint {footprint} values cannot be banked "
            f"({hw.macs} banks of {hw.kernel_bank_values})"
        )
    n_passes = -(-layer.n_out // max_chan)
    base, rem = divmod(layer.n_out, n_passes)
    passes = []
    start = 0
    for p in range(n_passes):
        count = base + (1 if p < rem else 0)
        v = max(group, hw.macs // count)
        passes.append(
            PassPlan(
                chan_start=start,
                chan_count=count,
                cluster_size=v,
                bank_group=group,
                active_controllers=min(v, hw.controllers),
                kernel_values=count * footprint,
            )
        )
        start += count
    if input_stream_bytes is None:
        input_stream_bytes = dense_input_stream_bytes(layer)
    reload = n_passes > 1 and input_stream_bytes > hw.pixel_mem_bytes
    return LayerSchedule(
        n_in=layer.n_in,
        n_out=layer.n_out,
        k=layer.k,
        passes=tuple(passes),
        input_reload=reload,
        values_per_bank=-(-footprint // group),
    )


def weight_ops_for_pixel(
    x: int, y: int, k: int, out_w: int, out_h: int, double_row_top: int
) -> int:
    """Accumulator updates one pixel triggers in a MAC for one double row.

    Coordinates are in the zero-padded frame.  The count is (output rows of
    the pair the pixel feeds) x (output columns it feeds), at most 2*k_w;
    border pixels feed fewer columns, so useless taps are skipped.
    """
    col_lo = max(0, x - k + 1)
    col_hi = min(out_w - 1, x)
    cols = max(0, col_hi - col_lo + 1)
    rows = 0
    for r in (double_row_top, double_row_top + 1):
        if 0 <= r < out_h and r <= y <= r + k - 1:
            rows += 1
    return rows * cols


# ---------------------------------------------------------------------------
# input decoding (stripe reader)


def decode_stripe(
    stream: CompressedStream, stripe_top: int, k_h: int, pad: int
) -> Iterator[list[tuple[int, int, int, int]]]:
    """Walk one vertical stripe of k_h+1 padded rows through the row FSMs.

    Yields one batch per simulated cycle; each batch holds the next
    non-zero pixel of every still-active row FSM as (channel, x, y, raw)
    in padded coordinates.  Padding rows carry no data and cost nothing.
    """
    if not 0 <= pad <= 3:
        raise ValidationError(f"pad {pad} outside [0, 3]")
    h = stream.height
    rows_needed = [
        yp for yp in range(stripe_top, stripe_top + k_h + 1) if pad <= yp < pad + h
    ]
    wanted = {yp - pad: yp for yp in rows_needed}
    fsm_pixels: dict[int, list[tuple[int, int, int, int]]] = {yp: [] for yp in rows_needed}
    c = stream.channels
    for y, row in codec.iter_rows(stream):
        if y in wanted:
            yp = wanted[y]
            for flat in np.flatnonzero(row):
                fsm_pixels[yp].append(
                    (int(flat) % c, int(flat) // c + pad, yp, int(row[flat]))
                )
        if y > max(wanted, default=-1):
            break
    cursors = {yp: 0 for yp in rows_needed}
    while True:
        batch = []
        for yp in rows_needed:
            px = fsm_pixels[yp]
            i = cursors[yp]
            if i < len(px):
                batch.append(px[i])
                cursors[yp] = i + 1
        if not batch:
            return
        yield batch


# ---------------------------------------------------------------------------
# statistics


@dataclass
class LayerStats:
    cycles_kernel_load: int = 0
    cycles_input_stream: int = 0
    cycles_compute: int = 0
    cycles_output_drain: int = 0
    cycles_total: int = 0
    mult_ops: int = 0
    bytes_in: int = 0
    bytes_out: int = 0
    bytes_kernels: int = 0
    passes: int = 0
    macs: int = 128

    @property
    def mac_busy_cycles(self) -> int:
        # one multiplication keeps one MAC busy for one cycle
        return self.mult_ops

    @property
    def utilization(self) -> float:
        if self.cycles_total == 0:
            return 0.0
        return self.mac_busy_cycles / (self.macs * self.cycles_total)

    @property
    def utilization_excl_load(self) -> float:
        cycles = self.cycles_total - self.cycles_kernel_load
        if cycles <= 0:
            return 0.0
        return self.mac_busy_cycles / (self.macs * cycles)

    @property
    def total_bytes(self) -> int:
        return self.bytes_in + self.bytes_out + self.bytes_kernels

    def add(self, other: "LayerStats") -> None:
        for f in (
            "cycles_kernel_load", "cycles_input_stream", "cycles_compute",
            "cycles_output_drain", "cycles_total", "mult_ops",
            "bytes_in", "bytes_out", "bytes_kernels", "passes",
        ):
            setattr(self, f, getattr(self, f) + getattr(other, f))

    def as_dict(self) -> dict:
        return {
            "cycles_kernel_load": self.cycles_kernel_load,
            "cycles_input_stream": self.cycles_input_stream,
            "cycles_compute": self.cycles_compute,
            "cycles_output_drain": self.cycles_output_drain,
            "cycles_total": self.cycles_total,
            "mac_busy_cycles": self.mac_busy_cycles,
            "mult_ops": self.mult_ops,
            "bytes_in": self.bytes_in,
            "bytes_out": self.bytes_out,
            "bytes_kernels": self.bytes_kernels,
            "passes": self.passes,
            "utilization": self.utilization,
            "utilization_excl_load": self.utilization_excl_load,
        }


def estimate_dram_energy(stats: LayerStats, pj_per_bit: float = 21.0) -> float:
    """DRAM access energy in joules for the traffic in ``stats``."""
    return stats.total_bytes * 8 * pj_per_bit * 1e-12


def dram_power_watts(energy_joules: float, frames_per_s: float) -> float:
    return energy_joules * frames_per_s


@dataclass
class _PixelGeometry:
    """Per-non-zero-pixel contribution counts for one layer."""

    channel: np.ndarray
    wops: np.ndarray  # accumulator updates over all stripe visits
    visits: np.ndarray  # stripes that read the pixel

    @classmethod
    def from_values(cls, values: np.ndarray, layer: LayerDescriptor):
        i_idx, y_idx, x_idx = np.nonzero(values)
        k = layer.k
        out_h, out_w = layer.conv_h, layer.conv_w
        xp = x_idx.astype(np.int64) + layer.pad
        yp = y_idx.astype(np.int64) + layer.pad
        cols = np.minimum(xp, out_w - 1) - np.maximum(xp - k + 1, 0) + 1
        rows = np.minimum(yp, out_h - 1) - np.maximum(yp - k + 1, 0) + 1
        np.clip(cols, 0, None, out=cols)
        np.clip(rows, 0, None, out=rows)
        n_stripes = -(-out_h // 2)
        t_lo = np.maximum((yp - k + 1) // 2, 0)
        t_hi = np.minimum(yp // 2, n_stripes - 1)
        visits = np.maximum(t_hi - t_lo + 1, 0)
        return cls(channel=i_idx.astype(np.int64), wops=rows * cols, visits=visits)


def _encoder_drain_cycles(out_values: np.ndarray) -> int:
    """Cycles to re-encode and stream one pass's output channels.

    Per 16-pixel segment: the sparsity map and first non-zero pixel leave
    in one cycle, then two pixels per cycle.
    """
    c, h, w = out_values.shape
    row_px = w * c
    starts = np.arange(0, row_px, codec.SEGMENT_BITS)
    total = 0
    for y in range(h):
        mask = (out_values[:, y, :].T != 0).reshape(-1).astype(np.int64)
        nnz = np.add.reduceat(mask, starts)
        total += int(len(starts) + (nnz // 2).sum())
    return total


def _pass_output_fields(out_values: np.ndarray) -> int:
    c, h, w = out_values.shape
    row_px = w * c
    segs = -(-row_px // codec.SEGMENT_BITS) * h
    return segs + int(np.count_nonzero(out_values))


def _layer_stats(
    in_values: np.ndarray,
    out_values: np.ndarray,
    layer: LayerDescriptor,
    schedule: LayerSchedule,
    hw: HardwareConfig,
    trace: Optional["_TraceWriter"] = None,
) -> LayerStats:
    geo = _PixelGeometry.from_values(in_values, layer)
    k = layer.k
    n_stripes = -(-layer.conv_h // 2)

    # input stream size from the row-aligned encoding
    row_px = layer.w * layer.n_in
    segs_per_row = -(-row_px // codec.SEGMENT_BITS)
    nnz_per_row = np.count_nonzero(in_values, axis=(0, 2)).astype(np.int64)
    row_fields = segs_per_row + nnz_per_row
    stream_words = int(-(-row_fields.sum() // 2))
    prefill_rows = max(0, min(k - layer.pad + 1, layer.h))
    prefill_words = int(-(-row_fields[:prefill_rows].sum() // 2))

    reload = schedule.n_passes > 1 and stream_words * 4 > hw.pixel_mem_bytes
    total = LayerStats(macs=hw.macs)
    for p_idx, pas in enumerate(schedule.passes):
        c_p, v = pas.chan_count, pas.cluster_size
        loads = np.bincount(
            geo.channel % v, weights=geo.wops.astype(np.float64), minlength=v
        )
        wops_sum = int(geo.wops.sum())
        compute = int(loads.max()) if len(loads) else 0
        idp_bound = -(-int(geo.visits.sum()) // (k + 1))
        compute = max(compute, idp_bound)

        out_slice = out_values[pas.chan_start : pas.chan_start + c_p]
        if layer.encode:
            drain = _encoder_drain_cycles(out_slice)
            out_fields = _pass_output_fields(out_slice)
            out_words = -(-out_fields // 2)
        else:
            out_px = out_slice.size
            drain = -(-out_px // hw.output_pixels_per_cycle)
            out_words = -(-out_px // 2)
        if v > 1:
            drain += (math.ceil(math.log2(v)) + 1) * n_stripes * layer.conv_w

        streamed = p_idx == 0 or reload
        stream_p = stream_words if streamed else 0
        prefill_p = prefill_words if streamed else 0
        load_p = -(-pas.kernel_values // 2)

        ps = LayerStats(macs=hw.macs)
        ps.cycles_kernel_load = load_p
        ps.cycles_input_stream = stream_p
        ps.cycles_compute = compute
        ps.cycles_output_drain = drain
        ps.cycles_total = load_p + prefill_p + max(compute, stream_p, drain)
        ps.mult_ops = c_p * wops_sum
        ps.bytes_in = 4 * stream_p
        ps.bytes_out = 4 * out_words
        ps.bytes_kernels = 2 * pas.kernel_values
        ps.passes = 1
        total.add(ps)
        if trace is not None:
            trace.emit_pass(
                load_p, prefill_p, max(compute, stream_p, drain),
                int(geo.visits.sum()), int(np.count_nonzero(out_slice)), k,
            )
    return total


# ---------------------------------------------------------------------------
# functional pipeline


def _forward_pipeline(
    in_values: np.ndarray,
    kern: KernelSet,
    layer: LayerDescriptor,
    schedule: LayerSchedule,
) -> FeatureMapTensor:
    """Bit-exact stripe/cluster evaluation of one layer.

    Input channels are dealt round-robin to the cooperating clusters; each
    cluster accumulates exact partial sums for a double output row, the
    reduction adds them (bias lives in cluster 0 only, so it is added
    once), and the 32-bit clamp happens at readout.
    """
    k, pad = layer.k, layer.pad
    out_h, out_w = layer.conv_h, layer.conv_w
    n_in, n_out = layer.n_in, layer.n_out
    # float64 holds every partial sum exactly: |products| <= 2^30 and at most
    # n_in*k*k <= 50k of them, so |acc| < 2^46 stays an exact integer
    padded = np.zeros((n_in, layer.h + 2 * pad, layer.w + 2 * pad), dtype=np.float64)
    padded[:, pad : pad + layer.h, pad : pad + layer.w] = in_values
    w64 = kern.weights.astype(np.float64)
    bias = kern.bias.astype(np.int64)
    out = np.zeros((n_out, layer.out_h, layer.out_w), dtype=np.int16)
    n_stripes = -(-out_h // 2)
    for pas in schedule.passes:
        lo = pas.chan_start
        hi = lo + pas.chan_count
        v = pas.cluster_size
        cluster_chans = [np.arange(rc, n_in, v) for rc in range(v)]
        wt_flat = [
            np.ascontiguousarray(w64[lo:hi, chans].reshape(hi - lo, -1))
            for chans in cluster_chans
        ]
        for t in range(n_stripes):
            rows = [r for r in (2 * t, 2 * t + 1) if r < out_h]
            acc_f = np.zeros((hi - lo, len(rows), out_w), dtype=np.float64)
            for rc, chans in enumerate(cluster_chans):
                if len(chans) == 0:
                    continue
                for ri, r in enumerate(rows):
                    taps = np.lib.stride_tricks.sliding_window_view(
                        padded[chans, r : r + k, :], out_w, axis=2
                    )  # (n_chans, k, k, out_w)
                    acc_f[:, ri, :] += wt_flat[rc] @ taps.reshape(-1, out_w)
            acc = acc_f.astype(np.int64) + bias[lo:hi, None, None]
            np.clip(acc, I32_MIN, I32_MAX, out=acc)
            vals = requantize_array(acc, layer.acc_frac, layer.out_qformat)
            if layer.relu:
                vals = np.maximum(vals, 0).astype(np.int16)
            if layer.pool:
                if len(rows) == 2:
                    wf = out_w // 2
                    pooled = vals[:, :, : 2 * wf].reshape(hi - lo, 2, wf, 2).max(axis=(1, 3))
                    out[lo:hi, t, :] = pooled
                # a trailing single row is dropped by floor pooling
            else:
                for ri, r in enumerate(rows):
                    out[lo:hi, r, :] = vals[:, ri, :]
    return FeatureMapTensor(out, layer.out_qformat)


# ---------------------------------------------------------------------------
# simulation entry points


@dataclass
class SimResult:
    stream: Union[CompressedStream, RawPixelStream]
    tensor: FeatureMapTensor
    stats: LayerStats


class _TraceWriter:
    """Debug trace: one line per simulated cycle (phase, px in, px out).

    The line stream is a cap-faithful reconstruction of the phase model,
    not an RTL timing record: per cycle at most one input word, k_h+1
    decoded pixels and two drained non-zero pixels.
    """

    def __init__(self, f: IO[str]):
        self.f = f
        self.cycle = 0

    def _line(self, phase: str, pin: int, pout: int) -> None:
        self.f.write(f"{self.cycle} {phase} {pin} {pout}\n")
        self.cycle += 1

    def emit_pass(
        self, load: int, prefill: int, overlap: int,
        pixels_in: int, pixels_out: int, k: int,
    ) -> None:
        for _ in range(load):
            self._line("kernel_load", 0, 0)
        for _ in range(prefill):
            self._line("prefill", 0, 0)
        in_left, out_left = pixels_in, pixels_out
        for _ in range(overlap):
            pin = min(k + 1, in_left)
            pout = min(2, out_left)
            in_left -= pin
            out_left -= pout
            self._line("overlap", pin, pout)


def _check_schedule(layer: LayerDescriptor, schedule: LayerSchedule) -> None:
    if (schedule.n_in, schedule.n_out, schedule.k) != (layer.n_in, layer.n_out, layer.k):
        raise ValidationError(
            f"schedule built for ({schedule.n_in}, {schedule.n_out}, k={schedule.k}) "
            f"does not match layer ({layer.n_in}, {layer.n_out}, k={layer.k})"
        )


def simulate_layer(
    input_: Union[FeatureMapTensor, CompressedStream],
    kern: KernelSet,
    layer: LayerDescriptor,
    schedule: Optional[LayerSchedule] = None,
    hw: Optional[HardwareConfig] = None,
    trace: Optional[IO[str]] = None,
) -> SimResult:
    """Run one layer through the pipeline: bit-exact output plus stats."""
    hw = hw or HardwareConfig()
    if isinstance(input_, CompressedStream):
        in_tensor = codec.decode(input_)
    else:
        in_tensor = input_
    if (in_tensor.channels, in_tensor.height, in_tensor.width) != (
        layer.n_in, layer.h, layer.w,
    ):
        raise ValidationError(
            f"input {(in_tensor.channels, in_tensor.height, in_tensor.width)} "
            f"does not match layer ({layer.n_in}, {layer.h}, {layer.w})"
        )
    if kern.n_out != layer.n_out or kern.n_in != layer.n_in or kern.k != layer.k:
        raise ValidationError("kernel set does not match layer descriptor")
    if schedule is None:
        schedule = plan_layer(layer, hw)
    else:
        _check_schedule(layer, schedule)
    out_tensor = _forward_pipeline(in_tensor.values, kern, layer, schedule)
    tracer = _TraceWriter(trace) if trace is not None else None
    stats = _layer_stats(in_tensor.values, out_tensor.values, layer, schedule, hw, tracer)
    if layer.encode:
        stream: Union[CompressedStream, RawPixelStream] = codec.encode(out_tensor)
    else:
        stream = codec.encode_raw(out_tensor)
    return SimResult(stream=stream, tensor=out_tensor, stats=stats)


def simulate_layer_stats(
    in_tensor: FeatureMapTensor,
    out_tensor: FeatureMapTensor,
    layer: LayerDescriptor,
    schedule: Optional[LayerSchedule] = None,
    hw: Optional[HardwareConfig] = None,
) -> LayerStats:
    """Performance model only, with a caller-supplied output tensor.

    Used for what-if runs with synthetic activations, where kernel values
    are unavailable and the functional result is not of interest.
    """
    hw = hw or HardwareConfig()
    if schedule is None:
        schedule = plan_layer(layer, hw)
    else:
        _check_schedule(layer, schedule)
    if out_tensor.values.shape != layer.out_shape:
        raise ValidationError(
            f"stand-in output {out_tensor.values.shape} does not match "
            f"layer output {layer.out_shape}"
        )
    return _layer_stats(in_tensor.values, out_tensor.values, layer, schedule, hw)
