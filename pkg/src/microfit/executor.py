"""Int8 inference engines.

Two independent execution paths compute bit-identical results:

* run_reference: straightforward whole-tensor convolutions, no memory
  discipline.  This is the semantics oracle.
* run_scheduled: follows a MemoryPlan the way device code would: shared
  column buffer with width tiling for the im2col convolution, channel
  rotation for in-place stride-1 depthwise layers, and an instrumented
  arena that accounts every live buffer so the measured peak can be held
  against the planned peak.

All arithmetic is integer-exact (products and sums of int8/int32 values),
so reordering between the two engines cannot change results.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ArenaOverflowError, ShapeMismatchError
from .graph import LayerKind, NetworkArch, QuantParams, layer_param_counts
from .planner import MemoryPlan, plan_memory
from .quantize import ACC_LIMIT, activation_bounds, fixmul, quantized_multiplier, requantize
from .rng import make_rng

# --- tensors and weights ----------------------------------------------------


@dataclass(frozen=True)
class TensorBuf:
    shape: tuple[int, int, int]
    data: np.ndarray  # flat int8, C-major CHW
    quant: QuantParams

    def __post_init__(self):
        c, h, w = self.shape
        if self.data.dtype != np.int8 or self.data.size != c * h * w:
            raise ShapeMismatchError("tensor data must be flat int8 of C*H*W elements")

    def as_chw(self) -> np.ndarray:
        return self.data.reshape(self.shape)

    @classmethod
    def from_chw(cls, arr: np.ndarray, quant: QuantParams) -> "TensorBuf":
        return cls(tuple(arr.shape), np.ascontiguousarray(arr, dtype=np.int8).reshape(-1), quant)

    def digest(self) -> str:
        return hashlib.sha256(self.data.tobytes()).hexdigest()


@dataclass(frozen=True)
class LayerWeights:
    weight: np.ndarray  # int8, kind-dependent shape
    bias: np.ndarray  # int32, (out_channels,)
    scale: float  # per-tensor symmetric weight scale


@dataclass(frozen=True)
class WeightSet:
    layers: tuple  # LayerWeights | None per layer
    seed: int
    folded_bn: bool = True  # batch norm is always pre-folded into weight/bias

    def digest(self) -> str:
        h = hashlib.sha256()
        for lw in self.layers:
            if lw is None:
                h.update(b"-")
                continue
            h.update(lw.weight.tobytes())
            h.update(lw.bias.tobytes())
            h.update(repr(lw.scale).encode())
        return h.hexdigest()


def gen_weights(arch: NetworkArch, seed: int, zero_weights: bool = False) -> WeightSet:
    """Deterministic pseudo-random weights, biases and weight scales.

    zero_weights keeps the (random) biases but zeroes every weight, which
    makes each conv output spatially constant, handy for oracle tests.
    """
    out = []
    for i, layer in enumerate(arch.layers):
        wcount, bcount = layer_param_counts(layer)
        if wcount == 0:
            out.append(None)
            continue
        rng = make_rng("weights", seed, i)
        shape = _weight_shape(layer)
        if zero_weights:
            weight = np.zeros(shape, dtype=np.int8)
            rng.integers(-127, 128, shape, dtype=np.int8)  # keep stream position stable
        else:
            weight = rng.integers(-127, 128, shape, dtype=np.int8)
        bias = rng.integers(-50000, 50001, bcount, dtype=np.int32)
        scale = float(np.exp(rng.uniform(math.log(3e-3), math.log(3e-2))))
        out.append(LayerWeights(weight=weight, bias=bias, scale=scale))
    return WeightSet(layers=tuple(out), seed=seed)


def _weight_shape(layer) -> tuple:
    k = layer.kernel_size
    if layer.kind == LayerKind.CONV:
        return (layer.out_channels, layer.in_channels, k, k)
    if layer.kind == LayerKind.DEPTHWISE:
        return (layer.out_channels, k, k)
    return (layer.out_channels, layer.in_channels)  # pointwise / fully connected


# --- tensor files -----------------------------------------------------------

_HEADER = struct.Struct("<3i")


def write_tensor_file(path, buf: TensorBuf) -> None:
    with open(path, "wb") as f:
        f.write(_HEADER.pack(*buf.shape))
        f.write(buf.data.tobytes())


def read_tensor_file(path, quant: QuantParams) -> TensorBuf:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HEADER.size:
        raise ShapeMismatchError(f"{path}: truncated tensor file")
    c, h, w = _HEADER.unpack_from(raw)
    data = np.frombuffer(raw, dtype=np.int8, offset=_HEADER.size)
    if c <= 0 or h <= 0 or w <= 0 or data.size != c * h * w:
        raise ShapeMismatchError(f"{path}: header {c}x{h}x{w} does not match payload")
    return TensorBuf(shape=(c, h, w), data=data.copy(), quant=quant)


def random_input(arch: NetworkArch, seed: int) -> TensorBuf:
    rng = make_rng("input", seed)
    data = rng.integers(-128, 128, int(np.prod(arch.input_shape)), dtype=np.int8)
    return TensorBuf(shape=arch.input_shape, data=data, quant=arch.input_quant)


# --- shared layer math ------------------------------------------------------


def _conv_multiplier(in_q, w_scale, out_q):
    return quantized_multiplier(in_q.scale * w_scale / out_q.scale)


def _check_acc(acc) -> None:
    m = np.abs(acc).max() if acc.size else 0
    if m >= ACC_LIMIT:
        raise OverflowError(f"accumulator {m} does not fit int32")


# --- reference engine -------------------------------------------------------


def run_reference(arch: NetworkArch, weights: WeightSet, input_buf: TensorBuf) -> TensorBuf:
    _check_input(arch, input_buf)
    outputs: dict[int, np.ndarray] = {-1: input_buf.as_chw()}
    for i, layer in enumerate(arch.layers):
        x = outputs[i - 1]
        in_q = arch.quant_of(i - 1)
        out_q = arch.layer_quant[i]
        lw = weights.layers[i]
        kind = layer.kind
        if kind in (LayerKind.CONV, LayerKind.DEPTHWISE, LayerKind.POINTWISE):
            # int64 accumulation so _check_acc sees true magnitudes; int32
            # would wrap silently and hide exactly the overflow it polices
            x64 = x.astype(np.int64) - in_q.zero_point
            if kind == LayerKind.POINTWISE:
                acc = np.tensordot(lw.weight.astype(np.int64), x64, axes=([1], [0]))
            else:
                p, s, k = layer.padding, layer.stride, layer.kernel_size
                if p:
                    x64 = np.pad(x64, ((0, 0), (p, p), (p, p)))
                win = sliding_window_view(x64, (k, k), axis=(1, 2))[:, ::s, ::s]
                w64 = lw.weight.astype(np.int64)
                if kind == LayerKind.CONV:
                    acc = np.einsum("chwij,ocij->ohw", win, w64)
                else:
                    acc = np.einsum("chwij,cij->chw", win, w64)
            acc = acc + lw.bias[:, None, None]
            _check_acc(acc)
            out = _requant_conv(acc, in_q, lw.scale, out_q, layer.has_relu6)
        elif kind == LayerKind.FULLY_CONNECTED:
            x64 = x.reshape(-1).astype(np.int64) - in_q.zero_point
            acc = lw.weight.astype(np.int64) @ x64 + lw.bias
            _check_acc(acc)
            out = _requant_conv(acc, in_q, lw.scale, out_q, layer.has_relu6)[:, None, None]
        elif kind == LayerKind.AVG_POOL:
            out = _avg_pool(x, in_q, out_q)[:, None, None]
        elif kind == LayerKind.RESIDUAL_ADD:
            other = outputs[layer.residual_source]
            other_q = arch.quant_of(layer.residual_source)
            out = _residual_add(x, in_q, other, other_q, out_q)
        else:  # pragma: no cover
            raise ShapeMismatchError(f"unknown layer kind {kind}")
        outputs[i] = out
    return TensorBuf.from_chw(outputs[len(arch.layers) - 1], arch.layer_quant[-1])


def _requant_conv(acc, in_q, w_scale, out_q, has_relu6):
    mult, shift = _conv_multiplier(in_q, w_scale, out_q)
    qmin, qmax = activation_bounds(out_q.scale, out_q.zero_point, has_relu6)
    return requantize(acc, mult, shift, out_q.zero_point, qmin, qmax)


def _avg_pool(x, in_q, out_q):
    c, h, w = x.shape
    sums = x.reshape(c, -1).astype(np.int64).sum(axis=1) - h * w * in_q.zero_point
    _check_acc(sums)
    mult, shift = quantized_multiplier(in_q.scale / (out_q.scale * h * w))
    return requantize(sums, mult, shift, out_q.zero_point, -128, 127)


def _residual_add(a, a_q, b, b_q, out_q):
    ma, sa = quantized_multiplier(a_q.scale / out_q.scale)
    mb, sb = quantized_multiplier(b_q.scale / out_q.scale)
    va = fixmul(a.astype(np.int64) - a_q.zero_point, ma, sa)
    vb = fixmul(b.astype(np.int64) - b_q.zero_point, mb, sb)
    q = va + vb + out_q.zero_point
    return np.clip(q, -128, 127).astype(np.int8)


def _check_input(arch, input_buf):
    if tuple(input_buf.shape) != tuple(arch.input_shape):
        raise ShapeMismatchError(
            f"input shape {input_buf.shape} != network input {arch.input_shape}"
        )
    q = input_buf.quant
    if (q.scale, q.zero_point) != (arch.input_quant.scale, arch.input_quant.zero_point):
        raise ShapeMismatchError("input quantization does not match the network")


# --- scheduled engine -------------------------------------------------------


class _Arena:
    """Byte accounting for live buffers; raises if the plan's promise breaks."""

    def __init__(self, limit: int | None):
        self.current = 0
        self.peak = 0
        self.limit = limit

    def alloc(self, nbytes: int) -> None:
        self.current += nbytes
        self.peak = max(self.peak, self.current)
        if self.limit is not None and self.current > self.limit:
            raise ArenaOverflowError(
                f"live bytes {self.current} exceed planned peak {self.limit}"
            )

    def free(self, nbytes: int) -> None:
        self.current -= nbytes


class _View:
    """A live activation buffer plus its channel rotation.

    After an in-place depthwise pass the output of logical channel c lives
    in the slot previously holding channel c-1, i.e. physical slot
    (c + rot) % C with rot decremented by one per pass.
    """

    __slots__ = ("arr", "rot", "nbytes")

    def __init__(self, arr: np.ndarray, rot: int = 0):
        self.arr = arr
        self.rot = rot
        self.nbytes = arr.size

    def physical(self, c: int) -> int:
        return (c + self.rot) % self.arr.shape[0]

    def channel(self, c: int) -> np.ndarray:
        return self.arr[self.physical(c)]

    def perm(self) -> np.ndarray:
        """perm[j] = logical channel stored in physical slot j."""
        n = self.arr.shape[0]
        return (np.arange(n) - self.rot) % n

    def logical(self) -> np.ndarray:
        if self.rot % self.arr.shape[0] == 0:
            return self.arr
        n = self.arr.shape[0]
        return self.arr[(np.arange(n) + self.rot) % n]


@dataclass(frozen=True)
class ScheduledRun:
    output: TensorBuf
    measured_peak_bytes: int


def run_scheduled(
    arch: NetworkArch,
    weights: WeightSet,
    input_buf: TensorBuf,
    plan: MemoryPlan | None = None,
    check_rotation: bool = False,
) -> ScheduledRun:
    _check_input(arch, input_buf)
    if plan is None:
        plan = plan_memory(arch, inplace_dw=True)
    nlayers = len(arch.layers)
    refs = {p: 1 for p in range(-1, nlayers)}  # next-layer consumer / final hold
    for layer in arch.layers:
        if layer.kind == LayerKind.RESIDUAL_ADD:
            refs[layer.residual_source] += 1

    if len(plan.layers) != nlayers:
        raise ShapeMismatchError("memory plan does not match the network")

    arena = _Arena(limit=plan.peak_sram_bytes if nlayers else None)
    live: dict[int, _View] = {}

    x0 = np.array(input_buf.as_chw(), dtype=np.int8)
    arena.alloc(x0.size)
    live[-1] = _View(x0)

    def release(producer: int) -> None:
        refs[producer] -= 1
        if refs[producer] == 0:
            arena.free(live[producer].nbytes)
            del live[producer]

    for i, layer in enumerate(arch.layers):
        rec = plan.layers[i]
        view = live[i - 1]
        in_q = arch.quant_of(i - 1)
        out_q = arch.layer_quant[i]
        lw = weights.layers[i]
        kind = layer.kind
        inplace = kind == LayerKind.DEPTHWISE and rec.inplace

        if inplace:
            assert refs[i - 1] == 1, "in-place depthwise over a shared buffer"
            live[i] = _sched_depthwise_inplace(
                arena, layer, view, in_q, out_q, lw, check_rotation
            )
            refs[i - 1] -= 1
            del live[i - 1]  # same storage continues under the new producer
            continue

        # Output buffer is live during the whole layer computation.
        out = np.empty(layer.output_shape, dtype=np.int8)
        arena.alloc(out.size)
        if kind == LayerKind.CONV and layer.kernel_size > 1:
            _sched_conv(arena, layer, rec, plan, view, in_q, out_q, lw, out)
        elif kind in (LayerKind.POINTWISE, LayerKind.CONV):
            _sched_conv1x1(layer, view, in_q, out_q, lw, out)
        elif kind == LayerKind.DEPTHWISE:
            _sched_depthwise(layer, view, in_q, out_q, lw, out)
        elif kind == LayerKind.AVG_POOL:
            _sched_avg_pool(layer, view, in_q, out_q, out)
        elif kind == LayerKind.FULLY_CONNECTED:
            _sched_fc(layer, view, in_q, out_q, lw, out)
        elif kind == LayerKind.RESIDUAL_ADD:
            _sched_add(layer, view, in_q, live[layer.residual_source],
                       arch.quant_of(layer.residual_source), out_q, out)
        else:  # pragma: no cover
            raise ShapeMismatchError(f"unknown layer kind {kind}")
        live[i] = _View(out)

        release(i - 1)
        if kind == LayerKind.RESIDUAL_ADD:
            release(layer.residual_source)

    final = live[nlayers - 1]
    out_buf = TensorBuf.from_chw(final.logical(), arch.layer_quant[-1])
    return ScheduledRun(output=out_buf, measured_peak_bytes=arena.peak)


def _sched_conv(arena, layer, rec, plan, view, in_q, out_q, lw, out):
    """Tiled im2col convolution: gather tile_width columns into the shared
    buffer, one int32 accumulator tile per output row segment."""
    cin, h, w = layer.input_shape
    cout, oh, ow = layer.output_shape
    k, s, p = layer.kernel_size, layer.stride, layer.padding
    tw = rec.tile_width
    kk = k * k * cin

    arena.alloc(plan.im2col_buffer_bytes)  # shared column buffer (int8)
    arena.alloc(4 * tw * cout)  # int32 accumulator tile
    col = np.empty((tw, kk), dtype=np.int8)
    acc = np.empty((tw, cout), dtype=np.int32)

    wmat = lw.weight.reshape(cout, kk).astype(np.int32).T  # (kk, cout)
    zin = in_q.zero_point
    mult, shift = _conv_multiplier(in_q, lw.scale, out_q)
    qmin, qmax = activation_bounds(out_q.scale, out_q.zero_point, layer.has_relu6)
    patch = np.empty((cin, k, k), dtype=np.int8)

    for oy in range(oh):
        y0 = oy * s - p
        ylo, yhi = max(0, y0), min(h, y0 + k)
        for x0 in range(0, ow, tw):
            wt = min(tw, ow - x0)
            for j in range(wt):
                xs = (x0 + j) * s - p
                xlo, xhi = max(0, xs), min(w, xs + k)
                patch[:] = zin
                for c in range(cin):
                    patch[c, ylo - y0 : yhi - y0, xlo - xs : xhi - xs] = view.channel(c)[
                        ylo:yhi, xlo:xhi
                    ]
                col[j] = patch.reshape(-1)
            a = acc[:wt]
            np.matmul(col[:wt].astype(np.int32) - zin, wmat, out=a)
            a += lw.bias[None, :]
            out[:, oy, x0 : x0 + wt] = requantize(a, mult, shift, out_q.zero_point, qmin, qmax).T
    arena.free(plan.im2col_buffer_bytes)
    arena.free(4 * tw * cout)


def _sched_conv1x1(layer, view, in_q, out_q, lw, out):
    """Pointwise layers, plus the degenerate 1x1 full conv with stride."""
    s = layer.stride
    _, oh, ow = layer.output_shape
    wp = lw.weight.reshape(layer.out_channels, layer.in_channels).astype(np.int32)
    wp = wp[:, view.perm()]
    zin = in_q.zero_point
    mult, shift = _conv_multiplier(in_q, lw.scale, out_q)
    qmin, qmax = activation_bounds(out_q.scale, out_q.zero_point, layer.has_relu6)
    for oy in range(oh):
        row = view.arr[:, oy * s, : (ow - 1) * s + 1 : s]
        acc = wp @ (row.astype(np.int32) - zin) + lw.bias[:, None]
        out[:, oy, :] = requantize(acc, mult, shift, out_q.zero_point, qmin, qmax)


def _dw_channel(x8, w32c, bias_c, zin, k, s, p, mult, shift, zp_out, qmin, qmax):
    x32 = x8.astype(np.int32) - zin
    if p:
        x32 = np.pad(x32, p)
    win = sliding_window_view(x32, (k, k))[::s, ::s]
    acc = np.einsum("hwij,ij->hw", win, w32c) + bias_c
    return requantize(acc, mult, shift, zp_out, qmin, qmax)


def _dw_params(layer, in_q, out_q, lw):
    mult, shift = _conv_multiplier(in_q, lw.scale, out_q)
    qmin, qmax = activation_bounds(out_q.scale, out_q.zero_point, layer.has_relu6)
    return lw.weight.astype(np.int32), mult, shift, qmin, qmax


def _sched_depthwise(layer, view, in_q, out_q, lw, out):
    w32, mult, shift, qmin, qmax = _dw_params(layer, in_q, out_q, lw)
    k, s, p = layer.kernel_size, layer.stride, layer.padding
    for c in range(layer.out_channels):
        out[c] = _dw_channel(
            view.channel(c), w32[c], lw.bias[c], in_q.zero_point, k, s, p,
            mult, shift, out_q.zero_point, qmin, qmax,
        )


def _sched_depthwise_inplace(arena, layer, view, in_q, out_q, lw, check_rotation):
    """Stride-1 depthwise overwriting its own input, channel by channel.

    Output of channel 0 goes to a one-channel scratch; output of channel c
    overwrites the slot of channel c-1; the scratch lands in the last
    channel's slot.  Net effect: same buffer, rotation decremented.
    """
    w32, mult, shift, qmin, qmax = _dw_params(layer, in_q, out_q, lw)
    k, s, p = layer.kernel_size, layer.stride, layer.padding
    n, h, w = layer.output_shape
    arena.alloc(h * w)  # scratch channel
    written = np.zeros(n, dtype=bool) if check_rotation else None

    scratch = None
    for c in range(n):
        src_slot = view.physical(c)
        if check_rotation and written[src_slot]:
            raise AssertionError(
                f"rotation hazard: channel {c} read from slot {src_slot} after overwrite"
            )
        result = _dw_channel(
            view.channel(c), w32[c], lw.bias[c], in_q.zero_point, k, s, p,
            mult, shift, out_q.zero_point, qmin, qmax,
        )
        if c == 0:
            scratch = result
        else:
            dst = view.physical(c - 1)
            view.arr[dst] = result
            if check_rotation:
                written[dst] = True
        # channel c's input slot may be overwritten from the next step on
    last = view.physical(n - 1)
    view.arr[last] = scratch
    arena.free(h * w)
    return _View(view.arr, rot=view.rot - 1)


def _sched_avg_pool(layer, view, in_q, out_q, out):
    c, h, w = layer.input_shape
    sums = view.arr.reshape(c, -1).astype(np.int64).sum(axis=1)
    sums = sums[(np.arange(c) + view.rot) % c] - h * w * in_q.zero_point
    _check_acc(sums)
    mult, shift = quantized_multiplier(in_q.scale / (out_q.scale * h * w))
    out[:, 0, 0] = requantize(sums, mult, shift, out_q.zero_point, -128, 127)


def _sched_fc(layer, view, in_q, out_q, lw, out):
    wp = lw.weight.astype(np.int32)[:, view.perm()]
    x32 = view.arr.reshape(-1).astype(np.int32) - in_q.zero_point
    acc = wp @ x32 + lw.bias
    _check_acc(acc)
    mult, shift = _conv_multiplier(in_q, lw.scale, out_q)
    qmin, qmax = activation_bounds(out_q.scale, out_q.zero_point, layer.has_relu6)
    out[:, 0, 0] = requantize(acc, mult, shift, out_q.zero_point, qmin, qmax)


def _sched_add(layer, a_view, a_q, b_view, b_q, out_q, out):
    ma, sa = quantized_multiplier(a_q.scale / out_q.scale)
    mb, sb = quantized_multiplier(b_q.scale / out_q.scale)
    for c in range(layer.out_channels):
        va = fixmul(a_view.channel(c).astype(np.int64) - a_q.zero_point, ma, sa)
        vb = fixmul(b_view.channel(c).astype(np.int64) - b_q.zero_point, mb, sb)
        out[c] = np.clip(va + vb + out_q.zero_point, -128, 127).astype(np.int8)
