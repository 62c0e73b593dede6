"""Emit a network as dependency-free C99 with a static memory arena.

Every layer becomes its own specialized function: loop bounds, strides,
quantization constants and buffer offsets are baked in as literals, and
convolution taps are unrolled (one accumulate statement per tap).  The
arena is exactly as large as the memory plan's peak, which works because
buffers are placed at alternating ends of the arena, residual adds write
over their shortcut operand, and stride-1 depthwise runs in place with the
rotation trick.

`run_generated` executes the emitted schedule with numpy at byte level,
using the same offsets and in-place aliasing the C code would, so the
generated program can be checked against the reference engine without a
cross-compiler in the loop.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LayoutError, ShapeMismatchError
from .executor import TensorBuf, WeightSet, gen_weights
from .graph import PARAMETERIZED_KINDS, LayerKind, NetworkArch
from .planner import MemoryPlan, plan_memory, uses_im2col
from .quantize import activation_bounds, fixmul, quantized_multiplier

_CODE_BASE_BYTES = 256
_CODE_PER_LAYER_BYTES = 176
_CODE_KIND_BYTES = {
    LayerKind.CONV.value: 1408,
    LayerKind.DEPTHWISE.value: 1152,
    LayerKind.POINTWISE.value: 832,
    LayerKind.AVG_POOL.value: 320,
    LayerKind.FULLY_CONNECTED.value: 544,
    LayerKind.RESIDUAL_ADD.value: 288,
}


@dataclass(frozen=True)
class ScheduleStep:
    """Everything needed to run (or emit) one layer against the arena."""

    index: int
    kind: str
    kernel_size: int
    stride: int
    padding: int
    in_channels: int
    out_channels: int
    in_h: int
    in_w: int
    out_h: int
    out_w: int
    src_offset: int
    src_rot: int
    dst_offset: int
    dst_rot: int
    inplace: bool = False
    src2_offset: int = 0  # residual shortcut operand; shares storage with dst
    src2_rot: int = 0
    col_offset: int = 0
    acc_offset: int = 0
    tmp_offset: int = 0
    tile_width: int = 0
    zin: int = 0
    zout: int = 0
    mult: int = 0
    shift: int = 0
    qmin: int = -128
    qmax: int = 127
    mult2: int = 0
    shift2: int = 0
    zin2: int = 0


@dataclass(frozen=True)
class CodegenOutput:
    source_text: str
    header_text: str
    weights_source: str | None
    memory_map: tuple[dict, ...]
    ops_emitted: tuple[str, ...]
    estimated_code_bytes: int
    arena_bytes: int
    input_offset: int
    output_offset: int
    schedule: tuple[ScheduleStep, ...]


def estimate_code_bytes(ops: tuple[str, ...], layer_count: int) -> int:
    """Flash cost model for the emitted .text: a fixed harness cost, one
    chunk per distinct op kind, and a per-layer constant for the
    specialized wrappers."""
    unknown = [op for op in ops if op not in _CODE_KIND_BYTES]
    if unknown:
        raise LayoutError(f"no code size entry for ops {unknown}")
    return (
        _CODE_BASE_BYTES
        + sum(_CODE_KIND_BYTES[op] for op in set(ops))
        + _CODE_PER_LAYER_BYTES * layer_count
    )


# --- arena layout -----------------------------------------------------------


@dataclass
class _Slot:
    name: str
    size: int
    side: str  # preferred end of the arena: "bottom" or "top"
    first: int  # layer index range during which the bytes are busy
    last: int
    kind: str  # "tensor" or "scratch"
    align: int = 1
    offset: int = -1


class _Layout:
    """First-fit placement from both ends of a fixed-size arena.

    Lifetimes are inclusive layer-index ranges; two slots may share
    addresses only if their ranges are disjoint.  Aliased tensors (in-place
    depthwise outputs, residual-add outputs) reuse their owner slot and
    never go through placement.
    """

    def __init__(self, arena_bytes: int):
        self.arena = arena_bytes
        self.slots: list[_Slot] = []
        self.aliases: list[dict] = []

    def place(self, slot: _Slot) -> _Slot:
        busy = [
            s
            for s in self.slots
            if not (s.last < slot.first or s.first > slot.last)
        ]
        for side in (slot.side, "top" if slot.side == "bottom" else "bottom"):
            off = self._scan(side, slot.size, slot.align, busy)
            if off is not None:
                slot.offset = off
                slot.side = side
                self.slots.append(slot)
                return slot
        raise LayoutError(
            f"cannot place {slot.name} ({slot.size} B) in a {self.arena} B arena"
        )

    def _scan(self, side, size, align, busy):
        if side == "bottom":
            cands = sorted({-(-c // align) * align for c in [0] + [s.offset + s.size for s in busy]})
        else:
            cands = sorted(
                {(c // align) * align for c in [self.arena - size] + [s.offset - size for s in busy]},
                reverse=True,
            )
        for c in cands:
            if c >= 0 and c + size <= self.arena and self._fits(c, size, busy):
                return c
        return None

    @staticmethod
    def _fits(off, size, busy):
        return all(off + size <= s.offset or off >= s.offset + s.size for s in busy)

    def note_alias(self, name: str, owner: _Slot, first: int, last: int):
        owner.last = max(owner.last, last)
        self.aliases.append(
            {
                "name": name,
                "offset": owner.offset,
                "size": owner.size,
                "first_use": first,
                "last_use": last,
                "kind": "tensor",
                "alias_of": owner.name,
            }
        )

    def to_map(self) -> tuple[dict, ...]:
        rows = [
            {
                "name": s.name,
                "offset": s.offset,
                "size": s.size,
                "first_use": s.first,
                "last_use": s.last,
                "kind": s.kind,
                "alias_of": None,
            }
            for s in self.slots
        ]
        return tuple(rows + self.aliases)


def _tensor_last_use(arch: NetworkArch) -> dict[int, int]:
    """Producer index -> last layer that reads the tensor.  The network
    output is pinned past the final layer so nothing lands on top of it."""
    n = len(arch.layers)
    last = {p: p + 1 for p in range(-1, n - 1)}
    for i, layer in enumerate(arch.layers):
        if layer.kind == LayerKind.RESIDUAL_ADD:
            last[layer.residual_source] = i
    last[n - 1] = n
    return last


def _build_schedule(arch: NetworkArch, plan: MemoryPlan, weights: WeightSet):
    layout = _Layout(plan.peak_sram_bytes)
    last = _tensor_last_use(arch)

    c0, h0, w0 = arch.input_shape
    in_slot = layout.place(
        _Slot("input", c0 * h0 * w0, "bottom", -1, last[-1], "tensor")
    )
    tensors: dict[int, tuple[_Slot, int]] = {-1: (in_slot, 0)}

    steps = []
    for i, layer in enumerate(arch.layers):
        lp = plan.layers[i]
        src_slot, src_rot = tensors[i - 1]
        in_q = arch.quant_of(i - 1)
        out_q = arch.layer_quant[i]
        cin, h, w = layer.input_shape
        cout, oh, ow = layer.output_shape
        base = dict(
            index=i,
            kind=layer.kind.value,
            kernel_size=layer.kernel_size,
            stride=layer.stride,
            padding=layer.padding,
            in_channels=cin,
            out_channels=cout,
            in_h=h,
            in_w=w,
            out_h=oh,
            out_w=ow,
            src_offset=src_slot.offset,
            src_rot=src_rot % cin,
        )

        if layer.kind == LayerKind.RESIDUAL_ADD:
            b_slot, b_rot = tensors[layer.residual_source]
            src_q = arch.quant_of(layer.residual_source)
            ma, sa = quantized_multiplier(in_q.scale / out_q.scale)
            mb, sb = quantized_multiplier(src_q.scale / out_q.scale)
            layout.note_alias(f"act{i}", b_slot, i, last[i])
            tensors[i] = (b_slot, b_rot)
            steps.append(
                ScheduleStep(
                    **base,
                    dst_offset=b_slot.offset,
                    dst_rot=b_rot % cout,
                    src2_offset=b_slot.offset,
                    src2_rot=b_rot % cout,
                    mult=ma,
                    shift=sa,
                    zin=in_q.zero_point,
                    mult2=mb,
                    shift2=sb,
                    zin2=src_q.zero_point,
                    zout=out_q.zero_point,
                )
            )
            continue

        if layer.kind == LayerKind.AVG_POOL:
            mult, shift = quantized_multiplier(in_q.scale / (out_q.scale * h * w))
            qmin, qmax = activation_bounds(out_q.scale, out_q.zero_point, False)
            dst = layout.place(
                _Slot(
                    f"act{i}",
                    cout * oh * ow,
                    "top" if src_slot.side == "bottom" else "bottom",
                    i,
                    last[i],
                    "tensor",
                )
            )
            tensors[i] = (dst, 0)
            steps.append(
                ScheduleStep(
                    **base,
                    dst_offset=dst.offset,
                    dst_rot=0,
                    zin=in_q.zero_point,
                    zout=out_q.zero_point,
                    mult=mult,
                    shift=shift,
                    qmin=qmin,
                    qmax=qmax,
                )
            )
            continue

        lw = weights.layers[i]
        mult, shift = quantized_multiplier(in_q.scale * lw.scale / out_q.scale)
        qmin, qmax = activation_bounds(out_q.scale, out_q.zero_point, layer.has_relu6)
        quant = dict(
            zin=in_q.zero_point,
            zout=out_q.zero_point,
            mult=mult,
            shift=shift,
            qmin=qmin,
            qmax=qmax,
        )

        if lp.inplace:
            tmp = layout.place(_Slot(f"tmp{i}", oh * ow, "bottom", i, i, "scratch"))
            dst_rot = (src_rot - 1) % cout
            layout.note_alias(f"act{i}", src_slot, i, last[i])
            tensors[i] = (src_slot, dst_rot)
            steps.append(
                ScheduleStep(
                    **base,
                    dst_offset=src_slot.offset,
                    dst_rot=dst_rot,
                    inplace=True,
                    tmp_offset=tmp.offset,
                    **quant,
                )
            )
            continue

        dst = layout.place(
            _Slot(
                f"act{i}",
                cout * oh * ow,
                "top" if src_slot.side == "bottom" else "bottom",
                i,
                last[i],
                "tensor",
            )
        )
        tensors[i] = (dst, 0)
        extra = {}
        if uses_im2col(layer):
            acc = layout.place(
                _Slot(f"acc{i}", 4 * lp.tile_width * cout, "bottom", i, i, "scratch", align=4)
            )
            col = layout.place(
                _Slot(f"col{i}", plan.im2col_buffer_bytes, "bottom", i, i, "scratch")
            )
            extra = dict(
                col_offset=col.offset,
                acc_offset=acc.offset,
                tile_width=lp.tile_width,
            )
        steps.append(
            ScheduleStep(**base, dst_offset=dst.offset, dst_rot=0, **quant, **extra)
        )

    out_slot, out_rot = tensors[len(arch.layers) - 1]
    if out_rot % arch.layers[-1].output_shape[0] != 0:
        raise LayoutError("network output would be left channel-rotated in the arena")
    return tuple(steps), layout, in_slot.offset, out_slot.offset


# --- C emission -------------------------------------------------------------


def _ch(var: str, rot: int, n: int) -> str:
    return var if rot == 0 else f"(({var} + {rot}) % {n})"


def _rq_helper(i: int, s: ScheduleStep) -> list[str]:
    rnd = (1 << (s.shift - 1)) if s.shift > 0 else 0
    return [
        f"static inline int8_t rq{i}(int32_t acc) {{",
        f"    int64_t v = (int64_t)acc * {s.mult}LL;",
        f"    int32_t q = (int32_t)(v >= 0 ? ((v + {rnd}LL) >> {s.shift})"
        f" : -((-v + {rnd}LL) >> {s.shift}));",
        f"    q += {s.zout};",
        f"    if (q < {s.qmin}) q = {s.qmin};",
        f"    if (q > {s.qmax}) q = {s.qmax};",
        "    return (int8_t)q;",
        "}",
        "",
    ]


def _fx_helper(name: str, mult: int, shift: int) -> list[str]:
    rnd = (1 << (shift - 1)) if shift > 0 else 0
    return [
        f"static inline int32_t {name}(int32_t v) {{",
        f"    int64_t t = (int64_t)v * {mult}LL;",
        f"    return (int32_t)(t >= 0 ? ((t + {rnd}LL) >> {shift})"
        f" : -((-t + {rnd}LL) >> {shift}));",
        "}",
        "",
    ]


def _tap_gather(s: ScheduleStep, dy: int, dx: int, t: int) -> str:
    return (
        f"iy = oy * {s.stride} - {s.padding} + {dy}; "
        f"ix = ox * {s.stride} - {s.padding} + {dx}; "
        f"pp[{t}] = (iy >= 0 && iy < {s.in_h} && ix >= 0 && ix < {s.in_w})"
        f" ? ch[iy * {s.in_w} + ix] : (int8_t){s.zin};"
    )


def _emit_conv(i: int, s: ScheduleStep) -> list[str]:
    k, kk = s.kernel_size, s.kernel_size * s.kernel_size
    cols = s.in_channels * kk
    lines = _rq_helper(i, s)
    lines += [
        f"static void layer_{i:02d}_conv(void) {{",
        f"    const int8_t *src = arena + {s.src_offset};",
        f"    int8_t *dst = arena + {s.dst_offset};",
        f"    int8_t *col = arena + {s.col_offset};",
        f"    int32_t *acc = (int32_t *)(arena + {s.acc_offset});",
        f"    for (int oy = 0; oy < {s.out_h}; ++oy) {{",
        f"        for (int x0 = 0; x0 < {s.out_w}; x0 += {s.tile_width}) {{",
        f"            int wt = {s.out_w} - x0;",
        f"            if (wt > {s.tile_width}) wt = {s.tile_width};",
        "            for (int j = 0; j < wt; ++j) {",
        f"                int8_t *cp = col + j * {cols};",
        "                const int ox = x0 + j;",
        "                int iy, ix;",
        f"                for (int ic = 0; ic < {s.in_channels}; ++ic) {{",
        f"                    const int8_t *ch = src + {_ch('ic', s.src_rot, s.in_channels)} * {s.in_h * s.in_w};",
        f"                    int8_t *pp = cp + ic * {kk};",
    ]
    for t in range(kk):
        lines.append("                    " + _tap_gather(s, t // k, t % k, t))
    lines += [
        "                }",
        "            }",
        "            for (int j = 0; j < wt; ++j) {",
        f"                const int8_t *cp = col + j * {cols};",
        f"                int32_t *ap = acc + j * {s.out_channels};",
        f"                for (int oc = 0; oc < {s.out_channels}; ++oc) {{",
        f"                    const int8_t *wp = l{i}_w + oc * {cols};",
        f"                    int32_t a = l{i}_b[oc];",
        f"                    for (int ic = 0; ic < {s.in_channels}; ++ic) {{",
        f"                        const int8_t *c9 = cp + ic * {kk};",
        f"                        const int8_t *w9 = wp + ic * {kk};",
    ]
    for t in range(kk):
        lines.append(
            f"                        a += ((int32_t)c9[{t}] - {s.zin})"
            f" * (int32_t)w9[{t}];"
        )
    lines += [
        "                    }",
        "                    ap[oc] = a;",
        "                }",
        "            }",
        "            for (int j = 0; j < wt; ++j)",
        f"                for (int oc = 0; oc < {s.out_channels}; ++oc)",
        f"                    dst[oc * {s.out_h * s.out_w} + oy * {s.out_w} + x0 + j]"
        f" = rq{i}(acc[j * {s.out_channels} + oc]);",
        "        }",
        "    }",
        "}",
        "",
    ]
    return lines


def _emit_depthwise(i: int, s: ScheduleStep) -> list[str]:
    k, kk = s.kernel_size, s.kernel_size * s.kernel_size
    n, hw, ohw = s.out_channels, s.in_h * s.in_w, s.out_h * s.out_w
    lines = _rq_helper(i, s)
    lines.append(f"static void layer_{i:02d}_dw(void) {{")
    lines.append(f"    const int8_t *src = arena + {s.src_offset};")
    if s.inplace:
        lines.append(f"    int8_t *dst = arena + {s.dst_offset};  /* same buffer */")
        lines.append(f"    int8_t *tmp = arena + {s.tmp_offset};")
    else:
        lines.append(f"    int8_t *dst = arena + {s.dst_offset};")
    lines += [
        f"    for (int c = 0; c < {n}; ++c) {{",
        f"        const int8_t *ch = src + {_ch('c', s.src_rot, n)} * {hw};",
        f"        const int8_t *wp = l{i}_w + c * {kk};",
    ]
    if s.inplace:
        # rotate down one slot: channel c lands where channel c-1 was read
        lines.append(
            f"        int8_t *outp = (c == 0) ? tmp : dst + ((c - 1 + {s.src_rot}) % {n}) * {ohw};"
        )
    else:
        lines.append(f"        int8_t *outp = dst + c * {ohw};")
    lines += [
        f"        for (int oy = 0; oy < {s.out_h}; ++oy) {{",
        f"            for (int ox = 0; ox < {s.out_w}; ++ox) {{",
        f"                int32_t a = l{i}_b[c];",
        "                int iy, ix;",
    ]
    for t in range(kk):
        dy, dx = t // k, t % k
        lines.append(
            f"                iy = oy * {s.stride} - {s.padding} + {dy}; "
            f"ix = ox * {s.stride} - {s.padding} + {dx}; "
            f"a += (((iy >= 0 && iy < {s.in_h} && ix >= 0 && ix < {s.in_w})"
            f" ? (int32_t)ch[iy * {s.in_w} + ix] : {s.zin}) - {s.zin})"
            f" * (int32_t)wp[{t}];"
        )
    lines += [
        f"                outp[oy * {s.out_w} + ox] = rq{i}(a);",
        "            }",
        "        }",
        "    }",
    ]
    if s.inplace:
        lines += [
            f"    {{  /* first channel's result takes the freed last slot */",
            f"        int8_t *last = dst + (({n - 1} + {s.src_rot}) % {n}) * {ohw};",
            f"        for (int p = 0; p < {ohw}; ++p) last[p] = tmp[p];",
            "    }",
        ]
    lines += ["}", ""]
    return lines


def _emit_pointwise(i: int, s: ScheduleStep) -> list[str]:
    hw = s.in_h * s.in_w
    suffix = "pw" if s.kind == LayerKind.POINTWISE.value else "conv1x1"
    src_px = (
        f"oy * {s.in_w} + ox"
        if s.stride == 1
        else f"(oy * {s.stride}) * {s.in_w} + ox * {s.stride}"
    )
    lines = _rq_helper(i, s)
    lines += [
        f"static void layer_{i:02d}_{suffix}(void) {{",
        f"    const int8_t *src = arena + {s.src_offset};",
        f"    int8_t *dst = arena + {s.dst_offset};",
        f"    for (int oy = 0; oy < {s.out_h}; ++oy) {{",
        f"        for (int ox = 0; ox < {s.out_w}; ++ox) {{",
        f"            for (int oc = 0; oc < {s.out_channels}; ++oc) {{",
        f"                const int8_t *wp = l{i}_w + oc * {s.in_channels};",
        f"                int32_t a = l{i}_b[oc];",
        f"                for (int ic = 0; ic < {s.in_channels}; ++ic)",
        f"                    a += ((int32_t)src[{_ch('ic', s.src_rot, s.in_channels)} * {hw}"
        f" + {src_px}] - {s.zin}) * (int32_t)wp[ic];",
        f"                dst[oc * {s.out_h * s.out_w} + oy * {s.out_w} + ox] = rq{i}(a);",
        "            }",
        "        }",
        "    }",
        "}",
        "",
    ]
    return lines


def _emit_pool(i: int, s: ScheduleStep) -> list[str]:
    hw = s.in_h * s.in_w
    lines = _rq_helper(i, s)
    lines += [
        f"static void layer_{i:02d}_pool(void) {{",
        f"    const int8_t *src = arena + {s.src_offset};",
        f"    int8_t *dst = arena + {s.dst_offset};",
        f"    for (int c = 0; c < {s.out_channels}; ++c) {{",
        f"        const int8_t *ch = src + {_ch('c', s.src_rot, s.in_channels)} * {hw};",
        "        int32_t s = 0;",
        f"        for (int p = 0; p < {hw}; ++p) s += ch[p];",
        f"        s -= {hw * s.zin};",
        f"        dst[c] = rq{i}(s);",
        "    }",
        "}",
        "",
    ]
    return lines


def _emit_fc(i: int, s: ScheduleStep) -> list[str]:
    lines = _rq_helper(i, s)
    lines += [
        f"static void layer_{i:02d}_fc(void) {{",
        f"    const int8_t *src = arena + {s.src_offset};",
        f"    int8_t *dst = arena + {s.dst_offset};",
        f"    for (int oc = 0; oc < {s.out_channels}; ++oc) {{",
        f"        const int8_t *wp = l{i}_w + oc * {s.in_channels};",
        f"        int32_t a = l{i}_b[oc];",
        f"        for (int ic = 0; ic < {s.in_channels}; ++ic)",
        f"            a += ((int32_t)src[{_ch('ic', s.src_rot, s.in_channels)}] - {s.zin})"
        f" * (int32_t)wp[ic];",
        f"        dst[oc] = rq{i}(a);",
        "    }",
        "}",
        "",
    ]
    return lines


def _emit_add(i: int, s: ScheduleStep) -> list[str]:
    n, hw = s.out_channels, s.out_h * s.out_w
    lines = _fx_helper(f"fxa{i}", s.mult, s.shift)
    lines += _fx_helper(f"fxb{i}", s.mult2, s.shift2)
    lines += [
        f"static void layer_{i:02d}_add(void) {{",
        f"    const int8_t *a = arena + {s.src_offset};",
        f"    int8_t *b = arena + {s.src2_offset};  /* shortcut operand, overwritten */",
        f"    for (int c = 0; c < {n}; ++c) {{",
        f"        const int8_t *ap = a + {_ch('c', s.src_rot, n)} * {hw};",
        f"        int8_t *bp = b + {_ch('c', s.src2_rot, n)} * {hw};",
        f"        for (int p = 0; p < {hw}; ++p) {{",
        f"            int32_t q = fxa{i}((int32_t)ap[p] - {s.zin})"
        f" + fxb{i}((int32_t)bp[p] - {s.zin2}) + {s.zout};",
        "            if (q < -128) q = -128;",
        "            if (q > 127) q = 127;",
        "            bp[p] = (int8_t)q;",
        "        }",
        "    }",
        "}",
        "",
    ]
    return lines


_EMITTERS = {
    LayerKind.CONV.value: lambda i, s: (
        _emit_conv(i, s) if s.kernel_size > 1 else _emit_pointwise(i, s)
    ),
    LayerKind.DEPTHWISE.value: _emit_depthwise,
    LayerKind.POINTWISE.value: _emit_pointwise,
    LayerKind.AVG_POOL.value: _emit_pool,
    LayerKind.FULLY_CONNECTED.value: _emit_fc,
    LayerKind.RESIDUAL_ADD.value: _emit_add,
}

_FN_SUFFIX = {
    LayerKind.DEPTHWISE.value: "dw",
    LayerKind.POINTWISE.value: "pw",
    LayerKind.AVG_POOL.value: "pool",
    LayerKind.FULLY_CONNECTED.value: "fc",
    LayerKind.RESIDUAL_ADD.value: "add",
}


def _fn_name(i: int, s: ScheduleStep) -> str:
    if s.kind == LayerKind.CONV.value:
        return f"layer_{i:02d}_conv" if s.kernel_size > 1 else f"layer_{i:02d}_conv1x1"
    return f"layer_{i:02d}_{_FN_SUFFIX[s.kind]}"


def _emit_header(arch: NetworkArch, arena_bytes: int) -> str:
    c, h, w = arch.input_shape
    out_bytes = int(np.prod(arch.layers[-1].output_shape))
    return "\n".join(
        [
            "#ifndef MICROFIT_MODEL_H",
            "#define MICROFIT_MODEL_H",
            "",
            "#include <stdint.h>",
            "",
            f"#define MODEL_INPUT_CHANNELS {c}",
            f"#define MODEL_INPUT_HEIGHT {h}",
            f"#define MODEL_INPUT_WIDTH {w}",
            f"#define MODEL_INPUT_BYTES {c * h * w}",
            f"#define MODEL_OUTPUT_BYTES {out_bytes}",
            f"#define MODEL_ARENA_BYTES {arena_bytes}",
            f"#define MODEL_LAYER_COUNT {len(arch.layers)}",
            "",
            "const int8_t *model_invoke(const int8_t *input);",
            "",
            "#endif",
            "",
        ]
    )


def _fmt_array(vals, per_line: int) -> list[str]:
    lines = []
    for i in range(0, len(vals), per_line):
        lines.append("    " + ", ".join(str(v) for v in vals[i : i + per_line]) + ",")
    return lines


def _emit_weights(arch: NetworkArch, weights: WeightSet) -> str:
    lines = [
        "/* Weight and bias tables. Generated; edit the generator instead. */",
        "",
        "#include <stdint.h>",
        "",
    ]
    for i, lw in enumerate(weights.layers):
        if lw is None:
            continue
        wv = lw.weight.ravel().tolist()
        bv = lw.bias.tolist()
        lines.append(f"const int8_t l{i}_w[{len(wv)}] = {{")
        lines += _fmt_array(wv, 20)
        lines.append("};")
        lines.append(f"const int32_t l{i}_b[{len(bv)}] = {{")
        lines += _fmt_array(bv, 8)
        lines.append("};")
        lines.append("")
    return "\n".join(lines)


def generate(
    arch: NetworkArch,
    plan: MemoryPlan | None = None,
    weights: WeightSet | None = None,
    weights_seed: int = 0,
    include_weights: bool = True,
) -> CodegenOutput:
    if plan is None:
        plan = plan_memory(arch, inplace_dw=True)
    if len(plan.layers) != len(arch.layers):
        raise ShapeMismatchError("memory plan does not match the network")
    if weights is None:
        weights = gen_weights(arch, weights_seed)

    steps, layout, in_off, out_off = _build_schedule(arch, plan, weights)

    lines = [
        "/* Generated int8 inference model. Edit the generator, not this file. */",
        "",
        "#include <stdint.h>",
        '#include "model.h"',
        "",
        "static int8_t arena[MODEL_ARENA_BYTES];",
        "",
    ]
    for i, layer in enumerate(arch.layers):
        if layer.kind in PARAMETERIZED_KINDS:
            lw = weights.layers[i]
            lines.append(f"extern const int8_t l{i}_w[{lw.weight.size}];")
            lines.append(f"extern const int32_t l{i}_b[{lw.bias.size}];")
    lines.append("")
    for i, s in enumerate(steps):
        lines += _EMITTERS[s.kind](i, s)
    lines += [
        "const int8_t *model_invoke(const int8_t *input) {",
        "    for (int i = 0; i < MODEL_INPUT_BYTES; ++i)",
        f"        arena[{in_off} + i] = input[i];",
    ]
    for i, s in enumerate(steps):
        lines.append(f"    {_fn_name(i, s)}();")
    lines += [
        f"    return arena + {out_off};",
        "}",
        "",
    ]

    ops = tuple(sorted({s.kind for s in steps}))
    return CodegenOutput(
        source_text="\n".join(lines),
        header_text=_emit_header(arch, plan.peak_sram_bytes),
        weights_source=_emit_weights(arch, weights) if include_weights else None,
        memory_map=layout.to_map(),
        ops_emitted=ops,
        estimated_code_bytes=estimate_code_bytes(ops, len(steps)),
        arena_bytes=plan.peak_sram_bytes,
        input_offset=in_off,
        output_offset=out_off,
        schedule=steps,
    )


def write_output(out: CodegenOutput, directory) -> list[str]:
    """Write model.c / model.h / weights.c into `directory`; returns names."""
    import json
    import os

    os.makedirs(directory, exist_ok=True)
    written = []
    files = {
        "model.c": out.source_text,
        "model.h": out.header_text,
        "memory_map.json": json.dumps(list(out.memory_map), indent=2) + "\n",
    }
    if out.weights_source is not None:
        files["weights.c"] = out.weights_source
    for name, text in files.items():
        with open(os.path.join(directory, name), "w") as fh:
            fh.write(text)
        written.append(name)
    return written


# --- schedule interpreter ---------------------------------------------------


def _region(arena, off, count):
    return arena[off : off + count]


def _chan(region, c, rot, n, hw):
    return _region(region, ((c + rot) % n) * hw, hw)


def _interp_convlike(arena, s: ScheduleStep, lw):
    k, kk = s.kernel_size, s.kernel_size * s.kernel_size
    hw, ohw = s.in_h * s.in_w, s.out_h * s.out_w
    src = _region(arena, s.src_offset, s.in_channels * hw)
    dst = _region(arena, s.dst_offset, s.out_channels * ohw)
    cols = s.in_channels * kk
    tw = s.tile_width
    col = _region(arena, s.col_offset, tw * cols).reshape(tw, cols)
    acc = _region(arena, s.acc_offset, 4 * tw * s.out_channels).view(np.int32)
    acc = acc.reshape(tw, s.out_channels)
    wmat = lw.weight.reshape(s.out_channels, cols).T.astype(np.int32)
    for oy in range(s.out_h):
        for x0 in range(0, s.out_w, tw):
            wt = min(tw, s.out_w - x0)
            for j in range(wt):
                ox = x0 + j
                cp = col[j]
                for ic in range(s.in_channels):
                    ch = _chan(src, ic, s.src_rot, s.in_channels, hw).reshape(s.in_h, s.in_w)
                    pp = cp[ic * kk : (ic + 1) * kk].reshape(k, k)
                    pp[:] = s.zin
                    y0, x0p = oy * s.stride - s.padding, ox * s.stride - s.padding
                    ylo, yhi = max(0, y0), min(s.in_h, y0 + k)
                    xlo, xhi = max(0, x0p), min(s.in_w, x0p + k)
                    if ylo < yhi and xlo < xhi:
                        pp[ylo - y0 : yhi - y0, xlo - x0p : xhi - x0p] = ch[ylo:yhi, xlo:xhi]
            a = acc[:wt]
            np.matmul(col[:wt].astype(np.int32) - s.zin, wmat, out=a)
            a += lw.bias
            q = _requant_step(a, s)
            view = dst.reshape(s.out_channels, s.out_h, s.out_w)
            view[:, oy, x0 : x0 + wt] = q.T


def _requant_step(acc, s: ScheduleStep):
    v = fixmul(acc.astype(np.int64), s.mult, s.shift) + s.zout
    return np.clip(v, s.qmin, s.qmax).astype(np.int8)


def _interp_dw(arena, s: ScheduleStep, lw):
    from .executor import _dw_channel  # same per-channel kernel as the scheduler

    hw, ohw = s.in_h * s.in_w, s.out_h * s.out_w
    n = s.out_channels
    src = _region(arena, s.src_offset, n * hw)
    w32 = lw.weight.astype(np.int32)
    args = dict(
        zin=s.zin, k=s.kernel_size, s=s.stride, p=s.padding,
        mult=s.mult, shift=s.shift, zout=s.zout, qmin=s.qmin, qmax=s.qmax,
    )

    def one(c):
        ch = _chan(src, c, s.src_rot, n, hw).reshape(s.in_h, s.in_w)
        return _dw_channel(
            ch, w32[c], lw.bias[c], args["zin"], args["k"], args["s"], args["p"],
            args["mult"], args["shift"], args["zout"], args["qmin"], args["qmax"],
        )

    if not s.inplace:
        dst = _region(arena, s.dst_offset, n * ohw)
        for c in range(n):
            dst[c * ohw : (c + 1) * ohw] = one(c).ravel()
        return
    dst = _region(arena, s.dst_offset, n * ohw)
    tmp = _region(arena, s.tmp_offset, ohw)
    for c in range(n):
        res = one(c).ravel()
        if c == 0:
            tmp[:] = res
        else:
            _chan(dst, c - 1, s.src_rot, n, ohw)[:] = res
    _chan(dst, n - 1, s.src_rot, n, ohw)[:] = tmp


def _interp_pointwise(arena, s: ScheduleStep, lw):
    hw, ohw = s.in_h * s.in_w, s.out_h * s.out_w
    src = _region(arena, s.src_offset, s.in_channels * hw).reshape(
        s.in_channels, s.in_h, s.in_w
    )
    dst = _region(arena, s.dst_offset, s.out_channels * ohw).reshape(
        s.out_channels, s.out_h, s.out_w
    )
    perm = (np.arange(s.in_channels) + s.src_rot) % s.in_channels
    x = src[perm]
    if s.stride > 1:
        x = x[:, :: s.stride, :: s.stride]
    x = x[:, : s.out_h, : s.out_w]
    acc = np.tensordot(
        lw.weight.astype(np.int32), x.astype(np.int32) - s.zin, axes=([1], [0])
    )
    acc += lw.bias[:, None, None]
    dst[:] = _requant_step(acc, s)


def _interp_pool(arena, s: ScheduleStep):
    hw = s.in_h * s.in_w
    src = _region(arena, s.src_offset, s.in_channels * hw).reshape(s.in_channels, hw)
    dst = _region(arena, s.dst_offset, s.out_channels)
    perm = (np.arange(s.in_channels) + s.src_rot) % s.in_channels
    sums = src[perm].astype(np.int64).sum(axis=1) - hw * s.zin
    dst[:] = _requant_step(sums, s).ravel()


def _interp_fc(arena, s: ScheduleStep, lw):
    src = _region(arena, s.src_offset, s.in_channels)
    dst = _region(arena, s.dst_offset, s.out_channels)
    perm = (np.arange(s.in_channels) + s.src_rot) % s.in_channels
    acc = lw.weight.astype(np.int32) @ (src[perm].astype(np.int32) - s.zin)
    acc += lw.bias
    dst[:] = _requant_step(acc, s)


def _interp_add(arena, s: ScheduleStep):
    n, hw = s.out_channels, s.out_h * s.out_w
    a = _region(arena, s.src_offset, n * hw)
    b = _region(arena, s.src2_offset, n * hw)
    for c in range(n):
        ap = _chan(a, c, s.src_rot, n, hw).astype(np.int32)
        bp = _chan(b, c, s.src2_rot, n, hw)
        va = fixmul(ap - s.zin, s.mult, s.shift)
        vb = fixmul(bp.astype(np.int32) - s.zin2, s.mult2, s.shift2)
        bp[:] = np.clip(va + vb + s.zout, -128, 127).astype(np.int8)


def run_generated(out: CodegenOutput, arch: NetworkArch, weights: WeightSet,
                  input_buf: TensorBuf) -> TensorBuf:
    """Execute the emitted schedule byte-for-byte against a numpy arena."""
    from .executor import _check_input

    _check_input(arch, input_buf)
    arena = np.zeros(out.arena_bytes, dtype=np.int8)
    c, h, w = arch.input_shape
    arena[out.input_offset : out.input_offset + c * h * w] = input_buf.data
    for s in out.schedule:
        lw = weights.layers[s.index]
        if s.kind == LayerKind.RESIDUAL_ADD.value:
            _interp_add(arena, s)
        elif s.kind == LayerKind.AVG_POOL.value:
            _interp_pool(arena, s)
        elif s.kind == LayerKind.DEPTHWISE.value:
            _interp_dw(arena, s, lw)
        elif s.kind == LayerKind.FULLY_CONNECTED.value:
            _interp_fc(arena, s, lw)
        elif s.kind == LayerKind.CONV.value and s.kernel_size > 1:
            _interp_convlike(arena, s, lw)
        else:
            _interp_pointwise(arena, s, lw)
    last = out.schedule[-1]
    cout, oh, ow = last.out_channels, last.out_h, last.out_w
    data = _region(arena, out.output_offset, cout * oh * ow).copy()
    return TensorBuf(
        shape=(cout, oh, ow), data=data, quant=arch.layer_quant[last.index]
    )
