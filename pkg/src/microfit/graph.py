"""Network graph construction and static accounting.

build_network lowers a gene vector into a flat layer list: a 3x3 stride-2
stem, one fixed expansion-1 stage, five searchable inverted-bottleneck
stages, one fixed final stage, then global average pool and a linear
classifier head.  Channel counts scale with the width multiplier and round
to the nearest multiple of 8 (minimum 8) in exact integer arithmetic.

All downstream accounting (MACs, parameter bytes, memory planning, code
emission) works off this one representation; identical genes serialize to
byte-identical JSON.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum

from .errors import InvalidGeneError, ShapeMismatchError, UnsupportedBitWidthError
from .genes import ArchGenes, NUM_STAGES

# Fixed backbone schedule.  Index 0 is the expansion-1 stage, 1..5 are the
# searchable stages, 6 is the fixed final stage.
STEM_BASE_CHANNELS = 32
STAGE_BASE_CHANNELS = (16, 24, 40, 80, 96, 192, 320)
STAGE_STRIDES = (1, 2, 2, 2, 1, 2, 1)
SEARCHABLE_STAGES = (1, 2, 3, 4, 5)


class LayerKind(str, Enum):
    CONV = "conv2d"
    DEPTHWISE = "depthwise_conv2d"
    POINTWISE = "pointwise_conv2d"
    AVG_POOL = "avg_pool"
    FULLY_CONNECTED = "fully_connected"
    RESIDUAL_ADD = "residual_add"


PARAMETERIZED_KINDS = (
    LayerKind.CONV,
    LayerKind.DEPTHWISE,
    LayerKind.POINTWISE,
    LayerKind.FULLY_CONNECTED,
)


@dataclass(frozen=True, slots=True)
class QuantParams:
    """Per-tensor affine quantization (int8 activations)."""

    scale: float
    zero_point: int
    bit_width: int = 8

    def __post_init__(self):
        if self.scale <= 0:
            raise InvalidGeneError(f"quant scale must be positive, got {self.scale}")
        if not (-128 <= self.zero_point <= 127):
            raise InvalidGeneError(f"zero point {self.zero_point} outside int8")

    def to_dict(self) -> dict:
        return {"scale": self.scale, "zero_point": self.zero_point, "bit_width": self.bit_width}

    @classmethod
    def from_dict(cls, d: dict) -> "QuantParams":
        return cls(d["scale"], d["zero_point"], d.get("bit_width", 8))


@dataclass(frozen=True, slots=True)
class LayerSpec:
    kind: LayerKind
    kernel_size: int
    stride: int
    padding: int
    in_channels: int
    out_channels: int
    input_shape: tuple[int, int, int]  # (C, H, W)
    output_shape: tuple[int, int, int]
    has_relu6: bool
    # For RESIDUAL_ADD: index of the layer whose output is the second operand
    # (the first operand is always the immediately preceding layer). -1 otherwise.
    residual_source: int = -1

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "kernel_size": self.kernel_size,
            "stride": self.stride,
            "padding": self.padding,
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "input_shape": list(self.input_shape),
            "output_shape": list(self.output_shape),
            "has_relu6": self.has_relu6,
            "residual_source": self.residual_source,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        return cls(
            kind=LayerKind(d["kind"]),
            kernel_size=d["kernel_size"],
            stride=d["stride"],
            padding=d["padding"],
            in_channels=d["in_channels"],
            out_channels=d["out_channels"],
            input_shape=tuple(d["input_shape"]),
            output_shape=tuple(d["output_shape"]),
            has_relu6=d["has_relu6"],
            residual_source=d.get("residual_source", -1),
        )


@dataclass(frozen=True, slots=True)
class BlockInfo:
    """Maps a contiguous layer range back to its place in the backbone.

    stage is -1 for the stem, 0..6 for backbone stages, 7 for the head.
    """

    index: int
    stage: int
    label: str
    start: int  # first layer index
    end: int  # one past last layer index

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "stage": self.stage,
            "label": self.label,
            "start": self.start,
            "end": self.end,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BlockInfo":
        return cls(d["index"], d["stage"], d["label"], d["start"], d["end"])


@dataclass(frozen=True, slots=True)
class NetworkArch:
    input_shape: tuple[int, int, int]
    input_quant: QuantParams
    layers: tuple[LayerSpec, ...]
    layer_quant: tuple[QuantParams, ...]  # output quant per layer
    blocks: tuple[BlockInfo, ...]
    genes: ArchGenes | None = None

    def quant_of(self, producer: int) -> QuantParams:
        """Quantization of the tensor produced by layer `producer` (-1 = input)."""
        return self.input_quant if producer < 0 else self.layer_quant[producer]

    def to_dict(self) -> dict:
        d = {
            "format_version": 1,
            "input_shape": list(self.input_shape),
            "input_quant": self.input_quant.to_dict(),
            "layers": [l.to_dict() for l in self.layers],
            "layer_quant": [q.to_dict() for q in self.layer_quant],
            "blocks": [b.to_dict() for b in self.blocks],
        }
        if self.genes is not None:
            d["genes"] = self.genes.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkArch":
        return cls(
            input_shape=tuple(d["input_shape"]),
            input_quant=QuantParams.from_dict(d["input_quant"]),
            layers=tuple(LayerSpec.from_dict(l) for l in d["layers"]),
            layer_quant=tuple(QuantParams.from_dict(q) for q in d["layer_quant"]),
            blocks=tuple(BlockInfo.from_dict(b) for b in d["blocks"]),
            genes=ArchGenes.from_dict(d["genes"]) if "genes" in d else None,
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "NetworkArch":
        return cls.from_dict(json.loads(text))


# --- construction -----------------------------------------------------------


def scaled_channels(base: int, width_tenths: int) -> int:
    """base * w rounded half-up to the nearest multiple of 8, minimum 8.

    Exact: base*w = base*width_tenths/10, so the nearest multiple of 8 is
    (base*width_tenths + 40) // 80 rounded, all in integers.
    """
    return 8 * max(1, (base * width_tenths + 40) // 80)


def conv_output_hw(h: int, w: int, kernel: int, stride: int, padding: int) -> tuple[int, int]:
    oh = (h + 2 * padding - kernel) // stride + 1
    ow = (w + 2 * padding - kernel) // stride + 1
    if oh < 1 or ow < 1:
        raise ShapeMismatchError(f"conv collapses {h}x{w} to {oh}x{ow}")
    return oh, ow


def _act_scale_jitter(layer_index: int) -> float:
    # Deterministic per-layer spread so requant multipliers differ layer to
    # layer even before weights exist.
    return 1.0 + ((layer_index * 2654435761) % 97 - 48) / 1024


def _output_quant(layer_index: int, kind: LayerKind, has_relu6: bool, in_quant: QuantParams) -> QuantParams:
    j = _act_scale_jitter(layer_index)
    if kind == LayerKind.AVG_POOL:
        return in_quant
    if has_relu6:
        return QuantParams(scale=6.0 / 255.0 * j, zero_point=-128)
    if kind == LayerKind.RESIDUAL_ADD:
        return QuantParams(scale=0.08 * j, zero_point=0)
    if kind == LayerKind.FULLY_CONNECTED:
        return QuantParams(scale=0.25 * j, zero_point=0)
    return QuantParams(scale=0.05 * j, zero_point=0)


INPUT_QUANT = QuantParams(scale=1.0 / 128.0, zero_point=0)


class _Builder:
    def __init__(self, input_shape):
        self.layers: list[LayerSpec] = []
        self.quant: list[QuantParams] = []
        self.blocks: list[BlockInfo] = []
        self.shape = input_shape

    def add(self, kind, kernel, stride, padding, c_out, has_relu6, residual_source=-1):
        c_in, h, w = self.shape
        if kind in (LayerKind.AVG_POOL, LayerKind.RESIDUAL_ADD):
            out_shape = (c_out, 1, 1) if kind == LayerKind.AVG_POOL else self.shape
        elif kind == LayerKind.FULLY_CONNECTED:
            out_shape = (c_out, 1, 1)
        else:
            oh, ow = conv_output_hw(h, w, kernel, stride, padding)
            out_shape = (c_out, oh, ow)
        idx = len(self.layers)
        spec = LayerSpec(
            kind=kind,
            kernel_size=kernel,
            stride=stride,
            padding=padding,
            in_channels=c_in,
            out_channels=out_shape[0],
            input_shape=self.shape,
            output_shape=out_shape,
            has_relu6=has_relu6,
            residual_source=residual_source,
        )
        self.layers.append(spec)
        in_q = self.quant[idx - 1] if idx else INPUT_QUANT
        self.quant.append(_output_quant(idx, kind, has_relu6, in_q))
        self.shape = out_shape
        return idx

    def mark_block(self, stage, label, start):
        self.blocks.append(
            BlockInfo(index=len(self.blocks), stage=stage, label=label, start=start, end=len(self.layers))
        )


def build_network(genes: ArchGenes, num_classes: int = 1000) -> NetworkArch:
    """Lower genes to a concrete layer graph.  Pure: no randomness."""
    if num_classes < 2:
        raise InvalidGeneError(f"num_classes must be at least 2, got {num_classes}")
    w10 = genes.space.width_tenths
    r = genes.space.resolution
    b = _Builder((3, r, r))

    start = len(b.layers)
    stem_ch = scaled_channels(STEM_BASE_CHANNELS, w10)
    b.add(LayerKind.CONV, 3, 2, 1, stem_ch, has_relu6=True)
    b.mark_block(stage=-1, label="stem", start=start)

    c_prev = stem_ch
    for stage in range(len(STAGE_BASE_CHANNELS)):
        c_out = scaled_channels(STAGE_BASE_CHANNELS[stage], w10)
        if stage in SEARCHABLE_STAGES:
            sg = genes.stages[stage - 1]
            depth = sg.depth
            kernels = sg.kernels
            expansions = sg.expansions
        else:
            depth = 1
            kernels = (3,)
            expansions = (1,) if stage == 0 else (6,)
        for blk in range(depth):
            stride = STAGE_STRIDES[stage] if blk == 0 else 1
            kernel = kernels[blk]
            expansion = expansions[blk]
            start = len(b.layers)
            source = start - 1  # layer producing the block input
            hidden = c_prev * expansion
            if expansion > 1:
                b.add(LayerKind.POINTWISE, 1, 1, 0, hidden, has_relu6=True)
            b.add(LayerKind.DEPTHWISE, kernel, stride, kernel // 2, hidden, has_relu6=True)
            b.add(LayerKind.POINTWISE, 1, 1, 0, c_out, has_relu6=False)
            if stride == 1 and c_prev == c_out and expansion > 1:
                b.add(LayerKind.RESIDUAL_ADD, 1, 1, 0, c_out, has_relu6=False, residual_source=source)
            b.mark_block(stage=stage, label=f"s{stage}b{blk}", start=start)
            c_prev = c_out

    start = len(b.layers)
    _, h, w = b.shape
    if h != w:
        raise ShapeMismatchError(f"non-square feature map {h}x{w} at head")
    b.add(LayerKind.AVG_POOL, h, 1, 0, c_prev, has_relu6=False)
    b.add(LayerKind.FULLY_CONNECTED, 1, 1, 0, num_classes, has_relu6=False)
    b.mark_block(stage=7, label="head", start=start)

    arch = NetworkArch(
        input_shape=(3, r, r),
        input_quant=INPUT_QUANT,
        layers=tuple(b.layers),
        layer_quant=tuple(b.quant),
        blocks=tuple(b.blocks),
        genes=genes,
    )
    validate_network(arch)
    return arch


def validate_network(arch: NetworkArch) -> None:
    """Structural invariants: shape chaining, depthwise channel equality,
    residual legality."""
    prev_shape = arch.input_shape
    for i, layer in enumerate(arch.layers):
        if layer.input_shape != prev_shape:
            raise ShapeMismatchError(
                f"layer {i} input {layer.input_shape} != previous output {prev_shape}"
            )
        if layer.kind == LayerKind.DEPTHWISE and layer.in_channels != layer.out_channels:
            raise ShapeMismatchError(f"depthwise layer {i} changes channel count")
        if layer.kind == LayerKind.RESIDUAL_ADD:
            src = layer.residual_source
            if not (0 <= src < i - 1):
                raise ShapeMismatchError(f"residual add {i} has bad source {src}")
            if arch.layers[src].output_shape != layer.input_shape:
                raise ShapeMismatchError(f"residual add {i} mixes unequal shapes")
        prev_shape = layer.output_shape
    if len(arch.layer_quant) != len(arch.layers):
        raise ShapeMismatchError("layer_quant length mismatch")


# --- accounting -------------------------------------------------------------


def layer_macs(layer: LayerSpec) -> int:
    c, oh, ow = layer.output_shape
    k2 = layer.kernel_size * layer.kernel_size
    if layer.kind == LayerKind.CONV:
        return k2 * layer.in_channels * layer.out_channels * oh * ow
    if layer.kind == LayerKind.DEPTHWISE:
        return k2 * layer.out_channels * oh * ow
    if layer.kind == LayerKind.POINTWISE:
        return layer.in_channels * layer.out_channels * oh * ow
    if layer.kind == LayerKind.FULLY_CONNECTED:
        return layer.in_channels * layer.out_channels
    return 0  # pooling and adds are not counted


def count_macs(arch: NetworkArch) -> int:
    return sum(layer_macs(l) for l in arch.layers)


def layer_param_counts(layer: LayerSpec) -> tuple[int, int]:
    """(weight element count, bias element count)."""
    k2 = layer.kernel_size * layer.kernel_size
    if layer.kind == LayerKind.CONV:
        return k2 * layer.in_channels * layer.out_channels, layer.out_channels
    if layer.kind == LayerKind.DEPTHWISE:
        return k2 * layer.out_channels, layer.out_channels
    if layer.kind == LayerKind.POINTWISE:
        return layer.in_channels * layer.out_channels, layer.out_channels
    if layer.kind == LayerKind.FULLY_CONNECTED:
        return layer.in_channels * layer.out_channels, layer.out_channels
    return 0, 0


def count_params(arch: NetworkArch) -> int:
    return sum(w + bias for w, bias in (layer_param_counts(l) for l in arch.layers))


def model_size_bytes(arch: NetworkArch, weight_bits: int = 8) -> int:
    """Parameter storage: weights at 8 or 4 bits (rounded up per tensor),
    biases always as int32."""
    if weight_bits not in (8, 4):
        raise UnsupportedBitWidthError(f"weight_bits must be 8 or 4, got {weight_bits}")
    total = 0
    for layer in arch.layers:
        wcount, bcount = layer_param_counts(layer)
        total += (wcount * weight_bits + 7) // 8 + 4 * bcount
    return total
