"""Static memory planning.

The whole point of this module is that everything is decided before any
inference runs: one shared column buffer sized for the worst im2col layer,
a per-layer tile width derived from it, in-place execution for stride-1
depthwise layers, and a per-layer byte ledger whose maximum is the arena
size the device must provide.

Conventions (all int8 activations, 1 byte per element):

* Only full convolutions with kernel > 1 lower through im2col; one column
  is kernel^2 * in_channels elements, and the shared buffer must hold the
  largest column in the network.
* The tile width of an im2col layer is how many columns fit in the shared
  buffer, clamped to the output width.  The worst layer tiles at exactly 1.
* A stride-1 depthwise layer can overwrite its own input channel by
  channel (output of channel c lands in channel c-1's slot, channel 0 goes
  through a one-channel scratch that is finally written to the last slot),
  so it costs (N+1)*H*W instead of 2*N*H*W.
* A tensor feeding a residual add stays resident from its production to
  the add that consumes it and is charged to every layer in between.
* The im2col layer is charged conservatively: input + output + column
  buffer + one output-row tile of int32 accumulators, all concurrent.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .errors import TilingError
from .graph import LayerKind, LayerSpec, NetworkArch, model_size_bytes


@dataclass(frozen=True, slots=True)
class DeviceProfile:
    name: str
    sram_bytes: int
    flash_bytes: int

    def __post_init__(self):
        if self.sram_bytes <= 0 or self.flash_bytes <= 0:
            raise ValueError("device budgets must be positive")

    def to_dict(self) -> dict:
        return {"name": self.name, "sram_bytes": self.sram_bytes, "flash_bytes": self.flash_bytes}

    @classmethod
    def from_dict(cls, d: dict) -> "DeviceProfile":
        return cls(d["name"], d["sram_bytes"], d["flash_bytes"])


@dataclass(frozen=True, slots=True)
class LayerPlan:
    layer_index: int
    tile_width: int  # 0 for layers that do not use the column buffer
    input_bytes: int  # all inputs (both operands for a residual add)
    output_bytes: int
    extra_buffer_bytes: int  # column buffer share + int32 accumulator tile
    inplace: bool
    resident_skip_bytes: int
    layer_peak_bytes: int

    def to_dict(self) -> dict:
        return {
            "layer_index": self.layer_index,
            "tile_width": self.tile_width,
            "input_bytes": self.input_bytes,
            "output_bytes": self.output_bytes,
            "extra_buffer_bytes": self.extra_buffer_bytes,
            "inplace": self.inplace,
            "resident_skip_bytes": self.resident_skip_bytes,
            "layer_peak_bytes": self.layer_peak_bytes,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LayerPlan":
        return cls(**{k: d[k] for k in (
            "layer_index", "tile_width", "input_bytes", "output_bytes",
            "extra_buffer_bytes", "inplace", "resident_skip_bytes", "layer_peak_bytes")})


@dataclass(frozen=True, slots=True)
class MemoryPlan:
    im2col_buffer_bytes: int
    layers: tuple[LayerPlan, ...]
    peak_sram_bytes: int
    flash_bytes: int

    def to_dict(self) -> dict:
        return {
            "im2col_buffer_bytes": self.im2col_buffer_bytes,
            "peak_sram_bytes": self.peak_sram_bytes,
            "flash_bytes": self.flash_bytes,
            "layers": [l.to_dict() for l in self.layers],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MemoryPlan":
        return cls(
            im2col_buffer_bytes=d["im2col_buffer_bytes"],
            layers=tuple(LayerPlan.from_dict(l) for l in d["layers"]),
            peak_sram_bytes=d["peak_sram_bytes"],
            flash_bytes=d["flash_bytes"],
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "MemoryPlan":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True, slots=True)
class FitReport:
    fits: bool
    sram_margin_bytes: int
    flash_margin_bytes: int

    def to_dict(self) -> dict:
        return {
            "fits": self.fits,
            "sram_margin_bytes": self.sram_margin_bytes,
            "flash_margin_bytes": self.flash_margin_bytes,
        }


# --- column buffer and tiling ----------------------------------------------


def uses_im2col(layer: LayerSpec) -> bool:
    return layer.kind == LayerKind.CONV and layer.kernel_size > 1


def column_elements(layer: LayerSpec) -> int:
    return layer.kernel_size * layer.kernel_size * layer.in_channels


def im2col_requirement(arch: NetworkArch) -> int:
    """Shared column buffer size in int8 elements (== bytes): the largest
    single column over all im2col layers; 0 if the network has none."""
    return max((column_elements(l) for l in arch.layers if uses_im2col(l)), default=0)


def tile_width(layer: LayerSpec, buffer_elements: int, clamp_to_width: bool = True) -> int:
    """How many output positions of one row fit in the shared column buffer."""
    if not uses_im2col(layer):
        raise TilingError(f"layer kind {layer.kind.value} does not use the column buffer")
    col = column_elements(layer)
    if buffer_elements < col:
        raise TilingError(
            f"column buffer of {buffer_elements} elements cannot hold one "
            f"{layer.kernel_size}x{layer.kernel_size}x{layer.in_channels} column ({col})"
        )
    width = buffer_elements // col
    if clamp_to_width:
        width = min(width, layer.output_shape[2])
    return width


# --- residency and per-layer footprints -------------------------------------


def _tensor_bytes(shape: tuple[int, int, int]) -> int:
    c, h, w = shape
    return c * h * w


def _residual_spans(arch: NetworkArch) -> list[tuple[int, int]]:
    """(producer, consumer) index pairs for tensors held for a residual add."""
    return [
        (l.residual_source, i)
        for i, l in enumerate(arch.layers)
        if l.kind == LayerKind.RESIDUAL_ADD
    ]


def _layer_inputs(arch: NetworkArch, index: int) -> list[int]:
    """Producer indices feeding layer `index` (-1 denotes the network input)."""
    layer = arch.layers[index]
    inputs = [index - 1]
    if layer.kind == LayerKind.RESIDUAL_ADD:
        inputs.append(layer.residual_source)
    return inputs


def resident_bytes(arch: NetworkArch, index: int) -> int:
    """Bytes of residual-source tensors alive across layer `index` that are
    neither an input nor the output of that layer."""
    inputs = _layer_inputs(arch, index)
    total = 0
    for producer, consumer in _residual_spans(arch):
        if producer < index < consumer and producer not in inputs:
            total += _tensor_bytes(arch.layers[producer].output_shape)
    return total


def input_is_resident_after(arch: NetworkArch, index: int) -> bool:
    """True when layer `index`'s direct input must survive past the layer
    (it feeds a residual add later on)."""
    producer = index - 1
    return any(src == producer and consumer > index for src, consumer in _residual_spans(arch))


# --- the plan ---------------------------------------------------------------


def can_run_inplace(arch: NetworkArch, index: int) -> bool:
    layer = arch.layers[index]
    return (
        layer.kind == LayerKind.DEPTHWISE
        and layer.stride == 1
        and layer.input_shape == layer.output_shape
        and not input_is_resident_after(arch, index)
    )


def plan_memory(arch: NetworkArch, inplace_dw: bool = True) -> MemoryPlan:
    buffer_elements = im2col_requirement(arch)
    records = []
    for i, layer in enumerate(arch.layers):
        in_bytes = sum(
            _tensor_bytes(arch.input_shape if p < 0 else arch.layers[p].output_shape)
            for p in _layer_inputs(arch, i)
        )
        out_bytes = _tensor_bytes(layer.output_shape)
        inplace = inplace_dw and can_run_inplace(arch, i)
        if inplace:
            n, h, w = layer.output_shape
            activation = (n + 1) * h * w
        else:
            activation = in_bytes + out_bytes
        resident = resident_bytes(arch, i)
        if uses_im2col(layer):
            width = tile_width(layer, buffer_elements)
            extra = buffer_elements + 4 * width * layer.out_channels
        else:
            width = 0
            extra = 0
        records.append(
            LayerPlan(
                layer_index=i,
                tile_width=width,
                input_bytes=in_bytes,
                output_bytes=out_bytes,
                extra_buffer_bytes=extra,
                inplace=inplace,
                resident_skip_bytes=resident,
                layer_peak_bytes=activation + extra + resident,
            )
        )
    peak = max((r.layer_peak_bytes for r in records), default=0)
    return MemoryPlan(
        im2col_buffer_bytes=buffer_elements,
        layers=tuple(records),
        peak_sram_bytes=peak,
        flash_bytes=model_size_bytes(arch, 8),
    )


def check_fit(plan: MemoryPlan, device: DeviceProfile) -> FitReport:
    sram_margin = device.sram_bytes - plan.peak_sram_bytes
    flash_margin = device.flash_bytes - plan.flash_bytes
    return FitReport(
        fits=sram_margin >= 0 and flash_margin >= 0,
        sram_margin_bytes=sram_margin,
        flash_margin_bytes=flash_margin,
    )


def per_block_activation(arch: NetworkArch) -> list[tuple[int, int]]:
    """Activation footprint per block: max over the block's layers of
    input + output + resident bytes.  Scheduling-independent (no in-place
    discount, no scratch buffers); this is the bar-chart data for studying
    how imbalanced a schedule's activation profile is."""
    out = []
    for block in arch.blocks:
        worst = 0
        for i in range(block.start, block.end):
            in_bytes = sum(
                _tensor_bytes(arch.input_shape if p < 0 else arch.layers[p].output_shape)
                for p in _layer_inputs(arch, i)
            )
            worst = max(worst, in_bytes + _tensor_bytes(arch.layers[i].output_shape) + resident_bytes(arch, i))
        out.append((block.index, worst))
    return out
