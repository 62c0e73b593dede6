import hashlib
import json
import shutil
import subprocess

import numpy as np
import pytest

from conftest import conv_layer, make_arch, sample_nets, tiny_arch
from microfit.codegen import (
    estimate_code_bytes,
    generate,
    run_generated,
    write_output,
)
from microfit.errors import LayoutError, ShapeMismatchError
from microfit.executor import gen_weights, random_input, run_reference
from microfit.genes import SpaceConfig, baseline_genes
from microfit.graph import LayerKind, build_network
from microfit.planner import plan_memory

# Frozen once from generate(tiny_arch(), weights_seed=0).
TINY_SOURCE_SHA = "309d81bd3fdecd81d681e3a1f4de03ea380d107de1fd23d125b29ed12d97af7a"


def _function_chunks(source):
    """(name, body) for each emitted static function."""
    chunks = source.split("static void ")[1:]
    return [(c.split("(", 1)[0], c) for c in chunks]


def test_accumulate_statement_counts_match_kernel_taps():
    layers = [
        conv_layer(LayerKind.CONV, 5, 1, 2, 3, 8, 12, 12),
        conv_layer(LayerKind.DEPTHWISE, 7, 1, 3, 8, 8, 12, 12, relu6=True),
        conv_layer(LayerKind.DEPTHWISE, 3, 2, 1, 8, 8, 12, 12),
        conv_layer(LayerKind.POINTWISE, 1, 1, 0, 8, 16, 6, 6),
    ]
    arch = make_arch(layers, (3, 12, 12))
    out = generate(arch, weights_seed=1)
    by_name = dict(_function_chunks(out.source_text))
    assert by_name["layer_00_conv"].count("a +=") == 25
    assert by_name["layer_01_dw"].count("a +=") == 49
    assert by_name["layer_02_dw"].count("a +=") == 9
    # pointwise uses a channel loop, not unrolled taps
    assert by_name["layer_03_pw"].count("a +=") == 1


def test_tap_unrolling_across_sampled_networks():
    for _, arch in sample_nets(8, seed=31, label="cg-taps"):
        out = generate(arch)
        chunks = _function_chunks(out.source_text)
        for s, (name, body) in zip(out.schedule, chunks):
            if name.endswith("_conv") or name.endswith("_dw"):
                assert body.count("a +=") == s.kernel_size**2


def test_ops_emitted_matches_layer_kinds():
    arch = build_network(baseline_genes(SpaceConfig(0.4, 64)), num_classes=10)
    out = generate(arch)
    assert set(out.ops_emitted) == {l.kind.value for l in arch.layers}
    assert out.ops_emitted == tuple(sorted(out.ops_emitted))


def test_generate_deterministic_and_golden():
    arch = tiny_arch()
    a = generate(arch, weights_seed=0)
    b = generate(arch, weights_seed=0)
    assert a.source_text == b.source_text
    assert a.header_text == b.header_text
    assert a.weights_source == b.weights_source
    assert a.memory_map == b.memory_map
    assert hashlib.sha256(a.source_text.encode()).hexdigest() == TINY_SOURCE_SHA


def test_estimated_code_bytes_recomputes():
    arch = tiny_arch()
    out = generate(arch)
    assert out.estimated_code_bytes == estimate_code_bytes(out.ops_emitted, len(arch.layers))
    assert out.estimated_code_bytes == 256 + (1408 + 1152 + 832 + 320) + 176 * 4
    with pytest.raises(LayoutError):
        estimate_code_bytes(("transposed_conv",), 1)


def test_arena_equals_plan_peak():
    arch = tiny_arch()
    plan = plan_memory(arch)
    out = generate(arch, plan=plan)
    assert out.arena_bytes == plan.peak_sram_bytes
    assert f"#define MODEL_ARENA_BYTES {plan.peak_sram_bytes}" in out.header_text


def test_memory_map_soundness_sampled():
    for _, arch in sample_nets(6, seed=77, label="cg-map"):
        out = generate(arch)
        rows = list(out.memory_map)
        owners = {r["name"]: r for r in rows if r["alias_of"] is None}
        for r in rows:
            assert 0 <= r["offset"]
            assert r["offset"] + r["size"] <= out.arena_bytes
            if r["alias_of"] is not None:
                assert r["offset"] == owners[r["alias_of"]]["offset"]
        placed = [r for r in rows if r["alias_of"] is None]
        for i, a in enumerate(placed):
            for b in placed[i + 1 :]:
                overlap_life = not (
                    a["last_use"] < b["first_use"] or a["first_use"] > b["last_use"]
                )
                overlap_addr = not (
                    a["offset"] + a["size"] <= b["offset"]
                    or b["offset"] + b["size"] <= a["offset"]
                )
                assert not (overlap_life and overlap_addr), (a, b)


def test_interpreter_matches_reference_sampled():
    for _, arch in sample_nets(5, seed=41, label="cg-eq"):
        ws = gen_weights(arch, 3)
        x = random_input(arch, 3)
        out = generate(arch, weights=ws)
        got = run_generated(out, arch, ws, x)
        ref = run_reference(arch, ws, x)
        assert (got.data == ref.data).all()
        assert got.shape == ref.shape


def test_residual_network_round_trip():
    arch = build_network(baseline_genes(SpaceConfig(0.4, 64)), num_classes=10)
    assert any(l.kind == LayerKind.RESIDUAL_ADD for l in arch.layers)
    ws = gen_weights(arch, 8)
    x = random_input(arch, 8)
    out = generate(arch, weights=ws)
    assert (run_generated(out, arch, ws, x).data == run_reference(arch, ws, x).data).all()


def test_rotated_final_output_is_rejected():
    layers = [
        conv_layer(LayerKind.POINTWISE, 1, 1, 0, 3, 16, 8, 8),
        conv_layer(LayerKind.DEPTHWISE, 3, 1, 1, 16, 16, 8, 8),
    ]
    arch = make_arch(layers, (3, 8, 8))
    assert plan_memory(arch).layers[1].inplace
    with pytest.raises(LayoutError):
        generate(arch)


def test_single_channel_inplace_tail_is_fine():
    layers = [
        conv_layer(LayerKind.POINTWISE, 1, 1, 0, 3, 1, 8, 8),
        conv_layer(LayerKind.DEPTHWISE, 3, 1, 1, 1, 1, 8, 8),
    ]
    arch = make_arch(layers, (3, 8, 8))
    ws = gen_weights(arch, 2)
    out = generate(arch, weights=ws)  # rotation mod 1 channel is zero
    x = random_input(arch, 2)
    assert (run_generated(out, arch, ws, x).data == run_reference(arch, ws, x).data).all()


def test_include_weights_false_omits_weights_file(tmp_path):
    arch = tiny_arch()
    out = generate(arch, include_weights=False)
    assert out.weights_source is None
    names = write_output(out, tmp_path)
    assert "weights.c" not in names
    assert sorted(names) == ["memory_map.json", "model.c", "model.h"]


def test_write_output_files(tmp_path):
    arch = tiny_arch()
    out = generate(arch, weights_seed=5)
    names = write_output(out, tmp_path)
    assert sorted(names) == ["memory_map.json", "model.c", "model.h", "weights.c"]
    assert (tmp_path / "model.c").read_text() == out.source_text
    rows = json.loads((tmp_path / "memory_map.json").read_text())
    assert rows == [dict(r) for r in out.memory_map]


def test_foreign_plan_rejected():
    with pytest.raises(ShapeMismatchError):
        generate(tiny_arch(), plan=plan_memory(
            make_arch([conv_layer(LayerKind.POINTWISE, 1, 1, 0, 8, 8, 4, 4)], (8, 4, 4))
        ))


HARNESS = """
#include <stdio.h>
#include <stdlib.h>
#include "model.h"

int main(void) {
    static int8_t input[MODEL_INPUT_BYTES];
    size_t got = fread(input, 1, MODEL_INPUT_BYTES, stdin);
    if (got != MODEL_INPUT_BYTES) return 2;
    const int8_t *out = model_invoke(input);
    fwrite(out, 1, MODEL_OUTPUT_BYTES, stdout);
    return 0;
}
"""


@pytest.mark.skipif(shutil.which("cc") is None, reason="no C compiler on PATH")
def test_compiled_model_matches_reference(tmp_path):
    arch = tiny_arch()
    ws = gen_weights(arch, 4)
    out = generate(arch, weights=ws)
    write_output(out, tmp_path)
    (tmp_path / "main.c").write_text(HARNESS)
    exe = tmp_path / "model"
    subprocess.run(
        ["cc", "-std=c99", "-O1", "-o", str(exe), "model.c", "weights.c", "main.c"],
        cwd=tmp_path, check=True, capture_output=True,
    )
    x = random_input(arch, 4)
    proc = subprocess.run([str(exe)], input=x.data.tobytes(), capture_output=True, check=True)
    ref = run_reference(arch, ws, x)
    assert proc.stdout == ref.data.tobytes()
