import json
import subprocess
import sys

import pytest

from microfit.cli import main
from microfit.executor import random_input, write_tensor_file
from microfit.genes import SpaceConfig, baseline_genes
from microfit.graph import build_network, count_macs
from microfit.planner import MemoryPlan, plan_memory
from microfit.rng import derive_seed

SPACE = SpaceConfig(0.4, 64)


def _genes_file(tmp_path):
    path = tmp_path / "genes.json"
    path.write_text(json.dumps(baseline_genes(SPACE).to_dict()))
    return str(path)


def _arch():
    return build_network(baseline_genes(SPACE), num_classes=10)


def test_module_entry_point(tmp_path):
    genes = _genes_file(tmp_path)
    proc = subprocess.run(
        [sys.executable, "-m", "microfit", "analyze", "--genes", genes, "--classes", "10"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0
    assert "total:" in proc.stdout
    assert f"{count_macs(_arch())} MACs" in proc.stdout


def test_analyze_json_summary(tmp_path, capsys):
    genes = _genes_file(tmp_path)
    out = tmp_path / "table.json"
    assert main(["analyze", "--genes", genes, "--classes", "10", "--json", str(out)]) == 0
    capsys.readouterr()
    payload = json.loads(out.read_text())
    arch = _arch()
    assert payload["summary"]["macs"] == count_macs(arch)
    assert payload["summary"]["layers"] == len(arch.layers)
    assert len(payload["layers"]) == len(arch.layers)


def test_plan_round_trip_and_fit(tmp_path, capsys):
    genes = _genes_file(tmp_path)
    out = tmp_path / "plan.json"
    code = main([
        "plan", "--genes", genes, "--classes", "10",
        "--out", str(out), "--device", "stm32f746",
        "--blocks-csv", str(tmp_path / "blocks.csv"),
    ])
    assert code == 0
    assert "fits" in capsys.readouterr().out
    loaded = MemoryPlan.from_json(out.read_text())
    assert loaded == plan_memory(_arch())
    lines = (tmp_path / "blocks.csv").read_text().strip().splitlines()
    assert len(lines) == 1 + len(_arch().blocks)


def test_plan_nonfitting_device_exits_1(tmp_path, capsys):
    genes = _genes_file(tmp_path)
    dev = tmp_path / "dev.json"
    dev.write_text(json.dumps({"name": "nil", "sram_bytes": 16, "flash_bytes": 16}))
    code = main(["plan", "--genes", genes, "--classes", "10", "--device", str(dev)])
    assert code == 1
    assert "does NOT fit" in capsys.readouterr().out


def test_run_engines_agree_and_report(tmp_path, capsys):
    genes = _genes_file(tmp_path)
    rep_s = tmp_path / "sched.json"
    rep_r = tmp_path / "ref.json"
    assert main(["run", "--genes", genes, "--classes", "10", "--report", str(rep_s)]) == 0
    assert main([
        "run", "--genes", genes, "--classes", "10",
        "--engine", "reference", "--report", str(rep_r),
    ]) == 0
    capsys.readouterr()
    sched = json.loads(rep_s.read_text())
    ref = json.loads(rep_r.read_text())
    assert sched["output_sha256"] == ref["output_sha256"]
    assert sched["measured_peak_bytes"] <= sched["planned_peak_bytes"]
    assert ref["measured_peak_bytes"] is None


def test_run_with_input_file_round_trip(tmp_path, capsys):
    genes = _genes_file(tmp_path)
    arch = _arch()
    tensor = tmp_path / "input.bin"
    write_tensor_file(tensor, random_input(arch, derive_seed(0, "input")))
    rep_a = tmp_path / "a.json"
    rep_b = tmp_path / "b.json"
    assert main(["run", "--genes", genes, "--classes", "10", "--report", str(rep_a)]) == 0
    assert main([
        "run", "--genes", genes, "--classes", "10",
        "--input", str(tensor), "--report", str(rep_b),
        "--out", str(tmp_path / "output.bin"),
    ]) == 0
    capsys.readouterr()
    a = json.loads(rep_a.read_text())
    b = json.loads(rep_b.read_text())
    assert a["output_sha256"] == b["output_sha256"]
    assert (tmp_path / "output.bin").stat().st_size > 12


def test_codegen_writes_sources(tmp_path, capsys):
    genes = _genes_file(tmp_path)
    out = tmp_path / "c"
    assert main(["codegen", "--genes", genes, "--classes", "10", "--out", str(out)]) == 0
    capsys.readouterr()
    for name in ("model.c", "model.h", "weights.c", "memory_map.json"):
        assert (out / name).stat().st_size > 0
    rows = json.loads((out / "memory_map.json").read_text())
    assert any(r["name"] == "input" for r in rows)


def test_model_json_and_genes_agree(tmp_path, capsys):
    genes = _genes_file(tmp_path)
    arch = _arch()
    model = tmp_path / "model.json"
    model.write_text(arch.to_json())
    rep_g = tmp_path / "g.json"
    rep_m = tmp_path / "m.json"
    assert main(["run", "--genes", genes, "--classes", "10", "--report", str(rep_g)]) == 0
    assert main(["run", "--model", str(model), "--report", str(rep_m)]) == 0
    capsys.readouterr()
    assert (
        json.loads(rep_g.read_text())["output_sha256"]
        == json.loads(rep_m.read_text())["output_sha256"]
    )


def _stderr_json(capsys):
    err = capsys.readouterr().err.strip()
    assert err.count("\n") == 0
    return json.loads(err)


def test_error_reporting_bad_json(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["analyze", "--genes", str(bad)]) == 1
    payload = _stderr_json(capsys)
    assert payload["command"] == "analyze"
    assert payload["error"] == "JSONDecodeError"


def test_error_reporting_missing_file(capsys):
    assert main(["analyze", "--genes", "/nonexistent/genes.json"]) == 1
    payload = _stderr_json(capsys)
    assert payload["error"] == "FileNotFoundError"


def test_error_reporting_unknown_device(tmp_path, capsys):
    assert main(["optimize-space", "--device", "z80", "--samples", "2"]) == 1
    payload = _stderr_json(capsys)
    assert payload["command"] == "optimize-space"
    assert "z80" in payload["message"]


def test_error_reporting_bad_space_tag(capsys):
    assert main(["search", "--space", "w0.75-r100", "--device", "stm32f746"]) == 1
    payload = _stderr_json(capsys)
    assert payload["command"] == "search"


def test_search_smoke_with_baseline(tmp_path, capsys):
    out = tmp_path / "best.json"
    hist = tmp_path / "hist.csv"
    args = [
        "search", "--space", "w0.5-r144", "--device", "stm32f746",
        "--population", "6", "--parents", "2", "--crossover", "3", "--mutation", "3",
        "--iterations", "2", "--baseline", "--out", str(out), "--history", str(hist),
    ]
    assert main(args) == 0
    capsys.readouterr()
    first = out.read_bytes()
    payload = json.loads(first)
    assert payload["space"] == "w0.5-r144"
    assert 0.0 <= payload["best"]["score"] <= 1.0
    assert payload["best"]["peak_sram_bytes"] <= 320 * 1024
    assert "random_baseline" in payload
    assert len(hist.read_text().strip().splitlines()) == 3
    # byte-identical on a rerun
    assert main(args) == 0
    capsys.readouterr()
    assert out.read_bytes() == first


def test_optimize_space_smoke(tmp_path, capsys):
    out = tmp_path / "stats.json"
    csv_path = tmp_path / "stats.csv"
    code = main([
        "optimize-space", "--device", "stm32f746", "--samples", "25",
        "--jobs", "2", "--out", str(out), "--csv", str(csv_path),
    ])
    assert code == 0
    assert "winner:" in capsys.readouterr().out
    payload = json.loads(out.read_text())
    assert payload["winner"] == payload["ranked"][0]["tag"]
    assert len(payload["ranked"]) == 108
    assert all("flops_samples" not in s for s in payload["ranked"])
    assert len(csv_path.read_text().strip().splitlines()) == 109


def test_codesign_end_to_end(tmp_path, capsys):
    out = tmp_path / "artifacts"
    code = main([
        "codesign", "--device", "stm32f412", "--samples", "40",
        "--jobs", "2", "--classes", "10", "--out", str(out),
    ])
    assert code == 0
    capsys.readouterr()
    report_lines = (out / "run_report.jsonl").read_text().strip().splitlines()
    assert len(report_lines) == 1
    record = json.loads(report_lines[0])
    assert record["command"] == "codesign"
    assert record["stage_seeds"] == {
        "optimize-space": derive_seed(0, "optimize-space"),
        "search": derive_seed(0, "search"),
        "weights": derive_seed(0, "weights"),
    }
    import hashlib

    for name, digest in record["artifact_sha256"].items():
        assert hashlib.sha256((out / name).read_bytes()).hexdigest() == digest
    plan = MemoryPlan.from_json((out / "plan.json").read_text())
    assert plan.peak_sram_bytes == record["peak_sram_bytes"]
    assert plan.peak_sram_bytes <= 256 * 1024
