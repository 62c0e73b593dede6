"""Command line front end.

Every subcommand is a thin shell around the library: parse arguments, load
inputs, call one pipeline function, serialize results.  All randomness
flows from --seed through labeled derived seeds, so a whole codesign run
is reproducible from its report line.  Failures from bad input surface as
a single JSON object on stderr and exit code 1.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time

from . import codegen as cg
from .devices import BUILTIN_DEVICES, load_device
from .errors import MicrofitError
from .evolution import EvolutionConfig, evolve, random_search
from .executor import (
    gen_weights,
    random_input,
    read_tensor_file,
    run_reference,
    run_scheduled,
    write_tensor_file,
)
from .genes import ArchGenes, SpaceConfig
from .graph import NetworkArch, build_network, count_macs, count_params, model_size_bytes
from .planner import MemoryPlan, check_fit, per_block_activation, plan_memory
from .rng import derive_seed
from .space import select_best_space

_PROG = "microfit"


def _write_text(path: str, text: str) -> None:
    with open(path, "w") as fh:
        fh.write(text)


def _write_json(path: str, payload) -> None:
    _write_text(path, json.dumps(payload, indent=2) + "\n")


def _load_arch(args) -> NetworkArch:
    if getattr(args, "model", None):
        with open(args.model) as fh:
            return NetworkArch.from_json(fh.read())
    with open(args.genes) as fh:
        genes = ArchGenes.from_dict(json.load(fh))
    return build_network(genes, num_classes=args.classes)


def _sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


# --- analyze ----------------------------------------------------------------


def cmd_analyze(args) -> int:
    arch = _load_arch(args)
    rows = []
    for i, layer in enumerate(arch.layers):
        from .graph import layer_macs, layer_param_counts

        w, b = layer_param_counts(layer)
        rows.append(
            {
                "index": i,
                "kind": layer.kind.value,
                "kernel": layer.kernel_size,
                "stride": layer.stride,
                "input": list(layer.input_shape),
                "output": list(layer.output_shape),
                "macs": layer_macs(layer),
                "params": w + b,
            }
        )
    summary = {
        "layers": len(arch.layers),
        "macs": count_macs(arch),
        "params": count_params(arch),
        "model_bytes_int8": model_size_bytes(arch, 8),
        "model_bytes_int4": model_size_bytes(arch, 4),
    }
    if args.json:
        _write_json(args.json, {"summary": summary, "layers": rows})
    print(f"{'idx':>3} {'kind':<18} {'k':>1} {'s':>1} {'input':<14} {'output':<14} {'macs':>12}")
    for r in rows:
        ish = "x".join(map(str, r["input"]))
        osh = "x".join(map(str, r["output"]))
        print(
            f"{r['index']:>3} {r['kind']:<18} {r['kernel']:>1} {r['stride']:>1}"
            f" {ish:<14} {osh:<14} {r['macs']:>12}"
        )
    print(
        f"total: {summary['macs']} MACs, {summary['params']} params, "
        f"{summary['model_bytes_int8']} B at int8, {summary['model_bytes_int4']} B at int4"
    )
    return 0


# --- optimize-space ---------------------------------------------------------


def cmd_optimize_space(args) -> int:
    device = load_device(args.device)
    seed = derive_seed(args.seed, "optimize-space")
    winner, ranked = select_best_space(
        device,
        samples=args.samples,
        seed=seed,
        min_fraction=args.min_fraction,
        jobs=args.jobs,
    )
    payload = {
        "device": device.to_dict(),
        "samples": args.samples,
        "seed": args.seed,
        "winner": winner.tag(),
        "ranked": [s.to_dict(include_samples=args.full) for s in ranked],
    }
    if args.out:
        _write_json(args.out, payload)
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(
                ["tag", "width", "resolution", "satisfying", "samples", "mean_flops", "p80_flops"]
            )
            for s in ranked:
                w.writerow(
                    [
                        s.config.tag(),
                        s.config.width_multiplier,
                        s.config.resolution,
                        s.satisfying,
                        s.samples,
                        f"{s.mean_flops:.1f}",
                        s.p80_flops,
                    ]
                )
    best = ranked[0]
    print(
        f"winner: {winner.tag()} on {device.name} "
        f"({best.satisfying}/{best.samples} deployable, mean {best.mean_flops:.3e} MACs)"
    )
    return 0


# --- search -----------------------------------------------------------------


def _evolution_config(args) -> EvolutionConfig:
    return EvolutionConfig(
        population=args.population,
        parents=args.parents,
        crossover_children=args.crossover,
        mutation_children=args.mutation,
        mutation_prob=args.mutation_prob,
        iterations=args.iterations,
        seed=derive_seed(args.seed, "search"),
        carry_parents=args.carry_parents,
    )


def cmd_search(args) -> int:
    device = load_device(args.device)
    space = SpaceConfig.from_tag(args.space)
    cfg = _evolution_config(args)
    result = evolve(space, device, cfg, jobs=args.jobs)
    payload = {
        "device": device.to_dict(),
        "space": space.tag(),
        "seed": args.seed,
        "evaluations": result.evaluations,
        "best": result.best.to_dict(),
    }
    if args.baseline:
        base = random_search(space, device, budget=result.evaluations, seed=cfg.seed)
        payload["random_baseline"] = base.to_dict()
    if args.out:
        _write_json(args.out, payload)
    if args.history:
        with open(args.history, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "best_score", "mean_score", "worst_score", "best_ever_score"])
            for g in result.history:
                w.writerow(
                    [g.iteration, f"{g.best_score:.9f}", f"{g.mean_score:.9f}",
                     f"{g.worst_score:.9f}", f"{g.best_ever_score:.9f}"]
                )
    b = result.best
    print(
        f"best: score {b.score:.6f}, {b.macs} MACs, "
        f"peak {b.peak_sram_bytes} B, flash {b.flash_bytes} B "
        f"({result.evaluations} evaluations)"
    )
    return 0


# --- plan -------------------------------------------------------------------


def cmd_plan(args) -> int:
    arch = _load_arch(args)
    plan = plan_memory(arch, inplace_dw=not args.no_inplace_dw)
    if args.out:
        _write_text(args.out, plan.to_json())
    if args.blocks_csv:
        with open(args.blocks_csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["block_index", "stage", "label", "activation_bytes"])
            for (bi, size), block in zip(per_block_activation(arch), arch.blocks):
                w.writerow([bi, block.stage, block.label, size])
    print(
        f"{'idx':>3} {'tile':>4} {'in':>9} {'out':>9} {'extra':>9} "
        f"{'resident':>9} {'peak':>9}  flags"
    )
    for lp in plan.layers:
        flags = "inplace" if lp.inplace else ""
        print(
            f"{lp.layer_index:>3} {lp.tile_width:>4} {lp.input_bytes:>9} "
            f"{lp.output_bytes:>9} {lp.extra_buffer_bytes:>9} "
            f"{lp.resident_skip_bytes:>9} {lp.layer_peak_bytes:>9}  {flags}"
        )
    print(
        f"peak SRAM {plan.peak_sram_bytes} B, flash {plan.flash_bytes} B, "
        f"im2col buffer {plan.im2col_buffer_bytes} B"
    )
    if args.device:
        device = load_device(args.device)
        fit = check_fit(plan, device)
        verdict = "fits" if fit.fits else "does NOT fit"
        print(
            f"{device.name}: {verdict} "
            f"(SRAM margin {fit.sram_margin_bytes} B, flash margin {fit.flash_margin_bytes} B)"
        )
        if not fit.fits:
            return 1
    return 0


# --- run --------------------------------------------------------------------


def cmd_run(args) -> int:
    arch = _load_arch(args)
    weights = gen_weights(arch, args.weights_seed, zero_weights=args.zero_weights)
    if args.input:
        inp = read_tensor_file(args.input, arch.input_quant)
    else:
        inp = random_input(arch, derive_seed(args.seed, "input"))
    if args.engine == "reference":
        out = run_reference(arch, weights, inp)
        measured = None
        planned = None
    else:
        plan = plan_memory(arch, inplace_dw=not args.no_inplace_dw)
        res = run_scheduled(arch, weights, inp, plan=plan)
        out = res.output
        measured = res.measured_peak_bytes
        planned = plan.peak_sram_bytes
    if args.out:
        write_tensor_file(args.out, out)
    report = {
        "engine": args.engine,
        "weights_seed": args.weights_seed,
        "output_shape": list(out.shape),
        "output_sha256": out.digest(),
        "planned_peak_bytes": planned,
        "measured_peak_bytes": measured,
    }
    if args.report:
        _write_json(args.report, report)
    print(json.dumps(report))
    return 0


# --- codegen ----------------------------------------------------------------


def cmd_codegen(args) -> int:
    arch = _load_arch(args)
    plan = plan_memory(arch, inplace_dw=not args.no_inplace_dw)
    weights = gen_weights(arch, args.weights_seed)
    out = cg.generate(arch, plan, weights=weights)
    written = cg.write_output(out, args.out)
    print(
        f"wrote {', '.join(written)} to {args.out}: arena {out.arena_bytes} B, "
        f"~{out.estimated_code_bytes} B of code, ops: {', '.join(out.ops_emitted)}"
    )
    return 0


# --- codesign ---------------------------------------------------------------


def cmd_codesign(args) -> int:
    t0 = time.monotonic()
    device = load_device(args.device)
    os.makedirs(args.out, exist_ok=True)
    space_seed = derive_seed(args.seed, "optimize-space")
    weights_seed = derive_seed(args.seed, "weights")

    winner, ranked = select_best_space(
        device, samples=args.samples, seed=space_seed, jobs=args.jobs
    )
    _write_json(
        os.path.join(args.out, "space_stats.json"),
        {
            "device": device.to_dict(),
            "winner": winner.tag(),
            "ranked": [s.to_dict(include_samples=False) for s in ranked],
        },
    )
    print(f"[1/3] space: {winner.tag()} on {device.name}")

    cfg = EvolutionConfig(seed=derive_seed(args.seed, "search"))
    result = evolve(winner, device, cfg, jobs=args.jobs)
    _write_json(
        os.path.join(args.out, "best.json"),
        {"space": winner.tag(), "best": result.best.to_dict(),
         "evaluations": result.evaluations},
    )
    with open(os.path.join(args.out, "history.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "best_score", "mean_score", "worst_score", "best_ever_score"])
        for g in result.history:
            w.writerow(
                [g.iteration, f"{g.best_score:.9f}", f"{g.mean_score:.9f}",
                 f"{g.worst_score:.9f}", f"{g.best_ever_score:.9f}"]
            )
    print(f"[2/3] search: score {result.best.score:.6f}, {result.best.macs} MACs")

    arch = build_network(result.best.genes, num_classes=args.classes)
    plan = plan_memory(arch, inplace_dw=True)
    _write_text(os.path.join(args.out, "model.json"), arch.to_json())
    _write_text(os.path.join(args.out, "plan.json"), plan.to_json())
    weights = gen_weights(arch, weights_seed)
    out = cg.generate(arch, plan, weights=weights)
    written = cg.write_output(out, args.out)
    print(f"[3/3] codegen: arena {out.arena_bytes} B, ~{out.estimated_code_bytes} B code")

    artifacts = sorted(written + ["space_stats.json", "best.json", "history.csv",
                                  "model.json", "plan.json"])
    record = {
        "command": "codesign",
        "device": device.name,
        "seed": args.seed,
        "samples": args.samples,
        "classes": args.classes,
        "stage_seeds": {
            "optimize-space": space_seed,
            "search": cfg.seed,
            "weights": weights_seed,
        },
        "space": winner.tag(),
        "best_score": result.best.score,
        "macs": result.best.macs,
        "peak_sram_bytes": plan.peak_sram_bytes,
        "flash_bytes": plan.flash_bytes,
        "arena_bytes": out.arena_bytes,
        "estimated_code_bytes": out.estimated_code_bytes,
        "artifact_sha256": {
            name: _sha256_file(os.path.join(args.out, name)) for name in artifacts
        },
        "wall_time_s": round(time.monotonic() - t0, 3),
    }
    with open(os.path.join(args.out, "run_report.jsonl"), "a") as fh:
        fh.write(json.dumps(record) + "\n")
    return 0


# --- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=_PROG,
        description="Memory-aware tiny network design: plan, search, run, emit C.",
    )
    sub = parser.add_subparsers(dest="cmd", required=True)
    device_names = ", ".join(BUILTIN_DEVICES)

    def common(p, jobs=False):
        p.add_argument("--seed", type=int, default=0, help="root seed (default 0)")
        if jobs:
            p.add_argument("--jobs", type=int, default=1, help="worker processes")

    def arch_source(p):
        g = p.add_mutually_exclusive_group(required=True)
        g.add_argument("--model", help="network JSON produced by this tool")
        g.add_argument("--genes", help="gene JSON (space + stages)")
        p.add_argument("--classes", type=int, default=1000, help="classifier width")

    p = sub.add_parser("analyze", help="layer table, MACs, params, model size")
    arch_source(p)
    p.add_argument("--json", help="write the table as JSON")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("optimize-space", help="rank width/resolution spaces for a device")
    p.add_argument("--device", required=True, help=f"builtin ({device_names}) or JSON path")
    p.add_argument("--samples", type=int, default=1000, help="networks sampled per space")
    p.add_argument("--min-fraction", type=float, default=0.05)
    p.add_argument("--full", action="store_true", help="keep per-sample MACs in the JSON")
    p.add_argument("--out", help="stats JSON path")
    p.add_argument("--csv", help="summary CSV path")
    common(p, jobs=True)
    p.set_defaults(func=cmd_optimize_space)

    p = sub.add_parser("search", help="evolution search inside one space")
    p.add_argument("--space", required=True, help="space tag such as w0.5-r144")
    p.add_argument("--device", required=True)
    p.add_argument("--population", type=int, default=100)
    p.add_argument("--parents", type=int, default=20)
    p.add_argument("--crossover", type=int, default=50)
    p.add_argument("--mutation", type=int, default=50)
    p.add_argument("--mutation-prob", type=float, default=0.1)
    p.add_argument("--iterations", type=int, default=30)
    p.add_argument("--carry-parents", action="store_true")
    p.add_argument("--baseline", action="store_true", help="also run random search at equal budget")
    p.add_argument("--out", help="result JSON path")
    p.add_argument("--history", help="per-generation CSV path")
    common(p, jobs=True)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("plan", help="static memory plan for a network")
    arch_source(p)
    p.add_argument("--device", help="check the plan against a device")
    p.add_argument("--no-inplace-dw", action="store_true")
    p.add_argument("--out", help="plan JSON path")
    p.add_argument("--blocks-csv", help="per-block activation CSV")
    common(p)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("run", help="int8 inference with generated weights")
    arch_source(p)
    p.add_argument("--input", help="input tensor file; random when omitted")
    p.add_argument("--weights-seed", type=int, default=0)
    p.add_argument("--zero-weights", action="store_true")
    p.add_argument("--engine", choices=("scheduled", "reference"), default="scheduled")
    p.add_argument("--no-inplace-dw", action="store_true")
    p.add_argument("--out", help="output tensor file")
    p.add_argument("--report", help="run report JSON path")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("codegen", help="emit C99 sources for a network")
    arch_source(p)
    p.add_argument("--weights-seed", type=int, default=0)
    p.add_argument("--no-inplace-dw", action="store_true")
    p.add_argument("--out", required=True, help="output directory")
    common(p)
    p.set_defaults(func=cmd_codegen)

    p = sub.add_parser("codesign", help="space -> search -> plan -> C, end to end")
    p.add_argument("--device", required=True)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--classes", type=int, default=1000)
    p.add_argument("--out", required=True, help="output directory")
    common(p, jobs=True)
    p.set_defaults(func=cmd_codesign)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except MicrofitError as exc:
        _fail(args.cmd, exc)
        return 1
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        _fail(args.cmd, exc)
        return 1


def _fail(cmd: str, exc: Exception) -> None:
    print(
        json.dumps(
            {"command": cmd, "error": type(exc).__name__, "message": str(exc)}
        ),
        file=sys.stderr,
    )


if __name__ == "__main__":
    sys.exit(main())
