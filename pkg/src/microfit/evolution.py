"""Second search stage: evolution over gene vectors inside a fixed space.

A candidate is feasible when its memory plan fits the device.  Each
generation keeps the top scorers as parents and refills the population
with uniform-crossover and point-mutation children; infeasible children
are redrawn a bounded number of times before falling back to fresh random
sampling.  Every random draw comes from a seed labeled with the iteration,
child index and retry attempt, which makes results identical no matter how
the work is spread over processes.

The default score is a stand-in for accuracy: a logistic curve over
log-MACs (bigger network, better score) plus a tiny gene-keyed dither so
distinct candidates never tie exactly.
"""

from __future__ import annotations

import hashlib
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np

from .errors import EvolutionInitError, InvalidGeneError
from .genes import (
    GENE_CHOICES,
    GENE_COUNT,
    ArchGenes,
    SpaceConfig,
    genes_to_vector,
    random_genes,
    vector_to_genes,
)
from .graph import build_network, count_macs
from .planner import DeviceProfile, check_fit, plan_memory
from .rng import make_rng

Evaluator = Callable[[ArchGenes], float]


@lru_cache(maxsize=1 << 15)
def _cached_macs(genes: ArchGenes) -> int:
    return count_macs(build_network(genes))


def surrogate_score(genes: ArchGenes) -> float:
    """Monotone-in-MACs proxy score in [0, 1].

    sigmoid(0.25 * (ln MACs - 17)) puts the interesting range (1e6..1e9
    MACs) on the curve's slope.  The dither term is +-1e-9, far below any
    MAC-driven gap, so it only breaks exact ties between equal-MAC genes.
    """
    macs = _cached_macs(genes)
    x = 0.25 * (math.log(max(macs, 1)) - 17.0)
    score = 1.0 / (1.0 + math.exp(-x))
    digest = hashlib.sha256(genes.canonical_json().encode()).digest()
    u = int.from_bytes(digest[:8], "little") / 2.0**64
    score += (u - 0.5) * 2e-9
    return min(1.0, max(0.0, score))


EVALUATORS: dict[str, Evaluator] = {"surrogate": surrogate_score}


@dataclass(frozen=True)
class Candidate:
    genes: ArchGenes
    score: float
    macs: int
    peak_sram_bytes: int
    flash_bytes: int

    def to_dict(self) -> dict:
        return {
            "genes": self.genes.to_dict(),
            "score": self.score,
            "macs": self.macs,
            "peak_sram_bytes": self.peak_sram_bytes,
            "flash_bytes": self.flash_bytes,
        }


@dataclass(frozen=True)
class EvolutionConfig:
    population: int = 100
    parents: int = 20
    crossover_children: int = 50
    mutation_children: int = 50
    mutation_prob: float = 0.1
    iterations: int = 30
    seed: int = 0
    carry_parents: bool = False
    child_retries: int = 100
    fresh_draw_cap: int = 1000

    def __post_init__(self):
        if min(self.population, self.parents, self.iterations) < 1:
            raise InvalidGeneError("population, parents and iterations must be positive")
        if self.parents > self.population:
            raise InvalidGeneError("cannot select more parents than the population holds")
        if not 0.0 <= self.mutation_prob <= 1.0:
            raise InvalidGeneError("mutation_prob must lie in [0, 1]")
        carried = self.parents if self.carry_parents else 0
        if self.crossover_children + self.mutation_children != self.population - carried:
            raise InvalidGeneError(
                "children per generation must refill the population: "
                f"{self.crossover_children} + {self.mutation_children} != "
                f"{self.population} - {carried}"
            )


@dataclass(frozen=True)
class GenerationStats:
    iteration: int
    best_score: float
    mean_score: float
    worst_score: float
    best_ever_score: float


@dataclass(frozen=True)
class EvolutionResult:
    best: Candidate
    population: tuple[Candidate, ...]
    history: tuple[GenerationStats, ...]
    evaluations: int


def _try_candidate(
    genes: ArchGenes, device: DeviceProfile, evaluator: Evaluator
) -> Candidate | None:
    """Build, plan and score; None when the plan does not fit the device."""
    arch = build_network(genes)
    plan = plan_memory(arch, inplace_dw=True)
    if not check_fit(plan, device).fits:
        return None
    return Candidate(
        genes=genes,
        score=float(evaluator(genes)),
        macs=count_macs(arch),
        peak_sram_bytes=plan.peak_sram_bytes,
        flash_bytes=plan.flash_bytes,
    )


def _crossover_vec(parent_vecs: list[list[int]], rng: np.random.Generator) -> list[int]:
    ia, ib = rng.integers(0, len(parent_vecs), size=2)
    mask = rng.integers(0, 2, size=GENE_COUNT)
    va, vb = parent_vecs[ia], parent_vecs[ib]
    return [va[i] if mask[i] else vb[i] for i in range(GENE_COUNT)]


def _mutate_vec(
    parent_vecs: list[list[int]], rng: np.random.Generator, prob: float
) -> list[int]:
    ip = int(rng.integers(0, len(parent_vecs)))
    vec = list(parent_vecs[ip])
    hits = rng.random(GENE_COUNT) < prob
    picks = rng.integers(0, 3, size=GENE_COUNT)  # every slot offers 3 values
    for i in range(GENE_COUNT):
        if hits[i]:
            vec[i] = GENE_CHOICES[i][picks[i]]
    return vec


def _spawn_child(
    space: SpaceConfig,
    device: DeviceProfile,
    evaluator: Evaluator,
    cfg: EvolutionConfig,
    parent_vecs: list[list[int]],
    iteration: int,
    kind: str,
    index: int,
) -> tuple[Candidate, int]:
    """Produce one feasible child; returns (candidate, evaluations spent)."""
    spent = 0
    for attempt in range(cfg.child_retries):
        rng = make_rng("evolve", cfg.seed, "iter", iteration, kind, index, attempt)
        if kind == "cross":
            vec = _crossover_vec(parent_vecs, rng)
        else:
            vec = _mutate_vec(parent_vecs, rng, cfg.mutation_prob)
        spent += 1
        cand = _try_candidate(vector_to_genes(space, vec), device, evaluator)
        if cand is not None:
            return cand, spent
    # the parents' neighborhood looks saturated with infeasible genes;
    # keep the slot alive with an unbiased redraw
    for attempt in range(cfg.fresh_draw_cap):
        rng = make_rng("evolve", cfg.seed, "iter", iteration, kind, index, "fresh", attempt)
        spent += 1
        cand = _try_candidate(random_genes(space, rng), device, evaluator)
        if cand is not None:
            return cand, spent
    raise EvolutionInitError(
        f"could not draw a single feasible child in {cfg.fresh_draw_cap} fresh samples"
    )


def _init_slot(
    space: SpaceConfig,
    device: DeviceProfile,
    evaluator: Evaluator,
    cfg: EvolutionConfig,
    slot: int,
) -> tuple[Candidate, int]:
    spent = 0
    for attempt in range(cfg.fresh_draw_cap):
        rng = make_rng("evolve", cfg.seed, "init", slot, attempt)
        spent += 1
        cand = _try_candidate(random_genes(space, rng), device, evaluator)
        if cand is not None:
            return cand, spent
    raise EvolutionInitError(
        f"no feasible network found for {device.name} in {cfg.fresh_draw_cap} draws; "
        "the space is a poor match for the device"
    )


def _init_worker(args):
    return _init_slot(*args)


def _child_worker(args):
    return _spawn_child(*args)


def evolve(
    space: SpaceConfig,
    device: DeviceProfile,
    config: EvolutionConfig | None = None,
    evaluator: Evaluator = surrogate_score,
    jobs: int = 1,
) -> EvolutionResult:
    cfg = config or EvolutionConfig()
    pool = ProcessPoolExecutor(max_workers=jobs) if jobs > 1 else None
    try:
        init_tasks = [(space, device, evaluator, cfg, s) for s in range(cfg.population)]
        if pool:
            seeded = list(pool.map(_init_worker, init_tasks, chunksize=8))
        else:
            seeded = [_init_slot(*t) for t in init_tasks]
        population = [c for c, _ in seeded]
        evaluations = sum(n for _, n in seeded)

        best = max(population, key=lambda c: c.score)
        history = []
        for t in range(cfg.iterations):
            ranked = sorted(population, key=lambda c: c.score, reverse=True)
            parents = ranked[: cfg.parents]
            parent_vecs = [genes_to_vector(p.genes) for p in parents]
            tasks = [
                (space, device, evaluator, cfg, parent_vecs, t, kind, j)
                for kind, count in (
                    ("cross", cfg.crossover_children),
                    ("mut", cfg.mutation_children),
                )
                for j in range(count)
            ]
            if pool:
                spawned = list(pool.map(_child_worker, tasks, chunksize=8))
            else:
                spawned = [_spawn_child(*t) for t in tasks]
            children = [c for c, _ in spawned]
            evaluations += sum(n for _, n in spawned)

            population = (parents + children) if cfg.carry_parents else children
            gen_best = max(population, key=lambda c: c.score)
            if gen_best.score > best.score:
                best = gen_best
            history.append(
                GenerationStats(
                    iteration=t,
                    best_score=gen_best.score,
                    mean_score=sum(c.score for c in population) / len(population),
                    worst_score=min(c.score for c in population),
                    best_ever_score=best.score,
                )
            )
    finally:
        if pool:
            pool.shutdown()
    return EvolutionResult(
        best=best,
        population=tuple(sorted(population, key=lambda c: c.score, reverse=True)),
        history=tuple(history),
        evaluations=evaluations,
    )


def random_search(
    space: SpaceConfig,
    device: DeviceProfile,
    budget: int,
    seed: int = 0,
    evaluator: Evaluator = surrogate_score,
) -> Candidate:
    """Equal-budget baseline: best of `budget` fresh feasible draws.

    Infeasible draws still count against the budget, mirroring what the
    evolutionary loop spends on them.
    """
    best = None
    spent = 0
    i = 0
    while spent < budget:
        rng = make_rng("random-search", seed, i)
        i += 1
        spent += 1
        cand = _try_candidate(random_genes(space, rng), device, evaluator)
        if cand is not None and (best is None or cand.score > best.score):
            best = cand
    if best is None:
        raise EvolutionInitError(
            f"random search found no feasible network on {device.name} in {budget} draws"
        )
    return best
