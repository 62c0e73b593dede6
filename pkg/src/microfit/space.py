"""First search stage: pick the (width, resolution) design space.

For each point of the 9x12 grid, sample m random architectures, keep those
whose memory plan fits the device, and score the config by the mean MAC
count of the survivors: the grid point whose random networks are both
deployable and as large as possible wins.  Everything is derived from
labeled seeds, so per-config evaluation is order- and worker-independent.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import EmptySpaceError, SpaceSelectionError
from .genes import ArchGenes, SpaceConfig, all_space_configs, random_genes
from .graph import build_network, count_macs
from .planner import DeviceProfile, check_fit, plan_memory
from .rng import derive_seed


def sample_genes(space: SpaceConfig, seed: int) -> ArchGenes:
    """One uniform draw from the gene space of a config."""
    return random_genes(space, np.random.default_rng(seed))


@dataclass(frozen=True)
class SpaceStats:
    config: SpaceConfig
    samples: int
    satisfying: int
    mean_flops: float
    p80_flops: int
    flops_samples: tuple[int, ...]  # sorted MACs of the satisfying networks

    def to_dict(self, include_samples: bool = True) -> dict:
        d = {
            "tag": self.config.tag(),
            "config": self.config.to_dict(),
            "samples": self.samples,
            "satisfying": self.satisfying,
            "mean_flops": self.mean_flops,
            "p80_flops": self.p80_flops,
        }
        if include_samples:
            d["flops_samples"] = list(self.flops_samples)
        return d


def evaluate_space(
    config: SpaceConfig, device: DeviceProfile, samples: int, seed: int
) -> SpaceStats:
    """Sample `samples` networks from the config and measure deployability."""
    fitting = []
    for i in range(samples):
        genes = sample_genes(config, derive_seed("space-sample", config.tag(), seed, i))
        arch = build_network(genes)
        plan = plan_memory(arch, inplace_dw=True)
        if check_fit(plan, device).fits:
            fitting.append(count_macs(arch))
    fitting.sort()
    if fitting:
        mean = sum(fitting) / len(fitting)
        p80 = fitting[max(0, math.ceil(0.8 * len(fitting)) - 1)]
    else:
        mean = 0.0
        p80 = 0
    return SpaceStats(
        config=config,
        samples=samples,
        satisfying=len(fitting),
        mean_flops=mean,
        p80_flops=p80,
        flops_samples=tuple(fitting),
    )


def _eval_worker(args):
    return evaluate_space(*args)


def rank_spaces(stats: list[SpaceStats]) -> list[SpaceStats]:
    """Mean MACs of deployable networks, descending; configs with no
    deployable network last; ties prefer higher resolution, then width."""
    return sorted(
        stats,
        key=lambda s: (
            s.satisfying == 0,
            -s.mean_flops,
            -s.config.resolution,
            -s.config.width_multiplier,
        ),
    )


def select_best_space(
    device: DeviceProfile,
    samples: int = 1000,
    seed: int = 0,
    min_fraction: float = 0.05,
    jobs: int = 1,
) -> tuple[SpaceConfig, list[SpaceStats]]:
    configs = all_space_configs()
    tasks = [(c, device, samples, seed) for c in configs]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            stats = list(pool.map(_eval_worker, tasks, chunksize=4))
    else:
        stats = [evaluate_space(*t) for t in tasks]
    ranked = rank_spaces(stats)
    if all(s.satisfying == 0 for s in ranked):
        raise EmptySpaceError(
            f"no config has a single network deployable on {device.name} "
            f"({device.sram_bytes} B SRAM, {device.flash_bytes} B flash)"
        )
    threshold = min_fraction * samples
    for s in ranked:
        if s.satisfying >= threshold:
            return s.config, ranked
    raise SpaceSelectionError(
        f"no config reaches the minimum deployable fraction {min_fraction:.0%} on {device.name}"
    )
