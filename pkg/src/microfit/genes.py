"""Search-space encoding.

A deployment scenario is a (width multiplier, input resolution) pair drawn
from a coarse grid; within one scenario, an architecture is described by a
small integer gene vector: per searchable stage a depth choice plus per-block
kernel-size and expansion-ratio choices.  Blocks beyond the active depth keep
their gene slots (crossover and mutation operate on the full fixed-length
vector) but do not affect the built network.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass

import numpy as np

from .errors import InvalidGeneError

WIDTH_CHOICES = (0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
RESOLUTION_CHOICES = tuple(range(48, 225, 16))  # 48, 64, ..., 224
KERNEL_CHOICES = (3, 5, 7)
EXPANSION_CHOICES = (3, 4, 6)
DEPTH_CHOICES = (2, 3, 4)
NUM_STAGES = 5  # searchable stages
MAX_DEPTH = 4  # gene slots per stage


@dataclass(frozen=True, slots=True)
class SpaceConfig:
    """One point of the width x resolution grid."""

    width_multiplier: float
    resolution: int

    def __post_init__(self):
        w10 = round(self.width_multiplier * 10)
        if not (2 <= w10 <= 10) or abs(self.width_multiplier - w10 / 10) > 1e-9:
            raise InvalidGeneError(
                f"width multiplier {self.width_multiplier} not on the 0.2..1.0 grid"
            )
        object.__setattr__(self, "width_multiplier", w10 / 10)
        if self.resolution not in RESOLUTION_CHOICES:
            raise InvalidGeneError(
                f"resolution {self.resolution} not on the 48..224 step-16 grid"
            )

    @property
    def width_tenths(self) -> int:
        """Width multiplier as an exact integer count of tenths."""
        return round(self.width_multiplier * 10)

    def tag(self) -> str:
        return f"w{self.width_multiplier}-r{self.resolution}"

    @classmethod
    def from_tag(cls, tag: str) -> "SpaceConfig":
        m = re.fullmatch(r"w([0-9.]+)-r([0-9]+)", tag)
        if not m:
            raise InvalidGeneError(f"bad space tag {tag!r}, expected e.g. w0.5-r144")
        return cls(float(m.group(1)), int(m.group(2)))

    def to_dict(self) -> dict:
        return {"width_multiplier": self.width_multiplier, "resolution": self.resolution}

    @classmethod
    def from_dict(cls, d: dict) -> "SpaceConfig":
        return cls(d["width_multiplier"], d["resolution"])


def all_space_configs() -> list[SpaceConfig]:
    """The full grid, width-major: 9 widths x 12 resolutions = 108 configs."""
    return [SpaceConfig(w, r) for w in WIDTH_CHOICES for r in RESOLUTION_CHOICES]


@dataclass(frozen=True, slots=True)
class StageGenes:
    depth: int
    kernels: tuple[int, ...]
    expansions: tuple[int, ...]

    def __post_init__(self):
        if self.depth not in DEPTH_CHOICES:
            raise InvalidGeneError(f"stage depth {self.depth} not in {DEPTH_CHOICES}")
        if len(self.kernels) != MAX_DEPTH or len(self.expansions) != MAX_DEPTH:
            raise InvalidGeneError("stage gene tuples must have one slot per possible block")
        for k in self.kernels:
            if k not in KERNEL_CHOICES:
                raise InvalidGeneError(f"kernel size {k} not in {KERNEL_CHOICES}")
        for e in self.expansions:
            if e not in EXPANSION_CHOICES:
                raise InvalidGeneError(f"expansion ratio {e} not in {EXPANSION_CHOICES}")


@dataclass(frozen=True, slots=True)
class ArchGenes:
    space: SpaceConfig
    stages: tuple[StageGenes, ...]

    def __post_init__(self):
        if len(self.stages) != NUM_STAGES:
            raise InvalidGeneError(f"expected {NUM_STAGES} searchable stages, got {len(self.stages)}")

    def to_dict(self) -> dict:
        return {
            "space": self.space.to_dict(),
            "stages": [
                {"depth": s.depth, "kernels": list(s.kernels), "expansions": list(s.expansions)}
                for s in self.stages
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchGenes":
        return cls(
            space=SpaceConfig.from_dict(d["space"]),
            stages=tuple(
                StageGenes(s["depth"], tuple(s["kernels"]), tuple(s["expansions"]))
                for s in d["stages"]
            ),
        )

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


# --- flat vector view (for crossover / mutation / uniform sampling) ---------
#
# Layout: 5 depth slots, then 20 kernel slots (stage-major), then 20
# expansion slots.  Choice tables are indexed per slot.

GENE_CHOICES: tuple[tuple[int, ...], ...] = (
    (DEPTH_CHOICES,) * NUM_STAGES
    + (KERNEL_CHOICES,) * (NUM_STAGES * MAX_DEPTH)
    + (EXPANSION_CHOICES,) * (NUM_STAGES * MAX_DEPTH)
)
GENE_COUNT = len(GENE_CHOICES)  # 45


def genes_to_vector(genes: ArchGenes) -> list[int]:
    vec = [s.depth for s in genes.stages]
    for s in genes.stages:
        vec.extend(s.kernels)
    for s in genes.stages:
        vec.extend(s.expansions)
    return vec


def vector_to_genes(space: SpaceConfig, vec) -> ArchGenes:
    if len(vec) != GENE_COUNT:
        raise InvalidGeneError(f"gene vector length {len(vec)} != {GENE_COUNT}")
    depths = [int(v) for v in vec[:NUM_STAGES]]
    kern = [int(v) for v in vec[NUM_STAGES : NUM_STAGES + NUM_STAGES * MAX_DEPTH]]
    expa = [int(v) for v in vec[NUM_STAGES + NUM_STAGES * MAX_DEPTH :]]
    stages = tuple(
        StageGenes(
            depth=depths[s],
            kernels=tuple(kern[s * MAX_DEPTH : (s + 1) * MAX_DEPTH]),
            expansions=tuple(expa[s * MAX_DEPTH : (s + 1) * MAX_DEPTH]),
        )
        for s in range(NUM_STAGES)
    )
    return ArchGenes(space=space, stages=stages)


def random_genes(space: SpaceConfig, rng: np.random.Generator) -> ArchGenes:
    """Uniform draw over every gene slot (active or not)."""
    depths = rng.integers(0, len(DEPTH_CHOICES), NUM_STAGES)
    kernels = rng.integers(0, len(KERNEL_CHOICES), NUM_STAGES * MAX_DEPTH)
    expansions = rng.integers(0, len(EXPANSION_CHOICES), NUM_STAGES * MAX_DEPTH)
    vec = (
        [DEPTH_CHOICES[i] for i in depths]
        + [KERNEL_CHOICES[i] for i in kernels]
        + [EXPANSION_CHOICES[i] for i in expansions]
    )
    return vector_to_genes(space, vec)


def baseline_genes(space: SpaceConfig) -> ArchGenes:
    """Uniform compound-scaling reference: kernel 3 / expansion 6 everywhere,
    classic stage depths.  Used as the hand-scaled comparison point."""
    depths = (2, 3, 4, 3, 3)
    stages = tuple(
        StageGenes(depth=d, kernels=(3,) * MAX_DEPTH, expansions=(6,) * MAX_DEPTH)
        for d in depths
    )
    return ArchGenes(space=space, stages=stages)
