import math

import numpy as np
import pytest

from microfit.devices import load_builtin
from microfit.errors import EmptySpaceError, SpaceSelectionError
from microfit.genes import SpaceConfig, all_space_configs
from microfit.graph import build_network, count_macs
from microfit.planner import DeviceProfile, check_fit, plan_memory
from microfit.rng import derive_seed
from microfit.space import (
    SpaceStats,
    evaluate_space,
    rank_spaces,
    sample_genes,
    select_best_space,
)

F746 = load_builtin("stm32f746")

# Frozen from evaluate_space((0.5, 144), stm32f746, 1000, seed 42).
GOLDEN_SATISFYING = 1000
GOLDEN_MEAN = 46015815.496
GOLDEN_P80 = 51968848
GOLDEN_MIN = 27502576
GOLDEN_MAX = 68126368


def test_sample_genes_deterministic_and_uniform(small_space):
    a = sample_genes(small_space, 123)
    assert a == sample_genes(small_space, 123)
    assert a != sample_genes(small_space, 124)
    counts = {2: 0, 3: 0, 4: 0}
    for seed in range(2000):
        counts[sample_genes(small_space, seed).stages[0].depth] += 1
    # three equally likely outcomes over 2000 draws; |n - 667| < 5 sigma
    for v in counts.values():
        assert 560 <= v <= 780


def test_evaluate_space_matches_direct_recount():
    config = SpaceConfig(0.4, 80)
    stats = evaluate_space(config, F746, 40, seed=7)
    fitting = []
    for i in range(40):
        genes = sample_genes(config, derive_seed("space-sample", config.tag(), 7, i))
        arch = build_network(genes)
        if check_fit(plan_memory(arch), F746).fits:
            fitting.append(count_macs(arch))
    fitting.sort()
    assert stats.samples == 40
    assert stats.satisfying == len(fitting)
    assert stats.flops_samples == tuple(fitting)
    assert stats.mean_flops == sum(fitting) / len(fitting)
    assert stats.p80_flops == fitting[math.ceil(0.8 * len(fitting)) - 1]


def test_p80_is_the_fourth_of_five():
    stats = evaluate_space(SpaceConfig(0.5, 144), F746, 5, seed=1)
    assert stats.satisfying == 5
    assert stats.p80_flops == stats.flops_samples[3]
    assert list(stats.flops_samples) == sorted(stats.flops_samples)


def test_evaluate_space_golden_pin():
    stats = evaluate_space(SpaceConfig(0.5, 144), F746, 1000, seed=42)
    assert stats.satisfying == GOLDEN_SATISFYING
    assert stats.mean_flops == GOLDEN_MEAN
    assert stats.p80_flops == GOLDEN_P80
    assert stats.flops_samples[0] == GOLDEN_MIN
    assert stats.flops_samples[-1] == GOLDEN_MAX


def test_empty_stats_on_hopeless_device():
    nil = DeviceProfile(name="nil", sram_bytes=1, flash_bytes=1)
    stats = evaluate_space(SpaceConfig(0.3, 64), nil, 5, seed=0)
    assert stats.satisfying == 0
    assert stats.mean_flops == 0.0
    assert stats.p80_flops == 0
    assert stats.flops_samples == ()


def test_to_dict_sample_toggle():
    stats = evaluate_space(SpaceConfig(0.5, 144), F746, 3, seed=2)
    d = stats.to_dict()
    assert d["flops_samples"] == list(stats.flops_samples)
    assert "flops_samples" not in stats.to_dict(include_samples=False)
    assert d["tag"] == "w0.5-r144"


def test_satisfying_monotone_in_sram():
    config = SpaceConfig(1.0, 224)
    flash = 64 * 1024 * 1024
    small = DeviceProfile(name="s", sram_bytes=256 * 1024, flash_bytes=flash)
    big = DeviceProfile(name="b", sram_bytes=512 * 1024, flash_bytes=flash)
    a = evaluate_space(config, small, 60, seed=5)
    b = evaluate_space(config, big, 60, seed=5)
    assert a.satisfying <= b.satisfying
    assert a.satisfying < a.samples  # the small budget actually rejects some


def _stats(config, satisfying, mean):
    return SpaceStats(
        config=config,
        samples=10,
        satisfying=satisfying,
        mean_flops=mean,
        p80_flops=int(mean),
        flops_samples=(),
    )


def test_rank_spaces_ordering():
    a = _stats(SpaceConfig(0.3, 64), 5, 100.0)
    b = _stats(SpaceConfig(0.4, 64), 5, 200.0)
    dead = _stats(SpaceConfig(1.0, 224), 0, 0.0)
    tie_lo = _stats(SpaceConfig(0.5, 96), 5, 200.0)
    ranked = rank_spaces([dead, a, tie_lo, b])
    # higher mean first, dead config last, resolution breaks the tie
    assert ranked[0] is tie_lo
    assert ranked[1] is b
    assert ranked[2] is a
    assert ranked[-1] is dead


def test_rank_spaces_width_breaks_final_tie():
    x = _stats(SpaceConfig(0.5, 96), 5, 200.0)
    y = _stats(SpaceConfig(0.7, 96), 5, 200.0)
    assert rank_spaces([x, y])[0] is y


def test_select_best_space_jobs_equivalence():
    win1, ranked1 = select_best_space(F746, samples=30, seed=3, jobs=1)
    win2, ranked2 = select_best_space(F746, samples=30, seed=3, jobs=2)
    assert win1 == win2
    assert ranked1 == ranked2
    assert len(ranked1) == len(all_space_configs()) == 108


def test_select_best_space_empty_on_one_byte_device():
    nil = DeviceProfile(name="nil", sram_bytes=1, flash_bytes=1)
    with pytest.raises(EmptySpaceError):
        select_best_space(nil, samples=2, seed=0)


def test_select_best_space_min_fraction_unreachable():
    with pytest.raises(SpaceSelectionError):
        select_best_space(F746, samples=20, seed=0, min_fraction=1.01)


def test_winner_respects_min_fraction():
    winner, ranked = select_best_space(F746, samples=50, seed=11, min_fraction=0.3)
    by_config = {s.config: s for s in ranked}
    assert by_config[winner].satisfying >= 0.3 * 50
    # nothing ranked above the winner clears the threshold
    for s in ranked:
        if s.config == winner:
            break
        assert s.satisfying < 0.3 * 50
