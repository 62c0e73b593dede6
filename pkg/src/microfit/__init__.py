"""microfit: memory-first design of int8 networks for microcontrollers.

The pieces compose as a pipeline: pick a width/resolution space that a
device can hold (`space`), evolve genes inside it (`evolution`), plan the
activation memory exactly (`planner`), run the result with int8 arithmetic
(`executor`), and emit it as standalone C (`codegen`).
"""

from .errors import (
    ArenaOverflowError,
    EmptySpaceError,
    EvolutionInitError,
    InvalidGeneError,
    LayoutError,
    MicrofitError,
    ShapeMismatchError,
    SpaceSelectionError,
    TilingError,
    UnsupportedBitWidthError,
)
from .genes import (
    ArchGenes,
    SpaceConfig,
    StageGenes,
    all_space_configs,
    baseline_genes,
    random_genes,
)
from .graph import (
    LayerKind,
    LayerSpec,
    NetworkArch,
    QuantParams,
    build_network,
    count_macs,
    count_params,
    model_size_bytes,
    scaled_channels,
)
from .planner import (
    DeviceProfile,
    FitReport,
    MemoryPlan,
    check_fit,
    im2col_requirement,
    per_block_activation,
    plan_memory,
    tile_width,
)
from .devices import BUILTIN_DEVICES, load_device
from .executor import (
    TensorBuf,
    WeightSet,
    gen_weights,
    random_input,
    read_tensor_file,
    run_reference,
    run_scheduled,
    write_tensor_file,
)
from .space import SpaceStats, evaluate_space, sample_genes, select_best_space
from .evolution import (
    Candidate,
    EvolutionConfig,
    EvolutionResult,
    evolve,
    random_search,
    surrogate_score,
)
from .codegen import CodegenOutput, estimate_code_bytes, generate, run_generated
from .rng import derive_seed, make_rng

__version__ = "0.1.0"
