import numpy as np
import pytest

from microfit.genes import ArchGenes, SpaceConfig, all_space_configs, random_genes
from microfit.graph import (
    INPUT_QUANT,
    LayerKind,
    LayerSpec,
    NetworkArch,
    QuantParams,
    build_network,
)
from microfit.rng import make_rng


def sample_nets(count, seed, label="nets", configs=None, num_classes=10):
    """Deterministic stream of (genes, arch) over the whole space grid."""
    configs = configs or all_space_configs()
    rng = make_rng(label, seed)
    out = []
    for i in range(count):
        cfg = configs[int(rng.integers(len(configs)))]
        genes = random_genes(cfg, make_rng(label, seed, i))
        out.append((genes, build_network(genes, num_classes=num_classes)))
    return out


def conv_layer(kind, k, stride, pad, cin, cout, hin, win, relu6=False, residual_source=-1):
    if kind in (LayerKind.POINTWISE, LayerKind.FULLY_CONNECTED):
        k, pad = 1, 0
    hout = (hin + 2 * pad - k) // stride + 1
    wout = (win + 2 * pad - k) // stride + 1
    if kind == LayerKind.AVG_POOL:
        hout = wout = 1
    if kind == LayerKind.FULLY_CONNECTED:
        hout = wout = 1
    return LayerSpec(
        kind=kind,
        kernel_size=k,
        stride=stride,
        padding=pad,
        in_channels=cin,
        out_channels=cout,
        input_shape=(cin, hin, win),
        output_shape=(cout, hout, wout),
        has_relu6=relu6,
        residual_source=residual_source,
    )


def make_arch(layers, input_shape, quants=None):
    """Assemble a synthetic NetworkArch with simple quant parameters."""
    if quants is None:
        quants = [QuantParams(scale=0.04 + 0.003 * i, zero_point=0) for i in range(len(layers))]
    return NetworkArch(
        input_shape=input_shape,
        input_quant=INPUT_QUANT,
        layers=tuple(layers),
        layer_quant=tuple(quants),
        blocks=(),
    )


def tiny_arch():
    """A 4-layer network: 3x3 conv -> depthwise -> pointwise -> avg pool."""
    layers = [
        conv_layer(LayerKind.CONV, 3, 1, 1, 3, 8, 8, 8, relu6=True),
        conv_layer(LayerKind.DEPTHWISE, 3, 1, 1, 8, 8, 8, 8, relu6=True),
        conv_layer(LayerKind.POINTWISE, 1, 1, 0, 8, 12, 8, 8),
        conv_layer(LayerKind.AVG_POOL, 8, 1, 0, 12, 12, 8, 8),
    ]
    return make_arch(layers, (3, 8, 8))


@pytest.fixture(scope="session")
def small_space():
    return SpaceConfig(0.4, 64)


@pytest.fixture(scope="session")
def small_arch(small_space):
    from microfit.genes import baseline_genes

    return build_network(baseline_genes(small_space), num_classes=10)
