"""
Network construction and complexity accounting.

FLOP convention: one multiply-accumulate counts as 2 FLOPs over the
same-padded output; a complex kernel costs four real convolutions, the
additions that combine them being absorbed in the accumulation. Biases and
activations are not counted.
"""

import logging
import time
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from schema.network import NetworkSpec, Variant, default_spec
from services.layers import xavier_init
from services.network import Network, build_network
from utils import archive

logger = logging.getLogger("compounding.netspec")

FLOP_CONVENTION = (
    "1 MAC = 2 FLOPs; complex kernel = 4 real convolutions with the re/im "
    "combination folded into accumulation; same-padding output size; "
    "biases and activations excluded"
)

# published FLOP figures for a 338 x 192 input, reported next to ours
PUBLISHED_FLOPS: Dict[Variant, float] = {
    Variant.CID: 7.0e9,
    Variant.TWO_BRANCH: 3.5e9,
    Variant.ID: 23.8e9,
}


def _spec(spec_or_variant: Union[NetworkSpec, Variant, str]) -> NetworkSpec:
    if isinstance(spec_or_variant, NetworkSpec):
        return spec_or_variant
    return default_spec(Variant(spec_or_variant))


def build(spec_or_variant: Union[NetworkSpec, Variant, str], seed: Optional[int] = 0) -> Network:
    """Instantiate a network; seed=None leaves every parameter at zero."""
    spec = _spec(spec_or_variant)
    network = build_network(spec)
    if seed is not None:
        rng = np.random.default_rng(seed)
        for layer in network.layers:
            xavier_init(layer, rng)
    return network


def count_parameters(spec_or_variant) -> int:
    spec = _spec(spec_or_variant)
    planes = 2 if spec.is_complex else 1
    total = 0
    channels = spec.in_channels
    for layer in spec.layers:
        for kh, kw in layer.kernel_hw:
            total += layer.kernel_count * (channels * kh * kw + 1)
        channels = layer.out_channels
    return total * planes * spec.branches


def receptive_field(spec_or_variant) -> Tuple[Tuple[int, int], Tuple[int, int]]:
    """(min_h, min_w), (max_h, max_w) over every path through the inception layers."""
    spec = _spec(spec_or_variant)
    extents = {(0, 0)}
    for layer in spec.layers:
        extents = {(h + kh - 1, w + kw - 1) for h, w in extents for kh, kw in layer.kernel_hw}
    heights = [h for h, _ in extents]
    widths = [w for _, w in extents]
    return (min(heights) + 1, min(widths) + 1), (max(heights) + 1, max(widths) + 1)


def count_flops(spec_or_variant, input_hw: Tuple[int, int]) -> int:
    spec = _spec(spec_or_variant)
    height, width = input_hw
    real_convs = 4 if spec.is_complex else 1
    macs = 0
    channels = spec.in_channels
    for layer in spec.layers:
        for kh, kw in layer.kernel_hw:
            macs += layer.kernel_count * channels * kh * kw
        channels = layer.out_channels
    return 2 * real_convs * macs * height * width * spec.branches


def trace_shapes(spec_or_variant, input_hw: Tuple[int, int]) -> List[Tuple[int, int, int]]:
    """Feature size after the input and after every layer (per branch)."""
    spec = _spec(spec_or_variant)
    height, width = input_hw
    return [(c, height, width) for c in spec.channel_trace()]


def benchmark_forward(network: Network, input_hw: Tuple[int, int], repeats: int = 1, seed: int = 0) -> Dict[str, float]:
    """Wall-clock seconds of one forward pass at float64 and at float32."""
    rng = np.random.default_rng(seed)
    shape = (network.spec.in_channels,) + tuple(input_hw)
    planes64 = _input_planes(network, (rng.standard_normal(shape), rng.standard_normal(shape)))
    timings = {}
    for label, dtype in (("f64", np.float64), ("f32", np.float32)):
        net = network if dtype == np.float64 else network.astype(np.float32)
        planes = tuple(p.astype(dtype) for p in planes64)
        start = time.perf_counter()
        for _ in range(repeats):
            net.forward_planes(planes)
        timings[label] = (time.perf_counter() - start) / repeats
    logger.info("forward pass %s: f64 %.3fs, f32 %.3fs", tuple(input_hw), timings["f64"], timings["f32"])
    return timings


def _input_planes(network: Network, planes):
    if network.spec.is_complex or network.spec.branches == 2:
        return planes[:2]
    return planes[:1]


def save_weights(network: Network, path):
    return archive.save_weights(network, path)


def load_weights(path, spec_or_variant) -> Network:
    network = build(spec_or_variant, seed=None)
    return archive.load_weights(path, network)
