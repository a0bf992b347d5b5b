"""
Network containers built from a NetworkSpec and the batch backward pass.
"""

import copy
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from errors import DimensionError
from models.tensor import ComplexTensor, RealTensor
from schema.network import LayerDecl, NetworkSpec, Variant
from services.layers import ComplexConv2d, Maxout, Planes, RealConv2d, squared_error

logger = logging.getLogger("compounding.network")

Tensor = Union[ComplexTensor, RealTensor]


def to_planes(x: Tensor) -> Planes:
    if isinstance(x, ComplexTensor):
        return (np.asarray(x.re), np.asarray(x.im))
    if isinstance(x, RealTensor):
        return (np.asarray(x.data),)
    raise TypeError(f"expected a ComplexTensor or RealTensor, got {type(x).__name__}")


def from_planes(planes: Planes) -> Tensor:
    if len(planes) == 2:
        return ComplexTensor(planes[0], planes[1])
    return RealTensor(planes[0])


def split_samples(x) -> List[Planes]:
    """Per-sample plane tuples from a batch tensor, a single sample or a sequence."""
    if isinstance(x, (ComplexTensor, RealTensor)):
        planes = to_planes(x)
        if planes[0].ndim == 4:
            return [tuple(p[i] for p in planes) for i in range(planes[0].shape[0])]
        if planes[0].ndim == 3:
            return [planes]
        raise DimensionError(f"expected (C,H,W) or (N,C,H,W), got {planes[0].shape}")
    return [s if isinstance(s, tuple) else to_planes(s) for s in x]


class ConvBlock:
    """One convolution and the maxout that follows it."""

    def __init__(self, conv, activation: Maxout):
        self.conv = conv
        self.activation = activation

    @property
    def out_channels(self) -> int:
        return self.conv.kernel_count // self.activation.pieces

    def convs(self) -> list:
        return [self.conv]

    def parameters(self) -> List[np.ndarray]:
        return self.conv.parameters()

    def forward(self, planes: Planes):
        z, conv_cache = self.conv.forward(planes)
        out, indices = self.activation.forward(z)
        return out, (conv_cache, indices)

    def backward(self, grads: Planes, cache, input_grad: bool = True):
        conv_cache, indices = cache
        routed, _ = self.activation.backward(grads, indices)
        return self.conv.backward(routed, conv_cache, input_grad)


class InceptionBlock:
    """Parallel paths on one input, each activated, concatenated in path order."""

    def __init__(self, paths: Sequence[ConvBlock]):
        self.paths = list(paths)

    @property
    def out_channels(self) -> int:
        return sum(p.out_channels for p in self.paths)

    def convs(self) -> list:
        return [p.conv for p in self.paths]

    def parameters(self) -> List[np.ndarray]:
        return [a for p in self.paths for a in p.parameters()]

    def forward(self, planes: Planes):
        outputs, caches = [], []
        for path in self.paths:
            out, cache = path.forward(planes)
            outputs.append(out)
            caches.append(cache)
        merged = tuple(np.concatenate([o[i] for o in outputs], axis=0) for i in range(len(planes)))
        return merged, caches

    def backward(self, grads: Planes, caches, input_grad: bool = True):
        input_grads: Optional[List[np.ndarray]] = None
        param_grads: List[np.ndarray] = []
        start = 0
        for path, cache in zip(self.paths, caches):
            stop = start + path.out_channels
            dx, grads_p = path.backward(tuple(g[start:stop] for g in grads), cache, input_grad)
            param_grads.extend(grads_p)
            if dx is not None:
                input_grads = list(dx) if input_grads is None else [a + b for a, b in zip(input_grads, dx)]
            start = stop
        return (tuple(input_grads) if input_grads is not None else None), param_grads


def _make_block(decl: LayerDecl, in_channels: int, is_complex: bool):
    conv_cls = ComplexConv2d if is_complex else RealConv2d
    activation = Maxout(decl.activation.pieces, decl.activation.kind)
    paths = [
        ConvBlock(conv_cls(in_channels, decl.kernel_count, hw), activation)
        for hw in decl.kernel_hw
    ]
    if decl.kind == "inception":
        return InceptionBlock(paths)
    return paths[0]


class SequentialNetwork:
    """Single-branch fully convolutional stack."""

    def __init__(self, spec: NetworkSpec):
        self.spec = spec
        self.blocks = []
        channels = spec.in_channels
        for decl in spec.layers:
            block = _make_block(decl, channels, spec.is_complex)
            self.blocks.append(block)
            channels = block.out_channels

    @property
    def is_complex(self) -> bool:
        return self.spec.is_complex

    @property
    def layers(self) -> list:
        """Convolution layers in declaration order, inception paths in table order."""
        return [conv for block in self.blocks for conv in block.convs()]

    def parameters(self) -> List[np.ndarray]:
        return [a for conv in self.layers for a in conv.parameters()]

    def set_parameters(self, arrays: Sequence[np.ndarray]) -> None:
        arrays = list(arrays)
        expected = len(self.parameters())
        if len(arrays) != expected:
            raise DimensionError(f"network holds {expected} arrays, got {len(arrays)}")
        pos = 0
        for conv in self.layers:
            count = len(conv.parameters())
            conv.set_parameters(arrays[pos : pos + count])
            pos += count

    def astype(self, dtype) -> "SequentialNetwork":
        clone = copy.deepcopy(self)
        clone.set_parameters([a.astype(dtype) for a in self.parameters()])
        return clone

    def _check_input(self, planes: Planes) -> None:
        expected = 2 if self.is_complex else 1
        if len(planes) != expected:
            kind = "complex" if self.is_complex else "real"
            raise DimensionError(f"{self.spec.variant.value} network takes {kind} input")
        if planes[0].ndim != 3 or planes[0].shape[0] != self.spec.in_channels:
            raise DimensionError(
                f"expected {self.spec.in_channels} x H x W input, got {planes[0].shape}"
            )

    def forward_planes(self, planes: Planes):
        self._check_input(planes)
        caches = []
        for block in self.blocks:
            planes, cache = block.forward(planes)
            caches.append(cache)
        return planes, caches

    def backward_planes(self, grads: Planes, caches) -> List[np.ndarray]:
        per_block = []
        for index in range(len(self.blocks) - 1, -1, -1):
            grads, block_grads = self.blocks[index].backward(grads, caches[index], input_grad=index > 0)
            per_block.append(block_grads)
        return [g for block_grads in reversed(per_block) for g in block_grads]

    def forward(self, x: Tensor) -> Tensor:
        samples = split_samples(x)
        outputs = [self.forward_planes(s)[0] for s in samples]
        if to_planes(x)[0].ndim == 4:
            return from_planes(tuple(np.stack([o[i] for o in outputs]) for i in range(len(outputs[0]))))
        return from_planes(outputs[0])

    __call__ = forward

    def sample_gradients(self, x: Planes, y: Planes, batch: int) -> Tuple[float, List[np.ndarray]]:
        pred, caches = self.forward_planes(x)
        loss, grads = squared_error(pred, y, batch)
        return loss, self.backward_planes(grads, caches)


class TwoBranchNetwork:
    """Two independent real networks applied to the real and imaginary planes."""

    def __init__(self, spec: NetworkSpec):
        if spec.branches != 2:
            raise DimensionError("a two-branch network needs a two-branch spec")
        self.spec = spec
        self.branch_re = SequentialNetwork(spec.branch_spec())
        self.branch_im = SequentialNetwork(spec.branch_spec())

    is_complex = False

    @property
    def layers(self) -> list:
        return self.branch_re.layers + self.branch_im.layers

    def parameters(self) -> List[np.ndarray]:
        return self.branch_re.parameters() + self.branch_im.parameters()

    def set_parameters(self, arrays: Sequence[np.ndarray]) -> None:
        arrays = list(arrays)
        half = len(self.branch_re.parameters())
        if len(arrays) != 2 * half:
            raise DimensionError(f"network holds {2 * half} arrays, got {len(arrays)}")
        self.branch_re.set_parameters(arrays[:half])
        self.branch_im.set_parameters(arrays[half:])

    def astype(self, dtype) -> "TwoBranchNetwork":
        clone = copy.deepcopy(self)
        clone.set_parameters([a.astype(dtype) for a in self.parameters()])
        return clone

    def forward_planes(self, planes: Planes):
        if len(planes) != 2:
            raise DimensionError("2BID network takes complex input")
        out_re, cache_re = self.branch_re.forward_planes((planes[0],))
        out_im, cache_im = self.branch_im.forward_planes((planes[1],))
        return (out_re[0], out_im[0]), (cache_re, cache_im)

    def backward_planes(self, grads: Planes, caches) -> List[np.ndarray]:
        cache_re, cache_im = caches
        return self.branch_re.backward_planes((grads[0],), cache_re) + self.branch_im.backward_planes(
            (grads[1],), cache_im
        )

    def forward(self, x: ComplexTensor) -> ComplexTensor:
        samples = split_samples(x)
        outputs = [self.forward_planes(s)[0] for s in samples]
        if to_planes(x)[0].ndim == 4:
            return ComplexTensor(np.stack([o[0] for o in outputs]), np.stack([o[1] for o in outputs]))
        return ComplexTensor(*outputs[0])

    __call__ = forward

    def sample_gradients(self, x: Planes, y: Planes, batch: int) -> Tuple[float, List[np.ndarray]]:
        pred, caches = self.forward_planes(x)
        loss, grads = squared_error(pred, y, batch)
        return loss, self.backward_planes(grads, caches)


Network = Union[SequentialNetwork, TwoBranchNetwork]


def build_network(spec: NetworkSpec) -> Network:
    """Zero-initialised network for a spec."""
    if spec.variant == Variant.TWO_BRANCH and spec.branches == 2:
        return TwoBranchNetwork(spec)
    return SequentialNetwork(spec)


def backward(network: Network, x, y, workers: int = 1) -> Tuple[float, List[np.ndarray]]:
    """Batch loss and gradients for every parameter, aligned with network.parameters().

    Samples may be processed on a thread pool; partial gradients are summed in
    sample order so the result does not depend on the worker count.
    """
    inputs = split_samples(x)
    targets = split_samples(y)
    if len(inputs) != len(targets):
        raise DimensionError(f"{len(inputs)} inputs but {len(targets)} targets")
    if not inputs:
        raise DimensionError("empty batch")
    batch = len(inputs)

    def _one(pair):
        return network.sample_gradients(pair[0], pair[1], batch)

    if workers > 1 and batch > 1:
        with ThreadPoolExecutor(max_workers=min(workers, batch)) as executor:
            results = list(executor.map(_one, zip(inputs, targets)))
    else:
        results = [_one(pair) for pair in zip(inputs, targets)]

    total_loss = 0.0
    total_grads = [np.zeros_like(p) for p in network.parameters()]
    for loss, grads in results:
        total_loss += loss
        for acc, g in zip(total_grads, grads):
            acc += g
    return total_loss, total_grads


def predict(network: Network, samples: Sequence[Planes], workers: int = 1) -> List[Planes]:
    """Order-preserving forward pass over a list of samples."""

    def _one(planes):
        return network.forward_planes(planes)[0]

    if workers > 1 and len(samples) > 1:
        with ThreadPoolExecutor(max_workers=min(workers, len(samples))) as executor:
            return list(executor.map(_one, samples))
    return [_one(s) for s in samples]
