"""
Layer primitives with explicit reverse-mode gradients.

Values flow between layers as tuples of real planes: (re, im) for complex
data and (data,) for real data. Every forward returns the output planes
together with a cache that the matching backward consumes, so a layer
object holds parameters only and can be shared across threads.

Conventions:
- convolution is cross-correlation with symmetric zero "same" padding
- complex weights are two real planes; gradients treat them as independent
  real parameters
- parameters are ordered w_re, w_im, b_re, b_im (real layers: w, b)
"""

import math
from typing import List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from errors import ConfigurationError, DimensionError
from models.tensor import ComplexTensor, RealTensor

Planes = Tuple[np.ndarray, ...]

# bound on the im2col buffer materialised per tensordot call
_CHUNK_ELEMENTS = 1 << 24


def same_padding(kh: int, kw: int) -> Tuple[int, int]:
    if kh % 2 == 0 or kw % 2 == 0:
        raise ConfigurationError(f"kernel {kh}x{kw} has no centred same-padding")
    return kh // 2, kw // 2


def _windows(x: np.ndarray, kh: int, kw: int, padding: Tuple[int, int]) -> np.ndarray:
    ph, pw = padding
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw)))
    return sliding_window_view(xp, (kh, kw), axis=(1, 2))


def _row_chunk(channels: int, width: int, kh: int, kw: int) -> int:
    return max(1, _CHUNK_ELEMENTS // max(1, channels * width * kh * kw))


def correlate2d(x: np.ndarray, w: np.ndarray, padding: Optional[Tuple[int, int]] = None) -> np.ndarray:
    """Multi-channel cross-correlation: x (C, H, W), w (K, C, kh, kw) -> (K, H', W')."""
    if x.ndim != 3 or w.ndim != 4:
        raise DimensionError(f"expected (C,H,W) input and (K,C,kh,kw) kernels, got {x.shape} and {w.shape}")
    channels, _, _ = x.shape
    kernels, w_channels, kh, kw = w.shape
    if channels != w_channels:
        raise DimensionError(f"input has {channels} channels, kernels expect {w_channels}")
    if padding is None:
        padding = same_padding(kh, kw)
    windows = _windows(x, kh, kw, padding)
    out_h, out_w = windows.shape[1], windows.shape[2]
    out = np.empty((kernels, out_h, out_w), dtype=np.result_type(x, w))
    step = _row_chunk(channels, out_w, kh, kw)
    for r0 in range(0, out_h, step):
        r1 = min(out_h, r0 + step)
        out[:, r0:r1] = np.tensordot(w, windows[:, r0:r1], axes=([1, 2, 3], [0, 3, 4]))
    return out


def kernel_gradient(x: np.ndarray, g: np.ndarray, kh: int, kw: int, padding: Tuple[int, int]) -> np.ndarray:
    """dL/dw for correlate2d given the upstream gradient g (K, H', W')."""
    windows = _windows(x, kh, kw, padding)
    out_h, out_w = g.shape[1], g.shape[2]
    grad = np.zeros((g.shape[0], x.shape[0], kh, kw), dtype=np.result_type(x, g))
    step = _row_chunk(x.shape[0], out_w, kh, kw)
    for r0 in range(0, out_h, step):
        r1 = min(out_h, r0 + step)
        grad += np.tensordot(g[:, r0:r1], windows[:, r0:r1], axes=([1, 2], [1, 2]))
    return grad


def input_gradient(g: np.ndarray, w: np.ndarray, padding: Tuple[int, int]) -> np.ndarray:
    """dL/dx for a same-padded correlate2d: correlate g with the flipped, transposed bank."""
    flipped = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    return correlate2d(g, flipped, padding)


class ComplexConv2d:
    """Complex convolution realised as four real correlations plus a complex bias."""

    is_complex = True

    def __init__(self, in_channels: int, kernel_count: int, kernel_hw: Tuple[int, int], dtype=np.float64):
        kh, kw = kernel_hw
        self.padding = same_padding(kh, kw)
        self.in_channels = in_channels
        self.kernel_count = kernel_count
        self.kernel_hw = (kh, kw)
        shape = (kernel_count, in_channels, kh, kw)
        self.w_re = np.zeros(shape, dtype=dtype)
        self.w_im = np.zeros(shape, dtype=dtype)
        self.b_re = np.zeros(kernel_count, dtype=dtype)
        self.b_im = np.zeros(kernel_count, dtype=dtype)

    def parameters(self) -> List[np.ndarray]:
        return [self.w_re, self.w_im, self.b_re, self.b_im]

    def set_parameters(self, arrays: Sequence[np.ndarray]) -> None:
        for current, new in zip(self.parameters(), arrays):
            if current.shape != np.shape(new):
                raise DimensionError(f"parameter shape {np.shape(new)} does not match {current.shape}")
        self.w_re, self.w_im, self.b_re, self.b_im = [np.asarray(a) for a in arrays]

    def forward(self, planes: Planes) -> Tuple[Planes, Planes]:
        xr, xi = planes
        zr = correlate2d(xr, self.w_re, self.padding) - correlate2d(xi, self.w_im, self.padding)
        zi = correlate2d(xi, self.w_re, self.padding) + correlate2d(xr, self.w_im, self.padding)
        zr += self.b_re[:, None, None]
        zi += self.b_im[:, None, None]
        return (zr, zi), planes

    def backward(self, grads: Planes, cache: Planes, input_grad: bool = True) -> Tuple[Optional[Planes], List[np.ndarray]]:
        xr, xi = cache
        gr, gi = grads
        kh, kw = self.kernel_hw
        pad = self.padding
        d_w_re = kernel_gradient(xr, gr, kh, kw, pad) + kernel_gradient(xi, gi, kh, kw, pad)
        d_w_im = kernel_gradient(xr, gi, kh, kw, pad) - kernel_gradient(xi, gr, kh, kw, pad)
        grads_out = [d_w_re, d_w_im, gr.sum(axis=(1, 2)), gi.sum(axis=(1, 2))]
        if not input_grad:
            return None, grads_out
        d_xr = input_gradient(gr, self.w_re, pad) + input_gradient(gi, self.w_im, pad)
        d_xi = input_gradient(gi, self.w_re, pad) - input_gradient(gr, self.w_im, pad)
        return (d_xr, d_xi), grads_out

    def flops(self, height: int, width: int) -> int:
        # four real correlations, the re/im combination folded into the accumulation
        return 4 * 2 * self.kernel_count * self.in_channels * self.kernel_hw[0] * self.kernel_hw[1] * height * width


class RealConv2d:
    is_complex = False

    def __init__(self, in_channels: int, kernel_count: int, kernel_hw: Tuple[int, int], dtype=np.float64):
        kh, kw = kernel_hw
        self.padding = same_padding(kh, kw)
        self.in_channels = in_channels
        self.kernel_count = kernel_count
        self.kernel_hw = (kh, kw)
        self.w = np.zeros((kernel_count, in_channels, kh, kw), dtype=dtype)
        self.b = np.zeros(kernel_count, dtype=dtype)

    def parameters(self) -> List[np.ndarray]:
        return [self.w, self.b]

    def set_parameters(self, arrays: Sequence[np.ndarray]) -> None:
        for current, new in zip(self.parameters(), arrays):
            if current.shape != np.shape(new):
                raise DimensionError(f"parameter shape {np.shape(new)} does not match {current.shape}")
        self.w, self.b = [np.asarray(a) for a in arrays]

    def forward(self, planes: Planes) -> Tuple[Planes, Planes]:
        (x,) = planes
        z = correlate2d(x, self.w, self.padding)
        z += self.b[:, None, None]
        return (z,), planes

    def backward(self, grads: Planes, cache: Planes, input_grad: bool = True) -> Tuple[Optional[Planes], List[np.ndarray]]:
        (x,) = cache
        (g,) = grads
        kh, kw = self.kernel_hw
        param_grads = [kernel_gradient(x, g, kh, kw, self.padding), g.sum(axis=(1, 2))]
        if not input_grad:
            return None, param_grads
        return (input_gradient(g, self.w, self.padding),), param_grads

    def flops(self, height: int, width: int) -> int:
        return 2 * self.kernel_count * self.in_channels * self.kernel_hw[0] * self.kernel_hw[1] * height * width


class Maxout:
    """Per-pixel selection across consecutive channel groups of `pieces` maps.

    AMU ranks group members by complex modulus and passes the selected
    element's real and imaginary parts; MU ranks real values. Ties go to
    the lowest index in the group.
    """

    def __init__(self, pieces: int, kind: str):
        if pieces < 1:
            raise ConfigurationError("maxout needs at least one piece")
        if kind not in ("AMU", "MU"):
            raise ConfigurationError(f"unknown maxout kind {kind!r}")
        self.pieces = pieces
        self.kind = kind

    def parameters(self) -> List[np.ndarray]:
        return []

    def _grouped(self, plane: np.ndarray) -> np.ndarray:
        channels = plane.shape[0]
        if channels % self.pieces:
            raise ConfigurationError(f"{channels} channels cannot form {self.pieces}-piece groups")
        return plane.reshape(channels // self.pieces, self.pieces, *plane.shape[1:])

    def select(self, planes: Planes) -> np.ndarray:
        grouped = [self._grouped(p) for p in planes]
        if self.kind == "AMU":
            key = sum(g * g for g in grouped)
        else:
            key = grouped[0]
        return np.argmax(key, axis=1)

    def forward(self, planes: Planes) -> Tuple[Planes, np.ndarray]:
        indices = self.select(planes)
        out = tuple(
            np.take_along_axis(self._grouped(p), indices[:, None], axis=1)[:, 0] for p in planes
        )
        return out, indices

    def backward(self, grads: Planes, indices: np.ndarray) -> Tuple[Planes, List[np.ndarray]]:
        routed = []
        for g in grads:
            full = np.zeros((g.shape[0], self.pieces) + g.shape[1:], dtype=g.dtype)
            np.put_along_axis(full, indices[:, None], g[:, None], axis=1)
            routed.append(full.reshape(g.shape[0] * self.pieces, *g.shape[1:]))
        return tuple(routed), []


def complex_conv2d(x: ComplexTensor, layer: ComplexConv2d) -> ComplexTensor:
    if x.shape[0] != layer.in_channels:
        raise DimensionError(f"input has {x.shape[0]} channels, layer expects {layer.in_channels}")
    (zr, zi), _ = layer.forward((x.re, x.im))
    return ComplexTensor(zr, zi)


def real_conv2d(x: RealTensor, layer: RealConv2d) -> RealTensor:
    if x.shape[0] != layer.in_channels:
        raise DimensionError(f"input has {x.shape[0]} channels, layer expects {layer.in_channels}")
    (z,), _ = layer.forward((x.data,))
    return RealTensor(z)


def amu_forward(z: ComplexTensor, pieces: int) -> Tuple[ComplexTensor, np.ndarray]:
    (re, im), indices = Maxout(pieces, "AMU").forward((z.re, z.im))
    return ComplexTensor(re, im), indices


def mu_forward(z: RealTensor, pieces: int) -> Tuple[RealTensor, np.ndarray]:
    (data,), indices = Maxout(pieces, "MU").forward((z.data,))
    return RealTensor(data), indices


def squared_error(pred: Planes, target: Planes, batch: int = 1) -> Tuple[float, Planes]:
    """Sum of squared moduli of the difference over all planes, divided by batch."""
    if len(pred) != len(target):
        raise DimensionError("prediction and target differ in plane count")
    loss = 0.0
    grads = []
    for p, t in zip(pred, target):
        if p.shape != t.shape:
            raise DimensionError(f"prediction {p.shape} and target {t.shape} differ")
        diff = p - t
        loss += float(np.sum(diff * diff))
        grads.append(2.0 * diff / batch)
    return loss / batch, tuple(grads)


def complex_mse(yhat: ComplexTensor, y: ComplexTensor) -> float:
    """Mean over the batch of the summed squared modulus of the error.

    A 4-D input is (n, C, H, W) with n the batch; a 3-D input is one sample.
    """
    if yhat.shape != y.shape:
        raise DimensionError(f"prediction {yhat.shape} and target {y.shape} differ")
    batch = yhat.shape[0] if len(yhat.shape) == 4 else 1
    loss, _ = squared_error((yhat.re, yhat.im), (y.re, y.im), batch)
    return loss


def xavier_init(layer, rng: np.random.Generator):
    """Glorot-uniform kernels (re then im for complex layers) and zero biases."""
    kh, kw = layer.kernel_hw
    fan_in = layer.in_channels * kh * kw
    fan_out = layer.kernel_count * kh * kw
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    shape = (layer.kernel_count, layer.in_channels, kh, kw)
    if layer.is_complex:
        layer.w_re = rng.uniform(-bound, bound, size=shape)
        layer.w_im = rng.uniform(-bound, bound, size=shape)
        layer.b_re = np.zeros(layer.kernel_count)
        layer.b_im = np.zeros(layer.kernel_count)
    else:
        layer.w = rng.uniform(-bound, bound, size=shape)
        layer.b = np.zeros(layer.kernel_count)
    return layer
