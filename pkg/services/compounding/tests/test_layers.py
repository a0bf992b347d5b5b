"""
Tests for the layer primitives and the hand-written gradients.

Tests cover:
- Convolution against scipy oracles (real and complex, same padding) and
  the real block-matrix form of the complex convolution
- AMU / MU selection, ties and channel grouping
- Complex MSE and Xavier initialisation
- Finite-difference checks of the full backward pass
"""

import math

import numpy as np
import pytest
from scipy.signal import convolve2d

from errors import ConfigurationError, DimensionError
from models.tensor import ComplexTensor, RealTensor
from schema.network import ActivationSpec, LayerDecl, NetworkSpec, Variant
from services.layers import (
    ComplexConv2d,
    Maxout,
    RealConv2d,
    amu_forward,
    complex_conv2d,
    complex_mse,
    correlate2d,
    mu_forward,
    real_conv2d,
    xavier_init,
)
from services.network import build_network


def _correlate_oracle(x, w):
    """Same-size correlation without conjugation, summed over input channels."""
    out = []
    for kernel in w:
        acc = sum(convolve2d(x[c], kernel[c][::-1, ::-1], mode="same") for c in range(x.shape[0]))
        out.append(acc)
    return np.stack(out)


class TestConvolution:
    def test_real_correlation_matches_oracle(self, rng):
        x = rng.standard_normal((3, 9, 11))
        w = rng.standard_normal((4, 3, 5, 3))
        np.testing.assert_allclose(correlate2d(x, w), _correlate_oracle(x, w), rtol=1e-10, atol=1e-12)

    def test_complex_conv_matches_complex_correlation(self, rng):
        layer = xavier_init(ComplexConv2d(2, 4, (3, 5)), rng)
        layer.b_re = rng.standard_normal(4)
        layer.b_im = rng.standard_normal(4)
        x = rng.standard_normal((2, 7, 8)) + 1j * rng.standard_normal((2, 7, 8))
        w = layer.w_re + 1j * layer.w_im
        expected = _correlate_oracle(x, w) + (layer.b_re + 1j * layer.b_im)[:, None, None]
        out = complex_conv2d(ComplexTensor.from_complex(x), layer)
        np.testing.assert_allclose(out.to_complex(), expected, rtol=1e-10, atol=1e-12)

    def test_zero_input_yields_bias(self):
        layer = RealConv2d(1, 2, (3, 3))
        layer.b = np.array([0.5, -1.0])
        out = real_conv2d(RealTensor(np.zeros((1, 4, 4))), layer)
        np.testing.assert_array_equal(out.data[0], np.full((4, 4), 0.5))
        np.testing.assert_array_equal(out.data[1], np.full((4, 4), -1.0))

    def test_output_keeps_spatial_size(self):
        layer = ComplexConv2d(3, 8, (11, 9))
        out = complex_conv2d(ComplexTensor.zeros((3, 5, 6)), layer)
        assert out.shape == (8, 5, 6)

    def test_channel_mismatch(self):
        with pytest.raises(DimensionError):
            complex_conv2d(ComplexTensor.zeros((2, 4, 4)), ComplexConv2d(3, 4, (3, 3)))
        with pytest.raises(DimensionError):
            correlate2d(np.zeros((2, 4, 4)), np.zeros((1, 3, 3, 3)))

    def test_even_kernel_rejected(self):
        with pytest.raises(ConfigurationError):
            ComplexConv2d(1, 4, (4, 3))


class TestMaxout:
    def test_amu_picks_largest_modulus(self):
        values = np.array([1.0 + 0j, 0.0 + 2.0j, -1.5 + 0j, 1.0 + 1.0j]).reshape(4, 1, 1)
        out, indices = amu_forward(ComplexTensor.from_complex(values), 4)
        assert out.shape == (1, 1, 1)
        assert indices[0, 0, 0] == 1
        assert out.to_complex()[0, 0, 0] == 2.0j

    def test_amu_keeps_phase_of_winner(self):
        values = np.array([0.1, -3.0 + 0j, 0.2j, 0.0]).reshape(4, 1, 1)
        out, _ = amu_forward(ComplexTensor.from_complex(values), 4)
        assert out.to_complex()[0, 0, 0] == -3.0

    def test_ties_go_to_lowest_index(self):
        values = np.array([1.0j, 1.0, -1.0, -1.0j]).reshape(4, 1, 1)
        _, indices = amu_forward(ComplexTensor.from_complex(values), 4)
        assert indices[0, 0, 0] == 0
        _, real_indices = mu_forward(RealTensor(np.array([2.0, 2.0, 1.0, 0.0]).reshape(4, 1, 1)), 4)
        assert real_indices[0, 0, 0] == 0

    def test_mu_picks_largest_value_not_magnitude(self):
        data = np.array([-5.0, 1.0, 0.5, 0.0]).reshape(4, 1, 1)
        out, _ = mu_forward(RealTensor(data), 4)
        assert out.data[0, 0, 0] == 1.0

    def test_groups_are_consecutive_channels(self, rng):
        z = rng.standard_normal((8, 3, 3)) + 1j * rng.standard_normal((8, 3, 3))
        out, _ = amu_forward(ComplexTensor.from_complex(z), 4)
        assert out.shape == (2, 3, 3)
        for group in range(2):
            block = z[4 * group : 4 * group + 4]
            winner = np.take_along_axis(block, np.argmax(np.abs(block), axis=0)[None], axis=0)[0]
            np.testing.assert_array_equal(out.to_complex()[group], winner)

    def test_indivisible_channels(self):
        with pytest.raises(ConfigurationError):
            amu_forward(ComplexTensor.zeros((6, 2, 2)), 4)

    def test_backward_routes_to_winner_only(self):
        act = Maxout(2, "MU")
        planes = (np.array([1.0, 3.0, 4.0, 2.0]).reshape(4, 1, 1),)
        _, indices = act.forward(planes)
        (routed,), _ = act.backward((np.array([10.0, 20.0]).reshape(2, 1, 1),), indices)
        np.testing.assert_array_equal(routed.ravel(), [0.0, 10.0, 20.0, 0.0])


def test_complex_mse_single_and_batch(rng):
    yhat = rng.standard_normal((1, 4, 4)) + 1j * rng.standard_normal((1, 4, 4))
    y = rng.standard_normal((1, 4, 4)) + 1j * rng.standard_normal((1, 4, 4))
    single = complex_mse(ComplexTensor.from_complex(yhat), ComplexTensor.from_complex(y))
    assert math.isclose(single, float(np.sum(np.abs(yhat - y) ** 2)), rel_tol=1e-12)

    batch_hat = np.stack([yhat, np.zeros_like(yhat)])
    batch_y = np.stack([y, np.zeros_like(y)])
    batched = complex_mse(ComplexTensor.from_complex(batch_hat), ComplexTensor.from_complex(batch_y))
    assert math.isclose(batched, single / 2.0, rel_tol=1e-12)


def test_xavier_bounds_and_determinism():
    a = xavier_init(ComplexConv2d(16, 32, (5, 3)), np.random.default_rng(7))
    b = xavier_init(ComplexConv2d(16, 32, (5, 3)), np.random.default_rng(7))
    bound = math.sqrt(6.0 / ((16 + 32) * 15))
    assert np.all(np.abs(a.w_re) <= bound) and np.all(np.abs(a.w_im) <= bound)
    assert not np.array_equal(a.w_re, a.w_im)
    np.testing.assert_array_equal(a.w_re, b.w_re)
    assert not np.any(a.b_re) and not np.any(a.b_im)


def _small_spec(variant: Variant, kind: str, in_channels: int = 2) -> NetworkSpec:
    act = ActivationSpec(kind=kind, pieces=4)
    return NetworkSpec(
        variant=variant,
        in_channels=in_channels,
        layers=(
            LayerDecl(kind="conv", kernel_count=8, kernel_hw=((3, 3),), activation=act),
            LayerDecl(kind="inception", kernel_count=4, kernel_hw=((3, 3), (1, 3)), activation=act),
            LayerDecl(kind="final1x1", kernel_count=4, kernel_hw=((1, 1),), activation=act),
        ),
    )


def _initialised(spec, seed=3):
    network = build_network(spec)
    rng = np.random.default_rng(seed)
    for layer in network.layers:
        xavier_init(layer, rng)
        if layer.is_complex:
            layer.b_re = rng.standard_normal(layer.kernel_count) * 0.1
            layer.b_im = rng.standard_normal(layer.kernel_count) * 0.1
        else:
            layer.b = rng.standard_normal(layer.kernel_count) * 0.1
    return network


def _loss(network, x, y):
    loss, _ = network.sample_gradients(x, y, 1)
    return loss


def _check_gradients(network, x, y, rng, draws=4, h=1e-6):
    _, grads = network.sample_gradients(x, y, 1)
    for param, grad in zip(network.parameters(), grads):
        assert grad.shape == param.shape
        for _ in range(draws):
            index = tuple(int(rng.integers(0, s)) for s in param.shape)
            original = param[index]
            param[index] = original + h
            up = _loss(network, x, y)
            param[index] = original - h
            down = _loss(network, x, y)
            param[index] = original
            numeric = (up - down) / (2.0 * h)
            assert numeric == pytest.approx(grad[index], rel=1e-4, abs=1e-6)


class TestGradients:
    def test_complex_network_gradients(self, rng):
        network = _initialised(_small_spec(Variant.CID, "AMU"))
        x = (rng.standard_normal((2, 5, 6)), rng.standard_normal((2, 5, 6)))
        y = (rng.standard_normal((1, 5, 6)), rng.standard_normal((1, 5, 6)))
        _check_gradients(network, x, y, rng)

    def test_real_network_gradients(self, rng):
        network = _initialised(_small_spec(Variant.ID, "MU"))
        x = (rng.standard_normal((2, 5, 6)),)
        y = (rng.standard_normal((1, 5, 6)),)
        _check_gradients(network, x, y, rng)

    def test_two_branch_gradients(self, rng):
        spec = _small_spec(Variant.TWO_BRANCH, "MU").model_copy(update={"branches": 2})
        network = _initialised(spec)
        x = (rng.standard_normal((2, 4, 5)), rng.standard_normal((2, 4, 5)))
        y = (rng.standard_normal((1, 4, 5)), rng.standard_normal((1, 4, 5)))
        _check_gradients(network, x, y, rng, draws=2)


def test_inception_concatenates_in_path_order(rng):
    network = _initialised(_small_spec(Variant.CID, "AMU"))
    x = (rng.standard_normal((2, 4, 4)), rng.standard_normal((2, 4, 4)))
    hidden, _ = network.blocks[0].forward(x)
    merged, _ = network.blocks[1].forward(hidden)
    first, _ = network.blocks[1].paths[0].forward(hidden)
    second, _ = network.blocks[1].paths[1].forward(hidden)
    for plane in range(2):
        np.testing.assert_array_equal(merged[plane][:1], first[plane])
        np.testing.assert_array_equal(merged[plane][1:], second[plane])


def _block_kernel(layer):
    """[[W_re, -W_im], [W_im, W_re]] acting on channels stacked as [re; im]."""
    top = np.concatenate([layer.w_re, -layer.w_im], axis=1)
    bottom = np.concatenate([layer.w_im, layer.w_re], axis=1)
    return np.concatenate([top, bottom], axis=0)


def test_complex_conv_equals_real_block_convolution():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        channels, kernels = int(rng.integers(1, 4)), int(rng.integers(1, 5))
        kernel_hw = (int(rng.choice([1, 3, 5])), int(rng.choice([1, 3, 5])))
        height, width = int(rng.integers(3, 9)), int(rng.integers(3, 9))
        layer = xavier_init(ComplexConv2d(channels, kernels, kernel_hw), rng)
        layer.b_re = rng.standard_normal(kernels)
        layer.b_im = rng.standard_normal(kernels)
        xr = rng.standard_normal((channels, height, width))
        xi = rng.standard_normal((channels, height, width))

        out = complex_conv2d(ComplexTensor(xr, xi), layer)
        stacked = correlate2d(np.concatenate([xr, xi]), _block_kernel(layer))
        np.testing.assert_allclose(out.re, stacked[:kernels] + layer.b_re[:, None, None], rtol=1e-10, atol=1e-10)
        np.testing.assert_allclose(out.im, stacked[kernels:] + layer.b_im[:, None, None], rtol=1e-10, atol=1e-10)


def test_complex_conv_with_real_weights_and_input_is_real_conv(rng):
    for _ in range(10):
        complex_layer = xavier_init(ComplexConv2d(3, 4, (3, 5)), rng)
        complex_layer.w_im = np.zeros_like(complex_layer.w_im)
        complex_layer.b_re = rng.standard_normal(4)
        real_layer = RealConv2d(3, 4, (3, 5))
        real_layer.w = complex_layer.w_re.copy()
        real_layer.b = complex_layer.b_re.copy()
        x = rng.standard_normal((3, 6, 7))

        out = complex_conv2d(ComplexTensor(x, np.zeros_like(x)), complex_layer)
        np.testing.assert_allclose(out.re, real_conv2d(RealTensor(x), real_layer).data, rtol=0, atol=1e-12)
        np.testing.assert_array_equal(out.im, np.zeros_like(out.im))


def test_amu_phase_and_amplitude_on_a_large_tensor():
    rng = np.random.default_rng(99)
    shape = (8, 500, 250)
    re, im = rng.standard_normal(shape), rng.standard_normal(shape)
    out, indices = amu_forward(ComplexTensor(re, im), 4)
    assert out.shape == (2, 500, 250)

    group_re, group_im = re.reshape(2, 4, 500, 250), im.reshape(2, 4, 500, 250)
    chosen_re = np.take_along_axis(group_re, indices[:, None], axis=1)[:, 0]
    chosen_im = np.take_along_axis(group_im, indices[:, None], axis=1)[:, 0]
    np.testing.assert_array_equal(np.arctan2(out.im, out.re), np.arctan2(chosen_im, chosen_re))
    power = out.re**2 + out.im**2
    assert np.all(power[:, None] >= group_re**2 + group_im**2)


def test_xavier_empirical_variance():
    layer = xavier_init(ComplexConv2d(64, 64, (5, 5)), np.random.default_rng(3))
    fan_in = fan_out = 64 * 25
    expected = 2.0 / (fan_in + fan_out)
    for plane in (layer.w_re, layer.w_im):
        assert plane.size >= 100_000
        assert float(np.var(plane)) == pytest.approx(expected, rel=0.05)


def _toy_spec(variant: Variant, kind: str) -> NetworkSpec:
    act = ActivationSpec(kind=kind, pieces=2)
    return NetworkSpec(
        variant=variant,
        in_channels=2,
        layers=(
            LayerDecl(kind="conv", kernel_count=4, kernel_hw=((3, 3),), activation=act),
            LayerDecl(kind="final1x1", kernel_count=2, kernel_hw=((1, 1),), activation=act),
        ),
    )


def _check_every_gradient(network, x, y, h=1e-6):
    _, grads = network.sample_gradients(x, y, 1)
    for param, grad in zip(network.parameters(), grads):
        for index in np.ndindex(param.shape):
            original = param[index]
            param[index] = original + h
            up = _loss(network, x, y)
            param[index] = original - h
            down = _loss(network, x, y)
            param[index] = original
            assert (up - down) / (2.0 * h) == pytest.approx(grad[index], rel=1e-4, abs=1e-6)


@pytest.mark.parametrize("seed", range(20))
@pytest.mark.parametrize(
    "variant,kind,planes",
    [(Variant.CID, "AMU", 2), (Variant.ID, "MU", 1), (Variant.TWO_BRANCH, "MU", 2)],
)
def test_every_parameter_gradient(seed, variant, kind, planes):
    spec = _toy_spec(variant, kind)
    if variant == Variant.TWO_BRANCH:
        spec = spec.model_copy(update={"branches": 2})
    network = _initialised(spec, seed=seed)
    rng = np.random.default_rng(seed)
    x = tuple(rng.standard_normal((2, 4, 5)) for _ in range(planes))
    y = tuple(rng.standard_normal((1, 4, 5)) for _ in range(planes))
    _check_every_gradient(network, x, y)
