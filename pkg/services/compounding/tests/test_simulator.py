import logging
import math

import numpy as np
import pytest
from scipy.signal import hilbert

from config import DatasetConfig, GridConfig
from errors import ConfigurationError
from models.imaging import PhantomScene
from services import simulator


def test_element_positions_centred(small_acq):
    x = simulator.element_positions(small_acq)
    assert x.size == 16
    assert x.mean() == pytest.approx(0.0, abs=1e-15)
    np.testing.assert_allclose(np.diff(x), small_acq.pitch)


def test_virtual_source_behind_array(small_acq):
    sx, sz = simulator.virtual_source(small_acq, 0.0)
    assert sx == pytest.approx(0.0)
    # 90 deg opening: the source sits half an aperture behind the array
    assert sz == pytest.approx(-small_acq.aperture / 2.0)
    sx_tilted, _ = simulator.virtual_source(small_acq, 10.0)
    assert sx_tilted < 0.0
    with pytest.raises(ConfigurationError):
        simulator.virtual_source(small_acq, 90.0)


def test_transmit_delays(small_acq):
    flat = simulator.transmit_delays(small_acq, 0.0)
    assert flat.min() == 0.0
    np.testing.assert_allclose(flat, flat[::-1], atol=1e-15)
    tilted = simulator.transmit_delays(small_acq, 10.0)
    # a positive tilt fires from the -x side first
    assert np.argmin(tilted) < np.argmax(tilted)


def test_empty_scene_records_silence(small_acq):
    ch = simulator.simulate_channels(small_acq, PhantomScene.empty(), 0.0)
    assert ch.samples.shape == (16, simulator.record_samples(small_acq))
    assert not np.any(ch.samples.data)
    assert ch.fs == small_acq.fs_rf and ch.t0 == 0.0


def test_point_echo_arrives_on_time(small_acq):
    x, z = 0.004, 0.025
    ch = simulator.simulate_channels(small_acq, simulator.point_scene(x, z), 10.0)
    env = np.abs(hilbert(ch.samples.data, axis=1))
    tau, _ = simulator._arrivals(small_acq, 10.0, np.array([x]), np.array([z]))
    expected = tau[:, 0] * small_acq.fs_rf
    np.testing.assert_allclose(np.argmax(env, axis=1), expected, atol=1.5)


def test_superposition(small_acq, rng):
    a = PhantomScene(rng.uniform(-0.01, 0.01, 20), rng.uniform(0.015, 0.035, 20), rng.standard_normal(20))
    b = PhantomScene(rng.uniform(-0.01, 0.01, 20), rng.uniform(0.015, 0.035, 20), rng.standard_normal(20))
    both = simulator.simulate_channels(small_acq, a.merged(b), -10.0).samples.data
    split = simulator.simulate_channels(small_acq, a, -10.0).samples.data + simulator.simulate_channels(small_acq, b, -10.0).samples.data
    scale = np.max(np.abs(both))
    np.testing.assert_allclose(both, split, atol=1e-9 * scale)
    doubled = simulator.simulate_channels(small_acq, a.scaled(2.0), -10.0).samples.data
    single = simulator.simulate_channels(small_acq, a, -10.0).samples.data
    np.testing.assert_allclose(doubled, 2.0 * single, atol=1e-9 * np.max(np.abs(doubled)))


def _peak_envelope(acq, depth):
    ch = simulator.simulate_channels(acq, simulator.point_scene(0.0, depth), 0.0)
    return float(np.max(np.abs(hilbert(ch.samples.data, axis=1))))


def test_receive_spreading_attenuates_deep_echoes(small_acq):
    assert _peak_envelope(small_acq, 0.035) < 0.6 * _peak_envelope(small_acq, 0.015)
    flat = small_acq.model_copy(update={"receive_spreading": False})
    assert _peak_envelope(flat, 0.035) == pytest.approx(_peak_envelope(flat, 0.015), rel=0.05)


def test_out_of_window_scatterers_are_ignored(small_acq, caplog):
    scene = simulator.point_scene(0.0, 0.060)
    with caplog.at_level(logging.WARNING, logger="compounding.simulator"):
        ch = simulator.simulate_channels(small_acq, scene, 0.0)
    assert not np.any(ch.samples.data)
    assert "ignored" in caplog.text
    assert simulator.ignored_count(small_acq, scene, small_acq.tilt_angles) == 1


def test_pulse_is_centred(acq):
    t, pulse = simulator.pulse_waveform(acq, acq.fs_rf * 8)
    assert t[pulse.size // 2] == 0.0
    assert np.argmax(pulse) == pulse.size // 2
    assert abs(pulse[0]) < 1e-2


class TestRandomScene:
    def _scene(self, acq, seed):
        grid = GridConfig().iq_grid()
        ds = DatasetConfig(disks_min=2, disks_max=2, wires_min=2, wires_max=2)
        return grid, ds, simulator.random_scene(acq, grid, ds, np.random.default_rng(seed))

    def test_annotations_and_density(self, acq):
        grid, ds, scene = self._scene(acq, 0)
        assert len(scene.disks) == 2 and len(scene.wires) == 2
        for disk in scene.disks:
            assert not np.any(disk.contains(scene.x, scene.z))
            assert grid.covers(disk.x, disk.z)
        for wire in scene.wires:
            assert grid.covers(wire.x, wire.z)
        assert np.count_nonzero(scene.amplitude == ds.wire_amplitude) >= 2
        depth = np.hypot(scene.x, scene.z)
        assert depth.min() >= grid.depth_start - 1e-12 and depth.max() <= grid.depth_end + 1e-12
        z_mid = 0.5 * (grid.depth_start + grid.depth_end)
        expected = ds.scatterers_per_cell * simulator._sector_area(grid) / simulator.resolution_cell_area(acq, z_mid)
        assert scene.scatterer_count == pytest.approx(expected, rel=0.25)

    def test_seeded(self, acq):
        _, _, a = self._scene(acq, 5)
        _, _, b = self._scene(acq, 5)
        np.testing.assert_array_equal(a.x, b.x)
        np.testing.assert_array_equal(a.amplitude, b.amplitude)
        assert a.disks == b.disks


def test_resolution_cell_area(acq):
    depth = 0.04
    expected = (acq.c / (2 * acq.bandwidth)) * (acq.wavelength * depth / acq.aperture)
    assert simulator.resolution_cell_area(acq, depth) == pytest.approx(expected)
    assert math.isclose(simulator.resolution_cell_area(acq, 2 * depth), 2 * expected)
