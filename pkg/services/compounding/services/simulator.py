"""
Synthetic diverging-wave acquisition.

Geometry: the array lies on z = 0 with elements centred on x = 0. Every
transmit is a diverging wave from a virtual source behind the array at
distance (aperture / 2) / tan(sector / 2), rotated by the tilt angle. Time
zero is the instant the wavefront leaves the first element to fire, so the
transmit path of a point is its distance to the virtual source minus the
shortest source-to-element distance.
"""

import logging
import math
from typing import Tuple

import numpy as np
from scipy.signal import gausspulse, oaconvolve

from config import AcquisitionConfig, DatasetConfig
from errors import ConfigurationError
from models.imaging import BeamformGrid, ChannelData, Disk, PhantomScene, Wire
from models.tensor import RealTensor

logger = logging.getLogger("compounding.simulator")

PULSE_BWR_DB = -6.0
PULSE_TPR_DB = -60.0
SPREADING_REFERENCE = 0.01  # metres; receive amplitude is 1 at this distance
_SCATTERER_BLOCK = 4096


def element_positions(cfg: AcquisitionConfig) -> np.ndarray:
    return (np.arange(cfg.element_count) - (cfg.element_count - 1) / 2.0) * cfg.pitch


def virtual_source(cfg: AcquisitionConfig, tilt_deg: float) -> Tuple[float, float]:
    if abs(tilt_deg) >= 90.0:
        raise ConfigurationError(f"tilt {tilt_deg} deg is outside +-90 deg")
    half_opening = math.radians(cfg.sector_deg) / 2.0
    distance = (cfg.aperture / 2.0) / math.tan(half_opening)
    theta = math.radians(tilt_deg)
    return -distance * math.sin(theta), -distance * math.cos(theta)


def _source_offset(cfg: AcquisitionConfig, source: Tuple[float, float]) -> float:
    sx, sz = source
    return float(np.min(np.hypot(element_positions(cfg) - sx, sz)))


def transmit_delays(cfg: AcquisitionConfig, tilt_deg: float) -> np.ndarray:
    """Firing time of each element, seconds; the earliest element fires at 0."""
    source = virtual_source(cfg, tilt_deg)
    distances = np.hypot(element_positions(cfg) - source[0], source[1])
    return (distances - distances.min()) / cfg.c


def transmit_path(cfg: AcquisitionConfig, tilt_deg: float, x: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Distance travelled by the transmit wavefront from time zero to (x, z)."""
    source = virtual_source(cfg, tilt_deg)
    return np.hypot(x - source[0], z - source[1]) - _source_offset(cfg, source)


def pulse_cutoff(cfg: AcquisitionConfig) -> float:
    return float(gausspulse("cutoff", fc=cfg.f0, bw=cfg.fractional_bandwidth, bwr=PULSE_BWR_DB, tpr=PULSE_TPR_DB))


def pulse_waveform(cfg: AcquisitionConfig, fs: float) -> Tuple[np.ndarray, np.ndarray]:
    """Gaussian-modulated cosine sampled at fs, centred on t = 0, truncated at -60 dB."""
    half = int(math.ceil(pulse_cutoff(cfg) * fs))
    t = np.arange(-half, half + 1) / fs
    return t, gausspulse(t, fc=cfg.f0, bw=cfg.fractional_bandwidth, bwr=PULSE_BWR_DB)


def record_samples(cfg: AcquisitionConfig) -> int:
    duration = (2.0 * cfg.max_depth + cfg.aperture) / cfg.c + 2.0 * pulse_cutoff(cfg)
    return int(math.ceil(duration * cfg.fs_rf))


def _arrivals(cfg: AcquisitionConfig, tilt_deg: float, x: np.ndarray, z: np.ndarray):
    elements = element_positions(cfg)
    tx = transmit_path(cfg, tilt_deg, x, z)
    rx = np.hypot(x[None, :] - elements[:, None], z[None, :])
    tau = (tx[None, :] + rx) / cfg.c
    return tau, rx


def out_of_window(cfg: AcquisitionConfig, scene: PhantomScene, tilt_deg: float) -> np.ndarray:
    """Mask of scatterers that cannot be recorded for this transmit."""
    if scene.scatterer_count == 0:
        return np.zeros(0, dtype=bool)
    too_deep = np.hypot(scene.x, scene.z) > cfg.max_depth
    behind = scene.z <= 0.0
    tau, _ = _arrivals(cfg, tilt_deg, scene.x, scene.z)
    late = np.any(tau * cfg.fs_rf >= record_samples(cfg) - 1, axis=0) | np.any(tau < 0, axis=0)
    return too_deep | behind | late


def simulate_channels(cfg: AcquisitionConfig, scene: PhantomScene, tilt_deg: float) -> ChannelData:
    """RF channel data at fs_rf for one diverging-wave transmit.

    Each echo is the scene reflectivity, optionally spread by
    SPREADING_REFERENCE / receive distance, delayed by
    (transmit path + receive path) / c. Arrivals are splatted linearly on a
    grid oversampled by cfg.sim_oversampling and convolved with the pulse.
    """
    n_samples = record_samples(cfg)
    elements = cfg.element_count
    if scene.scatterer_count == 0:
        return ChannelData(RealTensor(np.zeros((elements, n_samples))), fs=cfg.fs_rf, t0=0.0)

    ignored = out_of_window(cfg, scene, tilt_deg)
    if ignored.any():
        logger.warning("tilt %+.0f deg: %d scatterers outside the recording window ignored", tilt_deg, int(ignored.sum()))
    keep = ~ignored
    x, z, reflectivity = scene.x[keep], scene.z[keep], scene.amplitude[keep]

    oversampling = cfg.sim_oversampling
    fs_fine = cfg.fs_rf * oversampling
    n_fine = n_samples * oversampling
    fine = np.zeros(elements * n_fine)
    row_offset = (np.arange(elements) * n_fine)[:, None]
    for start in range(0, x.size, _SCATTERER_BLOCK):
        block = slice(start, start + _SCATTERER_BLOCK)
        tau, rx = _arrivals(cfg, tilt_deg, x[block], z[block])
        amp = np.broadcast_to(reflectivity[block][None, :], tau.shape)
        if cfg.receive_spreading:
            amp = amp * (SPREADING_REFERENCE / np.maximum(rx, cfg.pitch))
        position = tau * fs_fine
        index = np.floor(position).astype(np.int64)
        frac = position - index
        flat = (row_offset + index).ravel()
        fine += np.bincount(flat, weights=(amp * (1.0 - frac)).ravel(), minlength=fine.size)
        fine += np.bincount(flat + 1, weights=(amp * frac).ravel(), minlength=fine.size)

    _, pulse = pulse_waveform(cfg, fs_fine)
    half = pulse.size // 2
    shaped = oaconvolve(fine.reshape(elements, n_fine), pulse[None, :], mode="full", axes=1)
    rf = shaped[:, half : half + n_fine : oversampling]
    return ChannelData(RealTensor(rf), fs=cfg.fs_rf, t0=0.0)


def resolution_cell_area(cfg: AcquisitionConfig, depth: float) -> float:
    axial = cfg.c / (2.0 * cfg.bandwidth)
    lateral = cfg.wavelength * depth / cfg.aperture
    return axial * lateral


def _sector_area(grid: BeamformGrid) -> float:
    return 0.5 * math.radians(grid.sector_deg) * (grid.depth_end**2 - grid.depth_start**2)


def _uniform_in_sector(rng: np.random.Generator, grid: BeamformGrid, count: int, r_min=None, r_max=None, margin=0.0):
    r_min = grid.depth_start if r_min is None else r_min
    r_max = grid.depth_end if r_max is None else r_max
    half = math.radians(grid.sector_deg) / 2.0 - margin
    r = np.sqrt(rng.uniform(r_min**2, r_max**2, size=count))
    phi = rng.uniform(-half, half, size=count)
    return r * np.sin(phi), r * np.cos(phi)


def _place_disks(rng, grid: BeamformGrid, ds: DatasetConfig, count: int):
    disks = []
    attempts = 0
    while len(disks) < count and attempts < 200:
        attempts += 1
        radius = float(rng.uniform(ds.disk_radius_min, ds.disk_radius_max))
        # room for the equal-area annulus and its guard around the disk
        reach = 1.6 * radius + 2.0e-3
        r_min, r_max = grid.depth_start + reach, grid.depth_end - reach
        if r_min >= r_max:
            continue
        r = float(np.sqrt(rng.uniform(r_min**2, r_max**2)))
        margin = math.asin(min(1.0, reach / r))
        half = math.radians(grid.sector_deg) / 2.0 - margin
        if half <= 0:
            continue
        phi = float(rng.uniform(-half, half))
        candidate = Disk(x=r * math.sin(phi), z=r * math.cos(phi), radius=radius)
        if all(math.hypot(candidate.x - d.x, candidate.z - d.z) > 1.6 * (candidate.radius + d.radius) + 4.0e-3 for d in disks):
            disks.append(candidate)
    return disks


def _place_wires(rng, grid: BeamformGrid, ds: DatasetConfig, count: int, disks):
    wires = []
    attempts = 0
    # keep wires clear of the sector edges so a lateral profile fits
    margin = 8 * grid.angle_step
    while len(wires) < count and attempts < 200:
        attempts += 1
        x, z = _uniform_in_sector(rng, grid, 1, r_min=grid.depth_start + 2.0e-3, r_max=grid.depth_end - 2.0e-3, margin=margin)
        x, z = float(x[0]), float(z[0])
        clear_of_disks = all(math.hypot(x - d.x, z - d.z) > 1.6 * d.radius + 4.0e-3 for d in disks)
        clear_of_wires = all(math.hypot(x - w.x, z - w.z) > 5.0e-3 for w in wires)
        if clear_of_disks and clear_of_wires:
            wires.append(Wire(x=x, z=z))
    return wires


def random_scene(
    cfg: AcquisitionConfig,
    grid: BeamformGrid,
    ds: DatasetConfig,
    rng: np.random.Generator,
) -> PhantomScene:
    """Fully developed speckle with anechoic disks and bright wire targets."""
    z_mid = 0.5 * (grid.depth_start + grid.depth_end)
    count = int(round(ds.scatterers_per_cell * _sector_area(grid) / resolution_cell_area(cfg, z_mid)))
    x, z = _uniform_in_sector(rng, grid, count)
    amplitude = rng.standard_normal(count)

    disks = _place_disks(rng, grid, ds, int(rng.integers(ds.disks_min, ds.disks_max + 1)))
    inside = np.zeros(count, dtype=bool)
    for disk in disks:
        inside |= disk.contains(x, z)
    x, z, amplitude = x[~inside], z[~inside], amplitude[~inside]

    wires = _place_wires(rng, grid, ds, int(rng.integers(ds.wires_min, ds.wires_max + 1)), disks)
    if wires:
        x = np.concatenate([x, [w.x for w in wires]])
        z = np.concatenate([z, [w.z for w in wires]])
        amplitude = np.concatenate([amplitude, np.full(len(wires), ds.wire_amplitude)])
    return PhantomScene(x, z, amplitude, disks, wires)


def point_scene(x: float, z: float, amplitude: float = 1.0) -> PhantomScene:
    return PhantomScene(np.array([x]), np.array([z]), np.array([amplitude]), wires=[Wire(x=x, z=z)])


def ignored_count(cfg: AcquisitionConfig, scene: PhantomScene, tilts) -> int:
    if scene.scatterer_count == 0:
        return 0
    mask = np.zeros(scene.scatterer_count, dtype=bool)
    for tilt in tilts:
        mask |= out_of_window(cfg, scene, tilt)
    return int(mask.sum())
