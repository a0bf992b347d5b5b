"""
Delay-and-sum beamforming on polar grids, coherent compounding and B-mode.

RF channels are beamformed as analytic signals: the real part is the RF
image and the imaginary part is kept as its quadrature plane, which gives
the envelope without a Hilbert transform across the coarse depth grid.
"""

import logging
from typing import Optional, Sequence

import numpy as np
from scipy.signal import hilbert, resample_poly

from config import AcquisitionConfig
from errors import DimensionError
from models.imaging import BeamformedImage, BeamformGrid, ChannelData, DataKind
from models.tensor import ComplexTensor, RealTensor
from services.simulator import element_positions, transmit_path

logger = logging.getLogger("compounding.beamformer")


def _delay_and_sum(ch: ChannelData, cfg: AcquisitionConfig, grid: BeamformGrid, tilt_deg: float, upsample: Optional[int]) -> np.ndarray:
    upsample = cfg.das_upsample if upsample is None else upsample
    baseband = ch.kind == DataKind.IQ
    samples = ch.as_array() if baseband else hilbert(ch.samples.data, axis=1)
    fs = ch.fs
    if upsample > 1:
        samples = resample_poly(samples, upsample, 1, axis=1)
        fs = fs * upsample
    n_samples = samples.shape[1]
    x, z = grid.mesh()
    tx = transmit_path(cfg, tilt_deg, x, z)
    image = np.zeros(grid.shape, dtype=np.complex128)
    if n_samples < 2:
        return image
    # element order fixes the summation order per pixel
    for element, xe in enumerate(element_positions(cfg)):
        tau = (tx + np.hypot(x - xe, z)) / cfg.c
        position = (tau - ch.t0) * fs
        index = np.floor(position).astype(np.int64)
        frac = position - index
        inside = (index >= 0) & (index + 1 < n_samples)
        index = np.clip(index, 0, n_samples - 2)
        trace = samples[element]
        value = trace[index] * (1.0 - frac) + trace[index + 1] * frac
        if baseband:
            value = value * np.exp(2j * np.pi * cfg.f0 * tau)
        image += np.where(inside, value, 0.0)
    return image


def das_rf(ch: ChannelData, cfg: AcquisitionConfig, grid: BeamformGrid, tilt_deg: float, upsample: Optional[int] = None) -> BeamformedImage:
    """Unapodised delay-and-sum of RF channels; samples outside the record add nothing."""
    if ch.kind != DataKind.RF:
        raise DimensionError("das_rf expects RF channel data")
    if ch.element_count != cfg.element_count:
        raise DimensionError(f"{ch.element_count} channels for a {cfg.element_count}-element array")
    image = _delay_and_sum(ch, cfg, grid, tilt_deg, upsample)
    return BeamformedImage(RealTensor(image.real), grid, tilt_deg, quadrature=image.imag)


def das_iq(ch: ChannelData, cfg: AcquisitionConfig, grid: BeamformGrid, tilt_deg: float, upsample: Optional[int] = None) -> BeamformedImage:
    """Baseband delay-and-sum; each delayed sample is rotated by exp(+j 2 pi f0 tau)."""
    if ch.kind != DataKind.IQ:
        raise DimensionError("das_iq expects I/Q channel data")
    if ch.element_count != cfg.element_count:
        raise DimensionError(f"{ch.element_count} channels for a {cfg.element_count}-element array")
    image = _delay_and_sum(ch, cfg, grid, tilt_deg, upsample)
    return BeamformedImage(ComplexTensor(image.real, image.imag), grid, tilt_deg)


def _ordered_mean(stack: np.ndarray) -> np.ndarray:
    # summing the sorted stack makes the result independent of input order
    return np.sort(stack, axis=0).sum(axis=0) / stack.shape[0]


def compound(images: Sequence[BeamformedImage]) -> BeamformedImage:
    """Coherent pixelwise mean of images on one grid and of one kind."""
    if not images:
        raise DimensionError("nothing to compound")
    first = images[0]
    for img in images[1:]:
        if img.kind != first.kind:
            raise DimensionError(f"cannot compound {img.kind.value} with {first.kind.value}")
        if img.grid != first.grid:
            raise DimensionError("cannot compound images on different grids")
    count = sum(img.compound_count for img in images)
    tilt = first.tilt if len(images) == 1 else None
    if first.kind == DataKind.IQ:
        re = _ordered_mean(np.stack([img.pixels.re for img in images]))
        im = _ordered_mean(np.stack([img.pixels.im for img in images]))
        return BeamformedImage(ComplexTensor(re, im), first.grid, tilt, count)
    data = _ordered_mean(np.stack([img.pixels.data for img in images]))
    quadrature = None
    if all(img.quadrature is not None for img in images):
        quadrature = _ordered_mean(np.stack([img.quadrature for img in images]))
    elif any(img.quadrature is not None for img in images):
        logger.debug("dropping the quadrature plane: not every compounded RF image carries one")
    return BeamformedImage(RealTensor(data), first.grid, tilt, count, quadrature)


def envelope(img: BeamformedImage, analytic: bool = True) -> np.ndarray:
    """
    |IQ| for baseband images. RF images use their quadrature plane when
    present (and analytic is set), else a Hilbert envelope along depth.
    """
    if img.kind == DataKind.IQ:
        return np.hypot(img.pixels.re, img.pixels.im)
    if analytic and img.quadrature is not None:
        return np.hypot(img.pixels.data, img.quadrature)
    return np.abs(hilbert(img.pixels.data, axis=0))


def normalize(env: np.ndarray) -> np.ndarray:
    peak = float(np.max(env)) if env.size else 0.0
    if peak <= 0.0:
        return np.zeros_like(env, dtype=np.float64)
    return env / peak


def log_compress(env: np.ndarray, dynamic_range_db: float = 60.0) -> np.ndarray:
    """Map an envelope to [0, 1]: peak -> 1, peak - dynamic_range_db and below -> 0."""
    norm = normalize(env)
    out = np.zeros_like(norm)
    positive = norm > 0
    db = 20.0 * np.log10(norm[positive])
    out[positive] = (np.clip(db, -dynamic_range_db, 0.0) + dynamic_range_db) / dynamic_range_db
    return out


def envelope_bmode(img: BeamformedImage, dynamic_range_db: float = 60.0) -> np.ndarray:
    return log_compress(envelope(img), dynamic_range_db)
