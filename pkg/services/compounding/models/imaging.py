from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple, Union

import numpy as np

from errors import DimensionError, MetricError
from models.tensor import ComplexTensor, RealTensor


class DataKind(str, Enum):
    RF = "RF"
    IQ = "IQ"


@dataclass(frozen=True)
class Disk:
    """Anechoic inclusion, metres."""

    x: float
    z: float
    radius: float

    def contains(self, x: np.ndarray, z: np.ndarray) -> np.ndarray:
        return (x - self.x) ** 2 + (z - self.z) ** 2 <= self.radius**2


@dataclass(frozen=True)
class Wire:
    x: float
    z: float


@dataclass
class PhantomScene:
    """Point scatterers plus the annotations used for region metrics."""

    x: np.ndarray
    z: np.ndarray
    amplitude: np.ndarray
    disks: List[Disk] = field(default_factory=list)
    wires: List[Wire] = field(default_factory=list)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64).ravel()
        self.z = np.asarray(self.z, dtype=np.float64).ravel()
        self.amplitude = np.asarray(self.amplitude, dtype=np.float64).ravel()
        if not (self.x.shape == self.z.shape == self.amplitude.shape):
            raise DimensionError("scatterer coordinate and amplitude arrays differ in length")
        if not np.all(np.isfinite(self.amplitude)):
            raise DimensionError("scatterer reflectivities must be finite")

    @classmethod
    def empty(cls) -> "PhantomScene":
        return cls(np.zeros(0), np.zeros(0), np.zeros(0))

    @property
    def scatterer_count(self) -> int:
        return int(self.x.size)

    def scaled(self, alpha: float) -> "PhantomScene":
        return PhantomScene(self.x, self.z, self.amplitude * alpha, list(self.disks), list(self.wires))

    def merged(self, other: "PhantomScene") -> "PhantomScene":
        return PhantomScene(
            np.concatenate([self.x, other.x]),
            np.concatenate([self.z, other.z]),
            np.concatenate([self.amplitude, other.amplitude]),
            self.disks + other.disks,
            self.wires + other.wires,
        )


@dataclass(frozen=True)
class ChannelData:
    """Per-element time series, elements x samples, uniformly sampled at fs from t0."""

    samples: Union[RealTensor, ComplexTensor]
    fs: float
    t0: float = 0.0

    def __post_init__(self):
        if len(self.samples.shape) != 2:
            raise DimensionError(f"channel data must be elements x samples, got {self.samples.shape}")
        if self.fs <= 0:
            raise DimensionError("sampling rate must be positive")

    @property
    def kind(self) -> DataKind:
        return DataKind.IQ if isinstance(self.samples, ComplexTensor) else DataKind.RF

    @property
    def element_count(self) -> int:
        return self.samples.shape[0]

    @property
    def sample_count(self) -> int:
        return self.samples.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self.sample_count) / self.fs

    def as_array(self) -> np.ndarray:
        if isinstance(self.samples, ComplexTensor):
            return self.samples.to_complex()
        return self.samples.data


@dataclass(frozen=True)
class BeamformGrid:
    """Polar pixel grid: depth samples along rows, angle lines along columns."""

    depth_samples: int
    angle_lines: int
    depth_start: float
    depth_end: float
    sector_deg: float = 90.0

    def __post_init__(self):
        if self.depth_samples < 1 or self.angle_lines < 1:
            raise DimensionError("grid needs at least one depth sample and one angle line")
        if not 0.0 <= self.depth_start < self.depth_end:
            raise DimensionError("grid depth range is empty")

    @property
    def shape(self) -> Tuple[int, int]:
        return self.depth_samples, self.angle_lines

    @property
    def depths(self) -> np.ndarray:
        return np.linspace(self.depth_start, self.depth_end, self.depth_samples)

    @property
    def angles(self) -> np.ndarray:
        half = np.deg2rad(self.sector_deg) / 2.0
        return np.linspace(-half, half, self.angle_lines)

    @property
    def depth_step(self) -> float:
        if self.depth_samples == 1:
            return 0.0
        return (self.depth_end - self.depth_start) / (self.depth_samples - 1)

    @property
    def angle_step(self) -> float:
        if self.angle_lines == 1:
            return 0.0
        return np.deg2rad(self.sector_deg) / (self.angle_lines - 1)

    def mesh(self) -> Tuple[np.ndarray, np.ndarray]:
        """Cartesian (x, z) of every pixel, each depth_samples x angle_lines."""
        r, phi = np.meshgrid(self.depths, self.angles, indexing="ij")
        return r * np.sin(phi), r * np.cos(phi)

    def locate(self, x: float, z: float) -> Tuple[float, float]:
        """Fractional (row, column) of a Cartesian point."""
        r = float(np.hypot(x, z))
        phi = float(np.arctan2(x, z))
        row = (r - self.depth_start) / self.depth_step if self.depth_step else 0.0
        half = np.deg2rad(self.sector_deg) / 2.0
        col = (phi + half) / self.angle_step if self.angle_step else 0.0
        return row, col

    def covers(self, x: float, z: float) -> bool:
        row, col = self.locate(x, z)
        return 0.0 <= row <= self.depth_samples - 1 and 0.0 <= col <= self.angle_lines - 1

    def same_region(self, other: "BeamformGrid") -> bool:
        return (
            np.isclose(self.depth_start, other.depth_start)
            and np.isclose(self.depth_end, other.depth_end)
            and np.isclose(self.sector_deg, other.sector_deg)
        )


@dataclass(frozen=True)
class BeamformedImage:
    """
    Beamformed pixels on a polar grid.

    RF images may carry a quadrature plane: the delay-and-sum of the
    Hilbert-transformed channels, so that rf + j * quadrature is the
    analytic image and its modulus the envelope.
    """

    pixels: Union[RealTensor, ComplexTensor]
    grid: BeamformGrid
    tilt: Optional[float]
    compound_count: int = 1
    quadrature: Optional[np.ndarray] = None

    def __post_init__(self):
        if tuple(self.pixels.shape) != self.grid.shape:
            raise DimensionError(f"pixels {self.pixels.shape} do not match grid {self.grid.shape}")
        if self.quadrature is not None:
            if isinstance(self.pixels, ComplexTensor):
                raise DimensionError("only RF images carry a quadrature plane")
            quadrature = np.asarray(self.quadrature, dtype=np.float64)
            if quadrature.shape != self.grid.shape:
                raise DimensionError(f"quadrature {quadrature.shape} does not match grid {self.grid.shape}")
            object.__setattr__(self, "quadrature", quadrature)

    def without_quadrature(self) -> "BeamformedImage":
        return BeamformedImage(self.pixels, self.grid, self.tilt, self.compound_count)

    @property
    def kind(self) -> DataKind:
        return DataKind.IQ if isinstance(self.pixels, ComplexTensor) else DataKind.RF

    def as_array(self) -> np.ndarray:
        if isinstance(self.pixels, ComplexTensor):
            return self.pixels.to_complex()
        return self.pixels.data


@dataclass(frozen=True)
class RegionMask:
    target: np.ndarray
    background: np.ndarray

    def __post_init__(self):
        target = np.asarray(self.target, dtype=bool)
        background = np.asarray(self.background, dtype=bool)
        if target.shape != background.shape:
            raise MetricError("target and background masks differ in shape")
        if not target.any() or not background.any():
            raise MetricError("region masks must be non-empty")
        if np.any(target & background):
            raise MetricError("target and background masks overlap")
        object.__setattr__(self, "target", target)
        object.__setattr__(self, "background", background)
