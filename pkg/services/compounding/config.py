from pathlib import Path
from typing import List, Optional, Tuple

from pydantic import BaseModel, Field, PositiveInt, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from errors import ConfigurationError
from models.imaging import BeamformGrid, DataKind
from schema.network import Variant


def _default_tilts() -> List[float]:
    # 31 diverging waves, -30..30 deg in 2 deg steps
    return [float(a) for a in range(-30, 31, 2)]


class AcquisitionConfig(BaseModel):
    element_count: PositiveInt = 64
    pitch: float = 0.3e-3
    f0: float = 3.0e6
    fs_rf: float = 12.0e6
    fs_iq: float = 4.0e6
    c: float = 1540.0
    tilt_angles: List[float] = Field(default_factory=_default_tilts)
    input_angles: List[float] = Field(default_factory=lambda: [-20.0, 0.0, 20.0])
    fractional_bandwidth: float = 0.6
    lpf_order: PositiveInt = 10
    lpf_cutoff_ratio: float = 0.8  # cutoff = ratio * fs_iq / 2
    sector_deg: float = 90.0  # opening used to place the virtual source
    receive_spreading: bool = True
    max_depth: float = 0.075
    sim_oversampling: PositiveInt = 8
    das_upsample: PositiveInt = 4  # channel upsampling before delay interpolation

    @model_validator(mode="after")
    def _check_rates(self) -> "AcquisitionConfig":
        ratio = self.fs_rf / self.fs_iq
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ValueError("fs_rf / fs_iq must be a positive integer")
        if self.fs_rf <= 2.0 * (self.f0 + self.bandwidth / 2.0):
            raise ValueError("fs_rf must exceed 2 * (f0 + bandwidth / 2)")
        if any(abs(a) >= 90.0 for a in self.tilt_angles):
            raise ValueError("tilt angles must lie within +-90 deg")
        missing = [a for a in self.input_angles if a not in self.tilt_angles]
        if missing:
            raise ValueError(f"input angles {missing} are not transmitted tilts")
        if not 0.0 < self.lpf_cutoff_ratio < 1.0:
            raise ValueError("lpf_cutoff_ratio must be in (0, 1)")
        return self

    @property
    def bandwidth(self) -> float:
        return self.fractional_bandwidth * self.f0

    @property
    def decimation(self) -> int:
        return int(round(self.fs_rf / self.fs_iq))

    @property
    def aperture(self) -> float:
        return self.element_count * self.pitch

    @property
    def wavelength(self) -> float:
        return self.c / self.f0

    @property
    def lpf_cutoff(self) -> float:
        return self.lpf_cutoff_ratio * self.fs_iq / 2.0


class GridConfig(BaseModel):
    depth_start: float = 0.010
    depth_end: float = 0.070
    iq_depth_samples: PositiveInt = 85
    angle_lines: PositiveInt = 96
    sector_deg: float = 90.0

    @model_validator(mode="after")
    def _check_range(self) -> "GridConfig":
        if not 0.0 < self.depth_start < self.depth_end:
            raise ValueError("depth range must satisfy 0 < depth_start < depth_end")
        if not 0.0 < self.sector_deg < 180.0:
            raise ValueError("sector_deg must be in (0, 180)")
        return self

    @property
    def rf_depth_samples(self) -> int:
        return 3 * self.iq_depth_samples - 1

    def rf_grid(self):
        return BeamformGrid(
            depth_samples=self.rf_depth_samples,
            angle_lines=self.angle_lines,
            depth_start=self.depth_start,
            depth_end=self.depth_end,
            sector_deg=self.sector_deg,
        )

    def iq_grid(self):
        return BeamformGrid(
            depth_samples=self.iq_depth_samples,
            angle_lines=self.angle_lines,
            depth_start=self.depth_start,
            depth_end=self.depth_end,
            sector_deg=self.sector_deg,
        )


class DatasetConfig(BaseModel):
    scene_count: PositiveInt = 300
    split_train: float = 4.0 / 6.0
    split_val: float = 1.0 / 6.0
    split_test: float = 1.0 / 6.0
    seed: int = 0
    scatterers_per_cell: float = 10.0
    disks_min: int = 1
    disks_max: int = 3
    disk_radius_min: float = 2.0e-3
    disk_radius_max: float = 5.0e-3
    wires_min: int = 1
    wires_max: int = 2
    wire_amplitude: float = 30.0
    save_channels: bool = False
    workers: PositiveInt = 1

    @model_validator(mode="after")
    def _check_split(self) -> "DatasetConfig":
        fractions = (self.split_train, self.split_val, self.split_test)
        if any(f < 0 for f in fractions):
            raise ValueError("split fractions must be non-negative")
        if abs(sum(fractions) - 1.0) > 1e-4:
            raise ValueError("split fractions must sum to 1")
        if not 0 <= self.disks_min <= self.disks_max:
            raise ValueError("disk count range is invalid")
        if not 0 <= self.wires_min <= self.wires_max:
            raise ValueError("wire count range is invalid")
        if not 0 < self.disk_radius_min <= self.disk_radius_max:
            raise ValueError("disk radius range is invalid")
        return self

    def split_counts(self) -> Tuple[int, int, int]:
        n_val = int(round(self.scene_count * self.split_val))
        n_test = int(round(self.scene_count * self.split_test))
        n_train = self.scene_count - n_val - n_test
        if n_train < 0:
            raise ValueError("split leaves no room for the training set")
        return n_train, n_val, n_test


class TrainerConfig(BaseModel):
    batch_size: PositiveInt = 16
    lr0: float = 1e-4
    plateau_patience: int = 10
    stop_patience: int = 20
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_epochs: Optional[PositiveInt] = None
    workers: PositiveInt = 1

    @model_validator(mode="after")
    def _check_schedule(self) -> "TrainerConfig":
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")
        if self.plateau_patience < 1:
            raise ValueError("plateau_patience must be >= 1")
        if self.stop_patience < self.plateau_patience:
            raise ValueError("stop_patience must be >= plateau_patience")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("Adam betas must be in [0, 1)")
        return self


class ModelConfig(BaseModel):
    variant: Variant = Variant.CID
    data_kind: Optional[DataKind] = None
    init_seed: int = 0

    @field_validator("variant", mode="before")
    @classmethod
    def _upper_variant(cls, value):
        return value.upper() if isinstance(value, str) else value

    def resolved_kind(self) -> DataKind:
        expected = DataKind.RF if self.variant == Variant.ID else DataKind.IQ
        if self.data_kind is not None and self.data_kind != expected:
            raise ConfigurationError(
                f"{self.variant.value} consumes {expected.value} data, "
                f"not {self.data_kind.value}"
            )
        return expected


class PathsConfig(BaseModel):
    dataset_dir: Path = Path("data/dataset")
    model_dir: Path = Path("data/models")
    prediction_dir: Path = Path("data/predictions")
    report_dir: Path = Path("data/reports")


class Settings(BaseSettings):
    acquisition: AcquisitionConfig = Field(default_factory=AcquisitionConfig)
    grid: GridConfig = Field(default_factory=GridConfig)
    dataset: DatasetConfig = Field(default_factory=DatasetConfig)
    trainer: TrainerConfig = Field(default_factory=TrainerConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    paths: PathsConfig = Field(default_factory=PathsConfig)

    dynamic_range_db: float = 60.0
    mi_bins: PositiveInt = 256
    gcnr_bins: PositiveInt = 256
    log_level: str = "INFO"

    model_config = SettingsConfigDict(
        env_prefix="CIDNET_",
        env_nested_delimiter="__",
        extra="ignore",
    )


def load_settings(config_path: Optional[Path] = None) -> Settings:
    """Read a key=value pipeline file; environment variables still win."""
    if config_path is None:
        return Settings()
    if not Path(config_path).exists():
        raise ConfigurationError(f"config file not found: {config_path}")
    return Settings(_env_file=str(config_path), _env_file_encoding="utf-8")
