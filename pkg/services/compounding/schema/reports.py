from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field


class EpochRecord(BaseModel):
    epoch: int
    train_loss: float
    val_loss: float
    lr: float


class DiskAnnotation(BaseModel):
    x: float
    z: float
    radius: float


class WireAnnotation(BaseModel):
    x: float
    z: float


class SceneManifest(BaseModel):
    scene_id: str
    split: str
    seed: List[int]
    scatterer_count: int
    ignored_scatterers: int = 0
    tilts: List[float]
    input_tilts: List[float]
    disks: List[DiskAnnotation] = Field(default_factory=list)
    wires: List[WireAnnotation] = Field(default_factory=list)


class MetricsReport(BaseModel):
    """Per-image measurements; region metrics hold one entry per annotation."""

    model_config = ConfigDict(ser_json_inf_nan="strings")

    psnr: Optional[float] = None
    ssim: Optional[float] = None
    mi: Optional[float] = None
    cr: List[float] = Field(default_factory=list)
    cnr: List[float] = Field(default_factory=list)
    gcnr: List[float] = Field(default_factory=list)
    lr_mm: List[float] = Field(default_factory=list)
    disk_fields: List[str] = Field(default_factory=list)
    wire_fields: List[str] = Field(default_factory=list)


class MetricSummary(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="strings")

    mean: float
    std: float
    count: int


class MethodSummary(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="strings")

    method: str
    samples: int
    metrics: Dict[str, MetricSummary] = Field(default_factory=dict)


class EvaluationReport(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="strings")

    split: str
    reference: str
    methods: List[MethodSummary]


class SweepRow(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="strings")

    transmissions: int
    tilts: List[float]
    metrics: Dict[str, MetricSummary] = Field(default_factory=dict)


class SweepReport(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="strings")

    split: str
    reference: str
    rows: List[SweepRow]


class ModelInspection(BaseModel):
    variant: str
    parameters: int
    receptive_field_min: List[int]
    receptive_field_max: List[int]
    input_hw: List[int]
    flops: int
    flop_convention: str
    published_flops: Optional[float] = None
    shape_trace: List[List[int]] = Field(default_factory=list)
    forward_seconds_f64: Optional[float] = None
    forward_seconds_f32: Optional[float] = None
