from schema.network import ActivationSpec, LayerDecl, NetworkSpec, Variant, default_spec
from schema.reports import (
    EpochRecord,
    EvaluationReport,
    MethodSummary,
    MetricsReport,
    MetricSummary,
    ModelInspection,
    SceneManifest,
    SweepReport,
    SweepRow,
)

__all__ = [
    "ActivationSpec",
    "EpochRecord",
    "EvaluationReport",
    "LayerDecl",
    "MethodSummary",
    "MetricsReport",
    "MetricSummary",
    "ModelInspection",
    "NetworkSpec",
    "SceneManifest",
    "SweepReport",
    "SweepRow",
    "Variant",
    "default_spec",
]
