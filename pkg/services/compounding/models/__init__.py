from models.imaging import (
    BeamformedImage,
    BeamformGrid,
    ChannelData,
    DataKind,
    Disk,
    PhantomScene,
    RegionMask,
    Wire,
)
from models.tensor import ComplexTensor, RealTensor, amplitude, complex_elementwise

__all__ = [
    "BeamformedImage",
    "BeamformGrid",
    "ChannelData",
    "ComplexTensor",
    "DataKind",
    "Disk",
    "PhantomScene",
    "RealTensor",
    "RegionMask",
    "Wire",
    "amplitude",
    "complex_elementwise",
]
