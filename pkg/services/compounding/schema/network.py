"""
Declarative network description.

A NetworkSpec is the single source of truth for building a network,
counting its parameters, FLOPs and receptive field, and fingerprinting
weight archives.
"""

import hashlib
from enum import Enum
from typing import List, Literal, Tuple

import orjson
from pydantic import BaseModel, ConfigDict, Field, PositiveInt, model_validator


class Variant(str, Enum):
    CID = "CID"
    ID = "ID"
    TWO_BRANCH = "2BID"


class ActivationSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["MU", "AMU"]
    pieces: PositiveInt = 4


class LayerDecl(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["conv", "inception", "final1x1"]
    kernel_count: PositiveInt  # per path for inception layers
    kernel_hw: Tuple[Tuple[PositiveInt, PositiveInt], ...]
    activation: ActivationSpec

    @model_validator(mode="after")
    def _check_shape(self) -> "LayerDecl":
        if self.kernel_count % self.activation.pieces:
            raise ValueError(
                f"{self.activation.pieces}-piece {self.activation.kind} does not "
                f"divide {self.kernel_count} kernels"
            )
        if not self.kernel_hw:
            raise ValueError("a layer needs at least one kernel size")
        if self.kind != "inception" and len(self.kernel_hw) != 1:
            raise ValueError(f"{self.kind} layers take exactly one kernel size")
        if self.kind == "final1x1" and self.kernel_hw[0] != (1, 1):
            raise ValueError("final1x1 layers use 1x1 kernels")
        for kh, kw in self.kernel_hw:
            if kh % 2 == 0 or kw % 2 == 0:
                raise ValueError(f"kernel {kh}x{kw} has no centred same-padding")
        return self

    @property
    def paths(self) -> int:
        return len(self.kernel_hw)

    @property
    def out_channels(self) -> int:
        return self.paths * self.kernel_count // self.activation.pieces


class NetworkSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    variant: Variant
    in_channels: PositiveInt = 3
    branches: Literal[1, 2] = 1
    layers: Tuple[LayerDecl, ...] = Field(min_length=1)

    @model_validator(mode="after")
    def _check_activations(self) -> "NetworkSpec":
        expected = "AMU" if self.variant == Variant.CID else "MU"
        for layer in self.layers:
            if layer.activation.kind != expected:
                raise ValueError(
                    f"{self.variant.value} layers use {expected}, "
                    f"got {layer.activation.kind}"
                )
        if self.branches == 2 and self.variant != Variant.TWO_BRANCH:
            raise ValueError("only 2BID networks carry two branches")
        return self

    @property
    def is_complex(self) -> bool:
        return self.variant == Variant.CID

    @property
    def out_channels(self) -> int:
        return self.layers[-1].out_channels

    def channel_trace(self) -> List[int]:
        """Input channel count followed by each layer's output channel count."""
        return [self.in_channels] + [layer.out_channels for layer in self.layers]

    def branch_spec(self) -> "NetworkSpec":
        return self.model_copy(update={"branches": 1})

    def fingerprint(self) -> bytes:
        payload = orjson.dumps(self.model_dump(mode="json"), option=orjson.OPT_SORT_KEYS)
        return hashlib.sha256(payload).digest()


def _table(
    kind: str,
    sizes: List[Tuple[int, int]],
    inception: List[Tuple[int, int]],
) -> List[LayerDecl]:
    act = ActivationSpec(kind=kind, pieces=4)
    layers = [
        LayerDecl(kind="conv", kernel_count=count, kernel_hw=(hw,), activation=act)
        for count, hw in zip((256, 128, 64), sizes)
    ]
    layers.append(
        LayerDecl(kind="inception", kernel_count=8, kernel_hw=tuple(inception), activation=act)
    )
    layers.append(LayerDecl(kind="final1x1", kernel_count=4, kernel_hw=((1, 1),), activation=act))
    return layers


CID_SIZES = [(3, 3), (5, 5), (11, 9)]
CID_INCEPTION = [(15, 11), (17, 13), (19, 15), (21, 17)]
ID_SIZES = [(9, 3), (17, 5), (33, 9)]
ID_INCEPTION = [(41, 11), (49, 13), (57, 15), (65, 17)]


def default_spec(variant: Variant) -> NetworkSpec:
    """The published layer table for each variant."""
    variant = Variant(variant)
    if variant == Variant.CID:
        return NetworkSpec(
            variant=variant, layers=_table("AMU", CID_SIZES, CID_INCEPTION)
        )
    if variant == Variant.ID:
        return NetworkSpec(
            variant=variant, layers=_table("MU", ID_SIZES, ID_INCEPTION)
        )
    # 2BID: two real branches shaped like CID-Net
    return NetworkSpec(
        variant=variant,
        branches=2,
        layers=_table("MU", CID_SIZES, CID_INCEPTION),
    )
