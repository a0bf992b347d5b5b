from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np

from errors import DimensionError

Scalar = Union[int, float, complex]


def _plane(values, dtype) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class RealTensor:
    """Real plane in channels x height x width order (or any rank)."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        dtype = data.dtype if np.issubdtype(data.dtype, np.floating) else np.float64
        object.__setattr__(self, "data", _plane(data, dtype))

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @classmethod
    def zeros(cls, shape) -> "RealTensor":
        return cls(np.zeros(shape))

    def astype(self, dtype) -> "RealTensor":
        return RealTensor(self.data.astype(dtype))

    def _other(self, other) -> np.ndarray:
        if isinstance(other, RealTensor):
            if other.shape != self.shape:
                raise DimensionError(f"shape {other.shape} does not match {self.shape}")
            return other.data
        raise TypeError(f"unsupported operand {type(other).__name__}")

    def add(self, other: "RealTensor") -> "RealTensor":
        return RealTensor(self.data + self._other(other))

    def sub(self, other: "RealTensor") -> "RealTensor":
        return RealTensor(self.data - self._other(other))

    def scale(self, factor: float) -> "RealTensor":
        return RealTensor(self.data * float(factor))

    __add__ = add
    __sub__ = sub

    def __mul__(self, factor: float) -> "RealTensor":
        return self.scale(factor)

    __rmul__ = __mul__

    def __neg__(self) -> "RealTensor":
        return RealTensor(-self.data)


@dataclass(frozen=True, eq=False)
class ComplexTensor:
    """Complex samples stored as two real planes of identical shape."""

    re: np.ndarray
    im: np.ndarray

    def __post_init__(self):
        re = np.asarray(self.re)
        im = np.asarray(self.im)
        if re.shape != im.shape:
            raise DimensionError(f"real plane {re.shape} and imaginary plane {im.shape} differ")
        dtype = np.result_type(re.dtype, im.dtype, np.float32)
        if not np.issubdtype(dtype, np.floating):
            raise DimensionError(f"planes must be real, got {dtype}")
        object.__setattr__(self, "re", _plane(re, dtype))
        object.__setattr__(self, "im", _plane(im, dtype))

    @classmethod
    def from_complex(cls, values) -> "ComplexTensor":
        values = np.asarray(values)
        return cls(values.real.astype(np.float64), values.imag.astype(np.float64))

    @classmethod
    def zeros(cls, shape) -> "ComplexTensor":
        return cls(np.zeros(shape), np.zeros(shape))

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.re.shape

    @property
    def dtype(self):
        return self.re.dtype

    def to_complex(self) -> np.ndarray:
        return self.re + 1j * self.im

    def astype(self, dtype) -> "ComplexTensor":
        return ComplexTensor(self.re.astype(dtype), self.im.astype(dtype))

    def _planes(self, other) -> Tuple[np.ndarray, np.ndarray]:
        if isinstance(other, ComplexTensor):
            if other.shape != self.shape:
                raise DimensionError(f"shape {other.shape} does not match {self.shape}")
            return other.re, other.im
        if isinstance(other, (int, float, complex, np.number)):
            value = complex(other)
            return value.real, value.imag
        raise TypeError(f"unsupported operand {type(other).__name__}")

    def add(self, other: Union["ComplexTensor", Scalar]) -> "ComplexTensor":
        ore, oim = self._planes(other)
        return ComplexTensor(self.re + ore, self.im + oim)

    def sub(self, other: Union["ComplexTensor", Scalar]) -> "ComplexTensor":
        ore, oim = self._planes(other)
        return ComplexTensor(self.re - ore, self.im - oim)

    def scale(self, factor: Union["ComplexTensor", Scalar]) -> "ComplexTensor":
        """Elementwise complex product with a tensor of equal shape or a scalar."""
        fre, fim = self._planes(factor)
        return ComplexTensor(self.re * fre - self.im * fim, self.re * fim + self.im * fre)

    __add__ = add
    __sub__ = sub
    __mul__ = scale

    def __radd__(self, other: Scalar) -> "ComplexTensor":
        return self.add(other)

    def __rmul__(self, other: Scalar) -> "ComplexTensor":
        return self.scale(other)

    def __neg__(self) -> "ComplexTensor":
        return ComplexTensor(-self.re, -self.im)


def amplitude(x: ComplexTensor) -> RealTensor:
    return RealTensor(np.hypot(x.re, x.im))


def complex_elementwise(
    op: str, a: ComplexTensor, b: Union[ComplexTensor, Scalar]
) -> ComplexTensor:
    ops = {"add": a.add, "sub": a.sub, "scale": a.scale}
    if op not in ops:
        raise ValueError(f"unknown elementwise op {op!r}")
    return ops[op](b)
