"""
Discrete domains and field types.

A GridDomain is the integer box [a, b] in Z^d. Fields store their values as
float64 arrays with the spatial axes first, in C order, so that flattening
yields lattice points in lexicographic order with channels varying fastest:

    GridFunction.values  shape (*domain.shape, m)
    DualField.values     shape (*domain.shape, d, m)

Arrays are frozen on construction; solver steps create new fields.
"""

from typing import Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from exceptions import ShapeMismatch

FEASIBILITY_TOL = 1e-12


def _frozen_array(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64, copy=True)
    arr.flags.writeable = False
    return arr


class GridDomain(BaseModel):
    model_config = ConfigDict(frozen=True)

    a: Tuple[int, ...]
    b: Tuple[int, ...]

    @model_validator(mode="after")
    def check_box(self):
        if len(self.a) != len(self.b) or len(self.a) < 1:
            raise ValueError("a and b must have the same length d >= 1")
        if any(lo > hi for lo, hi in zip(self.a, self.b)):
            raise ValueError("a <= b must hold componentwise")
        return self

    @classmethod
    def from_shape(cls, shape) -> "GridDomain":
        """The 1-based pixel lattice {1..n_1} x ... x {1..n_d}"""
        shape = tuple(int(n) for n in shape)
        return cls(a=(1,) * len(shape), b=shape)

    @property
    def dims(self) -> int:
        return len(self.a)

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(hi - lo + 1 for lo, hi in zip(self.a, self.b))

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def coordinates(self) -> np.ndarray:
        """Lattice coordinates, shape (size, d), lexicographic order"""
        axes = [np.arange(lo, hi + 1) for lo, hi in zip(self.a, self.b)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)


class GridFunction(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    domain: GridDomain
    values: np.ndarray

    @field_validator("values", mode="before")
    @classmethod
    def freeze(cls, v):
        return _frozen_array(v)

    @model_validator(mode="after")
    def check_values(self):
        shape = self.domain.shape
        if self.values.ndim != len(shape) + 1 or self.values.shape[:-1] != shape:
            raise ValueError(f"values must have shape {shape} + (m,), got {self.values.shape}")
        if self.values.shape[-1] < 1:
            raise ValueError("at least one channel is required")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("values must be finite")
        return self

    @property
    def channels(self) -> int:
        return self.values.shape[-1]

    @classmethod
    def zeros(cls, domain: GridDomain, m: int = 1) -> "GridFunction":
        return cls(domain=domain, values=np.zeros(domain.shape + (m,)))

    @classmethod
    def from_array(cls, arr, domain: GridDomain = None) -> "GridFunction":
        """Wrap a spatial array; a missing channel axis is added"""
        arr = np.asarray(arr, dtype=np.float64)
        if domain is None:
            domain = GridDomain.from_shape(arr.shape)
        if arr.shape == domain.shape:
            arr = arr[..., None]
        return cls(domain=domain, values=arr)

    def scalar(self) -> np.ndarray:
        """Values of a single-channel field without the channel axis"""
        if self.channels != 1:
            raise ShapeMismatch(f"expected a single-channel field, got {self.channels} channels")
        return self.values[..., 0]

    def with_values(self, values) -> "GridFunction":
        return GridFunction(domain=self.domain, values=values)


class DualField(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    domain: GridDomain
    values: np.ndarray

    @field_validator("values", mode="before")
    @classmethod
    def freeze(cls, v):
        return _frozen_array(v)

    @model_validator(mode="after")
    def check_values(self):
        shape = self.domain.shape
        d = self.domain.dims
        if self.values.ndim != len(shape) + 2 or self.values.shape[:-1] != shape + (d,):
            raise ValueError(f"values must have shape {shape} + ({d}, m), got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("values must be finite")
        return self

    @property
    def channels(self) -> int:
        return self.values.shape[-1]

    @classmethod
    def zeros(cls, domain: GridDomain, m: int = 1) -> "DualField":
        return cls(domain=domain, values=np.zeros(domain.shape + (domain.dims, m)))

    def with_values(self, values) -> "DualField":
        return DualField(domain=self.domain, values=values)

    def is_feasible(self, bound, tol: float = FEASIBILITY_TOL) -> bool:
        """|p(x)|_F <= bound(x) + tol at every lattice point"""
        bound = bound.scalar() if isinstance(bound, GridFunction) else np.asarray(bound)
        return bool(np.all(frobenius_array(self.values) <= bound + tol))


AnyField = Union[GridFunction, DualField]


def frobenius_array(p: np.ndarray) -> np.ndarray:
    """Pointwise Frobenius norm over the trailing (d, m) axes"""
    return np.sqrt(np.sum(p * p, axis=(-2, -1)))


def frobenius_pointwise(p: DualField) -> GridFunction:
    """x -> |p(x)|_F as a single-channel field"""
    return GridFunction(domain=p.domain, values=frobenius_array(p.values)[..., None])


def _check_compatible(x: AnyField, y: AnyField):
    if type(x) is not type(y):
        raise ShapeMismatch(f"cannot combine {type(x).__name__} with {type(y).__name__}")
    if x.domain != y.domain or x.values.shape != y.values.shape:
        raise ShapeMismatch(f"shape mismatch: {x.values.shape} vs {y.values.shape}")


def axpy_fields(alpha: float, x: AnyField, y: AnyField) -> AnyField:
    """alpha * x + y"""
    _check_compatible(x, y)
    return y.with_values(alpha * x.values + y.values)


def inner(x: AnyField, y: AnyField) -> float:
    """L2 inner product (pairwise summation, fixed order)"""
    _check_compatible(x, y)
    return float(np.sum(x.values * y.values))


def norm(x: AnyField) -> float:
    return float(np.sqrt(np.sum(x.values * x.values)))
