"""
Multi-level d-dimensional Haar transform and coefficient masking.

One level splits the even part of the block (the first 2k samples per axis,
k = s // 2) into 2^d orthant blocks of size k:

    (T u)(alpha * k + x) = 2^(-d/2) sum_beta (-1)^(alpha . beta) u(2x + beta)

Samples at index >= 2k along any axis are copied. The next level recurses on
the alpha = 0 block. Every level is a symmetric orthogonal map of the block,
so the inverse applies the same level matrices in reverse order.
"""

import itertools
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

from exceptions import ShapeMismatch
from grid import GridFunction


class WaveletPlan(BaseModel):
    model_config = ConfigDict(frozen=True)

    shape: Tuple[int, ...]
    levels: Optional[int] = None  # None means T^inf

    @field_validator("levels")
    @classmethod
    def non_negative(cls, v):
        if v is not None and v < 0:
            raise ValueError("levels must be non-negative")
        return v

    @classmethod
    def for_shape(cls, shape, levels: Optional[int] = None) -> "WaveletPlan":
        return cls(shape=tuple(int(s) for s in shape), levels=levels)

    @property
    def splits(self) -> List[Tuple[Tuple[int, ...], Tuple[int, ...]]]:
        """(block size, split point k) per level, outermost first"""
        out = []
        size = self.shape
        while self.levels is None or len(out) < self.levels:
            k = tuple(s // 2 for s in size)
            if any(kk == 0 for kk in k):
                break
            out.append((size, k))
            size = k
        return out

    @property
    def depth(self) -> int:
        return len(self.splits)


def _orthants(d: int):
    return list(itertools.product((0, 1), repeat=d))


def _sign(alpha, beta) -> float:
    return -1.0 if sum(a * b for a, b in zip(alpha, beta)) % 2 else 1.0


def _forward_level(block: np.ndarray, k: Tuple[int, ...]) -> np.ndarray:
    d = len(k)
    scale = 2.0 ** (-d / 2)
    even = block[tuple(slice(0, 2 * kk) for kk in k)]
    parts = {beta: even[tuple(slice(b, None, 2) for b in beta)] for beta in _orthants(d)}
    out = block.copy()
    for alpha in _orthants(d):
        acc = np.zeros(k)
        for beta in _orthants(d):
            acc += _sign(alpha, beta) * parts[beta]
        out[tuple(slice(a * kk, a * kk + kk) for a, kk in zip(alpha, k))] = scale * acc
    return out


def _inverse_level(block: np.ndarray, k: Tuple[int, ...]) -> np.ndarray:
    d = len(k)
    scale = 2.0 ** (-d / 2)
    coeffs = {alpha: block[tuple(slice(a * kk, a * kk + kk) for a, kk in zip(alpha, k))]
              for alpha in _orthants(d)}
    out = block.copy()
    for beta in _orthants(d):
        acc = np.zeros(k)
        for alpha in _orthants(d):
            acc += _sign(alpha, beta) * coeffs[alpha]
        out[tuple(slice(b, 2 * kk, 2) for b, kk in zip(beta, k))] = scale * acc
    return out


def haar_forward_array(u: np.ndarray, levels: Optional[int] = None) -> np.ndarray:
    """Haar transform of a spatial array (no channel axis)"""
    out = np.array(u, dtype=np.float64, copy=True)
    for size, k in WaveletPlan.for_shape(out.shape, levels).splits:
        region = tuple(slice(0, s) for s in size)
        out[region] = _forward_level(out[region], k)
    return out


def haar_inverse_array(w: np.ndarray, levels: Optional[int] = None) -> np.ndarray:
    out = np.array(w, dtype=np.float64, copy=True)
    for size, k in reversed(WaveletPlan.for_shape(out.shape, levels).splits):
        region = tuple(slice(0, s) for s in size)
        out[region] = _inverse_level(out[region], k)
    return out


def _single_channel(u: GridFunction) -> np.ndarray:
    if u.channels != 1:
        raise ShapeMismatch(f"the Haar transform acts on single-channel fields, got {u.channels} channels")
    return u.values[..., 0]


def haar_forward(u: GridFunction, n: Optional[int] = None) -> GridFunction:
    """T^n u; n=None gives T^inf"""
    return u.with_values(haar_forward_array(_single_channel(u), n)[..., None])


def haar_inverse(w: GridFunction, n: Optional[int] = None) -> GridFunction:
    return w.with_values(haar_inverse_array(_single_channel(w), n)[..., None])


def mask_coeffs_array(w: np.ndarray, J: np.ndarray) -> np.ndarray:
    J = np.asarray(J, dtype=bool)
    if J.shape != w.shape[:J.ndim]:
        raise ShapeMismatch(f"mask shape {J.shape} does not match {w.shape}")
    J = J.reshape(J.shape + (1,) * (w.ndim - J.ndim))
    return np.where(J, 0.0, w)


def mask_coeffs(w: GridFunction, J) -> GridFunction:
    """R_J: zero the entries selected by the boolean field J"""
    return w.with_values(mask_coeffs_array(w.values, J))
