"""
Finite-difference gradient and divergence on unit-spaced lattices.

Forward differences vanish on the upper face of each axis; backward
differences take v(x) on the lower face and -v(x - e^k) on the upper face, so
that div is the negative adjoint of grad. Array kernels act on arrays whose
leading axes are spatial; any trailing axes are carried along.
"""

import logging

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from exceptions import ShapeMismatch
from grid import DualField, GridDomain, GridFunction
from models import StencilDirection

logger = logging.getLogger(__name__)


class StencilSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    axis: int
    direction: StencilDirection
    dims: int

    @model_validator(mode="after")
    def check_axis(self):
        if not 0 <= self.axis < self.dims:
            raise ValueError(f"axis {self.axis} out of range for dimension {self.dims}")
        return self


def _slab(ndim: int, axis: int, sl) -> tuple:
    index = [slice(None)] * ndim
    index[axis] = sl
    return tuple(index)


def forward_diff_array(u: np.ndarray, axis: int) -> np.ndarray:
    out = np.zeros_like(u)
    if u.shape[axis] > 1:
        out[_slab(u.ndim, axis, slice(None, -1))] = np.diff(u, axis=axis)
    return out


def backward_diff_array(v: np.ndarray, axis: int) -> np.ndarray:
    out = np.zeros_like(v)
    n = v.shape[axis]
    if n == 1:
        # lower and upper face coincide; zero keeps div = -grad^*
        return out
    nd = v.ndim
    out[_slab(nd, axis, 0)] = v[_slab(nd, axis, 0)]
    out[_slab(nd, axis, slice(1, -1))] = np.diff(v[_slab(nd, axis, slice(None, -1))], axis=axis)
    out[_slab(nd, axis, -1)] = -v[_slab(nd, axis, -2)]
    return out


def gradient_array(u: np.ndarray) -> np.ndarray:
    """(*shape, m) -> (*shape, d, m)"""
    d = u.ndim - 1
    return np.stack([forward_diff_array(u, k) for k in range(d)], axis=-2)


def divergence_array(p: np.ndarray) -> np.ndarray:
    """(*shape, d, m) -> (*shape, m)"""
    d = p.ndim - 2
    out = backward_diff_array(p[..., 0, :], 0)
    for k in range(1, d):
        out += backward_diff_array(p[..., k, :], k)
    return out


def apply_stencil(stencil: StencilSpec, u: GridFunction) -> GridFunction:
    if stencil.dims != u.domain.dims:
        raise ShapeMismatch(f"stencil is {stencil.dims}-D but the field is {u.domain.dims}-D")
    kernel = forward_diff_array if stencil.direction == StencilDirection.FORWARD else backward_diff_array
    return u.with_values(kernel(u.values, stencil.axis))


def forward_diff(u: GridFunction, k: int) -> GridFunction:
    """Forward difference along axis k (0-based)"""
    return apply_stencil(StencilSpec(axis=k, direction=StencilDirection.FORWARD, dims=u.domain.dims), u)


def backward_diff(v: GridFunction, k: int) -> GridFunction:
    """Backward difference along axis k (0-based)"""
    return apply_stencil(StencilSpec(axis=k, direction=StencilDirection.BACKWARD, dims=v.domain.dims), v)


def gradient(u: GridFunction) -> DualField:
    return DualField(domain=u.domain, values=gradient_array(u.values))


def divergence(p: DualField) -> GridFunction:
    return GridFunction(domain=p.domain, values=divergence_array(p.values))


def grad_norm_sq_estimate(domain: GridDomain, m: int = 1, max_iter: int = 20000,
                          tol: float = 1e-13, min_iter: int = 200, seed: int = 0) -> float:
    """
    Estimate ||grad||^2 by power iteration on grad^* grad = -div grad.

    The Rayleigh quotient approaches the largest eigenvalue from below; the
    loop runs at least min_iter times and stops once the relative change of
    the estimate falls under tol.
    """
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(domain.shape + (m,))
    x /= np.linalg.norm(x)
    estimate = 0.0
    for it in range(max_iter):
        y = -divergence_array(gradient_array(x))
        new_estimate = float(np.sum(x * y))
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return 0.0
        x = y / ny
        if it >= min_iter and abs(new_estimate - estimate) <= tol * abs(new_estimate):
            estimate = new_estimate
            break
        estimate = new_estimate
    logger.debug("power iteration on %s: ||grad||^2 ~ %.12g after %d steps", domain.shape, estimate, it + 1)
    return estimate


def grad_norm_sq_bound(dims: int) -> float:
    """Analytic bound 4d on ||grad||^2 (8 in two dimensions)"""
    return 4.0 * dims
