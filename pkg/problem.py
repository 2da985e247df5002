"""
Forward operators, B = T*T + beta I, the dual energy and primal recovery.

    D(p) = 1/2 <div p - T*g, B^-1 (div p - T*g)>
    u    = B^-1 (T*g - div p)

Operator kinds:
    identity          T u = u
    mask              T u = 1_{Omega \\ A} u                 (self-adjoint)
    pointwise_flow    T u = sum_k a_k u_k, T* w = w a       (a = grad g1)
    composed_wavelet  T u = R_J T^inf u, T* w = (T^inf)^-1 R_J w

The first three are pointwise, so B^-1 is pointwise too and can be applied
on any sub-box. The wavelet kind couples all pixels; apply_Binv refuses it
and apply_Binv_exact inverts it through the orthogonal Haar basis.
"""

import logging
from typing import Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from diffops import divergence_array
from exceptions import GlobalOperatorRequiresSurrogate, NotCoercive, ShapeMismatch
from grid import DualField, GridDomain, GridFunction, frobenius_array
from models import OperatorKind
from wavelet import haar_forward_array, haar_inverse_array, mask_coeffs_array

logger = logging.getLogger(__name__)


def _frozen_optional(v):
    if v is None:
        return None
    arr = np.array(v, copy=True)
    arr.flags.writeable = False
    return arr


class ForwardOperator(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    kind: OperatorKind
    shape: Tuple[int, ...]
    channels: int = 1
    mask: Optional[np.ndarray] = None  # A for mask, J for composed_wavelet
    weights: Optional[np.ndarray] = None  # (*shape, channels) flow weights
    levels: Optional[int] = None  # wavelet depth, None = T^inf

    @field_validator("mask", mode="before")
    @classmethod
    def freeze_mask(cls, v):
        return None if v is None else _frozen_optional(np.asarray(v, dtype=bool))

    @field_validator("weights", mode="before")
    @classmethod
    def freeze_weights(cls, v):
        return None if v is None else _frozen_optional(np.asarray(v, dtype=np.float64))

    @model_validator(mode="after")
    def check_kind(self):
        if self.channels < 1:
            raise ValueError("channels must be at least 1")
        if self.kind in (OperatorKind.MASK, OperatorKind.WAVELET):
            if self.mask is None or self.mask.shape != self.shape:
                raise ValueError(f"{self.kind.value} operator needs a boolean mask of shape {self.shape}")
        if self.kind == OperatorKind.WAVELET and self.channels != 1:
            raise ValueError("composed_wavelet operates on single-channel fields")
        if self.kind == OperatorKind.FLOW:
            if self.weights is None or self.weights.shape != self.shape + (self.channels,):
                raise ValueError(f"pointwise_flow needs weights of shape {self.shape + (self.channels,)}")
            if not np.all(np.isfinite(self.weights)):
                raise ValueError("flow weights must be finite")
        return self

    # Factories
    @classmethod
    def identity(cls, shape, m: int = 1) -> "ForwardOperator":
        return cls(kind=OperatorKind.IDENTITY, shape=tuple(shape), channels=m)

    @classmethod
    def masked(cls, A, m: int = 1) -> "ForwardOperator":
        A = np.asarray(A, dtype=bool)
        return cls(kind=OperatorKind.MASK, shape=A.shape, channels=m, mask=A)

    @classmethod
    def pointwise_flow(cls, weights) -> "ForwardOperator":
        """T u = weights . u per pixel; weights has shape (*shape, m)"""
        weights = np.asarray(weights, dtype=np.float64)
        return cls(kind=OperatorKind.FLOW, shape=weights.shape[:-1], channels=weights.shape[-1], weights=weights)

    @classmethod
    def composed_wavelet(cls, J, levels: Optional[int] = None) -> "ForwardOperator":
        J = np.asarray(J, dtype=bool)
        return cls(kind=OperatorKind.WAVELET, shape=J.shape, channels=1, mask=J, levels=levels)

    @property
    def channels_out(self) -> int:
        return 1 if self.kind == OperatorKind.FLOW else self.channels

    @property
    def is_local(self) -> bool:
        return self.kind != OperatorKind.WAVELET

    def restrict(self, window: Tuple[slice, ...]) -> "ForwardOperator":
        """The same pointwise operator on a sub-box of the domain"""
        if not self.is_local:
            raise GlobalOperatorRequiresSurrogate("composed_wavelet cannot be restricted to a subdomain")
        shape = tuple(len(range(*sl.indices(n))) for sl, n in zip(window, self.shape))
        return self.model_copy(update={
            "shape": shape,
            "mask": None if self.mask is None else _frozen_optional(self.mask[window]),
            "weights": None if self.weights is None else _frozen_optional(self.weights[window]),
        })

    # Array kernels
    def apply(self, u: np.ndarray) -> np.ndarray:
        if self.kind == OperatorKind.IDENTITY:
            return u.copy()
        if self.kind == OperatorKind.MASK:
            return mask_coeffs_array(u, self.mask)
        if self.kind == OperatorKind.FLOW:
            return np.sum(self.weights * u, axis=-1, keepdims=True)
        return mask_coeffs_array(haar_forward_array(u[..., 0], self.levels), self.mask)[..., None]

    def apply_adjoint(self, w: np.ndarray) -> np.ndarray:
        if self.kind == OperatorKind.IDENTITY:
            return w.copy()
        if self.kind == OperatorKind.MASK:
            return mask_coeffs_array(w, self.mask)
        if self.kind == OperatorKind.FLOW:
            return w * self.weights
        return haar_inverse_array(mask_coeffs_array(w[..., 0], self.mask), self.levels)[..., None]

    def gram_plus(self, beta: float, u: np.ndarray) -> np.ndarray:
        """(T*T + beta I) u"""
        return self.apply_adjoint(self.apply(u)) + beta * u

    def inverse_gram_plus(self, beta: float, w: np.ndarray) -> np.ndarray:
        """(T*T + beta I)^-1 w for the pointwise kinds"""
        if not self.is_local:
            raise GlobalOperatorRequiresSurrogate(
                "B^-1 of composed_wavelet is global; use the surrogate iteration")
        if beta == 0 and self.kind != OperatorKind.IDENTITY:
            raise NotCoercive(f"beta = 0 leaves B singular for the {self.kind.value} operator")
        if self.kind == OperatorKind.IDENTITY:
            return w / (1.0 + beta)
        if self.kind == OperatorKind.MASK:
            A = self.mask[..., None]
            return np.where(A, w / beta, w / (1.0 + beta))
        # Sherman-Morrison on a a^T + beta I
        a = self.weights
        aw = np.sum(a * w, axis=-1, keepdims=True)
        aa = np.sum(a * a, axis=-1, keepdims=True)
        return (w - a * aw / (beta + aa)) / beta


class ProblemSpec(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    operator: ForwardOperator
    g: GridFunction
    lam: GridFunction
    beta: float = 0.0

    @model_validator(mode="after")
    def check_fields(self):
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if self.g.domain.shape != self.operator.shape or self.g.channels != self.operator.channels_out:
            raise ValueError(f"data of shape {self.g.values.shape} does not fit the {self.operator.kind.value} operator")
        if self.lam.domain != self.g.domain or self.lam.channels != 1:
            raise ValueError("lambda must be a single-channel field on the data domain")
        if np.any(self.lam.values < 0):
            raise ValueError("lambda must be non-negative")
        return self

    @classmethod
    def build(cls, operator: ForwardOperator, g, lam, beta: float = 0.0) -> "ProblemSpec":
        """Assemble a problem; g may be an array, lam a scalar or an array"""
        if beta == 0 and operator.kind != OperatorKind.IDENTITY:
            raise NotCoercive(f"beta must be positive for the {operator.kind.value} operator")
        if not isinstance(g, GridFunction):
            g = GridFunction.from_array(g, GridDomain.from_shape(operator.shape))
        if not isinstance(lam, GridFunction):
            lam = np.broadcast_to(np.asarray(lam, dtype=np.float64), g.domain.shape)
            lam = GridFunction.from_array(lam, g.domain)
        return cls(operator=operator, g=g, lam=lam, beta=float(beta))

    @property
    def domain(self) -> GridDomain:
        return self.g.domain

    @property
    def channels(self) -> int:
        """Channels m of the primal variable and of p"""
        return self.operator.channels

    def zero_dual(self) -> DualField:
        return DualField.zeros(self.domain, self.channels)


def _check_primal(spec: ProblemSpec, u: GridFunction):
    if u.domain.shape != spec.operator.shape or u.channels != spec.channels:
        raise ShapeMismatch(f"expected a field of shape {spec.operator.shape} with {spec.channels} channels")


def apply_T(spec: ProblemSpec, u: GridFunction) -> GridFunction:
    _check_primal(spec, u)
    return GridFunction(domain=u.domain, values=spec.operator.apply(u.values))


def apply_Tstar(spec: ProblemSpec, w: GridFunction) -> GridFunction:
    if w.domain.shape != spec.operator.shape or w.channels != spec.operator.channels_out:
        raise ShapeMismatch(f"expected a field with {spec.operator.channels_out} channels on {spec.operator.shape}")
    return GridFunction(domain=w.domain, values=spec.operator.apply_adjoint(w.values))


def apply_B(spec: ProblemSpec, u: GridFunction) -> GridFunction:
    _check_primal(spec, u)
    return u.with_values(spec.operator.gram_plus(spec.beta, u.values))


def apply_Binv(spec: ProblemSpec, w: GridFunction) -> GridFunction:
    """B^-1 w for pointwise operators"""
    _check_primal(spec, w)
    return w.with_values(spec.operator.inverse_gram_plus(spec.beta, w.values))


def binv_exact_array(spec: ProblemSpec, w: np.ndarray) -> np.ndarray:
    op = spec.operator
    if op.is_local:
        return op.inverse_gram_plus(spec.beta, w)
    if spec.beta == 0:
        raise NotCoercive("beta = 0 leaves B singular for the composed_wavelet operator")
    # B = W^T (R_J + beta I) W with W orthogonal
    coeffs = haar_forward_array(w[..., 0], op.levels)
    coeffs = np.where(op.mask, coeffs / spec.beta, coeffs / (1.0 + spec.beta))
    return haar_inverse_array(coeffs, op.levels)[..., None]


def apply_Binv_exact(spec: ProblemSpec, w: GridFunction) -> GridFunction:
    """B^-1 w for every operator kind, including the global wavelet one"""
    _check_primal(spec, w)
    return w.with_values(binv_exact_array(spec, w.values))


def binv_norm(spec: ProblemSpec) -> float:
    op = spec.operator
    beta = spec.beta
    if op.kind == OperatorKind.IDENTITY:
        return 1.0 / (1.0 + beta)
    if beta == 0:
        raise NotCoercive(f"beta = 0 leaves B singular for the {op.kind.value} operator")
    if op.kind in (OperatorKind.MASK, OperatorKind.WAVELET) and not np.any(op.mask):
        return 1.0 / (1.0 + beta)
    return 1.0 / beta


def b_norm(spec: ProblemSpec) -> float:
    """Largest eigenvalue of B"""
    op = spec.operator
    beta = spec.beta
    if op.kind == OperatorKind.FLOW:
        return float(np.max(np.sum(op.weights ** 2, axis=-1))) + beta
    if op.kind in (OperatorKind.MASK, OperatorKind.WAVELET) and np.all(op.mask):
        return beta
    return 1.0 + beta


def coercivity_constant(spec: ProblemSpec) -> float:
    """c_B with <Bu, u> >= c_B ||u||^2"""
    return 1.0 + spec.beta if spec.operator.kind == OperatorKind.IDENTITY else spec.beta


def tstar_g_array(spec: ProblemSpec) -> np.ndarray:
    return spec.operator.apply_adjoint(spec.g.values)


def tstar_g(spec: ProblemSpec) -> GridFunction:
    return apply_Tstar(spec, spec.g)


def _check_dual(spec: ProblemSpec, p: DualField):
    if p.domain.shape != spec.operator.shape or p.channels != spec.channels:
        raise ShapeMismatch(f"dual field of shape {p.values.shape} does not match the problem")


def energy_array(spec: ProblemSpec, p: np.ndarray, tsg: Optional[np.ndarray] = None) -> float:
    if tsg is None:
        tsg = tstar_g_array(spec)
    r = divergence_array(p) - tsg
    return 0.5 * float(np.sum(r * binv_exact_array(spec, r)))


def dual_energy(spec: ProblemSpec, p: DualField) -> float:
    """D(p) = 1/2 ||div p - T*g||^2 in the B^-1 inner product"""
    _check_dual(spec, p)
    return energy_array(spec, p.values)


def primal_recover(spec: ProblemSpec, p: DualField) -> GridFunction:
    """u = B^-1 (T*g - div p)"""
    _check_dual(spec, p)
    rhs = tstar_g_array(spec) - divergence_array(p.values)
    return GridFunction(domain=p.domain, values=binv_exact_array(spec, rhs))


def project_K_array(p: np.ndarray, bound: np.ndarray) -> np.ndarray:
    norms = frobenius_array(p)
    scale = np.ones_like(norms)
    over = norms > bound
    scale[over] = bound[over] / norms[over]
    return p * scale[..., None, None]


def project_K(p: DualField, lam) -> DualField:
    """Radial projection onto {|p(x)|_F <= lam(x)}"""
    bound = lam.scalar() if isinstance(lam, GridFunction) else np.broadcast_to(
        np.asarray(lam, dtype=np.float64), p.domain.shape)
    if np.any(bound < 0):
        raise ValueError("lambda must be non-negative")
    return p.with_values(project_K_array(p.values, bound))
