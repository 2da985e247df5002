"""
Seeded generation of the corrupted data g and the matching forward operator.
"""

import logging
from typing import Optional, Tuple

import numpy as np

from diffops import gradient_array
from exceptions import MissingInput, ShapeMismatch
from grid import GridFunction
from models import Application, CorruptionSettings
from problem import ForwardOperator
from wavelet import haar_forward_array, haar_inverse_array, mask_coeffs_array

logger = logging.getLogger(__name__)


def random_mask(shape, prob: float, rng: np.random.Generator) -> np.ndarray:
    """Each entry selected independently with probability prob"""
    return rng.random(shape) < prob


def corrupt(application: Application, ground_truth: GridFunction,
            settings: Optional[CorruptionSettings] = None,
            second_frame: Optional[GridFunction] = None) -> Tuple[GridFunction, ForwardOperator]:
    settings = settings or CorruptionSettings()
    rng = np.random.default_rng(settings.seed)
    g0 = ground_truth.scalar()
    shape = ground_truth.domain.shape

    if application == Application.DENOISE:
        noisy = g0 + rng.normal(0.0, np.sqrt(settings.noise_var), shape)
        return ground_truth.with_values(noisy[..., None]), ForwardOperator.identity(shape)

    if application == Application.INPAINT:
        A = random_mask(shape, settings.mask_prob, rng)
        logger.info("inpainting: %d of %d pixels masked", int(A.sum()), A.size)
        return ground_truth.with_values(np.where(A, 0.0, g0)[..., None]), ForwardOperator.masked(A)

    if application == Application.WAVELETINPAINT:
        J = random_mask(shape, settings.mask_prob, rng)
        logger.info("wavelet inpainting: %d of %d coefficients dropped", int(J.sum()), J.size)
        coeffs = mask_coeffs_array(haar_forward_array(g0), J)
        return ground_truth.with_values(coeffs[..., None]), ForwardOperator.composed_wavelet(J)

    # optical flow: linearized brightness constancy g0 - g1 = grad g1 . u
    if second_frame is None:
        raise MissingInput("optical flow needs a second frame (--input2)")
    if second_frame.domain.shape != shape:
        raise ShapeMismatch(f"frames differ in size: {shape} vs {second_frame.domain.shape}")
    weights = gradient_array(second_frame.values)[..., 0]
    g = g0 - second_frame.scalar()
    return ground_truth.with_values(g[..., None]), ForwardOperator.pointwise_flow(weights)


def corrupted_preview(application: Application, g: GridFunction, operator: ForwardOperator) -> GridFunction:
    """Displayable view of the data: (T^inf)^-1 g for wavelets, shifted g for flow"""
    if application == Application.WAVELETINPAINT:
        return g.with_values(haar_inverse_array(g.scalar(), operator.levels)[..., None])
    if application == Application.OPTFLOW:
        return g.with_values(0.5 + 0.5 * g.values)
    return g
