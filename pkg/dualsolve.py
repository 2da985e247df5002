"""
Semi-implicit dual multiplier method.

    xi^n    = -grad B^-1 (div p^n - T*g)
    p^{n+1} = lam (p^n - tau xi^n) / (lam + tau |xi^n|_F)

The array loop `semi_implicit_iterations` is shared by the global solver,
the local subproblems of the decomposition and the surrogate inner solves.
"""

import logging
from functools import partial
from typing import Callable, Optional, Tuple

import numpy as np

from diffops import divergence_array, grad_norm_sq_bound, gradient_array
from grid import DualField, frobenius_array
from models import EnergyTrace, SolveControl
from problem import ProblemSpec, binv_exact_array, binv_norm, energy_array, tstar_g_array

logger = logging.getLogger(__name__)

BinvFn = Callable[[np.ndarray], np.ndarray]


def default_stepsize(spec: ProblemSpec) -> float:
    """1 / (4d ||B^-1||), i.e. 1/(8 ||B^-1||) for images"""
    return 1.0 / (grad_norm_sq_bound(spec.domain.dims) * binv_norm(spec))


def dual_gradient(p: np.ndarray, rhs: np.ndarray, binv: BinvFn) -> np.ndarray:
    return -gradient_array(binv(divergence_array(p) - rhs))


def semi_implicit_update(p: np.ndarray, xi: np.ndarray, bound: np.ndarray, tau: float) -> np.ndarray:
    """One pointwise update; pixels with bound 0 are set to 0"""
    b = bound[..., None, None]
    active = b > 0
    den = b + tau * frobenius_array(xi)[..., None, None]
    return np.where(active, b * (p - tau * xi) / np.where(active, den, 1.0), 0.0)


def semi_implicit_iterations(p: np.ndarray, rhs: np.ndarray, bound: np.ndarray,
                             binv: BinvFn, tau: float, n: int) -> np.ndarray:
    for _ in range(n):
        p = semi_implicit_update(p, dual_gradient(p, rhs, binv), bound, tau)
    return p


def chambolle_step(spec: ProblemSpec, p: DualField, tau: float) -> DualField:
    """One step of the global iteration; needs a pointwise B^-1"""
    op = spec.operator
    binv = partial(op.inverse_gram_plus, spec.beta)
    xi = dual_gradient(p.values, tstar_g_array(spec), binv)
    return p.with_values(semi_implicit_update(p.values, xi, spec.lam.scalar(), tau))


def solve(spec: ProblemSpec, p0: Optional[DualField] = None,
          control: Optional[SolveControl] = None) -> Tuple[DualField, EnergyTrace]:
    control = control or SolveControl()
    p = (p0 if p0 is not None else spec.zero_dual()).values
    tau = control.tau if control.tau is not None else default_stepsize(spec)
    op = spec.operator
    binv = partial(op.inverse_gram_plus, spec.beta)
    tsg = tstar_g_array(spec)
    bound = spec.lam.scalar()

    # refuse global operators before the first energy evaluation
    binv(np.zeros_like(tsg))

    trace = EnergyTrace()
    energy = energy_array(spec, p, tsg)
    if control.log_energy:
        trace.record(0, energy)
    logger.info("global solve: tau=%.6g, max_iters=%d", tau, control.max_iters)

    for n in range(1, control.max_iters + 1):
        p = semi_implicit_update(p, dual_gradient(p, tsg, binv), bound, tau)
        log_now = control.log_energy and (n % control.log_every == 0 or n == control.max_iters)
        if not log_now and control.tol is None:
            continue
        new_energy = energy_array(spec, p, tsg)
        stop = control.tol is not None and energy - new_energy < control.tol
        if control.log_energy and (log_now or stop):
            trace.record(n / control.k_scale, new_energy)
            logger.debug("iteration %d: D = %.17g", n, new_energy)
        if stop:
            logger.info("stopped after %d iterations (decrease below %.3g)", n, control.tol)
            break
        energy = new_energy

    return DualField(domain=spec.domain, values=p), trace


def kkt_residual(spec: ProblemSpec, p: DualField) -> float:
    """||xi + (|xi|_F / lam) p|| / ||xi|| over pixels with lam > 0"""
    xi = dual_gradient(p.values, tstar_g_array(spec), partial(binv_exact_array, spec))
    lam = spec.lam.scalar()[..., None, None]
    active = np.broadcast_to(lam > 0, xi.shape)
    scale = frobenius_array(xi)[..., None, None] / np.where(lam > 0, lam, 1.0)
    res = np.where(active, xi + scale * p.values, 0.0)
    xi_norm = float(np.linalg.norm(np.where(active, xi, 0.0)))
    if xi_norm == 0.0:
        return 0.0
    return float(np.linalg.norm(res)) / xi_norm
