"""
Surrogate inner iteration for forward operators with a global B^-1.

The local objective D_i(v) = D(p_prev + v - theta_i p_anchor) is majorized
around the current iterate w by

    S(v, w) = D_i(v) + 1/2 ||div (v - w)||^2_{tau I - B^-1}
            = tau/2 ||div v - f||^2 + const,

    f = div w - (1/tau) B^-1 (div (p_prev + w - theta_i p_anchor) - T*g),

valid for tau > ||B^-1||. Minimizing S over theta_i K only needs B = I, so
the single global B^-1 application per step happens in `surrogate_rhs`.
"""

import logging
from typing import Optional

import numpy as np

from decomp import DecompLayout, DecompResult, outer_iterate
from diffops import divergence_array, grad_norm_sq_bound
from dualsolve import semi_implicit_iterations
from exceptions import TauTooSmall
from grid import DualField, GridFunction
from models import DDConfig, EnergyTrace, SurrogateConfig, SurrogateNesting
from problem import (ForwardOperator, ProblemSpec, b_norm, binv_exact_array, binv_norm, energy_array,
                     primal_recover, tstar_g_array)

logger = logging.getLogger(__name__)

TAU_MARGIN = 1.05


def default_tau_sur(spec: ProblemSpec) -> float:
    return TAU_MARGIN * binv_norm(spec)


def _checked_tau(spec: ProblemSpec, tau: Optional[float]) -> float:
    tau = default_tau_sur(spec) if tau is None else tau
    limit = binv_norm(spec)
    if tau <= limit:
        raise TauTooSmall(f"tau_sur = {tau:g} must exceed ||B^-1|| = {limit:g}")
    return tau


def certificate_eta(spec: ProblemSpec, tau: float) -> float:
    """Per-step decrease factor from c = ||tau I - B^-1|| ||B||"""
    B = b_norm(spec)
    c = (tau - 1.0 / B) * B
    return 1.0 / (4.0 * c) if c >= 0.5 else 1.0 - c


def lemma_factor(eta: float, n: int) -> float:
    """Guaranteed fraction of the optimal local decrease after n surrogate steps"""
    return 1.0 - (1.0 - eta) ** n


def _rhs_array(spec: ProblemSpec, tau: float, p_prev: np.ndarray, p_anchor: np.ndarray,
               theta: np.ndarray, v: np.ndarray, tsg: np.ndarray) -> np.ndarray:
    t = theta[..., None, None]
    residual = divergence_array(p_prev + v - t * p_anchor) - tsg
    return divergence_array(v) - binv_exact_array(spec, residual) / tau


def surrogate_rhs(spec: ProblemSpec, tau: float, p_prev: DualField, p_anchor: DualField,
                  theta, v_cur: DualField) -> GridFunction:
    theta = theta.scalar() if isinstance(theta, GridFunction) else np.asarray(theta, dtype=np.float64)
    f = _rhs_array(spec, tau, p_prev.values, p_anchor.values, theta, v_cur.values, tstar_g_array(spec))
    return GridFunction(domain=spec.domain, values=f)


def surrogate_objective(spec: ProblemSpec, p_prev: DualField, p_anchor: DualField, theta,
                        v: DualField, w: DualField, tau: float) -> float:
    """S(v, w) = D_i(v) + 1/2 tau ||div(v - w)||^2 - 1/2 ||div(v - w)||^2_{B^-1}"""
    theta = theta.scalar() if isinstance(theta, GridFunction) else np.asarray(theta, dtype=np.float64)
    p = p_prev.values + v.values - theta[..., None, None] * p_anchor.values
    diff = divergence_array(v.values - w.values)
    return (energy_array(spec, p)
            + 0.5 * tau * float(np.sum(diff * diff))
            - 0.5 * float(np.sum(diff * binv_exact_array(spec, diff))))


def _identity(r: np.ndarray) -> np.ndarray:
    return r


def surrogate_solve(spec: ProblemSpec, layout: DecompLayout, i: int, p_prev: DualField,
                    p_anchor: DualField, config: Optional[SurrogateConfig] = None) -> DualField:
    config = config or SurrogateConfig()
    tau = _checked_tau(spec, config.tau)
    tsg = tstar_g_array(spec)
    theta = layout.theta(i)
    w = layout.window(i)
    bound = (theta * spec.lam.scalar())[w]
    inner_tau = 1.0 / grad_norm_sq_bound(spec.domain.dims)

    v = theta[..., None, None] * p_prev.values
    for step in range(config.n_sur):
        f = _rhs_array(spec, tau, p_prev.values, p_anchor.values, theta, v, tsg)[w]
        start = v[w]
        local = semi_implicit_iterations(start, f, bound, _identity, inner_tau, config.inner_iters)
        r_new = divergence_array(local) - f
        r_old = divergence_array(start) - f
        if float(np.sum(r_new * r_new)) <= float(np.sum(r_old * r_old)):
            v = v.copy()
            v[w] = local
        logger.debug("subdomain %d, surrogate step %d done", i, step + 1)

    return DualField(domain=spec.domain, values=v)


def surrogate_outer_run(spec: ProblemSpec, layout: DecompLayout, config: DDConfig,
                        p0: Optional[DualField] = None) -> DecompResult:
    """
    Global surrogate loop with the decomposition inside.

    Each outer step freezes f^n around p^n and takes one decomposition
    iteration on the B^-1 free problem 1/2 ||div p - f^n||^2 over K.
    """
    tau = _checked_tau(spec, config.tau_sur)
    eta = certificate_eta(spec, tau)
    logger.info("outer surrogate loop: tau=%.6g, eta=%.6g", tau, eta)

    tsg = tstar_g_array(spec)
    ones = np.ones(spec.domain.shape)
    inner = config.model_copy(update={"n_sur": 0, "nesting": SurrogateNesting.INNER})
    p = p0 if p0 is not None else spec.zero_dual()
    trace = EnergyTrace()
    trace.record(0, energy_array(spec, p.values, tsg))

    for n in range(1, config.outer_iters + 1):
        f = _rhs_array(spec, tau, p.values, p.values, ones, p.values, tsg)
        aux = ProblemSpec.build(ForwardOperator.identity(spec.domain.shape, spec.channels),
                                GridFunction(domain=spec.domain, values=f), spec.lam, beta=0.0)
        candidate, _ = outer_iterate(aux, layout, inner, p)
        energy = energy_array(spec, candidate.values, tsg)
        if energy <= trace.final_energy:
            p = candidate
        else:
            energy = trace.final_energy
        trace.record(n, energy)
        logger.debug("outer surrogate iteration %d: D = %.17g", n, energy)

    return DecompResult(p=p, u=primal_recover(spec, p), trace=trace)
