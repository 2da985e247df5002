import numpy as np
import pytest

from conftest import random_feasible
from decomp import DecompLayout, local_subproblem, run
from diffops import divergence
from exceptions import TauTooSmall
from grid import DualField, GridDomain, GridFunction, axpy_fields
from models import DDConfig, DecompMode, SurrogateConfig, SurrogateNesting
from problem import ForwardOperator, ProblemSpec, apply_Binv, binv_norm, dual_energy, tstar_g
from surrogate import (certificate_eta, default_tau_sur, lemma_factor, surrogate_objective, surrogate_rhs,
                       surrogate_solve)


def layout_for(shape, counts, overlap):
    return DecompLayout.build(GridDomain.from_shape(shape), counts, overlap)


def local_energy(spec, layout, i, p_prev, p_anchor, v):
    theta = layout.theta(i)[..., None, None]
    return dual_energy(spec, p_prev.with_values(p_prev.values + v.values - theta * p_anchor.values))


def test_default_tau_has_margin(inpaint_spec):
    spec = inpaint_spec()
    assert default_tau_sur(spec) == pytest.approx(1.05 * binv_norm(spec))


def test_tau_must_exceed_binv_norm(wavelet_spec):
    spec = wavelet_spec()
    layout = layout_for((4, 4), (2, 1), 1)
    p = spec.zero_dual()
    with pytest.raises(TauTooSmall):
        surrogate_solve(spec, layout, 0, p, p, SurrogateConfig(tau=binv_norm(spec)))
    with pytest.raises(TauTooSmall):
        run(spec, layout, DDConfig(n_sur=1, tau_sur=0.5 * binv_norm(spec), outer_iters=1))


def test_rhs_with_unit_gram_and_shared_fields(rng, denoise_spec):
    spec = denoise_spec(shape=(6, 6))
    layout = layout_for((6, 6), 2, 1)
    theta = layout.theta(0)
    p = DualField(domain=spec.domain, values=random_feasible(rng, spec.domain, spec.lam.scalar()))
    v = p.with_values(theta[..., None, None] * p.values)
    f = surrogate_rhs(spec, 1.0, p, p, theta, v)
    expected = divergence(v).values - (divergence(p).values - spec.g.values)
    np.testing.assert_allclose(f.values, expected, rtol=0, atol=1e-14)


def test_rhs_of_zero_data_is_zero():
    spec = ProblemSpec.build(ForwardOperator.identity((5, 5)), np.zeros((5, 5)), 0.1)
    layout = layout_for((5, 5), 2, 1)
    zero = spec.zero_dual()
    f = surrogate_rhs(spec, 2.0, zero, zero, layout.theta(1), zero)
    assert np.all(f.values == 0.0)


def test_rhs_matches_field_transcription(rng, inpaint_spec):
    spec = inpaint_spec(shape=(4, 4))
    layout = layout_for((4, 4), 2, 1)
    theta = GridFunction.from_array(layout.theta(3))
    bound = spec.lam.scalar()
    p_prev = DualField(domain=spec.domain, values=random_feasible(rng, spec.domain, bound))
    p_anchor = DualField(domain=spec.domain, values=random_feasible(rng, spec.domain, bound))
    v = DualField(domain=spec.domain, values=random_feasible(rng, spec.domain, theta.scalar() * bound))
    tau = 1.3 * binv_norm(spec)

    shifted = p_prev.with_values(p_prev.values + v.values - theta.values[..., None] * p_anchor.values)
    residual = axpy_fields(-1.0, tstar_g(spec), divergence(shifted))
    expected = axpy_fields(-1.0 / tau, apply_Binv(spec, residual), divergence(v))

    f = surrogate_rhs(spec, tau, p_prev, p_anchor, theta, v)
    np.testing.assert_allclose(f.values, expected.values, rtol=1e-13, atol=1e-13)


def test_surrogate_majorizes_local_energy(rng, wavelet_spec):
    spec = wavelet_spec(shape=(8, 8))
    layout = layout_for((8, 8), 2, 1)
    bound = spec.lam.scalar()
    theta = layout.theta(2)
    tau = default_tau_sur(spec)
    p = DualField(domain=spec.domain, values=random_feasible(rng, spec.domain, bound))
    for _ in range(5):
        v = p.with_values(random_feasible(rng, spec.domain, theta * bound))
        w = p.with_values(random_feasible(rng, spec.domain, theta * bound))
        exact = local_energy(spec, layout, 2, p, p, v)
        assert surrogate_objective(spec, p, p, theta, v, v, tau) == pytest.approx(exact, rel=1e-12)
        assert surrogate_objective(spec, p, p, theta, v, w, tau) >= exact - 1e-12


def test_surrogate_with_unit_gram_matches_direct_solve(rng, denoise_spec):
    spec = denoise_spec(shape=(8, 8))
    layout = layout_for((8, 8), 2, 2)
    p = DualField(domain=spec.domain, values=random_feasible(rng, spec.domain, spec.lam.scalar()))
    direct = DDConfig(inner_iters=20)
    surrogate = DDConfig(inner_iters=20, n_sur=1, tau_sur=1.0 + 1e-6)
    for i in range(layout.size):
        v_direct = local_subproblem(spec, layout, i, p, p, direct)
        v_sur = local_subproblem(spec, layout, i, p, p, surrogate)
        assert local_energy(spec, layout, i, p, p, v_sur) == pytest.approx(
            local_energy(spec, layout, i, p, p, v_direct), abs=1e-8)


def test_surrogate_run_with_unit_gram_matches_direct_run(denoise_spec):
    spec = denoise_spec(shape=(8, 8))
    layout = layout_for((8, 8), 2, 2)
    direct = run(spec, layout, DDConfig(outer_iters=5, inner_iters=10))
    surrogate = run(spec, layout, DDConfig(outer_iters=5, inner_iters=10, n_sur=1, tau_sur=1.0 + 1e-6))
    np.testing.assert_allclose(surrogate.trace.energies, direct.trace.energies, rtol=0, atol=1e-8)


@pytest.mark.parametrize("factory", ["wavelet_spec", "inpaint_spec"])
def test_each_surrogate_step_decreases_local_energy(rng, request, factory):
    spec = request.getfixturevalue(factory)(shape=(8, 8))
    layout = layout_for((8, 8), 2, 1)
    p = DualField(domain=spec.domain, values=random_feasible(rng, spec.domain, spec.lam.scalar()))
    for i in range(layout.size):
        energies = []
        for n_sur in range(1, 6):
            v = surrogate_solve(spec, layout, i, p, p, SurrogateConfig(n_sur=n_sur, inner_iters=15))
            assert v.is_feasible(layout.theta(i) * spec.lam.scalar())
            energies.append(local_energy(spec, layout, i, p, p, v))
        start = dual_energy(spec, p)
        assert energies[0] <= start + 1e-12
        assert all(b <= a + 1e-12 for a, b in zip(energies, energies[1:]))


def test_decrease_certificate_holds(rng, wavelet_spec, local_oracle):
    spec = wavelet_spec(shape=(4, 4), beta=1.0)
    layout = layout_for((4, 4), (2, 1), 1)
    p = DualField(domain=spec.domain, values=random_feasible(rng, spec.domain, spec.lam.scalar()))
    config = SurrogateConfig(n_sur=3, inner_iters=5000)
    eta = certificate_eta(spec, default_tau_sur(spec))
    for i in range(layout.size):
        theta = layout.theta(i)
        start = local_energy(spec, layout, i, p, p, p.with_values(theta[..., None, None] * p.values))
        final = local_energy(spec, layout, i, p, p, surrogate_solve(spec, layout, i, p, p, config))
        best = local_energy(spec, layout, i, p, p, p.with_values(local_oracle(spec, theta, p.values, p.values,
                                                                              iters=20000)))
        assert start - final >= lemma_factor(eta, 3) * (start - best) - 1e-8


@pytest.mark.parametrize("tau,eta", [(1.2, 0.8), (2.0, 0.25)])
def test_certificate_eta_cases(denoise_spec, tau, eta):
    assert certificate_eta(denoise_spec(), tau) == pytest.approx(eta)


def test_lemma_factor():
    assert lemma_factor(0.5, 2) == pytest.approx(0.75)
    assert lemma_factor(0.25, 0) == 0.0


@pytest.mark.parametrize("factory", ["wavelet_spec", "inpaint_spec"])
def test_outer_nesting_is_monotone(request, factory):
    spec = request.getfixturevalue(factory)(shape=(8, 8))
    layout = layout_for((8, 8), 2, 1)
    config = DDConfig(outer_iters=8, inner_iters=10, n_sur=1, nesting=SurrogateNesting.OUTER)
    result = run(spec, layout, config)
    assert result.trace.is_monotone(1e-12)
    assert result.trace.final_energy < result.trace.energies[0]
    assert result.p.is_feasible(spec.lam)


def test_outer_nesting_parallel_mode(wavelet_spec):
    spec = wavelet_spec(shape=(8, 8))
    layout = layout_for((8, 8), 2, 1)
    config = DDConfig(mode=DecompMode.PARALLEL, sigma=0.25, outer_iters=5, n_sur=1, nesting=SurrogateNesting.OUTER)
    assert run(spec, layout, config).trace.is_monotone(1e-12)


@pytest.mark.slow
def test_surrogate_decomposition_reaches_global_energy(wavelet_spec, pg_oracle):
    spec = wavelet_spec(shape=(8, 8), beta=1.0)
    reference = dual_energy(spec, DualField(domain=spec.domain, values=pg_oracle(spec, iters=20000)))
    result = run(spec, layout_for((8, 8), 2, 2), DDConfig(outer_iters=200, inner_iters=20, n_sur=3))
    assert result.trace.is_monotone(1e-12)
    assert result.trace.final_energy == pytest.approx(reference, rel=1e-4)
