import numpy as np
import pytest

from diffops import divergence_array, gradient_array
from grid import GridDomain, GridFunction
from problem import ForwardOperator, ProblemSpec, binv_exact_array, binv_norm, energy_array, project_K_array, tstar_g_array


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def denoise_spec():
    """Factory for T = I problems on random data"""

    def make(shape=(8, 8), lam=0.1, beta=0.0, seed=0):
        g = np.random.default_rng(seed).random(shape)
        return ProblemSpec.build(ForwardOperator.identity(shape), g, lam, beta)

    return make


@pytest.fixture
def inpaint_spec():
    def make(shape=(8, 8), lam=0.05, beta=0.01, prob=0.5, seed=0):
        gen = np.random.default_rng(seed)
        g0 = gen.random(shape)
        A = gen.random(shape) < prob
        return ProblemSpec.build(ForwardOperator.masked(A), np.where(A, 0.0, g0), lam, beta)

    return make


@pytest.fixture
def flow_spec():
    def make(shape=(8, 8), lam=0.01, beta=0.01, seed=0):
        gen = np.random.default_rng(seed)
        g0 = gen.random(shape)
        g1 = gen.random(shape)
        weights = gradient_array(g1[..., None])[..., 0]
        return ProblemSpec.build(ForwardOperator.pointwise_flow(weights), g0 - g1, lam, beta)

    return make


@pytest.fixture
def wavelet_spec():
    def make(shape=(4, 4), lam=0.05, beta=0.01, prob=0.5, seed=0):
        from wavelet import haar_forward_array, mask_coeffs_array

        gen = np.random.default_rng(seed)
        g0 = gen.random(shape)
        J = gen.random(shape) < prob
        g = mask_coeffs_array(haar_forward_array(g0), J)
        return ProblemSpec.build(ForwardOperator.composed_wavelet(J), g, lam, beta)

    return make


def _fista(energy, gradient, project, x0, step, iters):
    x = project(x0)
    y = x.copy()
    t = 1.0
    for _ in range(iters):
        x_next = project(y - step * gradient(y))
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = x_next + ((t - 1.0) / t_next) * (x_next - x)
        # restart on energy increase
        if energy(x_next) > energy(x):
            y = x_next.copy()
            t_next = 1.0
        x, t = x_next, t_next
    return x


@pytest.fixture
def pg_oracle():
    """Accelerated projected gradient on D over K, independent of the semi-implicit update"""

    def minimize(spec: ProblemSpec, iters=5000, p0=None):
        tsg = tstar_g_array(spec)
        bound = spec.lam.scalar()
        step = 1.0 / (4.0 * spec.domain.dims * binv_norm(spec))
        x0 = np.zeros(spec.domain.shape + (spec.domain.dims, spec.channels)) if p0 is None else p0
        return _fista(
            lambda p: energy_array(spec, p, tsg),
            lambda p: -gradient_array(binv_exact_array(spec, divergence_array(p) - tsg)),
            lambda p: project_K_array(p, bound),
            x0, step, iters,
        )

    return minimize


@pytest.fixture
def local_oracle():
    """Projected gradient for min D(p_prev + v - theta p_anchor) over theta K"""

    def minimize(spec: ProblemSpec, theta, p_prev, p_anchor, iters=5000):
        tsg = tstar_g_array(spec)
        bound = theta * spec.lam.scalar()
        t = theta[..., None, None]
        step = 1.0 / (4.0 * spec.domain.dims * binv_norm(spec))

        def energy(v):
            return energy_array(spec, p_prev + v - t * p_anchor, tsg)

        def gradient(v):
            r = divergence_array(p_prev + v - t * p_anchor) - tsg
            return -gradient_array(binv_exact_array(spec, r))

        return _fista(energy, gradient, lambda v: project_K_array(v, bound), t * p_prev, step, iters)

    return minimize


@pytest.fixture
def checkerboard():
    def make(n=8, block=2):
        idx = np.arange(n) // block
        return ((idx[:, None] + idx[None, :]) % 2).astype(np.float64)

    return make


def random_feasible(rng, domain: GridDomain, bound: np.ndarray, m: int = 1) -> np.ndarray:
    p = rng.standard_normal(domain.shape + (domain.dims, m))
    return project_K_array(p, bound)


@pytest.fixture
def feasible_field(rng):
    def make(domain: GridDomain, bound, m: int = 1):
        bound = np.broadcast_to(np.asarray(bound, dtype=np.float64), domain.shape)
        return random_feasible(rng, domain, bound, m)

    return make


@pytest.fixture
def field_of():
    def make(arr):
        return GridFunction.from_array(np.asarray(arr, dtype=np.float64))

    return make
