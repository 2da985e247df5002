"""
Overlapping domain decomposition for the predual problem.

Layout
    Each axis of n points (diameter s = n - 1) is split into M overlapping
    index intervals [b_i, b_i + a_i] with sum(a_i) = s + (M - 1) r, so that
    neighbours share exactly r + 1 lattice points. Subdomains are tensor
    products of the per-axis intervals, enumerated lexicographically with the
    first axis slowest.

Weights
    theta_i(x) = min(1, dist(x, outside_i) / r) per axis, normalized to a
    partition of unity per axis and multiplied across axes.

Iterations
    parallel:    p^{n+1} = p^n + sigma sum_i (v_i - theta_i p^n)
    sequential:  p_i = p_{i-1} + sigma (v_i - theta_i p^n)

    where v_i approximately minimizes D(p_prev + v - theta_i p^n) over
    theta_i K. Local subproblems run on the subdomain box extended by one
    lattice point on the upper side of each axis, where the finite-difference
    operators coincide with the global ones for fields supported in the box.
"""

import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from functools import partial, reduce
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from diffops import divergence_array, grad_norm_sq_bound
from dualsolve import semi_implicit_iterations
from exceptions import OverlapTooLarge, SigmaOutOfRange
from grid import DualField, GridDomain, GridFunction
from models import DDConfig, DecompMode, EnergyTrace, SurrogateNesting
from problem import ProblemSpec, binv_norm, energy_array, primal_recover, tstar_g_array

logger = logging.getLogger(__name__)

Interval = Tuple[int, int]  # (b_i, a_i)


def layout_1d(s: int, M: int, r: int) -> List[Interval]:
    """Split [0, s] into M intervals of near-equal length overlapping by r"""
    if M < 1:
        raise ValueError("at least one subdomain per axis is required")
    if r < 1:
        raise ValueError("overlap must be at least 1")
    if M == 1:
        return [(0, s)]

    lengths: List[int] = []
    for i in range(M):
        lengths.append((s + (M - 1) * r - sum(lengths)) // (M - i))
    starts = [sum(a - r for a in lengths[:i]) for i in range(M)]

    short = [a for a in lengths if a < 2 * r]
    if short:
        raise OverlapTooLarge(
            f"sublength {min(short)} < 2r = {2 * r} (s={s}, M={M}, r={r}); use fewer subdomains or a smaller overlap")
    return list(zip(starts, lengths))


def _axis_weights(intervals: Sequence[Interval], n: int, r: int) -> np.ndarray:
    """Normalized per-axis weights, shape (M, n)"""
    x = np.arange(n, dtype=np.float64)
    raw = np.zeros((len(intervals), n))
    for i, (b, a) in enumerate(intervals):
        dist = np.full(n, np.inf)
        if b > 0:
            dist = np.minimum(dist, x - (b - 1))
        if b + a < n - 1:
            dist = np.minimum(dist, (b + a + 1) - x)
        inside = (x >= b) & (x <= b + a)
        raw[i] = np.where(inside, np.minimum(1.0, dist / r), 0.0)
    return raw / raw.sum(axis=0)


def _independence_period(intervals: Sequence[Interval]) -> int:
    """Smallest q >= 2 such that intervals q apart are separated by two points"""
    M = len(intervals)
    if M == 1:
        return 1
    for q in range(2, M):
        if all(intervals[i + q][0] >= intervals[i][0] + intervals[i][1] + 2 for i in range(M - q)):
            return q
    return M


class DecompLayout(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    domain: GridDomain
    counts: Tuple[int, ...]
    overlaps: Tuple[int, ...]
    intervals: Tuple[Tuple[Interval, ...], ...]
    thetas: Tuple[np.ndarray, ...] = ()
    colors: Tuple[int, ...] = ()

    @classmethod
    def build(cls, domain: GridDomain, counts, overlaps) -> "DecompLayout":
        d = domain.dims
        counts = tuple(counts) if isinstance(counts, (tuple, list)) else (int(counts),) * d
        overlaps = tuple(overlaps) if isinstance(overlaps, (tuple, list)) else (int(overlaps),) * d
        if len(counts) != d or len(overlaps) != d:
            raise ValueError(f"need one subdomain count and one overlap per axis ({d})")
        intervals = tuple(tuple(layout_1d(n - 1, M, r)) for n, M, r in zip(domain.shape, counts, overlaps))
        layout = cls(domain=domain, counts=counts, overlaps=overlaps, intervals=intervals)
        thetas = []
        for w in partition_weights(layout):
            arr = np.array(w.scalar())
            arr.flags.writeable = False
            thetas.append(arr)
        layout = layout.model_copy(update={"thetas": tuple(thetas)})
        layout = layout.model_copy(update={"colors": tuple(color_subdomains(layout))})
        logger.info("layout %s on %s: %d subdomains, %d colors",
                    "x".join(map(str, counts)), domain.shape, layout.size, max(layout.colors))
        return layout

    @property
    def size(self) -> int:
        return int(np.prod(self.counts))

    def multi_index(self, i: int) -> Tuple[int, ...]:
        return tuple(int(j) for j in np.unravel_index(i, self.counts))

    def support(self, i: int) -> Tuple[slice, ...]:
        """Index box of Omega_i"""
        return tuple(slice(b, b + a + 1) for (b, a) in
                     (self.intervals[k][j] for k, j in enumerate(self.multi_index(i))))

    def window(self, i: int) -> Tuple[slice, ...]:
        """Omega_i extended by one point on the upper side, clipped"""
        return tuple(slice(sl.start, min(sl.stop + 1, n)) for sl, n in zip(self.support(i), self.domain.shape))

    def theta(self, i: int) -> np.ndarray:
        return self.thetas[i]

    def color_classes(self) -> List[List[int]]:
        classes: Dict[int, List[int]] = {}
        for i, c in enumerate(self.colors):
            classes.setdefault(c, []).append(i)
        return [classes[c] for c in sorted(classes)]


def partition_weights(layout: DecompLayout) -> List[GridFunction]:
    """Tensor-product partition of unity; sums to 1.0 exactly in index order"""
    axis_weights = [_axis_weights(iv, n, r) for iv, n, r in
                    zip(layout.intervals, layout.domain.shape, layout.overlaps)]
    stacked = np.empty((layout.size,) + layout.domain.shape)
    for i, idx in enumerate(itertools.product(*(range(M) for M in layout.counts))):
        stacked[i] = reduce(np.multiply.outer, [w[j] for w, j in zip(axis_weights, idx)])

    # the last positive weight at each point takes the rounding residual
    partial_sums = np.cumsum(stacked, axis=0)
    last = stacked.shape[0] - 1 - np.argmax(stacked[::-1] > 0, axis=0)
    before = np.where(last > 0, np.take_along_axis(partial_sums, np.maximum(last - 1, 0)[None], axis=0)[0], 0.0)
    np.put_along_axis(stacked, last[None], (1.0 - before)[None], axis=0)

    return [GridFunction.from_array(stacked[i], layout.domain) for i in range(layout.size)]


def color_subdomains(layout: DecompLayout) -> List[int]:
    """Colors 1..C; subdomains sharing a color neither read nor write each other's data"""
    periods = [_independence_period(iv) for iv in layout.intervals]
    colors = []
    for i in range(layout.size):
        residues = [j % q for j, q in zip(layout.multi_index(i), periods)]
        colors.append(1 + int(np.ravel_multi_index(residues, periods)))
    return colors


def rho_ratio(decrease: float, best_decrease: float) -> float:
    """Achieved fraction of the best possible subproblem decrease"""
    if best_decrease <= 0:
        return 1.0
    return decrease / best_decrease


class DecompResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    p: DualField
    u: GridFunction
    trace: EnergyTrace = Field(default_factory=EnergyTrace)


class _Workspace:
    """Problem data shared by the subproblems of one run"""

    def __init__(self, spec: ProblemSpec, layout: DecompLayout, config: DDConfig):
        self.spec = spec
        self.layout = layout
        self.config = config
        self.tsg = tstar_g_array(spec)
        self.lam = spec.lam.scalar()
        self.use_surrogate = config.n_sur > 0 or not spec.operator.is_local
        self.tau = None
        if not self.use_surrogate:
            self.tau = 1.0 / (grad_norm_sq_bound(spec.domain.dims) * binv_norm(spec))

    def local_rhs(self, i: int, p_prev: np.ndarray, p_anchor: np.ndarray) -> np.ndarray:
        theta = self.layout.theta(i)[..., None, None]
        return self.tsg - divergence_array(p_prev - theta * p_anchor)

    def window_objective(self, binv, v: np.ndarray, f: np.ndarray) -> float:
        r = divergence_array(v) - f
        return 0.5 * float(np.sum(r * binv(r)))

    def solve(self, i: int, p_prev: np.ndarray, p_anchor: np.ndarray) -> np.ndarray:
        """Local candidate v_i on the window of subdomain i"""
        if self.use_surrogate:
            return self._solve_surrogate(i, p_prev, p_anchor)
        layout, spec = self.layout, self.spec
        w = layout.window(i)
        theta = layout.theta(i)[w]
        f = self.local_rhs(i, p_prev, p_anchor)[w]
        binv = partial(spec.operator.restrict(w).inverse_gram_plus, spec.beta)
        v0 = theta[..., None, None] * p_prev[w]
        v = semi_implicit_iterations(v0, f, theta * self.lam[w], binv, self.tau, self.config.inner_iters)
        reference = theta[..., None, None] * p_anchor[w]
        if self.window_objective(binv, v, f) <= self.window_objective(binv, reference, f):
            return v
        logger.debug("subdomain %d: kept the reference candidate", i)
        return reference

    def _solve_surrogate(self, i: int, p_prev: np.ndarray, p_anchor: np.ndarray) -> np.ndarray:
        from surrogate import surrogate_solve

        spec, layout = self.spec, self.layout
        w = layout.window(i)
        prev = DualField(domain=spec.domain, values=p_prev)
        anchor = DualField(domain=spec.domain, values=p_anchor)
        v = surrogate_solve(spec, layout, i, prev, anchor, self.config.surrogate()).values
        theta = layout.theta(i)[..., None, None]
        candidate = energy_array(spec, p_prev + v - theta * p_anchor, self.tsg)
        if candidate <= energy_array(spec, p_prev, self.tsg):
            return v[w]
        logger.debug("subdomain %d: kept the reference candidate", i)
        return theta[w] * p_anchor[w]


def local_subproblem(spec: ProblemSpec, layout: DecompLayout, i: int, p_prev: DualField,
                     p_anchor: DualField, config: Optional[DDConfig] = None) -> DualField:
    """
    Approximate minimizer of D(p_prev + v - theta_i p_anchor) over theta_i K.

    Runs config.inner_iters semi-implicit steps on the subdomain window,
    starting from theta_i p_prev; global operators (or n_sur > 0) go through
    the surrogate iteration. The result is never worse than theta_i p_anchor.
    """
    config = config or DDConfig()
    ws = _Workspace(spec, layout, config)
    v = np.zeros_like(p_prev.values)
    v[layout.window(i)] = ws.solve(i, p_prev.values, p_anchor.values)
    return DualField(domain=spec.domain, values=v)


def check_sigma(config: DDConfig, layout: DecompLayout):
    limit = 1.0 / layout.size if config.mode == DecompMode.PARALLEL else 1.0
    if not 0 < config.sigma <= limit * (1 + 1e-12):
        raise SigmaOutOfRange(f"sigma = {config.sigma:g} exceeds {limit:g} for {config.mode.value} mode with M = {layout.size}")


def _execution_classes(ws: _Workspace) -> List[List[int]]:
    if ws.config.mode == DecompMode.PARALLEL:
        return [list(range(ws.layout.size))]
    if ws.spec.operator.is_local:
        return ws.layout.color_classes()
    # a global B^-1 couples every pair of subdomains
    return [[i] for i in range(ws.layout.size)]


def _outer_step(ws: _Workspace, p: np.ndarray, executor: Optional[ThreadPoolExecutor]) -> np.ndarray:
    sigma = ws.config.sigma
    layout = ws.layout
    anchor = p
    current = p.copy()
    mapper = executor.map if executor is not None else map
    for cls in _execution_classes(ws):
        snapshot = current.copy()
        results = list(mapper(lambda i: ws.solve(i, snapshot, anchor), cls))
        for i, v in zip(cls, results):
            w = layout.window(i)
            theta = layout.theta(i)[w][..., None, None]
            current[w] += sigma * (v - theta * anchor[w])
    return current


def outer_iterate(spec: ProblemSpec, layout: DecompLayout, config: DDConfig, p: DualField,
                  executor: Optional[ThreadPoolExecutor] = None) -> Tuple[DualField, float]:
    """One outer iteration; returns p^{n+1} and D(p^{n+1})"""
    check_sigma(config, layout)
    ws = _Workspace(spec, layout, config)
    p_new = _outer_step(ws, p.values, executor)
    return DualField(domain=spec.domain, values=p_new), energy_array(spec, p_new, ws.tsg)


def run(spec: ProblemSpec, layout: DecompLayout, config: Optional[DDConfig] = None,
        p0: Optional[DualField] = None) -> DecompResult:
    config = config or DDConfig()
    check_sigma(config, layout)
    if config.n_sur > 0 and config.nesting == SurrogateNesting.OUTER:
        from surrogate import surrogate_outer_run
        return surrogate_outer_run(spec, layout, config, p0)

    ws = _Workspace(spec, layout, config)
    p = (p0 if p0 is not None else spec.zero_dual()).values
    trace = EnergyTrace()
    trace.record(0, energy_array(spec, p, ws.tsg))
    logger.info("decomposition run: %s mode, M=%d, sigma=%.6g, %d outer iterations",
                config.mode.value, layout.size, config.sigma, config.outer_iters)

    executor = ThreadPoolExecutor(max_workers=config.workers) if config.workers > 1 else None
    try:
        for n in range(1, config.outer_iters + 1):
            p = _outer_step(ws, p, executor)
            energy = energy_array(spec, p, ws.tsg)
            trace.record(n, energy)
            logger.debug("outer iteration %d: D = %.17g", n, energy)
    finally:
        if executor is not None:
            executor.shutdown()

    p_final = DualField(domain=spec.domain, values=p)
    return DecompResult(p=p_final, u=primal_recover(spec, p_final), trace=trace)
