"""Public simulation API: single steps, ensembles, and crossing statistics.

The heavy lifting lives in :mod:`graphsde.kernels`; this module owns
configuration and validation, packs graphs and coefficient fields into the
kernels' array form, and exposes deterministic ensemble runs whose results
depend only on ``(seed, config)`` -- never on the worker count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dataclass_field, replace

import numba
import numpy as np

from . import kernels
from .coefficients import CoefficientField, gamma
from .graph import AT_INIT, MetricGraph, VertexId
from .rng import RngStream

DEFAULT_MAX_SPLITS = 100


class ConfigInvalid(ValueError):
    pass


class NoRootInUnitInterval(ValueError):
    """The partial-step quadratic has no first-passage root in [0, 1].

    Raised by :func:`solve_alpha` when the caller claimed an overshoot that
    did not occur; inside the step kernels this state is unreachable.
    """


def solve_alpha(a: float, b: float, c: float) -> float:
    """Solve ``a*s**2 + b*s + c = 0`` for the first-passage ``s`` and return
    ``alpha = s**2``.

    Expects an overshoot configuration (``c >= 0`` and ``a + b + c <= 0``),
    which guarantees a crossing with ``s`` in [0, 1].  The root is computed
    with the cancellation-free quadratic branch and verified against a scaled
    residual tolerance.
    """
    s = kernels.solve_first_passage_s(float(a), float(b), float(c))
    if s < 0.0:
        raise NoRootInUnitInterval(
            f"no first-passage root in [0, 1] for a={a!r}, b={b!r}, c={c!r}"
        )
    residual = abs(a * s * s + b * s + c)
    scale = max(abs(a), abs(b), abs(c), 1.0)
    if residual > 1e-6 * scale and not (s == 1.0 or s == 0.0):
        raise NoRootInUnitInterval(
            f"first-passage root failed the residual check: s={s!r}, residual={residual!r}"
        )
    return s * s


@dataclass
class ParticleState:
    """Mutable (edge, position) state plus lifetime crossing counters."""

    edge: int
    x: float
    crossings_total: int = 0
    crossing_events: int = 0


@dataclass(frozen=True)
class StepOutcome:
    state: ParticleState
    crossings_this_step: int
    truncated: bool


@dataclass(frozen=True)
class AtVertex:
    """Start every particle at a finite vertex."""

    vertex: VertexId = 0


@dataclass(frozen=True)
class PointStart:
    """Start every particle at a fixed (edge, position)."""

    edge: int
    x: float


@dataclass(frozen=True)
class PerEdgeUniform:
    """Start on a uniformly chosen edge, uniformly in [0, min(x_max, l_e)]."""

    x_max: float


InitialDistribution = AtVertex | PointStart | PerEdgeUniform


@dataclass(frozen=True)
class SimulationConfig:
    dt: float
    n_steps: int
    n_particles: int
    seed: int
    max_splits_per_step: int = DEFAULT_MAX_SPLITS
    initial: InitialDistribution = dataclass_field(default_factory=AtVertex)
    workers: int = 1
    #: optional mirror wall radius for star graphs (0 disables it)
    reflect_at: float = 0.0

    def validated(self, graph: MetricGraph) -> "SimulationConfig":
        if not (self.dt > 0.0 and math.isfinite(self.dt)):
            raise ConfigInvalid(f"dt must be positive and finite, got {self.dt!r}")
        if self.n_steps < 0 or self.n_particles < 0:
            raise ConfigInvalid("n_steps and n_particles must be nonnegative")
        if self.max_splits_per_step < 1:
            raise ConfigInvalid("max_splits_per_step must be at least 1")
        if self.workers < 1:
            raise ConfigInvalid("workers must be at least 1")
        if self.reflect_at < 0.0:
            raise ConfigInvalid("reflect_at must be nonnegative")
        init = self.initial
        if isinstance(init, AtVertex):
            if not (0 <= init.vertex < graph.n_vertices):
                raise ConfigInvalid(f"initial vertex {init.vertex} out of range")
        elif isinstance(init, PointStart):
            if not (0 <= init.edge < graph.n_edges):
                raise ConfigInvalid(f"initial edge {init.edge} out of range")
            if not (0.0 <= init.x <= graph.edges[init.edge].length):
                raise ConfigInvalid(f"initial position {init.x!r} outside the edge")
        elif isinstance(init, PerEdgeUniform):
            if not (init.x_max > 0.0 and math.isfinite(init.x_max)):
                raise ConfigInvalid("PerEdgeUniform needs a positive finite x_max")
        else:
            raise ConfigInvalid(f"unknown initial distribution {init!r}")
        return self


@dataclass(frozen=True)
class BounceStats:
    """Vertex-crossing statistics accumulated over a run.

    ``m_histogram[k]`` counts macro steps that resolved exactly ``k`` vertex
    crossings (so it sums to the number of steps that started at or hit a
    vertex); ``gamma`` is the crossing parameter the run was executed at.
    """

    m_histogram: np.ndarray
    gamma: float
    truncation_count: int
    crossings_total: int
    crossing_events: int

    @property
    def vertex_steps(self) -> int:
        return int(self.m_histogram.sum())

    def cdf(self, k: int) -> float:
        """Empirical P(M <= k) over vertex-touching steps."""
        n = self.vertex_steps
        if n == 0:
            return 1.0
        return float(self.m_histogram[: k + 1].sum()) / n


@dataclass(frozen=True)
class EnsembleResult:
    edges: np.ndarray
    positions: np.ndarray
    crossings: np.ndarray
    crossing_events: np.ndarray
    stats: BounceStats
    config: SimulationConfig


def _set_workers(workers: int) -> int:
    limit = numba.config.NUMBA_NUM_THREADS
    n = max(1, min(int(workers), limit))
    numba.set_num_threads(n)
    return n


def available_workers() -> int:
    return int(numba.config.NUMBA_NUM_THREADS)


def _graph_gamma(graph: MetricGraph, field: CoefficientField, dt: float) -> float:
    return max(gamma(field, graph, v, dt) for v in graph.finite_vertices())


def _resolve_initial(graph: MetricGraph, init: InitialDistribution):
    """Map an initial distribution onto kernel placement codes."""
    if isinstance(init, AtVertex):
        inc = graph.incidence[init.vertex]
        e = int(inc.edges[0])
        x = graph.vertex_position(e, int(inc.orientations[0]))
        return kernels.INIT_POINT, e, float(x), 0.0
    if isinstance(init, PointStart):
        return kernels.INIT_POINT, int(init.edge), float(init.x), 0.0
    return kernels.INIT_PER_EDGE_UNIFORM, 0, 0.0, float(init.x_max)


def em_step_star(
    graph: MetricGraph,
    field: CoefficientField,
    state: ParticleState,
    dt: float,
    rng: RngStream,
    max_splits: int = DEFAULT_MAX_SPLITS,
    reflect_at: float = 0.0,
) -> StepOutcome:
    """Advance one particle by ``dt`` on a star graph (single step of the
    timestep-splitting scheme).  Mutates ``rng``'s draw counter."""
    if not graph.is_star:
        raise ConfigInvalid("em_step_star requires a star graph; use em_step_general")
    dkind, dcoef, tab_off, tab_x, tab_mu, sigma = field.packed()
    buf = np.empty(kernels.BUF, dtype=np.uint64)
    edge, x, M, trunc, k, _ = kernels.step_star(
        state.edge, state.x, float(dt), rng.seed, rng.particle, rng.counter,
        rng.counter - kernels.BUF, buf,
        graph.v_off, graph.v_edges, graph.v_cumw,
        dkind, dcoef, tab_off, tab_x, tab_mu, sigma,
        max_splits, float(reflect_at),
    )
    rng.counter = int(k)
    new_state = ParticleState(
        edge=int(edge),
        x=float(x),
        crossings_total=state.crossings_total + int(M),
        crossing_events=state.crossing_events + (1 if M > 0 else 0),
    )
    return StepOutcome(new_state, int(M), bool(trunc))


def em_step_general(
    graph: MetricGraph,
    field: CoefficientField,
    state: ParticleState,
    dt: float,
    rng: RngStream,
    max_splits: int = DEFAULT_MAX_SPLITS,
) -> StepOutcome:
    """Advance one particle by ``dt`` on a general metric graph with finite
    edges.  Mutates ``rng``'s draw counter."""
    if graph.has_semi_infinite_edges:
        raise ConfigInvalid(
            "em_step_general requires finite edge lengths; star graphs with "
            "semi-infinite edges go through em_step_star"
        )
    dkind, dcoef, tab_off, tab_x, tab_mu, sigma = field.packed()
    buf = np.empty(kernels.BUF, dtype=np.uint64)
    edge, x, M, trunc, k, _ = kernels.step_general(
        state.edge, state.x, float(dt), rng.seed, rng.particle, rng.counter,
        rng.counter - kernels.BUF, buf,
        graph.edge_init, graph.edge_term, graph.edge_length,
        graph.v_off, graph.v_edges, graph.v_orient, graph.v_cumw,
        dkind, dcoef, tab_off, tab_x, tab_mu, sigma,
        max_splits,
    )
    rng.counter = int(k)
    new_state = ParticleState(
        edge=int(edge),
        x=float(x),
        crossings_total=state.crossings_total + int(M),
        crossing_events=state.crossing_events + (1 if M > 0 else 0),
    )
    return StepOutcome(new_state, int(M), bool(trunc))


def run_ensemble(
    graph: MetricGraph,
    field: CoefficientField,
    config: SimulationConfig,
) -> EnsembleResult:
    """Drive ``n_particles`` independent particles for ``n_steps`` steps.

    Star graphs use the star kernel; any other graph must have finite edge
    lengths and uses the general kernel.  Results are bit-identical for a
    fixed ``(seed, config)`` regardless of ``workers``.
    """
    config = config.validated(graph)
    if not graph.is_star and graph.has_semi_infinite_edges:
        raise ConfigInvalid(
            "general ensembles require finite edge lengths; semi-infinite "
            "edges are only supported on star graphs"
        )
    if config.reflect_at > 0.0 and not graph.is_star:
        raise ConfigInvalid("reflect_at applies to star graphs only")

    n = config.n_particles
    run_gamma = _graph_gamma(graph, field, config.dt) if n >= 0 else 0.0
    cap = config.max_splits_per_step
    out_edge = np.zeros(n, dtype=np.int64)
    out_x = np.zeros(n, dtype=np.float64)
    out_cross = np.zeros(n, dtype=np.int64)
    out_events = np.zeros(n, dtype=np.int64)
    out_trunc = np.zeros(n, dtype=np.int64)
    n_chunks = max(1, -(-n // kernels.CHUNK))
    m_hist2d = np.zeros((n_chunks, cap + 1), dtype=np.int64)

    init_kind, init_edge, init_x, init_xmax = _resolve_initial(graph, config.initial)
    dkind, dcoef, tab_off, tab_x, tab_mu, sigma = field.packed()
    _set_workers(config.workers)

    if n > 0 and config.n_steps > 0:
        if graph.is_star:
            kernels.ensemble_star(
                config.seed, n, config.n_steps, config.dt,
                init_kind, init_edge, init_x, init_xmax,
                graph.edge_length,
                graph.v_off, graph.v_edges, graph.v_cumw,
                dkind, dcoef, tab_off, tab_x, tab_mu, sigma,
                cap, config.reflect_at,
                out_edge, out_x, out_cross, out_events, out_trunc, m_hist2d,
            )
        else:
            kernels.ensemble_general(
                config.seed, n, config.n_steps, config.dt,
                init_kind, init_edge, init_x, init_xmax,
                graph.edge_init, graph.edge_term, graph.edge_length,
                graph.v_off, graph.v_edges, graph.v_orient, graph.v_cumw,
                dkind, dcoef, tab_off, tab_x, tab_mu, sigma,
                cap,
                out_edge, out_x, out_cross, out_events, out_trunc, m_hist2d,
            )
    elif n > 0:
        # zero steps: particles sit at their initial placement
        for i in range(n):
            e, x, _ = _place_initial_py(
                config.seed, i, init_kind, init_edge, init_x, init_xmax, graph
            )
            out_edge[i] = e
            out_x[i] = x

    stats = BounceStats(
        m_histogram=m_hist2d.sum(axis=0),
        gamma=run_gamma,
        truncation_count=int(out_trunc.sum()),
        crossings_total=int(out_cross.sum()),
        crossing_events=int(out_events.sum()),
    )
    return EnsembleResult(
        edges=out_edge,
        positions=out_x,
        crossings=out_cross,
        crossing_events=out_events,
        stats=stats,
        config=config,
    )


def _place_initial_py(seed, pid, init_kind, init_edge, init_x, init_xmax, graph):
    from .rng import uniform01

    if init_kind == kernels.INIT_POINT:
        return init_edge, init_x, 0
    u = uniform01(seed, pid, 0)
    m = graph.n_edges
    e = min(int(u * m), m - 1)
    u2 = uniform01(seed, pid, 1)
    span = min(init_xmax, graph.edges[e].length)
    return e, u2 * span, 2


@dataclass(frozen=True)
class VertexTrials:
    """Outcomes of single macro steps started at a vertex."""

    M: np.ndarray
    exit_edges: np.ndarray
    exit_positions: np.ndarray
    truncated: np.ndarray
    dt: float
    gamma: float

    def stats(self) -> BounceStats:
        cap = int(self.M.max()) if self.M.size else 1
        hist = np.bincount(self.M, minlength=cap + 1).astype(np.int64)
        return BounceStats(
            m_histogram=hist,
            gamma=self.gamma,
            truncation_count=int(self.truncated.sum()),
            crossings_total=int(self.M.sum()),
            crossing_events=int((self.M > 0).sum()),
        )


def vertex_crossing_trials(
    graph: MetricGraph,
    field: CoefficientField,
    dt: float,
    n_trials: int,
    seed: int,
    vertex: VertexId = 0,
    max_splits: int = DEFAULT_MAX_SPLITS,
    workers: int = 1,
) -> VertexTrials:
    """Run ``n_trials`` independent macro steps from ``vertex`` and record
    the crossing count, exit edge, and exit position of each."""
    if not dt > 0.0:
        raise ConfigInvalid(f"dt must be positive, got {dt!r}")
    out_M = np.zeros(n_trials, dtype=np.int64)
    out_edge = np.zeros(n_trials, dtype=np.int64)
    out_x = np.zeros(n_trials, dtype=np.float64)
    out_trunc = np.zeros(n_trials, dtype=np.int64)
    dkind, dcoef, tab_off, tab_x, tab_mu, sigma = field.packed()
    _set_workers(workers)
    if n_trials > 0:
        if graph.is_star:
            kernels.vertex_trials_star(
                seed, n_trials, float(dt),
                graph.v_off, graph.v_edges, graph.v_cumw,
                dkind, dcoef, tab_off, tab_x, tab_mu, sigma,
                max_splits,
                out_M, out_edge, out_x, out_trunc,
            )
        else:
            if graph.has_semi_infinite_edges:
                raise ConfigInvalid("vertex trials on non-star graphs need finite edges")
            inc = graph.incidence[vertex]
            e0 = int(inc.edges[0])
            x0 = graph.vertex_position(e0, int(inc.orientations[0]))
            kernels.vertex_trials_general(
                seed, n_trials, float(dt), e0, float(x0),
                graph.edge_init, graph.edge_term, graph.edge_length,
                graph.v_off, graph.v_edges, graph.v_orient, graph.v_cumw,
                dkind, dcoef, tab_off, tab_x, tab_mu, sigma,
                max_splits,
                out_M, out_edge, out_x, out_trunc,
            )
    return VertexTrials(
        M=out_M,
        exit_edges=out_edge,
        exit_positions=out_x,
        truncated=out_trunc,
        dt=float(dt),
        gamma=gamma(field, graph, vertex, dt),
    )
