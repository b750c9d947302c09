"""Density estimation, analytic steady states, and statistical validators.

The steady-state oracles cover the two star-graph potentials with closed-form
stationary densities: constant drift toward the vertex (exponential profiles)
and drift proportional to the coordinate (Gaussian profiles).  Normalizers
are always computed by adaptive quadrature of the unnormalized densities; the
closed forms are kept as cross-checks because the printed linear-case
normalizer does not survive direct integration (see
:meth:`SteadyStateOracle.self_check`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize, stats

from .coefficients import (
    CoefficientError,
    CoefficientField,
    ConstantDrift,
    LinearDrift,
)
from .engine import BounceStats, VertexTrials, vertex_crossing_trials
from .fvm import FvmState
from .graph import MetricGraph
from .grids import EdgeGrid

LINEAR = "linear"
QUADRATIC = "quadratic"


class GridMismatch(ValueError):
    pass


@dataclass(frozen=True)
class Histogram:
    """Per-edge binned counts on an :class:`EdgeGrid`.

    Density is ``count / (total * bin width)``; positions at or beyond an
    edge's last bin edge are clamped into the last bin, so the density always
    integrates to exactly 1 over the binned domain.
    """

    grid: EdgeGrid
    counts: np.ndarray
    total: int

    def density(self) -> np.ndarray:
        if self.total == 0:
            return np.zeros(self.grid.n_cells)
        return self.counts / (self.total * self.grid.cell_widths())

    def edge_counts(self, e: int) -> np.ndarray:
        return self.counts[self.grid.edge_slice(e)]


def histogram_accumulate(edges, positions, grid: EdgeGrid) -> Histogram:
    """Bin an ensemble of (edge, position) samples onto ``grid``.

    Each sample lands in exactly one bin: ``floor(x / width)`` clamped into
    ``[0, counts[e] - 1]``.
    """
    edges = np.asarray(edges, dtype=np.int64)
    positions = np.asarray(positions, dtype=np.float64)
    if edges.shape != positions.shape:
        raise ValueError("edges and positions must have matching shapes")
    if edges.size and (edges.min() < 0 or edges.max() >= grid.n_edges):
        raise ValueError("edge index out of range for the grid")
    dx = grid.dx
    counts_per_edge = grid.counts
    local = np.floor(positions / dx[edges]).astype(np.int64)
    np.clip(local, 0, counts_per_edge[edges] - 1, out=local)
    flat = grid.offsets[edges] + local
    counts = np.bincount(flat, minlength=grid.n_cells).astype(np.int64)
    return Histogram(grid=grid, counts=counts, total=int(edges.size))


@dataclass(frozen=True)
class SteadyStateOracle:
    """Analytic stationary density of a star graph under a recognized potential.

    ``rates[e]`` is the positive drift magnitude on edge ``e`` (constant
    drift ``-rates[e]`` toward the vertex for the linear potential, drift
    ``-rates[e] * x`` for the quadratic one); ``D = sigma^2 / 2``.
    """

    kind: str
    rates: np.ndarray
    D: float
    B: float

    @classmethod
    def create(cls, kind: str, rates, diffusion_sigma: float) -> "SteadyStateOracle":
        rates = np.asarray(rates, dtype=np.float64)
        if kind not in (LINEAR, QUADRATIC):
            raise ValueError(f"unknown potential kind {kind!r}")
        if np.any(rates <= 0.0):
            raise ValueError("rates must be positive for a normalizable steady state")
        D = 0.5 * float(diffusion_sigma) ** 2
        total = 0.0
        for r in rates:
            val, _ = integrate.quad(
                lambda x, r=r: cls._unnormalized(kind, r, D, x), 0.0, np.inf
            )
            total += val
        oracle = cls(kind=kind, rates=rates, D=D, B=1.0 / total)
        return oracle

    @classmethod
    def from_field(cls, graph: MetricGraph, field: CoefficientField) -> "SteadyStateOracle":
        """Derive the oracle from a star graph's coefficient field.

        Requires all drifts of one kind, pointing toward the vertex, and a
        common constant diffusion.
        """
        if not graph.is_star:
            raise CoefficientError("steady-state oracles are defined for star graphs")
        sigmas = {d.sigma for d in field.diffusion}
        if len(sigmas) != 1:
            raise CoefficientError("oracle requires one common diffusion constant")
        kinds = {type(s) for s in field.drift}
        if kinds == {ConstantDrift}:
            kind = LINEAR
        elif kinds == {LinearDrift}:
            kind = QUADRATIC
        else:
            raise CoefficientError(
                "oracle requires all-constant or all-linear drift specs"
            )
        cs = np.array([s.c for s in field.drift], dtype=np.float64)
        if np.any(cs >= 0.0):
            raise CoefficientError("oracle requires drift toward the vertex (c < 0)")
        return cls.create(kind, -cs, sigmas.pop())

    @staticmethod
    def _unnormalized(kind: str, rate: float, D: float, x: float) -> float:
        if kind == LINEAR:
            return math.exp(-(rate / D) * x)
        return math.exp(-(rate / (2.0 * D)) * x * x)

    def density(self, e: int, x) -> float | np.ndarray:
        r = self.rates[e]
        if self.kind == LINEAR:
            return self.B * np.exp(-(r / self.D) * np.asarray(x, dtype=np.float64))
        return self.B * np.exp(-(r / (2.0 * self.D)) * np.square(np.asarray(x, dtype=np.float64)))

    def edge_mass(self, e: int) -> float:
        r = self.rates[e]
        if self.kind == LINEAR:
            return self.B * self.D / r
        return self.B * math.sqrt(math.pi * self.D / (2.0 * r))

    def tail_mass(self, e: int, L: float) -> float:
        r = self.rates[e]
        if self.kind == LINEAR:
            return self.B * (self.D / r) * math.exp(-(r / self.D) * L)
        return (
            self.B
            * math.sqrt(math.pi * self.D / (2.0 * r))
            * math.erfc(L * math.sqrt(r / (2.0 * self.D)))
        )

    def truncation_lengths(self, tol: float = 1e-8) -> np.ndarray:
        """Per-edge lengths beyond which the stationary tail mass is < tol."""
        out = np.empty(len(self.rates))
        for e in range(len(self.rates)):
            if self.tail_mass(e, 0.0) <= tol:
                out[e] = self.D / self.rates[e]  # vanishing edge mass: any O(D/r) span
                continue
            lo, hi = 0.0, 1.0
            while self.tail_mass(e, hi) > tol:
                hi *= 2.0
            out[e] = optimize.brentq(
                lambda L, e=e: self.tail_mass(e, L) - tol, lo, hi, xtol=1e-12
            )
        return out

    def closed_form_normalizer(self) -> float:
        """The normalizer obtained by integrating the profiles in closed form."""
        r = self.rates
        if self.kind == LINEAR:
            return 1.0 / (self.D * np.sum(1.0 / r))
        return math.sqrt(2.0 / (self.D * math.pi)) / np.sum(1.0 / np.sqrt(r))

    def as_printed_normalizer(self) -> float:
        """The linear-case normalizer exactly as printed alongside the
        exponential profiles (D / sum(1/mu)); kept for the self-check because
        it disagrees with direct integration by a factor of D^2."""
        r = self.rates
        if self.kind == LINEAR:
            return self.D / float(np.sum(1.0 / r))
        return self.closed_form_normalizer()

    def self_check(self) -> dict:
        """Quadrature vs closed-form normalizers, for reporting."""
        return {
            "kind": self.kind,
            "quadrature_B": self.B,
            "closed_form_B": self.closed_form_normalizer(),
            "as_printed_B": self.as_printed_normalizer(),
            "total_mass": sum(self.edge_mass(e) for e in range(len(self.rates))),
        }


def steady_state_density(oracle: SteadyStateOracle, e: int, x) -> float | np.ndarray:
    return oracle.density(e, x)


def _estimate_density_and_grid(estimate, grid: EdgeGrid | None):
    if isinstance(estimate, Histogram):
        return estimate.density(), estimate.grid
    if isinstance(estimate, FvmState):
        return estimate.rho, estimate.grid
    values = np.asarray(estimate, dtype=np.float64)
    if grid is None:
        raise GridMismatch("raw density arrays need an explicit grid")
    return values, grid


def l2_error(estimate, oracle, grid: EdgeGrid | None = None) -> float:
    """sqrt(sum over cells of (estimate - oracle(center))^2 * dx).

    ``estimate`` may be a :class:`Histogram`, an :class:`FvmState`, or a flat
    density array with an explicit ``grid``.  ``oracle`` is anything with a
    ``density(e, x)`` method or a callable ``(e, x) -> density``.
    """
    values, est_grid = _estimate_density_and_grid(estimate, grid)
    if grid is not None and not est_grid.same_geometry(grid):
        raise GridMismatch("estimate grid does not match the requested grid")
    if values.shape[0] != est_grid.n_cells:
        raise GridMismatch(
            f"density has {values.shape[0]} cells, grid has {est_grid.n_cells}"
        )
    density_fn = oracle.density if hasattr(oracle, "density") else oracle
    total = 0.0
    for e in range(est_grid.n_edges):
        sl = est_grid.edge_slice(e)
        ref = np.asarray(density_fn(e, est_grid.centers(e)), dtype=np.float64)
        diff = values[sl] - ref
        total += float(np.dot(diff, diff)) * float(est_grid.dx[e])
    return math.sqrt(total)


@dataclass(frozen=True)
class CrossingBoundRow:
    k: int
    empirical: float
    bound: float
    chi2_tail: float
    std_error: float
    bound_violated: bool
    chi2_deviates: bool


@dataclass(frozen=True)
class CrossingBoundReport:
    gamma: float
    n_steps: int
    rows: tuple[CrossingBoundRow, ...]
    homogeneous: bool

    @property
    def any_bound_violation(self) -> bool:
        return any(r.bound_violated for r in self.rows)

    @property
    def any_chi2_deviation(self) -> bool:
        return any(r.chi2_deviates for r in self.rows)


def crossing_bound(k: float, gamma: float) -> float:
    """Lower bound on P(M <= k): 1 - exp(-(k - gamma)^2 / (4k)) for k > gamma,
    degenerate (0) otherwise."""
    if k <= gamma:
        return 0.0
    return 1.0 - math.exp(-((k - gamma) ** 2) / (4.0 * k))


def check_crossing_bound(
    stats_in: BounceStats | VertexTrials,
    gamma: float | None = None,
    k_max: int = 10,
    homogeneous: bool = True,
) -> CrossingBoundReport:
    """Compare empirical P(M <= k) against the concentration bound and, for
    homogeneous coefficients, the exact chi-squared tail P(chi2_k >= gamma).

    A bound violation is flagged only beyond 3 standard errors of the
    empirical CDF; the chi-squared comparison flags deviations beyond
    3 standard errors of the exact tail probability.
    """
    bstats = stats_in.stats() if isinstance(stats_in, VertexTrials) else stats_in
    g = bstats.gamma if gamma is None else float(gamma)
    n = bstats.vertex_steps
    rows = []
    for k in range(1, k_max + 1):
        emp = bstats.cdf(k)
        bound = crossing_bound(k, g)
        tail = float(stats.chi2.sf(g, k)) if g > 0 else 1.0
        p_ref = tail if homogeneous else emp
        se = math.sqrt(max(p_ref * (1.0 - p_ref), 1e-300) / n) if n else 0.0
        bound_violated = n > 0 and emp < bound - 3.0 * se
        chi2_dev = homogeneous and n > 0 and abs(emp - tail) > 3.0 * se
        rows.append(
            CrossingBoundRow(
                k=k,
                empirical=emp,
                bound=bound,
                chi2_tail=tail,
                std_error=se,
                bound_violated=bound_violated,
                chi2_deviates=chi2_dev,
            )
        )
    return CrossingBoundReport(gamma=g, n_steps=n, rows=tuple(rows), homogeneous=homogeneous)


@dataclass(frozen=True)
class ExitProbabilityRow:
    dt: float
    frequencies: np.ndarray
    expected: np.ndarray
    max_deviation: float
    binomial_se: np.ndarray
    mean_crossings: float


@dataclass(frozen=True)
class ExitProbabilityReport:
    vertex: int
    trials: int
    rows: tuple[ExitProbabilityRow, ...]

    @property
    def max_deviations(self) -> list[float]:
        return [r.max_deviation for r in self.rows]

    @property
    def nonincreasing(self) -> bool:
        devs = self.max_deviations
        return all(b <= a for a, b in zip(devs, devs[1:]))


def exit_probability_experiment(
    graph: MetricGraph,
    field: CoefficientField,
    dt_schedule,
    trials: int,
    seed: int,
    vertex: int = 0,
    workers: int = 1,
) -> ExitProbabilityReport:
    """Start particles at a vertex, take one macro step per trial, and
    compare empirical exit-edge frequencies against the jump weights.

    The schedule should be ordered from the largest dt to the smallest so the
    nonincreasing-deviation summary reads as convergence.
    """
    inc = graph.incidence[vertex]
    expected = inc.jump_weights.astype(np.float64)
    rows = []
    for i, dt in enumerate(dt_schedule):
        tr = vertex_crossing_trials(
            graph, field, float(dt), trials, seed + i, vertex=vertex, workers=workers
        )
        freq = np.zeros(inc.degree)
        for slot, eid in enumerate(inc.edges):
            freq[slot] = float(np.mean(tr.exit_edges == eid)) if trials else 0.0
        se = np.sqrt(expected * (1.0 - expected) / max(trials, 1))
        rows.append(
            ExitProbabilityRow(
                dt=float(dt),
                frequencies=freq,
                expected=expected,
                max_deviation=float(np.abs(freq - expected).max()),
                binomial_se=se,
                mean_crossings=float(tr.M.mean()) if trials else 0.0,
            )
        )
    return ExitProbabilityReport(vertex=vertex, trials=trials, rows=tuple(rows))
