"""Drift and diffusion coefficient fields on a metric graph.

Each edge carries its own drift specification (constant, proportional to the
edge coordinate, or tabulated with linear interpolation) and a constant
diffusion coefficient.  Fields are immutable and evaluated pointwise by the
integrator and the finite-volume baseline.  At a vertex, coefficients are
evaluated as the one-sided limit along each incident edge, i.e. at the
edge-local endpoint coordinate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .graph import AT_INIT, EdgeId, MetricGraph, VertexId

DRIFT_CONSTANT = 0
DRIFT_LINEAR = 1
DRIFT_TABULATED = 2


class CoefficientError(ValueError):
    pass


class NonPositiveArea(CoefficientError):
    pass


class ZeroDiffusion(CoefficientError):
    pass


@dataclass(frozen=True)
class ConstantDrift:
    """mu_e(x) = c."""

    c: float


@dataclass(frozen=True)
class LinearDrift:
    """mu_e(x) = c * x (vanishes at the edge's init endpoint)."""

    c: float


@dataclass(frozen=True)
class TabulatedDrift:
    """Piecewise-linear mu_e from samples, constant beyond the sample range."""

    xs: tuple[float, ...]
    mus: tuple[float, ...]

    def __post_init__(self):
        if len(self.xs) != len(self.mus) or len(self.xs) < 1:
            raise CoefficientError("tabulated drift needs matching, nonempty xs and mus")
        if any(b <= a for a, b in zip(self.xs, self.xs[1:])):
            raise CoefficientError("tabulated drift sample x-values must be strictly increasing")


DriftSpec = ConstantDrift | LinearDrift | TabulatedDrift


@dataclass(frozen=True)
class ConstantDiffusion:
    """sigma_e(x) = sigma > 0.  The evaluation interface keeps x so that
    x-dependent diffusion can slot in later without touching callers."""

    sigma: float

    def __post_init__(self):
        if not self.sigma > 0.0:
            raise ZeroDiffusion(f"diffusion must be strictly positive, got {self.sigma!r}")


DiffusionSpec = ConstantDiffusion


@dataclass(frozen=True)
class CoefficientField:
    """Per-edge drift and diffusion specs, indexed by edge id."""

    drift: tuple[DriftSpec, ...]
    diffusion: tuple[DiffusionSpec, ...]

    @classmethod
    def for_graph(
        cls,
        graph: MetricGraph,
        drift,
        diffusion,
    ) -> "CoefficientField":
        """Validate spec lists against the graph and freeze them.

        ``diffusion`` entries may be given as bare floats.  Tabulated drift
        samples must lie within the edge's interval.
        """
        drift = tuple(drift)
        diffusion = tuple(
            d if isinstance(d, ConstantDiffusion) else ConstantDiffusion(float(d))
            for d in diffusion
        )
        if len(drift) != graph.n_edges or len(diffusion) != graph.n_edges:
            raise CoefficientError(
                f"expected {graph.n_edges} drift and diffusion specs, "
                f"got {len(drift)} and {len(diffusion)}"
            )
        for e, spec in enumerate(drift):
            if isinstance(spec, TabulatedDrift):
                l_e = graph.edges[e].length
                if spec.xs[0] < 0.0 or spec.xs[-1] > l_e:
                    raise CoefficientError(
                        f"edge {e}: tabulated samples must lie within [0, {l_e}]"
                    )
        return cls(drift=drift, diffusion=diffusion)

    def packed(self):
        """Flat numpy encoding of the field for the numerical kernels.

        Returns ``(kind, coef, tab_off, tab_x, tab_mu, sigma)``.
        """
        m = len(self.drift)
        kind = np.zeros(m, dtype=np.int8)
        coef = np.zeros(m, dtype=np.float64)
        tab_off = np.zeros(m + 1, dtype=np.int64)
        tab_x: list[float] = []
        tab_mu: list[float] = []
        for e, spec in enumerate(self.drift):
            if isinstance(spec, ConstantDrift):
                kind[e] = DRIFT_CONSTANT
                coef[e] = spec.c
            elif isinstance(spec, LinearDrift):
                kind[e] = DRIFT_LINEAR
                coef[e] = spec.c
            else:
                kind[e] = DRIFT_TABULATED
                tab_x.extend(spec.xs)
                tab_mu.extend(spec.mus)
            tab_off[e + 1] = len(tab_x)
        sigma = np.array([d.sigma for d in self.diffusion], dtype=np.float64)
        return (
            kind,
            coef,
            tab_off,
            np.asarray(tab_x, dtype=np.float64),
            np.asarray(tab_mu, dtype=np.float64),
            sigma,
        )


def eval_drift(field: CoefficientField, e: EdgeId, x: float) -> float:
    """Evaluate mu_e(x).  Total on the edge: tabulated specs clamp outside
    their sample range (constant extrapolation)."""
    spec = field.drift[e]
    if isinstance(spec, ConstantDrift):
        return spec.c
    if isinstance(spec, LinearDrift):
        return spec.c * x
    return float(np.interp(x, spec.xs, spec.mus))


def eval_diffusion(field: CoefficientField, e: EdgeId, x: float) -> float:
    """Evaluate sigma_e(x) (currently constant per edge)."""
    return field.diffusion[e].sigma


def drift_from_flux(Q, A) -> list[ConstantDrift]:
    """Per-edge constant drift u_e = Q_e / A_e from volume flux and area data.

    The sign of ``Q_e`` is interpreted in the edge's init-to-term orientation.
    """
    Q = np.asarray(Q, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    if Q.shape != A.shape:
        raise CoefficientError(f"flux and area lists differ in length: {Q.shape} vs {A.shape}")
    bad = np.flatnonzero(~(A > 0.0))
    if bad.size:
        raise NonPositiveArea(f"cross-sectional area must be positive (edges {bad.tolist()})")
    return [ConstantDrift(float(q / a)) for q, a in zip(Q, A)]


def gamma(field: CoefficientField, graph: MetricGraph, v: VertexId, dt: float) -> float:
    """Dimensionless vertex-crossing parameter dt * max_e mu_e(v)^2 / sigma_e(v)^2.

    Coefficients are evaluated at the vertex-side endpoint of each incident
    edge (one-sided limits).
    """
    if not dt > 0.0:
        raise CoefficientError(f"dt must be positive, got {dt!r}")
    inc = graph.incidence[v]
    worst = 0.0
    for eid, orient in zip(inc.edges, inc.orientations):
        x_v = 0.0 if orient == AT_INIT else graph.edges[eid].length
        if math.isinf(x_v):
            raise CoefficientError(
                f"edge {eid} is semi-infinite; gamma is undefined at its far endpoint"
            )
        mu = eval_drift(field, int(eid), x_v)
        sig = eval_diffusion(field, int(eid), x_v)
        if sig == 0.0:
            raise ZeroDiffusion(f"edge {eid}: zero diffusion at vertex {v}")
        worst = max(worst, (mu * mu) / (sig * sig))
    return dt * worst
