"""Deterministic Fokker-Planck baseline: explicit finite volumes on the graph.

The density on each edge evolves under ``d(rho)/dt = -d(F)/dx`` with flux
``F = mu * rho - D * d(rho)/dx`` and ``D = sigma^2 / 2``.  Interior faces use
upwinding for the drift term and central differences for the diffusion term;
time stepping is first-order explicit Euler.

At a vertex, mass is exchanged pairwise between the vertex-adjacent cells of
the incident edges, weighted by the jump probabilities:

* drift: an edge whose drift points into the vertex exports
  ``|mu_i(v)| * rho_i`` per unit time, distributed over the other edges
  proportionally to their jump weights ``b_vj / sum_{k != i} b_vk``;
  edges whose drift points away export nothing (upwind logic extended to
  the vertex).
* diffusion: each unordered pair exchanges
  ``D(v) * (rho_i/b_vi - rho_j/b_vj) / dx * b_receiver`` from the higher
  normalized density toward the lower.  The ``rho/b`` normalization treats
  jump weights as relative cross-sections, so equal normalized densities are
  in equilibrium.  Each pair is exchanged exactly once per step, which makes
  a degree-2 vertex with equal weights coincide with a plain interior face of
  the concatenated interval.

Every exchanged quantity is subtracted from its source cell and added to its
target cell, so vertex exchange conserves mass to machine precision.  The
stepper is single-threaded by design (its cost is part of the comparison
story against the Monte Carlo path); the inner loop is compiled, which
changes speed, not semantics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .coefficients import CoefficientField, eval_diffusion, eval_drift
from .graph import AT_INIT, MetricGraph
from .grids import EdgeGrid

#: Relative negative-density threshold that flags a blown-up solution.
_NEGATIVE_TOL = 1e-10


class UnstableTimestep(RuntimeError):
    pass


class NegativeDensity(RuntimeError):
    pass


class ZeroJumpWeightAtVertex(ValueError):
    pass


@dataclass
class FvmState:
    """Flat per-cell densities (probability per unit length) on a grid."""

    grid: EdgeGrid
    rho: np.ndarray
    t: float = 0.0

    @classmethod
    def uniform(cls, grid: EdgeGrid, mass: float = 1.0) -> "FvmState":
        total_len = float(grid.lengths.sum())
        rho = np.full(grid.n_cells, mass / total_len, dtype=np.float64)
        return cls(grid=grid, rho=rho, t=0.0)

    @classmethod
    def from_function(cls, grid: EdgeGrid, f) -> "FvmState":
        """Sample ``f(edge, x_center)`` on cell centers (no normalization)."""
        rho = np.empty(grid.n_cells, dtype=np.float64)
        for e in range(grid.n_edges):
            sl = grid.edge_slice(e)
            rho[sl] = [f(e, float(x)) for x in grid.centers(e)]
        return cls(grid=grid, rho=rho, t=0.0)

    def mass(self) -> float:
        return float(np.dot(self.rho, self.grid.cell_widths()))

    def edge_density(self, e: int) -> np.ndarray:
        return self.rho[self.grid.edge_slice(e)]

    def copy(self) -> "FvmState":
        return FvmState(grid=self.grid, rho=self.rho.copy(), t=self.t)


@dataclass(frozen=True)
class FvmResult:
    state: FvmState
    max_cfl: float
    n_steps: int


def _face_drift(field: CoefficientField, e: int, grid: EdgeGrid) -> np.ndarray:
    """Drift evaluated on the interior faces of edge e."""
    n = int(grid.counts[e])
    xs = np.arange(1, n) * grid.dx[e]
    return np.array([eval_drift(field, e, float(x)) for x in xs], dtype=np.float64)


def fvm_interior_fluxes(state: FvmState, field: CoefficientField, grid: EdgeGrid):
    """Per-edge arrays of interior face fluxes (length ``counts[e] - 1``).

    Face flux ``F = mu * rho_upwind - D * (rho_right - rho_left) / dx`` with
    the upwind cell chosen by the sign of ``mu`` at the face.
    """
    out = []
    for e in range(grid.n_edges):
        rho = state.edge_density(e)
        dx = float(grid.dx[e])
        mu = _face_drift(field, e, grid)
        D = 0.5 * eval_diffusion(field, e, 0.0) ** 2
        left = rho[:-1]
        right = rho[1:]
        drift_flux = np.where(mu > 0.0, mu * left, mu * right)
        diff_flux = -D * (right - left) / dx
        out.append(drift_flux + diff_flux)
    return out


def _vertex_slots(graph: MetricGraph, field: CoefficientField, grid: EdgeGrid, v: int):
    """Static per-slot data for the vertex exchange at ``v``.

    Returns ``(cells, b, dx, speed_in, D)`` arrays over incident slots, where
    ``speed_in`` is the inward drift speed at the vertex endpoint (0 when the
    drift points away from the vertex).
    """
    inc = graph.incidence[v]
    offs = grid.offsets
    deg = inc.degree
    cells = np.empty(deg, dtype=np.int64)
    dxs = np.empty(deg)
    speed_in = np.empty(deg)
    D_v = np.empty(deg)
    for i, (eid, orient) in enumerate(zip(inc.edges, inc.orientations)):
        eid = int(eid)
        if orient == AT_INIT:
            cells[i] = offs[eid]
            x_v = 0.0
        else:
            cells[i] = offs[eid + 1] - 1
            x_v = float(grid.lengths[eid])
        mu = eval_drift(field, eid, x_v)
        speed_in[i] = max(0.0, -mu if orient == AT_INIT else mu)
        D_v[i] = 0.5 * eval_diffusion(field, eid, x_v) ** 2
        dxs[i] = grid.dx[eid]
    return cells, inc.jump_weights.astype(np.float64), dxs, speed_in, D_v


def fvm_vertex_fluxes(
    state: FvmState,
    field: CoefficientField,
    graph: MetricGraph,
    grid: EdgeGrid,
    v: int,
):
    """Mass-flow exchange at vertex ``v``.

    Returns ``(net, drift_pairs, diff_pairs)``: ``net[i]`` is the net mass
    flow into the vertex-adjacent cell of incident slot ``i`` (sums to zero),
    and the pair matrices hold the directed flows ``[i, j] = i -> j``.
    """
    inc = graph.incidence[v]
    deg = inc.degree
    drift_pairs = np.zeros((deg, deg))
    diff_pairs = np.zeros((deg, deg))
    if deg < 2:
        return np.zeros(deg), drift_pairs, diff_pairs
    b = inc.jump_weights
    if np.any(b <= 0.0):
        raise ZeroJumpWeightAtVertex(
            f"vertex {v}: the rho/b normalization needs strictly positive jump weights"
        )
    cells, b, dxs, speed_in, D_v = _vertex_slots(graph, field, grid, v)
    rho = state.rho[cells]
    conc = rho / b

    for i in range(deg):
        if speed_in[i] <= 0.0:
            continue
        others = 1.0 - b[i]
        if others <= 0.0:
            continue  # nowhere to send it: all jump weight returns to edge i
        total = speed_in[i] * rho[i]
        for j in range(deg):
            if j != i:
                drift_pairs[i, j] = total * b[j] / others

    for i in range(deg):
        for j in range(i + 1, deg):
            dpair = 0.5 * (D_v[i] + D_v[j])
            dxh = 2.0 * dxs[i] * dxs[j] / (dxs[i] + dxs[j])
            g = dpair * (conc[i] - conc[j]) / dxh
            if g >= 0.0:
                diff_pairs[i, j] = g * b[j]
            else:
                diff_pairs[j, i] = -g * b[i]

    flows = drift_pairs + diff_pairs
    net = flows.sum(axis=0) - flows.sum(axis=1)
    return net, drift_pairs, diff_pairs


def stability_limit(graph: MetricGraph, field: CoefficientField, grid: EdgeGrid) -> float:
    """Largest dt accepted by the explicit stepper (CFL = 1).

    Per interior cell the outflow rate is bounded by
    ``max|mu|/dx + 2 D/dx^2``; vertex-adjacent cells add the vertex drift
    export and the jump-weight-normalized diffusion exchange, which can
    dominate when a jump weight is small.
    """
    max_rate = 0.0
    for e in range(grid.n_edges):
        dx = float(grid.dx[e])
        n = int(grid.counts[e])
        xs = np.arange(n + 1) * dx
        mu_max = max(abs(eval_drift(field, e, float(x))) for x in xs)
        D = 0.5 * eval_diffusion(field, e, 0.0) ** 2
        max_rate = max(max_rate, mu_max / dx + 2.0 * D / (dx * dx))
    for v in graph.finite_vertices():
        inc = graph.incidence[v]
        if inc.degree < 2:
            continue
        if np.any(inc.jump_weights <= 0.0):
            raise ZeroJumpWeightAtVertex(
                f"vertex {v}: the rho/b normalization needs strictly positive jump weights"
            )
        cells, b, dxs, speed_in, D_v = _vertex_slots(graph, field, grid, v)
        for i, (eid, orient) in enumerate(zip(inc.edges, inc.orientations)):
            diff_rate = 0.0
            for j in range(inc.degree):
                if j == i:
                    continue
                dxh = 2.0 * dxs[i] * dxs[j] / (dxs[i] + dxs[j])
                diff_rate += D_v[i] * b[j] / (b[i] * dxh)
            dx = float(dxs[i])
            x_v = 0.0 if orient == AT_INIT else float(grid.lengths[eid])
            mu_abs = abs(eval_drift(field, int(eid), x_v))
            D = D_v[i]
            # vertex-side export channels plus the cell's interior face
            rate = speed_in[i] / dx + diff_rate / dx + mu_abs / dx + 2.0 * D / (dx * dx)
            max_rate = max(max_rate, rate)
    if max_rate == 0.0:
        return math.inf
    return 1.0 / max_rate


@njit(cache=True)
def _fvm_step_loop(
    rho,
    n_steps,
    dt,
    offs,
    dx_edge,
    D_edge,
    face_mu,
    face_off,
    v_off,
    v_cells,
    v_b,
    v_dx,
    v_speed_in,
    v_D,
    neg_floor,
):
    """Explicit Euler steps in place; returns the 1-based step index at which
    the density first dropped below the negativity floor (0 = none)."""
    n_edges = dx_edge.shape[0]
    n_cells = rho.shape[0]
    new = np.empty_like(rho)
    n_vertices = v_off.shape[0] - 1
    for step in range(n_steps):
        for i in range(n_cells):
            new[i] = rho[i]
        for e in range(n_edges):
            lo = offs[e]
            hi = offs[e + 1]
            dx = dx_edge[e]
            D = D_edge[e]
            scale = dt / dx
            fo = face_off[e]
            for j in range(lo + 1, hi):
                mu = face_mu[fo + (j - lo - 1)]
                if mu > 0.0:
                    F = mu * rho[j - 1]
                else:
                    F = mu * rho[j]
                F -= D * (rho[j] - rho[j - 1]) / dx
                new[j] += scale * F
                new[j - 1] -= scale * F
        for v in range(n_vertices):
            lo = v_off[v]
            hi = v_off[v + 1]
            if hi - lo < 2:
                continue
            for i in range(lo, hi):
                ci = v_cells[i]
                bi = v_b[i]
                rho_i = rho[ci]
                if v_speed_in[i] > 0.0:
                    others = 1.0 - bi
                    if others > 0.0:
                        total = v_speed_in[i] * rho_i
                        for j in range(lo, hi):
                            if j == i:
                                continue
                            f = total * v_b[j] / others
                            new[v_cells[j]] += dt * f / v_dx[j]
                            new[ci] -= dt * f / v_dx[i]
                conc_i = rho_i / bi
                for j in range(i + 1, hi):
                    cj = v_cells[j]
                    dpair = 0.5 * (v_D[i] + v_D[j])
                    dxh = 2.0 * v_dx[i] * v_dx[j] / (v_dx[i] + v_dx[j])
                    g = dpair * (conc_i - rho[cj] / v_b[j]) / dxh
                    if g >= 0.0:
                        f = g * v_b[j]
                        new[cj] += dt * f / v_dx[j]
                        new[ci] -= dt * f / v_dx[i]
                    else:
                        f = -g * v_b[i]
                        new[ci] += dt * f / v_dx[i]
                        new[cj] -= dt * f / v_dx[j]
        mx = 1.0
        mn = 0.0
        for i in range(n_cells):
            rho[i] = new[i]
            a = abs(rho[i])
            if a > mx:
                mx = a
            if rho[i] < mn:
                mn = rho[i]
        if mn < neg_floor * mx:
            return step + 1
    return 0


def _pack_static(graph: MetricGraph, field: CoefficientField, grid: EdgeGrid):
    n_edges = grid.n_edges
    face_mu_parts = [_face_drift(field, e, grid) for e in range(n_edges)]
    face_off = np.zeros(n_edges + 1, dtype=np.int64)
    for e in range(n_edges):
        face_off[e + 1] = face_off[e] + face_mu_parts[e].shape[0]
    face_mu = (
        np.concatenate(face_mu_parts) if face_off[-1] else np.zeros(0, dtype=np.float64)
    )
    D_edge = np.array(
        [0.5 * eval_diffusion(field, e, 0.0) ** 2 for e in range(n_edges)]
    )
    nv = graph.n_vertices
    v_off = np.zeros(nv + 1, dtype=np.int64)
    cells_l, b_l, dx_l, sp_l, D_l = [], [], [], [], []
    for v in graph.finite_vertices():
        cells, b, dxs, speed_in, D_v = _vertex_slots(graph, field, grid, v)
        if graph.incidence[v].degree >= 2 and np.any(b <= 0.0):
            raise ZeroJumpWeightAtVertex(
                f"vertex {v}: the rho/b normalization needs strictly positive jump weights"
            )
        v_off[v + 1] = v_off[v] + cells.shape[0]
        cells_l.append(cells)
        b_l.append(b)
        dx_l.append(dxs)
        sp_l.append(speed_in)
        D_l.append(D_v)
    return (
        grid.offsets,
        grid.dx,
        D_edge,
        face_mu,
        face_off,
        v_off,
        np.concatenate(cells_l),
        np.concatenate(b_l),
        np.concatenate(dx_l),
        np.concatenate(sp_l),
        np.concatenate(D_l),
    )


def fvm_run(
    graph: MetricGraph,
    field: CoefficientField,
    grid: EdgeGrid,
    dt: float,
    n_steps: int,
    initial: FvmState,
    force: bool = False,
) -> FvmResult:
    """Advance the density ``n_steps`` explicit Euler steps of size ``dt``.

    Raises :class:`UnstableTimestep` when the predicted CFL number exceeds 1,
    unless ``force`` is set; a developing negative density raises
    :class:`NegativeDensity` (the expected failure mode past the stability
    limit in forced runs).
    """
    if not dt > 0.0:
        raise ValueError(f"dt must be positive, got {dt!r}")
    if not initial.grid.same_geometry(grid):
        raise ValueError("initial state lives on a different grid")
    limit = stability_limit(graph, field, grid)
    max_cfl = dt / limit if math.isfinite(limit) else 0.0
    if max_cfl > 1.0 and not force:
        raise UnstableTimestep(
            f"dt={dt:g} exceeds the stability limit {limit:g} (CFL={max_cfl:.3g}); "
            "pass force=True to run anyway"
        )
    packed = _pack_static(graph, field, grid)
    state = initial.copy()
    neg_step = _fvm_step_loop(state.rho, int(n_steps), float(dt), *packed, -_NEGATIVE_TOL)
    if neg_step:
        state.t += neg_step * dt
        raise NegativeDensity(
            f"density went negative at t={state.t:g} (step {neg_step}); "
            "the timestep is unstable"
        )
    state.t += n_steps * dt
    return FvmResult(state=state, max_cfl=max_cfl, n_steps=int(n_steps))
