"""Metric graphs: oriented edges glued at vertices, with per-vertex jump weights.

A metric graph identifies every edge with a real interval ``[0, l_e]``
(position measured from the edge's ``init`` vertex) and glues intervals at
shared vertices.  Each finite vertex carries a probability vector over its
incident edges (the jump weights) that governs which edge a diffusion exits
onto after hitting the vertex.  Edges may be semi-infinite, in which case the
terminal endpoint is a sentinel "vertex at infinity" that carries no jump
distribution and must never be sampled or bounced at.

Graphs are validated once at construction and immutable afterwards, so they
can be shared freely between any number of simulation workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

EdgeId = int
VertexId = int

#: Sentinel vertex id used as the terminal endpoint of semi-infinite edges.
INFINITY_VERTEX: VertexId = -1

#: Orientation of an incident edge slot: the vertex sits at the edge's init
#: endpoint (position 0) or term endpoint (position l_e).
AT_INIT = 0
AT_TERM = 1

#: Tolerance for rejecting user-supplied jump weights whose sum is off.
WEIGHT_SUM_TOLERANCE = 1e-9


class GraphBuildError(ValueError):
    """Base class for metric-graph construction failures."""


class NonPositiveLength(GraphBuildError):
    pass


class WeightSimplexViolation(GraphBuildError):
    pass


class DanglingVertexReference(GraphBuildError):
    pass


class DisconnectedGraph(GraphBuildError):
    pass


class SelfLoopError(GraphBuildError):
    pass


class InfinityVertex(ValueError):
    """Raised when an operation requires a finite vertex but got the sentinel."""


@dataclass(frozen=True)
class Edge:
    """One oriented edge: interval [0, length] from ``init`` to ``term``.

    ``length`` may be ``math.inf``, in which case ``term`` must be
    :data:`INFINITY_VERTEX`.
    """

    init: VertexId
    term: VertexId
    length: float

    @property
    def is_semi_infinite(self) -> bool:
        return math.isinf(self.length)


@dataclass(frozen=True)
class VertexIncidence:
    """Incident edge slots of one finite vertex, in increasing edge-id order.

    ``orientations[j]`` says at which endpoint of ``edges[j]`` the vertex
    sits.  ``jump_weights`` is a point of the probability simplex over the
    slots; ``cum_weights`` is its running prefix sum (final entry 1 up to
    rounding), which is what the exit-edge sampler scans.
    """

    edges: np.ndarray        # int64, incident edge ids
    orientations: np.ndarray  # int8, AT_INIT / AT_TERM per slot
    jump_weights: np.ndarray  # float64, sums to 1
    cum_weights: np.ndarray   # float64, nondecreasing prefix sums

    @property
    def degree(self) -> int:
        return int(self.edges.shape[0])


@dataclass(frozen=True)
class MetricGraph:
    """A validated metric graph plus packed incidence arrays for kernels.

    The packed arrays (``v_off``, ``v_edges``, ``v_orient``, ``v_cumw``)
    are a CSR-style flattening of ``incidence`` shared read-only with the
    numerical kernels; ``incidence[v]`` is the per-vertex view of the same
    data.
    """

    edges: tuple[Edge, ...]
    incidence: tuple[VertexIncidence, ...]
    is_star: bool

    # packed per-edge arrays
    edge_init: np.ndarray   # int64
    edge_term: np.ndarray   # int64, INFINITY_VERTEX for semi-infinite edges
    edge_length: np.ndarray  # float64, may contain inf

    # packed per-vertex incidence (CSR layout over finite vertices)
    v_off: np.ndarray     # int64, len n_vertices + 1
    v_edges: np.ndarray   # int64
    v_orient: np.ndarray  # int8
    v_cumw: np.ndarray    # float64

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_vertices(self) -> int:
        return len(self.incidence)

    @property
    def has_semi_infinite_edges(self) -> bool:
        return bool(np.isinf(self.edge_length).any())

    def degree(self, v: VertexId) -> int:
        return self.incidence[v].degree

    def finite_vertices(self) -> range:
        return range(self.n_vertices)

    def vertex_position(self, e: EdgeId, orientation: int) -> float:
        """Edge-local coordinate of the vertex sitting at the given endpoint."""
        return 0.0 if orientation == AT_INIT else self.edges[e].length


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def build_graph(
    edges,
    jump_weights: dict[VertexId, list[float]] | None = None,
) -> MetricGraph:
    """Build and validate a :class:`MetricGraph`.

    Parameters
    ----------
    edges:
        Iterable of ``(init, term, length)`` triples.  ``term`` may be
        ``None`` or :data:`INFINITY_VERTEX` for a semi-infinite edge, in
        which case ``length`` must be infinite (and vice versa).
    jump_weights:
        Optional per-vertex weight lists, parallel to the vertex's incident
        edges in increasing edge-id order.  Vertices without an entry get
        uniform weights ``1/deg``; degree-1 vertices therefore get ``{1.0}``,
        which makes a vertex hit re-enter the single edge (reflection).

    Raises
    ------
    NonPositiveLength, WeightSimplexViolation, DanglingVertexReference,
    DisconnectedGraph, SelfLoopError
    """
    edge_list: list[Edge] = []
    for idx, (init, term, length) in enumerate(edges):
        if term is None:
            term = INFINITY_VERTEX
        init = int(init)
        term = int(term)
        length = float(length)
        if not length > 0.0:
            raise NonPositiveLength(f"edge {idx}: length {length!r} must be positive")
        if math.isinf(length) != (term == INFINITY_VERTEX):
            raise GraphBuildError(
                f"edge {idx}: semi-infinite edges must pair length=inf with the "
                f"infinity-vertex sentinel (got term={term}, length={length})"
            )
        if init == INFINITY_VERTEX:
            raise GraphBuildError(f"edge {idx}: init endpoint cannot be the infinity vertex")
        if init < 0 or (term < 0 and term != INFINITY_VERTEX):
            raise DanglingVertexReference(f"edge {idx}: negative vertex id")
        if init == term:
            raise SelfLoopError(f"edge {idx}: self-loops are not supported")
        edge_list.append(Edge(init, term, length))

    if not edge_list:
        raise GraphBuildError("a metric graph needs at least one edge")

    finite_refs = [e.init for e in edge_list] + [
        e.term for e in edge_list if e.term != INFINITY_VERTEX
    ]
    n_vertices = max(finite_refs) + 1

    # Incident slots per vertex, in increasing edge-id order.
    slots: list[list[tuple[int, int]]] = [[] for _ in range(n_vertices)]
    for eid, e in enumerate(edge_list):
        slots[e.init].append((eid, AT_INIT))
        if e.term != INFINITY_VERTEX:
            slots[e.term].append((eid, AT_TERM))

    for v in range(n_vertices):
        if not slots[v]:
            raise DanglingVertexReference(
                f"vertex {v} is never referenced by any edge (ids must be dense)"
            )

    jump_weights = dict(jump_weights or {})
    for v in jump_weights:
        if not (0 <= v < n_vertices):
            raise DanglingVertexReference(f"jump weights given for unknown vertex {v}")

    incidence: list[VertexIncidence] = []
    for v in range(n_vertices):
        deg = len(slots[v])
        if v in jump_weights:
            w = np.asarray(jump_weights[v], dtype=np.float64)
            if w.shape != (deg,):
                raise WeightSimplexViolation(
                    f"vertex {v}: expected {deg} weights (one per incident edge), got {w.shape[0]}"
                )
            if np.any(w < 0.0) or np.any(w > 1.0):
                raise WeightSimplexViolation(f"vertex {v}: weights must lie in [0, 1]")
            total = float(w.sum())
            if abs(total - 1.0) > WEIGHT_SUM_TOLERANCE:
                raise WeightSimplexViolation(
                    f"vertex {v}: weights sum to {total!r}, expected 1"
                )
            w = w / total
        else:
            w = np.full(deg, 1.0 / deg, dtype=np.float64)
        eids = np.array([eid for eid, _ in slots[v]], dtype=np.int64)
        orients = np.array([o for _, o in slots[v]], dtype=np.int8)
        cum = np.cumsum(w)
        incidence.append(
            VertexIncidence(_freeze(eids), _freeze(orients), _freeze(w), _freeze(cum))
        )

    _check_connected(n_vertices, edge_list)

    is_star = (
        n_vertices == 1
        and all(e.is_semi_infinite for e in edge_list)
        and all(e.init == 0 for e in edge_list)
    )

    edge_init = _freeze(np.array([e.init for e in edge_list], dtype=np.int64))
    edge_term = _freeze(np.array([e.term for e in edge_list], dtype=np.int64))
    edge_length = _freeze(np.array([e.length for e in edge_list], dtype=np.float64))

    v_off = np.zeros(n_vertices + 1, dtype=np.int64)
    for v in range(n_vertices):
        v_off[v + 1] = v_off[v] + incidence[v].degree
    v_edges = np.concatenate([inc.edges for inc in incidence])
    v_orient = np.concatenate([inc.orientations for inc in incidence])
    v_cumw = np.concatenate([inc.cum_weights for inc in incidence])

    return MetricGraph(
        edges=tuple(edge_list),
        incidence=tuple(incidence),
        is_star=is_star,
        edge_init=edge_init,
        edge_term=edge_term,
        edge_length=_freeze(edge_length),
        v_off=_freeze(v_off),
        v_edges=_freeze(v_edges.astype(np.int64)),
        v_orient=_freeze(v_orient.astype(np.int8)),
        v_cumw=_freeze(v_cumw.astype(np.float64)),
    )


def _check_connected(n_vertices: int, edge_list: list[Edge]) -> None:
    if n_vertices == 1:
        return
    adjacency: list[list[int]] = [[] for _ in range(n_vertices)]
    for e in edge_list:
        if e.term != INFINITY_VERTEX:
            adjacency[e.init].append(e.term)
            adjacency[e.term].append(e.init)
    seen = np.zeros(n_vertices, dtype=bool)
    stack = [0]
    seen[0] = True
    while stack:
        v = stack.pop()
        for w in adjacency[v]:
            if not seen[w]:
                seen[w] = True
                stack.append(w)
    if not seen.all():
        missing = np.flatnonzero(~seen)
        raise DisconnectedGraph(
            f"graph is not connected over finite vertices (unreachable: {missing.tolist()})"
        )


def sample_exit_edge(graph: MetricGraph, v: VertexId, u: float) -> tuple[EdgeId, int]:
    """Sample the exit slot at vertex ``v`` from a uniform variate ``u``.

    Returns ``(edge_id, orientation)`` for the first incident slot ``j`` with
    ``u <= cum_weights[j]``; falls through to the last slot when rounding in
    the prefix sums leaves ``u`` above the final entry.  Deterministic in
    ``u``.
    """
    if v == INFINITY_VERTEX or v < 0 or v >= graph.n_vertices:
        raise InfinityVertex(f"cannot sample an exit edge at vertex {v}")
    inc = graph.incidence[v]
    cum = inc.cum_weights
    slot = inc.degree - 1
    for j in range(inc.degree):
        if u <= cum[j]:
            slot = j
            break
    return int(inc.edges[slot]), int(inc.orientations[slot])
