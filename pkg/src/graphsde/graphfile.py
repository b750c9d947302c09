"""The versioned, line-oriented text format for graphs and coefficients.

A graph file is a sequence of directives, one per line; ``#`` starts a
comment and blank lines are ignored.  The first directive must be the header
``metric-graph v1``.

::

    metric-graph v1
    vertex 0 hub            # id, optional label
    vertex 1
    edge 0 0 1 2.5          # id, init, term, length
    edge 1 0 inf inf        # semi-infinite: term and length are 'inf'
    weights 0 0.25 0.75     # per-vertex jump weights, in incident-edge-id order
    drift 0 constant -10
    drift 1 linear -30      # mu(x) = -30 x
    sigma 0 1.0             # defaults to 1.0
    sigma 1 1.0

Drift forms: ``constant c`` | ``linear c`` | ``tabulated x0:mu0 x1:mu1 ...``
| ``from_flux Q A`` (constant drift ``Q/A``, the centerline velocity of a
precomputed per-edge volume flux through a cross-sectional area).  Edges
without a drift directive default to ``constant 0``; vertices without a
``weights`` directive get uniform jump weights.

Vertex and edge ids must be dense (0..n-1); weights lists are parallel to
the vertex's incident edges in increasing edge-id order.  All failures --
syntactic or structural -- surface as :class:`ParseError` carrying the
offending line number where one is known.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .coefficients import (
    CoefficientError,
    CoefficientField,
    ConstantDiffusion,
    ConstantDrift,
    LinearDrift,
    NonPositiveArea,
    TabulatedDrift,
    drift_from_flux,
)
from .graph import INFINITY_VERTEX, GraphBuildError, MetricGraph, build_graph

HEADER = "metric-graph v1"


class ParseError(ValueError):
    """A graph-file failure addressed to a line (0 = whole file)."""

    def __init__(self, line: int, message: str):
        self.line = line
        self.message = message
        super().__init__(f"line {line}: {message}" if line else message)


def _fmt(x: float) -> str:
    if math.isinf(x):
        return "inf"
    return repr(float(x))


def parse_graph_file(text: str) -> tuple[MetricGraph, CoefficientField]:
    """Parse a graph document into a validated graph and coefficient field."""
    vertices: dict[int, tuple[int, str | None]] = {}
    edge_records: dict[int, tuple[int, int, int, float]] = {}
    weight_records: dict[int, tuple[int, list[float]]] = {}
    drift_records: dict[int, tuple[int, object]] = {}
    sigma_records: dict[int, tuple[int, float]] = {}
    saw_header = False

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if not saw_header:
            if line != HEADER:
                raise ParseError(lineno, f"expected header {HEADER!r}, got {line!r}")
            saw_header = True
            continue
        parts = line.split()
        directive = parts[0]
        try:
            if directive == "vertex":
                vid = _parse_id(parts[1], "vertex id")
                if vid in vertices:
                    raise ValueError(f"vertex {vid} declared twice")
                label = parts[2] if len(parts) > 2 else None
                vertices[vid] = (lineno, label)
            elif directive == "edge":
                if len(parts) != 5:
                    raise ValueError("edge needs: edge <id> <init> <term> <length>")
                eid = _parse_id(parts[1], "edge id")
                if eid in edge_records:
                    raise ValueError(f"edge {eid} declared twice")
                init = _parse_id(parts[2], "init vertex")
                term = (
                    INFINITY_VERTEX
                    if parts[3] == "inf"
                    else _parse_id(parts[3], "term vertex")
                )
                length = math.inf if parts[4] == "inf" else float(parts[4])
                edge_records[eid] = (lineno, init, term, length)
            elif directive == "weights":
                if parts[1] == "inf":
                    raise ValueError(
                        "jump weights cannot be attached to the vertex at infinity"
                    )
                vid = _parse_id(parts[1], "vertex id")
                if vid in weight_records:
                    raise ValueError(f"weights for vertex {vid} declared twice")
                ws = [float(w) for w in parts[2:]]
                if not ws:
                    raise ValueError("weights needs at least one value")
                weight_records[vid] = (lineno, ws)
            elif directive == "drift":
                eid = _parse_id(parts[1], "edge id")
                if eid in drift_records:
                    raise ValueError(f"drift for edge {eid} declared twice")
                drift_records[eid] = (lineno, _parse_drift(parts[2:]))
            elif directive == "sigma":
                if len(parts) != 3:
                    raise ValueError("sigma needs: sigma <edge> <value>")
                eid = _parse_id(parts[1], "edge id")
                if eid in sigma_records:
                    raise ValueError(f"sigma for edge {eid} declared twice")
                sigma_records[eid] = (lineno, float(parts[2]))
            else:
                raise ValueError(f"unknown directive {directive!r}")
        except ParseError:
            raise
        except (ValueError, IndexError, CoefficientError) as err:
            raise ParseError(lineno, f"{type(err).__name__}: {err}") from err

    if not saw_header:
        raise ParseError(0, f"missing header {HEADER!r}")
    if not edge_records:
        raise ParseError(0, "no edges declared")

    m = len(edge_records)
    if sorted(edge_records) != list(range(m)):
        raise ParseError(0, f"edge ids must be dense 0..{m - 1}, got {sorted(edge_records)}")
    if vertices and sorted(vertices) != list(range(len(vertices))):
        raise ParseError(0, "vertex ids must be dense 0..n-1")

    for eid in range(m):
        lineno, init, term, length = edge_records[eid]
        for v, role in ((init, "init"), (term, "term")):
            if v != INFINITY_VERTEX and vertices and v not in vertices:
                raise ParseError(lineno, f"edge {eid} references undeclared {role} vertex {v}")

    edges = [(edge_records[e][1], edge_records[e][2], edge_records[e][3]) for e in range(m)]
    weights = {v: ws for v, (_, ws) in weight_records.items()}
    try:
        graph = build_graph(edges, weights)
    except GraphBuildError as err:
        raise ParseError(0, f"{type(err).__name__}: {err}") from err

    if vertices and len(vertices) != graph.n_vertices:
        raise ParseError(0, f"{len(vertices)} vertices declared, edges reference {graph.n_vertices}")
    for v, (lineno, _) in weight_records.items():
        if v >= graph.n_vertices:
            raise ParseError(lineno, f"weights reference unknown vertex {v}")

    drift = []
    sigma = []
    for e in range(m):
        lineno, spec = drift_records.get(e, (0, ConstantDrift(0.0)))
        if isinstance(spec, _FromFlux):
            try:
                spec = drift_from_flux([spec.Q], [spec.A])[0]
            except NonPositiveArea as err:
                raise ParseError(lineno, f"NonPositiveArea: {err}") from err
        drift.append(spec)
        sigma.append(sigma_records.get(e, (0, 1.0))[1])
    try:
        field = CoefficientField.for_graph(graph, drift, sigma)
    except CoefficientError as err:
        raise ParseError(0, f"{type(err).__name__}: {err}") from err
    return graph, field


@dataclass(frozen=True)
class _FromFlux:
    Q: float
    A: float


def _parse_id(token: str, what: str) -> int:
    try:
        value = int(token)
    except ValueError:
        raise ValueError(f"invalid {what} {token!r}")
    if value < 0:
        raise ValueError(f"invalid {what} {token!r}")
    return value


def _parse_drift(parts: list[str]):
    if not parts:
        raise ValueError("drift needs a form: constant | linear | tabulated | from_flux")
    form = parts[0]
    if form == "constant":
        if len(parts) != 2:
            raise ValueError("drift constant needs one value")
        return ConstantDrift(float(parts[1]))
    if form == "linear":
        if len(parts) != 2:
            raise ValueError("drift linear needs one value")
        return LinearDrift(float(parts[1]))
    if form == "tabulated":
        if len(parts) < 2:
            raise ValueError("drift tabulated needs x:mu samples")
        xs = []
        mus = []
        for token in parts[1:]:
            if ":" not in token:
                raise ValueError(f"tabulated sample {token!r} must look like x:mu")
            xs_, mu_ = token.split(":", 1)
            xs.append(float(xs_))
            mus.append(float(mu_))
        return TabulatedDrift(tuple(xs), tuple(mus))
    if form == "from_flux":
        if len(parts) != 3:
            raise ValueError("drift from_flux needs Q and A")
        Q, A = float(parts[1]), float(parts[2])
        if not A > 0.0:
            raise NonPositiveArea(f"cross-sectional area must be positive, got {A!r}")
        return _FromFlux(Q, A)
    raise ValueError(f"unknown drift form {form!r}")


def serialize_graph_file(
    graph: MetricGraph,
    field: CoefficientField,
    labels: dict[int, str] | None = None,
) -> str:
    """Render a graph and field back into the text format (round-trips)."""
    labels = labels or {}
    lines = [HEADER]
    for v in graph.finite_vertices():
        label = f" {labels[v]}" if v in labels else ""
        lines.append(f"vertex {v}{label}")
    for e, edge in enumerate(graph.edges):
        term = "inf" if edge.term == INFINITY_VERTEX else str(edge.term)
        lines.append(f"edge {e} {edge.init} {term} {_fmt(edge.length)}")
    for v in graph.finite_vertices():
        ws = " ".join(_fmt(w) for w in graph.incidence[v].jump_weights)
        lines.append(f"weights {v} {ws}")
    for e, spec in enumerate(field.drift):
        if isinstance(spec, ConstantDrift):
            lines.append(f"drift {e} constant {_fmt(spec.c)}")
        elif isinstance(spec, LinearDrift):
            lines.append(f"drift {e} linear {_fmt(spec.c)}")
        else:
            samples = " ".join(f"{_fmt(x)}:{_fmt(mu)}" for x, mu in zip(spec.xs, spec.mus))
            lines.append(f"drift {e} tabulated {samples}")
    for e, diff in enumerate(field.diffusion):
        lines.append(f"sigma {e} {_fmt(diff.sigma)}")
    return "\n".join(lines) + "\n"


def network_tables_to_graph_file(nodes, segments) -> str:
    """Convert simple network tables into the graph-file format.

    This documents how an external vascular-network export maps onto the
    format: ``nodes`` is an iterable of ``(id, x, y, z)`` coordinate rows and
    ``segments`` an iterable of ``(id, node_a, node_b, radius, flux)`` rows.
    Edge length is the Euclidean node distance, the cross-sectional area is
    ``pi r^2``, and the drift becomes ``from_flux <flux> <area>`` (the
    centerline velocity, signed init -> term).  Jump weights are left to the
    uniform default; adjust the emitted ``weights`` lines for anything
    cross-section-weighted.
    """
    coords = {}
    for nid, x, y, z in nodes:
        coords[int(nid)] = (float(x), float(y), float(z))
    lines = [HEADER]
    for nid in sorted(coords):
        lines.append(f"vertex {nid}")
    drift_lines = []
    for sid, a, b, radius, flux in segments:
        sid, a, b = int(sid), int(a), int(b)
        pa, pb = coords[a], coords[b]
        length = math.dist(pa, pb)
        area = math.pi * float(radius) ** 2
        lines.append(f"edge {sid} {a} {b} {_fmt(length)}")
        drift_lines.append(f"drift {sid} from_flux {_fmt(float(flux))} {_fmt(area)}")
    lines.extend(drift_lines)
    return "\n".join(lines) + "\n"
