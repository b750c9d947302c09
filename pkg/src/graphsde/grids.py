"""Per-edge uniform grids shared by the histogram and finite-volume paths.

Using one grid type for both estimators guarantees that densities emitted by
the Monte Carlo histogram and the Fokker-Planck baseline live on identical
(edge, bin) geometry, which is what makes their error comparison meaningful.
Semi-infinite edges are represented by a finite truncation length.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .graph import MetricGraph


@dataclass(frozen=True)
class EdgeGrid:
    """Uniform cells per edge: ``counts[e]`` cells of width ``lengths[e]/counts[e]``."""

    counts: np.ndarray   # int64 cells per edge
    lengths: np.ndarray  # float64 finite domain length per edge

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        lengths = np.asarray(self.lengths, dtype=np.float64)
        if counts.shape != lengths.shape or counts.ndim != 1:
            raise ValueError("counts and lengths must be 1-d arrays of equal length")
        if np.any(counts < 1):
            raise ValueError("every edge needs at least one cell")
        if not np.all(np.isfinite(lengths)) or np.any(lengths <= 0.0):
            raise ValueError("grid lengths must be finite and positive")
        counts.setflags(write=False)
        lengths.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "lengths", lengths)

    @classmethod
    def uniform(
        cls,
        graph: MetricGraph,
        cells_per_edge: int,
        lengths=None,
    ) -> "EdgeGrid":
        """Same cell count on every edge; ``lengths`` defaults to the graph's
        edge lengths and must be supplied when any edge is semi-infinite."""
        if lengths is None:
            lengths = graph.edge_length
            if np.isinf(lengths).any():
                raise ValueError(
                    "graph has semi-infinite edges; supply truncation lengths"
                )
        lengths = np.asarray(lengths, dtype=np.float64)
        counts = np.full(graph.n_edges, int(cells_per_edge), dtype=np.int64)
        return cls(counts=counts, lengths=lengths)

    @property
    def n_edges(self) -> int:
        return int(self.counts.shape[0])

    @property
    def n_cells(self) -> int:
        return int(self.counts.sum())

    @property
    def dx(self) -> np.ndarray:
        return self.lengths / self.counts

    @property
    def offsets(self) -> np.ndarray:
        off = np.zeros(self.n_edges + 1, dtype=np.int64)
        np.cumsum(self.counts, out=off[1:])
        return off

    def edge_slice(self, e: int) -> slice:
        off = self.offsets
        return slice(int(off[e]), int(off[e + 1]))

    def centers(self, e: int) -> np.ndarray:
        w = self.dx[e]
        return (np.arange(self.counts[e]) + 0.5) * w

    def cell_left(self, e: int) -> np.ndarray:
        return np.arange(self.counts[e]) * self.dx[e]

    def cell_widths(self) -> np.ndarray:
        """Flat per-cell widths, aligned with flat density arrays."""
        return np.repeat(self.dx, self.counts)

    def cell_edge_ids(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_edges, dtype=np.int64), self.counts)

    def same_geometry(self, other: "EdgeGrid", tol: float = 0.0) -> bool:
        if self.counts.shape != other.counts.shape:
            return False
        if not np.array_equal(self.counts, other.counts):
            return False
        if tol == 0.0:
            return bool(np.array_equal(self.lengths, other.lengths))
        return bool(np.allclose(self.lengths, other.lengths, rtol=tol, atol=0.0))
