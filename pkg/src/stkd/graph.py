"""Road-network graphs and the normalized message-passing operator."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components as _cc

from .errors import DataError, DimensionError, FormatError, ParameterError
from .tensor import Tensor, record_op

_GRAPH_SEED_TAG = 0x67


@dataclass(frozen=True)
class Graph:
    """Undirected weighted graph; the edge list carries both directions."""

    n_nodes: int
    edges: tuple[tuple[int, int, float], ...]  # mirrored: (i,j,w) and (j,i,w)
    undirected: bool = True

    @staticmethod
    def from_edge_list(n_nodes: int, raw_edges) -> "Graph":
        """Build from (src, dst, weight) triples; mirrors each edge.

        Duplicate mentions of the same pair must agree on the weight.
        """
        if n_nodes < 1:
            raise ParameterError(f"n_nodes must be >= 1, got {n_nodes}")
        seen: dict[tuple[int, int], float] = {}
        for src, dst, w in raw_edges:
            src, dst, w = int(src), int(dst), float(w)
            if not (0 <= src < n_nodes and 0 <= dst < n_nodes):
                raise DataError(f"edge ({src},{dst}) outside [0,{n_nodes})")
            if src == dst:
                raise DataError(f"self-loop on node {src}; self-loops are implicit")
            if not math.isfinite(w) or w < 0.0:
                raise DataError(f"edge ({src},{dst}) has invalid weight {w}")
            key = (min(src, dst), max(src, dst))
            if key in seen and seen[key] != w:
                raise DataError(f"conflicting weights for edge {key}: {seen[key]} vs {w}")
            seen[key] = w
        mirrored = []
        for (i, j), w in sorted(seen.items()):
            mirrored.append((i, j, w))
            mirrored.append((j, i, w))
        return Graph(n_nodes=n_nodes, edges=tuple(mirrored))

    def undirected_edges(self) -> list[tuple[int, int, float]]:
        """One entry per undirected edge, src < dst."""
        return [(i, j, w) for (i, j, w) in self.edges if i < j]


@dataclass(frozen=True)
class NormalizedAdjacency:
    """CSR form of D^{-1/2} (A + I) D^{-1/2}; symmetric by construction."""

    n: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray
    _csr: sp.csr_matrix = field(repr=False, compare=False, default=None)

    def to_dense(self) -> np.ndarray:
        return self._csr.toarray()


def symmetric_normalize(g: Graph) -> NormalizedAdjacency:
    """Self-loop renormalized operator; degrees taken from A + I."""
    n = g.n_nodes
    rows, cols, vals = [], [], []
    for i, j, w in g.edges:
        if w < 0.0:
            raise DataError(f"negative edge weight {w} on ({i},{j})")
        rows.append(i)
        cols.append(j)
        vals.append(w)
    rows.extend(range(n))
    cols.extend(range(n))
    vals.extend([1.0] * n)
    a_plus_i = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    deg = np.asarray(a_plus_i.sum(axis=1)).reshape(-1)
    dinv_sqrt = 1.0 / np.sqrt(deg)
    coo = a_plus_i.tocoo()
    # per-entry d_i^-1/2 * w * d_j^-1/2 keeps the matrix bitwise symmetric
    norm_vals = dinv_sqrt[coo.row] * coo.data * dinv_sqrt[coo.col]
    csr = sp.csr_matrix((norm_vals, (coo.row, coo.col)), shape=(n, n))
    csr.sort_indices()
    return NormalizedAdjacency(
        n=n,
        row_offsets=csr.indptr.copy(),
        col_indices=csr.indices.copy(),
        values=csr.data.copy(),
        _csr=csr,
    )


def spmm(adj: NormalizedAdjacency, x: Tensor) -> Tensor:
    """Sparse A_hat @ X over node rows; tape-aware (gradient is A_hat @ G)."""
    if x.rank != 2 or x.shape[0] != adj.n:
        raise DimensionError(f"spmm: expected [{adj.n} x f] input, got {x.shape}")
    out = Tensor(adj._csr @ x.data)
    return record_op(out, (x,), lambda g: (adj._csr @ g,))


def erdos_renyi_geometric(n: int, radius: float, seed: int) -> Graph:
    """Random geometric graph in the unit square.

    Nodes joined when closer than ``radius``; weight exp(-d^2/sigma^2) with
    sigma = radius / 2. Deterministic per seed.
    """
    if n < 2:
        raise ParameterError(f"need n >= 2 nodes, got {n}")
    if not (0.0 < radius <= 1.0):
        raise ParameterError(f"radius must be in (0, 1], got {radius}")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, _GRAPH_SEED_TAG])))
    pts = rng.random((n, 2))
    sigma = radius / 2.0
    edges = []
    for i in range(n):
        d2 = np.sum((pts[i + 1:] - pts[i]) ** 2, axis=1)
        for off in np.nonzero(d2 < radius * radius)[0]:
            j = i + 1 + int(off)
            edges.append((i, j, float(np.exp(-d2[off] / (sigma * sigma)))))
    return Graph.from_edge_list(n, edges)


def connected_component_count(g: Graph) -> int:
    if not g.edges:
        return g.n_nodes
    i, j, w = zip(*g.edges)
    m = sp.coo_matrix((w, (i, j)), shape=(g.n_nodes, g.n_nodes))
    count, _ = _cc(m, directed=False)
    return int(count)


def save_edge_csv(g: Graph, path) -> None:
    """Edge-list CSV ``src,dst,weight``, one undirected edge per line."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["src", "dst", "weight"])
        for i, j, wt in g.undirected_edges():
            w.writerow([i, j, repr(float(wt))])


def load_edge_csv(path, n_nodes: int | None = None) -> Graph:
    """Read an edge list; any node ids allowed, node count inferred if absent."""
    triples = []
    max_id = -1
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["src", "dst", "weight"]:
            raise FormatError(f"{path}: expected header 'src,dst,weight', got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise FormatError(f"{path}: line {lineno}: expected 3 fields, got {len(row)}")
            try:
                src, dst, wt = int(row[0]), int(row[1]), float(row[2])
            except ValueError as exc:
                raise FormatError(f"{path}: line {lineno}: {exc}") from exc
            triples.append((src, dst, wt))
            max_id = max(max_id, src, dst)
    if n_nodes is None:
        n_nodes = max_id + 1
    return Graph.from_edge_list(n_nodes, triples)
