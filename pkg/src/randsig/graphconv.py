"""Graph conversion: spectral edge embedding of dissimilarity matrices,
node-feature stacking, and sentinel handling for missing edges.

The embedding is classical multidimensional scaling: center the
dissimilarity matrix into a scoring matrix S = -1/2 Q D Q, eigendecompose,
and keep the top-m components as per-node coordinates E = V_m sqrt(L_m).
Indefinite scoring matrices are repaired by an off-diagonal shift of D
before re-embedding.
"""

from dataclasses import dataclass, field

import numpy as np

from .numkernel import symmetric_eig

NO_EDGE = np.inf


@dataclass
class Graph:
    """Undirected weighted graph with optional node features.

    adjacency: (n, n), symmetric, zero diagonal, NO_EDGE marks missing edges.
    node_features: (d, n); d may be 0.
    """

    adjacency: np.ndarray
    node_features: np.ndarray = None

    def __post_init__(self):
        self.adjacency = np.asarray(self.adjacency, dtype=np.float64)
        n = self.adjacency.shape[0]
        if self.adjacency.ndim != 2 or self.adjacency.shape != (n, n) or n < 1:
            raise ValueError(f"adjacency must be square and non-empty, got {self.adjacency.shape}")
        if self.node_features is None:
            self.node_features = np.zeros((0, n))
        self.node_features = np.asarray(self.node_features, dtype=np.float64)
        if self.node_features.shape[1] != n:
            raise ValueError("node_features column count must equal node count")
        finite = np.isfinite(self.adjacency)
        asym = self.adjacency != self.adjacency.T
        if np.any(asym & finite & finite.T):
            raise ValueError("adjacency not symmetric over finite entries")
        if np.any(finite != finite.T):
            raise ValueError("NO_EDGE sentinel pattern not symmetric")
        if np.any(np.diag(self.adjacency) != 0.0):
            raise ValueError("adjacency diagonal must be zero")

    @property
    def n(self):
        return self.adjacency.shape[0]

    @property
    def feature_dim(self):
        return self.node_features.shape[0]


@dataclass
class EdgeEmbedding:
    """Per-node spectral coordinates: e is (n, m), columns ordered by
    decreasing eigenvalue; shift_applied is 0 when no repair was needed."""

    e: np.ndarray
    eigvals_used: list
    shift_applied: float = 0.0

    @property
    def m(self):
        return self.e.shape[1]


def centering_matrix(n: int) -> np.ndarray:
    """Q = I - (1/n) * ones: symmetric, idempotent, zero row sums."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return np.eye(n) - np.full((n, n), 1.0 / n)


def _check_symmetric(d):
    d = np.asarray(d, dtype=np.float64)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise ValueError(f"expected a square matrix, got {d.shape}")
    scale = max(1.0, np.max(np.abs(d)))
    if np.max(np.abs(d - d.T)) > 1e-10 * scale:
        raise ValueError("matrix is not symmetric")
    return (d + d.T) / 2.0


def diagonal_shift(d: np.ndarray, lambda_min: float) -> np.ndarray:
    """Off-diagonal shift D - 2*lambda_min*(ones - I); diagonal unchanged.

    With lambda_min the smallest eigenvalue of the centered scoring matrix,
    the recentered result is positive semidefinite.
    """
    d = _check_symmetric(d)
    n = d.shape[0]
    return d - 2.0 * lambda_min * (np.ones((n, n)) - np.eye(n))


def edge_embedding(d: np.ndarray, m: int, tol: float = None) -> EdgeEmbedding:
    """Classical-MDS embedding of a dissimilarity matrix into m coordinates.

    Computes S = -1/2 Q D Q and eigendecomposes it. If the smallest
    eigenvalue falls below -tol (default tol = 1e-10 * ||S||_F), the
    off-diagonal shift is applied to D and S is recomputed, which moves
    the spectrum to be non-negative. Residual negative eigenvalues within
    tolerance are clamped to 0 before the square root.
    """
    d = _check_symmetric(d)
    n = d.shape[0]
    if not 0 < m < n:
        raise ValueError(f"embedding dimension must satisfy 0 < m < n, got m={m}, n={n}")

    q = centering_matrix(n)
    s = -0.5 * (q @ d @ q)
    s = (s + s.T) / 2.0
    if tol is None:
        tol = 1e-10 * max(np.linalg.norm(s), 1.0)
    vals, vecs = symmetric_eig(s, tol=max(tol, 1e-8))
    shift = 0.0
    if vals[-1] < -tol:
        shift = vals[-1]
        d = diagonal_shift(d, shift)
        s = -0.5 * (q @ d @ q)
        s = (s + s.T) / 2.0
        vals, vecs = symmetric_eig(s, tol=max(tol, 1e-8))
    top = np.clip(np.asarray(vals[:m]), 0.0, None)
    e = vecs[:, :m] * np.sqrt(top)[None, :]
    return EdgeEmbedding(e=e, eigvals_used=[float(v) for v in vals[:m]], shift_applied=shift)


def sanitize_adjacency(g: Graph, cap: float) -> np.ndarray:
    """Replace NO_EDGE sentinels with a finite cap larger than every weight."""
    adj = g.adjacency
    finite = np.isfinite(adj)
    max_w = np.max(adj[finite]) if np.any(finite) else 0.0
    if not cap > max_w:
        raise ValueError(f"cap {cap} must exceed the largest edge weight {max_w}")
    out = adj.copy()
    out[~finite] = cap
    np.fill_diagonal(out, 0.0)
    return out


def stack_inputs(g: Graph, e: EdgeEmbedding = None, mode: str = "both") -> np.ndarray:
    """Stack node features and/or transposed edge embedding into one matrix.

    Row order: feature dimensions first, then embedding dimensions; columns
    follow the graph's node order. Output is (d+m) x n, d x n, or m x n
    depending on mode ("both", "nodes-only", "edges-only").
    """
    if mode not in ("nodes-only", "edges-only", "both"):
        raise ValueError(f"unknown mode: {mode}")
    blocks = []
    if mode in ("nodes-only", "both"):
        if g.feature_dim == 0:
            raise ValueError(f"mode '{mode}' needs node features but d=0")
        if not np.all(np.isfinite(g.node_features)):
            raise ValueError("node features contain non-finite values")
        blocks.append(g.node_features)
    if mode in ("edges-only", "both"):
        if e is None:
            raise ValueError(f"mode '{mode}' needs an edge embedding")
        if e.e.shape[0] != g.n:
            raise ValueError("embedding node count does not match graph")
        blocks.append(e.e.T)
    return np.vstack(blocks)
