"""Network construction, shortest-path distances, interference sets and the
HAC bandwidth rule.

All distances are exact integers; unreachable pairs carry the sentinel
``INF`` so that comparisons like ``dist <= b_n`` never need floating point.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components, shortest_path

INF = np.iinfo(np.int32).max

# Above this average degree the level-synchronous matmul BFS beats the
# per-source C BFS (diameter is small, each level is one n x n product).
_DENSE_BFS_DEGREE = 20.0


def _freeze(arr):
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class NetworkGraph:
    """Undirected, simple network on units 0..n-1.

    Attributes
    ----------
    n : int
        Number of units.
    adjacency : ndarray, shape (n, n), uint8
        Symmetric binary adjacency matrix with zero diagonal.
    degrees : ndarray, shape (n,), int64
        Row sums of the adjacency matrix.
    component_id : ndarray, shape (n,), int64
        Connected-component label of each unit.
    """

    n: int
    adjacency: np.ndarray
    degrees: np.ndarray
    component_id: np.ndarray

    @classmethod
    def from_adjacency(cls, adjacency) -> "NetworkGraph":
        """Validate and wrap an adjacency matrix (symmetrizes nothing)."""
        A = np.asarray(adjacency)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError(f"adjacency must be square, got shape {A.shape}")
        if not np.isin(A, (0, 1)).all():
            raise ValueError("adjacency entries must be 0 or 1")
        if np.any(np.diag(A) != 0):
            raise ValueError("adjacency must have a zero diagonal")
        if not np.array_equal(A, A.T):
            raise ValueError("adjacency must be symmetric")
        A = A.astype(np.uint8)
        degrees = A.sum(axis=1, dtype=np.int64)
        n = A.shape[0]
        _, labels = connected_components(sp.csr_matrix(A), directed=False)
        return cls(
            n=n,
            adjacency=_freeze(A),
            degrees=_freeze(degrees),
            component_id=_freeze(labels.astype(np.int64)),
        )

    def largest_component(self) -> np.ndarray:
        """Units of the largest component; ties go to the component holding
        the lowest unit index."""
        sizes = np.bincount(self.component_id)
        max_size = sizes.max()
        for i in range(self.n):
            if sizes[self.component_id[i]] == max_size:
                label = self.component_id[i]
                break
        return np.flatnonzero(self.component_id == label)


@dataclass(frozen=True)
class DistanceMatrix:
    """All-pairs shortest-path lengths with INF for unreachable pairs."""

    dist: np.ndarray  # (n, n) int32

    @property
    def n(self) -> int:
        return self.dist.shape[0]


@dataclass(frozen=True)
class InterferenceGraph:
    """Per-unit interference sets: units within path distance 1..K."""

    K: int
    sets: list = field(default_factory=list)  # list of int64 arrays

    def pairs(self):
        """All (i, j) pairs with j in the interference set of i, as two
        aligned index arrays."""
        src = np.concatenate(
            [np.full(len(s), i, dtype=np.int64) for i, s in enumerate(self.sets)]
        ) if any(len(s) for s in self.sets) else np.empty(0, dtype=np.int64)
        dst = (
            np.concatenate(self.sets)
            if any(len(s) for s in self.sets)
            else np.empty(0, dtype=np.int64)
        )
        return src, dst


def _erdos_renyi_rng(n: int, p: float, rng: np.random.Generator) -> NetworkGraph:
    # One uniform draw per unordered pair in (i < j) row-major order.
    iu = np.triu_indices(n, k=1)
    u = rng.random(iu[0].shape[0])
    A = np.zeros((n, n), dtype=np.uint8)
    A[iu] = u < p
    A = A + A.T
    return NetworkGraph.from_adjacency(A)


def erdos_renyi(n: int, p: float, seed: int) -> NetworkGraph:
    """Sample a G(n, p) graph, bit-reproducible for fixed arguments.

    Parameters
    ----------
    n : int
        Number of units, at least 2.
    p : float
        Edge probability in [0, 1].
    seed : int
        PRNG seed.
    """
    if n < 2:
        raise ValueError(f"need at least 2 units, got n={n}")
    if not (0.0 <= p <= 1.0):
        raise ValueError(f"edge probability must lie in [0, 1], got {p}")
    return _erdos_renyi_rng(n, p, np.random.default_rng(seed))


def _bfs_by_matmul(A: np.ndarray) -> np.ndarray:
    """Level-synchronous all-pairs BFS; one matmul per distance level.

    Fast when the diameter is small (dense random graphs)."""
    n = A.shape[0]
    Af = A.astype(np.float32)
    dist = np.full((n, n), INF, dtype=np.int32)
    np.fill_diagonal(dist, 0)
    dist[A > 0] = 1
    reached = (A > 0) | np.eye(n, dtype=bool)
    frontier = (A > 0).astype(np.float32)
    level = 1
    while frontier.any() and not reached.all():
        nxt = (frontier @ Af) > 0
        new = nxt & ~reached
        if not new.any():
            break
        level += 1
        dist[new] = level
        reached |= new
        frontier = new.astype(np.float32)
    return dist


def _bfs_by_csgraph(A: np.ndarray) -> np.ndarray:
    D = shortest_path(sp.csr_matrix(A), method="D", unweighted=True, directed=False)
    dist = np.full(D.shape, INF, dtype=np.int32)
    finite = np.isfinite(D)
    dist[finite] = D[finite].astype(np.int32)
    return dist


def bfs_distances(g: NetworkGraph) -> DistanceMatrix:
    """Exact all-pairs shortest-path lengths (INF across components)."""
    if g.degrees.mean() >= _DENSE_BFS_DEGREE:
        dist = _bfs_by_matmul(g.adjacency)
    else:
        dist = _bfs_by_csgraph(g.adjacency)
    return DistanceMatrix(dist=_freeze(dist))


def interference_sets(g: NetworkGraph, d: DistanceMatrix, K: int) -> InterferenceGraph:
    """Units within path distance 1..K of each unit."""
    if K < 1:
        raise ValueError(f"interference radius must be >= 1, got K={K}")
    within = (d.dist >= 1) & (d.dist <= K)
    sets = [np.flatnonzero(within[i]).astype(np.int64) for i in range(g.n)]
    return InterferenceGraph(K=K, sets=sets)


def graph_stats(g: NetworkGraph, d: DistanceMatrix):
    """Average degree and average path length.

    The average path length is the mean shortest-path distance over all
    ordered pairs i != j inside the largest connected component.

    Returns
    -------
    (avg_degree, avg_path_length) : tuple of float
    """
    avg_degree = float(g.adjacency.sum(dtype=np.int64)) / g.n
    comp = g.largest_component()
    if comp.size < 2:
        raise ValueError("largest component has a single unit; average path length undefined")
    sub = d.dist[np.ix_(comp, comp)]
    m = comp.size
    total = sub.sum(dtype=np.int64)  # diagonal contributes 0
    avg_path_length = float(total) / (m * (m - 1))
    return avg_degree, avg_path_length


def hac_bandwidth(n: int, avg_degree: float, avg_path_length: float) -> int:
    """HAC truncation distance from network size, density and path length.

    Uses L/4 when the average path length L is below the density threshold
    2**(log n / log avg_degree), and L**(1/4) otherwise, rounded up.
    """
    if avg_degree <= 1.0:
        raise ValueError(
            f"bandwidth rule needs average degree > 1, got {avg_degree}"
        )
    if not np.isfinite(avg_path_length):
        raise ValueError("average path length must be finite")
    threshold = 2.0 ** (np.log(n) / np.log(avg_degree))
    if avg_path_length < threshold:
        b = avg_path_length / 4.0
    else:
        b = avg_path_length ** 0.25
    return int(np.ceil(b))
