"""Top-k neighborhood selection on the correlation matrix.

Every node keeps itself plus its ``k`` strongest outgoing edges. Kept edges
are re-weighted with scale parameters recomputed over the kept neighbors
only; the 0/1 indicator of the same pattern is the attention mask.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError
from .graph_builder import CorrelationMatrix, _floor, _pairwise, _row_means, correlation_matrix, joint_affinity


@dataclass
class SparseGraph:
    nodes: object  # NodeSet
    k: int
    gamma: float
    neighbor_lists: list  # N_i as int arrays, self first, then by descending weight
    weights_prime: np.ndarray
    binary_mask: np.ndarray

    @property
    def n(self):
        return self.nodes.n

    @property
    def adjacency(self):
        # the adjacency carries the re-weighted values on the kept pattern
        return self.weights_prime

    @property
    def features(self):
        return self.nodes.features

    @property
    def mask(self):
        return self.binary_mask.astype(bool)

    def density(self):
        return self.binary_mask.sum(axis=1) / self.n

    def permuted(self, perm):
        """Relabel so that new node ``a`` is old node ``perm[a]``."""
        perm = np.asarray(perm)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        lists = [inv[self.neighbor_lists[p]] for p in perm]
        return SparseGraph(
            self.nodes.permuted(perm), self.k, self.gamma, lists,
            self.weights_prime[np.ix_(perm, perm)], self.binary_mask[np.ix_(perm, perm)],
        )


def rank_edges(row, self_index):
    """Indices other than ``self_index`` by descending weight, ties by ascending index."""
    row = np.asarray(row, dtype=np.float64)
    order = np.argsort(-row, kind="stable")
    return order[order != self_index]


def select_neighbors(W, k):
    weights = W.weights if isinstance(W, CorrelationMatrix) else np.asarray(W, dtype=np.float64)
    n = weights.shape[0]
    if not 1 <= k <= n - 1:
        raise ConfigError(f"k must be in [1, {n - 1}] for {n} nodes, got {k}")
    return [np.concatenate(([i], rank_edges(weights[i], i)[:k])) for i in range(n)]


def neighborhood_scales(nodes, neighbor_lists):
    """Mean spatial and intensity distance from each node to its kept neighbors (self excluded)."""
    sq_dist, fdiff = _pairwise(nodes)
    others = [nb[nb != i] for i, nb in enumerate(neighbor_lists)]
    return _floor(_row_means(np.sqrt(sq_dist), others)), _floor(_row_means(fdiff, others))


def reweight(nodes, neighbor_lists, gamma):
    n = nodes.n
    sq_dist, fdiff = _pairwise(nodes)
    dx, df = neighborhood_scales(nodes, neighbor_lists)
    Wp = np.zeros((n, n))
    for i, nb in enumerate(neighbor_lists):
        Wp[i, nb] = joint_affinity(sq_dist[i, nb], fdiff[i, nb], dx[i], df[i], gamma)
    return Wp


def binary_mask(neighbor_lists, n=None):
    n = len(neighbor_lists) if n is None else n
    mask = np.zeros((n, n))
    for i, nb in enumerate(neighbor_lists):
        mask[i, nb] = 1.0
    return mask


def sparsify(nodes, gamma=0.5, k=8, W=None):
    """Full pipeline from a node set to a :class:`SparseGraph`."""
    if W is None:
        W = correlation_matrix(nodes, gamma)
    lists = select_neighbors(W, k)
    return SparseGraph(nodes, int(k), float(gamma), lists,
                       reweight(nodes, lists, gamma), binary_mask(lists, nodes.n))
