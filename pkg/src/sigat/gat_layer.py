"""Graph attention layer restricted to the KNN neighborhood.

For every head, node features are projected by ``Q`` (F' x F); the logit of
edge (i, j) is ``LeakyReLU(a . [Q h_i || Q h_j])``; coefficients are a
softmax of the logits over ``N_i`` only, and the new feature of node ``i`` is
``sigma(sum_j alpha_ij Q h_j)``. Heads are concatenated (hidden layers) or
averaged before the activation (last layer).
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .exceptions import ConfigError, ShapeError

ACTIVATIONS = {
    "elu": ad.elu,
    "relu": ad.relu,
    "identity": lambda x: x,
}


@dataclass(frozen=True)
class LayerConfig:
    in_dim: int
    out_dim: int
    heads: int = 8
    head_combine: str = "concat"
    leaky_slope: float = 0.2
    activation: str = "elu"

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise ConfigError(f"layer dims must be positive, got {self.in_dim} -> {self.out_dim}")
        if self.heads < 1:
            raise ConfigError(f"heads must be >= 1, got {self.heads}")
        if self.head_combine not in ("concat", "average"):
            raise ConfigError(f"head_combine must be 'concat' or 'average', got {self.head_combine!r}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")

    @property
    def output_dim(self):
        return self.heads * self.out_dim if self.head_combine == "concat" else self.out_dim

    @property
    def n_params(self):
        return self.heads * (self.out_dim * self.in_dim + 2 * self.out_dim)


@dataclass
class AttentionHead:
    Q: np.ndarray  # (F', F)
    a: np.ndarray  # (2F',)

    def __post_init__(self):
        self.Q = np.asarray(self.Q, dtype=np.float64)
        self.a = np.asarray(self.a, dtype=np.float64).reshape(-1)
        if self.Q.ndim != 2 or self.a.shape != (2 * self.Q.shape[0],):
            raise ShapeError(f"head shapes inconsistent: Q {self.Q.shape}, a {self.a.shape}")


class GATLayer:
    """Parameters of one multi-head layer, stored stacked over heads."""

    def __init__(self, config, Q=None, a=None, rng=None):
        self.config = config
        H, Fp, F = config.heads, config.out_dim, config.in_dim
        if Q is None or a is None:
            rng = np.random.default_rng() if rng is None else rng
            s_q = np.sqrt(6.0 / (F + Fp))
            s_a = np.sqrt(6.0 / (2 * Fp + 1))
            Q = rng.uniform(-s_q, s_q, size=(H, Fp, F))
            a = rng.uniform(-s_a, s_a, size=(H, 2 * Fp))
        self.Q = np.asarray(Q, dtype=np.float64)
        self.a = np.asarray(a, dtype=np.float64)
        if self.Q.shape != (H, Fp, F) or self.a.shape != (H, 2 * Fp):
            raise ShapeError(f"layer parameters {self.Q.shape}, {self.a.shape} do not match config {config}")

    @property
    def heads(self):
        return [AttentionHead(self.Q[h], self.a[h]) for h in range(self.config.heads)]

    @classmethod
    def from_heads(cls, config, heads):
        shapes = {(hd.Q.shape, hd.a.shape) for hd in heads}
        if len(shapes) != 1:
            raise ConfigError(f"heads have mixed shapes: {sorted(shapes)}")
        if len(heads) != config.heads:
            raise ConfigError(f"config expects {config.heads} heads, got {len(heads)}")
        return cls(config, np.stack([hd.Q for hd in heads]), np.stack([hd.a for hd in heads]))


def neighbor_table(graph):
    """(M, m) neighbor indices plus a validity mask, from a graph or boolean mask.

    Rows shorter than the longest neighborhood are padded with distinct
    non-neighbor columns flagged invalid, so every row has unique indices.
    """
    lists = _neighbor_lists(graph)
    n = len(lists)
    width = max(len(nb) for nb in lists)
    index = np.empty((n, width), dtype=int)
    valid = np.zeros((n, width), dtype=bool)
    for i, nb in enumerate(lists):
        nb = np.asarray(nb, dtype=int)
        if len(nb) == 0:
            raise ShapeError(f"node {i} has an empty neighborhood")
        pad = np.setdiff1d(np.arange(n), nb)[: width - len(nb)]
        index[i] = np.concatenate([nb, pad])
        valid[i, : len(nb)] = True
    return index, valid


def layer_forward(h, Q, a, neighbors, config):
    """Tape forward of a multi-head layer.

    ``h`` is (M, F), ``Q`` (H, F', F), ``a`` (H, 2F') and ``neighbors`` the
    ``(index, valid)`` pair from :func:`neighbor_table`. Logits exist only
    for listed neighbors; the softmax runs over the valid ones and the
    coefficients are scattered into a dense (H, M, M) matrix that is zero
    off the neighborhood.
    """
    if h.shape[-1] != config.in_dim:
        raise ShapeError(f"layer expects {config.in_dim} input features, got {h.shape[-1]}")
    index, valid = neighbors
    H, Fp = config.heads, config.out_dim
    M = h.shape[0]
    z = ad.matmul(h, ad.transpose(Q, (0, 2, 1)))  # (H, M, F')
    a_src = ad.reshape(ad.gather_rows(a, np.arange(Fp), axis=-1), (H, Fp, 1))
    a_dst = ad.reshape(ad.gather_rows(a, np.arange(Fp, 2 * Fp), axis=-1), (H, Fp, 1))
    s = ad.matmul(z, a_src)  # (H, M, 1): a_src . Q h_i
    t = ad.reshape(ad.matmul(z, a_dst), (H, M))  # a_dst . Q h_j
    t_nb = ad.gather_rows(t, index, axis=-1)  # (H, M, m)
    logits = ad.leaky_relu(ad.add(s, t_nb), config.leaky_slope)
    alpha = ad.softmax_over_index_set(logits, np.broadcast_to(valid, logits.shape))
    dense = ad.scatter_rows(alpha, index, M)  # (H, M, M)
    agg = ad.matmul(dense, z)  # (H, M, F')
    sigma = ACTIVATIONS[config.activation]
    if config.head_combine == "concat":
        out = sigma(agg)
        return ad.reshape(ad.transpose(out, (1, 0, 2)), (M, H * Fp))
    return sigma(ad.mean(agg, axis=0))


def layer_attention(h, layer, graph):
    """Dense (H, M, M) attention coefficients of ``layer`` for features ``h``."""
    cfg = layer.config
    tape = ad.Tape()
    index, valid = neighbor_table(graph)
    z = np.asarray(h, dtype=np.float64) @ np.transpose(layer.Q, (0, 2, 1))
    s = z @ layer.a[:, : cfg.out_dim, None]
    t = (z @ layer.a[:, cfg.out_dim:, None])[..., 0]
    raw = s + t[:, index]
    logits = np.where(raw > 0, raw, cfg.leaky_slope * raw)
    alpha = ad.softmax_over_index_set(tape.constant(logits), np.broadcast_to(valid, logits.shape))
    return ad.scatter_rows(alpha, index, len(index)).value


def _mask_of(graph):
    return graph.mask if hasattr(graph, "mask") else np.asarray(graph, dtype=bool)


def _neighbor_lists(graph):
    if hasattr(graph, "neighbor_lists"):
        return graph.neighbor_lists
    return [np.flatnonzero(row) for row in _mask_of(graph)]


def attention_logits(h, head, graph, slope=0.2):
    """Per-edge logits ``e_ij`` for ``j`` in each ``N_i``, in neighbor-list order."""
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != head.Q.shape[1]:
        raise ShapeError(f"features {h.shape} incompatible with Q {head.Q.shape}")
    z = h @ head.Q.T
    Fp = head.Q.shape[0]
    rows = []
    for i, nb in enumerate(_neighbor_lists(graph)):
        raw = z[i] @ head.a[:Fp] + z[nb] @ head.a[Fp:]
        rows.append(np.where(raw > 0, raw, slope * raw))
    return rows


def masked_attention(logits, graph):
    """Dense (M, M) coefficients: softmax of each row's logits over ``N_i``, zero elsewhere."""
    lists = _neighbor_lists(graph)
    n = len(lists)
    alpha = np.zeros((n, n))
    for i, (nb, row) in enumerate(zip(lists, logits)):
        full = np.zeros(n)
        full[nb] = row
        alpha[i] = ad.softmax_over_index_set(full, nb).value
    return alpha


def aggregate(alpha, h, head, sigma="identity"):
    z = np.asarray(h, dtype=np.float64) @ head.Q.T
    return ACTIVATIONS[sigma](ad.Tensor(np.asarray(alpha) @ z)).value


def multi_head(h, heads, config, graph):
    """Numeric forward of one layer given a sequence of :class:`AttentionHead`."""
    layer = GATLayer.from_heads(config, list(heads))
    tape = ad.Tape()
    out = layer_forward(tape.constant(h), tape.constant(layer.Q), tape.constant(layer.a),
                        neighbor_table(graph), config)
    return out.value
