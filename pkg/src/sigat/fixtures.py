"""Small deterministic fixtures shared by the gradient check command and the tests."""

import numpy as np

from .graph_builder import NodeSet
from .knn import sparsify
from .model import ModelConfig, build_model, default_layers


def random_nodes(n, rng, n_features=4):
    centroids = rng.uniform(0.0, 1.0, size=(n, 2))
    means = rng.uniform(0.0, 1.0, size=n)
    stds = rng.uniform(0.0, 0.3, size=n)
    if n_features == 4:
        features = np.column_stack([means, stds, centroids])
    else:
        features = rng.uniform(0.0, 1.0, size=(n, n_features))
    return NodeSet(centroids, means, features, (n, 1))


def random_graph(n, k, rng, gamma=0.5):
    return sparsify(random_nodes(n, rng), gamma, k)


def gradcheck_problem(seed=0, n=6, k=3):
    """A 6-node graph, a label and a reduced-width model of the default shape.

    The model keeps the default structure (four layers, concatenated hidden
    heads, averaged last layer, two classes) at widths small enough for an
    exhaustive finite-difference sweep.
    """
    rng = np.random.default_rng(seed)
    graph = random_graph(n, k, rng)
    config = ModelConfig(n_classes=2, layers=default_layers(4, n_layers=4, heads=2, hidden_dim=3, out_dim=4),
                         seed=seed, k=k)
    return graph, int(rng.integers(2)), build_model(config)


def model_closure(model, graph, label):
    def closure(params):
        return model.loss(graph, label, params)

    return closure
