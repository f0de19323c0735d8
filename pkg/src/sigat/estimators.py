"""scikit-learn compatible wrappers.

``ImageGraphTransformer`` turns images into KNN graphs and
``SIGATClassifier`` fits the attention network on those graphs, so the two
chain in a :class:`sklearn.pipeline.Pipeline`::

    pipe = make_pipeline(ImageGraphTransformer(grid=(10, 10)), SIGATClassifier(epochs=50))
    pipe.fit(images, labels)
"""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_is_fitted, column_or_1d

from .exceptions import ConfigError, ShapeError
from .graph_builder import SonarImage, extract_nodes
from .knn import SparseGraph, sparsify
from .model import ModelConfig, TrainConfig, build_model, default_layers, evaluate, train


def check_images(X):
    """Validate a sequence of 2-D intensity arrays (or a 3-D stack) in [0, 1]."""
    if isinstance(X, np.ndarray) and X.ndim == 2:
        raise ShapeError("expected a sequence of images, got a single 2-D array")
    images = [im.intensities if isinstance(im, SonarImage) else SonarImage(im).intensities for im in X]
    if not images:
        raise ShapeError("no images given")
    return images


def check_graphs(X, n_features=None):
    graphs = list(X)
    if not graphs:
        raise ShapeError("no graphs given")
    for i, g in enumerate(graphs):
        if not isinstance(g, SparseGraph):
            raise ShapeError(f"element {i} is {type(g).__name__}, expected SparseGraph")
        if n_features is not None and g.nodes.n_features != n_features:
            raise ShapeError(f"graph {i} has {g.nodes.n_features} features, expected {n_features}")
    return graphs


class ImageGraphTransformer(TransformerMixin, BaseEstimator):
    """Image -> node set -> correlation matrix -> top-k sparse graph.

    Stateless: ``fit`` only validates parameters.
    """

    def __init__(self, grid=(10, 10), gamma=0.5, k=8, scheme="grid", n_superpixels=100, seed=0):
        self.grid = grid
        self.gamma = gamma
        self.k = k
        self.scheme = scheme
        self.n_superpixels = n_superpixels
        self.seed = seed

    def _validate_params(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError(f"gamma must be in [0, 1], got {self.gamma}")
        if int(self.k) < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.scheme not in ("grid", "superpixel"):
            raise ConfigError(f"unknown scheme {self.scheme!r}")

    def fit(self, X, y=None):
        self._validate_params()
        check_images(X)
        self.n_features_out_ = 4
        return self

    def transform(self, X):
        check_is_fitted(self, "n_features_out_")
        graphs = []
        for im in check_images(X):
            nodes = extract_nodes(im, tuple(self.grid), self.scheme, self.n_superpixels, self.seed)
            graphs.append(sparsify(nodes, self.gamma, int(self.k)))
        return graphs


class SIGATClassifier(ClassifierMixin, BaseEstimator):
    def __init__(self, n_layers=4, heads=8, hidden_dim=10, out_dim=152, epochs=250, batch_size=4,
                 lr=0.001, lr_decay=0.5, decay_every=50, optimizer="adam", random_state=0):
        self.n_layers = n_layers
        self.heads = heads
        self.hidden_dim = hidden_dim
        self.out_dim = out_dim
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.lr_decay = lr_decay
        self.decay_every = decay_every
        self.optimizer = optimizer
        self.random_state = random_state

    def _train_config(self):
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size, lr0=self.lr,
                           lr_decay=self.lr_decay, decay_every=self.decay_every,
                           seed=self.random_state, optimizer=self.optimizer)

    def fit(self, X, y, X_val=None, y_val=None):
        """Fit on graphs ``X``; an optional validation set selects the best epoch."""
        graphs = check_graphs(X)
        y = column_or_1d(np.asarray(y), warn=True)
        check_classification_targets(y)
        if len(y) != len(graphs):
            raise ShapeError(f"{len(graphs)} graphs but {len(y)} labels")
        self.classes_ = np.unique(y)
        if len(self.classes_) < 2:
            raise ConfigError("need at least 2 classes to fit")
        self.n_features_in_ = graphs[0].nodes.n_features
        check_graphs(graphs, self.n_features_in_)
        first = graphs[0]
        config = ModelConfig(
            n_classes=len(self.classes_),
            layers=default_layers(self.n_features_in_, self.n_layers, self.heads, self.hidden_dim, self.out_dim),
            in_dim=self.n_features_in_, seed=self.random_state, gamma=first.gamma, k=first.k,
            class_names=tuple(str(c) for c in self.classes_),
        )
        self.model_ = build_model(config)
        encode = {c: i for i, c in enumerate(self.classes_)}
        val_graphs, val_labels = (), ()
        if X_val is not None:
            val_graphs = check_graphs(X_val, self.n_features_in_)
            val_labels = [encode[c] for c in np.asarray(y_val)]
        self.metrics_ = train(self.model_, graphs, [encode[c] for c in y], self._train_config(),
                              val_graphs, val_labels)
        self.n_params_ = self.model_.n_params
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        graphs = check_graphs(X, self.n_features_in_)
        return np.array([self.model_.predict_proba(g) for g in graphs])

    def predict(self, X):
        # argmax picks the lowest class index on ties
        check_is_fitted(self, "model_")
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]

    def evaluate(self, X, y):
        check_is_fitted(self, "model_")
        encode = {c: i for i, c in enumerate(self.classes_)}
        return evaluate(self.model_, check_graphs(X, self.n_features_in_), [encode[c] for c in y])
