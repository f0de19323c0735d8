"""Stacked attention layers, mean-pool readout and a linear softmax classifier.

Also holds the training loop (gradient accumulation over independent graphs,
step-decayed learning rate), evaluation metrics and the JSON checkpoint
format.
"""

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .exceptions import ConfigError, ContractError, NumericError, ParseError, ShapeError, UnsupportedVersionError
from .gat_layer import GATLayer, LayerConfig, layer_forward, neighbor_table

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "sigat-checkpoint"
CHECKPOINT_VERSION = 1
PROB_FLOOR = 1e-12


def default_layers(in_dim=4, n_layers=4, heads=8, hidden_dim=10, out_dim=152):
    """Hidden layers concatenate ``heads`` x ``hidden_dim``; the last layer averages heads of width ``out_dim``."""
    if n_layers < 1:
        raise ConfigError(f"n_layers must be >= 1, got {n_layers}")
    layers = []
    dim = in_dim
    for _ in range(n_layers - 1):
        cfg = LayerConfig(dim, hidden_dim, heads, "concat", 0.2, "elu")
        layers.append(cfg)
        dim = cfg.output_dim
    layers.append(LayerConfig(dim, out_dim, heads, "average", 0.2, "identity"))
    return tuple(layers)


@dataclass
class ModelConfig:
    n_classes: int
    layers: tuple = None
    in_dim: int = 4
    seed: int = 0
    gamma: float = 0.5
    k: int = 8
    grid: tuple = (10, 10)
    class_names: tuple = None

    def __post_init__(self):
        if self.layers is None:
            self.layers = default_layers(self.in_dim)
        self.layers = tuple(l if isinstance(l, LayerConfig) else LayerConfig(**l) for l in self.layers)
        self.grid = tuple(int(g) for g in self.grid)
        if self.class_names is None:
            self.class_names = tuple(str(c) for c in range(self.n_classes))
        self.class_names = tuple(self.class_names)

    def validate(self):
        if self.n_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.n_classes}")
        if len(self.class_names) != self.n_classes:
            raise ConfigError("class_names length differs from n_classes")
        if not self.layers:
            raise ConfigError("model needs at least one attention layer")
        dim = self.in_dim
        for idx, layer in enumerate(self.layers):
            if layer.in_dim != dim:
                raise ConfigError(f"layer {idx} expects input dim {layer.in_dim}, previous layer gives {dim}")
            dim = layer.output_dim
        return dim

    def to_dict(self):
        d = asdict(self)
        d["layers"] = [asdict(l) for l in self.layers]
        d["grid"] = list(self.grid)
        d["class_names"] = list(self.class_names)
        return d


class SIGATModel:
    def __init__(self, config, layers, W, b):
        self.config = config
        self.layers = layers
        self.W = W  # (C, D)
        self.b = b  # (C,)

    @property
    def n_params(self):
        return sum(v.size for v in self.params().values())

    def params(self):
        out = {}
        for i, layer in enumerate(self.layers):
            out[f"layer{i}.Q"] = layer.Q
            out[f"layer{i}.a"] = layer.a
        out["classifier.W"] = self.W
        out["classifier.b"] = self.b
        return out

    def set_params(self, params):
        for i, layer in enumerate(self.layers):
            layer.Q = np.array(params[f"layer{i}.Q"], dtype=np.float64)
            layer.a = np.array(params[f"layer{i}.a"], dtype=np.float64)
        self.W = np.array(params["classifier.W"], dtype=np.float64)
        self.b = np.array(params["classifier.b"], dtype=np.float64)

    def record(self, graph, params=None, tape=None):
        """Forward pass on ``tape``; returns the class-probability tensor."""
        tape = ad.Tape() if tape is None else tape
        params = self.params() if params is None else params
        features, mask = _unpack(graph)
        neighbors = neighbor_table(graph if hasattr(graph, "neighbor_lists") else mask)
        if features.shape[1] != self.config.in_dim:
            raise ShapeError(f"graph has {features.shape[1]} features, model expects {self.config.in_dim}")
        h = tape.constant(features)
        for i, layer in enumerate(self.layers):
            Q = tape.parameter(f"layer{i}.Q", params[f"layer{i}.Q"])
            a = tape.parameter(f"layer{i}.a", params[f"layer{i}.a"])
            h = layer_forward(h, Q, a, neighbors, layer.config)
        pooled = ad.reshape(ad.mean_over_rows(h), (1, h.shape[-1]))
        W = tape.parameter("classifier.W", params["classifier.W"])
        b = tape.parameter("classifier.b", params["classifier.b"])
        logits = ad.add(ad.matmul(pooled, ad.transpose(W, (1, 0))), b)
        return ad.softmax(ad.reshape(logits, (self.config.n_classes,)))

    def loss(self, graph, label, params=None):
        probs = self.record(graph, params)
        return ad.nll(probs, int(label), PROB_FLOOR)

    def predict_proba(self, graph):
        return self.record(graph).value


def _unpack(graph):
    if hasattr(graph, "features") and hasattr(graph, "mask"):
        return np.asarray(graph.features, dtype=np.float64), graph.mask
    features, mask = graph
    return np.asarray(features, dtype=np.float64), np.asarray(mask, dtype=bool)


def build_model(config):
    """Seeded initialization; logs the parameter count."""
    dim = config.validate()
    rng = np.random.default_rng(config.seed)
    layers = [GATLayer(cfg, rng=rng) for cfg in config.layers]
    s = math.sqrt(6.0 / (dim + config.n_classes))
    W = rng.uniform(-s, s, size=(config.n_classes, dim))
    b = np.zeros(config.n_classes)
    model = SIGATModel(config, layers, W, b)
    logger.info("built model with %d parameters", model.n_params)
    return model


def forward(model, graph):
    return model.predict_proba(graph)


@dataclass
class TrainConfig:
    epochs: int = 250
    batch_size: int = 4
    lr0: float = 0.001
    lr_decay: float = 0.5
    decay_every: int = 50
    seed: int = 0
    gamma: float = 0.5
    k: int = 8
    optimizer: str = "adam"

    def validate(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.lr0 > 0:
            raise ConfigError(f"lr0 must be positive, got {self.lr0}")
        if not 0 < self.lr_decay <= 1:
            raise ConfigError(f"lr_decay must be in (0, 1], got {self.lr_decay}")
        if self.decay_every < 1:
            raise ConfigError(f"decay_every must be >= 1, got {self.decay_every}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")

    def lr_at(self, epoch):
        return self.lr0 * self.lr_decay ** (epoch // self.decay_every)


@dataclass
class Metrics:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_acc: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    best_epoch: int = None
    accuracy: float = None
    loss: float = None
    confusion: np.ndarray = None
    class_names: tuple = ()

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["epoch", "train_loss", "val_loss", "val_acc"])
            for e, row in enumerate(zip(self.train_loss, self.val_loss, self.val_acc)):
                writer.writerow([e] + [repr(float(v)) for v in row])

    def write_confusion(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["true\\pred"] + list(self.class_names))
            for name, row in zip(self.class_names, self.confusion):
                writer.writerow([name] + [int(v) for v in row])

    def summary(self):
        lines = [f"accuracy: {self.accuracy:.6f}", f"mean loss: {self.loss:.6f}",
                 f"examples: {int(self.confusion.sum())}"]
        for name, row in zip(self.class_names, self.confusion):
            total = row.sum()
            recall = row[list(self.class_names).index(name)] / total if total else float("nan")
            lines.append(f"class {name}: n={int(total)} recall={recall:.4f}")
        return "\n".join(lines) + "\n"


class _Adam:
    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0

    def step(self, params, grads, lr):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k in params:
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * grads[k]
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * grads[k] ** 2
            params[k] = params[k] - lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


class _SGD:
    def __init__(self, params):
        pass

    def step(self, params, grads, lr):
        for k in params:
            params[k] = params[k] - lr * grads[k]


def _loss_and_grads(model, graph, label, params):
    loss = model.loss(graph, label, params)
    return loss.item(), loss.tape.backward(loss)


def train(model, train_graphs, train_labels, config=None, val_graphs=(), val_labels=(),
          checkpoint_path=None, log_every=0):
    """Fit ``model`` in place and return per-epoch :class:`Metrics`.

    Gradients are averaged over ``batch_size`` graphs before each step. When
    a validation set is given, the parameters with the best validation
    accuracy (ties to lower validation loss, then earlier epoch) are restored
    at the end and written to ``checkpoint_path``.
    """
    config = TrainConfig() if config is None else config
    config.validate()
    train_graphs = list(train_graphs)
    train_labels = [int(y) for y in train_labels]
    if not train_graphs:
        raise ContractError("training set is empty")
    if len(train_graphs) != len(train_labels):
        raise ContractError("train graphs and labels differ in length")
    dims = {_unpack(g)[0].shape[1] for g in train_graphs}
    if len(dims) != 1:
        raise ShapeError(f"training graphs have mixed feature dims {sorted(dims)}")

    rng = np.random.default_rng(config.seed)
    params = {k: v.copy() for k, v in model.params().items()}
    opt = _Adam(params) if config.optimizer == "adam" else _SGD(params)
    metrics = Metrics(class_names=model.config.class_names)
    best_key, best_params = None, None
    n = len(train_graphs)
    step = 0

    for epoch in range(config.epochs):
        lr = config.lr_at(epoch)
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, config.batch_size):
            batch = order[start:start + config.batch_size]
            total = None
            for idx in batch:
                try:
                    value, grads = _loss_and_grads(model, train_graphs[idx], train_labels[idx], params)
                except NumericError as exc:
                    raise NumericError(str(exc), epoch=epoch, step=step) from exc
                losses.append(value)
                if total is None:
                    total = grads
                else:
                    for k in total:
                        total[k] = total[k] + grads[k]
            for k in total:
                total[k] = total[k] / len(batch)
            opt.step(params, total, lr)
            step += 1
        train_loss = float(np.mean(losses))
        if not math.isfinite(train_loss):
            raise NumericError("non-finite training loss", epoch=epoch)

        model.set_params(params)
        if len(val_graphs):
            vm = evaluate(model, val_graphs, val_labels)
            val_loss, val_acc = vm.loss, vm.accuracy
            key = (-val_acc, val_loss)
            if best_key is None or key < best_key:
                best_key, best_params = key, {k: v.copy() for k, v in params.items()}
                metrics.best_epoch = epoch
        else:
            val_loss, val_acc = float("nan"), float("nan")
            best_params, metrics.best_epoch = params, epoch
        metrics.train_loss.append(train_loss)
        metrics.val_loss.append(val_loss)
        metrics.val_acc.append(val_acc)
        metrics.lr.append(lr)
        if log_every and (epoch % log_every == 0 or epoch == config.epochs - 1):
            logger.info("epoch %d lr %.3g train_loss %.5f val_loss %.5f val_acc %.3f",
                        epoch, lr, train_loss, val_loss, val_acc)

    model.set_params(best_params)
    if checkpoint_path is not None:
        save_checkpoint(model, checkpoint_path)
    return metrics


def evaluate(model, graphs, labels):
    graphs = list(graphs)
    labels = np.asarray([int(y) for y in labels], dtype=int)
    if not graphs:
        raise ContractError("cannot evaluate on an empty dataset")
    if len(graphs) != len(labels):
        raise ContractError("graphs and labels differ in length")
    C = model.config.n_classes
    confusion = np.zeros((C, C), dtype=int)
    losses = []
    for g, y in zip(graphs, labels):
        p = model.predict_proba(g)
        losses.append(-math.log(max(p[y], PROB_FLOOR)))
        confusion[y, int(np.argmax(p))] += 1
    return Metrics(accuracy=float(np.trace(confusion) / len(graphs)), loss=float(np.mean(losses)),
                   confusion=confusion, class_names=model.config.class_names)


def predict(model, graphs):
    return np.array([int(np.argmax(model.predict_proba(g))) for g in graphs], dtype=int)


def save_checkpoint(model, path):
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "params": {k: {"shape": list(v.shape), "values": [float(x) for x in v.ravel()]}
                   for k, v in model.params().items()},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_checkpoint(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"checkpoint is not valid JSON: {exc.msg}", line=exc.lineno) from exc
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ParseError("not a checkpoint file", field="format")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise UnsupportedVersionError(f"unsupported checkpoint version {doc.get('version')!r}", field="version")
    config = ModelConfig(**doc["config"])
    model = build_model(config)
    params = {}
    for name, ref in model.params().items():
        if name not in doc["params"]:
            raise ParseError(f"missing parameter {name}", field=name)
        entry = doc["params"][name]
        arr = np.array(entry["values"], dtype=np.float64).reshape(entry["shape"])
        if arr.shape != ref.shape:
            raise ParseError(f"parameter {name} has shape {arr.shape}, expected {ref.shape}", field=name)
        params[name] = arr
    model.set_params(params)
    return model
