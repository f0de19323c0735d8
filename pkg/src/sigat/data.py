"""Datasets: image I/O, synthetic sonar-like scenes, manifests, splits and graph caching."""

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError, InsufficientClassError, ParseError, UnsupportedVersionError
from .graph_builder import NodeSet
from .knn import SparseGraph, binary_mask

SPLITS = ("train", "val", "test")
DEFAULT_RATIOS = (0.7, 0.1, 0.2)
CACHE_MAGIC = "sigat-graph"
CACHE_VERSION = 1


# -- image I/O ---------------------------------------------------------------

def write_pgm(path, image):
    """Write intensities in [0, 1] as 8-bit binary PGM (P5)."""
    arr = np.asarray(image, dtype=np.float64)
    data = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def _pgm_tokens(raw):
    """Yield (token, end offset) for header tokens, skipping comments."""
    pos = 0
    while True:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ParseError("truncated PGM header")
        yield raw[start:pos], pos


def read_pgm(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    tokens = _pgm_tokens(raw)
    magic, _ = next(tokens)
    if magic != b"P5":
        raise ParseError(f"{path}: expected binary PGM (P5), got {magic!r}", field="magic")
    try:
        w = int(next(tokens)[0])
        h = int(next(tokens)[0])
        maxval_tok, end = next(tokens)
        maxval = int(maxval_tok)
    except ValueError as exc:
        raise ParseError(f"{path}: malformed PGM header") from exc
    if maxval != 255:
        raise ParseError(f"{path}: only maxval 255 is supported, got {maxval}", field="maxval")
    data = raw[end + 1:end + 1 + w * h]
    if len(data) != w * h:
        raise ParseError(f"{path}: expected {w * h} pixel bytes, found {len(data)}")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w) / 255.0


def read_image(path):
    """Load an 8-bit grayscale PGM or PNG as floats ``v / 255``."""
    if str(path).lower().endswith(".png"):
        from PIL import Image

        with Image.open(path) as im:
            if im.mode != "L":
                raise ParseError(f"{path}: expected 8-bit grayscale PNG, got mode {im.mode}")
            return np.asarray(im, dtype=np.uint8) / 255.0
    return read_pgm(path)


# -- synthetic scenes --------------------------------------------------------

ARCHETYPES = ("disk", "bar", "ring")


@dataclass
class SyntheticConfig:
    """Scene generator settings.

    Every image is exponential speckle around ``background_mean`` with one
    bright target and its dark shadow cast along ``+x`` (the sound comes from
    the left). ``noise_amplitude`` scales all speckle; 0 gives flat plateaus.
    """

    classes: tuple = ARCHETYPES
    width: int = 200
    height: int = 200
    per_class: object = 30  # int, or one count per class
    background_mean: float = 0.3
    target_range: tuple = (0.8, 1.0)
    shadow_range: tuple = (0.0, 0.1)
    shadow_gap: int = 4
    noise_amplitude: float = 1.0
    target_speckle: float = 0.25
    seed: int = 0

    def counts(self):
        if np.isscalar(self.per_class):
            return [int(self.per_class)] * len(self.classes)
        counts = [int(c) for c in self.per_class]
        if len(counts) != len(self.classes):
            raise ConfigError("per_class must give one count per class")
        return counts

    def validate(self):
        for name in self.classes:
            if name not in ARCHETYPES:
                raise ConfigError(f"unknown archetype {name!r}; choose from {ARCHETYPES}")
        for label, (lo, hi) in (("target_range", self.target_range), ("shadow_range", self.shadow_range)):
            if not 0.0 <= lo <= hi <= 1.0:
                raise ConfigError(f"{label} must be a sub-interval of [0, 1], got {(lo, hi)}")
        if not 0.0 <= self.background_mean <= 1.0:
            raise ConfigError("background_mean must lie in [0, 1]")
        if self.noise_amplitude < 0 or self.target_speckle < 0:
            raise ConfigError("speckle amplitudes must be non-negative")
        if any(c < 0 for c in self.counts()):
            raise ConfigError("per-class counts must be non-negative")
        if self.width < 16 or self.height < 16:
            raise ConfigError("synthetic images must be at least 16x16")


def _shape_mask(kind, rng, h, w, cx, cy, size):
    yy, xx = np.mgrid[0:h, 0:w]
    dx, dy = xx + 0.5 - cx, yy + 0.5 - cy
    r2 = dx * dx + dy * dy
    if kind == "disk":
        return r2 <= size["r"] ** 2
    if kind == "ring":
        return (r2 <= size["r"] ** 2) & (r2 > (size["r"] - size["t"]) ** 2)
    # bar: axis-aligned along range (y) so its shadow stays compact
    return (np.abs(dx) <= size["w"] / 2) & (np.abs(dy) <= size["l"] / 2)


def _draw_size(kind, rng, scale):
    if kind == "disk":
        return {"r": rng.uniform(25, 30) * scale}
    if kind == "ring":
        return {"r": rng.uniform(38, 42) * scale, "t": 6 * scale}
    return {"l": rng.uniform(70, 90) * scale, "w": rng.uniform(7, 9) * scale}


def _half_extent(kind, size):
    if kind == "bar":
        return size["w"] / 2, size["l"] / 2
    return size["r"], size["r"]


def synth_image(config, label, rng, max_attempts=100):
    """One scene with archetype ``config.classes[label]``; returns (image, target_mask, shadow_mask)."""
    kind = config.classes[label]
    h, w = config.height, config.width
    scale = min(h, w) / 200.0
    for _ in range(max_attempts):
        size = _draw_size(kind, rng, scale)
        hx, hy = _half_extent(kind, size)
        offset = 2 * hx + config.shadow_gap
        lo_x, hi_x = hx + 1, w - hx - offset - 1
        lo_y, hi_y = hy + 1, h - hy - 1
        if lo_x >= hi_x or lo_y >= hi_y:
            continue
        cx, cy = rng.uniform(lo_x, hi_x), rng.uniform(lo_y, hi_y)
        target = _shape_mask(kind, rng, h, w, cx, cy, size)
        shadow = _shape_mask(kind, rng, h, w, cx + offset, cy, size)
        if target.any() and shadow.any() and not (target & shadow).any():
            break
    else:
        raise ConfigError(f"could not place a {kind} target and its shadow in {w}x{h} after {max_attempts} attempts")

    amp = config.noise_amplitude
    e = rng.standard_exponential((h, w))
    img = config.background_mean * (1.0 + amp * (e - 1.0))
    t_level = rng.uniform(*config.target_range)
    s_level = rng.uniform(*config.shadow_range)
    img[target] = t_level * (1.0 + amp * config.target_speckle * (e[target] - 1.0))
    img[shadow] = s_level * (1.0 + amp * (e[shadow] - 1.0))
    return np.clip(img, 0.0, 1.0), target, shadow


def synth_sonar(config, seed=None):
    """Generate ``(images, labels)``; image ``i`` draws from its own stream seeded by ``(seed, i)``."""
    config.validate()
    seed = config.seed if seed is None else seed
    labels = [c for c, count in enumerate(config.counts()) for _ in range(count)]
    images = []
    for i, label in enumerate(labels):
        rng = np.random.default_rng([int(seed), i])
        images.append(synth_image(config, label, rng)[0])
    return images, np.array(labels, dtype=int)


# -- manifests and splits ----------------------------------------------------

@dataclass
class DatasetManifest:
    paths: list
    labels: list  # class names
    class_names: tuple
    splits: list = field(default_factory=list)

    def __post_init__(self):
        unknown = set(self.labels) - set(self.class_names)
        if unknown:
            raise ConfigError(f"labels not among class names: {sorted(unknown)}")
        if len(self.paths) != len(self.labels):
            raise ConfigError("paths and labels differ in length")

    def label_indices(self):
        return np.array([self.class_names.index(l) for l in self.labels], dtype=int)

    def subset(self, split):
        idx = [i for i, s in enumerate(self.splits) if s == split]
        return [self.paths[i] for i in idx], [self.labels[i] for i in idx]

    def write(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["path", "label", "split"])
            splits = self.splits or [""] * len(self.paths)
            for row in zip(self.paths, self.labels, splits):
                writer.writerow(row)

    @classmethod
    def read(cls, path, class_names=None):
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not {"path", "label"} <= set(reader.fieldnames):
                raise ParseError(f"{path}: manifest header must contain path,label[,split]", line=1)
            rows = list(reader)
        base = os.path.dirname(os.path.abspath(path))
        paths = [r["path"] if os.path.isabs(r["path"]) else os.path.join(base, r["path"]) for r in rows]
        labels = [r["label"] for r in rows]
        if class_names is None:
            class_names = tuple(sorted(set(labels), key=labels.index))
        splits = [r.get("split") or "" for r in rows]
        for lineno, s in enumerate(splits, start=2):
            if s and s not in SPLITS:
                raise ParseError(f"{path}: unknown split {s!r}", line=lineno, field="split")
        return cls(paths, labels, tuple(class_names), splits if any(splits) else [])


def split_counts(n, ratios=DEFAULT_RATIOS):
    n_train = int(np.floor(ratios[0] * n + 1e-9))
    n_val = int(np.floor(ratios[1] * n + 1e-9))
    return n_train, n_val, n - n_train - n_val


def split_dataset(labels, ratios=DEFAULT_RATIOS, seed=0):
    """Stratified split; per class ``floor(r * n)`` train and val, the remainder test.

    Returns one of ``"train" | "val" | "test"`` per entry.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise ConfigError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    labels = list(labels)
    rng = np.random.default_rng(seed)
    out = [None] * len(labels)
    for cls in sorted(set(labels), key=labels.index):
        idx = np.array([i for i, l in enumerate(labels) if l == cls])
        if len(idx) < 3:
            raise InsufficientClassError(f"class {cls!r} has {len(idx)} examples; at least 3 are required")
        idx = idx[rng.permutation(len(idx))]
        n_train, n_val, _ = split_counts(len(idx), ratios)
        for pos, i in enumerate(idx):
            out[i] = "train" if pos < n_train else "val" if pos < n_train + n_val else "test"
    return out


# -- graph cache -------------------------------------------------------------
#
# Line-oriented text, one record per line, whitespace separated:
#
#   sigat-graph 1
#   n <n>
#   k <k>
#   gamma <g>
#   dims <width> <height>
#   features <F>
#   node <id> <x> <y> <mean_intensity> <f_1> ... <f_F>     (n lines, ids ascending)
#   edge <i> <j> <w_prime>                               (N_i order: self first)
#
# Reals are written with 17 significant digits.

def _fmt(x):
    return format(float(x), ".17g")


def cache_graph(graph, path):
    nodes = graph.nodes
    lines = [f"{CACHE_MAGIC} {CACHE_VERSION}", f"n {graph.n}", f"k {graph.k}",
             f"gamma {_fmt(graph.gamma)}", f"dims {nodes.source_dims[0]} {nodes.source_dims[1]}",
             f"features {nodes.n_features}"]
    for i in range(graph.n):
        vals = [*nodes.centroids[i], nodes.mean_intensity[i], *nodes.features[i]]
        lines.append(f"node {i} " + " ".join(_fmt(v) for v in vals))
    for i, nb in enumerate(graph.neighbor_lists):
        for j in nb:
            lines.append(f"edge {i} {int(j)} {_fmt(graph.weights_prime[i, j])}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _expect(tokens, lineno, key, count):
    if not tokens or tokens[0] != key:
        raise ParseError(f"expected {key!r} record", line=lineno, field=key)
    if len(tokens) != count + 1:
        raise ParseError(f"{key!r} record needs {count} values, got {len(tokens) - 1}", line=lineno, field=key)
    return tokens[1:]


def _num(tok, lineno, field, kind=float):
    try:
        return kind(tok)
    except ValueError:
        raise ParseError(f"cannot parse {tok!r} as {kind.__name__}", line=lineno, field=field) from None


def load_graph(path):
    with open(path) as fh:
        lines = [(i, ln.split()) for i, ln in enumerate(fh, start=1) if ln.strip()]
    if not lines:
        raise ParseError(f"{path}: empty graph file", line=1)
    it = iter(lines)
    lineno, toks = next(it)
    if len(toks) != 2 or toks[0] != CACHE_MAGIC:
        raise ParseError("not a graph cache file", line=lineno, field="magic")
    version = _num(toks[1], lineno, "version", int)
    if version != CACHE_VERSION:
        raise UnsupportedVersionError(f"unsupported graph cache version {version}", line=lineno, field="version")
    header = {}
    for key, count, kind in (("n", 1, int), ("k", 1, int), ("gamma", 1, float), ("dims", 2, int), ("features", 1, int)):
        lineno, toks = next(it, (lineno + 1, []))
        vals = [_num(t, lineno, key, kind) for t in _expect(toks, lineno, key, count)]
        header[key] = vals if count > 1 else vals[0]
    n, F = header["n"], header["features"]
    centroids = np.empty((n, 2))
    means = np.empty(n)
    features = np.empty((n, F))
    for i in range(n):
        lineno, toks = next(it, (lineno + 1, []))
        vals = _expect(toks, lineno, "node", 4 + F)
        if _num(vals[0], lineno, "node.id", int) != i:
            raise ParseError(f"node ids must be consecutive; expected {i}", line=lineno, field="node.id")
        nums = [_num(t, lineno, "node", float) for t in vals[1:]]
        centroids[i], means[i], features[i] = nums[:2], nums[2], nums[3:]
    lists = [[] for _ in range(n)]
    weights = np.zeros((n, n))
    for lineno, toks in it:
        vals = _expect(toks, lineno, "edge", 3)
        i = _num(vals[0], lineno, "edge.i", int)
        j = _num(vals[1], lineno, "edge.j", int)
        if not (0 <= i < n and 0 <= j < n):
            raise ParseError(f"edge ({i}, {j}) references a missing node", line=lineno, field="edge")
        lists[i].append(j)
        weights[i, j] = _num(vals[2], lineno, "edge.w_prime", float)
    for i, nb in enumerate(lists):
        if not nb:
            raise ParseError(f"node {i} has an empty neighbor list", field=f"node {i}")
        if nb[0] != i:
            raise ParseError(f"node {i} neighbor list must start with the node itself", field=f"node {i}")
    nodes = NodeSet(centroids, means, features, tuple(header["dims"]))
    lists = [np.array(nb, dtype=int) for nb in lists]
    return SparseGraph(nodes, header["k"], header["gamma"], lists, weights, binary_mask(lists, n))
