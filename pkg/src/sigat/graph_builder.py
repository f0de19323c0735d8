"""Image to node-set conversion and the dense correlation measurement matrix.

Each node carries a normalized centroid, a mean intensity and a small feature
vector. Edge weights mix a spatial kernel (exponential in squared distance)
with a pixel kernel (sigmoid of the squared, scaled intensity difference)::

    W[i, j] = gamma * exp(-|p_i - p_j|^2 / dx_i^2)
              + (1 - gamma) / (1 + exp(-(|f_i - f_j| / df_i^2)^2))

``dx_i`` and ``df_i`` are row-specific mean distances, so ``W`` is in general
not symmetric.
"""

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError, DegenerateAxisError, InsufficientNodesError

EPS = 1e-9
FEATURE_NAMES = ("mean_intensity", "std_intensity", "x", "y")


@dataclass(frozen=True)
class SonarImage:
    """Grayscale image with intensities in [0, 1], stored as (height, width)."""

    intensities: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.intensities, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ConfigError(f"image must be a non-empty 2-D array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
            raise ConfigError("image intensities must lie in [0, 1]")
        object.__setattr__(self, "intensities", arr)

    @classmethod
    def from_flat(cls, width, height, values):
        values = np.asarray(values, dtype=np.float64)
        if values.size != width * height:
            raise ConfigError(f"expected {width * height} intensities, got {values.size}")
        return cls(values.reshape(height, width))

    @property
    def width(self):
        return self.intensities.shape[1]

    @property
    def height(self):
        return self.intensities.shape[0]


@dataclass
class NodeSet:
    centroids: np.ndarray  # (n, 2) normalized (x, y)
    mean_intensity: np.ndarray  # (n,)
    features: np.ndarray  # (n, F)
    source_dims: tuple = (0, 0)  # (width, height)

    def __post_init__(self):
        self.centroids = np.asarray(self.centroids, dtype=np.float64).reshape(-1, 2)
        self.mean_intensity = np.asarray(self.mean_intensity, dtype=np.float64).reshape(-1)
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[1] < 1:
            raise ConfigError("node features must be a 2-D array with at least one column")
        n = len(self.centroids)
        if len(self.mean_intensity) != n or len(self.features) != n:
            raise ConfigError("centroids, mean intensities and features disagree on node count")
        if np.any(self.centroids < 0.0) or np.any(self.centroids > 1.0):
            raise ConfigError("node centroids must lie in [0, 1]^2")
        self.source_dims = tuple(int(v) for v in self.source_dims)

    @property
    def n(self):
        return len(self.centroids)

    @property
    def n_features(self):
        return self.features.shape[1]

    def permuted(self, perm):
        perm = np.asarray(perm)
        return NodeSet(self.centroids[perm], self.mean_intensity[perm],
                       self.features[perm], self.source_dims)


@dataclass
class CorrelationMatrix:
    weights: np.ndarray
    delta_x: np.ndarray
    delta_f: np.ndarray
    gamma: float = field(default=0.5)

    @property
    def n(self):
        return self.weights.shape[0]


def normalize_coords(x, y, x_max, y_max):
    """Map pixel coordinates onto the unit square by dividing by the axis maxima."""
    if x_max <= 0 or y_max <= 0:
        raise DegenerateAxisError(f"axis maximum must be positive, got x_max={x_max}, y_max={y_max}")
    if not (0 <= x <= x_max and 0 <= y <= y_max):
        raise ConfigError(f"coordinate ({x}, {y}) outside [0, {x_max}] x [0, {y_max}]")
    return x / x_max, y / y_max


def _patch_edges(size, parts):
    return (np.arange(parts + 1) * size) // parts


def _grid_nodes(img, grid):
    g_w, g_h = grid
    if g_w < 1 or g_h < 1:
        raise ConfigError(f"grid dims must be positive, got {g_w}x{g_h}")
    if g_w > img.width or g_h > img.height:
        raise ConfigError(
            f"grid {g_w}x{g_h} exceeds image dims {img.width}x{img.height}")
    xs = _patch_edges(img.width, g_w)
    ys = _patch_edges(img.height, g_h)
    n = g_w * g_h
    centroids = np.empty((n, 2))
    means = np.empty(n)
    stds = np.empty(n)
    for r in range(g_h):
        for c in range(g_w):
            i = r * g_w + c
            patch = img.intensities[ys[r]:ys[r + 1], xs[c]:xs[c + 1]]
            means[i] = patch.mean()
            stds[i] = patch.std()
            # pixel-center convention: mean of pixel centers, divided by the extent
            centroids[i, 0] = (xs[c] + xs[c + 1]) / (2.0 * img.width)
            centroids[i, 1] = (ys[r] + ys[r + 1]) / (2.0 * img.height)
    return centroids, means, stds


def _superpixel_nodes(img, n_superpixels, seed, n_iter):
    from sklearn.cluster import KMeans

    h, w = img.height, img.width
    if not 1 <= n_superpixels <= h * w:
        raise ConfigError(f"superpixel count must be in [1, {h * w}], got {n_superpixels}")
    yy, xx = np.mgrid[0:h, 0:w]
    cx = (xx.ravel() + 0.5) / w
    cy = (yy.ravel() + 0.5) / h
    vals = img.intensities.ravel()
    X = np.column_stack([vals, cx, cy])
    km = KMeans(n_clusters=n_superpixels, n_init=1, max_iter=n_iter, random_state=seed)
    labels = km.fit_predict(X)
    # relabel clusters by first pixel occurrence (row-major) for a stable node order
    _, first = np.unique(labels, return_index=True)
    order = np.argsort(first)
    remap = np.empty_like(order)
    remap[order] = np.arange(len(order))
    labels = remap[labels]
    n = len(order)
    counts = np.bincount(labels, minlength=n)
    means = np.bincount(labels, weights=vals, minlength=n) / counts
    sq = np.bincount(labels, weights=(vals - means[labels]) ** 2, minlength=n) / counts
    centroids = np.column_stack([
        np.bincount(labels, weights=cx, minlength=n) / counts,
        np.bincount(labels, weights=cy, minlength=n) / counts,
    ])
    return centroids, means, np.sqrt(sq)


def extract_nodes(image, grid=(10, 10), scheme="grid", n_superpixels=100, seed=0, n_iter=10):
    """Split ``image`` into nodes.

    The default ``"grid"`` scheme cuts the image into ``grid = (g_w, g_h)``
    non-overlapping patches, numbered row-major. ``"superpixel"`` clusters
    pixels with k-means on (intensity, x, y). Features are
    ``[mean, std, x, y]`` per node.
    """
    img = image if isinstance(image, SonarImage) else SonarImage(image)
    if scheme == "grid":
        centroids, means, stds = _grid_nodes(img, tuple(grid))
    elif scheme == "superpixel":
        centroids, means, stds = _superpixel_nodes(img, int(n_superpixels), seed, n_iter)
    else:
        raise ConfigError(f"unknown node extraction scheme {scheme!r}")
    features = np.column_stack([means, stds, centroids[:, 0], centroids[:, 1]])
    return NodeSet(centroids, means, features, (img.width, img.height))


def _floor(delta):
    return np.where(delta > 0.0, delta, EPS)


def _pairwise(nodes):
    diff = nodes.centroids[:, None, :] - nodes.centroids[None, :, :]
    sq_dist = np.einsum("ijk,ijk->ij", diff, diff)
    fdiff = np.abs(nodes.mean_intensity[:, None] - nodes.mean_intensity[None, :])
    return sq_dist, fdiff


def _row_means(dist, columns):
    """Mean of ``dist[i, columns[i]]`` for every row, summed in column order."""
    return np.array([dist[i, np.sort(cols)].mean() for i, cols in enumerate(columns)])


def row_scale_params(nodes):
    """Per-row mean spatial distance and mean intensity distance to all other nodes."""
    n = nodes.n
    if n < 2:
        raise InsufficientNodesError(f"need at least 2 nodes, got {n}")
    sq_dist, fdiff = _pairwise(nodes)
    others = [np.delete(np.arange(n), i) for i in range(n)]
    delta_x = _row_means(np.sqrt(sq_dist), others)
    delta_f = _row_means(fdiff, others)
    return _floor(delta_x), _floor(delta_f)


def coord_affinity(p_i, p_j, delta_x_i):
    p_i = np.asarray(p_i, dtype=np.float64)
    p_j = np.asarray(p_j, dtype=np.float64)
    sq = np.sum((p_i - p_j) ** 2, axis=-1)
    return np.exp(-sq / np.square(delta_x_i))


def pixel_affinity(f_i, f_j, delta_f_i):
    ratio = np.abs(np.asarray(f_i, dtype=np.float64) - f_j) / np.square(delta_f_i)
    return 1.0 / (1.0 + np.exp(-np.square(ratio)))


def joint_affinity(sq_dist, fdiff, delta_x, delta_f, gamma):
    """Elementwise mix of both kernels from precomputed squared distances.

    ``delta_x`` / ``delta_f`` broadcast against the distance arrays (pass
    column vectors for row-wise scales).
    """
    coord = np.exp(-sq_dist / np.square(delta_x))
    pix = 1.0 / (1.0 + np.exp(-np.square(fdiff / np.square(delta_f))))
    return gamma * coord + (1.0 - gamma) * pix


def correlation_matrix(nodes, gamma=0.5):
    if not 0.0 <= gamma <= 1.0:
        raise ConfigError(f"gamma must be in [0, 1], got {gamma}")
    delta_x, delta_f = row_scale_params(nodes)
    sq_dist, fdiff = _pairwise(nodes)
    W = joint_affinity(sq_dist, fdiff, delta_x[:, None], delta_f[:, None], gamma)
    return CorrelationMatrix(W, delta_x, delta_f, float(gamma))
