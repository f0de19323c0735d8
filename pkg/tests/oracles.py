"""Independent brute-force reference implementations.

Written with plain loops and the ``math`` module only, so they share no code
path with the vectorized package functions they check.
"""

import itertools
import math

import numpy as np


def pairwise_scales(points, intensities, columns):
    """Mean distance from each node to the nodes in ``columns[i]``."""
    dx, df = [], []
    for i, cols in enumerate(columns):
        sx = 0.0
        sf = 0.0
        for j in sorted(cols):
            sx += math.hypot(points[i][0] - points[j][0], points[i][1] - points[j][1])
            sf += abs(intensities[i] - intensities[j])
        mx, mf = sx / len(cols), sf / len(cols)
        dx.append(mx if mx > 0 else 1e-9)
        df.append(mf if mf > 0 else 1e-9)
    return dx, df


def affinity(pi, pj, fi, fj, dx, df, gamma):
    d2 = (pi[0] - pj[0]) ** 2 + (pi[1] - pj[1]) ** 2
    coord = math.exp(-d2 / (dx * dx))
    ratio = abs(fi - fj) / (df * df)
    pix = 1.0 / (1.0 + math.exp(-(ratio * ratio)))
    return gamma * coord + (1.0 - gamma) * pix


def correlation(points, intensities, gamma):
    n = len(points)
    dx, df = pairwise_scales(points, intensities, [[j for j in range(n) if j != i] for i in range(n)])
    return [[affinity(points[i], points[j], intensities[i], intensities[j], dx[i], df[i], gamma)
             for j in range(n)] for i in range(n)]


def topk_exhaustive(row, self_index, k):
    """Enumerate every k-subset of the other indices; keep those whose sorted values
    equal the best possible, and return the lexicographically smallest one."""
    others = [j for j in range(len(row)) if j != self_index]
    best_vals, best_set = None, None
    for combo in itertools.combinations(others, k):
        vals = sorted((row[j] for j in combo), reverse=True)
        if best_vals is None or vals > best_vals:
            best_vals, best_set = vals, combo
        # combinations() yields subsets in lexicographic order, so the first
        # optimum found is the smallest one
    return set(best_set)


_COMBOS = {}


def _combinations(m, k):
    if (m, k) not in _COMBOS:
        count = math.comb(m, k)
        flat = np.fromiter(itertools.chain.from_iterable(itertools.combinations(range(m), k)),
                           dtype=np.int16, count=count * k)
        _COMBOS[(m, k)] = flat.reshape(count, k)
    return _COMBOS[(m, k)]


def topk_enumerated(W, k):
    """Exhaustive top-k for every row of ``W`` at sizes where sorting each subset is too slow.

    Every k-subset of the other indices is scored by the integer sum of its dense
    value ranks. Rank is strictly increasing in value, so the max-sum subsets are
    exactly the top-k multisets, and integer sums cannot tie by rounding. Subsets
    are enumerated in lexicographic order and argmax keeps the first optimum.
    """
    W = np.asarray(W)
    n = len(W)
    combos = _combinations(n - 1, k)
    out = []
    for i in range(n):
        others = np.array([j for j in range(n) if j != i])
        levels = sorted(set(W[i, others].tolist()))
        rank = np.array([levels.index(v) for v in W[i, others].tolist()], dtype=np.int64)
        best = int(np.argmax(rank[combos].sum(axis=1)))
        out.append(set(others[combos[best]].tolist()))
    return out


def topk_threshold(row, self_index, k):
    """Same answer via a per-element scan: everything above the k-th value, then
    the lowest-indexed entries equal to it."""
    others = [j for j in range(len(row)) if j != self_index]
    kth = sorted((row[j] for j in others), reverse=True)[k - 1]
    chosen = [j for j in others if row[j] > kth]
    for j in others:
        if len(chosen) == k:
            break
        if row[j] == kth:
            chosen.append(j)
    return set(chosen)


def reweighted(points, intensities, neighbor_sets, gamma):
    n = len(points)
    cols = [[j for j in nb if j != i] for i, nb in enumerate(neighbor_sets)]
    dx, df = pairwise_scales(points, intensities, cols)
    out = [[0.0] * n for _ in range(n)]
    for i, nb in enumerate(neighbor_sets):
        for j in nb:
            out[i][j] = affinity(points[i], points[j], intensities[i], intensities[j], dx[i], df[i], gamma)
    return out


def dense_masked_softmax(logits, mask):
    """Softmax with an additive -1e30 penalty off the mask."""
    z = np.where(mask, logits, logits - 1e30)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def gat_layer_loops(h, Q, a, neighbor_lists, slope, combine, activation):
    """Literal per-edge evaluation: concat, LeakyReLU, softmax over N_i, weighted sum."""
    H, Fp, _ = Q.shape
    n = len(h)
    per_head = []
    for hd in range(H):
        z = [Q[hd] @ h[i] for i in range(n)]
        out = np.zeros((n, Fp))
        for i in range(n):
            e = []
            for j in neighbor_lists[i]:
                s = float(a[hd] @ np.concatenate([z[i], z[j]]))
                e.append(s if s > 0 else slope * s)
            m = max(e)
            w = [math.exp(v - m) for v in e]
            tot = sum(w)
            for wj, j in zip(w, neighbor_lists[i]):
                out[i] += (wj / tot) * z[j]
        per_head.append(out)
    act = {"elu": lambda x: np.where(x > 0, x, np.expm1(np.minimum(x, 0))),
           "identity": lambda x: x, "relu": lambda x: np.maximum(x, 0)}[activation]
    if combine == "concat":
        return np.concatenate([act(p) for p in per_head], axis=1)
    return act(sum(per_head) / H)
