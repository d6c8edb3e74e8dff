"""Compiled kernels for CART growth and prediction.

Labels are 0 (alone) and 1 (with_others). Trees are stored as flat arrays;
``left[i] == -1`` marks a leaf.
"""
import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


@njit(cache=True, nogil=True)
def _splitmix(state):
    state = state + _GOLDEN
    z = state
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return state, z ^ (z >> np.uint64(31))


@njit(cache=True, nogil=True)
def grow(X, y, rows, weights, mtry, max_depth, min_leaf, min_split, seed):
    """Grow one tree on ``X[rows]``; ``max_depth < 0`` means unlimited.

    ``weights[i]`` is the multiplicity of ``rows[i]`` (bootstrap duplicates
    collapsed); every count below is a weighted count.

    At each node features are visited in a random order until ``mtry``
    non-constant ones have been scored. The split maximizing the Gini purity
    score wins; near-equal scores go to the lower feature index, then the
    lower threshold.
    """
    n_rows = rows.shape[0]
    p = X.shape[1]
    cap = 2 * n_rows + 1
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap, np.float64)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    counts = np.zeros((cap, 2), np.int64)

    idx = np.arange(n_rows)
    buf = np.empty(n_rows, np.int64)
    ws = np.empty(n_rows, np.int64)
    vals = np.empty(n_rows, np.float64)
    ys = np.empty(n_rows, np.int64)
    perm = np.arange(p)
    state = np.uint64(seed)

    # stack of (node, start, end, depth)
    stack = np.empty((cap, 4), np.int64)
    top = 0
    stack[0, 0] = 0
    stack[0, 1] = 0
    stack[0, 2] = n_rows
    stack[0, 3] = 0
    top = 1
    n_nodes = 1

    while top > 0:
        top -= 1
        node = stack[top, 0]
        start = stack[top, 1]
        end = stack[top, 2]
        depth = stack[top, 3]
        m = end - start
        n = 0
        c1 = 0
        for i in range(start, end):
            w = weights[idx[i]]
            n += w
            c1 += w * y[rows[idx[i]]]
        c0 = n - c1
        counts[node, 0] = c0
        counts[node, 1] = c1
        if c0 == 0 or c1 == 0 or n < min_split or (max_depth >= 0 and depth >= max_depth):
            continue

        # random feature order (Fisher-Yates)
        for i in range(p):
            perm[i] = i
        for i in range(p - 1, 0, -1):
            state, draw = _splitmix(state)
            j = np.int64(draw % np.uint64(i + 1))
            tmp = perm[i]
            perm[i] = perm[j]
            perm[j] = tmp

        eps = 1e-12 * n
        best_score = -1.0
        best_f = -1
        best_thr = 0.0
        scored = 0
        for k in range(p):
            if scored >= mtry:
                break
            f = perm[k]
            for i in range(m):
                vals[i] = X[rows[idx[start + i]], f]
            order = np.argsort(vals[:m], kind="mergesort")
            if vals[order[0]] == vals[order[m - 1]]:
                continue
            scored += 1
            for i in range(m):
                j = idx[start + order[i]]
                ys[i] = y[rows[j]] * weights[j]
                ws[i] = weights[j]
            l1 = 0
            nl = 0
            for i in range(m - 1):
                l1 += ys[i]
                nl += ws[i]
                nr = n - nl
                a = vals[order[i]]
                b = vals[order[i + 1]]
                if a == b or nl < min_leaf or nr < min_leaf:
                    continue
                l0 = nl - l1
                r1 = c1 - l1
                r0 = nr - r1
                score = (l0 * l0 + l1 * l1) / nl + (r0 * r0 + r1 * r1) / nr
                thr = (a + b) / 2.0
                if thr >= b:
                    thr = a
                if score > best_score + eps:
                    take = True
                elif score >= best_score - eps:
                    take = f < best_f or (f == best_f and thr < best_thr)
                else:
                    take = False
                if take:
                    best_score = score
                    best_f = f
                    best_thr = thr
        if best_f < 0:
            continue

        # stable partition: x <= thr goes left
        nl = 0
        for i in range(start, end):
            if X[rows[idx[i]], best_f] <= best_thr:
                idx[start + nl] = idx[i]
                nl += 1
            else:
                buf[i - start - nl] = idx[i]
        for i in range(m - nl):
            idx[start + nl + i] = buf[i]

        feature[node] = best_f
        threshold[node] = best_thr
        lnode = n_nodes
        rnode = n_nodes + 1
        n_nodes += 2
        left[node] = lnode
        right[node] = rnode
        # push right first so the left subtree is numbered first
        stack[top, 0] = rnode
        stack[top, 1] = start + nl
        stack[top, 2] = end
        stack[top, 3] = depth + 1
        top += 1
        stack[top, 0] = lnode
        stack[top, 1] = start
        stack[top, 2] = start + nl
        stack[top, 3] = depth + 1
        top += 1

    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(), left[:n_nodes].copy(),
            right[:n_nodes].copy(), counts[:n_nodes].copy())


@njit(cache=True, nogil=True)
def leaf_votes(X, feature, threshold, left, right, counts):
    """Majority class of the leaf reached by each row (ties vote 0)."""
    out = np.empty(X.shape[0], np.int64)
    for i in range(X.shape[0]):
        node = 0
        while left[node] != -1:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = 1 if counts[node, 1] > counts[node, 0] else 0
    return out
