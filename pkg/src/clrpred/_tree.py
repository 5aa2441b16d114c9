"""Compiled CART kernels (Gini criterion) used by the random forest."""

import numpy as np
from numba import njit


@njit(cache=True)
def build_tree(X, y, sample_idx, n_classes, max_depth, min_samples_split,
               min_samples_leaf, max_features, seed):
    """Grow one classification tree on ``sample_idx`` (duplicates allowed).

    ``max_depth < 0`` means unlimited. Returns flat node arrays
    ``(feature, threshold, left, right, value)``; leaves have feature -1.
    """
    np.random.seed(seed)
    n_features = X.shape[1]
    idx = sample_idx.copy()
    n_samples = idx.shape[0]
    cap = 2 * n_samples + 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros((cap, n_classes))

    st_node = np.empty(cap, dtype=np.int64)
    st_start = np.empty(cap, dtype=np.int64)
    st_end = np.empty(cap, dtype=np.int64)
    st_depth = np.empty(cap, dtype=np.int64)
    sp = 0
    st_node[0] = 0
    st_start[0] = 0
    st_end[0] = n_samples
    st_depth[0] = 0
    sp = 1
    n_nodes = 1

    total = np.zeros(n_classes, dtype=np.int64)
    cl = np.zeros(n_classes, dtype=np.int64)
    cr = np.zeros(n_classes, dtype=np.int64)
    vals = np.empty(n_samples)
    labs = np.empty(n_samples, dtype=np.int64)

    while sp > 0:
        sp -= 1
        node = st_node[sp]
        start = st_start[sp]
        end = st_end[sp]
        depth = st_depth[sp]
        m = end - start

        total[:] = 0
        for t in range(start, end):
            total[y[idx[t]]] += 1
        n_present = 0
        for c in range(n_classes):
            value[node, c] = total[c] / m
            if total[c] > 0:
                n_present += 1

        if n_present <= 1 or (max_depth >= 0 and depth >= max_depth):
            continue
        if m < min_samples_split or m < 2 * min_samples_leaf:
            continue

        sq_total = 0
        for c in range(n_classes):
            sq_total += total[c] * total[c]

        best_score = -1.0
        best_f = -1
        best_thr = 0.0
        perm = np.random.permutation(n_features)
        visited = 0
        for fi in range(n_features):
            if visited >= max_features:
                break
            f = perm[fi]
            for t in range(m):
                vals[t] = X[idx[start + t], f]
            order = np.argsort(vals[:m], kind="mergesort")
            if vals[order[0]] >= vals[order[m - 1]]:
                continue
            visited += 1
            for t in range(m):
                labs[t] = y[idx[start + order[t]]]
            cl[:] = 0
            for c in range(n_classes):
                cr[c] = total[c]
            sql = 0
            sqr = sq_total
            for pos in range(m - 1):
                c = labs[pos]
                sql += 2 * cl[c] + 1
                sqr -= 2 * cr[c] - 1
                cl[c] += 1
                cr[c] -= 1
                a = vals[order[pos]]
                b = vals[order[pos + 1]]
                if b <= a:
                    continue
                nl = pos + 1
                nr = m - nl
                if nl < min_samples_leaf or nr < min_samples_leaf:
                    continue
                score = sql / nl + sqr / nr
                if score > best_score + 1e-12:
                    best_score = score
                    best_f = f
                    thr = 0.5 * (a + b)
                    if thr >= b:
                        thr = a
                    best_thr = thr

        if best_f < 0:
            continue

        # in-place partition of idx[start:end]
        i = start
        j = end - 1
        while i <= j:
            if X[idx[i], best_f] <= best_thr:
                i += 1
            else:
                tmp = idx[i]
                idx[i] = idx[j]
                idx[j] = tmp
                j -= 1
        feature[node] = best_f
        threshold[node] = best_thr
        left[node] = n_nodes
        right[node] = n_nodes + 1
        st_node[sp] = n_nodes
        st_start[sp] = start
        st_end[sp] = i
        st_depth[sp] = depth + 1
        sp += 1
        st_node[sp] = n_nodes + 1
        st_start[sp] = i
        st_end[sp] = end
        st_depth[sp] = depth + 1
        sp += 1
        n_nodes += 2

    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(), left[:n_nodes].copy(),
            right[:n_nodes].copy(), value[:n_nodes].copy())


@njit(cache=True)
def apply_tree(X, feature, threshold, left, right, value):
    out = np.empty((X.shape[0], value.shape[1]))
    for r in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            if X[r, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[r] = value[node]
    return out
