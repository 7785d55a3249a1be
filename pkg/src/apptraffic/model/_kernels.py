"""numba kernels for tree growing, prediction and path-dependent tree SHAP.

A tree is five parallel arrays indexed by node id: ``feature`` (-1 at leaves),
``threshold`` (rows with x <= threshold go left), ``left``/``right`` child ids,
``value`` (leaf output) and ``cover`` (training rows reaching the node). Node 0
is the root; ids are assigned level by level.
"""

import numba as nb
import numpy as np

GAIN_REL_TOL = 1e-12


@nb.njit(cache=True, nogil=True)
def _new_tree(max_nodes):
    feature = np.full(max_nodes, -1, dtype=np.int32)
    threshold = np.zeros(max_nodes)
    left = np.full(max_nodes, -1, dtype=np.int32)
    right = np.full(max_nodes, -1, dtype=np.int32)
    value = np.zeros(max_nodes)
    cover = np.zeros(max_nodes)
    return feature, threshold, left, right, value, cover


@nb.njit(cache=True, nogil=True, inline='always')
def _max4(sc, m):
    # four independent lanes so the loop is not latency bound
    a0 = a1 = a2 = a3 = -np.inf
    c = 0
    while c + 4 <= m:
        x0 = sc[c]
        x1 = sc[c + 1]
        x2 = sc[c + 2]
        x3 = sc[c + 3]
        a0 = x0 if x0 > a0 else a0
        a1 = x1 if x1 > a1 else a1
        a2 = x2 if x2 > a2 else a2
        a3 = x3 if x3 > a3 else a3
        c += 4
    while c < m:
        a0 = sc[c] if sc[c] > a0 else a0
        c += 1
    return max(max(a0, a1), max(a2, a3))

@nb.njit(cache=True, nogil=True)
def _best_split(src_o, xt, g, recip, a, b, min_leaf, gk, best, pre, xv, sc, rl, rr):
    """Best split of the rows src_o[:, a:b] that beats ``best``.

    Returns (score, feature, left row count); feature is -1 when nothing beats
    ``best``. Score is GL^2/NL + GR^2/NR, the variance reduction up to a constant.
    """
    p = src_o.shape[0]
    m = b - a
    lo = min_leaf - 1
    hi = m - min_leaf
    ns = hi - lo
    for i in range(ns):
        rl[i] = recip[lo + i + 1]
        rr[i] = recip[m - lo - i - 1]
    bf = -1
    bn = 0
    pr = pre[:m]
    xx = xv[:m]
    s_ = sc[:ns]
    for f in range(p):
        o = src_o[f, a:b]
        xf = xt[f]
        u = 0.0
        for i in range(m):
            r = o[i]
            u += g[r]
            pr[i] = u
            xx[i] = xf[r]
        u_ = pr[lo:hi]
        x0 = xx[lo:hi]
        x1 = xx[lo + 1:hi + 1]
        for i in range(ns):
            u = u_[i]
            v = gk - u
            s = u * u * rl[i] + v * v * rr[i]
            s_[i] = s if x1[i] > x0[i] else -np.inf
        mx = _max4(s_, ns)
        if mx > best:
            for i in range(ns):
                if s_[i] == mx:
                    bn = lo + i + 1
                    break
            best = mx
            bf = f
    return best, bf, bn

@nb.njit(cache=True, nogil=True)
def grow_tree_exact(order, xt, g, max_depth, min_leaf):
    """Exact greedy squared-loss tree, grown level-wise.

    order[f] lists row ids sorted by feature f (stable), xt[f, r] is the raw
    value. Each node owns the same column range [start, stop) in every row of
    a working copy of ``order``; splitting a node stably partitions that range
    per feature, so children stay sorted without re-sorting. Ties: the lowest
    feature, then the lowest threshold. Returns the tree arrays plus the leaf
    id of every training row.
    """
    p = order.shape[0]
    n = g.shape[0]
    src_o = order.copy()
    dst_o = np.empty_like(order)
    max_nodes = 2 ** (max_depth + 1) - 1
    feature = np.full(max_nodes, -1, dtype=np.int32)
    threshold = np.zeros(max_nodes)
    left = np.full(max_nodes, -1, dtype=np.int32)
    right = np.full(max_nodes, -1, dtype=np.int32)
    value = np.zeros(max_nodes)
    cover = np.zeros(max_nodes)
    leaf_of = np.zeros(n, dtype=np.int32)
    start = np.zeros(max_nodes, dtype=np.int64)
    stop = np.zeros(max_nodes, dtype=np.int64)
    gsum = np.zeros(max_nodes)
    g2sum = np.zeros(max_nodes)
    go_left = np.zeros(n, dtype=np.uint8)
    recip = np.zeros(n + 1)
    for i in range(1, n + 1):
        recip[i] = 1.0 / i
    pre = np.empty(n)
    xv = np.empty(n)
    sc = np.empty(n)
    rl = np.empty(n)
    rr = np.empty(n)
    for r in range(n):
        gsum[0] += g[r]
        g2sum[0] += g[r] * g[r]
    stop[0] = n
    cover[0] = n
    level = np.zeros(1, dtype=np.int64)
    n_nodes = 1
    for depth in range(max_depth):
        nxt = np.empty(2 * len(level), dtype=np.int64)
        n_next = 0
        last_level = depth + 1 == max_depth
        for k in level:
            a = start[k]
            b = stop[k]
            m = b - a
            gk = gsum[k]
            base = gk * gk * recip[m]
            best, bf, nl = base, -1, 0
            if m >= 2 * min_leaf:
                best, bf, nl = _best_split(src_o, xt, g, recip, a, b, min_leaf, gk, base,
                                           pre, xv, sc, rl, rr)
            sse = g2sum[k] - base
            gain = best - base
            if bf < 0 or not (gain > GAIN_REL_TOL * max(sse, 0.0) and gain > 0.0):
                value[k] = gk / m
                o = src_o[0, a:b]
                for i in range(m):
                    leaf_of[o[i]] = k
                continue
            o = src_o[bf, a:b]
            xlo = xt[bf, o[nl - 1]]
            xhi = xt[bf, o[nl]]
            t = 0.5 * (xlo + xhi)
            if t >= xhi:
                t = xlo
            lc = n_nodes
            rc = n_nodes + 1
            n_nodes += 2
            feature[k] = bf
            threshold[k] = t
            left[k] = lc
            right[k] = rc
            nxt[n_next] = lc
            nxt[n_next + 1] = rc
            n_next += 2
            sgl = 0.0
            sg2l = 0.0
            for i in range(nl):
                r = o[i]
                sgl += g[r]
                sg2l += g[r] * g[r]
                go_left[r] = 1
            for i in range(nl, m):
                go_left[o[i]] = 0
            start[lc] = a
            stop[lc] = a + nl
            start[rc] = a + nl
            stop[rc] = b
            gsum[lc] = sgl
            g2sum[lc] = sg2l
            cover[lc] = nl
            gsum[rc] = gk - sgl
            g2sum[rc] = g2sum[k] - sg2l
            cover[rc] = m - nl
            if last_level:
                for i in range(m):
                    r = o[i]
                    leaf_of[r] = lc if go_left[r] else rc
                continue
            for f in range(p):
                so = src_o[f, a:b]
                do = dst_o[f, a:b]
                li = 0
                ri = nl
                for i in range(m):
                    r = so[i]
                    t = go_left[r]
                    do[li if t else ri] = r
                    li += t
                    ri += 1 - t
        if n_next == 0:
            break
        if last_level:
            for i in range(n_next):
                k = nxt[i]
                value[k] = gsum[k] / cover[k]
            break
        src_o, dst_o = dst_o, src_o
        level = nxt[:n_next]
    if max_depth == 0:
        value[0] = gsum[0] / n
    return feature, threshold, left, right, value, cover, leaf_of


@nb.njit(cache=True, nogil=True)
def grow_tree_hist(codes, g, n_bins, max_depth, min_leaf):
    """Histogram variant: features pre-binned to uint8 codes.

    Node rows are kept contiguous in a permutation array; each node builds a
    (feature, bin) histogram of gradient sums and counts. The split "code <= b"
    is returned as threshold b (mapped back to a real cut by the caller).
    """
    n, p = codes.shape
    max_nodes = 2 ** (max_depth + 1) - 1
    feature, threshold, left, right, value, cover = _new_tree(max_nodes)
    leaf_of = np.zeros(n, dtype=np.int32)
    rows = np.arange(n)
    start = np.zeros(max_nodes, dtype=np.int64)
    stop = np.zeros(max_nodes, dtype=np.int64)
    depth_of = np.zeros(max_nodes, dtype=np.int64)
    stop[0] = n
    hist_g = np.zeros((p, n_bins))
    hist_n = np.zeros((p, n_bins), dtype=np.int64)
    scratch = np.empty(n, dtype=np.int64)

    n_nodes = 1
    k = 0
    while k < n_nodes:
        a, b = start[k], stop[k]
        m = b - a
        cover[k] = m
        gs = 0.0
        g2 = 0.0
        for i in range(a, b):
            gs += g[rows[i]]
            g2 += g[rows[i]] * g[rows[i]]
        best_gain = 0.0
        best_f = -1
        best_b = 0
        if depth_of[k] < max_depth and m >= 2 * min_leaf:
            hist_g[:, :] = 0.0
            hist_n[:, :] = 0
            for i in range(a, b):
                r = rows[i]
                gr = g[r]
                for f in range(p):
                    c = codes[r, f]
                    hist_g[f, c] += gr
                    hist_n[f, c] += 1
            base = gs * gs / m
            for f in range(p):
                gl = 0.0
                nl = 0
                for bb in range(n_bins - 1):
                    cnt = hist_n[f, bb]
                    if cnt == 0:
                        continue
                    gl += hist_g[f, bb]
                    nl += cnt
                    nr = m - nl
                    if nl < min_leaf:
                        continue
                    if nr < min_leaf:
                        break
                    grr = gs - gl
                    gain = gl * gl / nl + grr * grr / nr - base
                    if gain > best_gain:
                        best_gain = gain
                        best_f = f
                        best_b = bb
        sse = g2 - gs * gs / m
        if best_f >= 0 and best_gain > GAIN_REL_TOL * max(sse, 0.0):
            feature[k] = best_f
            threshold[k] = best_b
            lo = a
            hi = 0
            for i in range(a, b):
                r = rows[i]
                if codes[r, best_f] <= best_b:
                    rows[lo] = r
                    lo += 1
                else:
                    scratch[hi] = r
                    hi += 1
            for i in range(hi):
                rows[lo + i] = scratch[i]
            left[k] = n_nodes
            right[k] = n_nodes + 1
            start[n_nodes], stop[n_nodes] = a, lo
            start[n_nodes + 1], stop[n_nodes + 1] = lo, b
            depth_of[n_nodes] = depth_of[k] + 1
            depth_of[n_nodes + 1] = depth_of[k] + 1
            n_nodes += 2
        else:
            value[k] = gs / m
            for i in range(a, b):
                leaf_of[rows[i]] = k
        k += 1
    return feature, threshold, left, right, value, cover, leaf_of


@nb.njit(cache=True, nogil=True)
def predict_forest(X, feature, threshold, left, right, value, learning_rate, base):
    n = X.shape[0]
    n_trees = feature.shape[0]
    out = np.full(n, base)
    for i in range(n):
        acc = 0.0
        for t in range(n_trees):
            k = 0
            while feature[t, k] >= 0:
                if X[i, feature[t, k]] <= threshold[t, k]:
                    k = left[t, k]
                else:
                    k = right[t, k]
            acc += value[t, k]
        out[i] += learning_rate * acc
    return out


@nb.njit(cache=True, nogil=True)
def apply_forest(X, feature, threshold, left, right):
    """Leaf id per (row, tree)."""
    n = X.shape[0]
    n_trees = feature.shape[0]
    out = np.empty((n, n_trees), dtype=np.int32)
    for i in range(n):
        for t in range(n_trees):
            k = 0
            while feature[t, k] >= 0:
                if X[i, feature[t, k]] <= threshold[t, k]:
                    k = left[t, k]
                else:
                    k = right[t, k]
            out[i, t] = k
    return out


# -- path-dependent tree SHAP --------------------------------------------------
# The recursive kernel is not cached: reloading a cached recursive numba
# function crashes the interpreter.


@nb.njit(cache=True, nogil=True)
def _extend_path(fi, zf, of, pw, depth, zero_fraction, one_fraction, feature_index):
    fi[depth] = feature_index
    zf[depth] = zero_fraction
    of[depth] = one_fraction
    pw[depth] = 1.0 if depth == 0 else 0.0
    for i in range(depth - 1, -1, -1):
        pw[i + 1] += one_fraction * pw[i] * (i + 1.0) / (depth + 1.0)
        pw[i] = zero_fraction * pw[i] * (depth - i) / (depth + 1.0)


@nb.njit(cache=True, nogil=True)
def _unwind_path(fi, zf, of, pw, depth, path_index):
    one_fraction = of[path_index]
    zero_fraction = zf[path_index]
    next_one = pw[depth]
    for i in range(depth - 1, -1, -1):
        if one_fraction != 0.0:
            tmp = pw[i]
            pw[i] = next_one * (depth + 1.0) / ((i + 1.0) * one_fraction)
            next_one = tmp - pw[i] * zero_fraction * (depth - i) / (depth + 1.0)
        else:
            pw[i] = pw[i] * (depth + 1.0) / (zero_fraction * (depth - i))
    for i in range(path_index, depth):
        fi[i] = fi[i + 1]
        zf[i] = zf[i + 1]
        of[i] = of[i + 1]


@nb.njit(cache=True, nogil=True)
def _unwound_path_sum(fi, zf, of, pw, depth, path_index):
    one_fraction = of[path_index]
    zero_fraction = zf[path_index]
    next_one = pw[depth]
    total = 0.0
    for i in range(depth - 1, -1, -1):
        if one_fraction != 0.0:
            tmp = next_one * (depth + 1.0) / ((i + 1.0) * one_fraction)
            total += tmp
            next_one = pw[i] - tmp * zero_fraction * (depth - i) / (depth + 1.0)
        else:
            total += pw[i] / zero_fraction / ((depth - i) / (depth + 1.0))
    return total


@nb.njit(nogil=True)
def _shap_recurse(node, x, feature, threshold, left, right, value, cover, phi,
                  depth, pfi, pzf, pof, ppw, parent_zero, parent_one, parent_feature):
    # this node's path segment starts right after the parent's
    fi = pfi[depth + 1:]
    zf = pzf[depth + 1:]
    of = pof[depth + 1:]
    pw = ppw[depth + 1:]
    for i in range(depth + 1):
        fi[i] = pfi[i]
        zf[i] = pzf[i]
        of[i] = pof[i]
        pw[i] = ppw[i]
    _extend_path(fi, zf, of, pw, depth, parent_zero, parent_one, parent_feature)

    f = feature[node]
    if f < 0:
        for i in range(1, depth + 1):
            w = _unwound_path_sum(fi, zf, of, pw, depth, i)
            phi[fi[i]] += w * (of[i] - zf[i]) * value[node]
        return

    if x[f] <= threshold[node]:
        hot, cold = left[node], right[node]
    else:
        hot, cold = right[node], left[node]
    hot_zero = cover[hot] / cover[node]
    cold_zero = cover[cold] / cover[node]
    incoming_zero = 1.0
    incoming_one = 1.0

    path_index = 0
    while path_index <= depth:
        if fi[path_index] == f:
            break
        path_index += 1
    if path_index != depth + 1:
        incoming_zero = zf[path_index]
        incoming_one = of[path_index]
        _unwind_path(fi, zf, of, pw, depth, path_index)
        depth -= 1

    _shap_recurse(hot, x, feature, threshold, left, right, value, cover, phi,
                  depth + 1, fi, zf, of, pw, hot_zero * incoming_zero, incoming_one, f)
    _shap_recurse(cold, x, feature, threshold, left, right, value, cover, phi,
                  depth + 1, fi, zf, of, pw, cold_zero * incoming_zero, 0.0, f)


@nb.njit(nogil=True)
def shap_forest(X, feature, threshold, left, right, value, cover, max_depth):
    """Path-dependent SHAP values, shape (rows, features), for a forest whose
    leaf values already include any shrinkage."""
    n, p = X.shape
    n_trees = feature.shape[0]
    size = (max_depth + 3) * (max_depth + 4) // 2 + 2
    phi = np.zeros((n, p))
    fi = np.empty(size, dtype=np.int64)
    zf = np.empty(size)
    of = np.empty(size)
    pw = np.empty(size)
    for i in range(n):
        x = X[i]
        row = phi[i]
        for t in range(n_trees):
            if feature[t, 0] < 0:
                continue
            _shap_recurse(0, x, feature[t], threshold[t], left[t], right[t], value[t], cover[t],
                          row, 0, fi, zf, of, pw, 1.0, 1.0, -1)
    return phi


@nb.njit(cache=True, nogil=True)
def expected_value_forest(value, cover, feature):
    """Cover-weighted mean output of the forest (sum over trees)."""
    total = 0.0
    for t in range(feature.shape[0]):
        root = cover[t, 0]
        for k in range(feature.shape[1]):
            if feature[t, k] < 0 and cover[t, k] > 0:
                total += value[t, k] * cover[t, k] / root
    return total
