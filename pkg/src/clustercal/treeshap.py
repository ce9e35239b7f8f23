"""Exact path-dependent SHAP attributions for tree ensembles.

Implements the polynomial-time recursion with cover-weighted expectations;
``shap_values`` returns per-feature attributions whose sum plus the base
value reproduces each margin exactly. ``brute_force_shap`` is the
independent subset-enumeration oracle used by the tests.
"""

from __future__ import annotations

import math
from itertools import combinations

import numpy as np

from .gbt import TreeEnsemble, Tree

__all__ = ["shap_values", "brute_force_shap", "expected_value"]

try:
    from numba import njit as _njit
    _HAVE_NUMBA = True
except Exception:  # pragma: no cover - numba is normally present
    _HAVE_NUMBA = False

    def _njit(**kw):
        def deco(f):
            return f
        return deco


def _make_recurse(jit):
    """Build the recursive kernel, optionally numba-compiled."""

    def recurse(feature, threshold, left, right, value, cover, x, phi,
                node, pd, pz, po, pw, plen, pi, frac_zero, frac_one):
        l = plen
        cap = len(pd)
        d = np.empty(cap, dtype=np.int64)
        z = np.empty(cap)
        o = np.empty(cap)
        w = np.empty(cap)
        for i in range(l):
            d[i] = pd[i]
            z[i] = pz[i]
            o[i] = po[i]
            w[i] = pw[i]
        # EXTEND with (frac_zero, frac_one, pi)
        d[l] = pi
        z[l] = frac_zero
        o[l] = frac_one
        w[l] = 1.0 if l == 0 else 0.0
        for i in range(l - 1, -1, -1):
            w[i + 1] += frac_one * w[i] * (i + 1) / (l + 1)
            w[i] = frac_zero * w[i] * (l - i) / (l + 1)
        l = l + 1

        if feature[node] < 0:  # leaf
            for i in range(1, l):
                # sum of weights after unwinding element i
                total = 0.0
                one_f = o[i]
                zero_f = z[i]
                nxt = w[l - 1]
                if one_f != 0.0:
                    for j in range(l - 2, -1, -1):
                        tmp = nxt * l / ((j + 1) * one_f)
                        total += tmp
                        nxt = w[j] - tmp * zero_f * (l - 1 - j) / l
                else:
                    for j in range(l - 2, -1, -1):
                        total += w[j] * l / (zero_f * (l - 1 - j))
                phi[d[i]] += total * (one_f - zero_f) * value[node]
            return

        split = feature[node]
        if x[split] <= threshold[node]:
            hot, cold = left[node], right[node]
        else:
            hot, cold = right[node], left[node]
        inc_zero = 1.0
        inc_one = 1.0
        # undo a previous occurrence of this feature along the path
        k = -1
        for i in range(1, l):
            if d[i] == split:
                k = i
                break
        if k >= 0:
            inc_zero = z[k]
            inc_one = o[k]
            # UNWIND element k in place
            nxt = w[l - 1]
            for j in range(l - 2, -1, -1):
                if inc_one != 0.0:
                    tmp = w[j]
                    w[j] = nxt * l / ((j + 1) * inc_one)
                    nxt = tmp - w[j] * inc_zero * (l - 1 - j) / l
                else:
                    w[j] = w[j] * l / (inc_zero * (l - 1 - j))
            for j in range(k, l - 1):
                d[j] = d[j + 1]
                z[j] = z[j + 1]
                o[j] = o[j + 1]
            l -= 1

        recurse(feature, threshold, left, right, value, cover, x, phi,
                hot, d, z, o, w, l, split,
                inc_zero * cover[hot] / cover[node], inc_one)
        recurse(feature, threshold, left, right, value, cover, x, phi,
                cold, d, z, o, w, l, split,
                inc_zero * cover[cold] / cover[node], 0.0)

    if jit:
        recurse = _njit(cache=False)(recurse)

    def run(feature, threshold, left, right, value, cover, X, phi, cap):
        pd = np.empty(cap, dtype=np.int64)
        pz = np.empty(cap)
        po = np.empty(cap)
        pw = np.empty(cap)
        for s in range(len(X)):
            recurse(feature, threshold, left, right, value, cover, X[s], phi[s],
                    0, pd, pz, po, pw, 0, -1, 1.0, 1.0)

    if jit:
        run = _njit(cache=False)(run)
    return run


_RUN_JIT = None
_RUN_PY = None


def _get_run(jit: bool):
    global _RUN_JIT, _RUN_PY
    if jit and _HAVE_NUMBA:
        if _RUN_JIT is None:
            _RUN_JIT = _make_recurse(True)
        return _RUN_JIT
    if _RUN_PY is None:
        _RUN_PY = _make_recurse(False)
    return _RUN_PY


def expected_value(ens: TreeEnsemble) -> float:
    """Cover-weighted ensemble mean: the SHAP base value."""
    return ens.base_score + sum(t.expected_value() for t in ens.trees)


def shap_values(ens: TreeEnsemble, X, use_numba: bool | None = None):
    """Per-sample, per-feature margin attributions and the base value.

    base + sum_j phi[i, j] equals margin(x_i) for every sample.
    """
    X = ens._check(np.asarray(X, dtype=np.float64))
    phi = np.zeros((len(X), ens.n_features))
    if use_numba is None:
        use_numba = _HAVE_NUMBA and len(X) * max(len(ens.trees), 1) > 20000
    run = _get_run(use_numba)
    for tree in ens.trees:
        for c in tree.cover:
            if c <= 0:
                raise ValueError("tree has a node with non-positive cover")
        cap = tree.depth() + 2
        run(tree.feature, tree.threshold, tree.left, tree.right,
            tree.value, tree.cover, X, phi, cap)
    return phi, expected_value(ens)


# brute-force oracle ------------------------------------------------------

def _exp_value_subset(tree: Tree, x, subset: frozenset, node: int = 0) -> float:
    """Conditional expectation: follow x on subset features, cover-average otherwise."""
    if tree.feature[node] < 0:
        return float(tree.value[node])
    f = tree.feature[node]
    l, r = tree.left[node], tree.right[node]
    if f in subset:
        child = l if x[f] <= tree.threshold[node] else r
        return _exp_value_subset(tree, x, subset, child)
    wl, wr = tree.cover[l], tree.cover[r]
    return (wl * _exp_value_subset(tree, x, subset, l)
            + wr * _exp_value_subset(tree, x, subset, r)) / tree.cover[node]


def brute_force_shap(ens: TreeEnsemble, X) -> tuple[np.ndarray, float]:
    """Exact Shapley values by enumerating all feature subsets per tree.

    Exponential in the number of features participating in each tree; only
    usable for small trees. Serves as the independent oracle for
    :func:`shap_values`.
    """
    X = ens._check(np.asarray(X, dtype=np.float64))
    phi = np.zeros((len(X), ens.n_features))
    for tree in ens.trees:
        feats = sorted({int(f) for f in tree.feature if f >= 0})
        m = len(feats)
        if m == 0:
            continue
        for s in range(len(X)):
            x = X[s]
            cache = {}

            def ev(sub):
                if sub not in cache:
                    cache[sub] = _exp_value_subset(tree, x, sub)
                return cache[sub]

            for f in feats:
                others = [g for g in feats if g != f]
                total = 0.0
                for k in range(m):
                    weight = math.factorial(k) * math.factorial(m - k - 1) / math.factorial(m)
                    for sub in combinations(others, k):
                        fs = frozenset(sub)
                        total += weight * (ev(fs | {f}) - ev(fs))
                phi[s, f] += total
    return phi, expected_value(ens)
