"""Array-backed binary decision trees grown level by level.

All nodes of one depth level are split in a single vectorised pass per
feature: rows are kept in per-feature presorted order and regrouped by node
with a stable integer sort, so one pass of cumulative sums scores every
candidate threshold of every node at once.

Split ties are resolved toward the lowest feature index, then the lowest
threshold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LEAF = -1


@dataclass
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    depth: int

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature == LEAF))

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by every row of ``X``."""
        node = np.zeros(X.shape[0], dtype=np.int64)
        for _ in range(self.depth):
            f = self.feature[node]
            inner = np.flatnonzero(f != LEAF)
            if inner.size == 0:
                break
            nd = node[inner]
            go_left = X[inner, f[inner]] <= self.threshold[nd]
            node[inner] = np.where(go_left, self.left[nd], self.right[nd])
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_dict(self) -> dict:
        return {"feature": self.feature.tolist(), "threshold": self.threshold.tolist(),
                "left": self.left.tolist(), "right": self.right.tolist(),
                "value": self.value.tolist(), "depth": self.depth}

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(np.asarray(d["feature"], dtype=np.int64), np.asarray(d["threshold"], dtype=float),
                   np.asarray(d["left"], dtype=np.int64), np.asarray(d["right"], dtype=np.int64),
                   np.asarray(d["value"], dtype=float), int(d["depth"]))


def presort(X: np.ndarray) -> list[np.ndarray]:
    return [np.argsort(X[:, f], kind="stable") for f in range(X.shape[1])]


# ---------------------------------------------------------------- criteria
# Each criterion maps summed statistics of a candidate child to a score;
# a split's gain is score(left) + score(right) - score(parent).

def _xlogx(c):
    return np.where(c > 0, c * np.log(np.where(c > 0, c, 1.0)), 0.0)


def _score(criterion: str, S: np.ndarray, w: np.ndarray, l2: float) -> np.ndarray:
    if criterion == "gini":
        return np.sum(S * S, axis=-1) / np.where(w > 0, w, 1.0)
    if criterion == "entropy":
        return np.sum(_xlogx(S), axis=-1) - _xlogx(w)
    # second-order regression: S = (sum gradient, sum hessian)
    return S[..., 0] ** 2 / (S[..., 1] + l2)


@dataclass
class SplitRules:
    max_depth: int
    min_leaf: float = 1.0
    min_split: float = 2.0
    max_features: int | None = None
    min_child_weight: float = 0.0
    l2: float = 0.0
    gamma: float = 0.0


def grow(X: np.ndarray, S: np.ndarray, weight: np.ndarray, criterion: str, rules: SplitRules,
         rng: np.random.Generator | None = None, orders: list[np.ndarray] | None = None,
         features: np.ndarray | None = None) -> tuple[Tree, list[np.ndarray]]:
    """Grow one tree on weighted rows.

    ``S`` holds per-row statistics already multiplied by ``weight`` (class
    indicators for classification, gradient/hessian pairs for boosting).
    Rows with zero weight are ignored. Returns the tree and the per-node
    statistic sums (for leaf values).
    """
    n, p = X.shape
    if orders is None:
        orders = presort(X)
    allowed = np.arange(p) if features is None else np.asarray(features)
    boost = criterion == "xgb"

    feat, thr, left, right = [LEAF], [0.0], [LEAF], [LEAF]
    node_S = [S[weight > 0].sum(axis=0)]
    node_w = [float(weight.sum())]

    # rows carry the position of their node within the current level; -1 once settled
    local = np.where(weight > 0, 0, -1).astype(np.int64)
    active = np.array([0], dtype=np.int64)
    depth_reached = 0
    for depth in range(rules.max_depth):
        k = active.size
        wsum = np.array([node_w[a] for a in active])
        ssum = np.array([node_S[a] for a in active])
        splittable = (wsum >= rules.min_split) & (wsum >= 2 * rules.min_leaf)
        if not boost:
            splittable &= np.count_nonzero(ssum > 0, axis=1) > 1
        if not splittable.any():
            break
        parent_score = _score(criterion, ssum, wsum, rules.l2)
        fmask = np.zeros((k, p), dtype=bool)
        if rules.max_features is not None and rules.max_features < allowed.size:
            keys = rng.random((k, allowed.size))
            pick = np.argsort(keys, axis=1)[:, :rules.max_features]
            fmask[np.arange(k)[:, None], allowed[pick]] = True
        else:
            fmask[:, allowed] = True

        cand = np.where(local >= 0, local, -1)
        cand[cand >= 0] = np.where(splittable[cand[cand >= 0]], cand[cand >= 0], -1)
        node_dtype = np.int16 if k < 32000 else np.int64

        best_gain = np.full(k, -np.inf)
        best_feat = np.full(k, LEAF, dtype=np.int64)
        best_thr = np.zeros(k)
        for f in allowed:
            o = orders[f]
            o = o[cand[o] >= 0]
            if o.size < 2:
                continue
            o = o[np.argsort(cand[o].astype(node_dtype), kind="stable")]
            nodes = cand[o]
            vals = X[o, f]
            cw = np.cumsum(weight[o])
            cs = np.cumsum(S[o], axis=0)
            starts = np.flatnonzero(np.r_[True, nodes[1:] != nodes[:-1]])
            seg_nodes = nodes[starts]
            seg_id = np.repeat(np.arange(starts.size), np.diff(np.r_[starts, nodes.size]))
            base_w = np.r_[0.0, cw][starts][seg_id]
            base_s = np.vstack([np.zeros(S.shape[1]), cs])[starts][seg_id]
            lw = cw - base_w
            ls = cs - base_s
            rw = wsum[nodes] - lw
            rs = ssum[nodes] - ls
            ok = np.zeros(nodes.size, dtype=bool)
            ok[:-1] = (nodes[1:] == nodes[:-1]) & (vals[1:] > vals[:-1])
            ok &= (lw >= rules.min_leaf) & (rw >= rules.min_leaf) & fmask[nodes, f]
            if boost:
                ok &= (ls[:, 1] >= rules.min_child_weight) & (rs[:, 1] >= rules.min_child_weight)
            if not ok.any():
                continue
            gain = _score(criterion, ls, lw, rules.l2) + _score(criterion, rs, rw, rules.l2) - parent_score[nodes]
            if boost:
                gain = 0.5 * gain - rules.gamma
            gain = np.where(ok, gain, -np.inf)
            seg_max = np.maximum.reduceat(gain, starts)
            pos = np.where(gain == seg_max[seg_id], np.arange(gain.size), gain.size)
            first = np.minimum.reduceat(pos, starts)
            better = np.isfinite(seg_max) & (seg_max > best_gain[seg_nodes])
            if not better.any():
                continue
            at = first[better]
            t = 0.5 * (vals[at] + vals[at + 1])
            t = np.where(t < vals[at + 1], t, vals[at])
            idx = seg_nodes[better]
            best_gain[idx] = seg_max[better]
            best_feat[idx] = f
            best_thr[idx] = t

        do_split = splittable & (best_gain > (0.0 if boost else 1e-12))
        if not do_split.any():
            break
        depth_reached = depth + 1
        split_nodes = np.flatnonzero(do_split)
        next_local = np.full(k, -1, dtype=np.int64)
        next_local[split_nodes] = np.arange(split_nodes.size)
        first_child = len(feat)
        for j, i in enumerate(split_nodes):
            a = int(active[i])
            feat[a], thr[a] = int(best_feat[i]), float(best_thr[i])
            left[a], right[a] = first_child + 2 * j, first_child + 2 * j + 1
        m = 2 * split_nodes.size
        feat += [LEAF] * m
        thr += [0.0] * m
        left += [LEAF] * m
        right += [LEAF] * m

        rows = np.flatnonzero(local >= 0)
        li = local[rows]
        moving = do_split[li]
        rows, li = rows[moving], li[moving]
        go_left = X[rows, best_feat[li]] <= best_thr[li]
        local[:] = -1
        local[rows] = 2 * next_local[li] + np.where(go_left, 0, 1)
        cw_child = np.bincount(local[rows], weights=weight[rows], minlength=m)
        cs_child = np.column_stack([np.bincount(local[rows], weights=S[rows, j], minlength=m)
                                    for j in range(S.shape[1])])
        node_S += list(cs_child)
        node_w += cw_child.tolist()
        active = np.arange(first_child, first_child + m)

    tree = Tree(np.asarray(feat, dtype=np.int64), np.asarray(thr), np.asarray(left, dtype=np.int64),
                np.asarray(right, dtype=np.int64), np.zeros(len(feat)), depth_reached)
    return tree, node_S
