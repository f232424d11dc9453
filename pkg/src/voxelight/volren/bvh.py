"""Bounding volume hierarchy over primitive AABBs.

The BVH only prunes: it returns a candidate mask that is a superset of
the true ray/box hits, and the renderer runs the identical oriented
slab test on whatever survives.  Pruned pairs can never intersect, so a
render with the BVH is bitwise identical to brute force over all pairs.
Node boxes are inflated by a small relative epsilon so borderline
float rounding can only add candidates, never drop a real hit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError

_LEAF_SIZE = 2
_INFLATE = 1e-6


@dataclass
class BVH:
    node_lo: np.ndarray  # [N, 3]
    node_hi: np.ndarray  # [N, 3]
    node_left: np.ndarray  # [N] child index or -1 at leaves
    node_right: np.ndarray  # [N]
    node_start: np.ndarray  # [N] leaf range into prim_order
    node_count: np.ndarray  # [N]
    prim_order: np.ndarray  # [K]

    @property
    def n_prims(self) -> int:
        return len(self.prim_order)


def build_bvh(aabb_lo: np.ndarray, aabb_hi: np.ndarray) -> BVH:
    aabb_lo = np.asarray(aabb_lo, dtype=np.float64)
    aabb_hi = np.asarray(aabb_hi, dtype=np.float64)
    if aabb_lo.shape != aabb_hi.shape or aabb_lo.ndim != 2 or aabb_lo.shape[1] != 3:
        raise ConfigError("bvh expects matching [K,3] bounds")
    if np.any(aabb_hi < aabb_lo):
        raise ConfigError("bvh bounds are inverted")
    k = len(aabb_lo)
    if k == 0:
        raise ConfigError("bvh needs at least one box")
    pad = _INFLATE * np.maximum(1.0, np.abs(aabb_lo).max() + np.abs(aabb_hi).max())
    centers = 0.5 * (aabb_lo + aabb_hi)

    lo_list, hi_list, left, right, start, count = [], [], [], [], [], []
    order: list[int] = []

    def add_node(idx: np.ndarray) -> int:
        node = len(lo_list)
        lo_list.append(aabb_lo[idx].min(axis=0) - pad)
        hi_list.append(aabb_hi[idx].max(axis=0) + pad)
        left.append(-1)
        right.append(-1)
        start.append(-1)
        count.append(0)
        if len(idx) <= _LEAF_SIZE:
            start[node] = len(order)
            count[node] = len(idx)
            order.extend(int(i) for i in np.sort(idx))
            return node
        spread = centers[idx].max(axis=0) - centers[idx].min(axis=0)
        axis = int(np.argmax(spread))
        mid = len(idx) // 2
        # argsort on (center, index) keeps splits deterministic under ties
        key = np.argsort(centers[idx, axis], kind="stable")
        ordered = idx[key]
        left[node] = add_node(ordered[:mid])
        right[node] = add_node(ordered[mid:])
        return node

    add_node(np.arange(k))
    return BVH(
        node_lo=np.asarray(lo_list),
        node_hi=np.asarray(hi_list),
        node_left=np.asarray(left, dtype=np.int32),
        node_right=np.asarray(right, dtype=np.int32),
        node_start=np.asarray(start, dtype=np.int32),
        node_count=np.asarray(count, dtype=np.int32),
        prim_order=np.asarray(order, dtype=np.int32),
    )


def candidate_mask(bvh: BVH, origins: np.ndarray, dirs: np.ndarray, t_far: float) -> np.ndarray:
    """Boolean [R, K] candidate pairs from stack-based node traversal."""
    origins = np.asarray(origins, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    n_rays = len(origins)
    mask = np.zeros((n_rays, bvh.n_prims), dtype=bool)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
    stack: list[tuple[int, np.ndarray]] = [(0, np.arange(n_rays))]
    while stack:
        node, rays = stack.pop()
        lo = bvh.node_lo[node]
        hi = bvh.node_hi[node]
        with np.errstate(invalid="ignore"):
            ta = (lo - origins[rays]) * inv[rays]
            tb = (hi - origins[rays]) * inv[rays]
        # fmin/fmax drop the NaNs from on-face origins, keeping those rays
        near = np.fmin(ta, tb)
        far = np.fmax(ta, tb)
        t0 = np.max(np.where(np.isnan(near), -np.inf, near), axis=1)
        t1 = np.min(np.where(np.isnan(far), np.inf, far), axis=1)
        hit = (t1 >= np.maximum(t0, 0.0)) & (t0 <= t_far)
        alive = rays[hit]
        if alive.size == 0:
            continue
        if bvh.node_left[node] < 0:
            s, c = bvh.node_start[node], bvh.node_count[node]
            mask[np.repeat(alive, c), np.tile(bvh.prim_order[s : s + c], alive.size)] = True
        else:
            stack.append((int(bvh.node_right[node]), alive))
            stack.append((int(bvh.node_left[node]), alive))
    return mask
