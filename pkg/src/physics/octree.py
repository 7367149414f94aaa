"""
Barnes-Hut octree over the particle positions.

The tree is stored flattened: node i owns the particles perm[start[i]:end[i]]
and its children are the nodes child_first[i] .. child_first[i] + child_count[i] - 1.
Traversal is vectorized over (target, node) pairs instead of recursing per target.
"""
import logging
from collections import deque

import numpy as np

from src.exceptions import SingularityError

logger = logging.getLogger(__name__)

MAX_DEPTH = 48
TARGET_CHUNK = 4096


def _expand(owners, first, counts):
    total = int(np.sum(counts))
    rep_owner = np.repeat(owners, counts)
    offsets = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
    return rep_owner, np.repeat(first, counts) + offsets


def _extent_radius(y, com, start, end, child_count, parent, depth):
    """
    Radius around the center of charge that holds every particle of the node.
    Exact on leaves; an internal node takes max over children of |com_child - com| + radius_child.
    """
    radius = np.zeros(len(start))
    leaves = np.nonzero(child_count == 0)[0]
    leaves = leaves[np.argsort(start[leaves])]
    sizes = end[leaves] - start[leaves]
    slot_leaf = np.repeat(leaves, sizes)
    dist = np.linalg.norm(y - com[slot_leaf], axis=1)
    radius[leaves] = np.maximum.reduceat(dist, np.cumsum(sizes) - sizes)
    for level in range(int(depth.max()), 0, -1):
        nodes = np.nonzero(depth == level)[0]
        up = parent[nodes]
        np.maximum.at(radius, up, np.linalg.norm(com[nodes] - com[up], axis=1) + radius[nodes])
    return radius


class Octree:

    def __init__(self, positions, weights, perm, center, half, start, end, child_first, child_count, charge, com, quad,
                 radius):
        self.positions = positions
        self.weights = weights
        self.perm = perm
        self.center = center
        self.half = half
        self.start = start
        self.end = end
        self.child_first = child_first
        self.child_count = child_count
        self.charge = charge
        self.com = com
        self.quad = quad
        self.radius = radius
        self.rank = np.empty_like(perm)
        self.rank[perm] = np.arange(len(perm))

    def __len__(self):
        return len(self.half)

    @classmethod
    def build(cls, positions, weights, leaf_size=1, max_depth=MAX_DEPTH):
        positions = np.asarray(positions, dtype=float)
        weights = np.asarray(weights, dtype=float)
        n = len(weights)
        if n == 0:
            raise ValueError('cannot build an octree over zero particles')
        lo, hi = positions.min(axis=0), positions.max(axis=0)
        root_half = max(float(np.max(hi - lo)) / 2.0, 1e-12) * (1.0 + 1e-9)

        perm = np.arange(n)
        center, half, start, end, depth = [(lo + hi) / 2.0], [root_half], [0], [n], [0]
        child_first, child_count, parent = [0], [0], [-1]

        queue = deque([0])
        while queue:
            node = queue.popleft()
            s, e = start[node], end[node]
            if e - s <= leaf_size or depth[node] >= max_depth:
                continue
            members = perm[s:e]
            c = center[node]
            above = positions[members] >= c
            code = above[:, 0] * 4 + above[:, 1] * 2 + above[:, 2]
            order = np.argsort(code, kind='stable')
            perm[s:e] = members[order]
            counts = np.bincount(code, minlength=8)
            child_first[node] = len(half)
            offset = s
            for octant in range(8):
                if counts[octant] == 0:
                    continue
                sign = np.array([(octant >> 2) & 1, (octant >> 1) & 1, octant & 1]) * 2.0 - 1.0
                center.append(c + sign * half[node] / 2.0)
                half.append(half[node] / 2.0)
                start.append(offset)
                end.append(offset + int(counts[octant]))
                depth.append(depth[node] + 1)
                parent.append(node)
                child_first.append(0)
                child_count.append(0)
                queue.append(len(half) - 1)
                offset += int(counts[octant])
            child_count[node] = len(half) - child_first[node]

        start, end = np.array(start), np.array(end)
        center = np.array(center)

        # moments from prefix sums over the permuted particle order
        w = weights[perm]
        y = positions[perm]
        cw = np.concatenate([[0.0], np.cumsum(w)])
        cy = np.vstack([np.zeros(3), np.cumsum(w[:, None] * y, axis=0)])
        cyy = np.concatenate([np.zeros((1, 3, 3)), np.cumsum(w[:, None, None] * y[:, :, None] * y[:, None, :], axis=0)])
        charge = cw[end] - cw[start]
        first_moment = cy[end] - cy[start]
        nonzero = charge != 0
        com = center.copy()
        com[nonzero] = first_moment[nonzero] / charge[nonzero][:, None]
        # Q = sum w (3 d d^T - |d|^2 I), d taken from the center of charge
        second = cyy[end] - cyy[start]
        second = (second - com[:, :, None] * first_moment[:, None, :] - first_moment[:, :, None] * com[:, None, :]
                  + charge[:, None, None] * com[:, :, None] * com[:, None, :])
        trace = np.trace(second, axis1=1, axis2=2)
        quad = 3.0 * second - trace[:, None, None] * np.eye(3)[None, :, :]

        radius = _extent_radius(y, com, start, end, np.array(child_count), np.array(parent), np.array(depth))

        logger.debug(f'octree built: {len(half)} nodes over {n} particles')
        return cls(positions, weights, perm, center, np.array(half), start, end,
                   np.array(child_first), np.array(child_count), charge, com, quad, radius)

    def fields(self, targets, theta=0.5, softening=0.0, quadrupole=False, exclude=None):
        """
        Approximate E at each target. A node is accepted when the diameter of the sphere around its center
        of charge that holds all its particles is below theta times the distance to that center
        and the node does not contain the excluded source; leaves are
        always summed particle by particle.

        Args:
            exclude: per-target source index to skip (the target itself), -1 for none.
        """
        targets = np.asarray(targets, dtype=float).reshape(-1, 3)
        m = len(targets)
        if exclude is None:
            exclude = np.full(m, -1)
        field = np.zeros((m, 3))
        for lo in range(0, m, TARGET_CHUNK):
            hi = min(lo + TARGET_CHUNK, m)
            field[lo:hi] = self._chunk_fields(targets[lo:hi], np.asarray(exclude[lo:hi]),
                                              theta, softening, quadrupole)
        return field

    def _chunk_fields(self, targets, exclude, theta, softening, quadrupole):
        field = np.zeros_like(targets)
        target_rank = np.where(exclude >= 0, self.rank[np.maximum(exclude, 0)], -1)
        eps2 = softening * softening
        t = np.arange(len(targets))
        nodes = np.zeros(len(targets), dtype=np.int64)
        while len(t):
            d = targets[t] - self.com[nodes]
            r2 = np.sum(d * d, axis=1)
            size = 2.0 * self.radius[nodes]
            contains = (self.start[nodes] <= target_rank[t]) & (target_rank[t] < self.end[nodes])
            leaf = self.child_count[nodes] == 0
            accept = ~leaf & ~contains & (size * size < theta * theta * r2)

            if np.any(accept):
                da, ra = d[accept], r2[accept] + eps2
                contrib = self.charge[nodes[accept]][:, None] * da / (ra * np.sqrt(ra))[:, None]
                if quadrupole:
                    q = self.quad[nodes[accept]]
                    qd = np.einsum('kij,kj->ki', q, da)
                    dqd = np.sum(da * qd, axis=1)
                    r5 = ra * ra * np.sqrt(ra)
                    contrib += -qd / r5[:, None] + 2.5 * (dqd / (r5 * ra))[:, None] * da
                np.add.at(field, t[accept], contrib)

            if np.any(leaf):
                lt, ln = t[leaf], nodes[leaf]
                owner, slot = _expand(lt, self.start[ln], self.end[ln] - self.start[ln])
                self._leaf_direct(field, targets, owner, self.perm[slot], exclude, eps2)

            opened = ~leaf & ~accept
            t, nodes = _expand(t[opened], self.child_first[nodes[opened]], self.child_count[nodes[opened]])
        return field

    def _leaf_direct(self, field, targets, owner, source, exclude, eps2):
        keep = source != exclude[owner]
        owner, source = owner[keep], source[keep]
        d = targets[owner] - self.positions[source]
        r2 = np.sum(d * d, axis=1)
        if eps2 == 0 and np.any(r2 == 0):
            raise SingularityError('coincident particles with zero softening')
        r2 = r2 + eps2
        np.add.at(field, owner, self.weights[source][:, None] * d / (r2 * np.sqrt(r2))[:, None])

