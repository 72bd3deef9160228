"""Spatial index for 'is this point within eps of a polyline' queries.

Hit-or-miss sausage estimators fire millions of such queries against paths
with up to tens of millions of segments, so a flat segment grid is too slow
to build and too fat to store.  Segments are grouped into blocks of
consecutive steps; each block gets a bounding sphere, and block ids are
bucketed into a uniform cell grid (inflated by the query radius, so a query
only ever reads its own cell).  A query is then: cell lookup -> sphere
filter -> exact point-segment distances for the few surviving pairs.

A brute-force scan over all segments is kept alongside as the validation
oracle for small instances.
"""
from __future__ import annotations

import math

import numpy as np


def _build_csr(keys: np.ndarray, ids: np.ndarray):
    order = np.argsort(keys)
    sorted_keys = keys[order]
    sorted_ids = ids[order]
    if sorted_keys.size == 0:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty, empty, sorted_ids
    lead = np.ones(sorted_keys.size, dtype=bool)
    lead[1:] = sorted_keys[1:] != sorted_keys[:-1]
    start = np.nonzero(lead)[0]
    uniq = sorted_keys[start]
    count = np.diff(np.append(start, sorted_keys.size))
    return uniq, start, count, sorted_ids


def _csr_lookup(query_keys: np.ndarray, uniq: np.ndarray, start: np.ndarray,
                count: np.ndarray):
    if uniq.size == 0:
        z = np.zeros(query_keys.shape, dtype=np.int64)
        return z, z
    pos = np.searchsorted(uniq, query_keys)
    pos = np.minimum(pos, uniq.size - 1)
    hit = uniq[pos] == query_keys
    return np.where(hit, start[pos], 0), np.where(hit, count[pos], 0)


def _csr_expand(starts: np.ndarray, counts: np.ndarray):
    """Flatten per-row (start, count) slices: returns (flat_indices, owner_rows)."""
    total = int(counts.sum())
    if total == 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    owners = np.repeat(np.arange(counts.size, dtype=np.int64), counts)
    cum = np.concatenate(([0], np.cumsum(counts)[:-1]))
    flat = np.arange(total, dtype=np.int64) - np.repeat(cum, counts) + np.repeat(starts, counts)
    return flat, owners


def _range_offsets(counts: np.ndarray) -> np.ndarray:
    """[0..c0-1, 0..c1-1, ...] for per-row counts."""
    total = int(counts.sum())
    cum = np.concatenate(([0], np.cumsum(counts)[:-1]))
    return np.arange(total, dtype=np.int64) - np.repeat(cum, counts)


def segment_distances(points: np.ndarray, seg_a: np.ndarray, seg_b: np.ndarray) -> np.ndarray:
    """Distance from points[i] to segment (seg_a[i], seg_b[i]), elementwise."""
    p = np.asarray(points, dtype=float)
    a = np.asarray(seg_a, dtype=float)
    b = np.asarray(seg_b, dtype=float)
    v = b - a
    w = p - a
    vv = (v * v).sum(axis=-1)
    t = np.clip((w * v).sum(axis=-1) / np.where(vv > 0, vv, 1.0), 0.0, 1.0)
    closest = a + t[..., None] * v
    return np.sqrt(((p - closest) ** 2).sum(axis=-1))


class PolylineIndex:
    """Block-of-segments grid answering within-radius queries for one polyline."""

    def __init__(self, positions: np.ndarray, radius: float, block: int = 16,
                 max_cells_per_axis: int = 1024):
        positions = np.ascontiguousarray(positions)
        if positions.ndim != 2 or positions.shape[0] < 1:
            raise ValueError("positions must be a (n_points, dim) array")
        if radius <= 0 or not np.isfinite(radius):
            raise ValueError("radius must be positive and finite")
        self.radius = float(radius)
        self.dim = positions.shape[1]
        n_seg = max(positions.shape[0] - 1, 1)
        self.block = int(block)
        n_blk = (n_seg + self.block - 1) // self.block

        # Pad with copies of the final point; padded segments are degenerate
        # and change nothing about distance queries.
        padded = np.empty((n_blk * self.block + 1, self.dim), dtype=positions.dtype)
        padded[: positions.shape[0]] = positions
        padded[positions.shape[0]:] = positions[-1]
        self._pts = padded
        self._starts = padded[:-1].reshape(n_blk, self.block, self.dim)
        self._ends = padded[1:].reshape(n_blk, self.block, self.dim)
        self.n_blocks = n_blk

        anchor_idx = np.arange(n_blk) * self.block + self.block // 2
        self.anchors = padded[anchor_idx].astype(np.float64)

        # Per-block bounding-sphere radii: block points are the k segment
        # starts plus the final end point.  Computed in the storage dtype and
        # inflated by a rounding guard so the sphere bound stays valid.
        radii = np.empty(n_blk)
        chunk = max(1, 8_000_000 // (self.block + 1))
        anchors_t = self.anchors.astype(padded.dtype)
        for s in range(0, n_blk, chunk):
            e = min(n_blk, s + chunk)
            diff = self._starts[s:e] - anchors_t[s:e][:, None, :]
            d2 = np.einsum("mkd,mkd->mk", diff, diff).max(axis=1)
            dend = self._ends[s:e, -1] - anchors_t[s:e]
            d2_end = np.einsum("md,md->m", dend, dend)
            radii[s:e] = np.sqrt(np.maximum(d2, d2_end))
        eps_guard = 4.0 * np.finfo(padded.dtype).eps
        radii += eps_guard * (np.abs(self.anchors).max() + radii)
        self.block_radii = radii

        # Bounding box from block spheres (covers all polyline points).
        reach = self.block_radii + radius
        lo = (self.anchors - reach[:, None]).min(axis=0)
        hi = (self.anchors + reach[:, None]).max(axis=0)
        extent = float((hi - lo).max())
        med = float(np.median(radii)) if n_blk else 0.0
        # Cells comparable to the block reach keep candidate lists short; the
        # floor keeps the grid from exploding for very long thin paths.
        self.cell = max(2.0 * (radius + med), extent / max_cells_per_axis, 1e-12)
        self.origin = lo
        self.shape = np.maximum(np.ceil((hi - lo) / self.cell - 1e-12), 1).astype(np.int64)
        self._mult = np.concatenate((np.cumprod(self.shape[::-1])[-2::-1], [1]))

        # Insert each block into every cell overlapped by its inflated sphere
        # bbox, so queries never look at neighbor cells.  Expanded one axis at
        # a time with repeat, which costs O(total insertions) only.
        lo_idx = np.floor((self.anchors - reach[:, None] - self.origin) / self.cell).astype(np.int64)
        hi_idx = np.floor((self.anchors + reach[:, None] - self.origin) / self.cell).astype(np.int64)
        lo_idx = np.clip(lo_idx, 0, self.shape - 1)
        hi_idx = np.clip(hi_idx, 0, self.shape - 1)
        spans = hi_idx - lo_idx + 1
        ids = np.arange(n_blk, dtype=np.int64)
        keys = np.zeros(n_blk, dtype=np.int64)
        for axis in range(self.dim):
            counts = spans[ids, axis]
            offs = _range_offsets(counts)
            keys = np.repeat(keys, counts) + (np.repeat(lo_idx[ids, axis], counts) + offs) \
                * self._mult[axis]
            ids = np.repeat(ids, counts)
        self._uniq, self._start, self._count, self._ids = _build_csr(keys, ids)

    def _keys_of(self, points: np.ndarray):
        coords = np.floor((points - self.origin) / self.cell).astype(np.int64)
        valid = np.all((coords >= 0) & (coords < self.shape), axis=1)
        coords = np.clip(coords, 0, self.shape - 1)
        return coords @ self._mult, valid

    def _pairs_within(self, pts: np.ndarray, owner: np.ndarray,
                      blocks: np.ndarray) -> np.ndarray:
        """Exact test for (point, block) pairs: any block segment within radius."""
        a = self._starts[blocks]
        b = self._ends[blocks]
        p = pts[owner][:, None, :]
        v = b - a
        w = p - a
        vv = np.einsum("mkd,mkd->mk", v, v)
        wv = np.einsum("mkd,mkd->mk", w, v)
        ww = np.einsum("mkd,mkd->mk", w, w)
        t = np.clip(wv / np.where(vv > 0, vv, 1), 0, 1)
        d2 = ww - t * (2.0 * wv - t * vv)
        return d2.min(axis=1) <= self.radius**2

    def within(self, points: np.ndarray, chunk: int = 262_144,
               pair_chunk: int = 131_072) -> np.ndarray:
        """Boolean mask: point within self.radius of the polyline."""
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        out = np.zeros(len(points), dtype=bool)
        for s in range(0, len(points), chunk):
            e = min(len(points), s + chunk)
            pts = points[s:e].astype(self._pts.dtype, copy=False)
            keys, valid = self._keys_of(points[s:e])
            starts, counts = _csr_lookup(keys, self._uniq, self._start, self._count)
            counts = np.where(valid, counts, 0)
            flat, owner = _csr_expand(starts, counts)
            if flat.size == 0:
                continue
            blocks = self._ids[flat]
            d2 = ((pts[owner] - self.anchors[blocks]) ** 2).sum(axis=1)
            reach = self.block_radii[blocks] + self.radius
            keep = d2 <= reach**2
            owner = owner[keep]
            blocks = blocks[keep]
            # Most points carry several candidate blocks but need only one
            # hit; peel off one pair per point per round and drop points as
            # soon as they are resolved.
            order = np.lexsort((blocks, owner))
            owner = owner[order]
            blocks = blocks[order]
            hit_local = np.zeros(e - s, dtype=bool)
            while owner.size:
                lead = np.ones(owner.size, dtype=bool)
                lead[1:] = owner[1:] != owner[:-1]
                sel_o, sel_b = owner[lead], blocks[lead]
                for ps in range(0, sel_o.size, pair_chunk):
                    pe = min(sel_o.size, ps + pair_chunk)
                    got = self._pairs_within(pts, sel_o[ps:pe], sel_b[ps:pe])
                    hit_local[sel_o[ps:pe][got]] = True
                rest = ~lead
                rest &= ~hit_local[owner]
                owner, blocks = owner[rest], blocks[rest]
            out[s:e] = hit_local
        return out

    def within_bruteforce(self, points: np.ndarray, chunk: int = 512) -> np.ndarray:
        """Linear scan over every segment; validation oracle for small paths."""
        points = np.atleast_2d(np.asarray(points, dtype=self._pts.dtype))
        a_all = self._pts[:-1]
        b_all = self._pts[1:]
        out = np.zeros(len(points), dtype=bool)
        r2 = self.radius**2
        for s in range(0, len(points), chunk):
            e = min(len(points), s + chunk)
            p = points[s:e][:, None, :]
            v = (b_all - a_all)[None, :, :]
            w = p - a_all[None, :, :]
            vv = (v * v).sum(axis=2)
            t = np.clip((w * v).sum(axis=2) / np.where(vv > 0, vv, 1.0), 0.0, 1.0)
            diff = w - t[:, :, None] * v
            out[s:e] = ((diff**2).sum(axis=2)).min(axis=1) <= r2
        return out
