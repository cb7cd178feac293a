"""Convex polygon geometry for cogeneration feasible operating regions.

A cogeneration unit cannot choose electric power and useful heat
independently: the admissible (power, heat) pairs form a convex polygon.
This module stores such a polygon and answers the queries the dispatch and
repair code need: membership, the feasible interval of one coordinate at a
fixed value of the other, and Euclidean projection onto the region.
"""
from __future__ import annotations

import numpy as np

# Signed-distance slack for boundary membership, in MW / MWth.
BOUNDARY_TOL = 1e-9


class ForPolygon:
    """Convex counter-clockwise polygon of feasible (power, heat) points.

    Vertices are validated on construction: at least three, no repeated
    consecutive vertices, counter-clockwise orientation, convex. The
    instance is immutable after construction.
    """

    def __init__(self, vertices):
        v = np.array(vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2:
            raise ValueError("region must be a list of (power, heat) pairs")
        if v.shape[0] < 3:
            raise ValueError("region needs at least 3 vertices")
        if not np.all(np.isfinite(v)):
            raise ValueError("region vertices must be finite")
        edges = np.roll(v, -1, axis=0) - v
        lengths = np.hypot(edges[:, 0], edges[:, 1])
        if np.any(lengths < 1e-12):
            raise ValueError("region has repeated consecutive vertices")
        nxt = np.roll(edges, -1, axis=0)
        turn = edges[:, 0] * nxt[:, 1] - edges[:, 1] * nxt[:, 0]
        # Scale-aware convexity test: every turn is a left turn (CCW).
        scale = lengths * np.roll(lengths, -1)
        if np.any(turn < -1e-9 * scale):
            area2 = float(np.sum(v[:, 0] * np.roll(v[:, 1], -1) - np.roll(v[:, 0], -1) * v[:, 1]))
            if area2 < 0:
                raise ValueError("region vertices must be counter-clockwise")
            raise ValueError("region is not convex")

        self._v = v
        self._v.setflags(write=False)
        self._edges = edges
        self._lengths = lengths
        self._edge_dot = np.sum(edges * edges, axis=1)

    @property
    def vertices(self) -> np.ndarray:
        return self._v

    @property
    def power_range(self) -> tuple[float, float]:
        return float(self._v[:, 0].min()), float(self._v[:, 0].max())

    @property
    def heat_range(self) -> tuple[float, float]:
        return float(self._v[:, 1].min()), float(self._v[:, 1].max())

    # -- membership ---------------------------------------------------------

    def contains_many(self, points: np.ndarray, tol: float = BOUNDARY_TOL) -> np.ndarray:
        """Vectorized membership test for an (M, 2) array of points."""
        q = np.atleast_2d(np.asarray(points, float))
        rel_p = q[:, None, 0] - self._v[None, :, 0]
        rel_h = q[:, None, 1] - self._v[None, :, 1]
        cross = self._edges[None, :, 0] * rel_h - self._edges[None, :, 1] * rel_p
        return np.all(cross >= -tol * self._lengths[None, :], axis=1)

    def contains(self, point, tol: float = BOUNDARY_TOL) -> bool:
        return bool(self.contains_many(np.asarray(point, float)[None, :], tol)[0])

    # -- axis-aligned bounds ------------------------------------------------

    def power_bounds_at_heat(self, h: float) -> tuple[float, float] | None:
        """Feasible power interval at fixed heat, or None when the
        horizontal line misses the polygon."""
        return self._line_bounds(float(h), axis=1)

    def heat_bounds_at_power(self, p: float) -> tuple[float, float] | None:
        """Feasible heat interval at fixed power, or None."""
        return self._line_bounds(float(p), axis=0)

    def _line_bounds(self, value: float, axis: int) -> tuple[float, float] | None:
        other = 1 - axis
        hits: list[float] = []
        n = len(self._v)
        for i in range(n):
            a = self._v[i]
            b = self._v[(i + 1) % n]
            lo, hi = (a[axis], b[axis]) if a[axis] <= b[axis] else (b[axis], a[axis])
            if value < lo - BOUNDARY_TOL or value > hi + BOUNDARY_TOL:
                continue
            if hi - lo < 1e-12:
                hits.append(a[other])
                hits.append(b[other])
            else:
                t = (value - a[axis]) / (b[axis] - a[axis])
                t = min(1.0, max(0.0, t))
                hits.append(a[other] + t * (b[other] - a[other]))
        if not hits:
            return None
        return min(hits), max(hits)

    # -- projection ---------------------------------------------------------

    def project_many(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Euclidean projection of an (M, 2) array onto the polygon.

        Returns (projected points, distances); interior points project to
        themselves with distance 0.
        """
        q = np.atleast_2d(np.asarray(points, float))
        inside = self.contains_many(q)
        # Candidate feet of perpendiculars on every edge segment.
        rel = q[:, None, :] - self._v[None, :, :]
        t = np.einsum("mej,ej->me", rel, self._edges) / self._edge_dot[None, :]
        t = np.clip(t, 0.0, 1.0)
        feet = self._v[None, :, :] + t[:, :, None] * self._edges[None, :, :]
        d2 = np.sum((feet - q[:, None, :]) ** 2, axis=2)
        best = np.argmin(d2, axis=1)
        proj = feet[np.arange(len(q)), best]
        dist = np.sqrt(d2[np.arange(len(q)), best])
        proj[inside] = q[inside]
        dist[inside] = 0.0
        return proj, dist

    def project(self, point) -> tuple[float, float]:
        """Nearest point of the polygon (identity for interior points)."""
        proj, _ = self.project_many(np.asarray(point, float)[None, :])
        return float(proj[0, 0]), float(proj[0, 1])

    def distance_outside_many(self, points: np.ndarray) -> np.ndarray:
        """Euclidean distance to the region, 0 for points inside."""
        _, dist = self.project_many(points)
        return dist

    def __repr__(self) -> str:
        return f"ForPolygon({self._v.tolist()})"
