"""Planar polyline helpers shared by the metrics, pursuit and generator code."""

from __future__ import annotations

import math

import numpy as np


def cumulative_length(poly: np.ndarray) -> np.ndarray:
    seg = np.hypot(*np.diff(poly, axis=0).T)
    return np.concatenate(([0.0], np.cumsum(seg)))


def point_segment_distances(points: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Distance from each point (N, 2) to each polyline segment, shape (N, M-1)."""
    a = poly[:-1][None, :, :]
    ab = (poly[1:] - poly[:-1])[None, :, :]
    ap = points[:, None, :] - a
    denom = np.sum(ab * ab, axis=2)
    t = np.clip(np.sum(ap * ab, axis=2) / np.where(denom > 0, denom, 1.0), 0.0, 1.0)
    closest = a + t[..., None] * ab
    return np.hypot(*(points[:, None, :] - closest).transpose(2, 0, 1))


def point_polyline_distance(points: np.ndarray, poly: np.ndarray) -> np.ndarray:
    points = np.atleast_2d(np.asarray(points, dtype=float))
    return point_segment_distances(points, np.asarray(poly, dtype=float)).min(axis=1)


def interpolate_at(poly: np.ndarray, s: np.ndarray | float, cum: np.ndarray | None = None) -> np.ndarray:
    """Points at arc length ``s`` along ``poly``; clamped to the polyline ends."""
    if cum is None:
        cum = cumulative_length(poly)
    s = np.clip(np.asarray(s, dtype=float), 0.0, cum[-1])
    x = np.interp(s, cum, poly[:, 0])
    y = np.interp(s, cum, poly[:, 1])
    return np.stack([x, y], axis=-1)


def project(poly: np.ndarray, point: np.ndarray, s_min: float = 0.0, cum: np.ndarray | None = None) -> tuple[float, float]:
    """Closest point on the polyline at or beyond arc length ``s_min``.

    Returns ``(s, distance)``.
    """
    if cum is None:
        cum = cumulative_length(poly)
    best_s, best_d = s_min, math.inf
    px, py = float(point[0]), float(point[1])
    for i in range(len(poly) - 1):
        if cum[i + 1] < s_min:
            continue
        seg_len = cum[i + 1] - cum[i]
        if seg_len <= 0.0:
            continue
        ax, ay = poly[i]
        dx, dy = (poly[i + 1][0] - ax) / seg_len, (poly[i + 1][1] - ay) / seg_len
        u = (px - ax) * dx + (py - ay) * dy
        u = min(max(u, s_min - cum[i], 0.0), seg_len)
        d = math.hypot(ax + u * dx - px, ay + u * dy - py)
        if d < best_d:
            best_s, best_d = cum[i] + u, d
    return best_s, best_d


def dedupe(poly: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Drop consecutive points closer than ``tol`` to their predecessor."""
    keep = [0]
    for i in range(1, len(poly)):
        if math.hypot(*(poly[i] - poly[keep[-1]])) > tol:
            keep.append(i)
    return poly[keep]


def rotation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])
