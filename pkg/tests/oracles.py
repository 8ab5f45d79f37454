"""Independent reference computations shared by the test modules."""

import math

import numpy as np

BRUTE_SUBSTEPS = 1_000_000


def brute_force_endpoint(x, y, psi, c0, c1, length, substeps=BRUTE_SUBSTEPS):
    """Midpoint-rule integration of the unit heading vector over ``substeps`` slices."""
    h = length / substeps
    s = (np.arange(substeps) + 0.5) * h
    heading = psi + c0 * s + 0.5 * c1 * s * s
    return x + h * math.fsum(np.cos(heading)), y + h * math.fsum(np.sin(heading))


def segment_distance(p, a, b):
    """Distance from p to segment ab, written out longhand."""
    abx, aby = b[0] - a[0], b[1] - a[1]
    apx, apy = p[0] - a[0], p[1] - a[1]
    denom = abx * abx + aby * aby
    t = 0.0 if denom == 0 else max(0.0, min(1.0, (apx * abx + apy * aby) / denom))
    return math.hypot(apx - t * abx, apy - t * aby)


def polyline_distance(p, poly):
    return min(segment_distance(p, poly[i], poly[i + 1]) for i in range(len(poly) - 1))


def arc_stations(trace, pts, ds=1e-3):
    """Arc length of each point along a densely sampled copy of the trace."""
    s = np.arange(0.0, trace.length + ds / 2, ds)
    dense = np.array([trace.config_at(x).position for x in s])
    cum = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(dense, axis=0).T))])
    return np.array([cum[np.argmin(np.hypot(*(dense - p).T))] for p in pts])
