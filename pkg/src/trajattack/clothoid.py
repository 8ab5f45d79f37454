"""Continuous-curvature (clothoid) vehicle model.

Curvature varies linearly with arc length, so heading is a quadratic in the
arc length and position is the integral of the unit heading vector. The
position integral is evaluated with composite Gauss-Legendre quadrature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .core import ClothoidArc, Configuration, wrap_angle

MAX_SUBINTERVAL = 0.05
GAUSS_ORDER = 8
_RANGE_EPS = 1e-12


@dataclass(frozen=True)
class ArcSample:
    s: float
    config: Configuration


@lru_cache(maxsize=None)
def _gauss_legendre(order: int) -> tuple[np.ndarray, np.ndarray]:
    return np.polynomial.legendre.leggauss(order)


def _check_range(arc: ClothoidArc, l: float) -> None:
    if l < -_RANGE_EPS or l > arc.length + _RANGE_EPS:
        raise ValueError(f"arc position {l} outside [0, {arc.length}]")


def curvature_at(start: Configuration, arc: ClothoidArc, l: float) -> float:
    _check_range(arc, l)
    return start.c0 + arc.c1 * l


def _raw_heading(start: Configuration, arc: ClothoidArc, l):
    return start.psi + start.c0 * l + 0.5 * arc.c1 * l * l


def heading_at(start: Configuration, arc: ClothoidArc, l: float) -> float:
    _check_range(arc, l)
    return wrap_angle(_raw_heading(start, arc, l))


def displacement(start: Configuration, arc: ClothoidArc, l: float,
                 max_subinterval: float = MAX_SUBINTERVAL, order: int = GAUSS_ORDER) -> tuple[float, float]:
    """Integral of (cos psi, sin psi) over [0, l] along the arc."""
    if l <= 0.0:
        return 0.0, 0.0
    n = max(1, math.ceil(l / max_subinterval))
    h = l / n
    nodes, weights = _gauss_legendre(order)
    left = np.arange(n)[:, None] * h
    sigma = (left + 0.5 * h * (nodes[None, :] + 1.0)).ravel()
    w = np.tile(0.5 * h * weights, n)
    psi = _raw_heading(start, arc, sigma)
    return float(np.dot(w, np.cos(psi))), float(np.dot(w, np.sin(psi)))


def config_at(start: Configuration, arc: ClothoidArc, l: float, **quad) -> Configuration:
    _check_range(arc, l)
    l = min(max(l, 0.0), arc.length)
    dx, dy = displacement(start, arc, l, **quad)
    return Configuration(
        start.x + dx,
        start.y + dy,
        wrap_angle(_raw_heading(start, arc, l)),
        start.c0 + arc.c1 * l,
    )


def propagate(start: Configuration, arc: ClothoidArc, **quad) -> Configuration:
    """Configuration at the end of ``arc`` when driven from ``start``."""
    return config_at(start, arc, arc.length, **quad)


def propagate_chain(start: Configuration, arcs: list[ClothoidArc], **quad) -> list[Configuration]:
    out = []
    cur = start
    for arc in arcs:
        cur = propagate(cur, arc, **quad)
        out.append(cur)
    return out


def sample_arc(start: Configuration, arc: ClothoidArc, spacing: float) -> list[ArcSample]:
    if not spacing > 0:
        raise ValueError("spacing must be positive")
    n = int(math.floor(arc.length / spacing + 1e-9))
    stations = [k * spacing for k in range(n + 1) if k * spacing < arc.length - 1e-12]
    stations.append(arc.length)
    return [ArcSample(s, config_at(start, arc, s)) for s in stations]
