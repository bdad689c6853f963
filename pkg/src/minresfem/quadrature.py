"""Quadrature rules on reference cells and faces.

Low degrees use classic symmetric rules; everything else falls back to
collapsed (Duffy) tensor Gauss built from Gauss-Legendre and Gauss-Jacobi
nodes, which keeps all weights positive at any degree.  Reference cells:
unit simplex {x_i >= 0, sum x_i <= 1} and unit square/segment [0, 1]^d.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray   # (m, d) reference coordinates
    weights: np.ndarray  # (m,) weights summing to the reference measure
    degree: int          # polynomial exactness


def _gauss01(m: int):
    x, w = roots_legendre(m)
    return 0.5 * (x + 1.0), 0.5 * w


def _jacobi01(m: int, alpha: int):
    # nodes/weights for int_0^1 (1-t)^alpha f(t) dt
    x, w = roots_jacobi(m, alpha, 0.0)
    return 0.5 * (x + 1.0), w / 2.0 ** (alpha + 1)


def _npts(degree: int) -> int:
    return max(1, (degree + 2) // 2)


@lru_cache(maxsize=None)
def segment_rule(degree: int) -> QuadratureRule:
    x, w = _gauss01(_npts(degree))
    return QuadratureRule(x.reshape(-1, 1), w, degree)


@lru_cache(maxsize=None)
def rectangle_rule(degree: int) -> QuadratureRule:
    x, w = _gauss01(_npts(degree))
    X, Y = np.meshgrid(x, x, indexing="ij")
    W = np.outer(w, w)
    return QuadratureRule(np.stack([X.ravel(), Y.ravel()], axis=1), W.ravel(), degree)


@lru_cache(maxsize=None)
def triangle_rule(degree: int) -> QuadratureRule:
    if degree <= 1:
        return QuadratureRule(np.array([[1 / 3, 1 / 3]]), np.array([0.5]), 1)
    if degree == 2:
        pts = np.array([[1 / 6, 1 / 6], [2 / 3, 1 / 6], [1 / 6, 2 / 3]])
        return QuadratureRule(pts, np.full(3, 1 / 6), 2)
    m = _npts(degree)
    gx, gw = _gauss01(m)
    jx, jw = _jacobi01(m, 1)
    pts, wts = [], []
    for i in range(m):
        for j in range(m):
            eta = jx[j]
            pts.append((gx[i] * (1.0 - eta), eta))
            wts.append(gw[i] * jw[j])
    return QuadratureRule(np.asarray(pts), np.asarray(wts), degree)


@lru_cache(maxsize=None)
def tetrahedron_rule(degree: int) -> QuadratureRule:
    if degree <= 1:
        return QuadratureRule(np.full((1, 3), 0.25), np.array([1 / 6]), 1)
    if degree == 2:
        a = (5.0 + 3.0 * np.sqrt(5.0)) / 20.0
        b = (5.0 - np.sqrt(5.0)) / 20.0
        pts = np.array([[b, b, b], [a, b, b], [b, a, b], [b, b, a]])
        return QuadratureRule(pts, np.full(4, 1 / 24), 2)
    m = _npts(degree)
    gx, gw = _gauss01(m)
    j1x, j1w = _jacobi01(m, 1)
    j2x, j2w = _jacobi01(m, 2)
    pts, wts = [], []
    for i in range(m):
        for j in range(m):
            for k in range(m):
                eta, zeta = j1x[j], j2x[k]
                pts.append((gx[i] * (1 - eta) * (1 - zeta), eta * (1 - zeta), zeta))
                wts.append(gw[i] * j1w[j] * j2w[k])
    return QuadratureRule(np.asarray(pts), np.asarray(wts), degree)


def volume_rule(cell_kind: str, dim: int, degree: int) -> QuadratureRule:
    """Reference-cell rule of the requested exactness degree."""
    if degree < 0:
        raise ValueError("quadrature degree must be nonnegative")
    if cell_kind == "rectangle":
        return rectangle_rule(degree)
    if dim == 2:
        return triangle_rule(degree)
    return tetrahedron_rule(degree)


def face_rule(cell_kind: str, dim: int, degree: int) -> QuadratureRule:
    """Rule on the reference face: segment in 2D, triangle for tetrahedra."""
    if cell_kind == "rectangle" or dim == 2:
        return segment_rule(degree)
    return triangle_rule(degree)


def reference_measure(cell_kind: str, dim: int) -> float:
    if cell_kind == "rectangle":
        return 1.0
    return 0.5 if dim == 2 else 1.0 / 6.0
