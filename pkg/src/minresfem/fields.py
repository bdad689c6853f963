"""Scalar data fields (sources, boundary data, exact solutions).

A field maps batches of points, shape (m, dim), to values (m,); gradient and
Hessian callbacks are optional and only needed where a consumer says so
(Hermite interpolation wants both, error norms want the gradient).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np


@dataclass(frozen=True)
class ScalarField:
    value: Callable[[np.ndarray], np.ndarray]
    grad: Optional[Callable[[np.ndarray], np.ndarray]] = None    # (m, d)
    hess: Optional[Callable[[np.ndarray], np.ndarray]] = None    # (m, d, d)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.value(np.asarray(x, dtype=float))


def constant_field(c: float, dim: int) -> ScalarField:
    c = float(c)
    return ScalarField(
        value=lambda x: np.full(x.shape[0], c),
        grad=lambda x: np.zeros((x.shape[0], dim)),
        hess=lambda x: np.zeros((x.shape[0], dim, dim)),
    )


def as_field(f, dim: int) -> ScalarField:
    """Coerce a number, callable, or ScalarField into a ScalarField."""
    if isinstance(f, ScalarField):
        return f
    if np.isscalar(f):
        return constant_field(float(f), dim)
    if callable(f):
        return ScalarField(value=lambda x: np.asarray(f(x), dtype=float))
    raise TypeError(f"cannot interpret {f!r} as a scalar field")
