"""Clamped B-spline spaces on [0, 1] with equally spaced interior knots."""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .data import Cluster
from .exceptions import DomainError, ParameterError

__all__ = [
    "SplineSpace",
    "make_space",
    "default_dimension",
    "eval_basis",
    "basis_matrix",
    "build_design",
]


@dataclass(frozen=True)
class SplineSpace:
    """Degree-``q`` splines with ``N`` equally spaced interior knots.

    The knot vector is clamped: ``0`` and ``1`` each appear ``q + 1`` times.
    The space has dimension ``J = N + q + 1``.
    """

    degree: int
    interior: int

    def __post_init__(self) -> None:
        if int(self.degree) != self.degree or self.degree < 1:
            raise ParameterError(f"degree must be an integer >= 1, got {self.degree}")
        if int(self.interior) != self.interior or self.interior < 0:
            raise ParameterError(f"interior knot count must be >= 0, got {self.interior}")
        object.__setattr__(self, "degree", int(self.degree))
        object.__setattr__(self, "interior", int(self.interior))

    @property
    def dimension(self) -> int:
        return self.interior + self.degree + 1

    @cached_property
    def interior_knots(self) -> NDArray[np.float64]:
        n = self.interior
        return np.arange(1, n + 1) / (n + 1)

    @cached_property
    def knots(self) -> NDArray[np.float64]:
        q = self.degree
        t = np.concatenate([np.zeros(q + 1), self.interior_knots, np.ones(q + 1)])
        t.setflags(write=False)
        return t

    def __call__(self, z: ArrayLike) -> NDArray[np.float64]:
        return basis_matrix(self, z)


def make_space(q: int, n_interior: int) -> SplineSpace:
    return SplineSpace(q, n_interior)


def default_dimension(n: int, p: int, q: int = 3) -> int:
    """Interior knot count from the rate ``J ~ n^{1/(2p)} log n`` with unit constant."""
    if n < 2 or p < 1:
        raise ParameterError("need n >= 2 and p >= 1")
    return max(1, round(n ** (1.0 / (2 * p)) * math.log(n)) - q - 1)


def basis_matrix(space: SplineSpace, z: ArrayLike) -> NDArray[np.float64]:
    """Evaluate all ``J`` basis functions at each point of ``z``.

    Returns an array of shape ``(len(z), J)``.  Uses the triangular
    (de Boor / Cox) recursion on the nonzero functions of the knot span;
    the last span is closed on the right so that ``z = 1`` is covered.
    """
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    if not np.all((z >= 0.0) & (z <= 1.0)):
        bad = z[~((z >= 0.0) & (z <= 1.0))][0]
        raise DomainError(f"spline covariate {bad!r} lies outside [0, 1]")
    q = space.degree
    t = space.knots
    J = space.dimension
    # Span index mu with t[mu] <= z < t[mu + 1], restricted to q..J-1.
    mu = np.searchsorted(t, z, side="right") - 1
    mu = np.clip(mu, q, J - 1)

    npts = z.shape[0]
    vals = np.zeros((npts, q + 1))
    vals[:, 0] = 1.0
    left = np.zeros((npts, q + 1))
    right = np.zeros((npts, q + 1))
    for j in range(1, q + 1):
        left[:, j] = z - t[mu + 1 - j]
        right[:, j] = t[mu + j] - z
        saved = np.zeros(npts)
        for r in range(j):
            temp = vals[:, r] / (right[:, r + 1] + left[:, j - r])
            vals[:, r] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        vals[:, j] = saved

    out = np.zeros((npts, J))
    cols = mu[:, None] - q + np.arange(q + 1)[None, :]
    np.put_along_axis(out, cols, vals, axis=1)
    return out


def eval_basis(space: SplineSpace, z: float) -> NDArray[np.float64]:
    """All ``J`` basis values at a single point ``z`` in [0, 1]."""
    return basis_matrix(space, [z])[0]


def build_design(spaces: Sequence[SplineSpace], cluster: Cluster) -> NDArray[np.float64]:
    """Row ``j`` concatenates the basis vectors of every Z coordinate of observation ``j``."""
    if len(spaces) != cluster.z.shape[1]:
        raise ParameterError(f"{len(spaces)} spline spaces for {cluster.z.shape[1]} Z columns")
    if not spaces:
        return np.zeros((cluster.m, 0))
    return np.hstack([basis_matrix(s, cluster.z[:, l]) for l, s in enumerate(spaces)])
