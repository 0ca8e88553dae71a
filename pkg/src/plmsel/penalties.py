"""SCAD and hard-thresholding penalties and the LQA ridge weights."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .exceptions import ParameterError

__all__ = [
    "PenaltyKind",
    "PenaltySpec",
    "scad_derivative",
    "scad_penalty",
    "hard_penalty",
    "hard_derivative",
    "lqa_weights",
    "lqa_matrix",
]

SCAD_A = 3.7
LQA_EPS = 1e-6


def scad_derivative(beta_abs: ArrayLike, lam: ArrayLike, a: float = SCAD_A) -> NDArray[np.float64]:
    """``p'(b) = lam * {I(b <= lam) + (a lam - b)_+ / ((a - 1) lam) I(b > lam)}``."""
    b = np.asarray(beta_abs, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    # Evaluated in the formula's own operation order; lam = 0 gives 0.
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = np.maximum(a * lam - b, 0.0) / ((a - 1.0) * lam)
    tail = np.where(lam > 0, lam * frac, 0.0)
    return np.where(b <= lam, lam, tail)


def scad_penalty(beta_abs: ArrayLike, lam: ArrayLike, a: float = SCAD_A) -> NDArray[np.float64]:
    """Antiderivative of :func:`scad_derivative` with ``p(0) = 0``."""
    b = np.asarray(beta_abs, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    linear = lam * b
    quad = -(b * b - 2.0 * a * lam * b + lam * lam) / (2.0 * (a - 1.0))
    flat = (a + 1.0) * lam * lam / 2.0
    return np.where(b <= lam, linear, np.where(b <= a * lam, quad, flat))


def hard_penalty(beta_abs: ArrayLike, lam: ArrayLike) -> NDArray[np.float64]:
    b = np.asarray(beta_abs, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    return lam * lam - np.where(b < lam, (b - lam) ** 2, 0.0)


def hard_derivative(beta_abs: ArrayLike, lam: ArrayLike) -> NDArray[np.float64]:
    b = np.asarray(beta_abs, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    return 2.0 * np.maximum(lam - b, 0.0)


class PenaltyKind(str, enum.Enum):
    SCAD = "SCAD"
    HARD = "HARD"

    @classmethod
    def parse(cls, value: str | PenaltyKind) -> PenaltyKind:
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise ParameterError(f"unknown penalty {value!r}") from None


@dataclass(frozen=True)
class PenaltySpec:
    """Penalty family with per-coefficient tuning parameters.

    ``unpenalized`` lists coefficient indices that are never penalized
    (their ``lambda`` is treated as zero); use it for a covariate that must
    stay in the model, such as an explicit intercept column.
    """

    kind: PenaltyKind = PenaltyKind.SCAD
    lambdas: NDArray[np.float64] = field(default_factory=lambda: np.zeros(0))
    a: float = SCAD_A
    epsilon: float = LQA_EPS
    unpenalized: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", PenaltyKind.parse(self.kind))
        lam = np.array(self.lambdas, dtype=np.float64).reshape(-1)
        if np.any(~np.isfinite(lam)) or np.any(lam < 0):
            raise ParameterError("lambdas must be finite and nonnegative")
        if not self.a > 2:
            raise ParameterError(f"SCAD requires a > 2, got {self.a}")
        if not self.epsilon > 0:
            raise ParameterError("epsilon must be positive")
        unpen = tuple(sorted({int(k) for k in self.unpenalized}))
        if any(k < 0 or k >= lam.shape[0] for k in unpen):
            raise ParameterError(f"unpenalized indices {unpen} out of range")
        lam[list(unpen)] = 0.0
        lam.setflags(write=False)
        object.__setattr__(self, "lambdas", lam)
        object.__setattr__(self, "unpenalized", unpen)

    @property
    def size(self) -> int:
        return self.lambdas.shape[0]

    def with_lambdas(self, lambdas: ArrayLike) -> PenaltySpec:
        return PenaltySpec(self.kind, np.asarray(lambdas), self.a, self.epsilon, self.unpenalized)

    def value(self, beta: ArrayLike) -> NDArray[np.float64]:
        """Per-coefficient penalty ``p_{lambda_k}(|beta_k|)``."""
        b = np.abs(np.asarray(beta, dtype=np.float64))
        if self.kind is PenaltyKind.SCAD:
            return scad_penalty(b, self.lambdas, self.a)
        return hard_penalty(b, self.lambdas)

    def derivative(self, beta: ArrayLike) -> NDArray[np.float64]:
        b = np.abs(np.asarray(beta, dtype=np.float64))
        if self.kind is PenaltyKind.SCAD:
            return scad_derivative(b, self.lambdas, self.a)
        return hard_derivative(b, self.lambdas)

    def total(self, beta: ArrayLike) -> float:
        return float(np.sum(self.value(beta)))


def lqa_weights(beta: ArrayLike, spec: PenaltySpec) -> NDArray[np.float64]:
    """Diagonal of the LQA matrix: ``p'(|beta_k|) / (epsilon + |beta_k|)``."""
    b = np.abs(np.asarray(beta, dtype=np.float64))
    if b.shape != spec.lambdas.shape:
        raise ParameterError(f"beta has {b.shape[0]} entries, lambdas {spec.size}")
    w = spec.derivative(b) / (spec.epsilon + b)
    w[list(spec.unpenalized)] = 0.0
    return w


def lqa_matrix(beta: ArrayLike, spec: PenaltySpec) -> NDArray[np.float64]:
    return np.diag(lqa_weights(beta, spec))
