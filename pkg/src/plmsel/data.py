"""Clustered observations, identifiability transforms and working covariances.

A dataset is a tuple of clusters (subjects).  Cluster ``i`` carries the
response vector ``y`` of length ``m_i``, the parametric covariates ``x``
(``m_i x d1``), the nonparametric covariates ``z`` (``m_i x d2``) and,
optionally, observation times used by the RSM working covariance.
"""

from __future__ import annotations

import csv
import enum
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import linalg

from .exceptions import (
    DataError,
    DegenerateCovariateError,
    EmptyDatasetError,
    IllConditionedError,
    MissingTimesError,
    ParameterError,
    SchemaError,
)

__all__ = [
    "Cluster",
    "ClusteredDataset",
    "CovKind",
    "WorkingCovarianceSpec",
    "CenteringRecord",
    "assemble_dataset",
    "read_csv",
    "center_x",
    "rescale_z",
    "build_working_covariance",
    "invert_covariance",
    "estimate_alpha",
    "MAX_CONDITION",
]

MAX_CONDITION = 1e12


def _frozen(a: ArrayLike, ndim: int) -> NDArray[np.float64]:
    arr = np.array(a, dtype=np.float64)
    if ndim == 2 and arr.ndim == 1:
        arr = arr.reshape(-1, 1) if arr.size else arr.reshape(0, 0)
    arr.setflags(write=False)
    return arr


def _rows(a: ArrayLike, m: int, name: str) -> NDArray[np.float64]:
    """Coerce ``a`` to an ``(m, k)`` matrix; a flat length-``m`` vector is one column."""
    a = np.asarray(a, dtype=np.float64)
    if a.size == 0:
        return np.zeros((m, 0))
    if a.ndim == 1 and a.shape[0] == m:
        return a[:, None]
    if a.ndim != 2 or a.shape[0] != m:
        raise SchemaError(f"{name} has shape {a.shape}, expected {m} rows")
    return a


@dataclass(frozen=True)
class Cluster:
    """Observations of one subject."""

    y: NDArray[np.float64]
    x: NDArray[np.float64]
    z: NDArray[np.float64]
    times: NDArray[np.float64] | None = None

    def __post_init__(self) -> None:
        y = _frozen(self.y, 1).reshape(-1)
        m = y.shape[0]
        x = _frozen(_rows(self.x, m, "x"), 2)
        z = _frozen(_rows(self.z, m, "z"), 2)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "z", z)
        if self.times is not None:
            t = _frozen(self.times, 1).reshape(-1)
            if t.shape[0] != m:
                raise SchemaError(f"times has {t.shape[0]} rows, y has {m}")
            object.__setattr__(self, "times", t)
        if m < 1:
            raise SchemaError("a cluster needs at least one observation")

    @property
    def m(self) -> int:
        return self.y.shape[0]


@dataclass(frozen=True)
class ClusteredDataset:
    """Immutable collection of clusters with consistent covariate widths."""

    clusters: tuple[Cluster, ...]
    d1: int
    d2: int
    x_names: tuple[str, ...] = ()
    z_names: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        clusters = tuple(self.clusters)
        if not clusters:
            raise EmptyDatasetError("dataset has no clusters")
        for c in clusters:
            if c.x.shape[1] != self.d1 or c.z.shape[1] != self.d2:
                raise SchemaError(
                    f"cluster has shapes x{c.x.shape}, z{c.z.shape}; "
                    f"expected d1={self.d1}, d2={self.d2}"
                )
        object.__setattr__(self, "clusters", clusters)
        if not self.x_names:
            object.__setattr__(self, "x_names", tuple(f"x{k + 1}" for k in range(self.d1)))
        if not self.z_names:
            object.__setattr__(self, "z_names", tuple(f"z{l + 1}" for l in range(self.d2)))

    @property
    def n(self) -> int:
        return len(self.clusters)

    @cached_property
    def sizes(self) -> NDArray[np.intp]:
        return np.array([c.m for c in self.clusters], dtype=np.intp)

    @property
    def n_T(self) -> int:
        return int(self.sizes.sum())

    @cached_property
    def offsets(self) -> NDArray[np.intp]:
        """Start row of each cluster in the stacked arrays, plus a final n_T."""
        return np.concatenate([[0], np.cumsum(self.sizes)]).astype(np.intp)

    @cached_property
    def y(self) -> NDArray[np.float64]:
        return np.concatenate([c.y for c in self.clusters])

    @cached_property
    def x(self) -> NDArray[np.float64]:
        return np.vstack([c.x for c in self.clusters])

    @cached_property
    def z(self) -> NDArray[np.float64]:
        return np.vstack([c.z for c in self.clusters])

    @property
    def has_times(self) -> bool:
        return all(c.times is not None for c in self.clusters)

    @cached_property
    def group(self) -> NDArray[np.intp]:
        """Cluster index of every stacked observation."""
        return np.repeat(np.arange(self.n), self.sizes)

    def split(self, values: ArrayLike) -> list[NDArray[np.float64]]:
        """Cut a stacked per-observation array back into per-cluster pieces."""
        values = np.asarray(values)
        return np.split(values, self.offsets[1:-1])

    def with_arrays(
        self,
        *,
        y: ArrayLike | None = None,
        x: ArrayLike | None = None,
        z: ArrayLike | None = None,
        x_names: Sequence[str] | None = None,
    ) -> ClusteredDataset:
        """Copy of the dataset with some stacked arrays replaced."""
        y = self.y if y is None else np.asarray(y, dtype=np.float64)
        x = self.x if x is None else np.asarray(x, dtype=np.float64).reshape(self.n_T, -1)
        z = self.z if z is None else np.asarray(z, dtype=np.float64).reshape(self.n_T, -1)
        times = (
            np.concatenate([c.times for c in self.clusters]) if self.has_times else None
        )
        names = tuple(x_names) if x_names is not None else (
            self.x_names if x.shape[1] == self.d1 else ()
        )
        return ClusteredDataset.from_arrays(
            y, x, z, self.group, times=times, x_names=names, z_names=self.z_names
        )

    @classmethod
    def from_arrays(
        cls,
        y: ArrayLike,
        x: ArrayLike,
        z: ArrayLike,
        groups: ArrayLike,
        times: ArrayLike | None = None,
        x_names: Sequence[str] = (),
        z_names: Sequence[str] = (),
    ) -> ClusteredDataset:
        """Build a dataset from stacked arrays and a per-row group label.

        Clusters are ordered by first appearance of their label; rows keep
        their relative order inside a cluster.
        """
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        n_T = y.shape[0]
        if n_T == 0:
            raise EmptyDatasetError("no observations")
        x = np.asarray(x, dtype=np.float64).reshape(n_T, -1)
        z = np.asarray(z, dtype=np.float64).reshape(n_T, -1)
        groups = np.asarray(groups)
        if groups.shape[0] != n_T:
            raise SchemaError("groups must have one label per observation")
        t = None if times is None else np.asarray(times, dtype=np.float64).reshape(-1)
        _, first, inverse = np.unique(groups, return_index=True, return_inverse=True)
        rank = np.empty_like(first)
        rank[np.argsort(first, kind="stable")] = np.arange(first.shape[0])
        key = rank[inverse.reshape(-1)]
        perm = np.argsort(key, kind="stable")
        cuts = np.cumsum(np.bincount(key))[:-1]
        clusters = [
            Cluster(y[rows], x[rows], z[rows], None if t is None else t[rows])
            for rows in np.split(perm, cuts)
        ]
        return cls(tuple(clusters), x.shape[1], z.shape[1], tuple(x_names), tuple(z_names))


def assemble_dataset(
    records: Iterable[Sequence[object]],
    d1: int,
    d2: int,
    *,
    has_time: bool = False,
    x_names: Sequence[str] = (),
    z_names: Sequence[str] = (),
) -> ClusteredDataset:
    """Group flat ``(subject_id, y, x..., z..., [time])`` rows by subject."""
    width = 2 + d1 + d2 + int(has_time)
    ids: list[object] = []
    values: list[list[float]] = []
    for lineno, row in enumerate(records, start=1):
        row = list(row)
        if len(row) != width:
            raise SchemaError(f"row {lineno} has {len(row)} fields, expected {width}")
        try:
            values.append([float(v) for v in row[1:]])
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"row {lineno}: non-numeric value ({exc})") from None
        ids.append(row[0])
    if not values:
        raise EmptyDatasetError("no records")
    arr = np.array(values)
    labels = np.array([str(i) for i in ids])
    times = arr[:, 1 + d1 + d2] if has_time else None
    return ClusteredDataset.from_arrays(
        arr[:, 0],
        arr[:, 1 : 1 + d1],
        arr[:, 1 + d1 : 1 + d1 + d2],
        labels,
        times=times,
        x_names=x_names,
        z_names=z_names,
    )


def read_csv(path: str | Path, time_column: str | None = "time") -> ClusteredDataset:
    """Read ``subject,y,x1..x{d1},z1..z{d2}`` plus an optional time column.

    A column named ``time_column`` may appear anywhere after ``y``; when it
    is absent the dataset has no times.  Pass ``time_column=None`` to ignore
    times altogether.
    """
    path = Path(path)
    try:
        fh = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"{path}: cannot open ({exc.strerror or exc})") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise EmptyDatasetError(f"{path}: empty file") from None
        if len(header) < 2 or header[0] != "subject" or header[1] != "y":
            raise SchemaError(f"{path}: header must start with 'subject,y'")
        rest = header[2:]
        time_at = rest.index(time_column) + 2 if time_column in rest else None
        if time_at is not None:
            rest = [h for h in rest if h != time_column]
        x_names = [h for h in rest if h.startswith("x")]
        z_names = [h for h in rest if h.startswith("z")]
        if rest != x_names + z_names:
            raise SchemaError(f"{path}: expected x columns followed by z columns, got {rest}")
        rows = [r for r in reader if r and any(f.strip() for f in r)]
    if time_at is not None:
        rows = [r[:time_at] + r[time_at + 1 :] + [r[time_at]] if len(r) == len(header) else r for r in rows]
    return assemble_dataset(
        rows,
        len(x_names),
        len(z_names),
        has_time=time_at is not None,
        x_names=x_names,
        z_names=z_names,
    )


@dataclass(frozen=True)
class CenteringRecord:
    x_means: NDArray[np.float64]


def center_x(dataset: ClusteredDataset) -> tuple[ClusteredDataset, CenteringRecord]:
    """Remove the pooled column means of X."""
    means = dataset.x.mean(axis=0) if dataset.d1 else np.zeros(0)
    centered = dataset.with_arrays(x=dataset.x - means)
    return centered, CenteringRecord(means)


def rescale_z(
    dataset: ClusteredDataset,
) -> tuple[ClusteredDataset, list[tuple[float, float]]]:
    """Map every Z column affinely onto [0, 1] using the pooled min and max."""
    z = dataset.z
    lo = z.min(axis=0)
    hi = z.max(axis=0)
    bounds = []
    for l, (a, b) in enumerate(zip(lo, hi)):
        if not b > a:
            raise DegenerateCovariateError(f"Z column {l + 1} is constant ({a})")
        bounds.append((float(a), float(b)))
    scaled = (z - lo) / (hi - lo)
    # Endpoints must be attained exactly despite rounding.
    scaled[z == lo] = 0.0
    scaled[z == hi] = 1.0
    return dataset.with_arrays(z=np.clip(scaled, 0.0, 1.0)), bounds


class CovKind(str, enum.Enum):
    WI = "WI"
    EX = "EX"
    AR1 = "AR1"
    RSM = "RSM"

    @classmethod
    def parse(cls, value: str | CovKind) -> CovKind:
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise ParameterError(f"unknown covariance kind {value!r}") from None


VarianceFn = Callable[[Cluster], NDArray[np.float64]]


@dataclass(frozen=True)
class WorkingCovarianceSpec:
    """Declarative working covariance ``V_i = A_i^{1/2} R_i A_i^{1/2}``.

    ``alpha`` is the correlation parameter for EX and AR1 and the decay rate
    of the serial term for RSM.  ``rsm_params`` holds ``(tau2, nu2, omega2)``:
    measurement error, random intercept and serial variance.  ``variance_fn``
    optionally returns per-observation marginal variances (the diagonal of
    ``A_i``); the default is the identity.
    """

    kind: CovKind = CovKind.WI
    alpha: float = 0.0
    rsm_params: tuple[float, float, float] | None = None
    variance_fn: VarianceFn | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", CovKind.parse(self.kind))
        alpha = float(self.alpha)
        object.__setattr__(self, "alpha", alpha)
        if not np.isfinite(alpha):
            raise ParameterError("alpha must be finite")
        if self.kind is CovKind.EX and not alpha < 1.0:
            raise ParameterError(f"EX requires alpha < 1, got {alpha}")
        if self.kind is CovKind.AR1 and not abs(alpha) < 1.0:
            raise ParameterError(f"AR1 requires |alpha| < 1, got {alpha}")
        if self.kind is CovKind.RSM:
            if self.rsm_params is None:
                raise ParameterError("RSM requires rsm_params=(tau2, nu2, omega2)")
            tau2, nu2, omega2 = (float(v) for v in self.rsm_params)
            if not (tau2 > 0 and nu2 >= 0 and omega2 >= 0):
                raise ParameterError("RSM requires tau2 > 0 and nu2, omega2 >= 0")
            if alpha < 0:
                raise ParameterError("RSM decay rate alpha must be >= 0")
            object.__setattr__(self, "rsm_params", (tau2, nu2, omega2))

    @classmethod
    def independence(cls) -> WorkingCovarianceSpec:
        return cls(CovKind.WI)

    @classmethod
    def exchangeable(cls, alpha: float) -> WorkingCovarianceSpec:
        return cls(CovKind.EX, alpha)

    @classmethod
    def ar1(cls, alpha: float) -> WorkingCovarianceSpec:
        return cls(CovKind.AR1, alpha)

    @classmethod
    def rsm(cls, tau2: float, nu2: float, omega2: float, alpha: float) -> WorkingCovarianceSpec:
        return cls(CovKind.RSM, alpha, (tau2, nu2, omega2))

    def correlation(self, m: int, times: NDArray[np.float64] | None = None) -> NDArray[np.float64]:
        """Working covariance before marginal-variance scaling, size ``m``."""
        kind = self.kind
        if kind is CovKind.WI:
            return np.eye(m)
        if kind is CovKind.EX:
            if m > 1 and not self.alpha > -1.0 / (m - 1):
                raise ParameterError(
                    f"EX alpha={self.alpha} is not above -1/(m-1) for cluster size {m}"
                )
            return (1.0 - self.alpha) * np.eye(m) + self.alpha * np.ones((m, m))
        if kind is CovKind.AR1:
            lag = np.abs(np.subtract.outer(np.arange(m), np.arange(m)))
            return self.alpha**lag
        if times is None:
            raise MissingTimesError("RSM working covariance needs observation times")
        tau2, nu2, omega2 = self.rsm_params  # type: ignore[misc]
        gap = np.abs(np.subtract.outer(times, times))
        return tau2 * np.eye(m) + nu2 * np.ones((m, m)) + omega2 * np.exp(-self.alpha * gap)


def build_working_covariance(
    spec: WorkingCovarianceSpec,
    cluster: Cluster,
    variances: ArrayLike | None = None,
) -> NDArray[np.float64]:
    """Working covariance ``V_i`` of one cluster (symmetric positive definite)."""
    if spec.kind is CovKind.RSM and cluster.times is None:
        raise MissingTimesError("RSM working covariance needs observation times")
    v = spec.correlation(cluster.m, cluster.times)
    if variances is None and spec.variance_fn is not None:
        variances = spec.variance_fn(cluster)
    if variances is not None:
        a = np.asarray(variances, dtype=np.float64).reshape(-1)
        if a.shape[0] != cluster.m or np.any(a <= 0):
            raise ParameterError("variances must be positive, one per observation")
        s = np.sqrt(a)
        v = s[:, None] * v * s[None, :]
    v = 0.5 * (v + v.T)
    if np.linalg.eigvalsh(v)[0] <= 0:
        raise ParameterError(f"working covariance for {spec.kind.value} is not positive definite")
    return v


def invert_covariance(v: ArrayLike) -> NDArray[np.float64]:
    """Inverse of a symmetric positive-definite matrix via Cholesky."""
    v = np.asarray(v, dtype=np.float64)
    cond = np.linalg.cond(v)
    if not cond <= MAX_CONDITION:
        raise IllConditionedError(f"condition number {cond:.3g} exceeds {MAX_CONDITION:.0e}")
    try:
        factor = linalg.cho_factor(v, lower=True)
    except linalg.LinAlgError:
        raise IllConditionedError("matrix is not positive definite") from None
    inv = linalg.cho_solve(factor, np.eye(v.shape[0]))
    return 0.5 * (inv + inv.T)


def estimate_alpha(
    kind: CovKind | str,
    residuals: Sequence[ArrayLike],
    *,
    margin: float = 1e-3,
) -> float:
    """Moment estimator of the correlation parameter from per-cluster residuals.

    EX averages all within-cluster cross products, AR1 only the lag-one
    products; both are divided by the pooled mean squared residual.  The
    result is clipped into the legal range by ``margin``.
    """
    kind = CovKind.parse(kind)
    if kind is CovKind.WI:
        return 0.0
    if kind is CovKind.RSM:
        raise ParameterError("RSM parameters must be supplied, not estimated")
    res = [np.asarray(r, dtype=np.float64).reshape(-1) for r in residuals]
    total = np.concatenate(res)
    scale = np.mean(total**2)
    if scale == 0:
        return 0.0
    num = 0.0
    count = 0
    for r in res:
        m = r.shape[0]
        if kind is CovKind.EX:
            s = r.sum()
            num += 0.5 * (s * s - np.dot(r, r))
            count += m * (m - 1) // 2
        else:
            num += float(np.dot(r[:-1], r[1:]))
            count += m - 1
    if count == 0:
        return 0.0
    alpha = num / count / scale
    if kind is CovKind.EX:
        big_m = max(len(r) for r in res)
        lower = -1.0 / (big_m - 1) if big_m > 1 else -1.0
        return float(np.clip(alpha, lower + margin, 1.0 - margin))
    return float(np.clip(alpha, -1.0 + margin, 1.0 - margin))
