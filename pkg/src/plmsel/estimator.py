"""Profiled weighted least squares for the additive partially linear model.

The mean of cluster ``i`` is ``X_i beta + W_i delta`` where ``W_i`` is the
nuisance spline design: an intercept column followed, for every Z
coordinate, by its B-spline basis without the first function.  Because the
B-spline basis of each coordinate sums to one, this design spans exactly the
same space as the full concatenated basis while staying full rank when
there are two or more coordinates.

All ``V_i^{-1}``-weighted sums are formed by whitening: with
``V_i = L_i L_i^T`` the weighted normal equations become ordinary Gram
products of ``L_i^{-1} X_i``, ``L_i^{-1} W_i`` and ``L_i^{-1} y_i``.
"""

from __future__ import annotations

import warnings
from collections.abc import Sequence
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import linalg

from .data import (
    MAX_CONDITION,
    ClusteredDataset,
    CovKind,
    WorkingCovarianceSpec,
    build_working_covariance,
)
from .exceptions import (
    CollinearityError,
    IllConditionedError,
    NumericalError,
    TooManyKnotsError,
)
from .splines import SplineSpace, basis_matrix

__all__ = [
    "WhiteningOperator",
    "WeightedDesign",
    "BlockSystem",
    "CenteredCurve",
    "FitResult",
    "nuisance_design",
    "build_weighted_design",
    "assemble_blocks",
    "fit_unpenalized",
    "profile_gamma",
    "centered_eta",
    "project_out_splines",
    "sandwich_covariance",
    "joint_solve",
    "CURVE_GRID",
]

CURVE_GRID = np.linspace(0.0, 1.0, 201)
_RANK_TOL = 1e-12


def spd_solve(
    a: NDArray[np.float64],
    b: NDArray[np.float64],
    error: type[NumericalError] = NumericalError,
    what: str = "matrix",
) -> NDArray[np.float64]:
    """Solve ``a x = b`` for symmetric positive semidefinite ``a``.

    Raises ``error`` when ``a`` is numerically rank deficient.  Cholesky is
    tried first; a pivoted least-squares solve is the fallback.
    """
    a = 0.5 * (a + a.T)
    if a.shape[0] == 0:
        return np.zeros((0,) + b.shape[1:])
    eig = np.linalg.eigvalsh(a)
    if not eig[-1] > 0 or eig[0] <= _RANK_TOL * eig[-1]:
        raise error(f"{what} is singular (eigenvalues {eig[0]:.3g} .. {eig[-1]:.3g})")
    try:
        return linalg.cho_solve(linalg.cho_factor(a, lower=True), b)
    except linalg.LinAlgError:
        return linalg.lstsq(a, b, lapack_driver="gelsy")[0]


class WhiteningOperator:
    """Applies ``L_i^{-1}`` cluster by cluster, where ``V_i = L_i L_i^T``.

    Clusters of equal size are processed as one batch.  When the working
    covariance depends only on the cluster size (WI, EX, AR1 without a
    variance override) a single factor is shared by the whole batch.
    """

    def __init__(self, dataset: ClusteredDataset, spec: WorkingCovarianceSpec) -> None:
        self.dataset = dataset
        self.spec = spec
        sizes = dataset.sizes
        offsets = dataset.offsets
        self.identity = spec.kind is CovKind.WI and spec.variance_fn is None
        # Per observation sqrt of the marginal variance (diagonal of A_i).
        self.a_sqrt = np.ones(dataset.n_T)
        self.max_condition = 1.0
        self._batches: list[tuple[NDArray[np.intp], NDArray[np.float64]]] = []
        if self.identity:
            return
        shared = spec.kind is not CovKind.RSM and spec.variance_fn is None
        for m in np.unique(sizes):
            members = np.flatnonzero(sizes == m)
            rows = offsets[members][:, None] + np.arange(m)[None, :]
            if shared:
                v = build_working_covariance(spec, dataset.clusters[members[0]])[None]
            else:
                v = np.stack([build_working_covariance(spec, dataset.clusters[i]) for i in members])
            cond = float(np.max(np.linalg.cond(v)))
            if not cond <= MAX_CONDITION:
                raise IllConditionedError(f"working covariance condition number {cond:.3g}")
            self.max_condition = max(self.max_condition, cond)
            chol = np.linalg.cholesky(v)
            eye = np.broadcast_to(np.eye(m), chol.shape)
            linv = np.linalg.solve(chol, eye)
            diag = np.sqrt(np.diagonal(v, axis1=1, axis2=2))
            self.a_sqrt[rows] = np.broadcast_to(diag, rows.shape)
            self._batches.append((rows, linv))

    def whiten(self, values: ArrayLike) -> NDArray[np.float64]:
        """``L_i^{-1} v_i`` for a stacked ``(n_T,)`` or ``(n_T, k)`` array."""
        v = np.asarray(values, dtype=np.float64)
        if self.identity:
            return v.copy()
        flat = v.ndim == 1
        v2 = v[:, None] if flat else v
        out = np.empty_like(v2)
        for rows, linv in self._batches:
            out[rows] = linv @ v2[rows]
        return out[:, 0] if flat else out

    def correlation_quadratic(self, residuals: ArrayLike) -> float:
        """``sum_i r_i^T R_i^{-1} r_i`` with ``R_i = A_i^{-1/2} V_i A_i^{-1/2}``."""
        r = np.asarray(residuals, dtype=np.float64) * self.a_sqrt
        rw = self.whiten(r)
        return float(rw @ rw)

    def cluster_sums(self, values: NDArray[np.float64]) -> NDArray[np.float64]:
        """Row sums within each cluster of a stacked array."""
        return np.add.reduceat(values, self.dataset.offsets[:-1], axis=0)


def nuisance_design(spaces: Sequence[SplineSpace], z: ArrayLike) -> NDArray[np.float64]:
    """Intercept plus each coordinate's basis minus its first function."""
    z = np.asarray(z, dtype=np.float64)
    z = z.reshape(z.shape[0], -1)
    cols = [np.ones((z.shape[0], 1))]
    for l, space in enumerate(spaces):
        cols.append(basis_matrix(space, z[:, l])[:, 1:])
    return np.hstack(cols)


@dataclass(frozen=True)
class BlockSystem:
    """``V^{-1}``-weighted normal-equation blocks of the joint system.

    ``B`` refers to the nuisance spline design (see module docstring).
    """

    H_XX: NDArray[np.float64]
    H_XB: NDArray[np.float64]
    H_BB: NDArray[np.float64]
    b_X: NDArray[np.float64]
    b_B: NDArray[np.float64]
    yy: float = 0.0

    @property
    def H_BX(self) -> NDArray[np.float64]:
        return self.H_XB.T

    def full(self) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        """The joint matrix and right-hand side, parametric block first."""
        h = np.block([[self.H_XX, self.H_XB], [self.H_BX, self.H_BB]])
        return h, np.concatenate([self.b_X, self.b_B])

    def __add__(self, other: BlockSystem) -> BlockSystem:
        return BlockSystem(
            self.H_XX + other.H_XX,
            self.H_XB + other.H_XB,
            self.H_BB + other.H_BB,
            self.b_X + other.b_X,
            self.b_B + other.b_B,
            self.yy + other.yy,
        )


@dataclass(frozen=True, eq=False)
class WeightedDesign:
    """Raw and whitened stacked designs for one dataset and working covariance."""

    dataset: ClusteredDataset
    spaces: tuple[SplineSpace, ...]
    spec: WorkingCovarianceSpec
    whitener: WhiteningOperator
    x: NDArray[np.float64]
    w: NDArray[np.float64]
    y: NDArray[np.float64]
    xw: NDArray[np.float64]
    ww: NDArray[np.float64]
    yw: NDArray[np.float64]

    @cached_property
    def blocks(self) -> BlockSystem:
        return BlockSystem(
            self.xw.T @ self.xw,
            self.xw.T @ self.ww,
            self.ww.T @ self.ww,
            self.xw.T @ self.yw,
            self.ww.T @ self.yw,
            float(self.yw @ self.yw),
        )


def build_weighted_design(
    dataset: ClusteredDataset,
    spaces: Sequence[SplineSpace],
    spec: WorkingCovarianceSpec,
) -> WeightedDesign:
    spaces = tuple(spaces)
    if len(spaces) != dataset.d2:
        raise ValueError(f"{len(spaces)} spline spaces for d2={dataset.d2}")
    whitener = WhiteningOperator(dataset, spec)
    x = dataset.x
    w = nuisance_design(spaces, dataset.z)
    y = dataset.y
    return WeightedDesign(
        dataset, spaces, spec, whitener, x, w, y,
        whitener.whiten(x), whitener.whiten(w), whitener.whiten(y),
    )


def assemble_blocks(
    dataset: ClusteredDataset,
    spaces: Sequence[SplineSpace],
    spec: WorkingCovarianceSpec,
) -> BlockSystem:
    """Sums over clusters of ``X^T V^{-1} X``, ``X^T V^{-1} B``, ... and ``y`` terms."""
    return build_weighted_design(dataset, spaces, spec).blocks


def joint_solve(blocks: BlockSystem) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Solve the full symmetric system in one dense factorization."""
    h, b = blocks.full()
    theta = spd_solve(h, b, CollinearityError, "joint normal matrix")
    d1 = blocks.H_XX.shape[0]
    return theta[:d1], theta[d1:]


def profile_gamma(beta: ArrayLike, blocks: BlockSystem) -> NDArray[np.float64]:
    """Nuisance coefficients solving their estimating equation at ``beta``."""
    beta = np.asarray(beta, dtype=np.float64)
    rhs = blocks.b_B - blocks.H_BX @ beta
    return spd_solve(blocks.H_BB, rhs, TooManyKnotsError, "spline Gram block")


@dataclass(frozen=True)
class CenteredCurve:
    """Spline ``sum_s gamma_s B_s(z)`` minus its mean over the observed Z."""

    space: SplineSpace
    gamma: NDArray[np.float64]
    offset: float

    def __call__(self, z: ArrayLike) -> NDArray[np.float64]:
        return basis_matrix(self.space, z) @ self.gamma - self.offset


def centered_eta(
    gamma: ArrayLike,
    space: SplineSpace,
    grid: ArrayLike,
    z_observed: ArrayLike,
) -> NDArray[np.float64]:
    """Curve values on ``grid`` after removing the empirical mean over ``z_observed``."""
    gamma = np.asarray(gamma, dtype=np.float64)
    offset = float(np.mean(basis_matrix(space, z_observed) @ gamma))
    return CenteredCurve(space, gamma, offset)(grid)


@dataclass(frozen=True, eq=False)
class ProfiledSystem:
    """The spline-profiled least-squares problem in ``beta`` alone.

    ``Q(beta) = 0.5 * ||y_tilde_w - x_hat_w beta||^2`` with
    ``gram = x_hat_w^T x_hat_w`` and ``score0 = x_hat_w^T y_tilde_w``.
    """

    x_hat_w: NDArray[np.float64]
    y_tilde_w: NDArray[np.float64]
    gram: NDArray[np.float64]
    score0: NDArray[np.float64]
    proj: NDArray[np.float64]
    delta0: NDArray[np.float64]

    @cached_property
    def yy(self) -> float:
        return float(self.y_tilde_w @ self.y_tilde_w)

    def objective(self, beta: ArrayLike) -> float:
        b = np.asarray(beta, dtype=np.float64)
        return 0.5 * (self.yy - 2.0 * float(b @ self.score0) + float(b @ self.gram @ b))

    def delta(self, beta: ArrayLike) -> NDArray[np.float64]:
        """Nuisance coefficients profiled at ``beta``."""
        return self.delta0 - self.proj @ np.asarray(beta, dtype=np.float64)


@dataclass(frozen=True, eq=False)
class FitResult:
    """Unpenalized fit.

    ``gamma_hat`` holds ``d2 * J`` B-spline coefficients (the first per
    coordinate is zero by construction) and ``intercept`` the constant of
    the nuisance design.  Fitted means are
    ``x @ beta_hat + intercept_shift + sum_l eta_hat[l](z_l)``.
    """

    beta_hat: NDArray[np.float64]
    gamma_hat: NDArray[np.float64]
    intercept: float
    intercept_shift: float
    eta_hat: tuple[CenteredCurve, ...]
    omega_hat: NDArray[np.float64]
    se: NDArray[np.float64]
    residuals: list[NDArray[np.float64]]
    x_hat: NDArray[np.float64] = field(repr=False)
    design: WeightedDesign = field(repr=False)
    profiled: ProfiledSystem = field(repr=False)
    diagnostics: dict[str, float] = field(default_factory=dict)

    @property
    def blocks(self) -> BlockSystem:
        return self.design.blocks

    def fitted(self) -> NDArray[np.float64]:
        d = self.design
        return d.x @ self.beta_hat + d.w @ self.profiled.delta(self.beta_hat)

    def curves(self, grid: ArrayLike = CURVE_GRID) -> NDArray[np.float64]:
        """Centered curves on ``grid``, shape ``(len(grid), d2)``."""
        grid = np.asarray(grid, dtype=np.float64)
        return np.column_stack([eta(grid) for eta in self.eta_hat]) if self.eta_hat else (
            np.zeros((grid.shape[0], 0))
        )


def split_gamma(
    delta: NDArray[np.float64],
    spaces: Sequence[SplineSpace],
    z: NDArray[np.float64],
) -> tuple[NDArray[np.float64], float, float, tuple[CenteredCurve, ...]]:
    """Map nuisance coefficients to full B-spline coefficients and centered curves."""
    intercept = float(delta[0])
    gammas = []
    curves = []
    shift = intercept
    pos = 1
    for l, space in enumerate(spaces):
        g = np.concatenate([[0.0], delta[pos : pos + space.dimension - 1]])
        pos += space.dimension - 1
        offset = float(np.mean(basis_matrix(space, z[:, l]) @ g))
        shift += offset
        gammas.append(g)
        curves.append(CenteredCurve(space, g, offset))
    gamma = np.concatenate(gammas) if gammas else np.zeros(0)
    return gamma, intercept, shift, tuple(curves)


def sandwich_from_scores(
    gram: NDArray[np.float64],
    x_hat_w: NDArray[np.float64],
    resid_w: NDArray[np.float64],
    whitener: WhiteningOperator,
    ridge: NDArray[np.float64] | None = None,
) -> NDArray[np.float64]:
    """``(G + ridge)^{-1} (sum_i s_i s_i^T) (G + ridge)^{-1}`` with cluster scores ``s_i``."""
    if gram.shape[0] == 0:
        return np.zeros((0, 0))
    scores = whitener.cluster_sums(x_hat_w * resid_w[:, None])
    meat = scores.T @ scores
    bread = gram if ridge is None else gram + ridge
    inv = spd_solve(bread, np.eye(gram.shape[0]), CollinearityError, "sandwich bread")
    cov = inv @ meat @ inv
    return 0.5 * (cov + cov.T)


def sandwich_covariance(
    x_hat: ArrayLike,
    residuals: Sequence[ArrayLike] | ArrayLike,
    dataset: ClusteredDataset,
    spec: WorkingCovarianceSpec,
    *,
    whitener: WhiteningOperator | None = None,
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Robust covariance ``Omega_hat`` of ``sqrt(n)(beta_hat - beta)`` and the SEs.

    ``Omega_hat = n (X^T V^-1 X)^-1 (X^T V^-1 S V^-1 X) (X^T V^-1 X)^-1`` with
    ``X`` the spline-projected covariates and ``S`` block diagonal with the
    residual outer products of each cluster.  ``SE_k = sqrt(Omega_kk / n)``.
    """
    if isinstance(x_hat, (list, tuple)):
        x_hat = np.vstack(x_hat)
    x_hat = np.asarray(x_hat, dtype=np.float64).reshape(dataset.n_T, -1)
    if isinstance(residuals, (list, tuple)):
        residuals = np.concatenate([np.asarray(r).reshape(-1) for r in residuals])
    resid = np.asarray(residuals, dtype=np.float64).reshape(-1)
    if dataset.n < x_hat.shape[1]:
        warnings.warn(
            f"only {dataset.n} clusters for {x_hat.shape[1]} coefficients; "
            "the sandwich covariance is unstable",
            RuntimeWarning,
            stacklevel=2,
        )
    whitener = whitener or WhiteningOperator(dataset, spec)
    xw = whitener.whiten(x_hat)
    cov = sandwich_from_scores(xw.T @ xw, xw, whitener.whiten(resid), whitener)
    omega = dataset.n * cov
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    return omega, se


def fit_design(design: WeightedDesign) -> FitResult:
    """Unpenalized fit on a prepared weighted design."""
    dataset = design.dataset
    blocks = design.blocks
    d1 = dataset.d1
    if d1 + design.w.shape[1] >= dataset.n_T:
        raise CollinearityError(
            f"{d1 + design.w.shape[1]} columns for {dataset.n_T} observations"
        )
    rhs = np.column_stack([blocks.H_BX, blocks.b_B]) if d1 else blocks.b_B[:, None]
    sol = spd_solve(blocks.H_BB, rhs, TooManyKnotsError, "spline Gram block (try fewer knots)")
    proj, delta0 = sol[:, :d1], sol[:, d1]

    x_hat_w = design.xw - design.ww @ proj
    y_tilde_w = design.yw - design.ww @ delta0
    gram = x_hat_w.T @ x_hat_w
    score0 = x_hat_w.T @ y_tilde_w
    if d1:
        # A covariate (almost) inside the spline space leaves nothing after projection.
        left = np.diag(gram) / np.maximum(np.diag(blocks.H_XX), np.finfo(float).tiny)
        if np.min(left) <= _RANK_TOL:
            k = int(np.argmin(left))
            raise CollinearityError(
                f"covariate {dataset.x_names[k]} is (nearly) a function of the spline covariates"
            )
    beta = spd_solve(gram, score0, CollinearityError, "profiled covariate matrix")
    profiled = ProfiledSystem(x_hat_w, y_tilde_w, gram, score0, proj, delta0)

    delta = profiled.delta(beta)
    resid = design.y - design.x @ beta - design.w @ delta
    cov = sandwich_from_scores(gram, x_hat_w, design.whitener.whiten(resid), design.whitener)
    if dataset.n < d1:
        warnings.warn(
            f"only {dataset.n} clusters for {d1} coefficients; the sandwich covariance is unstable",
            RuntimeWarning,
            stacklevel=2,
        )
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    gamma, intercept, shift, curves = split_gamma(delta, design.spaces, dataset.z)

    resid_w = y_tilde_w - x_hat_w @ beta
    grad_x = design.xw.T @ resid_w
    grad_b = design.ww.T @ resid_w
    scale = 1.0 + max(np.max(np.abs(blocks.b_X), initial=0.0), np.max(np.abs(blocks.b_B)))
    eig_bb = np.linalg.eigvalsh(blocks.H_BB)
    diagnostics = {
        "ee_residual": float(max(np.max(np.abs(grad_x), initial=0.0), np.max(np.abs(grad_b))) / scale),
        "cond_H_BB": float(eig_bb[-1] / eig_bb[0]),
        "cond_V_max": design.whitener.max_condition,
    }
    return FitResult(
        beta_hat=beta,
        gamma_hat=gamma,
        intercept=intercept,
        intercept_shift=shift,
        eta_hat=curves,
        omega_hat=dataset.n * cov,
        se=se,
        residuals=dataset.split(resid),
        x_hat=design.x - design.w @ proj,
        design=design,
        profiled=profiled,
        diagnostics=diagnostics,
    )


def fit_unpenalized(
    dataset: ClusteredDataset,
    spaces: Sequence[SplineSpace],
    spec: WorkingCovarianceSpec,
) -> FitResult:
    """Weighted least-squares estimate of ``(beta, gamma)`` with sandwich SEs."""
    return fit_design(build_weighted_design(dataset, spaces, spec))


def project_out_splines(
    dataset: ClusteredDataset,
    spaces: Sequence[SplineSpace],
    spec: WorkingCovarianceSpec,
) -> list[NDArray[np.float64]]:
    """Per-cluster ``X_i`` minus its ``V^{-1}``-weighted projection on the spline space."""
    design = build_weighted_design(dataset, spaces, spec)
    blocks = design.blocks
    proj = spd_solve(blocks.H_BB, blocks.H_BX, TooManyKnotsError, "spline Gram block")
    return dataset.split(design.x - design.w @ proj)
