"""Independent reference implementations used only by the tests.

Each oracle computes its answer by a route that shares no code with the
package: exact rational arithmetic, dense explicit inverses, quadrature
or exhaustive search.
"""

from __future__ import annotations

import itertools
from fractions import Fraction

import numpy as np
from scipy import integrate

from plmsel.penalties import PenaltySpec


def rational_bspline(knots: list[Fraction], s: int, q: int, z: Fraction) -> Fraction:
    """Cox-de Boor recursion in exact arithmetic, half-open spans except at 1."""
    if q == 0:
        lo, hi = knots[s], knots[s + 1]
        if lo <= z < hi:
            return Fraction(1)
        # Close the last nonempty span on the right.
        last = max(i for i in range(len(knots) - 1) if knots[i] < knots[i + 1])
        return Fraction(1) if (s == last and z == hi) else Fraction(0)
    out = Fraction(0)
    d1 = knots[s + q] - knots[s]
    if d1:
        out += (z - knots[s]) / d1 * rational_bspline(knots, s, q - 1, z)
    d2 = knots[s + q + 1] - knots[s + 1]
    if d2:
        out += (knots[s + q + 1] - z) / d2 * rational_bspline(knots, s + 1, q - 1, z)
    return out


def rational_basis(q: int, n_interior: int, z: Fraction) -> list[Fraction]:
    interior = [Fraction(s, n_interior + 1) for s in range(1, n_interior + 1)]
    knots = [Fraction(0)] * (q + 1) + interior + [Fraction(1)] * (q + 1)
    return [rational_bspline(knots, s, q, z) for s in range(n_interior + q + 1)]


def quad_integral(f, lo: float, hi: float, breaks=()) -> float:
    pts = sorted(b for b in breaks if lo < b < hi)
    edges = [lo, *pts, hi]
    return sum(
        integrate.quad(f, a, b, epsabs=1e-13, epsrel=1e-13, limit=200)[0]
        for a, b in zip(edges[:-1], edges[1:])
    )


def dense_covariance(kind: str, alpha: float, m: int) -> np.ndarray:
    j = np.arange(m)
    if kind == "WI":
        return np.eye(m)
    if kind == "EX":
        return (1 - alpha) * np.eye(m) + alpha * np.ones((m, m))
    if kind == "AR1":
        return alpha ** np.abs(j[:, None] - j[None, :]).astype(float)
    raise ValueError(kind)


def block_inverse(kind: str, alpha: float, sizes) -> np.ndarray:
    """Explicit inverse of the block-diagonal working covariance."""
    n_T = int(sum(sizes))
    out = np.zeros((n_T, n_T))
    start = 0
    for m in sizes:
        out[start : start + m, start : start + m] = np.linalg.inv(dense_covariance(kind, alpha, m))
        start += m
    return out


def dense_joint_solve(y, x, b_full, vinv):
    """Joint weighted least squares on ``[X, B]`` with a pseudo-inverse.

    ``b_full`` is the full (possibly rank deficient) spline design; an
    intercept column is used instead when there are no splines.  Returns
    beta and the fitted mean.
    """
    d = np.hstack([x, b_full if b_full.shape[1] else np.ones((x.shape[0], 1))])
    h = d.T @ vinv @ d
    rhs = d.T @ vinv @ y
    coef = np.linalg.lstsq(h, rhs, rcond=1e-13)[0]
    return coef[: x.shape[1]], d @ coef


def gls_objective(y, x, vinv, beta):
    """Exact ``Q(beta)``: the intercept minimized out by a dense GLS solve."""
    one = np.ones(y.shape[0])
    r0 = y - x @ beta
    c = (one @ vinv @ r0) / (one @ vinv @ one)
    r = r0 - c
    return 0.5 * float(r @ vinv @ r)


def gls_quadratic(y, x, vinv):
    """``(G, h)`` with ``Q(beta) = beta'G beta / 2 - h'beta + const``, intercept profiled."""
    one = np.ones(y.shape[0])
    m = vinv - np.outer(vinv @ one, one @ vinv) / (one @ vinv @ one)
    return x.T @ m @ x, x.T @ m @ y


def _pieces(kind: str, lam: float, a: float):
    """Per-region ``(lo, hi, d, c)``: on ``lo <= |b| <= hi`` the penalty
    derivative with respect to ``beta = sign * |b|`` is ``d * beta + c * sign``."""
    if kind == "SCAD":
        return [
            (0.0, lam, 0.0, lam),
            (lam, a * lam, -1.0 / (a - 1.0), a * lam / (a - 1.0)),
            (a * lam, np.inf, 0.0, 0.0),
        ]
    return [(0.0, lam, -2.0, 2.0 * lam), (lam, np.inf, 0.0, 0.0)]


def exact_penalized_minimizer(y, x, vinv, penalty: PenaltySpec) -> np.ndarray:
    """Global minimizer of ``Q + n_T * sum p(|beta_k|)`` by exhaustive enumeration.

    Away from the coordinate axes the objective is continuously
    differentiable and piecewise quadratic, so every local minimum is a
    stationary point of one quadratic piece, indexed by the support, the
    signs and the penalty region of each active coordinate.  All pieces are
    solved and the feasible stationary point with the smallest exact
    objective wins.  Only practical for ``d1 <= 4``.
    """
    n_T, d1 = x.shape
    g, h = gls_quadratic(y, x, vinv)
    kind = penalty.kind.value

    def objective(beta):
        return gls_objective(y, x, vinv, beta) + n_T * penalty.total(beta)

    best_beta = np.zeros(d1)
    best = objective(best_beta)
    for r in range(1, d1 + 1):
        for subset in itertools.combinations(range(d1), r):
            idx = list(subset)
            regions = [_pieces(kind, float(penalty.lambdas[k]), penalty.a) for k in idx]
            for signs in itertools.product((-1.0, 1.0), repeat=r):
                for choice in itertools.product(*[range(len(p)) for p in regions]):
                    pieces = [regions[j][c] for j, c in enumerate(choice)]
                    d = np.array([p[2] for p in pieces])
                    c = np.array([p[3] for p in pieces]) * np.array(signs)
                    a_mat = g[np.ix_(idx, idx)] + n_T * np.diag(d)
                    try:
                        sol = np.linalg.solve(a_mat, h[idx] - n_T * c)
                    except np.linalg.LinAlgError:
                        continue
                    mag = sol * np.array(signs)
                    lo = np.array([p[0] for p in pieces])
                    hi = np.array([p[1] for p in pieces])
                    tol = 1e-12 * (1.0 + np.abs(mag))
                    if np.any(mag <= 0) or np.any(mag < lo - tol) or np.any(mag > hi + tol):
                        continue
                    beta = np.zeros(d1)
                    beta[idx] = sol
                    val = objective(beta)
                    if val < best:
                        best, best_beta = val, beta
    return best_beta


def brute_force_support(y, x, vinv, penalty: PenaltySpec) -> tuple[int, ...]:
    beta = exact_penalized_minimizer(y, x, vinv, penalty)
    return tuple(int(k) for k in np.flatnonzero(beta))
