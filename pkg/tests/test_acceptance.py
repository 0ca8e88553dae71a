"""Acceptance checks, one test per criterion.

Each test prints a single ``PASS``/``FAIL`` line with the measured values
and then asserts.  The simulation studies are cached for the session so
that criteria sharing a study do not rerun it.
"""

import time
from dataclasses import replace

import numpy as np
import pytest
from conftest import no_spline_instance, random_dataset, study
from oracles import block_inverse, brute_force_support, dense_joint_solve, quad_integral

from plmsel import (
    PenaltySpec,
    WorkingCovarianceSpec,
    basis_matrix,
    fit_unpenalized,
    make_space,
    select_lambda,
    solve_penalized,
)
from plmsel.estimator import project_out_splines
from plmsel.penalties import hard_penalty, scad_derivative, scad_penalty
from plmsel.simulation import SimConfig, generate_replicate, run_study
from plmsel.solver import default_grid

pytestmark = pytest.mark.slow

TRUE_NONZERO = [0, 1, 4]
TRUE_ZERO = [2, 3, 5, 6, 7]


def verdict(capsys, number, ok, detail):
    with capsys.disabled():
        print(f"\n{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
    assert ok, detail


def full_basis(spaces, z):
    return np.hstack([basis_matrix(s, z[:, l]) for l, s in enumerate(spaces)])


def test_criterion_1_penalty_analytics(capsys):
    start = time.perf_counter()
    lam, a = 0.7, 3.7
    grid = np.linspace(0.0, 4.0 * a * lam, 1000)
    # Derivative formula written out independently of the package.
    want = lam * ((grid <= lam) + np.maximum(a * lam - grid, 0.0) / ((a - 1.0) * lam) * (grid > lam))
    deriv_exact = bool(np.all(scad_derivative(grid, lam, a) == want))
    pen = scad_penalty(grid, lam, a)

    def deriv(t):
        return lam if t <= lam else max(a * lam - t, 0.0) / (a - 1.0)

    quad = np.array([quad_integral(deriv, 0.0, b, (lam, a * lam)) for b in grid])
    quad_err = float(np.max(np.abs(pen - quad)))
    big = grid[grid >= lam]
    hard_exact = bool(np.all(hard_penalty(big, lam) == lam * lam))
    elapsed = time.perf_counter() - start
    ok = deriv_exact and quad_err < 1e-9 and hard_exact and elapsed < 1.0
    verdict(
        capsys, 1, ok,
        f"derivative exact={deriv_exact}, max |penalty - quadrature|={quad_err:.1e}, "
        f"hard exact={hard_exact}, {elapsed:.2f}s",
    )


def test_criterion_2_solver_oracles(capsys):
    start = time.perf_counter()
    kinds = {"WI": 0.0, "EX": 0.6, "AR1": 0.5}
    worst = 0.0
    for seed in range(50):
        rng = np.random.default_rng(1000 + seed)
        n = int(rng.integers(10, 51))
        d1 = int(rng.integers(1, 9))
        d2 = int(rng.integers(1, 3))
        kind = list(kinds)[seed % 3]
        ds, sizes = random_dataset(rng, n, d1, d2, kind=kind, alpha=kinds[kind])
        spaces = [make_space(3, 2)] * d2
        fit = fit_unpenalized(ds, spaces, WorkingCovarianceSpec(kind, kinds[kind]))
        beta, _ = dense_joint_solve(ds.y, ds.x, full_basis(spaces, ds.z), block_inverse(kind, kinds[kind], sizes))
        worst = max(worst, float(np.max(np.abs(fit.beta_hat - beta)) / max(1.0, np.max(np.abs(beta)))))
    agree = 0
    total = 50
    for seed in range(total):
        ds, sizes, spec, pen = no_spline_instance(seed)
        fit, _ = select_lambda(ds, [], spec, pen)
        vinv = block_inverse(spec.kind.value, spec.alpha, sizes)
        agree += fit.active_set == brute_force_support(ds.y, ds.x, vinv, pen.with_lambdas(fit.lambda_vector))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-8 and agree == total and elapsed < 60
    verdict(
        capsys, 2, ok,
        f"profiled vs dense max rel diff={worst:.1e} over 50 instances; "
        f"SCAD active sets equal exhaustive minimizer in {agree}/{total}; {elapsed:.1f}s",
    )


def test_criterion_3_table1(capsys):
    ex, wi = study(400), study(400, "WI")
    mrme = {n: study(n).MRME for n in (100, 200, 400)}
    checks = {
        "C": 4.6 <= ex.C <= 5.0,
        "I": ex.I <= 0.05,
        "RMSE_EX": abs(ex.RMSE / 0.0733 - 1) <= 0.35,
        "RMSE_WI": abs(wi.RMSE / 0.2689 - 1) <= 0.35,
        "WI>EX": wi.RMSE > ex.RMSE,
        "MRME<100": all(v < 100 for v in mrme.values()),
    }
    failed = [k for k, v in checks.items() if not v]
    verdict(
        capsys, 3, not failed,
        f"EX C={ex.C:.2f} I={ex.I:.2f} RMSE={ex.RMSE:.4f}; WI RMSE={wi.RMSE:.4f}; "
        f"MRME " + ", ".join(f"n={n}: {v:.1f}" for n, v in mrme.items())
        + (f"; failed {failed}" if failed else ""),
    )


def test_criterion_4_table2(capsys):
    sd, sd_m, _ = study(400).sd_table[0]
    ratio = sd_m / sd
    verdict(capsys, 4, 0.75 <= ratio <= 1.35, f"beta1 SD={sd:.4f} SD_m={sd_m:.4f} ratio={ratio:.3f}")


def test_criterion_5_coverage_and_curve_rates(capsys):
    reps = study(400, replicates=200).replicates
    used = [r for r in reps if r.converged]
    betas = np.array([r.beta_full for r in used])
    ses = np.array([r.se_full for r in used])
    truth = np.array(SimConfig().beta0)
    cover = np.mean(np.abs(betas - truth) <= 1.959964 * ses, axis=0)[TRUE_NONZERO]
    l2 = {n: np.mean([r.eta_l2 for r in study(n).replicates if r.converged], axis=0) for n in (100, 400)}
    coverage_ok = bool(np.all((cover >= 0.88) & (cover <= 0.99)))
    decreasing = bool(np.all(l2[400] < l2[100]))
    verdict(
        capsys, 5, coverage_ok and decreasing,
        f"coverage beta1,2,5={np.round(cover, 3).tolist()} over {len(used)} replicates; "
        f"mean L2 eta n=100 {np.round(l2[100], 4).tolist()} -> n=400 {np.round(l2[400], 4).tolist()}",
    )


def test_criterion_6_selection_consistency(capsys):
    reps = [r for r in study(400, replicates=200).replicates if r.converged]
    exact = np.mean([
        bool(np.all(r.beta_pen[TRUE_ZERO] == 0.0) and np.all(r.beta_pen[TRUE_NONZERO] != 0.0)) for r in reps
    ])
    verdict(capsys, 6, exact >= 0.85, f"P(exact support)={exact:.3f} over {len(reps)} replicates")


def test_criterion_7_property_suites(capsys):
    results = {}
    z = np.linspace(0.0, 1.0, 1001)
    results["partition of unity"] = max(
        float(np.max(np.abs(basis_matrix(make_space(q, k), z).sum(axis=1) - 1.0)))
        for q in (1, 2, 3) for k in (0, 4, 9)
    ) < 1e-12

    ex = WorkingCovarianceSpec.exchangeable(0.9)
    spaces = [make_space(3, 4)] * 2
    ortho, ee, descent = 0.0, 0.0, 0.0
    for seed in range(5):
        ds = generate_replicate(SimConfig(n=100), np.random.default_rng(seed))
        x_hat = np.vstack(project_out_splines(ds, spaces, ex))
        w = full_basis(spaces, ds.z)
        vinv = block_inverse("EX", 0.9, ds.sizes)
        ortho = max(ortho, float(np.max(np.abs(w.T @ vinv @ x_hat)) / np.max(np.abs(x_hat))))
        fit = fit_unpenalized(ds, spaces, ex)
        ee = max(ee, fit.diagnostics["ee_residual"])
        for kind in ("SCAD", "HARD"):
            for lam in default_grid()[::5]:
                pf = solve_penalized(ds, spaces, ex, PenaltySpec(kind, lam * fit.se), fit=fit)
                descent = max(descent, float(np.max(np.diff(pf.objective_path), initial=0.0)))
    results["projection orthogonality"] = ortho < 1e-8
    results["estimating equations"] = ee < 1e-8
    results["Q_P descent"] = descent <= 1e-10

    cfg = SimConfig(n=100, replicates=4, seed=3)
    results["thread determinism"] = run_study(cfg) == run_study(replace(cfg, workers=3)) == run_study(cfg)

    failed = [k for k, v in results.items() if not v]
    verdict(
        capsys, 7, not failed,
        f"orthogonality={ortho:.1e}, EE residual={ee:.1e}, max Q_P increase={descent:.1e}, "
        + ("all green" if not failed else f"failed {failed}"),
    )
