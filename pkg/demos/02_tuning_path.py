"""
Reading the BIC tuning path
===========================

Walk along the lambda grid and watch the active set shrink, the
effective number of parameters fall and BIC trade fit against size.
SCAD leaves large coefficients unpenalized, so BIC is flat once only
the true covariates remain; ties are broken towards the largest lambda.
"""

import numpy as np

from plmsel import PenaltySpec, WorkingCovarianceSpec, fit_unpenalized, make_space, select_lambda
from plmsel.simulation import SimConfig, generate_replicate

data = generate_replicate(SimConfig(n=200), np.random.default_rng(7))
spaces = [make_space(3, 4)] * 2
working = WorkingCovarianceSpec.exchangeable(0.9)
fit = fit_unpenalized(data, spaces, working)

for kind in ("SCAD", "HARD"):
    chosen, path = select_lambda(data, spaces, working, PenaltySpec(kind, np.zeros(8)), fit=fit)
    print(f"\n{kind}: chosen lambda {chosen.lambda_scalar:.3g}, active {chosen.active_set}")
    print("  lambda     size  eff.par        BIC")
    for rec in path.records()[::4]:
        print(f"  {rec['lambda']:8.4f}  {rec['active_size']:4d}  {rec['effective_params']:7.3f}  {rec['bic']:10.5f}")
