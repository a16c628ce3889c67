"""Anatomy of the criteria on one dataset.

Shows the fit term / penalty split for all six criteria, and the exact
degenerations that connect them: dropping the latent part turns the
complete-data criteria into their y-target versions, and dropping the
auxiliary variables turns the robust criterion into the classical one.
"""
import numpy as np

from auxsel import (
    EmOptions,
    aic_xb,
    aic_xy,
    aic_yb,
    aic_yy,
    estimate_info,
    fit_em_b,
    fit_em_y,
    risk_xb,
    tic,
    without_latent,
)
from auxsel.simlab import TrueModelSpec, for_case, generate, format_table

data = for_case(generate(TrueModelSpec(case=1), n=200, seed=7), 1).drop_z()
opts = EmOptions(seed=0)

fit_b = fit_em_b(data, opts)
fit_y = fit_em_y(data.drop_aux(), opts)
mats_b = estimate_info(data, fit_b.params)
mats_y = estimate_info(data.drop_aux(), fit_y.params)

reports = [
    risk_xb(data, fit_b.params, mats_b),
    aic_xb(data, fit_b.params, mats_b),
    aic_xy(data, fit_y.params, mats_y),
    aic_yb(data, fit_b.params, mats_b),
    aic_yy(data, fit_y.params),
    tic(data, fit_y.params, mats_y),
]
print(format_table([r.to_row() for r in reports]), end="")
print()

# degeneration chain: remove the latent part, then the auxiliaries
no_lat_b = without_latent(mats_b)
no_lat_y = without_latent(mats_y)
print("aic_xb without latent part  ", f"{aic_xb(data, fit_b.params, no_lat_b).value:10.3f}")
print("aic_yb (same by identity)   ", f"{aic_yb(data, fit_b.params, mats_b).value:10.3f}")
print("risk_xb, no latent, no aux  ", f"{risk_xb(data, fit_y.params, no_lat_y).value:10.3f}")
print("tic (same by identity)      ", f"{tic(data, fit_y.params, mats_y).value:10.3f}")

# the auxiliary decision in one line
d = aic_xb(data, fit_b.params, mats_b).value - aic_xy(data, fit_y.params, mats_y).value
print(f"\naic_xb - aic_xy = {d:.3f} -> auxiliary {'useful' if d < 0 else 'not useful'}")
