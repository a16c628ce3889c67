"""Leave-one-out cross-validation with a partially latent target.

The held-out score of a record is the predictive log density of y plus
the expected log posterior of the latent label given y, where the
expectation weight is the full-data fitted posterior (the latent part is
not observable, so its score is a plug-in).  Twice n times the LOOCV
value tracks the misspecification-robust risk estimate up to a plug-in
constant and the latent trace penalty; :func:`equivalence_gap` measures
how close the two get on a given sample.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .model import AuxselError, FullParams, NumericalError
from .gmm import (
    EmOptions, em_step_b, em_step_y, fit_em_b, fit_em_y, logdens_y,
    resp_z_given_y, warm_fit_b, warm_fit_y,
)
from .infomat import estimate_info, without_latent
from .criteria import risk_xb

RESP_CLAMP = 1e-300   # posteriors clamped into [RESP_CLAMP, 1] inside logs

MAX_FAILURE_SHARE = 0.1   # tolerated share of fold refits that fall back


@dataclass(frozen=True)
class LoocvReport:
    """Cross-validated risk, per-fold held-out scores, fallback count."""

    cv_value: float
    per_fold_g: np.ndarray
    refit_failures: int


def f_plugin(y, theta, theta_ref):
    """Expected log posterior of the latent label at y.

    Weights come from ``theta_ref``; the scored posterior from
    ``theta``.  Both posteriors are clamped away from zero before the
    log, so the value is finite for any admissible parameters.
    """
    w = resp_z_given_y(theta_ref, y)
    r = resp_z_given_y(theta, y)
    lo = np.log(np.clip(r, RESP_CLAMP, 1.0))
    lo2 = np.log(np.clip(1.0 - r, RESP_CLAMP, 1.0))
    return w * lo + (1.0 - w) * lo2


def _full_fit(data, opts):
    return fit_em_b(data, opts) if data.has_a else fit_em_y(data, opts)


def _fold_params(sub, params, opts):
    """Warm-started single-run refit with one EM step as the fallback."""
    single = replace(opts, restarts=1)
    try:
        rep = warm_fit_b(sub, params, single) if sub.has_a else \
            warm_fit_y(sub, params, single)
        if np.isfinite(rep.loglik_per_obs):
            return rep.params, False
    except AuxselError:
        pass
    fallback = em_step_b(sub, params) if sub.has_a else em_step_y(sub, params)
    return fallback, True


def loocv_risk(data, opts=EmOptions(), latent=True, fit=None):
    """Leave-one-out estimate of the predictive risk.

    Parameters
    ----------
    data : Dataset; the fit uses auxiliary columns when present.
    opts : EmOptions for the full fit and the warm fold refits.
    latent : include the plug-in latent term; with False this is the
        ordinary predictive LOOCV of the y density.
    fit : optional FitReport of the full-data fit, to avoid refitting.

    Returns
    -------
    LoocvReport; more than 10 percent fold fallbacks raise NumericalError.
    """
    if fit is None:
        fit = _full_fit(data, opts)
    params = fit.params
    theta_full = params.theta if isinstance(params, FullParams) else params
    n = data.n
    g = np.empty(n)
    failures = 0
    for i in range(n):
        sub = data.without(i)
        cand, fell_back = _fold_params(sub, params, opts)
        if fell_back:
            failures += 1
        theta_i = cand.theta if isinstance(cand, FullParams) else cand
        gi = float(logdens_y(theta_i, data.y[i]))
        if latent:
            gi += float(f_plugin(data.y[i], theta_i, theta_full))
        g[i] = gi
    if failures > MAX_FAILURE_SHARE * n:
        raise NumericalError(f"{failures} of {n} fold refits fell back")
    return LoocvReport(-float(g.mean()), g, failures)


def equivalence_gap(data, opts=EmOptions(), latent=True, fit=None, report=None):
    """2n LOOCV minus its criterion-side estimate on the same sample.

    The criterion side is the robust risk estimate minus twice the
    summed plug-in latent term at the full-data fit and minus the
    latent trace penalty: with plug-in weights the latent part of every
    held-out score is stationary at the full-data fit, so the fold
    refits cannot reproduce that trace and it must come out of the
    criterion side for the residual to vanish.  Without the latent part
    the gap reduces to 2n LOOCV minus the classical robust criterion.
    ``fit`` and ``report`` allow reuse of an existing full-data fit and
    LOOCV run.
    """
    if fit is None:
        fit = _full_fit(data, opts)
    if report is None:
        report = loocv_risk(data, opts, latent=latent, fit=fit)
    mats = estimate_info(data, fit.params)
    if not latent:
        mats = without_latent(mats)
    risk = risk_xb(data, fit.params, mats)
    const = 0.0
    if latent:
        theta = fit.params.theta if isinstance(fit.params, FullParams) else fit.params
        const = 2.0 * float(np.sum(f_plugin(data.y, theta, theta)))
        const += risk.traces["Izy_IbInv_Jb_IbInv"]
    return 2.0 * data.n * report.cv_value - (risk.value - const)
