"""Logistic regression via iteratively reweighted least squares (Newton
steps), with Wald standard errors, odds ratios and McFadden pseudo R-squared.

Used for the two collection-odds models (Meta outcome on Meta-installed
sites, Google outcome on Google-installed sites); validated on synthetic
data since the original site-level raw data is not available.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm as _normal

from formscope.model import Provider, SiteVerdict
from formscope.stats import Z_95

MAX_ITERATIONS = 100
GRADIENT_TOL = 1e-8
SEPARATION_LIMIT = 15.0


@dataclass(frozen=True)
class RegressionFit:
    feature_names: tuple[str, ...]
    coefficients: np.ndarray  # log-odds, intercept first
    std_errors: np.ndarray
    odds_ratios: np.ndarray
    p_values: np.ndarray
    ci_low: np.ndarray  # 95% CI bounds on the odds ratios
    ci_high: np.ndarray
    pseudo_r_squared: float
    log_likelihood: float
    converged: bool
    iterations: int
    gradient_max_norm: float
    note: str = ""


def log_likelihood(beta: np.ndarray, X: np.ndarray, y: np.ndarray) -> float:
    eta = X @ beta
    # log(1 + e^eta) computed stably
    return float(y @ eta - np.logaddexp(0.0, eta).sum())


def log_likelihood_gradient(beta: np.ndarray, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    p = _sigmoid(X @ beta)
    return X.T @ (y - p)


def _sigmoid(eta: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-eta))


def fit_logistic(features: np.ndarray, outcome: np.ndarray,
                 feature_names: list[str] | None = None) -> RegressionFit:
    """Maximize the Bernoulli log-likelihood by Newton/IRLS.

    `features` has one column per predictor (an intercept column is added
    here). Stops when the gradient max-norm drops below 1e-8 or after 100
    iterations. Complete separation (a coefficient diverging past 15 in
    magnitude) is reported as non-convergence, not an exception.
    """
    X = np.asarray(features, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    y = np.asarray(outcome, dtype=float).ravel()
    if X.shape[0] != y.shape[0]:
        raise ValueError("features and outcome disagree on sample count")
    if X.shape[1] < 1:
        raise ValueError("need at least one feature column")
    classes = set(np.unique(y))
    if not classes <= {0.0, 1.0}:
        raise ValueError("outcome must be 0/1")
    if len(classes) < 2:
        raise ValueError("outcome contains a single class; nothing to fit")

    n, k = X.shape
    Xd = np.hstack([np.ones((n, 1)), X])
    names = ["intercept"] + (
        list(feature_names) if feature_names else [f"x{i + 1}" for i in range(k)]
    )
    if len(names) != k + 1:
        raise ValueError("feature_names length does not match feature columns")

    beta = np.zeros(k + 1)
    note = ""
    converged = False
    iterations = 0
    for iterations in range(1, MAX_ITERATIONS + 1):
        p = _sigmoid(Xd @ beta)
        gradient = Xd.T @ (y - p)
        if np.max(np.abs(gradient)) < GRADIENT_TOL:
            converged = True
            break
        w = p * (1.0 - p)
        hessian = Xd.T @ (Xd * w[:, None])
        try:
            step = np.linalg.solve(hessian, gradient)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hessian, gradient, rcond=None)[0]
        beta = beta + step
        if np.max(np.abs(beta)) > SEPARATION_LIMIT:
            note = (
                "complete separation suspected: a coefficient exceeded "
                f"{SEPARATION_LIMIT} in magnitude; estimates are unreliable"
            )
            break
    else:
        note = f"no convergence within {MAX_ITERATIONS} iterations"

    p = _sigmoid(Xd @ beta)
    gradient = Xd.T @ (y - p)
    gradient_norm = float(np.max(np.abs(gradient)))
    if not note and gradient_norm < GRADIENT_TOL:
        converged = True

    w = np.clip(p * (1.0 - p), 1e-12, None)
    hessian = Xd.T @ (Xd * w[:, None])
    cov = np.linalg.pinv(hessian)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))

    z = np.divide(beta, se, out=np.zeros_like(beta), where=se > 0)
    p_values = 2.0 * _normal.sf(np.abs(z))
    with np.errstate(over="ignore"):  # an infinite CI bound is a valid answer
        ci_low = np.exp(beta - Z_95 * se)
        ci_high = np.exp(beta + Z_95 * se)

    ll = log_likelihood(beta, Xd, y)
    pbar = float(y.mean())
    ll_null = n * (pbar * np.log(pbar) + (1 - pbar) * np.log(1 - pbar))
    mcfadden = 1.0 - ll / ll_null if ll_null != 0 else 0.0

    return RegressionFit(
        feature_names=tuple(names),
        coefficients=beta,
        std_errors=se,
        odds_ratios=np.exp(beta),
        p_values=p_values,
        ci_low=ci_low,
        ci_high=ci_high,
        pseudo_r_squared=float(mcfadden),
        log_likelihood=ll,
        converged=converged and not note,
        iterations=iterations,
        gradient_max_norm=gradient_norm,
        note=note,
    )


META_MODEL_FEATURES = ("has_google_tag", "google_fdc", "is_health", "is_finance")
GOOGLE_MODEL_FEATURES = ("has_meta_pixel", "is_health", "is_finance")

#: Why the Google model omits a Meta-FDC feature: it correlates 0.71
#: (Pearson) with Meta presence, so only the stronger predictor is kept.
DROPPED_FEATURE_NOTE = (
    "meta_fdc omitted from the Google model: 0.71 Pearson correlation with "
    "has_meta_pixel; the better predictor was kept"
)


def build_model_matrix(
    verdicts: list[SiteVerdict], model: Provider
) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Feature/outcome construction for the two collection models.

    Meta model: outcome = Meta FDC, trained on Meta-installed sites.
    Google model: outcome = Google FDC, trained on Google-installed sites.
    All features are 0/1 indicators.
    """
    if model is Provider.META:
        rows = [v for v in verdicts if v.meta.installed]
        X = np.array(
            [
                [
                    1.0 if v.google.installed else 0.0,
                    1.0 if v.google.fdc else 0.0,
                    1.0 if v.site.vertical == "health" else 0.0,
                    1.0 if v.site.vertical == "finance" else 0.0,
                ]
                for v in rows
            ]
        )
        y = np.array([1.0 if v.meta.fdc else 0.0 for v in rows])
        return X, y, list(META_MODEL_FEATURES)
    rows = [v for v in verdicts if v.google.installed]
    X = np.array(
        [
            [
                1.0 if v.meta.installed else 0.0,
                1.0 if v.site.vertical == "health" else 0.0,
                1.0 if v.site.vertical == "finance" else 0.0,
            ]
            for v in rows
        ]
    )
    y = np.array([1.0 if v.google.fdc else 0.0 for v in rows])
    return X, y, list(GOOGLE_MODEL_FEATURES)
