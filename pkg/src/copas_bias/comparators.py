"""Baseline funnel-asymmetry tests: Egger's regression, trim-and-fill and the
naive Copas regression test."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import SingularDesignError, TrimFillError
from .estimation import fit_null
from .model import Dataset

_EXACT = 64 * np.finfo(float).eps


@dataclass(frozen=True)
class ComparatorResult:
    method: str
    statistic: float
    p_value: float
    extras: dict = field(default_factory=dict)


def _ols_t(X: np.ndarray, z: np.ndarray, coef: int):
    """OLS coefficient ``coef`` with its t statistic and two-sided p-value (n - p df).

    A noiseless fit gives t = 0 for a coefficient that is zero up to rounding
    and t = +/-inf otherwise.
    """
    n, k = X.shape
    scale = np.linalg.norm(X, axis=0)
    if np.any(scale == 0) or np.linalg.matrix_rank(X / scale, tol=1e-10) < k:
        raise SingularDesignError("regression design is rank deficient")
    beta, *_ = np.linalg.lstsq(X, z, rcond=None)
    resid = z - X @ beta
    rss = float(resid @ resid)
    df = n - k
    znorm = float(np.linalg.norm(z))
    b = float(beta[coef])
    if rss <= (_EXACT * max(znorm, 1e-300)) ** 2:
        if abs(b) * scale[coef] <= 1e-10 * max(znorm, 1e-300):
            return 0.0, 0.0, 0.0, 1.0
        return b, 0.0, math.copysign(math.inf, b), 0.0
    cov = rss / df * np.linalg.inv(X.T @ X)
    se = math.sqrt(cov[coef, coef])
    t = b / se
    p = float(min(1.0, 2.0 * stats.t.sf(abs(t), df)))
    return b, se, t, p


def egger_test(data: Dataset) -> ComparatorResult:
    """Regress y/s on 1/s with intercept; test the intercept with a t test on n-2 df."""
    prec = 1.0 / data.s
    X = np.column_stack([np.ones(data.n), prec])
    b, se, t, p = _ols_t(X, data.y * prec, 0)
    return ComparatorResult("egger", t, p, {"intercept": b, "se": se, "df": data.n - 2})


def copas_naive_test(data: Dataset) -> ComparatorResult:
    """Weighted regression of y on s with random-effects weights; t test on the slope."""
    null = fit_null(data)
    sw = 1.0 / np.sqrt(null.tau2_hat + data.s**2)
    X = np.column_stack([sw, data.s * sw])
    b, se, t, p = _ols_t(X, data.y * sw, 1)
    return ComparatorResult("copas_naive", t, p,
                            {"slope": b, "se": se, "df": data.n - 2, "tau2": null.tau2_hat})


# -- trim and fill ----------------------------------------------------------

def _fixed_effect(y, w):
    return float(np.sum(w * y) / np.sum(w))


def _rank_stats(x, scale):
    """Wilcoxon T (sum of ranks of positive deviations) and the rightmost positive run.

    Deviations are compared at a relative precision of 1e-12 of ``scale`` so that
    rounding in the center neither breaks ties nor gives a zero deviation a sign.
    """
    a = np.abs(x)
    top = max(float(np.max(a)), scale)
    if top > 0:
        # mirrored deviations differ only by rounding in the center; keep them tied
        a = np.round(a / top, 12)
    pos = (x > 0) & (a > 0)
    ranks = stats.rankdata(a)
    t_n = float(np.sum(ranks[pos]))
    order = np.argsort(-a, kind="stable")
    run = 0
    for i in order:
        if pos[i]:
            run += 1
        else:
            break
    return t_n, run


def _trim_fill_one_side(y, s, estimator, max_iter):
    """Missing studies assumed on the left; the largest effects are trimmed."""
    n = y.size
    w = 1.0 / s**2
    order = np.argsort(y, kind="stable")
    k0, traj = 0, []
    for _ in range(max_iter):
        keep = order[: n - k0]
        mu = _fixed_effect(y[keep], w[keep])
        t_n, run = _rank_stats(y - mu, float(np.max(np.abs(y))))
        if estimator == "L0":
            raw = (4.0 * t_n - n * (n + 1)) / (2.0 * n - 1.0)
        else:
            raw = float(run - 1)
        k_new = int(min(max(0, math.floor(raw + 0.5)), n - 2))
        traj.append(k_new)
        if k_new == k0:
            break
        k0 = k_new
    else:
        raise TrimFillError(f"k0 did not converge in {max_iter} iterations", traj)
    if estimator == "L0":
        sd = 4.0 * math.sqrt(n * (n + 1) * (2 * n + 1) / 24.0) / (2.0 * n - 1.0)
        p = float(stats.norm.sf(raw / sd))
    else:
        p = min(1.0, 2.0 ** (-(raw + 1.0)))
    trimmed = order[n - k0:]
    y_fill = np.concatenate([y, 2.0 * mu - y[trimmed]])
    s_fill = np.concatenate([s, s[trimmed]])
    return {"k0": k0, "raw": raw, "p": p, "center": mu, "trajectory": traj,
            "y_fill": y_fill, "s_fill": s_fill}


def trim_and_fill(data: Dataset, estimator: str = "L0", side: str = "auto",
                  max_iter: int = 50) -> ComparatorResult:
    """Duval-Tweedie trim and fill with fixed-effect centering.

    ``side`` names where the missing studies are imputed. For a given side the
    p-value is the one-sided tail probability of the rank estimator under
    funnel symmetry; ``side="auto"`` runs both sides, reports the one with the
    larger k0 and doubles the smaller one-sided p-value.
    """
    if estimator not in ("L0", "R0"):
        raise ValueError(f"unknown estimator {estimator!r}")
    if side not in ("left", "right", "auto"):
        raise ValueError(f"unknown side {side!r}")
    y, s = data.y, data.s
    res = {}
    if side in ("left", "auto"):
        res["left"] = _trim_fill_one_side(y, s, estimator, max_iter)
    if side in ("right", "auto"):
        r = _trim_fill_one_side(-y, s, estimator, max_iter)
        r["y_fill"], r["center"] = -r["y_fill"], -r["center"]
        res["right"] = r
    if side == "auto":
        chosen = "left" if res["left"]["k0"] >= res["right"]["k0"] else "right"
        p = min(1.0, 2.0 * min(res["left"]["p"], res["right"]["p"]))
    else:
        chosen = side
        p = res[side]["p"]
    r = res[chosen]
    w_fill = 1.0 / r["s_fill"] ** 2
    filled = _fixed_effect(r["y_fill"], w_fill)
    return ComparatorResult("trim_fill", r["raw"], float(p), {
        "k0": r["k0"], "side": chosen, "estimator": estimator,
        "filled_estimate": filled, "trajectory": r["trajectory"],
    })
