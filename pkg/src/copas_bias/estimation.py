"""Maximum-likelihood fits: the random-effects fit under rho=0 and the full
Copas fit at fixed selection parameters (sensitivity analysis)."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .errors import FitError
from .model import Dataset, gradient_terms, loglik_terms

RHO_LIMIT = 0.9999
RHO_WARN = 0.999
_Z_LIMIT = math.atanh(RHO_LIMIT)
_SOFTPLUS_FLOOR = -40.0


@dataclass(frozen=True)
class NullFit:
    mu_hat: float
    tau2_hat: float
    loglik: float
    converged: bool
    iterations: int


@dataclass(frozen=True)
class SensitivityFit:
    gamma0: float
    gamma1: float
    mu_adj: float
    tau2_adj: float
    rho_hat: float
    loglik: float
    mu_se: float
    mu_ci: tuple[float, float]
    converged: bool
    warnings: tuple[str, ...] = field(default=())


# -- random-effects fit under rho = 0 ---------------------------------------

def dersimonian_laird(y, s):
    """Moment estimates (mu, tau2); broadcasts over leading axes."""
    y = np.asarray(y, dtype=float)
    w = 1.0 / (np.asarray(s, dtype=float) ** 2)
    sw = w.sum(axis=-1)
    mu_fe = (w * y).sum(axis=-1) / sw
    q = (w * (y - mu_fe[..., None]) ** 2).sum(axis=-1)
    k = y.shape[-1]
    denom = sw - (w * w).sum(axis=-1) / sw
    with np.errstate(divide="ignore", invalid="ignore"):
        tau2 = np.where(denom > 0, np.maximum(0.0, (q - (k - 1)) / denom), 0.0)
    w_re = 1.0 / (tau2[..., None] + 1.0 / w)
    mu = (w_re * y).sum(axis=-1) / w_re.sum(axis=-1)
    return mu, tau2


def _profile(y, s2, tau2):
    """Profile log-likelihood and its derivative in tau2 (mu maximized out)."""
    w = 1.0 / (tau2[..., None] + s2)
    mu = (w * y).sum(axis=-1) / w.sum(axis=-1)
    r = y - mu[..., None]
    ll = 0.5 * (np.log(w) - w * r * r).sum(axis=-1)
    d = 0.5 * (w * w * r * r - w).sum(axis=-1)
    return ll, d, mu


def fit_null_arrays(y, s, tol: float = 1e-13, max_iter: int = 500):
    """Batched ML fit of the random-effects model; rows of ``y``/``s`` are datasets.

    Coarse search over tau2 in [0, tau2_max] (including the DerSimonian-Laird
    value), then bisection on the profile score inside the bracket around the
    best candidate. Returns (mu, tau2, loglik, converged, iterations).
    """
    y = np.atleast_2d(np.asarray(y, dtype=float))
    s2 = np.atleast_2d(np.asarray(s, dtype=float)) ** 2
    batch = y.shape[0]
    tau2_max = np.maximum(10.0 * y.var(axis=-1, ddof=1), 1.0)
    _, dl = dersimonian_laird(y, np.sqrt(s2))
    ladder = tau2_max[:, None] * np.logspace(-8.0, 0.0, 33)[None, :]
    cand = np.sort(np.concatenate([np.zeros((batch, 1)), np.minimum(dl, tau2_max)[:, None], ladder],
                                  axis=1), axis=1)
    ll_c, _, _ = _profile(y[:, None, :], s2[:, None, :], cand)
    k = np.argmax(ll_c, axis=1)
    rows = np.arange(batch)
    lo = cand[rows, np.maximum(k - 1, 0)]
    hi = cand[rows, np.minimum(k + 1, cand.shape[1] - 1)]

    _, d_lo, _ = _profile(y, s2, lo)
    at_zero = (lo == 0) & (d_lo <= 0) & (k <= 1)
    iterations = 0
    width = hi - lo
    while np.any(width > tol * (1.0 + hi)) and iterations < max_iter:
        mid = 0.5 * (lo + hi)
        _, d_mid, _ = _profile(y, s2, mid)
        up = d_mid > 0
        lo = np.where(up, mid, lo)
        hi = np.where(up, hi, mid)
        width = hi - lo
        iterations += 1
    converged = ~(width > tol * (1.0 + hi))
    tau2 = 0.5 * (lo + hi)
    tau2 = np.where(at_zero, 0.0, tau2)
    ll, d, mu = _profile(y, s2, tau2)
    # a bracket can collapse onto a candidate that beats the stationary point
    best = ll_c[rows, k]
    worse = ll < best - 1e-12
    if np.any(worse):
        tau2 = np.where(worse, cand[rows, k], tau2)
        ll, d, mu = _profile(y, s2, tau2)
    return mu, tau2, ll, converged, iterations


def fit_null(data: Dataset) -> NullFit:
    """Random-effects ML fit of (mu, tau2) with rho fixed at 0."""
    mu, tau2, ll, conv, it = fit_null_arrays(data.y[None, :], data.s[None, :])
    fit = NullFit(float(mu[0]), float(tau2[0]), float(ll[0]), bool(conv[0]), int(it))
    if not fit.converged:
        raise FitError("null fit did not converge", best=fit)
    return fit


# -- Copas fit at fixed (gamma0, gamma1) ------------------------------------

def _softplus(x):
    return np.logaddexp(0.0, x)


def _softplus_inv(t):
    if t <= math.exp(_SOFTPLUS_FLOOR):
        return _SOFTPLUS_FLOOR
    return t + math.log(-math.expm1(-t))


def _unpack(x):
    mu, xt, z = x
    return mu, float(_softplus(xt)), math.tanh(z)


def _hessian_natural(data: Dataset, theta, gamma0, gamma1):
    """Numerical Hessian of the log-likelihood in (mu, tau2, rho) from analytic gradients."""
    theta = np.asarray(theta, dtype=float)
    H = np.empty((3, 3))
    for k in range(3):
        h = max(1e-5, 1e-5 * abs(theta[k]))
        if k == 2:
            h = min(h, 0.5 * (1.0 - abs(theta[2])))
        up = theta.copy()
        dn = theta.copy()
        up[k] += h
        # forward difference when tau2 is too close to 0 for a backward step
        back = h if (k != 1 or theta[1] >= h) else 0.0
        dn[k] -= back
        gp = [np.sum(g) for g in gradient_terms(data.y, data.s, *up, gamma0, gamma1)]
        gm = [np.sum(g) for g in gradient_terms(data.y, data.s, *dn, gamma0, gamma1)]
        H[:, k] = (np.array(gp) - np.array(gm)) / (h + back)
    return 0.5 * (H + H.T)


def fit_sensitivity(data: Dataset, gamma0: float, gamma1: float,
                    null: NullFit | None = None) -> SensitivityFit:
    """Maximize the Copas likelihood over (mu, tau2, rho) at fixed (gamma0, gamma1).

    rho = tanh(z) and tau2 = softplus(x) keep the search unconstrained apart
    from the box |rho| <= 0.9999. Starts from the null fit with rho in
    {-0.5, 0, 0.5}; the standard error of mu comes from the inverse observed
    information at the optimum.
    """
    if not (math.isfinite(gamma0) and math.isfinite(gamma1)):
        raise FitError("gamma0 and gamma1 must be finite")
    null = null or fit_null(data)
    y, s = data.y, data.s

    def objective(x):
        mu, tau2, rho = _unpack(x)
        with np.errstate(all="ignore"):
            ll = np.sum(loglik_terms(y, s, mu, tau2, rho, gamma0, gamma1))
            g = gradient_terms(y, s, mu, tau2, rho, gamma0, gamma1)
        if not np.isfinite(ll):
            return 1e300, np.zeros(3)
        grad = np.array([
            np.sum(g[0]),
            np.sum(g[1]) * (1.0 / (1.0 + math.exp(-x[1]))),
            np.sum(g[2]) * (1.0 - rho * rho),
        ])
        if not np.all(np.isfinite(grad)):
            return 1e300, np.zeros(3)
        return -ll, -grad

    bounds = [(None, None), (_SOFTPLUS_FLOOR, None), (-_Z_LIMIT, _Z_LIMIT)]
    xt0 = _softplus_inv(null.tau2_hat)
    best_x, best_f, any_ok = None, math.inf, False
    for rho0 in (0.0, -0.5, 0.5):
        x0 = np.array([null.mu_hat, xt0, math.atanh(rho0)])
        f0, _ = objective(x0)
        res = minimize(objective, x0, jac=True, method="L-BFGS-B", bounds=bounds,
                       options={"maxiter": 1000, "ftol": 1e-14, "gtol": 1e-9})
        x, f = (res.x, res.fun) if res.fun <= f0 else (x0, f0)
        if math.isfinite(f) and f < 1e299:
            any_ok = any_ok or bool(res.success)
            if f < best_f:
                best_x, best_f = np.array(x), float(f)
    if best_x is None:
        raise FitError("all starting points failed")

    mu, tau2, rho = _unpack(best_x)
    warnings = []
    # the likelihood is often still rising as rho -> +/-1; flag estimates near the edge
    if abs(rho) >= RHO_WARN:
        warnings.append("rho at or near the boundary")
    if not any_ok:
        warnings.append("optimizer reported non-convergence")

    theta = (mu, tau2, rho)
    info = -_hessian_natural(data, theta, gamma0, gamma1)
    free = [0, 2] if tau2 < 1e-8 else [0, 1, 2]
    se = math.nan
    # drop directions without curvature (rho when selection is negligible)
    for keep in (free, [k for k in free if k != 2], [0]):
        sub = info[np.ix_(keep, keep)]
        if np.all(np.linalg.eigvalsh(sub) > 1e-10 * max(1.0, abs(info[0, 0]))):
            se = math.sqrt(np.linalg.inv(sub)[0, 0])
            if keep != free:
                warnings.append("information singular in some directions; se from a sub-block")
            break
    if not math.isfinite(se):
        warnings.append("information not positive definite")
        se = math.inf
    half = 1.959963984540054 * se
    return SensitivityFit(
        gamma0=float(gamma0), gamma1=float(gamma1), mu_adj=float(mu), tau2_adj=float(tau2),
        rho_hat=float(rho), loglik=-best_f, mu_se=float(se), mu_ci=(float(mu - half), float(mu + half)),
        converged=any_ok, warnings=tuple(warnings),
    )


def sensitivity_sweep(data: Dataset, gamma0_values, gamma1_values) -> list[SensitivityFit]:
    null = fit_null(data)
    return [fit_sensitivity(data, float(g0), float(g1), null)
            for g0 in gamma0_values for g1 in gamma1_values]
