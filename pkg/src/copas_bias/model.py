"""Copas selection-model likelihood, the score in rho at rho=0, and its
efficient information.

The within-study variance is taken to be the reported s**2 throughout and the
additive constant -0.5*log(2*pi) is dropped from every log-likelihood.

All array-level helpers broadcast over leading axes; the last axis always
indexes studies. That lets the score test evaluate many bootstrap replicates
and grid points in one pass.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.special import log_ndtr, ndtr

from .errors import DegenerateInformationError, DomainError, NumericalError

MIN_STUDIES = 3
CLAMP_TOL = 1e-8
# a Schur complement this small relative to the rho-rho entry is below the
# resolution of the finite-difference Hessian
REL_CLAMP_TOL = 1e-8

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)

# probabilists' Gauss-Hermite rule, exact for polynomials of degree <= 5
_GH_NODES = np.array([-math.sqrt(3.0), 0.0, math.sqrt(3.0)])
_GH_WEIGHTS = np.array([1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0])


@dataclass(frozen=True)
class Study:
    y: float
    s: float

    def __post_init__(self):
        if not math.isfinite(self.y):
            raise DomainError(f"effect size must be finite, got {self.y!r}")
        if not (math.isfinite(self.s) and self.s > 0):
            raise DomainError(f"standard error must be positive and finite, got {self.s!r}")


@dataclass(frozen=True, eq=False)
class Dataset:
    """Observed studies of one meta-analysis, stored as parallel arrays."""

    y: np.ndarray
    s: np.ndarray
    ids: tuple[str, ...] = ()
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        y = np.array(self.y, dtype=float).ravel()
        s = np.array(self.s, dtype=float).ravel()
        if y.shape != s.shape:
            raise DomainError(f"y and s differ in length ({y.size} vs {s.size})")
        if y.size < MIN_STUDIES:
            raise DomainError(f"need at least {MIN_STUDIES} studies, got {y.size}")
        bad = np.flatnonzero(~np.isfinite(y))
        if bad.size:
            raise DomainError(f"non-finite effect size at study index {bad[0]}")
        bad = np.flatnonzero(~(np.isfinite(s) & (s > 0)))
        if bad.size:
            raise DomainError(f"standard error must be positive and finite at study index {bad[0]}")
        ids = tuple(self.ids) if self.ids else tuple(str(i + 1) for i in range(y.size))
        if len(ids) != y.size:
            raise DomainError("ids must match the number of studies")
        y.setflags(write=False)
        s.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "ids", ids)

    @classmethod
    def from_studies(cls, studies: Iterable[Study], ids: Sequence[str] = ()) -> "Dataset":
        studies = list(studies)
        return cls(np.array([st.y for st in studies]), np.array([st.s for st in studies]), tuple(ids))

    @property
    def n(self) -> int:
        return int(self.y.size)

    @property
    def studies(self) -> list[Study]:
        return [Study(float(a), float(b)) for a, b in zip(self.y, self.s)]

    def shifted(self, c: float) -> "Dataset":
        return Dataset(self.y + c, self.s, self.ids)

    def subset(self, index) -> "Dataset":
        index = np.asarray(index)
        return Dataset(self.y[index], self.s[index], tuple(self.ids[i] for i in index))


@dataclass(frozen=True)
class CopasParams:
    mu: float
    tau2: float
    rho: float
    gamma0: float
    gamma1: float

    def __post_init__(self):
        for name in ("mu", "tau2", "rho", "gamma0", "gamma1"):
            if not math.isfinite(getattr(self, name)):
                raise DomainError(f"{name} must be finite")
        if self.tau2 < 0:
            raise DomainError(f"tau2 must be non-negative, got {self.tau2}")
        if not abs(self.rho) < 1:
            raise DomainError(f"|rho| must be < 1, got {self.rho}")

    def check_against(self, s: np.ndarray) -> None:
        ratio = self.rho**2 * s**2 / (self.tau2 + s**2)
        bad = np.flatnonzero(ratio >= 1)
        if bad.size:
            raise DomainError(f"rho^2 s^2 / (tau2 + s^2) >= 1 at study index {bad[0]}")


@dataclass(frozen=True)
class EfficientScoreParts:
    score_total: float
    info_efficient: float
    per_study_scores: np.ndarray


# -- normal helpers ---------------------------------------------------------

def log_norm_cdf(x):
    """log Phi(x); accurate far into the lower tail."""
    return log_ndtr(x)


def inverse_mills(u):
    """phi(u) / Phi(u), evaluated in log space so that u << 0 does not overflow."""
    u = np.asarray(u, dtype=float)
    return np.exp(-0.5 * u * u - _LOG_SQRT_2PI - log_ndtr(u))


def selection_prob(gamma0: float, gamma1: float, s) -> float | np.ndarray:
    """Marginal publication probability Phi(gamma0 + gamma1/s)."""
    s_arr = np.asarray(s, dtype=float)
    if np.any(~(s_arr > 0)):
        raise DomainError("standard error must be positive")
    out = ndtr(gamma0 + gamma1 / s_arr)
    return float(out) if out.ndim == 0 else out


# -- array-level likelihood pieces ------------------------------------------

def loglik_terms(y, s, mu, tau2, rho, gamma0, gamma1):
    """Per-study contributions to the observed-data log-likelihood."""
    V = tau2 + s * s
    r = y - mu
    a = gamma0 + gamma1 / s
    q = 1.0 - rho * rho * s * s / V
    v = (a + rho * s * r / V) / np.sqrt(q)
    return -0.5 * np.log(V) - r * r / (2.0 * V) - log_ndtr(a) + log_ndtr(v)


def gradient_terms(y, s, mu, tau2, rho, gamma0, gamma1):
    """Per-study derivatives of ``loglik_terms`` in (mu, tau2, rho)."""
    V = tau2 + s * s
    r = y - mu
    a = gamma0 + gamma1 / s
    q = 1.0 - rho * rho * s * s / V
    sq = np.sqrt(q)
    num = a + rho * s * r / V
    lam = inverse_mills(num / sq)
    dv_dmu = -rho * s / (V * sq)
    dv_dtau2 = -rho * s * r / (V * V * sq) - num * rho * rho * s * s / (2.0 * V * V * q * sq)
    dv_drho = s * r / (V * sq) + num * rho * s * s / (V * q * sq)
    d_mu = r / V + lam * dv_dmu
    d_tau2 = -0.5 / V + r * r / (2.0 * V * V) + lam * dv_dtau2
    d_rho = lam * dv_drho
    return d_mu, d_tau2, d_rho


def score_terms(y, s, mu, tau2, gamma0, gamma1):
    """d/d rho of ``loglik_terms`` at rho=0: lambda(a) * s * (y - mu) / (tau2 + s^2)."""
    V = tau2 + s * s
    return inverse_mills(gamma0 + gamma1 / s) * s * (y - mu) / V


def _steps(mu, tau2, s):
    h_mu = np.maximum(1e-5, 1e-5 * np.abs(mu))
    h_tau2 = np.maximum(1e-5, 1e-5 * np.abs(tau2))
    # keep tau2 - h + s^2 > 0 for very precise studies
    s2min = np.min(s * s, axis=-1, keepdims=True)
    h_tau2 = np.minimum(h_tau2, 0.5 * (tau2 + s2min))
    return h_mu, h_tau2, 1e-5


def information_matrix(y, s, mu, tau2, gamma0, gamma1, kind: str = "expected"):
    """3x3 information in (mu, tau2, rho) at rho=0, summed over studies.

    The Hessian is taken by central differences of ``gradient_terms``.
    ``kind="observed"`` evaluates it at the data; ``kind="expected"`` averages
    it over y | s ~ N(mu, tau2 + s^2) with a 3-point Gauss-Hermite rule, which
    is exact here because the Hessian at rho=0 is quadratic in y - mu.

    ``mu`` and ``tau2`` must carry a trailing study axis of length 1.
    Returns an array of shape ``broadcast_shape[:-1] + (3, 3)``.
    """
    if kind == "observed":
        nodes, weights = [y], [1.0]
    elif kind == "expected":
        sd = np.sqrt(tau2 + s * s)
        nodes = [mu + sd * x for x in _GH_NODES]
        weights = list(_GH_WEIGHTS)
    else:
        raise ValueError(f"unknown information kind {kind!r}")

    h_mu, h_tau2, h_rho = _steps(mu, tau2, s)
    zero = 0.0
    shifts = (
        ((mu + h_mu, tau2, zero), (mu - h_mu, tau2, zero), 2.0 * h_mu),
        ((mu, tau2 + h_tau2, zero), (mu, tau2 - h_tau2, zero), 2.0 * h_tau2),
        ((mu, tau2, h_rho), (mu, tau2, -h_rho), 2.0 * h_rho),
    )
    cols = []
    for plus, minus, width in shifts:
        col = [0.0, 0.0, 0.0]
        for yk, wk in zip(nodes, weights):
            gp = gradient_terms(yk, s, *plus, gamma0, gamma1)
            gm = gradient_terms(yk, s, *minus, gamma0, gamma1)
            for j in range(3):
                col[j] = col[j] + wk * np.sum((gp[j] - gm[j]) / width, axis=-1)
        cols.append(col)
    H = np.stack([np.stack(c, axis=-1) for c in cols], axis=-1)
    H = 0.5 * (H + np.swapaxes(H, -1, -2))
    return -H


def schur_rho(J, tau2_at_boundary):
    """Efficient information for rho from a (..., 3, 3) information array.

    Where ``tau2_at_boundary`` is true the variance is not a free nuisance and
    only mu is projected out. Returns (info, degenerate) where ``degenerate``
    flags a nuisance block that is not positive definite; ``info`` is NaN there.
    """
    J = np.asarray(J)
    j_mm, j_mt, j_tt = J[..., 0, 0], J[..., 0, 1], J[..., 1, 1]
    j_rm, j_rt, j_rr = J[..., 2, 0], J[..., 2, 1], J[..., 2, 2]
    boundary = np.broadcast_to(tau2_at_boundary, j_mm.shape)
    det = j_mm * j_tt - j_mt * j_mt
    with np.errstate(divide="ignore", invalid="ignore"):
        full = j_rr - (j_rm * j_rm * j_tt - 2.0 * j_rm * j_rt * j_mt + j_rt * j_rt * j_mm) / det
        mu_only = j_rr - j_rm * j_rm / j_mm
    degenerate = ~(j_mm > 0) | (~boundary & ~(det > 0))
    info = np.where(boundary, mu_only, full)
    info = np.where(degenerate, np.nan, info)
    return info, degenerate


def clamp_information(info, diag=None):
    """Clamp values in [-CLAMP_TOL, 0] to zero; more negative values become NaN.

    With ``diag`` (the rho-rho entry) values below ``REL_CLAMP_TOL * diag`` in
    magnitude are also set to zero.
    """
    info = np.asarray(info, dtype=float)
    tiny = (info < 0) & (info >= -CLAMP_TOL)
    if diag is not None:
        tiny |= np.abs(info) <= REL_CLAMP_TOL * np.abs(diag)
    out = np.where(tiny, 0.0, info)
    return np.where(out < 0, np.nan, out)


# -- Dataset-level operations -----------------------------------------------

def _check_finite(values, what):
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise NumericalError(f"non-finite {what}", index=int(bad[0]))


def copas_loglik(params: CopasParams, data: Dataset) -> float:
    """Observed-data log-likelihood of the Copas model (constants dropped)."""
    params.check_against(data.s)
    terms = loglik_terms(data.y, data.s, params.mu, params.tau2, params.rho,
                         params.gamma0, params.gamma1)
    _check_finite(terms, "log-likelihood term")
    return float(np.sum(terms))


def random_effects_loglik(mu: float, tau2: float, data: Dataset) -> float:
    if tau2 < 0:
        raise DomainError("tau2 must be non-negative")
    V = tau2 + data.s**2
    return float(np.sum(-0.5 * np.log(V) - (data.y - mu) ** 2 / (2.0 * V)))


def score_rho_at_null(gamma0: float, gamma1: float, mu: float, tau2: float,
                      data: Dataset) -> np.ndarray:
    if tau2 < 0:
        raise DomainError("tau2 must be non-negative")
    scores = score_terms(data.y, data.s, mu, tau2, gamma0, gamma1)
    _check_finite(scores, "score")
    return scores


def efficient_information(gamma0: float, gamma1: float, mu: float, tau2: float,
                          data: Dataset, kind: str = "expected") -> float:
    """Efficient information for rho at rho=0 with (mu, tau2) projected out.

    Raises ``DegenerateInformationError`` when the (mu, tau2) block is not
    positive definite and ``NumericalError`` when the Schur complement is
    negative beyond ``CLAMP_TOL``.
    """
    if tau2 < 0:
        raise DomainError("tau2 must be non-negative")
    J = information_matrix(data.y, data.s, mu, tau2, gamma0, gamma1, kind=kind)
    if not np.all(np.isfinite(J)):
        raise NumericalError("non-finite information matrix")
    info, degenerate = schur_rho(J, tau2 == 0)
    if degenerate:
        raise DegenerateInformationError(
            "nuisance information block is not positive definite")
    clamped = float(clamp_information(info, J[..., 2, 2]))
    if math.isnan(clamped):
        raise NumericalError(f"negative efficient information {float(info):.3g}")
    return clamped


def efficient_score_parts(gamma0: float, gamma1: float, mu: float, tau2: float,
                          data: Dataset, kind: str = "expected") -> EfficientScoreParts:
    scores = score_rho_at_null(gamma0, gamma1, mu, tau2, data)
    info = efficient_information(gamma0, gamma1, mu, tau2, data, kind=kind)
    return EfficientScoreParts(float(np.sum(scores)), info, scores)
