"""Sup-score test for publication bias under the Copas selection model.

The nuisance selection parameters (gamma0, gamma1) vanish under rho=0, so the
standardized score Z(gamma0, gamma1) is evaluated on a grid and the statistic
is T = max Z^2. Its null distribution is approximated by a parametric
bootstrap from the fitted random-effects model.
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .errors import ScoreTestError
from .estimation import NullFit, fit_null, fit_null_arrays
from .model import (Dataset, clamp_information, efficient_information, information_matrix,
                    schur_rho, score_terms)
from .rng import as_seed_sequence, replicate_generators

CHUNK = 64
MAX_DROP_FRACTION = 0.10


class GridPointWarning(UserWarning):
    """A grid point could not be evaluated and was left out of the supremum."""


@dataclass(frozen=True)
class GridSpec:
    """Lattice over (gamma0, gamma1) and the seeded subsample actually used.

    Lattice coordinates are ``lo + k * (hi - lo) / m`` for ``k < m``, so the
    default [-2, 2] x [0, 2] 50x50 lattice has steps 0.08 and 0.04. The
    subsample is the first ``n_points_used`` entries of a seeded permutation,
    so a larger subsample with the same seed always contains a smaller one.
    """

    gamma0_range: tuple[float, float] = (-2.0, 2.0)
    gamma1_range: tuple[float, float] = (0.0, 2.0)
    n_gamma0: int = 50
    n_gamma1: int = 50
    n_points_used: int = 9
    seed: int = 0
    fallback: bool = False

    def __post_init__(self):
        for name in ("gamma0_range", "gamma1_range"):
            lo, hi = getattr(self, name)
            if not (math.isfinite(lo) and math.isfinite(hi)) or hi < lo:
                raise ValueError(f"{name} must be a finite interval, got {(lo, hi)}")
            object.__setattr__(self, name, (float(lo), float(hi)))
        if self.n_gamma0 < 1 or self.n_gamma1 < 1:
            raise ValueError("lattice dimensions must be positive")
        if not 1 <= self.n_points_used <= self.n_gamma0 * self.n_gamma1:
            raise ValueError("n_points_used must lie in [1, n_gamma0 * n_gamma1]")

    @staticmethod
    def _axis(bounds, m):
        lo, hi = bounds
        return lo + np.arange(m) * (hi - lo) / m

    def lattice(self) -> np.ndarray:
        """All lattice points, shape (n_gamma0 * n_gamma1, 2), gamma0 varying slowest."""
        g0 = self._axis(self.gamma0_range, self.n_gamma0)
        g1 = self._axis(self.gamma1_range, self.n_gamma1)
        return np.column_stack([np.repeat(g0, g1.size), np.tile(g1, g0.size)])

    def points(self) -> np.ndarray:
        lat = self.lattice()
        order = np.random.default_rng(self.seed).permutation(len(lat))
        return lat[order[: self.n_points_used]]


@dataclass(frozen=True)
class TStatistic:
    t_stat: float
    z_values: np.ndarray
    argmax_point: tuple[float, float]
    points: np.ndarray
    null_fit: NullFit
    skipped: tuple[int, ...] = ()


@dataclass(frozen=True)
class ScoreTestResult:
    t_stat: float
    z_values: np.ndarray
    points: np.ndarray
    argmax_point: tuple[float, float]
    p_value: float
    b_boot: int
    boot_t: np.ndarray
    null_fit: NullFit
    n_dropped: int = 0
    skipped: tuple[int, ...] = ()
    grid: GridSpec | None = field(default=None, compare=False)


def fixed_grid(n_points_used: int = 9, seed: int = 0) -> GridSpec:
    """The fixed [-2, 2] x [0, 2] lattice with 2500 points."""
    return GridSpec((-2.0, 2.0), (0.0, 2.0), 50, 50, n_points_used, seed)


def default_grid(data: Dataset, p_min: float = 0.1, p_max: float = 0.9,
                 n_points_used: int = 9, seed: int = 0,
                 n_gamma0: int = 50, n_gamma1: int = 50) -> GridSpec:
    """Data-driven grid: gamma0 in [-2, 2], gamma1 range induced by the s values.

    At gamma0=-2 and the upper gamma1 bound, the most precise study is selected
    with probability p_max; at gamma0=2 and the lower bound, the least precise
    study with probability p_min. Bounds are clamped to [0, 2].
    """
    if not (0 < p_min < 1 and 0 < p_max < 1):
        raise ValueError("p_min and p_max must lie in (0, 1)")
    s_min, s_max = float(np.min(data.s)), float(np.max(data.s))
    hi = s_min * (float(ndtri(p_max)) + 2.0)
    lo = s_max * (float(ndtri(p_min)) - 2.0)
    lo, hi = min(max(lo, 0.0), 2.0), min(max(hi, 0.0), 2.0)
    fallback = False
    if hi <= lo and s_min == s_max:
        lo, hi, fallback = 0.0, 2.0, True
    elif hi < lo:
        lo, hi = hi, lo
    if hi == lo:
        n_gamma1 = 1
    n_points_used = min(n_points_used, n_gamma0 * n_gamma1)
    return GridSpec((-2.0, 2.0), (lo, hi), n_gamma0, n_gamma1, n_points_used, seed, fallback)


# -- batched evaluation -----------------------------------------------------

def z_matrix(y, s, mu, tau2, gamma0, gamma1, information: str = "expected"):
    """Standardized scores, shape (B, p), for B datasets and p grid points.

    ``y``, ``s`` are (B, n); ``mu``, ``tau2`` are (B,); ``gamma0``, ``gamma1`` are
    (p,). Points whose information cannot be computed come back as NaN; points
    with zero information give Z = 0.
    """
    Y, S = y[:, None, :], s[:, None, :]
    M, T2 = mu[:, None, None], tau2[:, None, None]
    G0 = np.asarray(gamma0, dtype=float)[None, :, None]
    G1 = np.asarray(gamma1, dtype=float)[None, :, None]
    with np.errstate(all="ignore"):
        score = score_terms(Y, S, M, T2, G0, G1).sum(axis=-1)
        J = information_matrix(Y, S, M, T2, G0, G1, kind=information)
        info, _ = schur_rho(J, (tau2 == 0)[:, None])
        info = clamp_information(info, J[..., 2, 2])
        z = np.where(info > 0, score / np.sqrt(info), np.where(info == 0, 0.0, np.nan))
    return np.where(np.isfinite(z), z, np.nan)


def _t_from_z(z):
    z2 = np.where(np.isnan(z), -np.inf, z * z)
    idx = np.argmax(z2, axis=-1)
    t = np.take_along_axis(z2, idx[..., None], axis=-1)[..., 0]
    return np.where(np.isfinite(t), t, np.nan), idx


def t_arrays(y, s, points, information: str = "expected"):
    """Refit the null and compute T for each row of ``y``/``s``. Returns (t, z, mu, tau2)."""
    mu, tau2, _, conv, _ = fit_null_arrays(y, s)
    z = z_matrix(y, s, mu, tau2, points[:, 0], points[:, 1], information)
    t, _ = _t_from_z(z)
    t = np.where(conv, t, np.nan)
    return t, z, mu, tau2


# -- Dataset-level operations -----------------------------------------------

def z_at(data: Dataset, gamma0: float, gamma1: float, null_fit: NullFit,
         information: str = "expected") -> float:
    """Z = sum_i S_i / sqrt(efficient information) at one grid point; 0 if the information is 0."""
    z = z_matrix(data.y[None, :], data.s[None, :], np.array([null_fit.mu_hat]),
                 np.array([null_fit.tau2_hat]), [gamma0], [gamma1], information)
    val = float(z[0, 0])
    if math.isnan(val):
        # the scalar path raises the specific error
        efficient_information(gamma0, gamma1, null_fit.mu_hat, null_fit.tau2_hat, data,
                              kind=information)
        raise ScoreTestError(f"Z undefined at ({gamma0}, {gamma1})")
    return val


def t_statistic(data: Dataset, grid: GridSpec | np.ndarray,
                information: str = "expected") -> TStatistic:
    points = grid.points() if isinstance(grid, GridSpec) else np.atleast_2d(np.asarray(grid, float))
    null = fit_null(data)
    z = z_matrix(data.y[None, :], data.s[None, :], np.array([null.mu_hat]),
                 np.array([null.tau2_hat]), points[:, 0], points[:, 1], information)[0]
    skipped = tuple(int(i) for i in np.flatnonzero(np.isnan(z)))
    for i in skipped:
        warnings.warn(f"grid point ({points[i, 0]:.4g}, {points[i, 1]:.4g}) skipped: "
                      "efficient information undefined", GridPointWarning, stacklevel=2)
    if len(skipped) == len(z):
        raise ScoreTestError("no grid point could be evaluated")
    t, idx = _t_from_z(z)
    return TStatistic(float(t), z, (float(points[idx, 0]), float(points[idx, 1])), points,
                      null, skipped)


def bootstrap_arrays(s_obs, mu0, tau2_0, n_boot, seed):
    """Parametric bootstrap samples: s resampled with replacement, y ~ N(mu_i, s^2),
    mu_i ~ N(mu0, tau2_0). One independent stream per replicate."""
    n = s_obs.size
    ys = np.empty((n_boot, n))
    ss = np.empty((n_boot, n))
    sd = math.sqrt(tau2_0)
    for b, rng in enumerate(replicate_generators(seed, n_boot)):
        s_b = s_obs[rng.integers(0, n, size=n)]
        mu_i = rng.normal(mu0, sd, size=n)
        ys[b] = mu_i + s_b * rng.standard_normal(n)
        ss[b] = s_b
    return ys, ss


def bootstrap_pvalue(data: Dataset, grid: GridSpec | np.ndarray, b_boot: int = 200,
                     seed=0, threads: int | None = 1,
                     information: str = "expected") -> ScoreTestResult:
    """Sup-score statistic with its parametric-bootstrap p-value #{T* > T} / B.

    Each replicate redraws its data from the fitted null, refits (mu, tau2)
    and evaluates Z on the same grid points as the observed statistic.
    Replicates are computed in fixed-size chunks on independent RNG streams,
    so the result does not depend on ``threads``.
    """
    if b_boot < 1:
        raise ValueError("b_boot must be >= 1")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", GridPointWarning)
        obs = t_statistic(data, grid, information)
    for i in obs.skipped:
        warnings.warn(f"grid point ({obs.points[i, 0]:.4g}, {obs.points[i, 1]:.4g}) skipped",
                      GridPointWarning, stacklevel=2)
    null = obs.null_fit
    ys, ss = bootstrap_arrays(data.s, null.mu_hat, null.tau2_hat, b_boot, as_seed_sequence(seed))

    def run(start):
        sl = slice(start, min(start + CHUNK, b_boot))
        return t_arrays(ys[sl], ss[sl], obs.points, information)[0]

    starts = range(0, b_boot, CHUNK)
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, starts))
    else:
        parts = [run(st) for st in starts]
    boot_t = np.concatenate(parts)
    ok = ~np.isnan(boot_t)
    n_dropped = int(b_boot - ok.sum())
    if n_dropped > MAX_DROP_FRACTION * b_boot:
        raise ScoreTestError(f"{n_dropped} of {b_boot} bootstrap replicates failed")
    p = float(np.sum(boot_t[ok] > obs.t_stat)) / float(ok.sum())
    return ScoreTestResult(
        t_stat=obs.t_stat, z_values=obs.z_values, points=obs.points,
        argmax_point=obs.argmax_point, p_value=p, b_boot=b_boot, boot_t=boot_t,
        null_fit=null, n_dropped=n_dropped, skipped=obs.skipped,
        grid=grid if isinstance(grid, GridSpec) else None,
    )
