"""Data generators for the Copas model and two misspecified selection models,
and a Monte-Carlo harness for rejection rates."""
from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .comparators import copas_naive_test, egger_test, trim_and_fill
from .errors import CopasBiasError, GenerationError, HarnessError
from .model import Dataset
from .rng import spawn
from .scoretest import GridSpec, bootstrap_pvalue

MODELS = ("copas", "alt_inv_s2", "alt_zscore")
TESTS = ("score_test", "egger", "trim_fill", "copas_naive")
MAX_DRAWS = 1_000_000
S_FLOOR = 1e-3
MAX_FAILURE_FRACTION = 0.05


@dataclass(frozen=True)
class SimConfig:
    """One simulation scenario. Defaults are the null Copas configuration with n=40.

    ``s_loc``/``s_scale`` parametrize the folded normal for standard errors;
    ``s_scale_kind`` says whether ``s_scale`` is a standard deviation or a variance.
    """

    n: int = 40
    mu: float = 0.4
    tau2: float = 0.01
    rho: float = 0.0
    gamma0: float = -1.0
    gamma1: float = 0.65
    model: str = "copas"
    c: float = 0.5
    s_loc: float = 0.25
    s_scale: float = 2.0
    s_scale_kind: str = "sd"
    zscore_noise: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}, got {self.model!r}")
        if self.n < 3:
            raise ValueError("n must be >= 3")
        if self.tau2 < 0:
            raise ValueError("tau2 must be non-negative")
        if self.model != "alt_zscore" and not abs(self.rho) < 1:
            raise ValueError("|rho| must be < 1")
        if self.model == "alt_zscore" and not self.c > 0:
            raise ValueError("c must be positive")
        if self.s_scale_kind not in ("sd", "variance"):
            raise ValueError("s_scale_kind must be 'sd' or 'variance'")

    @property
    def s_sd(self) -> float:
        return self.s_scale if self.s_scale_kind == "sd" else math.sqrt(self.s_scale)

    def replace(self, **changes) -> "SimConfig":
        return SimConfig(**{**asdict(self), **changes})


def _draw_s(config: SimConfig, rng, m: int) -> np.ndarray:
    s = np.abs(rng.normal(config.s_loc, config.s_sd, size=m))
    small = s < S_FLOOR
    while np.any(small):
        s[small] = np.abs(rng.normal(config.s_loc, config.s_sd, size=int(small.sum())))
        small = s < S_FLOOR
    return s


def _candidates(config: SimConfig, rng, m: int):
    s = _draw_s(config, rng, m)
    u = rng.standard_normal(m)
    eps = rng.standard_normal(m)
    e2 = rng.standard_normal(m)
    y = config.mu + math.sqrt(config.tau2) * u + s * eps
    if config.model == "copas":
        delta = config.rho * eps + math.sqrt(1.0 - config.rho**2) * e2
        z = config.gamma0 + config.gamma1 / s + delta
    elif config.model == "alt_inv_s2":
        delta = config.rho * eps + math.sqrt(1.0 - config.rho**2) * e2
        z = config.gamma0 + config.gamma1 / s**2 + delta
    else:
        z = config.gamma0 + config.gamma1 / s + config.c * config.rho * y / s
        if config.zscore_noise:
            z = z + e2
    return y, s, z > 0


def generate(config: SimConfig, rng: np.random.Generator) -> Dataset:
    """Draw candidate studies until ``config.n`` pass the selection step.

    The acceptance rate is stored in ``dataset.meta["acceptance_rate"]``.
    """
    ys, ss = [], []
    accepted = drawn = 0
    chunk = max(64, 2 * config.n)
    while accepted < config.n:
        if drawn >= MAX_DRAWS:
            raise GenerationError(
                f"only {accepted} of {config.n} studies accepted after {drawn} draws")
        m = min(chunk, MAX_DRAWS - drawn)
        y, s, keep = _candidates(config, rng, m)
        drawn += m
        accepted += int(keep.sum())
        ys.append(y[keep])
        ss.append(s[keep])
        chunk = min(4 * chunk, 65536)
    y = np.concatenate(ys)[: config.n]
    s = np.concatenate(ss)[: config.n]
    return Dataset(y, s, meta={"acceptance_rate": accepted / drawn, "draws": drawn})


def generate_copas(config: SimConfig, rng) -> Dataset:
    return generate(config.replace(model="copas"), rng)


def generate_alt_inv_s2(config: SimConfig, rng) -> Dataset:
    return generate(config.replace(model="alt_inv_s2"), rng)


def generate_alt_zscore(config: SimConfig, rng) -> Dataset:
    return generate(config.replace(model="alt_zscore"), rng)


# -- harness ----------------------------------------------------------------

@dataclass
class PowerReport:
    config: SimConfig
    n_replicates: int
    alpha_levels: list[float]
    rejection_rates: dict[str, dict[float, float]]
    mean_runtime: float = 0.0
    failures: dict[str, int] = field(default_factory=dict)
    p_values: dict[str, list[float]] = field(default_factory=dict)
    settings: dict = field(default_factory=dict)

    def to_dict(self, include_timing: bool = False, include_p_values: bool = False) -> dict:
        out = {
            "schema": 1,
            "config": asdict(self.config),
            "settings": self.settings,
            "n_replicates": self.n_replicates,
            "alpha_levels": list(self.alpha_levels),
            "rejection_rates": {t: {repr(a): r for a, r in rates.items()}
                                for t, rates in self.rejection_rates.items()},
            "failures": dict(self.failures),
        }
        if include_p_values:
            out["p_values"] = self.p_values
        if include_timing:
            out["metadata"] = {"mean_runtime": self.mean_runtime}
        return out

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(**kwargs), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["test", "alpha", "rejection_rate", "n_replicates", "failures"])
        for t, rates in self.rejection_rates.items():
            for a, r in rates.items():
                w.writerow([t, repr(a), repr(r), self.n_replicates, self.failures.get(t, 0)])
        return buf.getvalue()


def _run_replicate(config, child, tests, b_boot, n_points, grid_kwargs):
    data_ss, grid_ss, boot_ss = spawn(child, 3)
    data = generate(config, np.random.default_rng(data_ss))
    out = {}
    for name in tests:
        try:
            if name == "score_test":
                grid = GridSpec(n_points_used=n_points,
                                seed=int(grid_ss.generate_state(1)[0]), **grid_kwargs)
                out[name] = bootstrap_pvalue(data, grid, b_boot, seed=boot_ss).p_value
            elif name == "egger":
                out[name] = egger_test(data).p_value
            elif name == "trim_fill":
                out[name] = trim_and_fill(data).p_value
            else:
                out[name] = copas_naive_test(data).p_value
        except CopasBiasError:
            out[name] = math.nan
    return out


def run_power_study(config: SimConfig, n_replicates: int, tests=TESTS,
                    alpha_levels=(0.05, 0.10), b_boot: int = 200, n_points: int = 9,
                    threads: int | None = 1, grid_kwargs: dict | None = None,
                    progress=None) -> PowerReport:
    """Rejection rates of each test over ``n_replicates`` simulated meta-analyses.

    Replicate ``r`` uses the stream spawned from ``(config.seed, r)``, so the
    report is the same for any ``threads``. Score-test grid points are a fresh
    seeded draw of ``n_points`` from the fixed [-2, 2] x [0, 2] lattice per replicate.
    """
    tests = list(tests)
    unknown = set(tests) - set(TESTS)
    if unknown:
        raise ValueError(f"unknown tests {sorted(unknown)}")
    alpha_levels = [float(a) for a in alpha_levels]
    grid_kwargs = grid_kwargs or {}
    settings = {"b_boot": b_boot, "n_points": n_points, "tests": tests,
                "grid": {k: list(v) if isinstance(v, tuple) else v for k, v in grid_kwargs.items()}}
    if not tests or n_replicates == 0:
        return PowerReport(config, 0, alpha_levels, {t: {} for t in tests}, settings=settings)

    children = spawn(config.seed, n_replicates)
    t0 = time.perf_counter()

    def job(r):
        res = _run_replicate(config, children[r], tests, b_boot, n_points, grid_kwargs)
        if progress is not None:
            progress(r)
        return res

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(job, range(n_replicates)))
    else:
        results = [job(r) for r in range(n_replicates)]
    elapsed = time.perf_counter() - t0

    p_values = {t: [res[t] for res in results] for t in tests}
    failures, rates = {}, {}
    for t in tests:
        p = np.array(p_values[t])
        ok = ~np.isnan(p)
        failures[t] = int((~ok).sum())
        if failures[t] > MAX_FAILURE_FRACTION * n_replicates:
            raise HarnessError(f"{t}: {failures[t]} of {n_replicates} replicates failed")
        rates[t] = {a: float(np.mean(p[ok] <= a)) for a in alpha_levels}
    return PowerReport(config, n_replicates, alpha_levels, rates, elapsed / n_replicates,
                       failures, p_values, settings)
