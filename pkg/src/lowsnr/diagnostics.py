"""Error terms, KS distances, small-p exact oracles and coverage Monte Carlo."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp, ndtr

from .design import DesignBundle, DesignDiagnostics
from .meanfield import (ConvergenceError, exact_interval, nmf_interval,
                        normal_two_sided_quantile, solve_fixed_point, upsilon_p)
from .model import TruthConfig, draw_truth, field as posterior_field, generate_y
from .prior import PriorMeasure, SiteBank


def _unit(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if abs(np.linalg.norm(q) - 1.0) > 1e-10:
        raise ValueError("q must be a unit vector")
    return q


@dataclass(frozen=True, eq=False)
class BerryEsseenReport:
    """Computable error terms of the projected-posterior Gaussian approximation.

    ``bound_rhs`` sums the terms with unit constants. It is a relative
    diagnostic for comparing designs, not a certified bound.
    """

    R1: float
    R2: float
    R3: float
    R4: float
    eps_norm: float
    t: np.ndarray
    upsilon_p: float
    q_inf: float
    alpha_p: float
    bound_rhs: float

    def as_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if k != "t"}


def berry_esseen_terms(sites, A: np.ndarray, c: np.ndarray, q, lambda_p: float) -> BerryEsseenReport:
    bank = SiteBank.from_sites(sites)
    q = _unit(q)
    A = np.asarray(A, dtype=float)
    c = np.asarray(c, dtype=float)
    d1, d2 = bank.mean_var(c)
    ups = float(np.sum(q**2 * d2))
    qt = q * (d2 - ups)
    t = A @ d1
    R1 = float(np.sum((A @ qt) ** 2))
    R2 = float(np.sum(t**2))
    R3 = float(np.sum(t**4))
    R4 = float(abs(qt @ t))
    eps = float(np.linalg.norm(A @ q - lambda_p * q))
    alpha_p = float((A**2).sum(axis=1).max())
    q_inf = float(np.abs(q).max())
    p = q.size
    rhs = (math.sqrt(R1) + math.sqrt(alpha_p * R2)
           + (math.sqrt(R3) + math.sqrt(p) * alpha_p + q_inf) / ups + eps)
    return BerryEsseenReport(R1, R2, R3, R4, eps, t, ups, q_inf, alpha_p, rhs)


def ks_distance(samples, reference: tuple[float, float]) -> float:
    """Kolmogorov-Smirnov distance from the sample's ECDF to ``N(mean, var)``."""
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    n = x.size
    if n < 100:
        raise ValueError("need at least 100 samples")
    mean, var = reference
    if not var > 0 or not np.isfinite(var):
        raise ValueError("reference variance must be positive")
    F = ndtr((x - mean) / math.sqrt(var))
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - F), np.max(F - (i - 1) / n)))


@dataclass(frozen=True, eq=False)
class SmallPOracle:
    log_z: float
    mean: np.ndarray
    cov: np.ndarray
    kl_qprod: float
    mf_mean: np.ndarray

    @property
    def normalizing_const(self) -> float:
        return math.exp(self.log_z)


def small_p_oracle(sites, A: np.ndarray, c: np.ndarray) -> SmallPOracle:
    """Posterior moments by summing over the full tensor support (``p <= 3``).

    ``kl_qprod`` is ``KL(Q^prod | nu)`` for the mean-field product measure;
    with zero-diagonal ``A`` it equals ``u^T A u / 2 - sum psi_i(theta_i) + log Z``.
    """
    bank = SiteBank.from_sites(sites)
    p = len(bank)
    if p > 3:
        raise ValueError("small_p_oracle supports p <= 3")
    A = np.asarray(A, dtype=float)
    c = np.asarray(c, dtype=float)
    grids = np.ix_(*[bank.locs[i] for i in range(p)])
    L = sum(np.ix_(*[bank.log_weights[i] for i in range(p)])[k] for k in range(p))
    for i in range(p):
        L = L + c[i] * grids[i]
        for j in range(i + 1, p):
            L = L + A[i, j] * grids[i] * grids[j]
    log_z = float(logsumexp(L))
    P = np.exp(L - log_z)
    mean = np.array([np.sum(P * grids[i]) for i in range(p)])
    second = np.array([[np.sum(P * grids[i] * grids[j]) for j in range(p)] for i in range(p)])
    cov = second - np.outer(mean, mean)
    sol = solve_fixed_point(bank, A, c, tol=1e-13)
    kl = 0.5 * sol.u @ A @ sol.u - float(np.sum(bank.log_mgf(sol.theta))) + log_z
    return SmallPOracle(log_z, mean, cov, max(float(kl), 0.0), sol.u)


def wilson_interval(hits: int, n: int, level: float = 0.95) -> tuple[float, float]:
    if n <= 0:
        return 0.0, 1.0
    z = normal_two_sided_quantile(1.0 - level)
    ph = hits / n
    denom = 1.0 + z * z / n
    centre = (ph + z * z / (2 * n)) / denom
    half = z / denom * math.sqrt(ph * (1 - ph) / n + z * z / (4 * n * n))
    return max(0.0, centre - half), min(1.0, centre + half)


@dataclass(frozen=True)
class CoverageReport:
    kind: str
    n_reps: int
    hits: int
    estimate: float
    wilson_lo: float
    wilson_hi: float
    theory: float
    n_failed: int = 0

    def as_row(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True, eq=False)
class CoverageSpec:
    """One coverage study: the design is fixed, ``beta*`` and ``y`` are redrawn.

    ``lambda_p`` defaults to the Rayleigh quotient ``q^T A q``, which is the
    eigenvalue whenever ``q`` is an exact eigenvector.
    """

    bundle: DesignBundle
    prior: PriorMeasure
    truth: TruthConfig
    q: np.ndarray
    alpha: float = 0.05
    lambda_p: float | None = None
    intervals: tuple = ("exact", "nmf")
    theory: dict = field(default_factory=dict)

    @property
    def lam(self) -> float:
        if self.lambda_p is not None:
            return float(self.lambda_p)
        q = np.asarray(self.q, dtype=float)
        return float(q @ self.bundle.A @ q)


def _one_rep(spec: CoverageSpec, bank: SiteBank, seed) -> dict | None:
    rng = np.random.default_rng(seed)
    beta = draw_truth(spec.truth, spec.bundle.p, rng)
    y = generate_y(spec.bundle, beta, rng, spec.truth.sigma2_true)
    c = posterior_field(spec.bundle, y).c
    try:
        sol = solve_fixed_point(bank, spec.bundle.A, c)
        ups = upsilon_p(spec.q, bank, c)
        target = float(spec.q @ beta)
        out = {}
        for kind in spec.intervals:
            if kind == "exact":
                ci = exact_interval(sol, spec.q, ups, spec.lam, spec.alpha)
            else:
                ci = nmf_interval(sol, spec.q, ups, spec.alpha)
            out[kind] = ci.contains(target)
        return out
    except (ConvergenceError, ValueError):
        return None


def coverage_mc(spec: CoverageSpec, n_reps: int, seed: int = 0,
                threads: int = 1) -> dict[str, CoverageReport]:
    """Average coverage of each requested interval, one report per kind.

    Replication ``r`` uses the ``r``-th child of ``SeedSequence(seed)``, so the
    result does not depend on ``threads``.
    """
    if n_reps < 1:
        raise ValueError("n_reps must be >= 1")
    _unit(spec.q)
    bank = SiteBank.from_prior(spec.prior, spec.bundle.d)
    seeds = np.random.SeedSequence(seed).spawn(n_reps)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(lambda s: _one_rep(spec, bank, s), seeds))
    else:
        results = [_one_rep(spec, bank, s) for s in seeds]
    ok = [r for r in results if r is not None]
    failed = n_reps - len(ok)
    reports = {}
    for kind in spec.intervals:
        hits = sum(r[kind] for r in ok)
        n = len(ok)
        lo, hi = wilson_interval(hits, n)
        reports[kind] = CoverageReport(kind, n, hits, hits / n if n else float("nan"), lo, hi,
                                       float(spec.theory.get(kind, float("nan"))), failed)
    return reports


@dataclass(frozen=True)
class AssumptionCheck:
    name: str
    status: str
    value: float
    threshold: float
    note: str = ""

    def as_row(self) -> dict:
        return dict(self.__dict__)


def assumption_checks(diag: DesignDiagnostics, p: int, rho: float = 0.99) -> list[AssumptionCheck]:
    """Pass/warn/fail for high temperature, strong mean-field and homogeneity.

    High temperature passes when the upper bracket on ``||A||_4`` is at most
    ``rho`` and fails when the lower bracket exceeds it. The other two are
    asymptotic rate conditions, so a single design can only warn.
    """
    lower = max(diag.norm4_lower, diag.norm2)
    if diag.norm4_upper <= rho:
        ht = "pass"
    elif lower > rho:
        ht = "fail"
    else:
        ht = "warn"
    smf_val = math.sqrt(p) * diag.alpha_p
    smf = "pass" if smf_val < 1.0 else "warn"
    hom = "pass" if diag.homogeneity <= 1.0 and diag.d_min_observed > 0 else "warn"
    return [
        AssumptionCheck("high_temperature", ht, diag.norm4_upper, rho,
                        f"||A||_4 in [{lower:.6g}, {diag.norm4_upper:.6g}]"),
        AssumptionCheck("strong_mean_field", smf, smf_val, 1.0, "sqrt(p) * alpha_p"),
        AssumptionCheck("homogeneous_design", hom, diag.homogeneity, 1.0,
                        f"sum (d_i - d0)^2, d_min {diag.d_min_observed:.6g}"),
    ]
