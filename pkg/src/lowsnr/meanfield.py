"""Mean-field fixed point, variance proxy and credible intervals."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import erfc

from .prior import SiteBank, TiltedSite


class ConvergenceError(RuntimeError):
    """Fixed-point iteration exhausted its budget; carries the last iterate."""

    def __init__(self, message: str, u: np.ndarray, residual: float, iterations: int):
        super().__init__(message)
        self.u = u
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True, eq=False)
class MeanFieldSolution:
    u: np.ndarray
    s: np.ndarray
    theta: np.ndarray
    iterations: int
    residual: float
    tol: float

    def to_csv(self, path) -> None:
        idx = np.arange(self.u.size)
        np.savetxt(path, np.column_stack([idx, self.u, self.s, self.theta]), delimiter=",",
                   header="i,u,s,theta", comments="", fmt=["%d", "%.17g", "%.17g", "%.17g"])


def _bank(sites) -> SiteBank:
    return SiteBank.from_sites(sites)


def fixed_point_residual(sites, A: np.ndarray, c: np.ndarray, u: np.ndarray) -> float:
    """``max_i |u_i - psi_i'((A u)_i + c_i)|``."""
    bank = _bank(sites)
    return float(np.max(np.abs(u - bank.mean(A @ u + c))))


def solve_fixed_point(
    sites: Sequence[TiltedSite] | SiteBank,
    A: np.ndarray,
    c: np.ndarray,
    tol: float = 1e-10,
    max_iter: int = 10_000,
    damping: float = 0.0,
    init: np.ndarray | None = None,
) -> MeanFieldSolution:
    """Picard iteration ``u <- psi'(A u + c)`` started from ``psi'(c)``.

    ``damping`` is the weight kept on the previous iterate, so 0 is plain
    Picard. Stops once the sup-norm step is below ``tol`` and the residual,
    recomputed from the returned iterate, is below ``tol`` as well.
    """
    bank = _bank(sites)
    A = np.asarray(A, dtype=float)
    c = np.asarray(c, dtype=float)
    p = len(bank)
    if A.shape != (p, p) or c.shape != (p,):
        raise ValueError("sites, A and c disagree in dimension")
    if not 0.0 <= damping < 1.0:
        raise ValueError("damping must lie in [0, 1)")
    fro = np.linalg.norm(A)
    if fro >= 1.0 and np.linalg.norm(A, 2) >= 1.0:
        warnings.warn("||A||_2 >= 1: fixed point may be non-unique", RuntimeWarning, stacklevel=2)

    u = bank.mean(c) if init is None else np.asarray(init, dtype=float).copy()
    residual = np.inf
    for it in range(1, max_iter + 1):
        new = bank.mean(A @ u + c)
        if damping:
            new = damping * u + (1.0 - damping) * new
        step = np.max(np.abs(new - u))
        u = new
        if step < tol:
            s = A @ u
            residual = float(np.max(np.abs(u - bank.mean(s + c))))
            if residual <= tol:
                return MeanFieldSolution(u, s, s + c, it, residual, tol)
    residual = float(np.max(np.abs(u - bank.mean(A @ u + c))))
    raise ConvergenceError(
        f"mean-field iteration did not converge in {max_iter} steps (residual {residual:.3g})",
        u, residual, max_iter)


def _unit(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if abs(np.linalg.norm(q) - 1.0) > 1e-10:
        raise ValueError("q must be a unit vector")
    return q


def upsilon_p(q: np.ndarray, sites, c: np.ndarray) -> float:
    """Variance proxy ``sum_i q_i^2 psi_i''(c_i)``."""
    q = _unit(q)
    return float(np.sum(q**2 * _bank(sites).var(np.asarray(c, dtype=float))))


def normal_two_sided_quantile(alpha: float, tol: float = 1e-12) -> float:
    """``c`` with ``P(|N(0,1)| >= c) = alpha``, by bisection on erfc."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    lo, hi = 0.0, 40.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if math.erfc(mid / math.sqrt(2.0)) > alpha:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def normal_sf(x):
    """Upper-tail probability of the standard normal."""
    x = np.asarray(x, dtype=float)
    out = 0.5 * erfc(x / np.sqrt(2.0))
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class CredibleInterval:
    center: float
    half_width: float
    kind: str
    alpha: float
    lambda_p: float = 0.0

    @property
    def lo(self) -> float:
        return self.center - self.half_width

    @property
    def hi(self) -> float:
        return self.center + self.half_width

    def contains(self, x: float) -> bool:
        return self.lo <= x <= self.hi

    def as_row(self) -> tuple:
        return (self.center, self.lo, self.hi, self.kind, self.alpha)


def interval_from_center(center: float, upsilon: float, lambda_p: float, alpha: float,
                         kind: str = "exact") -> CredibleInterval:
    if upsilon <= 0:
        raise ValueError("upsilon must be positive")
    if kind == "nmf":
        lambda_p = 0.0
    denom = 1.0 - lambda_p * upsilon
    if denom <= 0:
        raise ValueError("lambda_p * upsilon >= 1: outside the high-temperature regime")
    hw = normal_two_sided_quantile(alpha) * math.sqrt(upsilon / denom)
    return CredibleInterval(float(center), hw, kind, alpha, float(lambda_p))


def exact_interval(sol: MeanFieldSolution | None, q, upsilon: float, lambda_p: float,
                   alpha: float, center: float | None = None) -> CredibleInterval:
    """``q^T u +/- c_{alpha/2} sqrt(upsilon / (1 - lambda_p upsilon))``."""
    if center is None:
        center = mf_point_estimate(sol, q)
    return interval_from_center(center, upsilon, lambda_p, alpha, "exact")


def nmf_interval(sol: MeanFieldSolution | None, q, upsilon: float, alpha: float,
                 center: float | None = None) -> CredibleInterval:
    """Naive mean-field interval ``q^T u +/- c_{alpha/2} sqrt(upsilon)``."""
    if center is None:
        center = mf_point_estimate(sol, q)
    return interval_from_center(center, upsilon, 0.0, alpha, "nmf")


def mf_point_estimate(sol: MeanFieldSolution, q) -> float:
    return float(np.dot(np.asarray(q, dtype=float), sol.u))
