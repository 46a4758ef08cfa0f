"""Limiting constants for the projected posterior and coverage limits.

All integrals are over ``B ~ mu*`` and ``W0 ~ N(0, d0)``: the outer law uses
the truth's own quadrature (atoms exact, normal parts Gauss-Hermite) and the
inner Gaussian a probabilists' Gauss-Hermite rule. Everything is written in
the ``(d0, W0)`` parameterization; white-noise inputs use ``d0 = 1/sigma2``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .meanfield import normal_sf, normal_two_sided_quantile
from .model import GH_NODES, TruthLaw, truth_law_from_config
from .prior import PriorMeasure, TiltedSite, prior_from_config


def _gh(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.hermite_e.hermegauss(n)
    return x, w / w.sum()


def psi0_site(prior: PriorMeasure, d0: float) -> TiltedSite:
    if not d0 > 0:
        raise ValueError("d0 must be positive")
    return TiltedSite(prior, d0)


class _Nested:
    """Tabulates psi0', psi0'' on the (B, W0) product grid."""

    def __init__(self, site: TiltedSite, mu_star: TruthLaw, d0: float, n_gh: int):
        if not d0 > 0:
            raise ValueError("d0 must be positive")
        self.b, self.wb = mu_star.quadrature(n_gh)
        x, self.gw = _gh(n_gh)
        C = d0 * self.b[:, None] + np.sqrt(d0) * x[None, :]
        _, wts = site._tilted(C)
        self.d1 = wts @ site.locs
        self.d2 = np.sum(wts * (site.locs - self.d1[..., None]) ** 2, axis=-1)

    def outer(self, f: np.ndarray) -> float:
        return float(self.wb @ f)

    def inner(self, g: np.ndarray) -> np.ndarray:
        return g @ self.gw


def _ctx(psi0, mu_star, d0, n_gh) -> _Nested:
    return _Nested(psi0, truth_law_from_config(mu_star), d0, n_gh)


def _check_lambda(lam: float, ups: float) -> float:
    denom = 1.0 - lam * ups
    if denom <= 0:
        raise ValueError("lambda * upsilon must be < 1")
    return denom


def limit_upsilon(psi0: TiltedSite, mu_star, d0: float, n_gh: int = GH_NODES) -> float:
    """``E psi0''(d0 B + W0)``."""
    t = _ctx(psi0, mu_star, d0, n_gh)
    return t.outer(t.inner(t.d2))


def limit_varsigma2(psi0: TiltedSite, mu_star, d0: float, lam: float,
                    n_gh: int = GH_NODES) -> float:
    """``(E Var(psi0'(d0 B + W0) | B) - lam ups^2) / (1 - lam ups)^2``."""
    t = _ctx(psi0, mu_star, d0, n_gh)
    ups = t.outer(t.inner(t.d2))
    denom = _check_lambda(lam, ups)
    phi1 = t.inner(t.d1)
    cond_var = t.inner(t.d1**2) - phi1**2
    return (t.outer(cond_var) - lam * ups**2) / denom**2


def limit_tau2(psi0: TiltedSite, mu_star, d0: float, lam: float,
               n_gh: int = GH_NODES) -> tuple[float, float]:
    """Return ``(tau2, vartheta2)``.

    ``tau2 = (Var(B - psi0'(d0 B + W0)) - lam ups^2) / (1 - lam ups)^2`` and
    ``vartheta2 = Var(phi1(d0 B) - B) / (1 - lam ups)^2``.
    """
    t = _ctx(psi0, mu_star, d0, n_gh)
    ups = t.outer(t.inner(t.d2))
    denom = _check_lambda(lam, ups)
    diff = t.b[:, None] - t.d1
    m1 = t.outer(t.inner(diff))
    var_total = t.outer(t.inner((diff - m1) ** 2))
    bias = t.inner(t.d1) - t.b
    mb = t.outer(bias)
    var_bias = t.outer((bias - mb) ** 2)
    return (var_total - lam * ups**2) / denom**2, var_bias / denom**2


def coverage_limit(upsilon: float, lam: float, tau2: float, alpha: float) -> float:
    """Limiting average coverage of the exact interval: ``1 - 2 sf(c sqrt(ratio))``."""
    denom = _check_lambda(lam, upsilon)
    if not tau2 > 0 or not upsilon > 0:
        raise ValueError("upsilon and tau2 must be positive")
    c = normal_two_sided_quantile(alpha)
    return 1.0 - 2.0 * normal_sf(c * np.sqrt(upsilon / (denom * tau2)))


def nmf_coverage_limit(upsilon: float, tau2: float, alpha: float) -> float:
    """Same with the naive mean-field half-width ``c sqrt(upsilon)``."""
    if not tau2 > 0 or not upsilon > 0:
        raise ValueError("upsilon and tau2 must be positive")
    c = normal_two_sided_quantile(alpha)
    return 1.0 - 2.0 * normal_sf(c * np.sqrt(upsilon / tau2))


def phi1(psi0: TiltedSite, m, d0: float, n_gh: int = GH_NODES):
    """``E psi0'(m + W0)`` with ``W0 ~ N(0, d0)``, elementwise in ``m``."""
    x, gw = _gh(n_gh)
    m = np.asarray(m, dtype=float)
    vals = psi0.tilt_mean(m[..., None] + np.sqrt(d0) * x)
    return vals @ gw


def clt_centering(psi0: TiltedSite, beta_star, q, d0: float, lam: float, upsilon: float,
                  n_gh: int = GH_NODES) -> tuple[float, float]:
    """Centering of the posterior-mean CLT and ``bias_p(beta*)``.

    centering = sum q_i (phi1(d0 b_i) - lam ups b_i) / (1 - lam ups);
    bias = sum q_i (phi1(d0 b_i) - b_i) / (1 - lam ups).
    """
    denom = _check_lambda(lam, upsilon)
    b = np.asarray(beta_star, dtype=float)
    q = np.asarray(q, dtype=float)
    f = phi1(psi0, d0 * b, d0, n_gh)
    centering = float(q @ (f - lam * upsilon * b)) / denom
    bias = float(q @ (f - b)) / denom
    return centering, bias


@dataclass(frozen=True)
class SparseLimit:
    mean: float
    var: float
    case: str


def sparse_limit(psi0: TiltedSite, mu_tilde, sigma2: float, zeta: float,
                 n_gh: int = GH_NODES, tol: float = 1e-12) -> SparseLimit:
    """Limit law of the posterior mean under spike-and-slab truth.

    ``mean = zeta * E psi0'(slab/sigma2 + W)``, ``var = Var psi0'(W)``, with
    ``W ~ N(0, 1/sigma2)``. ``case`` is ``a`` (centred slab), ``b`` (finite
    ``zeta``) or ``c`` (divergent; mean reported as +/-inf).
    """
    d0 = 1.0 / sigma2
    x, gw = _gh(n_gh)
    null = psi0.tilt_mean(np.sqrt(d0) * x)
    var = float(gw @ null**2 - (gw @ null) ** 2)
    slab = truth_law_from_config(mu_tilde)
    b, wb = slab.quadrature(n_gh)
    drift = float(wb @ phi1(psi0, d0 * b, d0, n_gh))
    if abs(drift) < tol:
        return SparseLimit(0.0, var, "a")
    if not np.isfinite(zeta):
        return SparseLimit(float(np.sign(zeta) * np.sign(drift)) * np.inf, var, "c")
    return SparseLimit(zeta * drift, var, "b")


@dataclass(frozen=True)
class LimitMoments:
    """The lambda-free integrals behind every limiting constant."""

    d0: float
    upsilon: float
    mean_cond_var: float
    var_bias: float
    var_total: float

    @classmethod
    def compute(cls, prior, mu_star, d0: float, n_gh: int = GH_NODES) -> "LimitMoments":
        site = psi0_site(prior_from_config(prior), d0)
        t = _ctx(site, mu_star, d0, n_gh)
        f1 = t.inner(t.d1)
        bias = f1 - t.b
        diff = t.b[:, None] - t.d1
        return cls(
            d0=d0,
            upsilon=t.outer(t.inner(t.d2)),
            mean_cond_var=t.outer(t.inner(t.d1**2) - f1**2),
            var_bias=t.outer((bias - t.outer(bias)) ** 2),
            var_total=t.outer(t.inner((diff - t.outer(t.inner(diff))) ** 2)),
        )


@dataclass(frozen=True)
class AsymptoticConstants:
    d0: float
    lam: float
    upsilon: float
    varsigma2: float
    vartheta2: float
    tau2: float
    alpha: float
    coverage_limit: float
    nmf_coverage_limit: float

    def as_row(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_moments(cls, m: LimitMoments, lam: float, alpha: float = 0.05) -> "AsymptoticConstants":
        ups = m.upsilon
        denom = _check_lambda(lam, ups)
        varsigma2 = (m.mean_cond_var - lam * ups**2) / denom**2
        vartheta2 = m.var_bias / denom**2
        tau2 = (m.var_total - lam * ups**2) / denom**2
        return cls(
            d0=m.d0, lam=lam, upsilon=ups, varsigma2=varsigma2, vartheta2=vartheta2, tau2=tau2,
            alpha=alpha, coverage_limit=coverage_limit(ups, lam, tau2, alpha),
            nmf_coverage_limit=nmf_coverage_limit(ups, tau2, alpha),
        )


def constants(prior, mu_star, d0: float, lam: float, alpha: float = 0.05,
              n_gh: int = GH_NODES) -> AsymptoticConstants:
    """Every limiting constant for one ``(mu, mu*, d0, lambda, alpha)`` tuple."""
    return AsymptoticConstants.from_moments(LimitMoments.compute(prior, mu_star, d0, n_gh),
                                            lam, alpha)
