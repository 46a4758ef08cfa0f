"""Priors on [-1, 1], their quadratic tilts and exponential-family moments.

A prior is stored as a finite set of atoms plus density values on a fixed
Gauss-Legendre grid. Every tilt of such a measure is a reweighting of the same
finite support, so log-MGFs and tilted moments reduce to stable log-sum-exp
sums. For sampling, grid node ``k`` owns the cell ``[b_k, b_{k+1}]`` with
``b_k = -1 + sum(w[:k])``; by the Stieltjes separation theorem each node lies
inside its own cell, and the continuous part is drawn by linear interpolation
of the CDF across cells.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

DEFAULT_NODES = 201
THETA_LIMIT = 1e6
_NORM_TOL = 1e-12


class DomainError(ValueError):
    """Raised when a tilt parameter is non-finite or out of range."""


@lru_cache(maxsize=16)
def legendre_grid(n_nodes: int = DEFAULT_NODES) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on [-1, 1] (cached, read-only)."""
    x, w = np.polynomial.legendre.leggauss(n_nodes)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def _check_theta(theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(theta)):
        raise DomainError("tilt parameter must be finite")
    if np.any(np.abs(theta) >= THETA_LIMIT):
        raise DomainError(f"|theta| must be below {THETA_LIMIT:g}")
    return theta


@dataclass(frozen=True, eq=False)
class PriorMeasure:
    """Probability measure on [-1, 1]: atoms plus a density on a GL grid.

    Construct through :meth:`from_parts` (or a preset) so that masses are
    normalized and the symmetry flag is computed.
    """

    atom_locs: np.ndarray
    atom_weights: np.ndarray
    density: np.ndarray | None
    n_nodes: int
    symmetric: bool
    name: str = "custom"
    # merged support used by every downstream computation
    locs: np.ndarray = field(repr=False, default=None)
    log_mass: np.ndarray = field(repr=False, default=None)
    cell_lo: np.ndarray = field(repr=False, default=None)
    cell_hi: np.ndarray = field(repr=False, default=None)

    @classmethod
    def from_parts(
        cls,
        atoms: Sequence[tuple[float, float]] = (),
        density: Callable[[np.ndarray], np.ndarray] | np.ndarray | None = None,
        n_nodes: int = DEFAULT_NODES,
        name: str = "custom",
    ) -> "PriorMeasure":
        """Build a normalized prior.

        Args:
            atoms: ``(location, weight)`` pairs; weights need not sum to one.
            density: callable evaluated on the GL nodes, or the values there.
                Its mass relative to the atoms is its GL integral.
            n_nodes: size of the Gauss-Legendre grid.
            name: label used in reports.
        """
        atoms = list(atoms)
        locs = np.array([a[0] for a in atoms], dtype=float)
        wts = np.array([a[1] for a in atoms], dtype=float)
        if locs.size and (np.any(np.abs(locs) > 1.0) or np.any(wts <= 0)):
            raise ValueError("atoms need locations in [-1, 1] and positive weights")
        x, w = legendre_grid(n_nodes)
        dens = None
        if density is not None:
            dens = np.asarray(density(x) if callable(density) else density, dtype=float)
            if dens.shape != x.shape or np.any(dens < 0) or not np.all(np.isfinite(dens)):
                raise ValueError("density must be finite, nonnegative, one value per node")
            if np.sum(w * dens) <= 0:
                dens = None
        total = wts.sum() + (np.sum(w * dens) if dens is not None else 0.0)
        if total <= 0:
            raise ValueError("empty measure")
        wts = wts / total
        if dens is not None:
            dens = dens / total

        # merge duplicate atoms, then sort
        if locs.size:
            uniq, inv = np.unique(locs, return_inverse=True)
            wts = np.bincount(inv, weights=wts)
            locs = uniq

        m_locs = [locs]
        m_mass = [wts]
        m_lo = [locs]
        m_hi = [locs]
        if dens is not None:
            bounds = np.concatenate([[-1.0], -1.0 + np.cumsum(w)])
            bounds[-1] = 1.0
            keep = dens > 0
            m_locs.append(x[keep])
            m_mass.append((w * dens)[keep])
            m_lo.append(bounds[:-1][keep])
            m_hi.append(bounds[1:][keep])
        all_locs = np.concatenate(m_locs)
        all_mass = np.concatenate(m_mass)
        with np.errstate(divide="ignore"):
            log_mass = np.log(all_mass)
        log_mass -= logsumexp(log_mass)

        symmetric = _is_symmetric(locs, wts, dens)
        arrays = dict(
            locs=all_locs,
            log_mass=log_mass,
            cell_lo=np.concatenate(m_lo),
            cell_hi=np.concatenate(m_hi),
        )
        for a in arrays.values():
            a.setflags(write=False)
        return cls(
            atom_locs=locs,
            atom_weights=wts,
            density=dens,
            n_nodes=n_nodes,
            symmetric=symmetric,
            name=name,
            **arrays,
        )

    @property
    def total_mass(self) -> float:
        _, w = legendre_grid(self.n_nodes)
        dens_mass = float(np.sum(w * self.density)) if self.density is not None else 0.0
        return float(self.atom_weights.sum()) + dens_mass

    @property
    def is_atomic(self) -> bool:
        return self.density is None

    def moment(self, k: int) -> float:
        return float(np.sum(np.exp(self.log_mass) * self.locs**k))

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Draw ``size`` iid values from the (untilted) prior."""
        mass = np.exp(self.log_mass)
        cdf = np.cumsum(mass)
        cdf /= cdf[-1]
        unif = rng.random(size)
        idx = np.minimum(np.searchsorted(cdf, unif), mass.size - 1)
        frac = np.clip(1.0 - (cdf[idx] - unif) / mass[idx], 0.0, 1.0)
        return self.cell_lo[idx] + frac * (self.cell_hi[idx] - self.cell_lo[idx])

    def reflected(self) -> "PriorMeasure":
        dens = self.density[::-1] if self.density is not None else None
        atoms = list(zip(-self.atom_locs, self.atom_weights))
        return PriorMeasure.from_parts(atoms, dens, self.n_nodes, name=self.name + "_reflected")


def _is_symmetric(locs, wts, dens) -> bool:
    if locs.size:
        order = np.argsort(-locs)
        if not (np.allclose(locs, -locs[order], atol=_NORM_TOL, rtol=0)
                and np.allclose(wts, wts[order], atol=_NORM_TOL, rtol=0)):
            return False
    if dens is not None and not np.allclose(dens, dens[::-1], atol=_NORM_TOL, rtol=0):
        return False
    return True


def uniform(n_nodes: int = DEFAULT_NODES) -> PriorMeasure:
    return PriorMeasure.from_parts((), lambda x: np.full_like(x, 0.5), n_nodes, "uniform")


def rademacher() -> PriorMeasure:
    return PriorMeasure.from_parts([(-1.0, 0.5), (1.0, 0.5)], name="rademacher")


def three_point() -> PriorMeasure:
    return PriorMeasure.from_parts([(-1.0, 1.0), (0.0, 1.0), (1.0, 1.0)], name="three_point")


def spike_slab_base(n_nodes: int = DEFAULT_NODES) -> PriorMeasure:
    """Half point mass at zero, half Unif[-1, 1]."""
    return PriorMeasure.from_parts(
        [(0.0, 0.5)], lambda x: np.full_like(x, 0.25), n_nodes, "spike_slab_base"
    )


def point_mass(loc: float = 0.0) -> PriorMeasure:
    return PriorMeasure.from_parts([(loc, 1.0)], name=f"delta_{loc:g}")


PRESETS: dict[str, Callable[[], PriorMeasure]] = {
    "uniform": uniform,
    "rademacher": rademacher,
    "three_point": three_point,
    "spike_slab_base": spike_slab_base,
}


def prior_from_config(cfg) -> PriorMeasure:
    """Parse a prior from a config value.

    Accepts a preset name, ``{"preset": name}``, or
    ``{"atoms": [[loc, weight], ...], "uniform_weight": w}`` where the optional
    uniform slab receives mass ``w`` relative to the atom weights.
    """
    if isinstance(cfg, PriorMeasure):
        return cfg
    if isinstance(cfg, str):
        cfg = {"preset": cfg}
    if "preset" in cfg:
        try:
            return PRESETS[cfg["preset"]]()
        except KeyError:
            raise ValueError(f"unknown prior preset {cfg['preset']!r}") from None
    atoms = [tuple(map(float, a)) for a in cfg.get("atoms", [])]
    slab = float(cfg.get("uniform_weight", 0.0))
    dens = (lambda x: np.full_like(x, slab / 2)) if slab > 0 else None
    return PriorMeasure.from_parts(atoms, dens, int(cfg.get("n_nodes", DEFAULT_NODES)),
                                   cfg.get("name", "custom"))


class TiltedSite:
    """Quadratic tilt of a prior: density proportional to exp(-d z^2 / 2).

    Immutable. ``log_mgf``, ``tilt_mean`` and ``tilt_var`` accept scalars or
    arrays of natural parameters.
    """

    def __init__(self, base: PriorMeasure, d: float):
        d = float(d)
        if not np.isfinite(d) or d < 0:
            raise ValueError("quadratic tilt coefficient must be finite and >= 0")
        self.base = base
        self.d = d
        logw = base.log_mass - 0.5 * d * base.locs**2
        self.log_weights = logw - logsumexp(logw)
        self.log_weights.setflags(write=False)
        self.locs = base.locs
        self.symmetric = base.symmetric

    def _tilted(self, theta: np.ndarray):
        # (..., K) normalized weights of mu_{i,theta}
        logits = self.log_weights + theta[..., None] * self.locs
        lse = logsumexp(logits, axis=-1)
        return lse, np.exp(logits - lse[..., None])

    def log_mgf(self, theta):
        theta = _check_theta(theta)
        lse, _ = self._tilted(theta)
        return lse if lse.ndim else float(lse)

    def tilt_mean(self, theta):
        theta = _check_theta(theta)
        _, wts = self._tilted(theta)
        out = wts @ self.locs
        return out if out.ndim else float(out)

    def tilt_var(self, theta):
        theta = _check_theta(theta)
        _, wts = self._tilted(theta)
        mean = wts @ self.locs
        out = np.sum(wts * (self.locs - mean[..., None]) ** 2, axis=-1)
        return out if out.ndim else float(out)

    def sample(self, theta, rng: np.random.Generator) -> np.ndarray:
        """Inverse-CDF draws from the exponential tilts at each ``theta``."""
        theta = np.atleast_1d(_check_theta(theta))
        _, wts = self._tilted(theta)
        return _inverse_cdf(wts, self.base.cell_lo, self.base.cell_hi, rng.random(theta.shape))


def _inverse_cdf(wts, lo, hi, unif) -> np.ndarray:
    """Invert the CDF with atoms exact and grid cells linear."""
    cdf = np.cumsum(wts, axis=-1)
    cdf /= cdf[..., -1:]
    idx = np.minimum((cdf < unif[..., None]).sum(axis=-1), wts.shape[-1] - 1)
    w_k = np.take_along_axis(wts, idx[..., None], -1)[..., 0]
    upper = np.take_along_axis(cdf, idx[..., None], -1)[..., 0]
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(w_k > 0, 1.0 - (upper - unif) / w_k, 0.5)
    frac = np.clip(frac, 0.0, 1.0)
    if lo.ndim == 2:
        lo = np.take_along_axis(lo, idx[:, None], 1)[:, 0]
        hi = np.take_along_axis(hi, idx[:, None], 1)[:, 0]
    else:
        lo, hi = lo[idx], hi[idx]
    return lo + frac * (hi - lo)


def make_site(base: PriorMeasure, d: float) -> TiltedSite:
    return TiltedSite(base, d)


def log_mgf(site: TiltedSite, theta):
    return site.log_mgf(theta)


def tilt_mean(site: TiltedSite, theta):
    return site.tilt_mean(theta)


def tilt_var(site: TiltedSite, theta):
    return site.tilt_var(theta)


def sample_tilted(site: TiltedSite, theta: float, rng: np.random.Generator) -> float:
    return float(site.sample(theta, rng)[0])


class SiteBank:
    """A stack of ``p`` tilted sites evaluated together.

    Row ``i`` holds the merged support of site ``i``; shorter supports are
    padded with zero-mass entries so heterogeneous priors can share a bank.
    """

    def __init__(self, locs, log_weights, cell_lo, cell_hi, symmetric: bool, d=None):
        self.locs = np.ascontiguousarray(locs, dtype=float)
        self.log_weights = np.ascontiguousarray(log_weights, dtype=float)
        self.cell_lo = np.ascontiguousarray(cell_lo, dtype=float)
        self.cell_hi = np.ascontiguousarray(cell_hi, dtype=float)
        self.symmetric = symmetric
        self.d = None if d is None else np.asarray(d, dtype=float)
        for a in (self.locs, self.log_weights, self.cell_lo, self.cell_hi):
            a.setflags(write=False)

    @classmethod
    def from_prior(cls, base: PriorMeasure, d) -> "SiteBank":
        d = np.asarray(d, dtype=float)
        if d.ndim != 1 or np.any(d < 0) or not np.all(np.isfinite(d)):
            raise ValueError("d must be a finite nonnegative vector")
        logw = base.log_mass[None, :] - 0.5 * d[:, None] * base.locs[None, :] ** 2
        logw -= logsumexp(logw, axis=1, keepdims=True)
        p = d.size
        tile = lambda a: np.broadcast_to(a, (p, a.size))
        return cls(tile(base.locs), logw, tile(base.cell_lo), tile(base.cell_hi),
                   base.symmetric, d)

    @classmethod
    def from_sites(cls, sites: Sequence[TiltedSite] | "SiteBank") -> "SiteBank":
        if isinstance(sites, SiteBank):
            return sites
        sites = list(sites)
        if not sites:
            raise ValueError("no sites")
        bases = {id(s.base) for s in sites}
        if len(bases) == 1:
            return cls.from_prior(sites[0].base, [s.d for s in sites])
        width = max(s.locs.size for s in sites)
        p = len(sites)
        locs = np.zeros((p, width))
        logw = np.full((p, width), -np.inf)
        lo = np.zeros((p, width))
        hi = np.zeros((p, width))
        for i, s in enumerate(sites):
            k = s.locs.size
            locs[i, :k] = s.locs
            logw[i, :k] = s.log_weights
            lo[i, :k] = s.base.cell_lo
            hi[i, :k] = s.base.cell_hi
        return cls(locs, logw, lo, hi, all(s.symmetric for s in sites),
                   [s.d for s in sites])

    def __len__(self) -> int:
        return self.locs.shape[0]

    def site(self, i: int) -> "SiteBank":
        sl = slice(i, i + 1)
        return SiteBank(self.locs[sl], self.log_weights[sl], self.cell_lo[sl],
                        self.cell_hi[sl], self.symmetric,
                        None if self.d is None else self.d[sl])

    def _tilted(self, theta):
        theta = _check_theta(theta)
        if theta.shape != (len(self),):
            raise ValueError(f"expected {len(self)} natural parameters")
        logits = self.log_weights + theta[:, None] * self.locs
        lse = logsumexp(logits, axis=1)
        return lse, np.exp(logits - lse[:, None])

    def log_mgf(self, theta) -> np.ndarray:
        return self._tilted(theta)[0]

    def mean(self, theta) -> np.ndarray:
        return np.sum(self._tilted(theta)[1] * self.locs, axis=1)

    def mean_var(self, theta) -> tuple[np.ndarray, np.ndarray]:
        _, wts = self._tilted(theta)
        m = np.sum(wts * self.locs, axis=1)
        v = np.sum(wts * (self.locs - m[:, None]) ** 2, axis=1)
        return m, v

    def var(self, theta) -> np.ndarray:
        return self.mean_var(theta)[1]

    def sample(self, theta, rng: np.random.Generator) -> np.ndarray:
        _, wts = self._tilted(theta)
        return _inverse_cdf(wts, self.cell_lo, self.cell_hi, rng.random(len(self)))
