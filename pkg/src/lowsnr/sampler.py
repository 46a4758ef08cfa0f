"""Single-site Gibbs sampling of the exact posterior.

Each full conditional is an exponential tilt of the site's quadratic tilt, so
every update is an exact inverse-CDF draw (no rejections). Local fields
``m = A beta`` are updated in O(p) after each site move and recomputed from
scratch every ``REFRESH`` sweeps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .prior import SiteBank

REFRESH = 100
_CHUNK = 512


@dataclass(frozen=True)
class ChainConfig:
    burn_in: int = 500
    n_samples: int = 1000
    thin: int = 1
    sweep: str = "sequential"
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.thin < 1 or self.burn_in < 0:
            raise ValueError("thin must be >= 1 and burn_in >= 0")
        if self.sweep not in ("sequential", "random_scan"):
            raise ValueError("sweep must be 'sequential' or 'random_scan'")

    @classmethod
    def from_config(cls, cfg: dict | None) -> "ChainConfig":
        return cls(**(cfg or {}))


@dataclass(frozen=True, eq=False)
class PosteriorSampleSet:
    """Kept Gibbs states plus, per kept sweep, each site's conditional mean."""

    draws: np.ndarray
    cond_means: np.ndarray
    config: ChainConfig
    acceptance: float = 1.0

    def to_csv(self, path) -> None:
        p = self.draws.shape[1]
        np.savetxt(path, self.draws, delimiter=",", comments="", fmt="%.17g",
                   header=",".join(f"beta_{i}" for i in range(p)))


@numba.njit(cache=True)
def _site_update(i, theta, locs, logw, lo, hi, u, buf):
    K = locs.shape[1]
    mx = -np.inf
    for k in range(K):
        v = logw[i, k] + theta * locs[i, k]
        buf[k] = v
        if v > mx:
            mx = v
    total = 0.0
    first = 0.0
    for k in range(K):
        w = np.exp(buf[k] - mx)
        buf[k] = w
        total += w
        first += w * locs[i, k]
    target = u * total
    acc = 0.0
    for k in range(K):
        w = buf[k]
        if w > 0.0 and acc + w >= target:
            frac = min(max((target - acc) / w, 0.0), 1.0)
            return lo[i, k] + frac * (hi[i, k] - lo[i, k]), first / total
        acc += w
    k = K - 1
    while buf[k] == 0.0:
        k -= 1
    return hi[i, k], first / total


@numba.njit(cache=True)
def _run_sweeps(state, m, locs, logw, lo, hi, A, c, unif, order, sweep0, burn, thin,
                draws, conds, refresh):
    n_sweeps, p = unif.shape
    buf = np.empty(locs.shape[1])
    cm = np.empty(p)
    for i in range(p):
        cm[i] = _site_update(i, m[i] + c[i], locs, logw, lo, hi, 0.5, buf)[1]
    for s in range(n_sweeps):
        for t in range(p):
            i = order[s, t]
            new, cmean = _site_update(i, m[i] + c[i], locs, logw, lo, hi, unif[s, t], buf)
            cm[i] = cmean
            delta = new - state[i]
            if delta != 0.0:
                for j in range(p):
                    m[j] += delta * A[j, i]
                state[i] = new
        g = sweep0 + s + 1
        if g % refresh == 0:
            for j in range(p):
                acc = 0.0
                for k in range(p):
                    acc += A[j, k] * state[k]
                m[j] = acc
        if g > burn and (g - burn) % thin == 0:
            row = (g - burn) // thin - 1
            if row < draws.shape[0]:
                draws[row, :] = state
                conds[row, :] = cm


def run_chain(sites, A: np.ndarray, c: np.ndarray, cfg: ChainConfig,
              init: np.ndarray | None = None) -> PosteriorSampleSet:
    """Run ``burn_in`` sweeps, then keep every ``thin``-th of the next sweeps."""
    bank = SiteBank.from_sites(sites)
    p = len(bank)
    A = np.ascontiguousarray(A, dtype=float)
    c = np.ascontiguousarray(c, dtype=float)
    if A.shape != (p, p) or c.shape != (p,):
        raise ValueError("sites, A and c disagree in dimension")
    rng = np.random.default_rng(cfg.seed)
    state = np.zeros(p) if init is None else np.array(init, dtype=float)
    if np.any(np.abs(state) > 1):
        raise ValueError("initial state must lie in [-1, 1]^p")
    m = A @ state
    draws = np.empty((cfg.n_samples, p))
    conds = np.empty((cfg.n_samples, p))
    total = cfg.burn_in + cfg.n_samples * cfg.thin
    seq = np.broadcast_to(np.arange(p), (_CHUNK, p))
    done = 0
    while done < total:
        k = min(_CHUNK, total - done)
        unif = rng.random((k, p))
        if cfg.sweep == "random_scan":
            order = rng.integers(0, p, size=(k, p))
        else:
            order = np.ascontiguousarray(seq[:k])
        _run_sweeps(state, m, bank.locs, bank.log_weights, bank.cell_lo, bank.cell_hi,
                    A, c, unif, order, done, cfg.burn_in, cfg.thin, draws, conds, REFRESH)
        done += k
    return PosteriorSampleSet(draws, conds, cfg)


def gibbs_sweep(state: np.ndarray, sites, A: np.ndarray, c: np.ndarray,
                rng: np.random.Generator) -> np.ndarray:
    """One sequential sweep from ``state``; returns the updated copy."""
    bank = SiteBank.from_sites(sites)
    p = len(bank)
    state = np.array(state, dtype=float)
    A = np.ascontiguousarray(A, dtype=float)
    m = A @ state
    draws = np.empty((1, p))
    conds = np.empty((1, p))
    order = np.arange(p)[None, :]
    _run_sweeps(state, m, bank.locs, bank.log_weights, bank.cell_lo, bank.cell_hi, A,
                np.ascontiguousarray(c, dtype=float), rng.random((1, p)), order, 0, 0, 1,
                draws, conds, REFRESH)
    return state


def batch_means_se(x: np.ndarray, n_batches: int | None = None) -> tuple[float, float]:
    """Monte Carlo standard error of ``mean(x)`` and the effective sample size."""
    x = np.asarray(x, dtype=float)
    n = x.size
    nb = n_batches or max(int(np.sqrt(n)), 2)
    b = n // nb
    if b < 1:
        raise ValueError("too few draws for batch means")
    bm = x[: nb * b].reshape(nb, b).mean(axis=1)
    var_mean = bm.var(ddof=1) / nb
    s2 = x.var(ddof=1)
    ess = float(n) if var_mean <= 0 else min(float(n), s2 / var_mean)
    return float(np.sqrt(var_mean)), ess


@dataclass(frozen=True, eq=False)
class ProjectionEstimate:
    """Posterior summaries of ``T(beta) = q^T beta``.

    ``rb_mean`` averages the conditional expectations recorded during each
    sweep; it estimates the same posterior mean with much smaller variance.
    """

    mean: float
    var: float
    draws: np.ndarray
    ess: float
    mean_se: float
    var_se: float
    rb_mean: float
    rb_se: float


def estimate_projection(samples: PosteriorSampleSet, q: np.ndarray) -> ProjectionEstimate:
    q = np.asarray(q, dtype=float)
    if abs(np.linalg.norm(q) - 1.0) > 1e-10:
        raise ValueError("q must be a unit vector")
    t = samples.draws @ q
    mean = float(t.mean())
    se, ess = batch_means_se(t)
    var = float(t.var(ddof=1))
    var_se, _ = batch_means_se((t - mean) ** 2)
    rb = samples.cond_means @ q
    rb_se, _ = batch_means_se(rb)
    return ProjectionEstimate(mean, var, t, ess, se, var_se, float(rb.mean()), rb_se)
