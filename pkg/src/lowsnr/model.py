"""Data generation: true coefficients, responses, and the posterior linear field."""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Sequence

import numpy as np

from .design import DesignBundle
from .prior import PRESETS, PriorMeasure, point_mass, prior_from_config

GH_NODES = 128


@dataclass(frozen=True)
class TruthLaw:
    """Law of an iid true coefficient: a mixture of bounded priors and normals.

    ``parts`` holds ``(weight, PriorMeasure)``; ``normals`` holds
    ``(weight, mean, sd)``. Weights are normalized at construction.
    """

    parts: tuple = ()
    normals: tuple = ()
    name: str = "custom"

    def __post_init__(self):
        total = sum(w for w, _ in self.parts) + sum(w for w, _, _ in self.normals)
        if total <= 0:
            raise ValueError("empty truth law")
        object.__setattr__(self, "parts", tuple((w / total, m) for w, m in self.parts))
        object.__setattr__(self, "normals",
                           tuple((w / total, mu, sd) for w, mu, sd in self.normals))

    @classmethod
    def from_prior(cls, prior: PriorMeasure) -> "TruthLaw":
        return cls(parts=((1.0, prior),), name=prior.name)

    @property
    def symmetric(self) -> bool:
        return all(m.symmetric for _, m in self.parts) and all(mu == 0 for _, mu, _ in self.normals)

    @property
    def bounded(self) -> bool:
        return not self.normals

    def quadrature(self, n_gh: int = GH_NODES) -> tuple[np.ndarray, np.ndarray]:
        """Nodes and weights integrating against the law.

        Bounded parts use their own merged support (atoms exact), normal parts a
        probabilists' Gauss-Hermite rule.
        """
        nodes, wts = [], []
        for w, m in self.parts:
            nodes.append(m.locs)
            wts.append(w * np.exp(m.log_mass))
        if self.normals:
            x, gw = np.polynomial.hermite_e.hermegauss(n_gh)
            gw = gw / gw.sum()
            for w, mu, sd in self.normals:
                nodes.append(mu + sd * x)
                wts.append(w * gw)
        return np.concatenate(nodes), np.concatenate(wts)

    def moment(self, k: int) -> float:
        x, w = self.quadrature()
        return float(np.sum(w * x**k))

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        comps = [("prior", w, m) for w, m in self.parts] + [("normal", w, (mu, sd)) for w, mu, sd in self.normals]
        probs = np.array([c[1] for c in comps])
        which = rng.choice(len(comps), size=size, p=probs) if len(comps) > 1 else np.zeros(size, int)
        out = np.empty(size)
        for k, (kind, _, payload) in enumerate(comps):
            idx = np.flatnonzero(which == k)
            if not idx.size:
                continue
            if kind == "prior":
                out[idx] = payload.sample(rng, idx.size)
            else:
                out[idx] = payload[0] + payload[1] * rng.standard_normal(idx.size)
        return out


def gaussian_truth(sd: float = 1.0) -> TruthLaw:
    return TruthLaw(normals=((1.0, 0.0, sd),), name="gaussian")


def gauss_mix_truth() -> TruthLaw:
    """Half point mass at zero, half standard normal."""
    return TruthLaw(parts=((0.5, point_mass(0.0)),), normals=((0.5, 0.0, 1.0),), name="gauss_mix")


TRUTH_PRESETS = {
    "gaussian": gaussian_truth,
    "gauss_mix": gauss_mix_truth,
    "delta0": lambda: TruthLaw.from_prior(point_mass(0.0)),
    **{k: (lambda f=f: TruthLaw.from_prior(f())) for k, f in PRESETS.items()},
}


def truth_law_from_config(cfg) -> TruthLaw:
    if isinstance(cfg, TruthLaw):
        return cfg
    if isinstance(cfg, PriorMeasure):
        return TruthLaw.from_prior(cfg)
    if isinstance(cfg, str) and cfg in TRUTH_PRESETS:
        return TRUTH_PRESETS[cfg]()
    return TruthLaw.from_prior(prior_from_config(cfg))


@dataclass(frozen=True)
class TruthConfig:
    """How the true coefficient vector is produced.

    ``kind`` is ``fixed`` (uses ``beta``), ``iid`` (uses ``mu_star``) or
    ``spike_slab`` (uses ``u`` and ``slab``).
    """

    kind: str
    sigma2_true: float = 1.0
    beta: np.ndarray | None = None
    mu_star: TruthLaw | None = None
    u: float | None = None
    slab: PriorMeasure | None = None

    def __post_init__(self):
        if self.kind not in ("fixed", "iid", "spike_slab"):
            raise ValueError(f"unknown truth kind {self.kind!r}")
        if self.sigma2_true < 0:
            raise ValueError("sigma2_true must be >= 0")
        if self.kind == "fixed":
            b = np.asarray(self.beta, dtype=float)
            if b.ndim != 1 or not np.all(np.isfinite(b)):
                raise ValueError("fixed truth needs a finite vector")
            object.__setattr__(self, "beta", b)
        elif self.kind == "iid" and self.mu_star is None:
            raise ValueError("iid truth needs mu_star")
        elif self.kind == "spike_slab" and (self.u is None or self.u <= 0 or self.slab is None):
            raise ValueError("spike_slab truth needs u > 0 and a slab prior")

    @classmethod
    def from_config(cls, cfg: dict) -> "TruthConfig":
        kind = cfg.get("kind", "iid")
        s2 = float(cfg.get("sigma2_true", cfg.get("sigma2", 1.0)))
        if kind == "fixed":
            beta = cfg["beta"]
            if isinstance(beta, dict):
                beta = np.full(int(beta["p"]), float(beta["value"]))
            return cls("fixed", s2, beta=np.asarray(beta, dtype=float))
        if kind == "spike_slab":
            return cls("spike_slab", s2, u=float(cfg["u"]),
                       slab=prior_from_config(cfg.get("slab", "rademacher")))
        return cls("iid", s2, mu_star=truth_law_from_config(cfg.get("mu_star", "uniform")))


def draw_truth(config: TruthConfig, p: int, rng: np.random.Generator) -> np.ndarray:
    if p < 1:
        raise ValueError("p must be >= 1")
    if config.kind == "fixed":
        if config.beta.shape != (p,):
            raise ValueError(f"fixed truth has length {config.beta.size}, expected {p}")
        return config.beta.copy()
    if config.kind == "iid":
        return config.mu_star.sample(rng, p)
    r = rng.beta(1.0, float(p) ** config.u)
    active = rng.random(p) < r
    beta = np.zeros(p)
    beta[active] = config.slab.sample(rng, int(active.sum()))
    return beta


def generate_y(bundle: DesignBundle, beta_star: np.ndarray, rng: np.random.Generator,
               sigma2_true: float | None = None) -> np.ndarray:
    """``y = X beta* + eps`` with ``eps ~ N(0, sigma2_true I)``.

    ``sigma2_true`` defaults to the model's sigma2; zero gives noiseless data.
    """
    mean = bundle.x_matvec(beta_star)
    s2 = bundle.sigma2 if sigma2_true is None else float(sigma2_true)
    if s2 < 0:
        raise ValueError("noise variance must be >= 0")
    return mean + np.sqrt(s2) * rng.standard_normal(bundle.n)


@dataclass(frozen=True)
class PosteriorField:
    c: np.ndarray
    provenance: dict = dc_field(default_factory=dict)


def field(bundle: DesignBundle, y: np.ndarray) -> PosteriorField:
    """Linear field ``c = gamma X^T y / sigma2``."""
    c = bundle.xt_matvec(y) / bundle.effective_sigma2
    if not np.all(np.isfinite(c)):
        raise ValueError("non-finite field")
    return PosteriorField(c, {"design": bundle.kind, "n": bundle.n, "p": bundle.p,
                              "gamma": bundle.gamma})


def simulate_field(bundle: DesignBundle, truth: TruthConfig, rng: np.random.Generator):
    """Draw ``beta*`` and ``y`` and return ``(beta*, y, c)``."""
    beta = draw_truth(truth, bundle.p, rng)
    y = generate_y(bundle, beta, rng, truth.sigma2_true)
    return beta, y, field(bundle, y).c


def write_vector_csv(path, columns: dict[str, Sequence[float]]) -> None:
    names = list(columns)
    arr = np.column_stack([np.asarray(columns[k], dtype=float) for k in names])
    np.savetxt(path, arr, delimiter=",", header=",".join(names), comments="", fmt="%.17g")
