"""Config-driven experiment runners that emit CSV artifacts.

Every runner takes a resolved config dict and a seed and returns
``{filename: (header, rows)}``; :func:`run_experiment` adds the comment row
with the config hash and seed. No timestamps or thread counts reach the
files, so the same config and seed give byte-identical output.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import warnings
from pathlib import Path

import numpy as np

from . import asymptotics as asym
from .design import (DesignBundle, build_anova, build_from_matrix,
                     build_gaussian_sequence, build_white_noise, diagnostics,
                     read_matrix_csv)
from .diagnostics import (CoverageSpec, assumption_checks, berry_esseen_terms,
                          coverage_mc, ks_distance)
from .meanfield import solve_fixed_point, upsilon_p
from .model import TruthConfig, draw_truth, field as posterior_field, generate_y
from .prior import SiteBank, prior_from_config
from .sampler import ChainConfig, batch_means_se, run_chain

EXPERIMENTS = ("figure1", "clt_whitenoise", "clt_general", "coverage_mc",
               "variance_order", "sparse_threshold", "diagnose")
P_CAP = 1000
FIGURE1_POINTS = 97

DEFAULTS = {
    "prior": "uniform",
    "truth": {"kind": "iid", "mu_star": "uniform"},
    "design": {"kind": "anova", "p": 200, "sigma2": 1.0, "gamma": 1.0},
    "q": "uniform",
    "alpha": 0.05,
    "chain": {"burn_in": 500, "n_samples": 10_000, "thin": 5},
}


def rng_for(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *keys]))


def resolve_config(cfg: dict) -> dict:
    exp = cfg.get("experiment")
    if exp not in EXPERIMENTS:
        raise ValueError(f"experiment must be one of {EXPERIMENTS}, got {exp!r}")
    out = {k: v for k, v in DEFAULTS.items()}
    out.update(cfg)
    out["design"] = {**DEFAULTS["design"], **cfg.get("design", {})}
    out["chain"] = {**DEFAULTS["chain"], **cfg.get("chain", {})}
    p = out["design"].get("p")
    if p is not None and int(p) > P_CAP:
        raise ValueError(f"p must be <= {P_CAP}")
    path = out["design"].get("path")
    if path is not None and not Path(path).exists():
        raise FileNotFoundError(path)
    return out


def config_hash(cfg: dict) -> str:
    blob = json.dumps({k: v for k, v in cfg.items() if k not in ("output_dir", "threads")},
                      sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def build_design(dcfg: dict, seed: int) -> DesignBundle:
    kind = dcfg.get("kind", "anova")
    s2 = float(dcfg.get("sigma2", 1.0))
    gamma = float(dcfg.get("gamma", 1.0))
    if kind in ("identity", "gaussian_sequence"):
        return build_gaussian_sequence(int(dcfg["p"]), s2, gamma)
    if kind == "anova":
        return build_anova(int(dcfg["p"]), s2, gamma)
    if kind == "white_noise":
        return build_white_noise(int(dcfg["n"]), int(dcfg["p"]), dcfg.get("dist", "gaussian"),
                                 s2, rng_for(seed, 1), gamma)
    if kind == "matrix":
        return build_from_matrix(read_matrix_csv(dcfg["path"]), s2, gamma, dcfg.get("d0"))
    raise ValueError(f"unknown design kind {kind!r}")


def make_q(spec, p: int) -> tuple[str, np.ndarray]:
    """Unit projection vector from ``uniform``, ``contrast``, ``alternating`` or a path."""
    if isinstance(spec, dict):
        kind = spec.get("kind", "uniform")
    else:
        kind, spec = spec, {}
    h = p // 2
    if kind == "uniform":
        q = np.ones(p)
    elif kind == "contrast":
        q = np.concatenate([np.ones(h), -np.ones(p - h)])
    elif kind == "alternating":
        # zero block sums for even p/2, hence in the ANOVA null space
        q = np.where(np.arange(p) % 2 == 0, 1.0, -1.0)
    elif kind == "custom":
        q = np.loadtxt(spec["path"], delimiter=",", ndmin=1).ravel()
        if q.shape != (p,):
            raise ValueError(f"custom q has length {q.size}, expected {p}")
    else:
        raise ValueError(f"unknown q kind {kind!r}")
    return kind, q / np.linalg.norm(q)


def _q_list(cfg, p) -> list[tuple[str, np.ndarray]]:
    specs = cfg["q"] if isinstance(cfg["q"], list) else [cfg["q"]]
    return [make_q(s, p) for s in specs]


def _truth(cfg) -> TruthConfig:
    t = cfg["truth"]
    return TruthConfig.from_config({"kind": "iid", "mu_star": t} if isinstance(t, str) else t)


def _lambda_grid(cfg, ups: float) -> np.ndarray:
    g = cfg.get("lambda_grid", {})
    if isinstance(g, list):
        grid = np.asarray(g, dtype=float)
    else:
        grid = np.linspace(g.get("lo", -0.95), g.get("hi", 0.95), int(g.get("n", FIGURE1_POINTS)))
    keep = grid * ups < 1.0 - 1e-9
    if not keep.all():
        warnings.warn(f"lambda grid truncated where lambda * upsilon >= 1 "
                      f"({int((~keep).sum())} points dropped)", RuntimeWarning, stacklevel=3)
    return grid[keep]


def run_figure1(cfg: dict, seed: int, threads: int = 1) -> dict:
    prior = prior_from_config(cfg["prior"])
    d0 = float(cfg.get("d0", 1.0))
    alpha = float(cfg["alpha"])
    truths = cfg.get("truths", ["uniform", "gauss_mix", "three_point"])
    moments = {t: asym.LimitMoments.compute(prior, t, d0) for t in truths}
    rows = []
    for truth in truths:
        for lam in _lambda_grid(cfg, moments[truth].upsilon):
            k = asym.AsymptoticConstants.from_moments(moments[truth], float(lam), alpha)
            rows.append([float(lam), k.coverage_limit, k.nmf_coverage_limit, prior.name, truth])
    out = {"figure1.csv": (["lambda", "exact_coverage", "nmf_coverage", "prior", "truth"], rows)}
    overlay = cfg.get("mc_overlay")
    if overlay:
        # lambda = 0 and d0 = 1 is exactly the Gaussian sequence model with sigma2 = 1/d0
        p = int(overlay.get("p", 500))
        bundle = build_gaussian_sequence(p, 1.0 / d0)
        _, q = make_q("uniform", p)
        mc_rows = []
        for j, truth in enumerate(truths):
            k = asym.AsymptoticConstants.from_moments(moments[truth], 0.0, alpha)
            tc = TruthConfig.from_config({"kind": "iid", "mu_star": truth,
                                          "sigma2_true": 1.0 / d0})
            spec = CoverageSpec(bundle, prior, tc, q, alpha, 0.0, ("exact",),
                                {"exact": k.coverage_limit})
            rep = coverage_mc(spec, int(overlay.get("n_reps", 2000)), seed + 7919 * j, threads)
            r = rep["exact"]
            mc_rows.append([truth, 0.0, r.estimate, r.wilson_lo, r.wilson_hi, r.theory, r.n_reps])
        out["figure1_mc.csv"] = (["truth", "lambda", "mc_coverage", "wilson_lo", "wilson_hi",
                                  "theory", "n_reps"], mc_rows)
    return out


def _posterior_setup(cfg, seed):
    bundle = build_design(cfg["design"], seed)
    prior = prior_from_config(cfg["prior"])
    truth = _truth(cfg)
    rng = rng_for(seed, 2)
    beta = draw_truth(truth, bundle.p, rng)
    y = generate_y(bundle, beta, rng, truth.sigma2_true)
    c = posterior_field(bundle, y).c
    bank = SiteBank.from_prior(prior, bundle.d)
    sol = solve_fixed_point(bank, bundle.A, c)
    return bundle, prior, beta, c, bank, sol


def _chain(cfg, bank, bundle, c, sol, seed):
    ccfg = ChainConfig.from_config({**cfg["chain"], "seed": int(seed)})
    return run_chain(bank, bundle.A, c, ccfg, init=sol.u)


def run_clt(cfg: dict, seed: int, threads: int = 1) -> dict:
    """KS distance of standardized ``q^T beta`` draws under three centerings."""
    if cfg["experiment"] == "clt_whitenoise":
        n, p = int(cfg["design"].get("n", 0)), int(cfg["design"]["p"])
        if n and p >= n ** (2.0 / 3.0):
            warnings.warn("p >= n^(2/3): outside the white-noise CLT regime",
                          RuntimeWarning, stacklevel=2)
    bundle, _, _, c, bank, sol = _posterior_setup(cfg, seed)
    samples = _chain(cfg, bank, bundle, c, sol, rng_for(seed, 3).integers(2**31))
    d1 = bank.mean(c)
    threshold = float(cfg.get("ks_threshold", 0.03))
    rows = []
    for label, q in _q_list(cfg, bundle.p):
        lam = float(cfg.get("lambda_p", q @ bundle.A @ q))
        ups = upsilon_p(q, bank, c)
        t = samples.draws @ q
        var_lam = ups / (1.0 - lam * ups)
        centres = [("mf", float(q @ sol.u), var_lam),
                   ("psi_c", float(q @ d1), ups),
                   ("psi_c_general", float(q @ d1) / (1.0 - lam * ups), var_lam)]
        for name, centre, var in centres:
            ks = ks_distance((t - centre) / math.sqrt(var), (0.0, 1.0))
            rows.append([label, name, lam, ups, centre, var, float(t.mean()), ks, t.size,
                         int(ks < threshold)])
    header = ["q", "centering", "lambda_p", "upsilon_p", "center", "ref_var", "gibbs_mean",
              "ks", "n_draws", "pass"]
    return {f"{cfg['experiment']}.csv": (header, rows)}


def run_variance_order(cfg: dict, seed: int, threads: int = 1) -> dict:
    """Gibbs variance of ``q^T beta`` over ``upsilon_p`` against ``1/(1 - lambda upsilon_p)``."""
    if cfg["design"].get("kind") != "anova":
        raise ValueError("variance_order needs the ANOVA design")
    if "q" not in cfg or cfg["q"] == DEFAULTS["q"]:
        cfg = {**cfg, "q": ["uniform", "contrast", "alternating"]}
    bundle, _, _, c, bank, sol = _posterior_setup(cfg, seed)
    samples = _chain(cfg, bank, bundle, c, sol, rng_for(seed, 3).integers(2**31))
    rows = []
    for label, q in _q_list(cfg, bundle.p):
        lam = float(q @ bundle.A @ q)
        ups = upsilon_p(q, bank, c)
        t = samples.draws @ q
        var = float(t.var(ddof=1))
        var_se, _ = batch_means_se((t - t.mean()) ** 2)
        theory = 1.0 / (1.0 - lam * ups)
        ratio = var / ups
        ratio_se = var_se / ups
        rows.append([label, lam, var, var_se, ups, ratio, ratio_se, theory,
                     (ratio - theory) / ratio_se])
    return {"variance_order.csv": (["q", "lambda", "gibbs_var", "gibbs_var_se", "upsilon_p",
                                    "ratio", "ratio_se", "theory_ratio", "z"], rows)}


def run_coverage(cfg: dict, seed: int, threads: int = 1) -> dict:
    bundle = build_design(cfg["design"], seed)
    prior = prior_from_config(cfg["prior"])
    truth = _truth(cfg)
    alpha = float(cfg["alpha"])
    rows = []
    for j, (label, q) in enumerate(_q_list(cfg, bundle.p)):
        lam = float(cfg.get("lambda_p", q @ bundle.A @ q))
        theory = {}
        if truth.kind == "iid":
            k = asym.constants(prior, truth.mu_star, bundle.d0, lam, alpha)
            theory = {"exact": k.coverage_limit, "nmf": k.nmf_coverage_limit}
        spec = CoverageSpec(bundle, prior, truth, q, alpha, lam,
                            tuple(cfg.get("intervals", ("exact", "nmf"))), theory)
        reports = coverage_mc(spec, int(cfg.get("n_reps", 2000)), seed + 104729 * j, threads)
        for r in reports.values():
            rows.append([label, lam, r.kind, r.n_reps, r.hits, r.estimate, r.wilson_lo,
                         r.wilson_hi, r.theory, r.n_failed])
    return {"coverage_mc.csv": (["q", "lambda_p", "interval", "n_reps", "hits", "estimate",
                                 "wilson_lo", "wilson_hi", "theory", "n_failed"], rows)}


def sparse_regime(u: float, q: np.ndarray, centred_slab: bool) -> str:
    """Case ``a`` (null), ``b`` (finite shift) or ``c`` (divergent) for this ``(u, q)``.

    A delocalized non-contrast ``q`` has ``q_tot`` of order ``sqrt(p)``, so
    ``p^-u q_tot`` vanishes for ``u > 1/2`` and diverges for ``u < 1/2``.
    """
    qtot = float(q.sum())
    if centred_slab or u > 0.5 or abs(qtot) < 1e-12:
        return "a"
    if u < 0.5 and abs(qtot) > 0.5 * math.sqrt(q.size):
        return "c"
    return "b"


def run_sparse_threshold(cfg: dict, seed: int, threads: int = 1) -> dict:
    dcfg = {**cfg["design"], "kind": "white_noise"}
    bundle = build_design(dcfg, seed)
    prior = prior_from_config(cfg.get("prior", "spike_slab_base"))
    tcfg = cfg["truth"] if isinstance(cfg["truth"], dict) else {}
    truth = TruthConfig.from_config({"kind": "spike_slab", "u": tcfg.get("u", 0.75),
                                     "slab": tcfg.get("slab", "rademacher"),
                                     "sigma2_true": tcfg.get("sigma2_true", bundle.sigma2)})
    n_reps = int(cfg.get("n_reps", 300))
    threshold = float(cfg.get("ks_threshold", 0.1))
    bank = SiteBank.from_prior(prior, bundle.d)
    site = asym.psi0_site(prior, 1.0 / bundle.effective_sigma2)
    seeds = np.random.SeedSequence([seed, 4]).spawn(n_reps)
    rows = []
    for label, q in _q_list(cfg, bundle.p):
        zeta = float(bundle.p ** (-truth.u) * q.sum())
        lim = asym.sparse_limit(site, truth.slab, bundle.effective_sigma2, zeta)
        regime = sparse_regime(truth.u, q, lim.case == "a")
        vals = np.empty(n_reps)
        for r, s in enumerate(seeds):
            rng = np.random.default_rng(s)
            beta = draw_truth(truth, bundle.p, rng)
            y = generate_y(bundle, beta, rng, truth.sigma2_true)
            c = posterior_field(bundle, y).c
            vals[r] = q @ solve_fixed_point(bank, bundle.A, c).u
        null_sd = math.sqrt(lim.var)
        mean_ref = 0.0 if regime == "a" else lim.mean
        if regime == "c":
            ks, ok = float("nan"), int(abs(vals.mean()) > 5 * null_sd)
        else:
            ks = ks_distance(vals, (mean_ref, lim.var))
            ok = int(ks < threshold)
        rows.append([label, truth.u, zeta, regime, mean_ref, lim.var, float(vals.mean()),
                     float(vals.var(ddof=1)), ks, n_reps, ok])
    header = ["q", "u", "zeta_p", "case", "limit_mean", "limit_var", "mc_mean", "mc_var", "ks",
              "n_reps", "pass"]
    return {"sparse_threshold.csv": (header, rows)}


def run_diagnose(cfg: dict, seed: int, threads: int = 1) -> dict:
    bundle = build_design(cfg["design"], seed)
    rho = float(cfg.get("rho", 0.99))
    diag = diagnostics(bundle)
    checks = assumption_checks(diag, bundle.p, rho)
    _, q = make_q(cfg["q"], bundle.p)
    prior = prior_from_config(cfg["prior"])
    if "y_path" in cfg:
        y = np.loadtxt(cfg["y_path"], delimiter=",", ndmin=1).ravel()
    else:
        truth = _truth(cfg)
        rng = rng_for(seed, 2)
        y = generate_y(bundle, draw_truth(truth, bundle.p, rng), rng, truth.sigma2_true)
    c = posterior_field(bundle, y).c
    lam = float(cfg.get("lambda_p", q @ bundle.A @ q))
    be = berry_esseen_terms(SiteBank.from_prior(prior, bundle.d), bundle.A, c, q, lam)
    rows = [[ch.name, ch.status, ch.value, ch.threshold, ch.note] for ch in checks]
    rows += [[f"design.{k}", "info", v, "", ""] for k, v in diag.as_dict().items()
             if k != "warning"]
    rows += [[f"berry_esseen.{k}", "info", v, "", ""] for k, v in be.as_dict().items()]
    rows.append(["lambda_p", "info", lam, "", ""])
    out = {"diagnose.csv": (["item", "status", "value", "threshold", "note"], rows)}
    return out, any(ch.status == "fail" for ch in checks)


RUNNERS = {
    "figure1": run_figure1,
    "clt_whitenoise": run_clt,
    "clt_general": run_clt,
    "coverage_mc": run_coverage,
    "variance_order": run_variance_order,
    "sparse_threshold": run_sparse_threshold,
    "diagnose": run_diagnose,
}


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def render_csv(header, rows, cfg_hash: str, seed: int) -> str:
    buf = io.StringIO()
    buf.write(f"# config_sha256={cfg_hash} seed={seed}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def run_experiment(cfg: dict, seed: int = 0, out_dir=None, threads: int = 1) -> tuple[dict, bool]:
    """Run one experiment; write CSVs and ``run.json`` when ``out_dir`` is given.

    Returns ``({filename: csv_text}, failed)`` where ``failed`` is only set by
    ``diagnose``.
    """
    cfg = resolve_config(cfg)
    res = RUNNERS[cfg["experiment"]](cfg, seed, threads)
    failed = False
    if isinstance(res, tuple):
        res, failed = res
    h = config_hash(cfg)
    texts = {name: render_csv(head, rows, h, seed) for name, (head, rows) in res.items()}
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, text in texts.items():
            (out / name).write_text(text)
        (out / "run.json").write_text(json.dumps({"config": cfg, "seed": seed,
                                                  "config_sha256": h}, indent=2,
                                                 sort_keys=True, default=str) + "\n")
    return texts, failed
