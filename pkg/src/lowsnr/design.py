"""Design matrices, the Gram decomposition Diag(d) - A, and assumption diagnostics."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

WHITE_NOISE_DISTS = ("gaussian", "rademacher", "uniform_scaled")


@dataclass(frozen=True, eq=False)
class DesignBundle:
    """Design matrix plus the decomposition ``gamma X^T X / sigma2 = Diag(d) - A``.

    ``kind`` is one of ``dense``, ``identity`` or ``anova``. The last two keep
    ``X`` implicit and use closed-form products.
    """

    kind: str
    n: int
    p: int
    sigma2: float
    gamma: float
    d: np.ndarray
    A: np.ndarray
    d0: float
    X: np.ndarray | None = None

    @property
    def effective_sigma2(self) -> float:
        return self.sigma2 / self.gamma

    @property
    def gram(self) -> np.ndarray:
        """``Sigma_p = Diag(d) - A``."""
        return np.diag(self.d) - self.A

    def x_matvec(self, beta: np.ndarray) -> np.ndarray:
        beta = np.asarray(beta, dtype=float)
        if beta.shape != (self.p,):
            raise ValueError(f"coefficient vector must have length {self.p}")
        if self.kind == "identity":
            return beta.copy()
        if self.kind == "anova":
            h = self.p // 2
            return ((beta[:h, None] + beta[None, h:]) / np.sqrt(self.p)).ravel()
        return self.X @ beta

    def xt_matvec(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if y.shape != (self.n,):
            raise ValueError(f"response must have length {self.n}")
        if self.kind == "identity":
            return y.copy()
        if self.kind == "anova":
            h = self.p // 2
            Y = y.reshape(h, h)
            return np.concatenate([Y.sum(axis=1), Y.sum(axis=0)]) / np.sqrt(self.p)
        return self.X.T @ y

    def dense_x(self) -> np.ndarray:
        if self.kind == "identity":
            return np.eye(self.p)
        if self.kind == "anova":
            return np.stack([self.x_matvec(e) for e in np.eye(self.p)], axis=1)
        return self.X


def _from_gram(kind, n, X, gram_raw, sigma2, gamma, d0) -> DesignBundle:
    if sigma2 <= 0 or gamma <= 0:
        raise ValueError("sigma2 and gamma must be positive")
    s2 = sigma2 / gamma
    gram = gram_raw / s2
    d = np.diag(gram).copy()
    if np.any(d <= 0):
        raise ValueError("design has a zero column (d_i must be positive)")
    A = -gram
    np.fill_diagonal(A, 0.0)
    A = 0.5 * (A + A.T)
    for a in (d, A):
        a.setflags(write=False)
    return DesignBundle(kind, n, gram.shape[0], float(sigma2), float(gamma), d, A,
                        float(d0 if d0 is not None else np.median(d)), X)


def build_gaussian_sequence(p: int, sigma2: float, gamma: float = 1.0) -> DesignBundle:
    """Identity design ``X = I_p``; no coupling and ``d_i = gamma / sigma2``."""
    if p < 1:
        raise ValueError("p must be >= 1")
    return _from_gram("identity", p, None, np.eye(p), sigma2, gamma, gamma / sigma2)


def build_anova(p: int, sigma2: float, gamma: float = 1.0) -> DesignBundle:
    """Two-way layout with ``p/2`` levels per factor, entries ``1/sqrt(p)``."""
    if p < 2 or p % 2:
        raise ValueError("ANOVA design needs an even p >= 2")
    h = p // 2
    gram = np.zeros((p, p))
    gram[:h, h:] = 1.0 / p
    gram[h:, :h] = 1.0 / p
    np.fill_diagonal(gram, h / p)
    return _from_gram("anova", h * h, None, gram, sigma2, gamma, gamma / (2 * sigma2))


def build_white_noise(n: int, p: int, dist_tag: str, sigma2: float,
                      rng: np.random.Generator, gamma: float = 1.0) -> DesignBundle:
    """Dense design with iid entries ``F / sqrt(n)``, ``F`` centred with unit variance."""
    if n < 1 or p < 1:
        raise ValueError("n and p must be positive")
    if dist_tag == "gaussian":
        F = rng.standard_normal((n, p))
    elif dist_tag == "rademacher":
        F = rng.choice(np.array([-1.0, 1.0]), size=(n, p))
    elif dist_tag == "uniform_scaled":
        F = rng.uniform(-np.sqrt(3.0), np.sqrt(3.0), size=(n, p))
    else:
        raise ValueError(f"dist_tag must be one of {WHITE_NOISE_DISTS}")
    X = F / np.sqrt(n)
    return _from_gram("dense", n, X, X.T @ X, sigma2, gamma, gamma / sigma2)


def build_from_matrix(X: np.ndarray, sigma2: float, gamma: float = 1.0,
                      d0: float | None = None) -> DesignBundle:
    """Wrap a user matrix; ``d0`` defaults to the median diagonal."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or not np.all(np.isfinite(X)):
        raise ValueError("X must be a finite 2-d array")
    return _from_gram("dense", X.shape[0], X, X.T @ X, sigma2, gamma, d0)


def read_matrix_csv(path: str | Path) -> np.ndarray:
    """Read a matrix stored as ``n,p`` on the first line then row-major rows."""
    with open(path) as fh:
        first = fh.readline().strip().split(",")
        try:
            n, p = (int(v) for v in first)
        except ValueError:
            raise ValueError(f"{path}: first line must be 'n,p'") from None
        try:
            X = np.loadtxt(fh, delimiter=",", ndmin=2)
        except ValueError as exc:
            raise ValueError(f"{path}: malformed matrix rows ({exc})") from None
    if X.shape != (n, p):
        raise ValueError(f"{path}: header says {n}x{p}, found {X.shape}")
    return X


def write_matrix_csv(path: str | Path, X: np.ndarray) -> None:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    with open(path, "w") as fh:
        fh.write(f"{X.shape[0]},{X.shape[1]}\n")
        np.savetxt(fh, X, delimiter=",", fmt="%.17g")


@dataclass(frozen=True)
class DesignDiagnostics:
    alpha_p: float
    norm2: float
    norm_inf: float
    norm4_lower: float
    norm4_upper: float
    d0: float
    homogeneity: float
    d_min_observed: float
    converged: bool = True
    warning: str = ""

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def spectral_norm(A: np.ndarray, max_iter: int = 500, tol: float = 1e-10,
                  seed: int = 0) -> tuple[float, np.ndarray, bool]:
    """Largest |eigenvalue| of symmetric ``A`` by power iteration.

    Tracks ``||A x||`` for unit ``x``, which converges even when ``+r`` and
    ``-r`` are both eigenvalues. Returns (estimate, vector, converged).
    """
    p = A.shape[0]
    x = np.random.default_rng(seed).standard_normal(p)
    x /= np.linalg.norm(x)
    est = 0.0
    for _ in range(max_iter):
        y = A @ x
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return 0.0, x, True
        if abs(ny - est) <= tol * max(ny, 1.0):
            return float(ny), x, True
        est = ny
        x = y / ny
    return float(est), x, False


def _l4_lower_bound(A: np.ndarray, starts, iters: int = 200) -> float:
    # Boyd's fixed-point iteration for the (4,4) operator norm
    best = 0.0
    for x in starts:
        x = x / np.linalg.norm(x, 4)
        val = 0.0
        for _ in range(iters):
            y = A @ x
            ny = np.linalg.norm(y, 4)
            if ny == 0.0:
                break
            val = max(val, ny)
            z = A.T @ (np.sign(y) * np.abs(y) ** 3)
            if not np.any(z):
                break
            x = np.sign(z) * np.abs(z) ** (1.0 / 3.0)
            x /= np.linalg.norm(x, 4)
        best = max(best, val)
    return float(best)


def diagnostics(bundle: DesignBundle, power_iters: int = 500,
                tol: float = 1e-10) -> DesignDiagnostics:
    """Norms of the coupling matrix and homogeneity of the diagonals."""
    A = bundle.A
    norm2, vec, ok = spectral_norm(A, power_iters, tol)
    norm_inf = float(np.abs(A).sum(axis=1).max())
    starts = [vec, np.ones(bundle.p), np.random.default_rng(1).standard_normal(bundle.p)]
    lower = _l4_lower_bound(A, starts)
    upper = min(norm_inf, float(np.sqrt(norm2 * norm_inf)))
    # a converged lower bound can only exceed the bracket through rounding
    upper = max(upper, lower, norm2)
    msg = "" if ok else f"power iteration did not converge in {power_iters} iterations"
    if msg:
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return DesignDiagnostics(
        alpha_p=float((A**2).sum(axis=1).max()),
        norm2=norm2,
        norm_inf=norm_inf,
        norm4_lower=lower,
        norm4_upper=upper,
        d0=bundle.d0,
        homogeneity=float(np.sum((bundle.d - bundle.d0) ** 2)),
        d_min_observed=float(bundle.d.min()),
        converged=ok,
        warning=msg,
    )


def eigenpair_residual(bundle_or_A, q: np.ndarray, lambda_p: float) -> tuple[float, float]:
    """Return ``(||A q - lambda_p q||_2, ||q||_inf)`` for a unit vector ``q``."""
    A = bundle_or_A.A if isinstance(bundle_or_A, DesignBundle) else np.asarray(bundle_or_A)
    q = np.asarray(q, dtype=float)
    if abs(np.linalg.norm(q) - 1.0) > 1e-10:
        raise ValueError("q must be a unit vector")
    return float(np.linalg.norm(A @ q - lambda_p * q)), float(np.abs(q).max())


def anova_eigvecs(p: int) -> tuple[np.ndarray, np.ndarray]:
    """The two exact ANOVA eigenvectors: all-ones and block contrast, unit length."""
    h = p // 2
    q1 = np.ones(p) / np.sqrt(p)
    q2 = np.concatenate([np.ones(h), -np.ones(h)]) / np.sqrt(p)
    return q1, q2
