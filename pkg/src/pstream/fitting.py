"""Parametric fits to sample-based distributions, plus the distance metric."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import distributions as dist
from .distributions import VAR_FLOOR, Gaussian1D, GaussianMixture, GaussianND, WeightedSamples
from .errors import InputError, ParameterError

EM_TOL = 1e-8
EM_ITER_MAX = 500
DISTANCE_POINTS = 4096


@dataclass
class FitReport:
    chosen_k: int
    criterion_scores: list = field(default_factory=list)  # [(k, score)]
    objective_value: float = 0.0
    iterations: int = 0
    criterion: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def _scalar(s: WeightedSamples) -> tuple[np.ndarray, np.ndarray]:
    if not isinstance(s, WeightedSamples):
        raise InputError("expected WeightedSamples")
    if s.values.ndim != 1:
        raise InputError("expected scalar samples")
    return np.asarray(s.values), np.asarray(s.weights)


def fit_gaussian_kl(s: WeightedSamples) -> Gaussian1D:
    """Closed-form minimizer of KL(samples || Gaussian): weighted mean and variance."""
    x, w = _scalar(s)
    mean = float(np.dot(w, x))
    var = float(np.dot(w, (x - mean) ** 2))
    return Gaussian1D(mean, max(var, VAR_FLOOR))


def fit_gaussian_nd(s: WeightedSamples) -> GaussianND:
    if not isinstance(s, WeightedSamples) or s.values.ndim != 2:
        raise InputError("fit_gaussian_nd needs vector samples (mixed dimensions are not representable)")
    x, w = np.asarray(s.values), np.asarray(s.weights)
    mean = w @ x
    centered = x - mean
    cov = (centered * w[:, None]).T @ centered
    cov = 0.5 * (cov + cov.T)
    vals, vecs = np.linalg.eigh(cov)
    cov = (vecs * np.maximum(vals, VAR_FLOOR)) @ vecs.T
    return GaussianND(mean, 0.5 * (cov + cov.T))


def fit_gaussian_nd_from_points(points, weights=None) -> GaussianND:
    pts = [np.asarray(p, dtype=float).reshape(-1) for p in points]
    if len({p.size for p in pts}) != 1:
        raise InputError("samples have mixed dimensions")
    w = None if weights is None else np.asarray(weights, dtype=float)
    return fit_gaussian_nd(WeightedSamples(np.vstack(pts), w))


def kl_objective(s: WeightedSamples, q: Gaussian1D) -> float:
    """sum_i w_i * log(w_i / q(x_i)); zero-weight terms contribute nothing."""
    x, w = _scalar(s)
    keep = w > 0
    x, w = x[keep], w[keep]
    log_q = -0.5 * (x - q.mean) ** 2 / q.var - 0.5 * math.log(2 * math.pi * q.var)
    return float(np.sum(w * (np.log(w) - log_q)))


# ---------------------------------------------------------------------------
# Weighted EM
# ---------------------------------------------------------------------------


def _component_logpdf(x, means, vars_):
    return -0.5 * ((x[:, None] - means) ** 2 / vars_ + np.log(2 * np.pi * vars_))


def _row_logsumexp(a: np.ndarray) -> np.ndarray:
    # scipy's logsumexp carries array-API dispatch overhead that dominates EM
    # on small sample sets; this is the plain max-shifted form.
    m = a.max(axis=1)
    m = np.where(np.isfinite(m), m, 0.0)
    return m + np.log(np.sum(np.exp(a - m[:, None]), axis=1))


def _weighted_nll(x, w, weights, means, vars_) -> float:
    comp = np.log(weights) + _component_logpdf(x, means, vars_)
    return float(-np.dot(w, _row_logsumexp(comp)))


def fit_gmm_em(s: WeightedSamples, k: int, *, tol: float = EM_TOL, iter_max: int = EM_ITER_MAX,
               trace: list | None = None, init: GaussianMixture | None = None) -> tuple[GaussianMixture, FitReport]:
    """EM for a k-component mixture on weighted samples.

    Deterministic: unless ``init`` is given, means start at the weighted
    quantiles (j - 0.5)/k and every component starts with the overall
    variance. The objective is the weighted negative log-likelihood; if
    ``trace`` is given it receives every iterate.
    """
    x, w = _scalar(s)
    if k < 1:
        raise ParameterError("k must be >= 1")
    distinct = np.unique(x).size
    if k > distinct:
        raise InputError(f"k={k} exceeds the {distinct} distinct sample values")
    if k == 1:
        g = fit_gaussian_kl(s)
        mix = GaussianMixture([1.0], [g.mean], [g.var])
        nll = _weighted_nll(x, w, mix.weights, mix.means, mix.vars)
        if trace is not None:
            trace.append(nll)
        return mix, FitReport(1, [], nll, 1)

    if init is not None:
        if init.k != k:
            raise ParameterError(f"init has {init.k} components, expected {k}")
        means, vars_, mix_w = init.means.copy(), init.vars.copy(), init.weights.copy()
    else:
        mean = float(np.dot(w, x))
        total_var = max(float(np.dot(w, (x - mean) ** 2)), VAR_FLOOR)
        means = dist.weighted_quantile(x, w, (np.arange(k) + 0.5) / k).astype(float)
        means = _separate_ties(means, np.unique(x))
        vars_ = np.full(k, total_var)
        mix_w = np.full(k, 1.0 / k)
    # Each pass evaluates the objective of the current iterate from the same
    # log-normalizer the E-step needs, then stops or takes an M-step.
    prev = math.inf
    it = 0
    for it in range(0, iter_max + 1):
        comp = np.log(mix_w) + _component_logpdf(x, means, vars_)
        lse = _row_logsumexp(comp)
        cur = float(-np.dot(w, lse))
        if trace is not None:
            trace.append(cur)
        if prev - cur < tol or it == iter_max:
            prev = cur
            break
        prev = cur
        resp = np.exp(comp - lse[:, None])
        rw = resp * w[:, None]
        nk = rw.sum(axis=0)
        alive = nk > 1e-300
        nk_safe = np.where(alive, nk, 1.0)
        new_means = np.where(alive, (rw * x[:, None]).sum(axis=0) / nk_safe, means)
        new_vars = np.where(alive, (rw * (x[:, None] - new_means) ** 2).sum(axis=0) / nk_safe, vars_)
        means = new_means
        vars_ = np.maximum(new_vars, VAR_FLOOR)
        mix_w = np.maximum(nk, 1e-300)
        mix_w = mix_w / mix_w.sum()
    keep = mix_w > 1e-12
    mix = GaussianMixture(mix_w[keep] / mix_w[keep].sum(), means[keep], vars_[keep])
    return mix, FitReport(k, [], prev, it)


def _separate_ties(means: np.ndarray, distinct: np.ndarray) -> np.ndarray:
    # Quantile seeds can coincide on repeated values; move duplicates to unused distinct values.
    out = means.copy()
    used = set()
    for j, m in enumerate(out):
        if m in used:
            free = [v for v in distinct if v not in used]
            out[j] = min(free, key=lambda v: abs(v - m))
        used.add(out[j])
    return out


def information_criteria(s: WeightedSamples, mix: GaussianMixture) -> tuple[float, float]:
    """(AIC, BIC) with n_eff = 1/sum(w^2) standing in for the sample count."""
    x, w = _scalar(s)
    n_eff = s.n_eff
    loglik = float(np.dot(w, mix.log_pdf(x))) * n_eff
    params = 3 * mix.k - 1
    return 2 * params - 2 * loglik, params * math.log(n_eff) - 2 * loglik


def select_k(s: WeightedSamples, k_max: int, criterion: str = "BIC") -> tuple[GaussianMixture, FitReport]:
    criterion = criterion.upper()
    if criterion not in ("AIC", "BIC"):
        raise ParameterError(f"criterion must be AIC or BIC, got {criterion!r}")
    if k_max < 1:
        raise ParameterError("k_max must be >= 1")
    x, _ = _scalar(s)
    k_max = min(k_max, np.unique(x).size)
    fits = []
    scores = []
    for k in range(1, k_max + 1):
        mix, rep = fit_gmm_em(s, k)
        aic, bic = information_criteria(s, mix)
        score = aic if criterion == "AIC" else bic
        fits.append((mix, rep))
        scores.append((k, score))
    best = min(range(len(scores)), key=lambda j: (scores[j][1], j))
    mix, rep = fits[best]
    return mix, FitReport(scores[best][0], scores, rep.objective_value, rep.iterations, criterion)


# ---------------------------------------------------------------------------
# Distance
# ---------------------------------------------------------------------------


def _cell_masses(d, edges: np.ndarray) -> np.ndarray:
    if isinstance(d, WeightedSamples):
        c = d.smooth_cdf(edges)
    else:
        c = dist.cdf_at(d, edges)
    return np.diff(np.asarray(c, dtype=float))


def variance_distance(a, b, n_points: int = DISTANCE_POINTS, edges: np.ndarray | None = None) -> float:
    """Total variation between two univariate distributions on a shared grid.

    Cell probabilities come from CDF differences, so point masses and grid
    densities are handled alike; sample sets are kernel-smoothed first. Pass
    ``edges`` to compare several distributions on one fixed grid.
    """
    for d in (a, b):
        if not dist.is_univariate(d):
            raise InputError("variance_distance needs univariate distributions")
    if edges is None:
        la, ha = dist.support(a)
        lb, hb = dist.support(b)
        if ha < lb or hb < la:
            return 1.0
        lo, hi = min(la, lb), max(ha, hb)
        if hi <= lo:
            return 0.0 if dist.moments(a) == dist.moments(b) else 1.0
        edges = np.linspace(lo, hi, n_points + 1)
    ma = _cell_masses(a, edges)
    mb = _cell_masses(b, edges)
    tv = 0.5 * float(np.sum(np.abs(ma - mb)))
    # Mass left outside the grid counts towards the distance too.
    tv += 0.5 * abs(ma.sum() - mb.sum())
    return min(max(tv, 0.0), 1.0)
