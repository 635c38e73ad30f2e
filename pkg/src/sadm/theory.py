"""Numerical checks of the joint two-sample diffusion view of the structural loss.

Pairs ``y = (x_i, x_j)`` diffuse jointly; a noisy relation
``R = rel(x_i, x_j) + gamma * eps`` is attached to each pair. Everything here
works on analytically tractable toy data (1D Gaussians and Gaussian
mixtures) so that scores and posteriors have closed forms.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import ndtr

from .diffusion import NoiseSchedule
from .models import Encoder, embed
from .autodiff import no_grad
from .rng import make_stream
from .structure import Distance, Relation, affinity, relation_value, structural_distance

JENSEN_TIMES = (0.1, 0.5, 0.9)
JENSEN_GAMMAS = (0.1, 0.5)
JENSEN_RELATIONS = ("inner_product", "neg_l2")
JENSEN_DISTS = ("normal", "mixture2")


class QuadratureError(RuntimeError):
    pass


class MonteCarloError(RuntimeError):
    """Raised when the Monte Carlo error is too large relative to the estimate."""


@dataclass(frozen=True)
class Mixture1D:
    weights: tuple[float, ...]
    means: tuple[float, ...]
    stds: tuple[float, ...]

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        k = rng.choice(len(self.weights), size=n, p=np.asarray(self.weights))
        return np.asarray(self.means)[k] + np.asarray(self.stds)[k] * rng.standard_normal(n)

    def mean(self) -> float:
        return float(np.dot(self.weights, self.means))

    def var(self) -> float:
        w, m, s = map(np.asarray, (self.weights, self.means, self.stds))
        return float(np.dot(w, s**2 + m**2) - np.dot(w, m) ** 2)

    def posterior(self, xt: np.ndarray, a: float, s: float):
        """Mixture posterior of ``x0`` given ``x_t = a x0 + s eps``.

        Returns ``(resp, mean, std)`` with shapes ``(n, K)``, ``(n, K)``, ``(K,)``.
        """
        w, m, sd = map(np.asarray, (self.weights, self.means, self.stds))
        xt = np.asarray(xt, dtype=np.float64)[:, None]
        marg_var = a * a * sd**2 + s * s
        logp = np.log(w) - 0.5 * np.log(2 * np.pi * marg_var) - 0.5 * (xt - a * m) ** 2 / marg_var
        logp -= logp.max(axis=1, keepdims=True)
        resp = np.exp(logp)
        resp /= resp.sum(axis=1, keepdims=True)
        pvar = 1.0 / (1.0 / sd**2 + a * a / (s * s))
        pmean = pvar * (m / sd**2 + a * xt / (s * s))
        return resp, pmean, np.sqrt(pvar)


def toy_distribution(name: str) -> Mixture1D:
    if name == "normal":
        return Mixture1D((1.0,), (0.0,), (1.0,))
    if name == "mixture2":
        return Mixture1D((0.5, 0.5), (-1.0, 1.0), (0.5, 0.5))
    raise ValueError(f"unknown toy distribution {name!r}")


def rel_1d(xi, xj, rel: str) -> np.ndarray:
    if rel == "inner_product":
        return xi * xj
    if rel == "neg_l2":
        return -np.abs(xi - xj)
    raise ValueError(f"relation {rel!r} not supported on 1D pairs")


def gaussian_pdf(r, mean, gamma: float):
    return np.exp(-0.5 * ((r - mean) / gamma) ** 2) / (gamma * np.sqrt(2 * np.pi))


@dataclass
class CheckResult:
    name: str
    passed: bool
    values: dict = field(default_factory=dict)

    def line(self) -> str:
        vals = " ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}" for k, v in self.values.items())
        return f"{'PASS' if self.passed else 'FAIL'} {self.name} {vals}".rstrip()


def format_report(results: list[CheckResult]) -> str:
    lines = [r.line() for r in results]
    n_pass = sum(r.passed for r in results)
    lines.append(f"SUMMARY {n_pass}/{len(results)} passed")
    return "\n".join(lines)


# joint forward process ---------------------------------------------------------

def _pair_sampler(dist0: str, copies: bool):
    if dist0 == "eight_gaussians":
        from .datasets import DatasetSpec, eight_centers

        centers = eight_centers()
        sigma = DatasetSpec().sigma

        def draw(rng, n):
            return centers[rng.integers(0, 8, size=n)] + sigma * rng.standard_normal((n, 2))
    else:
        mix = toy_distribution(dist0)

        def draw(rng, n):
            return mix.sample(rng, n)[:, None]

    def pairs(rng, n):
        xi = draw(rng, n)
        xj = xi.copy() if copies else draw(rng, n)
        return xi, xj

    return pairs


def _mean_se(v: np.ndarray):
    return v.mean(axis=0), v.std(axis=0, ddof=1) / np.sqrt(len(v))


def _cov_se(u: np.ndarray, v: np.ndarray):
    prod = (u - u.mean(axis=0)) * (v - v.mean(axis=0))
    return _mean_se(prod)


def joint_forward_consistency(dist0: str = "normal", t: float = 0.5, n_mc: int = 20000, seed: int = 0,
                              copies: bool = False, schedule: NoiseSchedule | None = None) -> list[CheckResult]:
    """Compare the joint kernel ``N(a y0, s^2 I)`` with independent perturbation.

    Moments (means, variances, cross-covariance) of the two routes agree within
    3 standard errors, the cross-covariance matches ``a^2 Cov(x_i, x_j)`` and the
    joint noise has no cross-covariance between its halves.
    """
    if n_mc < 10_000:
        raise ValueError(f"n_mc must be >= 10000, got {n_mc}")
    schedule = schedule or NoiseSchedule()
    a, s = schedule.alpha(t), schedule.sigma(t)
    pairs = _pair_sampler(dist0, copies)
    rng_j, rng_i = make_stream(seed, "data"), make_stream(seed + 1, "data")
    noise_j, noise_i = make_stream(seed, "noise"), make_stream(seed + 1, "noise")

    xi, xj = pairs(rng_j, n_mc)
    y0 = np.concatenate([xi, xj], axis=1)
    eps = noise_j.standard_normal(y0.shape)
    yt = a * y0 + s * eps
    d = xi.shape[1]
    joint_i, joint_j = yt[:, :d], yt[:, d:]

    ui, uj = pairs(rng_i, n_mc)
    ind_i = a * ui + s * noise_i.standard_normal(ui.shape)
    ind_j = a * uj + s * noise_i.standard_normal(uj.shape)

    out = []
    tag = f"[{dist0},t={t},{'copies' if copies else 'independent'}]"
    for label, f in (("mean_i", lambda p, q: _mean_se(p)), ("mean_j", lambda p, q: _mean_se(q)),
                     ("var_i", lambda p, q: _cov_se(p, p)), ("var_j", lambda p, q: _cov_se(q, q)),
                     ("cov_ij", lambda p, q: _cov_se(p, q))):
        m1, se1 = f(joint_i, joint_j)
        m2, se2 = f(ind_i, ind_j)
        se = np.sqrt(se1**2 + se2**2)
        gap = np.abs(m1 - m2)
        out.append(CheckResult(f"joint_vs_independent.{label}{tag}", bool(np.all(gap <= 3 * se)),
                               {"max_gap": float(gap.max()), "se": float(se.max())}))

    # analytic cross-covariance: a^2 Cov(x_i, x_j)
    cov0 = np.mean((xi - xi.mean(0)) * (xj - xj.mean(0)), axis=0)
    cov_t, se_t = _cov_se(joint_i, joint_j)
    expected = a * a * (np.var(xi, axis=0) if copies else np.zeros(d))
    gap = np.abs(cov_t - expected)
    out.append(CheckResult(f"cross_cov_analytic{tag}", bool(np.all(gap <= 3 * se_t)),
                           {"estimate": float(cov_t[0]), "expected": float(expected[0]), "se": float(se_t.max()),
                            "sample_cov0": float(cov0[0])}))
    ncov, nse = _cov_se(eps[:, :d], eps[:, d:])
    out.append(CheckResult(f"noise_cross_cov{tag}", bool(np.all(np.abs(ncov) <= 3 * nse)),
                           {"estimate": float(np.abs(ncov).max()), "se": float(nse.max())}))
    return out


# score decomposition -------------------------------------------------------------

@dataclass(frozen=True)
class GaussianPair:
    """Product of two 1D Gaussians ``x_i ~ N(mu[0], var[0])``, ``x_j ~ N(mu[1], var[1])``."""

    mu: tuple[float, float] = (0.3, -0.5)
    var: tuple[float, float] = (1.0, 0.6)

    def marginal(self, a: float, s: float):
        mu, var = np.asarray(self.mu), np.asarray(self.var)
        return a * mu, a * a * var + s * s


def per_sample_score(x: float, mu: float, var: float, a: float, s: float) -> float:
    """Score of the 1D VP marginal of ``N(mu, var)`` data."""
    return -(x - a * mu) / (a * a * var + s * s)


def joint_score(pair: GaussianPair, yt: np.ndarray, a: float, s: float) -> np.ndarray:
    """``grad log q_t(y_t)`` from the full 2x2 marginal covariance."""
    mu, var = np.asarray(pair.mu), np.asarray(pair.var)
    cov = a * a * np.diag(var) + s * s * np.eye(2)
    return -np.linalg.solve(cov, np.asarray(yt) - a * mu)


def _std_normal_rule(nodes: int, half_width: float = 12.0):
    """Trapezoid rule for expectations under N(0, 1) on a uniform grid.

    Converges geometrically in the spacing for analytic, Gaussian-decaying
    integrands, unlike Gauss-Hermite when the integrand has complex poles
    close to the real axis (as ``x_i x_j`` relations produce).
    """
    z = np.linspace(-half_width, half_width, nodes)
    return z, (z[1] - z[0]) * np.exp(-0.5 * z * z) / np.sqrt(2 * np.pi)


def _log_joint_prior_quad(pair: GaussianPair, yt, r: float, gamma: float, a: float, s: float,
                          nodes: int) -> float:
    """``log q_t(y_t, R)`` for the inner-product relation, integrating over the prior of ``y0``.

    For fixed ``x_j`` the integrand is a product of three Gaussians in ``x_i``
    (prior, likelihood of ``y_t[0]``, relation density), integrated in closed
    form; ``x_j`` is integrated numerically over its prior.
    """
    z, w = _std_normal_rule(nodes)
    mu, v = pair.mu[0], pair.var[0]
    xj = pair.mu[1] + np.sqrt(pair.var[1]) * z
    prec = a * a / (s * s) + 1.0 / v + xj**2 / gamma**2
    lin = a * yt[0] / (s * s) + mu / v + r * xj / gamma**2
    const = yt[0] ** 2 / (s * s) + mu * mu / v + r * r / gamma**2
    inner = np.exp(-0.5 * (const - lin**2 / prec)) * np.sqrt(2 * np.pi / prec) / (
        (2 * np.pi) ** 1.5 * s * np.sqrt(v) * gamma)
    return float(np.log(np.sum(w * gaussian_pdf(yt[1], a * xj, s) * inner)))


def _posterior_nodes(pair: GaussianPair, yt, a: float, s: float, nodes: int):
    z, w = _std_normal_rule(nodes)
    out = []
    for k in range(2):
        pvar = 1.0 / (1.0 / pair.var[k] + a * a / (s * s))
        pmean = pvar * (pair.mu[k] / pair.var[k] + a * yt[k] / (s * s))
        out.append((pmean + np.sqrt(pvar) * z, pvar * a / (s * s)))
    return w, out


def log_relation_posterior(pair: GaussianPair, yt, r: float, gamma: float, a: float, s: float,
                           nodes: int = 801) -> float:
    """``log q_t(R | y_t)`` (inner-product relation) by 2D quadrature over the posterior of ``y0``."""
    w, ((xi, _), (xj, _)) = _posterior_nodes(pair, yt, a, s, nodes)
    g = gaussian_pdf(r, xi[:, None] * xj[None, :], gamma)
    return float(np.log(w @ g @ w))


def relation_posterior_grad(pair: GaussianPair, yt, r: float, gamma: float, a: float, s: float,
                            nodes: int = 801) -> np.ndarray:
    """Exact gradient in ``y_t`` of the quadrature ``log q_t(R | y_t)``."""
    w, ((xi, ci), (xj, cj)) = _posterior_nodes(pair, yt, a, s, nodes)
    m = xi[:, None] * xj[None, :]
    g = gaussian_pdf(r, m, gamma)
    dg = g * (r - m) / gamma**2
    q = w @ g @ w
    # posterior nodes shift with y_t at rate c = pvar * a / s^2
    gi = w @ (dg * xj[None, :]) @ w * ci
    gj = w @ (dg * xi[:, None]) @ w * cj
    return np.array([gi, gj]) / q


def _converged(f: Callable[[int], float], nodes: int, tol: float) -> float:
    # nested grids: 2n - 1 points halve the spacing
    v1, v2 = f(nodes), f(2 * nodes - 1)
    if not np.isfinite(v2) or abs(v1 - v2) > tol * max(1.0, abs(v2)):
        raise QuadratureError(f"quadrature did not converge: {v1!r} ({nodes} nodes) vs {v2!r} ({2 * nodes - 1} nodes)")
    return v2


def _central_diff(f: Callable[[np.ndarray], float], y: np.ndarray, h: float) -> np.ndarray:
    g = np.empty(len(y))
    for k in range(len(y)):
        e = np.zeros(len(y))
        e[k] = h
        g[k] = (f(y + e) - f(y - e)) / (2 * h)
    return g


@dataclass
class ScoreDecomposition:
    unconditional_error: float
    conditional_residual: float
    fd_errors: dict[float, float]
    fd_ratio: float


def score_decomposition_check(t: float = 0.5, yt=(0.4, -0.7), r: float = 0.2, gamma: float = 0.5,
                              pair: GaussianPair | None = None,
                              nodes: int = 401, h: float = 1e-3, schedule: NoiseSchedule | None = None,
                              quad_tol: float = 1e-10) -> ScoreDecomposition:
    """Bayes decomposition of the relation-conditioned joint score (inner-product relation).

    ``unconditional_error``: joint score from the 2x2 marginal vs the stacked
    per-sample scores. ``conditional_residual``: finite-difference gradient of
    ``log q_t(y_t, R)`` (prior quadrature) minus the analytic joint score,
    compared with the finite-difference gradient of ``log q_t(R | y_t)``
    (posterior quadrature). The log-normaliser ``log q_t(R)`` is constant in
    ``y_t`` and drops out of both. ``fd_errors`` track the central-difference
    error against the exact gradient of the posterior quadrature at steps
    ``8h, 4h, 2h``; ``fd_ratio`` is their mean successive ratio (about 4).
    """
    pair = pair or GaussianPair()
    schedule = schedule or NoiseSchedule()
    a, s = schedule.alpha(t), schedule.sigma(t)
    yt = np.asarray(yt, dtype=np.float64)

    stacked = np.array([per_sample_score(yt[k], pair.mu[k], pair.var[k], a, s) for k in range(2)])
    unconditional = float(np.max(np.abs(joint_score(pair, yt, a, s) - stacked)))

    def log_joint(y):
        return _converged(lambda n: _log_joint_prior_quad(pair, y, r, gamma, a, s, n), nodes, quad_tol)

    def log_post(y):
        return _converged(lambda n: log_relation_posterior(pair, y, r, gamma, a, s, n), nodes, quad_tol)

    residual = _central_diff(log_joint, yt, h) - stacked
    fd_post = _central_diff(log_post, yt, h)
    conditional = float(np.max(np.abs(residual - fd_post)))

    exact = relation_posterior_grad(pair, yt, r, gamma, a, s, 2 * nodes - 1)
    fd_errors = {}
    for step in (8 * h, 4 * h, 2 * h):
        fd_errors[step] = float(np.max(np.abs(_central_diff(log_post, yt, step) - exact)))
    errs = list(fd_errors.values())
    ratio = float(np.mean([errs[0] / errs[1], errs[1] / errs[2]]))
    return ScoreDecomposition(unconditional, conditional, fd_errors, ratio)


# Jensen chain --------------------------------------------------------------------

Denoiser1D = Callable[[np.ndarray, float, float], np.ndarray]


def unit_gaussian_denoiser(xt: np.ndarray, a: float, s: float) -> np.ndarray:
    """Posterior mean under a standard-normal prior: exact for N(0, 1) data only."""
    return a * xt / (a * a + s * s)


def zero_denoiser(xt: np.ndarray, a: float, s: float) -> np.ndarray:
    return np.zeros_like(xt)


def lipschitz_weight(grid: np.ndarray, gamma: float, n_mean: int = 4001) -> float:
    """``max_m sum_k (d/dm N(r_k; m, gamma^2))^2`` over a dense mean grid.

    This is the squared Lipschitz constant of ``m -> g(grid | m)`` in the
    Euclidean norm on the grid.
    """
    pad = 6 * gamma
    means = np.linspace(grid[0] - pad, grid[-1] + pad, n_mean)
    g = gaussian_pdf(grid[None, :], means[:, None], gamma)
    dg = g * (grid[None, :] - means[:, None]) / gamma**2
    # the maximum of a smooth function sampled densely; refine around the best node
    k = int(np.argmax((dg**2).sum(axis=1)))
    fine = np.linspace(means[max(k - 1, 0)], means[min(k + 1, n_mean - 1)], 201)
    g = gaussian_pdf(grid[None, :], fine[:, None], gamma)
    dg = g * (grid[None, :] - fine[:, None]) / gamma**2
    return float((dg**2).sum(axis=1).max())


@dataclass
class JensenResult:
    lhs: float
    mid: float
    rhs: float
    se_mid_lhs: float
    se_rhs_mid: float
    weight: float

    @property
    def passed(self) -> bool:
        return self.lhs <= self.mid and self.mid <= self.rhs + 3 * self.se_rhs_mid


def _half_line_gauss(r, mu, var, gamma):
    """``int_0^inf N(r; -u, gamma^2) N(u; mu, var) du`` in closed form."""
    tau2 = gamma**2 * var / (gamma**2 + var)
    c = tau2 * (-r / gamma**2 + mu / var)
    return gaussian_pdf(-r, mu, np.sqrt(gamma**2 + var)) * ndtr(c / np.sqrt(tau2))


def conditional_relation_density(mix: Mixture1D, ti: np.ndarray, tj: np.ndarray, a: float, s: float,
                                 grid: np.ndarray, gamma: float, rel: str, nodes: int = 81) -> np.ndarray:
    """``E[N(r_k; rel(x_i, x_j), gamma^2) | x_i,t, x_j,t]`` for every grid point ``r_k``.

    The posterior of each coordinate is a Gaussian mixture. For ``neg_l2`` the
    difference ``x_i - x_j`` is Gaussian per component pair and the
    expectation is closed form. For ``inner_product`` the ``x_i`` integral is
    closed form given ``x_j``, which is integrated numerically.
    """
    ri, mi, si = mix.posterior(ti, a, s)
    rj, mj, sj = mix.posterior(tj, a, s)
    n, k = ri.shape
    r = grid[None, :]
    out = np.zeros((n, len(grid)))
    if rel == "neg_l2":
        for p in range(k):
            for q in range(k):
                mu = (mi[:, p] - mj[:, q])[:, None]
                var = si[p] ** 2 + sj[q] ** 2
                # u = x_i - x_j; R = -|u| splits into u > 0 and u < 0 (mirror u -> -u)
                dens = _half_line_gauss(r, mu, var, gamma) + _half_line_gauss(r, -mu, var, gamma)
                out += (ri[:, p] * rj[:, q])[:, None] * dens
        return out
    if rel != "inner_product":
        raise ValueError(f"relation {rel!r} not supported on 1D pairs")
    z, w = _std_normal_rule(nodes, 8.0)
    for p in range(k):
        for q in range(k):
            pw = ri[:, p] * rj[:, q]
            # component pairs with negligible posterior mass contribute nothing at float precision
            rows = np.flatnonzero(pw > 1e-18)
            xj = mj[rows, q, None] + sj[q] * z[None, :]
            mean = (xj * mi[rows, p, None])[:, :, None]
            sd = np.sqrt(gamma**2 + xj**2 * si[p] ** 2)[:, :, None]
            dens = np.einsum("q,nqk->nk", w, gaussian_pdf(r[:, None, :], mean, sd))
            out[rows] += pw[rows, None] * dens
    return out


def jensen_bound_check(dist0: str = "normal", t: float = 0.5, gamma: float = 0.5, rel: str = "inner_product",
                       n_mc: int = 2000, seed: int = 0, denoiser: Denoiser1D = unit_gaussian_denoiser,
                       grid_points: int = 64, nodes: int = 81, schedule: NoiseSchedule | None = None,
                       max_rel_se: float = 0.1) -> JensenResult:
    """Estimate the three terms of the Jensen / Lipschitz chain for the relation density.

    ``g(R | y0)`` is the Gaussian density ``N(R; rel(x_i, x_j), gamma^2)``
    sampled on a fixed grid of R values, so norms are finite-dimensional.

    * ``lhs = E_yt || E[g | y_t] - g(R | y_hat) ||^2`` with the inner
      conditional expectation from the exact posterior
      (:func:`conditional_relation_density`);
    * ``mid = E_{y0, yt} || g(R | y0) - g(R | y_hat) ||^2`` by Monte Carlo;
    * ``rhs = w(gamma) E | rel(y0) - rel(y_hat) |^2`` by Monte Carlo.

    Standard errors are for the paired differences ``mid - lhs`` and
    ``rhs - mid`` over the same draws.
    """
    schedule = schedule or NoiseSchedule()
    a, s = schedule.alpha(t), schedule.sigma(t)
    mix = toy_distribution(dist0)
    rng = make_stream(seed, "data")
    noise = make_stream(seed, "noise")

    xi, xj = mix.sample(rng, n_mc), mix.sample(rng, n_mc)
    ti = a * xi + s * noise.standard_normal(n_mc)
    tj = a * xj + s * noise.standard_normal(n_mc)
    hi, hj = denoiser(ti, a, s), denoiser(tj, a, s)
    r_true, r_hat = rel_1d(xi, xj, rel), rel_1d(hi, hj, rel)

    lo = min(r_true.min(), r_hat.min()) - 4 * gamma
    hi_r = max(r_true.max(), r_hat.max()) + 4 * gamma
    grid = np.linspace(lo, hi_r, grid_points)
    weight = lipschitz_weight(grid, gamma)

    g_true = gaussian_pdf(grid[None, :], r_true[:, None], gamma)
    g_hat = gaussian_pdf(grid[None, :], r_hat[:, None], gamma)
    mid_n = ((g_true - g_hat) ** 2).sum(axis=1)
    rhs_n = weight * (r_true - r_hat) ** 2

    cond = conditional_relation_density(mix, ti, tj, a, s, grid, gamma, rel, nodes)
    lhs_n = ((cond - g_hat) ** 2).sum(axis=1)

    d1, d2 = mid_n - lhs_n, rhs_n - mid_n
    mid = float(mid_n.mean())
    res = JensenResult(float(lhs_n.mean()), mid, float(rhs_n.mean()),
                       float(d1.std(ddof=1) / np.sqrt(n_mc)), float(d2.std(ddof=1) / np.sqrt(n_mc)), weight)
    se_mid = float(mid_n.std(ddof=1) / np.sqrt(n_mc))
    if mid > 1e-12 and se_mid > max_rel_se * mid:
        raise MonteCarloError(f"standard error {se_mid:.3g} exceeds {max_rel_se:.0%} of mid={mid:.3g}; raise n_mc")
    return res


def jensen_grid(n_seeds: int = 20, n_mc: int = 2000, denoiser: Denoiser1D = unit_gaussian_denoiser,
                schedule: NoiseSchedule | None = None) -> list[CheckResult]:
    """All 24 (distribution, t, gamma, relation) configurations, each over ``n_seeds`` seeds."""
    out = []
    for dist0 in JENSEN_DISTS:
        for t in JENSEN_TIMES:
            for gamma in JENSEN_GAMMAS:
                for rel in JENSEN_RELATIONS:
                    trials = [jensen_bound_check(dist0, t, gamma, rel, n_mc, seed, denoiser, schedule=schedule)
                              for seed in range(n_seeds)]
                    ok = sum(tr.passed for tr in trials)
                    out.append(CheckResult(
                        f"jensen[{dist0},t={t},gamma={gamma},{rel}]", ok == n_seeds,
                        {"seeds_ok": f"{ok}/{n_seeds}",
                         "lhs": float(np.mean([tr.lhs for tr in trials])),
                         "mid": float(np.mean([tr.mid for tr in trials])),
                         "rhs": float(np.mean([tr.rhs for tr in trials])),
                         "max_se": float(max(max(tr.se_mid_lhs, tr.se_rhs_mid) for tr in trials))}))
    return out


# batch objective vs pairwise objective --------------------------------------------

def objective_equivalence_check(x0, x0_hat, enc: Encoder, rel: Relation | str = Relation.COSINE,
                                dist: Distance | str = Distance.L2_SQ) -> float:
    """Abs difference between the affinity-matrix distance and the mean pairwise term.

    The pairwise side embeds one sample at a time and evaluates the relation
    on scalar pairs over all ``n^2`` ordered pairs.
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    x0_hat = np.atleast_2d(np.asarray(x0_hat, dtype=np.float64))
    dist = Distance(dist)
    with no_grad():
        batch = structural_distance(affinity(embed(enc, x0), rel), affinity(embed(enc, x0_hat), rel), dist).item()
        e = [embed(enc, x0[i:i + 1]).numpy()[0] for i in range(len(x0))]
        f = [embed(enc, x0_hat[i:i + 1]).numpy()[0] for i in range(len(x0))]
    n = len(x0)
    total = 0.0
    for i in range(n):
        for j in range(n):
            diff = relation_value(e[i], e[j], rel) - relation_value(f[i], f[j], rel)
            total += diff * diff if dist is Distance.L2_SQ else abs(diff)
    return abs(batch - total / (n * n))


def relation_density_mass(mean: float, gamma: float, n: int = 20001) -> float:
    """Trapezoid integral of ``N(r; mean, gamma^2)`` over ``mean +- 12 gamma``."""
    r = np.linspace(mean - 12 * gamma, mean + 12 * gamma, n)
    return float(np.trapezoid(gaussian_pdf(r, mean, gamma), r))


def run_all(n_seeds: int = 20, n_mc: int = 2000, seed: int = 0) -> list[CheckResult]:
    """Every theory check, in a fixed order."""
    out: list[CheckResult] = []
    for dist0 in ("normal", "mixture2"):
        out += joint_forward_consistency(dist0, 0.5, 20000, seed)
    out += joint_forward_consistency("normal", 0.5, 20000, seed, copies=True)
    for t in (0.5, 0.9):
        sd = score_decomposition_check(t)
        out.append(CheckResult(f"score_decomposition[t={t}]",
                               sd.unconditional_error < 1e-10 and sd.conditional_residual < 1e-4,
                               {"unconditional": sd.unconditional_error, "conditional": sd.conditional_residual,
                                "fd_ratio": sd.fd_ratio}))
    out += jensen_grid(n_seeds, n_mc)
    from .models import init_encoder

    rng = make_stream(seed, "eval")
    x0, xh = rng.standard_normal((5, 2)), rng.standard_normal((5, 2))
    enc = init_encoder(seed)
    for rel in Relation:
        err = objective_equivalence_check(x0, xh, enc, rel)
        out.append(CheckResult(f"objective_equivalence[{rel.value}]", err < 1e-10, {"abs_diff": err}))
    return out
