"""Longitudinal Poisson model with normal random effects.

Counts follow y_it ~ Poisson(exp(a_it + x_it' beta + z_it' u_i)) with
u_i ~ N(mu, Sigma). The variational fit approximates the joint of
(beta, u) by one Gaussian via fixed-point (non-conjugate message passing)
updates, which lack an ascent guarantee and are therefore damped.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .errors import ConfigError, EstimationError
from .modelapi import (
    Block,
    ModelKernel,
    ParamLayout,
    PosteriorDrawSet,
    SamplerConfig,
    VBResult,
)
from .statscore import (
    LOG_2PI,
    MvNormalParams,
    WishartParams,
    ln_multivariate_gamma,
    log_sum_exp,
    multivariate_digamma,
    safe_cholesky,
)

__all__ = [
    "LpmData",
    "LpmPrior",
    "lpm_vb",
    "lpm_loglik_integrated",
    "lpm_synthetic",
    "lpm_read_csv",
    "LpmKernel",
]


# ---------------------------------------------------------------------------
# data and prior
# ---------------------------------------------------------------------------

@dataclass
class LpmData:
    """Balanced count panel, subject-major rows.

    ``z`` holds the random-effect design per subject as an (N, T, m) array;
    the implied NT x Nm block-diagonal matrix is materialized on demand.
    ``offsets`` defaults to ln 8 for the first period and ln 2 afterwards.
    """

    y: np.ndarray
    x: np.ndarray
    z: np.ndarray
    num_subjects: int
    num_periods: int
    offsets: np.ndarray | None = None

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float).ravel()
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        self.z = np.asarray(self.z, dtype=float)
        nt = self.num_subjects * self.num_periods
        if self.y.size != nt or self.x.shape[0] != nt:
            raise ValueError("y and x must have N * T rows")
        if np.any(self.y < 0) or np.any(self.y != np.round(self.y)):
            raise ValueError("counts must be nonnegative integers")
        if self.z.shape[:2] != (self.num_subjects, self.num_periods):
            raise ValueError("z must have shape (N, T, m)")
        if self.offsets is None:
            self.offsets = default_offsets(self.num_subjects, self.num_periods)
        else:
            self.offsets = np.asarray(self.offsets, dtype=float).ravel()
            if self.offsets.size != nt:
                raise ValueError("offsets must have N * T entries")

    @property
    def k(self) -> int:
        return self.x.shape[1]

    @property
    def m(self) -> int:
        return self.z.shape[2]

    def design(self) -> np.ndarray:
        """The (NT, k + N m) matrix [X Z] with Z block-diagonal."""
        n, t, m = self.num_subjects, self.num_periods, self.m
        z_big = np.zeros((n * t, n * m))
        for i in range(n):
            z_big[i * t:(i + 1) * t, i * m:(i + 1) * m] = self.z[i]
        return np.hstack([self.x, z_big])


def default_offsets(num_subjects: int, num_periods: int) -> np.ndarray:
    """ln 8 at the baseline period, ln 2 for the follow-ups."""
    row = np.full(num_periods, math.log(2.0))
    row[0] = math.log(8.0)
    return np.tile(row, num_subjects)


@dataclass
class LpmPrior:
    beta0: np.ndarray
    Vbeta0: np.ndarray
    mu0: np.ndarray
    Vmu0: np.ndarray
    S0: np.ndarray
    nu0: float

    def __post_init__(self):
        self.beta0 = np.asarray(self.beta0, dtype=float).ravel()
        self.Vbeta0 = np.atleast_2d(np.asarray(self.Vbeta0, dtype=float))
        self.mu0 = np.asarray(self.mu0, dtype=float).ravel()
        self.Vmu0 = np.atleast_2d(np.asarray(self.Vmu0, dtype=float))
        self.S0 = np.atleast_2d(np.asarray(self.S0, dtype=float))
        safe_cholesky(self.Vbeta0)
        safe_cholesky(self.Vmu0)
        m = self.S0.shape[0]
        if not self.nu0 > m - 1:
            raise ValueError("Wishart dof must exceed m - 1")


# ---------------------------------------------------------------------------
# variational fit
# ---------------------------------------------------------------------------

def lpm_vb(prior: LpmPrior, data: LpmData, tol: float = 1e-6, max_iter: int = 500,
           damping: float = 0.5, grad_tol: float | None = None) -> VBResult:
    """Damped fixed-point fit of q(Gamma) q(mu) q(Sigma^-1), Gamma = (beta, u).

    Each sweep rebuilds the Gaussian factor's precision from the current
    Poisson curvature, takes a damped natural-gradient step on its mean, and
    refreshes the conjugate mu and Sigma factors. The bound can dip between
    sweeps (no ascent guarantee); five consecutive drops of more than one
    nat raise an error suggesting smaller damping. ``grad_tol`` additionally
    requires the Gaussian factor's fixed-point residual below the given norm
    (the bound increment alone cannot certify a small gradient).
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if not 0.0 < damping <= 1.0:
        raise ValueError("damping must be in (0, 1]")
    n, t, k, m = data.num_subjects, data.num_periods, data.k, data.m
    c_mat = data.design()
    dim = k + n * m
    v0_inv_beta = np.linalg.inv(prior.Vbeta0)
    v0_inv_mu = np.linalg.inv(prior.Vmu0)
    nu_q = prior.nu0 + n

    gamma_q = np.zeros(dim)
    prec_q = np.eye(dim)
    mu_q = prior.mu0.copy()
    v_mu = prior.Vmu0.copy()
    s_q = prior.S0 + n * np.eye(m)
    trace = []
    drops = 0
    converged = False
    for _ in range(max_iter):
        e_w = nu_q * np.linalg.inv(s_q)
        e_w = 0.5 * (e_w + e_w.T)
        prior_prec = np.zeros((dim, dim))
        prior_prec[:k, :k] = v0_inv_beta
        for i in range(n):
            sl = slice(k + i * m, k + (i + 1) * m)
            prior_prec[sl, sl] = e_w
        prior_mean = np.concatenate([prior.beta0, np.tile(mu_q, n)])

        v_gamma = np.linalg.inv(prec_q)
        v_gamma = 0.5 * (v_gamma + v_gamma.T)
        cv = c_mat @ v_gamma
        half_diag = 0.5 * np.einsum("ij,ij->i", cv, c_mat)
        w = np.exp(data.offsets + c_mat @ gamma_q + half_diag)
        prec_new = c_mat.T @ (w[:, None] * c_mat) + prior_prec
        prec_q = (1.0 - damping) * prec_q + damping * prec_new
        v_gamma = np.linalg.inv(prec_q)
        v_gamma = 0.5 * (v_gamma + v_gamma.T)
        grad = c_mat.T @ (data.y - w) - prior_prec @ (gamma_q - prior_mean)
        gamma_q = gamma_q + damping * (v_gamma @ grad)

        u_means = gamma_q[k:].reshape(n, m)
        u_covs = np.stack([v_gamma[k + i * m: k + (i + 1) * m,
                                   k + i * m: k + (i + 1) * m] for i in range(n)])
        v_mu = np.linalg.inv(v0_inv_mu + n * e_w)
        v_mu = 0.5 * (v_mu + v_mu.T)
        mu_q = v_mu @ (v0_inv_mu @ prior.mu0 + e_w @ u_means.sum(axis=0))
        dev = u_means - mu_q
        s_q = prior.S0 + n * v_mu + dev.T @ dev + u_covs.sum(axis=0)
        s_q = 0.5 * (s_q + s_q.T)

        trace.append(_elbo_lpm(prior, data, c_mat, gamma_q, v_gamma, mu_q, v_mu, s_q, nu_q))
        if len(trace) > 1:
            step = trace[-1] - trace[-2]
            if step < -1.0:
                drops += 1
                if drops >= 5:
                    raise EstimationError(
                        "variational bound diverging; retry with smaller damping")
            else:
                drops = 0
            if abs(step) < tol:
                if grad_tol is not None and _gamma_gradient_norm(
                        prior, data, c_mat, gamma_q, v_gamma, mu_q, s_q, nu_q) > grad_tol:
                    continue
                converged = True
                break
    if not converged:
        warnings.warn("Poisson-panel VB hit max_iter before the tolerance", stacklevel=2)

    layout = _lpm_layout(k, m)
    gauss_gamma = MvNormalParams(gamma_q, np.linalg.inv(prec_q))
    beta_marg = MvNormalParams(gamma_q[:k], gauss_gamma.cov[:k, :k])
    gauss_mu = MvNormalParams(mu_q, v_mu)
    wish = WishartParams(s_q, nu_q)

    def log_q(thetas):
        u = layout.unpack_batch(thetas)
        return (beta_marg.logpdf_batch(u["beta"]) + gauss_mu.logpdf_batch(u["mu"])
                + wish.logpdf_batch(u["sigma_inv"]))

    def sample(rng, size):
        return layout.pack_batch({
            "beta": beta_marg.sample(rng, size),
            "mu": gauss_mu.sample(rng, size),
            "sigma_inv": wish.sample(rng, size),
        })

    return VBResult(
        hyper={"gamma": gauss_gamma, "beta": beta_marg, "mu": gauss_mu,
               "sigma_inv": wish, "S": s_q, "nu": nu_q,
               "u_means": gamma_q[k:].reshape(n, m)},
        elbo_trace=np.asarray(trace),
        log_q=log_q,
        sample=sample,
        marginal_log_q={
            "beta": lambda v: beta_marg.logpdf_batch(np.atleast_2d(v)),
            "mu": lambda v: gauss_mu.logpdf_batch(np.atleast_2d(v)),
            "sigma_inv": lambda v: wish.logpdf_batch(v),
        },
        converged=converged,
    )


def _gamma_gradient_norm(prior, data, c_mat, gamma_q, v_gamma, mu_q, s_q, nu_q) -> float:
    n, k, m = data.num_subjects, data.k, data.m
    e_w = nu_q * np.linalg.inv(s_q)
    prior_prec = np.zeros_like(v_gamma)
    prior_prec[:k, :k] = np.linalg.inv(prior.Vbeta0)
    for i in range(n):
        sl = slice(k + i * m, k + (i + 1) * m)
        prior_prec[sl, sl] = e_w
    prior_mean = np.concatenate([prior.beta0, np.tile(mu_q, n)])
    half_diag = 0.5 * np.einsum("ij,ij->i", c_mat @ v_gamma, c_mat)
    w = np.exp(data.offsets + c_mat @ gamma_q + half_diag)
    grad = c_mat.T @ (data.y - w) - prior_prec @ (gamma_q - prior_mean)
    return float(np.linalg.norm(grad))


def lpm_vb_gradient_residual(prior: LpmPrior, data: LpmData, vb: VBResult) -> float:
    """Norm of the Gaussian-factor fixed-point condition at the fitted values."""
    c_mat = data.design()
    return _gamma_gradient_norm(prior, data, c_mat, vb.hyper["gamma"].mean,
                                vb.hyper["gamma"].cov, vb.hyper["mu"].mean,
                                vb.hyper["S"], vb.hyper["nu"])


def _elbo_lpm(prior, data, c_mat, gamma_q, v_gamma, mu_q, v_mu, s_q, nu_q) -> float:
    n, t, k, m = data.num_subjects, data.num_periods, data.k, data.m
    e_w = nu_q * np.linalg.inv(s_q)
    elog_det = multivariate_digamma(m, 0.5 * nu_q) + m * math.log(2.0) - _logdet(s_q)
    half_diag = 0.5 * np.einsum("ij,ij->i", c_mat @ v_gamma, c_mat)
    eta = data.offsets + c_mat @ gamma_q
    w = np.exp(eta + half_diag)
    val = float(-np.sum(w) + data.y @ eta - np.sum(gammaln(data.y + 1.0)))

    beta_q, v_beta = gamma_q[:k], v_gamma[:k, :k]
    dev_b = beta_q - prior.beta0
    v0_inv_beta = np.linalg.inv(prior.Vbeta0)
    val += (-0.5 * k * LOG_2PI - 0.5 * _logdet(prior.Vbeta0)
            - 0.5 * (dev_b @ v0_inv_beta @ dev_b + float(np.sum(v0_inv_beta * v_beta.T))))

    u_means = gamma_q[k:].reshape(n, m)
    u_covs = np.stack([v_gamma[k + i * m: k + (i + 1) * m, k + i * m: k + (i + 1) * m]
                       for i in range(n)])
    dev_u = u_means - mu_q
    quad_u = float(np.sum(e_w * (dev_u.T @ dev_u + u_covs.sum(axis=0) + n * v_mu).T))
    val += -0.5 * n * m * LOG_2PI + 0.5 * n * elog_det - 0.5 * quad_u

    dev_m = mu_q - prior.mu0
    v0_inv_mu = np.linalg.inv(prior.Vmu0)
    val += (-0.5 * m * LOG_2PI - 0.5 * _logdet(prior.Vmu0)
            - 0.5 * (dev_m @ v0_inv_mu @ dev_m + float(np.sum(v0_inv_mu * v_mu.T))))

    val += (0.5 * (prior.nu0 - m - 1.0) * elog_det - 0.5 * float(np.sum(prior.S0 * e_w.T))
            - 0.5 * prior.nu0 * m * math.log(2.0) + 0.5 * prior.nu0 * _logdet(prior.S0)
            - ln_multivariate_gamma(m, 0.5 * prior.nu0))

    dim = k + n * m
    val += 0.5 * dim * (LOG_2PI + 1.0) + 0.5 * _logdet(v_gamma)
    val += 0.5 * m * (LOG_2PI + 1.0) + 0.5 * _logdet(v_mu)
    val -= (0.5 * (nu_q - m - 1.0) * elog_det - 0.5 * nu_q * m
            - 0.5 * nu_q * m * math.log(2.0) + 0.5 * nu_q * _logdet(s_q)
            - ln_multivariate_gamma(m, 0.5 * nu_q))
    return float(val)


def _logdet(a) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(safe_cholesky(np.atleast_2d(a))))))


# ---------------------------------------------------------------------------
# integrated likelihood
# ---------------------------------------------------------------------------

_GH_CACHE: dict = {}


def _gh_nodes(order: int):
    if order not in _GH_CACHE:
        _GH_CACHE[order] = np.polynomial.hermite.hermgauss(order)
    return _GH_CACHE[order]


def lpm_loglik_integrated(beta, mu, sigma_inv, data: LpmData, nodes: int = 31):
    """ln p(y | beta, mu, Sigma) with the random effects integrated out by
    adaptive Gauss-Hermite centered at each subject's conditional mode.

    Supports m <= 2; batched over aligned (beta, mu, sigma_inv) draws.
    """
    if nodes < 21:
        raise ValueError("need at least 21 Gauss-Hermite nodes")
    if data.m > 2:
        raise ConfigError("integrated likelihood supports m <= 2")
    beta = np.atleast_2d(np.asarray(beta, dtype=float))
    mu = np.atleast_2d(np.asarray(mu, dtype=float))
    sigma_inv = np.asarray(sigma_inv, dtype=float)
    if sigma_inv.ndim == 2:
        sigma_inv = sigma_inv[None]
    s = beta.shape[0]
    n, t, m = data.num_subjects, data.num_periods, data.m
    eta0 = data.offsets[None, :] + beta @ data.x.T  # (s, NT)
    eta0 = eta0.reshape(s, n, t)
    y = data.y.reshape(n, t)
    log_y_fact = float(np.sum(gammaln(data.y + 1.0)))

    if m == 1:
        z = data.z[:, :, 0]  # (n, t)
        prec = sigma_inv[:, 0, 0]  # (s,)
        u = np.broadcast_to(mu[:, 0][:, None], (s, n)).copy()
        for _ in range(100):
            lam = np.exp(eta0 + z[None] * u[:, :, None])
            g1 = np.sum(z[None] * (y[None] - lam), axis=2) - prec[:, None] * (u - mu[:, [0]])
            g2 = -np.sum(z[None] ** 2 * lam, axis=2) - prec[:, None]
            step = g1 / g2
            u -= step
            if np.max(np.abs(step)) < 1e-10:
                break
        lam = np.exp(eta0 + z[None] * u[:, :, None])
        curv = np.sum(z[None] ** 2 * lam, axis=2) + prec[:, None]
        sd = 1.0 / np.sqrt(curv)
        xg, wg = _gh_nodes(nodes)
        # integrand in log space at shifted-scaled nodes
        pts = u[:, :, None] + math.sqrt(2.0) * sd[:, :, None] * xg[None, None, :]
        etas = eta0[:, :, None, :] + z[None, :, None, :] * pts[:, :, :, None]
        loglam = np.sum(y[None, :, None, :] * etas - np.exp(etas), axis=3)
        dev = pts - mu[:, 0][:, None, None]
        logprior = (-0.5 * LOG_2PI + 0.5 * np.log(prec)[:, None, None]
                    - 0.5 * prec[:, None, None] * dev * dev)
        logint = loglam + logprior + xg[None, None, :] ** 2 + np.log(wg)[None, None, :]
        per_subject = log_sum_exp(logint, axis=2) + 0.5 * math.log(2.0) + np.log(sd)
        return per_subject.sum(axis=1) - log_y_fact

    # m == 2: per-draw loop with vectorized subjects
    out = np.empty(s)
    xg, wg = _gh_nodes(nodes)
    grid_a, grid_b = np.meshgrid(xg, xg, indexing="ij")
    logw2 = (np.log(wg)[:, None] + np.log(wg)[None, :] + grid_a ** 2 + grid_b ** 2).ravel()
    grid = np.stack([grid_a.ravel(), grid_b.ravel()], axis=1)  # (nodes^2, 2)
    for si in range(s):
        w_mat = sigma_inv[si]
        sign, logdet_w = np.linalg.slogdet(w_mat)
        if sign <= 0:
            out[si] = -np.inf
            continue
        u = np.tile(mu[si], (n, 1))
        for _ in range(100):
            eta = eta0[si] + np.einsum("itm,im->it", data.z, u)
            lam = np.exp(eta)
            g1 = np.einsum("itm,it->im", data.z, y - lam) - (u - mu[si]) @ w_mat
            h = -np.einsum("itm,it,itl->iml", data.z, lam, data.z) - w_mat[None]
            step = np.linalg.solve(h, g1[:, :, None])[:, :, 0]
            u -= step
            if np.max(np.abs(step)) < 1e-10:
                break
        eta = eta0[si] + np.einsum("itm,im->it", data.z, u)
        lam = np.exp(eta)
        curv = np.einsum("itm,it,itl->iml", data.z, lam, data.z) + w_mat[None]
        chol_inv = np.linalg.cholesky(np.linalg.inv(curv))
        pts = u[:, None, :] + math.sqrt(2.0) * np.einsum("iml,gl->igm", chol_inv, grid)
        etas = eta0[si][:, None, :] + np.einsum("itm,igm->igt", data.z, pts)
        loglam = np.sum(y[:, None, :] * etas - np.exp(etas), axis=2)
        dev = pts - mu[si]
        quad = np.einsum("igm,ml,igl->ig", dev, w_mat, dev)
        logprior = -LOG_2PI + 0.5 * logdet_w - 0.5 * quad
        _, logdet_ci = np.linalg.slogdet(chol_inv)
        logint = loglam + logprior + logw2[None, :]
        per_subject = log_sum_exp(logint, axis=1) + math.log(2.0) + logdet_ci
        out[si] = per_subject.sum() - log_y_fact
    return out


# ---------------------------------------------------------------------------
# kernel
# ---------------------------------------------------------------------------

def _lpm_layout(k: int, m: int) -> ParamLayout:
    return ParamLayout([Block("beta", (k,)), Block("mu", (m,)),
                        Block("sigma_inv", (m, m), "spd")])


class LpmKernel(ModelKernel):
    """Poisson panel with the random effects integrated out numerically."""

    conditional_blocks = ["mu", "sigma_inv"]
    latent_block = "u"

    def __init__(self, prior: LpmPrior, data: LpmData, nodes: int = 31):
        if prior.beta0.size != data.k or prior.mu0.size != data.m:
            raise ConfigError("prior dimensions do not match the design")
        self.prior = prior
        self.data = data
        self.nodes = nodes
        self.layout = _lpm_layout(data.k, data.m)
        self.latent_layout = ParamLayout([Block("u", (data.num_subjects, data.m))])
        self._gauss_beta0 = MvNormalParams(prior.beta0, prior.Vbeta0)
        self._gauss_mu0 = MvNormalParams(prior.mu0, prior.Vmu0)
        self._wish0 = WishartParams(prior.S0, prior.nu0)

    def log_prior_batch(self, thetas):
        u = self.layout.unpack_batch(thetas)
        w = u["sigma_inv"]
        sign, _ = np.linalg.slogdet(w)
        out = (self._gauss_beta0.logpdf_batch(u["beta"])
               + self._gauss_mu0.logpdf_batch(u["mu"])
               + self._wish0.logpdf_batch(w))
        out[sign <= 0] = -np.inf
        return out

    def log_likelihood_batch(self, thetas):
        u = self.layout.unpack_batch(thetas)
        return lpm_loglik_integrated(u["beta"], u["mu"], u["sigma_inv"],
                                     self.data, nodes=self.nodes)

    # -- complete-data pieces used by the sampler -----------------------------

    def _poisson_loglik_given_u(self, beta, u_mat):
        d = self.data
        eta = (d.offsets + d.x @ beta
               + np.einsum("itm,im->it", d.z, u_mat).ravel())
        return float(d.y @ eta - np.sum(np.exp(eta)))

    def _poisson_loglik_per_subject(self, beta, u_mat):
        d = self.data
        eta = (d.offsets + d.x @ beta).reshape(d.num_subjects, d.num_periods) \
            + np.einsum("itm,im->it", d.z, u_mat)
        y = d.y.reshape(d.num_subjects, d.num_periods)
        return np.sum(y * eta - np.exp(eta), axis=1)

    def full_conditional(self, name, state):
        d, prior = self.data, self.prior
        n, m = d.num_subjects, d.m
        if name == "mu":
            w = np.atleast_2d(state["sigma_inv"])
            cov = np.linalg.inv(np.linalg.inv(prior.Vmu0) + n * w)
            cov = 0.5 * (cov + cov.T)
            u_sum = np.asarray(state["u"]).reshape(n, m).sum(axis=0)
            mean = cov @ (np.linalg.inv(prior.Vmu0) @ prior.mu0 + w @ u_sum)
            return MvNormalParams(mean, cov)
        if name == "sigma_inv":
            dev = np.asarray(state["u"]).reshape(n, m) - np.asarray(state["mu"])
            return WishartParams(prior.S0 + dev.T @ dev, prior.nu0 + n)
        raise KeyError(name)

    def posterior_sampler(self, config: SamplerConfig, rng, seed=None,
                          vb: VBResult | None = None) -> PosteriorDrawSet:
        """Random-walk Metropolis for beta and each u_i (proposals scaled from
        the variational covariance blocks, adaptation frozen after burn-in),
        conjugate draws for mu and Sigma^-1."""
        d, prior = self.data, self.prior
        n, t, k, m = d.num_subjects, d.num_periods, d.k, d.m
        if vb is None:
            vb = lpm_vb(prior, d)
        chol_beta = safe_cholesky(vb.hyper["beta"].cov)
        gamma_cov = vb.hyper["gamma"].cov
        u_chols = np.stack([safe_cholesky(gamma_cov[k + i * m: k + (i + 1) * m,
                                                    k + i * m: k + (i + 1) * m])
                            for i in range(n)])
        target_beta = 0.44 if k == 1 else 0.234
        target_u = 0.44 if m == 1 else 0.234

        state = {"beta": vb.hyper["beta"].mean.copy(),
                 "u": vb.hyper["u_means"].copy(),
                 "mu": vb.hyper["mu"].mean.copy(),
                 "sigma_inv": vb.hyper["nu"] * np.linalg.inv(vb.hyper["S"])}
        step_beta, step_u = 2.38 / math.sqrt(k), np.full(n, 2.38 / math.sqrt(m))
        accept_beta = accept_u = 0
        total = config.burn_in + config.draws * config.thin
        thetas = np.empty((config.draws, self.layout.dim))
        latents = np.empty((config.draws, n * m))
        kept = 0
        for it in range(total):
            adapt = it < config.burn_in
            # beta block
            prop = state["beta"] + step_beta * (chol_beta @ rng.standard_normal(k))
            cur_ll = self._poisson_loglik_given_u(state["beta"], state["u"])
            new_ll = self._poisson_loglik_given_u(prop, state["u"])
            delta = (new_ll - cur_ll
                     + self._gauss_beta0.logpdf(prop) - self._gauss_beta0.logpdf(state["beta"]))
            acc = math.log(rng.uniform()) <= delta
            if acc:
                state["beta"] = prop
            if adapt:
                step_beta = float(np.clip(step_beta * math.exp(
                    0.05 * ((1.0 if acc else 0.0) - target_beta)), 1e-3, 50.0))
            elif acc:
                accept_beta += 1
            # u blocks, all subjects at once
            noise = rng.standard_normal((n, m))
            prop_u = state["u"] + step_u[:, None] * np.einsum("iml,il->im", u_chols, noise)
            w_mat = np.atleast_2d(state["sigma_inv"])
            cur = self._poisson_loglik_per_subject(state["beta"], state["u"])
            new = self._poisson_loglik_per_subject(state["beta"], prop_u)
            dev_c = state["u"] - state["mu"]
            dev_p = prop_u - state["mu"]
            dprior = -0.5 * (np.einsum("im,ml,il->i", dev_p, w_mat, dev_p)
                             - np.einsum("im,ml,il->i", dev_c, w_mat, dev_c))
            acc_u = np.log(rng.uniform(size=n)) <= (new - cur + dprior)
            state["u"] = np.where(acc_u[:, None], prop_u, state["u"])
            if adapt:
                step_u = np.clip(step_u * np.exp(0.05 * (acc_u.astype(float) - target_u)),
                                 1e-3, 50.0)
            else:
                accept_u += float(np.mean(acc_u))
            # conjugate blocks
            state["mu"] = self.full_conditional("mu", state).sample(rng)
            state["sigma_inv"] = np.atleast_2d(self.full_conditional("sigma_inv", state).sample(rng))
            if it >= config.burn_in and (it - config.burn_in) % config.thin == 0:
                thetas[kept] = self.layout.pack(
                    {"beta": state["beta"], "mu": state["mu"], "sigma_inv": state["sigma_inv"]})
                latents[kept] = state["u"].ravel()
                kept += 1
        retained = total - config.burn_in
        for name, rate in [("beta", accept_beta / retained), ("u", accept_u / retained)]:
            if not 0.05 <= rate <= 0.95:
                warnings.warn(f"MH acceptance for {name} is {rate:.2f}", stacklevel=2)
        return PosteriorDrawSet(thetas, self.layout, seed=seed, burn_in=config.burn_in,
                                thin=config.thin, latents=latents,
                                latent_layout=self.latent_layout)

    def vb_fit(self, tol: float = 1e-6, max_iter: int = 500, damping: float = 0.5) -> VBResult:
        return lpm_vb(self.prior, self.data, tol=tol, max_iter=max_iter, damping=damping)


# ---------------------------------------------------------------------------
# synthetic data and CSV ingestion
# ---------------------------------------------------------------------------

def lpm_synthetic(seed, num_subjects: int, num_periods: int, k: int, m: int,
                  beta, mu, sigma) -> LpmData:
    """Simulate the count panel with the baseline/follow-up offset scheme."""
    from .statscore import make_rng

    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed)
    beta = np.asarray(beta, dtype=float).ravel()
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    if beta.size != k or mu.size != m or sigma.shape != (m, m):
        raise ValueError("parameter dimensions inconsistent with k, m")
    n, t = num_subjects, num_periods
    x = rng.standard_normal((n * t, k))
    z = np.ones((n, t, m))
    if m == 2:
        z[:, :, 1] = np.linspace(-1.0, 1.0, t)[None, :]
    elif m > 2:
        z[:, :, 1:] = rng.standard_normal((n, t, m - 1))
    chol = safe_cholesky(sigma + 1e-12 * np.eye(m))
    u = mu + rng.standard_normal((n, m)) @ chol.T
    offsets = default_offsets(n, t)
    eta = offsets + x @ beta + np.einsum("itm,im->it", z, u).ravel()
    y = rng.poisson(np.exp(eta))
    return LpmData(y, x, z, n, t)


def lpm_read_csv(path) -> LpmData:
    """Load a count panel: columns subject_id, period, count, covariates,
    with an optional trailing ``offset`` column."""
    import csv

    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    if header[:3] != ["subject_id", "period", "count"]:
        raise ConfigError(f"{path}: header must start with subject_id,period,count")
    has_offset = header[-1] == "offset"
    num_x = len(header) - 3 - (1 if has_offset else 0)
    records = {}
    for i, row in enumerate(rows):
        try:
            vals = [float(v) for v in row[2:]]
        except ValueError as exc:
            raise ConfigError(f"{path}: bad cell in row {i + 2}: {exc}") from exc
        records.setdefault(row[0], {})[row[1]] = vals
    subjects = sorted(records)
    periods = sorted({p for r in records.values() for p in r})
    t = len(periods)
    for s in subjects:
        if sorted(records[s]) != periods:
            raise ConfigError(f"{path}: unbalanced panel (subject {s})")
    n = len(subjects)
    y = np.empty(n * t)
    x = np.empty((n * t, max(num_x, 1)))
    offsets = np.empty(n * t) if has_offset else None
    for i, s in enumerate(subjects):
        for j, period in enumerate(periods):
            vals = records[s][period]
            y[i * t + j] = vals[0]
            xs = vals[1:1 + num_x] if num_x else [1.0]
            x[i * t + j] = xs
            if has_offset:
                offsets[i * t + j] = vals[-1]
    z = np.ones((n, t, 1))
    return LpmData(y, x, z, n, t, offsets=offsets)
