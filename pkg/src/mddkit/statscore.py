"""Distributions, special functions and log-space numerics.

Every density in the package is evaluated in natural logs; raw-space
densities are never formed because the estimator ratios underflow for
realistic sample sizes.

Wishart convention used everywhere: ``WishartParams(scale_inv=S, dof=nu)``
is the distribution of a precision matrix W with E[W] = nu * inv(S).
Equivalently, the conventional scale matrix is inv(S).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import gammainc, gammaln, log_ndtr, multigammaln, ndtri, psi

from .errors import NumericError

LOG_2PI = math.log(2.0 * math.pi)

__all__ = [
    "LOG_2PI",
    "log_sum_exp",
    "ln_multivariate_gamma",
    "multivariate_digamma",
    "inverse_mills",
    "ln_parabolic_cylinder_d",
    "chi_square_quantile",
    "quadrature_1d",
    "safe_cholesky",
    "MvNormalParams",
    "MatricNormalParams",
    "WishartParams",
    "GammaParams",
    "TruncNormalParams",
    "make_rng",
]


# ---------------------------------------------------------------------------
# scalar primitives
# ---------------------------------------------------------------------------

def log_sum_exp(values, axis=None):
    """ln sum(exp(values)) without overflow; -inf entries are harmless zeros.

    Raises ValueError on empty input.
    """
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("log_sum_exp of an empty vector")
    vmax = np.max(v, axis=axis, keepdims=True)
    vmax = np.where(np.isfinite(vmax), vmax, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(v - vmax), axis=axis)) + np.squeeze(vmax, axis=axis)
    if axis is None:
        return float(out)
    return out


def log_mean_exp(values, axis=None):
    """ln mean(exp(values)); companion of :func:`log_sum_exp`."""
    v = np.asarray(values, dtype=float)
    n = v.size if axis is None else v.shape[axis]
    return log_sum_exp(v, axis=axis) - math.log(n)


def ln_multivariate_gamma(dim: int, x: float) -> float:
    """ln Gamma_dim(x); requires x > (dim - 1) / 2."""
    if dim < 1:
        raise ValueError("dimension must be >= 1")
    if not x > (dim - 1) / 2.0:
        raise ValueError(f"ln_multivariate_gamma: x={x} at or below the pole (dim-1)/2")
    return float(multigammaln(x, dim))


def multivariate_digamma(dim: int, x: float) -> float:
    """d/dx ln Gamma_dim(x) = sum_j psi(x + (1 - j) / 2)."""
    j = np.arange(1, dim + 1)
    return float(np.sum(psi(x + (1.0 - j) / 2.0)))


def inverse_mills(x):
    """phi(x) / Phi(x) for finite real x.

    Moderate and positive arguments use exp(ln phi - ln Phi); deep negative
    arguments (x < -8) use the Laplace continued fraction for the Mills
    ratio, which stays accurate where the direct ratio is 0/0.
    """
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    out = np.empty_like(x)
    deep = x < -8.0
    xm = x[~deep]
    out[~deep] = np.exp(-0.5 * xm * xm - 0.5 * LOG_2PI - log_ndtr(xm))
    if np.any(deep):
        xd = x[deep]
        # m(x) = -x + 1/(-x + 2/(-x + 3/(-x + ...)))
        cf = np.zeros_like(xd)
        for k in range(40, 0, -1):
            cf = k / (-xd + cf)
        out[deep] = -xd + cf
    return float(out[0]) if scalar else out


def chi_square_quantile(dof: int, prob: float) -> float:
    """x such that P(chi2_dof <= x) = prob, solved to 1e-10.

    Root-find on the regularized lower incomplete gamma via bracketed
    bisection refined by Newton steps.
    """
    if dof < 1:
        raise ValueError("dof must be >= 1")
    if not 0.0 < prob < 1.0:
        raise ValueError("prob must lie strictly inside (0, 1)")
    a = dof / 2.0

    def cdf(x):
        return gammainc(a, x / 2.0)

    lo, hi = 0.0, max(4.0 * dof, 10.0)
    while cdf(hi) < prob:
        hi *= 2.0
    x = 0.5 * (lo + hi)
    for _ in range(200):
        f = cdf(x) - prob
        if f > 0:
            hi = x
        else:
            lo = x
        # Newton step from the pdf; fall back to bisection when it escapes.
        logpdf = (a - 1.0) * math.log(x / 2.0) - x / 2.0 - gammaln(a) - math.log(2.0)
        step = f / math.exp(logpdf)
        xn = x - step
        if not lo < xn < hi:
            xn = 0.5 * (lo + hi)
        if abs(xn - x) < 1e-12 * max(1.0, x):
            x = xn
            break
        x = xn
    if abs(cdf(x) - prob) > 1e-10:
        raise NumericError(f"chi_square_quantile did not reach 1e-10 (residual {cdf(x) - prob:.3e})")
    return float(x)


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------

_DE_CUTOFF = 5.0  # |s| beyond this puts nodes within ~1e-100 of the interval ends


def quadrature_1d(log_f, lower, upper, tol=1e-10, max_levels=20):
    """ln of the integral of exp(log_f) over (lower, upper).

    ``log_f`` must accept a vector of abscissae and return log-integrand
    values (-inf allowed); it only needs to be finite on the interior of
    the domain. An infinite upper limit is mapped onto (0, 1) through
    t = u / (1 - u); the unit-interval integral is then evaluated with a
    double-exponential (tanh-sinh) trapezoid whose step is halved per
    refinement level until two consecutive levels agree to ``tol``
    relative. Endpoint singularities integrable in the ordinary sense are
    handled by the node clustering of the transform.

    Raises NumericError carrying the achieved estimate when ``max_levels``
    refinements are exhausted.
    """
    lower = float(lower)
    infinite = np.isinf(upper)
    if not infinite:
        upper = float(upper)
        if not upper > lower:
            raise ValueError("upper must exceed lower")
        width = upper - lower

    def log_terms(h, odd_only):
        if odd_only:
            s_pos = np.arange(h, _DE_CUTOFF, 2.0 * h)
            s = np.concatenate((-s_pos[::-1], s_pos))
        else:
            s_pos = np.arange(h, _DE_CUTOFF, h)
            s = np.concatenate((-s_pos[::-1], [0.0], s_pos))
        x2 = math.pi * np.sinh(s)  # 2 * x
        log_u = -np.logaddexp(0.0, -x2)
        log_1mu = -np.logaddexp(0.0, x2)
        log_jac = math.log(math.pi) + np.log(np.cosh(s)) + log_u + log_1mu
        if infinite:
            t = lower + np.exp(log_u - log_1mu)
            log_j = log_jac - 2.0 * log_1mu
            good = t > lower
        else:
            t = lower + width * np.exp(log_u)
            log_j = log_jac + math.log(width)
            good = (t > lower) & (t < upper)
        vals = np.full(t.shape, -np.inf)
        if np.any(good):
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                fv = np.asarray(log_f(t[good]), dtype=float)
            fv = np.where(np.isnan(fv), -np.inf, fv)
            vals[good] = fv + log_j[good]
        return vals + math.log(h)

    h = 0.25
    terms = log_terms(h, odd_only=False)
    total = log_sum_exp(terms) if np.any(np.isfinite(terms)) else -np.inf
    for _ in range(max_levels):
        h *= 0.5
        new = log_terms(h, odd_only=True)
        parts = np.concatenate((new, np.atleast_1d(total + math.log(0.5))))
        cur = log_sum_exp(parts) if np.any(np.isfinite(parts)) else -np.inf
        if np.isfinite(cur) and np.isfinite(total) and abs(cur - total) <= tol * max(1.0, abs(cur)):
            return cur
        total = cur
    if total == -np.inf:
        # nothing finite found at any refinement level: the integrand is zero
        return -np.inf
    raise NumericError(f"quadrature_1d did not converge; achieved estimate {total!r}")


def ln_parabolic_cylinder_d(order: float, x: float, tol=1e-12) -> float:
    """ln D_{-order}(x) for order >= 0 through the integral representation.

    D_{-v}(x) = exp(-x^2/4) / Gamma(v) * int_0^inf t^(v-1) exp(-t^2/2 - x t) dt
    for v > 0; v = 0 short-circuits to ln D_0(x) = -x^2/4.
    """
    v = float(order)
    if v < 0:
        raise ValueError("order must be >= 0 (this computes D_{-order})")
    if v == 0.0:
        return -x * x / 4.0

    def log_integrand(t):
        t = np.asarray(t, dtype=float)
        out = np.full_like(t, -np.inf)
        pos = t > 0.0
        tp = t[pos]
        out[pos] = (v - 1.0) * np.log(tp) - 0.5 * tp * tp - x * tp
        return out

    log_int = quadrature_1d(log_integrand, 0.0, np.inf, tol=tol)
    return -x * x / 4.0 - float(gammaln(v)) + log_int


# ---------------------------------------------------------------------------
# linear algebra helpers
# ---------------------------------------------------------------------------

def safe_cholesky(a: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor with one jittered retry.

    Retry adds 1e-10 * trace/n to the diagonal; a second failure raises
    NumericError rather than looping (silent jitter masks model bugs).
    """
    a = np.asarray(a, dtype=float)
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        n = a.shape[0]
        jitter = 1e-10 * np.trace(a) / n
        try:
            return np.linalg.cholesky(a + jitter * np.eye(n))
        except np.linalg.LinAlgError as exc:
            raise NumericError("matrix not positive definite (jittered retry failed)") from exc


def _check_symmetric(a: np.ndarray, name: str):
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be a square matrix")
    scale = max(1.0, float(np.max(np.abs(a))))
    if np.max(np.abs(a - a.T)) > 1e-12 * scale:
        raise ValueError(f"{name} must be symmetric within 1e-12 relative")


def _chol_logdet(chol: np.ndarray) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(chol))))


# ---------------------------------------------------------------------------
# distribution layer
# ---------------------------------------------------------------------------

@dataclass
class MvNormalParams:
    """Multivariate normal with mean (n,) and SPD covariance (n, n)."""

    mean: np.ndarray
    cov: np.ndarray
    _chol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        self.cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        _check_symmetric(self.cov, "covariance")
        if self.cov.shape[0] != self.mean.shape[0]:
            raise ValueError("mean/covariance dimension mismatch")
        self._chol = safe_cholesky(self.cov)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def logpdf(self, x) -> float:
        return float(self.logpdf_batch(np.asarray(x, dtype=float)[None, :])[0])

    def logpdf_batch(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        dev = x - self.mean
        z = solve_triangular(self._chol, dev.T, lower=True)
        maha = np.sum(z * z, axis=0)
        return -0.5 * (self.dim * LOG_2PI + _chol_logdet(self._chol) + maha)

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        n = 1 if size is None else size
        z = rng.standard_normal((n, self.dim))
        draws = self.mean + z @ self._chol.T
        return draws[0] if size is None else draws


@dataclass
class MatricNormalParams:
    """Matric-variate normal for a K x N matrix.

    ``row_cov`` (K x K) scales across rows, ``col_cov`` (N x N) across
    columns; vec(X) with column stacking is N(vec(mean), col_cov kron row_cov).
    """

    mean: np.ndarray
    row_cov: np.ndarray
    col_cov: np.ndarray

    def __post_init__(self):
        self.mean = np.atleast_2d(np.asarray(self.mean, dtype=float))
        self.row_cov = np.atleast_2d(np.asarray(self.row_cov, dtype=float))
        self.col_cov = np.atleast_2d(np.asarray(self.col_cov, dtype=float))
        _check_symmetric(self.row_cov, "row covariance")
        _check_symmetric(self.col_cov, "column covariance")
        k, n = self.mean.shape
        if self.row_cov.shape[0] != k or self.col_cov.shape[0] != n:
            raise ValueError("mean/covariance dimension mismatch")
        self._chol_row = safe_cholesky(self.row_cov)
        self._chol_col = safe_cholesky(self.col_cov)

    @property
    def shape(self):
        return self.mean.shape

    def logpdf(self, x) -> float:
        return float(self.logpdf_batch(np.asarray(x, dtype=float)[None, :, :])[0])

    def logpdf_batch(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 2:
            x = x[None, :, :]
        k, n = self.mean.shape
        dev = x - self.mean
        # trace(inv(col) dev' inv(row) dev) via triangular solves
        a = solve_triangular(self._chol_row, dev.transpose(1, 0, 2).reshape(k, -1), lower=True)
        a = a.reshape(k, x.shape[0], n).transpose(1, 0, 2)
        b = solve_triangular(self._chol_col, a.transpose(2, 0, 1).reshape(n, -1), lower=True)
        b = b.reshape(n, x.shape[0], k)
        quad = np.einsum("nsk,nsk->s", b, b)
        return -0.5 * (k * n * LOG_2PI + n * _chol_logdet(self._chol_row)
                       + k * _chol_logdet(self._chol_col) + quad)

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        n_draws = 1 if size is None else size
        k, n = self.mean.shape
        z = rng.standard_normal((n_draws, k, n))
        draws = self.mean + self._chol_row @ z @ self._chol_col.T
        return draws[0] if size is None else draws


@dataclass
class WishartParams:
    """Wishart W(inv(scale_inv), dof): E[W] = dof * inv(scale_inv)."""

    scale_inv: np.ndarray
    dof: float

    def __post_init__(self):
        self.scale_inv = np.atleast_2d(np.asarray(self.scale_inv, dtype=float))
        _check_symmetric(self.scale_inv, "scale_inv")
        n = self.scale_inv.shape[0]
        if not self.dof > n - 1:
            raise ValueError(f"dof must exceed dim - 1 = {n - 1}")
        self._chol_s = safe_cholesky(self.scale_inv)

    @property
    def dim(self) -> int:
        return self.scale_inv.shape[0]

    def _log_norm(self) -> float:
        n, nu = self.dim, self.dof
        # normalizer of W(Psi, nu) with Psi = inv(scale_inv)
        return (0.5 * nu * n * math.log(2.0)
                - 0.5 * nu * _chol_logdet(self._chol_s)
                + ln_multivariate_gamma(n, 0.5 * nu))

    def logpdf(self, w) -> float:
        return float(self.logpdf_batch(np.asarray(w, dtype=float)[None, :, :])[0])

    def logpdf_batch(self, w: np.ndarray) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        if w.ndim == 2:
            w = w[None, :, :]
        n, nu = self.dim, self.dof
        sign, logdet = np.linalg.slogdet(w)
        if np.any(sign <= 0):
            out = np.full(w.shape[0], -np.inf)
            ok = sign > 0
            if np.any(ok):
                out[ok] = self.logpdf_batch(w[ok])
            return out
        tr = np.einsum("ij,sji->s", self.scale_inv, w)
        return 0.5 * (nu - n - 1.0) * logdet - 0.5 * tr - self._log_norm()

    def mean(self) -> np.ndarray:
        return self.dof * cho_solve((self._chol_s, True), np.eye(self.dim))

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        """Bartlett decomposition draw, bit-reproducible for a given rng."""
        n_draws = 1 if size is None else size
        n, nu = self.dim, self.dof
        psi = cho_solve((self._chol_s, True), np.eye(n))
        m = safe_cholesky(psi)
        a = np.zeros((n_draws, n, n))
        rows, cols = np.tril_indices(n, k=-1)
        if len(rows):
            a[:, rows, cols] = rng.standard_normal((n_draws, len(rows)))
        for j in range(n):
            a[:, j, j] = np.sqrt(rng.gamma(0.5 * (nu - j), 2.0, size=n_draws))
        la = m @ a
        draws = la @ la.transpose(0, 2, 1)
        return draws[0] if size is None else draws


@dataclass
class GammaParams:
    """Gamma in shape/rate form: mean = shape / rate."""

    shape: float
    rate: float

    def __post_init__(self):
        if not (self.shape > 0 and self.rate > 0):
            raise ValueError("gamma shape and rate must be strictly positive")

    def logpdf(self, x) -> float:
        return float(self.logpdf_batch(np.atleast_1d(np.asarray(x, dtype=float)))[0])

    def logpdf_batch(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.full(x.shape, -np.inf)
        pos = x > 0
        out[pos] = (self.shape * math.log(self.rate) - gammaln(self.shape)
                    + (self.shape - 1.0) * np.log(x[pos]) - self.rate * x[pos])
        return out

    def mean(self) -> float:
        return self.shape / self.rate

    def mean_log(self) -> float:
        return float(psi(self.shape)) - math.log(self.rate)

    def entropy(self) -> float:
        a, b = self.shape, self.rate
        return a - math.log(b) + float(gammaln(a)) + (1.0 - a) * float(psi(a))

    def sample(self, rng: np.random.Generator, size: int | None = None):
        draws = rng.gamma(self.shape, 1.0 / self.rate, size=size)
        return float(draws) if size is None else draws


@dataclass
class TruncNormalParams:
    """Normal(location, scale^2) truncated to [0, inf)."""

    location: float
    scale: float

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("scale must be strictly positive")

    @property
    def _alpha(self) -> float:
        return self.location / self.scale

    def log_normalizer(self) -> float:
        """ln Phi(location / scale), the kept probability mass."""
        return float(log_ndtr(self._alpha))

    def mean(self) -> float:
        return self.location + self.scale * inverse_mills(self._alpha)

    def var(self) -> float:
        m = inverse_mills(self._alpha)
        return self.scale ** 2 * (1.0 - m * (m + self._alpha))

    def entropy(self) -> float:
        a = self._alpha
        return 0.5 * (LOG_2PI + 1.0) + math.log(self.scale) + self.log_normalizer() \
            - 0.5 * a * inverse_mills(a)

    def logpdf(self, x) -> float:
        return float(self.logpdf_batch(np.atleast_1d(np.asarray(x, dtype=float)))[0])

    def logpdf_batch(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.full(x.shape, -np.inf)
        ok = x >= 0
        z = (x[ok] - self.location) / self.scale
        out[ok] = -0.5 * (LOG_2PI + z * z) - math.log(self.scale) - self.log_normalizer()
        return out

    def sample(self, rng: np.random.Generator, size: int | None = None):
        """Inversion for location/scale >= -5, exponential rejection below."""
        n = 1 if size is None else size
        a = self._alpha
        if a >= -5.0:
            lo = float(np.exp(log_ndtr(-a)))  # P(Z < -a) = mass below 0
            u = rng.uniform(lo, 1.0, size=n)
            z = ndtri(u)
            draws = self.location + self.scale * z
            draws = np.maximum(draws, 0.0)
        else:
            # Robert (1995) translated-exponential rejection on the tail z >= -a
            am = -a
            lam = 0.5 * (am + math.sqrt(am * am + 4.0))
            draws = np.empty(n)
            for i in range(n):
                while True:
                    z = am + rng.exponential(1.0 / lam)
                    log_acc = -0.5 * (z - lam) ** 2
                    if math.log(rng.uniform()) <= log_acc:
                        draws[i] = self.location + self.scale * z
                        break
        return float(draws[0]) if size is None else draws


# ---------------------------------------------------------------------------
# seeding
# ---------------------------------------------------------------------------

def make_rng(base_seed: int, *path: int) -> np.random.Generator:
    """Deterministic generator for a (base seed, derivation path) pair.

    The path components form a SeedSequence spawn key, so independent
    streams for chains, reduced runs and importance samplers never collide
    and do not depend on call order.
    """
    ss = np.random.SeedSequence(entropy=int(base_seed), spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.PCG64(ss))
