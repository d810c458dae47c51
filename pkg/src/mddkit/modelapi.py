"""The contract every model family implements.

Estimators never see model internals: they consume flat parameter
matrices (one row per draw), a batched log posterior kernel, and -- for
the conditional-based methods -- named blocks with evaluable/sampleable
full conditionals. Parameter vectors carry SPD blocks in vech form
(lower triangle, row-major); latent variables live in a separate layout
and only enter complete-data variants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import UnsupportedModelError

__all__ = [
    "Block",
    "ParamLayout",
    "PosteriorDrawSet",
    "SamplerConfig",
    "VBResult",
    "WeightingDensity",
    "ModelKernel",
    "log_posterior_kernel",
    "elbo_monte_carlo",
]


# ---------------------------------------------------------------------------
# parameter layout
# ---------------------------------------------------------------------------

def vech(m: np.ndarray) -> np.ndarray:
    """Lower triangle of a symmetric matrix, row-major."""
    n = m.shape[-1]
    rows, cols = np.tril_indices(n)
    return m[..., rows, cols]


def unvech(v: np.ndarray, n: int) -> np.ndarray:
    """Inverse of :func:`vech`; symmetrizes by mirroring."""
    v = np.asarray(v, dtype=float)
    rows, cols = np.tril_indices(n)
    out = np.zeros(v.shape[:-1] + (n, n))
    out[..., rows, cols] = v
    out[..., cols, rows] = v
    return out


@dataclass(frozen=True)
class Block:
    """One named block of the parameter vector."""

    name: str
    shape: tuple
    support: str = "real"  # real | positive | spd

    def __post_init__(self):
        if self.support not in ("real", "positive", "spd"):
            raise ValueError(f"unknown support {self.support!r}")
        if self.support == "spd" and (len(self.shape) != 2 or self.shape[0] != self.shape[1]):
            raise ValueError("spd blocks must have square shape")

    @property
    def size(self) -> int:
        if self.support == "spd":
            n = self.shape[0]
            return n * (n + 1) // 2
        return int(np.prod(self.shape)) if self.shape else 1


class ParamLayout:
    """Maps between flat draw vectors and named block values."""

    def __init__(self, blocks: list[Block]):
        self.blocks = list(blocks)
        self.slices: dict[str, slice] = {}
        offset = 0
        for b in self.blocks:
            self.slices[b.name] = slice(offset, offset + b.size)
            offset += b.size
        self.dim = offset
        self._by_name = {b.name: b for b in self.blocks}

    def block(self, name: str) -> Block:
        return self._by_name[name]

    @property
    def names(self) -> list[str]:
        return [b.name for b in self.blocks]

    def pack(self, values: dict) -> np.ndarray:
        out = np.empty(self.dim)
        for b in self.blocks:
            v = np.asarray(values[b.name], dtype=float)
            if b.support == "spd":
                out[self.slices[b.name]] = vech(v)
            else:
                out[self.slices[b.name]] = np.ravel(v)
        return out

    def pack_batch(self, values: dict) -> np.ndarray:
        n = len(np.asarray(values[self.blocks[0].name]))
        out = np.empty((n, self.dim))
        for b in self.blocks:
            v = np.asarray(values[b.name], dtype=float)
            if b.support == "spd":
                out[:, self.slices[b.name]] = vech(v)
            else:
                out[:, self.slices[b.name]] = v.reshape(n, -1)
        return out

    def unpack(self, theta: np.ndarray) -> dict:
        return {k: (v[0] if np.ndim(v) and v.shape[0] == 1 else v)
                for k, v in self.unpack_batch(np.atleast_2d(theta)).items()}

    def unpack_batch(self, thetas: np.ndarray) -> dict:
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        out = {}
        for b in self.blocks:
            raw = thetas[:, self.slices[b.name]]
            if b.support == "spd":
                out[b.name] = unvech(raw, b.shape[0])
            elif b.shape == ():
                out[b.name] = raw[:, 0]
            else:
                out[b.name] = raw.reshape((thetas.shape[0],) + b.shape)
        return out

    # -- unconstrained transform (used by Geweke / elliptical / box weightings)

    def to_unconstrained_batch(self, thetas: np.ndarray):
        """Map draws to an unconstrained space; returns (phis, log_jac).

        Positive entries map through log; SPD blocks map to the unique
        elements of their Cholesky factor with logged diagonal. ``log_jac``
        is ln|d phi / d theta| per draw, so a density g on phi-space
        corresponds to the theta-space density g(phi(theta)) * exp(log_jac).
        """
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        s = thetas.shape[0]
        phis = np.empty_like(thetas)
        log_jac = np.zeros(s)
        for b in self.blocks:
            sl = self.slices[b.name]
            raw = thetas[:, sl]
            if b.support == "real":
                phis[:, sl] = raw
            elif b.support == "positive":
                phis[:, sl] = np.log(raw)
                log_jac -= np.sum(np.log(raw), axis=1)
            else:
                n = b.shape[0]
                mats = unvech(raw, n)
                chol = np.linalg.cholesky(mats)
                rows, cols = np.tril_indices(n)
                elems = chol[:, rows, cols]
                diag_mask = rows == cols
                elems[:, diag_mask] = np.log(elems[:, diag_mask])
                phis[:, sl] = elems
                # |d vech(W)/d vech(L)| = 2^n prod L_ii^(n-i+1), i = 1..n;
                # log-diagonal map contributes prod 1/L_ii
                diag = np.log(np.diagonal(chol, axis1=1, axis2=2))
                powers = n - np.arange(1, n + 1) + 2.0
                log_jac -= n * math.log(2.0) + diag @ powers
        return phis, log_jac

    def from_unconstrained(self, phi: np.ndarray) -> np.ndarray:
        """Inverse of :func:`to_unconstrained_batch` for a batch of rows."""
        phi = np.atleast_2d(np.asarray(phi, dtype=float))
        out = np.empty_like(phi)
        for b in self.blocks:
            sl = self.slices[b.name]
            raw = phi[:, sl]
            if b.support == "real":
                out[:, sl] = raw
            elif b.support == "positive":
                out[:, sl] = np.exp(raw)
            else:
                n = b.shape[0]
                rows, cols = np.tril_indices(n)
                diag_mask = rows == cols
                elems = raw.copy()
                elems[:, diag_mask] = np.exp(elems[:, diag_mask])
                chol = np.zeros((phi.shape[0], n, n))
                chol[:, rows, cols] = elems
                mats = chol @ chol.transpose(0, 2, 1)
                out[:, sl] = vech(mats)
        return out


# ---------------------------------------------------------------------------
# draws, VB results, weighting densities
# ---------------------------------------------------------------------------

@dataclass
class SamplerConfig:
    """Chain length configuration; defaults follow the reference setup."""

    draws: int = 10_000
    burn_in: int = 1_000
    thin: int = 1


@dataclass
class PosteriorDrawSet:
    """Ordered posterior draws with reproducibility metadata."""

    thetas: np.ndarray  # (S, n)
    layout: ParamLayout
    seed: object
    burn_in: int = 0
    thin: int = 1
    latents: np.ndarray | None = None  # (S, m) aligned latent draws
    latent_layout: ParamLayout | None = None

    def __post_init__(self):
        self.thetas = np.atleast_2d(np.asarray(self.thetas, dtype=float))

    @property
    def size(self) -> int:
        return self.thetas.shape[0]

    def states(self, indices=None):
        """Unpacked per-draw state dicts (parameters plus latents)."""
        idx = np.arange(self.size) if indices is None else np.asarray(indices)
        unpacked = self.layout.unpack_batch(self.thetas[idx])
        if self.latents is not None:
            unpacked.update(self.latent_layout.unpack_batch(self.latents[idx]))
        return [{k: v[i] for k, v in unpacked.items()} for i in range(len(idx))]


@dataclass
class VBResult:
    """Fitted variational approximation: hyper-parameters plus evaluators."""

    hyper: dict
    elbo_trace: np.ndarray
    log_q: Callable[[np.ndarray], np.ndarray]          # batched over theta rows
    sample: Callable[[np.random.Generator, int], np.ndarray]
    marginal_log_q: dict[str, Callable] = field(default_factory=dict)
    converged: bool = True

    @property
    def elbo(self) -> float:
        return float(self.elbo_trace[-1])


@dataclass
class WeightingDensity:
    """A density with batched log-evaluation and optional i.i.d. sampling."""

    tag: str
    log_eval: Callable[[np.ndarray], np.ndarray]
    sampler: Callable[[np.random.Generator, int], np.ndarray] | None = None

    def require_sampler(self):
        if self.sampler is None:
            raise UnsupportedModelError(f"weighting {self.tag!r} cannot be sampled from")


# ---------------------------------------------------------------------------
# the model kernel contract
# ---------------------------------------------------------------------------

class ModelKernel:
    """Base class for model families.

    Subclasses must provide ``layout``, ``log_prior_batch`` and
    ``log_likelihood_batch``; conditional-based estimators additionally use
    ``conditional_blocks`` / ``full_conditional`` / ``sample_block`` and the
    complete-data variants when latent variables exist.
    """

    layout: ParamLayout
    latent_layout: ParamLayout | None = None
    conditional_blocks: list[str] = []
    latent_block: str | None = None

    # -- evaluation ---------------------------------------------------------

    def log_prior_batch(self, thetas: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def log_likelihood_batch(self, thetas: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def log_kernel_batch(self, thetas: np.ndarray) -> np.ndarray:
        thetas = np.atleast_2d(thetas)
        prior = self.log_prior_batch(thetas)
        out = np.full(prior.shape, -np.inf)
        ok = prior > -np.inf
        if np.any(ok):
            out[ok] = prior[ok] + self.log_likelihood_batch(thetas[ok])
        return out

    def log_prior(self, theta) -> float:
        return float(self.log_prior_batch(np.atleast_2d(theta))[0])

    def log_likelihood(self, theta) -> float:
        return float(self.log_likelihood_batch(np.atleast_2d(theta))[0])

    # complete-data kernel over (theta, latents); optional
    def log_complete_kernel_batch(self, thetas, latents) -> np.ndarray:
        raise UnsupportedModelError(f"{type(self).__name__} has no complete-data kernel")

    # -- conditionals / sampling --------------------------------------------

    def full_conditional(self, name: str, state: dict):
        """Distribution object for one block given the rest; conjugate blocks only."""
        raise UnsupportedModelError(f"{type(self).__name__} exposes no conditional for {name!r}")

    def posterior_sampler(self, config: SamplerConfig, rng: np.random.Generator,
                          seed=None) -> PosteriorDrawSet:
        raise NotImplementedError

    def vb_fit(self, **kwargs) -> VBResult:
        raise UnsupportedModelError(f"{type(self).__name__} has no VB fit wired")


def log_posterior_kernel(model: ModelKernel, theta) -> float:
    """ln p(y|theta) + ln p(theta); -inf outside the prior support."""
    return float(model.log_kernel_batch(np.atleast_2d(theta))[0])


def elbo_monte_carlo(model: ModelKernel, vb: VBResult, rng: np.random.Generator,
                     num_draws: int = 20_000) -> tuple[float, float]:
    """Monte Carlo ELBO oracle: mean and standard error of log k(theta) - log q(theta)
    over i.i.d. draws from q. Used to validate closed-form lower bounds."""
    draws = vb.sample(rng, num_draws)
    vals = model.log_kernel_batch(draws) - vb.log_q(draws)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(num_draws))
