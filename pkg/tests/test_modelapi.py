"""Tests for parameter layouts, transforms and the kernel contract."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mddkit.modelapi import (
    Block,
    ParamLayout,
    SamplerConfig,
    elbo_monte_carlo,
    log_posterior_kernel,
    unvech,
    vech,
)
from mddkit.statscore import make_rng, quadrature_1d
from mddkit.toys import ToyNormalGammaKernel, ToyNormalKernel


def example_layout():
    return ParamLayout([
        Block("alpha", (3,)),
        Block("lam", (), "positive"),
        Block("prec", (2, 2), "spd"),
    ])


def random_values(rng):
    a = rng.standard_normal((2, 2))
    return {
        "alpha": rng.standard_normal(3),
        "lam": float(rng.gamma(2.0, 1.0)),
        "prec": a @ a.T + 0.5 * np.eye(2),
    }


class TestLayout:
    def test_dim_and_slices(self):
        lay = example_layout()
        assert lay.dim == 3 + 1 + 3
        assert lay.slices["prec"] == slice(4, 7)

    def test_pack_unpack_roundtrip(self):
        lay = example_layout()
        vals = random_values(make_rng(0))
        theta = lay.pack(vals)
        back = lay.unpack(theta)
        assert np.allclose(back["alpha"], vals["alpha"])
        assert back["lam"] == pytest.approx(vals["lam"])
        assert np.allclose(back["prec"], vals["prec"])
        assert np.allclose(lay.pack(back), theta)

    def test_batch_roundtrip(self):
        lay = example_layout()
        rng = make_rng(1)
        thetas = np.stack([lay.pack(random_values(rng)) for _ in range(7)])
        assert np.allclose(lay.pack_batch(lay.unpack_batch(thetas)), thetas)

    def test_vech_unvech(self):
        m = np.array([[4.0, 1.0], [1.0, 3.0]])
        v = vech(m)
        assert np.allclose(v, [4.0, 1.0, 3.0])
        assert np.allclose(unvech(v, 2), m)

    def test_unconstrained_roundtrip(self):
        lay = example_layout()
        rng = make_rng(2)
        thetas = np.stack([lay.pack(random_values(rng)) for _ in range(5)])
        phis, _ = lay.to_unconstrained_batch(thetas)
        assert np.allclose(lay.from_unconstrained(phis), thetas, atol=1e-10)

    def test_transform_jacobian_by_finite_differences(self):
        # log|d phi / d theta| must match the numerically differentiated map
        lay = example_layout()
        theta = lay.pack(random_values(make_rng(3)))
        _, log_jac = lay.to_unconstrained_batch(theta[None, :])
        eps = 1e-6
        jac = np.empty((lay.dim, lay.dim))
        base, _ = lay.to_unconstrained_batch(theta[None, :])
        for k in range(lay.dim):
            bumped = theta.copy()
            bumped[k] += eps
            hi, _ = lay.to_unconstrained_batch(bumped[None, :])
            jac[:, k] = (hi[0] - base[0]) / eps
        sign, fd_log_det = np.linalg.slogdet(jac)
        assert sign > 0
        assert log_jac[0] == pytest.approx(fd_log_det, abs=1e-4)

    @given(st.integers(2, 4), st.integers(0, 10_000))
    @settings(max_examples=25, deadline=None)
    def test_spd_jacobian_any_dim(self, n, seed):
        lay = ParamLayout([Block("w", (n, n), "spd")])
        rng = make_rng(seed)
        a = rng.standard_normal((n, n))
        theta = lay.pack({"w": a @ a.T + n * np.eye(n)})
        _, log_jac = lay.to_unconstrained_batch(theta[None, :])
        eps = 1e-7
        base, _ = lay.to_unconstrained_batch(theta[None, :])
        jac = np.empty((lay.dim, lay.dim))
        for k in range(lay.dim):
            bumped = theta.copy()
            bumped[k] += eps
            hi, _ = lay.to_unconstrained_batch(bumped[None, :])
            jac[:, k] = (hi[0] - base[0]) / eps
        _, fd = np.linalg.slogdet(jac)
        assert log_jac[0] == pytest.approx(fd, abs=1e-3)

    def test_bad_support_rejected(self):
        with pytest.raises(ValueError):
            Block("x", (2,), "simplex")
        with pytest.raises(ValueError):
            Block("x", (2, 3), "spd")


class TestKernelContract:
    def test_toy_kernel_hand_value(self):
        y = np.array([0.4])
        toy = ToyNormalKernel(y)
        theta = 0.3
        expected = (-0.5 * (math.log(2 * math.pi) + (0.4 - theta) ** 2)
                    - 0.5 * (math.log(2 * math.pi) + theta ** 2))
        assert log_posterior_kernel(toy, [theta]) == pytest.approx(expected, abs=1e-12)

    def test_empty_data_kernel_is_prior(self):
        toy = ToyNormalKernel(np.empty(0))
        theta = np.array([0.7])
        assert log_posterior_kernel(toy, theta) == pytest.approx(toy.log_prior(theta), abs=1e-12)

    def test_outside_support_is_minus_inf(self):
        ng = ToyNormalGammaKernel(np.array([0.1, -0.2]))
        assert log_posterior_kernel(ng, [0.0, -1.0]) == -np.inf

    def test_sampler_reproducibility(self):
        ng = ToyNormalGammaKernel(make_rng(5).normal(0, 1, 15))
        cfg = SamplerConfig(draws=500, burn_in=100)
        a = ng.posterior_sampler(cfg, make_rng(6, 1))
        b = ng.posterior_sampler(cfg, make_rng(6, 1))
        assert np.array_equal(a.thetas, b.thetas)

    def test_rao_blackwell_conditional_normalizes(self):
        # averaging the tau conditional over chain states integrates to 1
        ng = ToyNormalGammaKernel(make_rng(7).normal(1.0, 0.8, 12))
        draws = ng.posterior_sampler(SamplerConfig(draws=200, burn_in=100), make_rng(8))
        states = draws.states(np.arange(0, 200, 10))
        conds = [ng.full_conditional("tau", s) for s in states]

        def log_avg(tau):
            vals = np.stack([c.logpdf_batch(tau) for c in conds])
            return np.logaddexp.reduce(vals, axis=0) - math.log(len(conds))

        assert quadrature_1d(log_avg, 0.0, np.inf, tol=1e-10) == pytest.approx(0.0, abs=1e-8)

    def test_vb_result_surface(self):
        ng = ToyNormalGammaKernel(make_rng(9).normal(0.5, 1.2, 25))
        vb = ng.vb_fit()
        assert vb.converged
        assert np.all(np.diff(vb.elbo_trace) >= -1e-10)
        # factor marginals normalize
        assert quadrature_1d(lambda v: vb.marginal_log_q["mu"](v), -30, 30,
                             tol=1e-10) == pytest.approx(0.0, abs=1e-8)
        assert quadrature_1d(lambda v: vb.marginal_log_q["tau"](v), 0, np.inf,
                             tol=1e-10) == pytest.approx(0.0, abs=1e-8)
        # MC oracle agrees with the closed-form bound
        mean, se = elbo_monte_carlo(ng, vb, make_rng(10), 50_000)
        assert vb.elbo == pytest.approx(mean, abs=4 * se)

    def test_states_include_metadata(self):
        ng = ToyNormalGammaKernel(make_rng(11).normal(0, 1, 10))
        ds = ng.posterior_sampler(SamplerConfig(draws=50, burn_in=10, thin=2), make_rng(12), seed=99)
        assert ds.size == 50
        assert ds.burn_in == 10 and ds.thin == 2 and ds.seed == 99
        st0 = ds.states([0])[0]
        assert set(st0) == {"mu", "tau"}
