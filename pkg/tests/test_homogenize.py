"""Radial-limit homogenization and its certificates."""

import math

import numpy as np
import pytest

from marginflow.engine import (ActPowBlock, LinearBlock, NetworkModel,
                               ScalarPowerModel, ToyTwoLayerModel)
from marginflow.homogenize import (block_homogenize, blockwise_homogenize,
                                   check_error_bound, estimate_fM,
                                   estimate_gradM, leading_component_positive,
                                   separability_scale)
from marginflow.orders import BlockKind, activation_power_order, catalog_order
from marginflow.poly import NonnegPoly, build_pa_gf
from marginflow import toy as toymod

rng = np.random.default_rng(31)


class TestEstimateFM:
    def test_exactly_homogeneous_model_is_fixed(self):
        # bias-free relu MLP is exactly 2-homogeneous: f_M == f
        model = NetworkModel([LinearBlock(4, 1, bias=False),
                              ActPowBlock("relu", 1, 4),
                              LinearBlock(3, 4, bias=False)])
        pa = NonnegPoly.zero()
        for _ in range(20):
            theta = rng.standard_normal(model.dim)
            x = rng.standard_normal(3)
            est = estimate_fM(model, theta, x, 2, pa)
            assert est.value == pytest.approx(model.forward(theta, x), rel=1e-9, abs=1e-9)
            assert est.converged

    def test_scalar_family_limit(self, ex35_model, ex35_p):
        pa = build_pa_gf(ex35_p, 3)
        theta = np.array([1.7])
        est = estimate_fM(ex35_model, theta, np.array([1.0]), 3, pa)
        assert est.value == pytest.approx(1.7 ** 3, abs=1e-9)

    def test_zero_theta_rejected(self, ex35_model, ex35_p):
        with pytest.raises(ValueError):
            estimate_fM(ex35_model, np.zeros(1), np.array([1.0]), 3,
                        build_pa_gf(ex35_p, 3))

    def test_toy_limit_drops_single_layer_terms(self, toy_model):
        # f_M keeps only the bilinear a * phi terms plus nothing else: the
        # linear w.x parts scale like r, not r^2
        theta = rng.standard_normal(toy_model.dim)
        x = rng.standard_normal(2)
        pa = build_pa_gf(toymod.TOY_ENV_P, 2)
        est = estimate_fM(toy_model, theta, x, 2, pa)
        w1, w2 = theta[:2], theta[2:4]
        a1, a2 = theta[4], theta[5]
        z1, z2 = float(w1 @ x), float(w2 @ x)
        phi = lambda z: z if z >= 0 else toy_model.alpha_l * z
        expect = a1 * phi(z1) - a2 * phi(-z2)
        assert est.value == pytest.approx(expect, abs=1e-8)


class TestGradM:
    def test_matches_fd_of_value_limit(self, toy_model):
        theta = rng.standard_normal(toy_model.dim)
        x = rng.standard_normal(2)
        g = estimate_gradM(toy_model, theta, x, 2)
        h = 1e-5
        fd = np.empty(theta.size)
        for j in range(theta.size):
            e = np.zeros(theta.size)
            e[j] = h
            fp = estimate_fM(toy_model, theta + e, x, 2, None).value
            fm = estimate_fM(toy_model, theta - e, x, 2, None).value
            fd[j] = (fp - fm) / (2 * h)
        assert np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1.0) < 1e-5


class TestErrorBound:
    def test_toy_bound(self, toy_model, toy_dataset):
        pa = build_pa_gf(toymod.TOY_ENV_P, 2)
        thetas = [rng.standard_normal(toy_model.dim) for _ in range(100)]
        rep = check_error_bound(toy_model, thetas, toy_dataset.X[0], 2, pa)
        assert rep.ok, rep.max_residual

    def test_scalar_family_equality(self, ex35_model, ex35_p):
        # |f - f_M| = p_a(|theta|) exactly; residual vanishes to 1e-9
        pa = build_pa_gf(ex35_p, 3)
        worst = 0.0
        for _ in range(200):
            theta = rng.standard_normal(1) * 2
            if abs(theta[0]) < 1e-3:
                continue
            est = estimate_fM(ex35_model, theta, np.array([1.0]), 3, pa)
            gap = abs(ex35_model.forward(theta, None) - est.value)
            worst = max(worst, abs(gap - pa.eval(abs(theta[0]))))
        assert worst <= 1e-9, worst


class TestBlockwise:
    def test_composition_matches_direct(self):
        blocks = [LinearBlock(4, 1, bias=False), ActPowBlock("relu", 1, 4),
                  LinearBlock(3, 4, bias=False)]
        model = NetworkModel(blocks)
        orders = [catalog_order(BlockKind("linear", d_in=4, d_out=1)),
                  activation_power_order("relu", 1),
                  catalog_order(BlockKind("linear", d_in=3, d_out=4))]
        theta = rng.standard_normal(model.dim)
        x = rng.standard_normal(3)
        direct = estimate_fM(model, theta, x, 2, NonnegPoly.zero()).value
        composed = blockwise_homogenize(blocks, theta, x, orders)
        assert composed == pytest.approx(direct, rel=1e-8, abs=1e-8)

    def test_single_block(self):
        b = LinearBlock(3, 2, bias=True)
        w = rng.standard_normal(b.n_params)
        x = rng.standard_normal(3)
        out = block_homogenize(b, w, x, 1, 1)
        # homogenization strips the bias
        A = w[:6].reshape(2, 3)
        assert np.allclose(out, A @ x, atol=1e-6)


class TestSeparabilityScale:
    def test_returned_scale_is_tight(self):
        pa = NonnegPoly((0.0, 2.0))
        c = separability_scale(0.5, pa, 2, n=8, slack=0.5)
        lhs = lambda s: 0.5 * s ** 2 - 2 * pa.eval(s) - math.log(8) - 0.5
        assert lhs(c) >= -1e-6
        assert lhs(c * 0.99) < 0

    def test_nonpositive_margin_rejected(self):
        with pytest.raises(ValueError):
            separability_scale(0.0, NonnegPoly((0.0, 1.0)), 2, 4, 0.5)


class TestLeadingComponent:
    def test_positive_at_separable_endpoint(self, toy_model, toy_dataset, reduced_traj):
        pa = build_pa_gf(toymod.TOY_ENV_P, 2)
        theta = reduced_traj.records[-1].theta
        rep = leading_component_positive(toy_model, theta, toy_dataset, 2, pa)
        assert rep.ok
        assert len(rep.per_sample) == toy_dataset.n
