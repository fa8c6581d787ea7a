"""Approximate-KKT diagnostics at separable trajectory points."""

import math

import numpy as np
import pytest

from marginflow.kkt import (homogenized_grads, homogenized_margins,
                            kkt_diagnostics, stationarity_identity)
from marginflow.poly import build_pa_gf
from marginflow import toy as toymod


@pytest.fixture(scope="module")
def endpoint(reduced_traj):
    si = reduced_traj.first_sep_index()
    return reduced_traj.records[si], reduced_traj.records[-1]


class TestIngredients:
    def test_homogenized_margins_positive_at_end(self, toy_model, toy_dataset, endpoint):
        _, final = endpoint
        pa = build_pa_gf(toymod.TOY_ENV_P, 2)
        fbar = homogenized_margins(toy_model, final.theta, toy_dataset, 2, pa)
        assert fbar.shape == (toy_dataset.n,)
        assert np.all(fbar > 0)

    def test_grad_rows_match_fd(self, toy_model, toy_dataset, endpoint):
        _, final = endpoint
        exact = homogenized_grads(toy_model, final.theta, toy_dataset, 2)
        fd = homogenized_grads(toy_model, final.theta, toy_dataset, 2, use_fd=True)
        assert np.linalg.norm(exact - fd) / np.linalg.norm(exact) < 1e-4


class TestReport:
    def make_report(self, toy_model, toy_dataset, rec_s, rec):
        pa = build_pa_gf(toymod.TOY_ENV_P, 2)
        return kkt_diagnostics(toy_model, rec.theta, toy_dataset, 2, pa,
                               gamma_tilde_s=rec_s.gamma_tilde,
                               gamma_tilde_now=rec.gamma_tilde)

    def test_stationarity_identity_is_exact(self, toy_model, toy_dataset, endpoint):
        rec_s, final = endpoint
        rep = self.make_report(toy_model, toy_dataset, rec_s, final)
        ident = stationarity_identity(rep, final.rho, 2)
        assert rep.stationarity_residual == pytest.approx(ident, rel=1e-9)

    def test_direct_residuals_within_levels(self, toy_model, toy_dataset, endpoint):
        rec_s, final = endpoint
        rep = self.make_report(toy_model, toy_dataset, rec_s, final)
        assert rep.feasible
        assert rep.stationarity_residual <= rep.eps + 1e-6
        assert rep.complementarity_residual <= rep.delta + 1e-6
        assert rep.ok

    def test_multipliers_nonnegative_and_complementary(self, toy_model, toy_dataset, endpoint):
        rec_s, final = endpoint
        rep = self.make_report(toy_model, toy_dataset, rec_s, final)
        assert np.all(rep.lambdas >= 0)
        # tightest constraint carries the heaviest multiplier
        assert np.argmax(rep.lambdas) == np.argmin(rep.margins_rescaled)
        assert rep.margins_rescaled.min() == pytest.approx(1.0)

    def test_alignment_improves_along_run(self, toy_model, toy_dataset, endpoint):
        rec_s, final = endpoint
        rs = self.make_report(toy_model, toy_dataset, rec_s, rec_s)
        rf = self.make_report(toy_model, toy_dataset, rec_s, final)
        assert rf.beta >= rs.beta
        assert rf.delta < rs.delta

    def test_eps_formula(self, toy_model, toy_dataset, endpoint):
        rec_s, final = endpoint
        rep = self.make_report(toy_model, toy_dataset, rec_s, final)
        assert rep.eps == pytest.approx(
            math.sqrt(2.0) * rep.B_const * math.sqrt(1.0 - rep.beta))

    def test_nonseparable_point_rejected(self, toy_model, toy_dataset):
        pa = build_pa_gf(toymod.TOY_ENV_P, 2)
        theta = np.concatenate([[-1.0, 0.0], [-1.0, 0.0], [0.5, 0.5]])
        with pytest.raises(ValueError):
            kkt_diagnostics(toy_model, theta, toy_dataset, 2, pa)
