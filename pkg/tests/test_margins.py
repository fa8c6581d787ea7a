"""Link functions and margin diagnostics, checked on synthetic loss states."""

import math

import numpy as np
import pytest

from marginflow.engine import LossEval, ToyTwoLayerModel, loss
from marginflow import margins as mg
from marginflow.poly import NonnegPoly, build_pa_gd, build_pa_gf
from marginflow import toy as toymod


def make_state(log_loss, margins):
    margins = np.asarray(margins, dtype=float)
    return LossEval(loss=math.exp(log_loss) if log_loss > -700 else 0.0,
                    log_loss=log_loss, per_sample_margins=margins,
                    min_margin=float(margins.min()))


def uniform_state(margin, n=4):
    # n equal margins: log L = -margin exactly, phi(L) = margin - log n... no:
    # L = (1/n) sum e^{-m} = e^{-m}, so log_loss = -margin
    return make_state(-margin, [margin] * n)


class TestLinks:
    def test_phi_definition(self):
        assert mg.link_phi(-5.0, 4) == pytest.approx(5.0 - math.log(4))

    def test_Phi_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            mg.link_Phi(0.0)

    def test_Phi_increasing_beyond_two(self):
        xs = np.linspace(2.01, 50, 200)
        vals = [mg.link_Phi(float(x)) for x in xs]
        assert all(b > a for a, b in zip(vals, vals[1:]))

    def test_Phi_concave(self):
        # Phi'' = -1/x^2 - 4/x^3 < 0 on the whole domain
        xs = np.linspace(0.5, 30, 400)
        vals = np.array([mg.link_Phi(float(x)) for x in xs])
        second = np.diff(vals, 2)
        assert np.all(second <= 1e-12)


class TestMargins:
    def test_normalized_margin(self):
        st = uniform_state(8.0)
        assert mg.normalized_margin(st, 2.0, 2) == pytest.approx(2.0)

    def test_gf_margin_subtracts_offset(self):
        st = uniform_state(8.0)
        pa = NonnegPoly((0.0, 1.0))
        # (phi(L) - pa(rho)) / rho^2 with phi = 8 - log 4
        expect = (8.0 - math.log(4) - 2.0) / 4.0
        assert mg.gf_margin(st, 2.0, pa, 2) == pytest.approx(expect)

    def test_gd_margin_certification(self):
        pa = build_pa_gd(NonnegPoly((0.0, 0.0, 0.5)), 2)
        # deep in the separable regime: certified
        st = uniform_state(50.0)
        val, cert = mg.gd_margin(st, 2.0, pa, 2)
        assert cert and val is not None and val > 0
        # shallow: phi(G) <= 0, no value
        st = uniform_state(1.0)
        val, cert = mg.gd_margin(st, 2.0, pa, 2)
        assert val is None and not cert

    def test_eps_t_raises_outside_regime(self):
        st = uniform_state(0.5)
        with pytest.raises(ValueError):
            mg.epsilon_t(st, 2.0, NonnegPoly((0.0, 1.0)), 2)

    def test_sandwich_on_uniform_margins(self):
        # equal margins make gamma == gamma_bar + log n / rho^M relation exact
        st = uniform_state(30.0, n=4)
        pa = NonnegPoly((0.0, 1.0))
        snap = mg.snapshot(st, 2.0, 2, pa)
        assert snap.sep
        assert snap.gamma_tilde <= snap.gamma_bar <= snap.gamma
        assert snap.gamma <= (1 + snap.eps_t) * snap.gamma_tilde + 1e-12


class TestRadialSpeed:
    def test_bracket_holds_on_toy(self, toy_model, toy_dataset):
        rng = np.random.default_rng(5)
        pa = build_pa_gf(toymod.TOY_ENV_P, 2)
        for _ in range(30):
            theta = rng.standard_normal(toy_model.dim) * 1.5
            rho = float(np.linalg.norm(theta))
            ev = loss(toy_model, theta, toy_dataset)
            if ev.loss <= 0:
                continue
            v = mg.radial_speed(toy_model, theta, toy_dataset)
            lo, hi = mg.radial_speed_bracket(ev, rho, toymod.TOY_ENV_P, 2)
            assert lo - 1e-9 * (1 + abs(lo)) <= v <= hi + 1e-9 * (1 + abs(hi))


class TestChecks:
    def test_check_monotone_flags_drop(self):
        assert mg.check_monotone([1.0, 2.0, 1.5]) == [2]
        assert mg.check_monotone([1.0, None, 2.0]) == []

    def test_check_monotone_tolerates_noise(self):
        assert mg.check_monotone([1.0, 1.0 - 1e-12, 1.1], tol=1e-10) == []

    def test_check_sandwich_trivial_before_sep(self):
        st = uniform_state(0.1)
        snap = mg.snapshot(st, 2.0, 2, NonnegPoly((0.0, 1.0)))
        assert not snap.sep
        assert mg.check_sandwich(snap)
