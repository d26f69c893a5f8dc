import numpy as np
from django.test import SimpleTestCase

from portfolio.dual_pide import (
    PideConfig,
    bounds,
    coefficients,
    hjb_step,
    i_beta,
    merton_oracle,
    minimal_clamp,
    nu_hat,
    select_nu,
    slice_bounds,
    solve_lambda,
    stability_number,
)
from portfolio.exceptions import InvalidArgument, PositivityViolation
from portfolio.filtering import xi
from portfolio.market_signal import f_hat

from .instances import separated_signal, gaussian_signal, make_model, merton_model


class CoefficientTests(SimpleTestCase):

    def test_hand_computed_drift(self):
        model = make_model(kappa=0.5)
        mu_bar, sigma_bar, _ = coefficients(0.5, model)
        self.assertAlmostEqual(float(sigma_bar), 0.075)
        self.assertAlmostEqual(float(mu_bar), 0.01125)

    def test_boundaries_are_degenerate(self):
        _, sigma_bar, _ = coefficients(np.array([0.0, 1.0]), make_model())
        np.testing.assert_array_equal(sigma_bar, 0.0)

    def test_equal_drifts_leave_plain_chain_drift(self):
        model = merton_model()
        x = np.linspace(0, 1, 11)
        mu_bar, _, _ = coefficients(x, model)
        np.testing.assert_allclose(mu_bar, 1.0 - 2.0 * x, atol=1e-15)

    def test_discount_forms(self):
        squared = make_model(kappa=-1.0)
        literal = make_model(kappa=-1.0, d0_form='literal')
        # beta = 0.5, theta_hat(0.5) = 0.15
        self.assertAlmostEqual(float(coefficients(0.5, squared)[2]), 0.01 + 0.125 * 0.0225)
        self.assertAlmostEqual(float(coefficients(0.5, literal)[2]), 0.01 + 0.125 * 0.15)


class BoundTests(SimpleTestCase):

    def test_negative_kappa(self):
        model = make_model(kappa=-1.0)
        c_l, c_u = bounds(model)
        self.assertEqual(c_u, 2.0)
        self.assertLessEqual(c_l, 1.0)
        lower, upper = slice_bounds(model, np.array([0.0, 1.0]))
        np.testing.assert_allclose(upper, [1.0, 2.0])
        self.assertAlmostEqual(float(lower[0]), 1.0)

    def test_positive_kappa(self):
        model = make_model(kappa=0.5)
        c_l, c_u = bounds(model)
        self.assertEqual(c_l, 1.0)
        self.assertGreater(c_u, 2.0)

    def test_first_theta_variant(self):
        model = make_model(mu1=0.02, mu2=-0.1, kappa=0.5)
        self.assertLess(bounds(model, 'first')[1], bounds(model, 'max')[1])

    def test_minimal_clamp(self):
        model = make_model(kappa=-1.0)
        c_l, c_u = bounds(model)
        self.assertAlmostEqual(minimal_clamp(model), np.log(c_u / c_l) / 0.5)


class NonlocalTermTests(SimpleTestCase):

    def test_flat_slice_gives_zero(self):
        model = make_model()
        x = np.linspace(0.0, 1.0, 51)
        np.testing.assert_array_equal(i_beta(np.full(51, 1.7), x, model), 0.0)

    def test_uninformative_signals_give_zero(self):
        model = merton_model()
        x = np.linspace(0.0, 1.0, 51)
        np.testing.assert_array_equal(i_beta(1.0 + x ** 2, x, model), 0.0)

    def test_matches_brute_force_sum(self):
        model = make_model()
        beta = model.utility.beta
        grid = np.linspace(0.0, 1.0, 1001)
        u = 1.0 + grid ** 2
        x = 0.3
        z = np.linspace(-15.0, 15.0, 300001)
        post = np.interp(xi(x, z, model.signal), grid, u)
        home = 1.0 + x ** 2
        integrand = f_hat(x, z, model.signal) * ((post / home) ** (1.0 / (1.0 - beta)) - 1.0)
        total = np.sum(0.5 * (integrand[1:] + integrand[:-1]) * np.diff(z))
        expected = (1.0 - beta) * home * model.signal.lam * total
        value = float(i_beta(u, np.array([x]), model)[0])
        self.assertAlmostEqual(value / expected, 1.0, delta=1e-4)

    def test_rejects_non_positive_slice(self):
        with self.assertRaises(PositivityViolation):
            i_beta(np.zeros(51), np.linspace(0, 1, 51), make_model())


class StepTests(SimpleTestCase):

    def test_flat_terminal_step(self):
        model = make_model()
        config = PideConfig(n_x=50, n_t=1000)
        dt = 1e-3
        u = hjb_step(np.ones(51), model, config, dt)
        d0 = coefficients(np.linspace(0, 1, 51), model)[2]
        np.testing.assert_allclose(u, 1.0 + dt * (1.0 - d0), atol=1e-5)

    def test_rejects_wrong_slice_size(self):
        with self.assertRaises(InvalidArgument):
            hjb_step(np.ones(10), make_model(), PideConfig(n_x=50))

    def test_grid_must_be_fine_enough(self):
        with self.assertRaises(InvalidArgument):
            PideConfig(n_x=20)


class MertonOracleTests(SimpleTestCase):

    def test_closed_form_values(self):
        model = make_model(signal=gaussian_signal(), mu1=4.0, mu2=4.0, r=4.0)
        self.assertAlmostEqual(float(merton_oracle(0.5, model)), 0.683940, places=6)
        self.assertEqual(float(merton_oracle(1.0, model)), 1.0)

    def test_requires_degenerate_instance(self):
        with self.assertRaises(InvalidArgument):
            merton_oracle(0.0, make_model())

    def test_solver_matches_oracle(self):
        model = merton_model()
        surface = solve_lambda(model, PideConfig())
        exact = merton_oracle(surface.t, model)
        rel = np.abs(surface.values / exact[:, None] - 1.0).max()
        self.assertLess(rel, 1e-3)
        spread = surface.values.max(axis=1) - surface.values.min(axis=1)
        self.assertLess(spread.max(), 1e-12)


class SolveTests(SimpleTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.model = make_model()
        cls.config = PideConfig(n_x=50, n_t=200)
        cls.surface = solve_lambda(cls.model, cls.config)

    def test_terminal_slice_and_bounds(self):
        surface = self.surface
        np.testing.assert_array_equal(surface.values[-1], 1.0)
        c_l, c_u = bounds(self.model)
        self.assertGreaterEqual(surface.values.min(), c_l - 1e-6)
        self.assertLessEqual(surface.values.max(), c_u + 1e-6)
        self.assertTrue(surface.meta['bounds_ok'])

    def test_interpolation_hits_grid_values(self):
        surface = self.surface
        self.assertAlmostEqual(float(surface.at(surface.t[10], surface.x[7])), surface.values[10, 7], places=12)
        with self.assertRaises(InvalidArgument):
            surface.at(1.5, 0.5)

    def test_control_vanishes_at_horizon(self):
        x = np.full(5, 0.4)
        z = np.linspace(-2.0, 2.0, 5)
        np.testing.assert_allclose(nu_hat(self.surface, 1.0, x, z), 0.0, atol=1e-15)

    def test_clamp_never_binds_above_minimal_level(self):
        level = 1.01 * minimal_clamp(self.model, self.config)
        self.assertEqual(self.surface.clamp_activations(level), 0)
        x = np.linspace(0.05, 0.95, 19)
        _, hit = select_nu(self.surface, 0.0, x, np.full(19, 0.3), level)
        self.assertFalse(hit.any())

    def test_tight_clamp_is_reported(self):
        nu, hit = select_nu(self.surface, 0.0, np.array([0.5]), np.array([-3.0]), 1e-6)
        self.assertTrue(hit[0])
        self.assertAlmostEqual(abs(float(nu[0])), 1e-6)

    def test_explicit_budget(self):
        model = make_model(signal=separated_signal(lam=500.0))
        config = PideConfig(n_x=50, n_t=1)
        self.assertGreater(stability_number(model, config), 0.5)
        with self.assertRaisesRegex(InvalidArgument, 'n_t >='):
            solve_lambda(model, config)

    def test_self_convergence(self):
        slices = []
        for level in range(3):
            config = PideConfig(n_x=50 * 2 ** level, n_t=100 * 2 ** level)
            surface = solve_lambda(self.model, config)
            slices.append(surface.values[0, ::2 ** level])
        coarse = np.abs(slices[1] - slices[0]).max()
        fine = np.abs(slices[2] - slices[1]).max()
        self.assertLessEqual(fine, 0.6 * coarse)
