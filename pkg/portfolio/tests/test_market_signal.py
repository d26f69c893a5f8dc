import numpy as np
from django.test import SimpleTestCase
from scipy import stats

from portfolio.constants import BEAR, BULL
from portfolio.densities import MixtureGammaFamily, SignalDensityPair
from portfolio.exceptions import InvalidArgument
from portfolio.market_signal import (
    MarketParams,
    RegimeParams,
    UtilityParams,
    f_hat,
    simulate_regime,
    simulate_world,
    simulate_world_batch,
    theta_hat,
    time_grid,
)

from .instances import (
    SEPARATED_GAUSSIANS,
    gaussian_signal,
    make_model,
    mixture_gamma_signal,
    separated_signal,
    truncated_signal,
)


class ParameterTests(SimpleTestCase):

    def test_regime_rates_must_be_positive(self):
        with self.assertRaises(InvalidArgument):
            RegimeParams(0.0, 0.0)

    def test_market_rejects_bad_inputs(self):
        with self.assertRaises(InvalidArgument):
            MarketParams(0.02, 0.08, 0.2, 0.02)
        with self.assertRaises(InvalidArgument):
            MarketParams(0.08, 0.02, 0.0, 0.02)

    def test_beta_has_opposite_sign_to_kappa(self):
        self.assertAlmostEqual(UtilityParams(-1.0).beta, 0.5)
        self.assertAlmostEqual(UtilityParams(0.5).beta, -1.0)
        with self.assertRaises(InvalidArgument):
            UtilityParams(0.0)
        with self.assertRaises(InvalidArgument):
            UtilityParams(1.0)


class ProjectionTests(SimpleTestCase):

    def setUp(self):
        self.market = MarketParams(0.08, 0.02, 0.2, 0.02)

    def test_theta_hat(self):
        self.assertAlmostEqual(float(theta_hat(1.0, self.market)), 0.3)
        self.assertAlmostEqual(float(theta_hat(0.0, self.market)), 0.0)
        self.assertAlmostEqual(float(theta_hat(0.5, self.market)), 0.15)

    def test_theta_hat_is_affine(self):
        x, y = 0.13, 0.71
        mid = theta_hat(0.5 * (x + y), self.market)
        self.assertAlmostEqual(float(mid), 0.5 * float(theta_hat(x, self.market) + theta_hat(y, self.market)), delta=1e-14)

    def test_theta_hat_rejects_outside_unit_interval(self):
        with self.assertRaises(InvalidArgument):
            theta_hat(1.2, self.market)

    def test_f_hat_identical_densities(self):
        signal = gaussian_signal()
        z = np.linspace(-3, 3, 7)
        np.testing.assert_allclose(f_hat(0.3, z, signal), stats.norm.pdf(z))

    def test_f_hat_end_points(self):
        signal = separated_signal()
        z = np.linspace(-3, 3, 7)
        np.testing.assert_allclose(f_hat(0.0, z, signal), signal.f2(z))
        np.testing.assert_allclose(f_hat(1.0, z, signal), signal.f1(z))

    def test_f_hat_integrates_to_one(self):
        for signal in (separated_signal(), mixture_gamma_signal()):
            rule = signal.quadrature()
            for x in (0.0, 0.37, 1.0):
                self.assertAlmostEqual(float(rule.integrate(f_hat(x, rule.nodes, signal))), 1.0, delta=1e-8)

    def test_f_hat_vanishes_outside_support(self):
        signal = mixture_gamma_signal()
        self.assertEqual(float(f_hat(0.5, -1.0, signal)), 0.0)


class RegimeSimulationTests(SimpleTestCase):

    def test_rejects_non_positive_horizon(self):
        with self.assertRaises(InvalidArgument):
            simulate_regime(RegimeParams(1.0, 1.0), 0.0, np.random.default_rng(0))

    def test_nearly_frozen_chain_does_not_switch(self):
        rng = np.random.default_rng(7)
        regime = RegimeParams(1e-9, 1e-9)
        still = sum(simulate_regime(regime, 1.0, rng).switches == 0 for _ in range(1000))
        self.assertGreaterEqual(still, 999)

    def test_switches_alternate(self):
        path = simulate_regime(RegimeParams(5.0, 5.0), 10.0, np.random.default_rng(3))
        self.assertTrue(np.all(path.states[1:] != path.states[:-1]))

    def test_stationary_fraction(self):
        regime = RegimeParams(1.0, 3.0)
        path = simulate_regime(regime, 4000.0, np.random.default_rng(11))
        fraction = float(path.occupation(4000.0)) / 4000.0
        # Mixing time 1/4; the sojourn fluctuation over 4000 time units is well below 0.02.
        self.assertAlmostEqual(fraction, regime.stationary_bull, delta=0.02)


class WorldSimulationTests(SimpleTestCase):

    def test_time_grid_validation(self):
        with self.assertRaises(InvalidArgument):
            time_grid(1.0, 0.0)
        with self.assertRaises(InvalidArgument):
            time_grid(1.0, 2.0)
        self.assertEqual(time_grid(1.0, 0.01).size, 101)

    def test_bit_reproducible(self):
        model = make_model()
        a = simulate_world(model, 1.0, 0.01, np.random.default_rng(5))
        b = simulate_world(model, 1.0, 0.01, np.random.default_rng(5))
        np.testing.assert_array_equal(a.S, b.S)
        np.testing.assert_array_equal(a.event_mark, b.event_mark)
        np.testing.assert_array_equal(a.alpha, b.alpha)

    def test_path_invariants(self):
        world = simulate_world(make_model(), 1.0, 0.01, np.random.default_rng(1))
        self.assertTrue(np.all(world.S > 0))
        self.assertTrue(set(np.unique(world.alpha)) <= {BULL, BEAR})
        self.assertTrue(np.all(np.diff(world.event_time) > 0))
        self.assertTrue(np.all(world.event_time <= 1.0))

    def test_zero_intensity_has_no_events(self):
        model = make_model(signal=separated_signal(lam=0.0))
        world = simulate_world(model, 1.0, 0.01, np.random.default_rng(2))
        self.assertEqual(world.events, [])

    def test_signal_intensity_does_not_move_brownian_path(self):
        rng_seed = 9
        quiet = simulate_world(make_model(signal=separated_signal(lam=0.0)), 1.0, 0.01, np.random.default_rng(rng_seed))
        busy = simulate_world(make_model(signal=separated_signal(lam=5.0)), 1.0, 0.01, np.random.default_rng(rng_seed))
        np.testing.assert_array_equal(quiet.dW, busy.dW)
        np.testing.assert_array_equal(quiet.alpha, busy.alpha)

    def test_discounted_asset_is_martingale(self):
        model = make_model(mu1=0.02, mu2=0.02)
        batch = simulate_world_batch(model, 1.0, 0.01, np.random.default_rng(4), 20000)
        ratio = np.exp(-0.02) * batch.S[:, -1] / batch.S[:, 0]
        stderr = ratio.std(ddof=1) / np.sqrt(ratio.size)
        self.assertLess(abs(ratio.mean() - 1.0), 3 * stderr + 1e-12)

    def test_event_counts_are_poisson(self):
        model = make_model(signal=separated_signal(lam=3.0))
        batch = simulate_world_batch(model, 2.0, 0.01, np.random.default_rng(8), 10000)
        counts = np.bincount(batch.event_path, minlength=batch.n_paths)
        stderr = counts.std(ddof=1) / np.sqrt(counts.size)
        self.assertLess(abs(counts.mean() - 6.0), 3 * stderr)

    def test_marks_follow_bull_density_when_pinned(self):
        model = make_model(signal=separated_signal(lam=5.0), a1=1e-9, a2=1e3, x0=1.0)
        batch = simulate_world_batch(model, 2.0, 0.01, np.random.default_rng(12), 1000)
        marks = batch.event_mark[:10000]
        self.assertGreater(marks.size, 5000)
        result = stats.kstest(marks, stats.norm(-1.0, np.sqrt(0.625)).cdf)
        self.assertGreater(result.pvalue, 0.01)


class SupportOverrideTests(SimpleTestCase):

    def test_densities_are_renormalised(self):
        signal = truncated_signal()
        rule = signal.quadrature()
        self.assertGreaterEqual(rule.nodes.min(), -0.5)
        self.assertLessEqual(rule.nodes.max(), 0.5)
        for x in (0.0, 0.4, 1.0):
            self.assertAlmostEqual(float(rule.integrate(f_hat(x, rule.nodes, signal))), 1.0, delta=1e-8)
        self.assertEqual(float(signal.f1(-0.6)), 0.0)

    def test_sampled_marks_stay_inside(self):
        signal = truncated_signal()
        rng = np.random.default_rng(17)
        for regime in (BULL, BEAR):
            marks = signal.sample(regime, 5000, rng)
            self.assertEqual(marks.size, 5000)
            self.assertTrue(np.all((marks >= -0.5) & (marks <= 0.5)))
        self.assertEqual(signal.sample(BULL, 0, rng).size, 0)

    def test_pinned_bull_marks_follow_truncated_law(self):
        model = make_model(signal=truncated_signal(), a1=1e-9, a2=1e3, x0=1.0)
        batch = simulate_world_batch(model, 2.0, 0.01, np.random.default_rng(13), 1000)
        marks = batch.event_mark[:10000]
        self.assertGreater(marks.size, 5000)
        sd = np.sqrt(0.625)
        law = stats.truncnorm((-0.5 + 1.0) / sd, (0.5 + 1.0) / sd, loc=-1.0, scale=sd)
        self.assertGreater(stats.kstest(marks, law.cdf).pvalue, 0.01)

    def test_rejects_support_without_mass(self):
        with self.assertRaises(InvalidArgument):
            SignalDensityPair(lam=1.0, family=SEPARATED_GAUSSIANS, support_override=(40.0, 50.0))
        with self.assertRaises(InvalidArgument):
            SignalDensityPair(lam=1.0, family=SEPARATED_GAUSSIANS, support_override=(1.0, 1.0))

    def test_family_distribution_functions(self):
        family = MixtureGammaFamily(0.5, 0.3)
        self.assertAlmostEqual(float(family.cdf(BULL, 1.0)), 0.3)
        self.assertAlmostEqual(family.mass(BULL, 0.0, np.inf), 1.0)
        self.assertAlmostEqual(family.mass(BEAR, -1.0, np.inf), 1.0)
        self.assertAlmostEqual(family.mass(BULL, 1.0, 2.0), 0.7 * (1.0 - np.exp(-1.0)))
        self.assertAlmostEqual(
            SEPARATED_GAUSSIANS.mass(BEAR, 0.0, 2.0), stats.norm(1.0, np.sqrt(0.5)).cdf(2.0) - 0.5,
        )
