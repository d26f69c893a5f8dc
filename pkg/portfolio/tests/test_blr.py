import numpy as np
from django.test import SimpleTestCase
from scipy.integrate import trapezoid
from scipy.special import gamma

from portfolio.blr import check_blr, d3_divergence, likelihood_ratio_bounds
from portfolio.densities import GaussianFamily, GaussianMixtureFamily, SignalDensityPair
from portfolio.exceptions import InvalidArgument, SupportMismatch

from .instances import gaussian_signal, mixture_gamma_signal, separated_signal, tabulated_signal, truncated_signal


def mixture_gamma_constants(a1, a2):
    b_max = max(1.0 / (a2 * a1), 1.0 / ((1.0 - a2) * np.e)) / gamma(a1)
    l_f = np.e ** 3 * gamma(a1) ** 2 * gamma(2.0 - 2.0 * a1) + 2.0 * np.e ** 2 * gamma(a1) ** 2 * a1 ** 2
    return b_max, l_f


class RatioBoundTests(SimpleTestCase):

    def test_identical_densities(self):
        self.assertEqual(likelihood_ratio_bounds(gaussian_signal()), (1.0, 1.0))

    def test_gaussian_closed_form(self):
        b_min, b_max = likelihood_ratio_bounds(separated_signal())
        self.assertEqual(b_min, 0.0)
        self.assertAlmostEqual(b_max / (np.sqrt(1.25) * np.exp(16.0)), 1.0, places=9)

    def test_scan_agrees_with_closed_form(self):
        b_min, b_max = likelihood_ratio_bounds(separated_signal(), method='scan')
        self.assertEqual(b_min, 0.0)
        self.assertAlmostEqual(b_max / (np.sqrt(1.25) * np.exp(16.0)), 1.0, delta=0.01)

    def test_mixture_gamma(self):
        for a1, a2 in ((0.5, 0.5), (0.3, 0.8)):
            b_min, b_max = likelihood_ratio_bounds(mixture_gamma_signal(a1, a2))
            expected, _ = mixture_gamma_constants(a1, a2)
            self.assertEqual(b_min, 0.0)
            self.assertAlmostEqual(b_max / expected, 1.0, delta=0.01)

    def test_swapping_densities_inverts_the_range(self):
        swapped = SignalDensityPair(lam=2.0, family=GaussianFamily(mean=(1.0, -1.0), var=(0.5, 0.625)))
        b_min, b_max = likelihood_ratio_bounds(swapped)
        self.assertEqual(b_max, np.inf)
        self.assertAlmostEqual(b_min * np.sqrt(1.25) * np.exp(16.0), 1.0, places=9)

    def test_common_shift_changes_nothing(self):
        shifted = SignalDensityPair(lam=2.0, family=GaussianFamily(mean=(2.0, 4.0), var=(0.625, 0.5)))
        np.testing.assert_allclose(likelihood_ratio_bounds(shifted), likelihood_ratio_bounds(separated_signal()))
        self.assertAlmostEqual(d3_divergence(shifted) / d3_divergence(separated_signal()), 1.0, places=9)

    def test_disjoint_supports(self):
        signal = tabulated_signal([0.0, 1.0, 2.0, 3.0], [1.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 1.0])
        with self.assertRaises(SupportMismatch):
            likelihood_ratio_bounds(signal)

    def test_unknown_method(self):
        with self.assertRaises(InvalidArgument):
            likelihood_ratio_bounds(separated_signal(), method='dense')


class DivergenceTests(SimpleTestCase):

    def test_identical_densities_have_zero_divergence(self):
        self.assertAlmostEqual(d3_divergence(gaussian_signal()), 0.0, delta=1e-10)

    def test_quadrature_matches_gaussian_closed_form(self):
        family = GaussianFamily(mean=(0.0, 0.5), var=(1.0, 1.2))
        closed = family.d3_closed_form()
        numeric = d3_divergence(SignalDensityPair(lam=1.0, family=family, support_override=(-np.inf, np.inf)))
        self.assertGreater(closed, 0.0)
        self.assertAlmostEqual(numeric / closed, 1.0, delta=1e-5)

    def test_truncated_support_matches_trapezoid(self):
        signal = truncated_signal()
        z = np.linspace(-0.5, 0.5, 200001)
        self.assertAlmostEqual(float(trapezoid(signal.f1(z), z)), 1.0, delta=1e-9)
        expected = (trapezoid(signal.f1(z) ** 3 / signal.f2(z) ** 2, z) - 1.0) / 6.0
        self.assertAlmostEqual(d3_divergence(signal) / expected, 1.0, delta=1e-6)

    def test_truncation_decides_finiteness(self):
        family = GaussianFamily(mean=(0.0, 0.0), var=(1.0, 0.5))
        self.assertFalse(family.d3_finite())
        bounded = SignalDensityPair(lam=1.0, family=family, support_override=(-1.0, 1.0))
        self.assertTrue(np.isfinite(d3_divergence(bounded)))
        half_line = SignalDensityPair(lam=1.0, family=family, support_override=(-np.inf, 0.0))
        self.assertEqual(d3_divergence(half_line), np.inf)

    def test_separated_gaussians_are_finite(self):
        d3 = d3_divergence(separated_signal())
        self.assertTrue(np.isfinite(d3))
        self.assertGreater(d3, 0.0)

    def test_wide_bull_density_diverges(self):
        signal = SignalDensityPair(lam=1.0, family=GaussianFamily(mean=(0.0, 0.0), var=(4.0, 1.0)))
        self.assertEqual(d3_divergence(signal), np.inf)

    def test_mixture_gamma_below_budget(self):
        _, l_f = mixture_gamma_constants(0.5, 0.5)
        d3 = d3_divergence(mixture_gamma_signal(0.5, 0.5))
        self.assertTrue(0.0 < d3 < l_f)


class CheckBlrTests(SimpleTestCase):

    def test_separated_gaussians_pass(self):
        report = check_blr(separated_signal())
        self.assertTrue(report.passes)
        self.assertEqual(report.method, 'analytic')
        self.assertEqual(report.reasons, [])

    def test_mixture_gamma_passes_with_its_budget(self):
        _, l_f = mixture_gamma_constants(0.5, 0.5)
        report = check_blr(mixture_gamma_signal(0.5, 0.5), l_f_budget=l_f)
        self.assertTrue(report.passes)
        self.assertEqual(report.method, 'scan')

    def test_tiny_budget_fails(self):
        report = check_blr(separated_signal(), l_f_budget=1e-6)
        self.assertFalse(report.passes)
        self.assertIn('budget', report.reasons[0])

    def test_uninformative_pair_fails_with_flag(self):
        report = check_blr(gaussian_signal())
        self.assertFalse(report.passes)
        self.assertTrue(report.uninformative)
        self.assertEqual(report.d3, 0.0)

    def test_infinite_divergence_fails(self):
        signal = SignalDensityPair(lam=1.0, family=GaussianFamily(mean=(0.0, 0.0), var=(4.0, 1.0)))
        report = check_blr(signal)
        self.assertFalse(report.passes)
        self.assertIn('D3 is infinite', report.reasons)
        self.assertEqual(report.to_dict()['d3'], 'inf')

    def test_rejects_non_positive_budget(self):
        with self.assertRaises(InvalidArgument):
            check_blr(separated_signal(), l_f_budget=0.0)


class GaussianMixtureTests(SimpleTestCase):

    def test_single_component_matches_gaussian(self):
        family = GaussianMixtureFamily(weights=[1.0], means=[-1.0], vars=[0.625], mean=1.0, var=0.5)
        _, b_max = likelihood_ratio_bounds(SignalDensityPair(lam=2.0, family=family))
        self.assertAlmostEqual(b_max / (np.sqrt(1.25) * np.exp(16.0)), 1.0, delta=0.01)

    def test_two_components_pass(self):
        family = GaussianMixtureFamily(weights=[0.5, 0.5], means=[-1.0, -2.0], vars=[0.625, 0.625], mean=1.0, var=0.5)
        report = check_blr(SignalDensityPair(lam=2.0, family=family))
        self.assertTrue(report.passes)
        self.assertEqual(report.method, 'scan')
        self.assertLess(report.b_min_est, 1.0)
        self.assertTrue(np.isfinite(report.b_max_est))

    def test_narrow_component_breaks_divergence(self):
        family = GaussianMixtureFamily(weights=[0.9, 0.1], means=[0.0, 0.0], vars=[1.0, 0.2], mean=0.0, var=0.5)
        self.assertFalse(family.d3_finite())
        self.assertEqual(d3_divergence(SignalDensityPair(lam=1.0, family=family)), np.inf)

    def test_weights_must_sum_to_one(self):
        with self.assertRaises(InvalidArgument):
            GaussianMixtureFamily(weights=[0.5, 0.2], means=[0.0, 1.0], vars=[1.0, 1.0], mean=0.0, var=1.0)
