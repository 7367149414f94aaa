import unittest

import numpy as np

from src.analysis.cutoff_ladder import ConvergencePair, convergence_report, integral_bound_holds, run_pair, \
    shell_count
from src.args import InitialDatum, ScenarioConfig, SolverConfig, StepperConfig
from src.data.sampling import acceptance_probability, shell_probability


def synthetic_pair(cutoff_n, sup_sigma, seed=0, vmax_n=None):
    times = np.linspace(0.0, 1.0, 5)
    sigma = np.linspace(0.0, sup_sigma, 5)
    return ConvergencePair(cutoff_n=cutoff_n, seed=seed, times=times, delta_series=0.5 * sigma,
                           eta_series=0.5 * sigma, sigma_series=sigma, eta_integral_series=np.zeros(5),
                           sup_sigma=sup_sigma, vmax_n=cutoff_n if vmax_n is None else vmax_n, shell_count=0)


class TestShellCount(unittest.TestCase):

    def test_matches_density(self):
        datum = InitialDatum(lam=1.0)
        n = 1.5
        expected = 1000 * shell_probability(datum, n, n + 1) / acceptance_probability(InitialDatum(cutoff_n=n))
        self.assertEqual(shell_count(datum, 1000, n), int(round(expected)))
        self.assertEqual(shell_count(datum, 1000, 12.0), 0)


class TestRunPair(unittest.TestCase):

    def scenario(self, **solver):
        return ScenarioConfig(solver=SolverConfig(softening=1e-3, **solver),
                              stepper=StepperConfig(dt_base=1e-3, t_end=0.05), particle_count=48, seed=5)

    def test_external_fields_only(self):
        pair = run_pair(self.scenario(self_field=False), 1.0, disable_progress=True)
        self.assertGreater(pair.shell_count, 0)
        self.assertLess(pair.sup_sigma, 1e-12)
        self.assertEqual(len(pair.times), len(pair.sigma_series))

    def test_empty_shell(self):
        pair = run_pair(self.scenario(), 12.0, disable_progress=True)
        self.assertEqual(pair.shell_count, 0)
        self.assertEqual(pair.sup_sigma, 0.0)

    def test_shell_perturbs_common_particles(self):
        pair = run_pair(self.scenario(), 1.0, disable_progress=True)
        self.assertGreater(pair.sup_sigma, 0.0)
        np.testing.assert_allclose(pair.sigma_series, pair.delta_series + pair.eta_series)
        self.assertAlmostEqual(pair.times[-1], 0.05, places=12)
        self.assertTrue(integral_bound_holds(pair))
        self.assertGreaterEqual(pair.vmax_n, 0.0)
        self.assertEqual(list(pair.rows())[0], {'time': 0.0, 'delta': 0.0, 'eta': 0.0, 'sigma': 0.0,
                                                'eta_integral': 0.0})

    def test_seed(self):
        a = run_pair(self.scenario(), 1.0, seed=1, disable_progress=True)
        b = run_pair(self.scenario(), 1.0, seed=1, disable_progress=True)
        np.testing.assert_array_equal(a.sigma_series, b.sigma_series)


class TestConvergenceReport(unittest.TestCase):

    def test_monotone(self):
        report = convergence_report([synthetic_pair(3.0, 0.4), synthetic_pair(4.0, 0.2), synthetic_pair(5.0, 0.1)])
        self.assertTrue(report.monotone)
        self.assertEqual(list(report.table['N']), [3.0, 4.0, 5.0])
        self.assertTrue(np.isnan(report.table['ratio'].iloc[0]))
        self.assertAlmostEqual(report.table['ratio'].iloc[1], 0.5)
        self.assertEqual(list(report.table.columns),
                         ['N', 'repeats', 'sup_sigma', 'sup_sigma_std', 'ratio', 'vmax_over_n', 'monotone'])

    def test_not_monotone(self):
        report = convergence_report([synthetic_pair(3.0, 0.2), synthetic_pair(4.0, 0.3)])
        self.assertFalse(report.monotone)

    def test_noise_band(self):
        noisy = [synthetic_pair(3.0, s, seed=k) for k, s in enumerate((0.2, 0.4, 0.3))] + \
                [synthetic_pair(4.0, s, seed=k) for k, s in enumerate((0.1, 0.35, 0.2))]
        report = convergence_report(noisy)
        self.assertFalse(report.monotone)
        self.assertEqual(list(report.table['repeats']), [3, 3])

        separated = [synthetic_pair(3.0, s, seed=k) for k, s in enumerate((0.40, 0.41, 0.39))] + \
                    [synthetic_pair(4.0, s, seed=k) for k, s in enumerate((0.10, 0.11, 0.09))]
        self.assertTrue(convergence_report(separated).monotone)

    def test_needs_two_cutoffs(self):
        with self.assertRaises(ValueError):
            convergence_report([synthetic_pair(3.0, 0.1), synthetic_pair(3.0, 0.2, seed=1)])


if __name__ == '__main__':
    unittest.main()
