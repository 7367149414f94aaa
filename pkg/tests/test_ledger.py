import json
import random
import unittest
from fractions import Fraction

from src.analysis.ledger import Interval, LedgerInput, build_report, check_shield_condition, compute_intervals, \
    ladder_schedule, lbar_for
from src.exceptions import DegenerateLadder, FieldDomainError, InfeasibleInput


class TestShieldCondition(unittest.TestCase):

    def test_exact_boundary(self):
        self.assertTrue(check_shield_condition(1, 6))
        self.assertFalse(check_shield_condition(1, Fraction(11, 2)))
        self.assertFalse(check_shield_condition(1, 5.5))
        self.assertFalse(check_shield_condition(2, '31/4'))
        self.assertTrue(check_shield_condition(2, '7.76'))

    def test_domain(self):
        with self.assertRaises(FieldDomainError):
            check_shield_condition(0, 6)
        with self.assertRaises(FieldDomainError):
            check_shield_condition(1, 1)


class TestIntervals(unittest.TestCase):

    def setUp(self):
        self.report = compute_intervals(LedgerInput.from_values(1, 6))

    def test_ranges(self):
        ranges = self.report.ranges
        self.assertEqual(ranges['eta'].inner(), (Fraction(1, 10), Fraction(7, 15)))
        self.assertEqual(ranges['nu'].inner(), (Fraction(19, 10), Fraction(2)))
        self.assertEqual(ranges['beta'].inner(), (Fraction(4, 3), Fraction(91, 60)))
        self.assertEqual(ranges['xi'].inner(), (Fraction(0), Fraction(7, 40)))
        self.assertEqual(self.report.empty, [])
        self.assertTrue(self.report.feasible)
        self.assertTrue(self.report.weak_condition_ok)
        self.assertEqual(self.report.gamma_prime, Fraction(3, 5))

    def test_chosen(self):
        chosen = self.report.chosen
        self.assertEqual(chosen.eta, Fraction(17, 60))
        self.assertEqual(chosen.beta, Fraction(57, 40))
        self.assertEqual(chosen.c, Fraction(11, 120))
        self.assertEqual(chosen.delta, Fraction(11, 240))
        self.assertEqual(chosen.nu, Fraction(39, 20))
        self.assertEqual(chosen.zeta, Fraction(9, 4) * chosen.nu)
        self.assertEqual(chosen.q, Fraction(7, 12))
        self.assertEqual(self.report.c_of(chosen.eta, chosen.beta), chosen.c)

    def test_corollary_exponents(self):
        exponents = self.report.corollary_exponents
        self.assertEqual(exponents['magnetic'], Fraction(6, 5))
        self.assertEqual(exponents['wall_force'], Fraction(2, 5))
        self.assertEqual(exponents['kinetic'], Fraction(1, 5))
        self.assertEqual(exponents['field_average'], Fraction(9, 5))

    def test_rejected_on_boundary(self):
        for mu, tau in ((1, Fraction(11, 2)), (2, Fraction(31, 4)), (1, 4)):
            with self.assertRaises(InfeasibleInput):
                compute_intervals(LedgerInput.from_values(mu, tau))

    def test_input_domain(self):
        with self.assertRaises(FieldDomainError):
            compute_intervals(LedgerInput.from_values(1, 6, gamma=Fraction(2, 3)))
        with self.assertRaises(FieldDomainError):
            compute_intervals(LedgerInput.from_values(1, 6, vmax=Fraction(1, 2)))
        with self.assertRaises(FieldDomainError):
            compute_intervals(LedgerInput.from_values(-1, 6))

    def test_feasible_inputs_never_empty(self):
        rng = random.Random(0)
        for _ in range(100):
            mu = Fraction(rng.randint(1, 20), rng.randint(1, 10))
            tau = 1 + Fraction(9, 4) * (mu + 1) + Fraction(rng.randint(1, 50), 10)
            gamma = Fraction(rng.randint(1, 65), 100)
            report = compute_intervals(LedgerInput.from_values(mu, tau, gamma=gamma))
            self.assertEqual(report.empty, [], msg=f'mu={mu}, tau={tau}, gamma={gamma}')
            chosen = report.chosen
            self.assertIsNotNone(chosen)
            for name in ('eta', 'beta', 'delta', 'xi', 'nu', 'q'):
                self.assertTrue(report.ranges[name].contains(getattr(chosen, name)), msg=name)
            self.assertGreater(chosen.c, 0)


class TestIntervalMode(unittest.TestCase):

    def test_encloses_exact(self):
        exact = compute_intervals(LedgerInput.from_values(1, 6))
        rounded = compute_intervals(LedgerInput.from_values(1, 6, exact=False))
        self.assertEqual(rounded.empty, [])
        for name in 'eta', 'xi', 'nu', 'q':
            interval = rounded.ranges[name]
            lo, hi = interval.inner()
            exact_lo, exact_hi = exact.ranges[name].inner()
            self.assertGreaterEqual(Fraction(lo), exact_lo, msg=name)
            self.assertLessEqual(Fraction(hi), exact_hi, msg=name)
            self.assertAlmostEqual(float(lo), float(exact_lo), places=12)
            self.assertAlmostEqual(float(hi), float(exact_hi), places=12)
        self.assertAlmostEqual(float(rounded.chosen.eta), 17 / 60, places=12)
        self.assertAlmostEqual(float(rounded.chosen.delta), 11 / 240, places=12)

    def test_boundary_is_rejected(self):
        with self.assertRaises(InfeasibleInput):
            compute_intervals(LedgerInput.from_values(1, 5.5, exact=False))

    def test_arithmetic_is_outward(self):
        third = Interval.enclose(Fraction(1, 3))
        self.assertLess(Fraction(third.lo), Fraction(1, 3))
        self.assertGreater(Fraction(third.hi), Fraction(1, 3))
        total = third + third + third
        self.assertLess(total.lo, 1.0)
        self.assertGreater(total.hi, 1.0)
        with self.assertRaises(ZeroDivisionError):
            Interval(1.0) / Interval(-1.0, 1.0)


class TestLadder(unittest.TestCase):

    def test_lbar(self):
        self.assertEqual(lbar_for(1, 6, Fraction(11, 240), Fraction(11, 120)), 16)

    def test_degenerate_at_small_scale(self):
        inp = LedgerInput.from_values(1, 6)
        chosen = compute_intervals(inp).chosen
        with self.assertRaises(DegenerateLadder):
            ladder_schedule(inp, chosen)
        with self.assertLogs('src.analysis.ledger', level='WARNING'):
            report = build_report(inp)
        self.assertIsNone(report.ladder)
        self.assertIn('Intg', report.ladder_error)
        self.assertTrue(report.feasible)

    def test_large_scale(self):
        report = build_report(LedgerInput.from_values(1, 6, vmax=10 ** 7))
        ladder = report.ladder
        self.assertEqual(ladder.g_factor, 2)
        self.assertEqual(ladder.lbar, 16)
        self.assertEqual(len(ladder.schedule), 16)
        self.assertAlmostEqual(ladder.delta1 * 4.0 * 1e7 ** (101 / 60), 1.0, places=9)
        for a, b in zip(ladder.schedule, ladder.schedule[1:]):
            self.assertEqual(b, 2 * a)

    def test_factor_override(self):
        inp = LedgerInput.from_values(1, 6)
        ladder = ladder_schedule(inp, compute_intervals(inp).chosen, factor=3)
        self.assertEqual(ladder.g_factor, 3)
        self.assertEqual(ladder.schedule[1], 3 * ladder.schedule[0])


class TestRendering(unittest.TestCase):

    def test_json(self):
        data = json.loads(build_report(LedgerInput.from_values(1, 6, vmax=10 ** 7)).to_json())
        self.assertEqual(data['ranges']['eta'], ['1/10', '7/15'])
        self.assertEqual(data['ranges']['nu'], ['19/10', '2'])
        self.assertEqual(data['chosen']['eta'], '17/60')
        self.assertEqual(data['chosen']['beta'], '57/40')
        self.assertEqual(data['ladder']['lbar'], 16)
        self.assertTrue(data['shield_ok'])

    def test_table(self):
        text = build_report(LedgerInput.from_values(1, 6, vmax=10 ** 7)).to_table().get_string()
        self.assertIn('ranges.eta', text)
        self.assertIn('chosen.delta', text)


if __name__ == '__main__':
    unittest.main()
