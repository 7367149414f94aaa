import math
import unittest

import numpy as np

from src.analysis.diagnostics import DiagRecord, FieldAverageTracker, Recorder, confinement_bound_check, \
    corollary_check, energy_drift, field_time_average, gaussian_tail_check, record, run_schedule, \
    tracked_indices, velocity_window_report, window_averages
from src.args import DiagnosticsConfig, ExternalFieldConfig, InitialDatum, SolverConfig
from src.data.sampling import sample
from src.exceptions import InsufficientSample, WindowTooShort
from src.physics.fields import ExternalField
from src.physics.integrator import SimState
from src.physics.self_field import FieldSolver


def make_record(time, min_x1, running_max_speed=1.0, **values):
    data = dict(time=time, step_index=0, dt=0.0, kinetic=1.0, potential_self=0.0, potential_external=0.0,
                total_energy=1.0, kinetic_bound=1.0, min_x1=min_x1, max_speed=running_max_speed,
                running_max_speed=running_max_speed, displacement_R=1.0, charge=0.1, shield_residual_max=0.0,
                l53_norm=0.0, max_magnetic=1.0, max_wall_force=1.0)
    data.update(values)
    return DiagRecord(**data)


class TestWindowAverages(unittest.TestCase):

    def test_constant_series(self):
        times = np.linspace(0.0, 4.0, 401)
        averages = field_time_average(times, np.full(401, 2.5), [0.1, 0.2, 0.4, 0.8])
        self.assertEqual(sorted(averages), [1, 2, 3, 4])
        for value in averages.values():
            self.assertAlmostEqual(value, 2.5, places=12)

    def test_non_increasing_in_level(self):
        rng = np.random.default_rng(0)
        times = np.cumsum(np.concatenate([[0.0], rng.uniform(0.005, 0.015, size=999)]))
        values = rng.exponential(size=(1000, 5))
        levels = [0.05 * 2 ** k for k in range(6)]
        averages = field_time_average(times, values, levels, offset=0.013)
        ordered = [averages[k] for k in sorted(averages)]
        for small, large in zip(ordered, ordered[1:]):
            self.assertGreaterEqual(small, large - 1e-12)

    def test_incomplete_levels_omitted(self):
        times = np.linspace(0.0, 1.0, 101)
        averages = field_time_average(times, np.ones(101), [0.3, 0.6, 1.2])
        self.assertEqual(sorted(averages), [1, 2])

    def test_too_short(self):
        with self.assertRaises(WindowTooShort):
            window_averages(np.linspace(0.0, 1.0, 11), np.linspace(0.0, 1.0, 11), [0.15])

    def test_tracker(self):
        field = ExternalField(ExternalFieldConfig())
        ensemble = sample(InitialDatum(), 6, seed=0)
        tracker = FieldAverageTracker([0, 3])
        state = SimState.initial(ensemble, field)
        tracker.start(state)
        for k in range(1, 41):
            cache = np.zeros((6, 3))
            cache[:, 0] = 3.0
            state = SimState(time=0.01 * k, ensemble=ensemble, step_index=k, last_dt=0.01, fields_cache=cache)
            tracker.update(state)
        self.assertEqual(tracker.velocities.shape, (41, 2, 3))
        averages = tracker.averages([0.05, 0.1])
        self.assertAlmostEqual(averages[1], 3.0, places=12)
        self.assertAlmostEqual(averages[2], 3.0, places=12)

    def test_tracked_indices(self):
        np.testing.assert_array_equal(tracked_indices(10, 3), [0, 4, 9])
        np.testing.assert_array_equal(tracked_indices(2, 32), [0, 1])


class TestConfinement(unittest.TestCase):

    def test_bounded(self):
        records = [make_record(t, 0.5, running_max_speed=2.0) for t in np.linspace(0.0, 5.0, 30)]
        report = confinement_bound_check(records, tau=6.0)
        self.assertTrue(report.passed)
        self.assertAlmostEqual(report.c_hat, 0.5 ** -5 / 2.0)

    def test_wall_reached(self):
        records = [make_record(0.0, 0.5), make_record(1.0, 0.1), make_record(2.0, 0.0)]
        report = confinement_bound_check(records, tau=6.0, status='wall_crossing')
        self.assertFalse(report.passed)
        self.assertTrue(math.isinf(report.c_hat))

    def test_growing_ratio(self):
        times = np.linspace(0.0, 3.0, 30)
        records = [make_record(t, 0.9 - 0.25 * t) for t in times]
        report = confinement_bound_check(records, tau=6.0)
        self.assertFalse(report.passed)
        self.assertGreater(report.slope, 0.0)

    def test_status_fails(self):
        records = [make_record(t, 0.5) for t in np.linspace(0.0, 1.0, 10)]
        self.assertFalse(confinement_bound_check(records, tau=6.0, status='timestep_collapse').passed)


class TestTail(unittest.TestCase):

    def test_maxwellian(self):
        rng = np.random.default_rng(1)
        speeds = np.linalg.norm(rng.normal(0.0, math.sqrt(0.5), size=(100000, 3)), axis=1)
        report = gaussian_tail_check(speeds)
        self.assertTrue(report.passed)
        self.assertAlmostEqual(report.lambda1, 1.0, delta=0.1)
        self.assertEqual(report.table().shape[1], 3)

    def test_heavy_tail_fails(self):
        rng = np.random.default_rng(2)
        speeds = np.abs(rng.standard_cauchy(size=100000))
        speeds = speeds[speeds < 20.0]
        try:
            report = gaussian_tail_check(speeds)
        except InsufficientSample:
            return
        self.assertFalse(report.passed)

    def test_insufficient(self):
        with self.assertRaises(InsufficientSample):
            gaussian_tail_check(np.ones(100))
        with self.assertRaises(InsufficientSample):
            gaussian_tail_check(np.random.default_rng(0).uniform(size=500), min_particles=100)


class TestSchedule(unittest.TestCase):

    def test_degenerate_ladder_uses_floor(self):
        ensemble = sample(InitialDatum(), 64, seed=0)
        with self.assertLogs('src.analysis.diagnostics', level='WARNING'):
            schedule = run_schedule(ExternalFieldConfig(), InitialDatum(), ensemble, DiagnosticsConfig())
        self.assertTrue(schedule.degenerate)
        self.assertEqual(schedule.factor, 2)
        self.assertEqual(len(schedule.levels), schedule.lbar)
        for a, b in zip(schedule.levels, schedule.levels[1:]):
            self.assertAlmostEqual(b, 2 * a)

    def test_cutoff_sets_velocity_scale(self):
        datum = InitialDatum(cutoff_n=3.0)
        schedule = run_schedule(ExternalFieldConfig(), datum, sample(datum, 16, seed=0), DiagnosticsConfig())
        self.assertEqual(schedule.vmax, 3.0)

    def test_infeasible(self):
        ensemble = sample(InitialDatum(), 16, seed=0)
        self.assertIsNone(run_schedule(ExternalFieldConfig(tau=4.0), InitialDatum(), ensemble, DiagnosticsConfig()))


class TestRecord(unittest.TestCase):

    def setUp(self):
        self.field = ExternalField(ExternalFieldConfig())
        self.solver = FieldSolver(SolverConfig(softening=1e-3))
        self.ensemble = sample(InitialDatum(), 50, seed=3)

    def test_energies(self):
        state = SimState.initial(self.ensemble, self.field)
        rec = record(state, self.solver, self.field, DiagnosticsConfig())
        self.assertAlmostEqual(rec.total_energy, rec.kinetic + rec.potential_self + rec.potential_external)
        self.assertLessEqual(rec.kinetic, rec.kinetic_bound)
        self.assertGreater(rec.potential_self, 0.0)
        self.assertLess(rec.potential_external, 0.0)
        self.assertEqual(rec.shield_residual_max, 0.0)
        self.assertEqual(rec.running_max_speed, max(1.0, rec.max_speed))
        self.assertEqual(DiagRecord.from_dict(rec.to_dict()), rec)

    def test_recorder_cadence(self):
        recorder = Recorder(self.solver, self.field, DiagnosticsConfig(), cadence=3)
        state = SimState.initial(self.ensemble, self.field)
        recorder.start(state)
        for k in range(1, 8):
            state = SimState(time=0.01 * k, ensemble=self.ensemble, step_index=k, last_dt=0.01,
                             shield_origin=state.shield_origin, e2_integral=state.e2_integral)
            recorder(state)
        recorder.finish(state)
        self.assertEqual([r.step_index for r in recorder.records], [0, 3, 6, 7])
        running = max(1.0, float(np.max(self.ensemble.speeds())))
        self.assertAlmostEqual(recorder.records[-1].displacement_R, 1.0 + 0.07 * running)


class TestReports(unittest.TestCase):

    def test_velocity_windows(self):
        times = np.linspace(0.0, 1.0, 101)
        velocities = np.zeros((101, 4, 3))
        velocities[:, 1, 2] = 1.0
        velocities[:, 3, 2] = 1.0 + times
        report = velocity_window_report(times, velocities, [0.1, 0.2, 2.0])
        self.assertEqual(report[1], 1.0)
        self.assertEqual(report[2], 1.0)
        self.assertIsNone(report[3])

    def test_corollary_and_drift(self):
        records = [make_record(0.0, 0.5, kinetic=2.0, total_energy=-1.0),
                   make_record(1.0, 0.5, kinetic=3.0, total_energy=-1.001, max_magnetic=8.0)]
        ratios = corollary_check(records, ExternalFieldConfig(mu=1.0, tau=6.0), cutoff_n=4.0)
        self.assertEqual(ratios['scale'], 4.0)
        self.assertAlmostEqual(ratios['magnetic'], 8.0 / 4.0 ** 1.2)
        self.assertAlmostEqual(ratios['kinetic'], 3.0 / 4.0 ** 0.2)
        self.assertAlmostEqual(energy_drift(records), 1e-3)


if __name__ == '__main__':
    unittest.main()
