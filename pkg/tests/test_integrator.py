import unittest

import numpy as np

from src.args import ExternalFieldConfig, InitialDatum, ScenarioConfig, SolverConfig, StepperConfig
from src.data.sampling import Ensemble, Particle
from src.exceptions import SimulationEvent, TimestepCollapse, WallCrossing
from src.physics.fields import ExternalField
from src.physics.integrator import SimState, advance, boris_push, boris_step, compute_dt, reference_fall, run
from src.physics.self_field import FieldSolver

NO_SELF_FIELD = SolverConfig(self_field=False)


def single(x, v, w=1.0):
    return Ensemble(np.array([x], dtype=float), np.array([v], dtype=float), np.array([w]))


class TestBoris(unittest.TestCase):

    def test_electric_only(self):
        particle = Particle(np.zeros(3), np.array([1.0, 0.0, 0.0]), 1.0)
        moved = boris_step(particle, [0.0, 2.0, 0.0], np.zeros(3), 0.1)
        np.testing.assert_allclose(moved.velocity, [1.0, 0.2, 0.0], rtol=1e-15)
        np.testing.assert_allclose(moved.position, [0.1, 0.02, 0.0], rtol=1e-15)
        self.assertEqual(moved.weight, 1.0)

    def test_rotation_is_exact_cayley(self):
        v = np.array([[0.3, -0.7, 0.2]])
        b = np.array([[0.0, 0.0, 4.0]])
        dt = 0.05
        _, v_new = boris_push(np.zeros((1, 3)), v, np.zeros((1, 3)), b, dt)
        # (v+ - v-) = (v+ + v-) x (b dt / 2)
        np.testing.assert_allclose(v_new - v, np.cross(v_new + v, 0.5 * dt * b), atol=1e-15)
        self.assertAlmostEqual(float(np.linalg.norm(v_new)), float(np.linalg.norm(v)), places=15)
        self.assertEqual(v_new[0, 2], v[0, 2])

    def test_drift_kick_drift_constant_force(self):
        x, v = np.array([[1.0, 2.0, 3.0]]), np.array([[0.5, -0.2, 0.1]])
        e = np.array([[0.3, 0.4, -1.0]])
        dt, steps = 0.01, 100
        for _ in range(steps):
            midpoint = x + 0.5 * dt * v
            x, v = boris_push(midpoint, v, e, np.zeros((1, 3)), dt, drift=0.5 * dt)
        t = dt * steps
        np.testing.assert_allclose(v, [[0.5, -0.2, 0.1]] + e * t, rtol=1e-12)
        np.testing.assert_allclose(x, [[1.0, 2.0, 3.0]] + np.array([[0.5, -0.2, 0.1]]) * t + 0.5 * e * t * t,
                                   rtol=1e-12)


class TestComputeDt(unittest.TestCase):

    def setUp(self):
        self.field = ExternalField(ExternalFieldConfig(mu=1.0, tau=6.0))

    def test_constraints(self):
        state = SimState.initial(single([0.5, 0.0, 0.0], [-1.0, 0.0, 0.0]), self.field)
        self.assertEqual(compute_dt(state, self.field, StepperConfig(dt_base=1e-3)), 1e-3)
        self.assertAlmostEqual(compute_dt(state, self.field, StepperConfig(dt_base=1.0)), 0.2 / 64.0, places=15)
        self.assertAlmostEqual(compute_dt(state, self.field, StepperConfig(dt_base=1.0, gyro_safety=1.0,
                                                                           wall_safety=0.01)), 0.005, places=15)

    def test_resting_particle(self):
        state = SimState.initial(single([3.0, 0.0, 0.0], [0.0, 1.0, 0.0]), self.field)
        self.assertEqual(compute_dt(state, self.field, StepperConfig(dt_base=0.1)), 0.1)

    def test_wall_crossing(self):
        state = SimState(time=0.0, ensemble=single([-1e-3, 0.0, 0.0], [-1.0, 0.0, 0.0]))
        with self.assertRaises(WallCrossing) as ctx:
            compute_dt(state, self.field, StepperConfig())
        self.assertEqual(ctx.exception.status, 'wall_crossing')
        self.assertIs(ctx.exception.state, state)

    def test_collapse(self):
        state = SimState.initial(single([1e-6, 0.0, 0.0], [-1.0, 0.0, 0.0]), self.field)
        with self.assertRaises(TimestepCollapse) as ctx:
            compute_dt(state, self.field, StepperConfig())
        self.assertEqual(ctx.exception.time, 0.0)


class TestAdvance(unittest.TestCase):

    def test_fall_matches_reference(self):
        field = ExternalField(ExternalFieldConfig(mu=1.0, tau=6.0, magnetic_enabled=False))
        solver = FieldSolver(NO_SELF_FIELD)
        cfg = StepperConfig(dt_base=1e-3)
        state = SimState.initial(single([1.5, 0.0, 0.0], [0.0, 0.0, 0.0]), field)
        times, x1 = [0.0], [1.5]
        while state.time < 0.8 - 1e-12:
            state = advance(state, solver, field, cfg, dt=1e-3)
            times.append(state.time)
            x1.append(state.ensemble.positions[0, 0])
        reference = reference_fall(field, 1.5, 0.0, np.array(times))
        np.testing.assert_allclose(x1, reference, atol=5e-5)
        self.assertLess(x1[-1], 1.5)

    def test_shield_residual_second_order(self):
        field = ExternalField(ExternalFieldConfig(mu=1.0, tau=6.0))
        solver = FieldSolver(NO_SELF_FIELD)
        cfg = StepperConfig(dt_base=1.0, gyro_safety=1.0, wall_safety=1.0)

        def worst_residual(dt):
            state = SimState.initial(single([0.8, 0.0, 0.0], [-0.3, 0.2, 0.1]), field)
            worst = 0.0
            for _ in range(int(round(1.0 / dt))):
                state = advance(state, solver, field, cfg, dt=dt)
                worst = max(worst, float(np.max(np.abs(state.shield_residual(field)))))
            return worst

        coarse, fine = worst_residual(2e-3), worst_residual(1e-3)
        self.assertGreater(coarse, 0.0)
        self.assertGreaterEqual(coarse / fine, 3.0)
        self.assertLessEqual(coarse / fine, 5.0)

    def test_shield_off_fall_terminates(self):
        field = ExternalField(ExternalFieldConfig(mu=1.0, tau=6.0, magnetic_enabled=False))
        solver = FieldSolver(NO_SELF_FIELD)
        cfg = StepperConfig()
        state = SimState.initial(single([0.6, 0.0, 0.0], [-0.5, 0.0, 0.0]), field)
        with self.assertRaises(SimulationEvent):
            for _ in range(100000):
                state = advance(state, solver, field, cfg)

    def test_midpoint_crossing(self):
        field = ExternalField(ExternalFieldConfig())
        state = SimState.initial(single([0.01, 0.0, 0.0], [-1.0, 0.0, 0.0]), field)
        with self.assertRaises(WallCrossing) as ctx:
            advance(state, FieldSolver(NO_SELF_FIELD), field, StepperConfig(), dt=0.1)
        self.assertAlmostEqual(ctx.exception.time, 0.05)

    def test_state_bookkeeping(self):
        field = ExternalField(ExternalFieldConfig())
        ensemble = Ensemble(np.array([[0.8, 0.0, 0.0], [1.2, 0.1, 0.0]]), np.zeros((2, 3)), np.array([0.5, 0.5]))
        state = SimState.initial(ensemble, field)
        new = advance(state, FieldSolver(SolverConfig(softening=1e-3)), field, StepperConfig(), dt=1e-3)
        self.assertEqual(new.step_index, 1)
        self.assertEqual(new.last_dt, 1e-3)
        self.assertEqual(new.fields_cache.shape, (2, 3))
        self.assertAlmostEqual(new.time, 1e-3)
        np.testing.assert_array_equal(state.ensemble.positions, ensemble.positions)


class TestRun(unittest.TestCase):

    def scenario(self, **overrides):
        return ScenarioConfig(datum=InitialDatum(), stepper=StepperConfig(dt_base=1e-3, t_end=0.05),
                              particle_count=16, record_cadence=10, **overrides)

    def test_completes(self):
        artifact = run(self.scenario(), disable_progress=True)
        self.assertEqual(artifact.status, 'completed')
        self.assertIsNone(artifact.error)
        self.assertAlmostEqual(artifact.state.time, 0.05, places=12)
        self.assertEqual(artifact.records[0].time, 0.0)
        self.assertEqual(artifact.records[-1].step_index, artifact.state.step_index)
        self.assertEqual(artifact.snapshots[0], (0, 0.0))
        self.assertEqual(artifact.snapshots[-1][0], artifact.state.step_index)
        for r in artifact.records:
            self.assertAlmostEqual(r.charge, 0.1, places=14)
            self.assertGreater(r.min_x1, 0.0)

    def test_deterministic(self):
        a = run(self.scenario(), disable_progress=True)
        b = run(self.scenario(), disable_progress=True)
        self.assertEqual([r.to_dict() for r in a.records], [r.to_dict() for r in b.records])
        np.testing.assert_array_equal(a.state.ensemble.as_table(), b.state.ensemble.as_table())

    def test_observers_and_snapshots(self):
        seen, written = [], []
        artifact = run(self.scenario(snapshot_cadence=20), observers=[lambda s: seen.append(s.step_index)],
                       snapshot_writer=lambda s: written.append(s.step_index), disable_progress=True)
        self.assertEqual(seen, list(range(1, artifact.state.step_index + 1)))
        self.assertEqual(written, [i for i, _ in artifact.snapshots])
        self.assertIn(20, written)

    def test_step_hook(self):
        artifact = run(self.scenario(), step_hook=lambda state, dt: min(dt, 5e-4), disable_progress=True)
        self.assertEqual(artifact.state.step_index, 100)

    def test_event_is_reported(self):
        datum = InitialDatum(box_min=(0.02, -0.5, -0.5), box_max=(0.03, 0.5, 0.5))
        scenario = ScenarioConfig(field=ExternalFieldConfig(magnetic_enabled=False), datum=datum,
                                  stepper=StepperConfig(t_end=5.0), particle_count=8)
        artifact = run(scenario, disable_progress=True)
        self.assertIn(artifact.status, ('wall_crossing', 'timestep_collapse'))
        self.assertIsInstance(artifact.error, SimulationEvent)
        self.assertLess(artifact.state.time, 5.0)


if __name__ == '__main__':
    unittest.main()
