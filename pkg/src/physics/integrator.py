"""
Time stepping of the characteristics

    dX/dt = V,    dV/dt = E(X, t) + V x B(X) - grad U(X),

with a global adaptive step and a drift-kick-drift composition whose kick is the
Boris scheme: half electric kick, exact rotation about B, half electric kick.
"""
import logging
from dataclasses import dataclass, field as dataclass_field, replace
from typing import Callable, List, Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from tqdm import tqdm

from src.analysis.diagnostics import Recorder, run_schedule, tracked_indices
from src.args import ScenarioConfig, StepperConfig
from src.data.sampling import Ensemble, Particle, sample
from src.exceptions import SimulationEvent, TimestepCollapse, WallCrossing
from src.physics.fields import ExternalField
from src.physics.self_field import FieldSolver, default_softening

logger = logging.getLogger(__name__)

SPEED_FLOOR = 1e-12
HORIZON_TOLERANCE = 1e-12


@dataclass
class SimState:
    time: float
    ensemble: Ensemble
    step_index: int = 0
    last_dt: float = 0.0
    fields_cache: Optional[np.ndarray] = None
    # V2(0) + H(X1(0)) per particle, and the running sum of dt * e2 over the steps
    shield_origin: Optional[np.ndarray] = None
    e2_integral: Optional[np.ndarray] = None

    @classmethod
    def initial(cls, ensemble: Ensemble, field: ExternalField, time=0.0):
        origin = ensemble.velocities[:, 1] + field.magnetic_primitive(ensemble.positions[:, 0])
        return cls(time=time, ensemble=ensemble, shield_origin=origin, e2_integral=np.zeros(len(ensemble)))

    def shield_residual(self, field: ExternalField):
        """V2(t) - V2(0) + H(X1(t)) - H(X1(0)) - int_0^t e2 ds, per particle."""
        x1 = self.ensemble.positions[:, 0]
        return (self.ensemble.velocities[:, 1] + field.magnetic_primitive(x1)
                - self.shield_origin - self.e2_integral)

    def copy(self):
        return replace(self,
                       ensemble=self.ensemble.copy(),
                       fields_cache=None if self.fields_cache is None else self.fields_cache.copy(),
                       shield_origin=None if self.shield_origin is None else self.shield_origin.copy(),
                       e2_integral=None if self.e2_integral is None else self.e2_integral.copy())


@dataclass
class RunArtifact:
    state: SimState
    records: list
    snapshots: List[tuple] = dataclass_field(default_factory=list)
    status: str = 'completed'
    error: Optional[SimulationEvent] = None
    schedule: Optional[object] = None
    softening: float = 0.0
    tracker: Optional[object] = None


def boris_push(positions, velocities, e_total, b, dt, drift=None):
    """
    Vectorized Boris update with unit charge-to-mass ratio.

    Args:
        drift: length of the position drift with the new velocity; defaults to dt.
    Returns:
        (positions, velocities) after the step.
    """
    drift = dt if drift is None else drift
    half = 0.5 * dt
    v_minus = velocities + half * e_total
    t = half * b
    s = 2.0 * t / (1.0 + np.sum(t * t, axis=-1, keepdims=True))
    v_prime = v_minus + np.cross(v_minus, t)
    v_plus = v_minus + np.cross(v_prime, s)
    v_new = v_plus + half * e_total
    return positions + drift * v_new, v_new


def boris_step(particle: Particle, e_total, b, dt, drift=None):
    position, velocity = boris_push(np.asarray(particle.position, dtype=float),
                                    np.asarray(particle.velocity, dtype=float),
                                    np.asarray(e_total, dtype=float), np.asarray(b, dtype=float), dt, drift)
    return Particle(position, velocity, particle.weight)


def compute_dt(state: SimState, field: ExternalField, cfg: StepperConfig):
    """
    dt = min(dt_base, gyro_safety / max|B|, wall_safety * min x1 / max(|v1|, 1e-12)).

    Raises:
        WallCrossing: a particle is already at x1 <= 0.
        TimestepCollapse: dt < dt_min.
    """
    x1 = state.ensemble.positions[:, 0]
    if np.any(x1 <= 0):
        raise WallCrossing(f'particle at x1={np.min(x1):.3e} at t={state.time:.6g}', state)
    dt = cfg.dt_base
    b_max = float(np.max(field.magnetic_profile(x1)))
    if b_max > 0:
        dt = min(dt, cfg.gyro_safety / b_max)
    v1 = np.maximum(np.abs(state.ensemble.velocities[:, 0]), SPEED_FLOOR)
    dt = min(dt, cfg.wall_safety * float(np.min(x1 / v1)))
    if dt < cfg.dt_min:
        raise TimestepCollapse(f'dt={dt:.3e} < dt_min={cfg.dt_min:.1e} at t={state.time:.6g} '
                               f'(min x1={np.min(x1):.3e})', state)
    return dt


def advance(state: SimState, solver: FieldSolver, field: ExternalField, cfg: StepperConfig, dt=None):
    """
    One global step: half drift, fields at the midpoint, Boris kick, half drift.

    The midpoint self-field is kept in `fields_cache` and the second component of the total
    midpoint force feeds the shield residual quadrature.
    """
    if dt is None:
        dt = compute_dt(state, field, cfg)
    ensemble = state.ensemble
    midpoint = ensemble.positions + 0.5 * dt * ensemble.velocities
    if np.any(midpoint[:, 0] <= 0):
        crossed = Ensemble(midpoint, ensemble.velocities, ensemble.weights)
        raise WallCrossing(f'wall crossed during the step from t={state.time:.6g}',
                           replace(state, ensemble=crossed, time=state.time + 0.5 * dt))

    e_self = solver.all_fields(Ensemble(midpoint, ensemble.velocities, ensemble.weights))
    e_total = e_self + field.total_external_force(midpoint)
    b = field.magnetic_field(midpoint)
    positions, velocities = boris_push(midpoint, ensemble.velocities, e_total, b, dt, drift=0.5 * dt)

    new_state = SimState(time=state.time + dt,
                         ensemble=Ensemble(positions, velocities, ensemble.weights),
                         step_index=state.step_index + 1,
                         last_dt=dt,
                         fields_cache=e_self,
                         shield_origin=state.shield_origin,
                         e2_integral=state.e2_integral + dt * e_total[:, 1])
    if np.any(positions[:, 0] <= 0):
        raise WallCrossing(f'wall crossed at t={new_state.time:.6g}', new_state)
    return new_state


def resolve_softening(scenario: ScenarioConfig):
    if scenario.solver.softening is not None:
        return scenario.solver.softening
    return default_softening(scenario.datum, scenario.particle_count)


def run(scenario: ScenarioConfig, ensemble: Optional[Ensemble] = None,
        observers: Sequence[Callable] = (), step_hook: Optional[Callable] = None,
        snapshot_writer: Optional[Callable] = None, disable_progress=False):
    """Integrate a scenario to t_end or to its first terminal event, which ends up in `status` and `error`."""
    field = ExternalField(scenario.field)
    if ensemble is None:
        ensemble = sample(scenario.datum, scenario.particle_count, seed=scenario.seed)
    softening = resolve_softening(scenario)
    solver = FieldSolver(scenario.solver, softening)
    stepper = scenario.stepper

    schedule = run_schedule(scenario.field, scenario.datum, ensemble, scenario.diagnostics)
    recorder = Recorder(solver, field, scenario.diagnostics, scenario.record_cadence, schedule=schedule,
                        tracked=tracked_indices(len(ensemble), scenario.tracked_particles),
                        dt_base=stepper.dt_base)

    state = SimState.initial(ensemble, field)
    recorder.start(state)
    artifact = RunArtifact(state=state, records=recorder.records, schedule=schedule, softening=softening,
                           tracker=recorder.tracker)

    def snapshot(s):
        if snapshot_writer is not None:
            snapshot_writer(s)
        artifact.snapshots.append((s.step_index, s.time))

    snapshot(state)
    progress = tqdm(total=stepper.t_end, desc='[stepping]', unit='t',
                    bar_format='{desc:<10}{percentage:3.0f}%|{bar:100}{r_bar}',
                    disable=disable_progress or not logger.isEnabledFor(logging.INFO))
    try:
        while stepper.t_end - state.time > HORIZON_TOLERANCE * max(1.0, stepper.t_end):
            dt = min(compute_dt(state, field, stepper), stepper.t_end - state.time)
            if step_hook is not None:
                dt = step_hook(state, dt)
            state = advance(state, solver, field, stepper, dt=dt)
            recorder(state)
            for observer in observers:
                observer(state)
            if scenario.snapshot_cadence and state.step_index % scenario.snapshot_cadence == 0:
                snapshot(state)
            progress.update(dt)
    except SimulationEvent as e:
        logger.warning(f'run stopped: {e.status} ({e})')
        artifact.status = e.status
        artifact.error = e
    finally:
        progress.close()

    recorder.finish(state)
    if not artifact.snapshots or artifact.snapshots[-1][0] != state.step_index:
        snapshot(state)
    artifact.state = state
    return artifact


def reference_trajectory(field: ExternalField, x0, v0, times, rtol=1e-12, atol=1e-14):
    """Single particle in the external fields only, by DOP853. Returns (positions, velocities) at `times`."""

    def rhs(_, y):
        x, v = y[:3], y[3:]
        force = field.total_external_force(x) + np.cross(v, field.magnetic_field(x))
        return np.concatenate([v, force])

    times = np.asarray(times, dtype=float)
    y0 = np.concatenate([np.asarray(x0, dtype=float), np.asarray(v0, dtype=float)])
    solution = solve_ivp(rhs, (0.0, float(times[-1])), y0, method='DOP853', t_eval=times, rtol=rtol, atol=atol)
    if not solution.success:
        raise RuntimeError(f'reference integration failed: {solution.message}')
    return solution.y[:3].T, solution.y[3:].T


def reference_fall(field: ExternalField, x1_0, v1_0, times):
    positions, _ = reference_trajectory(field, [x1_0, 0.0, 0.0], [v1_0, 0.0, 0.0], times)
    return positions[:, 0]
