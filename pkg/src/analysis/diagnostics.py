import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.stats import linregress

from src.analysis.ledger import LedgerInput, build_report, ladder_schedule
from src.args import DiagnosticsConfig, ExternalFieldConfig, InitialDatum
from src.data.sampling import GridSpec, density_l53_norm, estimate_density
from src.exceptions import InfeasibleInput, InsufficientSample, WindowTooShort

logger = logging.getLogger(__name__)

TAIL_MIN_COUNT = 20
TAIL_MIN_BINS = 10
TAIL_SLACK = 2.0
TAIL_MIN_PARTICLES = 10 ** 4
WINDOW_TOLERANCE = 1e-9


@dataclass
class DiagRecord:
    time: float
    step_index: int
    dt: float
    kinetic: float
    potential_self: float
    potential_external: float
    total_energy: float
    kinetic_bound: float
    min_x1: float
    max_speed: float
    running_max_speed: float
    displacement_R: float
    charge: float
    shield_residual_max: float
    l53_norm: float
    max_magnetic: float
    max_wall_force: float
    avg_field_by_level: Dict[int, float] = field(default_factory=dict)

    def to_dict(self):
        data = asdict(self)
        data['avg_field_by_level'] = {str(k): v for k, v in self.avg_field_by_level.items()}
        return data

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        data['avg_field_by_level'] = {int(k): v for k, v in data.get('avg_field_by_level', {}).items()}
        return cls(**data)


@dataclass(frozen=True)
class RunSchedule:
    delta1: float
    factor: int
    lbar: int
    levels: Tuple[float, ...]
    vmax: float
    degenerate: bool

    def to_dict(self):
        return {'delta1': self.delta1, 'factor': self.factor, 'lbar': self.lbar,
                'levels': list(self.levels), 'vmax': self.vmax, 'degenerate': self.degenerate}


def run_schedule(field_cfg: ExternalFieldConfig, datum: InitialDatum, ensemble, diag_cfg: DiagnosticsConfig):
    """
    Ladder for a run, with V = max(C3, N), or max(C3, initial maximal speed) without cutoff.

    When Intg(V^delta) < 2 (the usual case at moderate V) the factor is replaced by
    diag_cfg.ladder_factor_floor; Delta_1 and lbar stay those of the ledger.
    Returns None when the ledger rejects (mu, tau).
    """
    vmax = datum.cutoff_n if math.isfinite(datum.cutoff_n) else float(np.max(ensemble.speeds()))
    vmax = max(diag_cfg.c3, vmax)
    inp = LedgerInput.from_values(field_cfg.mu, field_cfg.tau, gamma=diag_cfg.gamma, c6=diag_cfg.c6, vmax=vmax)
    try:
        report = build_report(inp)
    except InfeasibleInput as e:
        logger.warning(f'no window ladder for this run: {e}')
        return None
    if report.chosen is None:
        return None
    if report.ladder is not None:
        ladder = report.ladder
        return RunSchedule(ladder.delta1, ladder.g_factor, ladder.lbar, ladder.schedule, vmax, False)

    factor = diag_cfg.ladder_factor_floor
    ladder = ladder_schedule(inp, report.chosen, factor=factor)
    logger.warning(f'window ladder is degenerate at V={vmax:.4g}; using factor {factor} '
                   f'(Delta_1={ladder.delta1:.4g}, lbar={ladder.lbar})')
    return RunSchedule(ladder.delta1, factor, ladder.lbar, ladder.schedule, vmax, True)


def _window_edges(t0, t1, width, offset):
    start = t0 + offset
    count = int(math.floor((t1 - start) / width + WINDOW_TOLERANCE))
    return start + width * np.arange(count + 1)


def window_averages(times, cumulative, levels, offset=0.0):
    """
    Max over aligned windows and over columns of (I(b + Delta) - I(b)) / Delta, where I is the
    cumulative integral sampled at `times` and linearly interpolated in between.
    Levels without a complete window are omitted.
    """
    times = np.asarray(times, dtype=float)
    cumulative = np.asarray(cumulative, dtype=float)
    if cumulative.ndim == 1:
        cumulative = cumulative[:, None]
    if len(times) < 2:
        return {}
    interval = float(np.max(np.diff(times)))
    if levels[0] < 2 * interval:
        raise WindowTooShort(f'Delta_1={levels[0]:.4g} is shorter than two sampling intervals ({interval:.4g})')

    averages = {}
    for level, width in enumerate(levels, start=1):
        edges = _window_edges(times[0], times[-1], width, offset)
        if len(edges) < 2:
            continue
        edges = np.minimum(edges, times[-1])
        integral = np.column_stack([np.interp(edges, times, cumulative[:, k]) for k in range(cumulative.shape[1])])
        averages[level] = float(np.max(np.diff(integral, axis=0)) / width)
    return averages


def field_time_average(times, values, levels, offset=0.0):
    """|E| at `times`, held constant on each step, averaged over the windows of every level."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    steps = np.diff(times)[:, None] * values[:-1]
    cumulative = np.vstack([np.zeros((1, values.shape[1])), np.cumsum(steps, axis=0)])
    return window_averages(times, cumulative, levels, offset)


class _Series:

    def __init__(self, width):
        self._data = np.empty((64, width))
        self._size = 0

    def append(self, row):
        if self._size == len(self._data):
            self._data = np.vstack([self._data, np.empty_like(self._data)])
        self._data[self._size] = row
        self._size += 1

    @property
    def values(self):
        return self._data[:self._size]


class FieldAverageTracker:
    """The value held on each step is the self-field evaluated at the midpoint of that step."""

    def __init__(self, indices):
        self.indices = np.asarray(indices, dtype=np.int64)
        self._times = _Series(1)
        self._cumulative = _Series(len(self.indices))
        self._velocities = _Series(3 * len(self.indices))

    def start(self, state):
        self._times.append([state.time])
        self._cumulative.append(np.zeros(len(self.indices)))
        self._velocities.append(state.ensemble.velocities[self.indices].ravel())

    def update(self, state):
        magnitude = np.linalg.norm(state.fields_cache[self.indices], axis=1)
        self._cumulative.append(self._cumulative.values[-1] + state.last_dt * magnitude)
        self._times.append([state.time])
        self._velocities.append(state.ensemble.velocities[self.indices].ravel())

    @property
    def times(self):
        return self._times.values[:, 0]

    @property
    def velocities(self):
        return self._velocities.values.reshape(-1, len(self.indices), 3)

    def averages(self, levels, offset=0.0):
        return window_averages(self.times, self._cumulative.values, levels, offset)


def tracked_indices(count, tracked):
    return np.unique(np.linspace(0, count - 1, min(tracked, count)).astype(np.int64))


def record(state, solver, field, diag_cfg: DiagnosticsConfig, running_max_speed=None, displacement_R=1.0,
           tracker=None, schedule=None, initial_energy=None):
    ensemble = state.ensemble
    x, w = ensemble.positions, ensemble.weights
    speeds = ensemble.speeds()
    max_speed = float(np.max(speeds))
    if running_max_speed is None:
        running_max_speed = max(diag_cfg.c3, max_speed)

    kinetic = 0.5 * float(np.sum(w * speeds ** 2))
    potential_external = float(np.sum(w * field.external_potential(x)))
    potential_self = float(solver.potential_energy(ensemble))
    total = kinetic + potential_self + potential_external
    reference = total if initial_energy is None else initial_energy

    grid = GridSpec.covering(x, cells=diag_cfg.density_cells)
    rho, _ = estimate_density(ensemble, grid)

    averages = {}
    if tracker is not None and schedule is not None:
        try:
            averages = tracker.averages(schedule.levels)
        except WindowTooShort as e:
            logger.debug(f'no window averages yet: {e}')

    residual = state.shield_residual(field)
    return DiagRecord(
        time=float(state.time),
        step_index=int(state.step_index),
        dt=float(state.last_dt),
        kinetic=kinetic,
        potential_self=potential_self,
        potential_external=potential_external,
        total_energy=total,
        kinetic_bound=reference - potential_external,
        min_x1=float(np.min(x[:, 0])),
        max_speed=max_speed,
        running_max_speed=float(running_max_speed),
        displacement_R=float(displacement_R),
        charge=ensemble.total_charge(),
        shield_residual_max=float(np.max(np.abs(residual))) if len(residual) else 0.0,
        l53_norm=density_l53_norm(rho, grid),
        max_magnetic=float(np.max(field.magnetic_field(x)[:, 2])),
        max_wall_force=float(np.max(np.linalg.norm(field.total_external_force(x), axis=1))),
        avg_field_by_level=averages,
    )


class Recorder:
    """
    Step observer of the integrator: keeps the running maximal speed V(t) (floored by C3),
    R(t) = 1 + int_0^t V by the trapezoid rule on every step, the tracked field history,
    and emits a DiagRecord every `cadence` steps and at the end of the run.
    """

    def __init__(self, solver, field, diag_cfg: DiagnosticsConfig, cadence, schedule=None, tracked=None,
                 dt_base=None):
        self.solver = solver
        self.field = field
        self.diag_cfg = diag_cfg
        self.cadence = cadence
        self.schedule = schedule
        self.records = []
        self.running_max_speed = None
        self.displacement_R = 1.0
        self.initial_energy = None
        self.tracker = None
        if schedule is not None and tracked is not None:
            if dt_base is not None and schedule.delta1 < 2 * dt_base:
                logger.warning(f'Delta_1={schedule.delta1:.4g} is shorter than two base steps; '
                               f'window averages are not tracked')
            else:
                self.tracker = FieldAverageTracker(tracked)

    def _emit(self, state):
        rec = record(state, self.solver, self.field, self.diag_cfg, self.running_max_speed, self.displacement_R,
                     self.tracker, self.schedule, self.initial_energy)
        self.records.append(rec)
        return rec

    def start(self, state):
        self.running_max_speed = max(self.diag_cfg.c3, float(np.max(state.ensemble.speeds())))
        if self.tracker is not None:
            self.tracker.start(state)
        rec = self._emit(state)
        self.initial_energy = rec.total_energy

    def __call__(self, state):
        previous = self.running_max_speed
        self.running_max_speed = max(previous, float(np.max(state.ensemble.speeds())))
        self.displacement_R += 0.5 * state.last_dt * (previous + self.running_max_speed)
        if self.tracker is not None:
            self.tracker.update(state)
        if state.step_index % self.cadence == 0:
            self._emit(state)

    def finish(self, state):
        if not self.records or self.records[-1].step_index != state.step_index:
            self._emit(state)


@dataclass
class ConfinementReport:
    c_hat: float
    times: np.ndarray
    ratio: np.ndarray
    slope: float
    slope_stderr: float
    passed: bool
    reason: str = ''


def confinement_bound_check(records, tau, status='completed'):
    """
    Empirical constant of x1^-(tau - 1) <= C V(t): C_hat = max of min_x1^-(tau - 1) / V over the
    records. Passes when the run completed, C_hat is finite, and the OLS slope of the ratio over the
    final third of the run is <= its standard error.
    """
    times = np.array([r.time for r in records], dtype=float)
    min_x1 = np.array([r.min_x1 for r in records], dtype=float)
    running = np.array([r.running_max_speed for r in records], dtype=float)
    if np.any(min_x1 <= 0):
        return ConfinementReport(math.inf, times, np.full_like(times, math.inf), math.nan, math.nan, False,
                                 'min_x1 reached 0')
    ratio = min_x1 ** (-(tau - 1.0)) / running
    c_hat = float(np.max(ratio))

    slope, stderr = 0.0, 0.0
    final = times >= times[-1] - (times[-1] - times[0]) / 3.0
    if np.count_nonzero(final) >= 3 and np.ptp(times[final]) > 0:
        fit = linregress(times[final], ratio[final])
        slope, stderr = float(fit.slope), float(fit.stderr)
    trend_ok = slope <= 0 or (math.isfinite(stderr) and slope <= stderr)

    reason = ''
    if status != 'completed':
        reason = f'run ended with status {status}'
    elif not math.isfinite(c_hat):
        reason = 'unbounded ratio'
    elif not trend_ok:
        reason = f'ratio grows over the final third (slope {slope:.3g} > stderr {stderr:.3g})'
    return ConfinementReport(c_hat, times, ratio, slope, stderr, not reason, reason)


@dataclass
class TailReport:
    lambda1: float
    log_c: float
    passed: bool
    centers: np.ndarray
    counts: np.ndarray
    envelope: np.ndarray
    usable: np.ndarray
    particle_count: int

    def table(self):
        mask = self.usable
        return np.column_stack([self.centers[mask], np.log(self.counts[mask] / self.centers[mask] ** 2),
                                np.log(self.envelope[mask] / self.centers[mask] ** 2)])


def gaussian_tail_check(speeds, bins=50, min_particles=TAIL_MIN_PARTICLES, slack=TAIL_SLACK):
    """
    Fit log(count / v^2) = log c - lambda1 v^2 on the speed histogram beyond its mode, weighted by
    sqrt(count), and check that every usable tail bin stays below slack times c v^2 exp(-lambda1 v^2).

    Raises:
        InsufficientSample: fewer than `min_particles` speeds, or fewer than 10 tail bins with >= 20 counts.
    """
    if hasattr(speeds, 'speeds'):
        speeds = speeds.speeds()
    speeds = np.asarray(speeds, dtype=float)
    if len(speeds) < min_particles:
        raise InsufficientSample(f'{len(speeds)} speeds, at least {min_particles} are needed')
    counts, edges = np.histogram(speeds, bins=bins)
    centers = 0.5 * (edges[1:] + edges[:-1])
    mode = int(np.argmax(counts))
    usable = (np.arange(len(counts)) > mode) & (counts >= TAIL_MIN_COUNT) & (centers > 0)
    if np.count_nonzero(usable) < TAIL_MIN_BINS:
        raise InsufficientSample(f'{np.count_nonzero(usable)} usable tail bins, at least {TAIL_MIN_BINS} are needed')

    c = counts[usable].astype(float)
    v = centers[usable]
    slope, log_c = np.polyfit(v ** 2, np.log(c / v ** 2), 1, w=np.sqrt(c))
    lambda1 = -float(slope)
    envelope = np.exp(log_c - lambda1 * centers ** 2) * centers ** 2
    passed = lambda1 > 0 and bool(np.all(counts[usable] <= slack * envelope[usable]))
    return TailReport(lambda1, float(log_c), passed, centers, counts, envelope, usable, len(speeds))


def velocity_window_report(times, velocities, levels, pairs=None, offset=0.0):
    """
    For pairs of tracked characteristics, the fraction of aligned windows of each level over which
    |V3 - W3| stays within [1/2, 2] times its value at the window start. Windows starting at a zero
    difference are skipped; levels without a complete window map to None.
    """
    times = np.asarray(times, dtype=float)
    v3 = np.asarray(velocities, dtype=float)[..., 2]
    if pairs is None:
        pairs = [(i, i + 1) for i in range(0, v3.shape[1] - 1, 2)]
    report = {}
    for level, width in enumerate(levels, start=1):
        edges = _window_edges(times[0], times[-1], width, offset)
        inside, total = 0, 0
        for i, j in pairs:
            gap = np.abs(v3[:, i] - v3[:, j])
            for lo, hi in zip(edges[:-1], edges[1:]):
                start = float(np.interp(lo, times, gap))
                if start == 0:
                    continue
                window = (times >= lo) & (times <= hi)
                values = np.concatenate([[start, float(np.interp(hi, times, gap))], gap[window]])
                total += 1
                inside += int(np.all((values >= 0.5 * start) & (values <= 2.0 * start)))
        report[level] = inside / total if total else None
    return report


def corollary_check(records, field_cfg: ExternalFieldConfig, cutoff_n):
    """
    Ratios of the observed maxima to the cutoff powers of the a-priori bounds:
    |B| against N^(tau/(tau-1)), |grad U| against N^((mu+1)/(tau-1)), kinetic against N^(mu/(tau-1)).
    Without a cutoff the largest running maximal speed stands in for N.
    """
    mu, tau = field_cfg.mu, field_cfg.tau
    scale = cutoff_n if math.isfinite(cutoff_n) else max(r.running_max_speed for r in records)
    return {
        'scale': scale,
        'magnetic': max(r.max_magnetic for r in records) / scale ** (tau / (tau - 1)),
        'wall_force': max(r.max_wall_force for r in records) / scale ** ((mu + 1) / (tau - 1)),
        'kinetic': max(r.kinetic for r in records) / scale ** (mu / (tau - 1)),
    }


def energy_drift(records):
    first, last = records[0].total_energy, records[-1].total_energy
    if first == 0:
        return abs(last - first)
    return abs(last - first) / abs(first)


def summary_row(manifest):
    scenario = manifest['scenario']
    summary = manifest['summary']
    return {
        'run_id': manifest['run_id'],
        'mu': scenario['field']['mu'],
        'tau': scenario['field']['tau'],
        'seed': scenario['run']['seed'],
        'particle_count': scenario['run']['particle_count'],
        'status': manifest['status'],
        'min_x1': summary['min_x1'],
        'max_speed': summary['max_speed'],
        'energy_drift': summary['energy_drift'],
        'shield_residual_max': summary['shield_residual_max'],
        'runtime': manifest.get('runtime'),
    }
