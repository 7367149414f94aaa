"""
Matched runs at velocity cutoffs N and N + 1.

Both legs start from one ensemble sampled under the cutoff N. The (N + 1) leg adds the
particles of the shell N <= |v| < N + 1, drawn from the continuation of the same random
stream with the common weight, so both legs discretize the same density. The legs advance
in lockstep with a shared step, and at every step

    delta(t) = max_i |X_i^N(t) - X_i^(N+1)(t)|,    eta(t) = max_i |V_i^N(t) - V_i^(N+1)(t)|

over the common particles, sigma = delta + eta.
"""
import dataclasses
import logging
from dataclasses import dataclass
from typing import List

import numpy as np
import pandas as pd
from tqdm import tqdm

from src.args import ScenarioConfig
from src.data.sampling import acceptance_probability, sample, sample_shell, shell_probability
from src.physics.fields import ExternalField
from src.physics.integrator import HORIZON_TOLERANCE, SimState, advance, compute_dt, resolve_softening
from src.physics.self_field import FieldSolver

logger = logging.getLogger(__name__)


@dataclass
class ConvergencePair:
    cutoff_n: float
    seed: int
    times: np.ndarray
    delta_series: np.ndarray
    eta_series: np.ndarray
    sigma_series: np.ndarray
    eta_integral_series: np.ndarray
    sup_sigma: float
    vmax_n: float
    shell_count: int

    def rows(self):
        for t, d, e, s, i in zip(self.times, self.delta_series, self.eta_series, self.sigma_series,
                                 self.eta_integral_series):
            yield {'time': float(t), 'delta': float(d), 'eta': float(e), 'sigma': float(s), 'eta_integral': float(i)}


def shell_count(datum, count, cutoff_n):
    """Particles of weight total_charge/count needed to extend the N-ensemble to the cutoff N + 1."""
    datum_n = dataclasses.replace(datum, cutoff_n=cutoff_n)
    share = shell_probability(datum, cutoff_n, cutoff_n + 1) / acceptance_probability(datum_n)
    return int(round(count * share))


def _gap(a, b):
    return float(np.max(np.linalg.norm(a - b, axis=1))) if len(a) else 0.0


def run_pair(scenario: ScenarioConfig, cutoff_n, seed=None, disable_progress=False):
    """
    Raises:
        SimulationEvent: from either leg.
    """
    seed = scenario.seed if seed is None else seed
    count = scenario.particle_count
    datum = dataclasses.replace(scenario.datum, cutoff_n=float(cutoff_n))

    rng = np.random.default_rng(seed)
    base = sample(datum, count, rng=rng)
    extra = shell_count(datum, count, cutoff_n)
    shell = sample_shell(datum, cutoff_n, cutoff_n + 1, extra, rng, datum.total_charge / count)
    logger.info(f'pair N={cutoff_n:g} seed={seed}: {count} common particles, {extra} shell particles')

    field = ExternalField(scenario.field)
    solver = FieldSolver(scenario.solver, resolve_softening(scenario))
    stepper = scenario.stepper
    leg_n = SimState.initial(base.copy(), field)
    leg_np1 = SimState.initial(base.concat(shell), field)

    times, deltas, etas, integrals = [0.0], [0.0], [0.0], [0.0]
    vmax_n = float(np.max(base.speeds()))
    progress = tqdm(total=stepper.t_end, desc=f'[N={cutoff_n:g}]', unit='t',
                    bar_format='{desc:<10}{percentage:3.0f}%|{bar:100}{r_bar}',
                    disable=disable_progress or not logger.isEnabledFor(logging.INFO))
    try:
        while stepper.t_end - leg_n.time > HORIZON_TOLERANCE * max(1.0, stepper.t_end):
            dt = min(compute_dt(leg_n, field, stepper), compute_dt(leg_np1, field, stepper),
                     stepper.t_end - leg_n.time)
            leg_n = advance(leg_n, solver, field, stepper, dt=dt)
            leg_np1 = advance(leg_np1, solver, field, stepper, dt=dt)
            vmax_n = max(vmax_n, float(np.max(leg_n.ensemble.speeds())))

            delta = _gap(leg_n.ensemble.positions, leg_np1.ensemble.positions[:count])
            eta = _gap(leg_n.ensemble.velocities, leg_np1.ensemble.velocities[:count])
            integrals.append(integrals[-1] + 0.5 * dt * (etas[-1] + eta))
            times.append(leg_n.time)
            deltas.append(delta)
            etas.append(eta)
            progress.update(dt)
    finally:
        progress.close()

    deltas, etas = np.array(deltas), np.array(etas)
    sigmas = deltas + etas
    return ConvergencePair(cutoff_n=float(cutoff_n), seed=int(seed), times=np.array(times),
                           delta_series=deltas, eta_series=etas, sigma_series=sigmas,
                           eta_integral_series=np.array(integrals), sup_sigma=float(np.max(sigmas)),
                           vmax_n=vmax_n, shell_count=extra)


@dataclass
class ConvergenceReport:
    table: pd.DataFrame
    monotone: bool

    def to_csv(self, path):
        self.table.to_csv(path, index=False)


def convergence_report(pairs: List[ConvergencePair]):
    """
    One row per cutoff: mean and spread of sup sigma over the seeds, ratio to the previous cutoff,
    and vmax/N. The monotone flag needs a strict decrease at every step, by more than the summed
    standard deviations when several seeds are available.
    """
    if len({p.cutoff_n for p in pairs}) < 2:
        raise ValueError('a convergence report needs pairs at two or more cutoffs')
    frame = pd.DataFrame({'N': [p.cutoff_n for p in pairs],
                          'sup_sigma': [p.sup_sigma for p in pairs],
                          'vmax_over_n': [p.vmax_n / p.cutoff_n for p in pairs]})
    table = frame.groupby('N', sort=True).agg(
        repeats=('sup_sigma', 'size'),
        sup_sigma=('sup_sigma', 'mean'),
        sup_sigma_std=('sup_sigma', lambda s: float(np.std(s, ddof=1)) if len(s) > 1 else 0.0),
        vmax_over_n=('vmax_over_n', 'mean'),
    ).reset_index()
    table['ratio'] = table['sup_sigma'] / table['sup_sigma'].shift(1)

    monotone = True
    for prev, cur in zip(table.itertuples(), list(table.itertuples())[1:]):
        margin = prev.sup_sigma_std + cur.sup_sigma_std if min(prev.repeats, cur.repeats) > 1 else 0.0
        if not prev.sup_sigma - cur.sup_sigma > margin:
            monotone = False
    table['monotone'] = monotone
    return ConvergenceReport(table[['N', 'repeats', 'sup_sigma', 'sup_sigma_std', 'ratio', 'vmax_over_n', 'monotone']],
                             monotone)


def integral_bound_holds(pair: ConvergencePair, tolerance=1e-9):
    """delta(t) <= int_0^t eta ds along the series, up to `tolerance` plus the quadrature defect."""
    slack = tolerance + 0.5 * np.max(np.diff(pair.times)) * np.max(pair.eta_series) if len(pair.times) > 1 else tolerance
    return bool(np.all(pair.delta_series <= pair.eta_integral_series + slack))
