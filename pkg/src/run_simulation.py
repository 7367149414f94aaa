import dataclasses
import datetime
import hashlib
import json
import logging
import math
import os
import time

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from tqdm import tqdm

from src.analysis.cutoff_ladder import convergence_report, run_pair
from src.analysis.diagnostics import confinement_bound_check, corollary_check, energy_drift, gaussian_tail_check, \
    summary_row
from src.analysis.ledger import check_shield_condition
from src.args import THREADS_ENV, ScenarioConfig, dump_scenario, load_scenario
from src.data.sampling import derived_c1, write_snapshot
from src.data.utils import append_csv, write_json_atomic, write_jsonl
from src.exceptions import InsufficientSample, MagshieldError, SimulationEvent
from src.physics.integrator import run

logger = logging.getLogger(__name__)

ARTIFACT_VERSION = '1.0.0'
SUMMARY_FILE = 'runs_summary.csv'
SUMMARY_COLUMNS = ('run_id', 'mu', 'tau', 'seed', 'particle_count', 'status', 'min_x1', 'max_speed',
                   'energy_drift', 'shield_residual_max', 'runtime')
SWEEP_RUN_COLUMNS = ('mu', 'tau', 'repeat', 'seed', 'run_id', 'status', 'shield_condition', 'min_x1', 'runtime')
SWEEP_SUMMARY_COLUMNS = ('mu', 'tau', 'shield_condition', 'confined_fraction', 'min_x1_median', 'runtime')


def _now():
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def worker_count(requested=None):
    if requested is not None:
        return max(1, int(requested))
    return max(1, int(os.environ.get(THREADS_ENV, '1')))


def shield_verdict(scenario: ScenarioConfig):
    if not scenario.field.magnetic_enabled:
        return False
    return check_shield_condition(scenario.field.mu, scenario.field.tau)


def run_directory(scenario: ScenarioConfig, output_root=None):
    return os.path.join(output_root or scenario.resolved_output_dir(), scenario.run_id)


def append_summary(output_root, rows):
    """runs_summary.csv has a single writer: the parent process, after its workers are done."""
    if rows:
        append_csv(os.path.join(output_root, SUMMARY_FILE), rows, SUMMARY_COLUMNS)


def run_scenario(scenario, disable_progress=False):
    """
    Run one scenario under <output root>/<run-id>/ and return its manifest.

    Terminal events do not raise: they end the run, are written to the manifest status and
    leave a post-mortem dump.csv of the offending state.
    """
    if not isinstance(scenario, ScenarioConfig):
        scenario = load_scenario(scenario)
    manifest = execute_scenario(scenario, disable_progress=disable_progress)
    append_summary(scenario.resolved_output_dir(), [summary_row(manifest)])
    return manifest


def _event_min_x1(artifact):
    if artifact.error is None or artifact.error.state is None:
        return math.inf
    return float(np.min(artifact.error.state.ensemble.positions[:, 0]))


def execute_scenario(scenario: ScenarioConfig, disable_progress=False, output_root=None):
    scenario.validate()
    path = run_directory(scenario, output_root)
    snapshot_dir = os.path.join(path, 'snapshots')
    os.makedirs(snapshot_dir, exist_ok=True)

    shield = shield_verdict(scenario)
    if not shield:
        logger.warning(f'shield condition does not hold for mu={scenario.field.mu}, tau={scenario.field.tau}, '
                       f'magnetic_enabled={scenario.field.magnetic_enabled}; running as a counterfactual')

    dump_scenario(scenario, os.path.join(path, 'scenario.yaml'))
    manifest_path = os.path.join(path, 'manifest.json')
    manifest = {
        'run_id': scenario.run_id,
        'scenario_digest': scenario.digest(),
        'artifact_version': ARTIFACT_VERSION,
        'seed': scenario.seed,
        'scenario': scenario.to_dict(),
        'shield_condition': bool(shield),
        'derived_c1': derived_c1(scenario.datum),
        'ensemble_size': scenario.particle_count,
        'status': 'pending',
        'started_at': _now(),
        'finished_at': None,
    }
    write_json_atomic(manifest_path, manifest)

    extension = scenario.snapshot_format

    def write(state):
        write_snapshot(os.path.join(snapshot_dir, f'step_{state.step_index}.{extension}'), state.ensemble)

    logger.info('-' * 100)
    logger.info(f'Running scenario {scenario.run_id} ({scenario.particle_count} particles, T={scenario.stepper.t_end})')
    logger.info('-' * 100)
    start = time.perf_counter()
    artifact = run(scenario, snapshot_writer=write, disable_progress=disable_progress)
    runtime = time.perf_counter() - start

    write_jsonl(os.path.join(path, 'records.jsonl'), [r.to_dict() for r in artifact.records])
    if artifact.error is not None and artifact.error.state is not None:
        write_snapshot(os.path.join(path, 'dump.csv'), artifact.error.state.ensemble)

    records = artifact.records
    confinement = confinement_bound_check(records, scenario.field.tau, artifact.status)
    manifest.update({
        'status': artifact.status,
        'message': None if artifact.error is None else str(artifact.error),
        'event_time': None if artifact.error is None else artifact.error.time,
        'finished_at': _now(),
        'runtime': runtime,
        'softening': artifact.softening,
        'ladder': None if artifact.schedule is None else artifact.schedule.to_dict(),
        'snapshots': [{'step_index': i, 'time': t} for i, t in artifact.snapshots],
        'summary': {
            'min_x1': min(min(r.min_x1 for r in records), _event_min_x1(artifact)),
            'max_speed': max(r.max_speed for r in records),
            'energy_drift': energy_drift(records),
            'shield_residual_max': max(r.shield_residual_max for r in records),
        },
        'confinement': {'c_hat': confinement.c_hat, 'slope': confinement.slope,
                        'slope_stderr': confinement.slope_stderr, 'passed': confinement.passed,
                        'reason': confinement.reason},
        'corollary': corollary_check(records, scenario.field, scenario.datum.cutoff_n),
        'tail': _tail_summary(artifact.state.ensemble, scenario.diagnostics.tail_bins),
        'tracked_particles': scenario.tracked_particles,
        'density_cells': scenario.diagnostics.density_cells,
    })
    write_json_atomic(manifest_path, manifest)
    logger.info(f'Run {scenario.run_id} finished with status {artifact.status} in {runtime:.1f}s '
                f'(min x1 {manifest["summary"]["min_x1"]:.4g})')
    return manifest


def _tail_summary(ensemble, bins):
    try:
        report = gaussian_tail_check(ensemble.speeds(), bins=bins)
    except InsufficientSample as e:
        return {'checked': False, 'reason': str(e)}
    return {'checked': True, 'lambda1': report.lambda1, 'passed': report.passed}


def with_field(scenario: ScenarioConfig, **changes):
    return dataclasses.replace(scenario, field=dataclasses.replace(scenario.field, **changes))


def _sweep_cell(scenario, mu, tau, repeat, output_root):
    row = {'mu': mu, 'tau': tau, 'repeat': repeat, 'seed': scenario.seed, 'run_id': scenario.run_id,
           'shield_condition': False, 'min_x1': math.nan, 'runtime': math.nan}
    try:
        scenario.validate()
        row['shield_condition'] = shield_verdict(scenario)
        manifest = execute_scenario(scenario, disable_progress=True, output_root=output_root)
    except MagshieldError as e:
        logger.error(f'sweep cell mu={mu}, tau={tau}, repeat={repeat} failed: {e}')
        row['status'] = 'error'
        return row, {'run_id': scenario.run_id, 'mu': mu, 'tau': tau, 'seed': scenario.seed,
                     'particle_count': scenario.particle_count, 'status': 'error'}
    row.update(status=manifest['status'], min_x1=manifest['summary']['min_x1'], runtime=manifest['runtime'])
    return row, summary_row(manifest)


def sweep_directory(base: ScenarioConfig, mus, taus, repeats):
    key = json.dumps({'base': base.digest(), 'mu': list(mus), 'tau': list(taus), 'repeats': repeats}, sort_keys=True)
    return os.path.join(base.resolved_output_dir(), 'sweep-' + hashlib.sha256(key.encode('utf-8')).hexdigest()[:12])


def sweep(base: ScenarioConfig, mus, taus, repeats=1, workers=None):
    """
    Every (mu, tau) cell times `repeats` seeds (base seed + repeat). Writes runs.csv (one row per
    run, failures included) and summary.csv (one row per cell) and returns the summary frame.
    """
    path = sweep_directory(base, mus, taus, repeats)
    os.makedirs(path, exist_ok=True)
    output_root = base.resolved_output_dir()
    cells = []
    for mu in mus:
        for tau in taus:
            for repeat in range(repeats):
                scenario = dataclasses.replace(with_field(base, mu=float(mu), tau=float(tau)), seed=base.seed + repeat)
                cells.append((scenario, float(mu), float(tau), repeat, output_root))

    logger.info('-' * 100)
    logger.info(f'Sweep over {len(mus)} x {len(taus)} cells, {repeats} repeats: {path}')
    logger.info('-' * 100)
    results = Parallel(n_jobs=worker_count(workers))(
        delayed(_sweep_cell)(*cell) for cell in tqdm(cells, desc='[sweep]',
                                                      bar_format='{desc:<10}{percentage:3.0f}%|{bar:100}{r_bar}',
                                                      disable=not logger.isEnabledFor(logging.INFO)))
    append_summary(output_root, [summary for _, summary in results])

    runs = pd.DataFrame([row for row, _ in results], columns=list(SWEEP_RUN_COLUMNS))
    runs.to_csv(os.path.join(path, 'runs.csv'), index=False)
    summary = runs.groupby(['mu', 'tau'], sort=True).agg(
        shield_condition=('shield_condition', 'first'),
        confined_fraction=('status', lambda s: float(np.mean(s == 'completed'))),
        min_x1_median=('min_x1', 'median'),
        runtime=('runtime', 'sum'),
    ).reset_index()[list(SWEEP_SUMMARY_COLUMNS)]
    summary.to_csv(os.path.join(path, 'summary.csv'), index=False)
    for row in summary.itertuples():
        logger.info(f'mu={row.mu:g} tau={row.tau:g} shield={row.shield_condition} '
                    f'confined_fraction={row.confined_fraction:.2f}')
    return summary, path


def _pair_task(scenario, cutoff, seed):
    start = time.perf_counter()
    try:
        pair = run_pair(scenario, cutoff, seed=seed, disable_progress=True)
        return pair, 'completed', time.perf_counter() - start
    except SimulationEvent as e:
        logger.error(f'pair N={cutoff:g} seed={seed} stopped: {e.status} ({e})')
        return None, e.status, time.perf_counter() - start


def pair_directory(base: ScenarioConfig, cutoffs, repeats):
    key = json.dumps({'base': base.digest(), 'cutoffs': list(cutoffs), 'repeats': repeats}, sort_keys=True)
    return os.path.join(base.resolved_output_dir(), 'pair-' + hashlib.sha256(key.encode('utf-8')).hexdigest()[:12])


def run_pairs(base: ScenarioConfig, cutoffs, repeats=1, workers=None):
    path = pair_directory(base, cutoffs, repeats)
    os.makedirs(path, exist_ok=True)
    tasks = [(base, float(n), base.seed + k) for n in cutoffs for k in range(repeats)]
    logger.info('-' * 100)
    logger.info(f'Cutoff ladder N in {list(cutoffs)}, {repeats} seeds: {path}')
    logger.info('-' * 100)
    results = Parallel(n_jobs=worker_count(workers))(
        delayed(_pair_task)(*task) for task in tqdm(tasks, desc='[pairs]',
                                                     bar_format='{desc:<10}{percentage:3.0f}%|{bar:100}{r_bar}',
                                                     disable=not logger.isEnabledFor(logging.INFO)))

    pairs, summary_rows = [], []
    for (scenario, cutoff, seed), (pair, status, runtime) in zip(tasks, results):
        pair_id = f'{os.path.basename(path)}-N{cutoff:g}-s{seed}'
        if pair is not None:
            pairs.append(pair)
            write_jsonl(os.path.join(path, f'pair_{cutoff:g}_seed{seed}.jsonl'), pair.rows())
        summary_rows.append({'run_id': pair_id, 'mu': scenario.field.mu, 'tau': scenario.field.tau, 'seed': seed,
                             'particle_count': scenario.particle_count, 'status': status, 'runtime': runtime})
    append_summary(base.resolved_output_dir(), summary_rows)

    report = convergence_report(pairs)
    report.to_csv(os.path.join(path, 'convergence.csv'))
    logger.info(f'Convergence table:\n{report.table.to_string(index=False)}')
    return report, path
