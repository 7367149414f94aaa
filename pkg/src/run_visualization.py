import logging
import os

import numpy as np
import pandas as pd

from src.analysis.diagnostics import gaussian_tail_check
from src.data.sampling import read_snapshot
from src.data.utils import read_json, read_jsonl
from src.exceptions import InsufficientSample, UnknownRunId

logger = logging.getLogger(__name__)

PLOT_KINDS = ('timeseries', 'tail', 'ladder', 'frontier')


def _timeseries(run_dir, manifest):
    records = read_jsonl(os.path.join(run_dir, 'records.jsonl'))
    return pd.DataFrame({'t': [r['time'] for r in records],
                         'min_x1': [r['min_x1'] for r in records],
                         'max_speed': [r['max_speed'] for r in records],
                         'energy': [r['total_energy'] for r in records]})


def _final_snapshot(run_dir, manifest):
    fmt = manifest['scenario']['run']['snapshot_format']
    last = manifest['snapshots'][-1]['step_index']
    return read_snapshot(os.path.join(run_dir, 'snapshots', f'step_{last}.{fmt}'))


def _tail(run_dir, manifest):
    ensemble = _final_snapshot(run_dir, manifest)
    bins = manifest['scenario']['diagnostics']['tail_bins']
    speeds = ensemble.speeds()
    counts, edges = np.histogram(speeds, bins=bins)
    centers = 0.5 * (edges[1:] + edges[:-1])
    keep = (counts > 0) & (centers > 0)
    frame = pd.DataFrame({'v': centers[keep], 'log_density': np.log(counts[keep] / centers[keep] ** 2)})
    try:
        report = gaussian_tail_check(speeds, bins=bins)
        frame['envelope'] = report.log_c - report.lambda1 * frame['v'] ** 2
    except InsufficientSample as e:
        logger.warning(f'no tail envelope: {e}')
        frame['envelope'] = np.nan
    return frame


def _ladder(run_dir, manifest):
    records = read_jsonl(os.path.join(run_dir, 'records.jsonl'))
    levels = records[-1]['avg_field_by_level']
    ordered = sorted(levels.items(), key=lambda item: int(item[0]))
    return pd.DataFrame({'level': [int(k) for k, _ in ordered], 'avg_field': [v for _, v in ordered]})


def _frontier(sweep_dir):
    summary = pd.read_csv(os.path.join(sweep_dir, 'summary.csv'))
    return summary[['mu', 'tau', 'confined_fraction']]


def emit_plot_data(identifier, kind, output_root):
    """
    Write <output_root>/<identifier>/plots/<kind>.csv and return its path.

    Columns:
        timeseries: t, min_x1, max_speed, energy
        tail: v, log_density (log of count / v^2), envelope (fitted log c - lambda1 v^2)
        ladder: level, avg_field (last record)
        frontier: mu, tau, confined_fraction (sweep identifiers only)
    """
    if kind not in PLOT_KINDS:
        raise ValueError(f'unknown plot kind {kind!r}, expected one of {PLOT_KINDS}')
    directory = os.path.join(output_root, identifier)
    if kind == 'frontier':
        if not os.path.exists(os.path.join(directory, 'summary.csv')):
            raise UnknownRunId(f'no sweep {identifier!r} under {output_root}')
        frame = _frontier(directory)
    else:
        manifest_path = os.path.join(directory, 'manifest.json')
        if not os.path.exists(manifest_path):
            raise UnknownRunId(f'no run {identifier!r} under {output_root}')
        manifest = read_json(manifest_path)
        frame = {'timeseries': _timeseries, 'tail': _tail, 'ladder': _ladder}[kind](directory, manifest)

    plots = os.path.join(directory, 'plots')
    os.makedirs(plots, exist_ok=True)
    path = os.path.join(plots, f'{kind}.csv')
    frame.to_csv(path, index=False)
    logger.info(f'{kind} plot data ({len(frame)} rows) written to {path}')
    return path
