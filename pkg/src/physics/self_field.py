import logging

import numpy as np

from src.args import SolverConfig
from src.exceptions import SingularityError
from src.physics.octree import Octree

logger = logging.getLogger(__name__)

TARGET_CHUNK = 256


def default_softening(datum, count):
    """1e-3 times the mean interparticle spacing of the initial support."""
    return 1e-3 * (datum.box_volume / count) ** (1.0 / 3.0)


def _coulomb_block(targets, sources, weights, softening, self_index=None):
    """
    Field at `targets` generated by `sources`:
        sum_j w_j (x - y_j) / (|x - y_j|^2 + eps^2)^(3/2)

    self_index[i] is the source index that coincides with target i (skipped), or -1.
    """
    diff = targets[:, None, :] - sources[None, :, :]
    r2 = np.sum(diff * diff, axis=2)
    skip = np.zeros(r2.shape, dtype=bool)
    if self_index is not None:
        rows = np.nonzero(self_index >= 0)[0]
        skip[rows, self_index[rows]] = True
    if softening == 0:
        if np.any((r2 == 0) & ~skip):
            raise SingularityError('coincident particles with zero softening')
    r2 = r2 + softening * softening
    r2[skip] = 1.0
    inv_r3 = weights[None, :] / (r2 * np.sqrt(r2))
    inv_r3[skip] = 0.0
    return np.sum(diff * inv_r3[:, :, None], axis=1)


def direct_field_at(ensemble, x, softening=0.0):
    """E at an arbitrary point; a particle located exactly at x is skipped."""
    x = np.asarray(x, dtype=float).reshape(1, 3)
    coincident = np.nonzero(np.all(ensemble.positions == x, axis=1))[0]
    self_index = np.array([coincident[0] if len(coincident) else -1])
    if len(coincident) > 1 and softening == 0:
        raise SingularityError('several particles sit at the evaluation point with zero softening')
    return _coulomb_block(x, ensemble.positions, ensemble.weights, softening, self_index)[0]


def direct_fields(positions, weights, softening=0.0):
    n = len(weights)
    fields = np.empty((n, 3))
    for start in range(0, n, TARGET_CHUNK):
        stop = min(start + TARGET_CHUNK, n)
        fields[start:stop] = _coulomb_block(positions[start:stop], positions, weights, softening,
                                            np.arange(start, stop))
    return fields


def potential_energy(ensemble, softening=0.0):
    """(1/2) sum_{i != j} w_i w_j / (|x_i - x_j|^2 + eps^2)^(1/2)."""
    positions, weights = ensemble.positions, ensemble.weights
    n = len(weights)
    total = 0.0
    for start in range(0, n, TARGET_CHUNK):
        stop = min(start + TARGET_CHUNK, n)
        diff = positions[start:stop, None, :] - positions[None, :, :]
        r2 = np.sum(diff * diff, axis=2)
        rows = np.arange(stop - start)
        self_mask = np.zeros(r2.shape, dtype=bool)
        self_mask[rows, rows + start] = True
        if softening == 0 and np.any((r2 == 0) & ~self_mask):
            raise SingularityError('coincident particles with zero softening')
        r2 = r2 + softening * softening
        r2[self_mask] = 1.0
        pair = weights[start:stop, None] * weights[None, :] / np.sqrt(r2)
        pair[self_mask] = 0.0
        total += float(np.sum(pair))
    return 0.5 * total


class FieldSolver:

    def __init__(self, cfg: SolverConfig, softening=None):
        cfg.validate()
        self.cfg = cfg
        self.softening = cfg.softening if softening is None else softening
        if self.softening is None:
            self.softening = 0.0

    def all_fields(self, ensemble):
        if not self.cfg.self_field:
            return np.zeros_like(ensemble.positions)
        if self.cfg.mode == 'tree':
            tree = Octree.build(ensemble.positions, ensemble.weights, leaf_size=self.cfg.leaf_size)
            return tree.fields(ensemble.positions,
                               theta=self.cfg.opening_angle,
                               softening=self.softening,
                               quadrupole=self.cfg.quadrupole,
                               exclude=np.arange(len(ensemble)))
        return direct_fields(ensemble.positions, ensemble.weights, self.softening)

    def field_at(self, ensemble, x):
        if not self.cfg.self_field:
            return np.zeros(3)
        return direct_field_at(ensemble, x, self.softening)

    def potential_energy(self, ensemble):
        if not self.cfg.self_field:
            return 0.0
        return potential_energy(ensemble, self.softening)
