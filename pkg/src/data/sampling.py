import logging
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.stats import chi

from src.args import InitialDatum
from src.exceptions import SamplingError

logger = logging.getLogger(__name__)

MIN_ACCEPTANCE = 1e-6
SNAPSHOT_COLUMNS = ('x1', 'x2', 'x3', 'v1', 'v2', 'v3', 'w')


class Particle(NamedTuple):
    position: np.ndarray
    velocity: np.ndarray
    weight: float


@dataclass
class Ensemble:
    positions: np.ndarray
    velocities: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float64).reshape(-1, 3)
        self.velocities = np.ascontiguousarray(self.velocities, dtype=np.float64).reshape(-1, 3)
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float64).reshape(-1)
        if not (len(self.positions) == len(self.velocities) == len(self.weights)):
            raise ValueError('positions, velocities and weights must have the same length')

    def __len__(self):
        return len(self.weights)

    def __getitem__(self, i):
        return Particle(self.positions[i].copy(), self.velocities[i].copy(), float(self.weights[i]))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @classmethod
    def from_particles(cls, particles):
        particles = list(particles)
        return cls(np.array([p.position for p in particles], dtype=float),
                   np.array([p.velocity for p in particles], dtype=float),
                   np.array([p.weight for p in particles], dtype=float))

    @classmethod
    def from_table(cls, table):
        table = np.asarray(table, dtype=float).reshape(-1, 7)
        return cls(table[:, 0:3], table[:, 3:6], table[:, 6])

    def as_table(self):
        return np.column_stack([self.positions, self.velocities, self.weights])

    def copy(self):
        return Ensemble(self.positions.copy(), self.velocities.copy(), self.weights.copy())

    def concat(self, other):
        return Ensemble(np.vstack([self.positions, other.positions]),
                        np.vstack([self.velocities, other.velocities]),
                        np.concatenate([self.weights, other.weights]))

    def speeds(self):
        return np.sqrt(np.sum(self.velocities ** 2, axis=1))

    def total_charge(self):
        return math.fsum(self.weights)


def acceptance_probability(datum: InitialDatum):
    """P(|v| < N) for velocity components N(0, 1/(2 lambda))."""
    if math.isinf(datum.cutoff_n):
        return 1.0
    return float(chi.cdf(datum.cutoff_n / datum.thermal_speed, 3))


def shell_probability(datum: InitialDatum, inner, outer):
    scale = datum.thermal_speed
    return float(chi.cdf(outer / scale, 3) - chi.cdf(inner / scale, 3))


def derived_c1(datum: InitialDatum):
    """Amplitude C1 of f0^N = C1 exp(-lambda v^2) on box x b(N) carrying total_charge."""
    gaussian_mass = (math.pi / datum.lam) ** 1.5
    return datum.total_charge / (datum.box_volume * gaussian_mass * acceptance_probability(datum))


def equal_weights(total, count):
    """fsum of the result is exactly total; the last weight absorbs the rounding."""
    weights = np.full(count, total / count)
    weights[-1] = total - math.fsum(weights[:-1])
    for _ in range(64):
        s = math.fsum(weights)
        if s == total:
            break
        weights[-1] = np.nextafter(weights[-1], math.inf if s < total else -math.inf)
    return weights


def _uniform_positions(datum, count, rng):
    return rng.uniform(np.asarray(datum.box_min), np.asarray(datum.box_max), size=(count, 3))


def sample(datum: InitialDatum, count: int, seed=None, rng=None):
    """
    Draw the initial ensemble of f0^N: positions uniform in the support box,
    Gaussian velocities with variance 1/(2 lambda) per component, rejected
    until |v| < cutoff_n, equal weights summing to total_charge.

    Pass `rng` instead of `seed` to continue an existing stream.
    """
    if count < 1:
        raise ValueError(f'count must be >= 1, got {count}')
    acceptance = acceptance_probability(datum)
    if acceptance < MIN_ACCEPTANCE:
        raise SamplingError(f'cutoff_n={datum.cutoff_n} accepts only {acceptance:.3e} of the velocities')
    if rng is None:
        rng = np.random.default_rng(seed)

    positions = _uniform_positions(datum, count, rng)
    velocities = rng.normal(0.0, datum.thermal_speed, size=(count, 3))
    if not math.isinf(datum.cutoff_n):
        rejected = np.sum(velocities ** 2, axis=1) >= datum.cutoff_n ** 2
        while np.any(rejected):
            velocities[rejected] = rng.normal(0.0, datum.thermal_speed, size=(int(rejected.sum()), 3))
            rejected = np.sum(velocities ** 2, axis=1) >= datum.cutoff_n ** 2

    return Ensemble(positions, velocities, equal_weights(datum.total_charge, count))


def sample_shell(datum: InitialDatum, inner, outer, count, rng, weight):
    """Particles of the same spatial law with inner <= |v| < outer (inverse-CDF speeds, isotropic directions)."""
    if count == 0:
        return Ensemble(np.empty((0, 3)), np.empty((0, 3)), np.empty(0))
    scale = datum.thermal_speed
    positions = _uniform_positions(datum, count, rng)
    lo, hi = chi.cdf(inner / scale, 3), chi.cdf(outer / scale, 3)
    speeds = scale * chi.ppf(rng.uniform(lo, hi, size=count), 3)
    speeds = np.clip(speeds, inner, np.nextafter(outer, inner))
    directions = rng.normal(size=(count, 3))
    directions /= np.linalg.norm(directions, axis=1)[:, None]
    return Ensemble(positions, directions * speeds[:, None], np.full(count, weight))


@dataclass(frozen=True)
class GridSpec:
    origin: tuple
    spacing: tuple
    shape: tuple

    @property
    def cell_volume(self):
        return float(np.prod(self.spacing))

    @classmethod
    def covering(cls, positions, cells=32, margin_cells=1):
        positions = np.asarray(positions, dtype=float).reshape(-1, 3)
        lo, hi = positions.min(axis=0), positions.max(axis=0)
        extent = np.maximum(hi - lo, 1e-12)
        spacing = extent / max(cells - 2 * margin_cells, 1)
        origin = lo - margin_cells * spacing
        return cls(tuple(origin), tuple(spacing), (cells, cells, cells))

    def cell_centers(self, axis):
        return self.origin[axis] + (np.arange(self.shape[axis]) + 0.5) * self.spacing[axis]


def estimate_density(ensemble: Ensemble, grid: GridSpec):
    """
    Cloud-in-cell deposition onto cell centers.

    Returns:
        rho: array of grid.shape with sum(rho) * cell_volume equal to the deposited charge.
        overflow: charge whose stencil fell outside the grid.
    """
    rho = np.zeros(grid.shape)
    f = (ensemble.positions - np.asarray(grid.origin)) / np.asarray(grid.spacing) - 0.5
    base = np.floor(f).astype(np.int64)
    frac = f - base
    shape = np.asarray(grid.shape)
    overflow = 0.0
    for corner in range(8):
        offset = np.array([(corner >> 2) & 1, (corner >> 1) & 1, corner & 1])
        idx = base + offset
        share = ensemble.weights * np.prod(np.where(offset == 1, frac, 1.0 - frac), axis=1)
        inside = np.all((idx >= 0) & (idx < shape), axis=1)
        np.add.at(rho, (idx[inside, 0], idx[inside, 1], idx[inside, 2]), share[inside])
        overflow += float(np.sum(share[~inside]))
    if overflow > 0:
        logger.warning(f'density grid does not cover the ensemble: {overflow:.3e} charge in the overflow bin')
    return rho / grid.cell_volume, overflow


def density_l53_norm(rho, grid: GridSpec):
    return float(np.sum(np.asarray(rho) ** (5.0 / 3.0)) * grid.cell_volume)


def write_snapshot(path, ensemble: Ensemble):
    table = ensemble.as_table()
    if str(path).endswith('.npy'):
        np.save(path, table.astype('<f8'))
    else:
        np.savetxt(path, table, fmt='%.17g', delimiter=',', header=','.join(SNAPSHOT_COLUMNS), comments='')


def read_snapshot(path):
    if str(path).endswith('.npy'):
        return Ensemble.from_table(np.load(path))
    return Ensemble.from_table(np.loadtxt(path, delimiter=',', skiprows=1, ndmin=2))
