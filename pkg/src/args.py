import dataclasses
import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Tuple

import yaml

from src.exceptions import ConfigError

SCHEMA_VERSION = 1
OUTPUT_ROOT_ENV = 'MAGSHIELD_OUTPUT_ROOT'
THREADS_ENV = 'MAGSHIELD_THREADS'


class ExactFloat(float):
    """A float read from a rational literal such as '1/3'. It still carries the exact value."""

    def __new__(cls, fraction):
        obj = super().__new__(cls, float(fraction))
        obj.fraction = Fraction(fraction)
        return obj


def to_rational(value):
    """Exact reading of a user-supplied number: '11/2' and 5.5 both give Fraction(11, 2)."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, ExactFloat):
        return value.fraction
    if isinstance(value, bool):
        raise TypeError('booleans are not numbers here')
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        if not math.isfinite(value):
            raise ValueError(f'{value} has no rational value')
        return Fraction(repr(float(value)))
    return Fraction(str(value).strip())


def _as_float(value):
    if isinstance(value, str):
        text = value.strip().lower()
        if text in ('inf', '.inf', '+inf', 'infinity'):
            return math.inf
        if '/' in text:
            return ExactFloat(Fraction(text))
        return float(Fraction(text))
    if value is None:
        return math.inf
    return float(value)


@dataclass(frozen=True)
class ExternalFieldConfig:
    mu: float = field(
        default=1.0,
        metadata={'help': 'Exponent of the attractive wall potential U = -x1^(-mu).'}
    )
    tau: float = field(
        default=6.0,
        metadata={'help': 'Exponent of the wall magnetic field h = x1^(-tau).'}
    )
    blend_lo: float = field(
        default=1.0,
        metadata={'help': 'Start of the smooth taper of U and h.'}
    )
    blend_hi: float = field(
        default=2.0,
        metadata={'help': 'End of the taper; both fields vanish for x1 >= blend_hi.'}
    )
    magnetic_enabled: bool = field(
        default=True,
        metadata={'help': 'Switch off to run the shield-off counterfactual (h = 0).'}
    )
    point_charge_mode: bool = field(
        default=False,
        metadata={'help': 'Replace U by a negative point charge fixed at the origin.'}
    )
    point_charge_strength: float = field(
        default=1.0,
        metadata={'help': 'Magnitude s of the fixed charge: U = -s/|x|.'}
    )

    def validate(self, prefix='field'):
        if not self.mu > 0:
            raise ConfigError(f'{prefix}.mu', f'must be > 0, got {self.mu}')
        if not self.tau > 1:
            raise ConfigError(f'{prefix}.tau', f'must be > 1, got {self.tau}')
        if not 0 < self.blend_lo < self.blend_hi:
            raise ConfigError(f'{prefix}.blend_hi',
                              f'need 0 < blend_lo < blend_hi, got {self.blend_lo}, {self.blend_hi}')
        if self.point_charge_strength < 0:
            raise ConfigError(f'{prefix}.point_charge_strength', 'must be >= 0')


@dataclass(frozen=True)
class InitialDatum:
    lam: float = field(
        default=1.0,
        metadata={'help': 'Gaussian rate lambda of f0 ~ exp(-lambda v^2).', 'key': 'lambda'}
    )
    box_min: Tuple[float, float, float] = field(
        default=(0.5, -0.5, -0.5),
        metadata={'help': 'Minimum corner of the spatial support; its first coordinate is A > 0.'}
    )
    box_max: Tuple[float, float, float] = field(
        default=(1.5, 0.5, 0.5),
        metadata={'help': 'Maximum corner of the spatial support.'}
    )
    total_charge: float = field(
        default=0.1,
        metadata={'help': 'Total charge of the cut datum f0^N (sum of particle weights).'}
    )
    cutoff_n: float = field(
        default=math.inf,
        metadata={'help': 'Velocity cutoff N of the partial dynamics (.inf for none).'}
    )

    @property
    def a(self):
        return self.box_min[0]

    @property
    def box_volume(self):
        return float(abs((self.box_max[0] - self.box_min[0]) *
                         (self.box_max[1] - self.box_min[1]) *
                         (self.box_max[2] - self.box_min[2])))

    @property
    def thermal_speed(self):
        return math.sqrt(1.0 / (2.0 * self.lam))

    def validate(self, prefix='datum'):
        if not self.lam > 0:
            raise ConfigError(f'{prefix}.lambda', f'must be > 0, got {self.lam}')
        if len(self.box_min) != 3 or len(self.box_max) != 3:
            raise ConfigError(f'{prefix}.box_min', 'corners must have three coordinates')
        if not self.box_min[0] > 0:
            raise ConfigError(f'{prefix}.box_min', f'first coordinate A must be > 0, got {self.box_min[0]}')
        if any(lo >= hi for lo, hi in zip(self.box_min, self.box_max)):
            raise ConfigError(f'{prefix}.box_max', 'every coordinate must exceed box_min')
        if not (self.total_charge > 0 and math.isfinite(self.total_charge)):
            raise ConfigError(f'{prefix}.total_charge', f'must be finite and > 0, got {self.total_charge}')
        if not self.cutoff_n > 0:
            raise ConfigError(f'{prefix}.cutoff_n', f'must be > 0, got {self.cutoff_n}')


@dataclass(frozen=True)
class SolverConfig:
    mode: str = field(
        default='direct',
        metadata={'help': 'Self-field evaluation: direct (pairwise) or tree (Barnes-Hut octree).'}
    )
    softening: Optional[float] = field(
        default=None,
        metadata={'help': 'Plummer softening; null resolves to 1e-3 times the mean interparticle spacing.'}
    )
    opening_angle: float = field(
        default=0.5,
        metadata={'help': 'Tree acceptance ratio theta (cell size / distance).'}
    )
    quadrupole: bool = field(
        default=False,
        metadata={'help': 'Add quadrupole corrections to accepted tree cells.'}
    )
    leaf_size: int = field(
        default=1,
        metadata={'help': 'Maximum particles per octree leaf.'}
    )
    self_field: bool = field(
        default=True,
        metadata={'help': 'Switch off to evolve in the external fields only.'}
    )

    def validate(self, prefix='solver'):
        if self.mode not in ('direct', 'tree'):
            raise ConfigError(f'{prefix}.mode', f'must be direct or tree, got {self.mode!r}')
        if self.softening is not None and self.softening < 0:
            raise ConfigError(f'{prefix}.softening', 'must be >= 0')
        if not 0 < self.opening_angle < 1:
            raise ConfigError(f'{prefix}.opening_angle', 'must lie in (0, 1)')
        if self.leaf_size < 1:
            raise ConfigError(f'{prefix}.leaf_size', 'must be >= 1')


@dataclass(frozen=True)
class StepperConfig:
    dt_base: float = field(default=1e-3, metadata={'help': 'Largest time step.'})
    gyro_safety: float = field(default=0.2, metadata={'help': 'Maximum dt*|B|.'})
    wall_safety: float = field(default=0.1, metadata={'help': 'Maximum dt*|v1|/x1.'})
    dt_min: float = field(default=1e-9, metadata={'help': 'Step floor; below it the run aborts.'})
    t_end: float = field(default=5.0, metadata={'help': 'Time horizon T.'})

    def validate(self, prefix='stepper'):
        if not self.dt_base > 0:
            raise ConfigError(f'{prefix}.dt_base', 'must be > 0')
        if not 0 < self.gyro_safety <= 1:
            raise ConfigError(f'{prefix}.gyro_safety', 'must lie in (0, 1]')
        if not 0 < self.wall_safety <= 1:
            raise ConfigError(f'{prefix}.wall_safety', 'must lie in (0, 1]')
        if not 0 < self.dt_min <= self.dt_base:
            raise ConfigError(f'{prefix}.dt_min', 'need 0 < dt_min <= dt_base')
        if self.t_end < 0:
            raise ConfigError(f'{prefix}.t_end', 'must be >= 0')

    def scaled(self, factor):
        return dataclasses.replace(self,
                                   dt_base=self.dt_base * factor,
                                   gyro_safety=self.gyro_safety * factor,
                                   wall_safety=self.wall_safety * factor,
                                   dt_min=min(self.dt_min, self.dt_base * factor))


@dataclass(frozen=True)
class DiagnosticsConfig:
    c3: float = field(default=1.0, metadata={'help': 'Floor C3 of the running maximal speed.'})
    density_cells: int = field(default=32, metadata={'help': 'Cells per axis of the density grid.'})
    gamma: float = field(default=0.6, metadata={'help': 'Field-average exponent gamma fed to the ledger.'})
    c6: float = field(default=1.0, metadata={'help': 'Field constant C6 fed to the ledger.'})
    ladder_factor_floor: int = field(
        default=2,
        metadata={'help': 'Window factor used when Intg(V^delta) < 2 makes the ladder degenerate.'}
    )
    tail_bins: int = field(default=50, metadata={'help': 'Speed histogram bins of the tail check.'})

    def validate(self, prefix='diagnostics'):
        if not self.c3 > 0:
            raise ConfigError(f'{prefix}.c3', 'must be > 0')
        if self.density_cells < 1:
            raise ConfigError(f'{prefix}.density_cells', 'must be >= 1')
        if not 0 < self.gamma < Fraction(2, 3):
            raise ConfigError(f'{prefix}.gamma', 'must lie in (0, 2/3)')
        if not self.c6 > 0:
            raise ConfigError(f'{prefix}.c6', 'must be > 0')
        if self.ladder_factor_floor < 2:
            raise ConfigError(f'{prefix}.ladder_factor_floor', 'must be >= 2')
        if self.tail_bins < 10:
            raise ConfigError(f'{prefix}.tail_bins', 'must be >= 10')


@dataclass(frozen=True)
class ScenarioConfig:
    field: ExternalFieldConfig = dataclasses.field(default_factory=ExternalFieldConfig)
    datum: InitialDatum = dataclasses.field(default_factory=InitialDatum)
    solver: SolverConfig = dataclasses.field(default_factory=SolverConfig)
    stepper: StepperConfig = dataclasses.field(default_factory=StepperConfig)
    diagnostics: DiagnosticsConfig = dataclasses.field(default_factory=DiagnosticsConfig)
    particle_count: int = dataclasses.field(default=512, metadata={'help': 'Number of macroparticles.'})
    seed: int = dataclasses.field(default=42, metadata={'help': 'Seed of the sampling stream.'})
    deterministic: bool = dataclasses.field(
        default=True,
        metadata={'help': 'Fixed reduction order; repeated runs are byte-identical.'}
    )
    record_cadence: int = dataclasses.field(default=10, metadata={'help': 'Steps per DiagRecord.'})
    snapshot_cadence: int = dataclasses.field(
        default=0,
        metadata={'help': 'Steps per ensemble snapshot; 0 writes the initial and final ensembles only.'}
    )
    snapshot_format: str = dataclasses.field(default='csv', metadata={'help': 'csv or npy.'})
    tracked_particles: int = dataclasses.field(
        default=32,
        metadata={'help': 'Particles whose |E| history feeds the window averages.'}
    )
    output_dir: str = dataclasses.field(default='./runs', metadata={'help': 'Base path where to save runs.'})

    def validate(self):
        self.field.validate()
        self.datum.validate()
        self.solver.validate()
        self.stepper.validate()
        self.diagnostics.validate()
        if self.particle_count < 1:
            raise ConfigError('run.particle_count', 'must be >= 1')
        if self.record_cadence < 1:
            raise ConfigError('run.record_cadence', 'must be >= 1')
        if self.snapshot_cadence < 0:
            raise ConfigError('run.snapshot_cadence', 'must be >= 0')
        if self.snapshot_format not in ('csv', 'npy'):
            raise ConfigError('run.snapshot_format', 'must be csv or npy')
        if self.tracked_particles < 1:
            raise ConfigError('run.tracked_particles', 'must be >= 1')
        return self

    def to_dict(self):
        data = {'schema_version': SCHEMA_VERSION}
        for section, obj in SECTIONS.items():
            if section == 'run':
                continue
            data[section] = {_key(f): _jsonable(getattr(getattr(self, section), f.name))
                             for f in dataclasses.fields(obj)}
        data['run'] = {name: _jsonable(getattr(self, name)) for name in RUN_KEYS}
        return data

    def digest(self):
        """SHA-256 of the canonical scenario, output location excluded."""
        data = self.to_dict()
        data['run'].pop('output_dir')
        canonical = json.dumps(data, sort_keys=True, separators=(',', ':'))
        return hashlib.sha256(canonical.encode('utf-8')).hexdigest()

    @property
    def run_id(self):
        return self.digest()[:12]

    def resolved_output_dir(self):
        return os.environ.get(OUTPUT_ROOT_ENV) or self.output_dir


SECTIONS = {
    'field': ExternalFieldConfig,
    'datum': InitialDatum,
    'solver': SolverConfig,
    'stepper': StepperConfig,
    'diagnostics': DiagnosticsConfig,
    'run': None,
}
RUN_KEYS = ('particle_count', 'seed', 'deterministic', 'record_cadence', 'snapshot_cadence',
            'snapshot_format', 'tracked_particles', 'output_dir')


def _key(f):
    return f.metadata.get('key', f.name)


def _jsonable(value):
    if isinstance(value, tuple):
        return [_jsonable(v) for v in value]
    if isinstance(value, float) and math.isinf(value):
        return 'inf'
    if isinstance(value, ExactFloat):
        return str(value.fraction)
    return value


def _coerce(value, f, path, line):
    target = f.type
    try:
        if target in (float, 'float'):
            return _as_float(value)
        if target in (Optional[float], 'Optional[float]'):
            return None if value is None else _as_float(value)
        if target in (int, 'int'):
            if isinstance(value, bool) or float(value) != int(value):
                raise ValueError(f'{value!r} is not an integer')
            return int(value)
        if target in (bool, 'bool'):
            if not isinstance(value, bool):
                raise ValueError(f'{value!r} is not a boolean')
            return value
        if target in (str, 'str'):
            return str(value)
        if 'Tuple' in str(target):
            return tuple(_as_float(v) for v in value)
    except (TypeError, ValueError, ZeroDivisionError) as e:
        raise ConfigError(path, f'cannot read {value!r}: {e}', line)
    return value


def _line_index(node, prefix='', index=None):
    """Dotted key path -> 1-based line, read from the YAML node marks."""
    if index is None:
        index = {}
    if isinstance(node, yaml.MappingNode):
        for key_node, value_node in node.value:
            path = f'{prefix}.{key_node.value}' if prefix else str(key_node.value)
            index[path] = key_node.start_mark.line + 1
            _line_index(value_node, path, index)
    return index


def _build_section(cls, raw, section, lines):
    raw = dict(raw or {})
    kwargs = {}
    for f in dataclasses.fields(cls):
        key = _key(f)
        if key in raw:
            path = f'{section}.{key}'
            kwargs[f.name] = _coerce(raw.pop(key), f, path, lines.get(path))
    if raw:
        key = sorted(raw)[0]
        path = f'{section}.{key}'
        raise ConfigError(path, 'unknown key', lines.get(path))
    return cls(**kwargs)


def scenario_from_dict(data, lines=None):
    lines = lines or {}
    if not isinstance(data, dict):
        raise ConfigError('<root>', 'scenario must be a mapping')
    data = dict(data)
    version = data.pop('schema_version', None)
    if version != SCHEMA_VERSION:
        raise ConfigError('schema_version', f'expected {SCHEMA_VERSION}, got {version!r}',
                          lines.get('schema_version'))
    unknown = sorted(set(data) - set(SECTIONS))
    if unknown:
        raise ConfigError(unknown[0], 'unknown section', lines.get(unknown[0]))

    kwargs = {}
    for section, cls in SECTIONS.items():
        if section == 'run':
            continue
        kwargs[section] = _build_section(cls, data.get(section), section, lines)
    run = dict(data.get('run') or {})
    run_fields = {f.name: f for f in dataclasses.fields(ScenarioConfig)}
    for key in list(run):
        path = f'run.{key}'
        if key not in RUN_KEYS:
            raise ConfigError(path, 'unknown key', lines.get(path))
        kwargs[key] = _coerce(run.pop(key), run_fields[key], path, lines.get(path))

    scenario = ScenarioConfig(**kwargs)
    try:
        return scenario.validate()
    except ConfigError as e:
        if e.line is None and e.field in lines:
            raise ConfigError(e.field, str(e).split(': ', 1)[-1], lines[e.field]) from None
        raise


def load_scenario(path):
    with open(path, 'r') as f:
        text = f.read()
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, 'problem_mark', None)
        raise ConfigError('<yaml>', str(e), None if mark is None else mark.line + 1)
    return scenario_from_dict(data, _line_index(node))


def dump_scenario(scenario, path):
    with open(path, 'w') as f:
        yaml.safe_dump(scenario.to_dict(), f, sort_keys=False)


def config_rows(scenario):
    rows = []
    for section, values in scenario.to_dict().items():
        if isinstance(values, dict):
            rows.extend((f'{section}.{k}', str(v)) for k, v in values.items())
        else:
            rows.append((section, str(values)))
    return rows


def scenario_help():
    lines = ['scenario keys:']
    for section, cls in SECTIONS.items():
        if cls is None:
            fields = [f for f in dataclasses.fields(ScenarioConfig) if f.name in RUN_KEYS]
        else:
            fields = dataclasses.fields(cls)
        for f in fields:
            default = _jsonable(f.default) if f.default is not dataclasses.MISSING else None
            lines.append(f'  {section}.{_key(f):<22} {f.metadata.get("help", "")} (default: {default})')
    return '\n'.join(lines)
