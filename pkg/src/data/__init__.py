from .sampling import Ensemble, Particle, GridSpec, sample, sample_shell, estimate_density, density_l53_norm, \
    acceptance_probability, shell_probability, derived_c1, write_snapshot, read_snapshot
from .utils import \
    write_json_atomic, \
    read_json, \
    write_jsonl, \
    read_jsonl, \
    append_csv
