from .fields import ExternalField, taper
from .octree import Octree
from .self_field import FieldSolver, default_softening, direct_field_at, potential_energy
from .integrator import SimState, RunArtifact, boris_step, boris_push, compute_dt, advance, run, \
    reference_trajectory, reference_fall
