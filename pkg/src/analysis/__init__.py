from .ledger import Interval, LedgerInput, LedgerReport, check_shield_condition, compute_intervals, \
    ladder_schedule, build_report
from .diagnostics import DiagRecord, FieldAverageTracker, Recorder, record, field_time_average, \
    confinement_bound_check, gaussian_tail_check, velocity_window_report, corollary_check, run_schedule
