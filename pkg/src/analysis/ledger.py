"""
Feasibility ledger of the confinement exponents.

Given the field exponents (mu, tau), the field-average exponent gamma, the
constant C6 and a velocity scale V, the ledger decides the shield condition

    (mu + 1)/(tau - 1) < 4/9,

builds the open intervals every auxiliary exponent has to lie in, picks the
midpoint of each (in dependency order) and derives the time-window ladder
Delta_1, Delta_l = Delta_1 * G^(l - 1), l = 1 .. lbar.

Two arithmetic modes are available. Rational inputs are handled exactly with
fractions.Fraction. In interval mode every quantity is an outward-rounded
enclosure, and each emitted open interval is shrunk to the part that is
certainly inside, so a "non-empty" verdict never contradicts the exact one.
"""
import json
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Tuple

import numpy as np
from prettytable import PrettyTable

from src.args import to_rational
from src.exceptions import DegenerateLadder, FieldDomainError, InfeasibleInput

logger = logging.getLogger(__name__)

SHIELD_BOUND = Fraction(4, 9)
ZETA_FACTOR = Fraction(9, 4)
Q_RANGE = (Fraction(1, 2), Fraction(2, 3))


class Interval:
    """Closed enclosure [lo, hi] of a real number, widened by one ulp after every operation."""

    __slots__ = ('lo', 'hi')

    def __init__(self, lo, hi=None):
        self.lo = float(lo)
        self.hi = float(lo if hi is None else hi)
        if self.lo > self.hi:
            raise ValueError(f'empty interval [{self.lo}, {self.hi}]')

    @classmethod
    def enclose(cls, value):
        """Tightest float enclosure of a rational (or float) value."""
        if isinstance(value, Interval):
            return value
        exact = to_rational(value)
        nearest = float(exact)
        if Fraction(nearest) == exact:
            return cls(nearest)
        return cls(np.nextafter(nearest, -np.inf), np.nextafter(nearest, np.inf))

    @staticmethod
    def _out(lo, hi):
        return Interval(np.nextafter(lo, -np.inf), np.nextafter(hi, np.inf))

    def __add__(self, other):
        other = Interval.enclose(other)
        return self._out(self.lo + other.lo, self.hi + other.hi)

    __radd__ = __add__

    def __neg__(self):
        return Interval(-self.hi, -self.lo)

    def __sub__(self, other):
        return self + (-Interval.enclose(other))

    def __rsub__(self, other):
        return Interval.enclose(other) + (-self)

    def __mul__(self, other):
        other = Interval.enclose(other)
        products = [self.lo * other.lo, self.lo * other.hi, self.hi * other.lo, self.hi * other.hi]
        return self._out(min(products), max(products))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = Interval.enclose(other)
        if other.lo <= 0 <= other.hi:
            raise ZeroDivisionError(f'division by an interval containing zero: {other}')
        return self * Interval._out(1.0 / other.hi, 1.0 / other.lo)

    def __rtruediv__(self, other):
        return Interval.enclose(other) / self

    @property
    def mid(self):
        return 0.5 * (self.lo + self.hi)

    def __float__(self):
        return self.mid

    def __repr__(self):
        return f'Interval({self.lo!r}, {self.hi!r})'


def _certainly_lt(a, b):
    if isinstance(a, Interval) or isinstance(b, Interval):
        return Interval.enclose(a).hi < Interval.enclose(b).lo
    return a < b


def _maximum(values):
    if any(isinstance(v, Interval) for v in values):
        values = [Interval.enclose(v) for v in values]
        return Interval(max(v.lo for v in values), max(v.hi for v in values))
    return max(values)


def _floor(value):
    if isinstance(value, Interval):
        return math.floor(value.hi)
    return math.floor(value)


@dataclass(frozen=True)
class OpenInterval:
    lo: object
    hi: object

    @property
    def empty(self):
        return not _certainly_lt(self.lo, self.hi)

    def inner(self):
        lo = self.lo.hi if isinstance(self.lo, Interval) else self.lo
        hi = self.hi.lo if isinstance(self.hi, Interval) else self.hi
        return lo, hi

    def midpoint(self):
        lo, hi = self.inner()
        if isinstance(lo, Fraction) and isinstance(hi, Fraction):
            return (lo + hi) / 2
        return Interval(0.5 * (float(lo) + float(hi)))

    def contains(self, value):
        lo, hi = self.inner()
        if isinstance(value, Interval):
            return lo < value.lo and value.hi < hi
        return lo < value < hi


@dataclass(frozen=True)
class LedgerInput:
    mu: object
    tau: object
    gamma: object = Fraction(3, 5)
    c6: object = Fraction(1)
    vmax: object = Fraction(10)
    exact: bool = True

    @classmethod
    def from_values(cls, mu, tau, gamma=Fraction(3, 5), c6=1, vmax=10, exact=True):
        convert = to_rational if exact else Interval.enclose
        return cls(convert(mu), convert(tau), convert(gamma), convert(c6), convert(vmax), exact)

    def validate(self):
        for name, bound in (('mu', 0), ('tau', 1), ('gamma', 0), ('c6', 0)):
            if not _certainly_lt(bound, getattr(self, name)):
                raise FieldDomainError(f'{name} must be > {bound}, got {getattr(self, name)}')
        if not _certainly_lt(self.gamma, Fraction(2, 3)):
            raise FieldDomainError(f'gamma must be < 2/3, got {self.gamma}')
        if _certainly_lt(self.vmax, 1):
            raise FieldDomainError(f'vmax must be >= 1, got {self.vmax}')
        return self


@dataclass(frozen=True)
class ChosenParameters:
    eta: object
    beta: object
    c: object
    delta: object
    xi: object
    nu: object
    zeta: object
    q: object

    def as_dict(self):
        return {k: getattr(self, k) for k in ('eta', 'beta', 'c', 'delta', 'xi', 'nu', 'zeta', 'q')}


@dataclass(frozen=True)
class LadderSchedule:
    delta1: float
    g_factor: int
    lbar: int
    schedule: Tuple[float, ...]


@dataclass
class LedgerReport:
    mu: object
    tau: object
    gamma: object
    c6: object
    vmax: object
    exact: bool
    shield_ok: bool
    weak_condition_ok: bool
    gamma_prime: object
    ranges: Dict[str, OpenInterval]
    empty: List[str]
    chosen: Optional[ChosenParameters]
    corollary_exponents: Dict[str, object]
    ladder: Optional[LadderSchedule] = None
    ladder_error: Optional[str] = None
    notes: List[str] = field(default_factory=list)

    @property
    def feasible(self):
        return self.shield_ok and not self.empty

    def c_of(self, eta, beta):
        return 2 - eta - beta - self.mu / (self.tau - 1)

    def to_dict(self):
        data = {
            'mu': _render(self.mu), 'tau': _render(self.tau), 'gamma': _render(self.gamma),
            'c6': _render(self.c6), 'vmax': _render(self.vmax),
            'exact': self.exact,
            'shield_ok': self.shield_ok,
            'weak_condition_ok': self.weak_condition_ok,
            'gamma_prime': _render(self.gamma_prime),
            'ranges': {name: [_render(v) for v in rng.inner()] for name, rng in self.ranges.items()},
            'empty': list(self.empty),
            'chosen': None if self.chosen is None else {k: _render(v) for k, v in self.chosen.as_dict().items()},
            'corollary_exponents': {k: _render(v) for k, v in self.corollary_exponents.items()},
            'ladder': None,
            'ladder_error': self.ladder_error,
            'notes': list(self.notes),
        }
        if self.ladder is not None:
            data['ladder'] = {'delta1': self.ladder.delta1, 'g_factor': self.ladder.g_factor,
                              'lbar': self.ladder.lbar, 'schedule': list(self.ladder.schedule)}
        return data

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    def to_table(self):
        table = PrettyTable()
        table.field_names = ['Quantity', 'Value']
        table.align['Quantity'] = 'l'
        table.align['Value'] = 'l'
        for key, value in self.to_dict().items():
            if isinstance(value, dict):
                for sub, v in value.items():
                    table.add_row([f'{key}.{sub}', str(v)])
            else:
                table.add_row([key, str(value)])
        return table


def _render(value):
    if isinstance(value, Fraction):
        return str(value) if value.denominator != 1 else str(value.numerator)
    if isinstance(value, Interval):
        return [value.lo, value.hi]
    return value


def check_shield_condition(mu, tau):
    """(mu + 1)/(tau - 1) < 4/9, decided exactly for rational inputs."""
    if isinstance(mu, Interval) or isinstance(tau, Interval):
        if not (_certainly_lt(0, mu) and _certainly_lt(1, tau)):
            raise FieldDomainError(f'need mu > 0 and tau > 1, got mu={mu}, tau={tau}')
        return _certainly_lt((mu + 1) / (tau - 1), SHIELD_BOUND)
    mu, tau = to_rational(mu), to_rational(tau)
    if not (mu > 0 and tau > 1):
        raise FieldDomainError(f'need mu > 0 and tau > 1, got mu={mu}, tau={tau}')
    return (mu + 1) / (tau - 1) < SHIELD_BOUND


def corollary_exponents(mu, tau, gamma_prime):
    return {
        'magnetic': tau / (tau - 1),
        'wall_force': (mu + 1) / (tau - 1),
        'field_average': 3 * gamma_prime,
        'kinetic': mu / (tau - 1),
    }


def compute_intervals(inp: LedgerInput):
    """Intervals of the auxiliary exponents and their midpoints, chosen in dependency order."""
    inp.validate()
    mu, tau, gamma = inp.mu, inp.tau, inp.gamma
    if not check_shield_condition(mu, tau):
        raise InfeasibleInput(f'shield condition (mu + 1)/(tau - 1) < 4/9 fails for mu={_render(mu)}, '
                              f'tau={_render(tau)}')

    r = mu / (tau - 1)
    s = (mu + 1) / (tau - 1)
    gamma_prime = _maximum([gamma, s])
    two_thirds = Fraction(2, 3)

    ranges = {}
    empty = []

    def admit(name, lo, hi):
        interval = OpenInterval(lo, hi)
        ranges[name] = interval
        if interval.empty:
            empty.append(name)
        return interval

    eta_range = admit('eta', r / 2, two_thirds - r)
    xi_range = admit('xi', Fraction(0), Fraction(1, 4) - Fraction(3, 8) * r)
    nu_lower = _maximum([3 * gamma_prime + 2, 2 * tau / (tau - 1), (mu + 2) / (tau - 1)])
    nu_range = admit('nu', nu_lower / 2, Fraction(2))
    q_range = admit('q', *Q_RANGE)

    chosen = None
    if not eta_range.empty:
        eta = eta_range.midpoint()
        beta_range = admit('beta', Fraction(4, 3), 2 - eta - r)
        if not beta_range.empty:
            beta = beta_range.midpoint()
            c = 2 - eta - beta - r
            delta_range = admit('delta', Fraction(0), c)
            if not (delta_range.empty or xi_range.empty or nu_range.empty):
                nu = nu_range.midpoint()
                chosen = ChosenParameters(eta=eta, beta=beta, c=c, delta=delta_range.midpoint(),
                                          xi=xi_range.midpoint(), nu=nu, zeta=ZETA_FACTOR * nu,
                                          q=q_range.midpoint())

    weak = _certainly_lt(Fraction(7, 4) * mu + Fraction(11, 4), tau)
    report = LedgerReport(mu=mu, tau=tau, gamma=gamma, c6=inp.c6, vmax=inp.vmax, exact=inp.exact,
                          shield_ok=True, weak_condition_ok=weak, gamma_prime=gamma_prime,
                          ranges=ranges, empty=empty, chosen=chosen,
                          corollary_exponents=corollary_exponents(mu, tau, gamma_prime))
    if empty:
        logger.warning(f'empty parameter intervals: {", ".join(empty)}')
    return report


def _lbar(r, delta, c):
    rhs = Fraction(2, 3) + r / 3 - c
    return max(1, _floor(rhs / delta) + 2)


def ladder_schedule(inp: LedgerInput, chosen: ChosenParameters, factor=None):
    """
    Delta_1 = 1 / (4 C6 V^(4/3 + mu/(3(tau - 1)) + eta)), G = Intg(V^delta),
    lbar the smallest integer >= 1 with delta (lbar - 1) > 2/3 + mu/(3(tau - 1)) - c.
    Passing `factor` replaces G.

    Raises:
        DegenerateLadder: when G < 2.
    """
    mu, tau = inp.mu, inp.tau
    r = mu / (tau - 1)
    vmax = float(inp.vmax)
    exponent = Fraction(4, 3) + r / 3 + chosen.eta
    delta1 = 1.0 / (4.0 * float(inp.c6) * vmax ** float(exponent))
    g_factor = math.floor(vmax ** float(chosen.delta)) if factor is None else int(factor)
    if g_factor < 2:
        raise DegenerateLadder(f'Intg(V^delta) = {g_factor} < 2 for V={vmax}, delta={float(chosen.delta):.4g}')

    lbar = _lbar(r, chosen.delta, chosen.c)
    schedule = [delta1]
    for _ in range(lbar - 1):
        schedule.append(schedule[-1] * g_factor)
    return LadderSchedule(delta1=delta1, g_factor=int(g_factor), lbar=int(lbar), schedule=tuple(schedule))


def lbar_for(mu, tau, delta, c):
    """Smallest integer lbar >= 1 with delta (lbar - 1) > 2/3 + mu/(3(tau - 1)) - c (exact)."""
    mu, tau, delta, c = (to_rational(v) for v in (mu, tau, delta, c))
    return _lbar(mu / (tau - 1), delta, c)


def build_report(inp: LedgerInput):
    report = compute_intervals(inp)
    if report.chosen is None:
        return report
    try:
        report.ladder = ladder_schedule(inp, report.chosen)
    except DegenerateLadder as e:
        report.ladder_error = str(e)
        logger.warning(f'ladder is degenerate: {e}')
    if not report.weak_condition_ok:
        report.notes.append('tau <= 7 mu/4 + 11/4: the weaker compatibility inequality fails')
    return report
