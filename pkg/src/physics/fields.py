"""
External fields acting on the plasma: the attractive wall potential U, the wall
magnetic field B = (0, 0, h(x1)), its primitive H and the optional point charge
fixed at the origin.

Near the wall (0 < x1 <= blend_lo)

    U(x) = -x1^(-mu),    h(x1) = x1^(-tau),

and both are multiplied by the quintic taper chi on (blend_lo, blend_hi) so
that they vanish identically for x1 >= blend_hi. Every function accepts either
a single position (shape (3,)) or a batch (shape (n, 3)).
"""
import logging

import numpy as np
from scipy.integrate import quad_vec
from scipy.interpolate import CubicHermiteSpline

from src.args import ExternalFieldConfig
from src.exceptions import FieldDomainError

logger = logging.getLogger(__name__)

PRIMITIVE_TABLE_NODES = 2049
PRIMITIVE_TOLERANCE = 1e-12


def taper(u, lo=1.0, hi=2.0):
    """chi(u) = 1 - (6s^5 - 15s^4 + 10s^3), s = (u - lo)/(hi - lo) clipped to [0, 1]."""
    s = np.clip((np.asarray(u, dtype=float) - lo) / (hi - lo), 0.0, 1.0)
    return 1.0 - s ** 3 * (10.0 - 15.0 * s + 6.0 * s ** 2)


def taper_derivative(u, lo=1.0, hi=2.0):
    s = np.clip((np.asarray(u, dtype=float) - lo) / (hi - lo), 0.0, 1.0)
    return -30.0 * s ** 2 * (s - 1.0) ** 2 / (hi - lo)


def _positions(x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != 3:
        raise ValueError(f'positions must have a trailing axis of length 3, got shape {x.shape}')
    return x


def _wall_coordinate(x1):
    x1 = np.asarray(x1, dtype=float)
    if np.any(~(x1 > 0)):
        raise FieldDomainError(f'external fields are undefined for x1 <= 0 (min x1 = {np.min(x1)})')
    return x1


class ExternalField:

    def __init__(self, cfg: ExternalFieldConfig):
        cfg.validate()
        self.cfg = cfg
        self.lo = cfg.blend_lo
        self.hi = cfg.blend_hi
        self._primitive_spline, self._primitive_constant = self._build_primitive()

    # profiles of x1 only

    def potential_profile(self, x1):
        x1 = _wall_coordinate(x1)
        return -x1 ** (-self.cfg.mu) * taper(x1, self.lo, self.hi)

    def force_profile(self, x1):
        x1 = _wall_coordinate(x1)
        mu = self.cfg.mu
        chi = taper(x1, self.lo, self.hi)
        dchi = taper_derivative(x1, self.lo, self.hi)
        return -mu * x1 ** (-mu - 1.0) * chi + x1 ** (-mu) * dchi

    def magnetic_profile(self, x1):
        x1 = _wall_coordinate(x1)
        if not self.cfg.magnetic_enabled:
            return np.zeros_like(x1)
        return x1 ** (-self.cfg.tau) * taper(x1, self.lo, self.hi)

    def _build_primitive(self):
        if not self.cfg.magnetic_enabled:
            return None, 0.0
        nodes = np.linspace(self.lo, self.hi, PRIMITIVE_TABLE_NODES)
        widths = self.hi - nodes

        # int_{x_k}^{hi} h, written on the unit interval so the integrand is smooth in u
        def integrand(u):
            return widths * self.magnetic_profile(nodes + widths * u)

        tail, err = quad_vec(integrand, 0.0, 1.0, epsabs=PRIMITIVE_TOLERANCE, epsrel=PRIMITIVE_TOLERANCE)
        logger.debug(f'magnetic primitive table built ({PRIMITIVE_TABLE_NODES} nodes, quadrature error {err:.2e})')
        values = -tail
        spline = CubicHermiteSpline(nodes, values, self.magnetic_profile(nodes))
        tau = self.cfg.tau
        # continuity at blend_lo fixes the constant of the closed form
        constant = values[0] - self.lo ** (1.0 - tau) / (1.0 - tau)
        return spline, constant

    # public operations

    def external_potential(self, x):
        """U(x); in point-charge mode the Coulomb attractor -s/|x| replaces U."""
        x = _positions(x)
        if self.cfg.point_charge_mode:
            return -self.cfg.point_charge_strength / self._radius(x)
        return self.potential_profile(x[..., 0])

    def external_force(self, x):
        """-grad U. Only the first component is nonzero; zero in point-charge mode."""
        x = _positions(x)
        x1 = _wall_coordinate(x[..., 0])
        force = np.zeros_like(x)
        if not self.cfg.point_charge_mode:
            force[..., 0] = self.force_profile(x1)
        return force

    def magnetic_field(self, x):
        x = _positions(x)
        field = np.zeros_like(x)
        field[..., 2] = self.magnetic_profile(x[..., 0])
        return field

    def magnetic_primitive(self, x1):
        """H with H' = h, normalized by H(blend_hi) = 0."""
        x1 = _wall_coordinate(x1)
        if self._primitive_spline is None:
            return np.zeros_like(x1)
        tau = self.cfg.tau
        near = x1 <= self.lo
        inside = (x1 > self.lo) & (x1 < self.hi)
        result = np.zeros_like(x1)
        result = np.where(near, np.where(near, x1, 1.0) ** (1.0 - tau) / (1.0 - tau) + self._primitive_constant,
                          result)
        if np.any(inside):
            result = np.where(inside, self._primitive_spline(np.clip(x1, self.lo, self.hi)), result)
        return result

    def point_charge_force(self, x):
        """-s x/|x|^3, the attraction of the charge fixed at the origin."""
        x = _positions(x)
        if not self.cfg.point_charge_mode:
            return np.zeros_like(x)
        r = self._radius(x)
        return -self.cfg.point_charge_strength * x / (r ** 3)[..., None]

    def total_external_force(self, x):
        x = _positions(x)
        force = self.external_force(x)
        if self.cfg.point_charge_mode:
            force = force + self.point_charge_force(x)
        return force

    @staticmethod
    def _radius(x):
        r = np.sqrt(np.sum(x * x, axis=-1))
        if np.any(r == 0):
            raise FieldDomainError('the point-charge field is undefined at the origin')
        return r
