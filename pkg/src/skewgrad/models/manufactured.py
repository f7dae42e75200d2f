"""Closed-form manufactured solutions and their source terms.

Both cases share the velocity/pressure pair on the unit square

    u = a(t) sin(2 pi y) (1 - cos(2 pi x))
    v = a(t) sin(2 pi x) (cos(2 pi y) - 1)
    p = a(t) cos(2 pi x) cos(2 pi y),       a(t) = cos(t^2) / 2,

which is periodic and divergence free.  The two-phase case adds
``phi = a(t) cos(4 pi x) cos(4 pi y)``.  Sources are the residuals of the
exact fields in the continuous equations, hand-derived.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PI = np.pi


def amp(t):
    return 0.5 * np.cos(t * t)


def amp_dt(t):
    return -t * np.sin(t * t)


def _trig(x, y):
    X, Y = 2 * PI * x, 2 * PI * y
    return np.sin(X), np.cos(X), np.sin(Y), np.cos(Y)


@dataclass(frozen=True)
class NSManufactured:
    """Forced incompressible NS: ``v_t + v.grad v + grad p - nu Lap v = f``."""

    nu: float = 0.01
    rho: float = 1.0

    def velocity(self, x, y, t):
        sx, cx, sy, cy = _trig(x, y)
        a = amp(t)
        return np.stack([a * sy * (1 - cx), a * sx * (cy - 1)])

    def velocity_dt(self, x, y, t):
        sx, cx, sy, cy = _trig(x, y)
        a = amp_dt(t)
        return np.stack([a * sy * (1 - cx), a * sx * (cy - 1)])

    def pressure(self, x, y, t):
        _, cx, _, cy = _trig(x, y)
        return amp(t) * cx * cy

    def pressure_grad(self, x, y, t):
        sx, cx, sy, cy = _trig(x, y)
        a = amp(t)
        return np.stack([-2 * PI * a * sx * cy, -2 * PI * a * cx * sy])

    def convection(self, x, y, t):
        a2 = amp(t) ** 2
        s1, c1 = np.sin(PI * x), np.cos(PI * x)
        s2, c2 = np.sin(PI * y), np.cos(PI * y)
        return 16 * PI * a2 * np.stack([s1 ** 3 * c1 * s2 ** 2, s1 ** 2 * s2 ** 3 * c2])

    def laplacian(self, x, y, t):
        sx, cx, sy, cy = _trig(x, y)
        a = amp(t)
        return 4 * PI ** 2 * a * np.stack([(2 * cx - 1) * sy, (1 - 2 * cy) * sx])

    def source(self, x, y, t):
        return (self.rho * (self.velocity_dt(x, y, t) + self.convection(x, y, t))
                + self.pressure_grad(x, y, t) - self.nu * self.laplacian(x, y, t))


@dataclass(frozen=True)
class CHNSManufactured(NSManufactured):
    """Two-phase case: sources for

    ``rho (v_t + v.grad v) = -grad p + nu Lap v - phi grad mu + f_v``,
    ``phi_t + div(v phi) = M Lap mu + f_phi``,
    ``mu = -gamma eps Lap phi + gamma/eps (phi^3 - phi)``.
    """

    nu: float = 1.0
    mobility: float = 1.0
    gamma: float = 1.0
    eps: float = 1.0

    def phase(self, x, y, t):
        return amp(t) * np.cos(4 * PI * x) * np.cos(4 * PI * y)

    def phase_grad(self, x, y, t):
        a = amp(t)
        return np.stack([-4 * PI * a * np.sin(4 * PI * x) * np.cos(4 * PI * y),
                         -4 * PI * a * np.cos(4 * PI * x) * np.sin(4 * PI * y)])

    def chemical_potential(self, x, y, t):
        phi = self.phase(x, y, t)
        g, e = self.gamma, self.eps
        return 32 * PI ** 2 * g * e * phi + g / e * (phi ** 3 - phi)

    def _dmu_dphi(self, phi):
        # mu = c phi + (g/e)(phi^3 - phi) with Lap phi = -32 pi^2 phi
        g, e = self.gamma, self.eps
        return 32 * PI ** 2 * g * e + g / e * (3 * phi ** 2 - 1)

    def source_velocity(self, x, y, t):
        phi = self.phase(x, y, t)
        grad_mu = self._dmu_dphi(phi) * self.phase_grad(x, y, t)
        return self.source(x, y, t) + phi * grad_mu

    def source_phase(self, x, y, t):
        phi = self.phase(x, y, t)
        dphi_dt = amp_dt(t) * np.cos(4 * PI * x) * np.cos(4 * PI * y)
        gp = self.phase_grad(x, y, t)
        vel = self.velocity(x, y, t)
        lap_phi = -32 * PI ** 2 * phi
        lap_mu = self._dmu_dphi(phi) * lap_phi + 6 * self.gamma / self.eps * phi * (gp[0] ** 2 + gp[1] ** 2)
        return dphi_dt + vel[0] * gp[0] + vel[1] * gp[1] - self.mobility * lap_mu


def manufactured_sources(case, x, y, t):
    """Source terms of ``case`` at time ``t``: ``f_v`` or ``(f_v, f_phi)``."""
    if isinstance(case, CHNSManufactured):
        return case.source_velocity(x, y, t), case.source_phase(x, y, t)
    return case.source(x, y, t)
