"""Small flows shared by the integrator and acceptance tests."""
import numpy as np

from skewgrad.hilbert import EnergyFunctional, GeneralizedGradientFlow, InnerProduct
from skewgrad.spatial import PeriodicGrid


def rotating_quartic(omega=2.0):
    """Two-component flow ``u' = -grad F + omega R grad F``, ``F = |u|^2/2 + sum u^4/4``.

    ``R`` is the quarter rotation, so the second term carries no energy.
    """
    ip = InnerProduct((2,))
    F = EnergyFunctional(ip, lambda u: u, density=lambda u: 0.25 * u ** 4,
                         density_prime=lambda u: u ** 3, degree=4, lipschitz=0.0)

    def zec(u):
        g = u + u ** 3
        return omega * np.stack([-g[..., 1], g[..., 0]], axis=-1)

    return GeneralizedGradientFlow(F, np.ones(2), -np.ones(2), zec=zec, name="rotating-quartic")


def advected_allen_cahn(n=64, eps=0.05, speed=1.0, lipschitz=2.0):
    """Periodic Allen-Cahn on [0, 1) with a constant-speed transport term.

    ``F = int eps^2/2 |u_x|^2 + u^2/2 + (u^2 - 1)^2/4 - u^2/2``; the density
    second derivative ``3u^2 - 2`` stays below ``lipschitz`` for ``|u| <= 1``.
    """
    g = PeriodicGrid(n, 1)
    ip = g.inner_product()
    lin = 1.0 + eps ** 2 * g.k2
    F = EnergyFunctional(
        ip,
        lambda u: g.inverse(lin * g.forward(u)),
        density=lambda u: 0.25 * (u * u - 1.0) ** 2 - 0.5 * u * u,
        density_prime=lambda u: u ** 3 - 2.0 * u,
        lipschitz=lipschitz,
        degree=4,
    )
    flow = GeneralizedGradientFlow(
        F, lin, -np.ones(g.spectral_shape), zec=lambda u: -speed * g.derivative(u),
        to_modal=g.forward, from_modal=g.inverse, name="advected-ac")
    x = g.coords()
    u0 = 0.8 * np.sin(2 * np.pi * x) + 0.3 * np.cos(6 * np.pi * x)
    return flow, u0
