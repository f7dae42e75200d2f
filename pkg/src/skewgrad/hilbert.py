"""Discrete Hilbert-space primitives.

Fields are plain numpy arrays whose trailing axes match an
:class:`InnerProduct` layout; any extra leading axes are treated as a
batch (used by the Petrov-Galerkin stepper to evaluate many time nodes
at once).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from numpy.polynomial.legendre import leggauss


class DimensionError(ValueError):
    """Two fields do not share a layout."""


@dataclass(frozen=True)
class InnerProduct:
    """Weighted l2 inner product ``sum_i w u_i v_i`` with a uniform weight.

    ``shape`` is the layout of a single field (components first, then grid).
    """

    shape: tuple
    weight: float = 1.0

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def _axes(self, u):
        nd = len(self.shape)
        if u.shape[u.ndim - nd:] != tuple(self.shape):
            raise DimensionError(
                f"field shape {u.shape} does not end with layout {self.shape}")
        return tuple(range(u.ndim - nd, u.ndim))

    def __call__(self, u, v):
        axes = self._axes(np.asarray(u))
        self._axes(np.asarray(v))
        return self.weight * np.sum(u * v, axis=axes)

    def norm2(self, u):
        return self(u, u)

    def norm(self, u):
        return np.sqrt(self(u, u))

    def integral(self, u):
        return self.weight * np.sum(u, axis=self._axes(np.asarray(u)))

    def check(self, *fields):
        for u in fields:
            self._axes(np.asarray(u))


def inner_product(ip: InnerProduct, u, v):
    return ip(u, v)


def _outer(coef, vec, ip):
    # coef has the batch shape; broadcast it over the layout axes of vec
    return np.expand_dims(coef, tuple(range(-len(ip.shape), 0))) * vec


def wedge_apply(ip: InnerProduct, a, b, v):
    """Apply the exterior 2-form: ``(a ^ b) v = (a, v) b - (b, v) a``."""
    return _outer(ip(a, v), b, ip) - _outer(ip(b, v), a, ip)


class RankTwoSkew:
    """Skew operator ``S v = [(a, v) b - (b, v) a] / scale``.

    ``scale`` may be an array when ``a`` and ``b`` carry batch axes.
    Entries where ``scale`` is zero (or ``None``) act as the zero operator.
    """

    def __init__(self, ip: InnerProduct, a, b, scale):
        self.ip = ip
        self.a = np.asarray(a, dtype=float)
        self.b = np.asarray(b, dtype=float)
        scale = np.asarray(scale, dtype=float)
        with np.errstate(divide="ignore"):
            self.inv_scale = np.where(scale > 0, 1.0 / np.where(scale > 0, scale, 1.0), 0.0)

    @classmethod
    def zero(cls, ip: InnerProduct):
        z = np.zeros(ip.shape)
        return cls(ip, z, z, 0.0)

    @property
    def is_zero(self) -> bool:
        return not np.any(self.inv_scale)

    def apply(self, v):
        return _outer(self.inv_scale, wedge_apply(self.ip, self.a, self.b, v), self.ip)

    __call__ = apply

    def solve_factors(self):
        """Return ``(a', b')`` with ``-S x = a' (b', x) - b' (a', x)``.

        This is the ``a b^T - b a^T`` form consumed by :func:`rank2_solve`.
        """
        return _outer(self.inv_scale, self.a, self.ip), self.b


def default_eps_den(ip: InnerProduct) -> float:
    return 1e-14 * ip.size


def sge_skew(ip: InnerProduct, grad, zec, eps_den: Optional[float] = None) -> RankTwoSkew:
    """Skew operator embedding a zero-energy-contribution term.

    Returns ``S = (grad ^ zec) / ||grad||^2`` so that ``S grad`` equals the
    component of ``zec`` orthogonal to ``grad``.  Below ``eps_den`` the zero
    operator is returned.
    """
    if eps_den is None:
        eps_den = default_eps_den(ip)
    den = ip.norm2(grad)
    den = np.where(den > eps_den, den, 0.0)
    return RankTwoSkew(ip, grad, zec, den)


def nonorthogonality(ip: InnerProduct, grad, zec) -> float:
    """``|(J, grad F)| / (||J|| ||grad F||)``; zero when either vanishes."""
    den = ip.norm(grad) * ip.norm(zec)
    if den == 0:
        return 0.0
    return float(abs(ip(grad, zec)) / den)


def gauss_nodes(npts: int):
    """Gauss-Legendre nodes and weights mapped to [0, 1]."""
    x, w = leggauss(npts)
    return 0.5 * (x + 1.0), 0.5 * w


@dataclass
class EnergyFunctional:
    """``F(phi) = 1/2 (phi, Lin phi) + sum_i w density(phi_i)``.

    ``linear_op`` applies the symmetric positive operator; ``density`` and
    ``density_prime`` act pointwise.  ``degree`` is the polynomial degree of
    the density (``0`` when it is absent or not a polynomial, see
    ``polynomial``).
    """

    ip: InnerProduct
    linear_op: Callable
    density: Optional[Callable] = None
    density_prime: Optional[Callable] = None
    lipschitz: float = 0.0
    degree: int = 0
    polynomial: bool = True

    def nonlinear(self, phi):
        if self.density is None:
            return np.zeros(np.shape(phi)[: np.ndim(phi) - len(self.ip.shape)])
        return self.ip.integral(self.density(phi))

    def grad_f(self, phi):
        if self.density_prime is None:
            return np.zeros_like(phi)
        return self.density_prime(phi)

    def quadratic(self, phi):
        return 0.5 * self.ip(phi, self.linear_op(phi))

    def __call__(self, phi):
        return self.quadratic(phi) + self.nonlinear(phi)

    eval = __call__

    def grad(self, phi):
        return self.linear_op(phi) + self.grad_f(phi)

    def avf_points(self) -> int:
        """Gauss points making the averaged gradient exact for ``f'``."""
        if self.density_prime is None:
            return 1
        if not self.polynomial:
            return 4
        return max(1, -(-self.degree // 2))  # ceil((deg f' + 1) / 2)


def discrete_gradient_avf(F: EnergyFunctional, phi_a, phi_b, npts: Optional[int] = None):
    """Averaged vector field discrete gradient ``int_0^1 grad F(a + s (b - a)) ds``."""
    lin = 0.5 * (F.linear_op(phi_a) + F.linear_op(phi_b))
    return lin + avf_nonlinear(F, phi_a, phi_b, npts)


def avf_nonlinear(F: EnergyFunctional, phi_a, phi_b, npts: Optional[int] = None):
    if F.density_prime is None:
        return np.zeros_like(phi_a)
    npts = npts or F.avf_points()
    nodes, weights = gauss_nodes(npts)
    out = np.zeros_like(phi_a, dtype=float)
    d = phi_b - phi_a
    for s, w in zip(nodes, weights):
        out = out + w * F.density_prime(phi_a + s * d)
    return out


def identity_mask(phi):
    return phi


@dataclass
class GeneralizedGradientFlow:
    """``R phi_t = M grad F + J(phi)`` on a layout that diagonalises ``Lin`` and ``M``.

    The time steppers need ``Lin`` and ``M`` as per-mode symbols in a common
    basis: ``to_modal``/``from_modal`` move a field into that basis and
    ``lin_symbol``/``mob_symbol`` hold the eigenvalues (``mob_symbol <= 0``).
    ``zec`` returns ``J(phi)`` and must accept leading batch axes.
    """

    energy: EnergyFunctional
    lin_symbol: np.ndarray
    mob_symbol: np.ndarray
    zec: Optional[Callable] = None
    to_modal: Callable = identity_mask
    from_modal: Callable = identity_mask
    eps_den: Optional[float] = None
    mask: Optional[np.ndarray] = None
    name: str = "flow"
    meta: dict = field(default_factory=dict)

    @property
    def ip(self) -> InnerProduct:
        return self.energy.ip

    def grad(self, phi):
        return self.energy.grad(phi)

    def J(self, phi):
        if self.zec is None:
            return np.zeros_like(phi)
        return self.zec(phi)

    def apply_symbol(self, symbol, phi):
        return np.real(self.from_modal(symbol * self.to_modal(phi)))

    def mobility(self, v):
        return self.apply_symbol(self.mob_symbol, v)

    def skew(self, phi) -> RankTwoSkew:
        if self.zec is None:
            return RankTwoSkew.zero(self.ip)
        return sge_skew(self.ip, self.grad(phi), self.J(phi), self.eps_den)

    def rhs(self, phi):
        """Continuous right-hand side ``M grad F + J``."""
        g = self.grad(phi)
        return self.mobility(g) + self.J(phi)

    def apply_mask(self, phi):
        return phi if self.mask is None else self.mask * phi
