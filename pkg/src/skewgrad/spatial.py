"""Spatial discretisations: Fourier pseudo-spectral periodic grids and a
staggered (MAC) grid for the Dirichlet lid-driven cavity."""
from __future__ import annotations

import logging

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
import scipy.fft as sfft

from .hilbert import InnerProduct

log = logging.getLogger(__name__)


class SolvabilityError(ValueError):
    """A singular diagonal solve was requested with incompatible data."""


class SolverError(RuntimeError):
    """An iterative solver failed to converge."""

    def __init__(self, msg, residuals=()):
        super().__init__(msg)
        self.residuals = list(residuals)


class PeriodicGrid:
    """Uniform periodic grid in 1D or 2D, ``n`` (even) points per axis.

    Fields are real arrays of shape ``(n,)`` or ``(n, n)`` (axis 0 is x).
    Vector fields carry a leading component axis.  Spectral work uses
    ``rfftn`` over the trailing ``dim`` axes so any leading axes batch.
    """

    def __init__(self, n: int, dim: int = 1, length=1.0, origin=0.0):
        if n < 4 or n % 2:
            raise ValueError(f"n must be even and at least 4, got {n}")
        if dim not in (1, 2):
            raise ValueError("dim must be 1 or 2")
        self.n = n
        self.dim = dim
        self.length = tuple(np.broadcast_to(np.asarray(length, float), (dim,)))
        self.origin = tuple(np.broadcast_to(np.asarray(origin, float), (dim,)))
        self.h = tuple(L / n for L in self.length)
        self.shape = (n,) * dim
        self.axes = tuple(range(-dim, 0))
        self.cell_volume = float(np.prod(self.h))
        self.measure = float(np.prod(self.length))

        # integer mode indices, last axis is the half-spectrum of rfftn
        idx = [np.fft.fftfreq(n, 1.0 / n)] * (dim - 1) + [np.fft.rfftfreq(n, 1.0 / n)]
        grids = np.meshgrid(*idx, indexing="ij")
        self.mode = grids
        self.k = [2 * np.pi / L * m for L, m in zip(self.length, grids)]
        self.k2 = sum(k * k for k in self.k)
        self.nyquist = [np.abs(m) == n // 2 for m in grids]
        cutoff = n / 3.0
        self.dealias_mask = np.ones(self.k2.shape, bool)
        for m in grids:
            self.dealias_mask &= np.abs(m) < cutoff
        self.spectral_shape = self.k2.shape

    # coordinates ---------------------------------------------------------
    def coords(self):
        xs = [o + h * np.arange(self.n) for o, h in zip(self.origin, self.h)]
        if self.dim == 1:
            return xs[0]
        return np.meshgrid(*xs, indexing="ij")

    def inner_product(self, ncomp: int = 0) -> InnerProduct:
        shape = self.shape if ncomp == 0 else (ncomp,) + self.shape
        return InnerProduct(shape, self.cell_volume)

    # transforms ----------------------------------------------------------
    def forward(self, u):
        return np.fft.rfftn(u, axes=self.axes)

    def inverse(self, uh):
        return np.fft.irfftn(uh, s=self.shape, axes=self.axes)

    # derivatives ---------------------------------------------------------
    def derivative_hat(self, uh, axis: int = 0, order: int = 1):
        k = self.k[axis]
        sym = (1j * k) ** order
        if order % 2 == 1:
            sym = np.where(self.nyquist[axis], 0.0, sym)
        return sym * uh

    def derivative(self, u, axis: int = 0, order: int = 1):
        return self.inverse(self.derivative_hat(self.forward(u), axis, order))

    def laplacian(self, u):
        return self.inverse(-self.k2 * self.forward(u))

    def gradient(self, u):
        uh = self.forward(u)
        return np.stack([self.inverse(self.derivative_hat(uh, a)) for a in range(self.dim)])

    def divergence(self, v):
        """Divergence of a vector field with components on axis ``-dim-1``."""
        out = 0.0
        for a in range(self.dim):
            comp = v[(..., a) + (slice(None),) * self.dim]
            out = out + self.derivative(comp, a)
        return out

    def dealias(self, u):
        return self.inverse(self.dealias_mask * self.forward(u))

    def mean(self, u):
        return np.mean(u, axis=self.axes)

    # diagonal solves -----------------------------------------------------
    def solve_diagonal(self, symbol, f, zero_mode: float = 0.0, atol: float = 1e-12):
        """Solve ``symbol(k) * u_hat = f_hat`` mode by mode.

        When ``symbol`` vanishes at the zero mode ``f`` must have zero mean
        and the mean of ``u`` is set to ``zero_mode``.
        """
        fh = self.forward(f)
        symbol = np.broadcast_to(np.asarray(symbol, dtype=float), self.spectral_shape)
        zero = symbol == 0
        if np.any(zero[..., 1:]) if self.dim == 1 else np.any(zero.ravel()[1:]):
            raise SolvabilityError("symbol vanishes on a nonzero mode")
        z0 = (0,) * self.dim
        uh = np.empty_like(fh)
        safe = np.where(zero, 1.0, symbol)
        uh[...] = fh / safe
        if zero[z0]:
            fmean = np.abs(fh[(...,) + z0]) / self.n ** self.dim
            if np.any(fmean > atol * max(1.0, float(np.max(np.abs(f))))):
                raise SolvabilityError("singular zero mode with nonzero-mean right-hand side")
            uh[(...,) + z0] = zero_mode * self.n ** self.dim
        return self.inverse(uh)

    # Leray projection ----------------------------------------------------
    def leray_hat(self, vh):
        """Project ``vh`` (components on axis -dim-1) onto divergence-free modes.

        Returns the projected spectrum and the potential ``psi_hat`` with
        ``v = P v + grad psi``.
        """
        if self.dim != 2:
            raise ValueError("Leray projection requires a 2D grid")
        kx, ky = self.k
        div = 1j * kx * vh[..., 0, :, :] + 1j * ky * vh[..., 1, :, :]
        k2 = np.where(self.k2 == 0, 1.0, self.k2)
        psi = np.where(self.k2 == 0, 0.0, -div / k2)
        # odd-order Nyquist modes carry no derivative information
        psi = np.where(self.nyquist[0] | self.nyquist[1], 0.0, psi)
        gx = 1j * kx * psi
        gy = 1j * ky * psi
        out = np.stack([vh[..., 0, :, :] - gx, vh[..., 1, :, :] - gy], axis=-3)
        return out, psi

    def leray_project(self, v):
        vh = self.forward(v)
        ph, psi = self.leray_hat(vh)
        return self.inverse(ph), self.inverse(psi)


def spectral_derivative(grid: PeriodicGrid, u, axis=0, order=1):
    return grid.derivative(u, axis, order)


def solve_diagonal(grid: PeriodicGrid, symbol, f, zero_mode=0.0):
    return grid.solve_diagonal(symbol, f, zero_mode)


def leray_project(grid: PeriodicGrid, v):
    return grid.leray_project(v)


def dealias_23(grid: PeriodicGrid, u):
    return grid.dealias(u)


class PeriodicStokes:
    """Solve ``(alpha - nu Lap) v + grad p / rho_p = f``, ``div v = 0`` spectrally."""

    def __init__(self, grid: PeriodicGrid, alpha: float, nu: float, pressure_scale: float = 1.0):
        if alpha <= 0:
            raise ValueError("alpha must be positive")
        self.grid = grid
        self.alpha = alpha
        self.nu = nu
        self.pressure_scale = pressure_scale
        self.symbol = alpha + nu * grid.k2

    def solve(self, f):
        fh = self.grid.forward(f)
        ph, psi = self.grid.leray_hat(fh)
        v = self.grid.inverse(ph / self.symbol)
        # grad p / pressure_scale equals the gradient part of f
        p = self.grid.inverse(psi) * self.pressure_scale
        return v, p

    def apply(self, v, p):
        """Forward operator, used to check residuals."""
        lap = self.grid.laplacian(v)
        gp = self.grid.gradient(p) / self.pressure_scale
        return self.alpha * v - self.nu * lap + gp


# ---------------------------------------------------------------------------
# MAC grid
# ---------------------------------------------------------------------------


class MacGrid:
    """Staggered grid on the unit square with ``n`` cells per side.

    Interior unknowns: ``u`` on vertical faces ``(i h, (j+1/2) h)`` for
    ``i = 1..n-1``, shape ``(n-1, n)``; ``v`` on horizontal faces, shape
    ``(n, n-1)``; pressure at cell centres, shape ``(n, n)``.  Wall values
    of the tangential velocity (``lid``) enter through ghost cells.
    """

    def __init__(self, n: int, lid: float = 0.0):
        self.n = n
        self.h = 1.0 / n
        self.lid = lid
        self.nu_shape = (n - 1, n)
        self.nv_shape = (n, n - 1)
        self.np_shape = (n, n)
        self.nu = (n - 1) * n
        self.nv = n * (n - 1)
        self.npr = n * n
        self.ip = InnerProduct((self.nu + self.nv,), self.h ** 2)
        self.ip_p = InnerProduct((self.npr,), self.h ** 2)
        self._build()

    # packing -------------------------------------------------------------
    def split(self, vel):
        u = vel[..., : self.nu].reshape(vel.shape[:-1] + self.nu_shape)
        v = vel[..., self.nu:].reshape(vel.shape[:-1] + self.nv_shape)
        return u, v

    def join(self, u, v):
        lead = u.shape[:-2]
        return np.concatenate([u.reshape(lead + (-1,)), v.reshape(lead + (-1,))], axis=-1)

    def zeros(self):
        return np.zeros(self.nu + self.nv)

    def coords(self):
        h, n = self.h, self.n
        xu, yu = np.meshgrid(h * np.arange(1, n), h * (np.arange(n) + 0.5), indexing="ij")
        xv, yv = np.meshgrid(h * (np.arange(n) + 0.5), h * np.arange(1, n), indexing="ij")
        xp, yp = np.meshgrid(h * (np.arange(n) + 0.5), h * (np.arange(n) + 0.5), indexing="ij")
        return (xu, yu), (xv, yv), (xp, yp)

    # operators -----------------------------------------------------------
    def _build(self):
        n, h = self.n, self.h

        def lap1d_dirichlet_nodes(m):
            # m interior nodes, homogeneous Dirichlet at both ends
            e = np.ones(m)
            return sp.diags([e[:-1], -2 * e, e[:-1]], [-1, 0, 1]) / h ** 2

        def lap1d_ghost(m):
            # m cell-centred values, wall halfway between with ghost = -adjacent
            e = np.ones(m)
            d = -2 * e
            d[0] = d[-1] = -3
            return sp.diags([e[:-1], d, e[:-1]], [-1, 0, 1]) / h ** 2

        Ix = sp.identity(n - 1)
        Iy = sp.identity(n)
        # u: x is a node direction (n-1 interior), y is cell centred (n)
        self.lap_u = (sp.kron(lap1d_dirichlet_nodes(n - 1), Iy) + sp.kron(Ix, lap1d_ghost(n))).tocsr()
        # v: x cell centred (n), y node direction (n-1)
        self.lap_v = (sp.kron(lap1d_ghost(n), sp.identity(n - 1)) + sp.kron(sp.identity(n), lap1d_dirichlet_nodes(n - 1))).tocsr()
        self.lap = sp.block_diag([self.lap_u, self.lap_v]).tocsr()

        # divergence at cells from interior faces (wall normal velocity zero)
        def diff_nodes_to_cells(m):
            # (m x (m-1)) map from interior nodes to cells
            return sp.diags([-np.ones(m - 1), np.ones(m - 1)], [-1, 0], shape=(m, m - 1)) / h

        Dx = sp.kron(diff_nodes_to_cells(n), sp.identity(n))
        Dy = sp.kron(sp.identity(n), diff_nodes_to_cells(n))
        self.div = sp.hstack([Dx, Dy]).tocsr()
        self.grad = (-self.div.T).tocsr()

        # lid enters the u-Laplacian through the top ghost: u_g = 2 U - u_top
        bc = np.zeros(self.nu_shape)
        bc[:, -1] = 2.0 / h ** 2
        self._lid_lap = np.concatenate([bc.ravel(), np.zeros(self.nv)])

    def laplacian(self, vel, lid=None):
        lid = self.lid if lid is None else lid
        return self.lap @ vel + lid * self._lid_lap

    def divergence(self, vel):
        return self.div @ vel

    def gradient(self, p):
        return self.grad @ p

    # advection -----------------------------------------------------------
    def padded(self, vel, lid=None):
        """Velocity with wall nodes (normal) and ghosts (tangential) attached."""
        lid = self.lid if lid is None else lid
        u, v = self.split(vel)
        n = self.n
        U = np.zeros((n + 1, n + 2))
        U[1:n, 1:n + 1] = u
        U[:, 0] = -U[:, 1]
        U[:, n + 1] = 2 * lid - U[:, n]
        V = np.zeros((n + 2, n + 1))
        V[1:n + 1, 1:n] = v
        V[0, :] = -V[1, :]
        V[n + 1, :] = -V[n, :]
        return U, V

    def advection(self, vel, lid=None):
        """Second-order centred ``(v . grad) v`` at interior faces."""
        U, V = self.padded(vel, lid)
        n, h = self.n, self.h
        # u faces: interior i=1..n-1, j=0..n-1 -> U[i, j+1]
        uc = U[1:n, 1:n + 1]
        dudx = (U[2:n + 1, 1:n + 1] - U[0:n - 1, 1:n + 1]) / (2 * h)
        dudy = (U[1:n, 2:n + 2] - U[1:n, 0:n]) / (2 * h)
        # v at u face (i, j+1/2): average of V[i, j], V[i, j+1], V[i+1, j], V[i+1, j+1] (padded index)
        vbar = 0.25 * (V[1:n, 0:n] + V[1:n, 1:n + 1] + V[2:n + 1, 0:n] + V[2:n + 1, 1:n + 1])
        cu = uc * dudx + vbar * dudy
        # v faces: interior j=1..n-1, i=0..n-1 -> V[i+1, j]
        vc = V[1:n + 1, 1:n]
        dvdx = (V[2:n + 2, 1:n] - V[0:n, 1:n]) / (2 * h)
        dvdy = (V[1:n + 1, 2:n + 1] - V[1:n + 1, 0:n - 1]) / (2 * h)
        ubar = 0.25 * (U[0:n, 1:n] + U[1:n + 1, 1:n] + U[0:n, 2:n + 1] + U[1:n + 1, 2:n + 1])
        cv = ubar * dvdx + vc * dvdy
        return self.join(cu, cv)

    def cell_velocity(self, vel, lid=None):
        """Velocity interpolated to cell centres, shape ``(2, n, n)``."""
        U, V = self.padded(vel, lid)
        n = self.n
        uc = 0.5 * (U[0:n, 1:n + 1] + U[1:n + 1, 1:n + 1])
        vc = 0.5 * (V[1:n + 1, 0:n] + V[1:n + 1, 1:n + 1])
        return np.stack([uc, vc])

    def restrict(self, vel_fine):
        """Average a ``2n`` grid velocity onto this grid's faces."""
        nf = 2 * self.n
        fine = MacGrid(nf)
        uf, vf = fine.split(vel_fine)
        # coarse u face (i, j) with i=1..n-1 sits on fine node 2i, between fine cells 2j, 2j+1
        uc = 0.5 * (uf[1::2, 0::2] + uf[1::2, 1::2])
        vc = 0.5 * (vf[0::2, 1::2] + vf[1::2, 1::2])
        return self.join(uc, vc)

    def streamfunction(self, vel, lid=None):
        """Streamfunction on cell corners from ``psi_y = u`` integrated upward."""
        U, _ = self.padded(vel, lid)
        n, h = self.n, self.h
        psi = np.zeros((n + 1, n + 1))
        psi[:, 1:] = np.cumsum(U[:, 1:n + 1], axis=1) * h
        return psi


class MacStokes:
    """Generalised Stokes solver ``(alpha - nu Lap) v + grad p = f``, ``div v = 0``.

    ``method='uzawa'`` (default) runs preconditioned conjugate gradients on
    the pressure Schur complement.  The velocity Helmholtz blocks and the
    Neumann pressure Laplacian are separable on the MAC grid and are
    inverted exactly with sine/cosine transforms; the Cahouet-Chabard
    preconditioner makes the iteration count independent of ``h``.
    ``method='direct'`` factorises the bordered saddle-point system with a
    sparse LU (small grids, cross-checks).  Right-hand sides may carry a
    leading batch axis.
    """

    def __init__(self, grid: MacGrid, alpha: float, nu: float, method: str = "uzawa",
                 tol: float = 1e-12, maxiter: int = 200):
        if alpha <= 0:
            raise ValueError("alpha must be positive")
        self.grid = grid
        self.alpha = alpha
        self.nu = nu
        self.method = method
        self.tol = tol
        self.maxiter = maxiter
        self.iterations = 0
        n, h = grid.n, grid.h
        nvel = grid.nu + grid.nv
        self.A = (alpha * sp.identity(nvel) - nu * grid.lap).tocsr()
        if method == "direct":
            ones = np.ones((grid.npr, 1)) * h ** 2
            K = sp.bmat([
                [self.A, grid.grad, None],
                [grid.div, None, ones],
                [None, ones.T, None],
            ]).tocsc()
            self._lu = spla.splu(K, permc_spec="COLAMD")
        elif method == "uzawa":
            lam_node = (2 - 2 * np.cos(np.pi * np.arange(1, n) / n)) / h ** 2  # DST-I
            lam_cell = (2 - 2 * np.cos(np.pi * np.arange(1, n + 1) / n)) / h ** 2  # DST-II
            lam_neu = (2 - 2 * np.cos(np.pi * np.arange(n) / n)) / h ** 2  # DCT-II
            self._hu = alpha + nu * (lam_node[:, None] + lam_cell[None, :])
            self._hv = alpha + nu * (lam_cell[:, None] + lam_node[None, :])
            lp = lam_neu[:, None] + lam_neu[None, :]
            lp[0, 0] = 1.0
            self._lp = lp
        else:
            raise ValueError(f"unknown Stokes method {method!r}")

    # fast separable inverses --------------------------------------------
    def helmholtz_solve(self, b):
        """``(alpha - nu Lap)^-1`` on velocity vectors (batched)."""
        g = self.grid
        bu, bv = g.split(b)
        uh = sfft.dst(sfft.dst(bu, type=1, axis=-2), type=2, axis=-1)
        u = sfft.idst(sfft.idst(uh / self._hu, type=1, axis=-2), type=2, axis=-1)
        vh = sfft.dst(sfft.dst(bv, type=2, axis=-2), type=1, axis=-1)
        v = sfft.idst(sfft.idst(vh / self._hv, type=2, axis=-2), type=1, axis=-1)
        return g.join(u, v)

    def poisson_solve(self, r):
        """``(-D G)^-1`` on zero-mean cell data (batched), zero-mean result."""
        g = self.grid
        shp = r.shape[:-1] + g.np_shape
        rh = sfft.dctn(r.reshape(shp), type=2, axes=(-2, -1))
        rh /= self._lp
        rh[..., 0, 0] = 0.0
        return sfft.idctn(rh, type=2, axes=(-2, -1)).reshape(r.shape)

    def rhs_bc(self, lid):
        return self.nu * lid * self.grid._lid_lap

    def solve(self, f, lid: float = 0.0):
        """Return ``(v, p)``; ``p`` has zero mean."""
        g = self.grid
        b = f + self.rhs_bc(lid)
        if self.method == "direct":
            lead = b.shape[:-1]
            bb = b.reshape(-1, b.shape[-1])
            rhs = np.concatenate([bb, np.zeros((bb.shape[0], g.npr + 1))], axis=1)
            sol = self._lu.solve(np.ascontiguousarray(rhs.T)).T
            v = sol[:, : g.nu + g.nv].reshape(lead + (-1,))
            p = sol[:, g.nu + g.nv: g.nu + g.nv + g.npr].reshape(lead + (-1,))
            return v, p
        return self._uzawa(b)

    def _uzawa(self, b):
        g = self.grid
        Asolve = self.helmholtz_solve
        div = lambda x: x @ g.div.T  # noqa: E731  (batched sparse products)
        grad = lambda x: x @ g.grad.T  # noqa: E731

        def zm(x):
            return x - x.mean(axis=-1, keepdims=True)

        def T(p):
            # -D A^-1 G: SPD on zero-mean pressures
            return zm(-div(Asolve(grad(p))))

        def precond(r):
            return zm(self.alpha * self.poisson_solve(r) + self.nu * r)

        def dot(x, y):
            return np.sum(x * y, axis=-1, keepdims=True)

        rhs = -zm(div(Asolve(b)))  # D v = 0 with A v = b - G p
        p = np.zeros_like(rhs)
        r = rhs.copy()
        r0 = np.sqrt(dot(rhs, rhs))
        r0 = np.where(r0 > 0, r0, 1.0)
        history = []
        z = precond(r)
        d = z.copy()
        rz = dot(r, z)
        for it in range(self.maxiter):
            res = float(np.max(np.sqrt(dot(r, r)) / r0))
            history.append(res)
            if res < self.tol:
                break
            Td = T(d)
            dTd = dot(d, Td)
            a = np.where(dTd > 0, rz / np.where(dTd > 0, dTd, 1.0), 0.0)
            p = p + a * d
            r = r - a * Td
            z = precond(r)
            rz_new = dot(r, z)
            d = z + np.where(rz != 0, rz_new / np.where(rz != 0, rz, 1.0), 0.0) * d
            rz = rz_new
        else:
            raise SolverError(f"Uzawa CG did not converge, residual {history[-1]:.3e}", history)
        self.history = history
        self.iterations = len(history) - 1
        v = Asolve(b - grad(p))
        return v, zm(p)

    def residuals(self, v, p, f, lid=0.0):
        """Relative momentum residual and max discrete divergence."""
        g = self.grid
        rv = self.A @ v + g.grad @ p - f - self.rhs_bc(lid)
        return np.linalg.norm(rv) / max(1.0, np.linalg.norm(f)), np.abs(g.div @ v).max()


def stokes_solve_mac(grid: MacGrid, alpha, nu, f, lid=0.0, method="uzawa"):
    solver = MacStokes(grid, alpha, nu, method=method)
    return solver.solve(f, lid)
