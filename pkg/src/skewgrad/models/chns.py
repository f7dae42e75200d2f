"""Cahn-Hilliard-Navier-Stokes with the transport terms embedded as a
rank-2 skew operator on the pair ``g = (rho v, mu_bar)``.

Both schemes reduce to the frozen-coefficient linear system

    a v - (nu/rho) Lap v + grad p / rho = h_v + f_v / rho - xi c_v + eta g_v,   div v = 0
    a X - M Lap mu_bar                  = h_phi + f_phi  - xi c_phi + eta g_phi
    mu = -gamma eps Lap X - sigma (gamma/eps) tau M A Lap (X - phi_a) + (gamma/eps) fe

with ``xi = (g_hat, g)``, ``eta = (c_hat, g)``.  The velocity and phase
blocks decouple once ``xi``/``eta`` are fixed: three batched Stokes solves,
three Fourier-diagonal fourth-order solves and a 2x2 system.

=========  ========  ==============================  =====  =================  =======================
scheme     a         histories h                     sigma  phi_a              fe
=========  ========  ==============================  =====  =================  =======================
SBDF2      3/(2tau)  (4 u^n - u^{n-1}) / (2 tau)     3      (4phi^n-phi^{n-1})/3  2 f'^n - f'^{n-1}
SCN        4/(3tau)  (3 u^n + u^{n-1}) / (3 tau)     4      phi^n              (3 f'^n - f'^{n-1}) / 2
BDF1       1/tau     u^n / tau                       1      phi^n              f'^n
=========  ========  ==============================  =====  =================  =======================

SCN solves for ``X = (3 u^{n+1} + u^{n-1}) / 4`` and recovers
``u^{n+1} = (4 X - u^{n-1}) / 3``.  BDF1 only starts the two-step schemes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from ..diagnostics import RunRecord
from ..hilbert import default_eps_den
from ..integrators import StepHistory, num_steps, rank2_combine
from ..spatial import PeriodicGrid, PeriodicStokes
from .manufactured import CHNSManufactured

CHNS_SCHEMES = ("SGE_SBDF2", "SGE_SCN")
BUBBLE_TIMES = (0.001, 0.2, 0.4, 0.8, 1.0, 1.2, 1.5, 2.0, 3.0, 3.2, 3.4, 4.6, 4.8, 5.0, 10.0)

# packed layout of a solution: vx, vy, phi, mu_bar, p
_V = slice(0, 2)
_PHI, _MU, _P = 2, 3, 4


@dataclass(frozen=True)
class CHNSConfig:
    kind: str
    tau: float
    A: float = 3.0
    beta_omega: float = 0.0  # constant in the SBDF2 modified energy

    def __post_init__(self):
        kind = self.kind.upper().replace("-", "_")
        object.__setattr__(self, "kind", kind)
        if kind not in CHNS_SCHEMES + ("BDF1",):
            raise ValueError(f"unknown CH-NS scheme {self.kind!r}; expected one of {CHNS_SCHEMES}")
        if not (self.tau > 0 and math.isfinite(self.tau)):
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.A < 0:
            raise ValueError("A must be nonnegative")


@dataclass
class CHNSState:
    v: np.ndarray
    phi: np.ndarray

    def __sub__(self, o):
        return CHNSState(self.v - o.v, self.phi - o.phi)

    def lincomb(self, a, o, b):
        return CHNSState(a * self.v + b * o.v, a * self.phi + b * o.phi)


def double_well(phi):
    q = phi * phi - 1.0
    return 0.25 * q * q


def double_well_prime(phi):
    # explicit products: float ``**`` is several times slower on large arrays
    return phi * (phi * phi - 1.0)


def bubble_initial_condition(grid: PeriodicGrid, r: float = 0.15, epsilon: float = 0.01):
    """Two touching tanh bubbles on the unit square (``+1`` inside, ``-1`` outside)."""
    x, y = grid.coords()
    s = r / math.sqrt(2.0)
    da = np.hypot(x - (0.5 - s), y - (0.5 + s))
    db = np.hypot(x - (0.5 + s), y - (0.5 - s))
    return 1.0 - np.tanh((da - r) / (2 * epsilon)) - np.tanh((db - r) / (2 * epsilon))


class CHNSModel:
    """Periodic unit-square CH-NS with constant density."""

    def __init__(self, n: int = 128, rho: float = 1.0, nu: float = 0.01, mobility: float = 0.01,
                 gamma: float = 0.01, epsilon: float = 0.01, lipschitz: float = 2.0,
                 forced: bool = False, eps_den: Optional[float] = None):
        for name, val in dict(rho=rho, nu=nu, mobility=mobility, gamma=gamma, epsilon=epsilon).items():
            if not val > 0:
                raise ValueError(f"{name} must be positive, got {val}")
        self.grid = PeriodicGrid(n, dim=2)
        self.n = n
        self.rho, self.nu, self.M = rho, nu, mobility
        self.gamma, self.eps = gamma, epsilon
        self.L = lipschitz
        self.forced = forced
        self.ip = self.grid.inner_product()
        self.ipv = self.grid.inner_product(2)
        self.eps_den = default_eps_den(self.grid.inner_product(3)) if eps_den is None else eps_den
        self.case = CHNSManufactured(nu=nu, rho=rho, mobility=mobility, gamma=gamma, eps=epsilon)
        self.x, self.y = self.grid.coords()
        self._stokes = {}

    # states ----------------------------------------------------------------
    def exact(self, t):
        return CHNSState(self.case.velocity(self.x, self.y, t), self.case.phase(self.x, self.y, t))

    def manufactured_initial(self):
        return self.exact(0.0)

    def bubble_initial(self, r=0.15):
        return CHNSState(np.zeros((2,) + self.grid.shape), bubble_initial_condition(self.grid, r, self.eps))

    def sources(self, t):
        if not self.forced:
            return None
        return self.case.source_velocity(self.x, self.y, t), self.case.source_phase(self.x, self.y, t)

    # functionals -----------------------------------------------------------
    def grad_norm2(self, u):
        uh = self.grid.forward(u)
        w = self.grid.cell_volume
        return float(sum(w * np.sum(self.grid.inverse(self.grid.derivative_hat(uh, a)) ** 2)
                         for a in range(2)))

    def kinetic_energy(self, v):
        return 0.5 * self.rho * float(self.ipv.norm2(v))

    def free_energy(self, phi):
        return (0.5 * self.eps * self.gamma * self.grad_norm2(phi)
                + self.gamma / self.eps * float(self.ip.integral(double_well(phi))))

    def energy(self, s: CHNSState):
        return self.kinetic_energy(s.v) + self.free_energy(s.phi)

    def mass(self, phi):
        return float(self.ip.integral(phi))

    def chemical_potential(self, phi):
        """Zero-mean ``-gamma eps Lap phi + gamma/eps f'(phi)``."""
        mu = -self.gamma * self.eps * self.grid.laplacian(phi) + self.gamma / self.eps * double_well_prime(phi)
        return mu - self.grid.mean(mu)

    def modified_energy_bdf2(self, new: CHNSState, old: CHNSState, A: float, beta_omega: float = 0.0):
        rho, g, e = self.rho, self.gamma, self.eps
        v2 = 2 * new.v - old.v
        p2 = 2 * new.phi - old.phi
        coef = 2 * min(1.0, math.sqrt(self.nu)) * self.M * math.sqrt(A) / (self.M + beta_omega) + 3 * self.L
        return (0.25 * rho * float(self.ipv.norm2(new.v)) + 0.25 * rho * float(self.ipv.norm2(v2))
                + 0.25 * e * g * (self.grad_norm2(new.phi) + self.grad_norm2(p2))
                + g / (2 * e) * float(self.ip.integral(3 * double_well(new.phi) - double_well(old.phi)))
                + g / (2 * e) * coef * float(self.ip.norm2(new.phi - old.phi)))

    # frozen fields ---------------------------------------------------------
    def frozen_fields(self, vhat, phihat):
        """Packed ``(g_hat, c_hat, active)``; ``mu_bar_hat`` is taken from ``phi_hat``."""
        grid, rho = self.grid, self.rho
        mu = self.chemical_potential(phihat)
        den = rho * rho * float(self.ipv.norm2(vhat)) + float(self.ip.norm2(mu))
        shape = (5,) + grid.shape
        g = np.zeros(shape)
        c = np.zeros(shape)
        vh = grid.forward(vhat)
        grad_mu = grid.gradient(mu)
        for i in range(2):
            du = [grid.inverse(grid.derivative_hat(vh[i], a)) for a in range(2)]
            c[i] = grid.dealias(vhat[0] * du[0] + vhat[1] * du[1] + phihat * grad_mu[i] / rho)
        c[_PHI] = grid.dealias(grid.divergence(vhat * phihat))
        active = den > self.eps_den
        if active:
            g[_V] = rho * vhat / den
            g[_PHI] = mu / den
        return g, c, active

    def pairing(self, frozen, sol):
        """``(frozen, g(sol))`` with ``g = (rho v, mu_bar)``."""
        return (self.rho * float(self.ipv(frozen[_V], sol[_V]))
                + float(self.ip(frozen[_PHI], sol[_MU])))

    # linear solves -----------------------------------------------------------
    def _stokes_solver(self, a):
        key = float(a)
        if key not in self._stokes:
            self._stokes[key] = PeriodicStokes(self.grid, a, self.nu / self.rho, pressure_scale=self.rho)
        return self._stokes[key]

    def phase_symbol(self, a, sigma, tau, A):
        k4 = self.grid.k2 ** 2
        g, e, M = self.gamma, self.eps, self.M
        return a + g * e * M * k4 + sigma * g / e * tau * M * M * A * k4

    def solve_frozen(self, a, sigma, tau, A, hv, hphi, phi_a, fe, g, c, active, t_src):
        """Solve the frozen linear system; returns the packed solution and ``(xi, eta)``."""
        grid = self.grid
        gm, e, M = self.gamma, self.eps, self.M
        k2 = grid.k2
        stab = sigma * gm / e * tau * M * A
        fv = hv.copy()
        fphi = hphi.copy()
        src = self.sources(t_src)
        if src is not None:
            fv = fv + src[0] / self.rho
            fphi = fphi + src[1]
        # phase right-hand side of the history solve
        rhs1_h = (grid.forward(fphi) + stab * M * k2 ** 2 * grid.forward(phi_a)
                  - gm / e * M * k2 * grid.forward(fe))
        nb = 3 if active else 1
        Fv = np.stack([fv, c[_V], g[_V]])[:nb]
        V, P = self._stokes_solver(a).solve(Fv)
        Fp = np.stack([rhs1_h, grid.forward(c[_PHI]), grid.forward(g[_PHI])])[:nb]
        sym = self.phase_symbol(a, sigma, tau, A)
        phi_h = Fp / sym
        # mu_i = (gamma eps + stab) (-Lap) phi_i, plus the constant part for i = 1
        mu_h = (gm * e + stab) * k2 * phi_h
        mu_h[0] = mu_h[0] - stab * k2 * grid.forward(phi_a) + gm / e * grid.forward(fe)
        mu_h[(slice(None), 0, 0)] = 0.0
        sols = np.empty((nb, 5) + grid.shape)
        sols[:, _V] = V
        sols[:, _PHI] = grid.inverse(phi_h)
        sols[:, _MU] = grid.inverse(mu_h)
        sols[:, _P] = P
        if not active:
            return sols[0], 0.0, 0.0
        x, xi, eta = rank2_combine(self.pairing, c, g, sols[1], sols[2], sols[0])
        return x, xi, eta

    def assembly_residual(self, a, sigma, tau, A, x, hv, hphi, phi_a, fe, g, c, t_src):
        """Relative residuals ``(velocity, phase, chemical potential)`` of the coupled system."""
        grid = self.grid
        gm, e, M = self.gamma, self.eps, self.M
        xi, eta = self.pairing(g, x), self.pairing(c, x)
        fv, fphi = hv, hphi
        src = self.sources(t_src)
        if src is not None:
            fv = fv + src[0] / self.rho
            fphi = fphi + src[1]
        v, phi, mu, p = x[_V], x[_PHI], x[_MU], x[_P]
        rv = (a * v - self.nu / self.rho * grid.laplacian(v) + grid.gradient(p) / self.rho
              - fv + xi * c[_V] - eta * g[_V])
        rp = a * phi - M * grid.laplacian(mu) - fphi + xi * c[_PHI] - eta * g[_PHI]
        stab = sigma * gm / e * tau * M * A
        mu_full = -gm * e * grid.laplacian(phi) - stab * grid.laplacian(phi - phi_a) + gm / e * fe
        rm = mu - (mu_full - grid.mean(mu_full))

        def rel(r, *refs):
            scale = max([float(np.sqrt(np.sum(q * q))) for q in refs] + [1e-300])
            return float(np.sqrt(np.sum(r * r))) / scale

        return rel(rv, fv, a * v), rel(rp, fphi, a * phi), rel(rm, mu)


def _scheme_params(kind, tau, hist_cur: CHNSState, hist_prev: Optional[CHNSState]):
    fp = double_well_prime
    cur = hist_cur
    if kind == "BDF1":
        return dict(a=1.0 / tau, sigma=1.0, hv=cur.v / tau, hphi=cur.phi / tau, phi_a=cur.phi,
                    fe=fp(cur.phi), hat=cur, t_off=tau)
    prev = hist_prev
    if kind == "SGE_SBDF2":
        return dict(a=1.5 / tau, sigma=3.0, hv=(4 * cur.v - prev.v) / (2 * tau),
                    hphi=(4 * cur.phi - prev.phi) / (2 * tau), phi_a=(4 * cur.phi - prev.phi) / 3,
                    fe=2 * fp(cur.phi) - fp(prev.phi), hat=cur.lincomb(2.0, prev, -1.0), t_off=tau)
    return dict(a=4.0 / (3 * tau), sigma=4.0, hv=(3 * cur.v + prev.v) / (3 * tau),
                hphi=(3 * cur.phi + prev.phi) / (3 * tau), phi_a=cur.phi,
                fe=0.5 * (3 * fp(cur.phi) - fp(prev.phi)), hat=cur.lincomb(1.5, prev, -0.5),
                t_off=0.5 * tau)


def chns_step(model: CHNSModel, hist: StepHistory, cfg: CHNSConfig, check: bool = False):
    """One step; returns ``(state, mu_bar, p, diag)``.

    ``hist.phi_cur``/``phi_prev`` hold :class:`CHNSState` objects.  The first
    step of a two-step scheme is a stabilized BDF1 step.
    """
    tau = cfg.tau
    kind = cfg.kind
    if kind != "BDF1" and hist.phi_prev is None:
        kind = "BDF1"
    prm = _scheme_params(kind, tau, hist.phi_cur, hist.phi_prev)
    hat = prm["hat"]
    g, c, active = model.frozen_fields(hat.v, hat.phi)
    t_src = hist.t + prm["t_off"]
    args = (prm["a"], prm["sigma"], tau, cfg.A)
    x, xi, eta = model.solve_frozen(*args, prm["hv"], prm["hphi"], prm["phi_a"], prm["fe"],
                                    g, c, active, t_src)
    diag = dict(xi=xi, eta=eta, startup=kind == "BDF1" and cfg.kind != "BDF1", scheme=kind)
    if check:
        diag["assembly_residual"] = model.assembly_residual(
            *args, x, prm["hv"], prm["hphi"], prm["phi_a"], prm["fe"], g, c, t_src)
    # skew contribution to the energy balance: -(g_hat, g)(c_hat, g) + (c_hat, g)(g_hat, g)
    diag["skew_energy"] = -xi * model.pairing(c, x) + model.pairing(c, x) * model.pairing(g, x)
    v, phi = x[_V], x[_PHI]
    if kind == "SGE_SCN":
        prev = hist.phi_prev
        v = (4 * v - prev.v) / 3
        phi = (4 * phi - prev.phi) / 3
    diag["dissipation"] = model.nu * model.grad_norm2(x[_V]) + model.M * model.grad_norm2(x[_MU])
    diag["mu_mean"] = float(abs(model.grid.mean(x[_MU])))
    return CHNSState(v, phi), x[_MU], x[_P], diag


def chns_run(model: CHNSModel, cfg: CHNSConfig, t_end: float, initial: Optional[CHNSState] = None,
             snapshot_times: Sequence[float] = (), observer: Optional[Callable] = None,
             stop_on_nan: bool = True, check: bool = False) -> RunRecord:
    """March to ``t_end``; extra series ``kinetic``, ``free`` and ``mass_drift``."""
    nsteps = num_steps(t_end, cfg.tau)
    s0 = initial if initial is not None else model.bubble_initial()
    hist = StepHistory(s0)
    m0 = model.mass(s0.phi)
    rec = RunRecord(meta=dict(model="CHNSModel", scheme=cfg.kind, tau=cfg.tau, n=model.n,
                              rho=model.rho, nu=model.nu, M=model.M, gamma=model.gamma,
                              epsilon=model.eps, A=cfg.A))
    e0 = model.energy(s0)
    rec.append(0.0, e0, e0, mass=m0, kinetic=model.kinetic_energy(s0.v),
               free=model.free_energy(s0.phi), mass_drift=0.0, skew_energy=0.0,
               assembly_residual=0.0)
    want = sorted(float(s) for s in snapshot_times)
    _snap(rec, 0.0, s0, None, want)
    scale = max(abs(m0), model.ip.integral(np.abs(s0.phi)))
    for k in range(nsteps):
        t = (k + 1) * cfg.tau
        new, mu, p, d = chns_step(model, hist, cfg, check=check)
        if not (np.all(np.isfinite(new.v)) and np.all(np.isfinite(new.phi))):
            if stop_on_nan:
                raise FloatingPointError(f"non-finite state at t={t:g}")
            rec.meta["diverged_at"] = t
            break
        old = hist.phi_cur
        if cfg.kind == "SGE_SBDF2":
            me = model.modified_energy_bdf2(new, old, cfg.A, cfg.beta_omega)
        else:
            me = math.nan
        mass = model.mass(new.phi)
        res = max(d["assembly_residual"]) if check else math.nan
        rec.append(t, model.energy(new), me, d["dissipation"], mass,
                   kinetic=model.kinetic_energy(new.v), free=model.free_energy(new.phi),
                   mass_drift=abs(mass - m0) / scale, skew_energy=d["skew_energy"],
                   assembly_residual=res)
        _snap(rec, t, new, mu, want)
        if observer is not None:
            observer(t, new, old, d)
        hist = hist.advance(new, cfg.tau)
    rec.final_state = hist.phi_cur
    return rec


def _snap(rec, t, s, mu, want):
    if any(abs(t - w) <= 1e-9 * max(1.0, w) for w in want):
        fields = dict(velocity=s.v, phi=s.phi)
        if mu is not None:
            fields["mu_bar"] = mu
        rec.add_snapshot(t, **fields)
