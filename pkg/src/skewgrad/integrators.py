"""Time steppers for generalized gradient flows.

Every scheme here is written for a :class:`GeneralizedGradientFlow` whose
linear operator ``Lin`` and mobility ``M`` are diagonal in a common modal
basis.  The linearly implicit schemes share one kernel: solve

    alpha * phi - (M + S) mu = h,      mu = B phi + r,

with ``B = bL Lin + bI I - bM M`` (diagonal, positive).  Eliminating
``phi = B^-1 (mu - r)`` gives ``(alpha B^-1 - M) mu - S mu = h + alpha B^-1 r``,
a symmetric positive diagonal operator plus a rank-2 skew perturbation,
which :func:`rank2_solve` handles with three diagonal solves.
"""
from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from numpy.polynomial import Legendre

from .hilbert import (
    GeneralizedGradientFlow,
    RankTwoSkew,
    avf_nonlinear,
    gauss_nodes,
)

log = logging.getLogger(__name__)

SCHEME_KINDS = (
    "DG_AVF",
    "MDG_PC",
    "MDG_EX",
    "PG",
    "CS_BDF1",
    "SBDF1_STAB",
    "SGE_SBDF2",
    "SGE_SCN",
    "BDF2_EX_CLASSIC",
)
TWO_STEP = {"MDG_EX", "SGE_SBDF2", "SGE_SCN", "BDF2_EX_CLASSIC"}


class IterationError(RuntimeError):
    """A nonlinear iteration failed to reach its tolerance."""

    def __init__(self, msg, residuals=()):
        super().__init__(msg)
        self.residuals = list(residuals)


class NearSingularError(ArithmeticError):
    pass


@dataclass(frozen=True)
class SchemeConfig:
    kind: str
    tau: float
    A: float = 0.0
    pg_order: int = 1
    predictor: str = "ex"  # hat state for SGE_SBDF2 / SGE_SCN: "ex" or "pc"
    newton_tol: float = 1e-11
    newton_maxiter: int = 100
    fixed_point_tol: float = 1e-11
    damping: float = 1.0
    pg_solver: str = "auto"  # "auto", "newton", "simplified"
    kappa: float = 1.0  # (1 + beta_S / alpha_M)^-1 in the BDF2 modified energy

    def __post_init__(self):
        kind = self.kind.upper().replace("-", "_")
        m = re.fullmatch(r"PG\((\d+)\)", kind)
        if m:
            object.__setattr__(self, "pg_order", int(m.group(1)))
            kind = "PG"
        object.__setattr__(self, "kind", kind)
        if kind not in SCHEME_KINDS:
            raise ValueError(f"unknown scheme kind {self.kind!r}")
        if not (self.tau > 0 and math.isfinite(self.tau)):
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.A < 0:
            raise ValueError(f"A must be nonnegative, got {self.A}")
        if kind == "PG" and not 1 <= self.pg_order <= 6:
            raise ValueError(f"pg_order must be in 1..6, got {self.pg_order}")
        if self.predictor not in ("ex", "pc"):
            raise ValueError(f"predictor must be 'ex' or 'pc', got {self.predictor!r}")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")

    @property
    def label(self) -> str:
        return f"PG({self.pg_order})" if self.kind == "PG" else self.kind

    @property
    def two_step(self) -> bool:
        return self.kind in TWO_STEP


@dataclass
class StepHistory:
    phi_cur: np.ndarray
    phi_prev: Optional[np.ndarray] = None
    step_index: int = 0
    t: float = 0.0

    def advance(self, phi_new, tau) -> "StepHistory":
        return StepHistory(phi_new, self.phi_cur, self.step_index + 1, self.t + tau)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def rank2_combine(dot: Callable, a, b, x1, x2, x3, rtol: float = 1e-14):
    """Finish a rank-2 solve from ``x1 = A^-1 a``, ``x2 = A^-1 b``, ``x3 = A^-1 f``.

    Returns ``(x, xi, eta)`` with ``x = x3 - xi x1 + eta x2``, ``xi = (b, x)``
    and ``eta = (a, x)``.
    """
    m11 = 1.0 + dot(b, x1)
    m12 = -dot(b, x2)
    m21 = dot(a, x1)
    m22 = 1.0 - dot(a, x2)
    r1 = dot(b, x3)
    r2 = dot(a, x3)
    det = m11 * m22 - m12 * m21
    scale = abs(m11 * m22) + abs(m12 * m21)
    if abs(det) <= rtol * max(scale, 1e-300):
        raise NearSingularError(f"2x2 rank-2 system is singular (det={det:.3e})")
    xi = (r1 * m22 - m12 * r2) / det
    eta = (m11 * r2 - m21 * r1) / det
    return x3 - xi * x1 + eta * x2, xi, eta


def rank2_solve(a_solve: Callable, a, b, f, dot: Optional[Callable] = None,
                apply_A: Optional[Callable] = None, rtol: float = 1e-14):
    """Solve ``A x + a (b, x) - b (a, x) = f`` given ``a_solve = A^-1``.

    With ``x1 = A^-1 a``, ``x2 = A^-1 b``, ``x3 = A^-1 f`` the solution is
    ``x = -xi x1 + eta x2 + x3`` where ``xi = (b, x)``, ``eta = (a, x)``
    solve a 2x2 system (closed-form inverse).  ``dot`` defaults to the
    Euclidean product.  When ``apply_A`` is given the residual is returned
    as a second value.
    """
    dot = dot or (lambda u, v: float(np.vdot(u, v)))
    x3 = a_solve(f)
    if not np.any(a) or not np.any(b):
        return (x3, 0.0) if apply_A else x3
    x1 = a_solve(a)
    x2 = a_solve(b)
    x, _, _ = rank2_combine(dot, a, b, x1, x2, x3, rtol)
    if apply_A is None:
        return x
    res = apply_A(x) + a * dot(b, x) - b * dot(a, x) - f
    return x, float(np.sqrt(dot(res, res)) / max(np.sqrt(dot(f, f)), 1e-300))


def _check_flow(flow: GeneralizedGradientFlow):
    if flow.mask is not None:
        raise ValueError("generic steppers treat R as the identity; use the model step paths")
    if np.any(np.asarray(flow.lin_symbol) <= 0):
        raise ValueError("linear operator symbol must be strictly positive")
    if np.any(np.asarray(flow.mob_symbol) > 0):
        raise ValueError("mobility symbol must be nonpositive")


def linear_step(flow: GeneralizedGradientFlow, alpha, h, bL, bI, bM, r, skew: RankTwoSkew):
    """Solve the shared linear kernel; returns ``(phi, mu)``."""
    lin, mob = flow.lin_symbol, flow.mob_symbol
    Bs = bL * lin + bI - bM * mob
    Binv = 1.0 / Bs
    Kinv = 1.0 / (alpha * Binv - mob)
    ap = lambda s, v: flow.apply_symbol(s, v)  # noqa: E731
    rhs = h + alpha * ap(Binv, r)
    solve = lambda v: ap(Kinv, v)  # noqa: E731
    if skew.is_zero:
        mu = solve(rhs)
    else:
        a, b = skew.solve_factors()
        mu = rank2_solve(solve, a, b, rhs, dot=lambda u, v: float(flow.ip(u, v)))
    phi = ap(Binv, mu - r)
    return phi, mu


def _diag(flow, mu, skew, **extra):
    d = {
        "mu": mu,
        "dissipation": float(-flow.ip(mu, flow.mobility(mu))),
        "skew_energy": float(flow.ip(mu, skew(mu))) if not skew.is_zero else 0.0,
        "mu_norm2": float(flow.ip.norm2(mu)),
    }
    d.update(extra)
    return d


# ---------------------------------------------------------------------------
# dissipation-rate preserving schemes
# ---------------------------------------------------------------------------


def _dg_iterate(flow, phi_n, cfg, skew_of: Callable, phi0=None):
    """Fixed point for ``(phi - phi_n)/tau = L dbarF(phi, phi_n)``.

    ``skew_of(phi_k)`` returns the skew operator for the current iterate
    (constant for the modified scheme).
    """
    F = flow.energy
    tau = cfg.tau
    half_lin_n = 0.5 * F.linear_op(phi_n)
    phi_k = phi_n.copy() if phi0 is None else phi0
    quadratic = F.density_prime is None
    frozen = getattr(skew_of, "frozen", False)
    history = []
    for it in range(cfg.newton_maxiter):
        skew = skew_of(phi_k)
        r = half_lin_n + avf_nonlinear(F, phi_n, phi_k)
        phi_new, mu = linear_step(flow, 1.0 / tau, phi_n / tau, 0.5, 0.0, 0.0, r, skew)
        if cfg.damping < 1.0:
            phi_new = phi_k + cfg.damping * (phi_new - phi_k)
        err = float(flow.ip.norm(phi_new - phi_k) / max(1.0, flow.ip.norm(phi_new)))
        history.append(err)
        phi_k = phi_new
        if (quadratic and frozen) or err <= cfg.fixed_point_tol:
            break
    else:
        raise IterationError(
            f"fixed-point iteration stalled at {history[-1]:.3e} after {len(history)} sweeps", history)
    skew = skew_of(phi_k)
    dbar = 0.5 * (F.linear_op(phi_k) + F.linear_op(phi_n)) + avf_nonlinear(F, phi_n, phi_k)
    resid = float(F(phi_k) - F(phi_n) - tau * flow.ip(dbar, flow.mobility(dbar)))
    return phi_k, _diag(flow, dbar, skew, iterations=len(history), identity_residual=resid,
                        residuals=history)


class _Frozen:
    frozen = True

    def __init__(self, skew):
        self.skew = skew

    def __call__(self, _phi):
        return self.skew


def step_discrete_gradient(flow, hist: StepHistory, cfg: SchemeConfig):
    _check_flow(flow)
    phi_n = hist.phi_cur

    def skew_of(phi_k):
        return flow.skew(0.5 * (phi_k + phi_n))

    return _dg_iterate(flow, phi_n, cfg, skew_of)


def predict_half(flow, phi_n, tau):
    """Linearly implicit half step, ``(p - phi_n)/(tau/2) = L(phi_n)(Lin p + f'(phi_n))``."""
    skew = flow.skew(phi_n)
    p, _ = linear_step(flow, 2.0 / tau, 2.0 * phi_n / tau, 1.0, 0.0, 0.0,
                       flow.energy.grad_f(phi_n), skew)
    return p


def step_mdg(flow, hist: StepHistory, cfg: SchemeConfig, hat=None):
    """Modified discrete gradient: skew frozen at a midpoint estimate."""
    _check_flow(flow)
    phi_n = hist.phi_cur
    if hat is None:
        if cfg.kind == "MDG_EX" and hist.phi_prev is not None:
            hat = 1.5 * phi_n - 0.5 * hist.phi_prev
        else:
            hat = predict_half(flow, phi_n, cfg.tau)
    phi, d = _dg_iterate(flow, phi_n, cfg, _Frozen(flow.skew(hat)))
    d["hat"] = hat
    return phi, d


# ---------------------------------------------------------------------------
# temporal Petrov-Galerkin
# ---------------------------------------------------------------------------


class PGRule:
    """Node tables for the degree-``s`` Petrov-Galerkin step on [0, 1].

    ``phi(sig) = phi_n + sum_j c_j Q_j(sig)`` with ``Q_j`` the antiderivative
    of the shifted Legendre polynomial of degree ``j - 1``; ``mu`` is the
    Legendre projection of ``grad F`` onto degree ``s - 1``.
    """

    def __init__(self, s: int, nodes: int):
        self.s = s
        self.nq = nodes
        sig, w = gauss_nodes(nodes)
        self.sigma, self.w = sig, w
        P = np.array([Legendre.basis(k, domain=[0, 1])(sig) for k in range(s)])
        Qv = np.array([Legendre.basis(j, domain=[0, 1]).integ(lbnd=0)(sig) for j in range(s)]).T
        self.P = P  # (s, Q)
        self.V = Qv  # (Q, s)
        self.W = (2 * np.arange(s) + 1)[:, None] * w[None, :] * P  # (s, Q)
        self.Pi = P.T @ self.W  # (Q, Q): nodal values of the projection
        self.E = self.W @ self.Pi @ self.V  # (s, s)
        self.e0 = self.W @ self.Pi @ np.ones(nodes)  # (s,)
        self.cache = {}


def pg_nodes(flow, s: int) -> int:
    F = flow.energy
    if F.density_prime is None:
        d = 1
    elif F.polynomial:
        d = max(1, F.degree - 1)
    else:
        d = 3
    return max(s + 2, -(-(d + 1) * s // 2))


def _pg_residual(flow, rule: PGRule, phi_n, c, tau):
    """Return ``(R, mu_q, phi_q)``; ``c`` has shape ``(s,) + layout``."""
    phi_q = phi_n[None] + np.tensordot(rule.V, c, axes=(1, 0))
    g = flow.grad(phi_q)
    mu_q = np.tensordot(rule.Pi, g, axes=(1, 0))
    Lmu = flow.mobility(mu_q)
    if flow.zec is not None:
        Lmu = Lmu + flow.skew(phi_q)(mu_q)
    R = c - tau * np.tensordot(rule.W, Lmu, axes=(1, 0))
    return R, mu_q, phi_q


def step_petrov_galerkin(flow, hist: StepHistory, cfg: SchemeConfig, rule: Optional[PGRule] = None):
    _check_flow(flow)
    s = cfg.pg_order
    rule = rule or PGRule(s, pg_nodes(flow, s))
    phi_n = hist.phi_cur
    tau = cfg.tau
    shape = phi_n.shape
    n = phi_n.size
    solver = cfg.pg_solver
    if solver == "auto":
        solver = "newton" if s * n <= 256 else "simplified"

    # Jacobian of the linear stiff part, per mode: I - z E with z = tau m l
    key = (id(flow), tau)
    Minv = rule.cache.get(key)
    if Minv is None:
        z = tau * np.asarray(flow.mob_symbol) * np.asarray(flow.lin_symbol)
        zf = np.broadcast_to(z, np.shape(flow.to_modal(phi_n))).ravel()
        Minv = np.linalg.inv(np.eye(s)[None] - zf[:, None, None] * rule.E[None])
        rule.cache = {key: Minv}

    def simplified(R):
        Rh = flow.to_modal(R)  # (s,) + modal
        mshape = Rh.shape[1:]
        Rf = Rh.reshape(s, -1).T  # (modes, s)
        d = np.einsum("mij,mj->mi", Minv, Rf).T.reshape((s,) + mshape)
        return np.real(flow.from_modal(d))

    # initial guess: linear stiff part only
    c = -simplified(-_pg_residual(flow, rule, phi_n, np.zeros((s,) + shape), tau)[0])
    history = []
    for it in range(cfg.newton_maxiter):
        R, mu_q, phi_q = _pg_residual(flow, rule, phi_n, c, tau)
        if solver == "newton":
            Jm = np.empty((s * n, s * n))
            cf = c.ravel()
            eps = 1e-7 * max(1.0, float(np.max(np.abs(cf))))
            for j in range(s * n):
                cp = cf.copy()
                cp[j] += eps
                cm = cf.copy()
                cm[j] -= eps
                Rp = _pg_residual(flow, rule, phi_n, cp.reshape(c.shape), tau)[0]
                Rm = _pg_residual(flow, rule, phi_n, cm.reshape(c.shape), tau)[0]
                Jm[:, j] = (Rp - Rm).ravel() / (2 * eps)
            delta = -np.linalg.solve(Jm, R.ravel()).reshape(c.shape)
        else:
            delta = -simplified(R)
        c = c + delta
        err = float(np.sqrt(np.sum(flow.ip.norm2(delta))) / max(1.0, np.sqrt(np.sum(flow.ip.norm2(c)))))
        history.append(err)
        if err <= cfg.newton_tol:
            break
    else:
        raise IterationError(f"PG({s}) iteration stalled at {history[-1]:.3e}", history)
    R, mu_q, phi_q = _pg_residual(flow, rule, phi_n, c, tau)
    phi_new = phi_n + c[0]
    rate = float(np.sum(rule.w * flow.ip(mu_q, flow.mobility(mu_q))))
    F = flow.energy
    resid = float(F(phi_new) - F(phi_n) - tau * rate)
    skew_e = 0.0
    if flow.zec is not None:
        skew_e = float(np.max(np.abs(flow.ip(mu_q, flow.skew(phi_q)(mu_q)))))
    return phi_new, {
        "mu": np.tensordot(rule.w, mu_q, axes=(0, 0)),
        "dissipation": -rate,
        "skew_energy": skew_e,
        "mu_norm2": float(np.sum(rule.w * flow.ip.norm2(mu_q))),
        "identity_residual": resid,
        "iterations": len(history),
        "residuals": history,
    }


# ---------------------------------------------------------------------------
# stabilized linearly implicit schemes
# ---------------------------------------------------------------------------


def step_convex_splitting(flow, hist: StepHistory, cfg: SchemeConfig):
    """First-order scheme ``d_tau phi = L(phi_n)(Lin phi + A (phi - phi_n) + f'(phi_n))``.

    This is the convex split ``F_c = 1/2 (phi, Lin phi) + A/2 |phi|^2``.
    """
    _check_flow(flow)
    if cfg.kind == "SBDF1_STAB" and cfg.A < flow.energy.lipschitz:
        raise ValueError(f"SBDF1_STAB needs A >= L = {flow.energy.lipschitz}, got A = {cfg.A}")
    phi_n = hist.phi_cur
    tau, A = cfg.tau, cfg.A
    skew = flow.skew(phi_n)
    r = -A * phi_n + flow.energy.grad_f(phi_n)
    phi, mu = linear_step(flow, 1.0 / tau, phi_n / tau, 1.0, A, 0.0, r, skew)
    F = flow.energy
    rate = float(flow.ip(mu, flow.mobility(mu)))
    return phi, _diag(flow, mu, skew, stability_margin=float(tau * rate - (F(phi) - F(phi_n))))


def _hat_bdf2(flow, hist, cfg):
    if cfg.predictor == "pc":
        return step_convex_splitting(flow, hist, replace(cfg, kind="CS_BDF1"))[0]
    return 2.0 * hist.phi_cur - hist.phi_prev


def step_sge_sbdf2(flow, hist: StepHistory, cfg: SchemeConfig, hat=None):
    _check_flow(flow)
    p0, p1 = hist.phi_cur, hist.phi_prev
    tau, A = cfg.tau, cfg.A
    if hat is None:
        hat = _hat_bdf2(flow, hist, cfg)
    skew = flow.skew(hat)
    ext = 4.0 * p0 - p1
    fn = flow.energy.grad_f
    r = tau * A * flow.mobility(ext) + 2.0 * fn(p0) - fn(p1)
    phi, mu = linear_step(flow, 1.5 / tau, ext / (2 * tau), 1.0, 0.0, 3.0 * tau * A, r, skew)
    return phi, _diag(flow, mu, skew, hat=hat)


def step_sge_scn(flow, hist: StepHistory, cfg: SchemeConfig, hat=None):
    _check_flow(flow)
    p0, p1 = hist.phi_cur, hist.phi_prev
    tau, A = cfg.tau, cfg.A
    if hat is None:
        hat = predict_half(flow, p0, tau) if cfg.predictor == "pc" else 1.5 * p0 - 0.5 * p1
    skew = flow.skew(hat)
    fn = flow.energy.grad_f
    r = 0.5 * flow.energy.linear_op(p0) + tau * A * flow.mobility(p0) + 1.5 * fn(p0) - 0.5 * fn(p1)
    phi, mu = linear_step(flow, 1.0 / tau, p0 / tau, 0.5, 0.0, tau * A, r, skew)
    return phi, _diag(flow, mu, skew, hat=hat)


def step_bdf2_ex_classic(flow, hist: StepHistory, cfg: SchemeConfig):
    """BDF2 with the extrapolated ZEC term added explicitly (no embedding)."""
    _check_flow(flow)
    p0, p1 = hist.phi_cur, hist.phi_prev
    tau, A = cfg.tau, cfg.A
    ext = 4.0 * p0 - p1
    fn = flow.energy.grad_f
    J = flow.J(2.0 * p0 - p1)
    r = tau * A * flow.mobility(ext) + 2.0 * fn(p0) - fn(p1)
    zero = RankTwoSkew.zero(flow.ip)
    phi, mu = linear_step(flow, 1.5 / tau, ext / (2 * tau) + J, 1.0, 0.0, 3.0 * tau * A, r, zero)
    return phi, _diag(flow, mu, zero)


_STEPPERS = {
    "DG_AVF": step_discrete_gradient,
    "MDG_PC": step_mdg,
    "MDG_EX": step_mdg,
    "PG": step_petrov_galerkin,
    "CS_BDF1": step_convex_splitting,
    "SBDF1_STAB": step_convex_splitting,
    "SGE_SBDF2": step_sge_sbdf2,
    "SGE_SCN": step_sge_scn,
    "BDF2_EX_CLASSIC": step_bdf2_ex_classic,
}


def step(flow, hist: StepHistory, cfg: SchemeConfig):
    """Advance one step; two-step schemes start with one MDG_PC step."""
    if cfg.two_step and hist.phi_prev is None:
        phi, d = step_mdg(flow, hist, replace(cfg, kind="MDG_PC"))
        d["startup"] = True
        return phi, d
    return _STEPPERS[cfg.kind](flow, hist, cfg)


# ---------------------------------------------------------------------------
# modified energies
# ---------------------------------------------------------------------------


def modified_energy(flow, cfg: SchemeConfig, phi_new, phi_old):
    """Scheme-specific modified energy of the pair ``(phi^{n+1}, phi^n)``.

    SGE_SCN:   1/2 |Lin^1/2 phi1|^2 + f(phi1) + L/4 |phi1 - phi0|^2
    SGE_SBDF2: 1/4 |Lin^1/2 phi1|^2 + 1/4 |Lin^1/2 (2 phi1 - phi0)|^2
               + 3/2 f(phi1) - 1/2 f(phi0) + (3L/2 + kappa sqrt(2A)) |phi1 - phi0|^2
    Other schemes return ``F(phi1)``.
    """
    F = flow.energy
    L = F.lipschitz
    ip = flow.ip
    if phi_old is None:
        return float(F(phi_new))
    d = phi_new - phi_old
    if cfg.kind == "SGE_SCN":
        return float(F.quadratic(phi_new) + F.nonlinear(phi_new) + 0.25 * L * ip.norm2(d))
    if cfg.kind == "SGE_SBDF2":
        e = 2.0 * phi_new - phi_old
        return float(0.5 * F.quadratic(phi_new) + 0.5 * F.quadratic(e)
                     + 1.5 * F.nonlinear(phi_new) - 0.5 * F.nonlinear(phi_old)
                     + (1.5 * L + cfg.kappa * math.sqrt(2 * cfg.A)) * ip.norm2(d))
    return float(F(phi_new))


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------


def num_steps(t_end: float, tau: float) -> int:
    n = int(round(t_end / tau))
    if n < 1 or abs(n * tau - t_end) > 1e-9 * max(1.0, t_end):
        raise ValueError(f"t_end={t_end} is not an integer multiple of tau={tau}")
    return n


@dataclass
class Trajectory:
    """Per-step scalars collected by :func:`integrate`."""

    times: list = field(default_factory=list)
    energy: list = field(default_factory=list)
    modified_energy: list = field(default_factory=list)
    dissipation: list = field(default_factory=list)
    skew_energy: list = field(default_factory=list)
    identity_residual: list = field(default_factory=list)
    diverged_at: Optional[float] = None


def integrate(flow, phi0, cfg: SchemeConfig, t_end: float,
              observer: Optional[Callable] = None, stop_on_nan: bool = True):
    """March ``phi0`` to ``t_end``; returns ``(phi, Trajectory)``.

    ``observer(t, phi_new, phi_old, diag)`` is called after every step.
    A non-finite state raises ``FloatingPointError`` unless ``stop_on_nan`` is
    false, in which case marching stops and the trajectory is returned.
    """
    nsteps = num_steps(t_end, cfg.tau)
    hist = StepHistory(np.array(phi0, dtype=float))
    traj = Trajectory()
    F = flow.energy
    traj.times.append(0.0)
    e0 = float(F(hist.phi_cur))
    traj.energy.append(e0)
    traj.modified_energy.append(e0)
    traj.dissipation.append(float("nan"))
    traj.skew_energy.append(0.0)
    traj.identity_residual.append(0.0)
    rule = PGRule(cfg.pg_order, pg_nodes(flow, cfg.pg_order)) if cfg.kind == "PG" else None
    for k in range(nsteps):
        if rule is not None:
            phi, d = step_petrov_galerkin(flow, hist, cfg, rule)
        else:
            phi, d = step(flow, hist, cfg)
        t = (k + 1) * cfg.tau
        if not np.all(np.isfinite(phi)):
            if stop_on_nan:
                raise FloatingPointError(f"non-finite state at t={t:g}")
            traj.diverged_at = t
            break
        traj.times.append(t)
        traj.energy.append(float(F(phi)))
        traj.modified_energy.append(modified_energy(flow, cfg, phi, hist.phi_cur))
        traj.dissipation.append(d.get("dissipation", float("nan")))
        traj.skew_energy.append(d.get("skew_energy", 0.0))
        traj.identity_residual.append(d.get("identity_residual", float("nan")))
        if observer is not None:
            observer(t, phi, hist.phi_cur, d)
        hist = hist.advance(phi, cfg.tau)
    return hist.phi_cur, traj
