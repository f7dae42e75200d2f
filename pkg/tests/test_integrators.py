import numpy as np
import pytest
from _flows import advected_allen_cahn, rotating_quartic
from scipy.integrate import solve_ivp

from skewgrad.diagnostics import first_increase
from skewgrad.integrators import (
    NearSingularError,
    PGRule,
    SchemeConfig,
    StepHistory,
    integrate,
    modified_energy,
    num_steps,
    rank2_combine,
    rank2_solve,
    step,
)


@pytest.mark.parametrize("n", [3, 17, 64])
def test_rank2_solve_matches_dense(n):
    rng = np.random.default_rng(n)
    Q = rng.standard_normal((n, n))
    A = Q @ Q.T + n * np.eye(n)
    a, b, f = rng.standard_normal((3, n))
    x, res = rank2_solve(lambda v: np.linalg.solve(A, v), a, b, f, apply_A=lambda v: A @ v)
    dense = A + np.outer(a, b) - np.outer(b, a)
    np.testing.assert_allclose(x, np.linalg.solve(dense, f), rtol=1e-10, atol=1e-12)
    assert res < 1e-12


def test_rank2_solve_zero_factors_is_plain_solve():
    A = np.diag([1.0, 2.0, 4.0])
    f = np.ones(3)
    x = rank2_solve(lambda v: np.linalg.solve(A, v), np.zeros(3), np.ones(3), f)
    np.testing.assert_allclose(x, [1, 0.5, 0.25])


def test_rank2_combine_singular():
    e1, e2 = np.eye(2)
    dot = lambda u, v: float(u @ v)  # noqa: E731
    with pytest.raises(NearSingularError):
        rank2_combine(dot, e2, e1, -e1, e2, e1)


@pytest.mark.parametrize("kw", [
    dict(kind="nope", tau=0.1),
    dict(kind="DG_AVF", tau=0.0),
    dict(kind="DG_AVF", tau=float("nan")),
    dict(kind="PG(7)", tau=0.1),
    dict(kind="SGE_SBDF2", tau=0.1, A=-1.0),
    dict(kind="SGE_SBDF2", tau=0.1, predictor="bad"),
])
def test_scheme_config_validation(kw):
    with pytest.raises(ValueError):
        SchemeConfig(**kw)


def test_scheme_config_labels():
    assert SchemeConfig(kind="pg(3)", tau=0.1).label == "PG(3)"
    assert SchemeConfig(kind="sge-sbdf2", tau=0.1).two_step
    assert not SchemeConfig(kind="DG_AVF", tau=0.1).two_step


def test_num_steps():
    assert num_steps(1.0, 0.1) == 10
    with pytest.raises(ValueError):
        num_steps(1.0, 0.3)


def test_pg_rule_projection_is_exact_on_polynomials():
    rule = PGRule(3, 5)
    # projection onto degree <= 2 leaves quadratics untouched
    vals = 1 + 2 * rule.sigma - 3 * rule.sigma ** 2
    np.testing.assert_allclose(rule.Pi @ vals, vals, atol=1e-13)


@pytest.mark.parametrize("kind", ["DG_AVF", "MDG_PC", "PG(1)", "PG(2)", "PG(3)"])
def test_energy_identity_schemes(kind):
    flow, u0 = advected_allen_cahn()
    cfg = SchemeConfig(kind=kind, tau=0.01)
    hist = StepHistory(u0)
    for _ in range(3):
        phi, d = step(flow, hist, cfg)
        scale = abs(flow.energy(hist.phi_cur))
        assert abs(d["identity_residual"]) <= 1e-10 * max(1.0, scale)
        assert d["dissipation"] >= 0
        hist = hist.advance(phi, cfg.tau)


def test_skew_contribution_vanishes():
    flow, u0 = advected_allen_cahn()
    phi, d = step(flow, StepHistory(u0), SchemeConfig(kind="DG_AVF", tau=0.01))
    assert abs(d["skew_energy"]) <= 1e-12 * d["mu_norm2"]


@pytest.mark.parametrize("kind", ["SGE_SBDF2", "SGE_SCN"])
def test_linearly_implicit_schemes_dissipate_modified_energy(kind):
    flow, u0 = advected_allen_cahn()
    cfg = SchemeConfig(kind=kind, tau=0.2, A=2.0)
    _, traj = integrate(flow, u0, cfg, 6.0)
    # only the modified energy carries a guarantee at this step size
    assert first_increase(traj.modified_energy[1:]) is None


def test_modified_energy_single_step_is_energy():
    flow, u0 = advected_allen_cahn()
    cfg = SchemeConfig(kind="SGE_SBDF2", tau=0.1, A=1.0)
    assert modified_energy(flow, cfg, u0, None) == pytest.approx(float(flow.energy(u0)))


def test_stabilized_bdf1_requires_lipschitz_a():
    flow, u0 = advected_allen_cahn()
    with pytest.raises(ValueError):
        step(flow, StepHistory(u0), SchemeConfig(kind="SBDF1_STAB", tau=0.1, A=1.0))
    phi, d = step(flow, StepHistory(u0), SchemeConfig(kind="SBDF1_STAB", tau=0.1, A=2.0))
    assert d["stability_margin"] >= -1e-12


def test_two_step_startup_uses_one_step_scheme():
    flow, u0 = advected_allen_cahn()
    _, d = step(flow, StepHistory(u0), SchemeConfig(kind="SGE_SCN", tau=0.1))
    assert d.get("startup") is True


def test_zero_state_is_fixed_point():
    flow, u0 = advected_allen_cahn()
    z = np.zeros_like(u0)
    for kind in ("DG_AVF", "MDG_PC", "SGE_SBDF2", "SGE_SCN", "PG(2)"):
        u, _ = integrate(flow, z, SchemeConfig(kind=kind, tau=0.1), 0.3)
        np.testing.assert_array_equal(u, 0.0)


def test_integrate_records_divergence():
    flow, u0 = advected_allen_cahn()
    cfg = SchemeConfig(kind="BDF2_EX_CLASSIC", tau=0.1)
    with pytest.raises(FloatingPointError):
        with np.errstate(all="ignore"):
            integrate(flow, u0, cfg, 1.0)
    with np.errstate(all="ignore"):
        _, traj = integrate(flow, u0, cfg, 1.0, stop_on_nan=False)
    assert traj.diverged_at is not None
    assert np.all(np.isfinite(traj.energy[:-1]))


@pytest.mark.parametrize("kind,order", [("DG_AVF", 2), ("MDG_PC", 2), ("SGE_SBDF2", 2),
                                        ("SGE_SCN", 2)])
def test_temporal_order_small_system(kind, order):
    flow = rotating_quartic()
    u0 = np.array([1.0, 0.5])
    ref = solve_ivp(lambda t, u: flow.rhs(u), (0, 1), u0, method="DOP853",
                    rtol=1e-13, atol=1e-15).y[:, -1]
    errs = []
    for tau in (0.02, 0.01, 0.005):
        u, _ = integrate(flow, u0, SchemeConfig(kind=kind, tau=tau, A=1.0), 1.0)
        errs.append(np.linalg.norm(u - ref))
    p = np.log2(errs[-2] / errs[-1])
    assert abs(p - order) < 0.2
