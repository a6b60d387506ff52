import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nkemu import analysis
from nkemu.errors import (ForcingExceedsOne, KantorovichViolated, SingularOnConstants,
                          UnsupportedKind, ValidationError, ZeroResidual)
from nkemu.grid import Grid, laplacian
from nkemu.inference import ExactFactorModel
from nkemu.nk import default_draws, generate_training_data, nk_solve
from nkemu.problems import burgers_problem, elliptic_problem, jacobian, residual
from nkemu.sampling import periodic_kernel
from nkemu.surrogate import fit

ETA_SINE = 1 / (2 * np.pi * np.sqrt(2))


@pytest.fixture(scope="module")
def ell():
    return elliptic_problem()


@pytest.fixture(scope="module")
def draws(ell):
    return default_draws(ell, periodic_kernel(), 16, 2)


def test_forcing_bound_examples():
    assert analysis.forcing_bound(0.0, 1.0, 1.0, 0.0) == 0.0
    assert analysis.forcing_bound(1.0, 1.0, 1.0, 0.1) == pytest.approx(0.6, abs=1e-15)
    assert analysis.forcing_bound(1e300, 1.0, 1.0, 0.0) == pytest.approx(1.0)
    assert analysis.forcing_bound(np.inf, 1.0, 1.0, 0.0) == 1.0
    with pytest.raises(ValidationError):
        analysis.forcing_bound(1.0, 0.0, 1.0, 0.0)


def test_majorant_linear_phi():
    t = analysis.majorant_sequence(0.3, 1.0, 0.0, 5)
    np.testing.assert_array_equal(t, [0, 0.3, 0.3, 0.3, 0.3, 0.3])


def test_majorant_boundary_case():
    beta, Lt = 2.0, 0.5
    eta = 0.5 / (beta * Lt)
    t = analysis.majorant_sequence(eta, beta, Lt, 60)
    assert np.all(np.diff(t) >= 0)
    # double root: phi underflows to zero once (t - t*)^2 ~ eps
    assert abs(t[-1] - 1 / (beta * Lt)) <= 2 * np.sqrt(np.finfo(float).eps)
    assert analysis.kantorovich_limit(eta, beta, Lt) == pytest.approx(1 / (beta * Lt))


def test_majorant_scalar_newton_oracle():
    t = analysis.majorant_sequence(0.1, 1.0, 1.0, 8)
    t_star = 1 - np.sqrt(0.8)
    assert abs(t[-1] - t_star) <= 1e-12
    assert np.all(np.diff(t) > 0) or abs(t[-1] - t_star) <= 1e-16
    assert analysis.kantorovich_limit(0.1, 1.0, 1.0) == pytest.approx(t_star, rel=1e-14)


def test_majorant_rejects_large_h():
    with pytest.raises(KantorovichViolated):
        analysis.majorant_sequence(1.0, 1.0, 1.0, 3)


@settings(max_examples=40, deadline=None)
@given(st.floats(1e-3, 1.0), st.floats(0.1, 3.0), st.floats(0.0, 0.5))
def test_majorant_monotone_and_bounded(eta, beta, h):
    Lt = h / (beta * eta)
    t = analysis.majorant_sequence(eta, beta, Lt, 30)
    t_star = analysis.kantorovich_limit(eta, beta, Lt)
    assert np.all(np.diff(t) >= -1e-15 * t_star)
    assert np.all(t <= t_star * (1 + 1e-12))


def test_elliptic_constants_closed_forms():
    g = Grid((1024,), "periodic")
    f = np.sin(2 * np.pi * g.axis_coords(0))
    c = analysis.elliptic_constants(1.0, 0.0, 0.0, f, g)
    assert abs(c.L - 3 / (2 * np.pi**2)) <= 1e-12
    assert abs(c.M - (1 + 3 / (4 * np.pi**2))) <= 1e-12
    assert c.theta_bar == 0.0 and c.L_tilde == c.L
    assert abs(c.eta - ETA_SINE) <= 1e-3
    assert c.h_tilde == pytest.approx(c.L_tilde * c.eta)
    json.loads(c.to_json())


def test_elliptic_constants_forcing_boundary():
    f = np.sin(2 * np.pi * Grid((64,), "periodic").axis_coords(0))
    lam = 0.5
    M = 1 + 3 / (4 * np.pi**2)
    eps = (1 - lam / (1 + lam)) / M**2
    with pytest.raises(ForcingExceedsOne):
        analysis.elliptic_constants(1.0, lam, eps, f)
    analysis.elliptic_constants(1.0, lam, 0.99 * eps, f)


def test_h_minus_one_norm():
    g = Grid((1024,), "periodic")
    x = g.axis_coords(0)
    f = np.sin(2 * np.pi * x)
    assert analysis.h_minus_one_norm(np.zeros(g.n), g) == 0.0
    assert abs(analysis.h_minus_one_norm(f, g) - ETA_SINE) <= 1e-3
    a = analysis.h_minus_one_norm(f, g)
    assert analysis.h_minus_one_norm(-3.5 * f, g) == pytest.approx(3.5 * a, rel=1e-12)
    with pytest.raises(SingularOnConstants):
        analysis.h_minus_one_norm(f + 1.0, g)
    with pytest.raises(ValidationError):
        analysis.h_minus_one_norm(np.zeros(9), Grid((11,), "dirichlet"))


def test_h_minus_one_fourier_modes():
    # higher modes: ||sin(2 pi k x)||_{H^-1} = 1/(2 pi k sqrt 2)
    g = Grid((2048,), "periodic")
    x = g.axis_coords(0)
    for k in (1, 2, 3):
        val = analysis.h_minus_one_norm(np.sin(2 * np.pi * k * x), g)
        assert abs(val - 1 / (2 * np.pi * k * np.sqrt(2))) <= 1e-3


def test_resolvent_identity_examples(ell, draws):
    assert analysis.resolvent_identity_check(np.eye(5), 1.0) <= 1e-14
    J = np.random.default_rng(0).standard_normal((10, 10))
    assert analysis.resolvent_identity_check(J, 1e-3) <= 1e-10
    J0 = jacobian(ell, draws[0].u, np.zeros(ell.n))
    assert analysis.resolvent_identity_check(J0, 1e-2) <= 1e-9
    with pytest.raises(ValidationError):
        analysis.resolvent_identity_check(J, 0.0)


def test_resolvent_defect_tracks_conditioning():
    rng = np.random.default_rng(5)
    Q1, _ = np.linalg.qr(rng.standard_normal((30, 30)))
    Q2, _ = np.linalg.qr(rng.standard_normal((30, 30)))
    eps = np.finfo(float).eps
    for c in (1e1, 1e3, 1e5):
        J = Q1 @ np.diag(np.geomspace(1, 1 / c, 30)) @ Q2
        lam = 1e-2
        kappa = (1 + lam) / lam  # condition number of lam I + J J^T
        assert analysis.resolvent_identity_check(J, lam) <= 100 * eps * kappa * 30


def test_forcing_exact_factors(ell, draws):
    d = draws[0]
    exact = ExactFactorModel()
    fm = analysis.empirical_forcing(ell, exact, d.u, d.v0, 0.0)
    assert fm.ratio <= 1e-10
    for lam in (1e-2, 1.0, 10.0):
        fm = analysis.empirical_forcing(ell, exact, d.u, d.v0, lam)
        assert fm.ratio <= lam / (lam + fm.sigma_star**2) + 1e-10
        assert fm.holds


def test_forcing_zero_residual(ell, draws):
    d = draws[0]
    vs = nk_solve(ell, d.u, d.v0, 0.0, 30, 1e-15).solution
    u0 = residual(ell, np.zeros(ell.n), vs)
    with pytest.raises(ZeroResidual):
        analysis.empirical_forcing(ell, ExactFactorModel(), u0, vs, 0.0)


def test_forcing_trained_model(ell, draws):
    ds = generate_training_data(ell, "chonknoris", periodic_kernel(), 64, 5, 0.0, [0.0], 1)
    model = fit(ds, sigma2=1e-10)
    for d in draws[:16]:
        fm = analysis.empirical_forcing(ell, model, d.u, d.v0, 0.0)
        assert fm.holds


def _perturbed_starts(ell, draws, count):
    x = ell.grid.axis_coords(0)
    for d in draws[:count]:
        vs = nk_solve(ell, d.u, d.v0, 0.0, 50, 1e-15).solution
        for p in (1e-3, 1e-2):
            yield d.u, vs + p * np.sin(np.pi * x)


def test_majorant_domination_exact_newton(ell, draws):
    certified = 0
    for u, v0 in _perturbed_starts(ell, draws, 8):
        try:
            run = analysis.certify_elliptic_run(ell, ExactFactorModel(), u, v0, 0.0)
        except KantorovichViolated:
            continue
        certified += 1
        assert run.dominated and run.in_ball
        assert all(m.holds for m in run.forcing)
    assert certified > 0


def test_certify_rejects_other_kinds():
    spec = burgers_problem(31, 5)
    with pytest.raises(UnsupportedKind):
        analysis.certify_elliptic_run(spec, ExactFactorModel(), np.zeros(31), np.zeros(31), 0.0)


def test_local_order_fit_on_synthetic_sequences():
    e = [1e-1]
    for _ in range(4):
        e.append(3 * e[-1] ** 2)
    assert analysis.fit_local_order(e, floor=0) == pytest.approx(2.0, abs=0.05)
    lin = 0.5 ** np.arange(10)
    assert analysis.fit_local_order(lin) == pytest.approx(1.0, abs=1e-12)
    assert analysis.tail_ratio(lin) == pytest.approx(0.5)
    with pytest.raises(ValidationError):
        analysis.fit_local_order([1e-20, 1e-30])


def test_local_order_exact_factors_adaptive_lambda(ell, draws):
    # Quadratic convergence reaches the rounding floor in three or four steps,
    # so each per-trace slope includes one pre-asymptotic step; the median
    # over traces is the fitted order.
    x = ell.grid.axis_coords(0)
    orders = []
    for d in draws:
        vs = nk_solve(ell, d.u, d.v0, 0.0, 50, 1e-15).solution
        v0 = vs + 0.3 * np.max(np.abs(vs)) * np.sin(3 * np.pi * x)
        e, _ = analysis.exact_order_trace(ell, d.u, v0, c=0.1)
        orders.append(analysis.fit_local_order(e, floor=1e-11 * max(1.0, np.linalg.norm(vs))))
    assert np.median(orders) >= 1.9
    assert min(orders) >= 1.8


def test_linear_regime_tail_ratio(ell, draws):
    sig = float(np.linalg.eigvalsh(-laplacian(ell.grid))[0])
    lam = 0.3 * sig**2
    tb = lam / (lam + sig**2)
    bound = tb / (1 - tb) + 0.05
    for d in draws[:8]:
        tr = nk_solve(ell, d.u, d.v0, lam, 200, 0.0, relative=False)
        X = np.array(tr.iterates)
        assert analysis.tail_ratio(np.linalg.norm(X[:-1] - X[-1], axis=1), floor=1e-11) <= bound


def test_certificate_validation():
    with pytest.raises(ValidationError):
        analysis.ConvergenceCertificate(-1, 0, 0, 1, 0, 0, 0, 0, 0, 0)
    c = analysis.ConvergenceCertificate(1, 1, 1, 1, 0.1, 0, 0.2, 1.25, 0.125, 0.1)
    assert c.valid
