import warnings

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from epquad.burgers2d import (BurgersConfig, build_operators, load_snapshots,
                              mean_maxnorm_error, save_snapshots, simulate)
from epquad.errors import BlowUpError, DimensionError
from epquad.quadop import apply_quad, energy_residual


@pytest.fixture(scope="module")
def default_run():
    return simulate(BurgersConfig())


def small(N=10, **kw):
    return BurgersConfig(dx=1.0 / N, **kw)


@pytest.mark.parametrize("kw", [
    {"dx": 0.03}, {"dx": 0.5}, {"dt": 0.0}, {"T": 0.015}, {"ic": "gauss"}, {"L": -1.0},
])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        BurgersConfig(**kw)


def test_config_defaults_and_dict():
    cfg = BurgersConfig()
    assert (cfg.N, cfg.n, cfg.n_steps) == (50, 2500, 400)
    assert BurgersConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        BurgersConfig.from_dict({"viscosity": 1.0})


def test_constant_field_is_steady():
    ops = build_operators(small())
    u = np.full(ops.n, 1.7)
    assert_allclose(ops.rhs(u), 0.0, atol=1e-12)


def test_diffusion_is_symmetric_dissipative():
    ops = build_operators(small())
    A = ops.A_v.toarray()
    assert_allclose(A, A.T)
    w, V = np.linalg.eigh(A)
    assert w.max() == pytest.approx(0.0, abs=1e-12)
    assert np.all(w <= 1e-12)
    top = V[:, np.argmax(w)]
    assert_allclose(np.abs(top), 1 / np.sqrt(ops.n), rtol=1e-8)
    u = np.random.default_rng(0).standard_normal(ops.n)
    assert u @ A @ u <= 0


def test_difference_matrix_is_skew():
    D = build_operators(small(8)).D.toarray()
    assert_array_equal(D, -D.T)


def test_dense_advection_is_energy_preserving():
    ops = build_operators(small())
    H = ops.advection_quadop()
    X = np.random.default_rng(1).standard_normal((ops.n, 100))
    for u in X.T:
        bound = 1e-12 * H.max_abs() * np.linalg.norm(u) ** 3
        assert abs(energy_residual(H, u)) <= bound


def test_full_grid_energy_check():
    report = build_operators(BurgersConfig()).energy_report(tol=1e-12)
    assert report.ok


def test_matrix_free_matches_quadop():
    ops = build_operators(small(6))
    H = ops.advection_quadop()
    X = np.random.default_rng(2).standard_normal((ops.n, 5))
    assert_allclose(ops.advection(X), apply_quad(H, X), atol=1e-12)


def test_quadop_guard():
    with pytest.raises(DimensionError):
        build_operators(BurgersConfig()).advection_quadop()


def test_advection_second_order():
    errors = []
    for N in (16, 32, 64):
        cfg = BurgersConfig(dx=1.0 / N, c=0.7)
        ops = build_operators(cfg)
        X, Y = np.meshgrid(ops.x, ops.y)
        k = 2 * np.pi
        u = np.sin(k * X) + 0.5 * np.cos(k * Y)
        exact = cfg.c * u * (k * np.cos(k * X) - 0.5 * k * np.sin(k * Y))
        errors.append(np.abs(ops.advection(u.ravel()) - exact.ravel()).max())
    ratios = np.array(errors[:-1]) / np.array(errors[1:])
    assert np.all((ratios >= 3.4) & (ratios <= 4.6)), ratios


def test_default_snapshots(default_run):
    snap = default_run
    assert snap.X.shape == (2500, 401)
    assert_allclose(snap.times[[0, -1]], [0.0, 4.0])
    ops = build_operators(BurgersConfig())
    assert_allclose(snap.X[:, 0], ops.initial_state())
    assert np.abs(snap.Xdot - ops.rhs(snap.X)).max() <= 1e-13 * np.abs(snap.Xdot).max()


def test_energy_monotone(default_run):
    E = 0.5 * np.sum(default_run.X ** 2, axis=0)
    assert np.all(E[1:] <= E[:-1] + 1e-10 * E[0])


def test_no_dynamics_keeps_initial_state():
    snap = simulate(small(c=0.0, nu=0.0, T=0.5))
    assert_array_equal(snap.X, snap.X[:, :1].repeat(snap.m, axis=1))


def test_pure_diffusion_matches_discrete_solution():
    cfg = BurgersConfig(c=0.0, T=1.0)
    snap = simulate(cfg)
    lam = -4 * cfg.nu * (1 - np.cos(2 * np.pi * cfg.dx)) / cfg.dx ** 2
    exact = np.exp(lam * 1.0) * snap.X[:, 0]
    assert np.linalg.norm(snap.X[:, -1] - exact) / np.linalg.norm(exact) <= 1e-3
    # continuous decay rate is close to the discrete one on this grid
    assert lam == pytest.approx(-8 * np.pi ** 2 * cfg.nu, rel=2e-3)


def test_single_snapshot():
    snap = simulate(small(T=0.0))
    assert snap.X.shape == (100, 1)


def test_fd_derivatives_close_to_exact():
    cfg = small(T=0.5)
    exact = simulate(cfg)
    fd = simulate(cfg, fd_derivatives=True)
    assert np.abs(fd.Xdot - exact.Xdot).max() <= 1e-3 * np.abs(exact.Xdot).max()


def test_blow_up_and_cfl_warning():
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        with pytest.raises(BlowUpError) as err:
            simulate(BurgersConfig(dt=0.5, T=100.0))
    assert err.value.time > 0
    assert any("CFL" in str(w.message) for w in caught)


def test_mean_maxnorm_error():
    truth = np.array([[1.0, -2.0], [0.5, 0.0]])
    assert mean_maxnorm_error(truth, truth) == 0.0
    assert mean_maxnorm_error(truth, truth + 0.1) == pytest.approx(0.05)
    with pytest.raises(ZeroDivisionError):
        mean_maxnorm_error(np.zeros((2, 2)), np.ones((2, 2)))
    with pytest.raises(DimensionError):
        mean_maxnorm_error(truth, truth[:, :1])


def test_snapshot_archive_round_trip(tmp_path):
    snap = simulate(small(T=0.05))
    save_snapshots(snap, tmp_path)
    back = load_snapshots(tmp_path)
    assert_array_equal(back.X, snap.X)
    assert_array_equal(back.Xdot, snap.Xdot)
    assert_array_equal(back.times, snap.times)
    assert BurgersConfig.from_dict(back.config) == small(T=0.05)
