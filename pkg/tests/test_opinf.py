import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from epquad.constraints import build_system, vec
from epquad.errors import DimensionError, InferenceError
from epquad.opinf import (InferenceConfig, LCurveFallbackWarning, ReducedModel,
                          RegularizationSweep, TrainingData, expand_unique, infer,
                          infer_energy_preserving, infer_standard, kron_unique,
                          lcurve_curvature, load_model, save_model, select_lcurve,
                          tikhonov_sweep, unique_pairs)
from epquad.quadop import QuadOp, apply_quad, energy_residual, operators_equivalent, skew_defect
from epquad.skewrep import random_skew_block


def floor(mode, lam=1e-5, **kw):
    return InferenceConfig(mode=mode, lambda_min=lam, lambda_max=lam, lambda_count=1, **kw)


def known_model(r=3, k=0, constant=False, seed=0, skew=True):
    rng = np.random.default_rng(seed)
    S = rng.standard_normal((r, r))
    A = 0.5 * (S - S.T) - 0.3 * np.eye(r)
    H = random_skew_block(r, seed) if skew else QuadOp(rng.standard_normal((r, r * r)))
    c = rng.standard_normal(r) if constant else np.zeros(r)
    B = rng.standard_normal((r, k))
    return ReducedModel(c, A, H, B, mode="energy_preserving")


def random_data(model, m=200, seed=1, k=0, constant=False):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((model.r, m))
    U = rng.standard_normal((k, m)) if k else None
    Xd = model.c_hat[:, None] + model.A_hat @ X + apply_quad(model.H_hat, X)
    if k:
        Xd = Xd + model.B_hat @ U
    return TrainingData(X, Xd, U=U, include_constant=constant)


def test_unique_kron():
    x = np.array([[2.0], [3.0], [5.0]])
    assert_allclose(kron_unique(x).ravel(), [4, 6, 10, 9, 15, 25])
    assert len(unique_pairs(4)) == 10


def test_expand_unique_reproduces_products():
    r = 4
    rng = np.random.default_rng(0)
    Hc = rng.standard_normal((r, r * (r + 1) // 2))
    X = rng.standard_normal((r, 7))
    assert_allclose(apply_quad(expand_unique(Hc), X), Hc @ kron_unique(X), rtol=1e-12)
    T = expand_unique(Hc).tensor
    assert_allclose(T, T.transpose(0, 2, 1))


def test_config_validation_and_dict():
    assert InferenceConfig(mode="ep").mode == "energy_preserving"
    assert len(InferenceConfig().lambdas()) == 50
    lam = InferenceConfig().lambdas()
    assert lam[0] == pytest.approx(1e-5) and lam[-1] == pytest.approx(1e3)
    assert np.all(np.diff(lam) > 0)
    cfg = InferenceConfig(mode="ep", shared_lambda=True)
    assert InferenceConfig.from_dict(cfg.to_dict()) == cfg
    for bad in [{"mode": "x"}, {"lambda_count": 0}, {"lambda_min": 2.0, "lambda_max": 1.0}]:
        with pytest.raises(ValueError):
            InferenceConfig(**bad)
    with pytest.raises(ValueError):
        InferenceConfig.from_dict({"lam": 1})


def test_training_data_shapes():
    with pytest.raises(DimensionError):
        TrainingData(np.zeros((3, 5)), np.zeros((3, 4)))
    with pytest.raises(DimensionError):
        TrainingData(np.zeros((3, 5)), np.zeros((3, 5)), U=np.zeros((1, 4)))


def test_tikhonov_matches_regularized_normal_equations():
    rng = np.random.default_rng(0)
    D = rng.standard_normal((6, 40))
    f = rng.standard_normal(40)
    w = np.array([1, 1, 3, 3, 3, 1.0])
    lams = np.array([1e-3, 1e-1, 10.0])
    sols, res, sol = tikhonov_sweep(D, f, w, lams)
    for s, lam in enumerate(lams):
        o = np.linalg.solve(D @ D.T + lam * np.diag(w), D @ f)
        assert_allclose(sols[s], o, rtol=1e-10)
        assert res[s] == pytest.approx(np.linalg.norm(o @ D - f))
    assert np.all(np.diff(res) >= 0)
    assert np.all(np.diff(sol) <= 0)


def test_standard_recovers_generator():
    true = known_model(skew=False, constant=True, k=2)
    data = random_data(true, k=2, constant=True)
    model, _ = infer_standard(data, floor("standard"))
    ref = np.linalg.norm(true.A_hat)
    assert np.abs(model.A_hat - true.A_hat).max() <= 1e-6 * ref
    assert np.abs(model.c_hat - true.c_hat).max() <= 1e-6 * ref
    assert np.abs(model.B_hat - true.B_hat).max() <= 1e-6 * ref
    assert operators_equivalent(model.H_hat, true.H_hat, tol=1e-6)


def test_ep_recovers_generator():
    true = known_model(r=4, constant=True, k=1)
    data = random_data(true, m=300, k=1, constant=True)
    model, _ = infer_energy_preserving(data, floor("ep"))
    assert np.abs(model.A_hat - true.A_hat).max() <= 1e-6
    assert np.abs(model.c_hat - true.c_hat).max() <= 1e-6
    assert np.abs(model.B_hat - true.B_hat).max() <= 1e-6
    assert operators_equivalent(model.H_hat, true.H_hat, tol=1e-6)
    assert skew_defect(model.H_hat) <= 1e-13 * model.H_hat.max_abs()


@given(st.integers(1, 6), st.integers(0, 1000))
def test_ep_output_is_skew_block(r, seed):
    rng = np.random.default_rng(seed)
    data = TrainingData(rng.standard_normal((r, 60)), rng.standard_normal((r, 60)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        model, _ = infer_energy_preserving(data, InferenceConfig(mode="ep", lambda_count=5))
    H = model.H_hat
    assert skew_defect(H) == 0.0
    assert np.all(build_system(r).C_mat @ vec(H) == 0.0)
    X = rng.standard_normal((r, 100))
    for x in X.T:
        assert abs(energy_residual(H, x)) <= 1e-12 * max(H.max_abs(), 1e-300) * np.linalg.norm(x) ** 3


def test_r2_second_row_has_no_free_quadratic_terms():
    true = known_model(r=2)
    model, sweeps = infer_energy_preserving(random_data(true), floor("ep"))
    assert [s.n_unknowns for s in sweeps] == [2 + 2, 2 + 0]
    assert operators_equivalent(model.H_hat, true.H_hat, tol=1e-6)


@pytest.mark.parametrize("r", [2, 3, 5])
def test_unknown_bookkeeping(r):
    data = random_data(known_model(r=r), m=200)
    _, ep = infer_energy_preserving(data, floor("ep"))
    assert sum(s.n_unknowns - r for s in ep) == r * r * (r - 1) // 2
    _, std = infer_standard(data, floor("standard"))
    assert sum(s.n_unknowns - r for s in std) == r * r * (r + 1) // 2


def test_shared_lambda_matches_joint_problem():
    r = 3
    true = known_model(r=r, skew=False)
    rng = np.random.default_rng(4)
    data = random_data(true, m=150)
    data = TrainingData(data.Xhat, data.Xdot_hat + 0.01 * rng.standard_normal(data.Xdot_hat.shape))
    model, sweeps = infer_standard(data, InferenceConfig(shared_lambda=True, lambda_count=20))
    assert len(sweeps) == 1 and sweeps[0].shared
    lam = sweeps[0].selected_lambda
    # joint Frobenius problem, solved directly in Kronecker-vectorized form
    D = np.vstack([data.Xhat, kron_unique(data.Xhat)])
    p = D.shape[0]
    w = np.r_[np.ones(r), np.full(p - r, float(r))]
    K = np.kron(D.T, np.eye(r))
    big = np.vstack([K, np.diag(np.sqrt(lam * np.kron(w, np.ones(r))))])
    rhs = np.r_[data.Xdot_hat.ravel(order="F"), np.zeros(r * p)]
    O = np.linalg.lstsq(big, rhs, rcond=None)[0].reshape((r, p), order="F")
    assert_allclose(model.A_hat, O[:, :r], atol=1e-9)
    assert_allclose(model.H_hat.entries, expand_unique(O[:, r:]).entries, atol=1e-9)


@pytest.mark.filterwarnings("ignore::epquad.opinf.LCurveFallbackWarning")
def test_shared_lambda_ep_mode():
    data = random_data(known_model(r=3), m=100)
    model, sweeps = infer_energy_preserving(
        data, InferenceConfig(mode="ep", shared_lambda=True, lambda_count=8))
    assert len(sweeps) == 1
    assert np.all(model.lambdas == model.lambdas[0])


def test_zero_data_gives_zero_model():
    data = TrainingData(np.random.default_rng(0).standard_normal((3, 50)), np.zeros((3, 50)))
    for mode in ("standard", "ep"):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            model, sweeps = infer(data, InferenceConfig(mode=mode, lambda_count=5))
        assert np.all(model.A_hat == 0) and np.all(model.H_hat.entries == 0)
        assert all(np.all(s.residual_norms == 0) for s in sweeps)


def test_scalar_linear_model_from_central_differences():
    a, dt = -0.7, 1e-3
    t = np.arange(0, 2 + dt / 2, dt)
    x = np.exp(a * t)[None, :]
    xd = np.gradient(x, dt, axis=1, edge_order=2)
    model, _ = infer_standard(TrainingData(x, xd), floor("standard"))
    assert model.A_hat[0, 0] == pytest.approx(a, abs=1e-4)


def test_all_nonfinite_solutions_raise():
    X = np.random.default_rng(0).standard_normal((2, 30))
    data = TrainingData(X, np.full((2, 30), np.nan))
    with pytest.raises(InferenceError):
        infer_standard(data, floor("standard"))


def test_underdetermined_row_warns():
    rng = np.random.default_rng(0)
    data = TrainingData(rng.standard_normal((4, 6)), rng.standard_normal((4, 6)))
    with pytest.warns(RuntimeWarning, match="unknowns"):
        _, sweeps = infer_standard(data, floor("standard"))
    assert sweeps[0].underdetermined


def test_lcurve_right_angle_corner():
    lam = np.logspace(-5, 3, 50)
    t = np.arange(50)
    # vertical leg for t < 25, horizontal leg after
    res = np.exp(np.where(t <= 25, 0.0, (t - 25) * 0.3))
    sol = np.exp(np.where(t <= 25, (25 - t) * 0.3, 0.0))
    sweep = RegularizationSweep(lam, res, sol)
    assert select_lcurve(sweep) == (25, False)
    kappa = lcurve_curvature(lam, res, sol)
    assert np.isnan(kappa[0]) and np.isnan(kappa[-1])


def test_lcurve_tie_goes_to_smaller_lambda():
    lam = np.logspace(-2, 2, 9)
    # two identical corners at 2 and 6
    x = np.array([0, 0, 0, 1, 2, 2, 2, 3, 4], dtype=float)
    y = np.array([4, 3, 2, 2, 2, 1, 0, 0, 0], dtype=float)
    idx, fallback = select_lcurve(RegularizationSweep(lam, np.exp(x), np.exp(y)))
    assert (idx, fallback) == (2, False)


def test_lcurve_degenerate_fallback():
    lam = np.logspace(-5, 3, 10)
    sweep = RegularizationSweep(lam, np.ones(10), np.ones(10))
    with pytest.warns(LCurveFallbackWarning):
        idx, fallback = select_lcurve(sweep)
    assert fallback and idx == 0


def test_lcurve_needs_three_points():
    with pytest.raises(ValueError):
        select_lcurve(RegularizationSweep(np.array([1.0, 2.0]), np.ones(2), np.ones(2)))
    assert select_lcurve(RegularizationSweep(np.array([1.0]), np.ones(1), np.ones(1))) == (0, False)


@pytest.mark.filterwarnings("ignore::epquad.opinf.LCurveFallbackWarning")
def test_deterministic():
    data = random_data(known_model(r=4), m=80)
    for mode in ("standard", "ep"):
        a, _ = infer(data, InferenceConfig(mode=mode, lambda_count=10))
        b, _ = infer(data, InferenceConfig(mode=mode, lambda_count=10))
        assert_array_equal(a.A_hat, b.A_hat)
        assert a.H_hat == b.H_hat


def test_model_round_trip(tmp_path):
    true = known_model(r=3, k=2, constant=True)
    model = ReducedModel(true.c_hat, true.A_hat, true.H_hat, true.B_hat,
                         mode="energy_preserving", lambdas=np.array([1e-3, 1e-2, 1e-1]),
                         V=np.eye(5, 3))
    save_model(model, tmp_path, extra_meta={"note": "x"})
    back = load_model(tmp_path)
    assert_array_equal(back.A_hat, model.A_hat)
    assert_array_equal(back.B_hat, model.B_hat)
    assert_array_equal(back.c_hat, model.c_hat)
    assert back.H_hat == model.H_hat
    assert_array_equal(back.V, model.V)
    assert back.mode == "energy_preserving"
    assert (tmp_path / "H.txt").read_text().startswith("# quadop n=3\n")
