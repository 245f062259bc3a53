"""Sequential Operator Inference with optional energy-preserving structure.

Each row ``j`` of the reduced model

    dx/dt = c + A x + H (x kron x) + B u

is fitted by its own Tikhonov-regularized least-squares problem. In the
standard formulation the quadratic regressors are the ``r(r+1)/2`` unique
products ``x_i x_k`` (``i <= k``). In the energy-preserving formulation the
quadratic operator is built with skew-symmetric sub-matrices: rows are solved
in order, row ``j`` infers ``h_{i_{j,k}}`` for ``k > j`` only, takes
``h_{i_{j,k}} = -h_{i_{k,j}}`` for ``k < j`` from earlier rows, and has
``h_{i_{j,j}} = 0``.

Regularization minimizes ``|o^T D - f|^2 + lam * sum_t w_t o_t^2`` with
``w_t = quad_weight_factor`` (default ``r``) on quadratic coefficients and 1
elsewhere. ``lam`` is chosen per row (or shared) at the corner of the L-curve.
"""

import json
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionError, InferenceError
from .matrixio import read_matrix_with_comments, write_matrix
from .quadop import QuadOp, apply_quad

__all__ = [
    "InferenceConfig",
    "TrainingData",
    "ReducedModel",
    "RegularizationSweep",
    "LCurveFallbackWarning",
    "kron_unique",
    "unique_pairs",
    "expand_unique",
    "tikhonov_sweep",
    "select_lcurve",
    "lcurve_curvature",
    "infer_standard",
    "infer_energy_preserving",
    "infer",
    "save_model",
    "load_model",
]

MODES = ("standard", "energy_preserving")


class LCurveFallbackWarning(RuntimeWarning):
    """The L-curve had no usable corner and a fallback rule picked lambda."""


@dataclass(frozen=True)
class InferenceConfig:
    """Inference settings; mirrors the JSON configuration keys."""

    mode: str = "standard"
    lambda_min: float = 1e-5
    lambda_max: float = 1e3
    lambda_count: int = 50
    shared_lambda: bool = False
    include_constant: bool = False
    quad_weight_factor: float = None  # None means r

    def __post_init__(self):
        mode = {"ep": "energy_preserving"}.get(self.mode, self.mode)
        if mode not in MODES:
            raise ValueError(f"mode must be one of 'standard', 'ep'; got {self.mode!r}")
        object.__setattr__(self, "mode", mode)
        if self.lambda_count < 1:
            raise ValueError("lambda_count must be at least 1")
        if not 0 < self.lambda_min <= self.lambda_max:
            raise ValueError("need 0 < lambda_min <= lambda_max")

    def lambdas(self):
        if self.lambda_count == 1:
            return np.array([float(self.lambda_min)])
        return np.logspace(np.log10(self.lambda_min), np.log10(self.lambda_max),
                           self.lambda_count)

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown inference config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        d = asdict(self)
        d["mode"] = "ep" if self.mode == "energy_preserving" else "standard"
        return d


@dataclass(frozen=True)
class TrainingData:
    """Reduced snapshots ``Xhat`` (r x m), derivatives ``Xdot_hat`` and inputs ``U`` (k x m)."""

    Xhat: np.ndarray
    Xdot_hat: np.ndarray
    U: np.ndarray = None
    include_constant: bool = False

    def __post_init__(self):
        Xhat = np.atleast_2d(np.asarray(self.Xhat, dtype=float))
        Xdot = np.atleast_2d(np.asarray(self.Xdot_hat, dtype=float))
        if Xhat.shape != Xdot.shape:
            raise DimensionError(
                f"Xhat {Xhat.shape} and Xdot_hat {Xdot.shape} differ in shape")
        U = self.U
        if U is None:
            U = np.zeros((0, Xhat.shape[1]))
        U = np.atleast_2d(np.asarray(U, dtype=float))
        if U.shape[1] != Xhat.shape[1]:
            raise DimensionError(f"U has {U.shape[1]} columns, expected {Xhat.shape[1]}")
        object.__setattr__(self, "Xhat", Xhat)
        object.__setattr__(self, "Xdot_hat", Xdot)
        object.__setattr__(self, "U", U)

    @property
    def r(self):
        return self.Xhat.shape[0]

    @property
    def m(self):
        return self.Xhat.shape[1]

    @property
    def k(self):
        return self.U.shape[0]


@dataclass(frozen=True)
class RegularizationSweep:
    """L-curve data of one least-squares problem (or of all rows when shared)."""

    lambdas: np.ndarray
    residual_norms: np.ndarray
    solution_norms: np.ndarray
    selected: int = None
    shared: bool = False
    fallback: bool = False
    row: int = None
    n_unknowns: int = 0
    underdetermined: bool = False

    @property
    def selected_lambda(self):
        return float(self.lambdas[self.selected])


@dataclass(frozen=True)
class ReducedModel:
    c_hat: np.ndarray
    A_hat: np.ndarray
    H_hat: QuadOp
    B_hat: np.ndarray
    mode: str = "standard"
    lambdas: np.ndarray = None
    V: np.ndarray = field(default=None, repr=False)

    @property
    def r(self):
        return self.A_hat.shape[0]

    def rhs(self, x, u=None):
        """``c + A x + H (x kron x) + B u`` for a state or a batch of column states."""
        x = np.asarray(x, dtype=float)
        out = self.A_hat @ x + apply_quad(self.H_hat, x)
        out += self.c_hat if x.ndim == 1 else self.c_hat[:, None]
        if u is not None and self.B_hat.shape[1]:
            out += self.B_hat @ np.asarray(u, dtype=float)
        return out


def unique_pairs(r):
    """Index pairs ``(i, k)`` with ``i <= k``, ``i`` outer."""
    return [(i, k) for i in range(r) for k in range(i, r)]


def kron_unique(Xhat):
    """Rows ``x_i * x_k`` for ``i <= k`` in lexicographic order."""
    Xhat = np.atleast_2d(np.asarray(Xhat, dtype=float))
    r = Xhat.shape[0]
    if r < 1:
        raise DimensionError("need at least one state row")
    i, k = np.triu_indices(r)
    return Xhat[i] * Xhat[k]


def expand_unique(Hc):
    """Full ``(r, r^2)`` operator from unique-pair coefficients.

    Off-diagonal coefficients are split equally between ``h_{i_{j,k}}`` and
    ``h_{k_{j,i}}``.
    """
    Hc = np.atleast_2d(Hc)
    r = Hc.shape[0]
    i, k = np.triu_indices(r)
    T = np.zeros((r, r, r))
    half = np.where(i == k, 1.0, 0.5)
    T[:, i, k] += Hc * half
    off = i != k
    T[:, k[off], i[off]] += Hc[:, off] * 0.5
    return QuadOp.from_tensor(T)


def tikhonov_sweep(D, f, weights, lambdas):
    """Solve ``min |o^T D - f|^2 + lam * sum w o^2`` for every ``lam``.

    One SVD of the weight-scaled regressor matrix serves the whole sweep.

    Returns
    -------
    solutions : (L, p) ndarray
    residual_norms, solution_norms : (L,) ndarray
        ``|o^T D - f|`` and the weighted norm ``sqrt(sum w o^2)``.
    """
    D = np.asarray(D, dtype=float)
    f = np.asarray(f, dtype=float)
    p = D.shape[0]
    lambdas = np.asarray(lambdas, dtype=float)
    if p == 0:
        L = len(lambdas)
        res = np.full(L, np.linalg.norm(f))
        return np.zeros((L, 0)), res, np.zeros(L)
    scale = 1.0 / np.sqrt(np.asarray(weights, dtype=float))
    Dt = (D * scale[:, None]).T  # m x p
    U, s, Vt = np.linalg.svd(Dt, full_matrices=False)
    beta = U.T @ f
    outside = max(f @ f - beta @ beta, 0.0)
    s2 = s ** 2
    filt = s / (s2[None, :] + lambdas[:, None])  # L x q
    Z = (filt * beta[None, :]) @ Vt
    resid_coef = (lambdas[:, None] / (s2[None, :] + lambdas[:, None])) * beta[None, :]
    residual_norms = np.sqrt(np.sum(resid_coef ** 2, axis=1) + outside)
    solution_norms = np.linalg.norm(Z, axis=1)
    return Z * scale[None, :], residual_norms, solution_norms


def _three_point(t, y):
    """First and second derivatives at interior nodes of a non-uniform grid."""
    h1 = t[1:-1] - t[:-2]
    h2 = t[2:] - t[1:-1]
    y0, y1, y2 = y[:-2], y[1:-1], y[2:]
    d1 = (-h2 / (h1 * (h1 + h2))) * y0 + ((h2 - h1) / (h1 * h2)) * y1 \
        + (h1 / (h2 * (h1 + h2))) * y2
    d2 = 2.0 * (y0 / (h1 * (h1 + h2)) - y1 / (h1 * h2) + y2 / (h2 * (h1 + h2)))
    return d1, d2


def lcurve_curvature(lambdas, residual_norms, solution_norms):
    """Signed curvature of ``(log residual, log solution norm)`` against ``log lam``.

    Endpoints and points where the curve is stationary get NaN. Positive
    values mark a corner of the L.
    """
    t = np.log(np.asarray(lambdas, dtype=float))
    with np.errstate(divide="ignore", invalid="ignore"):
        x = np.log(np.asarray(residual_norms, dtype=float))
        y = np.log(np.asarray(solution_norms, dtype=float))
        kappa = np.full(len(t), np.nan)
        if len(t) >= 3:
            dx, ddx = _three_point(t, x)
            dy, ddy = _three_point(t, y)
            speed = (dx ** 2 + dy ** 2) ** 1.5
            k = (dx * ddy - dy * ddx) / speed
            k[~np.isfinite(k) | (speed <= 1e-14)] = np.nan
            kappa[1:-1] = k
    return kappa


def select_lcurve(sweep):
    """Index of maximum L-curve curvature; returns ``(index, fallback)``.

    Ties resolve toward smaller ``lam``. When no point has a defined positive
    curvature the index minimizing ``residual * solution_norm`` is returned
    with ``fallback=True`` and an ``LCurveFallbackWarning``.
    """
    lambdas = np.asarray(sweep.lambdas)
    if len(lambdas) == 1:
        return 0, False
    if len(lambdas) < 3:
        raise ValueError("L-curve selection needs at least 3 sweep points")
    kappa = lcurve_curvature(lambdas, sweep.residual_norms, sweep.solution_norms)
    if np.any(kappa > 0):
        return int(np.nanargmax(kappa)), False
    warnings.warn("L-curve has no corner; using min residual*solution-norm",
                  LCurveFallbackWarning, stacklevel=2)
    prod = np.asarray(sweep.residual_norms) * np.asarray(sweep.solution_norms)
    prod = np.where(np.isfinite(prod), prod, np.inf)
    return int(np.argmin(prod)), True


def _base_regressors(data):
    blocks = []
    if data.include_constant:
        blocks.append(np.ones((1, data.m)))
    blocks.append(data.Xhat)
    return blocks


def _split_solution(o, data):
    """Return ``(c, a_row, quad_coeffs, b_row)`` from a row solution vector."""
    pos = 0
    c = 0.0
    if data.include_constant:
        c = o[0]
        pos = 1
    a = o[pos:pos + data.r]
    pos += data.r
    k = data.k
    quad = o[pos:len(o) - k]
    b = o[len(o) - k:]
    return c, a, quad, b


def _finite_choice(sweep_solutions, idx):
    if np.all(np.isfinite(sweep_solutions[idx])):
        return idx
    finite = np.flatnonzero(np.all(np.isfinite(sweep_solutions), axis=1))
    if len(finite) == 0:
        raise InferenceError("no regularization value produced a finite solution")
    return int(finite[np.argmin(np.abs(finite - idx))])


def _check_determined(p, m, row):
    if m < p:
        warnings.warn(f"row {row + 1}: {p} unknowns but only {m} snapshots; "
                      "relying on regularization", RuntimeWarning, stacklevel=3)
        return True
    return False


def _choose(lambdas, res, sol, shared, row, p, under):
    sweep = RegularizationSweep(lambdas, res, sol, shared=shared, row=row,
                                n_unknowns=p, underdetermined=under)
    idx, fallback = select_lcurve(sweep)
    return RegularizationSweep(lambdas, res, sol, selected=idx, shared=shared,
                               fallback=fallback, row=row, n_unknowns=p,
                               underdetermined=under)


def infer_standard(data, config=None):
    """Fit an unconstrained quadratic model row by row.

    Returns
    -------
    model : ReducedModel
    sweeps : list of RegularizationSweep
        One per row, or a single shared sweep when ``config.shared_lambda``.
    """
    config = InferenceConfig() if config is None else config
    r = data.r
    wq = r if config.quad_weight_factor is None else config.quad_weight_factor
    lambdas = config.lambdas()
    D = np.vstack(_base_regressors(data) + [kron_unique(data.Xhat), data.U])
    n_base = (1 if data.include_constant else 0) + r
    n_quad = r * (r + 1) // 2
    weights = np.concatenate([np.ones(n_base), np.full(n_quad, float(wq)),
                              np.ones(data.k)])
    p = D.shape[0]
    results = []
    for j in range(r):
        under = _check_determined(p, data.m, j)
        results.append(tikhonov_sweep(D, data.Xdot_hat[j], weights, lambdas) + (under,))

    sweeps = []
    if config.shared_lambda:
        res = np.sqrt(sum(rr[1] ** 2 for rr in results))
        sol = np.sqrt(sum(rr[2] ** 2 for rr in results))
        shared = _choose(lambdas, res, sol, True, None, p, results[0][3])
        sweeps.append(shared)
        chosen = [shared.selected] * r
    else:
        chosen = []
        for j, (_, res, sol, under) in enumerate(results):
            sw = _choose(lambdas, res, sol, False, j, p, under)
            sweeps.append(sw)
            chosen.append(sw.selected)

    c_hat = np.zeros(r)
    A_hat = np.zeros((r, r))
    Hc = np.zeros((r, n_quad))
    B_hat = np.zeros((r, data.k))
    lam_row = np.zeros(r)
    for j in range(r):
        idx = _finite_choice(results[j][0], chosen[j])
        c_hat[j], A_hat[j], Hc[j], B_hat[j] = _split_solution(results[j][0][idx], data)
        lam_row[j] = lambdas[idx]
    model = ReducedModel(c_hat, A_hat, expand_unique(Hc), B_hat,
                         mode="standard", lambdas=lam_row)
    return model, sweeps


def _ep_row_layout(r, j):
    """Free quadratic slots of row ``j``: ``(i, k)`` with ``k > j``, ``i`` outer."""
    i_idx, k_idx = np.meshgrid(np.arange(r), np.arange(j + 1, r), indexing="ij")
    return i_idx.ravel(), k_idx.ravel()


def infer_energy_preserving(data, config=None):
    """Fit a model whose quadratic operator has skew-symmetric sub-matrices.

    Rows are solved strictly in order because row ``j`` uses the quadratic
    entries fixed by rows ``1 .. j-1``. The returned ``H_hat`` satisfies
    ``x^T H_hat (x kron x) = 0`` identically.
    """
    config = InferenceConfig(mode="energy_preserving") if config is None else config
    r, m = data.r, data.m
    wq = r if config.quad_weight_factor is None else config.quad_weight_factor
    lambdas = config.lambdas()
    X = data.Xhat
    base = _base_regressors(data)
    n_base = sum(b.shape[0] for b in base)

    # Regressors and their SVD do not depend on earlier rows, only F_j does.
    rows = []
    for j in range(r):
        i_idx, k_idx = _ep_row_layout(r, j)
        Dj = np.vstack(base + [X[i_idx] * X[k_idx], data.U])
        wj = np.concatenate([np.ones(n_base), np.full(len(i_idx), float(wq)),
                             np.ones(data.k)])
        under = _check_determined(Dj.shape[0], m, j)
        rows.append((i_idx, k_idx, Dj, wj, under))

    def solve_rows(lam_for_row):
        """Sequential pass; ``lam_for_row(j, res, sol) -> index``."""
        T = np.zeros((r, r, r))
        coeffs = []
        sweeps = []
        for j, (i_idx, k_idx, Dj, wj, under) in enumerate(rows):
            fixed = T[j, :, :j]  # h_{i_{j,k}} for k < j, already skew-mirrored
            F = data.Xdot_hat[j] - np.einsum("ik,is,ks->s", fixed, X, X[:j])
            sols, res, sol = tikhonov_sweep(Dj, F, wj, lambdas)
            idx, sw = lam_for_row(j, res, sol, Dj.shape[0], under)
            idx = _finite_choice(sols, idx)
            c, a, quad, b = _split_solution(sols[idx], data)
            T[j, i_idx, k_idx] = quad
            T[k_idx, i_idx, j] = -quad
            coeffs.append((c, a, b, lambdas[idx]))
            sweeps.append((sw, res, sol))
        return T, coeffs, sweeps

    if config.shared_lambda:
        # One full sequential pass per lambda; pick the corner of the summed curve.
        totals_res = np.zeros(len(lambdas))
        totals_sol = np.zeros(len(lambdas))
        for ell in range(len(lambdas)):
            _, _, sw = solve_rows(lambda j, res, sol, p, under, ell=ell: (ell, None))
            totals_res[ell] = np.sqrt(sum(s[1][ell] ** 2 for s in sw))
            totals_sol[ell] = np.sqrt(sum(s[2][ell] ** 2 for s in sw))
        under_any = any(row[4] for row in rows)
        shared = _choose(lambdas, totals_res, totals_sol, True, None,
                         rows[0][2].shape[0], under_any)
        T, coeffs, _ = solve_rows(lambda j, res, sol, p, under: (shared.selected, None))
        sweeps = [shared]
    else:
        def per_row(j, res, sol, p, under):
            sw = _choose(lambdas, res, sol, False, j, p, under)
            return sw.selected, sw
        T, coeffs, raw = solve_rows(per_row)
        sweeps = [s[0] for s in raw]

    c_hat = np.array([c[0] for c in coeffs], dtype=float)
    A_hat = np.array([c[1] for c in coeffs], dtype=float).reshape(r, r)
    B_hat = np.array([c[2] for c in coeffs], dtype=float).reshape(r, data.k)
    lam_row = np.array([c[3] for c in coeffs], dtype=float)
    model = ReducedModel(c_hat, A_hat, QuadOp.from_tensor(T), B_hat,
                         mode="energy_preserving", lambdas=lam_row)
    return model, sweeps


def infer(data, config):
    if config.mode == "energy_preserving":
        return infer_energy_preserving(data, config)
    return infer_standard(data, config)


def save_model(model, out_dir, extra_meta=None):
    """Write ``c.txt``, ``A.txt``, ``H.txt``, ``B.txt``, ``V.txt`` and ``meta.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_matrix(out / "c.txt", model.c_hat.reshape(-1, 1))
    write_matrix(out / "A.txt", model.A_hat)
    write_matrix(out / "H.txt", model.H_hat.entries, comments=[f"quadop n={model.r}"])
    write_matrix(out / "B.txt", model.B_hat.reshape(model.r, -1))
    if model.V is not None:
        write_matrix(out / "V.txt", model.V)
    meta = {
        "mode": "ep" if model.mode == "energy_preserving" else "standard",
        "r": model.r,
        "lambdas": [float(v) for v in (model.lambdas if model.lambdas is not None else [])],
    }
    meta.update(extra_meta or {})
    (out / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")


def load_model(in_dir):
    d = Path(in_dir)
    meta = json.loads((d / "meta.json").read_text())
    r = int(meta["r"])
    c = read_matrix_with_comments(d / "c.txt")[0].ravel()
    A = read_matrix_with_comments(d / "A.txt")[0]
    H = QuadOp(read_matrix_with_comments(d / "H.txt")[0])
    B = read_matrix_with_comments(d / "B.txt")[0].reshape(r, -1)
    V = read_matrix_with_comments(d / "V.txt")[0] if (d / "V.txt").exists() else None
    mode = "energy_preserving" if meta["mode"] == "ep" else "standard"
    return ReducedModel(c, A, H, B, mode=mode,
                        lambdas=np.asarray(meta.get("lambdas", []), dtype=float), V=V)
