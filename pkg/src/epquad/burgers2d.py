"""Viscous 2D Burgers' equation on a periodic square.

    du/dt = c u (u_x + u_y) + nu (u_xx + u_yy)

Nodes sit at ``x_p = p dx`` for ``p = 0 .. N-1`` in both directions and the
state vector is the row-major flattening of ``U[iy, ix]``. The advection term
is discretized in skew-split form

    c/3 * (u * (D u) + D (u * u)),    D = D_x + D_y,

with second-order central periodic differences. Since ``D`` is skew-symmetric
the quadratic operator conserves ``|u|^2`` exactly.
"""

import json
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import BlowUpError, DimensionError
from .matrixio import read_matrix, write_matrix
from .quadop import QuadOp, energy_report_triplets

__all__ = [
    "BurgersConfig",
    "FomOperators",
    "SnapshotSet",
    "build_operators",
    "simulate",
    "mean_maxnorm_error",
    "rk4_step",
    "save_snapshots",
    "load_snapshots",
]

INITIAL_CONDITIONS = ("cosine",)


@dataclass(frozen=True)
class BurgersConfig:
    L: float = 1.0
    dx: float = 0.02
    c: float = 0.2
    nu: float = 2e-3
    dt: float = 0.01
    T: float = 4.0
    ic: str = "cosine"

    def __post_init__(self):
        if self.L <= 0 or self.dx <= 0:
            raise ValueError("L and dx must be positive")
        ratio = self.L / self.dx
        if abs(ratio - round(ratio)) > 1e-9 * ratio or round(ratio) < 3:
            raise ValueError(f"L/dx = {ratio} must be an integer >= 3")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.T < 0:
            raise ValueError("T must be non-negative")
        steps = self.T / self.dt
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise ValueError(f"T/dt = {steps} must be an integer")
        if self.ic not in INITIAL_CONDITIONS:
            raise ValueError(f"unknown initial condition {self.ic!r}")

    @property
    def N(self):
        """Nodes per direction."""
        return int(round(self.L / self.dx))

    @property
    def n(self):
        return self.N ** 2

    @property
    def n_steps(self):
        return int(round(self.T / self.dt))

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown Burgers config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        return asdict(self)


def _periodic_diff(N, h):
    """First (central) and second derivative matrices on a periodic 1D grid."""
    e = np.ones(N)
    D1 = sp.diags([e[:-1], -e[:-1]], [1, -1], shape=(N, N), format="lil")
    D1[0, N - 1] = -1.0
    D1[N - 1, 0] = 1.0
    D1 = D1.tocsr() / (2 * h)
    D2 = sp.diags([e[:-1], -2 * e, e[:-1]], [1, 0, -1], shape=(N, N), format="lil")
    D2[0, N - 1] = 1.0
    D2[N - 1, 0] = 1.0
    D2 = D2.tocsr() / h ** 2
    return D1, D2


@dataclass(frozen=True)
class FomOperators:
    """Discrete operators of the semi-discrete system ``du/dt = A_v u + H_a(u kron u)``."""

    cfg: BurgersConfig
    A_v: sp.csr_matrix
    D: sp.csr_matrix
    x: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)

    @property
    def n(self):
        return self.cfg.n

    def advection(self, u):
        """Matrix-free ``H_a (u kron u)``; ``u`` may be ``(n,)`` or ``(n, m)``."""
        c3 = self.cfg.c / 3.0
        return c3 * (u * (self.D @ u) + self.D @ (u * u))

    def rhs(self, u):
        return self.A_v @ u + self.advection(u)

    def advection_triplets(self):
        """Nonzero entries of ``H_a`` as ``(rows, subs, cols, values)``, 0-based.

        ``c/3 u_j (D u)_j`` puts ``c/3 D[j, k]`` at ``h_{j_{j,k}}``;
        ``c/3 (D u^2)_j`` puts ``c/3 D[j, k]`` at ``h_{k_{j,k}}``.
        """
        Dc = self.D.tocoo()
        c3 = self.cfg.c / 3.0
        rows = np.concatenate([Dc.row, Dc.row])
        subs = np.concatenate([Dc.row, Dc.col])
        cols = np.concatenate([Dc.col, Dc.col])
        vals = c3 * np.concatenate([Dc.data, Dc.data])
        return rows, subs, cols, vals

    def advection_quadop(self, max_nodes=256):
        """Dense ``H_a`` as a QuadOp, for small verification grids only."""
        n = self.n
        if n > max_nodes:
            raise DimensionError(
                f"refusing to materialize an {n} x {n * n} operator (max_nodes={max_nodes})")
        T = np.zeros((n, n, n))
        rows, subs, cols, vals = self.advection_triplets()
        np.add.at(T, (rows, subs, cols), vals)
        return QuadOp.from_tensor(T)

    def energy_report(self, tol=1e-12):
        """Six-term energy test of ``H_a`` from its nonzero entries."""
        return energy_report_triplets(self.n, *self.advection_triplets(), tol=tol)

    def initial_state(self):
        X, Y = np.meshgrid(self.x, self.y)  # U[iy, ix]
        if self.cfg.ic == "cosine":
            U0 = np.cos(2 * np.pi * X) * np.cos(2 * np.pi * Y)
        return U0.ravel()


def build_operators(cfg):
    """Assemble ``A_v = nu (D_xx + D_yy)`` and the advection difference matrix."""
    N, h = cfg.N, cfg.dx
    D1, D2 = _periodic_diff(N, h)
    I = sp.identity(N, format="csr")
    Dx = sp.kron(I, D1, format="csr")
    Dy = sp.kron(D1, I, format="csr")
    Lap = sp.kron(I, D2, format="csr") + sp.kron(D2, I, format="csr")
    grid = np.arange(N) * h
    return FomOperators(cfg=cfg, A_v=(cfg.nu * Lap).tocsr(), D=(Dx + Dy).tocsr(),
                        x=grid, y=grid.copy())


def rk4_step(f, u, dt):
    k1 = f(u)
    k2 = f(u + 0.5 * dt * k1)
    k3 = f(u + 0.5 * dt * k2)
    k4 = f(u + dt * k3)
    return u + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


@dataclass(frozen=True)
class SnapshotSet:
    """States ``X`` (n x m), derivatives ``Xdot``, times, optional inputs ``U``."""

    X: np.ndarray
    Xdot: np.ndarray
    times: np.ndarray
    U: np.ndarray = None
    config: dict = None

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def m(self):
        return self.X.shape[1]


def _check_cfl(cfg):
    adv = cfg.c * cfg.dt / cfg.dx
    diff = cfg.nu * cfg.dt / cfg.dx ** 2
    if adv > 1.0:
        warnings.warn(f"advective CFL number c dt/dx = {adv:.3g} exceeds 1", RuntimeWarning)
    if diff > 0.5:
        warnings.warn(f"diffusive number nu dt/dx^2 = {diff:.3g} exceeds 0.5", RuntimeWarning)
    return adv, diff


def simulate(cfg, fd_derivatives=False, ops=None):
    """Integrate the FOM with classical RK4, recording every step.

    Derivatives are the semi-discrete right-hand side at each stored state,
    or second-order finite differences in time when ``fd_derivatives`` is set.

    Raises
    ------
    BlowUpError
        If the state becomes non-finite.
    """
    _check_cfl(cfg)
    ops = build_operators(cfg) if ops is None else ops
    m = cfg.n_steps + 1
    times = np.arange(m) * cfg.dt
    X = np.empty((cfg.n, m))
    u = ops.initial_state()
    X[:, 0] = u
    with np.errstate(over="ignore", invalid="ignore"):
        for s in range(1, m):
            u = rk4_step(ops.rhs, u, cfg.dt)
            if not np.all(np.isfinite(u)):
                raise BlowUpError(times[s])
            X[:, s] = u
    if fd_derivatives and m >= 3:
        Xdot = np.gradient(X, cfg.dt, axis=1, edge_order=2)
    else:
        Xdot = ops.rhs(X)
    return SnapshotSet(X=X, Xdot=Xdot, times=times, config=cfg.to_dict())


def mean_maxnorm_error(truth, pred):
    """``mean |truth - pred| / max |truth|`` over all nodes and snapshots."""
    truth = getattr(truth, "X", truth)
    pred = getattr(pred, "X", pred)
    truth = np.asarray(truth, dtype=float)
    pred = np.asarray(pred, dtype=float)
    if truth.shape != pred.shape:
        raise DimensionError(f"shape mismatch {truth.shape} vs {pred.shape}")
    scale = np.max(np.abs(truth))
    if scale == 0:
        raise ZeroDivisionError("truth data is identically zero")
    return float(np.mean(np.abs(truth - pred)) / scale)


def save_snapshots(snap, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_matrix(out / "X.txt", snap.X)
    write_matrix(out / "Xdot.txt", snap.Xdot)
    write_matrix(out / "times.txt", snap.times)
    if snap.U is not None:
        write_matrix(out / "U.txt", snap.U)
    (out / "config.json").write_text(json.dumps(snap.config or {}, indent=2) + "\n")


def load_snapshots(in_dir):
    d = Path(in_dir)
    X = read_matrix(d / "X.txt")
    Xdot = read_matrix(d / "Xdot.txt")
    times = read_matrix(d / "times.txt").ravel()
    U = read_matrix(d / "U.txt") if (d / "U.txt").exists() else None
    config = json.loads((d / "config.json").read_text()) if (d / "config.json").exists() else None
    if Xdot.shape != X.shape or len(times) != X.shape[1]:
        raise DimensionError("snapshot archive has inconsistent shapes")
    return SnapshotSet(X=X, Xdot=Xdot, times=times, U=U, config=config)
