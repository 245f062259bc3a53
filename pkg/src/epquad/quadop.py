"""Dense quadratic operators and the energy-preservation test.

A quadratic operator ``H`` of shape ``(n, n**2)`` acts on a state ``x`` through
``H @ kron(x, x)``. Column ``(i - 1) * n + k`` of ``H`` multiplies ``x_i * x_k``
(1-based), so ``H`` splits into ``n`` square sub-matrices ``H_i`` and the entry
in row ``j`` and column ``k`` of ``H_i`` is written ``h_{i_{j,k}}``.

Internally the entries are also viewed as a tensor ``T`` of shape ``(n, n, n)``
indexed ``T[row, sub, col]`` (0-based), i.e. ``h_{i_{j,k}} = T[j-1, i-1, k-1]``.
"""

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError

__all__ = [
    "QuadOp",
    "EnergyReport",
    "apply_quad",
    "energy_residual",
    "is_energy_preserving",
    "energy_report",
    "energy_report_triplets",
    "operators_equivalent",
    "pair_sums",
    "skew_defect",
]

_PERMS = list(itertools.permutations(range(3)))


class QuadOp:
    """Immutable dense quadratic operator ``H in R^{n x n^2}``.

    Parameters
    ----------
    entries : (n, n**2) array_like
        The operator matrix. Copied and frozen.
    """

    __slots__ = ("_entries",)

    def __init__(self, entries):
        H = np.array(entries, dtype=np.float64)
        if H.ndim != 2:
            raise DimensionError(f"QuadOp needs a 2D matrix, got ndim={H.ndim}")
        n = H.shape[0]
        if n == 0:
            raise DimensionError("QuadOp dimension n must be at least 1")
        if H.shape[1] != n * n:
            raise DimensionError(
                f"QuadOp matrix must have shape (n, n^2); got {H.shape}")
        H.setflags(write=False)
        self._entries = H

    @classmethod
    def from_tensor(cls, T):
        """Build from a ``(n, n, n)`` tensor indexed ``[row, sub, col]``."""
        T = np.asarray(T, dtype=np.float64)
        if T.ndim != 3 or not (T.shape[0] == T.shape[1] == T.shape[2]):
            raise DimensionError(f"expected an (n, n, n) tensor, got {T.shape}")
        n = T.shape[0]
        return cls(T.reshape(n, n * n))

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros((n, n * n)))

    @property
    def n(self):
        return self._entries.shape[0]

    @property
    def entries(self):
        """Read-only ``(n, n**2)`` matrix."""
        return self._entries

    @property
    def tensor(self):
        """Read-only ``(n, n, n)`` view indexed ``[row, sub, col]``."""
        n = self.n
        return self._entries.reshape(n, n, n)

    def submatrix(self, i):
        """Return sub-matrix ``H_i`` (1-based ``i``)."""
        if not 1 <= i <= self.n:
            raise IndexError(f"sub-matrix index {i} outside 1..{self.n}")
        return self.tensor[:, i - 1, :]

    def entry(self, i, j, k):
        """Return ``h_{i_{j,k}}`` (1-based indices)."""
        n = self.n
        if not all(1 <= t <= n for t in (i, j, k)):
            raise IndexError(f"index triple {(i, j, k)} outside 1..{n}")
        return float(self._entries[j - 1, (i - 1) * n + (k - 1)])

    def max_abs(self):
        return float(np.max(np.abs(self._entries)))

    def __eq__(self, other):
        if not isinstance(other, QuadOp):
            return NotImplemented
        return self.n == other.n and np.array_equal(self._entries, other._entries)

    def __hash__(self):
        return hash((self.n, self._entries.tobytes()))

    def __repr__(self):
        return f"QuadOp(n={self.n}, max_abs={self.max_abs():.3g})"


def _state(H, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[0] != H.n:
        raise DimensionError(
            f"state has shape {x.shape}, operator expects leading dimension {H.n}")
    return x


def apply_quad(H, x):
    """Evaluate ``H (x kron x)`` sub-matrix by sub-matrix.

    ``x`` may be a single state of shape ``(n,)`` or a batch ``(n, m)`` of
    column states. The Kronecker vector is never formed.
    """
    x = _state(H, x)
    T = H.tensor
    if x.ndim == 1:
        # (T @ x)[j, i] = sum_k h_{i_{j,k}} x_k = (H_i x)_j
        return (T @ x) @ x
    return np.einsum("jik,is,ks->js", T, x, x, optimize=True)


def energy_residual(H, x):
    """Scalar ``x^T H (x kron x)``; zero for all ``x`` iff ``H`` is energy-preserving."""
    x = _state(H, x)
    if x.ndim != 1:
        raise DimensionError("energy_residual takes a single state vector")
    return float(x @ apply_quad(H, x))


@dataclass(frozen=True)
class EnergyReport:
    """Outcome of the six-term energy-preservation test.

    ``worst_triple`` is 1-based and sorted; ``worst_residual`` is the signed
    six-term sum there. ``threshold`` is the absolute bound that was applied.
    """

    ok: bool
    worst_triple: tuple
    worst_residual: float
    threshold: float
    n_conditions: int

    def __bool__(self):
        return self.ok


def _symmetrized(T):
    """Sum of ``T`` over all six index permutations."""
    return sum(np.transpose(T, p) for p in _PERMS)


def _sorted_triples(n):
    idx = np.array(list(itertools.combinations_with_replacement(range(n), 3)),
                   dtype=np.intp)
    return idx.reshape(-1, 3)


def energy_report(H, tol=1e-12):
    """Evaluate the six-term sum
    ``h_{i_{j,k}} + h_{i_{k,j}} + h_{j_{i,k}} + h_{j_{k,i}} + h_{k_{i,j}} + h_{k_{j,i}}``
    on every index multiset ``i <= j <= k``.

    The test passes iff every ``|sum| <= tol * max(1, max|H|)``.
    """
    if tol < 0:
        raise ValueError("tol must be non-negative")
    S = _symmetrized(H.tensor)
    idx = _sorted_triples(H.n)
    sums = S[idx[:, 0], idx[:, 1], idx[:, 2]]
    threshold = tol * max(1.0, H.max_abs())
    w = int(np.argmax(np.abs(sums)))
    return EnergyReport(
        ok=bool(np.abs(sums[w]) <= threshold),
        worst_triple=tuple(int(t) + 1 for t in idx[w]),
        worst_residual=float(sums[w]),
        threshold=threshold,
        n_conditions=len(sums),
    )


def is_energy_preserving(H, tol=1e-12):
    """Return ``(passed, report)`` for the six-term energy-preservation test."""
    report = energy_report(H, tol)
    return report.ok, report


def energy_report_triplets(n, rows, subs, cols, values, tol=1e-12):
    """Six-term energy test for an operator given by its nonzero entries.

    Each entry ``values[t]`` sits at ``h_{subs[t]_{rows[t], cols[t]}}``
    (0-based indices). Suitable for discretized operators too large to hold
    densely; only multisets touched by a nonzero entry are checked, the rest
    are identically zero.
    """
    rows, subs, cols = (np.asarray(a, dtype=np.int64) for a in (rows, subs, cols))
    values = np.asarray(values, dtype=np.float64)
    trip = np.sort(np.stack([rows, subs, cols], axis=1), axis=1)
    # An entry at a slot with multiset {a, a, b} appears twice among the six
    # permutations in the sum, and six times for {a, a, a}.
    n_distinct = 1 + (trip[:, 0] != trip[:, 1]) + (trip[:, 1] != trip[:, 2])
    weight = np.choose(n_distinct - 1, [6.0, 2.0, 1.0])
    keys = (trip[:, 0] * n + trip[:, 1]) * n + trip[:, 2]
    uniq, inverse = np.unique(keys, return_inverse=True)
    sums = np.zeros(len(uniq))
    np.add.at(sums, inverse, weight * values)
    max_abs = float(np.max(np.abs(values))) if len(values) else 0.0
    threshold = tol * max(1.0, max_abs)
    total = n * (n + 1) * (n + 2) // 6
    if len(sums) == 0:
        return EnergyReport(True, (1, 1, 1), 0.0, threshold, total)
    w = int(np.argmax(np.abs(sums)))
    key = int(uniq[w])
    triple = (key // (n * n) + 1, (key // n) % n + 1, key % n + 1)
    return EnergyReport(
        ok=bool(abs(sums[w]) <= threshold),
        worst_triple=triple,
        worst_residual=float(sums[w]),
        threshold=threshold,
        n_conditions=total,
    )


def pair_sums(H):
    """Tensor ``P[j, i, k] = h_{i_{j,k}} + h_{k_{j,i}}``.

    Two operators induce the same quadratic map exactly when their pair sums
    agree.
    """
    T = H.tensor
    return T + np.transpose(T, (0, 2, 1))


def operators_equivalent(H, G, trials=8, tol=1e-10, seed=0):
    """Check ``H (x kron x) == G (x kron x)`` for all ``x``.

    The deterministic test compares pair sums entrywise against
    ``tol * max(1, max|H|, max|G|)``. In addition ``trials`` random unit
    vectors are probed.
    """
    if H.n != G.n:
        raise DimensionError(f"operators have different dimensions {H.n} and {G.n}")
    if trials < 1:
        raise ValueError("trials must be at least 1")
    n = H.n
    scale = max(1.0, H.max_abs(), G.max_abs())
    if np.max(np.abs(pair_sums(H) - pair_sums(G))) > tol * scale:
        return False
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, trials))
    X /= np.linalg.norm(X, axis=0)
    diff = apply_quad(H, X) - apply_quad(G, X)
    # Entrywise pair-sum agreement within tol bounds each probe by this much.
    bound = tol * scale * n * np.sqrt(n)
    return bool(np.all(np.linalg.norm(diff, axis=0) <= bound))


def skew_defect(H):
    """Largest ``|H_i + H_i^T|`` entry over all sub-matrices."""
    T = H.tensor
    return float(np.max(np.abs(T + np.transpose(T, (2, 1, 0)))))
