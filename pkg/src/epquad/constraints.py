"""Vectorized constraint matrices on ``vec(H)`` and a direct-solve oracle.

``vec(H)`` is the column-major vectorization of the ``n x n^2`` matrix, so the
entry ``h_{i_{j,k}}`` sits at position ``((i-1) n + (k-1)) n + (j-1)`` and the
row functional ``e_j^T H (e_i kron e_k)`` equals ``(e_i kron e_k kron e_j)^T vec(H)``.

Three families of rows are assembled, all dense and meant for small ``n``:

* ``A``: pair sums ``e_k^T H (e_i kron e_j + e_j kron e_i)`` for every row
  ``k`` and unordered pair ``(i, j)``, except ``i = j = k``.
* ``B``: the six-term energy sums for every index multiset that is not
  ``{i, i, i}``.
* ``C``: skew-symmetry of every sub-matrix, ``h_{k_{i,j}} + h_{k_{j,i}} = 0``.
"""

import itertools
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import InternalConsistencyError, NotEnergyPreservingError
from .quadop import QuadOp, is_energy_preserving

__all__ = [
    "ConstraintSystem",
    "MAX_N",
    "RANK_RTOL",
    "vec",
    "unvec",
    "vec_index",
    "build_system",
    "extract_A1",
    "solve_equivalent",
    "count_independent_constraints",
    "numerical_rank",
    "algorithm_system",
    "expected_counts",
]

MAX_N = 12
RANK_RTOL = 1e-10


def vec_index(n, i, j, k):
    """Position of ``h_{i_{j,k}}`` in ``vec(H)`` (0-based ``i, j, k``)."""
    return (i * n + k) * n + j


def vec(H):
    """Column-major vectorization of ``H.entries``."""
    return np.asarray(H.entries).ravel(order="F").copy()


def unvec(v, n):
    return QuadOp(np.asarray(v, dtype=float).reshape((n, n * n), order="F"))


def numerical_rank(M, rtol=RANK_RTOL):
    """Count singular values above ``rtol * sigma_max``."""
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    if s[0] == 0:
        return 0
    return int(np.sum(s > rtol * s[0]))


@dataclass(frozen=True)
class ConstraintSystem:
    n: int
    A_mat: np.ndarray
    B_mat: np.ndarray
    C_mat: np.ndarray
    A_rows: tuple  # (k, i, j) per row of A_mat, 0-based, i <= j
    B_rows: tuple  # sorted multiset per row of B_mat
    C_rows: tuple  # (k, i, j) per row of C_mat


def _pair_row(n, k, i, j):
    """Row for ``e_k^T H (e_i kron e_j + e_j kron e_i)``."""
    row = np.zeros(n ** 3)
    row[vec_index(n, i, k, j)] += 1.0
    row[vec_index(n, j, k, i)] += 1.0
    return row


def build_system(n):
    """Assemble ``A``, ``B`` and ``C`` for dimension ``n`` (1 <= n <= 12).

    Rows are ordered with the outer index ``k`` first and the unordered pair
    ``(i, j)`` lexicographic inside.
    """
    if not 1 <= n <= MAX_N:
        raise ValueError(f"n must lie in 1..{MAX_N}, got {n}")
    pairs = [(i, j) for i in range(n) for j in range(i, n)]

    A_rows = [(k, i, j) for k in range(n) for i, j in pairs if not (i == j == k)]
    A_mat = np.array([_pair_row(n, k, i, j) for k, i, j in A_rows]).reshape(-1, n ** 3)

    B_rows = [t for t in itertools.combinations_with_replacement(range(n), 3)
              if not (t[0] == t[1] == t[2])]
    B_list = []
    for i, j, k in B_rows:
        B_list.append(_pair_row(n, k, i, j) + _pair_row(n, j, i, k) + _pair_row(n, i, j, k))
    B_mat = np.array(B_list).reshape(-1, n ** 3)

    # e_k^T kron (e_i kron e_j + e_j kron e_i): sub-matrix k, entries (i, j), (j, i).
    C_rows = [(k, i, j) for k in range(n) for i, j in pairs]
    C_list = []
    for k, i, j in C_rows:
        row = np.zeros(n ** 3)
        row[vec_index(n, k, i, j)] += 1.0
        row[vec_index(n, k, j, i)] += 1.0
        C_list.append(row)
    C_mat = np.array(C_list).reshape(-1, n ** 3)

    return ConstraintSystem(n, A_mat, B_mat, C_mat,
                            tuple(A_rows), tuple(B_rows), tuple(C_rows))


def _orthonormal_basis(M, rtol=RANK_RTOL):
    if M.shape[0] == 0:
        return np.zeros((0, M.shape[1]))
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    keep = s > rtol * s[0] if s.size and s[0] > 0 else np.zeros(0, dtype=bool)
    return Vt[keep]


def extract_A1(system, rtol=RANK_RTOL):
    """Greedy row subset ``A1`` of ``A`` completing ``B`` to a basis of row-space(A).

    Rows of ``A`` are visited in canonical order and kept when they are not in
    the span of ``B`` and the rows already kept.
    """
    n = system.n
    Q = _orthonormal_basis(system.B_mat, rtol)
    basis = list(Q)
    keep = []
    for r, row in enumerate(system.A_mat):
        resid = row.copy()
        for _ in range(2):  # re-orthogonalize once for stability
            for q in basis:
                resid -= (q @ resid) * q
        norm = np.linalg.norm(resid)
        if norm > 1e-8 * np.linalg.norm(row):
            basis.append(resid / norm)
            keep.append(r)
    expected = n * (n + 1) * (n - 1) // 3
    if len(keep) != expected:
        raise InternalConsistencyError(
            f"A1 has {len(keep)} rows at n={n}, expected n(n+1)(n-1)/3 = {expected}")
    return system.A_mat[keep]


def solve_equivalent(H, tol=1e-9):
    """Minimum-norm skew-block ``H~`` with ``A1 vec(H~) = A1 vec(H)``, ``C vec(H~) = 0``.

    Solved with a column-pivoted complete orthogonal factorization (LAPACK
    ``gelsy``). Independent of the triple-by-triple schedule in ``skewrep``.
    """
    ok, report = is_energy_preserving(H, tol)
    if not ok:
        raise NotEnergyPreservingError(report.worst_triple, report.worst_residual, tol)
    n = H.n
    system = build_system(n)
    A1 = extract_A1(system)
    M = np.vstack([A1, system.C_mat])
    h = vec(H)
    rhs = np.concatenate([A1 @ h, np.zeros(system.C_mat.shape[0])])
    sol, *_ = sla.lstsq(M, rhs, lapack_driver="gelsy")
    resid = np.linalg.norm(M @ sol - rhs)
    if resid > 1e-8 * max(1.0, np.linalg.norm(h)):
        raise InternalConsistencyError(
            f"constraint system residual {resid:.3e} exceeds 1e-8 |H|")
    return unvec(sol, n)


def algorithm_system(n):
    """Rows of the echelon system used by the constructive transformation.

    Unit rows for ``h~_{i_{k,i}}`` and ``h~_{k_{k,i}}`` (``k > i``), two pair-sum
    rows per distinct triple (rows ``a`` and ``b`` of ``a < b < c``), and all
    skew-symmetry rows ``C``.
    """
    if not 1 <= n <= MAX_N:
        raise ValueError(f"n must lie in 1..{MAX_N}, got {n}")
    rows = []
    for i in range(n):
        for k in range(i + 1, n):
            r = np.zeros(n ** 3)
            r[vec_index(n, i, k, i)] = 1.0
            rows.append(r)
            r = np.zeros(n ** 3)
            r[vec_index(n, k, k, i)] = 1.0
            rows.append(r)
    for a, b, c in itertools.combinations(range(n), 3):
        rows.append(_pair_row(n, a, b, c))
        rows.append(_pair_row(n, b, a, c))
    M = np.array(rows).reshape(-1, n ** 3)
    return np.vstack([M, build_system(n).C_mat])


def expected_counts(n):
    """Closed-form counts, all exact integers."""
    return {
        "A_rows": n * n * (n + 1) // 2 - n,
        "B_rows": n * (n - 1) + n * (n - 1) * (n - 2) // 6,
        "C_rows": n * n * (n + 1) // 2,
        "A1_rows": n * (n + 1) * (n - 1) // 3,
        "A1C_rank": n * n * (n + 1) // 2 + n * (n + 1) * (n - 1) // 3,
        # 5n^3/6 + n^2/2 - n/3, written over a common denominator
        "independent": (5 * n ** 3 + 3 * n ** 2 - 2 * n) // 6,
        "nullity": n * (n - 1) * (n - 2) // 6,
    }


def count_independent_constraints(n, verify=True):
    """Return ``5n^3/6 + n^2/2 - n/3``.

    For ``n <= 8`` with ``verify`` set, the count is checked against the
    numerical rank of ``algorithm_system(n)``.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    count = expected_counts(n)["independent"]
    if verify and n <= 8:
        rank = numerical_rank(algorithm_system(n))
        if rank != count:
            raise InternalConsistencyError(
                f"assembled system has rank {rank} at n={n}, expected {count}")
    return count
