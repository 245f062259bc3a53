"""Equivalent representations of energy-preserving quadratic operators.

Every energy-preserving ``H`` admits an equivalent operator whose sub-matrices
are all skew-symmetric (``to_skew_block``), and also one that is antisymmetric
across sub-matrices row by row, ``h_{i_{k,j}} = -h_{k_{i,j}}``
(``to_row_skew``). Both are built in O(n^3) by an echelon schedule over index
triples: repeated-index entries are fixed directly, and for each distinct
triple ``{a, b, c}`` one entry is free and the other two independent ones
follow from pair sums.
"""

import itertools
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionError, NotEnergyPreservingError
from .quadop import QuadOp, energy_report, pair_sums

__all__ = [
    "FreeEntrySpec",
    "free_entry_count",
    "to_skew_block",
    "to_row_skew",
    "random_energy_preserving",
    "scramble_equivalent",
    "random_skew_block",
    "EP_PRECONDITION_TOL",
]

EP_PRECONDITION_TOL = 1e-9


def free_entry_count(n):
    """Number of freely selectable entries, ``n^3/6 - n^2/2 + n/3``."""
    if n < 1:
        raise ValueError("n must be at least 1")
    # n(n-1)(n-2)/6 in exact integer arithmetic
    return n * (n - 1) * (n - 2) // 6


@dataclass(frozen=True)
class FreeEntrySpec:
    """Values for free entries ``h~_{i_{j,k}}`` with distinct ``i, j, k``.

    ``assignments`` maps 1-based ``(i, j, k)`` to a value; at most one triple
    per unordered index set. Triples not listed default to zero on the
    canonical slot (see ``to_skew_block``).
    """

    assignments: dict = field(default_factory=dict)

    def __post_init__(self):
        seen = {}
        clean = {}
        for triple, value in dict(self.assignments).items():
            if len(triple) != 3:
                raise ValueError(f"free entry {triple!r} is not an index triple")
            i, j, k = (int(t) for t in triple)
            if len({i, j, k}) != 3:
                raise ValueError(
                    f"free entry {(i, j, k)} must have pairwise distinct indices")
            if min(i, j, k) < 1:
                raise ValueError(f"free entry {(i, j, k)} uses a non-positive index")
            key = frozenset((i, j, k))
            if key in seen:
                raise ValueError(
                    f"free entries {seen[key]} and {(i, j, k)} share the index set "
                    f"{sorted(key)}")
            seen[key] = (i, j, k)
            clean[(i, j, k)] = float(value)
        object.__setattr__(self, "assignments", clean)

    def validate(self, n):
        for triple in self.assignments:
            if max(triple) > n:
                raise ValueError(f"free entry {triple} exceeds dimension n={n}")

    @classmethod
    def from_file(cls, path):
        """Parse lines ``i j k value``; ``#`` starts a comment."""
        assignments = {}
        for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = re.split(r"\s+", line)
            if len(parts) != 4:
                raise ValueError(f"{path}:{lineno}: expected 'i j k value'")
            triple = tuple(int(p) for p in parts[:3])
            if triple in assignments:
                raise ValueError(f"{path}:{lineno}: duplicate entry {triple}")
            assignments[triple] = float(parts[3])
        return cls(assignments)

    def to_file(self, path):
        lines = [f"{i} {j} {k} {v:.17g}" for (i, j, k), v in self.assignments.items()]
        Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def _check_ep(H, tol):
    report = energy_report(H, tol)
    if not report.ok:
        raise NotEnergyPreservingError(report.worst_triple, report.worst_residual, tol)


def _distinct_triples(n):
    t = np.array(list(itertools.combinations(range(n), 3)), dtype=np.intp)
    return t.reshape(-1, 3)


def _resolve_triples(P, seeds, trip, seed_index):
    """Solve the three-unknown, two-equation system of every distinct triple.

    For ``a < b < c`` write the three independent unknowns as ``(u_a, u_b, u_c)``
    with row equations ``u_b + u_c = P[a, b, c]`` and ``u_a - u_c = P[b, a, c]``
    (the third is implied by energy preservation). ``seeds[t]`` fixes the
    unknown ``seed_index[t]`` of triple ``t``.
    """
    a, b, c = trip[:, 0], trip[:, 1], trip[:, 2]
    p_abc = P[a, b, c]
    p_bac = P[b, a, c]
    u = np.empty((len(trip), 3))
    # seed on u_b
    m = seed_index == 1
    u[m, 1] = seeds[m]
    u[m, 2] = p_abc[m] - u[m, 1]
    u[m, 0] = p_bac[m] + u[m, 2]
    # seed on u_c
    m = seed_index == 2
    u[m, 2] = seeds[m]
    u[m, 1] = p_abc[m] - u[m, 2]
    u[m, 0] = p_bac[m] + u[m, 2]
    # seed on u_a
    m = seed_index == 0
    u[m, 0] = seeds[m]
    u[m, 2] = u[m, 0] - p_bac[m]
    u[m, 1] = p_abc[m] - u[m, 2]
    return u


def to_skew_block(H, free=None, tol=EP_PRECONDITION_TOL):
    """Equivalent operator with skew-symmetric sub-matrices.

    Steps: zero every sub-matrix diagonal; copy ``h~_{i_{k,i}} = h_{i_{k,i}}``
    and set ``h~_{k_{k,i}} = -h_{k_{i,k}}`` for ``k != i`` (these are the
    non-repeated ``x_i^2`` terms and their mirrors); then for every distinct
    triple seed one entry from ``free`` (default 0 on ``h~_{b_{c,a}}`` for
    ``a < b < c``) and complete the triple with
    ``h~_{i_{k,j}} = h_{i_{k,j}} + h_{j_{k,i}} - h~_{j_{k,i}}`` and
    skew-symmetry.

    Parameters
    ----------
    H : QuadOp
        Energy-preserving operator (checked at relative tolerance ``tol``).
    free : FreeEntrySpec, optional
        Values of free entries, 1-based ``(i, j, k)`` meaning ``h~_{i_{j,k}}``.

    Raises
    ------
    NotEnergyPreservingError
        If ``H`` fails the six-term test.
    """
    free = FreeEntrySpec() if free is None else free
    n = H.n
    free.validate(n)
    _check_ep(H, tol)
    T = H.tensor
    P = pair_sums(H)
    Tt = np.zeros((n, n, n))

    # Repeated-index entries: T~[k, i, i] = T[k, i, i] and mirror T~[i, i, k].
    off = ~np.eye(n, dtype=bool)
    k_idx, i_idx = np.nonzero(off)
    Tt[k_idx, i_idx, i_idx] = T[k_idx, i_idx, i_idx]
    Tt[i_idx, i_idx, k_idx] = -T[k_idx, i_idx, i_idx]

    trip = _distinct_triples(n)
    if len(trip):
        # Unknowns for a < b < c:  u_a = T~[b, a, c], u_b = T~[a, b, c],
        # u_c = T~[a, c, b]; skew partners carry the opposite sign.
        seeds = np.zeros(len(trip))
        seed_index = np.ones(len(trip), dtype=np.intp)  # default slot T~[c, b, a]
        lookup = {tuple(t): r for r, t in enumerate(trip.tolist())}
        for (i, j, k), value in free.assignments.items():
            row, sub, col = j - 1, i - 1, k - 1
            a, b, c = sorted((row, sub, col))
            r = lookup[(a, b, c)]
            # Slot (row, sub, col) holds +u_sub when (row, col) is in the
            # canonical orientation of the unknown, -u_sub otherwise.
            canonical = {a: (b, c), b: (a, c), c: (a, b)}[sub]
            sign = 1.0 if (row, col) == canonical else -1.0
            seeds[r] = sign * value
            seed_index[r] = (a, b, c).index(sub)
        u = _resolve_triples(P, seeds, trip, seed_index)
        a, b, c = trip[:, 0], trip[:, 1], trip[:, 2]
        Tt[b, a, c] = u[:, 0]
        Tt[c, a, b] = -u[:, 0]
        Tt[a, b, c] = u[:, 1]
        Tt[c, b, a] = -u[:, 1]
        Tt[a, c, b] = u[:, 2]
        Tt[b, c, a] = -u[:, 2]
        # Free values land exactly, not through a double negation.
        for (i, j, k), value in free.assignments.items():
            Tt[j - 1, i - 1, k - 1] = value
    return QuadOp.from_tensor(Tt)


def to_row_skew(H, tol=EP_PRECONDITION_TOL):
    """Equivalent operator with ``h~_{i_{k,j}} = -h~_{k_{i,j}}`` for all indices.

    Entries ``h_{i_{j,i}}`` (the ``x_i^2`` terms) are carried over unchanged.
    For each distinct triple ``a < b < c`` the entry ``h~_{c_{a,b}}`` is set
    to zero and the rest follow from pair sums.
    """
    n = H.n
    _check_ep(H, tol)
    T = H.tensor
    P = pair_sums(H)
    Tt = np.zeros((n, n, n))

    off = ~np.eye(n, dtype=bool)
    j_idx, i_idx = np.nonzero(off)
    Tt[j_idx, i_idx, i_idx] = T[j_idx, i_idx, i_idx]
    Tt[i_idx, j_idx, i_idx] = -T[j_idx, i_idx, i_idx]

    trip = _distinct_triples(n)
    if len(trip):
        # Antisymmetry in (row, sub) pairs slots by column:
        #   v_c = T~[a, b, c] = -T~[b, a, c]
        #   v_b = T~[a, c, b] = -T~[c, a, b]
        #   v_a = T~[b, c, a] = -T~[c, b, a]
        # Row a: v_b + v_c = P[a, b, c];  row b: v_a - v_c = P[b, a, c],
        # the same system as in the skew-block case.
        seeds = np.zeros(len(trip))
        seed_index = np.ones(len(trip), dtype=np.intp)  # v_b = 0
        v_a, v_b, v_c = _resolve_triples(P, seeds, trip, seed_index).T
        a, b, c = trip[:, 0], trip[:, 1], trip[:, 2]
        Tt[a, b, c] = v_c
        Tt[b, a, c] = -v_c
        Tt[a, c, b] = v_b
        Tt[c, a, b] = -v_b
        Tt[b, c, a] = v_a
        Tt[c, b, a] = -v_a
    return QuadOp.from_tensor(Tt)


def random_skew_block(n, seed):
    """Operator with i.i.d. standard normal skew-symmetric sub-matrices."""
    if n < 1:
        raise DimensionError("n must be at least 1")
    rng = np.random.default_rng(seed)
    T = np.zeros((n, n, n))
    rows, cols = np.triu_indices(n, k=1)
    for i in range(n):
        vals = rng.standard_normal(len(rows))
        T[rows, i, cols] = vals
        T[cols, i, rows] = -vals
    return QuadOp.from_tensor(T)


def random_energy_preserving(n, seed):
    """Energy-preserving operator that is generically not skew-block.

    Starts from ``random_skew_block(n, seed)`` and, for every row ``j`` and
    column pair ``i != k``, redistributes ``h_{i_{j,k}} + h_{k_{j,i}}`` between
    the two slots by a random split. Pair sums, hence the quadratic map and
    energy preservation, are unchanged.
    """
    if n < 1:
        raise DimensionError("n must be at least 1")
    base = random_skew_block(n, seed)
    rng = np.random.default_rng([seed, n, 1])
    T = np.array(base.tensor)
    i_idx, k_idx = np.triu_indices(n, k=1)
    for j in range(n):
        total = T[j, i_idx, k_idx] + T[j, k_idx, i_idx]
        part = rng.standard_normal(len(i_idx))
        T[j, i_idx, k_idx] = part
        T[j, k_idx, i_idx] = total - part
    return QuadOp.from_tensor(T)


scramble_equivalent = random_energy_preserving
