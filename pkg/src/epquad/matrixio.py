"""Plain-text matrix files.

Format: optional ``#`` comment lines, a header line ``rows cols``, then one
whitespace-separated row per line written with 17 significant digits so that
float64 values round-trip exactly. A matrix with zero columns has no body.
"""

from pathlib import Path

import numpy as np

__all__ = ["write_matrix", "read_matrix", "read_matrix_with_comments"]


def write_matrix(path, M, comments=()):
    """Write a 2D array (1D arrays become a single column)."""
    M = np.asarray(M, dtype=float)
    if M.ndim == 1:
        M = M.reshape(-1, 1)
    if M.ndim != 2:
        raise ValueError("only 1D or 2D arrays can be written")
    lines = [f"# {c}" for c in comments]
    lines.append(f"{M.shape[0]} {M.shape[1]}")
    for row in M if M.shape[1] else ():
        lines.append(" ".join(f"{v:.17g}" for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_matrix_with_comments(path):
    """Read a matrix file, returning ``(array, comments)``."""
    comments = []
    header = None
    rows = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                comments.append(line[1:].strip())
                continue
            if header is None:
                parts = line.split()
                if len(parts) != 2:
                    raise ValueError(f"{path}:{lineno}: expected 'rows cols' header")
                header = (int(parts[0]), int(parts[1]))
                continue
            rows.append([float(v) for v in line.split()])
    if header is None:
        raise ValueError(f"{path}: missing header")
    nrows, ncols = header
    if len(rows) != (nrows if ncols else 0) or any(len(r) != ncols for r in rows):
        raise ValueError(f"{path}: body does not match header {nrows} x {ncols}")
    M = np.array(rows, dtype=float).reshape(nrows, ncols)
    return M, comments


def read_matrix(path):
    return read_matrix_with_comments(path)[0]
