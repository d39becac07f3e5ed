"""Dense/sparse matrix carriers and the few products everything else composes.

Dense matrices are plain 2-D numpy arrays, float32 by default with a float64
path reserved for gradient checking. Sparse matrices are scipy CSR kept in
canonical form: sorted column indices, summed duplicates, no stored zeros.
Diagonal matrices are 1-D arrays of their entries. All functions are pure and
never mutate their operands.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

DEFAULT_DTYPE = np.dtype(np.float32)
_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class ShapeError(ValueError):
    """Operand dimensions do not line up."""


def _resolve_dtype(data, dtype) -> np.dtype:
    if dtype is not None:
        return np.dtype(dtype)
    got = getattr(data, "dtype", None)
    if got is not None and np.dtype(got) in _FLOAT_DTYPES:
        return np.dtype(got)
    return DEFAULT_DTYPE


def dense(data, dtype=None) -> np.ndarray:
    """Validated 2-D array copy (finite entries, float32 unless told otherwise)."""
    arr = np.array(data, dtype=_resolve_dtype(data, dtype))
    if arr.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got ndim={arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("dense matrix has non-finite entries")
    return arr


def csr(matrix, dtype=None) -> sp.csr_matrix:
    """Canonical CSR copy: sorted indices, duplicates summed, zeros pruned."""
    out = sp.csr_matrix(matrix, dtype=_resolve_dtype(matrix, dtype), copy=True)
    out.sum_duplicates()
    out.sort_indices()
    out.eliminate_zeros()
    if out.nnz and not np.all(np.isfinite(out.data)):
        raise ValueError("sparse matrix has non-finite entries")
    return out


def csr_from_coo(rows, cols, values, shape, dtype=None) -> sp.csr_matrix:
    values = np.asarray(values)
    coo = sp.coo_matrix((values, (rows, cols)), shape=shape)
    return csr(coo, dtype=_resolve_dtype(values, dtype))


def identity_csr(n: int, dtype=DEFAULT_DTYPE) -> sp.csr_matrix:
    return sp.identity(n, dtype=np.dtype(dtype), format="csr")


def empty_csr(rows: int, cols: int, dtype=DEFAULT_DTYPE) -> sp.csr_matrix:
    return sp.csr_matrix((rows, cols), dtype=np.dtype(dtype))


def expanded_rows(a: sp.csr_matrix) -> np.ndarray:
    """Row index of every stored entry, in data order."""
    return np.repeat(np.arange(a.shape[0]), np.diff(a.indptr))


def column_sums(a: sp.csr_matrix) -> np.ndarray:
    out = np.bincount(a.indices, weights=a.data, minlength=a.shape[1])
    return out.astype(a.dtype, copy=False)


def row_sums(a: sp.csr_matrix) -> np.ndarray:
    out = np.bincount(expanded_rows(a), weights=a.data, minlength=a.shape[0])
    return out.astype(a.dtype, copy=False)


def spmm(a: sp.csr_matrix, b: np.ndarray) -> np.ndarray:
    """Sparse @ dense product."""
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"spmm: inner dimensions {a.shape[1]} and {b.shape[0]} differ")
    return np.asarray(a @ b)


def sp_transpose(a: sp.csr_matrix) -> sp.csr_matrix:
    return csr(a.T, dtype=a.dtype)


def sp_coarsen(s: sp.csr_matrix, a: sp.csr_matrix) -> sp.csr_matrix:
    """Sᵀ·A·S for an assignment matrix S (N×G) and square A (N×N)."""
    if a.shape[0] != a.shape[1]:
        raise ShapeError(f"sp_coarsen: adjacency must be square, got {a.shape}")
    if s.shape[0] != a.shape[0]:
        raise ShapeError(
            f"sp_coarsen: assignment rows {s.shape[0]} != adjacency size {a.shape[0]}"
        )
    return csr(s.T @ (a @ s), dtype=np.result_type(s.dtype, a.dtype))


def _check_nonnegative(a: sp.csr_matrix, op: str) -> None:
    if a.nnz and float(a.data.min()) < 0.0:
        raise ValueError(f"{op}: negative entries not allowed")


def col_normalize(s: sp.csr_matrix) -> sp.csr_matrix:
    """Divide each column with positive sum by that sum; zero columns stay zero."""
    _check_nonnegative(s, "col_normalize")
    sums = column_sums(s)
    scale = np.where(sums > 0, sums, s.dtype.type(1))
    out = s.copy()
    out.data = out.data / scale[out.indices]
    return csr(out, dtype=s.dtype)


def row_normalize(s: sp.csr_matrix) -> sp.csr_matrix:
    """Divide each row with positive sum by that sum; zero rows stay zero."""
    _check_nonnegative(s, "row_normalize")
    sums = row_sums(s)
    scale = np.where(sums > 0, sums, s.dtype.type(1))
    out = s.copy()
    out.data = out.data / scale[expanded_rows(s)]
    return csr(out, dtype=s.dtype)
