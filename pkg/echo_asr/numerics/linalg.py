"""
Dense / sparse primitives and spectral-radius estimation.

DenseMatrix - обычный np.ndarray float64 (row-major).
SparseMatrix - неизменяемая COO-запись в каноническом порядке (row, col),
поверх неё строится CSR из scipy для умножений.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Tuple

import numpy as np
from scipy import sparse

from echo_asr.errors import InvalidConfigError, NonConvergenceError, ShapeError
from echo_asr.numerics.prng import Prng

DenseMatrix = np.ndarray


def as_dense(values: Iterable[float] | np.ndarray, rows: int, cols: int) -> DenseMatrix:
    arr = np.asarray(values, dtype=np.float64)
    if arr.size != rows * cols:
        raise ShapeError("values length must equal rows * cols", rows=rows, cols=cols, size=int(arr.size))
    arr = arr.reshape(rows, cols)
    if not np.all(np.isfinite(arr)):
        raise ShapeError("dense matrix entries must be finite")
    return arr


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    rows: int
    cols: int
    row_idx: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray
    _csr: sparse.csr_matrix = field(init=False, repr=False)
    _csr_t: sparse.csr_matrix = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.rows <= 0 or self.cols <= 0:
            raise ShapeError("sparse matrix dims must be positive", rows=self.rows, cols=self.cols)
        n = len(self.values)
        if len(self.row_idx) != n or len(self.col_idx) != n:
            raise ShapeError("entry arrays must have equal length")
        if n:
            if self.row_idx.min() < 0 or self.row_idx.max() >= self.rows:
                raise ShapeError("row index out of bounds")
            if self.col_idx.min() < 0 or self.col_idx.max() >= self.cols:
                raise ShapeError("col index out of bounds")
            flat = self.row_idx * self.cols + self.col_idx
            if np.any(np.diff(flat) <= 0):
                raise ShapeError("entries must be in canonical (row, col) order without duplicates")
        for a in (self.row_idx, self.col_idx, self.values):
            a.setflags(write=False)
        csr = sparse.csr_matrix((self.values, (self.row_idx, self.col_idx)), shape=(self.rows, self.cols))
        csr.sort_indices()
        object.__setattr__(self, "_csr", csr)
        object.__setattr__(self, "_csr_t", csr.T.tocsr())

    # ---------------------------
    # Constructors
    # ---------------------------
    @classmethod
    def from_entries(cls, rows: int, cols: int, entries: Iterable[Tuple[int, int, float]]) -> "SparseMatrix":
        items = sorted((int(r), int(c), float(v)) for r, c, v in entries)
        return cls(
            rows=rows,
            cols=cols,
            row_idx=np.array([e[0] for e in items], dtype=np.int64),
            col_idx=np.array([e[1] for e in items], dtype=np.int64),
            values=np.array([e[2] for e in items], dtype=np.float64),
        )

    @classmethod
    def from_dense(cls, m: np.ndarray) -> "SparseMatrix":
        r, c = np.nonzero(m)
        return cls(rows=m.shape[0], cols=m.shape[1], row_idx=r.astype(np.int64),
                   col_idx=c.astype(np.int64), values=m[r, c].astype(np.float64))

    @classmethod
    def identity(cls, n: int) -> "SparseMatrix":
        idx = np.arange(n, dtype=np.int64)
        return cls(rows=n, cols=n, row_idx=idx, col_idx=idx.copy(), values=np.ones(n))

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "SparseMatrix":
        empty = np.zeros(0, dtype=np.int64)
        return cls(rows=rows, cols=cols, row_idx=empty, col_idx=empty.copy(), values=np.zeros(0))

    # ---------------------------
    # Views
    # ---------------------------
    @property
    def shape(self) -> Tuple[int, int]:
        return self.rows, self.cols

    @property
    def nnz(self) -> int:
        return int(len(self.values))

    @property
    def csr(self) -> sparse.csr_matrix:
        return self._csr

    def entries(self) -> List[Tuple[int, int, float]]:
        return list(zip(self.row_idx.tolist(), self.col_idx.tolist(), self.values.tolist()))

    def to_dense(self) -> DenseMatrix:
        return self._csr.toarray()

    def scaled(self, c: float) -> "SparseMatrix":
        return SparseMatrix(self.rows, self.cols, self.row_idx.copy(), self.col_idx.copy(), self.values * c)

    # ---------------------------
    # Products
    # ---------------------------
    def matvec(self, v: np.ndarray) -> np.ndarray:
        return self._csr @ v

    def rmatvec(self, v: np.ndarray) -> np.ndarray:
        """mᵀ v."""
        return self._csr_t @ v

    def matmat(self, m: np.ndarray) -> np.ndarray:
        return self._csr @ m

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SparseMatrix):
            return NotImplemented
        return (
            self.shape == other.shape
            and np.array_equal(self.row_idx, other.row_idx)
            and np.array_equal(self.col_idx, other.col_idx)
            and np.array_equal(self.values.view(np.uint64), other.values.view(np.uint64))
        )

    __hash__ = None  # type: ignore[assignment]


def sparse_matvec(m: SparseMatrix, v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] != m.cols:
        raise ShapeError("vector length must equal matrix cols", cols=m.cols, got=list(v.shape))
    return m.matvec(v)


# =============================================================================
# Spectral radius
# =============================================================================

def _block_power_run(
    m: SparseMatrix, q: np.ndarray, max_iters: int, tol: float
) -> Tuple[bool, float, float]:
    """
    Power iteration на блоке из p векторов + Rayleigh-Ritz.
    Блок нужен, потому что у вещественной матрицы доминирующей может быть
    комплексно-сопряжённая пара, и одиночный вектор тогда не сходится.

    Returns (converged, estimate, last_delta).
    """
    q, _ = np.linalg.qr(q)
    prev: Optional[float] = None
    delta = float("inf")
    est = 0.0
    for _ in range(max_iters):
        z = m.matmat(q)
        h = q.T @ z
        est = float(np.max(np.abs(np.linalg.eigvals(h))))
        if prev is not None:
            delta = abs(est - prev)
            if delta <= tol * max(est, 1e-300):
                return True, est, delta
        prev = est
        q, _ = np.linalg.qr(z)
    return False, est, delta


def estimate_spectral_radius(
    m: SparseMatrix,
    max_iters: int,
    tol: float,
    *,
    seed: int = 0,
    restarts: int = 3,
    block: int = 4,
) -> float:
    """
    ρ(m) = max |eigenvalue|.

    Сходимость: относительная разница соседних оценок < tol.
    Если ни один из restarts не сошёлся - NonConvergenceError с лучшей оценкой.
    """
    if m.rows != m.cols:
        raise ShapeError("spectral radius needs a square matrix", rows=m.rows, cols=m.cols)
    if max_iters < 1:
        raise InvalidConfigError("max_iters must be >= 1", max_iters=max_iters)

    n = m.rows
    p = min(block, n)
    base = Prng(seed)

    converged: List[float] = []
    best_est, best_delta = 0.0, float("inf")
    for r in range(restarts):
        rng = base.split(f"restart/{r}")
        q0 = rng.uniform_array(n * p, -1.0, 1.0).reshape(n, p)
        ok, est, delta = _block_power_run(m, q0, max_iters, tol)
        if ok:
            converged.append(est)
        elif delta < best_delta:
            best_est, best_delta = est, delta

    if not converged:
        raise NonConvergenceError(
            "spectral radius power iteration did not converge",
            best_estimate=best_est,
            max_iters=max_iters,
            restarts=restarts,
        )
    return max(converged)
