"""Structured linear operators, their shifted resolvents and the AMF product.

Every operator ``L`` here knows how to apply itself to a vector (or a stack of
column vectors) and how to factorize the shifted matrix ``I - c L`` for a
scalar ``c = h * gamma``.  The factorizations exploit structure:

* :class:`Tridiagonal` uses non-pivoting banded (Thomas) elimination,
* :class:`Kronecker` (``I_outer (x) D (x) I_inner``) reuses a single
  factorization of the small factor ``D`` for all of its blocks,
* :class:`PointwiseBlocks` solves each small dense block on its own,
* :class:`GeneralSparse` and :class:`SumOperator` fall back to a sparse
  direct LU.

:class:`AmfResolvent` replaces ``I - c (L_1 + ... + L_R)`` with the product
``(I - c L_1) ... (I - c L_R)`` and offers the simplified Newton refinement
that measures residuals against the exact sum.
"""

from __future__ import annotations

import contextlib
from collections import Counter
from typing import Iterator, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "SingularFactorError",
    "NotDiagonallyDominantError",
    "StructuredOperator",
    "Tridiagonal",
    "Kronecker",
    "kron_left",
    "kron_right",
    "PointwiseBlocks",
    "GeneralSparse",
    "SumOperator",
    "Resolvent",
    "AmfResolvent",
    "apply",
    "solve_resolvent",
    "solve_amf",
    "refine",
    "count_factorizations",
]

# a pivot below PIVOT_RTOL * ||I - cL||_inf counts as singular
PIVOT_RTOL = 1e-14

_active_counters: list[Counter] = []


@contextlib.contextmanager
def count_factorizations() -> Iterator[Counter]:
    """Record every factorization performed inside the block, keyed by kind.

    >>> with count_factorizations() as counts:
    ...     _ = Tridiagonal.stencil(4).factorize(0.1)
    >>> counts["tridiagonal"]
    1
    """
    counts: Counter = Counter()
    _active_counters.append(counts)
    try:
        yield counts
    finally:
        _active_counters.remove(counts)


class SingularFactorError(np.linalg.LinAlgError):
    """Raised when a shifted matrix ``I - c L`` is (numerically) singular.

    ``index`` names the AMF factor that failed, when known.
    """

    def __init__(self, message: str, index: int | None = None):
        if index is not None:
            message = f"factor {index}: {message}"
        super().__init__(message)
        self.index = index


class NotDiagonallyDominantError(ValueError):
    """Raised when a tridiagonal resolvent would need pivoting."""


def _check_vector(x: np.ndarray, dim: int) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim not in (1, 2) or x.shape[0] != dim:
        raise ValueError(f"expected leading dimension {dim}, got shape {x.shape}")
    return x


class StructuredOperator:
    """Base class for a square linear operator ``scale * B`` of dimension ``dim``."""

    kind = "abstract"

    def __init__(self, dim: int, scale: float = 1.0):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = int(dim)
        self.scale = float(scale)

    # subclasses implement _matvec/_factorize/_tosparse without the scale
    def _matvec(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _factorize(self, c: float):
        raise NotImplementedError

    def _tosparse(self) -> sp.csr_matrix:
        raise NotImplementedError

    def matvec(self, x: np.ndarray) -> np.ndarray:
        """Apply the operator to ``x`` of shape ``(dim,)`` or ``(dim, k)``."""
        x = _check_vector(x, self.dim)
        if self.scale == 0.0:
            return np.zeros_like(x, dtype=np.result_type(x, float))
        y = self._matvec(x)
        return y if self.scale == 1.0 else self.scale * y

    def __matmul__(self, x):
        return self.matvec(x)

    def factorize(self, c: float):
        """Factorize ``I - c * self``; the result has a ``solve(rhs)`` method."""
        for counts in _active_counters:
            counts[self.kind] += 1
        return self._factorize(float(c) * self.scale)

    def tosparse(self) -> sp.csr_matrix:
        return (self.scale * self._tosparse()).tocsr()

    def toarray(self) -> np.ndarray:
        return self.tosparse().toarray()

    def scaled(self, alpha: float) -> "StructuredOperator":
        """Return a copy whose action is multiplied by ``alpha``."""
        new = object.__new__(type(self))
        new.__dict__.update(self.__dict__)
        new.scale = self.scale * float(alpha)
        return new

    def __repr__(self):
        return f"{type(self).__name__}(dim={self.dim}, scale={self.scale:g})"


# ---------------------------------------------------------------- tridiagonal


class ThomasFactor:
    """Non-pivoting LU of a tridiagonal matrix, reusable for many right-hand sides."""

    def __init__(self, lower: np.ndarray, diag: np.ndarray, upper: np.ndarray):
        n = diag.size
        row_abs = np.abs(diag).copy()
        row_abs[1:] += np.abs(lower)
        row_abs[:-1] += np.abs(upper)
        norm = row_abs.max()
        offdiag = row_abs - np.abs(diag)
        if np.any(np.abs(diag) < offdiag * (1.0 - 1e-12)):
            raise NotDiagonallyDominantError(
                "tridiagonal resolvent is not diagonally dominant; "
                "non-pivoting elimination is unsafe"
            )
        mult = np.zeros(n)
        pivots = np.empty(n)
        pivots[0] = diag[0]
        for i in range(1, n):
            mult[i] = lower[i - 1] / pivots[i - 1]
            pivots[i] = diag[i] - mult[i] * upper[i - 1]
        if norm == 0.0 or np.any(np.abs(pivots) <= PIVOT_RTOL * norm):
            raise SingularFactorError("tridiagonal pivot below tolerance")
        self.n = n
        self.mult = mult
        self.pivots = pivots
        self.upper = upper

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        y = np.array(rhs, dtype=np.result_type(rhs, float), copy=True)
        mult, piv, up = self.mult, self.pivots, self.upper
        for i in range(1, self.n):
            y[i] -= mult[i] * y[i - 1]
        y[-1] /= piv[-1]
        for i in range(self.n - 2, -1, -1):
            y[i] = (y[i] - up[i] * y[i + 1]) / piv[i]
        return y


class Tridiagonal(StructuredOperator):
    """Tridiagonal operator from its sub-, main and super-diagonals."""

    kind = "tridiagonal"

    def __init__(self, lower, main, upper, scale: float = 1.0):
        main = np.asarray(main, dtype=float)
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        n = main.size
        if lower.size != n - 1 or upper.size != n - 1:
            raise ValueError("off-diagonals must have length dim - 1")
        super().__init__(n, scale)
        self.lower, self.main, self.upper = lower, main, upper

    @classmethod
    def stencil(cls, n: int, scale: float = 1.0) -> "Tridiagonal":
        """The second-difference matrix ``tridiag(1, -2, 1)`` of size ``n``."""
        return cls(np.ones(n - 1), -2.0 * np.ones(n), np.ones(n - 1), scale)

    @classmethod
    def neumann_stencil(cls, n: int, scale: float = 1.0) -> "Tridiagonal":
        """Second differences with mirrored ghost values: rows ``(-2, 2)`` at the ends."""
        lower = np.ones(n - 1)
        upper = np.ones(n - 1)
        upper[0] = 2.0
        lower[-1] = 2.0
        return cls(lower, -2.0 * np.ones(n), upper, scale)

    def _matvec(self, x):
        shape = (-1,) + (1,) * (x.ndim - 1)
        y = self.main.reshape(shape) * x
        y[:-1] += self.upper.reshape(shape) * x[1:]
        y[1:] += self.lower.reshape(shape) * x[:-1]
        return y

    def _factorize(self, c):
        return ThomasFactor(-c * self.lower, 1.0 - c * self.main, -c * self.upper)

    def _tosparse(self):
        return sp.diags([self.lower, self.main, self.upper], [-1, 0, 1], format="csr")


# ------------------------------------------------------------------ Kronecker


class _KroneckerFactor:
    def __init__(self, inner_factor, outer: int, n: int, inner: int):
        self.inner_factor = inner_factor
        self.outer, self.n, self.inner = outer, n, inner

    def solve(self, rhs):
        return _kron_apply(rhs, self.outer, self.n, self.inner, self.inner_factor.solve)


def _kron_apply(x, outer, n, inner, fn):
    # move the D axis to the front so every block is one column of a batch
    batch = x.shape[1:] if x.ndim > 1 else ()
    X = x.reshape((outer, n, inner, -1)).transpose(1, 0, 2, 3).reshape(n, -1)
    Y = np.asarray(fn(X))
    Y = Y.reshape(n, outer, inner, -1).transpose(1, 0, 2, 3)
    return Y.reshape((outer * n * inner,) + batch)


class Kronecker(StructuredOperator):
    """``I_outer (x) D (x) I_inner`` for a small structured factor ``D``.

    ``Kronecker(D, inner=b)`` is ``D (x) I_b`` and ``Kronecker(D, outer=b)`` is
    ``I_b (x) D``.  Resolvent solves factor ``I - c D`` once and apply it to
    all ``outer * inner`` blocks as a batch.
    """

    kind = "kronecker"

    def __init__(self, D, outer: int = 1, inner: int = 1, scale: float = 1.0):
        if not isinstance(D, StructuredOperator):
            D = GeneralSparse(D)
        if outer < 1 or inner < 1:
            raise ValueError("block counts must be positive")
        super().__init__(outer * D.dim * inner, scale)
        self.D = D
        self.outer, self.inner = int(outer), int(inner)

    @property
    def block_count(self) -> int:
        return self.outer * self.inner

    def _matvec(self, x):
        return _kron_apply(x, self.outer, self.D.dim, self.inner, self.D.matvec)

    def _factorize(self, c):
        inner_factor = self.D.factorize(c)
        return _KroneckerFactor(inner_factor, self.outer, self.D.dim, self.inner)

    def _tosparse(self):
        left = sp.identity(self.outer, format="csr")
        right = sp.identity(self.inner, format="csr")
        return sp.kron(sp.kron(left, self.D.tosparse()), right, format="csr")


def kron_left(D, block_count: int, scale: float = 1.0) -> Kronecker:
    """``D (x) I``: ``D`` acts across blocks of length ``block_count``."""
    return Kronecker(D, inner=block_count, scale=scale)


def kron_right(D, block_count: int, scale: float = 1.0) -> Kronecker:
    """``I (x) D``: ``block_count`` independent copies of ``D`` on the diagonal."""
    return Kronecker(D, outer=block_count, scale=scale)


# ------------------------------------------------------------ pointwise blocks


class _BlockFactor:
    def __init__(self, inverses: np.ndarray, index: np.ndarray, dim: int):
        self.inverses, self.index, self.dim = inverses, index, dim

    def solve(self, rhs):
        out = np.array(rhs, dtype=np.result_type(rhs, float), copy=True)
        out[self.index] = np.einsum("pij,pj...->pi...", self.inverses, out[self.index])
        return out


class PointwiseBlocks(StructuredOperator):
    """Small dense blocks, block ``p`` coupling the entries ``index[p]``.

    Entries not listed in ``index`` are mapped to zero.
    """

    kind = "pointwise"

    def __init__(self, blocks, index, dim: int | None = None, scale: float = 1.0):
        blocks = np.asarray(blocks, dtype=float)
        index = np.asarray(index, dtype=np.intp)
        if blocks.ndim != 3 or blocks.shape[1] != blocks.shape[2]:
            raise ValueError("blocks must have shape (count, k, k)")
        if index.shape != blocks.shape[:2]:
            raise ValueError("index must have shape (count, k)")
        if dim is None:
            dim = int(index.max()) + 1
        if np.unique(index).size != index.size or index.max() >= dim:
            raise ValueError("block index sets must be disjoint and inside dim")
        super().__init__(dim, scale)
        self.blocks, self.index = blocks, index

    @classmethod
    def stacked(cls, blocks, scale: float = 1.0) -> "PointwiseBlocks":
        """Blocks over ``k`` stacked fields of ``count`` points each.

        Block ``p`` couples entries ``p, p + count, ..., p + (k-1) count``.
        """
        blocks = np.asarray(blocks, dtype=float)
        count, k = blocks.shape[:2]
        index = np.arange(count)[:, None] + count * np.arange(k)[None, :]
        return cls(blocks, index, count * k, scale)

    def _matvec(self, x):
        y = np.zeros_like(x, dtype=np.result_type(x, float))
        y[self.index] = np.einsum("pij,pj...->pi...", self.blocks, x[self.index])
        return y

    def _factorize(self, c):
        k = self.blocks.shape[1]
        shifted = np.eye(k) - c * self.blocks
        norms = np.abs(shifted).sum(axis=2).max(axis=1)
        smallest = np.linalg.svd(shifted, compute_uv=False)[:, -1]
        bad = np.flatnonzero(smallest <= PIVOT_RTOL * norms)
        if bad.size:
            raise SingularFactorError(f"pointwise block {bad[0]} is singular")
        return _BlockFactor(np.linalg.inv(shifted), self.index, self.dim)

    def _tosparse(self):
        p, k = self.index.shape
        rows = np.repeat(self.index, k, axis=1).ravel()
        cols = np.tile(self.index, (1, k)).ravel()
        return sp.csr_matrix((self.blocks.ravel(), (rows, cols)), shape=(self.dim, self.dim))


# -------------------------------------------------------------- general sparse


class _SparseLUFactor:
    def __init__(self, matrix: sp.csc_matrix):
        norm = spla.norm(matrix, np.inf) if matrix.nnz else 0.0
        try:
            self.lu = spla.splu(matrix)
        except RuntimeError as exc:
            raise SingularFactorError(str(exc)) from None
        pivots = np.abs(self.lu.U.diagonal())
        if norm == 0.0 or pivots.min() <= PIVOT_RTOL * norm:
            raise SingularFactorError("sparse LU pivot below tolerance")

    def solve(self, rhs):
        rhs = np.asarray(rhs)
        if np.iscomplexobj(rhs):
            return self.lu.solve(rhs.real.copy()) + 1j * self.lu.solve(rhs.imag.copy())
        return self.lu.solve(np.asarray(rhs, dtype=float))


def _sparse_resolvent(matrix: sp.spmatrix, c: float) -> _SparseLUFactor:
    n = matrix.shape[0]
    shifted = (sp.identity(n, format="csc") - c * matrix).tocsc()
    return _SparseLUFactor(shifted)


class GeneralSparse(StructuredOperator):
    """Arbitrary operator stored in compressed sparse row form."""

    kind = "sparse"

    def __init__(self, matrix, scale: float = 1.0):
        matrix = sp.csr_matrix(matrix, dtype=float)
        if matrix.shape[0] != matrix.shape[1]:
            raise ValueError("operator must be square")
        super().__init__(matrix.shape[0], scale)
        self.matrix = matrix

    @classmethod
    def zeros(cls, n: int) -> "GeneralSparse":
        return cls(sp.csr_matrix((n, n)))

    def _matvec(self, x):
        return self.matrix @ x

    def _factorize(self, c):
        return _sparse_resolvent(self.matrix, c)

    def _tosparse(self):
        return self.matrix


class SumOperator(StructuredOperator):
    """The exact sum ``L_1 + ... + L_R``; applied term by term, factorized assembled."""

    kind = "sum"

    def __init__(self, parts: Sequence[StructuredOperator], scale: float = 1.0):
        parts = list(parts)
        if not parts:
            raise ValueError("need at least one part")
        dims = {p.dim for p in parts}
        if len(dims) != 1:
            raise ValueError(f"parts have mismatched dimensions {sorted(dims)}")
        super().__init__(dims.pop(), scale)
        self.parts = parts

    def _matvec(self, x):
        y = self.parts[0].matvec(x)
        for part in self.parts[1:]:
            y = y + part.matvec(x)
        return y

    def _factorize(self, c):
        return _sparse_resolvent(self._tosparse(), c)

    def _tosparse(self):
        total = self.parts[0].tosparse()
        for part in self.parts[1:]:
            total = total + part.tosparse()
        return total.tocsr()


# ----------------------------------------------------------------- resolvents


class Resolvent:
    """Factorized ``I - h * gamma * op``."""

    def __init__(self, op: StructuredOperator, h: float, gamma: float):
        self.op = op
        self.h = float(h)
        self.gamma = float(gamma)
        self.factor = op.factorize(self.h * self.gamma)

    @property
    def shift(self) -> float:
        return self.h * self.gamma

    def apply(self, x):
        """``(I - h gamma op) x``."""
        return x - self.shift * self.op.matvec(x)

    def solve(self, rhs):
        _check_vector(rhs, self.op.dim)
        return self.factor.solve(rhs)


class AmfResolvent:
    """Approximate factorization ``prod_r (I - h gamma L_r)`` of ``I - h gamma L``.

    Parameters
    ----------
    parts : sequence of StructuredOperator
        The splitting ``L = L_1 + ... + L_R``.  Factors are applied in this order.
    h, gamma : float
        Step size and implicit diagonal coefficient.
    full : StructuredOperator, optional
        The exact operator ``L``; defaults to the sum of ``parts`` (or the only
        part when ``R = 1``).
    resolvents : sequence of Resolvent, optional
        Pre-built factor resolvents to reuse (must match ``parts``, ``h``, ``gamma``).

    Attributes
    ----------
    counts : collections.Counter
        ``"amf_solve"`` and ``"full_apply"`` operation counters.
    """

    def __init__(self, parts, h, gamma, full=None, resolvents=None):
        parts = list(parts)
        if not parts:
            raise ValueError("need at least one linear part")
        self.parts = parts
        self.h = float(h)
        self.gamma = float(gamma)
        if full is None:
            full = parts[0] if len(parts) == 1 else SumOperator(parts)
        self.full = full
        if resolvents is None:
            resolvents = []
            for r, part in enumerate(parts):
                try:
                    resolvents.append(Resolvent(part, h, gamma))
                except SingularFactorError as exc:
                    raise SingularFactorError(str(exc), index=r) from None
        self.factors = list(resolvents)
        self.counts: Counter = Counter()

    @property
    def shift(self) -> float:
        return self.h * self.gamma

    @property
    def dim(self) -> int:
        return self.full.dim

    def solve(self, rhs):
        """``(I - h gamma Ltilde)^{-1} rhs``, solving with factor 1 first."""
        _check_vector(rhs, self.dim)
        self.counts["amf_solve"] += 1
        x = rhs
        for res in self.factors:
            x = res.factor.solve(x)
        return x

    def apply_product(self, x):
        """``(I - h gamma Ltilde) x`` evaluated as the factor product."""
        for res in reversed(self.factors):
            x = res.apply(x)
        return x

    def full_matvec(self, x):
        self.counts["full_apply"] += 1
        return self.full.matvec(x)

    def ltilde_matvec(self, x):
        """``Ltilde x`` without forming the difference ``(x - prod x) / (h gamma)``."""
        c = self.shift
        acc = np.zeros_like(x, dtype=float)
        for part in reversed(self.parts):
            acc = acc + part.matvec(x - c * acc)
        return acc

    def residual(self, y, rhs):
        """Exact residual ``(I - h gamma L) y - rhs``."""
        return y - self.shift * self.full_matvec(y) - rhs

    def refine(self, y_prev, rhs):
        """One simplified Newton step on ``(I - h gamma L) y = rhs``."""
        _check_vector(y_prev, self.dim)
        return y_prev - self.solve(self.residual(y_prev, rhs))

    def contraction_matrix(self) -> np.ndarray:
        """Dense ``-(I - c Ltilde)^{-1} (c Ltilde - c L)``, the refinement error map.

        Only meant for small instances.
        """
        n = self.dim
        c = self.shift
        eye = np.eye(n)
        L = self.full.toarray()
        P = eye
        for part in self.parts:
            P = P @ (eye - c * part.toarray())
        return -np.linalg.solve(P, (eye - P) - c * L)


# -------------------------------------------------------- functional interface


def apply(op: StructuredOperator, x):
    """``op @ x`` exploiting structure."""
    return op.matvec(x)


def solve_resolvent(r: Resolvent, rhs):
    return r.solve(rhs)


def solve_amf(a: AmfResolvent, rhs):
    return a.solve(rhs)


def refine(a: AmfResolvent, y_prev, rhs):
    return a.refine(y_prev, rhs)
