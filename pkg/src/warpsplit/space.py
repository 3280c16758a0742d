"""Real Euclidean vectors, block product spaces, and dense linear maps.

All solver state lives in finite-dimensional real Euclidean spaces or block
products of them.  Vectors are 1-D float64 numpy arrays validated (finite
entries, fixed dimension) and frozen at the public construction points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, NonFiniteEntryError


def vector(coords) -> np.ndarray:
    """Validate ``coords`` as a finite 1-D real vector; return a frozen copy."""
    arr = np.array(coords, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise DimensionMismatchError(f"expected a 1-D vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteEntryError("vector entries must be finite (no NaN/Inf)")
    arr.flags.writeable = False
    return arr


def check_finite(arr, what="value"):
    """Reject NaN/Inf before it enters solver state."""
    if not np.all(np.isfinite(arr)):
        raise NonFiniteEntryError(f"{what} contains NaN or Inf")
    return arr


def check_dim(x, dim, what="vector"):
    if x.shape != (dim,):
        raise DimensionMismatchError(f"{what}: expected dimension {dim}, got shape {x.shape}")
    return x


def inner(x, y) -> float:
    """Euclidean scalar product; hard error on dimension mismatch."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise DimensionMismatchError(f"inner product needs equal 1-D shapes, got {x.shape} and {y.shape}")
    return float(np.dot(x, y))


def norm(x) -> float:
    return float(np.linalg.norm(x))


def normalize_or_zero(v) -> np.ndarray:
    """Return v/|v| for nonzero v and the zero vector for v = 0."""
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n == 0.0:
        return np.zeros_like(v)
    return v / n


@dataclass(frozen=True)
class BlockLayout:
    """Dimensions of the blocks of a product space, in order."""

    dims: tuple

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if not dims or any(d <= 0 for d in dims):
            raise DimensionMismatchError(f"block dimensions must be positive, got {dims}")
        object.__setattr__(self, "dims", dims)

    @property
    def total(self) -> int:
        return sum(self.dims)

    @property
    def offsets(self):
        out = [0]
        for d in self.dims:
            out.append(out[-1] + d)
        return tuple(out)

    def split(self, v):
        """Cut a flat vector into its blocks."""
        v = np.asarray(v, dtype=float)
        check_dim(v, self.total, "product vector")
        offs = self.offsets
        return [v[offs[k]:offs[k + 1]] for k in range(len(self.dims))]

    def join(self, blocks) -> np.ndarray:
        """Concatenate blocks back into a flat vector."""
        blocks = list(blocks)
        if len(blocks) != len(self.dims):
            raise DimensionMismatchError(
                f"layout has {len(self.dims)} blocks, got {len(blocks)}")
        for b, d in zip(blocks, self.dims):
            check_dim(np.asarray(b, dtype=float), d, "block")
        return np.concatenate([np.asarray(b, dtype=float) for b in blocks])


class ProductVector:
    """A point of a block product space: ordered blocks plus their layout."""

    __slots__ = ("blocks", "layout")

    def __init__(self, blocks, layout=None):
        blocks = tuple(vector(b) for b in blocks)
        if layout is None:
            layout = BlockLayout(tuple(b.shape[0] for b in blocks))
        for b, d in zip(blocks, layout.dims):
            check_dim(b, d, "product block")
        self.blocks = blocks
        self.layout = layout

    @classmethod
    def from_flat(cls, v, layout: BlockLayout) -> "ProductVector":
        return cls(layout.split(v), layout)

    def flatten(self) -> np.ndarray:
        return self.layout.join(self.blocks)

    def inner(self, other: "ProductVector") -> float:
        if self.layout.dims != other.layout.dims:
            raise DimensionMismatchError("product vectors have different layouts")
        return sum(inner(a, b) for a, b in zip(self.blocks, other.blocks))

    def __len__(self):
        return len(self.blocks)

    def __repr__(self):
        return f"ProductVector({[b.tolist() for b in self.blocks]})"


class LinearMap:
    """A bounded linear map given by a dense real matrix (rows = codomain)."""

    def __init__(self, matrix):
        m = np.array(matrix, dtype=float)
        if m.ndim != 2:
            raise DimensionMismatchError(f"matrix must be 2-D, got shape {m.shape}")
        check_finite(m, "matrix")
        m.flags.writeable = False
        self.matrix = m

    @classmethod
    def identity(cls, dim) -> "LinearMap":
        return cls(np.eye(dim))

    @classmethod
    def zero(cls, codomain_dim, domain_dim) -> "LinearMap":
        return cls(np.zeros((codomain_dim, domain_dim)))

    @property
    def domain_dim(self) -> int:
        return self.matrix.shape[1]

    @property
    def codomain_dim(self) -> int:
        return self.matrix.shape[0]

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        check_dim(x, self.domain_dim, "LinearMap argument")
        return self.matrix @ x

    def adjoint_apply(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        check_dim(v, self.codomain_dim, "LinearMap adjoint argument")
        return self.matrix.T @ v

    def adjoint(self) -> "LinearMap":
        return LinearMap(self.matrix.T)

    def operator_norm(self) -> float:
        if self.matrix.size == 0:
            return 0.0
        return float(np.linalg.norm(self.matrix, 2))

    def __repr__(self):
        return f"LinearMap(shape={self.matrix.shape})"


def adjoint_apply(L: LinearMap, v) -> np.ndarray:
    """Apply the adjoint of ``L`` (matrix transpose) to a codomain vector."""
    return L.adjoint_apply(v)
