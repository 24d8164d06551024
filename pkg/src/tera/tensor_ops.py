"""Dense multilinear algebra on numpy arrays.

Tensors are plain :class:`numpy.ndarray` objects in C (row-major) order, so
the first index is always the most significant one. Folding a matrix into a
higher-order tensor and unfolding it back are pure reshapes under this
convention, and the Kronecker product ``numpy.kron`` linearizes multi-indices
the same way (left factor most significant). Keeping a single linearization
convention everywhere is what makes the factored identities in this package
hold without any hidden transpositions.

The split-``k`` unfolding used throughout maps an order-``N`` tensor with mode
sizes ``(I_1, ..., I_N)`` to a matrix with ``I_1 * ... * I_k`` rows and
``I_{k+1} * ... * I_N`` columns; :class:`TensorizationScheme` records the mode
sizes, the split point, and an optional per-mode rank vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import reduce
from typing import NamedTuple

import numpy as np


def _as_tuple(values) -> tuple[int, ...]:
    return tuple(int(v) for v in values)


@dataclass(frozen=True)
class TensorizationScheme:
    """Fold/unfold contract for one matrix: mode sizes, split point, ranks.

    ``mode_sizes`` are the tensor dimensions ``(I_1, ..., I_N)``; ``split`` is
    the number of leading modes that form the matrix rows (``1 <= split < N``);
    ``ranks`` bound the per-mode factor sizes and default to the mode sizes
    themselves (the full-rank setting).
    """

    mode_sizes: tuple[int, ...]
    split: int
    ranks: tuple[int, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "mode_sizes", _as_tuple(self.mode_sizes))
        if self.ranks is None:
            object.__setattr__(self, "ranks", self.mode_sizes)
        else:
            object.__setattr__(self, "ranks", _as_tuple(self.ranks))
        n = len(self.mode_sizes)
        if n < 2:
            raise ValueError("a scheme needs at least two modes")
        if any(s < 2 for s in self.mode_sizes):
            raise ValueError(f"every mode size must be >= 2, got {self.mode_sizes}")
        if not 1 <= self.split < n:
            raise ValueError(f"split must satisfy 1 <= split < {n}, got {self.split}")
        if len(self.ranks) != n:
            raise ValueError("ranks must have one entry per mode")
        if any(not 1 <= r <= s for r, s in zip(self.ranks, self.mode_sizes)):
            raise ValueError(
                f"each rank must satisfy 1 <= R_i <= I_i, got ranks={self.ranks} "
                f"for modes={self.mode_sizes}"
            )

    @property
    def order(self) -> int:
        return len(self.mode_sizes)

    @property
    def rows(self) -> int:
        """Row count of the unfolded matrix."""
        return math.prod(self.mode_sizes[: self.split])

    @property
    def cols(self) -> int:
        return math.prod(self.mode_sizes[self.split :])

    @property
    def rank_rows(self) -> int:
        """Product of the ranks on the row side of the split."""
        return math.prod(self.ranks[: self.split])

    @property
    def rank_cols(self) -> int:
        return math.prod(self.ranks[self.split :])

    @property
    def full_rank(self) -> bool:
        return self.ranks == self.mode_sizes

    def num_trainable(self) -> int:
        """Trainable parameters of the adapter this scheme describes: sum of ranks."""
        return sum(self.ranks)

    def matches(self, j1: int, j2: int) -> bool:
        return self.rows == j1 and self.cols == j2

    @staticmethod
    def one_sided(j1: int, j2: int, mode_size: int) -> "TensorizationScheme":
        """Keep the row dimension as a single mode, factor the column dimension
        into equal modes of the given size."""
        return TensorizationScheme((j1, *equal_modes(j2, mode_size)), split=1)

    @staticmethod
    def two_sided(j1: int, j2: int, mode_size: int) -> "TensorizationScheme":
        """Factor both dimensions into equal modes of the given size."""
        left = equal_modes(j1, mode_size)
        return TensorizationScheme(left + equal_modes(j2, mode_size), split=len(left))


def equal_modes(dim: int, mode_size: int) -> tuple[int, ...]:
    """Factor ``dim`` into equal modes of size ``mode_size``.

    Raises ValueError when ``dim`` is not a perfect power of ``mode_size``.
    """
    if mode_size < 2:
        raise ValueError("mode_size must be >= 2")
    count = 0
    remaining = dim
    while remaining > 1 and remaining % mode_size == 0:
        remaining //= mode_size
        count += 1
    if remaining != 1:
        raise ValueError(f"{dim} is not a perfect power of {mode_size}")
    return (mode_size,) * count


def unfold(tensor: np.ndarray, split: int) -> np.ndarray:
    """Flatten an order-N tensor into a matrix by splitting modes at ``split``.

    The first ``split`` modes become the rows, the rest the columns, with
    row-major multi-index linearization on both sides. A pure reshape.
    """
    if not 1 <= split < tensor.ndim:
        raise ValueError(f"split must satisfy 1 <= split < {tensor.ndim}, got {split}")
    rows = math.prod(tensor.shape[:split])
    return np.reshape(tensor, (rows, -1))


def fold(matrix: np.ndarray, scheme: TensorizationScheme) -> np.ndarray:
    """Reshape a matrix into the order-N tensor described by ``scheme``.

    Inverse of :func:`unfold` at the same split.
    """
    matrix = np.asarray(matrix)
    if matrix.shape != (scheme.rows, scheme.cols):
        raise ValueError(
            f"matrix shape {matrix.shape} does not match scheme "
            f"({scheme.rows} x {scheme.cols} from modes {scheme.mode_sizes}, "
            f"split {scheme.split})"
        )
    return np.reshape(matrix, scheme.mode_sizes)


def mode_n_product(tensor: np.ndarray, matrix: np.ndarray, mode: int) -> np.ndarray:
    """Contract mode ``mode`` of ``tensor`` with the columns of ``matrix``.

    ``matrix`` has shape ``(J, I_mode)``; the output replaces mode size
    ``I_mode`` with ``J`` and leaves all other modes unchanged:
    ``out[..., j, ...] = sum_i tensor[..., i, ...] * matrix[j, i]``.
    """
    matrix = np.asarray(matrix)
    if matrix.ndim != 2:
        raise ValueError("mode-n product expects a 2-D matrix")
    if matrix.shape[1] != tensor.shape[mode]:
        raise ValueError(
            f"matrix has {matrix.shape[1]} columns but mode {mode} has size "
            f"{tensor.shape[mode]}"
        )
    out = np.tensordot(matrix, tensor, axes=(1, mode))
    return np.moveaxis(out, 0, mode)


def multi_mode_product(tensor: np.ndarray, matrices) -> np.ndarray:
    """Apply one matrix per mode; ``None`` entries leave that mode untouched."""
    out = tensor
    for mode, matrix in enumerate(matrices):
        if matrix is not None:
            out = mode_n_product(out, matrix, mode)
    return out


def kronecker(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Kronecker product with the left factor most significant.

    ``(a kron b)[i*rows(b)+j, p*cols(b)+q] = a[i,p] * b[j,q]``, matching the
    row-major multi-index linearization used by :func:`unfold`.
    """
    return np.kron(a, b)


def kron_chain(matrices) -> np.ndarray:
    """Kronecker product of a sequence of matrices, left to right."""
    matrices = list(matrices)
    if not matrices:
        raise ValueError("kron_chain needs at least one matrix")
    return reduce(np.kron, matrices)


def frobenius_norm(tensor: np.ndarray) -> float:
    """Square root of the sum of squared entries."""
    return float(np.linalg.norm(np.ravel(tensor)))


def svd(matrix: np.ndarray):
    """Thin SVD returning ``(U, s, V)`` with ``matrix = U @ diag(s) @ V.T``.

    Singular values are in descending order. Non-convergence raises
    ``numpy.linalg.LinAlgError`` rather than returning silently wrong factors.
    """
    u, s, vh = np.linalg.svd(np.asarray(matrix, dtype=float), full_matrices=False)
    return u, s, vh.T


def pseudoinverse(matrix: np.ndarray, rel_cutoff: float = 1e-12) -> np.ndarray:
    """Moore-Penrose pseudoinverse, truncating singular values below
    ``rel_cutoff`` times the largest one."""
    if rel_cutoff <= 0:
        raise ValueError("rel_cutoff must be positive")
    return np.linalg.pinv(np.asarray(matrix, dtype=float), rcond=rel_cutoff)


def numerical_rank(matrix: np.ndarray, rel_tol: float = 1e-8) -> int:
    """Count of singular values above ``rel_tol`` times the largest one.

    The tolerance is relative, so the result is invariant under scaling the
    input by any nonzero constant. A zero matrix has rank 0.
    """
    if not 0 < rel_tol < 1:
        raise ValueError("rel_tol must lie strictly between 0 and 1")
    s = np.linalg.svd(np.asarray(matrix, dtype=float), compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.count_nonzero(s > rel_tol * s[0]))


class SpectralNormEstimate(NamedTuple):
    value: float
    converged: bool


def tensor_spectral_norm(
    tensor: np.ndarray,
    restarts: int = 16,
    tol: float = 1e-10,
    max_iters: int = 500,
    seed: int = 0,
) -> SpectralNormEstimate:
    """Best rank-1 approximation value, estimated by higher-order power iteration.

    Runs ``restarts`` power iterations from random unit-vector initializations
    and returns the largest multilinear value found. The estimate is a lower
    bound on the true spectral norm (the maximizer may be missed), which is
    the conservative direction for the expressivity-bound verifier that
    consumes it. ``converged`` is False when no restart stabilized within
    ``max_iters`` sweeps; the best iterate is still returned.

    For an order-2 tensor this reduces to power iteration for the largest
    singular value.
    """
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    tensor = np.asarray(tensor, dtype=float)
    order = tensor.ndim
    rng = np.random.default_rng(seed)

    def contract_all_but(vectors, skip):
        # Contract every mode except `skip`, descending so axis indices stay valid.
        out = tensor
        for mode in range(order - 1, -1, -1):
            if mode != skip:
                out = np.tensordot(out, vectors[mode], axes=(mode, 0))
        return out

    best = 0.0
    best_converged = False
    for _ in range(restarts):
        vectors = []
        degenerate = False
        for size in tensor.shape:
            v = rng.standard_normal(size)
            norm = np.linalg.norm(v)
            if norm == 0.0:
                degenerate = True
                break
            vectors.append(v / norm)
        if degenerate:
            continue
        value = 0.0
        converged = False
        for _ in range(max_iters):
            previous = value
            for mode in range(order):
                w = contract_all_but(vectors, mode)
                norm = np.linalg.norm(w)
                if norm == 0.0:
                    # Landed on a zero slice; this restart contributes nothing.
                    value = 0.0
                    converged = True
                    break
                vectors[mode] = w / norm
                value = norm
            else:
                if abs(value - previous) <= tol * max(1.0, abs(value)):
                    converged = True
            if converged:
                break
        if value > best or (value == best and converged and not best_converged):
            best = value
            best_converged = converged
    return SpectralNormEstimate(float(best), best_converged)
