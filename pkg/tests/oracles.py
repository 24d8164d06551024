"""Independent brute-force oracles shared by the test modules.

Everything here is written as plain index loops over the element-wise
definitions, deliberately avoiding the library's own vectorized paths, so a
test that compares the two is comparing genuinely independent computations.
"""

import itertools
import math

import numpy as np


def unfold_by_enumeration(tensor, split):
    """Split-k unfolding built entry by entry from multi-index linearization."""
    shape = tensor.shape
    rows = math.prod(shape[:split])
    cols = math.prod(shape[split:])
    out = np.zeros((rows, cols))
    for index in itertools.product(*(range(s) for s in shape)):
        r = 0
        for i, size in zip(index[:split], shape[:split]):
            r = r * size + i
        c = 0
        for i, size in zip(index[split:], shape[split:]):
            c = c * size + i
        out[r, c] = tensor[index]
    return out


def mode_product_by_loops(tensor, matrix, mode):
    """Mode-n product computed with explicit nested loops."""
    out_shape = list(tensor.shape)
    out_shape[mode] = matrix.shape[0]
    out = np.zeros(out_shape)
    for index in itertools.product(*(range(s) for s in out_shape)):
        total = 0.0
        for i in range(tensor.shape[mode]):
            src = list(index)
            src[mode] = i
            total += tensor[tuple(src)] * matrix[index[mode], i]
        out[index] = total
    return out


def tera_delta_by_loops(core, factors, d_vectors, split):
    """Materialized update matrix from the element-wise tensor-network sum.

    Loops over every output multi-index and every core multi-index:
    ``delta(i) = sum_r core(r) * prod_m d[m][r_m] * prod_m factors[m][r_m, i_m]``,
    then linearizes the output indices at the split point.
    """
    mode_sizes = tuple(f.shape[1] for f in factors)
    ranks = core.shape
    rows = math.prod(mode_sizes[:split])
    cols = math.prod(mode_sizes[split:])
    out = np.zeros((rows, cols))
    for index in itertools.product(*(range(s) for s in mode_sizes)):
        total = 0.0
        for r in itertools.product(*(range(s) for s in ranks)):
            term = core[r]
            for m in range(len(mode_sizes)):
                term *= d_vectors[m][r[m]] * factors[m][r[m], index[m]]
            total += term
        r_lin = 0
        for i, size in zip(index[:split], mode_sizes[:split]):
            r_lin = r_lin * size + i
        c_lin = 0
        for i, size in zip(index[split:], mode_sizes[split:]):
            c_lin = c_lin * size + i
        out[r_lin, c_lin] = total
    return out


def integer_tensor(rng, shape, low=-9, high=10):
    """Random tensor with small integer-valued float entries.

    Integer arithmetic below 2**53 is exact in float64 regardless of summation
    order, so results can be compared for exact equality across
    implementations.
    """
    return rng.integers(low, high, size=shape).astype(float)
