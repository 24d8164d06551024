"""Rank analysis and numerical verification of the structural bounds.

Three inequalities get checked here:

* rank bound: the numerical rank of any materialized delta is capped by the
  smaller of the two rank products on either side of the unfolding split;
* parameter-count bound: over every tensorization of a J1 x J2 matrix with
  full per-mode ranks, the trainable count never exceeds J1 + J2;
* expressivity bound: the best achievable recovery error is capped by a
  subspace-residual term plus a spectral-gap term.

The first two are exact mathematics, so "violated" there means a code bug.
The third compares two one-sided estimates (an alternating-least-squares
upper bound on the left, an overestimated right side), so the verifier can
confirm the inequality but never refute it: verdicts are "holds" or
"inconclusive", by design.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .adapters import (
    FrozenFactorStore,
    HiraAdapter,
    LoraAdapter,
    TeraAdapter,
    VeraAdapter,
    clone_trainable,
    init_tera,
    materialize_delta,
)
from .tensor_ops import (
    TensorizationScheme,
    frobenius_norm,
    kron_chain,
    numerical_rank,
    pseudoinverse,
    tensor_spectral_norm,
    unfold,
)
from .training import als_approx_error

REPORT_FORMAT_VERSION = 1

RANK_BOUND = "rank_bound"
PARAM_BOUND = "param_count_bound"
EXPRESSIVITY_BOUND = "expressivity_bound"


class InstanceRejected(ValueError):
    """The instance cannot be certified (e.g. near-zero core entries)."""


def _py(value):
    # json.dump chokes on numpy scalars; normalize recursively.
    if isinstance(value, dict):
        return {str(k): _py(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_py(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_py(v) for v in value.tolist()]
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        return float(value)
    return value


def _scheme_dict(scheme: TensorizationScheme) -> dict:
    return {
        "mode_sizes": list(scheme.mode_sizes),
        "split": scheme.split,
        "ranks": list(scheme.ranks),
    }


@dataclass
class BoundReport:
    """Outcome of checking one inequality on one instance (or batch)."""

    bound_id: str
    instance: dict
    lhs: float
    rhs: float
    terms: dict
    verdict: str  # holds | violated | inconclusive
    slack: float

    def to_json_dict(self):
        return _py(
            {
                "format_version": REPORT_FORMAT_VERSION,
                "bound_id": self.bound_id,
                "instance": self.instance,
                "lhs": self.lhs,
                "rhs": self.rhs,
                "terms": self.terms,
                "verdict": self.verdict,
                "slack": self.slack,
            }
        )


def write_bound_report_json(report: BoundReport, path):
    with open(path, "w") as fh:
        json.dump(report.to_json_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")


def verify_rank_bound(scheme: TensorizationScheme, trials: int, seed=0) -> BoundReport:
    """Check rank(delta) <= min(row-rank product, col-rank product) on random draws.

    Every trial redraws the frozen parts as well as the scaling vectors, so
    the bound is exercised across the whole family, not a single instance.
    Also tracks how often the bound is met with equality (generic full rank).

    Scaling magnitudes are drawn from sign * uniform[0.5, 1.5] rather than a
    Gaussian: genericity is about the scalings being nonzero, and near-zero
    draws would conflate it with the finite rank tolerance (the condition
    number of the delta is a product over modes, so single tiny entries can
    push true full-rank instances under any fixed relative cutoff).
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    bound = min(scheme.rank_rows, scheme.rank_cols)
    attainable = min(bound, scheme.rows, scheme.cols)
    violations = 0
    full_rank_hits = 0
    max_seen = 0
    for _ in range(trials):
        store = FrozenFactorStore(int(rng.integers(2**31)))
        adapter = init_tera(scheme.rows, scheme.cols, scheme, store)
        for d in adapter.d_vectors:
            d[:] = rng.uniform(0.5, 1.5, d.shape) * rng.choice([-1.0, 1.0], d.shape)
        rank = numerical_rank(materialize_delta(adapter))
        max_seen = max(max_seen, rank)
        if rank > bound:
            violations += 1
        if rank == attainable:
            full_rank_hits += 1
    verdict = "holds" if violations == 0 else "violated"
    return BoundReport(
        bound_id=RANK_BOUND,
        instance={"scheme": _scheme_dict(scheme), "trials": trials, "seed": seed},
        lhs=float(max_seen),
        rhs=float(bound),
        terms={
            "violations": violations,
            "max_rank_observed": max_seen,
            "attainable_rank": attainable,
            "full_rank_fraction": full_rank_hits / trials,
        },
        verdict=verdict,
        slack=float(bound - max_seen),
    )


def multiplicative_partitions(n: int, limit: int = 10_000):
    """All unordered factorizations of n into integer factors >= 2.

    Returned as non-increasing tuples, (n,) included. The count grows slowly
    (a power of two yields one partition per additive partition of the
    exponent), but `limit` guards against pathological inputs.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    if n > 2**16:
        raise ValueError("dimension too large to enumerate (cap 2^16)")
    out = []

    def descend(remaining, cap, prefix):
        if len(out) > limit:
            raise ValueError(f"more than {limit} factorizations; raise the limit")
        for f in range(min(cap, remaining), 1, -1):
            if remaining % f:
                continue
            rest = remaining // f
            if rest == 1:
                out.append(prefix + (f,))
            else:
                descend(rest, f, prefix + (f,))

    descend(n, n, ())
    return out


def verify_param_bound(j1: int, j2: int, limit: int = 10_000) -> BoundReport:
    """Check sum(mode sizes) <= J1 + J2 over every full-rank tensorization.

    A tensorization pairs one factorization per matrix dimension; since the
    trainable count is the sum of the two sides, checking each side against
    its own dimension covers every pair without materializing the product
    set. The minimizing scheme (most aggressive factoring) is recorded.
    """
    if j1 < 2 or j2 < 2:
        raise ValueError("dimensions must be >= 2")
    sides = []
    for dim in (j1, j2):
        parts = multiplicative_partitions(dim, limit)
        sums = [sum(p) for p in parts]
        order = np.argsort(sums)
        sides.append(
            {
                "count": len(parts),
                "min_sum": sums[order[0]],
                "min_factorization": parts[order[0]],
                "max_sum": max(sums),
                "violations": sum(1 for s in sums if s > dim),
            }
        )
    lhs = sides[0]["max_sum"] + sides[1]["max_sum"]
    rhs = j1 + j2
    min_params = sides[0]["min_sum"] + sides[1]["min_sum"]
    violations = sides[0]["violations"] + sides[1]["violations"]
    verdict = "holds" if violations == 0 and lhs <= rhs else "violated"
    return BoundReport(
        bound_id=PARAM_BOUND,
        instance={"j1": j1, "j2": j2, "enumeration_limit": limit},
        lhs=float(lhs),
        rhs=float(rhs),
        terms={
            "n_schemes": sides[0]["count"] * sides[1]["count"],
            "row_factorizations": sides[0]["count"],
            "col_factorizations": sides[1]["count"],
            "min_params": min_params,
            "min_scheme": {
                "row_modes": list(sides[0]["min_factorization"]),
                "col_modes": list(sides[1]["min_factorization"]),
            },
            "max_params": lhs,
            "equality_attained": lhs == rhs,
        },
        verdict=verdict,
        slack=float(rhs - lhs),
    )


MIN_CORE_MAGNITUDE = 1e-10


def _expressivity_convention_check(adapter: TeraAdapter, left, right):
    # The factored form must reproduce the network before the bound is
    # trusted; probe with a throwaway non-zero scaling assignment.
    probe = clone_trainable(adapter)
    rng = np.random.default_rng(0)
    for d in probe.d_vectors:
        d[:] = rng.standard_normal(d.shape)
    scale = np.ones(())
    for i, d in enumerate(probe.d_vectors):
        shape = [1] * adapter.scheme.order
        shape[i] = d.size
        scale = scale * d.reshape(shape)
    core_scaled = unfold(adapter.core * scale, adapter.scheme.split)
    via_kron = left @ core_scaled @ right.T
    via_modes = materialize_delta(probe, path="mode")
    if not np.allclose(via_kron, via_modes, rtol=0, atol=1e-8):
        raise RuntimeError("factored form disagrees with mode-product form")


def verify_expressivity_bound(
    w_star,
    adapter: TeraAdapter,
    sweeps: int = 50,
    extra_starts: int = 3,
    polish_steps: int = 200,
    seed: int = 0,
) -> BoundReport:
    """Check the recovery-error bound for one target against one network.

    rhs is computed exactly from the frozen parts: a projection residual
    plus max|core| * (||Z||_F^2 - ||Z||_2^2) * ||L||_F^2 * ||M||_F^2, where
    Z is the core-normalized projection of the target and the spectral norm
    is taken of Z reshaped to the rank grid. The power-method estimate can
    only undershoot the true spectral norm, which only enlarges rhs, so the
    check stays conservative. lhs comes from alternating least squares and
    upper-bounds the true minimum, hence verdicts are holds/inconclusive.
    """
    if not isinstance(adapter, TeraAdapter):
        raise TypeError("expressivity bound applies to the tensor-network family")
    w_star = np.asarray(w_star, dtype=float)
    scheme = adapter.scheme
    if w_star.shape != adapter.shape:
        raise ValueError(f"target shape {w_star.shape} != adapter shape {adapter.shape}")
    core = adapter.core
    min_core = float(np.min(np.abs(core)))
    if min_core < MIN_CORE_MAGNITUDE:
        raise InstanceRejected(
            f"core entry magnitude {min_core:.3e} below {MIN_CORE_MAGNITUDE:.0e}; "
            "element-wise normalization by the core would be ill-conditioned"
        )

    k = scheme.split
    factors = [adapter.factor(i) for i in range(scheme.order)]
    left = kron_chain([f.T for f in factors[:k]])  # rows x rank_rows
    right = kron_chain([f.T for f in factors[k:]])  # cols x rank_cols
    _expressivity_convention_check(adapter, left, right)

    left_pinv = pseudoinverse(left)
    right_pinv = pseudoinverse(right)
    proj_left = left @ left_pinv
    proj_right = right @ right_pinv
    residual = w_star - proj_left @ w_star @ proj_right
    term1 = frobenius_norm(residual) ** 2

    z = (left_pinv @ w_star @ right_pinv.T) / unfold(core, k)
    z_frob_sq = frobenius_norm(z) ** 2
    estimate = tensor_spectral_norm(z.reshape(scheme.ranks), seed=seed)
    gap = max(0.0, z_frob_sq - estimate.value**2)
    g_max = float(np.max(np.abs(core)))
    l_frob_sq = frobenius_norm(left) ** 2
    m_frob_sq = frobenius_norm(right) ** 2
    rhs = term1 + g_max * gap * l_frob_sq * m_frob_sq

    als = als_approx_error(
        adapter,
        w_star,
        sweeps=sweeps,
        extra_starts=extra_starts,
        polish_steps=polish_steps,
        seed=seed,
    )
    lhs = als.value
    tolerance = 1e-8 * max(1.0, frobenius_norm(w_star) ** 2)
    verdict = "holds" if lhs <= rhs + tolerance else "inconclusive"
    return BoundReport(
        bound_id=EXPRESSIVITY_BOUND,
        instance={
            "shape": list(adapter.shape),
            "scheme": _scheme_dict(scheme),
            "master_seed": adapter.master_seed,
            "identity_factors": adapter.identity_factors,
        },
        lhs=lhs,
        rhs=rhs,
        terms={
            "subspace_residual": term1,
            "g_max": g_max,
            "z_frob_sq": z_frob_sq,
            "spectral_norm_estimate": estimate.value,
            "spectral_norm_converged": estimate.converged,
            "gap": gap,
            "left_frob_sq": l_frob_sq,
            "right_frob_sq": m_frob_sq,
            "tolerance": tolerance,
            "als_sweeps": sweeps,
            "als_ridge_fallbacks": als.ridge_fallbacks,
        },
        verdict=verdict,
        slack=rhs - lhs,
    )


def structural_max_rank(adapter) -> int:
    """Largest numerical rank the adapter's construction permits."""
    j1, j2 = adapter.shape
    if isinstance(adapter, TeraAdapter):
        s = adapter.scheme
        return min(s.rank_rows, s.rank_cols, j1, j2)
    if isinstance(adapter, (LoraAdapter, VeraAdapter, HiraAdapter)):
        cap = min(j1, j2)
        if isinstance(adapter, HiraAdapter):
            return cap  # the element-wise product can reach full rank
        return min(adapter.rank, cap)
    raise TypeError(f"not an adapter: {type(adapter).__name__}")


@dataclass
class RankReport:
    """Numerical ranks of materialized deltas per layer and family."""

    rows: list  # dicts: layer, family, rank, max_rank, tolerance
    spectra: dict = field(default_factory=dict)  # "layer/family" -> singular values
    rel_tol: float = 1e-8

    def to_json_dict(self):
        return _py(
            {
                "format_version": REPORT_FORMAT_VERSION,
                "rel_tol": self.rel_tol,
                "rows": self.rows,
                "spectra": self.spectra,
            }
        )


def rank_report(entries, rel_tol: float = 1e-8) -> RankReport:
    """Rank table for (layer, family, adapter) triples.

    The full singular spectrum is kept alongside each row so the tail
    profile can be plotted without re-materializing anything.
    """
    rows = []
    spectra = {}
    for layer, family, adapter in entries:
        delta = materialize_delta(adapter)
        svals = np.linalg.svd(delta, compute_uv=False)
        top = svals[0] if svals.size else 0.0
        rank = int(np.count_nonzero(svals > rel_tol * top)) if top > 0 else 0
        rows.append(
            {
                "layer": layer,
                "family": family,
                "rank": rank,
                "max_rank": structural_max_rank(adapter),
                "tolerance": rel_tol,
            }
        )
        spectra[f"{layer}/{family}"] = [float(s) for s in svals]
    return RankReport(rows=rows, spectra=spectra, rel_tol=rel_tol)


def write_rank_report_csv(report: RankReport, path):
    lines = ["layer,family,rank,max_rank,tolerance"]
    for row in report.rows:
        lines.append(
            f"{row['layer']},{row['family']},{row['rank']},"
            f"{row['max_rank']},{float(row['tolerance'])!r}"
        )
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def write_rank_report_json(report: RankReport, path):
    with open(path, "w") as fh:
        json.dump(report.to_json_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")
