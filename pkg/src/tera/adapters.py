"""Adapter parameterizations for weight-update matrices.

Implements the tensor-network adapter (a frozen random Tucker-form network
scaled by trainable per-mode diagonal vectors) alongside the three baselines
it is measured against: plain low-rank (LoRA), frozen-pair low-rank with
trainable diagonals (VeRA), and Hadamard-masked low-rank (HiRA).

All four families materialize a delta matrix that is exactly zero right after
initialization, support matrix-vector application without materializing the
delta where the structure allows it, merge additively into a base weight, and
round-trip through JSON checkpoints that store only trainable state plus
enough provenance to regenerate the frozen parts.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np

from .tensor_ops import TensorizationScheme, kron_chain, mode_n_product, unfold

CHECKPOINT_FORMAT_VERSION = 1

# Namespacing constants for seed derivation; changing these invalidates
# every existing checkpoint, so they are part of the file format.
_TERA_TAG = 1
_VERA_TAG = 2
_BASE_WEIGHT_TAG = 3


class CheckpointError(ValueError):
    """A checkpoint file is unreadable or inconsistent with the store or
    base weight it is being restored against."""


def _kaiming_uniform(rng, shape, fan):
    # Uniform on [-a, a] with a = sqrt(6/fan): keeps materialized deltas O(1)
    # in magnitude across schemes.
    bound = math.sqrt(6.0 / fan)
    return rng.uniform(-bound, bound, size=shape)


def _frozen(arr):
    arr.setflags(write=False)
    return arr


def synthetic_base_weight(j1, j2, seed):
    """Deterministic stand-in for a pre-trained weight matrix.

    Entries are Gaussian with 1/sqrt(cols) scale so that products with unit
    inputs stay O(1). The array is read-only; it plays the role of the frozen
    base model.
    """
    if seed < 0:
        raise ValueError("base-weight seed must be non-negative")
    rng = np.random.default_rng(
        np.random.SeedSequence([_BASE_WEIGHT_TAG, int(seed), int(j1), int(j2)])
    )
    return _frozen(rng.standard_normal((j1, j2)) / math.sqrt(j2))


def _checksum(arr):
    return hashlib.sha256(np.ascontiguousarray(arr).tobytes()).hexdigest()[:16]


@dataclass(frozen=True)
class StoreEntry:
    """One shared set of frozen tensors, reused by identity across adapters."""

    core: np.ndarray
    factors: tuple


class FrozenFactorStore:
    """Deterministic registry of frozen random tensors, keyed by signature.

    Entries are derived lazily from (master_seed, signature) alone, so two
    stores with the same master seed hold bit-identical arrays no matter in
    which order entries are first requested. Every adapter built against the
    same store and signature shares the same entry object, never a copy.
    """

    def __init__(self, master_seed: int):
        if master_seed < 0:
            raise ValueError("master_seed must be non-negative")
        self.master_seed = int(master_seed)
        self._entries = {}

    def tera_entry(self, scheme: TensorizationScheme) -> StoreEntry:
        key = ("tera", scheme.mode_sizes, scheme.ranks)
        if key not in self._entries:
            # The 0 separates mode sizes from ranks in the entropy stream so
            # e.g. (2,4|ranks 2) and (2|ranks 4,2) cannot collide.
            rng = self._rng(_TERA_TAG, *scheme.mode_sizes, 0, *scheme.ranks)
            core = _frozen(_kaiming_uniform(rng, scheme.ranks, sum(scheme.ranks)))
            factors = tuple(
                _frozen(_kaiming_uniform(rng, (r, n), r + n))
                for r, n in zip(scheme.ranks, scheme.mode_sizes)
            )
            self._entries[key] = StoreEntry(core=core, factors=factors)
        return self._entries[key]

    def vera_pair(self, j1: int, j2: int, rank: int):
        """Frozen (B, A) with B of shape (j1, rank) and A of shape (rank, j2)."""
        key = ("vera", j1, j2, rank)
        if key not in self._entries:
            rng = self._rng(_VERA_TAG, j1, j2, rank)
            b = _frozen(_kaiming_uniform(rng, (j1, rank), j1 + rank))
            a = _frozen(_kaiming_uniform(rng, (rank, j2), rank + j2))
            self._entries[key] = (b, a)
        return self._entries[key]

    def _rng(self, tag, *ints):
        return np.random.default_rng(
            np.random.SeedSequence([self.master_seed, tag, *map(int, ints)])
        )


@dataclass(eq=False)
class TeraAdapter:
    """Frozen random tensor network scaled by trainable diagonal vectors.

    The delta is the split-point unfolding of the frozen core multiplied on
    every mode by diag(d) followed by the frozen factor. Only the d vectors
    train; one of them starts at zero so the initial delta vanishes exactly.
    """

    scheme: TensorizationScheme
    entry: StoreEntry
    d_vectors: list
    zero_init_mode: int
    master_seed: int
    identity_factors: bool = False

    family = "tera"

    @property
    def shape(self):
        return (self.scheme.rows, self.scheme.cols)

    @property
    def core(self):
        return self.entry.core

    def factor(self, i):
        if self.identity_factors:
            return np.eye(self.scheme.ranks[i])
        return self.entry.factors[i]

    def trainable_arrays(self):
        return list(self.d_vectors)


@dataclass(eq=False)
class LoraAdapter:
    """Plain low-rank delta A @ B with both factors trainable."""

    a: np.ndarray  # (j1, rank)
    b: np.ndarray  # (rank, j2), zero at init so the delta starts at zero
    rank: int

    family = "lora"

    @property
    def shape(self):
        return (self.a.shape[0], self.b.shape[1])

    def trainable_arrays(self):
        return [self.a, self.b]


@dataclass(eq=False)
class VeraAdapter:
    """Frozen low-rank pair scaled by trainable diagonals on both sides."""

    b_frozen: np.ndarray  # (j1, rank)
    a_frozen: np.ndarray  # (rank, j2)
    b: np.ndarray  # (j1,) trainable, zero at init
    d: np.ndarray  # (rank,) trainable
    rank: int
    master_seed: int
    d_init: float = 0.1

    family = "vera"

    @property
    def shape(self):
        return (self.b_frozen.shape[0], self.a_frozen.shape[1])

    def trainable_arrays(self):
        return [self.b, self.d]


@dataclass(eq=False)
class HiraAdapter:
    """Low-rank product masked element-wise by the frozen base weight.

    The Hadamard factor w0 lets the delta reach ranks far above the product's
    own rank. w0 is never trained and never serialized by value; checkpoints
    record a checksum plus provenance sufficient to regenerate or re-verify it.
    """

    a: np.ndarray  # (j1, rank)
    b: np.ndarray  # (rank, j2), zero at init
    w0: np.ndarray  # (j1, j2), frozen
    rank: int
    w0_provenance: dict | None = None

    family = "hira"

    @property
    def shape(self):
        return self.w0.shape

    def trainable_arrays(self):
        return [self.a, self.b]


def init_tera(j1, j2, scheme, store, zero_init_mode=None, identity_factors=False):
    """Build a zero-delta tensor-network adapter against a shared store.

    One d vector (by default the last mode's) starts at zeros and the rest at
    ones, which forces the materialized delta to be exactly the zero matrix.
    With identity_factors=True the frozen factor matrices are replaced by
    identities (the core stays random and shared); this requires every rank to
    equal its mode size.
    """
    if not scheme.matches(j1, j2):
        raise ValueError(
            f"scheme folds a {scheme.rows}x{scheme.cols} matrix, "
            f"but a {j1}x{j2} adapter was requested"
        )
    if identity_factors and scheme.ranks != scheme.mode_sizes:
        raise ValueError("identity factors require ranks equal to mode sizes")
    if zero_init_mode is None:
        zero_init_mode = scheme.order - 1
    if not 0 <= zero_init_mode < scheme.order:
        raise ValueError(f"zero_init_mode {zero_init_mode} out of range")
    d_vectors = [np.ones(r) for r in scheme.ranks]
    d_vectors[zero_init_mode] = np.zeros(scheme.ranks[zero_init_mode])
    return TeraAdapter(
        scheme=scheme,
        entry=store.tera_entry(scheme),
        d_vectors=d_vectors,
        zero_init_mode=zero_init_mode,
        master_seed=store.master_seed,
        identity_factors=identity_factors,
    )


def init_lora(j1, j2, rank, seed=0):
    rng = np.random.default_rng(seed)
    a = _kaiming_uniform(rng, (j1, rank), j1 + rank)
    return LoraAdapter(a=a, b=np.zeros((rank, j2)), rank=rank)


def init_vera(j1, j2, rank, store, d_init=0.1):
    b_frozen, a_frozen = store.vera_pair(j1, j2, rank)
    return VeraAdapter(
        b_frozen=b_frozen,
        a_frozen=a_frozen,
        b=np.zeros(j1),
        d=np.full(rank, d_init),
        rank=rank,
        master_seed=store.master_seed,
        d_init=d_init,
    )


def init_hira(j1, j2, rank, w0=None, seed=0, w0_seed=None):
    """Hadamard-masked adapter. Supply w0 directly or a w0_seed to generate a
    synthetic base weight with recorded provenance."""
    if w0 is None:
        if w0_seed is None:
            raise ValueError("init_hira needs either w0 or w0_seed")
        w0 = synthetic_base_weight(j1, j2, w0_seed)
        provenance = {"kind": "synthetic", "seed": int(w0_seed)}
    else:
        if w0.shape != (j1, j2):
            raise ValueError(f"w0 has shape {w0.shape}, expected {(j1, j2)}")
        provenance = None
    rng = np.random.default_rng(seed)
    a = _kaiming_uniform(rng, (j1, rank), j1 + rank)
    return HiraAdapter(
        a=a, b=np.zeros((rank, j2)), w0=w0, rank=rank, w0_provenance=provenance
    )


def _tera_delta_mode_products(a: TeraAdapter):
    # Mode i is transformed by T(out, r) = d(r) * factor(r, out): scale the
    # rank index, then mix it down to the original mode size.
    t = a.core
    for i in range(a.scheme.order):
        t = mode_n_product(t, a.factor(i).T * a.d_vectors[i], i)
    return unfold(t, a.scheme.split)


def _tera_delta_kronecker(a: TeraAdapter):
    core_scaled = a.core
    for i, d in enumerate(a.d_vectors):
        shape = [1] * a.scheme.order
        shape[i] = -1
        core_scaled = core_scaled * d.reshape(shape)
    k = a.scheme.split
    left = kron_chain([a.factor(i).T for i in range(k)])
    right = kron_chain([a.factor(i).T for i in range(k, a.scheme.order)])
    return left @ unfold(core_scaled, k) @ right.T


def materialize_delta(adapter, path="mode"):
    """Dense delta matrix of any adapter.

    For the tensor-network family two independent computation paths exist:
    "mode" applies per-mode products to the core, "kron" forms the two
    Kronecker-factor matrices and sandwiches the rescaled, unfolded core.
    They must agree to 1e-10 relative; tests enforce this.
    """
    if isinstance(adapter, TeraAdapter):
        if path == "mode":
            return _tera_delta_mode_products(adapter)
        if path == "kron":
            return _tera_delta_kronecker(adapter)
        raise ValueError(f"unknown materialization path {path!r}")
    if isinstance(adapter, LoraAdapter):
        return adapter.a @ adapter.b
    if isinstance(adapter, VeraAdapter):
        return adapter.b[:, None] * (
            adapter.b_frozen @ (adapter.d[:, None] * adapter.a_frozen)
        )
    if isinstance(adapter, HiraAdapter):
        return (adapter.a @ adapter.b) * adapter.w0
    raise TypeError(f"not an adapter: {type(adapter).__name__}")


def apply_delta(adapter, x):
    """Delta-times-vector without forming the full delta where possible.

    The tensor-network path folds x over the column modes, contracts each of
    them with diag(d) @ factor, absorbs the core, and expands the row modes.
    The Hadamard family offers no factored route, so it materializes.
    """
    x = np.asarray(x, dtype=float)
    j1, j2 = adapter.shape
    if x.shape != (j2,):
        raise ValueError(f"expected a length-{j2} vector, got shape {x.shape}")
    if isinstance(adapter, TeraAdapter):
        k, order = adapter.scheme.split, adapter.scheme.order
        z = x.reshape(adapter.scheme.mode_sizes[k:])
        if z.ndim == 0:
            z = z.reshape(1)
        for j in range(order - k):
            s = adapter.d_vectors[k + j][:, None] * adapter.factor(k + j)
            z = mode_n_product(z, s, j)
        t = np.tensordot(
            adapter.core, z, axes=(tuple(range(k, order)), tuple(range(order - k)))
        )
        for i in range(k):
            t = mode_n_product(t, adapter.factor(i).T * adapter.d_vectors[i], i)
        return t.ravel()
    if isinstance(adapter, LoraAdapter):
        return adapter.a @ (adapter.b @ x)
    if isinstance(adapter, VeraAdapter):
        return adapter.b * (adapter.b_frozen @ (adapter.d * (adapter.a_frozen @ x)))
    if isinstance(adapter, HiraAdapter):
        return materialize_delta(adapter) @ x
    raise TypeError(f"not an adapter: {type(adapter).__name__}")


def merge(adapter, w0):
    """Final weight w0 + delta. The Hadamard family's delta already carries
    its own base-weight mask, so merging stays a plain addition."""
    w0 = np.asarray(w0, dtype=float)
    if w0.shape != adapter.shape:
        raise ValueError(f"base weight shape {w0.shape} != adapter {adapter.shape}")
    return w0 + materialize_delta(adapter)


def trainable_param_count(adapter) -> int:
    return sum(arr.size for arr in adapter.trainable_arrays())


# Pure-arithmetic counts, usable without allocating any adapter state. The
# 2^24-mode scheme has a 16M-entry core, so counting must never build one.

def tera_param_count(scheme: TensorizationScheme) -> int:
    return sum(scheme.ranks)


def lora_param_count(j1, j2, rank) -> int:
    return rank * (j1 + j2)


def hira_param_count(j1, j2, rank) -> int:
    return rank * (j1 + j2)


def vera_param_count(j1, rank) -> int:
    return j1 + rank


def vera_full_rank_param_count(j1, j2) -> int:
    # Smallest budget at which the frozen-pair family can reach a full-rank
    # delta: rank must hit min(j1, j2).
    return j1 + min(j1, j2)


def vera_rank_for_budget(j1, budget) -> int:
    """Rank that makes the frozen-pair family's budget match `budget`."""
    rank = budget - j1
    if rank < 1:
        raise ValueError(f"budget {budget} cannot be met: needs rank >= 1")
    return rank


def clone_trainable(adapter):
    """Copy of an adapter with fresh trainable arrays and shared frozen parts."""
    if isinstance(adapter, TeraAdapter):
        return TeraAdapter(
            scheme=adapter.scheme,
            entry=adapter.entry,
            d_vectors=[d.copy() for d in adapter.d_vectors],
            zero_init_mode=adapter.zero_init_mode,
            master_seed=adapter.master_seed,
            identity_factors=adapter.identity_factors,
        )
    if isinstance(adapter, LoraAdapter):
        return LoraAdapter(a=adapter.a.copy(), b=adapter.b.copy(), rank=adapter.rank)
    if isinstance(adapter, VeraAdapter):
        return VeraAdapter(
            b_frozen=adapter.b_frozen,
            a_frozen=adapter.a_frozen,
            b=adapter.b.copy(),
            d=adapter.d.copy(),
            rank=adapter.rank,
            master_seed=adapter.master_seed,
            d_init=adapter.d_init,
        )
    if isinstance(adapter, HiraAdapter):
        return HiraAdapter(
            a=adapter.a.copy(),
            b=adapter.b.copy(),
            w0=adapter.w0,
            rank=adapter.rank,
            w0_provenance=adapter.w0_provenance,
        )
    raise TypeError(f"not an adapter: {type(adapter).__name__}")


def save_checkpoint(adapter, path):
    """Write trainable state plus frozen-part provenance as JSON.

    Floats go through repr-level JSON encoding, which round-trips 64-bit
    values exactly. Frozen tensors are regenerated at load time from seeds,
    never stored by value.
    """
    doc = {"format_version": CHECKPOINT_FORMAT_VERSION}
    if isinstance(adapter, TeraAdapter):
        doc.update(
            adapter_type="tera",
            scheme={
                "mode_sizes": list(adapter.scheme.mode_sizes),
                "split": adapter.scheme.split,
                "ranks": list(adapter.scheme.ranks),
            },
            master_seed=adapter.master_seed,
            zero_init_mode=adapter.zero_init_mode,
            identity_factors=adapter.identity_factors,
            d_vectors=[d.tolist() for d in adapter.d_vectors],
        )
    elif isinstance(adapter, LoraAdapter):
        doc.update(
            adapter_type="lora",
            rank=adapter.rank,
            a=adapter.a.tolist(),
            b=adapter.b.tolist(),
        )
    elif isinstance(adapter, VeraAdapter):
        doc.update(
            adapter_type="vera",
            shape=list(adapter.shape),
            rank=adapter.rank,
            master_seed=adapter.master_seed,
            d_init=adapter.d_init,
            b=adapter.b.tolist(),
            d=adapter.d.tolist(),
        )
    elif isinstance(adapter, HiraAdapter):
        doc.update(
            adapter_type="hira",
            rank=adapter.rank,
            a=adapter.a.tolist(),
            b=adapter.b.tolist(),
            w0={
                "shape": list(adapter.w0.shape),
                "checksum": _checksum(adapter.w0),
                "provenance": adapter.w0_provenance,
            },
        )
    else:
        raise TypeError(f"not an adapter: {type(adapter).__name__}")
    with open(path, "w") as f:
        json.dump(doc, f, indent=1, sort_keys=True)
        f.write("\n")


def load_checkpoint(path, store=None, base_weight=None):
    """Restore an adapter from JSON.

    Families with store-resident frozen parts need `store`, and its master
    seed must match the one recorded at save time. The Hadamard family needs
    either synthetic provenance in the file or an explicit `base_weight`,
    which is verified against the recorded checksum.
    """
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc
    if doc.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format_version {doc.get('format_version')!r}"
        )
    kind = doc.get("adapter_type")
    if kind in ("tera", "vera"):
        if store is None:
            raise CheckpointError(f"{kind} checkpoints need a frozen-factor store")
        if store.master_seed != doc["master_seed"]:
            raise CheckpointError(
                f"store master_seed {store.master_seed} != checkpoint "
                f"master_seed {doc['master_seed']}"
            )
    if kind == "tera":
        s = doc["scheme"]
        scheme = TensorizationScheme(
            tuple(s["mode_sizes"]), s["split"], tuple(s["ranks"])
        )
        adapter = TeraAdapter(
            scheme=scheme,
            entry=store.tera_entry(scheme),
            d_vectors=[np.array(d, dtype=float) for d in doc["d_vectors"]],
            zero_init_mode=doc["zero_init_mode"],
            master_seed=doc["master_seed"],
            identity_factors=doc["identity_factors"],
        )
        for d, r in zip(adapter.d_vectors, scheme.ranks):
            if d.shape != (r,):
                raise CheckpointError("d vector length does not match scheme ranks")
        return adapter
    if kind == "lora":
        a = np.array(doc["a"], dtype=float)
        b = np.array(doc["b"], dtype=float)
        return LoraAdapter(a=a, b=b, rank=doc["rank"])
    if kind == "vera":
        j1, j2 = doc["shape"]
        b_frozen, a_frozen = store.vera_pair(j1, j2, doc["rank"])
        return VeraAdapter(
            b_frozen=b_frozen,
            a_frozen=a_frozen,
            b=np.array(doc["b"], dtype=float),
            d=np.array(doc["d"], dtype=float),
            rank=doc["rank"],
            master_seed=doc["master_seed"],
            d_init=doc["d_init"],
        )
    if kind == "hira":
        meta = doc["w0"]
        j1, j2 = meta["shape"]
        provenance = meta["provenance"]
        if base_weight is not None:
            w0 = np.asarray(base_weight, dtype=float)
        elif provenance is not None and provenance.get("kind") == "synthetic":
            w0 = synthetic_base_weight(j1, j2, provenance["seed"])
        else:
            raise CheckpointError(
                "hira checkpoint has no synthetic provenance; pass base_weight"
            )
        if w0.shape != (j1, j2):
            raise CheckpointError(f"base weight shape {w0.shape} != {(j1, j2)}")
        if _checksum(w0) != meta["checksum"]:
            raise CheckpointError("base weight does not match recorded checksum")
        return HiraAdapter(
            a=np.array(doc["a"], dtype=float),
            b=np.array(doc["b"], dtype=float),
            w0=w0,
            rank=doc["rank"],
            w0_provenance=provenance,
        )
    raise CheckpointError(f"unknown adapter_type {kind!r}")
