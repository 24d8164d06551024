"""Optimization of adapter parameters on desk-scale tasks.

Two synthetic tasks drive everything. Target-matrix recovery minimizes half
the squared Frobenius distance between an adapter's delta and a fixed target,
which directly instantiates the objective the expressivity bound is stated
over. Toy-MLP adaptation freezes a small pretrained network and trains only
adapter parameters against a shifted task, exercising the same workflow a
real fine-tune would.

Gradients are analytic (the tensor-network gradient follows from
multilinearity of the parameterization) and a central finite-difference
checker guards them. An alternating-least-squares estimator provides a
certified upper bound on the best achievable recovery error of the
tensor-network family, used by the expressivity-bound verifier.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .adapters import (
    HiraAdapter,
    LoraAdapter,
    TeraAdapter,
    VeraAdapter,
    clone_trainable,
    init_hira,
    init_lora,
    init_tera,
    init_vera,
    materialize_delta,
    trainable_param_count,
)
from .tensor_ops import TensorizationScheme, fold, mode_n_product, numerical_rank

REPORT_FORMAT_VERSION = 1

# Abort when the loss blows past this multiple of its initial value.
DIVERGENCE_FACTOR = 1e6


class DivergenceError(RuntimeError):
    """Loss became non-finite or exploded; carries the partial report."""

    def __init__(self, step, loss, report=None):
        super().__init__(f"training diverged at step {step}: loss={loss!r}")
        self.step = step
        self.loss = loss
        self.report = report


# ---------------------------------------------------------------------------
# Gradients


def tera_gradient(adapter: TeraAdapter, upstream: np.ndarray):
    """Gradients of <upstream, delta> with respect to each d vector.

    Fold the upstream matrix, pull it through every frozen factor, multiply
    by the core, and for mode i scale by every other mode's d vector and sum
    the remaining axes. No division by d entries anywhere, so zero-initialized
    vectors are safe, and a zero core slice yields an exactly zero gradient
    entry.
    """
    upstream = np.asarray(upstream, dtype=float)
    if upstream.shape != adapter.shape:
        raise ValueError(
            f"upstream gradient shape {upstream.shape} != delta shape {adapter.shape}"
        )
    scheme = adapter.scheme
    folded = fold(upstream, scheme)
    pulled = folded
    for m in range(scheme.order):
        pulled = mode_n_product(pulled, adapter.factor(m), m)
    weighted = adapter.core * pulled
    grads = []
    for i in range(scheme.order):
        scaled = weighted
        for m in range(scheme.order):
            if m == i:
                continue
            shape = [1] * scheme.order
            shape[m] = -1
            scaled = scaled * adapter.d_vectors[m].reshape(shape)
        axes = tuple(m for m in range(scheme.order) if m != i)
        grads.append(scaled.sum(axis=axes))
    return grads


def delta_gradient(adapter, upstream: np.ndarray):
    """Gradients of <upstream, delta> for the adapter's trainable arrays,
    in the same order as ``trainable_arrays()``."""
    upstream = np.asarray(upstream, dtype=float)
    if isinstance(adapter, TeraAdapter):
        return tera_gradient(adapter, upstream)
    if isinstance(adapter, LoraAdapter):
        return [upstream @ adapter.b.T, adapter.a.T @ upstream]
    if isinstance(adapter, VeraAdapter):
        mixed = adapter.b_frozen @ (adapter.d[:, None] * adapter.a_frozen)
        grad_b = (upstream * mixed).sum(axis=1)
        grad_d = ((adapter.b_frozen.T * adapter.b) @ upstream * adapter.a_frozen).sum(
            axis=1
        )
        return [grad_b, grad_d]
    if isinstance(adapter, HiraAdapter):
        masked = upstream * adapter.w0
        return [masked @ adapter.b.T, adapter.a.T @ masked]
    raise TypeError(f"not an adapter: {type(adapter).__name__}")


def finite_difference_check(loss_fn, grad_fn, adapter, h: float = 1e-5) -> float:
    """Worst relative error between analytic and central-difference gradients.

    ``loss_fn(adapter)`` evaluates the scalar loss at the adapter's current
    trainable state; ``grad_fn(adapter)`` returns analytic gradients matching
    ``trainable_arrays()``. Every coordinate is perturbed in place by +-h.
    The relative-error denominator is max(|analytic|, |numeric|, 1e-12).
    """
    if h <= 0:
        raise ValueError("h must be positive")
    analytic = grad_fn(adapter)
    worst = 0.0
    for arr, grad in zip(adapter.trainable_arrays(), analytic):
        flat = arr.ravel()
        gflat = np.asarray(grad, dtype=float).ravel()
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            plus = loss_fn(adapter)
            flat[idx] = orig - h
            minus = loss_fn(adapter)
            flat[idx] = orig
            numeric = (plus - minus) / (2.0 * h)
            denom = max(abs(gflat[idx]), abs(numeric), 1e-12)
            worst = max(worst, abs(gflat[idx] - numeric) / denom)
    return worst


# ---------------------------------------------------------------------------
# Optimizers


@dataclass
class OptimizerConfig:
    """Hyperparameters for one optimization run; echoed into every report."""

    algorithm: str = "adamw"  # "adamw" (decoupled weight decay) or "sgd-momentum"
    learning_rate: float = 1e-2
    betas: tuple = (0.9, 0.999)
    weight_decay: float = 0.0
    warmup_steps: int = 100
    max_steps: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.algorithm not in ("adamw", "sgd-momentum"):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.max_steps < 0 or self.warmup_steps < 0:
            raise ValueError("step counts must be non-negative")

    def to_dict(self):
        return {
            "algorithm": self.algorithm,
            "learning_rate": self.learning_rate,
            "betas": list(self.betas),
            "weight_decay": self.weight_decay,
            "warmup_steps": self.warmup_steps,
            "max_steps": self.max_steps,
            "seed": self.seed,
        }


class _Optimizer:
    """First-order updates with linear learning-rate warmup, in place."""

    def __init__(self, cfg: OptimizerConfig, arrays):
        self.cfg = cfg
        self.arrays = list(arrays)
        self.t = 0
        if cfg.algorithm == "adamw":
            self._m = [np.zeros_like(a) for a in self.arrays]
            self._v = [np.zeros_like(a) for a in self.arrays]
        else:
            self._vel = [np.zeros_like(a) for a in self.arrays]

    def _lr(self):
        lr = self.cfg.learning_rate
        if self.cfg.warmup_steps > 0:
            lr *= min(1.0, self.t / self.cfg.warmup_steps)
        return lr

    def step(self, grads):
        self.t += 1
        lr = self._lr()
        b1, b2 = self.cfg.betas
        wd = self.cfg.weight_decay
        if self.cfg.algorithm == "adamw":
            eps = 1e-8
            for arr, g, m, v in zip(self.arrays, grads, self._m, self._v):
                g = np.asarray(g, dtype=float)
                m *= b1
                m += (1 - b1) * g
                v *= b2
                v += (1 - b2) * g * g
                m_hat = m / (1 - b1**self.t)
                v_hat = v / (1 - b2**self.t)
                arr -= lr * (m_hat / (np.sqrt(v_hat) + eps) + wd * arr)
        else:
            for arr, g, vel in zip(self.arrays, grads, self._vel):
                vel *= b1
                vel += np.asarray(g, dtype=float)
                arr -= lr * (vel + wd * arr)


def make_optimizer(cfg: OptimizerConfig, arrays) -> _Optimizer:
    return _Optimizer(cfg, arrays)


# ---------------------------------------------------------------------------
# Tasks


@dataclass
class RecoveryTask:
    """A fixed target matrix to approximate with an adapter delta."""

    target: np.ndarray
    kind: str
    seed: int
    detail: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.target.shape

    def describe(self):
        doc = {"kind": self.kind, "seed": self.seed, "shape": list(self.shape)}
        doc.update(self.detail)
        return doc


def gaussian_recovery_task(j1, j2, seed) -> RecoveryTask:
    """Dense standard-normal target; full rank with probability one."""
    rng = np.random.default_rng(seed)
    return RecoveryTask(target=rng.standard_normal((j1, j2)), kind="gaussian", seed=seed)


def prescribed_rank_recovery_task(j1, j2, rank, seed) -> RecoveryTask:
    rng = np.random.default_rng(seed)
    target = rng.standard_normal((j1, rank)) @ rng.standard_normal((rank, j2))
    return RecoveryTask(target=target, kind="rank", seed=seed, detail={"rank": rank})


def prescribed_spectrum_recovery_task(j1, j2, spectrum, seed) -> RecoveryTask:
    """Target with the given singular values and random orthogonal factors."""
    spectrum = np.asarray(spectrum, dtype=float)
    if spectrum.size > min(j1, j2):
        raise ValueError("spectrum longer than min(j1, j2)")
    rng = np.random.default_rng(seed)
    q1, _ = np.linalg.qr(rng.standard_normal((j1, spectrum.size)))
    q2, _ = np.linalg.qr(rng.standard_normal((j2, spectrum.size)))
    target = (q1 * spectrum) @ q2.T
    return RecoveryTask(
        target=target, kind="spectrum", seed=seed, detail={"spectrum": spectrum.tolist()}
    )


def planted_recovery_task(
    scheme: TensorizationScheme, store, seed, identity_factors=False
) -> RecoveryTask:
    """Target materialized from the adapter family itself, so zero residual is
    achievable. The planted d entries have magnitude in [0.5, 1.5] with random
    signs, keeping every mode's contribution well away from zero."""
    adapter = init_tera(
        scheme.rows, scheme.cols, scheme, store, identity_factors=identity_factors
    )
    rng = np.random.default_rng(seed)
    for d in adapter.d_vectors:
        magnitude = rng.uniform(0.5, 1.5, size=d.shape)
        sign = rng.choice((-1.0, 1.0), size=d.shape)
        d[:] = magnitude * sign
    return RecoveryTask(
        target=materialize_delta(adapter),
        kind="planted",
        seed=seed,
        detail={
            "mode_sizes": list(scheme.mode_sizes),
            "split": scheme.split,
            "ranks": list(scheme.ranks),
            "master_seed": store.master_seed,
            "identity_factors": identity_factors,
        },
    )


def recovery_loss(adapter, task: RecoveryTask) -> float:
    diff = materialize_delta(adapter) - task.target
    return 0.5 * float(np.sum(diff * diff))


def recovery_gradients(adapter, task: RecoveryTask):
    return delta_gradient(adapter, materialize_delta(adapter) - task.target)


# ---------------------------------------------------------------------------
# Reports


@dataclass
class TrainReport:
    """Everything a run produced: curve, final metrics, ranks, config echo."""

    loss_curve: list
    final_loss: float
    wall_time_seconds: float
    trainable_param_count: int
    delta_ranks: dict
    config: dict
    metrics: dict = field(default_factory=dict)

    def to_json_dict(self):
        return {
            "format_version": REPORT_FORMAT_VERSION,
            "final_loss": self.final_loss,
            "wall_time_seconds": self.wall_time_seconds,
            "trainable_param_count": self.trainable_param_count,
            "delta_ranks": self.delta_ranks,
            "metrics": self.metrics,
            "config": self.config,
            "loss_curve": [[int(s), float(l)] for s, l in self.loss_curve],
        }


def write_report_json(report: TrainReport, path):
    with open(path, "w") as f:
        json.dump(report.to_json_dict(), f, indent=1, sort_keys=True)
        f.write("\n")


def write_loss_csv(report: TrainReport, path):
    """Loss curve as CSV. Values are written with repr-level precision and no
    timestamps, so reruns with the same config are byte-identical."""
    lines = ["step,loss"]
    lines += [f"{int(s)},{float(l)!r}" for s, l in report.loss_curve]
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def _check_divergence(step, loss, initial_loss, partial_report_fn):
    limit = DIVERGENCE_FACTOR * max(initial_loss, 1e-30)
    if not math.isfinite(loss) or loss > limit:
        raise DivergenceError(step, loss, report=partial_report_fn())


# ---------------------------------------------------------------------------
# Recovery fitting


def fit_recovery(adapter, task: RecoveryTask, cfg: OptimizerConfig) -> TrainReport:
    """Minimize half the squared Frobenius distance to the target in place.

    Works for every adapter family. Deterministic given the adapter state,
    task, and config. Raises DivergenceError (with the partial report
    attached) if the loss explodes or becomes non-finite.
    """
    if adapter.shape != task.shape:
        raise ValueError(f"adapter shape {adapter.shape} != target {task.shape}")
    t0 = time.perf_counter()
    opt = make_optimizer(cfg, adapter.trainable_arrays())
    curve = []
    target_norm = float(np.linalg.norm(task.target))

    def build_report(final_loss):
        delta = materialize_delta(adapter)
        residual = float(np.linalg.norm(delta - task.target))
        return TrainReport(
            loss_curve=list(curve),
            final_loss=final_loss,
            wall_time_seconds=time.perf_counter() - t0,
            trainable_param_count=trainable_param_count(adapter),
            delta_ranks={"adapter": numerical_rank(delta)},
            config={
                "task": task.describe(),
                "optimizer": cfg.to_dict(),
                "family": adapter.family,
                "shape": list(adapter.shape),
            },
            metrics={
                "final_residual": residual,
                "final_relative_residual": residual / max(target_norm, 1e-30),
            },
        )

    initial_loss = recovery_loss(adapter, task)
    for step in range(cfg.max_steps):
        delta = materialize_delta(adapter)
        diff = delta - task.target
        loss = 0.5 * float(np.sum(diff * diff))
        curve.append((step, loss))
        _check_divergence(step, loss, initial_loss, lambda: build_report(loss))
        opt.step(delta_gradient(adapter, diff))
    final_loss = recovery_loss(adapter, task)
    curve.append((cfg.max_steps, final_loss))
    _check_divergence(
        cfg.max_steps, final_loss, initial_loss, lambda: build_report(final_loss)
    )
    return build_report(final_loss)


# ---------------------------------------------------------------------------
# Alternating least squares


@dataclass
class AlsResult:
    """Upper bound on the family's best squared recovery error.

    ``value`` is the smallest ``||target - delta||_F^2`` found across starts,
    sweeps, and gradient polish; the true minimum can only be lower.
    """

    value: float
    d_vectors: list
    ridge_fallbacks: int
    sweep_values: list  # per-sweep objective of the best ALS start


def als_approx_error(
    adapter: TeraAdapter,
    target: np.ndarray,
    sweeps: int = 50,
    extra_starts: int = 3,
    polish_steps: int = 200,
    seed: int = 0,
    ridge: float = 1e-10,
) -> AlsResult:
    """Alternating least squares over the d vectors, then gradient polish.

    With all other modes fixed, the delta is linear in one mode's d vector,
    so each subproblem is exact least squares (solved by column-basis
    materialization). Modes are swept cyclically; the objective is monotone
    non-increasing within a sweep because each update is an exact minimizer
    (rank-deficient subproblems fall back to a ridge solve and are kept only
    if they do not increase the objective). The adapter itself is never
    mutated; work happens on a clone.

    Multiple starts matter: the zero-initialized state is a stationary point
    where every subproblem for the other modes degenerates, so ALS begins
    from all-ones plus ``extra_starts`` random d assignments.
    """
    if sweeps < 1:
        raise ValueError("sweeps must be >= 1")
    if not isinstance(adapter, TeraAdapter):
        raise TypeError("alternating least squares applies to the tensor-network family")
    target = np.asarray(target, dtype=float)
    if target.shape != adapter.shape:
        raise ValueError(f"target shape {target.shape} != adapter {adapter.shape}")

    work = clone_trainable(adapter)
    scheme = work.scheme
    w_vec = target.ravel()
    rng = np.random.default_rng(seed)

    def objective():
        diff = materialize_delta(work) - target
        return float(np.sum(diff * diff))

    starts = [[np.ones(r) for r in scheme.ranks]]
    for _ in range(extra_starts):
        starts.append([rng.standard_normal(r) for r in scheme.ranks])

    best_value = math.inf
    best_d = None
    best_sweep_values = []
    ridge_fallbacks = 0

    for start in starts:
        for d, s in zip(work.d_vectors, start):
            d[:] = s
        sweep_values = []
        for _ in range(sweeps):
            for mode in range(scheme.order):
                r = scheme.ranks[mode]
                previous = work.d_vectors[mode].copy()
                phi = np.empty((w_vec.size, r))
                for basis in range(r):
                    work.d_vectors[mode][:] = 0.0
                    work.d_vectors[mode][basis] = 1.0
                    phi[:, basis] = materialize_delta(work).ravel()
                solution, _, lstsq_rank, _ = np.linalg.lstsq(phi, w_vec, rcond=None)
                if lstsq_rank < r:
                    ridge_fallbacks += 1
                    gram = phi.T @ phi + ridge * np.eye(r)
                    candidate = np.linalg.solve(gram, phi.T @ w_vec)
                    # Keep the ridge solution only when it does not undo the
                    # monotone decrease an exact minimizer would give.
                    if np.linalg.norm(w_vec - phi @ candidate) <= np.linalg.norm(
                        w_vec - phi @ previous
                    ):
                        solution = candidate
                    else:
                        solution = previous
                work.d_vectors[mode][:] = solution
            sweep_values.append(objective())
        if sweep_values[-1] < best_value:
            best_value = sweep_values[-1]
            best_d = [d.copy() for d in work.d_vectors]
            best_sweep_values = sweep_values

    # Gradient polish from the best start; keep the best iterate seen.
    for d, s in zip(work.d_vectors, best_d):
        d[:] = s
    if polish_steps > 0:
        polish_cfg = OptimizerConfig(
            algorithm="adamw",
            learning_rate=1e-2,
            warmup_steps=0,
            max_steps=polish_steps,
            seed=seed,
        )
        opt = make_optimizer(polish_cfg, work.d_vectors)
        for _ in range(polish_steps):
            diff = materialize_delta(work) - target
            opt.step(delta_gradient(work, 2.0 * diff))
            value = objective()
            if value < best_value:
                best_value = value
                best_d = [d.copy() for d in work.d_vectors]

    return AlsResult(
        value=best_value,
        d_vectors=best_d,
        ridge_fallbacks=ridge_fallbacks,
        sweep_values=best_sweep_values,
    )


# ---------------------------------------------------------------------------
# Toy MLP adaptation


_MLP_TEACHER_TAG = 11
_MLP_DATA_TAG = 12
_MLP_INIT_TAG = 13
_MLP_ROTATION_TAG = 14


@dataclass
class MlpAdaptTask:
    """Frozen pretrained MLP plus source/target datasets.

    The target task feeds the network rotated inputs while keeping the labels
    of the unrotated ones, so a good adaptation must effectively undo an
    orthogonal rotation: a full-rank change to the first weight matrix.
    """

    base_weights: list
    n_classes: int
    source_train: tuple
    source_test: tuple
    target_train: tuple
    target_test: tuple
    attach_layers: tuple
    seed: int
    pretrain_config: dict
    layer_sizes: tuple

    def describe(self):
        return {
            "kind": "mlp-adapt",
            "layer_sizes": list(self.layer_sizes),
            "n_classes": self.n_classes,
            "attach_layers": list(self.attach_layers),
            "seed": self.seed,
            "pretrain": self.pretrain_config,
            "n_train": int(self.target_train[0].shape[0]),
            "n_test": int(self.target_test[0].shape[0]),
        }


def _mlp_forward(weights, x):
    h = x
    for w in weights[:-1]:
        h = np.tanh(h @ w.T)
    return h @ weights[-1].T


def mlp_predict(weights, x, n_classes):
    return np.argmax(_mlp_forward(weights, x)[:, :n_classes], axis=1)


def mlp_accuracy(weights, data, n_classes) -> float:
    x, y = data
    return float(np.mean(mlp_predict(weights, x, n_classes) == y))


def _mlp_loss_and_grads(weights, x, y, n_classes):
    """Cross-entropy on the first ``n_classes`` outputs; gradients per weight."""
    activations = [x]
    h = x
    for layer, w in enumerate(weights):
        z = h @ w.T
        h = np.tanh(z) if layer < len(weights) - 1 else z
        activations.append(h)
    scores = h[:, :n_classes]
    shifted = scores - scores.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    n = x.shape[0]
    loss = float(-np.mean(np.log(probs[np.arange(n), y] + 1e-300)))
    dscores = probs.copy()
    dscores[np.arange(n), y] -= 1.0
    dscores /= n
    dh = np.zeros_like(h)
    dh[:, :n_classes] = dscores
    grads = [None] * len(weights)
    for layer in range(len(weights) - 1, -1, -1):
        out = activations[layer + 1]
        dz = dh if layer == len(weights) - 1 else dh * (1.0 - out * out)
        grads[layer] = dz.T @ activations[layer]
        dh = dz @ weights[layer]
    return loss, grads


def make_mlp_adapt_task(
    layer_sizes=(64, 64, 64, 64),
    n_classes=8,
    n_train=1024,
    n_test=512,
    seed=0,
    attach_layers=None,
    pretrain_steps=300,
    pretrain_lr=1e-2,
) -> MlpAdaptTask:
    """Build datasets, pretrain the base MLP on the source task, freeze it.

    ``layer_sizes`` lists the layer widths, so ``len(layer_sizes) - 1`` weight
    matrices are created. Labels come from a fixed random teacher network;
    the source task uses raw inputs, the target task rotates the inputs by a
    random orthogonal matrix while keeping the unrotated labels. Everything
    derives from ``seed``; rebuilding with the same arguments is bit-exact.
    """
    if len(layer_sizes) < 2:
        raise ValueError("need at least one weight matrix")
    if n_classes > layer_sizes[-1]:
        raise ValueError("n_classes cannot exceed the output width")
    shapes = [(o, i) for i, o in zip(layer_sizes[:-1], layer_sizes[1:])]
    if attach_layers is None:
        attach_layers = tuple(range(len(shapes)))

    def rng_for(tag):
        return np.random.default_rng(np.random.SeedSequence([tag, int(seed)]))

    teacher_rng = rng_for(_MLP_TEACHER_TAG)
    teacher = [
        teacher_rng.standard_normal(s) / math.sqrt(s[1]) for s in shapes
    ]
    data_rng = rng_for(_MLP_DATA_TAG)
    in_dim = layer_sizes[0]

    def labeled(n):
        x = data_rng.standard_normal((n, in_dim))
        y = mlp_predict(teacher, x, n_classes)
        return x, y

    source_train = labeled(n_train)
    source_test = labeled(n_test)
    rotation_rng = rng_for(_MLP_ROTATION_TAG)
    rotation, _ = np.linalg.qr(rotation_rng.standard_normal((in_dim, in_dim)))

    def rotated(n):
        x = data_rng.standard_normal((n, in_dim))
        y = mlp_predict(teacher, x, n_classes)
        return x @ rotation.T, y

    target_train = rotated(n_train)
    target_test = rotated(n_test)

    init_rng = rng_for(_MLP_INIT_TAG)
    weights = [init_rng.standard_normal(s) / math.sqrt(s[1]) for s in shapes]
    pretrain_cfg = OptimizerConfig(
        algorithm="adamw",
        learning_rate=pretrain_lr,
        warmup_steps=min(100, pretrain_steps),
        max_steps=pretrain_steps,
        seed=seed,
    )
    opt = make_optimizer(pretrain_cfg, weights)
    x, y = source_train
    for _ in range(pretrain_steps):
        _, grads = _mlp_loss_and_grads(weights, x, y, n_classes)
        opt.step(grads)
    for w in weights:
        w.setflags(write=False)

    return MlpAdaptTask(
        base_weights=weights,
        n_classes=n_classes,
        source_train=source_train,
        source_test=source_test,
        target_train=target_train,
        target_test=target_test,
        attach_layers=tuple(attach_layers),
        seed=int(seed),
        pretrain_config={"steps": pretrain_steps, "learning_rate": pretrain_lr},
        layer_sizes=tuple(layer_sizes),
    )


def build_adapter(
    family,
    j1,
    j2,
    *,
    store=None,
    scheme=None,
    rank=8,
    seed=0,
    w0=None,
    default_mode_size=4,
):
    """Construct a zero-delta adapter of the named family.

    ``family`` is one of tera, tera_iden, lora, vera, hira. The tensor-network
    families default to a one-sided scheme (row dimension kept whole, column
    dimension split into equal modes) when no scheme is given.
    """
    if family in ("tera", "tera_iden"):
        if scheme is None:
            scheme = TensorizationScheme.one_sided(j1, j2, default_mode_size)
        if store is None:
            raise ValueError(f"{family} needs a frozen-factor store")
        return init_tera(
            j1, j2, scheme, store, identity_factors=(family == "tera_iden")
        )
    if family == "lora":
        return init_lora(j1, j2, rank, seed=seed)
    if family == "vera":
        if store is None:
            raise ValueError("vera needs a frozen-factor store")
        return init_vera(j1, j2, rank, store)
    if family == "hira":
        if w0 is None:
            raise ValueError("hira needs the base weight it masks")
        return init_hira(j1, j2, rank, w0=w0, seed=seed)
    raise ValueError(f"unknown adapter family {family!r}")


def fit_mlp_adapt(
    task: MlpAdaptTask,
    family,
    cfg: OptimizerConfig,
    *,
    store=None,
    scheme=None,
    rank=8,
    adapter_seed=0,
):
    """Train adapters on the target task with the base MLP frozen.

    Returns ``(report, adapters)`` where ``adapters`` maps layer index to the
    trained adapter. Only adapter parameters move; the base weights stay
    read-only throughout. The report records target-task accuracy before and
    after adaptation plus each delta's numerical rank.
    """
    t0 = time.perf_counter()
    adapters = {}
    for layer in task.attach_layers:
        j1, j2 = task.base_weights[layer].shape
        adapters[layer] = build_adapter(
            family,
            j1,
            j2,
            store=store,
            scheme=scheme,
            rank=rank,
            seed=adapter_seed + layer,
            w0=task.base_weights[layer],
        )
    all_arrays = []
    for layer in task.attach_layers:
        all_arrays.extend(adapters[layer].trainable_arrays())
    opt = make_optimizer(cfg, all_arrays)

    x, y = task.target_train
    base_accuracy = mlp_accuracy(task.base_weights, task.target_test, task.n_classes)

    def effective_weights():
        out = list(task.base_weights)
        for layer, adapter in adapters.items():
            out[layer] = out[layer] + materialize_delta(adapter)
        return out

    def build_report(curve, final_loss):
        weights = effective_weights()
        ranks = {
            f"layer{layer}": numerical_rank(materialize_delta(adapter))
            for layer, adapter in adapters.items()
        }
        return TrainReport(
            loss_curve=list(curve),
            final_loss=final_loss,
            wall_time_seconds=time.perf_counter() - t0,
            trainable_param_count=sum(
                trainable_param_count(a) for a in adapters.values()
            ),
            delta_ranks=ranks,
            config={
                "task": task.describe(),
                "optimizer": cfg.to_dict(),
                "family": family,
                "rank": rank,
                "scheme": None
                if scheme is None
                else {
                    "mode_sizes": list(scheme.mode_sizes),
                    "split": scheme.split,
                    "ranks": list(scheme.ranks),
                },
                "adapter_seed": adapter_seed,
            },
            metrics={
                "base_target_accuracy": base_accuracy,
                "target_test_accuracy": mlp_accuracy(
                    weights, task.target_test, task.n_classes
                ),
                "target_train_accuracy": mlp_accuracy(
                    weights, task.target_train, task.n_classes
                ),
            },
        )

    curve = []
    initial_loss, _ = _mlp_loss_and_grads(effective_weights(), x, y, task.n_classes)
    for step in range(cfg.max_steps):
        weights = effective_weights()
        loss, weight_grads = _mlp_loss_and_grads(weights, x, y, task.n_classes)
        curve.append((step, loss))
        _check_divergence(
            step, loss, initial_loss, lambda: build_report(curve, loss)
        )
        grads = []
        for layer in task.attach_layers:
            grads.extend(delta_gradient(adapters[layer], weight_grads[layer]))
        opt.step(grads)
    final_loss, _ = _mlp_loss_and_grads(effective_weights(), x, y, task.n_classes)
    curve.append((cfg.max_steps, final_loss))
    _check_divergence(
        cfg.max_steps, final_loss, initial_loss, lambda: build_report(curve, final_loss)
    )
    return build_report(curve, final_loss), adapters


def finetune_full(task: MlpAdaptTask, cfg: OptimizerConfig):
    """Unconstrained fine-tune of every weight on the target task.

    Returns ``(weights, per_layer_updates)`` where the updates are the ideal
    deltas an adapter would have to express. Used as the reference point for
    rank analysis of adapter families.
    """
    weights = [w.copy() for w in task.base_weights]
    opt = make_optimizer(cfg, weights)
    x, y = task.target_train
    initial_loss, _ = _mlp_loss_and_grads(weights, x, y, task.n_classes)
    for step in range(cfg.max_steps):
        loss, grads = _mlp_loss_and_grads(weights, x, y, task.n_classes)
        _check_divergence(step, loss, initial_loss, lambda: None)
        opt.step(grads)
    updates = [w - b for w, b in zip(weights, task.base_weights)]
    return weights, updates
