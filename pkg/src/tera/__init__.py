"""Tensorized random adapters for parameter-efficient weight updates.

The package is organised in four layers:

- ``tensor_ops``: tensorization schemes and the dense tensor algebra
  (unfold/fold, mode products, Kronecker products, rank and spectral
  norm estimation).
- ``adapters``: the adapter families (tera, lora, vera, hira), the
  shared frozen-factor store, materialization, and checkpoint i/o.
- ``training``: analytic gradients, finite-difference checking,
  optimizers, recovery and MLP adaptation tasks, and the alternating
  least squares estimator.
- ``analysis``: numerical verifiers for the rank, parameter-count and
  expressivity bounds, plus rank reports over trained adapters.

``tera.cli`` exposes the same functionality as a command line tool.
"""

from .tensor_ops import (
    SpectralNormEstimate,
    TensorizationScheme,
    equal_modes,
    fold,
    frobenius_norm,
    kron_chain,
    kronecker,
    mode_n_product,
    multi_mode_product,
    numerical_rank,
    pseudoinverse,
    svd,
    tensor_spectral_norm,
    unfold,
)
from .adapters import (
    CHECKPOINT_FORMAT_VERSION,
    CheckpointError,
    FrozenFactorStore,
    HiraAdapter,
    LoraAdapter,
    TeraAdapter,
    VeraAdapter,
    apply_delta,
    clone_trainable,
    hira_param_count,
    init_hira,
    init_lora,
    init_tera,
    init_vera,
    load_checkpoint,
    lora_param_count,
    materialize_delta,
    merge,
    save_checkpoint,
    synthetic_base_weight,
    tera_param_count,
    trainable_param_count,
    vera_full_rank_param_count,
    vera_param_count,
    vera_rank_for_budget,
)
from .training import (
    AlsResult,
    DivergenceError,
    MlpAdaptTask,
    OptimizerConfig,
    RecoveryTask,
    TrainReport,
    als_approx_error,
    build_adapter,
    delta_gradient,
    finetune_full,
    finite_difference_check,
    fit_mlp_adapt,
    fit_recovery,
    gaussian_recovery_task,
    make_mlp_adapt_task,
    make_optimizer,
    mlp_accuracy,
    mlp_predict,
    planted_recovery_task,
    prescribed_rank_recovery_task,
    prescribed_spectrum_recovery_task,
    recovery_gradients,
    recovery_loss,
    tera_gradient,
    write_loss_csv,
    write_report_json,
)
from .analysis import (
    EXPRESSIVITY_BOUND,
    PARAM_BOUND,
    RANK_BOUND,
    BoundReport,
    InstanceRejected,
    RankReport,
    multiplicative_partitions,
    rank_report,
    structural_max_rank,
    verify_expressivity_bound,
    verify_param_bound,
    verify_rank_bound,
    write_bound_report_json,
    write_rank_report_csv,
    write_rank_report_json,
)

__version__ = "0.1.0"

__all__ = [
    # tensor_ops
    "TensorizationScheme",
    "equal_modes",
    "unfold",
    "fold",
    "mode_n_product",
    "multi_mode_product",
    "kronecker",
    "kron_chain",
    "frobenius_norm",
    "svd",
    "pseudoinverse",
    "numerical_rank",
    "SpectralNormEstimate",
    "tensor_spectral_norm",
    # adapters
    "FrozenFactorStore",
    "TeraAdapter",
    "LoraAdapter",
    "VeraAdapter",
    "HiraAdapter",
    "init_tera",
    "init_lora",
    "init_vera",
    "init_hira",
    "materialize_delta",
    "apply_delta",
    "merge",
    "clone_trainable",
    "trainable_param_count",
    "tera_param_count",
    "lora_param_count",
    "vera_param_count",
    "vera_full_rank_param_count",
    "vera_rank_for_budget",
    "hira_param_count",
    "synthetic_base_weight",
    "save_checkpoint",
    "load_checkpoint",
    "CheckpointError",
    "CHECKPOINT_FORMAT_VERSION",
    # training
    "tera_gradient",
    "delta_gradient",
    "finite_difference_check",
    "OptimizerConfig",
    "make_optimizer",
    "RecoveryTask",
    "gaussian_recovery_task",
    "prescribed_rank_recovery_task",
    "prescribed_spectrum_recovery_task",
    "planted_recovery_task",
    "recovery_loss",
    "recovery_gradients",
    "TrainReport",
    "write_report_json",
    "write_loss_csv",
    "fit_recovery",
    "DivergenceError",
    "AlsResult",
    "als_approx_error",
    "MlpAdaptTask",
    "make_mlp_adapt_task",
    "mlp_predict",
    "mlp_accuracy",
    "build_adapter",
    "fit_mlp_adapt",
    "finetune_full",
    # analysis
    "BoundReport",
    "InstanceRejected",
    "RANK_BOUND",
    "PARAM_BOUND",
    "EXPRESSIVITY_BOUND",
    "verify_rank_bound",
    "verify_param_bound",
    "verify_expressivity_bound",
    "multiplicative_partitions",
    "structural_max_rank",
    "RankReport",
    "rank_report",
    "write_rank_report_csv",
    "write_rank_report_json",
    "write_bound_report_json",
    "__version__",
]
