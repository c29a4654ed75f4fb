"""Budget-adaptive CNN inference with tunable activation sparsity and
simulated reduced-precision activations."""

from .activation import (
    CalibrationProfile,
    aa_relu,
    calibrate,
    calibrate_all,
    threshold_for_sparsity,
)
from .errors import (
    AdaptInferError,
    InfeasibleBudgetError,
    InvalidInputError,
    NumericError,
)
from .graph import (
    Dataset,
    LayerRuntimeConfig,
    LayerSpec,
    Model,
    WeightRef,
    baseline_config,
    evaluate_accuracy,
    infer,
    load_model,
    model_from_manifest,
)
from .tensor import (
    Precision,
    QuantParams,
    Tensor,
    cast,
    cast_array,
    derive_quant_params,
    histogram,
    measure_sparsity,
    read_aat,
    write_aat,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "AdaptInferError",
    "InvalidInputError",
    "NumericError",
    "InfeasibleBudgetError",
    "Precision",
    "QuantParams",
    "Tensor",
    "cast",
    "cast_array",
    "derive_quant_params",
    "measure_sparsity",
    "histogram",
    "read_aat",
    "write_aat",
    "aa_relu",
    "CalibrationProfile",
    "calibrate",
    "calibrate_all",
    "threshold_for_sparsity",
    "LayerSpec",
    "WeightRef",
    "LayerRuntimeConfig",
    "Model",
    "Dataset",
    "baseline_config",
    "load_model",
    "model_from_manifest",
    "infer",
    "evaluate_accuracy",
]
