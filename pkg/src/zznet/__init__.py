"""Rotation-equivariant, permutation-invariant networks for 2D point clouds.

The package is a plain-numpy stack: complex cloud types and group actions
(cloud), explicit equivariant linear-map catalogs with oracles (bases), a
small reverse-mode engine (engine, params), the layer vocabulary (layers),
the architectures (networks), training with Adam and checkpoints
(training), the synthetic rotation-estimation task (toydata), verification
suites (verify), and a command line (cli).
"""

__version__ = "0.1.0"

from .bases import (SM_SIZES, STAB0_SIZES, catalog_sm, catalog_stab0,
                    check_equivariance, fused_first_layer, xi_isomorphism)
from .cloud import (CloudPair, GramTensor, Permutation, PointCloud, Rotation,
                    angle_threshold, angular_error, gram, permute, rotate, tau)
from .networks import (Model, ModelConfig, broad_config, build_model,
                       deep_config, make_broad_model, make_deep_model,
                       nr_forward, nr_plus_forward, rotation_head,
                       vector_unit, weight_unit_ns, weight_unit_ns_plus,
                       zz_net_forward, zz_unit_step)
from .toydata import (ArrayDataset, DataGenConfig, ToyExample, as_arrays,
                      generate_dataset, generate_example, load_dataset,
                      project_to_segment, save_dataset)
from .training import (TrainConfig, TrainResult, evaluate, load_checkpoint,
                       load_model, lr_at_epoch, save_checkpoint, train)
from .verify import run_suites

__all__ = [
    "__version__",
    "SM_SIZES", "STAB0_SIZES", "catalog_sm", "catalog_stab0",
    "check_equivariance", "fused_first_layer", "xi_isomorphism",
    "CloudPair", "GramTensor", "Permutation", "PointCloud", "Rotation",
    "angle_threshold", "angular_error", "gram", "permute", "rotate", "tau",
    "Model", "ModelConfig", "broad_config", "build_model", "deep_config",
    "make_broad_model", "make_deep_model", "nr_forward", "nr_plus_forward",
    "rotation_head", "vector_unit", "weight_unit_ns", "weight_unit_ns_plus",
    "zz_net_forward", "zz_unit_step",
    "ArrayDataset", "DataGenConfig", "ToyExample", "as_arrays",
    "generate_dataset", "generate_example", "load_dataset",
    "project_to_segment", "save_dataset",
    "TrainConfig", "TrainResult", "evaluate", "load_checkpoint", "load_model",
    "lr_at_epoch", "save_checkpoint", "train",
    "run_suites",
]
