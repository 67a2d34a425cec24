"""Toolkit for detecting super-resolution artifacts and scoring their prominence."""

__version__ = "0.1.0"

from .core import (
    ContractError,
    DataError,
    FormatError,
    PromkitError,
    ValidationError,
    ArtifactRecord,
    BlockGrid,
    load_image,
    load_manifest,
    load_mask,
    read_fmap,
    save_image,
    save_mask,
    write_fmap,
)
from .annotation import BootstrapCurve, VoteSet, bootstrap_ci, load_votes, prominence
from .evaluation import (
    ConfusionSums,
    EvalConfig,
    EvalReport,
    SubsetMetrics,
    combined_score,
    confusion,
    evaluate,
    f1,
    pr_auc,
    prominence_pr,
    prominent_subset_eval,
    select_threshold,
)
from .features import FeatureConfig, FeatureStack, build_feature_stack
from .finetune import (
    FinetunePair,
    add_rem_img,
    add_rem_pix,
    aggregate_scores,
    artificial_gt,
    delta_iou,
)
from .morphology import (
    Component,
    StructuringElement,
    binarize,
    close_mask,
    components,
    dilate,
    erode,
    open_mask,
    postprocess_mask,
)
from .regressor import (
    RegressorParams,
    TrainConfig,
    TrainResult,
    init_params,
    load_params,
    predict,
    save_params,
    train,
)

__all__ = [
    "__version__",
    "PromkitError",
    "FormatError",
    "DataError",
    "ValidationError",
    "ContractError",
    "ArtifactRecord",
    "BlockGrid",
    "load_image",
    "save_image",
    "load_mask",
    "save_mask",
    "read_fmap",
    "write_fmap",
    "load_manifest",
    "BootstrapCurve",
    "VoteSet",
    "bootstrap_ci",
    "load_votes",
    "prominence",
    "ConfusionSums",
    "EvalConfig",
    "EvalReport",
    "SubsetMetrics",
    "combined_score",
    "confusion",
    "evaluate",
    "f1",
    "pr_auc",
    "prominence_pr",
    "prominent_subset_eval",
    "select_threshold",
    "FeatureConfig",
    "FeatureStack",
    "build_feature_stack",
    "FinetunePair",
    "add_rem_img",
    "add_rem_pix",
    "aggregate_scores",
    "artificial_gt",
    "delta_iou",
    "Component",
    "StructuringElement",
    "binarize",
    "close_mask",
    "components",
    "dilate",
    "erode",
    "open_mask",
    "postprocess_mask",
    "RegressorParams",
    "TrainConfig",
    "TrainResult",
    "init_params",
    "load_params",
    "predict",
    "save_params",
    "train",
]
