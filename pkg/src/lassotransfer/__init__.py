"""Penalized GLMs with transfer primitives (fixed offsets, per-feature
penalty factors), pretrained-lasso pipelines, and simulation/theory labs."""

from .data import (
    BINOMIAL,
    Controls,
    Dataset,
    Family,
    GAUSSIAN,
    PenaltySpec,
    multigaussian,
    multinomial,
)
from .solver import (
    PathFit,
    fit_grouped_path,
    fit_path,
    kkt_residual,
    lambda_max,
    predict,
    soft_threshold,
)
from .selection import CvFit, FoldPlan, auc, cv_path, make_folds
from .pretrain import (
    DEFAULT_ALPHA_GRID,
    PretrainModel,
    TransferArtifact,
    artifact_transfer,
    build_transfer,
    extract_artifact,
    pretrain_fit,
    pretrain_predict,
)
from .multitask import (
    ChainModel,
    MultiResponseModel,
    OneVsRestModel,
    chain_predict,
    chain_pretrain,
    multinomial_pretrain,
    multiresponse_predict,
    multiresponse_pretrain,
    one_vs_rest_predict,
)
from .extensions import (
    BoostBasis,
    CartNode,
    CartTree,
    GroupGeneralizer,
    RLearnerFit,
    Stump,
    boost_basis,
    fit_group_generalizer,
    generalize_predict,
    learn_groups_cart,
    rlearner_predict,
    rlearner_pretrain,
)
from .theory import (
    RecoverySpec,
    TheoryReport,
    TwoStageSpec,
    averaging_distance,
    check_irrepresentability,
    recovery_experiment,
    subgroup_isometry_delta,
    two_stage_error_experiment,
    verify_implication,
)

__version__ = "0.1.0"

__all__ = [
    "BINOMIAL",
    "BoostBasis",
    "CartNode",
    "CartTree",
    "ChainModel",
    "Controls",
    "CvFit",
    "DEFAULT_ALPHA_GRID",
    "Dataset",
    "Family",
    "FoldPlan",
    "GAUSSIAN",
    "GroupGeneralizer",
    "MultiResponseModel",
    "OneVsRestModel",
    "PathFit",
    "PenaltySpec",
    "PretrainModel",
    "RLearnerFit",
    "RecoverySpec",
    "Stump",
    "TheoryReport",
    "TransferArtifact",
    "TwoStageSpec",
    "artifact_transfer",
    "auc",
    "averaging_distance",
    "boost_basis",
    "build_transfer",
    "chain_predict",
    "chain_pretrain",
    "check_irrepresentability",
    "cv_path",
    "extract_artifact",
    "fit_group_generalizer",
    "fit_grouped_path",
    "fit_path",
    "generalize_predict",
    "kkt_residual",
    "lambda_max",
    "learn_groups_cart",
    "make_folds",
    "multigaussian",
    "multinomial",
    "multinomial_pretrain",
    "multiresponse_predict",
    "multiresponse_pretrain",
    "one_vs_rest_predict",
    "predict",
    "pretrain_fit",
    "pretrain_predict",
    "recovery_experiment",
    "rlearner_predict",
    "rlearner_pretrain",
    "soft_threshold",
    "subgroup_isometry_delta",
    "two_stage_error_experiment",
    "verify_implication",
    "__version__",
]
