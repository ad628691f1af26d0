"""Probabilistic circuits with exact curvature and sharpness-aware learning."""

from .circuit import (
    Circuit,
    LeafSpec,
    Node,
    PairClass,
    ParamSet,
    PathPair,
    ProductPair,
    SumEdge,
    SumPair,
    ValidationReport,
    classify_pair,
    deserialize,
    leaf_node,
    product_node,
    serialize,
    sum_node,
    validate,
)
from .curvature import (
    full_hessian_tree,
    hessian_diag,
    hessian_trace,
    top_eigenvalues,
    trace_penalty_gradient,
)
from .evaluate import EvalTrace, forward, product_complement
from .flows import FlowTable, backward, loglik_gradient
from .learning import (
    RegularizerConfig,
    TrainReport,
    cubic_update_oracle,
    em_step_sharp,
    em_step_vanilla,
    em_train,
    sgd_train,
    sharp_update,
    update_leaves,
)
from .structure import HcltConfig, RatConfig, build_hclt, build_rat, chow_liu_tree

__all__ = [
    "HcltConfig",
    "RatConfig",
    "RegularizerConfig",
    "TrainReport",
    "build_hclt",
    "build_rat",
    "chow_liu_tree",
    "cubic_update_oracle",
    "em_step_sharp",
    "em_step_vanilla",
    "em_train",
    "full_hessian_tree",
    "hessian_diag",
    "hessian_trace",
    "sgd_train",
    "sharp_update",
    "top_eigenvalues",
    "trace_penalty_gradient",
    "update_leaves",
    "Circuit",
    "EvalTrace",
    "FlowTable",
    "LeafSpec",
    "Node",
    "PairClass",
    "ParamSet",
    "PathPair",
    "ProductPair",
    "SumEdge",
    "SumPair",
    "ValidationReport",
    "backward",
    "classify_pair",
    "deserialize",
    "forward",
    "leaf_node",
    "loglik_gradient",
    "product_complement",
    "product_node",
    "serialize",
    "sum_node",
    "validate",
]
