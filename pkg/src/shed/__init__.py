"""shed: refine a large embedded corpus into a small high-quality subset.

The flow is cluster -> proxy Shapley scoring -> quality-aware sampling.
Each step is exposed on its own so callers can mix and match.
"""

__version__ = "0.1.0"

from . import errors
from .clustering import (
    ClusterConfig,
    ClusterModel,
    default_num_clusters,
    dump_cluster_model,
    kmeans_fit,
    load_cluster_model,
    select_proxies,
)
from .dataset import (
    EmbeddedDataset,
    InstanceRecord,
    SelectionResult,
    export_selection,
    fnv1a64,
    load_embeddings,
    read_selection,
    write_embeddings,
    write_records,
)
from .pipeline import RunConfig, RunManifest, derive_seed, resolve_value_spec, run_pipeline
from .planner import (
    BudgetPlan,
    ComplexityParams,
    estimate_runtime,
    estimate_theta,
    plan_budget,
)
from .sampling import (
    ClusterScoreTable,
    SamplingConfig,
    SamplingMethod,
    build_score_table,
    cluster_probabilities,
    qocs_sample,
    qwcs_sample,
    random_sample,
    sample,
)
from .valuation import (
    ShapleyConfig,
    ShapleyScores,
    ValueFunctionSpec,
    ValueKind,
    approximate_shapley,
    builtin_value,
    default_group_size,
    evaluate_value,
    exact_shapley,
)

__all__ = [
    "BudgetPlan",
    "ClusterConfig",
    "ClusterModel",
    "ClusterScoreTable",
    "ComplexityParams",
    "EmbeddedDataset",
    "InstanceRecord",
    "RunConfig",
    "RunManifest",
    "SamplingConfig",
    "SamplingMethod",
    "SelectionResult",
    "ShapleyConfig",
    "ShapleyScores",
    "ValueFunctionSpec",
    "ValueKind",
    "approximate_shapley",
    "build_score_table",
    "builtin_value",
    "cluster_probabilities",
    "default_group_size",
    "default_num_clusters",
    "derive_seed",
    "dump_cluster_model",
    "errors",
    "estimate_runtime",
    "estimate_theta",
    "evaluate_value",
    "exact_shapley",
    "export_selection",
    "fnv1a64",
    "kmeans_fit",
    "load_cluster_model",
    "load_embeddings",
    "plan_budget",
    "qocs_sample",
    "qwcs_sample",
    "random_sample",
    "read_selection",
    "resolve_value_spec",
    "run_pipeline",
    "sample",
    "select_proxies",
    "write_embeddings",
    "write_records",
]
