"""Data splitting, unsampled ranking metrics and split-agreement analysis for sequential recommenders."""

from .core import (
    DataError,
    Dataset,
    Interaction,
    PreprocessConfig,
    Schema,
    UserSequence,
    dedup_consecutive,
    parse_event_log,
    pcore_filter,
    preprocess,
    sample_users,
    to_user_sequences,
)
from .splitting import (
    EvalInstance,
    SplitResult,
    SplitSpec,
    Strategy,
    Target,
    Validation,
    gts_cutoff,
    gts_split,
    loo_split,
    make_validation,
    read_manifest,
    select_targets,
    split,
    write_manifest,
)
from .metrics import MetricReport, apply_filter_seen, evaluate_run, hr_at_k, mrr_at_k, ndcg_at_k

__version__ = "0.1.0"

__all__ = [
    "DataError",
    "Dataset",
    "EvalInstance",
    "Interaction",
    "MetricReport",
    "PreprocessConfig",
    "Schema",
    "SplitResult",
    "SplitSpec",
    "Strategy",
    "Target",
    "UserSequence",
    "Validation",
    "apply_filter_seen",
    "dedup_consecutive",
    "evaluate_run",
    "gts_cutoff",
    "gts_split",
    "hr_at_k",
    "loo_split",
    "make_validation",
    "mrr_at_k",
    "ndcg_at_k",
    "parse_event_log",
    "pcore_filter",
    "preprocess",
    "read_manifest",
    "sample_users",
    "select_targets",
    "split",
    "to_user_sequences",
    "write_manifest",
]
