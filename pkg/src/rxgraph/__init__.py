"""Patient-graph kernels with a metric-learned fusion embedding.

Event records become weighted acyclic patient graphs; three graph kernels
(Weisfeiler-Lehman subtrees, a temporal topology kernel, vertex histograms)
turn cohorts into Gram matrices; a small hand-differentiated network fuses
the kernel rows into an embedding trained jointly with a contrastive term
(Euclidean or cosine) and a sigmoid outcome classifier; an evaluation
harness compares both metrics against linear baselines under balanced and
imbalanced cohorts with paired t-tests.
"""

from .estimator import KernelEmbeddingClassifier, PatientGraphKernel
from .evaluate import (
    EvalReport,
    ExperimentConfig,
    FoldPlan,
    Metrics,
    TTestResult,
    compute_metrics,
    export_embeddings,
    paired_t_test,
    run_experiment,
    stratified_kfold,
)
from .graphs import PatientGraph, build_patient_graph, validate_patient_graph
from .kernels import (
    GramError,
    GramMatrix,
    KernelKind,
    cross_gram,
    gram_matrix,
    pairwise_kernel,
    psd_check,
    read_gram,
    temporal_topological_kernel,
    vertex_histogram_kernel,
    wl_subtree_kernel,
    write_gram,
)
from .net import (
    EmbedNet,
    NetConfig,
    TrainingDivergedError,
    TrainTrace,
    binary_cross_entropy,
    contrastive_loss,
    cosine_distance,
    euclidean_distance,
    forward_embed,
    gradient_check,
    init_net,
    joint_loss,
    load_net,
    predict,
    save_net,
    train,
)
from .records import (
    DataFormatError,
    Demographics,
    DiseaseSpec,
    EventKind,
    Gender,
    LabeledCase,
    MedicalEvent,
    PatientRecord,
    label_cohort,
    parse_records,
    read_disease_spec,
    read_records,
)
from .synth import CohortSpec, PRESETS, generate_cohort, rebalance, write_cohort

__version__ = "0.1.0"

__all__ = [
    "CohortSpec",
    "DataFormatError",
    "Demographics",
    "DiseaseSpec",
    "EmbedNet",
    "EvalReport",
    "EventKind",
    "ExperimentConfig",
    "FoldPlan",
    "Gender",
    "GramError",
    "GramMatrix",
    "KernelEmbeddingClassifier",
    "KernelKind",
    "LabeledCase",
    "MedicalEvent",
    "Metrics",
    "NetConfig",
    "PatientGraph",
    "PatientGraphKernel",
    "PatientRecord",
    "PRESETS",
    "TTestResult",
    "TrainTrace",
    "TrainingDivergedError",
    "binary_cross_entropy",
    "build_patient_graph",
    "compute_metrics",
    "contrastive_loss",
    "cosine_distance",
    "cross_gram",
    "euclidean_distance",
    "export_embeddings",
    "forward_embed",
    "generate_cohort",
    "gradient_check",
    "gram_matrix",
    "init_net",
    "joint_loss",
    "label_cohort",
    "load_net",
    "paired_t_test",
    "pairwise_kernel",
    "parse_records",
    "predict",
    "psd_check",
    "read_disease_spec",
    "read_gram",
    "read_records",
    "rebalance",
    "run_experiment",
    "save_net",
    "stratified_kfold",
    "temporal_topological_kernel",
    "train",
    "validate_patient_graph",
    "vertex_histogram_kernel",
    "wl_subtree_kernel",
    "write_gram",
    "write_cohort",
]
