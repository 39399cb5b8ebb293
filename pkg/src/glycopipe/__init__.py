"""Desk-scale diabetes-risk modeling workbench.

Everything runs locally and deterministically: synthetic cohort
generation with a known ground-truth model, preprocessing and feature
engineering, a from-scratch recurrent/attention fusion classifier,
differential-privacy and homomorphic-encryption building blocks,
simulated data-parallel and federated training, hyperparameter search,
prediction explanation, and a virtual-time serving simulator.
"""

from .checkpoint import QuantTensor, load_checkpoint, save_checkpoint
from .cohort import (
    CohortSchema,
    CohortSpec,
    PatientRecord,
    bayes_auc,
    bayes_logits,
    default_schema,
    generate_cohort,
    to_records,
)
from .distributed import (
    ElasticPolicy,
    FederatedRoundConfig,
    ParallelConfig,
    SpeedupReport,
    TransferLog,
    TransferRecord,
    WorkerPool,
    create_pool,
    data_parallel_epoch,
    federated_round,
    resize_pool,
    ring_allreduce,
    run_elastic,
)
from .explain import (
    Attribution,
    HeatmapExport,
    RobustnessReport,
    explain_row,
    export_heatmap,
    fgsm_robustness,
    mean_abs_attribution,
    shapley_exact,
    shapley_sample,
)
from .hyperopt import (
    KernelSurrogate,
    SchedulerConfig,
    SearchSpace,
    SurrogateState,
    Trial,
    asha_decide,
    default_space,
    expected_improvement,
    sample,
    smbo_propose,
    tune,
)
from .matrix import FeatureMatrix, as_feature_matrix, check_matrix
from .metrics import EvalMetrics, metrics_from_scores, rank_auc
from .model import (
    FusionClassifier,
    QuantizedModel,
    TrainConfig,
    evaluate,
    load_model,
    load_quantized,
    quantize_int8,
    save_model,
    save_quantized,
    train,
)
from .network import ModelDims, init_params, param_count
from .paillier import (
    FixedPointCodec,
    PrivateKey,
    PublicKey,
    decode_fixed,
    encode_fixed,
    keypair_from_primes,
    paillier_add,
    paillier_decrypt,
    paillier_encrypt,
    paillier_keygen,
    paillier_scalar_mul,
)
from .pipeline import (
    PipelineDag,
    Stage,
    StageReport,
    build_default_dag,
    run_pipeline,
    split_indices,
)
from .preprocessing import (
    ImportanceRanking,
    MeanImputer,
    PrincipalComponents,
    RandomForestImportance,
    Standardizer,
    jacobi_eigh,
    select_top_k,
)
from .privacy import (
    BudgetExceeded,
    DpParams,
    PrivacyLedger,
    clip_gradients,
    dp_logistic_regression,
    dpsgd_sanitize,
    ledger_spend,
    ledger_total,
)
from .serving import (
    CacheConfig,
    LruTtlCache,
    ScalingPolicy,
    ScalingState,
    SimMetrics,
    WorkloadSpec,
    autoscale_step,
    simulate_service,
    static_policy,
)
from .tabular import RawTable, TableError, parse_table, read_table, serialize_table, write_table

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
