"""encflow: encrypted-traffic feature extraction and detection experiments.

Raw captures in, labeled feature datasets and comparative detection reports
out. Submodules follow the pipeline order: capture -> flows -> tls ->
features/tls_features -> pipeline -> learners -> evaluate.
"""

from .capture import (
    DecodedPacket,
    FilterPolicy,
    FilterVerdict,
    LinkType,
    RawFrame,
    Transport,
    TruncationNotice,
    Undecodable,
    UnknownMagic,
    decode_packet,
    filter_packet,
    open_capture,
    read_frames,
)
from .catalog import (
    ALL_FEATURE_NAMES,
    CATALOG,
    CATALOG_VERSION,
    FEATURE_SET_MEMBERS,
    FOTS_FEATURES,
    NUMERIC_FEATURE_SETS,
    FeatureCatalog,
    FeatureSetName,
)
from .evaluate import (
    ConfusionCounts,
    CrossDatasetReport,
    CrossDirection,
    EvalReport,
    GridResult,
    confusion,
    experiment_grid,
    grid_csv,
    grid_markdown,
    metrics,
    roc_auc,
    roc_points,
    run_cross_dataset,
    run_cv,
)
from .features import (
    Aggregate,
    FeatureVector,
    aggregate,
    compute_packet_features,
    compute_session_features,
    featurize_session,
    select_set,
)
from .flows import (
    CloseReason,
    Direction,
    FixedSession,
    FlowKey,
    Session,
    assemble,
    flow_key,
    truncate_pad,
    write_session_dump,
)
from .learners import (
    Algorithm,
    ModelSpec,
    TrainedModel,
    load_model,
    predict,
    save_model,
    score,
    train,
)
from .pipeline import (
    CompositionPlan,
    FoldPlan,
    LabeledRow,
    NormRange,
    balance_undersample,
    compose,
    deduplicate,
    derive_seed,
    fit_normalizer,
    apply_normalizer,
    read_feature_csv,
    stratified_kfold,
    table_ii_plan,
    write_feature_csv,
)
from .tls import (
    ConnRecord,
    ConnectionBundle,
    SslRecord,
    TlsVersion,
    X509Record,
    bundle_sessions,
    detect_tls,
    export_logs,
    link_records,
    parse_certificate,
    parse_handshake,
)
from .tls_features import FotsVector, compute_fots, fots_dataset

__version__ = "0.1.0"
