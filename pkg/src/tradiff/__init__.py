"""tradiff: surprisal and attentional predictors of translation difficulty."""

from .segments import (
    IndexSet,
    SegmentRef,
    SentencePair,
    complement_source,
    preceding_context,
    prefix_through,
)
from .dumps import (
    ModelDump,
    TokenLogProbs,
    TokenTrack,
    DumpStore,
    map_subwords,
    read_dump,
    segment_subword_indices,
    word_spans,
    write_dump,
)
from .ingest import (
    BehavioralObservation,
    FoldAssignment,
    TableSchema,
    assign_folds,
    drop_cross_sentence_alignments,
    filter_and_scale,
    parse_tables,
)
from .features import (
    FeatureExtractor,
    FrequencyTable,
    PairFeatures,
    attn_entropy,
    avg_translation_duration,
    control_features,
    flow,
    lm_surprisal,
    mt_surprisal,
    normalize_feature,
    source_feature_set,
    target_feature_set,
)
from .regression import (
    DesignMatrix,
    FitResult,
    MixedEffectsRegressor,
    OLSRegressor,
    fit_mixed,
    fit_ols,
    heldout_loglik,
    standardize,
)
from .evaluation import (
    CVResult,
    DeltaLLH,
    ModelSpec,
    correlations,
    cross_validate,
    delta_llh,
    paired_permutation_test,
    pos_group_summary,
    vif,
)

__version__ = "0.1.0"
