"""covselect: covariance-based transfer learning and source selection for
motor-imagery BCI calibration.

The library covers the full pipeline: SPD-manifold geometry under the
affine-invariant metric, minimum-distance-to-mean classification,
Procrustes-style source-to-target alignment, pair features with a small
learned transfer-performance predictor, eight source-selection strategies,
and a benchmark harness with a covset file format plus a synthetic data
generator.
"""

from .data import SubjectData, SynthConfig, covset_read, covset_write, synth_generate
from .exceptions import (
    ConvergenceError,
    CovselectError,
    InputError,
    NumericalError,
    ValidationError,
)
from .features import (
    FEATURE_NAMES,
    PairFeatures,
    SubjectStats,
    pair_features,
    subject_stats,
)
from .geometry import (
    airm_distance,
    as_spd,
    class_means,
    dispersion,
    geodesic,
    karcher_mean,
    spd_map,
    trial_covariance,
)
from .harness import (
    AccuracyMatrix,
    MethodComparison,
    build_accuracy_matrix,
    candidate_sweep,
    compare_methods,
    evaluate_selection,
    transfer_accuracy,
    wilcoxon_signed_rank,
)
from .folds import leave_groups_out_folds
from .mdm import MdmModel, mdm_accuracy, mdm_fit, mdm_predict
from .predictor import (
    MlpRegressor,
    RobustScaler,
    TrainConfig,
    mlp_train,
    predict_accuracy,
    scaler_apply,
    scaler_fit,
)
from .rpa import AlignmentResult, RpaConfig, equalize_dispersion, find_rotation, recenter, rpa_align
from .selection import (
    ALL_METHODS,
    RankedCandidates,
    SelectionContext,
    max_of_methods,
    rank_sources,
    select_best,
)

__version__ = "0.1.0"
