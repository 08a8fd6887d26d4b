"""Cross-residualization classifier (CRC) for p >> n data.

The CRC separates dense latent variation from a sparse signal of
interest, trains a linear classifier on each part (CRC-L on all
principal components, CRC-S as a diagonal LDA over screened
residualized features), and recombines the two with a score-space LDA.
See the README for the method outline and the CLI surface.
"""

__version__ = "0.1.0"

from .baselines import DldaBaseline, fit_dlda_baseline, predict_dlda_baseline
from .data import (
    Dataset,
    SplitPlan,
    grouped_balanced_split,
    load_dataset,
    pct_var_explained,
    save_matrix_cache,
)
from .dense import DenseModel, fit_crcl, loo_scores_crcl, score_crcl
from .ensemble import (
    FittedCRC,
    Prediction,
    component_predictions,
    deserialize,
    extract_linear_weights,
    fit_crc,
    load_model,
    predict,
    predict_batch,
    save_model,
    serialize,
)
from .errors import CrcError
from .gram import (
    DataMatrix,
    DowndatedGram,
    GramState,
    LabelVector,
    apply_centering,
    build_gram,
    center_columns,
    downdate_gram,
    loo_gram,
)
from .meta import MetaLda, fit_meta
from .residualization import (
    ClassEffect,
    CrossResidualized,
    cross_residualize,
    estimate_class_effect,
    residualize,
)
from .simulator import (
    BayesRates,
    BenchResult,
    SimConfig,
    SimDataset,
    bayes_rates,
    generate,
    run_benchmark,
)
from .sparse import (
    DldaModel,
    FeatureCountTrace,
    ScreeningResult,
    feature_count_grid,
    fit_dlda,
    loo_scores_crcs,
    marginal_pvalues,
    score_dlda,
    select_feature_count,
)
