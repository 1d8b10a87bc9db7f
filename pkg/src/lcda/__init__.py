"""Few-shot classification by pooling class covariances into K latent matrices."""

from .classify import (
    ClassifierModel,
    PredictionResult,
    evaluate_heldout,
    evaluate_loocv,
    fit_lcda,
    fit_lda,
    fit_qda,
    predict,
    predict_lcda,
    predict_lda,
    predict_qda,
)
from .em import EMConfig, FitResult, adjust_covariances, e_step, m_step, map_assign, run_em
from .errors import (
    ComponentCollapse,
    DomainError,
    InvalidClass,
    LcdaError,
    NonFiniteLikelihood,
    NumericalError,
    QdaInfeasible,
    RankError,
    SelectionFailed,
)
from .init_select import KGridResult, bic, init_hierarchical, select_k
from .stats import (
    ClassBlock,
    ClassStats,
    LabeledDataset,
    MixtureParams,
    class_log_likelihood,
    compute_class_stats,
    log_det_and_rank,
    log_multivariate_gamma,
    matrix_sqrt_psd,
    singular_wishart_log_density,
    wishart_log_density,
)

__version__ = "0.1.0"
