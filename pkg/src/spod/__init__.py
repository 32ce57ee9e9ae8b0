"""Spectral out-of-distribution detection from per-sample network gradients.

The detector fits a principal subspace to centered gradient class means
and scores test points by the cosine between their centered gradient
and its projection onto that subspace. Certificates bound when such a
score provably witnesses OOD. See the README for the CLI walkthrough.
"""

from .baselines import (
    CorpDetector,
    DiceDetector,
    KnnDetector,
    MahalanobisDetector,
    NciDetector,
    ReactDetector,
    RevisitedPcaDetector,
    energy_score,
    max_logit_score,
    msp_score,
    odin_score,
)
from .bench import EvalReport, EvalRow, build_detector, run_benchmark, sweep, synthetic_pipeline
from .certificates import (
    Certificate,
    CovarianceModel,
    certify_exact,
    certify_robust,
    covariance_model,
    davis_kahan_bound,
    necessary_condition,
    sample_complexity_eps,
    score_drift_bound,
)
from .data import (
    LabeledDataset,
    LabelNoiseSpec,
    SyntheticSpec,
    generate_synthetic,
    inject_label_noise,
    load_dataset,
    per_class_loader,
    save_dataset,
)
from .detector import (
    ClassMeanMatrix,
    Decision,
    DetectorConfig,
    PerHeadSubspace,
    PrincipalSubspace,
    Score,
    detect,
    detect_batch,
    fit,
    fit_batch_subspace,
    fit_class_means,
    fit_gradorth_subspace,
    fit_per_head,
    load_state,
    save_state,
    score,
    score_batch,
    score_per_head,
    score_per_head_batch,
    threshold_from_id_scores,
)
from .errors import (
    NumericalError,
    SpodError,
    ValidationError,
)
from .metrics import ScoredSet, auroc, fpr_at_tpr
from .nn import (
    LayerSpec,
    Network,
    ParamSubset,
    TrainLog,
    forward,
    forward_batch,
    load_checkpoint,
    mlp,
    per_sample_gradient,
    per_sample_gradient_batch,
    per_sample_loss_gradient,
    per_sample_loss_gradient_batch,
    save_checkpoint,
    train_sgd,
)
from .ntk import BlockStructureReport, NtkMatrix, block_structure, empirical_ntk, spectral_norm

__version__ = "0.1.0"
