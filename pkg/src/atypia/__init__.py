"""Imbalanced mitosis-patch classification pipeline: latent-diffusion
minority oversampling, k-fold training, and prevalence-robust evaluation."""

from .backbones import BackboneSpec, build_model
from .classifier import FoldCheckpoint, TrainConfig, bce_with_logits, cosine_restart_lr, predict_proba, train_fold
from .data import (
    FoldPlan,
    Manifest,
    MixPolicy,
    PatchRecord,
    class_counts,
    load_manifest,
    save_manifest,
    stratified_kfold,
    training_view,
)
from .errors import ValidationError
from .experiment import (
    ExperimentConfig,
    RegimeComparison,
    RunArtifacts,
    compare_regimes,
    package_submission,
    render_report,
    run_cv_experiment,
    set_determinism,
)
from .metrics import (
    FoldSummary,
    MetricsReport,
    ScoredSet,
    aggregate_folds,
    auroc,
    balanced_accuracy,
    confusion_at,
    ensemble_average,
    select_submission,
)
from .transforms import AugmentConfig, NormStats, apply_eval_transform, apply_train_augment, resize

__version__ = "0.1.0"
