//! Kernel SVM training plus the cross-subject evaluation protocol:
//! class balancing, stratified k-fold, leave-one-subject-out with per-fold
//! feature ranking, scrambled-label baselines, the feature-count sweep, and
//! ROC/confusion reporting.

mod eval;
mod svm;

pub use eval::{
    balance_classes, class_pair, evaluate_with_baseline, feature_sweep, kfold_cv,
    loso_evaluate, roc_and_confusion, scramble_labels_within_subject, scrambled_baseline,
    sweep_schedule, ConfusionMatrix, EvaluationReport, KfoldReport, LosoIteration, RocPoint,
    ScrambledBaseline, SweepPoint, SweepReport,
};
pub use svm::{predict, train_ksvm, SvmConfig, TrainedClassifier};
