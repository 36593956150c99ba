//! Datasets, training, and evaluation protocols.

pub mod augment;
pub mod dataset;
pub mod folds;
pub mod manifest;
pub mod metrics;
pub mod protocol;
pub mod synth;
pub mod train;

pub use augment::{augment, hflip, resize, rotate, zoom, AugmentConfig};
pub use dataset::{ami_cache_path, load_entry_ami, load_samples, prepare_input, Sample};
pub use folds::{loso_folds, Fold, FoldPlan};
pub use manifest::{DatasetManifest, ManifestEntry, DEFAULT_LABELS};
pub use metrics::{accuracy_and_confusion, round2, Confusion, Metrics};
pub use protocol::{
    cross_dataset_eval, default_threads, evaluate_loso, loss_csv, train_on_manifest, EvalReport, Evaluation,
    FoldReport, LossCurve, THREADS_ENV,
};
pub use synth::{generate_synthetic, Motion, SynthConfig};
pub use train::{predict_classes, prepare_examples, train_network, training_pool, Example, TrainConfig, TrainOutcome};
