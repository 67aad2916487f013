//! Analysis instruments: target distribution studies, gradient statistics
//! and checkpoints.

pub mod checkpoint;
pub mod gradstats;
pub mod study;
pub mod wasserstein;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use gradstats::{gradient_stats, GradStats};
pub use study::{target_distribution_study, StudyConfig, StudyRow, TargetStudyResult};
pub use wasserstein::wasserstein_1d;
