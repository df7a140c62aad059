//! Piracy-model training from query-response pairs: distillation on soft
//! labels, optional MixMatch semi-supervision, pluggable optimizers and
//! training-time augmentation.

mod augment;
mod fit;
mod loss;
mod mixmatch;
mod optim;

pub use augment::{augment, AugmentConfig};
pub use fit::{kd_train, Pairs, TrainSettings, Trainer};
pub use loss::{cross_entropy, kd_loss, consistency_loss};
pub use mixmatch::{mixmatch_round, sharpen, MixMatchBatch, MixMatchConfig};
pub use optim::{make_optimizer, Optimizer, OptimizerConfig, OptimizerKind, Task};
