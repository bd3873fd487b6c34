//! Desk-scale model-compression laboratory.
//!
//! Trains small convolutional classifiers on CPU with a tape-based reverse-mode
//! autodiff engine and studies how RandAugment magnitude interacts with
//! unstructured pruning, detachable extra layers and knowledge distillation.
//!
//! Layout:
//! - [`tensor`]: tensors, the recording graph, SGD and checkpoints
//! - [`models`]: configurable CNNs and weight handoff between architectures
//! - [`losses`]: cross-entropy, temperature-scaled KL and their mix
//! - [`augment`]: the 14-op RandAugment engine
//! - [`pruning`]: L1 unstructured pruning with persistent masks
//! - [`policy`]: magnitude grid search, optimal/maximal magnitude, decay schedules
//! - [`selection`]: teacher-filtered augmentation selection for distillation
//! - [`harness`]: datasets, training stages, schemes and CSV output

pub mod augment;
pub mod error;
pub mod harness;
pub mod losses;
pub mod models;
pub mod policy;
pub mod pruning;
pub mod selection;
pub mod tensor;

pub use error::{Error, Result};
