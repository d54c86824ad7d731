//! Dataset container, task splits and synthetic generators.

mod container;
mod split;
mod synth;

pub use container::{Container, HEADER_LEN, MAGIC};
pub use split::{split_classes, ClassOrder, Standardizer, TaskDataset, TaskSequence};
pub use synth::{synth_blobs, BlobSpec, OrderedMixed, OrderedMixedSpec};
