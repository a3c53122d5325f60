//! Labeled sample sets and their on-disk formats.
//!
//! A [`Dataset`] is an immutable `n × d` feature matrix with one class label
//! per row. A [`SourceCollection`] is the ordered set of named sample sets
//! being valued; every source shares the same feature dimension and label
//! space.

mod dataset;
mod io;

pub use dataset::{Dataset, Source, SourceCollection};
pub use io::{load_dataset, load_dataset_with_classes, read_ddvm, save_dataset, write_ddvm, Format};
