//! The guide's chapters as modules, so `cargo test` runs their code blocks.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/posterior.md")]
pub mod posterior {}

#[doc = include_str!("../../../book/src/measures.md")]
pub mod measures {}

#[doc = include_str!("../../../book/src/annotators.md")]
pub mod annotators {}

#[doc = include_str!("../../../book/src/continual.md")]
pub mod continual {}

#[doc = include_str!("../../../book/src/augmentation.md")]
pub mod augmentation {}

#[doc = include_str!("../../../book/src/data.md")]
pub mod data {}

#[doc = include_str!("../../../book/src/experiments.md")]
pub mod experiments {}
