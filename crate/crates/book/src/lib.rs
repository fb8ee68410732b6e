//! The guide under `book/` is an mdbook, and mdbook cannot link its code
//! blocks against workspace crates. Including each chapter as module docs
//! lets `cargo test --doc` run them instead.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/scenes.md")]
pub mod scenes {}
#[doc = include_str!("../../../book/src/ldpl.md")]
pub mod ldpl {}
#[doc = include_str!("../../../book/src/depthmap.md")]
pub mod depthmap {}
#[doc = include_str!("../../../book/src/compression.md")]
pub mod compression {}
#[doc = include_str!("../../../book/src/payload.md")]
pub mod payload {}
#[doc = include_str!("../../../book/src/generator.md")]
pub mod generator {}
#[doc = include_str!("../../../book/src/federated.md")]
pub mod federated {}
#[doc = include_str!("../../../book/src/pipeline.md")]
pub mod pipeline {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
#[doc = include_str!("../../../README.md")]
pub mod readme {}
